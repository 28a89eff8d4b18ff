"""Euler-Maruyama simulation of the joint (x, y) dynamics.

    dx = -sigma^2/2 dt + sigma dW,   dy = -lam y dt + b sigma dW,

with one shared Brownian driver.  Paths are generated in fixed blocks of
4096, each block drawing from its own counter-based generator keyed by
(seed, phase, block index), so results are bit-identical regardless of
thread count or scheduling.  Antithetic pairing interleaves +Z/-Z partners
as adjacent paths.  The integrated variance is tracked alongside x so the
martingale part xi = x + ivar/2 is available exactly on the step grid.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .moments import NotStationaryError, build_moment_system

_BLOCK = 4096
_PHASE_MAIN = 0
_PHASE_BURNIN = 1


class ConfigInvalidError(ValueError):
    """Simulation configuration is inconsistent."""


@dataclass(frozen=True)
class StationaryInit:
    """Marker for drawing per-path starting offsets by burn-in simulation.

    burn_in None picks the default 10 / (slowest mean-reversion rate)."""

    burn_in: float = None


@dataclass(frozen=True)
class McConfig:
    n_paths: int
    horizon: float
    seed: int
    steps_per_year: int = 250
    antithetic: bool = True
    y0: object = None  # vector, (n_paths, p) array, or StationaryInit


@dataclass
class PathBatch:
    """Snapshots of simulated paths at requested times.

    Arrays are indexed [time, path(, component)].  The horizon is always the
    last snapshot.  xi(i) returns the martingale part of x at snapshot i.
    Pair-aware summary statistics live in mean_se."""

    params: object
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    ivar: np.ndarray
    antithetic: bool
    seed: int
    steps_per_year: int
    floored_steps: int = 0

    @property
    def n_paths(self):
        return self.x.shape[1]

    @property
    def x_terminal(self):
        return self.x[-1]

    @property
    def y_terminal(self):
        return self.y[-1]

    def xi(self, i):
        return self.x[i] + 0.5 * self.ivar[i]

    def sigma2(self, i):
        from .model import variance
        return variance(self.params, self.y[i])

    def time_index(self, t):
        """Snapshot row whose time matches t (within half a step)."""
        gaps = np.abs(self.times - t)
        idx = int(np.argmin(gaps))
        if gaps[idx] > 0.5 / self.steps_per_year + 1e-12:
            raise KeyError(f"no snapshot near t={t}")
        return idx

    def mean_se(self, values):
        """Mean and standard error over paths (last axis).

        With antithetic pairing the independent sampling unit is the pair,
        so values are collapsed to pair means first."""
        v = np.asarray(values, dtype=float)
        if self.antithetic:
            v = 0.5 * (v[..., 0::2] + v[..., 1::2])
        n = v.shape[-1]
        return v.mean(axis=-1), v.std(axis=-1, ddof=1) / math.sqrt(n)


def _block_rng(seed, phase, block):
    k0 = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
    k1 = np.uint64(((int(phase) & 0xFFFFFFFF) << 32) | (int(block) & 0xFFFFFFFF))
    return np.random.Generator(np.random.Philox(key=np.array([k0, k1],
                                                             dtype=np.uint64)))


def _n_threads():
    env = os.environ.get("QHR_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def _resolve_y0(params, cfg):
    p = params.p
    y0 = cfg.y0
    if isinstance(y0, StationaryInit):
        return stationary_init(params, y0.burn_in, cfg)
    if y0 is None:
        return np.zeros((cfg.n_paths, p))
    arr = np.asarray(y0, dtype=float)
    if arr.ndim == 1:
        if arr.shape != (p,):
            raise ConfigInvalidError(f"y0 vector must have length {p}")
        return np.tile(arr, (cfg.n_paths, 1))
    if arr.shape != (cfg.n_paths, p):
        raise ConfigInvalidError("per-path y0 must be (n_paths, p)")
    return arr.copy()


def _check_cfg(cfg):
    if cfg.n_paths < 1:
        raise ConfigInvalidError("n_paths must be positive")
    if cfg.antithetic and cfg.n_paths % 2:
        raise ConfigInvalidError("n_paths must be even with antithetic pairs")
    if cfg.steps_per_year < 1:
        raise ConfigInvalidError("steps_per_year must be >= 1")
    if not cfg.horizon > 0:
        raise ConfigInvalidError("horizon must be positive")


def _euler_block(params, y, n_steps, dt, rng, antithetic, snap_rows, sinks,
                 col):
    """Advance one block of paths in place, writing snapshots into the
    shared output arrays at column range col."""
    nb = y.shape[0]
    n_base = nb // 2 if antithetic else nb
    alpha = params.alpha
    beta2 = 2.0 * params.beta
    gam = params.gamma_mat
    lam_t = params.lam.T
    b = params.b
    sqdt = math.sqrt(dt)
    x = np.zeros(nb)
    ivar = np.zeros(nb)
    floored = 0
    x_out, y_out, ivar_out = sinks

    def record(row):
        x_out[row, col] = x
        y_out[row, col] = y
        ivar_out[row, col] = ivar

    if 0 in snap_rows:
        record(snap_rows[0])
    for step in range(1, n_steps + 1):
        sig2 = alpha + y @ beta2 + np.einsum("ij,ij->i", y @ gam, y)
        bad = sig2 < 0.0
        if bad.any():
            floored += int(bad.sum())
            sig2 = np.where(bad, 0.0, sig2)
        sig = np.sqrt(sig2)
        z = rng.standard_normal(n_base)
        if antithetic:
            zf = np.empty(nb)
            zf[0::2] = z
            zf[1::2] = -z
        else:
            zf = z
        shock = sig * (sqdt * zf)
        x += shock - (0.5 * dt) * sig2
        ivar += dt * sig2
        y += shock[:, None] * b - (y @ lam_t) * dt
        if step in snap_rows:
            record(snap_rows[step])
    return floored


def _run(params, cfg, probes, phase, y0_all):
    dt = 1.0 / cfg.steps_per_year
    n_steps = int(round(cfg.horizon * cfg.steps_per_year))
    if n_steps < 1:
        raise ConfigInvalidError("horizon shorter than one time step")
    snap_steps = set()
    for t in probes or ():
        idx = int(round(t * cfg.steps_per_year))
        if idx < 0 or idx > n_steps:
            raise ConfigInvalidError(f"probe time {t} outside [0, horizon]")
        snap_steps.add(idx)
    snap_steps.add(n_steps)
    ordered = sorted(snap_steps)
    snap_rows = {s: i for i, s in enumerate(ordered)}
    times = np.array([s * dt for s in ordered])

    n, p = cfg.n_paths, params.p
    sinks = (np.empty((len(ordered), n)),
             np.empty((len(ordered), n, p)),
             np.empty((len(ordered), n)))

    blocks = range((n + _BLOCK - 1) // _BLOCK)

    def work(bi):
        lo = bi * _BLOCK
        hi = min(lo + _BLOCK, n)
        rng = _block_rng(cfg.seed, phase, bi)
        yb = y0_all[lo:hi].copy()
        return _euler_block(params, yb, n_steps, dt, rng, cfg.antithetic,
                            snap_rows, sinks, slice(lo, hi))

    workers = min(_n_threads(), len(blocks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            floored = sum(pool.map(work, blocks))
    else:
        floored = sum(map(work, blocks))

    return PathBatch(params=params, times=times, x=sinks[0], y=sinks[1],
                     ivar=sinks[2], antithetic=cfg.antithetic, seed=cfg.seed,
                     steps_per_year=cfg.steps_per_year, floored_steps=floored)


def simulate(params, cfg, probes=None):
    """Simulate cfg.n_paths joint paths to cfg.horizon, snapshotting state
    at the probe times (snapped to the step grid) and at the horizon."""
    _check_cfg(cfg)
    y0_all = _resolve_y0(params, cfg)
    return _run(params, cfg, probes, _PHASE_MAIN, y0_all)


def default_burn_in(params):
    rates = np.linalg.eigvals(params.lam).real
    return 10.0 / float(rates.min())


def stationary_init(params, burn_in, cfg):
    """Per-path starting offsets approximating the stationary law, obtained
    by simulating the offset from zero for burn_in years on a separate
    random stream (so main-phase draws are untouched)."""
    _check_cfg(cfg)
    if not build_moment_system(params).stable:
        raise NotStationaryError("burn-in start undefined: model unstable")
    if burn_in is None:
        burn_in = default_burn_in(params)
    bcfg = McConfig(n_paths=cfg.n_paths, horizon=burn_in, seed=cfg.seed,
                    steps_per_year=cfg.steps_per_year,
                    antithetic=cfg.antithetic)
    y0 = np.zeros((cfg.n_paths, params.p))
    return _run(params, bcfg, None, _PHASE_BURNIN, y0).y_terminal.copy()


def estimate_cov_eta_xi2(params, r, cfg):
    """Monte Carlo estimate of Cov(eta_r, xi_r^2) from a stationary start.

    Returns (cov, se) with one entry per eta component (p + p^2).  This is
    the simulation input of the squared-increment autocovariance formula;
    no closed form is available."""
    _check_cfg(cfg)
    burn = cfg.y0.burn_in if isinstance(cfg.y0, StationaryInit) else None
    y0_all = stationary_init(params, burn, cfg)
    rcfg = McConfig(n_paths=cfg.n_paths, horizon=r, seed=cfg.seed,
                    steps_per_year=cfg.steps_per_year,
                    antithetic=cfg.antithetic)
    batch = _run(params, rcfg, None, _PHASE_MAIN, y0_all)
    yr = batch.y_terminal
    n, p = yr.shape
    q = np.einsum("na,nb->nab", yr, yr).reshape(n, p * p)
    eta = np.hstack([yr, q])
    s = batch.xi(-1) ** 2
    d = (eta - eta.mean(axis=0)) * (s - s.mean())[:, None]
    scale = n / (n - 1.0)
    cov = d.mean(axis=0) * scale
    if cfg.antithetic:
        dp = 0.5 * (d[0::2] + d[1::2])
        se = dp.std(axis=0, ddof=1) / math.sqrt(dp.shape[0]) * scale
    else:
        se = d.std(axis=0, ddof=1) / math.sqrt(n) * scale
    return cov, se
