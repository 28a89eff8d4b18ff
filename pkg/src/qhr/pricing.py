"""European option pricing on simulated paths and implied-vol surfaces.

Prices are computed in discounted coordinates with S0 = 1 and zero rates
(the log price x carries the -sigma^2/2 drift already), so a call is just
E[(e^{x_T} - K)+] and 1-homogeneity recovers any other spot.  One path
batch prices every (maturity, strike) node: maturities are snapshots of the
same trajectories, which makes smile and term-structure differences much
less noisy than independent runs would be.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import mc


class OutOfBoundsError(ValueError):
    """Price outside (or on) the no-arbitrage bounds; boundary says which."""

    def __init__(self, message, boundary):
        super().__init__(message)
        self.boundary = boundary


class MissingNodesError(ValueError):
    """Surface lacks the log-moneyness nodes needed for the request."""


def bs_price(strike, maturity, vol, side="call"):
    """Black-Scholes price with S0 = 1 and zero rates."""
    k = np.asarray(strike, dtype=float)
    intrinsic_call = np.maximum(1.0 - k, 0.0)
    sq = vol * math.sqrt(maturity)
    if sq <= 0:
        call = intrinsic_call
    else:
        d1 = -np.log(k) / sq + 0.5 * sq
        call = stats.norm.cdf(d1) - k * stats.norm.cdf(d1 - sq)
    if side == "call":
        out = call
    elif side == "put":
        out = call - 1.0 + k
    else:
        raise ValueError("side must be 'call' or 'put'")
    return float(out) if np.ndim(strike) == 0 else out


def bs_vega(strike, maturity, vol):
    sq = vol * math.sqrt(maturity)
    d1 = -math.log(strike) / sq + 0.5 * sq
    return stats.norm.pdf(d1) * math.sqrt(maturity)


def implied_vol(price, strike, maturity, tol=1e-10, bracket=(1e-6, 5.0)):
    """Invert the call price for volatility.

    Safeguarded Newton on vega with bisection fallback inside the bracket;
    terminates when the repriced error is below tol.  Prices at or outside
    the static bounds (1-K)+ < C < 1, or whose volatility escapes the
    bracket, raise OutOfBoundsError with boundary 'lower' or 'upper'."""
    if maturity <= 0 or strike <= 0:
        raise ValueError("maturity and strike must be positive")
    intrinsic = max(1.0 - strike, 0.0)
    if price <= intrinsic:
        raise OutOfBoundsError(
            f"price {price} at/below intrinsic {intrinsic}", "lower")
    if price >= 1.0:
        raise OutOfBoundsError(f"price {price} at/above forward 1", "upper")
    lo, hi = bracket
    if bs_price(strike, maturity, lo) - price >= 0:
        raise OutOfBoundsError("volatility below bracket", "lower")
    if bs_price(strike, maturity, hi) - price <= 0:
        raise OutOfBoundsError("volatility above bracket", "upper")
    # ATM-style starting guess, clamped into the bracket
    v = min(max(math.sqrt(2.0 * math.pi / maturity) * price, 1.01 * lo),
            0.99 * hi)
    f = bs_price(strike, maturity, v) - price
    best_v, best_f = v, abs(f)
    for _ in range(100):
        if f == 0.0:
            return v
        if f < 0:
            lo = v
        else:
            hi = v
        vega = bs_vega(strike, maturity, v)
        if vega > 1e-14:
            v_new = v - f / vega
        else:
            v_new = 0.5 * (lo + hi)
        if not lo < v_new < hi:
            v_new = 0.5 * (lo + hi)
        if v_new == v:
            break
        v = v_new
        f = bs_price(strike, maturity, v) - price
        if abs(f) < best_f:
            best_v, best_f = v, abs(f)
        elif best_f <= tol:
            break  # converged; further steps only churn rounding noise
    if best_f <= tol:
        return best_v
    raise ArithmeticError(
        f"implied vol did not converge (residual {best_f:.2e})")


@dataclass(frozen=True)
class OptionGrid:
    """Strike/maturity layout.  log_moneyness entries are log(K) (spot 1);
    with normalized=True they are interpreted as log(K)/sqrt(T) per
    maturity."""

    maturities: tuple
    log_moneyness: tuple
    side: str = "call"
    normalized: bool = False

    def __post_init__(self):
        mats = tuple(float(t) for t in self.maturities)
        ells = tuple(float(x) for x in self.log_moneyness)
        if not mats or min(mats) <= 0:
            raise ValueError("maturities must be positive and non-empty")
        if not ells:
            raise ValueError("log_moneyness must be non-empty")
        if self.side not in ("call", "put"):
            raise ValueError("side must be 'call' or 'put'")
        object.__setattr__(self, "maturities", mats)
        object.__setattr__(self, "log_moneyness", ells)


@dataclass
class SmileSurface:
    """Per-node MC prices (call and put from the same paths), the forward
    (martingale) check per maturity, and optionally implied vols."""

    maturities: np.ndarray            # actual (grid-snapped) maturities
    ell: np.ndarray                   # (nT, nL) log strikes
    side: str
    call_price: np.ndarray
    call_se: np.ndarray
    put_price: np.ndarray
    put_se: np.ndarray
    forward_mean: np.ndarray
    forward_se: np.ndarray
    seed: int
    n_paths: int
    ivol: np.ndarray = None

    @property
    def price(self):
        return self.call_price if self.side == "call" else self.put_price

    @property
    def se(self):
        return self.call_se if self.side == "call" else self.put_se

    def parity_gap(self):
        """call - put - (1 - K) per node; zero in exact arithmetic."""
        return self.call_price - self.put_price - (1.0 - np.exp(self.ell))


def price_options(params, y0, grid, cfg):
    """Monte Carlo prices on the grid from one common set of trajectories.

    y0 overrides the configured start (vector, per-path array, or a
    StationaryInit marker); the simulation horizon is the largest maturity
    and every maturity is a snapshot of the same paths."""
    mats = np.asarray(grid.maturities, dtype=float)
    cfg2 = replace(cfg, horizon=float(mats.max()),
                   y0=cfg.y0 if y0 is None else y0)
    batch = mc.simulate(params, cfg2, probes=list(mats))
    n_t = mats.size
    ells = np.asarray(grid.log_moneyness, dtype=float)
    n_l = ells.size
    shape = (n_t, n_l)
    ell = np.empty(shape)
    call_m = np.empty(shape)
    call_s = np.empty(shape)
    put_m = np.empty(shape)
    put_s = np.empty(shape)
    fwd_m = np.empty(n_t)
    fwd_s = np.empty(n_t)
    actual = np.empty(n_t)
    for i, t in enumerate(mats):
        idx = batch.time_index(t)
        actual[i] = batch.times[idx]
        ell[i] = ells * math.sqrt(actual[i]) if grid.normalized else ells
        ex = np.exp(batch.x[idx])
        k = np.exp(ell[i])
        call_m[i], call_s[i] = batch.mean_se(
            np.maximum(ex[None, :] - k[:, None], 0.0))
        put_m[i], put_s[i] = batch.mean_se(
            np.maximum(k[:, None] - ex[None, :], 0.0))
        fwd_m[i], fwd_s[i] = batch.mean_se(ex)
    return SmileSurface(maturities=actual, ell=ell, side=grid.side,
                        call_price=call_m, call_se=call_s, put_price=put_m,
                        put_se=put_s, forward_mean=fwd_m, forward_se=fwd_s,
                        seed=cfg.seed, n_paths=batch.n_paths)


def with_implied_vols(surface):
    """Fill per-node implied vols from the call prices; nodes outside the
    no-arbitrage bounds become NaN."""
    n_t, n_l = surface.call_price.shape
    iv = np.full((n_t, n_l), np.nan)
    for i in range(n_t):
        for j in range(n_l):
            try:
                iv[i, j] = implied_vol(surface.call_price[i, j],
                                       math.exp(surface.ell[i, j]),
                                       surface.maturities[i])
            except OutOfBoundsError:
                pass
    return replace(surface, ivol=iv)


def atm_term_structures(surface, eps=0.01):
    """ATM vol and central-difference ATM skew per maturity.

    Requires log-moneyness nodes at -eps, 0 and +eps for every maturity
    (common random numbers make the difference quotient stable)."""
    if surface.ivol is None:
        surface = with_implied_vols(surface)
    n_t = surface.maturities.size
    atm_vol = np.empty(n_t)
    atm_skew = np.empty(n_t)
    for i in range(n_t):
        row = surface.ell[i]
        cols = {}
        for target, name in ((0.0, "atm"), (eps, "up"), (-eps, "dn")):
            hit = np.nonzero(np.abs(row - target) < 1e-9)[0]
            if hit.size == 0:
                raise MissingNodesError(
                    f"no node at log-moneyness {target} for maturity "
                    f"{surface.maturities[i]:.6g}")
            cols[name] = int(hit[0])
        vals = [surface.ivol[i, cols[n]] for n in ("atm", "up", "dn")]
        if any(np.isnan(v) for v in vals):
            raise MissingNodesError(
                f"implied vol undefined at an ATM node for maturity "
                f"{surface.maturities[i]:.6g}")
        atm_vol[i] = vals[0]
        atm_skew[i] = (vals[1] - vals[2]) / (2.0 * eps)
    return atm_vol, atm_skew
