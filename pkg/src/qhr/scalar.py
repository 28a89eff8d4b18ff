"""Closed forms and the stationary law for the one-factor model.

For p = 1 the offset follows dy = -lam*y dt + sigma(y) dW with
sigma^2(y) = alpha + 2*beta*y + gamma*y^2.  Its stationary moments have
closed forms, the kurtosis of the instantaneous volatility admits explicit
bounds, and the stationary law itself is a Pearson type IV density

    p(y) = C * sigma^2(y)^(-lam/gamma - 1)
             * exp(nu * arctan((beta + gamma*y)/sqrt(delta))),

with delta = alpha*gamma - beta^2 > 0 and nu = 2*lam*beta/(gamma*sqrt(delta)).
Everything here doubles as an analytic oracle for the general-p machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, interpolate, stats

from .moments import NotStationaryError


@dataclass(frozen=True)
class ScalarParams:
    """One-factor parameters.  Stationary (through fourth moments) iff
    gamma < 2*lam/3."""

    lam: float
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("lam", "alpha", "beta", "gamma"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def stationary(self):
        return self.gamma < 2.0 * self.lam / 3.0

    @classmethod
    def from_model_params(cls, params):
        if params.p != 1:
            raise ValueError("scalar reduction requires p = 1")
        return cls(lam=float(params.lam[0, 0]), alpha=params.alpha,
                   beta=float(params.beta[0]),
                   gamma=float(params.gamma_mat[0, 0]))

    def to_model_params(self, label=""):
        from .model import ModelParams
        return ModelParams(lam=[[self.lam]], b=[1.0], alpha=self.alpha,
                           beta=[self.beta], gamma_mat=[[self.gamma]],
                           label=label)


def _require_stationary(sp):
    if not sp.stationary:
        raise NotStationaryError(
            f"gamma = {sp.gamma:.6g} >= 2*lam/3 = {2 * sp.lam / 3:.6g}")


def scalar_closed_moments(sp):
    """Stationary (q_inf, m3_inf, m4_inf) = (E[y^2], E[y^3], E[y^4])."""
    _require_stationary(sp)
    lam, alpha, beta, gamma = sp.lam, sp.alpha, sp.beta, sp.gamma
    q_inf = alpha / (2.0 * lam - gamma)
    m3_inf = 2.0 * beta / (lam - gamma) * q_inf
    m4_inf = 3.0 * (2.0 * lam - gamma) / (2.0 * lam - 3.0 * gamma) \
        * (1.0 + 4.0 * beta**2 / (alpha * (lam - gamma))) * q_inf**2
    return q_inf, m3_inf, m4_inf


def scalar_kurtosis(sp):
    """Stationary kurtosis of sigma^2: E[sigma^4]/(E[sigma^2])^2."""
    _require_stationary(sp)
    lam, alpha, beta, gamma = sp.lam, sp.alpha, sp.beta, sp.gamma
    return (2.0 * lam - gamma) / (2.0 * lam - 3.0 * gamma) * (
        (lam - gamma) / lam
        + (2.0 * lam - gamma) / (lam - gamma) * beta**2 / (lam * alpha))


def scalar_kurtosis_bounds(lam, gamma):
    """Range of the stationary kurtosis over admissible beta
    (beta^2 <= alpha*gamma); depends only on gamma/lam.  The lower end is
    attained at beta = 0, the upper at beta^2 = alpha*gamma."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if not gamma < 2.0 * lam / 3.0:
        raise NotStationaryError(
            f"gamma = {gamma:.6g} >= 2*lam/3 = {2 * lam / 3:.6g}")
    common = (2.0 * lam - gamma) / (2.0 * lam - 3.0 * gamma)
    return common * (lam - gamma) / lam, common * lam / (lam - gamma)


class PearsonIV:
    """Stationary law of the one-factor offset.

    Built once per parameter set: normalization by adaptive quadrature on
    the compactified angle theta = arctan((beta + gamma*y)/sqrt(delta)),
    where the density becomes proportional to cos(theta)^(2 lam/gamma) *
    exp(nu*theta); the CDF is cached on a dense theta grid with a monotone
    spline inverse.  A Gaussian branch covers gamma -> 0 (OU limit), and
    beta = 0 quantiles map exactly to a scaled Student t with
    2*lam/gamma + 1 degrees of freedom.
    """

    _GRID = 4096

    def __init__(self, sp):
        self.params = sp
        lam, alpha, beta, gamma = sp.lam, sp.alpha, sp.beta, sp.gamma
        self.gaussian = gamma < 1e-12 * lam
        if self.gaussian:
            if abs(beta) > 1e-8:
                raise ValueError("gamma ~ 0 requires beta = 0 (psd link)")
            self._sd = math.sqrt(alpha / (2.0 * lam))
            self.norm_const = 1.0 / (self._sd * math.sqrt(2.0 * math.pi))
            return
        delta = alpha * gamma - beta**2
        if delta <= 0:
            raise ValueError("alpha*gamma - beta^2 must be positive")
        self._delta = delta
        self._sqd = math.sqrt(delta)
        self._a = 2.0 * lam / gamma
        self._nu = 2.0 * lam * beta / (gamma * self._sqd)
        # normalization in the angle variable
        theta = np.linspace(-0.5 * math.pi, 0.5 * math.pi, self._GRID)
        h = np.full_like(theta, -np.inf)
        inner = slice(1, -1)
        h[inner] = self._a * np.log(np.cos(theta[inner])) + self._nu * theta[inner]
        self._hmax = h[inner].max()
        val, _ = integrate.quad(
            lambda x: math.exp(self._a * math.log(math.cos(x))
                               + self._nu * x - self._hmax),
            -0.5 * math.pi, 0.5 * math.pi)
        self._log_i = self._hmax + math.log(val)
        # log C from  1 = C * (sqd/gamma) * (delta/gamma)^(-lam/gamma-1) * I
        self._log_c = -(math.log(self._sqd / gamma)
                        + (-lam / gamma - 1.0) * math.log(delta / gamma)
                        + self._log_i)
        self.norm_const = math.exp(self._log_c)
        # CDF cache on the angle grid
        dens = np.exp(h - self._log_i)
        dens[0] = dens[-1] = 0.0
        cdf = integrate.cumulative_trapezoid(dens, theta, initial=0.0)
        cdf /= cdf[-1]
        self._theta_grid = theta
        self._cdf_grid = cdf
        self._cdf_spline = interpolate.PchipInterpolator(theta, cdf)
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        self._ppf_spline = interpolate.PchipInterpolator(cdf[keep],
                                                         theta[keep])

    # -- coordinate maps ---------------------------------------------------
    def _theta_of_y(self, y):
        sp = self.params
        return np.arctan((sp.beta + sp.gamma * np.asarray(y, float))
                         / self._sqd)

    def _y_of_theta(self, theta):
        sp = self.params
        return (self._sqd * np.tan(theta) - sp.beta) / sp.gamma

    def _theta_logpdf(self, theta):
        """Log density of the angle variable."""
        out = np.full_like(np.asarray(theta, float), -np.inf)
        inside = np.abs(theta) < 0.5 * math.pi
        t = np.asarray(theta, float)[inside]
        out[inside] = self._a * np.log(np.cos(t)) + self._nu * t - self._log_i
        return out

    # -- public law --------------------------------------------------------
    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        sp = self.params
        if self.gaussian:
            out = stats.norm.logpdf(y, scale=self._sd)
        else:
            sig2 = sp.alpha + 2.0 * sp.beta * y + sp.gamma * y * y
            out = self._log_c + (-sp.lam / sp.gamma - 1.0) * np.log(sig2) \
                + self._nu * self._theta_of_y(y)
        return float(out) if out.ndim == 0 else out

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def dlogpdf(self, y):
        """d/dy of logpdf; satisfies the Pearson differential equation
        p'/p = -2(beta + (lam + gamma) y) / sigma^2(y)."""
        y = np.asarray(y, dtype=float)
        sp = self.params
        if self.gaussian:
            out = -y / self._sd**2
        else:
            sig2 = sp.alpha + 2.0 * sp.beta * y + sp.gamma * y * y
            out = ((-sp.lam / sp.gamma - 1.0)
                   * (2.0 * sp.beta + 2.0 * sp.gamma * y) / sig2
                   + self._nu * (sp.gamma / self._sqd)
                   / (1.0 + ((sp.beta + sp.gamma * y) / self._sqd) ** 2))
        return float(out) if out.ndim == 0 else out

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        if self.gaussian:
            out = stats.norm.cdf(y, scale=self._sd)
        else:
            out = np.clip(self._cdf_spline(self._theta_of_y(y)), 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    @property
    def student_scale(self):
        """Scale s with y/s Student-t distributed when beta = 0."""
        sp = self.params
        return math.sqrt(sp.alpha / (2.0 * sp.lam + sp.gamma))

    @property
    def student_df(self):
        sp = self.params
        return 2.0 * sp.lam / sp.gamma + 1.0

    def ppf(self, u):
        """Quantile function.  beta = 0 maps exactly through the Student t;
        otherwise spline inverse plus a few Newton corrections."""
        u = np.asarray(u, dtype=float)
        if self.gaussian:
            out = stats.norm.ppf(u, scale=self._sd)
            return float(out) if u.ndim == 0 else out
        sp = self.params
        if sp.beta == 0.0:
            out = self.student_scale * stats.t.ppf(u, df=self.student_df)
            return float(out) if u.ndim == 0 else out
        uu = np.clip(np.atleast_1d(u), self._cdf_grid[1], self._cdf_grid[-2])
        theta = self._ppf_spline(uu)
        lo, hi = self._theta_grid[1], self._theta_grid[-2]
        for _ in range(4):
            f = np.exp(self._theta_logpdf(theta))
            step = (self._cdf_spline(theta) - uu) / np.maximum(f, 1e-300)
            theta = np.clip(theta - step, lo, hi)
        out = self._y_of_theta(theta)
        return float(out[0]) if np.ndim(u) == 0 else out

    def sample(self, n, seed):
        rng = np.random.default_rng(seed)
        if self.gaussian:
            return rng.normal(scale=self._sd, size=n)
        if self.params.beta == 0.0:
            return self.student_scale * rng.standard_t(self.student_df,
                                                       size=n)
        return self.ppf(rng.random(n))


def pearson4_density(pp, y):
    return pp.pdf(y)


def pearson4_logpdf(pp, y):
    return pp.logpdf(y)


def pearson4_sample(pp, n, seed):
    return pp.sample(n, seed)
