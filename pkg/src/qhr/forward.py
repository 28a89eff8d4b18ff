"""Forward-variance term structure and its principal component analysis.

The forward variance v_t(s) = E[sigma^2_{t+s} | F_t] is affine in the state
eta_t = (y_t; y_t (x) y_t):

    v_t(s) = sigma2_infty + psi(s)'(eta_t - eta_infty),
    psi(s) = (e^{-A~ s})' g,   g = (2 beta; vec Gamma).

This module evaluates the curve, splits it into its y-linear and y-quadratic
parts to get the lower envelope over initial states, and diagonalizes the
curve covariance into orthonormal factor curves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .moments import EtaState, NotStationaryError


class NonConvexSliceError(ValueError):
    """The quadratic part of the forward slice is not bounded below."""


@dataclass(frozen=True)
class ForwardLoadings:
    """Loading curve psi and its split into linear and quadratic parts."""

    p: int
    a_tilde: np.ndarray
    g: np.ndarray

    def psi(self, s):
        return linalg.expm(-self.a_tilde * s).T @ self.g

    def psi_y(self, s):
        return self.psi(s)[:self.p]

    def psi_q_mat(self, s):
        """Quadratic loading as a symmetric p x p matrix.

        The raw reshape need not be symmetric (q duplicates off-diagonal
        coordinates); symmetrizing leaves the quadratic form unchanged."""
        m = linalg.unvec(self.psi(s)[self.p:], self.p, self.p)
        return 0.5 * (m + m.T)


def loadings(sys):
    return ForwardLoadings(p=sys.p, a_tilde=sys.a_tilde, g=sys.g)


def forward_variance(sys, eta, s):
    """v_t(s) for a given state; at s=0 this equals sigma^2(y) exactly when
    the state was formed from a path (q = y (x) y)."""
    if not sys.stable:
        raise NotStationaryError("forward variance undefined: not stationary")
    if s < 0:
        raise ValueError("horizon must be nonnegative")
    vec = eta.vector if isinstance(eta, EtaState) else \
        np.asarray(eta, dtype=float).reshape(-1)
    psi = loadings(sys).psi(s)
    return sys.sigma2_infty + float(psi @ (vec - sys.eta_infty))


def forward_min_envelope(sys, s):
    """Zero-state curve v0(s) and the minimum of v_t(s) over all spot states
    y (with q = y (x) y).

    The slice is v0 + y'psi_y + y'Psi_Q y; for Psi_Q psd the minimum is
    v0 - psi_y' Psi_Q^+ psi_y / 4, using the pseudo-inverse when Psi_Q is
    singular.  A negative eigenvalue, or a psi_y component outside the range
    of Psi_Q, makes the slice unbounded below."""
    if not sys.stable:
        raise NotStationaryError("envelope undefined: not stationary")
    if s < 0:
        raise ValueError("horizon must be nonnegative")
    ld = loadings(sys)
    psi = ld.psi(s)
    v0 = sys.sigma2_infty - float(psi @ sys.eta_infty)
    psi_y = psi[:sys.p]
    q_mat = linalg.unvec(psi[sys.p:], sys.p, sys.p)
    q_mat = 0.5 * (q_mat + q_mat.T)
    eig = np.linalg.eigvalsh(q_mat)
    scale = max(np.abs(eig).max(), 1e-300)
    if eig.min() < -1e-10 * max(scale, 1.0):
        raise NonConvexSliceError(
            f"quadratic loading indefinite at s={s}: min eig {eig.min():.3e}")
    q_pinv = np.linalg.pinv(q_mat, rcond=1e-10)
    resid = np.linalg.norm(q_mat @ (q_pinv @ psi_y) - psi_y)
    if resid > 1e-6 * max(np.linalg.norm(psi_y), 1e-300):
        raise NonConvexSliceError(
            f"linear loading escapes the quadratic range at s={s}")
    v_min = v0 - 0.25 * float(psi_y @ q_pinv @ psi_y)
    return v0, v_min


# ---------------------------------------------------------------------------
# principal components


def duplication_matrix(p):
    """D with vec(S) = D vech(S) for symmetric S (vech stacks the lower
    triangle column by column)."""
    cols = []
    for j in range(p):
        for i in range(j, p):
            m = np.zeros((p, p))
            m[i, j] = 1.0
            m[j, i] = 1.0
            cols.append(linalg.vec(m))
    return np.column_stack(cols)


@dataclass(frozen=True)
class PcaDecomposition:
    """Orthonormal factor decomposition of the forward-curve covariance.

    factor_curves(t) returns u(t) with Cov(v(s1), v(s2)) = u(s1)' diag(
    eigenvalues) u(s2) and integral of u u' over [0, inf) equal to the
    identity.  f_matrix and r_factor are the (reduced) accumulated loading
    Gram matrix and its rank-revealing Cholesky factor."""

    eigenvalues: np.ndarray
    factor_curves: object
    rank: int
    f_matrix: np.ndarray
    r_factor: np.ndarray


def pca(sys, omega_mat, tol=1e-10):
    """Diagonalize the stationary covariance of the forward curve.

    The q block is first projected onto the p(p+1)/2 distinct symmetric
    coordinates (duplicates carry no extra information), then
    F = integral of psi psi' dt is accumulated by a Lyapunov solve,
    factorized as F = R R', and R' Omega R is diagonalized.  Factor curves
    are u(t) = V' R^+ psi(t)."""
    if not sys.stable:
        raise NotStationaryError("pca undefined: not stationary")
    p = sys.p
    dup = duplication_matrix(p)
    dup_pinv = np.linalg.solve(dup.T @ dup, dup.T)
    reduce_psi = np.zeros((p + dup.shape[1], p + p**2))
    reduce_psi[:p, :p] = np.eye(p)
    reduce_psi[p:, p:] = dup.T
    reduce_eta = np.zeros_like(reduce_psi)
    reduce_eta[:p, :p] = np.eye(p)
    reduce_eta[p:, p:] = dup_pinv

    f_full = linalg.solve_lyapunov(sys.a_tilde, sys.g)
    f_red = reduce_psi @ f_full @ reduce_psi.T
    f_red = 0.5 * (f_red + f_red.T)
    omega_red = reduce_eta @ omega_mat @ reduce_eta.T
    omega_red = 0.5 * (omega_red + omega_red.T)

    r, rank, r_pinv = linalg.pivoted_cholesky(f_red, tol=tol)
    core = r.T @ omega_red @ r
    core = 0.5 * (core + core.T)
    vals, vecs = np.linalg.eigh(core)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    project = vecs.T @ r_pinv @ reduce_psi
    a_tilde, g = sys.a_tilde, sys.g

    def factor_curves(t):
        return project @ (linalg.expm(-a_tilde * t).T @ g)

    return PcaDecomposition(eigenvalues=vals, factor_curves=factor_curves,
                            rank=rank, f_matrix=f_red, r_factor=r)


def default_grid(points=200, start=1e-3, end=5.0):
    """Geometric maturity grid used for curve emission."""
    return np.geomspace(start, end, points)


def pca_curves_csv(dec, grid):
    """Render factor curves scaled by their standard deviations.

    Component variances appear as comment lines; data columns are t followed
    by u_i(t) * sqrt(eigenvalue_i)."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be ascending and non-empty")
    lines = []
    for i, v in enumerate(dec.eigenvalues, start=1):
        lines.append(f"# component {i} variance = {v:.17g}")
    cols = ["t"] + [f"pc{i}" for i in range(1, len(dec.eigenvalues) + 1)]
    lines.append(",".join(cols))
    scale = np.sqrt(np.maximum(dec.eigenvalues, 0.0))
    for t in grid:
        u = dec.factor_curves(t) * scale
        row = [f"{t:.17g}"] + [f"{x:.17g}" for x in u]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
