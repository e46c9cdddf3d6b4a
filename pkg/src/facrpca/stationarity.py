"""Post-hoc optimality certificates for solver output.

A converged iterate is certified on three axes:

* consistency: the nonzero-column sets of X and Y coincide;
* isolation: no column norm lies in (0, r) and no |S_ij| in (0, s);
* a first-order residual: how far zero is from the sum of the data-term
  gradient, the (branch-fixed) capped-penalty subdifferential, and the
  normal cone of the active ball/box constraint, blockwise over X, Y, S.

Consistency and isolation are exact yes/no properties (solver prox steps
produce exact zeros). The residual is a nonnegative scalar; a point is
accepted as strongly stationary when both exact properties hold and the
residual is below a tolerance relative to the gradient scale. Any point
failing the certificate is provably not a global minimizer, so the pass set
contains all global minimizers.
"""

from dataclasses import dataclass

import numpy as np

from .loss import SparseResidual, grad_factors, grad_sparse, loss_value, residual
from .model import nnzc, objective_exact, objective_relaxed


@dataclass(frozen=True)
class StationarityReport:
    """Certificate summary for one iterate."""

    consistency_ok: bool
    isolation_ok: bool
    kkt_residual: float
    grad_norm: float
    support_sizes: tuple          # (nnzc(X), nnzc(Y), ||S||_0)
    objectives: tuple             # (exact F, capped F at the terminal scales)

    def passes(self, tol=1e-4):
        """Strong-stationarity certificate at relative tolerance ``tol``."""
        return (self.consistency_ok and self.isolation_ok
                and self.kkt_residual <= tol * (1.0 + self.grad_norm))


def check_consistency(state, lam=None):
    """True iff the nonzero-column sets of X and Y coincide (exact zeros).

    Vacuously true when the column penalty is disabled (lam == 0).
    """
    if lam is not None and lam == 0:
        return True
    return bool(np.array_equal(state.col_support_x(), state.col_support_y()))


def check_isolation(state, r, s):
    """True iff no column norm lies in (0, r) and no |S_ij| lies in (0, s).

    Pass ``r=None`` (resp. ``s=None``) to skip a side whose penalty is off.
    """
    if r is not None:
        for M in (state.X, state.Y):
            norms = np.linalg.norm(M, axis=0)
            if np.any((norms > 0) & (norms < r)):
                return False
    if s is not None:
        a = np.abs(state.S_vals)
        if np.any((a > 0) & (a < s)):
            return False
    return True


def _column_block_residual(V, G, lam, r, tau, boundary_rtol=1e-9):
    """Per-column distances from -gradient to subdifferential + normal cone.

    Columns on the penalty support (norm >= r) carry a zero subdifferential,
    so the residual is the gradient minus its projection onto the ball's
    normal cone (a radial ray on the boundary, {0} inside). Off the support
    the subdifferential is the (lam / r)-ball at zero, giving a slab test,
    or the single scaled direction for a column strictly inside (0, r).
    """
    a = np.linalg.norm(V, axis=0)
    gnorm = np.linalg.norm(G, axis=0)
    out = np.empty_like(a)
    if lam > 0 and r is not None:
        zero = a == 0
        small = (a > 0) & (a < r)
        big = ~zero & ~small
        out[zero] = np.maximum(0.0, gnorm[zero] - lam / r)
        if small.any():
            W = G[:, small] + (lam / r) * V[:, small] / a[small]
            out[small] = np.linalg.norm(W, axis=0)
    else:
        big = np.ones(a.shape, dtype=bool)
        out[:] = 0.0
    if big.any():
        res_big = gnorm[big].copy()
        if np.isfinite(tau):
            on_bnd = a[big] >= tau * (1 - boundary_rtol)
            if on_bnd.any():
                idx = np.flatnonzero(big)[on_bnd]
                U = V[:, idx] / a[idx]
                coef = np.maximum(0.0, -np.einsum("ij,ij->j", G[:, idx], U))
                res_big[on_bnd] = np.linalg.norm(
                    -G[:, idx] - coef * U, axis=0)
        out[big] = res_big
    return out


def _entry_block_residual(S, g, beta, s, lo, hi):
    """Per-entry distance from -gradient to subdifferential + box normal cone.

    Both pieces are intervals of the real line (possibly rays), so their sum
    is an interval and the distance is a two-sided clamp defect.
    """
    S = np.asarray(S)
    sub_lo = np.zeros_like(S)
    sub_hi = np.zeros_like(S)
    if beta > 0 and s is not None:
        radius = beta / s
        zero = S == 0
        small = (np.abs(S) > 0) & (np.abs(S) < s)
        sub_lo[zero] = -radius
        sub_hi[zero] = radius
        pt = radius * np.sign(S[small])
        sub_lo[small] = pt
        sub_hi[small] = pt
    n_lo = np.where(np.isfinite(lo) & (S <= lo), -np.inf, 0.0)
    n_hi = np.where(np.isfinite(hi) & (S >= hi), np.inf, 0.0)
    total_lo = sub_lo + n_lo
    total_hi = sub_hi + n_hi
    target = -np.asarray(g)
    return np.maximum(0.0, np.maximum(total_lo - target, target - total_hi))


def gradient_norm(state, data, loss_kind):
    """Frobenius norm of the data-term gradient (G_X, G_Y, grad_S) at the state."""
    res = residual(state.X, state.Y, state.S_vals, data)
    gvals = grad_sparse(res, loss_kind)
    G_X, G_Y = grad_factors(SparseResidual(gvals, data), state.X, state.Y)
    return float(np.sqrt(np.sum(G_X ** 2) + np.sum(G_Y ** 2)
                         + np.sum(gvals ** 2)))


def kkt_residual(state, data, penalties, constraints, rel, loss_kind):
    """First-order residual of the branch-fixed inclusion at the state.

    Returns the largest of the three block residuals (X, Y, S), each the
    Euclidean norm of the per-column / per-entry distances from the negative
    gradient to the subdifferential-plus-normal-cone set at the terminal
    scales (r, s).
    """
    res = residual(state.X, state.Y, state.S_vals, data)
    gvals = grad_sparse(res, loss_kind)
    G_X, G_Y = grad_factors(SparseResidual(gvals, data), state.X, state.Y)
    r = rel.r if penalties.lam > 0 else None
    s = rel.s if penalties.beta > 0 else None
    rx = _column_block_residual(state.X, G_X, penalties.lam, r, constraints.tau)
    ry = _column_block_residual(state.Y, G_Y, penalties.lam, r, constraints.tau)
    lo = np.broadcast_to(np.asarray(constraints.s_lower, dtype=np.float64),
                         state.S_vals.shape)
    hi = np.broadcast_to(np.asarray(constraints.s_upper, dtype=np.float64),
                         state.S_vals.shape)
    rs = _entry_block_residual(state.S_vals, gvals, penalties.beta, s, lo, hi)
    return max(float(np.linalg.norm(rx)), float(np.linalg.norm(ry)),
               float(np.linalg.norm(rs)))


def stationarity_report(state, data, penalties, constraints, rel, loss_kind):
    """Full certificate for one iterate (see :class:`StationarityReport`)."""
    r = rel.r if penalties.lam > 0 else None
    s = rel.s if penalties.beta > 0 else None
    f_exact = objective_exact(state, data, penalties, loss_kind)
    f_relaxed = objective_relaxed(state, data, penalties, rel, r, s, loss_kind)
    return StationarityReport(
        consistency_ok=check_consistency(state, penalties.lam),
        isolation_ok=check_isolation(state, r, s),
        kkt_residual=kkt_residual(state, data, penalties, constraints, rel,
                                  loss_kind),
        grad_norm=gradient_norm(state, data, loss_kind),
        support_sizes=(nnzc(state.X), nnzc(state.Y),
                       int(np.count_nonzero(state.S_vals))),
        objectives=(f_exact, f_relaxed),
    )
