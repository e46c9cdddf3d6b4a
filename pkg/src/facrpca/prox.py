"""Exact proximal operators for the column- and entry-sparsity penalties.

Two penalty families appear in the solvers, both paired with a feasibility
constraint (Euclidean ball for factor columns, box for sparse entries):

* the hard count penalty gamma * 1[x != 0], and
* its capped continuous surrogate gamma * theta(|x| / rho), where
  theta(t) = min(t, 1) is the capped-l1 function built from the linear
  branch theta1(t) = t and the constant branch theta2(t) = 1.

All operators reduce to one-dimensional problems over the magnitude
(columns: the Euclidean norm; entries: the absolute value with the sign of
the input preserved). The capped operators are solved by exact candidate
enumeration over the two branches plus the breakpoint; ties are broken
toward the larger magnitude so that solver trajectories are deterministic
and a column/entry survives a tie rather than being pruned. Zeros are
returned exactly (no denormal residue), so downstream support logic can use
exact comparisons.
"""

from dataclasses import dataclass

import numpy as np

BRANCHES = ("both", "linear_only", "constant_only")


@dataclass(frozen=True)
class GroupPenalty:
    """Capped column penalty gamma * theta_branch(||x||_2 / rho) on the ball B_tau."""

    gamma: float
    rho: float
    branch: str = "both"
    tau: float = np.inf

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}")


@dataclass(frozen=True)
class ScalarPenalty:
    """Capped entry penalty gamma * theta_branch(|x| / rho) on the box [lower, upper]."""

    gamma: float
    rho: float
    branch: str = "both"
    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not (self.lower <= 0 <= self.upper):
            raise ValueError("box must satisfy lower <= 0 <= upper")
        if self.branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}")


def _capped_objective(t, a, gamma, rho):
    """Radial objective gamma * min(t/rho, 1) + 0.5 (t - a)^2 of the capped penalty."""
    return gamma * np.minimum(t / rho, 1.0) + 0.5 * (t - a) ** 2


def capped_radius(a, gamma, rho, cap, branch="both"):
    """Optimal magnitude of the capped prox, vectorized over magnitudes ``a``.

    Solves min_{0 <= t <= cap} gamma * theta_branch(t / rho) + 0.5 (t - a)^2
    exactly. ``cap`` may be an array aligned with ``a`` or a scalar (use
    np.inf for the unconstrained case).
    """
    a = np.asarray(a, dtype=np.float64)
    cap = np.broadcast_to(np.asarray(cap, dtype=np.float64), a.shape)
    if branch == "linear_only":
        # theta1(t) = t for all t >= 0: a single soft-threshold clamp.
        return np.clip(a - gamma / rho, 0.0, cap)
    if branch == "constant_only":
        # theta2 == 1 everywhere, so the penalty is constant: pure projection.
        return np.minimum(a, cap)
    # Both branches: best of the linear piece on [0, min(rho, cap)], the
    # constant piece on [rho, cap], and the breakpoint itself.
    t_lin = np.clip(a - gamma / rho, 0.0, np.minimum(rho, cap))
    t_con = np.clip(a, np.minimum(rho, cap), cap)
    t_bp = np.minimum(rho, cap)
    cands = np.stack([t_lin, t_con, t_bp])
    vals = _capped_objective(cands, a, gamma, rho)
    best = vals.min(axis=0)
    # Exact ties resolve toward the larger magnitude.
    return np.where(vals == best, cands, -np.inf).max(axis=0)


def capped_radius_tagged(a, gamma, rho, cap, tags):
    """Branch-fixed optimal magnitudes: tag 1 = linear branch, tag 2 = constant."""
    a = np.asarray(a, dtype=np.float64)
    t_lin = capped_radius(a, gamma, rho, cap, "linear_only")
    t_con = capped_radius(a, gamma, rho, cap, "constant_only")
    return np.where(np.asarray(tags) == 1, t_lin, t_con)


def prox_group(z, p):
    """Prox of gamma * theta_branch(||.||_2 / rho) + ball indicator at ``z``."""
    z = np.asarray(z, dtype=np.float64)
    a = float(np.linalg.norm(z))
    if a == 0.0:
        return np.zeros_like(z)
    t = float(capped_radius(np.array(a), p.gamma, p.rho, p.tau, p.branch))
    if t == 0.0:
        return np.zeros_like(z)
    return (t / a) * z


def prox_scalar(z, p):
    """Prox of gamma * theta_branch(|.| / rho) + box indicator at scalar ``z``."""
    z = float(z)
    if z == 0.0:
        return 0.0
    cap = p.upper if z > 0 else -p.lower
    t = float(capped_radius(np.array(abs(z)), p.gamma, p.rho, cap, p.branch))
    return t if z > 0 else -t


def group_l0_radius(a, gamma, cap):
    """Optimal magnitude for the hard column penalty, vectorized over ``a``.

    Compares the zero candidate (cost 0.5 a^2) against the ball projection
    (cost gamma + 0.5 (min(a, cap) - a)^2); ties keep the nonzero candidate.
    """
    a = np.asarray(a, dtype=np.float64)
    t_proj = np.minimum(a, cap)
    keep = gamma + 0.5 * (t_proj - a) ** 2 <= 0.5 * a * a
    return np.where(keep, t_proj, 0.0)


def prox_group_l0(z, gamma, tau=np.inf):
    """Prox of gamma * 1[x != 0] + ball indicator at vector ``z``."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if not tau > 0:
        raise ValueError("tau must be positive")
    z = np.asarray(z, dtype=np.float64)
    a = float(np.linalg.norm(z))
    if a == 0.0:
        return np.zeros_like(z)
    t = float(group_l0_radius(np.array(a), gamma, tau))
    if t == 0.0:
        return np.zeros_like(z)
    return (t / a) * z


def scalar_l0_values(z, gamma, lower, upper):
    """Optimal values for the hard entry penalty, vectorized over ``z``."""
    z = np.asarray(z, dtype=np.float64)
    c = np.clip(z, lower, upper)
    keep = gamma + 0.5 * (c - z) ** 2 <= 0.5 * z * z
    return np.where(keep, c, 0.0)


def prox_scalar_l0(z, gamma, lower=-np.inf, upper=np.inf):
    """Prox of gamma * 1[x != 0] + box indicator at scalar ``z``."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if not (lower <= 0 <= upper):
        raise ValueError("box must satisfy lower <= 0 <= upper")
    return float(scalar_l0_values(np.array(float(z)), gamma, lower, upper))


def prox_group_columns(V, gamma, rho, tau, branch="both", tags=None):
    """Column-wise capped prox of an m x d matrix (shared gamma, rho, tau).

    With ``tags`` given (per-column values in {1, 2}), branch-fixed penalties
    are applied per column; otherwise ``branch`` applies uniformly. Columns
    mapped to magnitude zero come back as exact zero columns.
    """
    V = np.asarray(V, dtype=np.float64)
    a = np.linalg.norm(V, axis=0)
    if tags is not None:
        t = capped_radius_tagged(a, gamma, rho, tau, tags)
    else:
        t = capped_radius(a, gamma, rho, tau, branch)
    scale = np.divide(t, a, out=np.zeros_like(a), where=a > 0)
    return V * scale[None, :]


def prox_scalar_array(z, gamma, rho, lower, upper, branch="both", tags=None):
    """Elementwise capped prox of an array (shared gamma, rho; box bounds broadcast)."""
    z = np.asarray(z, dtype=np.float64)
    cap = np.where(z >= 0, np.broadcast_to(upper, z.shape),
                   -np.broadcast_to(lower, z.shape))
    a = np.abs(z)
    if tags is not None:
        # Branch-fixed magnitudes in one fused pass: tag 1 soft-thresholds
        # by gamma / rho, tag 2 only projects.
        thr = np.where(np.asarray(tags) == 1, gamma / rho, 0.0)
        t = np.clip(a - thr, 0.0, cap)
    else:
        t = capped_radius(a, gamma, rho, cap, branch)
    return np.where(z >= 0, t, -t)


def prox_group_l0_columns(V, gamma, tau=np.inf):
    """Column-wise hard-penalty prox of an m x d matrix."""
    V = np.asarray(V, dtype=np.float64)
    a = np.linalg.norm(V, axis=0)
    t = group_l0_radius(a, gamma, tau)
    scale = np.divide(t, a, out=np.zeros_like(a), where=a > 0)
    return V * scale[None, :]


def prox_scalar_l0_array(z, gamma, lower=-np.inf, upper=np.inf):
    """Elementwise hard-penalty prox (box bounds broadcast against ``z``)."""
    z = np.asarray(z, dtype=np.float64)
    c = np.clip(z, np.broadcast_to(lower, z.shape), np.broadcast_to(upper, z.shape))
    keep = gamma + 0.5 * (c - z) ** 2 <= 0.5 * z * z
    return np.where(keep, c, 0.0)
