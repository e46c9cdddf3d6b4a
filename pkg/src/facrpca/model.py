"""Problem instances for factorized robust PCA and their parameter recipes.

The library solves the rank- and l0-regularized recovery problem in factored
form: find X (m x d), Y (n x d) and a sparse matrix S minimizing

    f(X Y^T, S) + lambda * (nnzc(X) + nnzc(Y)) + beta * ||S||_0

over column-norm balls for X, Y and an elementwise box for S, where nnzc
counts nonzero columns. The continuous surrogate replaces the counts with
capped-l1 terms at scales (r, s). This module holds the shared value types,
the derivations of (lambda, Lipschitz moduli, tau, r, s) from the data
bounds, the annealing schedules for the capped scales, and the exact /
relaxed objective evaluators.

All types are immutable after construction and safe to share across threads.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .loss import LossKind, loss_value, residual


@dataclass(frozen=True)
class ProblemDims:
    """Dimensions: m x n data matrix, factorization width d (rank budget)."""

    m: int
    n: int
    d: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be >= 1")
        if not 1 <= self.d <= min(self.m, self.n):
            raise ValueError("d must satisfy 1 <= d <= min(m, n)")


@dataclass(frozen=True)
class PenaltyParams:
    """Weights of the column-sparsity (lam) and entry-sparsity (beta) penalties."""

    lam: float
    beta: float

    def __post_init__(self):
        if self.lam < 0 or self.beta < 0:
            raise ValueError("penalty weights must be nonnegative")


@dataclass(frozen=True)
class ConstraintSpec:
    """Feasible set: column-norm bound tau for X, Y and elementwise box for S.

    ``tau = inf`` encodes unconstrained factors. ``s_lower``/``s_upper`` may
    be scalars or arrays aligned with the observed entries; they must bracket
    zero so that S = 0 is always feasible.
    """

    tau: float = np.inf
    s_lower: object = -np.inf
    s_upper: object = np.inf

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive (inf allowed)")
        lo = np.asarray(self.s_lower, dtype=np.float64)
        hi = np.asarray(self.s_upper, dtype=np.float64)
        if np.any(lo > 0) or np.any(hi < 0):
            raise ValueError("S box must satisfy s_lower <= 0 <= s_upper")


@dataclass(frozen=True)
class LipschitzBounds:
    """Partial Lipschitz moduli of the masked squared loss on the bounded region.

    With a1 bounding every entry of the feasible (Z, S) boxes and a2 the
    largest |M| entry: Delta = a1 sqrt(mn), L_X = n (a1+a2) sqrt(m Delta),
    L_Y = m (a1+a2) sqrt(n Delta), L_S = a1 + a2.
    """

    a1: float
    a2: float
    delta: float
    L_X: float
    L_Y: float
    L_S: float

    @classmethod
    def from_scales(cls, dims, a1, a2):
        if not (a1 > 0 and a2 > 0):
            raise ValueError("a1 and a2 must be positive")
        delta = a1 * math.sqrt(dims.m * dims.n)
        return cls(
            a1=float(a1),
            a2=float(a2),
            delta=delta,
            L_X=dims.n * (a1 + a2) * math.sqrt(dims.m * delta),
            L_Y=dims.m * (a1 + a2) * math.sqrt(dims.n * delta),
            L_S=float(a1 + a2),
        )


@dataclass(frozen=True)
class RelaxationParams:
    """Capped-l1 scales (r, s), their annealing schedules, and branch metadata.

    ``r`` (columns) and ``s`` (entries) are the terminal scales; ``None``
    disables the corresponding penalty machinery (lam = 0 resp. beta = 0).
    The schedules start at the plateau values ``r0``/``s0`` for the first
    ``k_max`` iterations and then decay like 1/(k - k_max) until they hit the
    terminal scale, frozen from iteration ``K`` (resp. ``K_tilde``) onward.
    ``eta_tilde`` is the subgradient lower bound of the linear branch; for
    the identity branch it can be anything in (0, 1].
    """

    r: float = None
    s: float = None
    eta_tilde: float = 1.0
    k_max: int = 10
    r0: float = None
    s0: float = None
    K: int = field(default=None)
    K_tilde: int = field(default=None)
    theta1: str = "identity"

    def __post_init__(self):
        if self.theta1 != "identity":
            raise ValueError("only the identity linear branch is supported")
        if not 0 < self.eta_tilde <= 1:
            raise ValueError("eta_tilde must lie in (0, 1]")
        if self.k_max < 0:
            raise ValueError("k_max must be nonnegative")
        object.__setattr__(self, "r0", self._plateau(self.r, self.r0))
        object.__setattr__(self, "s0", self._plateau(self.s, self.s0))
        object.__setattr__(self, "K", self._freeze_iter(self.r, self.r0, self.K))
        object.__setattr__(self, "K_tilde",
                           self._freeze_iter(self.s, self.s0, self.K_tilde))

    @staticmethod
    def _plateau(terminal, start):
        if terminal is None:
            return None
        if not terminal > 0:
            raise ValueError("capped scales must be positive")
        if start is None:
            return terminal
        return max(float(start), float(terminal))

    def _freeze_iter(self, terminal, start, given):
        if given is not None:
            return int(given)
        if terminal is None or start is None or start <= terminal:
            return 0
        return self.k_max + math.ceil(start / terminal)

    @staticmethod
    def _at(k, terminal, start, k_max):
        if terminal is None:
            return None
        if k <= k_max:
            return start
        return max(start / (k - k_max), terminal)

    def r_at(self, k):
        """Column scale r_k at iteration k (None when disabled)."""
        return self._at(k, self.r, self.r0, self.k_max)

    def s_at(self, k):
        """Entry scale s_k at iteration k (None when disabled)."""
        return self._at(k, self.s, self.s0, self.k_max)

    def validate(self, penalties, lipschitz, tau):
        """Check the admissibility bounds tying (r, s) to the problem scales.

        Requires 0 < r < min(min(1, eta) * lam / max(L_X, L_Y), tau) when
        lam > 0 and 0 < s < min(1, eta) * beta / L_S when beta > 0, plus
        non-increasing schedules that freeze at the terminal scales.
        """
        eta = min(1.0, self.eta_tilde)
        if penalties.lam > 0:
            if self.r is None:
                raise ValueError("lam > 0 requires a column scale r")
            bound = min(eta * penalties.lam / max(lipschitz.L_X, lipschitz.L_Y), tau)
            if not 0 < self.r < bound:
                raise ValueError(
                    f"r = {self.r} violates 0 < r < {bound} "
                    "(min(min(1,eta)*lam/max(L_X,L_Y), tau))"
                )
            if self.r0 < self.r:
                raise ValueError("r schedule must be non-increasing toward r")
            if self.r_at(self.K) != self.r:
                raise ValueError("r schedule does not freeze at r by iteration K")
        elif self.r is not None:
            raise ValueError("column scale r is set but lam = 0 disables it")
        if penalties.beta > 0:
            if self.s is None:
                raise ValueError("beta > 0 requires an entry scale s")
            bound = eta * penalties.beta / lipschitz.L_S
            if not 0 < self.s < bound:
                raise ValueError(
                    f"s = {self.s} violates 0 < s < {bound} (min(1,eta)*beta/L_S)"
                )
            if self.s0 < self.s:
                raise ValueError("s schedule must be non-increasing toward s")
            if self.s_at(self.K_tilde) != self.s:
                raise ValueError("s schedule does not freeze at s by iteration K~")
        elif self.s is not None:
            raise ValueError("entry scale s is set but beta = 0 disables it")


@dataclass(frozen=True)
class DerivedParams:
    """Bundle returned by :func:`derive_params`."""

    penalties: PenaltyParams
    lipschitz: LipschitzBounds
    constraints: ConstraintSpec
    relaxation: RelaxationParams


def derive_params(dims, beta, a1, a2, lam=None, eta_tilde=1.0, k_max=10,
                  tau=None, safety=0.99):
    """Derive all solver parameters from the data scales.

    Recipes: lam = sqrt(max(m, n)) * beta / 2 when beta != 0 (overridable),
    the Lipschitz moduli from (a1, a2), terminal scales
    r = safety * min(1, eta) * lam / max(L_X, L_Y) and
    s = safety * min(1, eta) * beta / L_S, plateau schedule starts
    sqrt(2 lam) and sqrt(2 beta), and tau = sqrt(Delta), the smallest
    column bound certified to preserve all factorizations of matrices with
    entries bounded by a1 (overridable). The default S box is [-a1, a1].

    beta = 0 disables the entry penalty: s is returned as None ("disabled")
    and lam must then be supplied explicitly.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    lips = LipschitzBounds.from_scales(dims, a1, a2)
    if beta == 0:
        if lam is None:
            raise ValueError(
                "beta = 0 disables the entry-sparsity recipe; supply lam explicitly"
            )
    elif lam is None:
        lam = math.sqrt(max(dims.m, dims.n)) * beta / 2.0
    penalties = PenaltyParams(lam=float(lam), beta=float(beta))
    if tau is None:
        tau = math.sqrt(lips.delta)
    constraints = ConstraintSpec(tau=float(tau), s_lower=-lips.a1, s_upper=lips.a1)
    eta = min(1.0, eta_tilde)
    r = None
    if penalties.lam > 0:
        r = safety * eta * penalties.lam / max(lips.L_X, lips.L_Y)
        r = min(r, safety * tau)
    s = None
    if beta > 0:
        s = safety * eta * beta / lips.L_S
    rel = RelaxationParams(
        r=r,
        s=s,
        eta_tilde=float(eta_tilde),
        k_max=int(k_max),
        r0=None if r is None else max(math.sqrt(2 * penalties.lam), r),
        s0=None if s is None else max(math.sqrt(2 * beta), s),
    )
    rel.validate(penalties, lips, tau)
    return DerivedParams(penalties, lips, constraints, rel)


def nnzc(M):
    """Number of nonzero columns (exact zero comparison, no tolerance)."""
    return int(np.count_nonzero(np.any(np.asarray(M) != 0, axis=0)))


def capped_theta(t):
    """The capped-l1 relaxation theta(t) = min(t, 1) of the 0/1 indicator."""
    return np.minimum(np.asarray(t, dtype=np.float64), 1.0)


def objective_exact(state, data, penalties, loss_kind=LossKind.squared()):
    """Exact objective: data fit + lam * (nnzc(X) + nnzc(Y)) + beta * ||S||_0."""
    fit = loss_value(residual(state.X, state.Y, state.S_vals, data), loss_kind)
    counts = penalties.lam * (nnzc(state.X) + nnzc(state.Y))
    sparse = penalties.beta * int(np.count_nonzero(state.S_vals))
    return fit + counts + sparse


def objective_relaxed(state, data, penalties, rel, rho_r, rho_s,
                      loss_kind=LossKind.squared()):
    """Capped surrogate objective at scales (rho_r, rho_s).

    Replaces the column count by sum_i theta(||V_i|| / rho_r) for V in
    {X, Y} and the entry count by sum theta(|S_ij| / rho_s); theta(0) = 0, so
    summing the S term over the stored entries only is exact. Scales for a
    disabled penalty (weight zero) may be passed as None.
    """
    if rel.theta1 != "identity":
        raise ValueError("only the identity linear branch is supported")
    fit = loss_value(residual(state.X, state.Y, state.S_vals, data), loss_kind)
    total = fit
    if penalties.lam > 0:
        if not (rho_r and rho_r > 0):
            raise ValueError("rho_r must be positive when lam > 0")
        total += penalties.lam * (
            float(np.sum(capped_theta(np.linalg.norm(state.X, axis=0) / rho_r)))
            + float(np.sum(capped_theta(np.linalg.norm(state.Y, axis=0) / rho_r)))
        )
    if penalties.beta > 0:
        if not (rho_s and rho_s > 0):
            raise ValueError("rho_s must be positive when beta > 0")
        total += penalties.beta * float(
            np.sum(capped_theta(np.abs(state.S_vals) / rho_s))
        )
    return total
