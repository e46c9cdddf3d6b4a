"""Joint-alternating proximal gradient solvers for the factorized problem.

Two solvers share the same iteration skeleton. Each outer iteration first
updates the factor pair (X, Y) jointly by a prox-gradient step with
backtracking on the step scales (the joint subroutine), then updates the
sparse matrix S the same way (the alternating subroutine). Backtracking
re-evaluates only the composite value being tested, never the gradients, so
each trial costs one residual pass.

``solve_japg`` runs the plain scheme on a fixed regularizer: either the
exact column/entry counts or the capped surrogate at fixed scales. Its
objective decreases by at least (c_min / 2) times the squared iterate
displacement every iteration, which is checked at runtime.

``solve_ajapg`` runs the adaptive scheme for the capped relaxation: each
iteration restricts the factor update to the live columns (nonzero in both
X and Y), fixes the capped penalty to its active branch per column/entry,
and anneals the scales (r_k, s_k) down to their terminal values. Dead
columns and (late) dead entries provably stay dead; the solver asserts this
and the support monotonicity each iteration instead of assuming it.
"""

import json
import math
import time
import zlib
from dataclasses import dataclass

import numpy as np

from .loss import (SparseResidual, grad_factors, grad_sparse, loss_value,
                   predicted_values)
from .model import capped_theta, nnzc
from .prox import (prox_group_columns, prox_group_l0_columns,
                   prox_scalar_array, prox_scalar_l0_array)

# Relative slack for the runtime monotone-descent checks; absorbs summation
# roundoff only, never a genuine violation.
DESCENT_RTOL = 1e-10

# Per-iteration trace record fields, in export order. ``time`` is wall-clock
# seconds since the solve started and is excluded from the determinism
# contract (everything else is bit-reproducible for a fixed seed).
# ``cols_x``/``cols_y`` are hex bitmasks of the nonzero-column sets and
# ``entries_crc`` a CRC-32 of the packed entry-support bits, so support
# inclusion and freezing can be audited from the trace alone.
TRACE_FIELDS = (
    "iter", "objective", "objective_relaxed", "iota1", "iota2", "iota_s",
    "backtracks_xy", "backtracks_s", "support_cols", "support_entries",
    "cols_x", "cols_y", "entries_crc", "displacement", "time",
)


def _col_bits(mask):
    """Hex bitmask of a boolean column-support vector (bit i = column i)."""
    bits = 0
    for i in np.flatnonzero(mask):
        bits |= 1 << int(i)
    return format(bits, "x")


def _entries_crc(support):
    return zlib.crc32(np.packbits(support).tobytes())


class SolverError(RuntimeError):
    """Raised when a solve cannot continue (non-finite data, broken prox, ...)."""


@dataclass
class FactorState:
    """Iterate triple: factors X (m x d), Y (n x d) and S as values on Omega.

    Entries of S off the observed set are identically zero for every
    algorithm here (the data-term gradient vanishes there and every prox
    maps 0 to 0), so only the Omega-aligned values are stored.
    """

    X: np.ndarray
    Y: np.ndarray
    S_vals: np.ndarray

    def col_support_x(self):
        return np.any(self.X != 0, axis=0)

    def col_support_y(self):
        return np.any(self.Y != 0, axis=0)

    def support_cols(self):
        """Live column set: nonzero in both factors."""
        return self.col_support_x() & self.col_support_y()

    def entry_support(self):
        return self.S_vals != 0

    def copy(self):
        return FactorState(self.X.copy(), self.Y.copy(), self.S_vals.copy())

    def check_feasible(self, constraints, rtol=1e-12):
        """Raise unless the iterate satisfies the ball/box constraints.

        Column norms get a relative slack (ball projection rounds at the
        boundary); the box check is exact because clipping is exact.
        """
        tau = constraints.tau
        if np.isfinite(tau):
            slack = tau * (1 + rtol)
            if (np.linalg.norm(self.X, axis=0) > slack).any() or \
               (np.linalg.norm(self.Y, axis=0) > slack).any():
                raise SolverError("factor column norm exceeds tau")
        lo, hi = constraints.s_lower, constraints.s_upper
        if np.any(self.S_vals < np.broadcast_to(lo, self.S_vals.shape)) or \
           np.any(self.S_vals > np.broadcast_to(hi, self.S_vals.shape)):
            raise SolverError("sparse entry outside its box")


@dataclass(frozen=True)
class SolverConfig:
    """Step-size bounds, backtracking and stopping controls.

    The base step of every backtracking line search is kept in
    [iota_lo, iota_hi]; trials grow by the factor varrho until the
    sufficient-decrease test with constant c (in [c_min, c_max]) passes.
    The solve stops when the relative change of the exact objective between
    consecutive iterates drops to rel_tol, or at max_iters.
    """

    iota_lo: float = 1e-4
    iota_hi: float = 1e4
    varrho: float = 2.0
    c_min: float = 1e-4
    c_max: float = 1e-4
    max_iters: int = 500
    rel_tol: float = 1e-5
    max_backtracks: int = 60
    base_step_rule: str = "warm"

    def __post_init__(self):
        if not 0 < self.iota_lo <= self.iota_hi:
            raise ValueError("need 0 < iota_lo <= iota_hi")
        if not self.varrho > 1:
            raise ValueError("varrho must exceed 1")
        if not 0 < self.c_min <= self.c_max:
            raise ValueError("need 0 < c_min <= c_max")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be nonnegative")
        if self.base_step_rule not in ("warm", "fixed"):
            raise ValueError("base_step_rule must be 'warm' or 'fixed'")


@dataclass(frozen=True)
class BranchIndex:
    """Active-branch tags at the current iterate: 1 = linear, 2 = constant.

    A column/entry is tagged 2 exactly when its scaled magnitude is >= 1
    (ties go to the constant branch), and everywhere when the corresponding
    penalty weight is zero.
    """

    I1: np.ndarray
    I2: np.ndarray
    J: np.ndarray

    @classmethod
    def at_scales(cls, X, Y, S_vals, r_k, s_k, lam, beta):
        """Tags of the factor columns and stored entries at scales (r_k, s_k)."""
        return cls(
            I1=branch_tags(np.linalg.norm(X, axis=0), r_k, lam > 0),
            I2=branch_tags(np.linalg.norm(Y, axis=0), r_k, lam > 0),
            J=branch_tags(np.abs(S_vals), s_k, beta > 0),
        )


def branch_tags(magnitudes, rho, active=True):
    """Per-element tags for magnitudes at scale rho (all 2 when inactive)."""
    m = np.asarray(magnitudes)
    if not active or rho is None:
        return np.full(m.shape, 2, dtype=np.int8)
    return np.where(m >= rho, 2, 1).astype(np.int8)


@dataclass(frozen=True)
class Regularizer:
    """Which nonsmooth penalty the plain solver runs on.

    ``exact_l0``: the hard counts. ``relaxed``: the capped surrogate at
    fixed scales (rho_r, rho_s); pass None for a scale whose penalty weight
    is zero.
    """

    kind: str
    rho_r: float = None
    rho_s: float = None

    def __post_init__(self):
        if self.kind not in ("exact_l0", "relaxed"):
            raise ValueError("regularizer kind must be 'exact_l0' or 'relaxed'")

    @classmethod
    def exact_l0(cls):
        return cls("exact_l0")

    @classmethod
    def relaxed(cls, rho_r, rho_s):
        return cls("relaxed", rho_r, rho_s)


class RunTrace:
    """Per-iteration solve records (one dict per completed iteration).

    Field names are in ``TRACE_FIELDS``. ``converged`` reports whether the
    relative-change stopping rule fired before the iteration cap.
    """

    def __init__(self):
        self.records = []
        self.converged = False

    def append(self, **record):
        self.records.append({k: record[k] for k in TRACE_FIELDS})

    @property
    def iterations(self):
        return len(self.records)

    def field(self, name):
        return [rec[name] for rec in self.records]

    def canonical_records(self):
        """Records without wall-clock times (the bit-reproducible part)."""
        return [{k: v for k, v in rec.items() if k != "time"}
                for rec in self.records]

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")


def base_step_rule(k, previous, cfg):
    """Base step for iteration k: warm-started from the last accepted step.

    The default rule divides the previously accepted step by the
    backtracking factor and clamps to [iota_lo, iota_hi]; the first
    iteration (and the 'fixed' rule) uses iota_lo.
    """
    if k == 0 or previous is None or cfg.base_step_rule == "fixed":
        return cfg.iota_lo
    return min(max(previous / cfg.varrho, cfg.iota_lo), cfg.iota_hi)


def ja_j_step(X, Y, G_X, G_Y, fj_current, fj_value, prox_x, prox_y, c1,
              iota1_base, iota2_base, cfg):
    """Joint factor update with backtracking on the step scales.

    Candidates are prox-gradient points at scales (iota1, iota2) growing by
    varrho; the first pair whose composite value fj drops by at least
    (c1 / 2) times the squared displacement is accepted. ``fj_value`` must
    return (value, aux); the accepted trial's aux is passed through.
    Gradients are never re-evaluated during backtracking.
    """
    for l in range(cfg.max_backtracks):
        iota1 = iota1_base * cfg.varrho ** l
        iota2 = iota2_base * cfg.varrho ** l
        Xc = prox_x(X - G_X / iota1, iota1)
        Yc = prox_y(Y - G_Y / iota2, iota2)
        disp2 = float(np.sum((Xc - X) ** 2) + np.sum((Yc - Y) ** 2))
        fj_c, aux = fj_value(Xc, Yc)
        if fj_c <= fj_current - 0.5 * c1 * disp2:
            return Xc, Yc, iota1, iota2, l, fj_c, disp2, aux
    raise SolverError(
        f"factor update exceeded {cfg.max_backtracks} backtracks "
        "(non-finite data or a prox that does not decrease its objective?)"
    )


def ja_a_step(S, grad_S, fa_current, fa_value, prox_s, c2, iota_base, cfg):
    """Sparse-part update with backtracking; mirrors :func:`ja_j_step`."""
    for l in range(cfg.max_backtracks):
        iota = iota_base * cfg.varrho ** l
        Sc = prox_s(S - grad_S / iota, iota)
        disp2 = float(np.sum((Sc - S) ** 2))
        fa_c, aux = fa_value(Sc)
        if fa_c <= fa_current - 0.5 * c2 * disp2:
            return Sc, iota, l, fa_c, disp2, aux
    raise SolverError(
        f"sparse update exceeded {cfg.max_backtracks} backtracks "
        "(non-finite data or a prox that does not decrease its objective?)"
    )


def default_init(data, dims, constraints, seed=0):
    """Initial point: rank-d truncated SVD of the inverse-density-scaled data.

    The truncation uses a randomized range finder (Gaussian sketch with
    oversampling and two power iterations), the only SVD-type computation
    in the pipeline, performed once here. The singular values are split
    evenly: X0 = U_d diag(sigma_d)^(1/2), Y0 = V_d diag(sigma_d)^(1/2),
    columns then projected onto the tau-ball; S0 = 0.
    """
    if data.nnz < dims.d:
        raise ValueError("need at least d observed entries to initialize")
    zero_S = np.zeros(data.nnz)
    if not np.any(data.vals):
        return FactorState(np.zeros((dims.m, dims.d)),
                           np.zeros((dims.n, dims.d)), zero_S)
    scale = dims.m * dims.n / data.nnz
    A = data.spmat(scale * data.vals)
    rng = np.random.default_rng(seed)
    p = min(10, min(dims.m, dims.n) - dims.d)
    sketch = rng.standard_normal((dims.n, dims.d + p))
    Q = np.linalg.qr(A @ sketch)[0]
    for _ in range(2):
        Q = np.linalg.qr(A.T @ Q)[0]
        Q = np.linalg.qr(A @ Q)[0]
    B = Q.T @ A
    Ub, sig, Vt = np.linalg.svd(B, full_matrices=False)
    root = np.sqrt(sig[: dims.d])
    X0 = (Q @ Ub[:, : dims.d]) * root
    Y0 = Vt[: dims.d].T * root
    if np.isfinite(constraints.tau):
        for M in (X0, Y0):
            norms = np.linalg.norm(M, axis=0)
            shrink = np.minimum(1.0, np.divide(
                constraints.tau, norms, out=np.ones_like(norms), where=norms > 0))
            M *= shrink[None, :]
    return FactorState(X0, Y0, zero_S)


def _check_descent(prev, new, c_min, disp2, what):
    drop = prev - new
    need = 0.5 * c_min * disp2 - DESCENT_RTOL * max(1.0, abs(prev))
    if drop < need:
        raise SolverError(
            f"{what} objective failed the per-iteration decrease "
            f"(drop {drop:.3e} < required {need:.3e})"
        )


def _capped_group_value(V, weight, rho):
    if weight == 0 or rho is None:
        return 0.0
    return weight * float(np.sum(capped_theta(np.linalg.norm(V, axis=0) / rho)))


def _capped_entry_value(S, weight, rho):
    if weight == 0 or rho is None:
        return 0.0
    return weight * float(np.sum(capped_theta(np.abs(S) / rho)))


def solve_japg(data, dims, penalties, constraints, loss_kind, regularizer,
               cfg, init):
    """Plain joint-alternating prox-gradient solve with a fixed regularizer.

    Returns (final FactorState, RunTrace). The composite objective is
    non-increasing along iterations with per-step decrease at least
    (c_min / 2) times the squared iterate displacement; this is verified at
    runtime on every iteration.
    """
    lam, beta = penalties.lam, penalties.beta
    tau = constraints.tau
    lo = np.broadcast_to(np.asarray(constraints.s_lower, dtype=np.float64),
                         (data.nnz,))
    hi = np.broadcast_to(np.asarray(constraints.s_upper, dtype=np.float64),
                         (data.nnz,))

    if regularizer.kind == "exact_l0":
        def pen_xy(X, Y):
            return lam * (nnzc(X) + nnzc(Y))

        def pen_s(S):
            return beta * int(np.count_nonzero(S))

        def prox_x(Q, iota):
            return prox_group_l0_columns(Q, lam / iota, tau)

        prox_y = prox_x

        def prox_s(q, iota):
            return prox_scalar_l0_array(q, beta / iota, lo, hi)
    else:
        rho_r, rho_s = regularizer.rho_r, regularizer.rho_s
        if lam > 0 and not (rho_r and rho_r > 0):
            raise ValueError("relaxed regularizer needs rho_r > 0 when lam > 0")
        if beta > 0 and not (rho_s and rho_s > 0):
            raise ValueError("relaxed regularizer needs rho_s > 0 when beta > 0")

        def pen_xy(X, Y):
            return (_capped_group_value(X, lam, rho_r)
                    + _capped_group_value(Y, lam, rho_r))

        def pen_s(S):
            return _capped_entry_value(S, beta, rho_s)

        def prox_x(Q, iota):
            if lam == 0:
                return prox_group_columns(Q, 0.0, 1.0, tau, "constant_only")
            return prox_group_columns(Q, lam / iota, rho_r, tau, "both")

        prox_y = prox_x

        def prox_s(q, iota):
            if beta == 0:
                return np.clip(q, lo, hi)
            return prox_scalar_array(q, beta / iota, rho_s, lo, hi, "both")

    state = init.copy()
    state.check_feasible(constraints)
    trace = RunTrace()
    t_start = time.perf_counter()
    prev_steps = [None, None, None]
    obj_prev = None
    # Omega-values of X Y^T at the current factors, reused across the
    # iteration (the factor step returns the accepted trial's values).
    fit_cache = predicted_values(state.X, state.Y, data)

    for k in range(cfg.max_iters):
        X, Y, S = state.X, state.Y, state.S_vals
        res = SparseResidual(fit_cache + S - data.vals, data)
        gvals = grad_sparse(res, loss_kind)
        G_X, G_Y = grad_factors(SparseResidual(gvals, data), X, Y)
        floss = loss_value(res, loss_kind)
        fj_cur = floss + pen_xy(X, Y)
        obj_cur = fj_cur + pen_s(S)
        if not math.isfinite(obj_cur):
            raise SolverError(f"non-finite objective at iteration {k}")

        def fj_value(Xc, Yc):
            fit = predicted_values(Xc, Yc, data)
            rv = fit + S - data.vals
            return (loss_value(SparseResidual(rv, data), loss_kind)
                    + pen_xy(Xc, Yc), fit)

        base1 = base_step_rule(k, prev_steps[0], cfg)
        base2 = base_step_rule(k, prev_steps[1], cfg)
        X1, Y1, i1, i2, bt_xy, fj_new, disp_xy, fit_new = ja_j_step(
            X, Y, G_X, G_Y, fj_cur, fj_value, prox_x, prox_y,
            cfg.c_min, base1, base2, cfg)

        res_vals_xy = fit_new + S - data.vals
        grad_s = grad_sparse(SparseResidual(res_vals_xy, data), loss_kind)
        loss_xy = loss_value(SparseResidual(res_vals_xy, data), loss_kind)
        fa_cur = loss_xy + pen_s(S)

        def fa_value(Sc):
            rv = fit_new + Sc - data.vals
            return (loss_value(SparseResidual(rv, data), loss_kind)
                    + pen_s(Sc), rv)

        base3 = base_step_rule(k, prev_steps[2], cfg)
        S1, i3, bt_s, fa_new, disp_s, res_vals = ja_a_step(
            S, grad_s, fa_cur, fa_value, prox_s, cfg.c_min, base3, cfg)

        pen_xy_new = fj_new - loss_xy
        obj_new = fa_new + pen_xy_new
        _check_descent(obj_cur, obj_new, cfg.c_min, disp_xy + disp_s,
                       "composite")

        state = FactorState(X1, Y1, S1)
        state.check_feasible(constraints)
        fit_cache = fit_new
        prev_steps = [i1, i2, i3]
        trace.append(
            iter=k, objective=obj_new, objective_relaxed=(
                obj_new if regularizer.kind == "relaxed" else None),
            iota1=i1, iota2=i2, iota_s=i3,
            backtracks_xy=bt_xy, backtracks_s=bt_s,
            support_cols=int(np.count_nonzero(state.support_cols())),
            support_entries=int(np.count_nonzero(S1)),
            cols_x=_col_bits(state.col_support_x()),
            cols_y=_col_bits(state.col_support_y()),
            entries_crc=_entries_crc(S1 != 0),
            displacement=math.sqrt(disp_xy + disp_s),
            time=time.perf_counter() - t_start,
        )
        if obj_prev is not None and \
                abs(obj_prev - obj_new) <= cfg.rel_tol * max(1.0, abs(obj_new)):
            trace.converged = True
            break
        obj_prev = obj_new
    return state, trace


def solve_ajapg(data, dims, penalties, constraints, loss_kind, rel, cfg, init):
    """Adaptive solve of the capped relaxation with support pruning.

    Each iteration k: (1) columns outside the live set (nonzero in both X^k
    and Y^k) are zeroed before the factor step; (2) the capped penalty is
    fixed to its active branch per live column / entry at the current scales
    (r_k, s_k); (3) prox steps use the branch-fixed penalties with the
    ball/box constraints; (4) the scales follow their annealing schedules;
    (5) once k >= K_tilde only currently-nonzero entries of S are updated;
    the rest are guaranteed to stay zero, which is asserted, not assumed.

    Stops when the relative change of the exact objective falls to
    cfg.rel_tol, or at cfg.max_iters. Support monotonicity, feasibility and
    the per-iteration decrease of the capped objective (at the iteration's
    own scales, against the support-restricted previous iterate) are
    verified every iteration.
    """
    lam, beta = penalties.lam, penalties.beta
    tau = constraints.tau
    lo = np.broadcast_to(np.asarray(constraints.s_lower, dtype=np.float64),
                         (data.nnz,))
    hi = np.broadcast_to(np.asarray(constraints.s_upper, dtype=np.float64),
                         (data.nnz,))
    eta = min(1.0, rel.eta_tilde)

    state = init.copy()
    if state.X.shape != (dims.m, dims.d) or state.Y.shape != (dims.n, dims.d):
        raise ValueError("init factor shapes inconsistent with dims")
    state.check_feasible(constraints)
    trace = RunTrace()
    t_start = time.perf_counter()
    prev_steps = [None, None, None]
    obj_prev = None
    # Zeroing dead columns never changes X Y^T (a dead pair contributes an
    # exact zero), so the cached fit values stay valid across restriction.
    fit_cache = predicted_values(state.X, state.Y, data)

    for k in range(cfg.max_iters):
        r_k = rel.r_at(k) if lam > 0 else None
        s_k = rel.s_at(k) if beta > 0 else None

        # (1) Restrict the factor update to the live columns.
        supp_x = state.col_support_x()
        supp_y = state.col_support_y()
        live = (supp_x & supp_y) if lam > 0 else np.ones(dims.d, dtype=bool)
        X = state.X if live.all() else np.where(live[None, :], state.X, 0.0)
        Y = state.Y if live.all() else np.where(live[None, :], state.Y, 0.0)
        S = state.S_vals

        # (2) Branch tags at the current scales.
        branches = BranchIndex.at_scales(X, Y, S, r_k, s_k, lam, beta)
        tags1, tags2, tags_s = branches.I1, branches.I2, branches.J

        res = SparseResidual(fit_cache + S - data.vals, data)
        gvals = grad_sparse(res, loss_kind)
        G_X, G_Y = grad_factors(SparseResidual(gvals, data), X, Y)
        floss = loss_value(res, loss_kind)
        fj_cur = (floss + _capped_group_value(X, lam, r_k)
                  + _capped_group_value(Y, lam, r_k))
        frel_cur = fj_cur + _capped_entry_value(S, beta, s_k)
        if not math.isfinite(frel_cur):
            raise SolverError(f"non-finite objective at iteration {k}")

        def fj_value(Xc, Yc):
            fit = predicted_values(Xc, Yc, data)
            rv = fit + S - data.vals
            val = (loss_value(SparseResidual(rv, data), loss_kind)
                   + _capped_group_value(Xc, lam, r_k)
                   + _capped_group_value(Yc, lam, r_k))
            return val, fit

        def prox_x(Q, iota):
            if lam == 0:
                return prox_group_columns(Q, 0.0, 1.0, tau, "constant_only")
            return prox_group_columns(Q, lam / iota, r_k, tau, tags=tags1)

        def prox_y(Q, iota):
            if lam == 0:
                return prox_group_columns(Q, 0.0, 1.0, tau, "constant_only")
            return prox_group_columns(Q, lam / iota, r_k, tau, tags=tags2)

        base1 = base_step_rule(k, prev_steps[0], cfg)
        base2 = base_step_rule(k, prev_steps[1], cfg)
        X1, Y1, i1, i2, bt_xy, fj_new, disp_xy, fit_new = ja_j_step(
            X, Y, G_X, G_Y, fj_cur, fj_value, prox_x, prox_y,
            cfg.c_min, base1, base2, cfg)

        res_vals_xy = fit_new + S - data.vals
        grad_s = grad_sparse(SparseResidual(res_vals_xy, data), loss_kind)
        loss_xy = loss_value(SparseResidual(res_vals_xy, data), loss_kind)
        fa_cur = loss_xy + _capped_entry_value(S, beta, s_k)

        # (5) Past the entry-schedule freeze, update only the live entries;
        # off-support entries must satisfy the provable stay-zero bound.
        prune_entries = beta > 0 and k >= rel.K_tilde
        if prune_entries:
            upd = S != 0
            off = ~upd
            if np.any(np.abs(grad_s[off]) > beta * eta / s_k):
                raise SolverError(
                    "off-support entry gradient exceeds the stay-zero bound; "
                    "capped scale s violates its admissibility condition"
                )
        else:
            upd = slice(None)

        def fa_value(Sc):
            rv = fit_new + Sc - data.vals
            return (loss_value(SparseResidual(rv, data), loss_kind)
                    + _capped_entry_value(Sc, beta, s_k), rv)

        def prox_s_masked(q_full, iota):
            if beta == 0:
                return np.clip(q_full, lo, hi)
            out = S.copy() if prune_entries else None
            q = q_full[upd]
            vals = prox_scalar_array(q, beta / iota, s_k, lo[upd], hi[upd],
                                     tags=tags_s[upd])
            if prune_entries:
                out[upd] = vals
                return out
            return vals

        base3 = base_step_rule(k, prev_steps[2], cfg)
        S1, i3, bt_s, fa_new, disp_s, res_vals = ja_a_step(
            S, grad_s, fa_cur, fa_value, prox_s_masked, cfg.c_min, base3, cfg)

        # Capped objective at this iteration's scales, against the
        # support-restricted previous iterate (the subroutines' own
        # comparison point).
        frel_new = (fa_new + _capped_group_value(X1, lam, r_k)
                    + _capped_group_value(Y1, lam, r_k))
        _check_descent(frel_cur, frel_new, cfg.c_min, disp_xy + disp_s,
                       "capped")

        new_state = FactorState(X1, Y1, S1)
        new_state.check_feasible(constraints)

        # Support monotonicity (exact set inclusions, checked every step).
        if lam > 0:
            sx1, sy1 = new_state.col_support_x(), new_state.col_support_y()
            if np.any(sx1 & ~live) or np.any(sy1 & ~live):
                raise SolverError("a pruned factor column came back to life")
        if prune_entries and np.any((S1 != 0) & ~(S != 0)):
            raise SolverError("a pruned sparse entry came back to life")

        loss_new = loss_value(SparseResidual(res_vals, data), loss_kind)
        obj_new = (loss_new + lam * (nnzc(X1) + nnzc(Y1))
                   + beta * int(np.count_nonzero(S1)))

        state = new_state
        fit_cache = fit_new
        prev_steps = [i1, i2, i3]
        trace.append(
            iter=k, objective=obj_new, objective_relaxed=frel_new,
            iota1=i1, iota2=i2, iota_s=i3,
            backtracks_xy=bt_xy, backtracks_s=bt_s,
            support_cols=int(np.count_nonzero(state.support_cols())),
            support_entries=int(np.count_nonzero(S1)),
            cols_x=_col_bits(state.col_support_x()),
            cols_y=_col_bits(state.col_support_y()),
            entries_crc=_entries_crc(S1 != 0),
            displacement=math.sqrt(disp_xy + disp_s),
            time=time.perf_counter() - t_start,
        )
        if obj_prev is not None and \
                abs(obj_prev - obj_new) <= cfg.rel_tol * max(1.0, abs(obj_new)):
            trace.converged = True
            break
        obj_prev = obj_new
    return state, trace
