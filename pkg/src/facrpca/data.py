"""Synthetic instance generation and rating-dataset ingestion.

Randomness everywhere runs through ``numpy.random.default_rng`` (PCG64) with
an explicit seed, and each generator documents its draw order, so identical
(spec, seed) pairs reproduce identical outputs byte for byte across
platforms. Loaders accept gzip-compressed files transparently (by ``.gz``
suffix) and never download anything.
"""

import gzip
import warnings
from dataclasses import dataclass, field

import numpy as np

from .loss import ObservedMatrix


@dataclass(frozen=True)
class SyntheticSpec:
    """Square low-rank + sparse + noise instance description.

    The ground truth is Z = P Q^T with n x true_rank standard-Gaussian
    factors, corrupted on a uniformly random support by values drawn
    uniformly from [-5, 5], plus dense Gaussian noise scaled by
    noise_factor. A fraction sampling_ratio of all entries is observed.
    """

    n: int
    true_rank: int
    corruption_fraction: float = 0.0
    noise_factor: float = 0.0
    sampling_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or not 1 <= self.true_rank <= self.n:
            raise ValueError("need 1 <= true_rank <= n")
        if not 0 <= self.corruption_fraction <= 1:
            raise ValueError("corruption_fraction must lie in [0, 1]")
        if not 0 < self.sampling_ratio <= 1:
            raise ValueError("sampling_ratio must lie in (0, 1]")
        if self.noise_factor < 0:
            raise ValueError("noise_factor must be nonnegative")


@dataclass(frozen=True)
class GroundTruth:
    """Components of a synthetic instance: M_input = Z_low + S_corrupt + R_noise."""

    Z_low: np.ndarray = field(repr=False)
    S_corrupt: np.ndarray = field(repr=False)
    R_noise: np.ndarray = field(repr=False)
    M_input: np.ndarray = field(repr=False)


def generate_synthetic(spec):
    """Generate a seeded instance; returns (GroundTruth, ObservedMatrix).

    Draw order (fixed for reproducibility): P, Q, corruption support,
    corruption values, noise, observation mask.
    """
    rng = np.random.default_rng(spec.seed)
    n, r = spec.n, spec.true_rank
    P = rng.standard_normal((n, r))
    Q = rng.standard_normal((n, r))
    Z = P @ Q.T
    S = np.zeros((n, n))
    n_corrupt = round(spec.corruption_fraction * n * n)
    if n_corrupt:
        support = rng.choice(n * n, size=n_corrupt, replace=False)
        S.flat[support] = rng.uniform(-5.0, 5.0, size=n_corrupt)
    if spec.noise_factor > 0:
        R = spec.noise_factor * rng.standard_normal((n, n))
    else:
        R = np.zeros((n, n))
    M = Z + S + R
    if spec.sampling_ratio == 1.0:
        rows, cols = np.indices((n, n))
        rows, cols = rows.ravel(), cols.ravel()
    else:
        k = round(spec.sampling_ratio * n * n)
        flat = np.sort(rng.choice(n * n, size=max(k, 1), replace=False))
        rows, cols = np.divmod(flat, n)
    observed = ObservedMatrix(n, n, rows, cols, M[rows, cols])
    return GroundTruth(Z, S, R, M), observed


@dataclass(frozen=True)
class RatingData:
    """Observed ratings plus the scale metadata used for bounds and NMAE."""

    matrix: ObservedMatrix
    rating_min: float
    rating_max: float


def _open_text(path):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8", errors="replace")
    return open(path, "r", encoding="utf-8", errors="replace")


def load_movielens(path, format="tab_100k"):
    """Parse a MovieLens ratings file into a dense-indexed ObservedMatrix.

    ``tab_100k`` expects tab-separated "user item rating timestamp" lines;
    ``colon_1m`` expects "::"-separated ones. User and item ids are
    reindexed densely in sorted-id order. Duplicate (user, item) pairs keep
    the last occurrence with a warning; malformed lines are an error naming
    the line number. Ratings use the 1..5 star scale.
    """
    if format == "tab_100k":
        sep = "\t"
    elif format == "colon_1m":
        sep = "::"
    else:
        raise ValueError(f"unknown MovieLens format {format!r}")
    users, items, ratings = [], [], []
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) < 3:
                raise ValueError(f"line {lineno}: expected 'user{sep}item{sep}"
                                 f"rating[{sep}timestamp]', got {line!r}")
            try:
                users.append(int(parts[0]))
                items.append(int(parts[1]))
                ratings.append(float(parts[2]))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
    if not users:
        raise ValueError("no observations in rating file")
    u_ids, u_idx = np.unique(np.asarray(users), return_inverse=True)
    i_ids, i_idx = np.unique(np.asarray(items), return_inverse=True)
    vals = np.asarray(ratings, dtype=np.float64)
    # Keep the last occurrence of any duplicated (user, item) pair.
    key = u_idx.astype(np.int64) * len(i_ids) + i_idx
    order = np.arange(key.size)
    last = {}
    for k, pos in zip(key, order):
        last[k] = pos
    if len(last) < key.size:
        warnings.warn(f"{key.size - len(last)} duplicate (user, item) pairs; "
                      "keeping the last rating of each")
        keep = np.sort(np.fromiter(last.values(), dtype=np.int64))
        u_idx, i_idx, vals = u_idx[keep], i_idx[keep], vals[keep]
    matrix = ObservedMatrix(len(u_ids), len(i_ids), u_idx, i_idx, vals)
    return RatingData(matrix, rating_min=1.0, rating_max=5.0)


def load_jester(path, n_users=None):
    """Parse a Jester joke-ratings CSV into an ObservedMatrix.

    One row per user with 100 rating columns (a leading rating-count column
    is accepted and dropped). Ratings lie in [-10, 10]; the value 99 marks a
    missing rating. Users with no ratings at all are dropped with a warning.
    ``n_users`` keeps only the first that many (remaining) rows, the
    documented subsampling rule for the sized benchmark variants.
    """
    rows, cols, vals = [], [], []
    kept = 0
    dropped = 0
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip().strip(",")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) == 101:
                parts = parts[1:]
            if len(parts) != 100:
                raise ValueError(f"line {lineno}: expected 100 rating columns "
                                 f"(optionally preceded by a count), got {len(parts)}")
            try:
                row = np.array([float(p) for p in parts])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            present = row != 99.0
            bad = present & ((row < -10.0) | (row > 10.0))
            if bad.any():
                j = int(np.flatnonzero(bad)[0])
                raise ValueError(f"line {lineno}: rating {row[j]} outside "
                                 "[-10, 10] and not the missing sentinel 99")
            if not present.any():
                dropped += 1
                continue
            if n_users is not None and kept >= n_users:
                break
            idx = np.flatnonzero(present)
            rows.extend([kept] * idx.size)
            cols.extend(idx.tolist())
            vals.extend(row[idx].tolist())
            kept += 1
    if dropped:
        warnings.warn(f"dropped {dropped} users with no ratings")
    if kept == 0:
        raise ValueError("no observations in rating file")
    matrix = ObservedMatrix(kept, 100, rows, cols, vals)
    return RatingData(matrix, rating_min=-10.0, rating_max=10.0)


def sample_mask(full, sr, scheme="uniform", seed=0):
    """Split the observed entries of ``full`` into disjoint train/test sets.

    ``uniform`` keeps exactly round(sr * nnz) entries chosen uniformly.
    ``nonuniform`` includes each entry independently with probability
    proportional to (row count) x (column count) popularity weights, capped
    at one and renormalized so the expected train size is sr * nnz.
    Deterministic for a fixed seed; raises if either side comes out empty.
    """
    if not 0 < sr < 1:
        raise ValueError("sr must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    nnz = full.nnz
    if scheme == "uniform":
        k = round(sr * nnz)
        perm = rng.permutation(nnz)
        sel = np.zeros(nnz, dtype=bool)
        sel[perm[:k]] = True
    elif scheme == "nonuniform":
        p = np.bincount(full.rows, minlength=full.m).astype(np.float64)
        q = np.bincount(full.cols, minlength=full.n).astype(np.float64)
        w = p[full.rows] * q[full.cols]
        target = sr * nnz
        c_lo, c_hi = 0.0, target / w.sum()
        while np.minimum(1.0, c_hi * w).sum() < target:
            c_hi *= 2.0
        for _ in range(100):
            c = 0.5 * (c_lo + c_hi)
            if np.minimum(1.0, c * w).sum() < target:
                c_lo = c
            else:
                c_hi = c
        pi = np.minimum(1.0, c_hi * w)
        sel = rng.random(nnz) < pi
    else:
        raise ValueError(f"unknown sampling scheme {scheme!r}")
    if not sel.any() or sel.all():
        raise ValueError("sampling ratio yields an empty train or test set")
    train = ObservedMatrix(full.m, full.n, full.rows[sel], full.cols[sel],
                           full.vals[sel])
    test = ObservedMatrix(full.m, full.n, full.rows[~sel], full.cols[~sel],
                          full.vals[~sel])
    return train, test
