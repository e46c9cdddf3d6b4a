"""Evaluation metrics for recovery and completion experiments."""

from dataclasses import dataclass

import numpy as np

from .loss import predicted_values
from .model import nnzc


@dataclass(frozen=True)
class EvalResult:
    """Metrics of one solved trial (nmae is None without a test mask)."""

    rse: float
    nmae: float
    recovered_rank: int
    recovered_sparsity: int
    runtime_seconds: float


def rse(factors, Z_true, block_rows=2048):
    """Relative recovery error ||X Y^T - Z_true||_F / ||Z_true||_F.

    ``factors`` is the pair (X, Y); the product is evaluated in row blocks so
    no second m x n matrix is materialized on large problems.
    """
    X, Y = factors
    Z_true = np.asarray(Z_true, dtype=np.float64)
    if X.shape[0] != Z_true.shape[0] or Y.shape[0] != Z_true.shape[1]:
        raise ValueError("factor shapes inconsistent with the reference matrix")
    denom = float(np.linalg.norm(Z_true))
    if denom == 0.0:
        raise ValueError("reference matrix is zero; RSE undefined")
    err2 = 0.0
    for lo in range(0, X.shape[0], block_rows):
        hi = min(lo + block_rows, X.shape[0])
        diff = X[lo:hi] @ Y.T - Z_true[lo:hi]
        err2 += float(np.sum(diff * diff))
    return float(np.sqrt(err2)) / denom


def nmae(predictions, test, rating_min, rating_max):
    """Normalized mean absolute error on held-out ratings.

    Predictions are clamped to the rating range before scoring, so the
    result lies in [0, 1]: mean |pred - actual| / (rating_max - rating_min),
    averaged per entry.
    """
    if rating_max <= rating_min:
        raise ValueError("rating_max must exceed rating_min")
    if test.nnz == 0:
        raise ValueError("empty test mask")
    pred = np.clip(np.asarray(predictions, dtype=np.float64),
                   rating_min, rating_max)
    if pred.shape != (test.nnz,):
        raise ValueError("predictions must align with the test entries")
    return float(np.mean(np.abs(pred - test.vals))) / (rating_max - rating_min)


def predict_on(factors, mask):
    """Entries of X Y^T on the given observed set (helper for nmae)."""
    X, Y = factors
    return predicted_values(X, Y, mask)


def evaluate(state, runtime_seconds, Z_true=None, test=None,
             rating_min=None, rating_max=None):
    """Bundle the standard metrics for one solved state."""
    rse_val = rse((state.X, state.Y), Z_true) if Z_true is not None else None
    nmae_val = None
    if test is not None:
        nmae_val = nmae(predict_on((state.X, state.Y), test), test,
                        rating_min, rating_max)
    return EvalResult(
        rse=rse_val,
        nmae=nmae_val,
        recovered_rank=nnzc(state.X),
        recovered_sparsity=int(np.count_nonzero(state.S_vals)),
        runtime_seconds=runtime_seconds,
    )
