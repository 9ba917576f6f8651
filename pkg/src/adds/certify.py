"""Smoothed prediction and L2 certification.

The sampling pipeline is abstracted as ``draw(n, rng) -> labels``: one class
label per smoothing sample, already reduced over any vote branches.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
import math
import time
from typing import Callable

import numpy as np
from scipy.special import betainc, erfc
from scipy.stats import binomtest

ABSTAIN = -1

LabelSampler = Callable[[int, np.random.Generator], np.ndarray]

# Acklam's rational approximation to the normal quantile (rel. error ~1e-9),
# polished below with one Halley step.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _acklam_lower(q: np.ndarray) -> np.ndarray:
    # valid for 0 < q <= 0.5; returns a value <= 0
    out = np.empty_like(q)
    tail = q < _P_LOW
    if np.any(tail):
        r = np.sqrt(-2.0 * np.log(q[tail]))
        out[tail] = ((((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5])
                     / ((((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0))
    mid = ~tail
    if np.any(mid):
        u = q[mid] - 0.5
        r = u * u
        out[mid] = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * u
                    / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    return out


def phi_inv(p):
    """Standard normal quantile for ``0 < p < 1`` (scalar or array)."""
    arr = np.asarray(p, dtype=np.float64)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise ValueError("phi_inv needs 0 < p < 1")
    upper = arr > 0.5
    q = np.where(upper, 1.0 - arr, arr)  # exact for p >= 0.5
    x = _acklam_lower(np.atleast_1d(q)).reshape(q.shape)
    for _ in range(2):
        e = 0.5 * erfc(-x / math.sqrt(2.0)) - q
        u = e * math.sqrt(2.0 * math.pi) * np.exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    x = np.where(q == 0.5, 0.0, x)
    x = np.where(upper, -x, x)
    if x.ndim == 0:
        return float(x)
    return x


def clopper_pearson_lower(k: int, n: int, alpha: float) -> float:
    """Exact one-sided ``1 - alpha`` lower confidence bound on a binomial rate."""
    if n < 1 or not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n and n >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if k == 0:
        return 0.0
    # P[Bin(n, p) >= k] = I_p(k, n - k + 1), increasing in p
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if betainc(k, n - k + 1, mid) > alpha:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def radius(sigma: float, p_plus_lb: float, p_minus_ub: float) -> float:
    eps = 1e-12
    hi = min(max(p_plus_lb, eps), 1.0 - eps)
    lo = min(max(p_minus_ub, eps), 1.0 - eps)
    return max(0.0, 0.5 * sigma * (phi_inv(hi) - phi_inv(lo)))


def majority_vote(labels) -> int:
    """Most frequent label; ties go to the smallest label."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size == 0:
        raise ValueError("cannot vote over an empty list")
    if labels.min() < 0:
        raise ValueError("labels must be non-negative class indices")
    return int(np.argmax(np.bincount(labels)))


def majority_vote_rows(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Row-wise :func:`majority_vote` for an ``(n, k)`` label matrix."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[1] == 1:
        return labels[:, 0].copy()
    counts = np.zeros((labels.shape[0], num_classes), dtype=np.int64)
    np.add.at(counts, (np.arange(labels.shape[0])[:, None], labels), 1)
    return counts.argmax(axis=1)


def _counts(draw: LabelSampler, n: int, rng, num_classes: int) -> np.ndarray:
    labels = np.asarray(draw(n, rng), dtype=np.int64)
    return np.bincount(labels, minlength=num_classes)


def _top_two(counts: np.ndarray) -> tuple[int, int, int]:
    order = np.argsort(-counts, kind="stable")
    top = int(order[0])
    second = int(counts[order[1]]) if counts.size > 1 else 0
    return top, int(counts[top]), second


def predict_from_counts(counts: np.ndarray, alpha: float) -> int:
    top, n_top, n_second = _top_two(counts)
    if binomtest(n_top, n_top + n_second, 0.5).pvalue <= alpha:
        return top
    return ABSTAIN


def smoothed_predict(draw: LabelSampler, n0: int, alpha: float, rng,
                     num_classes: int) -> int:
    """Monte-Carlo smoothed prediction with a two-sided binomial abstain test."""
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    return predict_from_counts(_counts(draw, n0, rng, num_classes), alpha)


@dataclass
class CertificationResult:
    prediction: int        # certified label or ABSTAIN
    top_label: int         # phase-1 guess, reported even when abstaining
    true_label: int
    p_plus_lb: float
    p_minus_ub: float
    radius: float
    n0: int
    n: int
    alpha: float
    wall_time_ms: float

    @property
    def abstained(self) -> bool:
        return self.prediction == ABSTAIN

    @property
    def correct(self) -> bool:
        return self.top_label == self.true_label

    def as_dict(self) -> dict:
        out = asdict(self)
        out.update(abstained=self.abstained, correct=self.correct)
        return out


def certify(draw: LabelSampler, sigma: float, true_label: int, n0: int, n: int,
            alpha: float, rng, num_classes: int) -> CertificationResult:
    """Two-phase certification: guess the top class on ``n0`` samples, bound
    its probability on ``n`` fresh samples."""
    if not n >= n0 >= 1:
        raise ValueError("need n >= n0 >= 1")
    start = time.perf_counter()
    guess = int(np.argmax(_counts(draw, n0, rng, num_classes)))
    hits = int(_counts(draw, n, rng, num_classes)[guess])
    p_lb = clopper_pearson_lower(hits, n, alpha)
    p_ub = 1.0 - p_lb
    if p_lb <= 0.5:
        pred, r = ABSTAIN, 0.0
    else:
        pred, r = guess, radius(sigma, p_lb, p_ub)
    elapsed = 1000.0 * (time.perf_counter() - start)
    return CertificationResult(pred, guess, int(true_label), p_lb, p_ub, r,
                               n0, n, alpha, elapsed)
