"""Per-pixel Gaussian-DP accounting for guided denoising.

Budgets are kept in squared-GDP units per unit of attack radius: a run that
must be ``r / sigma``-GDP for a change of size ``r`` in one pixel starts every
pixel at ``1 / sigma**2`` and each guided step subtracts its ``mu_t**2 / r**2``.

All functions accept a single image (``sigma_diag`` of shape ``(d,)``) or a
batch of independent runs (shape ``(n, d)``). Verdicts and scales are then
per row.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Sequence

import numpy as np

from .certify import phi_inv
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class BudgetVector:
    remaining: np.ndarray
    mu_total: float

    @classmethod
    def initial(cls, sigma: float, shape) -> "BudgetVector":
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        mu = 1.0 / sigma
        return cls(np.full(shape, mu * mu), mu)


@dataclass(frozen=True)
class SpendRecord:
    t: int
    scale_used: np.ndarray
    cost: np.ndarray
    remaining: np.ndarray


def step_constant(t: int, schedule: NoiseSchedule) -> float:
    """``alpha_bar_{t-1} (1 - alpha_t)^2 / (1 - alpha_bar_t)^2``."""
    a = schedule.alpha(t)
    ab = schedule.alpha_bar(t)
    return schedule.alpha_bar(t - 1) * (1.0 - a) ** 2 / (1.0 - ab) ** 2


def _row_scale(s, sigma_diag: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 0:
        return np.full(sigma_diag.shape[:-1] + (1,), float(s))
    return s[..., None]


def step_cost(s, t: int, schedule: NoiseSchedule, sigma_diag) -> np.ndarray:
    """Per-pixel squared-GDP cost of guiding step ``t`` at scale ``s``.

    Zero noise in a pixel makes any positive scale infinitely expensive; a
    zero scale always costs exactly 0.
    """
    sigma_diag = np.asarray(sigma_diag, dtype=np.float64)
    s = _row_scale(s, sigma_diag)
    num = np.broadcast_to(s * s * step_constant(t, schedule), sigma_diag.shape)
    var = sigma_diag * sigma_diag
    out = np.zeros(sigma_diag.shape)
    pos = num > 0
    with np.errstate(divide="ignore"):
        np.divide(num, var, out=out, where=pos & (var > 0))
    out[pos & (var == 0)] = np.inf
    return out


def privacy_filter(budget: BudgetVector, s, t: int, schedule: NoiseSchedule, sigma_diag):
    """One filter query. Returns ``(budget, ok)``.

    If any pixel of a row would end at or below zero the row keeps its old
    budget and its verdict is False.
    """
    cost = step_cost(s, t, schedule, sigma_diag)
    proposed = budget.remaining - cost
    ok = np.all(proposed > 0, axis=-1)
    new = np.where(ok[..., None], proposed, budget.remaining)
    if np.ndim(ok) == 0:
        ok = bool(ok)
    return BudgetVector(new, budget.mu_total), ok


def max_feasible_scale(budget: BudgetVector, t: int, schedule: NoiseSchedule,
                       sigma_diag, cap: float = 1.0):
    """Largest scale (at most ``cap``) whose cost fits in every pixel's budget.

    The returned scale never overdraws: its cost is ``<= remaining`` in every
    pixel, with equality (up to an ulp) in the tightest one.
    """
    sigma_diag = np.asarray(sigma_diag, dtype=np.float64)
    lam = np.maximum(budget.remaining, 0.0)
    c = step_constant(t, schedule)
    if c == 0.0:
        s = np.full(sigma_diag.shape[:-1], float(cap))
    else:
        s = np.min(sigma_diag * np.sqrt(lam / c), axis=-1)
        s = np.minimum(s, cap)
        # sqrt/divide rounding can overshoot by an ulp; step down until it fits
        for _ in range(8):
            over = np.any(step_cost(s, t, schedule, sigma_diag) > lam, axis=-1)
            if not np.any(over):
                break
            s = np.where(over, np.nextafter(s, 0.0), s)
        else:
            s = np.where(over, 0.0, s)
    if s.ndim == 0:
        return float(s)
    return s


def spend_guidance(budget: BudgetVector, s: float, t: int, schedule: NoiseSchedule,
                   sigma_diag, exhausted):
    """Filter query plus the spend-what-is-left fallback.

    Rows whose filter verdict is "no" are guided once at
    :func:`max_feasible_scale`, their tightest pixel is then zeroed and they
    are marked exhausted. Exhausted rows never spend again.

    Returns ``(budget, scale_used, exhausted, record)``.
    """
    sigma_diag = np.asarray(sigma_diag, dtype=np.float64)
    exhausted = np.asarray(exhausted, dtype=bool)
    if exhausted.all():
        scale = np.zeros(exhausted.shape)
        record = SpendRecord(t, scale, np.zeros(budget.remaining.shape), budget.remaining)
        return budget, scale, exhausted, record
    cost = step_cost(s, t, schedule, sigma_diag)
    proposed = budget.remaining - cost
    ok = np.all(proposed > 0, axis=-1) & ~exhausted
    no = ~ok & ~exhausted
    scale = np.where(ok, float(s), 0.0)
    cost = np.where(ok[..., None], cost, 0.0)
    remaining = np.where(ok[..., None], proposed, budget.remaining)
    if np.any(no):
        fallback = np.reshape(max_feasible_scale(budget, t, schedule, sigma_diag, cap=s),
                              scale.shape)
        scale = np.where(no, fallback, scale)
        fb_cost = step_cost(fallback, t, schedule, sigma_diag)
        left = np.maximum(budget.remaining - fb_cost, 0.0)
        # zero the binding pixel so no later step can pass the filter
        tight = np.argmin(sigma_diag**2 * budget.remaining, axis=-1)
        left_flat = left.reshape(-1, left.shape[-1])
        left_flat[np.arange(left_flat.shape[0]), np.ravel(tight)] = 0.0
        left = left_flat.reshape(left.shape)
        # the zeroed pixel is charged everything it had left
        fb_cost = np.maximum(fb_cost, budget.remaining - left)
        remaining = np.where(no[..., None], left, remaining)
        cost = np.where(no[..., None], fb_cost, cost)
        exhausted = exhausted | no
    record = SpendRecord(t, scale, cost, remaining)
    return BudgetVector(remaining, budget.mu_total), scale, exhausted, record


def effective_noise_std(s: float, t: int, schedule: NoiseSchedule, sigma_diag) -> np.ndarray:
    """Noise std of an equivalent unit-sensitivity Gaussian mechanism."""
    return np.asarray(sigma_diag, dtype=np.float64) / (s * math.sqrt(step_constant(t, schedule)))


def total_spent(records: Sequence[SpendRecord]) -> np.ndarray:
    return sum(r.cost for r in records)


def ars_fixed_radius(sigmas, p_plus_lb: float, p_minus_ub: float) -> float:
    """Certified radius of a composition of fixed-noise Gaussian steps."""
    for p in (p_plus_lb, p_minus_ub):
        if not 0.0 <= p <= 1.0:
            raise ValueError("probability bounds must lie in [0, 1]")
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if np.any(sigmas <= 0):
        raise ValueError("sigmas must be positive")
    if p_plus_lb == p_minus_ub:
        return 0.0
    return _quantile_gap(p_plus_lb, p_minus_ub) / (2.0 * math.sqrt(np.sum(1.0 / sigmas**2)))


def filter_radius(spent, p_plus_lb: float, p_minus_ub: float) -> float:
    """Radius certified by a filter ledger whose worst pixel spent ``max(spent)``."""
    worst = float(np.max(spent))
    if worst <= 0:
        return math.inf
    if p_plus_lb == p_minus_ub:
        return 0.0
    return _quantile_gap(p_plus_lb, p_minus_ub) / (2.0 * math.sqrt(worst))


def _quantile_gap(hi: float, lo: float) -> float:
    eps = 1e-12
    hi = min(max(hi, eps), 1.0 - eps)
    lo = min(max(lo, eps), 1.0 - eps)
    return phi_inv(hi) - phi_inv(lo)


def ledger_to_text(records: Sequence[SpendRecord]) -> str:
    lines = ["# t scale_used min_cost max_cost min_remaining"]
    for r in records:
        lines.append(
            f"{r.t} {float(np.max(r.scale_used)):.17g} {float(np.min(r.cost)):.17g} "
            f"{float(np.max(r.cost)):.17g} {float(np.min(r.remaining)):.17g}"
        )
    return "\n".join(lines) + "\n"
