"""DDPM noise schedules.

Timesteps are 1-indexed: ``alpha_bars[t - 1]`` is the signal-retention factor
at step ``t`` and step 0 is the clean image with ``alpha_bar = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable beta/alpha/alpha_bar ladder for ``T`` reverse steps."""

    betas: np.ndarray
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)
    posterior_vars: np.ndarray = field(repr=False)
    timestep_map: Optional[np.ndarray] = None

    @classmethod
    def from_alphas(cls, alphas, timestep_map=None) -> "NoiseSchedule":
        alphas = np.asarray(alphas, dtype=np.float64)
        if alphas.ndim != 1 or alphas.size == 0:
            raise ValueError("alphas must be a non-empty 1-D array")
        if np.any(alphas <= 0.0) or np.any(alphas >= 1.0):
            raise ValueError("every alpha must lie in (0, 1)")
        alpha_bars = np.empty_like(alphas)
        acc = 1.0
        for i, a in enumerate(alphas):
            acc = acc * a
            alpha_bars[i] = acc
        return cls._assemble(alphas, alpha_bars, timestep_map)

    @classmethod
    def _assemble(cls, alphas, alpha_bars, timestep_map) -> "NoiseSchedule":
        alphas = np.array(alphas, dtype=np.float64)
        alpha_bars = np.array(alpha_bars, dtype=np.float64)
        betas = 1.0 - alphas
        prev = np.concatenate([[1.0], alpha_bars[:-1]])
        posterior_vars = (1.0 - prev) / (1.0 - alpha_bars) * betas
        if timestep_map is not None:
            timestep_map = np.array(timestep_map, dtype=np.int64)
            timestep_map.setflags(write=False)
        for arr in (alphas, betas, alpha_bars, posterior_vars):
            arr.setflags(write=False)
        return cls(betas, alphas, alpha_bars, posterior_vars, timestep_map)

    @classmethod
    def from_betas(cls, betas, timestep_map=None) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("every beta must lie in (0, 1)")
        return cls.from_alphas(1.0 - betas, timestep_map)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def _check(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside 1..{self.T}")

    def alpha(self, t: int) -> float:
        self._check(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """``alpha_bar_t`` with ``alpha_bar_0 = 1``."""
        if t == 0:
            return 1.0
        self._check(t)
        return float(self.alpha_bars[t - 1])

    def posterior_var(self, t: int) -> float:
        self._check(t)
        return float(self.posterior_vars[t - 1])

    def step_coefficients(self, t: int) -> tuple[float, float]:
        """Mean coefficients ``(coef_x0, coef_xt)`` of the reverse step at ``t``."""
        a = self.alpha(t)
        ab = self.alpha_bar(t)
        ab_prev = self.alpha_bar(t - 1)
        coef_x0 = math.sqrt(ab_prev) * (1.0 - a) / (1.0 - ab)
        coef_xt = (1.0 - ab_prev) * math.sqrt(a) / (1.0 - ab)
        return coef_x0, coef_xt

    def noise_ratio(self, t: int) -> float:
        """Variance-to-signal ratio ``(1 - alpha_bar_t) / alpha_bar_t``."""
        ab = self.alpha_bar(t)
        return (1.0 - ab) / ab

    def to_text(self) -> str:
        lines = ["# t beta alpha alpha_bar posterior_var"]
        for t in range(1, self.T + 1):
            i = t - 1
            lines.append(
                f"{t} {self.betas[i]:.17g} {self.alphas[i]:.17g} "
                f"{self.alpha_bars[i]:.17g} {self.posterior_vars[i]:.17g}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NoiseSchedule":
        alphas = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"line {lineno}: expected 5 columns, got {len(parts)}")
            try:
                t = int(parts[0])
                alpha = float(parts[2])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            if t != len(alphas) + 1:
                raise ValueError(f"line {lineno}: expected t={len(alphas) + 1}, got {t}")
            alphas.append(alpha)
        if not alphas:
            raise ValueError("empty schedule table")
        return cls.from_alphas(alphas)


def build_linear_schedule(T: int = 1000, beta_start: float = 1e-4,
                          beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, T))


def respace(schedule: NoiseSchedule, selected: Sequence[int]) -> NoiseSchedule:
    """Keep only the ``selected`` (1-indexed, increasing) timesteps.

    Effective alphas are ratios of consecutive kept ``alpha_bar`` values so the
    kept ``alpha_bar`` values are preserved.
    """
    sel = np.asarray(selected, dtype=np.int64)
    if sel.ndim != 1 or sel.size == 0:
        raise ValueError("selected must be a non-empty list of timesteps")
    if np.any(np.diff(sel) <= 0):
        raise ValueError("selected timesteps must be strictly increasing")
    if sel[0] < 1 or sel[-1] > schedule.T:
        raise ValueError(f"selected timesteps must lie in 1..{schedule.T}")
    kept = schedule.alpha_bars[sel - 1]
    prev = np.concatenate([[1.0], kept[:-1]])
    base_map = schedule.timestep_map
    tmap = sel if base_map is None else base_map[sel - 1]
    # Kept alpha_bars are copied rather than re-multiplied so they match the
    # originals bit for bit.
    return NoiseSchedule._assemble(kept / prev, kept, tmap)


def evenly_spaced_timesteps(T: int, count: int) -> list[int]:
    """``count`` timesteps ending at ``T`` with stride ``T // count``.

    For ``T=1000, count=20`` this is 50, 100, ..., 1000 (the 0-indexed
    999, 949, ..., 49 ladder).
    """
    if not 1 <= count <= T:
        raise ValueError("count must lie in 1..T")
    stride = T // count
    return [T - k * stride for k in range(count)][::-1]


def match_timestep(schedule: NoiseSchedule, sigma: float) -> int:
    """Smallest ``t`` whose noise ratio is at least ``sigma**2``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    ratios = (1.0 - schedule.alpha_bars) / schedule.alpha_bars
    target = sigma * sigma
    if target > ratios[-1]:
        raise ValueError(
            f"noise exceeds schedule: sigma^2={target:g} > {ratios[-1]:g}")
    return int(np.searchsorted(ratios, target, side="left")) + 1


def matching_alpha_bar(sigma: float) -> float:
    """Exact ``alpha_bar`` with ``(1 - alpha_bar) / alpha_bar == sigma**2``."""
    return 1.0 / (1.0 + sigma * sigma)
