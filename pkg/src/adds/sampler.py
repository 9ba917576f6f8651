"""Reverse diffusion with clean-image guidance, plus the smoothing baselines.

Arrays are batched over rows: a state has shape ``(n, d)``. Pipelines return
``(n, k, d)``, one slice per vote branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Optional

import numpy as np

from .denoise import Denoiser
from .privacy import BudgetVector, SpendRecord, spend_guidance
from .schedule import (NoiseSchedule, evenly_spaced_timesteps, match_timestep,
                       respace)

METHODS = ("rs", "dds", "densepure", "adds", "adds_oneshot")
VOTING_METHODS = ("densepure", "adds")


@dataclass(frozen=True)
class PipelineConfig:
    method: str
    sigma: float
    guidance_scale: float = 0.0
    votes: int = 1
    respaced_steps: int = 20
    noising_convention: str = "sigma_direct"
    independent_votes: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0.0 <= self.guidance_scale <= 1.0:
            raise ValueError("guidance_scale must lie in [0, 1]")
        if self.votes < 1:
            raise ValueError("votes must be >= 1")
        if self.votes > 1 and self.method not in VOTING_METHODS and not (
                self.method == "adds_oneshot" and self.independent_votes):
            # the other pipelines would return identical copies
            raise ValueError(f"votes > 1 needs one of {VOTING_METHODS} "
                             "(or adds_oneshot with independent_votes)")
        if self.respaced_steps < 1:
            raise ValueError("respaced_steps must be >= 1")
        if self.noising_convention not in ("sigma_direct", "exact_match"):
            raise ValueError("noising_convention must be sigma_direct or exact_match")

    @property
    def label(self) -> str:
        names = {"rs": "RS", "dds": "DDS (one-shot)", "densepure": "DensePure",
                 "adds": "ADDS", "adds_oneshot": "ADDS (w/o unguided denoising)"}
        name = names[self.method]
        return f"{name} w/ {self.votes} votes" if self.votes > 1 else name


@dataclass
class Trajectory:
    states: list = field(default_factory=list)     # (t, x_t) pairs, t decreasing to 0
    ledger: list = field(default_factory=list)     # SpendRecord per step
    t_exhausted: Optional[np.ndarray] = None        # per row, -1 if never

    def to_text(self) -> str:
        spent = {r.t: r.cost for r in self.ledger}
        lines = ["# t min_pixel max_pixel spent_budget"]
        for t, x in self.states:
            s = float(np.max(spent[t])) if t in spent else 0.0
            lines.append(f"{t} {float(np.min(x)):.17g} {float(np.max(x)):.17g} {s:.17g}")
        return "\n".join(lines) + "\n"


def _step_noise(sigma_diag, rng, shape):
    return np.asarray(sigma_diag) * rng.standard_normal(shape)


def ddpm_step(x_t, x0_hat, t: int, schedule: NoiseSchedule, sigma_diag, rng):
    """Reverse step written in terms of the clean-image prediction."""
    coef_x0, coef_xt = schedule.step_coefficients(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    return coef_x0 * np.asarray(x0_hat) + coef_xt * x_t + _step_noise(sigma_diag, rng, x_t.shape)


def ddpm_step_eps(x_t, eps_hat, t: int, schedule: NoiseSchedule, sigma_diag, rng):
    """The same reverse step written in terms of the noise prediction."""
    a = schedule.alpha(t)
    ab = schedule.alpha_bar(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    mean = (x_t - (1.0 - a) / math.sqrt(1.0 - ab) * np.asarray(eps_hat)) / math.sqrt(a)
    return mean + _step_noise(sigma_diag, rng, x_t.shape)


def apply_guidance(x0_hat, x, s):
    """Convex combination ``(1 - s) x0_hat + s x``; ``s`` may be per row."""
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != x0_hat.shape[-1]:
        raise ValueError("clean input and prediction differ in dimension")
    s = np.asarray(s, dtype=np.float64)
    if s.ndim:
        s = s[..., None]
    return (1.0 - s) * x0_hat + s * x


def guided_mean(x_t, x0_hat, x, s, t: int, schedule: NoiseSchedule):
    """Noise-free part of a guided step, as a function of the clean input."""
    coef_x0, coef_xt = schedule.step_coefficients(t)
    return coef_x0 * apply_guidance(x0_hat, x, s) + coef_xt * np.asarray(x_t)


def one_shot_x0(x_t, t: int, denoiser: Denoiser, schedule: NoiseSchedule):
    return denoiser.predict(x_t, t, schedule).x0_hat


def reverse_loop(x_t, t_start: int, denoiser: Denoiser, schedule: NoiseSchedule, rng):
    """Plain unguided sampling from step ``t_start`` down to 0."""
    x = np.asarray(x_t, dtype=np.float64)
    for t in range(t_start, 0, -1):
        out = denoiser.predict(x, t, schedule)
        x = ddpm_step(x, out.x0_hat, t, schedule, out.sigma_diag, rng)
    return x


def _guided_run(x, scale: float, sigma: float, denoiser: Denoiser,
                schedule: NoiseSchedule, rng, *, votes: int = 1,
                oneshot: bool = False, record: bool = False):
    """Guided sampling for rows of clean inputs ``x`` of shape ``(n, d)``.

    With ``votes > 1`` the ``k`` branches of one row share every noise draw
    up to the exhaustion state and draw independently afterwards. Returns
    ``(x0, trajectory)`` with ``x0`` of shape ``(n, votes, d)``.
    """
    n, d = x.shape
    rows = n * votes
    x_rows = np.repeat(x, votes, axis=0) if votes > 1 else x

    def shared():
        z = rng.standard_normal((n, d))
        return np.repeat(z, votes, axis=0) if votes > 1 else z

    x_t = shared()
    T = schedule.T
    budget = BudgetVector.initial(sigma, (rows, d))
    exhausted = np.zeros(rows, dtype=bool)
    forked = np.zeros(rows, dtype=bool)
    done = np.zeros(rows, dtype=bool)
    result = np.empty((rows, d))
    t_exh = np.full(rows, -1, dtype=np.int64)
    traj = Trajectory(states=[(T, x_t.copy())] if record else [])

    for t in range(T, 0, -1):
        out = denoiser.predict(x_t, t, schedule)
        budget, used, now_exhausted, rec = spend_guidance(
            budget, scale, t, schedule, out.sigma_diag, exhausted)
        newly = now_exhausted & ~exhausted
        # exhaustion state is x_t when nothing was spent at t, else x_{t-1}
        forked |= exhausted | (newly & (used == 0.0))
        t_exh[newly & (used == 0.0)] = t
        t_exh[newly & (used > 0.0)] = t - 1
        exhausted = now_exhausted
        if record:
            traj.ledger.append(rec)
        if oneshot:
            stop = forked & ~done
            result[stop] = out.x0_hat[stop]
            done |= stop
            if np.all(done):
                break
        x0_hat = apply_guidance(out.x0_hat, x_rows, used)
        coef_x0, coef_xt = schedule.step_coefficients(t)
        mean = coef_x0 * x0_hat + coef_xt * x_t
        if votes > 1 and not np.all(forked):
            z = shared()
            if np.any(forked):
                z = np.where(forked[:, None], rng.standard_normal((rows, d)), z)
        else:
            z = rng.standard_normal((rows, d))
        x_new = mean + out.sigma_diag * z
        x_t = np.where(done[:, None], x_t, x_new)
        if record:
            traj.states.append((t - 1, x_t.copy()))
    result[~done] = x_t[~done]
    if record and oneshot and traj.states and traj.states[-1][0] != 0:
        traj.states.append((0, result.copy()))
    traj.t_exhausted = t_exh
    return result.reshape(n, votes, d), traj


def guided_denoise(x, config: PipelineConfig, denoiser: Denoiser,
                   schedule: NoiseSchedule, rng, record: bool = True):
    """Clean-image guided denoising over ``schedule`` (already respaced).

    ``x`` is one image ``(d,)`` or a batch ``(n, d)``; the output has the same
    shape. The clean input is only ever read by :func:`apply_guidance`.
    """
    if config.method not in ("adds", "adds_oneshot"):
        raise ValueError("guided_denoise needs method adds or adds_oneshot")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out, traj = _guided_run(np.atleast_2d(x), config.guidance_scale, config.sigma,
                            denoiser, schedule, rng,
                            oneshot=config.method == "adds_oneshot", record=record)
    out = out[:, 0, :]
    return (out[0] if single else out), traj


def respaced_grid(schedule: NoiseSchedule, steps: int) -> NoiseSchedule:
    return respace(schedule, evenly_spaced_timesteps(schedule.T, steps))


def dds_embed(x, config: PipelineConfig, schedule: NoiseSchedule, rng):
    """Noise ``x`` for smoothing and place it on the diffusion trajectory.

    Returns ``(x_tstar, t_star)``.
    """
    t_star = match_timestep(schedule, config.sigma)
    ab = schedule.alpha_bar(t_star)
    if config.noising_convention == "sigma_direct":
        noise_std = config.sigma
    else:
        noise_std = math.sqrt((1.0 - ab) / ab)
    x_rs = x + noise_std * rng.standard_normal(x.shape)
    return math.sqrt(ab) * x_rs, t_star


def sample_pipeline(x, config: PipelineConfig, denoiser: Denoiser,
                    schedule: NoiseSchedule, rng, n: int = 1) -> np.ndarray:
    """Draw classifier inputs for ``n`` smoothing samples.

    ``schedule`` is the full (un-respaced) schedule; ``x`` is one clean image
    shared by all ``n`` samples or an ``(n, d)`` batch. Returns
    ``(n, votes, d)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = np.broadcast_to(x, (n, x.size))
    elif x.shape[0] != n:
        raise ValueError("batched x must have n rows")
    k = config.votes
    m = config.method
    if m == "rs":
        return (x + config.sigma * rng.standard_normal(x.shape))[:, None, :]
    if m == "dds":
        x_ts, t_star = dds_embed(x, config, schedule, rng)
        return one_shot_x0(x_ts, t_star, denoiser, schedule)[:, None, :]
    if m == "densepure":
        x_ts, t_star = dds_embed(x, config, schedule, rng)
        grid = evenly_spaced_timesteps(schedule.T, config.respaced_steps)
        hops = respace(schedule, [u for u in grid if u < t_star] + [t_star])
        start = np.repeat(x_ts, k, axis=0) if k > 1 else x_ts
        out = reverse_loop(start, hops.T, denoiser, hops, rng)
        return out.reshape(n, k, -1)
    # adds / adds_oneshot
    grid = respaced_grid(schedule, config.respaced_steps)
    oneshot = m == "adds_oneshot"
    if config.independent_votes and k > 1:
        out, _ = _guided_run(np.repeat(x, k, axis=0), config.guidance_scale, config.sigma,
                             denoiser, grid, rng, oneshot=oneshot)
        return out.reshape(n, k, -1)
    out, _ = _guided_run(np.ascontiguousarray(x), config.guidance_scale, config.sigma,
                         denoiser, grid, rng, votes=k, oneshot=oneshot)
    return out
