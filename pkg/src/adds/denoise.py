"""Clean-image predictors for the reverse diffusion.

Every denoiser maps a noisy state ``x_t`` (shape ``(..., d)``) at step ``t`` to
a prediction of the clean image plus a per-pixel noise std for the reverse
step. The Gaussian-mixture denoiser is the exact posterior mean when the data
really are drawn from that mixture, which lets the whole pipeline run without a
trained network.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Optional

import numpy as np

from .schedule import NoiseSchedule


class ParseError(ValueError):
    """Malformed text input; carries the offending 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class OracleError(RuntimeError):
    """Raised when the Monte-Carlo oracle cannot produce a usable estimate."""


@dataclass(frozen=True)
class DenoiserOutput:
    x0_hat: np.ndarray
    sigma_diag: np.ndarray


@dataclass(frozen=True)
class GmmModel:
    """Isotropic Gaussian mixture; one class label per component."""

    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        c = np.asarray(self.scales, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        K = w.size
        if not (m.shape[0] == c.size == y.size == K) or K == 0:
            raise ValueError("weights, means, scales and labels disagree on K")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(c <= 0):
            raise ValueError("scales must be positive")
        for name, arr in (("weights", w), ("means", m), ("scales", c), ("labels", y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return int(self.weights.size)

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def prior_mean(self) -> np.ndarray:
        return self.weights @ self.means

    def to_text(self) -> str:
        out = [f"gmm K={self.K} d={self.dim}", "weights"]
        out += [f"{w:.17g}" for w in self.weights]
        out.append("means")
        out += [" ".join(f"{v:.17g}" for v in row) for row in self.means]
        out.append("scales")
        out += [f"{c:.17g}" for c in self.scales]
        out.append("labels")
        out += [str(int(y)) for y in self.labels]
        return "\n".join(out) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GmmModel":
        lines = [(i, ln.strip()) for i, ln in enumerate(text.splitlines(), 1)]
        lines = [(i, ln) for i, ln in lines if ln and not ln.startswith("#")]
        if not lines:
            raise ParseError(1, "empty GMM model text")
        lineno, header = lines[0]
        try:
            fields = dict(tok.split("=") for tok in header.split()[1:])
            K, d = int(fields["K"]), int(fields["d"])
            if header.split()[0] != "gmm":
                raise ValueError
        except (ValueError, KeyError):
            raise ParseError(lineno, f"bad header {header!r}") from None
        blocks: dict[str, list[tuple[int, str]]] = {}
        current = None
        for lineno, ln in lines[1:]:
            if ln in ("weights", "means", "scales", "labels"):
                current = blocks.setdefault(ln, [])
            elif current is None:
                raise ParseError(lineno, f"data outside a block: {ln!r}")
            else:
                current.append((lineno, ln))
        for name in ("weights", "means", "scales", "labels"):
            if len(blocks.get(name, [])) != K:
                raise ParseError(lineno, f"block {name!r} needs {K} rows")

        def parse(name, conv, width):
            rows = []
            for ln_no, ln in blocks[name]:
                try:
                    vals = [conv(v) for v in ln.split()]
                except ValueError:
                    raise ParseError(ln_no, f"bad value in {name}: {ln!r}") from None
                if len(vals) != width:
                    raise ParseError(ln_no, f"{name} row needs {width} values")
                rows.append(vals)
            return rows

        try:
            return cls(
                weights=np.array(parse("weights", float, 1))[:, 0],
                means=np.array(parse("means", float, d)),
                scales=np.array(parse("scales", float, 1))[:, 0],
                labels=np.array(parse("labels", int, 1))[:, 0],
            )
        except ParseError:
            raise
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None


def gmm_posterior_mean(gmm: GmmModel, x_t, alpha_bar: float) -> np.ndarray:
    """``E[x0 | x_t]`` for ``x_t = sqrt(ab) x0 + sqrt(1 - ab) eps``, ``x0 ~ gmm``."""
    if not 0.0 < alpha_bar <= 1.0:
        raise ValueError("alpha_bar must lie in (0, 1]")
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != gmm.dim:
        raise ValueError(f"expected last dimension {gmm.dim}, got {x_t.shape[-1]}")
    if alpha_bar == 1.0:
        return x_t.copy()
    sab = math.sqrt(alpha_bar)
    c2 = gmm.scales ** 2
    var = alpha_bar * c2 + (1.0 - alpha_bar)           # (K,)
    centers = sab * gmm.means                           # (K, d)
    # squared distances via the expansion |x|^2 - 2 x.c + |c|^2
    sq = (np.sum(x_t * x_t, axis=-1, keepdims=True) - 2.0 * (x_t @ centers.T)
          + np.sum(centers * centers, axis=-1))
    np.maximum(sq, 0.0, out=sq)
    logr = (np.log(gmm.weights) - 0.5 * gmm.dim * np.log(var)) - 0.5 * sq / var
    logr -= logr.max(axis=-1, keepdims=True)
    r = np.exp(logr)
    r /= r.sum(axis=-1, keepdims=True)
    gain = sab * c2 / var                               # (K,)
    # sum_k r_k (mu_k + gain_k (x_t - sqrt(ab) mu_k))
    return r @ ((1.0 - sab * gain)[:, None] * gmm.means) + (r @ gain)[..., None] * x_t


def mc_posterior_mean_oracle(gmm: GmmModel, x_t, alpha_bar: float,
                             n_samples: int = 100_000, seed: int = 0):
    """Self-normalised importance estimate of ``E[x0 | x_t]``.

    Draws ``x0`` from the mixture prior and weights each draw by the forward
    likelihood. Returns ``(estimate, standard_error)`` per coordinate.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    if not 0.0 < alpha_bar <= 1.0:
        raise ValueError("alpha_bar must lie in (0, 1]")
    x_t = np.asarray(x_t, dtype=np.float64)
    if alpha_bar == 1.0:
        return x_t.copy(), np.zeros_like(x_t)
    rng = np.random.default_rng(seed)
    comp = rng.choice(gmm.K, size=n_samples, p=gmm.weights)
    x0 = gmm.means[comp] + gmm.scales[comp, None] * rng.standard_normal((n_samples, gmm.dim))
    resid = x_t - math.sqrt(alpha_bar) * x0
    logw = -0.5 * np.einsum("nd,nd->n", resid, resid) / (1.0 - alpha_bar)
    if not np.isfinite(logw.max()):
        raise OracleError("oracle ill-conditioned: all weights underflow")
    w = np.exp(logw - logw.max())
    w /= w.sum()
    ess = 1.0 / np.sum(w * w)
    if ess < 10.0:
        raise OracleError(f"oracle ill-conditioned: effective sample size {ess:.2f}")
    est = w @ x0
    se = np.sqrt(np.sum((w * w)[:, None] * (x0 - est) ** 2, axis=0))
    return est, se


class Denoiser:
    """Base predictor. Subclasses implement :meth:`predict_x0`.

    The per-pixel reverse-step std defaults to ``sqrt(posterior_var_t)`` in
    every coordinate; pass ``noise_std`` to override it with a constant.
    """

    dim: int

    def __init__(self, dim: int, noise_std: Optional[float] = None):
        self.dim = int(dim)
        self.noise_std = noise_std

    def predict_x0(self, x_t: np.ndarray, alpha_bar: float) -> np.ndarray:
        raise NotImplementedError

    def sigma_diag(self, x_t: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
        std = (math.sqrt(schedule.posterior_var(t)) if self.noise_std is None
               else float(self.noise_std))
        return np.full(x_t.shape, std)

    def predict(self, x_t, t: int, schedule: NoiseSchedule) -> DenoiserOutput:
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.shape[-1] != self.dim:
            raise ValueError(f"expected last dimension {self.dim}, got {x_t.shape[-1]}")
        x0 = self.predict_x0(x_t, schedule.alpha_bar(t))
        return DenoiserOutput(x0, self.sigma_diag(x_t, t, schedule))


class EpsDenoiser(Denoiser):
    """Denoiser whose native output is the noise estimate ``eps_hat``."""

    def predict_eps(self, x_t: np.ndarray, alpha_bar: float) -> np.ndarray:
        raise NotImplementedError

    def predict_x0(self, x_t, alpha_bar):
        return eps_to_x0(x_t, self.predict_eps(x_t, alpha_bar), alpha_bar)


class ZeroDenoiser(Denoiser):
    """Always predicts the all-zero image."""

    def predict_x0(self, x_t, alpha_bar):
        return np.zeros_like(x_t)


class GmmDenoiser(Denoiser):
    """Exact posterior-mean denoiser for data drawn from ``gmm``."""

    def __init__(self, gmm: GmmModel, noise_std: Optional[float] = None):
        super().__init__(gmm.dim, noise_std)
        self.gmm = gmm

    def predict_x0(self, x_t, alpha_bar):
        return gmm_posterior_mean(self.gmm, x_t, alpha_bar)


class GmmEpsDenoiser(EpsDenoiser):
    """The GMM posterior mean exposed through the noise-prediction interface."""

    def __init__(self, gmm: GmmModel, noise_std: Optional[float] = None):
        super().__init__(gmm.dim, noise_std)
        self.gmm = gmm

    def predict_eps(self, x_t, alpha_bar):
        if alpha_bar == 1.0:
            return np.zeros_like(x_t)
        return x0_to_eps(x_t, gmm_posterior_mean(self.gmm, x_t, alpha_bar), alpha_bar)


def eps_to_x0(x_t, eps_hat, alpha_bar: float) -> np.ndarray:
    return (np.asarray(x_t) - math.sqrt(1.0 - alpha_bar) * np.asarray(eps_hat)) / math.sqrt(alpha_bar)


def x0_to_eps(x_t, x0_hat, alpha_bar: float) -> np.ndarray:
    return (np.asarray(x_t) - math.sqrt(alpha_bar) * np.asarray(x0_hat)) / math.sqrt(1.0 - alpha_bar)
