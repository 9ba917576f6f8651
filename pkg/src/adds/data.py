"""Synthetic Gaussian-mixture classification tasks."""

from __future__ import annotations

from dataclasses import dataclass
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .denoise import GmmModel, ParseError

__all__ = ["Dataset", "ParseError", "make_gmm_task", "bayes_classify",
           "sample_dataset", "save", "load", "load_gmm", "save_gmm"]


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray
    labels: np.ndarray
    generator_spec: Optional[GmmModel] = None
    seed: Optional[int] = None

    def __len__(self) -> int:
        return int(self.labels.size)


def make_gmm_task(num_classes: int, dim: int, separation: float, scale: float,
                  seed: int = 0) -> GmmModel:
    """Equal-weight mixture with one isotropic component per class.

    Means sit on a sphere of radius ``separation``: at ``+-separation`` in 1-D,
    evenly spaced (randomly rotated) on a circle in 2-D, and in random
    directions otherwise.
    """
    if num_classes < 2 or dim < 1 or separation <= 0 or scale <= 0:
        raise ValueError("need num_classes >= 2, dim >= 1, separation > 0, scale > 0")
    rng = np.random.default_rng(seed)
    if dim == 1:
        if num_classes != 2:
            raise ValueError("a 1-D sphere only holds two means")
        means = np.array([[-separation], [separation]])
    elif dim == 2:
        theta = rng.uniform(0, 2 * math.pi) + 2 * math.pi * np.arange(num_classes) / num_classes
        means = separation * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    else:
        g = rng.standard_normal((num_classes, dim))
        means = separation * g / np.linalg.norm(g, axis=1, keepdims=True)
    return GmmModel(
        weights=np.full(num_classes, 1.0 / num_classes),
        means=means,
        scales=np.full(num_classes, float(scale)),
        labels=np.arange(num_classes),
    )


def component_log_density(gmm: GmmModel, x) -> np.ndarray:
    """``log pi_k + log N(x; mu_k, c_k^2 I)`` with shape ``(..., K)``."""
    x = np.asarray(x, dtype=np.float64)
    diff = x[..., None, :] - gmm.means
    sq = np.einsum("...kd,...kd->...k", diff, diff)
    c2 = gmm.scales ** 2
    d = gmm.dim
    return np.log(gmm.weights) - 0.5 * d * np.log(2 * math.pi * c2) - 0.5 * sq / c2


def bayes_classify(gmm: GmmModel, x):
    """Label of the most likely component; ties go to the smallest label."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != gmm.dim:
        raise ValueError(f"expected last dimension {gmm.dim}, got {x.shape[-1]}")
    scores = component_log_density(gmm, x)
    best = scores.max(axis=-1, keepdims=True)
    big = np.iinfo(np.int64).max
    cand = np.where(scores == best, gmm.labels, big)
    out = cand.min(axis=-1)
    if out.ndim == 0:
        return int(out)
    return out


def sample_dataset(gmm: GmmModel, n: int, seed: int = 0) -> Dataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    comp = rng.choice(gmm.K, size=n, p=gmm.weights)
    pts = gmm.means[comp] + gmm.scales[comp, None] * rng.standard_normal((n, gmm.dim))
    return Dataset(pts, gmm.labels[comp].copy(), gmm, seed)


def save(dataset: Dataset, path) -> None:
    n, d = dataset.points.shape
    K = dataset.generator_spec.num_classes if dataset.generator_spec is not None \
        else int(dataset.labels.max()) + 1
    lines = [f"{n} {d} {K}"]
    for row, y in zip(dataset.points, dataset.labels):
        lines.append(" ".join(f"{v:.17g}" for v in row) + f" {int(y)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load(path) -> Dataset:
    """Read a dataset file: header ``n d K``, then ``d`` values and a label per line."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].strip():
        raise ParseError(1, "empty dataset file")
    try:
        n, d, K = (int(v) for v in lines[0].split())
    except ValueError:
        raise ParseError(1, f"bad header {lines[0]!r}") from None
    body = lines[1:]
    if len(body) < n:
        raise ParseError(len(lines) + 1, f"expected {n} data rows, found {len(body)}")
    pts = np.empty((n, d))
    labels = np.empty(n, dtype=np.int64)
    for i, line in enumerate(body[:n]):
        parts = line.split()
        if len(parts) != d + 1:
            raise ParseError(i + 2, f"expected {d + 1} fields, got {len(parts)}")
        try:
            pts[i] = [float(v) for v in parts[:d]]
            labels[i] = int(parts[d])
        except ValueError as exc:
            raise ParseError(i + 2, str(exc)) from None
        if not 0 <= labels[i] < K:
            raise ParseError(i + 2, f"label {labels[i]} outside 0..{K - 1}")
    for j, line in enumerate(body[n:], start=n + 2):
        if line.strip():
            raise ParseError(j, "trailing data after the declared rows")
    return Dataset(pts, labels)


def save_gmm(gmm: GmmModel, path) -> None:
    Path(path).write_text(gmm.to_text())


def load_gmm(path) -> GmmModel:
    return GmmModel.from_text(Path(path).read_text())
