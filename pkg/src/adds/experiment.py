"""Seeded certification experiments over a synthetic Gaussian-mixture task."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
import io
import json
import logging
import math
import os
from pathlib import Path
from typing import Optional

import numpy as np

from .certify import (ABSTAIN, certify, clopper_pearson_lower, majority_vote_rows,
                      predict_from_counts)
from .data import bayes_classify, load_gmm, make_gmm_task, sample_dataset
from .denoise import GmmDenoiser, GmmModel
from .sampler import PipelineConfig, sample_pipeline
from .schedule import build_linear_schedule

log = logging.getLogger(__name__)

CSV_COLUMNS = ["sample_id", "method", "sigma", "votes", "guidance_scale", "prediction",
               "true_label", "correct", "abstained", "p_lower", "radius", "n0", "n",
               "alpha", "wall_time_ms", "seed"]

# Samples per pipeline call; bounds memory and keeps the rng stream independent
# of how many samples a phase asks for in total.
CHUNK = 25_000


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    pipelines: list
    gmm_path: Optional[str] = None
    num_classes: int = 3
    dim: int = 2
    separation: float = 1.2
    scale: float = 0.5
    task_seed: int = 0
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    n0: int = 1000
    n: int = 10_000
    alpha: float = 0.001
    num_test_points: int = 250
    seed: int = 0
    output: str = "certify.csv"
    radius_fractions: list = field(default_factory=lambda: [0.25 * i for i in range(9)])

    def __post_init__(self):
        if self.num_test_points < 1:
            raise ConfigError("num_test_points must be >= 1")
        if not self.n >= self.n0 >= 1:
            raise ConfigError("need n >= n0 >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.gmm_path is not None and not Path(self.gmm_path).exists():
            raise ConfigError(f"gmm_path {self.gmm_path!r} does not exist")
        try:
            self.pipelines = [p if isinstance(p, PipelineConfig) else PipelineConfig(**p)
                              for p in self.pipelines]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad pipeline entry: {exc}") from None
        if not self.pipelines:
            raise ConfigError("at least one pipeline is required")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pipelines"] = [asdict(p) for p in self.pipelines]
        return out

    def gmm(self) -> GmmModel:
        if self.gmm_path is not None:
            return load_gmm(self.gmm_path)
        return make_gmm_task(self.num_classes, self.dim, self.separation, self.scale,
                             self.task_seed)

    def schedule(self):
        return build_linear_schedule(self.T, self.beta_start, self.beta_end)

    def test_set(self):
        return sample_dataset(self.gmm(), self.num_test_points, seed=self.seed + 1)


def standard_grid(sigmas=(1.0, 1.5, 2.0), steps: int = 20) -> list[dict]:
    """rs, one-shot DDS, DensePure x{1,5}, ADDS x{1,5} and one-shot ADDS per sigma.

    Guidance scale is 0.8 for sigma < 2 and 0.9 otherwise.
    """
    out = []
    for sigma in sigmas:
        s = 0.9 if sigma >= 2.0 else 0.8
        out.append(dict(method="rs", sigma=sigma))
        out.append(dict(method="dds", sigma=sigma, respaced_steps=steps))
        for votes in (1, 5):
            out.append(dict(method="densepure", sigma=sigma, votes=votes, respaced_steps=steps))
        for votes in (1, 5):
            out.append(dict(method="adds", sigma=sigma, guidance_scale=s, votes=votes,
                            respaced_steps=steps))
        out.append(dict(method="adds_oneshot", sigma=sigma, guidance_scale=s,
                        respaced_steps=steps))
    return out


def cell_rng(seed: int, point: int, cell: int, phase: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(point, cell, phase)))


def make_label_sampler(x, config: PipelineConfig, gmm: GmmModel, schedule):
    """``draw(n, rng)``: smoothed-sample labels after per-sample vote reduction.

    ``x`` is one clean point, or a callable ``rows -> (rows, d)`` array so that
    each sample may use its own input.
    """
    denoiser = GmmDenoiser(gmm)
    num_classes = gmm.num_classes

    def draw(n: int, rng) -> np.ndarray:
        out = np.empty(n, dtype=np.int64)
        for lo in range(0, n, CHUNK):
            hi = min(n, lo + CHUNK)
            xs = x(lo, hi) if callable(x) else x
            samples = sample_pipeline(xs, config, denoiser, schedule, rng, n=hi - lo)
            labels = bayes_classify(gmm, samples)
            out[lo:hi] = majority_vote_rows(labels, num_classes)
        return out

    return draw


def _certify_cell(args):
    cfg_dict, point, cell = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    gmm, sched, data = cfg.gmm(), cfg.schedule(), cfg.test_set()
    pc = cfg.pipelines[cell]
    draw = make_label_sampler(data.points[point], pc, gmm, sched)
    res = certify(draw, pc.sigma, int(data.labels[point]), cfg.n0, cfg.n, cfg.alpha,
                  cell_rng(cfg.seed, point, cell), gmm.num_classes)
    return {
        "sample_id": point, "method": pc.method, "sigma": pc.sigma, "votes": pc.votes,
        "guidance_scale": pc.guidance_scale, "prediction": res.top_label,
        "true_label": res.true_label, "correct": int(res.correct),
        "abstained": int(res.abstained), "p_lower": res.p_plus_lb, "radius": res.radius,
        "n0": res.n0, "n": res.n, "alpha": res.alpha, "wall_time_ms": res.wall_time_ms,
        "seed": cfg.seed,
    }


def workers() -> int:
    try:
        return max(1, int(os.environ.get("ADDS_WORKERS", "1")))
    except ValueError:
        return 1


def run_certify(cfg: ExperimentConfig, points=None) -> list[dict]:
    """Certify every (point, pipeline) cell; rows come back in that order."""
    points = range(cfg.num_test_points) if points is None else points
    tasks = [(cfg.to_dict(), p, c) for p in points for c in range(len(cfg.pipelines))]
    nw = workers()
    if nw == 1:
        return [_certify_cell(t) for t in tasks]
    with ProcessPoolExecutor(nw) as pool:
        return list(pool.map(_certify_cell, tasks))


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_rows(path) -> list[dict]:
    ints = {"sample_id", "votes", "prediction", "true_label", "correct", "abstained",
            "n0", "n", "seed"}
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append({k: (int(v) if k in ints else v if k == "method" else float(v))
                         for k, v in r.items()})
    return rows


def row_label(r) -> str:
    cfg = PipelineConfig(method=r["method"], sigma=float(r["sigma"]),
                         guidance_scale=float(r["guidance_scale"]), votes=int(r["votes"]))
    return cfg.label


def certified_accuracy(rows, r: float) -> float:
    if not rows:
        return float("nan")
    return sum(1 for x in rows if x["correct"] and not x["abstained"] and x["radius"] >= r) / len(rows)


def summarize(rows: list[dict], radius_fractions, curve_points: int = 41) -> dict:
    """Clean and certified accuracy per (method, votes, sigma) plus both tables."""
    groups: dict = {}
    for r in rows:
        key = (row_label(r), r["method"], r["votes"], r["guidance_scale"], r["sigma"])
        groups.setdefault(key, []).append(r)
    entries = []
    for (label, method, votes, s, sigma), rs in groups.items():
        grid = [f * sigma for f in radius_fractions]
        rmax = max(grid[-1], max(x["radius"] for x in rs))
        curve = np.linspace(0.0, rmax, curve_points)
        entries.append({
            "label": label, "method": method, "votes": votes, "guidance_scale": s,
            "sigma": sigma, "num_points": len(rs),
            "clean_accuracy": sum(x["correct"] for x in rs) / len(rs),
            "abstain_rate": sum(x["abstained"] for x in rs) / len(rs),
            "certified_accuracy": [[r, certified_accuracy(rs, r)] for r in grid],
            "curve": [[float(r), certified_accuracy(rs, r)] for r in curve],
            "mean_wall_time_ms": float(np.mean([x["wall_time_ms"] for x in rs])),
        })
    sigmas = sorted({e["sigma"] for e in entries})
    labels = list(dict.fromkeys(e["label"] for e in entries))

    def table(metric):
        t = {lab: {str(s): None for s in sigmas} for lab in labels}
        for e in entries:
            t[e["label"]][str(e["sigma"])] = metric(e)
        return t

    return {
        "entries": entries,
        "tables": {
            "certified_accuracy_r0": table(lambda e: e["certified_accuracy"][0][1]),
            "clean_accuracy": table(lambda e: e["clean_accuracy"]),
        },
    }


def tables_markdown(summary: dict) -> str:
    out = []
    titles = {"certified_accuracy_r0": "Certified accuracy (r = 0)",
              "clean_accuracy": "Clean accuracy"}
    for key, title in titles.items():
        t = summary["tables"][key]
        sigmas = list(next(iter(t.values())).keys()) if t else []
        out.append(f"### {title}\n")
        out.append("| method | " + " | ".join(f"sigma={s}" for s in sigmas) + " |")
        out.append("|---" * (len(sigmas) + 1) + "|")
        for lab, vals in t.items():
            cells = ["-" if vals[s] is None else f"{100 * vals[s]:.1f}" for s in sigmas]
            out.append(f"| {lab} | " + " | ".join(cells) + " |")
        out.append("")
    return "\n".join(out)


def write_outputs(rows, summary, output) -> None:
    out = Path(output)
    out.write_text(rows_to_csv(rows))
    out.with_suffix(".summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    out.with_suffix(".tables.md").write_text(tables_markdown(summary))


def random_directions(rng, count: int, dim: int) -> np.ndarray:
    g = rng.standard_normal((count, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _attack_row(args):
    cfg_dict, r, cell, trials, fraction, trial_batch = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    gmm, sched, data = cfg.gmm(), cfg.schedule(), cfg.test_set()
    pc = cfg.pipelines[cell]
    x = data.points[r["sample_id"]]
    rng = cell_rng(cfg.seed, r["sample_id"], cell, phase=1)
    e = fraction * r["radius"] * random_directions(rng, trials, x.size)
    flips = mode_flips = abstains = 0
    for lo in range(0, trials, trial_batch):
        hi = min(trials, lo + trial_batch)
        xs = np.repeat(x + e[lo:hi], cfg.n0, axis=0)
        draw = make_label_sampler(lambda a, b: xs[a:b], pc, gmm, sched)
        labels = draw(xs.shape[0], rng).reshape(hi - lo, cfg.n0)
        for row in labels:
            counts = np.bincount(row, minlength=gmm.num_classes)
            pred = predict_from_counts(counts, cfg.alpha)
            abstains += pred == ABSTAIN
            flips += pred not in (ABSTAIN, r["prediction"])
            mode_flips += int(np.argmax(counts)) != r["prediction"]
    return int(flips), int(mode_flips), int(abstains)


def attack_check(cfg: ExperimentConfig, rows: list[dict], trials: int, fraction: float,
                 trial_batch: int = 25) -> dict:
    """Random perturbations of size ``fraction * radius`` against certified rows.

    A flip is a non-abstaining smoothed prediction (``n0`` samples, same
    abstain test as certification) that differs from the certified label.
    """
    if not 0 < fraction < 1:
        raise ConfigError("fraction must lie in (0, 1)")
    num_points = cfg.num_test_points
    index = {(p.method, p.sigma, p.votes, p.guidance_scale): i
             for i, p in enumerate(cfg.pipelines)}
    skipped = 0
    jobs, kept = [], []
    cfg_dict = cfg.to_dict()
    for r in rows:
        if r["abstained"] or r["radius"] <= 0:
            continue
        key = (r["method"], float(r["sigma"]), int(r["votes"]), float(r["guidance_scale"]))
        if key not in index or not 0 <= r["sample_id"] < num_points:
            skipped += 1
            continue
        jobs.append((cfg_dict, r, index[key], trials, fraction, trial_batch))
        kept.append(r)
    nw = workers()
    if nw == 1:
        results = [_attack_row(j) for j in jobs]
    else:
        with ProcessPoolExecutor(nw) as pool:
            results = list(pool.map(_attack_row, jobs))
    stats: dict = {}
    for r, (flips, mode_flips, abstains) in zip(kept, results):
        st = stats.setdefault(row_label(r) + f" (sigma={r['sigma']})",
                              {"certified_rows": 0, "trials": 0, "flips": 0,
                               "mode_flips": 0, "abstains": 0})
        st["certified_rows"] += 1
        st["trials"] += trials
        st["flips"] += flips
        st["mode_flips"] += mode_flips
        st["abstains"] += abstains
    for st in stats.values():
        N = st["trials"]
        p = st["flips"] / N
        st["flip_rate"] = p
        st["flip_rate_stderr"] = math.sqrt(max(p * (1 - p), 1.0 / N) / N)
        st["flip_rate_upper95"] = _cp_upper(st["flips"], N, 0.05)
        st["mode_flip_rate"] = st["mode_flips"] / N
        st["abstain_rate"] = st["abstains"] / N
    if skipped:
        log.warning("skipped %d rows with no matching pipeline or test point", skipped)
    return {"fraction": fraction, "trials_per_point": trials, "n0": cfg.n0,
            "skipped_rows": skipped, "methods": stats}


def _cp_upper(k: int, n: int, alpha: float) -> float:
    return 1.0 - clopper_pearson_lower(n - k, n, alpha)
