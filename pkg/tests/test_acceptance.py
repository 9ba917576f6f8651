"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import json
import time

import numpy as np
import pytest

from adds import cli, clopper_pearson_lower
from adds import experiment as ex
from adds.oracles import (check_clopper_pearson, check_denoiser, check_fixed_noise, check_step_forms,
                          check_filter_ledger, check_phi_inv, check_sensitivity,
                          check_zero_guidance)


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail
    return emit


def _timed(fn, *args, **kw):
    start = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - start


def test_filter_soundness(report):
    res, secs = _timed(check_filter_ledger, seed=0, runs=10_000)
    report("filter soundness", res.passed and res.cases == 10_000 and secs < 30,
           f"{res.cases} runs, {len(res.failures)} violations, {secs:.1f}s (limit 30s)")


def test_step_sensitivity(report):
    res = check_sensitivity(seed=0, cases=1000, tol=1e-12)
    report("one-step sensitivity", res.passed and res.cases == 1000,
           f"{res.cases} cases, {len(res.failures)} over 1e-12")


def test_step_form_identity(report):
    res = check_step_forms(seed=0, cases=1000, tol=1e-12)
    report("x0-form vs eps-form step", res.passed and res.cases == 1000,
           f"{res.cases} cases, {len(res.failures)} over 1e-12")


def test_fixed_noise_composition(report):
    res = check_fixed_noise(seed=0, cases=1000, tol=1e-9)
    report("ledger radius vs fixed-noise composition", res.passed and res.cases == 1000,
           f"{res.cases} cases, {len(res.failures)} over 1e-9")


def test_zero_scale_degeneracy(report):
    res = check_zero_guidance(seed=0, pairs=100)
    report("s=0 output independent of input", res.passed and res.cases == 100,
           f"{res.cases} pairs, {len(res.failures)} mismatches")


def test_denoiser_oracle(report):
    res, secs = _timed(check_denoiser, seed=0, cases=50, n_samples=100_000)
    ok = len(res.failures) <= 1 and res.cases == 50 and secs < 120
    report("GMM posterior mean vs MC oracle", ok,
           f"{res.cases} cases, {len(res.failures)} outside 3 SE (allow 1), {secs:.1f}s (limit 120s)")


def test_statistics(report):
    cp = check_clopper_pearson(max_n=30, alphas=(0.05, 0.001), tol=1e-9)
    pi = check_phi_inv(count=1000, tol=1e-9)
    closed = abs(clopper_pearson_lower(1000, 1000, 0.001) - 0.001 ** (1 / 1000))
    ok = cp.passed and pi.passed and pi.cases == 1000 and closed <= 1e-9
    report("statistics", ok,
           f"CP {cp.cases} cases/{len(cp.failures)} bad; phi_inv {pi.cases} probes/"
           f"{len(pi.failures)} bad; k=n closed-form error {closed:.2e}")


@pytest.mark.slow
def test_empirical_soundness(tmp_path, report, capsys):
    cfg = dict(pipelines=[dict(method="adds", sigma=1.0, guidance_scale=0.8, respaced_steps=20)],
               num_classes=3, dim=2, num_test_points=250, n0=1000, n=10_000, alpha=0.001,
               output=str(tmp_path / "sound.csv"))
    path = tmp_path / "sound.json"
    path.write_text(json.dumps(cfg))
    start = time.perf_counter()
    assert cli.main(["certify", str(path)]) == 0
    out = tmp_path / "attack.json"
    assert cli.main(["attack-check", str(path), cfg["output"], "--trials", "200",
                     "--fraction", "0.99", "-o", str(out)]) == 0
    secs = time.perf_counter() - start
    capsys.readouterr()
    st = json.loads(out.read_text())["methods"]["ADDS (sigma=1.0)"]
    ok = st["flip_rate"] <= 0.01 and secs < 600 and "flip_rate_stderr" in st
    report("empirical certificate soundness", ok,
           f"{st['certified_rows']} certified points, {st['flips']}/{st['trials']} flips "
           f"(rate {st['flip_rate']:.2e} +- {st['flip_rate_stderr']:.1e}, "
           f"upper95 {st['flip_rate_upper95']:.1e}), {secs:.0f}s (limit 600s)")


def test_structural_reproduction(tmp_path, report, capsys):
    # Reduced counts: the layout is what is checked, not the values.
    grid = tmp_path / "grid.json"
    csv_path = tmp_path / "grid.csv"
    assert cli.main(["init-config", str(grid), "--points", "30", "--csv", str(csv_path)]) == 0
    raw = json.loads(grid.read_text())
    raw.update(n0=100, n=1000)
    grid.write_text(json.dumps(raw))
    assert cli.main(["certify", str(grid)]) == 0
    capsys.readouterr()
    summary = json.loads(csv_path.with_suffix(".summary.json").read_text())
    rows = ex.read_rows(csv_path)
    labels = ["RS", "DDS (one-shot)", "DensePure", "DensePure w/ 5 votes", "ADDS",
              "ADDS w/ 5 votes", "ADDS (w/o unguided denoising)"]
    problems = []
    for key in ("certified_accuracy_r0", "clean_accuracy"):
        table = summary["tables"][key]
        if sorted(table) != sorted(labels):
            problems.append(f"{key} rows {sorted(table)}")
        for lab, vals in table.items():
            if sorted(vals) != ["1.0", "1.5", "2.0"] or any(v is None for v in vals.values()):
                problems.append(f"{key}/{lab} columns {vals}")
    for e in summary["entries"]:
        curve = [a for _, a in e["curve"]]
        if len(curve) < 2 or any(a < b for a, b in zip(curve, curve[1:])):
            problems.append(f"curve for {e['label']} sigma={e['sigma']}")
    if len(rows) != 30 * 21 or not all(r["wall_time_ms"] > 0 for r in rows):
        problems.append("row count or timings")
    md = csv_path.with_suffix(".tables.md").read_text()
    if "Certified accuracy (r = 0)" not in md or "Clean accuracy" not in md:
        problems.append("markdown tables")
    times = {e["label"]: e["mean_wall_time_ms"] for e in summary["entries"] if e["sigma"] == 1.0}
    report("structural reproduction", not problems,
           f"2 tables x {len(labels)} rows x 3 sigmas, {len(summary['entries'])} curves, "
           f"{len(rows)} timed rows; mean ms at sigma=1: "
           + ", ".join(f"{k} {v:.0f}" for k, v in times.items())
           + (f"; problems: {problems}" if problems else ""))
