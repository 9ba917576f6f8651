"""Independent numerical oracles and the pass/fail battery built on them.

The oracles use only the standard library so they share no code path with
the numpy/scipy implementations they check.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
import math
import random
from typing import Callable, Iterable, Optional

import numpy as np

from . import privacy
from .certify import clopper_pearson_lower, phi_inv
from .data import make_gmm_task
from .denoise import (GmmModel, ZeroDenoiser, eps_to_x0, gmm_posterior_mean,
                      mc_posterior_mean_oracle)
from .privacy import BudgetVector, filter_radius, ars_fixed_radius, spend_guidance
from .sampler import (PipelineConfig, ddpm_step, ddpm_step_eps, guided_mean,
                      sample_pipeline)
from .schedule import NoiseSchedule


# -- scalar oracles ---------------------------------------------------------

def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def phi_inv_bisect(p: float) -> float:
    """Normal quantile by bisection on ``math.erfc``."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if p > 0.5:
        return -phi_inv_bisect(1.0 - p)
    lo, hi = -40.0, 0.0
    while True:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            return mid
        if normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid


def binomial_upper_tail(k: int, n: int, p: float) -> float:
    """``P[Bin(n, p) >= k]`` by direct summation."""
    return math.fsum(math.comb(n, j) * p**j * (1.0 - p) ** (n - j) for j in range(k, n + 1))


def clopper_pearson_bisect(k: int, n: int, alpha: float) -> float:
    if k == 0:
        return 0.0
    lo, hi = 0.0, 1.0
    while True:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            return mid
        if binomial_upper_tail(k, n, mid) > alpha:
            hi = mid
        else:
            lo = mid


def alpha_bar_product(betas: Iterable[float]) -> list[float]:
    """Cumulative products of ``1 - beta`` in extended (math.fsum-free) form."""
    from fractions import Fraction

    acc = Fraction(1)
    out = []
    for b in betas:
        acc *= 1 - Fraction(b)
        out.append(float(acc))
    return out


def true_step_constant(schedule: NoiseSchedule, t: int) -> float:
    ab = [1.0] + [float(v) for v in schedule.alpha_bars]
    a = float(schedule.alphas[t - 1])
    return ab[t - 1] * (1.0 - a) ** 2 / (1.0 - ab[t]) ** 2


def random_schedule(rng: random.Random, max_T: int = 50, max_beta: float = 0.3) -> NoiseSchedule:
    T = rng.randint(1, max_T)
    betas = sorted(rng.uniform(1e-4, max_beta) for _ in range(T))
    return NoiseSchedule.from_betas(betas)


def random_gmm(rng: np.random.Generator, K: int, d: int) -> GmmModel:
    w = rng.uniform(0.2, 1.0, K)
    return GmmModel(weights=w / w.sum(), means=rng.normal(0, 1.5, (K, d)),
                    scales=rng.uniform(0.3, 1.2, K), labels=np.arange(K))


# -- battery ----------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    cases: int
    failures: list = field(default_factory=list)
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.cases} cases, {len(self.failures)} failures {self.detail}".rstrip()


def check_denoiser(seed: int = 0, cases: int = 50, n_samples: int = 100_000,
                   allowed_failures: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    failures = []
    for i in range(cases):
        K, d = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        gmm = random_gmm(rng, K, d)
        ab = float(rng.uniform(0.05, 0.95))
        x0 = gmm.means[rng.integers(K)] + rng.normal(0, 1, d)
        x_t = math.sqrt(ab) * x0 + math.sqrt(1 - ab) * rng.normal(0, 1, d)
        exact = gmm_posterior_mean(gmm, x_t, ab)
        est, se = mc_posterior_mean_oracle(gmm, x_t, ab, n_samples, seed=seed * 1000 + i)
        z = np.abs(exact - est) / se
        if np.any(z > 3.0):
            failures.append(dict(case=i, K=K, d=d, alpha_bar=ab, z=z.tolist()))
    return CheckResult("gmm posterior mean vs Monte-Carlo", len(failures) <= allowed_failures,
                       cases, failures, f"(allowed {allowed_failures})")


def check_clopper_pearson(max_n: int = 30, alphas=(0.05, 0.001), tol: float = 1e-9) -> CheckResult:
    failures, cases = [], 0
    for alpha in alphas:
        for n in range(1, max_n + 1):
            for k in range(n + 1):
                cases += 1
                got = clopper_pearson_lower(k, n, alpha)
                want = clopper_pearson_bisect(k, n, alpha)
                if abs(got - want) > tol:
                    failures.append(dict(k=k, n=n, alpha=alpha, got=got, want=want))
    got = clopper_pearson_lower(1000, 1000, 0.001)
    cases += 1
    if abs(got - 0.001 ** (1 / 1000)) > tol:
        failures.append(dict(k=1000, n=1000, alpha=0.001, got=got))
    return CheckResult("clopper-pearson vs binomial bisection", not failures, cases, failures)


def phi_inv_probes(count: int = 1000) -> np.ndarray:
    tails = np.logspace(-12, math.log10(0.02), count // 4)
    mid = np.linspace(0.02, 0.98, count - 2 * (count // 4))
    return np.concatenate([tails, mid, 1.0 - tails])


def check_phi_inv(count: int = 1000, tol: float = 1e-9) -> CheckResult:
    failures = []
    probes = phi_inv_probes(count)
    got = phi_inv(probes)
    for p, g in zip(probes, got):
        want = phi_inv_bisect(float(p))
        if abs(g - want) > tol:
            failures.append(dict(p=float(p), got=float(g), want=want))
    return CheckResult("phi_inv vs erfc bisection", not failures, len(probes), failures)


def run_filter_trial(rng: random.Random, nprng: np.random.Generator):
    """One random guided-run ledger. Returns ``(violations, spent, mu2)``."""
    sched = random_schedule(rng)
    sigma = rng.uniform(0.25, 4.0)
    d = rng.randint(1, 6)
    budget = BudgetVector.initial(sigma, (d,))
    mu2 = budget.remaining[0]
    exhausted = np.zeros((), dtype=bool)
    spent = np.zeros(d)
    violations = []
    for t in range(sched.T, 0, -1):
        s = rng.random()
        sig = nprng.uniform(0.005, 1.0, d)
        if rng.random() < 0.05:
            sig[rng.randrange(d)] = 0.0
        was_exhausted = bool(exhausted) or bool(np.any(budget.remaining <= 0))
        budget, used, exhausted, rec = spend_guidance(budget, s, t, sched, sig, exhausted)
        used = float(used)
        if used > 0:
            c = true_step_constant(sched, t)
            cost = used * used * c / (sig * sig)
            spent += cost
            if was_exhausted:
                violations.append(dict(kind="guided after exhaustion", t=t, scale=used))
        if np.any(budget.remaining < 0) or np.any(budget.remaining > mu2):
            violations.append(dict(kind="budget out of range", t=t))
    if np.any(spent > mu2 + 1e-12):
        violations.append(dict(kind="overspent", excess=float(np.max(spent - mu2))))
    return violations, spent, mu2


@contextmanager
def perturbed_step_constant(factor: float):
    """Temporarily scale the filter's step constant (fault injection)."""
    original = privacy.step_constant
    privacy.step_constant = lambda t, schedule: factor * original(t, schedule)
    try:
        yield
    finally:
        privacy.step_constant = original


def check_filter_ledger(seed: int = 0, runs: int = 10_000) -> CheckResult:
    rng = random.Random(seed)
    nprng = np.random.default_rng(seed)
    failures = []
    for i in range(runs):
        v, _, _ = run_filter_trial(rng, nprng)
        if v:
            failures.append(dict(run=i, violations=v[:3]))
    return CheckResult("privacy filter ledger soundness", not failures, runs, failures)


def check_step_forms(seed: int = 0, cases: int = 1000, tol: float = 1e-12) -> CheckResult:
    rng = random.Random(seed)
    nprng = np.random.default_rng(seed)
    failures = []
    for i in range(cases):
        sched = random_schedule(rng, max_beta=0.2)
        t = rng.randint(1, sched.T)
        d = rng.randint(1, 8)
        x_t = nprng.normal(0, 1, d)
        eps = nprng.normal(0, 1, d)
        sig = nprng.uniform(0, 0.5, d)
        x0 = eps_to_x0(x_t, eps, sched.alpha_bar(t))
        a = ddpm_step(x_t, x0, t, sched, sig, np.random.default_rng(i))
        b = ddpm_step_eps(x_t, eps, t, sched, sig, np.random.default_rng(i))
        err = float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))))
        if err > tol:
            failures.append(dict(case=i, t=t, err=err))
    return CheckResult("reverse step: x0 form vs eps form", not failures, cases, failures)


def check_sensitivity(seed: int = 0, cases: int = 1000, tol: float = 1e-12) -> CheckResult:
    rng = random.Random(seed)
    nprng = np.random.default_rng(seed)
    failures = []
    for i in range(cases):
        sched = random_schedule(rng)
        t = rng.randint(1, sched.T)
        d = rng.randint(1, 8)
        s = rng.random()
        x_t, x0_hat, x = (nprng.normal(0, 1, d) for _ in range(3))
        pix = rng.randrange(d)
        e = np.zeros(d)
        e[pix] = nprng.normal(0, 2)
        delta = np.abs(guided_mean(x_t, x0_hat, x + e, s, t, sched)
                       - guided_mean(x_t, x0_hat, x, s, t, sched))
        ab_prev, a, ab = sched.alpha_bar(t - 1), sched.alpha(t), sched.alpha_bar(t)
        want = s * math.sqrt(ab_prev) * (1 - a) / (1 - ab) * abs(e[pix])
        others = np.delete(delta, pix)
        err = abs(delta[pix] - want)
        if err > tol * max(1.0, want) or np.any(others > tol):
            failures.append(dict(case=i, t=t, got=float(delta[pix]), want=want))
    return CheckResult("one-step guided mean sensitivity", not failures, cases, failures)


def check_fixed_noise(seed: int = 0, cases: int = 1000, tol: float = 1e-9) -> CheckResult:
    """Fixed-noise adaptive runs: ledger radius equals the fixed-noise composition radius."""
    rng = random.Random(seed)
    nprng = np.random.default_rng(seed)
    failures = []
    for i in range(cases):
        sched = random_schedule(rng)
        steps = sorted(rng.sample(range(1, sched.T + 1), min(sched.T, rng.randint(1, 2 if i % 2 else 6))),
                       reverse=True)
        s = rng.uniform(0.05, 1.0)
        d = rng.randint(1, 4)
        per_step_std = {t: rng.uniform(0.05, 1.0) for t in steps}
        # budget large enough that the filter never refuses
        budget = BudgetVector.initial(1e-6, (d,))
        exhausted = np.zeros((), dtype=bool)
        ledger = []
        for t in steps:
            sig = np.full(d, per_step_std[t])
            budget, used, exhausted, rec = spend_guidance(budget, s, t, sched, sig, exhausted)
            ledger.append(rec)
        p_plus = rng.uniform(0.5, 0.9999)
        p_minus = rng.uniform(1e-4, p_plus)
        got = filter_radius(privacy.total_spent(ledger), p_plus, p_minus)
        sig_eff = [per_step_std[t] / (s * math.sqrt(true_step_constant(sched, t))) for t in steps]
        want = ars_fixed_radius(sig_eff, p_plus, p_minus)
        if abs(got - want) > tol * max(1.0, abs(want)) or bool(exhausted):
            failures.append(dict(case=i, got=got, want=want))
    return CheckResult("filter ledger radius vs fixed-noise composition", not failures, cases, failures)


def check_zero_guidance(seed: int = 0, pairs: int = 100) -> CheckResult:
    """With scale 0 the guided pipeline output must not depend on the clean input."""
    from .schedule import build_linear_schedule
    from .denoise import GmmDenoiser

    gmm = make_gmm_task(3, 2, 2.0, 0.5, seed=seed)
    den = GmmDenoiser(gmm)
    sched = build_linear_schedule()
    nprng = np.random.default_rng(seed)
    failures = []
    for i in range(pairs):
        method = ("adds", "adds_oneshot")[i % 2]
        cfg = PipelineConfig(method=method, sigma=float(nprng.uniform(0.5, 2.0)),
                             guidance_scale=0.0,
                             votes=1 + 4 * (i % 3 == 0 and method == "adds"))
        xa, xb = nprng.normal(0, 2, (2, gmm.dim))
        a = sample_pipeline(xa, cfg, den, sched, np.random.default_rng(i), n=8)
        b = sample_pipeline(xb, cfg, den, sched, np.random.default_rng(i), n=8)
        if not np.array_equal(a, b):
            failures.append(dict(pair=i, method=method))
    return CheckResult("zero guidance ignores the clean input", not failures, pairs, failures)


CHECKS: dict[str, Callable[..., CheckResult]] = {
    "denoiser": check_denoiser,
    "clopper_pearson": check_clopper_pearson,
    "phi_inv": check_phi_inv,
    "filter_ledger": check_filter_ledger,
    "step_forms": check_step_forms,
    "sensitivity": check_sensitivity,
    "fixed_noise": check_fixed_noise,
    "zero_guidance": check_zero_guidance,
}
SEEDED = {"denoiser", "filter_ledger", "step_forms", "sensitivity", "fixed_noise", "zero_guidance"}


def run_battery(seed: int = 0, checks: Optional[Iterable[str]] = None,
                fault: Optional[str] = None) -> list[CheckResult]:
    names = list(CHECKS) if checks is None else list(checks)
    if not names:
        raise ValueError("empty oracle battery selection")
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks: {unknown}")
    if fault not in (None, "c_t"):
        raise ValueError(f"unknown fault {fault!r}")
    results = []
    for name in names:
        kwargs = {"seed": seed} if name in SEEDED else {}
        if fault == "c_t" and name == "filter_ledger":
            with perturbed_step_constant(0.5):
                results.append(CHECKS[name](**kwargs))
        else:
            results.append(CHECKS[name](**kwargs))
    return results
