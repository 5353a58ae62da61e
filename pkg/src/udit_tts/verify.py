"""Self-contained numerical checks of the diffusion core and alignment search."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from scipy import integrate

from .alignment import (
    DurationVector,
    brute_force_align,
    durations_from_path,
    enumerate_paths,
    mas_align,
    path_from_durations,
    path_score,
)
from .diffusion import (
    NoiseSchedule,
    analytic_gaussian_score,
    beta_integral,
    euler_maruyama_forward,
    forward_mean,
    lambda_t,
    marginal_moments,
    reverse_ode_sample,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _schedule_constants(seed: int) -> CheckResult:
    s = NoiseSchedule()
    quad, _ = integrate.quad(s.beta, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)
    lam_ref = 1.0 - math.exp(-quad)
    ok = s.beta(0.0) == 0.05 and s.beta(1.0) == 20.0
    ok &= abs(beta_integral(s, 1.0) - quad) < 1e-10 and abs(lambda_t(s, 1.0) - lam_ref) < 1e-10
    return CheckResult("schedule constants", ok, f"B(1)={beta_integral(s, 1.0):.12g} quad={quad:.12g}")


def _kernel_vs_simulation(seed: int, n_paths: int = 4000, n_steps: int = 1000) -> CheckResult:
    s = NoiseSchedule()
    gen = torch.Generator().manual_seed(seed)
    x = euler_maruyama_forward(torch.ones(n_paths, dtype=torch.float64), torch.zeros(n_paths, dtype=torch.float64), s, n_steps, gen)
    mean_ref = float(forward_mean(1.0, 0.0, s, 1.0))
    var_ref = lambda_t(s, 1.0)
    m, v = float(x.mean()), float(x.var())
    se_m = math.sqrt(var_ref / n_paths)
    se_v = var_ref * math.sqrt(2.0 / (n_paths - 1))
    ok = abs(m - mean_ref) < 3 * se_m and abs(v - var_ref) < 3 * se_v
    return CheckResult("forward kernel vs Euler-Maruyama", ok, f"mean {m:.4f} vs {mean_ref:.4f}, var {v:.4f} vs {var_ref:.4f}")


def _reverse_ode(seed: int, n_samples: int = 4000, n_steps: int = 500) -> CheckResult:
    s = NoiseSchedule()
    m0, v0 = 2.0, 0.25
    mu = torch.zeros(n_samples, dtype=torch.float64)
    score = lambda x, mu_, t: analytic_gaussian_score(x, t, m0, v0, mu_, s)
    gen = torch.Generator().manual_seed(seed)
    x = reverse_ode_sample(score, mu, n_steps=n_steps, tau=1.0, rng=gen, sched=s)
    m, v = float(x.mean()), float(x.var())
    se_m = math.sqrt(v0 / n_samples)
    se_v = v0 * math.sqrt(2.0 / (n_samples - 1))
    ok = abs(m - m0) < 3 * se_m and abs(v - v0) < 3 * se_v
    return CheckResult("reverse ODE with analytic score", ok, f"mean {m:.4f} vs {m0}, var {v:.4f} vs {v0}")


def _analytic_score_example(seed: int) -> CheckResult:
    s = NoiseSchedule()
    got = float(analytic_gaussian_score(1.0, 0.5, 2.0, 0.25, 0.0, s))
    mean, var = marginal_moments(2.0, 0.25, torch.tensor(0.0, dtype=torch.float64), s, 0.5)
    ref = -(1.0 - float(mean)) / float(var)
    return CheckResult("analytic score example", abs(got - ref) < 1e-12 and abs(got + 0.4601) < 1e-4, f"score {got:.6f}")


def _mas_vs_brute_force(seed: int, trials: int = 30) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    total = 0
    for n in range(1, 5):
        for f in range(n, 7):
            for k in range(trials):
                ll = rng.normal(size=(n, f)) if k % 2 else rng.integers(-2, 3, size=(n, f)).astype(float)
                a, b = mas_align(ll), brute_force_align(ll)
                total += 1
                if not np.array_equal(a.frame_to_token, b.frame_to_token) or path_score(ll, a) != path_score(ll, b):
                    bad += 1
    return CheckResult("MAS equals brute force", bad == 0, f"{total - bad}/{total} instances agree")


def _duration_identities(seed: int, trials: int = 200) -> CheckResult:
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(trials):
        n = int(rng.integers(1, 8))
        f = int(rng.integers(n, 20))
        counts = 1 + rng.multinomial(f - n, np.ones(n) / n)
        d = durations_from_path(path_from_durations(DurationVector(counts)))
        ok &= d.n_frames == f and bool(np.all(d.counts >= 1)) and np.array_equal(d.counts, counts)
    example = durations_from_path(mas_align(np.array([[0.0, 0.0, -50.0], [-50.0, -50.0, 0.0]])))
    ok &= np.array_equal(example.log_counts, [math.log(2.0), 0.0])
    return CheckResult("duration identities", ok, f"example log-durations {example.log_counts.tolist()}")


def _path_count(seed: int) -> CheckResult:
    ok = all(sum(1 for _ in enumerate_paths(n, f)) == math.comb(f - 1, n - 1) for n in range(1, 5) for f in range(n, 8))
    return CheckResult("path enumeration count", ok, "C(F-1, N-1) paths for N<=4, F<=7")


CHECKS: tuple[Callable[[int], CheckResult], ...] = (
    _schedule_constants,
    _kernel_vs_simulation,
    _reverse_ode,
    _analytic_score_example,
    _mas_vs_brute_force,
    _duration_identities,
    _path_count,
)


def run_math_checks(seed: int = 0) -> list[CheckResult]:
    results = []
    for check in CHECKS:
        try:
            results.append(check(seed))
        except Exception as exc:  # a crashing check is a failed check
            results.append(CheckResult(check.__name__.strip("_").replace("_", " "), False, f"raised {exc!r}"))
    return results
