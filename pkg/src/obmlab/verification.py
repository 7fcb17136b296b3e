"""Randomised identity suite shared by ``obmlab verify`` and the test-suite."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .decomposition import decompose
from .estimator import obm_direct, obm_quadratic, relative_gap
from .markov import ChainPath, TransitionKernel, certify_mixing, kernel_library, sample_path, stationary
from .poisson import (
    CenteredFunction,
    PoissonSolution,
    g_sup_bound,
    sigma2_by_autocovariance,
    sigma2_by_martingale,
    sigma2_by_poisson_identity,
    solve_poisson,
    solve_poisson_exact,
)
from .weights import (
    BatchGeometry,
    ObmWeights,
    brute_force_table,
    diag_square_sum,
    mart_edge_bounds,
)

IDENTITY_TOL = 1e-9
EQUIVALENCE_TOL = 1e-10
WEIGHT_TOL = 1e-13
TRACE_TOL = 1e-12
SIGMA_TOL = 1e-8
POISSON_TOL = 1e-10


@dataclass
class Instance:
    kernel: TransitionKernel
    f: CenteredFunction
    poisson: PoissonSolution
    geometry: BatchGeometry
    path: ChainPath


def random_instances(count: int = 100, seed: int = 20240611, n_range=(16, 512), states=(3, 10)) -> Iterator[Instance]:
    """Random Dirichlet kernels, centred ``f`` with ``||f|| <= 1`` and random OBM geometries."""
    rng = np.random.default_rng(seed)
    for i in range(count):
        S = int(rng.integers(states[0], states[1] + 1))
        kernel = kernel_library("dirichlet_random", {"n_states": S, "seed": int(rng.integers(2 ** 31))})
        pi = stationary(kernel)
        f = CenteredFunction.center(rng.uniform(-1, 1, S), pi)
        f = CenteredFunction.center(f.values / max(f.sup, 1e-300), pi)
        poisson = solve_poisson(kernel, pi, f)
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        b = int(rng.integers(1, n // 2 + 1))
        path = sample_path(kernel, pi.probs, n, int(rng.integers(2 ** 63)), stream=i)
        yield Instance(kernel, f, poisson, BatchGeometry(n, b), path)


def library_kernels() -> list[TransitionKernel]:
    return [
        kernel_library("two_state", {"a": 0.3, "b": 0.1}),
        kernel_library("two_state", {"a": 0.25, "b": 0.25}),
        kernel_library("lazy_cycle", {"m": 5}),
        kernel_library("lazy_cycle", {"m": 8}),
        kernel_library("dirichlet_random", {"n_states": 6, "seed": 11}),
        kernel_library("iid", {"pi": [0.2, 0.5, 0.3]}),
    ]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def check_identities(instances) -> list[CheckResult]:
    worst = {"quadratic_form": 0.0, "remainder": 0.0, "representation": 0.0}
    worst_equiv = 0.0
    for inst in instances:
        led = decompose(inst.path, inst.f, ObmWeights(inst.geometry), inst.poisson)
        sr = led.scaled_residuals()
        for k in worst:
            worst[k] = max(worst[k], sr[k])
        d = obm_direct(inst.path, inst.f, inst.geometry)
        q = obm_quadratic(inst.path, inst.f, inst.geometry)
        worst_equiv = max(worst_equiv, relative_gap(d.value, q.value))
    return [
        CheckResult("martingale decomposition of U_n", worst["quadratic_form"] <= IDENTITY_TOL,
                    f"max scaled residual {worst['quadratic_form']:.2e} (tol {IDENTITY_TOL:g})"),
        CheckResult("remainder T1+T2+T3", worst["remainder"] <= IDENTITY_TOL,
                    f"max scaled residual {worst['remainder']:.2e}"),
        CheckResult("lagged remainder representation", worst["representation"] <= IDENTITY_TOL,
                    f"max scaled residual {worst['representation']:.2e}"),
        CheckResult("OBM direct vs quadratic form", worst_equiv <= EQUIVALENCE_TOL,
                    f"max relative gap {worst_equiv:.2e} (tol {EQUIVALENCE_TOL:g})"),
    ]


def check_exact_representation(cases=((2, 1), (6, 2), (17, 4), (40, 9), (64, 32)), seed: int = 5) -> CheckResult:
    kernel = kernel_library("dirichlet_random", {"n_states": 3, "seed": seed})
    ex = solve_poisson_exact(kernel, [0.5, -0.25, 1.0])
    bad = []
    for i, (n, b) in enumerate(cases):
        path = sample_path(kernel, stationary(kernel).probs, n, seed, stream=i)
        led = decompose(path, None, ObmWeights(BatchGeometry(n, b), exact=True), ex)
        r = led.residuals
        if r["quadratic_form"] != 0 or r["representation"] != 0:
            bad.append((n, b))
    return CheckResult("exact rational residuals", not bad,
                       "all zero" if not bad else f"nonzero at {bad}")


def check_weights(max_n: int = 64) -> list[CheckResult]:
    worst_w = 0.0
    worst_trace = 0.0
    worst_sq = 0.0
    item1 = item2 = item3 = True
    for n in range(2, max_n + 1):
        for b in range(1, n // 2 + 1):
            g = BatchGeometry(n, b)
            W = ObmWeights(g)
            dense = W.dense()
            worst_w = max(worst_w, float(np.max(np.abs(dense - brute_force_table(g)))))
            worst_trace = max(worst_trace, abs(math.fsum(np.diag(dense)) - 1))
            worst_sq = max(worst_sq, abs(diag_square_sum(g) - math.fsum(np.diag(dense) ** 2)))
            scale = 2 / (b * g.m)
            item1 &= bool(np.all(dense <= 2 / g.m + 1e-15))
            L, J = np.tril_indices(n, -1)
            L, J = L + 1, J + 1
            d10 = W.delta_at("d10", L, J)
            d01 = W.delta_at("d01", L, J)
            d11 = W.delta_at("d11", L, J)
            inner = J <= L - 2
            item2 &= bool(np.all(np.abs(d10[inner]) <= scale + 1e-15) and np.all(np.abs(d01) <= scale + 1e-15))
            off = inner & (J != L - b)
            item3 &= bool(np.all(np.abs(d11[off]) <= 1e-15))
            lag = inner & (J == L - b)
            item3 &= bool(np.allclose(np.abs(d11[lag]), scale, rtol=0, atol=1e-15))
            for l in range(2, n + 1):
                e1, e2 = mart_edge_bounds(g, l)
                item2 &= e1 <= scale + 1e-15 and e2 <= scale + 1e-15
    return [
        CheckResult("closed-form weights vs B^T B", worst_w <= WEIGHT_TOL, f"max gap {worst_w:.2e}"),
        CheckResult("unit trace", worst_trace <= TRACE_TOL, f"max gap {worst_trace:.2e}"),
        CheckResult("sum of squared diagonal weights", worst_sq <= TRACE_TOL, f"max gap {worst_sq:.2e}"),
        CheckResult("weight bound 2/(n-b+1)", item1, "checked"),
        CheckResult("difference bounds (d10 for j <= l-2, d01, edge terms)", item2, "checked"),
        CheckResult("d11 supported on j = l - b only", item3, "checked"),
    ]


def check_variance_oracles() -> CheckResult:
    worst = 0.0
    ok = True
    for kernel in library_kernels():
        pi = stationary(kernel)
        f = CenteredFunction.center(np.linspace(-1, 1, kernel.n_states) ** 3 + np.arange(kernel.n_states) % 2, pi)
        sol = solve_poisson(kernel, pi, f)
        t = certify_mixing(kernel).t_mix
        vals = [sigma2_by_martingale(kernel, pi, f, sol), sigma2_by_autocovariance(kernel, pi, f, t_mix=t),
                sigma2_by_poisson_identity(pi, sol)]
        for a in vals:
            for c in vals:
                worst = max(worst, relative_gap(a, c))
        ok &= sol.residual <= POISSON_TOL and float(np.max(np.abs(sol.g))) <= g_sup_bound(t, f.sup)
    return CheckResult("asymptotic variance oracles", ok and worst <= SIGMA_TOL,
                       f"max pairwise relative gap {worst:.2e}; Poisson residual and g bound {'ok' if ok else 'breached'}")


def run_suite(quick: bool = False) -> list[CheckResult]:
    count = 20 if quick else 100
    results = check_identities(random_instances(count))
    results.append(check_exact_representation())
    results.extend(check_weights(24 if quick else 64))
    results.append(check_variance_oracles())
    return results
