"""Seeded Monte Carlo harness for OBM error moments and the accompanying bounds.

Replication ``r`` of any experiment draws its path from the stream seeded by
``(base_seed, r)``. Replications are processed in fixed-size chunks and
reduced in replication order, so results do not depend on the worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .decomposition import decompose
from .errors import InsufficientGrid, InvalidInput, RegimeViolation
from .estimator import obm_batch
from .markov import TransitionKernel, certify_mixing, kernel_library, load_kernel, sample_states, stationary
from .poisson import CenteredFunction, PoissonSolution, solve_poisson
from .weights import BatchGeometry, ObmWeights

WORKERS_ENV = "OBMLAB_WORKERS"
CHUNK = 32
BOOTSTRAP = 1000
HEAVY_TAIL_P = 8

MOMENT_COLUMNS = ("n", "b_n", "p", "R", "moment", "moment_se_lo", "moment_se_hi", "theory_rate", "base_seed")
SLOPE_COLUMNS = ("axis", "slope", "ci_lo", "ci_hi")
AXES = ("n_with_bn_sqrt_n", "bn_at_fixed_n", "p_at_fixed_geometry")


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def _chunked_map(fn, reps: int, workers: int | None) -> list:
    """Apply ``fn(start, stop)`` to fixed chunks of ``range(reps)``; results in chunk order."""
    bounds = [(s, min(s + CHUNK, reps)) for s in range(0, reps, CHUNK)]
    nw = worker_count(workers)
    if nw == 1 or len(bounds) == 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=nw) as ex:
        return list(ex.map(lambda ab: fn(*ab), bounds))


def _paths(kernel: TransitionKernel, xi: np.ndarray, n: int, seed: int, start: int, stop: int) -> np.ndarray:
    out = np.empty((stop - start, n + 1), dtype=np.int64)
    for i, r in enumerate(range(start, stop)):
        out[i] = sample_states(kernel, xi, n, seed, r)
    return out


def _bootstrap_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2 ** 64 - 1), *key], spawn_key=(0xB007,)))


def empirical_moment(values: np.ndarray, p: float) -> float:
    """``(mean |x|^p)^(1/p)``."""
    a = np.abs(np.asarray(values, dtype=float))
    return math.fsum(a ** p / len(a)) ** (1.0 / p)


def bootstrap_interval(values: np.ndarray, p: float, rng: np.random.Generator,
                       n_boot: int = BOOTSTRAP, level: float = 0.95) -> tuple[float, float, float]:
    """Percentile interval and standard error of the empirical p-th moment."""
    a = np.abs(np.asarray(values, dtype=float)) ** p
    idx = rng.integers(0, len(a), size=(n_boot, len(a)))
    boots = a[idx].mean(axis=1) ** (1.0 / p)
    alpha = (1 - level) / 2
    lo, hi = np.quantile(boots, [alpha, 1 - alpha])
    return float(lo), float(hi), float(boots.std(ddof=1))


def theory_rate(t_mix: int, p: float, n: int, b: int) -> float:
    """Constant-free right-hand side of the OBM moment bound."""
    return p * t_mix ** 3 / math.sqrt(n) + p ** 2 * t_mix ** 2 * math.sqrt(b / n) + p ** 2 * t_mix ** 2 / math.sqrt(b)


# ---------------------------------------------------------------------------
# experiment specification


def _resolve_kernel(ref, base: Path) -> TransitionKernel:
    if isinstance(ref, str):
        return load_kernel(base / ref)
    if isinstance(ref, dict) and "name" in ref:
        return kernel_library(ref["name"], ref.get("params", {}))
    if isinstance(ref, dict) and "rows" in ref:
        return TransitionKernel(np.asarray(ref["rows"], dtype=float), label=ref.get("label", "inline"))
    raise InvalidInput(f"cannot interpret kernel reference {ref!r}")


def _resolve_f(ref, base: Path) -> list:
    if isinstance(ref, str):
        data = json.loads((base / ref).read_text())
        return list(data["values"])
    if isinstance(ref, dict):
        return list(ref["values"])
    return list(ref)


def _resolve_grid(ref) -> list[tuple[int, int]]:
    if isinstance(ref, dict):
        ns = [int(x) for x in ref["n"]]
        bn = ref.get("bn", "sqrt")
        if bn == "sqrt":
            return [(n, BatchGeometry.default(n).b) for n in ns]
        if isinstance(bn, list):
            return [(n, int(b)) for n in ns for b in bn]
        return [(n, int(bn)) for n in ns]
    return [(int(n), int(b)) for n, b in ref]


@dataclass
class ExperimentSpec:
    kernel: TransitionKernel
    f: Sequence[float]
    grid: list[tuple[int, int]]
    p_list: list[float] = field(default_factory=lambda: [2, 4])
    replications: int = 500
    base_seed: int = 0
    initial_dist: np.ndarray | None = None
    kernel_ref: object = None
    f_ref: object = None

    def __post_init__(self):
        if self.replications < 2:
            raise InvalidInput("need at least 2 replications")
        if any(p < 2 for p in self.p_list):
            raise InvalidInput("moment orders must be >= 2")
        self.grid = [(int(n), int(b)) for n, b in self.grid]
        for n, b in self.grid:
            BatchGeometry(n, b)

    @property
    def regime_flags(self) -> list[bool]:
        return [BatchGeometry(n, b).theorem_regime for n, b in self.grid]

    @classmethod
    def from_json(cls, data: dict, base_dir: str | Path = ".") -> "ExperimentSpec":
        base = Path(base_dir)
        try:
            kernel = _resolve_kernel(data["kernel"], base)
            f = _resolve_f(data["f"], base)
            grid = _resolve_grid(data["grid"])
        except KeyError as exc:
            raise InvalidInput(f"experiment spec is missing {exc}") from None
        xi = data.get("initial_dist", "stationary")
        if isinstance(xi, dict) and "point" in xi:
            xi_arr = np.zeros(kernel.n_states)
            xi_arr[int(xi["point"])] = 1.0
        elif xi == "stationary" or xi is None:
            xi_arr = None
        else:
            xi_arr = np.asarray(xi, dtype=float)
        return cls(kernel, f, grid,
                   p_list=[float(p) for p in data.get("p_list", [2, 4])],
                   replications=int(data.get("replications", 500)),
                   base_seed=int(data.get("base_seed", 0)),
                   initial_dist=xi_arr, kernel_ref=data["kernel"], f_ref=data["f"])

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentSpec":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInput(f"cannot read experiment spec {path}: {exc}") from None
        return cls.from_json(data, path.parent)


@dataclass(frozen=True)
class MomentRow:
    n: int
    b_n: int
    p: float
    R: int
    moment: float
    moment_se_lo: float
    moment_se_hi: float
    theory_rate: float
    base_seed: int
    boot_se: float = float("nan")

    @property
    def heavy_tail(self) -> bool:
        return self.p >= HEAVY_TAIL_P and self.moment_se_lo > 0 and self.moment_se_hi / self.moment_se_lo > 2


@dataclass
class MomentReport:
    rows: list[MomentRow]
    sigma2_inf: float = float("nan")
    t_mix: int = 0
    errors: dict = field(default_factory=dict, repr=False)

    def select(self, **kw) -> list[MomentRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(MOMENT_COLUMNS)
        for r in self.rows:
            w.writerow([r.n, r.b_n, _num(r.p), r.R, _num(r.moment), _num(r.moment_se_lo),
                        _num(r.moment_se_hi), _num(r.theory_rate), r.base_seed])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _num(x: float) -> str:
    return repr(float(x))


def _resolve_xi(spec: ExperimentSpec, pi) -> np.ndarray:
    return pi.probs.copy() if spec.initial_dist is None else np.asarray(spec.initial_dist, dtype=float)


def simulate_errors(kernel: TransitionKernel, poisson: PoissonSolution, xi: np.ndarray, n: int, b: int,
                    reps: int, seed: int, workers: int | None = None) -> np.ndarray:
    """``sigma_hat^2_OBM - sigma^2_inf`` for replications ``0..reps-1``."""
    fvals = poisson.f.values

    def chunk(start, stop):
        Z = _paths(kernel, xi, n, seed, start, stop)
        return obm_batch(fvals[Z[:, 1:]], b)

    est = np.concatenate(_chunked_map(chunk, reps, workers))
    return est - poisson.sigma2_inf


def run_moment_experiment(spec: ExperimentSpec, workers: int | None = None) -> MomentReport:
    """Empirical ``E^{1/p} |sigma_hat^2 - sigma^2_inf|^p`` on every grid point."""
    kernel = spec.kernel
    pi = stationary(kernel)
    f = CenteredFunction.center(spec.f, pi)
    poisson = solve_poisson(kernel, pi, f)
    t_mix = certify_mixing(kernel).t_mix
    xi = _resolve_xi(spec, pi)
    rows, errors = [], {}
    for gi, (n, b) in enumerate(spec.grid):
        err = simulate_errors(kernel, poisson, xi, n, b, spec.replications, spec.base_seed, workers)
        errors[(n, b)] = err
        for p in spec.p_list:
            rng = _bootstrap_rng(spec.base_seed, gi, int(round(p * 1000)))
            lo, hi, se = bootstrap_interval(err, p, rng)
            rows.append(MomentRow(n, b, p, spec.replications, empirical_moment(err, p), lo, hi,
                                  theory_rate(t_mix, p, n, b), spec.base_seed, se))
    return MomentReport(rows, poisson.sigma2_inf, t_mix, errors)


# ---------------------------------------------------------------------------
# rate fitting


@dataclass(frozen=True)
class RateFit:
    axis: str
    slope: float
    intercept: float
    ci_lo: float
    ci_hi: float
    jackknife_se: float
    x: tuple
    y: tuple
    p: float | None = None

    @property
    def label(self) -> str:
        return self.axis if self.p is None else f"{self.axis}[p={self.p:g}]"


def fit_loglog(x, y, axis: str = "custom", z: float = 1.96) -> RateFit:
    """Least-squares slope of ``log y`` on ``log x`` with a leave-one-out jackknife interval."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 4:
        raise InsufficientGrid(f"need at least 4 points along {axis}, got {len(x)}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise InsufficientGrid("log-log fit needs positive values")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    k = len(x)
    loo = np.array([np.polyfit(np.delete(lx, i), np.delete(ly, i), 1)[0] for i in range(k)])
    se = math.sqrt((k - 1) / k * float(np.sum((loo - loo.mean()) ** 2)))
    return RateFit(axis, float(slope), float(intercept), float(slope - z * se), float(slope + z * se), se,
                   tuple(x), tuple(y))


def fit_rate(report: MomentReport, axis: str, p: float = 2, n: int | None = None,
             b: int | None = None) -> RateFit:
    """Fit a scaling exponent along one axis of the report grid.

    ``n_with_bn_sqrt_n``: moment against ``n`` over points with ``b = ceil(sqrt(n))``.
    ``bn_at_fixed_n``: moment against ``b`` at a fixed ``n`` (default: the ``n`` with most ``b`` values).
    ``p_at_fixed_geometry``: moment against ``p`` at a fixed ``(n, b)``.
    """
    if axis == "n_with_bn_sqrt_n":
        pts = sorted((r.n, r.moment) for r in report.rows
                     if r.p == p and r.b_n == BatchGeometry.default(r.n).b)
    elif axis == "bn_at_fixed_n":
        if n is None:
            counts = {}
            for r in report.rows:
                if r.p == p:
                    counts[r.n] = counts.get(r.n, 0) + 1
            if not counts:
                raise InsufficientGrid("no rows for this p")
            n = max(counts, key=lambda k: (counts[k], k))
        pts = sorted((r.b_n, r.moment) for r in report.rows if r.p == p and r.n == n)
    elif axis == "p_at_fixed_geometry":
        if n is None or b is None:
            r0 = report.rows[0] if report.rows else None
            if r0 is None:
                raise InsufficientGrid("empty report")
            n, b = r0.n, r0.b_n
        pts = sorted((r.p, r.moment) for r in report.rows if r.n == n and r.b_n == b)
    else:
        raise ValueError(f"unknown axis {axis!r}; expected one of {AXES}")
    if len(pts) < 4:
        raise InsufficientGrid(f"need at least 4 points along {axis}, got {len(pts)}")
    x, y = zip(*pts)
    fit = fit_loglog(x, y, axis)
    return fit if axis == "p_at_fixed_geometry" else replace(fit, p=float(p))


def slopes_csv(fits: Iterable[RateFit], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SLOPE_COLUMNS)
    for fit in fits:
        w.writerow([fit.label, _num(fit.slope), _num(fit.ci_lo), _num(fit.ci_hi)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------------------
# bounds with printed constants


def rosenthal_rhs(t_mix: int, p: float, f_sup: float, betas) -> float:
    """Right-hand side of the weighted Rosenthal-type inequality.

    ``(16/3) t sqrt(p) ||f|| (sum_{k>=2} beta_k^2)^{1/2}
    + (8/3) t (|beta_1| + |beta_n| + sum |beta_{k+1} - beta_k|) ||f||``.
    For a single coefficient ``beta_n`` is ``beta_1`` and there are no differences.
    """
    if p < 2:
        raise InvalidInput("p must be >= 2")
    beta = np.asarray(betas, dtype=float)
    if beta.size == 0:
        return 0.0
    quad = math.sqrt(math.fsum(beta[1:] ** 2))
    var = abs(beta[0]) + abs(beta[-1]) + math.fsum(np.abs(np.diff(beta)))
    return 16.0 / 3.0 * t_mix * math.sqrt(p) * f_sup * quad + 8.0 / 3.0 * t_mix * var * f_sup


@dataclass(frozen=True)
class RosenthalCheck:
    lhs: float
    rhs: float
    holds: bool
    ci_lo: float
    ci_hi: float
    p: float
    seed: int


def weighted_sums(kernel: TransitionKernel, f, betas, reps: int, seed: int,
                  initial_dist=None, workers: int | None = None) -> np.ndarray:
    """``sum_k beta_k (f(Z_k) - pi(f))`` for replications ``0..reps-1``."""
    pi = stationary(kernel)
    fc = f if isinstance(f, CenteredFunction) else CenteredFunction.center(f, pi)
    beta = np.asarray(betas, dtype=float)
    n = len(beta)
    xi = pi.probs if initial_dist is None else np.asarray(initial_dist, dtype=float)

    def chunk(start, stop):
        Z = _paths(kernel, xi, n, seed, start, stop)
        return fc.values[Z[:, 1:]] @ beta

    return np.concatenate(_chunked_map(chunk, reps, workers))


def check_rosenthal(kernel: TransitionKernel, f, betas, p: float, R: int, seed: int,
                    initial_dist=None, t_mix: int | None = None, sums: np.ndarray | None = None) -> RosenthalCheck:
    """Empirical p-norm of the weighted sum against :func:`rosenthal_rhs`."""
    pi = stationary(kernel)
    fc = f if isinstance(f, CenteredFunction) else CenteredFunction.center(f, pi)
    if t_mix is None:
        t_mix = certify_mixing(kernel).t_mix
    if sums is None:
        sums = weighted_sums(kernel, fc, betas, R, seed, initial_dist)
    lhs = empirical_moment(sums, p)
    lo, hi, _ = bootstrap_interval(sums, p, _bootstrap_rng(seed, int(p * 1000), len(betas)))
    rhs = rosenthal_rhs(t_mix, p, fc.sup, betas)
    return RosenthalCheck(lhs, rhs, lhs <= rhs, lo, hi, p, seed)


def subgaussian_moment_bound(p: float, sigma: float) -> float:
    """p-norm bound ``(2 p^{p/2} sigma^p)^{1/p} = 2^{1/p} sqrt(p) sigma``."""
    if p < 2:
        raise InvalidInput("p must be >= 2")
    if sigma < 0:
        raise InvalidInput("sigma must be nonnegative")
    return 2.0 ** (1.0 / p) * math.sqrt(p) * sigma


def remainder_bound_formulas(t_mix: int, p: float, n: int, b: int) -> dict:
    """Constant-free rate columns for the remainder terms and the final bound."""
    g = BatchGeometry(n, b)
    if not g.theorem_regime:
        raise RegimeViolation(f"bounds need n >= 2 b_n + 1 (n={n}, b_n={b})")
    t2 = t_mix ** 2
    m = g.m
    rem = p * t2 * math.sqrt(b) / m + t2 / b
    mart = t2 / b
    total = p * t2 / math.sqrt(b) + p * t2 * math.sqrt(b) / m + t2 / b
    return {
        "rem": rem,
        "mart": mart,
        "total": total,
        "D1": (p * t2 + math.sqrt(p) * t_mix ** 3) / math.sqrt(m),
        "D2": p ** 2 * t2 * math.sqrt(b) / math.sqrt(m),
        "theorem": theory_rate(t_mix, p, n, b),
    }


# ---------------------------------------------------------------------------
# remainder moments from full decompositions


@dataclass(frozen=True)
class LedgerMomentRow:
    n: int
    b_n: int
    p: float
    R_bar: float
    R_mart: float
    R_rem: float
    rate_total: float
    rate_mart: float
    rate_rem: float


def ledger_moments(kernel: TransitionKernel, f, grid: Sequence[tuple[int, int]], p: float, R: int, seed: int,
                   initial_dist=None) -> list[LedgerMomentRow]:
    """Empirical p-norms of ``R_bar``, ``R_mart`` and ``R_rem`` next to their rate columns."""
    pi = stationary(kernel)
    fc = f if isinstance(f, CenteredFunction) else CenteredFunction.center(f, pi)
    poisson = solve_poisson(kernel, pi, fc)
    t_mix = certify_mixing(kernel).t_mix
    xi = pi.probs if initial_dist is None else np.asarray(initial_dist, dtype=float)
    out = []
    for n, b in grid:
        W = ObmWeights(BatchGeometry(n, b))
        vals = np.array([[getattr(led, k) for k in ("R_bar", "R_mart", "R_rem")]
                         for led in (decompose(sample_states(kernel, xi, n, seed, r), fc, W, poisson)
                                     for r in range(R))])
        rates = remainder_bound_formulas(t_mix, p, n, b)
        out.append(LedgerMomentRow(n, b, p, *(empirical_moment(vals[:, i], p) for i in range(3)),
                                   rates["total"], rates["mart"], rates["rem"]))
    return out
