"""Poisson-equation solutions and three routes to the asymptotic variance."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import InvalidInput, SingularFundamentalMatrix
from .markov import StationaryDistribution, TransitionKernel, certify_mixing, stationary, stationary_exact

POISSON_TOL = 1e-10
CENTER_TOL = 1e-12


@dataclass(frozen=True)
class CenteredFunction:
    """Values of ``f`` over the states, shifted so that ``pi(f) = 0``.

    ``raw`` keeps the values as supplied; ``shift`` is the removed mean.
    """

    values: np.ndarray
    raw: np.ndarray
    shift: float = 0.0
    metadata: dict = field(default_factory=dict, compare=False)

    @classmethod
    def center(cls, raw, pi: StationaryDistribution, **metadata) -> "CenteredFunction":
        raw = np.asarray(raw, dtype=float)
        if raw.shape != pi.probs.shape:
            raise InvalidInput(f"function has {raw.size} values for {pi.probs.size} states")
        if not np.all(np.isfinite(raw)):
            raise InvalidInput("function values must be finite")
        shift = pi.mean(raw)
        values = raw - shift
        # a second pass removes the rounding left by the first subtraction
        values = values - pi.mean(values)
        return cls(values, raw, shift, metadata)

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class PoissonSolution:
    g: np.ndarray
    Pg: np.ndarray
    g_hat: np.ndarray
    sigma2_inf: float
    f: CenteredFunction
    pi: StationaryDistribution

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.g - self.Pg - self.f.values)))

    @property
    def sigma2_reported(self) -> float:
        return max(self.sigma2_inf, 0.0)


def g_sup_bound(t_mix: int, f_sup: float) -> float:
    """Sup-norm bound ``(8/3) * t_mix * ||f||_inf`` on the Poisson solution."""
    return 8.0 / 3.0 * t_mix * f_sup


def solve_poisson(kernel: TransitionKernel, pi: StationaryDistribution, f: CenteredFunction) -> PoissonSolution:
    """Solve ``g - P g = f`` with ``pi(g) = 0`` through the fundamental matrix.

    ``g = (I - P + 1 pi^T)^{-1} f``, recentred against ``pi``. ``g_hat`` is the
    one-step conditional variance ``P g^2 - (P g)^2`` and ``sigma2_inf = pi(g_hat)``.
    ``g_hat`` is returned raw, so round-off may leave it slightly negative.
    """
    if abs(pi.mean(f.values)) > CENTER_TOL * max(1.0, f.sup):
        raise InvalidInput("f is not centred against pi")
    S = kernel.n_states
    Z = np.eye(S) - kernel.rows + np.outer(np.ones(S), pi.probs)
    if np.linalg.cond(Z) > 1e12:
        raise SingularFundamentalMatrix(f"I - P + 1 pi^T of {kernel.label!r} is numerically singular")
    g = np.linalg.solve(Z, f.values)
    g = g - pi.mean(g)
    Pg = kernel.apply(g)
    g_hat = kernel.apply(g * g) - Pg * Pg
    sol = PoissonSolution(g, Pg, g_hat, pi.mean(g_hat), f, pi)
    if sol.residual > POISSON_TOL * max(1.0, f.sup):
        raise SingularFundamentalMatrix(f"Poisson residual {sol.residual:.3e} too large")
    return sol


def solve(kernel: TransitionKernel, raw_f) -> PoissonSolution:
    """Convenience wrapper: stationary law, centring and solve in one call."""
    pi = stationary(kernel)
    return solve_poisson(kernel, pi, CenteredFunction.center(raw_f, pi))


def _tail_steps(t_mix: int, scale: float, tol: float) -> int:
    """Smallest K with ``scale * (4/3) * t_mix * (1/4)**floor(K / t_mix) < tol``."""
    if scale <= 0:
        return 0
    blocks = max(0, math.floor(math.log(scale * 4.0 / 3.0 * t_mix / tol, 4)) + 1)
    return blocks * t_mix


def truncated_series_g(kernel: TransitionKernel, f: CenteredFunction, t_mix: int, tol: float = 1e-10) -> np.ndarray:
    """``sum_{k=0}^{K} P^k f`` with K set by the geometric mixing bound."""
    K = _tail_steps(t_mix, 2.0 * f.sup, tol)
    term = f.values.copy()
    acc = [term]
    for _ in range(K):
        term = kernel.apply(term)
        acc.append(term)
    return np.array([math.fsum(col) for col in np.array(acc).T])


def autocovariances(kernel: TransitionKernel, pi: StationaryDistribution, f: CenteredFunction, lags: int) -> np.ndarray:
    """``rho(l) = sum_z pi(z) f(z) (P^l f)(z)`` for ``l = 0..lags``."""
    out = np.empty(lags + 1)
    h = f.values.copy()
    for ell in range(lags + 1):
        out[ell] = float(np.dot(pi.probs * f.values, h))
        h = kernel.apply(h)
    return out


def sigma2_by_autocovariance(kernel: TransitionKernel, pi: StationaryDistribution, f: CenteredFunction,
                             tail_tol: float = 1e-14, t_mix: int | None = None) -> float:
    """``rho(0) + 2 sum_{l>=1} rho(l)``, truncated once the mixing tail bound is below ``tail_tol``."""
    if tail_tol <= 0:
        raise InvalidInput("tail_tol must be positive")
    if f.sup == 0:
        return 0.0
    if t_mix is None:
        t_mix = certify_mixing(kernel).t_mix
    # |rho(l)| <= 2 ||f||^2 (1/4)^floor(l/t); the factor 2 of the series doubles it
    L = _tail_steps(t_mix, 4.0 * f.sup ** 2, tail_tol)
    rho = autocovariances(kernel, pi, f, max(L, 1))
    return math.fsum([rho[0]] + [2.0 * r for r in rho[1:]])


def sigma2_by_martingale(kernel: TransitionKernel, pi: StationaryDistribution, f: CenteredFunction,
                         poisson: PoissonSolution | None = None) -> float:
    """Stationary mean of the conditional variance ``g_hat``."""
    if poisson is None:
        poisson = solve_poisson(kernel, pi, f)
    return math.fsum(pi.probs * poisson.g_hat)


def sigma2_by_poisson_identity(pi: StationaryDistribution, poisson: PoissonSolution) -> float:
    """``pi(f^2) + 2 pi(f P g)``, the autocovariance series summed through ``g``."""
    f = poisson.f.values
    return math.fsum(pi.probs * f * f) + 2.0 * math.fsum(pi.probs * f * poisson.Pg)


@dataclass(frozen=True)
class ExactPoisson:
    """Rational Poisson data on an exactly renormalised kernel."""

    rows: list
    pi: list
    f: list
    g: list
    Pg: list


def solve_poisson_exact(kernel: TransitionKernel, raw_f) -> ExactPoisson:
    """Exact counterpart of :func:`solve` in rational arithmetic (small state spaces)."""
    import sympy

    rows = kernel.exact_rows()
    S = len(rows)
    pi = stationary_exact(rows)
    raw = [Fraction(float(x)) for x in raw_f]
    mean = sum(p * x for p, x in zip(pi, raw))
    f = [x - mean for x in raw]

    def rat(x: Fraction):
        return sympy.Rational(x.numerator, x.denominator)

    Z = sympy.Matrix(S, S, lambda i, j: (1 if i == j else 0) - rat(rows[i][j]) + rat(pi[j]))
    if Z.rank() < S:
        raise SingularFundamentalMatrix("exact fundamental matrix is singular")
    sol = Z.LUsolve(sympy.Matrix([rat(x) for x in f]))
    g = [Fraction(int(x.p), int(x.q)) for x in sol]
    Pg = [sum(r * y for r, y in zip(row, g)) for row in rows]
    return ExactPoisson(rows, pi, f, g, Pg)


def load_function(path: str | Path, pi: StationaryDistribution) -> CenteredFunction:
    """Read ``{"values": [...]}`` and centre against ``pi``; original values kept in metadata."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInput(f"cannot read function file {path}: {exc}") from None
    if not isinstance(data, dict) or "values" not in data:
        raise InvalidInput(f"{path}: function file needs a 'values' field")
    return CenteredFunction.center(data["values"], pi, source=str(path), original=list(data["values"]))
