"""Finite-state Markov kernels, stationary laws, mixing times and path sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Sequence

import numba
import numpy as np

from .errors import (
    InvalidInput,
    InvalidKernel,
    MixingNotCertified,
    NoUniqueStationary,
    UnknownKernelName,
)

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10

KERNEL_NAMES = ("two_state", "lazy_cycle", "dirichlet_random", "iid")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TransitionKernel:
    """Row-stochastic matrix over states ``0..n_states-1``."""

    rows: np.ndarray
    label: str = "kernel"

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1] or rows.shape[0] == 0:
            raise InvalidKernel(f"transition matrix must be square and non-empty, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise InvalidKernel("transition matrix has non-finite entries")
        neg = np.argwhere(rows < 0)
        if len(neg):
            i, j = neg[0]
            raise InvalidKernel(f"row {i} has negative entry {float(rows[i, j])!r} at column {j}")
        sums = rows.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if len(bad):
            i = bad[0]
            raise InvalidKernel(f"row {i} sums to {float(sums[i])!r}, expected 1")
        object.__setattr__(self, "rows", _frozen(rows))

    @property
    def n_states(self) -> int:
        return self.rows.shape[0]

    def apply(self, values) -> np.ndarray:
        """Return ``(P h)(z) = sum_y P(z, y) h(y)``."""
        return self.rows @ np.asarray(values, dtype=float)

    def exact_rows(self) -> list[list[Fraction]]:
        """Rows as exact fractions, renormalised so each sums to exactly 1."""
        out = []
        for row in self.rows:
            fr = [Fraction(float(x)) for x in row]
            s = sum(fr)
            out.append([x / s for x in fr])
        return out

    def to_json(self) -> dict:
        return {"label": self.label, "n_states": self.n_states, "rows": self.rows.tolist()}


@dataclass(frozen=True)
class StationaryDistribution:
    probs: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs))

    def mean(self, values) -> float:
        return float(self.probs @ np.asarray(values, dtype=float))


@dataclass(frozen=True)
class MixingCertificate:
    t_mix: int
    contraction_profile: tuple[float, ...]


@dataclass(frozen=True)
class ChainPath:
    """States ``Z_0, ..., Z_n`` of one sampled trajectory."""

    states: np.ndarray
    seed: int
    initial_dist: np.ndarray
    stream: int = 0

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.int64).copy()
        s.setflags(write=False)
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "initial_dist", _frozen(self.initial_dist))

    @property
    def n(self) -> int:
        return len(self.states) - 1


def stationary(kernel: TransitionKernel) -> StationaryDistribution:
    """Solve the balance equations ``pi^T P = pi^T`` with ``sum(pi) = 1``.

    The normalisation row is appended to ``P^T - I`` and the stacked system
    is solved by least squares. A rank-deficient system (more than one closed
    class) raises :class:`NoUniqueStationary`, as does a residual above 1e-10.
    """
    S = kernel.n_states
    A = np.vstack([kernel.rows.T - np.eye(S), np.ones((1, S))])
    rhs = np.zeros(S + 1)
    rhs[-1] = 1.0
    pi, _, rank, sv = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < S or sv[-1] < 1e-10 * sv[0]:
        raise NoUniqueStationary(f"balance equations of {kernel.label!r} have rank {rank} < {S}")
    pi = np.where(np.abs(pi) < 1e-15, 0.0, pi)
    if np.any(pi < -1e-12):
        raise NoUniqueStationary(f"stationary solution of {kernel.label!r} has negative mass")
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    residual = float(np.max(np.abs(pi @ kernel.rows - pi)))
    if residual > STATIONARY_TOL:
        raise NoUniqueStationary(f"stationary residual {residual:.3e} exceeds {STATIONARY_TOL}")
    return StationaryDistribution(pi, residual)


def stationary_exact(rows: Sequence[Sequence[Fraction]]) -> list[Fraction]:
    """Exact stationary law of a rational kernel (see ``TransitionKernel.exact_rows``)."""
    import sympy

    S = len(rows)
    A = sympy.Matrix(S, S, lambda i, j: sympy.Rational(rows[j][i].numerator, rows[j][i].denominator)
                     - (1 if i == j else 0))
    A[S - 1, :] = sympy.ones(1, S)
    rhs = sympy.zeros(S, 1)
    rhs[S - 1] = 1
    if A.rank() < S:
        raise NoUniqueStationary("exact balance equations are singular")
    sol = A.LUsolve(rhs)
    return [Fraction(int(x.p), int(x.q)) for x in sol]


def pairwise_tv(power: np.ndarray) -> float:
    """Largest total-variation distance between two rows of a stochastic matrix."""
    diff = np.abs(power[:, None, :] - power[None, :, :]).sum(axis=-1)
    return 0.5 * float(diff.max())


def certify_mixing(kernel: TransitionKernel, cap: int | None = None) -> MixingCertificate:
    """Smallest ``t <= cap`` whose ``t``-step rows are all within TV 1/4 of each other.

    ``cap`` defaults to ``10 * n_states**2``.
    """
    if cap is None:
        cap = 10 * kernel.n_states ** 2
    if cap < 1:
        raise InvalidInput("cap must be >= 1")
    power = kernel.rows.copy()
    profile = []
    for t in range(1, cap + 1):
        if t > 1:
            power = power @ kernel.rows
        d = pairwise_tv(power)
        profile.append(d)
        if d <= 0.25:
            return MixingCertificate(t, tuple(profile))
    raise MixingNotCertified(
        f"{kernel.label!r}: pairwise TV still {profile[-1]:.4g} > 1/4 after {cap} steps"
    )


def contraction_holds(kernel: TransitionKernel, t_mix: int, horizon: int) -> bool:
    """Check ``sup TV(P^k) <= (1/4)**floor(k / t_mix)`` for ``k = 1..horizon``."""
    power = np.eye(kernel.n_states)
    for k in range(1, horizon + 1):
        power = power @ kernel.rows
        if pairwise_tv(power) > 0.25 ** (k // t_mix) + 1e-12:
            return False
    return True


@numba.njit(cache=True, nogil=True)
def _walk(cum, z0, u, out):
    s = cum.shape[1]
    z = z0
    out[0] = z
    for k in range(u.shape[0]):
        x = u[k]
        i = 0
        while i < s - 1 and x >= cum[z, i]:
            i += 1
        z = i
        out[k + 1] = z


def _check_dist(initial_dist, n_states: int) -> np.ndarray:
    xi = np.asarray(initial_dist, dtype=float)
    if xi.shape != (n_states,):
        raise InvalidInput(f"initial distribution has length {xi.size}, expected {n_states}")
    if np.any(xi < 0) or abs(xi.sum() - 1.0) > ROW_SUM_TOL:
        raise InvalidInput("initial distribution must be nonnegative and sum to 1")
    return xi


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2 ** 64 - 1), int(stream)]))


def sample_states(kernel: TransitionKernel, xi: np.ndarray, n: int, seed: int, stream: int = 0) -> np.ndarray:
    """Raw state array ``Z_0..Z_n`` for replication ``stream`` of ``seed``."""
    rng = _rng(seed, stream)
    u = rng.random(n + 1)
    z0 = min(int(np.searchsorted(np.cumsum(xi), u[0], side="right")), kernel.n_states - 1)
    out = np.empty(n + 1, dtype=np.int64)
    _walk(np.cumsum(kernel.rows, axis=1), z0, u[1:], out)
    return out


def sample_path(kernel: TransitionKernel, initial_dist, n: int, seed: int, stream: int = 0) -> ChainPath:
    """Draw ``Z_0 ~ initial_dist`` then ``n`` transitions.

    The generator is seeded from ``(seed, stream)`` so replications are
    independent and reproducible without shared state.
    """
    if n < 0:
        raise InvalidInput("n must be nonnegative")
    xi = _check_dist(initial_dist, kernel.n_states)
    return ChainPath(sample_states(kernel, xi, n, seed, stream), int(seed), xi, int(stream))


def sample_paths(kernel: TransitionKernel, initial_dist, n: int, seed: int, reps: int,
                 first_stream: int = 0) -> np.ndarray:
    """Array of shape ``(reps, n + 1)``; row ``r`` equals ``sample_path(..., stream=first_stream + r)``."""
    xi = _check_dist(initial_dist, kernel.n_states)
    out = np.empty((reps, n + 1), dtype=np.int64)
    for r in range(reps):
        out[r] = sample_states(kernel, xi, n, seed, first_stream + r)
    return out


def _two_state(a: float, b: float) -> np.ndarray:
    return np.array([[1 - a, a], [b, 1 - b]], dtype=float)


def _lazy_cycle(m: int) -> np.ndarray:
    m = int(m)
    if m < 1:
        raise InvalidInput("lazy_cycle needs m >= 1")
    P = np.zeros((m, m))
    for i in range(m):
        P[i, i] += 0.5
        P[i, (i + 1) % m] += 0.25
        P[i, (i - 1) % m] += 0.25
    return P


def _dirichlet_random(n_states: int, seed: int, alpha: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(int(seed))
    P = rng.dirichlet(np.full(int(n_states), float(alpha)), size=int(n_states))
    # absorb the floating-point remainder so rows pass the 1e-12 check exactly
    P[:, -1] = 1.0 - P[:, :-1].sum(axis=1)
    return P


def _iid(pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    return np.tile(pi, (len(pi), 1))


def kernel_library(name: str, params: Mapping[str, Any] | None = None) -> TransitionKernel:
    """Build one of the named parametric kernels.

    ``two_state(a, b)``, ``lazy_cycle(m)``, ``dirichlet_random(n_states, seed, alpha=1)``
    and ``iid(pi)``.
    """
    params = dict(params or {})
    builders = {
        "two_state": _two_state,
        "lazy_cycle": _lazy_cycle,
        "dirichlet_random": _dirichlet_random,
        "iid": _iid,
    }
    if name not in builders:
        raise UnknownKernelName(f"unknown kernel {name!r}; expected one of {', '.join(KERNEL_NAMES)}")
    try:
        rows = builders[name](**params)
    except TypeError as exc:
        raise InvalidInput(f"bad parameters for {name}: {exc}") from None
    tag = ",".join(f"{k}={v}" for k, v in sorted(params.items()) if k != "pi")
    return TransitionKernel(rows, label=f"{name}({tag})" if tag else name)


def load_kernel(path: str | Path) -> TransitionKernel:
    """Read a kernel file ``{label, n_states, rows}``."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidKernel(f"cannot read kernel file {path}: {exc}") from None
    if not isinstance(data, dict) or "rows" not in data:
        raise InvalidKernel(f"{path}: kernel file needs a 'rows' field")
    rows = np.asarray(data["rows"], dtype=float)
    n_states = data.get("n_states", rows.shape[0])
    if rows.ndim != 2 or rows.shape[0] != n_states:
        raise InvalidKernel(f"{path}: n_states={n_states} does not match rows of shape {rows.shape}")
    return TransitionKernel(rows, label=str(data.get("label", Path(path).stem)))


def dump_kernel(kernel: TransitionKernel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(kernel.to_json(), indent=2) + "\n")
