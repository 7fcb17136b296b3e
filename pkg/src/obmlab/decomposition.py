"""Path-wise martingale decomposition of a weighted quadratic form.

For a path ``Z_0..Z_n``, a centred ``f`` and its Poisson solution ``g`` the
quadratic form

    U_n = sum_{l=1}^{n} sum_{j=1}^{l} w(l, j) f(Z_l) f(Z_j)

splits into a diagonal martingale part, an off-diagonal martingale part and a
remainder ``R_bar``. The remainder is further rearranged into lagged sums of
the martingale increments ``M_l = g(Z_l) - Pg(Z_{l-1})`` and ``t_l = Pg(Z_l)``.

Every named term is summed from its own defining expression; none is obtained
by subtracting others, so the residuals reported in the ledger are genuine
checks of the algebra. Sums are accumulated lag by lag (``k = l - j``) with
``math.fsum`` in floating point and exactly with ``Fraction`` in rational mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DimensionMismatch, TraceNotOne
from .markov import ChainPath
from .poisson import ExactPoisson, PoissonSolution

LEDGER_FIELDS = (
    "U_n", "diag_term", "offdiag_term", "R_bar", "T1", "T2", "T3",
    "rep_d10", "rep_d01", "rep_d11", "rep_d11_printed_range",
    "S1", "S2", "R_mart", "rem1", "rem2", "rem3", "rem4", "rem5", "R_rem",
)


def _states(path) -> np.ndarray:
    return path.states if isinstance(path, ChainPath) else np.asarray(path, dtype=np.int64)


class _Acc:
    """Named accumulators fed with vectors of summands."""

    def __init__(self, exact: bool):
        self.exact = exact
        self.parts: dict[str, list] = {}

    def add(self, name: str, vec) -> None:
        vec = np.atleast_1d(vec)
        if self.exact:
            s = sum(vec.tolist(), Fraction(0))
        else:
            s = math.fsum(np.asarray(vec, dtype=float))
        self.parts.setdefault(name, []).append(s)

    def total(self, name: str):
        vals = self.parts.get(name, [])
        if self.exact:
            return sum(vals, Fraction(0))
        return math.fsum(vals)


@dataclass(frozen=True)
class PathValues:
    """Time-indexed arrays ``0..n``; entry 0 of ``X`` and ``M`` is padding."""

    X: np.ndarray
    g: np.ndarray
    t: np.ndarray
    M: np.ndarray
    g_hat: np.ndarray
    exact: bool

    @property
    def n(self) -> int:
        return len(self.X) - 1


def path_values(path, poisson: PoissonSolution | ExactPoisson, n: int | None = None) -> PathValues:
    z = _states(path)
    if n is not None:
        if len(z) - 1 < n:
            raise DimensionMismatch(f"path has {len(z) - 1} steps, need {n}")
        z = z[: n + 1]
    if isinstance(poisson, ExactPoisson):
        g_sq = [gi * gi for gi in poisson.g]
        ghat_state = [sum(r * y for r, y in zip(row, g_sq)) - p * p for row, p in zip(poisson.rows, poisson.Pg)]

        def take(seq):
            out = np.empty(len(z), dtype=object)
            out[:] = [seq[s] for s in z]
            return out

        X, g, t, gh = take(poisson.f), take(poisson.g), take(poisson.Pg), take(ghat_state)
        exact = True
    else:
        X, g, t, gh = (poisson.f.values[z], poisson.g[z], poisson.Pg[z], poisson.g_hat[z])
        exact = False
    M = g.copy()
    M[1:] = g[1:] - t[:-1]
    M[0] = 0
    X = X.copy()
    X[0] = 0
    return PathValues(X, g, t, M, gh, exact)


@dataclass(frozen=True)
class MartingaleIncrements:
    """``M[l-1]`` holds ``M_l = g(Z_l) - Pg(Z_{l-1})``; ``t[l]`` holds ``Pg(Z_l)``."""

    M: np.ndarray
    t: np.ndarray

    def delta_M(self, l: int, j: int):
        if not 1 <= j <= l <= len(self.M):
            raise IndexError(f"Delta M({l}, {j}) needs 1 <= j <= l <= {len(self.M)}")
        return self.M[l - 1] * self.M[j - 1]


def increments(path, poisson: PoissonSolution | ExactPoisson) -> MartingaleIncrements:
    pv = path_values(path, poisson)
    return MartingaleIncrements(pv.M[1:].copy(), pv.t.copy())


def _band_sum(X, weights, n: int, exact: bool):
    acc = _Acc(exact)
    for k in range(0, min(n - 1, weights.band) + 1):
        L = np.arange(1 + k, n + 1)
        acc.add("U", weights.at(L, L - k) * X[L] * X[L - k])
    return acc.total("U")


def quadratic_form(path, f, weights) -> float:
    """``sum_{l} sum_{j<=l} w(l, j) f(Z_l) f(Z_j)`` over the nonzero band.

    ``f`` is a :class:`~obmlab.poisson.CenteredFunction` or a raw value array;
    ``weights`` is an :class:`~obmlab.weights.ObmWeights` or
    :class:`~obmlab.weights.DenseWeights`. Only ``Z_1..Z_n`` with ``n = weights.n``
    are used.
    """
    z = _states(path)
    n = weights.n
    if len(z) - 1 < n:
        raise DimensionMismatch(f"path has {len(z) - 1} steps, weights need {n}")
    vals = getattr(f, "values", f)
    X = np.zeros(n + 1, dtype=object if weights.exact else float)
    X[1:] = np.asarray(vals)[z[1:n + 1]]
    return _band_sum(X, weights, n, weights.exact)


@dataclass
class DecompositionLedger:
    U_n: float
    diag_term: float
    offdiag_term: float
    R_bar: float
    T1: float
    T2: float
    T3: float
    rep_d10: float
    rep_d01: float
    rep_d11: float
    rep_d11_printed_range: float
    S1: float
    S2: float
    R_mart: float
    rem1: float
    rem2: float
    rem3: float
    rem4: float
    rem5: float
    R_rem: float
    n: int = 0
    exact: bool = False
    values: PathValues | None = field(default=None, repr=False, compare=False)
    weights: object = field(default=None, repr=False, compare=False)

    @property
    def rep_terms(self):
        return self.rep_d10 + self.rep_d01 + self.rep_d11

    @property
    def residuals(self) -> dict:
        """Identity gaps; each is zero when the corresponding identity holds."""
        return {
            "quadratic_form": self.U_n - self.diag_term - self.offdiag_term - self.R_bar,
            "remainder": self.T1 + self.T2 + self.T3 - self.R_bar,
            "representation": self.rep_terms + self.R_mart + self.R_rem - self.R_bar,
            "representation_printed_range": (self.rep_d10 + self.rep_d01 + self.rep_d11_printed_range
                                             + self.R_mart + self.R_rem - self.R_bar),
        }

    def scaled_residuals(self) -> dict:
        """Residuals divided by ``1 + |U_n|`` or ``1 + |R_bar|``, matching the tolerances."""
        r = self.residuals
        su = 1 + abs(self.U_n)
        sr = 1 + abs(self.R_bar)
        return {
            "quadratic_form": float(abs(r["quadratic_form"]) / su),
            "remainder": float(abs(r["remainder"]) / sr),
            "representation": float(abs(r["representation"]) / sr),
            "representation_printed_range": float(abs(r["representation_printed_range"]) / sr),
        }

    def to_json(self) -> dict:
        def conv(x):
            if isinstance(x, Fraction):
                return {"float": float(x), "exact": f"{x.numerator}/{x.denominator}"}
            return float(x)

        out = {name: conv(getattr(self, name)) for name in LEDGER_FIELDS}
        out["rep_terms"] = conv(self.rep_terms)
        out["n"] = self.n
        out["exact"] = self.exact
        out["residuals"] = {k: conv(v) for k, v in self.residuals.items()}
        out["scaled_residuals"] = self.scaled_residuals()
        return out


def decompose(path, f, weights, poisson: PoissonSolution | ExactPoisson) -> DecompositionLedger:
    """Evaluate every term of the decomposition for one path.

    ``f`` is only used for a consistency check; the path values of ``f`` are
    taken from ``poisson`` (``f = g - Pg``). Passing an
    :class:`~obmlab.poisson.ExactPoisson` together with exact weights gives
    a fully rational ledger.
    """
    n = weights.n
    pv = path_values(path, poisson, n)
    if f is not None and not isinstance(poisson, ExactPoisson):
        if len(getattr(f, "values", f)) != len(poisson.g):
            raise DimensionMismatch("f and the Poisson solution live on different state spaces")
    exact = pv.exact
    if exact and not weights.exact:
        raise DimensionMismatch("exact Poisson data needs exact weights")
    X, g, t, M = pv.X, pv.g, pv.t, pv.M
    at = weights.at
    acc = _Acc(exact)

    K = min(n - 1, weights.band + 1)
    for k in range(0, K + 1):
        L = np.arange(1 + k, n + 1)
        J = L - k
        w = at(L, J)
        acc.add("U", w * X[L] * X[J])
        if k == 0:
            acc.add("diag", w * M[L] * M[L])
        else:
            acc.add("offdiag", w * M[L] * M[J])
        t1 = w * g[J] * (t[L - 1] - t[L])
        t2 = w * g[L] * (t[J - 1] - t[J])
        t3 = w * (t[J] * t[L] - t[J - 1] * t[L - 1])
        acc.add("T1", t1)
        acc.add("T2", t2)
        acc.add("T3", t3)
        acc.add("R_bar", w * (g[J] * (t[L - 1] - t[L]) + g[L] * (t[J - 1] - t[J])
                              + t[J] * t[L] - t[J - 1] * t[L - 1]))
        if k >= 1:
            acc.add("rep_d01", M[L] * weights.delta_at("d01", L, J) * t[J - 1])
        if k >= 2:
            acc.add("rep_d10", t[L - 1] * weights.delta_at("d10", L, J) * M[J])
            c = weights.delta_at("d11", L, J) * t[L - 1] * t[J - 1]
            acc.add("rep_d11", c)
            acc.add("rep_d11_printed", c[L <= n - 1])

    ell = np.arange(1, n + 1)
    diag = at(ell, ell)
    if n >= 2:
        l2 = np.arange(2, n + 1)
        acc.add("S1", weights.delta_at("d10", l2, l2 - 1) * t[l2 - 1] * M[l2 - 1])
        acc.add("rem4", weights.delta_at("dm", l2, l2) * t[l2 - 1] * t[l2 - 2])
    acc.add("S1", -diag * M[ell] * t[ell])
    acc.add("S2", (weights.delta_at("d01", ell, ell) + diag) * M[ell] * t[ell - 1])

    wn = at(np.full(n, n), ell)
    acc.add("rem1", -t[n] * wn * M[ell])
    if n >= 3:
        l3 = np.arange(2, n)
        acc.add("rem2", (at(l3, l3) + at(l3 - 1, l3 - 1) - at(l3, l3 - 1)) * t[l3 - 1] ** 2)
    w = weights.w
    rem3 = [w(1, 1) * t[0] ** 2, (w(n, n) + w(n - 1, n - 1)) * t[n - 1] ** 2, w(n, n) * t[n] ** 2]
    if n >= 2:
        rem3.append(w(n, n - 2) * t[n - 1] * t[n - 2])
    for j in range(max(1, n - 2), n + 1):
        rem3.append(-w(n, j) * t[n - 1] * t[j])
    acc.add("rem3", np.array(rem3, dtype=object if exact else float))
    acc.add("rem5", -t[n] * weights.delta_at("d01", np.full(n, n), ell) * t[ell - 1])

    T = acc.total
    S1, S2 = T("S1"), T("S2")
    rems = [T(f"rem{i}") for i in range(1, 6)]
    if exact:
        R_mart, R_rem = S1 + S2, sum(rems, Fraction(0))
    else:
        R_mart, R_rem = math.fsum([S1, S2]), math.fsum(rems)
    return DecompositionLedger(
        U_n=T("U"), diag_term=T("diag"), offdiag_term=T("offdiag"), R_bar=T("R_bar"),
        T1=T("T1"), T2=T("T2"), T3=T("T3"),
        rep_d10=T("rep_d10"), rep_d01=T("rep_d01"), rep_d11=T("rep_d11"),
        rep_d11_printed_range=T("rep_d11_printed"),
        S1=S1, S2=S2, R_mart=R_mart,
        rem1=rems[0], rem2=rems[1], rem3=rems[2], rem4=rems[3], rem5=rems[4], R_rem=R_rem,
        n=n, exact=exact, values=pv, weights=weights,
    )


def d11_lagged_sum(ledger: DecompositionLedger, b: int):
    """The d11 double sum evaluated only on the lag-``b`` diagonal ``j = l - b``.

    For OBM weights every other d11 entry with ``j <= l - 2`` vanishes, so this
    equals ``ledger.rep_d11``.
    """
    n, t, W = ledger.n, ledger.values.t, ledger.weights
    if b < 2 or n < b + 1:
        return Fraction(0) if ledger.exact else 0.0
    L = np.arange(max(3, b + 1), n + 1)
    acc = _Acc(ledger.exact)
    acc.add("c", W.delta_at("d11", L, L - b) * t[L - 1] * t[L - b - 1])
    return acc.total("c")


@dataclass(frozen=True)
class TheoremTerms:
    D1: float
    D11: float
    D12: float
    D2: float

    @property
    def split_residual(self) -> float:
        return self.D11 + self.D12 - self.D1


def theorem_terms(ledger: DecompositionLedger, sigma2_inf) -> TheoremTerms:
    """Split of ``sigma_hat^2 - sigma^2`` into ``D1 = D11 + D12`` and ``D2``.

    Needs OBM-normalised weights (unit trace): ``D1 = diag_term - sigma2_inf``.
    ``D11`` and ``D12`` both run over ``l = 1..n``.
    """
    W, pv, n = ledger.weights, ledger.values, ledger.n
    ell = np.arange(1, n + 1)
    diag = W.at(ell, ell)
    acc = _Acc(ledger.exact)
    acc.add("tr", diag)
    trace = acc.total("tr")
    if abs(float(trace) - 1.0) > 1e-12:
        raise TraceNotOne(f"trace of the weight table is {float(trace)!r}, expected 1")
    acc.add("D11", diag * (pv.M[ell] * pv.M[ell] - pv.g_hat[ell - 1]))
    acc.add("D12", diag * (pv.g_hat[ell - 1] - sigma2_inf))
    return TheoremTerms(ledger.diag_term - sigma2_inf, acc.total("D11"), acc.total("D12"), ledger.offdiag_term)
