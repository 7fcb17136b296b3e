"""Overlapped batch means estimator, in batch-means and quadratic-form form."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .decomposition import _states, quadratic_form
from .errors import GeometryInvalid
from .weights import BatchGeometry, ObmWeights, uv_vectors


@dataclass(frozen=True)
class ObmEstimate:
    value: float
    geometry: BatchGeometry
    path_seed: int | None = None
    components: tuple[float, float, float] | None = None

    def recombined(self) -> float:
        """``quad_part + b u_part^2 - b v_part^2``."""
        quad, u, v = self.components
        b = self.geometry.b
        return quad + b * u * u - b * v * v


def _observations(path, f, geometry: BatchGeometry) -> np.ndarray:
    z = _states(path)
    if len(z) - 1 < geometry.n:
        raise GeometryInvalid(f"path has {len(z) - 1} steps, geometry needs n={geometry.n}")
    vals = np.asarray(getattr(f, "values", f), dtype=float)
    return vals[z[1:geometry.n + 1]]


def obm_batch(X: np.ndarray, b: int) -> np.ndarray:
    """OBM estimates for each row of ``X`` (shape ``(R, n)``) with batch length ``b``.

    Rows are centred first, so the window means are deviations from the
    global mean; window sums come from prefix sums.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[1]
    if not 1 <= b <= n:
        raise GeometryInvalid(f"need 1 <= b_n <= n, got n={n}, b_n={b}")
    m = n - b + 1
    Xc = X - X.mean(axis=1, keepdims=True)
    cs = np.zeros((X.shape[0], n + 1))
    np.cumsum(Xc, axis=1, out=cs[:, 1:])
    dev = (cs[:, b:] - cs[:, :-b]) / b
    return b / m * np.einsum("ij,ij->i", dev, dev)


def obm_direct(path, f, geometry: BatchGeometry) -> ObmEstimate:
    """``b/(n-b+1) * sum_t (batch mean_t - overall mean)^2`` in O(n)."""
    X = _observations(path, f, geometry)
    b, m = geometry.b, geometry.m
    Xc = X - X.mean()
    cs = np.concatenate([[0.0], np.cumsum(Xc)])
    dev = (cs[b:] - cs[:-b]) / b
    value = b / m * math.fsum(dev * dev)
    return ObmEstimate(value, geometry, getattr(path, "seed", None))


def obm_quadratic(path, f, geometry: BatchGeometry) -> ObmEstimate:
    """Quadratic form with OBM weights plus the rank-one ``u``/``v`` corrections."""
    X = _observations(path, f, geometry)
    quad = quadratic_form(path, f, ObmWeights(geometry))
    u, v = uv_vectors(geometry)
    u_part = math.fsum(u * X)
    v_part = math.fsum(v * X)
    b = geometry.b
    value = math.fsum([quad, b * u_part * u_part, -b * v_part * v_part])
    return ObmEstimate(value, geometry, getattr(path, "seed", None), (quad, u_part, v_part))


def relative_gap(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def error_against_truth(estimate: ObmEstimate, sigma2_inf: float) -> float:
    return estimate.value - sigma2_inf
