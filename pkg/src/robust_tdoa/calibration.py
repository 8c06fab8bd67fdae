"""Per-pair trust weights from a known calibration source.

Each pair's calibration errors go through a two-sided z-test; the p-value
raised to ``1/v`` becomes the pair weight, and the 2nd/3rd (2D) or
2nd/3rd/4th (3D) best exponentiated p-values average into the confidence
metric ``cfd``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import gaussian_kde

from .geometry import SensorNetwork, as_point
from .measurement import TdoaSet

DEFAULT_EXPONENT = 15.0776


def ztest_pvalue(errors, sigma: float) -> float:
    """Two-sided z-test p-value for a zero mean with known ``sigma``.

    ``erfc(|mean| * sqrt(n) / (sigma * sqrt(2)))``; underflows to exactly 0
    for offsets of a few dozen standard errors.
    """
    e = np.asarray(errors, dtype=float).reshape(-1)
    if e.size < 1:
        raise ValueError("need at least one error sample")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    z = abs(float(e.mean())) * math.sqrt(e.size) / sigma
    return math.erfc(z / math.sqrt(2.0))


def optimal_exponent(p1: float, p2: float) -> float:
    """Exponent ``v`` maximizing ``p1**(1/v) - p2**(1/v)`` for ``p2 < p1``."""
    if not 0.0 < p2 < p1 < 1.0:
        raise ValueError("require 0 < p2 < p1 < 1")
    l1, l2 = -math.log(p1), -math.log(p2)
    return (l2 - l1) / math.log(l2 / l1)


def confidence_metric(raw_pvalues, v: float, dim: int) -> float:
    p = np.asarray(raw_pvalues, dtype=float)
    need = 3 if dim == 2 else 4
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if p.size < need:
        raise ValueError(f"{dim}D confidence metric needs at least {need} p-values")
    order = np.argsort(-p, kind="stable")
    ranked = p[order][1:need]
    return float(np.mean(ranked ** (1.0 / v)))


@dataclass
class WeightTable:
    pairs: list[tuple[int, int]]
    raw_pvalues: np.ndarray
    weights: np.ndarray
    cfd: float
    v: float

    def __post_init__(self):
        self.pairs = [tuple(int(x) for x in p) for p in self.pairs]
        self.raw_pvalues = np.asarray(self.raw_pvalues, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.v <= 0:
            raise ValueError("exponent v must be positive")

    @property
    def nonzero(self) -> int:
        return int(np.count_nonzero(self.weights > 0))

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "raw_pvalues": self.raw_pvalues.tolist(),
            "weights": self.weights.tolist(),
            "cfd": self.cfd,
            "v": self.v,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WeightTable":
        return cls(
            pairs=[tuple(p) for p in d["pairs"]],
            raw_pvalues=np.array(d["raw_pvalues"], dtype=float),
            weights=np.array(d["weights"], dtype=float),
            cfd=float(d["cfd"]),
            v=float(d["v"]),
        )


def weights_from_pvalues(pairs, raw_pvalues, v: float, dim: int) -> WeightTable:
    p = np.asarray(raw_pvalues, dtype=float)
    w = p ** (1.0 / v)
    cfd = confidence_metric(p, v, dim)
    total = w.sum()
    if total > 0:
        w = w / total
    return WeightTable(list(pairs), p, w, cfd, v)


def define_weights(
    network: SensorNetwork,
    calib_source,
    sigma,
    batches: TdoaSet,
    v: float = DEFAULT_EXPONENT,
    dim: int | None = None,
) -> WeightTable:
    """Weights and confidence metric from calibration batches.

    ``sigma`` may be a scalar or one value per pair. Weights are normalized
    to sum to one unless every p-value is zero.
    """
    dim = network.dim if dim is None else dim
    batches.check_network(network)
    src = as_point(calib_source, network.dim)
    truth = network.true_tdoas(src, batches.pairs)
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (len(batches.pairs),))
    errors = batches.values - truth[:, None]
    z = np.abs(errors.mean(axis=1)) * math.sqrt(batches.n) / sig
    pvals = np.array([math.erfc(zk / math.sqrt(2.0)) for zk in z])
    return weights_from_pvalues(batches.pairs, pvals, v, dim)


@dataclass(frozen=True)
class SelectionSpec:
    m: int
    n: int = 30
    b: int = 12

    def __post_init__(self):
        if not 1 <= self.n <= self.m:
            raise ValueError("require 1 <= n <= m")
        if self.b < 2:
            raise ValueError("need at least two bins")


def density_peak(samples, grid_points: int = 512) -> float:
    """Mode of a Gaussian KDE (Silverman bandwidth) on a uniform grid."""
    x = np.asarray(samples, dtype=float)
    lo, hi = x.min(), x.max()
    if x.size < 2 or hi == lo or np.std(x) == 0:
        return float(np.median(x))
    # scale to unit range so the KDE covariance stays well conditioned
    scaled = (x - lo) / (hi - lo)
    kde = gaussian_kde(scaled, bw_method="silverman")
    grid = np.linspace(0.0, 1.0, grid_points)
    return float(lo + (hi - lo) * grid[int(np.argmax(kde(grid)))])


def select_measurements(samples, spec: SelectionSpec) -> np.ndarray:
    """Keep the ``n`` samples closest to the tallest mode of ``samples``.

    A ``b``-bin histogram seeds the search at the densest bin, neighbouring
    bins are absorbed (denser side first) until at least ``n`` samples are
    covered, and a KDE of that subset locates the peak.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size != spec.m:
        raise ValueError(f"expected {spec.m} samples, got {x.size}")
    counts, edges = np.histogram(x, bins=spec.b)
    centers = 0.5 * (edges[:-1] + edges[1:])
    best = int(np.argmax(counts))
    lo = hi = best
    total = counts[best]
    while total < spec.n:
        left = counts[lo - 1] if lo > 0 else -1
        right = counts[hi + 1] if hi < spec.b - 1 else -1
        if left == right:
            span = slice(lo, hi + 1)
            mean = np.average(centers[span], weights=np.maximum(counts[span], 1e-300))
            go_left = abs(centers[lo - 1] - mean) <= abs(centers[hi + 1] - mean)
        else:
            go_left = left > right
        if go_left:
            lo -= 1
            total += counts[lo]
        else:
            hi += 1
            total += counts[hi]
    inside = (x >= edges[lo]) & (x <= edges[hi + 1])
    peak = density_peak(x[inside])
    nearest = np.argsort(np.abs(x - peak), kind="stable")[: spec.n]
    return x[np.sort(nearest)]
