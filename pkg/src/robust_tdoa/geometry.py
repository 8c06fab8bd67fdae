"""Sensor geometry, propagation delays and hyperbola machinery.

Points are plain numpy arrays of shape ``(2,)`` or ``(3,)`` in meters.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
# intersections closer than this are merged
DEDUP_TOL_M = 0.1


def as_point(coords, dim: int | None = None) -> np.ndarray:
    """Validate and convert ``coords`` into a float point array."""
    p = np.asarray(coords, dtype=float)
    if p.ndim != 1 or p.shape[0] not in (2, 3):
        raise ValueError(f"point must have 2 or 3 coordinates, got shape {p.shape}")
    if dim is not None and p.shape[0] != dim:
        raise ValueError(f"expected a {dim}D point, got {p.shape[0]}D")
    if not np.all(np.isfinite(p)):
        raise ValueError("point coordinates must be finite")
    return p


def distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    return float(np.linalg.norm(p - q))


def propagation_delay(sensor, source, speed: float = SPEED_OF_LIGHT) -> float:
    if speed <= 0:
        raise ValueError("signal speed must be positive")
    return distance(sensor, source) / speed


def true_tdoa(si, sj, source, speed: float = SPEED_OF_LIGHT) -> float:
    """Noise-free TDOA ``delay(si) - delay(sj)`` in seconds."""
    return propagation_delay(si, source, speed) - propagation_delay(sj, source, speed)


def sensor_pairs(n_sensors: int) -> list[tuple[int, int]]:
    """Canonical pair ordering ``(i, j)`` with ``i > j``.

    For four sensors: (1,0), (2,0), (3,0), (2,1), (3,1), (3,2).
    """
    return [(i, j) for j in range(n_sensors) for i in range(j + 1, n_sensors)]


@dataclass(frozen=True)
class SensorNetwork:
    """Fixed sensors with per-sensor SNR (dB) and the signal speed."""

    positions: np.ndarray
    snr_db: np.ndarray = field(default=None)  # type: ignore[assignment]
    signal_speed: float = SPEED_OF_LIGHT

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] not in (2, 3):
            raise ValueError("positions must be an (N, 2) or (N, 3) array")
        if not np.all(np.isfinite(pos)):
            raise ValueError("sensor positions must be finite")
        if pos.shape[0] < 2:
            raise ValueError("a network needs at least two sensors")
        for a, b in itertools.combinations(range(pos.shape[0]), 2):
            if np.array_equal(pos[a], pos[b]):
                raise ValueError(f"sensors {a} and {b} share a position")
        if self.signal_speed <= 0:
            raise ValueError("signal speed must be positive")
        snr = np.full(pos.shape[0], 3.0) if self.snr_db is None else np.array(self.snr_db, dtype=float)
        if snr.shape != (pos.shape[0],):
            raise ValueError("snr_db needs one value per sensor")
        pos.setflags(write=False)
        snr.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "snr_db", snr)

    @property
    def n_sensors(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return sensor_pairs(self.n_sensors)

    def delays(self, source) -> np.ndarray:
        """Propagation delay from ``source`` to every sensor."""
        src = as_point(source, self.dim)
        return np.linalg.norm(self.positions - src, axis=1) / self.signal_speed

    def true_tdoas(self, source, pairs=None) -> np.ndarray:
        d = self.delays(source)
        pairs = self.pairs if pairs is None else pairs
        idx = np.asarray(pairs, dtype=int).reshape(-1, 2)
        return d[idx[:, 0]] - d[idx[:, 1]]

    def check_localizable(self, dim: int) -> None:
        need = dim + 1
        if self.n_sensors < need:
            raise ValueError(f"{dim}D localization needs at least {need} sensors")


@dataclass(frozen=True)
class Hyperbola:
    """Locus of points p with ``d(p, focus_a) - d(p, focus_b) = range_difference``."""

    focus_a: np.ndarray
    focus_b: np.ndarray
    range_difference: float

    @property
    def baseline(self) -> float:
        return distance(self.focus_a, self.focus_b)

    @property
    def realizable(self) -> bool:
        return abs(self.range_difference) <= self.baseline

    def residual(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        return (
            np.linalg.norm(p - self.focus_a, axis=1)
            - np.linalg.norm(p - self.focus_b, axis=1)
            - self.range_difference
        )


class Intersections(NamedTuple):
    points: np.ndarray  # (k, 2)
    degenerate: bool


# xmin, xmax, ymin, ymax[, zmin, zmax]
BBox = tuple[float, ...]


def grid_bbox(half_extent: float, dim: int = 2) -> BBox:
    """Square grid of side ``2 * half_extent``; in 3D altitudes span [0, half_extent]."""
    box = (-half_extent, half_extent, -half_extent, half_extent)
    return box if dim == 2 else box + (0.0, half_extent)


def _branch_params(h: Hyperbola):
    a = np.asarray(h.focus_a, dtype=float)
    b = np.asarray(h.focus_b, dtype=float)
    center = 0.5 * (a + b)
    e = (a - b) / np.linalg.norm(a - b)
    e_perp = np.array([-e[1], e[0]])
    cf = 0.5 * np.linalg.norm(a - b)
    semi_major = 0.5 * h.range_difference
    semi_minor = np.sqrt(max(cf * cf - semi_major * semi_major, 0.0))
    return center, e, e_perp, semi_major, semi_minor


def _branch_points(params, t: np.ndarray) -> np.ndarray:
    """Points of the branch at parameter ``t``; broadcasts over leading axes."""
    center, e, e_perp, semi_major, semi_minor = params
    u = -semi_major[..., None] * np.cosh(t)
    v = semi_minor[..., None] * np.sinh(t)
    return center[..., None, :] + u[..., None] * e[..., None, :] + v[..., None] * e_perp[..., None, :]


def _implicit(points: np.ndarray, fa: np.ndarray, fb: np.ndarray, rd: np.ndarray) -> np.ndarray:
    return (
        np.linalg.norm(points - fa[..., None, :], axis=-1)
        - np.linalg.norm(points - fb[..., None, :], axis=-1)
        - rd[..., None]
    )


def _in_bbox(points: np.ndarray, bbox: BBox) -> np.ndarray:
    xmin, xmax, ymin, ymax = bbox[:4]
    inside = (points[:, 0] >= xmin) & (points[:, 0] <= xmax) & (points[:, 1] >= ymin) & (points[:, 1] <= ymax)
    if points.shape[1] == 3:
        zmin, zmax = bbox[4:6] if len(bbox) == 6 else (0.0, max(xmax - xmin, ymax - ymin))
        inside &= (points[:, 2] >= zmin) & (points[:, 2] <= zmax)
    return inside


def dedup_points(points: np.ndarray, tol: float = DEDUP_TOL_M) -> np.ndarray:
    kept: list[np.ndarray] = []
    for p in points:
        if all(np.linalg.norm(p - q) >= tol for q in kept):
            kept.append(p)
    return np.array(kept).reshape(-1, points.shape[1] if points.ndim == 2 else 2)


def batch_intersections(
    hyperbolae: Sequence[Hyperbola],
    combos: Sequence[tuple[int, int]],
    bbox: BBox,
    tol: float = DEDUP_TOL_M,
    n_samples: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    """Intersect many pairs of realizable 2D hyperbolae at once.

    Branch of the first curve of each combo is sampled parametrically, sign
    changes of the second curve's implicit equation are bracketed and refined
    with a vectorized Illinois iteration.

    Returns
    -------
    points : (k, 2) array
    owner : (k,) array of combo indices, aligned with ``points``
    """
    if not combos:
        return np.empty((0, 2)), np.empty(0, dtype=int)
    first = [hyperbolae[i] for i, _ in combos]
    second = [hyperbolae[j] for _, j in combos]
    params = [_branch_params(h) for h in first]
    center = np.array([p[0] for p in params])
    e = np.array([p[1] for p in params])
    e_perp = np.array([p[2] for p in params])
    semi_major = np.array([p[3] for p in params])
    semi_minor = np.array([p[4] for p in params])
    stacked = (center, e, e_perp, semi_major, semi_minor)

    fa = np.array([h.focus_a for h in second], dtype=float)
    fb = np.array([h.focus_b for h in second], dtype=float)
    rd = np.array([h.range_difference for h in second], dtype=float)

    xmin, xmax, ymin, ymax = bbox[:4]
    corners = np.array([[xmin, ymin], [xmin, ymax], [xmax, ymin], [xmax, ymax]])
    reach = np.max(np.linalg.norm(corners[None, :, :] - center[:, None, :], axis=-1), axis=1) * 1.5
    minor = np.maximum(semi_minor, 1e-6)
    t_max = np.arcsinh(reach / minor)
    # uniform in t resolves the vertex, uniform in arc length resolves far arms
    u = np.linspace(-1.0, 1.0, n_samples)
    t = np.concatenate([u[None, :] * t_max[:, None], np.arcsinh(u[None, :] * reach[:, None] / minor[:, None])], axis=1)
    t.sort(axis=1)

    pts = _branch_points(stacked, t)
    g = _implicit(pts, fa, fb, rd)
    crossing = np.signbit(g[:, :-1]) != np.signbit(g[:, 1:])
    crossing &= np.isfinite(g[:, :-1]) & np.isfinite(g[:, 1:])
    ci, si = np.nonzero(crossing)
    if ci.size == 0:
        return np.empty((0, 2)), np.empty(0, dtype=int)

    sub = tuple(arr[ci] for arr in stacked)
    sfa, sfb, srd = fa[ci], fb[ci], rd[ci]

    def evaluate(tt):
        p = _branch_points(sub, tt[:, None])
        return _implicit(p, sfa, sfb, srd)[:, 0], p[:, 0, :]

    lo, hi = t[ci, si], t[ci, si + 1]
    glo, ghi = g[ci, si], g[ci, si + 1]
    side = np.zeros(lo.shape, dtype=int)
    best_t = np.where(np.abs(glo) <= np.abs(ghi), lo, hi)
    best_g = np.minimum(np.abs(glo), np.abs(ghi))
    for _ in range(60):
        denom = ghi - glo
        tm = np.where(denom != 0, (lo * ghi - hi * glo) / np.where(denom != 0, denom, 1.0), 0.5 * (lo + hi))
        tm = np.clip(tm, np.minimum(lo, hi), np.maximum(lo, hi))
        gm, _ = evaluate(tm)
        better = np.abs(gm) < best_g
        best_t = np.where(better, tm, best_t)
        best_g = np.where(better, np.abs(gm), best_g)
        left = np.signbit(gm) == np.signbit(glo)
        # Illinois: halve the stale endpoint's value when the same side repeats
        lo_new = np.where(left, tm, lo)
        hi_new = np.where(left, hi, tm)
        glo_new = np.where(left, gm, np.where(side == -1, glo * 0.5, glo))
        ghi_new = np.where(left, np.where(side == 1, ghi * 0.5, ghi), gm)
        side = np.where(left, 1, -1)
        lo, hi, glo, ghi = lo_new, hi_new, glo_new, ghi_new
        if np.all(best_g < 1e-7) or np.all(np.abs(hi - lo) < 1e-13):
            break
    g_final, points = evaluate(best_t)
    ok = np.isfinite(g_final) & (np.abs(g_final) < tol) & _in_bbox(points, bbox)
    return points[ok], ci[ok]


def hyperbola_intersections(h1: Hyperbola, h2: Hyperbola, bbox: BBox, tol: float = DEDUP_TOL_M) -> Intersections:
    """Intersection points of two 2D hyperbolae inside ``bbox``.

    A non-realizable curve (``|range_difference| > baseline``) or a pair of
    identical curves is reported as degenerate with no points.
    """
    if not (h1.realizable and h2.realizable):
        return Intersections(np.empty((0, 2)), True)
    same = (
        np.allclose(h1.focus_a, h2.focus_a)
        and np.allclose(h1.focus_b, h2.focus_b)
        and np.isclose(h1.range_difference, h2.range_difference)
    )
    flipped = (
        np.allclose(h1.focus_a, h2.focus_b)
        and np.allclose(h1.focus_b, h2.focus_a)
        and np.isclose(h1.range_difference, -h2.range_difference)
    )
    if same or flipped:
        return Intersections(np.empty((0, 2)), True)
    pts, _ = batch_intersections([h1, h2], [(0, 1)], bbox, tol)
    return Intersections(dedup_points(pts, tol), False)


def weighted_median_seed(points, weights) -> np.ndarray:
    """Coordinate-wise weighted median.

    Per coordinate, the smallest value whose cumulative weight reaches half
    of the total weight.
    """
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise ValueError("weighted median of an empty point set")
    pts = pts.reshape(len(pts), -1)
    w = np.asarray(weights, dtype=float)
    if w.shape != (pts.shape[0],):
        raise ValueError("one weight per point required")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be non-negative and not all zero")
    half = 0.5 * w.sum()
    out = np.empty(pts.shape[1])
    for k in range(pts.shape[1]):
        order = np.argsort(pts[:, k], kind="stable")
        cum = np.cumsum(w[order])
        idx = int(np.searchsorted(cum, half * (1 - 1e-12), side="left"))
        out[k] = pts[order[min(idx, len(order) - 1)], k]
    return out


def star_intersections_3d(network: SensorNetwork, ref: int, others, range_diffs) -> np.ndarray:
    """Closed-form intersection of three hyperboloids sharing focus ``ref``.

    ``range_diffs[k]`` is ``d(x, S_others[k]) - d(x, S_ref)``. Returns up to
    two points.
    """
    s_ref = network.positions[ref]
    s = network.positions[list(others)]
    rho = np.asarray(range_diffs, dtype=float)
    G = s - s_ref
    h = 0.5 * (np.sum(s**2, axis=1) - np.sum(s_ref**2) - rho**2)
    try:
        p = np.linalg.solve(G, h)
        q = np.linalg.solve(G, rho)
    except np.linalg.LinAlgError:
        return np.empty((0, 3))
    w = p - s_ref
    qa = q @ q - 1.0
    qb = -2.0 * (w @ q)
    qc = w @ w
    if abs(qa) < 1e-12:
        roots = [] if qb == 0 else [-qc / qb]
    else:
        disc = qb * qb - 4 * qa * qc
        if disc < 0:
            return np.empty((0, 3))
        sq = np.sqrt(disc)
        roots = [(-qb + sq) / (2 * qa), (-qb - sq) / (2 * qa)]
    out = []
    for r0 in roots:
        if r0 < 0 or np.any(r0 + rho < 0):
            continue
        out.append(p - q * r0)
    return np.array(out).reshape(-1, 3)


def geometric_seed(
    network: SensorNetwork,
    tdoas,
    weights,
    bbox: BBox,
    tol: float = DEDUP_TOL_M,
    pairs=None,
) -> np.ndarray:
    """Weighted median of pairwise intersection points of the TDOA curves.

    Only pairs with positive weight and a realizable curve take part; each
    intersection is weighted by the smallest weight of the curves producing
    it. Falls back to the centroid of the involved sensors when no
    intersection lies in ``bbox``.
    """
    pairs = network.pairs if pairs is None else list(pairs)
    tdoas = np.asarray(tdoas, dtype=float)
    weights = np.asarray(weights, dtype=float)
    c = network.signal_speed
    live = [k for k, (i, j) in enumerate(pairs) if weights[k] > 0 and np.isfinite(tdoas[k])]
    pos = network.positions

    if network.dim == 2:
        curves, keep = [], []
        for k in live:
            i, j = pairs[k]
            h = Hyperbola(pos[i], pos[j], tdoas[k] * c)
            if h.realizable:
                curves.append(h)
                keep.append(k)
        combos = list(itertools.combinations(range(len(curves)), 2))
        pts, owner = batch_intersections(curves, combos, bbox, tol)
        if len(pts):
            w = np.array([min(weights[keep[combos[o][0]]], weights[keep[combos[o][1]]]) for o in owner])
            return weighted_median_seed(pts, w)
    else:
        pts_list, w_list = [], []
        lookup = {p: k for k, p in enumerate(pairs) if k in set(live)}
        for ref in range(network.n_sensors):
            others = [s for s in range(network.n_sensors) if s != ref]
            for trio in itertools.combinations(others, 3):
                ks, rho = [], []
                for s in trio:
                    if (s, ref) in lookup:
                        k = lookup[(s, ref)]
                        rho.append(tdoas[k] * c)
                    elif (ref, s) in lookup:
                        k = lookup[(ref, s)]
                        rho.append(-tdoas[k] * c)
                    else:
                        break
                    ks.append(k)
                else:
                    found = star_intersections_3d(network, ref, trio, rho)
                    for p in found:
                        if _in_bbox(p[None, :], bbox)[0]:
                            pts_list.append(p)
                            w_list.append(min(weights[k] for k in ks))
        if pts_list:
            return weighted_median_seed(np.array(pts_list), np.array(w_list))

    involved = sorted({s for k in live for s in pairs[k]}) or list(range(network.n_sensors))
    return pos[involved].mean(axis=0)
