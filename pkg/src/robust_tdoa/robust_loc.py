"""Robust localization: trusted-pair gate, weighted solve, action bands."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .calibration import WeightTable
from .geometry import BBox, SensorNetwork, geometric_seed, grid_bbox
from .measurement import SignalParams, TdoaSet, pair_sigmas
from .solver import LocalizationResult, SolverOptions, Status, WlsProblem, lm_solve

DEFAULT_HALF_EXTENT = 10_000.0


class ActionBand(str, Enum):
    FULL_TRUST = "full_trust"
    FAIR_TRUST = "fair_trust"
    PROBABLE_ZONE = "probable_zone"
    CORRUPT = "corrupt"


def recommend_action(cfd: float | None, status) -> ActionBand:
    """Map the confidence metric to a course of action.

    Thresholds 0.75 and 0.3 belong to the upper band.
    """
    if Status(status) is Status.CORRUPT_SYSTEM:
        return ActionBand.CORRUPT
    if cfd is None or not 0.0 <= cfd <= 1.0:
        raise ValueError(f"cfd must lie in [0, 1], got {cfd}")
    if cfd >= 0.75:
        return ActionBand.FULL_TRUST
    if cfd >= 0.3:
        return ActionBand.FAIR_TRUST
    return ActionBand.PROBABLE_ZONE


def _solve(network, measurement, weights, sigma, dim, bbox, opts) -> LocalizationResult:
    if bbox is None:
        bbox = grid_bbox(DEFAULT_HALF_EXTENT, dim)
    tdoa = TdoaSet(measurement.pairs, measurement.snapshot, sigma)
    problem = WlsProblem(network, tdoa, weights, dim)
    seed = geometric_seed(network, tdoa.snapshot, weights, bbox, pairs=tdoa.pairs)
    return lm_solve(problem, seed, opts)


def robust_localize(
    weights: WeightTable,
    network: SensorNetwork,
    measurement: TdoaSet,
    params: SignalParams | None = None,
    dim: int | None = None,
    bbox: BBox | None = None,
    opts: SolverOptions | None = None,
) -> LocalizationResult:
    """Locate an unknown source using calibrated pair weights.

    Returns ``corrupt_system`` when fewer than ``dim`` pairs carry a nonzero
    weight. Per-pair noise comes from the network SNRs through ``params``
    (fixed override by default) or, failing that, from ``measurement.sigma``.
    """
    dim = network.dim if dim is None else dim
    if list(weights.pairs) != list(measurement.pairs):
        raise ValueError("weight table and measurement pairs are not aligned")
    cfd = float(weights.cfd)
    if weights.nonzero < dim:
        return LocalizationResult(
            status=Status.CORRUPT_SYSTEM,
            cfd=cfd,
            band=ActionBand.CORRUPT.value,
            diagnostics=[f"only {weights.nonzero} trusted pairs, need {dim}"],
        )
    sigma = measurement.sigma if params is None else pair_sigmas(network, params, measurement.pairs)
    result = _solve(network, measurement, weights.weights, sigma, dim, bbox, opts)
    result.cfd = cfd
    result.band = recommend_action(cfd, result.status).value
    return result


def naive_localize(
    network: SensorNetwork,
    measurement: TdoaSet,
    params: SignalParams | None = None,
    bbox: BBox | None = None,
    opts: SolverOptions | None = None,
) -> LocalizationResult:
    """WLS estimate trusting every pair equally (all weights 1)."""
    sigma = measurement.sigma if params is None else pair_sigmas(network, params, measurement.pairs)
    return _solve(network, measurement, np.ones(len(measurement.pairs)), sigma, network.dim, bbox, opts)
