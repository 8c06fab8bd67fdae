"""Weighted least-squares TDOA objective and a Levenberg-Marquardt solver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import SensorNetwork, as_point
from .measurement import TdoaSet

log = logging.getLogger(__name__)

# distances are clamped here to keep the Jacobian finite at a sensor
MIN_DISTANCE_M = 1e-9


class Status(str, Enum):
    ESTIMATE = "estimate"
    CORRUPT_SYSTEM = "corrupt_system"


class InsufficientPairsError(ValueError):
    """Fewer positively weighted pairs than unknown coordinates."""


@dataclass
class WlsProblem:
    network: SensorNetwork
    measurements: TdoaSet
    weights: np.ndarray
    dimension: int = 2

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(self.measurements.pairs),):
            raise ValueError("one weight per measured pair required")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and non-negative")
        if self.dimension not in (2, 3) or self.dimension != self.network.dim:
            raise ValueError("dimension must match the network (2 or 3)")
        self.measurements.check_network(self.network)
        idx = np.asarray(self.measurements.pairs, dtype=int)
        self._i = idx[:, 0]
        self._j = idx[:, 1]
        self._tdoa = self.measurements.snapshot
        self._scale = np.sqrt(self.weights) / self.measurements.sigma

    @property
    def active_pairs(self) -> int:
        return int(np.count_nonzero(self.weights > 0))

    def raw_residuals(self, x) -> np.ndarray:
        pos = self.network.positions
        d = np.linalg.norm(pos - x, axis=1)
        return (d[self._i] - d[self._j]) / self.network.signal_speed - self._tdoa

    def weighted_residuals(self, x) -> np.ndarray:
        return self._scale * self.raw_residuals(x)

    def jacobian(self, x) -> np.ndarray:
        """Jacobian of :meth:`weighted_residuals` with respect to ``x``."""
        diff = x - self.network.positions
        d = np.maximum(np.linalg.norm(diff, axis=1), MIN_DISTANCE_M)
        unit = diff / d[:, None]
        return (self._scale / self.network.signal_speed)[:, None] * (unit[self._i] - unit[self._j])


@dataclass(frozen=True)
class SolverOptions:
    initial_damping: float = 0.01
    max_iterations: int = 200
    step_tolerance: float = 1e-6
    damping_up: float = 10.0
    damping_down: float = 10.0

    def __post_init__(self):
        if min(self.initial_damping, self.step_tolerance, self.damping_up, self.damping_down) <= 0:
            raise ValueError("solver options must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class LocalizationResult:
    status: Status
    position: np.ndarray | None = None
    residuals: np.ndarray = field(default_factory=lambda: np.empty(0))
    objective_value: float = float("nan")
    iterations: int = 0
    converged: bool = True
    cfd: float | None = None
    band: str | None = None
    diagnostics: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.status = Status(self.status)
        if (self.position is not None) != (self.status is Status.ESTIMATE):
            raise ValueError("position must be present exactly when status is 'estimate'")

    @property
    def is_corrupt(self) -> bool:
        return self.status is Status.CORRUPT_SYSTEM

    def error_to(self, truth) -> float:
        if self.position is None:
            return float("nan")
        return float(np.linalg.norm(self.position - np.asarray(truth, dtype=float)))

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "position": None if self.position is None else self.position.tolist(),
            "cfd": self.cfd,
            "band": self.band,
            "residuals": self.residuals.tolist(),
            "objective_value": None if not np.isfinite(self.objective_value) else self.objective_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "diagnostics": list(self.diagnostics),
        }


def wls_objective(candidate, problem: WlsProblem) -> float:
    x = as_point(candidate, problem.dimension)
    r = problem.weighted_residuals(x)
    return float(r @ r)


def residuals(estimate, measurements: TdoaSet, network: SensorNetwork) -> np.ndarray:
    """Per-pair ``(d(S_i, x) - d(S_j, x)) / c - measured`` in seconds."""
    x = as_point(estimate, network.dim)
    idx = np.asarray(measurements.pairs, dtype=int)
    d = np.linalg.norm(network.positions - x, axis=1)
    return (d[idx[:, 0]] - d[idx[:, 1]]) / network.signal_speed - measurements.snapshot


def lm_solve(problem: WlsProblem, seed_point, opts: SolverOptions | None = None) -> LocalizationResult:
    """Minimize the WLS objective from ``seed_point``.

    Marquardt-scaled damping: each trial step solves
    ``(J^T J + lam * diag(J^T J)) dx = -J^T r``. Rejected steps multiply
    ``lam`` by ``damping_up``, accepted ones divide it by ``damping_down``.
    Stops once a trial step is shorter than ``step_tolerance`` meters.
    """
    opts = opts or SolverOptions()
    if problem.active_pairs < problem.dimension:
        raise InsufficientPairsError(
            f"{problem.active_pairs} weighted pairs cannot fix {problem.dimension} coordinates"
        )
    x = as_point(seed_point, problem.dimension).copy()
    r = problem.weighted_residuals(x)
    cost = float(r @ r)
    lam = opts.initial_damping
    J = problem.jacobian(x)
    converged = False
    it = 0
    while it < opts.max_iterations:
        it += 1
        A = J.T @ J
        g = J.T @ r
        diag = np.diag(A)
        D = np.diag(np.maximum(diag, 1e-12 * max(diag.max(), 1e-300)))
        try:
            step = np.linalg.solve(A + lam * D, -g)
        except np.linalg.LinAlgError:
            step = -g / (lam * np.maximum(diag, 1e-300))
        if not np.all(np.isfinite(step)):
            lam *= opts.damping_up
            continue
        if np.linalg.norm(step) < opts.step_tolerance:
            converged = True
            break
        x_new = x + step
        r_new = problem.weighted_residuals(x_new)
        cost_new = float(r_new @ r_new)
        if np.isfinite(cost_new) and cost_new < cost:
            x, r, cost = x_new, r_new, cost_new
            J = problem.jacobian(x)
            lam /= opts.damping_down
        else:
            lam *= opts.damping_up
    diagnostics = []
    if not converged:
        diagnostics.append(f"no convergence within {opts.max_iterations} iterations")
        log.warning("LM stopped at max_iterations=%d (cost %.3e)", opts.max_iterations, cost)
    return LocalizationResult(
        status=Status.ESTIMATE,
        position=x,
        residuals=problem.raw_residuals(x),
        objective_value=cost,
        iterations=it,
        converged=converged,
        diagnostics=diagnostics,
    )
