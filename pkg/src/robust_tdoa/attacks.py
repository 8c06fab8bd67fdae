"""Timing-attack generators: per-sensor clock offsets and calibration mixtures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .geometry import SensorNetwork, as_point


@dataclass(frozen=True)
class AttackVector:
    """Signed clock offset ``a_i`` (seconds) injected into each sensor."""

    offsets: np.ndarray

    def __post_init__(self):
        off = np.array(self.offsets, dtype=float).reshape(-1)
        if not np.all(np.isfinite(off)):
            raise ValueError("attack offsets must be finite")
        off.setflags(write=False)
        object.__setattr__(self, "offsets", off)

    @classmethod
    def none(cls, n_sensors: int) -> "AttackVector":
        return cls(np.zeros(n_sensors))

    def __len__(self) -> int:
        return len(self.offsets)

    def pair_offsets(self, pairs) -> np.ndarray:
        """Delay difference ``a_i - a_j`` for each pair."""
        idx = np.asarray(pairs, dtype=int).reshape(-1, 2)
        return self.offsets[idx[:, 0]] - self.offsets[idx[:, 1]]

    def shifted(self, constant: float) -> "AttackVector":
        return AttackVector(self.offsets + constant)


def weak_attack(delays: Mapping[int, float], n_sensors: int) -> AttackVector:
    """Offsets for the listed sensors (0-based indices), zero elsewhere."""
    off = np.zeros(n_sensors)
    for sensor, delay in delays.items():
        if not (0 <= int(sensor) < n_sensors) or int(sensor) != sensor:
            raise ValueError(f"unknown sensor index {sensor!r}")
        off[int(sensor)] = float(delay)
    return AttackVector(off)


def strong_attack(network: SensorNetwork, true_source, target) -> AttackVector:
    """Offsets making every sensor see the signal as if emitted at ``target``.

    ``a_i = delay(S_i, target) - delay(S_i, true_source)``
    """
    src = as_point(true_source, network.dim)
    tgt = as_point(target, network.dim)
    return AttackVector(network.delays(tgt) - network.delays(src))


@dataclass(frozen=True)
class CalibrationAttackSpec:
    """Mixture of ``m`` calibration samples, a share ``q`` shifted by ``a`` sigmas."""

    q: float
    a: float
    m: int

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must lie in [0, 1]")
        if self.m < 1:
            raise ValueError("m must be >= 1")

    @property
    def shifted_count(self) -> int:
        # round() is half-to-even
        return int(round(self.q * self.m))


def calibration_attack_samples(
    mu: float,
    sigma: float,
    spec: CalibrationAttackSpec,
    shifted_is_attack: bool,
    rng: np.random.Generator,
) -> np.ndarray:
    """Shuffled mixture of Gaussian samples around ``mu`` and ``mu + a*sigma``.

    With ``shifted_is_attack`` the ``round(q*m)`` attacked samples are the
    shifted ones (a synchronized pair whose calibration is being delayed).
    Otherwise the pair itself carries an ``a*sigma`` timing offset and the
    ``round(q*m)`` attacked samples are replayed so as to look unshifted.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    k = spec.shifted_count
    shifted_mean = mu + spec.a * sigma
    if shifted_is_attack:
        means = np.concatenate([np.full(k, shifted_mean), np.full(spec.m - k, mu)])
    else:
        means = np.concatenate([np.full(k, mu), np.full(spec.m - k, shifted_mean)])
    samples = means + sigma * rng.standard_normal(spec.m)
    return rng.permutation(samples)
