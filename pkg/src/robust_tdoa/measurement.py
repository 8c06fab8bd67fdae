"""TDOA noise model and synthesis of (possibly attacked) measurements."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import SensorNetwork, as_point

DEFAULT_SIGMA = 2.192e-9


class NoiseRegime(str, Enum):
    LOW_SNR = "low_snr"
    HIGH_SNR = "high_snr"
    FIXED = "fixed"


@dataclass(frozen=True)
class SignalParams:
    """Signal parameters feeding the SNR-to-noise formulas.

    ``f_low``/``f_high`` default to ``f_center -/+ bandwidth/2``. The low-SNR
    formula is evaluated exactly as printed (``W**2 / (12 f0)``) unless
    ``f0_squared`` is set, which uses ``W**2 / (12 f0**2)`` instead.
    """

    t_int: float = 60e-3
    bandwidth: float = 1e6
    f_center: float = 30e3
    f_low: float | None = None
    f_high: float | None = None
    regime: NoiseRegime = NoiseRegime.FIXED
    sigma_override: float | None = DEFAULT_SIGMA
    f0_squared: bool = False

    def __post_init__(self):
        object.__setattr__(self, "regime", NoiseRegime(self.regime))
        if self.f_low is None:
            object.__setattr__(self, "f_low", self.f_center - 0.5 * self.bandwidth)
        if self.f_high is None:
            object.__setattr__(self, "f_high", self.f_center + 0.5 * self.bandwidth)
        if self.t_int <= 0:
            raise ValueError("integration time must be positive")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.f_high <= self.f_low:
            raise ValueError("f_high must exceed f_low")
        if self.regime is NoiseRegime.FIXED and not (self.sigma_override and self.sigma_override > 0):
            raise ValueError("fixed regime needs a positive sigma_override")

    @classmethod
    def fixed(cls, sigma: float) -> "SignalParams":
        return cls(regime=NoiseRegime.FIXED, sigma_override=sigma)


def db_to_linear(snr_db):
    return 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)


def aggregate_snr(gamma_i: float, gamma_j: float) -> float:
    """Pairwise SNR from two linear per-sensor SNRs."""
    if gamma_i <= 0 or gamma_j <= 0:
        raise ValueError("SNR values must be positive (linear scale)")
    return 1.0 / (0.5 * (1.0 / gamma_i + 1.0 / gamma_j + 1.0 / (gamma_i * gamma_j)))


def tdoa_noise_std(gamma_ij: float, params: SignalParams) -> float:
    if params.regime is NoiseRegime.FIXED:
        return float(params.sigma_override)
    if gamma_ij <= 0:
        raise ValueError("aggregated SNR must be positive")
    if params.regime is NoiseRegime.LOW_SNR:
        W, f0, T = params.bandwidth, params.f_center, params.t_int
        spread = W**2 / (12.0 * f0**2) if params.f0_squared else W**2 / (12.0 * f0)
        return (
            math.sqrt(1.0 / (8.0 * math.pi**2))
            / gamma_ij
            / math.sqrt(T * W)
            / f0
            / math.sqrt(1.0 + spread)
        )
    f1, f2, T = params.f_low, params.f_high, params.t_int
    return math.sqrt(3.0 / (4.0 * math.pi**2 * T)) / math.sqrt(gamma_ij) / math.sqrt(f2**3 - f1**3)


def pair_sigmas(network: SensorNetwork, params: SignalParams, pairs=None) -> np.ndarray:
    """Noise standard deviation of every pair from the per-sensor SNRs."""
    pairs = network.pairs if pairs is None else pairs
    if params.regime is NoiseRegime.FIXED:
        return np.full(len(pairs), float(params.sigma_override))
    gamma = db_to_linear(network.snr_db)
    return np.array([tdoa_noise_std(aggregate_snr(gamma[i], gamma[j]), params) for i, j in pairs])


def covariance_matrix(sigma: float, pair_count: int) -> np.ndarray:
    """``sigma**2`` on the diagonal, ``sigma**2 / 2`` elsewhere."""
    if sigma <= 0 or pair_count < 1:
        raise ValueError("sigma must be positive and pair_count >= 1")
    K = np.full((pair_count, pair_count), 0.5 * sigma**2)
    np.fill_diagonal(K, sigma**2)
    return K


def correlated_noise(sigma: float, pair_count: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draws with the full pair covariance, shape ``(pair_count, n)``.

    Uses the closed-form symmetric root ``sigma/sqrt(2) (I + a 11^T)`` with
    ``k a**2 + 2 a - 1 = 0``.
    """
    k = pair_count
    a = (math.sqrt(1.0 + k) - 1.0) / k
    z = rng.standard_normal((k, n))
    return sigma / math.sqrt(2.0) * (z + a * z.sum(axis=0, keepdims=True))


@dataclass
class TdoaSet:
    """Per-pair TDOA values, always stored as a ``(pairs, n)`` array."""

    pairs: list[tuple[int, int]]
    values: np.ndarray
    sigma: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pairs = [tuple(int(x) for x in p) for p in self.pairs]
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        self.values = vals
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (len(self.pairs),)).copy()
        if vals.shape[0] != len(self.pairs):
            raise ValueError("one row of values per pair required")
        if vals.shape[1] < 1:
            raise ValueError("need at least one sample per pair")
        if np.any(self.sigma <= 0):
            raise ValueError("pair noise std must be positive")
        for i, j in self.pairs:
            if i <= j:
                raise ValueError(f"pair {(i, j)} must satisfy i > j")

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def snapshot(self) -> np.ndarray:
        """The single measurement per pair; only valid when ``n == 1``."""
        if self.n != 1:
            raise ValueError(f"expected a single snapshot, set holds {self.n} samples")
        return self.values[:, 0]

    def check_network(self, network: SensorNetwork) -> None:
        for i, j in self.pairs:
            if not (0 <= j < i < network.n_sensors):
                raise ValueError(f"pair {(i, j)} not valid for a {network.n_sensors}-sensor network")

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "values": self.values.tolist(),
            "sigma": self.sigma.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TdoaSet":
        return cls([tuple(p) for p in d["pairs"]], np.array(d["values"]), np.array(d["sigma"]))


def synthesize_tdoa_set(
    network: SensorNetwork,
    source,
    attack,
    params: SignalParams,
    n: int,
    rng: np.random.Generator,
    correlated: bool = False,
) -> TdoaSet:
    """Noisy TDOAs ``true + a_i - a_j + e`` for every pair, ``n`` repetitions.

    ``attack`` is an :class:`~robust_tdoa.attacks.AttackVector` or a plain
    sequence of per-sensor offsets (seconds). Noise is drawn i.i.d. per pair
    and repetition unless ``correlated`` is set.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    offsets = np.asarray(getattr(attack, "offsets", attack), dtype=float)
    if offsets.shape != (network.n_sensors,):
        raise ValueError("attack needs one offset per sensor")
    pairs = network.pairs
    idx = np.array(pairs)
    src = as_point(source, network.dim)
    base = network.true_tdoas(src, pairs) + (offsets[idx[:, 0]] - offsets[idx[:, 1]])
    sigma = pair_sigmas(network, params, pairs)
    if correlated:
        if not np.allclose(sigma, sigma[0]):
            raise ValueError("correlated noise requires a common sigma")
        noise = correlated_noise(float(sigma[0]), len(pairs), n, rng)
    else:
        noise = rng.standard_normal((len(pairs), n)) * sigma[:, None]
    return TdoaSet(pairs, base[:, None] + noise, sigma)
