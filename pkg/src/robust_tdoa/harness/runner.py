"""Monte-Carlo scenario sweeps, trajectory runs and the selection experiment."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from ..attacks import AttackVector, CalibrationAttackSpec, calibration_attack_samples
from ..calibration import DEFAULT_EXPONENT, SelectionSpec, WeightTable, define_weights, select_measurements, ztest_pvalue
from ..geometry import grid_bbox
from ..measurement import DEFAULT_SIGMA, TdoaSet, synthesize_tdoa_set
from ..robust_loc import naive_localize, robust_localize
from ..solver import LocalizationResult
from .config import ScenarioConfig

EXPERIMENT_COLUMNS = ["scenario_id", "delay_s", "trial", "naive_error_m", "robust_error_m", "cfd", "band", "status"]


def t_interval(values, level: float = 0.95) -> tuple[float, float, float]:
    """Sample mean and Student-t confidence bounds; NaN bounds below two samples."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return math.nan, math.nan, math.nan
    mean = float(x.mean())
    if x.size < 2:
        return mean, math.nan, math.nan
    half = stats.t.ppf(0.5 + level / 2, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size)
    return mean, mean - half, mean + half


@dataclass
class TrialRow:
    scenario_id: int
    delay_s: float
    trial: int
    naive_error_m: float
    robust_error_m: float
    cfd: float
    band: str
    status: str


@dataclass
class DelayAggregate:
    delay_s: float
    trials: int
    corrupt_fraction: float
    mean_error_m: float
    ci_low_m: float
    ci_high_m: float
    max_error_m: float
    median_error_m: float
    median_naive_error_m: float
    mean_cfd: float
    min_cfd: float


@dataclass
class ExperimentReport:
    rows: list[TrialRow] = field(default_factory=list)
    columns = EXPERIMENT_COLUMNS

    def records(self) -> list[dict]:
        return [asdict(r) for r in self.rows]

    def delays(self) -> list[float]:
        return sorted({r.delay_s for r in self.rows})

    def aggregates(self) -> list[DelayAggregate]:
        out = []
        for d in self.delays():
            rows = [r for r in self.rows if r.delay_s == d]
            err = np.array([r.robust_error_m for r in rows])
            naive = np.array([r.naive_error_m for r in rows])
            cfd = np.array([r.cfd for r in rows])
            est = err[np.isfinite(err)]
            mean, lo, hi = t_interval(est)
            out.append(DelayAggregate(
                delay_s=d,
                trials=len(rows),
                corrupt_fraction=float(np.mean([r.status == "corrupt_system" for r in rows])),
                mean_error_m=mean,
                ci_low_m=lo,
                ci_high_m=hi,
                max_error_m=float(est.max()) if est.size else math.nan,
                median_error_m=float(np.median(est)) if est.size else math.nan,
                median_naive_error_m=float(np.median(naive)),
                mean_cfd=float(cfd.mean()),
                min_cfd=float(cfd.min()),
            ))
        return out


def calibrate(cfg: ScenarioConfig, network, attack: AttackVector, rng) -> WeightTable:
    """Calibration batch from the known source, optionally with m-to-n selection."""
    params = cfg.params()
    sel = cfg.selection_spec()
    count = sel.m if sel else cfg.calib_n
    batch = synthesize_tdoa_set(network, cfg.calib_point(), attack, params, count, rng)
    if sel:
        chosen = np.array([select_measurements(row, sel) for row in batch.values])
        batch = TdoaSet(batch.pairs, chosen, batch.sigma)
    return define_weights(network, cfg.calib_point(), batch.sigma, batch, v=cfg.v)


def locate_once(cfg, network, weights, source, attack, rng) -> tuple[LocalizationResult, LocalizationResult]:
    snap = synthesize_tdoa_set(network, source, attack, cfg.params(), 1, rng)
    bbox = grid_bbox(cfg.half_extent, network.dim)
    robust = robust_localize(weights, network, snap, bbox=bbox)
    naive = naive_localize(network, snap, bbox=bbox)
    return robust, naive


def trial_rng(seed: int, scenario: int, delay_idx: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, scenario, delay_idx, trial])


def run_scenario(cfg: ScenarioConfig) -> ExperimentReport:
    """Calibrate, then localize robustly and naively, for every delay and trial."""
    network = cfg.network()
    source = cfg.source_point()
    report = ExperimentReport()
    sid = cfg.report_id
    for di, d in enumerate(cfg.delay_values()):
        attack = cfg.attack_vector(float(d))
        for trial in range(cfg.trials):
            rng = trial_rng(cfg.seed, sid, di, trial)
            weights = calibrate(cfg, network, attack, rng)
            robust, naive = locate_once(cfg, network, weights, source, attack, rng)
            report.rows.append(TrialRow(
                scenario_id=sid,
                delay_s=float(d),
                trial=trial,
                naive_error_m=naive.error_to(source),
                robust_error_m=robust.error_to(source),
                cfd=float(weights.cfd),
                band=robust.band,
                status=robust.status.value,
            ))
    return report


@dataclass
class TrajectoryRow:
    instant: int
    truth: list[float]
    robust: list[float] | None
    naive: list[float]
    robust_error_m: float
    naive_error_m: float
    robust_altitude_error_m: float
    naive_altitude_error_m: float
    cfd: float
    band: str
    status: str


@dataclass
class TrajectoryReport:
    rows: list[TrajectoryRow] = field(default_factory=list)
    columns = [
        "instant", "truth", "robust", "naive", "robust_error_m", "naive_error_m",
        "robust_altitude_error_m", "naive_altitude_error_m", "cfd", "band", "status",
    ]

    def records(self) -> list[dict]:
        return [asdict(r) for r in self.rows]


def _altitude_error(est, truth) -> float:
    if est is None or len(truth) < 3:
        return math.nan
    return float(abs(est[2] - truth[2]))


def run_trajectory(cfg: ScenarioConfig) -> TrajectoryReport:
    """Localize the source at each trajectory instant.

    Weights are recalibrated only when the attack vector changes, so a static
    attack uses a single calibration for the whole run.
    """
    network = cfg.network()
    points = cfg.trajectory_points()
    attacks = cfg.schedule_vectors(len(points))
    rng = np.random.default_rng([cfg.seed, cfg.report_id])
    report = TrajectoryReport()
    weights, epoch_attack = None, None
    for k, (pt, attack) in enumerate(zip(points, attacks)):
        if epoch_attack is None or not np.array_equal(attack.offsets, epoch_attack.offsets):
            weights = calibrate(cfg, network, attack, rng)
            epoch_attack = attack
        robust, naive = locate_once(cfg, network, weights, pt, attack, rng)
        report.rows.append(TrajectoryRow(
            instant=k,
            truth=pt.tolist(),
            robust=None if robust.position is None else robust.position.tolist(),
            naive=naive.position.tolist(),
            robust_error_m=robust.error_to(pt),
            naive_error_m=naive.error_to(pt),
            robust_altitude_error_m=_altitude_error(robust.position, pt),
            naive_altitude_error_m=_altitude_error(naive.position, pt),
            cfd=float(weights.cfd),
            band=robust.band,
            status=robust.status.value,
        ))
    return report


@dataclass
class AppendixRow:
    scenario: int
    a: float
    q: float
    sample_set: str
    mean_weight: float
    ci_low: float
    ci_high: float
    min_weight: float
    trials: int


@dataclass
class AppendixReport:
    rows: list[AppendixRow] = field(default_factory=list)
    columns = ["scenario", "a", "q", "sample_set", "mean_weight", "ci_low", "ci_high", "min_weight", "trials"]

    def records(self) -> list[dict]:
        return [asdict(r) for r in self.rows]

    def cell(self, scenario: int, a: float, q: float, sample_set: str = "selected") -> AppendixRow:
        for r in self.rows:
            if r.scenario == scenario and r.a == a and r.q == q and r.sample_set == sample_set:
                return r
        raise KeyError((scenario, a, q, sample_set))


def run_appendix_experiment(
    a_values,
    q_values,
    m: int,
    n: int,
    b: int,
    trials: int,
    rng: np.random.Generator,
    mu: float = 7e-7,
    sigma: float = DEFAULT_SIGMA,
    v: float = DEFAULT_EXPONENT,
) -> AppendixReport:
    """Weights ``p**(1/v)`` from all m and from the selected n samples.

    Scenario 1 is a synchronized pair whose calibration is attacked;
    scenario 2 is a pair under a timing attack that the calibration attack
    tries to hide.
    """
    spec = SelectionSpec(m, n, b)
    report = AppendixReport()
    for scenario, shifted_is_attack in ((1, True), (2, False)):
        for a in a_values:
            for q in q_values:
                cal = CalibrationAttackSpec(float(q), float(a), m)
                w_all = np.empty(trials)
                w_sel = np.empty(trials)
                for t in range(trials):
                    x = calibration_attack_samples(mu, sigma, cal, shifted_is_attack, rng)
                    w_all[t] = ztest_pvalue(x - mu, sigma) ** (1.0 / v)
                    w_sel[t] = ztest_pvalue(select_measurements(x, spec) - mu, sigma) ** (1.0 / v)
                for name, w in (("all", w_all), ("selected", w_sel)):
                    mean, lo, hi = t_interval(w)
                    report.rows.append(AppendixRow(scenario, float(a), float(q), name, mean, lo, hi, float(w.min()), trials))
    return report
