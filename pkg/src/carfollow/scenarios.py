"""Seeded builders for the four experiment scenarios and the trial runner.

Scenario I   chaotic start: random speeds in [0.8, 1.0] * v_max, gaps at the
             IDM desired gap of each follower, two lanes of 40.
Scenario II  two vehicles at v_max and equilibrium spacing; the head brakes.
Scenario III as II with a platoon of 10.
Scenario IV  two lanes of 40 at equilibrium; one vehicle per lane is dropped
             into the middle of a random gap at t_insert.

Per-trial randomness comes from ``numpy.random.SeedSequence(base_seed,
spawn_key=(trial, lane))`` so any trial can be replayed on its own.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from carfollow.dynamics import (
    VEHICLE_LENGTH,
    Insertion,
    LaneState,
    LeadProfile,
    Simulation,
    StepConfig,
    Trajectory,
    VehicleState,
)
from carfollow.metrics import (
    MetricsReport,
    NoResponseError,
    NotStabilizedError,
    StabilizationCriterion,
    StabilizationMonitor,
    braking_metrics,
    detect_stabilization,
    final_spacing_and_reduction,
    mean_report,
    response_time,
    throughput,
)
from carfollow.models import CarFollowingModel, ModelKind, desired_gap, equilibrium_gap

LOG = logging.getLogger(__name__)

KINDS = ("I", "II", "III", "IV")
DEFAULT_VEHICLES = {"I": 40, "II": 2, "III": 10, "IV": 40}
DEFAULT_LANES = {"I": 2, "II": 1, "III": 1, "IV": 2}
DEFAULT_TRIALS = {"I": 20, "II": 1, "III": 1, "IV": 20}
DEFAULT_T_MAX = {"I": 5000.0, "II": 300.0, "III": 300.0, "IV": 5000.0}

# Leader brake target: speed whose IDM equilibrium gap is 17.96 m.
DEFAULT_BRAKE_SPEED = 9.9

STATUSES = ("stabilized", "timeout", "collision")


class InsertionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "I"
    model: CarFollowingModel = field(default_factory=CarFollowingModel)
    step: StepConfig | None = None
    n_vehicles: int | None = None
    n_lanes: int | None = None
    trials: int | None = None
    seed: int = 0
    profile: LeadProfile | None = None
    t_insert: float = 10.0
    criterion: StabilizationCriterion = field(default_factory=StabilizationCriterion)
    response_threshold: float = 1e-4
    speed_fraction: tuple[float, float] = (0.8, 1.0)
    vehicle_length: float = VEHICLE_LENGTH
    initial_gap: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario {self.kind!r} (choose from {', '.join(KINDS)})")
        lo, hi = self.speed_fraction
        if not 0 <= lo <= hi:
            raise ValueError("speed_fraction must satisfy 0 <= lo <= hi")

    # resolved defaults
    @property
    def vehicles(self) -> int:
        return self.n_vehicles or DEFAULT_VEHICLES[self.kind]

    @property
    def lanes(self) -> int:
        return self.n_lanes or DEFAULT_LANES[self.kind]

    @property
    def trial_count(self) -> int:
        return self.trials or DEFAULT_TRIALS[self.kind]

    @property
    def step_config(self) -> StepConfig:
        if self.step is not None:
            return self.step
        return StepConfig(t_max=DEFAULT_T_MAX[self.kind], v_max=self.model.variant.v_max,
                          reaction=self.model.variant.reaction, seed=self.seed)

    @property
    def lead_profile(self) -> LeadProfile:
        return self.profile or LeadProfile.emergency_brake(DEFAULT_BRAKE_SPEED)


def trial_rng(seed: int, trial: int, lane: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial, lane)))


def _platoon(speeds, gaps, length: float) -> list[VehicleState]:
    """Vehicles rear to front; gaps[i] is the gap in front of vehicle i."""
    lane = [VehicleState(0.0, float(speeds[0]), 0.0, length)]
    for i in range(1, len(speeds)):
        front = lane[-1].position + gaps[i - 1] + length
        lane.append(VehicleState(float(front), float(speeds[i]), 0.0, length))
    return lane


def build_scenario_I(cfg: ScenarioConfig, trial: int = 0) -> LaneState:
    if cfg.vehicles < 2:
        raise ValueError("scenario I needs at least two vehicles per lane")
    v_max = cfg.step_config.v_max
    lo, hi = cfg.speed_fraction
    lanes = []
    for lane in range(cfg.lanes):
        rng = trial_rng(cfg.seed, trial, lane)
        speeds = rng.uniform(lo * v_max, hi * v_max, cfg.vehicles)
        # IDM desired gap for every model under test, so geometry is shared
        gaps = desired_gap(speeds[:-1], 0.0, cfg.model.params)
        lanes.append(_platoon(speeds, np.atleast_1d(gaps), cfg.vehicle_length))
    return LaneState.from_vehicles(lanes)


def krauss_reference_gap(cfg: ScenarioConfig) -> float:
    """Stabilized Scenario I spacing of the Krauss law (it has no unique equilibrium)."""
    ref = replace(cfg, kind="I", n_vehicles=None, n_lanes=None, trials=1, step=None, initial_gap=None)
    result = run_trial(ref, 0)
    if result.metrics.stabilization_spacing is None:
        raise NotStabilizedError("Krauss reference run did not stabilize")
    return result.metrics.stabilization_spacing


def _equilibrium_start(cfg: ScenarioConfig) -> float:
    if cfg.initial_gap is not None:
        return cfg.initial_gap
    if cfg.model.kind is ModelKind.KRAUSS:
        return krauss_reference_gap(cfg)
    return equilibrium_gap(cfg.model, cfg.step_config.v_max)


def _uniform_lanes(cfg: ScenarioConfig, gap: float) -> LaneState:
    n = cfg.vehicles
    v_max = cfg.step_config.v_max
    lane = _platoon(np.full(n, v_max), np.full(n - 1, gap), cfg.vehicle_length)
    return LaneState.from_vehicles([lane] * cfg.lanes)


def build_scenario_II(cfg: ScenarioConfig) -> LaneState:
    return _uniform_lanes(cfg, _equilibrium_start(cfg))


build_scenario_III = build_scenario_II


def build_scenario_IV(cfg: ScenarioConfig, trial: int = 0) -> tuple[LaneState, Insertion]:
    gap = _equilibrium_start(cfg)
    state = _uniform_lanes(cfg, gap)
    length = cfg.vehicle_length
    slots = []
    for lane in range(cfg.lanes):
        gaps = state.gaps()[lane]
        feasible = np.nonzero(0.5 * (gaps - length) > length)[0]
        if len(feasible) == 0:
            raise InsertionError("no gap is wide enough for an insertion")
        rng = trial_rng(cfg.seed, trial, lane)
        slots.append(int(rng.choice(feasible)))
    return state, Insertion(cfg.t_insert, tuple(slots), cfg.step_config.v_max, length)


@dataclass
class TrialResult:
    trial: int
    status: str
    metrics: MetricsReport
    trajectory: Trajectory | None = None
    slots: tuple[int, ...] | None = None


def _status(traj: Trajectory) -> str:
    return {"stopped": "stabilized", "collision": "collision"}.get(traj.status, "timeout")


def run_trial(cfg: ScenarioConfig, trial: int = 0, keep_trajectory: bool = False) -> TrialResult:
    """Build, simulate and measure one trial; failures land in the status."""
    step = cfg.step_config
    crit = cfg.criterion
    profile = None
    insertion = None
    after = 0.0
    if cfg.kind == "I":
        state = build_scenario_I(cfg, trial)
    elif cfg.kind in ("II", "III"):
        state = build_scenario_II(cfg)
        profile = cfg.lead_profile
        after = profile.brake_onset or 0.0
    else:
        state, insertion = build_scenario_IV(cfg, trial)
        after = insertion.time

    sim = Simulation(state, cfg.model, step, profile, [insertion] if insertion else [])
    traj = sim.run(until=StabilizationMonitor(crit, after=after))
    status = _status(traj)
    report = MetricsReport()
    finite_v = traj.v[np.isfinite(traj.v)]
    report.max_speed = float(finite_v.max())
    report.min_speed = float(finite_v.min())
    n = traj.v.shape[2]
    report.rear_half_speed = float(np.nanmean(traj.v[-1][:, : max(1, cfg.vehicles // 2)]))

    stab = None
    if status == "stabilized":
        stab = detect_stabilization(traj, crit, after=after)
    if cfg.kind in ("I", "IV") and stab is not None:
        report.stabilization_period = stab.period
        report.stabilization_spacing = stab.spacing
        report.throughput = throughput(stab.spacing, stab.speed)
    if cfg.kind in ("II", "III"):
        onset = profile.brake_onset
        report.peak_decel = float(np.nanmin(traj.a[:, :, : n - 1]))
        try:
            braking = braking_metrics(traj, onset, crit)
            report.braking_duration = braking.duration
            report.peak_decel = braking.peak_decel
            report.iso_windowed_decel = braking.iso_window
        except NotStabilizedError:
            pass
        try:
            final, reduction = final_spacing_and_reduction(traj, crit, after=after)
            report.final_spacing = tuple(float(f) for f in final)
            report.spacing_reduction = tuple(float(r) for r in reduction)
        except NotStabilizedError:
            pass
    if cfg.kind == "IV":
        try:
            report.response_time = response_time(traj, insertion.time, cfg.response_threshold)
        except NoResponseError:
            pass
    LOG.info("scenario %s %s trial %d: %s", cfg.kind, cfg.model.label, trial, status)
    return TrialResult(trial, status, report, traj if keep_trajectory else None,
                       insertion.slots if insertion else None)


def _run_one(args):
    cfg, trial, keep = args
    return run_trial(cfg, trial, keep)


def run_trials(cfg: ScenarioConfig, workers: int = 1, keep_trajectories: bool = False) -> list[TrialResult]:
    """Run every trial of ``cfg``; results are ordered by trial index."""
    jobs = [(cfg, i, keep_trajectories) for i in range(cfg.trial_count)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    return sorted(results, key=lambda r: r.trial)


def aggregate(results: list[TrialResult]) -> MetricsReport:
    return mean_report([r.metrics for r in results])
