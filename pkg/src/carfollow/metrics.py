"""Stabilization detection and the summary quantities reported per trial."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from carfollow.dynamics import Simulation, Trajectory


class NotStabilizedError(RuntimeError):
    pass


class NoResponseError(RuntimeError):
    pass


@dataclass(frozen=True)
class StabilizationCriterion:
    """Every vehicle has |a| < accel_tol and |v - lane mean| < speed_tol for hold_window seconds."""

    accel_tol: float = 0.005
    speed_tol: float = 0.05
    hold_window: float = 30.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"stabilization {f.name} must be > 0 (got {getattr(self, f.name)})")


def is_quiescent(a: np.ndarray, v: np.ndarray, crit: StabilizationCriterion) -> bool:
    """Check one live state slice of shape (lanes, vehicles)."""
    if np.abs(a).max() >= crit.accel_tol:
        return False
    lane_mean = v.mean(axis=-1, keepdims=True)
    return bool(np.abs(v - lane_mean).max() < crit.speed_tol)


class StabilizationMonitor:
    """Online stop condition for :meth:`Simulation.run`.

    Fires once the criterion has held continuously for ``hold_window``
    seconds starting no earlier than ``after``.
    """

    def __init__(self, crit: StabilizationCriterion, after: float = 0.0):
        self.crit = crit
        self.after = after
        self.start: float | None = None

    def __call__(self, sim: Simulation) -> bool:
        t = sim.t
        eps = 0.5 * sim.cfg.dt
        if t < self.after - eps or not is_quiescent(sim.state.a, sim.state.v, self.crit):
            self.start = None
            return False
        if self.start is None:
            self.start = t
        return t - self.start >= self.crit.hold_window - eps


@dataclass(frozen=True)
class Stabilization:
    period: float  # s, absolute simulation time at which the quiet window opens
    spacing: float  # m, mean follower gap over the window, averaged across lanes
    speed: float  # m/s, mean speed over the window
    start: int  # row index of the window start
    stop: int  # row index one past the window end


def quiescent_rows(traj: Trajectory, crit: StabilizationCriterion) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        accel_ok = np.nanmax(np.abs(traj.a), axis=(1, 2)) < crit.accel_tol
        lane_mean = np.nanmean(traj.v, axis=2, keepdims=True)
        speed_ok = np.nanmax(np.abs(traj.v - lane_mean), axis=(1, 2)) < crit.speed_tol
    return accel_ok & speed_ok


def detect_stabilization(traj: Trajectory, crit: StabilizationCriterion = StabilizationCriterion(),
                         after: float = 0.0) -> Stabilization:
    """Earliest t >= after such that every row in [t, t + hold_window] is quiescent."""
    width = int(round(crit.hold_window / traj.dt))
    ok = quiescent_rows(traj, crit)
    # run length of consecutive quiescent rows ending at each index
    runs = np.zeros(len(ok) + 1, dtype=int)
    for i, flag in enumerate(ok):
        runs[i + 1] = runs[i] + 1 if flag else 0
    first = int(np.searchsorted(traj.t, after - 0.5 * traj.dt))
    ends = np.nonzero(runs[1:] >= width + 1)[0]
    starts = ends - width
    valid = starts[starts >= first]
    if len(valid) == 0:
        raise NotStabilizedError(f"criterion never held for {crit.hold_window} s after t={after}")
    k = int(valid[0])
    window = slice(k, k + width + 1)
    with np.errstate(invalid="ignore"):
        spacing = float(np.nanmean(np.nanmean(traj.gap[window], axis=(0, 2))))
        speed = float(np.nanmean(traj.v[window]))
    return Stabilization(float(traj.t[k]), spacing, speed, k, k + width + 1)


def throughput(spacing: float, speed: float) -> float:
    """Vehicles per hour through a point for bumper-to-bumper spacing (m) at speed (m/s)."""
    if not spacing > 0:
        raise ValueError(f"spacing must be > 0 (got {spacing})")
    return 3600.0 * speed / spacing


def _followers(traj: Trajectory) -> np.ndarray:
    """Mask of (lane, id) columns that ever have a leader."""
    return np.any(np.isfinite(traj.gap), axis=0)


def iso_window_decel(traj: Trajectory, window: float = 2.0) -> float:
    """Largest moving average of deceleration magnitude over ``window`` seconds, across followers."""
    width = max(1, int(round(window / traj.dt)))
    decel = np.clip(-np.nan_to_num(traj.a[1:, _followers(traj)]), 0.0, None)
    if decel.shape[0] < width:
        return float(decel.mean(axis=0).max()) if decel.size else 0.0
    csum = np.cumsum(np.vstack([np.zeros((1, decel.shape[1])), decel]), axis=0)
    moving = (csum[width:] - csum[:-width]) / width
    return float(moving.max()) if moving.size else 0.0


@dataclass(frozen=True)
class BrakingMetrics:
    duration: float
    peak_decel: float
    iso_window: float


def braking_metrics(traj: Trajectory, onset: float | None,
                    crit: StabilizationCriterion = StabilizationCriterion()) -> BrakingMetrics:
    """Braking duration, peak (most negative) follower acceleration and 2-s ISO window value."""
    followers = traj.a[:, _followers(traj)]
    peak = float(np.nanmin(followers)) if followers.size else 0.0
    iso = iso_window_decel(traj)
    if onset is None:
        return BrakingMetrics(0.0, peak, iso)
    stab = detect_stabilization(traj, crit, after=onset)
    return BrakingMetrics(stab.period - onset, peak, iso)


def final_spacing_and_reduction(traj: Trajectory, crit: StabilizationCriterion = StabilizationCriterion(),
                                after: float = 0.0):
    """Per-follower (final, reduction) arrays, rearmost first, lanes concatenated.

    final is the follower's mean gap over the stabilization window and
    reduction is its initial gap minus final. A collision yields final = 0.
    """
    mask = _followers(traj)
    initial = traj.gap[0][mask]
    if traj.status == "collision":
        return np.zeros_like(initial), initial.copy()
    stab = detect_stabilization(traj, crit, after=after)
    final = np.nanmean(traj.gap[stab.start:stab.stop][:, mask], axis=0)
    return final, initial - final


def response_time(traj: Trajectory, insertion_time: float, threshold: float = 1e-4) -> float:
    """Delay until the rearmost vehicle of each lane first exceeds |a| > threshold; mean over lanes."""
    rear = np.abs(traj.a[:, :, 0])
    after = traj.t > insertion_time + 0.5 * traj.dt
    times = []
    for lane in range(rear.shape[1]):
        hit = np.nonzero(after & (rear[:, lane] > threshold))[0]
        if len(hit) == 0:
            raise NoResponseError(f"rearmost vehicle in lane {lane} never exceeded |a| > {threshold}")
        times.append(traj.t[hit[0]] - insertion_time)
    return float(np.mean(times))


@dataclass
class MetricsReport:
    stabilization_spacing: float | None = None
    stabilization_period: float | None = None
    throughput: float | None = None
    braking_duration: float | None = None
    peak_decel: float | None = None
    iso_windowed_decel: float | None = None
    final_spacing: tuple[float, ...] | None = None
    spacing_reduction: tuple[float, ...] | None = None
    response_time: float | None = None
    # diagnostics not in the summary CSV
    max_speed: float | None = None
    min_speed: float | None = None
    rear_half_speed: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    """Field-wise mean over the reports where a value is defined."""
    out = {}
    for f in fields(MetricsReport):
        values = [getattr(r, f.name) for r in reports if getattr(r, f.name) is not None]
        if not values:
            out[f.name] = None
        elif isinstance(values[0], tuple):
            if len({len(v) for v in values}) == 1:
                out[f.name] = tuple(float(x) for x in np.mean(np.array(values), axis=0))
            else:
                out[f.name] = None
        elif f.name == "max_speed":
            out[f.name] = float(max(values))
        elif f.name == "min_speed":
            out[f.name] = float(min(values))
        else:
            out[f.name] = float(np.mean(values))
    return MetricsReport(**out)
