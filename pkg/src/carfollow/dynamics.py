"""Discrete-time longitudinal simulation of independent lanes.

Lanes are stacked along axis 0 of every state array so a two-lane road is
stepped with the same vectorised code as a single lane. Within a lane,
column 0 is the rearmost vehicle and the last column is the lane head.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from carfollow.models import (
    KMH,
    OPEN_ROAD_GAP,
    CarFollowingModel,
    ModelKind,
    Observation,
    ParameterError,
    _seidm_from_risk,
    model_acceleration,
    risk_factor,
)

LOG = logging.getLogger(__name__)

VEHICLE_LENGTH = 4.5


@dataclass
class VehicleState:
    position: float  # front bumper, m
    speed: float
    accel: float = 0.0
    length: float = VEHICLE_LENGTH


@dataclass(frozen=True)
class StepConfig:
    dt: float = 0.1
    t_max: float = 300.0
    reaction: float = 1.0
    v_max: float = 95.0 * KMH
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError(f"time step dt must be > 0 (got {self.dt})")
        if not self.t_max > self.dt:
            raise ParameterError(f"t_max must exceed dt (got {self.t_max})")
        if self.reaction < 0:
            raise ParameterError(f"reaction time T' must be >= 0 (got {self.reaction})")
        if not self.v_max > 0:
            raise ParameterError(f"speed cap v_max must be > 0 (got {self.v_max})")

    @property
    def delay_steps(self) -> int:
        return int(round(self.reaction / self.dt))

    @property
    def max_steps(self) -> int:
        return int(round(self.t_max / self.dt))


# -- lead vehicle speed profiles ---------------------------------------------


@dataclass(frozen=True)
class Hold:
    duration: float  # s, may be inf


@dataclass(frozen=True)
class Ramp:
    rate: float  # m/s², signed
    target: float  # m/s


@dataclass(frozen=True)
class LeadProfile:
    """Piecewise speed schedule for a lane head.

    The head starts at ``initial_speed`` (its own initial speed if None),
    then runs the segments in order and holds the last speed forever.
    """

    segments: tuple = ()
    initial_speed: float | None = None

    @classmethod
    def emergency_brake(cls, target: float = 9.9, rate: float = -6.0, hold: float = 5.0,
                        initial_speed: float | None = None) -> "LeadProfile":
        return cls((Hold(hold), Ramp(rate, target)), initial_speed)

    @classmethod
    def parse(cls, text: str) -> "LeadProfile":
        """Parse ``hold:5,ramp:-6:9.9`` (seconds, m/s², m/s)."""
        segments = []
        for chunk in filter(None, (c.strip() for c in text.split(","))):
            name, *args = chunk.split(":")
            try:
                values = [float(a) for a in args]
            except ValueError as exc:
                raise ParameterError(f"bad profile segment {chunk!r}") from exc
            if name == "hold" and len(values) == 1:
                segments.append(Hold(values[0]))
            elif name == "ramp" and len(values) == 2:
                segments.append(Ramp(*values))
            else:
                raise ParameterError(f"bad profile segment {chunk!r}; use hold:D or ramp:A:U")
        return cls(tuple(segments))

    def describe(self) -> str:
        parts = []
        for seg in self.segments:
            if isinstance(seg, Hold):
                parts.append(f"hold:{seg.duration:g}")
            else:
                parts.append(f"ramp:{seg.rate:g}:{seg.target:g}")
        return ",".join(parts)

    def breakpoints(self, v_start: float):
        """(times, speeds) of the piecewise-linear schedule."""
        speed = v_start if self.initial_speed is None else self.initial_speed
        times, speeds = [0.0], [speed]
        t = 0.0
        for seg in self.segments:
            if isinstance(seg, Hold):
                if seg.duration < 0:
                    raise ParameterError("hold duration must be >= 0")
                if not np.isfinite(seg.duration):
                    break
                t += seg.duration
            else:
                if seg.target < 0:
                    raise ParameterError("profile speeds must be >= 0")
                delta = seg.target - speed
                if delta != 0 and (seg.rate == 0 or np.sign(seg.rate) != np.sign(delta)):
                    raise ParameterError(f"ramp rate {seg.rate} cannot reach {seg.target} from {speed}")
                if delta != 0:
                    t += delta / seg.rate
                speed = seg.target
            times.append(t)
            speeds.append(speed)
        return np.array(times), np.array(speeds)

    def speed_at(self, t, v_start: float):
        times, speeds = self.breakpoints(v_start)
        return np.interp(t, times, speeds)

    @property
    def brake_onset(self) -> float | None:
        """Start time of the first ramp, or None when the head never changes speed."""
        t = 0.0
        for seg in self.segments:
            if isinstance(seg, Ramp):
                return t
            t += seg.duration
        return None


# -- lane state and reaction delay -------------------------------------------


@dataclass
class LaneState:
    """Positions, speeds, realised accelerations and lengths, shape (lanes, n)."""

    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    length: np.ndarray
    ids: np.ndarray

    @classmethod
    def from_vehicles(cls, lanes: Sequence[Sequence[VehicleState]]) -> "LaneState":
        sizes = {len(lane) for lane in lanes}
        if len(sizes) != 1:
            raise ParameterError("all lanes must hold the same number of vehicles")
        n = sizes.pop()
        if n < 1:
            raise ParameterError("a lane needs at least one vehicle")
        grab = lambda attr: np.array([[getattr(veh, attr) for veh in lane] for lane in lanes], float)
        state = cls(grab("position"), grab("speed"), grab("accel"), grab("length"),
                    np.tile(np.arange(n), (len(lanes), 1)))
        if np.any(state.v < 0):
            raise ParameterError("initial speeds must be >= 0")
        if n > 1 and np.any(state.gaps() <= 0):
            raise ParameterError("vehicles must be ordered rear to front with positive gaps")
        return state

    @property
    def n_lanes(self) -> int:
        return self.x.shape[0]

    @property
    def n_vehicles(self) -> int:
        return self.x.shape[1]

    def gaps(self) -> np.ndarray:
        """Bumper-to-bumper gap of each follower, shape (lanes, n-1)."""
        return self.x[:, 1:] - self.length[:, 1:] - self.x[:, :-1]

    def copy(self) -> "LaneState":
        return LaneState(self.x.copy(), self.v.copy(), self.a.copy(), self.length.copy(), self.ids.copy())

    def vehicles(self, lane: int) -> list[VehicleState]:
        return [VehicleState(*vals) for vals in zip(self.x[lane], self.v[lane], self.a[lane], self.length[lane])]


class DelayBuffer:
    """Ring of past (gap, leader speed) observations, one column per follower.

    With depth k the follower acts on what it saw k steps ago; until k steps
    have elapsed it uses the oldest observation available.
    """

    def __init__(self, depth: int, shape: tuple[int, int]):
        if depth < 0:
            raise ParameterError("delay depth must be >= 0")
        self.depth = depth
        self.gap = np.empty((depth + 1, *shape))
        self.leader_speed = np.empty((depth + 1, *shape))
        self.count = 0

    def push(self, gap: np.ndarray, leader_speed: np.ndarray):
        size = self.depth + 1
        slot = self.count % size
        self.gap[slot] = gap
        self.leader_speed[slot] = leader_speed
        self.count += 1
        old = max(0, self.count - 1 - self.depth) % size
        return self.gap[old], self.leader_speed[old]

    def insert_vehicle(self, lane_slots: Sequence[int], gaps: np.ndarray, leader_speed: np.ndarray):
        """Account for a vehicle inserted in front of follower ``lane_slots[l]`` in each lane.

        ``gaps``/``leader_speed`` are the current observations after insertion;
        the two followers whose leader changed see them immediately.
        """
        g = np.empty((self.depth + 1, self.gap.shape[1], self.gap.shape[2] + 1))
        vl = np.empty_like(g)
        for lane, j in enumerate(lane_slots):
            g[:, lane] = np.insert(self.gap[:, lane], j + 1, 0.0, axis=1)
            vl[:, lane] = np.insert(self.leader_speed[:, lane], j + 1, 0.0, axis=1)
            for col in (j, j + 1):
                g[:, lane, col] = gaps[lane, col]
                vl[:, lane, col] = leader_speed[lane, col]
        self.gap, self.leader_speed = g, vl


@dataclass(frozen=True)
class Insertion:
    """Drop one vehicle per lane into the middle of gap ``slots[l]`` at ``time``."""

    time: float
    slots: tuple[int, ...]
    speed: float
    length: float = VEHICLE_LENGTH


@dataclass(frozen=True)
class Collision:
    time: float
    lane: int
    follower_id: int
    leader_id: int


def step_lane(state: LaneState, buffer: DelayBuffer, model: CarFollowingModel, cfg: StepConfig,
              t: float, profile: LeadProfile | None = None, head_start: float | None = None):
    """Advance every lane by one tick.

    Returns ``(new_state, risk)`` where ``risk`` holds SEIDM risk factors per
    vehicle (None for other laws). Integration is semi-implicit Euler with
    v' = clip(v + a dt, 0, v_max) and x' = x + v' dt; the stored acceleration
    is the realised (v' - v)/dt.
    """
    dt = cfg.dt
    v = state.v
    a_cmd = np.empty_like(v)
    risk = np.empty_like(v) if model.kind is ModelKind.SEIDM else None
    if state.n_vehicles > 1:
        gap_seen, vl_seen = buffer.push(state.gaps(), v[:, 1:])
        obs = Observation(gap_seen, v[:, :-1], vl_seen)
        if model.kind is ModelKind.SEIDM:
            risk[:, :-1] = risk_factor(obs, model.params, model.risk)
            a_cmd[:, :-1] = _seidm_from_risk(obs, model.params, model.risk, risk[:, :-1])
        else:
            a_cmd[:, :-1] = model_acceleration(model, obs, dt)
    if profile is None:
        head = Observation(OPEN_ROAD_GAP, v[:, -1], v[:, -1])
        if risk is not None:
            risk[:, -1] = risk_factor(head, model.params, model.risk)
            a_cmd[:, -1] = _seidm_from_risk(head, model.params, model.risk, risk[:, -1])
        else:
            a_cmd[:, -1] = model_acceleration(model, head, dt)
    else:
        a_cmd[:, -1] = 0.0  # replaced by the profile below
        if risk is not None:
            risk[:, -1] = np.nan

    v_new = np.minimum(np.maximum(v + a_cmd * dt, 0.0), cfg.v_max)
    if profile is not None:
        v_new[:, -1] = profile.speed_at(t + dt, head_start)
    new = LaneState(state.x + v_new * dt, v_new, (v_new - v) / dt, state.length, state.ids)
    return new, risk


# -- trajectory recording ----------------------------------------------------

FIELDS = ("x", "v", "a", "gap", "risk")


class _Recorder:
    """Chunked row store indexed by vehicle id; absent vehicles stay NaN."""

    CHUNK = 4096

    def __init__(self, n_lanes: int, n_ids: int):
        self.shape = (n_lanes, n_ids)
        self.rows = 0
        self.chunks: list[dict[str, np.ndarray]] = []
        self.times: list[float] = []

    def add(self, t: float, state: LaneState, risk):
        pos = self.rows % self.CHUNK
        if pos == 0:
            self.chunks.append({f: np.full((self.CHUNK, *self.shape), np.nan) for f in FIELDS})
        chunk = self.chunks[-1]
        lanes = np.arange(state.n_lanes)[:, None]
        ids = state.ids
        chunk["x"][pos][lanes, ids] = state.x
        chunk["v"][pos][lanes, ids] = state.v
        chunk["a"][pos][lanes, ids] = state.a
        if state.n_vehicles > 1:
            chunk["gap"][pos][lanes, ids[:, :-1]] = state.gaps()
        if risk is not None:
            chunk["risk"][pos][lanes, ids] = risk
        self.times.append(t)
        self.rows += 1

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for f in FIELDS:
            if self.chunks:
                out[f] = np.concatenate([c[f] for c in self.chunks])[: self.rows]
            else:
                out[f] = np.empty((0, *self.shape))
        return out


@dataclass
class Trajectory:
    """Per-step time series, arrays of shape (rows, lanes, vehicle ids).

    Row 0 is the initial state at t=0; every later row follows one step.
    ``gap`` is NaN for lane heads and ``risk`` is NaN for non-SEIDM laws.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    gap: np.ndarray
    risk: np.ndarray
    dt: float
    status: str
    collision: Collision | None = None
    model: str = ""
    events: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    @property
    def n_lanes(self) -> int:
        return self.x.shape[1]


class Simulation:
    """Owns lane state, delay buffers and the clock for one trial."""

    def __init__(self, state: LaneState, model: CarFollowingModel, cfg: StepConfig,
                 profile: LeadProfile | None = None, insertions: Sequence[Insertion] = ()):
        self.state = state.copy()
        self.model = model
        self.cfg = cfg
        self.profile = profile
        self.insertions = sorted(insertions, key=lambda ev: ev.time)
        self._all_insertions = tuple(self.insertions)
        # one schedule for every lane, anchored at lane 0's head speed
        self.head_start = float(state.v[0, -1]) if profile is not None else None
        shape = (state.n_lanes, max(state.n_vehicles - 1, 0))
        self.buffer = DelayBuffer(cfg.delay_steps, shape)
        self.steps = 0
        self.risk = None
        self.max_ids = state.n_vehicles + len(self.insertions)
        self._next_id = state.n_vehicles

    @property
    def t(self) -> float:
        return self.steps * self.cfg.dt

    def _apply_insertions(self):
        while self.insertions and self.insertions[0].time <= self.t + 0.5 * self.cfg.dt:
            ev = self.insertions.pop(0)
            self._insert(ev)

    def _insert(self, ev: Insertion):
        s = self.state
        if len(ev.slots) != s.n_lanes:
            raise ParameterError("an insertion needs one slot per lane")
        rows = {f: [] for f in ("x", "v", "a", "length", "ids")}
        for lane, j in enumerate(ev.slots):
            if not 0 <= j < s.n_vehicles - 1:
                raise ParameterError(f"insertion slot {j} out of range")
            gap = s.x[lane, j + 1] - s.length[lane, j + 1] - s.x[lane, j]
            half = 0.5 * (gap - ev.length)
            if half <= 0:
                raise ParameterError(f"gap {gap:.2f} m too short for insertion")
            front = s.x[lane, j] + half + ev.length
            rows["x"].append(np.insert(s.x[lane], j + 1, front))
            rows["v"].append(np.insert(s.v[lane], j + 1, ev.speed))
            rows["a"].append(np.insert(s.a[lane], j + 1, 0.0))
            rows["length"].append(np.insert(s.length[lane], j + 1, ev.length))
            rows["ids"].append(np.insert(s.ids[lane], j + 1, self._next_id))
        self._next_id += 1
        self.state = LaneState(*(np.array(rows[f]) for f in ("x", "v", "a", "length", "ids")))
        self.buffer.insert_vehicle(ev.slots, self.state.gaps(), self.state.v[:, 1:])
        LOG.debug("inserted vehicle at t=%.2f into slots %s", self.t, ev.slots)

    def step(self) -> Collision | None:
        self._apply_insertions()
        self.state, self.risk = step_lane(self.state, self.buffer, self.model, self.cfg,
                                          self.t, self.profile, self.head_start)
        self.steps += 1
        if self.state.n_vehicles > 1:
            gaps = self.state.gaps()
            bad = np.argwhere(gaps <= 0)
            if len(bad):
                lane, k = (int(i) for i in bad[0])
                ids = self.state.ids[lane]
                return Collision(self.t, lane, int(ids[k]), int(ids[k + 1]))
        return None

    def _initial_risk(self):
        if self.model.kind is not ModelKind.SEIDM:
            return None
        s = self.state
        risk = np.full(s.x.shape, np.nan)
        if s.n_vehicles > 1:
            risk[:, :-1] = risk_factor(Observation(s.gaps(), s.v[:, :-1], s.v[:, 1:]),
                                       self.model.params, self.model.risk)
        if self.profile is None:
            risk[:, -1] = risk_factor(Observation(OPEN_ROAD_GAP, s.v[:, -1], s.v[:, -1]),
                                      self.model.params, self.model.risk)
        return risk

    def run(self, until: Callable[["Simulation"], bool] | None = None, record: bool = True) -> Trajectory:
        """Step until ``until(sim)`` is true or t_max is reached.

        ``until`` is evaluated on the initial state and after every step.
        Status is "stopped" when the condition fired, "timeout" when t_max was
        hit first (or "completed" when no condition was given) and
        "collision" when any gap closed.
        """
        rec = _Recorder(self.state.n_lanes, self.max_ids) if record else None
        if rec is not None:
            rec.add(self.t, self.state, self._initial_risk())
        status, collision = None, None
        if until is not None and until(self):
            status = "stopped"
        while status is None:
            if self.steps >= self.cfg.max_steps:
                status = "timeout" if until is not None else "completed"
                break
            collision = self.step()
            if rec is not None:
                rec.add(self.t, self.state, self.risk)
            if collision is not None:
                status = "collision"
                LOG.info("collision at t=%.1f s in lane %d", collision.time, collision.lane)
            elif until is not None and until(self):
                status = "stopped"
        arrays = rec.arrays() if rec is not None else {f: None for f in FIELDS}
        times = np.array(rec.times) if rec is not None else np.array([self.t])
        events = {}
        if self.profile is not None and self.profile.brake_onset is not None:
            events["brake_onset"] = self.profile.brake_onset
        if self._all_insertions:
            events["insertions"] = self._all_insertions
        return Trajectory(times, dt=self.cfg.dt, status=status, collision=collision,
                          model=self.model.label, events=events, **arrays)


def until_time(t_end: float) -> Callable[[Simulation], bool]:
    return lambda sim: sim.t >= t_end - 0.5 * sim.cfg.dt
