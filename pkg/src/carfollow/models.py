"""Longitudinal car-following laws.

Every law here is a pure function of an :class:`Observation` and parameter
objects. Observation fields may be Python floats or numpy arrays of any
broadcastable shape; the simulator evaluates whole lanes in one call.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

KMH = 1.0 / 3.6

# Stand-in gap for a lane head driving on open road.
OPEN_ROAD_GAP = 1.0e6


class ParameterError(ValueError):
    """A parameter object violates one of its invariants."""


class NumericalDomainError(ArithmeticError):
    """A law produced a non-finite acceleration (e.g. gap at or near zero)."""


class NoEquilibriumError(ValueError):
    """The law has no finite equilibrium gap at the requested speed."""


def _require(ok: bool, message: str) -> None:
    if not ok:
        raise ParameterError(message)


@dataclass(frozen=True)
class ModelParams:
    """IDM parameter set shared by every law (SI units).

    Defaults are the desk-scale configuration: a0=1.46 m/s², b0=2 m/s²,
    v0=100 km/h, delta=4, T=1.6 s, s0=2 m.
    """

    a0: float = 1.46
    b0: float = 2.0
    v0: float = 100.0 * KMH
    delta: float = 4.0
    T: float = 1.6
    s0: float = 2.0

    def __post_init__(self):
        _require(self.a0 > 0, f"max acceleration a0 must be > 0 (got {self.a0})")
        _require(self.b0 > 0, f"comfortable deceleration b0 must be > 0 (got {self.b0})")
        _require(self.v0 > 0, f"desired speed v0 must be > 0 (got {self.v0})")
        _require(self.T > 0, f"safe time headway T must be > 0 (got {self.T})")
        _require(self.s0 > 0, f"static gap s0 must be > 0 (got {self.s0})")
        _require(self.delta >= 1, f"acceleration exponent delta must be >= 1 (got {self.delta})")


@dataclass(frozen=True)
class RiskParams:
    """Risk-factor settings for SEIDM.

    ``smoothing`` scales the width of the blend band around the switch
    between the TTC ratio and the headway ratio: eps = smoothing * (T/TH).
    """

    ttc0: float = 2.7
    r: float = 0.6
    smoothing: float = 0.1

    def __post_init__(self):
        _require(self.ttc0 > 0, f"TTC0 must be > 0 (got {self.ttc0})")
        _require(self.r >= 0, f"risk exponent r must be >= 0 (got {self.r})")
        _require(0 < self.smoothing < 1, f"smoothing must lie in (0, 1) (got {self.smoothing})")


@dataclass(frozen=True)
class VariantParams:
    """Extra parameters of the comparison laws.

    derbel_c: coefficient of the c*v^2/b0 term added to the desired gap.
    reaction: Krauss reaction time T' (s).
    v_max: road speed cap (m/s).
    """

    derbel_c: float = 0.4
    reaction: float = 1.0
    v_max: float = 95.0 * KMH

    def __post_init__(self):
        _require(self.derbel_c >= 0, f"derbel c must be >= 0 (got {self.derbel_c})")
        _require(self.reaction > 0, f"reaction time T' must be > 0 (got {self.reaction})")
        _require(self.v_max > 0, f"speed cap v_max must be > 0 (got {self.v_max})")


@dataclass(frozen=True)
class Observation:
    """What a follower sees: bumper-to-bumper gap, own speed, leader speed."""

    gap: float | np.ndarray
    speed: float | np.ndarray
    leader_speed: float | np.ndarray

    @classmethod
    def from_approach(cls, gap, speed, approach_rate) -> "Observation":
        return cls(gap, speed, np.subtract(speed, approach_rate))

    @property
    def approach_rate(self):
        """v_follower - v_leader (positive when closing in)."""
        return np.subtract(self.speed, self.leader_speed)


class ModelKind(str, enum.Enum):
    IDM = "IDM"
    SEIDM = "SEIDM"
    KRAUSS = "Krauss"
    DERBEL = "DerbelIDM"
    CLAMPED = "ClampedIDM"

    @classmethod
    def parse(cls, name: str) -> "ModelKind":
        for kind in cls:
            if kind.value.lower() == name.strip().lower():
                return kind
        choices = ", ".join(k.value for k in cls)
        raise ValueError(f"unknown model {name!r} (choose from {choices})")


@dataclass(frozen=True)
class CarFollowingModel:
    """A law together with every parameter it may need."""

    kind: ModelKind = ModelKind.IDM
    params: ModelParams = field(default_factory=ModelParams)
    risk: RiskParams = field(default_factory=RiskParams)
    variant: VariantParams = field(default_factory=VariantParams)

    def acceleration(self, obs: Observation, dt: float):
        return model_acceleration(self, obs, dt)

    @property
    def label(self) -> str:
        if self.kind is ModelKind.SEIDM:
            return f"SEIDM(r={self.risk.r:g})"
        return self.kind.value


def _out(value):
    """Return a float for 0-d results, the array otherwise."""
    if np.ndim(value) == 0:
        return float(value)
    return value


def _finite(value):
    if not np.all(np.isfinite(value)):
        raise NumericalDomainError("acceleration is not finite; gap too close to zero")
    return _out(value)


def desired_gap(v, dv, p: ModelParams):
    """Desired dynamic gap s*(v, dv) = s0 + max(0, vT + v dv / (2 sqrt(a0 b0)))."""
    dynamic = v * p.T + v * dv / (2.0 * math.sqrt(p.a0 * p.b0))
    return _out(p.s0 + np.maximum(0.0, dynamic))


def derbel_desired_gap(v, dv, p: ModelParams, vp: VariantParams):
    """IDM desired gap plus the emergency term c v^2 / b0."""
    return _out(np.add(desired_gap(v, dv, p), vp.derbel_c * np.square(v) / p.b0))


def interaction_terms(obs: Observation, p: ModelParams, s_star=None):
    """Return the free-road term A and the interaction term D.

    A = 1 - (v/v0)^delta and D = (s*/s)^2. ``s_star`` overrides the desired
    gap (used by the Derbel variant).
    """
    gap = obs.gap
    if np.any(np.less_equal(gap, 0.0)):
        raise NumericalDomainError("gap must be > 0")
    v = obs.speed
    if s_star is None:
        s_star = desired_gap(v, obs.approach_rate, p)
    free = 1.0 - np.power(np.divide(v, p.v0), p.delta)
    interaction = np.square(np.divide(s_star, gap))
    return free, interaction


def idm_acceleration(obs: Observation, p: ModelParams):
    free, interaction = interaction_terms(obs, p)
    # a0*A - a0*D rather than a0*(A - D): SEIDM with r=0 must match bit for bit.
    return _finite(p.a0 * free - p.a0 * interaction)


def blend_risk(x, y, smoothing: float):
    """Smooth maximum of the TTC ratio ``x`` and the headway ratio ``y``.

    Below the band (x < y - eps) the headway ratio wins, above it (x > y + eps)
    the TTC ratio wins, and inside the band the two are mixed with weight
    alpha = 1/2 + (x - y)/(2 eps) on x. eps = smoothing * y; when eps is zero
    the result is max(x, y).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    eps = smoothing * y
    banded = eps > 0
    width = np.where(banded, 2.0 * eps, 1.0)
    alpha = np.minimum(np.maximum(0.5 + (x - y) / width, 0.0), 1.0)
    # anchored on the nearer branch so alpha = 0 and alpha = 1 reproduce y and x
    # exactly even when rounding leaves alpha a few ulps off the endpoint
    mixed = np.where(alpha < 0.5, y + alpha * (x - y), x - (1.0 - alpha) * (x - y))
    if not np.all(banded):
        mixed = np.where(banded, mixed, np.maximum(x, y))
    return _out(np.where(x < y - eps, y, np.where(x > y + eps, x, mixed)))


def risk_ratios(obs: Observation, p: ModelParams, q: RiskParams):
    """TTC0/TTC and T/TH in closed form, zero where TTC or TH is infinite."""
    gap = obs.gap
    if np.any(np.less_equal(gap, 0.0)):
        raise NumericalDomainError("gap must be > 0")
    ttc_ratio = np.maximum(0.0, q.ttc0 * obs.approach_rate / gap)
    headway_ratio = p.T * np.asarray(obs.speed) / gap
    return ttc_ratio, headway_ratio


def risk_factor(obs: Observation, p: ModelParams, q: RiskParams):
    x, y = risk_ratios(obs, p, q)
    return blend_risk(x, y, q.smoothing)


def _seidm_from_risk(obs, p, q, risk):
    free, interaction = interaction_terms(obs, p)
    weight = np.power(risk, q.r)  # numpy defines 0**0 == 1, so r=0 is IDM
    return _finite(p.a0 * free - p.a0 * weight * interaction)


def seidm_acceleration(obs: Observation, p: ModelParams, q: RiskParams):
    """IDM with its interaction term scaled by risk_factor**r."""
    return _seidm_from_risk(obs, p, q, risk_factor(obs, p, q))


def derbel_acceleration(obs: Observation, p: ModelParams, vp: VariantParams):
    s_star = derbel_desired_gap(obs.speed, obs.approach_rate, p, vp)
    free, interaction = interaction_terms(obs, p, s_star=s_star)
    return _finite(p.a0 * free - p.a0 * interaction)


def krauss_safe_speed(obs: Observation, p: ModelParams, vp: VariantParams):
    vl = obs.leader_speed
    tau = vp.reaction
    denom = np.add(vl, obs.speed) / (2.0 * p.b0) + tau
    return _out(vl + (obs.gap - np.multiply(vl, tau)) / denom)


def krauss_target_speed(obs: Observation, p: ModelParams, vp: VariantParams, dt: float):
    """min(v_max, v + a0 dt, v_safe), floored at zero."""
    if dt <= 0:
        raise ParameterError(f"time step must be > 0 (got {dt})")
    reachable = np.minimum(vp.v_max, np.add(obs.speed, p.a0 * dt))
    target = np.minimum(reachable, krauss_safe_speed(obs, p, vp))
    return _out(np.maximum(0.0, target))


def krauss_acceleration(obs: Observation, p: ModelParams, vp: VariantParams, dt: float):
    return _finite((krauss_target_speed(obs, p, vp, dt) - np.asarray(obs.speed)) / dt)


def model_acceleration(model: CarFollowingModel, obs: Observation, dt: float):
    """Dispatch to the law selected by ``model.kind``.

    ClampedIDM shares the IDM law; its only difference is the simulator's
    non-negative speed clamp, which every lane applies anyway.
    """
    kind = model.kind
    if kind in (ModelKind.IDM, ModelKind.CLAMPED):
        return idm_acceleration(obs, model.params)
    if kind is ModelKind.SEIDM:
        return seidm_acceleration(obs, model.params, model.risk)
    if kind is ModelKind.DERBEL:
        return derbel_acceleration(obs, model.params, model.variant)
    if kind is ModelKind.KRAUSS:
        return krauss_acceleration(obs, model.params, model.variant, dt)
    raise ValueError(f"unsupported model kind {kind!r}")


def idm_equilibrium_gap(v: float, p: ModelParams) -> float:
    """Closed-form IDM equilibrium s*(v, 0) / sqrt(1 - (v/v0)^delta)."""
    free = 1.0 - (v / p.v0) ** p.delta
    if not 0 <= v < p.v0:
        raise NoEquilibriumError(f"IDM has no equilibrium at v={v} (need 0 <= v < v0)")
    return desired_gap(v, 0.0, p) / math.sqrt(free)


def equilibrium_gap(model: CarFollowingModel, v: float, tol: float = 1e-9) -> float:
    """Gap at which the law's acceleration vanishes for matched speeds.

    Found by bracketing and Brent's method; the residual acceleration at the
    returned gap is below ``tol`` m/s².
    """
    kind = model.kind
    p = model.params
    if kind is ModelKind.KRAUSS:
        raise NoEquilibriumError("Krauss admits a continuum of stationary gaps")
    if not 0 <= v < p.v0:
        raise NoEquilibriumError(f"no equilibrium at v={v} m/s (need 0 <= v < v0={p.v0:.4f})")
    if v == 0:
        if kind is ModelKind.SEIDM and model.risk.r > 0:
            raise NoEquilibriumError("SEIDM has no standstill equilibrium: risk factor is 0 at v=0")
        return p.s0

    def residual(s):
        return model_acceleration(model, Observation(s, v, v), dt=1.0)

    lo = 1e-9
    hi = 2.0 * idm_equilibrium_gap(v, p)
    while residual(hi) <= 0:
        hi *= 2.0
        if hi > 1e12:
            raise NoEquilibriumError(f"no finite equilibrium for {model.label} at v={v}")
    root = brentq(residual, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(residual(root)) >= tol:
        raise NoEquilibriumError(f"root search did not converge for {model.label} at v={v}")
    return float(root)


def speed_for_equilibrium_gap(model: CarFollowingModel, gap: float) -> float:
    """Inverse of :func:`equilibrium_gap` in v (the gap grows with speed)."""
    p = model.params
    lo = 1e-9 if model.kind is ModelKind.SEIDM else 0.0
    hi = p.v0 * (1.0 - 1e-9)
    if not equilibrium_gap(model, lo) < gap < equilibrium_gap(model, hi):
        raise NoEquilibriumError(f"gap {gap} m is outside the equilibrium range of {model.label}")
    return float(brentq(lambda v: equilibrium_gap(model, v) - gap, lo, hi, xtol=1e-12))
