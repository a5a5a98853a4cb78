"""Risk-aware car-following laws, a multi-lane simulator and experiment runner."""
from carfollow.dynamics import LaneState, LeadProfile, Simulation, StepConfig, Trajectory, VehicleState
from carfollow.metrics import MetricsReport, StabilizationCriterion, detect_stabilization, throughput
from carfollow.models import (
    CarFollowingModel,
    ModelKind,
    ModelParams,
    Observation,
    RiskParams,
    VariantParams,
    equilibrium_gap,
    idm_acceleration,
    risk_factor,
    seidm_acceleration,
)
from carfollow.scenarios import ScenarioConfig, run_trial, run_trials

__all__ = [
    "CarFollowingModel", "LaneState", "LeadProfile", "MetricsReport", "ModelKind", "ModelParams",
    "Observation", "RiskParams", "ScenarioConfig", "Simulation", "StabilizationCriterion", "StepConfig",
    "Trajectory", "VariantParams", "VehicleState", "detect_stabilization", "equilibrium_gap",
    "idm_acceleration", "risk_factor", "run_trial", "run_trials", "seidm_acceleration", "throughput",
]
