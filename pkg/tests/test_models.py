import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from carfollow.models import (
    KMH,
    CarFollowingModel,
    ModelKind,
    ModelParams,
    NoEquilibriumError,
    NumericalDomainError,
    Observation,
    ParameterError,
    RiskParams,
    VariantParams,
    blend_risk,
    derbel_desired_gap,
    desired_gap,
    equilibrium_gap,
    idm_acceleration,
    idm_equilibrium_gap,
    interaction_terms,
    krauss_safe_speed,
    krauss_target_speed,
    model_acceleration,
    risk_factor,
    seidm_acceleration,
    speed_for_equilibrium_gap,
)

P = ModelParams()
Q = RiskParams()
VP = VariantParams()
V_MAX = 95 * KMH


def obs(s, v, dv):
    return Observation.from_approach(s, v, dv)


# hand evaluations used as oracles
def oracle_idm(s, v, dv, a0=1.46, b0=2.0, v0=100 / 3.6, delta=4.0, T=1.6, s0=2.0):
    s_star = s0 + max(0.0, v * T + v * dv / (2 * math.sqrt(a0 * b0)))
    return a0 * (1 - (v / v0) ** delta - (s_star / s) ** 2)


class TestParams:
    def test_table_defaults(self):
        assert (P.a0, P.b0, P.delta, P.T, P.s0) == (1.46, 2.0, 4.0, 1.6, 2.0)
        assert P.v0 == pytest.approx(27.7778, abs=1e-4)
        assert (Q.ttc0, Q.r, Q.smoothing) == (2.7, 0.6, 0.1)
        assert VP.v_max == pytest.approx(26.3889, abs=1e-4)

    @pytest.mark.parametrize("field,value", [("a0", 0), ("b0", -1), ("v0", 0), ("T", -1), ("s0", 0), ("delta", 0.5)])
    def test_model_params_invariants(self, field, value):
        with pytest.raises(ParameterError, match=field):
            ModelParams(**{field: value})

    @pytest.mark.parametrize("kwargs", [{"ttc0": 0}, {"r": -0.1}, {"smoothing": 0}, {"smoothing": 1}])
    def test_risk_params_invariants(self, kwargs):
        with pytest.raises(ParameterError):
            RiskParams(**kwargs)

    def test_observation_approach(self):
        o = obs(50, 20, 5)
        assert o.leader_speed == 15 and o.approach_rate == 5

    def test_model_kind_parse(self):
        assert ModelKind.parse("derbelidm") is ModelKind.DERBEL
        with pytest.raises(ValueError, match="unknown model"):
            ModelKind.parse("gipps")


class TestDesiredGap:
    @pytest.mark.parametrize("v,dv,expected", [
        (0.0, 0.0, 2.0),
        (V_MAX, 0.0, 44.2222),
        (20.0, 5.0, 63.2600),
    ])
    def test_values(self, v, dv, expected):
        assert desired_gap(v, dv, P) == pytest.approx(expected, abs=1e-3)

    def test_never_below_static_gap(self):
        assert desired_gap(20.0, -50.0, P) == 2.0

    def test_derbel(self):
        assert derbel_desired_gap(0.0, 0.0, P, VP) == 2.0
        # 44.2222 + 0.4 * 26.3889**2 / 2
        assert derbel_desired_gap(V_MAX, 0.0, P, VP) == pytest.approx(183.497, abs=1e-3)
        assert derbel_desired_gap(17.0, 2.0, P, VariantParams(derbel_c=0.0)) == desired_gap(17.0, 2.0, P)


class TestIDM:
    @pytest.mark.parametrize("s,v,dv,expected,tol", [
        (2.0, 0.0, 0.0, 0.0, 1e-12),
        (102.67, V_MAX, 0.0, 0.0, 1e-3),
        (50.0, 20.0, 5.0, -1.2695, 1e-3),
    ])
    def test_values(self, s, v, dv, expected, tol):
        assert idm_acceleration(obs(s, v, dv), P) == pytest.approx(expected, abs=tol)

    def test_matches_oracle(self):
        for s, v, dv in [(10, 5, 1), (30, 25, -3), (80, 12, 4)]:
            assert idm_acceleration(obs(s, v, dv), P) == pytest.approx(oracle_idm(s, v, dv), rel=1e-12)

    def test_exposes_terms(self):
        free, interaction = interaction_terms(obs(50, 20, 5), P)[:2]
        assert free == pytest.approx(1 - (20 / P.v0) ** 4)
        assert interaction == pytest.approx((63.26 / 50) ** 2, rel=1e-4)

    def test_nonpositive_gap_raises(self):
        with pytest.raises(NumericalDomainError):
            idm_acceleration(Observation(0.0, 10.0, 10.0), P)

    def test_vectorized(self):
        s = np.array([20.0, 50.0, 100.0])
        a = idm_acceleration(Observation(s, np.full(3, 20.0), np.full(3, 15.0)), P)
        assert a.shape == (3,)
        assert np.all(np.diff(a) > 0)


class TestRiskFactor:
    def test_headway_branch(self):
        # x = 0 for an opening gap, y = 1.6 * 26.389 / 83.64
        assert risk_factor(obs(83.64, V_MAX, -1.0), P, Q) == pytest.approx(0.50481, abs=1e-5)

    def test_mixed_observation(self):
        # x = 0.27, y = 0.64, eps = 0.064, x < y - eps
        assert risk_factor(obs(50, 20, 5), P, Q) == pytest.approx(0.64, abs=1e-12)

    def test_ttc_branch(self):
        # x = 2.7 * 10 / 20 = 1.35 > y + eps = 0.88
        assert risk_factor(obs(20, 10, 10), P, Q) == pytest.approx(1.35)

    def test_standstill_is_zero(self):
        assert risk_factor(obs(10, 0, 0), P, Q) == 0.0

    def test_degenerate_band_is_max(self):
        assert blend_risk(0.3, 0.0, 0.1) == 0.3
        assert blend_risk(0.0, 0.0, 0.1) == 0.0

    @pytest.mark.parametrize("y", [0.2, 0.64, 1.0, 3.0])
    def test_band_edges_match_branches(self, y):
        eps = 0.1 * y
        assert blend_risk(y - eps, y, 0.1) == y
        assert blend_risk(y + eps, y, 0.1) == y + eps
        assert blend_risk(y, y, 0.1) == y

    def test_band_is_weighted(self):
        y, x = 1.0, 1.05
        alpha = 0.5 + (x - y) / 0.2
        assert blend_risk(x, y, 0.1) == pytest.approx(alpha * x + (1 - alpha) * y)


class TestSEIDM:
    def test_equilibrium_at_table_spacing(self):
        m = Q
        assert seidm_acceleration(obs(83.64, V_MAX, 0.0), P, m) == pytest.approx(0.0, abs=1e-3)

    def test_value(self):
        # 1.46 * (0.73126 - 0.64**0.6 * 1.60077)
        assert seidm_acceleration(obs(50, 20, 5), P, Q) == pytest.approx(-0.7207, abs=1e-3)

    def test_r_zero_is_idm(self):
        o = obs(35.0, 22.0, 1.5)
        assert seidm_acceleration(o, P, RiskParams(r=0.0)) == idm_acceleration(o, P)

    def test_r_zero_at_zero_risk(self):
        o = obs(10.0, 0.0, 0.0)
        assert seidm_acceleration(o, P, RiskParams(r=0.0)) == idm_acceleration(o, P)


class TestKrauss:
    def test_safe_speed_fixed_point(self):
        v = 20.0
        assert krauss_safe_speed(obs(v * VP.reaction, v, 0.0), P, VP) == pytest.approx(v)

    def test_safe_speed_value(self):
        assert krauss_safe_speed(obs(44.28, 26.389, 0.0), P, VP) == pytest.approx(27.649, abs=1e-3)

    def test_safe_speed_at_rest(self):
        assert krauss_safe_speed(Observation(1e-9, 0.0, 0.0), P, VP) == pytest.approx(0.0, abs=1e-8)

    def test_target_acceleration_binds(self):
        # min(v_max, 20 + 0.146, 27.65)
        o = Observation(44.28, 20.0, 26.389)
        assert krauss_target_speed(o, P, VP, 0.1) == pytest.approx(20.146)

    def test_target_capped(self):
        assert krauss_target_speed(obs(500.0, V_MAX, 0.0), P, VP, 0.1) == pytest.approx(V_MAX)

    def test_safe_speed_tiny_gap_stays_nonnegative(self):
        # vl + (s - vl T')/den >= vl (1 - T'/den) >= 0 whenever s > 0
        vp = VariantParams(reaction=0.1)
        assert 0.0 <= krauss_safe_speed(Observation(1e-6, 0.0, 1.0), P, vp) < 1.0

    def test_bad_dt(self):
        with pytest.raises(ParameterError):
            krauss_target_speed(obs(10, 5, 0), P, VP, 0.0)


class TestDispatch:
    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_every_kind_runs(self, kind):
        a = model_acceleration(CarFollowingModel(kind), obs(60.0, 20.0, 0.0), 0.1)
        assert math.isfinite(a)

    def test_clamped_is_idm(self):
        o = obs(30.0, 10.0, 2.0)
        assert model_acceleration(CarFollowingModel(ModelKind.CLAMPED), o, 0.1) == idm_acceleration(o, P)

    def test_krauss_cruise(self):
        a = model_acceleration(CarFollowingModel(ModelKind.KRAUSS), obs(1e6, V_MAX, 0.0), 0.1)
        assert a == pytest.approx(0.0, abs=1e-12)

    def test_label(self):
        assert CarFollowingModel(ModelKind.SEIDM).label == "SEIDM(r=0.6)"
        assert CarFollowingModel(ModelKind.KRAUSS).label == "Krauss"


class TestEquilibrium:
    def test_idm_table_value(self):
        assert equilibrium_gap(CarFollowingModel(ModelKind.IDM), V_MAX) == pytest.approx(102.67, abs=0.01)

    def test_seidm_r1(self):
        m = CarFollowingModel(ModelKind.SEIDM, risk=RiskParams(r=1.0))
        assert equilibrium_gap(m, V_MAX) == pytest.approx(76.34, abs=0.1)

    def test_idm_standstill(self):
        assert equilibrium_gap(CarFollowingModel(ModelKind.IDM), 0.0) == 2.0
        assert equilibrium_gap(CarFollowingModel(ModelKind.IDM), 1e-6) == pytest.approx(2.0, abs=1e-5)

    def test_root_zeroes_the_law(self):
        for kind in (ModelKind.IDM, ModelKind.SEIDM, ModelKind.DERBEL):
            m = CarFollowingModel(kind)
            s = equilibrium_gap(m, 15.0)
            assert abs(model_acceleration(m, obs(s, 15.0, 0.0), 0.1)) < 1e-9

    @pytest.mark.parametrize("ratio", np.linspace(0.1, 0.99, 12))
    def test_closed_form_agrees(self, ratio):
        v = ratio * P.v0
        m = CarFollowingModel(ModelKind.IDM)
        assert equilibrium_gap(m, v) == pytest.approx(idm_equilibrium_gap(v, P), abs=1e-6)

    @pytest.mark.parametrize("kind,v", [
        (ModelKind.SEIDM, 0.0),
        (ModelKind.KRAUSS, 20.0),
        (ModelKind.IDM, 100 / 3.6),
        (ModelKind.IDM, -1.0),
    ])
    def test_no_root(self, kind, v):
        with pytest.raises(NoEquilibriumError):
            equilibrium_gap(CarFollowingModel(kind), v)

    def test_inverse_gives_brake_target(self):
        v = speed_for_equilibrium_gap(CarFollowingModel(ModelKind.IDM), 17.96)
        assert v == pytest.approx(9.8846, abs=1e-4)
        assert round(v, 1) == 9.9
        assert idm_equilibrium_gap(v, P) == pytest.approx(17.96, abs=1e-9)

    def test_fig7_ratio_increasing(self):
        ratios = np.linspace(0.05, 0.99, 60)
        m = CarFollowingModel(ModelKind.IDM)
        r = [equilibrium_gap(m, x * P.v0) / desired_gap(x * P.v0, 0.0, P) for x in ratios]
        assert np.all(np.diff(r) > 0)
        assert r[-1] / r[0] > 2


# --- properties -------------------------------------------------------------

gaps = st.floats(0.5, 300.0)
speeds = st.floats(0.0, 40.0)
approach = st.floats(-15.0, 15.0)


@settings(max_examples=300, deadline=None)
@given(gaps, speeds, approach)
def test_reduction_property(s, v, dv):
    assume(v - dv >= 0)
    o = obs(s, v, dv)
    assert seidm_acceleration(o, P, RiskParams(r=0.0)) == idm_acceleration(o, P)


@settings(max_examples=300, deadline=None)
@given(gaps, speeds, approach, st.floats(0.05, 2.0))
def test_ordering_property(s, v, dv, r):
    assume(v - dv >= 0)
    o = obs(s, v, dv)
    q = RiskParams(r=r)
    risk = risk_factor(o, P, q)
    diff = seidm_acceleration(o, P, q) - idm_acceleration(o, P)
    expected = np.sign(1 - risk ** r)
    if abs(1 - risk ** r) > 1e-12:
        assert np.sign(diff) == expected


@settings(max_examples=300, deadline=None)
@given(gaps, st.floats(0.5, 40.0), approach, st.floats(0.01, 50.0))
def test_risk_nonincreasing_in_gap(s, v, dv, extra):
    assume(v - dv >= 0)
    assert risk_factor(obs(s + extra, v, dv), P, Q) <= risk_factor(obs(s, v, dv), P, Q) + 1e-12


@settings(max_examples=300, deadline=None)
@given(gaps, st.floats(100 / 3.6, 60.0), approach, st.floats(0.0, 2.0))
def test_stability_property(s, v, dv, r):
    assume(v - dv >= 0)
    o = obs(s, v, dv)
    assert idm_acceleration(o, P) <= 0
    assert seidm_acceleration(o, P, RiskParams(r=r)) <= 0


@settings(max_examples=300, deadline=None)
@given(st.floats(0.1, 300.0), speeds, st.floats(0.0, 40.0), st.floats(0.01, 1.0))
def test_krauss_target_capped(s, v, vl, dt):
    assert 0.0 <= krauss_target_speed(Observation(s, v, vl), P, VP, dt) <= VP.v_max


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-6, 300.0), speeds, st.floats(0.0, 40.0), st.floats(0.05, 3.0))
def test_krauss_safe_speed_nonnegative(s, v, vl, reaction):
    assert krauss_safe_speed(Observation(s, v, vl), P, VariantParams(reaction=reaction)) >= 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.0, 10.0))
def test_risk_nonnegative_and_bounded_by_max(y, x):
    r = blend_risk(x, y, 0.1)
    assert min(x, y) - 1e-12 <= r <= max(x, y) + 1e-12
