from __future__ import annotations

import numpy as np
import pytest

from impactsim.controller import (
    ContactObservation,
    ControllerConfig,
    ControllerState,
    Mode,
    ante_step,
    ante_task_terms,
    build_ante_problem,
    build_post_problem,
    interim_integrator_step,
    interim_nominal_velocity,
    interim_step,
    post_step,
    update_mode,
)
from impactsim.dynamics import inverse_kinematics, inverse_velocity_kinematics, jacobians, jacobian_rates
from impactsim.qp import solve
from impactsim.reffield import ReferenceFields

from conftest import make_ante_params, make_geometry, make_post_params
from test_qp import enumerate_active_sets


@pytest.fixture(scope="module")
def config():
    return ControllerConfig()


def on_reference_state(model, fields, p, theta):
    """Joint state exactly on the approach reference at the given pose."""
    q_rob = inverse_kinematics(model, p, theta)
    q = np.append(q_rob, fields.ante.q4_est)
    v_d = fields.ante_velocity(p)
    w_d = fields.ante_angular_rate(theta)
    qd_rob = inverse_velocity_kinematics(model, q, v_d, w_d)
    qd = np.append(qd_rob, fields.ante.q4dot_est)
    return q, qd


# --- ante mode ------------------------------------------------------------------

def test_ante_zero_error_fixed_point(model, fields, config):
    p = np.array([0.4, 0.55])
    q, qd = on_reference_state(model, fields, p, 0.02)
    cmd = ante_step(model, fields, config, q, qd)
    assert cmd.qp_status == "optimal"
    # both task errors achievable: the solved accelerations satisfy them exactly
    J_p, J_theta = jacobians(model, q)
    Jd_p, _ = jacobian_rates(model, q, qd)
    a_d = fields.ante_accel(p)
    assert np.linalg.norm(J_p @ cmd.qdd + Jd_p @ qd - a_d, np.inf) < 1e-8
    assert cmd.task_error_lin < 1e-8
    assert cmd.task_error_ang < 1e-8


def test_ante_velocity_feedback_linearity(model, fields, config, rng):
    p = np.array([0.35, 0.5])
    q, qd = on_reference_state(model, fields, p, 0.0)
    delta = rng.normal(size=4) * 0.1
    delta[3] = 0.0
    J_p, _ = jacobians(model, q)
    _, eta_1, _, _ = ante_task_terms(model, fields, config, q, qd)
    _, eta_2, _, _ = ante_task_terms(model, fields, config, q, qd + delta)
    Jd_1, _ = jacobian_rates(model, q, qd)
    Jd_2, _ = jacobian_rates(model, q, qd + delta)
    feedback_change = (eta_2 - eta_1) - (Jd_2 @ (qd + delta) - Jd_1 @ qd)
    assert np.allclose(feedback_change, config.k_p_ante * (J_p @ delta), atol=1e-10)


def test_ante_torque_bounds_saturate(model, fields, config):
    from conftest import make_model
    tight = make_model(tau_min=(-0.5, -0.5, -0.5), tau_max=(0.5, 0.5, 0.5))
    p = np.array([0.4, 0.6])
    q, qd = on_reference_state(tight, fields, p, 0.3)
    cmd = ante_step(tight, fields, config, q, qd)
    assert cmd.qp_status == "optimal"
    assert np.all(cmd.tau <= 0.5 + 1e-9) and np.all(cmd.tau >= -0.5 - 1e-9)
    assert np.any(np.abs(np.abs(cmd.tau) - 0.5) < 1e-9)  # at least one joint saturated
    # matches the exhaustive enumeration oracle on the same problem
    prob = build_ante_problem(tight, fields, config, q, qd)
    ref = enumerate_active_sets(prob)
    assert np.allclose(solve(prob).x, ref, atol=1e-8)


def test_ante_respects_bounds_always(model, fields, config, rng):
    for _ in range(5):
        p = rng.uniform([0.3, 0.45], [0.5, 0.65])
        q, qd = on_reference_state(model, fields, p, rng.uniform(-0.3, 0.3))
        qd = qd + rng.normal(size=4)
        qd[3] = 0.0
        cmd = ante_step(model, fields, config, q, qd)
        assert np.all(cmd.tau <= model.tau_max + 1e-9)
        assert np.all(cmd.tau >= model.tau_min - 1e-9)


# --- interim mode -----------------------------------------------------------------

def make_interim_state(p, theta, t_int=0.5):
    return ControllerState(mode=Mode.INTERIM, p_d_int=np.array(p, dtype=float),
                           theta_d_int=float(theta), t_int=t_int)


def test_interim_ignores_measured_velocity_bitwise(model, fields, config, rng):
    p = np.array([0.42, 0.36])
    q_rob = inverse_kinematics(model, p, 0.01)
    q = np.append(q_rob, fields.ante.q4_est)
    state = make_interim_state(p + [0.003, -0.002], 0.015)
    base = interim_step(model, fields, config, state, q, np.zeros(4))
    for _ in range(5):
        fuzz = rng.normal(size=4) * 10.0
        cmd = interim_step(model, fields, config, state, q, fuzz)
        assert np.array_equal(cmd.tau, base.tau)  # bitwise identical
        assert np.array_equal(cmd.qdd, base.qdd)


def test_interim_continuous_with_ante_at_switch(model, fields, config):
    # on-reference switch state: integrator seeded at the measured pose
    p = np.array([0.4, 0.45])
    theta = 0.01
    q, qd = on_reference_state(model, fields, p, theta)
    ante_cmd = ante_step(model, fields, config, q, qd)
    state = make_interim_state(p, theta)
    interim_cmd = interim_step(model, fields, config, state, q, qd)
    assert np.allclose(ante_cmd.tau, interim_cmd.tau, atol=1e-9)


def test_interim_integrator_exact_on_constant_field(model):
    const_fields = ReferenceFields.build(
        model, make_geometry(), make_ante_params(alpha=0.0), make_post_params())
    p0 = np.array([0.4, 0.6])
    state = make_interim_state(p0, 0.0)
    dt = 1e-3
    for k in range(100):
        interim_integrator_step(state, const_fields, dt)
    expected = p0 + const_fields.ante.v_imp * 100 * dt
    assert np.allclose(state.p_d_int, expected, atol=1e-15)


def test_interim_integrator_richardson(model, fields):
    p0 = np.array([0.35, 0.5])
    coarse = make_interim_state(p0, 0.0)
    fine = make_interim_state(p0, 0.0)
    for _ in range(100):
        interim_integrator_step(coarse, fields, 1e-3)
    for _ in range(1000):
        interim_integrator_step(fine, fields, 1e-4)
    assert np.linalg.norm(coarse.p_d_int - fine.p_d_int) < 1e-3


def test_interim_feedback_grows_when_stalled(model, fields, config):
    # end effector pinned while the integrator walks away: the commanded drive
    # into the contact grows with the accumulated position error
    p = np.array([0.42, 0.352])
    q_rob = inverse_kinematics(model, p, 0.0)
    q = np.append(q_rob, 0.0)
    state = make_interim_state(p, 0.0)
    J_p, _ = jacobians(model, q)
    push = []
    errors = []
    for k in range(200):
        cmd = interim_step(model, fields, config, state, q, np.zeros(4))
        push.append(-(J_p @ cmd.qdd)[1])  # commanded acceleration toward the plank
        errors.append(np.linalg.norm(state.p_d_int - p))
        interim_integrator_step(state, fields, config.dt)
    speed = np.linalg.norm(fields.ante.v_imp)
    assert errors[-1] == pytest.approx(speed * 199 * config.dt, rel=0.05)
    assert push[-1] > push[0]
    assert np.all(np.diff(push) > -1e-9)  # monotone growth of the driving command


# --- post mode -----------------------------------------------------------------------

def flush_contact_state(model, fields, station=0.3, q4=0.0, qd_rob=None):
    geom = make_geometry()
    p = geom.point + station * geom.tangent
    q_rob = inverse_kinematics(model, p, q4)
    q = np.append(q_rob, q4)
    qd = np.zeros(4) if qd_rob is None else np.append(qd_rob, 0.0)
    return q, qd


def test_post_equal_force_distribution(model, fields, config):
    q, qd = flush_contact_state(model, fields)
    cmd = post_step(model, fields, config, q, qd)
    assert cmd.qp_status == "optimal"
    assert abs(cmd.lam[0] - cmd.lam[1]) < 1e-8
    assert np.all(cmd.lam >= -1e-12)


def test_post_contact_acceleration_constraint(model, fields, config, rng):
    from impactsim.dynamics import contact_jacobian, contact_jacobian_rate
    for _ in range(5):
        station = rng.uniform(0.2, 0.4)
        q, qd = flush_contact_state(model, fields, station=station,
                                    qd_rob=rng.normal(size=3) * 0.3)
        cmd = post_step(model, fields, config, q, qd)
        J_N = contact_jacobian(model, q)
        Jd_N = contact_jacobian_rate(model, q, qd)
        assert np.linalg.norm(J_N @ cmd.qdd + Jd_N @ qd, np.inf) < 1e-9


def test_post_small_weight_matches_oracle(model, fields):
    config = ControllerConfig(w_lambda=1e-12)
    q, qd = flush_contact_state(model, fields, station=0.35)
    prob = build_post_problem(model, fields, config, q, qd)
    sol = solve(prob)
    ref = enumerate_active_sets(prob)
    obj = lambda x: 0.5 * x @ prob.H @ x + prob.g @ x
    assert obj(sol.x) == pytest.approx(obj(ref), abs=1e-8)


def test_post_goal_only_variant_changes_command(model, fields, config):
    q, qd = flush_contact_state(model, fields, qd_rob=np.array([0.1, -0.2, 0.1]))
    coupled = post_step(model, fields, config, q, qd, impact_coupled=True)
    goal_only = post_step(model, fields, config, q, qd, impact_coupled=False)
    assert not np.allclose(coupled.tau, goal_only.tau)


# --- mode machine -----------------------------------------------------------------------

def test_update_mode_no_contact(config):
    state = ControllerState()
    switches = update_mode(state, ContactObservation(), config, 0.1, np.zeros(2), 0.0)
    assert switches == [] and state.mode is Mode.ANTE


def test_update_mode_first_impact_seeds_integrator(config):
    state = ControllerState()
    p = np.array([0.41, 0.349])
    switches = update_mode(state, ContactObservation(impact_detected=True, detail="impact-2"),
                           config, 0.42, p, 0.012)
    assert switches == ["interim"]
    assert state.mode is Mode.INTERIM
    assert state.t_int == 0.42
    assert np.allclose(state.p_d_int, p)
    assert state.theta_d_int == pytest.approx(0.012)
    assert state.impact_log == [(0.42, "impact-2")]


def test_update_mode_full_contact(config):
    state = ControllerState()
    update_mode(state, ContactObservation(impact_detected=True), config, 0.4, np.zeros(2), 0.0)
    switches = update_mode(state, ContactObservation(full_contact=True), config, 0.45,
                           np.zeros(2), 0.0)
    assert switches == ["post"]
    assert state.mode is Mode.POST
    assert state.p_d_int is None


def test_update_mode_no_interim_variant():
    config = ControllerConfig(variant="no-interim-mode")
    state = ControllerState()
    switches = update_mode(state, ContactObservation(impact_detected=True), config, 0.4,
                           np.zeros(2), 0.0)
    assert switches == ["post"]
    assert state.mode is Mode.POST


def test_update_mode_simultaneous_closure(config):
    # both events in one control window: ante -> interim -> post in a single update
    state = ControllerState()
    switches = update_mode(state, ContactObservation(impact_detected=True, full_contact=True),
                           config, 0.4, np.zeros(2), 0.0)
    assert switches == ["interim", "post"]
    assert state.mode is Mode.POST


def test_update_mode_monotone(config):
    state = ControllerState(mode=Mode.POST)
    update_mode(state, ContactObservation(impact_detected=True), config, 0.5, np.zeros(2), 0.0)
    assert state.mode is Mode.POST


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(dt=0.0)
    with pytest.raises(ValueError):
        ControllerConfig(variant="bogus")
    with pytest.raises(ValueError):
        ControllerConfig(w_lambda=-1.0)
