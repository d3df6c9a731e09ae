from __future__ import annotations

import numpy as np
import pytest

from impactsim.dynamics import (
    EePose,
    SingularityError,
    SystemState,
    WorkspaceError,
    bias_vector,
    contact_jacobian,
    contact_jacobian_rate,
    contact_points,
    forward_kinematics,
    gap_functions,
    inverse_kinematics,
    inverse_velocity_kinematics,
    jacobian_rates,
    jacobians,
    mass_matrix,
)

from conftest import make_model


# --- oracles -----------------------------------------------------------------

def fk_homogeneous(model, q_rob):
    """Explicit product of 3x3 homogeneous link transforms."""
    T = np.eye(3)
    for li, qi in zip(model.link_lengths, q_rob):
        c, s = np.cos(qi), np.sin(qi)
        T = T @ np.array([[c, -s, li * c], [s, c, li * s], [0.0, 0.0, 1.0]])
    theta = np.arctan2(T[1, 0], T[0, 0])
    return T[:2, 2], theta


def fd_jacobian(f, q, eps=1e-7):
    q = np.asarray(q, dtype=float)
    y0 = np.atleast_1d(f(q))
    J = np.zeros((y0.size, q.size))
    for k in range(q.size):
        dq = np.zeros_like(q)
        dq[k] = eps
        J[:, k] = (np.atleast_1d(f(q + dq)) - np.atleast_1d(f(q - dq))) / (2 * eps)
    return J


def link_kinetic_energy(model, q, qdot):
    """Sum of per-link 0.5*m*v_g^2 + 0.5*I_g*omega^2 plus the plank term."""
    q_rob, qd_rob = q[:3], qdot[:3]
    phi = np.cumsum(q_rob)
    phidot = np.cumsum(qd_rob)
    ke = 0.0
    joint = np.zeros(2)
    joint_vel = np.zeros(2)
    for i in range(3):
        u = np.array([np.cos(phi[i]), np.sin(phi[i])])
        du = np.array([-u[1], u[0]])
        cog = joint + model.cog_offsets[i] * u
        cog_vel = joint_vel + model.cog_offsets[i] * du * phidot[i]
        ke += 0.5 * model.link_masses[i] * cog_vel @ cog_vel
        ke += 0.5 * model.link_inertias[i] * phidot[i] ** 2
        joint = joint + model.link_lengths[i] * u
        joint_vel = joint_vel + model.link_lengths[i] * du * phidot[i]
    ke += 0.5 * model.plank_inertia * qdot[3] ** 2
    return ke


def point_line_distance(p, a, direction):
    d = direction / np.linalg.norm(direction)
    v = p - a
    return abs(v[0] * d[1] - v[1] * d[0])


# --- types -------------------------------------------------------------------

def test_state_validation():
    SystemState(q=np.zeros(4), qdot=np.zeros(4))
    with pytest.raises(ValueError):
        SystemState(q=np.zeros(3), qdot=np.zeros(4))
    with pytest.raises(ValueError):
        SystemState(q=np.array([0.0, np.nan, 0.0, 0.0]), qdot=np.zeros(4))


def test_model_validation():
    with pytest.raises(ValueError):
        make_model(link_masses=(2.0, -1.0, 0.5))
    with pytest.raises(ValueError):
        make_model(contact_offsets=((0.05, 0.0), (0.05, 0.0)))
    with pytest.raises(ValueError):
        make_model(tau_min=(70.0, -40.0, -20.0))


# --- forward kinematics ------------------------------------------------------

def test_fk_straight_chain(model):
    pose = forward_kinematics(model, np.zeros(4))
    assert np.allclose(pose.p, [model.reach, 0.0], atol=1e-14)
    assert pose.theta == 0.0


def test_fk_rotated_chain(model):
    pose = forward_kinematics(model, np.array([np.pi / 2, 0.0, 0.0, 0.3]))
    assert np.allclose(pose.p, [0.0, model.reach], atol=1e-14)
    assert pose.theta == pytest.approx(np.pi / 2)


def test_fk_matches_transform_product(model, rng):
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, size=4)
        pose = forward_kinematics(model, q)
        p_ref, theta_ref = fk_homogeneous(model, q[:3])
        assert np.allclose(pose.p, p_ref, atol=1e-12)
        assert np.sin(pose.theta - theta_ref) == pytest.approx(0.0, abs=1e-12)


def test_fk_independent_of_plank(model, rng):
    q = rng.uniform(-1, 1, size=4)
    q2 = q.copy()
    q2[3] += 1.3
    assert np.allclose(forward_kinematics(model, q).p, forward_kinematics(model, q2).p)


# --- jacobians ---------------------------------------------------------------

def test_jacobian_plank_column_zero(model, rng):
    q = rng.uniform(-np.pi, np.pi, size=4)
    J_p, J_theta = jacobians(model, q)
    assert np.all(J_p[:, 3] == 0.0)
    assert np.all(J_theta[:, 3] == 0.0)
    assert np.allclose(J_theta[0, :3], 1.0)


def test_jacobian_matches_finite_differences(model, rng):
    for _ in range(10):
        q = rng.uniform(-np.pi, np.pi, size=4)
        J_p, _ = jacobians(model, q)
        J_fd = fd_jacobian(lambda qq: forward_kinematics(model, qq).p, q)
        assert np.allclose(J_p, J_fd, atol=1e-6)


def test_jacobian_straight_arm_row(model):
    # hand differentiation: dy/dq for the straight arm along +x
    J_p, _ = jacobians(model, np.zeros(4))
    l1, l2, l3 = model.link_lengths
    assert np.allclose(J_p[1], [l1 + l2 + l3, l2 + l3, l3, 0.0], atol=1e-14)
    assert np.allclose(J_p[0], 0.0, atol=1e-14)


def test_jacobian_rate_zero_velocity(model, rng):
    q = rng.uniform(-np.pi, np.pi, size=4)
    Jd_p, Jd_th = jacobian_rates(model, q, np.zeros(4))
    assert np.all(Jd_p == 0.0)
    assert np.all(Jd_th == 0.0)


def test_jacobian_rate_matches_finite_differences(model, rng):
    delta = 1e-6
    for _ in range(10):
        q = rng.uniform(-np.pi, np.pi, size=4)
        qd = rng.uniform(-2, 2, size=4)
        Jd_p, _ = jacobian_rates(model, q, qd)
        Jp_plus, _ = jacobians(model, q + qd * delta)
        Jp_minus, _ = jacobians(model, q - qd * delta)
        assert np.allclose(Jd_p, (Jp_plus - Jp_minus) / (2 * delta), atol=1e-6)


def test_jacobian_rate_plank_only_motion(model, rng):
    q = rng.uniform(-np.pi, np.pi, size=4)
    Jd_p, _ = jacobian_rates(model, q, np.array([0.0, 0.0, 0.0, 1.0]))
    assert np.all(Jd_p == 0.0)


# --- mass matrix and bias ----------------------------------------------------

def test_mass_matrix_spd_block_diagonal(model, rng):
    for _ in range(10):
        q = rng.uniform(-np.pi, np.pi, size=4)
        M = mass_matrix(model, q)
        assert np.allclose(M, M.T, atol=1e-14)
        assert np.min(np.linalg.eigvalsh(M)) > 0.0
        assert np.allclose(M[:3, 3], 0.0)
        assert M[3, 3] == pytest.approx(model.plank_inertia)


def test_kinetic_energy_matches_link_sum(model, rng):
    for _ in range(10):
        q = rng.uniform(-np.pi, np.pi, size=4)
        qd = rng.uniform(-2, 2, size=4)
        M = mass_matrix(model, q)
        assert 0.5 * qd @ M @ qd == pytest.approx(link_kinetic_energy(model, q, qd), abs=1e-12)


def test_bias_zero_at_rest_equilibrium(free_model):
    q = np.array([0.3, -0.7, 0.2, 0.0])
    assert np.allclose(bias_vector(free_model, q, np.zeros(4)), 0.0, atol=1e-14)


def test_bias_gravity_matches_potential_gradient(model):
    # gravity only: h = dV/dq by finite differences of the potential energy
    def potential(q):
        q_rob = q[:3]
        phi = np.cumsum(q_rob)
        joint = np.zeros(2)
        V = 0.0
        for i in range(3):
            u = np.array([np.cos(phi[i]), np.sin(phi[i])])
            cog = joint + model.cog_offsets[i] * u
            V -= model.link_masses[i] * model.gravity @ cog
            joint = joint + model.link_lengths[i] * u
        V += 0.5 * model.plank_stiffness * q[3] ** 2
        return V

    q = np.array([0.4, -1.1, 0.6, 0.15])
    h = bias_vector(model, q, np.zeros(4))
    h_fd = fd_jacobian(potential, q).ravel()
    assert np.allclose(h, h_fd, atol=1e-6)


def test_unforced_energy_conservation(free_model):
    # symplectic-check oracle: fine-step RK4 rollout of M qdd + h = 0
    q = np.array([0.5, -0.9, 0.3, 0.2])
    qd = np.array([0.8, -0.5, 1.0, 0.7])

    def accel(q, qd):
        return np.linalg.solve(mass_matrix(free_model, q), -bias_vector(free_model, q, qd))

    h = 1e-4
    e0 = link_kinetic_energy(free_model, q, qd)
    for _ in range(int(1.0 / h)):
        k1q, k1v = qd, accel(q, qd)
        k2q, k2v = qd + 0.5 * h * k1v, accel(q + 0.5 * h * k1q, qd + 0.5 * h * k1v)
        k3q, k3v = qd + 0.5 * h * k2v, accel(q + 0.5 * h * k2q, qd + 0.5 * h * k2v)
        k4q, k4v = qd + h * k3v, accel(q + h * k3q, qd + h * k3v)
        q = q + h / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
        qd = qd + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    e1 = link_kinetic_energy(free_model, q, qd)
    assert abs(e1 - e0) < 1e-6


# --- contact geometry ----------------------------------------------------------

def test_gap_zero_when_flush(model):
    # construct a flush pose by inverse kinematics: theta = q4, EE origin on the line
    q4 = 0.1
    line_point = model.plank_hinge + 0.3 * np.array([np.cos(q4), np.sin(q4)])
    q_rob = inverse_kinematics(model, line_point, q4)
    q = np.append(q_rob, q4)
    assert np.allclose(gap_functions(model, q), 0.0, atol=1e-10)


def test_gap_positive_away_from_plank(model):
    q_rob = inverse_kinematics(model, np.array([0.4, 0.6]), 0.0)
    gaps = gap_functions(model, np.append(q_rob, 0.0))
    assert np.all(gaps > 0)


def test_gap_matches_point_line_distance(model, rng):
    for _ in range(100):
        q = rng.uniform(-np.pi, np.pi, size=4)
        gaps = gap_functions(model, q)
        t = np.array([np.cos(q[3]), np.sin(q[3])])
        pts = contact_points(model, q)
        for i in range(2):
            assert abs(gaps[i]) == pytest.approx(
                point_line_distance(pts[i], model.plank_hinge, t), abs=1e-12)


def test_contact_jacobian_matches_finite_differences(model, rng):
    for _ in range(10):
        q = rng.uniform(-np.pi, np.pi, size=4)
        J_N = contact_jacobian(model, q)
        J_fd = fd_jacobian(lambda qq: gap_functions(model, qq), q)
        assert np.allclose(J_N, J_fd, atol=1e-6)


def test_contact_jacobian_null_space_motion(model):
    # both contacts flush; any qdot in null(J_N) leaves the gaps stationary
    q4 = 0.05
    line_point = model.plank_hinge + 0.3 * np.array([np.cos(q4), np.sin(q4)])
    q = np.append(inverse_kinematics(model, line_point, q4), q4)
    J_N = contact_jacobian(model, q)
    _, _, vt = np.linalg.svd(J_N)
    for null_vec in vt[2:]:
        assert np.allclose(J_N @ null_vec, 0.0, atol=1e-12)


def test_contact_jacobian_plank_column_is_moment_arm(model):
    q = np.append(inverse_kinematics(model, np.array([0.4, 0.35]), 0.0), 0.0)
    J_N = contact_jacobian(model, q)
    t = np.array([1.0, 0.0])
    pts = contact_points(model, q)
    for i in range(2):
        assert J_N[i, 3] == pytest.approx(-t @ (pts[i] - model.plank_hinge), abs=1e-12)


def test_contact_jacobian_rate_matches_finite_differences(model, rng):
    delta = 1e-6
    for _ in range(10):
        q = rng.uniform(-np.pi, np.pi, size=4)
        qd = rng.uniform(-2, 2, size=4)
        Jd = contact_jacobian_rate(model, q, qd)
        J_plus = contact_jacobian(model, q + qd * delta)
        J_minus = contact_jacobian(model, q - qd * delta)
        assert np.allclose(Jd, (J_plus - J_minus) / (2 * delta), atol=1e-5)


# --- inverse kinematics --------------------------------------------------------

def test_ik_round_trip_from_fk(model, rng):
    hits = 0
    while hits < 20:
        q_rob = rng.uniform(-np.pi, np.pi, size=3)
        if q_rob[1] >= -1e-3:  # stay on the elbow-up branch, away from the stretch
            continue
        pose = forward_kinematics(model, np.append(q_rob, 0.0))
        try:
            q_sol = inverse_kinematics(model, pose.p, pose.theta)
        except (WorkspaceError, SingularityError):
            continue
        assert np.allclose(np.sin(q_sol - q_rob), 0.0, atol=1e-9)
        hits += 1


def test_ik_out_of_workspace(model):
    with pytest.raises(WorkspaceError):
        inverse_kinematics(model, np.array([2.0, 0.0]), 0.0)


def test_ik_singularity(model):
    # wrist exactly at full stretch of the first two links
    p = np.array([0.8 + model.link_lengths[2], 0.0])
    with pytest.raises(SingularityError):
        inverse_kinematics(model, p, 0.0)


def test_ik_round_trip_random_poses(model, rng):
    hits = 0
    while hits < 100:
        p = rng.uniform([-0.7, -0.7], [0.7, 0.7])
        theta = rng.uniform(-np.pi, np.pi)
        try:
            q_rob = inverse_kinematics(model, p, theta)
        except (WorkspaceError, SingularityError):
            continue
        pose = forward_kinematics(model, np.append(q_rob, 0.0))
        assert np.linalg.norm(pose.p - p) < 1e-10
        assert abs(np.sin(pose.theta - theta)) < 1e-10
        hits += 1


def test_inverse_velocity_kinematics(model, rng):
    q = np.append(inverse_kinematics(model, np.array([0.4, 0.35]), 0.0), 0.0)
    assert np.allclose(inverse_velocity_kinematics(model, q, np.zeros(2), 0.0), 0.0)
    J_p, J_theta = jacobians(model, q)
    for _ in range(5):
        qd = rng.uniform(-1, 1, size=3)
        qd_full = np.append(qd, 0.0)
        sol = inverse_velocity_kinematics(model, q, J_p @ qd_full, float((J_theta @ qd_full)[0]))
        assert np.allclose(sol, qd, atol=1e-10)


def test_inverse_velocity_kinematics_singular(model):
    with pytest.raises(SingularityError):
        inverse_velocity_kinematics(model, np.zeros(4), np.array([0.1, 0.0]), 0.0)
