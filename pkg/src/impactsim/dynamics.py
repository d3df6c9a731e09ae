"""Kinematics and smooth dynamics of the planar 3-DOF arm and hinged plank.

The generalized coordinate vector is q = [q1 q2 q3 q4] with q1..q3 the arm
joint angles and q4 the plank hinge angle. The arm and plank share no bodies,
so the mass matrix is block diagonal; they couple only through contact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class WorkspaceError(ValueError):
    """Requested end-effector pose is outside the reachable workspace."""


class SingularityError(ValueError):
    """Kinematic map is singular (or numerically near-singular) at this configuration."""


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Physical parameters of the arm, its end-effector contact geometry, and the plank.

    Link CoG offsets are measured along each link from its proximal joint.
    Contact offsets are expressed in the end-effector frame. The plank spring
    restores toward `plank_rest_angle`.
    """

    link_lengths: np.ndarray        # (3,) m
    link_masses: np.ndarray         # (3,) kg
    link_inertias: np.ndarray       # (3,) kg m^2, about each link CoG
    cog_offsets: np.ndarray         # (3,) m
    plank_hinge: np.ndarray         # (2,) m, world frame
    plank_length: float             # m
    plank_inertia: float            # kg m^2, about the hinge
    plank_stiffness: float          # N m / rad, restoring spring at the hinge
    plank_damping: float            # N m s / rad
    contact_offsets: np.ndarray     # (2, 2) m, rows = contact point 1, 2 in EE frame
    gravity: np.ndarray             # (2,) m/s^2
    tau_min: np.ndarray             # (3,) N m
    tau_max: np.ndarray             # (3,) N m
    plank_rest_angle: float = 0.0   # rad

    def __post_init__(self) -> None:
        for name in ("link_lengths", "link_masses", "link_inertias", "cog_offsets",
                     "plank_hinge", "contact_offsets", "gravity", "tau_min", "tau_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.link_lengths.shape != (3,) or np.any(self.link_lengths <= 0):
            raise ValueError("link lengths must be 3 strictly positive values")
        if np.any(self.link_masses <= 0) or np.any(self.link_inertias <= 0):
            raise ValueError("link masses and inertias must be strictly positive")
        if self.plank_length <= 0 or self.plank_inertia <= 0:
            raise ValueError("plank length and inertia must be strictly positive")
        if self.contact_offsets.shape != (2, 2):
            raise ValueError("expected two planar contact-point offsets")
        if np.allclose(self.contact_offsets[0], self.contact_offsets[1]):
            raise ValueError("the two contact-point offsets must be distinct")
        if np.any(self.tau_min >= self.tau_max):
            raise ValueError("tau_min must be elementwise below tau_max")

    @property
    def reach(self) -> float:
        return float(np.sum(self.link_lengths))


@dataclass
class SystemState:
    """Generalized coordinates and velocities, q = [q_rob; q4]."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self) -> None:
        self.q = np.asarray(self.q, dtype=float)
        self.qdot = np.asarray(self.qdot, dtype=float)
        if self.q.shape != (4,) or self.qdot.shape != (4,):
            raise ValueError("state dimension must be exactly 4")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))):
            raise ValueError("state entries must be finite")


@dataclass(frozen=True, eq=False)
class EePose:
    """End-effector frame origin and orientation in the world frame."""

    p: np.ndarray
    theta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if self.p.shape != (2,) or not (np.all(np.isfinite(self.p)) and np.isfinite(self.theta)):
            raise ValueError("pose must be a finite planar position and angle")


def _unit(phi: float | np.ndarray) -> np.ndarray:
    return np.array([np.cos(phi), np.sin(phi)])


def _chain_terms(model: RobotModel, extra: np.ndarray | None = None) -> list[tuple[float, int, float]]:
    """Term list (coefficient, absolute-angle index, phase) for a chain point.

    The point is sum coef * u(phi_j + phase) over terms, phi_j = q1 + .. + qj.
    `extra` is an optional offset in the link-3 (end-effector) frame.
    """
    l1, l2, l3 = model.link_lengths
    terms = [(float(l1), 1, 0.0), (float(l2), 2, 0.0)]
    if extra is None:
        terms.append((float(l3), 3, 0.0))
    else:
        terms.append((float(l3 + extra[0]), 3, 0.0))
        if extra[1] != 0.0:
            terms.append((float(extra[1]), 3, np.pi / 2))
    return terms


def _chain_point(q_rob: np.ndarray, terms: list[tuple[float, int, float]]) -> tuple[np.ndarray, np.ndarray]:
    """Position and 2x3 Jacobian of a chain point given by a term list."""
    phi = np.cumsum(q_rob)
    pos = np.zeros(2)
    jac = np.zeros((2, 3))
    for coef, j, phase in terms:
        a = phi[j - 1] + phase
        u = _unit(a)
        pos += coef * u
        du = coef * np.array([-u[1], u[0]])
        for k in range(j):
            jac[:, k] += du
    return pos, jac


def _chain_jdot(q_rob: np.ndarray, qd_rob: np.ndarray, terms: list[tuple[float, int, float]]) -> np.ndarray:
    """Time derivative of the 2x3 chain-point Jacobian: d/dt of each column."""
    phi = np.cumsum(q_rob)
    phidot = np.cumsum(qd_rob)
    jdot = np.zeros((2, 3))
    for coef, j, phase in terms:
        a = phi[j - 1] + phase
        # d/dt of coef*u'(a) is -coef*u(a)*phidot_j
        ddu = -coef * _unit(a) * phidot[j - 1]
        for k in range(j):
            jdot[:, k] += ddu
    return jdot


def forward_kinematics(model: RobotModel, q: np.ndarray) -> EePose:
    """End-effector pose from joint angles; independent of the plank angle q4."""
    q = np.asarray(q, dtype=float)
    q_rob = q[:3]
    terms = _chain_terms(model)
    pos, _ = _chain_point(q_rob, terms)
    return EePose(p=pos, theta=float(np.sum(q_rob)))


def jacobians(model: RobotModel, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """J_p (2x4) and J_theta (1x4); the plank column is identically zero."""
    q = np.asarray(q, dtype=float)
    _, jac = _chain_point(q[:3], _chain_terms(model))
    J_p = np.zeros((2, 4))
    J_p[:, :3] = jac
    J_theta = np.array([[1.0, 1.0, 1.0, 0.0]])
    return J_p, J_theta


def jacobian_rates(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Jdot_p (2x4) and Jdot_theta (1x4) for a given joint velocity."""
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    jd = _chain_jdot(q[:3], qdot[:3], _chain_terms(model))
    Jdot_p = np.zeros((2, 4))
    Jdot_p[:, :3] = jd
    return Jdot_p, np.zeros((1, 4))


def _cog_terms(model: RobotModel, i: int) -> list[tuple[float, int, float]]:
    l = model.link_lengths
    r = model.cog_offsets
    terms = [(float(l[j]), j + 1, 0.0) for j in range(i)]
    terms.append((float(r[i]), i + 1, 0.0))
    return terms


# Angular-velocity weight vectors for the three links (phi_i = w_i . q_rob).
_W_ROWS = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 1.0, 1.0]])


def mass_matrix(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """4x4 mass matrix: 3x3 arm block plus the scalar plank inertia."""
    q = np.asarray(q, dtype=float)
    q_rob = q[:3]
    M_arm = np.zeros((3, 3))
    for i in range(3):
        _, J = _chain_point(q_rob, _cog_terms(model, i))
        w = _W_ROWS[i]
        M_arm += model.link_masses[i] * (J.T @ J) + model.link_inertias[i] * np.outer(w, w)
    M = np.zeros((4, 4))
    M[:3, :3] = M_arm
    M[3, 3] = model.plank_inertia
    return M


def bias_vector(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Coriolis/centrifugal + gravity terms for the arm, spring-damper for the plank.

    Enters the equations of motion as M qdd + h = S tau + J_N^T lambda.
    """
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    q_rob, qd_rob = q[:3], qdot[:3]
    h_arm = np.zeros(3)
    g = model.gravity
    for i in range(3):
        terms = _cog_terms(model, i)
        _, J = _chain_point(q_rob, terms)
        Jd = _chain_jdot(q_rob, qd_rob, terms)
        m = model.link_masses[i]
        h_arm += m * (J.T @ (Jd @ qd_rob))   # velocity product terms
        h_arm -= m * (J.T @ g)               # gravity, +dV/dq
    h = np.zeros(4)
    h[:3] = h_arm
    h[3] = model.plank_stiffness * (q[3] - model.plank_rest_angle) \
        + model.plank_damping * qdot[3]
    return h


def _plank_tangent_normal(q4: float) -> tuple[np.ndarray, np.ndarray]:
    t = np.array([np.cos(q4), np.sin(q4)])
    n = np.array([-np.sin(q4), np.cos(q4)])
    return t, n


def contact_points(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """World positions of the two end-effector contact points, shape (2, 2)."""
    q = np.asarray(q, dtype=float)
    out = np.zeros((2, 2))
    for i in range(2):
        pos, _ = _chain_point(q[:3], _chain_terms(model, extra=model.contact_offsets[i]))
        out[i] = pos
    return out


def gap_functions(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Signed normal distance of each contact point to the plank line; positive when open."""
    q = np.asarray(q, dtype=float)
    _, n = _plank_tangent_normal(q[3])
    pts = contact_points(model, q)
    return (pts - model.plank_hinge) @ n


def contact_jacobian(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """J_N (2x4): rows are gradients of the two gap functions."""
    q = np.asarray(q, dtype=float)
    t, n = _plank_tangent_normal(q[3])
    J_N = np.zeros((2, 4))
    for i in range(2):
        pos, J = _chain_point(q[:3], _chain_terms(model, extra=model.contact_offsets[i]))
        J_N[i, :3] = n @ J
        # dn/dq4 = -t, so the plank column is minus the moment arm about the hinge
        J_N[i, 3] = -t @ (pos - model.plank_hinge)
    return J_N


def contact_jacobian_rate(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Jdot_N (2x4), the time derivative of the contact Jacobian."""
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    t, n = _plank_tangent_normal(q[3])
    q4dot = qdot[3]
    ndot = -t * q4dot
    tdot = n * q4dot
    Jd_N = np.zeros((2, 4))
    for i in range(2):
        terms = _chain_terms(model, extra=model.contact_offsets[i])
        pos, J = _chain_point(q[:3], terms)
        Jd = _chain_jdot(q[:3], qdot[:3], terms)
        pdot = J @ qdot[:3]
        Jd_N[i, :3] = ndot @ J + n @ Jd
        Jd_N[i, 3] = -(tdot @ (pos - model.plank_hinge) + t @ pdot)
    return Jd_N


@dataclass(frozen=True, eq=False)
class FusedTerms:
    """Every per-state quantity the simulation backends need, from one pass."""

    M: np.ndarray           # 4x4
    h: np.ndarray           # (4,)
    p: np.ndarray           # (2,) end-effector position
    theta: float
    J_p: np.ndarray         # 2x4
    Jd_p: np.ndarray        # 2x4
    gaps: np.ndarray        # (2,)
    J_N: np.ndarray         # 2x4
    Jd_N: np.ndarray        # 2x4
    contact_pts: np.ndarray  # (2, 2)


def _fused_build(model: RobotModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-model constant coefficient tables for the fused evaluation.

    Row order: CoG1, CoG2, CoG3, EE origin, contact 1, contact 2. Columns are
    coefficients of u(phi_j) (coefJ) and of u'(phi_j) (coefD) for j = 1..3.
    """
    l = model.link_lengths
    r = model.cog_offsets
    o = model.contact_offsets
    coefJ = np.array([
        [r[0], 0.0, 0.0],
        [l[0], r[1], 0.0],
        [l[0], l[1], r[2]],
        [l[0], l[1], l[2]],
        [l[0], l[1], l[2] + o[0, 0]],
        [l[0], l[1], l[2] + o[1, 0]],
    ])
    coefD = np.zeros((6, 3))
    coefD[4, 2] = o[0, 1]
    coefD[5, 2] = o[1, 1]
    W = np.zeros((3, 3))
    for i in range(3):
        w = _W_ROWS[i]
        W += model.link_inertias[i] * np.outer(w, w)
    return coefJ, coefD, W


# keyed by id; holding the model itself keeps the id from being recycled
_FUSED_CACHE: dict[int, tuple[RobotModel, tuple[np.ndarray, np.ndarray, np.ndarray]]] = {}


def fused_terms(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> FusedTerms:
    """Single-pass evaluation of the dynamics and contact quantities.

    Matches mass_matrix / bias_vector / jacobians / jacobian_rates /
    gap_functions / contact_jacobian / contact_jacobian_rate exactly; exists
    because the simulation backends evaluate these thousands of times per run.
    """
    key = id(model)
    cached = _FUSED_CACHE.get(key)
    if cached is None:
        cached = (model, _fused_build(model))
        _FUSED_CACHE[key] = cached
    coefJ, coefD, W = cached[1]

    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    a = np.cumsum(q[:3])
    w = np.cumsum(qdot[:3])
    c = np.cos(a)
    s = np.sin(a)

    pos = np.empty((6, 2))
    pos[:, 0] = coefJ @ c - coefD @ s
    pos[:, 1] = coefJ @ s + coefD @ c

    # Jacobian term tables before the suffix sum over joints
    Ax = -coefJ * s - coefD * c
    Ay = coefJ * c - coefD * s
    Jx = np.cumsum(Ax[:, ::-1], axis=1)[:, ::-1]
    Jy = np.cumsum(Ay[:, ::-1], axis=1)[:, ::-1]
    Bx = (-coefJ * c + coefD * s) * w
    By = (-coefJ * s - coefD * c) * w
    Jdx = np.cumsum(Bx[:, ::-1], axis=1)[:, ::-1]
    Jdy = np.cumsum(By[:, ::-1], axis=1)[:, ::-1]

    # stacked (point, component, joint) Jacobian tensors
    J_all = np.stack([Jx, Jy], axis=1)       # (6, 2, 3)
    Jd_all = np.stack([Jdx, Jdy], axis=1)

    # arm mass matrix and bias from the three CoG rows
    m = model.link_masses
    g = model.gravity
    qd_rob = qdot[:3]
    J_cog = J_all[:3]
    M_arm = W + np.einsum('i,ikj,ikl->jl', m, J_cog, J_cog)
    pdot_cog = Jd_all[:3] @ qd_rob            # (3, 2) CoG velocity-product terms
    h_arm = np.einsum('i,ikj,ik->j', m, J_cog, pdot_cog - g[None, :])
    M = np.zeros((4, 4))
    M[:3, :3] = M_arm
    M[3, 3] = model.plank_inertia
    h = np.zeros(4)
    h[:3] = h_arm
    h[3] = model.plank_stiffness * (q[3] - model.plank_rest_angle) \
        + model.plank_damping * qdot[3]

    J_p = np.zeros((2, 4))
    J_p[:, :3] = J_all[3]
    Jd_p = np.zeros((2, 4))
    Jd_p[:, :3] = Jd_all[3]

    # contact rows against the plank line
    q4 = q[3]
    q4dot = qdot[3]
    t_pl = np.array([np.cos(q4), np.sin(q4)])
    n_pl = np.array([-t_pl[1], t_pl[0]])
    ndot = -t_pl * q4dot
    tdot = n_pl * q4dot
    pts = pos[4:6]
    rel = pts - model.plank_hinge
    gaps = rel @ n_pl
    J_c = J_all[4:6]                           # (2, 2, 3)
    Jd_c = Jd_all[4:6]
    pdot_c = J_c @ qd_rob                      # (2, 2)
    J_N = np.empty((2, 4))
    Jd_N = np.empty((2, 4))
    J_N[:, :3] = np.einsum('k,ikj->ij', n_pl, J_c)
    J_N[:, 3] = -rel @ t_pl
    Jd_N[:, :3] = np.einsum('k,ikj->ij', ndot, J_c) + np.einsum('k,ikj->ij', n_pl, Jd_c)
    Jd_N[:, 3] = -(rel @ tdot + pdot_c @ t_pl)
    return FusedTerms(M=M, h=h, p=pos[3], theta=float(a[2]), J_p=J_p,
                      Jd_p=Jd_p, gaps=gaps, J_N=J_N, Jd_N=Jd_N, contact_pts=pts)


def inverse_kinematics(model: RobotModel, p: np.ndarray, theta: float) -> np.ndarray:
    """Closed-form 2R solution for the wrist with a fixed elbow-up branch (q2 <= 0).

    Raises WorkspaceError for unreachable poses and SingularityError at the
    stretched/folded elbow.
    """
    p = np.asarray(p, dtype=float)
    l1, l2, l3 = model.link_lengths
    if np.linalg.norm(p) > model.reach + 1e-12:
        raise WorkspaceError(f"target position {p} is beyond the total arm length {model.reach}")
    wrist = p - l3 * _unit(theta)
    r2 = float(wrist @ wrist)
    c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if c2 > 1.0 + 1e-12 or c2 < -1.0 - 1e-12:
        raise WorkspaceError(f"wrist point {wrist} is outside the 2R workspace")
    c2 = min(1.0, max(-1.0, c2))
    s2_mag = np.sqrt(max(0.0, 1.0 - c2 * c2))
    if s2_mag < 1e-9:
        raise SingularityError("elbow fully stretched or folded; branch is undefined")
    q2 = -np.arctan2(s2_mag, c2)  # elbow-up branch
    q1 = np.arctan2(wrist[1], wrist[0]) - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2))
    q3 = theta - q1 - q2
    # wrap q1, q3 to (-pi, pi] for a deterministic representative
    q1 = float(np.arctan2(np.sin(q1), np.cos(q1)))
    q3 = float(np.arctan2(np.sin(q3), np.cos(q3)))
    return np.array([q1, float(q2), q3])


def inverse_velocity_kinematics(model: RobotModel, q: np.ndarray, v_lin: np.ndarray,
                                v_ang: float) -> np.ndarray:
    """Arm joint rates realizing an end-effector twist (linear + angular)."""
    J_p, J_theta = jacobians(model, q)
    A = np.vstack([J_p[:, :3], J_theta[:, :3]])
    if np.linalg.cond(A) > 1e12:
        raise SingularityError("stacked task Jacobian is singular at this configuration")
    rhs = np.array([v_lin[0], v_lin[1], float(v_ang)])
    return np.linalg.solve(A, rhs)
