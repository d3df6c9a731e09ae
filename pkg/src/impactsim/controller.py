"""Three-mode QP controller: approach, interim, and sustained-contact phases.

Each control step builds a small dense QP over joint accelerations, torques,
and (in the contact phase) contact forces. The interim mode, active between
the first detected impact and established full contact, uses no measured
velocity anywhere: its feedback comes from time integration of the approach
velocity field, and the nominal joint velocity substitutes for the measured
one in every velocity-dependent term.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .dynamics import (
    RobotModel,
    bias_vector,
    contact_jacobian,
    contact_jacobian_rate,
    forward_kinematics,
    inverse_velocity_kinematics,
    jacobian_rates,
    jacobians,
    mass_matrix,
)
from .qp import QpProblem, QpSolution, kkt_residual, solve
from .reffield import ReferenceFields

VARIANTS = ("proposed", "no-impact-map", "no-interim-mode")


class Mode(Enum):
    ANTE = "ante"
    INTERIM = "interim"
    POST = "post"


class ControllerError(RuntimeError):
    """QP failure or kinematic singularity inside a control step."""


@dataclass
class ControllerConfig:
    k_p_ante: float = 20.0          # 1/s, velocity-error gain, approach phase
    k_theta_task: float = 20.0      # 1/s, orientation velocity-error gain
    k_p_interim: float = 100.0      # 1/s^2, position-error gain, interim phase
    k_theta_interim: float = 100.0  # 1/s^2, orientation position-error gain
    k_p_post: float = 20.0          # 1/s, velocity-error gain, contact phase
    w_p: float = 1.0
    w_theta: float = 0.3
    w_lambda: float = 1e-4
    dt: float = 1e-3                # s, control period
    variant: str = "proposed"
    detect_force_n: float = 5.0     # compliant backend: impact declared above this force
    detect_steps: int = 2           # ... for this many consecutive control steps
    full_contact_gap_m: float = 1e-4
    full_contact_vel_mps: float = 1e-3
    full_contact_steps: int = 3

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("control period must be positive")
        for name in ("k_p_ante", "k_theta_task", "k_p_interim", "k_theta_interim",
                     "k_p_post", "w_p", "w_theta", "w_lambda"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")


@dataclass
class ContactObservation:
    """What the switching logic sees at a control sample."""

    impact_detected: bool = False
    full_contact: bool = False
    detail: str = ""


@dataclass
class ControllerState:
    mode: Mode = Mode.ANTE
    p_d_int: np.ndarray | None = None      # interim position integrator
    theta_d_int: float | None = None       # interim orientation integrator
    t_int: float | None = None
    impact_log: list = field(default_factory=list)


@dataclass
class TorqueCommand:
    tau: np.ndarray
    qdd: np.ndarray
    lam: np.ndarray
    mode: str
    qp_status: str
    kkt_residual: float
    active_set: tuple
    task_error_lin: float
    task_error_ang: float


def update_mode(state: ControllerState, obs: ContactObservation, config: ControllerConfig,
                t: float, p_meas: np.ndarray, theta_meas: float) -> list[str]:
    """Advance the mode machine; returns the names of modes switched into."""
    switches: list[str] = []
    if obs.impact_detected:
        state.impact_log.append((t, obs.detail or "impact"))
    if state.mode is Mode.ANTE and obs.impact_detected:
        if config.variant == "no-interim-mode":
            state.mode = Mode.POST
            switches.append(Mode.POST.value)
        else:
            state.mode = Mode.INTERIM
            state.t_int = t
            state.p_d_int = np.array(p_meas, dtype=float)
            state.theta_d_int = float(theta_meas)
            switches.append(Mode.INTERIM.value)
    if state.mode is Mode.INTERIM and obs.full_contact:
        state.mode = Mode.POST
        state.p_d_int = None
        state.theta_d_int = None
        switches.append(Mode.POST.value)
    return switches


def _tau_box_rows(model: RobotModel, n: int) -> tuple[np.ndarray, np.ndarray]:
    A = np.zeros((6, n))
    A[:3, 4:7] = np.eye(3)
    A[3:, 4:7] = -np.eye(3)
    b = np.concatenate([model.tau_max, -model.tau_min])
    return A, b


def ante_task_terms(model: RobotModel, fields: ReferenceFields, config: ControllerConfig,
                    q: np.ndarray, qdot: np.ndarray):
    """(J_p, eta_p, J_theta, eta_theta) for the approach-phase tracking cost."""
    pose = forward_kinematics(model, q)
    J_p, J_theta = jacobians(model, q)
    Jd_p, Jd_theta = jacobian_rates(model, q, qdot)
    v_d = fields.ante_velocity(pose.p)
    a_d = fields.ante_accel(pose.p)
    w_d = fields.ante_angular_rate(pose.theta)
    wd_d = fields.ante_angular_accel(pose.theta)
    eta_p = Jd_p @ qdot - a_d - config.k_p_ante * (v_d - J_p @ qdot)
    eta_th = float((Jd_theta @ qdot - wd_d - config.k_theta_task * (w_d - J_theta @ qdot))[0])
    return J_p, eta_p, J_theta, eta_th


def _tracking_problem(model: RobotModel, q: np.ndarray, h_vec: np.ndarray,
                      J_p: np.ndarray, eta_p: np.ndarray, J_theta: np.ndarray,
                      eta_th: float, config: ControllerConfig) -> QpProblem:
    """Free-dynamics QP over x = (qdd, tau) shared by the ante and interim modes."""
    n = 7
    H = np.zeros((n, n))
    g = np.zeros(n)
    H[:4, :4] = 2.0 * (config.w_p * J_p.T @ J_p + config.w_theta * J_theta.T @ J_theta)
    g[:4] = 2.0 * (config.w_p * J_p.T @ eta_p + config.w_theta * J_theta[0] * eta_th)
    M = mass_matrix(model, q)
    A_eq = np.zeros((4, n))
    A_eq[:, :4] = M
    A_eq[:, 4:7] = -np.vstack([np.eye(3), np.zeros((1, 3))])
    b_eq = -h_vec
    A_in, b_in = _tau_box_rows(model, n)
    return QpProblem(H=H, g=g, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in)


def build_ante_problem(model: RobotModel, fields: ReferenceFields, config: ControllerConfig,
                       q: np.ndarray, qdot: np.ndarray) -> QpProblem:
    J_p, eta_p, J_theta, eta_th = ante_task_terms(model, fields, config, q, qdot)
    h_vec = bias_vector(model, q, qdot)
    return _tracking_problem(model, q, h_vec, J_p, eta_p, J_theta, eta_th, config)


def interim_nominal_velocity(model: RobotModel, fields: ReferenceFields,
                             q: np.ndarray) -> np.ndarray:
    """Nominal joint velocity from the approach references at the measured pose."""
    pose = forward_kinematics(model, q)
    v_d = fields.ante_velocity(pose.p)
    w_d = fields.ante_angular_rate(pose.theta)
    qd_rob = inverse_velocity_kinematics(model, q, v_d, w_d)
    return np.append(qd_rob, fields.ante.q4dot_est)


def build_interim_problem(model: RobotModel, fields: ReferenceFields,
                          config: ControllerConfig, state: ControllerState,
                          q: np.ndarray) -> QpProblem:
    """Interim QP: measured joint velocity appears nowhere in the problem data."""
    pose = forward_kinematics(model, q)
    J_p, J_theta = jacobians(model, q)
    qd_int = interim_nominal_velocity(model, fields, q)
    Jd_p_int, Jd_theta_int = jacobian_rates(model, q, qd_int)
    a_d = fields.ante_accel(pose.p)
    wd_d = fields.ante_angular_accel(pose.theta)
    eta_p = Jd_p_int @ qd_int - a_d - config.k_p_interim * (state.p_d_int - pose.p)
    eta_th = float((Jd_theta_int @ qd_int - wd_d
                    - config.k_theta_interim * (state.theta_d_int - pose.theta))[0])
    h_vec = bias_vector(model, q, qd_int)
    return _tracking_problem(model, q, h_vec, J_p, eta_p, J_theta, eta_th, config)


def interim_integrator_step(state: ControllerState, fields: ReferenceFields,
                            dt: float) -> None:
    """Forward-Euler advance of the interim references, evaluated at the
    integrator state (not at any measured quantity)."""
    state.p_d_int = state.p_d_int + fields.ante_velocity(state.p_d_int) * dt
    state.theta_d_int = state.theta_d_int + fields.ante_angular_rate(state.theta_d_int) * dt


def build_post_problem(model: RobotModel, fields: ReferenceFields, config: ControllerConfig,
                       q: np.ndarray, qdot: np.ndarray,
                       impact_coupled: bool = True) -> QpProblem:
    """Contact-phase QP over x = (qdd, tau, lam); both contacts treated as closed."""
    n = 9
    pose = forward_kinematics(model, q)
    J_p, _ = jacobians(model, q)
    Jd_p, _ = jacobian_rates(model, q, qdot)
    v_d = fields.post_velocity(pose.p, impact_coupled)
    a_d = fields.post_accel(pose.p, impact_coupled)
    eta_p = Jd_p @ qdot - a_d - config.k_p_post * (v_d - J_p @ qdot)
    H = np.zeros((n, n))
    g = np.zeros(n)
    H[:4, :4] = 2.0 * config.w_p * J_p.T @ J_p
    g[:4] = 2.0 * config.w_p * J_p.T @ eta_p
    # equal force distribution: w_lambda * (lam1 - lam2)^2
    H[7:, 7:] = 2.0 * config.w_lambda * np.array([[1.0, -1.0], [-1.0, 1.0]])
    M = mass_matrix(model, q)
    h_vec = bias_vector(model, q, qdot)
    J_N = contact_jacobian(model, q)
    Jd_N = contact_jacobian_rate(model, q, qdot)
    A_eq = np.zeros((6, n))
    A_eq[:4, :4] = M
    A_eq[:4, 4:7] = -np.vstack([np.eye(3), np.zeros((1, 3))])
    A_eq[:4, 7:] = -J_N.T
    A_eq[4:, :4] = J_N
    b_eq = np.concatenate([-h_vec, -Jd_N @ qdot])
    A_box, b_box = _tau_box_rows(model, n)
    A_lam = np.zeros((2, n))
    A_lam[:, 7:] = -np.eye(2)
    A_in = np.vstack([A_box, A_lam])
    b_in = np.concatenate([b_box, np.zeros(2)])
    return QpProblem(H=H, g=g, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in)


def _command_from_solution(problem: QpProblem, sol: QpSolution, mode: Mode,
                           J_p: np.ndarray, eta_p: np.ndarray,
                           J_theta: np.ndarray | None, eta_th: float) -> TorqueCommand:
    qdd = sol.x[:4]
    tau = sol.x[4:7]
    lam = sol.x[7:] if sol.x.size > 7 else np.zeros(0)
    e_lin = float(np.linalg.norm(J_p @ qdd + eta_p))
    e_ang = float(abs(J_theta @ qdd + eta_th)) if J_theta is not None else 0.0
    return TorqueCommand(tau=tau, qdd=qdd, lam=lam, mode=mode.value,
                         qp_status=sol.status, kkt_residual=kkt_residual(problem, sol),
                         active_set=sol.active_set, task_error_lin=e_lin,
                         task_error_ang=e_ang)


def ante_step(model: RobotModel, fields: ReferenceFields, config: ControllerConfig,
              q: np.ndarray, qdot: np.ndarray,
              warm_start: tuple[int, ...] | None = None) -> TorqueCommand:
    J_p, eta_p, J_theta, eta_th = ante_task_terms(model, fields, config, q, qdot)
    problem = build_ante_problem(model, fields, config, q, qdot)
    sol = solve(problem, warm_start)
    if sol.status != "optimal":
        raise ControllerError(f"ante-mode QP returned status {sol.status!r}")
    return _command_from_solution(problem, sol, Mode.ANTE, J_p, eta_p, J_theta[0], eta_th)


def interim_step(model: RobotModel, fields: ReferenceFields, config: ControllerConfig,
                 state: ControllerState, q: np.ndarray, qdot_measured: np.ndarray,
                 warm_start: tuple[int, ...] | None = None) -> TorqueCommand:
    """Interim command. `qdot_measured` is accepted for signature parity and ignored."""
    del qdot_measured  # untrusted during the impact sequence; unused by design
    problem = build_interim_problem(model, fields, config, state, q)
    sol = solve(problem, warm_start)
    if sol.status != "optimal":
        raise ControllerError(f"interim-mode QP returned status {sol.status!r}")
    pose = forward_kinematics(model, q)
    J_p, J_theta = jacobians(model, q)
    qd_int = interim_nominal_velocity(model, fields, q)
    Jd_p_int, Jd_theta_int = jacobian_rates(model, q, qd_int)
    eta_p = Jd_p_int @ qd_int - fields.ante_accel(pose.p) \
        - config.k_p_interim * (state.p_d_int - pose.p)
    eta_th = float((Jd_theta_int @ qd_int - fields.ante_angular_accel(pose.theta)
                    - config.k_theta_interim * (state.theta_d_int - pose.theta))[0])
    return _command_from_solution(problem, sol, Mode.INTERIM, J_p, eta_p, J_theta[0], eta_th)


def post_step(model: RobotModel, fields: ReferenceFields, config: ControllerConfig,
              q: np.ndarray, qdot: np.ndarray,
              warm_start: tuple[int, ...] | None = None,
              impact_coupled: bool = True) -> TorqueCommand:
    problem = build_post_problem(model, fields, config, q, qdot, impact_coupled)
    sol = solve(problem, warm_start)
    if sol.status != "optimal":
        raise ControllerError(f"post-mode QP returned status {sol.status!r}")
    pose = forward_kinematics(model, q)
    J_p, _ = jacobians(model, q)
    Jd_p, _ = jacobian_rates(model, q, qdot)
    v_d = fields.post_velocity(pose.p, impact_coupled)
    a_d = fields.post_accel(pose.p, impact_coupled)
    eta_p = Jd_p @ qdot - a_d - config.k_p_post * (v_d - J_p @ qdot)
    return _command_from_solution(problem, sol, Mode.POST, J_p, eta_p, None, 0.0)


@dataclass
class StepDiagnostics:
    t: float
    mode: str
    tau: np.ndarray
    qp_status: str
    kkt_residual: float
    active_set: tuple
    task_error_lin: float
    task_error_ang: float
    vel_error_lin: float
    p_d_int: np.ndarray | None
    theta_d_int: float | None


class Controller:
    """Stateful per-simulation controller: mode machine, integrators, warm starts.

    Only the arm state is measured. The plank angle is taken from its prior
    estimate during the approach and interim phases, and reconstructed from
    the end-effector orientation once both contacts are treated as closed.
    """

    def __init__(self, model: RobotModel, fields: ReferenceFields,
                 config: ControllerConfig):
        self.model = model
        self.fields = fields
        self.config = config
        self.state = ControllerState()
        self._warm: dict[Mode, tuple[int, ...] | None] = {m: None for m in Mode}
        self.diagnostics: list[StepDiagnostics] = []
        self.mode_switches: list[tuple[float, str]] = []

    def believed_state(self, q_rob: np.ndarray, qd_rob: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Assemble the full-state belief from arm measurements and the plank estimate."""
        theta = float(np.sum(q_rob))
        thetadot = float(np.sum(qd_rob))
        if self.state.mode is Mode.POST:
            q4, q4dot = theta, thetadot  # plank pose implied by closed contacts
        else:
            q4, q4dot = self.fields.ante.q4_est, self.fields.ante.q4dot_est
        return np.append(q_rob, q4), np.append(qd_rob, q4dot)

    def step(self, t: float, q_rob: np.ndarray, qd_rob: np.ndarray,
             obs: ContactObservation) -> TorqueCommand:
        model, fields, config, state = self.model, self.fields, self.config, self.state
        pose = forward_kinematics(model, np.append(q_rob, 0.0))
        for switched in update_mode(state, obs, config, t, pose.p, pose.theta):
            self.mode_switches.append((t, switched))
        q, qd = self.believed_state(q_rob, qd_rob)
        coupled = config.variant != "no-impact-map"
        if state.mode is Mode.ANTE:
            cmd = ante_step(model, fields, config, q, qd, self._warm[Mode.ANTE])
        elif state.mode is Mode.INTERIM:
            cmd = interim_step(model, fields, config, state, q, qd,
                               self._warm[Mode.INTERIM])
        else:
            cmd = post_step(model, fields, config, q, qd, self._warm[Mode.POST],
                            impact_coupled=coupled)
        self._warm[state.mode] = cmd.active_set
        if state.mode is Mode.INTERIM:
            vel_err = float(np.linalg.norm(state.p_d_int - pose.p))
        else:
            J_p, _ = jacobians(model, q)
            if state.mode is Mode.ANTE:
                v_d = fields.ante_velocity(pose.p)
            else:
                v_d = fields.post_velocity(pose.p, coupled)
            vel_err = float(np.linalg.norm(v_d - J_p @ qd))
        self.diagnostics.append(StepDiagnostics(
            t=t, mode=cmd.mode, tau=cmd.tau.copy(), qp_status=cmd.qp_status,
            kkt_residual=cmd.kkt_residual, active_set=cmd.active_set,
            task_error_lin=cmd.task_error_lin, task_error_ang=cmd.task_error_ang,
            vel_error_lin=vel_err,
            p_d_int=None if state.p_d_int is None else state.p_d_int.copy(),
            theta_d_int=state.theta_d_int))
        if state.mode is Mode.INTERIM:
            interim_integrator_step(state, fields, config.dt)
        return cmd
