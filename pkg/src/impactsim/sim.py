"""Closed-loop simulation backends.

Rigid: event-driven integration of the piecewise-smooth dynamics. Gap
zero-crossings are located by bisection, closures resolved with the inelastic
impact map (enumerating contact subsets until impulses and separation
velocities are consistent), and sustained contacts released when their force
turns negative.

Flexible: each joint gets a motor-side inertia behind a stiff spring-damper
transmission, the commanded torque passes through a first-order lag, and the
plank interaction is a compliant stiffening contact with velocity-dependent
damping, so contact can chatter. Integrated with Heun's method at a fixed
small step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .contact import constrained_dynamics, detachment_check, impact_map
from .controller import (
    ContactObservation,
    Controller,
    ControllerConfig,
    ControllerError,
    Mode,
    VARIANTS,
)
from .dynamics import RobotModel, SingularityError, fused_terms, inverse_kinematics
from .reffield import (
    AnteFieldParams,
    ImpactLineGeometry,
    PostFieldParams,
    ReferenceFields,
)

_GAP_TOL = 1e-9          # m, a contact this close is treated as closed
_BISECT_TOL = 1e-10      # s, impact-time resolution
_SPEED_LIMIT = 1e3       # rad/s, divergence guard


class DivergenceError(RuntimeError):
    """Integration blew up (joint speeds beyond any physical value)."""


def impact_line_from_model(model: RobotModel, ante: AnteFieldParams) -> ImpactLineGeometry:
    """Nominal impact line: the plank line at the estimated ante-impact state,
    with the normal oriented toward the side the approach velocity comes from."""
    q4 = ante.q4_est
    tangent = np.array([np.cos(q4), np.sin(q4)])
    normal = np.array([-np.sin(q4), np.cos(q4)])
    sign = 1.0 if normal @ ante.v_imp < 0 else -1.0
    return ImpactLineGeometry(point=model.plank_hinge.copy(), tangent=tangent,
                              normal=normal, sign=sign)


@dataclass
class FlexibleParams:
    joint_stiffness: float = 5e3    # N m / rad
    joint_damping: float = 2.0      # N m s / rad
    motor_inertia: float = 0.1      # kg m^2
    torque_bandwidth: float = 600.0  # rad/s, low-level torque loop
    contact_stiffness: float = 1e5  # N / m^e
    contact_exponent: float = 1.5
    contact_damping: float = 1.5    # s/m
    contact_saturation: float = 1e-3  # m, exponential stiffening scale
    dt: float = 1e-5                # s, integrator step

    def __post_init__(self) -> None:
        for name in ("joint_stiffness", "joint_damping", "motor_inertia",
                     "torque_bandwidth", "contact_stiffness", "contact_exponent",
                     "contact_damping", "contact_saturation", "dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass
class Scenario:
    model: RobotModel
    ante: AnteFieldParams
    post: PostFieldParams
    control: ControllerConfig
    backend: str = "rigid"              # rigid | flexible
    duration: float = 1.5               # s
    plank_offset: float = 0.0           # rad, true initial q4 minus the estimate
    ee_start: tuple[float, float, float] = (0.4, 0.55, 0.0)   # x, y, theta
    qd0: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    substeps: int = 4                   # rigid internal steps per control period
    flexible: FlexibleParams = field(default_factory=FlexibleParams)
    seed: int = 0                       # reserved for fuzz harnesses

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if not np.isfinite(self.plank_offset):
            raise ValueError("plank offset must be finite")
        if self.backend not in ("rigid", "flexible"):
            raise ValueError("backend must be 'rigid' or 'flexible'")
        if self.substeps < 1:
            raise ValueError("at least one internal substep is required")

    def initial_state(self) -> tuple[np.ndarray, np.ndarray]:
        x, y, theta = self.ee_start
        q_rob = inverse_kinematics(self.model, np.array([x, y]), theta)
        q0 = np.append(q_rob, self.ante.q4_est + self.plank_offset)
        return q0, np.asarray(self.qd0, dtype=float)

    def controller_model(self) -> RobotModel:
        """The model the controller believes: plank resting at the estimate."""
        return replace(self.model, plank_rest_angle=self.ante.q4_est)

    def plant_model(self) -> RobotModel:
        """The true plant: the plank rests, stationary, at the offset pose the
        controller does not know about."""
        return replace(self.model, plank_rest_angle=self.ante.q4_est + self.plank_offset)

    def build_fields(self) -> ReferenceFields:
        geom = impact_line_from_model(self.model, self.ante)
        return ReferenceFields.build(self.controller_model(), geom, self.ante, self.post)


@dataclass
class Event:
    t: float
    kind: str            # impact-1 | impact-2 | simultaneous | mode-switch | detach
    detail: str = ""
    ke_pre: float | None = None
    ke_post: float | None = None


@dataclass
class SimResult:
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    p: np.ndarray
    theta: np.ndarray
    tau: np.ndarray
    lam: np.ndarray
    mode: list[str]
    events: list[Event]
    diagnostics: list
    variant: str
    status: str = "ok"

    def impact_events(self) -> list[Event]:
        return [e for e in self.events if e.kind in ("impact-1", "impact-2", "simultaneous")]

    def mode_switch_times(self, mode: str) -> list[float]:
        return [e.t for e in self.events if e.kind == "mode-switch" and e.detail == mode]


# --- rigid backend ---------------------------------------------------------------


def _rigid_rhs(model: RobotModel, q: np.ndarray, qd: np.ndarray, tau: np.ndarray,
               active: list[int]):
    f = fused_terms(model, q, qd)
    if active:
        qdd, lam = constrained_dynamics(f.M, f.h, tau, f.J_N[active], f.Jd_N[active], qd)
    else:
        qdd, lam = constrained_dynamics(f.M, f.h, tau, None, None, qd)
    return qdd, lam


def _rk4_step(model: RobotModel, q: np.ndarray, qd: np.ndarray, tau: np.ndarray,
              active: list[int], h: float) -> tuple[np.ndarray, np.ndarray]:
    k1v, _ = _rigid_rhs(model, q, qd, tau, active)
    k1q = qd
    k2v, _ = _rigid_rhs(model, q + 0.5 * h * k1q, qd + 0.5 * h * k1v, tau, active)
    k2q = qd + 0.5 * h * k1v
    k3v, _ = _rigid_rhs(model, q + 0.5 * h * k2q, qd + 0.5 * h * k2v, tau, active)
    k3q = qd + 0.5 * h * k2v
    k4v, _ = _rigid_rhs(model, q + h * k3q, qd + h * k3v, tau, active)
    k4q = qd + h * k3v
    q_new = q + h / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
    qd_new = qd + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return q_new, qd_new


def _resolve_closure(model: RobotModel, q: np.ndarray, qd: np.ndarray,
                     closed: list[int]) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Impact resolution for the set of closed contacts.

    When the event leaves both contacts closed (a nominally simultaneous
    closure, or one contact completing against an already-sustained one), the
    full two-row simultaneous map applies and full contact is established;
    afterwards only the force-level detachment check can release a contact.
    A lone closure on an otherwise free end effector uses the single-row map.
    """
    f = fused_terms(model, q, qd)
    out = impact_map(f.M, f.J_N[list(closed)], qd)
    return list(closed), out.qdot_post, f.M


def _project_constraints(model: RobotModel, q: np.ndarray, qd: np.ndarray,
                         active: list[int]) -> tuple[np.ndarray, np.ndarray]:
    """Remove constraint drift: pull active gaps back to zero and active normal
    velocities back into the constraint tangent."""
    if not active:
        return q, qd
    f = fused_terms(model, q, qd)
    gaps = f.gaps[active]
    J = f.J_N[active]
    if np.max(np.abs(gaps)) > 1e-14:
        Minv_JT = np.linalg.solve(f.M, J.T)
        delassus = J @ Minv_JT
        q = q - Minv_JT @ np.linalg.solve(delassus, gaps)
        f = fused_terms(model, q, qd)
        J = f.J_N[active]
    if np.max(np.abs(J @ qd)) > 1e-14:
        qd = impact_map(f.M, J, qd).qdot_post
    return q, qd


class _RigidPlant:
    """Event-driven integrator state between control samples."""

    def __init__(self, model: RobotModel, q0: np.ndarray, qd0: np.ndarray):
        self.model = model
        self.q = np.array(q0, dtype=float)
        self.qd = np.array(qd0, dtype=float)
        self.active: list[int] = []
        self.events: list[Event] = []
        self.new_impact = False
        self.last_detail = ""

    def _kinetic(self, qd: np.ndarray) -> float:
        f = fused_terms(self.model, self.q, qd)
        return 0.5 * qd @ f.M @ qd

    def _apply_closure(self, t_abs: float, impacting: list[int]) -> None:
        """Resolve the closure of `impacting` together with any contact that is
        already active or touching."""
        gaps = fused_terms(self.model, self.q, self.qd).gaps
        closed = sorted(set(self.active) | set(impacting)
                        | {i for i in (0, 1) if gaps[i] <= _GAP_TOL})
        ke_pre = self._kinetic(self.qd)
        chosen, qd_post, M = _resolve_closure(self.model, self.q, self.qd, closed)
        ke_post = 0.5 * qd_post @ M @ qd_post
        newly = [i for i in chosen if i not in self.active]
        dropped = [i for i in self.active if i not in chosen]
        if len(newly) >= 2:
            kind = "simultaneous"
            self.events.append(Event(t_abs, kind, ke_pre=ke_pre, ke_post=ke_post))
            self.new_impact = True
            self.last_detail = kind
        elif len(newly) == 1:
            kind = f"impact-{newly[0] + 1}"
            self.events.append(Event(t_abs, kind, ke_pre=ke_pre, ke_post=ke_post))
            self.new_impact = True
            self.last_detail = kind
        for i in dropped:
            self.events.append(Event(t_abs, "detach", detail=f"contact-{i + 1}"))
        self.qd = qd_post
        self.active = sorted(chosen)
        # snap the newly formed contact set onto the constraint manifold
        self.q, self.qd = _project_constraints(self.model, self.q, self.qd, self.active)

    def _release_negative_forces(self, t_abs: float, tau: np.ndarray) -> None:
        while self.active:
            _, lam = _rigid_rhs(self.model, self.q, self.qd, tau, self.active)
            neg = detachment_check(lam)
            if not neg:
                break
            for k in sorted(neg, reverse=True):
                idx = self.active[k]
                self.events.append(Event(t_abs, "detach", detail=f"contact-{idx + 1}"))
                del self.active[k]

    def advance(self, t0: float, dt: float, substeps: int, tau: np.ndarray) -> None:
        h_grid = dt / substeps
        t_local = 0.0
        guard = 0
        while t_local < dt - 1e-15:
            guard += 1
            if guard > 100 * substeps:
                raise DivergenceError("event loop failed to advance within a control period")
            h = min(h_grid, dt - t_local)
            inactive = [i for i in (0, 1) if i not in self.active]
            f0 = fused_terms(self.model, self.q, self.qd)
            gaps0 = f0.gaps
            # a hovering inactive contact can re-close without a sign change
            touching = [i for i in inactive
                        if gaps0[i] <= _GAP_TOL and (f0.J_N[i] @ self.qd) < -1e-12]
            if touching:
                self._apply_closure(t0 + t_local, touching)
                self._release_negative_forces(t0 + t_local, tau)
                continue
            q_new, qd_new = _rk4_step(self.model, self.q, self.qd, tau, self.active, h)
            gaps1 = fused_terms(self.model, q_new, qd_new).gaps
            crossing = [i for i in inactive if gaps0[i] > _GAP_TOL and gaps1[i] <= 0.0]
            if crossing:
                # earliest crossing by bisection; every contact that crosses within
                # this detection window shares the one (simultaneous) impact map
                t_c = h
                for i in crossing:
                    lo, hi = 0.0, h
                    while hi - lo > _BISECT_TOL:
                        mid = 0.5 * (lo + hi)
                        q_m, qd_m = _rk4_step(self.model, self.q, self.qd, tau, self.active, mid)
                        if fused_terms(self.model, q_m, qd_m).gaps[i] <= 0.0:
                            hi = mid
                        else:
                            lo = mid
                    t_c = min(t_c, hi)
                self.q, self.qd = _rk4_step(self.model, self.q, self.qd, tau, self.active, t_c)
                t_local += t_c
                self._apply_closure(t0 + t_local, crossing)
                self._release_negative_forces(t0 + t_local, tau)
                continue
            self.q, self.qd = q_new, qd_new
            t_local += h
            self._release_negative_forces(t0 + t_local, tau)
            self.q, self.qd = _project_constraints(self.model, self.q, self.qd, self.active)
            if np.max(np.abs(self.qd)) > _SPEED_LIMIT:
                raise DivergenceError("joint speeds exceeded the divergence guard")


def run_rigid(scenario: Scenario) -> SimResult:
    model = scenario.plant_model()
    fields = scenario.build_fields()
    controller = Controller(scenario.controller_model(), fields, scenario.control)
    q0, qd0 = scenario.initial_state()
    plant = _RigidPlant(model, q0, qd0)
    dt = scenario.control.dt
    n_steps = int(round(scenario.duration / dt))

    rows_t, rows_q, rows_qd, rows_p, rows_th = [], [], [], [], []
    rows_tau, rows_lam, rows_mode = [], [], []
    status = "ok"
    last_tau = np.zeros(3)
    for k in range(n_steps):
        t = k * dt
        obs = ContactObservation(impact_detected=plant.new_impact,
                                 full_contact=len(plant.active) == 2,
                                 detail=plant.last_detail)
        plant.new_impact = False
        try:
            cmd = controller.step(t, plant.q[:3], plant.qd[:3], obs)
        except (ControllerError, SingularityError) as exc:
            status = f"aborted: {exc}"
            break
        last_tau = cmd.tau
        f = fused_terms(model, plant.q, plant.qd)
        lam_row = np.zeros(2)
        if plant.active:
            _, lam_now = constrained_dynamics(f.M, f.h, cmd.tau, f.J_N[plant.active],
                                              f.Jd_N[plant.active], plant.qd)
            for j, idx in enumerate(plant.active):
                lam_row[idx] = lam_now[j]
        rows_t.append(t)
        rows_q.append(plant.q.copy())
        rows_qd.append(plant.qd.copy())
        rows_p.append(f.p.copy())
        rows_th.append(f.theta)
        rows_tau.append(cmd.tau.copy())
        rows_lam.append(lam_row)
        rows_mode.append(cmd.mode)
        try:
            plant.advance(t, dt, scenario.substeps, cmd.tau)
        except DivergenceError as exc:
            status = f"aborted: {exc}"
            break
    else:
        # final sample at the horizon
        t = n_steps * dt
        f = fused_terms(model, plant.q, plant.qd)
        rows_t.append(t)
        rows_q.append(plant.q.copy())
        rows_qd.append(plant.qd.copy())
        rows_p.append(f.p.copy())
        rows_th.append(f.theta)
        rows_tau.append(last_tau.copy())
        rows_lam.append(rows_lam[-1].copy() if rows_lam else np.zeros(2))
        rows_mode.append(rows_mode[-1] if rows_mode else Mode.ANTE.value)

    events = list(plant.events)
    for t_sw, mode_name in controller.mode_switches:
        events.append(Event(t_sw, "mode-switch", detail=mode_name))
    events.sort(key=lambda e: e.t)
    return SimResult(t=np.array(rows_t), q=np.array(rows_q), qd=np.array(rows_qd),
                     p=np.array(rows_p), theta=np.array(rows_th), tau=np.array(rows_tau),
                     lam=np.array(rows_lam), mode=rows_mode, events=events,
                     diagnostics=controller.diagnostics, variant=scenario.control.variant,
                     status=status)


# --- flexible backend -------------------------------------------------------------


def _contact_forces(flex: FlexibleParams, gaps: np.ndarray, gap_rates: np.ndarray) -> np.ndarray:
    """Compliant normal forces: stiffening power law in the penetration with
    velocity-dependent damping, clamped at zero (contact cannot pull)."""
    pen = np.maximum(0.0, -gaps)
    pen_rate = -gap_rates
    stiff = flex.contact_stiffness * pen ** flex.contact_exponent \
        * np.exp(np.minimum(pen / flex.contact_saturation, 30.0))
    force = stiff * (1.0 + flex.contact_damping * pen_rate)
    return np.where(pen > 0.0, np.maximum(force, 0.0), 0.0)


_S_TOP = np.vstack([np.eye(3), np.zeros((1, 3))])


def _flex_rhs(model: RobotModel, flex: FlexibleParams, x: np.ndarray,
              tau_cmd: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q = x[0:4]
    qd = x[4:8]
    thm = x[8:11]
    thmd = x[11:14]
    tau_a = x[14:17]
    f = fused_terms(model, q, qd)
    trans = flex.joint_stiffness * (thm - q[:3]) + flex.joint_damping * (thmd - qd[:3])
    forces = _contact_forces(flex, f.gaps, f.J_N @ qd)
    qdd = np.linalg.solve(f.M, _S_TOP @ trans + f.J_N.T @ forces - f.h)
    thmdd = (tau_a - trans) / flex.motor_inertia
    tau_adot = flex.torque_bandwidth * (tau_cmd - tau_a)
    dx = np.empty(17)
    dx[0:4] = qd
    dx[4:8] = qdd
    dx[8:11] = thmd
    dx[11:14] = thmdd
    dx[14:17] = tau_adot
    return dx, forces


def run_flexible(scenario: Scenario) -> SimResult:
    model = scenario.plant_model()
    flex = scenario.flexible
    fields = scenario.build_fields()
    controller = Controller(scenario.controller_model(), fields, scenario.control)
    cfg = scenario.control
    q0, qd0 = scenario.initial_state()
    x = np.concatenate([q0, qd0, q0[:3], qd0[:3], np.zeros(3)])
    dt = cfg.dt
    n_steps = int(round(scenario.duration / dt))
    n_micro = max(1, int(round(dt / flex.dt)))
    h = dt / n_micro

    events: list[Event] = []
    in_contact = np.zeros(2, dtype=bool)
    detect_count = np.zeros(2, dtype=int)
    detected = np.zeros(2, dtype=bool)
    full_count = 0
    pending_impact = False
    pending_detail = ""

    rows_t, rows_q, rows_qd, rows_p, rows_th = [], [], [], [], []
    rows_tau, rows_lam, rows_mode = [], [], []
    status = "ok"
    last_tau = np.zeros(3)

    for k in range(n_steps):
        t = k * dt
        f = fused_terms(model, x[0:4], x[4:8])
        forces = _contact_forces(flex, f.gaps, f.J_N @ x[4:8])
        # impact detection: force threshold with a dwell, per contact
        for i in range(2):
            if forces[i] > cfg.detect_force_n:
                detect_count[i] += 1
            else:
                detect_count[i] = 0
            if detect_count[i] >= cfg.detect_steps and not detected[i]:
                detected[i] = True
                pending_impact = True
                pending_detail = f"impact-{i + 1}"
        # full contact: both gaps small and both normal velocities small, sustained
        rates = f.J_N @ x[4:8]
        if np.all(f.gaps <= cfg.full_contact_gap_m) and np.all(np.abs(rates) <= cfg.full_contact_vel_mps):
            full_count += 1
        else:
            full_count = 0
        obs = ContactObservation(impact_detected=pending_impact,
                                 full_contact=full_count >= cfg.full_contact_steps,
                                 detail=pending_detail)
        pending_impact = False
        try:
            cmd = controller.step(t, x[0:3], x[4:7], obs)
        except (ControllerError, SingularityError) as exc:
            status = f"aborted: {exc}"
            break
        last_tau = cmd.tau
        rows_t.append(t)
        rows_q.append(x[0:4].copy())
        rows_qd.append(x[4:8].copy())
        rows_p.append(f.p.copy())
        rows_th.append(f.theta)
        rows_tau.append(cmd.tau.copy())
        rows_lam.append(forces.copy())
        rows_mode.append(cmd.mode)
        for m in range(n_micro):
            dx1, _ = _flex_rhs(model, flex, x, cmd.tau)
            x_pred = x + h * dx1
            dx2, forces_pred = _flex_rhs(model, flex, x_pred, cmd.tau)
            x = x + 0.5 * h * (dx1 + dx2)
            # forces at the predictor state stand in for the end state; the
            # O(h^2) difference is immaterial for transition detection
            now = forces_pred > 0.0
            t_micro = t + (m + 1) * h
            for i in range(2):
                if now[i] and not in_contact[i]:
                    events.append(Event(t_micro, f"impact-{i + 1}"))
                elif in_contact[i] and not now[i]:
                    events.append(Event(t_micro, "detach", detail=f"contact-{i + 1}"))
            in_contact = now
            if np.max(np.abs(x[4:8])) > _SPEED_LIMIT:
                status = "aborted: joint speeds exceeded the divergence guard"
                break
        if status != "ok":
            break
    else:
        t = n_steps * dt
        f = fused_terms(model, x[0:4], x[4:8])
        forces = _contact_forces(flex, f.gaps, f.J_N @ x[4:8])
        rows_t.append(t)
        rows_q.append(x[0:4].copy())
        rows_qd.append(x[4:8].copy())
        rows_p.append(f.p.copy())
        rows_th.append(f.theta)
        rows_tau.append(last_tau.copy())
        rows_lam.append(forces.copy())
        rows_mode.append(rows_mode[-1] if rows_mode else Mode.ANTE.value)

    for t_sw, mode_name in controller.mode_switches:
        events.append(Event(t_sw, "mode-switch", detail=mode_name))
    events.sort(key=lambda e: e.t)
    return SimResult(t=np.array(rows_t), q=np.array(rows_q), qd=np.array(rows_qd),
                     p=np.array(rows_p), theta=np.array(rows_th), tau=np.array(rows_tau),
                     lam=np.array(rows_lam), mode=rows_mode, events=events,
                     diagnostics=controller.diagnostics, variant=scenario.control.variant,
                     status=status)


def run(scenario: Scenario) -> SimResult:
    if scenario.backend == "rigid":
        return run_rigid(scenario)
    return run_flexible(scenario)


# --- variant comparison ----------------------------------------------------------


def torque_step_metric(result: SimResult, window: float = 0.05) -> float:
    """Largest sample-to-sample torque jump within +-window of any impact event."""
    impact_times = [e.t for e in result.impact_events()]
    if not impact_times:
        return 0.0
    worst = 0.0
    t = result.t
    for k in range(len(t) - 1):
        if any(abs(t[k] - ti) <= window for ti in impact_times):
            step = float(np.max(np.abs(result.tau[k + 1] - result.tau[k])))
            worst = max(worst, step)
    return worst


def post_switch_velocity_error(result: SimResult) -> float:
    """Velocity-tracking error at the first contact-phase control sample."""
    for d in result.diagnostics:
        if d.mode == Mode.POST.value:
            return d.vel_error_lin
    return float("nan")


def steady_state_velocity_error(result: SimResult, tail: float = 0.2) -> float:
    post = [d.vel_error_lin for d in result.diagnostics if d.mode == Mode.POST.value]
    if not post:
        return float("nan")
    n_tail = max(1, int(len(post) * tail))
    return float(np.mean(post[-n_tail:]))


def high_frequency_power_fraction(result: SimResult, cutoff_hz: float = 50.0) -> float:
    """Fraction of commanded-torque power above the cutoff during the contact
    transient (first impact event to shortly after the contact phase starts)."""
    impacts = result.impact_events()
    if not impacts:
        return float("nan")
    t0 = impacts[0].t
    post_times = result.mode_switch_times(Mode.POST.value)
    t1 = (post_times[0] + 0.1) if post_times else result.t[-1]
    mask = (result.t >= t0) & (result.t <= t1)
    if np.sum(mask) < 8:
        return float("nan")
    dt = float(result.t[1] - result.t[0])
    freqs = np.fft.rfftfreq(int(np.sum(mask)), dt)
    total = 0.0
    high = 0.0
    for j in range(3):
        sig = result.tau[mask, j]
        spec = np.abs(np.fft.rfft(sig - np.mean(sig))) ** 2
        total += float(np.sum(spec[freqs > 0.0]))
        high += float(np.sum(spec[freqs > cutoff_hz]))
    return high / total if total > 0 else 0.0


@dataclass
class VariantMetrics:
    variant: str
    torque_step: float
    post_switch_velocity_error: float
    steady_state_velocity_error: float
    high_frequency_power: float
    n_impacts: int
    status: str


@dataclass
class ComparisonReport:
    metrics: dict[str, VariantMetrics]
    results: dict[str, SimResult]


def compare_variants(scenario: Scenario) -> ComparisonReport:
    """Run the proposed controller and both baselines on the identical scenario."""
    metrics: dict[str, VariantMetrics] = {}
    results: dict[str, SimResult] = {}
    for variant in VARIANTS:
        sc = replace(scenario, control=replace(scenario.control, variant=variant))
        res = run(sc)
        results[variant] = res
        metrics[variant] = VariantMetrics(
            variant=variant,
            torque_step=torque_step_metric(res),
            post_switch_velocity_error=post_switch_velocity_error(res),
            steady_state_velocity_error=steady_state_velocity_error(res),
            high_frequency_power=high_frequency_power_fraction(res),
            n_impacts=len(res.impact_events()),
            status=res.status)
    return ComparisonReport(metrics=metrics, results=results)


# --- serialization ------------------------------------------------------------------

RESULT_COLUMNS = ["t", "q1", "q2", "q3", "q4", "qd1", "qd2", "qd3", "qd4",
                  "x_e", "y_e", "theta", "tau1", "tau2", "tau3", "lam1", "lam2", "mode"]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_result_csv(result: SimResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for k in range(result.t.size):
            row = [_fmt(result.t[k])]
            row += [_fmt(v) for v in result.q[k]]
            row += [_fmt(v) for v in result.qd[k]]
            row += [_fmt(result.p[k, 0]), _fmt(result.p[k, 1]), _fmt(result.theta[k])]
            row += [_fmt(v) for v in result.tau[k]]
            row += [_fmt(v) for v in result.lam[k]]
            row.append(result.mode[k])
            writer.writerow(row)


def write_events_csv(result: SimResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "event-type"])
        for e in result.events:
            writer.writerow([_fmt(e.t), e.kind])


def write_diagnostics_csv(result: SimResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mode", "tau1", "tau2", "tau3", "qp_status", "kkt_residual",
                         "active_set", "task_err_lin", "task_err_ang", "vel_err_lin",
                         "p_int_x", "p_int_y", "theta_int"])
        for d in result.diagnostics:
            row = [_fmt(d.t), d.mode, _fmt(d.tau[0]), _fmt(d.tau[1]), _fmt(d.tau[2]),
                   d.qp_status, _fmt(d.kkt_residual),
                   ";".join(str(i) for i in d.active_set),
                   _fmt(d.task_error_lin), _fmt(d.task_error_ang), _fmt(d.vel_error_lin)]
            if d.p_d_int is None:
                row += ["", "", ""]
            else:
                row += [_fmt(d.p_d_int[0]), _fmt(d.p_d_int[1]), _fmt(d.theta_d_int)]
            writer.writerow(row)
