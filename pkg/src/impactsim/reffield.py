"""Time-invariant reference velocity fields around the nominal impact line.

The approach-phase field drives the end effector onto the impact line at a
prescribed velocity; the contact-phase field blends an impact-mapped copy of
the approach field with a goal-seeking spring field. Both are extended along
the line normal so a valid reference exists on either side of the line.

Sign convention: the line normal stored in the geometry points toward the
approach side, and the signed distance d is negative on the approach side,
zero on the line, and positive past it (increasing along the direction of
travel). The extension of a field assigns to any point the field value at its
perpendicular projection onto the line.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contact import impact_map
from .dynamics import (
    RobotModel,
    SingularityError,
    WorkspaceError,
    contact_jacobian,
    inverse_kinematics,
    inverse_velocity_kinematics,
    jacobians,
    mass_matrix,
)

_FD_STEP = 1e-6  # m, central-difference step for field feedforwards


class DegenerateFieldError(ValueError):
    """The approach field direction vanished; the target geometry is degenerate."""


class FieldConstructionError(ValueError):
    """Building the contact-phase interpolant failed at a specific sample."""


@dataclass
class ImpactLineGeometry:
    """Nominal impact line: a point on it, unit tangent, and unit normal.

    `sign` flips the distance convention when the stored normal points toward
    the far side instead of the approach side.
    """

    point: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    sign: float = 1.0

    def __post_init__(self) -> None:
        self.point = np.asarray(self.point, dtype=float)
        self.tangent = np.asarray(self.tangent, dtype=float)
        self.normal = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(self.tangent) - 1.0) > 1e-9 or abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise ValueError("tangent and normal must be unit vectors")
        if abs(self.tangent @ self.normal) > 1e-9:
            raise ValueError("tangent must be perpendicular to the normal")
        if self.sign not in (1.0, -1.0):
            raise ValueError("sign must be +1 or -1")

    @property
    def approach_normal(self) -> np.ndarray:
        """Unit normal pointing toward the approach side."""
        return self.sign * self.normal


@dataclass
class AnteFieldParams:
    """Approach-phase field: aim point, impact velocity, and shaping gains."""

    p_imp: np.ndarray
    v_imp: np.ndarray
    alpha: float
    k_theta: float
    q4_est: float
    q4dot_est: float

    def __post_init__(self) -> None:
        self.p_imp = np.asarray(self.p_imp, dtype=float)
        self.v_imp = np.asarray(self.v_imp, dtype=float)
        if np.linalg.norm(self.v_imp) <= 0.0:
            raise ValueError("v_imp must be nonzero")
        if self.alpha < 0.0:
            raise ValueError("alpha must be nonnegative")
        if self.k_theta <= 0.0:
            raise ValueError("k_theta must be strictly positive")


@dataclass
class PostFieldParams:
    """Contact-phase field: goal point, spring gain, blend width, sampling grid."""

    p_f: np.ndarray
    k_f: float
    delta: float
    n_samples: int
    rbf_eps: float
    s_lo: float
    s_hi: float

    def __post_init__(self) -> None:
        self.p_f = np.asarray(self.p_f, dtype=float)
        if self.k_f <= 0.0:
            raise ValueError("k_f must be strictly positive")
        if self.delta <= 0.0:
            raise ValueError("delta must be strictly positive")
        if self.n_samples < 2:
            raise ValueError("at least two samples are required")
        if self.rbf_eps <= 0.0:
            raise ValueError("rbf_eps must be strictly positive")
        if self.s_hi <= self.s_lo:
            raise ValueError("sampling segment must have positive length")


@dataclass
class PostImpactInterpolant:
    """Gaussian RBF interpolant of impact-mapped velocities along the line.

    Interpolating (not regressing): it reproduces the sampled values exactly
    at the nodes. Also carries the per-sample joint data used to build it.
    """

    s_nodes: np.ndarray
    values: np.ndarray          # (N, 2) sampled post-impact EE velocities
    weights: np.ndarray         # (N, 2) RBF weights per component
    eps: float
    q_nom: np.ndarray           # (N, 4)
    qdot_minus: np.ndarray      # (N, 4)
    qdot_plus: np.ndarray       # (N, 4)

    def evaluate(self, s: float) -> np.ndarray:
        s = min(max(float(s), self.s_nodes[0]), self.s_nodes[-1])
        k = np.exp(-((self.eps * (s - self.s_nodes)) ** 2))
        return k @ self.weights


@dataclass
class FieldValidationReport:
    """Outcome of the away-from-line and goal-placement checks."""

    band_ok: bool
    band_violations: list
    goal_ok: bool
    goal_distance: float

    @property
    def ok(self) -> bool:
        return self.band_ok and self.goal_ok


def signed_distance(geom: ImpactLineGeometry, p: np.ndarray) -> float:
    """Signed distance to the line: negative before it, positive past it."""
    n = geom.approach_normal
    return float(n @ (geom.point - np.asarray(p, dtype=float)))


def line_projection(geom: ImpactLineGeometry, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p + signed_distance(geom, p) * geom.approach_normal


def arc_coordinate(geom: ImpactLineGeometry, p: np.ndarray) -> float:
    return float(geom.tangent @ (np.asarray(p, dtype=float) - geom.point))


def target_point(params: AnteFieldParams, p: np.ndarray) -> np.ndarray:
    """Point at the same distance from p_imp as p, on the ray opposite v_imp."""
    p = np.asarray(p, dtype=float)
    dist = np.linalg.norm(params.p_imp - p)
    return params.p_imp - params.v_imp * dist / np.linalg.norm(params.v_imp)


def ante_linear_base(params: AnteFieldParams, p: np.ndarray) -> np.ndarray:
    """Approach field before the line; its norm equals ||v_imp|| everywhere."""
    p = np.asarray(p, dtype=float)
    direction = params.v_imp + params.alpha * (target_point(params, p) - p)
    norm = np.linalg.norm(direction)
    if norm < 1e-12:
        raise DegenerateFieldError("approach field direction vanished at this point")
    return direction / norm * np.linalg.norm(params.v_imp)


def ante_linear_extended(geom: ImpactLineGeometry, params: AnteFieldParams,
                         p: np.ndarray) -> np.ndarray:
    """Approach field, held constant along normal rays past the line."""
    p = np.asarray(p, dtype=float)
    d = signed_distance(geom, p)
    if d <= 0.0:
        return ante_linear_base(params, p)
    return ante_linear_base(params, line_projection(geom, p))


def ante_angular(params: AnteFieldParams, theta: float) -> float:
    """Angular rate aligning the end effector with the estimated plank angle."""
    return params.k_theta * (params.q4_est - float(theta))


def ante_angular_accel(params: AnteFieldParams, theta: float) -> float:
    """Directional derivative of the angular field along itself."""
    return -params.k_theta * ante_angular(params, theta)


def _directional_accel(f, p: np.ndarray) -> np.ndarray:
    """(df/dp) f(p) by central differences with a fixed metric step."""
    v = f(p)
    speed = np.linalg.norm(v)
    if speed < 1e-12:
        return np.zeros(2)
    vhat = v / speed
    plus = f(p + _FD_STEP * vhat)
    minus = f(p - _FD_STEP * vhat)
    return (plus - minus) / (2.0 * _FD_STEP) * speed


def ante_accel_feedforward(geom: ImpactLineGeometry, params: AnteFieldParams,
                           p: np.ndarray) -> np.ndarray:
    """Feedforward acceleration of the extended approach field."""
    return _directional_accel(lambda x: ante_linear_extended(geom, params, x),
                              np.asarray(p, dtype=float))


def post_goal_field(params: PostFieldParams, p: np.ndarray) -> np.ndarray:
    """Linear spring field toward the goal position."""
    return params.k_f * (params.p_f - np.asarray(p, dtype=float))


def build_post_impact_interpolant(model: RobotModel, geom: ImpactLineGeometry,
                                  ante: AnteFieldParams,
                                  post: PostFieldParams) -> PostImpactInterpolant:
    """Sample the line, push each approach velocity through the impact map, fit an RBF.

    Each sample assumes the end effector flush on the line (theta equal to the
    estimated plank angle) and maps the nominal ante-impact joint velocity
    through the two-contact impact map before projecting back to task space.
    """
    s_nodes = np.linspace(post.s_lo, post.s_hi, post.n_samples)
    values = np.zeros((post.n_samples, 2))
    q_nom = np.zeros((post.n_samples, 4))
    qd_minus = np.zeros((post.n_samples, 4))
    qd_plus = np.zeros((post.n_samples, 4))
    for i, s in enumerate(s_nodes):
        p_i = geom.point + s * geom.tangent
        try:
            q_rob = inverse_kinematics(model, p_i, ante.q4_est)
        except (WorkspaceError, SingularityError) as exc:
            raise FieldConstructionError(f"sample {i} at s={s:.4f}: {exc}") from exc
        q = np.append(q_rob, ante.q4_est)
        v_lin = ante_linear_extended(geom, ante, p_i)
        v_ang = ante_angular(ante, ante.q4_est)
        try:
            qd_rob = inverse_velocity_kinematics(model, q, v_lin, v_ang)
        except SingularityError as exc:
            raise FieldConstructionError(f"sample {i} at s={s:.4f}: {exc}") from exc
        qdm = np.append(qd_rob, ante.q4dot_est)
        outcome = impact_map(mass_matrix(model, q), contact_jacobian(model, q), qdm)
        J_p, _ = jacobians(model, q)
        q_nom[i] = q
        qd_minus[i] = qdm
        qd_plus[i] = outcome.qdot_post
        values[i] = J_p @ outcome.qdot_post
    diff = s_nodes[:, None] - s_nodes[None, :]
    A = np.exp(-((post.rbf_eps * diff) ** 2))
    weights = np.linalg.solve(A, values)
    return PostImpactInterpolant(s_nodes=s_nodes, values=values, weights=weights,
                                 eps=post.rbf_eps, q_nom=q_nom,
                                 qdot_minus=qd_minus, qdot_plus=qd_plus)


def post_impact_extended(geom: ImpactLineGeometry, interp: PostImpactInterpolant,
                         p: np.ndarray) -> np.ndarray:
    """Impact-coupled field, constant along normal rays; clamped to the sampled segment."""
    return interp.evaluate(arc_coordinate(geom, p))


def post_blended(geom: ImpactLineGeometry, params: PostFieldParams,
                 interp: PostImpactInterpolant, p: np.ndarray) -> np.ndarray:
    """Convex combination of the impact-coupled and goal fields across the blend band.

    Impact-coupled on the line and before it, pure goal field once the point
    is more than the band width past the line; continuous at both edges.
    """
    p = np.asarray(p, dtype=float)
    d = signed_distance(geom, p)
    if d >= params.delta:
        return post_goal_field(params, p)
    coupled = post_impact_extended(geom, interp, p)
    if d <= 0.0:
        return coupled
    w = d / params.delta
    return (1.0 - w) * coupled + w * post_goal_field(params, p)


def post_accel_feedforward(geom: ImpactLineGeometry, params: PostFieldParams,
                           interp: PostImpactInterpolant, p: np.ndarray) -> np.ndarray:
    """Feedforward acceleration of the blended contact-phase field."""
    return _directional_accel(lambda x: post_blended(geom, params, interp, x),
                              np.asarray(p, dtype=float))


def validate_post_field(geom: ImpactLineGeometry, params: PostFieldParams,
                        interp: PostImpactInterpolant, n_tangent: int = 25,
                        n_normal: int = 9) -> FieldValidationReport:
    """Check that the blended field leaves the line everywhere in the band and
    that the goal sits beyond the band."""
    n = geom.approach_normal
    violations = []
    for s in np.linspace(interp.s_nodes[0], interp.s_nodes[-1], n_tangent):
        for d in np.linspace(0.0, params.delta, n_normal):
            p = geom.point + s * geom.tangent - d * n
            v = post_blended(geom, params, interp, p)
            if n @ v >= 0.0:
                violations.append((float(p[0]), float(p[1]), float(n @ v)))
    d_pf = signed_distance(geom, params.p_f)
    return FieldValidationReport(band_ok=not violations, band_violations=violations,
                                 goal_ok=d_pf > params.delta, goal_distance=d_pf)


@dataclass
class ReferenceFields:
    """Bundle of the approach and contact-phase references used by the controller."""

    geometry: ImpactLineGeometry
    ante: AnteFieldParams
    post: PostFieldParams
    interpolant: PostImpactInterpolant

    def __post_init__(self) -> None:
        if self.geometry.approach_normal @ self.ante.v_imp >= 0.0:
            raise ValueError("v_imp must point toward the impact line")

    @staticmethod
    def build(model: RobotModel, geom: ImpactLineGeometry, ante: AnteFieldParams,
              post: PostFieldParams) -> "ReferenceFields":
        interp = build_post_impact_interpolant(model, geom, ante, post)
        return ReferenceFields(geometry=geom, ante=ante, post=post, interpolant=interp)

    # approach phase
    def ante_velocity(self, p: np.ndarray) -> np.ndarray:
        return ante_linear_extended(self.geometry, self.ante, p)

    def ante_accel(self, p: np.ndarray) -> np.ndarray:
        return ante_accel_feedforward(self.geometry, self.ante, p)

    def ante_angular_rate(self, theta: float) -> float:
        return ante_angular(self.ante, theta)

    def ante_angular_accel(self, theta: float) -> float:
        return ante_angular_accel(self.ante, theta)

    # contact phase
    def post_velocity(self, p: np.ndarray, impact_coupled: bool = True) -> np.ndarray:
        if impact_coupled:
            return post_blended(self.geometry, self.post, self.interpolant, p)
        return post_goal_field(self.post, p)

    def post_accel(self, p: np.ndarray, impact_coupled: bool = True) -> np.ndarray:
        if impact_coupled:
            return post_accel_feedforward(self.geometry, self.post, self.interpolant, p)
        return _directional_accel(lambda x: post_goal_field(self.post, x),
                                  np.asarray(p, dtype=float))

    def validate(self) -> FieldValidationReport:
        return validate_post_field(self.geometry, self.post, self.interpolant)


def field_grid_rows(fields: ReferenceFields, x_range: tuple[float, float],
                    y_range: tuple[float, float], nx: int = 21, ny: int = 21) -> list:
    """Quiver-grid rows (x, y, vx, vy, region) for both fields over a box."""
    rows = []
    geom = fields.geometry
    for x in np.linspace(x_range[0], x_range[1], nx):
        for y in np.linspace(y_range[0], y_range[1], ny):
            p = np.array([x, y])
            d = signed_distance(geom, p)
            v = fields.ante_velocity(p)
            region = "ante-base" if d <= 0.0 else "ante-extended"
            rows.append((x, y, float(v[0]), float(v[1]), region))
            v = fields.post_velocity(p)
            if d <= 0.0:
                region = "post-impact"
            elif d < fields.post.delta:
                region = "post-blend"
            else:
                region = "post-goal"
            rows.append((x, y, float(v[0]), float(v[1]), region))
    return rows
