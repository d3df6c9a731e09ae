"""Impulsive impact resolution and sustained-contact force computation.

Impacts are inelastic: the post-impact normal velocity of every active
contact is exactly zero. Sustained contact enforces zero normal acceleration
and produces the force needed to hold it, with detachment signalled through
negative normal forces.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

_COND_LIMIT = 1e12

# Actuation matrix: three actuated arm joints, unactuated plank.
S_ACT = np.vstack([np.eye(3), np.zeros((1, 3))])


class DegenerateContactError(ValueError):
    """Contact geometry is rank deficient; the impulse problem has no unique solution."""


class ContactMode(Enum):
    FREE = frozenset()
    CONTACT1 = frozenset({0})
    CONTACT2 = frozenset({1})
    BOTH = frozenset({0, 1})

    @property
    def active(self) -> tuple[int, ...]:
        return tuple(sorted(self.value))

    @staticmethod
    def from_active(indices) -> "ContactMode":
        key = frozenset(int(i) for i in indices)
        for mode in ContactMode:
            if mode.value == key:
                return mode
        raise ValueError(f"no contact mode for active set {sorted(key)}")


@dataclass(frozen=True)
class ImpactOutcome:
    """Post-impact generalized velocity and the contact impulse that produced it."""

    qdot_post: np.ndarray
    impulse: np.ndarray


def _solve_spd(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve A X = B for symmetric positive definite A via Cholesky."""
    L = np.linalg.cholesky(A)
    Y = np.linalg.solve(L, B)
    return np.linalg.solve(L.T, Y)


def impact_map(M: np.ndarray, J_act: np.ndarray, qdot_minus: np.ndarray) -> ImpactOutcome:
    """Inelastic simultaneous impact map for the active contact rows J_act.

    qdot_post = (I - M^-1 J^T (J M^-1 J^T)^-1 J) qdot_minus, with the impulse
    satisfying the momentum balance M (qdot_post - qdot_minus) = J^T impulse.
    """
    M = np.asarray(M, dtype=float)
    J_act = np.atleast_2d(np.asarray(J_act, dtype=float))
    qdot_minus = np.asarray(qdot_minus, dtype=float)
    try:
        Minv_JT = _solve_spd(M, J_act.T)
    except np.linalg.LinAlgError as exc:
        raise DegenerateContactError("mass matrix is not positive definite") from exc
    delassus = J_act @ Minv_JT
    if np.linalg.cond(delassus) > _COND_LIMIT:
        raise DegenerateContactError("Delassus operator is ill conditioned; contact rows are dependent")
    impulse = np.linalg.solve(delassus, -J_act @ qdot_minus)
    qdot_post = qdot_minus + Minv_JT @ impulse
    return ImpactOutcome(qdot_post=qdot_post, impulse=impulse)


def constrained_dynamics(M: np.ndarray, h: np.ndarray, tau: np.ndarray,
                         J_act: np.ndarray | None, Jdot_act: np.ndarray | None,
                         qdot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Accelerations and contact forces under bilateral closure of the active contacts.

    Solves M qdd + h = S tau + J^T lam together with J qdd + Jdot qdot = 0.
    With no active contacts this reduces to the free dynamics.
    """
    M = np.asarray(M, dtype=float)
    h = np.asarray(h, dtype=float)
    tau = np.asarray(tau, dtype=float)
    force = S_ACT @ tau - h
    if J_act is None or np.size(J_act) == 0:
        return _solve_spd(M, force), np.zeros(0)
    J_act = np.atleast_2d(np.asarray(J_act, dtype=float))
    Jdot_act = np.atleast_2d(np.asarray(Jdot_act, dtype=float))
    c = J_act.shape[0]
    n = M.shape[0]
    if np.linalg.matrix_rank(J_act, tol=1e-10) < c:
        raise DegenerateContactError("active contact Jacobian is rank deficient")
    kkt = np.zeros((n + c, n + c))
    kkt[:n, :n] = M
    kkt[:n, n:] = -J_act.T
    kkt[n:, :n] = J_act
    rhs = np.concatenate([force, -Jdot_act @ np.asarray(qdot, dtype=float)])
    sol = np.linalg.solve(kkt, rhs)
    return sol[:n], sol[n:]


def detachment_check(lam: np.ndarray) -> tuple[int, ...]:
    """Indices of active contacts whose normal force turned negative."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    return tuple(int(i) for i in np.flatnonzero(lam < 0.0))
