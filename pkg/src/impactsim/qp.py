"""Dense convex QP solver for the per-step controller problems.

Primal active-set method. Equality constraints are eliminated through a
null-space basis, a phase-1 subproblem manufactures a feasible start for the
inequalities, and the final iterate is polished by a direct solve of the KKT
system at the optimal active set. Deterministic: ties between blocking
constraints are broken toward the lowest row index.

Problem form:  min 0.5 x^T H x + g^T x
               s.t. A_eq x = b_eq,  A_in x <= b_in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_REG = 1e-10        # Hessian regularization used during iteration
_FEAS_TOL = 1e-9
_MULT_TOL = 1e-9
_STEP_TOL = 1e-12


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        n = self.g.size
        if self.H.shape != (n, n):
            raise ValueError("Hessian shape does not match the gradient")
        if np.linalg.norm(self.H - self.H.T, np.inf) > 1e-9 * (1 + np.linalg.norm(self.H, np.inf)):
            raise ValueError("Hessian must be symmetric")
        self.H = 0.5 * (self.H + self.H.T)
        for mat, vec, mname in ((self.A_eq, self.b_eq, "equality"), (self.A_in, self.b_in, "inequality")):
            if (mat is None) != (vec is None):
                raise ValueError(f"{mname} constraints need both a matrix and a vector")
        if self.A_eq is not None:
            self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
            self.b_eq = np.atleast_1d(np.asarray(self.b_eq, dtype=float))
            if self.A_eq.shape != (self.b_eq.size, n):
                raise ValueError("equality constraint dimensions are inconsistent")
        if self.A_in is not None:
            self.A_in = np.atleast_2d(np.asarray(self.A_in, dtype=float))
            self.b_in = np.atleast_1d(np.asarray(self.b_in, dtype=float))
            if self.A_in.shape != (self.b_in.size, n):
                raise ValueError("inequality constraint dimensions are inconsistent")

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def n_eq(self) -> int:
        return 0 if self.A_eq is None else self.A_eq.shape[0]

    @property
    def n_in(self) -> int:
        return 0 if self.A_in is None else self.A_in.shape[0]


@dataclass
class QpSolution:
    x: np.ndarray
    eq_multipliers: np.ndarray
    in_multipliers: np.ndarray
    active_set: tuple[int, ...]
    status: str                              # optimal | infeasible | max-iterations
    iterations: int = 0
    working_set_history: tuple[tuple[int, ...], ...] = ()


def _null_space(A: np.ndarray, n: int) -> tuple[np.ndarray, int]:
    """Orthonormal null-space basis of A and its row rank."""
    if A is None or A.size == 0:
        return np.eye(n), 0
    u, s, vt = np.linalg.svd(A)
    tol = max(A.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    return vt[rank:].T.copy(), rank


def _eqp_step(P: np.ndarray, g_cur: np.ndarray, C_w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Newton step and multipliers for the working-set equality QP."""
    nz = g_cur.size
    m = C_w.shape[0]
    if m == 0:
        return np.linalg.solve(P, -g_cur), np.zeros(0)
    kkt = np.zeros((nz + m, nz + m))
    kkt[:nz, :nz] = P
    kkt[:nz, nz:] = C_w.T
    kkt[nz:, :nz] = C_w
    rhs = np.concatenate([-g_cur, np.zeros(m)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:nz], sol[nz:]


def _active_set_core(P: np.ndarray, q: np.ndarray, C: np.ndarray, d: np.ndarray,
                     y: np.ndarray, working: list[int], max_iter: int):
    """Primal active-set iteration from a feasible point.

    Returns (y, working, multipliers, history, status, iterations).
    """
    history = [tuple(working)]
    it = 0

    def drop_most_negative(mu: np.ndarray) -> None:
        # ties resolve to the lowest row index
        worst = np.min(mu)
        candidates = [working[k] for k in range(len(working)) if mu[k] <= worst + 1e-14]
        working.remove(min(candidates))
        history.append(tuple(working))

    while it < max_iter:
        it += 1
        g_cur = P @ y + q
        C_w = C[working] if working else np.zeros((0, y.size))
        p, mu = _eqp_step(P, g_cur, C_w)
        if np.linalg.norm(p, np.inf) <= _STEP_TOL * (1.0 + np.linalg.norm(y, np.inf)):
            if mu.size == 0 or np.min(mu) >= -_MULT_TOL:
                return y, working, mu, history, "optimal", it
            drop_most_negative(mu)
            continue
        alpha = 1.0
        blocker = -1
        if C.shape[0]:
            in_working = np.zeros(C.shape[0], dtype=bool)
            if working:
                in_working[working] = True
            cp = C @ p
            slack = d - C @ y
            for i in range(C.shape[0]):
                if in_working[i] or cp[i] <= 1e-13:
                    continue
                a_i = slack[i] / cp[i]
                if a_i < alpha - 1e-14:
                    alpha = max(a_i, 0.0)
                    blocker = i
                elif blocker >= 0 and abs(a_i - alpha) <= 1e-14 and i < blocker:
                    blocker = i
        y = y + alpha * p
        if blocker >= 0:
            working.append(blocker)
            history.append(tuple(working))
            continue
        # full unblocked Newton step: y is now the working-set optimum and the
        # EQP multipliers are exact there, so test them without re-solving
        if mu.size == 0 or np.min(mu) >= -_MULT_TOL:
            return y, working, mu, history, "optimal", it
        drop_most_negative(mu)
    return y, working, np.zeros(len(working)), history, "max-iterations", it


def _polish(problem: QpProblem, x: np.ndarray, active: list[int]):
    """Direct KKT solve at the final active set using the unregularized Hessian."""
    n = problem.n
    blocks = [problem.H]
    rows = [problem.A_eq if problem.n_eq else np.zeros((0, n))]
    if active:
        rows.append(problem.A_in[active])
    A_all = np.vstack(rows)
    m = A_all.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = problem.H
    kkt[:n, n:] = A_all.T
    kkt[n:, :n] = A_all
    b_parts = [problem.b_eq if problem.n_eq else np.zeros(0)]
    if active:
        b_parts.append(problem.b_in[active])
    rhs = np.concatenate([-problem.g, *b_parts])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    x_pol = sol[:n]
    nu = sol[n:n + problem.n_eq]
    mu_act = sol[n + problem.n_eq:]
    return x_pol, nu, mu_act


def solve(problem: QpProblem, warm_start: tuple[int, ...] | None = None) -> QpSolution:
    """Solve the QP; `warm_start` is a candidate active set from a previous solve."""
    n = problem.n
    H_reg = problem.H + _REG * np.eye(n)
    max_iter = 10 * (n + problem.n_in)

    # eliminate equalities
    if problem.n_eq:
        x_p, *_ = np.linalg.lstsq(problem.A_eq, problem.b_eq, rcond=None)
        if np.linalg.norm(problem.A_eq @ x_p - problem.b_eq, np.inf) > _FEAS_TOL * (
                1.0 + np.linalg.norm(problem.b_eq, np.inf)):
            return QpSolution(x=x_p, eq_multipliers=np.zeros(problem.n_eq),
                              in_multipliers=np.zeros(problem.n_in), active_set=(),
                              status="infeasible")
        Z, _ = _null_space(problem.A_eq, n)
    else:
        x_p = np.zeros(n)
        Z = np.eye(n)
    nz = Z.shape[1]

    if problem.n_in:
        C = problem.A_in @ Z
        d = problem.b_in - problem.A_in @ x_p
    else:
        C = np.zeros((0, nz))
        d = np.zeros(0)

    if nz == 0:
        if problem.n_in and np.max(problem.A_in @ x_p - problem.b_in) > _FEAS_TOL:
            return QpSolution(x=x_p, eq_multipliers=np.zeros(problem.n_eq),
                              in_multipliers=np.zeros(problem.n_in), active_set=(),
                              status="infeasible")
        _, nu, _ = _polish(problem, x_p, [])
        return QpSolution(x=x_p, eq_multipliers=nu, in_multipliers=np.zeros(problem.n_in),
                          active_set=(), status="optimal", iterations=0,
                          working_set_history=((),))

    P = Z.T @ H_reg @ Z
    q = Z.T @ (H_reg @ x_p + problem.g)

    y0 = None
    working: list[int] = []
    total_iters = 0
    history: list[tuple[int, ...]] = []

    if warm_start is not None and problem.n_in:
        cand = sorted(i for i in set(warm_start) if 0 <= i < problem.n_in)
        if cand:
            # min-norm point with the warm rows active
            y_try, *_ = np.linalg.lstsq(C[cand], d[cand], rcond=None)
        else:
            y_try = np.zeros(nz)
        if np.max(C @ y_try - d, initial=0.0) <= _FEAS_TOL:
            y0 = y_try
            working = [i for i in cand if abs(C[i] @ y0 - d[i]) <= _FEAS_TOL]
            # keep only rows that stay independent
            kept: list[int] = []
            for i in working:
                trial = C[kept + [i]]
                if np.linalg.matrix_rank(trial, tol=1e-10) == len(kept) + 1:
                    kept.append(i)
            working = kept

    if y0 is None:
        if problem.n_in == 0 or np.max(-d, initial=0.0) <= _FEAS_TOL:
            y0 = np.zeros(nz)
            working = []
        else:
            # phase 1: minimize the worst violation t with a tiny pull toward y = 0
            m = problem.n_in
            P1 = np.zeros((nz + 1, nz + 1))
            P1[:nz, :nz] = 1e-8 * np.eye(nz)
            P1[nz, nz] = 1.0
            q1 = np.zeros(nz + 1)
            q1[nz] = 1.0
            C1 = np.zeros((m + 1, nz + 1))
            C1[:m, :nz] = C
            C1[:m, nz] = -1.0
            C1[m, nz] = -1.0
            d1 = np.concatenate([d, [0.0]])
            t0 = max(0.0, float(np.max(-d)))
            z0 = np.zeros(nz + 1)
            z0[nz] = t0
            w0 = [int(np.argmax(-d))] if t0 > 0 else [m]
            z_opt, _, _, h1, status1, it1 = _active_set_core(
                P1, q1, C1, d1, z0, w0, 10 * (nz + 1 + m + 1))
            total_iters += it1
            if status1 != "optimal" or z_opt[nz] > 1e-8:
                return QpSolution(x=x_p + Z @ z_opt[:nz], eq_multipliers=np.zeros(problem.n_eq),
                                  in_multipliers=np.zeros(problem.n_in), active_set=(),
                                  status="infeasible", iterations=total_iters)
            y0 = z_opt[:nz]
            active0 = [i for i in range(problem.n_in) if C[i] @ y0 - d[i] >= -1e-12]
            kept = []
            for i in active0:
                trial = C[kept + [i]]
                if np.linalg.matrix_rank(trial, tol=1e-10) == len(kept) + 1:
                    kept.append(i)
            working = kept

    y, working, mu_w, hist2, status, it2 = _active_set_core(P, q, C, d, y0, working, max_iter)
    total_iters += it2
    history.extend(hist2)
    x = x_p + Z @ y

    if status != "optimal":
        return QpSolution(x=x, eq_multipliers=np.zeros(problem.n_eq),
                          in_multipliers=np.zeros(problem.n_in),
                          active_set=tuple(sorted(working)), status=status,
                          iterations=total_iters, working_set_history=tuple(history))

    active = sorted(working)
    x_pol, nu, mu_act = _polish(problem, x, active)
    ok = True
    if problem.n_in:
        mu_full = np.zeros(problem.n_in)
        for k, i in enumerate(active):
            mu_full[i] = mu_act[k]
        if np.max(problem.A_in @ x_pol - problem.b_in, initial=0.0) > _FEAS_TOL:
            ok = False
        if mu_act.size and np.min(mu_act) < -_MULT_TOL:
            ok = False
    else:
        mu_full = np.zeros(0)
    if ok:
        x = x_pol
    else:
        # fall back to the iterate; recover multipliers by least squares on stationarity
        mu_full = np.zeros(problem.n_in)
        for k, i in enumerate(active):
            mu_full[i] = max(0.0, mu_w[working.index(i)] if i in working else 0.0)
        if problem.n_eq:
            resid = problem.H @ x + problem.g + (problem.A_in.T @ mu_full if problem.n_in else 0.0)
            nu, *_ = np.linalg.lstsq(problem.A_eq.T, -resid, rcond=None)
        else:
            nu = np.zeros(0)
    mu_full = np.maximum(mu_full, 0.0)
    return QpSolution(x=x, eq_multipliers=nu, in_multipliers=mu_full,
                      active_set=tuple(active), status="optimal",
                      iterations=total_iters, working_set_history=tuple(history))


def kkt_residual(problem: QpProblem, solution: QpSolution) -> float:
    """Max-norm over stationarity, feasibility, dual feasibility, and complementarity."""
    x = solution.x
    stat = problem.H @ x + problem.g
    if problem.n_eq:
        stat = stat + problem.A_eq.T @ solution.eq_multipliers
    if problem.n_in:
        stat = stat + problem.A_in.T @ solution.in_multipliers
    parts = [np.linalg.norm(stat, np.inf)]
    if problem.n_eq:
        parts.append(np.linalg.norm(problem.A_eq @ x - problem.b_eq, np.inf))
    if problem.n_in:
        slack = problem.A_in @ x - problem.b_in
        parts.append(max(0.0, float(np.max(slack))))
        parts.append(max(0.0, float(np.max(-solution.in_multipliers))))
        parts.append(float(np.max(np.abs(solution.in_multipliers * slack))))
    return float(max(parts))
