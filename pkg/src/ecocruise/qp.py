"""Dense convex quadratic programming by a primal active-set method.

Solves

    min  0.5 x'Hx + c'x
    s.t. A_eq x  = b_eq
         A_in x <= b_in

for positive semidefinite H, starting from a caller-supplied feasible point.
Each iteration solves the equality-constrained subproblem for the current
working set through the bordered KKT system, steps to the nearest blocking
inequality, and drops working constraints with negative multipliers.  The
solve is deterministic, warm-startable via an initial working set, and
certifies its result with the stationarity residual of the original data.

Columns are equilibrated internally (torques, velocities and slack variables
live on very different scales here); multipliers are invariant under column
scaling so certification happens in original units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class QpError(RuntimeError):
    """Solver could not produce a certified optimum."""


@dataclass
class QpResult:
    x: np.ndarray
    eq_mult: np.ndarray
    in_mult: np.ndarray          # one entry per inequality row, 0 off the working set
    working: list[int]
    iterations: int
    objective: float
    stationarity: float          # ||Hx + c + A_eq'(eq_mult) + A_in'(in_mult)||_2


def _kkt_solve(h_mat, g_mat, grad):
    """Solve the bordered system [[H, G'], [G, 0]] [p; mu] = [-grad; 0].

    Two rounds of iterative refinement; least-squares fallback keeps singular
    but consistent systems (semidefinite reduced Hessians) deterministic.
    """
    n = h_mat.shape[0]
    m = g_mat.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = h_mat
    if m:
        kkt[:n, n:] = g_mat.T
        kkt[n:, :n] = g_mat
    rhs = np.concatenate([-grad, np.zeros(m)])
    try:
        sol = np.linalg.solve(kkt, rhs)
        for _ in range(2):
            sol += np.linalg.solve(kkt, rhs - kkt @ sol)
    except np.linalg.LinAlgError:
        sol = None
    scale = 1.0 + np.max(np.abs(rhs))
    if sol is None or not np.all(np.isfinite(sol)) or np.max(np.abs(kkt @ sol - rhs)) > 1e-7 * scale:
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        if np.max(np.abs(kkt @ sol - rhs)) > 1e-6 * scale:
            raise QpError("KKT subsystem inconsistent (problem may be unbounded)")
    return sol[:n], sol[n:]


def solve_qp(
    h_mat,
    c_vec,
    a_eq,
    b_eq,
    a_in,
    b_in,
    x0,
    working0: list[int] | None = None,
    max_iter: int | None = None,
    feas_tol: float = 1e-7,
    step_tol: float = 1e-11,
    mult_tol: float = 1e-10,
) -> QpResult:
    h_mat = np.asarray(h_mat, dtype=float)
    c_vec = np.asarray(c_vec, dtype=float)
    n = len(c_vec)
    a_eq = np.asarray(a_eq, dtype=float).reshape(-1, n) if a_eq is not None else np.zeros((0, n))
    b_eq = np.asarray(b_eq, dtype=float).ravel() if b_eq is not None else np.zeros(0)
    a_in = np.asarray(a_in, dtype=float).reshape(-1, n) if a_in is not None else np.zeros((0, n))
    b_in = np.asarray(b_in, dtype=float).ravel() if b_in is not None else np.zeros(0)
    x = np.asarray(x0, dtype=float).copy()

    if a_eq.shape[0] and np.max(np.abs(a_eq @ x - b_eq)) > feas_tol * (1.0 + np.max(np.abs(b_eq))):
        raise QpError("starting point violates equality constraints")
    if a_in.shape[0] and np.max(a_in @ x - b_in) > feas_tol * (1.0 + np.max(np.abs(b_in))):
        raise QpError("starting point violates inequality constraints")

    # column equilibration from the Hessian diagonal; the clip keeps nearly
    # unweighted directions (tiny fuel weights) from exploding the scaled
    # iterates, which would make the step tolerance unreachable
    diag = np.abs(np.diag(h_mat))
    col_scale = np.where(diag > 1e-300, 1.0 / np.sqrt(np.maximum(diag, 1e-300)), 1.0)
    col_scale = np.clip(col_scale, 1e-2, 1e2)
    hs = h_mat * col_scale[None, :] * col_scale[:, None]
    cs = c_vec * col_scale
    aeq_s = a_eq * col_scale[None, :]
    ain_s = a_in * col_scale[None, :]
    xs = x / col_scale

    n_in = a_in.shape[0]
    working: list[int] = []
    if working0:
        slack = ain_s @ xs - b_in if n_in else np.zeros(0)
        for i in working0:
            if 0 <= i < n_in and slack[i] > -feas_tol * (1.0 + abs(b_in[i])):
                working.append(i)
    if max_iter is None:
        max_iter = 20 * (n + n_in) + 50

    for iteration in range(1, max_iter + 1):
        g_rows = np.vstack([aeq_s, ain_s[working]]) if (a_eq.shape[0] or working) else np.zeros((0, n))
        grad = hs @ xs + cs
        p, mults = _kkt_solve(hs, g_rows, grad)

        at_subproblem_optimum = np.max(np.abs(p), initial=0.0) <= step_tol * (
            1.0 + np.max(np.abs(xs), initial=0.0)
        )
        if not at_subproblem_optimum:
            # ratio test against inequalities outside the working set
            alpha = 1.0
            blocking = -1
            if n_in:
                denom = ain_s @ p
                slack = b_in - ain_s @ xs
                for i in range(n_in):
                    if i in working or denom[i] <= 1e-13:
                        continue
                    ratio = max(slack[i], 0.0) / denom[i]
                    if ratio < alpha - 1e-15:
                        alpha = ratio
                        blocking = i
            xs = xs + alpha * p
            if blocking >= 0:
                working.append(blocking)
                continue
            # full unblocked step lands on the subproblem optimum, where the
            # multipliers from this same solve are valid: check them now
            # rather than waiting for the next solve to return p ~ 0

        eq_mult = mults[: a_eq.shape[0]]
        w_mult = mults[a_eq.shape[0] :]
        if len(working) == 0 or np.min(w_mult, initial=0.0) >= -mult_tol:
            in_mult = np.zeros(n_in)
            for idx, mu in zip(working, w_mult):
                in_mult[idx] = max(mu, 0.0)
            x_out = xs * col_scale
            stat = h_mat @ x_out + c_vec
            if a_eq.shape[0]:
                stat = stat + a_eq.T @ eq_mult
            if n_in:
                stat = stat + a_in.T @ in_mult
            return QpResult(
                x=x_out,
                eq_mult=eq_mult,
                in_mult=in_mult,
                working=sorted(working),
                iterations=iteration,
                objective=float(0.5 * x_out @ h_mat @ x_out + c_vec @ x_out),
                stationarity=float(np.linalg.norm(stat)),
            )
        # drop the most negative working constraint and re-solve
        drop = int(np.argmin(w_mult))
        working.pop(drop)

    raise QpError(f"active-set method did not converge in {max_iter} iterations "
                  f"(n={n}, working set size {len(working)})")
