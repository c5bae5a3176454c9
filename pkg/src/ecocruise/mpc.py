"""Receding-horizon cruise controller as a convex quadratic program.

The stage cost trades the squared affine fuel flow (weighted by ``gamma``)
against the squared gap between the horizon-mean velocity and the set point,
plus a tiny torque-slew tie-break.  Dynamics are the one-point linear model
in deviation variables; torque bounds are hard, velocity bounds are softened
with one symmetric quadratic slack per step so the program never goes
infeasible in closed loop.

Decision vector layout, horizon N:

    z = [ dv(0..N) | dte(0..N-1) | s(0..N-1) ]

Inequality rows (order matters for warm starts):

    [0,N)   dte(k) <= te_max_dev          [N,2N)  -dte(k) <= -te_min_dev
    [2N,3N) dv(k+1) - s(k) <= v_max_dev   [3N,4N) -dv(k+1) - s(k) <= -v_min_dev
    [4N,5N) -s(k) <= 0
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qp import solve_qp
from .vehicle import LinearizedModel, VehicleParams

DEFAULT_HORIZON = 60
DEFAULT_SOFT_WEIGHT = 1e3
# Tiny quadratic penalty on torque slew between consecutive steps.  The
# fuel/tracking cost alone is indifferent between torque profiles with equal
# horizon-mean velocity, so the optimizer snaps to burn-early/glide-late
# plans for any positive fuel weight, making closed-loop behavior jump at
# zero weight and react steeply to small weight changes.  Slew resolves the
# tie toward steady actuation: constant-torque profiles (all cruising
# equilibria, the whole zero-weight tracking family) cost nothing, while the
# glide shapes are almost entirely slew.
DEFAULT_TE_RIDGE = 1e-6


@dataclass(frozen=True)
class MpcProblem:
    gamma: float
    n: int
    lin: LinearizedModel
    grade_window: np.ndarray
    v_init: float                # initial velocity deviation
    v_ref_dev: float             # set point in deviation coordinates
    bounds: tuple[float, float, float, float]  # v_min_dev, v_max_dev, te_min_dev, te_max_dev
    soft_weight: float
    te_ridge: float
    h_mat: np.ndarray
    c_vec: np.ndarray
    const: float
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_in: np.ndarray
    b_in: np.ndarray

    @property
    def n_vars(self) -> int:
        return 3 * self.n + 1

    def objective_at(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.h_mat @ z + self.c_vec @ z + self.const)

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.n
        return z[: n + 1], z[n + 1 : 2 * n + 1], z[2 * n + 1 :]


@dataclass(frozen=True)
class MpcSolution:
    v: np.ndarray                # N+1 velocity deviations
    te: np.ndarray               # N torque deviations
    slack: np.ndarray            # N velocity-violation slacks
    objective: float
    kkt_residual: float
    working_set: tuple[int, ...]  # active inequality rows, reusable as warm start
    iterations: int

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.v, self.te, self.slack])


def build(
    gamma: float,
    lin: LinearizedModel,
    grade_window,
    v_init: float,
    params: VehicleParams,
    v_ref: float | None = None,
    soft_weight: float = DEFAULT_SOFT_WEIGHT,
    te_ridge: float = DEFAULT_TE_RIDGE,
) -> MpcProblem:
    """Assemble the horizon QP for one control step.

    ``grade_window`` fixes the horizon length.  ``v_ref`` defaults to the
    linearization speed, which makes the tracking target zero deviation.
    """
    if gamma < 0:
        raise ValueError("fuel weight must be nonnegative to keep the program convex")
    if soft_weight <= 0:
        raise ValueError("soft constraint weight must be positive")
    grades = np.asarray(grade_window, dtype=float)
    n = len(grades)
    if n < 1:
        raise ValueError("horizon must contain at least one step")

    v_ref_dev = 0.0 if v_ref is None else float(v_ref - lin.v_lin)
    v_lo = params.v_min - lin.v_lin
    v_hi = params.v_max - lin.v_lin
    t_lo = params.te_min - lin.te_lin
    t_hi = params.te_max - lin.te_lin
    if not (t_lo <= 0.0 <= t_hi):
        raise ValueError("linearization torque outside actuator range")

    nz = 3 * n + 1
    iv = np.arange(n + 1)
    ite = n + 1 + np.arange(n)
    isl = 2 * n + 1 + np.arange(n)

    c0, c_v, c_t = lin.fuel_lin
    h = np.zeros((nz, nz))
    c = np.zeros(nz)

    # fuel term: gamma * sum_k (c0 + c_v dv(k) + c_t dte(k))^2 over k = 0..N-1
    h[iv[:n], iv[:n]] += 2.0 * gamma * c_v * c_v
    h[ite, ite] += 2.0 * gamma * c_t * c_t
    h[iv[:n], ite] += 2.0 * gamma * c_v * c_t
    h[ite, iv[:n]] += 2.0 * gamma * c_v * c_t
    c[iv[:n]] += 2.0 * gamma * c0 * c_v
    c[ite] += 2.0 * gamma * c0 * c_t

    # tracking term: (v_ref_dev - mean over N+1 velocities)^2
    m = 1.0 / (n + 1)
    h[np.ix_(iv, iv)] += 2.0 * m * m
    c[iv] += -2.0 * v_ref_dev * m

    # slack penalty and the torque-slew tie-break
    h[isl, isl] += 2.0 * soft_weight
    for k in range(n - 1):
        h[ite[k], ite[k]] += 2.0 * te_ridge
        h[ite[k + 1], ite[k + 1]] += 2.0 * te_ridge
        h[ite[k], ite[k + 1]] -= 2.0 * te_ridge
        h[ite[k + 1], ite[k]] -= 2.0 * te_ridge

    const = gamma * n * c0 * c0 + v_ref_dev * v_ref_dev

    a_eq = np.zeros((n + 1, nz))
    b_eq = np.zeros(n + 1)
    a_eq[0, iv[0]] = 1.0
    b_eq[0] = v_init
    for k in range(n):
        a_eq[k + 1, iv[k + 1]] = 1.0
        a_eq[k + 1, iv[k]] = -lin.a_coef
        a_eq[k + 1, ite[k]] = -lin.b1
        b_eq[k + 1] = lin.b2 * grades[k]

    a_in = np.zeros((5 * n, nz))
    b_in = np.zeros(5 * n)
    rows = np.arange(n)
    a_in[rows, ite] = 1.0
    b_in[rows] = t_hi
    a_in[n + rows, ite] = -1.0
    b_in[n + rows] = -t_lo
    a_in[2 * n + rows, iv[1:]] = 1.0
    a_in[2 * n + rows, isl] = -1.0
    b_in[2 * n + rows] = v_hi
    a_in[3 * n + rows, iv[1:]] = -1.0
    a_in[3 * n + rows, isl] = -1.0
    b_in[3 * n + rows] = -v_lo
    a_in[4 * n + rows, isl] = -1.0

    return MpcProblem(
        gamma=float(gamma),
        n=n,
        lin=lin,
        grade_window=grades,
        v_init=float(v_init),
        v_ref_dev=v_ref_dev,
        bounds=(v_lo, v_hi, t_lo, t_hi),
        soft_weight=float(soft_weight),
        te_ridge=float(te_ridge),
        h_mat=h,
        c_vec=c,
        const=const,
        a_eq=a_eq,
        b_eq=b_eq,
        a_in=a_in,
        b_in=b_in,
    )


def _feasible_start(problem: MpcProblem) -> np.ndarray:
    """Zero-torque rollout of the linear dynamics with slacks absorbing any
    velocity-bound spill."""
    n = problem.n
    lin = problem.lin
    v_lo, v_hi, _, _ = problem.bounds
    z = np.zeros(problem.n_vars)
    v = problem.v_init
    z[0] = v
    for k in range(n):
        v = lin.a_coef * v + lin.b2 * problem.grade_window[k]
        z[k + 1] = v
        z[2 * n + 1 + k] = max(0.0, v - v_hi, v_lo - v)
    return z


def solve(problem: MpcProblem, warm_working: tuple[int, ...] | None = None) -> MpcSolution:
    """Solve the horizon QP to optimality and certify the result."""
    z0 = _feasible_start(problem)
    result = solve_qp(
        problem.h_mat,
        problem.c_vec,
        problem.a_eq,
        problem.b_eq,
        problem.a_in,
        problem.b_in,
        z0,
        working0=list(warm_working) if warm_working else None,
    )
    v, te, slack = problem.split(result.x)
    return MpcSolution(
        v=v,
        te=te,
        slack=np.maximum(slack, 0.0),
        objective=problem.objective_at(result.x),
        kkt_residual=result.stationarity,
        working_set=tuple(result.working),
        iterations=result.iterations,
    )


def kkt_residual(problem: MpcProblem, solution, active_tol: float = 1e-7) -> float:
    """Stationarity norm of a candidate point for this program.

    Multipliers are fitted by least squares over the constraints active at the
    point (inequality multipliers clipped at zero), so a true optimum scores
    ~0 and any perturbation scores strictly worse.
    """
    z = solution.as_vector() if isinstance(solution, MpcSolution) else np.asarray(solution, float)
    if len(z) != problem.n_vars:
        raise ValueError(f"expected {problem.n_vars} variables, got {len(z)}")
    grad = problem.h_mat @ z + problem.c_vec
    rows = [problem.a_eq]
    slack = problem.a_in @ z - problem.b_in
    active = np.where(slack > -active_tol * (1.0 + np.abs(problem.b_in)))[0]
    if len(active):
        rows.append(problem.a_in[active])
    a_t = np.vstack(rows).T
    mult, *_ = np.linalg.lstsq(a_t, -grad, rcond=None)
    n_eq = problem.a_eq.shape[0]
    mult[n_eq:] = np.maximum(mult[n_eq:], 0.0)
    return float(np.linalg.norm(grad + a_t @ mult))


def dump_problem(problem: MpcProblem, path) -> None:
    """Write the assembled QP in a labeled matrix-text format.

    Blocks are ``name rows cols`` headers followed by whitespace-separated
    rows at full precision, so any external tool can re-check a solve.
    """
    blocks = [
        ("H", problem.h_mat),
        ("c", problem.c_vec.reshape(1, -1)),
        ("A_eq", problem.a_eq),
        ("b_eq", problem.b_eq.reshape(1, -1)),
        ("A_in", problem.a_in),
        ("b_in", problem.b_in.reshape(1, -1)),
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# horizon QP dump: n={problem.n} gamma={problem.gamma:.9g} "
                 f"soft_weight={problem.soft_weight:.9g} te_ridge={problem.te_ridge:.9g}\n")
        fh.write(f"# objective constant term: {problem.const:.17g}\n")
        for name, mat in blocks:
            fh.write(f"{name} {mat.shape[0]} {mat.shape[1]}\n")
            for row in mat:
                fh.write(" ".join(f"{val:.17g}" for val in row) + "\n")
