"""Longitudinal vehicle dynamics, fuel maps, and the one-point linear model.

The plant is a mid-size SUV cruising in top gear.  Acceleration is affine in
engine torque and road grade with quadratic speed losses; fuel flow is a
quadratic polynomial in speed and torque.  Everything is also expressed per
meter traveled ("position domain"), which makes road grade an exogenous
signal indexed by distance instead of a function of the trip time.

Unit conventions
----------------
* ``fuel_rate_time``  returns kg/h (the raw fuel-map polynomial).
* ``fuel_rate_space`` returns the position-domain rate in (kg/h)/(m/s),
  i.e. fuel flow divided by speed.  This is the quantity the predictive
  controller weighs against velocity tracking, so the cost weight stays in
  its conventional range.
* ``fuel_per_meter``  converts the above to kg/m (divide by 3600) and is
  what every fuel accounting path integrates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Fixed-gear coefficient sets for the reference SUV.
DEFAULT_ALPHA = (0.00315, 9.81, 0.05536, 0.00229, 2.8272e-4)
DEFAULT_LAMBDA = (0.5352, -0.03021, 0.00062, 5.503e-5, 0.00079, 0.00131)

SECONDS_PER_HOUR = 3600.0


class StepFailure(RuntimeError):
    """A position-domain integration step produced a non-physical state."""


@dataclass(frozen=True)
class VehicleParams:
    """Coefficient sets plus actuator/velocity limits and the position step."""

    alpha: tuple[float, ...] = DEFAULT_ALPHA
    lam: tuple[float, ...] = DEFAULT_LAMBDA
    v_min: float = 15.0
    v_max: float = 40.0
    te_min: float = -30.0
    te_max: float = 240.0
    ds: float = 30.0

    def __post_init__(self) -> None:
        if len(self.alpha) != 5 or len(self.lam) != 6:
            raise ValueError("expected 5 dynamics and 6 fuel coefficients")
        if self.alpha[0] <= 0:
            raise ValueError("alpha0 must be positive (torque must propel)")
        if self.ds <= 0:
            raise ValueError("position step must be positive")
        if self.v_min <= 0:
            raise ValueError("v_min must be positive (position-domain rates divide by V)")
        if self.v_min >= self.v_max:
            raise ValueError("v_min must be below v_max")
        if self.te_min >= self.te_max:
            raise ValueError("te_min must be below te_max")


@dataclass(frozen=True)
class LinearizedModel:
    """Discrete linear velocity model and affine fuel model at one cruise point.

    Deviation dynamics over one position step:

        dv(k+1) = a_coef * dv(k) + b1 * dte(k) + b2 * phi(k)

    and the affine fuel-flow model (kg/h, the engine-map units)

        mf(k) ~= c0 + c_v * dv(k) + c_t * dte(k)

    where ``dv``/``dte`` are deviations from ``(v_lin, te_lin)`` and ``phi``
    is the absolute road grade (the expansion point is a zero-grade cruise
    equilibrium, so grade enters undeviated).

    The controller weighs the squared affine fuel flow against velocity
    tracking.  The flow is kept in kg/h rather than per-meter units: the
    large constant term then dominates the achievable swing, so squaring
    behaves like total fuel and the weight trades off against tracking in
    its conventional 1e-4..1e-2 range.  A per-meter fuel residual is small
    enough to reach zero inside the actuator box, which makes the squared
    cost reward "burn early, glide at the horizon tail" plans that a
    receding horizon keeps deferring; the closed loop then ratchets above
    the set point for every weight and the weight sweep degenerates.
    """

    a_coef: float
    b1: float
    b2: float
    v_lin: float
    te_lin: float
    fuel_lin: tuple[float, float, float]  # (c0, c_v, c_t), kg/h

    def fuel_affine(self, dv, dte):
        """Affine fuel flow at deviations (dv, dte), in kg/h."""
        c0, c_v, c_t = self.fuel_lin
        return c0 + c_v * dv + c_t * dte


@dataclass(frozen=True)
class Trajectory:
    """Aligned per-step records of a simulated or optimized drive.

    ``position``, ``v`` and ``vavg`` have one more sample than ``te`` and
    ``fuel_per_m`` (states at nodes, inputs over segments).
    """

    position: np.ndarray
    v: np.ndarray
    vavg: np.ndarray
    te: np.ndarray
    fuel_per_m: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.te)

    @property
    def total_fuel_kg(self) -> float:
        if self.n_steps == 0:
            return 0.0
        ds = float(self.position[1] - self.position[0])
        return float(np.sum(self.fuel_per_m) * ds)


def accel(params: VehicleParams, v, te, phi):
    """Acceleration (m/s^2): tractive torque minus grade, rolling and drag loads."""
    if np.any(np.asarray(v) <= 0.0):
        raise ValueError("velocity must be positive")
    a0, a1, a2, a3, a4 = params.alpha
    return a0 * te - a1 * phi - a2 - a3 * v - a4 * v * v


def fuel_rate_time(params: VehicleParams, v, te):
    """Fuel flow (kg/h) from the quadratic engine map."""
    l0, l1, l2, l3, l4, l5 = params.lam
    return l0 + l1 * v + l2 * te + l3 * te * te + l4 * te * v + l5 * v * v


def fuel_rate_space(params: VehicleParams, v, te):
    """Position-domain fuel rate, (kg/h)/(m/s): the fuel map divided by speed."""
    if np.any(np.asarray(v) <= 0.0):
        raise ValueError("velocity must be positive")
    l0, l1, l2, l3, l4, l5 = params.lam
    return l0 / v + l1 + l2 * te / v + l3 * te * te / v + l4 * te + l5 * v


def fuel_per_meter(params: VehicleParams, v, te):
    """Fuel burned per meter traveled (kg/m)."""
    return fuel_rate_space(params, v, te) / SECONDS_PER_HOUR


def space_step(params: VehicleParams, v, te, phi):
    """Advance velocity by one position step (forward Euler in distance).

    Raises :class:`StepFailure` if the step drives velocity to zero or below,
    which callers must treat as an infeasible state.
    """
    v_next = v + params.ds * accel(params, v, te, phi) / v
    if np.any(np.asarray(v_next) <= 0.0):
        raise StepFailure(
            f"velocity collapsed to {np.min(v_next):.3f} m/s "
            f"(v={np.min(v):.3f}, te={np.min(te):.1f}, phi={np.max(phi):.3f})"
        )
    return v_next


def equilibrium_torque(params: VehicleParams, v: float, phi: float = 0.0) -> float:
    """Engine torque holding speed v exactly on grade phi."""
    a0, a1, a2, a3, a4 = params.alpha
    return (a1 * phi + a2 + a3 * v + a4 * v * v) / a0


def linearize(params: VehicleParams, v_ref: float) -> LinearizedModel:
    """Linearize the position-domain dynamics and fuel rate at a cruise point.

    The expansion point is the zero-grade equilibrium at ``v_ref``; deviation
    inputs of zero on flat road then map zero deviation to zero deviation.
    """
    if not (params.v_min <= v_ref <= params.v_max):
        raise ValueError(f"v_ref {v_ref} outside [{params.v_min}, {params.v_max}]")
    te_lin = equilibrium_torque(params, v_ref)
    if not (params.te_min <= te_lin <= params.te_max):
        raise ValueError(
            f"equilibrium torque {te_lin:.1f} N.m at {v_ref} m/s outside "
            f"[{params.te_min}, {params.te_max}]"
        )
    a0, a1, a2, a3, a4 = params.alpha
    ds = params.ds
    # d(a/V)/dV at the equilibrium collapses to -(a3/V + 2*a4).
    a_coef = 1.0 + ds * (-(a0 * te_lin) / v_ref**2 + a2 / v_ref**2 - a4)
    b1 = ds * a0 / v_ref
    b2 = -ds * a1 / v_ref

    l0, l1, l2, l3, l4, l5 = params.lam
    c0 = fuel_rate_time(params, v_ref, te_lin)
    c_v = l1 + l4 * te_lin + 2.0 * l5 * v_ref
    c_t = l2 + 2.0 * l3 * te_lin + l4 * v_ref
    return LinearizedModel(
        a_coef=float(a_coef),
        b1=float(b1),
        b2=float(b2),
        v_lin=float(v_ref),
        te_lin=float(te_lin),
        fuel_lin=(float(c0), float(c_v), float(c_t)),
    )


def integrate_fine(
    params: VehicleParams, v0: float, te: float, phi: float, distance: float, ds_fine: float = 1e-3
) -> float:
    """High-accuracy reference integration of the velocity flow over a distance.

    RK4 on dv/ds = a(v)/v at sub-millimeter steps: the same continuous flow the
    coarse one-shot Euler step approximates, resolved finely enough to serve as
    an independent truth value for truncation-error checks.
    """
    v = float(v0)
    a0, a1, a2, a3, a4 = params.alpha

    def f(vv: float) -> float:
        if vv <= 0:
            raise StepFailure("reference integration stalled")
        return (a0 * te - a1 * phi - a2 - a3 * vv - a4 * vv * vv) / vv

    n_sub = max(1, int(round(distance / ds_fine)))
    h = distance / n_sub
    for _ in range(n_sub):
        k1 = f(v)
        k2 = f(v + 0.5 * h * k1)
        k3 = f(v + 0.5 * h * k2)
        k4 = f(v + h * k3)
        v = v + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return v


_PARAM_KEYS = {
    "alpha0": ("alpha", 0),
    "alpha1": ("alpha", 1),
    "alpha2": ("alpha", 2),
    "alpha3": ("alpha", 3),
    "alpha4": ("alpha", 4),
    "lambda0": ("lam", 0),
    "lambda1": ("lam", 1),
    "lambda2": ("lam", 2),
    "lambda3": ("lam", 3),
    "lambda4": ("lam", 4),
    "lambda5": ("lam", 5),
    "v_min": ("v_min", None),
    "v_max": ("v_max", None),
    "te_min": ("te_min", None),
    "te_max": ("te_max", None),
    "ds": ("ds", None),
}


def load_vehicle_config(path) -> VehicleParams:
    """Read vehicle parameters from a key-value text file.

    One ``key = value`` pair per line, ``#`` comments allowed; any key left
    out keeps its default.  Unknown keys are an error.
    """
    alpha = list(DEFAULT_ALPHA)
    lam = list(DEFAULT_LAMBDA)
    scalars: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip().lower()
            if key not in _PARAM_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown parameter {key!r}")
            try:
                num = float(value.strip())
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad number {value.strip()!r}") from exc
            target, idx = _PARAM_KEYS[key]
            if target == "alpha":
                alpha[idx] = num
            elif target == "lam":
                lam[idx] = num
            else:
                scalars[target] = num
    return VehicleParams(alpha=tuple(alpha), lam=tuple(lam), **scalars)
