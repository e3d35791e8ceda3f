"""Numeric integration of the original and extended oscillator flows.

Right-hand sides arrive as symbolic equations of motion and are compiled to
plain Python callables once per run.  Two steppers are provided: adaptive
Dormand-Prince RK45 (default) and fixed-step RK4 for reproducibility
tables.  Both land exactly on the requested output grid; no dense-output
interpolation is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import brackets as _brackets
from . import constraints as _constraints
from .constraints import ConstraintSet, GaugeSpec
from .expr import (
    Add,
    Atom,
    AtomRegistry,
    Div,
    Mul,
    Num,
    PhaseExpr,
    Pow,
    Sym,
    eval_expr,
    simplify,
    sym,
)


class DynamicsError(Exception):
    pass


class StepSizeUnderflowError(DynamicsError):
    pass


class NonFiniteStateError(DynamicsError):
    pass


class PreconditionError(DynamicsError):
    pass


class ConstraintViolationError(DynamicsError):
    def __init__(self, message: str, parameter_value: float):
        super().__init__(message)
        self.parameter_value = parameter_value


# --------------------------------------------------------------------------
# policies and trajectories
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IntegratorPolicy:
    method: str = "rk45"          # "rk45" adaptive or "rk4" fixed-step
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_step: float = 0.05

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise DynamicsError(f"unknown integrator method '{self.method}'")
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise DynamicsError("tolerances must be positive")
        if self.max_step <= 0:
            raise DynamicsError("max_step must be positive")


@dataclass
class Trajectory:
    grid: np.ndarray
    series: Dict[str, np.ndarray]
    param_name: str = "t"
    integrator: str = ""
    policy: Optional[IntegratorPolicy] = None
    # filled by integrate(): accepted/rejected step counts, step-size range,
    # and for rk45 the worst accepted error estimate per unit step in
    # tolerance-scale units
    stats: Optional[Dict[str, float]] = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 1 or self.grid.size < 2:
            raise DynamicsError("trajectory grid needs at least two points")
        if not np.all(np.diff(self.grid) > 0):
            raise DynamicsError("trajectory grid must be strictly increasing")
        clean = {}
        for name, values in self.series.items():
            arr = np.asarray(values, dtype=float)
            if arr.shape != self.grid.shape:
                raise DynamicsError(
                    f"series '{name}' length does not match the grid"
                )
            if not np.all(np.isfinite(arr)):
                raise DynamicsError(f"series '{name}' contains non-finite values")
            arr.setflags(write=False)
            clean[name] = arr
        self.series = clean
        self.grid.setflags(write=False)

    @property
    def variables(self) -> Tuple[str, ...]:
        return tuple(self.series)

    def state_at(self, index: int) -> Dict[str, float]:
        return {name: float(arr[index]) for name, arr in self.series.items()}

    def to_csv(self, path) -> None:
        write_csv(self, path)


def write_csv(traj: Trajectory, path) -> None:
    """Plain CSV, 17 significant digits, deterministic byte-for-byte."""
    names = list(traj.series)
    lines = [",".join([traj.param_name] + names)]
    for i in range(traj.grid.size):
        row = [f"{traj.grid[i]:.17g}"]
        row += [f"{traj.series[n][i]:.17g}" for n in names]
        lines.append(",".join(row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# expression compilation
# --------------------------------------------------------------------------

def _emit(e: PhaseExpr, var_index, params, time_var, atom_calls) -> str:
    if isinstance(e, Num):
        return f"({float(e.value)!r})"
    if isinstance(e, Sym):
        return _emit_symbol(e.name, var_index, params, time_var)
    if isinstance(e, Atom):
        key = (e.name,)
        if key not in atom_calls:
            atom_calls[key] = f"_atom_{len(atom_calls)}"
        arg = _emit_symbol(e.arg, var_index, params, time_var)
        return f"{atom_calls[key]}({e.order}, {arg})"
    if isinstance(e, Add):
        return "(" + " + ".join(
            _emit(t, var_index, params, time_var, atom_calls) for t in e.terms
        ) + ")"
    if isinstance(e, Mul):
        return "(" + "*".join(
            _emit(f, var_index, params, time_var, atom_calls) for f in e.factors
        ) + ")"
    if isinstance(e, Pow):
        base = _emit(e.base, var_index, params, time_var, atom_calls)
        return f"({base})**({e.exp})"
    if isinstance(e, Div):
        a = _emit(e.num, var_index, params, time_var, atom_calls)
        b = _emit(e.den, var_index, params, time_var, atom_calls)
        return f"(({a})/({b}))"
    raise TypeError(f"not a PhaseExpr node: {e!r}")


def _emit_symbol(name, var_index, params, time_var) -> str:
    if name in var_index:
        return f"y[{var_index[name]}]"
    if name in params:
        return f"({float(params[name])!r})"
    if name == time_var:
        return "t"
    raise DynamicsError(
        f"unbound symbol '{name}': not a state variable, parameter, or "
        f"the evolution parameter '{time_var}'"
    )


def _compile(exprs: Sequence[PhaseExpr], variables: Sequence[str],
             registry: Optional[AtomRegistry], params: Mapping[str, float],
             time_var: str) -> Callable:
    var_index = {v: i for i, v in enumerate(variables)}
    atom_calls: Dict[tuple, str] = {}
    bodies = [
        _emit(e, var_index, params, time_var, atom_calls) for e in exprs
    ]
    glb: Dict[str, object] = {}
    if atom_calls and registry is None:
        raise DynamicsError("equations contain coefficient atoms but no "
                            "registry was supplied")
    if registry is not None:
        registry.freeze()
    for (name,), fn in atom_calls.items():
        glb[fn] = registry.profile(name).value
    source = "def _rhs(t, y):\n    return (" + ",\n        ".join(bodies) + ",)"
    exec(source, glb)
    return glb["_rhs"]


def compile_rhs(eom: Mapping[str, PhaseExpr], variables: Sequence[str],
                registry: Optional[AtomRegistry] = None,
                params: Optional[Mapping[str, float]] = None,
                time_var: str = "t") -> Callable:
    """Compile v̇ = rhs(v) into ``f(t, y) -> ndarray``."""
    fn = _compile([eom[v] for v in variables], variables, registry,
                  dict(params or {}), time_var)

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return np.asarray(fn(t, y), dtype=float)

    return rhs


def compile_scalar(expression: PhaseExpr, variables: Sequence[str],
                   registry: Optional[AtomRegistry] = None,
                   params: Optional[Mapping[str, float]] = None,
                   time_var: str = "t") -> Callable:
    fn = _compile([expression], variables, registry, dict(params or {}),
                  time_var)

    def scalar(t: float, y: np.ndarray) -> float:
        return float(fn(t, y)[0])

    return scalar


# --------------------------------------------------------------------------
# steppers
# --------------------------------------------------------------------------

# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# difference between the 5th- and 4th-order weights
_DP_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200,
         22 / 525, -1 / 40)


def _dp_step(rhs, t, y, h, k1):
    k = [k1]
    for i in range(1, 7):
        acc = np.zeros_like(y)
        for a, ki in zip(_DP_A[i], k):
            acc += a * ki
        k.append(rhs(t + _DP_C[i] * h, y + h * acc))
    y5 = y + h * sum(a * ki for a, ki in zip(_DP_A[6], k[:6]))
    # k[6] was evaluated at (t+h, y5): first-same-as-last
    err = h * sum(d * ki for d, ki in zip(_DP_E, k))
    return y5, err, k[6]


def _integrate_rk45(rhs, y0, grid, policy, observer=None):
    states = [np.array(y0, dtype=float)]
    t = float(grid[0])
    y = states[0]
    if observer is not None:
        observer(t, y)
    try:
        k1 = rhs(t, y)
    except (ZeroDivisionError, OverflowError):
        raise NonFiniteStateError(f"right-hand side undefined at t={t}")
    span = float(grid[-1] - grid[0])
    h = min(policy.max_step, span / 100.0)
    accepted = 0
    rejected = 0
    h_min, h_max = math.inf, 0.0
    worst = 0.0
    for target in grid[1:]:
        target = float(target)
        while t < target - 1e-14 * max(1.0, abs(target)):
            h = min(h, policy.max_step, target - t)
            if h < 1e-14 * max(1.0, abs(t)):
                raise StepSizeUnderflowError(
                    f"step size underflow at t={t}"
                )
            try:
                y_new, err, k_last = _dp_step(rhs, t, y, h, k1)
            except (ZeroDivisionError, OverflowError):
                raise NonFiniteStateError(
                    f"right-hand side undefined near t={t}"
                )
            if not np.all(np.isfinite(y_new)):
                raise NonFiniteStateError(f"state became non-finite near t={t}")
            scale = policy.abs_tol + policy.rel_tol * np.maximum(
                np.abs(y), np.abs(y_new)
            )
            # error per unit step: global drift stays near tol x span
            err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
            if err_norm <= h:
                accepted += 1
                h_min, h_max = min(h_min, h), max(h_max, h)
                worst = max(worst, err_norm / h)
                t += h
                y = y_new
                k1 = k_last
                factor = 5.0 if err_norm == 0.0 else min(
                    5.0, max(0.2, 0.9 * (h / err_norm) ** 0.25)
                )
            else:
                rejected += 1
                factor = max(0.2, 0.9 * (h / err_norm) ** 0.25)
            h *= factor
        t = target
        states.append(y.copy())
        if observer is not None:
            observer(t, y)
    stats = {
        "steps": float(accepted),
        "rejected": float(rejected),
        "min_step": h_min if accepted else 0.0,
        "max_step": h_max,
        "max_error_per_unit_step": worst,
    }
    return states, stats


def _integrate_rk4(rhs, y0, grid, policy, observer=None):
    states = [np.array(y0, dtype=float)]
    y = states[0]
    total = 0
    h_min, h_max = math.inf, 0.0
    if observer is not None:
        observer(float(grid[0]), y)
    try:
        for a, b in zip(grid[:-1], grid[1:]):
            a, b = float(a), float(b)
            n = max(1, int(math.ceil((b - a) / policy.max_step)))
            h = (b - a) / n
            total += n
            h_min, h_max = min(h_min, h), max(h_max, h)
            t = a
            for _ in range(n):
                k1 = rhs(t, y)
                k2 = rhs(t + h / 2, y + h / 2 * k1)
                k3 = rhs(t + h / 2, y + h / 2 * k2)
                k4 = rhs(t + h, y + h * k3)
                y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
                t += h
            if not np.all(np.isfinite(y)):
                raise NonFiniteStateError(f"state became non-finite near t={b}")
            states.append(y.copy())
            if observer is not None:
                observer(b, y)
    except (ZeroDivisionError, OverflowError):
        raise NonFiniteStateError("right-hand side undefined during step")
    stats = {
        "steps": float(total),
        "rejected": 0.0,
        "min_step": h_min,
        "max_step": h_max,
    }
    return states, stats


def _resolve_grid(grid_or_span, points: int) -> np.ndarray:
    arr = np.asarray(grid_or_span, dtype=float)
    if arr.ndim == 1 and arr.size == 2 and points != 2:
        return np.linspace(arr[0], arr[1], points)
    if arr.ndim != 1:
        raise DynamicsError("grid must be one-dimensional")
    return arr


def integrate(eom: Mapping[str, PhaseExpr], init: Mapping[str, float],
              grid_or_span, policy: IntegratorPolicy = IntegratorPolicy(),
              registry: Optional[AtomRegistry] = None,
              params: Optional[Mapping[str, float]] = None,
              param_name: str = "t", points: int = 201,
              observer=None) -> Trajectory:
    """Integrate symbolic equations of motion over a grid or (a, b) span."""
    variables = list(eom)
    missing = [v for v in variables if v not in init]
    if missing:
        raise PreconditionError(f"initial state missing variables {missing}")
    grid = _resolve_grid(grid_or_span, points)
    rhs = compile_rhs(eom, variables, registry, params, time_var=param_name)
    y0 = np.array([float(init[v]) for v in variables])
    stepper = _integrate_rk45 if policy.method == "rk45" else _integrate_rk4
    states, stats = stepper(rhs, y0, grid, policy, observer)
    table = np.array(states)
    return Trajectory(
        grid=grid,
        series={v: table[:, i] for i, v in enumerate(variables)},
        param_name=param_name,
        integrator=policy.method,
        policy=policy,
        stats=stats,
    )


# --------------------------------------------------------------------------
# the gauge-fixed extended system
# --------------------------------------------------------------------------

_EXTENDED_CACHE: Dict[str, object] = {}


def extended_equations() -> Dict[str, PhaseExpr]:
    """Equations of motion for H_T = lam·φ, with lam and m symbolic."""
    if "eom" not in _EXTENDED_CACHE:
        model = _constraints.extended_oscillator()
        lt = _constraints.legendre(model)
        phi = lt.primaries[0]
        h_total = simplify(sym("lam") * phi)
        eom = _brackets.hamilton_eom(
            h_total, model.chart
        )
        _EXTENDED_CACHE["eom"] = eom
        _EXTENDED_CACHE["phi"] = phi
        _EXTENDED_CACHE["chart"] = model.chart
    return dict(_EXTENDED_CACHE["eom"])


def extended_constraint() -> PhaseExpr:
    extended_equations()
    return _EXTENDED_CACHE["phi"]


def integrate_extended(gauge: GaugeSpec, init: Mapping[str, float],
                       policy: IntegratorPolicy = IntegratorPolicy(),
                       registry: Optional[AtomRegistry] = None,
                       params: Optional[Mapping[str, float]] = None,
                       points: int = 201,
                       surface_tol: float = 1e-10) -> Trajectory:
    """Integrate the gauge-fixed extended system over [τ₁, τ₂].

    The initial state must sit on the constraint surface (|φ| below
    ``surface_tol``) and on the gauge orbit (t_τ(τ₁) = t₁).  The run aborts
    if |φ| ever exceeds 100× the surface tolerance.
    """
    tau1, tau2, t1, _t2 = gauge.window
    eom = extended_equations()
    phi = extended_constraint()
    variables = list(eom)
    run_params = dict(params or {})
    run_params["lam"] = gauge.lambda_value

    missing = [v for v in variables if v not in init]
    if missing:
        raise PreconditionError(f"initial state missing variables {missing}")
    if abs(float(init["t_tau"]) - t1) > surface_tol:
        raise PreconditionError(
            f"gauge orbit violated at start: t_tau(tau1)={init['t_tau']}, "
            f"window expects {t1}"
        )
    phi_fn = compile_scalar(phi, variables, registry, run_params,
                            time_var="tau")
    y0 = np.array([float(init[v]) for v in variables])
    phi0 = phi_fn(tau1, y0)
    if abs(phi0) > surface_tol:
        raise PreconditionError(
            f"initial state violates the constraint: |phi| = {abs(phi0)}"
        )

    abort_at = 100.0 * surface_tol

    def watch(tau, y):
        value = phi_fn(tau, y)
        if abs(value) > abort_at:
            raise ConstraintViolationError(
                f"constraint drift |phi| = {abs(value)} exceeded "
                f"{abort_at} at tau = {tau}", tau
            )

    return integrate(
        eom, init, (tau1, tau2), policy, registry, run_params,
        param_name="tau", points=points, observer=watch,
    )


def constraint_drift(traj: Trajectory, cs: ConstraintSet,
                     registry: Optional[AtomRegistry] = None,
                     params: Optional[Mapping[str, float]] = None
                     ) -> Dict[str, np.ndarray]:
    """|constraint| per grid point, for every constraint in the set."""
    named: List[Tuple[str, PhaseExpr]] = []
    for i, phi in enumerate(cs.primaries):
        named.append((f"phi_{i}", phi))
    for i, chi in enumerate(cs.secondaries):
        named.append((f"chi_{i}", chi))
    if cs.gauge is not None:
        named.append(("eta_gauge", cs.gauge.eta_gauge))

    variables = list(traj.series)
    out: Dict[str, np.ndarray] = {}
    table = np.column_stack([traj.series[v] for v in variables]) \
        if variables else np.zeros((traj.grid.size, 0))
    for name, expression in named:
        fn = compile_scalar(expression, variables, registry, params,
                            time_var=traj.param_name)
        values = np.array([
            abs(fn(float(traj.grid[i]), table[i]))
            for i in range(traj.grid.size)
        ])
        out[name] = values
    return out


def max_drift(drift: Mapping[str, np.ndarray]) -> float:
    if not drift:
        return 0.0
    return max(float(np.max(v)) for v in drift.values())
