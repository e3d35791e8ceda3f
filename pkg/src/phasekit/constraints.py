"""Lagrangian-level analysis: Hessians, Legendre transforms, primary
constraints, total Hamiltonians and gauge fixing.

The Legendre transform here is deliberately rank-aware: momenta that cannot
be inverted for their velocities become primary constraints instead of
errors, which is exactly how the reparametrized oscillator acquires its
constraint surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import brackets as _brackets
from .brackets import ConstraintClassification, classify_constraints, poisson
from ._poly import Rat
from .expr import (
    Atom,
    AtomRegistry,
    Chart,
    Mul,
    PhaseExpr,
    Sym,
    as_expr,
    atom,
    diff,
    eval_symbols,
    free_symbols,
    from_rat,
    is_zero_expr,
    num,
    parse,
    render,
    simplify,
    subst,
    sym,
    to_rat,
)


class ConstraintError(Exception):
    pass


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------

@dataclass
class LagrangianModel:
    """A Lagrangian with named configuration variables and velocities.

    ``momenta`` names the conjugate momentum for each coordinate; when
    omitted they default to ``p_<coordinate>``.  ``parameters`` binds
    non-phase symbols (such as the mass) to numbers for numeric checks.
    """

    coordinates: Tuple[str, ...]
    velocities: Tuple[str, ...]
    lagrangian: PhaseExpr
    momenta: Tuple[str, ...] = ()
    parameters: Dict[str, float] = field(default_factory=dict)
    registry: Optional[AtomRegistry] = None
    time_var: str = "t"

    def __post_init__(self):
        self.coordinates = tuple(self.coordinates)
        self.velocities = tuple(self.velocities)
        if len(self.velocities) != len(self.coordinates):
            raise ConstraintError(
                "need exactly one velocity symbol per configuration variable"
            )
        names = self.coordinates + self.velocities
        if len(set(names)) != len(names):
            raise ConstraintError("coordinate and velocity names must be distinct")
        if not self.momenta:
            self.momenta = tuple(f"p_{c}" for c in self.coordinates)
        self.momenta = tuple(self.momenta)
        if len(self.momenta) != len(self.coordinates):
            raise ConstraintError("need exactly one momentum name per coordinate")

    @property
    def chart(self) -> Chart:
        return Chart(tuple(zip(self.coordinates, self.momenta)))


@dataclass(frozen=True)
class Hessian:
    """∂²L/∂v_i∂v_j with its exact determinant."""

    matrix: Tuple[Tuple[PhaseExpr, ...], ...]
    determinant: PhaseExpr


@dataclass
class LegendreResult:
    momenta: Dict[str, PhaseExpr]
    velocity_solutions: Dict[str, PhaseExpr]
    hamiltonian: PhaseExpr
    primaries: Tuple[PhaseExpr, ...]
    chart: Chart


@dataclass(frozen=True)
class GaugeSpec:
    """Linear gauge t_τ(τ) over a window (τ₁, τ₂, t₁, t₂).

    ``eta_gauge`` vanishes exactly on the orbit
    t_τ = (t₂−t₁)(τ−τ₁)/(τ₂−τ₁) + t₁ and the multiplier is the slope
    λ = (t₂−t₁)/(τ₂−τ₁).
    """

    window: Tuple[float, float, float, float]
    time_coordinate: str = "t_tau"
    parameter: str = "tau"

    def __post_init__(self):
        tau1, tau2, t1, t2 = self.window
        if tau2 <= tau1:
            raise ConstraintError("gauge window needs tau2 > tau1")
        if t2 == t1:
            raise ConstraintError("gauge window needs t2 != t1")

    @property
    def lambda_value(self) -> float:
        tau1, tau2, t1, t2 = self.window
        return (t2 - t1) / (tau2 - tau1)

    @property
    def eta_gauge(self) -> PhaseExpr:
        tau1, tau2, t1, t2 = (Fraction(v) for v in self.window)
        slope = num((t2 - t1) / (tau2 - tau1))
        return simplify(
            sym(self.time_coordinate)
            - (slope * (sym(self.parameter) - num(tau1)) + num(t1))
        )

    def time_of(self, tau: float) -> float:
        tau1, tau2, t1, t2 = self.window
        return (t2 - t1) * (tau - tau1) / (tau2 - tau1) + t1


@dataclass
class ConstraintSet:
    primaries: Tuple[PhaseExpr, ...]
    secondaries: Tuple[PhaseExpr, ...] = ()
    gauge: Optional[GaugeSpec] = None
    classification: Optional[ConstraintClassification] = None

    def all_constraints(self) -> Tuple[PhaseExpr, ...]:
        out = tuple(self.primaries) + tuple(self.secondaries)
        if self.gauge is not None:
            out = out + (self.gauge.eta_gauge,)
        return out

    def labels(self) -> Tuple[str, ...]:
        if self.classification is None:
            raise ConstraintError("constraint set has not been classified")
        n = len(self.all_constraints())
        return tuple(
            "first-class" if i in self.classification.first_class
            else "second-class"
            for i in range(n)
        )


# --------------------------------------------------------------------------
# Hessian
# --------------------------------------------------------------------------

def _det(rows: List[List[Rat]]) -> Rat:
    n = len(rows)
    if n == 0:
        return Rat.const(1)
    if n == 1:
        return rows[0][0]
    total = Rat.const(0)
    sign = 1
    for j in range(n):
        entry = rows[0][j]
        if not entry.is_zero():
            minor = [
                [rows[i][k] for k in range(n) if k != j] for i in range(1, n)
            ]
            term = entry * _det(minor)
            total = total + (term if sign > 0 else Rat.const(-1) * term)
        sign = -sign
    return total


def hessian(model: LagrangianModel) -> Hessian:
    """Velocity Hessian of the Lagrangian and its exact determinant."""
    n = len(model.velocities)
    first = [diff(model.lagrangian, v, model.registry) for v in model.velocities]
    matrix = [
        [diff(first[i], model.velocities[j], model.registry) for j in range(n)]
        for i in range(n)
    ]
    for i in range(n):
        for j in range(i + 1, n):
            if not is_zero_expr(matrix[i][j] - matrix[j][i]):
                raise ConstraintError("velocity Hessian is not symmetric")
    det = from_rat(_det([[to_rat(e) for e in row] for row in matrix]))
    return Hessian(
        matrix=tuple(tuple(row) for row in matrix), determinant=det
    )


def hessian_rank(h: Hessian, values: Mapping, threshold: float = 1e-10) -> int:
    """Numeric rank at a point: singular values above threshold·σ_max."""
    n = len(h.matrix)
    numeric = np.array(
        [[eval_symbols(h.matrix[i][j], values) for j in range(n)]
         for i in range(n)]
    )
    sv = np.linalg.svd(numeric, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > threshold * sv[0]))


def null_residual(h: Hessian, model: LagrangianModel) -> Tuple[PhaseExpr, ...]:
    """Symbolic product M·(velocities)ᵀ, row by row."""
    vel = [sym(v) for v in model.velocities]
    return tuple(
        simplify(sum((Mul((entry, v)) for entry, v in zip(row, vel)),
                     start=num(0)))
        for row in h.matrix
    )


# --------------------------------------------------------------------------
# Legendre transform
# --------------------------------------------------------------------------

def _solve_linear(equation: PhaseExpr, v: str) -> Optional[PhaseExpr]:
    """Solve ``equation = 0`` for v when v appears linearly; else None."""
    c = diff(equation, v)
    if is_zero_expr(c) or v in free_symbols(c):
        return None
    rest = simplify(equation - Mul((c, sym(v))))
    return from_rat(Rat.const(-1) * to_rat(rest) / to_rat(c))


def legendre(model: LagrangianModel) -> LegendreResult:
    """Momenta, Hamiltonian and primary constraints of the model.

    Each momentum definition p_i = ∂L/∂v_i is solved for a velocity where
    possible; definitions that become velocity-free after substitution are
    rank deficiencies and turn into primary constraints, normalized so the
    unresolved momentum carries coefficient one.  Velocities that no
    equation determines stay in H as undetermined multipliers.
    """
    defs = {
        p: diff(model.lagrangian, v, model.registry)
        for p, v in zip(model.momenta, model.velocities)
    }
    equations = {
        p: simplify(sym(p) - defs[p]) for p in model.momenta
    }
    solved: Dict[str, PhaseExpr] = {}
    primaries: List[PhaseExpr] = []
    pending = list(model.momenta)
    vel_set = set(model.velocities)

    for _pass in range(len(pending) + 1):
        progressed = False
        still = []
        for p in pending:
            eq = simplify(subst(equations[p], solved)) if solved else equations[p]
            present = free_symbols(eq) & vel_set
            if not present:
                if is_zero_expr(eq):
                    progressed = True           # redundant definition
                    continue
                scale = diff(eq, p)
                if not is_zero_expr(scale) and not (free_symbols(scale) & vel_set):
                    eq = from_rat(to_rat(eq) / to_rat(scale))
                primaries.append(simplify(eq))
                progressed = True
                continue
            solution = None
            for v in model.velocities:
                if v not in present:
                    continue
                solution = _solve_linear(eq, v)
                if solution is not None:
                    solved[v] = solution
                    break
            if solution is None:
                still.append(p)
            else:
                progressed = True
        pending = still
        if not pending:
            break
        if not progressed:
            raise ConstraintError(
                f"could not invert momenta for {pending}; the Lagrangian is "
                "outside the supported polynomial/rational class"
            )

    # velocities may reference later-solved velocities; close the map
    for _ in range(len(solved) + 1):
        updated = {v: simplify(subst(e, solved)) for v, e in solved.items()}
        if updated == solved:
            break
        solved = updated

    h = sum(
        (Mul((sym(p), sym(v)))
         for p, v in zip(model.momenta, model.velocities)),
        start=num(0),
    ) - model.lagrangian
    hamiltonian = simplify(subst(simplify(h), solved)) if solved else simplify(h)

    return LegendreResult(
        momenta={p: simplify(defs[p]) for p in model.momenta},
        velocity_solutions=dict(solved),
        hamiltonian=hamiltonian,
        primaries=tuple(primaries),
        chart=model.chart,
    )


# --------------------------------------------------------------------------
# classification, total Hamiltonian, secondary search
# --------------------------------------------------------------------------

def classify(cs: ConstraintSet, chart: Chart,
             registry: Optional[AtomRegistry] = None,
             values_hint: Optional[Mapping[str, float]] = None
             ) -> ConstraintSet:
    """Attach a first/second-class classification to the set."""
    classification = classify_constraints(
        cs.all_constraints(), chart, registry, values_hint
    )
    return replace(cs, classification=classification)


def total_hamiltonian(cs: ConstraintSet, lam) -> PhaseExpr:
    """λ·φ for a single primary, Σ λ_a φ_a when λ is a sequence."""
    if not cs.primaries:
        raise ConstraintError("no primary constraint to multiply")
    if isinstance(lam, (list, tuple)):
        if len(lam) != len(cs.primaries):
            raise ConstraintError("need one multiplier per primary constraint")
        total = num(0)
        for l, phi in zip(lam, cs.primaries):
            total = total + Mul((as_expr(l), phi))
        return simplify(total)
    if len(cs.primaries) != 1:
        raise ConstraintError(
            "scalar multiplier but several primaries; pass a sequence"
        )
    return simplify(Mul((as_expr(lam), cs.primaries[0])))


@dataclass(frozen=True)
class SecondarySearch:
    secondaries: Tuple[PhaseExpr, ...]
    passes: int


def secondary_constraints(cs: ConstraintSet, total_h: PhaseExpr, chart: Chart,
                          registry: Optional[AtomRegistry] = None,
                          values_hint: Optional[Mapping[str, float]] = None,
                          parameter: str = "tau",
                          max_passes: int = 6) -> SecondarySearch:
    """Consistency search: add dφ/dparameter until it vanishes weakly.

    The consistency condition is the total derivative
    {φ, H_T} + ∂φ/∂parameter, so gauge constraints that carry the
    evolution parameter explicitly are handled correctly.  Each pass keeps
    the conditions that are effectively nonzero on the current surface.
    """
    known: List[PhaseExpr] = list(cs.all_constraints())
    found: List[PhaseExpr] = []
    for pass_count in range(1, max_passes + 1):
        new: List[PhaseExpr] = []
        need_points = False
        candidates = []
        for phi in known:
            c = simplify(
                poisson(phi, total_h, chart, registry)
                + diff(phi, parameter, registry)
            )
            if is_zero_expr(c):
                continue
            if to_rat(c).is_const():
                raise ConstraintError(
                    "constraint consistency produced a nonzero constant; "
                    "the system is inconsistent"
                )
            candidates.append(c)
            need_points = True
        if candidates:
            points = (
                _brackets._surface_points(known, chart, 16, 20260817,
                                          values_hint,
                                          extra_exprs=candidates)
                if need_points else []
            )
            for c in candidates:
                if not _brackets._effectively_nonzero(c, points, 1e-10):
                    continue
                if any(is_zero_expr(c - k) for k in known):
                    continue
                new.append(c)
        if not new:
            return SecondarySearch(secondaries=tuple(found), passes=pass_count)
        found.extend(new)
        known.extend(new)
    raise ConstraintError("secondary-constraint search did not close")


# --------------------------------------------------------------------------
# built-in oscillator models
# --------------------------------------------------------------------------

def oscillator_registry(friction_profile=None, frequency_profile=None,
                        damping_profile=None) -> AtomRegistry:
    """Atoms of the damped oscillator family.

    ``w`` is the (possibly time-dependent) angular frequency, ``eta_fric``
    the friction coefficient, and ``f`` the accumulated damping factor
    exp(-∫eta_fric); f carries the derivative rule f' = -eta_fric·f.
    """
    reg = AtomRegistry()
    reg.register("w", profile=frequency_profile)
    reg.register("eta_fric", profile=friction_profile)
    reg.register(
        "f",
        derivative=lambda arg: -atom("eta_fric", arg) * atom("f", arg),
        profile=damping_profile,
    )
    return reg


def original_oscillator(parameters: Optional[Mapping[str, float]] = None,
                        registry: Optional[AtomRegistry] = None
                        ) -> LagrangianModel:
    """Planar damped oscillator in physical time t."""
    reg = registry if registry is not None else oscillator_registry()
    text = (
        "(m/(2*f(t)))*(x1_dot^2 + x2_dot^2)"
        " - (m*w(t)^2/(2*f(t)))*(x1^2 + x2^2)"
    )
    lag = parse(text, ["x1", "x2", "x1_dot", "x2_dot", "t", "m"], reg)
    return LagrangianModel(
        coordinates=("x1", "x2"),
        velocities=("x1_dot", "x2_dot"),
        lagrangian=lag,
        momenta=("p1", "p2"),
        parameters=dict(parameters or {}),
        registry=reg,
        time_var="t",
    )


def extended_oscillator(parameters: Optional[Mapping[str, float]] = None,
                        registry: Optional[AtomRegistry] = None
                        ) -> LagrangianModel:
    """The same oscillator with time promoted to a configuration variable.

    Velocities are taken with respect to the evolution parameter; the
    Lagrangian is homogeneous of degree one in them, which is what makes
    the velocity Hessian singular.
    """
    reg = registry if registry is not None else oscillator_registry()
    text = (
        "(m/(2*f(t_tau)*t_tau_dot))*(x1_tau_dot^2 + x2_tau_dot^2)"
        " - (m*w(t_tau)^2*t_tau_dot/(2*f(t_tau)))*(x1_tau^2 + x2_tau^2)"
    )
    lag = parse(
        text,
        ["x1_tau", "x2_tau", "t_tau",
         "x1_tau_dot", "x2_tau_dot", "t_tau_dot", "m"],
        reg,
    )
    return LagrangianModel(
        coordinates=("x1_tau", "x2_tau", "t_tau"),
        velocities=("x1_tau_dot", "x2_tau_dot", "t_tau_dot"),
        lagrangian=lag,
        momenta=("p1_tau", "p2_tau", "p_tau"),
        parameters=dict(parameters or {}),
        registry=reg,
        time_var="tau",
    )
