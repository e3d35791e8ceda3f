"""Poisson and Dirac brackets over canonical charts.

Brackets are computed symbolically through exact expression arithmetic, so
antisymmetry and the vanishing of Dirac brackets against second-class
constraints hold identically, not just to tolerance.  The only numeric step
is the first/second-class decision for non-constant constraint brackets,
which samples the constraint surface.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .expr import (
    Atom,
    AtomRegistry,
    Chart,
    PhaseExpr,
    Sym,
    ZERO,
    diff,
    free_symbols,
    from_rat,
    is_const_expr,
    is_zero_expr,
    simplify,
    to_rat,
)
from ._poly import Rat


class BracketError(Exception):
    pass


class ChartMismatchError(BracketError):
    pass


class SingularDeltaError(BracketError):
    """Raised when a Dirac bracket is requested for a singular Δ."""

    def __init__(self, classification: "ConstraintClassification"):
        super().__init__(
            "constraint matrix is singular; Dirac brackets need a purely "
            "second-class set\n" + classification.report()
        )
        self.classification = classification


@dataclass(frozen=True)
class BracketResult:
    """A bracket value together with the chart it was computed in."""

    expr: PhaseExpr
    chart: Chart


def _check_symbols(f: PhaseExpr, g: PhaseExpr, chart: Chart,
                   params: Optional[Iterable[str]]) -> None:
    if params is None:
        return
    allowed = set(chart.variables) | set(params)
    for e in (f, g):
        extra = free_symbols(e) - allowed
        if extra:
            raise ChartMismatchError(
                f"variables outside chart '{chart.label}': {sorted(extra)}"
            )


def poisson(f: PhaseExpr, g: PhaseExpr, chart: Chart,
            registry: Optional[AtomRegistry] = None,
            params: Optional[Iterable[str]] = None) -> PhaseExpr:
    """Canonical Poisson bracket {f, g} in the given chart.

    Symbols that are not chart variables are treated as parameters and
    differentiate to zero; pass ``params`` to have that set validated.
    """
    _check_symbols(f, g, chart, params)
    total = Rat.const(0)
    for q, p in chart.pairs:
        fq = to_rat(diff(f, q, registry))
        gp = to_rat(diff(g, p, registry))
        fp = to_rat(diff(f, p, registry))
        gq = to_rat(diff(g, q, registry))
        total = total + fq * gp - fp * gq
    return from_rat(total)


# --------------------------------------------------------------------------
# constraint matrix and classification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstraintClassification:
    """First/second-class split with the full bracket table behind it."""

    constraints: Tuple[PhaseExpr, ...]
    bracket_table: Tuple[Tuple[PhaseExpr, ...], ...]
    weakly_zero: Tuple[Tuple[bool, ...], ...]
    first_class: Tuple[int, ...]
    second_class: Tuple[int, ...]

    def report(self) -> str:
        lines = []
        for i in range(len(self.constraints)):
            kind = "first-class" if i in self.first_class else "second-class"
            partners = [
                str(j) for j in range(len(self.constraints))
                if not self.weakly_zero[i][j]
            ]
            detail = (
                f"nonzero bracket with constraint(s) {', '.join(partners)}"
                if partners else "all constraint brackets vanish weakly"
            )
            lines.append(f"constraint {i}: {kind} ({detail})")
        return "\n".join(lines)


@dataclass(frozen=True)
class ConstraintMatrix:
    """Δ_ab = {φ_a, φ_b} with its symbolic inverse when Δ is regular."""

    constraints: Tuple[PhaseExpr, ...]
    delta: Tuple[Tuple[PhaseExpr, ...], ...]
    inverse: Optional[Tuple[Tuple[PhaseExpr, ...], ...]]
    classification: ConstraintClassification
    chart: Chart


def _poly_eval(p, values: Mapping[tuple, float]) -> float:
    total = 0.0
    for mono, coeff in p.items():
        term = float(coeff)
        for key, exp in mono:
            try:
                term *= values[key] ** exp
            except KeyError:
                raise BracketError(
                    f"no numeric value supplied for symbol {key!r}"
                ) from None
        total += term
    return total


def _rat_eval(e: PhaseExpr, values: Mapping[tuple, float]) -> float:
    r = to_rat(e)
    den = _poly_eval(r.den, values)
    if den == 0.0:
        raise ZeroDivisionError
    return _poly_eval(r.num, values) / den


def _needed_keys(exprs: Sequence[PhaseExpr]) -> set:
    keys: set = set()
    for e in exprs:
        r = to_rat(e)
        for poly in (r.num, r.den):
            for mono in poly:
                for key, _ in mono:
                    keys.add(key)
    return keys


def _surface_points(constraints: Sequence[PhaseExpr], chart: Chart,
                    count: int, seed: int,
                    values_hint: Optional[Mapping[str, float]] = None,
                    extra_exprs: Sequence[PhaseExpr] = ()
                    ) -> List[Dict[tuple, float]]:
    """Random numeric points satisfying every constraint to 1e-12.

    Starts from a random draw and runs Newton sweeps, adjusting for each
    constraint the chart variable with the largest local gradient.  Every
    symbol of the constraints, their gradients, and ``extra_exprs`` (the
    expressions the caller will evaluate at these points) gets a value.
    """
    rng = np.random.default_rng(seed)
    chart_keys = {(0, v) for v in chart.variables}
    grads = [
        {v: diff(phi, v) for v in chart.variables} for phi in constraints
    ]
    keys = _needed_keys(
        list(constraints) + list(extra_exprs)
        + [g for row in grads for g in row.values()]
    ) | chart_keys
    hint = {(0, k): float(v) for k, v in (values_hint or {}).items()}

    points = []
    for _ in range(count):
        for _attempt in range(25):
            values: Dict[tuple, float] = {}
            for key in keys:
                if key in chart_keys:
                    values[key] = float(rng.uniform(-1.5, 1.5))
                else:
                    # parameters and coefficient atoms stay away from zero
                    values[key] = float(rng.uniform(0.4, 1.6))
            values.update(hint)
            if _newton_project(constraints, grads, chart, values):
                points.append(values)
                break
        else:
            raise BracketError(
                "failed to sample the constraint surface; constraints may "
                "be inconsistent"
            )
    return points


def _newton_project(constraints, grads, chart, values) -> bool:
    for _sweep in range(60):
        worst = 0.0
        for phi, grad in zip(constraints, grads):
            try:
                residual = _rat_eval(phi, values)
            except ZeroDivisionError:
                return False
            worst = max(worst, abs(residual))
            if abs(residual) < 1e-13:
                continue
            best_key, best_slope = None, 0.0
            for v in chart.variables:
                try:
                    slope = _rat_eval(grad[v], values)
                except ZeroDivisionError:
                    continue
                if abs(slope) > abs(best_slope):
                    best_key, best_slope = (0, v), slope
            if best_key is None:
                return False
            values[best_key] -= residual / best_slope
        if worst < 1e-13:
            return True
    try:
        return all(abs(_rat_eval(phi, values)) < 1e-12 for phi in constraints)
    except ZeroDivisionError:
        return False


def _effectively_nonzero(bracket: PhaseExpr,
                         points: Sequence[Mapping[tuple, float]],
                         threshold: float) -> bool:
    if is_zero_expr(bracket):
        return False
    if is_const_expr(bracket):
        return True
    for values in points:
        try:
            if abs(_rat_eval(bracket, values)) > threshold:
                return True
        except ZeroDivisionError:
            # a pole is as nonzero as it gets
            return True
    return False


def classify_constraints(constraints: Sequence[PhaseExpr], chart: Chart,
                         registry: Optional[AtomRegistry] = None,
                         values_hint: Optional[Mapping[str, float]] = None,
                         points: int = 16, threshold: float = 1e-10,
                         seed: int = 20260817) -> ConstraintClassification:
    """Split constraints into first and second class.

    A constraint is second-class when some bracket with another constraint
    is effectively nonzero on the constraint surface; identically zero and
    sampled-zero brackets count as weakly vanishing.
    """
    constraints = tuple(simplify(c) for c in constraints)
    n = len(constraints)
    table = [[ZERO] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            b = poisson(constraints[i], constraints[j], chart, registry)
            table[i][j] = b
            table[j][i] = simplify(-b)

    need_points = any(
        not is_zero_expr(table[i][j]) and not is_const_expr(table[i][j])
        for i in range(n) for j in range(n)
    )
    surface = (
        _surface_points(constraints, chart, points, seed, values_hint,
                        extra_exprs=[table[i][j]
                                     for i in range(n) for j in range(n)])
        if need_points else []
    )

    weakly = [
        [not _effectively_nonzero(table[i][j], surface, threshold)
         for j in range(n)]
        for i in range(n)
    ]
    first, second = [], []
    for i in range(n):
        (first if all(weakly[i]) else second).append(i)
    return ConstraintClassification(
        constraints=constraints,
        bracket_table=tuple(tuple(row) for row in table),
        weakly_zero=tuple(tuple(row) for row in weakly),
        first_class=tuple(first),
        second_class=tuple(second),
    )


def _symbolic_inverse(delta: Sequence[Sequence[PhaseExpr]]
                      ) -> Optional[Tuple[Tuple[PhaseExpr, ...], ...]]:
    n = len(delta)
    aug: List[List[Rat]] = []
    for i in range(n):
        row = [to_rat(delta[i][j]) for j in range(n)]
        row += [Rat.const(1 if k == i else 0) for k in range(n)]
        aug.append(row)
    for col in range(n):
        pivot = next(
            (r for r in range(col, n) if not aug[r][col].is_zero()), None
        )
        if pivot is None:
            return None
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv_p = aug[col][col]
        aug[col] = [entry / inv_p for entry in aug[col]]
        for r in range(n):
            if r == col or aug[r][col].is_zero():
                continue
            factor = aug[r][col]
            aug[r] = [a - factor * b for a, b in zip(aug[r], aug[col])]
    return tuple(
        tuple(from_rat(aug[i][n + j]) for j in range(n)) for i in range(n)
    )


def constraint_matrix(constraints: Sequence[PhaseExpr], chart: Chart,
                      registry: Optional[AtomRegistry] = None,
                      values_hint: Optional[Mapping[str, float]] = None,
                      seed: int = 20260817) -> ConstraintMatrix:
    """Build Δ_ab = {φ_a, φ_b}, classify, and invert when possible."""
    classification = classify_constraints(
        constraints, chart, registry, values_hint, seed=seed
    )
    delta = classification.bracket_table
    for i in range(len(delta)):
        for j in range(len(delta)):
            if not is_zero_expr(delta[i][j] + delta[j][i]):
                raise BracketError("constraint matrix lost antisymmetry")
    inverse = None
    if not classification.first_class:
        inverse = _symbolic_inverse(delta)
    return ConstraintMatrix(
        constraints=classification.constraints,
        delta=delta,
        inverse=inverse,
        classification=classification,
        chart=chart,
    )


def dirac(f: PhaseExpr, g: PhaseExpr, cm: ConstraintMatrix, chart: Chart,
          registry: Optional[AtomRegistry] = None,
          params: Optional[Iterable[str]] = None) -> PhaseExpr:
    """Dirac bracket {f,g} - Σ_ab {f,φ_a} C_ab {φ_b,g} with C = Δ⁻¹."""
    if cm.inverse is None:
        raise SingularDeltaError(cm.classification)
    total = to_rat(poisson(f, g, chart, registry, params))
    left = [
        to_rat(poisson(f, phi, chart, registry)) for phi in cm.constraints
    ]
    right = [
        to_rat(poisson(phi, g, chart, registry)) for phi in cm.constraints
    ]
    for a, fa in enumerate(left):
        if fa.is_zero():
            continue
        for b, bg in enumerate(right):
            if bg.is_zero():
                continue
            c_ab = to_rat(cm.inverse[a][b])
            if c_ab.is_zero():
                continue
            total = total - fa * c_ab * bg
    return from_rat(total)


def hamilton_eom(hamiltonian: PhaseExpr, chart: Chart,
                 bracket: Callable = poisson,
                 cm: Optional[ConstraintMatrix] = None,
                 registry: Optional[AtomRegistry] = None,
                 params: Optional[Iterable[str]] = None
                 ) -> Dict[str, PhaseExpr]:
    """Right-hand sides v̇ = {v, H} for every chart variable."""
    out: Dict[str, PhaseExpr] = {}
    for v in chart.variables:
        var = Sym(v)
        if bracket is poisson:
            rhs = poisson(var, hamiltonian, chart, registry, params)
        elif bracket is dirac:
            if cm is None:
                raise BracketError(
                    "Dirac equations of motion need a constraint matrix"
                )
            rhs = dirac(var, hamiltonian, cm, chart, registry, params)
        else:
            rhs = simplify(bracket(var, hamiltonian))
        out[v] = rhs
    return out
