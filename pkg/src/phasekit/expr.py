"""Immutable symbolic expressions over phase-space variables.

The expression language is deliberately small: exact rational constants,
variable references, opaque time-dependent coefficient atoms (with optional
registered derivative rules and numeric profiles), sums, products, integer
powers and quotients.  ``simplify`` canonicalizes any tree to a reduced
rational normal form, so structural equality after ``simplify`` decides
semantic equality.  Floating point enters only through ``eval_expr``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cmp_to_key
from typing import Callable, Dict, Iterable, Mapping, Optional, Tuple, Union

import numpy as np
from scipy.interpolate import CubicSpline

from . import _poly
from ._poly import Rat

Number = Union[int, float, Fraction]


class ExprError(Exception):
    """Base class for expression-layer failures."""


class ParseError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (offset {position})")
        self.position = position


class EvalError(ExprError):
    pass


class UnboundVariableError(EvalError):
    pass


class NonFiniteError(EvalError):
    pass


class SubstitutionError(ExprError):
    pass


# --------------------------------------------------------------------------
# expression nodes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseExpr:
    """Base node; all subclasses are immutable and hashable."""

    def __add__(self, other):
        return Add((self, as_expr(other)))

    def __radd__(self, other):
        return Add((as_expr(other), self))

    def __sub__(self, other):
        return Add((self, Mul((Num(Fraction(-1)), as_expr(other)))))

    def __rsub__(self, other):
        return Add((as_expr(other), Mul((Num(Fraction(-1)), self))))

    def __mul__(self, other):
        return Mul((self, as_expr(other)))

    def __rmul__(self, other):
        return Mul((as_expr(other), self))

    def __truediv__(self, other):
        return Div(self, as_expr(other))

    def __rtruediv__(self, other):
        return Div(as_expr(other), self)

    def __pow__(self, exponent: int):
        if not isinstance(exponent, int):
            raise TypeError("only integer exponents are supported")
        return Pow(self, exponent)

    def __neg__(self):
        return Mul((Num(Fraction(-1)), self))

    def __str__(self):
        return render(self)


@dataclass(frozen=True)
class Num(PhaseExpr):
    value: Fraction


@dataclass(frozen=True)
class Sym(PhaseExpr):
    name: str


@dataclass(frozen=True)
class Atom(PhaseExpr):
    """Reference to a coefficient atom applied at a variable.

    ``order`` counts derivatives: ``Atom("w", 1, "t")`` is w'(t).
    """

    name: str
    order: int
    arg: str


@dataclass(frozen=True)
class Add(PhaseExpr):
    terms: Tuple[PhaseExpr, ...]


@dataclass(frozen=True)
class Mul(PhaseExpr):
    factors: Tuple[PhaseExpr, ...]


@dataclass(frozen=True)
class Pow(PhaseExpr):
    base: PhaseExpr
    exp: int


@dataclass(frozen=True)
class Div(PhaseExpr):
    num: PhaseExpr
    den: PhaseExpr


ZERO = Num(Fraction(0))
ONE = Num(Fraction(1))


def num(value: Number) -> Num:
    """Exact numeric constant; floats convert to their exact binary value."""
    return Num(Fraction(value))


def sym(name: str) -> Sym:
    return Sym(name)


def atom(name: str, arg: str, order: int = 0) -> Atom:
    return Atom(name, order, arg)


def as_expr(value) -> PhaseExpr:
    if isinstance(value, PhaseExpr):
        return value
    if isinstance(value, (int, float, Fraction)):
        return num(value)
    raise TypeError(f"cannot interpret {value!r} as an expression")


# --------------------------------------------------------------------------
# canonicalization through the rational normal form
# --------------------------------------------------------------------------

def _sym_key(node: PhaseExpr) -> tuple:
    if isinstance(node, Sym):
        return (0, node.name)
    if isinstance(node, Atom):
        return (1, node.name, node.order, node.arg)
    raise TypeError(node)


def _key_node(key: tuple) -> PhaseExpr:
    if key[0] == 0:
        return Sym(key[1])
    return Atom(key[1], key[2], key[3])


def to_rat(e: PhaseExpr) -> Rat:
    """Exact rational normal form of an expression tree."""
    if isinstance(e, Num):
        return Rat.const(e.value)
    if isinstance(e, (Sym, Atom)):
        return Rat.symbol(_sym_key(e))
    if isinstance(e, Add):
        out = Rat.const(Fraction(0))
        for t in e.terms:
            out = out + to_rat(t)
        return out
    if isinstance(e, Mul):
        out = Rat.const(Fraction(1))
        for f in e.factors:
            out = out * to_rat(f)
        return out
    if isinstance(e, Pow):
        try:
            return to_rat(e.base) ** e.exp
        except ZeroDivisionError:
            raise ExprError("zero expression raised to a negative power")
    if isinstance(e, Div):
        den = to_rat(e.den)
        if den.is_zero():
            raise ExprError("division by a zero expression")
        return to_rat(e.num) / den
    raise TypeError(f"not a PhaseExpr node: {e!r}")


def _term_tree(coeff: Fraction, mono_pairs) -> PhaseExpr:
    factors = []
    for key, exp in mono_pairs:
        node = _key_node(key)
        factors.append(node if exp == 1 else Pow(node, exp))
    if not factors:
        return Num(coeff)
    if coeff != 1:
        factors = [Num(coeff)] + factors
    return factors[0] if len(factors) == 1 else Mul(tuple(factors))


def _poly_tree(p, den_mono=None) -> PhaseExpr:
    items = sorted(
        p.items(),
        key=cmp_to_key(lambda a, b: _poly.mono_cmp(a[0], b[0])),
        reverse=True,
    )
    terms = []
    for m, c in items:
        if den_mono:
            exps = dict(m)
            for k, e in den_mono:
                ne = exps.get(k, 0) - e
                if ne:
                    exps[k] = ne
                else:
                    exps.pop(k, None)
            pairs = tuple(sorted(exps.items()))
        else:
            pairs = m
        terms.append(_term_tree(c, pairs))
    if not terms:
        return ZERO
    return terms[0] if len(terms) == 1 else Add(tuple(terms))


def from_rat(r: Rat) -> PhaseExpr:
    if r.is_zero():
        return ZERO
    if _poly.is_const(r.den):
        return _poly_tree(r.num)
    if len(r.den) == 1:
        (dm, dc), = r.den.items()
        # monic denominator: dc == 1, fold into Laurent exponents
        return _poly_tree(r.num, den_mono=dm)
    return Div(_poly_tree(r.num), _poly_tree(r.den))


def simplify(e: PhaseExpr) -> PhaseExpr:
    """Canonical form: flattened, sorted, gcd-reduced.  Idempotent."""
    return from_rat(to_rat(e))


def equivalent(a: PhaseExpr, b: PhaseExpr) -> bool:
    return (to_rat(a) - to_rat(b)).is_zero()


def is_zero_expr(e: PhaseExpr) -> bool:
    return to_rat(e).is_zero()


def is_const_expr(e: PhaseExpr) -> bool:
    return to_rat(e).is_const()


def const_value(e: PhaseExpr) -> Fraction:
    r = to_rat(e)
    if not r.is_const():
        raise ExprError("expression is not a constant")
    return r.const_value()


def free_symbols(e: PhaseExpr) -> set:
    """Names of variables appearing in the tree (atom arguments included)."""
    out: set = set()
    _collect_symbols(e, out)
    return out


def _collect_symbols(e: PhaseExpr, out: set) -> None:
    if isinstance(e, Sym):
        out.add(e.name)
    elif isinstance(e, Atom):
        out.add(e.arg)
    elif isinstance(e, Add):
        for t in e.terms:
            _collect_symbols(t, out)
    elif isinstance(e, Mul):
        for f in e.factors:
            _collect_symbols(f, out)
    elif isinstance(e, Pow):
        _collect_symbols(e.base, out)
    elif isinstance(e, Div):
        _collect_symbols(e.num, out)
        _collect_symbols(e.den, out)


def atoms_in(e: PhaseExpr) -> set:
    out: set = set()
    _collect_atoms(e, out)
    return out


def _collect_atoms(e: PhaseExpr, out: set) -> None:
    if isinstance(e, Atom):
        out.add(e)
    elif isinstance(e, Add):
        for t in e.terms:
            _collect_atoms(t, out)
    elif isinstance(e, Mul):
        for f in e.factors:
            _collect_atoms(f, out)
    elif isinstance(e, Pow):
        _collect_atoms(e.base, out)
    elif isinstance(e, Div):
        _collect_atoms(e.num, out)
        _collect_atoms(e.den, out)


def contains_symbol(e: PhaseExpr, name: str) -> bool:
    return name in free_symbols(e)


def eval_symbols(e: PhaseExpr, values: Mapping) -> float:
    """Evaluate with explicit numeric bindings, atoms included.

    Keys are variable names for ``Sym`` nodes and ``Atom`` instances for
    coefficient atoms; no registry or profile is involved.
    """
    keyed = {}
    for k, v in values.items():
        if isinstance(k, str):
            keyed[(0, k)] = float(v)
        elif isinstance(k, Atom):
            keyed[_sym_key(k)] = float(v)
        else:
            raise TypeError(f"cannot bind {k!r}")
    r = to_rat(e)

    def poly_val(p) -> float:
        total = 0.0
        for mono, coeff in p.items():
            term = float(coeff)
            for key, exp in mono:
                if key not in keyed:
                    raise UnboundVariableError(
                        f"symbol {key[1]!r} is not bound"
                    )
                term *= keyed[key] ** exp
            total += term
        return total

    den = poly_val(r.den)
    if den == 0.0:
        raise NonFiniteError("denominator vanished during evaluation")
    out = poly_val(r.num) / den
    if not math.isfinite(out):
        raise NonFiniteError(f"evaluation produced a non-finite value: {out}")
    return out


# --------------------------------------------------------------------------
# differentiation
# --------------------------------------------------------------------------

def diff(e: PhaseExpr, v, registry: "AtomRegistry | None" = None) -> PhaseExpr:
    """Exact partial derivative with respect to a variable name or an Atom.

    Coefficient atoms differentiate through their registered rule when one
    exists (base atoms only); otherwise a fresh atom of derivative order +1
    is produced.
    """
    return simplify(_diff(e, v, registry))


def _diff(e: PhaseExpr, v, reg) -> PhaseExpr:
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Sym):
        return ONE if (isinstance(v, str) and e.name == v) else ZERO
    if isinstance(e, Atom):
        if isinstance(v, Atom):
            return ONE if e == v else ZERO
        if e.arg == v:
            return _atom_derivative(e, reg)
        return ZERO
    if isinstance(e, Add):
        return Add(tuple(_diff(t, v, reg) for t in e.terms))
    if isinstance(e, Mul):
        terms = []
        for i, f in enumerate(e.factors):
            df = _diff(f, v, reg)
            terms.append(Mul(e.factors[:i] + (df,) + e.factors[i + 1:]))
        return Add(tuple(terms))
    if isinstance(e, Pow):
        if e.exp == 0:
            return ZERO
        db = _diff(e.base, v, reg)
        return Mul((Num(Fraction(e.exp)), Pow(e.base, e.exp - 1), db))
    if isinstance(e, Div):
        da = _diff(e.num, v, reg)
        db = _diff(e.den, v, reg)
        return Div(
            Add((Mul((da, e.den)), Mul((Num(Fraction(-1)), e.num, db)))),
            Pow(e.den, 2),
        )
    raise TypeError(f"not a PhaseExpr node: {e!r}")


def _atom_derivative(a: Atom, reg) -> PhaseExpr:
    rule = reg.rule(a.name) if reg is not None else None
    if rule is not None and a.order == 0:
        return rule(a.arg)
    return Atom(a.name, a.order + 1, a.arg)


# --------------------------------------------------------------------------
# substitution
# --------------------------------------------------------------------------

def subst(e: PhaseExpr, mapping: Mapping[str, "PhaseExpr | Number"]) -> PhaseExpr:
    """Replace variables by expressions and canonicalize.

    An atom argument can only be renamed, i.e. mapped to another plain
    variable; mapping it to a composite expression raises
    ``SubstitutionError``.
    """
    m = {k: as_expr(v) for k, v in mapping.items()}
    return simplify(_subst(e, m))


def _subst(e: PhaseExpr, m: Mapping[str, PhaseExpr]) -> PhaseExpr:
    if isinstance(e, Num):
        return e
    if isinstance(e, Sym):
        return m.get(e.name, e)
    if isinstance(e, Atom):
        if e.arg in m:
            target = m[e.arg]
            if isinstance(target, Sym):
                return Atom(e.name, e.order, target.name)
            raise SubstitutionError(
                f"cannot substitute a composite expression into the "
                f"argument of {e.name}({e.arg})"
            )
        return e
    if isinstance(e, Add):
        return Add(tuple(_subst(t, m) for t in e.terms))
    if isinstance(e, Mul):
        return Mul(tuple(_subst(f, m) for f in e.factors))
    if isinstance(e, Pow):
        return Pow(_subst(e.base, m), e.exp)
    if isinstance(e, Div):
        return Div(_subst(e.num, m), _subst(e.den, m))
    raise TypeError(f"not a PhaseExpr node: {e!r}")


# --------------------------------------------------------------------------
# numeric profiles and the atom registry
# --------------------------------------------------------------------------

class Profile:
    """Numeric evaluator for a coefficient atom: value and derivatives."""

    def value(self, order: int, t: float) -> float:
        raise NotImplementedError


class ConstantProfile(Profile):
    def __init__(self, value: float):
        self._value = float(value)

    def value(self, order: int, t: float) -> float:
        return self._value if order == 0 else 0.0


class ExponentialProfile(Profile):
    """amplitude * exp(rate * t); every derivative order is closed-form."""

    def __init__(self, rate: float, amplitude: float = 1.0):
        self.rate = float(rate)
        self.amplitude = float(amplitude)

    def value(self, order: int, t: float) -> float:
        return self.amplitude * self.rate ** order * math.exp(self.rate * t)


class TabulatedProfile(Profile):
    """Cubic interpolation of sampled values; derivatives up to order 2."""

    def __init__(self, times, values):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size < 4:
            raise ValueError("need matching 1-d arrays with at least 4 samples")
        self._lo = float(times[0])
        self._hi = float(times[-1])
        self._splines = [CubicSpline(times, values)]

    def value(self, order: int, t: float) -> float:
        slack = 1e-9 * max(1.0, abs(self._lo), abs(self._hi))
        if t < self._lo - slack or t > self._hi + slack:
            raise EvalError(
                f"time {t} outside tabulated span [{self._lo}, {self._hi}]"
            )
        if order > 2:
            raise EvalError("tabulated profiles support derivatives up to order 2")
        while len(self._splines) <= order:
            self._splines.append(self._splines[-1].derivative())
        return float(self._splines[order](t))


class ExprProfile(Profile):
    """Profile backed by an expression of the time variable."""

    def __init__(self, expression: PhaseExpr, var: str = "t",
                 registry: "AtomRegistry | None" = None):
        self.var = var
        self.registry = registry
        self._derivatives = [simplify(expression)]

    def value(self, order: int, t: float) -> float:
        while len(self._derivatives) <= order:
            self._derivatives.append(
                diff(self._derivatives[-1], self.var, self.registry)
            )
        return eval_expr(
            self._derivatives[order], {self.var: t}, registry=self.registry
        )


class DampingFactorProfile(Profile):
    """f(t) = exp(-int_0^t eta) for a friction profile eta(t).

    The accumulated exponent is a spline antiderivative of eta sampled on a
    fine grid, so use this only when no closed form exists (constant eta has
    the exact ``ExponentialProfile``).
    """

    def __init__(self, friction: Profile, span, samples: int = 4097):
        lo = min(0.0, float(span[0]))
        hi = max(0.0, float(span[1]))
        if hi <= lo:
            raise ValueError("empty span")
        self.friction = friction
        ts = np.linspace(lo, hi, samples)
        eta = np.array([friction.value(0, float(t)) for t in ts])
        accumulated = CubicSpline(ts, eta).antiderivative()
        self._exponent = lambda t: float(accumulated(t) - accumulated(0.0))
        self._lo, self._hi = lo, hi

    def value(self, order: int, t: float) -> float:
        if t < self._lo - 1e-12 or t > self._hi + 1e-12:
            raise EvalError(f"time {t} outside damping-factor span")
        f = math.exp(-self._exponent(t))
        if order == 0:
            return f
        eta = self.friction.value(0, t)
        if order == 1:
            return -eta * f
        if order == 2:
            return (eta * eta - self.friction.value(1, t)) * f
        raise EvalError("damping factor supports derivatives up to order 2")


@dataclass
class CoefficientAtom:
    """Declaration of an opaque time-dependent coefficient.

    ``derivative`` maps an argument variable name to the expression for the
    atom's first derivative (applied at base atoms only); ``profile``
    supplies numeric values per derivative order.
    """

    name: str
    depends_on: str = "t"
    derivative: Optional[Callable[[str], PhaseExpr]] = None
    profile: Optional[Profile] = None


class AtomRegistry:
    """Declared coefficient atoms; frozen before any numeric evaluation."""

    def __init__(self):
        self._atoms: Dict[str, CoefficientAtom] = {}
        self._frozen = False

    def register(self, name: str, depends_on: str = "t",
                 derivative: Optional[Callable[[str], PhaseExpr]] = None,
                 profile: Optional[Profile] = None) -> None:
        if self._frozen:
            raise RuntimeError("atom registry is frozen")
        self._atoms[name] = CoefficientAtom(name, depends_on, derivative, profile)

    def __contains__(self, name: str) -> bool:
        return name in self._atoms

    def names(self) -> Tuple[str, ...]:
        return tuple(self._atoms)

    def get(self, name: str) -> CoefficientAtom:
        return self._atoms[name]

    def rule(self, name: str):
        entry = self._atoms.get(name)
        return entry.derivative if entry else None

    def profile(self, name: str) -> Profile:
        entry = self._atoms.get(name)
        if entry is None or entry.profile is None:
            raise EvalError(f"no numeric profile registered for atom '{name}'")
        return entry.profile

    def freeze(self) -> None:
        self._frozen = True

    def validate_rules(self, times: Iterable[float], rel_tol: float = 1e-6) -> None:
        """Check each derivative rule against finite differences of the
        profile; raises ``EvalError`` on disagreement."""
        for name, entry in self._atoms.items():
            if entry.derivative is None or entry.profile is None:
                continue
            arg = entry.depends_on
            rule_expr = simplify(entry.derivative(arg))
            for t in times:
                h = 1e-6 * max(1.0, abs(t))
                fd = (
                    entry.profile.value(0, t + h) - entry.profile.value(0, t - h)
                ) / (2 * h)
                rv = eval_expr(rule_expr, {arg: float(t)}, registry=self)
                scale = max(abs(fd), abs(rv), 1e-12)
                if abs(fd - rv) > rel_tol * scale:
                    raise EvalError(
                        f"derivative rule for '{name}' disagrees with its "
                        f"profile at t={t}: rule={rv}, finite diff={fd}"
                    )


# --------------------------------------------------------------------------
# numeric evaluation
# --------------------------------------------------------------------------

def eval_expr(e: PhaseExpr, point: Mapping[str, float],
              time: Optional[float] = None,
              registry: Optional[AtomRegistry] = None,
              time_var: str = "t") -> float:
    """Evaluate at a numeric point.  Non-finite results raise, never return."""
    if registry is not None:
        registry.freeze()
    try:
        value = _eval(e, point, time, registry, time_var)
    except ZeroDivisionError:
        raise NonFiniteError("division by zero during evaluation")
    except OverflowError:
        raise NonFiniteError("overflow during evaluation")
    if not math.isfinite(value):
        raise NonFiniteError(f"evaluation produced a non-finite value: {value}")
    return value


def _resolve(name: str, point, time, time_var) -> float:
    if name in point:
        return float(point[name])
    if name == time_var and time is not None:
        return float(time)
    raise UnboundVariableError(f"variable '{name}' is not bound")


def _eval(e, point, time, reg, time_var) -> float:
    if isinstance(e, Num):
        return float(e.value)
    if isinstance(e, Sym):
        return _resolve(e.name, point, time, time_var)
    if isinstance(e, Atom):
        if reg is None:
            raise EvalError(f"no registry supplied for atom '{e.name}'")
        t = _resolve(e.arg, point, time, time_var)
        return reg.profile(e.name).value(e.order, t)
    if isinstance(e, Add):
        return sum(_eval(t, point, time, reg, time_var) for t in e.terms)
    if isinstance(e, Mul):
        out = 1.0
        for f in e.factors:
            out *= _eval(f, point, time, reg, time_var)
        return out
    if isinstance(e, Pow):
        return _eval(e.base, point, time, reg, time_var) ** e.exp
    if isinstance(e, Div):
        return (
            _eval(e.num, point, time, reg, time_var)
            / _eval(e.den, point, time, reg, time_var)
        )
    raise TypeError(f"not a PhaseExpr node: {e!r}")


# --------------------------------------------------------------------------
# charts
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Chart:
    """Ordered canonical pairs; Jacobian convention is coordinates first."""

    pairs: Tuple[Tuple[str, str], ...]
    label: str = ""

    def __post_init__(self):
        names = [v for pair in self.pairs for v in pair]
        if len(set(names)) != len(names):
            raise ValueError("chart variables must be disjoint")

    @property
    def coordinates(self) -> Tuple[str, ...]:
        return tuple(q for q, _ in self.pairs)

    @property
    def momenta(self) -> Tuple[str, ...]:
        return tuple(p for _, p in self.pairs)

    @property
    def variables(self) -> Tuple[str, ...]:
        return self.coordinates + self.momenta

    @property
    def dim(self) -> int:
        return 2 * len(self.pairs)

    def poisson_matrix(self) -> np.ndarray:
        n = len(self.pairs)
        j = np.zeros((2 * n, 2 * n), dtype=int)
        j[:n, n:] = np.eye(n, dtype=int)
        j[n:, :n] = -np.eye(n, dtype=int)
        return j


ORIGINAL_CHART = Chart((("x1", "p1"), ("x2", "p2")), label="original")
EXTENDED_CHART = Chart(
    (("x1_tau", "p1_tau"), ("x2_tau", "p2_tau"), ("t_tau", "p_tau")),
    label="extended",
)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

_OPS = set("+-*/^()'")


def _tokenize(text: str):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                if text[j] == ".":
                    seen_dot = True
                j += 1
            tokens.append(("num", text[i:j], i))
            i = j
            continue
        if c.isalpha():
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("ident", text[i:j], i))
            i = j
            continue
        if c in _OPS:
            tokens.append(("op", c, i))
            i += 1
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str, variables, atom_names):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0
        self.variables = set(variables)
        self.atom_names = set(atom_names)

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, text, pos = self.peek()
        if kind != "op" or text != op:
            raise ParseError(f"expected '{op}'", pos)
        return self.advance()

    def parse(self) -> PhaseExpr:
        e = self.sum()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {text!r}", pos)
        return e

    def sum(self) -> PhaseExpr:
        terms = [self.term()]
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                rhs = self.term()
                if text == "-":
                    rhs = Mul((Num(Fraction(-1)), rhs))
                terms.append(rhs)
            else:
                break
        return terms[0] if len(terms) == 1 else Add(tuple(terms))

    def term(self) -> PhaseExpr:
        out = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                rhs = self.unary()
                out = Mul((out, rhs)) if text == "*" else Div(out, rhs)
            else:
                break
        return out

    def unary(self) -> PhaseExpr:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Mul((Num(Fraction(-1)), self.unary()))
        return self.power()

    def power(self) -> PhaseExpr:
        base = self.primary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text == "^":
                self.advance()
                base = Pow(base, self.exponent())
            else:
                break
        return base

    def exponent(self) -> int:
        kind, text, pos = self.peek()
        if kind == "op" and text == "(":
            self.advance()
            value = self.exponent()
            self.expect_op(")")
            return value
        sign = 1
        if kind == "op" and text == "-":
            self.advance()
            sign = -1
            kind, text, pos = self.peek()
        if kind != "num" or "." in text:
            raise ParseError("exponent must be an integer", pos)
        self.advance()
        return sign * int(text)

    def primary(self) -> PhaseExpr:
        kind, text, pos = self.advance()
        if kind == "num":
            return Num(Fraction(text))
        if kind == "op" and text == "(":
            e = self.sum()
            self.expect_op(")")
            return e
        if kind == "ident":
            order = 0
            while self.peek()[:2] == ("op", "'"):
                self.advance()
                order += 1
            if text in self.atom_names:
                self.expect_op("(")
                akind, aname, apos = self.advance()
                if akind != "ident":
                    raise ParseError("expected a variable as atom argument", apos)
                if aname not in self.variables:
                    raise ParseError(f"unknown identifier '{aname}'", apos)
                self.expect_op(")")
                return Atom(text, order, aname)
            if order:
                raise ParseError(
                    "derivative marks only apply to coefficient atoms", pos
                )
            if text in self.variables:
                nkind, ntext, npos = self.peek()
                if nkind == "op" and ntext == "(":
                    raise ParseError(f"variable '{text}' is not callable", npos)
                return Sym(text)
            raise ParseError(f"unknown identifier '{text}'", pos)
        if kind == "end":
            raise ParseError("unexpected end of input", pos)
        raise ParseError(f"unexpected token {text!r}", pos)


def parse(text: str, variables: Iterable[str] = (),
          atoms: "AtomRegistry | Iterable[str] | None" = None) -> PhaseExpr:
    """Parse an expression; identifiers must be declared up front.

    Grammar: ``+ - * /`` and integer-exponent ``^`` (tightest), unary minus
    between ``^`` and ``* /``, parentheses, and atom application ``f(t)``
    with optional derivative marks ``f'(t)``.
    """
    if isinstance(atoms, AtomRegistry):
        atom_names = atoms.names()
    elif atoms is None:
        atom_names = ()
    else:
        atom_names = tuple(atoms)
    return simplify(_Parser(text, variables, atom_names).parse())


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------

def _render_factor(e: PhaseExpr) -> str:
    if isinstance(e, (Sym, Atom)):
        return render(e)
    if isinstance(e, Num) and e.value >= 0 and e.value.denominator == 1:
        return render(e)
    if isinstance(e, Pow):
        return render(e)
    if isinstance(e, Div):
        return render(e)
    return f"({render(e)})"


def render(e: PhaseExpr) -> str:
    """Grammar-compatible text; ``parse(render(simplify(e)))`` round-trips."""
    if isinstance(e, Num):
        return str(e.value)
    if isinstance(e, Sym):
        return e.name
    if isinstance(e, Atom):
        return e.name + "'" * e.order + f"({e.arg})"
    if isinstance(e, Pow):
        base = e.base
        if isinstance(base, (Sym, Atom)):
            return f"{render(base)}^{e.exp}"
        return f"({render(base)})^{e.exp}"
    if isinstance(e, Mul):
        factors = list(e.factors)
        prefix = ""
        if factors and isinstance(factors[0], Num) and len(factors) > 1:
            c = factors[0].value
            if c < 0:
                prefix = "-"
                c = -c
            if c == 1:
                factors = factors[1:]
            else:
                factors[0] = Num(c)
        body = "*".join(_render_factor(f) for f in factors)
        return prefix + body
    if isinstance(e, Add):
        parts = []
        for i, t in enumerate(e.terms):
            s = render(t)
            if i == 0:
                parts.append(s)
            elif s.startswith("-"):
                parts.append(" - " + s[1:])
            else:
                parts.append(" + " + s)
        return "".join(parts)
    if isinstance(e, Div):
        return f"({render(e.num)})/({render(e.den)})"
    raise TypeError(f"not a PhaseExpr node: {e!r}")
