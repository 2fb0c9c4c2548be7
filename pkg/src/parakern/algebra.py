"""Exact symbolic arithmetic for parametric kernel analysis.

Everything the optimizer reasons about -- resource counter values, case
constraints, machine limits -- lives in this module as exact objects:

* ``Poly``: sparse multivariate polynomial with ``Fraction`` coefficients.
* ``RatFunc``: quotient of two polynomials (used by rate-style counters
  whose denominators are positive over the parameter box).
* ``Constraint``: a relation ``lhs REL rhs`` normalized to ``poly REL 0``
  with REL one of ``<=``, ``<``, ``==``.  Strict and non-strict bounds are
  distinct on purpose: case boundaries depend on it.
* ``ConstraintSystem``: an immutable ordered collection with value-semantics
  ``push`` (every push returns a new system, so branch isolation costs
  nothing and cached verdicts can never go stale).
* ``check_consistency``: decides whether a system has an integer solution
  inside a finite box, returning a witness, a contradiction reason, or an
  honest ``unknown`` when the search budget runs out.

All iteration orders are deterministic so two runs of the optimizer produce
byte-identical artifacts.
"""

from __future__ import annotations

import functools
import itertools
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from typing import Iterable, Iterator, Mapping, Sequence

# A monomial maps variable names to positive integer exponents; stored as a
# tuple of (name, exponent) pairs sorted by name so it can key a dict.
Monomial = tuple[tuple[str, int], ...]

_EMPTY: Monomial = ()


def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    exps: dict[str, int] = dict(a)
    for name, e in b:
        exps[name] = exps.get(name, 0) + e
    return tuple(sorted(exps.items()))


def _mono_degree(m: Monomial) -> int:
    return sum(e for _, e in m)


class Poly:
    """Sparse polynomial over the rationals.

    Terms with zero coefficient are never stored, so structural equality of
    the term dict is semantic equality (``p + q - q == p`` holds exactly).
    """

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[Monomial, Fraction] | None = None):
        self.terms: dict[Monomial, Fraction] = {}
        if terms:
            for mono, coeff in terms.items():
                if coeff != 0:
                    self.terms[mono] = Fraction(coeff)

    # -- constructors -----------------------------------------------------

    @classmethod
    def const(cls, value: int | Fraction) -> "Poly":
        value = Fraction(value)
        return cls({_EMPTY: value}) if value else cls()

    @classmethod
    def var(cls, name: str) -> "Poly":
        return cls({((name, 1),): Fraction(1)})

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other: "Poly | int | Fraction") -> "Poly":
        other = _coerce(other)
        out = dict(self.terms)
        for mono, coeff in other.terms.items():
            new = out.get(mono, Fraction(0)) + coeff
            if new:
                out[mono] = new
            else:
                out.pop(mono, None)
        return Poly(out)

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self) -> "Poly":
        return Poly({m: -c for m, c in self.terms.items()})

    def __sub__(self, other: "Poly | int | Fraction") -> "Poly":
        return self + (-_coerce(other))

    def __rsub__(self, other):
        return _coerce(other) - self

    def __mul__(self, other: "Poly | int | Fraction") -> "Poly":
        other = _coerce(other)
        out: dict[Monomial, Fraction] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                mono = _mono_mul(m1, m2)
                new = out.get(mono, Fraction(0)) + c1 * c2
                if new:
                    out[mono] = new
                else:
                    out.pop(mono, None)
        return Poly(out)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __pow__(self, n: int) -> "Poly":
        if n < 0:
            raise ValueError("negative power of a polynomial")
        result = Poly.const(1)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction)):
            other = Poly.const(other)
        if not isinstance(other, Poly):
            return NotImplemented
        return self.terms == other.terms

    def __hash__(self) -> int:
        return hash(frozenset(self.terms.items()))

    def __bool__(self) -> bool:
        return bool(self.terms)

    # -- queries -----------------------------------------------------------

    def is_constant(self) -> bool:
        return not self.terms or set(self.terms) == {_EMPTY}

    def constant_value(self) -> Fraction:
        if not self.is_constant():
            raise ValueError("polynomial %s is not constant" % self.text())
        return self.terms.get(_EMPTY, Fraction(0))

    def degree(self) -> int:
        return max((_mono_degree(m) for m in self.terms), default=0)

    def variables(self) -> set[str]:
        return {name for mono in self.terms for name, _ in mono}

    def eval(self, assignment: Mapping[str, int | Fraction]) -> Fraction:
        """Evaluate at a point; raises ``KeyError`` for unassigned variables."""
        total = Fraction(0)
        for mono, coeff in self.terms.items():
            prod = coeff
            for name, exp in mono:
                prod *= Fraction(assignment[name]) ** exp
            total += prod
        return total

    def subs(self, assignment: Mapping[str, "Poly | int | Fraction"]) -> "Poly":
        """Substitute polynomials (or constants) for variables."""
        out = Poly()
        for mono, coeff in self.terms.items():
            prod = Poly.const(coeff)
            for name, exp in mono:
                repl = assignment.get(name)
                factor = _coerce(repl) if repl is not None else Poly.var(name)
                prod = prod * factor ** exp
            out = out + prod
        return out

    def coefficient_split(self, name: str) -> tuple["Poly", "Poly"]:
        """Split as ``coeff * name + rest`` when *name* occurs at most linearly.

        Raises ``ValueError`` if *name* appears with exponent > 1.
        """
        coeff = Poly()
        rest = Poly()
        for mono, c in self.terms.items():
            exps = dict(mono)
            e = exps.pop(name, 0)
            reduced = tuple(sorted(exps.items()))
            if e == 0:
                rest = rest + Poly({mono: c})
            elif e == 1:
                coeff = coeff + Poly({reduced: c})
            else:
                raise ValueError("%s occurs nonlinearly in %s" % (name, self.text()))
        return coeff, rest

    # -- ordering and rendering ---------------------------------------------

    def sorted_terms(
        self, order: Sequence[str] | None = None
    ) -> list[tuple[Monomial, Fraction]]:
        """Terms in graded lexicographic order (by *order*, then by name).

        ``order`` is the parameter declaration order; variables missing from
        it sort after declared ones, alphabetically.
        """
        rank = {name: i for i, name in enumerate(order or ())}

        def key(item: tuple[Monomial, Fraction]):
            mono, _ = item
            exps = dict(mono)
            declared = tuple(-exps.get(name, 0) for name in (order or ()))
            extras = tuple(
                sorted((name, -e) for name, e in mono if name not in rank)
            )
            return (-_mono_degree(mono), declared, extras)

        return sorted(self.terms.items(), key=key)

    def text(self, order: Sequence[str] | None = None) -> str:
        """Canonical human-readable form, e.g. ``2*s*B + 2``."""
        if not self.terms:
            return "0"
        pieces: list[str] = []
        for mono, coeff in self.sorted_terms(order):
            factors = []
            for name, exp in _mono_factors(mono, order):
                factors.append(name if exp == 1 else "%s**%d" % (name, exp))
            mag = abs(coeff)
            if not factors:
                body = _frac_text(mag)
            elif mag == 1:
                body = "*".join(factors)
            else:
                body = "*".join([_frac_text(mag)] + factors)
            if not pieces:
                pieces.append(body if coeff > 0 else "-" + body)
            else:
                pieces.append(("+ " if coeff > 0 else "- ") + body)
        return " ".join(pieces)

    def c_text(self, order: Sequence[str] | None = None) -> str:
        """C expression form: powers expanded, products explicit."""
        if not self.terms:
            return "0"
        pieces: list[str] = []
        for mono, coeff in self.sorted_terms(order):
            factors: list[str] = []
            for name, exp in _mono_factors(mono, order):
                factors.extend([name] * exp)
            if coeff.denominator != 1:
                raise ValueError(
                    "cannot render fractional coefficient %s in C" % coeff
                )
            mag = abs(coeff)
            if not factors:
                body = str(mag)
            elif mag == 1:
                body = "*".join(factors)
            else:
                body = "*".join([str(mag)] + factors)
            if not pieces:
                pieces.append(body if coeff > 0 else "-" + body)
            else:
                pieces.append(("+ " if coeff > 0 else "- ") + body)
        return " ".join(pieces)

    def __repr__(self) -> str:
        return "Poly(%s)" % self.text()

    # -- interval arithmetic -------------------------------------------------

    def bounds(self, box: Mapping[str, tuple[int, int]]) -> "Interval":
        """Range of the polynomial over the (nonnegative) box.

        Variables missing from the box are assumed to range over
        ``[0, +inf)``; the upper bound then degrades to ``None`` (unbounded)
        whenever such a variable actually matters.

        Plain monomial-wise interval arithmetic loses correlations between
        occurrences of the same variable (it cannot see 2sB - 2B >= 0 for
        s >= 1), so the range is also computed after translating every
        variable to its box floor (v = lo + v', v' >= 0) and the tighter of
        the two results is returned.
        """
        direct = self._monomial_bounds(box)
        shift: dict[str, Poly] = {}
        shifted_box: dict[str, tuple] = {}
        for name in self.variables():
            lo, hi = box.get(name, (0, None))
            if lo < 0:
                raise ValueError("box for %s has negative floor" % name)
            if lo > 0:
                shift[name] = Poly.var(name) + lo
                shifted_box[name] = (0, None if hi is None else hi - lo)
            else:
                shifted_box[name] = (lo, hi)
        if not shift:
            return direct
        translated = self.subs(shift)._monomial_bounds(shifted_box)
        lo = max(direct.lo, translated.lo)
        uppers = [h for h in (direct.hi, translated.hi) if h is not None]
        return Interval(lo, min(uppers) if uppers else None)

    def _monomial_bounds(self, box: Mapping[str, tuple]) -> "Interval":
        total = Interval(Fraction(0), Fraction(0))
        for mono, coeff in self.terms.items():
            prod = Interval(Fraction(1), Fraction(1))
            for name, exp in mono:
                lo, hi = box.get(name, (0, None))
                v = Interval(
                    Fraction(lo) ** exp,
                    None if hi is None else Fraction(hi) ** exp,
                )
                prod = prod.mul(v)
            total = total.add(prod.scale(coeff))
        return total


def _coerce(value: "Poly | int | Fraction") -> Poly:
    if isinstance(value, Poly):
        return value
    if isinstance(value, (int, Fraction)):
        return Poly.const(value)
    raise TypeError("cannot treat %r as a polynomial" % (value,))


def _mono_factors(
    mono: Monomial, order: Sequence[str] | None
) -> list[tuple[str, int]]:
    rank = {name: i for i, name in enumerate(order or ())}
    return sorted(mono, key=lambda nv: (rank.get(nv[0], len(rank)), nv[0]))


def _frac_text(f: Fraction) -> str:
    return str(f.numerator) if f.denominator == 1 else "%d/%d" % (
        f.numerator,
        f.denominator,
    )


@dataclass(frozen=True)
class Interval:
    """Closed interval with an optional unbounded top (``hi is None``)."""

    lo: Fraction
    hi: Fraction | None

    def add(self, other: "Interval") -> "Interval":
        hi = None if self.hi is None or other.hi is None else self.hi + other.hi
        return Interval(self.lo + other.lo, hi)

    def mul(self, other: "Interval") -> "Interval":
        # Both operands live in [0, +inf) here (nonnegative boxes).
        if self.lo < 0 or other.lo < 0:
            raise ValueError("interval product requires nonnegative operands")
        if self.hi is None or other.hi is None:
            hi = None
            if (self.hi == 0 and self.lo == 0) or (other.hi == 0 and other.lo == 0):
                hi = Fraction(0)
            return Interval(self.lo * other.lo, hi)
        return Interval(self.lo * other.lo, self.hi * other.hi)

    def scale(self, c: Fraction) -> "Interval":
        if c >= 0:
            hi = None if self.hi is None else self.hi * c
            return Interval(self.lo * c, hi)
        if self.hi is None:
            # -inf lower end collapses; represent by a very permissive bound.
            return Interval(_NEG_INF, self.lo * c)
        return Interval(self.hi * c, self.lo * c)


# Sentinel "minus infinity" for scaled unbounded intervals.  Interval floors
# are compared against zero only, so any certainly-below-zero stand-in works;
# keep it as an explicit None-like extreme to stay exact.
_NEG_INF = Fraction(-(10 ** 30))


class RatFunc:
    """Quotient of polynomials, normalized for stable equality.

    Used for performance-style counters.  Denominators must be provably
    positive over whatever box the value is bounded on; ``bounds`` enforces
    that.
    """

    __slots__ = ("num", "den")

    def __init__(self, num: Poly | int | Fraction, den: Poly | int | Fraction = 1):
        num = _coerce(num)
        den = _coerce(den)
        if not den:
            raise ZeroDivisionError("rational function with zero denominator")
        self.num, self.den = _normalize_quotient(num, den)

    def eval(self, assignment: Mapping[str, int | Fraction]) -> Fraction:
        d = self.den.eval(assignment)
        if d == 0:
            raise ZeroDivisionError("denominator vanishes at %r" % (assignment,))
        return self.num.eval(assignment) / d

    def variables(self) -> set[str]:
        return self.num.variables() | self.den.variables()

    def is_polynomial(self) -> bool:
        return self.den.is_constant()

    def bounds(self, box: Mapping[str, tuple[int, int]]) -> Interval:
        dlo = self.den.bounds(box)
        if dlo.lo <= 0:
            raise ValueError(
                "denominator %s not provably positive over box" % self.den.text()
            )
        n = self.num.bounds(box)
        hi = None if n.hi is None else n.hi / dlo.lo
        lo = n.lo / (dlo.hi if n.lo < 0 and dlo.hi is not None else dlo.lo)
        return Interval(lo, hi)

    def text(self, order: Sequence[str] | None = None) -> str:
        if self.den == Poly.const(1):
            return self.num.text(order)
        return "(%s) / (%s)" % (self.num.text(order), self.den.text(order))

    def __eq__(self, other) -> bool:
        if not isinstance(other, RatFunc):
            return NotImplemented
        return self.num == other.num and self.den == other.den

    def __hash__(self) -> int:
        return hash((self.num, self.den))

    def __repr__(self) -> str:
        return "RatFunc(%s)" % self.text()


def _normalize_quotient(num: Poly, den: Poly) -> tuple[Poly, Poly]:
    """Scale so both parts have coprime integer coefficients and the
    denominator's first term (name-sorted) is positive."""
    denoms = [c.denominator for c in num.terms.values()]
    denoms += [c.denominator for c in den.terms.values()]
    lcm = 1
    for d in denoms:
        lcm = lcm * d // gcd(lcm, d)
    num = num * lcm
    den = den * lcm
    ints = [abs(c.numerator) for c in num.terms.values()]
    ints += [abs(c.numerator) for c in den.terms.values()]
    g = 0
    for v in ints:
        g = gcd(g, v)
    if g > 1:
        num = num * Fraction(1, g)
        den = den * Fraction(1, g)
    lead = min(den.terms.items(), key=lambda kv: kv[0])
    if lead[1] < 0:
        num, den = -num, -den
    return num, den


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------

_REL_TEXT = {"le": "<=", "lt": "<", "eq": "=="}


@dataclass(frozen=True)
class Constraint:
    """``lhs REL rhs`` kept both as written (for display) and normalized.

    The normalized form is ``poly REL 0`` with ``poly = lhs - rhs``; equality
    and hashing use only the normalized form so logically identical
    constraints deduplicate.
    """

    lhs: Poly
    rel: str  # 'le' | 'lt' | 'eq'
    rhs: Poly
    initial: bool = False  # true for the ambient hypotheses, hidden in headers

    def __post_init__(self):
        if self.rel not in _REL_TEXT:
            raise ValueError("unknown relation %r" % (self.rel,))

    @functools.cached_property
    def poly(self) -> Poly:
        return self.lhs - self.rhs

    @functools.cached_property
    def key(self) -> tuple[str, frozenset]:
        return (self.rel, frozenset(self.poly.terms.items()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Constraint):
            return NotImplemented
        return self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    def holds(self, assignment: Mapping[str, int | Fraction]) -> bool:
        v = self.poly.eval(assignment)
        if self.rel == "le":
            return v <= 0
        if self.rel == "lt":
            return v < 0
        return v == 0

    def is_trivially_true(self, box: Mapping[str, tuple[int, int]]) -> bool:
        b = self.poly.bounds(box)
        if self.rel == "le":
            return b.hi is not None and b.hi <= 0
        if self.rel == "lt":
            return b.hi is not None and b.hi < 0
        return b.lo == 0 and b.hi == 0

    def negated(self) -> "Constraint":
        """Logical complement (undefined for equalities)."""
        if self.rel == "eq":
            raise ValueError("cannot negate an equality constraint")
        rel = "lt" if self.rel == "le" else "le"
        return Constraint(self.rhs, rel, self.lhs)

    def text(self, order: Sequence[str] | None = None) -> str:
        return "%s %s %s" % (
            self.lhs.text(order),
            _REL_TEXT[self.rel],
            self.rhs.text(order),
        )

    def __repr__(self) -> str:
        return "Constraint(%s)" % self.text()


def le(lhs, rhs, *, initial: bool = False) -> Constraint:
    return Constraint(_coerce(lhs), "le", _coerce(rhs), initial)


def lt(lhs, rhs, *, initial: bool = False) -> Constraint:
    return Constraint(_coerce(lhs), "lt", _coerce(rhs), initial)


def ge(lhs, rhs, *, initial: bool = False) -> Constraint:
    return Constraint(_coerce(rhs), "le", _coerce(lhs), initial)


def gt(lhs, rhs, *, initial: bool = False) -> Constraint:
    return Constraint(_coerce(rhs), "lt", _coerce(lhs), initial)


def eq(lhs, rhs, *, initial: bool = False) -> Constraint:
    return Constraint(_coerce(lhs), "eq", _coerce(rhs), initial)


def bound_value(value: Poly | RatFunc, rel: str, bound: Poly) -> Constraint:
    """Build ``value REL bound`` as a polynomial constraint.

    Rational-function values are cleared by their denominator, which is
    required to be positive over the box (checked later by the consistency
    machinery; construction is purely formal).
    """
    if isinstance(value, RatFunc):
        if value.is_polynomial():
            scale = value.den.constant_value()
            return Constraint(value.num * Fraction(1, scale), rel, bound)
        return Constraint(value.num, rel, bound * value.den)
    return Constraint(_coerce(value), rel, bound)


class ConstraintSystem:
    """Immutable ordered set of constraints.

    ``push`` returns a new system sharing structure with the old one, so the
    optimizer's branch isolation is free.  Duplicate constraints (by
    normalized form) are dropped; insertion order is otherwise preserved,
    which keeps rendering deterministic.
    """

    __slots__ = ("constraints", "_keys")

    def __init__(self, constraints: Iterable[Constraint] = ()):
        items: list[Constraint] = []
        keys: set = set()
        for c in constraints:
            if c.key in keys:
                continue
            keys.add(c.key)
            items.append(c)
        self.constraints: tuple[Constraint, ...] = tuple(items)
        self._keys = frozenset(keys)

    def push(self, *new: Constraint) -> "ConstraintSystem":
        added = [c for c in new if c.key not in self._keys]
        if not added:
            return self
        return ConstraintSystem(self.constraints + tuple(added))

    def __iter__(self) -> Iterator[Constraint]:
        return iter(self.constraints)

    def __len__(self) -> int:
        return len(self.constraints)

    def __contains__(self, c: Constraint) -> bool:
        return c.key in self._keys

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConstraintSystem):
            return NotImplemented
        return self._keys == other._keys

    def __hash__(self) -> int:
        return hash(self._keys)

    def holds(self, assignment: Mapping[str, int | Fraction]) -> bool:
        return all(c.holds(assignment) for c in self.constraints)

    def variables(self) -> set[str]:
        out: set[str] = set()
        for c in self.constraints:
            out |= c.poly.variables()
        return out

    def visible(self) -> tuple[Constraint, ...]:
        """Constraints that belong in a case header (non-initial ones)."""
        return tuple(c for c in self.constraints if not c.initial)

    def text(self, order: Sequence[str] | None = None) -> str:
        return "{%s}" % ", ".join(c.text(order) for c in self.visible())

    def __repr__(self) -> str:
        return "ConstraintSystem(%s)" % self.text()


# ---------------------------------------------------------------------------
# Consistency checking over a finite box
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    """Outcome of a consistency check.

    status 'consistent'   -> witness maps every variable to a value.
    status 'inconsistent' -> reason in {'interval-contradiction',
                             'pairwise-contradiction', 'exhausted-box'}.
    status 'unknown'      -> reason 'budget' (search gave up; no claim).
    """

    status: str
    witness: dict[str, Fraction] | None = None
    reason: str | None = None

    @property
    def is_consistent(self) -> bool:
        return self.status == "consistent"

    @property
    def is_inconsistent(self) -> bool:
        return self.status == "inconsistent"


def refute_by_intervals(
    system: ConstraintSystem,
    box: Mapping[str, tuple[int, int]],
    *,
    verified_prefix: int = 0,
) -> Verdict | None:
    """Search-free refutation: per-constraint ranges, then pairwise sums.

    The pairwise rule: from ``p REL1 0`` and ``q REL2 0`` the sum satisfies
    ``p + q < 0`` if either relation is strict, else ``p + q <= 0``.  If
    interval arithmetic proves the opposite over the box, the pair cannot be
    satisfied together.  This subsumes crossed bounds on a shared quantity
    ({v < a, b <= v} with a <= b gives the constant b - a >= 0) without any
    search.

    ``verified_prefix`` marks how many leading constraints already survived
    this refutation against the same box (systems grow by appending, so a
    child repeats its parent's constraints as a prefix).  Range checks are
    deterministic in the constraint and the box alone, so checks confined to
    the prefix — singles, and pairs drawn entirely from it — cannot fire a
    second time and are skipped; pairs mixing old with new are still checked.
    """
    polys: list[tuple[Poly, str, frozenset, bool]] = []
    for i, c in enumerate(system):
        old = i < verified_prefix
        if not old:
            b = c.poly.bounds(box)
            if c.rel == "le" and b.lo > 0:
                return Verdict("inconsistent", reason="interval-contradiction")
            if c.rel == "lt" and b.lo >= 0:
                return Verdict("inconsistent", reason="interval-contradiction")
            if c.rel == "eq" and (b.lo > 0 or (b.hi is not None and b.hi < 0)):
                return Verdict("inconsistent", reason="interval-contradiction")
        if c.rel != "eq":
            polys.append((c.poly, c.rel, frozenset(c.poly.variables()), old))
    for (p, r1, pv, pold), (q, r2, qv, qold) in itertools.combinations(polys, 2):
        if pold and qold:
            continue
        if not (pv & qv):
            # Disjoint variables make interval addition exact, so the sum's
            # lower bound is lo(p) + lo(q); both are non-positive (each
            # survived its single check, strictly so under 'lt'), hence the
            # pair rule can never fire.  Skipping is behavior-neutral.
            continue
        s = (p + q).bounds(box)
        strict = r1 == "lt" or r2 == "lt"
        if strict and s.lo >= 0:
            return Verdict("inconsistent", reason="pairwise-contradiction")
        if not strict and s.lo > 0:
            return Verdict("inconsistent", reason="pairwise-contradiction")
    return None


def check_consistency(
    system: ConstraintSystem,
    box: Mapping[str, tuple[int, int]],
    *,
    rational_vars: Iterable[str] = (),
    solve_vars: Iterable[str] = (),
    budget: int = 200_000,
    seed: int = 0x5EED,
) -> Verdict:
    """Decide satisfiability of *system* over the integer points of *box*.

    ``rational_vars`` names variables (performance fractions) that instead
    range over the rationals in their box interval.  ``solve_vars`` names
    additional integer variables to solve the same way.  Both kinds are
    found by exact interval intersection once the remaining (sampled)
    integer variables are fixed, which is complete whenever each constraint
    is linear in at most one solved variable — sampling only has to explore
    the rest.

    Pipeline: search-free refutation; heuristic corner points; seeded random
    probing; exhaustive enumeration when the box is small enough.  The
    verdict is exact whenever the sampled integer box fits in *budget*
    points (in particular whenever every variable is solved).
    """
    refuted = refute_by_intervals(system, box)
    if refuted is not None:
        return refuted

    variables = sorted(system.variables())
    unboxed = [v for v in variables if v not in box]
    if unboxed:
        raise ValueError("no box interval for variable(s): %s" % ", ".join(unboxed))
    rational_set = set(rational_vars)
    solved_set = rational_set | set(solve_vars)
    solved = [v for v in variables if v in solved_set]
    integer = [v for v in variables if v not in solved_set]
    solving_is_complete = all(
        len(c.poly.variables() & solved_set) <= 1 for c in system
    )
    gave_up: list[bool] = []  # structural bail-outs poison 'exhausted-box'

    # The linear split of each constraint in each solved variable, and the
    # structural viability checks, depend only on the system and on which
    # names are assigned by the time that variable is solved — never on the
    # sampled values — so hoist them out of the per-point loop.  A None
    # entry replays the bail-out at the same position a point would hit it.
    known = set(integer)
    plan: list[tuple[str, list[tuple[str, Poly | None, Poly | None]]]] = []
    for name in solved:
        entries: list[tuple[str, Poly | None, Poly | None]] = []
        for c in system:
            if name not in c.poly.variables():
                continue
            try:
                coeff, rest = c.poly.coefficient_split(name)
            except ValueError:  # nonlinear in a solved var
                entries.append((c.rel, None, None))
                continue
            if name in coeff.variables() or any(
                v not in known and v != name
                for v in coeff.variables() | rest.variables()
            ):
                entries.append((c.rel, None, None))
                continue
            entries.append((c.rel, coeff, rest))
        plan.append((name, entries))
        known.add(name)

    def finish(point: dict[str, Fraction]) -> dict[str, Fraction] | None:
        """Solve the designated variables by exact interval intersection."""
        full = dict(point)
        for name, entries in plan:
            lo = Fraction(box[name][0])
            hi = Fraction(box[name][1])
            strict_lo = strict_hi = False
            for rel, coeff, rest in entries:
                if coeff is None:
                    gave_up.append(True)
                    return None
                a = coeff.eval(full)
                b = rest.eval(full)
                if a == 0:
                    ok = (b <= 0) if rel == "le" else (b < 0) if rel == "lt" else b == 0
                    if not ok:
                        return None
                    continue
                if rel == "eq":
                    v = -b / a
                    if v < lo or v > hi:
                        return None
                    lo = hi = v
                    continue
                bound = -b / a
                if a > 0:  # a*name + b REL 0  ->  name REL bound
                    if bound < hi or (bound == hi and rel == "lt"):
                        hi = bound
                        strict_hi = rel == "lt"
                else:
                    if bound > lo or (bound == lo and rel == "lt"):
                        lo = bound
                        strict_lo = rel == "lt"
            if lo > hi or (lo == hi and (strict_lo or strict_hi)):
                return None
            if name in rational_set:
                if strict_lo or strict_hi:
                    full[name] = (lo + hi) / 2
                else:
                    full[name] = lo
            else:
                # integer variable: the smallest integer inside the interval
                low = math.floor(lo) + 1 if strict_lo else math.ceil(lo)
                high = math.ceil(hi) - 1 if strict_hi else math.floor(hi)
                if low > high:
                    return None
                full[name] = Fraction(low)
        # Exact final check over every constraint.
        return full if system.holds(full) else None

    def try_point(values: Sequence[int]) -> dict[str, Fraction] | None:
        point = {name: Fraction(v) for name, v in zip(integer, values)}
        return finish(point)

    if not integer:
        got = finish({})
        if got is not None:
            return Verdict("consistent", witness=got)
        if solving_is_complete and not gave_up:
            return Verdict("inconsistent", reason="exhausted-box")
        return Verdict("unknown", reason="budget")

    # Phase 1: heuristic candidates per variable.
    candidates: list[list[int]] = []
    for name in integer:
        lo, hi = box[name]
        cand = {lo, lo + 1, lo + 2, lo + 4, lo + 8, (lo + hi) // 2, hi - 1, hi}
        candidates.append(sorted(v for v in cand if lo <= v <= hi))
    tried = 0
    total_heuristic = 1
    for c in candidates:
        total_heuristic *= len(c)
    if total_heuristic <= max(budget // 4, 4096):
        for values in itertools.product(*candidates):
            got = try_point(values)
            tried += 1
            if got is not None:
                return Verdict("consistent", witness=got)
    else:
        rng0 = random.Random(seed ^ 0xC0FFEE)
        for _ in range(4096):
            values = [c[rng0.randrange(len(c))] for c in candidates]
            got = try_point(values)
            tried += 1
            if got is not None:
                return Verdict("consistent", witness=got)

    # Phase 2: seeded random probing (reproducible).
    rng = random.Random(seed)
    probes = max(budget // 8, 1024)
    for _ in range(probes):
        values = []
        for name in integer:
            lo, hi = box[name]
            if hi - lo > 64 and rng.random() < 0.5:
                # bias toward the low end, where small-parameter regimes live
                span = hi - lo
                values.append(min(hi, lo + int(span ** rng.random())))
            else:
                values.append(rng.randint(lo, hi))
        got = try_point(values)
        tried += 1
        if got is not None:
            return Verdict("consistent", witness=got)

    # Phase 3: exhaustive sweep if the integer box is small enough.
    size = 1
    for name in integer:
        lo, hi = box[name]
        size *= hi - lo + 1
        if size > budget:
            break
    if size <= budget:
        ranges = [range(box[name][0], box[name][1] + 1) for name in integer]
        for values in itertools.product(*ranges):
            got = try_point(values)
            if got is not None:
                return Verdict("consistent", witness=got)
        if solving_is_complete and not gave_up:
            return Verdict("inconsistent", reason="exhausted-box")

    return Verdict("unknown", reason="budget")


def implied_by(
    constraint: Constraint,
    others: Iterable[Constraint],
    box: Mapping[str, tuple[int, int]],
) -> bool:
    """True when *others* together with the box force *constraint*.

    Decided by refuting ``others + not(constraint)`` with the search-free
    rules only, so it is fast, deterministic, and sound (never prunes a
    constraint that actually narrows the case).
    """
    if constraint.rel == "eq":
        return False
    trial = ConstraintSystem(tuple(others) + (constraint.negated(),))
    refuted = refute_by_intervals(trial, box)
    return refuted is not None
