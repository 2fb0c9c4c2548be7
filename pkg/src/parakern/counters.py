"""Hardware resource counters evaluated symbolically on a scheduled program.

Each counter produces an exact value -- a polynomial (resource counters) or
a rational function (performance counters) in the program's parameters --
that the optimizer compares against a machine limit.

Measures:

* ``shared-words``: words of fast per-block storage needed to cache the
  declared arrays.  Computed by interval analysis of the affine accesses of
  one thread block: per cached array and per exclusive branch context, the
  merged read intervals and merged write intervals are counted separately
  and their extents summed (a buffered stencil keeps its read window and
  write window distinct even where they overlap in the array); the value is
  the max across contexts and the sum over arrays.  Flat subscripts of the
  form ``P*row + col`` over a data parameter ``P`` are delinearized into a
  2-D tile when both halves vary within the block, making the footprint the
  product of the two tile extents.
* ``registers-per-thread``: peak number of simultaneously live virtual
  registers of the lowered thread body (see ``model.compute_liveness``).
* ``threads-per-block``: product of the thread-loop bounds.
* ``occupancy``: performance-style ratio ``R_file / (regs * threads *
  warp_slots)`` before clamping; its denominator is positive over any box
  that keeps thread counts at least 1.

Symbolic interval merging is conservative: two intervals merge only when
adjacency (``lo2 <= hi1 + 1``) is provable by interval arithmetic over the
parameter box; otherwise their extents simply add.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping

from . import dsl
from .algebra import Poly, RatFunc
from .dsl import Assign, Expr, Index, Local, NotPolynomial, expr_to_poly
from .model import (
    BlockRun,
    BranchRegion,
    LoopRegion,
    Region,
    SeqRegion,
    SourceCfg,
)


class CounterError(Exception):
    """The program is outside the fragment a counter can analyze."""


@dataclass(frozen=True)
class CounterSpec:
    """One enabled counter: what it measures and which limit bounds it."""

    name: str
    measure: str  # shared-words | registers-per-thread | threads-per-block | occupancy
    bound: str  # machine parameter receiving the comparison
    kind: str  # 'resource' | 'performance'
    reduce_with: tuple[str, ...]  # strategies that can lower this counter
    options: dict = field(default_factory=dict)


MEASURES = ("shared-words", "registers-per-thread", "threads-per-block", "occupancy")

Box = Mapping[str, tuple[int, int]]


# ---------------------------------------------------------------------------
# Access collection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Access:
    array: str
    subs: tuple  # inlined subscript expressions
    mode: str  # 'r' | 'w'
    profile: tuple  # ((branch_id, arm), ...) for invariant branches above it
    domain: tuple  # ((serial var, bound Expr), ...) active at this access


def _inline(e: Expr, env: dict[str, Expr]) -> Expr:
    return dsl._substitute_expr(e, env)


def _collect_accesses(
    cfg: SourceCfg, invariant_names: set[str]
) -> tuple[list[_Access], list]:
    """All array accesses of one block, with locals inlined away.

    Returns the accesses and the list of invariant branch conditions (their
    index is the branch id used in access profiles).
    """
    accesses: list[_Access] = []
    branches: list = []

    def record_exprs(e: Expr, env, profile, domain, mode_override=None):
        if isinstance(e, Index):
            inlined = tuple(_inline(s, env) for s in e.subs)
            accesses.append(
                _Access(e.array, inlined, mode_override or "r", profile, domain)
            )
            for s in e.subs:
                record_exprs(s, env, profile, domain)
        elif isinstance(e, dsl.Bin):
            record_exprs(e.left, env, profile, domain)
            record_exprs(e.right, env, profile, domain)

    def go(region: Region, env: dict, profile: tuple, domain: tuple):
        if isinstance(region, BlockRun):
            for stmt in region.stmts:
                if isinstance(stmt, Local):
                    record_exprs(stmt.value, env, profile, domain)
                    env = dict(env)
                    env[stmt.name] = _inline(stmt.value, env)
                elif isinstance(stmt, Assign):
                    record_exprs(stmt.value, env, profile, domain)
                    if isinstance(stmt.target, Index):
                        inlined = tuple(_inline(s, env) for s in stmt.target.subs)
                        accesses.append(
                            _Access(stmt.target.array, inlined, "w", profile, domain)
                        )
                        for s in stmt.target.subs:
                            record_exprs(s, env, profile, domain)
                    else:
                        env = dict(env)
                        env[stmt.target.ident] = _inline(stmt.value, env)
            return env
        if isinstance(region, SeqRegion):
            for part in region.parts:
                env = go(part, env, profile, domain)
            return env
        if isinstance(region, LoopRegion):
            go(region.body, env, profile, domain + ((region.var, region.bound),))
            return env
        if isinstance(region, BranchRegion):
            cond_names = _cond_names(region.cond, env)
            if cond_names <= invariant_names:
                bid = len(branches)
                branches.append(region.cond)
                go(region.then, env, profile + ((bid, 0),), domain)
                if region.orelse is not None:
                    go(region.orelse, env, profile + ((bid, 1),), domain)
            else:
                # block-varying condition: both arms contribute to every
                # context this branch sits in
                go(region.then, env, profile, domain)
                if region.orelse is not None:
                    go(region.orelse, env, profile, domain)
            return env
        raise TypeError("unknown region %r" % (region,))

    go(cfg.body, {}, (), ())
    return accesses, branches


def _cond_names(cond, env) -> set[str]:
    names: set[str] = set()

    def walk(e):
        if isinstance(e, dsl.Name):
            names.add(e.ident)
        elif isinstance(e, dsl.Bin):
            walk(e.left)
            walk(e.right)
        elif isinstance(e, dsl.Index):
            names.add(e.array)
            for s in e.subs:
                walk(s)
        elif isinstance(e, dsl.Cmp):
            walk(_inline(e.left, env))
            walk(_inline(e.right, env))
        elif isinstance(e, dsl.And):
            for p in e.parts:
                walk(p)

    walk(cond)
    return names


# ---------------------------------------------------------------------------
# Affine intervals
# ---------------------------------------------------------------------------


def _affine_interval(
    poly: Poly, domain: dict[str, Poly], box: Box
) -> tuple[Poly, Poly]:
    """[min, max] of an affine expression as the domain variables sweep
    ``0 .. bound-1``; raises ``CounterError`` for nonaffine or sign-ambiguous
    strides."""
    rest = poly
    lo = Poly()
    hi = Poly()
    for var in sorted(domain):
        try:
            coeff, rest = rest.coefficient_split(var)
        except ValueError as exc:
            raise CounterError(str(exc))
        if not coeff:
            continue
        if coeff.variables() & set(domain):
            raise CounterError(
                "cross term between block-local variables in %s" % poly.text()
            )
        span = coeff * (domain[var] - 1)
        b = coeff.bounds(box)
        if b.lo >= 0:
            hi = hi + span
        elif b.hi is not None and b.hi <= 0:
            lo = lo + span
        else:
            raise CounterError(
                "cannot determine the sign of stride %s in %s"
                % (coeff.text(), poly.text())
            )
    if rest.variables() & set(domain):
        raise CounterError("nonaffine use of block-local variables in %s" % poly.text())
    return rest + lo, rest + hi


@dataclass(frozen=True)
class Piece:
    """One allocated stretch of a cached array: dims of (lo, hi, extent).

    For two-dimensional pieces, ``stride`` is the global row pitch: the flat
    address of element (r, c) is r*stride + c.  One-dimensional pieces
    address the array directly and carry no stride."""

    dims: tuple  # ((lo, hi, extent) Polys, ...) -- 1 or 2 entries
    stride: Poly | None = None

    @property
    def extent(self) -> Poly:
        total = Poly.const(1)
        for _, _, e in self.dims:
            total = total * e
        return total


def _access_piece(
    access: _Access,
    arrays: Mapping[str, tuple],
    data_params: tuple[str, ...],
    thread_domain: dict[str, Poly],
    box: Box,
) -> Piece:
    domain = dict(thread_domain)
    for var, bound in access.domain:
        domain[var] = _bound_poly(bound)
    subs = []
    for s in access.subs:
        try:
            subs.append(expr_to_poly(s))
        except NotPolynomial as exc:
            raise CounterError(
                "subscript of %r is not polynomial: %s" % (access.array, exc)
            )
    if len(subs) == 2:
        dims = []
        for q in subs:
            lo, hi = _affine_interval(q, domain, box)
            dims.append((lo, hi, hi - lo + 1))
        pitch = expr_to_poly(arrays[access.array][1])
        return Piece(tuple(dims), stride=pitch)
    (q,) = subs
    # try delinearization P*row + col over each data parameter
    for p in data_params:
        try:
            row, col = q.coefficient_split(p)
        except ValueError:
            continue
        if not row:
            continue
        if p in col.variables():
            continue
        if (row.variables() & set(domain)) and (col.variables() & set(domain)):
            rlo, rhi = _affine_interval(row, domain, box)
            clo, chi = _affine_interval(col, domain, box)
            return Piece(
                ((rlo, rhi, rhi - rlo + 1), (clo, chi, chi - clo + 1)),
                stride=Poly.var(p),
            )
    lo, hi = _affine_interval(q, domain, box)
    return Piece(((lo, hi, hi - lo + 1),))


def _bound_poly(bound: Expr) -> Poly:
    try:
        return expr_to_poly(bound)
    except NotPolynomial as exc:
        raise CounterError("loop bound %s is not polynomial" % dsl.render_expr(bound))


# ---------------------------------------------------------------------------
# Pool merging
# ---------------------------------------------------------------------------


def _provably(poly: Poly, rel: str, box: Box) -> bool:
    b = poly.bounds(box)
    if rel == "<=0":
        return b.hi is not None and b.hi <= 0
    if rel == ">=0":
        return b.lo >= 0
    raise ValueError(rel)


def _floor_point(polys: list[Poly], box: Box) -> dict[str, int]:
    point: dict[str, int] = {}
    for p in polys:
        for v in p.variables():
            point.setdefault(v, box.get(v, (0, 0))[0])
    return point


def _merge_1d(
    pieces: list[tuple[Poly, Poly]], box: Box
) -> list[tuple[Poly, Poly]]:
    """Coalesce provably adjacent/overlapping [lo, hi] intervals."""
    uniq: list[tuple[Poly, Poly]] = []
    seen = set()
    for lo, hi in pieces:
        key = (hash(lo), hash(hi), lo.text(), hi.text())
        if key not in seen:
            seen.add(key)
            uniq.append((lo, hi))
    point = _floor_point([p for pair in uniq for p in pair], box)
    uniq.sort(key=lambda pair: (pair[0].eval(point), pair[0].text(), pair[1].text()))
    merged: list[tuple[Poly, Poly]] = []
    for lo, hi in uniq:
        if merged:
            plo, phi = merged[-1]
            if _provably(lo - phi - 1, "<=0", box):  # lo <= phi + 1
                if _provably(hi - phi, "<=0", box):  # contained
                    continue
                if _provably(phi - hi, "<=0", box):  # extends to hi
                    merged[-1] = (plo, hi)
                    continue
                # incomparable tops: keep both, extents will add
        merged.append((lo, hi))
    return merged


def _merge_pool(pieces: list[Piece], box: Box) -> list[Piece]:
    if not pieces:
        return []
    ndims = {len(p.dims) for p in pieces}
    if len(ndims) != 1:
        raise CounterError("mixed 1-D and delinearized accesses in one pool")
    if ndims == {1}:
        merged = _merge_1d([(p.dims[0][0], p.dims[0][1]) for p in pieces], box)
        return [Piece(((lo, hi, hi - lo + 1),)) for lo, hi in merged]
    # 2-D tiles: merge along one axis when the other matches exactly
    uniq: list[Piece] = []
    seen = set()
    for p in pieces:
        key = tuple((lo.text(), hi.text()) for lo, hi, _ in p.dims)
        if key not in seen:
            seen.add(key)
            uniq.append(p)
    if len(uniq) == 1:
        return uniq
    strides = {p.stride.text() if p.stride is not None else None for p in uniq}
    if len(strides) != 1:
        return uniq  # differently addressed tiles never merge
    stride = uniq[0].stride
    rows = {tuple((d[0].text(), d[1].text()) for d in (p.dims[0],)) for p in uniq}
    cols = {tuple((d[0].text(), d[1].text()) for d in (p.dims[1],)) for p in uniq}
    if len(rows) == 1:
        merged = _merge_1d([(p.dims[1][0], p.dims[1][1]) for p in uniq], box)
        row = uniq[0].dims[0]
        return [Piece((row, (lo, hi, hi - lo + 1)), stride=stride) for lo, hi in merged]
    if len(cols) == 1:
        merged = _merge_1d([(p.dims[0][0], p.dims[0][1]) for p in uniq], box)
        col = uniq[0].dims[1]
        return [Piece(((lo, hi, hi - lo + 1), col), stride=stride) for lo, hi in merged]
    return uniq


# ---------------------------------------------------------------------------
# Footprint layout
# ---------------------------------------------------------------------------


@dataclass
class PoolLayout:
    reads: list[Piece]
    writes: list[Piece]

    @property
    def extent(self) -> Poly:
        total = Poly()
        for p in self.reads + self.writes:
            total = total + p.extent
        return total


@dataclass
class ArrayFootprint:
    array: str
    per_profile: dict  # profile tuple -> PoolLayout
    extent: Poly  # max over profiles


@dataclass
class FootprintLayout:
    arrays: list[ArrayFootprint]  # cache clause order
    branches: list  # invariant branch conditions, by branch id
    total: Poly


def footprint_layout(cfg: SourceCfg, table: dsl.ParamTable, box: Box) -> FootprintLayout:
    """Shared-storage footprint of one thread block, with per-array layout."""
    if not cfg.cache:
        return FootprintLayout([], [], Poly())
    invariant = set(table.order) | {b for b, _ in table.bindings}
    invariant |= {loop.var for loop in cfg.context}
    invariant |= {m.var for m in cfg.grid}
    accesses, branches = _collect_accesses(cfg, invariant)
    thread_domain = {m.var: _bound_poly(m.bound) for m in cfg.thread}

    profiles: list[tuple] = [()]
    for bid in range(len(branches)):
        profiles = [p + ((bid, arm),) for p in profiles for arm in (0, 1)]

    out: list[ArrayFootprint] = []
    total = Poly()
    for array in cfg.cache:
        if array not in table.arrays:
            raise CounterError("cache clause names unknown array %r" % array)
        per_profile: dict = {}
        for profile in profiles:
            chosen = dict(profile)
            reads: list[Piece] = []
            writes: list[Piece] = []
            for a in accesses:
                if a.array != array:
                    continue
                if any(chosen.get(b) != arm for b, arm in a.profile):
                    continue
                piece = _access_piece(
                    a, table.arrays, table.data, thread_domain, box
                )
                (reads if a.mode == "r" else writes).append(piece)
            per_profile[profile] = PoolLayout(
                _merge_pool(reads, box), _merge_pool(writes, box)
            )
        extent = _max_over_profiles(
            [layout.extent for layout in per_profile.values()], box
        )
        out.append(ArrayFootprint(array, per_profile, extent))
        total = total + extent

    stray = total.variables() - set(table.order)
    if stray:
        raise CounterError(
            "footprint does not reduce to the parameters (stray: %s)"
            % ", ".join(sorted(stray))
        )
    return FootprintLayout(out, branches, total)


def _max_over_profiles(values: list[Poly], box: Box) -> Poly:
    best = values[0]
    for v in values[1:]:
        if _provably(best - v, "<=0", box):
            best = v
        elif _provably(v - best, "<=0", box):
            continue
        else:
            raise CounterError(
                "branch footprints %s and %s are not comparable over the box"
                % (best.text(), v.text())
            )
    return best


# ---------------------------------------------------------------------------
# Counter evaluation
# ---------------------------------------------------------------------------


def eval_counter(
    spec: CounterSpec,
    cfg: SourceCfg,
    table: dsl.ParamTable,
    box: Box,
    ir_provider: Callable[[], object],
) -> Poly | RatFunc:
    """Value of one counter on one program state.

    ``ir_provider`` lazily supplies the lowered (and strategy-replayed) IR
    so that source-only counters never pay for lowering.
    """
    if spec.measure == "shared-words":
        return footprint_layout(cfg, table, box).total
    if spec.measure == "threads-per-block":
        threads = Poly.const(1)
        for m in cfg.thread:
            threads = threads * _bound_poly(m.bound)
        return threads
    if spec.measure == "registers-per-thread":
        from .model import compute_liveness

        live = compute_liveness(ir_provider())
        overhead = int(spec.options.get("overhead", 0))
        return Poly.const(live.maxlive + overhead)
    if spec.measure == "occupancy":
        from .model import compute_liveness

        reg_file = spec.options.get("register_file")
        if not reg_file:
            raise CounterError("occupancy counter needs a register_file option")
        warp_slots = int(spec.options.get("warp_slots", 48))
        live = compute_liveness(ir_provider())
        threads = Poly.const(1)
        for m in cfg.thread:
            threads = threads * _bound_poly(m.bound)
        den = threads * (live.maxlive or 1) * warp_slots
        return RatFunc(Poly.var(reg_file), den)
    raise CounterError("unknown measure %r" % spec.measure)
