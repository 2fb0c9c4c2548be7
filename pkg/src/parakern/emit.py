"""Artifact rendering for a finished optimization run.

Four artifact kinds per run:

* ``<name>.case<i>.cu`` — one CUDA-style kernel per case.  Grid loops
  become block indices with a grid-stride loop capped at the configured
  stride, thread loops become thread indices, and each cached array turns
  into a shared-array declaration, cooperative load loops, barriers, and a
  write-back sweep.  All scalar parameters stay symbolic kernel arguments;
  the only baked-in number is the grid-stride cap.
* ``<name>.report.txt`` — the human-readable case discussion: constraint
  header, decision trail, and optimized source per case.
* ``<name>.tree.json`` — the full decision tree as data.
* ``<name>.tree.dot`` — the tree as a Graphviz graph (accept edges are
  hinted to render toward the south-east).

Shared-array extents are compile-time macros derived from the same
polynomials the counter analysis computed, with runtime asserts checking
the macro values against the actual kernel arguments; supplying the macro
values at build time is the caller's responsibility.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from . import counters as counters_mod
from . import dsl, model
from .algebra import Poly, RatFunc
from .counters import Piece, PoolLayout, footprint_layout
from .engine import Case, DecisionTree, Node, OptimizationResult, case_header

INDENT = "    "


class EmitError(Exception):
    """The program shape cannot be rendered as a kernel."""


@dataclass
class KernelText:
    preamble: str  # macro guards + extent macros
    kernel: str  # __global__ function
    launch: str  # host-side launch stanza

    @property
    def text(self) -> str:
        parts = [p for p in (self.preamble, self.kernel, self.launch) if p]
        return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# Expression rendering (C text with per-array subscript rewriting)
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "%": 2}


def _c_expr(e, index_fn, parent_prec: int = 0, right: bool = False) -> str:
    if isinstance(e, dsl.Num):
        return str(e.value)
    if isinstance(e, dsl.Name):
        return e.ident
    if isinstance(e, dsl.Bin):
        prec = _PREC[e.op]
        left = _c_expr(e.left, index_fn, prec, False)
        rite = _c_expr(e.right, index_fn, prec, True)
        text = f"{left} {e.op} {rite}"
        needs = prec < parent_prec or (
            prec == parent_prec and (right or e.op in ("/", "%", "-"))
        )
        return f"({text})" if needs else text
    if isinstance(e, dsl.Index):
        return index_fn(e)
    raise EmitError("cannot render expression %r" % (e,))


def _c_cond(c, index_fn) -> str:
    if isinstance(c, dsl.Cmp):
        return "%s %s %s" % (
            _c_expr(c.left, index_fn, 3),
            c.op,
            _c_expr(c.right, index_fn, 3),
        )
    if isinstance(c, dsl.And):
        return " && ".join(_c_cond(p, index_fn) for p in c.parts)
    raise EmitError("cannot render condition %r" % (c,))


def _paren(text: str) -> str:
    """Wrap unless the text is already atomic (identifier or literal)."""
    return text if re.fullmatch(r"\w+", text) else f"({text})"


def _poly_c(p: Poly) -> str:
    return _paren(p.c_text())


# ---------------------------------------------------------------------------
# Shared-memory layout bookkeeping
# ---------------------------------------------------------------------------


@dataclass
class _Slot:
    """One pool piece placed at a fixed offset in an array's shared copy."""

    piece: Piece
    offset: Poly
    mode: str  # 'r' | 'w'


def _profile_slots(pool: PoolLayout) -> list[_Slot]:
    slots: list[_Slot] = []
    offset = Poly()
    for mode, pieces in (("r", pool.reads), ("w", pool.writes)):
        for piece in pieces:
            slots.append(_Slot(piece, offset, mode))
            offset = offset + piece.extent
    return slots


def _contains(outer: Piece, inner: Piece, box) -> bool:
    if len(outer.dims) != len(inner.dims):
        return False
    for (olo, ohi, _), (ilo, ihi, _) in zip(outer.dims, inner.dims):
        if not counters_mod._provably(olo - ilo, "<=0", box):
            return False
        if not counters_mod._provably(ihi - ohi, "<=0", box):
            return False
    return True


class _SharedIndexer:
    """Rewrites body accesses to cached arrays into shared-copy subscripts.

    Mirrors the footprint analysis walk: locals are inlined, serial loop
    domains tracked, and invariant branches select the active layout
    profile, so every access lands in exactly the pool piece the counter
    analysis allocated for it."""

    def __init__(self, layout, table: dsl.ParamTable, cfg: model.SourceCfg, box):
        self.layout = {af.array: af for af in layout.arrays}
        self.branches = layout.branches
        self.table = table
        self.box = box
        self.thread_domain = {
            m.var: counters_mod._bound_poly(m.bound) for m in cfg.thread
        }
        self.invariant = (
            set(table.order)
            | {b for b, _ in table.bindings}
            | {loop.var for loop in cfg.context}
            | {m.var for m in cfg.grid}
        )
        self.env: dict[str, dsl.Expr] = {}
        self.domain: tuple = ()
        self.profile: tuple = ()

    # -- walk state -------------------------------------------------------

    def bind_local(self, name: str, value: dsl.Expr) -> None:
        self.env = dict(self.env)
        self.env[name] = counters_mod._inline(value, self.env)

    def branch_arm(self, cond) -> int | None:
        """Invariant-branch id when the condition is block-invariant."""
        if counters_mod._cond_names(cond, self.env) <= self.invariant:
            for bid, known in enumerate(self.branches):
                if known == cond:
                    return bid
            # invariant but unseen (cache-free program): no profile to track
        return None

    def is_cached(self, array: str) -> bool:
        return array in self.layout

    # -- the rewrite ------------------------------------------------------

    def shared_name(self, array: str) -> str:
        return f"{array}_sh"

    def rewrite(self, e: dsl.Index, mode: str, index_fn) -> str:
        slot, acc = self._locate(e, mode)
        piece = slot.piece
        off = slot.offset
        name = self.shared_name(e.array)
        if len(piece.dims) == 1:
            lo = piece.dims[0][0]
            sub = _c_expr(e.subs[0], index_fn, 1)
            text = f"{sub} - {_poly_c(lo)}"
        else:
            (rlo, _, _), (clo, _, cext) = piece.dims
            if len(e.subs) == 2:
                row = _c_expr(e.subs[0], index_fn, 1)
                col = _c_expr(e.subs[1], index_fn, 1)
            else:
                rowp, colp = self._split_flat(acc)
                row, col = _poly_c(rowp), _poly_c(colp)
            text = (
                f"({_paren(row)} - {_poly_c(rlo)}) * {_poly_c(cext)}"
                f" + {_paren(col)} - {_poly_c(clo)}"
            )
        if off:
            text = f"{text} + {_poly_c(off)}"
        return f"{name}[{text}]"

    def _locate(self, e: dsl.Index, mode: str) -> tuple[_Slot, counters_mod._Access]:
        acc = counters_mod._Access(
            e.array,
            tuple(counters_mod._inline(s, self.env) for s in e.subs),
            mode,
            self.profile,
            self.domain,
        )
        piece = counters_mod._access_piece(
            acc, self.table.arrays, self.table.data, self.thread_domain, self.box
        )
        af = self.layout[e.array]
        pool = af.per_profile[self._full_profile()]
        slots = _profile_slots(pool)
        ordered = slots if mode == "r" else list(reversed(slots))
        for slot in ordered:
            if _contains(slot.piece, piece, self.box):
                return slot, acc
        raise EmitError(
            "access %s[%s] falls outside every cached piece"
            % (e.array, ", ".join(dsl.render_expr(s) for s in e.subs))
        )

    def _full_profile(self) -> tuple:
        """The active profile extended to every branch id (branches not on
        the current path cannot guard accesses reached from here, so any
        completion selects the same pieces; use arm 0)."""
        chosen = dict(self.profile)
        return tuple((bid, chosen.get(bid, 0)) for bid in range(len(self.branches)))

    def _split_flat(self, acc: counters_mod._Access):
        """Row/column polynomials of a flat delinearized subscript."""
        (sub,) = acc.subs
        q = dsl.expr_to_poly(sub)
        piece = counters_mod._access_piece(
            acc, self.table.arrays, self.table.data, self.thread_domain, self.box
        )
        stride_vars = piece.stride.variables() if piece.stride is not None else set()
        for p in stride_vars:
            row, col = q.coefficient_split(p)
            if row and p not in col.variables():
                return row, col
        raise EmitError("cannot delinearize subscript %s" % dsl.render_expr(sub))


# ---------------------------------------------------------------------------
# Kernel emission
# ---------------------------------------------------------------------------


def _macro(name: str) -> str:
    return "PK_" + name


def _macroize(p: Poly) -> str:
    return _paren(p.subs({v: Poly.var(_macro(v)) for v in p.variables()}).c_text())


def emit_kernel(case: Case, machine, *, name: str) -> KernelText:
    """Render one case's program as a CUDA-style kernel plus launch stanza."""
    program = case.program
    table = dsl.classify_parameters(program)
    cfg = model.build_source_cfg(program)
    if len(cfg.grid) > 2 or len(cfg.thread) > 2:
        raise EmitError(
            "at most 2 grid and 2 thread dimensions supported (got %d grid, %d thread)"
            % (len(cfg.grid), len(cfg.thread))
        )
    box = machine.box(table.order)
    layout = footprint_layout(cfg, table, box)
    cached = [af for af in layout.arrays if af.extent]
    indexer = _SharedIndexer(layout, table, cfg, box) if cached else None

    fn = _kernel_symbol(name, case.index)
    arrays_used = _arrays_referenced(cfg, table)
    scalars = _scalar_formals(cfg, table)
    formals = ", ".join(
        [f"int *{a}" for a in arrays_used] + [f"int {s}" for s in scalars]
    )

    # global-memory subscripts: flat arrays index directly, 2-D row-major
    def global_index(e: dsl.Index) -> str:
        dims = table.arrays[e.array]
        if len(e.subs) == 1:
            return f"{e.array}[{_c_expr(e.subs[0], global_index)}]"
        pitch = _c_expr(dims[1], global_index, 2)
        row = _c_expr(e.subs[0], global_index, 2)
        col = _c_expr(e.subs[1], global_index, 1)
        return f"{e.array}[{row} * {_paren(pitch)} + {col}]"

    def index_fn(e: dsl.Index, mode: str = "r") -> str:
        if indexer is not None and indexer.is_cached(e.array):
            return indexer.rewrite(e, mode, lambda x: index_fn(x, "r"))
        return global_index(e)

    lines: list[str] = []
    lines.append(f"__global__ void {fn}({formals})")
    lines.append("{")
    pad = INDENT

    macro_params = sorted(
        set().union(*(af.extent.variables() for af in cached)) if cached else set()
    )
    if macro_params:
        checks = " && ".join(f"{_macro(v)} == {v}" for v in macro_params)
        lines.append(pad + f"assert({checks});")
    for af in cached:
        lines.append(pad + f"__shared__ int {af.array}_sh[{_macro('EXT_' + af.array.upper())}];")

    thread_ids = ("threadIdx.x",) if len(cfg.thread) == 1 else ("threadIdx.y", "threadIdx.x")
    for m, tid in zip(cfg.thread, thread_ids):
        lines.append(pad + f"const int {m.var} = (int)" + tid + ";")
    if cached:
        if len(cfg.thread) == 1:
            flat = cfg.thread[0].var
        else:
            inner_bound = _c_expr(cfg.thread[1].bound, global_index, 2)
            flat = f"{cfg.thread[0].var} * {_paren(inner_bound)} + {cfg.thread[1].var}"
        lines.append(pad + f"const int pk_tid = {flat};")
        nthreads = " * ".join(
            _paren(_c_expr(m.bound, global_index, 2)) for m in cfg.thread
        )
        lines.append(pad + f"const int pk_nthreads = {nthreads};")
    lines.append("")

    grid_ids = ("blockIdx.x",) if len(cfg.grid) == 1 else ("blockIdx.y", "blockIdx.x")
    for m, bid in zip(cfg.grid, grid_ids):
        bound = _c_expr(m.bound, global_index, 3)
        lines.append(
            pad + f"for (int {m.var} = (int){bid}; {m.var} < {bound}; "
            f"{m.var} += {_macro('GRID_STRIDE')}) {{"
        )
        pad += INDENT

    if cached:
        lines.extend(_copy_loops(layout, indexer, "load", pad, global_index))
        lines.append(pad + "__syncthreads();")
        lines.append("")

    lines.extend(_body_lines(cfg.body, indexer, index_fn, pad))

    if cached:
        lines.append("")
        lines.append(pad + "__syncthreads();")
        lines.extend(_copy_loops(layout, indexer, "store", pad, global_index))

    for _ in cfg.grid:
        pad = pad[: -len(INDENT)]
        lines.append(pad + "}")
    lines.append("}")

    preamble = _preamble(name, case, machine, cached, macro_params)
    launch = _launch_stanza(fn, cfg, table, arrays_used, scalars, global_index)
    return KernelText(preamble, "\n".join(lines), launch)


def _kernel_symbol(name: str, index: int) -> str:
    stem = re.sub(r"\W+", "_", name).strip("_") or "kernel"
    return f"{stem}_case{index}"


def _arrays_referenced(cfg: model.SourceCfg, table: dsl.ParamTable) -> list[str]:
    seen: set[str] = set()
    for m in list(cfg.grid) + list(cfg.thread):
        seen |= _array_names(m.bound)
    seen |= _region_arrays(cfg.body)
    return [a for a in table.arrays if a in seen]


def _array_names(node) -> set[str]:
    return {e.array for e in dsl._walk_exprs(node) if isinstance(e, dsl.Index)}


def _region_arrays(region) -> set[str]:
    if isinstance(region, model.BlockRun):
        out: set[str] = set()
        for s in region.stmts:
            out |= _array_names(s)
        return out
    if isinstance(region, model.LoopRegion):
        return _array_names(region.bound) | _region_arrays(region.body)
    if isinstance(region, model.BranchRegion):
        out = _array_names(region.cond) | _region_arrays(region.then)
        if region.orelse is not None:
            out |= _region_arrays(region.orelse)
        return out
    return set().union(*(_region_arrays(p) for p in region.parts)) if region.parts else set()


def _scalar_formals(cfg: model.SourceCfg, table: dsl.ParamTable) -> list[str]:
    """Scalar kernel arguments: every parameter, binding, or context loop
    variable the schedule actually reads, in declaration order."""
    referenced = model.region_names(cfg.body)
    for m in list(cfg.grid) + list(cfg.thread):
        referenced |= dsl._names_in(m.bound)
    ordered = (
        list(table.order)
        + [b for b, _ in table.bindings]
        + [loop.var for loop in cfg.context]
    )
    local_names = {m.var for m in cfg.grid} | {m.var for m in cfg.thread}
    return [n for n in ordered if n in referenced and n not in local_names]


def _body_lines(region, indexer, index_fn, pad: str) -> list[str]:
    """Render the body region, keeping the indexer's walk state in step."""
    out: list[str] = []

    def read_fn(e: dsl.Index) -> str:
        return index_fn(e, "r")

    def stmt(s, pad: str) -> None:
        if isinstance(s, dsl.Local):
            out.append(pad + f"int {s.name} = {_c_expr(s.value, read_fn)};")
            if indexer is not None:
                indexer.bind_local(s.name, s.value)
        elif isinstance(s, dsl.Assign):
            value = _c_expr(s.value, read_fn)
            if isinstance(s.target, dsl.Index):
                out.append(pad + f"{index_fn(s.target, 'w')} = {value};")
            else:
                out.append(pad + f"{s.target.ident} = {value};")
        else:
            raise EmitError("unexpected statement %r" % (s,))

    def walk(region, pad: str) -> None:
        if isinstance(region, model.BlockRun):
            for s in region.stmts:
                stmt(s, pad)
        elif isinstance(region, model.SeqRegion):
            for part in region.parts:
                walk(part, pad)
        elif isinstance(region, model.LoopRegion):
            bound = _c_expr(region.bound, read_fn, 3)
            out.append(
                pad + f"for (int {region.var} = 0; {region.var} < {bound}; {region.var}++) {{"
            )
            if indexer is not None:
                saved = (indexer.env, indexer.domain)
                indexer.domain = indexer.domain + ((region.var, region.bound),)
            walk(region.body, pad + INDENT)
            if indexer is not None:
                indexer.env, indexer.domain = saved
            out.append(pad + "}")
        elif isinstance(region, model.BranchRegion):
            out.append(pad + f"if ({_c_cond(region.cond, read_fn)}) {{")
            bid = indexer.branch_arm(region.cond) if indexer is not None else None
            if indexer is not None:
                saved = (indexer.env, indexer.profile)
                if bid is not None:
                    indexer.profile = indexer.profile + ((bid, 0),)
            walk(region.then, pad + INDENT)
            if region.orelse is not None:
                out.append(pad + "} else {")
                if indexer is not None:
                    indexer.env = saved[0]
                    if bid is not None:
                        indexer.profile = saved[1] + ((bid, 1),)
                walk(region.orelse, pad + INDENT)
            if indexer is not None:
                indexer.env, indexer.profile = saved
            out.append(pad + "}")
        else:
            raise EmitError("unknown region %r" % (region,))

    walk(region, pad)
    return out


def _copy_loops(layout, indexer, which: str, pad: str, global_index) -> list[str]:
    """Cooperative global<->shared copies: loads of read pools before the
    body, stores of write pools after it, guarded per branch profile."""
    out: list[str] = []
    for af in layout.arrays:
        if not af.extent:
            continue
        profiles = sorted(af.per_profile)
        for profile in profiles:
            pool = af.per_profile[profile]
            slots = [
                s
                for s in _profile_slots(pool)
                if (s.mode == "r") == (which == "load")
            ]
            if not slots:
                continue
            guard = _profile_guard(profile, layout.branches, global_index)
            inner = pad + INDENT if guard else pad
            if guard:
                out.append(pad + f"if ({guard}) {{")
            for slot in slots:
                out.extend(_copy_one(af.array, slot, which, inner, global_index))
            if guard:
                out.append(pad + "}")
    return out


def _profile_guard(profile, branches, global_index) -> str:
    parts = []
    for bid, arm in profile:
        cond = _c_cond(branches[bid], global_index)
        parts.append(cond if arm == 0 else f"!({cond})")
    return " && ".join(parts)


def _copy_one(array: str, slot: _Slot, which: str, pad: str, global_index) -> list[str]:
    piece = slot.piece
    extent = _poly_c(piece.extent)
    shared = f"{array}_sh[pk_q{' + ' + _poly_c(slot.offset) if slot.offset else ''}]"
    if len(piece.dims) == 1:
        lo = piece.dims[0][0]
        glob = f"{array}[{_poly_c(lo)} + pk_q]"
    else:
        (rlo, _, _), (clo, _, cext) = piece.dims
        pitch = _poly_c(piece.stride)
        glob = (
            f"{array}[({_poly_c(rlo)} + pk_q / {_poly_c(cext)}) * {pitch}"
            f" + {_poly_c(clo)} + pk_q % {_poly_c(cext)}]"
        )
    dst, src = (shared, glob) if which == "load" else (glob, shared)
    return [
        pad + f"for (int pk_q = pk_tid; pk_q < {extent}; pk_q += pk_nthreads) {{",
        pad + INDENT + f"{dst} = {src};",
        pad + "}",
    ]


def _preamble(name: str, case: Case, machine, cached, macro_params) -> str:
    lines = [
        f"/* {name}: case {case.index} of the comprehensive parametric kernel.",
        f" * applied strategies: {', '.join(case.applied) or '(none)'}",
        " */",
        "#include <assert.h>",
        "",
        f"#ifndef {_macro('GRID_STRIDE')}",
        f"#define {_macro('GRID_STRIDE')} {machine.grid_stride}",
        "#endif",
    ]
    for v in macro_params:
        lines += [
            f"#ifndef {_macro(v)}",
            f'#error "compile with -D{_macro(v)}=<value of {v}> to size shared arrays"',
            "#endif",
        ]
    for af in cached:
        lines.append(
            f"#define {_macro('EXT_' + af.array.upper())} {_macroize(af.extent)}"
        )
    return "\n".join(lines) + "\n"


def _launch_stanza(fn, cfg, table, arrays_used, scalars, global_index) -> str:
    """Host-side launch: bindings recomputed, context loops around the
    launch line, grid dims capped at the stride."""
    params = [n for n in table.order]
    formals = ", ".join([f"int *{a}" for a in arrays_used] + [f"int {p}" for p in params])
    lines = [f"void {fn}_launch({formals})", "{"]
    pad = INDENT
    needed = set(scalars)
    for m in list(cfg.grid) + list(cfg.thread):
        needed |= dsl._names_in(m.bound)
    for b, value in table.bindings:
        if b in needed:
            lines.append(pad + f"int {b} = {_c_expr(value, global_index)};")

    def capped(bound_expr) -> str:
        b = _c_expr(bound_expr, global_index, 3)
        g = _macro("GRID_STRIDE")
        return f"{_paren(b)} < {g} ? {_paren(b)} : {g}"

    grid_dims = [capped(m.bound) for m in cfg.grid]
    block_dims = [_c_expr(m.bound, global_index) for m in cfg.thread]
    lines.append(pad + f"dim3 dimGrid({', '.join(reversed(grid_dims))});")
    lines.append(pad + f"dim3 dimBlock({', '.join(reversed(block_dims))});")
    for loop in cfg.context:
        bound = _c_expr(loop.bound, global_index, 3)
        lines.append(pad + f"for (int {loop.var} = 0; {loop.var} < {bound}; {loop.var}++) {{")
        pad += INDENT
    args = ", ".join(list(arrays_used) + scalars)
    lines.append(pad + f"{fn}<<<dimGrid, dimBlock>>>({args});")
    for _ in cfg.context:
        pad = pad[: -len(INDENT)]
        lines.append(pad + "}")
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


def emit_report(result: OptimizationResult, *, name: str, explain: bool = False) -> str:
    order = result.order
    lines = [
        "comprehensive parametric kernel report",
        f"program: {name}",
        f"machine: {result.machine.name}",
        f"cases: {len(result.cases)}",
        f"decision height: {result.tree.height()}",
        "",
    ]
    for case in result.cases:
        header = case_header(case, result.box, order)
        lines.append(f"case {case.index}  [{name}.case{case.index}.cu]")
        lines.append(f"  trail: {' '.join(case.trail) or '(none)'}")
        lines.append(f"  applied: {', '.join(case.applied) or '(none)'}")
        lines.append("  constraints {")
        for c in header:
            lines.append(f"      {c.text(order)}")
        lines.append("  }")
        if explain:
            lines.extend(_explain_path(case, order))
        lines.append("  program {")
        for src_line in dsl.render(case.program).rstrip().splitlines():
            lines.append(("      " + src_line).rstrip())
        lines.append("  }")
        lines.append("")
    return "\n".join(lines)


def _explain_path(case: Case, order) -> list[str]:
    path: list[Node] = []
    node = case.node
    while node is not None:
        path.append(node)
        node = node.parent
    path.reverse()
    out = ["  decisions {"]
    for step in path:
        if step.edge:
            parent = step.parent
            value = parent.value.text(order) if parent.value is not None else "?"
            added = "; ".join(c.text(order) for c in step.added)
            mark = f"  mark {step.mark}" if step.mark else ""
            out.append(
                f"      {step.edge} {parent.counter} = {value}  [{added}]{mark}"
            )
    out.append("  }")
    return out


# ---------------------------------------------------------------------------
# Tree exports
# ---------------------------------------------------------------------------


def export_tree_json(result: OptimizationResult, *, name: str) -> str:
    order = result.order
    nodes = []
    edges = []
    for node in sorted(result.tree.nodes(), key=lambda n: n.nid):
        kind = "leaf" if node.is_leaf else "internal"
        if not node.consistent:
            kind = "stub"
        entry = {
            "id": node.nid,
            "kind": kind,
            "counter": node.counter,
            "value": node.value.text(order) if node.value is not None else None,
            "offered": node.offered,
            "applied": list(node.state.applied),
            "ir_passes": list(node.state.lam),
            "unapplied": list(node.omega),
            "pending": list(node.gamma),
            "case": node.case.index if node.case else None,
        }
        if node.pruned_reason:
            entry["pruned"] = node.pruned_reason
        nodes.append(entry)
        for child in (node.accept, node.refuse):
            if child is not None:
                edges.append(
                    {
                        "from": node.nid,
                        "to": child.nid,
                        "kind": child.edge,
                        "mark": child.mark or None,
                        "constraints": [c.text(order) for c in child.added],
                    }
                )
    cases = [
        {
            "index": case.index,
            "node": case.node.nid,
            "kernel": f"{name}.case{case.index}.cu",
            "trail": list(case.trail),
            "applied": list(case.applied),
            "header": [c.text(order) for c in case_header(case, result.box, order)],
            "constraints": [c.text(order) for c in case.system.visible()],
            "witness": {k: str(v) for k, v in sorted(case.witness.items())}
            if case.witness
            else None,
        }
        for case in result.cases
    ]
    doc = {
        "program": name,
        "machine": result.machine.name,
        "decision_height": result.tree.height(),
        "nodes": nodes,
        "edges": edges,
        "cases": cases,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def export_tree_dot(result: OptimizationResult, *, name: str) -> str:
    order = result.order
    lines = [
        f'digraph "{name}" {{',
        "  rankdir=TB;",
        "  node [shape=box, fontname=monospace];",
    ]
    for node in sorted(result.tree.nodes(), key=lambda n: n.nid):
        if node.case is not None:
            label = f"case {node.case.index}"
            shape = ', shape=ellipse, style=bold'
        elif node.is_leaf and not node.consistent:
            label = "pruned"
            shape = ", shape=ellipse, style=dashed"
        elif node.counter is not None:
            value = node.value.text(order) if node.value is not None else "?"
            label = f"{node.counter}\\n{value}"
            shape = ""
        else:
            label = "leaf"
            shape = ", shape=ellipse"
        lines.append(f'  n{node.nid} [label="{label}"{shape}];')
    # refuse edges listed first so accept edges lean toward the south-east
    for node in sorted(result.tree.nodes(), key=lambda n: n.nid):
        for child in (node.refuse, node.accept):
            if child is None:
                continue
            text = "; ".join(c.text(order) for c in child.added)
            mark = f" {child.mark}" if child.mark else ""
            style = "" if child.edge == "accept" else ", style=dashed"
            lines.append(
                f'  n{node.nid} -> n{child.nid} [label="{child.edge}{mark}\\n{text}"{style}];'
            )
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Batch writing
# ---------------------------------------------------------------------------


def write_artifacts(
    result: OptimizationResult, out_dir, *, name: str, explain: bool = False
) -> list[str]:
    """Write all four artifact kinds; returns the paths written."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []

    def put(filename: str, text: str) -> None:
        path = os.path.join(out_dir, filename)
        with open(path, "w") as fh:
            fh.write(text)
        written.append(path)

    for case in result.cases:
        kernel = emit_kernel(case, result.machine, name=name)
        put(f"{name}.case{case.index}.cu", kernel.text)
    put(f"{name}.report.txt", emit_report(result, name=name, explain=explain))
    put(f"{name}.tree.json", export_tree_json(result, name=name))
    put(f"{name}.tree.dot", export_tree_dot(result, name=name))
    return written
