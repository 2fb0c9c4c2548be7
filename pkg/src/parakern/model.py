"""Structured program model and per-thread intermediate representation.

Two views of the same scheduled program:

* ``SourceCfg`` -- a region tree over the schedule body (straight-line
  runs, serial loops, branches) plus the grid/thread loop split.  Source
  level strategies rewrite the program AST directly; this view is derived
  on demand and never mutated.

* ``IrCfg`` -- a three-address basic-block form of one thread's work.
  Registers-per-thread is estimated as the maximum number of simultaneously
  live virtual registers (backward liveness fixpoint).  Array names are
  global symbols, not virtual registers, so they do not count toward the
  estimate; scalar inputs model constant-bank reads and are free, while
  grid/thread indices occupy a register from their first read.

Lowering is deterministic: the same program and the same stack of applied
IR-level strategy names always produce the same instruction sequence.
IR-level strategies register their rewrites in ``IR_PASSES`` (keyed by
strategy name) and ``lower_to_ir`` replays them in order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from . import dsl
from .dsl import (
    And,
    Assign,
    Bin,
    Block,
    Cmp,
    If,
    Index,
    Local,
    MetaFor,
    Name,
    Num,
    Program,
    SerialFor,
)

# ---------------------------------------------------------------------------
# Source regions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockRun:
    """Maximal straight-line run of locals and assignments."""

    stmts: tuple


@dataclass(frozen=True)
class LoopRegion:
    var: str
    bound: object  # Expr
    body: "Region"


@dataclass(frozen=True)
class BranchRegion:
    cond: object  # Cond
    then: "Region"
    orelse: "Region | None"


@dataclass(frozen=True)
class SeqRegion:
    parts: tuple


Region = BlockRun | LoopRegion | BranchRegion | SeqRegion


def block_to_region(block: Block) -> Region:
    parts: list[Region] = []
    run: list = []

    def flush():
        if run:
            parts.append(BlockRun(tuple(run)))
            run.clear()

    for stmt in block.stmts:
        if isinstance(stmt, (Local, Assign)):
            run.append(stmt)
        elif isinstance(stmt, SerialFor):
            flush()
            parts.append(LoopRegion(stmt.var, stmt.bound, block_to_region(stmt.body)))
        elif isinstance(stmt, If):
            flush()
            parts.append(
                BranchRegion(
                    stmt.cond,
                    block_to_region(stmt.then),
                    block_to_region(stmt.orelse) if stmt.orelse else None,
                )
            )
        else:
            raise TypeError("unexpected statement in schedule body: %r" % (stmt,))
    flush()
    if len(parts) == 1:
        return parts[0]
    return SeqRegion(tuple(parts))


@dataclass(frozen=True)
class SourceCfg:
    """The scheduled program seen as grid loops, thread loops, and a body."""

    program: Program
    grid: tuple  # MetaFor, outermost first
    thread: tuple  # MetaFor, outermost first
    body: Region
    cache: tuple[str, ...]
    context: tuple  # SerialFor chain around the schedule


def build_source_cfg(program: Program) -> SourceCfg:
    grid, thread = dsl.split_roles(program)
    return SourceCfg(
        program=program,
        grid=grid,
        thread=thread,
        body=block_to_region(program.body_block()),
        cache=program.schedule.cache,
        context=program.context_loops,
    )


def region_statements(region: Region):
    """All statements of a region, depth first."""
    if isinstance(region, BlockRun):
        return list(region.stmts)
    if isinstance(region, LoopRegion):
        return region_statements(region.body)
    if isinstance(region, BranchRegion):
        out = region_statements(region.then)
        if region.orelse is not None:
            out += region_statements(region.orelse)
        return out
    return [s for part in region.parts for s in region_statements(part)]


def region_names(region: Region) -> set[str]:
    """Free-name candidates of a region: statement expressions plus loop
    bounds and branch conditions (which plain statement walks miss)."""
    if isinstance(region, BlockRun):
        names: set[str] = set()
        for s in region.stmts:
            names |= dsl._names_in(s)
        return names
    if isinstance(region, LoopRegion):
        return dsl._names_in(region.bound) | region_names(region.body)
    if isinstance(region, BranchRegion):
        names = dsl._names_in(region.cond) | region_names(region.then)
        if region.orelse is not None:
            names |= region_names(region.orelse)
        return names
    return set().union(*(region_names(p) for p in region.parts)) if region.parts else set()


# ---------------------------------------------------------------------------
# Three-address IR
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Instr:
    """One three-address instruction.

    ops and their args:
      tid    dest            (grid/thread index; occupies a register)
      param  dest            (scalar input; models a constant-bank read,
                              so it never occupies a register)
      const  dest, literal
      add/sub/mul/div/mod  dest, a, b
      cmp    dest, relop, a, b
      and    dest, a, b
      load   dest, array, i0 [, i1]
      store  array, i0 [, i1], value
    args are virtual register names (str) or integer literals; ``array`` and
    ``relop`` slots are symbolic and never count as register uses.
    """

    op: str
    dest: str | None
    args: tuple

    def uses(self) -> tuple[str, ...]:
        """Virtual registers this instruction reads."""
        if self.op == "cmp":
            slots = self.args[1:]
        elif self.op == "load":
            slots = self.args[1:]
        elif self.op == "store":
            slots = self.args[1:]
        else:
            slots = self.args
        return tuple(a for a in slots if isinstance(a, str))

    def text(self) -> str:
        parts = [str(a) for a in self.args]
        if self.dest is not None:
            return "%s = %s %s" % (self.dest, self.op, ", ".join(parts))
        return "%s %s" % (self.op, ", ".join(parts))


@dataclass
class IrBlock:
    label: str
    instrs: list[Instr] = field(default_factory=list)
    term: tuple = ("ret",)  # ('ret',) | ('jump', L) | ('br', cond, Lt, Lf)

    def successors(self) -> tuple[str, ...]:
        if self.term[0] == "jump":
            return (self.term[1],)
        if self.term[0] == "br":
            return (self.term[2], self.term[3])
        return ()


@dataclass
class IrCfg:
    blocks: dict[str, IrBlock]  # insertion-ordered
    entry: str
    applied: tuple[str, ...] = ()  # IR strategy names replayed onto this CFG

    def block_order(self) -> list[IrBlock]:
        return list(self.blocks.values())

    def text(self) -> str:
        lines = []
        for b in self.block_order():
            lines.append("%s:" % b.label)
            for ins in b.instrs:
                lines.append("  " + ins.text())
            lines.append("  " + " ".join(str(t) for t in self.term_text(b)))
        return "\n".join(lines)

    @staticmethod
    def term_text(b: IrBlock) -> tuple:
        return b.term


# Strategy name -> IrCfg -> IrCfg rewrites; populated by the strategies
# module at import time so lowering can replay an applied-strategy stack.
IR_PASSES: dict[str, Callable[[IrCfg], IrCfg]] = {}


class _Lowerer:
    def __init__(self):
        self.blocks: dict[str, IrBlock] = {}
        self.temp = 0
        self.label = 0
        self.current: IrBlock | None = None

    def new_block(self, hint: str) -> IrBlock:
        self.label += 1
        b = IrBlock("%s%d" % (hint, self.label))
        self.blocks[b.label] = b
        return b

    def new_temp(self) -> str:
        self.temp += 1
        return "%%t%d" % self.temp

    def emit(self, op: str, dest: str | None, *args) -> str | None:
        self.current.instrs.append(Instr(op, dest, tuple(args)))
        return dest

    def lower_expr(self, e, dest: str | None = None) -> str | int:
        """Lower an expression; returns a vreg name or an int literal."""
        if isinstance(e, Num):
            if dest is None:
                return e.value
            return self.emit("const", dest, e.value)
        if isinstance(e, Name):
            if dest is None:
                return e.ident
            # copy into the requested register via addition with 0 would be
            # noise; emit a const-free alias instead
            return self.emit("add", dest, e.ident, 0)
        if isinstance(e, Index):
            idx = [self.lower_expr(s) for s in e.subs]
            return self.emit("load", dest or self.new_temp(), e.array, *idx)
        if isinstance(e, Bin):
            op = {"+": "add", "-": "sub", "*": "mul", "/": "div", "%": "mod"}[e.op]
            a = self.lower_expr(e.left)
            b = self.lower_expr(e.right)
            return self.emit(op, dest or self.new_temp(), a, b)
        raise TypeError("cannot lower %r" % (e,))

    def lower_cond(self, c) -> str:
        if isinstance(c, Cmp):
            a = self.lower_expr(c.left)
            b = self.lower_expr(c.right)
            return self.emit("cmp", self.new_temp(), c.op, a, b)
        if isinstance(c, And):
            acc = self.lower_cond(c.parts[0])
            for part in c.parts[1:]:
                nxt = self.lower_cond(part)
                acc = self.emit("and", self.new_temp(), acc, nxt)
            return acc
        raise TypeError("cannot lower condition %r" % (c,))

    def lower_region(self, region: Region) -> None:
        if isinstance(region, BlockRun):
            for stmt in region.stmts:
                if isinstance(stmt, Local):
                    self.lower_expr(stmt.value, dest=stmt.name)
                elif isinstance(stmt, Assign):
                    if isinstance(stmt.target, Name):
                        self.lower_expr(stmt.value, dest=stmt.target.ident)
                    else:
                        idx = [self.lower_expr(s) for s in stmt.target.subs]
                        val = self.lower_expr(stmt.value)
                        self.emit("store", None, stmt.target.array, *idx, val)
                else:
                    raise TypeError("unexpected %r in straight-line run" % (stmt,))
        elif isinstance(region, SeqRegion):
            for part in region.parts:
                self.lower_region(part)
        elif isinstance(region, LoopRegion):
            header = self.new_block("loop")
            body = self.new_block("body")
            exit_ = self.new_block("done")
            self.emit("const", region.var, 0)
            self.current.term = ("jump", header.label)
            self.current = header
            bound = self.lower_expr(region.bound)
            c = self.emit("cmp", self.new_temp(), "<", region.var, bound)
            header.term = ("br", c, body.label, exit_.label)
            self.current = body
            self.lower_region(region.body)
            self.emit("add", region.var, region.var, 1)
            self.current.term = ("jump", header.label)
            self.current = exit_
        elif isinstance(region, BranchRegion):
            c = self.lower_cond(region.cond)
            then = self.new_block("then")
            join = self.new_block("join")
            if region.orelse is not None:
                orelse = self.new_block("else")
                self.current.term = ("br", c, then.label, orelse.label)
            else:
                self.current.term = ("br", c, then.label, join.label)
            self.current = then
            self.lower_region(region.then)
            self.current.term = ("jump", join.label)
            if region.orelse is not None:
                self.current = orelse
                self.lower_region(region.orelse)
                self.current.term = ("jump", join.label)
            self.current = join
        else:
            raise TypeError("unknown region %r" % (region,))


def lower_to_ir(cfg: SourceCfg, applied: tuple[str, ...] = ()) -> IrCfg:
    """Lower one thread's body to basic blocks, then replay *applied*.

    Entry block loads the runtime inputs the body actually reads, in a fixed
    order: grid indices, thread indices, context loop variables, then scalar
    parameters and derived bindings in declaration order.
    """
    lower = _Lowerer()
    entry = lower.new_block("entry")
    lower.current = entry

    body_names = region_names(cfg.body)
    for stmt in region_statements(cfg.body):
        if isinstance(stmt, (Local,)):
            body_names.discard(stmt.name)
    # loop vars defined inside the body are not inputs either
    def _collect_loop_vars(region):
        if isinstance(region, LoopRegion):
            body_names.discard(region.var)
            _collect_loop_vars(region.body)
        elif isinstance(region, SeqRegion):
            for p in region.parts:
                _collect_loop_vars(p)
        elif isinstance(region, BranchRegion):
            _collect_loop_vars(region.then)
            if region.orelse is not None:
                _collect_loop_vars(region.orelse)

    _collect_loop_vars(cfg.body)

    index_inputs: list[str] = [m.var for m in cfg.grid + cfg.thread]
    scalar_inputs: list[str] = []
    for loop in cfg.context:
        if loop.var in body_names:
            scalar_inputs.append(loop.var)
    decl_order = [
        n
        for d in cfg.program.decls
        for n in (d.names if isinstance(d, dsl.ScalarDecl) else [getattr(d, "name", None)])
        if n
    ]
    for n in decl_order:
        if n in body_names and n not in index_inputs and n not in scalar_inputs:
            scalar_inputs.append(n)
    for n in index_inputs:
        lower.emit("tid", n)
    for n in scalar_inputs:
        lower.emit("param", n)

    lower.lower_region(cfg.body)
    lower.current.term = ("ret",)
    ir = IrCfg(lower.blocks, entry.label)

    for name in applied:
        if name not in IR_PASSES:
            raise KeyError("no IR pass registered for strategy %r" % name)
        ir = IR_PASSES[name](ir)
    ir.applied = tuple(applied)
    return ir


# ---------------------------------------------------------------------------
# Liveness
# ---------------------------------------------------------------------------


@dataclass
class LivenessResult:
    maxlive: int
    live_in: dict[str, frozenset]
    live_out: dict[str, frozenset]
    hottest: tuple[str, int]  # block label, instruction index of the peak


def compute_liveness(ir: IrCfg) -> LivenessResult:
    """Backward may-liveness over the block graph; exact fixpoint.

    ``maxlive`` is the peak count of simultaneously live virtual registers
    observed at any instruction boundary during the final backward scan.
    Scalar inputs (``param`` definitions) model constant-bank reads and are
    excluded from every live set; index inputs (``tid``) count like any
    other register.
    """
    free: set[str] = {
        ins.dest
        for block in ir.blocks.values()
        for ins in block.instrs
        if ins.op == "param" and ins.dest is not None
    }
    live_in: dict[str, frozenset] = {l: frozenset() for l in ir.blocks}
    live_out: dict[str, frozenset] = {l: frozenset() for l in ir.blocks}
    changed = True
    while changed:
        changed = False
        for label in reversed(list(ir.blocks)):
            block = ir.blocks[label]
            out: frozenset = frozenset()
            for succ in block.successors():
                out |= live_in[succ]
            # the branch condition is used by the terminator itself
            live = set(out)
            if block.term[0] == "br" and isinstance(block.term[1], str):
                if block.term[1] not in free:
                    live.add(block.term[1])
            for ins in reversed(block.instrs):
                if ins.dest is not None:
                    live.discard(ins.dest)
                live.update(u for u in ins.uses() if u not in free)
            new_in = frozenset(live)
            new_out = frozenset(out)
            if new_in != live_in[label] or new_out != live_out[label]:
                live_in[label] = new_in
                live_out[label] = new_out
                changed = True

    maxlive = 0
    hottest = (ir.entry, 0)
    for label, block in ir.blocks.items():
        live = set(live_out[label])
        if block.term[0] == "br" and isinstance(block.term[1], str):
            if block.term[1] not in free:
                live.add(block.term[1])
        sizes: list[int] = [len(live)]  # boundary at the terminator
        for ins in reversed(block.instrs):
            if ins.dest is not None:
                live.discard(ins.dest)
            live.update(u for u in ins.uses() if u not in free)
            sizes.append(len(live))
        sizes.reverse()  # sizes[i] = live count just before instruction i
        for i, n in enumerate(sizes):
            if n > maxlive:
                maxlive = n
                hottest = (label, i)
    return LivenessResult(maxlive, live_in, live_out, hottest)
