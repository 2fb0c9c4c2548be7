"""The comprehensive-optimization search.

Starting from one annotated program, the optimizer explores a binary
decision tree.  Each internal node evaluates one pending hardware counter
symbolically and splits on whether the value fits its machine limit:

* the **accept** edge adds ``0 <= value <= limit`` and moves to the next
  pending counter;
* the **refuse** edge adds ``limit < value``, applies the first unapplied
  strategy that can lower this counter, and re-evaluates — the refused
  counter first, then every earlier resource counter, since the rewrite may
  have changed them too.  When no such strategy remains the refuse branch
  is discarded: the accept branch alone covers what is left.

A state is *processed* when no counter evaluations are pending; each
processed state is a case candidate pairing its accumulated constraint
system with its optimized program.  Candidates whose systems are
inconsistent over the parameter box are pruned — cheaply (interval and
pairwise refutation) during the search, and by exact witness search at the
end, so every emitted case ships with an integer witness of its own
feasibility.

Every strategy application works on an isolated immutable state, so accept
and refuse branches can never observe each other's rewrites.

``verify_coverage`` checks that the emitted cases leave no sampled
parameter point unservable; ``verify_optimality`` checks that each counter
has a leaf where every strategy that could lower it has been applied, is
inapplicable, or provably would not help.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction

from . import counters as counters_mod
from . import dsl, model
from . import strategies as strategies_mod
from .algebra import (
    Constraint,
    ConstraintSystem,
    Poly,
    RatFunc,
    bound_value,
    check_consistency,
    ge,
    implied_by,
    le,
    refute_by_intervals,
)
from .machine import MachineSpec
from .strategies import STRATEGIES


class EngineError(Exception):
    """Search failure with the branch context that triggered it."""


@dataclass(frozen=True)
class ProgramState:
    """One immutable program variant.

    ``lam`` is the stack of applied IR-level strategy names (replayed onto
    the lowered form on demand); ``applied`` records every applied strategy,
    source-level ones included, in application order.
    """

    program: dsl.Program
    lam: tuple[str, ...] = ()
    applied: tuple[str, ...] = ()


@dataclass(frozen=True)
class Quintuple:
    """Search state: program variant, unapplied strategies, pending
    counters, and the constraint system accumulated along the branch."""

    state: ProgramState
    omega: tuple[str, ...]
    gamma: tuple[str, ...]
    system: ConstraintSystem

    @property
    def processed(self) -> bool:
        return not self.gamma


@dataclass
class Node:
    """One decision-tree node.

    Internal nodes evaluate a counter and carry an ``accept`` child plus,
    when a strategy was offered, a ``refuse`` child.  Leaves either carry a
    finalized case, or are inconsistent stubs kept for inspection."""

    nid: int
    state: ProgramState
    omega: tuple[str, ...]
    gamma: tuple[str, ...]
    system: ConstraintSystem
    parent: "Node | None" = None
    edge: str = ""  # 'accept' | 'refuse' | '' at the root
    mark: str = ""  # trail mark contributed by the incoming edge
    added: tuple[Constraint, ...] = ()  # constraints the incoming edge pushed
    counter: str | None = None
    value: object | None = None  # Poly | RatFunc
    offered: str | None = None
    accept: "Node | None" = None
    refuse: "Node | None" = None
    consistent: bool = True
    pruned_reason: str | None = None
    case: "Case | None" = None
    # Leading constraints already cleared by interval refutation at an
    # ancestor (same box), so pruning re-checks only what this node added.
    verified: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.accept is None and self.refuse is None

    @property
    def branching(self) -> bool:
        return self.accept is not None and self.refuse is not None


@dataclass
class Case:
    """One emitted case: a constraint system plus the program optimized
    for the parameter regime it describes."""

    index: int
    state: ProgramState
    system: ConstraintSystem
    trail: tuple[str, ...]
    node: Node
    witness: dict | None = None
    witness_unknown: bool = False  # search gave up; kept conservatively

    @property
    def program(self) -> dsl.Program:
        return self.state.program

    @property
    def lam(self) -> tuple[str, ...]:
        return self.state.lam

    @property
    def applied(self) -> tuple[str, ...]:
        return self.state.applied


@dataclass
class DecisionTree:
    root: Node

    def nodes(self):
        stack = [self.root]
        while stack:
            n = stack.pop()
            yield n
            if n.refuse is not None:
                stack.append(n.refuse)
            if n.accept is not None:
                stack.append(n.accept)

    def leaves(self):
        return [n for n in self.nodes() if n.is_leaf]

    def height(self) -> int:
        """Decision height: the maximum number of actual two-way decisions
        on any root-to-leaf path.  Chain nodes with a single accept child
        re-evaluate a counter without deciding anything, so they add no
        height."""
        best = 0
        stack = [(self.root, 0)]
        while stack:
            n, h = stack.pop()
            if n.is_leaf:
                best = max(best, h)
                continue
            step = 1 if n.branching else 0
            if n.accept is not None:
                stack.append((n.accept, h + step))
            if n.refuse is not None:
                stack.append((n.refuse, h + step))
        return best

    def raw_height(self) -> int:
        best = 0
        stack = [(self.root, 0)]
        while stack:
            n, h = stack.pop()
            if n.is_leaf:
                best = max(best, h)
                continue
            for child in (n.accept, n.refuse):
                if child is not None:
                    stack.append((child, h + 1))
        return best


@dataclass
class OptimizationResult:
    tree: DecisionTree
    cases: list[Case]
    dropped: list[Node]  # candidate leaves refuted by the final search
    machine: MachineSpec
    table: dsl.ParamTable
    box: dict
    source: dsl.Program

    @property
    def order(self) -> tuple[str, ...]:
        """Rendering order: program/data parameters, then machine ones."""
        return tuple(self.table.order) + tuple(p.name for p in self.machine.params)


def case_header(case: Case, box, order=None) -> tuple[Constraint, ...]:
    """The displayed constraint system: non-initial constraints that are
    neither trivially true over the box nor implied by the rest."""
    visible = [c for c in case.system.visible() if not c.is_trivially_true(box)]
    kept: list[Constraint] = []
    for i, c in enumerate(visible):
        context = kept + visible[i + 1 :]
        if implied_by(c, context, box):
            continue
        kept.append(c)
    return tuple(kept)


class Optimizer:
    """Runs the search for one program against one machine description."""

    def __init__(
        self,
        program: dsl.Program,
        machine: MachineSpec,
        *,
        prune: bool = True,
        budget: int | None = None,
        seed: int = 0x5EED,
    ):
        self.machine = machine
        self.table = dsl.classify_parameters(program)
        self.program = program
        self.prune = prune
        self.budget = budget if budget is not None else machine.witness_budget
        self.seed = seed
        self.box = machine.box(self.table.order)
        self.counter_by_name = {c.name: c for c in machine.counters}
        self._value_cache: dict = {}
        self._cfg_cache: dict = {}
        self._ir_cache: dict = {}
        self._nodes = 0
        self._candidates: list[tuple[Quintuple, Node]] = []

    # -- state helpers ----------------------------------------------------

    def source_cfg(self, program: dsl.Program) -> model.SourceCfg:
        cfg = self._cfg_cache.get(program)
        if cfg is None:
            cfg = model.build_source_cfg(program)
            self._cfg_cache[program] = cfg
        return cfg

    def ir_for(self, state: ProgramState) -> model.IrCfg:
        key = (state.program, state.lam)
        ir = self._ir_cache.get(key)
        if ir is None:
            ir = model.lower_to_ir(self.source_cfg(state.program), state.lam)
            self._ir_cache[key] = ir
        return ir

    def counter_value(self, state: ProgramState, cname: str):
        key = (state.program, state.lam, cname)
        if key in self._value_cache:
            return self._value_cache[key]
        spec = self.counter_by_name[cname]
        value = counters_mod.eval_counter(
            spec,
            self.source_cfg(state.program),
            self.table,
            self.box,
            lambda: self.ir_for(state),
        )
        if isinstance(value, RatFunc) and not value.is_polynomial():
            # performance ratios must have a provably positive denominator
            try:
                value.bounds(self.box)
            except ValueError as exc:
                raise EngineError(
                    "counter %r: %s" % (cname, exc)
                ) from exc
        self._value_cache[key] = value
        return value

    def initial_quintuple(self) -> Quintuple:
        init: list[Constraint] = []
        for name in self.table.order:
            init.append(ge(Poly.var(name), 0, initial=True))
        for p in self.machine.params:
            init.append(ge(Poly.var(p.name), 0, initial=True))
            if p.kind == "performance":
                init.append(le(Poly.var(p.name), 1, initial=True))
        return Quintuple(
            state=ProgramState(self.program),
            omega=self.machine.strategy_order,
            gamma=tuple(c.name for c in self.machine.counters),
            system=ConstraintSystem(init),
        )

    def _new_node(self, q: Quintuple, *, parent, edge, mark, added) -> Node:
        self._nodes += 1
        return Node(
            nid=self._nodes,
            state=q.state,
            omega=q.omega,
            gamma=q.gamma,
            system=q.system,
            parent=parent,
            edge=edge,
            mark=mark,
            added=tuple(added),
            verified=parent.verified if parent is not None else 0,
        )

    def _apply(self, state: ProgramState, name: str) -> ProgramState:
        spec = STRATEGIES[name]
        if spec.level == "source":
            try:
                program = strategies_mod.apply_source(name, state.program)
            except ValueError as exc:
                raise EngineError("strategy %r: %s" % (name, exc)) from exc
            return ProgramState(program, state.lam, state.applied + (name,))
        return ProgramState(
            state.program, state.lam + (name,), state.applied + (name,)
        )

    def _replay(self, cname: str) -> tuple[str, ...]:
        """Counters to re-evaluate after a strategy was applied for *cname*:
        the refused counter first, then every earlier resource counter."""
        resources = [c.name for c in self.machine.resource_counters]
        spec = self.counter_by_name[cname]
        if spec.kind == "resource":
            i = resources.index(cname)
            return tuple(reversed(resources[: i + 1]))
        return (cname,) + tuple(reversed(resources))

    # -- the search -------------------------------------------------------

    def optimize_step(self, q: Quintuple, node: Node) -> list[tuple[Quintuple, Node]]:
        """Expand one pending counter evaluation.

        Returns the accept-side quintuples awaiting further processing, in
        accept-first order; the refusal chain is expanded recursively, and
        (when pruning is on) refutable entries become inconsistent stubs."""
        cname = q.gamma[0]
        rest = q.gamma[1:]
        spec = self.counter_by_name[cname]
        try:
            value = self.counter_value(q.state, cname)
        except counters_mod.CounterError as exc:
            raise EngineError(
                "evaluating counter %r after %s: %s"
                % (cname, "/".join(q.state.applied) or "<original>", exc)
            ) from exc
        node.counter = cname
        node.value = value

        limit = Poly.var(spec.bound)
        nonneg = bound_value(value, "lt", Poly.const(0)).negated()  # 0 <= v
        fits = bound_value(value, "le", limit)  # v <= limit
        accept_added = (nonneg, fits)
        if spec.kind == "resource":
            refuse_added: tuple[Constraint, ...] = (fits.negated(),)  # limit < v
        else:
            refuse_added = (fits.negated(), bound_value(value, "le", Poly.const(1)))

        offered = None
        for s in q.omega:
            if s in spec.reduce_with and strategies_mod.applicable(s, q.state.program):
                offered = s
                break
        node.offered = offered

        accept_q = Quintuple(q.state, q.omega, rest, q.system.push(*accept_added))
        accept_mark = (STRATEGIES[offered].kept_code or "") if offered else ""
        accept_node = self._new_node(
            accept_q, parent=node, edge="accept", mark=accept_mark, added=accept_added
        )
        node.accept = accept_node
        pending = [(accept_q, accept_node)]

        if offered is None:
            return self._drop_refuted(pending)

        refused = Quintuple(
            self._apply(q.state, offered),
            tuple(s for s in q.omega if s != offered),
            self._replay(cname) + rest,
            q.system.push(*refuse_added),
        )
        refuse_node = self._new_node(
            refused,
            parent=node,
            edge="refuse",
            mark=STRATEGIES[offered].code,
            added=refuse_added,
        )
        node.refuse = refuse_node
        pending.extend(self.optimize_step(refused, refuse_node))
        return self._drop_refuted(pending)

    def _drop_refuted(self, pending):
        if not self.prune:
            return pending
        kept = []
        for q, node in pending:
            verdict = refute_by_intervals(
                q.system, self.box, verified_prefix=node.verified
            )
            if verdict is not None:
                node.consistent = False
                node.pruned_reason = verdict.reason
            else:
                node.verified = len(q.system)
                kept.append((q, node))
        return kept

    def _walk(self, q: Quintuple, node: Node) -> None:
        if q.processed:
            self._candidates.append((q, node))
            return
        for q2, n2 in self.optimize_step(q, node):
            self._walk(q2, n2)

    def run(self) -> OptimizationResult:
        q0 = self.initial_quintuple()
        root = self._new_node(q0, parent=None, edge="", mark="", added=())
        self._candidates = []
        self._walk(q0, root)

        cases: list[Case] = []
        dropped: list[Node] = []
        machine_names = tuple(p.name for p in self.machine.params)
        for q, node in self._candidates:
            verdict = check_consistency(
                q.system,
                self.box,
                rational_vars=self.machine.rational_params,
                solve_vars=machine_names,
                budget=self.budget,
                seed=self.seed,
            )
            if verdict.is_inconsistent:
                node.consistent = False
                node.pruned_reason = verdict.reason
                dropped.append(node)
                continue
            case = Case(
                index=len(cases) + 1,
                state=q.state,
                system=q.system,
                trail=self._trail(node),
                node=node,
                witness=verdict.witness,
                witness_unknown=not verdict.is_consistent,
            )
            node.case = case
            cases.append(case)
        return OptimizationResult(
            tree=DecisionTree(root),
            cases=cases,
            dropped=dropped,
            machine=self.machine,
            table=self.table,
            box=self.box,
            source=self.program,
        )

    @staticmethod
    def _trail(node: Node) -> tuple[str, ...]:
        marks: list[str] = []
        cur: Node | None = node
        while cur is not None:
            if cur.mark:
                marks.append(cur.mark)
            cur = cur.parent
        marks.reverse()
        return tuple(marks)


def optimize(program: dsl.Program, machine: MachineSpec, **kw) -> OptimizationResult:
    return Optimizer(program, machine, **kw).run()


# ---------------------------------------------------------------------------
# Verification of the emitted case discussion
# ---------------------------------------------------------------------------


@dataclass
class CoverageReport:
    samples: int
    violations: list[dict]

    @property
    def ok(self) -> bool:
        return not self.violations


def _machine_feasible(case: Case, sample: dict, machine: MachineSpec) -> bool:
    """Exact check: can machine parameters within their declared ranges
    satisfy the case system once the program/data parameters are fixed to
    *sample*?  After substitution every constraint involves at most one
    machine parameter, so the check is an exact interval intersection."""
    subbed = ConstraintSystem(
        Constraint(c.poly.subs(sample), c.rel, Poly.const(0), c.initial)
        for c in case.system
    )
    box = {p.name: (int(p.lo), int(p.hi)) for p in machine.params}
    names = tuple(p.name for p in machine.params)
    verdict = check_consistency(
        subbed, box, rational_vars=machine.rational_params, solve_vars=names
    )
    return verdict.is_consistent


def verify_coverage(
    result: OptimizationResult, samples: int | None = None, seed: int = 0xC0 << 8
) -> CoverageReport:
    """Sample program/data parameter points and confirm some case serves
    each of them for machine parameters within their declared ranges."""
    n = samples if samples is not None else result.machine.coverage_samples
    rng = random.Random(seed)
    violations: list[dict] = []
    names = list(result.table.order)
    for _ in range(n):
        sample = {
            name: Fraction(rng.randint(*map(int, result.box[name]))) for name in names
        }
        if not any(
            _machine_feasible(case, sample, result.machine) for case in result.cases
        ):
            violations.append({k: v for k, v in sample.items()})
    return CoverageReport(samples=n, violations=violations)


@dataclass
class OptimalityReport:
    entries: list[tuple[str, str]]  # (counter, explanation) per failure

    @property
    def ok(self) -> bool:
        return not self.entries


def verify_optimality(result: OptimizationResult, optimizer: Optimizer | None = None) -> OptimalityReport:
    """For each counter, some leaf must exhaust its reduction strategies:
    every strategy that could lower the counter is applied there, is
    inapplicable there, or provably leaves the counter value unchanged."""
    opt = optimizer or Optimizer(result.source, result.machine)
    failures: list[tuple[str, str]] = []
    roster = set(result.machine.strategy_order)
    for spec in result.machine.counters:
        candidates = tuple(s for s in spec.reduce_with if s in roster)
        best_reason = "no leaves"
        found = False
        for case in result.cases:
            reason = _exhausted_at(case, candidates, spec, opt)
            if reason is None:
                found = True
                break
            best_reason = reason
        if not found:
            failures.append((spec.name, best_reason))
    return OptimalityReport(failures)


def _exhausted_at(case: Case, candidates, spec, opt: Optimizer) -> str | None:
    """None when every candidate strategy is spent at this leaf, else why not."""
    for name in candidates:
        if name in case.applied:
            continue
        if not strategies_mod.applicable(name, case.program):
            continue
        # would applying it lower this counter's value here?
        state = case.state
        try:
            applied = opt._apply(state, name)
            before = opt.counter_value(state, spec.name)
            after = opt.counter_value(applied, spec.name)
        except EngineError:
            continue
        if isinstance(before, RatFunc) or isinstance(after, RatFunc):
            if before == after:
                continue
            return "strategy %r changes counter %r" % (name, spec.name)
        delta = before - after
        b = delta.bounds(opt.box)
        if b.hi is not None and b.hi <= 0:
            continue  # provably never decreases it: a no-op for this counter
        return "strategy %r could still lower counter %r" % (name, spec.name)
    return None
