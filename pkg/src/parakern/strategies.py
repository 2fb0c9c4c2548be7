"""Optimization strategies the engine can apply when a resource runs out.

Source-level strategies rewrite the program AST; IR-level strategies
rewrite the lowered three-address form (and register themselves in
``model.IR_PASSES`` so a lowered program can replay its applied stack).

Catalog:

* ``granularity``      -- halve/telescope the work per thread.  Two shapes:
    (a) a serial loop over a parameter inside the thread body is removed
        (the parameter becomes 1 everywhere, including derived loop bounds);
    (b) a thread body that stores the same computation twice at a fixed
        offset keeps only the first store and the grid grows to compensate.
* ``caching-off``      -- drop the cache clause: no shared staging at all.
* ``cse-0``            -- local value numbering within straight-line runs
                          (reuses existing locals whose value already names
                          a repeated expression, introduces temps otherwise).
* ``cse-1``            -- hoist expressions computed in both arms of a
                          branch to just before it.
* ``regpressure-0/1/2``-- IR register-pressure levels: sink single-use
                          definitions to their use; rematerialize cheap
                          parameter-only values at each use; sink
                          parameter-only definitions into the one block
                          that consumes them.  Every level verifies the
                          liveness peak afterwards and returns its input
                          unchanged if the rewrite did not strictly lower
                          it, so applying one never increases the estimate.

All rewrites preserve program semantics; the test suite checks each one
differentially against the reference interpreter on the shipped programs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import dsl, model
from .dsl import (
    And,
    Assign,
    Bin,
    Binding,
    Block,
    Cmp,
    If,
    Index,
    Local,
    MetaFor,
    Name,
    Num,
    Program,
    Schedule,
    SerialFor,
    expr_to_poly,
)
from .model import Instr, IrBlock, IrCfg, compute_liveness


@dataclass(frozen=True)
class Strategy:
    name: str
    level: str  # 'source' | 'ir'
    code: str  # trail mark when applied on a refuse edge
    kept_code: str | None  # trail mark when declined on an accept edge


STRATEGIES: dict[str, Strategy] = {
    s.name: s
    for s in (
        Strategy("granularity", "source", "(3b)", "(3a)"),
        Strategy("caching-off", "source", "(4b)", "(4a)"),
        Strategy("cse-0", "source", "(2)", None),
        Strategy("cse-1", "source", "(2)", None),
        Strategy("regpressure-0", "ir", "(1)", "(1)"),
        Strategy("regpressure-1", "ir", "(1)", "(1)"),
        Strategy("regpressure-2", "ir", "(1)", "(1)"),
    )
}


# ---------------------------------------------------------------------------
# Expression helpers
# ---------------------------------------------------------------------------


def substitute_names(e, env: dict[str, dsl.Expr]):
    """Replace free names in an expression tree."""
    return dsl._substitute_expr(e, env)


def simplify_expr(e):
    """Constant folding plus unit/zero identities, recursively."""
    if isinstance(e, (Num, Name)):
        return e
    if isinstance(e, Index):
        return Index(e.array, tuple(simplify_expr(s) for s in e.subs))
    if isinstance(e, Bin):
        a = simplify_expr(e.left)
        b = simplify_expr(e.right)
        if isinstance(a, Num) and isinstance(b, Num):
            from .interp import c_div, c_mod

            table = {
                "+": a.value + b.value,
                "-": a.value - b.value,
                "*": a.value * b.value,
            }
            if e.op in table:
                return Num(table[e.op])
            if e.op == "/" and b.value != 0:
                return Num(c_div(a.value, b.value))
            if e.op == "%" and b.value != 0:
                return Num(c_mod(a.value, b.value))
        if e.op == "*":
            if _is_num(a, 1):
                return b
            if _is_num(b, 1):
                return a
            if _is_num(a, 0) or _is_num(b, 0):
                return Num(0)
        if e.op == "+":
            if _is_num(a, 0):
                return b
            if _is_num(b, 0):
                return a
        if e.op == "-" and _is_num(b, 0):
            return a
        if e.op == "/" and _is_num(b, 1):
            return a
        return Bin(e.op, a, b)
    if isinstance(e, Cmp):
        return Cmp(e.op, simplify_expr(e.left), simplify_expr(e.right))
    if isinstance(e, And):
        return And(tuple(simplify_expr(p) for p in e.parts))
    return e


def _is_num(e, v: int) -> bool:
    return isinstance(e, Num) and e.value == v


def _rewrite_program(prog: Program, fn) -> Program:
    """Apply ``fn`` to every expression in declarations and statements."""

    def go_stmt(s):
        if isinstance(s, Local):
            return Local(s.name, fn(s.value))
        if isinstance(s, Assign):
            target = s.target
            if isinstance(target, Index):
                target = Index(target.array, tuple(fn(x) for x in target.subs))
            return Assign(target, fn(s.value))
        if isinstance(s, If):
            return If(
                fn(s.cond),
                go_block(s.then),
                go_block(s.orelse) if s.orelse else None,
            )
        if isinstance(s, SerialFor):
            return SerialFor(s.var, fn(s.bound), go_block(s.body))
        if isinstance(s, MetaFor):
            body = go_stmt(s.body) if isinstance(s.body, MetaFor) else go_block(s.body)
            return MetaFor(s.var, fn(s.bound), body, s.role)
        if isinstance(s, Schedule):
            return Schedule(s.cache, go_stmt(s.nest))
        raise TypeError("cannot rewrite %r" % (s,))

    def go_block(b: Block) -> Block:
        return Block(tuple(go_stmt(s) for s in b.stmts))

    decls = []
    for d in prog.decls:
        if isinstance(d, dsl.ArrayDecl):
            decls.append(dsl.ArrayDecl(d.name, tuple(fn(x) for x in d.dims)))
        elif isinstance(d, Binding):
            decls.append(Binding(d.name, fn(d.value)))
        else:
            decls.append(d)
    return Program(tuple(decls), tuple(go_stmt(s) for s in prog.top))


# ---------------------------------------------------------------------------
# granularity
# ---------------------------------------------------------------------------


def _find_param_loop(prog: Program) -> SerialFor | None:
    """A serial loop inside the thread body whose bound is a bare scalar."""
    scalars = {
        n for d in prog.decls if isinstance(d, dsl.ScalarDecl) for n in d.names
    }

    def search(block: Block):
        for s in block.stmts:
            if isinstance(s, SerialFor):
                if isinstance(s.bound, Name) and s.bound.ident in scalars:
                    return s
                found = search(s.body)
                if found is not None:
                    return found
            elif isinstance(s, If):
                found = search(s.then)
                if found is None and s.orelse is not None:
                    found = search(s.orelse)
                if found is not None:
                    return found
        return None

    return search(prog.body_block())


def _twin_store_guard(prog: Program):
    """Locate the (If, first store, second store, halved comparison) of the
    duplicated-store shape, or None."""
    body = prog.body_block()

    def locals_env(stmts, upto):
        env: dict[str, dsl.Expr] = {}
        for s in stmts[:upto]:
            if isinstance(s, Local):
                env[s.name] = dsl._substitute_expr(s.value, env)
        return env

    for pos, stmt in enumerate(body.stmts):
        if not isinstance(stmt, If):
            continue
        cmps = stmt.cond.parts if isinstance(stmt.cond, And) else (stmt.cond,)
        half = None
        for c in cmps:
            if (
                isinstance(c, Cmp)
                and c.op == "<"
                and isinstance(c.right, Bin)
                and c.right.op == "/"
                and _is_num(c.right.right, 2)
            ):
                half = c
        if half is None:
            continue
        stores = [
            s
            for s in stmt.then.stmts
            if isinstance(s, Assign) and isinstance(s.target, Index)
        ]
        if len(stores) != 2 or stores[0].target.array != stores[1].target.array:
            continue
        env = locals_env(body.stmts, pos)
        try:
            delta = expr_to_poly(
                dsl._substitute_expr(stores[1].target.subs[0], env), div_atoms=True
            ) - expr_to_poly(
                dsl._substitute_expr(stores[0].target.subs[0], env), div_atoms=True
            )
        except dsl.NotPolynomial:
            continue
        if not delta or delta.variables() - {"(%s)" % dsl.render_expr(half.right)}:
            continue
        if not _shifted_copy(stores[0].value, stores[1].value, delta, env):
            continue
        return stmt, stores[0], stores[1], half
    return None


def _shifted_copy(e1, e2, delta, env) -> bool:
    """True when e2 is e1 with every subscript moved by ``delta``."""
    if isinstance(e1, Num) and isinstance(e2, Num):
        return e1.value == e2.value
    if isinstance(e1, Name) and isinstance(e2, Name):
        return e1.ident == e2.ident
    if isinstance(e1, Bin) and isinstance(e2, Bin) and e1.op == e2.op:
        return _shifted_copy(e1.left, e2.left, delta, env) and _shifted_copy(
            e1.right, e2.right, delta, env
        )
    if isinstance(e1, Index) and isinstance(e2, Index) and e1.array == e2.array:
        if len(e1.subs) != 1 or len(e2.subs) != 1:
            return False
        try:
            d = expr_to_poly(
                dsl._substitute_expr(e2.subs[0], env), div_atoms=True
            ) - expr_to_poly(dsl._substitute_expr(e1.subs[0], env), div_atoms=True)
        except dsl.NotPolynomial:
            return False
        return d == delta
    return False


def _strip_half(e):
    """Remove one factor 2 from the divisor of ``A / (2*k)`` style exprs."""
    if isinstance(e, Bin) and e.op == "/":
        d = e.right
        if _is_num(d, 2):
            return e.left
        if isinstance(d, Bin) and d.op == "*":
            if _is_num(d.left, 2):
                return Bin("/", e.left, d.right)
            if _is_num(d.right, 2):
                return Bin("/", e.left, d.left)
    return None


def apply_granularity(prog: Program) -> Program:
    loop = _find_param_loop(prog)
    if loop is not None:
        param = loop.bound.ident

        def splice(block: Block) -> Block:
            out = []
            for s in block.stmts:
                if s is loop:
                    out.extend(loop.body.stmts)
                elif isinstance(s, SerialFor):
                    out.append(SerialFor(s.var, s.bound, splice(s.body)))
                elif isinstance(s, If):
                    out.append(
                        If(
                            s.cond,
                            splice(s.then),
                            splice(s.orelse) if s.orelse else None,
                        )
                    )
                else:
                    out.append(s)
            return Block(tuple(out))

        def splice_program(p: Program) -> Program:
            def go(s):
                if isinstance(s, Schedule):
                    return Schedule(s.cache, go(s.nest))
                if isinstance(s, MetaFor):
                    body = (
                        go(s.body) if isinstance(s.body, MetaFor) else splice(s.body)
                    )
                    return MetaFor(s.var, s.bound, body, s.role)
                if isinstance(s, SerialFor):
                    return SerialFor(s.var, s.bound, Block(tuple(go(x) for x in s.body.stmts)))
                return s

            return Program(p.decls, tuple(go(s) for s in p.top))

        spliced = splice_program(prog)
        env = {loop.var: Num(0), param: Num(1)}
        rewritten = _rewrite_program(
            spliced, lambda e: simplify_expr(substitute_names(e, env))
        )
        # the parameter itself is now meaningless; drop its declaration
        decls = []
        for d in rewritten.decls:
            if isinstance(d, dsl.ScalarDecl):
                names = tuple(n for n in d.names if n != param)
                if names:
                    decls.append(dsl.ScalarDecl(names))
            else:
                decls.append(d)
        return Program(tuple(decls), rewritten.top)

    found = _twin_store_guard(prog)
    if found is None:
        raise ValueError("granularity: no reducible work-splitting shape")
    guard, first, second, half = found

    def fix_guard(cond):
        if isinstance(cond, And):
            return And(tuple(fix_guard(p) for p in cond.parts))
        if cond is half:
            return Cmp("<", cond.left, cond.right.left)
        return cond

    new_then = Block(tuple(s for s in guard.then.stmts if s is not second))
    new_if = If(fix_guard(guard.cond), new_then, guard.orelse)

    # widen the grid dimension that the halved comparison throttled
    grid_vars = {m.var for m in dsl.split_roles(prog)[0]}
    body = prog.body_block()
    env: dict[str, dsl.Expr] = {}
    for s in body.stmts:
        if isinstance(s, Local):
            env[s.name] = dsl._substitute_expr(s.value, env)
    guard_names = dsl._names_in(dsl._substitute_expr(half.left, env))
    target_grid = sorted(guard_names & grid_vars)
    if len(target_grid) != 1:
        raise ValueError("granularity: cannot identify the throttled grid loop")
    gvar = target_grid[0]

    bindings_to_fix: set[str] = set()

    def fix_meta(m: MetaFor):
        body2 = fix_meta(m.body) if isinstance(m.body, MetaFor) else _swap_if(m.body)
        bound = m.bound
        if m.var == gvar:
            stripped = _strip_half(bound)
            if stripped is not None:
                bound = stripped
            elif isinstance(bound, Name):
                bindings_to_fix.add(bound.ident)
            else:
                raise ValueError("granularity: grid bound has no halved divisor")
        return MetaFor(m.var, bound, body2, m.role)

    def _swap_if(b: Block) -> Block:
        return Block(tuple(new_if if s is guard else s for s in b.stmts))

    def go(s):
        if isinstance(s, Schedule):
            return Schedule(s.cache, fix_meta(s.nest))
        if isinstance(s, SerialFor):
            return SerialFor(s.var, s.bound, Block(tuple(go(x) for x in s.body.stmts)))
        return s

    top = tuple(go(s) for s in prog.top)
    decls = []
    for d in prog.decls:
        if isinstance(d, Binding) and d.name in bindings_to_fix:
            stripped = _strip_half(d.value)
            if stripped is None:
                raise ValueError(
                    "granularity: binding %r has no halved divisor" % d.name
                )
            decls.append(Binding(d.name, simplify_expr(stripped)))
        else:
            decls.append(d)
    return Program(tuple(decls), top)


# ---------------------------------------------------------------------------
# caching-off
# ---------------------------------------------------------------------------


def apply_caching_off(prog: Program) -> Program:
    def go(s):
        if isinstance(s, Schedule):
            return Schedule((), s.nest)
        if isinstance(s, SerialFor):
            return SerialFor(s.var, s.bound, Block(tuple(go(x) for x in s.body.stmts)))
        return s

    if not prog.schedule.cache:
        raise ValueError("caching-off: nothing is cached")
    return Program(prog.decls, tuple(go(s) for s in prog.top))


# ---------------------------------------------------------------------------
# common subexpression elimination
# ---------------------------------------------------------------------------


def _expr_key(e) -> str:
    return dsl.render_expr(e)


def _replace_subexpr(e, key: str, name: str):
    if _expr_key(e) == key:
        return Name(name)
    if isinstance(e, Bin):
        return Bin(
            e.op, _replace_subexpr(e.left, key, name), _replace_subexpr(e.right, key, name)
        )
    if isinstance(e, Index):
        return Index(e.array, tuple(_replace_subexpr(s, key, name) for s in e.subs))
    if isinstance(e, Cmp):
        return Cmp(
            e.op, _replace_subexpr(e.left, key, name), _replace_subexpr(e.right, key, name)
        )
    if isinstance(e, And):
        return And(tuple(_replace_subexpr(p, key, name) for p in e.parts))
    return e


def _stmt_exprs(s) -> list:
    if isinstance(s, Local):
        return [s.value]
    if isinstance(s, Assign):
        out = [s.value]
        if isinstance(s.target, Index):
            out.extend(s.target.subs)
        return out
    return []


def _count_bins(exprs, counts: dict[str, int], first: dict[str, int], order: int):
    def walk(e):
        nonlocal order
        if isinstance(e, Bin):
            walk(e.left)
            walk(e.right)
            k = _expr_key(e)
            counts[k] = counts.get(k, 0) + 1
            if k not in first:
                first[k] = order
                order += 1
        elif isinstance(e, Index):
            for s in e.subs:
                walk(s)

    for e in exprs:
        walk(e)
    return order


def _fresh_temp_names(prog: Program):
    used = set()
    for s in dsl._all_statements(prog):
        if isinstance(s, Local):
            used.add(s.name)
        if isinstance(s, (SerialFor, MetaFor)):
            used.add(s.var)
    for d in prog.decls:
        if isinstance(d, dsl.ScalarDecl):
            used.update(d.names)
        else:
            used.add(d.name)
    start = 1
    for n in used:
        m = re.fullmatch(r"t(\d+)", n)
        if m:
            start = max(start, int(m.group(1)) + 1)

    def gen():
        nonlocal start
        while True:
            name = "t%d" % start
            start += 1
            if name not in used:
                used.add(name)
                return name

    return gen


def _cse_run(stmts: tuple, fresh) -> tuple:
    """Value-number one straight-line run of locals/assignments."""
    stmts = list(stmts)
    # pass 1: reuse existing locals whose RHS already names a value
    table: dict[str, str] = {}
    out: list = []
    for s in stmts:
        def rewrite(e):
            # innermost-first replacement using the current table
            if isinstance(e, Bin):
                e = Bin(e.op, rewrite(e.left), rewrite(e.right))
            elif isinstance(e, Index):
                e = Index(e.array, tuple(rewrite(x) for x in e.subs))
            k = _expr_key(e)
            if isinstance(e, Bin) and k in table:
                return Name(table[k])
            return e

        if isinstance(s, Local):
            value = rewrite(s.value)
            out.append(Local(s.name, value))
            if isinstance(value, Bin):
                table[_expr_key(value)] = s.name
        elif isinstance(s, Assign):
            target = s.target
            if isinstance(target, Index):
                target = Index(target.array, tuple(rewrite(x) for x in target.subs))
            out.append(Assign(target, rewrite(s.value)))
            if isinstance(target, Name):
                # overwriting a scalar invalidates table entries built on it
                table = {
                    k: v
                    for k, v in table.items()
                    if target.ident not in k.split() and v != target.ident
                }
        else:
            out.append(s)

    # pass 2: repeated subexpressions get temps (innermost, earliest first)
    while True:
        counts: dict[str, int] = {}
        first: dict[str, int] = {}
        order = 0
        for s in out:
            order = _count_bins(_stmt_exprs(s), counts, first, order)
        repeated = [k for k, c in counts.items() if c >= 2]
        if not repeated:
            break
        repeated.sort(key=lambda k: (len(k), first[k]))
        key = repeated[0]
        name = fresh()
        # find the first statement containing it and the expression itself
        expr_obj = None
        insert_at = None
        for i, s in enumerate(out):
            for e in _stmt_exprs(s):
                found = _find_bin(e, key)
                if found is not None:
                    expr_obj = found
                    insert_at = i
                    break
            if expr_obj is not None:
                break
        new_out = []
        for i, s in enumerate(out):
            if i == insert_at:
                new_out.append(Local(name, expr_obj))
            if isinstance(s, Local):
                new_out.append(Local(s.name, _replace_subexpr(s.value, key, name)))
            elif isinstance(s, Assign):
                target = s.target
                if isinstance(target, Index):
                    target = Index(
                        target.array,
                        tuple(_replace_subexpr(x, key, name) for x in target.subs),
                    )
                new_out.append(Assign(target, _replace_subexpr(s.value, key, name)))
            else:
                new_out.append(s)
        out = new_out
    return tuple(out)


def _find_bin(e, key: str):
    if isinstance(e, Bin):
        if _expr_key(e) == key:
            return e
        return _find_bin(e.left, key) or _find_bin(e.right, key)
    if isinstance(e, Index):
        for s in e.subs:
            found = _find_bin(s, key)
            if found is not None:
                return found
    return None


def apply_cse_local(prog: Program) -> Program:
    fresh = _fresh_temp_names(prog)

    def go_block(b: Block) -> Block:
        out: list = []
        run: list = []

        def flush():
            if run:
                out.extend(_cse_run(tuple(run), fresh))
                run.clear()

        for s in b.stmts:
            if isinstance(s, (Local, Assign)):
                run.append(s)
            elif isinstance(s, SerialFor):
                flush()
                out.append(SerialFor(s.var, s.bound, go_block(s.body)))
            elif isinstance(s, If):
                flush()
                out.append(
                    If(s.cond, go_block(s.then), go_block(s.orelse) if s.orelse else None)
                )
            else:
                flush()
                out.append(s)
        flush()
        return Block(tuple(out))

    def go(s):
        if isinstance(s, Schedule):
            return Schedule(s.cache, go_meta(s.nest))
        if isinstance(s, SerialFor):
            return SerialFor(s.var, s.bound, Block(tuple(go(x) for x in s.body.stmts)))
        return s

    def go_meta(m: MetaFor) -> MetaFor:
        body = go_meta(m.body) if isinstance(m.body, MetaFor) else go_block(m.body)
        return MetaFor(m.var, m.bound, body, m.role)

    return Program(prog.decls, tuple(go(s) for s in prog.top))


def apply_cse_join(prog: Program) -> Program:
    """Hoist expressions computed in both arms of an if/else."""
    fresh = _fresh_temp_names(prog)

    def arm_keys(b: Block) -> dict[str, object]:
        keys: dict[str, object] = {}
        counts: dict[str, int] = {}
        first: dict[str, int] = {}
        for s in b.stmts:
            _count_bins(_stmt_exprs(s), counts, first, 0)
        for s in b.stmts:
            for e in _stmt_exprs(s):
                def walk(x):
                    if isinstance(x, Bin):
                        keys.setdefault(_expr_key(x), x)
                        walk(x.left)
                        walk(x.right)
                    elif isinstance(x, Index):
                        for sub in x.subs:
                            walk(sub)
                walk(e)
        return keys

    def rewrite_block(b: Block, key: str, name: str) -> Block:
        out = []
        for s in b.stmts:
            if isinstance(s, Local):
                out.append(Local(s.name, _replace_subexpr(s.value, key, name)))
            elif isinstance(s, Assign):
                target = s.target
                if isinstance(target, Index):
                    target = Index(
                        target.array,
                        tuple(_replace_subexpr(x, key, name) for x in target.subs),
                    )
                out.append(Assign(target, _replace_subexpr(s.value, key, name)))
            else:
                out.append(s)
        return Block(tuple(out))

    def go_block(b: Block) -> Block:
        out: list = []
        for s in b.stmts:
            if isinstance(s, If) and s.orelse is not None:
                then_b = go_block(s.then)
                else_b = go_block(s.orelse)
                shared = sorted(
                    set(arm_keys(then_b)) & set(arm_keys(else_b)), key=len
                )
                pre: list = []
                for key in shared:
                    # pure scalar expressions only: no array reads inside
                    expr = arm_keys(then_b)[key]
                    if _has_index(expr):
                        continue
                    name = fresh()
                    pre.append(Local(name, expr))
                    then_b = rewrite_block(then_b, key, name)
                    else_b = rewrite_block(else_b, key, name)
                out.extend(pre)
                out.append(If(s.cond, then_b, else_b))
            elif isinstance(s, If):
                out.append(If(s.cond, go_block(s.then), None))
            elif isinstance(s, SerialFor):
                out.append(SerialFor(s.var, s.bound, go_block(s.body)))
            else:
                out.append(s)
        return Block(tuple(out))

    def _has_index(e) -> bool:
        if isinstance(e, Index):
            return True
        if isinstance(e, Bin):
            return _has_index(e.left) or _has_index(e.right)
        return False

    def go(s):
        if isinstance(s, Schedule):
            return Schedule(s.cache, go_meta(s.nest))
        if isinstance(s, SerialFor):
            return SerialFor(s.var, s.bound, Block(tuple(go(x) for x in s.body.stmts)))
        return s

    def go_meta(m: MetaFor) -> MetaFor:
        body = go_meta(m.body) if isinstance(m.body, MetaFor) else go_block(m.body)
        return MetaFor(m.var, m.bound, body, m.role)

    return Program(prog.decls, tuple(go(s) for s in prog.top))


# ---------------------------------------------------------------------------
# IR register-pressure levels
# ---------------------------------------------------------------------------

_PURE_OPS = {"const", "add", "sub", "mul", "div", "mod", "cmp", "and"}


def _copy_ir(ir: IrCfg) -> IrCfg:
    blocks = {
        label: IrBlock(label, list(b.instrs), b.term) for label, b in ir.blocks.items()
    }
    return IrCfg(blocks, ir.entry, ir.applied)


def _ir_text(ir: IrCfg) -> str:
    return ir.text()


def _guarded(name: str, rewrite):
    """Wrap an IR rewrite so it never increases the liveness peak."""

    def run(ir: IrCfg) -> IrCfg:
        before = compute_liveness(ir).maxlive
        out = rewrite(_copy_ir(ir))
        after = compute_liveness(out).maxlive
        return out if after < before else ir

    run.__name__ = "rp_%s" % name
    return run


def _sink_single_use(ir: IrCfg) -> IrCfg:
    """Move pure single-use definitions directly before their use (within
    one block).  Each instruction is considered once, latest first, so two
    definitions can never chase each other's gap forever."""
    for block in ir.blocks.values():
        for ins in reversed(list(block.instrs)):
            if ins.op not in _PURE_OPS or ins.dest is None:
                continue
            i = next(k for k, o in enumerate(block.instrs) if o is ins)
            uses = [
                j for j, other in enumerate(block.instrs) if ins.dest in other.uses()
            ]
            term_uses = block.term[0] == "br" and block.term[1] == ins.dest
            used_elsewhere = any(
                ins.dest in other.uses()
                for b2 in ir.blocks.values()
                if b2 is not block
                for other in b2.instrs
            ) or any(
                b2.term[0] == "br" and b2.term[1] == ins.dest
                for b2 in ir.blocks.values()
                if b2 is not block
            )
            if used_elsewhere or term_uses:
                continue
            if len(uses) != 1 or uses[0] <= i + 1:
                continue
            j = uses[0]
            # args and dest must be stable across the moved span
            span = block.instrs[i + 1 : j]
            names = set(ins.uses()) | {ins.dest}
            if any(other.dest in names for other in span if other.dest):
                continue
            block.instrs.pop(i)
            block.instrs.insert(j - 1, ins)
    return ir


def _rematerialize(ir: IrCfg) -> IrCfg:
    """Recompute cheap parameter-only values at each use site."""
    entry = ir.blocks[ir.entry]
    params = {ins.dest for ins in entry.instrs if ins.op in ("param", "tid")}
    def_counts: dict[str, int] = {}
    for b in ir.blocks.values():
        for i2 in b.instrs:
            if i2.dest is not None:
                def_counts[i2.dest] = def_counts.get(i2.dest, 0) + 1
    cheap: dict[str, Instr] = {}
    for ins in entry.instrs:
        if (
            ins.op in ("add", "sub", "mul")
            and ins.dest is not None
            and def_counts[ins.dest] == 1
            and all(not isinstance(a, str) or a in params for a in ins.args)
        ):
            cheap[ins.dest] = ins
    counter = [0]

    def freshname(base: str) -> str:
        counter[0] += 1
        return "%%rm%d_%s" % (counter[0], base.strip("%"))

    for name, definition in sorted(cheap.items()):
        nuses = sum(
            1
            for block in ir.blocks.values()
            for other in block.instrs
            if other is not definition and name in other.uses()
        ) + sum(
            1
            for block in ir.blocks.values()
            if block.term[0] == "br" and block.term[1] == name
        )
        if nuses < 2:
            continue
        # drop the original definition first, then locate the use sites on
        # the updated block bodies (removal shifts instruction indices)
        for block in ir.blocks.values():
            block.instrs = [i2 for i2 in block.instrs if i2 is not definition]
        uses = []
        for label, block in ir.blocks.items():
            for j, other in enumerate(block.instrs):
                if name in other.uses():
                    uses.append((label, j))
            if block.term[0] == "br" and block.term[1] == name:
                uses.append((label, len(block.instrs)))
        for label, j in sorted(uses, key=lambda u: (u[0], -u[1])):
            block = ir.blocks[label]
            copy = freshname(name)
            clone = Instr(definition.op, copy, definition.args)
            if j == len(block.instrs):
                block.instrs.append(clone)
                block.term = (block.term[0], copy) + block.term[2:]
            else:
                target = block.instrs[j]
                newargs = tuple(copy if a == name else a for a in target.args)
                block.instrs[j] = Instr(target.op, target.dest, newargs)
                block.instrs.insert(j, clone)
    return ir


def _sink_cross_block(ir: IrCfg) -> IrCfg:
    """Move pure prologue definitions used in exactly one other block to
    the start of that block."""
    def_counts: dict[str, int] = {}
    for b in ir.blocks.values():
        for i2 in b.instrs:
            if i2.dest is not None:
                def_counts[i2.dest] = def_counts.get(i2.dest, 0) + 1
    # values safe to read anywhere: defined exactly once, in the prologue
    entry = ir.blocks[ir.entry]
    stable = {
        i2.dest
        for i2 in entry.instrs
        if i2.dest is not None and def_counts[i2.dest] == 1
    }
    for ins in list(entry.instrs):
        if ins.op not in _PURE_OPS or ins.dest is None:
            continue
        if def_counts.get(ins.dest, 0) != 1:
            continue
        home_uses = any(ins.dest in o.uses() for o in entry.instrs if o is not ins)
        if home_uses or (entry.term[0] == "br" and entry.term[1] == ins.dest):
            continue
        using = [
            l2
            for l2, b2 in ir.blocks.items()
            if b2 is not entry
            and (
                any(ins.dest in o.uses() for o in b2.instrs)
                or (b2.term[0] == "br" and b2.term[1] == ins.dest)
            )
        ]
        if len(using) != 1:
            continue
        if not all(not isinstance(a, str) or a in stable for a in ins.args):
            continue
        entry.instrs = [i2 for i2 in entry.instrs if i2 is not ins]
        ir.blocks[using[0]].instrs.insert(0, ins)
    return ir


IR_LEVELS = {
    "regpressure-0": _guarded("0", _sink_single_use),
    "regpressure-1": _guarded("1", _rematerialize),
    "regpressure-2": _guarded("2", _sink_cross_block),
}
model.IR_PASSES.update(IR_LEVELS)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def apply_source(name: str, prog: Program) -> Program:
    if name == "granularity":
        return apply_granularity(prog)
    if name == "caching-off":
        return apply_caching_off(prog)
    if name == "cse-0":
        return apply_cse_local(prog)
    if name == "cse-1":
        return apply_cse_join(prog)
    raise KeyError("unknown source strategy %r" % name)


def applicable(name: str, prog: Program, ir_provider=None) -> bool:
    """Whether *name*'s precondition holds on this program.

    Only the structural rewrites have real preconditions (a removable
    serial loop or twin store for ``granularity``, a non-empty cache clause
    for ``caching-off``).  The subexpression and register-pressure levels
    are always applicable: when they turn out to be the identity, the
    refinement they open is empty and the search prunes it, which mirrors
    trying the transformation and learning it did not help.
    """
    if name == "granularity":
        return _find_param_loop(prog) is not None or _twin_store_guard(prog) is not None
    if name == "caching-off":
        return bool(prog.schedule.cache)
    if name not in STRATEGIES:
        raise KeyError("unknown strategy %r" % name)
    return True
