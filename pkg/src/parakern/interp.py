"""Reference interpreter for the loop-nest language.

Executes a program sequentially with concrete parameter values, with C
integer semantics (truncating division).  Two uses:

* differential testing -- a rewritten program must leave the arrays in
  exactly the state the original does;
* footprint oracle -- running a single block with an access tracer counts
  the distinct array elements it touches, which the symbolic footprint
  analysis must reproduce.

Sequential execution is a faithful stand-in for the parallel schedule
because the language's meta-loops carry no loop-carried dependences within
one schedule instance (writes of one thread are never read by another in
the same pass).
"""

from __future__ import annotations

from typing import Callable

from .dsl import (
    And,
    ArrayDecl,
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
    ScalarDecl,
    Schedule,
    SerialFor,
)


def c_div(a: int, b: int) -> int:
    """C99 integer division: truncation toward zero."""
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def c_mod(a: int, b: int) -> int:
    return a - b * c_div(a, b)


Tracer = Callable[[str, tuple, str], None]  # (array, indices, 'r'|'w')


class Machine:
    """Execution state: scalar environment plus array storage."""

    def __init__(self, program: Program, params: dict[str, int],
                 arrays: dict[str, list] | None = None,
                 tracer: Tracer | None = None):
        self.program = program
        self.tracer = tracer
        self.env: dict[str, int] = dict(params)
        self.arrays: dict[str, list] = {}
        dims_of: dict[str, tuple] = {}
        for d in program.decls:
            if isinstance(d, Binding):
                self.env[d.name] = self.eval(d.value)
            elif isinstance(d, ArrayDecl):
                dims_of[d.name] = tuple(self.eval(x) for x in d.dims)
            elif isinstance(d, ScalarDecl):
                for n in d.names:
                    if n not in self.env:
                        raise KeyError("no value supplied for parameter %r" % n)
        if arrays is not None:
            for name, data in arrays.items():
                self.arrays[name] = _deep_copy(data)
        for name, dims in dims_of.items():
            if name not in self.arrays:
                self.arrays[name] = _zeros(dims)

    # -- expressions -----------------------------------------------------

    def eval(self, e) -> int:
        if isinstance(e, Num):
            return e.value
        if isinstance(e, Name):
            return self.env[e.ident]
        if isinstance(e, Bin):
            a = self.eval(e.left)
            b = self.eval(e.right)
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            if e.op == "/":
                return c_div(a, b)
            return c_mod(a, b)
        if isinstance(e, Index):
            idx = tuple(self.eval(s) for s in e.subs)
            if self.tracer:
                self.tracer(e.array, idx, "r")
            return _fetch(self.arrays[e.array], idx, e.array)
        raise TypeError("cannot evaluate %r" % (e,))

    def test(self, c) -> bool:
        if isinstance(c, Cmp):
            a = self.eval(c.left)
            b = self.eval(c.right)
            return {
                "<": a < b,
                "<=": a <= b,
                ">": a > b,
                ">=": a >= b,
                "==": a == b,
                "!=": a != b,
            }[c.op]
        if isinstance(c, And):
            return all(self.test(p) for p in c.parts)
        raise TypeError("cannot test %r" % (c,))

    # -- statements --------------------------------------------------------

    def run_block_stmts(self, block: Block) -> None:
        for stmt in block.stmts:
            self.run_stmt(stmt)

    def run_stmt(self, stmt) -> None:
        if isinstance(stmt, Local):
            self.env[stmt.name] = self.eval(stmt.value)
        elif isinstance(stmt, Assign):
            value = self.eval(stmt.value)
            if isinstance(stmt.target, Name):
                self.env[stmt.target.ident] = value
            else:
                idx = tuple(self.eval(s) for s in stmt.target.subs)
                if self.tracer:
                    self.tracer(stmt.target.array, idx, "w")
                _put(self.arrays[stmt.target.array], idx, value, stmt.target.array)
        elif isinstance(stmt, If):
            if self.test(stmt.cond):
                self.run_block_stmts(stmt.then)
            elif stmt.orelse is not None:
                self.run_block_stmts(stmt.orelse)
        elif isinstance(stmt, SerialFor):
            bound = self.eval(stmt.bound)
            for v in range(bound):
                self.env[stmt.var] = v
                self.run_block_stmts(stmt.body)
        elif isinstance(stmt, Schedule):
            self.run_schedule(stmt)
        else:
            raise TypeError("cannot execute %r" % (stmt,))

    def run_schedule(self, sched: Schedule) -> None:
        loops: list[MetaFor] = []
        node = sched.nest
        while isinstance(node, MetaFor):
            loops.append(node)
            node = node.body
        self._iterate(loops, node)

    def _iterate(self, loops: list[MetaFor], body: Block) -> None:
        if not loops:
            self.run_block_stmts(body)
            return
        head, rest = loops[0], loops[1:]
        bound = self.eval(head.bound)
        for v in range(bound):
            self.env[head.var] = v
            self._iterate(rest, body)


def _zeros(dims: tuple) -> list:
    if len(dims) == 1:
        return [0] * dims[0]
    return [[0] * dims[1] for _ in range(dims[0])]


def _deep_copy(data: list) -> list:
    if data and isinstance(data[0], list):
        return [row[:] for row in data]
    return data[:]


def _fetch(arr: list, idx: tuple, name: str):
    try:
        if len(idx) == 1:
            return arr[_checked(idx[0], len(arr), name)]
        return arr[_checked(idx[0], len(arr), name)][
            _checked(idx[1], len(arr[0]), name)
        ]
    except IndexError:
        raise IndexError("access %s%r out of bounds" % (name, idx))


def _put(arr: list, idx: tuple, value: int, name: str) -> None:
    if len(idx) == 1:
        arr[_checked(idx[0], len(arr), name)] = value
    else:
        arr[_checked(idx[0], len(arr), name)][
            _checked(idx[1], len(arr[0]), name)
        ] = value


def _checked(i: int, n: int, name: str) -> int:
    if not 0 <= i < n:
        raise IndexError("access %s[%d] out of bounds (size %d)" % (name, i, n))
    return i


def run_program(
    program: Program,
    params: dict[str, int],
    arrays: dict[str, list] | None = None,
    tracer: Tracer | None = None,
) -> dict[str, list]:
    """Execute the whole program; returns the final array contents."""
    m = Machine(program, params, arrays, tracer)
    for stmt in program.top:
        m.run_stmt(stmt)
    return m.arrays


def run_block(
    program: Program,
    params: dict[str, int],
    grid_values: dict[str, int],
    context_values: dict[str, int] | None = None,
    arrays: dict[str, list] | None = None,
    tracer: Tracer | None = None,
) -> dict[str, list]:
    """Execute one thread block: grid indices fixed, thread loops swept.

    Context loop variables (serial loops surrounding the schedule) must be
    supplied in ``context_values``.  Used by the footprint oracle.
    """
    from .dsl import split_roles

    m = Machine(program, params, arrays, tracer)
    m.env.update(context_values or {})
    m.env.update(grid_values)
    _, thread = split_roles(program)
    body = program.body_block()
    m._iterate(list(thread), body)
    return m.arrays
