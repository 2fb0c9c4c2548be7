"""Front end for the annotated loop-nest input language.

A program is a C-like fragment:

    int T, N, s, B;
    int a[2 * N];
    int dim = (N - 2) / (s * B);

    for (int t = 0; t < T; t++)
        meta_schedule cache(a) {
            meta_for (int i = 0; i < dim; i++)
                meta_for (int j = 0; j < B; j++) {
                    ...
                }
        }

Shapes the language enforces (diagnosed with line/column):

* exactly one ``meta_schedule``; it may sit under serial ``for`` context
  loops but not under an ``if``;
* ``meta_for`` loops form a perfect prefix nest of depth 1..4, each with
  canonical header ``(int v = 0; v < bound; v++)``;
* every loop (serial ones too) starts at 0 and counts up by 1;
* scalars declared at the top and never written are the program's symbolic
  parameters; ``int name = expr;`` at the top level is a derived binding.

``meta_for`` loops may carry ``@grid`` / ``@thread`` annotations; without
them the outer half of the nest (rounded up) maps to the grid and the rest
to the thread block.

Parameter classification follows the data/program split: a parameter that
occurs in an array extent (after expanding derived bindings) is a *data*
parameter; every other read-only scalar is a *program* parameter.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

from .algebra import Poly

# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

KEYWORDS = {"int", "for", "if", "else", "meta_schedule", "meta_for", "cache"}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>//[^\n]*)
  | (?P<nl>\n)
  | (?P<num>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\+\+|&&|<=|>=|==|!=|[-+*/%<>=;,(){}\[\]@])
    """,
    re.VERBOSE,
)


class DslError(Exception):
    """Problem in the input program; carries a position when known."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        if line is not None:
            message = "line %d, col %d: %s" % (line, col, message)
        super().__init__(message)
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str  # 'num' | 'ident' | 'kw' | 'op' | 'eof'
    text: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise DslError("unexpected character %r" % source[pos], line, col)
        text = m.group(0)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            col = 1
        elif kind in ("ws", "comment"):
            col += len(text)
        else:
            if kind == "ident" and text in KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, text, line, col))
            col += len(text)
        pos = m.end()
    tokens.append(Token("eof", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Abstract syntax
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class Name:
    ident: str


@dataclass(frozen=True)
class Bin:
    op: str  # + - * / %
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Index:
    array: str
    subs: tuple  # 1 or 2 expressions


@dataclass(frozen=True)
class Cmp:
    op: str  # < <= > >= == !=
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class And:
    parts: tuple


Expr = Num | Name | Bin | Index
Cond = Cmp | And


@dataclass(frozen=True)
class Local:
    name: str
    value: Expr


@dataclass(frozen=True)
class Assign:
    target: Name | Index
    value: Expr


@dataclass(frozen=True)
class If:
    cond: Cond
    then: "Block"
    orelse: "Block | None"


@dataclass(frozen=True)
class SerialFor:
    var: str
    bound: Expr
    body: "Block"


@dataclass(frozen=True)
class Block:
    stmts: tuple


@dataclass(frozen=True)
class MetaFor:
    var: str
    bound: Expr
    body: "MetaFor | Block"
    role: str | None = None  # 'grid' | 'thread' | None (positional split)


@dataclass(frozen=True)
class Schedule:
    cache: tuple[str, ...]
    nest: MetaFor


@dataclass(frozen=True)
class ScalarDecl:
    names: tuple[str, ...]


@dataclass(frozen=True)
class ArrayDecl:
    name: str
    dims: tuple  # 1 or 2 expressions


@dataclass(frozen=True)
class Binding:
    name: str
    value: Expr


Decl = ScalarDecl | ArrayDecl | Binding
Stmt = Local | Assign | If | SerialFor | Schedule


@dataclass(frozen=True)
class Program:
    decls: tuple
    top: tuple  # top-level statements; exactly one Schedule among them

    def schedule_path(self) -> tuple[tuple[SerialFor, ...], Schedule]:
        """The serial context loops enclosing the schedule, and the schedule."""
        found: list[tuple[tuple[SerialFor, ...], Schedule]] = []

        def walk(stmts, context):
            for s in stmts:
                if isinstance(s, Schedule):
                    found.append((tuple(context), s))
                elif isinstance(s, SerialFor):
                    walk(s.body.stmts, context + [s])

        walk(self.top, [])
        if len(found) != 1:
            raise DslError(
                "program must contain exactly one meta_schedule (found %d)"
                % len(found)
            )
        return found[0]

    @property
    def schedule(self) -> Schedule:
        return self.schedule_path()[1]

    @property
    def context_loops(self) -> tuple[SerialFor, ...]:
        return self.schedule_path()[0]

    def meta_loops(self) -> tuple[MetaFor, ...]:
        loops: list[MetaFor] = []
        node = self.schedule.nest
        while isinstance(node, MetaFor):
            loops.append(node)
            node = node.body
        return tuple(loops)

    def body_block(self) -> Block:
        node = self.schedule.nest
        while isinstance(node, MetaFor):
            node = node.body
        return node

    def arrays(self) -> dict[str, ArrayDecl]:
        return {d.name: d for d in self.decls if isinstance(d, ArrayDecl)}

    def bindings(self) -> tuple[Binding, ...]:
        return tuple(d for d in self.decls if isinstance(d, Binding))


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    # -- token plumbing ----

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def at(self, kind: str, text: str | None = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (text is None or tok.text == text)

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.peek()
        if not self.at(kind, text):
            want = text if text is not None else kind
            raise DslError(
                "expected %r, found %r" % (want, tok.text or "<eof>"),
                tok.line,
                tok.col,
            )
        return self.next()

    def fail(self, message: str) -> DslError:
        tok = self.peek()
        return DslError(message, tok.line, tok.col)

    # -- grammar ----

    def program(self) -> Program:
        decls: list[Decl] = []
        while self.at("kw", "int"):
            decls.extend(self.declaration())
        top: list[Stmt] = []
        while not self.at("eof"):
            top.append(self.top_statement())
        prog = Program(tuple(decls), tuple(top))
        prog.schedule_path()  # enforce the exactly-one rule eagerly
        _validate_nest(prog)
        return prog

    def declaration(self) -> list[Decl]:
        self.expect("kw", "int")
        items: list[Decl] = []
        while True:
            name = self.expect("ident").text
            if self.at("op", "["):
                dims = [self.bracketed_expr()]
                if self.at("op", "["):
                    dims.append(self.bracketed_expr())
                items.append(ArrayDecl(name, tuple(dims)))
            elif self.at("op", "="):
                self.next()
                items.append(Binding(name, self.expr()))
            else:
                items.append(ScalarDecl((name,)))
            if self.at("op", ","):
                self.next()
                continue
            self.expect("op", ";")
            break
        # merge adjacent plain scalars declared in one statement
        merged: list[Decl] = []
        for item in items:
            if (
                isinstance(item, ScalarDecl)
                and merged
                and isinstance(merged[-1], ScalarDecl)
            ):
                merged[-1] = ScalarDecl(merged[-1].names + item.names)
            else:
                merged.append(item)
        return merged

    def bracketed_expr(self) -> Expr:
        self.expect("op", "[")
        e = self.expr()
        self.expect("op", "]")
        return e

    def top_statement(self) -> Stmt:
        if self.at("kw", "for"):
            return self.serial_for(top_level=True)
        if self.at("kw", "meta_schedule"):
            return self.schedule()
        raise self.fail(
            "expected a serial 'for' or 'meta_schedule' at the top level"
        )

    def serial_for(self, top_level: bool = False) -> SerialFor:
        self.expect("kw", "for")
        var, bound = self.loop_header()
        if top_level:
            body = self.context_body()
        else:
            body = self.block_or_stmt()
        return SerialFor(var, bound, body)

    def loop_header(self) -> tuple[str, Expr]:
        """Parse ``(int v = 0; v < bound; v++)`` canonically."""
        self.expect("op", "(")
        self.expect("kw", "int")
        var_tok = self.expect("ident")
        var = var_tok.text
        self.expect("op", "=")
        init = self.peek()
        if not (init.kind == "num" and init.text == "0"):
            raise DslError("loops must start at 0", init.line, init.col)
        self.next()
        self.expect("op", ";")
        cond_var = self.expect("ident")
        if cond_var.text != var:
            raise DslError(
                "loop condition must test %r" % var, cond_var.line, cond_var.col
            )
        self.expect("op", "<")
        bound = self.expr()
        self.expect("op", ";")
        if self.at("op", "++"):  # ++v
            self.next()
            step_var = self.expect("ident")
        else:  # v++
            step_var = self.expect("ident")
            self.expect("op", "++")
        if step_var.text != var:
            raise DslError(
                "loop increment must step %r" % var, step_var.line, step_var.col
            )
        self.expect("op", ")")
        return var, bound

    def context_body(self) -> Block:
        """Body of a top-level serial loop: more context or the schedule."""
        if self.at("op", "{"):
            self.next()
            stmts: list[Stmt] = []
            while not self.at("op", "}"):
                stmts.append(self.top_statement())
            self.next()
            return Block(tuple(stmts))
        return Block((self.top_statement(),))

    def schedule(self) -> Schedule:
        self.expect("kw", "meta_schedule")
        cache: tuple[str, ...] = ()
        if self.at("kw", "cache"):
            self.next()
            self.expect("op", "(")
            names = [self.expect("ident").text]
            while self.at("op", ","):
                self.next()
                names.append(self.expect("ident").text)
            self.expect("op", ")")
            cache = tuple(names)
        self.expect("op", "{")
        first = self.peek()
        if not (self.at("kw", "meta_for") or self.at("op", "@")):
            raise DslError(
                "meta_schedule body must begin with meta_for", first.line, first.col
            )
        nest = self.meta_for()
        self.expect("op", "}")
        return Schedule(cache, nest)

    def meta_for(self) -> MetaFor:
        role = None
        if self.at("op", "@"):
            at_tok = self.next()
            ann = self.expect("ident")
            if ann.text not in ("grid", "thread"):
                raise DslError(
                    "unknown annotation @%s (use @grid or @thread)" % ann.text,
                    at_tok.line,
                    at_tok.col,
                )
            role = ann.text
        kw = self.expect("kw", "meta_for")
        var, bound = self.loop_header()
        if self.at("kw", "meta_for") or self.at("op", "@"):
            body: MetaFor | Block = self.meta_for()
        elif self.at("op", "{"):
            self.next()
            if self.at("kw", "meta_for") or self.at("op", "@"):
                inner = self.meta_for()
                close = self.peek()
                if not self.at("op", "}"):
                    raise DslError(
                        "meta_for nest must be a perfect prefix of the loop tree",
                        close.line,
                        close.col,
                    )
                self.next()
                body = inner
            else:
                stmts: list[Stmt] = []
                while not self.at("op", "}"):
                    stmts.append(self.body_statement())
                self.next()
                body = Block(tuple(stmts))
        else:
            body = Block((self.body_statement(),))
        node = MetaFor(var, bound, body, role)
        _ = kw
        return node

    def block_or_stmt(self) -> Block:
        if self.at("op", "{"):
            self.next()
            stmts: list[Stmt] = []
            while not self.at("op", "}"):
                stmts.append(self.body_statement())
            self.next()
            return Block(tuple(stmts))
        return Block((self.body_statement(),))

    def body_statement(self) -> Stmt:
        if self.at("kw", "meta_for") or self.at("kw", "meta_schedule"):
            tok = self.peek()
            raise DslError(
                "%s not allowed inside a loop body" % tok.text, tok.line, tok.col
            )
        if self.at("kw", "int"):
            self.next()
            name = self.expect("ident").text
            self.expect("op", "=")
            value = self.expr()
            self.expect("op", ";")
            return Local(name, value)
        if self.at("kw", "for"):
            return self.serial_for()
        if self.at("kw", "if"):
            self.next()
            self.expect("op", "(")
            cond = self.condition()
            self.expect("op", ")")
            then = self.block_or_stmt()
            orelse = None
            if self.at("kw", "else"):
                self.next()
                orelse = self.block_or_stmt()
            return If(cond, then, orelse)
        # assignment
        target_tok = self.expect("ident")
        target: Name | Index
        if self.at("op", "["):
            subs = [self.bracketed_expr()]
            if self.at("op", "["):
                subs.append(self.bracketed_expr())
            target = Index(target_tok.text, tuple(subs))
        else:
            target = Name(target_tok.text)
        self.expect("op", "=")
        value = self.expr()
        self.expect("op", ";")
        return Assign(target, value)

    def condition(self) -> Cond:
        parts = [self.comparison()]
        while self.at("op", "&&"):
            self.next()
            parts.append(self.comparison())
        if len(parts) == 1:
            return parts[0]
        return And(tuple(parts))

    def comparison(self) -> Cmp:
        left = self.expr()
        tok = self.peek()
        if tok.kind == "op" and tok.text in ("<", "<=", ">", ">=", "==", "!="):
            self.next()
            right = self.expr()
            return Cmp(tok.text, left, right)
        raise DslError("expected a comparison operator", tok.line, tok.col)

    def expr(self) -> Expr:
        left = self.term()
        while self.at("op", "+") or self.at("op", "-"):
            op = self.next().text
            left = Bin(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.at("op", "*") or self.at("op", "/") or self.at("op", "%"):
            op = self.next().text
            left = Bin(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.at("op", "-"):
            tok = self.next()
            inner = self.unary()
            if isinstance(inner, Num):
                return Num(-inner.value)
            return Bin("-", Num(0), inner)
        return self.atom()

    def atom(self) -> Expr:
        tok = self.peek()
        if tok.kind == "num":
            self.next()
            return Num(int(tok.text))
        if tok.kind == "ident":
            self.next()
            if self.at("op", "["):
                subs = [self.bracketed_expr()]
                if self.at("op", "["):
                    subs.append(self.bracketed_expr())
                return Index(tok.text, tuple(subs))
            return Name(tok.text)
        if self.at("op", "("):
            self.next()
            e = self.expr()
            self.expect("op", ")")
            return e
        raise DslError("expected an expression", tok.line, tok.col)


def parse(source: str) -> Program:
    return _Parser(tokenize(source)).program()


def _validate_nest(prog: Program) -> None:
    loops = prog.meta_loops()
    if not 1 <= len(loops) <= 4:
        raise DslError(
            "meta_for nest depth must be between 1 and 4 (got %d)" % len(loops)
        )
    roles = [m.role for m in loops]
    if any(r is not None for r in roles):
        if any(r is None for r in roles):
            raise DslError(
                "either annotate every meta_for with @grid/@thread or none"
            )
        switched = False
        for r in roles:
            if r == "thread":
                switched = True
            elif switched:
                raise DslError("@grid meta_for cannot appear inside @thread")
        if roles[0] != "grid":
            raise DslError("the outermost meta_for must be @grid")
    seen = set()
    for m in loops:
        if m.var in seen:
            raise DslError("duplicate meta_for variable %r" % m.var)
        seen.add(m.var)


def split_roles(prog: Program) -> tuple[tuple[MetaFor, ...], tuple[MetaFor, ...]]:
    """Grid loops and thread loops, outermost first.

    With annotations, the split is as written.  Without, the first half of
    the nest (rounded up) runs on the grid and the remainder on the thread
    block: depth 2k splits k/k, depth 2k+1 splits (k+1)/k.
    """
    loops = prog.meta_loops()
    if loops[0].role is not None:
        grid = tuple(m for m in loops if m.role == "grid")
        thread = tuple(m for m in loops if m.role == "thread")
    else:
        k = (len(loops) + 1) // 2
        grid, thread = loops[:k], loops[k:]
    if len(grid) > 2 or len(thread) > 2:
        raise DslError(
            "at most two grid and two thread dimensions are supported "
            "(got %d grid, %d thread)" % (len(grid), len(thread))
        )
    return grid, thread


# ---------------------------------------------------------------------------
# Parameter classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamTable:
    """Symbolic parameters of a program, split data/program.

    ``order`` preserves declaration order across both kinds; it fixes the
    variable ordering used for every polynomial rendered from this program.
    ``provenance`` records, per name, why it classified the way it did.
    """

    data: tuple[str, ...]
    program: tuple[str, ...]
    order: tuple[str, ...]
    arrays: dict[str, tuple]
    bindings: tuple[tuple[str, Expr], ...]
    provenance: dict[str, str] = field(default_factory=dict)

    @property
    def all_params(self) -> tuple[str, ...]:
        return self.order


def _walk_exprs(node) -> list:
    """Every expression reachable from an AST node, in syntax order."""
    out = []

    def go(n):
        if isinstance(n, (Num, Name)):
            out.append(n)
        elif isinstance(n, Bin):
            out.append(n)
            go(n.left)
            go(n.right)
        elif isinstance(n, Index):
            out.append(n)
            for s in n.subs:
                go(s)
        elif isinstance(n, Cmp):
            go(n.left)
            go(n.right)
        elif isinstance(n, And):
            for p in n.parts:
                go(p)
        elif isinstance(n, Local):
            go(n.value)
        elif isinstance(n, Assign):
            go(n.target)
            go(n.value)
        elif isinstance(n, If):
            go(n.cond)
            go(n.then)
            if n.orelse is not None:
                go(n.orelse)
        elif isinstance(n, (SerialFor, MetaFor)):
            go(n.bound)
            go(n.body)
        elif isinstance(n, Block):
            for s in n.stmts:
                go(s)
        elif isinstance(n, Schedule):
            go(n.nest)

    go(node)
    return out


def _names_in(node) -> set[str]:
    return {e.ident for e in _walk_exprs(node) if isinstance(e, Name)}


def classify_parameters(prog: Program) -> ParamTable:
    scalars: list[str] = []
    arrays: dict[str, tuple] = {}
    bindings: list[tuple[str, Expr]] = []
    for d in prog.decls:
        if isinstance(d, ScalarDecl):
            scalars.extend(d.names)
        elif isinstance(d, ArrayDecl):
            arrays[d.name] = d.dims
        else:
            bindings.append((d.name, d.value))

    binding_names = {n for n, _ in bindings}
    declared = set(scalars) | set(arrays) | binding_names

    # names written anywhere: loop variables, locals, scalar assignments
    written: set[str] = set(binding_names)
    locals_seen: set[str] = set()
    for stmt in _all_statements(prog):
        if isinstance(stmt, (SerialFor, MetaFor)):
            written.add(stmt.var)
        elif isinstance(stmt, Local):
            written.add(stmt.name)
            locals_seen.add(stmt.name)
        elif isinstance(stmt, Assign) and isinstance(stmt.target, Name):
            written.add(stmt.target.ident)

    for name in scalars:
        if name in written:
            raise DslError("parameter %r must not be written" % name)

    # expand bindings (each may use parameters and earlier bindings)
    expanded: dict[str, Expr] = {}
    for name, value in bindings:
        for used in _names_in(value):
            if used in expanded:
                continue
            if used not in scalars:
                raise DslError(
                    "binding %r uses %r before it is defined" % (name, used)
                )
        expanded[name] = _substitute_expr(value, expanded)

    # reads: every Name occurrence in bounds/bodies/dims that is a scalar
    read: set[str] = set()
    for name, value in bindings:
        read |= _names_in(value) & set(scalars)
    for dims in arrays.values():
        for dim in dims:
            read |= _names_in(_substitute_expr(dim, expanded)) & set(scalars)
    for stmt in _all_statements(prog):
        if isinstance(stmt, (SerialFor, MetaFor)):
            read |= _names_in(stmt.bound) & set(scalars)
        elif isinstance(stmt, (Local, Assign, If)):
            read |= _names_in(stmt) & set(scalars)
    # names referenced through bindings count as read too
    for stmt in _all_statements(prog):
        for used in _names_in(stmt) & binding_names:
            read |= _names_in(expanded[used]) & set(scalars)

    # undeclared names
    readable = declared | written | locals_seen
    for stmt in _all_statements(prog):
        for e in _walk_exprs(stmt):
            if isinstance(e, Name) and e.ident not in readable:
                raise DslError("undeclared name %r" % e.ident)
            if isinstance(e, Index) and e.array not in arrays:
                raise DslError("undeclared array %r" % e.array)
    for name in prog.schedule.cache:
        if name not in arrays:
            raise DslError("cache clause names undeclared array %r" % name)

    provenance: dict[str, str] = {}
    data: list[str] = []
    program_params: list[str] = []
    dim_names: set[str] = set()
    for arr, dims in arrays.items():
        for axis, dim in enumerate(dims):
            used = _names_in(_substitute_expr(dim, expanded)) & set(scalars)
            for n in sorted(used):
                dim_names.add(n)
                provenance.setdefault(
                    n, "sizes array %r dimension %d" % (arr, axis)
                )
    for name in scalars:
        if name in dim_names:
            data.append(name)
        elif name in read:
            program_params.append(name)
            provenance[name] = "read-only scalar, not used in any array extent"
        else:
            provenance[name] = "declared but never read; ignored"
    order = tuple(n for n in scalars if n in dim_names or n in read)
    return ParamTable(
        data=tuple(data),
        program=tuple(program_params),
        order=order,
        arrays=arrays,
        bindings=tuple(bindings),
        provenance=provenance,
    )


def _all_statements(prog: Program):
    """Every statement in the program, depth first, deterministic order."""
    out = []

    def go_block(block: Block):
        for s in block.stmts:
            go_stmt(s)

    def go_stmt(s):
        out.append(s)
        if isinstance(s, SerialFor):
            go_block(s.body)
        elif isinstance(s, If):
            go_block(s.then)
            if s.orelse is not None:
                go_block(s.orelse)
        elif isinstance(s, Schedule):
            go_stmt(s.nest)
        elif isinstance(s, MetaFor):
            if isinstance(s.body, MetaFor):
                go_stmt(s.body)
            else:
                go_block(s.body)

    for s in prog.top:
        go_stmt(s)
    return out


def _substitute_expr(e: Expr, env: dict[str, Expr]) -> Expr:
    if isinstance(e, Name) and e.ident in env:
        return env[e.ident]
    if isinstance(e, Bin):
        return Bin(e.op, _substitute_expr(e.left, env), _substitute_expr(e.right, env))
    if isinstance(e, Index):
        return Index(e.array, tuple(_substitute_expr(s, env) for s in e.subs))
    return e


# ---------------------------------------------------------------------------
# Expression -> polynomial
# ---------------------------------------------------------------------------


class NotPolynomial(ValueError):
    """Raised when an expression has no exact polynomial form."""


def expr_to_poly(e: Expr, *, div_atoms: bool = False) -> Poly:
    """Convert an expression to a polynomial over its free names.

    ``/`` and ``%`` have no polynomial form; with ``div_atoms`` a whole
    ``x / y`` subtree is treated as one opaque variable named by its
    rendering, which is enough to compare two subscripts that share it.
    """
    if isinstance(e, Num):
        return Poly.const(e.value)
    if isinstance(e, Name):
        return Poly.var(e.ident)
    if isinstance(e, Index):
        raise NotPolynomial("array access %s has no polynomial form" % e.array)
    if isinstance(e, Bin):
        if e.op in ("+", "-", "*"):
            a = expr_to_poly(e.left, div_atoms=div_atoms)
            b = expr_to_poly(e.right, div_atoms=div_atoms)
            return {"+": a + b, "-": a - b, "*": a * b}[e.op]
        if e.op == "/":
            b = expr_to_poly(e.right, div_atoms=div_atoms)
            if b.is_constant() and b.constant_value() != 0:
                a = expr_to_poly(e.left, div_atoms=div_atoms)
                k = b.constant_value()
                # exact only when every coefficient divides: C integer
                # division truncates, so (N - 2) / 2 is *not* N/2 - 1
                if _divides_exactly(a, k):
                    return a * (Fraction(1) / k)
            if div_atoms:
                return Poly.var("(%s)" % render_expr(e))
            raise NotPolynomial("division in %s" % render_expr(e))
        if e.op == "%":
            if div_atoms:
                return Poly.var("(%s)" % render_expr(e))
            raise NotPolynomial("modulo in %s" % render_expr(e))
    raise NotPolynomial("cannot convert %r" % (e,))


def _divides_exactly(p: Poly, k: Fraction) -> bool:
    return all((c / k).denominator == 1 for c in p.terms.values())


# ---------------------------------------------------------------------------
# Rendering (AST -> source text)
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "%": 2}


def render_expr(e: Expr, parent_prec: int = 0, right: bool = False) -> str:
    if isinstance(e, Num):
        return str(e.value)
    if isinstance(e, Name):
        return e.ident
    if isinstance(e, Index):
        return e.array + "".join("[%s]" % render_expr(s) for s in e.subs)
    if isinstance(e, Bin):
        prec = _PREC[e.op]
        text = "%s %s %s" % (
            render_expr(e.left, prec, False),
            e.op,
            render_expr(e.right, prec, True),
        )
        needs = prec < parent_prec or (
            prec == parent_prec and right
        )
        return "(%s)" % text if needs else text
    raise TypeError("not an expression: %r" % (e,))


def render_cond(c: Cond) -> str:
    if isinstance(c, Cmp):
        return "%s %s %s" % (render_expr(c.left), c.op, render_expr(c.right))
    return " && ".join(render_cond(p) for p in c.parts)


def render(prog: Program) -> str:
    """Pretty-print a program in the input syntax (round-trip stable)."""
    lines: list[str] = []
    scalars = [d for d in prog.decls if isinstance(d, ScalarDecl)]
    for d in scalars:
        lines.append("int %s;" % ", ".join(d.names))
    for d in prog.decls:
        if isinstance(d, ArrayDecl):
            dims = "".join("[%s]" % render_expr(x) for x in d.dims)
            lines.append("int %s%s;" % (d.name, dims))
        elif isinstance(d, Binding):
            lines.append("int %s = %s;" % (d.name, render_expr(d.value)))
    if prog.decls:
        lines.append("")
    for s in prog.top:
        _render_stmt(s, lines, 0)
    return "\n".join(lines) + "\n"


def _render_stmt(s, lines: list[str], depth: int) -> None:
    pad = "    " * depth
    if isinstance(s, Schedule):
        head = "meta_schedule"
        if s.cache:
            head += " cache(%s)" % ", ".join(s.cache)
        lines.append(pad + head + " {")
        _render_stmt(s.nest, lines, depth + 1)
        lines.append(pad + "}")
    elif isinstance(s, MetaFor):
        ann = "@%s " % s.role if s.role else ""
        header = "%smeta_for (int %s = 0; %s < %s; %s++)" % (
            ann,
            s.var,
            s.var,
            render_expr(s.bound),
            s.var,
        )
        if isinstance(s.body, MetaFor):
            lines.append(pad + header)
            _render_stmt(s.body, lines, depth + 1)
        else:
            lines.append(pad + header + " {")
            for inner in s.body.stmts:
                _render_stmt(inner, lines, depth + 1)
            lines.append(pad + "}")
    elif isinstance(s, SerialFor):
        header = "for (int %s = 0; %s < %s; %s++)" % (
            s.var,
            s.var,
            render_expr(s.bound),
            s.var,
        )
        if len(s.body.stmts) == 1 and isinstance(
            s.body.stmts[0], (SerialFor, Schedule)
        ):
            lines.append(pad + header)
            _render_stmt(s.body.stmts[0], lines, depth + 1)
        else:
            lines.append(pad + header + " {")
            for inner in s.body.stmts:
                _render_stmt(inner, lines, depth + 1)
            lines.append(pad + "}")
    elif isinstance(s, Local):
        lines.append(pad + "int %s = %s;" % (s.name, render_expr(s.value)))
    elif isinstance(s, Assign):
        lines.append(
            pad + "%s = %s;" % (render_expr(s.target), render_expr(s.value))
        )
    elif isinstance(s, If):
        lines.append(pad + "if (%s) {" % render_cond(s.cond))
        for inner in s.then.stmts:
            _render_stmt(inner, lines, depth + 1)
        if s.orelse is not None:
            lines.append(pad + "} else {")
            for inner in s.orelse.stmts:
                _render_stmt(inner, lines, depth + 1)
        lines.append(pad + "}")
    else:
        raise TypeError("cannot render %r" % (s,))
