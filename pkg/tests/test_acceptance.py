"""Acceptance suite: one test per published behavior guarantee.

Each test states an end-to-end claim about the package — the case splits
produced for the shipped examples, the structural bounds on the decision
tree, witness soundness, semantics preservation, the footprint oracle,
coverage, and artifact determinism — and checks it at full strength.  Every
test is independent and reports a single pass/fail line under ``pytest -v``.
"""

import filecmp
import itertools
import random
import time
from fractions import Fraction

from parakern import dsl, emit, engine, interp, strategies
from parakern.algebra import ConstraintSystem, Poly, check_consistency, le, lt
from parakern.engine import Optimizer, case_header, verify_coverage
from parakern.machine import load_machine, parse_machine

from tests.conftest import data_path, load_example


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def timed_optimize(stem: str, machine_file: str):
    """Load a shipped example and machine fresh, and time the full search."""
    program = load_example(stem)
    machine = load_machine(data_path(machine_file))
    t0 = time.perf_counter()
    result = engine.optimize(program, machine)
    return result, time.perf_counter() - t0


def split_header(case, result):
    """A case's displayed constraints, split into the storage-bound part
    and the register-bound part (every displayed constraint is one or the
    other for the shipped machines)."""
    header = case_header(case, result.box)
    storage = frozenset(c for c in header if "Z_B" in c.poly.variables())
    registers = frozenset(c for c in header if "R_B" in c.poly.variables())
    assert len(storage) + len(registers) == len(header)
    return storage, registers


def _rand_fill(data, rng):
    if data and isinstance(data[0], list):
        return [_rand_fill(row, rng) for row in data]
    return [rng.randrange(-50, 50) for _ in data]


def seeded_arrays(program, params, rng):
    """Random array contents with the shapes the program declares."""
    zeros = interp.Machine(program, dict(params)).arrays
    return {name: _rand_fill(data, rng) for name, data in zeros.items()}


def params_for(program, assignment):
    table = dsl.classify_parameters(program)
    return {k: assignment[k] for k in table.order}


# ---------------------------------------------------------------------------
# 1-3: case splits of the shipped examples
# ---------------------------------------------------------------------------


def test_c01_jacobi_shared_memory_case_split():
    """The stencil example splits into exactly the three storage regimes,
    with exact polynomial equality and a register bound alongside each."""
    result, elapsed = timed_optimize("jacobi", "fermi.machine")
    assert elapsed < 5.0, "optimization took %.2fs (budget 5s)" % elapsed

    s, B, Z = Poly.var("s"), Poly.var("B"), Poly.var("Z_B")
    full_tile = 2 * s * B + 2
    unit_tile = 2 * B + 2
    want = {
        frozenset({le(full_tile, Z)}),
        frozenset({le(unit_tile, Z), lt(Z, full_tile)}),
        frozenset({lt(Z, unit_tile)}),
    }

    seen = set()
    for case in result.cases:
        storage, registers = split_header(case, result)
        assert registers, "case %d lacks a register bound" % case.index
        seen.add(storage)
    assert seen == want


def test_c02_transpose_shared_memory_case_split():
    """The transposition example reproduces its three storage regimes as
    exact polynomials over the two-dimensional tile."""
    result, elapsed = timed_optimize("transpose", "fermi.machine")
    assert elapsed < 5.0, "optimization took %.2fs (budget 5s)" % elapsed

    s, B0, B1, Z = (Poly.var(n) for n in ("s", "B0", "B1", "Z_B"))
    full_tile = 2 * s * B0 * B1
    unit_tile = 2 * B0 * B1
    want = {
        frozenset({le(full_tile, Z)}),
        frozenset({le(unit_tile, Z), lt(Z, full_tile)}),
        frozenset({lt(Z, unit_tile)}),
    }

    seen = set()
    for case in result.cases:
        storage, registers = split_header(case, result)
        assert registers, "case %d lacks a register bound" % case.index
        seen.add(storage)
    assert seen == want


def test_c03_addition_two_case_structure():
    """The elementwise example yields exactly two cases sharing the launch
    bound, split strictly on the two derived register demands (4 < 5)."""
    result, elapsed = timed_optimize("addition", "addition.machine")
    assert elapsed < 2.0, "optimization took %.2fs (budget 2s)" % elapsed
    assert len(result.cases) == 2

    B0, B1, T, R = (Poly.var(n) for n in ("B0", "B1", "T_B", "R_B"))
    launch = le(B0 * B1, T)
    headers = []
    for case in result.cases:
        header = case_header(case, result.box)
        assert launch in header, "case %d lacks the launch bound" % case.index
        headers.append(frozenset(c for c in header if c != launch))

    # one case keeps the original (its demand of 5 fits), the other applies
    # the merging rewrite and owns the strict window 4 <= R_B < 5
    assert set(headers) == {
        frozenset({le(5, R)}),
        frozenset({le(4, R), lt(R, 5)}),
    }
    window = frozenset({le(4, R), lt(R, 5)})
    rewritten = result.cases[headers.index(window)]
    assert rewritten.applied == ("granularity",)


# ---------------------------------------------------------------------------
# 4: decision height stays within the roster product bound
# ---------------------------------------------------------------------------


STRATS = (
    "granularity",
    "caching-off",
    "cse-0",
    "cse-1",
    "regpressure-0",
    "regpressure-1",
    "regpressure-2",
)


def random_program(rng):
    """A random small schedule: 1-D or 2-D tiles, optional caching clause,
    optional per-thread serial loop, and a body of varying register weight."""
    cache = rng.random() < 0.6
    serial = rng.random() < 0.7
    extra = rng.randrange(0, 3)
    deep = rng.random() < 0.4
    if deep:
        lines = []
        if serial:
            open_, close = "for (int k = 0; k < s; k++) {", "}"
            idx = "(v1 * s + k) * B1 + u1"
        else:
            open_, close = "", ""
            idx = "v1 * B1 + u1"
        lines.append("int i = v0 * B0 + u0;")
        lines.append(f"int j = {idx};")
        expr = "a[j * N + i]"
        for e in range(extra):
            lines.append(f"int e{e} = i * {e + 2} + j;")
            expr += f" + e{e}"
        lines.append(f"c[i * N + j] = {expr};")
        body = "\n".join(
            ([open_] if open_ else []) + lines + ([close] if close else [])
        )
        decls = "int N, s, B0, B1;" if serial else "int N, B0, B1;"
        dim1 = "N / (s * B1)" if serial else "N / B1"
        text = f"""
{decls}
int a[N * N];
int c[N * N];
int dim0 = N / B0;
int dim1 = {dim1};
meta_schedule {'cache(a)' if cache else ''} {{
    meta_for (int v0 = 0; v0 < dim0; v0++)
        meta_for (int v1 = 0; v1 < dim1; v1++)
            meta_for (int u0 = 0; u0 < B0; u0++)
                meta_for (int u1 = 0; u1 < B1; u1++) {{ {body} }}
}}
"""
    else:
        if serial:
            open_, close = "for (int k = 0; k < s; k++) {", "}"
            pexpr = "i * s * B + k * B + j"
        else:
            open_, close = "", ""
            pexpr = "i * B + j"
        lines = [f"int p = {pexpr};"]
        expr = "a[N + p] + a[N + p + 1]"
        for e in range(extra):
            lines.append(f"int e{e} = p * {e + 2} + N;")
            expr += f" + e{e}"
        lines.append(f"a[p + 1] = ({expr}) / 3;")
        body = "\n".join(
            ([open_] if open_ else []) + lines + ([close] if close else [])
        )
        decls = "int N, s, B;" if serial else "int N, B;"
        dim = "(N - 2) / (s * B)" if serial else "(N - 2) / B"
        text = f"""
{decls}
int a[2 * N];
int dim = {dim};
meta_schedule {'cache(a)' if cache else ''} {{
    meta_for (int i = 0; i < dim; i++)
        meta_for (int j = 0; j < B; j++) {{ {body} }}
}}
"""
    return dsl.parse(text)


def random_machine(rng):
    """A random roster: up to 7 strategies in random order, 1-4 counters
    with random measures and random reducer sets."""
    n_counters = rng.randrange(1, 5)
    w = rng.randrange(1, 8)
    order = rng.sample(STRATS, w)
    lines = [
        "[machine]", "name = roster", "witness_budget = 500",
        "[param.Z_B]", "kind = resource", "range = 0 12288",
        "[param.R_B]", "kind = resource", "range = 0 63",
        "[param.T_B]", "kind = resource", "range = 0 1024",
        "[param.R_F]", "kind = resource", "range = 0 32768",
        "[param.O]", "kind = performance", "range = 0 1",
    ]
    measures = [
        rng.choice(
            ("shared-words", "registers-per-thread", "threads-per-block",
             "occupancy")
        )
        for _ in range(n_counters)
    ]
    measures.sort(key=lambda m: m == "occupancy")  # resources first
    bound = {
        "shared-words": "Z_B",
        "registers-per-thread": "R_B",
        "threads-per-block": "T_B",
        "occupancy": "O",
    }
    for i, m in enumerate(measures):
        reduce_with = rng.sample(order, rng.randrange(1, w + 1))
        lines += [
            f"[counter.c{i}]",
            f"measure = {m}",
            f"bound = {bound[m]}",
            "reduce_with = " + " ".join(reduce_with),
        ]
        if m == "occupancy":
            lines.append("register_file = R_F")
    lines += ["[strategies]", "order = " + " ".join(order)]
    return parse_machine("\n".join(lines)), w, n_counters


def test_c04_tree_height_bound_over_random_rosters():
    """Over 200 random program/roster pairs, the decision height never
    exceeds (number of strategies) x (number of counters)."""
    rng = random.Random(0xACCE)
    violations = []
    runs = 0
    for _ in range(200):
        program = random_program(rng)
        machine, w, n_counters = random_machine(rng)
        result = Optimizer(program, machine, budget=500).run()
        runs += 1
        height = result.tree.height()
        if height > w * n_counters:
            violations.append((height, w, n_counters))
    assert runs >= 200
    assert not violations, violations


# ---------------------------------------------------------------------------
# 5: every subset of a strategy roster is reachable
# ---------------------------------------------------------------------------


SUBSET_MACHINE = """
[machine]
name = subset-roster

[param.Z_B]
kind = resource
range = 0 12288

[param.R_B]
kind = resource
range = 0 63

[param.T_B]
kind = resource
range = 0 1024

[counter.shared_words]
measure = shared-words
bound = Z_B
reduce_with = caching-off

[counter.registers]
measure = registers-per-thread
bound = R_B
reduce_with = cse-0

[counter.threads]
measure = threads-per-block
bound = T_B
reduce_with = granularity

[strategies]
order = granularity caching-off cse-0
"""


def applied_sets(program, machine):
    result = Optimizer(program, machine, prune=False).run()
    return {frozenset(leaf.state.applied) for leaf in result.tree.leaves()}


def test_c05_all_strategy_subsets_reachable():
    """With a three-strategy roster on the stencil example, a root-to-leaf
    path exists for every subset U of the roster whose applied set is
    exactly U intersected with the applicable strategies."""
    jacobi = load_example("jacobi")
    machine = parse_machine(SUBSET_MACHINE)
    roster = set(machine.strategy_order)

    applicable = {s for s in roster if strategies.applicable(s, jacobi)}
    assert applicable == roster  # all three apply to the shipped program
    observed = applied_sets(jacobi, machine)
    for r in range(len(roster) + 1):
        for subset in itertools.combinations(sorted(roster), r):
            want = frozenset(subset) & applicable
            assert want in observed, "no path applies exactly %s" % (subset,)

    # strip the caching clause: with one roster entry inapplicable, paths
    # realize U intersected with the remaining applicable pair
    stripped = strategies.apply_source("caching-off", jacobi)
    applicable = {s for s in roster if strategies.applicable(s, stripped)}
    assert applicable == {"granularity", "cse-0"}
    observed = applied_sets(stripped, machine)
    assert "caching-off" not in set().union(*observed)
    for r in range(len(roster) + 1):
        for subset in itertools.combinations(sorted(roster), r):
            want = frozenset(subset) & applicable
            assert want in observed, "no path applies exactly %s" % (subset,)


# ---------------------------------------------------------------------------
# 6: witnesses are sound; crossed bounds refute without search
# ---------------------------------------------------------------------------


def test_c06_case_witnesses_and_searchfree_refutation(
    jacobi_run, transpose_run, addition_run
):
    """Every emitted case carries an integer witness satisfying its whole
    constraint system under exact rational evaluation, and a crossed pair
    of bounds on one variable is refuted before any point is sampled."""
    for result in (jacobi_run, transpose_run, addition_run):
        for case in result.cases:
            assert case.witness is not None, "case %d has no witness" % case.index
            assert not case.witness_unknown
            for name, value in case.witness.items():
                assert Fraction(value).denominator == 1, (case.index, name)
                lo, hi = result.box[name]
                assert lo <= value <= hi, (case.index, name)
            assert case.system.holds(case.witness), case.index

    R = Poly.var("R")
    crossed = ConstraintSystem((lt(R, 10), le(10, R)))
    verdict = check_consistency(crossed, {"R": (0, 63)})
    assert verdict.is_inconsistent
    assert verdict.witness is None
    # the reason names the search-free pairwise rule, so no witness
    # enumeration was involved in the refutation
    assert verdict.reason == "pairwise-contradiction"


# ---------------------------------------------------------------------------
# 7: every case's program computes what the original computes
# ---------------------------------------------------------------------------


def granularity_params(stem: str, assignment: dict) -> dict:
    """Parameter translation for cases produced by the merging rewrite: the
    rewritten nest does one unit of work per thread over a widened tile."""
    a = dict(assignment)
    if stem == "jacobi":
        return {"N": a["N"], "B": a["s"] * a["B"], "T": a["T"]}
    if stem == "transpose":
        return {"N": a["N"], "B0": a["B0"], "B1": a["s"] * a["B1"]}
    return {"N": a["N"], "B0": a["B0"], "B1": 2 * a["B1"]}


def sample_assignment(stem: str, rng) -> dict:
    if stem == "jacobi":
        return {
            "N": rng.randrange(4, 65),
            "s": rng.randrange(1, 5),
            "B": rng.randrange(1, 9),
            "T": rng.randrange(1, 4),
        }
    if stem == "transpose":
        return {
            "N": rng.randrange(2, 65),
            "s": rng.randrange(1, 5),
            "B0": rng.randrange(1, 9),
            "B1": rng.randrange(1, 9),
        }
    # elementwise twin-store example: the merged tile must align with the
    # second store's fixed offset, so sample N as a multiple of 2*B1
    B1 = rng.randrange(1, 9)
    k = rng.randrange(1, 64 // (2 * B1) + 1)
    return {"N": 2 * B1 * k, "B0": rng.randrange(1, 9), "B1": B1}


def test_c07_case_programs_preserve_semantics(
    jacobi_run, transpose_run, addition_run
):
    """For 20 random small parameter assignments per example, running any
    case's program leaves the arrays exactly as the original does."""
    runs = {"jacobi": jacobi_run, "transpose": transpose_run,
            "addition": addition_run}
    rng = random.Random(0x5E11)
    for stem, result in runs.items():
        original = result.source
        for _ in range(20):
            assignment = sample_assignment(stem, rng)
            seed = seeded_arrays(original, assignment, rng)
            want = interp.run_program(
                original, params_for(original, assignment), arrays=seed
            )
            for case in result.cases:
                mapped = (
                    granularity_params(stem, assignment)
                    if "granularity" in case.applied
                    else dict(assignment)
                )
                got = interp.run_program(
                    case.program, params_for(case.program, mapped), arrays=seed
                )
                assert got == want, (stem, case.index, assignment)


# ---------------------------------------------------------------------------
# 8: the symbolic footprint equals a brute-force block trace
# ---------------------------------------------------------------------------


def traced_distinct_elements(program, params, grid_values, context_values=None):
    """Distinct array elements touched by one block: reads plus writes,
    counted per (array, direction) as the cached-storage planner does."""
    touched: dict[tuple, set] = {}

    def tracer(arr, idx, mode):
        touched.setdefault((arr, mode), set()).add(idx)

    interp.run_block(
        program,
        params,
        grid_values,
        context_values=context_values,
        tracer=tracer,
    )
    return sum(len(elems) for elems in touched.values())


def test_c08_footprint_formula_matches_block_trace(
    jacobi, transpose, fermi_machine
):
    """Over 50+ random assignments with tiles up to 4096 elements, the
    symbolic cached-words polynomial equals the distinct-element count
    observed by tracing one simulated block."""
    from parakern import counters, model

    rng = random.Random(0xF007)
    checked = 0

    cfg = model.build_source_cfg(jacobi)
    table = dsl.classify_parameters(jacobi)
    layout = counters.footprint_layout(cfg, table, fermi_machine.box(table.order))
    for _ in range(30):
        s = rng.randrange(1, 5)
        B = rng.choice((1, 2, 3, 4, 8, 16, 64, 256, 1024))
        if s * B > 4096:
            continue
        dim = rng.randrange(1, 4)
        N = dim * s * B + 2 + rng.randrange(0, s * B)  # tail allowed
        params = {"N": N, "s": s, "B": B, "T": 2}
        g = rng.randrange(0, (N - 2) // (s * B))
        t = rng.randrange(0, 2)
        got = traced_distinct_elements(
            jacobi, params, {"i": g}, context_values={"t": t}
        )
        assert got == int(layout.total.eval(params)), params
        checked += 1

    cfg = model.build_source_cfg(transpose)
    table = dsl.classify_parameters(transpose)
    layout = counters.footprint_layout(cfg, table, fermi_machine.box(table.order))
    for _ in range(30):
        s = rng.randrange(1, 5)
        B0 = rng.choice((1, 2, 3, 4, 8, 16))
        B1 = rng.choice((1, 2, 3, 4, 8, 16, 32))
        if s * B0 * B1 > 4096:
            continue
        N = max(B0, s * B1) * rng.randrange(1, 4)
        if N // B0 < 1 or N // (s * B1) < 1:
            continue
        params = {"N": N, "s": s, "B0": B0, "B1": B1}
        grid = {
            "v0": rng.randrange(0, N // B0),
            "v1": rng.randrange(0, N // (s * B1)),
        }
        got = traced_distinct_elements(transpose, params, grid)
        assert got == int(layout.total.eval(params)), params
        checked += 1

    assert checked >= 50, "only %d assignments were in range" % checked


# ---------------------------------------------------------------------------
# 9: sampled parameter points are always served by some case
# ---------------------------------------------------------------------------


def test_c09_sampled_parameter_coverage(jacobi_run, transpose_run, addition_run):
    """1000 sampled parameter points per example all fall inside at least
    one case's constraint system."""
    for result in (jacobi_run, transpose_run, addition_run):
        report = verify_coverage(result, samples=1000)
        assert report.samples == 1000
        assert report.violations == [], report.violations[:3]


# ---------------------------------------------------------------------------
# 10: artifacts are byte-identical across runs
# ---------------------------------------------------------------------------


def test_c10_artifacts_byte_identical_across_runs(tmp_path):
    """Two independent end-to-end runs (fresh parse, fresh search, fresh
    emission) write byte-identical kernels, report, and tree files."""
    jobs = (
        ("jacobi", "fermi.machine"),
        ("transpose", "fermi.machine"),
        ("addition", "addition.machine"),
    )
    for stem, machine_file in jobs:
        dirs = []
        for tag in ("one", "two"):
            out = tmp_path / stem / tag
            machine = load_machine(data_path(machine_file))
            result = engine.optimize(load_example(stem), machine)
            emit.write_artifacts(result, str(out), name=stem)
            dirs.append(out)
        first, second = dirs
        names = sorted(p.name for p in first.iterdir())
        assert names == sorted(p.name for p in second.iterdir())
        match, mismatch, errors = filecmp.cmpfiles(
            str(first), str(second), names, shallow=False
        )
        assert not mismatch and not errors, (stem, mismatch, errors)
        assert any(n.endswith(".cu") for n in names)
        assert f"{stem}.report.txt" in names
        assert f"{stem}.tree.json" in names
        assert f"{stem}.tree.dot" in names
