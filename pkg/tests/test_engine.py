"""The case-splitting search: exact case tables for the three examples,
witness integrity, tree-shape invariants, determinism, and the unpruned
walk."""

from fractions import Fraction

from parakern import engine
from parakern.engine import Optimizer, case_header, verify_coverage, verify_optimality


def header_texts(result):
    return [
        tuple(c.text(result.order) for c in case_header(case, result.box, result.order))
        for case in result.cases
    ]


# ---------------------------------------------------------------------------
# exact case tables
# ---------------------------------------------------------------------------


def test_jacobi_case_table(jacobi_run):
    res = jacobi_run
    assert len(res.cases) == 7
    assert res.dropped == []
    assert header_texts(res) == [
        ("2*s*B + 2 <= Z_B", "10 <= R_B"),
        ("2*s*B + 2 <= Z_B", "R_B < 10", "7 <= R_B"),
        ("2*s*B + 2 <= Z_B", "R_B < 7", "5 <= R_B"),
        ("Z_B < 2*s*B + 2", "2*B + 2 <= Z_B", "7 <= R_B"),
        ("Z_B < 2*s*B + 2", "2*B + 2 <= Z_B", "R_B < 7", "5 <= R_B"),
        ("Z_B < 2*B + 2", "7 <= R_B"),
        ("Z_B < 2*B + 2", "R_B < 7", "5 <= R_B"),
    ]
    assert [c.applied for c in res.cases] == [
        (),
        ("granularity",),
        ("granularity", "cse-0", "cse-1", "regpressure-0", "regpressure-1",
         "regpressure-2"),
        ("granularity",),
        ("granularity", "cse-0", "cse-1", "regpressure-0", "regpressure-1",
         "regpressure-2"),
        ("granularity", "caching-off"),
        ("granularity", "caching-off", "cse-0", "cse-1", "regpressure-0",
         "regpressure-1", "regpressure-2"),
    ]


def test_jacobi_three_storage_regimes(jacobi_run):
    # the case table partitions into full-footprint, reduced-footprint, and
    # cache-free regimes
    firsts = {header[0] for header in header_texts(jacobi_run)}
    assert firsts == {"2*s*B + 2 <= Z_B", "Z_B < 2*s*B + 2", "Z_B < 2*B + 2"}


def test_transpose_case_table(transpose_run):
    res = transpose_run
    assert len(res.cases) == 4
    assert res.dropped == []
    assert header_texts(res) == [
        ("2*s*B0*B1 <= Z_B", "8 <= R_B"),
        ("2*s*B0*B1 <= Z_B", "R_B < 8", "4 <= R_B"),
        ("Z_B < 2*s*B0*B1", "2*B0*B1 <= Z_B", "4 <= R_B"),
        ("Z_B < 2*B0*B1", "4 <= R_B"),
    ]
    assert [c.applied for c in res.cases] == [
        (),
        ("granularity",),
        ("granularity",),
        ("granularity", "caching-off"),
    ]


def test_addition_case_table(addition_run):
    res = addition_run
    assert len(res.cases) == 2
    assert header_texts(res) == [
        ("B0*B1 <= T_B", "5 <= R_B"),
        ("B0*B1 <= T_B", "R_B < 5", "4 <= R_B"),
    ]
    assert [c.applied for c in res.cases] == [(), ("granularity",)]
    # the register split is strict: 5 <= R_B on one side, R_B < 5 on the other
    one, two = res.cases
    assert any(c.text() == "R_B < 5" for c in case_header(two, res.box))


def test_trails(jacobi_run, transpose_run, addition_run):
    assert [c.trail for c in addition_run.cases] == [
        ("(3a)", "(3a)"),
        ("(3a)", "(3b)"),
    ]
    assert [c.trail for c in transpose_run.cases] == [
        ("(3a)", "(3a)"),
        ("(3a)", "(3b)", "(4a)"),
        ("(3b)", "(4a)"),
        ("(3b)", "(4b)"),
    ]
    assert jacobi_run.cases[0].trail == ("(3a)", "(3a)")
    assert jacobi_run.cases[5].trail == ("(3b)", "(4b)")


def test_decision_heights(jacobi_run, transpose_run, addition_run):
    # height counts only edges out of two-child nodes; the replayed chain of
    # single-child evaluations adds raw depth but no decisions
    assert jacobi_run.tree.height() == 13
    assert jacobi_run.tree.raw_height() == 15
    assert transpose_run.tree.height() == 7
    assert transpose_run.tree.raw_height() == 9
    assert addition_run.tree.height() == 2
    assert addition_run.tree.raw_height() == 4


def test_case_programs(addition_run, addition):
    one, two = addition_run.cases
    assert one.program == addition
    assert two.program != addition
    # the rewritten nest binds twice the tiles along the split axis
    from parakern import strategies

    assert two.program == strategies.apply_source("granularity", addition)


# ---------------------------------------------------------------------------
# witnesses
# ---------------------------------------------------------------------------


def test_every_case_has_an_exact_witness(jacobi_run, transpose_run, addition_run):
    for res in (jacobi_run, transpose_run, addition_run):
        for case in res.cases:
            assert not case.witness_unknown
            w = case.witness
            assert w is not None
            # integral program/data parameters, possibly rational limits
            for name, value in w.items():
                lo, hi = res.box[name]
                assert lo <= value <= hi, (case.index, name)
                if name not in res.machine.rational_params:
                    assert Fraction(value).denominator == 1
            # exact satisfaction of the full system, not just the header
            assert case.system.holds(w), case.index


def test_witnesses_respect_strictness(addition_run):
    # case 2 carries R_B < 5: the witness must satisfy it strictly
    two = addition_run.cases[1]
    assert two.witness["R_B"] < 5
    assert two.witness["R_B"] >= 4


# ---------------------------------------------------------------------------
# tree structure
# ---------------------------------------------------------------------------


def test_leaves_are_processed(jacobi_run):
    for node in jacobi_run.tree.nodes():
        if node.is_leaf and node.case is not None:
            assert node.gamma == ()  # all counters evaluated
        if node.counter is not None and not node.is_leaf:
            assert node.accept is not None


def test_root_starts_with_full_agenda(jacobi_run, fermi_machine):
    root = jacobi_run.tree.root
    assert root.gamma == ("shared_words", "registers")
    assert root.omega == fermi_machine.strategy_order


def test_initial_bounds_are_implicit_not_printed(jacobi_run):
    # every parameter is constrained nonnegative from the start, but those
    # initial bounds never clutter a case header
    res = jacobi_run
    for case in res.cases:
        for c in case_header(case, res.box, res.order):
            assert not c.initial
    # yet they are part of the system itself
    assert any(c.initial for c in res.cases[0].system)


def test_refuse_consumes_exactly_one_strategy(addition_run):
    # along the refuse edge into case 2 the offer was granularity; the
    # accept chain never consumes any
    root = addition_run.tree.root
    assert root.offered == "granularity"
    refused = root.refuse
    assert refused is not None
    assert "granularity" not in refused.omega
    accepted = root.accept
    assert accepted is not None
    assert accepted.omega == root.omega


# ---------------------------------------------------------------------------
# determinism and pruning
# ---------------------------------------------------------------------------


def test_runs_are_deterministic(addition, addition_machine, addition_run):
    again = engine.optimize(addition, addition_machine)
    assert header_texts(again) == header_texts(addition_run)
    assert [c.trail for c in again.cases] == [c.trail for c in addition_run.cases]
    assert [c.witness for c in again.cases] == [
        c.witness for c in addition_run.cases
    ]


def test_unpruned_walk_same_cases(addition, addition_machine, addition_run):
    full = Optimizer(addition, addition_machine, prune=False).run()
    assert header_texts(full) == header_texts(addition_run)
    # without inline pruning the contradictory branches are explored and
    # rejected at the end instead
    assert len(list(full.tree.nodes())) >= len(list(addition_run.tree.nodes()))


def test_pruned_branches_leave_stubs(jacobi_run):
    stubs = [n for n in jacobi_run.tree.nodes() if n.pruned_reason]
    assert stubs, "the refused-threads contradictions should leave stubs"
    for stub in stubs:
        assert stub.case is None
        assert stub.is_leaf


# ---------------------------------------------------------------------------
# verification passes
# ---------------------------------------------------------------------------


def test_coverage_smoke(addition_run):
    report = verify_coverage(addition_run, samples=100)
    assert report.violations == []
    assert report.samples == 100


def test_optimality_smoke(addition_run):
    report = verify_optimality(addition_run)
    assert report.entries == []
