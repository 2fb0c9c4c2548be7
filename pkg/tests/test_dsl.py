"""Front-end behavior: parsing, parameter classification, role splitting,
and the requirement that rendered text reparses to the identical tree."""

import pytest

from parakern import dsl
from tests.conftest import load_example


# ---------------------------------------------------------------------------
# parsing the shipped examples
# ---------------------------------------------------------------------------


def test_examples_parse(jacobi, transpose, addition):
    assert jacobi.schedule.cache == ("a",)
    assert transpose.schedule.cache == ("a", "c")
    assert addition.schedule.cache == ()


def test_jacobi_shape(jacobi):
    assert [f.var for f in jacobi.meta_loops()] == ["i", "j"]
    assert [f.var for f in jacobi.context_loops] == ["t"]
    assert set(jacobi.arrays()) == {"a"}
    assert [b.name for b in jacobi.bindings()] == ["dim"]


def test_transpose_shape(transpose):
    assert [f.var for f in transpose.meta_loops()] == ["v0", "v1", "u0", "u1"]
    assert transpose.context_loops == ()
    assert set(transpose.arrays()) == {"a", "c"}
    # a is a true 2-D array, c is flat
    assert len(transpose.arrays()["a"].dims) == 2
    assert len(transpose.arrays()["c"].dims) == 1


# ---------------------------------------------------------------------------
# parameter classification
# ---------------------------------------------------------------------------


def test_jacobi_classification(jacobi):
    table = dsl.classify_parameters(jacobi)
    assert table.data == ("N",)
    assert table.program == ("T", "s", "B")
    assert table.order == ("T", "N", "s", "B")
    assert [(n, dsl.render_expr(e)) for n, e in table.bindings] == [
        ("dim", "(N - 2) / (s * B)")
    ]


def test_transpose_classification(transpose):
    table = dsl.classify_parameters(transpose)
    assert table.data == ("N",)
    assert table.program == ("s", "B0", "B1")
    assert table.order == ("N", "s", "B0", "B1")


def test_addition_classification(addition):
    table = dsl.classify_parameters(addition)
    assert table.data == ("N",)
    assert table.program == ("B0", "B1")


def test_unread_scalar_is_dropped():
    prog = dsl.parse(
        """
        int N, Z;
        int a[N];
        meta_schedule { meta_for (int i = 0; i < N; i++) { a[i] = 0; } }
        """
    )
    table = dsl.classify_parameters(prog)
    assert "Z" not in table.order
    assert "never read" in table.provenance["Z"]


def test_classification_sees_through_bindings():
    # M only appears via the binding `half`; it must still classify as a
    # program parameter because it bounds a loop.
    prog = dsl.parse(
        """
        int N, M;
        int a[N];
        int half = M / 2;
        meta_schedule {
            meta_for (int i = 0; i < half; i++) { a[i] = 0; }
        }
        """
    )
    table = dsl.classify_parameters(prog)
    assert "M" in table.program
    assert table.data == ("N",)


# ---------------------------------------------------------------------------
# role splitting
# ---------------------------------------------------------------------------


def test_split_roles_grid_then_threads(jacobi, transpose, addition):
    for prog, n_grid, n_thread in (
        (jacobi, 1, 1),
        (transpose, 2, 2),
        (addition, 2, 2),
    ):
        grid, threads = dsl.split_roles(prog)
        assert len(grid) == n_grid
        assert len(threads) == n_thread
        # the thread chain is a suffix of the loop nest
        assert [f.var for f in grid] + [threads[0].var] == [
            f.var for f in prog.meta_loops()
        ][: n_grid + 1]


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def test_render_reparses_to_identical_tree(jacobi, transpose, addition):
    for prog in (jacobi, transpose, addition):
        assert dsl.parse(dsl.render(prog)) == prog


def test_render_is_deterministic(jacobi):
    assert dsl.render(jacobi) == dsl.render(jacobi)


# ---------------------------------------------------------------------------
# rejected inputs
# ---------------------------------------------------------------------------


def test_missing_semicolon_reports_position():
    with pytest.raises(dsl.DslError) as err:
        dsl.parse("int N\nmeta_schedule { meta_for (int i = 0; i < N; i++) { } }")
    assert err.value.line == 2
    assert err.value.col == 1


def test_nonzero_lower_bound_rejected():
    with pytest.raises(dsl.DslError, match="start at 0"):
        dsl.parse(
            "int N;\nmeta_schedule { meta_for (int i = 1; i < N; i++) { x = 1; } }"
        )


def test_non_unit_step_rejected():
    with pytest.raises(dsl.DslError):
        dsl.parse(
            "int N;\nint a[N];\n"
            "meta_schedule { meta_for (int i = 0; i < N; i += 2) { a[i] = 0; } }"
        )


def test_undeclared_name_rejected():
    # syntax and semantics are separate passes: parse accepts the text,
    # classification rejects the unknown name
    prog = dsl.parse(
        "int N;\nint a[N];\n"
        "meta_schedule { meta_for (int i = 0; i < N; i++) { a[i] = Q; } }"
    )
    with pytest.raises(dsl.DslError, match="undeclared name 'Q'"):
        dsl.classify_parameters(prog)


def test_meta_for_outside_schedule_rejected():
    with pytest.raises(dsl.DslError):
        dsl.parse("int N;\nint a[N];\nmeta_for (int i = 0; i < N; i++) { a[i] = 0; }")


def test_two_schedules_rejected():
    body = "meta_schedule { meta_for (int i = 0; i < N; i++) { a[i] = 0; } }\n"
    with pytest.raises(dsl.DslError, match="exactly one"):
        dsl.parse("int N;\nint a[N];\n" + body + body).schedule_path()


def test_deep_nests_rejected():
    # at most two grid and two thread dimensions exist on the target, so
    # the nest depth is capped at four when the program is read
    with pytest.raises(dsl.DslError, match="between 1 and 4"):
        dsl.parse(
            """
            int N;
            int a[N];
            meta_schedule {
                meta_for (int p = 0; p < N; p++)
                    meta_for (int q = 0; q < N; q++)
                        meta_for (int r = 0; r < N; r++)
                            meta_for (int w = 0; w < N; w++)
                                meta_for (int y = 0; y < N; y++) {
                                    a[p] = q + r + w + y;
                                }
            }
            """
        )


def test_odd_depth_splits_grid_heavy():
    prog = dsl.parse(
        """
        int N;
        int a[N];
        meta_schedule {
            meta_for (int p = 0; p < N; p++)
                meta_for (int q = 0; q < N; q++)
                    meta_for (int r = 0; r < N; r++) {
                        a[p] = q + r;
                    }
        }
        """
    )
    grid, thread = dsl.split_roles(prog)
    assert [m.var for m in grid] == ["p", "q"]
    assert [m.var for m in thread] == ["r"]


def test_cache_of_undeclared_array_rejected():
    prog = dsl.parse(
        "int N;\nint a[N];\nmeta_schedule cache(zz) "
        "{ meta_for (int i = 0; i < N; i++) { a[i] = 0; } }"
    )
    with pytest.raises(dsl.DslError, match="cache clause"):
        dsl.classify_parameters(prog)
