"""Generated CUDA text and the sibling artifacts: structure, pinned lines
for the hand-checked kernels, determinism, and the export formats."""

import json
import os
import re

from parakern import emit


def all_kernels(result, machine, name):
    return [emit.emit_kernel(case, machine, name=name) for case in result.cases]


def assert_balanced(text):
    pairs = {"(": ")", "{": "}", "[": "]"}
    closers = set(pairs.values())
    stack = []
    for ch in text:
        if ch in pairs:
            stack.append(pairs[ch])
        elif ch in closers:
            assert stack and stack.pop() == ch, "unbalanced %r" % ch
    assert not stack, "unclosed delimiters"


def signature_formals(kernel_text):
    m = re.search(r"__global__ void (\w+)\(([^)]*)\)", kernel_text)
    assert m, "no kernel signature"
    formals = [p.split()[-1].lstrip("*") for p in m.group(2).split(",")]
    return m.group(1), formals


# ---------------------------------------------------------------------------
# structural invariants across every case of every example
# ---------------------------------------------------------------------------


def test_all_kernels_balanced_and_named(jacobi_run, transpose_run, addition_run,
                                        fermi_machine, addition_machine):
    for res, m, name in (
        (jacobi_run, fermi_machine, "jacobi"),
        (transpose_run, fermi_machine, "transpose"),
        (addition_run, addition_machine, "addition"),
    ):
        for case, kt in zip(res.cases, all_kernels(res, m, name)):
            assert_balanced(kt.text)
            symbol, formals = signature_formals(kt.text)
            assert symbol == "%s_case%d" % (name, case.index)
            # formals are unique and never include launch indices
            assert len(formals) == len(set(formals))
            grid_thread = {"v0", "v1", "u0", "u1", "i", "j"} & set(formals)
            table_names = set(res.table.order)
            assert not (grid_thread - table_names)
            # a launch wrapper accompanies every kernel
            assert "%s_launch(" % symbol in kt.text
            assert "<<<dimGrid, dimBlock>>>" in kt.text


def test_emission_is_deterministic(addition_run, addition_machine):
    first = [k.text for k in all_kernels(addition_run, addition_machine, "addition")]
    second = [k.text for k in all_kernels(addition_run, addition_machine, "addition")]
    assert first == second


# ---------------------------------------------------------------------------
# pinned lines on the hand-checked kernels
# ---------------------------------------------------------------------------


def test_jacobi_case1_shared_tile(jacobi_run, fermi_machine):
    text = emit.emit_kernel(jacobi_run.cases[0], fermi_machine, name="jacobi").text
    # shared extent is macro-sized and guarded at compile + run time
    assert "#define PK_EXT_A (2*PK_B*PK_s + 2)" in text
    assert "__shared__ int a_sh[PK_EXT_A];" in text
    assert "assert(PK_B == B && PK_s == s);" in text
    assert '#error "compile with -DPK_B=<value of B> to size shared arrays"' in text
    # grid-stride loop over the single grid dimension
    assert "for (int i = (int)blockIdx.x; i < dim; i += PK_GRID_STRIDE)" in text
    # cooperative load of the read pool, remapped body, cooperative writeback
    assert "a_sh[pk_q] = a[(B*i*s + N) + pk_q];" in text
    assert "a_sh[np - (B*i*s + N)]" in text
    assert "a[(B*i*s + 1) + pk_q] = a_sh[pk_q + (B*s + 2)];" in text
    assert text.count("__syncthreads();") == 2
    # the two access profiles guard their copies with the branch condition
    assert "if ((t % 2) == 0) {" in text
    assert "if (!((t % 2) == 0)) {" in text


def test_transpose_case1_two_dim_tiles(transpose_run, fermi_machine):
    text = emit.emit_kernel(
        transpose_run.cases[0], fermi_machine, name="transpose"
    ).text
    assert "#define PK_EXT_A (PK_B0*PK_B1*PK_s)" in text
    assert "#define PK_EXT_C (PK_B0*PK_B1*PK_s)" in text
    # linearized thread id over the 2-D block
    assert "const int pk_tid = u0 * B1 + u1;" in text
    assert "const int pk_nthreads = B0 * B1;" in text
    # 2-D global addressing with row pitch N on load and writeback
    assert "a_sh[pk_q] = a[((B1*s*v1) + pk_q / B0) * N + (B0*v0) + pk_q % B0];" in text
    assert "c[((B0*v0) + pk_q / (B1*s)) * N + (B1*s*v1) + pk_q % (B1*s)] = c_sh[pk_q];" in text


def test_addition_kernels_match_case_programs(addition_run, addition_machine):
    one = emit.emit_kernel(addition_run.cases[0], addition_machine, name="addition").text
    two = emit.emit_kernel(addition_run.cases[1], addition_machine, name="addition").text
    # case 1 keeps the twin store and half-extent guard
    assert "c[i * N + j + N / 2] = a[i * N + j + N / 2] + b[i * N + j + N / 2];" in one
    assert "if (i < N && j < (N / 2)) {" in one
    # case 2 is the merged single-store version...
    assert "c[i * N + j + N / 2]" not in two
    assert "if (i < N && j < N) {" in two
    # ...and its launch recomputes the binding from its own program text
    assert "int dim1 = N / (2 * B1);" in one
    assert "int dim1 = N / B1;" in two
    # no shared storage anywhere
    for text in (one, two):
        assert "__shared__" not in text
        assert "PK_EXT" not in text


def test_two_grid_dims_map_outer_to_y(addition_run, addition_machine):
    text = emit.emit_kernel(addition_run.cases[0], addition_machine, name="addition").text
    assert "for (int v0 = (int)blockIdx.y; v0 < dim0; v0 += PK_GRID_STRIDE)" in text
    assert "for (int v1 = (int)blockIdx.x; v1 < dim1; v1 += PK_GRID_STRIDE)" in text
    assert "const int u0 = (int)threadIdx.y;" in text
    assert "const int u1 = (int)threadIdx.x;" in text
    # dim3 constructors list x first: the inner dimensions lead
    assert ("dim3 dimGrid(dim1 < PK_GRID_STRIDE ? dim1 : PK_GRID_STRIDE, "
            "dim0 < PK_GRID_STRIDE ? dim0 : PK_GRID_STRIDE);") in text
    assert "dim3 dimBlock(B1, B0);" in text


def test_single_dim_uses_x(jacobi_run, fermi_machine):
    text = emit.emit_kernel(jacobi_run.cases[0], fermi_machine, name="jacobi").text
    assert "blockIdx.y" not in text
    assert "threadIdx.y" not in text
    assert "dim3 dimBlock(B);" in text


def test_grid_stride_override(addition_run, addition_machine):
    text = emit.emit_kernel(addition_run.cases[0], addition_machine, name="addition").text
    assert "#ifndef PK_GRID_STRIDE\n#define PK_GRID_STRIDE 256\n#endif" in text


# ---------------------------------------------------------------------------
# report and tree exports
# ---------------------------------------------------------------------------


def test_report_lists_every_case(jacobi_run):
    report = emit.emit_report(jacobi_run, name="jacobi")
    for case in jacobi_run.cases:
        assert "case %d" % case.index in report
    assert "decision height" in report
    longer = emit.emit_report(jacobi_run, name="jacobi", explain=True)
    assert len(longer) > len(report)


def test_tree_json_round_trips(jacobi_run):
    doc = json.loads(emit.export_tree_json(jacobi_run, name="jacobi"))
    assert set(doc) >= {"nodes", "edges", "cases"}
    kinds = {n["kind"] for n in doc["nodes"]}
    assert kinds <= {"internal", "leaf", "stub"}
    assert "stub" in kinds  # pruned contradictions stay visible
    assert len(doc["cases"]) == 7
    ids = {n["id"] for n in doc["nodes"]}
    for edge in doc["edges"]:
        assert edge["from"] in ids and edge["to"] in ids
    # deterministic serialization
    assert emit.export_tree_json(jacobi_run, name="jacobi") == emit.export_tree_json(
        jacobi_run, name="jacobi"
    )


def test_tree_dot_well_formed(transpose_run):
    dot = emit.export_tree_dot(transpose_run, name="transpose")
    assert dot.startswith("digraph")
    assert_balanced(dot)
    assert "case 1" in dot


def test_write_artifacts(tmp_path, addition_run):
    paths = emit.write_artifacts(addition_run, str(tmp_path), name="addition")
    assert all(os.path.exists(p) for p in paths)
    names = sorted(os.path.basename(p) for p in paths)
    assert names == [
        "addition.case1.cu",
        "addition.case2.cu",
        "addition.report.txt",
        "addition.tree.dot",
        "addition.tree.json",
    ]
    before = {p: open(p).read() for p in paths}
    again = emit.write_artifacts(addition_run, str(tmp_path), name="addition")
    assert again == paths
    assert {p: open(p).read() for p in paths} == before
