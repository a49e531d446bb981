#!/usr/bin/env python3
"""Smoke test for the tileqr Python extension.

Build the module first, then run this script:

    cargo build --release -p tileqr-py
    python3 python/smoke_test.py

The script locates the compiled cdylib under target/, exposes it as the
importable module `tileqr`, and exercises the main surface.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        REPO / "target" / "release" / "libtileqr_py.so",
        REPO / "target" / "debug" / "libtileqr_py.so",
        REPO / "target" / "release" / "libtileqr_py.dylib",
        REPO / "target" / "debug" / "libtileqr_py.dylib",
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit("extension not built; run: cargo build --release -p tileqr-py")
    stage = Path(tempfile.mkdtemp(prefix="tileqr-py-"))
    # CPython loads extension modules named <module>.so on both Linux and mac
    shutil.copy2(lib, stage / "tileqr.so")
    sys.path.insert(0, str(stage))
    import tileqr  # noqa: E402

    return tileqr


def check(name, ok, detail=""):
    if ok:
        print(f"PASS {name}")
    else:
        print(f"FAIL {name}: {detail}")
        sys.exit(1)


def main():
    tq = load_module()
    eps = sys.float_info.epsilon

    # construction and round trip through lists
    a = tq.Matrix.random(48, 48, seed=7)
    check("matrix shape", (a.rows, a.cols) == (48, 48))
    back = tq.Matrix(a.to_list())
    check("list round trip", back.to_list() == a.to_list())

    # factor and residual
    f = tq.factor(a, block=8)
    be = tq.backward_error(a, f)
    check("backward error", be <= 100 * 48 * eps, f"{be:g}")

    # R is upper triangular
    r = f.r().to_list()
    lower = max(abs(r[i][j]) for i in range(48) for j in range(i))
    check("R upper triangular", lower == 0.0)

    # Q is orthogonal and reproduces A
    ortho = tq.orthogonality_error(f)
    check("Q orthogonality", ortho <= 100 * 48 * eps, f"{ortho:g}")
    qr = f.q().matmul(f.r())
    diff = max(
        abs(x - y) for rx, ry in zip(qr.to_list(), a.to_list()) for x, y in zip(rx, ry)
    )
    check("Q*R reconstructs A", diff <= 1e-12, f"{diff:g}")

    # parallel output is bitwise identical to sequential
    f_seq = tq.factor(a, block=8, sequential=True)
    f_par = tq.factor(a, block=8, workers=2)
    check("determinism", f_seq.r().to_list() == f_par.r().to_list())

    # flop models
    check("kernel flops GEQT2", tq.kernel_flops("GEQT2", 10) == 2000.0)
    check("kernel flops SSRFB", tq.kernel_flops("SSRFB", 10) == 5000.0)
    check("kernel flops TSQT2", tq.kernel_flops("TSQT2", 3) == 90.0)
    try:
        tq.kernel_flops("NOPE", 4)
        check("unknown kernel rejected", False)
    except ValueError:
        check("unknown kernel rejected", True)
    ratio = tq.model_flops_tiled(100, 100, 1) / tq.model_flops_blocked(100, 100)
    check("model ratio near 1.25", 1.25 <= ratio <= 1.26, f"{ratio:g}")
    counts = f.kernel_counts()
    check(
        "instrumented flops match model",
        f.modeled_flops() == tq.model_flops_tiled(6, 6, 8) and counts["GEQT2"] == 6,
        f"{f.modeled_flops():g}",
    )

    # DAG surface
    check("dag node count 3x3", tq.dag_node_count(3, 3) == 14)
    edges = tq.dag_edges(2, 2)
    check("dag edge present", ("S(1,2,2)", "G(2)") in edges)

    # traced run
    f2, summary = tq.factor_traced(a, block=8, workers=2)
    check("trace task count", summary["tasks"] == tq.dag_node_count(6, 6))
    check("trace makespan positive", summary["makespan_ns"] > 0)
    check(
        "traced result matches",
        f2.r().to_list() == f_seq.r().to_list(),
    )

    # error paths
    try:
        tq.factor(a, block=0)
        check("zero block rejected", False)
    except ValueError:
        check("zero block rejected", True)
    try:
        f.apply_q(tq.Matrix.zeros(7, 2))
        check("row mismatch rejected", False)
    except ValueError:
        check("row mismatch rejected", True)

    print("smoke test passed")


if __name__ == "__main__":
    main()
