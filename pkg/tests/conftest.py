"""Shared fixtures: a small decompiled-IR module and corpus helpers."""

import numpy as np
import pytest

from irbindiff.ircorpus import FunctionMeta, ParseDiagnostics, parse_module

# A module in the shape a decompiler emits: statements before the first
# label form the entry block, `; preds = ...` comments carry the CFG, and
# the body ends with uselistorder directives.
FIXTURE_MODULE = """\
; decompiled module fixture
target datalayout = "e-m:e-i64:64-f80:128-n8:16:32:64-S128"

declare i32 @printf(i8*, ...)

define i32 @bind_engine(i32 %arg1, i32* %arg2) {
  %stack_var_-8 = alloca i32, !insn.addr !1
  store i32 %arg1, i32* %stack_var_-8, !insn.addr !2
  br label %dec_label_pc_215c, !insn.addr !3
dec_label_pc_215c:
  %0 = load i32, i32* %stack_var_-8, align 4, !insn.addr !4
  %1 = icmp eq i32 %0, 0, !insn.addr !5
  br i1 %1, label %dec_label_pc_218c, label %dec_label_pc_21ac, !insn.addr !6
dec_label_pc_218c:                                ; preds = %dec_label_pc_215c
  %2 = add i32 %0, 1, !insn.addr !7
  br label %dec_label_pc_21ac, !insn.addr !8
dec_label_pc_21ac:                                ; preds = %dec_label_pc_215c, %dec_label_pc_218c
  %3 = phi i32 [ %0, %dec_label_pc_215c ], [ %2, %dec_label_pc_218c ]
  ret i32 %3, !insn.addr !9
  uselistorder i32 %0, { 1, 0 }
}

define void @leaf() {
  ret void
}
"""


@pytest.fixture
def fixture_module_text() -> str:
    return FIXTURE_MODULE


@pytest.fixture
def bind_engine():
    meta = FunctionMeta(project="proj", binary="bin", compiler="gcc",
                        compiler_version="9", optimization="O0",
                        architecture="x86")
    diags = ParseDiagnostics()
    funcs = parse_module(FIXTURE_MODULE, meta, diags)
    assert not diags.unknown_pred_edges
    return funcs[0]


def random_function_body(rng: np.random.Generator) -> str:
    """A randomized decompiler-shaped function for property tests."""
    n_blocks = int(rng.integers(2, 8))
    labels = [f"dec_label_pc_{0x1000 + 4 * i:x}" for i in range(n_blocks)]
    lines = ["define i32 @f() {"]
    lines += ["  %v = alloca i32", "  br label %" + labels[0]]
    for i, label in enumerate(labels):
        if i > 0 and rng.random() < 0.8:
            n_preds = int(rng.integers(1, i + 1))
            picks = rng.choice(i, size=n_preds, replace=False)
            preds = ", ".join("%" + labels[int(p)] for p in sorted(picks))
            lines.append(f"{label}:                ; preds = {preds}")
        else:
            lines.append(f"{label}:")
        for j in range(int(rng.integers(1, 4))):
            lines.append(f"  %t{i}_{j} = add i32 %v, {int(rng.integers(0, 2000))}"
                         ", !insn.addr !1")
        if rng.random() < 0.3:
            lines.append("  uselistorder i32 %v, { 1, 0 }")
        lines.append("  ret i32 %v" if i == n_blocks - 1
                     else "  br label %" + labels[i + 1])
    lines.append("}")
    return "\n".join(lines) + "\n"
