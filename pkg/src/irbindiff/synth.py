"""Deterministic synthetic corpus of decompiled-style LLVM-IR modules.

Each source function (a "group") gets a recipe: a block skeleton, per-block
operation sequences, helper callees and constants. The recipe is rendered
under six compile settings. Renderings of the same group share opcode
sequences and helpers but differ the way a real toolchain differs:

  * label addresses and metadata ids change everywhere (normalization
    collapses them),
  * small constants drift within their magnitude class,
  * clang builds insert a guard call and sign extensions after compares,
  * O2/O3 builds drop redundant stack traffic and merge away 1-2 blocks,
  * arm builds splice spill blocks of generic instructions into edges and
    call arm-only intrinsics, shifting both token mix and structure.

All randomness derives from (seed, group, variant), so regeneration is
byte-identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .seeding import rng_for

log = logging.getLogger(__name__)

PROJECT = "synthproj"
BINARY = "app"

VARIANTS: tuple[tuple[str, str, str, str], ...] = (
    ("gcc", "9", "O0", "x86"),
    ("gcc", "9", "O0", "arm"),
    ("gcc", "9", "O2", "x86"),
    ("clang", "11", "O0", "x86"),
    ("clang", "11", "O2", "arm"),
    ("gcc", "9", "O3", "arm"),
)

HELPERS = (
    "checksum32", "mix_bits", "rotl32", "hash_update", "table_lookup",
    "scale_fixed", "clamp_range", "poly_eval", "crc_step", "pack_pair",
    "unpack_pair", "saturate_add", "bit_reverse", "parity16", "fold64",
    "lerp_fixed", "wrap_index", "gray_code", "popcnt_emul", "div_round",
    "mod_pow2", "swap_half", "zigzag", "delta_enc", "delta_dec",
    "median3", "minmax", "bucket_of", "bloom_probe", "fnv_step",
)

BIN_OPS = ("add", "sub", "mul", "and", "or", "xor", "shl", "lshr", "ashr")
CMP_OPS = ("eq", "ne", "slt", "sgt", "sle", "sge", "ult", "ugt")


@dataclass
class _Op:
    """One abstract statement, rendered into IR text per variant."""

    kind: str                      # alloca | load | store | bin | cmp | call
    reg: int                       # destination (or source for store)
    args: tuple = ()
    o0_only: bool = False          # dropped by O2/O3 renderings


@dataclass
class _BlockRecipe:
    ops: list[_Op] = field(default_factory=list)
    removable: bool = False        # O2/O3 may merge this block away


@dataclass
class _GroupRecipe:
    name: str
    blocks: list[_BlockRecipe]
    edges: list[tuple[int, int]]   # indices into blocks (0 = entry)


def _build_recipe(group: int, seed: int) -> _GroupRecipe:
    rng = rng_for(seed, "synth-recipe", group)
    n_blocks = int(rng.integers(8, 12))
    helpers = [HELPERS[i] for i in
               rng.choice(len(HELPERS), size=int(rng.integers(2, 5)),
                          replace=False)]
    reg = 0
    blocks: list[_BlockRecipe] = []
    entry = _BlockRecipe()
    for _ in range(int(rng.integers(2, 4))):
        reg += 1
        entry.ops.append(_Op("alloca", reg))
    blocks.append(entry)
    for b in range(1, n_blocks):
        block = _BlockRecipe()
        for _ in range(int(rng.integers(3, 7))):
            roll = rng.random()
            reg += 1
            if roll < 0.24:
                block.ops.append(_Op("load", reg, (int(rng.integers(0, 6)),),
                                     o0_only=rng.random() < 0.3))
            elif roll < 0.40:
                block.ops.append(_Op("store", reg,
                                     (int(rng.integers(1, 3)),),
                                     o0_only=rng.random() < 0.3))
            elif roll < 0.70:
                op = BIN_OPS[int(rng.integers(len(BIN_OPS)))]
                const_class = "small" if rng.random() < 0.7 else "addr"
                block.ops.append(_Op("bin", reg, (op, const_class,
                                                  int(rng.integers(0, 900)))))
            elif roll < 0.86:
                helper = helpers[int(rng.integers(len(helpers)))]
                block.ops.append(_Op("call", reg, (helper,)))
            else:
                cmp = CMP_OPS[int(rng.integers(len(CMP_OPS)))]
                block.ops.append(_Op("cmp", reg,
                                     (cmp, int(rng.integers(0, 200)))))
        block.removable = 2 <= b <= n_blocks - 3 and rng.random() < 0.4
        blocks.append(block)
    edges = [(b, b + 1) for b in range(n_blocks - 1)]
    for _ in range(int(rng.integers(2, 5))):
        src = int(rng.integers(1, n_blocks - 1))
        dst = int(rng.integers(1, n_blocks))
        if src != dst and (src, dst) not in edges:
            edges.append((src, dst))
    return _GroupRecipe(name=f"fn_{group:03d}", blocks=blocks,
                        edges=sorted(edges))


def _render_variant(recipe: _GroupRecipe, group: int, variant: int,
                    seed: int) -> str:
    compiler, _version, opt, arch = VARIANTS[variant]
    rng = rng_for(seed, "synth-render", group, variant)
    optimized = opt in ("O2", "O3")
    n = len(recipe.blocks)

    # which blocks survive: O2 merges away one removable block, O3 two
    drop: set[int] = set()
    if optimized:
        removable = [i for i, b in enumerate(recipe.blocks) if b.removable]
        drop = set(removable[:1 if opt == "O2" else 2])
    keep = [i for i in range(n) if i not in drop]

    # index-level edges with dropped blocks short-circuited
    edges = {(s, d) for s, d in recipe.edges}
    for gone in drop:
        preds = {s for s, d in edges if d == gone and s != gone}
        succs = {d for s, d in edges if s == gone and d != gone}
        edges = {(s, d) for s, d in edges if gone not in (s, d)}
        edges.update((s, d) for s in preds for d in succs)

    label_base = 0x400000 + group * 0x1000 + variant * 0x100000
    label = {i: (f"dec_label_pc_{label_base + i * 0x40:x}" if i else "entry")
             for i in keep}
    addr_base = 0x601000 + group * 0x80

    insn_counter = [0]

    def meta() -> str:
        insn_counter[0] += 1
        return f", !insn.addr !{insn_counter[0]}" if rng.random() < 0.6 else ""

    def small_const(base: int) -> int:
        return int((base + variant * 7) % 1000)

    def addr_const(slot: int) -> str:
        return hex(addr_base + slot * 8 + variant)

    # label-level graph: ordered nodes, bodies, successor lists
    nodes: list[str] = [label[i] for i in keep]
    body: dict[str, list[str]] = {}
    succ: dict[str, list[str]] = {lb: [] for lb in nodes}
    for s, d in sorted(edges):
        if s in keep and d in keep:
            succ[label[s]].append(label[d])

    for bi in keep:
        lines: list[str] = []
        if bi == 0 and compiler == "clang":
            lines.append(f"%chk = call i32 @stack_chk_guard(){meta()}")
        for op in recipe.blocks[bi].ops:
            if op.o0_only and optimized:
                continue
            reg = f"%v{op.reg}"
            prev = f"%v{max(1, op.reg - 1)}"
            if op.kind == "alloca":
                lines.append(f"%stack_var_{-8 * op.reg} = alloca i32, "
                             f"align 4{meta()}")
            elif op.kind == "load":
                lines.append(f"{reg} = load i32, i32* @global_var_"
                             f"{addr_const(op.args[0])[2:]}, align 4{meta()}")
            elif op.kind == "store":
                lines.append(f"store i32 {prev}, i32* %stack_var_"
                             f"{-8 * op.args[0]}, align 4{meta()}")
            elif op.kind == "bin":
                name, const_class, base = op.args
                operand = (str(small_const(base)) if const_class == "small"
                           else addr_const(base % 8))
                lines.append(f"{reg} = {name} i32 {prev}, {operand}{meta()}")
            elif op.kind == "call":
                lines.append(f"{reg} = call i32 @{op.args[0]}"
                             f"(i32 {prev}){meta()}")
            elif op.kind == "cmp":
                cmp, base = op.args
                lines.append(f"{reg} = icmp {cmp} i32 {prev}, "
                             f"{small_const(base)}{meta()}")
                if compiler == "clang":
                    lines.append(f"%x{op.reg} = sext i1 {reg} to i32{meta()}")
        if arch == "arm" and bi != 0 and rng.random() < 0.5:
            lines.append(f"%a{bi} = call i32 @__arm_vmrs(i32 %v1){meta()}")
        body[label[bi]] = lines

    # arm: splice generic spill blocks into interior edges
    if arch == "arm":
        exit_label = nodes[-1]
        candidates = [(s, t) for s in nodes[1:-1] for t in succ[s]
                      if t != exit_label]
        for s_i in range(min(2, len(candidates))):
            host, target = candidates[s_i]
            sl = f"dec_label_pc_{label_base + 0x9000 + s_i * 0x40:x}"
            succ[host] = [sl if t == target else t for t in succ[host]]
            succ[sl] = [target]
            body[sl] = [
                f"%sp{s_i}a = load i32, i32* %stack_var_-8, align 4{meta()}",
                f"store i32 %sp{s_i}a, i32* %stack_var_-16, align 4{meta()}",
                f"%sp{s_i}b = call i32 @__arm_spill(i32 %sp{s_i}a){meta()}",
            ]
            nodes.append(sl)

    preds: dict[str, list[str]] = {lb: [] for lb in nodes}
    for s in nodes:
        for d in succ[s]:
            preds[d].append(s)

    out: list[str] = [f"define i32 @{recipe.name}(i32 %arg0) {{"]
    for lb in nodes:
        if lb != "entry":
            comment = ("    ; preds = " + ", ".join(f"%{p}" for p in preds[lb])
                       if preds[lb] else "")
            out.append(f"{lb}:{comment}")
        out.extend(f"  {line}" for line in body[lb])
        targets = succ[lb]
        if not targets:
            out.append(f"  ret i32 %v1{meta()}")
        elif len(targets) == 1:
            out.append(f"  br label %{targets[0]}{meta()}")
        elif len(targets) == 2:
            out.append(f"  br i1 %v2, label %{targets[0]}, "
                       f"label %{targets[1]}{meta()}")
        else:
            cases = "  ".join(f"i32 {ci}, label %{t}"
                              for ci, t in enumerate(targets[1:]))
            out.append(f"  switch i32 %v1, label %{targets[0]} "
                       f"[ {cases} ]{meta()}")
        if lb != "entry" and rng.random() < 0.15:
            out.append("  uselistorder i32 %v1, { 1, 0 }")
    out.append("}")
    return "\n".join(out)


def generate_corpus(out_dir: str | Path, n_groups: int = 50,
                    seed: int = 0) -> list[Path]:
    """Write one module per compile setting; returns the written paths."""
    if n_groups < 1:
        raise ConfigError(f"n_groups must be >= 1, got {n_groups}")
    out_dir = Path(out_dir)
    recipes = [_build_recipe(g, seed) for g in range(n_groups)]
    written: list[Path] = []
    for vi, (compiler, version, opt, arch) in enumerate(VARIANTS):
        module_dir = out_dir / PROJECT / f"{compiler}-{version}" / arch / opt
        module_dir.mkdir(parents=True, exist_ok=True)
        header = [
            f"; module {BINARY} ({compiler}-{version} {opt} {arch})",
            'target datalayout = "e-m:e-i64:64-f80:128-n8:16:32:64-S128"',
            "",
            "declare i32 @stack_chk_guard()",
            "",
        ]
        chunks = [_render_variant(r, g, vi, seed)
                  for g, r in enumerate(recipes)]
        path = module_dir / f"{BINARY}.ll"
        path.write_text("\n".join(header) + "\n" + "\n\n".join(chunks) + "\n")
        written.append(path)
        log.info("wrote %s (%d functions)", path, len(chunks))
    return written
