"""Parsing of decompiled LLVM-IR text into functions, basic blocks and CFGs.

The input is the textual IR emitted by a decompiler, one module per file.
Function bodies are delimited by ``define``/``}`` lines, basic blocks by
``dec_label_pc_<addr>:`` labels, and control flow is recovered from the
``; preds = ...`` comments the decompiler attaches to each label line.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import ParseError

log = logging.getLogger(__name__)

ENTRY_LABEL = "entry"

_DEFINE_RE = re.compile(r"^define\b")
_FUNC_NAME_RE = re.compile(r"@([^\s(]+)\s*\(")
_LABEL_RE = re.compile(r"^(dec_label_pc_[0-9A-Fa-f]+):")
_PREDS_RE = re.compile(r";\s*preds\s*=\s*(.+)$")
_PRED_REF_RE = re.compile(r"%(\S+)")
_INSN_ADDR_RE = re.compile(r",\s*!insn\.addr\s+!\d+\s*$")


@dataclass(frozen=True)
class Instruction:
    """One IR statement. line_no is 1-based within the source file."""

    text: str
    line_no: int


@dataclass(frozen=True)
class FunctionMeta:
    """Provenance of one function instance.

    (project, binary, source_function) identifies the source-level function;
    (compiler, compiler_version, optimization, architecture) identify the
    compile settings that produced this particular instance.
    """

    project: str = ""
    binary: str = ""
    source_function: str = ""
    compiler: str = ""
    compiler_version: str = ""
    optimization: str = ""
    architecture: str = ""

    def source_identity(self) -> tuple[str, str, str]:
        return (self.project, self.binary, self.source_function)

    def settings(self) -> tuple[tuple[str, str], str, str]:
        return ((self.compiler, self.compiler_version),
                self.optimization, self.architecture)

    def key(self) -> str:
        """Stable unique id of this function instance."""
        return "/".join((self.project, self.binary, self.compiler,
                         self.compiler_version, self.optimization,
                         self.architecture, self.source_function))

    def to_dict(self) -> dict[str, str]:
        return {
            "project": self.project,
            "binary": self.binary,
            "source_function": self.source_function,
            "compiler": self.compiler,
            "compiler_version": self.compiler_version,
            "optimization": self.optimization,
            "architecture": self.architecture,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, str]) -> "FunctionMeta":
        return cls(**{k: d.get(k, "") for k in (
            "project", "binary", "source_function", "compiler",
            "compiler_version", "optimization", "architecture")})


@dataclass
class BasicBlock:
    label: str
    instructions: list[Instruction]


@dataclass
class ControlFlowGraph:
    """Blocks and directed edges between them, in deterministic order."""

    nodes: list[str]
    edges: list[tuple[str, str]]

    def successors(self, label: str) -> list[str]:
        return [d for s, d in self.edges if s == label]

    def predecessors(self, label: str) -> list[str]:
        return [s for s, d in self.edges if d == label]


@dataclass
class IRFunction:
    name: str
    blocks: list[BasicBlock]
    cfg: ControlFlowGraph
    meta: FunctionMeta

    def block(self, label: str) -> BasicBlock:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)


@dataclass
class ParseDiagnostics:
    """Counters for recoverable oddities found while parsing."""

    unknown_pred_edges: list[tuple[str, str]] = field(default_factory=list)

    def merge(self, other: "ParseDiagnostics") -> None:
        self.unknown_pred_edges.extend(other.unknown_pred_edges)


def _as_instructions(func_body: Sequence) -> list[Instruction]:
    out = []
    for i, item in enumerate(func_body):
        if isinstance(item, Instruction):
            out.append(item)
        else:
            out.append(Instruction(text=str(item), line_no=i + 1))
    return out


def split_basic_blocks(func_body: Sequence) -> list[BasicBlock]:
    """Split a function body into labeled basic blocks.

    Accepts plain strings (line numbers then count from 1 within the body)
    or Instruction objects carrying real file line numbers. Statements
    before the first label form a synthesized block labeled "entry". Label
    lines open their block and stay in it; a duplicate label is an error.
    """
    stmts = _as_instructions(func_body)
    blocks: list[BasicBlock] = []
    seen: set[str] = set()
    current: BasicBlock | None = None
    for ins in stmts:
        m = _LABEL_RE.match(ins.text)
        if m:
            label = m.group(1)
            if label in seen:
                raise ParseError(f"duplicate block label {label!r}", ins.line_no)
            seen.add(label)
            current = BasicBlock(label=label, instructions=[ins])
            blocks.append(current)
        else:
            if current is None:
                if ENTRY_LABEL in seen:  # cannot happen with dec_label_pc_ labels
                    raise ParseError("duplicate entry block", ins.line_no)
                current = BasicBlock(label=ENTRY_LABEL, instructions=[])
                blocks.append(current)
                seen.add(ENTRY_LABEL)
            current.instructions.append(ins)
    return blocks


def extract_cfg(blocks: Sequence[BasicBlock],
                diagnostics: ParseDiagnostics | None = None) -> ControlFlowGraph:
    """Recover block-level edges from ``; preds = %a, %b`` label comments.

    Each predecessor reference yields one pred -> succ edge. References to
    labels not present in the function are dropped and recorded in the
    diagnostics. Edges are deduplicated and sorted by block order.
    """
    order = {b.label: i for i, b in enumerate(blocks)}
    edges: set[tuple[str, str]] = set()
    for block in blocks:
        for ins in block.instructions:
            m = _PREDS_RE.search(ins.text)
            if not m:
                continue
            for ref in _PRED_REF_RE.findall(m.group(1).rstrip(",")):
                pred = ref.rstrip(",")
                if pred in order:
                    edges.add((pred, block.label))
                elif diagnostics is not None:
                    diagnostics.unknown_pred_edges.append((block.label, pred))
    ordered = sorted(edges, key=lambda e: (order[e[0]], order[e[1]]))
    return ControlFlowGraph(nodes=[b.label for b in blocks], edges=ordered)


def _is_preds_comment(text: str) -> bool:
    stripped = text.lstrip()
    return stripped.startswith(";") and "preds" in stripped.split("=")[0]


def simplify_instructions(block: BasicBlock) -> BasicBlock:
    """Drop non-semantic statements and metadata suffixes from one block.

    Removes label lines, standalone predecessor comments and uselistorder
    directives; strips trailing ``, !insn.addr !N`` metadata. Idempotent.
    """
    kept: list[Instruction] = []
    for ins in block.instructions:
        text = ins.text.strip()
        if not text or _LABEL_RE.match(text) or _is_preds_comment(text):
            continue
        if text.split(None, 1)[0] == "uselistorder":
            continue
        text = _INSN_ADDR_RE.sub("", text).strip()
        if text:
            kept.append(Instruction(text=text, line_no=ins.line_no))
    return BasicBlock(label=block.label, instructions=kept)


def simplify_function(func: IRFunction) -> IRFunction:
    return IRFunction(name=func.name,
                      blocks=[simplify_instructions(b) for b in func.blocks],
                      cfg=func.cfg, meta=func.meta)


def parse_module(text: str, meta: FunctionMeta | None = None,
                 diagnostics: ParseDiagnostics | None = None) -> list[IRFunction]:
    """Parse one IR module into functions with blocks and CFGs.

    Only ``define`` regions are consumed; declarations, globals and module
    asm are skipped. A define line without a parseable ``@name(`` is an
    error carrying its line number.
    """
    meta = meta or FunctionMeta()
    functions: list[IRFunction] = []
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if not _DEFINE_RE.match(line):
            i += 1
            continue
        m = _FUNC_NAME_RE.search(line)
        if not m:
            raise ParseError(f"cannot find function name in {line!r}", i + 1)
        name = m.group(1).strip('"')
        body: list[Instruction] = []
        i += 1
        while i < len(lines):
            raw = lines[i].strip()
            if raw == "}":
                i += 1
                break
            if _DEFINE_RE.match(raw):
                raise ParseError(f"unterminated body of @{name}", i + 1)
            if raw:
                body.append(Instruction(text=raw, line_no=i + 1))
            i += 1
        blocks = split_basic_blocks(body)
        cfg = extract_cfg(blocks, diagnostics)
        func_meta = FunctionMeta(**{**meta.to_dict(), "source_function": name})
        functions.append(IRFunction(name=name, blocks=blocks,
                                    cfg=cfg, meta=func_meta))
    return functions


def filter_small_functions(functions: Iterable[IRFunction],
                           min_blocks: int = 5) -> list[IRFunction]:
    """Keep functions with at least min_blocks basic blocks."""
    if min_blocks < 1:
        raise ValueError(f"min_blocks must be >= 1, got {min_blocks}")
    return [f for f in functions if len(f.blocks) >= min_blocks]


def meta_from_path(path: str | Path) -> FunctionMeta:
    """Derive metadata from the corpus layout.

    Expected layout: <project>/<compiler>-<version>/<arch>/<opt>/<binary>.ll
    Missing leading components simply stay empty.
    """
    parts = Path(path).parts
    fields = {"binary": Path(parts[-1]).stem} if parts else {}
    if len(parts) >= 2:
        fields["optimization"] = parts[-2]
    if len(parts) >= 3:
        fields["architecture"] = parts[-3]
    if len(parts) >= 4:
        comp = parts[-4]
        fields["compiler"], _, fields["compiler_version"] = comp.partition("-")
    if len(parts) >= 5:
        fields["project"] = parts[-5]
    return FunctionMeta(**fields)


def load_corpus_dir(root: str | Path,
                    diagnostics: ParseDiagnostics | None = None) -> list[IRFunction]:
    """Parse every .ll file under root.

    Metadata comes from the path layout; if a manifest.json mapping relative
    path -> meta fields exists at the corpus root, its entries win.
    """
    root = Path(root)
    manifest: dict[str, dict] = {}
    manifest_path = root / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
    functions: list[IRFunction] = []
    for path in sorted(root.rglob("*.ll")):
        rel = path.relative_to(root).as_posix()
        base = meta_from_path(rel).to_dict()
        base.update(manifest.get(rel, {}))
        meta = FunctionMeta.from_dict(base)
        parsed = parse_module(path.read_text(), meta, diagnostics)
        functions.extend(parsed)
        log.debug("parsed %s: %d functions", rel, len(parsed))
    return functions


def function_to_record(func: IRFunction) -> dict:
    """JSON-serializable record for one function (simplified or raw)."""
    return {
        "name": func.name,
        "meta": func.meta.to_dict(),
        "blocks": [{"label": b.label,
                    "instructions": [i.text for i in b.instructions]}
                   for b in func.blocks],
        "edges": [list(e) for e in func.cfg.edges],
    }


def function_from_record(record: Mapping) -> IRFunction:
    blocks = [BasicBlock(label=b["label"],
                         instructions=[Instruction(text=t, line_no=j + 1)
                                       for j, t in enumerate(b["instructions"])])
              for b in record["blocks"]]
    cfg = ControlFlowGraph(nodes=[b.label for b in blocks],
                           edges=[tuple(e) for e in record["edges"]])
    return IRFunction(name=record["name"], blocks=blocks, cfg=cfg,
                      meta=FunctionMeta.from_dict(record["meta"]))


def write_functions_jsonl(functions: Iterable[IRFunction], path: str | Path) -> int:
    n = 0
    with open(path, "w") as fh:
        for func in functions:
            fh.write(json.dumps(function_to_record(func), sort_keys=True) + "\n")
            n += 1
    return n


def read_functions_jsonl(path: str | Path) -> Iterator[IRFunction]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield function_from_record(json.loads(line))
