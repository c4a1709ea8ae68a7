"""Pretraining corpus construction for the instruction language model.

Functions are expanded into instruction-level graphs (sequential edges
inside a block, jump edges from a block's last instruction to each
successor block's first). One-step random walks over that graph produce
adjacent instruction pairs: from node v, each successor is drawn with
probability 1/outdegree(v). Pairs become 50/50 next/not-next examples, and
token-level masking follows the usual 15% selection with a 70/15/15
mask/random/keep split.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError
from .ircorpus import IRFunction
from .normalize import MASK, SEP, CLS, SPECIAL_IDS, Vocabulary, tokenize_normalized
from .seeding import rng_for

log = logging.getLogger(__name__)

MASK_FRACTION = 0.15
MASK_PROB = 0.70
RANDOM_PROB = 0.15  # remaining 0.15 keeps the original token


@dataclass
class InstructionGraph:
    """Instruction-level view of one function.

    refs[i] identifies instruction i as (function key, block label, index
    within block); tokens[i] holds its token ids; successors[i] lists the
    indices reachable in one step.
    """

    refs: list[tuple[str, str, int]]
    tokens: list[tuple[int, ...]]
    successors: list[list[int]]

    def __len__(self) -> int:
        return len(self.refs)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(v, u) for v, succ in enumerate(self.successors) for u in succ]


def encode_blocks(func: IRFunction, vocab: Vocabulary, *,
                  no_norm: bool = False) -> dict[str, list[list[int]]]:
    """Token ids per instruction for every block of a simplified function."""
    return {
        block.label: [vocab.encode(tokenize_normalized(ins.text, no_norm=no_norm))
                      for ins in block.instructions]
        for block in func.blocks
    }


def expand_to_instruction_graph(func: IRFunction,
                                block_tokens: Mapping[str, Sequence[Sequence[int]]]
                                ) -> InstructionGraph:
    """Build the instruction graph of one function.

    Blocks with no instructions contribute no nodes; edges touching them
    are dropped.
    """
    key = func.meta.key()
    refs: list[tuple[str, str, int]] = []
    tokens: list[tuple[int, ...]] = []
    first: dict[str, int] = {}
    last: dict[str, int] = {}
    for block in func.blocks:
        seq = block_tokens.get(block.label, [])
        if not seq:
            continue
        first[block.label] = len(refs)
        for i, ids in enumerate(seq):
            refs.append((key, block.label, i))
            tokens.append(tuple(int(t) for t in ids))
        last[block.label] = len(refs) - 1
    successors: list[list[int]] = [[] for _ in refs]
    for label, start in first.items():
        for i in range(start, last[label]):
            successors[i].append(i + 1)
    for src, dst in func.cfg.edges:
        if src in last and dst in first:
            tail = successors[last[src]]
            if first[dst] not in tail:
                tail.append(first[dst])
    return InstructionGraph(refs=refs, tokens=tokens, successors=successors)


def sample_walk_pairs(graph: InstructionGraph, walks_per_node: int,
                      rng: np.random.Generator) -> list[tuple[int, int]]:
    """Draw walks_per_node one-step walks from every node with successors."""
    if walks_per_node < 0:
        raise ValueError(f"walks_per_node must be >= 0, got {walks_per_node}")
    pairs: list[tuple[int, int]] = []
    for v, succ in enumerate(graph.successors):
        if not succ:
            continue
        for _ in range(walks_per_node):
            pairs.append((v, succ[int(rng.integers(len(succ)))]))
    return pairs


def make_nsp_examples(pairs: Sequence[tuple[int, int]], graph: InstructionGraph,
                      rng: np.random.Generator,
                      extra_pool: Sequence[tuple[int, ...]] = (),
                      ) -> list[tuple[tuple[int, ...], tuple[int, ...], int]]:
    """Turn walk pairs into alternating (A, B, is_next) examples.

    Each pair contributes a positive (A, successor, 1) and a negative
    (A, random instruction, 0) where the negative B is drawn from this
    function's instructions excluding A's direct successors, falling back
    to extra_pool when that leaves nothing. Pairs with no usable negative
    are skipped entirely so the output stays exactly half and half.
    """
    examples: list[tuple[tuple[int, ...], tuple[int, ...], int]] = []
    skipped = 0
    n = len(graph)
    for v, u in pairs:
        succ = set(graph.successors[v])
        candidates = [i for i in range(n) if i not in succ]
        if candidates:
            b_neg = graph.tokens[candidates[int(rng.integers(len(candidates)))]]
        elif extra_pool:
            b_neg = tuple(extra_pool[int(rng.integers(len(extra_pool)))])
        else:
            skipped += 1
            continue
        examples.append((graph.tokens[v], graph.tokens[u], 1))
        examples.append((graph.tokens[v], b_neg, 0))
    if skipped:
        log.warning("skipped %d walk pairs with no negative candidates", skipped)
    return examples


@dataclass
class PretrainExample:
    """One packed [CLS] A [SEP] B [SEP] example.

    mlm_labels hold the original id at predicted positions and -1 elsewhere.
    """

    token_ids: list[int]
    segment_ids: list[int]
    position_ids: list[int]
    mlm_labels: list[int]
    nsp_label: int

    def to_dict(self) -> dict:
        return {"token_ids": self.token_ids, "segment_ids": self.segment_ids,
                "position_ids": self.position_ids, "mlm_labels": self.mlm_labels,
                "nsp_label": self.nsp_label}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PretrainExample":
        return cls(token_ids=list(d["token_ids"]),
                   segment_ids=list(d["segment_ids"]),
                   position_ids=list(d["position_ids"]),
                   mlm_labels=list(d["mlm_labels"]),
                   nsp_label=int(d["nsp_label"]))


def _truncate_pair(a: Sequence[int], b: Sequence[int],
                   max_len: int) -> tuple[list[int], list[int]]:
    if max_len < 5:
        raise ValueError(f"max_len must be >= 5, got {max_len}")
    a, b = list(a), list(b)
    while len(a) + len(b) + 3 > max_len:
        if len(a) >= len(b) and len(a) > 1:
            a.pop()
        else:
            b.pop()
    return a, b


def assemble_example(a_ids: Sequence[int], b_ids: Sequence[int], nsp_label: int,
                     max_len: int = 64) -> PretrainExample:
    """Pack two instructions into an unmasked example.

    When the pair exceeds max_len, tokens are dropped from the tail of the
    longer side first; each side keeps at least one token.
    """
    if not a_ids or not b_ids:
        raise InputError("cannot assemble an example from an empty instruction")
    a, b = _truncate_pair(a_ids, b_ids, max_len)
    ids = [CLS] + a + [SEP] + b + [SEP]
    segs = [0] * (len(a) + 2) + [1] * (len(b) + 1)
    return PretrainExample(token_ids=ids, segment_ids=segs,
                           position_ids=list(range(len(ids))),
                           mlm_labels=[-1] * len(ids), nsp_label=int(nsp_label))


def apply_mlm_masking(token_ids: Sequence[int], rng: np.random.Generator,
                      vocab_size: int) -> tuple[list[int], list[int]]:
    """Mask 15% of the non-special positions (at least one when possible).

    Selected positions become [MASK] with p=.70, a uniformly random
    non-special id with p=.15, and stay unchanged with p=.15; the returned
    labels carry the original id there and -1 everywhere else.
    """
    if vocab_size <= len(SPECIAL_IDS):
        raise ValueError(f"vocab_size must exceed {len(SPECIAL_IDS)}")
    ids = [int(t) for t in token_ids]
    labels = [-1] * len(ids)
    eligible = [i for i, t in enumerate(ids) if t not in SPECIAL_IDS]
    if not eligible:
        return ids, labels
    n_pick = max(1, int(MASK_FRACTION * len(eligible)))
    chosen = rng.choice(len(eligible), size=n_pick, replace=False)
    for j in sorted(int(c) for c in chosen):
        pos = eligible[j]
        labels[pos] = ids[pos]
        u = rng.random()
        if u < MASK_PROB:
            ids[pos] = MASK
        elif u < MASK_PROB + RANDOM_PROB:
            ids[pos] = int(rng.integers(len(SPECIAL_IDS), vocab_size))
    return ids, labels


def mask_example(example: PretrainExample, rng: np.random.Generator,
                 vocab_size: int) -> PretrainExample:
    masked, labels = apply_mlm_masking(example.token_ids, rng, vocab_size)
    return replace(example, token_ids=masked, mlm_labels=labels)


def build_pretrain_corpus(functions: Sequence[IRFunction], vocab: Vocabulary,
                          *, walks_per_node: int = 2, max_len: int = 64,
                          seed: int = 0, no_norm: bool = False,
                          ) -> list[PretrainExample]:
    """Build the full masked corpus for a set of simplified functions.

    Randomness is derived per function from the root seed, so the result
    does not depend on how the functions are batched or ordered.
    """
    encoded = [(f, encode_blocks(f, vocab, no_norm=no_norm)) for f in functions]
    pool: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    for _, blocks in encoded:
        for seq in blocks.values():
            for ids in seq:
                t = tuple(ids)
                if t and t not in seen:
                    seen.add(t)
                    pool.append(t)
    corpus: list[PretrainExample] = []
    for func, blocks in encoded:
        key = func.meta.key()
        graph = expand_to_instruction_graph(func, blocks)
        pairs = sample_walk_pairs(graph, walks_per_node,
                                  rng_for(seed, "walks", key))
        nsp = make_nsp_examples(pairs, graph, rng_for(seed, "nsp", key), pool)
        mask_rng = rng_for(seed, "mlm", key)
        for a, b, label in nsp:
            ex = assemble_example(a, b, label, max_len)
            corpus.append(mask_example(ex, mask_rng, len(vocab)))
    return corpus


def write_examples_jsonl(examples: Iterable[PretrainExample],
                         path: str | Path) -> int:
    n = 0
    with open(path, "w") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_dict(), sort_keys=True) + "\n")
            n += 1
    return n


def read_examples_jsonl(path: str | Path) -> list[PretrainExample]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(PretrainExample.from_dict(json.loads(line)))
    return out
