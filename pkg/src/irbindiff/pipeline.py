"""Stage orchestration: synth -> prepare -> pretrain -> train -> embed -> eval.

Each stage reads its inputs from the work directory, writes its artifacts
back there, and fails with a StageError naming the missing file (and the
stage that produces it) when run out of order. Every stage is a pure
function of (corpus, config, seed), so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import plots
from .autodiff import load_checkpoint, save_checkpoint
from .config import PipelineConfig, config_to_flat, save_config
from .errors import InputError, StageError
from .ggnn import (FunctionGraph, GGNNConfig, embed_functions, make_encoder,
                   train_contrastive)
from .ircorpus import (ParseDiagnostics, filter_small_functions,
                       load_corpus_dir, read_functions_jsonl,
                       simplify_function, write_functions_jsonl)
from .lm import (LMConfig, hashed_block_embedding, load_lm, pretrain,
                 save_lm)
from .normalize import Vocabulary, build_vocabulary, tokenize_normalized
from .retrieval import (FunctionEmbedding, evaluate_task,
                        read_embeddings_jsonl, write_embeddings_jsonl)
from .sampling import (build_pretrain_corpus, encode_blocks,
                       write_examples_jsonl)
from .seeding import rng_for
from .synth import generate_corpus

log = logging.getLogger(__name__)


class Workspace:
    """Artifact paths under one work directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.functions = self.root / "functions.jsonl"
        self.vocab = self.root / "vocab.json"
        self.stats = self.root / "corpus_stats.json"
        self.resolved_config = self.root / "resolved_config.cfg"
        self.examples = self.root / "pretrain_examples.jsonl"
        self.examples_manifest = self.root / "pretrain_manifest.json"
        self.lm_stem = self.root / "lm_model"
        self.lm_history = self.root / "lm_history.json"
        self.block_embeddings = self.root / "block_embeddings.jsonl"
        self.encoder_stem = self.root / "encoder"
        self.encoder_config = self.root / "encoder.config.json"
        self.train_history = self.root / "train_history.json"
        self.function_embeddings = self.root / "function_embeddings.jsonl"
        self.report_json = self.root / "report.json"
        self.report_csv = self.root / "report.csv"
        self.figures = self.root / "figures"

    def mkdir(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)

    def require(self, path: Path, producer: str) -> Path:
        if not path.exists():
            raise StageError(f"missing {path}; run the {producer!r} stage first")
        return path


def stage_synth(cfg: PipelineConfig) -> list[Path]:
    return generate_corpus(cfg.corpus_dir, cfg.synth.n_groups, cfg.seed)


def stage_prepare(cfg: PipelineConfig) -> dict:
    """Parse the corpus, simplify, filter, and build the vocabulary."""
    ws = Workspace(cfg.work_dir)
    ws.mkdir()
    diagnostics = ParseDiagnostics()
    raw = load_corpus_dir(cfg.corpus_dir, diagnostics)
    if not raw:
        raise InputError(f"no .ll modules found under {cfg.corpus_dir}")
    simplified = [simplify_function(f) for f in raw]
    kept = filter_small_functions(simplified, cfg.prepare.min_blocks)
    if not kept:
        raise InputError(f"all {len(raw)} functions fall under the "
                         f"min_blocks={cfg.prepare.min_blocks} filter")
    write_functions_jsonl(kept, ws.functions)
    sequences = (tokenize_normalized(ins.text, no_norm=cfg.no_norm)
                 for func in kept for block in func.blocks
                 for ins in block.instructions)
    vocab = build_vocabulary(sequences, min_count=cfg.prepare.min_count)
    vocab.save(ws.vocab)
    stats = {
        "n_functions_parsed": len(raw),
        "n_functions_kept": len(kept),
        "n_blocks": sum(len(f.blocks) for f in kept),
        "n_instructions": sum(len(b.instructions) for f in kept
                              for b in f.blocks),
        "vocab_size": len(vocab),
        "dropped_pred_edges": len(diagnostics.unknown_pred_edges),
    }
    ws.stats.write_text(json.dumps(stats, indent=1, sort_keys=True))
    save_config(cfg, ws.resolved_config)
    log.info("prepared %d functions (%d parsed), vocabulary of %d",
             len(kept), len(raw), len(vocab))
    return stats


def stage_pretrain(cfg: PipelineConfig) -> list[dict]:
    """Build the masked corpus and pretrain the language model."""
    ws = Workspace(cfg.work_dir)
    ws.require(ws.functions, "prepare")
    ws.require(ws.vocab, "prepare")
    functions = list(read_functions_jsonl(ws.functions))
    vocab = Vocabulary.load(ws.vocab)
    examples = build_pretrain_corpus(
        functions, vocab, walks_per_node=cfg.sampling.walks_per_node,
        max_len=cfg.sampling.max_len, seed=cfg.seed, no_norm=cfg.no_norm)
    cap = cfg.sampling.max_examples
    if cap and len(examples) > cap:
        picked = rng_for(cfg.seed, "corpus-cap").choice(
            len(examples), size=cap, replace=False)
        examples = [examples[i] for i in sorted(int(p) for p in picked)]
    write_examples_jsonl(examples, ws.examples)
    ws.examples_manifest.write_text(json.dumps({
        "seed": cfg.seed, "walks_per_node": cfg.sampling.walks_per_node,
        "max_len": cfg.sampling.max_len, "n_examples": len(examples),
        "vocab_size": len(vocab), "no_norm": cfg.no_norm,
    }, indent=1, sort_keys=True))
    if cfg.no_plm:
        log.info("no_plm ablation: skipping language model pretraining")
        ws.lm_history.write_text("[]")
        return []
    lm_config = LMConfig(vocab_size=len(vocab), **asdict(cfg.lm))
    model, history = pretrain(examples, lm_config, cfg.seed)
    save_lm(model, ws.lm_stem)
    ws.lm_history.write_text(json.dumps(history, indent=1))
    plots.save_pretrain_curve(history, ws.figures / "pretrain_loss.png")
    return history


def _block_vector_fn(cfg: PipelineConfig, ws: Workspace):
    """Returns block-embedding callable of (instruction token id lists)."""
    if cfg.no_plm:
        return lambda seqs: hashed_block_embedding(seqs, dim=cfg.lm.hidden,
                                                   seed=cfg.seed)
    ws.require(Path(f"{ws.lm_stem}.json"), "pretrain")
    model = load_lm(ws.lm_stem)
    return model.embed_block


def build_function_graphs(cfg: PipelineConfig
                          ) -> tuple[list[FunctionGraph], list]:
    """Embed every block and assemble per-function graph inputs.

    Returns the graphs plus the aligned FunctionMeta list.
    """
    ws = Workspace(cfg.work_dir)
    ws.require(ws.functions, "prepare")
    ws.require(ws.vocab, "prepare")
    functions = list(read_functions_jsonl(ws.functions))
    vocab = Vocabulary.load(ws.vocab)
    embed = _block_vector_fn(cfg, ws)
    graphs: list[FunctionGraph] = []
    metas = []
    for func in functions:
        block_tokens = encode_blocks(func, vocab, no_norm=cfg.no_norm)
        labels = [b.label for b in func.blocks]
        index = {label: i for i, label in enumerate(labels)}
        vecs = np.stack([embed(block_tokens[label]) for label in labels])
        edges = [(index[s], index[d]) for s, d in func.cfg.edges]
        graphs.append(FunctionGraph(key=func.meta.key(), node_vecs=vecs,
                                    edges=edges,
                                    group=func.meta.source_identity()))
        metas.append(func.meta)
    return graphs, metas


def _write_block_embeddings(graphs: list[FunctionGraph], functions,
                            path: Path) -> None:
    with open(path, "w") as fh:
        for graph, func in zip(graphs, functions):
            for i, block in enumerate(func.blocks):
                fh.write(json.dumps({
                    "func_key": graph.key, "block_label": block.label,
                    "vector": [float(v) for v in graph.node_vecs[i]],
                }, sort_keys=True) + "\n")


def stage_train(cfg: PipelineConfig) -> dict:
    """Train the momentum-contrast function encoder."""
    ws = Workspace(cfg.work_dir)
    graphs, _ = build_function_graphs(cfg)
    functions = list(read_functions_jsonl(ws.functions))
    _write_block_embeddings(graphs, functions, ws.block_embeddings)
    state, history = train_contrastive(graphs, cfg.ggnn, seed=cfg.seed,
                                       no_graph=cfg.no_graph)
    save_checkpoint(state.query.params.state(), ws.encoder_stem)
    ws.encoder_config.write_text(json.dumps({
        "kind": state.query.kind, "ggnn": cfg.ggnn.to_dict(),
    }, indent=1, sort_keys=True))
    payload = {"steps": history.steps, "epochs": history.epochs}
    ws.train_history.write_text(json.dumps(payload, indent=1))
    plots.save_contrastive_curve(history.steps, history.epochs,
                                 ws.figures / "contrastive_loss.png")
    return payload


def load_encoder(ws: Workspace):
    ws.require(ws.encoder_config, "train")
    spec = json.loads(ws.encoder_config.read_text())
    config = GGNNConfig.from_dict(spec["ggnn"])
    encoder = make_encoder(config, no_graph=spec["kind"] == "pooled")
    encoder.params.load_state(load_checkpoint(ws.encoder_stem))
    return encoder


def stage_embed(cfg: PipelineConfig) -> int:
    """Encode every function with the trained encoder."""
    ws = Workspace(cfg.work_dir)
    graphs, metas = build_function_graphs(cfg)
    encoder = load_encoder(ws)
    vectors = embed_functions(encoder, graphs)
    embeddings = [FunctionEmbedding(meta=meta, vector=vec)
                  for meta, vec in zip(metas, vectors)]
    return write_embeddings_jsonl(embeddings, ws.function_embeddings)


def stage_eval(cfg: PipelineConfig) -> dict:
    """Per-task AUC / recall@k / MRR report with figures and CSV."""
    ws = Workspace(cfg.work_dir)
    ws.require(ws.function_embeddings, "embed")
    embeddings = read_embeddings_jsonl(ws.function_embeddings)
    reports = [evaluate_task(embeddings, kind, n_queries=cfg.eval.n_queries,
                             pool_size=cfg.eval.pool_size, seed=cfg.seed)
               for kind in cfg.eval.tasks]
    payload = {
        "tasks": reports,
        "seed": cfg.seed,
        "n_functions": len(embeddings),
        "config": config_to_flat(cfg),
    }
    ws.report_json.write_text(json.dumps(payload, indent=1, sort_keys=True))
    with open(ws.report_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "auc", "recall@1", "recall@10", "recall@50",
                         "mrr", "n_queries", "pool_size", "seed"])
        for r in reports:
            writer.writerow([r["task"], f"{r['auc']:.6f}",
                             f"{r['recall']['1']:.6f}",
                             f"{r['recall']['10']:.6f}",
                             f"{r['recall']['50']:.6f}",
                             f"{r['mrr']:.6f}", r["n_queries"],
                             r["pool_size"], r["seed"]])
    plots.save_recall_bars(reports, ws.figures / "recall_at_k.png")
    log.info("evaluation report written to %s", ws.report_json)
    return payload


STAGES = {
    "synth": stage_synth,
    "prepare": stage_prepare,
    "pretrain": stage_pretrain,
    "train": stage_train,
    "embed": stage_embed,
    "eval": stage_eval,
}
