"""BERT-style instruction language model.

A small post-layer-norm transformer encoder over token + position + segment
embeddings, pretrained with masked-token prediction and an is-next head on
the [CLS] state (total loss = mean masked cross-entropy + mean is-next
cross-entropy). After pretraining it embeds whole basic blocks: the block's
instructions are concatenated behind [CLS], truncated from the tail, and
the [CLS] hidden state is the block vector (mean pooling is available
behind a flag).
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, InputError
from .normalize import CLS, PAD, SEP, SPECIAL_IDS
from .sampling import PretrainExample
from .seeding import rng_for

log = logging.getLogger(__name__)

INIT_STD = 0.02


@dataclass
class LMConfig:
    vocab_size: int
    layers: int = 4
    hidden: int = 128
    heads: int = 8
    max_position: int = 128
    ffn_factor: int = 4
    lr: float = 3e-5
    batch_size: int = 256
    epochs: int = 3
    pool: str = "cls"  # or "mean"

    def __post_init__(self):
        if self.vocab_size <= len(SPECIAL_IDS):
            raise ConfigError(f"vocab_size must exceed {len(SPECIAL_IDS)}, "
                              f"got {self.vocab_size}")
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden={self.hidden} not divisible by "
                              f"heads={self.heads}")
        for name in ("layers", "hidden", "heads", "max_position",
                     "ffn_factor", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.pool not in ("cls", "mean"):
            raise ConfigError(f"pool must be 'cls' or 'mean', got {self.pool!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "LMConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class LanguageModel:
    """Transformer encoder plus masked-token and is-next heads."""

    def __init__(self, config: LMConfig, seed: int = 0):
        self.config = config
        self.params = ad.ParameterSet()
        rng = rng_for(seed, "lm-init")
        h, v = config.hidden, config.vocab_size

        def w(name, *shape):
            self.params.add(name, rng.normal(0.0, INIT_STD, size=shape))

        def zeros(name, *shape):
            self.params.add(name, np.zeros(shape))

        def ones(name, *shape):
            self.params.add(name, np.ones(shape))

        w("tok_emb", v, h)
        w("pos_emb", config.max_position, h)
        w("seg_emb", 2, h)
        ones("emb_ln_g", h)
        zeros("emb_ln_b", h)
        for i in range(config.layers):
            for proj in ("wq", "wk", "wv", "wo"):
                w(f"l{i}.{proj}", h, h)
            for bias in ("bq", "bk", "bv", "bo"):
                zeros(f"l{i}.{bias}", h)
            ones(f"l{i}.ln1_g", h)
            zeros(f"l{i}.ln1_b", h)
            w(f"l{i}.ffn_w1", h, h * config.ffn_factor)
            zeros(f"l{i}.ffn_b1", h * config.ffn_factor)
            w(f"l{i}.ffn_w2", h * config.ffn_factor, h)
            zeros(f"l{i}.ffn_b2", h)
            ones(f"l{i}.ln2_g", h)
            zeros(f"l{i}.ln2_b", h)
        w("mlm_w", h, v)
        zeros("mlm_b", v)
        w("nsp_w", h, 2)
        zeros("nsp_b", 2)

    def _validate_batch(self, ids: np.ndarray, segs: np.ndarray) -> None:
        cfg = self.config
        if ids.ndim != 2 or ids.shape != segs.shape:
            raise InputError(f"batch arrays must be (B, T), got ids "
                             f"{ids.shape} segments {segs.shape}")
        if ids.shape[1] > cfg.max_position:
            raise InputError(f"sequence length {ids.shape[1]} exceeds "
                             f"max_position {cfg.max_position}")
        if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
            raise InputError(f"token id out of range for vocabulary of "
                             f"{cfg.vocab_size}")
        if segs.size and (segs.min() < 0 or segs.max() > 1):
            raise InputError("segment ids must be 0 or 1")

    def forward(self, ids: np.ndarray, segs: np.ndarray,
                mask: np.ndarray) -> ad.Tensor:
        """Hidden states (B, T, H) for a padded batch; mask marks real tokens."""
        ids = np.asarray(ids, dtype=np.int64)
        segs = np.asarray(segs, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        self._validate_batch(ids, segs)
        p = self.params
        b, t = ids.shape
        positions = np.broadcast_to(np.arange(t, dtype=np.int64), (b, t))
        x = ad.add(ad.add(ad.embedding_lookup(p["tok_emb"], ids),
                          ad.embedding_lookup(p["pos_emb"], positions)),
                   ad.embedding_lookup(p["seg_emb"], segs))
        x = ad.layer_norm(x, p["emb_ln_g"], p["emb_ln_b"])
        for i in range(self.config.layers):
            attn_params = {k: p[f"l{i}.{k}"] for k in
                           ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}
            attn = ad.multi_head_attention(x, mask, attn_params,
                                           self.config.heads)
            x = ad.layer_norm(ad.add(x, attn), p[f"l{i}.ln1_g"],
                              p[f"l{i}.ln1_b"])
            ffn = ad.add_bias(ad.matmul(ad.gelu(
                ad.add_bias(ad.matmul(x, p[f"l{i}.ffn_w1"]),
                            p[f"l{i}.ffn_b1"])),
                p[f"l{i}.ffn_w2"]), p[f"l{i}.ffn_b2"])
            x = ad.layer_norm(ad.add(x, ffn), p[f"l{i}.ln2_g"],
                              p[f"l{i}.ln2_b"])
        return x

    def mlm_logits(self, hidden: ad.Tensor) -> ad.Tensor:
        return ad.add_bias(ad.matmul(hidden, self.params["mlm_w"]),
                           self.params["mlm_b"])

    def nsp_logits(self, hidden: ad.Tensor) -> ad.Tensor:
        cls_state = ad.slice_(hidden, (slice(None), 0))
        return ad.add_bias(ad.matmul(cls_state, self.params["nsp_w"]),
                           self.params["nsp_b"])

    def loss(self, batch: "Batch") -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
        """(total, mlm, nsp) losses for one padded batch."""
        hidden = self.forward(batch.token_ids, batch.segment_ids, batch.mask)
        b, t = batch.token_ids.shape
        mlm = ad.cross_entropy(
            ad.reshape(self.mlm_logits(hidden), (b * t, self.config.vocab_size)),
            batch.mlm_labels.reshape(-1))
        nsp = ad.cross_entropy(self.nsp_logits(hidden), batch.nsp_labels)
        return ad.add(mlm, nsp), mlm, nsp

    def embed_block(self, instruction_ids: Sequence[Sequence[int]],
                    max_len: int | None = None) -> np.ndarray:
        """Embed one basic block given its per-instruction token ids.

        The instructions are concatenated behind [CLS]; the tail is
        truncated to fit, a [SEP] closes the sequence. Empty blocks embed
        to the zero vector.
        """
        max_len = max_len or self.config.max_position
        flat = [int(t) for seq in instruction_ids for t in seq]
        if not flat:
            log.warning("embedding an empty block as the zero vector")
            return np.zeros(self.config.hidden)
        body = flat[:max_len - 2]
        ids = np.array([[CLS] + body + [SEP]], dtype=np.int64)
        segs = np.zeros_like(ids)
        mask = np.ones_like(ids, dtype=bool)
        hidden = self.forward(ids, segs, mask)
        if self.config.pool == "mean":
            return hidden.data[0].mean(axis=0)
        return hidden.data[0, 0].copy()


@dataclass
class Batch:
    token_ids: np.ndarray
    segment_ids: np.ndarray
    mask: np.ndarray
    mlm_labels: np.ndarray
    nsp_labels: np.ndarray


def pad_batch(examples: Sequence[PretrainExample]) -> Batch:
    """Right-pad a list of examples to a rectangular batch.

    Padding uses [PAD] ids, segment 0, mask False and mlm label -1, so
    padded positions never contribute to either loss.
    """
    if not examples:
        raise InputError("cannot pad an empty batch")
    t = max(len(ex.token_ids) for ex in examples)
    b = len(examples)
    ids = np.full((b, t), PAD, dtype=np.int64)
    segs = np.zeros((b, t), dtype=np.int64)
    mask = np.zeros((b, t), dtype=bool)
    labels = np.full((b, t), -1, dtype=np.int64)
    nsp = np.zeros(b, dtype=np.int64)
    for i, ex in enumerate(examples):
        n = len(ex.token_ids)
        ids[i, :n] = ex.token_ids
        segs[i, :n] = ex.segment_ids
        mask[i, :n] = True
        labels[i, :n] = ex.mlm_labels
        nsp[i] = ex.nsp_label
    return Batch(ids, segs, mask, labels, nsp)


def pretrain(examples: Sequence[PretrainExample], config: LMConfig,
             seed: int = 0) -> tuple[LanguageModel, list[dict]]:
    """Train a fresh model on the masked corpus; returns per-epoch history."""
    if not examples:
        raise InputError("pretraining corpus is empty")
    model = LanguageModel(config, seed)
    opt = ad.Adam(model.params, lr=config.lr)
    order_rng = rng_for(seed, "lm-order")
    history: list[dict] = []
    for epoch in range(config.epochs):
        order = order_rng.permutation(len(examples))
        sums = {"total": 0.0, "mlm": 0.0, "nsp": 0.0}
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            chunk = [examples[i] for i in order[start:start + config.batch_size]]
            batch = pad_batch(chunk)
            model.params.zero_grad()
            total, mlm, nsp = model.loss(batch)
            total.backward()
            opt.step()
            sums["total"] += total.item()
            sums["mlm"] += mlm.item()
            sums["nsp"] += nsp.item()
            n_batches += 1
        record = {"epoch": epoch,
                  "total_loss": sums["total"] / n_batches,
                  "mlm_loss": sums["mlm"] / n_batches,
                  "nsp_loss": sums["nsp"] / n_batches,
                  "n_batches": n_batches}
        history.append(record)
        log.info("pretrain epoch %d: total=%.4f mlm=%.4f nsp=%.4f",
                 epoch, record["total_loss"], record["mlm_loss"],
                 record["nsp_loss"])
    return model, history


_HASH_ROWS: dict[tuple[int, int, int], np.ndarray] = {}


def hashed_block_embedding(instruction_ids: Sequence[Sequence[int]],
                           dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic bag-of-token-ids block embedding (LM-free baseline).

    Each token id maps to a fixed random unit-variance row; the block is
    the sum of its token rows scaled by 1/sqrt(n).
    """
    flat = [int(t) for seq in instruction_ids for t in seq]
    if not flat:
        return np.zeros(dim)
    acc = np.zeros(dim)
    for t in flat:
        key = (seed, dim, t)
        row = _HASH_ROWS.get(key)
        if row is None:
            row = rng_for(seed, "hashed-token", dim, t).standard_normal(dim)
            _HASH_ROWS[key] = row
        acc += row
    return acc / np.sqrt(len(flat))


def save_lm(model: LanguageModel, stem: str | Path) -> None:
    ad.save_checkpoint(model.params.state(), stem)
    Path(f"{stem}.config.json").write_text(
        json.dumps(model.config.to_dict(), indent=1, sort_keys=True))


def load_lm(stem: str | Path) -> LanguageModel:
    config_path = Path(f"{stem}.config.json")
    if not config_path.exists():
        raise InputError(f"missing model config {config_path}")
    config = LMConfig.from_dict(json.loads(config_path.read_text()))
    model = LanguageModel(config)
    model.params.load_state(ad.load_checkpoint(stem))
    return model
