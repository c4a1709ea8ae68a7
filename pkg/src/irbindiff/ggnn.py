"""Function-level encoder: gated graph network trained with momentum contrast.

Block embeddings from the language model become node states (zero-padded to
the node width). Each propagation step aggregates neighbor states through
separate in-edge and out-edge projections and feeds the sum to a GRU cell.
A gated readout pools node states into one vector which is L2-normalized.

Training follows the momentum-contrast recipe: a query encoder is updated
by gradient descent, a key encoder tracks it as an exponential moving
average, and a fixed-size ring buffer of past keys provides negatives for
the InfoNCE loss (positive similarity in the numerator, positive plus queue
in the denominator, temperature-scaled).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, GraphError, InputError
from .seeding import rng_for

log = logging.getLogger(__name__)


@dataclass
class GGNNConfig:
    input_dim: int = 128
    node_dim: int = 256
    out_dim: int = 256
    steps: int = 10
    lr: float = 1e-4
    weight_decay: float = 5e-4
    batch_size: int = 16
    epochs: int = 5
    momentum: float = 0.999
    queue_capacity: int = 8192
    temperature: float = 0.07

    def __post_init__(self):
        for name in ("input_dim", "node_dim", "out_dim", "steps",
                     "batch_size", "epochs", "queue_capacity"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, "
                              f"got {self.temperature}")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lr must be > 0 and weight_decay >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "GGNNConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class FunctionGraph:
    """One function ready for the graph encoder."""

    key: str
    node_vecs: np.ndarray  # (N, input_dim)
    edges: list[tuple[int, int]]
    group: tuple = ()  # source identity used to pick positives


def _validate_edges(n_nodes: int, edges: Sequence[tuple[int, int]]) -> None:
    for src, dst in edges:
        if not (0 <= src < n_nodes and 0 <= dst < n_nodes):
            raise GraphError(f"edge ({src}, {dst}) outside graph of "
                             f"{n_nodes} nodes")


class GraphEncoder:
    """GGNN over one function's block graph, L2-normalized gated readout."""

    kind = "ggnn"

    def __init__(self, config: GGNNConfig, seed: int = 0):
        if config.input_dim > config.node_dim:
            raise ConfigError(f"input_dim {config.input_dim} exceeds node_dim "
                              f"{config.node_dim}; padding cannot shrink")
        self.config = config
        self.params = ad.ParameterSet()
        rng = rng_for(seed, "ggnn-init")
        d, out = config.node_dim, config.out_dim

        def w(name, fan_in, fan_out):
            # Glorot scaling keeps the stacked tanh/sigmoid blocks from
            # collapsing the readout magnitude at initialization
            std = np.sqrt(2.0 / (fan_in + fan_out))
            self.params.add(name, rng.normal(0.0, std, size=(fan_in, fan_out)))

        def zeros(name, *shape):
            self.params.add(name, np.zeros(shape))

        w("w_in", d, d)
        w("w_out", d, d)
        zeros("b_msg", d)
        for gate in ("z", "r", "h"):
            w(f"gru.w{gate}", d, d)
            w(f"gru.u{gate}", d, d)
            zeros(f"gru.b{gate}", d)
        for head in ("gate", "cand"):
            w(f"read.{head}_w1", d, d)
            zeros(f"read.{head}_b1", d)
            w(f"read.{head}_w2", d, out)
            zeros(f"read.{head}_b2", out)

    def node_init(self, node_vecs: np.ndarray) -> ad.Tensor:
        """Zero-pad (N, input_dim) block embeddings to (N, node_dim)."""
        node_vecs = np.asarray(node_vecs, dtype=np.float64)
        if node_vecs.ndim != 2 or node_vecs.shape[1] != self.config.input_dim:
            raise InputError(f"node vectors must be (N, {self.config.input_dim}),"
                             f" got {node_vecs.shape}")
        if node_vecs.shape[0] < 1:
            raise GraphError("cannot encode a function with no blocks")
        pad = self.config.node_dim - self.config.input_dim
        padded = np.pad(node_vecs, ((0, 0), (0, pad)))
        return ad.constant(padded)

    def ggnn_step(self, states: ad.Tensor,
                  edges: Sequence[tuple[int, int]]) -> ad.Tensor:
        """One message-passing step: directed messages, then a GRU update."""
        n = states.shape[0]
        _validate_edges(n, edges)
        a_in = np.zeros((n, n))
        a_out = np.zeros((n, n))
        for src, dst in edges:
            a_in[dst, src] = 1.0   # dst receives from src along in-edges
            a_out[src, dst] = 1.0  # src receives from dst along out-edges
        a_in_c, a_out_c = ad.constant(a_in), ad.constant(a_out)
        p = self.params
        gru = {f"{k}{g}": p[f"gru.{k}{g}"] for k in ("w", "u", "b")
               for g in ("z", "r", "h")}
        msg = ad.add_bias(
            ad.add(ad.matmul(a_in_c, ad.matmul(states, p["w_in"])),
                   ad.matmul(a_out_c, ad.matmul(states, p["w_out"]))),
            p["b_msg"])
        return ad.gru_cell(states, msg, gru)

    def propagate(self, states: ad.Tensor,
                  edges: Sequence[tuple[int, int]]) -> ad.Tensor:
        """Run the configured number of message-passing steps."""
        h = states
        for _ in range(self.config.steps):
            h = self.ggnn_step(h, edges)
        return h

    def readout(self, states: ad.Tensor) -> ad.Tensor:
        """Gated sum over nodes -> tanh -> unit L2 norm, shape (out_dim,)."""
        p = self.params

        def mlp(head, activate):
            hid = ad.tanh(ad.add_bias(ad.matmul(states, p[f"read.{head}_w1"]),
                                      p[f"read.{head}_b1"]))
            return activate(ad.add_bias(ad.matmul(hid, p[f"read.{head}_w2"]),
                                        p[f"read.{head}_b2"]))

        gate = mlp("gate", ad.sigmoid)
        cand = mlp("cand", ad.tanh)
        pooled = ad.tanh(ad.sum_(ad.mul(gate, cand), axis=0))
        return ad.l2_normalize(pooled)

    def encode(self, graph: FunctionGraph) -> ad.Tensor:
        states = self.node_init(graph.node_vecs)
        states = self.propagate(states, graph.edges)
        return self.readout(states)


class PooledEncoder:
    """Structure-free baseline: projected mean of block embeddings."""

    kind = "pooled"

    def __init__(self, config: GGNNConfig, seed: int = 0):
        self.config = config
        self.params = ad.ParameterSet()
        rng = rng_for(seed, "pooled-init")
        std = np.sqrt(2.0 / (config.input_dim + config.out_dim))
        self.params.add("proj_w", rng.normal(
            0.0, std, size=(config.input_dim, config.out_dim)))
        self.params.add("proj_b", np.zeros(config.out_dim))

    def encode(self, graph: FunctionGraph) -> ad.Tensor:
        node_vecs = np.asarray(graph.node_vecs, dtype=np.float64)
        if node_vecs.ndim != 2 or node_vecs.shape[1] != self.config.input_dim:
            raise InputError(f"node vectors must be (N, {self.config.input_dim}),"
                             f" got {node_vecs.shape}")
        if node_vecs.shape[0] < 1:
            raise GraphError("cannot encode a function with no blocks")
        pooled = ad.constant(node_vecs.mean(axis=0, keepdims=True))
        out = ad.add_bias(ad.matmul(pooled, self.params["proj_w"]),
                          self.params["proj_b"])
        return ad.l2_normalize(ad.reshape(out, (self.config.out_dim,)))


Encoder = GraphEncoder | PooledEncoder


def make_encoder(config: GGNNConfig, seed: int = 0,
                 no_graph: bool = False) -> Encoder:
    return PooledEncoder(config, seed) if no_graph else GraphEncoder(config, seed)


@dataclass
class MoCoState:
    query: Encoder
    key: Encoder
    queue: np.ndarray  # (capacity, out_dim) rows are unit vectors
    cursor: int = 0
    total_enqueued: int = 0

    @property
    def warmed(self) -> bool:
        """True once every initial queue row has been overwritten."""
        return self.total_enqueued >= self.queue.shape[0]


def init_moco(config: GGNNConfig, seed: int = 0,
              no_graph: bool = False) -> MoCoState:
    """Query/key encoders starting from identical weights plus a queue of
    random unit vectors."""
    query = make_encoder(config, seed, no_graph)
    key = make_encoder(config, seed, no_graph)
    key.params.copy_from(query.params)
    queue = rng_for(seed, "queue-init").standard_normal(
        (config.queue_capacity, config.out_dim))
    queue /= np.linalg.norm(queue, axis=1, keepdims=True)
    return MoCoState(query=query, key=key, queue=queue)


def momentum_update(query_params: ad.ParameterSet,
                    key_params: ad.ParameterSet, momentum: float) -> None:
    """key <- momentum * key + (1 - momentum) * query, in place."""
    if not 0.0 <= momentum <= 1.0:
        raise ConfigError(f"momentum must be in [0, 1], got {momentum}")
    if query_params.names() != key_params.names():
        raise ConfigError("query and key parameter sets do not match")
    for name in query_params.names():
        q, k = query_params[name], key_params[name]
        if q.data.shape != k.data.shape:
            raise ConfigError(f"shape mismatch for {name!r}: "
                              f"{q.data.shape} vs {k.data.shape}")
        k.data = momentum * k.data + (1.0 - momentum) * q.data


def enqueue(state: MoCoState, keys: np.ndarray) -> None:
    """Write key vectors into the ring buffer, oldest entries first."""
    keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    capacity, dim = state.queue.shape
    if keys.shape[1] != dim:
        raise InputError(f"keys of width {keys.shape[1]} do not fit queue "
                         f"of width {dim}")
    for row in keys:
        state.queue[state.cursor] = row
        state.cursor = (state.cursor + 1) % capacity
    state.total_enqueued += keys.shape[0]


def info_nce_loss(query: ad.Tensor, key_pos: np.ndarray, queue: np.ndarray,
                  temperature: float) -> ad.Tensor:
    """Cross-entropy of the positive against positive-plus-queue logits."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    dim = query.shape[-1]
    key_pos = np.asarray(key_pos, dtype=np.float64).reshape(-1)
    if key_pos.shape[0] != dim or queue.ndim != 2 or queue.shape[1] != dim:
        raise InputError(f"similarity operands disagree: query {query.shape}, "
                         f"key {key_pos.shape}, queue {queue.shape}")
    q2 = ad.reshape(query, (1, dim))
    pos = ad.matmul(q2, ad.constant(key_pos.reshape(dim, 1)))
    negs = ad.matmul(q2, ad.constant(queue.T))
    logits = ad.scale(ad.concat([pos, negs], axis=1), 1.0 / temperature)
    return ad.cross_entropy(logits, np.array([0]))


@dataclass
class TrainHistory:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)


def train_contrastive(dataset: Sequence[FunctionGraph], config: GGNNConfig,
                      seed: int = 0, no_graph: bool = False,
                      ) -> tuple[MoCoState, TrainHistory]:
    """Momentum-contrast training over groups of same-source functions.

    Positives are same-group partners (functions sharing a source identity),
    negatives come from the queue. Steps taken before the initial queue has
    been fully overwritten are flagged and excluded from the per-epoch curve.
    """
    groups: dict[tuple, list[int]] = {}
    for i, g in enumerate(dataset):
        groups.setdefault(tuple(g.group), []).append(i)
    queryable = [i for i, g in enumerate(dataset)
                 if len(groups[tuple(g.group)]) >= 2]
    if not queryable:
        raise InputError("no group has two or more functions; "
                         "nothing to contrast")
    state = init_moco(config, seed, no_graph)
    opt = ad.Adam(state.query.params, lr=config.lr,
                  weight_decay=config.weight_decay)
    rng = rng_for(seed, "moco-order")
    history = TrainHistory()
    step = 0
    for epoch in range(config.epochs):
        order = [queryable[i] for i in rng.permutation(len(queryable))]
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            warmed = state.warmed
            losses = []
            keys = np.empty((len(batch), config.out_dim))
            for j, idx in enumerate(batch):
                members = groups[tuple(dataset[idx].group)]
                partners = [m for m in members if m != idx]
                partner = partners[int(rng.integers(len(partners)))]
                q = state.query.encode(dataset[idx])
                k = state.key.encode(dataset[partner]).data
                losses.append(info_nce_loss(q, k, state.queue,
                                            config.temperature))
                keys[j] = k
            total = _stack_mean(losses)
            state.query.params.zero_grad()
            total.backward()
            opt.step()
            momentum_update(state.query.params, state.key.params,
                            config.momentum)
            enqueue(state, keys)
            history.steps.append({"epoch": epoch, "step": step,
                                  "loss": total.item(), "warmed": warmed,
                                  "queue_fill": min(state.total_enqueued,
                                                    config.queue_capacity)})
            step += 1
        recorded = [s["loss"] for s in history.steps
                    if s["epoch"] == epoch and s["warmed"]]
        if recorded:
            history.epochs.append({"epoch": epoch,
                                   "mean_loss": float(np.mean(recorded)),
                                   "n_steps": len(recorded)})
            log.info("contrastive epoch %d: mean loss %.4f over %d steps",
                     epoch, history.epochs[-1]["mean_loss"], len(recorded))
        else:
            log.info("contrastive epoch %d: queue still warming up", epoch)
    return state, history


def _stack_mean(losses: Sequence[ad.Tensor]) -> ad.Tensor:
    stacked = ad.concat([ad.reshape(l, (1,)) for l in losses], axis=0)
    return ad.mean(stacked)


def embed_functions(encoder: Encoder,
                    dataset: Sequence[FunctionGraph]) -> np.ndarray:
    """Encode every function; rows come back unit-normalized."""
    out = np.empty((len(dataset), encoder.config.out_dim))
    for i, graph in enumerate(dataset):
        out[i] = encoder.encode(graph).data
    return out
