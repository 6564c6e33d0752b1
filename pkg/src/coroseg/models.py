"""Message-passing network variants for node-level segment labeling.

All four variants share one architecture: two graph layers with a ReLU
between them, then a fully-connected head producing per-node class logits.
Graphs are small (tens of nodes), so everything runs on dense matrices.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import IndexGroups, Tensor

VARIANTS = ("gcn", "gat", "gin", "sage")

CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    in_dim: int = 48
    hidden_dim: int = 64
    num_classes: int = 13
    gat_heads: int = 2          # hidden layer; output layer always 1 head
    gin_eps_init: float = 0.0   # learnable
    leaky_slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}")
        if self.in_dim <= 0 or self.hidden_dim <= 0:
            raise ModelError("dims must be positive")
        if self.num_classes not in (11, 13):
            raise ModelError("num_classes must be 11 or 13")
        if self.variant == "gat" and self.hidden_dim % self.gat_heads:
            raise ModelError("hidden_dim must divide evenly across gat_heads")


@dataclass
class GraphStructure:
    """Per-graph constants shared by all layers: derived from the adjacency."""

    adjacency: np.ndarray        # (N, N) 0/1, zero diagonal
    gcn_norm: np.ndarray         # D^-1/2 (A+I) D^-1/2
    attention_bias: np.ndarray   # 0 on A+I entries, large negative elsewhere
    neighbors: IndexGroups       # neighbor index sets, self excluded

    @classmethod
    def from_adjacency(cls, adj: np.ndarray) -> "GraphStructure":
        adj = np.asarray(adj, dtype=np.float64)
        n = adj.shape[0]
        a_hat = adj + np.eye(n)
        d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
        gcn_norm = a_hat * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
        attention_bias = np.where(a_hat > 0, 0.0, -1e30)
        return cls(adj, gcn_norm, attention_bias, IndexGroups.from_adjacency(adj))

    @classmethod
    def block_diagonal(cls, structures: list["GraphStructure"]) -> "GraphStructure":
        sizes = [s.adjacency.shape[0] for s in structures]
        n = sum(sizes)
        adj = np.zeros((n, n))
        off = 0
        for s, sz in zip(structures, sizes):
            adj[off : off + sz, off : off + sz] = s.adjacency
            off += sz
        return cls.from_adjacency(adj)


@dataclass
class TrainedModel:
    config: ModelConfig
    params: dict[str, Tensor]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def _zeros(rows: int, cols: int) -> Tensor:
    return Tensor(np.zeros((rows, cols)), requires_grad=True)


def init_model(cfg: ModelConfig) -> TrainedModel:
    rng = np.random.default_rng(cfg.seed)
    d_in, d_h, d_out = cfg.in_dim, cfg.hidden_dim, cfg.num_classes
    p: dict[str, Tensor] = {}
    if cfg.variant == "gcn":
        p["w1"], p["b1"] = _glorot(rng, d_in, d_h), _zeros(1, d_h)
        p["w2"], p["b2"] = _glorot(rng, d_h, d_h), _zeros(1, d_h)
    elif cfg.variant == "gat":
        per_head = d_h // cfg.gat_heads
        for h in range(cfg.gat_heads):
            p[f"w1_h{h}"] = _glorot(rng, d_in, per_head)
            p[f"a1_src_h{h}"] = _glorot(rng, per_head, 1)
            p[f"a1_dst_h{h}"] = _glorot(rng, per_head, 1)
        p["b1"] = _zeros(1, d_h)
        p["w2"] = _glorot(rng, d_h, d_h)
        p["a2_src"] = _glorot(rng, d_h, 1)
        p["a2_dst"] = _glorot(rng, d_h, 1)
        p["b2"] = _zeros(1, d_h)
    elif cfg.variant == "gin":
        p["eps1"] = Tensor(np.full((1, 1), cfg.gin_eps_init), requires_grad=True)
        p["eps2"] = Tensor(np.full((1, 1), cfg.gin_eps_init), requires_grad=True)
        p["mlp1_w1"], p["mlp1_b1"] = _glorot(rng, d_in, d_h), _zeros(1, d_h)
        p["mlp1_w2"], p["mlp1_b2"] = _glorot(rng, d_h, d_h), _zeros(1, d_h)
        p["mlp2_w1"], p["mlp2_b1"] = _glorot(rng, d_h, d_h), _zeros(1, d_h)
        p["mlp2_w2"], p["mlp2_b2"] = _glorot(rng, d_h, d_h), _zeros(1, d_h)
    elif cfg.variant == "sage":
        p["pool1"], p["pool1_b"] = _glorot(rng, d_in, d_h), _zeros(1, d_h)
        p["out1"], p["out1_b"] = _glorot(rng, d_in + d_h, d_h), _zeros(1, d_h)
        p["pool2"], p["pool2_b"] = _glorot(rng, d_h, d_h), _zeros(1, d_h)
        p["out2"], p["out2_b"] = _glorot(rng, d_h + d_h, d_h), _zeros(1, d_h)
    p["fc_w"] = _glorot(rng, d_h, d_out)
    p["fc_b"] = _zeros(1, d_out)
    return TrainedModel(cfg, p)


def gcn_layer(h: Tensor, gs: GraphStructure, w: Tensor, b: Tensor) -> Tensor:
    """Symmetric-normalized propagation: D^-1/2 (A+I) D^-1/2 H W + b."""
    return ad.add(ad.matmul(Tensor(gs.gcn_norm), ad.matmul(h, w)), b)


def gat_head(h: Tensor, gs: GraphStructure, w, a_src, a_dst, slope: float) -> Tensor:
    """One attention head: softmax over N(i) u {i} of leaky-relu logits."""
    hw = ad.matmul(h, w)
    f_src = ad.matmul(hw, a_src)                      # (N, 1)
    f_dst = ad.matmul(hw, a_dst)
    logits = ad.leaky_relu(ad.add(f_src, ad.transpose(f_dst)), slope)
    alpha = ad.row_softmax(ad.add(logits, Tensor(gs.attention_bias)))
    return ad.matmul(alpha, hw)


def gat_layer(h, gs, params, layer: int, cfg: ModelConfig) -> Tensor:
    if layer == 1:
        heads = [
            gat_head(
                h, gs,
                params[f"w1_h{k}"], params[f"a1_src_h{k}"], params[f"a1_dst_h{k}"],
                cfg.leaky_slope,
            )
            for k in range(cfg.gat_heads)
        ]
        return ad.add(ad.concat_cols(heads), params["b1"])
    out = gat_head(h, gs, params["w2"], params["a2_src"], params["a2_dst"], cfg.leaky_slope)
    return ad.add(out, params["b2"])


def gin_layer(h: Tensor, gs: GraphStructure, params, layer: int) -> Tensor:
    """MLP((1 + eps) h + sum of neighbor rows), eps learnable."""
    eps = params[f"eps{layer}"]
    scaled = ad.mul(h, ad.add(eps, Tensor([[1.0]])))
    agg = ad.add(scaled, ad.row_sum_pool(h, gs.neighbors))
    hidden = ad.relu(ad.add(ad.matmul(agg, params[f"mlp{layer}_w1"]), params[f"mlp{layer}_b1"]))
    return ad.add(ad.matmul(hidden, params[f"mlp{layer}_w2"]), params[f"mlp{layer}_b2"])


def sage_layer(h: Tensor, gs: GraphStructure, params, layer: int) -> Tensor:
    """Max-pool aggregation over neighbors, concat with self, l2-normalized.

    Empty neighborhoods aggregate to the zero vector.
    """
    pooled_src = ad.relu(ad.add(ad.matmul(h, params[f"pool{layer}"]), params[f"pool{layer}_b"]))
    agg = ad.row_max_pool(pooled_src, gs.neighbors)
    out = ad.add(
        ad.matmul(ad.concat_cols([h, agg]), params[f"out{layer}"]),
        params[f"out{layer}_b"],
    )
    return l2_rows(out)


def l2_rows(t: Tensor) -> Tensor:
    return ad.l2_normalize_rows(t)


def model_forward(model: TrainedModel, features, gs: GraphStructure) -> Tensor:
    """Two graph layers (ReLU between) then the FC head; returns raw logits."""
    cfg, p = model.config, model.params
    h = features if isinstance(features, Tensor) else Tensor(features)
    if h.shape[1] != cfg.in_dim:
        raise ModelError(f"feature dim {h.shape[1]} != config in_dim {cfg.in_dim}")

    def layer(x, idx):
        if cfg.variant == "gcn":
            return gcn_layer(x, gs, p[f"w{idx}"], p[f"b{idx}"])
        if cfg.variant == "gat":
            return gat_layer(x, gs, p, idx, cfg)
        if cfg.variant == "gin":
            return gin_layer(x, gs, p, idx)
        return sage_layer(x, gs, p, idx)

    h = ad.relu(layer(h, 1))
    h = layer(h, 2)
    return ad.add(ad.matmul(h, p["fc_w"]), p["fc_b"])


def save_model(model: TrainedModel, path: str | Path):
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "weights": {
            name: {"shape": list(t.shape), "values": t.data.ravel().tolist()}
            for name, t in model.params.items()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_model(path: str | Path) -> TrainedModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ModelError(f"unsupported checkpoint version {doc.get('format_version')}")
    cfg = ModelConfig(**doc["config"])
    model = init_model(cfg)
    for name, w in doc["weights"].items():
        if name not in model.params:
            raise ModelError(f"unexpected weight {name!r}")
        arr = np.asarray(w["values"], dtype=np.float64).reshape(w["shape"])
        if arr.shape != model.params[name].shape:
            raise ModelError(f"shape mismatch for weight {name!r}")
        model.params[name].data[:] = arr
    return model
