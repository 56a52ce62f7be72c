"""The hybrid procedure classifier: token tables feed a CFG graph network,
snapshot tokens feed a CCT graph network, the adjacency matrix feeds the
positional CNN, and a fused dense + MLP head scores dead-store presence.

Variants gate which components reach the fusion layer, for ablation:
  w2v            mean block embedding only (60)
  cnn            adjacency embedding only (40)
  w2v+ggnn       CFG graph network state (70)
  w2v+ggnn+cnn   40 + 70
  full           40 + 70 + 50
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cnn import CnnParams, CnnVariant, embed_adjacency, init_cnn, pad_matrix
from .dataset import SampleRecord
from .embedding import EmbeddingTable, Vocab, block_token_weights
from .ggnn import GgnnConfig, GgnnParams, direction_matrices, init_ggnn, propagate, readout
from .graphs import EdgeKind
from .nn import (
    ShapeMismatch,
    Tensor,
    add,
    concat,
    const,
    dense,
    matmul,
    param,
    reduce_mean,
    relu,
    sigmoid,
    take_rows,
)

VARIANTS = ("w2v", "cnn", "w2v+ggnn", "w2v+ggnn+cnn", "full")

_EDGE_KIND_INDEX = {k.value: i for i, k in enumerate(EdgeKind)}

G_ADJ_DIM = 40
G_INTRA_DIM = 70
G_INTER_DIM = 50


@dataclass
class ModelConfig:
    variant: str = "full"
    ins_dim: int = 60
    val_dim: int = 30
    cfg_state: int = G_INTRA_DIM
    cfg_steps: int = 10
    cct_state: int = G_INTER_DIM
    cct_steps: int = 5
    cnn_variant: CnnVariant = CnnVariant.RESNET11
    fusion_hidden: int = 64
    mlp_hidden: int = 32
    finetune_embeddings: bool = True
    per_kind_transforms: bool = False
    readout_kind: str = "mean"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")

    @property
    def uses_tokens(self) -> bool:
        return self.variant != "cnn"

    @property
    def uses_cfg_ggnn(self) -> bool:
        return self.variant in ("w2v+ggnn", "w2v+ggnn+cnn", "full")

    @property
    def uses_cnn(self) -> bool:
        return self.variant in ("cnn", "w2v+ggnn+cnn", "full")

    @property
    def uses_cct(self) -> bool:
        return self.variant == "full"

    @property
    def fusion_input_dim(self) -> int:
        dim = 0
        if self.uses_cnn:
            dim += G_ADJ_DIM
        if self.uses_cfg_ggnn:
            dim += self.cfg_state
        elif self.uses_tokens:
            dim += self.ins_dim
        if self.uses_cct:
            dim += self.cct_state
        return dim

    def ggnn_cfg_config(self) -> GgnnConfig:
        return GgnnConfig(
            self.cfg_state, self.cfg_steps, self.ins_dim,
            self.per_kind_transforms, self.readout_kind, edge_kinds=len(EdgeKind),
        )

    def ggnn_cct_config(self) -> GgnnConfig:
        return GgnnConfig(
            self.cct_state, self.cct_steps, self.val_dim,
            False, self.readout_kind, edge_kinds=1,
        )

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "ins_dim": self.ins_dim,
            "val_dim": self.val_dim,
            "cfg_state": self.cfg_state,
            "cfg_steps": self.cfg_steps,
            "cct_state": self.cct_state,
            "cct_steps": self.cct_steps,
            "cnn_variant": self.cnn_variant.value,
            "fusion_hidden": self.fusion_hidden,
            "mlp_hidden": self.mlp_hidden,
            "finetune_embeddings": self.finetune_embeddings,
            "per_kind_transforms": self.per_kind_transforms,
            "readout_kind": self.readout_kind,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        kwargs = dict(obj)
        kwargs["cnn_variant"] = CnnVariant(kwargs["cnn_variant"])
        return cls(**kwargs)


@dataclass
class ModelParams:
    config: ModelConfig
    table_ins: Tensor | None
    table_val: Tensor | None
    ggnn_cfg: GgnnParams | None
    ggnn_cct: GgnnParams | None
    cnn: CnnParams | None
    fusion_w: Tensor = None
    fusion_b: Tensor = None
    mlp_w1: Tensor = None
    mlp_b1: Tensor = None
    mlp_w2: Tensor = None
    mlp_b2: Tensor = None

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.table_ins is not None:
            out["embed_ins.vectors"] = self.table_ins
        if self.table_val is not None:
            out["embed_val.vectors"] = self.table_val
        if self.ggnn_cfg is not None:
            out.update(self.ggnn_cfg.named("ggnn_cfg"))
        if self.ggnn_cct is not None:
            out.update(self.ggnn_cct.named("ggnn_cct"))
        if self.cnn is not None:
            out.update(self.cnn.named("cnn"))
        out["fusion.w"] = self.fusion_w
        out["fusion.b"] = self.fusion_b
        out["mlp.w1"] = self.mlp_w1
        out["mlp.b1"] = self.mlp_b1
        out["mlp.w2"] = self.mlp_w2
        out["mlp.b2"] = self.mlp_b2
        return out

    def trainable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.named().items() if t.requires_grad}

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.named().items()}


def init_model(
    config: ModelConfig,
    seed: int,
    pretrained_ins: EmbeddingTable | None = None,
    pretrained_val: EmbeddingTable | None = None,
    vocab_ins_size: int | None = None,
    vocab_val_size: int | None = None,
    dtype=np.float32,
) -> ModelParams:
    """Seed-deterministic initialization; embedding tables start from the
    pretrained vectors (or zeros when only a size is given) and are trainable
    iff finetune_embeddings."""
    rng = np.random.default_rng(seed)

    def mat(rows, cols):
        bound = 1.0 / np.sqrt(rows)
        return param(rng.uniform(-bound, bound, (rows, cols)).astype(dtype))

    table_ins = table_val = None
    if config.uses_tokens:
        vecs = (
            pretrained_ins.vectors.astype(dtype)
            if pretrained_ins is not None
            else np.zeros((vocab_ins_size, config.ins_dim), dtype=dtype)
        )
        table_ins = Tensor(vecs.copy(), requires_grad=config.finetune_embeddings)
    if config.uses_cct:
        vecs = (
            pretrained_val.vectors.astype(dtype)
            if pretrained_val is not None
            else np.zeros((vocab_val_size, config.val_dim), dtype=dtype)
        )
        table_val = Tensor(vecs.copy(), requires_grad=config.finetune_embeddings)

    ggnn_cfg = init_ggnn(config.ggnn_cfg_config(), rng, dtype) if config.uses_cfg_ggnn else None
    ggnn_cct = init_ggnn(config.ggnn_cct_config(), rng, dtype) if config.uses_cct else None
    cnn = init_cnn(config.cnn_variant, rng, dtype) if config.uses_cnn else None

    fusion_in = config.fusion_input_dim
    return ModelParams(
        config=config,
        table_ins=table_ins,
        table_val=table_val,
        ggnn_cfg=ggnn_cfg,
        ggnn_cct=ggnn_cct,
        cnn=cnn,
        fusion_w=mat(fusion_in, config.fusion_hidden),
        fusion_b=param(np.zeros((1, config.fusion_hidden), dtype=dtype)),
        mlp_w1=mat(config.fusion_hidden, config.mlp_hidden),
        mlp_b1=param(np.zeros((1, config.mlp_hidden), dtype=dtype)),
        mlp_w2=mat(config.mlp_hidden, 1),
        mlp_b2=param(np.zeros((1, 1), dtype=dtype)),
    )


def load_into(params: ModelParams, arrays: dict[str, np.ndarray]) -> None:
    """Overwrite every named tensor from a checkpoint array dict."""
    named = params.named()
    missing = set(named) - set(arrays)
    if missing:
        raise KeyError(f"checkpoint missing parameters: {sorted(missing)[:4]} ...")
    for name, tensor in named.items():
        arr = arrays[name]
        if arr.shape != tensor.data.shape:
            raise ShapeMismatch(f"{name}: checkpoint {arr.shape} vs model {tensor.data.shape}")
        tensor.data = arr.astype(tensor.data.dtype).copy()


# ---------------------------------------------------------------------------
# Featurization: one record -> constant arrays ready for the forward pass.
# ---------------------------------------------------------------------------


@dataclass
class FeaturizedSample:
    key: tuple[str, str]
    config_tag: str
    label: int
    cost: int
    ins_ids: np.ndarray  # all block tokens, concatenated
    block_weights: np.ndarray  # (K, total_tokens) two-level average weights
    cfg_a_in: list[np.ndarray]
    cfg_a_out: list[np.ndarray]
    adj: np.ndarray  # padded, float32
    val_ids: np.ndarray
    cct_weights: np.ndarray  # (N, total value tokens)
    cct_a_in: list[np.ndarray]
    cct_a_out: list[np.ndarray]
    selector: np.ndarray  # (1, N) averaging row for the target procedure


def featurize(
    record: SampleRecord,
    vocab_ins: Vocab,
    vocab_val: Vocab,
    config: ModelConfig,
    dtype=np.float32,
) -> FeaturizedSample:
    # block token ids and two-level averaging weights
    ids: list[int] = []
    rows: list[np.ndarray] = []
    offset = 0
    total = sum(len(ins) for block in record.cfg_nodes for ins in block)
    for block in record.cfg_nodes:
        counts = [len(ins) for ins in block]
        w = block_token_weights(counts).astype(dtype)
        row = np.zeros(total, dtype=dtype)
        row[offset : offset + len(w)] = w
        rows.append(row)
        for ins in block:
            ids.extend(vocab_ins.lookup(t) for t in ins)
        offset += len(w)
    block_weights = np.stack(rows) if rows else np.zeros((0, 0), dtype=dtype)

    kinds = len(EdgeKind) if config.per_kind_transforms else 1
    cfg_edges = [
        (s, d, _EDGE_KIND_INDEX[k]) for s, d, k in record.cfg_edges
    ]
    n_blocks = len(record.cfg_nodes)
    cfg_a_in, cfg_a_out = direction_matrices(cfg_edges, n_blocks, kinds, dtype)

    adj = pad_matrix(np.asarray(record.adj, dtype=dtype), dtype)

    # CCT node inputs
    val_ids: list[int] = []
    n_nodes = len(record.cct_nodes)
    tot_val = sum(len(tokens) for _, tokens in record.cct_nodes)
    cct_weights = np.zeros((n_nodes, tot_val), dtype=dtype)
    pos = 0
    selector = np.zeros((1, n_nodes), dtype=dtype)
    matches = []
    for i, (proc, tokens) in enumerate(record.cct_nodes):
        if tokens:
            cct_weights[i, pos : pos + len(tokens)] = 1.0 / len(tokens)
            val_ids.extend(vocab_val.lookup(t) for t in tokens)
            pos += len(tokens)
        if proc == record.proc:
            matches.append(i)
    if matches:
        selector[0, matches] = 1.0 / len(matches)
    cct_a_in, cct_a_out = direction_matrices(record.cct_edges, max(n_nodes, 1), 1, dtype)

    return FeaturizedSample(
        key=record.key,
        config_tag=record.config,
        label=record.label,
        cost=record.cost,
        ins_ids=np.array(ids, dtype=np.int64),
        block_weights=block_weights,
        cfg_a_in=cfg_a_in,
        cfg_a_out=cfg_a_out,
        adj=adj,
        val_ids=np.array(val_ids, dtype=np.int64),
        cct_weights=cct_weights,
        cct_a_in=cct_a_in,
        cct_a_out=cct_a_out,
        selector=selector,
    )


# ---------------------------------------------------------------------------
# Forward passes.
# ---------------------------------------------------------------------------


def fuse(g_adj: Tensor, g_intra: Tensor, g_inter: Tensor, params: ModelParams) -> Tensor:
    """Full-model fusion: concat (40 || 70 || 50) -> dense -> relu."""
    if g_adj.data.shape[1] != G_ADJ_DIM:
        raise ShapeMismatch(f"g_adj has dim {g_adj.data.shape[1]}, expected {G_ADJ_DIM}")
    if g_intra.data.shape[1] != G_INTRA_DIM:
        raise ShapeMismatch(f"g_intra has dim {g_intra.data.shape[1]}, expected {G_INTRA_DIM}")
    if g_inter.data.shape[1] != G_INTER_DIM:
        raise ShapeMismatch(f"g_inter has dim {g_inter.data.shape[1]}, expected {G_INTER_DIM}")
    merged = concat([g_adj, g_intra, g_inter], axis=1)
    return relu(dense(merged, params.fusion_w, params.fusion_b))


def classifier_logit(g_prog: Tensor, params: ModelParams) -> Tensor:
    hidden = relu(dense(g_prog, params.mlp_w1, params.mlp_b1))
    return dense(hidden, params.mlp_w2, params.mlp_b2)


def classify(g_prog: Tensor, params: ModelParams) -> float:
    """Dead-store probability for a fused embedding (decision threshold 0.5)."""
    return float(sigmoid(classifier_logit(g_prog, params)).data[0, 0])


def forward_logit(params: ModelParams, fs: FeaturizedSample) -> Tensor:
    """Variant-gated forward pass to the pre-sigmoid logit."""
    config = params.config
    parts: list[Tensor] = []
    if config.uses_cnn:
        parts.append(embed_adjacency(fs.adj, params.cnn))
    blocks60 = None
    if config.uses_tokens:
        rows = take_rows(params.table_ins, fs.ins_ids)
        blocks60 = matmul(const(fs.block_weights), rows)
    if config.uses_cfg_ggnn:
        states = propagate(
            blocks60, [], config.ggnn_cfg_config(), params.ggnn_cfg,
            a_in=fs.cfg_a_in, a_out=fs.cfg_a_out,
        )
        parts.append(readout(states, params.ggnn_cfg, config.readout_kind))
    elif config.uses_tokens:
        parts.append(reduce_mean(blocks60, axis=0, keepdims=True))
    if config.uses_cct:
        val_rows = take_rows(params.table_val, fs.val_ids)
        node30 = matmul(const(fs.cct_weights), val_rows)
        states = propagate(
            node30, [], config.ggnn_cct_config(), params.ggnn_cct,
            a_in=fs.cct_a_in, a_out=fs.cct_a_out,
        )
        parts.append(matmul(const(fs.selector), states))
    merged = parts[0] if len(parts) == 1 else concat(parts, axis=1)
    g_prog = relu(dense(merged, params.fusion_w, params.fusion_b))
    return classifier_logit(g_prog, params)


def forward_probability(params: ModelParams, fs: FeaturizedSample) -> float:
    return float(sigmoid(forward_logit(params, fs)).data[0, 0])
