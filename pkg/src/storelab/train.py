"""End-to-end training, evaluation metrics, and the oracle-filtering report."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .dataset import SampleRecord
from .embedding import EmbeddingTable, Vocab, build_vocab, train_word2vec
from .model import (
    FeaturizedSample,
    ModelConfig,
    ModelParams,
    featurize,
    forward_logit,
    init_model,
    load_into,
)
from .nn import (
    Optimizer,
    Tape,
    backward,
    binary_cross_entropy,
    const,
    hadamard,
    set_sentinel,
)
from .nn.checkpoint import load_checkpoint, save_checkpoint

GENERATOR_VERSION_KEY = "generator_version"


class DegenerateDataset(Exception):
    pass


# ---------------------------------------------------------------------------
# Metrics.
# ---------------------------------------------------------------------------


@dataclass
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float | None
    recall: float | None
    accuracy: float | None
    undefined: list[str] = field(default_factory=list)
    per_config: dict[str, "Metrics"] | None = None

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "Metrics":
        undefined = []
        precision = recall = accuracy = None
        if tp + fp > 0:
            precision = tp / (tp + fp)
        else:
            undefined.append("precision")
        if tp + fn > 0:
            recall = tp / (tp + fn)
        else:
            undefined.append("recall")
        if tp + fp + fn + tn > 0:
            accuracy = (tp + tn) / (tp + fp + fn + tn)
        else:
            undefined.append("accuracy")
        return cls(tp, fp, fn, tn, precision, recall, accuracy, undefined)

    @classmethod
    def from_pairs(cls, truth: list[int], predicted: list[int]) -> "Metrics":
        tp = sum(1 for t, p in zip(truth, predicted) if t == 1 and p == 1)
        fp = sum(1 for t, p in zip(truth, predicted) if t == 0 and p == 1)
        fn = sum(1 for t, p in zip(truth, predicted) if t == 1 and p == 0)
        tn = sum(1 for t, p in zip(truth, predicted) if t == 0 and p == 0)
        return cls.from_counts(tp, fp, fn, tn)

    def to_json(self) -> dict:
        out = {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
            "undefined": self.undefined,
        }
        if self.per_config is not None:
            out["per_config"] = {k: m.to_json() for k, m in self.per_config.items()}
        return out


@dataclass
class FilterReport:
    skipped_fraction: float
    simulated_speedup: float
    missed_dead_stores: int

    def to_json(self) -> dict:
        return {
            "skipped_fraction": self.skipped_fraction,
            "simulated_speedup": self.simulated_speedup,
            "missed_dead_stores": self.missed_dead_stores,
        }


def filter_report(
    rows: list[tuple[tuple[str, str], int, int]],
    costs: dict[tuple[str, str], int],
) -> FilterReport:
    """Savings from running the exact oracle only on predicted positives.

    rows: (key, oracle label, predicted label) covering the same procedures
    as costs (executed instruction counts).
    """
    missing = [key for key, _, _ in rows if key not in costs]
    if missing:
        raise KeyError(f"costs missing for {missing[:3]} ...")
    total = sum(costs[key] for key, _, _ in rows)
    checked = sum(costs[key] for key, _, pred in rows if pred == 1)
    missed = sum(1 for _, truth, pred in rows if truth == 1 and pred == 0)
    skipped = sum(1 for _, _, pred in rows if pred == 0) / len(rows) if rows else 0.0
    speedup = float("inf") if checked == 0 else total / checked
    return FilterReport(skipped, speedup, missed)


# ---------------------------------------------------------------------------
# Training.
# ---------------------------------------------------------------------------


@dataclass
class TrainHyper:
    lr: float = 1e-4
    batch_size: int = 64
    epochs: int = 50
    patience: int = 5
    seed: int = 0
    optimizer: str = "adam"
    sentinel: bool = False
    w2v_epochs: int = 5
    w2v_window: int = 2
    w2v_negatives: int = 5
    w2v_lr: float = 0.025
    min_count: int = 2

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainedModel:
    config: ModelConfig
    params: ModelParams
    vocab_ins: Vocab
    vocab_val: Vocab
    seed: int
    manifest: dict

    def featurize_records(self, records: list[SampleRecord]) -> list[FeaturizedSample]:
        return [featurize(r, self.vocab_ins, self.vocab_val, self.config) for r in records]


def instruction_corpus(records: list[SampleRecord]) -> list[list[str]]:
    """One sentence per instruction."""
    return [ins for rec in records for block in rec.cfg_nodes for ins in block]


def value_corpus(records: list[SampleRecord]) -> list[list[str]]:
    """One sentence per CCT node, deduplicated by program (samples of the
    same program share a tree)."""
    seen: set[str] = set()
    out: list[list[str]] = []
    for rec in records:
        if rec.program_id in seen:
            continue
        seen.add(rec.program_id)
        for _, tokens in rec.cct_nodes:
            if tokens:
                out.append(tokens)
    return out


def pretrain_tables(
    records: list[SampleRecord], config: ModelConfig, hyper: TrainHyper
) -> tuple[EmbeddingTable, EmbeddingTable]:
    ins_table = train_word2vec(
        instruction_corpus(records),
        dim=config.ins_dim,
        window=hyper.w2v_window,
        negatives=hyper.w2v_negatives,
        epochs=hyper.w2v_epochs,
        lr=hyper.w2v_lr,
        min_count=hyper.min_count,
        seed=hyper.seed,
    )
    val_table = train_word2vec(
        value_corpus(records),
        dim=config.val_dim,
        window=hyper.w2v_window,
        negatives=hyper.w2v_negatives,
        epochs=hyper.w2v_epochs,
        lr=hyper.w2v_lr,
        min_count=hyper.min_count,
        seed=hyper.seed + 101,
    )
    return ins_table, val_table


def _epoch_pass(
    params: ModelParams,
    samples: list[FeaturizedSample],
    order: np.ndarray,
    opt: Optimizer,
    batch_size: int,
) -> float:
    """One training epoch; per-sample passes accumulate gradients up to the
    effective batch, then one optimizer step applies the batch mean."""
    trainable = params.trainable()
    total_loss = 0.0
    for start in range(0, len(order), batch_size):
        batch = order[start : start + batch_size]
        scale = np.float32(1.0 / len(batch))
        for idx in batch:
            fs = samples[idx]
            tape = Tape()
            with tape:
                logit = forward_logit(params, fs)
                label = const(np.array([[fs.label]], dtype=logit.data.dtype))
                sample_loss = binary_cross_entropy(logit, label)
                loss = hadamard(sample_loss, const(scale))
            total_loss += float(sample_loss.data)
            backward(loss, tape)
        opt.step(trainable)
    return total_loss / max(1, len(order))


def _accuracy(params: ModelParams, samples: list[FeaturizedSample]) -> float:
    correct = 0
    for fs in samples:
        logit = forward_logit(params, fs)
        pred = 1 if logit.data[0, 0] > 0.0 else 0
        correct += pred == fs.label
    return correct / len(samples) if samples else 0.0


def train(
    train_records: list[SampleRecord],
    val_records: list[SampleRecord],
    config: ModelConfig,
    hyper: TrainHyper,
    config_tag: str = "",
    generator_version: str = "",
) -> TrainedModel:
    """Pretrain token tables, then optimize the variant end-to-end with BCE,
    early-stopping on validation accuracy.  Deterministic given the seed."""
    labels = {r.label for r in train_records}
    if labels != {0, 1}:
        raise DegenerateDataset(f"training split has classes {sorted(labels)}; need both")

    ins_table, val_table = pretrain_tables(train_records, config, hyper)
    vocab_ins, vocab_val = ins_table.vocab, val_table.vocab

    params = init_model(config, hyper.seed, ins_table, val_table)
    train_fs = [featurize(r, vocab_ins, vocab_val, config) for r in train_records]
    val_fs = [featurize(r, vocab_ins, vocab_val, config) for r in val_records]

    opt = Optimizer(hyper.optimizer, hyper.lr)
    rng = np.random.default_rng(hyper.seed + 7)
    history_loss: list[float] = []
    history_val: list[float] = []
    best_val = -1.0
    best_arrays: dict[str, np.ndarray] | None = None
    best_opt: tuple[dict[str, np.ndarray], int] | None = None
    stale = 0

    set_sentinel(hyper.sentinel)
    try:
        for epoch in range(hyper.epochs):
            order = rng.permutation(len(train_fs))
            mean_loss = _epoch_pass(params, train_fs, order, opt, hyper.batch_size)
            history_loss.append(mean_loss)
            val_acc = _accuracy(params, val_fs) if val_fs else 1.0 - mean_loss
            history_val.append(val_acc)
            if val_acc > best_val:
                best_val = val_acc
                best_arrays = {k: v.copy() for k, v in params.arrays().items()}
                best_opt = (
                    {k: v.copy() for k, v in opt.state_arrays().items()},
                    opt.step_count,
                )
                stale = 0
            else:
                stale += 1
                if stale > hyper.patience:
                    break
    finally:
        set_sentinel(False)

    if best_arrays is not None:
        load_into(params, best_arrays)

    manifest = {
        "model": config.to_json(),
        "hyper": hyper.to_json(),
        "config_tag": config_tag,
        GENERATOR_VERSION_KEY: generator_version,
        "vocab_ins": vocab_ins.id_to_token,
        "vocab_val": vocab_val.id_to_token,
        "history": {"train_loss": history_loss, "val_accuracy": history_val},
        "best_val_accuracy": best_val,
        "opt_step": best_opt[1] if best_opt else 0,
        "opt_kind": hyper.optimizer,
    }
    trained = TrainedModel(config, params, vocab_ins, vocab_val, hyper.seed, manifest)
    trained._opt_arrays = best_opt[0] if best_opt else {}  # type: ignore[attr-defined]
    return trained


def save_model(path: str, trained: TrainedModel) -> None:
    opt_arrays = getattr(trained, "_opt_arrays", {})
    save_checkpoint(path, trained.params.arrays(), opt_arrays, trained.seed, trained.manifest)


def load_model(path: str) -> TrainedModel:
    arrays, opt_arrays, seed, manifest = load_checkpoint(path)
    config = ModelConfig.from_json(manifest["model"])
    vocab_ins = _vocab_from_tokens(manifest["vocab_ins"])
    vocab_val = _vocab_from_tokens(manifest["vocab_val"])
    params = init_model(
        config, seed,
        vocab_ins_size=len(vocab_ins), vocab_val_size=len(vocab_val),
    )
    load_into(params, arrays)
    trained = TrainedModel(config, params, vocab_ins, vocab_val, seed, manifest)
    trained._opt_arrays = opt_arrays  # type: ignore[attr-defined]
    return trained


def _vocab_from_tokens(tokens: list[str]) -> Vocab:
    return Vocab({t: i for i, t in enumerate(tokens)}, list(tokens),
                 np.zeros(len(tokens), dtype=np.int64), 0)


# ---------------------------------------------------------------------------
# Evaluation.
# ---------------------------------------------------------------------------


def predict_labels(
    trained: TrainedModel, records: list[SampleRecord], threshold: float = 0.5
) -> list[int]:
    out = []
    for fs in trained.featurize_records(records):
        logit = float(forward_logit(trained.params, fs).data[0, 0])
        prob = 1.0 / (1.0 + np.exp(-logit))
        out.append(1 if prob > threshold else 0)
    return out


def evaluate(trained: TrainedModel, records: list[SampleRecord]) -> Metrics:
    """Threshold-0.5 confusion counts plus per-config breakdown when the
    split carries several config tags."""
    predicted = predict_labels(trained, records)
    truth = [r.label for r in records]
    metrics = Metrics.from_pairs(truth, predicted)
    tags = {r.config for r in records}
    if len(tags) > 1:
        per = {}
        for tag in sorted(tags):
            idx = [i for i, r in enumerate(records) if r.config == tag]
            per[tag] = Metrics.from_pairs([truth[i] for i in idx], [predicted[i] for i in idx])
        metrics.per_config = per
    return metrics


def evaluation_rows(
    trained: TrainedModel, records: list[SampleRecord]
) -> list[tuple[tuple[str, str], int, int]]:
    predicted = predict_labels(trained, records)
    return [(r.key, r.label, p) for r, p in zip(records, predicted)]
