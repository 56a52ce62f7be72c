"""Labeled per-procedure sample records and their JSON-lines persistence.

One record per (program, procedure): surface-token CFG, kind-erased
adjacency, the program's calling-context tree with per-node value tokens,
the oracle label, and the procedure's executed-instruction cost.  Files are
gzip-compressed JSONL with a sidecar manifest (docs/formats.md).
"""

from __future__ import annotations

import gzip
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SampleRecord:
    program_id: str
    proc: str
    config: str
    label: int
    cfg_nodes: list[list[list[str]]]  # per block, per instruction, token texts
    cfg_edges: list[tuple[int, int, str]]
    adj: list[list[int]]
    cct_nodes: list[tuple[str, list[str]]]  # (procedure, flattened value tokens)
    cct_edges: list[tuple[int, int]]
    cost: int = 0

    @property
    def key(self) -> tuple[str, str]:
        return (self.program_id, self.proc)

    def to_json(self) -> str:
        return json.dumps(
            {
                "program": self.program_id,
                "proc": self.proc,
                "config": self.config,
                "label": self.label,
                "cfg": {
                    "nodes": self.cfg_nodes,
                    "edges": [[s, d, k] for s, d, k in self.cfg_edges],
                },
                "adj": self.adj,
                "cct": {
                    "nodes": [{"proc": p, "tokens": t} for p, t in self.cct_nodes],
                    "edges": [[a, b] for a, b in self.cct_edges],
                },
                "cost": self.cost,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "SampleRecord":
        obj = json.loads(line)
        return cls(
            program_id=obj["program"],
            proc=obj["proc"],
            config=obj["config"],
            label=int(obj["label"]),
            cfg_nodes=obj["cfg"]["nodes"],
            cfg_edges=[(e[0], e[1], e[2]) for e in obj["cfg"]["edges"]],
            adj=obj["adj"],
            cct_nodes=[(n["proc"], n["tokens"]) for n in obj["cct"]["nodes"]],
            cct_edges=[(e[0], e[1]) for e in obj["cct"]["edges"]],
            cost=int(obj.get("cost", 0)),
        )


@dataclass
class DatasetSplit:
    config: str
    train: list[SampleRecord]
    val: list[SampleRecord]
    test: list[SampleRecord]

    def roles(self) -> dict[str, list[SampleRecord]]:
        return {"train": self.train, "val": self.val, "test": self.test}

    def class_ratio(self, role: str) -> float:
        recs = self.roles()[role]
        return sum(r.label for r in recs) / len(recs) if recs else 0.0


def _atomic_bytes(path: str, blob: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_records(path: str, records: list[SampleRecord]) -> None:
    """Gzip JSONL; mtime pinned to zero so identical data is byte-identical."""
    import io

    buf = io.BytesIO()
    with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
        for rec in records:
            gz.write(rec.to_json().encode("utf-8"))
            gz.write(b"\n")
    _atomic_bytes(path, buf.getvalue())


def load_records(path: str) -> list[SampleRecord]:
    with gzip.open(path, "rt", encoding="utf-8") as fh:
        return [SampleRecord.from_json(line) for line in fh if line.strip()]


def save_split(directory: str, split: DatasetSplit, manifest_extra: dict) -> None:
    os.makedirs(directory, exist_ok=True)
    counts = {}
    for role, recs in split.roles().items():
        save_records(os.path.join(directory, f"{role}.jsonl.gz"), recs)
        pos = sum(r.label for r in recs)
        counts[role] = {"total": len(recs), "positive": pos, "negative": len(recs) - pos}
    manifest = {"config": split.config, "counts": counts}
    manifest.update(manifest_extra)
    _atomic_bytes(
        os.path.join(directory, "manifest.json"),
        (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"),
    )


def load_split(directory: str) -> tuple[DatasetSplit, dict]:
    with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    split = DatasetSplit(
        config=manifest["config"],
        train=load_records(os.path.join(directory, "train.jsonl.gz")),
        val=load_records(os.path.join(directory, "val.jsonl.gz")),
        test=load_records(os.path.join(directory, "test.jsonl.gz")),
    )
    return split, manifest
