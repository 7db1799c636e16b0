"""Per-sample training dynamics: margins across epochs and their aggregates.

After every training epoch an eval-mode snapshot scores every enumerated
sample — including negatives the batch selection skipped, since the
cleaning step filters those too.  Each sample accumulates its per-epoch
margin (assigned-class logit minus best other logit) and assigned-class
probability.  Finalizing computes, per sample:

* ``aum``: the mean margin across epochs — low values flag samples the
  model kept disagreeing with, i.e. likely mislabeled;
* ``confidence``: the mean assigned-class probability;
* ``variability``: the population standard deviation (divide by the
  epoch count, not E−1) of that probability.

Dumps are one JSON record per line, sorted by sample key, with floats
serialized at full round-trip precision.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import SpanDataset
from .errors import DataError
from .model import ModelConfig, SpanClassifierParams, Vocab, eval_logits

Key = tuple[int, int, int]


def margin(logits: np.ndarray, assigned_label: int) -> float:
    """Assigned-class logit minus the largest competing logit."""
    z = np.asarray(logits)
    if z.ndim != 1 or z.shape[0] < 2:
        raise ValueError("margin needs a 1-D logit vector with at least 2 classes")
    if not 0 <= assigned_label < z.shape[0]:
        raise ValueError(f"assigned_label {assigned_label} out of range for {z.shape[0]} classes")
    others = np.delete(z, assigned_label)
    return float(z[assigned_label] - others.max())


def _batch_margins(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Row-wise margin for a (n, K) logit matrix."""
    chosen = logits[np.arange(len(labels)), labels]
    masked = logits.copy()
    masked[np.arange(len(labels)), labels] = -np.inf
    return chosen - masked.max(axis=1)


@dataclass
class DynamicsRecord:
    """One sample's trajectory; aggregates are None until finalized."""

    sentence_id: int
    start: int
    end: int
    assigned_label: int
    margins: list[float] = field(default_factory=list)
    probs: list[float] = field(default_factory=list)
    logits: list[list[float]] | None = None
    aum: float | None = None
    confidence: float | None = None
    variability: float | None = None

    @property
    def key(self) -> Key:
        return (self.sentence_id, self.start, self.end)

    @property
    def is_positive(self) -> bool:
        return self.assigned_label > 0


class DynamicsLog:
    """Accumulates snapshots for one training run.

    Records are created on the first snapshot, one per enumerated
    sample, and every later snapshot must cover exactly the same keys.
    """

    def __init__(self, store_logits: bool = False):
        self.records: dict[Key, DynamicsRecord] = {}
        self.epochs = 0
        self.store_logits = store_logits

    def __len__(self) -> int:
        return len(self.records)

    def snapshot_epoch(
        self,
        dataset: SpanDataset,
        params: SpanClassifierParams,
        config: ModelConfig,
        vocab: Vocab,
    ) -> None:
        """Score every sample in eval mode and append one epoch of values."""
        logits = eval_logits(dataset, params, config, vocab)
        labels = np.array([s.assigned_label for s in dataset.samples], dtype=np.intp)
        if config.num_classes < 2:
            raise ValueError("snapshots need at least 2 classes")
        margins = _batch_margins(logits, labels)
        shifted = logits - logits.max(axis=1, keepdims=True)
        probs_all = np.exp(shifted)
        probs_all /= probs_all.sum(axis=1, keepdims=True)
        probs = probs_all[np.arange(len(labels)), labels]

        if self.epochs == 0 and not self.records:
            for s in dataset.samples:
                self.records[s.key] = DynamicsRecord(
                    s.sentence_id, s.start, s.end, s.assigned_label,
                    logits=[] if self.store_logits else None,
                )
        elif {s.key for s in dataset.samples} != set(self.records):
            raise ValueError("snapshot sample set differs from the recorded one")

        for i, s in enumerate(dataset.samples):
            rec = self.records[s.key]
            rec.margins.append(float(margins[i]))
            rec.probs.append(float(probs[i]))
            if self.store_logits:
                rec.logits.append([float(v) for v in logits[i]])
        self.epochs += 1

    def finalize(self) -> dict[Key, DynamicsRecord]:
        """Fill aum/confidence/variability on every record and return them."""
        if self.epochs < 1:
            raise ValueError("cannot finalize before any snapshot")
        e = self.epochs
        for rec in self.records.values():
            if len(rec.margins) != e or len(rec.probs) != e:
                raise ValueError(f"record {rec.key} has {len(rec.margins)} epochs, expected {e}")
            rec.aum = sum(rec.margins) / e
            mu = sum(rec.probs) / e
            rec.confidence = mu
            rec.variability = math.sqrt(sum((p - mu) ** 2 for p in rec.probs) / e)
        return self.records

    def to_jsonl(self) -> str:
        """Serialize finalized records, sorted by sample key."""
        lines = []
        for key in sorted(self.records):
            rec = self.records[key]
            obj = {
                "sentence_id": rec.sentence_id,
                "start": rec.start,
                "end": rec.end,
                "assigned_label": rec.assigned_label,
                "margins": rec.margins,
                "probs": rec.probs,
                "aum": rec.aum,
                "confidence": rec.confidence,
                "variability": rec.variability,
            }
            if rec.logits is not None:
                obj["logits"] = rec.logits
            lines.append(json.dumps(obj, ensure_ascii=False, separators=(", ", ": ")))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str) -> "DynamicsLog":
        log = cls()
        epochs = None
        for lineno, line in enumerate(text.splitlines(), start=1):
            if line.strip() == "":
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON record: {exc}") from None
            try:
                rec = DynamicsRecord(
                    sentence_id=int(obj["sentence_id"]),
                    start=int(obj["start"]),
                    end=int(obj["end"]),
                    assigned_label=int(obj["assigned_label"]),
                    margins=[float(v) for v in obj["margins"]],
                    probs=[float(v) for v in obj["probs"]],
                    logits=obj.get("logits"),
                    aum=obj.get("aum"),
                    confidence=obj.get("confidence"),
                    variability=obj.get("variability"),
                )
            except (KeyError, TypeError, ValueError):
                raise DataError(f"line {lineno}: malformed dynamics record") from None
            if len(rec.margins) != len(rec.probs):
                raise DataError(f"line {lineno}: margins/probs length mismatch")
            if epochs is None:
                epochs = len(rec.margins)
            elif len(rec.margins) != epochs:
                raise DataError(f"line {lineno}: inconsistent epoch count")
            if rec.key in log.records:
                raise DataError(f"line {lineno}: duplicate sample key {rec.key}")
            log.records[rec.key] = rec
        log.epochs = epochs or 0
        log.store_logits = any(r.logits is not None for r in log.records.values())
        return log
