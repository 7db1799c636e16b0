"""Scoring, annotation audits, and the data-map export.

Scoring is exact-match micro P/R/F1 over (start, end, type) triples,
the usual span-level protocol.  The audit compares a distant annotation
layer against gold per class: how many annotations exist, how many are
exactly right, and how many false annotations (wrong or missing spans)
remain — the before/after table a cleaning run is judged by.

The data map plots each sample's probability variability (x) against
its mean probability (y), colored by mean-margin tercile, and writes a
CSV with the raw values alongside the SVG.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .corpus import LabelSet, Span, SpanDataset
from .dynamics import DynamicsRecord
from .errors import DataError

log = logging.getLogger(__name__)

DATAMAP_HEADER = "sentence_id,start,end,label,aum,confidence,variability,is_positive"

# mean-margin terciles, low to high: low margins flag likely mislabels
TERCILE_COLORS = ("#c44e52", "#dd8452", "#55a868")
TERCILE_NAMES = ("low", "mid", "high")


@dataclass(frozen=True)
class SpanScore:
    """Exact-match counts with the derived ratios (0 when undefined)."""

    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "SpanScore") -> "SpanScore":
        return SpanScore(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def score_spans(
    predicted: Sequence[Iterable[Span]],
    gold: Sequence[Iterable[Span]],
    label_set: LabelSet,
) -> tuple[SpanScore, dict[str, SpanScore]]:
    """Micro score plus per-class breakdown over aligned sentence lists.

    A prediction is a true positive iff the identical (start, end, type)
    span is in that sentence's gold set; set semantics mean each gold
    span can match at most one prediction.
    """
    if len(predicted) != len(gold):
        raise ValueError(
            f"predicted and gold cover different corpora: {len(predicted)} vs {len(gold)} sentences"
        )
    micro = SpanScore()
    per_class = {name: SpanScore() for name in label_set.entity_types}
    for pred_spans, gold_spans in zip(predicted, gold):
        p_set, g_set = set(pred_spans), set(gold_spans)
        for name in label_set.entity_types:
            idx = label_set.index(name)
            p_cls = {s for s in p_set if s.label == idx}
            g_cls = {s for s in g_set if s.label == idx}
            tp = len(p_cls & g_cls)
            per_class[name] += SpanScore(tp, len(p_cls) - tp, len(g_cls) - tp)
        tp = len(p_set & g_set)
        micro += SpanScore(tp, len(p_set) - tp, len(g_set) - tp)
    return micro, per_class


def score_datasets(
    predicted: SpanDataset, gold: SpanDataset
) -> tuple[SpanScore, dict[str, SpanScore]]:
    """Score ``predicted.distant_spans`` against ``gold``'s gold layer."""
    if predicted.label_set != gold.label_set:
        raise ValueError("datasets use different label sets; impose one when parsing")
    gold_layers = []
    for sid, sent in enumerate(gold.sentences):
        if sent.gold_spans is None:
            raise DataError(f"sentence {sid} of the reference corpus has no gold annotations")
        gold_layers.append(sent.gold_spans)
    pred_layers = [sent.distant_spans for sent in predicted.sentences]
    return score_spans(pred_layers, gold_layers, predicted.label_set)


@dataclass(frozen=True)
class AuditRow:
    """Per-class audit: annotation count, exact hits, false annotations.

    ``false_annotations`` counts both wrong annotations of the class and
    gold spans of the class the annotation layer missed.
    """

    positives: int
    true_positives: int
    false_annotations: int


def audit_noise(dataset: SpanDataset) -> dict[str, AuditRow]:
    """Compare the distant layer against embedded gold, per class."""
    c = dataset.label_set
    positives = {name: 0 for name in c.entity_types}
    true_pos = {name: 0 for name in c.entity_types}
    false_ann = {name: 0 for name in c.entity_types}
    for sid, sent in enumerate(dataset.sentences):
        if sent.gold_spans is None:
            raise DataError(f"sentence {sid} has no gold annotations to audit against")
        d_set, g_set = set(sent.distant_spans), set(sent.gold_spans)
        for span in d_set:
            name = c.name(span.label)
            positives[name] += 1
            if span in g_set:
                true_pos[name] += 1
            else:
                false_ann[name] += 1
        for span in g_set - d_set:
            false_ann[c.name(span.label)] += 1
    return {
        name: AuditRow(positives[name], true_pos[name], false_ann[name])
        for name in c.entity_types
    }


# ---------------------------------------------------------------------------
# Data map


def _format_float(v: float) -> str:
    return repr(float(v))


def export_datamap(
    records: Mapping[tuple, DynamicsRecord] | Iterable[DynamicsRecord],
    out_dir: str,
    stem: str = "datamap",
) -> tuple[str, str]:
    """Write ``<stem>.csv`` and ``<stem>.svg`` under ``out_dir``.

    One CSV row per finalized record, sorted by sample key, floats at
    full round-trip precision.  The scatter puts variability on x,
    confidence on y, and colors points by mean-margin tercile.  Output
    is byte-stable for identical records.
    """
    recs = list(records.values() if isinstance(records, Mapping) else records)
    recs.sort(key=lambda r: r.key)
    for rec in recs:
        if rec.aum is None or rec.confidence is None or rec.variability is None:
            raise ValueError(f"record {rec.key} is not finalized")

    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    svg_path = os.path.join(out_dir, f"{stem}.svg")

    lines = [DATAMAP_HEADER]
    for r in recs:
        lines.append(
            ",".join(
                [
                    str(r.sentence_id),
                    str(r.start),
                    str(r.end),
                    str(r.assigned_label),
                    _format_float(r.aum),
                    _format_float(r.confidence),
                    _format_float(r.variability),
                    "1" if r.is_positive else "0",
                ]
            )
        )
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    _render_scatter(recs, svg_path)
    log.info("data map: %d samples -> %s, %s", len(recs), csv_path, svg_path)
    return csv_path, svg_path


def _tercile_edges(values: list[float]) -> tuple[float, float]:
    ordered = sorted(values)
    n = len(ordered)
    lo = ordered[max(0, -(-n // 3) - 1)]
    hi = ordered[max(0, -(-2 * n // 3) - 1)]
    return lo, hi


def _render_scatter(recs: list[DynamicsRecord], svg_path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with plt.rc_context({"svg.hashsalt": "spanclean"}):
        fig, ax = plt.subplots(figsize=(6.0, 5.0))
        try:
            if recs:
                lo, hi = _tercile_edges([r.aum for r in recs])
                buckets: list[list[DynamicsRecord]] = [[], [], []]
                for r in recs:
                    buckets[0 if r.aum <= lo else (1 if r.aum <= hi else 2)].append(r)
                for bucket, color, name in zip(buckets, TERCILE_COLORS, TERCILE_NAMES):
                    if not bucket:
                        continue
                    ax.scatter(
                        [r.variability for r in bucket],
                        [r.confidence for r in bucket],
                        s=9,
                        alpha=0.6,
                        linewidths=0,
                        color=color,
                        label=f"{name} mean margin",
                    )
                ax.legend(loc="lower right", fontsize=8)
            ax.set_xlabel("variability")
            ax.set_ylabel("confidence")
            ax.set_xlim(left=0.0)
            ax.set_ylim(0.0, 1.0)
            fig.savefig(svg_path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)


def load_datamap(path: str) -> list[dict]:
    """Read a data-map CSV back into dicts with exact float values."""
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or lines[0] != DATAMAP_HEADER:
        raise DataError(f"{path}: missing or unexpected data-map header")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line == "":
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise DataError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        try:
            rows.append(
                {
                    "sentence_id": int(parts[0]),
                    "start": int(parts[1]),
                    "end": int(parts[2]),
                    "label": int(parts[3]),
                    "aum": float(parts[4]),
                    "confidence": float(parts[5]),
                    "variability": float(parts[6]),
                    "is_positive": parts[7] == "1",
                }
            )
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed numeric field") from None
    return rows
