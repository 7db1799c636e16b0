"""End-to-end cleaning: probe run, main run, filter, report.

The pipeline trains the span classifier twice.  The first run adds a
fake extra class, relabels a stratified probe sample to it, and turns
the probes' mean margins into per-polarity cutoffs.  The second run
trains fresh parameters on the untouched dataset and records every
sample's mean margin; samples below their polarity's cutoff are
removed.  Removed unlabeled spans are masked out of future supervision,
removed annotations are deleted from the sentence (and masked too by
default, since a span we just distrusted should not silently become a
confident negative).

``run_cleaning`` returns the cleaned dataset plus a report whose
serialized form is byte-stable for a given config and seed; wall-clock
timings live next to the report, not inside it, so repeat runs can be
compared file-for-file.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, fields, replace
from typing import Mapping

from .corpus import Span, SpanDataset, enumerate_samples, write_spans
from .dynamics import DynamicsLog, DynamicsRecord, Key
from .errors import ConfigError, DataError, NumericError
from .evaluation import AuditRow, SpanScore, audit_noise, score_spans
from .model import (
    ModelConfig,
    SpanClassifierParams,
    TrainConfig,
    Vocab,
    predict_spans,
    train_model,
)
from .thresholding import ThresholdPair, build_threshold_dataset, estimate_thresholds

log = logging.getLogger(__name__)

CLEANED_NAME = "cleaned.jsonl"
REPORT_NAME = "report.json"
THRESHOLDS_NAME = "thresholds.json"
PROBE_DYNAMICS_NAME = "dynamics-threshold.jsonl"
MAIN_DYNAMICS_NAME = "dynamics-main.jsonl"
TIMINGS_NAME = "timings.json"


@dataclass(frozen=True)
class CleaningConfig:
    """Everything a cleaning run depends on, in one serializable place."""

    model: ModelConfig
    epochs: int = 10
    lr: float = 1e-3
    batch_sentences: int = 16
    k_pos: float = 100.0
    k_neg: float = 90.0
    use_top_negatives: bool = False
    neg_fraction: float = 0.05
    seed: int = 0
    mask_removed_positives: bool = True
    store_logits: bool = False
    # test hooks: force a cutoff instead of the estimated one
    tau_pos_override: float | None = None
    tau_neg_override: float | None = None

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_sentences < 1:
            raise ConfigError("batch_sentences must be >= 1")
        for name in ("k_pos", "k_neg"):
            if not 0.0 < getattr(self, name) <= 100.0:
                raise ConfigError(f"{name} must be a percentile in (0, 100]")
        if not 0.0 < self.neg_fraction <= 1.0:
            raise ConfigError("neg_fraction must be in (0, 1]")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.to_dict() if f.name == "model" else value
        return out


@dataclass(frozen=True)
class CleaningReport:
    """What a cleaning run decided and why, plus reconciliation counts."""

    thresholds: ThresholdPair
    counts: dict
    removed_by_class: dict[str, int]
    removed_keys: dict[str, list[Key]]
    noise_identification: dict | None
    audit_before: dict[str, AuditRow] | None
    audit_after: dict[str, AuditRow] | None
    config_echo: dict
    timings: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        """Deterministic rendering; timings are deliberately left out."""

        def audit_dict(rows):
            if rows is None:
                return None
            return {
                name: {
                    "positives": r.positives,
                    "true_positives": r.true_positives,
                    "false_annotations": r.false_annotations,
                }
                for name, r in rows.items()
            }

        payload = {
            "thresholds": json.loads(self.thresholds.to_json()),
            "counts": self.counts,
            "removed_by_class": self.removed_by_class,
            "removed_keys": {
                polarity: [list(k) for k in keys]
                for polarity, keys in self.removed_keys.items()
            },
            "noise_identification": self.noise_identification,
            "audit_before": audit_dict(self.audit_before),
            "audit_after": audit_dict(self.audit_after),
            "config": self.config_echo,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def summary_lines(self) -> list[str]:
        pos, neg = self.counts["positives"], self.counts["negatives"]
        lines = [
            f"thresholds: tau_pos={self.thresholds.tau_pos:.6f} "
            f"tau_neg={self.thresholds.tau_neg:.6f} "
            f"(k_pos={self.thresholds.k_pos:g}, k_neg={self.thresholds.k_neg:g})",
            f"positives: kept {pos['kept']}/{pos['total']}, removed {pos['removed']}",
            f"negatives: kept {neg['kept']}/{neg['total']}, removed {neg['removed']}",
        ]
        if self.noise_identification is not None:
            for polarity in ("positives", "negatives"):
                d = self.noise_identification[polarity]
                lines.append(
                    f"noise id ({polarity}): precision {d['precision']:.3f} "
                    f"recall {d['recall']:.3f} ({d['overlap']}/{d['flagged']} flagged, "
                    f"{d['noisy']} truly noisy)"
                )
        return lines


def _train_config(config: CleaningConfig) -> TrainConfig:
    return TrainConfig(
        epochs=config.epochs,
        lr=config.lr,
        batch_sentences=config.batch_sentences,
        neg_fraction=config.neg_fraction if config.use_top_negatives else None,
    )


def _check_finite_dynamics(records: Mapping[Key, DynamicsRecord], run_name: str) -> None:
    bad = sorted(k for k, r in records.items() if not math.isfinite(r.aum))
    if bad:
        shown = ", ".join(map(str, bad[:5]))
        raise NumericError(
            f"{run_name} run produced non-finite mean margins for {len(bad)} "
            f"samples (first: {shown}); lower the learning rate or check the corpus"
        )


def _record_dynamics(
    dataset: SpanDataset,
    model_config: ModelConfig,
    config: CleaningConfig,
    vocab: Vocab,
) -> DynamicsLog:
    """One fresh training run with a per-epoch dynamics snapshot."""
    dyn = DynamicsLog(store_logits=config.store_logits)

    def snapshot(epoch: int, params: SpanClassifierParams) -> None:
        dyn.snapshot_epoch(dataset, params, model_config, vocab)

    train_model(
        dataset,
        model_config,
        _train_config(config),
        seed=config.seed,
        vocab=vocab,
        epoch_callback=snapshot,
    )
    dyn.finalize()
    return dyn


def apply_filter(
    dataset: SpanDataset,
    records: Mapping[Key, DynamicsRecord],
    thresholds: ThresholdPair,
    max_width: int,
    mask_removed_positives: bool = True,
) -> tuple[SpanDataset, list[Key], list[Key]]:
    """Keep samples whose mean margin clears their polarity's cutoff.

    Pure function of its inputs.  Returns the rebuilt dataset plus the
    removed positive and negative keys; the boundary case ``aum == tau``
    is kept.  Every decision is re-checked against the predicate before
    returning.
    """
    removed_pos: list[Key] = []
    removed_neg: list[Key] = []
    kept_keys: set[Key] = set()
    spans_to_delete: dict[int, set[Span]] = {}
    new_masks: set[Key] = set()

    for sample in dataset.samples:
        rec = records.get(sample.key)
        if rec is None:
            raise ValueError(f"no dynamics record for sample {sample.key}")
        tau = thresholds.tau_pos if sample.is_positive else thresholds.tau_neg
        if rec.aum >= tau:
            kept_keys.add(sample.key)
            continue
        sid, start, end = sample.key
        if sample.is_positive:
            removed_pos.append(sample.key)
            spans_to_delete.setdefault(sid, set()).add(
                Span(start, end, sample.assigned_label)
            )
            if mask_removed_positives:
                new_masks.add(sample.key)
        else:
            removed_neg.append(sample.key)
            new_masks.add(sample.key)

    new_sentences = []
    for sid, sent in enumerate(dataset.sentences):
        doomed = spans_to_delete.get(sid)
        if doomed:
            sent = replace(
                sent,
                distant_spans=tuple(s for s in sent.distant_spans if s not in doomed),
            )
        new_sentences.append(sent)

    cleaned = enumerate_samples(
        SpanDataset(
            label_set=dataset.label_set,
            sentences=tuple(new_sentences),
            mask_list=frozenset(dataset.mask_list | new_masks),
        ),
        max_width=max_width,
    )

    # exhaustive re-check: removal must be exactly the < predicate, and
    # the cleaned sample set must be the kept set (plus freed spans that
    # become ordinary negatives when masking removed annotations is off)
    removed_set = set(removed_pos) | set(removed_neg)
    for sample in dataset.samples:
        below = records[sample.key].aum < (
            thresholds.tau_pos if sample.is_positive else thresholds.tau_neg
        )
        if below != (sample.key in removed_set):
            raise RuntimeError(f"filter predicate violated for sample {sample.key}")
    cleaned_keys = {s.key for s in cleaned.samples}
    if mask_removed_positives:
        if cleaned_keys != kept_keys:
            raise RuntimeError("cleaned dataset does not re-enumerate to the kept samples")
    else:
        extra = cleaned_keys - kept_keys
        if not extra <= set(removed_pos) or kept_keys - cleaned_keys:
            raise RuntimeError("cleaned dataset diverges from the kept samples")

    return cleaned, sorted(removed_pos), sorted(removed_neg)


def _gold_available(dataset: SpanDataset) -> bool:
    return all(sent.gold_spans is not None for sent in dataset.sentences)


def noisy_sample_keys(dataset: SpanDataset) -> tuple[set[Key], set[Key]]:
    """Which enumerated samples carry a wrong label, per the gold layer.

    A positive sample is noisy when its exact (start, end, label) span is
    not in gold; a negative sample is noisy when gold marks an entity of
    any type at exactly its boundaries.
    """
    noisy_pos: set[Key] = set()
    noisy_neg: set[Key] = set()
    for sample in dataset.samples:
        sid, start, end = sample.key
        gold = dataset.sentences[sid].gold_spans
        if gold is None:
            raise DataError(f"sentence {sid} has no gold annotations")
        if sample.is_positive:
            if Span(start, end, sample.assigned_label) not in gold:
                noisy_pos.add(sample.key)
        else:
            if any(g.start == start and g.end == end for g in gold):
                noisy_neg.add(sample.key)
    return noisy_pos, noisy_neg


def _identification_stats(flagged: list[Key], noisy: set[Key]) -> dict:
    overlap = len(noisy.intersection(flagged))
    return {
        "flagged": len(flagged),
        "noisy": len(noisy),
        "overlap": overlap,
        "precision": overlap / len(flagged) if flagged else 0.0,
        "recall": overlap / len(noisy) if noisy else 0.0,
    }


def run_cleaning(
    dataset: SpanDataset, config: CleaningConfig
) -> tuple[SpanDataset, CleaningReport, DynamicsLog, DynamicsLog]:
    """Probe run, main run, filter; returns (cleaned, report, probe dyn, main dyn)."""
    if not dataset.samples:
        raise ConfigError("dataset has no enumerated samples; run enumerate_samples first")
    c = dataset.label_set.num_types
    if config.model.num_classes != c + 1:
        raise ConfigError(
            f"model num_classes {config.model.num_classes} != {c + 1} "
            f"(entity types + non-entity)"
        )

    vocab = Vocab.build(dataset.sentences)
    if config.model.vocab_size != len(vocab):
        raise ConfigError(
            f"model vocab_size {config.model.vocab_size} != corpus vocabulary {len(vocab)}"
        )
    timings: dict[str, float] = {}
    t0 = time.perf_counter()

    # probe run: one extra class, probe samples relabeled to it
    probe_ds, plan = build_threshold_dataset(dataset, config.seed)
    probe_model = replace(config.model, num_classes=c + 2)
    probe_dyn = _record_dynamics(probe_ds, probe_model, config, vocab)
    _check_finite_dynamics(probe_dyn.records, "threshold")
    thresholds = estimate_thresholds(
        probe_dyn.records, plan, config.k_pos, config.k_neg, config.epochs
    )
    if config.tau_pos_override is not None:
        thresholds = replace(thresholds, tau_pos=config.tau_pos_override)
    if config.tau_neg_override is not None:
        thresholds = replace(thresholds, tau_neg=config.tau_neg_override)
    timings["threshold_run"] = time.perf_counter() - t0
    log.info(
        "thresholds: tau_pos=%.6f tau_neg=%.6f over %d probes",
        thresholds.tau_pos,
        thresholds.tau_neg,
        plan.quota_total * 2,
    )

    # main run: fresh parameters, original labels
    t1 = time.perf_counter()
    main_dyn = _record_dynamics(dataset, config.model, config, vocab)
    _check_finite_dynamics(main_dyn.records, "main")
    timings["main_run"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    width = dataset.max_width if dataset.max_width is not None else config.model.max_width
    cleaned, removed_pos, removed_neg = apply_filter(
        dataset,
        main_dyn.records,
        thresholds,
        max_width=width,
        mask_removed_positives=config.mask_removed_positives,
    )
    timings["filter"] = time.perf_counter() - t2

    positives = [s for s in dataset.samples if s.is_positive]
    negatives = [s for s in dataset.samples if not s.is_positive]
    counts = {
        "total_samples": len(dataset.samples),
        "positives": {
            "total": len(positives),
            "removed": len(removed_pos),
            "kept": len(positives) - len(removed_pos),
        },
        "negatives": {
            "total": len(negatives),
            "removed": len(removed_neg),
            "kept": len(negatives) - len(removed_neg),
        },
    }
    by_sample = {s.key: s for s in dataset.samples}
    removed_by_class = {name: 0 for name in dataset.label_set.entity_types}
    for key in removed_pos:
        removed_by_class[dataset.label_set.name(by_sample[key].assigned_label)] += 1

    noise_identification = None
    audit_before = audit_after = None
    if _gold_available(dataset):
        noisy_pos, noisy_neg = noisy_sample_keys(dataset)
        noise_identification = {
            "positives": _identification_stats(removed_pos, noisy_pos),
            "negatives": _identification_stats(removed_neg, noisy_neg),
        }
        audit_before = audit_noise(dataset)
        audit_after = audit_noise(cleaned)

    timings["total"] = time.perf_counter() - t0
    report = CleaningReport(
        thresholds=thresholds,
        counts=counts,
        removed_by_class=removed_by_class,
        removed_keys={"positives": removed_pos, "negatives": removed_neg},
        noise_identification=noise_identification,
        audit_before=audit_before,
        audit_after=audit_after,
        config_echo=config.to_dict(),
        timings=timings,
    )
    return cleaned, report, probe_dyn, main_dyn


def train_final(
    dataset: SpanDataset,
    config: CleaningConfig,
    eval_dataset: SpanDataset | None = None,
) -> tuple[SpanClassifierParams, Vocab, tuple[SpanScore, dict[str, SpanScore]] | None]:
    """Train on the (cleaned) samples; optionally score on a gold split."""
    if not dataset.samples:
        raise ConfigError("dataset has no enumerated samples; run enumerate_samples first")
    if not any(s.is_positive for s in dataset.samples):
        raise ConfigError("no positive samples left to train on")
    for sample in dataset.samples:
        if sample.key in dataset.mask_list:
            raise RuntimeError(f"masked span {sample.key} leaked into the sample set")

    params, vocab, _ = train_model(
        dataset,
        config.model,
        _train_config(config),
        seed=config.seed,
        vocab=None,
    )
    scores = None
    if eval_dataset is not None:
        predicted = [
            predict_spans(sent, params, config.model, vocab)
            for sent in eval_dataset.sentences
        ]
        gold_layers = []
        for sid, sent in enumerate(eval_dataset.sentences):
            if sent.gold_spans is None:
                raise DataError(f"evaluation sentence {sid} has no gold annotations")
            gold_layers.append(sent.gold_spans)
        scores = score_spans(predicted, gold_layers, eval_dataset.label_set)
    return params, vocab, scores


def write_run_artifacts(
    out_dir: str,
    cleaned: SpanDataset,
    report: CleaningReport,
    probe_dyn: DynamicsLog,
    main_dyn: DynamicsLog,
) -> dict[str, str]:
    """Write the run directory; returns {artifact name: path}."""
    os.makedirs(out_dir, exist_ok=True)
    artifacts = {
        CLEANED_NAME: write_spans(cleaned),
        REPORT_NAME: report.to_json(),
        THRESHOLDS_NAME: report.thresholds.to_json(),
        PROBE_DYNAMICS_NAME: probe_dyn.to_jsonl(),
        MAIN_DYNAMICS_NAME: main_dyn.to_jsonl(),
        TIMINGS_NAME: json.dumps(report.timings, sort_keys=True, indent=2) + "\n",
    }
    paths = {}
    for name, content in artifacts.items():
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(content)
        paths[name] = path
    return paths
