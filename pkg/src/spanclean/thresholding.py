"""Margin-threshold estimation from deliberately mislabeled probe samples.

The idea: relabel a stratified slice of the positives and an equal count
of random negatives to a fake class that names nothing, train with one
extra output class, and watch those probes' margin trajectories.  Their
mean margins describe what "certainly mislabeled" looks like on this
corpus, so a chosen percentile of them becomes the removal cutoff —
separately for positives (``tau_pos``) and negatives (``tau_neg``).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .corpus import SpanDataset, SpanSample
from .dynamics import DynamicsRecord, Key
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

# rng stream tag for probe selection (model training uses 0 and 1)
PLAN_STREAM = 2


def largest_remainder(counts: dict[int, int], total: int) -> dict[int, int]:
    """Apportion ``total`` over keys proportionally to ``counts``.

    Each key gets the floor of its exact share; leftover units go to the
    largest fractional remainders (ties to the smaller key).  The result
    matches exact proportions within one unit per key.
    """
    if total < 0:
        raise ValueError("total must be >= 0")
    weight = sum(counts.values())
    if weight == 0:
        if total > 0:
            raise ValueError("cannot apportion a positive total over zero counts")
        return {k: 0 for k in counts}
    shares = {k: total * n / weight for k, n in counts.items()}
    quotas = {k: math.floor(s) for k, s in shares.items()}
    leftover = total - sum(quotas.values())
    by_remainder = sorted(counts, key=lambda k: (-(shares[k] - quotas[k]), k))
    for k in by_remainder[:leftover]:
        quotas[k] += 1
    return quotas


@dataclass(frozen=True)
class ThresholdPlan:
    """Which samples were relabeled to the fake class, and how chosen."""

    positive_quotas: dict[int, int]
    positive_keys: tuple[Key, ...]
    negative_keys: tuple[Key, ...]
    fake_label: int
    seed: int

    def __post_init__(self) -> None:
        if sum(self.positive_quotas.values()) != len(self.positive_keys):
            raise ValueError("positive quotas do not sum to the selected key count")
        if len(self.positive_keys) != len(self.negative_keys):
            raise ValueError("positive and negative probe counts must match")
        if set(self.positive_keys) & set(self.negative_keys):
            raise ValueError("probe key sets must be disjoint")

    @property
    def quota_total(self) -> int:
        return len(self.positive_keys)


def build_threshold_dataset(dataset: SpanDataset, seed: int) -> tuple[SpanDataset, ThresholdPlan]:
    """Relabel probe samples to the fake class ``c + 1``.

    The probe count is ``round(N_p / (c + 1))`` where ``N_p`` counts the
    positive samples and ``c`` the entity types.  Positives are drawn
    per class by largest-remainder apportionment over the class
    distribution; the same number of negatives is drawn uniformly.  The
    returned dataset differs from the input only in those samples'
    labels (and their probe flag); train it with ``c + 2`` classes.
    """
    if dataset.max_width is None:
        raise ConfigError("dataset must be enumerated before building a threshold run")
    c = dataset.label_set.num_types
    positives = [s for s in dataset.samples if s.is_positive]
    negatives = [s for s in dataset.samples if not s.is_positive]
    n_p = len(positives)
    if n_p < c + 1:
        raise ConfigError(f"need at least {c + 1} positive samples, found {n_p}")
    quota_total = round(n_p / (c + 1))

    by_class: dict[int, list[SpanSample]] = {label: [] for label in range(1, c + 1)}
    for s in positives:
        by_class[s.assigned_label].append(s)
    quotas = largest_remainder({label: len(pool) for label, pool in by_class.items()}, quota_total)
    for label, quota in quotas.items():
        # largest-remainder shares never exceed the pool (quota <= ceil of a
        # value <= pool size), so this guards against logic errors only
        if quota > len(by_class[label]):
            raise ConfigError(
                f"class {label} has {len(by_class[label])} positives but quota {quota}"
            )
    if len(negatives) < quota_total:
        raise ConfigError(f"need {quota_total} negative samples, found {len(negatives)}")

    rng = np.random.default_rng([seed, PLAN_STREAM])
    chosen_pos: list[Key] = []
    for label in range(1, c + 1):
        pool = sorted(by_class[label], key=lambda s: s.key)
        picks = rng.choice(len(pool), size=quotas[label], replace=False)
        chosen_pos.extend(pool[int(i)].key for i in np.sort(picks))
    neg_pool = sorted(negatives, key=lambda s: s.key)
    picks = rng.choice(len(neg_pool), size=quota_total, replace=False)
    chosen_neg = [neg_pool[int(i)].key for i in np.sort(picks)]

    plan = ThresholdPlan(
        positive_quotas=quotas,
        positive_keys=tuple(chosen_pos),
        negative_keys=tuple(chosen_neg),
        fake_label=dataset.label_set.fake_label,
        seed=seed,
    )
    probe_keys = set(plan.positive_keys) | set(plan.negative_keys)
    samples = tuple(
        replace(s, assigned_label=plan.fake_label, is_threshold_sample=True)
        if s.key in probe_keys
        else s
        for s in dataset.samples
    )
    log.info(
        "threshold run: %d positive + %d negative probes out of %d samples",
        len(plan.positive_keys), len(plan.negative_keys), len(samples),
    )
    return replace(dataset, samples=samples), plan


def nearest_rank(sorted_values: list[float], k: float) -> float:
    """The k-th percentile by the nearest-rank rule on an ascending list."""
    if not sorted_values:
        raise ValueError("percentile of an empty list")
    if not 0.0 < k <= 100.0:
        raise ValueError(f"percentile must be in (0, 100], got {k}")
    rank = math.ceil(k / 100.0 * len(sorted_values))
    return sorted_values[rank - 1]


@dataclass(frozen=True)
class ThresholdPair:
    """The estimated cutoffs with enough provenance to reproduce them."""

    tau_pos: float
    tau_neg: float
    k_pos: float
    k_neg: float
    seed: int
    epochs: int

    def __post_init__(self) -> None:
        for name in ("k_pos", "k_neg"):
            if not 0.0 < getattr(self, name) <= 100.0:
                raise ConfigError(f"{name} must be in (0, 100]")

    def to_json(self) -> str:
        return json.dumps(
            {
                "tau_pos": self.tau_pos,
                "tau_neg": self.tau_neg,
                "k_pos": self.k_pos,
                "k_neg": self.k_neg,
                "seed": self.seed,
                "epochs": self.epochs,
            },
            indent=2,
        ) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ThresholdPair":
        try:
            obj = json.loads(text)
            return cls(
                tau_pos=float(obj["tau_pos"]),
                tau_neg=float(obj["tau_neg"]),
                k_pos=float(obj["k_pos"]),
                k_neg=float(obj["k_neg"]),
                seed=int(obj["seed"]),
                epochs=int(obj["epochs"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid threshold record: {exc}") from None


def estimate_thresholds(
    records: dict[Key, DynamicsRecord],
    plan: ThresholdPlan,
    k_pos: float,
    k_neg: float,
    epochs: int,
) -> ThresholdPair:
    """Percentile cutoffs over the probes' mean margins, per polarity.

    Positive probes are ranked only among positive probes and negative
    ones among negative; each cutoff is the nearest-rank percentile of
    the ascending values.
    """
    def aums(keys: tuple[Key, ...], side: str) -> list[float]:
        if not keys:
            raise ValueError(f"plan has no {side} probe samples")
        values = []
        for key in keys:
            rec = records.get(key)
            if rec is None:
                raise ValueError(f"no dynamics record for {side} probe {key}")
            if rec.aum is None:
                raise ValueError(f"dynamics record for {key} is not finalized")
            values.append(rec.aum)
        return sorted(values)

    return ThresholdPair(
        tau_pos=nearest_rank(aums(plan.positive_keys, "positive"), k_pos),
        tau_neg=nearest_rank(aums(plan.negative_keys, "negative"), k_neg),
        k_pos=k_pos,
        k_neg=k_neg,
        seed=plan.seed,
        epochs=epochs,
    )
