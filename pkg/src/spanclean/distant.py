"""Distant annotation: dictionary matching, controlled noise, synthetic data.

Three ways to obtain a distant annotation layer:

* :func:`annotate` — greedy longest-match against a gazetteer, the
  classic distant-supervision setup.
* :func:`inject_noise` — corrupt the gold layer with controlled
  false-negative / type-flip / spurious-span noise and return a ledger
  that reconciles the two layers exactly.  This is the oracle used to
  audit cleaning quality.
* :func:`generate_synthetic` — build a corpus whose entity types own
  disjoint sub-vocabularies, so a model can actually learn them.

All randomness is drawn from per-sentence streams seeded with
``[seed, sentence_id]``, so output is independent of iteration order and
reproducible byte-for-byte.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .corpus import LabelSet, Sentence, Span, SpanDataset
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Gazetteer annotation


@dataclass(frozen=True, eq=False)
class Gazetteer:
    """Surface-form dictionary: token sequence -> entity type name."""

    entries: Mapping[tuple[str, ...], str]

    def __post_init__(self) -> None:
        for surface in self.entries:
            if len(surface) == 0 or any(not t for t in surface):
                raise ValueError(f"empty surface form in gazetteer: {surface!r}")

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_text(cls, text: str) -> "Gazetteer":
        """Parse ``surface form<TAB>TYPE`` lines (tokens space-separated).

        A surface form listed twice keeps the last type; the overwrite is
        logged.
        """
        entries: dict[tuple[str, ...], str] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            if line.strip() == "":
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"line {lineno}: expected 'surface<TAB>TYPE', got {line!r}")
            surface = tuple(parts[0].split())
            typ = parts[1].strip()
            if not surface:
                raise DataError(f"line {lineno}: empty surface form")
            if not typ:
                raise DataError(f"line {lineno}: empty type")
            if surface in entries and entries[surface] != typ:
                log.warning(
                    "line %d: surface form %r re-mapped from %s to %s (last write wins)",
                    lineno,
                    " ".join(surface),
                    entries[surface],
                    typ,
                )
            entries[surface] = typ
        return cls(entries)

    def to_text(self) -> str:
        lines = [f"{' '.join(surface)}\t{typ}" for surface, typ in sorted(self.entries.items())]
        return "\n".join(lines) + ("\n" if lines else "")


def annotate(dataset: SpanDataset, gazetteer: Gazetteer) -> SpanDataset:
    """Annotate every sentence by left-to-right greedy longest match.

    At each position the longest matching surface form (exact token
    comparison) becomes a distant span and matching resumes after it, so
    distant spans never overlap.  Gazetteer types absent from the
    dataset's label set are appended to it (sorted, after the existing
    types, so existing indices are stable).
    """
    if len(gazetteer) == 0:
        raise ConfigError("cannot annotate with an empty gazetteer")
    known = set(dataset.label_set.entity_types)
    new_types = sorted({t for t in gazetteer.entries.values() if t not in known})
    label_set = LabelSet(dataset.label_set.entity_types + tuple(new_types))

    max_len = max(len(surface) for surface in gazetteer.entries)
    sentences = []
    for sent in dataset.sentences:
        tokens = sent.tokens
        n = len(tokens)
        spans: list[Span] = []
        i = 0
        while i < n:
            matched = 0
            for length in range(min(max_len, n - i), 0, -1):
                typ = gazetteer.entries.get(tokens[i : i + length])
                if typ is not None:
                    spans.append(Span(i, i + length - 1, label_set.index(typ)))
                    matched = length
                    break
            i += matched or 1
        sentences.append(replace(sent, distant_spans=tuple(spans)))
    return SpanDataset(
        label_set=label_set,
        sentences=tuple(sentences),
        mask_list=dataset.mask_list,
    )


# ---------------------------------------------------------------------------
# Noise injection


@dataclass(frozen=True)
class NoiseSpec:
    """Controlled corruption rates for :func:`inject_noise`.

    ``fn_rate``: probability a gold span is dropped.  ``fp_type_rate``:
    probability a surviving span's type is flipped to a uniformly chosen
    other type.  ``fp_spurious_rate``: expected number of spurious spans
    added per sentence (Poisson).
    """

    fn_rate: float = 0.25
    fp_type_rate: float = 0.10
    fp_spurious_rate: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.fn_rate <= 1.0:
            raise ConfigError(f"fn_rate must be in [0, 1], got {self.fn_rate}")
        if not 0.0 <= self.fp_type_rate <= 1.0:
            raise ConfigError(f"fp_type_rate must be in [0, 1], got {self.fp_type_rate}")
        if self.fp_spurious_rate < 0.0:
            raise ConfigError(f"fp_spurious_rate must be >= 0, got {self.fp_spurious_rate}")


#: One ledger record; ``op`` is "dropped", "flipped", or "added".
LedgerEntry = dict


def inject_noise(
    dataset: SpanDataset, spec: NoiseSpec, max_width: int = 8
) -> tuple[SpanDataset, list[LedgerEntry]]:
    """Derive a corrupted distant layer from gold and return it with a ledger.

    Each gold span is independently dropped with ``fn_rate``; survivors
    have their type flipped with ``fp_type_rate`` (uniform over the other
    ``c - 1`` types).  A Poisson(``fp_spurious_rate``) number of spurious
    spans per sentence is then attempted, each with uniform width
    ``<= max_width``, uniform position, and uniform type; attempts that
    would overlap an existing distant span or a gold span are discarded,
    so every ledger "added" entry is a genuine false annotation.

    The ledger lists every change as ``{sentence_id, start, end, label,
    op}`` (flips carry ``new_label``) and reconciles the two layers
    exactly; see :func:`write_ledger`.
    """
    c = dataset.label_set.num_types
    if c < 2 and spec.fp_type_rate > 0:
        raise ConfigError("type flipping requires at least 2 entity types")
    names = dataset.label_set.name

    sentences = []
    ledger: list[LedgerEntry] = []
    for sid, sent in enumerate(dataset.sentences):
        if sent.gold_spans is None:
            raise DataError(f"sentence {sid} has no gold annotations to corrupt")
        rng = np.random.default_rng([spec.seed, sid])
        n = len(sent)
        distant: list[Span] = []
        occupied: set[int] = set()
        for span in sorted(sent.gold_spans):
            if rng.random() < spec.fn_rate:
                ledger.append(
                    {
                        "sentence_id": sid,
                        "start": span.start,
                        "end": span.end,
                        "label": names(span.label),
                        "op": "dropped",
                    }
                )
                continue
            label = span.label
            if spec.fp_type_rate > 0 and rng.random() < spec.fp_type_rate:
                offset = int(rng.integers(1, c))
                label = (span.label - 1 + offset) % c + 1
                ledger.append(
                    {
                        "sentence_id": sid,
                        "start": span.start,
                        "end": span.end,
                        "label": names(span.label),
                        "op": "flipped",
                        "new_label": names(label),
                    }
                )
            distant.append(Span(span.start, span.end, label))
            occupied.update(range(span.start, span.end + 1))

        gold_occupied = {
            i for span in sent.gold_spans for i in range(span.start, span.end + 1)
        }
        if spec.fp_spurious_rate > 0:
            for _ in range(rng.poisson(spec.fp_spurious_rate)):
                width = int(rng.integers(0, min(max_width, n - 1) + 1))
                start = int(rng.integers(0, n - width))
                label = int(rng.integers(1, c + 1))
                positions = set(range(start, start + width + 1))
                if positions & (occupied | gold_occupied):
                    continue
                distant.append(Span(start, start + width, label))
                occupied |= positions
                ledger.append(
                    {
                        "sentence_id": sid,
                        "start": start,
                        "end": start + width,
                        "label": names(label),
                        "op": "added",
                    }
                )
        sentences.append(replace(sent, distant_spans=tuple(sorted(distant))))

    ledger.sort(key=lambda e: (e["sentence_id"], e["start"], e["end"], e["op"]))
    noisy = SpanDataset(
        label_set=dataset.label_set,
        sentences=tuple(sentences),
        mask_list=dataset.mask_list,
    )
    return noisy, ledger


def write_ledger(ledger: Iterable[LedgerEntry]) -> str:
    """Serialize ledger entries as one JSON object per line."""
    import json

    lines = []
    for entry in ledger:
        ordered = {k: entry[k] for k in ("sentence_id", "start", "end", "label", "op")}
        if "new_label" in entry:
            ordered["new_label"] = entry["new_label"]
        lines.append(json.dumps(ordered, ensure_ascii=False, separators=(", ", ": ")))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_ledger(text: str) -> list[LedgerEntry]:
    import json

    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip() == "":
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {lineno}: invalid JSON record: {exc}") from None
        missing = {"sentence_id", "start", "end", "label", "op"} - set(obj)
        if missing:
            raise DataError(f"line {lineno}: ledger record missing {sorted(missing)}")
        if obj["op"] not in ("dropped", "flipped", "added"):
            raise DataError(f"line {lineno}: unknown op {obj['op']!r}")
        if obj["op"] == "flipped" and "new_label" not in obj:
            raise DataError(f"line {lineno}: flipped record missing new_label")
        entries.append(obj)
    return entries


# ---------------------------------------------------------------------------
# Synthetic corpora


@dataclass(frozen=True)
class SynthConfig:
    """Shape of a synthetic corpus.

    Entity types are named ``T1..Tn`` and own disjoint sub-vocabularies
    (``entK_i`` tokens); the rest of the vocabulary is background ``w_i``
    tokens.  Entity runs are 1..max_entity_len tokens long, at most
    ``max_entities`` per sentence.
    """

    vocab_size: int = 200
    num_types: int = 3
    num_sentences: int = 500
    min_len: int = 6
    max_len: int = 12
    seed: int = 0
    max_entities: int = 3
    max_entity_len: int = 3

    def __post_init__(self) -> None:
        if self.num_types < 2:
            raise ConfigError("need at least 2 entity types")
        if self.vocab_size < 10 * self.num_types:
            raise ConfigError(
                f"vocab_size {self.vocab_size} too small for {self.num_types} types "
                f"(need >= {10 * self.num_types})"
            )
        if self.num_sentences < 0:
            raise ConfigError("num_sentences must be >= 0")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError("need 1 <= min_len <= max_len")
        if self.max_entity_len < 1 or self.max_entities < 0:
            raise ConfigError("max_entity_len must be >= 1 and max_entities >= 0")
        if self.max_entity_len > self.min_len:
            raise ConfigError("max_entity_len cannot exceed min_len")


def synth_vocabularies(config: SynthConfig) -> tuple[dict[str, list[str]], list[str]]:
    """Deterministic token universe for a config: (per-type vocab, background).

    Depends only on the config shape, not the seed, so corpora drawn with
    different seeds (train/dev/test splits) share a vocabulary.
    """
    per_type = max(2, config.vocab_size // (5 * config.num_types))
    type_vocab = {
        f"T{t}": [f"ent{t}_{i}" for i in range(per_type)]
        for t in range(1, config.num_types + 1)
    }
    n_background = config.vocab_size - per_type * config.num_types
    background = [f"w{i}" for i in range(n_background)]
    return type_vocab, background


def generate_synthetic(config: SynthConfig) -> tuple[SpanDataset, dict]:
    """Generate a gold-annotated corpus where types are learnable by vocabulary.

    Sentences are uniform background tokens; up to ``max_entities``
    non-overlapping entity runs are embedded per sentence, each drawn
    from its type's sub-vocabulary and recorded as a gold span.  Returns
    the dataset and a bookkeeping dict (vocabularies + config echo) so
    tests can verify the construction.
    """
    type_vocab, background = synth_vocabularies(config)
    label_set = LabelSet(tuple(type_vocab))
    subvocabs = list(type_vocab.values())

    sentences = []
    for sid in range(config.num_sentences):
        rng = np.random.default_rng([config.seed, sid])
        n = int(rng.integers(config.min_len, config.max_len + 1))
        tokens = [background[int(i)] for i in rng.integers(0, len(background), size=n)]
        spans: list[Span] = []
        occupied: set[int] = set()
        for _ in range(int(rng.integers(0, config.max_entities + 1))):
            length = int(rng.integers(1, config.max_entity_len + 1))
            label = int(rng.integers(1, config.num_types + 1))
            start = int(rng.integers(0, n - length + 1))
            positions = set(range(start, start + length))
            if positions & occupied:
                continue
            vocab = subvocabs[label - 1]
            for offset, tok_i in enumerate(rng.integers(0, len(vocab), size=length)):
                tokens[start + offset] = vocab[int(tok_i)]
            spans.append(Span(start, start + length - 1, label))
            occupied |= positions
        sentences.append(
            Sentence(tuple(tokens), distant_spans=(), gold_spans=tuple(sorted(spans)))
        )

    bookkeeping = {
        "type_vocab": type_vocab,
        "background_vocab": background,
        "config": asdict(config),
    }
    return SpanDataset(label_set=label_set, sentences=tuple(sentences)), bookkeeping
