"""Corpus model: label spaces, sentences, and candidate-span enumeration.

Two on-disk formats are supported:

* BIO: one ``token<TAB>tag`` pair per line, blank line between sentences,
  tags ``O`` / ``B-X`` / ``I-X``.
* Span records: one JSON object per line with a ``tokens`` array, a
  ``spans`` array of ``{start, end, label}`` objects, and optional
  ``gold_spans`` / ``masked_spans`` arrays.  This is the canonical
  interchange format of the pipeline.

Span ends are inclusive: a span covering tokens ``i..j`` has
``start=i, end=j`` and width ``j - i``, so a width cap of ``L`` admits
spans of up to ``L + 1`` tokens.

All types are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple

from .errors import DataError

log = logging.getLogger(__name__)

NON_ENTITY = 0


class Span(NamedTuple):
    """A labeled token span; ``end`` is inclusive, ``label`` is an index."""

    start: int
    end: int
    label: int

    @property
    def width(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class LabelSet:
    """The label space: entity types at indices ``1..c``, non-entity at 0.

    Index ``c + 1`` is reserved for the fake class used by threshold runs
    and never names a real entity type.
    """

    entity_types: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.entity_types)) != len(self.entity_types):
            raise ValueError("entity type names must be unique")
        if any(not name for name in self.entity_types):
            raise ValueError("entity type names must be nonempty")

    @property
    def num_types(self) -> int:
        """Number of entity types ``c``."""
        return len(self.entity_types)

    @property
    def fake_label(self) -> int:
        """Reserved index ``c + 1`` for threshold samples."""
        return self.num_types + 1

    def index(self, name: str) -> int:
        try:
            return self.entity_types.index(name) + 1
        except ValueError:
            raise KeyError(f"unknown entity type {name!r}") from None

    def name(self, index: int) -> str:
        if not 1 <= index <= self.num_types:
            raise KeyError(f"no entity type at index {index}")
        return self.entity_types[index - 1]


def _check_layer(spans: tuple[Span, ...], n_tokens: int, layer: str) -> None:
    seen = set()
    for span in spans:
        if not (0 <= span.start <= span.end < n_tokens):
            raise ValueError(
                f"{layer} span ({span.start}, {span.end}) out of range for "
                f"sentence of {n_tokens} tokens"
            )
        if span in seen:
            raise ValueError(f"duplicate {layer} span {span}")
        seen.add(span)


@dataclass(frozen=True)
class Sentence:
    """A tokenized sentence with distant and (optionally) gold span layers."""

    tokens: tuple[str, ...]
    distant_spans: tuple[Span, ...] = ()
    gold_spans: tuple[Span, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.tokens) < 1:
            raise ValueError("sentence must have at least one token")
        _check_layer(self.distant_spans, len(self.tokens), "distant")
        if self.gold_spans is not None:
            _check_layer(self.gold_spans, len(self.tokens), "gold")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True, slots=True)
class SpanSample:
    """One candidate span with its (possibly noisy) assigned label.

    ``assigned_label > 0`` marks a positive sample; 0 marks a negative.
    The fake label only appears on samples flagged ``is_threshold_sample``
    inside a threshold run.
    """

    sentence_id: int
    start: int
    end: int
    assigned_label: int
    is_threshold_sample: bool = False

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.sentence_id, self.start, self.end)

    @property
    def is_positive(self) -> bool:
        return self.assigned_label > 0

    @property
    def width(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class SpanDataset:
    """A corpus plus (after enumeration) its candidate-span samples.

    ``mask_list`` holds ``(sentence_id, start, end)`` keys excluded from
    training; ``enumerate_samples`` skips them.  ``max_width`` records the
    width cap used for the current ``samples`` (``None`` before
    enumeration).
    """

    label_set: LabelSet
    sentences: tuple[Sentence, ...]
    samples: tuple[SpanSample, ...] = ()
    mask_list: frozenset[tuple[int, int, int]] = frozenset()
    max_width: int | None = None

    def __post_init__(self) -> None:
        n = len(self.sentences)
        for sample in self.samples:
            if not 0 <= sample.sentence_id < n:
                raise ValueError(f"sample references missing sentence {sample.sentence_id}")
            sent = self.sentences[sample.sentence_id]
            if not 0 <= sample.start <= sample.end < len(sent):
                raise ValueError(f"sample span {sample.key} out of range")

    @property
    def num_sentences(self) -> int:
        return len(self.sentences)

    def positives(self) -> list[SpanSample]:
        return [s for s in self.samples if s.is_positive]

    def negatives(self) -> list[SpanSample]:
        return [s for s in self.samples if not s.is_positive]


# ---------------------------------------------------------------------------
# BIO format


def _spans_from_bio(tags: list[tuple[str, str | None]]) -> list[tuple[int, int, str]]:
    """Collapse per-token (prefix, type) pairs into maximal spans.

    Lenient mode: an ``I-X`` that does not continue a run of type ``X``
    opens a new span.
    """
    spans: list[tuple[int, int, str]] = []
    open_start: int | None = None
    open_type: str | None = None
    for i, (prefix, typ) in enumerate(tags):
        if prefix == "O":
            if open_start is not None:
                spans.append((open_start, i - 1, open_type))
                open_start = open_type = None
            continue
        if prefix == "B" or open_type != typ:
            if open_start is not None:
                spans.append((open_start, i - 1, open_type))
            open_start, open_type = i, typ
    if open_start is not None:
        spans.append((open_start, len(tags) - 1, open_type))
    return spans


def parse_bio(
    text: str,
    entity_types: Iterable[str] | None = None,
    as_gold: bool = False,
) -> SpanDataset:
    """Parse BIO-format text into a :class:`SpanDataset`.

    Maximal ``B-X``/``I-X`` runs become spans.  By default spans land in
    the distant layer; ``as_gold=True`` stores them as gold annotations
    instead (for human-annotated dev/test files).

    When ``entity_types`` is given it fixes the label indices and any tag
    type outside it is a :class:`DataError`; otherwise the label set is
    the sorted set of types seen in the file.
    """
    imposed = entity_types is not None
    names: list[str] = list(entity_types) if imposed else []
    known = set(names)

    sentences_raw: list[list[tuple[str, str | None]]] = []
    current_tokens: list[str] = []
    current_tags: list[tuple[str, str | None]] = []
    token_lists: list[list[str]] = []

    def flush() -> None:
        if current_tokens:
            token_lists.append(current_tokens.copy())
            sentences_raw.append(current_tags.copy())
            current_tokens.clear()
            current_tags.clear()

    for lineno, line in enumerate(text.split("\n"), start=1):
        if line.strip() == "":
            flush()
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"line {lineno}: expected 'token<TAB>tag', got {line!r}")
        token, tag = parts
        if tag == "O":
            current_tags.append(("O", None))
        elif tag.startswith(("B-", "I-")):
            typ = tag[2:]
            if not typ:
                raise DataError(f"line {lineno}: empty entity type in tag {tag!r}")
            if imposed and typ not in known:
                raise DataError(f"line {lineno}: unknown entity type {typ!r}")
            current_tags.append((tag[0], typ))
        else:
            raise DataError(f"line {lineno}: unknown tag prefix in {tag!r}")
        current_tokens.append(token)
    flush()

    per_sentence_spans = [_spans_from_bio(tags) for tags in sentences_raw]
    if not imposed:
        names = sorted({typ for spans in per_sentence_spans for _, _, typ in spans})
    label_set = LabelSet(tuple(names))

    sentences = []
    for tokens, raw_spans in zip(token_lists, per_sentence_spans):
        spans = tuple(Span(s, e, label_set.index(t)) for s, e, t in raw_spans)
        if as_gold:
            sentences.append(Sentence(tuple(tokens), distant_spans=(), gold_spans=spans))
        else:
            sentences.append(Sentence(tuple(tokens), distant_spans=spans))
    return SpanDataset(label_set=label_set, sentences=tuple(sentences))


def write_bio(dataset: SpanDataset, layer: str = "distant") -> str:
    """Render a dataset back to canonical BIO text.

    ``layer`` selects ``"distant"`` or ``"gold"`` spans.  Overlapping
    spans cannot be expressed in BIO and raise ``ValueError``.
    """
    lines: list[str] = []
    for sent in dataset.sentences:
        spans = sent.distant_spans if layer == "distant" else (sent.gold_spans or ())
        tags = ["O"] * len(sent)
        for span in sorted(spans):
            for i in range(span.start, span.end + 1):
                if tags[i] != "O":
                    raise ValueError(f"overlapping spans cannot be written as BIO: {span}")
            name = dataset.label_set.name(span.label)
            tags[span.start] = f"B-{name}"
            for i in range(span.start + 1, span.end + 1):
                tags[i] = f"I-{name}"
        for token, tag in zip(sent.tokens, tags):
            lines.append(f"{token}\t{tag}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Span record format


def _spans_from_record(
    raw: object, n_tokens: int, label_set: LabelSet | None, names: list[str], lineno: int, field_name: str
) -> list[tuple[int, int, str]]:
    if not isinstance(raw, list):
        raise DataError(f"line {lineno}: {field_name} must be an array")
    out = []
    for item in raw:
        try:
            start, end, label = int(item["start"]), int(item["end"]), str(item["label"])
        except (TypeError, KeyError, ValueError):
            raise DataError(f"line {lineno}: malformed span object in {field_name}: {item!r}") from None
        if not (0 <= start <= end < n_tokens):
            raise DataError(f"line {lineno}: span ({start}, {end}) out of range in {field_name}")
        if label_set is not None and label not in label_set.entity_types:
            raise DataError(f"line {lineno}: unknown label name {label!r}")
        if label not in names:
            names.append(label)
        out.append((start, end, label))
    return out


def parse_spans(text: str, entity_types: Iterable[str] | None = None) -> SpanDataset:
    """Parse the record-per-line span interchange format.

    Each line is a JSON object ``{"tokens": [...], "spans": [...]}`` with
    optional ``gold_spans`` and ``masked_spans``.  Duplicate spans within
    a layer, out-of-range indices, and (when ``entity_types`` is imposed)
    unknown label names are rejected.
    """
    imposed_set = LabelSet(tuple(entity_types)) if entity_types is not None else None
    names: list[str] = list(imposed_set.entity_types) if imposed_set else []

    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip() == "":
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {lineno}: invalid JSON record: {exc}") from None
        if not isinstance(obj, dict) or "tokens" not in obj or "spans" not in obj:
            raise DataError(f"line {lineno}: record must contain 'tokens' and 'spans'")
        tokens = obj["tokens"]
        if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) for t in tokens):
            raise DataError(f"line {lineno}: tokens must be a nonempty array of strings")
        n = len(tokens)
        distant = _spans_from_record(obj["spans"], n, imposed_set, names, lineno, "spans")
        gold = None
        if "gold_spans" in obj:
            gold = _spans_from_record(obj["gold_spans"], n, imposed_set, names, lineno, "gold_spans")
        masked = []
        if "masked_spans" in obj:
            raw = obj["masked_spans"]
            if not isinstance(raw, list):
                raise DataError(f"line {lineno}: masked_spans must be an array")
            for item in raw:
                try:
                    start, end = int(item["start"]), int(item["end"])
                except (TypeError, KeyError, ValueError):
                    raise DataError(f"line {lineno}: malformed masked span {item!r}") from None
                if not (0 <= start <= end < n):
                    raise DataError(f"line {lineno}: masked span ({start}, {end}) out of range")
                masked.append((start, end))
        records.append((tokens, distant, gold, masked))

    if imposed_set is None:
        names = sorted(set(names))
    label_set = LabelSet(tuple(names))

    sentences = []
    mask_list = set()
    for sid, (tokens, distant, gold, masked) in enumerate(records):
        try:
            sentence = Sentence(
                tokens=tuple(tokens),
                distant_spans=tuple(Span(s, e, label_set.index(t)) for s, e, t in distant),
                gold_spans=None if gold is None else tuple(Span(s, e, label_set.index(t)) for s, e, t in gold),
            )
        except ValueError as exc:
            raise DataError(f"record {sid}: {exc}") from None
        sentences.append(sentence)
        for start, end in masked:
            mask_list.add((sid, start, end))
    return SpanDataset(label_set=label_set, sentences=tuple(sentences), mask_list=frozenset(mask_list))


def write_spans(dataset: SpanDataset) -> str:
    """Render a dataset to canonical span-record text (one JSON line per sentence).

    Canonical form sorts each span layer by ``(start, end, label)`` and
    omits absent optional fields, so ``write_spans(parse_spans(x)) == x``
    for canonical input.
    """
    masks_by_sid: dict[int, list[tuple[int, int]]] = {}
    for sid, start, end in dataset.mask_list:
        masks_by_sid.setdefault(sid, []).append((start, end))

    lines = []
    for sid, sent in enumerate(dataset.sentences):
        obj: dict[str, object] = {"tokens": list(sent.tokens)}
        obj["spans"] = [
            {"start": s.start, "end": s.end, "label": dataset.label_set.name(s.label)}
            for s in sorted(sent.distant_spans)
        ]
        if sent.gold_spans is not None:
            obj["gold_spans"] = [
                {"start": s.start, "end": s.end, "label": dataset.label_set.name(s.label)}
                for s in sorted(sent.gold_spans)
            ]
        if sid in masks_by_sid:
            obj["masked_spans"] = [{"start": s, "end": e} for s, e in sorted(masks_by_sid[sid])]
        lines.append(json.dumps(obj, ensure_ascii=False, separators=(", ", ": ")))
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Enumeration and statistics


def enumerate_samples(dataset: SpanDataset, max_width: int) -> SpanDataset:
    """Enumerate every candidate span of width ``<= max_width`` as a sample.

    A span carries the label of the matching distant span if one exists,
    else the non-entity label.  ``mask_list`` entries are skipped.
    Distant spans wider than the cap cannot become positive samples and
    are dropped with a warning.
    """
    if max_width < 0:
        raise ValueError("max_width must be >= 0")
    samples: list[SpanSample] = []
    dropped_overwidth = 0
    for sid, sent in enumerate(dataset.sentences):
        label_at: dict[tuple[int, int], int] = {}
        for span in sent.distant_spans:
            if span.width > max_width:
                dropped_overwidth += 1
                continue
            label_at[(span.start, span.end)] = span.label
        n = len(sent)
        for start in range(n):
            for end in range(start, min(start + max_width, n - 1) + 1):
                if (sid, start, end) in dataset.mask_list:
                    continue
                samples.append(
                    SpanSample(sid, start, end, label_at.get((start, end), NON_ENTITY))
                )
    if dropped_overwidth:
        log.warning(
            "%d distant span(s) wider than %d tokens cannot be represented and "
            "were not enumerated as positives",
            dropped_overwidth,
            max_width + 1,
        )
    return replace(dataset, samples=tuple(samples), max_width=max_width)


@dataclass(frozen=True)
class DatasetStats:
    """Exact corpus counts; ``sample_*`` fields require prior enumeration."""

    num_sentences: int
    num_tokens: int
    spans_per_class: dict[str, int] = field(default_factory=dict)
    num_spans: int = 0
    num_overwidth: int = 0
    num_masked: int = 0
    num_samples: int = 0
    num_positive_samples: int = 0
    num_negative_samples: int = 0


def dataset_stats(dataset: SpanDataset) -> DatasetStats:
    """Summarize a dataset: sentence/span counts per class and sample counts.

    Span counts cover the distant layer as annotated (any width);
    ``num_overwidth`` flags spans wider than the enumeration cap.  Sample
    counts are zero for datasets that have not been enumerated.
    """
    per_class = {name: 0 for name in dataset.label_set.entity_types}
    total_spans = 0
    overwidth = 0
    num_tokens = 0
    for sent in dataset.sentences:
        num_tokens += len(sent)
        for span in sent.distant_spans:
            per_class[dataset.label_set.name(span.label)] += 1
            total_spans += 1
            if dataset.max_width is not None and span.width > dataset.max_width:
                overwidth += 1
    positives = sum(1 for s in dataset.samples if s.is_positive)
    return DatasetStats(
        num_sentences=len(dataset.sentences),
        num_tokens=num_tokens,
        spans_per_class=per_class,
        num_spans=total_spans,
        num_overwidth=overwidth,
        num_masked=len(dataset.mask_list),
        num_samples=len(dataset.samples),
        num_positive_samples=positives,
        num_negative_samples=len(dataset.samples) - positives,
    )
