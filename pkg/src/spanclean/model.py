"""A from-scratch span classifier with exact analytic gradients.

The model embeds tokens (plain lookup, or a small windowed context
mixer), represents a candidate span as ``h_start ⊕ h_end ⊕ width_embed``,
and scores it with a rectified feed-forward head over ``K`` classes
(class 0 = non-entity).  Training minimizes summed cross-entropy with
Adam; optionally each batch keeps only the fraction of negative spans
most cosine-similar to the batch's positives.

Everything is float64 numpy.  All gradients are hand-derived and are
checked against central finite differences in the test suite, which is
why the loss path is split into a selection step (a sampling policy,
no gradients) and a purely differentiable step with dropout masks that
can be held fixed.

Determinism: every random draw flows from ``numpy.random.default_rng``
streams seeded as ``[seed, stream]``; repeated runs with one seed are
bit-identical.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import Sentence, Span, SpanDataset, SpanSample
from .errors import ConfigError, DataError, NumericError

log = logging.getLogger(__name__)

PAD_INDEX = 0
UNK_INDEX = 1

# rng stream tags (second word of the seed sequence)
INIT_STREAM = 0
TRAIN_STREAM = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_FORMAT = "spanclean-params-v1"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; ``num_classes`` counts non-entity."""

    vocab_size: int
    embed_dim: int = 32
    encoder_variant: str = "window"
    window_radius: int = 2
    hidden_dim: int = 64
    num_layers: int = 2
    width_embed_dim: int = 16
    max_width: int = 8
    num_classes: int = 2
    dropout_rate: float = 0.2

    def __post_init__(self) -> None:
        for name in ("vocab_size", "embed_dim", "hidden_dim", "num_layers", "width_embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.encoder_variant not in ("lookup", "window"):
            raise ConfigError(f"unknown encoder_variant {self.encoder_variant!r}")
        if self.window_radius < 0 or self.max_width < 0:
            raise ConfigError("window_radius and max_width must be >= 0")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")

    @property
    def span_repr_dim(self) -> int:
        return 2 * self.embed_dim + self.width_embed_dim

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for :func:`train_model`."""

    epochs: int = 10
    lr: float = 1e-3
    batch_sentences: int = 16
    neg_fraction: float | None = None  # None: train on all negatives

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.batch_sentences < 1:
            raise ConfigError("batch_sentences must be >= 1")
        if self.neg_fraction is not None and not 0.0 < self.neg_fraction <= 1.0:
            raise ConfigError("neg_fraction must be in (0, 1] when set")


class Vocab:
    """Token-to-index map with reserved padding (0) and unknown (1) slots."""

    def __init__(self, tokens: Sequence[str]):
        if list(tokens[:2]) != ["<pad>", "<unk>"]:
            raise ValueError("vocab must start with <pad>, <unk>")
        self.tokens = tuple(tokens)
        self._index = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def build(cls, sentences: Iterable[Sentence]) -> "Vocab":
        seen = sorted({tok for sent in sentences for tok in sent.tokens})
        return cls(["<pad>", "<unk>"] + seen)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, token: str) -> int:
        return self._index.get(token, UNK_INDEX)

    def encode_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self._index.get(t, UNK_INDEX) for t in tokens], dtype=np.intp)


@dataclass
class SpanClassifierParams:
    """All trainable tensors; ``mixer_*`` exist only for the window encoder.

    ``as_dict`` fixes the canonical tensor order used by checkpoints,
    the optimizer state, and the finite-difference harness.
    """

    embedding: np.ndarray
    width_table: np.ndarray
    hidden_w: list[np.ndarray]
    hidden_b: list[np.ndarray]
    out_w: np.ndarray
    out_b: np.ndarray
    mixer_w: np.ndarray | None = None
    mixer_b: np.ndarray | None = None

    def as_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"embedding": self.embedding}
        if self.mixer_w is not None:
            out["mixer_w"] = self.mixer_w
            out["mixer_b"] = self.mixer_b
        out["width_table"] = self.width_table
        for i, (w, b) in enumerate(zip(self.hidden_w, self.hidden_b)):
            out[f"hidden_w_{i}"] = w
            out[f"hidden_b_{i}"] = b
        out["out_w"] = self.out_w
        out["out_b"] = self.out_b
        return out

    def copy(self) -> "SpanClassifierParams":
        return SpanClassifierParams(
            embedding=self.embedding.copy(),
            width_table=self.width_table.copy(),
            hidden_w=[w.copy() for w in self.hidden_w],
            hidden_b=[b.copy() for b in self.hidden_b],
            out_w=self.out_w.copy(),
            out_b=self.out_b.copy(),
            mixer_w=None if self.mixer_w is None else self.mixer_w.copy(),
            mixer_b=None if self.mixer_b is None else self.mixer_b.copy(),
        )

    def check_finite(self) -> None:
        for name, arr in self.as_dict().items():
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite values in parameter tensor {name!r}")


def init_params(config: ModelConfig, seed: int) -> SpanClassifierParams:
    """He-normal weights, zero biases, 1/sqrt(dim)-scaled embedding tables."""
    rng = np.random.default_rng([seed, INIT_STREAM])

    def he(shape: tuple[int, int]) -> np.ndarray:
        return rng.normal(0.0, math.sqrt(2.0 / shape[1]), size=shape)

    embedding = rng.normal(0.0, 1.0 / math.sqrt(config.embed_dim), size=(config.vocab_size, config.embed_dim))
    embedding[PAD_INDEX] = 0.0
    mixer_w = mixer_b = None
    if config.encoder_variant == "window":
        mixer_w = he((config.embed_dim, 2 * config.embed_dim))
        mixer_b = np.zeros(config.embed_dim)
    width_table = rng.normal(
        0.0, 1.0 / math.sqrt(config.width_embed_dim), size=(config.max_width + 1, config.width_embed_dim)
    )
    hidden_w, hidden_b = [], []
    in_dim = config.span_repr_dim
    for _ in range(config.num_layers):
        hidden_w.append(he((config.hidden_dim, in_dim)))
        hidden_b.append(np.zeros(config.hidden_dim))
        in_dim = config.hidden_dim
    out_w = he((config.num_classes, in_dim))
    out_b = np.zeros(config.num_classes)
    return SpanClassifierParams(
        embedding=embedding,
        width_table=width_table,
        hidden_w=hidden_w,
        hidden_b=hidden_b,
        out_w=out_w,
        out_b=out_b,
        mixer_w=mixer_w,
        mixer_b=mixer_b,
    )


def zero_grads(params: SpanClassifierParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.as_dict().items()}


# ---------------------------------------------------------------------------
# Encoding and span representation


def _window_means(emb: np.ndarray, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-position mean of embedding rows in a clipped ±radius window."""
    n = emb.shape[0]
    prefix = np.concatenate([np.zeros((1, emb.shape[1])), np.cumsum(emb, axis=0)])
    idx = np.arange(n)
    lo = np.maximum(idx - radius, 0)
    hi = np.minimum(idx + radius, n - 1)
    sizes = (hi - lo + 1).astype(np.float64)
    means = (prefix[hi + 1] - prefix[lo]) / sizes[:, None]
    return means, sizes


def _encode_ids(ids: np.ndarray, params: SpanClassifierParams, config: ModelConfig) -> tuple[np.ndarray, dict]:
    """Token representations for one sentence plus the backward cache."""
    emb = params.embedding[ids]
    if config.encoder_variant == "lookup":
        return emb, {"ids": ids}
    means, sizes = _window_means(emb, config.window_radius)
    concat = np.concatenate([emb, means], axis=1)
    pre = concat @ params.mixer_w.T + params.mixer_b
    h = np.maximum(pre, 0.0)
    return h, {"ids": ids, "concat": concat, "pre": pre, "sizes": sizes}


def encode(
    sentence: Sentence | Sequence[str], params: SpanClassifierParams, config: ModelConfig, vocab: Vocab
) -> np.ndarray:
    """Per-token vectors ``h_1..h_n`` for a sentence.

    Lookup variant: the token's embedding row.  Window variant: the
    token embedding concatenated with the clipped ±radius window mean,
    mixed through one rectified linear layer.
    """
    tokens = sentence.tokens if isinstance(sentence, Sentence) else sentence
    h, _ = _encode_ids(vocab.encode_tokens(tokens), params, config)
    return h


def _encoder_backward(
    d_h: np.ndarray, cache: dict, params: SpanClassifierParams, config: ModelConfig, grads: dict[str, np.ndarray]
) -> None:
    """Accumulate encoder gradients for one sentence given dL/dH."""
    if config.encoder_variant == "lookup":
        np.add.at(grads["embedding"], cache["ids"], d_h)
        return
    d_pre = d_h * (cache["pre"] > 0.0)
    grads["mixer_w"] += d_pre.T @ cache["concat"]
    grads["mixer_b"] += d_pre.sum(axis=0)
    d_concat = d_pre @ params.mixer_w
    d = config.embed_dim
    d_emb = d_concat[:, :d].copy()
    # each position j receives the window-mean gradient of every position i
    # whose window covers j, i.e. i in [j - w, j + w] clipped
    scaled = d_concat[:, d:] / cache["sizes"][:, None]
    n = scaled.shape[0]
    prefix = np.concatenate([np.zeros((1, d)), np.cumsum(scaled, axis=0)])
    idx = np.arange(n)
    lo = np.maximum(idx - config.window_radius, 0)
    hi = np.minimum(idx + config.window_radius, n - 1)
    d_emb += prefix[hi + 1] - prefix[lo]
    np.add.at(grads["embedding"], cache["ids"], d_emb)


def span_repr(
    h: np.ndarray, start: int, end: int, params: SpanClassifierParams, config: ModelConfig
) -> np.ndarray:
    """``h_start ⊕ h_end ⊕ width_row``; width ``end - start`` must be ≤ cap."""
    width = end - start
    if not 0 <= start <= end < h.shape[0]:
        raise ValueError(f"span ({start}, {end}) out of range for {h.shape[0]} tokens")
    if width > config.max_width:
        raise ValueError(f"span width {width} exceeds cap {config.max_width}")
    return np.concatenate([h[start], h[end], params.width_table[width]])


def _span_matrix(
    h: np.ndarray, starts: np.ndarray, ends: np.ndarray, params: SpanClassifierParams
) -> np.ndarray:
    return np.concatenate([h[starts], h[ends], params.width_table[ends - starts]], axis=1)


# ---------------------------------------------------------------------------
# Head forward/backward


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _head_forward(
    x: np.ndarray,
    params: SpanClassifierParams,
    config: ModelConfig,
    masks: list[np.ndarray] | None,
) -> tuple[np.ndarray, dict]:
    """Rectified hidden layers (dropout via precomputed masks) then logits."""
    acts = [x]
    pres = []
    cur = x
    for i in range(config.num_layers):
        pre = cur @ params.hidden_w[i].T + params.hidden_b[i]
        cur = np.maximum(pre, 0.0)
        if masks is not None:
            cur = cur * masks[i]
        pres.append(pre)
        acts.append(cur)
    logits = cur @ params.out_w.T + params.out_b
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite values in tensor 'logits'")
    return logits, {"acts": acts, "pres": pres, "masks": masks}


def _head_backward(
    d_logits: np.ndarray,
    cache: dict,
    params: SpanClassifierParams,
    config: ModelConfig,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    """Backprop dL/dlogits to dL/dx, accumulating head gradients."""
    acts, pres, masks = cache["acts"], cache["pres"], cache["masks"]
    grads["out_w"] += d_logits.T @ acts[-1]
    grads["out_b"] += d_logits.sum(axis=0)
    d_cur = d_logits @ params.out_w
    for i in range(config.num_layers - 1, -1, -1):
        if masks is not None:
            d_cur = d_cur * masks[i]
        d_pre = d_cur * (pres[i] > 0.0)
        grads[f"hidden_w_{i}"] += d_pre.T @ acts[i]
        grads[f"hidden_b_{i}"] += d_pre.sum(axis=0)
        d_cur = d_pre @ params.hidden_w[i]
    return d_cur


def forward(
    x: np.ndarray,
    params: SpanClassifierParams,
    config: ModelConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Logits and softmax probabilities for span vectors ``x``.

    ``mode="train"`` applies inverted dropout to hidden activations
    (masks drawn from ``rng``); eval mode is deterministic and ignores
    ``rng`` entirely.
    """
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    masks = None
    if mode == "train" and config.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("train-mode forward needs an rng for dropout")
        masks = _draw_dropout_masks(x2.shape[0], params, config, rng)
    logits, _ = _head_forward(x2, params, config, masks)
    probs = _softmax(logits)
    if single:
        return logits[0], probs[0]
    return logits, probs


def _draw_dropout_masks(
    n: int, params: SpanClassifierParams, config: ModelConfig, rng: np.random.Generator
) -> list[np.ndarray] | None:
    """One inverted-dropout mask per sample per hidden layer."""
    if config.dropout_rate <= 0.0:
        return None
    keep = 1.0 - config.dropout_rate
    return [
        (rng.random((n, config.hidden_dim)) < keep) / keep
        for _ in range(config.num_layers)
    ]


# ---------------------------------------------------------------------------
# Batches and negative selection


@dataclass(frozen=True)
class Batch:
    """The samples of a group of sentences, with their Sentence objects.

    ``sentences`` maps sentence_id -> Sentence for every id referenced by
    ``samples``.  Positives and negatives partition the samples by
    ``assigned_label > 0``.
    """

    samples: tuple[SpanSample, ...]
    sentences: dict[int, Sentence] = field(default_factory=dict)

    def __post_init__(self) -> None:
        missing = {s.sentence_id for s in self.samples} - set(self.sentences)
        if missing:
            raise ValueError(f"batch lacks sentences {sorted(missing)}")

    @property
    def pos_indices(self) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.samples) if s.is_positive], dtype=np.intp)

    @property
    def neg_indices(self) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.samples) if not s.is_positive], dtype=np.intp)


def select_top_negatives(
    span_vectors: np.ndarray,
    pos_indices: np.ndarray,
    neg_indices: np.ndarray,
    fraction: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Indices (into the batch) of the negatives kept for the loss.

    Each negative is scored by its mean cosine similarity to all
    positives in the batch; the ceil(fraction · #negatives) best are
    kept (at least one).  Zero-norm vectors contribute similarity 0.
    With no positives the mean is undefined, so the same number of
    negatives is drawn uniformly instead.  No gradients flow through
    this choice; it only picks which samples enter the loss.
    """
    n_neg = len(neg_indices)
    if n_neg == 0:
        return np.array([], dtype=np.intp)
    k = max(1, math.ceil(fraction * n_neg))
    if len(pos_indices) == 0:
        chosen = rng.choice(n_neg, size=k, replace=False)
        return neg_indices[np.sort(chosen)]

    def normalize(rows: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        return np.divide(rows, norms, out=np.zeros_like(rows), where=norms > 0)

    sims = normalize(span_vectors[neg_indices]) @ normalize(span_vectors[pos_indices]).T
    score = sims.mean(axis=1)
    # stable sort on -score: ties broken by batch position, so selection
    # is a total order and brute-force comparisons are exact
    order = np.argsort(-score, kind="stable")
    return neg_indices[np.sort(order[:k])]


# ---------------------------------------------------------------------------
# Loss and gradients


def _batch_arrays(batch: Batch, params: SpanClassifierParams, config: ModelConfig, vocab: Vocab):
    """Encode each sentence once and build the batch span matrix."""
    by_sid: dict[int, list[int]] = {}
    for i, s in enumerate(batch.samples):
        by_sid.setdefault(s.sentence_id, []).append(i)
    x = np.empty((len(batch.samples), config.span_repr_dim))
    caches = {}
    for sid, rows in by_sid.items():
        ids = vocab.encode_tokens(batch.sentences[sid].tokens)
        h, cache = _encode_ids(ids, params, config)
        caches[sid] = (h, cache, rows)
        starts = np.array([batch.samples[i].start for i in rows], dtype=np.intp)
        ends = np.array([batch.samples[i].end for i in rows], dtype=np.intp)
        x[rows] = _span_matrix(h, starts, ends, params)
    return x, caches


def loss_and_grads(
    batch: Batch,
    params: SpanClassifierParams,
    config: ModelConfig,
    vocab: Vocab,
    rng: np.random.Generator | None = None,
    neg_fraction: float | None = None,
    mode: str = "train",
    fixed_masks: list[np.ndarray] | None = None,
    fixed_selection: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray], dict]:
    """Summed cross-entropy over the batch's loss samples, with gradients.

    Loss samples are all positives plus either all negatives
    (``neg_fraction=None``) or the similarity-selected subset.  Dropout
    masks are drawn once per sample for this step (train mode only).

    ``fixed_masks`` / ``fixed_selection`` pin the non-differentiable
    choices so the remaining map params -> loss is smooth; the
    finite-difference harness perturbs params under pinned choices.
    Returns ``(loss, grads, aux)`` where aux records the choices made.
    """
    if len(batch.samples) == 0:
        raise ValueError("batch must be nonempty")
    x, caches = _batch_arrays(batch, params, config, vocab)

    if fixed_selection is not None:
        loss_rows = np.asarray(fixed_selection, dtype=np.intp)
    elif neg_fraction is None:
        loss_rows = np.arange(len(batch.samples), dtype=np.intp)
    else:
        kept_neg = select_top_negatives(x, batch.pos_indices, batch.neg_indices, neg_fraction, rng)
        loss_rows = np.sort(np.concatenate([batch.pos_indices, kept_neg])).astype(np.intp)

    labels = np.array([batch.samples[i].assigned_label for i in loss_rows], dtype=np.intp)
    x_loss = x[loss_rows]

    if fixed_masks is not None:
        masks = fixed_masks
    elif mode == "train" and config.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("train-mode loss needs an rng for dropout")
        masks = _draw_dropout_masks(len(loss_rows), params, config, rng)
    else:
        masks = None

    logits, head_cache = _head_forward(x_loss, params, config, masks)
    probs = _softmax(logits)
    picked = probs[np.arange(len(loss_rows)), labels]
    loss = float(-np.log(picked).sum())
    if not math.isfinite(loss):
        raise NumericError("non-finite values in tensor 'loss'")

    grads = zero_grads(params)
    d_logits = probs.copy()
    d_logits[np.arange(len(loss_rows)), labels] -= 1.0
    d_x_loss = _head_backward(d_logits, head_cache, params, config, grads)

    d_x = np.zeros_like(x)
    d_x[loss_rows] = d_x_loss
    d = config.embed_dim
    widths = np.array([s.end - s.start for s in batch.samples], dtype=np.intp)
    np.add.at(grads["width_table"], widths[loss_rows], d_x_loss[:, 2 * d :])
    for sid, (h, cache, rows) in caches.items():
        d_h = np.zeros_like(h)
        starts = np.array([batch.samples[i].start for i in rows], dtype=np.intp)
        ends = np.array([batch.samples[i].end for i in rows], dtype=np.intp)
        np.add.at(d_h, starts, d_x[rows, :d])
        np.add.at(d_h, ends, d_x[rows, d : 2 * d])
        _encoder_backward(d_h, cache, params, config, grads)

    aux = {"loss_rows": loss_rows, "masks": masks, "n_terms": len(loss_rows)}
    return loss, grads, aux


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamState:
    """First/second moment accumulators keyed like ``params.as_dict()``."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: SpanClassifierParams) -> "AdamState":
        return cls(m=zero_grads(params), v=zero_grads(params), t=0)


def adam_step(
    params: SpanClassifierParams, grads: dict[str, np.ndarray], state: AdamState, lr: float
) -> None:
    """One in-place Adam update (β1=0.9, β2=0.999, ε=1e-8)."""
    state.t += 1
    tensors = params.as_dict()
    bc1 = 1.0 - ADAM_BETA1**state.t
    bc2 = 1.0 - ADAM_BETA2**state.t
    for name, arr in tensors.items():
        g = grads[name]
        state.m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        arr -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


# ---------------------------------------------------------------------------
# Training loop


def _samples_by_sentence(dataset: SpanDataset) -> dict[int, list[SpanSample]]:
    by_sid: dict[int, list[SpanSample]] = {}
    for s in dataset.samples:
        by_sid.setdefault(s.sentence_id, []).append(s)
    for rows in by_sid.values():
        rows.sort(key=lambda s: (s.start, s.end))
    return by_sid


def iter_batches(
    dataset: SpanDataset, batch_sentences: int, order: np.ndarray
) -> Iterable[Batch]:
    """Group whole sentences' samples into batches, following ``order``."""
    by_sid = _samples_by_sentence(dataset)
    for lo in range(0, len(order), batch_sentences):
        sids = [int(sid) for sid in order[lo : lo + batch_sentences]]
        samples = tuple(s for sid in sids for s in by_sid.get(sid, []))
        if not samples:
            continue
        yield Batch(samples=samples, sentences={sid: dataset.sentences[sid] for sid in sids})


def train_epoch(
    dataset: SpanDataset,
    params: SpanClassifierParams,
    state: AdamState,
    config: ModelConfig,
    train_config: TrainConfig,
    vocab: Vocab,
    rng: np.random.Generator,
) -> float:
    """One pass over the corpus: shuffle sentences, one Adam step per batch.

    Returns the summed training loss across batches.
    """
    if dataset.max_width is None:
        raise ValueError("dataset has no enumerated samples; call enumerate_samples first")
    order = rng.permutation(dataset.num_sentences)
    total = 0.0
    for batch in iter_batches(dataset, train_config.batch_sentences, order):
        loss, grads, _ = loss_and_grads(
            batch, params, config, vocab, rng=rng, neg_fraction=train_config.neg_fraction, mode="train"
        )
        adam_step(params, grads, state, train_config.lr)
        total += loss
    params.check_finite()
    return total


def train_model(
    dataset: SpanDataset,
    config: ModelConfig,
    train_config: TrainConfig,
    seed: int,
    vocab: Vocab | None = None,
    epoch_callback: Callable[[int, SpanClassifierParams], None] | None = None,
) -> tuple[SpanClassifierParams, Vocab, list[float]]:
    """Train from fresh parameters; returns (params, vocab, per-epoch losses).

    ``epoch_callback(epoch, params)`` runs after each epoch — the hook
    used to record training dynamics.  Identical seeds and inputs give
    bit-identical parameters.
    """
    if vocab is None:
        vocab = Vocab.build(dataset.sentences)
    if config.vocab_size != len(vocab):
        raise ConfigError(f"config.vocab_size {config.vocab_size} != vocabulary size {len(vocab)}")
    if dataset.max_width is not None and dataset.max_width > config.max_width:
        raise ConfigError(
            f"dataset enumerated to width {dataset.max_width} exceeds model cap {config.max_width}"
        )
    params = init_params(config, seed)
    state = AdamState.for_params(params)
    rng = np.random.default_rng([seed, TRAIN_STREAM])
    losses = []
    for epoch in range(1, train_config.epochs + 1):
        loss = train_epoch(dataset, params, state, config, train_config, vocab, rng)
        losses.append(loss)
        log.debug("epoch %d/%d loss %.4f", epoch, train_config.epochs, loss)
        if epoch_callback is not None:
            epoch_callback(epoch, params)
    return params, vocab, losses


# ---------------------------------------------------------------------------
# Whole-dataset scoring and prediction


def eval_logits(
    dataset: SpanDataset,
    params: SpanClassifierParams,
    config: ModelConfig,
    vocab: Vocab,
    chunk_sentences: int = 64,
) -> np.ndarray:
    """Eval-mode logits for every sample, aligned with ``dataset.samples``.

    Pure function of the parameters: no dropout, no rng, fixed order.
    """
    out = np.empty((len(dataset.samples), config.num_classes))
    by_sid: dict[int, list[int]] = {}
    for i, s in enumerate(dataset.samples):
        by_sid.setdefault(s.sentence_id, []).append(i)
    sids = sorted(by_sid)
    for lo in range(0, len(sids), chunk_sentences):
        rows_chunk: list[int] = []
        mats = []
        for sid in sids[lo : lo + chunk_sentences]:
            rows = by_sid[sid]
            ids = vocab.encode_tokens(dataset.sentences[sid].tokens)
            h, _ = _encode_ids(ids, params, config)
            starts = np.array([dataset.samples[i].start for i in rows], dtype=np.intp)
            ends = np.array([dataset.samples[i].end for i in rows], dtype=np.intp)
            mats.append(_span_matrix(h, starts, ends, params))
            rows_chunk.extend(rows)
        logits, _ = _head_forward(np.concatenate(mats), params, config, None)
        out[rows_chunk] = logits
    return out


def resolve_overlaps(candidates: Iterable[tuple[float, int, int, int]]) -> tuple[Span, ...]:
    """Greedy non-overlap filter over ``(prob, start, end, label)`` candidates.

    Candidates are taken in order of descending probability, ties broken
    by earlier start and then shorter width; each is kept unless it
    shares a token with an already-kept span.  Result sorted by position.
    """
    ordered = sorted((-p, start, end - start, end, label) for p, start, end, label in candidates)
    kept: list[Span] = []
    covered: set[int] = set()
    for _, start, _, end, label in ordered:
        positions = set(range(start, end + 1))
        if positions & covered:
            continue
        covered |= positions
        kept.append(Span(start, end, label))
    return tuple(sorted(kept))


def predict_spans(
    sentence: Sentence, params: SpanClassifierParams, config: ModelConfig, vocab: Vocab
) -> tuple[Span, ...]:
    """Decode one sentence: non-overlapping spans of the argmax entity class.

    Every span up to the width cap is scored in eval mode; spans whose
    argmax class is non-entity are discarded, the rest go through
    :func:`resolve_overlaps`.
    """
    n = len(sentence)
    starts, ends = [], []
    for start in range(n):
        for end in range(start, min(start + config.max_width, n - 1) + 1):
            starts.append(start)
            ends.append(end)
    ids = vocab.encode_tokens(sentence.tokens)
    h, _ = _encode_ids(ids, params, config)
    x = _span_matrix(h, np.array(starts, dtype=np.intp), np.array(ends, dtype=np.intp), params)
    logits, _ = _head_forward(x, params, config, None)
    probs = _softmax(logits)
    best = probs.argmax(axis=1)
    candidates = [
        (float(probs[i, best[i]]), starts[i], ends[i], int(best[i]))
        for i in range(len(starts))
        if best[i] > 0
    ]
    return resolve_overlaps(candidates)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(
    path: str,
    params: SpanClassifierParams,
    config: ModelConfig,
    vocab: Vocab,
    seed: int,
    epoch: int,
) -> None:
    """Write a single-file checkpoint: JSON header line, then raw tensors.

    Tensors follow the header's manifest order as row-major little-endian
    float64 bytes.  The layout is stable; see the README for the exact
    format.
    """
    tensors = params.as_dict()
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_dict(),
        "seed": seed,
        "epoch": epoch,
        "vocab": list(vocab.tokens),
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, ensure_ascii=False).encode("utf-8"))
        fh.write(b"\n")
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[SpanClassifierParams, ModelConfig, Vocab, dict]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"invalid checkpoint header: {exc}") from None
        if header.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"unsupported checkpoint format {header.get('format')!r}")
        config = ModelConfig(**header["config"])
        vocab = Vocab(header["vocab"])
        arrays: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise DataError(f"checkpoint truncated in tensor {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise DataError("trailing bytes after final checkpoint tensor")

    expected = init_params(config, seed=0)
    expected_shapes = {name: arr.shape for name, arr in expected.as_dict().items()}
    if set(arrays) != set(expected_shapes):
        raise DataError("checkpoint tensor manifest does not match the config")
    for name, arr in arrays.items():
        if arr.shape != expected_shapes[name]:
            raise DataError(
                f"checkpoint tensor {name!r} has shape {arr.shape}, expected {expected_shapes[name]}"
            )
    params = SpanClassifierParams(
        embedding=arrays["embedding"],
        width_table=arrays["width_table"],
        hidden_w=[arrays[f"hidden_w_{i}"] for i in range(config.num_layers)],
        hidden_b=[arrays[f"hidden_b_{i}"] for i in range(config.num_layers)],
        out_w=arrays["out_w"],
        out_b=arrays["out_b"],
        mixer_w=arrays.get("mixer_w"),
        mixer_b=arrays.get("mixer_b"),
    )
    meta = {"seed": header["seed"], "epoch": header["epoch"]}
    return params, config, vocab, meta
