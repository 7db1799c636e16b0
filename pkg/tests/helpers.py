"""Shared oracles for the test suite.

The important one is the central finite-difference gradient check: it
pins every stochastic choice (dropout masks, negative selection), turns
the parameters into one flat vector, and compares the analytic gradient
of the loss against (L(p+eps) - L(p-eps)) / (2 eps) coordinate by
coordinate.
"""

import math

import numpy as np

from spanclean.corpus import LabelSet, Sentence, Span, SpanDataset, enumerate_samples
from spanclean.model import (
    Batch,
    ModelConfig,
    SpanClassifierParams,
    Vocab,
    _draw_dropout_masks,
    init_params,
    loss_and_grads,
)

FD_EPS = 1e-5
# guarded relative error: coordinates whose gradient is below the floor
# are noise-dominated in the difference quotient, so the floor keeps the
# comparison meaningful (|a - f| <= tol * floor there)
REL_ERR_FLOOR = 1e-4


def flatten_params(params: SpanClassifierParams) -> np.ndarray:
    return np.concatenate([arr.ravel() for arr in params.as_dict().values()])


def params_from_vector(vec: np.ndarray, template: SpanClassifierParams) -> SpanClassifierParams:
    out = template.copy()
    offset = 0
    for arr in out.as_dict().values():
        n = arr.size
        arr[...] = vec[offset : offset + n].reshape(arr.shape)
        offset += n
    assert offset == vec.size
    return out


def random_training_setup(seed: int, encoder_variant: str, dropout: float = 0.2):
    """A small random corpus, batch, config, and params for gradient checks."""
    rng = np.random.default_rng(seed)
    vocab_tokens = [f"tok{i}" for i in range(int(rng.integers(6, 19)))]
    num_types = int(rng.integers(1, 4))
    label_set = LabelSet(tuple(f"C{i}" for i in range(1, num_types + 1)))
    sentences = []
    for _ in range(int(rng.integers(2, 5))):
        n = int(rng.integers(3, 8))
        tokens = tuple(vocab_tokens[int(i)] for i in rng.integers(0, len(vocab_tokens), size=n))
        spans = []
        covered = set()
        for _ in range(int(rng.integers(0, 3))):
            width = int(rng.integers(0, min(3, n)))
            start = int(rng.integers(0, n - width))
            positions = set(range(start, start + width + 1))
            if positions & covered:
                continue
            covered |= positions
            spans.append(Span(start, start + width, int(rng.integers(1, num_types + 1))))
        sentences.append(Sentence(tokens, distant_spans=tuple(sorted(spans))))
    dataset = SpanDataset(label_set, tuple(sentences))
    dataset = enumerate_samples(dataset, max_width=3)
    vocab = Vocab.build(dataset.sentences)
    config = ModelConfig(
        vocab_size=len(vocab),
        embed_dim=int(rng.integers(2, 7)),
        encoder_variant=encoder_variant,
        window_radius=int(rng.integers(0, 3)),
        hidden_dim=int(rng.integers(3, 9)),
        num_layers=int(rng.integers(1, 3)),
        width_embed_dim=int(rng.integers(2, 5)),
        max_width=3,
        num_classes=num_types + 1,
        dropout_rate=dropout,
    )
    params = init_params(config, seed=int(rng.integers(0, 2**31)))
    # keep the check away from ReLU kinks: with zero-initialized biases a
    # fully-zeroed activation row puts a pre-activation exactly at 0, where
    # the central difference straddles the nondifferentiable point
    for name, arr in params.as_dict().items():
        if name.endswith("_b") or "_b_" in name:
            arr[...] = rng.normal(0.0, 0.1, size=arr.shape)
    batch = Batch(samples=dataset.samples, sentences=dict(enumerate(dataset.sentences)))
    return dataset, batch, config, params, vocab


def max_gradient_rel_err(
    batch: Batch,
    params: SpanClassifierParams,
    config: ModelConfig,
    vocab: Vocab,
    with_dropout: bool,
    seed: int = 0,
    eps: float = FD_EPS,
) -> float:
    """Worst guarded relative error between analytic and FD gradients."""
    rng = np.random.default_rng(seed)
    selection = np.arange(len(batch.samples), dtype=np.intp)
    masks = (
        _draw_dropout_masks(len(selection), params, config, rng) if with_dropout else None
    )

    def loss_at(vec: np.ndarray) -> float:
        p = params_from_vector(vec, params)
        loss, _, _ = loss_and_grads(
            batch, p, config, vocab, mode="eval", fixed_masks=masks, fixed_selection=selection
        )
        return loss

    _, grads, _ = loss_and_grads(
        batch, params, config, vocab, mode="eval", fixed_masks=masks, fixed_selection=selection
    )
    analytic = np.concatenate([grads[name].ravel() for name in params.as_dict()])
    base = flatten_params(params)
    worst = 0.0
    for i in range(base.size):
        bumped = base.copy()
        bumped[i] = base[i] + eps
        hi = loss_at(bumped)
        bumped[i] = base[i] - eps
        lo = loss_at(bumped)
        fd = (hi - lo) / (2 * eps)
        denom = max(abs(analytic[i]), abs(fd), REL_ERR_FLOOR)
        worst = max(worst, abs(analytic[i] - fd) / denom)
    return worst


def brute_force_top_negatives(
    span_vectors: np.ndarray,
    pos_indices: np.ndarray,
    neg_indices: np.ndarray,
    fraction: float,
) -> set[int]:
    """Reference selection: explicit cosine loops, top-k with index ties."""
    assert len(pos_indices) > 0
    scored = []
    for rank, ni in enumerate(neg_indices):
        total = 0.0
        for pi in pos_indices:
            a, b = span_vectors[ni], span_vectors[pi]
            na, nb = np.linalg.norm(a), np.linalg.norm(b)
            total += float(a @ b / (na * nb)) if na > 0 and nb > 0 else 0.0
        scored.append((-total / len(pos_indices), rank, int(ni)))
    k = max(1, math.ceil(fraction * len(neg_indices)))
    return {ni for _, _, ni in sorted(scored)[:k]}
