"""Command-line interface.

One config surface drives every command.  Settings resolve in strict
precedence order — command-line flag, then ``--config`` file, then the
named ``--preset``, then built-in defaults — and the resolved pipeline
settings are echoed into every cleaning report, so a report's ``config``
block can be fed back via ``--config`` to reproduce the run.

Exit codes: 0 success, 2 configuration problem, 3 malformed data,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace

from .corpus import (
    SpanDataset,
    dataset_stats,
    enumerate_samples,
    parse_bio,
    parse_spans,
    write_spans,
)
from .distant import (
    Gazetteer,
    NoiseSpec,
    SynthConfig,
    annotate,
    generate_synthetic,
    inject_noise,
    write_ledger,
)
from .dynamics import DynamicsLog
from .errors import ConfigError, DataError, NumericError
from .evaluation import audit_noise, export_datamap, score_spans
from .model import ModelConfig, Vocab, save_checkpoint
from .pipeline import CleaningConfig, run_cleaning, train_final, write_run_artifacts

log = logging.getLogger(__name__)

# Hyperparameter bundles for the two corpus regimes we ship settings
# for: newswire-scale corpora, and small corpora that need twice the
# epochs for the margin statistics to settle.
PRESETS: dict[str, dict] = {
    "conll-preset": {
        "epochs": 5,
        "lr": 1e-5,
        "batch_sentences": 16,
        "k_pos": 100.0,
        "k_neg": 90.0,
        "neg_fraction": 0.05,
        "model": {
            "hidden_dim": 150,
            "num_layers": 2,
            "width_embed_dim": 150,
            "dropout_rate": 0.2,
        },
    },
    "small-corpus-preset": {
        "epochs": 10,
        "lr": 1e-5,
        "batch_sentences": 16,
        "k_pos": 100.0,
        "k_neg": 90.0,
        "neg_fraction": 0.05,
        "model": {
            "hidden_dim": 150,
            "num_layers": 2,
            "width_embed_dim": 150,
            "dropout_rate": 0.2,
        },
    },
}

_MODEL_KEYS = {
    "vocab_size",
    "embed_dim",
    "encoder_variant",
    "window_radius",
    "hidden_dim",
    "num_layers",
    "width_embed_dim",
    "max_width",
    "num_classes",
    "dropout_rate",
}
_NOISE_KEYS = {"fn_rate", "fp_type_rate", "fp_spurious_rate", "seed"}
_SYNTH_KEYS = {
    "vocab_size",
    "num_types",
    "num_sentences",
    "min_len",
    "max_len",
    "seed",
    "max_entities",
    "max_entity_len",
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one command invocation."""

    # corpus paths and formats
    train_path: str | None = None
    gold_path: str | None = None
    dev_path: str | None = None
    test_path: str | None = None
    pred_path: str | None = None
    gazetteer_path: str | None = None
    dynamics_path: str | None = None
    format: str = "spans"
    entity_types: tuple[str, ...] | None = None
    # cleaning pipeline
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
    tau_pos_override: float | None = None
    tau_neg_override: float | None = None
    # model overrides (vocab_size and num_classes are derived from the
    # corpus unless explicitly pinned, e.g. by a report's config echo)
    model: dict = field(default_factory=dict)
    # harness knobs
    noise: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    # output
    out_dir: str = "run"
    audit: bool = False

    def __post_init__(self) -> None:
        if self.format not in ("bio", "spans"):
            raise ConfigError(f"format must be 'bio' or 'spans', not {self.format!r}")
        for name in ("k_pos", "k_neg"):
            if not 0.0 < getattr(self, name) <= 100.0:
                raise ConfigError(f"{name} must be a percentile in (0, 100]")
        if not 0.0 < self.neg_fraction <= 1.0:
            raise ConfigError("neg_fraction must be in (0, 1]")
        for section, allowed in (
            ("model", _MODEL_KEYS),
            ("noise", _NOISE_KEYS),
            ("synth", _SYNTH_KEYS),
        ):
            unknown = set(getattr(self, section)) - allowed
            if unknown:
                raise ConfigError(
                    f"unknown {section} setting(s): {', '.join(sorted(unknown))}"
                )


def _deep_update(base: dict, extra: dict) -> None:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value


_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge preset, config file, and flags into one validated RunConfig."""
    merged: dict = {"model": {}, "noise": {}, "synth": {}}

    preset = getattr(args, "preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; available: {', '.join(sorted(PRESETS))}"
            )
        _deep_update(merged, PRESETS[preset])

    config_path = getattr(args, "config", None)
    if config_path is not None:
        try:
            with open(config_path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        unknown = set(data) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(
                f"unknown config key(s) in {config_path}: {', '.join(sorted(unknown))}"
            )
        _deep_update(merged, data)

    _deep_update(merged, _cli_overrides(args))

    if merged.get("entity_types") is not None:
        merged["entity_types"] = tuple(merged["entity_types"])
    return RunConfig(**merged)


# argparse dest -> (config key, optional nested section)
_FLAG_MAP = {
    "train": ("train_path", None),
    "gold": ("gold_path", None),
    "dev": ("dev_path", None),
    "test": ("test_path", None),
    "pred": ("pred_path", None),
    "gazetteer": ("gazetteer_path", None),
    "dynamics": ("dynamics_path", None),
    "format": ("format", None),
    "seed": ("seed", None),
    "out": ("out_dir", None),
    "epochs": ("epochs", None),
    "lr": ("lr", None),
    "batch": ("batch_sentences", None),
    "k_pos": ("k_pos", None),
    "k_neg": ("k_neg", None),
    "topneg": ("use_top_negatives", None),
    "neg_fraction": ("neg_fraction", None),
    "mask_removed_positives": ("mask_removed_positives", None),
    "store_logits": ("store_logits", None),
    "tau_pos": ("tau_pos_override", None),
    "tau_neg": ("tau_neg_override", None),
    "audit": ("audit", None),
    "encoder": ("encoder_variant", "model"),
    "embed_dim": ("embed_dim", "model"),
    "hidden_dim": ("hidden_dim", "model"),
    "num_layers": ("num_layers", "model"),
    "width_embed_dim": ("width_embed_dim", "model"),
    "max_width": ("max_width", "model"),
    "window_radius": ("window_radius", "model"),
    "dropout": ("dropout_rate", "model"),
    "fn_rate": ("fn_rate", "noise"),
    "fp_type_rate": ("fp_type_rate", "noise"),
    "spurious_rate": ("fp_spurious_rate", "noise"),
    "sentences": ("num_sentences", "synth"),
    "vocab": ("vocab_size", "synth"),
    "num_types": ("num_types", "synth"),
    "min_len": ("min_len", "synth"),
    "max_len": ("max_len", "synth"),
    "max_entities": ("max_entities", "synth"),
    "max_entity_len": ("max_entity_len", "synth"),
}


def _cli_overrides(args: argparse.Namespace) -> dict:
    out: dict = {"model": {}, "noise": {}, "synth": {}}
    for dest, (key, section) in _FLAG_MAP.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if section is None:
            out[key] = value
        else:
            out[section][key] = value
    types = getattr(args, "types", None)
    if types is not None:
        out["entity_types"] = tuple(t for t in types.split(",") if t)
    return out


# ---------------------------------------------------------------------------
# corpus loading


def _require(value: str | None, flag: str, what: str) -> str:
    if value is None:
        raise ConfigError(f"missing {flag}: {what}")
    if not os.path.exists(value):
        raise ConfigError(f"{flag} path does not exist: {value}")
    return value


def _load_corpus(config: RunConfig, path: str, as_gold: bool = False) -> SpanDataset:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if config.format == "bio":
        return parse_bio(text, entity_types=config.entity_types, as_gold=as_gold)
    return parse_spans(text, entity_types=config.entity_types)


def _gold_layer(dataset: SpanDataset):
    """Per-sentence gold spans; a file without a gold layer contributes
    its annotation layer (useful when the reference file is itself gold)."""
    return [
        sent.gold_spans if sent.gold_spans is not None else sent.distant_spans
        for sent in dataset.sentences
    ]


def _attach_gold(dataset: SpanDataset, gold_source: SpanDataset) -> SpanDataset:
    if dataset.label_set != gold_source.label_set:
        raise ConfigError(
            "train and gold corpora use different entity types; pass --types to impose one set"
        )
    if len(dataset.sentences) != len(gold_source.sentences):
        raise DataError(
            f"gold corpus has {len(gold_source.sentences)} sentences, "
            f"train corpus has {len(dataset.sentences)}"
        )
    layers = _gold_layer(gold_source)
    sentences = []
    for sid, (sent, gold_sent) in enumerate(zip(dataset.sentences, gold_source.sentences)):
        if sent.tokens != gold_sent.tokens:
            raise DataError(f"sentence {sid}: tokens differ between train and gold corpora")
        sentences.append(replace(sent, gold_spans=tuple(layers[sid])))
    return replace(dataset, sentences=tuple(sentences))


def _ensure_gold(dataset: SpanDataset) -> SpanDataset:
    sentences = tuple(
        sent if sent.gold_spans is not None else replace(sent, gold_spans=sent.distant_spans)
        for sent in dataset.sentences
    )
    return replace(dataset, sentences=sentences)


def _build_model_config(config: RunConfig, vocab_size: int, num_classes: int) -> ModelConfig:
    overrides = dict(config.model)
    overrides.setdefault("vocab_size", vocab_size)
    overrides.setdefault("num_classes", num_classes)
    return ModelConfig(**overrides)


def _build_cleaning_config(config: RunConfig, model: ModelConfig) -> CleaningConfig:
    return CleaningConfig(
        model=model,
        epochs=config.epochs,
        lr=config.lr,
        batch_sentences=config.batch_sentences,
        k_pos=config.k_pos,
        k_neg=config.k_neg,
        use_top_negatives=config.use_top_negatives,
        neg_fraction=config.neg_fraction,
        seed=config.seed,
        mask_removed_positives=config.mask_removed_positives,
        store_logits=config.store_logits,
        tau_pos_override=config.tau_pos_override,
        tau_neg_override=config.tau_neg_override,
    )


def _out_path(config: RunConfig, name: str) -> str:
    os.makedirs(config.out_dir, exist_ok=True)
    return os.path.join(config.out_dir, name)


def _write(path: str, content: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(content)


# ---------------------------------------------------------------------------
# commands


def cmd_clean(config: RunConfig) -> int:
    path = _require(config.train_path, "--train", "the distantly annotated training corpus")
    dataset = _load_corpus(config, path)
    if config.gold_path is not None:
        gold_path = _require(config.gold_path, "--gold", "the gold reference corpus")
        dataset = _attach_gold(dataset, _load_corpus(config, gold_path, as_gold=True))

    vocab = Vocab.build(dataset.sentences)
    model = _build_model_config(config, len(vocab), dataset.label_set.num_types + 1)
    enumerated = enumerate_samples(dataset, model.max_width)
    cleaning = _build_cleaning_config(config, model)

    cleaned, report, probe_dyn, main_dyn = run_cleaning(enumerated, cleaning)
    paths = write_run_artifacts(config.out_dir, cleaned, report, probe_dyn, main_dyn)
    for line in report.summary_lines():
        print(line)
    print(f"wrote {len(paths)} artifacts to {config.out_dir}")
    return 0


def cmd_train(config: RunConfig) -> int:
    path = _require(config.train_path, "--train", "the (cleaned) training corpus")
    dataset = _load_corpus(config, path)
    vocab = Vocab.build(dataset.sentences)
    model = _build_model_config(config, len(vocab), dataset.label_set.num_types + 1)
    enumerated = enumerate_samples(dataset, model.max_width)
    cleaning = _build_cleaning_config(config, model)

    eval_path = config.test_path or config.dev_path
    eval_dataset = None
    if eval_path is not None:
        flag = "--test" if config.test_path else "--dev"
        eval_dataset = _ensure_gold(
            _load_corpus(config, _require(eval_path, flag, "the evaluation corpus"), as_gold=True)
        )
        if eval_dataset.label_set != dataset.label_set:
            raise ConfigError(
                "evaluation corpus uses different entity types; pass --types to impose one set"
            )

    params, vocab, scores = train_final(enumerated, cleaning, eval_dataset)
    ckpt = _out_path(config, "model.ckpt")
    save_checkpoint(ckpt, params, model, vocab, config.seed, config.epochs)
    print(f"trained on {len(enumerated.samples)} samples; checkpoint: {ckpt}")
    if scores is not None:
        micro, per_class = scores
        print(
            f"micro: precision {micro.precision:.3f} recall {micro.recall:.3f} "
            f"F1 {micro.f1:.3f}"
        )
        for name in sorted(per_class):
            s = per_class[name]
            print(f"{name}: precision {s.precision:.3f} recall {s.recall:.3f} F1 {s.f1:.3f}")
    return 0


def cmd_eval(config: RunConfig) -> int:
    pred_path = _require(config.pred_path, "--pred", "the predictions (or audited) corpus")
    predicted = _load_corpus(config, pred_path)
    if config.gold_path is not None:
        gold_path = _require(config.gold_path, "--gold", "the gold reference corpus")
        predicted = _attach_gold(predicted, _load_corpus(config, gold_path, as_gold=True))
    for sid, sent in enumerate(predicted.sentences):
        if sent.gold_spans is None:
            raise DataError(
                f"sentence {sid} has no gold annotations; embed gold_spans or pass --gold"
            )

    if config.audit:
        rows = audit_noise(predicted)
        print(f"{'type':<12} {'annotated':>9} {'correct':>9} {'false':>9}")
        for name in predicted.label_set.entity_types:
            r = rows[name]
            print(
                f"{name:<12} {r.positives:>9} {r.true_positives:>9} "
                f"{r.false_annotations:>9}"
            )
        return 0

    gold_layers = [sent.gold_spans for sent in predicted.sentences]
    pred_layers = [sent.distant_spans for sent in predicted.sentences]
    micro, per_class = score_spans(pred_layers, gold_layers, predicted.label_set)
    print(
        f"micro: precision {micro.precision:.3f} recall {micro.recall:.3f} F1 {micro.f1:.3f}"
    )
    for name in sorted(per_class):
        s = per_class[name]
        print(f"{name}: precision {s.precision:.3f} recall {s.recall:.3f} F1 {s.f1:.3f}")
    return 0


def cmd_synth(config: RunConfig) -> int:
    synth = dict(config.synth)
    synth.setdefault("seed", config.seed)
    dataset, _ = generate_synthetic(SynthConfig(**synth))
    # ship the clean corpus with its annotation layer equal to gold, so
    # it can be evaluated, corrupted, or trained on as-is
    dataset = replace(
        dataset,
        sentences=tuple(
            replace(s, distant_spans=s.gold_spans) for s in dataset.sentences
        ),
    )
    out = _out_path(config, "synthetic.jsonl")
    _write(out, write_spans(dataset))
    stats = dataset_stats(dataset)
    print(f"{stats.num_sentences} sentences, {stats.num_spans} entity spans -> {out}")
    return 0


def cmd_inject(config: RunConfig) -> int:
    path = _require(config.train_path, "--train", "the clean corpus to corrupt")
    dataset = _ensure_gold(_load_corpus(config, path))
    noise = dict(config.noise)
    noise.setdefault("seed", config.seed)
    spec = NoiseSpec(**noise)
    max_width = config.model.get("max_width", ModelConfig.__dataclass_fields__["max_width"].default)
    noisy, ledger = inject_noise(dataset, spec, max_width=max_width)
    noisy_out = _out_path(config, "noisy.jsonl")
    ledger_out = _out_path(config, "ledger.jsonl")
    _write(noisy_out, write_spans(noisy))
    _write(ledger_out, write_ledger(ledger))
    ops = {"dropped": 0, "flipped": 0, "added": 0}
    for entry in ledger:
        ops[entry["op"]] += 1
    print(
        f"dropped {ops['dropped']}, flipped {ops['flipped']}, added {ops['added']} "
        f"-> {noisy_out} (ledger: {ledger_out})"
    )
    return 0


def cmd_annotate(config: RunConfig) -> int:
    path = _require(config.train_path, "--train", "the corpus to annotate")
    gaz_path = _require(config.gazetteer_path, "--gazetteer", "the surface-form/type table")
    dataset = _load_corpus(config, path)
    with open(gaz_path, encoding="utf-8") as fh:
        gazetteer = Gazetteer.from_text(fh.read())
    if not gazetteer.entries:
        # nothing to match: emit the corpus with an empty annotation layer
        annotated = replace(
            dataset,
            sentences=tuple(replace(s, distant_spans=()) for s in dataset.sentences),
        )
    else:
        annotated = annotate(dataset, gazetteer)
    out = _out_path(config, "annotated.jsonl")
    _write(out, write_spans(annotated))
    total = sum(len(s.distant_spans) for s in annotated.sentences)
    print(f"annotated {total} spans across {len(annotated.sentences)} sentences -> {out}")
    return 0


def cmd_datamap(config: RunConfig) -> int:
    path = _require(config.dynamics_path, "--dynamics", "a training-dynamics dump")
    with open(path, encoding="utf-8") as fh:
        dyn = DynamicsLog.from_jsonl(fh.read())
    csv_path, svg_path = export_datamap(dyn.records, config.out_dir)
    print(f"{len(dyn.records)} samples -> {csv_path}, {svg_path}")
    return 0


def cmd_stats(config: RunConfig) -> int:
    path = _require(config.train_path, "--train", "the corpus to summarize")
    dataset = _load_corpus(config, path)
    max_width = config.model.get("max_width", ModelConfig.__dataclass_fields__["max_width"].default)
    stats = dataset_stats(enumerate_samples(dataset, max_width))
    print(f"sentences:        {stats.num_sentences}")
    print(f"tokens:           {stats.num_tokens}")
    print(f"entity spans:     {stats.num_spans}")
    for name in sorted(stats.spans_per_class):
        print(f"  {name:<14} {stats.spans_per_class[name]}")
    print(f"over-width spans: {stats.num_overwidth}")
    print(f"masked spans:     {stats.num_masked}")
    print(
        f"samples:          {stats.num_samples} "
        f"({stats.num_positive_samples} positive, {stats.num_negative_samples} negative)"
    )
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--preset", metavar="NAME", help="built-in settings bundle")
    common.add_argument("--seed", type=int, metavar="N")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--format", choices=("bio", "spans"))
    common.add_argument("--types", metavar="A,B,C", help="comma-separated entity types")
    common.add_argument("--verbose", action="store_true", help="log progress details")

    corpora = argparse.ArgumentParser(add_help=False)
    corpora.add_argument("--train", metavar="PATH")
    corpora.add_argument("--gold", metavar="PATH")
    corpora.add_argument("--dev", metavar="PATH")
    corpora.add_argument("--test", metavar="PATH")

    pipeline = argparse.ArgumentParser(add_help=False)
    pipeline.add_argument("--epochs", type=int)
    pipeline.add_argument("--lr", type=float)
    pipeline.add_argument("--batch", type=int, help="sentences per batch")
    pipeline.add_argument("--k-pos", dest="k_pos", type=float, metavar="PCT")
    pipeline.add_argument("--k-neg", dest="k_neg", type=float, metavar="PCT")
    pipeline.add_argument(
        "--topneg", dest="topneg", action=argparse.BooleanOptionalAction, default=None
    )
    pipeline.add_argument("--neg-fraction", dest="neg_fraction", type=float)
    pipeline.add_argument(
        "--mask-removed-positives",
        dest="mask_removed_positives",
        action=argparse.BooleanOptionalAction,
        default=None,
    )
    pipeline.add_argument(
        "--store-logits", dest="store_logits", action="store_true", default=None
    )
    pipeline.add_argument("--tau-pos", dest="tau_pos", type=float, help=argparse.SUPPRESS)
    pipeline.add_argument("--tau-neg", dest="tau_neg", type=float, help=argparse.SUPPRESS)
    pipeline.add_argument("--encoder", choices=("lookup", "window"))
    pipeline.add_argument("--embed-dim", dest="embed_dim", type=int)
    pipeline.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    pipeline.add_argument("--num-layers", dest="num_layers", type=int)
    pipeline.add_argument("--width-embed-dim", dest="width_embed_dim", type=int)
    pipeline.add_argument("--max-width", dest="max_width", type=int)
    pipeline.add_argument("--window-radius", dest="window_radius", type=int)
    pipeline.add_argument("--dropout", type=float)

    noise = argparse.ArgumentParser(add_help=False)
    noise.add_argument("--fn-rate", dest="fn_rate", type=float)
    noise.add_argument("--fp-type-rate", dest="fp_type_rate", type=float)
    noise.add_argument("--spurious-rate", dest="spurious_rate", type=float)

    synth = argparse.ArgumentParser(add_help=False)
    synth.add_argument("--sentences", type=int)
    synth.add_argument("--vocab", type=int)
    synth.add_argument("--num-types", dest="num_types", type=int)
    synth.add_argument("--min-len", dest="min_len", type=int)
    synth.add_argument("--max-len", dest="max_len", type=int)
    synth.add_argument("--max-entities", dest="max_entities", type=int)
    synth.add_argument("--max-entity-len", dest="max_entity_len", type=int)

    parser = argparse.ArgumentParser(
        prog="spanclean",
        description="Clean distantly supervised span annotations via training dynamics.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sp = sub.add_parser(
        "clean",
        parents=[common, corpora, pipeline],
        help="two-run cleaning pipeline: estimate cutoffs, filter, report",
    )
    sp.set_defaults(func=cmd_clean)
    sp = sub.add_parser(
        "train",
        parents=[common, corpora, pipeline],
        help="train the span classifier, optionally scoring a gold split",
    )
    sp.set_defaults(func=cmd_train)
    sp = sub.add_parser(
        "eval",
        parents=[common],
        help="score a predictions file against gold, or print the noise audit",
    )
    sp.add_argument("--pred", metavar="PATH")
    sp.add_argument("--gold", metavar="PATH")
    sp.add_argument("--audit", action="store_true", default=None)
    sp.set_defaults(func=cmd_eval)
    sp = sub.add_parser(
        "synth", parents=[common, synth], help="generate a gold-annotated synthetic corpus"
    )
    sp.set_defaults(func=cmd_synth)
    sp = sub.add_parser(
        "inject",
        parents=[common, corpora, noise],
        help="corrupt a gold corpus into distant annotations plus a ledger",
    )
    sp.set_defaults(func=cmd_inject)
    sp = sub.add_parser(
        "annotate",
        parents=[common, corpora],
        help="annotate a corpus by greedy longest gazetteer match",
    )
    sp.add_argument("--gazetteer", metavar="PATH")
    sp.set_defaults(func=cmd_annotate)
    sp = sub.add_parser(
        "datamap",
        parents=[common],
        help="render a dynamics dump as a confidence/variability scatter plus CSV",
    )
    sp.add_argument("--dynamics", metavar="PATH")
    sp.set_defaults(func=cmd_datamap)
    sp = sub.add_parser("stats", parents=[common, corpora, pipeline], help="corpus summary")
    sp.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = resolve_config(args)
        return args.func(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
