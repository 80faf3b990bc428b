"""Command-line entry point: ingest, match, augment, assess, train, eval,
ablate, kappa, serve-annotate, and export, driven by one JSON config."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import annotate, augment, corpus, evaluate, matching, metrics, providers, trainer


class ConfigError(ValueError):
    pass


_TRAINING_KEYS = {
    "margin",
    "batch_size",
    "learning_rate",
    "warmup_fraction",
    "epochs",
    "seed",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
}
_ASSESS_KEYS = {"distortion", "center_per_class"}
_PROVIDER_KEYS = {"kind", "path", "base_url", "model", "cache_path", "batch_size", "timeout", "api_key_env"}
_LLM_KEYS = {
    "base_url",
    "model",
    "temperature",
    "max_tokens",
    "max_retries",
    "backoff_base",
    "backoff_factor",
    "timeout",
    "api_key_env",
    "concurrency",
}
_TOP_KEYS = {
    "corpus",
    "provider",
    "llm",
    "training",
    "assess",
    "train_fraction",
    "out_dir",
    "seed",
    "min_similarity",
}


@dataclasses.dataclass
class PipelineConfig:
    corpus: str | None = None
    provider: dict | None = None
    llm: dict | None = None
    training: trainer.TrainingConfig = dataclasses.field(default_factory=trainer.TrainingConfig)
    assess: metrics.AssessConfig = dataclasses.field(default_factory=metrics.AssessConfig)
    train_fraction: float = 0.85
    out_dir: str = "out"
    seed: int = 0
    min_similarity: float = 0.0
    base_dir: Path = dataclasses.field(default_factory=Path)
    training_seed_explicit: bool = False


def _check_keys(section: dict, allowed: set[str], context: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown config key: {context}{key}")


def load_config(path) -> PipelineConfig:
    """Read and validate the pipeline config, filling defaults."""
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"config file not found: {config_path}")
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "")

    training_section = raw.get("training", {})
    _check_keys(training_section, _TRAINING_KEYS, "training.")
    try:
        training = trainer.TrainingConfig(**training_section)
    except TypeError as exc:
        raise ConfigError(f"invalid training config: {exc}") from exc
    except trainer.TrainerError as exc:
        raise ConfigError(f"invalid training config: {exc}") from exc

    assess_section = raw.get("assess", {})
    _check_keys(assess_section, _ASSESS_KEYS, "assess.")
    try:
        assess = metrics.AssessConfig(**assess_section)
    except metrics.MetricError as exc:
        raise ConfigError(f"invalid assess config: {exc}") from exc

    provider = raw.get("provider")
    if provider is not None:
        _check_keys(provider, _PROVIDER_KEYS, "provider.")
        if provider.get("kind") not in ("file", "http"):
            raise ConfigError(f"provider.kind must be 'file' or 'http', got {provider.get('kind')!r}")
    llm = raw.get("llm")
    if llm is not None:
        _check_keys(llm, _LLM_KEYS, "llm.")

    train_fraction = float(raw.get("train_fraction", 0.85))
    if not 0 < train_fraction < 1:
        raise ConfigError(f"invalid value for train_fraction: {train_fraction}")

    return PipelineConfig(
        corpus=raw.get("corpus"),
        provider=provider,
        llm=llm,
        training=training,
        assess=assess,
        train_fraction=train_fraction,
        out_dir=raw.get("out_dir", "out"),
        seed=int(raw.get("seed", 0)),
        min_similarity=float(raw.get("min_similarity", 0.0)),
        base_dir=config_path.parent,
        training_seed_explicit="seed" in training_section,
    )


def derive_seed(global_seed: int, stage: str) -> int:
    """Per-stage seed: the stage name is hashed into the global seed."""
    digest = hashlib.sha256(f"{global_seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def _resolve(config: PipelineConfig, path_value: str) -> Path:
    path = Path(path_value)
    return path if path.is_absolute() else config.base_dir / path


def _out_dir(config: PipelineConfig, args) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else _resolve(config, config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _config_echo(config: PipelineConfig) -> dict:
    return {
        "corpus": config.corpus,
        "provider": config.provider,
        "llm": config.llm,
        "training": dataclasses.asdict(config.training),
        "assess": dataclasses.asdict(config.assess),
        "train_fraction": config.train_fraction,
        "out_dir": config.out_dir,
        "seed": config.seed,
        "min_similarity": config.min_similarity,
    }


def _write_run_manifest(out: Path, subcommand: str, config: PipelineConfig, inputs: list[Path]) -> None:
    manifest = {
        "subcommand": subcommand,
        "seed": config.seed,
        "inputs": {str(p): _sha256_file(p) for p in inputs if p.is_file()},
        "config": _config_echo(config),
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    (out / f"manifest-{subcommand}.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8"
    )


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, ensure_ascii=False, sort_keys=True), encoding="utf-8")


def _provider(config: PipelineConfig, args):
    if not config.provider:
        raise ConfigError("this subcommand requires a 'provider' config entry")
    return providers.provider_from_spec(
        config.provider, offline=getattr(args, "offline", False), base_dir=config.base_dir
    )


def _llm_config(config: PipelineConfig, args, out: Path) -> augment.LLMConfig:
    section = dict(config.llm or {})
    section.setdefault("cache_dir", str(out / "llm_cache"))
    return augment.LLMConfig(offline=getattr(args, "offline", False), **section)


def cmd_ingest(config: PipelineConfig, args) -> int:
    if not config.corpus:
        raise ConfigError("ingest requires a 'corpus' manifest path in the config")
    manifest_path = _resolve(config, config.corpus)
    documents = corpus.load_corpus(manifest_path)
    out = _out_dir(config, args)

    sentences = []
    doc_rows = []
    for doc in documents:
        doc_rows.append({"id": doc.id, "company": doc.company, "period": doc.period})
        for sentence in corpus.segment_sentences(doc):
            if sentence.token_count >= args.min_tokens:
                sentences.append(sentence)

    with open(out / "documents.jsonl", "w", encoding="utf-8") as handle:
        for row in doc_rows:
            handle.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    corpus.write_sentences(sentences, out / "sentences.jsonl")
    _write_run_manifest(out, "ingest", config, [manifest_path])
    print(f"ingested {len(documents)} documents, {len(sentences)} sentences -> {out}")
    return 0


def _load_documents_index(out: Path) -> dict[str, dict]:
    index = {}
    for line in (out / "documents.jsonl").read_text(encoding="utf-8").splitlines():
        if line.strip():
            row = json.loads(line)
            index[row["id"]] = row
    return index


def cmd_match(config: PipelineConfig, args) -> int:
    out = _out_dir(config, args)
    sentences = corpus.read_sentences(out / "sentences.jsonl")
    docs = _load_documents_index(out)
    provider = _provider(config, args)

    by_company: dict[str, dict[str, list]] = {}
    for sentence in sentences:
        doc = docs[sentence.doc_id]
        by_company.setdefault(doc["company"], {}).setdefault(doc["period"], []).append(sentence)

    all_pairs = []
    for company in sorted(by_company):
        periods = sorted(by_company[company])
        if len(periods) < 2:
            continue
        earlier, later = periods[0], periods[-1]
        sents_a = by_company[company][earlier]
        sents_b = by_company[company][later]
        rows = provider.embed([s.text for s in sents_a])
        cols = provider.embed([s.text for s in sents_b])
        sim = matching.similarity_matrix(
            rows, cols, [s.id for s in sents_a], [s.id for s in sents_b]
        )
        assignment = matching.hungarian_assign(sim)
        pairs = matching.build_pairs(
            assignment, sents_a, sents_b, min_similarity=args.min_similarity, company=company
        )
        all_pairs.extend(pairs)

    if args.sample and args.sample < len(all_pairs):
        rng = np.random.default_rng(derive_seed(config.seed, "match"))
        chosen = rng.choice(len(all_pairs), size=args.sample, replace=False)
        all_pairs = [all_pairs[i] for i in sorted(chosen)]

    matching.write_pairs(all_pairs, out / "pairs.jsonl")
    _write_run_manifest(out, "match", config, [out / "sentences.jsonl"])
    print(f"matched {len(all_pairs)} pairs -> {out / 'pairs.jsonl'}")
    return 0


def cmd_augment(config: PipelineConfig, args) -> int:
    out = _out_dir(config, args)
    sentences = corpus.read_sentences(out / "sentences.jsonl")
    docs = _load_documents_index(out)
    doc_meta = {doc_id: (row["company"], row["period"]) for doc_id, row in docs.items()}

    policy = args.policy
    if policy == "random":
        policy = f"random:{derive_seed(config.seed, 'augment')}"

    llm_cfg = _llm_config(config, args, out)
    dataset = augment.build_dataset(
        sentences,
        policy,
        llm_cfg,
        checkpoint_path=out / "triplets.partial.jsonl",
        doc_meta=doc_meta,
    )
    augment.write_dataset(dataset, out / "triplets.jsonl")
    _write_run_manifest(out, "augment", config, [out / "sentences.jsonl"])
    print(f"built {len(dataset)} triplets -> {out / 'triplets.jsonl'}")
    return 0


def cmd_assess(config: PipelineConfig, args) -> int:
    out = _out_dir(config, args)
    dataset = augment.read_dataset(args.triplets or out / "triplets.jsonl")
    provider = _provider(config, args)
    report = augment.assess_dataset(dataset, provider, config.assess)
    _write_json(out / "assessment.json", report.to_json())
    _write_run_manifest(
        out, "assess", config, [Path(args.triplets) if args.triplets else out / "triplets.jsonl"]
    )
    print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    return 0


def cmd_train(config: PipelineConfig, args) -> int:
    out = _out_dir(config, args)
    dataset = augment.read_dataset(args.triplets or out / "triplets.jsonl")
    provider = _provider(config, args)

    cfg = config.training
    if not config.training_seed_explicit:
        cfg = dataclasses.replace(cfg, seed=derive_seed(config.seed, "train"))
    split_seed = derive_seed(config.seed, "split")
    train_ds, test_ds = trainer.split_dataset(dataset, config.train_fraction, split_seed)
    augment.write_dataset(train_ds, out / "train_split.jsonl")
    augment.write_dataset(test_ds, out / "test_split.jsonl")

    head, report = trainer.train(
        train_ds,
        provider,
        cfg,
        head_dim=args.head_dim,
        checkpoint_path=out / "checkpoint.json",
        split_sizes=(len(train_ds), len(test_ds)),
    )
    if report.checkpoint_path:
        # keep artifacts relocatable (and byte-stable across output dirs)
        report.checkpoint_path = Path(report.checkpoint_path).name
    _write_json(out / "train_report.json", report.to_json())
    _write_run_manifest(out, "train", config, [Path(args.triplets) if args.triplets else out / "triplets.jsonl"])
    losses = ", ".join(f"{v:.4f}" for v in report.epoch_mean_losses)
    print(f"trained {report.step_count} steps; epoch losses: [{losses}]")
    print(f"checkpoint -> {report.checkpoint_path}")
    return 0


def cmd_eval(config: PipelineConfig, args) -> int:
    out = _out_dir(config, args)
    provider = _provider(config, args)
    head = trainer.load_head(args.checkpoint or out / "checkpoint.json")

    if args.annotated:
        pairs = evaluate.load_labeled_pairs(_resolve(config, args.annotated))
        baseline = evaluate.eval_annotated(pairs, None, provider, model_name="baseline")
        trained = evaluate.eval_annotated(pairs, head, provider, model_name="trained_head")
    else:
        test_ds = augment.read_dataset(args.triplets or out / "test_split.jsonl")
        baseline = evaluate.eval_augmented(test_ds, None, provider, model_name="baseline")
        trained = evaluate.eval_augmented(test_ds, head, provider, model_name="trained_head")

    rows = evaluate.compare_models([baseline, trained], baseline_name="baseline")
    payload = {
        "reports": [baseline.to_json(), trained.to_json()],
        "comparison": [
            {k: v for k, v in row.items() if k != "is_baseline"} for row in rows
        ],
    }
    _write_json(out / "eval_report.json", payload)
    _write_run_manifest(out, "eval", config, [out / "checkpoint.json"])
    print(evaluate.render_comparison(rows))
    return 0


def cmd_ablate(config: PipelineConfig, args) -> int:
    out = _out_dir(config, args)
    dataset = augment.read_dataset(args.triplets or out / "triplets.jsonl")
    pairs = evaluate.load_labeled_pairs(_resolve(config, args.annotated))
    provider = _provider(config, args)

    cfg = config.training
    if not config.training_seed_explicit:
        cfg = dataclasses.replace(cfg, seed=derive_seed(config.seed, "ablate"))
    result = evaluate.ablation_run(dataset, pairs, provider, cfg, head_dim=args.head_dim)
    _write_json(out / "ablation.json", result.to_json())
    _write_run_manifest(
        out, "ablate", config, [Path(args.triplets) if args.triplets else out / "triplets.jsonl"]
    )
    print(result.render())
    return 0


def _build_store(args) -> annotate.AnnotationStore:
    pairs = matching.read_pairs(args.pairs)
    return annotate.AnnotationStore(pairs, log_path=args.log)


def cmd_kappa(config: PipelineConfig, args) -> int:
    store = _build_store(args)
    try:
        kappa, count = store.compute_agreement(joint=args.joint)
        print(json.dumps({"kappa": kappa, "n_pairs": count}, sort_keys=True))
        return 0
    except annotate.NoDoubleLabelsError:
        print(json.dumps({"kappa": None, "n_pairs": 0}, sort_keys=True))
        return 0


def cmd_serve_annotate(config: PipelineConfig, args) -> int:
    store = _build_store(args)
    host, _, port = args.listen.rpartition(":")
    server = annotate.make_server(
        store, host=host or "127.0.0.1", port=int(port), static_dir=args.static
    )
    actual = server.server_address
    print(f"annotation service listening on http://{actual[0]}:{actual[1]}/")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_export(config: PipelineConfig, args) -> int:
    store = _build_store(args)
    lines = [json.dumps(row, ensure_ascii=False, sort_keys=True) for row in store.export_labels()]
    if args.out_file:
        Path(args.out_file).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        print(f"exported {len(lines)} labeled pairs -> {args.out_file}")
    else:
        for line in lines:
            print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="finsts", description=__doc__)
    parser.add_argument("--config", help="path to the pipeline config JSON")
    parser.add_argument("--seed", type=int, help="override the global seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--offline", action="store_true", help="forbid network; require cache hits")

    # the same flags are accepted after the subcommand; SUPPRESS keeps the
    # subparser from clobbering values parsed before it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    common.add_argument("--offline", action="store_true", default=argparse.SUPPRESS)

    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=argparse.ArgumentParser)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    ingest = add_parser("ingest", help="read the corpus manifest and segment sentences")
    ingest.add_argument("--min-tokens", type=int, default=0, help="drop sentences below N tokens")
    ingest.set_defaults(func=cmd_ingest)

    match = add_parser("match", help="pair sentences across periods per company")
    match.add_argument("--min-similarity", type=float, default=None)
    match.add_argument("--sample", type=int, default=0, help="randomly keep N pairs (seeded)")
    match.set_defaults(func=cmd_match)

    augment_cmd = add_parser("augment", help="generate the triplet dataset via the LLM")
    augment_cmd.add_argument(
        "--policy", default="round_robin", help="round_robin | fixed:<C1..C4> | random[:seed]"
    )
    augment_cmd.set_defaults(func=cmd_augment)

    assess = add_parser("assess", help="dataset quality report")
    assess.add_argument("--triplets", help="triplet dataset path")
    assess.set_defaults(func=cmd_assess)

    train = add_parser("train", help="split and train the projection head")
    train.add_argument("--triplets", help="triplet dataset path")
    train.add_argument("--head-dim", type=int, default=None)
    train.set_defaults(func=cmd_train)

    eval_cmd = add_parser("eval", help="evaluate AUC against the raw-embedding baseline")
    eval_cmd.add_argument("--triplets", help="test triplet path (default: out/test_split.jsonl)")
    eval_cmd.add_argument("--annotated", help="annotated pairs JSONL instead of triplets")
    eval_cmd.add_argument("--checkpoint", help="trained head checkpoint")
    eval_cmd.set_defaults(func=cmd_eval)

    ablate = add_parser("ablate", help="leave-one-category-out training grid")
    ablate.add_argument("--triplets", help="triplet dataset path")
    ablate.add_argument("--annotated", required=True, help="annotated pairs JSONL")
    ablate.add_argument("--head-dim", type=int, default=None)
    ablate.set_defaults(func=cmd_ablate)

    kappa = add_parser("kappa", help="inter-annotator agreement from the event log")
    kappa.add_argument("--pairs", required=True)
    kappa.add_argument("--log", required=True)
    kappa.add_argument("--joint", action="store_true", help="compare (score, category) jointly")
    kappa.set_defaults(func=cmd_kappa)

    serve = add_parser("serve-annotate", help="run the annotation HTTP service")
    serve.add_argument("--pairs", required=True)
    serve.add_argument("--log", required=True)
    serve.add_argument("--listen", default="127.0.0.1:8170")
    serve.add_argument("--static", help="directory with the UI bundle")
    serve.set_defaults(func=cmd_serve_annotate)

    export = add_parser("export", help="write final labels as JSON Lines")
    export.add_argument("--pairs", required=True)
    export.add_argument("--log", required=True)
    export.add_argument("--out-file", help="write here instead of stdout")
    export.set_defaults(func=cmd_export)

    return parser


_NO_CONFIG = {"kappa", "serve-annotate", "export"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.subcommand in _NO_CONFIG and not args.config:
        config = PipelineConfig()
    else:
        if not args.config:
            parser.error(f"{args.subcommand} requires --config")
        try:
            config = load_config(args.config)
        except ConfigError as exc:
            print(json.dumps({"error": "ConfigError", "message": str(exc)}), file=sys.stderr)
            return 1
    if args.seed is not None:
        config.seed = args.seed
    if getattr(args, "min_similarity", None) is None and hasattr(args, "min_similarity"):
        args.min_similarity = config.min_similarity

    try:
        return args.func(config, args)
    except (
        ConfigError,
        corpus.CorpusError,
        matching.MatchingError,
        augment.AugmentError,
        augment.CompletionError,
        trainer.TrainerError,
        trainer.NonFiniteLossError,
        evaluate.EvaluateError,
        annotate.AnnotateError,
        providers.ProviderError,
        metrics.MetricError,
        FileNotFoundError,
    ) as exc:
        payload = {"error": type(exc).__name__, "message": str(exc), "subcommand": args.subcommand}
        print(json.dumps(payload), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
