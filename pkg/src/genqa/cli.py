"""Single entry point for the pipeline and all experiment stages.

Configuration comes from one JSON document; every flag mirrors a config
key and wins over it. Artifacts land in the chosen output directory with
a manifest (config hash + input digests), so reruns with identical
inputs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path
from typing import Sequence

from . import annosvc, decoding, genbuild, metrics, selector, textproc, training
from .corpus import Dataset, Label, load_dataset, validate, write_dataset
from .errors import DataError, UsageError
from .model import ModelConfig, init_model, load_checkpoint, save_checkpoint
from .selector import USE_EXTERNAL_SCORES, LexicalScorer, build_idf, import_scores

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

DEFAULTS: dict = {
    "seed": 0,
    "k": 5,
    "hit_k": 5,
    "beam": 4,
    "max_len": 100,
    "truncate": 512,
    "lr_preset": "uqat5",
    "learning_rate": None,
    "batch_size": 8,
    "steps": 200,
    "steps_b": 0,
    "strategy": "single",
    "dataset_a": None,
    "dataset_b": None,
    "scores": None,
    "generations": None,
    "out": None,
    "port": 8765,
    "checkpoint": None,
    "vocab": None,
    "d_model": 32,
    "n_layers": 1,
    "n_heads": 4,
    "d_ff": 64,
    "dropout": 0.0,
    "vocab_max_size": 4096,
    "vocab_min_freq": 1,
    "systems": None,
    "campaign_id": "campaign",
    "annotations_per_task": 1,
    "static_dir": None,
}

_FLAG_KEYS = [
    ("--seed", "seed", int, "global random seed"),
    ("--k", "k", int, "how many top candidates feed the generator"),
    ("--hit-k", "hit_k", int, "rank depth for the evaluate hit-rate column"),
    ("--beam", "beam", int, "beam size for decoding"),
    ("--max-len", "max_len", int, "maximum generated answer length in tokens"),
    ("--truncate", "truncate", int, "source token budget"),
    ("--lr-preset", "lr_preset", str, "uqat5 | bart | custom"),
    ("--learning-rate", "learning_rate", float, "rate for the custom preset"),
    ("--batch-size", "batch_size", int, "training batch size"),
    ("--steps", "steps", int, "training steps (phase one)"),
    ("--steps-b", "steps_b", int, "phase-two steps for the sequential strategy"),
    ("--strategy", "strategy", str, "single | mixed | sequential"),
    ("--dataset-a", "dataset_a", str, "primary dataset / examples path"),
    ("--dataset-b", "dataset_b", str, "secondary dataset / examples path"),
    ("--scores", "scores", str, "external score file (qid<TAB>cid<TAB>score)"),
    ("--generations", "generations", str, "generation output file to evaluate"),
    ("--out", "out", str, "output directory (default: new timestamped dir)"),
    ("--port", "port", int, "annotation service port"),
    ("--checkpoint", "checkpoint", str, "model checkpoint path"),
    ("--vocab", "vocab", str, "vocab file path"),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems exit 1, not argparse's 2
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="genqa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("ingest", "load, validate, and canonically rewrite a dataset"),
        ("rank", "score and rank candidates; emit scores and top-1 answers"),
        ("build-examples", "construct generation training examples"),
        ("train", "train the generator on example files"),
        ("generate", "decode answers for a dataset"),
        ("evaluate", "ranking and text-overlap metrics report"),
        ("annotate-serve", "run the blinded annotation service"),
        ("annotate-report", "per-system accuracy from collected judgments"),
        ("pipeline", "ingest, rank, build-examples, train, generate, evaluate"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        for flag, key, typ, help_str in _FLAG_KEYS:
            p.add_argument(flag, dest=key, type=typ, default=None, help=help_str)
    return parser


def _resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text("utf-8"))
        except json.JSONDecodeError as e:
            raise UsageError(f"config file is not valid JSON: {e}") from None
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for _, key, _, _ in _FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


class Run:
    """Output directory plus run log and manifest bookkeeping."""

    def __init__(self, cfg: dict, command: str):
        self.cfg = cfg
        self.dir = self._resolve_out(cfg)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._log_lines: list[str] = []
        self._inputs: dict[str, str] = {}
        self._artifacts: list[str] = []
        self.log(f"command: {command}")
        effective = json.dumps(cfg, indent=2, sort_keys=True)
        (self.dir / "effective_config.json").write_text(effective + "\n", "utf-8")
        self.log(f"effective config written to {self.dir / 'effective_config.json'}")

    @staticmethod
    def _resolve_out(cfg: dict) -> Path:
        if cfg.get("out"):
            return Path(cfg["out"])
        root = Path(os.environ.get("GENQA_OUT_DIR", "runs"))
        return root / time.strftime("run-%Y%m%d-%H%M%S")

    def log(self, message: str) -> None:
        self._log_lines.append(message)
        print(message)

    def path(self, name: str) -> Path:
        return self.dir / name

    def note_input(self, path: str | Path) -> Path:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"input file not found: {p}")
        self._inputs[str(p)] = hashlib.sha256(p.read_bytes()).hexdigest()
        return p

    def note_artifact(self, path: Path) -> Path:
        self._artifacts.append(path.name)
        return path

    def finish(self) -> None:
        # the output location is not an experiment parameter
        hashed = {k: v for k, v in self.cfg.items() if k != "out"}
        config_hash = hashlib.sha256(
            json.dumps(hashed, sort_keys=True).encode("utf-8")
        ).hexdigest()
        manifest = {
            "config_sha256": config_hash,
            "inputs": dict(sorted(self._inputs.items())),
            "artifacts": sorted(set(self._artifacts)),
        }
        (self.dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8"
        )
        (self.dir / "run.log").write_text("\n".join(self._log_lines) + "\n", "utf-8")


def _require(cfg: dict, key: str, command: str) -> str:
    value = cfg.get(key)
    if not value:
        raise UsageError(f"{command} requires --{key.replace('_', '-')} (config key {key!r})")
    return value


def _load_input_dataset(run: Run, cfg: dict, key: str = "dataset_a") -> Dataset:
    path = run.note_input(_require(cfg, key, "this command"))
    dataset = load_dataset(path)
    if cfg.get("scores"):
        dataset = import_scores(dataset, run.note_input(cfg["scores"]))
    return dataset


def _scorer_for(dataset: Dataset, cfg: dict):
    if cfg.get("scores"):
        return USE_EXTERNAL_SCORES
    return LexicalScorer(build_idf(dataset))


def _model_config(cfg: dict, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        d_model=cfg["d_model"],
        n_layers=cfg["n_layers"],
        n_heads=cfg["n_heads"],
        d_ff=cfg["d_ff"],
        max_source_len=cfg["truncate"],
        max_target_len=cfg["max_len"],
        dropout=cfg["dropout"],
    )


def _train_config(cfg: dict, steps: int, seed: int) -> training.TrainConfig:
    preset = training.LrPreset(cfg["lr_preset"])
    if preset is training.LrPreset.CUSTOM:
        if cfg.get("learning_rate") is None:
            raise UsageError("custom lr preset requires learning_rate")
        rate = float(cfg["learning_rate"])
    else:
        rate = {
            training.LrPreset.UQAT5: training.UQAT5_LEARNING_RATE,
            training.LrPreset.BART: training.BART_LEARNING_RATE,
        }[preset]
    return training.TrainConfig(
        learning_rate=rate,
        batch_size=cfg["batch_size"],
        steps=steps,
        seed=seed,
        preset=preset,
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(run: Run, cfg: dict) -> int:
    dataset = _load_input_dataset(run, cfg)
    report = validate(dataset)
    lines = [f"entries: {len(dataset)}"]
    lines += [f"violation: {v.location}: {v.message}" for v in report.violations]
    lines += [f"advisory: {v.location}: {v.message}" for v in report.advisories]
    run.note_artifact(run.path("validation.txt")).write_text("\n".join(lines) + "\n", "utf-8")
    write_dataset(dataset, run.note_artifact(run.path("dataset.jsonl")))
    for line in lines:
        run.log(line)
    if not report.is_empty():
        raise DataError(
            f"dataset has {len(report.violations)} invariant violations "
            f"(see {run.path('validation.txt')})"
        )
    return EXIT_OK


def _ranked_dataset(dataset: Dataset, cfg: dict):
    scorer = _scorer_for(dataset, cfg)
    for entry in dataset:
        yield entry, selector.rank(entry.question, entry, scorer)


def cmd_rank(run: Run, cfg: dict) -> int:
    dataset = _load_input_dataset(run, cfg)
    score_rows = []
    top1 = []
    for entry, ranked in _ranked_dataset(dataset, cfg):
        for sc in ranked.entries:
            score_rows.append((entry.question.id, sc.candidate.id, float(sc.score)))
        best = ranked.entries[0]
        top1.append(
            decoding.GeneratedAnswer(
                question_id=entry.question.id,
                ids=(),
                text=best.candidate.text,
                log_score=float(best.score),
            )
        )
    selector.write_scores(score_rows, run.note_artifact(run.path("scores.tsv")))
    decoding.write_generations(
        top1, run.note_artifact(run.path("answers_selector.jsonl")), system="selector"
    )
    run.log(f"ranked {len(dataset)} questions")
    return EXIT_OK


def cmd_build_examples(run: Run, cfg: dict) -> int:
    dataset = _load_input_dataset(run, cfg)
    scorer = _scorer_for(dataset, cfg)
    report = genbuild.build_corpus(dataset, scorer, k=cfg["k"], seed=cfg["seed"])
    genbuild.write_examples(report.examples, run.note_artifact(run.path("examples.jsonl")))
    skip_lines = [f"{s.question_id}\t{s.reason}" for s in report.skips]
    run.note_artifact(run.path("skips.txt")).write_text(
        "\n".join(skip_lines) + ("\n" if skip_lines else ""), "utf-8"
    )
    run.log(f"built {len(report.examples)} examples, skipped {len(report.skips)}")
    return EXIT_OK


def _build_vocab_from_examples(examples, cfg: dict) -> textproc.Vocab:
    texts: list[str] = []
    for ex in examples:
        texts.append(ex.source_text)
        texts.append(ex.target_text)
    return textproc.build_vocab(texts, cfg["vocab_max_size"], cfg["vocab_min_freq"])


def cmd_train(run: Run, cfg: dict) -> int:
    examples_a = genbuild.load_examples(run.note_input(_require(cfg, "dataset_a", "train")))
    if not examples_a:
        raise DataError("no training examples in dataset_a")
    datasets = {"A": examples_a}
    strategy_kind = cfg["strategy"]
    if strategy_kind in ("mixed", "sequential"):
        examples_b = genbuild.load_examples(
            run.note_input(_require(cfg, "dataset_b", f"{strategy_kind} training"))
        )
        if not examples_b:
            raise DataError("no training examples in dataset_b")
        datasets["B"] = examples_b

    vocab = _build_vocab_from_examples(
        [e for exs in datasets.values() for e in exs], cfg
    )
    textproc.save_vocab(vocab, run.note_artifact(run.path("vocab.txt")))
    config = _model_config(cfg, len(vocab))
    tconf_a = _train_config(cfg, cfg["steps"], cfg["seed"])
    if strategy_kind == "single":
        strategy = training.StrategySpec("single", "A", phase_a=tconf_a)
    elif strategy_kind == "mixed":
        strategy = training.StrategySpec("mixed", "A", "B", phase_a=tconf_a)
    elif strategy_kind == "sequential":
        tconf_b = _train_config(cfg, cfg["steps_b"], cfg["seed"])
        strategy = training.StrategySpec(
            "sequential", "A", "B", phase_a=tconf_a, phase_b=tconf_b
        )
    else:
        raise UsageError(f"unknown strategy {strategy_kind!r}")

    params, curve = training.run_strategy(config, strategy, datasets, vocab, cfg["seed"])
    save_checkpoint(params, run.note_artifact(run.path("model.ckpt")))
    run.note_artifact(run.path("loss_curve.json")).write_text(
        json.dumps(curve) + "\n", "utf-8"
    )
    final = f"{curve[-1]:.6f}" if curve else "n/a"
    run.log(f"trained {strategy_kind} for {len(curve)} steps, final loss {final}")
    return EXIT_OK


def cmd_generate(run: Run, cfg: dict) -> int:
    dataset = _load_input_dataset(run, cfg)
    vocab = textproc.load_vocab(run.note_input(_require(cfg, "vocab", "generate")))
    params = load_checkpoint(run.note_input(_require(cfg, "checkpoint", "generate")))
    scorer = _scorer_for(dataset, cfg)
    decode_cfg = decoding.DecodeConfig(beam_size=cfg["beam"], max_len=cfg["max_len"])
    answers = [
        decoding.generate(
            params,
            entry.question,
            entry,
            scorer,
            vocab,
            k=cfg["k"],
            cfg=decode_cfg,
            truncate_limit=cfg["truncate"],
        )
        for entry in dataset
    ]
    decoding.write_generations(answers, run.note_artifact(run.path("generations.jsonl")))
    run.log(f"generated {len(answers)} answers")
    return EXIT_OK


def _references_for(entry) -> tuple[str, ...]:
    if entry.reference_answer is not None:
        return (entry.reference_answer,)
    return tuple(c.text for c in entry.candidates if c.label is Label.CORRECT)


def _canonical(text: str) -> str:
    return " ".join(textproc.tokenize(text))


def cmd_evaluate(run: Run, cfg: dict) -> int:
    dataset = _load_input_dataset(run, cfg)
    rankings = list(_ranked_dataset(dataset, cfg))
    evals = [
        metrics.RankEval(
            entry.question.id, tuple(sc.candidate.label for sc in ranked.entries)
        )
        for entry, ranked in rankings
    ]
    top1_texts = [ranked.entries[0].candidate.text for _, ranked in rankings]
    selector_row = metrics.SystemMetrics(
        name="selector",
        accuracy=metrics.precision_at_1(evals),
        hit_at_5=metrics.hit_at_k(evals, cfg["hit_k"]),
        length=metrics.length_stats(top1_texts),
    )
    rows = [selector_row]

    if cfg.get("generations"):
        by_qid = dataset.by_question_id()
        records = decoding.load_generations(run.note_input(cfg["generations"]))
        pairs = []
        matches = 0
        scored = 0
        answers = []
        for record in records:
            entry = by_qid.get(str(record["qid"]))
            if entry is None:
                raise DataError(f"generation references unknown question {record['qid']!r}")
            answers.append(str(record["answer"]))
            refs = _references_for(entry)
            if not refs:
                continue
            pairs.append(metrics.GenEvalPair(str(record["answer"]), refs))
            scored += 1
            if _canonical(record["answer"]) in {_canonical(r) for r in refs}:
                matches += 1
        gen_row = metrics.SystemMetrics(
            name="genqa",
            accuracy=(matches / scored) if scored else None,
            bleu=metrics.bleu(pairs) if pairs else None,
            rouge_l=(
                sum(metrics.rouge_l(p).f for p in pairs) / len(pairs) if pairs else None
            ),
            length=metrics.length_stats(answers) if answers else None,
        )
        rows.append(gen_row)

    report_text = metrics.render_report(rows)
    run.note_artifact(run.path("report.txt")).write_text(report_text, "utf-8")
    run.note_artifact(run.path("report.json")).write_text(
        json.dumps(metrics.report_record(rows), indent=2, sort_keys=True) + "\n", "utf-8"
    )
    run.log(report_text.rstrip("\n"))
    return EXIT_OK


def _campaign_state(run: Run, cfg: dict, create_missing: bool) -> annosvc.CampaignState:
    campaign_path = run.path("campaign.json")
    log_path = run.path("judgments.jsonl")
    if campaign_path.exists():
        campaign = annosvc.load_campaign(campaign_path)
    elif create_missing:
        systems = cfg.get("systems")
        if not systems:
            raise UsageError(
                "annotate-serve needs config key 'systems': {system_id: answers file}"
            )
        dataset = _load_input_dataset(run, cfg)
        questions = {e.question.id: e.question.text for e in dataset}
        campaign = annosvc.create_campaign(
            {name: run.note_input(path) for name, path in systems.items()},
            seed=cfg["seed"],
            questions=questions,
            campaign_id=cfg["campaign_id"],
            annotations_per_task=cfg["annotations_per_task"],
        )
        annosvc.save_campaign(campaign, run.note_artifact(campaign_path))
    else:
        raise UsageError(f"no campaign found at {campaign_path}")
    return annosvc.CampaignState(campaign, log_path)


def cmd_annotate_serve(run: Run, cfg: dict) -> int:
    state = _campaign_state(run, cfg, create_missing=True)
    static_dir = cfg.get("static_dir")
    server = annosvc.AnnotationServer(
        state,
        port=cfg["port"],
        static_dir=static_dir,
        access_log=run.path("access.log"),
    )
    run.log(f"campaign {state.campaign.id!r} with {len(state.campaign.tasks)} tasks")
    run.log(f"listening on http://127.0.0.1:{server.port}")
    run.finish()
    sys.stdout.flush()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return EXIT_OK


def cmd_annotate_report(run: Run, cfg: dict) -> int:
    state = _campaign_state(run, cfg, create_missing=False)
    report = state.compute_accuracy()
    rows = [
        metrics.SystemMetrics(name=system, accuracy=values["accuracy"])
        for system, values in report.items()
    ]
    text = metrics.render_report(rows)
    run.note_artifact(run.path("annotation_report.json")).write_text(
        json.dumps({"systems": report}, indent=2, sort_keys=True) + "\n", "utf-8"
    )
    run.log(text.rstrip("\n"))
    state.close()
    return EXIT_OK


def cmd_pipeline(run: Run, cfg: dict) -> int:
    cmd_ingest(run, cfg)
    cmd_rank(run, cfg)
    cmd_build_examples(run, cfg)

    train_cfg = dict(cfg)
    train_cfg["dataset_a"] = str(run.path("examples.jsonl"))
    if cfg["strategy"] in ("mixed", "sequential"):
        # second corpus gets its own idf scorer; external scores only apply to A
        dataset_b = load_dataset(run.note_input(_require(cfg, "dataset_b", "pipeline")))
        report_b = genbuild.build_corpus(
            dataset_b,
            LexicalScorer(build_idf(dataset_b)),
            k=cfg["k"],
            seed=cfg["seed"],
        )
        genbuild.write_examples(
            report_b.examples, run.note_artifact(run.path("examples_b.jsonl"))
        )
        train_cfg["dataset_b"] = str(run.path("examples_b.jsonl"))
    cmd_train(run, train_cfg)

    generate_cfg = dict(cfg)
    generate_cfg["checkpoint"] = str(run.path("model.ckpt"))
    generate_cfg["vocab"] = str(run.path("vocab.txt"))
    cmd_generate(run, generate_cfg)

    evaluate_cfg = dict(cfg)
    evaluate_cfg["generations"] = str(run.path("generations.jsonl"))
    cmd_evaluate(run, evaluate_cfg)
    return EXIT_OK


_COMMANDS = {
    "ingest": cmd_ingest,
    "rank": cmd_rank,
    "build-examples": cmd_build_examples,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "annotate-serve": cmd_annotate_serve,
    "annotate-report": cmd_annotate_report,
    "pipeline": cmd_pipeline,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _build_parser().parse_args(argv)
        cfg = _resolve_config(args)
        run = Run(cfg, args.command)
        code = _COMMANDS[args.command](run, cfg)
        run.finish()
        return code
    except (UsageError, FileNotFoundError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # pragma: no cover - defensive
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
