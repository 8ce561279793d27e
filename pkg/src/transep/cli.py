"""Command-line entry point.

Subcommands wire the config file into reproducible experiment steps:
corpus generation, the staged training ladder, decoding, operating-point
sweeps, gradient verification, and the trend harness.  Every command is
deterministic given the config plus seeds; rerunning reproduces artifacts
bit-exactly.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import datagen, evaluate, gradcheck, model, mwer, rescorer, training, trends
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .errors import ConfigError, TransepError


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        s = args.seed
        cfg = replace(
            cfg,
            corpus=replace(cfg.corpus, seed=s),
            model=replace(cfg.model, seed=s + 1),
            las=replace(cfg.las, seed=s + 2),
            training=replace(cfg.training, seed=s + 3),
        )
        cfg.validate()
    return cfg


def _out_dir(cfg: ExperimentConfig, args) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _corpus_paths(out: Path) -> tuple[Path, Path]:
    return out / "train.corpus", out / "test.corpus"


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing prerequisite: {path} ({hint})")
    return path


def cmd_generate(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args)
    corpus = datagen.generate_corpus(cfg.corpus)
    train, test = datagen.split_corpus(corpus, cfg.train_fraction)
    train_path, test_path = _corpus_paths(out)
    datagen.save_corpus(train_path, cfg.corpus, train)
    datagen.save_corpus(test_path, cfg.corpus, test)
    print(f"wrote {train_path} ({len(train)} records) and {test_path} ({len(test)} records)")
    return 0


def _load_corpora(cfg: ExperimentConfig, out: Path):
    train_path, test_path = _corpus_paths(out)
    _require(train_path, "run the generate command first")
    _require(test_path, "run the generate command first")
    spec_train, train = datagen.load_corpus(train_path)
    _, test = datagen.load_corpus(test_path)
    bank = datagen.prototype_bank(spec_train)
    return train, test, bank


STAGE_CKPT = {
    "rnnt_ce": "rnnt_ce.ckpt",
    "mwer": "mwer.ckpt",
    "las_ce": "las_ce.ckpt",
    "las_mwer": "las_mwer.ckpt",
}


def _resolve_checkpoint(args, out: Path, candidates: list[str], hint: str) -> Path:
    if getattr(args, "checkpoint", None):
        return _require(Path(args.checkpoint), hint)
    for name in candidates:
        path = out / name
        if path.exists():
            return path
    raise ConfigError(f"missing prerequisite checkpoint in {out} ({hint})")


def run_stage(cfg: ExperimentConfig, stage: str, out: Path, args=None) -> Path:
    train, test, bank = _load_corpora(cfg, out)
    tc = cfg.training
    target = out / STAGE_CKPT[stage]

    if stage == "rnnt_ce":
        params = model.init_params(cfg.model)
        params, metrics = training.train_rnnt_ce(
            params,
            train,
            test,
            epochs=tc.rnnt_epochs,
            learning_rate=tc.rnnt_learning_rate,
            batch_size=tc.rnnt_batch_size,
            clip_norm=tc.clip_norm,
            penalty_cfg=cfg.penalty,
            eval_every=tc.eval_every,
            seed=tc.seed,
            use_eos_label=tc.use_eos_label,
            dev_decode_cfg=cfg.decode,
        )
        save_checkpoint(target, params)
        training.write_metrics_log(out / "rnnt_ce_metrics.tsv", metrics)
        print(f"rnnt_ce: final dev error {metrics[-1]['dev_wer']:.2f}% -> {target}")
        return target

    if stage == "mwer":
        ckpt = _resolve_checkpoint(args, out, ["rnnt_ce.ckpt"], "stage mwer needs a base model")
        params, las = load_checkpoint(ckpt)
        params, las, summary = mwer.train_mwer(
            params,
            train,
            cfg.decode,
            cfg.penalty,
            include_late_penalty=tc.mwer_include_late_penalty,
            update_scope="rnnt",
            las=las,
            learning_rate=tc.mwer_learning_rate,
            clip_norm=tc.clip_norm,
            bank=bank,
            epochs=tc.mwer_epochs,
            seed=tc.seed,
        )
        save_checkpoint(target, params, las)
        print(f"mwer: {summary['steps']} updates, {summary['skipped']} skipped -> {target}")
        return target

    if stage == "las_ce":
        ckpt = _resolve_checkpoint(
            args, out, ["mwer.ckpt", "rnnt_ce.ckpt"], "stage las_ce needs a first-pass model"
        )
        params, _ = load_checkpoint(ckpt)
        las = rescorer.init_las_params(cfg.las)
        las, metrics = rescorer.las_ce_train(
            las,
            params,
            train,
            epochs=tc.las_epochs,
            learning_rate=tc.las_learning_rate,
            batch_size=tc.las_batch_size,
            clip_norm=tc.clip_norm,
            seed=tc.seed,
        )
        save_checkpoint(target, params, las)
        with open(out / "las_ce_metrics.tsv", "w", encoding="utf-8") as fh:
            for row in metrics:
                fh.write(f"{row['step']}\t{row['ce_per_token']!r}\n")
        print(f"las_ce: final CE {metrics[-1]['ce_per_token']:.3f} nats/token -> {target}")
        return target

    if stage == "las_mwer":
        ckpt = _resolve_checkpoint(args, out, ["las_ce.ckpt"], "stage las_mwer needs a rescorer")
        params, las = load_checkpoint(ckpt)
        if las is None:
            raise ConfigError(f"{ckpt}: checkpoint has no rescorer section")
        params, las, summary = mwer.train_mwer(
            params,
            train,
            cfg.decode,
            cfg.penalty,
            include_late_penalty=tc.mwer_include_late_penalty,
            update_scope=tc.las_mwer_scope,
            las=las,
            learning_rate=tc.las_mwer_learning_rate,
            clip_norm=tc.clip_norm,
            bank=bank,
            epochs=tc.las_mwer_epochs,
            seed=tc.seed,
        )
        save_checkpoint(target, params, las)
        print(f"las_mwer: {summary['steps']} updates, {summary['skipped']} skipped -> {target}")
        return target

    raise ConfigError(f"unknown stage '{stage}'")


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args)
    if args.stage not in STAGE_CKPT:
        raise ConfigError(f"unknown stage '{args.stage}' (expected one of {list(STAGE_CKPT)})")
    run_stage(cfg, args.stage, out, args)
    return 0


def cmd_decode(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args)
    ckpt = _resolve_checkpoint(
        args, out, ["las_mwer.ckpt", "las_ce.ckpt", "mwer.ckpt", "rnnt_ce.ckpt"], "train first"
    )
    params, las = load_checkpoint(ckpt)
    corpus_path = Path(args.corpus) if args.corpus else _corpus_paths(out)[1]
    spec, test = datagen.load_corpus(_require(corpus_path, "generate a corpus first"))
    bank = datagen.prototype_bank(spec)
    results, raw = evaluate.decode_corpus(
        params, test, cfg.decode, bank, spec.frame_ms, las, cfg.rescore
    )
    evaluate_path = out / "decode.txt"
    from .decoder import write_decode_outputs

    write_decode_outputs(evaluate_path, raw)
    wer, lat = evaluate.summarize(results)
    ep50 = "n/a" if lat.ep50_ms is None else f"{lat.ep50_ms:.0f}ms"
    ep90 = "n/a" if lat.ep90_ms is None else f"{lat.ep90_ms:.0f}ms"
    print(f"decoded {len(results)} utterances -> {evaluate_path}")
    print(f"wer={wer:.2f}% ep50={ep50} ep90={ep90} eou={lat.eou_pct:.1f}%")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args)
    ckpt = _resolve_checkpoint(
        args, out, ["las_mwer.ckpt", "las_ce.ckpt", "mwer.ckpt", "rnnt_ce.ckpt"], "train first"
    )
    params, las = load_checkpoint(ckpt)
    _, test_path = _corpus_paths(out)
    spec, test = datagen.load_corpus(_require(test_path, "generate a corpus first"))
    bank = datagen.prototype_bank(spec)
    report = evaluate.roc_sweep(
        params,
        test,
        cfg.sweep.alpha_grid,
        cfg.sweep.beta_grid,
        cfg.decode,
        bank,
        spec.frame_ms,
        las,
        cfg.rescore,
        jobs=args.jobs,
    )
    csv_path = out / "sweep.csv"
    evaluate.write_sweep_csv(csv_path, report)
    print(f"wrote {csv_path} ({len(report.rows)} operating points)")
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck.run_gradient_checks(seed=args.seed if args.seed is not None else 0)
    print(gradcheck.format_report(report))
    return 0 if report.passed else 1


def cmd_trends(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args)
    report = trends.run_trends(cfg, out)
    for trend in report.trends:
        print(f"TREND {'PASS' if trend.passed else 'FAIL'} {trend.name}")
    print(f"trend report -> {out / 'trends.json'}")
    return 0 if report.passed else 1


def cmd_run_all(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args)
    cmd_generate(args)
    for stage in cfg.training.stages:
        run_stage(cfg, stage, out)
    args.checkpoint = None
    return cmd_sweep(args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transep",
        description="Streaming transducer with joint endpointing: synthetic-corpus experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, corpus=False, jobs=False, stage=False):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", default=None, help="output directory (overrides [paths] out_dir)")
        p.add_argument("--seed", type=int, default=None, help="override all config seeds")
        if stage:
            p.add_argument("--stage", required=True, help="training stage name")
        if checkpoint:
            p.add_argument("--checkpoint", default=None, help="checkpoint path")
        if corpus:
            p.add_argument("--corpus", default=None, help="corpus record file")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="worker processes")

    common(sub.add_parser("generate", help="write the synthetic train/test corpora"))
    common(sub.add_parser("train", help="run one training stage"), checkpoint=True, stage=True)
    common(sub.add_parser("decode", help="decode a corpus and report metrics"), checkpoint=True, corpus=True)
    common(sub.add_parser("sweep", help="operating-point sweep to CSV"), checkpoint=True, jobs=True)
    p = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    p.add_argument("--seed", type=int, default=None)
    common(sub.add_parser("trends", help="train the ladder and check directional trends"))
    common(sub.add_parser("run-all", help="generate, train all stages, and sweep"), jobs=True)

    handlers = {
        "generate": cmd_generate,
        "train": cmd_train,
        "decode": cmd_decode,
        "sweep": cmd_sweep,
        "gradcheck": cmd_gradcheck,
        "trends": cmd_trends,
        "run-all": cmd_run_all,
    }
    parser.set_defaults(_handlers=handlers)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = args._handlers[args.command]
    try:
        return handler(args)
    except TransepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
