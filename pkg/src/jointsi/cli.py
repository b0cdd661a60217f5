"""Command-line entry point: ``jointsi <command> [--config PATH] [--seed N] [--out DIR] [--quiet]``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunSpec, load_config, output_dir
from .harness import (RunRecord, build_world, comparison_table, finetune_offline, run_ablation,
                      run_offline, run_online, time_per_sample)
from .models.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .seqcore import ConfigError, SequenceError

log = logging.getLogger("jointsi")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2
COMMANDS = ("train", "optimize-offline", "optimize-online", "ablate", "verify", "report")

RECORD_HEADER = "kind\tmethod\tseed\thit_ratio\tintdiv1\tn_samples\toracle_calls\trecord"


def _record_line(rec: RunRecord, path: Path) -> str:
    div = rec.metrics.get("intdiv1")
    return (f"{rec.kind}\t{rec.method}\t{rec.seed}\t{rec.metrics['hit_ratio']:.4f}\t"
            f"{'nan' if div is None else f'{div:.4f}'}\t{rec.metrics['n_samples']}\t"
            f"{rec.ledger['used']}\t{path}")


def _emit(lines, quiet: bool):
    if not quiet:
        for line in lines:
            print(line)


def cmd_train(spec: RunSpec, out: Path, quiet: bool) -> int:
    cfg = spec.offline()
    if not cfg.dataset:
        raise ConfigError("train needs run.dataset pointing at a dataset file")
    if not Path(cfg.dataset).exists():
        raise FileNotFoundError(f"dataset file not found: {cfg.dataset}")
    world = build_world(cfg.world, cfg.seed, cfg.dataset)
    model, trace = finetune_offline(cfg, world)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / f"model-seed{cfg.seed}.ckpt"
    save_checkpoint(ckpt, model)
    csv = out / f"loss-seed{cfg.seed}.csv"
    lines = ["step,loss,grad_norm"] + [f"{i},{l!r},{g!r}" for i, (l, g) in
                                       enumerate(zip(trace.losses, trace.grad_norms))]
    csv.write_text("\n".join(lines) + "\n", encoding="utf-8")
    from .plotting import loss_curve

    if trace.losses:
        loss_curve(trace.losses, out / f"loss-seed{cfg.seed}.png")
    _emit(["checkpoint\tloss_trace\tsteps\tfinal_loss",
           f"{ckpt}\t{csv}\t{len(trace.losses)}\t{trace.losses[-1] if trace.losses else float('nan')!r}"], quiet)
    return EXIT_OK


def cmd_optimize_offline(spec: RunSpec, out: Path, quiet: bool) -> int:
    lines = [RECORD_HEADER]
    for seed in spec.seeds:
        cfg = spec.offline()
        cfg.seed = seed
        model = None
        if cfg.checkpoint:
            if not Path(cfg.checkpoint).exists():
                raise FileNotFoundError(f"checkpoint file not found: {cfg.checkpoint}")
            model = load_checkpoint(cfg.checkpoint)
        rec = run_offline(cfg, model=model)
        lines.append(_record_line(rec, rec.write(out)["record"]))
    _emit(lines, quiet)
    return EXIT_OK


def cmd_optimize_online(spec: RunSpec, out: Path, quiet: bool) -> int:
    lines = [RECORD_HEADER]
    for seed in spec.seeds:
        cfg = spec.online()
        cfg.seed = seed
        rec = run_online(cfg)
        lines.append(_record_line(rec, rec.write(out)["record"]))
    _emit(lines, quiet)
    return EXIT_OK


def cmd_ablate(spec: RunSpec, out: Path, quiet: bool) -> int:
    variants = spec.variants
    records, names = [], []
    for seed in spec.seeds:
        cfg = spec.offline("jsi")
        cfg.seed = seed
        recs = run_ablation(cfg, variants)
        for r in recs:
            r.write(out)
        records += recs
        names += variants
    table = comparison_table(records, names)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.tsv").write_text(table, encoding="utf-8")
    _emit(table.rstrip("\n").splitlines(), quiet)
    return EXIT_OK


def cmd_verify(spec: RunSpec, out: Path, quiet: bool) -> int:
    from .verify import run_suites

    report = run_suites()
    out.mkdir(parents=True, exist_ok=True)
    (out / "verify.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    _emit(["suite\tpassed\tseconds\tdetail"] +
          [f"{s['name']}\t{int(s['passed'])}\t{s['seconds']:.3f}\t{s['detail']}" for s in report["suites"]], quiet)
    return EXIT_OK if report["passed"] else EXIT_FAILURE


def load_records(out: Path) -> list[RunRecord]:
    paths = sorted(p for p in out.glob("*.json")
                   if not p.name.endswith(".timing.json") and p.with_suffix(".jsonl").exists())
    return [RunRecord.read(p) for p in paths]


def cmd_report(spec: RunSpec, out: Path, quiet: bool) -> int:
    from .plotting import render_report

    records = load_records(out)
    if not records:
        raise ConfigError(f"no run records found under {out}")
    lines = ["kind\tmethod\tseed\thit_ratio\tintdiv1\tn_samples\tseconds_per_sample"]
    for r in records:
        div = r.metrics.get("intdiv1")
        tps = time_per_sample(r) if r.timing.get("n_samples") else float("nan")
        lines.append(f"{r.kind}\t{r.method}\t{r.seed}\t{r.metrics['hit_ratio']:.4f}\t"
                     f"{'nan' if div is None else f'{div:.4f}'}\t{r.metrics['n_samples']}\t{tps:.6g}")
    (out / "report.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    figures = render_report(records, out)
    _emit(lines + [f"# figure\t{p}" for p in figures], quiet)
    return EXIT_OK


HANDLERS = {
    "train": cmd_train, "optimize-offline": cmd_optimize_offline, "optimize-online": cmd_optimize_online,
    "ablate": cmd_ablate, "verify": cmd_verify, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointsi", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON config file (sections model, train, jsi, oracle, run)")
    parser.add_argument("--seed", type=int, help="seed override (unsigned 64-bit)")
    parser.add_argument("--out", help="output directory (default: $JSI_OUT_DIR or ./runs)")
    parser.add_argument("--quiet", action="store_true", help="suppress stdout tables and info logs")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        spec = load_config(args.config, args.seed)
        return HANDLERS[args.command](spec, output_dir(args.out), args.quiet)
    except (ConfigError, SequenceError, FileNotFoundError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.exception("run failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
