"""Command-line entry point: ``adviser <command> [--seed N] [--config FILE] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .advisee import RecordError, generate_dataset, build_record, ingest_records, write_records
from .harness import ExperimentConfig, config_from_mapping, config_to_text, derive_seed, read_config_file
from .model import MODES, fit, load_checkpoint, save_checkpoint

log = logging.getLogger("adviser")


def _add_common(p):
    p.add_argument("--seed", type=int, help="experiment seed")
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def _add_data(p, pool=False):
    if pool:
        p.add_argument("--records", help="record file to split repeatedly")
    else:
        p.add_argument("--records", help="record file split into train/test by split_fraction")
        p.add_argument("--train-records", help="training record file")
        p.add_argument("--test-records", help="test record file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adviser", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic train/test record files")
    _add_common(p)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)

    p = sub.add_parser("ingest", help="validate a record file and tabulate its non-learned policies")
    _add_common(p)
    p.add_argument("records")
    p.add_argument("--reference", action="store_true", help="also compare against the published full-split values")

    p = sub.add_parser("train", help="train an adviser and write a checkpoint")
    _add_common(p)
    p.add_argument("--records", help="training record file (default: synthetic)")
    p.add_argument("--adviser-mode", choices=MODES, default="classification")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on test records (full-split table)")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-records", help="test record file (default: synthetic)")

    p = sub.add_parser("full", help="train and evaluate on one train/test split")
    _add_common(p)
    _add_data(p)

    p = sub.add_parser("small", help="repeated-split protocol with mean ± std")
    _add_common(p)
    _add_data(p, pool=True)
    p.add_argument("--repetitions", type=int)

    p = sub.add_parser("compare", help="classification vs regression targets")
    _add_common(p)
    _add_data(p)

    p = sub.add_parser("sweep", help="label temperature sweep")
    _add_common(p)
    _add_data(p)
    p.add_argument("--temperatures", help="comma-separated list, e.g. 0.1,1,10")
    return parser


def resolve_config(args) -> ExperimentConfig:
    """Defaults, then the config file, then command-line flags."""
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    for item in args.set:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key] = value
    for key in ("seed", "out", "records", "train_records", "test_records", "checkpoint",
                "n_train", "n_test", "repetitions", "temperatures"):
        value = getattr(args, key, None)
        if value is not None:
            values[key] = str(value)
    values["mode"] = args.command
    return config_from_mapping(values)


def _prepare_out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_to_text(cfg))
    return out


def _report(table, out: Path, stem: str) -> None:
    table.write(out, stem)
    sys.stdout.write(table.to_text())
    log.info("wrote %s.txt and %s.csv to %s", stem, stem, out)


def cmd_generate(cfg, args):
    out = _prepare_out(cfg)
    for name, n in (("train", cfg.n_train), ("test", cfg.n_test)):
        instances, advisee = generate_dataset(cfg.synthetic, n, derive_seed(cfg.seed, f"{name}-data"))
        path = out / f"{name}_records.jsonl"
        write_records(path, [build_record(advisee, inst) for inst in instances])
        print(f"wrote {n} records to {path}")


def cmd_ingest(cfg, args):
    records = ingest_records(args.records)
    out = _prepare_out(cfg)
    sys.stdout.write(harness.records_summary(records))
    table = harness.baseline_table(records, title=f"Non-learned policies on {Path(args.records).name}")
    _report(table, out, "baselines")
    if args.reference:
        problems = harness.compare_to_reference(table)
        if problems:
            print("reference mismatches:\n  " + "\n  ".join(problems))
            return 1
        print("all non-learned cells match the published values")
    return 0


def cmd_train(cfg, args):
    out = _prepare_out(cfg)
    if args.records:
        records = ingest_records(args.records)
    else:
        records, _ = harness.load_train_test(cfg)
    train_cfg = replace(cfg.train, mode=args.adviser_mode, seed=derive_seed(cfg.seed, "adviser"))
    net, trace = fit(records, train_cfg, cfg.label)
    save_checkpoint(net, out / "checkpoint.json", args.adviser_mode)
    with open(out / "loss_trace.csv", "w") as fh:
        fh.write("epoch,learning_rate,loss\n")
        for epoch, value in enumerate(trace):
            fh.write(f"{epoch},{train_cfg.learning_rate_at(epoch)!r},{value!r}\n")
    print(f"trained on {len(records)} records; final loss {trace[-1]:.6g}; checkpoint in {out}")


def cmd_evaluate(cfg, args):
    out = _prepare_out(cfg)
    net, mode = load_checkpoint(args.checkpoint)
    if cfg.test_records:
        test = ingest_records(cfg.test_records)
    else:
        _, test = harness.load_train_test(cfg)
    table, _ = harness.full_table(None, test, cfg, net=net, mode=mode)
    _report(table, out, "table1")


def cmd_full(cfg, args):
    out = _prepare_out(cfg)
    train, test = harness.load_train_test(cfg)
    table, net = harness.full_table(train, test, cfg)
    save_checkpoint(net, out / "checkpoint.json")
    _report(table, out, "table1")


def cmd_small(cfg, args):
    out = _prepare_out(cfg)
    records = harness.load_pool(cfg)
    table, per_rep = harness.run_small_protocol(records, cfg)
    for i, t in enumerate(per_rep):
        t.write(out / "repetitions", f"rep{i}")
    _report(table, out, "table2")


def cmd_compare(cfg, args):
    out = _prepare_out(cfg)
    _report(harness.compare_classification_regression(cfg), out, "table3")


def cmd_sweep(cfg, args):
    out = _prepare_out(cfg)
    table = harness.temperature_sweep(cfg)
    _report(table, out, "sweep")
    print(f"adviser mean accuracy spread across temperatures: {harness.adviser_spread(table):.2f} points")


COMMANDS = {
    "generate": cmd_generate,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "full": cmd_full,
    "small": cmd_small,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args) or 0
    except (RecordError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
