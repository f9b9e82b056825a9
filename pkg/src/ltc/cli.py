"""Command-line entry point.

    ltc synth  --config cfg.txt --out dataset.csv
    ltc train  --config cfg.txt [--key value ...]
    ltc stream --run RUNDIR
    ltc eval   --run RUNDIR
    ltc sweep  --config cfg.txt --axis tau.init --values 0.3,0.5,0.7
    ltc report --run RUNDIR | --sweep SWEEPDIR

Every config key doubles as a flag of the same dotted name.  Exit codes:
0 success, 1 config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import datakit, neuralcore, protodict, runner
from .config import KEYS, ConfigError, load_config


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="flat key = value config file")
    for key in sorted(KEYS):
        parser.add_argument(f"--{key}", dest=f"cfg::{key}", default=None,
                            metavar="V", help=argparse.SUPPRESS)


def _collect_overrides(ns: argparse.Namespace) -> dict[str, str]:
    out = {}
    for name, value in vars(ns).items():
        if name.startswith("cfg::") and value is not None:
            out[name[len("cfg::"):]] = value
    return out


def _load(ns: argparse.Namespace):
    return load_config(ns.config, _collect_overrides(ns))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ltc", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="materialize the configured dataset as CSV")
    _add_config_flags(p)
    p.add_argument("--out", default="dataset.csv", help="output CSV path")

    p = sub.add_parser("train", help="train and persist a run directory")
    _add_config_flags(p)

    p = sub.add_parser("stream", help="run streaming inference for a trained run")
    p.add_argument("--run", required=True, help="run directory from `ltc train`")

    p = sub.add_parser("eval", help="evaluate a completed stream")
    p.add_argument("--run", required=True, help="run directory with stream.csv")

    p = sub.add_parser("sweep", help="train/stream/eval across one config axis")
    _add_config_flags(p)
    p.add_argument("--axis", required=True, help="dotted config key to sweep")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", default=None, help="sweep output directory")

    p = sub.add_parser("report", help="render tables, CSV and figures")
    p.add_argument("--run", default=None, help="run directory")
    p.add_argument("--sweep", default=None, help="sweep directory")
    return parser


def _cmd_synth(ns) -> int:
    cfg = _load(ns)
    dataset = runner.build_dataset(cfg)
    datakit.save_embeddings_csv(ns.out, dataset)
    print(f"wrote {len(dataset)} samples x {dataset.dim} dims to {ns.out}")
    return 0


def _cmd_train(ns) -> int:
    cfg = _load(ns)
    out_dir = runner.default_run_dir(cfg)
    dataset = runner.build_dataset(cfg)
    split = runner.build_split(cfg, dataset)
    diagnostics = [] if cfg.mkee_dump_diagnostics else None
    model = runner.run_train(cfg, split, diagnostics_sink=diagnostics)
    runner.save_run(out_dir, cfg, model, split, diagnostics)
    last = model.record.epochs[-1]
    print(f"run dir: {out_dir}")
    print(f"final epoch: total={last.total:.4f} ce={last.ce:.4f} "
          f"sup={last.sup:.4f} mm={last.mm:.4f} tau={last.tau:.4f}")
    return 0


def _run_context(run_dir: Path):
    cfg = load_config(run_dir / runner.CONFIG_FILE)
    dataset = runner.build_dataset(cfg)
    manifest = json.loads((run_dir / runner.MANIFEST_FILE).read_text(encoding="utf-8"))
    split = datakit.split_from_manifest(dataset, manifest)
    return cfg, dataset, split


def _cmd_stream(ns) -> int:
    run_dir = Path(ns.run)
    _, _, split = _run_context(run_dir)
    params, store, tau = runner.load_checkpoint(run_dir / runner.CHECKPOINT_FILE)
    records, final_store = runner.run_stream(params, store, tau, split)
    protodict.write_stream_csv(run_dir / runner.STREAM_FILE, records)
    arrays, ints = protodict.store_to_arrays(final_store)
    neuralcore.write_checkpoint(run_dir / "store_after_stream.txt", arrays,
                                floats={"tau": tau}, ints=ints)
    print(f"streamed {len(records)} items, spawned {final_store.n_spawned} "
          f"categories ({run_dir / runner.STREAM_FILE})")
    return 0


def _cmd_eval(ns) -> int:
    run_dir = Path(ns.run)
    _, _, split = _run_context(run_dir)
    records = protodict.read_stream_csv(run_dir / runner.STREAM_FILE)
    report = runner.run_eval(records, split, split.k_known)
    (run_dir / runner.REPORT_FILE).write_text(report.to_json(), encoding="utf-8")
    print(f"report: {run_dir / runner.REPORT_FILE}")
    print(f"strict all/old/new = {report.acc_all_strict:.4f}/"
          f"{report.acc_old_strict:.4f}/{report.acc_new_strict:.4f}")
    print(f"greedy all/old/new = {report.acc_all_greedy:.4f}/"
          f"{report.acc_old_greedy:.4f}/{report.acc_new_greedy:.4f}")
    print(f"categories: {report.num_predicted_categories} "
          f"(true {report.num_true_classes})")
    return 0


def _cmd_sweep(ns) -> int:
    cfg = _load(ns)
    values = [v.strip() for v in ns.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty")
    out_dir = Path(ns.out) if ns.out else (
        Path(cfg.run_out_dir) / f"sweep-{ns.axis.replace('.', '_')}")
    rows = runner.run_sweep(cfg, ns.axis, values, out_dir)
    print(f"sweep dir: {out_dir}")
    for row in rows:
        print(f"  {ns.axis}={row['value']}: greedy all={row['acc_all_greedy']:.4f} "
              f"new={row['acc_new_greedy']:.4f}")
    return 0


def _cmd_report(ns) -> int:
    from . import report as report_mod
    if (ns.run is None) == (ns.sweep is None):
        raise ConfigError("report needs exactly one of --run or --sweep")
    files = (report_mod.report_run(Path(ns.run)) if ns.run
             else report_mod.report_sweep(Path(ns.sweep)))
    for f in files:
        print(f"wrote {f}")
    return 0


COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "stream": _cmd_stream,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return COMMANDS[ns.command](ns)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures map to exit code 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
