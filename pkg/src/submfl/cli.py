"""Command-line entry point: ``submfl {run,prune,eval,report}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
failure. Set ``SUBMFL_LOG_LEVEL`` (e.g. ``DEBUG``) for more output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .config import ConfigError, load_config
from .data import DataError, load_idx
from .nn import evaluate
from .orchestrator import compare_reports, prepare, run_sfl_baseline, run_submfl
from .pruning import PruneMode, PruningError, generate_submodels, global_sparsity
from .reporting import (
    Checkpoint,
    CheckpointError,
    atomic_write_text,
    comparison_to_csv,
    load_checkpoint,
    metrics_rows,
    metrics_to_csv,
    read_comparison_csv,
    render_table,
    save_checkpoint,
    summary_json,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

logger = logging.getLogger("submfl")


def _overrides(args) -> dict:
    out = {}
    for attr, key in [
        ("seed", "seed"),
        ("out_dir", "out_dir"),
        ("mode", "pruning_mode"),
        ("devices", "n_devices"),
        ("rounds", "rounds"),
        ("availability", "availability_fraction"),
        ("workers", "workers"),
    ]:
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def checkpoint_name(stage: str, threshold: float) -> str:
    return f"{stage}_t{threshold:.1f}.json"


def cmd_run(args) -> int:
    try:
        config = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        experiment = prepare(config)
    except (DataError, ValueError) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA

    start = time.perf_counter()
    try:
        submfl = run_submfl(experiment)
        sfl = run_sfl_baseline(experiment)
        table = compare_reports(submfl, sfl)
    except Exception as exc:  # noqa: BLE001
        logger.exception("run failed: %s", exc)
        return EXIT_RUNTIME
    elapsed = time.perf_counter() - start

    out = Path(config.out_dir)
    digest = config.digest()
    # everything is computed before the first byte hits disk
    try:
        for row in submfl.rows:
            params, mask = submfl.models[row.stage]
            save_checkpoint(
                out / "checkpoints" / checkpoint_name(row.stage, row.threshold),
                Checkpoint(params, mask, row.stage, config.seed, digest),
            )
        atomic_write_text(out / "rounds.csv", metrics_to_csv(metrics_rows(submfl)))
        atomic_write_text(out / "comparison.csv", comparison_to_csv(table))
        atomic_write_text(out / "summary.json", summary_json(config, submfl, sfl, table, round(elapsed, 3)))
    except OSError as exc:
        logger.error("cannot write outputs: %s", exc)
        return EXIT_RUNTIME
    print(render_table(table), end="")
    logger.info("outputs in %s (%.1fs)", out, elapsed)
    return EXIT_OK


def cmd_prune(args) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    try:
        cascade = generate_submodels(ckpt.params, args.mode or PruneMode.QUANTILE)
    except PruningError as exc:
        logger.error("cannot prune: %s", exc)
        return EXIT_RUNTIME
    out = Path(args.out_dir or Path(args.checkpoint).with_suffix("").name + "_pruned")
    lines = ["threshold,global_sparsity,trainable_params"]
    for sub in cascade:
        stage = f"sm{round(sub.threshold * 10)}"
        save_checkpoint(
            out / checkpoint_name(stage, sub.threshold),
            Checkpoint(sub.params, sub.mask, stage, ckpt.seed, ckpt.config_hash),
        )
        lines.append(f"{sub.threshold:.1f},{global_sparsity(sub.params):.6f},{sub.n_trainable}")
    table = "\n".join(lines) + "\n"
    atomic_write_text(out / "sparsity.csv", table)
    print(table, end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    try:
        if args.images:
            dataset = load_idx(args.images, args.labels, ckpt.spec.n_classes)
        else:
            dataset = prepare(load_config(args.config, _overrides(args))).holdout
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, ValueError) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    if dataset.dim != ckpt.spec.n_inputs:
        logger.error("dataset has %d features, checkpoint expects %d", dataset.dim, ckpt.spec.n_inputs)
        return EXIT_DATA
    loss, acc = evaluate(ckpt.params, dataset.features, dataset.labels)
    print(json.dumps({"accuracy": acc, "loss": loss, "samples": len(dataset)}))
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.out_dir) / "comparison.csv"
    try:
        table = read_comparison_csv(path)
    except (OSError, ValueError) as exc:
        logger.error("cannot read %s: %s", path, exc)
        return EXIT_DATA
    print(render_table(table), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="submfl", description="Submodel cascade federated learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir")
        p.add_argument("--mode", choices=[m.value for m in PruneMode])
        p.add_argument("--devices", type=int)
        p.add_argument("--rounds", type=int)
        p.add_argument("--availability", type=float)
        p.add_argument("--workers", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")

    p = sub.add_parser("run", help="simulate the cascade and the random-sparse baseline")
    experiment_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("prune", help="cut a checkpoint into the nine-submodel cascade")
    p.add_argument("checkpoint")
    p.add_argument("--mode", choices=[m.value for m in PruneMode])
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("eval", help="evaluate a checkpoint; prints JSON")
    p.add_argument("checkpoint")
    experiment_flags(p)
    p.add_argument("--images", help="IDX images file (otherwise the config's holdout set is used)")
    p.add_argument("--labels", help="IDX labels file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="print the comparison table of a finished run")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("SUBMFL_LOG_LEVEL", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) == "eval" and bool(args.images) != bool(args.labels):
        logger.error("--images and --labels go together")
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
