"""CLI entry point for qpu-kit."""

from __future__ import annotations

import argparse
import errno
import json
import logging
import os
import sys
from collections.abc import Callable, Sequence
from typing import Any

from qpu_kit.errors import (
    CheckpointFormatError,
    ConfigError,
    DatasetFormatError,
)
from qpu_kit.schemas import (
    BridgeMode,
    GenConfig,
    ModelKind,
    RunConfig,
    Scenario,
    TrainConfig,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CONFIG = 4
EXIT_FORMAT = 5


def setup_logging(log_dir: str = "output", verbose: bool = False) -> None:
    """Configure logging with file and console handlers.

    - File handler: DEBUG level -> ``{log_dir}/qpu_kit.log`` (always)
    - Console handler: DEBUG level (if *verbose*) or INFO level -> stderr
    """
    os.makedirs(log_dir, exist_ok=True)
    log_path = os.path.join(log_dir, "qpu_kit.log")

    fmt = logging.Formatter(
        "%(asctime)s | %(levelname)-8s | %(name)s:%(funcName)s:%(lineno)d | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    fh = logging.FileHandler(log_path, encoding="utf-8")
    fh.setLevel(logging.DEBUG)
    fh.setFormatter(fmt)

    console_level = logging.DEBUG if verbose else logging.INFO
    ch = logging.StreamHandler(sys.stderr)
    ch.setLevel(console_level)
    ch.setFormatter(fmt)

    root = logging.getLogger("qpu_kit")
    root.setLevel(logging.DEBUG)
    for handler in root.handlers:
        handler.close()
    root.handlers.clear()
    root.addHandler(fh)
    root.addHandler(ch)
    root.propagate = False

    # Prefect's console handler on the Python root must not re-print qpu_kit records
    py_root = logging.getLogger()
    py_root.handlers = [
        h for h in py_root.handlers if h.__class__.__name__ != "PrefectConsoleHandler"
    ]

    root.debug(
        "Logging initialised: file=%s (DEBUG), console (%s)",
        log_path,
        logging.getLevelName(console_level),
    )


# ─── Parser ──────────────────────────────────────────────────


_GEN = GenConfig()
_TRAIN = TrainConfig()


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", metavar="PATH", help="Run config JSON (default: ./qpu_kit.json if present)"
    )
    parser.add_argument("--seed", type=int, help=f"Seed for all randomness (default: {_GEN.seed})")
    parser.add_argument(
        "--threads", type=int, help="Worker threads (default: available cores)"
    )
    parser.add_argument(
        "--out", metavar="DIR", help=f"Output directory (default: {RunConfig().out})"
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="Verbose (DEBUG) console logging"
    )


def _data_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--sigma", type=float, help=f"Vertex-noise std dev (default: {_GEN.sigma})"
    )
    parser.add_argument(
        "--n-edges", type=int, help=f"Edges per skeleton (default: {_GEN.n_edges})"
    )
    parser.add_argument(
        "--n-train", type=int, help=f"Training samples (default: {_GEN.n_train})"
    )
    parser.add_argument("--n-test", type=int, help=f"Test samples (default: {_GEN.n_test})")
    parser.add_argument(
        "--shear-range",
        type=float,
        help=f"Shear factors drawn from ±range (default: {_GEN.shear_range})",
    )
    parser.add_argument(
        "--data", metavar="PATH", help="Stored dataset to use instead of generating (default: none)"
    )


def _train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--model",
        choices=[m.value for m in ModelKind],
        help=f"Model to train (default: {ModelKind.QMLP.value})",
    )
    parser.add_argument(
        "--bridge",
        choices=[b.value for b in BridgeMode],
        help="QPU-to-real connector (default: flatten4 for qmlp, keep_real for qmlp_rinv)",
    )
    parser.add_argument("--epochs", type=int, help=f"Training epochs (default: {_TRAIN.epochs})")
    parser.add_argument("--lr", type=float, help=f"Learning rate (default: {_TRAIN.learning_rate})")
    parser.add_argument("--batch", type=int, help=f"Mini-batch size (default: {_TRAIN.batch_size})")
    parser.add_argument(
        "--optimizer", choices=["sgd", "adam"], help=f"Optimizer (default: {_TRAIN.optimizer})"
    )
    parser.add_argument(
        "--tape-mode",
        choices=["store", "recompute"],
        help=f"Keep or rebuild prefix products for backward (default: {_TRAIN.tape_mode.value})",
    )


def _scenario_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--scenario",
        choices=[s.value for s in Scenario],
        help=f"Evaluation scenario (default: {Scenario.NO_ROTATION.value})",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qpu-kit",
        description="Quaternion product units: CubeEdge data, training and checks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="Generate a CubeEdge dataset")
    _common(p)
    _data_flags(p)

    p = sub.add_parser("train", help="Train one model and evaluate it")
    _common(p)
    _data_flags(p)
    _train_flags(p)
    _scenario_flag(p)

    p = sub.add_parser("eval", help="Evaluate a checkpoint on a test split")
    _common(p)
    _data_flags(p)
    _scenario_flag(p)
    p.add_argument("--checkpoint", metavar="PATH", required=True, help="Checkpoint .npz")

    p = sub.add_parser("gradcheck", help="Compare analytic and numeric gradients")
    _common(p)
    p.add_argument(
        "--layers",
        default="qmlp",
        choices=["qpu", "graph", "qmlp", "qmlp_rinv", "rmlp"],
        help="Layer stack to check (default: %(default)s)",
    )
    p.add_argument(
        "--tol", type=float, default=1e-5, help="Max relative error (default: %(default)s)"
    )

    p = sub.add_parser("verify-invariance", help="Check QPU rotation invariance")
    _common(p)
    p.add_argument(
        "--trials", type=int, default=1000, help="Random trials (default: %(default)s)"
    )
    p.add_argument(
        "--n-inputs", type=int, default=8, help="Inputs per QPU (default: %(default)s)"
    )

    p = sub.add_parser("bench", help="Sequential vs tree chain-product benchmark")
    _common(p)
    p.add_argument(
        "--n-values",
        default="1,2,8,64,128,1024",
        help="Comma-separated chain lengths (default: %(default)s)",
    )
    p.add_argument(
        "--repetitions", type=int, default=5, help="Timing repetitions (default: %(default)s)"
    )

    p = sub.add_parser("experiment", help="Noise sweep over all three models")
    _common(p)
    _data_flags(p)
    _train_flags(p)
    p.add_argument(
        "--sigmas",
        default="0,0.02,0.04",
        help="Comma-separated test noise levels (default: %(default)s)",
    )

    p = sub.add_parser("runs", help="List registered runs or show one in detail")
    _common(p)
    p.add_argument(
        "--run-id", type=int, help="Show one run with its epochs and evaluations (default: list all)"
    )
    return parser


# ─── Config resolution ───────────────────────────────────────


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Flags > config file > built-in defaults."""
    from qpu_kit.config import load_run_config, merge_overrides

    cfg = load_run_config(args.config)
    get = lambda name: getattr(args, name, None)  # noqa: E731
    overrides: dict[str, Any] = {
        "data.seed": get("seed"),
        "train.seed": get("seed"),
        "data.sigma": get("sigma"),
        "data.n_edges": get("n_edges"),
        "data.n_train": get("n_train"),
        "data.n_test": get("n_test"),
        "data.shear_range": get("shear_range"),
        "train.model": get("model"),
        "train.bridge": get("bridge"),
        "train.epochs": get("epochs"),
        "train.learning_rate": get("lr"),
        "train.batch_size": get("batch"),
        "train.optimizer": get("optimizer"),
        "train.tape_mode": get("tape_mode"),
        "train.threads": get("threads"),
        "out": get("out"),
        "data_path": get("data"),
        "scenario": get("scenario"),
    }
    return merge_overrides(cfg, overrides)


def _print_config(payload: dict[str, Any]) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def _floats(text: str, flag: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"{flag} expects comma-separated numbers, got {text!r}") from exc


# ─── Commands ────────────────────────────────────────────────


def cmd_gen_data(args: argparse.Namespace, cfg: RunConfig) -> int:
    from qpu_kit.cubeedge import class_histogram, generate_dataset, save_dataset

    _print_config({"data": cfg.data.model_dump(mode="json"), "out": cfg.out})
    dataset = generate_dataset(cfg.data, threads=cfg.train.threads)
    path = save_dataset(dataset, cfg.out)
    hist = class_histogram(dataset.train, cfg.data.n_classes)
    print(f"Wrote {path}")
    print("class  train  test")
    test_hist = class_histogram(dataset.test, cfg.data.n_classes)
    for c in range(cfg.data.n_classes):
        print(f"{c:>5}  {hist[c]:>5}  {test_hist[c]:>4}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    from qpu_kit.db import DB_FILENAME, init_db

    _print_config(cfg.model_dump(mode="json"))
    from qpu_kit import pipeline

    setup_logging(cfg.out, args.verbose)
    conn = init_db(os.path.join(cfg.out, DB_FILENAME))
    try:
        report = pipeline.training_pipeline(cfg, conn=conn)
    finally:
        conn.close()
    print(f"\nDone: {report}")
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace, cfg: RunConfig) -> int:
    from qpu_kit.db import DB_FILENAME, init_db

    sigmas = _floats(args.sigmas, "--sigmas")
    _print_config({**cfg.model_dump(mode="json"), "sigmas": sigmas})
    from qpu_kit import pipeline

    setup_logging(cfg.out, args.verbose)
    conn = init_db(os.path.join(cfg.out, DB_FILENAME))
    try:
        report = pipeline.experiment_pipeline(cfg, sigmas=sigmas, conn=conn)
    finally:
        conn.close()
    print(f"\nDone: {report}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    from qpu_kit.cubeedge import generate_dataset, load_dataset
    from qpu_kit.models import load_checkpoint
    from qpu_kit.training import evaluate

    _print_config(
        {
            "checkpoint": args.checkpoint,
            "data": cfg.data.model_dump(mode="json"),
            "data_path": cfg.data_path,
            "scenario": cfg.scenario.value,
            "seed": cfg.train.seed,
        }
    )
    model, header = load_checkpoint(args.checkpoint)
    dataset = (
        load_dataset(cfg.data_path)
        if cfg.data_path
        else generate_dataset(cfg.data, threads=cfg.train.threads)
    )
    if dataset.config.n_features != header.model.n_inputs:
        raise ConfigError(
            f"checkpoint expects {header.model.n_inputs} features, "
            f"dataset has {dataset.config.n_features}"
        )
    report = evaluate(
        model, dataset.test, cfg.scenario, seed=cfg.train.seed, sigma=dataset.config.sigma
    )
    print(report.model_dump_json(indent=2))
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace, cfg: RunConfig) -> int:
    from qpu_kit.verify import format_gradcheck, gradcheck

    _print_config({"layers": args.layers, "tol": args.tol, "seed": cfg.train.seed})
    rows = gradcheck(args.layers, args.tol, cfg.train.seed)
    print(format_gradcheck(rows, args.tol))
    passed = all(r.passed for r in rows)
    print("PASS" if passed else "FAIL")
    return EXIT_OK if passed else EXIT_FAILURE


def cmd_verify_invariance(args: argparse.Namespace, cfg: RunConfig) -> int:
    from qpu_kit.verify import verify_invariance

    _print_config({"trials": args.trials, "n_inputs": args.n_inputs, "seed": cfg.train.seed})
    report = verify_invariance(args.trials, args.n_inputs, cfg.train.seed)
    print(f"max real-part deviation:      {report.max_real_deviation:.3e}")
    print(f"max imaginary-part deviation: {report.max_imag_deviation:.3e}")
    print(f"tolerance:                    {report.tol:.0e}")
    print("PASS" if report.passed else "FAIL")
    return EXIT_OK if report.passed else EXIT_FAILURE


def cmd_bench(args: argparse.Namespace, cfg: RunConfig) -> int:
    from qpu_kit.bench import bench_chain, format_bench

    n_values = [int(n) for n in _floats(args.n_values, "--n-values")]
    _print_config(
        {"n_values": n_values, "repetitions": args.repetitions, "seed": cfg.train.seed}
    )
    print(format_bench(bench_chain(n_values, args.repetitions, cfg.train.seed)))
    return EXIT_OK


def _format_runs(runs: list[dict]) -> str:
    lines = [f"{'id':>4}  {'model':<10} {'status':<9} {'started_at':<32} report"]
    for r in runs:
        lines.append(
            f"{r['id']:>4}  {r['model']:<10} {r['status']:<9} "
            f"{r['started_at']:<32} {r['report_path'] or '-'}"
        )
    return "\n".join(lines)


def cmd_runs(args: argparse.Namespace, cfg: RunConfig) -> int:
    from qpu_kit.db import DB_FILENAME, get_run, init_db, list_runs

    db_path = os.path.join(cfg.out, DB_FILENAME)
    _print_config({"db": db_path, "run_id": args.run_id})
    if not os.path.isfile(db_path):
        raise FileNotFoundError(errno.ENOENT, "no run registry", db_path)
    conn = init_db(db_path)
    try:
        if args.run_id is None:
            print(_format_runs(list_runs(conn)))
            return EXIT_OK
        run = get_run(conn, args.run_id)
    finally:
        conn.close()
    if run is None:
        print(f"Error: no run with id {args.run_id}", file=sys.stderr)
        return EXIT_FAILURE
    print(json.dumps(run, indent=2, default=str))
    return EXIT_OK


COMMANDS: dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "verify-invariance": cmd_verify_invariance,
    "bench": cmd_bench,
    "experiment": cmd_experiment,
    "runs": cmd_runs,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, run one subcommand and return its exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    setup_logging(args.out or RunConfig().out, args.verbose)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except FileNotFoundError as exc:
        print(f"Error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except ConfigError as exc:
        print(f"Error: configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetFormatError, CheckpointFormatError) as exc:
        print(f"Error: format: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except Exception as exc:
        logger.debug("Command %s failed", args.command, exc_info=True)
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
