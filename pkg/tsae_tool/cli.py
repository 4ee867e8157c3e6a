"""Command-line entry point.

Exit codes: 0 ok, 1 configuration, 2 data, 3 numerical, 4 checkpoint compatibility.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from tsae_tool import TOOL_NAME, __version__
from tsae_tool.config import (
    DATA_DIR_ENV,
    MODEL_KINDS,
    SCHEMES,
    RunConfig,
    TsneConfig,
    apply_overrides,
    default_data_dir,
    load_run_config,
    preset,
    write_run_config,
)
from tsae_tool.core.adversarial import LossHistory, fit_to_dataset, generate_batch, train
from tsae_tool.core.batch import batch_evaluate
from tsae_tool.core.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from tsae_tool.core.datapipe import denormalize, load_dataset_dir, read_csv_series, write_csv_series, write_stats
from tsae_tool.core.evaluation import DEFAULT_GENERATED, build_report
from tsae_tool.core.fetch import fetch_dataset
from tsae_tool.core.reporting import envelope, format_headline, write_generation_manifest, write_json, write_metrics_report
from tsae_tool.core.tsne import tsne_embed
from tsae_tool.errors import ConfigError, TsaeError
from tsae_tool.models import MultivariateSeries
from tsae_tool.util.paths import run_dir, safe_mkdir
from tsae_tool.util.plotting import scatter_svg

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
DATA_COMMANDS = {"fetch-data", "evaluate", "embed", "compare"}


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


# ---------- config resolution ----------
def _flag_overrides(args: argparse.Namespace) -> list[str]:
    pairs = [
        ("model", "model"),
        ("scheme", "gan.scheme"),
        ("epochs", "gan.epochs"),
        ("batch_size", "gan.batch_size"),
        ("seed", "seed"),
        ("data", "data_dir"),
        ("out", "out_dir"),
    ]
    out = []
    for attr, key in pairs:
        value = getattr(args, attr, None)
        if value is not None:
            out.append(f"{key}={json.dumps(value)}")
    return out


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """Preset or config file, then --set overrides, then the dedicated flags."""
    run = load_run_config(args.config) if args.config else preset(args.preset)
    run = apply_overrides(run, list(args.set or []) + _flag_overrides(args))
    if not run.data_dir and default_data_dir():
        run = apply_overrides(run, [f"data_dir={json.dumps(default_data_dir())}"])
    return run


def _workers(run: RunConfig, requested: int | None) -> int:
    workers = requested if requested is not None else run.workers
    if run.deterministic and workers > 1:
        logger.info("Deterministic mode: DTW search runs in-process (workers=1)")
        return 1
    return workers


def _dataset_for(ckpt: Checkpoint, data: str | None):
    path = data or default_data_dir() or ckpt.run.data_dir
    if not path:
        raise ConfigError(f"no dataset directory given (flag --data or ${DATA_DIR_ENV})", "data")
    return path, load_dataset_dir(path, ckpt.sos_value, ckpt.stats)


# ---------- commands ----------
def cmd_fetch_data(args: argparse.Namespace) -> int:
    out = args.out or default_data_dir() or str(Path("data") / Path(args.source).stem)
    result = fetch_dataset(args.source, out, args.sha256)
    print(f"train: {result.train_path} ({result.n_train} series)")
    print(f"test:  {result.test_path} ({result.n_test} series)")
    print(f"sha256 {result.source_sha256}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    run = resolve_run_config(args).validate(check_paths=True)
    dataset = load_dataset_dir(run.data_dir, run.transformer.sos_value)
    run = fit_to_dataset(run, dataset).validate(check_paths=True)

    resume = load_checkpoint(args.resume) if args.resume else None
    out = run_dir(run.out_dir, run.label, run.seed)
    write_run_config(str(out / "effective_config.json"), run)
    write_stats(str(out / "stats.json"), dataset.stats)

    history = LossHistory()
    ckpt = train(dataset, run, [history], resume, checkpoint_dir=str(out / "checkpoints"))
    history.write_csv(str(out / "loss_history.csv"))
    path = save_checkpoint(str(out / "model.tsae"), ckpt)
    logger.info("Run folder: %s", out)
    print(path)
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"generated_seed{args.seed}"
    series = generate_batch(ckpt, args.n, args.seed)
    names = ckpt.stats.names() if ckpt.stats is not None else None

    files: list[str] = []
    for s in series:
        files.append(write_csv_series(str(out / "normalized" / f"{s.label}.csv"), s, names))
        if ckpt.stats is not None:
            files.append(write_csv_series(str(out / "denormalized" / f"{s.label}.csv"), denormalize(s, ckpt.stats), names))
    manifest = write_generation_manifest(str(out), files, args.checkpoint, args.n, args.seed)
    logger.info("Wrote %d files and %s", len(files), manifest)
    print(out)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    data_path, dataset = _dataset_for(ckpt, args.data)
    report = build_report(ckpt, dataset, args.n, args.seed, _workers(ckpt.run, args.workers))
    out = args.out or str(Path(args.checkpoint).parent / f"eval_seed{args.seed}")
    paths = write_metrics_report(out, report, args.checkpoint, data_path)
    print(format_headline(report))
    print(json.dumps(report.headline()))
    print(paths["report"])
    return 0


def _load_generated(folder: str) -> list[MultivariateSeries]:
    files = sorted(Path(folder).glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no generated CSV files in {folder}")
    return [read_csv_series(str(f))[0] for f in files]


def cmd_embed(args: argparse.Namespace) -> int:
    real: list[MultivariateSeries] = []
    generated: list[MultivariateSeries] = []
    ckpt = load_checkpoint(args.checkpoint) if args.checkpoint else None

    if args.data:
        if ckpt is not None:
            _, dataset = _dataset_for(ckpt, args.data)
        else:
            dataset = load_dataset_dir(args.data)
        real = dataset.validation if args.split == "validation" else dataset.train
    if args.generated:
        generated = _load_generated(args.generated)
    elif ckpt is not None:
        generated = generate_batch(ckpt, args.n, args.seed)
    if not real and not generated:
        raise ConfigError("nothing to embed: give --data and/or --generated/--checkpoint", "data")

    config = TsneConfig(
        perplexity=args.perplexity,
        iterations=args.iterations,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )
    series = [*real, *generated]
    result = tsne_embed(series, config)

    out = safe_mkdir(Path(args.out))
    sources = ["real"] * len(real) + ["generated"] * len(generated)
    frame = pd.DataFrame(
        {
            "id": np.arange(len(series)),
            "x": result.coords[:, 0],
            "y": result.coords[:, 1],
            "source": sources,
            "label": [s.label or "" for s in series],
        }
    )
    csv_path = out / "embedding.csv"
    frame.to_csv(csv_path, index=False)
    write_json(
        str(out / "embedding.json"),
        envelope(tsne=dataclasses.asdict(config), final_kl=result.final_kl, kl_history=result.kl_history, n_real=len(real), n_generated=len(generated)),
    )
    print(csv_path)
    if args.svg:
        labels = None
        if args.color_by == "label":
            labels = [s.label if src == "real" else None for s, src in zip(series, sources)]
        print(scatter_svg(result.coords, sources, str(out / "embedding.svg"), title=args.title or "", labels=labels))
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    data = args.data or default_data_dir()
    if not data:
        raise ConfigError(f"no dataset directory given (flag --data or ${DATA_DIR_ENV})", "data")
    dataset = load_dataset_dir(data)
    workers = 1 if args.workers is None else args.workers
    out = args.out or str(Path(args.folder) / "compare")
    summary = batch_evaluate(args.folder, dataset, out, args.n, args.seed, workers)
    print(pd.read_csv(summary["comparison_path"]).to_string(index=False))
    print(summary["summary_path"])
    return 0 if summary["totals"]["files_failed"] == 0 else 1


def cmd_gui(args: argparse.Namespace) -> int:
    from tsae_tool.app import run_app

    run_app()
    return 0


# ---------- parser ----------
def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config (e.g. a previous effective_config.json)")
    p.add_argument("--preset", default="natops", choices=["natops", "smoke"], help="defaults when no --config is given")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, e.g. --set transformer.d=32 (repeatable)")
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help=f"dataset folder (default ${DATA_DIR_ENV})")
    p.add_argument("--out", help="root folder for run outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsae", description=f"{TOOL_NAME} {__version__}")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("fetch-data", help="download or unpack a .ts train/test pair")
    p.add_argument("source", help="URL, local .zip, local folder, or a dataset name such as NATOPS")
    p.add_argument("--out", help="destination folder")
    p.add_argument("--sha256", help="expected checksum of the archive")
    p.set_defaults(func=cmd_fetch_data)

    p = sub.add_parser("train", help="train an autoencoder (optionally adversarially)")
    _add_run_flags(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode series from prior samples")
    p.add_argument("checkpoint")
    p.add_argument("--n", type=int, default=DEFAULT_GENERATED)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="avg. DTW, entropy and test error for one checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--data")
    p.add_argument("--n", type=int, default=DEFAULT_GENERATED)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("embed", help="t-SNE of real and/or generated series")
    p.add_argument("--data", help="dataset folder for the real population")
    p.add_argument("--split", choices=["validation", "train"], default="validation")
    p.add_argument("--generated", help="folder of normalized generated CSVs")
    p.add_argument("--checkpoint", help="generate on the fly (and normalize --data with its stats)")
    p.add_argument("--n", type=int, default=DEFAULT_GENERATED)
    defaults = TsneConfig()
    p.add_argument("--perplexity", type=float, default=defaults.perplexity)
    p.add_argument("--iterations", type=int, default=defaults.iterations)
    p.add_argument("--learning-rate", type=float, default=defaults.learning_rate)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--svg", action="store_true", help="also write embedding.svg")
    p.add_argument("--color-by", choices=["source", "label"], default="source", help="SVG colouring: real/generated, or per class label")
    p.add_argument("--title")
    p.add_argument("--out", default="embedding")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("compare", help="evaluate every checkpoint in a folder")
    p.add_argument("folder")
    p.add_argument("--data")
    p.add_argument("--n", type=int, default=DEFAULT_GENERATED)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gui", help="open the desktop viewer")
    p.set_defaults(func=cmd_gui)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    if args.command is None:
        parser.print_help()
        return 1

    try:
        return args.func(args)
    except TsaeError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except FileNotFoundError as e:
        logger.error("%s", e)
        return 2 if args.command in DATA_COMMANDS else 1
    except NotADirectoryError as e:
        logger.error("%s", e)
        return 1
