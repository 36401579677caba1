"""Command line entry point: ``dlgfa {synth,train,eval,report,sweep}``.

Command-line flags override values from ``--config``, which override the
built-in defaults.  Every command writes a JSON manifest (resolved config,
seeds, library versions) into its output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, apply_overrides, config_from_dict, load_raw
from .data import (
    LongitudinalDataset,
    SplitSpec,
    generate_one_bar,
    load_wide_csv,
    save_wide_csv,
    split_dataset,
)
from .errors import DlgfaError
from .evaluation import (
    export_heatmap_csv,
    format_table,
    lambda_sweep,
    mse_test,
    sparsity_report,
    test_log_likelihood,
    top_features_per_factor,
)
from .model import ModelConfig
from .optim import fit

log = logging.getLogger("dlgfa")


def versions() -> dict:
    return {
        "dlgfa": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def write_manifest(path: Path, command: str, config: dict, seeds: dict) -> None:
    manifest = {"command": command, "config": config, "seeds": seeds, "versions": versions()}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# shared helpers


def load_run_config(args) -> RunConfig:
    overrides = {
        "output_dir": getattr(args, "output_dir", None),
        "optim.seed": getattr(args, "seed", None),
        "optim.lambda": getattr(args, "lam", None),
        "optim.max_epochs": getattr(args, "max_epochs", None),
        "optim.max_iterations": getattr(args, "max_iterations", None),
        "optim.batch_size": getattr(args, "batch_size", None),
    }
    manifest = getattr(args, "manifest", None)
    if manifest:
        raw = json.loads(Path(manifest).read_text(encoding="utf-8"))["config"]
        return config_from_dict(apply_overrides(raw, overrides))
    if not args.config:
        raise DlgfaError("either --config or --manifest is required")
    raw, text = load_raw(args.config)
    return config_from_dict(apply_overrides(raw, overrides), text, base_dir=Path(args.config).resolve().parent)


def load_dataset(cfg: RunConfig) -> LongitudinalDataset:
    d = cfg.data
    if d.source == "csv":
        return load_wide_csv(d.path, d.group_map)
    return generate_one_bar(d.n, d.size, d.noise_sd, d.seed, d.mode, d.T)


def build_model_config(cfg: RunConfig, ds: LongitudinalDataset) -> ModelConfig:
    fields = {k: v for k, v in cfg.model.items() if v is not None}
    fields.setdefault("T", ds.T)
    return ModelConfig(group_spec=ds.group_spec, **fields)


def splits(cfg: RunConfig, ds: LongitudinalDataset):
    return split_dataset(ds, SplitSpec(cfg.data.split, cfg.data.split_seed))


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    ds = generate_one_bar(args.n, args.size, args.noise_sd, args.seed, args.mode, args.T)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_wide_csv(ds, out)
    params = {"n": args.n, "size": args.size, "noise_sd": args.noise_sd, "seed": args.seed, "mode": args.mode, "T": args.T}
    write_manifest(out.parent / "manifest_synth.json", "synth", {"synth": params, "out": str(out)}, {"data": args.seed})
    print(f"wrote {ds.N} sequences (T={ds.T}, d={ds.d}, G={ds.group_spec.G}) to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    ds = load_dataset(cfg)
    train, _, _ = splits(cfg, ds)
    mcfg = build_model_config(cfg, ds)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.json", "train", cfg.to_dict(), {"optim": cfg.optim.seed, "data": cfg.data.seed})

    def checkpoint(epoch, model, history):
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(model, out / f"model_epoch{epoch}.ckpt", {"epoch": epoch})

    model, history = fit(train, mcfg, cfg.optim, callback=checkpoint)
    save_checkpoint(model, out / "model.ckpt", {"epochs": len(history), "iterations": history.iterations})
    history.to_csv(out / "history.csv")
    last = history.epochs[-1] if history.epochs else None
    summary = f"trained {len(history)} epochs ({history.iterations} iterations)"
    if last is not None:
        summary += f", objective {last.objective:.6g}, zero columns {history.zero_columns[-1]}"
    print(summary)
    print(f"outputs in {out}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if args.data:
        ds = load_wide_csv(args.data)
        label = args.data
    else:
        cfg = load_run_config(args)
        _, _, ds = splits(cfg, load_dataset(cfg))
        label = "test split"
    out = Path(args.output_dir) if args.output_dir else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        ("mse_test", mse_test(model, ds)),
        ("mse_test_sampled", mse_test(model, ds, "sampled", seed=args.seed)),
        ("test_loglik", test_log_likelihood(model, ds, args.num_samples, seed=args.seed)),
        ("n_sequences", ds.N),
        ("zero_columns", int(model.loadings.zero_columns().sum())),
    ]
    with open(out / "metrics.csv", "w", encoding="utf-8") as fh:
        fh.write("metric,value\n")
        for name, value in rows:
            fh.write(f"{name},{value!r}\n")
    write_manifest(
        out / "manifest_eval.json",
        "eval",
        {"checkpoint": str(args.checkpoint), "data": label, "num_samples": args.num_samples},
        {"eval": args.seed},
    )
    print(format_table(["metric", "value"], rows))
    return 0


def cmd_report(args) -> int:
    model = load_checkpoint(args.checkpoint)
    report = sparsity_report(model)
    t = args.t if args.t is not None else report.T
    out = Path(args.output_dir) if args.output_dir else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "sparsity.csv")
    export_heatmap_csv(report, t, out / f"heatmap_t{t}.csv")
    ranking = top_features_per_factor(report, t, args.top_k)
    ranking.to_csv(out / f"ranking_t{t}.csv")
    write_manifest(out / "manifest_report.json", "report", {"checkpoint": str(args.checkpoint), "t": t, "top_k": args.top_k}, {})
    rows = [
        (j, ", ".join(f"{name} ({norm:.3g})" for name, norm in entries) or "-")
        for j, entries in ranking.factors.items()
    ]
    print(f"zero columns: {int(report.zero_flags.sum())} of {report.zero_flags.size}")
    print(format_table(["latent", f"top groups at t={t}"], rows))
    return 0


def cmd_sweep(args) -> int:
    cfg = load_run_config(args)
    ds = load_dataset(cfg)
    lambdas = [float(x) for x in args.lambdas.split(",") if x.strip()]
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(
        out / "manifest_sweep.json",
        "sweep",
        dict(cfg.to_dict(), lambdas=lambdas),
        {"optim": cfg.optim.seed, "data": cfg.data.seed},
    )
    rows = lambda_sweep(
        ds,
        build_model_config(cfg, ds),
        cfg.optim,
        lambdas,
        SplitSpec(cfg.data.split, cfg.data.split_seed),
        path=out / "sweep.csv",
        workers=args.workers,
    )
    print(format_table(["lambda", "mse_val", "val_loglik", "zero_columns"], [(r.lam, r.mse_val, r.val_loglik, r.zero_columns) for r in rows]))
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlgfa", description="Longitudinal group factor model toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{synth,train,eval,report,sweep}")

    p = sub.add_parser("synth", help="generate a one-bar dataset CSV")
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--noise-sd", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["row_as_time", "replicate_T"], default="row_as_time")
    p.add_argument("--T", type=int, default=20, help="timesteps in replicate_T mode")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    def run_flags(p):
        p.add_argument("--config")
        p.add_argument("--manifest", help="rerun from a manifest.json written by train")
        p.add_argument("--output-dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--max-epochs", type=int)
        p.add_argument("--max-iterations", type=int)
        p.add_argument("--batch-size", type=int)

    p = sub.add_parser("train", help="fit a model")
    run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on held-out data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="config whose data test split is evaluated")
    p.add_argument("--manifest")
    p.add_argument("--data", help="evaluate every sequence of this CSV instead")
    p.add_argument("--output-dir")
    p.add_argument("--num-samples", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="sparsity, heatmap and ranking CSVs for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--t", type=int, help="1-based timestep (default: last)")
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="train one model per lambda and score on validation")
    run_flags(p)
    p.add_argument("--lambdas", required=True, help="comma separated, e.g. 0,1,5")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (DlgfaError, ValueError, OSError) as exc:
        message = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"dlgfa {args.command}: error: {message}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())
