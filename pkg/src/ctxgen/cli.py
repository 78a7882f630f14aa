"""Command-line entry point: ``ctxgen <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .data import (
    DataError, Dataset, generate_faux_dataset, label_sparsity, load_dataset, load_metadata_csv,
    load_profiles_csv, assemble_dataset, write_metadata_csv, write_profiles_csv, write_truth_json,
)
from .experiments import ablate_lambda, ablation_csv, extrapolate
from .metrics import METRIC_KEYS, evaluate_all
from .numerics import ConfigurationError
from .trainer import (
    CheckpointError, TrainingError, generate_dataset, load_checkpoint, parse_checkpoint,
    save_checkpoint, train, write_log_csv,
)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _out(args, cfg) -> Path:
    return Path(args.out if getattr(args, "out", None) else cfg["run"]["out"])


def _seed(args, cfg) -> int:
    return int(args.seed) if getattr(args, "seed", None) is not None else int(cfg["run"]["seed"])


def _preset(args, cfg) -> str:
    return args.preset if getattr(args, "preset", None) else cfg["run"]["preset"]


def _dataset(args, cfg, prefix: str = "") -> Dataset:
    profiles = getattr(args, f"{prefix}profiles", None) or cfg["data"]["profiles"]
    metadata = getattr(args, f"{prefix}metadata", None) or cfg["data"]["metadata"]
    if not profiles or not metadata:
        raise ConfigurationError("dataset paths missing: pass --profiles/--metadata or set them in [data]")
    for p in (profiles, metadata):
        if not Path(p).exists():
            raise DataError(f"{p}: no such file")
    columns = cfg["data"]["context_columns"] or None
    return load_dataset(profiles, metadata, columns)


def _dataset_or_faux(args, cfg) -> Dataset:
    if getattr(args, "profiles", None) or cfg["data"]["profiles"]:
        return _dataset(args, cfg)
    ds, _ = generate_faux_dataset(config_mod.faux_spec_from(cfg), _seed(args, cfg))
    return ds


def _sparsity(ds: Dataset, cfg) -> np.ndarray:
    m = cfg["metrics"]
    k = min(int(m["k"]), len(ds))
    return label_sparsity(ds, m["freq_percentile"], m["cluster_fraction"], k, m["sparsity_seed"])


# -- commands ---------------------------------------------------------------------

def cmd_synth_data(args, cfg) -> int:
    spec = config_mod.faux_spec_from(cfg)
    ds, truth = generate_faux_dataset(spec, _seed(args, cfg))
    out = _out(args, cfg)
    write_profiles_csv(ds, out / "profiles.csv")
    write_metadata_csv(ds, out / "metadata.csv")
    write_truth_json(truth, out / "truth.json")
    print(f"wrote {len(ds)} profiles to {out}")
    return 0


def cmd_train(args, cfg) -> int:
    ds = _dataset(args, cfg)
    tc = config_mod.train_config_from(cfg, _preset(args, cfg), model=args.model, lambda_aux=args.lam,
                                      epochs=args.epochs, seed=args.seed)
    tc.profiles = str(args.profiles or cfg["data"]["profiles"])
    tc.metadata = str(args.metadata or cfg["data"]["metadata"])
    log = (lambda row: print(json.dumps(row), flush=True)) if args.verbose else None
    ckpt = train(tc, ds, progress=log)
    out = _out(args, cfg)
    save_checkpoint(ckpt, out / "checkpoint.cnts")
    write_log_csv(ckpt, out / "train_log.csv")
    last = ckpt.log[-1]
    print(f"trained {tc.model} for {tc.epochs} epochs; final loss_total {last['loss_total']:.6g}")
    return 0


def read_contexts_file(path, vocabulary) -> np.ndarray:
    """CSV with a header naming every context variable; one context per row."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != vocabulary.names:
            raise DataError(f"{path}: line 1: header must be {','.join(vocabulary.names)}")
        codes = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                codes.append(vocabulary.encode(row))
            except DataError as err:
                raise DataError(f"{path}: line {lineno}: {err}") from None
    if not codes:
        raise DataError(f"{path}: no contexts")
    return np.array(codes)


def cmd_generate(args, cfg) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    n = args.n if args.n is not None else cfg["generate"]["n"]
    seed = _seed(args, cfg)
    if args.all_train_contexts or (cfg["generate"]["all_train_contexts"] and not args.contexts):
        ds = _dataset(args, cfg) if (args.profiles or cfg["data"]["profiles"]) else None
        if ds is None:
            if not ckpt.config.profiles:
                raise ConfigurationError("--all-train-contexts needs the training data paths")
            ds = load_dataset(ckpt.config.profiles, ckpt.config.metadata, vocabulary=ckpt.vocabulary,
                              context_columns=ckpt.vocabulary.names[:-2])
        if ds.vocabulary != ckpt.vocabulary:
            raise DataError("training data vocabulary differs from the checkpoint's")
        syn = generate_dataset(ckpt, ds.codes, n, seed=seed, dates=ds.dates)
    else:
        path = args.contexts or cfg["generate"]["contexts"]
        if not path:
            raise ConfigurationError("pass --contexts FILE or --all-train-contexts")
        syn = generate_dataset(ckpt, read_contexts_file(path, ckpt.vocabulary), n, seed=seed)
    out = _out(args, cfg)
    write_profiles_csv(syn, out / "synthetic_profiles.csv")
    write_metadata_csv(syn, out / "synthetic_metadata.csv")
    print(f"wrote {len(syn)} synthetic profiles to {out}")
    return 0


def _load_against(profiles, metadata, vocabulary) -> Dataset:
    columns, meta = load_metadata_csv(metadata)
    declared = vocabulary.names[:-2]
    if columns != declared:
        diff = sorted(set(columns) ^ set(declared)) or columns
        raise DataError(f"vocabulary mismatch in variables {diff}")
    return assemble_dataset(load_profiles_csv(profiles), meta, declared, vocabulary)


def cmd_evaluate(args, cfg) -> int:
    real = _dataset(args, cfg, "real_")
    syn = _load_against(args.syn_profiles, args.syn_metadata, real.vocabulary)
    m = cfg["metrics"]
    bw = m["bandwidth"] if m["bandwidth"] == "median" else float(m["bandwidth"])
    report = evaluate_all(real, syn, _sparsity(real, cfg), _seed(args, cfg), bw, m["bmse_mode"])
    out = _out(args, cfg)
    _write_text(out / "report.json", report.to_json() + "\n")
    print(f"{'metric':<22}{'overall':>14}{'sparse_only':>14}")
    for k in METRIC_KEYS:
        o = report.overall.get(k)
        s = report.sparse_only.get(k) if report.sparse_only else None
        fmt = lambda v: f"{v:14.6g}" if v is not None else f"{'null':>14}"
        print(f"{k:<22}{fmt(o)}{fmt(s)}")
    return 0


def cmd_ablate_lambda(args, cfg) -> int:
    ds = _dataset_or_faux(args, cfg)
    tc = config_mod.train_config_from(cfg, _preset(args, cfg), model=args.model, epochs=args.epochs)
    lambdas = args.lambdas or cfg["ablation"]["lambdas"]
    seeds = args.seeds or cfg["ablation"]["seeds"]
    rows = ablate_lambda(tc, ds, _sparsity(ds, cfg), lambdas, seeds, _seed(args, cfg),
                         progress=lambda r: print(json.dumps(r), flush=True))
    out = _out(args, cfg)
    _write_text(out / "ablation.csv", ablation_csv(rows))
    failed = [r for r in rows if "error" in r]
    for r in failed:
        print(f"run lambda={r['lambda']} seed={r['seed']} failed: {r['error']}", file=sys.stderr)
    return 1 if failed else 0


def cmd_extrapolate(args, cfg) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = _dataset(args, cfg) if (args.profiles or cfg["data"]["profiles"]) else load_dataset(
        ckpt.config.profiles, ckpt.config.metadata, vocabulary=ckpt.vocabulary,
        context_columns=ckpt.vocabulary.names[:-2])
    e = cfg["extrapolate"]
    rep = extrapolate(ckpt, ds, e["target"], e["yes"], e["no"], e["match_columns"], e["n_samples"],
                      e["n_combos"], _seed(args, cfg))
    out = _out(args, cfg)
    _write_text(out / "shift.csv", rep.csv())
    _write_text(out / "shift.json", json.dumps(rep.summary(), indent=2, sort_keys=True) + "\n")
    print(f"pearson(model, context-matched) = {rep.pearson:.4f} over {rep.n_combos} combinations")
    return 0


def cmd_inspect(args, cfg) -> int:
    data = Path(args.checkpoint).read_bytes()
    sections = parse_checkpoint(data, args.checkpoint)
    meta = sections["meta"]
    arrays = {k: list(v.shape) for k, v in sections.items() if k != "meta"}
    summary = {
        "bytes": len(data),
        "config": meta["config"],
        "vocabulary": meta["vocabulary"],
        "T": meta["T"], "d": meta["d"], "channels": meta["channels"],
        "epochs_logged": len(meta["log"]),
        "final_log": meta["log"][-1] if meta["log"] else None,
        "n_arrays": len(arrays),
        "n_values": int(sum(int(np.prod(s)) for s in arrays.values())),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


# -- parser -------------------------------------------------------------------------

def _globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="INI config file (schema listed in ctxgen --help)")
    p.add_argument("--seed", type=int, default=d)
    p.add_argument("--out", default=d, help="output directory")
    p.add_argument("--preset", choices=("desk", "paper"), default=d)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxgen",
        description="Context-conditioned load profile generation.",
        epilog="Config schema:\n" + config_mod.schema_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    _globals(parser, False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a faux dataset (profiles, metadata, truth)")
    _globals(p, True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train encoder + generator, write checkpoint and log")
    _globals(p, True)
    p.add_argument("--profiles")
    p.add_argument("--metadata")
    p.add_argument("--model", choices=("baseline", "acgan", "diffusion"))
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample synthetic profiles from a checkpoint")
    _globals(p, True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--contexts", help="CSV of context values, header = variable names")
    p.add_argument("--all-train-contexts", action="store_true")
    p.add_argument("--profiles")
    p.add_argument("--metadata")
    p.add_argument("-n", type=int, help="profiles per context")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score synthetic against real profiles")
    _globals(p, True)
    p.add_argument("--real-profiles")
    p.add_argument("--real-metadata")
    p.add_argument("--syn-profiles", required=True)
    p.add_argument("--syn-metadata", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate-lambda", help="Context-FID across lambda values and seeds")
    _globals(p, True)
    p.add_argument("--profiles")
    p.add_argument("--metadata")
    p.add_argument("--model", choices=("baseline", "acgan", "diffusion"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lambdas", type=lambda s: config_mod.parse_value("list[float]", s, "--lambdas"))
    p.add_argument("--seeds", type=lambda s: config_mod.parse_value("list[int]", s, "--seeds"))
    p.set_defaults(func=cmd_ablate_lambda)

    p = sub.add_parser("extrapolate", help="pv shift of generated versus real profiles")
    _globals(p, True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--profiles")
    p.add_argument("--metadata")
    p.set_defaults(func=cmd_extrapolate)

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint summary")
    _globals(p, True)
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_mod.load_config(args.config) if getattr(args, "config", None) else config_mod.default_config()
        return args.func(args, cfg)
    except (ConfigurationError, DataError, CheckpointError, TrainingError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
