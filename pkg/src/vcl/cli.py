"""Command-line surface for pretraining, evaluation and dataset tooling.

Subcommands

    pretrain   run the self-supervised loop from a JSON config
    eval       linear probe or low-shot fine-tune against a checkpoint
    ablate     component and hyperparameter grid, one CSV row per cell
    gradcheck  run the finite-difference suite and write its report
    gen-data   generate (and optionally corrupt) a dataset file

stdout carries only key=value summary lines so runs are grep-friendly;
detail goes to files under --out. The --out flag falls back to the
VCL_OUT_DIR environment variable.

Exit codes: 0 success, 1 failed gradient check, 2 config or usage
error, 3 non-finite loss abort, 4 artifact mismatch (unreadable or
incompatible checkpoint or dataset).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from vcl.config import (ConfigError, RunConfig, load_run_config,
                        run_config_to_dict, with_seed)
from vcl.datasets import DataFormatError, dataset_summary
from vcl.datasets import load as load_dataset
from vcl.datasets import save as save_dataset
from vcl.evaluation import (FinetuneConfig, ProbeConfig, linear_probe,
                            low_shot_finetune, train_test_split)
from vcl.gradcheck import run_suite, suite_report
from vcl.trainer import (CheckpointError, NanLossError, build_dataset,
                         load_checkpoint, pretrain)

EXIT_OK = 0
EXIT_GRADCHECK = 1
EXIT_CONFIG = 2
EXIT_NAN = 3
EXIT_ARTIFACT = 4

TAU_GRID = (0.07, 0.1, 0.2)
BETA_GRID = (0.001, 0.005, 0.01)

# objective components toggled via the loss weights; base values are
# taken from the supplied config so a custom weighting stays honored
_COMPONENT_VARIANTS = (
    ("beta_only", ("lambda_dist", "lambda_norm")),
    ("beta_dist", ("lambda_norm",)),
    ("beta_norm", ("lambda_dist",)),
    ("full", ()),
)


class UsageError(Exception):
    """Bad flag combination or unusable path; maps to exit code 2."""


class ArtifactError(Exception):
    """Artifact loads but does not fit the operation; maps to exit 4."""


def _kv(key: str, value) -> None:
    print(f"{key}={value}")


def _out_dir(args) -> Path:
    given = args.out or os.environ.get("VCL_OUT_DIR")
    if not given:
        raise UsageError("--out is required (or set VCL_OUT_DIR)")
    out = Path(given)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(path: str) -> RunConfig:
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    return load_run_config(path)


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# pretrain

def cmd_pretrain(args) -> int:
    run = _load_config(args.config)
    if args.seed is not None:
        run = with_seed(run, args.seed)
    out = _out_dir(args)

    _write_json(out / "resolved-config.json", run_config_to_dict(run))
    try:
        result = pretrain(run, out_dir=out, resume=args.resume)
    except NanLossError as err:
        _write_json(out / "nan_dump.json", err.diagnostics)
        print(f"error: {err} (diagnostics in {out / 'nan_dump.json'})",
              file=sys.stderr)
        return EXIT_NAN

    _write_jsonl(out / "metrics.jsonl", result.step_records)
    _write_jsonl(out / "epochs.jsonl", result.epoch_records)

    _kv("steps", result.step)
    if result.step_records:
        _kv("final_total", result.step_records[-1]["total"])
    _kv("checkpoint", result.checkpoint_path)
    _kv("metrics", out / "metrics.jsonl")
    _kv("config", out / "resolved-config.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval

def _load_artifacts(args):
    for name, path in (("checkpoint", args.checkpoint), ("data", args.data)):
        if not Path(path).is_file():
            raise UsageError(f"{name} file not found: {path}")
    ck = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    if "enc0.w" not in ck.params:
        raise ArtifactError("checkpoint carries no encoder parameters")
    flat = 1
    for d in ds.inputs.shape[1:]:
        flat *= int(d)
    expected = ck.params["enc0.w"].data.shape[0]
    if flat != expected:
        raise ArtifactError(
            f"dataset rows flatten to {flat} values but the checkpoint "
            f"encoder expects {expected}")
    return ck, ds


def cmd_eval(args) -> int:
    if args.protocol == "lowshot" and args.fraction is None:
        raise UsageError("--fraction is required with --protocol lowshot")
    if args.fraction is not None and not 0.0 < args.fraction <= 1.0:
        raise UsageError(f"--fraction must be in (0, 1], got {args.fraction}")
    ck, ds = _load_artifacts(args)
    out = _out_dir(args)

    train_ds, test_ds = train_test_split(ds, test_fraction=0.2,
                                         seed=args.seed)
    if args.protocol == "linear":
        result = linear_probe(ck.params, train_ds, test_ds,
                              ProbeConfig(seed=args.seed))
    else:
        result = low_shot_finetune(ck.params, args.fraction, train_ds,
                                   test_ds, FinetuneConfig(seed=args.seed))

    _write_json(out / "probe_result.json", result.to_dict())
    _kv("protocol", result.protocol)
    _kv("mean_acc", result.mean_accuracy)
    _kv("train_size", result.train_size)
    _kv("test_size", result.test_size)
    if result.subsample_size is not None:
        _kv("subsample_size", result.subsample_size)
    _kv("result", out / "probe_result.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate

def _grid(base: RunConfig):
    """Yield (variant, tau, beta, run) cells; 4 components + 3 + 3 sweeps."""
    for variant, zeroed in _COMPONENT_VARIANTS:
        loss = replace(base.loss, **{k: 0.0 for k in zeroed})
        yield variant, loss.tau, loss.beta, replace(base, loss=loss)
    for tau in TAU_GRID:
        loss = replace(base.loss, tau=tau)
        yield "tau_sweep", tau, loss.beta, replace(base, loss=loss)
    for beta in BETA_GRID:
        loss = replace(base.loss, beta=beta)
        yield "beta_sweep", loss.tau, beta, replace(base, loss=loss)


def cmd_ablate(args) -> int:
    base = _load_config(args.config)
    out = _out_dir(args)

    # probe data is always clean; a shifted generator seed keeps it
    # disjoint from the (possibly corrupted) pretraining draws
    probe_gen = replace(base.data.gen, seed=base.data.gen.seed + 1)
    probe_run = replace(base, data=replace(base.data, gen=probe_gen,
                                           rho=0.0))
    probe_ds = build_dataset(probe_run)
    train_ds, test_ds = train_test_split(probe_ds, test_fraction=0.2,
                                         seed=base.seed)

    rows = []
    failed = 0
    for variant, tau, beta, cell_run in _grid(base):
        name = f"{variant}-tau{tau:g}-beta{beta:g}"
        cell_dir = out / "cells" / name
        cell_dir.mkdir(parents=True, exist_ok=True)
        _write_json(cell_dir / "resolved-config.json",
                    run_config_to_dict(cell_run))
        try:
            result = pretrain(cell_run, out_dir=cell_dir)
            _write_jsonl(cell_dir / "metrics.jsonl", result.step_records)
            probe = linear_probe(result.params, train_ds, test_ds,
                                 ProbeConfig(seed=cell_run.seed))
            acc = f"{probe.mean_accuracy:.6f}"
        except Exception as err:  # noqa: BLE001  cell failures must not stop the grid
            (cell_dir / "error.txt").write_text(f"{type(err).__name__}: {err}\n",
                                                encoding="utf-8")
            acc = "nan"
            failed += 1
        rows.append((variant, f"{tau:g}", f"{beta:g}", acc, cell_run.seed))

    csv_path = out / "ablation.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "tau", "beta", "mean_acc", "seed"])
        writer.writerows(rows)

    _kv("cells", len(rows))
    _kv("failed", failed)
    _kv("csv", csv_path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck

def cmd_gradcheck(args) -> int:
    out = _out_dir(args)
    results = run_suite(instances=args.instances, seed=args.seed,
                        include_broken=args.include_broken)
    report = suite_report(results)
    _write_json(out / "gradcheck-report.json", report)
    _kv("checks", report["total"])
    _kv("failures", report["failures"])
    _kv("passed", report["passed"])
    _kv("report", out / "gradcheck-report.json")
    return EXIT_OK if report["passed"] else EXIT_GRADCHECK


# ---------------------------------------------------------------------------
# gen-data

def cmd_gen_data(args) -> int:
    run = _load_config(args.config) if args.config else RunConfig()
    gen = run.data.gen
    if args.seed is not None:
        gen = replace(gen, seed=args.seed)
    rho = run.data.rho if args.rho is None else args.rho
    if not 0.0 <= rho < 1.0:
        raise UsageError(f"--rho must be in [0, 1), got {rho}")
    run = replace(run, data=replace(run.data, gen=gen, rho=rho))

    ds = build_dataset(run)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)

    summary = dict(dataset_summary(ds))
    summary.update({
        "path": str(out),
        "sha256": _sha256(out),
        "rho": rho,
        "outlier_mode": run.data.outlier_mode,
        "gen_seed": gen.seed,
    })
    sidecar = Path(str(out) + ".json")
    _write_json(sidecar, summary)

    _kv("m", summary["m"])
    _kv("attributes", summary["attributes"])
    _kv("outlier_count", summary["outlier_count"])
    _kv("path", out)
    _kv("sha256", summary["sha256"])
    _kv("summary", sidecar)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vcl",
        description="variational contrastive learning workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="run the self-supervised loop")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", help="output directory (default VCL_OUT_DIR)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="probe a checkpoint against a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--protocol", required=True,
                   choices=("linear", "lowshot"))
    p.add_argument("--fraction", type=float,
                   help="labeled fraction (lowshot only)")
    p.add_argument("--seed", type=int, default=0,
                   help="split and probe seed")
    p.add_argument("--out", help="output directory (default VCL_OUT_DIR)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate",
                       help="objective component and hyperparameter grid")
    p.add_argument("--config", required=True, help="base run config JSON")
    p.add_argument("--out", help="output directory (default VCL_OUT_DIR)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--out", help="output directory (default VCL_OUT_DIR)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20,
                   help="random instances per check")
    p.add_argument("--include-broken", action="store_true",
                   help="add a known-bad op to prove the harness catches it")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-data", help="write a synthetic dataset file")
    p.add_argument("--config", help="run config JSON (defaults when absent)")
    p.add_argument("--rho", type=float, help="outlier fraction override")
    p.add_argument("--seed", type=int, help="generator seed override")
    p.add_argument("--out", required=True, help="dataset file path")
    p.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except (ConfigError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, DataFormatError, ArtifactError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ARTIFACT


if __name__ == "__main__":
    sys.exit(main())
