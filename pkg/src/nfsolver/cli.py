"""Command-line front door: gen, train, eval, ablate, diff.

Every command follows the same shape: read the config file, apply `--set`
overrides, run, and drop a resolved-config snapshot next to the outputs.
Failures surface as one-line diagnostics with a nonzero exit code.
"""

from __future__ import annotations

import functools
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .config import apply_overrides, load_config_file, require, write_snapshot
from .datagen import DatasetConfig, generate_dataset, load_dataset
from .errors import ConfigError, NfsError
from .evaluation import (
    EvalReport,
    ablate_neighborhood,
    compare_variants,
    evaluate,
    evaluate_mesh_invariance,
    representation_diff,
    representation_states,
)
from .io_files import write_csv, write_json
from .model import ModelSpec, load_model, save_model
from .training import TrainConfig, train

RESERVED_KEYS = {"out"}


def common_options(fn):
    @click.option("--config", "config_path", type=click.Path(), default=None,
                  help="YAML config file.")
    @click.option("--out", "out_dir", type=click.Path(), default=None,
                  help="Output directory (overrides the config 'out' key).")
    @click.option("--seed", type=int, default=None,
                  help="Master seed override.")
    @click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                  help="Dotted config override; repeatable.")
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NfsError as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _resolve(config_path, overrides) -> dict:
    return apply_overrides(load_config_file(config_path), overrides)


def _out_dir(cfg: dict, out_dir) -> Path:
    target = out_dir or cfg.get("out")
    if target is None:
        raise ConfigError("an output directory is required (--out or out:)")
    path = Path(target)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _snapshot_config(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in RESERVED_KEYS}


def _load_checkpoint(path):
    path = Path(path)
    for candidate in (path, path / "checkpoint"):
        if (candidate / "spec.json").exists():
            return load_model(candidate)
    raise ConfigError(f"no checkpoint found under {path}")


def _check_model_dataset(spec: ModelSpec, dataset) -> None:
    dc = dataset.config
    if spec.ndim != dataset.mesh.ndim:
        raise ConfigError(
            f"model is {spec.ndim}-d but the dataset mesh is "
            f"{dataset.mesh.ndim}-d"
        )
    if spec.n_t != dc.n_t:
        raise ConfigError(
            f"model expects n_t={spec.n_t} input channels but the dataset "
            f"provides {dc.n_t}"
        )
    if spec.n_out != dc.n_out:
        raise ConfigError(
            f"model produces n_out={spec.n_out} channels but the dataset "
            f"targets have {dc.n_out}"
        )


@click.group()
def main():
    """Non-equispaced Fourier PDE solver toolkit."""


@main.command("gen")
@click.option("--eq", "equation", default=None, help="Equation id.")
@click.option("--n", "n_instances", type=int, default=None,
              help="Instance count.")
@common_options
def cmd_gen(config_path, out_dir, seed, overrides, equation, n_instances):
    """Generate a dataset directory from a generation config."""
    cfg = _resolve(config_path, overrides)
    if equation is not None:
        cfg["equation"] = equation
    if n_instances is not None:
        cfg["n_instances"] = n_instances
    if seed is not None:
        cfg["seed"] = seed
    out = _out_dir(cfg, out_dir)
    dataset_config = DatasetConfig.from_dict(_snapshot_config(cfg))
    generate_dataset(dataset_config, out)
    write_snapshot(dataset_config.to_dict(), out)
    click.echo(f"dataset written to {out}")


@main.command("train")
@common_options
def cmd_train(config_path, out_dir, seed, overrides):
    """Train a model on an existing dataset directory."""
    cfg = _resolve(config_path, overrides)
    out = _out_dir(cfg, out_dir)
    dataset = load_dataset(require(cfg, "dataset", "train"))
    spec = ModelSpec.from_dict(require(cfg, "model", "train"))
    _check_model_dataset(spec, dataset)
    try:
        train_config = TrainConfig(**cfg.get("train", {}))
    except TypeError as exc:
        raise ConfigError(f"invalid train settings: {exc}") from exc
    if seed is not None:
        train_config = replace(train_config, seed=seed)
    result = train(spec, dataset, train_config, out_dir=out)
    save_model(result.model, out / "checkpoint")
    write_json(out / "summary.json", {
        "best_epoch": result.best_epoch,
        "val_loss": result.best_val_loss,
        "final_train_loss": result.history[-1][1],
        "epochs": train_config.epochs,
        "diverged": result.diverged,
    })
    write_json(out / "run_info.json", {"runtime_s": result.runtime_s})
    snapshot = _snapshot_config(cfg)
    snapshot["train"] = {**cfg.get("train", {}), "seed": train_config.seed}
    write_snapshot(snapshot, out)
    click.echo(
        f"best val loss {result.best_val_loss:.6e} at epoch "
        f"{result.best_epoch}; checkpoint in {out}"
    )


def _parse_unseen(text: str, n_s: int) -> list[int]:
    sizes = []
    for token in text.split(","):
        token = token.strip().lower()
        if not token:
            continue
        if token.endswith("x"):
            try:
                factor = float(token[:-1])
            except ValueError as exc:
                raise ConfigError(f"bad unseen size {token!r}") from exc
            sizes.append(int(round(factor * n_s)))
        else:
            try:
                sizes.append(int(token))
            except ValueError as exc:
                raise ConfigError(f"bad unseen size {token!r}") from exc
    if not sizes:
        raise ConfigError("no unseen sizes given")
    return sizes


@main.command("eval")
@click.option("--unseen", default=None,
              help="Comma list of unseen mesh sizes (absolute or '2x').")
@common_options
def cmd_eval(config_path, out_dir, seed, overrides, unseen):
    """Evaluate a checkpoint on its dataset, optionally on unseen meshes."""
    cfg = _resolve(config_path, overrides)
    out = _out_dir(cfg, out_dir)
    dataset = load_dataset(require(cfg, "dataset", "eval"))
    model = _load_checkpoint(require(cfg, "checkpoint", "eval"))
    split = cfg.get("split", "test")
    unseen_cfg = dict(cfg.get("unseen", {}))
    if unseen is not None:
        unseen_cfg["sizes"] = _parse_unseen(unseen, dataset.mesh.n_points)
    if seed is not None:
        unseen_cfg["seed"] = seed

    n_s = dataset.mesh.n_points
    task = dataset.config.equation
    variant = model.spec.variant
    rows = []
    if unseen_cfg.get("sizes"):
        report = evaluate_mesh_invariance(
            model, dataset,
            sizes=unseen_cfg["sizes"],
            resamples=int(unseen_cfg.get("resamples", 20)),
            seed=int(unseen_cfg.get("seed", 0)),
            split=split,
        )
    else:
        mae, rmse = evaluate(model, dataset, split=split)
        report = EvalReport(
            splits={split: {"mae": mae, "rmse": rmse,
                            "n_instances": len(dataset.splits[split])}},
            metadata={"n_s": n_s, "seed": int(unseen_cfg.get("seed", 0)),
                      "split": split},
        )
    seen = report.splits[split]
    rows.append({
        "task": task, "variant": variant, "n_s": n_s, "n_prime_s": n_s,
        "mae": repr(seen["mae"]), "rmse": repr(seen["rmse"]),
        "std_mae": repr(0.0), "std_rmse": repr(0.0),
        "seed": report.metadata.get("seed", 0),
    })
    for size, row in sorted(report.unseen.items()):
        rows.append({
            "task": task, "variant": variant, "n_s": n_s, "n_prime_s": size,
            "mae": repr(row["mae_mean"]), "rmse": repr(row["rmse_mean"]),
            "std_mae": repr(row["mae_std"]), "std_rmse": repr(row["rmse_std"]),
            "seed": report.metadata.get("seed", 0),
        })
    write_csv(out / "metrics.csv",
              ["task", "variant", "n_s", "n_prime_s", "mae", "rmse",
               "std_mae", "std_rmse", "seed"], rows)
    write_json(out / "report.json", report.to_dict())
    snapshot = _snapshot_config(cfg)
    snapshot["unseen"] = unseen_cfg
    snapshot["split"] = split
    write_snapshot(snapshot, out)
    click.echo(f"metrics written to {out / 'metrics.csv'}")


@main.command("ablate")
@common_options
def cmd_ablate(config_path, out_dir, seed, overrides):
    """Sweep neighborhood budgets or model variants on one task."""
    cfg = _resolve(config_path, overrides)
    out = _out_dir(cfg, out_dir)
    dataset = load_dataset(require(cfg, "dataset", "ablate"))
    spec = ModelSpec.from_dict(require(cfg, "model", "ablate"))
    _check_model_dataset(spec, dataset)
    try:
        train_config = TrainConfig(**cfg.get("train", {}))
    except TypeError as exc:
        raise ConfigError(f"invalid train settings: {exc}") from exc
    if seed is not None:
        train_config = replace(train_config, seed=seed)
    mode = cfg.get("mode", "neighborhood")
    out.mkdir(parents=True, exist_ok=True)
    if mode == "neighborhood":
        budgets = require(cfg, "budgets", "neighborhood ablation")
        rows = ablate_neighborhood(spec, dataset, budgets, train_config,
                                   out_path=out / "ablation.csv")
    elif mode == "variants":
        variants = require(cfg, "variants", "variant ablation")
        rows = compare_variants(spec, variants, dataset, train_config,
                                out_path=out / "ablation.csv")
    else:
        raise ConfigError(f"unknown ablation mode {mode!r}")
    snapshot = _snapshot_config(cfg)
    snapshot["train"] = {**cfg.get("train", {}), "seed": train_config.seed}
    write_snapshot(snapshot, out)
    click.echo(f"{len(rows)} ablation rows written to {out / 'ablation.csv'}")


@main.command("diff")
@common_options
def cmd_diff(config_path, out_dir, seed, overrides):
    """Representation divergence across a set of checkpoints."""
    cfg = _resolve(config_path, overrides)
    out = _out_dir(cfg, out_dir)
    dataset = load_dataset(require(cfg, "dataset", "diff"))
    paths = require(cfg, "checkpoints", "diff")
    if not isinstance(paths, (list, tuple)) or len(paths) < 2:
        raise ConfigError("diff needs a list of at least two checkpoints")
    models = [_load_checkpoint(p) for p in paths]
    probe = int(cfg.get("probe_instances", 4))
    split = cfg.get("split", "test")
    ids = dataset.splits.get(split)
    if not ids:
        raise ConfigError(f"split {split!r} is missing or empty")
    a = np.asarray(dataset.a, dtype=np.float64)[ids[:probe]]
    project = bool(cfg.get("project", True))
    rows = []
    for stage in ("pre_stack", "post_stack"):
        states = [
            representation_states(m, a, dataset.mesh, stage=stage,
                                  project=project)
            for m in models
        ]
        rows.append({
            "stage": stage,
            "diff": repr(representation_diff(states)),
            "n_models": len(models),
        })
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "diff.csv", ["stage", "diff", "n_models"], rows)
    write_snapshot(_snapshot_config(cfg), out)
    click.echo(f"representation diff written to {out / 'diff.csv'}")


if __name__ == "__main__":
    main()
