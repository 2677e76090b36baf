"""Metrics, the unseen-mesh evaluation protocol, and ablation drivers.

Mesh invariance is probed zero-shot: the trained model keeps its parameters
and is queried on enlarged meshes X' drawn so that the training mesh X is a
subset of X' and X' is a subset of the simulated points.  Each resample uses
an independent derived seed, so reports are reproducible and order
independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .datagen.dataset import subsample_indices
from .errors import ConfigError, ContractError
from .io_files import write_csv
from .meshes import Mesh
from .training import TrainConfig, train


def metrics(pred: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """(MAE, RMSE) averaged uniformly over every element."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ContractError(
            f"metrics shape mismatch: {pred.shape} vs {target.shape}"
        )
    residual = pred - target
    mae = float(np.mean(np.abs(residual)))
    rmse = float(np.sqrt(np.mean(residual**2)))
    return mae, rmse


def improvement(baseline: float, value: float) -> float:
    """Relative improvement of `value` over `baseline`, in percent."""
    if baseline == 0:
        raise ContractError("improvement is undefined for a zero baseline")
    return (baseline - value) / baseline * 100.0


def representation_diff(states) -> float:
    """Mean elementwise relative difference over ordered pairs of states.

    For M equally shaped states the result is
    1/(M(M-1)) * sum_{i != j} mean(|H_i - H_j| / (|H_i| + |H_j|)), where
    elements with |H_i| + |H_j| = 0 contribute 0.  Lies in [0, 1]; 0 for
    identical states, 1 when states are elementwise sign-opposed.
    """
    arrays = [np.asarray(s, dtype=np.float64) for s in states]
    if len(arrays) < 2:
        raise ContractError("representation_diff needs at least two states")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ContractError("representation states must share one shape")
    m = len(arrays)
    total = 0.0
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            num = np.abs(arrays[i] - arrays[j])
            den = np.abs(arrays[i]) + np.abs(arrays[j])
            ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
            total += float(ratio.mean())
    return total / (m * (m - 1))


def representation_states(model, a: np.ndarray, mesh: Mesh,
                          stage: str = "post_stack",
                          project: bool = True) -> np.ndarray:
    """Internal grid state of one model on a shared probe batch.

    stage selects the capture point: "pre_stack" (entering the spectral
    stack) or "post_stack" (leaving it).  With project=True the state is
    pushed through the model's own output head so states from models with
    different widths are comparable.
    """
    if stage not in ("pre_stack", "post_stack"):
        raise ContractError(f"unknown representation stage {stage!r}")
    capture: dict = {}
    with T.no_grad():
        model.forward(a, mesh, capture=capture)
        state = capture[stage]
        if project:
            state = model.project_state(state)
    return state.data.copy()


@dataclass
class EvalReport:
    splits: dict = field(default_factory=dict)
    unseen: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    runtime_s: float = 0.0

    def __post_init__(self):
        for name, row in self.splits.items():
            if row["rmse"] < row["mae"] - 1e-12 or row["mae"] < 0:
                raise ContractError(f"split {name}: RMSE >= MAE >= 0 violated")
        for size, row in self.unseen.items():
            if row["rmse_mean"] < 0 or row["mae_mean"] < 0:
                raise ContractError(f"unseen {size}: negative metric")

    def to_dict(self) -> dict:
        return {
            "splits": self.splits,
            "unseen": {str(k): v for k, v in self.unseen.items()},
            "metadata": self.metadata,
            "runtime_s": self.runtime_s,
        }


def evaluate(model, dataset, split: str = "test",
             batch_size: int = 8) -> tuple[float, float]:
    """Seen-mesh (MAE, RMSE) of the model on one split of its dataset."""
    ids = dataset.splits.get(split)
    if not ids:
        raise ContractError(f"split {split!r} is missing or empty")
    a = np.asarray(dataset.a, dtype=np.float64)[ids]
    u = np.asarray(dataset.u, dtype=np.float64)[ids]
    preds = []
    with T.no_grad():
        for lo in range(0, a.shape[0], batch_size):
            preds.append(model.forward(a[lo : lo + batch_size], dataset.mesh).data)
    return metrics(np.concatenate(preds, axis=0), u)


def _mesh_indices(dataset) -> np.ndarray:
    idx = subsample_indices(dataset.config)
    coords = dataset.full_coords[idx]
    if not np.allclose(coords, dataset.mesh.coords, atol=1e-12):
        raise ContractError(
            "dataset mesh does not match its recorded subsample indices"
        )
    return idx


def evaluate_mesh_invariance(model, dataset, sizes, resamples: int,
                             seed: int = 0, split: str = "test",
                             batch_size: int = 8) -> EvalReport:
    """Zero-shot metrics on supersets X' of the training mesh X.

    For each requested size n'_s >= n_s, draws `resamples` meshes X' with
    X a subset of X' a subset of the simulated points (graphs are rebuilt per
    mesh), evaluates the split, and aggregates mean +- population std.
    """
    import time

    started = time.perf_counter()
    if dataset.full_a is None:
        raise ConfigError(
            "mesh-invariance evaluation needs full-resolution fields "
            "(dataset generated with keep_full)"
        )
    ids = dataset.splits.get(split)
    if not ids:
        raise ContractError(f"split {split!r} is missing or empty")
    if resamples < 1:
        raise ConfigError("resamples must be >= 1")
    base_idx = _mesh_indices(dataset)
    n_grid = dataset.full_coords.shape[0]
    n_s = base_idx.size
    full_a = np.asarray(dataset.full_a, dtype=np.float64)[ids]
    full_u = np.asarray(dataset.full_u, dtype=np.float64)[ids]
    coords = dataset.full_coords
    remaining = np.setdiff1d(np.arange(n_grid), base_idx)

    seen_mae, seen_rmse = evaluate(model, dataset, split=split,
                                   batch_size=batch_size)
    report = EvalReport(
        splits={split: {"mae": seen_mae, "rmse": seen_rmse,
                        "n_instances": len(ids)}},
        metadata={"n_s": int(n_s), "resamples": int(resamples),
                  "seed": int(seed), "split": split},
    )
    for size in sizes:
        size = int(size)
        if size < n_s:
            raise ConfigError(
                f"unseen mesh size {size} is smaller than the seen mesh {n_s}"
            )
        if size > n_grid:
            raise ConfigError(
                f"unseen mesh size {size} exceeds the {n_grid} simulated points"
            )
        maes, rmses = [], []
        for r in range(resamples):
            rng = np.random.default_rng(np.random.SeedSequence((seed, size, r)))
            extra = size - n_s
            if extra:
                chosen = rng.choice(remaining.size, size=extra, replace=False)
                idx = np.sort(np.concatenate([base_idx, remaining[chosen]]))
            else:
                idx = base_idx
            mesh = Mesh(coords[idx])
            preds = []
            with T.no_grad():
                for lo in range(0, full_a.shape[0], batch_size):
                    preds.append(
                        model.forward(full_a[lo : lo + batch_size, idx], mesh).data
                    )
            mae, rmse = metrics(np.concatenate(preds, axis=0), full_u[:, idx])
            maes.append(mae)
            rmses.append(rmse)
        report.unseen[size] = {
            "mae_mean": float(np.mean(maes)),
            "mae_std": float(np.std(maes)),
            "rmse_mean": float(np.mean(rmses)),
            "rmse_std": float(np.std(rmses)),
            "resamples": int(resamples),
            "mae_samples": [float(x) for x in maes],
            "rmse_samples": [float(x) for x in rmses],
        }
    report.runtime_s = time.perf_counter() - started
    return report


def ablate_neighborhood(model_spec, dataset, budgets, train_config: TrainConfig,
                        out_path=None, split: str = "test") -> list[dict]:
    """Train one model per neighbor budget c and tabulate the error curve."""
    if not budgets:
        raise ConfigError("at least one neighborhood budget is required")
    rows = []
    for c in budgets:
        spec = replace(model_spec, budget_c=float(c))
        result = train(spec, dataset, train_config)
        model = result.model
        geo = model.geometry(dataset.mesh)
        mean_neighbors = 0.5 * (
            geo["graph_in"].mean_count + geo["graph_out"].mean_count
        )
        mae, rmse = evaluate(model, dataset, split=split,
                             batch_size=max(train_config.batch_size, 4))
        rows.append({
            "budget_c": float(c),
            "mean_neighbors": float(mean_neighbors),
            "mae": mae,
            "rmse": rmse,
            "best_val_loss": result.best_val_loss,
        })
    if out_path is not None:
        write_csv(
            Path(out_path),
            ["budget_c", "mean_neighbors", "mae", "rmse", "best_val_loss"],
            [{k: repr(v) for k, v in row.items()} for row in rows],
        )
    return rows


def compare_variants(model_spec, variants, dataset, train_config: TrainConfig,
                     out_path=None, split: str = "test") -> list[dict]:
    """Train the same task under several model variants with shared seeds."""
    if not variants:
        raise ConfigError("at least one variant is required")
    rows = []
    for variant in variants:
        spec = replace(model_spec, variant=variant)
        result = train(spec, dataset, train_config)
        mae, rmse = evaluate(result.model, dataset, split=split,
                             batch_size=max(train_config.batch_size, 4))
        rows.append({
            "variant": variant,
            "mae": mae,
            "rmse": rmse,
            "best_val_loss": result.best_val_loss,
            "best_epoch": result.best_epoch,
        })
    if out_path is not None:
        write_csv(
            Path(out_path),
            ["variant", "mae", "rmse", "best_val_loss", "best_epoch"],
            [{k: (v if isinstance(v, str) else repr(v)) for k, v in row.items()}
             for row in rows],
        )
    return rows
