"""MSE objective, Adam optimizer, and the seeded training loop.

Training minimizes mean-squared error on the train split, reports train and
validation loss once per epoch, and keeps the parameters from the best
validation epoch.  Everything is deterministic under (model seed, data): the
shuffle stream, the initializer, and the optimizer state are all derived from
TrainConfig.seed.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .io_files import write_csv
from .model import ModelSpec, NfsModel, build_model


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    # a run is flagged as diverged when the train loss after this many epochs
    # still exceeds its first-epoch value
    divergence_epoch: int = 50
    lr_decay_every: int = 100
    lr_decay_factor: float = 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("Adam epsilon must be positive")
        if self.lr_decay_every < 1 or not (0.0 < self.lr_decay_factor <= 1.0):
            raise ConfigError("invalid learning-rate schedule")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every)


def mse_loss(pred: T.Tensor, target) -> T.Tensor:
    """Mean of squared differences over every element."""
    pred = T._ensure(pred)
    target = T._ensure(target)
    if pred.shape != target.shape:
        raise ContractError(
            f"mse_loss shape mismatch: {pred.shape} vs {target.shape}"
        )
    return T.tmean(T.power(T.sub(pred, target), 2))


class AdamState:
    """First/second moment buffers, viewed as flat float64 storage.

    Complex parameters are treated as interleaved (re, im) float pairs, which
    makes the update identical to running Adam on the underlying real degrees
    of freedom.
    """

    def __init__(self, params):
        self.step_count = 0
        self.m = [np.zeros(p.data.size * self._width(p), dtype=np.float64)
                  for p in params]
        self.v = [np.zeros_like(m) for m in self.m]

    @staticmethod
    def _width(p) -> int:
        return 2 if np.iscomplexobj(p.data) else 1

    def clone(self) -> "AdamState":
        dup = AdamState.__new__(AdamState)
        dup.step_count = self.step_count
        dup.m = [m.copy() for m in self.m]
        dup.v = [v.copy() for v in self.v]
        return dup


def adam_step(params, grads, state: AdamState, config: TrainConfig,
              lr: float | None = None) -> AdamState:
    """One in-place Adam update; `grads` aligns with `params`."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params, grads, and state must align")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - config.beta1**t
    bc2 = 1.0 - config.beta2**t
    step_scale = (lr if lr is not None else config.lr) / bc1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            raise ContractError(f"parameter {p.name} has no gradient")
        flat = np.ascontiguousarray(g).view(np.float64).reshape(-1)
        if flat.shape != m.shape:
            raise ContractError(f"gradient shape mismatch for {p.name}")
        m *= config.beta1
        m += (1.0 - config.beta1) * flat
        v *= config.beta2
        v += (1.0 - config.beta2) * (flat * flat)
        denom = np.sqrt(v / bc2)
        denom += config.eps
        update = m / denom
        update *= step_scale
        target = p.data.view(np.float64).reshape(-1)
        target -= update
    return state


@dataclass
class TrainResult:
    model: object
    best_epoch: int
    best_val_loss: float
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    diverged: bool = False
    runtime_s: float = 0.0

    @property
    def final_val_loss(self) -> float:
        return self.history[-1][2]


def _batch_losses(model, a, u, mesh, ids, batch_size):
    """Mean forward-only loss over the given instance ids."""
    total, count = 0.0, 0
    with T.no_grad():
        for lo in range(0, len(ids), batch_size):
            sel = ids[lo : lo + batch_size]
            pred = model.forward(a[sel], mesh)
            loss = mse_loss(pred, u[sel]).item()
            total += loss * len(sel)
            count += len(sel)
    return total / max(count, 1)


def train(model_spec: ModelSpec, dataset, config: TrainConfig,
          out_dir=None, log=None) -> TrainResult:
    """Fit a freshly initialized model on the dataset's train split.

    `dataset` provides .mesh, .a, .u (instances x points x channels) and
    .splits with train/val id lists.  Returns the model holding the best
    validation parameters, plus the per-epoch loss history.
    """
    mesh = dataset.mesh
    if mesh.ndim != model_spec.ndim:
        raise ContractError(
            f"dataset is {mesh.ndim}-d but the model expects {model_spec.ndim}-d"
        )
    a = np.asarray(dataset.a, dtype=np.float64)
    u = np.asarray(dataset.u, dtype=np.float64)
    train_ids = np.asarray(dataset.splits["train"], dtype=np.int64)
    val_ids = np.asarray(dataset.splits.get("val", []), dtype=np.int64)
    if train_ids.size == 0:
        raise ContractError("training split is empty")

    model = build_model(model_spec, seed=config.seed)
    state = AdamState(model.params)
    rng = np.random.default_rng(config.seed)
    started = time.perf_counter()

    history = []
    best_val = np.inf
    best_epoch = -1
    best_params = None
    first_train = None
    diverged = False
    for epoch in range(config.epochs):
        order = rng.permutation(train_ids)
        lr = config.lr_at(epoch)
        total, count = 0.0, 0
        for lo in range(0, order.size, config.batch_size):
            sel = order[lo : lo + config.batch_size]
            pred = model.forward(a[sel], mesh)
            loss = mse_loss(pred, u[sel])
            for p in model.params:
                p.zero_grad()
            T.backward(loss)
            adam_step(model.params, [p.grad for p in model.params],
                      state, config, lr=lr)
            total += loss.item() * len(sel)
            count += len(sel)
        train_loss = total / count
        if val_ids.size:
            val_loss = _batch_losses(model, a, u, mesh, val_ids,
                                     config.batch_size)
        else:
            val_loss = train_loss
        history.append((epoch, train_loss, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = {p.name: p.data.copy() for p in model.params}
        if first_train is None:
            first_train = train_loss
        elif (not diverged and epoch >= config.divergence_epoch
              and train_loss > first_train):
            diverged = True
            warnings.warn(
                f"training loss {train_loss:.3e} at epoch {epoch} exceeds "
                f"the first-epoch loss {first_train:.3e}; run may have "
                f"diverged",
                RuntimeWarning,
                stacklevel=2,
            )
        if log is not None:
            log(epoch, train_loss, val_loss)

    for p in model.params:
        p.data = best_params[p.name]
    result = TrainResult(
        model=model,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        history=history,
        diverged=diverged,
        runtime_s=time.perf_counter() - started,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(
            out / "loss_curve.csv",
            ["epoch", "train_loss", "val_loss"],
            [
                {"epoch": e, "train_loss": repr(tr), "val_loss": repr(vl)}
                for e, tr, vl in history
            ],
        )
    return result
