"""Splitting, Adam optimisation, plateau scheduling, the training loop
and evaluation metrics.

The optimiser is classic Adam with bias correction and L2 weight decay
folded into the gradient (decoupled decay is available behind a flag).
Training uses batch size 1 with a seeded per-epoch shuffle; the best
checkpoint by validation MSE is retained.
"""

from __future__ import annotations

import gc
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import adam_update, adam_update_rank1
from .autodiff import Tape, const
from .model import AgeModel, ModelParams

AGE_BUCKETS = ("0", "(0,10]", "(10,20]", "(20,30]", "(30,40]", "(40,50]",
               "(50,60]", "(60,70]", "(70,80]", "(80,inf)")


class TooFewSamples(ValueError):
    """A source dataset has too few samples to fold."""


class EmptyEvalSet(ValueError):
    """evaluate() called with no samples."""


@dataclass(frozen=True)
class SchedulerConfig:
    patience: int = 4
    factor: float = 0.4
    min_lr: float = 1e-8


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 5e-4
    weight_decay: float = 5e-3
    epochs: int = 140
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    dropout_p: float = 0.2
    seed: int = 0
    batch_size: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decoupled_decay: bool = False
    scheduler_metric: str = "mse"  # validation loss fed to the scheduler

    def __post_init__(self):
        if not (self.lr > 0 and self.epochs > 0 and self.batch_size == 1):
            raise ValueError("lr/epochs must be positive; batch size is fixed at 1")
        if not 0.0 < self.scheduler.factor < 1.0:
            raise ValueError("scheduler factor must lie in (0, 1)")


@dataclass(frozen=True)
class SplitPlan:
    test_fraction: float = 0.2
    k_folds: int = 5
    active_fold: int = 0


@dataclass
class SplitResult:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray


def split(sample_ids: list[str], source_ids: list[str], plan: SplitPlan,
          rng: np.random.Generator) -> SplitResult:
    """Per-source stratified test reservation, then k-folding.

    Within every source dataset a test_fraction share (round half up) is
    reserved first; the remainder is dealt round-robin into k folds after
    a seeded shuffle.  The active fold becomes validation.
    """
    if len(sample_ids) != len(source_ids):
        raise ValueError("sample_ids and source_ids must align")
    if not 0 <= plan.active_fold < plan.k_folds:
        raise ValueError(f"active fold {plan.active_fold} outside 0..{plan.k_folds - 1}")
    sources: dict[str, list[int]] = {}
    for idx, src in enumerate(source_ids):
        sources.setdefault(src, []).append(idx)

    train, val, test = [], [], []
    for src in sorted(sources):
        members = np.array(sources[src])
        perm = members[rng.permutation(members.size)]
        n_test = int(members.size * plan.test_fraction + 0.5)
        test.extend(perm[:n_test].tolist())
        rest = perm[n_test:]
        if rest.size < plan.k_folds:
            raise TooFewSamples(
                f"source {src!r} has {rest.size} samples left for {plan.k_folds} folds")
        folds = [rest[k::plan.k_folds] for k in range(plan.k_folds)]
        val.extend(folds[plan.active_fold].tolist())
        for k, fold in enumerate(folds):
            if k != plan.active_fold:
                train.extend(fold.tolist())
    return SplitResult(np.sort(np.array(train, dtype=np.int64)),
                       np.sort(np.array(val, dtype=np.int64)),
                       np.sort(np.array(test, dtype=np.int64)))


class AdamState:
    """First/second moment accumulators for one parameter list."""

    def __init__(self, params: ModelParams):
        self.m = [np.zeros(t.data.size) for t in params.tensors()]
        self.v = [np.zeros(t.data.size) for t in params.tensors()]
        self.t = 0


def adam_step(params: ModelParams, grads: list[np.ndarray], state: AdamState,
              config: TrainingConfig, t: int) -> ModelParams:
    """One Adam update over every parameter tensor, in place."""
    return _adam_step_mixed(params, grads, {}, state, config, t)


def _adam_step_mixed(params: ModelParams, grads: list[np.ndarray],
                     rank1: dict[int, tuple[np.ndarray, np.ndarray]],
                     state: AdamState, config: TrainingConfig, t: int) -> ModelParams:
    """Adam update accepting some gradients as rank-1 (u, x) factors.

    The factored kernel forms the same per-element products as the dense
    one, so both routes are bit-identical; the factored route just skips
    materialising and re-reading the outer product.
    """
    inv_bc1 = 1.0 / (1.0 - config.beta1**t)
    inv_sqrt_bc2 = 1.0 / np.sqrt(1.0 - config.beta2**t)
    wd = 0.0 if config.decoupled_decay else config.weight_decay
    hyper = (config.lr, config.beta1, config.beta2, config.eps, wd,
             inv_bc1, inv_sqrt_bc2)
    for tensor, grad, m, v in zip(params.tensors(), grads, state.m, state.v):
        factors = rank1.get(id(tensor))
        if grad is None and factors is None:
            continue  # parameter untouched by this loss; skip its update
        if config.decoupled_decay:
            tensor.data *= 1.0 - config.lr * config.weight_decay
        if factors is not None:
            rows, cols = tensor.data.shape
            adam_update_rank1(tensor.data, m.reshape(rows, cols),
                              v.reshape(rows, cols), factors[0], factors[1], *hyper)
        else:
            adam_update(tensor.data.reshape(-1),
                        np.asarray(grad, dtype=np.float64).reshape(-1), m, v, *hyper)
    state.t = t
    return params


class PlateauScheduler:
    """Reduce-on-plateau: cut the rate after `patience` epochs without a
    strict improvement of the best validation loss seen so far."""

    def __init__(self, lr: float, config: SchedulerConfig):
        self.lr = lr
        self.config = config
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.config.patience:
                self.lr = max(self.lr * self.config.factor, self.config.min_lr)
                self.bad_epochs = 0
        return self.lr


@dataclass
class Metrics:
    mae: float
    mse: float
    r2: float
    slope: float
    per_age_group_mae: dict[str, float]


def age_bucket(age: float) -> str:
    if age == 0:
        return AGE_BUCKETS[0]
    k = int(np.ceil(age / 10.0))
    return AGE_BUCKETS[min(k, 9)]


def compute_metrics(predictions: np.ndarray, ages: np.ndarray) -> Metrics:
    predictions = np.asarray(predictions, dtype=np.float64)
    ages = np.asarray(ages, dtype=np.float64)
    if predictions.size == 0:
        raise EmptyEvalSet("no samples to evaluate")
    err = predictions - ages
    mae = float(np.mean(np.abs(err)))
    mse = float(np.mean(err * err))
    ss_res = float(np.sum(err * err))
    ss_tot = float(np.sum((ages - ages.mean()) ** 2))
    if ss_tot > 0.0:
        r2 = 1.0 - ss_res / ss_tot
        ac = ages - ages.mean()
        slope = float(np.sum(ac * (predictions - predictions.mean())) / np.sum(ac * ac))
    else:  # degenerate single-age evaluation set
        r2 = 1.0 if ss_res == 0.0 else 0.0
        slope = 0.0
    groups: dict[str, float] = {}
    for bucket in AGE_BUCKETS:
        mask = np.array([age_bucket(a) == bucket for a in ages])
        if mask.any():
            groups[bucket] = float(np.mean(np.abs(err[mask])))
    return Metrics(mae=mae, mse=mse, r2=r2, slope=slope, per_age_group_mae=groups)


def evaluate(model: AgeModel, betas: np.ndarray, ages: np.ndarray) -> Metrics:
    """Eval-mode predictions over rows of `betas`, reduced to Metrics."""
    preds = model.predict_many(betas)
    return compute_metrics(preds, ages)


@dataclass
class EpochRow:
    epoch: int
    train_mse: float
    val_mse: float
    val_mae: float
    lr: float


@dataclass
class TrainResult:
    best_params: ModelParams
    best_epoch: int
    best_val_mse: float
    log: list[EpochRow]


def train(model: AgeModel, betas: np.ndarray, ages: np.ndarray,
          train_idx: np.ndarray, val_idx: np.ndarray,
          config: TrainingConfig,
          shuffle_rng: np.random.Generator,
          dropout_rng: np.random.Generator) -> TrainResult:
    """Batch-size-1 training with per-epoch shuffles and best-val snapshots.

    The model's parameters are updated in place; the returned best_params
    is a deep copy taken at the best validation epoch.
    """
    betas = np.asarray(betas, dtype=np.float64)
    ages = np.asarray(ages, dtype=np.float64)
    state = AdamState(model.params)
    sched = PlateauScheduler(config.lr, config.scheduler)
    log: list[EpochRow] = []
    best_params = model.params.copy()
    best_val = np.inf
    best_epoch = 0
    run_cfg = config
    step = 0

    # the hot loop allocates thousands of acyclic closures per epoch;
    # reference counting reclaims them all, cycle collection only pauses
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for epoch in range(1, config.epochs + 1):
            order = train_idx[shuffle_rng.permutation(train_idx.size)]
            total = 0.0
            for i in order:
                tape = Tape(collect_rank1=True)
                pred = model.forward(tape, betas[i], training=True, rng=dropout_rng)
                loss = tape.mse(pred, const(np.asarray(float(ages[i]))))
                model.params.zero_grad()
                tape.backward(loss)
                step += 1
                rank1: dict[int, tuple[np.ndarray, np.ndarray]] = {}
                for w, u, x in tape.rank1_grads:
                    k = id(w)
                    if k in rank1 or w.grad is not None:
                        # weight reused within one forward: fold to dense
                        w.grad = (0.0 if w.grad is None else w.grad) + u[:, None] * x[None, :]
                        if k in rank1:
                            uu, xx = rank1.pop(k)
                            w.grad = w.grad + uu[:, None] * xx[None, :]
                    else:
                        rank1[k] = (u, x)
                grads = [t.grad for t in model.params.tensors()]
                _adam_step_mixed(model.params, grads, rank1, state, run_cfg, step)
                total += float(loss.data)
            train_mse = total / max(order.size, 1)

            val_pred = model.predict_many(betas[val_idx])
            val_err = val_pred - ages[val_idx]
            val_mse = float(np.mean(val_err * val_err))
            val_mae = float(np.mean(np.abs(val_err)))

            sched_loss = val_mse if config.scheduler_metric == "mse" else val_mae
            new_lr = sched.step(sched_loss)
            if new_lr != run_cfg.lr:
                run_cfg = replace(run_cfg, lr=new_lr)
            log.append(EpochRow(epoch, train_mse, val_mse, val_mae, run_cfg.lr))

            if val_mse < best_val:
                best_val = val_mse
                best_epoch = epoch
                best_params = model.params.copy()
    finally:
        if gc_was_enabled:
            gc.enable()

    return TrainResult(best_params=best_params, best_epoch=best_epoch,
                       best_val_mse=best_val, log=log)
