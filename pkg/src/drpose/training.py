"""Weighted-loss optimization of the refinement model and pre-training of
the initial predictor.

All randomness is drawn from streams derived from (seed, epoch, step), so a
run resumed from a checkpoint retraces the exact parameter trajectory of an
uninterrupted one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataset import DatasetFile
from .diffusion import NoiseSchedule, forward_diffuse, make_timestep_plan, reverse_refine_batch
from .errors import ConfigError, NumericalError
from .metrics import mpjpe
from .model import (
    InitialPredictor,
    ModelConfig,
    ModelParams,
    Normalization2D,
    Refiner,
    init_predictor_params,
    init_refiner_params,
    predictor_forward,
)
from .rng import RngStream, mix64, tag


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters (defaults follow the reference recipe)."""

    epochs: int = 30
    batch_size: int = 512
    base_lr: float = 5e-4
    epoch_decay: float = 0.95
    period_decay: float = 0.5
    period: int = 5
    T: int = 1000
    joint_weights: tuple[float, ...] | None = None
    seed: int = 0
    val_log_samples: int = 512

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.period < 1:
            raise ConfigError("epochs, batch_size and period must be >= 1")
        if min(self.base_lr, self.epoch_decay, self.period_decay) <= 0:
            raise ConfigError("learning rates and decay factors must be positive")
        if self.joint_weights is not None and any(w < 0 for w in self.joint_weights):
            raise ConfigError("joint weights must be non-negative")

    def weights_for(self, n_joints: int) -> np.ndarray:
        if self.joint_weights is None:
            return np.ones(n_joints)
        if len(self.joint_weights) != n_joints:
            raise ConfigError(
                f"{len(self.joint_weights)} joint weights for {n_joints} joints"
            )
        return np.asarray(self.joint_weights, dtype=np.float64)


def lr_at(epoch: int, config: TrainConfig) -> float:
    """base_lr * epoch_decay^epoch * period_decay^floor(epoch / period)."""
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    return (
        config.base_lr
        * config.epoch_decay**epoch
        * config.period_decay ** (epoch // config.period)
    )


def weighted_loss(y0_hat, y0, lam, eps: float = 1e-8):
    """Per-joint Euclidean error, weighted and averaged: the training loss.

    (1/N) sum_i lam_i * ||y0_hat_i - y0_i||_2, averaged over the batch.  The
    norm is smoothed as sqrt(||e||^2 + eps^2) so its gradient is defined at
    exactly zero error; pass eps=0 for the raw norm.
    """
    pred = y0_hat if isinstance(y0_hat, Tensor) else Tensor(y0_hat)
    target = np.asarray(y0, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    diff = pred - target
    sq = (diff * diff).sum(axis=-1)  # (..., N)
    norm = ad.sqrt(sq + eps * eps) if eps else ad.sqrt(sq)
    return (norm * lam).mean()


def _loss_with_per_sample(y0_hat: Tensor, y0: np.ndarray, lam: np.ndarray, eps: float = 1e-8):
    """(scalar loss Tensor, per-sample loss array) for diagnostics."""
    diff = y0_hat - y0
    sq = (diff * diff).sum(axis=-1)
    norm = ad.sqrt(sq + eps * eps)
    weighted = norm * lam
    per_sample = weighted.data.mean(axis=-1) if weighted.data.ndim > 1 else weighted.data.mean()
    return weighted.mean(), np.atleast_1d(per_sample)


@dataclass
class OptimizerState:
    """Adaptive moment estimation accumulators, mirroring the parameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: ModelParams) -> OptimizerState:
    return OptimizerState(
        m={k: np.zeros_like(t.data) for k, t in params.tensors.items()},
        v={k: np.zeros_like(t.data) for k, t in params.tensors.items()},
    )


def adam_step(params: ModelParams, opt: OptimizerState, lr: float) -> None:
    opt.step += 1
    b1c = 1.0 - opt.beta1**opt.step
    b2c = 1.0 - opt.beta2**opt.step
    for name, p in params.tensors.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        opt.m[name] = opt.beta1 * opt.m[name] + (1.0 - opt.beta1) * g
        opt.v[name] = opt.beta2 * opt.v[name] + (1.0 - opt.beta2) * g * g
        update = (opt.m[name] / b1c) / (np.sqrt(opt.v[name] / b2c) + opt.eps)
        p.data = p.data - lr * update


def train_step(
    batch: dict,
    params: ModelParams,
    opt_state: OptimizerState,
    sched: NoiseSchedule,
    stream: RngStream,
    config: TrainConfig,
    model_config: ModelConfig,
    norm: Normalization2D,
    epoch: int = 0,
):
    """One optimizer update of the refiner on a batch of (y0, x, y_bar).

    Each sample gets its own uniform timestep and noise draw; the noisy pose
    follows the forward marginal, the model reconstructs the clean pose and
    the weighted loss is minimized.  Returns (params, opt_state, loss).
    """
    y0 = np.asarray(batch["y0"], dtype=np.float64)
    x = np.asarray(batch["x"], dtype=np.float64)
    y_bar = np.asarray(batch["y_bar"], dtype=np.float64)
    b = y0.shape[0]
    scale = model_config.pose_scale_mm
    lam = config.weights_for(model_config.n_joints)

    t = stream.integers(1, sched.T, (b,))
    eps_noise = stream.gaussian(y0.shape)
    y_t = forward_diffuse(y0 / scale, t, eps_noise, sched)

    refiner = Refiner(params, model_config, norm)
    y0_hat = refiner.refine_train(y_bar / scale, y_t, x, t) * scale
    loss_t, per_sample = _loss_with_per_sample(y0_hat, y0, lam)
    loss = float(loss_t.data)
    if not np.isfinite(loss):
        bad = int(np.argmax(~np.isfinite(per_sample)))
        raise NumericalError(f"non-finite loss at batch index {bad}")

    params.zero_grads()
    loss_t.backward()
    adam_step(params, opt_state, lr_at(epoch, config))
    return params, opt_state, loss


@dataclass
class EpochLog:
    epoch: int
    lr: float
    mean_loss: float
    val_mpjpe: float

    def line(self) -> str:
        return f"{self.epoch}, {self.lr!r}, {self.mean_loss!r}, {self.val_mpjpe!r}"


def _epoch_batches(n: int, batch_size: int, seed: int, label: str, epoch: int):
    perm = RngStream(seed, mix64(tag(label), epoch)).permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def predict_in_chunks(forward, n: int, chunk: int = 2048) -> np.ndarray:
    parts = [forward(slice(i, min(i + chunk, n))) for i in range(0, n, chunk)]
    return np.concatenate(parts, axis=0)


def pretrain_initial(
    train_ds: DatasetFile,
    val_ds: DatasetFile,
    config: TrainConfig,
    model_config: ModelConfig,
    params: ModelParams | None = None,
    opt_state: OptimizerState | None = None,
    start_epoch: int = 0,
    on_epoch=None,
) -> tuple[ModelParams, Normalization2D, list[EpochLog]]:
    """Train the initial predictor alone on (noisy 2D -> ground truth 3D)."""
    if train_ds.sample_count == 0:
        raise ConfigError("cannot pretrain on an empty dataset")
    norm = Normalization2D.from_camera(train_ds.camera)
    if params is None:
        params = init_predictor_params(
            model_config, RngStream(config.seed, tag("init-predictor"))
        )
    opt = opt_state if opt_state is not None else adam_init(params)
    lam = np.ones(model_config.n_joints)
    scale = model_config.pose_scale_mm
    logs: list[EpochLog] = []
    n_val = min(config.val_log_samples, val_ds.sample_count)
    for epoch in range(start_epoch, config.epochs):
        lr = lr_at(epoch, config)
        losses = []
        for step, idx in enumerate(
            _epoch_batches(train_ds.sample_count, config.batch_size, config.seed, "pretrain-shuffle", epoch)
        ):
            y0 = train_ds.gt[idx]
            out = predictor_forward(train_ds.noisy[idx], params, model_config, norm) * scale
            loss_t, per_sample = _loss_with_per_sample(out, y0, lam)
            loss = float(loss_t.data)
            if not np.isfinite(loss):
                bad = int(np.argmax(~np.isfinite(per_sample)))
                raise NumericalError(f"non-finite pretrain loss at batch index {bad}")
            params.zero_grads()
            loss_t.backward()
            adam_step(params, opt, lr)
            losses.append(loss)
        predictor = InitialPredictor(params, model_config, norm)
        val_pred = predict_in_chunks(
            lambda sl: predictor.predict(val_ds.noisy[sl]), n_val
        )
        val = float(np.mean([mpjpe(val_pred[i], val_ds.gt[i]) for i in range(n_val)]))
        log = EpochLog(epoch, lr, float(np.mean(losses)), val)
        logs.append(log)
        if on_epoch:
            on_epoch(log, params, opt)
    return params, norm, logs


def train_refiner(
    train_ds: DatasetFile,
    val_ds: DatasetFile,
    predictor: InitialPredictor,
    config: TrainConfig,
    model_config: ModelConfig,
    sched: NoiseSchedule,
    t_start: int = 200,
    renoise: str = "marginal",
    params: ModelParams | None = None,
    opt_state: OptimizerState | None = None,
    start_epoch: int = 0,
    on_epoch=None,
) -> tuple[ModelParams, Normalization2D, list[EpochLog]]:
    """Train the SGCT+PRM refiner against the frozen initial predictor."""
    if train_ds.sample_count == 0:
        raise ConfigError("cannot train on an empty dataset")
    if sched.T != config.T:
        raise ConfigError(f"schedule T={sched.T} differs from config T={config.T}")
    norm = Normalization2D.from_camera(train_ds.camera)
    if params is None:
        params = init_refiner_params(
            model_config, RngStream(config.seed, tag("init-refiner"))
        )
    opt = opt_state if opt_state is not None else adam_init(params)

    y_bar_train = predict_in_chunks(
        lambda sl: predictor.predict(train_ds.noisy[sl]), train_ds.sample_count
    )
    n_val = min(config.val_log_samples, val_ds.sample_count)
    y_bar_val = predict_in_chunks(lambda sl: predictor.predict(val_ds.noisy[sl]), n_val)
    plan = make_timestep_plan(t_start, 1, sched.T)

    logs: list[EpochLog] = []
    for epoch in range(start_epoch, config.epochs):
        losses = []
        for step, idx in enumerate(
            _epoch_batches(train_ds.sample_count, config.batch_size, config.seed, "refine-shuffle", epoch)
        ):
            stream = RngStream(config.seed, mix64(tag("refine-noise"), epoch, step))
            batch = {
                "y0": train_ds.gt[idx],
                "x": train_ds.noisy[idx],
                "y_bar": y_bar_train[idx],
            }
            _, _, loss = train_step(
                batch, params, opt, sched, stream, config, model_config, norm, epoch
            )
            losses.append(loss)
        refiner = Refiner(params, model_config, norm)
        streams = [
            RngStream(config.seed, mix64(tag("refine-val-noise"), i)) for i in range(n_val)
        ]
        val_pred = reverse_refine_batch(
            y_bar_val, val_ds.noisy[:n_val], refiner, plan, sched, streams, renoise
        )
        val = float(np.mean([mpjpe(val_pred[i], val_ds.gt[i]) for i in range(n_val)]))
        log = EpochLog(epoch, lr_at(epoch, config), float(np.mean(losses)), val)
        logs.append(log)
        if on_epoch:
            on_epoch(log, params, opt)
    return params, norm, logs
