"""Loss, optimizer, learning-rate schedule, corruption/augmentation and the training loop."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .data import load_dataset, validation_split
from .errors import ConfigError, NumericError, UsageError
from .imageio import ImageBuffer, quantize
from .metrics import psnr
from .model import ModelConfig, ModelWeights, forward
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

HALVING_EPOCHS = (15, 22, 24, 25, 26, 27, 28)


@dataclass(frozen=True)
class TrainConfig:
    sigma: float = 25.0
    batch_size: int = 8
    epochs: int = 28
    base_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    patch_size: int = 96
    patches_per_image: int = 48
    seed: int = 0
    augment: bool = True
    loss_mode: str = "mean"
    halving_epochs: tuple = HALVING_EPOCHS
    max_steps: Optional[int] = None
    val_fraction: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "halving_epochs", tuple(self.halving_epochs))
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if self.batch_size < 1 or self.epochs < 1 or self.patches_per_image < 1:
            raise ConfigError("batch_size, epochs and patches_per_image must be positive")
        if self.base_lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.loss_mode not in ("mean", "sum"):
            raise ConfigError("loss_mode must be 'mean' or 'sum'")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be positive")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown train settings: {sorted(unknown)}")
        return cls(**values)


TRAIN_PRESETS = {
    "paper": TrainConfig(),
    "toy": TrainConfig(base_lr=1e-3, patch_size=16, patches_per_image=8, epochs=28),
}


# ---------------------------------------------------------------------------
# loss and optimizer
# ---------------------------------------------------------------------------

def mse_loss(pred: Tensor, target, mode: str = "mean") -> Tensor:
    """Half squared error averaged over the batch.

    ``mode="mean"`` averages the squared error over the pixels of each
    sample before the ``1/(2N)`` batch average; ``mode="sum"`` uses the raw
    per-sample sum of squares.
    """
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise UsageError(f"prediction {pred.shape} and target {target.shape} differ")
    n = pred.shape[0]
    diff = pred - target
    per_sample = (diff * diff).reshape(n, -1)
    total = per_sample.mean(axis=1).sum() if mode == "mean" else per_sample.sum()
    return total * (1.0 / (2 * n))


@dataclass
class OptimState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: Dict[str, Tensor]) -> "OptimState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: OptimState,
              lr: float, beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, applied in place to ``params``."""
    for name, g in grads.items():
        if g is not None and not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}; step aborted")
    state.t += 1
    t = state.t
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1 - beta2) * (g * g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.data = (p.data - update).astype(p.data.dtype)


def lr_at(epoch: int, base: float = 1e-4, halving_epochs: Sequence[int] = HALVING_EPOCHS) -> float:
    """Learning rate for a 1-based epoch: halved once at each listed epoch."""
    if epoch < 1:
        raise ConfigError("epochs are numbered from 1")
    return base * 0.5 ** sum(1 for e in halving_epochs if e <= epoch)


# ---------------------------------------------------------------------------
# corruption and augmentation
# ---------------------------------------------------------------------------

def add_awgn(clean, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """``clean + N(0, sigma^2)`` per pixel and channel, unclipped, same scale as input."""
    values = clean.to_255() if isinstance(clean, ImageBuffer) else np.asarray(clean, dtype=np.float64)
    if sigma < 0:
        raise ConfigError("sigma must be non-negative")
    if sigma == 0:
        return values.copy()
    return values + rng.normal(0.0, sigma, size=values.shape)


def augment(patch, index: int, axes=(0, 1)):
    """Dihedral transform ``index`` in 0..7: ``index % 4`` quarter turns, mirrored first if ``index >= 4``."""
    if not 0 <= index < 8:
        raise UsageError("augmentation index must be in 0..7")
    as_buffer = isinstance(patch, ImageBuffer)
    arr = patch.data if as_buffer else np.asarray(patch)
    turns = index % 4
    if turns % 2 and arr.shape[axes[0]] != arr.shape[axes[1]]:
        raise UsageError("quarter-turn augmentation needs a square patch")
    if index >= 4:
        arr = np.flip(arr, axis=axes[0])
    arr = np.ascontiguousarray(np.rot90(arr, turns, axes=axes))
    return ImageBuffer(arr) if as_buffer else arr


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def sample_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 stream for ``(seed, *key)`` via SeedSequence spawning keys."""
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


@dataclass
class TrainResult:
    weights: ModelWeights
    state: OptimState
    history: List[dict]
    step_losses: List[float]
    best_val_psnr: float = -math.inf


def _make_sample(image: np.ndarray, cfg: TrainConfig, rng: np.random.Generator):
    """Crop, augment and corrupt one training patch; arrays are (C, ps, ps) in unit scale."""
    h, w, _ = image.shape
    ps = cfg.patch_size
    y0 = int(rng.integers(0, h - ps + 1))
    x0 = int(rng.integers(0, w - ps + 1))
    patch = image[y0:y0 + ps, x0:x0 + ps]
    if cfg.augment:
        patch = augment(patch, int(rng.integers(0, 8)))
    noisy = patch + rng.normal(0.0, cfg.sigma / 255.0, size=patch.shape) if cfg.sigma else patch
    return patch.transpose(2, 0, 1), noisy.transpose(2, 0, 1)


def denoise_array(weights: ModelWeights, noisy_unit: np.ndarray) -> np.ndarray:
    """``(H, W, C)`` unit-scale array through the network without a graph."""
    dtype = weights.config.dtype
    with no_grad():
        x = Tensor(np.ascontiguousarray(noisy_unit.transpose(2, 0, 1)[None], dtype=dtype))
        return forward(x, weights).data[0].transpose(1, 2, 0).astype(np.float64)


def validation_psnr(weights: ModelWeights, images: Sequence[ImageBuffer], sigma: float, seed: int) -> float:
    """Mean PSNR of 8-bit denoised outputs; noise is fixed per image index."""
    if not images:
        return math.nan
    scores = []
    for i, img in enumerate(images):
        noisy = add_awgn(img, sigma, sample_rng(seed, 0xFA11, i)) / 255.0
        out = quantize(denoise_array(weights, noisy) * 255.0)
        scores.append(psnr(out, img.to_255()))
    return float(np.mean(scores))


def train(model_config: ModelConfig, train_config: TrainConfig, dataset,
          out_path=None, log_path=None, weights: Optional[ModelWeights] = None,
          callback: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Optimise a denoiser on AWGN-corrupted patches of ``dataset``.

    ``dataset`` is a directory of PGM/PPM files or a list of ``(name,
    ImageBuffer)`` pairs. Each epoch draws ``patches_per_image`` crops per
    training image in a seeded order, then reports the mean training loss
    and validation PSNR. With ``out_path`` the final weights are written
    there and the best-validation weights to ``out_path + ".best"``.
    """
    cfg = train_config
    pairs = load_dataset(dataset)[0] if isinstance(dataset, (str, os.PathLike)) else list(dataset)
    if not pairs:
        raise ConfigError("dataset is empty")
    by_name = dict(pairs)
    train_names, val_names = validation_split(by_name, cfg.val_fraction)
    train_images = [by_name[n].to_unit(model_config.dtype) for n in train_names]
    val_images = [by_name[n] for n in val_names]
    for name, img in zip(train_names, train_images):
        if min(img.shape[:2]) < cfg.patch_size:
            raise ConfigError(f"{name} ({img.shape[1]}x{img.shape[0]}) is smaller than patch_size {cfg.patch_size}")
        if img.shape[2] != model_config.in_channels:
            raise ConfigError(f"{name} has {img.shape[2]} channels, model expects {model_config.in_channels}")

    if weights is None:
        weights = ModelWeights.init(model_config, cfg.seed)
    params = weights.params
    state = OptimState.for_params(params)
    history, step_losses = [], []
    best = -math.inf
    step = 0
    log_file = open(log_path, "a") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            lr = lr_at(epoch, cfg.base_lr, cfg.halving_epochs)
            jobs = [(i, k) for i in range(len(train_images)) for k in range(cfg.patches_per_image)]
            order = sample_rng(cfg.seed, epoch).permutation(len(jobs))
            epoch_losses = []
            for start in range(0, len(order), cfg.batch_size):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                clean, noisy = [], []
                for j in order[start:start + cfg.batch_size]:
                    i, k = jobs[j]
                    c, n = _make_sample(train_images[i], cfg, sample_rng(cfg.seed, epoch, i, k))
                    clean.append(c)
                    noisy.append(n)
                x = Tensor(np.stack(noisy).astype(model_config.dtype))
                loss = mse_loss(forward(x, weights), np.stack(clean), cfg.loss_mode)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericError(f"loss became {value} at epoch {epoch}, step {step + 1}")
                weights.zero_grad()
                loss.backward()
                adam_step(params, {k: p.grad for k, p in params.items()}, state, lr,
                          cfg.beta1, cfg.beta2, cfg.adam_eps)
                step += 1
                epoch_losses.append(value)
                step_losses.append(value)
            if not epoch_losses:
                break
            val = validation_psnr(weights, val_images, cfg.sigma, cfg.seed)
            row = {"epoch": epoch, "step": step, "lr": lr, "loss": float(np.mean(epoch_losses)), "val_psnr": val}
            history.append(row)
            log.info("epoch %d step %d lr %.3g loss %.6g val_psnr %.3f", epoch, step, lr, row["loss"], val)
            if log_file:
                log_file.write(f"{epoch},{step},{lr!r},{row['loss']!r},{val!r}\n")
                log_file.flush()
            if callback:
                callback(row)
            if out_path and val > best:
                save_checkpoint(os.fspath(out_path) + ".best", weights, state, cfg)
            best = max(best, val) if not math.isnan(val) else best
    finally:
        if log_file:
            log_file.close()
    weights.zero_grad()
    if out_path:
        save_checkpoint(out_path, weights, state, cfg)
    return TrainResult(weights, state, history, step_losses, best)
