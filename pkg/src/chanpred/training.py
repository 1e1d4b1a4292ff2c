"""Loss, schedule, and deterministic training loop for the predictors.

Training operates on per-antenna frames: each dataset sample with Nt
antennas contributes Nt records of complex history [K][P] and target
[K][L]. All trainable predictors share that frame contract (complex
[B][K][P] -> [B][K][L]). The loop uses Adam with a stepwise decayed
learning rate, validates every epoch, and returns the checkpoint with
the smallest validation loss. Every stochastic choice (shuffling,
augmentation) derives from (seed, epoch), so identical configurations
reproduce identical checkpoints bit for bit.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .archive import load_archive, save_archive
from .chansim import CsiSample, Dataset, add_noise


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters.

    noise_snr_db is an inclusive dB interval for per-sample noise
    augmentation of the uplink history, or None to disable it.
    """

    batch_size: int = 512
    epochs: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    lr0: float = 1e-3
    lr_decay_every: int = 150
    noise_snr_db: tuple[float, float] | None = None
    few_shot_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.epochs, self.lr_decay_every) < 1:
            raise ValueError("batch_size, epochs and lr_decay_every must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if not 0 < self.few_shot_fraction <= 1:
            raise ValueError("few_shot_fraction must lie in (0, 1]")
        if self.noise_snr_db is not None:
            lo, hi = self.noise_snr_db
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValueError("noise_snr_db must be a finite interval lo <= hi")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


def config_hash(config: TrainConfig) -> str:
    return hashlib.sha256(repr(config).encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    """Parameter snapshot with selection metadata.

    params maps state-dict names to numpy arrays. history holds the
    per-epoch validation losses of the producing run; it is returned for
    inspection but not serialized.
    """

    params: dict[str, np.ndarray]
    epoch: int
    val_loss: float
    seed: int
    config_digest: str
    history: list[float] = field(default_factory=list)


class DivergenceError(RuntimeError):
    """Training loss became non-finite; carries the last good checkpoint."""

    def __init__(self, message: str, checkpoint: Checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


def _sq_norm(x: torch.Tensor) -> torch.Tensor:
    if x.is_complex():
        return (x.real ** 2 + x.imag ** 2).sum()
    return (x ** 2).sum()


def nmse_loss(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    """Single-sample normalized squared error, differentiable in pred.

    Accepts matching real or complex tensors of any shape and returns
    ||pred - truth||^2 / ||truth||^2 over all elements.
    """
    if pred.shape != truth.shape:
        raise ValueError("pred and truth shapes must match")
    den = _sq_norm(truth)
    if float(den) == 0.0:
        raise ValueError("zero-truth sample has undefined NMSE")
    return _sq_norm(pred - truth) / den


def batch_nmse_loss(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    """Mean of per-sample NMSE over the leading batch axis."""
    if pred.shape != truth.shape or pred.ndim < 2:
        raise ValueError("expected matching batched tensors")
    b = pred.shape[0]
    diff = pred.reshape(b, -1) - truth.reshape(b, -1)
    ref = truth.reshape(b, -1)
    if pred.is_complex():
        num = (diff.real ** 2 + diff.imag ** 2).sum(dim=1)
        den = (ref.real ** 2 + ref.imag ** 2).sum(dim=1)
    else:
        num = (diff ** 2).sum(dim=1)
        den = (ref ** 2).sum(dim=1)
    if bool((den == 0).any()):
        raise ValueError("zero-truth sample has undefined NMSE")
    return (num / den).mean()


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Stepwise decayed rate: lr0 * 0.1^(epoch // decay period)."""
    if not 0 <= epoch < config.epochs:
        raise ValueError("epoch out of range")
    return config.lr0 * 0.1 ** (epoch // config.lr_decay_every)


def few_shot_subset(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Uniform subsample without replacement, original order preserved.

    Keeps floor(fraction * n) samples; fraction 1.0 returns the full set
    in order. Uniformity preserves the velocity mix in expectation.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    n = len(dataset)
    size = int(fraction * n)
    if size < 1:
        raise ValueError("few-shot subset would be empty")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x_FE57)))
    idx = np.sort(rng.choice(n, size=size, replace=False))
    return Dataset(dataset.scenario, [dataset.samples[i] for i in idx])


def _draw_snr(rng: np.random.Generator, snr_range: tuple[float, float]) -> float:
    lo, hi = snr_range
    if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
        raise ValueError("snr range must be a finite interval lo <= hi")
    return float(rng.uniform(lo, hi))


def noise_augment(
    samples: list[CsiSample],
    snr_range: tuple[float, float] | None,
    rng: np.random.Generator,
) -> list[CsiSample]:
    """Corrupt each sample's uplink at an SNR drawn uniformly per sample.

    Targets stay untouched. A None range disables augmentation and
    returns the inputs unchanged.
    """
    if snr_range is None:
        return samples
    return [add_noise(s, _draw_snr(rng, snr_range), rng) for s in samples]


def frames_from_samples(samples: list[CsiSample]) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-antenna training frames: complex [N*Nt][K][P] and [N*Nt][K][L]."""
    if not samples:
        raise ValueError("empty sample list")
    xs = np.stack([s.uplink.transpose(2, 1, 0) for s in samples])
    ys = np.stack([s.downlink.transpose(2, 1, 0) for s in samples])
    xs = xs.reshape(-1, xs.shape[2], xs.shape[3])
    ys = ys.reshape(-1, ys.shape[2], ys.shape[3])
    return (
        torch.from_numpy(np.ascontiguousarray(xs.astype(np.complex64))),
        torch.from_numpy(np.ascontiguousarray(ys.astype(np.complex64))),
    )


def frames_from_dataset(dataset: Dataset) -> tuple[torch.Tensor, torch.Tensor]:
    return frames_from_samples(dataset.samples)


def _validate(model: nn.Module, x: torch.Tensor, y: torch.Tensor, batch_size: int) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            xb = x[start:start + batch_size]
            yb = y[start:start + batch_size]
            total += float(batch_nmse_loss(model(xb), yb)) * xb.shape[0]
    model.train()
    return total / x.shape[0]


def _snapshot(model: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def train(model: nn.Module, train_set, val_set, config: TrainConfig) -> Checkpoint:
    """Adam training with per-epoch validation-best checkpointing.

    train_set and val_set are Datasets or prebuilt (x, y) frame pairs.
    The model is trained in place and left at its final state; the
    returned checkpoint holds the parameters of the epoch with minimal
    validation loss. Raises DivergenceError (carrying the last good
    checkpoint) if any loss turns non-finite. Noise augmentation needs
    Dataset input because noise power is referenced to whole samples.
    """
    train_frames = train_set if isinstance(train_set, tuple) else None
    if config.noise_snr_db is not None and not isinstance(train_set, Dataset):
        raise ValueError("noise augmentation requires a Dataset training set")
    if train_frames is None:
        train_frames = frames_from_dataset(train_set)
    val_x, val_y = val_set if isinstance(val_set, tuple) else frames_from_dataset(val_set)
    base_x, base_y = train_frames
    if min(base_x.shape[0], val_x.shape[0]) < 1:
        raise ValueError("datasets must be non-empty")

    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        raise ValueError("model has no trainable parameters")
    opt = torch.optim.Adam(params, lr=config.lr0, betas=(config.beta1, config.beta2))
    digest = config_hash(config)

    best = Checkpoint(_snapshot(model), -1, math.inf, config.seed, digest)
    history: list[float] = []
    model.train()
    for epoch in range(config.epochs):
        rate = lr_at(epoch, config)
        for group in opt.param_groups:
            group["lr"] = rate
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, epoch)))
        if config.noise_snr_db is not None:
            augmented = noise_augment(train_set.samples, config.noise_snr_db, rng)
            x, y = frames_from_samples(augmented)
        else:
            x, y = base_x, base_y
        perm = rng.permutation(x.shape[0])
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start:start + config.batch_size]
            opt.zero_grad()
            loss = batch_nmse_loss(model(x[idx]), y[idx])
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", best)
            loss.backward()
            opt.step()
        val = _validate(model, val_x, val_y, config.batch_size)
        if not math.isfinite(val):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", best)
        history.append(val)
        if val < best.val_loss:
            best = Checkpoint(_snapshot(model), epoch, val, config.seed, digest)
    best.history = history
    return best


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    """Write the weight archive plus a plain-text metadata sidecar."""
    save_archive(path, ckpt.params)
    with open(_sidecar(path), "w") as fh:
        fh.write(f"epoch={ckpt.epoch}\n")
        fh.write(f"val_loss={ckpt.val_loss!r}\n")
        fh.write(f"config_hash={ckpt.config_digest}\n")
        fh.write(f"seed={ckpt.seed}\n")


def load_checkpoint(path: str) -> Checkpoint:
    params = load_archive(path)
    meta = {}
    with open(_sidecar(path)) as fh:
        for line in fh:
            key, _, value = line.strip().partition("=")
            meta[key] = value
    return Checkpoint(
        params=params,
        epoch=int(meta["epoch"]),
        val_loss=float(meta["val_loss"]),
        seed=int(meta["seed"]),
        config_digest=meta["config_hash"],
    )


def apply_checkpoint(model: nn.Module, ckpt: Checkpoint) -> None:
    """Load checkpoint parameters into the model (shapes must match)."""
    state = model.state_dict()
    missing = sorted(set(state) - set(ckpt.params))
    extra = sorted(set(ckpt.params) - set(state))
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing {missing}, extra {extra}")
    loaded = {}
    for name, arr in ckpt.params.items():
        if tuple(arr.shape) != tuple(state[name].shape):
            raise ValueError(f"shape mismatch for {name}")
        loaded[name] = torch.from_numpy(arr.copy()).to(state[name].dtype)
    model.load_state_dict(loaded)


def _sidecar(path: str) -> str:
    return f"{path}.meta.txt"
