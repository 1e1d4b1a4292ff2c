"""Frozen-backbone transformer channel predictor.

Per-antenna pipeline: the K x P uplink history is mirrored into a
frequency branch and a unitary-IDFT delay branch, each realified,
normalized with per-sample scalar statistics, and split into
non-overlapping temporal patches. Both branches pass through cascaded
CSI attention blocks (3x3 convolutions over the (2K, N) plane with the
patch index P' as channel axis plus a squeeze-and-excitation gate), are
summed, flattened per patch, projected to the backbone width, tagged
with sinusoidal positional encoding, and run through the decoder stack
(`backbone` module, attention/FFN frozen). The output head applies two
per-position FC layers (GELU between), a linear time map P' -> L, and
de-normalizes with the frequency-domain statistics to produce the K x L
complex prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import sigproc
from .backbone import Backbone, BackboneConfig, init_random

SIGMA_FLOOR = sigproc.SIGMA_FLOOR


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions of the predictor network."""

    subcarriers: int = 48
    history: int = 16
    horizon: int = 4
    patch: int = 4
    feature: int = 768
    layers: int = 6
    n1: int = 4
    n2: int = 4
    reduction: int = 2
    heads: int = 12
    max_positions: int = 1024

    def __post_init__(self):
        if min(self.subcarriers, self.history, self.horizon, self.patch, self.feature) < 1:
            raise ValueError("dimensions must be positive")
        if self.feature % 2:
            raise ValueError("feature dim must be even for positional encoding")
        if self.reduction < 1 or self.p_prime // self.reduction < 1:
            raise ValueError("reduction must satisfy 1 <= r <= P'")
        if self.n1 < 0 or self.n2 < 0 or self.layers < 0:
            raise ValueError("cascade and layer counts must be nonnegative")

    @property
    def p_prime(self) -> int:
        return math.ceil(self.history / self.patch)

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            layers=self.layers,
            feature=self.feature,
            heads=self.heads,
            max_positions=self.max_positions,
        )


def positional_encoding(feature: int, positions: int) -> np.ndarray:
    """Sinusoidal encoding, shape [feature][positions].

    PE[2i][j] = sin(j / 10000^(2i/F)), PE[2i+1][j] = cos(same argument).
    """
    if feature % 2:
        raise ValueError("feature dim must be even")
    pe = np.zeros((feature, positions))
    j = np.arange(positions)
    for i in range(feature // 2):
        arg = j / 10000 ** (2 * i / feature)
        pe[2 * i] = np.sin(arg)
        pe[2 * i + 1] = np.cos(arg)
    return pe


def preprocess(h_f: np.ndarray, patch_size: int) -> tuple[sigproc.PatchedTensor, sigproc.PatchedTensor, sigproc.NormStats]:
    """Reference (numpy) preprocessing of one antenna's K x P history.

    Returns the patched frequency tensor, patched delay tensor, and the
    per-sample normalization statistics retained for de-normalization.
    """
    h_f = np.asarray(h_f)
    if not np.all(np.isfinite(h_f)):
        raise ValueError("non-finite input")
    k, p = h_f.shape
    h_tau = sigproc.idft_delay(h_f)
    x_f = sigproc.realify(h_f).reshape(2 * k, p)
    x_t = sigproc.realify(h_tau).reshape(2 * k, p)
    stats = sigproc.compute_stats(x_f, x_t)
    x_f = sigproc.normalize(x_f, stats.mu_f, stats.sigma_f)
    x_t = sigproc.normalize(x_t, stats.mu_t, stats.sigma_t)
    return sigproc.patch(x_f, patch_size), sigproc.patch(x_t, patch_size), stats


class CsiAttentionBlock(nn.Module):
    """Residual conv + squeeze-and-excitation block over patched CSI.

    Operates on [B][P'][2K][N] with the patch index as channel axis. The
    feature map is conv2(relu(conv1(x))); a sigmoid gate computed from
    its global average pool (mean over the (2K, N) plane) scales it
    before the residual add. Zero weights make the block an exact
    identity.
    """

    def __init__(self, p_prime: int, reduction: int):
        super().__init__()
        hidden = max(1, p_prime // reduction)
        self.conv1 = nn.Conv2d(p_prime, p_prime, 3, padding=1)
        self.conv2 = nn.Conv2d(p_prime, p_prime, 3, padding=1)
        self.fc1 = nn.Linear(p_prime, hidden)
        self.fc2 = nn.Linear(hidden, p_prime)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feat = self.conv2(torch.relu(self.conv1(x)))
        pooled = feat.mean(dim=(2, 3))
        gate = torch.sigmoid(self.fc2(torch.relu(self.fc1(pooled))))
        return x + feat * gate[:, :, None, None]


def csi_attention_forward(x: np.ndarray, block: CsiAttentionBlock) -> np.ndarray:
    """Apply one block to a [2K][N][P'] tensor (spec orientation)."""
    t = torch.from_numpy(np.asarray(x, dtype=np.float64))[None].permute(0, 3, 1, 2)
    with torch.no_grad():
        out = block.double()(t)
    return out.permute(0, 2, 3, 1)[0].numpy()


class OutputHead(nn.Module):
    """Two per-position FC layers (GELU between) plus a P' -> L time map."""

    def __init__(self, feature: int, subcarriers: int, p_prime: int, horizon: int):
        super().__init__()
        self.fc1 = nn.Linear(feature, feature)
        self.fc2 = nn.Linear(feature, 2 * subcarriers)
        self.time = nn.Linear(p_prime, horizon)
        self.act = nn.GELU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # [B][P'][F] -> [B][P'][2K] -> [B][2K][L]
        y = self.fc2(self.act(self.fc1(x)))
        return self.time(y.transpose(1, 2))


class LlmChannelPredictor(nn.Module):
    """Full per-antenna predictor: complex [B][K][P] -> complex [B][K][L]."""

    def __init__(self, config: ModelConfig, backbone_model: Backbone | None = None):
        super().__init__()
        self.cfg = config
        k, n, pp = config.subcarriers, config.patch, config.p_prime
        self.freq_blocks = nn.ModuleList(
            CsiAttentionBlock(pp, config.reduction) for _ in range(config.n1)
        )
        self.delay_blocks = nn.ModuleList(
            CsiAttentionBlock(pp, config.reduction) for _ in range(config.n2)
        )
        self.embed = nn.Linear(2 * k * n, config.feature)
        pe = positional_encoding(config.feature, pp).T  # [P'][F]
        self.register_buffer("pe", torch.from_numpy(pe).float())
        self.backbone = backbone_model if backbone_model is not None else Backbone(config.backbone_config())
        self.head = OutputHead(config.feature, k, pp, config.horizon)

    def _patch(self, x: torch.Tensor) -> torch.Tensor:
        # [B][2K][P] -> [B][P'][2K][N] (conv layout, patch index as channel)
        b, c, p = x.shape
        n, pp = self.cfg.patch, self.cfg.p_prime
        padded = nn.functional.pad(x, (0, pp * n - p))
        return padded.view(b, c, pp, n).permute(0, 2, 1, 3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not torch.is_complex(x):
            raise TypeError("input must be a complex tensor [B][K][P]")
        if not torch.isfinite(torch.view_as_real(x)).all():
            raise ValueError("non-finite input")
        b, k, p = x.shape
        cfg = self.cfg
        if (k, p) != (cfg.subcarriers, cfg.history):
            raise ValueError(f"input shape {(k, p)} != {(cfg.subcarriers, cfg.history)}")

        h_tau = torch.fft.ifft(x, dim=1, norm="ortho")
        x_f = torch.cat([x.real, x.imag], dim=1)  # [B][2K][P]
        x_t = torch.cat([h_tau.real, h_tau.imag], dim=1)

        mu_f = x_f.mean(dim=(1, 2), keepdim=True)
        sigma_f = x_f.std(dim=(1, 2), correction=0, keepdim=True).clamp_min(SIGMA_FLOOR)
        mu_t = x_t.mean(dim=(1, 2), keepdim=True)
        sigma_t = x_t.std(dim=(1, 2), correction=0, keepdim=True).clamp_min(SIGMA_FLOOR)

        f_branch = self._patch((x_f - mu_f) / sigma_f)
        t_branch = self._patch((x_t - mu_t) / sigma_t)
        for block in self.freq_blocks:
            f_branch = block(f_branch)
        for block in self.delay_blocks:
            t_branch = block(t_branch)
        merged = f_branch + t_branch  # [B][P'][2K][N]

        tokens = self.embed(merged.reshape(b, cfg.p_prime, -1)) + self.pe.to(merged.dtype)
        feats = self.backbone(tokens)
        out = self.head(feats)  # [B][2K][L]

        out = out.view(b, 2, k, cfg.horizon)
        out = out * sigma_f[:, :, None] + mu_f[:, :, None]
        return torch.complex(out[:, 0], out[:, 1])


def build_model(config: ModelConfig, seed: int, backbone_model: Backbone | None = None) -> LlmChannelPredictor:
    """Deterministically construct a predictor.

    Trainable head/embedding/attention parameters use torch's default
    initializers under the given seed; the backbone defaults to the
    random-init fallback (same seed) when no pretrained model is given.
    """
    torch.manual_seed(int(seed))
    if backbone_model is None:
        backbone_model = init_random(config.backbone_config(), seed)
    return LlmChannelPredictor(config, backbone_model)


def apply_freeze_policy(model: LlmChannelPredictor) -> dict[str, bool]:
    """Freeze backbone attention/FFN projections; everything else trains.

    Returns the applied name -> trainable mask over all model parameters.
    """
    mask = {}
    for name, param in model.named_parameters():
        if name.startswith("backbone."):
            sub = name[len("backbone."):]
            trainable = sub == "wpe" or ".ln_" in sub
        else:
            trainable = True
        mask[name] = trainable
        param.requires_grad_(trainable)
    return mask


def trainable_parameters(model: nn.Module) -> list[torch.Tensor]:
    return [p for p in model.parameters() if p.requires_grad]


def predict_sample(model: LlmChannelPredictor, uplink: np.ndarray) -> np.ndarray:
    """Predict [L][K][Nt] from one sample's uplink [P][K][Nt] (numpy)."""
    p, k, nt = uplink.shape
    x = torch.from_numpy(np.ascontiguousarray(uplink.transpose(2, 1, 0)))  # [Nt][K][P]
    dtype = torch.complex128 if next(model.parameters()).dtype == torch.float64 else torch.complex64
    model.eval()
    with torch.no_grad():
        y = model(x.to(dtype))  # [Nt][K][L]
    return y.numpy().transpose(2, 1, 0)
