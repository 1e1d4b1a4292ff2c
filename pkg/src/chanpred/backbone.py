"""Pre-layer-norm causal transformer decoder stack with a freeze policy.

Stands in for the partially frozen pre-trained language model: learnable
positional embedding plus N_L decoder blocks (causal self-attention and
feed-forward, each in a pre-LN residual branch). Attention and
feed-forward projections are frozen during fine-tuning; layer norms and
the positional embedding stay trainable.

Weights load from a CPWT archive under canonical names matching this
module's parameter paths:

    wpe                               [max_positions][F]
    h.<i>.ln_1.weight / .bias         [F]
    h.<i>.attn.{q,k,v,o}.weight      [F][F]   (torch Linear layout: out, in)
    h.<i>.attn.{q,k,v,o}.bias        [F]
    h.<i>.ln_2.weight / .bias         [F]
    h.<i>.mlp.fc_in.weight            [4F][F]
    h.<i>.mlp.fc_in.bias              [4F]
    h.<i>.mlp.fc_out.weight           [F][4F]
    h.<i>.mlp.fc_out.bias             [F]

Tensors not in this set (token embeddings, final layer norm, layers
beyond N_L) are ignored on load. There is no trailing layer norm: a
zero-layer stack is exactly input + positional embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import archive as archive_io


@dataclass(frozen=True)
class BackboneConfig:
    layers: int = 6
    feature: int = 768
    heads: int = 12
    ffn: int = 0  # 0 means 4 * feature
    max_positions: int = 1024
    dropout: float = 0.0
    causal: bool = True

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.feature <= 0 or self.feature % self.heads:
            raise ValueError("feature must be positive and divisible by heads")
        if self.max_positions < 1:
            raise ValueError("max_positions must be >= 1")
        if self.dropout != 0.0:
            raise ValueError("only dropout 0.0 is supported (determinism)")

    @property
    def ffn_width(self) -> int:
        return self.ffn if self.ffn else 4 * self.feature


class SelfAttention(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        f = config.feature
        self.heads = config.heads
        self.causal = config.causal
        self.q = nn.Linear(f, f)
        self.k = nn.Linear(f, f)
        self.v = nn.Linear(f, f)
        self.o = nn.Linear(f, f)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, f = x.shape
        hd = f // self.heads

        def split(z):
            return z.view(b, t, self.heads, hd).transpose(1, 2)  # [B, H, T, hd]

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(hd)
        if self.causal:
            mask = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
            scores = scores.masked_fill(mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, f)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.fc_in = nn.Linear(config.feature, config.ffn_width)
        self.fc_out = nn.Linear(config.ffn_width, config.feature)
        self.act = nn.GELU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc_out(self.act(self.fc_in(x)))


class Block(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        f = config.feature
        self.ln_1 = nn.LayerNorm(f)
        self.attn = SelfAttention(config)
        self.ln_2 = nn.LayerNorm(f)
        self.mlp = FeedForward(config)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln_1(x))
        return x + self.mlp(self.ln_2(x))


class Backbone(nn.Module):
    """Positional embedding plus a pre-LN causal decoder stack.

    forward maps [B][T][F] -> [B][T][F] for T <= max_positions.
    """

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.wpe = nn.Parameter(torch.zeros(config.max_positions, config.feature))
        self.h = nn.ModuleList(Block(config) for _ in range(config.layers))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, f = x.shape
        if t > self.config.max_positions:
            raise ValueError(f"sequence length {t} exceeds max positions {self.config.max_positions}")
        x = x + self.wpe[:t]
        for block in self.h:
            x = block(x)
        return x


def init_random(config: BackboneConfig, seed: int) -> Backbone:
    """Random-init fallback: N(0, 0.02) projections, identity layer norms."""
    model = Backbone(config)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, param in model.named_parameters():
            if name == "wpe" or (name.endswith(".weight") and ".ln_" not in name):
                param.copy_(torch.randn(param.shape, generator=gen) * 0.02)
            elif ".ln_" in name and name.endswith(".weight"):
                param.fill_(1.0)
            else:
                param.zero_()
    return model


def default_freeze_mask(model: Backbone) -> dict[str, bool]:
    """Trainable: layer norms and the positional embedding. Frozen: the rest."""
    mask = {}
    for name, _ in model.named_parameters():
        mask[name] = name == "wpe" or ".ln_" in name
    return mask


def apply_freeze(model: Backbone, mask: dict[str, bool]) -> None:
    """Set requires_grad per mask; every parameter must be covered."""
    uncovered = [name for name, _ in model.named_parameters() if name not in mask]
    if uncovered:
        raise ValueError(f"freeze mask does not cover: {uncovered}")
    for name, param in model.named_parameters():
        param.requires_grad_(bool(mask[name]))


def count_params(model: nn.Module) -> tuple[int, int]:
    """(trainable, total) parameter counts by requires_grad flag."""
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    total = sum(p.numel() for p in model.parameters())
    return trainable, total


def state_tensors(model: nn.Module) -> dict[str, np.ndarray]:
    """Named float32 views of all parameters, in registration order."""
    return {
        name: param.detach().cpu().numpy().astype(np.float32, copy=True)
        for name, param in model.named_parameters()
    }


def required_names(config: BackboneConfig) -> list[str]:
    names = ["wpe"]
    for i in range(config.layers):
        for ln in ("ln_1", "ln_2"):
            names += [f"h.{i}.{ln}.weight", f"h.{i}.{ln}.bias"]
        for proj in ("q", "k", "v", "o"):
            names += [f"h.{i}.attn.{proj}.weight", f"h.{i}.attn.{proj}.bias"]
        for fc in ("fc_in", "fc_out"):
            names += [f"h.{i}.mlp.{fc}.weight", f"h.{i}.mlp.{fc}.bias"]
    return names


def load_pretrained(tensors: dict[str, np.ndarray], config: BackboneConfig) -> Backbone:
    """Build a backbone from archived tensors under the canonical names.

    All tensors for the first N_L layers plus the positional embedding
    must be present with exact shapes; extras are ignored. Missing or
    mismatched tensors raise with the full offending name list.
    """
    model = Backbone(config)
    expected = {name: tuple(p.shape) for name, p in model.named_parameters()}
    missing = [n for n in required_names(config) if n not in tensors]
    if missing:
        raise ValueError(f"archive missing tensors: {missing}")
    bad = [
        f"{n} (archive {tuple(np.asarray(tensors[n]).shape)} != model {expected[n]})"
        for n in required_names(config)
        if tuple(np.asarray(tensors[n]).shape) != expected[n]
    ]
    if bad:
        raise ValueError(f"archive shape mismatches: {bad}")
    with torch.no_grad():
        for name, param in model.named_parameters():
            arr = np.asarray(tensors[name])
            if arr.dtype not in (np.float32, np.float64):
                raise ValueError(f"tensor {name!r} has non-float dtype {arr.dtype}")
            param.copy_(torch.from_numpy(arr.astype(np.float32, copy=True)))
    return model


def load_pretrained_file(path, config: BackboneConfig) -> Backbone:
    return load_pretrained(archive_io.load_archive(path), config)
