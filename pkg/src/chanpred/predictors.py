"""Uniform predictor registry over the LLM model and all baselines.

Every predictor exposes predict(uplink complex [P][K][Nt]) ->
[L][K][Nt]. Learned predictors wrap a torch module honoring the frame
contract (complex [B][K][P] -> [B][K][L]) so the training loop and
checkpoints treat them identically; antennas are batched per sample.
The hold and Prony predictors are pure and need no training.

Registry ids: llm, none, prony, rnn, lstm, gru, cnn, transformer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn

from . import baselines, llmnet
from .backbone import Backbone, load_pretrained
from .chansim import ScenarioConfig

__all__ = ["PREDICTOR_IDS", "Predictor", "build_predictor", "TokenFrames", "ImageFrames"]

PREDICTOR_IDS = ("llm", "none", "prony", "rnn", "lstm", "gru", "cnn", "transformer")


@dataclass
class Predictor:
    """One registry entry: sample-level predictor plus training handle."""

    name: str
    trainable: bool
    model: nn.Module | None
    predict: Callable[[np.ndarray], np.ndarray]

    @property
    def param_count(self) -> int:
        if self.model is None:
            return 0
        return sum(p.numel() for p in self.model.parameters() if p.requires_grad)


class TokenFrames(nn.Module):
    """Adapt sequence models over realified tokens to the frame contract.

    The inner module maps [B][P][2K] -> [B][L][2K]; tokens stack the
    real parts of the K subcarriers before the imaginary parts.
    """

    def __init__(self, inner: nn.Module):
        super().__init__()
        self.inner = inner

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        k = x.shape[1]
        tokens = torch.cat([x.real, x.imag], dim=1).transpose(1, 2)
        out = self.inner(tokens)
        return torch.complex(out[..., :k], out[..., k:]).transpose(1, 2)


class ImageFrames(nn.Module):
    """Adapt the two-channel image model to the frame contract."""

    def __init__(self, inner: nn.Module):
        super().__init__()
        self.inner = inner

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.inner(torch.stack([x.real, x.imag], dim=1))
        return torch.complex(out[:, 0], out[:, 1])


def _sample_predict(model: nn.Module) -> Callable[[np.ndarray], np.ndarray]:
    def predict(uplink: np.ndarray) -> np.ndarray:
        frames = np.ascontiguousarray(uplink.transpose(2, 1, 0)).astype(np.complex64)
        x = torch.from_numpy(frames)
        model.eval()
        with torch.no_grad():
            y = model(x)
        return y.numpy().transpose(2, 1, 0)

    return predict


def build_predictor(
    kind: str,
    scenario: ScenarioConfig,
    seed: int = 0,
    feature: int | None = None,
    layers: int | None = None,
    heads: int | None = None,
    patch: int | None = None,
    backbone_model: Backbone | None = None,
    backbone_weights: dict[str, np.ndarray] | None = None,
) -> Predictor:
    """Construct a predictor sized to the scenario grid.

    feature/layers/heads/patch override the full-scale LLM defaults
    (used for reduced desk runs). backbone_weights, when given, loads a
    pretrained decoder archive instead of random initialization.
    """
    k, p, horizon = scenario.subcarriers, scenario.history, scenario.horizon
    if kind == "none":
        return Predictor("none", False, None, lambda up: baselines.no_prediction(up, horizon))
    if kind == "prony":
        geometry = scenario.geometry
        # order 8 needs 15 history samples; clamp for shorter grids
        pad_cfg = baselines.PadConfig(order=min(8, (p + 1) // 2))

        def predict(up: np.ndarray) -> np.ndarray:
            return baselines.pad_predict(up, horizon, geometry, pad_cfg).astype(np.complex64)

        return Predictor("prony", False, None, predict)

    torch.manual_seed(seed)
    if kind == "llm":
        config = llmnet.ModelConfig(
            subcarriers=k,
            history=p,
            horizon=horizon,
            patch=patch or 4,
            feature=feature or 768,
            layers=6 if layers is None else layers,
            heads=heads or 12,
        )
        if backbone_model is None and backbone_weights is not None:
            backbone_model = load_pretrained(backbone_weights, config.backbone_config())
        model = llmnet.build_model(config, seed, backbone_model=backbone_model)
        llmnet.apply_freeze_policy(model)
    elif kind in ("rnn", "lstm", "gru"):
        cfg = baselines.RecurrentConfig(cell=kind, subcarriers=k, horizon=horizon)
        model = TokenFrames(baselines.RecurrentPredictor(cfg))
    elif kind == "cnn":
        model = ImageFrames(baselines.CnnPredictor(baselines.CnnConfig(history=p, horizon=horizon)))
    elif kind == "transformer":
        cfg = baselines.TransformerBaselineConfig(subcarriers=k, history=p, horizon=horizon)
        model = TokenFrames(baselines.TransformerPredictor(cfg))
    else:
        raise ValueError(f"unknown predictor {kind!r}; expected one of {PREDICTOR_IDS}")
    return Predictor(kind, True, model, _sample_predict(model))
