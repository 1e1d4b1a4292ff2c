"""Comparison predictors for the channel forecasting benchmark.

Implements the reference predictor family: a no-prediction hold, a
Prony-style linear predictor applied in the beam-delay domain (the one
baseline that consumes the full antenna tensor jointly), stacked
recurrent networks (vanilla RNN, LSTM, GRU), a 2-D convolutional
predictor over the frequency-time plane, and a parallel transformer
that emits all future steps in one pass. The learned baselines operate
per antenna on realified sequences of length 2K and share the shape
contract (P, K, Nt) -> (L, K, Nt) once antennas are reassembled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .backbone import BackboneConfig, Block, FeedForward
from .chansim import ArrayGeometry
from .llmnet import positional_encoding

logger = logging.getLogger(__name__)


def no_prediction(uplink: np.ndarray, horizon: int) -> np.ndarray:
    """Hold the latest uplink snapshot for every future step.

    uplink is complex [P][K][Nt]; the result repeats uplink[P-1] along a
    new leading axis of length `horizon`.
    """
    if uplink.ndim != 3 or uplink.shape[0] < 1:
        raise ValueError("expected a non-empty [P][K][Nt] tensor")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return np.repeat(uplink[-1:], horizon, axis=0)


# ---------------------------------------------------------------------------
# Prony-style beam-delay-domain predictor


@dataclass(frozen=True)
class PadConfig:
    """Settings for the beam-delay-domain linear predictor.

    `order` complex exponentials are fitted per bin from the last
    2*order - 1 history samples. `ridge_rel` scales an optional ridge
    penalty relative to the mean Hankel row energy; zero keeps the plain
    SVD least-squares solution, which recovers noiseless exponential
    sums to machine precision. Rank-deficient fits fall back to a small
    ridge floor and are flagged through logging.
    """

    order: int = 8
    ridge_rel: float = 0.0

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.ridge_rel < 0:
            raise ValueError("ridge_rel must be >= 0")

    @property
    def history_used(self) -> int:
        return 2 * self.order - 1


_RANK_FLOOR = 1e-6


def _fit_linear_predictor(x: np.ndarray, order: int, ridge_rel: float) -> tuple[np.ndarray, bool]:
    """Fit coefficients a with x[t] ~ sum_i a[i] * x[t-1-i].

    Uses forward-backward equations: the conjugate-reversed sequence
    obeys the same recursion, doubling the row count so `order`
    exponentials are identifiable from 2*order - 1 samples. Returns the
    coefficients and a rank-deficiency flag.
    """
    n = x.size
    rows = []
    rhs = []
    for seq in (x, np.conj(x[::-1])):
        for t in range(order, n):
            rows.append(seq[t - order:t][::-1])
            rhs.append(seq[t])
    h = np.asarray(rows)
    y = np.asarray(rhs)
    if ridge_rel > 0:
        lam = ridge_rel * float(np.mean(np.abs(h) ** 2) * order)
        h = np.vstack([h, np.sqrt(lam) * np.eye(order, dtype=h.dtype)])
        y = np.concatenate([y, np.zeros(order, dtype=y.dtype)])
    coeffs, _, rank, _ = np.linalg.lstsq(h, y, rcond=None)
    floored = False
    if rank < order and ridge_rel == 0:
        # Fewer modes than the order leaves the system rank deficient.
        # When it is still consistent (noiseless case) the min-norm
        # solution extrapolates exactly, so keep it; otherwise fall back
        # to a small ridge floor to keep the fit bounded.
        resid = np.linalg.norm(h @ coeffs - y)
        if resid > 1e-8 * max(float(np.linalg.norm(y)), np.finfo(float).tiny):
            coeffs, _ = _fit_linear_predictor(x, order, _RANK_FLOOR)
            floored = True
    return coeffs, floored


def _extrapolate(x: np.ndarray, coeffs: np.ndarray, steps: int) -> np.ndarray:
    order = coeffs.size
    buf = list(x[-order:])
    out = np.empty(steps, dtype=np.complex128)
    for i in range(steps):
        nxt = np.dot(coeffs, np.asarray(buf[-order:])[::-1])
        out[i] = nxt
        buf.append(nxt)
    return out


def pad_predict(
    uplink: np.ndarray,
    horizon: int,
    geometry: ArrayGeometry,
    config: PadConfig = PadConfig(),
) -> np.ndarray:
    """Extrapolate the channel by per-bin linear prediction.

    The [P][K][Nt] history is mapped to the beam-delay domain (unitary
    DFT over each planar-array axis, unitary IDFT over subcarriers),
    each of the K*Nt time series is extended `horizon` steps with an
    order-N linear predictor, and the transforms are inverted. Pure
    given input and config; no training involved.
    """
    p, k, nt = uplink.shape
    if nt != geometry.nt:
        raise ValueError(f"antenna count {nt} does not match geometry {geometry.nt}")
    if config.history_used > p:
        raise ValueError("history must cover 2*order - 1 samples")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")

    # Antenna index is ih-major (kron of horizontal and vertical factors).
    grid = uplink.astype(np.complex128).reshape(p, k, geometry.n_h, geometry.n_v)
    beams = np.fft.fft(np.fft.fft(grid, axis=2, norm="ortho"), axis=3, norm="ortho")
    bins = np.fft.ifft(beams, axis=1, norm="ortho")

    flat = bins.reshape(p, -1)
    pred = np.empty((horizon, flat.shape[1]), dtype=np.complex128)
    floored = 0
    for b in range(flat.shape[1]):
        series = flat[:, b]
        window = series[-config.history_used:]
        coeffs, flag = _fit_linear_predictor(window, config.order, config.ridge_rel)
        floored += flag
        pred[:, b] = _extrapolate(series, coeffs, horizon)
    if floored:
        logger.warning("inconsistent rank-deficient fit on %d of %d bins; ridge floor applied", floored, flat.shape[1])

    pred = pred.reshape(horizon, k, geometry.n_h, geometry.n_v)
    pred = np.fft.fft(pred, axis=1, norm="ortho")
    pred = np.fft.ifft(np.fft.ifft(pred, axis=3, norm="ortho"), axis=2, norm="ortho")
    return pred.reshape(horizon, k, nt)


# ---------------------------------------------------------------------------
# Learned per-antenna baselines


@dataclass(frozen=True)
class RecurrentConfig:
    """Stacked recurrent predictor with a direct multi-step head.

    The default hidden sizes put each cell type within the parameter
    budget of the reference comparison at the full configuration.
    """

    cell: str = "gru"
    layers: int = 4
    hidden: int = 0
    subcarriers: int = 48
    horizon: int = 4

    _DEFAULT_HIDDEN = {"rnn": 176, "lstm": 192, "gru": 192}

    def __post_init__(self):
        if self.cell not in self._DEFAULT_HIDDEN:
            raise ValueError("cell must be one of rnn, lstm, gru")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.hidden < 0:
            raise ValueError("hidden must be >= 0")
        if min(self.subcarriers, self.horizon) < 1:
            raise ValueError("subcarriers and horizon must be >= 1")

    @property
    def hidden_size(self) -> int:
        return self.hidden if self.hidden else self._DEFAULT_HIDDEN[self.cell]


class RecurrentPredictor(nn.Module):
    """RNN/LSTM/GRU over realified per-antenna sequences.

    forward maps [B][P][2K] -> [B][L][2K]: the stacked cells consume all
    P steps and one linear layer maps the final hidden state to every
    future step at once (no autoregressive rollout).
    """

    def __init__(self, config: RecurrentConfig):
        super().__init__()
        self.config = config
        width = 2 * config.subcarriers
        core = {"rnn": nn.RNN, "lstm": nn.LSTM, "gru": nn.GRU}[config.cell]
        self.core = core(width, config.hidden_size, num_layers=config.layers, batch_first=True)
        self.head = nn.Linear(config.hidden_size, config.horizon * width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out, _ = self.core(x)
        y = self.head(out[:, -1])
        return y.view(x.shape[0], self.config.horizon, -1)


@dataclass(frozen=True)
class CnnConfig:
    """Convolutional predictor treating CSI as a two-channel image."""

    layers: int = 10
    channels: int = 200
    kernel: int = 3
    history: int = 16
    horizon: int = 4

    def __post_init__(self):
        if self.layers < 2:
            raise ValueError("need at least input and output conv layers")
        if self.kernel % 2 != 1:
            raise ValueError("kernel must be odd to preserve spatial dims")
        if min(self.channels, self.history, self.horizon) < 1:
            raise ValueError("channels, history and horizon must be >= 1")


class CnnPredictor(nn.Module):
    """Shape-preserving conv stack plus a linear map along time.

    forward maps [B][2][K][P] -> [B][2][K][L]. All convolutions pad to
    keep the (K, P) plane; ReLU sits between convolutions but not after
    the last one, and a final linear layer maps the P time samples of
    each pixel row to L future samples.
    """

    def __init__(self, config: CnnConfig = CnnConfig()):
        super().__init__()
        self.config = config
        pad = config.kernel // 2
        chans = [2] + [config.channels] * (config.layers - 1) + [2]
        self.convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], config.kernel, padding=pad)
            for i in range(config.layers)
        )
        self.act = nn.ReLU()
        self.time = nn.Linear(config.history, config.horizon)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs[:-1]:
            x = self.act(conv(x))
        x = self.convs[-1](x)
        return self.time(x)


@dataclass(frozen=True)
class TransformerBaselineConfig:
    """Encoder plus learned queries emitting all L steps in one pass."""

    encoder_layers: int = 3
    heads: int = 4
    feature: int = 192
    subcarriers: int = 48
    history: int = 16
    horizon: int = 4

    def __post_init__(self):
        if self.encoder_layers < 1:
            raise ValueError("encoder_layers must be >= 1")
        if self.feature % self.heads != 0:
            raise ValueError("feature must divide evenly across heads")
        if min(self.subcarriers, self.history, self.horizon) < 1:
            raise ValueError("subcarriers, history and horizon must be >= 1")

    def _block_config(self) -> BackboneConfig:
        # Bidirectional blocks: the encoder sees the whole history.
        return BackboneConfig(
            layers=self.encoder_layers,
            feature=self.feature,
            heads=self.heads,
            max_positions=self.history,
            causal=False,
        )


class CrossAttention(nn.Module):
    """Multi-head attention from query tokens onto encoder tokens."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        f = config.feature
        self.heads = config.heads
        self.q = nn.Linear(f, f)
        self.k = nn.Linear(f, f)
        self.v = nn.Linear(f, f)
        self.o = nn.Linear(f, f)

    def forward(self, queries: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        b, lq, f = queries.shape
        lk = context.shape[1]
        hd = f // self.heads
        q = self.q(queries).view(b, lq, self.heads, hd).transpose(1, 2)
        k = self.k(context).view(b, lk, self.heads, hd).transpose(1, 2)
        v = self.v(context).view(b, lk, self.heads, hd).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / (hd ** 0.5)
        mix = torch.softmax(scores, dim=-1) @ v
        return self.o(mix.transpose(1, 2).reshape(b, lq, f))


class TransformerPredictor(nn.Module):
    """Parallel multi-step transformer over realified sequences.

    forward maps [B][P][2K] -> [B][L][2K] in one pass: the embedded
    history (with sinusoidal positional encoding) runs through the
    encoder, L learned query vectors cross-attend to the encoded
    tokens, and a linear layer maps each query back to 2K values. No
    recurrence on the model's own outputs.
    """

    def __init__(self, config: TransformerBaselineConfig = TransformerBaselineConfig()):
        super().__init__()
        self.config = config
        width = 2 * config.subcarriers
        blk = config._block_config()
        self.embed = nn.Linear(width, config.feature)
        pe = positional_encoding(config.feature, config.history).T
        self.register_buffer("pe", torch.from_numpy(pe.copy()).float())
        self.encoder = nn.ModuleList(Block(blk) for _ in range(config.encoder_layers))
        self.queries = nn.Parameter(torch.empty(config.horizon, config.feature).normal_(0.0, 0.02))
        self.ln_q = nn.LayerNorm(config.feature)
        self.ln_kv = nn.LayerNorm(config.feature)
        self.cross = CrossAttention(blk)
        self.ln_2 = nn.LayerNorm(config.feature)
        self.mlp = FeedForward(blk)
        self.out = nn.Linear(config.feature, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.config.history:
            raise ValueError(f"expected {self.config.history} history steps, got {x.shape[1]}")
        tokens = self.embed(x) + self.pe.to(x.dtype)
        for block in self.encoder:
            tokens = block(tokens)
        q = self.queries.to(x.dtype).expand(x.shape[0], -1, -1)
        h = q + self.cross(self.ln_q(q), self.ln_kv(tokens))
        h = h + self.mlp(self.ln_2(h))
        return self.out(h)
