"""Prediction metrics and benchmark experiment suites.

Metrics: normalized mean squared error over the predicted horizon,
downlink spectral efficiency under matched-filter precoding built from
the predicted CSI, and Monte Carlo Gray-mapped 4-QAM bit error rate
with genie-coherent detection (the receiver knows the true effective
scalar channel, isolating the beamforming-mismatch loss). SE and BER
are evaluated at the first predicted step of each sample and averaged;
SE is reported per subcarrier.

Suites sweep velocity, uplink measurement noise, few-shot training
fractions, and scenario/frequency transfer, emitting deterministic
tab-separated reports whose rows are tagged with predictor id, dataset
hash, and seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .chansim import Dataset, ScenarioConfig, add_noise
from .datasets import content_hash

SUITES = ("velocity_sweep", "noise_sweep", "few_shot", "cross_scenario", "cross_frequency")


@dataclass(frozen=True)
class LinkConfig:
    """Downlink transmission settings for SE and BER evaluation.

    snr_db is the communication SNR 1/sigma_n^2 in dB. Monte Carlo BER
    draws symbols_per_subcarrier Gray-mapped 4-QAM symbols per
    subcarrier.
    """

    snr_db: float = 10.0
    symbols_per_subcarrier: int = 10_000

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.symbols_per_subcarrier < 1:
            raise ValueError("symbols_per_subcarrier must be >= 1")

    @property
    def noise_power(self) -> float:
        return 10.0 ** (-self.snr_db / 10.0)


def nmse_metric(pred: np.ndarray, truth: np.ndarray) -> float:
    """Squared error over the whole predicted tensor, normalized by the truth."""
    if pred.shape != truth.shape:
        raise ValueError("pred and truth shapes must match")
    den = float(np.sum(np.abs(truth) ** 2))
    if den == 0.0:
        raise ValueError("zero-truth sample has undefined NMSE")
    return float(np.sum(np.abs(pred - truth) ** 2)) / den


def matched_precoder(h: np.ndarray) -> np.ndarray:
    """Unit-norm matched filter w = h / ||h||."""
    norm = float(np.linalg.norm(h))
    if norm == 0.0:
        raise ValueError("cannot build a precoder from a zero channel")
    return h / norm


def _effective_gains(true_csi: np.ndarray, pred_csi: np.ndarray) -> np.ndarray:
    """Per-subcarrier h_k^H w_k with w_k from the predicted CSI."""
    if true_csi.shape != pred_csi.shape or true_csi.ndim != 2:
        raise ValueError("expected matching [K][Nt] tensors")
    norms = np.linalg.norm(pred_csi, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cannot build a precoder from a zero channel")
    w = pred_csi / norms[:, None]
    return np.sum(np.conj(true_csi) * w, axis=1)


def spectral_efficiency(true_csi: np.ndarray, pred_csi: np.ndarray, link: LinkConfig) -> float:
    """Per-subcarrier mean of log2(1 + |h_k^H w_k|^2 / sigma_n^2)."""
    gains = np.abs(_effective_gains(true_csi, pred_csi)) ** 2
    return float(np.mean(np.log2(1.0 + gains / link.noise_power)))


def ber_4qam(
    true_csi: np.ndarray,
    pred_csi: np.ndarray,
    link: LinkConfig,
    rng: np.random.Generator,
) -> float:
    """Monte Carlo BER of Gray-mapped 4-QAM through y = h^H w x + n.

    Detection is coherent with the true effective scalar channel known
    at the receiver; only its phase matters for the Gray decision.
    """
    if link.symbols_per_subcarrier < 10_000:
        raise ValueError("BER runs need >= 10^4 symbols per subcarrier")
    g = _effective_gains(true_csi, pred_csi)
    k = g.shape[0]
    n = link.symbols_per_subcarrier
    bits = rng.integers(0, 2, size=(k, n, 2))
    symbols = ((1 - 2 * bits[:, :, 0]) + 1j * (1 - 2 * bits[:, :, 1])) / np.sqrt(2.0)
    scale = np.sqrt(link.noise_power / 2.0)
    noise = scale * (rng.standard_normal((k, n)) + 1j * rng.standard_normal((k, n)))
    y = g[:, None] * symbols + noise
    mag = np.abs(g)
    phase = np.where(mag > 0.0, np.conj(g) / np.where(mag > 0.0, mag, 1.0), 1.0)
    z = y * phase[:, None]
    wrong = (z.real < 0) != bits[:, :, 0].astype(bool)
    wrong2 = (z.imag < 0) != bits[:, :, 1].astype(bool)
    return float(wrong.sum() + wrong2.sum()) / (2.0 * k * n)


# ---------------------------------------------------------------------------
# Report container


REPORT_HEADER = (
    "suite\tpredictor\tcondition\tnmse\tse_bps_hz\tber\tparams"
    "\ttrain_ms_batch\tinfer_ms_batch\tdataset_hash\tseed"
)


@dataclass(frozen=True)
class EvalRow:
    suite: str
    predictor: str
    condition: str
    nmse: float
    se_bps_hz: float
    ber: float
    params: int
    train_ms_batch: float
    infer_ms_batch: float
    dataset_hash: str
    seed: int

    def to_line(self) -> str:
        return "\t".join(
            [
                self.suite,
                self.predictor,
                self.condition,
                repr(self.nmse),
                repr(self.se_bps_hz),
                repr(self.ber),
                str(self.params),
                repr(self.train_ms_batch),
                repr(self.infer_ms_batch),
                self.dataset_hash,
                str(self.seed),
            ]
        )


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def to_text(self) -> str:
        return "\n".join([REPORT_HEADER] + [r.to_line() for r in self.rows]) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    def write_columns(self, path) -> None:
        """Columnar dump: one tab-separated line per report column."""
        names = REPORT_HEADER.split("\t")
        lines = [self.to_text().splitlines()[i + 1].split("\t") for i in range(len(self.rows))]
        with open(path, "w") as fh:
            for j, name in enumerate(names):
                fh.write("\t".join([name] + [row[j] for row in lines]) + "\n")


def read_report(path) -> EvalReport:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        raise ValueError(f"{path}: not a report file")
    rows = []
    for line in lines[1:]:
        f = line.split("\t")
        rows.append(
            EvalRow(
                f[0], f[1], f[2],
                float(f[3]), float(f[4]), float(f[5]),
                int(f[6]), float(f[7]), float(f[8]),
                f[9], int(f[10]),
            )
        )
    return EvalReport(rows)


# ---------------------------------------------------------------------------
# Suites


def _predict_fn(predictor):
    return predictor.predict if hasattr(predictor, "predict") else predictor


def evaluate_dataset(
    predictor,
    dataset: Dataset,
    link: LinkConfig,
    rng: np.random.Generator,
    uplink_snr_db: float | None = None,
    ber_samples: int = 50,
) -> tuple[float, float, float]:
    """Mean (NMSE, SE, BER) of one predictor over a dataset.

    uplink_snr_db corrupts each history before prediction (the target
    stays clean). BER is averaged over the first ber_samples samples to
    bound the Monte Carlo cost; pass 0 to skip it (reported as nan).
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    predict = _predict_fn(predictor)
    nmses = []
    ses = []
    bers = []
    for i, sample in enumerate(dataset.samples):
        up = sample.uplink
        if uplink_snr_db is not None:
            up = add_noise(sample, uplink_snr_db, rng).uplink
        pred = predict(up)
        nmses.append(nmse_metric(pred, sample.downlink))
        ses.append(spectral_efficiency(sample.downlink[0], pred[0], link))
        if i < ber_samples:
            bers.append(ber_4qam(sample.downlink[0], pred[0], link, rng))
    ber = float(np.mean(bers)) if bers else float("nan")
    return float(np.mean(nmses)), float(np.mean(ses)), ber


def run_suite(
    suite: str,
    predictors: dict,
    datasets: dict[str, Dataset],
    link: LinkConfig = LinkConfig(),
    seed: int = 0,
    snrs: list[float] | None = None,
    ber_samples: int = 50,
) -> EvalReport:
    """Evaluate every predictor under every suite condition.

    predictors maps id -> predictor (callable or object with .predict,
    optional .param_count); a None value marks a missing checkpoint and
    yields an absent row (nan metrics) while the suite continues. For
    noise_sweep, datasets must hold exactly one entry and snrs lists the
    test SNRs; other suites take one condition per dataset entry (label
    -> dataset), e.g. velocities, few-shot fractions, transfer targets.
    """
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")
    if suite == "noise_sweep":
        if snrs is None or len(datasets) != 1:
            raise ValueError("noise_sweep needs one dataset and a list of test SNRs")
        ds = next(iter(datasets.values()))
        conditions = [(f"snr={s:g}dB", ds, float(s)) for s in snrs]
    else:
        conditions = [(label, ds, None) for label, ds in datasets.items()]

    hashes = {label: content_hash(ds) for label, ds, _ in conditions}
    rows = []
    counter = 0
    for name, predictor in predictors.items():
        params = int(getattr(predictor, "param_count", 0) or 0)
        for label, ds, snr in conditions:
            counter += 1
            if predictor is None:
                nmse = se = ber = float("nan")
            else:
                rng = np.random.default_rng(np.random.SeedSequence((seed, counter)))
                nmse, se, ber = evaluate_dataset(
                    predictor, ds, link, rng, uplink_snr_db=snr, ber_samples=ber_samples
                )
            rows.append(
                EvalRow(
                    suite=suite,
                    predictor=name,
                    condition=label,
                    nmse=nmse,
                    se_bps_hz=se,
                    ber=ber,
                    params=params,
                    train_ms_batch=float("nan"),
                    infer_ms_batch=float("nan"),
                    dataset_hash=hashes[label],
                    seed=seed,
                )
            )
    return EvalReport(rows)


def timing_probe(predictor, batch, train_step=None, warmup=3, iters=20) -> tuple[float, float]:
    """Median wall-clock (train ms/batch, inference ms/batch).

    batch is a list of uplink tensors. train_step, when given, is a
    callable running one optimization step on the batch; predictors
    without training report 0.0 there.
    """
    if warmup < 3 or iters < 20:
        raise ValueError("need >= 3 warmup and >= 20 timed iterations")
    predict = _predict_fn(predictor)

    def run_inference():
        for up in batch:
            predict(up)

    infer_ms = _median_ms(run_inference, warmup, iters)
    train_ms = 0.0 if train_step is None else _median_ms(lambda: train_step(batch), warmup, iters)
    return train_ms, infer_ms


def _median_ms(fn, warmup: int, iters: int) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(iters):
        start = time.perf_counter()
        fn()
        times.append((time.perf_counter() - start) * 1e3)
    return float(np.median(times))


# ---------------------------------------------------------------------------
# Transfer-scenario presets


def umi_like(scenario: ScenarioConfig) -> ScenarioConfig:
    """Street-canyon variant: shorter delay spread, fewer but wider clusters."""
    return replace(
        scenario,
        clusters=19,
        delay_spread_s=0.3e-6,
        angle_spread_rad=float(np.deg2rad(15.0)),
    )


def carrier_shift(scenario: ScenarioConfig, uplink_center_hz: float = 4.9e9) -> ScenarioConfig:
    """Same grid at a different carrier for cross-frequency transfer."""
    return replace(scenario, uplink_center_hz=uplink_center_hz)
