"""Prediction dataset container and CPDS binary serialization.

File layout (all little-endian):

    magic              4 bytes  "CPDS"
    version            u16      (currently 1)
    uplink_center_hz   f64
    bandwidth_hz       f64
    subcarriers        u32
    history            u32
    horizon            u32
    pilot_dt_s         f64
    pilot_df_hz        f64
    clusters           u32
    paths_per_cluster  u32
    vmin_mps           f64
    vmax_mps           f64
    delay_spread_s     f64
    angle_spread_rad   f64
    n_h                u32
    n_v                u32
    d_h_m              f64
    d_v_m              f64
    polarizations      u32
    seed               u32
    duplex             u8       (0 = TDD, 1 = FDD)
    sample_count       u32

followed by `sample_count` records, each

    velocity           f32
    uplink             float32 interleaved (re, im), C-order [P][K][Nt]
    downlink           float32 interleaved (re, im), C-order [L][K][Nt]

Round-trips are bit-exact: writing a read dataset reproduces the file.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .chansim import FDD, TDD, ArrayGeometry, CsiSample, Dataset, ScenarioConfig

MAGIC = b"CPDS"
VERSION = 1

_SCENARIO_FMT = "<ddIIIddIIddddIIddII"
_HEAD_FMT = "<4sH" + _SCENARIO_FMT[1:] + "BI"


def _scenario_scalars(s: ScenarioConfig) -> tuple:
    g = s.geometry
    return (
        s.uplink_center_hz, s.bandwidth_hz,
        s.subcarriers, s.history, s.horizon,
        s.pilot_dt_s, s.pilot_df_hz,
        s.clusters, s.paths_per_cluster,
        s.vmin_mps, s.vmax_mps,
        s.delay_spread_s, s.angle_spread_rad,
        g.n_h, g.n_v, g.d_h_m, g.d_v_m, g.polarizations,
        s.seed,
    )


def config_hash(scenario: ScenarioConfig) -> str:
    """16-hex-char digest identifying a scenario (including duplex and seed)."""
    blob = struct.pack(_SCENARIO_FMT, *_scenario_scalars(scenario))
    blob += bytes([0 if scenario.duplex == TDD else 1])
    return hashlib.sha256(blob).hexdigest()[:16]


def _dataset_chunks(dataset: Dataset):
    s = dataset.scenario
    yield struct.pack(
        _HEAD_FMT,
        MAGIC,
        VERSION,
        *_scenario_scalars(s),
        0 if s.duplex == TDD else 1,
        len(dataset.samples),
    )
    for sample in dataset.samples:
        yield struct.pack("<f", sample.velocity_mps)
        yield np.ascontiguousarray(sample.uplink, dtype="<c8").tobytes()
        yield np.ascontiguousarray(sample.downlink, dtype="<c8").tobytes()


def write_dataset(dataset: Dataset, path) -> None:
    with open(path, "wb") as fh:
        for chunk in _dataset_chunks(dataset):
            fh.write(chunk)


def content_hash(dataset: Dataset) -> str:
    """16-hex-char digest of the serialized dataset.

    Equals dataset_hash() of the file write_dataset would produce, so
    in-memory and on-disk datasets tag report rows identically.
    """
    digest = hashlib.sha256()
    for chunk in _dataset_chunks(dataset):
        digest.update(chunk)
    return digest.hexdigest()[:16]


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    head_size = struct.calcsize(_HEAD_FMT)
    if len(raw) < head_size:
        raise ValueError(f"{path}: truncated header")
    fields = struct.unpack_from(_HEAD_FMT, raw)
    magic, version = fields[0], fields[1]
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    (
        uplink_center, bandwidth, k, p, l, dt, df, clusters, paths_per_cluster,
        vmin, vmax, delay_spread, angle_spread, n_h, n_v, d_h, d_v, npol, seed,
        duplex_code, count,
    ) = fields[2:]
    scenario = ScenarioConfig(
        uplink_center_hz=uplink_center,
        duplex=FDD if duplex_code else TDD,
        bandwidth_hz=bandwidth,
        subcarriers=k,
        history=p,
        horizon=l,
        pilot_dt_s=dt,
        pilot_df_hz=df,
        clusters=clusters,
        paths_per_cluster=paths_per_cluster,
        vmin_mps=vmin,
        vmax_mps=vmax,
        delay_spread_s=delay_spread,
        angle_spread_rad=angle_spread,
        geometry=ArrayGeometry(n_h=n_h, n_v=n_v, d_h_m=d_h, d_v_m=d_v, polarizations=npol),
        seed=seed,
    )
    nt = scenario.nt
    rec = 4 + 8 * (p * k * nt + l * k * nt)
    expect = head_size + count * rec
    if len(raw) != expect:
        raise ValueError(f"{path}: size {len(raw)} != expected {expect}")
    sid = config_hash(scenario)
    samples = []
    off = head_size
    for i in range(count):
        (velocity,) = struct.unpack_from("<f", raw, off)
        off += 4
        up = np.frombuffer(raw, dtype="<c8", count=p * k * nt, offset=off).reshape(p, k, nt)
        off += 8 * p * k * nt
        dn = np.frombuffer(raw, dtype="<c8", count=l * k * nt, offset=off).reshape(l, k, nt)
        off += 8 * l * k * nt
        samples.append(
            CsiSample(
                uplink=up,
                downlink=dn,
                velocity_mps=velocity,
                scenario_id=sid,
                polarization_id=i % npol,
            )
        )
    return Dataset(scenario=scenario, samples=samples)


def dataset_hash(path) -> str:
    """16-hex-char sha256 digest of the file bytes, used to tag report rows."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:16]
