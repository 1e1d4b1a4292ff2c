"""Command line front end: generate, train, evaluate, report.

All commands operate on one output directory (--out). `generate`
writes the dataset files, `train` fits one predictor and writes a
checkpoint, `evaluate` runs a metric suite over the test sets and
writes a TSV report, `report` merges the reports in the directory
into per-figure data files. Every command writes a manifest
(<command>.manifest.txt) listing its artifacts together with the
resolved config hash and seed, so a directory documents itself.

Options resolve in fixed precedence: built-in defaults, then the
--desk-scale preset, then the --config key=value file, then explicit
flags. The config file holds one `key=value` per line; `#` starts a
comment. Unknown keys are rejected.

Exit codes: 0 success, 2 config error, 3 I/O error (missing or
malformed inputs), 4 numeric divergence during training.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import chansim, datasets, evaluation, predictors, training
from .archive import load_archive

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4

KMH = 1.0 / 3.6


class ConfigError(ValueError):
    """Bad option value, unknown key, or inconsistent request."""


class IoFailure(RuntimeError):
    """Missing or malformed input file."""


_DEFAULTS = {
    # scenario
    "uplink_center_hz": "2.4e9",
    "duplex": chansim.TDD,
    "subcarriers": "48",
    "pilot_df_hz": "180e3",
    "history": "16",
    "horizon": "4",
    "pilot_dt_s": "5e-4",
    "clusters": "21",
    "paths_per_cluster": "20",
    "vmin_kmh": "10",
    "vmax_kmh": "100",
    "delay_spread_s": "1e-6",
    "angle_spread_deg": "10",
    "n_h": "4",
    "n_v": "4",
    "d_h_m": "0.0625",
    "d_v_m": "0.0625",
    "polarizations": "2",
    # generation
    "train_samples": "8000",
    "val_samples": "1000",
    "test_samples": "1000",
    "test_velocities_kmh": "10,20,30,40,50,60,70,80,90,100",
    "extra_tests": "",
    # training
    "predictor": "llm",
    "batch_size": "512",
    "epochs": "500",
    "lr0": "1e-3",
    "lr_decay_every": "150",
    "noise_lo_db": "",
    "noise_hi_db": "",
    "few_shot_frac": "1",
    "feature": "768",
    "layers": "6",
    "heads": "12",
    "patch": "4",
    "weights": "",
    "resume": "",
    # evaluation
    "suite": "velocity_sweep",
    "link_snr_db": "10",
    "symbols": "10000",
    "snrs": "",
    "ber_samples": "50",
    "test_file": "",
}

# reduced-size profile for laptop-class end-to-end runs
_DESK = {
    "subcarriers": "12",
    "n_h": "4",
    "n_v": "2",
    "polarizations": "1",
    "train_samples": "2000",
    "val_samples": "400",
    "test_samples": "125",
    "test_velocities_kmh": "10,40,70,100",
    "feature": "128",
    "layers": "2",
    "heads": "4",
    "epochs": "100",
    "lr_decay_every": "40",
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved invocation: command, output dir, seed, options."""

    command: str
    out: str
    seed: int
    options: tuple[tuple[str, str], ...]

    @property
    def digest(self) -> str:
        return hashlib.sha256(repr(self).encode()).hexdigest()[:16]


def parse_config_file(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read config file {path}: {exc}") from exc
    options = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        options[key.strip()] = value.strip()
    return options


def resolve(command: str, args: argparse.Namespace) -> RunConfig:
    options = dict(_DEFAULTS)
    if getattr(args, "desk_scale", False):
        options.update(_DESK)
    if args.config:
        file_opts = parse_config_file(args.config)
        unknown = sorted(set(file_opts) - set(_DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        options.update(file_opts)
    flag_map = {
        "predictor": getattr(args, "predictor", None),
        "suite": getattr(args, "suite", None),
        "few_shot_frac": getattr(args, "few_shot_frac", None),
        "snrs": getattr(args, "snr", None),
        "duplex": getattr(args, "duplex", None),
        "weights": getattr(args, "weights", None),
        "resume": getattr(args, "resume", None),
    }
    for key, value in flag_map.items():
        if value is not None:
            options[key] = str(value)
    return RunConfig(
        command=command,
        out=args.out,
        seed=int(args.seed),
        options=tuple(sorted(options.items())),
    )


def _int(options, key) -> int:
    try:
        return int(options[key])
    except ValueError as exc:
        raise ConfigError(f"{key} must be an integer, got {options[key]!r}") from exc


def _float(options, key) -> float:
    try:
        return float(options[key])
    except ValueError as exc:
        raise ConfigError(f"{key} must be a number, got {options[key]!r}") from exc


def _float_list(options, key) -> list[float]:
    raw = [s.strip() for s in options[key].split(",") if s.strip()]
    try:
        return [float(s) for s in raw]
    except ValueError as exc:
        raise ConfigError(f"{key} must be comma-separated numbers, got {options[key]!r}") from exc


def scenario_from_options(options: dict[str, str], seed: int) -> chansim.ScenarioConfig:
    subcarriers = _int(options, "subcarriers")
    pilot_df = _float(options, "pilot_df_hz")
    geometry = chansim.ArrayGeometry(
        n_h=_int(options, "n_h"),
        n_v=_int(options, "n_v"),
        d_h_m=_float(options, "d_h_m"),
        d_v_m=_float(options, "d_v_m"),
        polarizations=_int(options, "polarizations"),
    )
    try:
        return chansim.ScenarioConfig(
            uplink_center_hz=_float(options, "uplink_center_hz"),
            duplex=options["duplex"],
            bandwidth_hz=subcarriers * pilot_df,
            subcarriers=subcarriers,
            history=_int(options, "history"),
            horizon=_int(options, "horizon"),
            pilot_dt_s=_float(options, "pilot_dt_s"),
            pilot_df_hz=pilot_df,
            clusters=_int(options, "clusters"),
            paths_per_cluster=_int(options, "paths_per_cluster"),
            vmin_mps=_float(options, "vmin_kmh") * KMH,
            vmax_mps=_float(options, "vmax_kmh") * KMH,
            delay_spread_s=_float(options, "delay_spread_s"),
            angle_spread_rad=float(np.deg2rad(_float(options, "angle_spread_deg"))),
            geometry=geometry,
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _write_manifest(run: RunConfig, artifacts: list[str]) -> None:
    path = Path(run.out) / f"{run.command}.manifest.txt"
    lines = [f"command={run.command}", f"config_hash={run.digest}", f"seed={run.seed}"]
    lines += [f"artifact={name}" for name in sorted(artifacts)]
    path.write_text("\n".join(lines) + "\n")


def _read_dataset(path: Path) -> chansim.Dataset:
    if not path.exists():
        raise IoFailure(f"missing dataset {path}")
    try:
        return datasets.read_dataset(path)
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot read dataset {path}: {exc}") from exc


def _velocity_label(scenario: chansim.ScenarioConfig) -> str:
    return f"v={scenario.vmin_mps / KMH:g}kmh"


def cmd_generate(run: RunConfig) -> int:
    options = dict(run.options)
    base = scenario_from_options(options, run.seed)
    velocities = _float_list(options, "test_velocities_kmh")
    if not velocities:
        raise ConfigError("test_velocities_kmh must list at least one velocity")
    extras = [s.strip() for s in options["extra_tests"].split(",") if s.strip()]
    bad = sorted(set(extras) - {"umi", "carrier"})
    if bad:
        raise ConfigError(f"extra_tests entries must be umi or carrier, got {bad}")

    plan = [
        ("train.cpds", base, _int(options, "train_samples"), run.seed),
        ("val.cpds", base, _int(options, "val_samples"), run.seed + 1),
    ]
    per_velocity = _int(options, "test_samples")
    for i, v in enumerate(velocities):
        pinned = replace(base, vmin_mps=v * KMH, vmax_mps=v * KMH)
        plan.append((f"test_v{int(round(v)):03d}.cpds", pinned, per_velocity, run.seed + 10 + i))
    if "umi" in extras:
        plan.append(("test_umi.cpds", evaluation.umi_like(base), per_velocity, run.seed + 100))
    if "carrier" in extras:
        plan.append(("test_carrier.cpds", evaluation.carrier_shift(base), per_velocity, run.seed + 101))

    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for name, scenario, count, seed in plan:
        if count < 1:
            raise ConfigError(f"sample count for {name} must be positive")
        dataset = chansim.build_dataset(scenario, count, seed=seed)
        datasets.write_dataset(dataset, out / name)
        print(f"{name}\t{datasets.dataset_hash(out / name)}")
        artifacts.append(name)
    _write_manifest(run, artifacts)
    return EXIT_OK


def _noise_range(options) -> tuple[float, float] | None:
    lo, hi = options["noise_lo_db"], options["noise_hi_db"]
    if not lo and not hi:
        return None
    if not lo or not hi:
        raise ConfigError("noise_lo_db and noise_hi_db must be set together")
    return (_float(options, "noise_lo_db"), _float(options, "noise_hi_db"))


def _build_trainable(name: str, scenario, seed: int, options) -> predictors.Predictor:
    if name not in predictors.PREDICTOR_IDS:
        raise ConfigError(f"unknown predictor {name!r}; expected one of {predictors.PREDICTOR_IDS}")
    kwargs = {}
    if name == "llm":
        kwargs = dict(
            feature=_int(options, "feature"),
            layers=_int(options, "layers"),
            heads=_int(options, "heads"),
            patch=_int(options, "patch"),
        )
        weights = options["weights"]
        if weights:
            if not Path(weights).exists():
                raise IoFailure(f"missing backbone archive {weights}")
            kwargs["backbone_weights"] = load_archive(weights)
    try:
        return predictors.build_predictor(name, scenario, seed, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(run: RunConfig) -> int:
    options = dict(run.options)
    out = Path(run.out)
    train_ds = _read_dataset(out / "train.cpds")
    val_ds = _read_dataset(out / "val.cpds")
    name = options["predictor"]
    if "," in name:
        raise ConfigError("train takes a single predictor")
    predictor = _build_trainable(name, train_ds.scenario, run.seed, options)
    if not predictor.trainable:
        raise ConfigError(f"predictor {name!r} has no trainable parameters")

    fraction = _float(options, "few_shot_frac")
    config = training.TrainConfig(
        batch_size=_int(options, "batch_size"),
        epochs=_int(options, "epochs"),
        lr0=_float(options, "lr0"),
        lr_decay_every=_int(options, "lr_decay_every"),
        noise_snr_db=_noise_range(options),
        few_shot_fraction=fraction,
        seed=run.seed,
    )
    fit_set = train_ds
    if fraction < 1.0:
        fit_set = training.few_shot_subset(train_ds, fraction, run.seed)
    resume = options["resume"]
    if resume:
        if not Path(resume).exists():
            raise IoFailure(f"missing checkpoint {resume}")
        training.apply_checkpoint(predictor.model, training.load_checkpoint(resume))

    stem = name if fraction >= 1.0 else f"{name}_fs{fraction:g}"
    try:
        best = training.train(predictor.model, fit_set, val_ds, config)
    except training.DivergenceError as exc:
        training.save_checkpoint(exc.checkpoint, out / f"{stem}.diverged.ckpt")
        raise
    training.save_checkpoint(best, out / f"{stem}.ckpt")
    print(
        f"checkpoint={stem}.ckpt best_epoch={best.epoch} "
        f"val_nmse={best.val_loss!r} trainable_params={predictor.param_count}"
    )
    _write_manifest(run, [f"{stem}.ckpt", f"{stem}.ckpt.meta.txt"])
    return EXIT_OK


def _load_eval_predictor(name, stem, scenario, seed, options, out, missing):
    """Build one suite entry; None marks a missing checkpoint."""
    predictor = _build_trainable(name, scenario, seed, options)
    if not predictor.trainable:
        return predictor
    path = out / f"{stem}.ckpt"
    if not path.exists():
        missing.append(path.name)
        return None
    try:
        ckpt = training.load_checkpoint(path)
    except (OSError, ValueError, KeyError) as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        training.apply_checkpoint(predictor.model, ckpt)
    except ValueError as exc:
        raise ConfigError(f"checkpoint {path} does not match the requested model: {exc}") from exc
    return predictor


def _test_sets(out: Path) -> dict[str, chansim.Dataset]:
    found = {}
    for path in sorted(out.glob("test_v*.cpds")):
        ds = _read_dataset(path)
        found[_velocity_label(ds.scenario)] = ds
    if not found:
        raise IoFailure(f"no test_v*.cpds datasets in {out}")
    return found


def cmd_evaluate(run: RunConfig) -> int:
    options = dict(run.options)
    out = Path(run.out)
    suite = options["suite"]
    if suite not in evaluation.SUITES:
        raise ConfigError(f"unknown suite {suite!r}; expected one of {evaluation.SUITES}")
    names = [s.strip() for s in options["predictor"].split(",") if s.strip()]
    if not names:
        raise ConfigError("no predictors requested")
    link = evaluation.LinkConfig(
        snr_db=_float(options, "link_snr_db"),
        symbols_per_subcarrier=_int(options, "symbols"),
    )
    ber_samples = _int(options, "ber_samples")
    missing: list[str] = []

    if suite == "few_shot":
        report = _few_shot_report(run, options, out, names, link, ber_samples, missing)
    else:
        if suite == "velocity_sweep":
            suite_sets = _test_sets(out)
        elif suite == "noise_sweep":
            ds = _read_dataset(_default_test_file(out, options))
            suite_sets = {_velocity_label(ds.scenario): ds}
        else:
            fname = "test_umi.cpds" if suite == "cross_scenario" else "test_carrier.cpds"
            ds = _read_dataset(out / fname)
            suite_sets = {fname.removeprefix("test_").removesuffix(".cpds"): ds}
        scenario = next(iter(suite_sets.values())).scenario
        suite_preds = {
            name: _load_eval_predictor(name, name, scenario, run.seed, options, out, missing)
            for name in names
        }
        snrs = _float_list(options, "snrs") if suite == "noise_sweep" else None
        if suite == "noise_sweep" and not snrs:
            raise ConfigError("noise_sweep needs snrs (flag --snr or config key snrs)")
        report = evaluation.run_suite(
            suite, suite_preds, suite_sets, link=link, seed=run.seed,
            snrs=snrs, ber_samples=ber_samples,
        )

    report_name = f"report_{suite}.tsv"
    report.write(out / report_name)
    print(f"{report_name}\trows={len(report.rows)}")
    _write_manifest(run, [report_name])
    if missing:
        print(f"missing checkpoints: {', '.join(sorted(missing))}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _default_test_file(out: Path, options) -> Path:
    """The configured test_file, else the lowest-velocity test set."""
    chosen = options["test_file"]
    if chosen:
        return out / chosen
    paths = sorted(out.glob("test_v*.cpds"))
    if not paths:
        raise IoFailure(f"no test_v*.cpds datasets in {out}")
    return paths[0]


def _few_shot_report(run, options, out, names, link, ber_samples, missing):
    """One row per trained fraction of one predictor on one test set."""
    if len(names) != 1:
        raise ConfigError("few_shot evaluates a single predictor")
    name = names[0]
    test_ds = _read_dataset(_default_test_file(out, options))
    stems = {1.0: name}
    for path in sorted(out.glob(f"{name}_fs*.ckpt")):
        try:
            fraction = float(path.stem[len(name) + 3:])
        except ValueError:
            continue
        stems[fraction] = path.stem
    rows = []
    for i, fraction in enumerate(sorted(stems)):
        stem = stems[fraction]
        predictor = _load_eval_predictor(name, stem, test_ds.scenario, run.seed, options, out, missing)
        part = evaluation.run_suite(
            "few_shot", {stem: predictor}, {f"frac={fraction:g}": test_ds},
            link=link, seed=run.seed + i, ber_samples=ber_samples,
        )
        rows.extend(part.rows)
    return evaluation.EvalReport(tuple(rows))


_FIGURES = (
    (("velocity_sweep",), "fig_velocity_nmse.tsv", "velocity_kmh"),
    (("noise_sweep",), "fig_snr_nmse.tsv", "snr_db"),
    (("few_shot",), "fig_fewshot_nmse.tsv", "train_fraction"),
    (("cross_scenario", "cross_frequency"), "fig_transfer_nmse.tsv", "condition"),
)


def _condition_value(condition: str) -> str:
    value = condition.split("=", 1)[-1]
    while value and value[-1].isalpha():
        value = value[:-1]
    return value if value else condition


def cmd_report(run: RunConfig) -> int:
    out = Path(run.out)
    files = sorted(out.glob("report_*.tsv"))
    if not files:
        raise IoFailure(f"no report_*.tsv files in {out}; run evaluate first")
    rows = []
    for path in files:
        try:
            rows.extend(evaluation.read_report(path).rows)
        except (OSError, ValueError) as exc:
            raise IoFailure(f"cannot read report {path}: {exc}") from exc

    def sort_key(row):
        value = _condition_value(row.condition)
        try:
            return (0, float(value), row.condition, row.predictor)
        except ValueError:
            return (1, 0.0, row.condition, row.predictor)

    artifacts = []
    for suites, fig_name, x_label in _FIGURES:
        picked = [r for r in rows if r.suite in suites]
        if not picked:
            continue
        lines = [
            f"# config_hash={run.digest} seed={run.seed}",
            f"{x_label}\tpredictor\tnmse\tse_bps_hz\tber",
        ]
        for row in sorted(picked, key=sort_key):
            x = row.condition if x_label == "condition" else _condition_value(row.condition)
            lines.append(f"{x}\t{row.predictor}\t{row.nmse!r}\t{row.se_bps_hz!r}\t{row.ber!r}")
        (out / fig_name).write_text("\n".join(lines) + "\n")
        artifacts.append(fig_name)
        print(f"{fig_name}\trows={len(picked)}")
    _write_manifest(run, artifacts)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chanpred",
        description="Channel prediction benchmark: data generation, training, evaluation, reporting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key=value option file")
        p.add_argument("--seed", type=int, default=0, help="master seed for this run")
        p.add_argument("--out", required=True, help="run directory for all artifacts")
        p.add_argument("--desk-scale", action="store_true",
                       help="reduced-size preset (12 subcarriers, 8 antennas, small model)")

    gen = sub.add_parser("generate", help="write train/val/test datasets and print their hashes")
    common(gen)
    gen.add_argument("--duplex", choices=[chansim.TDD, chansim.FDD], default=None)

    tr = sub.add_parser("train", help="train one predictor, write best-validation checkpoint")
    common(tr)
    tr.add_argument("--predictor", default=None, help="one of " + ", ".join(predictors.PREDICTOR_IDS))
    tr.add_argument("--few-shot-frac", type=float, default=None, dest="few_shot_frac",
                    help="train on this fraction of the training set")
    tr.add_argument("--weights", default=None, help="pretrained backbone tensor archive")
    tr.add_argument("--resume", default=None, help="checkpoint to continue from")

    ev = sub.add_parser("evaluate", help="run a metric suite over the test sets")
    common(ev)
    ev.add_argument("--predictor", default=None, help="comma-separated predictor ids")
    ev.add_argument("--suite", choices=list(evaluation.SUITES), default=None)
    ev.add_argument("--snr", default=None, help="comma-separated test SNRs in dB (noise_sweep)")

    rp = sub.add_parser("report", help="merge reports into per-figure data files")
    common(rp)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        run = resolve(args.command, args)
        handler = {
            "generate": cmd_generate,
            "train": cmd_train,
            "evaluate": cmd_evaluate,
            "report": cmd_report,
        }[args.command]
        return handler(run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except training.DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except IoFailure as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
