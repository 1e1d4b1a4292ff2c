"""End-to-end tests for the command line interface."""

import numpy as np
import pytest

from chanpred import cli, datasets, evaluation, training

TINY_CFG = """
# tiny profile for fast end-to-end runs
subcarriers=4
history=8
horizon=2
clusters=3
paths_per_cluster=2
n_h=2
n_v=1
polarizations=1
train_samples=12
val_samples=6
test_samples=4
test_velocities_kmh=10,40
predictor=rnn
batch_size=8
epochs=3
lr0=1e-3
lr_decay_every=2
symbols=10000
ber_samples=2
"""


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    path.write_text(TINY_CFG)
    return str(path)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, cfg_file):
    """One generated+trained run shared by the read-only tests."""
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["generate", "--config", cfg_file, "--out", str(out), "--seed", "5"]) == 0
    assert cli.main(["train", "--config", cfg_file, "--out", str(out), "--seed", "5"]) == 0
    return out


class TestConfigResolution:
    def test_parse_config_file(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("subcarriers = 24  # trailing comment\n\n# full comment\nepochs=7\n")
        assert cli.parse_config_file(path) == {"subcarriers": "24", "epochs": "7"}

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("subcarriers 24\n")
        with pytest.raises(cli.ConfigError):
            cli.parse_config_file(path)

    def test_unknown_key_exit_code(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("subcarier=4\n")
        code = cli.main(["generate", "--config", str(path), "--out", str(tmp_path), "--seed", "0"])
        assert code == cli.EXIT_CONFIG

    def test_flag_overrides_file(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("predictor=cnn\n")
        args = cli._build_parser().parse_args(
            ["train", "--config", str(path), "--out", "x", "--predictor", "gru"]
        )
        run = cli.resolve("train", args)
        assert dict(run.options)["predictor"] == "gru"

    def test_desk_scale_preset(self):
        args = cli._build_parser().parse_args(["generate", "--out", "x", "--desk-scale"])
        run = cli.resolve("generate", args)
        options = dict(run.options)
        assert options["subcarriers"] == "12"
        assert options["feature"] == "128"
        scenario = cli.scenario_from_options(options, 0)
        assert scenario.nt == 8
        assert scenario.subcarriers == 12

    def test_digest_covers_options(self):
        args = cli._build_parser().parse_args(["generate", "--out", "x"])
        base = cli.resolve("generate", args)
        args2 = cli._build_parser().parse_args(["generate", "--out", "x", "--duplex", "fdd"])
        other = cli.resolve("generate", args2)
        assert base.digest != other.digest

    def test_bad_value_exit_code(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("subcarriers=banana\n")
        code = cli.main(["generate", "--config", str(path), "--out", str(tmp_path), "--seed", "0"])
        assert code == cli.EXIT_CONFIG


class TestGenerate:
    def test_artifacts_and_hashes(self, run_dir):
        names = {p.name for p in run_dir.glob("*.cpds")}
        assert names == {"train.cpds", "val.cpds", "test_v010.cpds", "test_v040.cpds"}
        ds = datasets.read_dataset(run_dir / "test_v040.cpds")
        assert len(ds) == 4
        v = ds.scenario.vmin_mps * 3.6
        assert ds.scenario.vmax_mps == ds.scenario.vmin_mps
        assert abs(v - 40.0) < 1e-9

    def test_manifest_lists_artifacts(self, run_dir):
        text = (run_dir / "generate.manifest.txt").read_text()
        assert "command=generate" in text
        assert "seed=5" in text
        assert "config_hash=" in text
        for name in ("train.cpds", "val.cpds", "test_v010.cpds", "test_v040.cpds"):
            assert f"artifact={name}" in text

    def test_regenerate_identical_bytes(self, cfg_file, run_dir, tmp_path):
        assert cli.main(["generate", "--config", cfg_file, "--out", str(tmp_path), "--seed", "5"]) == 0
        for name in ("train.cpds", "test_v010.cpds"):
            assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes()

    def test_printed_hashes_match_files(self, cfg_file, tmp_path, capsys):
        cli.main(["generate", "--config", cfg_file, "--out", str(tmp_path), "--seed", "9"])
        for line in capsys.readouterr().out.strip().splitlines():
            name, digest = line.split("\t")
            assert datasets.dataset_hash(tmp_path / name) == digest

    def test_fdd_flag(self, cfg_file, tmp_path):
        assert cli.main(["generate", "--config", cfg_file, "--out", str(tmp_path),
                         "--seed", "3", "--duplex", "fdd"]) == 0
        ds = datasets.read_dataset(tmp_path / "val.cpds")
        assert ds.scenario.duplex == "fdd"
        assert ds.scenario.downlink_center_hz > ds.scenario.uplink_center_hz


class TestTrain:
    def test_checkpoint_written(self, run_dir):
        assert (run_dir / "rnn.ckpt").exists()
        meta = (run_dir / "rnn.ckpt.meta.txt").read_text()
        assert "seed=5" in meta
        ckpt = training.load_checkpoint(run_dir / "rnn.ckpt")
        assert np.isfinite(ckpt.val_loss)

    def test_missing_dataset_io_error(self, cfg_file, tmp_path):
        code = cli.main(["train", "--config", cfg_file, "--out", str(tmp_path), "--seed", "0"])
        assert code == cli.EXIT_IO

    def test_untrainable_predictor_rejected(self, cfg_file, run_dir):
        code = cli.main(["train", "--config", cfg_file, "--out", str(run_dir),
                         "--seed", "5", "--predictor", "prony"])
        assert code == cli.EXIT_CONFIG

    def test_few_shot_checkpoint_name(self, cfg_file, run_dir):
        code = cli.main(["train", "--config", cfg_file, "--out", str(run_dir),
                         "--seed", "5", "--few-shot-frac", "0.5"])
        assert code == 0
        assert (run_dir / "rnn_fs0.5.ckpt").exists()

    def test_resume_from_checkpoint(self, cfg_file, run_dir, tmp_path):
        ckpt = str(run_dir / "rnn.ckpt")
        code = cli.main(["train", "--config", cfg_file, "--out", str(run_dir),
                         "--seed", "6", "--resume", ckpt])
        assert code == 0
        code = cli.main(["train", "--config", cfg_file, "--out", str(run_dir),
                         "--seed", "6", "--resume", str(tmp_path / "nope.ckpt")])
        assert code == cli.EXIT_IO


class TestEvaluate:
    def test_velocity_sweep_report(self, cfg_file, run_dir):
        code = cli.main(["evaluate", "--config", cfg_file, "--out", str(run_dir),
                         "--seed", "5", "--predictor", "none,prony,rnn",
                         "--suite", "velocity_sweep"])
        assert code == 0
        report = evaluation.read_report(run_dir / "report_velocity_sweep.tsv")
        assert len(report.rows) == 6
        assert {r.predictor for r in report.rows} == {"none", "prony", "rnn"}
        assert {r.condition for r in report.rows} == {"v=10kmh", "v=40kmh"}
        assert all(np.isfinite(r.nmse) for r in report.rows)

    def test_rerun_identical_bytes(self, cfg_file, run_dir):
        argv = ["evaluate", "--config", cfg_file, "--out", str(run_dir),
                "--seed", "5", "--predictor", "none,rnn", "--suite", "velocity_sweep"]
        assert cli.main(argv) == 0
        first = (run_dir / "report_velocity_sweep.tsv").read_bytes()
        assert cli.main(argv) == 0
        assert (run_dir / "report_velocity_sweep.tsv").read_bytes() == first

    def test_missing_checkpoint_flagged(self, cfg_file, run_dir, capsys):
        code = cli.main(["evaluate", "--config", cfg_file, "--out", str(run_dir),
                         "--seed", "5", "--predictor", "none,gru",
                         "--suite", "velocity_sweep"])
        assert code == cli.EXIT_IO
        assert "gru.ckpt" in capsys.readouterr().err
        report = evaluation.read_report(run_dir / "report_velocity_sweep.tsv")
        gru_rows = [r for r in report.rows if r.predictor == "gru"]
        assert gru_rows and all(np.isnan(r.nmse) for r in gru_rows)

    def test_noise_sweep_needs_snrs(self, cfg_file, run_dir):
        code = cli.main(["evaluate", "--config", cfg_file, "--out", str(run_dir),
                         "--seed", "5", "--predictor", "none", "--suite", "noise_sweep"])
        assert code == cli.EXIT_CONFIG

    def test_noise_sweep_rows(self, cfg_file, run_dir):
        code = cli.main(["evaluate", "--config", cfg_file, "--out", str(run_dir),
                         "--seed", "5", "--predictor", "none", "--suite", "noise_sweep",
                         "--snr", "0,20"])
        assert code == 0
        report = evaluation.read_report(run_dir / "report_noise_sweep.tsv")
        assert [r.condition for r in report.rows] == ["snr=0dB", "snr=20dB"]

    def test_few_shot_suite(self, cfg_file, run_dir):
        code = cli.main(["evaluate", "--config", cfg_file, "--out", str(run_dir),
                         "--seed", "5", "--predictor", "rnn", "--suite", "few_shot"])
        assert code == 0
        report = evaluation.read_report(run_dir / "report_few_shot.tsv")
        assert {r.condition for r in report.rows} == {"frac=0.5", "frac=1"}

    def test_missing_config_file(self, run_dir):
        code = cli.main(["evaluate", "--out", str(run_dir), "--seed", "5",
                         "--predictor", "none", "--suite", "velocity_sweep",
                         "--config", "/nonexistent.cfg"])
        assert code == cli.EXIT_IO

    def test_unknown_suite_rejected_by_parser(self, run_dir):
        with pytest.raises(SystemExit):
            cli.main(["evaluate", "--out", str(run_dir), "--suite", "bogus"])


class TestReport:
    def test_empty_directory_fails(self, tmp_path):
        assert cli.main(["report", "--out", str(tmp_path), "--seed", "0"]) == cli.EXIT_IO

    def test_figures_written(self, cfg_file, run_dir):
        assert cli.main(["report", "--out", str(run_dir), "--seed", "5"]) == 0
        fig = (run_dir / "fig_velocity_nmse.tsv").read_text().splitlines()
        assert fig[0].startswith("# config_hash=")
        assert fig[1] == "velocity_kmh\tpredictor\tnmse\tse_bps_hz\tber"
        xs = [line.split("\t")[0] for line in fig[2:]]
        assert xs == sorted(xs, key=float)
        assert (run_dir / "fig_snr_nmse.tsv").exists()
        assert (run_dir / "fig_fewshot_nmse.tsv").exists()

    def test_rerun_identical_bytes(self, run_dir):
        assert cli.main(["report", "--out", str(run_dir), "--seed", "5"]) == 0
        first = (run_dir / "fig_velocity_nmse.tsv").read_bytes()
        assert cli.main(["report", "--out", str(run_dir), "--seed", "5"]) == 0
        assert (run_dir / "fig_velocity_nmse.tsv").read_bytes() == first

    def test_manifest(self, run_dir):
        cli.main(["report", "--out", str(run_dir), "--seed", "5"])
        text = (run_dir / "report.manifest.txt").read_text()
        assert "command=report" in text
        assert "artifact=fig_velocity_nmse.tsv" in text
