import csv

import pytest

from adhfr.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, OUTPUT_ENV, run
from adhfr.checkpoint import load_checkpoint

TINY = ["--set", "image_size=36", "--set", "crop_size=32", "--set", "gen_downsample=1"]


def test_unknown_subcommand_is_usage_error(capsys):
    assert run(["frobnicate"]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_missing_subcommand_is_usage_error():
    assert run([]) == EXIT_USAGE


def test_help_exits_cleanly():
    assert run(["--help"]) == EXIT_OK


def test_synth_manifest_rows(tmp_path):
    out = tmp_path / "data"
    assert run(["synth", "--identities", "10", "--vis", "2", "--nir", "5", "--out", str(out)] + TINY) == EXIT_OK
    with open(out / "manifest.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 70
    assert sum(r["modality"] == "NIR" for r in rows) == 50


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert run(["synth", "--identities", "2", "--vis", "1", "--nir", "1"] + TINY) == EXIT_OK
    assert (tmp_path / "env" / "manifest.csv").exists()


def test_bad_config_is_data_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("lambda1 = abc\n")
    assert run(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_DATA
    assert run(["synth", "--set", "nonsense=1", "--out", str(tmp_path)]) == EXIT_DATA


def test_missing_dataset_is_data_error(tmp_path):
    assert run(["train-hal", "--data", str(tmp_path / "none"), "--out", str(tmp_path)]) == EXIT_DATA


def test_gradcheck_passes(capsys):
    assert run(["gradcheck", "--points", "1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "conv2d" in out and "loss_final" in out and "FAIL" not in out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> train-hal -> train-feat -> eval on a tiny dataset."""
    root = tmp_path_factory.mktemp("run")
    short = TINY + ["--set", "hal_iterations=2", "--set", "pretrain_iterations=2", "--set", "feat_iterations=2",
                    "--set", "identities=4", "--set", "folds=2"]
    assert run(["synth", "--identities", "4", "--vis", "4", "--nir", "4", "--out", str(root / "data")] + TINY) == 0
    assert run(["train-hal", "--data", str(root / "data"), "--fold", "0", "--out", str(root / "hal")] + short) == 0
    for preset, extra in (("adfl", []), ("hallucination+adfl", ["--hal", str(root / "hal" / "hallucination.ckpt")])):
        d = root / preset
        assert run(["train-feat", "--data", str(root / "data"), "--out", str(d), "--set", f"preset={preset}"]
                   + short + extra) == 0
        assert run(["eval", "--data", str(root / "data"), "--features", str(d / "features.ckpt"), "--out", str(d),
                    "--set", f"preset={preset}"] + short + extra) == 0
    return root, short


def test_pipeline_artifacts(pipeline):
    root, _ = pipeline
    assert load_checkpoint(root / "hal" / "hallucination.ckpt")
    assert (root / "hal" / "hal_losses.csv").read_text().startswith("iteration,d_loss")
    for preset in ("adfl", "hallucination+adfl"):
        d = root / preset
        for name in ("features.ckpt", "feat_losses.csv", "report.csv", "roc.csv", "roc.svg", "features.csv"):
            assert (d / name).exists(), name
        header = (d / "features.csv").read_text().splitlines()[0].split(",")
        assert header[:2] == ["identity_id", "modality"] and len(header) == 2 + 256


def test_preset_requires_matching_hal_flag(pipeline, tmp_path):
    root, short = pipeline
    code = run(["train-feat", "--data", str(root / "data"), "--out", str(tmp_path), "--set",
                "preset=hallucination+adfl"] + short)
    assert code == EXIT_DATA


def test_commands_are_idempotent(pipeline, tmp_path):
    root, short = pipeline
    assert run(["train-feat", "--data", str(root / "data"), "--out", str(tmp_path), "--set", "preset=adfl"]
               + short) == 0
    for name in ("features.ckpt", "feat_losses.csv"):
        assert (tmp_path / name).read_bytes() == (root / "adfl" / name).read_bytes()


def test_hallucinate_writes_grid(pipeline, tmp_path):
    root, short = pipeline
    assert run(["hallucinate", "--data", str(root / "data"), "--hal", str(root / "hal" / "hallucination.ckpt"),
                "--out", str(tmp_path), "--limit", "3"] + short) == 0
    assert (tmp_path / "hallucinated_grid.ppm").read_bytes()[:2] == b"P6"
    assert len(list(tmp_path.glob("hal_*.ppm"))) == 3


def test_report_table(pipeline, tmp_path, capsys):
    root, _ = pipeline
    out = tmp_path / "table.csv"
    assert run(["report", str(root / "adfl"), str(root / "hallucination+adfl"), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "hallucination+adfl" in text and "rank1" in text
    rows = list(csv.reader(out.open()))
    assert rows[0][:3] == ["preset", "rank1_mean", "rank1_std"]
    assert [r[0] for r in rows[1:]] == ["adfl", "hallucination+adfl"]
