import json

import pytest

from app.core.errors import ConfigurationError, IngestionError, StageError
from app.schemas.run import RunConfig, RunMode
from app.services import dataset_service, run_service
from app.services.checkpoint_service import read_classifier_manifest
from app.services.config_file_service import apply_overrides, read_config


@pytest.fixture
def tiny_config() -> RunConfig:
    return RunConfig(
        dataset="mnist",
        subset_size=24,
        classifier={
            "conv_blocks": [{"out_channels": 4}, {"out_channels": 8}],
            "fc_hidden": [16],
            "hyper": {"lr": 1e-2, "batch_size": 8, "max_epochs": 3, "patience": 2},
        },
        generator={"latent_dim": 8, "base_channels": 4},
        schedule={"steps": 3, "batch_size": 4, "eval_interval": 2, "eval_count": 8},
        evaluation={"samples_per_class": 2, "grid_columns": 2, "noise_count": 8},
    )


@pytest.fixture(autouse=True)
def synthetic_dataset(monkeypatch, image_set):
    def load(name, split="train", root=None):
        return image_set

    monkeypatch.setattr(dataset_service, "load_dataset", load)
    return image_set


def test_run_directory_contract(tiny_config, tmp_path):
    artifacts = run_service.run_experiment(tiny_config, out_dir=tmp_path / "run")
    run_dir = artifacts.run_dir
    for name in (
        "config.conf",
        "classifier/classifier.json",
        "classifier/classifier.pt",
        "generator.pt",
        "generator.json",
        "metrics.jsonl",
        "report.json",
        "grid.png",
        "run.log",
    ):
        assert (run_dir / name).exists(), name

    assert read_config(run_dir / "config.conf") == tiny_config
    records = [json.loads(line) for line in (run_dir / "metrics.jsonl").read_text().splitlines()]
    assert [record["step"] for record in records] == [1, 2, 3]
    assert records[1]["label_agreement"] is not None
    report = json.loads((run_dir / "report.json").read_text())
    assert report["sample_count"] == 2 * 4
    assert artifacts.report.sample_count == 8


def test_default_run_id_lives_under_runs_root(tiny_config, tmp_path):
    artifacts = run_service.run_experiment(tiny_config, root=tmp_path / "runs")
    assert artifacts.run_dir.parent == tmp_path / "runs"
    assert artifacts.run_id.startswith(run_service.make_run_id(tiny_config, "x")[:12])


def test_identical_configs_give_identical_reports(tiny_config, tmp_path):
    first = run_service.run_experiment(tiny_config, out_dir=tmp_path / "a")
    second = run_service.run_experiment(tiny_config, out_dir=tmp_path / "b")
    assert (first.run_dir / "report.json").read_text() == (
        second.run_dir / "report.json"
    ).read_text()


def test_non_empty_run_directory_is_rejected(tiny_config, tmp_path):
    occupied = tmp_path / "occupied"
    occupied.mkdir()
    (occupied / "notes.txt").write_text("keep me")
    with pytest.raises(ConfigurationError):
        run_service.run_experiment(tiny_config, out_dir=occupied)


def test_reconstruct_run(tiny_config, tmp_path):
    config = apply_overrides(tiny_config, {"mode": "reconstruct"})
    artifacts = run_service.run_experiment(config, out_dir=tmp_path / "rec")
    manifest = json.loads((artifacts.run_dir / "generator.json").read_text())
    assert manifest["objective"] == RunMode.RECONSTRUCT.value
    first = json.loads((artifacts.run_dir / "metrics.jsonl").read_text().splitlines()[0])
    assert first["objective"] == "reconstruct"


def test_referenced_classifier_is_copied(tiny_config, tmp_path):
    source = run_service.train_classifier_run(tiny_config, out_dir=tmp_path / "clf")
    config = apply_overrides(tiny_config, {"classifier_ref": str(source.run_dir)})
    artifacts = run_service.run_experiment(config, out_dir=tmp_path / "inv")
    original = read_classifier_manifest(source.classifier_dir)
    copied = read_classifier_manifest(artifacts.classifier_dir)
    assert copied.checksum == original.checksum


def test_mismatched_classifier_reference(tiny_config, tmp_path):
    source = run_service.train_classifier_run(tiny_config, out_dir=tmp_path / "clf")
    config = apply_overrides(
        tiny_config, {"classifier_ref": str(source.run_dir), "subset_size": 12}
    )
    with pytest.raises(ConfigurationError) as excinfo:
        run_service.run_experiment(config, out_dir=tmp_path / "inv")
    assert excinfo.value.stage == "reuse-classifier"
    assert "subset_size" in str(excinfo.value)


def test_stage_error_keeps_partial_artifacts(tiny_config, tmp_path, monkeypatch):
    def broken(name, split="train", root=None):
        raise IngestionError(f"Could not read dataset {name} at /nowhere")

    monkeypatch.setattr(dataset_service, "load_dataset", broken)
    run_dir = tmp_path / "broken"
    with pytest.raises(IngestionError) as excinfo:
        run_service.run_experiment(tiny_config, out_dir=run_dir)
    assert excinfo.value.stage == "load-data"
    assert str(excinfo.value).startswith("[load-data]")
    assert (run_dir / "config.conf").exists()
    assert "load-data" in (run_dir / "run.log").read_text()


def test_unexpected_error_is_wrapped_with_stage(tiny_config, tmp_path, monkeypatch):
    def explode(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(run_service, "evaluate_generator", explode)
    run_dir = tmp_path / "explode"
    with pytest.raises(StageError) as excinfo:
        run_service.run_experiment(tiny_config, out_dir=run_dir)
    assert excinfo.value.stage == "evaluate"
    assert (run_dir / "generator.pt").exists()
    assert (run_dir / "metrics.jsonl").exists()
    assert not (run_dir / "report.json").exists()


def test_evaluate_run_never_overwrites(tiny_config, tmp_path):
    artifacts = run_service.run_experiment(tiny_config, out_dir=tmp_path / "run")
    original = (artifacts.run_dir / "report.json").read_text()
    generator_bytes = (artifacts.run_dir / "generator.pt").read_bytes()

    again = run_service.evaluate_run(artifacts.run_dir)

    assert again.report_file != artifacts.report_file
    assert again.report_file.name.startswith("report-")
    assert again.grid_file.name.startswith("grid-")
    assert (artifacts.run_dir / "report.json").read_text() == original
    assert (artifacts.run_dir / "generator.pt").read_bytes() == generator_bytes
    assert again.report.sample_count == artifacts.report.sample_count
    assert again.report.label_agreement == pytest.approx(artifacts.report.label_agreement)
    assert again.report.nn_l2.mean == pytest.approx(artifacts.report.nn_l2.mean, rel=1e-5)


def test_render_run_grid(tiny_config, tmp_path):
    artifacts = run_service.run_experiment(tiny_config, out_dir=tmp_path / "run")
    path = run_service.render_run_grid(artifacts.run_dir, columns=3, out=tmp_path / "fresh.png")
    assert path.exists()
    default = run_service.render_run_grid(artifacts.run_dir)
    assert default.name.startswith("grid-")


def test_premise_run_writes_report(tiny_config, tmp_path):
    source = run_service.train_classifier_run(tiny_config, out_dir=tmp_path / "clf")
    report, path = run_service.premise_run(source.run_dir, noise_count=16)
    assert path.name == "premise.json"
    assert path.parent == source.classifier_dir
    assert report.confidence_gap >= 0.0


def test_sweep_three_sizes_three_generators(tiny_config, tmp_path):
    root = tmp_path / "runs"
    result = run_service.sweep(tiny_config, [8, 16, 24], [0, 1, 2], root=root)

    run_dirs = [path for path in root.iterdir() if (path / "config.conf").exists()]
    assert len(run_dirs) == 9
    assert len(result.entries) == 9
    assert sorted(result.grids) == [8, 16, 24]
    assert all(path.exists() for path in result.grids.values())
    assert (result.sweep_dir / "summary.json").exists()

    for size in (8, 16, 24):
        entries = [entry for entry in result.entries if entry.subset_size == size]
        assert sorted(entry.generator_seed for entry in entries) == [0, 1, 2]
        checksums = {
            read_classifier_manifest(entry.run_dir / "classifier").checksum for entry in entries
        }
        assert len(checksums) == 1
