import pytest
from click.testing import CliRunner

from app.core.errors import CapabilityError, IngestionError, TrainingError
from app.main import cli
from app.schemas.run import RunConfig
from app.services import dataset_service, run_service
from app.services.config_file_service import write_config


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner(mix_stderr=False)


@pytest.fixture
def config_file(tmp_path):
    config = RunConfig(
        dataset="mnist",
        subset_size=24,
        classifier={
            "conv_blocks": [{"out_channels": 4}],
            "fc_hidden": [8],
            "hyper": {"batch_size": 8, "max_epochs": 2},
        },
        generator={"latent_dim": 8, "base_channels": 4},
        schedule={"steps": 2, "batch_size": 4, "eval_interval": 2, "eval_count": 8},
        evaluation={"samples_per_class": 2, "grid_columns": 2},
    )
    return write_config(config, tmp_path / "tiny.conf")


@pytest.fixture(autouse=True)
def synthetic_dataset(monkeypatch, image_set):
    monkeypatch.setattr(
        dataset_service, "load_dataset", lambda name, split="train", root=None: image_set
    )


def test_full_cli_flow(runner, config_file, tmp_path):
    clf_dir = tmp_path / "clf"
    result = runner.invoke(
        cli, ["train-classifier", "--config", str(config_file), "--out", str(clf_dir)]
    )
    assert result.exit_code == 0, result.stderr
    assert (clf_dir / "classifier" / "classifier.json").exists()

    run_dir = tmp_path / "inv"
    result = runner.invoke(
        cli,
        [
            "invert",
            "--config",
            str(config_file),
            "--classifier",
            str(clf_dir),
            "--steps",
            "3",
            "--set",
            "weights.gamma=0.5",
            "--out",
            str(run_dir),
        ],
    )
    assert result.exit_code == 0, result.stderr
    assert (run_dir / "report.json").exists()
    assert "weights.gamma = 0.5" in (run_dir / "config.conf").read_text()
    assert "schedule.steps = 3" in (run_dir / "config.conf").read_text()

    result = runner.invoke(cli, ["evaluate", "--run", str(run_dir)])
    assert result.exit_code == 0, result.stderr
    assert "label_agreement" in result.stdout

    result = runner.invoke(
        cli, ["render-grid", "--run", str(run_dir), "--columns", "3", "--out", str(tmp_path / "g.png")]
    )
    assert result.exit_code == 0, result.stderr
    assert (tmp_path / "g.png").exists()


def test_reconstruct_verb(runner, config_file, tmp_path):
    run_dir = tmp_path / "rec"
    result = runner.invoke(
        cli, ["reconstruct", "--config", str(config_file), "--out", str(run_dir)]
    )
    assert result.exit_code == 0, result.stderr
    assert '"objective": "reconstruct"' in (run_dir / "generator.json").read_text()
    assert "weights.eta3 = 0.001" in (run_dir / "config.conf").read_text()


def test_missing_config_file_exits_2(runner, tmp_path):
    result = runner.invoke(cli, ["invert", "--config", str(tmp_path / "absent.conf")])
    assert result.exit_code == 2


def test_invalid_override_exits_2(runner, config_file):
    result = runner.invoke(
        cli, ["invert", "--config", str(config_file), "--set", "schedule.batch_size=1"]
    )
    assert result.exit_code == 2
    assert "schedule.batch_size" in result.stderr


def test_malformed_assignment_exits_2(runner, config_file):
    result = runner.invoke(cli, ["invert", "--config", str(config_file), "--set", "weights"])
    assert result.exit_code == 2


def test_unknown_dataset_exits_2(runner):
    result = runner.invoke(cli, ["train-classifier", "--dataset", "imagenet"])
    assert result.exit_code == 2


def test_ingestion_error_exits_3(runner, config_file, monkeypatch):
    def broken(name, split="train", root=None):
        raise IngestionError("Could not read dataset mnist at /nowhere/MNIST/raw")

    monkeypatch.setattr(dataset_service, "load_dataset", broken)
    result = runner.invoke(cli, ["train-classifier", "--config", str(config_file)])
    assert result.exit_code == 3
    assert "/nowhere/MNIST/raw" in result.stderr


@pytest.mark.parametrize(
    "error, code",
    [
        (TrainingError("diverged", step=7), 4),
        (CapabilityError("no double backward"), 5),
        (RuntimeError("unexpected"), 1),
    ],
)
def test_error_exit_codes(runner, config_file, monkeypatch, error, code):
    def fail(*args, **kwargs):
        raise error

    monkeypatch.setattr(run_service, "run_experiment", fail)
    result = runner.invoke(cli, ["invert", "--config", str(config_file)])
    assert result.exit_code == code


def test_sweep_verb(runner, config_file, tmp_path):
    result = runner.invoke(
        cli,
        [
            "sweep",
            "--config",
            str(config_file),
            "--size",
            "8",
            "--size",
            "16",
            "--generator-seed",
            "0",
            "--generator-seed",
            "1",
        ],
    )
    assert result.exit_code == 0, result.stderr
    runs = [p for p in (tmp_path / "runs").iterdir() if (p / "config.conf").exists()]
    assert len(runs) == 4


def test_documented_command_lines(runner, config_file, tmp_path):
    tiny = ["--config", str(config_file)]
    clf_dir = tmp_path / "runs" / "clf"
    commands = [
        [
            "train-classifier",
            "--dataset",
            "mnist",
            "--subset",
            "24",
            "--seed",
            "0",
            "--out",
            str(clf_dir),
        ],
        [
            "invert",
            "--classifier",
            str(clf_dir),
            "--mode",
            "vector_matrix",
            "--steps",
            "2",
            "--out",
            str(tmp_path / "runs" / "inv"),
        ],
        [
            "reconstruct",
            "--classifier",
            str(clf_dir),
            "--epsilon",
            "0.05",
            "--steps",
            "2",
            "--out",
            str(tmp_path / "runs" / "rec"),
        ],
    ]
    for argv in commands:
        result = runner.invoke(cli, [*argv, *tiny])
        assert result.exit_code == 0, result.stderr

    result = runner.invoke(cli, ["evaluate", "--run", str(tmp_path / "runs" / "rec")])
    assert result.exit_code == 0, result.stderr


def test_flags_map_to_config_keys(runner, config_file, tmp_path):
    clf_dir = tmp_path / "clf"
    result = runner.invoke(
        cli,
        [
            "train-classifier",
            "--config",
            str(config_file),
            "--subset-size",
            "16",
            "--seed",
            "5",
            "--out",
            str(clf_dir),
        ],
    )
    assert result.exit_code == 0, result.stderr
    text = (clf_dir / "config.conf").read_text()
    assert "subset_size = 16" in text
    assert "seeds.data = 5" in text
    assert "seeds.classifier = 5" in text

    run_dir = tmp_path / "rec"
    result = runner.invoke(
        cli,
        [
            "reconstruct",
            "--config",
            str(config_file),
            "--classifier",
            str(clf_dir),
            "--mode",
            "matrix",
            "--epsilon",
            "0.1",
            "--seed",
            "3",
            "--steps",
            "2",
            "--out",
            str(run_dir),
        ],
    )
    assert result.exit_code == 0, result.stderr
    text = (run_dir / "config.conf").read_text()
    assert 'generator.mode = "matrix"' in text
    assert "perturbation.epsilon = 0.1" in text
    assert "seeds.generator = 3" in text
    assert "seeds.conditions = 3" in text
    assert "seeds.data = 5" in text
    assert "subset_size = 16" in text


def test_epsilon_is_reconstruct_only(runner, config_file):
    result = runner.invoke(cli, ["invert", "--config", str(config_file), "--epsilon", "0.1"])
    assert result.exit_code == 2
