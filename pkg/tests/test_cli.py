# imports
import subprocess
from pathlib import Path

import pandas as pd
import pytest

from skeattn_utils.tensor_io import read_tensor

TEST_ROODIR = Path(__file__).parent
EXEC_ROOTDIR = Path(__file__).parent.parent

SMALL_RUN = " ".join(
    f"--set {pair}"
    for pair in [
        "channels=8,16",
        "strides=1,2",
        "feature_dim=16",
        "queue_size=32",
        "batch_size=4",
        "epochs=2",
        "lr_drop_epoch=1",
        "samples_per_class=6",
        "test_samples_per_class=3",
        "knn_interval=1",
        "linear_epochs=3",
        "linear_drop_epoch=2",
        "finetune_epochs=1",
        "progress=false",
    ]
)


@pytest.fixture(scope="session")
def tmp_dir(tmpdir_factory):
    return tmpdir_factory.mktemp("tmp")


@pytest.fixture(autouse=True)
def workingdir(tmp_dir, monkeypatch):
    """set the working directory for all tests"""
    monkeypatch.chdir(tmp_dir)


def exec_command(cmnd, stdout=subprocess.PIPE, stderr=subprocess.PIPE):
    """executes shell command and returns stdout if completes exit code 0
    Parameters
    ----------
    cmnd : str
      shell command to be executed
    stdout, stderr : streams
      Default value (PIPE) intercepts process output, setting to None
      blocks this."""

    proc = subprocess.Popen(cmnd, shell=True, stdout=stdout, stderr=stderr)
    out, err = proc.communicate()
    if proc.returncode != 0:
        raise RuntimeError(f"FAILED: {cmnd}\n{err}")
    return out.decode("utf8") if out is not None else None


def exit_status(cmnd):
    """run a shell command and return its exit code"""
    return subprocess.run(cmnd, shell=True, capture_output=True).returncode


@pytest.fixture(scope="session")
def pretrained(tmp_dir):
    """synthetic data plus a two-epoch pretraining run shared by the evaluation tests"""
    train, test, run = tmp_dir / "train.skd", tmp_dir / "test.skd", tmp_dir / "run"
    exec_command(f"skeattnclr synth {SMALL_RUN} --out {train} --test-out {test} --seed 3")
    exec_command(f"skeattnclr pretrain {SMALL_RUN} --data {train} --eval-data {test} --out {run}")
    return train, test, run


def test_skeattnclr_command(tmp_dir):
    """
    Test the top level command
    """
    cmd = "skeattnclr --help"
    exec_command(cmd)


def test_pretrain(pretrained):
    """
    Test pretraining outputs
    """
    _, _, run = pretrained
    for name in ("config.cfg", "loss_log.csv", "knn_history.csv"):
        assert (Path(run) / name).is_file()
    for checkpoint in ("final", "best"):
        assert (Path(run) / checkpoint / "md5sums.txt").is_file()
    assert len(pd.read_csv(Path(run) / "loss_log.csv")) == 12


def test_pretrain_refuses_existing_output(pretrained):
    """
    Test pretraining without --force on an existing directory
    """
    train, _, run = pretrained
    assert exit_status(f"skeattnclr pretrain {SMALL_RUN} --data {train} --out {run}") == 2


def test_eval_protocols(pretrained):
    """
    Test knn, linear and finetune evaluation
    """
    train, test, run = pretrained
    checkpoint = Path(run) / "final"
    out = exec_command(f"skeattnclr eval knn --checkpoint {checkpoint} --data {train} --test-data {test} --out knn.csv")
    assert "knn accuracy" in out
    assert len(pd.read_csv("knn.csv")) == 4

    out = exec_command(f"skeattnclr eval linear --checkpoint {checkpoint} --data {train}")
    assert "linear accuracy" in out

    out = exec_command(
        f"skeattnclr eval finetune --checkpoint {checkpoint} --data {train} --test-data {test} --label-fraction 0.5"
    )
    assert "finetune accuracy" in out


def test_eval_ensemble(pretrained):
    """
    Test stream fusion of two checkpoints
    """
    train, test, run = pretrained
    out = exec_command(
        f"skeattnclr eval-ensemble --checkpoint {Path(run) / 'final'} --checkpoint {Path(run) / 'best'} "
        f"--data {train} --test-data {test}"
    )
    assert "ensemble accuracy" in out


def test_export_embeddings_and_masks(pretrained):
    """
    Test feature and mask export
    """
    train, _, run = pretrained
    checkpoint = Path(run) / "final"
    exec_command(f"skeattnclr export-embeddings --checkpoint {checkpoint} --data {train} --out features.skt")
    assert read_tensor("features.skt").shape == (24, 16)

    exec_command(f"skeattnclr dump-masks --checkpoint {checkpoint} --data {train} --out masks.skt --limit 5")
    masks = read_tensor("masks.skt")
    assert masks.shape == (5, 72, 16)
    assert ((masks > 0) & (masks < 1)).all()


def test_bad_config_exit_code(tmp_dir):
    """
    Test that configuration errors exit with status 2
    """
    assert exit_status("skeattnclr synth --set heads=5 --out bad.skd") == 2
    assert exit_status("skeattnclr synth --set epochs=ten --out bad.skd") == 2


def test_invalid_knn_interval_exit_code(pretrained):
    """
    Test that a zero KNN interval is rejected before training starts
    """
    train, test, _ = pretrained
    cmd = f"skeattnclr pretrain {SMALL_RUN} --set knn_interval=0 --data {train} --eval-data {test} --out knn0"
    assert exit_status(cmd) == 2
    assert not Path("knn0", "loss_log.csv").exists()


def test_invalid_label_fraction_exit_code(pretrained):
    """
    Test that a label fraction outside (0, 1] exits with status 2
    """
    train, test, run = pretrained
    checkpoint = Path(run) / "final"
    for fraction in ("1.5", "0"):
        cmd = (
            f"skeattnclr eval finetune --checkpoint {checkpoint} --data {train} --test-data {test} "
            f"--label-fraction {fraction}"
        )
        assert exit_status(cmd) == 2
