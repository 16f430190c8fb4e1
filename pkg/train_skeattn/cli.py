"""
Command line interface of SkeAttnCLR

Exit codes: 0 ok, 2 configuration or input format error, 3 numeric failure.
"""

import functools
import sys
from pathlib import Path

import click
import numpy as np
from loguru import logger

from skeattn_utils import config as config_utils
from skeattn_utils.errors import NonFiniteError, SkeAttnError, ToleranceExceededError
from skeattn_utils.format_data import (
    derive_stream_dataset,
    instantiate_dir,
    load_dataset,
    save_dataset,
    split_dataset,
)
from skeattn_utils.models import CONFIG_FILE, load_checkpoint
from skeattn_utils.statistics import embed, ensemble_streams, finetune, knn_eval, linear_probe
from skeattn_utils.synthetic import synth_generate
from skeattn_utils.tensor_io import write_tensor
from skeattn_utils.train_model import pretrain

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def exit_code(err):
    """
    Map an exception to the process exit code
    """
    if isinstance(err, (NonFiniteError, ToleranceExceededError)):
        return EXIT_NUMERIC
    return EXIT_CONFIG


def handle_errors(command):
    """
    Log package errors and terminate with the matching exit code
    """

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (SkeAttnError, FileNotFoundError, IsADirectoryError) as err:
            code = exit_code(err)
            if code == EXIT_NUMERIC:
                logger.critical(str(err))
            else:
                logger.error(str(err))
            sys.exit(code)

    return wrapper


def parse_overrides(pairs):
    """
    'key=value' strings from --set options into a dict
    """
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise config_utils.ConfigError(f"--set expects key=value, got '{pair}'")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def resolve_config(config_path, preset, overrides):
    return config_utils.load_config(config_path, preset, parse_overrides(overrides))


def read_data(path, cfg, split="train"):
    return load_dataset(path, topology=cfg.get_topology(), split=split, mmap=cfg.train.mmap)


def eval_splits(cfg, data, test_data):
    """
    Labeled (train, test) datasets of the checkpoint's stream
    """
    dataset = read_data(data, cfg)
    if test_data:
        train_set, test_set = dataset, read_data(test_data, cfg, "test")
    else:
        logger.info("no test data given, holding out a stratified 20% of the data")
        train_set, test_set = split_dataset(dataset, test_size=0.2, seed=cfg.train.seed)
    stream = cfg.train.stream
    return derive_stream_dataset(train_set, stream), derive_stream_dataset(test_set, stream)


def write_report(report, out):
    if out:
        report.to_frame().to_csv(out, index=False)
        logger.info(f"per-class accuracy written to {out}")
    click.echo(f"{report.protocol} accuracy: {report.accuracy:.4f}")


config_option = click.option(
    "--config", "-c", "config_path", type=click.Path(exists=True, dir_okay=False), help="Run configuration file"
)
preset_option = click.option(
    "--preset",
    "-p",
    default="desk",
    type=click.Choice(list(config_utils.PRESETS)),
    show_default=True,
    help="Preset the configuration starts from",
)
set_option = click.option(
    "--set", "-s", "overrides", multiple=True, help="Override a config key, e.g. --set epochs=10"
)
checkpoint_option = click.option(
    "--checkpoint", required=True, type=click.Path(exists=True, file_okay=False), help="Checkpoint directory"
)
data_option = click.option(
    "--data", "-d", required=True, type=click.Path(exists=True, dir_okay=False), help="SKD1 dataset"
)


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log debug messages")
def main(verbose):
    """
    SkeAttnCLR: self-supervised skeleton representation learning with attention-masked local contrast
    """
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "INFO")


@main.command()
@config_option
@preset_option
@set_option
@click.option("--out", "-o", required=True, type=click.Path(), help="Output SKD1 file of the train split")
@click.option("--test-out", type=click.Path(), help="Also write the test split here")
@click.option("--seed", default=0, type=int, show_default=True, help="Generator seed")
@handle_errors
def synth(config_path, preset, overrides, out, test_out, seed):
    """
    Generate a synthetic part-motion dataset
    """
    cfg = resolve_config(config_path, preset, overrides)
    topology = cfg.get_topology()
    save_dataset(synth_generate(cfg.synth, seed, topology, "train"), out)
    if test_out:
        save_dataset(synth_generate(cfg.synth, seed, topology, "test"), test_out)


@main.command(name="pretrain")
@config_option
@preset_option
@set_option
@click.option("--out", "-o", required=True, type=click.Path(), help="Output directory")
@click.option("--data", "-d", type=click.Path(exists=True, dir_okay=False), help="Training SKD1, overrides data_path")
@click.option(
    "--eval-data", type=click.Path(exists=True, dir_okay=False), help="Labeled SKD1 for KNN probes, overrides eval_data_path"
)
@click.option("--dump-augmentations", type=click.Path(), help="Write the first batch's views as SKD1")
@click.option("--force", "-f", is_flag=True, help="Overwrite the output directory")
@handle_errors
def pretrain_command(config_path, preset, overrides, out, data, eval_data, dump_augmentations, force):
    """
    Pretrain an encoder
    """
    cfg = resolve_config(config_path, preset, overrides)
    instantiate_dir(out, force)
    config_utils.write_config(cfg, Path(out) / CONFIG_FILE)

    data = data or cfg.train.data_path
    eval_data = eval_data or cfg.train.eval_data_path
    topology = cfg.get_topology()
    if data:
        dataset = read_data(data, cfg)
        test_set = read_data(eval_data, cfg, "test") if eval_data else None
    else:
        logger.info("no data given, generating the synthetic dataset")
        dataset = synth_generate(cfg.synth, cfg.train.seed, topology, "train")
        test_set = synth_generate(cfg.synth, cfg.train.seed, topology, "test")

    knn_sets = None
    if test_set is not None and dataset.is_labeled and test_set.is_labeled and len(test_set):
        knn_sets = (dataset, test_set)
    result = pretrain(
        dataset.unlabeled(), cfg, out_dir=out, knn_sets=knn_sets, augmentation_dump=dump_augmentations
    )
    means = result.epoch_means()
    click.echo(f"mean loss first epoch {means.iloc[0]:.4f}, final epoch {means.iloc[-1]:.4f}")


@main.group(name="eval")
def evaluate():
    """
    Evaluate a pretrained encoder
    """


def eval_options(command):
    for option in reversed(
        [
            checkpoint_option,
            data_option,
            click.option("--test-data", type=click.Path(exists=True, dir_okay=False), help="Labeled test SKD1"),
            click.option("--out", "-o", type=click.Path(), help="Per-class accuracy CSV"),
        ]
    ):
        command = option(command)
    return command


@evaluate.command()
@eval_options
@click.option("--k", default=None, type=int, help="Neighbours, defaults to knn_k")
@handle_errors
def knn(checkpoint, data, test_data, out, k):
    """
    KNN accuracy of frozen features
    """
    model = load_checkpoint(checkpoint)
    train_set, test_set = eval_splits(model.cfg, data, test_data)
    write_report(knn_eval(model.encoder_q, train_set, test_set, k or model.cfg.probe.knn_k), out)


@evaluate.command()
@eval_options
@handle_errors
def linear(checkpoint, data, test_data, out):
    """
    Linear classifier on frozen features
    """
    model = load_checkpoint(checkpoint)
    cfg = model.cfg
    train_set, test_set = eval_splits(cfg, data, test_data)
    report = linear_probe(
        model.encoder_q, train_set, test_set, cfg.probe, cfg.train.seed, progress=cfg.train.progress
    )
    write_report(report, out)


@evaluate.command(name="finetune")
@eval_options
@click.option("--label-fraction", type=float, default=None, help="Share of labels per class, defaults to label_fraction")
@handle_errors
def finetune_command(checkpoint, data, test_data, out, label_fraction):
    """
    Finetune encoder and classifier, optionally on a fraction of the labels
    """
    model = load_checkpoint(checkpoint)
    cfg = model.cfg
    train_set, test_set = eval_splits(cfg, data, test_data)
    report, _ = finetune(
        model.encoder_q,
        train_set,
        test_set,
        cfg.probe,
        label_fraction,
        cfg.train.seed,
        progress=cfg.train.progress,
    )
    write_report(report, out)


@main.command(name="eval-ensemble")
@click.option(
    "--checkpoint",
    "checkpoints",
    required=True,
    multiple=True,
    type=click.Path(exists=True, file_okay=False),
    help="Checkpoint of one stream, repeat per stream",
)
@data_option
@click.option("--test-data", type=click.Path(exists=True, dir_okay=False), help="Labeled test SKD1")
@click.option("--out", "-o", type=click.Path(), help="Per-class accuracy CSV")
@handle_errors
def eval_ensemble(checkpoints, data, test_data, out):
    """
    Fuse the linear-probe scores of several stream checkpoints
    """
    reports, labels = [], None
    for checkpoint in checkpoints:
        model = load_checkpoint(checkpoint)
        cfg = model.cfg
        train_set, test_set = eval_splits(cfg, data, test_data)
        report = linear_probe(model.encoder_q, train_set, test_set, cfg.probe, cfg.train.seed)
        logger.info(f"{cfg.train.stream} stream: linear accuracy {report.accuracy:.4f}")
        reports.append(report)
        labels = test_set.labels
    write_report(ensemble_streams(reports, labels), out)


@main.command(name="export-embeddings")
@checkpoint_option
@data_option
@click.option("--out", "-o", required=True, type=click.Path(), help="Output SKT1 file")
@handle_errors
def export_embeddings(checkpoint, data, out):
    """
    Write pooled encoder features (N, C_f) as SKT1
    """
    model = load_checkpoint(checkpoint)
    dataset = derive_stream_dataset(read_data(data, model.cfg), model.cfg.train.stream)
    features = embed(model.encoder_q, dataset.coords)
    write_tensor(out, features.astype(np.float32))
    logger.info(f"{features.shape[0]} embeddings of width {features.shape[1]} written to {out}")


@main.command(name="dump-masks")
@checkpoint_option
@data_option
@click.option("--out", "-o", required=True, type=click.Path(), help="Output SKT1 file")
@click.option("--limit", default=16, type=int, show_default=True, help="Number of samples to export")
@handle_errors
def dump_masks(checkpoint, data, out, limit):
    """
    Write the soft masks (N, n, C_f) of the first samples as SKT1
    """
    model = load_checkpoint(checkpoint)
    dataset = derive_stream_dataset(read_data(data, model.cfg), model.cfg.train.stream)
    masks = model.masks(np.asarray(dataset.coords[:limit], dtype=model.dtype))
    write_tensor(out, masks.astype(np.float32))
    logger.info(f"masks of shape {masks.shape} written to {out}")


if __name__ == "__main__":
    main()
