"""
Self-supervised pretraining loop

Per step: normal augmentation gives (x_q, x_k), part mixing turns x_q into
x_mix, the model computes the global and local losses, SGD updates the query
branch, the key branch follows by a momentum update with the cosine momentum
schedule, and the key embeddings z_k are enqueued in the memory bank.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from alive_progress import alive_bar
from loguru import logger

from skeattn_utils import autodiff
from skeattn_utils.augmentation import augment_batch, resize_time
from skeattn_utils.autodiff import gradients
from skeattn_utils.errors import EmptyTrainSetError, NonFiniteError, NonFiniteLossError
from skeattn_utils.format_data import Dataset, batch_indices, derive_stream_dataset, save_dataset
from skeattn_utils.models import SkeAttnCLR, save_checkpoint
from skeattn_utils.momentum import dynamic_momentum
from skeattn_utils.optim import get_optimizer, step_lr
from skeattn_utils.statistics import knn_eval

LOSS_COLUMNS = ["iter", "M", "lr", "L_info", "L_s", "L_ns", "L_local", "L", "epoch"]
NONFINITE_DUMP = "nonfinite_batch.skd"


@dataclass
class PretrainResult:
    """
    :param model: the trained model (final state)
    :param loss_log: one row per optimizer step, columns LOSS_COLUMNS
    :param knn_history: EvalReports of the periodic KNN probes
    :param best_epoch: epoch of the highest KNN accuracy, None without probes
    """

    model: SkeAttnCLR
    loss_log: pd.DataFrame
    knn_history: list = field(default_factory=list)
    best_epoch: int = None

    def epoch_means(self):
        return self.loss_log.groupby("epoch")["L"].mean()


def dump_batch(coords, topology, path):
    """
    Save a batch as an unlabeled SKD1 file for post-mortem inspection
    """
    coords = np.asarray(coords, dtype=np.float32)
    save_dataset(Dataset(coords, np.full(len(coords), -1), 1, topology), path)
    return str(path)


def dump_augmentations(coords, views, topology, window, path):
    """
    Write source, x_q, x_k and x_mix of one batch stacked in that order
    """
    source = np.stack([resize_time(np.asarray(c), window) for c in coords])
    stacked = [source] + [v for v in views if v is not None]
    return dump_batch(np.concatenate(stacked), topology, path)


def train_step(model, optimizer, coords, epoch, step, iteration, iter_max, lr, workers=1, dump_dir=None):
    """
    One optimizer step on a batch of raw samples

    :param model: SkeAttnCLR
    :param optimizer: optimizer over model.trainable_parameters()
    :param coords: (B, C, T, V, M) raw batch
    :param epoch: epoch index
    :param step: step index within the epoch
    :param iteration: global step index, drives the momentum schedule
    :param iter_max: iteration count at which the momentum reaches 1
    :param lr: learning rate of this step
    :param workers: augmentation threads
    :param dump_dir: directory for the offending batch when the loss is not finite
    :return: (LossBreakdown, momentum used)
    """
    cfg = model.cfg
    x_q, x_k, x_mix = augment_batch(
        coords,
        model.topology,
        cfg.augment,
        cfg.train.seed,
        epoch,
        step,
        with_mix=not cfg.train.disable_local,
        workers=workers,
    )
    try:
        total, z_k, parts = model.losses(x_q, x_k, x_mix)
        grads = gradients(total, optimizer.params)
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NonFiniteError("non-finite gradient")
    except NonFiniteError as err:
        dump_path = None
        if dump_dir is not None:
            dump_path = dump_batch(coords, model.topology, Path(dump_dir) / NONFINITE_DUMP)
        logger.critical(f"numeric failure at epoch {epoch}, step {step}: {err}")
        raise NonFiniteLossError(f"training aborted at iteration {iteration}: {err}", dump_path)

    optimizer.step(grads, lr)
    m = dynamic_momentum(min(iteration, iter_max), iter_max, cfg.train.momentum)
    model.momentum_step(m)
    model.bank.enqueue(z_k)
    return parts, m


def pretrain(dataset, cfg, out_dir=None, knn_sets=None, augmentation_dump=None, model=None):
    """
    Pretrain a SkeAttnCLR model on an (unlabeled) dataset

    :param dataset: train Dataset, labels are ignored
    :param cfg: RunConfig
    :param out_dir: directory for loss_log.csv and the final/ and best/ checkpoints
    :param knn_sets: optional (labeled train, labeled test) Datasets probed every knn_interval epochs
    :param augmentation_dump: SKD1 path receiving the views of the first batch
    :param model: model to continue training, built from cfg when None
    :return: PretrainResult
    """
    train = cfg.train
    autodiff.set_debug(train.debug_nan_checks)
    if len(dataset) == 0:
        raise EmptyTrainSetError("pretraining needs at least one sample")

    dataset = derive_stream_dataset(dataset, train.stream)
    if knn_sets is not None:
        knn_sets = tuple(derive_stream_dataset(d, train.stream) for d in knn_sets)
    model = model or SkeAttnCLR(cfg, dataset.topology)
    optimizer = get_optimizer(
        "sgd",
        model.trainable_parameters(),
        train.base_lr,
        momentum=train.sgd_momentum,
        weight_decay=train.weight_decay,
        nesterov=train.nesterov,
        clip_norm=train.clip_norm,
    )

    steps_per_epoch = len(list(batch_indices(len(dataset), train.batch_size)))
    iter_max = train.iter_max or train.epochs * steps_per_epoch
    logger.info(
        f"pretraining on {len(dataset)} {train.stream} samples: {train.epochs} epochs of "
        f"{steps_per_epoch} steps, local branch {'off' if train.disable_local else 'on'}"
    )

    if knn_sets is not None:
        logger.info("KNN accuracy of the untrained encoder:")
        knn_eval(model.encoder_q, *knn_sets, k=cfg.probe.knn_k, epoch=0)

    rows = []
    knn_history = []
    best_accuracy, best_epoch, best_state = -1.0, None, None
    iteration = 0
    with alive_bar(total=train.epochs * steps_per_epoch, title="pretrain", disable=not train.progress) as bar:
        for epoch in range(train.epochs):
            lr = step_lr(train.base_lr, epoch, train.lr_drop_epoch)
            rng = np.random.default_rng([train.seed, epoch])
            for step, index in enumerate(batch_indices(len(dataset), train.batch_size, rng)):
                coords = np.asarray(dataset.coords[index])
                if augmentation_dump is not None and iteration == 0:
                    views = augment_batch(
                        coords,
                        model.topology,
                        cfg.augment,
                        train.seed,
                        with_mix=not train.disable_local,
                        workers=train.workers,
                    )
                    dump_augmentations(coords, views, model.topology, cfg.augment.window_size, augmentation_dump)
                    logger.info(f"augmented views of the first batch written to {augmentation_dump}")

                parts, m = train_step(
                    model, optimizer, coords, epoch, step, iteration, iter_max, lr, train.workers, out_dir
                )
                row = {"iter": iteration, "M": m, "lr": lr, **parts.as_row(), "epoch": epoch}
                rows.append(row)
                logger.debug(
                    f"iter {iteration}: L={parts.total:.4f} info={parts.info:.4f} local={parts.local:.4f}"
                )
                iteration += 1
                bar()

            epoch_loss = np.mean([r["L"] for r in rows[-steps_per_epoch:]])
            logger.info(f"epoch {epoch + 1}/{train.epochs}: mean loss {epoch_loss:.4f}, lr {lr:g}")

            if knn_sets is not None and ((epoch + 1) % train.knn_interval == 0 or epoch + 1 == train.epochs):
                report = knn_eval(model.encoder_q, *knn_sets, k=cfg.probe.knn_k, epoch=epoch + 1)
                knn_history.append(report)
                if report.accuracy > best_accuracy:
                    best_accuracy, best_epoch, best_state = report.accuracy, epoch + 1, model.state_dict()

    loss_log = pd.DataFrame(rows, columns=LOSS_COLUMNS)
    if out_dir is not None:
        write_outputs(model, loss_log, knn_history, best_state, Path(out_dir))
    if best_epoch is not None:
        logger.info(f"best KNN accuracy {best_accuracy:.4f} at epoch {best_epoch}")
    return PretrainResult(model, loss_log, knn_history, best_epoch)


def write_outputs(model, loss_log, knn_history, best_state, out_dir):
    loss_log.to_csv(out_dir / "loss_log.csv", index=False)
    save_checkpoint(model, out_dir / "final")
    if best_state is not None:
        best = SkeAttnCLR(model.cfg, model.topology)
        best.load_state_dict(best_state)
        save_checkpoint(best, out_dir / "best")
    if knn_history:
        pd.DataFrame(
            {"epoch": [r.epoch for r in knn_history], "accuracy": [r.accuracy for r in knn_history]}
        ).to_csv(out_dir / "knn_history.csv", index=False, float_format="%.17g")
