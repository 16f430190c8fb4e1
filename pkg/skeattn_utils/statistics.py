"""
Downstream evaluation of learned representations

KNN on pooled encoder features, a linear classifier on frozen features,
finetuning of encoder + classifier on (optionally subsampled) labels, and
fusion of per-stream class scores.
"""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from alive_progress import alive_bar
from loguru import logger
from sklearn.metrics import accuracy_score, precision_recall_fscore_support
from sklearn.model_selection import train_test_split
from sklearn.neighbors import KNeighborsClassifier

from skeattn_utils.autodiff import Tensor, gradients, no_grad, softmax_cross_entropy
from skeattn_utils.encoder import global_average_pool
from skeattn_utils.errors import (
    ClassMissingError,
    EmptyTrainSetError,
    InvalidConfigError,
    StreamMismatchError,
)
from skeattn_utils.format_data import batch_indices
from skeattn_utils.layers import Module, dense, get_initializer
from skeattn_utils.optim import PlateauSchedule, get_optimizer, step_lr


@dataclass
class EvalReport:
    """
    Result of one evaluation protocol

    :param protocol: 'knn', 'linear', 'finetune' or 'ensemble'
    :param accuracy: overall accuracy in [0, 1]
    :param per_class: accuracy (recall) of every class
    :param support: test samples per class
    :param epoch: pretraining epoch the encoder came from, if known
    :param scores: (N, classes) class scores of the test samples, when the protocol has any
    :param precision: per-class precision
    :param f1: per-class F1 score
    """

    protocol: str
    accuracy: float
    per_class: np.ndarray
    support: np.ndarray
    epoch: int = None
    scores: np.ndarray = field(default=None, repr=False)
    precision: np.ndarray = field(default=None, repr=False)
    f1: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_predictions(cls, protocol, labels, predictions, class_count, epoch=None, scores=None):
        classes = np.arange(class_count)
        precision, recall, f1, support = precision_recall_fscore_support(
            labels, predictions, labels=classes, zero_division=0
        )
        return cls(
            protocol=protocol,
            accuracy=float(accuracy_score(labels, predictions)),
            per_class=recall,
            support=support,
            epoch=epoch,
            scores=scores,
            precision=precision,
            f1=f1,
        )

    def to_frame(self):
        """
        Per-class table: class, support, accuracy, precision, f1
        """
        frame = pd.DataFrame(
            {
                "class": np.arange(len(self.per_class)),
                "support": self.support,
                "accuracy": self.per_class,
            }
        )
        if self.precision is not None:
            frame["precision"] = self.precision
            frame["f1-score"] = self.f1
        frame["protocol"] = self.protocol
        return frame


def embed(encoder, coords, batch_size=256):
    """
    Pooled encoder features (N, C_f) of unaugmented samples, no graph recorded
    """
    features = []
    with no_grad():
        for start in range(0, len(coords), batch_size):
            batch = np.asarray(coords[start : start + batch_size], dtype=encoder.dtype)
            features.append(np.array(global_average_pool(encoder(batch)).data))
    if not features:
        return np.zeros((0, encoder.out_channels), dtype=encoder.dtype)
    return np.concatenate(features)


def knn_classify(train_features, train_labels, test_features, k=1):
    """
    Cosine-similarity k-nearest-neighbour vote
    """
    if len(train_features) == 0:
        raise EmptyTrainSetError("KNN needs at least one training sample")
    if k > len(train_features):
        logger.warning(f"k={k} exceeds the {len(train_features)} training samples")
        k = len(train_features)
    knn = KNeighborsClassifier(n_neighbors=k, metric="cosine", algorithm="brute")
    knn.fit(train_features, train_labels)
    return knn.predict(test_features)


def knn_eval(encoder, train_set, test_set, k=1, epoch=None):
    """
    KNN accuracy of frozen encoder features from a labeled train split to a test split

    :return: EvalReport
    """
    if len(train_set) == 0:
        raise EmptyTrainSetError("KNN needs at least one training sample")
    train_features = embed(encoder, train_set.coords)
    test_features = embed(encoder, test_set.coords)
    predictions = knn_classify(train_features, train_set.labels, test_features, k)
    report = EvalReport.from_predictions(
        "knn", test_set.labels, predictions, test_set.class_count, epoch
    )
    logger.info(f"KNN (k={k}) accuracy {report.accuracy:.4f}")
    return report


class LinearClassifier(Module):
    """
    Single fully connected layer C_f -> classes
    """

    def __init__(self, in_features, class_count, seed=0, dtype=np.float32):
        super().__init__(dtype)
        self.class_count = class_count
        init = get_initializer("uniform_fan_in")
        rng = np.random.default_rng(seed)
        self.add_parameter("weight", init((in_features, class_count), in_features, rng))
        self.add_parameter("bias", init((class_count,), in_features, rng))

    def __call__(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        return dense(x, self.params["weight"], self.params["bias"])

    def scores(self, features):
        with no_grad():
            return np.array(self(features).data)

    def predict(self, features):
        return np.argmax(self.scores(features), axis=1)


def fit_linear(features, labels, class_count, probe_cfg, seed=0, progress=False):
    """
    Train a linear classifier on fixed features with softmax cross-entropy

    SGD with step decay: probe_cfg.linear_lr until linear_drop_epoch, then x0.1.

    :return: LinearClassifier
    """
    classifier = LinearClassifier(features.shape[1], class_count, seed, features.dtype)
    optimizer = get_optimizer(
        "sgd",
        classifier.named_parameters(),
        probe_cfg.linear_lr,
        momentum=probe_cfg.linear_momentum,
        weight_decay=probe_cfg.linear_weight_decay,
    )
    epochs = probe_cfg.linear_epochs
    with alive_bar(total=epochs, title="linear", disable=not progress) as bar:
        for epoch in range(epochs):
            lr = step_lr(probe_cfg.linear_lr, epoch, probe_cfg.linear_drop_epoch)
            rng = np.random.default_rng([seed, epoch])
            for index in batch_indices(len(features), probe_cfg.linear_batch_size, rng, drop_last=False):
                loss = softmax_cross_entropy(classifier(features[index]), labels[index], class_count)
                optimizer.step(gradients(loss, classifier.named_parameters()), lr)
            bar()
    return classifier


def linear_probe(encoder, train_set, test_set, probe_cfg, seed=0, epoch=None, progress=False):
    """
    Linear classifier on frozen encoder features, evaluated on the test split

    The encoder is only read; its parameters are left untouched.

    :return: EvalReport carrying the test scores
    """
    if len(train_set) == 0:
        raise EmptyTrainSetError("linear probe needs at least one training sample")
    train_features = embed(encoder, train_set.coords)
    test_features = embed(encoder, test_set.coords)
    classifier = fit_linear(
        train_features, train_set.labels, train_set.class_count, probe_cfg, seed, progress
    )
    scores = classifier.scores(test_features)
    report = EvalReport.from_predictions(
        "linear", test_set.labels, np.argmax(scores, axis=1), test_set.class_count, epoch, scores
    )
    train_accuracy = accuracy_score(train_set.labels, classifier.predict(train_features))
    logger.info(
        f"linear probe accuracy {report.accuracy:.4f} (train accuracy {train_accuracy:.4f})"
    )
    return report


def subsample_labels(dataset, label_fraction, seed=0):
    """
    Stratified per-class subsample of a labeled dataset

    :raises ClassMissingError: if some class would keep no sample
    """
    if not 0 < label_fraction <= 1:
        raise InvalidConfigError(f"label_fraction must lie in (0, 1], got {label_fraction}")
    present = np.unique(dataset.labels)
    if len(present) < dataset.class_count:
        raise ClassMissingError(
            f"classes {sorted(set(range(dataset.class_count)) - set(present))} have no samples"
        )
    if label_fraction == 1.0:
        return dataset

    indices = np.arange(len(dataset))
    try:
        selected, _ = train_test_split(
            indices, train_size=label_fraction, random_state=seed, stratify=dataset.labels
        )
    except ValueError as err:
        raise ClassMissingError(f"label fraction {label_fraction} leaves a class empty: {err}")
    subset = dataset.subset(np.sort(selected))
    if len(np.unique(subset.labels)) < dataset.class_count:
        raise ClassMissingError(f"label fraction {label_fraction} leaves a class empty")
    if len(subset) < 2 * dataset.class_count:
        logger.warning(f"label fraction {label_fraction} keeps only {len(subset)} samples")
    return subset


def finetune(encoder, train_set, test_set, probe_cfg, label_fraction=None, seed=0, epoch=None, progress=False):
    """
    Train a copy of the encoder jointly with a linear classifier

    SGD with momentum probe_cfg.finetune_momentum at probe_cfg.finetune_lr. The rate
    drops by finetune_factor once the mean epoch loss has not improved for
    finetune_patience epochs.

    :param label_fraction: share of labels kept per class, defaults to probe_cfg.label_fraction
    :return: (EvalReport, finetuned encoder)
    """
    label_fraction = probe_cfg.label_fraction if label_fraction is None else label_fraction
    train_set = subsample_labels(train_set, label_fraction, seed)
    if len(train_set) == 0:
        raise EmptyTrainSetError("finetuning needs at least one training sample")
    logger.info(f"finetuning on {len(train_set)} labeled samples (fraction {label_fraction})")

    encoder = encoder.clone(trainable=True)
    classifier = LinearClassifier(encoder.out_channels, train_set.class_count, seed, encoder.dtype)
    params = {
        **encoder.named_parameters(prefix="encoder."),
        **classifier.named_parameters(prefix="classifier."),
    }
    optimizer = get_optimizer("sgd", params, probe_cfg.finetune_lr, momentum=probe_cfg.finetune_momentum)
    schedule = PlateauSchedule(
        probe_cfg.finetune_lr, probe_cfg.finetune_patience, probe_cfg.finetune_factor
    )

    lr = probe_cfg.finetune_lr
    with alive_bar(total=probe_cfg.finetune_epochs, title="finetune", disable=not progress) as bar:
        for ft_epoch in range(probe_cfg.finetune_epochs):
            rng = np.random.default_rng([seed, ft_epoch])
            losses = []
            for index in batch_indices(len(train_set), probe_cfg.linear_batch_size, rng, drop_last=False):
                coords = np.asarray(train_set.coords[index], dtype=encoder.dtype)
                logits = classifier(global_average_pool(encoder(coords)))
                loss = softmax_cross_entropy(logits, train_set.labels[index], train_set.class_count)
                optimizer.step(gradients(loss, params), lr)
                losses.append(loss.item())
            lr = schedule.step(float(np.mean(losses)))
            bar()

    scores = classifier.scores(embed(encoder, test_set.coords))
    report = EvalReport.from_predictions(
        "finetune", test_set.labels, np.argmax(scores, axis=1), test_set.class_count, epoch, scores
    )
    logger.info(f"finetune accuracy {report.accuracy:.4f}")
    return report, encoder


def ensemble_streams(stream_scores, labels, class_count=None):
    """
    Fuse per-stream class scores by their mean, then take the argmax

    :param stream_scores: list of (N, classes) score arrays or EvalReports carrying scores
    :param labels: (N,) test labels shared by every stream
    :return: EvalReport
    """
    scores = [s.scores if isinstance(s, EvalReport) else np.asarray(s) for s in stream_scores]
    if not scores or any(s is None for s in scores):
        raise StreamMismatchError("every stream must provide class scores")
    shapes = {s.shape for s in scores}
    if len(shapes) != 1:
        raise StreamMismatchError(f"stream scores differ in shape: {sorted(shapes)}")
    labels = np.asarray(labels)
    if scores[0].shape[0] != len(labels):
        raise StreamMismatchError(
            f"{scores[0].shape[0]} scored samples but {len(labels)} labels"
        )
    fused = np.mean(scores, axis=0)
    class_count = class_count or fused.shape[1]
    return EvalReport.from_predictions(
        "ensemble", labels, np.argmax(fused, axis=1), class_count, scores=fused
    )
