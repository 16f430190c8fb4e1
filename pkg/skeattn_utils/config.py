"""
Run configuration

Configuration files are flat "key = value" text with '#' comments. A file may
start from a shipped preset ("preset = desk" or "preset = full") and override
any key. Every key maps onto a field of one of the section dataclasses below;
KEYS lists them all, including the contrastive framework, optimizer and
augmentation constants under their published names.
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from loguru import logger

from skeattn_utils.errors import ConfigError, InvalidConfigError
from skeattn_utils.skeleton import TOPOLOGIES, get_topology, normalise_stream

PRESET_DIR = Path(__file__).parent / "presets"
PRESETS = ("desk", "full")


def _check(condition, message):
    if not condition:
        raise InvalidConfigError(message)


@dataclass
class SynthConfig:
    """
    Synthetic part-motion dataset
    """

    class_count: int = 4
    samples_per_class: int = 200
    test_samples_per_class: int = 50
    frames: int = 16
    persons: int = 1
    noise: float = 0.01
    swing_amplitude: float = 0.9
    base_frequency: float = 1.0
    sway: float = 0.05
    translation_jitter: float = 0.05
    scale_jitter: float = 0.05

    def __post_init__(self):
        _check(self.class_count >= 2, "class_count must be at least 2")
        _check(self.samples_per_class >= 1, "samples_per_class must be positive")
        _check(self.test_samples_per_class >= 0, "test_samples_per_class must be >= 0")
        _check(self.frames >= 2, "frames must be at least 2")
        _check(self.persons >= 1, "persons must be at least 1")
        _check(self.noise >= 0, "noise must be >= 0")


@dataclass
class AugmentConfig:
    """
    Normal augmentation (shear + temporal crop) and extra part-mixing augmentation
    """

    shear_amplitude: float = 0.5
    temporal_padding_ratio: float = 6
    window_size: int = 16
    spatial_l: int = 3
    spatial_u: int = 4
    temporal_l: int = 4
    temporal_u: int = 7
    swap_mode: str = "swap"
    spatial_mode: str = "semantic"

    def __post_init__(self):
        _check(self.shear_amplitude >= 0, "shear_amplitude must be >= 0")
        _check(self.temporal_padding_ratio > 0, "temporal_padding_ratio must be positive")
        _check(self.window_size >= 1, "window_size must be at least 1")
        _check(1 <= self.spatial_l <= self.spatial_u, "need 1 <= spatial_l <= spatial_u")
        _check(1 <= self.temporal_l <= self.temporal_u, "need 1 <= temporal_l <= temporal_u")
        _check(self.swap_mode == "swap", f"unsupported swap_mode '{self.swap_mode}'")
        _check(self.spatial_mode == "semantic", f"unsupported spatial_mode '{self.spatial_mode}'")

    def validate_for(self, topology):
        _check(
            self.spatial_u <= len(topology.part_groups),
            f"spatial_u={self.spatial_u} exceeds the {len(topology.part_groups)} part groups "
            f"of topology '{topology.name}'",
        )


@dataclass
class EncoderConfig:
    """
    Spatio-temporal graph convolution encoder
    """

    name: str = "stgcn"
    in_channels: int = 3
    channels: list = field(default_factory=lambda: [16, 32, 64])
    strides: list = field(default_factory=lambda: [1, 2, 1])
    temporal_kernel: int = 5
    edge_importance_weighting: bool = True
    initializer: str = "kaiming_uniform"

    def __post_init__(self):
        self.channels = [int(c) for c in self.channels]
        self.strides = [int(s) for s in self.strides]
        _check(len(self.channels) >= 1, "encoder needs at least one layer")
        _check(len(self.channels) == len(self.strides), "channels and strides must have equal length")
        _check(all(c > 0 for c in self.channels), "channels must be positive")
        _check(all(s > 0 for s in self.strides), "strides must be positive")
        _check(self.temporal_kernel % 2 == 1, "temporal_kernel must be odd")

    @property
    def out_channels(self):
        return self.channels[-1]


@dataclass
class MhsamConfig:
    """
    Multi-head self-attention mask
    """

    heads: int = 8
    lam: float = 2.0
    key_mask: str = "shared"

    def __post_init__(self):
        _check(self.heads >= 1, "heads must be at least 1")
        _check(self.lam > 0, "lambda must be positive")
        _check(self.key_mask in ("shared", "momentum"), "key_mask must be 'shared' or 'momentum'")


@dataclass
class LossWeights:
    temperature: float = 0.2
    mu: float = 0.5

    def __post_init__(self):
        _check(self.temperature > 0, "temperature must be positive")
        _check(0 < self.mu < 1, "mu must lie in (0, 1)")


@dataclass
class TrainConfig:
    """
    Pretraining loop, optimizer, momentum machinery and ablation switches
    """

    base_lr: float = 0.1
    sgd_momentum: float = 0.9
    nesterov: bool = False
    weight_decay: float = 1e-4
    epochs: int = 50
    lr_drop_epoch: int = 40
    batch_size: int = 32
    momentum: float = 0.996
    iter_max: int = 0
    feature_dim: int = 128
    queue_size: int = 512
    predictor_layers: int = 2
    clip_norm: float = 0.0
    stream: str = "joint"
    disable_local: bool = False
    disable_negative_pair: bool = False
    disable_ns: bool = False
    seed: int = 1
    precision: str = "float32"
    knn_interval: int = 10
    workers: int = 1
    progress: bool = True
    debug_nan_checks: bool = True
    data_path: str = ""
    eval_data_path: str = ""
    mmap: bool = False

    def __post_init__(self):
        _check(self.base_lr > 0, "base_lr must be positive")
        _check(self.epochs >= 1, "epochs must be at least 1")
        _check(0 <= self.lr_drop_epoch < self.epochs, "lr_drop_epoch must lie in [0, epochs)")
        _check(self.batch_size >= 2, "batch_size must be at least 2")
        _check(0 < self.momentum < 1, "momentum must lie in (0, 1)")
        _check(self.iter_max >= 0, "iter_max must be >= 0 (0 = total optimizer steps)")
        _check(self.queue_size >= 1, "queue_size must be positive")
        _check(self.predictor_layers in (1, 2), "predictor_layers must be 1 or 2")
        _check(self.clip_norm >= 0, "clip_norm must be >= 0 (0 disables clipping)")
        _check(self.precision in ("float32", "float64"), "precision must be float32 or float64")
        _check(self.workers >= 1, "workers must be at least 1")
        _check(self.knn_interval >= 1, "knn_interval must be at least 1")
        try:
            self.stream = normalise_stream(self.stream)
        except ValueError as err:
            raise InvalidConfigError(str(err))


@dataclass
class ProbeConfig:
    """
    Downstream evaluation protocols
    """

    knn_k: int = 1
    linear_lr: float = 0.1
    linear_epochs: int = 100
    linear_drop_epoch: int = 60
    linear_batch_size: int = 32
    linear_momentum: float = 0.9
    linear_weight_decay: float = 0.0
    finetune_lr: float = 0.05
    finetune_momentum: float = 0.9
    finetune_epochs: int = 30
    finetune_patience: int = 5
    finetune_factor: float = 0.1
    label_fraction: float = 1.0

    def __post_init__(self):
        _check(self.knn_k >= 1, "knn_k must be at least 1")
        _check(self.linear_lr > 0 and self.finetune_lr > 0, "probe learning rates must be positive")
        _check(self.linear_epochs >= 0 and self.finetune_epochs >= 0, "probe epochs must be >= 0")
        _check(0 < self.label_fraction <= 1, "label_fraction must lie in (0, 1]")
        _check(0 < self.finetune_factor < 1, "finetune_factor must lie in (0, 1)")
        _check(0 <= self.finetune_momentum < 1, "finetune_momentum must lie in [0, 1)")


@dataclass
class RunConfig:
    topology: str = "desk9"
    synth: SynthConfig = field(default_factory=SynthConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    mhsam: MhsamConfig = field(default_factory=MhsamConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def __post_init__(self):
        _check(self.topology in TOPOLOGIES, f"unknown topology '{self.topology}'")
        self.augment.validate_for(self.get_topology())
        _check(
            self.encoder.out_channels % self.mhsam.heads == 0,
            f"feature channels {self.encoder.out_channels} not divisible by {self.mhsam.heads} heads",
        )

    def get_topology(self):
        return get_topology(self.topology)

    def replace(self, **sections):
        """
        Copy with whole sections or individual flat keys replaced
        """
        flat = to_flat(self)
        for key, value in sections.items():
            if key not in KEYS:
                raise ConfigError(f"unknown config key '{key}'")
            flat[key] = value
        return from_flat(flat)


# flat key -> (section, field, type). Aliases share a target.
KEYS = {
    "topology": (None, "topology", str),
    # synthetic data
    "class_count": ("synth", "class_count", int),
    "samples_per_class": ("synth", "samples_per_class", int),
    "test_samples_per_class": ("synth", "test_samples_per_class", int),
    "frames": ("synth", "frames", int),
    "persons": ("synth", "persons", int),
    "noise": ("synth", "noise", float),
    "swing_amplitude": ("synth", "swing_amplitude", float),
    "base_frequency": ("synth", "base_frequency", float),
    "sway": ("synth", "sway", float),
    "translation_jitter": ("synth", "translation_jitter", float),
    "scale_jitter": ("synth", "scale_jitter", float),
    # normal augmentation
    "window_size": ("augment", "window_size", int),
    "shear_amplitude": ("augment", "shear_amplitude", float),
    "temperal_padding_ratio": ("augment", "temporal_padding_ratio", float),
    "temporal_padding_ratio": ("augment", "temporal_padding_ratio", float),
    # data mixing augmentation
    "spacial_l": ("augment", "spatial_l", int),
    "spatial_l": ("augment", "spatial_l", int),
    "spacial_u": ("augment", "spatial_u", int),
    "spatial_u": ("augment", "spatial_u", int),
    "temporal_l": ("augment", "temporal_l", int),
    "temporal_u": ("augment", "temporal_u", int),
    "swap_mode": ("augment", "swap_mode", str),
    "spatial_mode": ("augment", "spatial_mode", str),
    # encoder
    "encoder": ("encoder", "name", str),
    "in_channels": ("encoder", "in_channels", int),
    "channels": ("encoder", "channels", list),
    "strides": ("encoder", "strides", list),
    "temporal_kernel": ("encoder", "temporal_kernel", int),
    "edge_importance_weighting": ("encoder", "edge_importance_weighting", bool),
    "initializer": ("encoder", "initializer", str),
    # attention mask
    "heads": ("mhsam", "heads", int),
    "lambda": ("mhsam", "lam", float),
    "key_mask": ("mhsam", "key_mask", str),
    # contrastive framework
    "temperature": ("loss", "temperature", float),
    "mu": ("loss", "mu", float),
    "feature_dim": ("train", "feature_dim", int),
    "queue_size": ("train", "queue_size", int),
    "momentum": ("train", "momentum", float),
    "iter_max": ("train", "iter_max", int),
    "predictor_layers": ("train", "predictor_layers", int),
    # optimizer and schedule
    "base_lr": ("train", "base_lr", float),
    "sgd_momentum": ("train", "sgd_momentum", float),
    "nesterov": ("train", "nesterov", bool),
    "weight_decay": ("train", "weight_decay", float),
    "epochs": ("train", "epochs", int),
    "lr_drop_epoch": ("train", "lr_drop_epoch", int),
    "batch_size": ("train", "batch_size", int),
    "clip_norm": ("train", "clip_norm", float),
    # run
    "stream": ("train", "stream", str),
    "disable_local": ("train", "disable_local", bool),
    "disable_negative_pair": ("train", "disable_negative_pair", bool),
    "disable_ns": ("train", "disable_ns", bool),
    "seed": ("train", "seed", int),
    "precision": ("train", "precision", str),
    "knn_interval": ("train", "knn_interval", int),
    "workers": ("train", "workers", int),
    "progress": ("train", "progress", bool),
    "debug_nan_checks": ("train", "debug_nan_checks", bool),
    "data_path": ("train", "data_path", str),
    "eval_data_path": ("train", "eval_data_path", str),
    "mmap": ("train", "mmap", bool),
    # evaluation protocols
    "knn_k": ("probe", "knn_k", int),
    "linear_lr": ("probe", "linear_lr", float),
    "linear_epochs": ("probe", "linear_epochs", int),
    "linear_drop_epoch": ("probe", "linear_drop_epoch", int),
    "linear_batch_size": ("probe", "linear_batch_size", int),
    "linear_momentum": ("probe", "linear_momentum", float),
    "linear_weight_decay": ("probe", "linear_weight_decay", float),
    "finetune_lr": ("probe", "finetune_lr", float),
    "finetune_momentum": ("probe", "finetune_momentum", float),
    "finetune_epochs": ("probe", "finetune_epochs", int),
    "finetune_patience": ("probe", "finetune_patience", int),
    "finetune_factor": ("probe", "finetune_factor", float),
    "label_fraction": ("probe", "label_fraction", float),
}

# canonical key of each target, used when writing a config back out
CANONICAL = {}
for _key, _target in KEYS.items():
    CANONICAL.setdefault(_target[:2], _key)

SECTIONS = {
    "synth": SynthConfig,
    "augment": AugmentConfig,
    "encoder": EncoderConfig,
    "mhsam": MhsamConfig,
    "loss": LossWeights,
    "train": TrainConfig,
    "probe": ProbeConfig,
}


def parse_value(key, raw):
    """
    Convert a raw string to the declared type of key
    """
    kind = KEYS[key][2]
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind is list:
            return [int(item) for item in raw.replace(",", " ").split()]
        if kind is str:
            return raw.strip("\"'")
        return kind(raw)
    except ValueError:
        raise ConfigError(f"invalid value for '{key}': {raw!r} (expected {kind.__name__})")


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(str(v) for v in value)
    return str(value)


def parse_lines(lines, source="<config>"):
    """
    Parse "key = value" lines into a dict of typed values
    """
    values = {}
    for line_number, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_number}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key == "preset":
            values["preset"] = raw.strip("\"'")
            continue
        if key not in KEYS:
            raise ConfigError(f"{source}:{line_number}: unknown config key '{key}'")
        values[key] = parse_value(key, raw)
    return values


def read_preset(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'. Must be one of {list(PRESETS)}")
    path = PRESET_DIR / f"{name}.cfg"
    with open(path, "r") as handle:
        return parse_lines(handle, str(path))


def from_flat(values):
    """
    Build a RunConfig from a flat dict of key -> typed value
    """
    sections = {name: {} for name in SECTIONS}
    top = {}
    for key, value in values.items():
        if key == "preset":
            continue
        section, name, _ = KEYS[key]
        if section is None:
            top[name] = value
        else:
            sections[section][name] = value
    return RunConfig(
        **top, **{name: SECTIONS[name](**kwargs) for name, kwargs in sections.items()}
    )


def to_flat(cfg):
    """
    Flatten a RunConfig into canonical key -> value
    """
    flat = {CANONICAL[(None, "topology")]: cfg.topology}
    for section in SECTIONS:
        for f in dataclasses.fields(getattr(cfg, section)):
            flat[CANONICAL[(section, f.name)]] = getattr(getattr(cfg, section), f.name)
    return flat


def load_config(path=None, preset="desk", overrides=None):
    """
    Load a run configuration

    :param path: config file. Its own 'preset' key takes precedence over preset
    :param preset: base preset when the file does not name one
    :param overrides: extra key -> value (strings are parsed) applied last
    :return: RunConfig
    """
    file_values = {}
    if path is not None:
        with open(path, "r") as handle:
            file_values = parse_lines(handle, str(path))

    values = read_preset(file_values.pop("preset", preset))
    values.update(file_values)
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key '{key}'")
        values[key] = parse_value(key, value) if isinstance(value, str) else value

    cfg = from_flat(values)
    logger.debug(f"configuration resolved from {path or 'preset ' + preset}")
    return cfg


def write_config(cfg, path):
    """
    Write the fully resolved configuration so a run can be rebuilt exactly
    """
    with open(path, "w") as handle:
        handle.write("# resolved SkeAttnCLR configuration\n")
        for key, value in to_flat(cfg).items():
            handle.write(f"{key} = {format_value(value)}\n")
