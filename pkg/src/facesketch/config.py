"""Training configuration and its flat ``key = value`` file form."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

from .discriminator import DiscriminatorConfig
from .errors import ConfigError
from .generator import GeneratorConfig
from .losses import LossWeights


@dataclass
class TrainConfig:
    data_root: str = ""
    data_split: str = "train"
    parser: str = "celebamask"
    epochs: int = 200
    lr0: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch: int = 1
    seed: int = 0
    decay_epochs: int = 100
    checkpoint_every: int = 10
    weights: LossWeights = field(default_factory=LossWeights)
    literal_gan: bool = False
    variance_mode: str = "intra"
    use_saliency: bool = True
    use_layout: bool = True
    use_arloss: bool = True
    use_perceptual: bool = True
    use_bce: bool = True
    gen_widths: tuple[int, ...] = (64, 128, 256, 512, 512, 512, 512)
    disc_widths: tuple[int, ...] = (64, 128, 256, 512)
    si_hidden: int = 128
    skip_connections: bool = False
    leaky_slope: float = 0.2
    extractor_path: str = ""
    parser_path: str = ""
    oracle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.lr0 <= 0:
            raise ConfigError("train.lr0 must be > 0")
        if self.batch < 1:
            raise ConfigError("train.batch must be >= 1")
        if self.variance_mode not in ("intra", "literal"):
            raise ConfigError("loss.variance_mode must be 'intra' or 'literal'")

    def generator_config(self):
        return GeneratorConfig(
            widths=tuple(self.gen_widths), use_saliency=self.use_saliency,
            use_layout=self.use_layout, si_hidden=self.si_hidden,
            leaky_slope=self.leaky_slope, skip_connections=self.skip_connections,
        )

    def discriminator_config(self):
        return DiscriminatorConfig(
            widths=tuple(self.disc_widths), use_saliency=self.use_saliency,
            leaky_slope=self.leaky_slope,
        )

    def image_size(self):
        return self.generator_config().image_size

    def with_(self, **changes):
        return replace(self, **changes)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# file key -> (attribute, parser); "weights.x" addresses LossWeights fields
KEYS = {
    "data.root": ("data_root", str),
    "data.split": ("data_split", str),
    "data.parser": ("parser", str),
    "train.epochs": ("epochs", int),
    "train.lr0": ("lr0", float),
    "train.beta1": ("beta1", float),
    "train.beta2": ("beta2", float),
    "train.batch": ("batch", int),
    "train.seed": ("seed", int),
    "train.decay_epochs": ("decay_epochs", int),
    "train.checkpoint_every": ("checkpoint_every", int),
    "loss.alpha": ("weights.alpha", float),
    "loss.lambda": ("weights.lam", float),
    "loss.delta": ("weights.delta", float),
    "loss.eta": ("weights.eta", float),
    "loss.literal_gan": ("literal_gan", _bool),
    "loss.variance_mode": ("variance_mode", str),
    "ablation.use_saliency": ("use_saliency", _bool),
    "ablation.use_layout": ("use_layout", _bool),
    "ablation.use_arloss": ("use_arloss", _bool),
    "ablation.use_perceptual": ("use_perceptual", _bool),
    "ablation.use_bce": ("use_bce", _bool),
    "model.gen_widths": ("gen_widths", _ints),
    "model.disc_widths": ("disc_widths", _ints),
    "model.si_hidden": ("si_hidden", int),
    "model.skip_connections": ("skip_connections", _bool),
    "model.leaky_slope": ("leaky_slope", float),
    "oracle.extractor_path": ("extractor_path", str),
    "oracle.parser_path": ("parser_path", str),
    "oracle.seed": ("oracle_seed", int),
}


def _get(config, attr):
    obj = config
    for part in attr.split("."):
        obj = getattr(obj, part)
    return obj


def parse_config(text):
    """Parse flat ``key = value`` text; unknown keys are an error."""
    values = {}
    weights = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown config key '{key}'")
        attr, conv = KEYS[key]
        try:
            parsed = conv(value)
        except ValueError as exc:
            raise ConfigError(f"config key '{key}': {exc}") from None
        if attr.startswith("weights."):
            weights[attr.split(".", 1)[1]] = parsed
        else:
            values[attr] = parsed
    try:
        return TrainConfig(weights=LossWeights(**weights), **values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def config_text(config):
    return "".join(f"{key} = {_fmt(_get(config, attr))}\n" for key, (attr, _) in KEYS.items())


def config_digest(config):
    return hashlib.sha256(config_text(config).encode()).hexdigest()[:12]

