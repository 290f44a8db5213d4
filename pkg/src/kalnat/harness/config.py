"""Experiment configuration: one dataclass, a key = value file format, validation.

File format: one ``key = value`` pair per line, ``#`` starts a comment,
blank lines are ignored, unknown keys are an error.
"""

from dataclasses import asdict, dataclass, fields, replace

from ..belief import Backend
from ..errors import ConfigError, InvalidArgumentError
from ..robust import LambdaScope, RhatMethod, parse_enum

SHOTS = (1, 2, 4, 8, 16)
OOD_MODES = ("FeatureNoise", "ClusterShift", "LabelShuffle")
OPTIMIZERS = ("Kalman", "SGD")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    # synthetic task
    classes: int = 8
    shots: int = 16
    d_in: int = 32
    d_embed: int = 16
    rank: int = 2
    feature_noise: float = 0.1
    misalignment: float = 3.0
    modal_corr: float = 1.0
    test_per_class: int = 50
    tau: float = 0.07
    # training loop
    batch_size: int = 10
    epochs: int = 20
    optimizer: str = "Kalman"
    lr: float = 0.001
    # filter
    q: float = 1e-4
    sigma0: float = 6.0
    alpha: float = 0.1
    beta: float = 0.98
    epsilon: float = 0.3
    rhat_method: str = "FirstOrder"
    lambda_scope: str = "Alg1"
    backend: str = "Full"
    # out-of-distribution injection
    ood_fraction: float = 0.0
    ood_severity: float = 3.0
    ood_mode: str = "FeatureNoise"

    def __post_init__(self):
        validate(self)

    def with_overrides(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return asdict(self)

    @property
    def steps_per_epoch(self):
        return (self.classes * self.shots) // self.batch_size

    @property
    def total_steps(self):
        return self.steps_per_epoch * self.epochs


FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _check(cond, field, message):
    if not cond:
        raise ConfigError(f"{field}: {message}", field=field)


def validate(c):
    for name in ("seed", "classes", "shots", "d_in", "d_embed", "rank", "test_per_class", "batch_size", "epochs"):
        v = getattr(c, name)
        _check(isinstance(v, int) and not isinstance(v, bool), name, f"must be an integer, got {v!r}")
    _check(c.seed >= 0, "seed", "must be >= 0")
    _check(c.classes >= 1, "classes", "must be >= 1")
    _check(c.shots in SHOTS, "shots", f"must be one of {SHOTS}, got {c.shots}")
    _check(c.d_in >= 1, "d_in", "must be >= 1")
    _check(c.d_embed >= 1, "d_embed", "must be >= 1")
    _check(1 <= c.rank <= min(c.d_in, c.d_embed), "rank", "must lie in [1, min(d_in, d_embed)]")
    _check(c.feature_noise >= 0, "feature_noise", "must be >= 0")
    _check(c.misalignment >= 0, "misalignment", "must be >= 0")
    _check(0 <= c.modal_corr <= 1, "modal_corr", "must lie in [0, 1]")
    _check(c.test_per_class >= 1, "test_per_class", "must be >= 1")
    _check(c.tau > 0, "tau", "must be > 0")
    _check(c.batch_size >= 1, "batch_size", "must be >= 1")
    _check(c.epochs >= 1, "epochs", "must be >= 1")
    _check(
        c.classes * c.shots >= c.batch_size,
        "batch_size",
        f"not enough samples for one batch ({c.classes} classes x {c.shots} shots < {c.batch_size})",
    )
    _check(c.optimizer in OPTIMIZERS, "optimizer", f"must be one of {OPTIMIZERS}")
    _check(c.lr > 0, "lr", "must be > 0")
    _check(c.q >= 0, "q", "must be >= 0")
    _check(c.sigma0 > 0, "sigma0", "must be > 0")
    _check(c.alpha >= 0, "alpha", "must be >= 0")
    _check(0 < c.beta < 1, "beta", "must lie in (0, 1)")
    _check(c.epsilon > 0, "epsilon", "must be > 0")
    for name, enum in (("rhat_method", RhatMethod), ("lambda_scope", LambdaScope), ("backend", Backend)):
        try:
            parse_enum(enum, getattr(c, name))
        except InvalidArgumentError as exc:
            raise ConfigError(f"{name}: {exc}", field=name) from None
    _check(0 <= c.ood_fraction <= 1, "ood_fraction", "must lie in [0, 1]")
    _check(c.ood_severity >= 0, "ood_severity", "must be >= 0")
    _check(c.ood_mode in OOD_MODES, "ood_mode", f"must be one of {OOD_MODES}")


def coerce(key, text):
    """Convert a string value to the declared type of ``key``."""
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown key {key!r}", field=key)
    kind = FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}", field=key) from None
    return text


def parse_config_text(text):
    """Parse ``key = value`` lines into a dict of typed values."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}", field=key)
        values[key] = coerce(key, value)
    return values


def load_config(path=None, **overrides):
    values = {}
    if path is not None:
        with open(path) as fh:
            values = parse_config_text(fh.read())
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - set(FIELD_TYPES)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown key {key!r}", field=key)
    return ExperimentConfig(**values)


def format_config(config):
    return "".join(f"{k} = {v}\n" for k, v in config.as_dict().items())
