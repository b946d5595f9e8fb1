"""Experiment configuration: nested dataclasses loaded from YAML.

Precedence (lowest first): defaults, config file, environment
(``PREFREWARD_OUTPUT_DIR`` and ``PREFREWARD_THREADS`` only), command-line flags.
"""
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import yaml

from .baselines import SofaLacCoeffs
from .cohort.synthetic import SynthConfig
from .exceptions import ConfigError
from .preference import PrefTrainConfig

ENV_OUTPUT_DIR = "PREFREWARD_OUTPUT_DIR"
ENV_THREADS = "PREFREWARD_THREADS"


@dataclass
class RLConfig:
    hidden: int = 128
    lr: float = 1e-3
    gamma: float = 0.99
    batch_size: int = 256
    cql_alpha: float = 0.5
    target_sync_interval: int = 1000
    huber_delta: float = 1.0
    epochs: int = 30
    grad_clip_norm: float = 10.0
    precision: str = "float32"

    def validate(self):
        if self.hidden < 1 or self.batch_size < 1 or self.target_sync_interval < 1 or self.epochs < 0:
            raise ConfigError("rl: hidden, batch_size, target_sync_interval must be >= 1 and epochs >= 0")
        if not 0 <= self.gamma <= 1:
            raise ConfigError("rl.gamma must lie in [0, 1]")
        if self.lr <= 0 or self.cql_alpha < 0 or self.huber_delta <= 0:
            raise ConfigError("rl: lr and huber_delta must be positive, cql_alpha non-negative")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("rl.precision must be 'float32' or 'float64'")


@dataclass
class BaselineConfig:
    mortality_R: float = 15.0
    sofa_lac: SofaLacCoeffs = field(default_factory=SofaLacCoeffs)
    news2_outcome_die: float = -1.0
    news2_outcome_survive: float = 0.0

    def validate(self):
        if self.mortality_R <= 0:
            raise ConfigError("baselines.mortality_R must be positive")


@dataclass
class ForestSettings:
    n_estimators: int = 200
    max_depth: int = 12
    n_repeats: int = 5
    test_frac: float = 0.25
    max_rows: int = 6000

    def validate(self):
        if self.n_estimators < 1 or self.max_depth < 1 or self.n_repeats < 1:
            raise ConfigError("evaluation.forest sizes must be >= 1")
        if not 0 < self.test_frac < 1:
            raise ConfigError("evaluation.forest.test_frac must lie in (0, 1)")


@dataclass
class EvalConfig:
    split: str = "test"
    severity_threshold: float = 8.0
    n_boot: int = 1000
    on_regression_error: str = "fail"
    importance_policies: tuple = ("clinician", "cnpr")
    forest: ForestSettings = field(default_factory=ForestSettings)

    def validate(self):
        if self.split not in ("train", "test", "all"):
            raise ConfigError("evaluation.split must be train, test or all")
        if self.on_regression_error not in ("fail", "record"):
            raise ConfigError("evaluation.on_regression_error must be 'fail' or 'record'")
        if self.n_boot < 0:
            raise ConfigError("evaluation.n_boot must be >= 0")
        if not all(isinstance(n, str) for n in self.importance_policies):
            raise ConfigError("evaluation.importance_policies must be a list of policy names")
        self.forest.validate()


@dataclass
class ExperimentConfig:
    seed: int = 1
    output_dir: str = "runs/default"
    threads: int = 1
    cohort_source: str = "synthetic"
    reduced_features: bool = False
    train_frac: float = 0.8
    synthetic: SynthConfig = field(default_factory=SynthConfig)
    reward: PrefTrainConfig = field(default_factory=PrefTrainConfig)
    rl: RLConfig = field(default_factory=RLConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        # the global seed and feature flag are the single source for the nested sections
        self.reward.seed = self.seed
        self.synthetic.reduced_features = self.reduced_features

    def validate(self):
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not 0 < self.train_frac < 1:
            raise ConfigError("train_frac must lie in (0, 1)")
        if self.cohort_source == "synthetic":
            self.synthetic.validate()
        for section in (self.reward, self.rl, self.baselines, self.evaluation):
            section.validate()
        return self

    def to_dict(self, include_output_dir=True):
        d = _plain(asdict(self))
        d["reward"].pop("seed")
        d["synthetic"].pop("reduced_features")
        if not include_output_dir:
            d.pop("output_dir")
        return d

    @classmethod
    def from_dict(cls, d):
        return _build(cls, d or {}, "")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, d, prefix):
    if not isinstance(d, dict):
        raise ConfigError(f"section '{prefix or 'root'}' must be a mapping")
    known = {f.name: f for f in fields(cls)}
    hidden = {"reward": ("seed",), "synthetic": ("reduced_features",)}.get(prefix.rstrip("."), ())
    unknown = set(d) - set(known) - set(hidden)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in sorted(unknown))}")
    kw = {}
    for name, value in d.items():
        if name in hidden:
            continue
        f = known[name]
        default = f.default_factory() if callable(f.default_factory) else f.default
        if is_dataclass(default):
            kw[name] = _build(type(default), value, f"{prefix}{name}.")
        else:
            kw[name] = _coerce(value, default, prefix + name)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid section '{prefix or 'root'}': {e}") from None


def _coerce(value, default, key):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a dot, such as 1e-3, as strings
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"{key} must be a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list, got {value!r}")
        return tuple(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def load_config_file(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"config file {path} is not valid YAML: {e}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    return data or {}


def set_dotted(d, key, value):
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: '{p}' is not a section")
    node[parts[-1]] = value


def parse_override(text):
    """``key.path=value`` with the value parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        return key.strip(), yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse override {text!r}: {e}") from None


def resolve_config(path=None, overrides=(), environ=None):
    """Merge defaults, file, environment and ``(dotted_key, value)`` overrides."""
    environ = os.environ if environ is None else environ
    data = load_config_file(path) if path else {}
    if environ.get(ENV_OUTPUT_DIR):
        data["output_dir"] = environ[ENV_OUTPUT_DIR]
    if environ.get(ENV_THREADS):
        try:
            data["threads"] = int(environ[ENV_THREADS])
        except ValueError:
            raise ConfigError(f"{ENV_THREADS} must be an integer, got {environ[ENV_THREADS]!r}") from None
    for key, value in overrides:
        set_dotted(data, key, value)
    return ExperimentConfig.from_dict(data).validate()


def dump_config(cfg, path, include_output_dir=False):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(include_output_dir=include_output_dir), fh, sort_keys=False)
