"""Run configuration: nested scenario / training / harness blocks in one JSON file."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigurationError
from .harness import DETECTOR_IDS
from .net import TrainingConfig
from .scenario import SNR_GRID_DB, ScenarioConfig, scenario_preset


@dataclass
class HarnessConfig:
    pfa: float = 1e-2
    snr_grid: list = field(default_factory=lambda: list(SNR_GRID_DB))
    n_trials: int = 5000
    n_h0: int = 100000
    n_test: int = 100000
    n_scm: int = 10000
    scan_points: int = 64
    estimator: str = "scm"
    seed: int = 0
    workers: int = 0

    def __post_init__(self):
        if not 0 < self.pfa <= 1:
            raise ConfigurationError(f"pfa must lie in (0, 1], got {self.pfa}")
        if self.estimator not in ("scm", "tyler", "identity"):
            raise ConfigurationError(f"unsupported estimator {self.estimator!r}")
        self.snr_grid = [float(s) for s in self.snr_grid]


@dataclass
class RunConfig:
    scenario_id: str = "a"
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    detectors: list = field(default_factory=lambda: list(DETECTOR_IDS))
    output_dir: str = "."

    def to_dict(self):
        d = {"scenario_id": self.scenario_id,
             "scenario": asdict(self.scenario),
             "training": self.training.snapshot(),
             "harness": asdict(self.harness),
             "detectors": list(self.detectors),
             "output_dir": self.output_dir}
        return d

    def config_hash(self):
        """Hash of everything that affects results (output_dir and workers excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        d["harness"].pop("workers")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_BLOCKS = {"scenario": ScenarioConfig, "training": TrainingConfig, "harness": HarnessConfig}


def _coerce(cls, key, value):
    names = {f.name: f for f in fields(cls)}
    if key not in names:
        raise ConfigurationError(f"unknown {cls.__name__} field {key!r}")
    default = getattr(cls(), key)
    if isinstance(value, str) and not isinstance(default, str):
        if isinstance(default, bool):
            if value.lower() not in ("true", "false", "1", "0"):
                raise ConfigurationError(f"{key} expects a boolean, got {value!r}")
            return value.lower() in ("true", "1")
        if isinstance(default, (list, tuple)):
            return [float(v) for v in value.split(",") if v.strip()]
        try:
            return type(default)(float(value)) if isinstance(default, int) else type(default)(value)
        except ValueError:
            raise ConfigurationError(f"{key} expects {type(default).__name__}, got {value!r}") from None
    return value


def build_config(data=None, overrides=()):
    """Config from a nested dict plus ``block.key=value`` overrides (overrides win).

    ``scenario_id`` of ``a``/``b``/``c`` seeds the scenario block with that preset.
    """
    data = json.loads(json.dumps(data or {}))
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form path=value")
        path, value = item.split("=", 1)
        parts = path.strip().split(".")
        if len(parts) == 1:
            data[parts[0]] = value
        elif len(parts) == 2 and parts[0] in _BLOCKS:
            data.setdefault(parts[0], {})[parts[1]] = value
        else:
            raise ConfigurationError(f"unknown config path {path!r}")

    scenario_id = str(data.get("scenario_id", "a"))
    try:
        base = asdict(scenario_preset(scenario_id)) if scenario_id in ("a", "b", "c") else {}
    except ConfigurationError:
        base = {}
    blocks = {}
    for name, cls in _BLOCKS.items():
        raw = dict(base) if name == "scenario" else {}
        raw.update(data.get(name, {}))
        try:
            blocks[name] = cls(**{k: _coerce(cls, k, v) for k, v in raw.items()})
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None
    detectors = data.get("detectors", list(DETECTOR_IDS))
    if isinstance(detectors, str):
        detectors = [d.strip() for d in detectors.split(",") if d.strip()]
    unknown = set(detectors) - set(DETECTOR_IDS)
    if unknown:
        raise ConfigurationError(f"unknown detectors {sorted(unknown)}")
    known = {"scenario_id", "detectors", "output_dir", *_BLOCKS}
    extra = set(data) - known
    if extra:
        raise ConfigurationError(f"unknown config keys {sorted(extra)}")
    return RunConfig(scenario_id, blocks["scenario"], blocks["training"], blocks["harness"],
                     list(detectors), str(data.get("output_dir", ".")))


def load_config(path=None, overrides=()):
    data = {}
    if path:
        try:
            with open(path) as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return build_config(data, overrides)
