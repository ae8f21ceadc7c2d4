"""Run manifests: a strict, versioned YAML description of one run.

Precedence for every setting is command-line flag, then environment
variable, then manifest value, then built-in default. Unknown keys are
errors, reported with their dotted path.
"""

from __future__ import annotations

import copy
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .engine import ConfigError, EsConfig

MANIFEST_VERSION = 1

# field path -> environment variable
ENV_VARS = {
    "es.population_size": "SEEDES_POPULATION_SIZE",
    "es.noise_scale": "SEEDES_NOISE_SCALE",
    "es.learning_rate": "SEEDES_LEARNING_RATE",
    "es.iterations": "SEEDES_ITERATIONS",
    "es.workers": "SEEDES_WORKERS",
    "es.master_seed": "SEEDES_MASTER_SEED",
    "output_dir": "SEEDES_OUTPUT_DIR",
    "checkpoint_every": "SEEDES_CHECKPOINT_EVERY",
    "distributed.address": "SEEDES_COORDINATOR_ADDRESS",
    "distributed.timeout": "SEEDES_TIMEOUT",
    "distributed.heartbeat_interval": "SEEDES_HEARTBEAT_INTERVAL",
}


@dataclass
class ModelSpec:
    kind: str = "sphere"            # sphere | tinylm
    dim: int = 10_000
    layers: int = 4
    init_seed: int = 1
    target_seed: int = 2
    snapshot: str | None = None     # tinylm: snapshot path, None for the shipped base model


@dataclass
class TaskSpec:
    kind: str = "sphere"            # sphere | conciseness | countdown
    dataset: str | None = None
    max_new_tokens: int = 32
    batch_size: int | None = None


@dataclass
class DistSpec:
    address: str = "127.0.0.1:0"
    timeout: float = 300.0
    heartbeat_interval: float = 5.0
    spawn_workers: bool = True


@dataclass
class RunManifest:
    es: EsConfig = field(default_factory=EsConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    task: TaskSpec = field(default_factory=TaskSpec)
    output_dir: str = "runs/run"
    checkpoint_every: int = 100
    distributed: DistSpec = field(default_factory=DistSpec)
    manifest_version: int = MANIFEST_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        return {"manifest_version": d.pop("manifest_version"), **d}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def validate(self) -> "RunManifest":
        errors = []
        try:
            self.es.validate()
        except ConfigError as exc:
            errors += [f"es.{e}" for e in exc.errors]
        m, t = self.model, self.task
        if m.kind not in ("sphere", "tinylm"):
            errors.append(f"model.kind: unknown model {m.kind!r} (sphere, tinylm)")
        if m.kind == "sphere" and not (isinstance(m.dim, int) and isinstance(m.layers, int)
                                       and m.dim >= m.layers >= 1):
            errors.append("model.dim/model.layers: need dim >= layers >= 1")
        if t.kind not in ("sphere", "conciseness", "countdown"):
            errors.append(f"task.kind: unknown task {t.kind!r} (sphere, conciseness, countdown)")
        if (m.kind == "sphere") != (t.kind == "sphere"):
            errors.append("task.kind: the sphere task goes with the sphere model only")
        if t.kind == "countdown" and not t.dataset:
            errors.append("task.dataset: the countdown task needs a dataset file")
        if not isinstance(t.max_new_tokens, int) or t.max_new_tokens < 1:
            errors.append("task.max_new_tokens: must be an integer >= 1")
        if t.batch_size is not None and (not isinstance(t.batch_size, int) or t.batch_size < 1):
            errors.append("task.batch_size: must be an integer >= 1 or null")
        if not isinstance(self.checkpoint_every, int) or self.checkpoint_every < 0:
            errors.append("checkpoint_every: must be an integer >= 0 (0 disables)")
        d = self.distributed
        if not (isinstance(d.timeout, (int, float)) and d.timeout > 0):
            errors.append("distributed.timeout: must be > 0")
        if not (isinstance(d.heartbeat_interval, (int, float)) and d.heartbeat_interval >= 0):
            errors.append("distributed.heartbeat_interval: must be >= 0")
        if self.manifest_version != MANIFEST_VERSION:
            errors.append(f"manifest_version: expected {MANIFEST_VERSION}, "
                          f"got {self.manifest_version!r}")
        if errors:
            raise ConfigError(errors)
        return self


_SECTIONS = {"es": EsConfig, "model": ModelSpec, "task": TaskSpec, "distributed": DistSpec}


def _coerce(value, default, path: str, errors: list):
    """Accept YAML scalars that already have the right type (ints for floats too)."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            errors.append(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{path}: expected a number, got {value!r}")
            return value
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{path}: expected an integer, got {value!r}")
        return value
    return value


def from_dict(data: dict) -> RunManifest:
    if not isinstance(data, dict):
        raise ConfigError("manifest: expected a mapping at the top level")
    errors = []
    man = RunManifest()
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                errors.append(f"{key}: expected a mapping")
                continue
            section = getattr(man, key)
            names = {f.name for f in fields(section)}
            for sub, v in value.items():
                if sub not in names:
                    errors.append(f"{key}.{sub}: unknown key")
                    continue
                setattr(section, sub, _coerce(v, getattr(section, sub), f"{key}.{sub}", errors))
        elif key in ("output_dir", "checkpoint_every", "manifest_version"):
            setattr(man, key, _coerce(value, getattr(man, key), key, errors))
        else:
            errors.append(f"{key}: unknown key")
    if "manifest_version" not in data:
        errors.append("manifest_version: missing (expected 1)")
    if errors:
        raise ConfigError(errors)
    return man


def load_manifest(path) -> RunManifest:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    return from_dict(data)


def parse_manifest(text: str) -> RunManifest:
    try:
        return from_dict(yaml.safe_load(text))
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML ({exc})") from None


def _set_path(man: RunManifest, path: str, raw, source: str) -> None:
    parts = path.split(".")
    obj = man
    for p in parts[:-1]:
        obj = getattr(obj, p)
    current = getattr(obj, parts[-1])
    if isinstance(raw, str) and not isinstance(current, str) and current is not None:
        try:
            if isinstance(current, bool):
                value = raw.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                value = int(raw, 0)
            elif isinstance(current, float):
                value = float(raw)
            else:
                value = raw
        except ValueError:
            raise ConfigError(f"{path}: cannot parse {raw!r} from {source}") from None
    else:
        value = raw
    setattr(obj, parts[-1], value)


def apply_overrides(man: RunManifest, flags: dict, environ=None) -> RunManifest:
    """Return a copy with environment variables, then flags, applied on top."""
    environ = os.environ if environ is None else environ
    man = copy.deepcopy(man)
    for path, var in ENV_VARS.items():
        if var in environ:
            _set_path(man, path, environ[var], f"${var}")
    for path, value in flags.items():
        if value is not None:
            _set_path(man, path, value, "command line")
    return man


def preset(name: str) -> RunManifest:
    """Built-in starting points.

    sphere          dim 10^4, T=100, sigma 0.01, alpha 0.2
    sphere-large    dim 10^5, T=2000, sigma 0.01, alpha 0.1
    conciseness     shipped TinyLm, sigma 0.001, alpha sigma/2, T=500
    conciseness-desk  shipped TinyLm, sigma 0.015, alpha sigma/2, T=300
    """
    if name == "sphere":
        return RunManifest(es=EsConfig(30, 0.01, 0.2, 100), output_dir="runs/sphere")
    if name == "sphere-large":
        return RunManifest(es=EsConfig(30, 0.01, 0.1, 2000),
                           model=ModelSpec(dim=100_000, layers=8), output_dir="runs/sphere-large")
    if name.startswith("conciseness"):
        sigma = {"conciseness": 0.001, "conciseness-desk": 0.015}.get(name)
        if sigma is None:
            raise ConfigError(f"unknown preset {name!r}")
        return RunManifest(es=EsConfig(30, sigma, sigma / 2, 300 if sigma > 0.005 else 500),
                           model=ModelSpec(kind="tinylm"),
                           task=TaskSpec(kind="conciseness", dataset="conciseness-train"),
                           output_dir=f"runs/{name}")
    raise ConfigError(f"unknown preset {name!r}")


PRESETS = ["sphere", "sphere-large", "conciseness", "conciseness-desk"]
CONCISENESS_SIGMAS = (0.0005, 0.001, 0.0015)
