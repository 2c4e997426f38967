"""
Experiment configuration: presets, file loading and dotted-path overrides.

Configurations are YAML (or JSON, which YAML reads as well) documents that
validate into ``ExperimentConfig``. Any field can be overridden by its dotted
path, e.g. ``train.lr=0.001`` or ``model.params.y0=0.5``.
"""

from collections.abc import Callable, Iterable
import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Union

from loguru import logger
from pydantic import ValidationError
import yaml

from .models import (
    ExperimentConfig,
    InitialLaw,
    InitScheme,
    ModelConfig,
    NetworkConfig,
    PriorMode,
    TrainConfig,
)
from .process_model import ProcessModelError, ProcessSpec, build_model

# Mappings whose keys are free-form, so overrides may add new entries.
OPEN_MAPPINGS = {"model.params", "sweep.axes"}


class ConfigError(ValueError):
    """Raised for configuration files or overrides that do not validate."""


def _network(hidden_layers: int, width: int) -> NetworkConfig:
    return NetworkConfig(hidden_layers=hidden_layers, width=width)


def _example1() -> ExperimentConfig:
    return ExperimentConfig(
        name="example1",
        model=ModelConfig(id="example1", params={"b": 4.0, "a": -1.0, "sigma0": 0.4, "y0": 1.0}),
        initial=InitialLaw(mean=[2.0], stddev=0.0),
        train=TrainConfig(
            lr=0.002,
            weight_decay=0.005,
            epochs=1000,
            M_s=100,
            dt=0.2,
            N=101,
            drift_net=_network(2, 150),
            diffusion_net=_network(2, 150),
            jump_net=_network(2, 150),
            init=InitScheme(kind="fan_uniform"),
        ),
        output_dir="runs/example1",
        repeats=10,
    )


def _example2() -> ExperimentConfig:
    return ExperimentConfig(
        name="example2",
        model=ModelConfig(
            id="example2",
            params={"form_sigma": "langevin", "form_beta": "langevin", "sigma0": 0.1, "beta0": 0.1, "r0": 0.05},
        ),
        initial=InitialLaw(mean=[1.0], stddev=0.0),
        train=TrainConfig(
            lr=0.003,
            weight_decay=0.02,
            epochs=500,
            M_s=400,
            dt=0.1,
            N=51,
            drift_net=_network(2, 150),
            diffusion_net=_network(2, 150),
            jump_net=_network(2, 150),
            init=InitScheme(kind="fan_uniform"),
        ),
        output_dir="runs/example2",
        repeats=5,
    )


def _example3() -> ExperimentConfig:
    # No drift network: the drift is supplied as prior information.
    return ExperimentConfig(
        name="example3",
        model=ModelConfig(id="example3", params={"c1": -0.5, "c2": -0.5, "sigma0": 0.1, "beta0": 0.1}),
        initial=InitialLaw(mean=[1.7, 1.1], stddev=0.0),
        train=TrainConfig(
            lr=0.002,
            weight_decay=0.005,
            epochs=400,
            M_s=300,
            dt=0.2,
            N=51,
            diffusion_net=_network(3, 400),
            jump_net=_network(3, 400),
            init=InitScheme(kind="gaussian", variance=1e-4),
            prior=PriorMode.DRIFT_GIVEN,
        ),
        output_dir="runs/example3",
        repeats=5,
    )


def _desk(factory: Callable[[], ExperimentConfig], epochs: int, M_s: int) -> Callable[[], ExperimentConfig]:
    def build() -> ExperimentConfig:
        config = factory()
        return config.model_copy(
            update={
                "name": f"{config.name}-desk",
                "output_dir": f"{config.output_dir}-desk",
                "train": config.train.model_copy(update={"epochs": epochs, "M_s": M_s}),
            }
        )

    return build


PRESETS: dict[str, Callable[[], ExperimentConfig]] = {
    "example1": _example1,
    "example2": _example2,
    "example3": _example3,
    "example1-desk": _desk(_example1, epochs=100, M_s=20),
    "example2-desk": _desk(_example2, epochs=100, M_s=80),
    "example3-desk": _desk(_example3, epochs=40, M_s=60),
}

PRIORS = [p.value for p in PriorMode]
FORMS = ["const", "linear", "langevin"]

# Ablation grids: fixed overrides applied to the base config plus the swept axes.
SWEEP_PRESETS: dict[str, dict[str, Any]] = {
    "initial-noise": {
        "fixed": {},
        "axes": {"initial.stddev": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]},
    },
    "noise-strength": {
        "fixed": {},
        "axes": {"model.params.sigma0": [0.2, 0.3, 0.4], "model.params.y0": [0.5, 0.75, 1.0]},
    },
    "trajectories": {
        "fixed": {},
        "axes": {"train.M_s": [100, 200, 400], "train.prior": PRIORS},
    },
    "forms": {
        "fixed": {},
        "axes": {"model.params.form_sigma": FORMS, "model.params.form_beta": FORMS, "train.prior": PRIORS},
    },
    "noise-coefficients": {
        "fixed": {"train.prior": "drift_given"},
        "axes": {
            "model.params.form_sigma,model.params.form_beta": [[f, f] for f in FORMS],
            "model.params.sigma0": [0.05, 0.1, 0.2],
            "model.params.beta0": [0.05, 0.1, 0.2],
        },
    },
    "correlation": {
        "fixed": {},
        "axes": {"model.params.c1": [-0.5, 0.0, 0.5], "model.params.c2": [-0.5, 0.0, 0.5]},
    },
    "architecture-width": {
        "fixed": {
            "model.params.c1": -0.5,
            "model.params.c2": -1.0,
            "train.M_s": 200,
            "train.diffusion_net.hidden_layers": 3,
            "train.jump_net.hidden_layers": 3,
        },
        "axes": {"train.diffusion_net.width,train.jump_net.width": [25, 50, 100, 200, 400]},
    },
    "architecture-depth": {
        "fixed": {
            "model.params.c1": -0.5,
            "model.params.c2": -1.0,
            "train.M_s": 200,
            "train.diffusion_net.width": 200,
            "train.jump_net.width": 200,
        },
        "axes": {"train.diffusion_net.hidden_layers,train.jump_net.hidden_layers": [1, 2, 4]},
    },
    "losses": {
        "fixed": {},
        "axes": {"train.loss_kind": ["decoupled_w2sq", "w2sq", "w1", "mse", "mean2var", "mmd"]},
    },
}


def get_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return PRESETS[name]()


def _set_path(data: dict[str, Any], path: str, value: Any) -> None:
    keys = path.split(".")
    node: Any = data
    for depth, key in enumerate(keys[:-1]):
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"unknown configuration field {'.'.join(keys[: depth + 1])!r}")
        node = node[key]
    leaf = keys[-1]
    parent = ".".join(keys[:-1])
    if not isinstance(node, dict) or (leaf not in node and parent not in OPEN_MAPPINGS):
        raise ConfigError(f"unknown configuration field {path!r}")
    node[leaf] = value


def apply_overrides(config: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """
    Return a copy of ``config`` with dotted-path overrides applied.

    A comma-joined path sets several fields at once: a list value is zipped
    across the paths, a scalar is applied to each.
    """
    if not overrides:
        return config
    data = copy.deepcopy(config.model_dump(mode="json"))
    for path, value in overrides.items():
        paths = [p.strip() for p in path.split(",")]
        if len(paths) > 1 and isinstance(value, list | tuple):
            if len(value) != len(paths):
                raise ConfigError(f"override {path!r} needs {len(paths)} values, got {len(value)}")
            for p, v in zip(paths, value, strict=True):
                _set_path(data, p, v)
        else:
            for p in paths:
                _set_path(data, p, value)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid override: {e}") from e


def parse_override_args(args: Iterable[str]) -> dict[str, Any]:
    """
    Parse ``--a.b VALUE`` / ``--a.b=VALUE`` pairs; values are read as YAML scalars.

    Args:
        args: Leftover command-line tokens

    Returns:
        Mapping of dotted field path to parsed value
    """
    tokens = list(args)
    overrides: dict[str, Any] = {}
    k = 0
    while k < len(tokens):
        token = tokens[k]
        if not token.startswith("--") or len(token) <= 2:
            raise ConfigError(f"unexpected argument {token!r}; overrides look like --train.lr 0.001")
        key = token[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
        else:
            if k + 1 >= len(tokens):
                raise ConfigError(f"override {token!r} is missing a value")
            k += 1
            raw = tokens[k]
        overrides[key] = yaml.safe_load(raw)
        k += 1
    return overrides


def build_truth(config: ExperimentConfig) -> ProcessSpec:
    """Ground-truth process of a config, with zoo errors reported as configuration errors."""
    try:
        return build_model(config.model.id, config.model.params)
    except ProcessModelError as e:
        raise ConfigError(str(e)) from e


def validate_experiment(config: ExperimentConfig) -> ProcessSpec:
    """Check a config against the model zoo before any compute; returns the truth model."""
    truth = build_truth(config)
    if config.initial.d != truth.d:
        raise ConfigError(f"initial mean has dimension {config.initial.d}, model {config.model.id} has d={truth.d}")
    for path in config.sweep.axes:
        for p in path.split(","):
            _set_path(copy.deepcopy(config.model_dump(mode="json")), p.strip(), None)
    return truth


def load_config(source: Union[str, Path]) -> ExperimentConfig:
    """
    Load a configuration from a YAML/JSON file or a preset name.

    Args:
        source: File path or preset name

    Returns:
        Validated ExperimentConfig
    """
    path = Path(source)
    if not path.exists():
        if str(source) in PRESETS:
            logger.debug(f"[CLI] using preset {source}")
            return get_preset(str(source))
        raise ConfigError(f"Configuration file not found and not a preset: {source}")
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    base_name = data.pop("preset", None)
    try:
        if base_name is not None:
            base = get_preset(base_name).model_dump(mode="json")
            return apply_overrides(ExperimentConfig.model_validate(base), _flatten(data))
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration {path}: {e}") from e


def _flatten(data: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict) and path not in OPEN_MAPPINGS and value:
            flat.update(_flatten(value, f"{path}."))
        else:
            flat[path] = value
    return flat


def dump_config(config: ExperimentConfig, output_path: Union[str, Path]) -> None:
    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.model_dump(mode="json"), f, sort_keys=False)


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form; independent of field order."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def create_sample_config(output_path: Union[str, Path], preset: str = "example1-desk") -> None:
    """Create a commented sample configuration based on a preset."""
    config = get_preset(preset)
    header = f"""# jdrecon experiment configuration (based on preset "{preset}")
#
# Any field can also be overridden on the command line by its dotted path:
#   jdrecon train this-file.yaml --train.lr 0.001 --model.params.y0 0.5
#
# model.id: example1 | example2 | example3
# train.loss_kind: decoupled_w2sq | w2sq | w1 | mse | mean2var | mmd
# train.prior: none | drift_given | diffusion_given | jump_given
# train.resimulate_noise: fresh | fixed
# sweep.axes: dotted path -> list of values (comma-joined paths move together)

"""
    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(header)
        yaml.safe_dump(config.model_dump(mode="json"), f, sort_keys=False)
