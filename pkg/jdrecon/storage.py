"""
Reading and writing run artifacts: ensembles, traces, reports and manifests.
"""

from importlib import metadata
import json
from pathlib import Path
import platform
import struct
from typing import Any, Dict, List, Union

from loguru import logger
import numpy as np
import pandas as pd
from pydantic import BaseModel

from .models import Ensemble, RunManifest, TimeGrid, TrainTrace

ENSEMBLE_MAGIC = b"JDE1"
HEADER = struct.Struct("<QQQdB")
ORIGIN_CODES = {"ground_truth": 0, "surrogate": 1}
ORIGINS = {code: name for name, code in ORIGIN_CODES.items()}

TRACKED_PACKAGES = ("numpy", "scipy", "pandas", "pydantic", "click", "loguru", "tenacity")


class StorageError(ValueError):
    """Raised for unreadable or inconsistent artifact files."""


def write_ensemble_binary(ensemble: Ensemble, path: Union[str, Path]) -> None:
    """
    Write "JDE1": magic, then (M, N, d, T, origin) as <QQQdB, then the states as <f8.

    States are stored trajectory-major in [M, N+1, d] order.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(ENSEMBLE_MAGIC)
        f.write(HEADER.pack(ensemble.M, ensemble.grid.N, ensemble.d, ensemble.grid.T, ORIGIN_CODES[ensemble.origin]))
        f.write(np.ascontiguousarray(ensemble.states, dtype="<f8").tobytes())
    logger.debug(f"[IO] wrote {ensemble.M} trajectories to {path}")


def read_ensemble_binary(path: Union[str, Path]) -> Ensemble:
    path = Path(path)
    if not path.exists():
        raise StorageError(f"Ensemble file not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != ENSEMBLE_MAGIC:
        raise StorageError(f"{path} is not a JDE1 ensemble file")
    if len(raw) < 4 + HEADER.size:
        raise StorageError(f"{path} is truncated")
    M, N, d, T, origin = HEADER.unpack_from(raw, 4)
    expected = M * (N + 1) * d * 8
    payload = raw[4 + HEADER.size :]
    if len(payload) != expected:
        raise StorageError(f"{path} holds {len(payload)} state bytes, header promises {expected}")
    if origin not in ORIGINS:
        raise StorageError(f"{path} has unknown origin code {origin}")
    states = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(M, N + 1, d)
    try:
        return Ensemble(states=states, grid=TimeGrid(T=T, N=N), origin=ORIGINS[origin])
    except ValueError as e:
        raise StorageError(f"{path}: {e}") from e


def write_ensemble_csv(ensemble: Ensemble, path: Union[str, Path]) -> None:
    """Long-format CSV with columns trajectory, step, time, x1..xd."""
    M, steps, d = ensemble.states.shape
    frame = pd.DataFrame(ensemble.states.reshape(M * steps, d), columns=[f"x{k + 1}" for k in range(d)])
    frame.insert(0, "time", np.tile(ensemble.grid.times(), M))
    frame.insert(0, "step", np.tile(np.arange(steps), M))
    frame.insert(0, "trajectory", np.repeat(np.arange(M), steps))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.debug(f"[IO] wrote {ensemble.M} trajectories to {path}")


def read_ensemble_csv(path: Union[str, Path], origin: str = "ground_truth") -> Ensemble:
    path = Path(path)
    if not path.exists():
        raise StorageError(f"Ensemble file not found: {path}")
    frame = pd.read_csv(path)
    state_columns = [c for c in frame.columns if c.startswith("x")]
    missing = {"trajectory", "step", "time"} - set(frame.columns)
    if missing or not state_columns:
        raise StorageError(f"{path} is missing columns {sorted(missing) or ['x1']}")
    frame = frame.sort_values(["trajectory", "step"])
    M = frame["trajectory"].nunique()
    steps = frame["step"].nunique()
    if len(frame) != M * steps:
        raise StorageError(f"{path} has ragged trajectories ({len(frame)} rows for {M} x {steps})")
    states = frame[state_columns].to_numpy(dtype=np.float64).reshape(M, steps, len(state_columns))
    times = frame["time"].to_numpy()[:steps]
    N = steps - 1
    if N < 1:
        raise StorageError(f"{path} needs at least two time points")
    try:
        return Ensemble(states=states, grid=TimeGrid(T=float(times[-1]), N=N), origin=origin)
    except ValueError as e:
        raise StorageError(f"{path}: {e}") from e


def read_ensemble(path: Union[str, Path]) -> Ensemble:
    """Read an ensemble by extension: .csv or the binary container."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_ensemble_csv(path)
    return read_ensemble_binary(path)


def _jsonable(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_json(data: Any, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, BaseModel):
        data = data.model_dump(mode="json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, default=_jsonable)
    logger.debug(f"[IO] wrote {path}")


def write_trace(trace: TrainTrace, output_dir: Union[str, Path]) -> List[str]:
    """trace.json plus a per-epoch trace.csv; returns the written file names."""
    output_dir = Path(output_dir)
    write_json(trace, output_dir / "trace.json")
    epochs = np.arange(trace.start_epoch + 1, trace.start_epoch + trace.epochs_completed + 1)
    pd.DataFrame(
        {"epoch": epochs, "loss": trace.losses, "seconds": trace.epoch_seconds, "noise_seed": trace.seeds}
    ).to_csv(output_dir / "trace.csv", index=False, float_format="%.17g")
    return ["trace.json", "trace.csv"]


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in ("jdrecon", *TRACKED_PACKAGES):
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def write_manifest(manifest: RunManifest, output_dir: Union[str, Path]) -> Path:
    path = Path(output_dir) / "manifest.json"
    write_json(manifest, path)
    logger.info(f"[IO] manifest written to {path}")
    return path


def read_manifest(path: Union[str, Path]) -> RunManifest:
    path = Path(path)
    if not path.exists():
        raise StorageError(f"Manifest not found: {path}")
    try:
        return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except ValueError as e:
        raise StorageError(f"{path}: {e}") from e
