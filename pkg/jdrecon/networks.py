"""
Feed-forward ReLU networks, the AdamW optimizer and parameter checkpoints.
"""

from pathlib import Path
import struct
from typing import Any, BinaryIO, Union

from loguru import logger
import numpy as np
from pydantic import BaseModel, ConfigDict

from . import autodiff as ad
from .models import InitScheme, MlpArch

CHECKPOINT_MAGIC = b"JDNN"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Raised when a checkpoint file cannot be parsed."""


class MlpParams(BaseModel):
    """Weights [in, out] and biases [out] of every layer."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    arch: MlpArch
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases, strict=True))

    def names(self, prefix: str) -> list[str]:
        out = []
        for k in range(len(self.weights)):
            out += [f"{prefix}.{k}.weight", f"{prefix}.{k}.bias"]
        return out

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases, strict=True):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts)

    def with_flat(self, flat: np.ndarray) -> "MlpParams":
        """Copy with parameters taken from a flat vector in ``flatten`` order."""
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {flat.shape}")
        weights, biases, offset = [], [], 0
        for w, b in zip(self.weights, self.biases, strict=True):
            weights.append(flat[offset : offset + w.size].reshape(w.shape).copy())
            offset += w.size
            biases.append(flat[offset : offset + b.size].copy())
            offset += b.size
        return MlpParams(arch=self.arch, weights=weights, biases=biases)

    def bind(self, tape: ad.Tape, prefix: str) -> list[tuple[Any, Any]]:
        """Register every weight and bias on ``tape`` as a named leaf."""
        return [
            (tape.parameter(f"{prefix}.{k}.weight", w), tape.parameter(f"{prefix}.{k}.bias", b))
            for k, (w, b) in enumerate(zip(self.weights, self.biases, strict=True))
        ]

    def layers(self) -> list[tuple[Any, Any]]:
        return list(zip(self.weights, self.biases, strict=True))


def mlp_init(arch: MlpArch, scheme: InitScheme, seed: int) -> MlpParams:
    """
    Initialize a network.

    fan_uniform draws weights and biases from U(-1/sqrt(fan_in), 1/sqrt(fan_in));
    gaussian draws weights from N(0, variance) and sets biases to zero.
    """
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes()
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:], strict=True):
        if scheme.kind == "fan_uniform":
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        else:
            weights.append(rng.normal(0.0, np.sqrt(scheme.variance), size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
    return MlpParams(arch=arch, weights=weights, biases=biases)


def mlp_apply(layers: list[tuple[Any, Any]], x: Any) -> Any:
    """Affine + ReLU hidden layers and an affine output layer."""
    h = x
    for k, (w, b) in enumerate(layers):
        h = ad.affine(h, w, b)
        if k < len(layers) - 1:
            h = ad.relu(h)
    return h


def mlp_forward(params: MlpParams, x: np.ndarray, prefix: str = "net") -> tuple[Any, ad.Tape]:
    """Taped forward pass of a single network on input(s) ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("network input must be finite")
    tape = ad.Tape()
    y = mlp_apply(params.bind(tape, prefix), x)
    if not np.isfinite(ad.value_of(y)).all():
        raise FloatingPointError("network output is not finite")
    return y, tape


def gradients_to_flat(grads: dict[str, np.ndarray], params: MlpParams, prefix: str) -> np.ndarray:
    """Collect a tape's named gradients into ``params.flatten`` order."""
    return np.concatenate([grads[name].ravel() for name in params.names(prefix)])


class AdamWState(BaseModel):
    """Moment accumulators and hyperparameters of AdamW."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float
    weight_decay: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n_params: int, lr: float, weight_decay: float) -> "AdamWState":
        return cls(m=np.zeros(n_params), v=np.zeros(n_params), lr=lr, weight_decay=weight_decay)


def adamw_step(params: np.ndarray, grads: np.ndarray, state: AdamWState) -> tuple[np.ndarray, AdamWState]:
    """
    One AdamW update with decoupled weight decay.

    Args:
        params: Flat parameter vector
        grads: Gradient of the loss, same shape
        state: Optimizer state before the step

    Returns:
        (updated params, updated state)
    """
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    updated = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps) - state.lr * state.weight_decay * params
    return updated, state.model_copy(update={"m": m, "v": v, "step": step})


def _write_u32(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<I", value))


def _write_array(f: BinaryIO, values: np.ndarray) -> None:
    f.write(struct.pack("<Q", values.size))
    f.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def _read(f: BinaryIO, fmt: str) -> tuple[Any, ...]:
    size = struct.calcsize(fmt)
    raw = f.read(size)
    if len(raw) != size:
        raise CheckpointError("checkpoint is truncated")
    return struct.unpack(fmt, raw)


def _read_array(f: BinaryIO) -> np.ndarray:
    (n,) = _read(f, "<Q")
    raw = f.read(8 * n)
    if len(raw) != 8 * n:
        raise CheckpointError("checkpoint is truncated")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def save_checkpoint(
    path: Union[str, Path],
    nets: dict[str, MlpParams],
    optimizer: AdamWState | None = None,
    epochs_done: int = 0,
) -> None:
    """
    Write networks (and optionally optimizer state) to a "JDNN" container.

    Layout, little-endian: magic, u32 version, u32 network count; per network
    u32 name length, name, u32 input/output/hidden/width, u64 count, f8 params;
    u8 optimizer flag [u64 step, f8 lr/wd/beta1/beta2/eps, m, v]; u64 epochs.
    """
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        _write_u32(f, CHECKPOINT_VERSION)
        _write_u32(f, len(nets))
        for name, params in nets.items():
            encoded = name.encode("utf-8")
            _write_u32(f, len(encoded))
            f.write(encoded)
            arch = params.arch
            f.write(struct.pack("<IIII", arch.input_dim, arch.output_dim, arch.hidden_layers, arch.width))
            _write_array(f, params.flatten())
        f.write(struct.pack("<B", 0 if optimizer is None else 1))
        if optimizer is not None:
            f.write(struct.pack("<Q", optimizer.step))
            f.write(struct.pack("<5d", optimizer.lr, optimizer.weight_decay, optimizer.beta1, optimizer.beta2, optimizer.eps))
            _write_array(f, optimizer.m)
            _write_array(f, optimizer.v)
        f.write(struct.pack("<Q", epochs_done))
    logger.debug(f"[IO] wrote checkpoint {path} ({', '.join(nets) or 'no networks'})")


def load_checkpoint(path: Union[str, Path]) -> tuple[dict[str, MlpParams], AdamWState | None, int]:
    """Read a "JDNN" container written by ``save_checkpoint``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a JDNN checkpoint")
        (version,) = _read(f, "<I")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (count,) = _read(f, "<I")
        nets: dict[str, MlpParams] = {}
        for _ in range(count):
            (name_len,) = _read(f, "<I")
            name = f.read(name_len).decode("utf-8")
            input_dim, output_dim, hidden, width = _read(f, "<IIII")
            arch = MlpArch(input_dim=input_dim, output_dim=output_dim, hidden_layers=hidden, width=width)
            template = mlp_init(arch, InitScheme(kind="gaussian", variance=0.0), seed=0)
            nets[name] = template.with_flat(_read_array(f))
        (has_optimizer,) = _read(f, "<B")
        optimizer = None
        if has_optimizer:
            (step,) = _read(f, "<Q")
            lr, wd, beta1, beta2, eps = _read(f, "<5d")
            m = _read_array(f)
            v = _read_array(f)
            optimizer = AdamWState(m=m, v=v, step=step, lr=lr, weight_decay=wd, beta1=beta1, beta2=beta2, eps=eps)
        (epochs_done,) = _read(f, "<Q")
    return nets, optimizer, epochs_done
