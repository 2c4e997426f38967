"""
Data models shared across simulation, transport, training and the CLI.
"""

from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class JumpMeasure(BaseModel):
    """Finite jump measure: one Poisson rate per mark."""

    model_config = ConfigDict(frozen=True)

    rates: List[float] = Field(default_factory=list)

    @field_validator("rates")
    @classmethod
    def rates_nonnegative(cls, v: List[float]) -> List[float]:
        if any(not np.isfinite(r) or r < 0 for r in v):
            raise ValueError(f"jump rates must be finite and >= 0, got {v}")
        return v

    @property
    def marks(self) -> List[int]:
        return list(range(1, len(self.rates) + 1))

    @property
    def n_marks(self) -> int:
        return len(self.rates)

    @property
    def total_rate(self) -> float:
        return float(sum(self.rates))

    def rate_array(self) -> np.ndarray:
        return np.asarray(self.rates, dtype=np.float64)


class InitialLaw(BaseModel):
    """Isotropic normal initial law; stddev 0 is a deterministic start."""

    mean: List[float]
    stddev: float = 0.0

    @field_validator("stddev")
    @classmethod
    def stddev_nonnegative(cls, v: float) -> float:
        if v < 0:
            raise ValueError(f"initial stddev must be >= 0, got {v}")
        return v

    @property
    def d(self) -> int:
        return len(self.mean)


class TimeGrid(BaseModel):
    """Uniform grid t_i = i * dt, i = 0..N."""

    model_config = ConfigDict(frozen=True)

    T: float = Field(gt=0)
    N: int = Field(ge=1)

    @property
    def dt(self) -> float:
        return self.T / self.N

    def times(self) -> np.ndarray:
        return np.arange(self.N + 1, dtype=np.float64) * self.dt

    @classmethod
    def from_horizon(cls, T: float, dt: float) -> "TimeGrid":
        """Build a grid from a horizon and a step, rounding N to the nearest integer."""
        steps = round(T / dt)
        if steps < 1 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
            raise ValueError(f"horizon {T} is not a whole number of steps of {dt}")
        return cls(T=steps * dt, N=steps)

    def matches(self, other: "TimeGrid") -> bool:
        return self.N == other.N and abs(self.T - other.T) <= 1e-12 * max(1.0, self.T)


class Ensemble(BaseModel):
    """M trajectories on a grid, states[j, i, :] = X_j(t_i)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    states: np.ndarray
    grid: TimeGrid
    origin: Literal["ground_truth", "surrogate"] = "ground_truth"

    @model_validator(mode="after")
    def check_shape(self) -> "Ensemble":
        if self.states.ndim != 3 or self.states.shape[1] != self.grid.N + 1:
            raise ValueError(
                f"states must have shape [M, {self.grid.N + 1}, d], got {self.states.shape}"
            )
        if not np.isfinite(self.states).all():
            raise ValueError("ensemble states must be finite")
        self.states.flags.writeable = False
        return self

    @property
    def M(self) -> int:
        return int(self.states.shape[0])

    @property
    def d(self) -> int:
        return int(self.states.shape[2])

    def slice_at(self, i: int) -> np.ndarray:
        """The [M, d] cloud of states at grid point i."""
        return self.states[:, i, :]


class NoiseTape(BaseModel):
    """Pre-drawn Brownian increments and per-mark Poisson counts."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    brownian: np.ndarray  # [M, N, m]
    jump_counts: np.ndarray  # [M, N, n_marks]
    seed: int

    @property
    def M(self) -> int:
        return int(self.brownian.shape[0])

    @property
    def steps(self) -> int:
        return int(self.brownian.shape[1])


class Assignment(BaseModel):
    """Optimal matching of row i of the first cloud to column perm[i] of the second."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    perm: np.ndarray
    cost: float


class MomentMatrices(BaseModel):
    """Per-slice integrated second-moment matrices and drift-integral gaps.

    Entry k holds the integral from 0 to t_k, so S[0] is zero.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    S: np.ndarray  # [K, d, d]
    S_hat: np.ndarray  # [K, d, d]
    drift_gap: np.ndarray  # [K, d]


class LossKind(str, Enum):
    """Loss functions comparing an observed and a surrogate ensemble."""

    DECOUPLED_W2SQ = "decoupled_w2sq"
    W2SQ = "w2sq"
    W1 = "w1"
    MSE = "mse"
    MEAN2VAR = "mean2var"
    MMD = "mmd"


class PriorMode(str, Enum):
    """Which coefficient, if any, is pinned to its ground-truth form."""

    NONE = "none"
    DRIFT_GIVEN = "drift_given"
    DIFFUSION_GIVEN = "diffusion_given"
    JUMP_GIVEN = "jump_given"


class NoiseMode(str, Enum):
    FRESH = "fresh"
    FIXED = "fixed"


class LossValue(BaseModel):
    """A loss evaluation plus what is needed to differentiate or replay it."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    value: float
    per_slice: Optional[np.ndarray] = None
    couplings: Optional[List[Assignment]] = None
    grad_states: Optional[np.ndarray] = Field(default=None, exclude=True)


class MlpArch(BaseModel):
    """Feed-forward ReLU network shape."""

    model_config = ConfigDict(frozen=True)

    input_dim: int = Field(ge=1)
    hidden_layers: int = Field(ge=1)
    width: int = Field(ge=1)
    output_dim: int = Field(ge=1)
    activation: Literal["relu"] = "relu"

    def layer_sizes(self) -> List[int]:
        return [self.input_dim] + [self.width] * self.hidden_layers + [self.output_dim]


class InitScheme(BaseModel):
    """Network initialization: fan-in uniform, or N(0, variance) weights with zero biases."""

    kind: Literal["fan_uniform", "gaussian"] = "fan_uniform"
    variance: float = Field(default=1e-4, ge=0)


class NetworkConfig(BaseModel):
    """Hidden shape of one coefficient network; input/output sizes follow the model."""

    hidden_layers: int = Field(default=2, ge=1)
    width: int = Field(default=150, ge=1)


class TrainConfig(BaseModel):
    """Optimizer, grid and network settings of one training run."""

    loss_kind: LossKind = LossKind.DECOUPLED_W2SQ
    lr: float = Field(default=0.002, gt=0)
    weight_decay: float = Field(default=0.005, ge=0)
    epochs: int = Field(default=1000, ge=0)
    M_s: int = Field(default=100, ge=1)
    dt: float = Field(default=0.2, gt=0)
    N: int = Field(default=101, ge=1)
    drift_net: NetworkConfig = Field(default_factory=NetworkConfig)
    diffusion_net: NetworkConfig = Field(default_factory=NetworkConfig)
    jump_net: NetworkConfig = Field(default_factory=NetworkConfig)
    init: InitScheme = Field(default_factory=InitScheme)
    seed: int = Field(default=0, ge=0)
    prior: PriorMode = PriorMode.NONE
    resimulate_noise: NoiseMode = NoiseMode.FRESH
    include_initial_slice: bool = False
    max_blowups: int = Field(default=3, ge=1)
    log_every: int = Field(default=10, ge=1)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(T=self.N * self.dt, N=self.N)


class ErrorReport(BaseModel):
    """Relative reconstruction errors; None marks an undefined (zero-denominator) metric."""

    form: Literal["scalar", "matrix"] = "scalar"
    drift_err: Optional[float] = None
    diffusion_err: Optional[float] = None
    jump_err: Optional[float] = None


class TrainTrace(BaseModel):
    """Per-epoch record of one training run."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    losses: List[float] = Field(default_factory=list)
    epoch_seconds: List[float] = Field(default_factory=list)
    seeds: List[int] = Field(default_factory=list)
    rejected_steps: int = 0
    root_seed: int = 0
    start_epoch: int = 0
    # Trained networks (name -> MlpParams) and the optimizer state after the last epoch.
    final_params: Optional[Dict[str, Any]] = Field(default=None, exclude=True)
    optimizer_state: Optional[Any] = Field(default=None, exclude=True)

    @property
    def epochs_completed(self) -> int:
        return len(self.losses)


class ModelConfig(BaseModel):
    """Zoo model id plus its keyword parameters."""

    id: Literal["example1", "example2", "example3"] = "example1"
    params: Dict[str, Any] = Field(default_factory=dict)


class SweepConfig(BaseModel):
    """Grid of field-path overrides; comma-joined paths move together."""

    axes: Dict[str, List[Any]] = Field(default_factory=dict)
    repeats: Optional[int] = Field(default=None, ge=1)


class ExperimentConfig(BaseModel):
    """Everything needed to simulate, train, sweep and diagnose one experiment."""

    name: str = "experiment"
    model: ModelConfig = Field(default_factory=ModelConfig)
    initial: InitialLaw = Field(default_factory=lambda: InitialLaw(mean=[2.0]))
    train: TrainConfig = Field(default_factory=TrainConfig)
    output_dir: str = "runs"
    threads: int = Field(default=1, ge=1)
    repeats: int = Field(default=1, ge=1)
    sweep: SweepConfig = Field(default_factory=SweepConfig)


class SweepRow(BaseModel):
    """One (cell, repeat) outcome of a sweep."""

    cell: int
    repeat: int
    seed: int
    overrides: Dict[str, Any] = Field(default_factory=dict)
    status: Literal["ok", "failed"] = "ok"
    drift_err: Optional[float] = None
    diffusion_err: Optional[float] = None
    jump_err: Optional[float] = None
    final_loss: Optional[float] = None
    error: Optional[str] = None
    duration: float = 0.0


class RunManifest(BaseModel):
    """Provenance record written next to every run's artifacts."""

    command: str
    config: Dict[str, Any]
    config_hash: str
    seeds: Dict[str, int] = Field(default_factory=dict)
    artifacts: List[str] = Field(default_factory=list)
    versions: Dict[str, str] = Field(default_factory=dict)
    wall_clock_seconds: float = 0.0
    created_at: datetime = Field(default_factory=datetime.now)


class RateRow(BaseModel):
    M: int
    n: int
    h: float


class DiagnosticsReport(BaseModel):
    """Distance diagnostics of one ensemble pair."""

    per_slice_w2sq: List[float] = Field(default_factory=list)
    decoupled_w2sq: float = 0.0
    rate_ladder: List[RateRow] = Field(default_factory=list)
    lower_bound: Optional[float] = None
    lower_bound_se: Optional[float] = None
    refinement: Optional[List[Dict[str, Optional[float]]]] = None


class TrainSummary(BaseModel):
    """What ``jdrecon train`` reports."""

    name: str
    prior: PriorMode
    loss_kind: LossKind
    start_epoch: int = 0
    epochs: int = 0
    final_loss: Optional[float] = None
    rejected_steps: int = 0
    report: ErrorReport
    duration: float = 0.0
    output_dir: str


class SweepSummary(BaseModel):
    """What ``jdrecon sweep`` reports."""

    name: str
    cells: int
    repeats: int
    rows: List[SweepRow] = Field(default_factory=list)
    duration: float = 0.0
    output_dir: str

    @property
    def failed(self) -> int:
        return sum(row.status == "failed" for row in self.rows)
