"""
Euler-Maruyama simulation of jump-diffusion ensembles with replayable noise.

Randomness contract: a root seed is split with ``numpy.random.SeedSequence``
into an initial-state stream and a noise stream; the noise stream spawns one
child per trajectory. Trajectory j therefore draws the same increments no
matter how many trajectories are simulated alongside it.
"""

import math
from typing import Any

from loguru import logger
import numpy as np

from . import autodiff as ad
from .models import Ensemble, InitialLaw, JumpMeasure, NoiseTape, TimeGrid
from .process_model import ProcessSpec

INITIAL_STREAM = 0
NOISE_STREAM = 1


class SimulationBlowUp(ArithmeticError):
    """Raised when a simulated state becomes non-finite."""

    def __init__(self, trajectory: int, step: int, time: float, message: str | None = None):
        self.trajectory = trajectory
        self.step = step
        self.time = time
        super().__init__(message or f"non-finite state in trajectory {trajectory} at step {step} (t={time:.6g})")


def derive_seed(root: int, *keys: int) -> int:
    """Deterministic 32-bit child seed of ``root`` for the given key path."""
    return int(np.random.SeedSequence([root, *keys]).generate_state(1)[0])


def _stream(seed: int, purpose: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(purpose,))


def sample_initial(law: InitialLaw, M_s: int, seed: int) -> np.ndarray:
    """Draw M_s i.i.d. initial states mean + stddev * N(0, I)."""
    if M_s < 1:
        raise ValueError(f"M_s must be >= 1, got {M_s}")
    mean = np.asarray(law.mean, dtype=np.float64)
    if law.stddev == 0:
        return np.tile(mean, (M_s, 1))
    rng = np.random.default_rng(_stream(seed, INITIAL_STREAM))
    return mean + law.stddev * rng.standard_normal((M_s, mean.shape[0]))


def sample_noise_tape(grid: TimeGrid, m: int, measure: JumpMeasure, M_s: int, seed: int) -> NoiseTape:
    """
    Draw Brownian increments N(0, dt) and Poisson(rate * dt) jump counts.

    Args:
        grid: Time grid
        m: Brownian dimension
        measure: Jump measure giving one rate per mark
        M_s: Number of trajectories
        seed: Root seed

    Returns:
        NoiseTape with brownian [M_s, N, m] and jump_counts [M_s, N, n_marks]
    """
    if M_s < 1:
        raise ValueError(f"M_s must be >= 1, got {M_s}")
    dt = grid.dt
    lam = measure.rate_array() * dt
    brownian = np.empty((M_s, grid.N, m))
    counts = np.empty((M_s, grid.N, measure.n_marks))
    for j, child in enumerate(_stream(seed, NOISE_STREAM).spawn(M_s)):
        rng = np.random.default_rng(child)
        brownian[j] = rng.normal(0.0, math.sqrt(dt), size=(grid.N, m))
        counts[j] = rng.poisson(lam, size=(grid.N, measure.n_marks))
    return NoiseTape(brownian=brownian, jump_counts=counts, seed=seed)


def euler_step(x: Any, t: float, dt: float, spec: ProcessSpec, dB: Any, dN: Any, step: int = 1) -> Any:
    """
    One explicit step x + f dt + sigma dB + sum_s beta_s (dN_s - rate_s dt).

    Accepts a single state [d] or a batch [M, d]; taped values flow through.
    ``step`` is the grid index of the produced state, reported on blow-up.
    """
    single = ad.value_of(x).ndim == 1
    if single:
        x = ad.reshape(x, (1, spec.d))
        dB = np.asarray(dB, dtype=np.float64).reshape(1, spec.m)
        dN = np.asarray(dN, dtype=np.float64).reshape(1, spec.n_marks)
    coeff = spec.coefficients
    compensated = np.asarray(dN, dtype=np.float64) - spec.measure.rate_array() * dt
    x_next = x + coeff.drift(x, t) * dt
    if spec.m > 0:
        x_next = x_next + ad.matvec(coeff.diffusion(x, t), dB)
    if spec.n_marks > 0:
        x_next = x_next + ad.matvec(coeff.jump(x, t), compensated)
    _check_finite(x_next, step, t + dt)
    if single:
        x_next = ad.reshape(x_next, (spec.d,))
    return x_next


def _check_finite(x: Any, step: int, time: float) -> None:
    values = ad.value_of(x)
    finite = np.isfinite(values).all(axis=-1)
    if not finite.all():
        trajectory = int(np.flatnonzero(~finite)[0])
        raise SimulationBlowUp(trajectory, step, time)


def _run(spec: ProcessSpec, grid: TimeGrid, initial: np.ndarray, tape: NoiseTape) -> list[Any]:
    if tape.steps != grid.N or tape.brownian.shape[2] != spec.m or tape.jump_counts.shape[2] != spec.n_marks:
        raise ValueError(
            f"noise tape shape {tape.brownian.shape}/{tape.jump_counts.shape} does not match grid N={grid.N}, "
            f"m={spec.m}, marks={spec.n_marks}"
        )
    if initial.shape != (tape.M, spec.d):
        raise ValueError(f"initial states must have shape [{tape.M}, {spec.d}], got {initial.shape}")
    dt = grid.dt
    x: Any = initial
    history = [initial]
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(grid.N):
            t = i * dt
            x = euler_step(x, t, dt, spec, tape.brownian[:, i, :], tape.jump_counts[:, i, :], step=i + 1)
            history.append(x)
    return history


def simulate_ensemble(
    spec: ProcessSpec,
    grid: TimeGrid,
    law: InitialLaw,
    M_s: int,
    seed: int | None = None,
    tape: NoiseTape | None = None,
) -> Ensemble:
    """
    Simulate M_s trajectories with the Euler-Maruyama scheme.

    Either ``seed`` or a pre-drawn ``tape`` must be given; with a tape the
    initial states are drawn from the tape's seed so replays are exact.
    """
    if tape is None:
        if seed is None:
            raise ValueError("either seed or tape is required")
        tape = sample_noise_tape(grid, spec.m, spec.measure, M_s, seed)
    elif tape.M != M_s:
        raise ValueError(f"tape holds {tape.M} trajectories, requested {M_s}")
    initial = sample_initial(law, M_s, tape.seed if seed is None else seed)
    history = _run(spec, grid, initial, tape)
    states = np.stack([ad.value_of(h) for h in history], axis=1)
    logger.debug(f"[SIM] {spec.name}: simulated {M_s} trajectories x {grid.N} steps (seed={tape.seed})")
    return Ensemble(states=states, grid=grid, origin=spec.source)


def simulate_surrogate(
    spec: ProcessSpec,
    grid: TimeGrid,
    initial_states: np.ndarray,
    noise: NoiseTape,
) -> tuple[Ensemble, Any]:
    """
    Simulate with taped coefficients, returning the ensemble and the stacked
    state history [M, N+1, d] as a taped value for gradient replay.
    """
    history = _run(spec, grid, np.asarray(initial_states, dtype=np.float64), noise)
    states = ad.stack(history, axis=1)
    ensemble = Ensemble(states=np.array(ad.value_of(states)), grid=grid, origin="surrogate")
    return ensemble, states


def ensemble_statistics(ensemble: Ensemble) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-slice mean, population variance and standard error of the mean, each [N+1, d]."""
    states = ensemble.states
    mean = states.mean(axis=0)
    var = states.var(axis=0)
    se = np.sqrt(var / ensemble.M)
    return mean, var, se


def moment_oracle_example1(t: float, b: float, a: float, y0: float, X0: float) -> float:
    """Exact E[X_t] for the Example 1 model: solution of dm/dt = (b + y0) + a m."""
    if a == 0:
        return X0 + (b + y0) * t
    fixed_point = -(b + y0) / a
    return fixed_point + (X0 - fixed_point) * math.exp(a * t)
