"""
Distance diagnostics for ensemble pairs.

Collects the per-slice squared W2 profile, the empirical-convergence rate
ladder, the moment-based lower bound on the time-integrated squared W2 (with
a bootstrap standard error) and the time-refinement study of the
trajectory-coupled squared W2.
"""

from collections.abc import Callable, Sequence
from typing import Dict, List, Optional

from loguru import logger
import numpy as np

from .losses import loss_decoupled_w2sq, loss_w2sq_traj
from .models import DiagnosticsReport, Ensemble, InitialLaw, RateRow, TimeGrid
from .process_model import ProcessSpec
from .simulator import derive_seed, simulate_ensemble
from .transport import TransportError, estimate_moment_matrices, gaussian_lower_bound, rate_h, w2sq_1d, w2sq_slices

DEFAULT_LADDER = (50, 100, 200, 400)
DEFAULT_REFINEMENT = (0.4, 0.2, 0.1)


def rate_ladder(n: int, sizes: Sequence[int] = DEFAULT_LADDER) -> List[RateRow]:
    return [RateRow(M=M, n=n, h=rate_h(M, n)) for M in sizes]


def self_distance_curve(
    sample: Callable[[int, np.random.Generator], np.ndarray],
    sizes: Sequence[int] = DEFAULT_LADDER,
    repetitions: int = 20,
    seed: int = 0,
) -> Dict[int, float]:
    """
    Average squared W2 between two independent same-law 1-D clouds at each size.

    Args:
        sample: Draws a cloud of the given size from the given generator
        sizes: Cloud sizes
        repetitions: Independent pairs averaged per size
        seed: Root seed

    Returns:
        Mapping size -> mean squared W2
    """
    curve: Dict[int, float] = {}
    for M in sizes:
        rng = np.random.default_rng(derive_seed(seed, M))
        values = [w2sq_1d(sample(M, rng), sample(M, rng))[0] for _ in range(repetitions)]
        curve[M] = float(np.mean(values))
    return curve


def lower_bound_estimate(spec: ProcessSpec, spec_hat: ProcessSpec, E: Ensemble, E_hat: Ensemble) -> float:
    """Moment-based lower bound on the time-integrated squared W2 over the whole grid."""
    if not E.grid.matches(E_hat.grid):
        raise TransportError("ensembles live on different grids")
    mm = estimate_moment_matrices(spec, spec_hat, (E, E_hat), E.grid, E.grid.N)
    return gaussian_lower_bound(mm, E.grid)


def _resampled(E: Ensemble, rng: np.random.Generator) -> Ensemble:
    idx = rng.integers(0, E.M, size=E.M)
    return Ensemble(states=E.states[idx], grid=E.grid, origin=E.origin)


def lower_bound_standard_error(
    spec: ProcessSpec,
    spec_hat: ProcessSpec,
    E: Ensemble,
    E_hat: Ensemble,
    n_boot: int = 50,
    seed: int = 0,
) -> float:
    """Bootstrap standard error of ``lower_bound_estimate``, resampling trajectories of each ensemble."""
    if n_boot < 2:
        raise ValueError(f"n_boot must be >= 2, got {n_boot}")
    rng = np.random.default_rng(seed)
    draws = [lower_bound_estimate(spec, spec_hat, _resampled(E, rng), _resampled(E_hat, rng)) for _ in range(n_boot)]
    return float(np.std(draws, ddof=1))


def refinement_study(
    spec: ProcessSpec,
    spec_hat: ProcessSpec,
    law: InitialLaw,
    T: float,
    M: int,
    seed: int,
    dts: Sequence[float] = DEFAULT_REFINEMENT,
) -> List[Dict[str, Optional[float]]]:
    """
    dt-weighted trajectory-coupled squared W2 on successively finer time grids.

    Both processes are simulated once on the finest grid; coarser grids
    observe the same trajectories at every k-th point. Each row holds the
    step, the estimate and its change from the previous (coarser) row.
    """
    steps = sorted(dts, reverse=True)
    finest = TimeGrid.from_horizon(T, steps[-1])
    E = simulate_ensemble(spec, finest, law, M, seed=derive_seed(seed, 0))
    E_hat = simulate_ensemble(spec_hat, finest, law, M, seed=derive_seed(seed, 1))
    rows: List[Dict[str, Optional[float]]] = []
    previous: Optional[float] = None
    for dt in steps:
        stride = round(dt / finest.dt)
        if stride < 1 or abs(stride * finest.dt - dt) > 1e-9 or finest.N % stride:
            raise ValueError(f"step {dt} is not a multiple of the finest step {finest.dt} dividing the horizon")
        grid = TimeGrid(T=finest.T, N=finest.N // stride)
        coarse = Ensemble(states=E.states[:, ::stride], grid=grid, origin=E.origin)
        coarse_hat = Ensemble(states=E_hat.states[:, ::stride], grid=grid, origin=E_hat.origin)
        value = grid.dt * loss_w2sq_traj(coarse, coarse_hat).value
        rows.append({"dt": float(dt), "w2sq": value, "change": None if previous is None else abs(value - previous)})
        previous = value
    logger.debug(f"[OT] refinement study: {rows}")
    return rows


def diagnose_pair(
    E: Ensemble,
    E_hat: Ensemble,
    spec: Optional[ProcessSpec] = None,
    spec_hat: Optional[ProcessSpec] = None,
    ladder: Sequence[int] = DEFAULT_LADDER,
    n_boot: int = 50,
    seed: int = 0,
    threads: int = 1,
) -> DiagnosticsReport:
    """
    Distance diagnostics of an ensemble pair on one grid.

    The lower bound (and its bootstrap standard error) is computed only when
    the generating processes are known.
    """
    if not E.grid.matches(E_hat.grid) or E.states.shape != E_hat.states.shape:
        raise TransportError(
            f"ensembles must share grid and shape: {E.states.shape} (N={E.grid.N}) vs {E_hat.states.shape} (N={E_hat.grid.N})"
        )
    per_slice, _ = w2sq_slices(E.states, E_hat.states, list(range(E.grid.N + 1)), threads=threads)
    decoupled = loss_decoupled_w2sq(E, E_hat, threads=threads)
    report = DiagnosticsReport(
        per_slice_w2sq=per_slice.tolist(),
        decoupled_w2sq=decoupled.value,
        rate_ladder=rate_ladder(E.d, ladder),
    )
    if spec is not None and spec_hat is not None:
        report.lower_bound = lower_bound_estimate(spec, spec_hat, E, E_hat)
        report.lower_bound_se = lower_bound_standard_error(spec, spec_hat, E, E_hat, n_boot=n_boot, seed=seed)
    logger.info(f"[OT] decoupled W2^2 = {report.decoupled_w2sq:.6g}, lower bound = {report.lower_bound}")
    return report
