"""
Reconstruction of unknown coefficient functions from an observed ensemble.

Each unknown coefficient is a ReLU network of (x, t). Every epoch simulates
a surrogate ensemble from the observed initial states with freshly drawn
(or fixed) noise, compares it with the observed ensemble through the
configured loss, back-propagates through the taped simulation and takes
one AdamW step over all trainable networks jointly.
"""

import itertools
import time
from typing import Any, Callable, Dict, Iterator, List, Optional

from loguru import logger
import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from tenacity import RetryCallState, Retrying, retry_if_exception_type, stop_after_attempt
from tqdm import tqdm

from . import autodiff as ad
from .losses import LossError, compute_loss, loss_gradient
from .models import (
    Ensemble,
    ErrorReport,
    ExperimentConfig,
    MlpArch,
    NoiseMode,
    PriorMode,
    SweepRow,
    TrainConfig,
    TrainTrace,
)
from .networks import AdamWState, MlpParams, adamw_step, gradients_to_flat, mlp_apply, mlp_init
from .process_model import CoefficientSet, ProcessSpec, evaluate_batch
from .simulator import SimulationBlowUp, derive_seed, sample_noise_tape, simulate_ensemble, simulate_surrogate
from .transport import TransportError

# Seed-derivation keys under a run's root seed.
OBSERVED_KEY = 0
INIT_KEY = 1
NOISE_KEY = 2

COMPONENTS = ("drift", "diffusion", "jump")

# f [M, d], sigma [M, d, m], beta [M, d, n_marks] on one time slice.
CoefficientValues = tuple[np.ndarray, np.ndarray, np.ndarray]

GIVEN_COMPONENT = {
    PriorMode.NONE: None,
    PriorMode.DRIFT_GIVEN: "drift",
    PriorMode.DIFFUSION_GIVEN: "diffusion",
    PriorMode.JUMP_GIVEN: "jump",
}


class ReconstructionError(ValueError):
    """Raised for inconsistent networks, priors or training inputs."""


class TrainingAborted(RuntimeError):
    """Raised when an epoch keeps blowing up after every allowed noise redraw."""

    def __init__(self, epoch: int, attempts: int, trace: TrainTrace, cause: Exception):
        self.epoch = epoch
        self.attempts = attempts
        self.trace = trace
        super().__init__(f"training aborted at epoch {epoch + 1}: {attempts} rejected steps, last: {cause}")


def trainable_components(prior: PriorMode | str) -> List[str]:
    """Coefficient names that carry a network under the given prior mode."""
    given = GIVEN_COMPONENT[PriorMode(prior)]
    return [c for c in COMPONENTS if c != given]


def network_arch(truth: ProcessSpec, config: TrainConfig, component: str) -> MlpArch:
    """Input (x, t) of size d + 1; outputs f [d], sigma [d * m] or beta [d * n_marks]."""
    outputs = {"drift": truth.d, "diffusion": truth.d * truth.m, "jump": truth.d * truth.n_marks}
    shape = getattr(config, f"{component}_net")
    return MlpArch(
        input_dim=truth.d + 1,
        hidden_layers=shape.hidden_layers,
        width=shape.width,
        output_dim=max(outputs[component], 1),
    )


def init_networks(truth: ProcessSpec, config: TrainConfig) -> Dict[str, MlpParams]:
    """Fresh networks for every trainable component, seeded from the run's root seed."""
    return {
        name: mlp_init(network_arch(truth, config, name), config.init, derive_seed(config.seed, INIT_KEY, k))
        for k, name in enumerate(COMPONENTS)
        if name in trainable_components(config.prior)
    }


def _network_fn(layers: list[tuple[Any, Any]], shape: tuple[int, ...]) -> Callable[[Any, float], Any]:
    def evaluate(x: Any, t: float) -> Any:
        M = ad.value_of(x).shape[0]
        inputs = ad.concatenate([x, np.full((M, 1), float(t))], axis=1)
        return ad.reshape(mlp_apply(layers, inputs), (M, *shape))

    return evaluate


def assemble_surrogate(
    prior: PriorMode | str,
    nets: Dict[str, MlpParams],
    truth: ProcessSpec,
    tape: ad.Tape | None = None,
) -> ProcessSpec:
    """
    Build the surrogate process: networks for unknown coefficients, truth for the given one.

    Args:
        prior: Which coefficient (if any) is taken from ``truth``
        nets: One network per trainable component
        truth: Ground-truth process supplying the measure and the prior coefficient
        tape: When given, network parameters are registered on it as named leaves

    Returns:
        Surrogate ProcessSpec sharing ``truth``'s dimensions and jump measure
    """
    prior = PriorMode(prior)
    required = set(trainable_components(prior))
    if set(nets) != required:
        missing = sorted(required - set(nets))
        extra = sorted(set(nets) - required)
        raise ReconstructionError(f"prior {prior.value} needs networks {sorted(required)}; missing {missing}, extra {extra}")
    shapes = {"drift": (truth.d,), "diffusion": (truth.d, truth.m), "jump": (truth.d, truth.n_marks)}
    fns = {}
    for name in COMPONENTS:
        if name not in nets:
            fns[name] = getattr(truth.coefficients, name)
            continue
        params = nets[name]
        expected = (truth.d + 1, int(np.prod(shapes[name])))
        if (params.arch.input_dim, params.arch.output_dim) != expected:
            raise ReconstructionError(
                f"{name} network maps {params.arch.input_dim} -> {params.arch.output_dim}, expected {expected[0]} -> {expected[1]}"
            )
        layers = params.bind(tape, name) if tape is not None else params.layers()
        fns[name] = _network_fn(layers, shapes[name])
    return ProcessSpec(
        d=truth.d,
        m=truth.m,
        measure=truth.measure,
        coefficients=CoefficientSet(**fns),
        source="surrogate",
        name=f"surrogate[{prior.value}]",
        networks=dict(nets),
    )


def _ratio(numerator: float, denominator: float, label: str) -> Optional[float]:
    if denominator <= 0:
        logger.warning(f"[TRAIN] {label} error undefined: ground-truth magnitude is zero")
        return None
    return float(numerator / denominator)


def _slices(
    truth: ProcessSpec, hat: ProcessSpec, observed: Ensemble
) -> Iterator[tuple[CoefficientValues, CoefficientValues]]:
    for i, t in enumerate(observed.grid.times()):
        x = observed.states[:, i, :]
        yield evaluate_batch(truth, x, float(t)), evaluate_batch(hat, x, float(t))


def error_metrics_scalar(truth: ProcessSpec, hat: ProcessSpec, observed: Ensemble) -> ErrorReport:
    """
    Relative L1 errors of f, |sigma| and the rate-weighted jump amplitudes (d = 1).

    Sums run over every trajectory of ``observed`` and every grid point t_0..t_N.
    """
    if truth.d != 1:
        raise ReconstructionError(f"scalar error metrics need d = 1, got d = {truth.d}")
    rates = truth.measure.rate_array()
    totals = np.zeros(6)
    for (f, sigma, beta), (f_hat, sigma_hat, beta_hat) in _slices(truth, hat, observed):
        size = np.linalg.norm(sigma, axis=(1, 2))
        size_hat = np.linalg.norm(sigma_hat, axis=(1, 2))
        totals += [
            np.abs(f - f_hat).sum(),
            np.abs(f).sum(),
            np.abs(size - size_hat).sum(),
            size.sum(),
            (np.abs(beta - beta_hat)[:, 0, :] @ rates).sum(),
            (np.abs(beta)[:, 0, :] @ rates).sum(),
        ]
    return ErrorReport(
        form="scalar",
        drift_err=_ratio(totals[0], totals[1], "drift"),
        diffusion_err=_ratio(totals[2], totals[3], "diffusion"),
        jump_err=_ratio(totals[4], totals[5], "jump"),
    )


def error_metrics_matrix(truth: ProcessSpec, hat: ProcessSpec, observed: Ensemble) -> ErrorReport:
    """
    Relative errors for d >= 2 on the products sigma sigma^T and beta diag(rates) beta^T.

    The product errors are squared Frobenius norms normalized by the
    reconstructed products; the drift error is a relative vector-norm error.
    """
    if truth.d < 2:
        raise ReconstructionError(f"matrix error metrics need d >= 2, got d = {truth.d}")
    rates = truth.measure.rate_array()
    totals = np.zeros(6)
    for (f, sigma, beta), (f_hat, sigma_hat, beta_hat) in _slices(truth, hat, observed):
        ss = np.einsum("jik,jlk->jil", sigma, sigma)
        ss_hat = np.einsum("jik,jlk->jil", sigma_hat, sigma_hat)
        bb = np.einsum("jis,s,jls->jil", beta, rates, beta)
        bb_hat = np.einsum("jis,s,jls->jil", beta_hat, rates, beta_hat)
        totals += [
            np.linalg.norm(f - f_hat, axis=1).sum(),
            np.linalg.norm(f, axis=1).sum(),
            np.sum((ss - ss_hat) ** 2),
            np.sum(ss_hat**2),
            np.sum((bb - bb_hat) ** 2),
            np.sum(bb_hat**2),
        ]
    return ErrorReport(
        form="matrix",
        drift_err=_ratio(totals[0], totals[1], "drift"),
        diffusion_err=_ratio(totals[2], totals[3], "diffusion"),
        jump_err=_ratio(totals[4], totals[5], "jump"),
    )


def evaluate_errors(truth: ProcessSpec, hat: ProcessSpec, observed: Ensemble) -> ErrorReport:
    """Scalar metrics for d = 1, matrix metrics otherwise."""
    if truth.d == 1:
        return error_metrics_scalar(truth, hat, observed)
    return error_metrics_matrix(truth, hat, observed)


def _noise_seed(config: TrainConfig, epoch: int, attempt: int) -> int:
    # Fixed noise replays one tape, but a retry after a blow-up always redraws.
    if config.resimulate_noise is NoiseMode.FIXED and attempt == 0:
        return derive_seed(config.seed, NOISE_KEY)
    return derive_seed(config.seed, NOISE_KEY, epoch, attempt)


def _split_flat(flat: np.ndarray, nets: Dict[str, MlpParams]) -> Dict[str, MlpParams]:
    out, offset = {}, 0
    for name, params in nets.items():
        out[name] = params.with_flat(flat[offset : offset + params.n_params])
        offset += params.n_params
    return out


def train(
    config: TrainConfig,
    observed: Ensemble,
    truth_for_eval: ProcessSpec,
    nets: Optional[Dict[str, MlpParams]] = None,
    optimizer: Optional[AdamWState] = None,
    start_epoch: int = 0,
    threads: int = 1,
    fixed_surrogate: Optional[ProcessSpec] = None,
    progress: bool = False,
) -> tuple[TrainTrace, ErrorReport]:
    """
    Fit the unknown coefficients to ``observed`` by gradient descent on the configured loss.

    Args:
        config: Optimizer, grid, network and seed settings
        observed: Ground-truth ensemble on ``config.grid`` with ``config.M_s`` trajectories
        truth_for_eval: Ground-truth process; supplies the prior coefficient and the error reference
        nets: Networks to continue from (fresh ones are initialized otherwise)
        optimizer: AdamW state to continue from
        start_epoch: Number of epochs already completed by ``nets``/``optimizer``
        threads: Worker threads for the per-slice transport solves
        fixed_surrogate: Evaluate this process every epoch instead of training networks
        progress: Show a tqdm progress bar

    Returns:
        (TrainTrace, ErrorReport of the final surrogate)
    """
    grid = config.grid
    if not observed.grid.matches(grid):
        raise ReconstructionError(f"observed ensemble lives on N={observed.grid.N}, T={observed.grid.T}; config grid is N={grid.N}, T={grid.T}")
    if observed.M != config.M_s:
        raise ReconstructionError(f"observed ensemble has {observed.M} trajectories, config.M_s is {config.M_s}")
    if observed.d != truth_for_eval.d:
        raise ReconstructionError(f"observed dimension {observed.d} does not match model dimension {truth_for_eval.d}")

    if fixed_surrogate is not None:
        nets = {}
    elif nets is None:
        nets = init_networks(truth_for_eval, config)
    nets = dict(nets)
    flat = np.concatenate([p.flatten() for p in nets.values()]) if nets else np.zeros(0)
    if optimizer is None:
        optimizer = AdamWState.zeros(flat.size, config.lr, config.weight_decay)
    elif optimizer.m.shape != flat.shape:
        raise ReconstructionError(f"optimizer state holds {optimizer.m.size} parameters, networks hold {flat.size}")

    initial = observed.states[:, 0, :]
    trace = TrainTrace(root_seed=config.seed, start_epoch=start_epoch)
    logger.info(
        f"[TRAIN] {config.loss_kind.value} | prior={config.prior.value} | networks={list(nets) or 'none'} "
        f"| epochs {start_epoch}->{config.epochs} | M_s={config.M_s} N={grid.N} dt={grid.dt:g}"
    )

    def one_pass(epoch: int, attempt: int) -> tuple[float, int, np.ndarray]:
        seed = _noise_seed(config, epoch, attempt)
        tape = ad.Tape()
        surrogate = fixed_surrogate or assemble_surrogate(config.prior, nets, truth_for_eval, tape=tape)
        noise = sample_noise_tape(grid, truth_for_eval.m, truth_for_eval.measure, config.M_s, seed)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            ensemble, states = simulate_surrogate(surrogate, grid, initial, noise)
            try:
                loss = compute_loss(
                    config.loss_kind, observed, ensemble, include_initial=config.include_initial_slice, threads=threads
                )
            except TransportError as e:
                raise SimulationBlowUp(-1, grid.N, grid.T, f"surrogate states out of range: {e}") from e
            if not np.isfinite(loss.value):
                raise SimulationBlowUp(-1, grid.N, grid.T, "non-finite loss")
            if not nets:
                return loss.value, seed, np.zeros(0)
            grads = loss_gradient(config.loss_kind, observed, ensemble, tape, states, loss=loss)
            flat_grad = np.concatenate([gradients_to_flat(grads, p, name) for name, p in nets.items()])
        if not np.isfinite(flat_grad).all():
            raise SimulationBlowUp(-1, grid.N, grid.T, "non-finite parameter gradient")
        return loss.value, seed, flat_grad

    def reject(state: RetryCallState) -> None:
        trace.rejected_steps += 1
        exc = state.outcome.exception() if state.outcome else None
        logger.warning(f"[TRAIN] rejected step (attempt {state.attempt_number}/{config.max_blowups}): {exc}; redrawing noise")

    epochs = range(start_epoch, config.epochs)
    for epoch in tqdm(epochs, desc="train", disable=not progress, leave=False):
        started = time.perf_counter()
        retrying = Retrying(
            stop=stop_after_attempt(config.max_blowups),
            retry=retry_if_exception_type(SimulationBlowUp),
            after=reject,
            reraise=True,
        )
        try:
            for attempt in retrying:
                with attempt:
                    value, seed, flat_grad = one_pass(epoch, attempt.retry_state.attempt_number - 1)
        except SimulationBlowUp as e:
            trace.final_params = nets
            trace.optimizer_state = optimizer
            raise TrainingAborted(epoch, config.max_blowups, trace, e) from e

        if nets:
            flat, optimizer = adamw_step(flat, flat_grad, optimizer)
            nets = _split_flat(flat, nets)
        elapsed = time.perf_counter() - started
        trace.losses.append(value)
        trace.epoch_seconds.append(elapsed)
        trace.seeds.append(seed)
        if (epoch + 1) % config.log_every == 0 or epoch + 1 == config.epochs:
            logger.info(f"[TRAIN] epoch {epoch + 1}/{config.epochs} loss={value:.6g} ({elapsed:.2f}s)")

    trace.final_params = nets
    trace.optimizer_state = optimizer
    hat = fixed_surrogate or assemble_surrogate(config.prior, nets, truth_for_eval)
    report = evaluate_errors(truth_for_eval, hat, observed)
    logger.info(
        f"[TRAIN] finished {trace.epochs_completed} epochs, {trace.rejected_steps} rejected | "
        f"errors drift={report.drift_err} diffusion={report.diffusion_err} jump={report.jump_err}"
    )
    return trace, report


class ExperimentResult(BaseModel):
    """Everything one end-to-end run produces."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    config: ExperimentConfig
    truth: ProcessSpec
    observed: Ensemble
    trace: TrainTrace
    report: ErrorReport
    observed_seed: int


def simulate_observed(config: ExperimentConfig, truth: ProcessSpec) -> tuple[Ensemble, int]:
    """Ground-truth ensemble on the training grid, seeded from the run's root seed."""
    seed = derive_seed(config.train.seed, OBSERVED_KEY)
    observed = simulate_ensemble(truth, config.train.grid, config.initial, config.train.M_s, seed=seed)
    return observed, seed


def run_experiment(
    config: ExperimentConfig,
    nets: Optional[Dict[str, MlpParams]] = None,
    optimizer: Optional[AdamWState] = None,
    start_epoch: int = 0,
    observed: Optional[Ensemble] = None,
    progress: bool = False,
) -> ExperimentResult:
    """Simulate the observed ensemble (unless given), train, and evaluate."""
    from .config import validate_experiment

    truth = validate_experiment(config)
    observed_seed = derive_seed(config.train.seed, OBSERVED_KEY)
    if observed is None:
        observed, observed_seed = simulate_observed(config, truth)
    trace, report = train(
        config.train,
        observed,
        truth,
        nets=nets,
        optimizer=optimizer,
        start_epoch=start_epoch,
        threads=config.threads,
        progress=progress,
    )
    return ExperimentResult(
        config=config, truth=truth, observed=observed, trace=trace, report=report, observed_seed=observed_seed
    )


def expand_axes(axes: Dict[str, List[Any]]) -> List[Dict[str, Any]]:
    """Cartesian product of the sweep axes, in axis insertion order."""
    if not axes:
        return [{}]
    paths = list(axes)
    return [dict(zip(paths, combo, strict=True)) for combo in itertools.product(*(axes[p] for p in paths))]


def cell_seed(base_seed: int, cell: int, repeat: int) -> int:
    return base_seed + 10007 * cell + repeat


def sweep(
    config: ExperimentConfig,
    axes: Optional[Dict[str, List[Any]]] = None,
    repeats: Optional[int] = None,
    progress: bool = True,
    on_row: Optional[Callable[[SweepRow], None]] = None,
) -> List[SweepRow]:
    """
    Run every (cell, repeat) of a grid of config overrides.

    A failed run is recorded with status "failed" and the sweep continues.
    """
    from .config import ConfigError, apply_overrides

    axes = config.sweep.axes if axes is None else axes
    repeats = repeats or config.sweep.repeats or config.repeats
    cells = expand_axes(axes)
    jobs = [(c, r) for c in range(len(cells)) for r in range(repeats)]
    logger.info(f"[SWEEP] {config.name}: {len(cells)} cells x {repeats} repeats")
    rows: List[SweepRow] = []
    for cell, repeat in tqdm(jobs, desc="sweep", disable=not progress):
        overrides = cells[cell]
        seed = cell_seed(config.train.seed, cell, repeat)
        started = time.perf_counter()
        try:
            run_config = apply_overrides(config, {**overrides, "train.seed": seed})
            result = run_experiment(run_config)
            row = SweepRow(
                cell=cell,
                repeat=repeat,
                seed=seed,
                overrides=overrides,
                drift_err=result.report.drift_err,
                diffusion_err=result.report.diffusion_err,
                jump_err=result.report.jump_err,
                final_loss=result.trace.losses[-1] if result.trace.losses else None,
                duration=time.perf_counter() - started,
            )
        except (TrainingAborted, SimulationBlowUp, TransportError, LossError, ReconstructionError, ConfigError) as e:
            logger.error(f"[SWEEP] cell {cell} repeat {repeat} failed: {e}")
            row = SweepRow(
                cell=cell,
                repeat=repeat,
                seed=seed,
                overrides=overrides,
                status="failed",
                error=str(e),
                duration=time.perf_counter() - started,
            )
        rows.append(row)
        if on_row is not None:
            on_row(row)
    failed = sum(r.status == "failed" for r in rows)
    logger.info(f"[SWEEP] done: {len(rows) - failed} ok, {failed} failed")
    return rows


def _override_label(value: Any) -> Any:
    return ",".join(map(str, value)) if isinstance(value, list | tuple) else value


def sweep_table(rows: List[SweepRow]) -> pd.DataFrame:
    """One row per (cell, repeat), override paths as columns."""
    records = []
    for row in rows:
        record = row.model_dump(exclude={"overrides"})
        record.update({path: _override_label(v) for path, v in row.overrides.items()})
        records.append(record)
    return pd.DataFrame.from_records(records)


def summarize_sweep(table: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard deviation of the errors per cell over successful repeats."""
    if table.empty:
        return table
    ok = table[table["status"] == "ok"]
    fixed = [c for c in SweepRow.model_fields if c != "overrides"]
    keys = ["cell"] + [c for c in table.columns if c not in fixed]
    metrics = ["drift_err", "diffusion_err", "jump_err", "final_loss"]
    summary = ok.groupby(keys, dropna=False)[metrics].agg(["mean", "std"])
    summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
    counts = table.groupby("cell")["status"].agg(runs="count", failed=lambda s: int((s == "failed").sum()))
    return summary.reset_index().merge(counts.reset_index(), on="cell", how="right")


def coefficient_profile(
    truth: ProcessSpec,
    hat: ProcessSpec,
    points: np.ndarray,
    t: float = 0.0,
) -> pd.DataFrame:
    """
    Tabulate true and reconstructed coefficients at the given states.

    Args:
        truth: Ground-truth process
        hat: Reconstructed process
        points: States [K, d]
        t: Evaluation time

    Returns:
        DataFrame with state columns x1..xd followed by f, sigma and beta
        entries, each true value next to its reconstruction
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    f, sigma, beta = evaluate_batch(truth, points, t)
    f_hat, sigma_hat, beta_hat = evaluate_batch(hat, points, t)
    columns: Dict[str, np.ndarray] = {f"x{i + 1}": points[:, i] for i in range(truth.d)}
    for i in range(truth.d):
        columns[f"f{i + 1}"] = f[:, i]
        columns[f"f{i + 1}_hat"] = f_hat[:, i]
    for i in range(truth.d):
        for k in range(truth.m):
            columns[f"sigma{i + 1}{k + 1}"] = sigma[:, i, k]
            columns[f"sigma{i + 1}{k + 1}_hat"] = sigma_hat[:, i, k]
    for i in range(truth.d):
        for s in range(truth.n_marks):
            columns[f"beta{i + 1}_{s + 1}"] = beta[:, i, s]
            columns[f"beta{i + 1}_{s + 1}_hat"] = beta_hat[:, i, s]
    return pd.DataFrame(columns)
