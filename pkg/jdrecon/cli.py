"""
CLI interface for simulating jump-diffusion ensembles and reconstructing their coefficients.
"""

from io import StringIO
import json
from pathlib import Path
import sys
import time
from typing import Any, Callable, Dict, List, Optional

import click
from loguru import logger
import numpy as np
from pydantic import BaseModel, ValidationError
from rich.console import Console
from rich.table import Table
import yaml

from .config import (
    PRESETS,
    SWEEP_PRESETS,
    ConfigError,
    apply_overrides,
    config_hash,
    create_sample_config,
    load_config,
    parse_override_args,
    validate_experiment,
)
from .diagnostics import diagnose_pair, refinement_study
from .losses import LossError
from .models import (
    DiagnosticsReport,
    Ensemble,
    ExperimentConfig,
    PriorMode,
    RunManifest,
    SweepSummary,
    TrainSummary,
)
from .networks import CheckpointError, load_checkpoint, save_checkpoint
from .process_model import ProcessModelError, ProcessSpec, build_model
from .reconstruction import (
    OBSERVED_KEY,
    ReconstructionError,
    TrainingAborted,
    assemble_surrogate,
    coefficient_profile,
    expand_axes,
    run_experiment,
    simulate_observed,
    summarize_sweep,
    sweep,
    sweep_table,
)
from .simulator import SimulationBlowUp, derive_seed, simulate_ensemble
from .storage import (
    StorageError,
    package_versions,
    read_ensemble,
    write_ensemble_binary,
    write_ensemble_csv,
    write_json,
    write_manifest,
    write_trace,
)
from .transport import TransportError

console = Console()

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

CONFIG_ERRORS = (ConfigError, StorageError, CheckpointError, ValidationError, ProcessModelError, ReconstructionError, FileNotFoundError)
NUMERICAL_ERRORS = (SimulationBlowUp, TrainingAborted, TransportError, LossError)

PRIOR_FLAGS = {
    "none": PriorMode.NONE,
    "drift": PriorMode.DRIFT_GIVEN,
    "diffusion": PriorMode.DIFFUSION_GIVEN,
    "jump": PriorMode.JUMP_GIVEN,
}

OVERRIDE_SETTINGS = {"ignore_unknown_options": True, "allow_extra_args": True}


LOG_FORMAT = "<green>{time:HH:mm:ss.SSS}</green> <level>{level: <7}</level> {message}"
DEBUG_LOG_FORMAT = (
    "<green>{time:HH:mm:ss.SSS}</green> <level>{level: <7}</level> "
    "<cyan>{name}:{function}:{line}</cyan> {message}"
)


def setup_logging(log_level: str) -> str:
    """
    Send jdrecon's ``[TAG]`` records to stderr at ``log_level``.

    Records from other packages pass only at WARNING and above. DEBUG adds the
    emitting location and annotated tracebacks.
    """
    level = log_level.upper()
    debug = level == "DEBUG"
    logger.remove()
    logger.add(
        sys.stderr,
        level=0,
        filter={"": "WARNING", "jdrecon": level},
        format=DEBUG_LOG_FORMAT if debug else LOG_FORMAT,
        backtrace=debug,
        diagnose=debug,
    )
    return level


def _fmt(value: Optional[float]) -> str:
    return "undefined" if value is None else f"{value:.4f}"


def _render(*tables: Table) -> str:
    temp_console = Console(file=StringIO(), width=120)
    for k, table in enumerate(tables):
        if k:
            temp_console.print("\n")
        temp_console.print(table)
    return temp_console.file.getvalue()  # type: ignore[attr-defined]


def _train_tables(result: TrainSummary) -> List[Table]:
    summary = Table(title=f"Training Summary: {result.name}", show_header=True, header_style="bold magenta")
    summary.add_column("Metric", style="cyan")
    summary.add_column("Value", style="green")
    summary.add_row("Loss", result.loss_kind.value)
    summary.add_row("Prior", result.prior.value)
    summary.add_row("Epochs", f"{result.start_epoch} -> {result.epochs}")
    summary.add_row("Final Loss", "-" if result.final_loss is None else f"{result.final_loss:.6g}")
    summary.add_row("Rejected Steps", str(result.rejected_steps))
    summary.add_row("Duration", f"{result.duration:.2f}s")
    summary.add_row("Output", result.output_dir)

    errors = Table(title=f"Reconstruction Errors ({result.report.form})", show_header=True, header_style="bold magenta")
    errors.add_column("Coefficient", style="cyan")
    errors.add_column("Relative Error", style="yellow")
    errors.add_row("drift", _fmt(result.report.drift_err))
    errors.add_row("diffusion", _fmt(result.report.diffusion_err))
    errors.add_row("jump", _fmt(result.report.jump_err))
    return [summary, errors]


def _sweep_tables(result: SweepSummary) -> List[Table]:
    summary = Table(title=f"Sweep Summary: {result.name}", show_header=True, header_style="bold magenta")
    summary.add_column("Metric", style="cyan")
    summary.add_column("Value", style="green")
    summary.add_row("Cells", str(result.cells))
    summary.add_row("Repeats", str(result.repeats))
    summary.add_row("Failed Runs", str(result.failed))
    summary.add_row("Duration", f"{result.duration:.2f}s")
    summary.add_row("Output", result.output_dir)

    details = Table(title="Runs", show_header=True, header_style="bold magenta")
    details.add_column("Cell", style="cyan")
    details.add_column("Repeat", style="blue")
    details.add_column("Overrides", style="white")
    details.add_column("Status", style="green")
    details.add_column("Drift", style="yellow")
    details.add_column("Diffusion", style="yellow")
    details.add_column("Jump", style="yellow")
    details.add_column("Error", style="red")
    for row in result.rows:
        status = "[green]✓[/green]" if row.status == "ok" else "[red]✗[/red]"
        overrides = ", ".join(f"{k}={v}" for k, v in row.overrides.items())
        details.add_row(
            str(row.cell),
            str(row.repeat),
            overrides,
            status,
            _fmt(row.drift_err),
            _fmt(row.diffusion_err),
            _fmt(row.jump_err),
            row.error or "",
        )
    return [summary, details]


def _diagnostics_tables(result: DiagnosticsReport) -> List[Table]:
    summary = Table(title="Distance Diagnostics", show_header=True, header_style="bold magenta")
    summary.add_column("Metric", style="cyan")
    summary.add_column("Value", style="green")
    summary.add_row("Decoupled W2^2", f"{result.decoupled_w2sq:.6g}")
    summary.add_row("Max slice W2^2", f"{max(result.per_slice_w2sq, default=0.0):.6g}")
    if result.lower_bound is not None:
        summary.add_row("Lower bound", f"{result.lower_bound:.6g}")
        summary.add_row("Lower bound SE", _fmt(result.lower_bound_se))

    ladder = Table(title="Convergence Rate Ladder", show_header=True, header_style="bold magenta")
    ladder.add_column("M", style="cyan")
    ladder.add_column("n", style="blue")
    ladder.add_column("h(M, n)", style="yellow")
    for row in result.rate_ladder:
        ladder.add_row(str(row.M), str(row.n), f"{row.h:.6g}")
    tables = [summary, ladder]

    if result.refinement:
        refinement = Table(title="Time Refinement", show_header=True, header_style="bold magenta")
        refinement.add_column("dt", style="cyan")
        refinement.add_column("W2^2", style="yellow")
        refinement.add_column("Change", style="green")
        for row in result.refinement:
            change = "-" if row["change"] is None else f"{row['change']:.6g}"
            refinement.add_row(f"{row['dt']:g}", f"{row['w2sq']:.6g}", change)
        tables.append(refinement)
    return tables


def _presets_table(presets: Dict[str, ExperimentConfig]) -> Table:
    table = Table(title="Experiment Presets", show_header=True, header_style="bold magenta")
    for column in ("Preset", "Model", "Loss", "Prior", "lr", "wd", "Epochs", "M_s", "dt", "N", "Networks"):
        table.add_column(column, style="cyan" if column == "Preset" else "green")
    for name, config in presets.items():
        train = config.train
        nets = ", ".join(
            f"{c}={getattr(train, f'{c}_net').hidden_layers}x{getattr(train, f'{c}_net').width}"
            for c in ("drift", "diffusion", "jump")
            if c != {"drift_given": "drift", "diffusion_given": "diffusion", "jump_given": "jump"}.get(train.prior.value)
        )
        table.add_row(
            name,
            config.model.id,
            train.loss_kind.value,
            train.prior.value,
            f"{train.lr:g}",
            f"{train.weight_decay:g}",
            str(train.epochs),
            str(train.M_s),
            f"{train.dt:g}",
            str(train.N),
            nets,
        )
    return table


def _jsonable(result: Any) -> Any:
    if isinstance(result, BaseModel):
        return result.model_dump(mode="json")
    if isinstance(result, dict):
        return {k: _jsonable(v) for k, v in result.items()}
    return result


def generate_report(result: Any, output_format: str = "text") -> str:
    """
    Generate a report of a train, sweep or diagnose result, or of the preset table.

    Args:
        result: TrainSummary, SweepSummary, DiagnosticsReport or a preset mapping
        output_format: Output format (text, json, yaml)

    Returns:
        Report string
    """
    if output_format == "json":
        return json.dumps(_jsonable(result), indent=2)

    elif output_format == "yaml":
        return yaml.safe_dump(_jsonable(result), default_flow_style=False, sort_keys=False)

    if isinstance(result, TrainSummary):
        return _render(*_train_tables(result))
    if isinstance(result, SweepSummary):
        return _render(*_sweep_tables(result))
    if isinstance(result, DiagnosticsReport):
        return _render(*_diagnostics_tables(result))
    return _render(_presets_table(result))


def _run_guarded(log_level: str, action: Callable[[], None]) -> None:
    """Run a command body, mapping failures onto exit codes 2 (configuration) and 3 (numerical)."""
    current_log_level = setup_logging(log_level)
    try:
        action()
    except CONFIG_ERRORS as e:
        _report_failure(e, current_log_level)
        sys.exit(EXIT_CONFIG)
    except NUMERICAL_ERRORS as e:
        _report_failure(e, current_log_level)
        sys.exit(EXIT_NUMERICAL)


def _report_failure(error: Exception, log_level: str) -> None:
    logger.error(f"[CLI] {error.__class__.__name__}: {error}")
    if log_level == "DEBUG":
        logger.exception("[CLI] traceback")


def _prepare_config(
    source: str, extra_args: List[str], threads: Optional[int], overrides: Optional[Dict[str, Any]] = None
) -> ExperimentConfig:
    config = load_config(source)
    explicit = {path: value for path, value in (overrides or {}).items() if value is not None}
    explicit.update(parse_override_args(extra_args))
    if threads is not None:
        explicit["threads"] = threads
    config = apply_overrides(config, explicit)
    validate_experiment(config)
    return config


def _output_dir(config: ExperimentConfig, output_dir: Optional[str]) -> Path:
    path = Path(output_dir or config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _manifest(command: str, config: ExperimentConfig, artifacts: List[str], started: float, seeds: Dict[str, int]) -> RunManifest:
    return RunManifest(
        command=command,
        config=config.model_dump(mode="json"),
        config_hash=config_hash(config),
        seeds=seeds,
        artifacts=sorted(set(artifacts + ["manifest.json"])),
        versions=package_versions(),
        wall_clock_seconds=time.perf_counter() - started,
    )


COMMON_OPTIONS = [
    click.option(
        "--log-level",
        type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]),
        default="INFO",
        help="Log level",
        envvar="JDRECON_LOG_LEVEL",
    ),
    click.option(
        "--threads",
        type=click.IntRange(min=1),
        default=None,
        help="Worker threads for transport solves (overrides the config)",
        envvar="JDRECON_THREADS",
    ),
    click.option(
        "--output-format",
        type=click.Choice(["text", "json", "yaml"]),
        default="text",
        help="Output format for the report",
    ),
]


def common_options(command: Callable[..., Any]) -> Callable[..., Any]:
    """--log-level, --threads and --output-format shared by the compute commands."""
    for option in reversed(COMMON_OPTIONS):
        command = option(command)
    return command


@click.group(invoke_without_command=True)
@click.pass_context
def cli(ctx: click.Context) -> None:
    """Simulate jump-diffusions and reconstruct their coefficients from trajectory ensembles.

    CONFIG arguments accept a YAML/JSON experiment file or a preset name
    (see `jdrecon presets`). Any config field can be overridden after the
    command's arguments by its dotted path, e.g. --train.lr 0.001.
    """
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


@cli.command()
@click.argument("name", required=False)
@click.option(
    "--write",
    "write_path",
    help="Write the named preset (default example1-desk) as a config file to this path",
    default=None,
    type=click.Path(),
)
@click.option(
    "--output-format",
    type=click.Choice(["text", "json", "yaml"]),
    default="text",
    help="Output format for the preset listing",
)
def presets(name: Optional[str], write_path: Optional[str], output_format: str) -> None:
    """List the experiment presets or write one to a config file.

    Examples:
      jdrecon presets                                   # Table of all presets
      jdrecon presets example2 --output-format yaml     # One preset as YAML
      jdrecon presets example2-desk --write exp.yaml    # Start a config from a preset
    """
    if name is not None and name not in PRESETS:
        console.print(f"[red]Unknown preset {name!r}; available: {', '.join(PRESETS)}[/red]")
        sys.exit(EXIT_CONFIG)
    if write_path:
        create_sample_config(write_path, name or "example1-desk")
        console.print(f"[green]Configuration written: {write_path}[/green]")
        return
    selected = {n: factory() for n, factory in PRESETS.items() if name is None or n == name}
    if output_format == "text":
        console.print(generate_report(selected, output_format))
        console.print(f"Sweep grids: {', '.join(SWEEP_PRESETS)}")
    else:
        click.echo(generate_report(selected, output_format))


@cli.command(context_settings=OVERRIDE_SETTINGS)
@click.argument("config_source", metavar="CONFIG")
@click.option("--output-dir", "-o", default=None, help="Directory for the ensemble files (default: config output_dir)")
@click.option(
    "--format",
    "file_format",
    type=click.Choice(["csv", "binary", "both"]),
    default="both",
    help="Ensemble file format",
)
@common_options
@click.pass_context
def simulate(
    ctx: click.Context,
    config_source: str,
    output_dir: Optional[str],
    file_format: str,
    log_level: str,
    threads: Optional[int],
    output_format: str,
) -> None:
    """Simulate the ground-truth ensemble of an experiment.

    Examples:
      jdrecon simulate example1                         # observed.csv + observed.jde
      jdrecon simulate exp.yaml --train.M_s=1000 --format binary
    """

    def action() -> None:
        started = time.perf_counter()
        config = _prepare_config(config_source, ctx.args, threads)
        truth = validate_experiment(config)
        out = _output_dir(config, output_dir)
        observed, seed = simulate_observed(config, truth)
        artifacts = []
        if file_format in ("csv", "both"):
            write_ensemble_csv(observed, out / "observed.csv")
            artifacts.append("observed.csv")
        if file_format in ("binary", "both"):
            write_ensemble_binary(observed, out / "observed.jde")
            artifacts.append("observed.jde")
        write_manifest(_manifest("simulate", config, artifacts, started, {"root": config.train.seed, "observed": seed}), out)
        logger.success(f"[CLI] simulated {observed.M} trajectories x {observed.grid.N} steps into {out}")

    _run_guarded(log_level, action)


@cli.command(context_settings=OVERRIDE_SETTINGS)
@click.argument("config_source", metavar="CONFIG")
@click.option("--ensemble", "ensemble_path", default=None, type=click.Path(), help="Observed ensemble file (.csv or .jde)")
@click.option(
    "--prior",
    type=click.Choice(list(PRIOR_FLAGS)),
    default=None,
    help="Coefficient given as prior information",
)
@click.option("--epochs", type=click.IntRange(min=0), default=None, help="Total number of epochs")
@click.option("--resume", "resume_path", default=None, type=click.Path(), help="Continue from a JDNN checkpoint")
@click.option("--output-dir", "-o", default=None, help="Directory for trace, report and checkpoint")
@click.option("--progress/--no-progress", default=False, help="Show a progress bar over epochs")
@common_options
@click.pass_context
def train(
    ctx: click.Context,
    config_source: str,
    ensemble_path: Optional[str],
    prior: Optional[str],
    epochs: Optional[int],
    resume_path: Optional[str],
    output_dir: Optional[str],
    progress: bool,
    log_level: str,
    threads: Optional[int],
    output_format: str,
) -> None:
    """Reconstruct the coefficients of an experiment from its observed ensemble.

    Examples:
      jdrecon train example2-desk --prior drift              # Drift given as prior
      jdrecon train exp.yaml --epochs 0                      # Evaluate untrained networks
      jdrecon train exp.yaml --resume runs/x/checkpoint.jdnn --epochs 200
    """

    def action() -> None:
        started = time.perf_counter()
        overrides: Dict[str, Any] = {
            "train.prior": PRIOR_FLAGS[prior].value if prior else None,
            "train.epochs": epochs,
        }
        observed: Optional[Ensemble] = None
        if ensemble_path:
            observed = read_ensemble(ensemble_path)
            overrides["train.M_s"] = observed.M
        config = _prepare_config(config_source, ctx.args, threads, overrides)
        out = _output_dir(config, output_dir)

        nets, optimizer, start_epoch = None, None, 0
        if resume_path:
            nets, optimizer, start_epoch = load_checkpoint(resume_path)
            logger.info(f"[CLI] resuming from {resume_path} after {start_epoch} epochs")
            if start_epoch > config.train.epochs:
                raise ConfigError(f"checkpoint has {start_epoch} epochs, more than train.epochs={config.train.epochs}")

        result = run_experiment(
            config, nets=nets, optimizer=optimizer, start_epoch=start_epoch, observed=observed, progress=progress
        )
        trace = result.trace
        artifacts = write_trace(trace, out)
        write_json(result.report, out / "report.json")
        save_checkpoint(out / "checkpoint.jdnn", trace.final_params or {}, trace.optimizer_state, config.train.epochs)
        artifacts += ["report.json", "checkpoint.jdnn"]
        if observed is None:
            write_ensemble_binary(result.observed, out / "observed.jde")
            artifacts.append("observed.jde")
        seeds = {"root": config.train.seed, "observed": derive_seed(config.train.seed, OBSERVED_KEY)}
        write_manifest(_manifest("train", config, artifacts, started, seeds), out)

        summary = TrainSummary(
            name=config.name,
            prior=config.train.prior,
            loss_kind=config.train.loss_kind,
            start_epoch=start_epoch,
            epochs=config.train.epochs,
            final_loss=trace.losses[-1] if trace.losses else None,
            rejected_steps=trace.rejected_steps,
            report=result.report,
            duration=time.perf_counter() - started,
            output_dir=str(out),
        )
        click.echo(generate_report(summary, output_format))

    _run_guarded(log_level, action)


@cli.command(name="sweep", context_settings=OVERRIDE_SETTINGS)
@click.argument("config_source", metavar="CONFIG")
@click.option(
    "--grid",
    type=click.Choice(list(SWEEP_PRESETS)),
    default=None,
    help="Named ablation grid (replaces the config's sweep.axes)",
)
@click.option("--repeats", type=click.IntRange(min=1), default=None, help="Seeded repeats per cell")
@click.option("--output-dir", "-o", default=None, help="Directory for sweep.csv and sweep_summary.csv")
@common_options
@click.pass_context
def sweep_command(
    ctx: click.Context,
    config_source: str,
    grid: Optional[str],
    repeats: Optional[int],
    output_dir: Optional[str],
    log_level: str,
    threads: Optional[int],
    output_format: str,
) -> None:
    """Run a grid of config overrides, each cell repeated with distinct seeds.

    Examples:
      jdrecon sweep example1-desk --grid initial-noise --repeats 2
      jdrecon sweep exp.yaml                           # Axes from sweep.axes
    """

    def action() -> None:
        started = time.perf_counter()
        config = _prepare_config(config_source, ctx.args, threads)
        if grid:
            preset = SWEEP_PRESETS[grid]
            config = apply_overrides(config, preset["fixed"])
            config = config.model_copy(update={"sweep": config.sweep.model_copy(update={"axes": preset["axes"]})})
            validate_experiment(config)
        out = _output_dir(config, output_dir)
        n_repeats = repeats or config.sweep.repeats or config.repeats
        rows = sweep(config, repeats=n_repeats, progress=log_level != "DEBUG")
        table = sweep_table(rows)
        table.to_csv(out / "sweep.csv", index=False, float_format="%.17g")
        summarize_sweep(table).to_csv(out / "sweep_summary.csv", index=False, float_format="%.17g")
        write_manifest(
            _manifest("sweep", config, ["sweep.csv", "sweep_summary.csv"], started, {"root": config.train.seed}), out
        )
        summary = SweepSummary(
            name=config.name,
            cells=len(expand_axes(config.sweep.axes)),
            repeats=n_repeats,
            rows=rows,
            duration=time.perf_counter() - started,
            output_dir=str(out),
        )
        click.echo(generate_report(summary, output_format))

    _run_guarded(log_level, action)


def _parse_hat_params(items: List[str]) -> Dict[str, Any]:
    params: Dict[str, Any] = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--hat-param expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        params[key.strip()] = yaml.safe_load(raw)
    return params


def _hat_process(config: ExperimentConfig, truth: ProcessSpec, hat_params: Dict[str, Any], checkpoint: Optional[str]) -> ProcessSpec:
    if checkpoint:
        nets, _, _ = load_checkpoint(checkpoint)
        return assemble_surrogate(config.train.prior, nets, truth)
    return build_model(config.model.id, {**config.model.params, **hat_params})


@cli.command(context_settings=OVERRIDE_SETTINGS)
@click.argument("config_source", metavar="CONFIG")
@click.option("--ensembles", nargs=2, type=click.Path(), default=None, help="Compare two ensemble files directly")
@click.option("--hat-param", "hat_params", multiple=True, help="Model parameter of the compared process, key=value")
@click.option("--checkpoint", default=None, type=click.Path(), help="Compare against a trained surrogate")
@click.option("--refinement", is_flag=True, help="Also run the time-refinement study")
@click.option("--horizon", type=float, default=4.0, help="Horizon of the refinement study")
@click.option("--bootstrap", type=click.IntRange(min=2), default=50, help="Bootstrap resamples for the lower bound")
@click.option("--output-dir", "-o", default=None, help="Directory for diagnostics.json")
@common_options
@click.pass_context
def diagnose(
    ctx: click.Context,
    config_source: str,
    ensembles: Optional[tuple[str, str]],
    hat_params: tuple[str, ...],
    checkpoint: Optional[str],
    refinement: bool,
    horizon: float,
    bootstrap: int,
    output_dir: Optional[str],
    log_level: str,
    threads: Optional[int],
    output_format: str,
) -> None:
    """Distance diagnostics between the truth and another process, or two ensemble files.

    Examples:
      jdrecon diagnose example1-desk --hat-param y0=0.5
      jdrecon diagnose example1-desk --checkpoint runs/x/checkpoint.jdnn --refinement
      jdrecon diagnose example1 --ensembles a.jde b.jde
    """

    def action() -> None:
        started = time.perf_counter()
        config = _prepare_config(config_source, ctx.args, threads)
        out = _output_dir(config, output_dir)
        seeds = {"root": config.train.seed}
        if ensembles:
            E, E_hat = (read_ensemble(p) for p in ensembles)
            report = diagnose_pair(E, E_hat, n_boot=bootstrap, seed=config.train.seed, threads=config.threads)
        else:
            truth = validate_experiment(config)
            hat = _hat_process(config, truth, _parse_hat_params(list(hat_params)), checkpoint)
            grid, M = config.train.grid, config.train.M_s
            seeds.update({"truth": derive_seed(config.train.seed, 0), "hat": derive_seed(config.train.seed, 1)})
            E = simulate_ensemble(truth, grid, config.initial, M, seed=seeds["truth"])
            E_hat = simulate_ensemble(hat, grid, config.initial, M, seed=seeds["hat"])
            report = diagnose_pair(E, E_hat, truth, hat, n_boot=bootstrap, seed=config.train.seed, threads=config.threads)
            if refinement:
                report.refinement = refinement_study(truth, hat, config.initial, horizon, M, config.train.seed)
        write_json(report, out / "diagnostics.json")
        write_manifest(_manifest("diagnose", config, ["diagnostics.json"], started, seeds), out)
        click.echo(generate_report(report, output_format))

    _run_guarded(log_level, action)


@cli.command(name="export-profile", context_settings=OVERRIDE_SETTINGS)
@click.argument("config_source", metavar="CONFIG")
@click.option("--checkpoint", required=True, type=click.Path(), help="Trained surrogate checkpoint")
@click.option("--points", type=click.IntRange(min=2), default=101, help="Grid points per state dimension")
@click.option("--time", "at_time", type=float, default=0.0, help="Evaluation time")
@click.option("--output", "-o", default=None, type=click.Path(), help="CSV path (default: <output_dir>/profile.csv)")
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]),
    default="INFO",
    help="Log level",
    envvar="JDRECON_LOG_LEVEL",
)
@click.pass_context
def export_profile(
    ctx: click.Context,
    config_source: str,
    checkpoint: str,
    points: int,
    at_time: float,
    output: Optional[str],
    log_level: str,
) -> None:
    """Tabulate true and reconstructed coefficients over the range the truth visits.

    Examples:
      jdrecon export-profile example1-desk --checkpoint runs/example1-desk/checkpoint.jdnn
    """

    def action() -> None:
        config = _prepare_config(config_source, ctx.args, None)
        truth = validate_experiment(config)
        hat = _hat_process(config, truth, {}, checkpoint)
        observed, _ = simulate_observed(config, truth)
        lo = observed.states.min(axis=(0, 1))
        hi = observed.states.max(axis=(0, 1))
        axes = [np.linspace(lo[k], hi[k], points) for k in range(truth.d)]
        grid_points = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        profile = coefficient_profile(truth, hat, grid_points, t=at_time)
        path = Path(output) if output else _output_dir(config, None) / "profile.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        profile.to_csv(path, index=False, float_format="%.17g")
        logger.success(f"[CLI] wrote {len(profile)} profile rows to {path}")

    _run_guarded(log_level, action)
