"""Command-line interface for the AITP simulator."""

from __future__ import annotations

import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import click
from dotenv import load_dotenv
from rich.console import Console
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from .channel import ChannelModel, write_mcs_table
from .engine import run_simulation
from .errors import AitpError, ParseError, ValidationError
from .fl.model import save_checkpoint
from .report import SimulationReport, emit_outputs
from .scenario import FailureEvent, Mode, ScenarioConfig, load_scenario, make_config

load_dotenv()

console = Console()

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2
EXIT_ABORTED = 3

DEFAULT_SWEEP_DEVICES = "50,100,200,300,400,500"
DEFAULT_SWEEP_EPSILONS = "2.0,0.5,0.1"


class _ExitCodeGroup(click.Group):
    """Command group that reports bad usage with exit code 1 instead of click's 2."""

    def main(self, *args: Any, **kwargs: Any) -> Any:
        kwargs.pop("standalone_mode", None)
        try:
            rv = super().main(*args, standalone_mode=False, **kwargs)
        except click.ClickException as exc:
            exc.show()
            sys.exit(EXIT_INVALID)
        except click.exceptions.Abort:
            console.print("\n[yellow]⚠️  Aborted[/yellow]")
            sys.exit(EXIT_RUNTIME)
        sys.exit(rv if isinstance(rv, int) else EXIT_OK)


def parse_int_list(ctx: click.Context, param: click.Parameter, value: str | None) -> list[int]:
    """Parse ``50,100,200`` into a list of positive ints."""
    if not value:
        return []
    try:
        items = [int(part) for part in value.split(",") if part.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}") from exc
    if not items or any(n < 1 for n in items):
        raise click.BadParameter("values must be positive integers")
    return items


def parse_float_list(ctx: click.Context, param: click.Parameter, value: str | None) -> list[float]:
    """Parse ``2.0,0.5,0.1`` into a list of positive floats."""
    if not value:
        return []
    try:
        items = [float(part) for part in value.split(",") if part.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}") from exc
    if not items or any(v <= 0 for v in items):
        raise click.BadParameter("values must be positive")
    return items


def parse_failures(ctx: click.Context, param: click.Parameter, value: Sequence[str]) -> list[FailureEvent]:
    try:
        return [FailureEvent.parse(text) for text in value]
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc


def _modes(value: str | None, cfg: ScenarioConfig) -> list[Mode]:
    if value is None:
        return [cfg.mode]
    if value.lower() == "all":
        return list(Mode)
    return [Mode(value.upper())]


def _base_config(scenario: str | None, **overrides: Any) -> ScenarioConfig:
    """Scenario file (or defaults) with command-line overrides and the wall-clock environment default."""
    cfg = load_scenario(scenario) if scenario else make_config()
    changes = {key: value for key, value in overrides.items() if value is not None}
    env_limit = os.getenv("AITP_WALL_CLOCK_LIMIT")
    if env_limit and cfg.wall_clock_limit_s == 0:
        try:
            changes["wall_clock_limit_s"] = float(env_limit)
        except ValueError as exc:
            message = f"AITP_WALL_CLOCK_LIMIT is not a number: {env_limit!r}"
            raise ValidationError("wall_clock_limit_s", message) from exc
    return cfg.replace(**changes) if changes else cfg


def _execute(configs: Sequence[ScenarioConfig], workers: int) -> list[SimulationReport]:
    reports = []
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        console=console,
        transient=True,
    ) as progress:
        for cfg in configs:
            label = f"{cfg.mode.value} N={cfg.n_devices}"
            task = progress.add_task(f"{label}: building topology...", total=None)

            def on_round(metrics: Any, task: Any = task, label: str = label, total: int = cfg.rounds) -> None:
                progress.update(task, description=f"{label}: round {metrics.round}/{total}")

            reports.append(run_simulation(cfg, workers=workers, on_round=on_round))
            progress.remove_task(task)
    return reports


def _summary_table(reports: Sequence[SimulationReport], title: str) -> Table:
    table = Table(title=title)
    for column in ("Mode", "N", "Latency (ms)", "Throughput (Gbps)", "EE (bits/J)", "Privacy loss", "Robustness"):
        table.add_column(column, justify="right" if column != "Mode" else "left")
    table.add_column("Accuracy", justify="right")
    for report in reports:
        s = report.summary
        table.add_row(
            s["mode"],
            str(s["n_devices"]),
            f"{s['mean_latency_ms']:.4f}",
            f"{s['throughput_gbps']:.4f}",
            f"{s['energy_efficiency']:.4g}",
            f"{s['privacy_loss']:.3f}",
            f"{s['robustness']:.3f}",
            f"{s['initial_accuracy']:.3f} → {s['final_accuracy']:.3f}",
        )
    return table


def _finish(reports: Sequence[SimulationReport], out: str, title: str) -> int:
    paths = emit_outputs(reports, out)
    console.print(_summary_table(reports, title))
    console.print(f"[dim]Results: {', '.join(str(p) for p in paths)}[/dim]")
    if any(r.aborted for r in reports):
        console.print("[bold yellow]⚠️  Wall-clock limit reached; partial results written[/bold yellow]")
        return EXIT_ABORTED
    console.print("[bold green]✅ Simulation complete[/bold green]")
    return EXIT_OK


def _guarded(verbose: bool, action: Callable[[], int]) -> int:
    """Run ``action`` and map simulator errors onto exit codes."""
    try:
        return action()
    except (ParseError, ValidationError) as exc:
        console.print(f"[bold red]❌ Invalid scenario:[/bold red] {exc}")
        return EXIT_INVALID
    except KeyboardInterrupt:
        console.print("\n[yellow]⚠️  Simulation cancelled by user[/yellow]")
        return EXIT_RUNTIME
    except AitpError as exc:
        console.print(f"[bold red]❌ Error:[/bold red] {exc}")
        return EXIT_RUNTIME
    except Exception as exc:
        console.print(f"\n[bold red]❌ Error:[/bold red] {exc}")
        if verbose:
            console.print_exception()
        return EXIT_RUNTIME


scenario_option = click.option(
    "--scenario",
    type=click.Path(dir_okay=False),
    default=None,
    help="Scenario file in key = value format (defaults apply when omitted)",
)
seed_option = click.option("--seed", type=click.IntRange(min=0), default=None, help="Override the scenario seed")
rounds_option = click.option("--rounds", type=click.IntRange(min=0), default=None, help="Override the round count")
out_option = click.option(
    "--out",
    envvar="AITP_OUT_DIR",
    default="results",
    show_default=True,
    type=click.Path(file_okay=False),
    help="Output directory for metrics.csv, summary.csv and manifest.json",
)
workers_option = click.option(
    "--workers",
    envvar="AITP_WORKERS",
    default=1,
    show_default=True,
    type=click.IntRange(min=1),
    help="Worker threads for per-device training (results do not depend on it)",
)


@click.group(cls=_ExitCodeGroup)
@click.option("--verbose", "-v", is_flag=True, help="Enable debug logging")
@click.pass_context
def cli(ctx: click.Context, verbose: bool) -> None:
    """
    Simulate FL-driven adaptive transmission (AITP) against the CAIP and NAP baselines.

    \b
    Examples:
        # Desk-scale run of all three modes
        aitp-sim run --scenario scenarios/desk.conf --mode all --out results/desk

        # Aggregator failure in round 10
        aitp-sim run --scenario scenarios/desk.conf --devices 100 --failure 10:aggregator:2

        # Device-count sweep
        aitp-sim sweep --scenario scenarios/table2.conf --out results/sweep

    \b
    Environment Variables:
        AITP_WORKERS - default worker-pool size
        AITP_OUT_DIR - default output directory
        AITP_WALL_CLOCK_LIMIT - wall-clock limit in seconds when the scenario sets none
    """
    if verbose:
        logging.basicConfig(level=logging.DEBUG, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    else:
        logging.basicConfig(level=logging.WARNING, format="%(message)s")
    ctx.obj = {"verbose": verbose}


@cli.command()
@scenario_option
@click.option(
    "--mode",
    type=click.Choice(["aitp", "caip", "nap", "all"], case_sensitive=False),
    default=None,
    help="Protocol mode; 'all' runs the three modes on the same seed (default: the scenario's mode)",
)
@seed_option
@rounds_option
@out_option
@click.option("--devices", type=click.IntRange(min=1), default=None, help="Override the device count")
@click.option(
    "--failure",
    multiple=True,
    callback=parse_failures,
    help="Failure-plan entry round:kind:id, e.g. 10:aggregator:2 (can be specified multiple times)",
)
@click.option("--strict-paper-combine", is_flag=True, help="Divide the global combine by the configured M")
@click.option(
    "--channel",
    type=click.Choice([m.value for m in ChannelModel], case_sensitive=False),
    default=None,
    help="Override the channel model",
)
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None, help="Write the final global model here")
@click.option("--audit-masks", is_flag=True, help="Verify mask cancellation on every cluster and round")
@workers_option
@click.pass_context
def run(
    ctx: click.Context,
    scenario: str | None,
    mode: str | None,
    seed: int | None,
    rounds: int | None,
    out: str,
    devices: int | None,
    failure: list[FailureEvent],
    strict_paper_combine: bool,
    channel: str | None,
    checkpoint: str | None,
    audit_masks: bool,
    workers: int,
) -> int:
    """Run one scenario in one or all protocol modes."""

    def action() -> int:
        cfg = _base_config(
            scenario,
            seed=seed,
            rounds=rounds,
            n_devices=devices,
            channel_model=channel,
            strict_paper_combine=True if strict_paper_combine else None,
        )
        if failure:
            cfg = cfg.replace(failure_plan=(*cfg.failure_plan, *failure))
        configs = [cfg.replace(mode=m) for m in _modes(mode, cfg)]
        console.print(f"\n[bold cyan]📡 AITP simulator[/bold cyan] [dim]seed {cfg.seed}, {cfg.rounds} rounds[/dim]")
        if audit_masks:
            reports = [run_simulation(c, workers=workers, audit_masks=True) for c in configs]
        else:
            reports = _execute(configs, workers)
        if checkpoint:
            chosen = next((r for r in reports if r.config.mode is Mode.AITP), reports[0])
            if chosen.final_model is not None:
                save_checkpoint(checkpoint, chosen.final_model)
                console.print(f"[dim]Checkpoint ({chosen.config.mode.value}): {checkpoint}[/dim]")
        return _finish(reports, out, "Run summary")

    return _guarded(ctx.obj["verbose"], action)


@cli.command()
@scenario_option
@click.option(
    "--devices",
    default=DEFAULT_SWEEP_DEVICES,
    show_default=True,
    callback=parse_int_list,
    help="Comma-separated device counts",
)
@seed_option
@rounds_option
@out_option
@workers_option
@click.pass_context
def sweep(
    ctx: click.Context,
    scenario: str | None,
    devices: list[int],
    seed: int | None,
    rounds: int | None,
    out: str,
    workers: int,
) -> int:
    """Run all three modes over a grid of device counts."""

    def action() -> int:
        cfg = _base_config(scenario, seed=seed, rounds=rounds)
        configs = [cfg.replace(n_devices=n, mode=m) for n in devices for m in Mode]
        console.print(f"\n[bold cyan]📡 Device sweep[/bold cyan] [dim]N = {devices}, seed {cfg.seed}[/dim]")
        return _finish(_execute(configs, workers), out, "Sweep summary")

    return _guarded(ctx.obj["verbose"], action)


@cli.command("privacy-sweep")
@scenario_option
@click.option(
    "--epsilons",
    default=DEFAULT_SWEEP_EPSILONS,
    show_default=True,
    callback=parse_float_list,
    help="Comma-separated per-round privacy budgets",
)
@seed_option
@rounds_option
@out_option
@workers_option
@click.pass_context
def privacy_sweep(
    ctx: click.Context,
    scenario: str | None,
    epsilons: list[float],
    seed: int | None,
    rounds: int | None,
    out: str,
    workers: int,
) -> int:
    """Run AITP with differential privacy over several per-round budgets."""

    def action() -> int:
        cfg = _base_config(scenario, seed=seed, rounds=rounds).replace(mode=Mode.AITP, dp_enabled=True)
        configs = [cfg.replace(dp_epsilon_round=eps, dp_epsilon_max=max(cfg.dp_epsilon_max, eps)) for eps in epsilons]
        console.print(f"\n[bold cyan]🔒 Privacy sweep[/bold cyan] [dim]epsilon_round = {epsilons}[/dim]")
        reports = _execute(configs, workers)
        table = Table(title="Privacy / utility")
        for column in ("epsilon_round", "Initial accuracy", "Final accuracy", "Privacy loss", "Excluded"):
            table.add_column(column, justify="right")
        for report in reports:
            s = report.summary
            excluded = report.rounds[-1].excluded if report.rounds else 0
            table.add_row(
                f"{s['dp_epsilon_round']:g}",
                f"{s['initial_accuracy']:.3f}",
                f"{s['final_accuracy']:.3f}",
                f"{s['privacy_loss']:.3f}",
                str(excluded),
            )
        console.print(table)
        return _finish(reports, out, "Privacy sweep summary")

    return _guarded(ctx.obj["verbose"], action)


@cli.command("mcs-table")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV file to write (default: stdout)")
@click.pass_context
def mcs_table(ctx: click.Context, out: str | None) -> int:
    """Print or write the MCS table as CSV."""

    def action() -> int:
        if out:
            write_mcs_table(Path(out))
            console.print(f"[bold green]✅ MCS table written to {out}[/bold green]")
        else:
            write_mcs_table(click.get_text_stream("stdout"))
        return EXIT_OK

    return _guarded(ctx.obj["verbose"], action)


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
