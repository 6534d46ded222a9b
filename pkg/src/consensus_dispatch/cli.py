"""Command line interface for consensus dispatch."""

import logging
import sys
from logging import basicConfig
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
import yaml
from pydantic import ValidationError

from .caseio import load_irradiance_csv, read_case, synthetic_irradiance
from .config import CaseFormat, CliConfig, ExecutorKind, RunMode, WeightScheme, load_config
from .engine import DemandSchedule, build_layout, run_simulation
from .errors import DispatchError, SimulationDiverged
from .models import CaseData, IrradianceProfile, OracleGap
from .oracle import oracle_gap, reference_admm, solve_case
from .trace_store import (
    MessageLogWriter,
    write_native_case,
    write_snapshots_json,
    write_solution_json,
    write_trace_csv,
)

logger = logging.getLogger(__name__)

EXIT_NOT_CONVERGED = 1
EXIT_INPUT_ERROR = 2
SYNTHETIC_RESOLUTION_S = 10.0


def _enum_values(enum) -> List[str]:
    return [member.value for member in enum]


@click.command()
@click.option("--case", "case_path", type=click.Path(path_type=Path), help="MATPOWER .m or native JSON case file")
@click.option(
    "--format",
    "case_format",
    type=click.Choice(_enum_values(CaseFormat)),
    default=None,
    help="Case file format (inferred from the extension by default)",
)
@click.option("--config", "config_path", type=click.Path(path_type=Path), help="YAML file with simulation settings")
@click.option(
    "--weights",
    "weight_scheme",
    type=click.Choice(_enum_values(WeightScheme)),
    default=None,
    help="Consensus weight scheme",
)
@click.option("--n2-rho", type=float, default=None, help="Scaled penalty N²ρ")
@click.option("--epsilon", type=float, default=None, help="Mean-Metropolis epsilon")
@click.option("--iters", "max_iter", type=int, default=None, help="Number of synchronous rounds")
@click.option("--demand-step", "demand_step_interval", type=int, default=None, help="Rounds between demand changes")
@click.option("--irradiance", "irradiance_path", type=click.Path(path_type=Path), help="CSV with time_s,irradiance")
@click.option("--synthetic-irradiance", is_flag=True, default=None, help="Use a generated irradiance profile")
@click.option("--pv-factor", "pv_capacity_factor", type=float, default=None, help="PV capacity per unit of load")
@click.option("--tol-lambda", type=float, default=None, help="Largest price spread counted as consensus, per unit")
@click.option("--tol-mismatch", type=float, default=None, help="Largest mismatch estimate counted as converged")
@click.option("--seed", "rng_seed", type=int, default=None, help="Seed of the initial price draw")
@click.option("--out", "out_path", type=click.Path(path_type=Path), help="Output file (trace CSV, oracle JSON or case)")
@click.option("--mode", type=click.Choice(_enum_values(RunMode)), default=None, help="What to do with the case")
@click.option("--oracle-check", is_flag=True, default=None, help="Compare the final state with the centralized oracle")
@click.option("--early-stop", is_flag=True, default=None, help="Stop once converged on the last demand plateau")
@click.option("--require-convergence", is_flag=True, default=None, help="Exit with 1 when the run did not converge")
@click.option(
    "--executor",
    type=click.Choice(_enum_values(ExecutorKind)),
    default=None,
    help="Vectorized rounds or one update per agent with explicit messages",
)
@click.option("--window", "convergence_window", type=int, default=None, help="Rounds that must be within tolerance")
@click.option("--snapshot-interval", type=int, default=None, help="Rounds between per-agent snapshots")
@click.option("--snapshots", "snapshot_path", type=click.Path(path_type=Path), help="Per-agent snapshot JSON")
@click.option("--message-log", "message_log_path", type=click.Path(path_type=Path), help="Message log CSV")
@click.option(
    "--wall-time", "record_wall_time", is_flag=True, default=None, help="Record elapsed seconds per round (0 otherwise)"
)
@click.option("--debug", is_flag=True, help="Enable debug logging")
def main(config_path: Optional[Path], debug: bool, **flags):
    """Simulate fully distributed economic dispatch on a power system case.

    Explicit flags override values from --config.
    """
    basicConfig(level=logging.ERROR if not debug else logging.INFO)

    try:
        settings: Dict[str, Any] = load_config(config_path) if config_path else {}
        settings.update({key: value for key, value in flags.items() if value is not None and value is not False})
        if "case_path" not in settings:
            raise click.UsageError("missing --case")
        cfg = CliConfig(**settings)
        exit_code = _run(cfg)
    except click.UsageError:
        raise
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        _fail(f"invalid setting {location}: {first['msg']}", EXIT_INPUT_ERROR)
    except SimulationDiverged as e:
        _fail(str(e), EXIT_NOT_CONVERGED)
    except (DispatchError, OSError, ValueError, yaml.YAMLError) as e:
        _fail(f"{type(e).__name__}: {e}", EXIT_INPUT_ERROR)
    else:
        sys.exit(exit_code)


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _profile(cfg: CliConfig) -> Optional[IrradianceProfile]:
    if cfg.irradiance_path is not None:
        return load_irradiance_csv(cfg.irradiance_path.read_text(encoding="utf-8"))
    if cfg.synthetic_irradiance:
        steps = cfg.max_iter // cfg.demand_step_interval + 1
        return synthetic_irradiance(max(steps - 1, 1) * SYNTHETIC_RESOLUTION_S, SYNTHETIC_RESOLUTION_S, cfg.rng_seed)
    return None


def _fmt(value: float) -> str:
    return f"{value:.10g}"


def _run(cfg: CliConfig) -> int:
    case = read_case(cfg.case_path, cfg.case_format)

    if cfg.mode == RunMode.validate_case:
        layout = build_layout(case)
        click.echo(
            f"valid case={case.name} buses={len(case.buses)} generators={len(case.generators)} "
            f"branches={len(case.branches)} agents={layout.size}"
        )
        return 0

    if cfg.mode == RunMode.convert_case:
        if cfg.out_path is None:
            raise click.UsageError("--mode convert-case needs --out")
        write_native_case(cfg.out_path, case)
        click.echo(f"Wrote {cfg.out_path}")
        return 0

    profile = _profile(cfg)
    sim = cfg.simulation()

    if cfg.mode == RunMode.oracle:
        demand = float(DemandSchedule(build_layout(case), sim, profile).demand(0).sum())
        solution = solve_case(case, demand)
        click.echo(f"lambda={_fmt(solution.price)}")
        click.echo("dispatch=" + ",".join(_fmt(p) for p in solution.p))
        click.echo(f"total_cost={_fmt(solution.total_cost)}")
        if cfg.out_path is not None:
            write_solution_json(cfg.out_path, solution)
        return 0

    return _simulate(cfg, case, profile)


def _simulate(cfg: CliConfig, case: CaseData, profile: Optional[IrradianceProfile]) -> int:
    sim = cfg.simulation()
    if cfg.mode == RunMode.reference_admm:
        trace = reference_admm(case, sim, profile)
    elif cfg.message_log_path is None:
        trace = run_simulation(case, sim, profile)
    else:
        if sim.executor != ExecutorKind.agents:
            logger.info("Message logging needs explicit message exchange; switching to the agents executor")
            sim.executor = ExecutorKind.agents
        with MessageLogWriter(cfg.message_log_path) as log:
            trace = run_simulation(case, sim, profile, message_sink=log.write)

    if cfg.out_path is not None:
        write_trace_csv(cfg.out_path, trace)
    if cfg.snapshot_path is not None:
        write_snapshots_json(cfg.snapshot_path, trace)

    gap = oracle_gap(case, trace) if cfg.oracle_check else OracleGap.nan()
    click.echo(
        f"converged={str(trace.converged).lower()} iters={trace.iterations} "
        f"lambda={_fmt(trace.final_lambda_mean)} oracle_gap={_fmt(gap.power)} price_gap={_fmt(gap.price)}"
    )
    if cfg.require_convergence and not trace.converged:
        return EXIT_NOT_CONVERGED
    return 0


if __name__ == "__main__":
    main()
