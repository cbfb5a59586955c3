"""CLI entry point for flowfactor."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, replace
from pathlib import Path
from typing import NoReturn

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.table import Table

from .core.config import Config, load_config, save_config
from .core.demos import DEMOS, build_demo
from .core.errors import ConvergenceError, FlowFactorError, FragmentError, GridError, InputError, InvalidDiffeoError
from .core.factorization import factorize, recompose
from .core.fileio import (
    dumps,
    read_diffeo,
    read_factors,
    read_family,
    write_csv,
    write_diffeo,
    write_factors,
    write_family,
    write_report,
)
from .core.grid import DiffeoGrid
from .core.models import FactorList, Family, RankReport
from .core.orbit import is_transitive

console = Console()
err_console = Console(stderr=True)

EXIT_INPUT = 1
EXIT_NUMERICAL = 2

# errors caused by what the user handed us rather than by the numerics
_INPUT_ERRORS = (InputError, GridError, InvalidDiffeoError)


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        handlers=[RichHandler(console=err_console, show_path=False)],
        force=True,
    )


def _fail(exc: Exception, code: int) -> NoReturn:
    err_console.print(f"[red]error:[/red] {escape(str(exc))}")
    raise SystemExit(code)


def _residuals(factors: FactorList, family: Family, target: DiffeoGrid, config: Config) -> tuple[float, float]:
    got = recompose(factors, family, config.flow)
    return got.c0_distance(target), got.c1_distance(target)


def _rank_report_dict(report: RankReport, names: list[str]) -> dict:
    return {
        "dim": report.dim,
        "depth": report.depth,
        "transitive": report.transitive,
        "min_rank": report.min_rank,
        "worst_condition": report.worst_condition,
        "entries": [
            {
                "point": list(e.point),
                "rank": e.rank,
                "condition": e.condition,
                "flagged": e.flagged,
                "witnesses": [
                    {
                        "field": names[w.field_index],
                        "word": [{"field": names[j], "t": t} for j, t in w.letters],
                        "vector": list(w.vector),
                    }
                    for w in e.witnesses
                ],
            }
            for e in report.entries
        ],
    }


@click.group()
@click.option("--root", type=click.Path(exists=True, file_okay=False, path_type=Path), default=".")
@click.option("-v", "--verbose", is_flag=True, help="Log every stage at DEBUG level")
@click.pass_context
def cli(ctx: click.Context, root: Path, verbose: bool) -> None:
    """flowfactor: factor near-identity torus diffeomorphisms into flows."""
    _setup_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj["root"] = root.resolve()
    try:
        ctx.obj["config"] = load_config(ctx.obj["root"])
    except InputError as exc:
        _fail(exc, EXIT_INPUT)


@cli.command()
@click.argument("diffeo", type=click.Path(path_type=Path))
@click.argument("family_file", metavar="FAMILY", type=click.Path(path_type=Path))
@click.option("-o", "--output", type=click.Path(path_type=Path), default=Path("factors.json"), show_default=True)
@click.option("--report", "report_path", type=click.Path(path_type=Path), default=None,
              help="Report path (default: <output stem>.report.json)")
@click.option("--eps", type=float, default=None, help="Seed scale ε")
@click.option("--tol", type=float, default=None, help="Accepted C0 recomposition residual")
@click.option("--max-iters", type=int, default=None, help="Newton iteration cap")
@click.option("--cover", type=click.Choice(["auto", "arcs3", "rect2x2", "rect3x2"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=None, help="Parallel fragment solves")
@click.pass_context
def factor(
    ctx: click.Context,
    diffeo: Path,
    family_file: Path,
    output: Path,
    report_path: Path | None,
    eps: float | None,
    tol: float | None,
    max_iters: int | None,
    cover: str | None,
    seed: int | None,
    jobs: int | None,
) -> None:
    """Factor DIFFEO into flows of the FAMILY fields."""
    config: Config = ctx.obj["config"]
    report_path = report_path or output.with_name(f"{output.stem}.report.json")
    try:
        newton = replace(config.newton, **{k: v for k, v in {"eps": eps, "max_iters": max_iters}.items() if v is not None})
        overrides = {"tolerance": tol, "cover": cover, "seed": seed, "jobs": jobs}
        fz = replace(config.factorize, **{k: v for k, v in overrides.items() if v is not None})
        config = replace(config, newton=newton, factorize=fz)
        target = read_diffeo(diffeo)
        family = read_family(family_file)
        if target.grid_shape != family.grid_shape:
            raise InputError(f"grid {target.grid_shape} of {diffeo} does not match family grid {family.grid_shape}")
        target.validate()
    except _INPUT_ERRORS as exc:
        _fail(exc, EXIT_INPUT)

    report: dict = {"input": str(diffeo), "family": str(family_file), "seed": config.factorize.seed}
    try:
        factors = factorize(target, family, config)
    except FlowFactorError as exc:
        report.update(
            status="failed",
            stage=exc.stage,
            fragment=exc.fragment,
            error=str(exc),
            residual_C0=target.c0_distance(DiffeoGrid.identity(target.grid_shape)),
            residual_C1=target.c1_distance(DiffeoGrid.identity(target.grid_shape)),
            factor_count=0,
        )
        if isinstance(exc, ConvergenceError):
            report["history"] = exc.history
        write_report(report_path, report)
        # a fragment the cover cannot handle means the input is too far from the identity
        _fail(exc, EXIT_INPUT if isinstance(exc, FragmentError) else EXIT_NUMERICAL)

    r0, r1 = _residuals(factors, family, target, config)
    ok = r0 <= config.factorize.tolerance
    write_factors(output, factors, family)
    report.update(
        status="ok" if ok else "tolerance-exceeded",
        residual_C0=r0,
        residual_C1=r1,
        factor_count=len(factors),
        provenance=factors.provenance_counts(),
        fragments=factors.stats.get("fragments", 0),
        retries=factors.stats.get("retries", 0),
        timings=factors.stats.get("timings", {}),
    )
    write_report(report_path, report)

    console.print(
        f"[green]{len(factors)} factors[/green] written to {output} "
        f"(C0 residual {r0:.3e}, C1 {r1:.3e})"
    )
    if not ok:
        err_console.print(f"[red]residual {r0:.3e} exceeds tolerance {config.factorize.tolerance:g}[/red]")
        raise SystemExit(EXIT_NUMERICAL)


@cli.command()
@click.argument("factors_file", metavar="FACTORS", type=click.Path(path_type=Path))
@click.argument("target_file", metavar="TARGET", type=click.Path(path_type=Path))
@click.option("--tol", type=float, default=None, help="Accepted C0 distance")
@click.option("--csv", "csv_path", type=click.Path(path_type=Path), default=None,
              help="Dump the residual displacement field as CSV")
@click.pass_context
def verify(ctx: click.Context, factors_file: Path, target_file: Path, tol: float | None, csv_path: Path | None) -> None:
    """Recompose FACTORS and compare with TARGET."""
    config: Config = ctx.obj["config"]
    tol = config.factorize.tolerance if tol is None else tol
    try:
        factors, family = read_factors(factors_file)
        target = read_diffeo(target_file)
        if target.grid_shape != family.grid_shape:
            raise InputError(f"grid {target.grid_shape} does not match factor grid {family.grid_shape}")
    except _INPUT_ERRORS as exc:
        _fail(exc, EXIT_INPUT)

    try:
        got = recompose(factors, family, config.flow)
    except FlowFactorError as exc:
        _fail(exc, EXIT_NUMERICAL)
    r0, r1 = got.c0_distance(target), got.c1_distance(target)
    if csv_path is not None:
        write_csv(csv_path, DiffeoGrid.from_array(got.array - target.array))
    ok = r0 <= tol
    report = {
        "status": "ok" if ok else "mismatch",
        "residual_C0": r0,
        "residual_C1": r1,
        "factor_count": len(factors),
        "tolerance": tol,
    }
    click.echo(dumps(report))
    if not ok:
        raise SystemExit(EXIT_NUMERICAL)


@cli.command(name="check-family")
@click.argument("family_file", metavar="FAMILY", type=click.Path(path_type=Path))
@click.option("--depth", type=int, default=1, show_default=True, help="Maximal word length")
@click.option("--samples", type=int, default=16, show_default=True, help="Lattice points per axis")
@click.option("-o", "--output", type=click.Path(path_type=Path), default=None, help="Write the report here")
def check_family(family_file: Path, depth: int, samples: int, output: Path | None) -> None:
    """Certify numerically that FAMILY generates a transitive action."""
    try:
        family = read_family(family_file)
        if depth < 0 or samples < 1:
            raise InputError("--depth must be >= 0 and --samples >= 1")
    except _INPUT_ERRORS as exc:
        _fail(exc, EXIT_INPUT)

    transitive, report = is_transitive(family, samples=samples, depth=depth)
    data = _rank_report_dict(report, family.names)
    if output is not None:
        write_report(output, data)

    table = Table(title=f"Orbit rank of {family_file.name}")
    table.add_column("Fields", style="cyan")
    table.add_column("Depth", justify="right")
    table.add_column("Points", justify="right")
    table.add_column("Min rank", justify="right")
    table.add_column("Worst condition", justify="right")
    table.add_column("Transitive", style="bold")
    table.add_row(
        ", ".join(family.names),
        str(depth),
        str(len(report.entries)),
        str(report.min_rank),
        f"{report.worst_condition:.3g}",
        "[green]yes[/green]" if transitive else "[red]no[/red]",
    )
    err_console.print(table)
    click.echo(dumps(data))
    if not transitive:
        raise SystemExit(EXIT_NUMERICAL)


@cli.command()
@click.argument("name")
@click.option("--grid", type=int, default=None, help="Nodes per axis (power of two)")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--out-dir", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Target directory (default: ./<name>)")
def demo(name: str, grid: int | None, seed: int, out_dir: Path | None) -> None:
    """Write the NAME fixture set: family.json plus one file per target."""
    try:
        built = build_demo(name, grid, seed)
    except _INPUT_ERRORS as exc:
        err_console.print(f"[dim]available demos: {', '.join(DEMOS)}[/dim]")
        _fail(exc, EXIT_INPUT)

    out_dir = out_dir or Path(name)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_family(out_dir / "family.json", built.family)
    for key, target in built.targets.items():
        write_diffeo(out_dir / f"{key}.json", target)
    console.print(f"[green]Wrote {len(built.targets)} targets and family.json to {out_dir}[/green]")


@cli.command()
@click.option("--save", is_flag=True, help="Save the effective config to .flowfactor/config.yaml")
@click.pass_context
def config(ctx: click.Context, save: bool) -> None:
    """Show or save current configuration."""
    root = ctx.obj["root"]
    cfg: Config = ctx.obj["config"]

    table = Table(title="Current config")
    table.add_column("Section", style="cyan")
    table.add_column("Key")
    table.add_column("Value", justify="right")
    for section, values in asdict(cfg).items():
        for key, value in values.items():
            table.add_row(section, key, json.dumps(value))
    console.print(table)

    if save:
        saved = save_config(root, cfg)
        console.print(f"\n[green]Saved to {saved}[/green]")
