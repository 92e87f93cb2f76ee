"""CLI for embedded-deformation solves, mapping simulations, benchmarks and gradient checks."""

import argparse
import logging
from pathlib import Path

from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

from pipeline.commands import cmd_bench, cmd_check_grad, cmd_deform, cmd_slam_sim
from pipeline.config import STRATEGIES


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Embedded deformation graph optimization: batch, marginalized and decoupled solvers"
    )
    parser.add_argument("--verbose", action="store_true", help="Log solver iterations (DEBUG)")
    sub = parser.add_subparsers(dest="command", required=True)

    deform = sub.add_parser("deform", help="Deform a mesh by handle constraints")
    deform.add_argument("--mesh", type=Path, required=True, help="Input OBJ mesh")
    deform.add_argument("--handles", type=Path, required=True, help="Handles file: 'vertex_id tx ty tz' per line")
    deform.add_argument("--solver", choices=STRATEGIES, default=None, help="Solver strategy (default: config, else batch)")
    deform.add_argument("--config", type=Path, default=None, help="Deform config YAML")
    deform.add_argument("--out", type=Path, default=Path("out/deform"), help="Output directory")

    sim = sub.add_parser("slam-sim", help="Run a synthetic expanding-map simulation")
    sim.add_argument("--config", type=Path, default=None, help="Simulation config YAML")
    sim.add_argument("--solver", choices=STRATEGIES, default=None, help="Solver strategy (default: config, else decoupled)")
    sim.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
    sim.add_argument("--out", type=Path, default=Path("out/slam-sim"), help="Output directory")

    bench = sub.add_parser("bench", help="Time the solvers across a node-growth schedule")
    bench.add_argument("--config", type=Path, default=None, help="Bench config YAML")
    bench.add_argument("--repeat", type=int, default=None, help="Repetitions per size point (median reported)")
    bench.add_argument("--seed", type=int, default=None, help="Override the noise seed")
    bench.add_argument("--out", type=Path, default=Path("out/bench"), help="Output directory")

    grad = sub.add_parser("check-grad", help="Finite-difference check of the energy Jacobians")
    grad.add_argument("--seed", type=int, default=0, help="Instance generator seed")
    grad.add_argument("--instances", type=int, default=50, help="Random instances per term")
    grad.add_argument("--out", type=Path, default=None, help="Optional output directory for gradcheck.json")
    return parser


def _summary_table(title: str, values: dict) -> Table:
    table = Table(title=title)
    table.add_column("key", style="cyan")
    table.add_column("value")
    for key, value in values.items():
        table.add_row(str(key), f"{value:.6g}" if isinstance(value, float) else str(value))
    return table


def main(argv=None) -> int:
    """Main CLI entry point."""
    args = build_parser().parse_args(argv)
    console = Console()
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
    )

    try:
        if args.command == "deform":
            console.print(f"[bold blue]Deforming {args.mesh}...[/bold blue]")
            record = cmd_deform(args.mesh, args.handles, args.out, args.solver, args.config)
            console.print(_summary_table(f"deform ({record.strategy})", {k: v for k, v in record.summary.items() if not isinstance(v, dict)}))
            if "vs_batch" in record.summary:
                console.print(_summary_table("difference to batch", record.summary["vs_batch"]))

        elif args.command == "slam-sim":
            console.print("[bold blue]Running simulation...[/bold blue]")
            record = cmd_slam_sim(args.config, args.out, args.solver, args.seed)
            console.print(_summary_table(f"slam-sim ({record.strategy})", record.summary))

        elif args.command == "bench":
            console.print("[bold blue]Benchmarking solvers...[/bold blue]")
            record = cmd_bench(args.config, args.out, args.repeat, args.seed)
            columns = ("scale", "total_nodes", "pr_nodes", "solver", "level1_dim", "level1_ms", "total_ms")
            table = Table(title="median times (ms)")
            for column in columns:
                table.add_column(column)
            for row in record.timings:
                table.add_row(*(f"{row[c]:.3f}" if isinstance(row[c], float) else str(row[c]) for c in columns))
            console.print(table)
            console.print(_summary_table("growth ratios", record.summary))

        else:
            decisions, code = cmd_check_grad(args.seed, args.instances, args.out)
            table = Table(title=f"gradient check (seed {args.seed})")
            for column in ("term", "decision", "max_rel_error", "max_abs_error"):
                table.add_column(column)
            for d in decisions:
                style = "green" if d.decision == "PASS" else "bold red"
                table.add_row(d.term, f"[{style}]{d.decision}[/{style}]", f"{d.max_rel_error:.3e}", f"{d.max_abs_error:.3e}")
            console.print(table)
            return code

        console.print(Panel(
            f"run id {record.run_id}\njournal valid: {record.journal_valid}\n"
            + "\n".join(f"{k}: {v}" for k, v in record.outputs.items()),
            title="Outputs",
        ))
        return 0

    except Exception as e:
        console.print(f"[bold red]Fatal error: {e}[/bold red]")
        return 1


if __name__ == "__main__":
    exit(main())
