from __future__ import annotations

import argparse
import asyncio
import logging
import os
import sys
from typing import Any, Awaitable, Callable

import anyio
import numpy as np
from anyio import to_thread
from opentelemetry import trace
from pydantic import ValidationError

from .config import settings
from .coordinator import (
    SIMULATED_ALGORITHMS,
    AdmmDivergenceError,
    MetricsRow,
    MetricsTimeline,
    run_simulation,
)
from .csv_io import render_csv, write_csv
from .environment import attenuation_matrix
from .hypervisor import drive_node, find_kind
from .logging_metrics import export_textfile, setup_logging, sweep_cells_total
from .models import AttackEvent, RunSpec, ScenarioConfig
from .oracle import OracleError, optimality_gap, solve_optimal
from .paths import OUTPUT_DIR, scenario_path
from .scenario import ScenarioError, ground_truth, load_scenario_file, rng_streams, with_attacks

logger = logging.getLogger(__name__)
tracer = trace.get_tracer(__name__)

RUN_HEADER = (
    "slot",
    "algorithm",
    "total_utility",
    "primal_residual",
    "dual_residual",
    "admm_iters",
    "flagged_nodes",
    "seed",
)
SWEEP_HEADER = ("attacked_count", "seed", "algorithm", "utility", "ratio_vs_baseline")
COMPARE_HEADER = ("algorithm", "utility", "oracle_value", "gap")
ALLOCATION_HEADER = ("algorithm", "slice", "node", "kind", "units")
HYPERVISOR_HEADER = (
    "algorithm",
    "node",
    "slice",
    "prb_entitlement",
    "prbs_assigned",
    "radio_rate",
    "compute_share",
    "kernels_dispatched",
    "tokens_spent",
)


class CliError(Exception):
    pass


def parse_attacked(text: str) -> list[int]:
    """``0..8`` (inclusive), ``0..8:2`` (stepped) or ``0,2,4``."""
    text = text.strip()
    try:
        if ".." in text:
            span, _, step = text.partition(":")
            lo, hi = (int(p) for p in span.split(".."))
            counts = list(range(lo, hi + 1, int(step) if step else 1))
        else:
            counts = [int(p) for p in text.split(",") if p.strip()]
    except ValueError as e:
        raise CliError(f"cannot parse attacked counts '{text}'") from e
    if not counts:
        raise CliError(f"attacked counts '{text}' select nothing")
    return counts


def _resolve_scenario(path: str) -> ScenarioConfig:
    if not os.path.exists(path) and os.path.exists(scenario_path(path)):
        path = scenario_path(path)
    return load_scenario_file(path)


def _settled_row(timeline: MetricsTimeline) -> MetricsRow:
    """Last slot that was not an exploration slot (falls back to the last slot)."""
    for row in reversed(timeline.rows):
        if not row.exploring:
            return row
    return timeline.rows[-1]


def _simulate_all(config: ScenarioConfig, spec: RunSpec) -> dict[str, MetricsTimeline]:
    return {
        alg: run_simulation(config, spec.seed, alg, exact_gradients=spec.exact_gradients)
        for alg in spec.algorithms
        if alg in SIMULATED_ALGORITHMS
    }


def _oracle_per_slot(config: ScenarioConfig, seed: int) -> list[float]:
    gt = ground_truth(config, seed)
    n_slices, n_nodes, _ = config.shape
    cache: dict[bytes, float] = {}
    values: list[float] = []
    for t in range(config.horizon):
        key = attenuation_matrix(config.attacks, n_slices, n_nodes, t).tobytes()
        if key not in cache:
            cache[key] = solve_optimal(gt, config, attack_slot=t).value
        values.append(cache[key])
    return values


async def cmd_run(spec: RunSpec) -> int:
    config = _resolve_scenario(spec.scenario)
    timelines = _simulate_all(config, spec)
    oracle = _oracle_per_slot(config, spec.seed) if "oracle" in spec.algorithms else None
    rows: list[tuple[Any, ...]] = []
    for alg, timeline in timelines.items():
        for r in timeline.rows:
            flagged = ";".join(str(j) for j in r.flagged_nodes)
            rows.append(
                (r.slot, alg, r.total_utility, r.primal_residual, r.dual_residual, r.admm_iters, flagged, spec.seed)
            )
    if oracle is not None:
        rows.extend((t, "oracle", v, 0.0, 0.0, 0, "", spec.seed) for t, v in enumerate(oracle))
    rows.sort(key=lambda r: (r[0], r[1]))
    out = spec.out or os.path.join(OUTPUT_DIR, "run.csv")
    await write_csv(out, RUN_HEADER, rows)

    for alg, timeline in timelines.items():
        final = timeline.rows[-1].total_utility
        line = f"{alg}: final_utility={final:.6g}"
        if oracle is not None and oracle[-1] > 0:
            line += f" oracle_gap={final / oracle[-1]:.4f}"
        print(line)
    if oracle is not None:
        print(f"oracle: final_utility={oracle[-1]:.6g}")
    print(f"wrote {len(rows)} rows to {out}")
    return 0 if all(t.all_feasible for t in timelines.values()) else 1


def _sweep_cell(
    config: ScenarioConfig, template: AttackEvent, attacked: int, seed: int
) -> tuple[list[tuple[Any, ...]], bool]:
    # One permutation per seed: larger attacked sets contain the smaller ones
    order = rng_streams(seed)["attack_sets"].permutation(config.num_nodes)
    events = [
        template.model_copy(update={"target_node": int(j), "target_slice": None})
        for j in sorted(order[:attacked])
    ]
    cfg = with_attacks(config, events)
    tail = max(1, config.horizon // 4)
    with tracer.start_as_current_span("sweep_cell", attributes={"attacked": attacked, "seed": seed}):
        learning = run_simulation(cfg, seed, "learning")
        baseline = run_simulation(cfg, seed, "baseline")
    u_learning = float(np.mean(learning.utilities()[-tail:]))
    u_baseline = float(np.mean(baseline.utilities()[-tail:]))
    ratio = u_learning / u_baseline if u_baseline > 0 else float("nan")
    base_ratio = 1.0 if u_baseline > 0 else float("nan")
    sweep_cells_total.inc()
    rows: list[tuple[Any, ...]] = [
        (attacked, seed, "baseline", u_baseline, base_ratio),
        (attacked, seed, "learning", u_learning, ratio),
    ]
    return rows, learning.all_feasible and baseline.all_feasible


async def cmd_sweep(spec: RunSpec) -> int:
    config = _resolve_scenario(spec.scenario)
    counts = spec.attacked if spec.attacked is not None else [0]
    if not counts:
        raise CliError("attacked counts must not be empty")
    if any(a < 0 for a in counts):
        raise CliError("attacked counts must be >= 0")
    if max(counts) >= config.num_nodes:
        raise CliError(f"attacked count {max(counts)} must be < num_nodes {config.num_nodes}")
    template = (
        config.attacks[0]
        if config.attacks
        else AttackEvent(target_node=0, start_slot=config.horizon // 3, attenuation=1.0)
    )
    seeds = range(spec.seed, spec.seed + spec.seeds)
    results: list[tuple[list[tuple[Any, ...]], bool]] = []
    limiter = anyio.CapacityLimiter(max(1, settings.sweep_concurrency))

    async def run_cell(attacked: int, seed: int) -> None:
        results.append(
            await to_thread.run_sync(_sweep_cell, config, template, attacked, seed, limiter=limiter)
        )

    async with anyio.create_task_group() as tg:
        for attacked in counts:
            for seed in seeds:
                tg.start_soon(run_cell, attacked, seed)

    rows = sorted((r for cell_rows, _ in results for r in cell_rows), key=lambda r: (r[0], r[1], r[2]))
    out = spec.out or os.path.join(OUTPUT_DIR, "sweep.csv")
    await write_csv(out, SWEEP_HEADER, rows)
    for attacked in counts:
        ratios = [r[4] for r in rows if r[0] == attacked and r[2] == "learning"]
        print(f"attacked={attacked}: mean learning/baseline ratio={float(np.nanmean(ratios)):.4f}")
    print(f"wrote {len(rows)} rows to {out}")
    return 0 if all(ok for _, ok in results) else 1


async def cmd_compare(spec: RunSpec) -> int:
    config = _resolve_scenario(spec.scenario)
    if config.attacks:
        raise CliError("compare needs an attack-free scenario")
    gt = ground_truth(config, spec.seed)
    best = solve_optimal(gt, config)
    rows: list[tuple[Any, ...]] = []
    feasible = True
    for alg in SIMULATED_ALGORITHMS:
        timeline = run_simulation(config, spec.seed, alg, exact_gradients=spec.exact_gradients)
        x = _settled_row(timeline).allocation
        rows.append((alg, float(np.sum(gt.alpha * x)), best.value, optimality_gap(x, gt, config)))
        feasible = feasible and timeline.all_feasible
    rows.append(("oracle", best.value, best.value, 1.0))
    print(render_csv(COMPARE_HEADER, rows), end="")
    return 0 if feasible else 1


async def cmd_allocation(spec: RunSpec) -> int:
    config = _resolve_scenario(spec.scenario)
    timelines = _simulate_all(config, spec)
    rows: list[tuple[Any, ...]] = []
    for alg, timeline in timelines.items():
        x = _settled_row(timeline).allocation
        n_slices, n_nodes, n_kinds = x.shape
        for i in range(n_slices):
            for j in range(n_nodes):
                for k in range(n_kinds):
                    rows.append((alg, i, j, config.resource_kinds[k].label, float(x[i, j, k])))
    out = spec.out or os.path.join(OUTPUT_DIR, "allocation.csv")
    await write_csv(out, ALLOCATION_HEADER, rows)
    print(f"wrote {len(rows)} rows to {out}")
    return 0 if all(t.all_feasible for t in timelines.values()) else 1


async def cmd_hypervisor(spec: RunSpec) -> int:
    """Replay each settled allocation through the per-node PRB mapper and kernel scheduler."""
    config = _resolve_scenario(spec.scenario)
    labels = [k.label for k in config.resource_kinds]
    radio_kind, compute_kind = find_kind(labels, "radio"), find_kind(labels, "compute")
    if radio_kind is None and compute_kind is None:
        raise CliError(f"no radio or compute resource kind among {labels}")
    timelines = _simulate_all(config, spec)
    rows: list[tuple[Any, ...]] = []
    worst = 0.0
    for alg, timeline in timelines.items():
        x = _settled_row(timeline).allocation
        rng = rng_streams(spec.seed)["hypervisor"]
        for j in range(config.num_nodes):
            report = drive_node(
                x,
                j,
                config.capacity,
                rng,
                radio_kind=radio_kind,
                compute_kind=compute_kind,
                num_prbs=spec.num_prbs,
                ticks=spec.ticks,
            )
            worst = max(worst, report.conservation_error)
            for i in range(config.num_slices):
                rows.append(
                    (
                        alg,
                        j,
                        i,
                        report.entitlements[i],
                        report.prbs_assigned[i],
                        report.radio_rate[i],
                        report.shares[i],
                        report.kernels_dispatched[i],
                        report.tokens_spent[i],
                    )
                )
    logger.info(f"hypervisor replay done, worst token conservation error {worst:.3g}")
    out = spec.out or os.path.join(OUTPUT_DIR, "hypervisor.csv")
    await write_csv(out, HYPERVISOR_HEADER, rows)
    print(f"wrote {len(rows)} rows to {out}")
    return 0 if all(t.all_feasible for t in timelines.values()) else 1


COMMANDS: dict[str, Callable[[RunSpec], Awaitable[int]]] = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "allocation": cmd_allocation,
    "hypervisor": cmd_hypervisor,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description="Learning-assisted multi-node slicing simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Simulate algorithms over one scenario and write per-slot CSV")
    sweep = sub.add_parser("sweep", help="Utility versus number of attacked nodes")
    compare = sub.add_parser("compare", help="Learning and baseline against the oracle")
    alloc = sub.add_parser("allocation", help="Final deployed allocation per slice/node/kind")
    hyper = sub.add_parser(
        "hypervisor", help="Replay final allocations through PRB and kernel schedulers"
    )
    for p in (run, sweep, compare, alloc, hyper):
        p.add_argument("--scenario", required=True, help="Scenario TOML path or shipped scenario name")
        p.add_argument("--seed", type=int, default=0, help="Run seed (first seed for sweeps)")
    for p in (run, alloc, hyper):
        p.add_argument(
            "--algorithms", default="learning,baseline", help="Comma list of learning,baseline,oracle"
        )
    for p in (run, compare, alloc, hyper):
        p.add_argument("--exact-gradients", action="store_true", help="Use true weights instead of learning")
    for p in (run, sweep, alloc, hyper):
        p.add_argument("--out", default=None, help="CSV output path")
    sweep.add_argument("--attacked", default="0", help="Attacked-node counts: 0..8, 0..8:2 or 0,2,4")
    sweep.add_argument("--seeds", type=int, default=10, help="Number of seeds per attacked count")
    hyper.add_argument("--prbs", type=int, default=50, help="PRBs per node")
    hyper.add_argument("--ticks", type=int, default=100, help="Kernel scheduler ticks per node")
    return ap


def _spec_from_args(ns: argparse.Namespace) -> RunSpec:
    fields: dict[str, Any] = {"scenario": ns.scenario, "seed": ns.seed}
    if getattr(ns, "algorithms", None):
        fields["algorithms"] = [a.strip() for a in ns.algorithms.split(",") if a.strip()]
    if getattr(ns, "exact_gradients", False):
        fields["exact_gradients"] = True
    if getattr(ns, "out", None):
        fields["out"] = ns.out
    if getattr(ns, "attacked", None) is not None:
        fields["attacked"] = parse_attacked(ns.attacked)
    if getattr(ns, "seeds", None) is not None:
        fields["seeds"] = ns.seeds
    if getattr(ns, "prbs", None) is not None:
        fields["num_prbs"] = ns.prbs
    if getattr(ns, "ticks", None) is not None:
        fields["ticks"] = ns.ticks
    return RunSpec(**fields)


async def main(argv: list[str] | None = None) -> int:
    setup_logging(settings.log_level)
    ns = build_parser().parse_args(argv)
    try:
        spec = _spec_from_args(ns)
        return await COMMANDS[ns.command](spec)
    except ValidationError as e:
        msg = e.errors()[0]["msg"]
        print(f"error: {msg}", file=sys.stderr)
    except (ScenarioError, OracleError, CliError, AdmmDivergenceError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
    finally:
        if settings.metrics_textfile:
            try:
                export_textfile(settings.metrics_textfile)
            except OSError as e:
                logger.warning(f"metrics textfile export failed: {e}")
    return 1


if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
