"""Seeded experiment harness: convergence statistics, sweeps, NE estimates.

Every experiment resolves to a grid of cells; each cell runs
``topologies x trials`` independent converged runs. Random streams are
derived solely from the recorded seed manifest and the trial's coordinates
(never from execution order), so results are bit-reproducible and
independent of how many workers execute the grid.

Result files are versioned text (CSV body with '#' header lines embedding
the resolved configuration and the seed manifest).
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .dynamics import (
    ContentionConfig,
    DEFAULT_ENUMERATION_CAP,
    EnumerationCapError,
    brute_force_optimum,
    enumerate_nash_equilibria,
    run_to_convergence,
)
from .game import GameInstance, is_nash_equilibrium, ne_lower_bound, random_profile
from .topology import generate_topology

RESULT_FORMAT_HEADER = "spectrumgame-result v1"

# stream tags namespace the random streams derived from one experiment seed
_TRIAL_STREAM = 1
_ESTIMATE_STREAM = 2
_ORACLE_STREAM = 3

DEFAULT_LOAD_SET = (1, 2, 3)
DEFAULT_BASE_REGION = 200.0
DEFAULT_BASE_CELLS = 20
DEFAULT_D0 = 60.0


class NonConvergenceError(RuntimeError):
    """An adaptive run failed to converge within its round budget."""


@dataclass
class ExperimentResult:
    """Aggregated experiment output plus everything needed to replay it."""

    experiment: str
    config: dict
    manifest: dict
    summary_rows: list = field(default_factory=list)
    trial_rows: list = field(default_factory=list)
    cdf_samples: dict = field(default_factory=dict)


def make_seed_manifest(seed: int, topologies: int, trials: int) -> dict:
    """Explicit per-topology and per-trial seeds derived from one root seed."""
    root = np.random.SeedSequence(seed)
    words = root.generate_state(topologies + trials, dtype=np.uint64)
    return {
        "seed": int(seed),
        "topology_seeds": [int(w) for w in words[:topologies]],
        "trial_seeds": [int(w) for w in words[topologies:]],
    }


def trial_rng(topology_seed: int, trial_seed: int, algorithm_index: int) -> np.random.Generator:
    return np.random.default_rng([_TRIAL_STREAM, topology_seed, trial_seed, algorithm_index])


def estimate_best_worst_ne(game: GameInstance, runs: int, seed, max_rounds: int = 1_000_000):
    """Min and max converged aggregate interference over repeated runs.

    Runs the standard scheme from independent random initial profiles and
    reports the extremes. These are estimates of the best and worst
    equilibrium values (a quasi-centralized bracket), not exact optima.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    entropy = list(seed) if isinstance(seed, (list, tuple)) else [seed]
    best = worst = None
    for r in range(runs):
        rng = np.random.default_rng([_ESTIMATE_STREAM, *entropy, r])
        trace = run_to_convergence(
            game, random_profile(game, rng), "standard", rng=rng, max_rounds=max_rounds
        )
        if not trace.converged:
            raise NonConvergenceError(f"estimation run {r} did not converge")
        value = trace.final_aggregate
        best = value if best is None else min(best, value)
        worst = value if worst is None else max(worst, value)
    return best, worst


def _run_grid_job(payload: dict) -> dict:
    """Run all trials for one (grid cell, topology) pair. Pickle-friendly."""
    topology = generate_topology(
        n_cells=payload["n_cells"],
        load_set=payload["load_set"],
        base_region=payload["base_region"],
        base_cells=payload["base_cells"],
        d0=payload["interference_distance"],
        rng_seed=payload["topology_seed"],
    )
    game = GameInstance(topology, payload["n_channels"])
    config = ContentionConfig(tau_max=payload["tau_max"], exclusion=payload["exclusion"])
    rows = []
    for algo_index, algorithm in enumerate(payload["algorithms"]):
        for trial_index, trial_seed in enumerate(payload["trial_seeds"]):
            rng = trial_rng(payload["topology_seed"], trial_seed, algo_index)
            trace = run_to_convergence(
                game,
                random_profile(game, rng),
                algorithm,
                config=config,
                rng=rng,
                max_rounds=payload["max_rounds"],
            )
            if algorithm != "random_once" and not trace.converged:
                raise NonConvergenceError(
                    f"{algorithm} run (cell={payload['cell_value']}, "
                    f"topology={payload['topology_index']}, trial={trial_index}) "
                    f"did not converge within {payload['max_rounds']} rounds"
                )
            rows.append(
                {
                    "algorithm": algorithm,
                    "topology_index": payload["topology_index"],
                    "trial_index": trial_index,
                    "rounds": trace.rounds_to_convergence,
                    "final_aggregate": trace.final_aggregate,
                    "converged": trace.converged,
                }
            )
    best = worst = None
    if payload["best_worst_runs"]:
        best, worst = estimate_best_worst_ne(
            game,
            payload["best_worst_runs"],
            seed=[payload["topology_seed"]],
            max_rounds=payload["max_rounds"],
        )
    bound = ne_lower_bound(game)
    return {
        "cell_index": payload["cell_index"],
        "topology_index": payload["topology_index"],
        "rows": rows,
        "best_estimate": best,
        "worst_estimate": worst,
        "bound_numerator": bound.numerator,
        "bound_denominator": bound.denominator,
    }


def _run_jobs(payloads: list, workers: int) -> list:
    if workers <= 1:
        results = [_run_grid_job(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_grid_job, payloads))
    return sorted(results, key=lambda r: (r["cell_index"], r["topology_index"]))


def _percentiles(values) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    out = {"mean": float(arr.mean()), "median": float(np.median(arr))}
    for q in (5, 25, 50, 75, 95):
        out[f"p{q}"] = float(np.percentile(arr, q))
    out["min"] = float(arr.min())
    out["max"] = float(arr.max())
    return out


def _grid_experiment(
    experiment: str,
    cell_key: str,
    cell_values,
    *,
    n_cells,
    n_channels,
    load_set,
    base_region,
    base_cells,
    interference_distance,
    topologies,
    trials,
    algorithms,
    tau_max,
    exclusion,
    max_rounds,
    best_worst_runs,
    seed,
    workers,
    collect_cdf,
) -> ExperimentResult:
    cell_values = list(cell_values)
    if not cell_values:
        raise ValueError("experiment grid is empty")
    if trials < 1 or topologies < 1:
        raise ValueError("trials and topologies must be >= 1")
    load_set = tuple(int(k) for k in load_set)
    for value in cell_values:
        m = value if cell_key == "n_channels" else n_channels
        if max(load_set) > m:
            raise ValueError(f"channel count {m} below the maximum load {max(load_set)}")

    manifest = make_seed_manifest(seed, topologies, trials)
    run_algorithms = list(algorithms)
    config = {
        "experiment": experiment,
        cell_key + "_grid": cell_values,
        "n_cells": n_cells,
        "n_channels": n_channels,
        "load_set": list(load_set),
        "base_region": base_region,
        "base_cells": base_cells,
        "interference_distance": interference_distance,
        "topologies": topologies,
        "trials": trials,
        "algorithms": run_algorithms,
        "tau_max": tau_max,
        "exclusion": exclusion,
        "max_rounds": max_rounds,
        "best_worst_runs": best_worst_runs,
        "seed": seed,
    }

    payloads = []
    for cell_index, value in enumerate(cell_values):
        for topology_index, topo_seed in enumerate(manifest["topology_seeds"]):
            payloads.append(
                {
                    "cell_index": cell_index,
                    "cell_value": value,
                    "topology_index": topology_index,
                    "topology_seed": topo_seed,
                    "trial_seeds": manifest["trial_seeds"],
                    "n_cells": value if cell_key == "n_cells" else n_cells,
                    "n_channels": value if cell_key == "n_channels" else n_channels,
                    "load_set": load_set,
                    "base_region": base_region,
                    "base_cells": base_cells,
                    "interference_distance": interference_distance,
                    "algorithms": run_algorithms,
                    "tau_max": tau_max,
                    "exclusion": exclusion,
                    "max_rounds": max_rounds,
                    "best_worst_runs": best_worst_runs,
                }
            )
    job_results = _run_jobs(payloads, workers)

    result = ExperimentResult(experiment=experiment, config=config, manifest=manifest)
    by_cell = {}
    for job in job_results:
        by_cell.setdefault(job["cell_index"], []).append(job)
        for row in job["rows"]:
            result.trial_rows.append({cell_key: cell_values[job["cell_index"]], **row})

    summary_algorithms = run_algorithms + (["standard_estimate"] if best_worst_runs else [])
    for cell_index, value in enumerate(cell_values):
        jobs = by_cell[cell_index]
        best = worst = None
        if best_worst_runs:
            best = float(np.mean([j["best_estimate"] for j in jobs]))
            worst = float(np.mean([j["worst_estimate"] for j in jobs]))
        bound = sum(
            Fraction(j["bound_numerator"], j["bound_denominator"]) for j in jobs
        ) / len(jobs)
        for algorithm in run_algorithms:
            rounds = []
            finals = []
            for job in jobs:
                for row in job["rows"]:
                    if row["algorithm"] == algorithm:
                        rounds.append(row["rounds"])
                        finals.append(row["final_aggregate"])
            row = {
                cell_key: value,
                "algorithm": algorithm,
                "runs": len(finals),
                **{f"aggregate_{k}": v for k, v in _percentiles(finals).items()},
                **{f"rounds_{k}": v for k, v in _percentiles(rounds).items()},
                "best_ne_estimate": best,
                "worst_ne_estimate": worst,
                "mean_ne_lower_bound": str(bound),
            }
            result.summary_rows.append(row)
            if collect_cdf:
                key = f"{cell_key}={value}/{algorithm}"
                result.cdf_samples[key] = sorted(rounds)
    return result


def convergence_cdf(
    n_cells_list=(20, 30),
    n_channels: int = 5,
    topologies: int = 5,
    trials: int = 1000,
    algorithms=("standard", "autonomous"),
    load_set=DEFAULT_LOAD_SET,
    base_region: float = DEFAULT_BASE_REGION,
    base_cells: int = DEFAULT_BASE_CELLS,
    interference_distance: float = DEFAULT_D0,
    tau_max: float = 1.0,
    exclusion: str = "two_hop",
    max_rounds: int = 1_000_000,
    seed: int = 0,
    workers: int = 1,
) -> ExperimentResult:
    """Empirical distribution of rounds-to-convergence per network size.

    Every run must converge; a non-converged run raises
    ``NonConvergenceError`` because the dynamics carry a finite-convergence
    guarantee.
    """
    return _grid_experiment(
        "cdf",
        "n_cells",
        n_cells_list,
        n_cells=None,
        n_channels=n_channels,
        load_set=load_set,
        base_region=base_region,
        base_cells=base_cells,
        interference_distance=interference_distance,
        topologies=topologies,
        trials=trials,
        algorithms=algorithms,
        tau_max=tau_max,
        exclusion=exclusion,
        max_rounds=max_rounds,
        best_worst_runs=0,
        seed=seed,
        workers=workers,
        collect_cdf=True,
    )


def sweep_cells(
    n_cells_grid=(10, 15, 20, 25, 30),
    n_channels: int = 5,
    topologies: int = 5,
    trials: int = 200,
    algorithms=("autonomous", "random_once"),
    best_worst_runs: int = 200,
    load_set=DEFAULT_LOAD_SET,
    base_region: float = DEFAULT_BASE_REGION,
    base_cells: int = DEFAULT_BASE_CELLS,
    interference_distance: float = DEFAULT_D0,
    tau_max: float = 1.0,
    exclusion: str = "two_hop",
    max_rounds: int = 1_000_000,
    seed: int = 0,
    workers: int = 1,
) -> ExperimentResult:
    """Mean converged interference versus network size, with NE brackets."""
    return _grid_experiment(
        "cells",
        "n_cells",
        n_cells_grid,
        n_cells=None,
        n_channels=n_channels,
        load_set=load_set,
        base_region=base_region,
        base_cells=base_cells,
        interference_distance=interference_distance,
        topologies=topologies,
        trials=trials,
        algorithms=algorithms,
        tau_max=tau_max,
        exclusion=exclusion,
        max_rounds=max_rounds,
        best_worst_runs=best_worst_runs,
        seed=seed,
        workers=workers,
        collect_cdf=False,
    )


def sweep_channels(
    channel_grid=(3, 4, 5, 6, 7, 8, 9, 10, 11, 12),
    n_cells: int = 20,
    topologies: int = 5,
    trials: int = 200,
    algorithms=("autonomous", "random_once"),
    best_worst_runs: int = 200,
    load_set=DEFAULT_LOAD_SET,
    base_region: float = DEFAULT_BASE_REGION,
    base_cells: int = DEFAULT_BASE_CELLS,
    interference_distance: float = DEFAULT_D0,
    tau_max: float = 1.0,
    exclusion: str = "two_hop",
    max_rounds: int = 1_000_000,
    seed: int = 0,
    workers: int = 1,
) -> ExperimentResult:
    """Mean converged interference versus channel budget at fixed size.

    Also reports the per-cell equilibrium lower bound (exact rational,
    averaged over topologies).
    """
    return _grid_experiment(
        "channels",
        "n_channels",
        channel_grid,
        n_cells=n_cells,
        n_channels=None,
        load_set=load_set,
        base_region=base_region,
        base_cells=base_cells,
        interference_distance=interference_distance,
        topologies=topologies,
        trials=trials,
        algorithms=algorithms,
        tau_max=tau_max,
        exclusion=exclusion,
        max_rounds=max_rounds,
        best_worst_runs=best_worst_runs,
        seed=seed,
        workers=workers,
        collect_cdf=False,
    )


def oracle_suite(
    instances: int = 50,
    max_cells: int = 5,
    max_channels: int = 4,
    load_set=(1, 2),
    trials: int = 5,
    best_worst_runs: int = 200,
    base_region: float = DEFAULT_BASE_REGION,
    base_cells: int = DEFAULT_BASE_CELLS,
    interference_distance: float = DEFAULT_D0,
    tau_max: float = 1.0,
    exclusion: str = "two_hop",
    max_rounds: int = 1_000_000,
    seed: int = 0,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> ExperimentResult:
    """Brute-force cross-checks on small random instances.

    For each instance: the exhaustive global optimum must be a Nash
    equilibrium and must equal the smallest enumerated equilibrium value;
    every converged run must land inside the enumerated equilibrium value
    range; the best/worst estimates must bracket inside that range; and
    every equilibrium must respect the exact aggregate-utility lower bound.
    Instances whose joint profile space exceeds ``cap`` produce a warning
    row and are skipped.
    """
    if instances < 1:
        raise ValueError("instances must be >= 1")
    load_set = tuple(int(k) for k in load_set)
    config = {
        "experiment": "oracle",
        "instances": instances,
        "max_cells": max_cells,
        "max_channels": max_channels,
        "load_set": list(load_set),
        "trials": trials,
        "best_worst_runs": best_worst_runs,
        "base_region": base_region,
        "base_cells": base_cells,
        "interference_distance": interference_distance,
        "tau_max": tau_max,
        "exclusion": exclusion,
        "max_rounds": max_rounds,
        "seed": seed,
        "cap": cap,
    }
    result = ExperimentResult(experiment="oracle", config=config, manifest={"seed": seed})
    contention = ContentionConfig(tau_max=tau_max, exclusion=exclusion)
    for index in range(instances):
        rng = np.random.default_rng([_ORACLE_STREAM, seed, index])
        n = int(rng.integers(2, max_cells + 1))
        m = int(rng.integers(max(load_set), max_channels + 1))
        topology = generate_topology(
            n, load_set, base_region, base_cells, interference_distance,
            rng_seed=[_ORACLE_STREAM, seed, index, 1],
        )
        game = GameInstance(topology, m)
        row = {
            "instance": index,
            "n_cells": n,
            "n_channels": m,
            "loads": "|".join(str(k) for k in topology.loads),
            "profile_space": game.joint_profile_count(),
        }
        try:
            optimum_profile, optimum_value = brute_force_optimum(game, cap=cap)
            equilibria = enumerate_nash_equilibria(game, cap=cap)
        except EnumerationCapError as exc:
            row.update(status=f"skipped: {exc}", ok="")
            result.summary_rows.append(row)
            continue
        ne_values = [value for _, value in equilibria]
        ne_min, ne_max = min(ne_values), max(ne_values)
        bound = ne_lower_bound(game)
        converged_values = []
        for algo_index, algorithm in enumerate(("standard", "autonomous")):
            for trial in range(trials):
                t_rng = np.random.default_rng([_ORACLE_STREAM, seed, index, 2, algo_index, trial])
                trace = run_to_convergence(
                    game, random_profile(game, t_rng), algorithm,
                    config=contention, rng=t_rng, max_rounds=max_rounds,
                )
                if not trace.converged:
                    raise NonConvergenceError(f"oracle instance {index}: {algorithm} did not converge")
                converged_values.append(trace.final_aggregate)
        best, worst = estimate_best_worst_ne(
            game, best_worst_runs, seed=[seed, index], max_rounds=max_rounds
        )
        checks = {
            "optimum_is_ne": is_nash_equilibrium(game, optimum_profile),
            "optimum_equals_ne_min": optimum_value == ne_min,
            "runs_in_ne_range": all(ne_min <= v <= ne_max for v in converged_values),
            "estimates_bracketed": ne_min <= best <= worst <= ne_max,
            "bound_holds": all(Fraction(-v) >= bound for v in ne_values),
        }
        row.update(
            optimum=optimum_value,
            ne_count=len(equilibria),
            ne_min=ne_min,
            ne_max=ne_max,
            best_estimate=best,
            worst_estimate=worst,
            **checks,
            status="ok",
            ok=all(checks.values()),
        )
        result.summary_rows.append(row)
    return result


# ---------------------------------------------------------------------------
# Result files


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def _header_lines(result: ExperimentResult) -> list:
    return [
        RESULT_FORMAT_HEADER,
        f"# experiment {result.experiment}",
        "# config " + json.dumps(result.config, sort_keys=True),
        "# manifest " + json.dumps(result.manifest, sort_keys=True),
    ]


def _write_table(path, header_lines, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if rows:
        columns = list(rows[0].keys())
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_value(row.get(c)) for c in columns])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(header_lines) + "\n")
        fh.write(buf.getvalue())


def write_result_files(result: ExperimentResult, out_dir) -> list:
    """Write summary/trials/cdf files for an experiment; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    header = _header_lines(result)
    paths = []
    summary = os.path.join(out_dir, f"{result.experiment}_summary.csv")
    _write_table(summary, header, result.summary_rows)
    paths.append(summary)
    if result.trial_rows:
        trials = os.path.join(out_dir, f"{result.experiment}_trials.csv")
        _write_table(trials, header, result.trial_rows)
        paths.append(trials)
    if result.cdf_samples:
        cdf = os.path.join(out_dir, f"{result.experiment}_cdf.csv")
        rows = []
        for key in sorted(result.cdf_samples):
            for rank, value in enumerate(result.cdf_samples[key]):
                rows.append({"series": key, "rank": rank, "rounds": value})
        _write_table(cdf, header, rows)
        paths.append(cdf)
    return paths
