"""
Scenario runner and benchmark sweeps.

All numeric CSV fields are written with ``%.17e`` so they round-trip
exactly. ``records.csv`` holds no wall-clock fields, which keeps it
byte-identical across runs of the same config; timings go to
``timings.csv`` and ``report.json``.
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bounds import (
    CollectiveJacobian,
    GaussianEntropyModel,
    bounds_from_context,
    conditional_entropy_exact,
    g_operator,
    lower_bound,
)
from .config import ScenarioConfig
from .errors import InfeasibleConfig
from .gaussian import (
    CovarianceTable,
    GaussianBelief,
    MotionSpec,
    VariableIndex,
    chol_logdet,
    default_pose_ids,
    logdet_exact,
    propagate_covariance,
    propagated_logdet,
    recover_covariance_entries,
)
from .partition import build_tree, level_cover, max_depth, nested_upper
from .planner import evaluate_candidates, plan, replan_loop
from .slam import (
    CandidatePath,
    FactorGraph,
    World,
    build_collective_jacobian,
    generate_world,
    make_trajectory,
    predict_associations,
    prm_generate,
    simulate_mapping,
)

RECORDS_SCHEMA = "obspart-records/1"
RECORD_FIELDS = ("path_id", "n_actions", "length", "n_components", "level", "lb", "ub", "exact",
                 "state_cost", "pruned", "chosen")
TIMING_FIELDS = ("path_id", "assembly", "bounds", "exact")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17e" % float(v)


def write_csv(path: Path, fields, rows, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([fmt(row[f]) for f in fields])


def read_csv(path) -> list[dict]:
    """Rows of a file written by :func:`write_csv`, numbers parsed back to int/float."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        parsed = {}
        for k, v in row.items():
            if v == "":
                parsed[k] = None
            elif "e" in v or "." in v or "n" in v.lower():
                parsed[k] = float(v)
            else:
                parsed[k] = int(v)
        out.append(parsed)
    return out


def environment() -> dict:
    return {
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "machine": platform.machine(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "obspart": __version__,
        "cpu_count": os.cpu_count(),
    }


def _stats(values) -> dict:
    a = np.asarray(values, dtype=float)
    return {"mean": float(a.mean()), "std": float(a.std(ddof=1)) if a.size > 1 else 0.0, "n": int(a.size)}


# --------------------------------------------------------------------------- scenarios


@dataclass
class Scenario:
    world: World
    belief: GaussianBelief
    motion: MotionSpec
    sensor: object
    true_pose: np.ndarray
    graph: FactorGraph

    @property
    def n_factors(self) -> int:
        return self.graph.n_factors

    @property
    def landmarks_per_pose(self) -> float:
        return self.graph.landmarks_per_pose()


def build_scenario(cfg: ScenarioConfig, keep_fraction: float | None = None) -> Scenario:
    world = generate_world(cfg.world, cfg.seed)
    motion = MotionSpec(cfg.motion_cov())
    sensor = cfg.sensor.spec()
    traj = make_trajectory(cfg.prior.trajectory, cfg.world.bounds, cfg.prior.poses, cfg.prior.waypoints or None)
    graph = simulate_mapping(world, traj, motion, sensor, cfg.seed + 1)
    keep = cfg.prior.keep_fraction if keep_fraction is None else keep_fraction
    if keep < 1.0:
        graph = graph.pruned(keep, cfg.seed + 2)
    belief = graph.solve()
    return Scenario(world, belief, motion, sensor, traj[-1], graph)


def candidate_paths(cfg: ScenarioConfig, scen: Scenario) -> list[CandidatePath]:
    start = scen.belief.value(scen.belief.current_pose.id)
    return prm_generate(scen.world, start, cfg.planning.goal, cfg.planning.paths, cfg.seed + 3,
                        cfg.planning.prm())


# --------------------------------------------------------------------------- run


def run_scenario(cfg: ScenarioConfig, output_dir, threads: int = 1, repeats: int | None = None) -> dict:
    """Full pipeline for one scenario; writes records, timings, plot data and the report."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    repeats = cfg.repeats if repeats is None else repeats
    t0 = time.perf_counter()
    scen = build_scenario(cfg)
    paths = candidate_paths(cfg, scen)
    t_setup = time.perf_counter() - t0
    pcfg = cfg.planning.planner(cfg.seed)

    runs = []
    # the first pass is a warm-up whose timings are discarded
    for _ in range(repeats + 1):
        t = time.perf_counter()
        records, sel, timings, steps = plan(scen.belief, paths, pcfg, scen.motion, scen.sensor, threads)
        timings["session_wall"] = time.perf_counter() - t
        runs.append((records, sel, timings, steps))
    runs = runs[1:]
    records, sel, timings, steps = runs[-1]
    by_id = {p.path_id: p for p in paths}
    pruned = set(sel.pruned_ids)
    rows = [{
        "path_id": r.path_id,
        "n_actions": by_id[r.path_id].n_actions,
        "length": by_id[r.path_id].length,
        "n_components": r.n_components,
        "level": r.level,
        "lb": r.lb,
        "ub": r.ub,
        "exact": r.exact,
        "state_cost": r.state_cost,
        "pruned": r.path_id in pruned,
        "chosen": r.path_id == sel.chosen_id,
    } for r in records]
    write_csv(out / "records.csv", RECORD_FIELDS, rows, f"schema: {RECORDS_SCHEMA}")
    write_csv(out / "timings.csv", TIMING_FIELDS,
              [{"path_id": r.path_id, **{k: r.timings.get(k) for k in TIMING_FIELDS[1:]}} for r in records])
    ranked = sorted(rows, key=lambda r: (r["lb"], r["path_id"]))
    write_csv(out / "plot_bounds.csv", ("rank", "path_id", "lb", "ub", "exact", "threshold", "pruned", "chosen"),
              [{"rank": k, "threshold": sel.threshold, **r} for k, r in enumerate(ranked)])

    def per_path(key):
        return [math.fsum(r.timings.get(key, 0.0) for r in run[0]) for run in runs]

    exact_ids = [r for r in records if r.exact is not None]
    report = {
        "schema": "obspart-report/1",
        "selection": {
            "chosen_id": sel.chosen_id,
            "loss_bound": sel.loss_bound,
            "loss_ratio": sel.loss_ratio,
            "threshold": sel.threshold,
            "pruned_ids": list(sel.pruned_ids),
            "survivor_ids": list(sel.survivor_ids),
            "pruned_fraction": sel.pruned_fraction,
            "refinement_steps": steps,
            "exact_argmin": min(exact_ids, key=lambda r: (r.exact, r.path_id)).path_id if exact_ids else None,
        },
        "n_records": len(records),
        "scenario": {
            "state_dim": scen.belief.dim,
            "landmarks": len(scen.belief.landmarks()),
            "prior_factors": scen.n_factors,
            "landmarks_per_pose": scen.landmarks_per_pose,
        },
        "timing": {
            "setup": t_setup,
            "covariance_recovery": timings["covariance_recovery"],
            "per_path_assembly": math.fsum(r.timings["assembly"] for r in records),
            "per_path_bounds": math.fsum(r.timings["bounds"] for r in records),
            "per_path_exact": math.fsum(r.timings.get("exact", 0.0) for r in records),
            "refinement": timings.get("refinement", 0.0),
            "session_wall": timings["session_wall"],
            "repeats": {
                "covariance_recovery": _stats([r[2]["covariance_recovery"] for r in runs]),
                "per_path_bounds": _stats(per_path("bounds")),
                "per_path_exact": _stats(per_path("exact")),
                "session_wall": _stats([r[2]["session_wall"] for r in runs]),
            },
        },
        "environment": environment(),
        "seeds": {"world": cfg.seed, "mapping": cfg.seed + 1, "pruning": cfg.seed + 2, "roadmap": cfg.seed + 3,
                  "partition": cfg.seed, "episode": cfg.seed + 4},
        "config": cfg.echo(),
    }
    if cfg.replan_steps:
        logs = replan_loop(scen.world, scen.belief, scen.true_pose, cfg.planning.goal, cfg.replan_steps, pcfg,
                           scen.motion, scen.sensor, cfg.planning.paths, cfg.planning.prm(), cfg.seed + 4)
        with open(out / "episode.json", "w") as fh:
            json.dump([s.as_dict() for s in logs], fh, indent=1)
        report["episode"] = {"steps": len(logs), "final_goal_distance": logs[-1].goal_distance}
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=1)
    return report


# --------------------------------------------------------------------------- sweeps


def _single_path_model(cfg: ScenarioConfig, scen: Scenario, paths, backend: str | None = None):
    if cfg.sweep.path >= len(paths):
        raise InfeasibleConfig(f"sweep path {cfg.sweep.path} but only {len(paths)} candidates")
    path = paths[cfg.sweep.path]
    belief = scen.belief
    assoc = predict_associations(belief, path, scen.sensor)
    prop, jac = build_collective_jacobian(belief, path, assoc, scen.motion, scen.sensor)
    backend = backend or cfg.planning.backend
    cov, ld = None, None
    if backend == "ramdl":
        ids = sorted({lid for step in assoc.per_step for lid in step}) + [belief.current_pose.id]
        table = recover_covariance_entries(belief, ids)
        cov = propagate_covariance(table, belief, path.actions, scen.motion, default_pose_ids(belief, path.n_actions))
        ld = propagated_logdet(logdet_exact(belief.info), scen.motion, path.n_actions)
    model = GaussianEntropyModel(prop, jac, backend, cov, ld)
    return model, conditional_entropy_exact(prop, jac)


def sweep_convergence(cfg: ScenarioConfig, scen: Scenario, paths) -> list[dict]:
    """Grow Z^s one component at a time from a depth-1 split until it is all of Z."""
    model, exact = _single_path_model(cfg, scen, paths)
    m = model.jac.n_components
    if m < 2:
        raise InfeasibleConfig("convergence sweep needs a path with at least two measurement components")
    tree = build_tree(m, 1, cfg.planning.strategy, cfg.seed)
    s, s_bar = list(tree.node(1, 1).members), list(tree.node(1, 2).members)
    rows = []
    while True:
        rows.append({"size_s": len(s), "lb": g_operator(model, s, s_bar), "ub": model.cond_entropy(s),
                     "exact": exact})
        if not s_bar:
            break
        s.append(s_bar.pop(0))
    return rows


def sweep_depth(cfg: ScenarioConfig, scen: Scenario, paths) -> list[dict]:
    """Bounds at every level of one nested tree, root to leaves."""
    model, exact = _single_path_model(cfg, scen, paths)
    m = model.jac.n_components
    tree = build_tree(m, max_depth(m), cfg.planning.strategy, cfg.seed)
    rows = []
    for d in range(tree.depth + 1):
        nodes = tree.level(d)
        ub = min(model.cond_entropy(v.members) for v in nodes)
        lb = lower_bound(model, level_cover(tree, d))
        rows.append({"depth": d, "lb": lb, "ub": ub, "exact": exact, "width": ub - lb})
    return rows


def from_scratch_logdet(graph: FactorGraph, belief: GaussianBelief, motion_part: np.ndarray,
                        jac: CollectiveJacobian) -> float:
    """Exact posterior log-determinant rebuilt from every prior factor.

    ``motion_part`` is Lambda^{Aug-} with the prior block removed, i.e. the
    motion information of the candidate's future poses. The cost grows with
    the number of prior factors, which a from-scratch evaluator pays per candidate.
    """
    info = motion_part.copy()
    prior = graph.information_at(belief).tocoo()
    info[prior.row, prior.col] += prior.data
    meas = (jac.csr.T @ jac.csr).tocoo()
    info[meas.row, meas.col] += meas.data
    return chol_logdet(info, overwrite=True)


def sweep_density(cfg: ScenarioConfig, scen_full: Scenario, paths, repeats: int = 3) -> list[dict]:
    """Planning time versus prior-factor density: partitioned rAMDL against a from-scratch exact baseline.

    Within each method, repeats are interleaved across densities so that slow
    drift in machine speed affects every density alike. Reported times are the best of
    ``repeats`` runs after a discarded warm-up round; means are kept alongside.
    """
    pcfg = replace(cfg.planning.planner(cfg.seed), backend="ramdl", objective="final", exact=False,
                   refine_budget=0)
    cases = []
    for keep in cfg.sweep.keep_fractions:
        scen = scen_full if keep == 1.0 else build_scenario(cfg, keep)
        belief = scen.belief
        systems = []
        for p in paths:
            assoc = predict_associations(belief, p, scen.sensor)
            prop, jac = build_collective_jacobian(belief, p, assoc, scen.motion, scen.sensor)
            motion_part = np.array(prop.info)
            motion_part[:belief.dim, :belief.dim] -= belief.info
            systems.append((motion_part, jac))
        cases.append((keep, scen, systems, [], []))
    # the two methods run in separate passes: the baseline's large dense
    # allocations otherwise slow whatever is timed right after them
    for rep in range(repeats + 1):
        for keep, scen, systems, t_part, t_base in cases:
            records, timings = evaluate_candidates(scen.belief, paths, pcfg, scen.motion, scen.sensor)
            if rep:
                t_part.append(timings["covariance_recovery"] + math.fsum(r.timings["bounds"] for r in records))
    for rep in range(repeats + 1):
        for keep, scen, systems, t_part, t_base in cases:
            t = time.perf_counter()
            for motion_part, jac in systems:
                from_scratch_logdet(scen.graph, scen.belief, motion_part, jac)
            if rep:
                t_base.append(time.perf_counter() - t)
    return [{"keep_fraction": keep, "landmarks_per_pose": scen.landmarks_per_pose,
             "prior_factors": scen.n_factors, "state_dim": scen.belief.dim,
             "t_partitioned": min(t_part), "t_baseline": min(t_base),
             "t_partitioned_mean": float(np.mean(t_part)), "t_baseline_mean": float(np.mean(t_base))}
            for keep, scen, systems, t_part, t_base in cases]


@dataclass
class Kernel:
    """Synthetic SLAM-shaped determinant problem: prior covariance entries plus measurement rows."""

    prior_logdet: float
    cov: CovarianceTable
    jac: CollectiveJacobian


def synthetic_kernel(m: int, state_factor: int, seed: int) -> Kernel:
    """``m`` rows (two per pose-landmark measurement) over a state of ``state_factor * m`` columns.

    Measurements come from a short horizon of poses, each seeing several
    landmarks, so the involved columns are few compared with the state.
    """
    rng = np.random.default_rng([seed, m])
    n = state_factor * m
    comps = m // 2
    n_poses = max(2, comps // 8)
    n_lms = max(2, comps // 3)
    # involved variables sit at the end of the state, poses last
    lm_off = n - 3 * n_poses - 2 * n_lms
    if lm_off < 0:
        raise InfeasibleConfig("state too small for the synthetic measurement layout")
    ps_off = n - 3 * n_poses
    variables = tuple(VariableIndex(("l", j), "landmark", 2, lm_off + 2 * j) for j in range(n_lms)) + \
        tuple(VariableIndex(("x", j), "pose", 3, ps_off + 3 * j) for j in range(n_poses))
    k = 2 * n_lms + 3 * n_poses
    C = rng.standard_normal((k, k)) / math.sqrt(k)
    Sigma = C @ C.T + 0.5 * np.eye(k)
    rows = np.zeros((2 * comps, n))
    for c in range(comps):
        pose = rng.integers(n_poses)
        lm = rng.integers(n_lms)
        rows[2 * c:2 * c + 2, ps_off + 3 * pose:ps_off + 3 * pose + 3] = rng.standard_normal((2, 3))
        rows[2 * c:2 * c + 2, lm_off + 2 * lm:lm_off + 2 * lm + 2] = rng.standard_normal((2, 2))
    jac = CollectiveJacobian(rows, np.repeat(np.arange(comps), 2))
    return Kernel(float(rng.normal()), CovarianceTable(variables, Sigma), jac)


def _best_time(fn, repeats: int) -> float:
    fn()  # warm-up
    best = math.inf
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def time_kernel(kernel: Kernel, seed: int, repeats: int = 5) -> dict:
    """Best-of-``repeats`` times for the exact rAMDL value and the depth-1 partitioned bounds.

    Both sides start from a fresh model so shared per-path work is charged to each.
    """
    jac = kernel.jac
    tree = build_tree(jac.n_components, 1, "random", seed)
    upper, lower = nested_upper(tree, 1), level_cover(tree, 1)

    def model():
        return GaussianEntropyModel(None, jac, "ramdl", kernel.cov, kernel.prior_logdet)

    def full():
        return model().cond_entropy(range(jac.n_components))

    def partitioned():
        return bounds_from_context(model(), upper, lower)

    return {"t_full": _best_time(full, repeats), "t_partitioned": _best_time(partitioned, repeats)}


def sweep_speedup(cfg: ScenarioConfig, repeats: int | None = None) -> list[dict]:
    repeats = max(cfg.repeats, 5) if repeats is None else repeats
    rows = []
    for m in cfg.sweep.sizes:
        kernel = synthetic_kernel(m, cfg.sweep.state_factor, cfg.seed)
        t = time_kernel(kernel, cfg.seed, repeats)
        rows.append({"m": m, "n": kernel.jac.n_cols, **t, "ratio": t["t_full"] / t["t_partitioned"]})
    return rows


SWEEP_FIELDS = {
    "convergence": ("size_s", "lb", "ub", "exact"),
    "depth": ("depth", "lb", "ub", "exact", "width"),
    "density": ("keep_fraction", "landmarks_per_pose", "prior_factors", "state_dim", "t_partitioned",
                "t_baseline", "t_partitioned_mean", "t_baseline_mean"),
    "speedup": ("m", "n", "t_full", "t_partitioned", "ratio"),
}


def run_sweep(kind: str, cfg: ScenarioConfig, output_dir, repeats: int | None = None) -> list[dict]:
    if kind not in SWEEP_FIELDS:
        raise InfeasibleConfig(f"unknown sweep {kind!r}")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if kind == "speedup":
        rows = sweep_speedup(cfg, repeats)
    else:
        scen = build_scenario(cfg)
        paths = candidate_paths(cfg, scen)
        if kind == "convergence":
            rows = sweep_convergence(cfg, scen, paths)
        elif kind == "depth":
            rows = sweep_depth(cfg, scen, paths)
        else:
            rows = sweep_density(cfg, scen, paths, max(cfg.repeats, 3) if repeats is None else repeats)
    write_csv(out / f"sweep_{kind}.csv", SWEEP_FIELDS[kind], rows)
    return rows

