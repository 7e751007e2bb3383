"""
Candidate evaluation, pruning, selection with a loss bound, adaptive
refinement and the re-planning loop.

The planner minimizes expected posterior entropy (nats) plus an optional
state cost ``alpha * distance-to-goal`` of the final ML pose. Because the
state cost does not depend on future observations it shifts both bounds of
a path by the same amount.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .bounds import (
    BACKENDS,
    BoundsInterval,
    CollectiveJacobian,
    GaussianEntropyModel,
    conditional_entropy_exact,
    lower_bound,
)
from .errors import GoalUnreachable, InfeasibleConfig
from .gaussian import (
    GaussianBelief,
    MotionSpec,
    cholesky,
    default_pose_ids,
    logdet_exact,
    propagate,
    propagate_covariance,
    propagated_logdet,
    recover_covariance_entries,
)
from .geometry import range_bearing, wrap_angle
from .partition import LowerSelection, build_tree, max_depth
from .slam import (
    CandidatePath,
    PRMConfig,
    SensorSpec,
    World,
    build_collective_jacobian,
    predict_associations,
    predicted_poses,
    prm_generate,
    update_belief,
)

OBJECTIVES = ("final", "horizon")


@dataclass(frozen=True)
class PlannerConfig:
    depth: int = 1
    strategy: str = "random"
    seed: int = 0
    backend: str = "ramdl"
    objective: str = "final"
    alpha: float = 0.0
    exact: bool = False
    refine_budget: int = 0
    goal: tuple[float, float] | None = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise InfeasibleConfig(f"unknown backend {self.backend!r}")
        if self.objective not in OBJECTIVES:
            raise InfeasibleConfig(f"unknown objective {self.objective!r}")
        if self.depth < 0:
            raise InfeasibleConfig("partition depth must be non-negative")
        if self.refine_budget < 0:
            raise InfeasibleConfig("refinement budget must be non-negative")


class _BoundContext:
    """Everything needed to re-bound one path at another tree level."""

    def __init__(self, terms: list, state_cost: float):
        self.terms = terms  # (model, tree) per summed entropy term
        self.state_cost = state_cost

    @property
    def max_level(self) -> int:
        return max((tree.depth for _, tree in self.terms), default=0)

    def interval(self, level: int) -> BoundsInterval:
        lbs, ubs, labels = [], [], []
        for model, tree in self.terms:
            d = min(level, tree.depth)
            nodes = tree.level(d)
            ub_vals = [model.cond_entropy(v.members) for v in nodes]
            best = int(np.argmin(ub_vals))
            lbs.append(lower_bound(model, LowerSelection(tuple(nodes))))
            ubs.append(ub_vals[best])
            labels.append(f"{d}:{nodes[best].level}/{nodes[best].node_id}")
        lb, ub = math.fsum(lbs), math.fsum(ubs)
        return BoundsInterval(lb + self.state_cost, ub + self.state_cost, f"d={level} U[{';'.join(labels)}]")


@dataclass(frozen=True, eq=False)
class EvaluationRecord:
    path_id: int
    interval: BoundsInterval
    level: int
    exact: float | None = None
    state_cost: float = 0.0
    n_components: int = 0
    timings: dict = field(default_factory=dict)
    refinement_trace: tuple = ()
    _context: _BoundContext | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.exact is not None and not self.interval.contains(self.exact):
            raise ValueError(f"path {self.path_id}: exact {self.exact!r} outside {self.interval}")

    @property
    def lb(self) -> float:
        return self.interval.lb

    @property
    def ub(self) -> float:
        return self.interval.ub


@dataclass(frozen=True)
class SelectionResult:
    chosen_id: int
    loss_bound: float
    pruned_ids: tuple[int, ...]
    survivor_ids: tuple[int, ...]
    threshold: float
    loss_ratio: float

    @property
    def pruned_fraction(self) -> float:
        total = len(self.pruned_ids) + len(self.survivor_ids)
        return len(self.pruned_ids) / total if total else 0.0


@dataclass
class Session:
    """Per-session inputs shared by all candidate paths."""

    belief: GaussianBelief
    motion: MotionSpec
    sensor: SensorSpec
    prior_logdet: float
    cov: object
    timings: dict


def state_cost(belief: GaussianBelief, path: CandidatePath, config: PlannerConfig) -> float:
    """alpha times the distance from the final ML-predicted pose to the goal."""
    if config.alpha == 0.0 or config.goal is None or path.n_actions == 0:
        return 0.0
    final = predicted_poses(belief, path)[-1]
    return config.alpha * math.hypot(final[0] - config.goal[0], final[1] - config.goal[1])


def prepare_session(belief: GaussianBelief, paths: Sequence[CandidatePath], motion: MotionSpec,
                    sensor: SensorSpec, config: PlannerConfig) -> tuple[Session, list]:
    """One-time work: associations, prior log-determinant and covariance recovery."""
    assocs = [predict_associations(belief, p, sensor) for p in paths]
    timings = {}
    t0 = time.perf_counter()
    prior_logdet = logdet_exact(belief.info)
    cov = None
    if config.backend == "ramdl":
        involved = {lid for a in assocs for step in a.per_step for lid in step}
        ids = [v.id for v in belief.landmarks() if v.id in involved] + [belief.current_pose.id]
        cov = recover_covariance_entries(belief, ids)
    timings["covariance_recovery"] = time.perf_counter() - t0
    return Session(belief, motion, sensor, prior_logdet, cov, timings), assocs


def _models(session: Session, path: CandidatePath, prop, jac, config: PlannerConfig) -> list:
    belief = session.belief
    steps = path.n_actions
    cov = None
    if config.backend == "ramdl":
        cov = propagate_covariance(session.cov, belief, path.actions, session.motion,
                                   default_pose_ids(belief, steps))
    if config.objective == "final":
        ld = propagated_logdet(session.prior_logdet, session.motion, steps)
        return [(GaussianEntropyModel(prop, jac, config.backend, cov, ld), jac)]
    out = []
    step_of = [lab[0] for lab in jac.labels]
    n0 = belief.dim
    for l in range(1, steps + 1):
        prop_l = propagate(belief, path.actions[:l], session.motion)
        last = max((c for c, s in enumerate(step_of) if s < l), default=-1)
        jac_l = jac.restricted(n0 + 3 * l, last)
        jac_l = _drop_components(jac_l, last + 1)
        ld = propagated_logdet(session.prior_logdet, session.motion, l)
        out.append((GaussianEntropyModel(prop_l, jac_l, config.backend, cov, ld), jac_l))
    return out


def _drop_components(jac, n_components):
    return CollectiveJacobian(jac.rows, jac.row_groups, n_old=jac.n_old, n_components=n_components,
                              labels=jac.labels[:n_components], involved=jac.involved[:n_components])


def _exact_value(session: Session, path: CandidatePath, config: PlannerConfig, prop, jac) -> float:
    """Dense reference objective, independent of the bound machinery."""
    if config.objective == "final":
        return conditional_entropy_exact(prop, jac)
    step_of = [lab[0] for lab in jac.labels]
    n0 = session.belief.dim
    total = []
    for l in range(1, path.n_actions + 1):
        prop_l = propagate(session.belief, path.actions[:l], session.motion)
        rows = jac.rows[np.isin(jac.row_groups, [c for c, s in enumerate(step_of) if s < l])][:, :n0 + 3 * l]
        total.append(conditional_entropy_exact(prop_l, CollectiveJacobian.one_row_per_component(rows)))
    return math.fsum(total)


def evaluate_path(session: Session, path: CandidatePath, assoc, config: PlannerConfig) -> EvaluationRecord:
    t0 = time.perf_counter()
    prop, jac = build_collective_jacobian(session.belief, path, assoc, session.motion, session.sensor)
    t1 = time.perf_counter()
    terms = _models(session, path, prop, jac, config)
    trees = []
    for model, jac_l in terms:
        m = jac_l.n_components
        trees.append((model, build_tree(m, min(config.depth, max_depth(m)), config.strategy,
                                        config.seed + path.path_id)))
    ctx = _BoundContext(trees, state_cost(session.belief, path, config))
    interval = ctx.interval(config.depth)
    t2 = time.perf_counter()
    exact = None
    timings = {"assembly": t1 - t0, "bounds": t2 - t1}
    if config.exact:
        exact = _exact_value(session, path, config, prop, jac) + ctx.state_cost
        timings["exact"] = time.perf_counter() - t2
    return EvaluationRecord(path.path_id, interval, config.depth, exact, ctx.state_cost, jac.n_components,
                            timings, ((config.depth, interval),), ctx)


def evaluate_candidates(belief: GaussianBelief, paths: Sequence[CandidatePath], config: PlannerConfig,
                        motion: MotionSpec, sensor: SensorSpec, threads: int = 1):
    """Bound every candidate; returns (records, session timings)."""
    if not paths:
        raise InfeasibleConfig("no candidate paths to evaluate")
    session, assocs = prepare_session(belief, paths, motion, sensor, config)
    jobs = list(zip(paths, assocs))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda pa: evaluate_path(session, pa[0], pa[1], config), jobs))
    else:
        records = [evaluate_path(session, p, a, config) for p, a in jobs]
    return records, dict(session.timings)


def prune(records: Sequence[EvaluationRecord]) -> tuple[tuple[int, ...], tuple[int, ...], float]:
    """Drop every path whose lower bound exceeds the smallest upper bound."""
    if not records:
        raise InfeasibleConfig("nothing to prune")
    threshold = min(r.ub for r in records)
    pruned = tuple(r.path_id for r in records if r.lb > threshold)
    survivors = tuple(r.path_id for r in records if r.lb <= threshold)
    return pruned, survivors, threshold


def select_with_loss(records: Sequence[EvaluationRecord]) -> SelectionResult:
    """Pick the lowest lower bound (smallest id on ties) and report ub - lb as the loss bound."""
    pruned, survivors, threshold = prune(records)
    alive = [r for r in records if r.path_id in set(survivors)]
    chosen = min(alive, key=lambda r: (r.lb, r.path_id))
    loss = max(chosen.ub - chosen.lb, 0.0)
    scale = abs(chosen.exact if chosen.exact is not None else chosen.ub)
    return SelectionResult(chosen.path_id, loss, pruned, survivors, threshold,
                           loss / scale if scale > 0 else math.inf)


def _top_two(records):
    ranked = sorted(records, key=lambda r: (r.lb, r.path_id))
    return ranked[0], ranked[1]


def separated(records: Sequence[EvaluationRecord]) -> bool:
    if len(records) < 2:
        return True
    best, second = _top_two(records)
    return best.ub <= second.lb


def refine_adaptive(records: Sequence[EvaluationRecord], budget: int) -> tuple[list, int]:
    """Ascend one tree level for the two leading candidates until they separate.

    Returns the updated records and the number of refinement steps spent.
    """
    records = list(records)
    steps = 0
    while steps < budget and not separated(records):
        best, second = _top_two(records)
        movable = [r for r in (best, second) if r.level > 0 and r._context is not None]
        if not movable:
            break
        for r in movable:
            level = min(r.level, r._context.max_level) - 1
            interval = r._context.interval(level)
            new = replace(r, interval=interval, level=level,
                          refinement_trace=r.refinement_trace + ((level, interval),))
            records[records.index(r)] = new
        steps += 1
    return records, steps


def plan(belief, paths, config: PlannerConfig, motion, sensor, threads: int = 1):
    """Evaluate, refine within budget, then select. Returns (records, selection, timings, steps)."""
    records, timings = evaluate_candidates(belief, paths, config, motion, sensor, threads)
    steps = 0
    if config.refine_budget:
        t0 = time.perf_counter()
        records, steps = refine_adaptive(records, config.refine_budget)
        timings["refinement"] = time.perf_counter() - t0
    return records, select_with_loss(records), timings, steps


@dataclass(frozen=True)
class SessionLog:
    step: int
    pose: tuple[float, float, float]
    true_pose: tuple[float, float, float]
    n_paths: int
    chosen_id: int
    loss_bound: float
    pruned: int
    refinement_steps: int
    intervals: tuple[tuple[float, float], ...]
    goal_distance: float

    def as_dict(self) -> dict:
        return {
            "step": self.step,
            "pose": list(self.pose),
            "true_pose": list(self.true_pose),
            "n_paths": self.n_paths,
            "chosen_id": self.chosen_id,
            "loss_bound": self.loss_bound,
            "pruned": self.pruned,
            "refinement_steps": self.refinement_steps,
            "intervals": [list(iv) for iv in self.intervals],
            "goal_distance": self.goal_distance,
        }


def replan_loop(world: World, belief: GaussianBelief, start, goal, steps: int, config: PlannerConfig,
                motion: MotionSpec, sensor: SensorSpec, n_paths: int = 20, prm: PRMConfig | None = None,
                seed: int = 0) -> list[SessionLog]:
    """Plan, execute the first action with simulated noise, update, and re-plan ``steps`` times."""
    if steps < 1:
        raise InfeasibleConfig("the re-planning loop needs at least one step")
    rng = np.random.default_rng(seed)
    Lw = cholesky(motion.W)
    Lv = cholesky(sensor.V)
    true_pose = np.asarray(start, dtype=float)
    logs = []
    for k in range(steps):
        est = np.array(belief.value(belief.current_pose.id))
        try:
            paths = prm_generate(world, est, goal, n_paths, seed + 1000 * (k + 1), prm)
        except GoalUnreachable as exc:
            raise GoalUnreachable(f"re-planning step {k}: {exc}") from None
        records, sel, _, refined = plan(belief, paths, config, motion, sensor)
        u = paths[sel.chosen_id].actions[0]
        true_pose = np.asarray(motion.f(true_pose, u), dtype=float) + Lw @ rng.standard_normal(3)
        true_pose[2] = wrap_angle(true_pose[2])
        obs = []
        for j, lm in enumerate(world.landmarks):
            if sensor.sees(true_pose, lm):
                z = range_bearing(true_pose, lm) + Lv @ rng.standard_normal(2)
                z[1] = wrap_angle(z[1])
                obs.append((("l", j), z))
        belief = update_belief(belief, u, obs, motion, sensor)
        est = belief.value(belief.current_pose.id)
        logs.append(SessionLog(
            k, tuple(float(v) for v in est), tuple(float(v) for v in true_pose), len(paths), sel.chosen_id,
            sel.loss_bound, len(sel.pruned_ids), refined,
            tuple((r.lb, r.ub) for r in records),
            float(math.hypot(est[0] - goal[0], est[1] - goal[1])),
        ))
    return logs
