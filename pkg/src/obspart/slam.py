"""
Planar active-SLAM scenario: world, range-bearing sensor, prior mapping and
collective-Jacobian assembly for candidate paths.

Pose ids are ``("x", k)`` and landmark ids ``("l", j)`` where ``j`` indexes
``World.landmarks``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import networkx as nx
import numpy as np
import scipy.linalg as la
from scipy import sparse
from scipy.spatial import cKDTree
from shapely.geometry import LineString, Point, Polygon
from shapely.ops import unary_union
from shapely.prepared import prep

from .bounds import CollectiveJacobian
from .errors import (
    DimensionMismatch,
    GoalUnreachable,
    InconsistentAssociation,
    InfeasibleConfig,
    NotPositiveDefinite,
)
from .gaussian import (
    GaussianBelief,
    MotionSpec,
    augment,
    cholesky,
    default_pose_ids,
    make_index,
    propagate,
)
from .geometry import (
    between,
    compose,
    invert_range_bearing,
    range_bearing,
    range_bearing_jacobians,
    wrap_angle,
)


def landmark_id(j: int):
    return ("l", int(j))


def pose_id(k: int):
    return ("x", int(k))


# --------------------------------------------------------------------------- world


@dataclass(frozen=True)
class WorldConfig:
    bounds: tuple[float, float, float, float] = (0.0, 0.0, 100.0, 100.0)
    n_landmarks: int = 100
    obstacles: tuple = ()
    margin: float = 0.0


@dataclass(frozen=True, eq=False)
class World:
    landmarks: np.ndarray
    obstacles: tuple
    bounds: tuple[float, float, float, float]
    seed: int
    _blocked: object = field(init=False, repr=False, default=None)

    def __post_init__(self):
        lm = np.array(self.landmarks, dtype=float).reshape(-1, 2)
        lm.setflags(write=False)
        object.__setattr__(self, "landmarks", lm)
        polys = tuple(Polygon(p) if not isinstance(p, Polygon) else p for p in self.obstacles)
        object.__setattr__(self, "obstacles", polys)
        object.__setattr__(self, "_blocked", prep(unary_union(polys)) if polys else None)

    def inside(self, p) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= p[0] <= x1 and y0 <= p[1] <= y1

    def point_free(self, p) -> bool:
        if not self.inside(p):
            return False
        return self._blocked is None or not self._blocked.intersects(Point(p[0], p[1]))

    def segment_free(self, a, b) -> bool:
        if self._blocked is None:
            return True
        return not self._blocked.intersects(LineString([(a[0], a[1]), (b[0], b[1])]))


def generate_world(config: WorldConfig, seed: int) -> World:
    """Landmarks uniform over the free part of the bounds; deterministic in ``seed``."""
    x0, y0, x1, y1 = config.bounds
    if not (x1 > x0 and y1 > y0):
        raise InfeasibleConfig(f"degenerate world bounds {config.bounds}")
    polys = tuple(Polygon(p) for p in config.obstacles)
    bbox = Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
    for poly in polys:
        if not poly.is_valid or not bbox.buffer(1e-9).contains(poly):
            raise InfeasibleConfig("obstacles must be valid polygons inside the world bounds")
    world = World(np.zeros((0, 2)), polys, tuple(config.bounds), seed)
    rng = np.random.default_rng(seed)
    out = []
    tries = 0
    while len(out) < config.n_landmarks:
        tries += 1
        if tries > 1000 * max(config.n_landmarks, 1):
            raise InfeasibleConfig("could not place landmarks outside obstacles")
        p = rng.uniform((x0 + config.margin, y0 + config.margin), (x1 - config.margin, y1 - config.margin))
        if world.point_free(p):
            out.append(p)
    return World(np.array(out).reshape(-1, 2), polys, tuple(config.bounds), seed)


# --------------------------------------------------------------------------- sensor


@dataclass(frozen=True, eq=False)
class SensorSpec:
    max_range: float = 15.0
    fov: float = 2.0 * math.pi
    V: np.ndarray = field(default_factory=lambda: np.diag([0.1 ** 2, math.radians(1.0) ** 2]))

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        if V.shape != (2, 2):
            raise DimensionMismatch(f"measurement noise must be 2x2, got {V.shape}")
        V.setflags(write=False)
        object.__setattr__(self, "V", V)

    @property
    def whitener(self) -> np.ndarray:
        """V^{-1/2} as the inverse Cholesky factor: (L^-1 H)^T (L^-1 H) = H^T V^-1 H."""
        return la.solve_triangular(cholesky(self.V), np.eye(2), lower=True)

    def sees(self, pose, landmark) -> bool:
        z = range_bearing(pose, landmark)
        if z[0] > self.max_range or z[0] <= 1e-9:
            return False
        return self.fov >= 2.0 * math.pi or abs(z[1]) <= 0.5 * self.fov


# --------------------------------------------------------------------------- prior mapping


@dataclass(frozen=True)
class OdometryFactor:
    i: int
    j: int
    u: np.ndarray


@dataclass(frozen=True)
class LandmarkFactor:
    i: int
    landmark: int
    z: np.ndarray


@dataclass(eq=False)
class FactorGraph:
    """Prior, odometry and range-bearing factors of a mapping session."""

    prior_pose: np.ndarray
    prior_cov: np.ndarray
    motion: MotionSpec
    sensor: SensorSpec
    odometry: list = field(default_factory=list)
    observations: list = field(default_factory=list)

    @property
    def n_poses(self) -> int:
        return 1 + len(self.odometry)

    @property
    def n_factors(self) -> int:
        return 1 + len(self.odometry) + len(self.observations)

    def landmark_order(self) -> list[int]:
        seen: dict[int, None] = {}
        for f in self.observations:
            seen.setdefault(f.landmark, None)
        return list(seen)

    def landmarks_per_pose(self) -> float:
        return len(self.observations) / self.n_poses

    def pruned(self, keep_fraction: float, seed: int) -> "FactorGraph":
        """Drop measurement factors at random, keeping each landmark's first observation."""
        if not 0.0 < keep_fraction <= 1.0:
            raise ValueError("keep_fraction must lie in (0, 1]")
        rng = np.random.default_rng(seed)
        first = {}
        for idx, f in enumerate(self.observations):
            first.setdefault(f.landmark, idx)
        keep_first = set(first.values())
        draws = rng.random(len(self.observations))
        kept = [f for idx, f in enumerate(self.observations) if idx in keep_first or draws[idx] < keep_fraction]
        return FactorGraph(self.prior_pose, self.prior_cov, self.motion, self.sensor,
                           list(self.odometry), kept)

    def _initial(self) -> tuple[np.ndarray, list[int]]:
        poses = [np.array(self.prior_pose, dtype=float)]
        for f in self.odometry:
            poses.append(compose(poses[f.i], f.u))
        lms = {}
        for f in self.observations:
            if f.landmark not in lms:
                lms[f.landmark] = invert_range_bearing(poses[f.i], f.z)
        order = self.landmark_order()
        x = np.concatenate(poses + [lms[j] for j in order])
        return x, order

    def solve(self, iterations: int = 20, tol: float = 1e-10) -> GaussianBelief:
        """Gauss-Newton MAP estimate; the information matrix is J^T J at the solution."""
        x, order = self._initial()
        n_p = self.n_poses
        lm_col = {j: 3 * n_p + 2 * k for k, j in enumerate(order)}
        for _ in range(iterations):
            J, r = self.linearize(x, lm_col)
            info = (J.T @ J).toarray()
            try:
                step = la.cho_solve((cholesky(info), True), -(J.T @ r), check_finite=False)
            except NotPositiveDefinite:
                raise NotPositiveDefinite("prior mapping problem is under-constrained") from None
            x = x + step
            x[2:3 * n_p:3] = wrap_angle(x[2:3 * n_p:3])
            if np.max(np.abs(step)) < tol:
                break
        J, _ = self.linearize(x, lm_col)
        index = make_index([(pose_id(k), "pose") for k in range(n_p)]
                           + [(landmark_id(j), "landmark") for j in order])
        return GaussianBelief((J.T @ J).toarray(), x, index)

    def linearize(self, x, lm_col: dict) -> tuple[sparse.csr_matrix, np.ndarray]:
        """Whitened Jacobian and residual of every factor at ``x``.

        ``lm_col`` maps a landmark index to its first state column; poses
        occupy columns ``3k .. 3k+2``.
        """
        Lp = la.solve_triangular(cholesky(self.prior_cov), np.eye(3), lower=True)
        Lw = la.solve_triangular(cholesky(self.motion.W), np.eye(3), lower=True)
        Lv = self.sensor.whitener
        blocks = []  # (row0, cols, block) triplets
        res = []
        row = 0

        def put(cols, block):
            blocks.append((row, cols, block))

        r = x[:3] - self.prior_pose
        r[2] = wrap_angle(r[2])
        put(np.arange(3), Lp)
        res.append(Lp @ r)
        row += 3
        for f in self.odometry:
            ci, cj = np.arange(3 * f.i, 3 * f.i + 3), np.arange(3 * f.j, 3 * f.j + 3)
            xi = x[ci]
            r = compose(xi, f.u) - x[cj]
            r[2] = wrap_angle(r[2])
            put(ci, Lw @ self.motion.G(xi, f.u))
            put(cj, -Lw)
            res.append(Lw @ r)
            row += 3
        for f in self.observations:
            ci = np.arange(3 * f.i, 3 * f.i + 3)
            cl = np.arange(lm_col[f.landmark], lm_col[f.landmark] + 2)
            pose, lm = x[ci], x[cl]
            r = range_bearing(pose, lm) - f.z
            r[1] = wrap_angle(r[1])
            Hp, Hl = range_bearing_jacobians(pose, lm)
            put(ci, Lv @ Hp)
            put(cl, Lv @ Hl)
            res.append(Lv @ r)
            row += 2
        rows = np.concatenate([np.repeat(np.arange(r0, r0 + b.shape[0]), b.shape[1]) for r0, _, b in blocks])
        cols = np.concatenate([np.tile(c, b.shape[0]) for _, c, b in blocks])
        vals = np.concatenate([b.ravel() for _, _, b in blocks])
        J = sparse.csr_matrix((vals, (rows, cols)), shape=(row, x.size))
        return J, np.concatenate(res)

    def information_at(self, belief: GaussianBelief) -> sparse.csr_matrix:
        """Re-linearize every factor at the belief's mean and return J^T J.

        ``belief`` must use this graph's layout (poses first, as :meth:`solve` builds it).
        """
        poses = belief.poses()
        if len(poses) < self.n_poses or any(v.offset != 3 * k for k, v in enumerate(poses[:self.n_poses])):
            raise DimensionMismatch("belief layout does not match the factor graph")
        lm_col = {v.id[1]: v.offset for v in belief.landmarks()}
        J, _ = self.linearize(np.asarray(belief.mean), lm_col)
        return (J.T @ J).tocsr()


def make_trajectory(kind: str, bounds, n_poses: int, waypoints=None) -> np.ndarray:
    """Ground-truth poses for the mapping run: ``line``, ``loop``, ``lawnmower`` or ``waypoints``."""
    if n_poses < 1:
        raise InfeasibleConfig("a trajectory needs at least one pose")
    x0, y0, x1, y1 = bounds
    w, h = x1 - x0, y1 - y0
    if kind == "line":
        pts = [(x0 + 0.1 * w, y0 + 0.5 * h), (x0 + 0.9 * w, y0 + 0.5 * h)]
    elif kind == "loop":
        a, b, c, d = x0 + 0.2 * w, y0 + 0.2 * h, x0 + 0.8 * w, y0 + 0.8 * h
        pts = [(a, b), (c, b), (c, d), (a, d), (a, b)]
    elif kind == "lawnmower":
        rows = 4
        pts = []
        for k in range(rows):
            y = y0 + h * (0.15 + 0.7 * k / (rows - 1))
            xs = (x0 + 0.1 * w, x0 + 0.9 * w)
            pts.extend([(xs[0], y), (xs[1], y)] if k % 2 == 0 else [(xs[1], y), (xs[0], y)])
    elif kind == "waypoints":
        if waypoints is None or len(waypoints) < 2:
            raise InfeasibleConfig("waypoint trajectory needs at least two points")
        pts = [tuple(p[:2]) for p in waypoints]
    else:
        raise InfeasibleConfig(f"unknown trajectory kind {kind!r}")
    pts = np.asarray(pts, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.linspace(0.0, cum[-1], n_poses)
    xy = np.column_stack([np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1])])
    heading = np.empty(n_poses)
    for k in range(n_poses):
        k_seg = min(np.searchsorted(cum, s[k], side="right") - 1, len(seg) - 1)
        d = pts[k_seg + 1] - pts[k_seg]
        heading[k] = math.atan2(d[1], d[0])
    return np.column_stack([xy, heading])


def simulate_mapping(world: World, trajectory, motion: MotionSpec, sensor: SensorSpec, seed: int,
                     prior_cov=None) -> FactorGraph:
    """Noisy odometry and landmark measurements along a ground-truth trajectory."""
    traj = np.asarray(trajectory, dtype=float).reshape(-1, 3)
    for p in traj:
        if not world.inside(p):
            raise InfeasibleConfig(f"trajectory pose {p[:2]} lies outside the world")
    rng = np.random.default_rng(seed)
    prior_cov = np.diag([1e-4, 1e-4, 1e-6]) if prior_cov is None else np.asarray(prior_cov, dtype=float)
    Lw = cholesky(motion.W)
    Lv = cholesky(sensor.V)
    graph = FactorGraph(traj[0].copy(), prior_cov, motion, sensor)
    for k, pose in enumerate(traj):
        if k > 0:
            u = between(traj[k - 1], pose) + Lw @ rng.standard_normal(3)
            graph.odometry.append(OdometryFactor(k - 1, k, u))
        for j, lm in enumerate(world.landmarks):
            if sensor.sees(pose, lm):
                z = range_bearing(pose, lm) + Lv @ rng.standard_normal(2)
                z[1] = wrap_angle(z[1])
                graph.observations.append(LandmarkFactor(k, j, z))
    return graph


def prior_mapping(world: World, trajectory, motion: MotionSpec, sensor: SensorSpec, seed: int,
                  prior_cov=None, keep_fraction: float = 1.0) -> GaussianBelief:
    """Prior belief over past poses and observed landmarks after a mapping run."""
    graph = simulate_mapping(world, trajectory, motion, sensor, seed, prior_cov)
    if keep_fraction < 1.0:
        graph = graph.pruned(keep_fraction, seed + 1)
    return graph.solve()


# --------------------------------------------------------------------------- planning


@dataclass(frozen=True, eq=False)
class CandidatePath:
    waypoints: np.ndarray
    actions: np.ndarray
    length: float
    path_id: int = 0

    @property
    def n_actions(self) -> int:
        return self.actions.shape[0]


def path_from_points(points, start_pose, path_id: int = 0) -> CandidatePath:
    """Poses at each point, heading along the incoming edge; one action per edge."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    poses = [np.asarray(start_pose, dtype=float)]
    for k in range(1, len(pts)):
        d = pts[k] - pts[k - 1]
        poses.append(np.array([pts[k, 0], pts[k, 1], math.atan2(d[1], d[0])]))
    poses = np.array(poses)
    actions = np.array([between(poses[k], poses[k + 1]) for k in range(len(poses) - 1)]).reshape(-1, 3)
    length = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    return CandidatePath(poses, actions, length, path_id)


@dataclass(frozen=True)
class DataAssociation:
    """Landmark ids observed at each look-ahead step."""

    per_step: tuple[tuple, ...]

    @property
    def n_measurements(self) -> int:
        return sum(len(s) for s in self.per_step)

    def beta(self, belief: GaussianBelief, step: int) -> np.ndarray:
        """Binary indicator over the belief's columns for one step."""
        out = np.zeros(belief.dim, dtype=np.int8)
        out[belief.columns(self.per_step[step])] = 1
        return out


def predicted_poses(belief: GaussianBelief, path: CandidatePath) -> np.ndarray:
    pose = np.array(belief.value(belief.current_pose.id))
    out = []
    for u in path.actions:
        pose = compose(pose, u)
        out.append(pose)
    return np.array(out).reshape(-1, 3)


def predict_associations(belief: GaussianBelief, path: CandidatePath, sensor: SensorSpec) -> DataAssociation:
    """Mapped landmarks within range and field of view of each ML-predicted pose."""
    lms = belief.landmarks()
    positions = np.array([belief.value(v.id) for v in lms]).reshape(-1, 2)
    steps = []
    for pose in predicted_poses(belief, path):
        if not lms:
            steps.append(())
            continue
        d = np.hypot(positions[:, 0] - pose[0], positions[:, 1] - pose[1])
        near = np.flatnonzero((d <= sensor.max_range) & (d > 1e-9))
        steps.append(tuple(lms[i].id for i in near if sensor.sees(pose, positions[i])))
    return DataAssociation(tuple(steps))


def build_collective_jacobian(belief: GaussianBelief, path: CandidatePath, assoc: DataAssociation,
                              motion: MotionSpec, sensor: SensorSpec):
    """Return (Lambda^{Aug-}, A) for a candidate path under ML observations.

    Rows are whitened range-bearing Jacobians, two per (step, landmark)
    component, linearized at the propagated means.
    """
    if len(assoc.per_step) != path.n_actions:
        raise DimensionMismatch(f"association covers {len(assoc.per_step)} steps, path has {path.n_actions}")
    ids = default_pose_ids(belief, path.n_actions)
    prop = propagate(belief, path.actions, motion, ids)
    Wh = sensor.whitener
    blocks = []
    labels = []
    involved = []
    for step, lids in enumerate(assoc.per_step):
        pv = prop.variable(ids[step])
        pose = prop.value(pv.id)
        for lid in lids:
            if lid not in belief:
                raise InconsistentAssociation(f"landmark {lid!r} is not in the belief")
            lv = prop.variable(lid)
            Hp, Hl = range_bearing_jacobians(pose, prop.value(lid))
            rows = np.zeros((2, prop.dim))
            rows[:, pv.offset:pv.offset + 3] = Wh @ Hp
            rows[:, lv.offset:lv.offset + 2] = Wh @ Hl
            blocks.append(rows)
            labels.append((step, lid))
            involved.append((pv.id, lid))
    A = np.vstack(blocks) if blocks else np.zeros((0, prop.dim))
    groups = np.repeat(np.arange(len(labels)), 2)
    jac = CollectiveJacobian(A, groups, n_old=prop.dim, n_components=len(labels),
                             labels=tuple(labels), involved=tuple(involved))
    return prop, jac


def update_belief(belief: GaussianBelief, u_meas, observations: Sequence[tuple], motion: MotionSpec,
                  sensor: SensorSpec) -> GaussianBelief:
    """Add one odometry step and its landmark measurements, then take one Gauss-Newton step.

    ``observations`` holds ``(landmark_id, z)`` pairs; unseen landmarks are
    initialized by inverting their first measurement.
    """
    prop = propagate(belief, [u_meas], motion)
    pv = prop.current_pose
    pose = np.array(prop.value(pv.id))
    new = [(lid, z) for lid, z in observations if lid not in prop]
    prop = augment(prop, [(lid, "landmark") for lid, _ in new],
                   [invert_range_bearing(pose, z) for _, z in new])
    info = np.array(prop.info)
    grad = np.zeros(prop.dim)
    Wh = sensor.whitener
    for lid, z in observations:
        lv = prop.variable(lid)
        lm = prop.value(lid)
        r = range_bearing(pose, lm) - z
        r[1] = wrap_angle(r[1])
        Hp, Hl = range_bearing_jacobians(pose, lm)
        J = np.zeros((2, prop.dim))
        J[:, pv.offset:pv.offset + 3] = Wh @ Hp
        J[:, lv.offset:lv.offset + 2] = Wh @ Hl
        info += J.T @ J
        grad += J.T @ (Wh @ r)
    step = la.cho_solve((cholesky(info), True), -grad, check_finite=False)
    mean = prop.mean + step
    for v in prop.poses():
        mean[v.offset + 2] = wrap_angle(mean[v.offset + 2])
    return GaussianBelief(info, mean, prop.index)


# --------------------------------------------------------------------------- roadmap


@dataclass(frozen=True)
class PRMConfig:
    samples: int = 500
    radius: float | None = None
    k_nearest: int = 10


def default_radius(world: World) -> float:
    """Twice the mean nearest-neighbour landmark spacing (a fifth of the diagonal without landmarks)."""
    lm = world.landmarks
    if lm.shape[0] >= 2:
        d, _ = cKDTree(lm).query(lm, k=2)
        return 2.0 * float(np.mean(d[:, 1]))
    x0, y0, x1, y1 = world.bounds
    return 0.2 * math.hypot(x1 - x0, y1 - y0)


def build_roadmap(world: World, start, goal, config: PRMConfig, seed: int) -> tuple[nx.Graph, np.ndarray]:
    """Roadmap over uniform free-space samples; node 0 is ``start`` and node 1 is ``goal``."""
    start = np.asarray(start, dtype=float)[:2]
    goal = np.asarray(goal, dtype=float)[:2]
    for name, p in (("start", start), ("goal", goal)):
        if not world.point_free(p):
            raise InfeasibleConfig(f"{name} {p.tolist()} is not collision-free")
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = world.bounds
    pts = [start, goal]
    tries = 0
    while len(pts) < config.samples + 2:
        tries += 1
        if tries > 1000 * max(config.samples, 1):
            raise InfeasibleConfig("free space too small to place roadmap samples")
        p = rng.uniform((x0, y0), (x1, y1))
        if world.point_free(p):
            pts.append(p)
    pts = np.array(pts)
    radius = default_radius(world) if config.radius is None else float(config.radius)
    k = min(config.k_nearest + 1, len(pts))
    dist, nbr = cKDTree(pts).query(pts, k=k, distance_upper_bound=radius)
    graph = nx.Graph()
    graph.add_nodes_from(range(len(pts)))
    for i in range(len(pts)):
        for d, j in zip(dist[i, 1:], nbr[i, 1:]):
            if not np.isfinite(d) or graph.has_edge(i, j):
                continue
            if world.segment_free(pts[i], pts[j]):
                graph.add_edge(i, int(j), weight=float(d))
    return graph, pts


def prm_generate(world: World, start, goal, count: int, seed: int,
                 config: PRMConfig | None = None) -> list[CandidatePath]:
    """The ``count`` shortest loop-free start-to-goal roadmap paths (fewer if the roadmap has fewer)."""
    config = config or PRMConfig()
    start = np.asarray(start, dtype=float)
    start_pose = start if start.shape[0] == 3 else np.array([start[0], start[1], 0.0])
    graph, pts = build_roadmap(world, start_pose, goal, config, seed)
    if not nx.has_path(graph, 0, 1):
        raise GoalUnreachable("goal is not connected to the start in the roadmap")
    out = []
    for pid, nodes in enumerate(nx.shortest_simple_paths(graph, 0, 1, weight="weight")):
        if pid >= count:
            break
        out.append(path_from_points(pts[nodes], start_pose, pid))
    return out
