"""
Information-form Gaussian beliefs over a planar SLAM state.

The joint state stacks pose blocks (x, y, theta) and landmark blocks (x, y).
A belief stores the information matrix Lambda = Sigma^-1 together with the
linearization point, so every entropy below is

    H = 0.5 * (N ln(2 pi e) - ln|Lambda|)

and log-determinants always come from a Cholesky factor, never from a raw
determinant product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np
import scipy.linalg as la

from .errors import (
    DimensionMismatch,
    DuplicateVariable,
    MissingCovarianceEntries,
    NotPositiveDefinite,
    UnknownVariable,
)
from .geometry import compose, compose_jacobian

LN_2PIE = math.log(2.0 * math.pi * math.e)

BLOCK_DIM = {"pose": 3, "landmark": 2}


@dataclass(frozen=True)
class VariableIndex:
    id: Hashable
    kind: str
    dim: int
    offset: int

    def __post_init__(self):
        if self.kind not in BLOCK_DIM:
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.dim != BLOCK_DIM[self.kind]:
            raise ValueError(f"{self.kind} blocks have dim {BLOCK_DIM[self.kind]}, got {self.dim}")

    @property
    def cols(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.dim)


def make_index(specs: Iterable, start: int = 0) -> tuple[VariableIndex, ...]:
    """Lay out ``(id, kind)`` pairs contiguously from column ``start``."""
    out = []
    offset = start
    for item in specs:
        vid, kind = (item.id, item.kind) if isinstance(item, VariableIndex) else item
        dim = BLOCK_DIM[kind]
        out.append(VariableIndex(vid, kind, dim, offset))
        offset += dim
    return tuple(out)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """N(mu, Lambda^-1) with a variable layout. Immutable."""

    info: np.ndarray
    mean: np.ndarray
    index: tuple[VariableIndex, ...]
    _lookup: dict = field(init=False, repr=False)

    def __post_init__(self):
        info = np.array(self.info, dtype=float)
        mean = np.array(self.mean, dtype=float).reshape(-1)
        if info.ndim != 2 or info.shape[0] != info.shape[1]:
            raise DimensionMismatch(f"information matrix must be square, got {info.shape}")
        n = info.shape[0]
        if mean.shape[0] != n:
            raise DimensionMismatch(f"mean has length {mean.shape[0]}, state has {n}")
        index = tuple(self.index)
        offset = 0
        lookup = {}
        for v in index:
            if v.offset != offset:
                raise DimensionMismatch(f"variable {v.id!r} at offset {v.offset}, expected {offset}")
            if v.id in lookup:
                raise DuplicateVariable(f"variable {v.id!r} appears twice")
            lookup[v.id] = v
            offset += v.dim
        if offset != n:
            raise DimensionMismatch(f"index covers {offset} columns, state has {n}")
        info = 0.5 * (info + info.T)
        object.__setattr__(self, "info", _readonly(info))
        object.__setattr__(self, "mean", _readonly(mean))
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "_lookup", lookup)

    @property
    def dim(self) -> int:
        return self.info.shape[0]

    def __contains__(self, vid) -> bool:
        return vid in self._lookup

    def variable(self, vid) -> VariableIndex:
        try:
            return self._lookup[vid]
        except KeyError:
            raise UnknownVariable(f"no variable {vid!r} in belief") from None

    def columns(self, ids: Iterable) -> np.ndarray:
        blocks = [self.variable(v).cols for v in ids]
        return np.concatenate(blocks) if blocks else np.zeros(0, dtype=int)

    def value(self, vid) -> np.ndarray:
        v = self.variable(vid)
        return self.mean[v.offset:v.offset + v.dim]

    def poses(self) -> list[VariableIndex]:
        return [v for v in self.index if v.kind == "pose"]

    def landmarks(self) -> list[VariableIndex]:
        return [v for v in self.index if v.kind == "landmark"]

    @property
    def current_pose(self) -> VariableIndex:
        """The most recently added pose."""
        poses = self.poses()
        if not poses:
            raise UnknownVariable("belief holds no pose")
        return poses[-1]


@dataclass(frozen=True, eq=False)
class MotionSpec:
    """x_{k+1} = f(x_k, a_k) + w_k with w_k ~ N(0, W)."""

    W: np.ndarray
    f: Callable = compose
    jacobian: Callable | None = compose_jacobian

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        if W.shape != (3, 3):
            raise DimensionMismatch(f"process noise must be 3x3, got {W.shape}")
        object.__setattr__(self, "W", _readonly(W))

    def G(self, pose, u) -> np.ndarray:
        """d f / d pose at (pose, u); central differences when no Jacobian is supplied."""
        if self.jacobian is not None:
            return np.asarray(self.jacobian(pose, u), dtype=float)
        eps = 1e-6
        G = np.empty((3, 3))
        for j in range(3):
            d = np.zeros(3)
            d[j] = eps
            G[:, j] = (np.asarray(self.f(pose + d, u)) - np.asarray(self.f(pose - d, u))) / (2 * eps)
        return G


def cholesky(M: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises NotPositiveDefinite on failure."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {M.shape}")
    L, info = la.lapack.dpotrf(M, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefinite(f"leading minor of order {info} is not positive definite")
    if info < 0 or not np.all(np.isfinite(np.diagonal(L))):
        raise NotPositiveDefinite("Cholesky factorization failed")
    return L


def chol_logdet(M: np.ndarray, overwrite: bool = False) -> float:
    """ln|M| for symmetric PD ``M`` via Cholesky, reading only the factor's diagonal.

    With ``overwrite`` a C-ordered scratch matrix is factorized in place.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] == 0:
        return 0.0
    # M is symmetric, so its transpose is a Fortran-ordered view of the same matrix
    L, info = la.lapack.dpotrf(M.T, lower=1, clean=0, overwrite_a=int(overwrite))
    if info != 0:
        raise NotPositiveDefinite(f"leading minor of order {info} is not positive definite")
    d = np.diagonal(L)
    if not np.all(np.isfinite(d)) or not np.all(d > 0):
        raise NotPositiveDefinite("non-positive pivot")
    return 2.0 * float(np.sum(np.log(d)))


def logdet_exact(info: np.ndarray) -> float:
    """ln|info| from a Cholesky factorization (the exact reference backend)."""
    return chol_logdet(info)


def entropy_from_logdet(n: int, logdet_info: float) -> float:
    return 0.5 * (n * LN_2PIE - logdet_info)


def entropy(belief: GaussianBelief) -> float:
    """Differential entropy in nats."""
    return entropy_from_logdet(belief.dim, logdet_exact(belief.info))


def augment(belief: GaussianBelief, new_vars: Sequence, values: Sequence | None = None) -> GaussianBelief:
    """Append zero-information blocks for ``new_vars`` with predicted means ``values``.

    The result is generally singular; it only becomes PD once factors touching
    the new blocks are added.
    """
    if not new_vars:
        return belief
    specs = [(v.id, v.kind) if isinstance(v, VariableIndex) else tuple(v) for v in new_vars]
    seen = set()
    for vid, _ in specs:
        if vid in belief or vid in seen:
            raise DuplicateVariable(f"variable {vid!r} already present")
        seen.add(vid)
    new_index = make_index(specs, start=belief.dim)
    extra = sum(v.dim for v in new_index)
    if values is None:
        raise ValueError("augment needs a predicted value for every new variable")
    if len(values) != len(specs):
        raise DimensionMismatch(f"{len(values)} values for {len(specs)} variables")
    tail = []
    for v, val in zip(new_index, values):
        val = np.asarray(val, dtype=float).reshape(-1)
        if val.shape[0] != v.dim:
            raise DimensionMismatch(f"value for {v.id!r} has length {val.shape[0]}, expected {v.dim}")
        tail.append(val)
    n = belief.dim
    info = np.zeros((n + extra, n + extra))
    info[:n, :n] = belief.info
    mean = np.concatenate([belief.mean] + tail)
    return GaussianBelief(info, mean, belief.index + new_index)


def default_pose_ids(belief: GaussianBelief, count: int) -> list:
    """Pose ids ``("x", k)`` continuing the belief's pose numbering."""
    k = len(belief.poses())
    return [("x", k + j) for j in range(count)]


def propagate(belief: GaussianBelief, actions, motion: MotionSpec, new_ids: Sequence | None = None) -> GaussianBelief:
    """Append one pose per action and add the motion information F^T W^-1 F.

    Returns Lambda^{Aug-}: the propagated belief before any measurement.
    Zero actions return ``belief`` unchanged.
    """
    actions = np.asarray(actions, dtype=float).reshape(-1, 3) if len(actions) else np.zeros((0, 3))
    if actions.shape[0] == 0:
        return belief
    try:
        W_inv = la.cho_solve((cholesky(motion.W), True), np.eye(3))
    except NotPositiveDefinite:
        raise NotPositiveDefinite("process noise covariance W is not positive definite") from None
    ids = list(new_ids) if new_ids is not None else default_pose_ids(belief, len(actions))
    if len(ids) != len(actions):
        raise DimensionMismatch(f"{len(ids)} pose ids for {len(actions)} actions")

    prev = belief.current_pose
    pose = np.array(belief.value(prev.id))
    values = []
    jacobians = []
    for u in actions:
        jacobians.append(motion.G(pose, u))
        pose = np.asarray(motion.f(pose, u), dtype=float)
        values.append(pose)
    out = augment(belief, [(vid, "pose") for vid in ids], values)

    info = np.array(out.info)
    p = prev.offset
    for j, G in enumerate(jacobians):
        q = out.variable(ids[j]).offset
        GtW = G.T @ W_inv
        info[p:p + 3, p:p + 3] += GtW @ G
        info[p:p + 3, q:q + 3] -= GtW
        info[q:q + 3, p:p + 3] -= GtW.T
        info[q:q + 3, q:q + 3] += W_inv
        p = q
    return GaussianBelief(info, out.mean, out.index)


def propagated_logdet(prior_logdet: float, motion: MotionSpec, steps: int) -> float:
    """ln|Lambda^{Aug-}| after ``steps`` motion factors.

    Each appended pose is x_new = f(x_prev) + w with unit Jacobian in x_new, so
    the determinant picks up exactly |W|^-1 per step.
    """
    return prior_logdet - steps * logdet_exact(motion.W)


@dataclass(frozen=True, eq=False)
class CovarianceTable:
    """Joint covariance restricted to a subset of variables.

    ``matrix`` is ordered by the blocks in ``variables``; each variable keeps
    its column offset in the full state so rows of a Jacobian can be mapped
    onto table positions.
    """

    variables: tuple[VariableIndex, ...]
    matrix: np.ndarray
    _pos: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        variables = tuple(self.variables)
        size = sum(v.dim for v in variables)
        M = np.array(self.matrix, dtype=float).reshape(size, size)
        top = max((v.offset + v.dim for v in variables), default=0)
        pos = np.full(top, -1, dtype=np.int64)
        k = 0
        for v in variables:
            pos[v.offset:v.offset + v.dim] = np.arange(k, k + v.dim)
            k += v.dim
        object.__setattr__(self, "variables", variables)
        object.__setattr__(self, "matrix", _readonly(M))
        object.__setattr__(self, "_pos", _readonly(pos))

    def __len__(self):
        return len(self.variables)

    def covers(self, cols: np.ndarray) -> bool:
        cols = np.asarray(cols, dtype=np.int64)
        return bool(np.all(cols < self._pos.shape[0]) and np.all(self._pos[cols] >= 0)) if cols.size else True

    def positions(self, cols: np.ndarray) -> np.ndarray:
        """Table row/column index of each state column."""
        cols = np.asarray(cols, dtype=np.int64)
        if not self.covers(cols):
            raise MissingCovarianceEntries("covariance table lacks entries for some involved columns")
        return self._pos[cols]

    def lookup(self, cols: np.ndarray) -> np.ndarray:
        """Sigma[cols, cols] for state columns ``cols``."""
        cols = np.asarray(cols, dtype=np.int64)
        if not self.covers(cols):
            raise MissingCovarianceEntries("covariance table lacks entries for some involved columns")
        p = self._pos[cols]
        return self.matrix[np.ix_(p, p)]

    def block(self, ids: Iterable) -> np.ndarray:
        by_id = {v.id: v for v in self.variables}
        try:
            cols = np.concatenate([by_id[i].cols for i in ids]) if ids else np.zeros(0, dtype=int)
        except KeyError as exc:
            raise UnknownVariable(f"no variable {exc.args[0]!r} in table") from None
        return self.lookup(cols)


def recover_covariance_entries(belief: GaussianBelief, vars: Iterable) -> CovarianceTable:
    """Marginal covariance of ``vars`` by solving Lambda X = E for their unit columns."""
    ids = [v.id if isinstance(v, VariableIndex) else v for v in vars]
    chosen = [belief.variable(i) for i in ids]
    if not chosen:
        return CovarianceTable((), np.zeros((0, 0)))
    chosen.sort(key=lambda v: v.offset)
    cols = np.concatenate([v.cols for v in chosen])
    L = cholesky(belief.info)
    E = np.zeros((belief.dim, cols.size))
    E[cols, np.arange(cols.size)] = 1.0
    X = la.cho_solve((L, True), E, check_finite=False)
    S = X[cols]
    return CovarianceTable(tuple(chosen), 0.5 * (S + S.T))


def propagate_covariance(table: CovarianceTable, belief: GaussianBelief, actions, motion: MotionSpec,
                         new_ids: Sequence | None = None) -> CovarianceTable:
    """Extend ``table`` with the poses that :func:`propagate` would append.

    Uses the linear chain dx_j = G_j dx_{j-1} + w_j, which reproduces the
    covariance of Lambda^{Aug-} exactly for the tabulated variables. The table
    must contain the belief's current pose.
    """
    actions = np.asarray(actions, dtype=float).reshape(-1, 3) if len(actions) else np.zeros((0, 3))
    if actions.shape[0] == 0:
        return table
    ids = list(new_ids) if new_ids is not None else default_pose_ids(belief, len(actions))
    cur = belief.current_pose
    order = {v.id: k for k, v in enumerate(table.variables)}
    if cur.id not in order:
        raise MissingCovarianceEntries(f"table lacks the current pose {cur.id!r}")
    n0 = table.matrix.shape[0]
    total = n0 + 3 * len(actions)
    M = np.zeros((total, total))
    M[:n0, :n0] = table.matrix
    start = 0
    for v in table.variables:
        if v.id == cur.id:
            break
        start += v.dim
    p = start
    pose = np.array(belief.value(cur.id))
    offset = belief.dim
    new_vars = []
    n = n0
    for j, u in enumerate(actions):
        G = motion.G(pose, u)
        pose = np.asarray(motion.f(pose, u), dtype=float)
        C = M[:n, p:p + 3] @ G.T
        M[:n, n:n + 3] = C
        M[n:n + 3, :n] = C.T
        M[n:n + 3, n:n + 3] = G @ M[p:p + 3, p:p + 3] @ G.T + motion.W
        new_vars.append(VariableIndex(ids[j], "pose", 3, offset + 3 * j))
        p = n
        n += 3
    return CovarianceTable(table.variables + tuple(new_vars), M)
