"""
Upper and lower bounds on the expected conditional entropy H(X | Z).

Any context exposing ``prior_entropy`` and ``cond_entropy(members)`` can be
bounded: a Gaussian model (posterior form via log-determinants) or the
discrete brute-force model in :mod:`obspart.discrete`.

For a node set ``s`` and a disjoint cover ``c_1..c_p`` of Z:

    UB = H(X | Z^s)
    LB = sum_i H(X | Z^{c_i}) - (p - 1) H(X)

The two-set LB is the g-operator g(Z^s, Z^sbar) = H(X|Z^s) + H(X|Z^sbar) - H(X).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.linalg as la
from scipy import sparse

from .errors import (
    DimensionMismatch,
    InconsistentAssociation,
    InvalidCover,
    MissingCovarianceEntries,
    NotPositiveDefinite,
    OverlappingSets,
    RankDeficientNew,
)
from .gaussian import (
    CovarianceTable,
    GaussianBelief,
    chol_logdet,
    cholesky,
    entropy_from_logdet,
    logdet_exact,
)
from .partition import LowerSelection, UpperSelection

SANDWICH_TOL = 1e-9
BACKENDS = ("dense", "ramdl")


@dataclass(frozen=True)
class BoundsInterval:
    lb: float
    ub: float
    selection: str = ""

    def __post_init__(self):
        if not self.lb <= self.ub + SANDWICH_TOL:
            raise ValueError(f"lower bound {self.lb!r} exceeds upper bound {self.ub!r}")

    @property
    def width(self) -> float:
        return self.ub - self.lb

    def contains(self, value: float, tol: float = SANDWICH_TOL) -> bool:
        return self.lb - tol <= value <= self.ub + tol

    def shifted(self, delta: float) -> "BoundsInterval":
        return BoundsInterval(self.lb + delta, self.ub + delta, self.selection)


@dataclass(frozen=True, eq=False)
class CollectiveJacobian:
    """Whitened measurement rows over the augmented state.

    Columns ``[0, n_old)`` carry information in the conditioning prior; the
    remaining columns are zero-information additions. ``row_groups[r]`` is the
    measurement component owning row ``r``. ``labels`` and ``involved`` are
    optional per-component metadata (e.g. ``(step, landmark)`` and the variable
    ids each component touches).
    """

    rows: np.ndarray
    row_groups: np.ndarray
    n_old: int | None = None
    n_components: int | None = None
    labels: tuple = ()
    involved: tuple = ()

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim != 2:
            raise DimensionMismatch(f"Jacobian must be 2-D, got shape {rows.shape}")
        groups = np.array(self.row_groups, dtype=np.int64).reshape(-1)
        if groups.shape[0] != rows.shape[0]:
            raise DimensionMismatch(f"{groups.shape[0]} row labels for {rows.shape[0]} rows")
        n_old = rows.shape[1] if self.n_old is None else int(self.n_old)
        if not 0 <= n_old <= rows.shape[1]:
            raise DimensionMismatch(f"old/new split {n_old} outside [0, {rows.shape[1]}]")
        if self.n_components is not None:
            n_comp = int(self.n_components)
        elif self.labels:
            n_comp = len(self.labels)
        else:
            n_comp = int(groups.max()) + 1 if groups.size else 0
        if groups.size and (groups.min() < 0 or groups.max() >= n_comp):
            raise DimensionMismatch("row label outside the component range")
        rows.setflags(write=False)
        groups.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "row_groups", groups)
        object.__setattr__(self, "n_old", n_old)
        object.__setattr__(self, "n_components", n_comp)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "involved", tuple(self.involved))

    @classmethod
    def one_row_per_component(cls, rows, n_old=None) -> "CollectiveJacobian":
        rows = np.asarray(rows, dtype=float)
        return cls(rows, np.arange(rows.shape[0]), n_old=n_old)

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def n_cols(self) -> int:
        return self.rows.shape[1]

    @property
    def old(self) -> np.ndarray:
        return self.rows[:, :self.n_old]

    @property
    def new(self) -> np.ndarray:
        return self.rows[:, self.n_old:]

    def row_mask(self, members: Iterable[int]) -> np.ndarray:
        idx = np.fromiter(members, dtype=np.int64)
        chosen = np.zeros(self.n_components, dtype=bool)
        chosen[idx[(idx >= 0) & (idx < self.n_components)]] = True
        return chosen[self.row_groups]

    def subset(self, members: Iterable[int]) -> np.ndarray:
        """Rows owned by the given components."""
        return self.rows[self.row_mask(members)]

    @cached_property
    def csr(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(self.rows)

    def subset_sparse(self, members: Iterable[int]) -> sparse.csr_matrix:
        return csr_rows(self.csr, np.flatnonzero(self.row_mask(members)))

    def restricted(self, n_cols: int, max_component: int | None = None) -> "CollectiveJacobian":
        """Leading ``n_cols`` columns, optionally dropping components past ``max_component``."""
        keep = np.ones(self.n_rows, dtype=bool)
        if max_component is not None:
            keep = self.row_groups <= max_component
        rows = self.rows[keep][:, :n_cols]
        if np.any(self.rows[keep][:, n_cols:]):
            raise DimensionMismatch("kept rows touch columns beyond the restriction")
        return CollectiveJacobian(rows, self.row_groups[keep], n_old=min(self.n_old, n_cols),
                                  n_components=self.n_components, labels=self.labels,
                                  involved=self.involved)


def csr_rows(A: sparse.csr_matrix, rows: np.ndarray) -> sparse.csr_matrix:
    """Row selection without scipy's general fancy-indexing machinery."""
    starts = A.indptr[rows]
    counts = A.indptr[rows + 1] - starts
    indptr = np.zeros(rows.size + 1, dtype=A.indptr.dtype)
    np.cumsum(counts, out=indptr[1:])
    take = np.repeat(starts - indptr[:-1], counts) + np.arange(indptr[-1])
    return sparse.csr_matrix((A.data[take], A.indices[take], indptr), shape=(rows.size, A.shape[1]))


def _table_rows(cov: CovarianceTable, old: sparse.csr_matrix):
    """Rows re-indexed to covariance-table coordinates, plus the matching Sigma.

    Sigma is gathered only when the rows touch a small part of the table.
    """
    pos = cov.positions(old.indices)
    k = cov.matrix.shape[0]
    hit = np.zeros(k, dtype=bool)
    hit[pos] = True
    n_used = int(np.count_nonzero(hit))
    if 2 * n_used >= k:
        Sigma = cov.matrix
    else:
        used = np.flatnonzero(hit)
        remap = np.cumsum(hit) - 1
        Sigma = cov.matrix.take(used, axis=0).take(used, axis=1)
        pos, k = remap[pos], n_used
    return sparse.csr_matrix((old.data, pos, old.indptr), shape=(old.shape[0], k)), Sigma


def _delta_logdet(A_c, T) -> float:
    """ln|I + A_c Sigma A_c^T| given T = A_c Sigma."""
    delta = A_c @ T.T
    delta.flat[::A_c.shape[0] + 1] += 1.0
    try:
        return chol_logdet(delta, overwrite=True)
    except NotPositiveDefinite:
        raise NotPositiveDefinite("Delta = I + A_old Sigma A_old^T is not PD; covariance entries invalid") from None


def ramdl_logdet(prior_logdet: float, cov: CovarianceTable | None, A, n_old: int | None = None) -> float:
    """ln|Lambda_aug + A^T A| by the augmented matrix determinant lemma.

    ``Lambda`` is the prior over the first ``n_old`` columns (log-determinant
    ``prior_logdet``, covariance entries ``cov``); further columns are
    zero-information additions:

        |Lambda_aug + A^T A| = |Lambda| |Delta| |A_new^T Delta^-1 A_new|
        Delta = I + A_old Sigma A_old^T

    Cost is cubic in the number of rows, not in the state dimension. Only
    covariance entries of columns actually touched by ``A_old`` are read.
    """
    if isinstance(A, CollectiveJacobian):
        rows, n_old = A.csr, A.n_old
    elif sparse.issparse(A):
        rows = sparse.csr_matrix(A, copy=True)
        rows.eliminate_zeros()
    else:
        rows = sparse.csr_matrix(np.asarray(A, dtype=float))
    n_cols = rows.shape[1]
    n_old = n_cols if n_old is None else n_old
    r = rows.shape[0]
    if n_old < n_cols:
        old = rows[:, :n_old]
        new = rows[:, n_old:].toarray()
    else:
        old, new = rows, np.zeros((r, 0))
    if r == 0:
        if new.shape[1]:
            raise RankDeficientNew("new variables receive no measurement rows")
        return float(prior_logdet)
    if old.nnz:
        if cov is None:
            raise MissingCovarianceEntries("rAMDL needs prior covariance entries for the involved columns")
        A_c, Sigma = _table_rows(cov, old)
        T = A_c @ Sigma
        delta = A_c @ T.T
        delta.flat[::r + 1] += 1.0
    else:
        delta = np.eye(r)
    try:
        L = cholesky(delta)
    except NotPositiveDefinite:
        raise NotPositiveDefinite("Delta = I + A_old Sigma A_old^T is not PD; covariance entries invalid") from None
    out = float(prior_logdet) + 2.0 * float(np.sum(np.log(np.diag(L))))
    if new.shape[1]:
        Y = la.cho_solve((L, True), new, check_finite=False)
        M = new.T @ Y
        try:
            out += logdet_exact(0.5 * (M + M.T))
        except NotPositiveDefinite:
            raise RankDeficientNew("A_new lacks full column rank") from None
    return out


class GaussianEntropyModel:
    """Conditional entropies H(X | Z^s) for a Gaussian conditioning prior.

    ``prop_info`` is Lambda^{Aug-} (motion included, PD). ``backend`` selects
    how posterior log-determinants are computed: ``dense`` factorizes the
    N x N posterior; ``ramdl`` uses :func:`ramdl_logdet` and needs ``cov``
    (covariance entries of Lambda^{Aug-}) plus, optionally, the precomputed
    ``prior_logdet``. Results are cached per component set.
    """

    def __init__(self, prop, jac: CollectiveJacobian, backend: str = "dense",
                 cov: CovarianceTable | None = None, prior_logdet: float | None = None):
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
        info = prop.info if isinstance(prop, GaussianBelief) else (None if prop is None else np.asarray(prop))
        n = jac.n_cols if info is None else info.shape[0]
        if jac.n_cols != n:
            raise DimensionMismatch(f"Jacobian has {jac.n_cols} columns, prior has dimension {n}")
        if jac.n_old != n:
            raise DimensionMismatch("bounds need a PD conditioning prior; zero-information columns are not allowed")
        if info is None and (backend == "dense" or prior_logdet is None):
            raise ValueError("the dense backend and a missing prior log-determinant both need the prior matrix")
        if backend == "ramdl" and cov is None and jac.n_rows:
            raise MissingCovarianceEntries("the rAMDL backend needs covariance entries")
        self.info = info
        self.jac = jac
        self.backend = backend
        self.cov = cov
        self.n = n
        self.prior_logdet = logdet_exact(info) if prior_logdet is None else float(prior_logdet)
        self.prior_entropy = entropy_from_logdet(n, self.prior_logdet)
        self._cache: dict[frozenset, float] = {}
        self._shared = None

    @property
    def components(self) -> frozenset:
        return frozenset(range(self.jac.n_components))

    def _ramdl_delta(self, members) -> float:
        # T = A Sigma is shared by every subset: Delta_s uses rows of A and T
        if self._shared is None:
            A_c, Sigma = _table_rows(self.cov, self.jac.csr)
            self._shared = (A_c, A_c @ Sigma)
        A_c, T = self._shared
        rows = np.flatnonzero(self.jac.row_mask(members))
        if rows.size < A_c.shape[0]:
            A_c, T = csr_rows(A_c, rows), T[rows]
        return _delta_logdet(A_c, T)

    def logdet_posterior(self, members: Iterable[int]) -> float:
        members = list(members)
        if not self.jac.row_mask(members).any():
            return self.prior_logdet
        if self.backend == "ramdl":
            return self.prior_logdet + self._ramdl_delta(members)
        A_s = self.jac.subset(members)
        return logdet_exact(self.info + A_s.T @ A_s)

    def cond_entropy(self, members: Iterable[int]) -> float:
        key = frozenset(members)
        hit = self._cache.get(key)
        if hit is None:
            hit = entropy_from_logdet(self.n, self.logdet_posterior(key))
            self._cache[key] = hit
        return hit

    def clear_cache(self) -> None:
        self._cache.clear()


def conditional_entropy_exact(prop, jac: CollectiveJacobian) -> float:
    """H(X | Z) under ML observations: 0.5 (N ln 2 pi e - ln|Lambda^{Aug-} + A^T A|)."""
    info = prop.info if isinstance(prop, GaussianBelief) else np.asarray(prop, dtype=float)
    if jac.n_cols != info.shape[0]:
        raise DimensionMismatch(f"Jacobian has {jac.n_cols} columns, prior has dimension {info.shape[0]}")
    A = jac.rows
    return entropy_from_logdet(info.shape[0], logdet_exact(info + A.T @ A))


def g_operator(ctx, s: Iterable[int], s_bar: Iterable[int]) -> float:
    """g(Z^s, Z^sbar) = H(X|Z^s) + H(X|Z^sbar) - H(X).

    With either argument empty this reduces to H(X|Z) - H(X); with both
    empty it is -H(X).
    """
    s, s_bar = frozenset(s), frozenset(s_bar)
    if s & s_bar:
        raise OverlappingSets(f"sets share components {sorted(s & s_bar)}")
    # grouped so that an empty s_bar contributes exactly zero
    return ctx.cond_entropy(s) + (ctx.cond_entropy(s_bar) - ctx.prior_entropy)


def upper_bound(ctx, selection: UpperSelection) -> float:
    if not isinstance(selection, UpperSelection):
        raise TypeError("upper_bound needs an UpperSelection")
    return ctx.cond_entropy(selection.node.members)


def lower_bound(ctx, selection: LowerSelection) -> float:
    if not isinstance(selection, LowerSelection):
        raise TypeError("lower_bound needs a LowerSelection")
    _check_cover(ctx, selection)
    h = ctx.prior_entropy
    terms = [ctx.cond_entropy(v.members) for v in selection.nodes]
    return terms[0] + math.fsum(t - h for t in terms[1:])


def _check_cover(ctx, selection: LowerSelection) -> None:
    expected = getattr(ctx, "components", None)
    if expected is None:
        return
    got: set[int] = set()
    for v in selection.nodes:
        if got.intersection(v.members):
            raise InvalidCover("lower cover nodes overlap")
        got.update(v.members)
    if got != set(expected):
        raise InvalidCover("lower cover does not match the context's measurement components")


def bounds_from_context(ctx, upper: UpperSelection, lower: LowerSelection) -> BoundsInterval:
    return BoundsInterval(lower_bound(ctx, lower), upper_bound(ctx, upper),
                          f"L[{lower.descriptor}] U[{upper.descriptor}]")


def partitioned_bounds(prop, jac: CollectiveJacobian, upper: UpperSelection, lower: LowerSelection,
                       backend: str = "dense", cov: CovarianceTable | None = None,
                       prior_logdet: float | None = None) -> BoundsInterval:
    """Gaussian LB/UB for one candidate with the chosen log-determinant backend."""
    model = GaussianEntropyModel(prop, jac, backend=backend, cov=cov, prior_logdet=prior_logdet)
    return bounds_from_context(model, upper, lower)


def involved_state_bounds(ctx, upper: UpperSelection, lower: LowerSelection, beta,
                          belief: GaussianBelief | None = None) -> BoundsInterval:
    """Bounds written over involved states only.

    Gaussian context: rows already touch only the involved states, so after
    checking ``beta`` against the Jacobian the result is the ordinary
    partitioned interval. Discrete context: ``beta`` maps each observation
    component to the X-components it depends on and the H(Z^s | X^inv_s)
    form is evaluated directly.
    """
    from .discrete import DiscreteJoint, involved_state_bounds_discrete

    if isinstance(ctx, DiscreteJoint):
        return involved_state_bounds_discrete(ctx, upper, lower, beta)
    check_association(ctx.jac, beta, belief)
    return bounds_from_context(ctx, upper, lower)


def check_association(jac: CollectiveJacobian, beta, belief: GaussianBelief | None = None) -> None:
    """Verify that components and row sparsity agree with the data association."""
    per_step = [tuple(ids) for ids in beta.per_step]
    expected = [(i, lid) for i, ids in enumerate(per_step) for lid in ids]
    if jac.labels and sorted(map(_sortable, jac.labels)) != sorted(map(_sortable, expected)):
        raise InconsistentAssociation("Jacobian components do not match the data association")
    if not jac.labels and jac.n_components != len(expected):
        raise InconsistentAssociation(
            f"{jac.n_components} measurement components but association lists {len(expected)}")
    if belief is None or not jac.involved:
        return
    for comp, ids in enumerate(jac.involved):
        allowed = belief.columns(ids)
        rows = jac.rows[jac.row_groups == comp]
        touched = np.flatnonzero(np.any(rows != 0.0, axis=0))
        if not set(touched.tolist()) <= set(allowed.tolist()):
            raise InconsistentAssociation(f"component {comp} touches states outside its association")


def _sortable(label):
    return repr(label)
