"""
Brute-force entropies on finite joint distributions P(X, Z^1..Z^m).

Used to check the general (distribution-free) bound theorems by exhaustive
enumeration. Tables are small by design: |X| <= 16 and at most 12 binary
observation components. Sums use ``math.fsum``; 0 log 0 is taken as 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .bounds import BoundsInterval
from .errors import (
    InconsistentAssociation,
    InvalidCover,
    InvalidDistribution,
    NotConditionallyIndependent,
    SelfCheckFailed,
)
from .partition import LowerSelection, UpperSelection

MAX_X = 16
MAX_COMPONENTS = 12
LEMMA_TOL = 1e-12
CI_TOL = 1e-10


class EvaluationCounter:
    """Counts (z, x) product terms evaluated while marginalizing observations."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


def _plogp_sum(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float).ravel()
    p = p[p > 0.0]
    return -math.fsum((p * np.log(p)).tolist())


@dataclass(frozen=True, eq=False)
class DiscreteJoint:
    """Joint mass table with axis 0 for X and one axis per observation component.

    ``x_components`` optionally factors X into sub-variables (mixed radix,
    first component most significant); it is only needed for involved-state
    evaluations.
    """

    table: np.ndarray
    x_components: tuple[int, ...] | None = None
    _marginals: dict = field(init=False, repr=False)

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim < 1:
            raise InvalidDistribution("table needs at least the X axis")
        if np.any(t < 0.0) or not np.all(np.isfinite(t)):
            raise InvalidDistribution("masses must be finite and non-negative")
        total = math.fsum(t.ravel().tolist())
        if abs(total - 1.0) > LEMMA_TOL:
            raise InvalidDistribution(f"masses sum to {total!r}, not 1")
        if t.shape[0] > MAX_X or t.ndim - 1 > MAX_COMPONENTS:
            raise InvalidDistribution(f"oracle is capped at |X| <= {MAX_X} and {MAX_COMPONENTS} components")
        xc = None
        if self.x_components is not None:
            xc = tuple(int(c) for c in self.x_components)
            if math.prod(xc) != t.shape[0]:
                raise InvalidDistribution(f"X factorization {xc} does not multiply to |X| = {t.shape[0]}")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)
        object.__setattr__(self, "x_components", xc)
        object.__setattr__(self, "_marginals", {})

    @property
    def x_card(self) -> int:
        return self.table.shape[0]

    @property
    def z_cards(self) -> tuple[int, ...]:
        return self.table.shape[1:]

    @property
    def m(self) -> int:
        return self.table.ndim - 1

    @property
    def px(self) -> np.ndarray:
        return self.marginal(()).ravel()

    def marginal(self, members: Iterable[int]) -> np.ndarray:
        """P(X, Z^members) flattened to shape (|X|, |Z^members|)."""
        members = tuple(sorted(set(members)))
        hit = self._marginals.get(members)
        if hit is None:
            drop = tuple(1 + j for j in range(self.m) if j not in members)
            t = self.table.sum(axis=drop) if drop else self.table
            hit = t.reshape(self.x_card, -1)
            self._marginals[members] = hit
        return hit

    def channel(self, members: Iterable[int]) -> np.ndarray:
        """P(Z^members | X), shape (|X|, |Z^members|); rows with P(x)=0 are zero."""
        joint = self.marginal(members)
        px = joint.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(px > 0.0, joint / np.where(px > 0.0, px, 1.0), 0.0)

    @classmethod
    def from_model(cls, px, channels: Sequence, x_components=None) -> "DiscreteJoint":
        """Build P(x) prod_j P(z_j | x): components conditionally independent given X."""
        px = np.asarray(px, dtype=float)
        t = px.copy()
        for ch in channels:
            ch = np.asarray(ch, dtype=float)
            t = t[..., None] * ch.reshape((ch.shape[0],) + (1,) * (t.ndim - 1) + (ch.shape[1],))
        return cls(t / math.fsum(t.ravel().tolist()), x_components)


def entropy_x(joint: DiscreteJoint) -> float:
    return _plogp_sum(joint.marginal(()).ravel())


def cond_entropy_direct(joint: DiscreteJoint, members: Iterable[int]) -> float:
    """H(X | Z^members) = -sum p(x, z) log p(x | z), enumerated directly."""
    pxz = joint.marginal(members)
    pz = pxz.sum(axis=0, keepdims=True)
    mask = pxz > 0.0
    ratio = np.where(mask, pxz / np.where(pz > 0.0, pz, 1.0), 1.0)
    return -math.fsum((pxz[mask] * np.log(ratio[mask])).tolist())


def obs_entropy_given_x(joint: DiscreteJoint, members: Iterable[int]) -> float:
    """H(Z^members | X) = -sum p(x, z) log p(z | x)."""
    pxz = joint.marginal(members)
    ch = joint.channel(members)
    mask = pxz > 0.0
    return -math.fsum((pxz[mask] * np.log(ch[mask])).tolist())


def obs_entropy(joint: DiscreteJoint, members: Iterable[int], counter: EvaluationCounter | None = None) -> float:
    """H(Z^members) with p(z) = sum_x P(z | x) P(x) evaluated from the model."""
    ch = joint.channel(members)
    px = joint.marginal(()).ravel()
    if counter is not None:
        counter.add(ch.size)
    pz = px @ ch
    return _plogp_sum(pz)


def cond_entropy_brute(joint: DiscreteJoint, counter: EvaluationCounter | None = None) -> float:
    """H(X | Z), with a built-in check against H(Z|X) + H(X) - H(Z)."""
    allz = range(joint.m)
    direct = cond_entropy_direct(joint, allz)
    factored = obs_entropy_given_x(joint, allz) + entropy_x(joint) - obs_entropy(joint, allz, counter)
    if abs(direct - factored) > LEMMA_TOL:
        raise SelfCheckFailed(f"direct H(X|Z) = {direct!r} but factored form gives {factored!r}")
    return direct


def check_conditional_independence(joint: DiscreteJoint, groups: Sequence[Iterable[int]]) -> None:
    """Require P(Z^g1, ..., Z^gp | X) = prod_i P(Z^gi | X) on the joint support."""
    groups = [tuple(sorted(g)) for g in groups if len(tuple(g))]
    if len(groups) < 2:
        return
    members = tuple(sorted(j for g in groups for j in g))
    full = joint.channel(members).reshape((joint.x_card,) + tuple(joint.z_cards[j] for j in members))
    prod = np.ones((joint.x_card,) + (1,) * len(members))
    for g in groups:
        ch = joint.channel(g).reshape((joint.x_card,) + tuple(joint.z_cards[j] for j in g))
        # both ``g`` and ``members`` are sorted, so axis order carries over
        shape = [joint.x_card] + [joint.z_cards[j] if j in g else 1 for j in members]
        prod = prod * ch.reshape(shape)
    px = joint.marginal(()).ravel()
    err = np.max(np.abs(full - prod)[px > 0.0]) if np.any(px > 0.0) else 0.0
    if err > CI_TOL:
        raise NotConditionallyIndependent(f"components are not independent given X (max deviation {err:.3g})")


def bounds_brute(joint: DiscreteJoint, upper: UpperSelection, lower: LowerSelection,
                 counter: EvaluationCounter | None = None) -> BoundsInterval:
    """Observation-space form of the bounds.

    UB = H(Z^s|X) + H(X) - H(Z^s)                   (holds for any joint)
    LB = sum_i [H(Z^ci|X) - H(Z^ci)] + H(X)         (needs the cover sets
                                                     independent given X)
    """
    sets = [tuple(v.members) for v in lower.nodes]
    covered = sorted(j for s in sets for j in s)
    if covered != list(range(joint.m)):
        raise InvalidCover("lower cover must partition all observation components")
    check_conditional_independence(joint, sets)
    hx = entropy_x(joint)
    cache: dict[tuple, float] = {}

    def h_obs(s):
        key = tuple(sorted(s))
        if key not in cache:
            cache[key] = obs_entropy(joint, key, counter)
        return cache[key]

    lb_terms = [obs_entropy_given_x(joint, s) - h_obs(s) for s in sets]
    lb = math.fsum(lb_terms) + hx
    s_up = tuple(upper.node.members)
    ub = obs_entropy_given_x(joint, s_up) + hx - h_obs(s_up)
    return BoundsInterval(lb, ub, f"L[{lower.descriptor}] U[{upper.descriptor}]")


def enumeration_cost(joint: DiscreteJoint, lower: LowerSelection, upper: UpperSelection | None = None) -> dict:
    """Counted (z, x) evaluations: joint H(Z) versus the partitioned marginals."""
    full = math.prod(joint.z_cards) * joint.x_card
    sets = {tuple(sorted(v.members)) for v in lower.nodes}
    if upper is not None:
        sets.add(tuple(sorted(upper.node.members)))
    part = sum(math.prod(joint.z_cards[j] for j in s) * joint.x_card for s in sets)
    return {"joint": full, "partitioned": part}


class DiscreteEntropyModel:
    """Posterior-form context (prior_entropy, cond_entropy) for the generic bound functions."""

    def __init__(self, joint: DiscreteJoint):
        self.joint = joint
        self.prior_entropy = entropy_x(joint)
        self._cache: dict[frozenset, float] = {}

    @property
    def components(self) -> frozenset:
        return frozenset(range(self.joint.m))

    def cond_entropy(self, members: Iterable[int]) -> float:
        key = frozenset(members)
        if key not in self._cache:
            self._cache[key] = cond_entropy_direct(self.joint, key) if key else self.prior_entropy
        return self._cache[key]


def _x_axes_marginal(joint: DiscreteJoint, x_axes: Sequence[int], members: Sequence[int]) -> np.ndarray:
    """P(X^x_axes, Z^members) flattened to (|X^inv|, |Z^members|)."""
    xc = joint.x_components
    t = joint.marginal(members).reshape(tuple(xc) + (-1,))
    drop = tuple(a for a in range(len(xc)) if a not in x_axes)
    t = t.sum(axis=drop) if drop else t
    return t.reshape(-1, t.shape[-1])


def involved_axes(beta, members: Iterable[int]) -> tuple[int, ...]:
    return tuple(sorted({a for j in members for a in beta[j]}))


def check_involved(joint: DiscreteJoint, beta) -> None:
    """Each P(Z^j | X) may depend only on the X-components listed in ``beta[j]``."""
    if joint.x_components is None:
        raise InconsistentAssociation("involved-state evaluation needs a factored X")
    if len(beta) != joint.m:
        raise InconsistentAssociation(f"association lists {len(beta)} components, joint has {joint.m}")
    xc = joint.x_components
    px = joint.marginal(()).reshape(xc)
    for j in range(joint.m):
        ch = joint.channel((j,)).reshape(tuple(xc) + (-1,))
        axes = set(beta[j])
        if not axes <= set(range(len(xc))):
            raise InconsistentAssociation(f"component {j} names unknown X-components")
        free = tuple(a for a in range(len(xc)) if a not in axes)
        if not free:
            continue
        # conditional given only the involved axes
        joint_j = ch * px[..., None]
        p_inv = px.sum(axis=free, keepdims=True)
        cond_inv = joint_j.sum(axis=free, keepdims=True) / np.where(p_inv > 0, p_inv, 1.0)[..., None]
        dev = np.abs(ch - cond_inv)[px > 0.0]
        if dev.size and dev.max() > CI_TOL:
            raise InconsistentAssociation(f"component {j} depends on X-components outside {sorted(axes)}")


def involved_state_bounds_discrete(joint: DiscreteJoint, upper: UpperSelection, lower: LowerSelection,
                                   beta) -> BoundsInterval:
    """Bounds with H(Z^s | X^inv_s) in place of H(Z^s | X)."""
    check_involved(joint, beta)
    sets = [tuple(v.members) for v in lower.nodes]
    check_conditional_independence(joint, sets)
    hx = entropy_x(joint)

    def h_given_inv(s):
        if not s:
            return 0.0
        pxz = _x_axes_marginal(joint, involved_axes(beta, s), s)
        px = pxz.sum(axis=1, keepdims=True)
        mask = pxz > 0.0
        ratio = np.where(mask, pxz / np.where(px > 0.0, px, 1.0), 1.0)
        return -math.fsum((pxz[mask] * np.log(ratio[mask])).tolist())

    lb = math.fsum([h_given_inv(s) - obs_entropy(joint, s) for s in sets]) + hx
    s_up = tuple(upper.node.members)
    ub = h_given_inv(s_up) + hx - obs_entropy(joint, s_up)
    return BoundsInterval(lb, ub, f"L[{lower.descriptor}] U[{upper.descriptor}]")


def random_ci_joint(rng: np.random.Generator, x_card: int, m: int, concentration: float = 1.0,
                    x_components=None) -> DiscreteJoint:
    """Random P(X) and binary channels P(Z^j | X), independent given X."""
    px = rng.dirichlet(np.full(x_card, concentration))
    channels = [rng.dirichlet(np.full(2, concentration), size=x_card) for _ in range(m)]
    return DiscreteJoint.from_model(px, channels, x_components)
