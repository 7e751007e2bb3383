import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obspart.bounds import bounds_from_context, g_operator
from obspart.discrete import (
    DiscreteEntropyModel,
    DiscreteJoint,
    EvaluationCounter,
    bounds_brute,
    check_conditional_independence,
    cond_entropy_brute,
    cond_entropy_direct,
    entropy_x,
    enumeration_cost,
    involved_state_bounds_discrete,
    obs_entropy,
    obs_entropy_given_x,
    random_ci_joint,
)
from obspart.errors import (
    InconsistentAssociation,
    InvalidCover,
    InvalidDistribution,
    NotConditionallyIndependent,
)
from obspart.partition import build_tree, level_cover, nested_upper

LN2 = math.log(2.0)


def copies_of_x():
    """X uniform on {0, 1}, Z1 = Z2 = X."""
    eye = np.eye(2)
    return DiscreteJoint.from_model([0.5, 0.5], [eye, eye])


def test_identical_copies_worked_case():
    joint = copies_of_x()
    tree = build_tree(2, 1, "contiguous")
    iv = bounds_brute(joint, nested_upper(tree, 1), level_cover(tree, 1))
    assert cond_entropy_brute(joint) == 0.0
    assert iv.ub == 0.0
    assert iv.lb == -LN2
    ctx = bounds_from_context(DiscreteEntropyModel(joint), nested_upper(tree, 1), level_cover(tree, 1))
    assert (ctx.lb, ctx.ub) == (-LN2, 0.0)


def test_single_binary_channel_oracle():
    # X uniform, Z = X through a binary symmetric channel with flip 0.1
    ch = np.array([[0.9, 0.1], [0.1, 0.9]])
    joint = DiscreteJoint.from_model([0.5, 0.5], [ch])
    h2 = -(0.9 * math.log(0.9) + 0.1 * math.log(0.1))
    assert entropy_x(joint) == pytest.approx(LN2, abs=1e-15)
    assert cond_entropy_brute(joint) == pytest.approx(h2, abs=1e-14)
    assert obs_entropy(joint, [0]) == pytest.approx(LN2, abs=1e-15)
    assert obs_entropy_given_x(joint, [0]) == pytest.approx(h2, abs=1e-14)


@st.composite
def joints(draw, max_components=8):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    x_card = draw(st.integers(1, 16))
    m = draw(st.integers(1, max_components))
    conc = draw(st.sampled_from([0.3, 1.0, 5.0]))
    return random_ci_joint(np.random.default_rng(seed), x_card, m, conc)


@settings(max_examples=80, deadline=None)
@given(joint=joints())
def test_lemma_identity(joint):
    allz = range(joint.m)
    lhs = cond_entropy_direct(joint, allz)
    rhs = obs_entropy_given_x(joint, allz) + entropy_x(joint) - obs_entropy(joint, allz)
    assert abs(lhs - rhs) <= 1e-12


@settings(max_examples=80, deadline=None)
@given(joint=joints(), data=st.data())
def test_brute_bounds_sandwich_and_match_posterior_form(joint, data):
    depth = data.draw(st.integers(0, math.ceil(math.log2(joint.m)) if joint.m > 1 else 0))
    tree = build_tree(joint.m, depth, "random", data.draw(st.integers(0, 99)))
    exact = cond_entropy_brute(joint)
    model = DiscreteEntropyModel(joint)
    for d in range(depth + 1):
        iv = bounds_brute(joint, nested_upper(tree, d), level_cover(tree, d))
        assert iv.lb - 1e-12 <= exact <= iv.ub + 1e-12
        post = bounds_from_context(model, nested_upper(tree, d), level_cover(tree, d))
        assert post.lb == pytest.approx(iv.lb, abs=1e-12)
        assert post.ub == pytest.approx(iv.ub, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(joint=joints())
def test_all_components_in_s_is_exact(joint):
    model = DiscreteEntropyModel(joint)
    allz = list(range(joint.m))
    exact = cond_entropy_brute(joint)
    assert abs(g_operator(model, allz, []) - exact) <= 1e-12
    tree = build_tree(joint.m, 0)
    iv = bounds_brute(joint, nested_upper(tree, 0), level_cover(tree, 0))
    assert abs(iv.lb - exact) <= 1e-12 and abs(iv.ub - exact) <= 1e-12


def test_invalid_distributions():
    with pytest.raises(InvalidDistribution):
        DiscreteJoint(np.array([0.5, 0.6]))
    with pytest.raises(InvalidDistribution):
        DiscreteJoint(np.array([1.5, -0.5]))
    with pytest.raises(InvalidDistribution):
        DiscreteJoint(np.full(17, 1 / 17))
    with pytest.raises(InvalidDistribution):
        DiscreteJoint(np.full(4, 0.25), x_components=(3,))


def test_dependent_components_rejected():
    # Z1 and Z2 share a coin flip that X does not explain
    t = np.zeros((1, 2, 2))
    t[0, 0, 0] = t[0, 1, 1] = 0.5
    joint = DiscreteJoint(t)
    with pytest.raises(NotConditionallyIndependent):
        check_conditional_independence(joint, [(0,), (1,)])
    tree = build_tree(2, 1)
    with pytest.raises(NotConditionallyIndependent):
        bounds_brute(joint, nested_upper(tree, 1), level_cover(tree, 1))


def test_partial_cover_rejected():
    joint = copies_of_x()
    tree = build_tree(1, 0)
    with pytest.raises(InvalidCover):
        bounds_brute(joint, nested_upper(tree, 0), level_cover(tree, 0))


def test_enumeration_counts():
    joint = random_ci_joint(np.random.default_rng(0), 4, 6)
    tree = build_tree(6, 1, "contiguous")
    cost = enumeration_cost(joint, level_cover(tree, 1), nested_upper(tree, 1))
    assert cost == {"joint": 4 * 64, "partitioned": 2 * 4 * 8}
    counter = EvaluationCounter()
    cond_entropy_brute(joint, counter)
    assert counter.count == 4 * 64


def test_involved_state_bounds_match_full_x():
    rng = np.random.default_rng(3)
    px = rng.dirichlet(np.ones(8))  # X = (X0, X1, X2), binary each
    beta = [(0,), (1, 2), (2,), (0, 1)]
    channels = []
    for axes in beta:
        local = rng.dirichlet(np.ones(2), size=2 ** len(axes))
        ch = np.empty((8, 2))
        for x in range(8):
            bits = [(x >> (2 - a)) & 1 for a in range(3)]
            key = 0
            for a in axes:
                key = 2 * key + bits[a]
            ch[x] = local[key]
        channels.append(ch)
    joint = DiscreteJoint.from_model(px, channels, x_components=(2, 2, 2))
    tree = build_tree(4, 2, "random", 1)
    for d in range(3):
        up, low = nested_upper(tree, d), level_cover(tree, d)
        full = bounds_brute(joint, up, low)
        inv = involved_state_bounds_discrete(joint, up, low, beta)
        assert inv.lb == pytest.approx(full.lb, abs=1e-12)
        assert inv.ub == pytest.approx(full.ub, abs=1e-12)
    with pytest.raises(InconsistentAssociation):
        involved_state_bounds_discrete(joint, nested_upper(tree, 0), level_cover(tree, 0),
                                       [(0,), (1,), (2,), (0, 1)])
