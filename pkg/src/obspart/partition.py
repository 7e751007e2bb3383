"""
Binary partition hierarchy over observation components.

Nodes are addressed by ``(level, n)`` with ``n`` counted from 1 at each level,
so the children of ``(i, n)`` are ``(i + 1, 2n - 1)`` and ``(i + 1, 2n)``.
Members are integer component indices; in the Gaussian case each component
owns one or more rows of the collective Jacobian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DepthTooLarge, InvalidCover, MultipleNodes, NotMembers, NotSiblings

STRATEGIES = ("interleaved", "contiguous", "random")


@dataclass(frozen=True)
class PartitionNode:
    node_id: int
    level: int
    parent_id: int | None
    parent_level: int | None
    members: tuple[int, ...]

    @property
    def key(self) -> tuple[int, int]:
        return (self.level, self.node_id)

    @property
    def label(self) -> str:
        if self.parent_id is None:
            return f"s_{self.node_id}^({self.level})"
        return f"s_{self.node_id}^({self.level}){{{self.parent_id},{self.parent_level}}}"

    def __len__(self):
        return len(self.members)


def max_depth(m: int) -> int:
    """Deepest useful hierarchy for ``m`` components: ceil(log2 m)."""
    return 0 if m <= 1 else math.ceil(math.log2(m))


def split_members(members: Sequence[int], strategy: str, seed: int, key: tuple[int, int]):
    """Split into two children; the first gets the extra member on odd sizes."""
    members = tuple(members)
    k = (len(members) + 1) // 2
    if strategy == "contiguous":
        return members[:k], members[k:]
    if strategy == "interleaved":
        return members[0::2], members[1::2]
    if strategy == "random":
        rng = np.random.default_rng([seed, key[0], key[1]])
        perm = rng.permutation(len(members))
        first = tuple(sorted(members[i] for i in perm[:k]))
        second = tuple(sorted(members[i] for i in perm[k:]))
        return first, second
    raise ValueError(f"unknown split strategy {strategy!r}")


class PartitionTree:
    """Immutable full binary tree of component sets."""

    def __init__(self, nodes: dict, depth: int, strategy: str = "random", seed: int = 0):
        self._nodes = dict(nodes)
        self.depth = depth
        self.strategy = strategy
        self.seed = seed

    @property
    def root(self) -> PartitionNode:
        return self._nodes[(0, 1)]

    @property
    def m(self) -> int:
        return len(self.root.members)

    def node(self, level: int, n: int) -> PartitionNode:
        return self._nodes[(level, n)]

    def nodes(self) -> list[PartitionNode]:
        return sorted(self._nodes.values(), key=lambda v: v.key)

    def level(self, i: int) -> list[PartitionNode]:
        if not 0 <= i <= self.depth:
            raise DepthTooLarge(f"tree has depth {self.depth}, asked for level {i}")
        return [self._nodes[(i, n)] for n in range(1, 2 ** i + 1)]

    def children(self, node: PartitionNode) -> tuple[PartitionNode, PartitionNode] | tuple[()]:
        if node.level >= self.depth:
            return ()
        i, n = node.level + 1, 2 * node.node_id
        return self._nodes[(i, n - 1)], self._nodes[(i, n)]

    def parent(self, node: PartitionNode) -> PartitionNode | None:
        if node.parent_id is None:
            return None
        return self._nodes[(node.parent_level, node.parent_id)]

    def sibling(self, node: PartitionNode) -> PartitionNode | None:
        if node.parent_id is None:
            return None
        n = node.node_id + 1 if node.node_id % 2 else node.node_id - 1
        return self._nodes[(node.level, n)]

    def __contains__(self, node: PartitionNode) -> bool:
        return self._nodes.get(node.key) == node

    def signature(self) -> tuple:
        return tuple((v.key, v.members) for v in self.nodes())


def _grow(nodes: dict, parent: PartitionNode, depth: int, strategy: str, seed: int) -> None:
    if parent.level >= depth:
        return
    a, b = split_members(parent.members, strategy, seed, parent.key)
    i = parent.level + 1
    for n, members in ((2 * parent.node_id - 1, a), (2 * parent.node_id, b)):
        child = PartitionNode(n, i, parent.node_id, parent.level, members)
        nodes[child.key] = child
        _grow(nodes, child, depth, strategy, seed)


def build_tree(m: int, depth: int, strategy: str = "random", seed: int = 0,
               members: Sequence[int] | None = None) -> PartitionTree:
    """Partition components ``0..m-1`` (or ``members``) into a depth-``depth`` tree."""
    if m < 0:
        raise ValueError("component count must be non-negative")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown split strategy {strategy!r}")
    if depth < 0 or depth > max_depth(m):
        raise DepthTooLarge(f"depth {depth} exceeds ceil(log2 {m}) = {max_depth(m)}")
    root_members = tuple(range(m)) if members is None else tuple(members)
    root = PartitionNode(1, 0, None, None, root_members)
    nodes = {root.key: root}
    _grow(nodes, root, depth, strategy, seed)
    return PartitionTree(nodes, depth, strategy, seed)


def move_members(tree: PartitionTree, src: PartitionNode, dst: PartitionNode,
                 indices: Iterable[int]) -> PartitionTree:
    """Transfer ``indices`` from ``src`` to its sibling ``dst`` and regrow both subtrees."""
    indices = set(indices)
    if src not in tree or dst not in tree:
        raise NotSiblings("nodes are not part of this tree")
    if src.parent_id is None or tree.sibling(src) != dst:
        raise NotSiblings(f"{src.label} and {dst.label} are not siblings")
    if not indices <= set(src.members):
        raise NotMembers(f"indices {sorted(indices - set(src.members))} are not members of {src.label}")
    if not indices:
        return tree
    nodes = {}
    src_prefix, dst_prefix = src.key, dst.key
    for key, node in tree._nodes.items():
        if not (_descends(key, src_prefix) or _descends(key, dst_prefix)):
            nodes[key] = node
    new_src = PartitionNode(src.node_id, src.level, src.parent_id, src.parent_level,
                            tuple(i for i in src.members if i not in indices))
    new_dst = PartitionNode(dst.node_id, dst.level, dst.parent_id, dst.parent_level,
                            tuple(sorted(set(dst.members) | indices)))
    for node in (new_src, new_dst):
        nodes[node.key] = node
        _grow(nodes, node, tree.depth, tree.strategy, tree.seed)
    return PartitionTree(nodes, tree.depth, tree.strategy, tree.seed)


def _descends(key: tuple[int, int], ancestor: tuple[int, int]) -> bool:
    level, n = key
    a_level, a_n = ancestor
    if level < a_level:
        return False
    return (n - 1) >> (level - a_level) == a_n - 1


@dataclass(frozen=True)
class UpperSelection:
    node: PartitionNode

    @property
    def descriptor(self) -> str:
        return f"{self.node.level}/{self.node.node_id}"


@dataclass(frozen=True)
class LowerSelection:
    nodes: tuple[PartitionNode, ...]

    @property
    def descriptor(self) -> str:
        return ",".join(f"{v.level}/{v.node_id}" for v in self.nodes)


def bound_selection(tree: PartitionTree, kind: str, nodes: Iterable[PartitionNode]):
    """Validate a node selection for an upper (one node) or lower (disjoint cover) bound."""
    nodes = tuple(nodes)
    for v in nodes:
        if v not in tree:
            raise InvalidCover(f"{v.label} is not a node of this tree")
    if kind == "upper":
        if len(nodes) != 1:
            raise MultipleNodes(f"an upper bound uses exactly one node, got {len(nodes)}")
        return UpperSelection(nodes[0])
    if kind != "lower":
        raise ValueError(f"selection kind must be 'upper' or 'lower', got {kind!r}")
    seen: set[int] = set()
    for v in nodes:
        overlap = seen.intersection(v.members)
        if overlap:
            raise InvalidCover(f"components {sorted(overlap)} appear in more than one node")
        seen.update(v.members)
    missing = set(tree.root.members) - seen
    if missing:
        raise InvalidCover(f"components {sorted(missing)} are not covered")
    return LowerSelection(tuple(sorted(nodes, key=lambda v: v.key)))


def level_cover(tree: PartitionTree, level: int) -> LowerSelection:
    """All nodes of one level: the standard lower-bound cover at that depth."""
    return LowerSelection(tuple(tree.level(level)))


def nested_upper(tree: PartitionTree, level: int) -> UpperSelection:
    """Upper-bound node at ``level`` reached by always taking the larger child.

    Successive levels are nested subsets, so the resulting upper bounds are
    monotone in ``level``.
    """
    if not 0 <= level <= tree.depth:
        raise DepthTooLarge(f"tree has depth {tree.depth}, asked for level {level}")
    node = tree.root
    for _ in range(level):
        a, b = tree.children(node)
        node = a if len(a) >= len(b) else b
    return UpperSelection(node)
