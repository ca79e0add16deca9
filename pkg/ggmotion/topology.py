import logging
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ggmotion.errors import ConfigurationError, TopologyError
from ggmotion.models import TopologySpec
from ggmotion.utils import read_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SkeletonTopology:
    """Skeleton tree plus its group partition; immutable once built"""
    n_joints: int
    parent: Tuple[Optional[int], ...]
    groups: Tuple[Tuple[int, ...], ...]
    root: int
    neighbors: Tuple[frozenset, ...]
    hop: np.ndarray
    # Joints ordered so that every parent precedes its children
    order: Tuple[int, ...]
    group_of: Tuple[int, ...]

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def max_hop(self) -> int:
        return int(self.hop.max()) if self.n_joints > 1 else 0

    @property
    def group_roots(self) -> Tuple[int, ...]:
        return tuple(group[0] for group in self.groups)

    def parent_index(self) -> np.ndarray:
        """Parent of every joint, with the global root mapped to itself"""
        return np.array([self.root if p is None else p for p in self.parent], dtype=np.intp)

    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """Directed neighbor pairs (i, j) for every j in N_i, sorted by (i, j)"""
        pairs = [(i, j) for i in range(self.n_joints) for j in sorted(self.neighbors[i])]
        if not pairs:
            return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
        src, dst = zip(*pairs)
        return np.array(src, dtype=np.intp), np.array(dst, dtype=np.intp)

    def bones(self) -> List[Tuple[int, int]]:
        """(child, parent) pairs for every non-root joint"""
        return [(i, p) for i, p in enumerate(self.parent) if p is not None]

    def to_dict(self) -> dict:
        return {
            "n_joints": self.n_joints,
            "parent": list(self.parent),
            "groups": [list(group) for group in self.groups],
        }

    def permuted(self, perm: Sequence[int]) -> "SkeletonTopology":
        """
        Relabel joints: old joint j becomes new joint perm[j]

        Args:
            perm: Permutation of range(n_joints)

        Returns:
            SkeletonTopology: The same skeleton under the new labels
        """
        perm = list(perm)
        parent: List[Optional[int]] = [None] * self.n_joints
        for old, p in enumerate(self.parent):
            parent[perm[old]] = None if p is None else perm[p]
        groups = [[perm[j] for j in group] for group in self.groups]
        return build_topology(parent, groups)


def _bfs_hops(n: int, neighbors: Sequence[frozenset]) -> np.ndarray:
    hop = np.full((n, n), -1, dtype=np.int64)
    for start in range(n):
        hop[start, start] = 0
        queue = deque([start])
        while queue:
            node = queue.popleft()
            for nxt in neighbors[node]:
                if hop[start, nxt] < 0:
                    hop[start, nxt] = hop[start, node] + 1
                    queue.append(nxt)
    return hop


def build_topology(parent: Sequence[Optional[int]], groups: Sequence[Sequence[int]]) -> SkeletonTopology:
    """
    Validate a parent list and group partition and derive neighbors and hop distances

    Args:
        parent: Per-joint parent index, None for the single global root
        groups: Joint-index lists; the first entry of each is the group root

    Returns:
        SkeletonTopology: Validated, immutable topology
    """
    n = len(parent)
    if n < 1:
        raise TopologyError("skeleton must have at least one joint")
    roots = [i for i, p in enumerate(parent) if p is None]
    if len(roots) != 1:
        raise TopologyError(f"expected exactly one root, found {len(roots)}: {roots}")
    for i, p in enumerate(parent):
        if p is None:
            continue
        if not isinstance(p, (int, np.integer)) or not 0 <= p < n:
            raise TopologyError(f"joint {i} has invalid parent {p!r}")
        if p == i:
            raise TopologyError(f"joint {i} is its own parent")

    # Walk every joint up to the root; n steps without arriving means a cycle
    for i in range(n):
        node, steps = i, 0
        while parent[node] is not None:
            node = parent[node]
            steps += 1
            if steps > n:
                raise TopologyError(f"cycle in parent links reachable from joint {i}")

    seen: Dict[int, int] = {}
    for s, group in enumerate(groups):
        if len(group) == 0:
            raise TopologyError(f"group {s} is empty")
        for j in group:
            if not isinstance(j, (int, np.integer)) or not 0 <= j < n:
                raise TopologyError(f"group {s} references invalid joint {j!r}")
            if j in seen:
                raise TopologyError(f"joint {j} appears in groups {seen[j]} and {s}")
            seen[j] = s
    missing = sorted(set(range(n)) - set(seen))
    if missing:
        raise TopologyError(f"groups do not cover joints {missing}")

    adjacency = [set() for _ in range(n)]
    for i, p in enumerate(parent):
        if p is not None:
            adjacency[i].add(int(p))
            adjacency[int(p)].add(i)
    neighbors = tuple(frozenset(a) for a in adjacency)

    root = roots[0]
    children = [[] for _ in range(n)]
    for i, p in enumerate(parent):
        if p is not None:
            children[int(p)].append(i)
    order, queue = [], deque([root])
    while queue:
        node = queue.popleft()
        order.append(node)
        queue.extend(children[node])

    hop = _bfs_hops(n, neighbors)
    hop.setflags(write=False)
    return SkeletonTopology(
        n_joints=n,
        parent=tuple(None if p is None else int(p) for p in parent),
        groups=tuple(tuple(int(j) for j in group) for group in groups),
        root=root,
        neighbors=neighbors,
        hop=hop,
        order=tuple(order),
        group_of=tuple(seen[j] for j in range(n)),
    )


def hops(t: SkeletonTopology) -> np.ndarray:
    """Shortest-path edge counts between every pair of joints"""
    return np.array(t.hop)


def hop_embed(h: int, c_prime: int) -> np.ndarray:
    """
    Sinusoidal encoding of a hop count

    Args:
        h: Hop count (>= 0)
        c_prime: Embedding width, must be even

    Returns:
        np.ndarray: Vector with sin at even and cos at odd entries
    """
    if c_prime <= 0 or c_prime % 2:
        raise ConfigurationError(f"hop embedding width must be a positive even number, got {c_prime}")
    if h < 0:
        raise ConfigurationError(f"hop count must be >= 0, got {h}")
    i = np.arange(c_prime // 2)
    angle = h / np.power(10000.0, 2.0 * i / c_prime)
    out = np.empty(c_prime)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def hop_table(t: SkeletonTopology, c_prime: int) -> np.ndarray:
    """Rows 0..max_hop of the hop embedding"""
    return np.stack([hop_embed(h, c_prime) for h in range(t.max_hop + 1)])


def topology_from_spec(spec: TopologySpec) -> SkeletonTopology:
    return build_topology(spec.parent, spec.groups)


def load_topology(path: str) -> SkeletonTopology:
    """Read a topology JSON file: {"n_joints", "parent": [int|null], "groups": [[int,...],...]}"""
    data = read_json(path)
    try:
        spec = TopologySpec.model_validate(data)
    except Exception as e:
        raise TopologyError(f"Invalid topology file {path}: {e}")
    topo = topology_from_spec(spec)
    logger.debug("Loaded topology from %s: %d joints, %d groups", path, topo.n_joints, topo.n_groups)
    return topo


# 22-joint human layout: spine, head, left/right arm, left/right leg
HUMAN22_PARENT: List[Optional[int]] = [
    None, 0, 1, 2,        # pelvis, spine, chest, neck
    3, 4,                 # head, head top
    2, 6, 7, 8,           # left collar, shoulder, elbow, wrist
    2, 10, 11, 12,        # right collar, shoulder, elbow, wrist
    0, 14, 15, 16,        # left hip, knee, ankle, toe
    0, 18, 19, 20,        # right hip, knee, ankle, toe
]

HUMAN22_GROUPS: Dict[int, List[List[int]]] = {
    6: [[0, 1, 2, 3], [4, 5], [6, 7, 8, 9], [10, 11, 12, 13], [14, 15, 16, 17], [18, 19, 20, 21]],
    5: [[0, 1, 2, 3, 4, 5], [6, 7, 8, 9], [10, 11, 12, 13], [14, 15, 16, 17], [18, 19, 20, 21]],
    2: [[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13], [0, 14, 15, 16, 17, 18, 19, 20, 21]],
    1: [list(range(22))],
}


def human22(n_groups: int = 6) -> SkeletonTopology:
    """Default human skeleton with 1, 2, 5 or 6 body groups"""
    if n_groups not in HUMAN22_GROUPS:
        raise ConfigurationError(f"no 22-joint layout with {n_groups} groups (choose from {sorted(HUMAN22_GROUPS)})")
    return build_topology(HUMAN22_PARENT, HUMAN22_GROUPS[n_groups])


def chain(n_joints: int, n_groups: int = 1) -> SkeletonTopology:
    """Serial chain 0 -> 1 -> ... split into contiguous groups"""
    if not 1 <= n_groups <= n_joints:
        raise ConfigurationError(f"cannot split a {n_joints}-joint chain into {n_groups} groups")
    bounds = np.linspace(0, n_joints, n_groups + 1).round().astype(int)
    groups = [list(range(bounds[s], bounds[s + 1])) for s in range(n_groups)]
    return build_topology([None] + list(range(n_joints - 1)), groups)
