"""
Group interaction and dynamics-kinematics propagation.

Forces from the radial field are exchanged between body groups (inter), inside
each group (intra), turned into accelerations (parallel or iterative dynamics)
and integrated into the next layer's velocities and positions.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Literal, Sequence, Tuple

import numpy as np

from ggmotion import autodiff as ad
from ggmotion import geom
from ggmotion.autodiff import ParamStore, Scope, Var
from ggmotion.eqmlp import EqMlpParams, eqmlp_forward
from ggmotion.errors import ConfigurationError, DomainError
from ggmotion.topology import SkeletonTopology

logger = logging.getLogger(__name__)

DkMode = Literal["parallel", "iterative", "none"]

# column-sum error below which phi_c is treated as already projected
PROJECTION_TOL = 1e-14


@dataclass(frozen=True)
class GroupInteractionParams:
    """
    Shape declaration of one block's interaction and dynamics parameters

    Paths below the block prefix: inter, intra.{s}, dk, v_update, phi_c.
    """
    n_joints: int
    channels: int
    hidden: int
    group_sizes: Tuple[int, ...]
    inter: bool = True
    intra: bool = True
    dk_mode: DkMode = "parallel"
    attention: bool = True
    inter_slice: bool = False
    centroid: bool = True

    @property
    def inter_mlp(self) -> EqMlpParams:
        return EqMlpParams(len(self.group_sizes), self.channels, self.hidden,
                           pooled=not self.inter_slice, attention=self.attention)

    def intra_mlp(self, s: int) -> EqMlpParams:
        return EqMlpParams(self.group_sizes[s], self.channels, self.hidden, pooled=False, attention=self.attention)

    @property
    def dk_mlp(self) -> EqMlpParams:
        return EqMlpParams(3, self.channels, self.hidden, pooled=True, attention=self.attention)

    def init(self, store: ParamStore, prefix: str, rng: geom.Rng):
        c = self.channels
        if self.inter:
            self.inter_mlp.init(store, f"{prefix}.inter", rng.split("inter"))
        if self.intra:
            for s in range(len(self.group_sizes)):
                self.intra_mlp(s).init(store, f"{prefix}.intra.{s}", rng.split(f"intra.{s}"))
        if self.dk_mode == "parallel":
            self.dk_mlp.init(store, f"{prefix}.dk", rng.split("dk"))
        store.update(geom.LinearMap.init(c, c, rng.split("v_update")).named_arrays(f"{prefix}.v_update"))
        if self.centroid:
            phi_c = geom.LinearMap.init(c, c, rng.split("phi_c")).weights
            store.add(f"{prefix}.phi_c", project_centroid_columns(phi_c))

    def param_count(self) -> int:
        c = self.channels
        total = c * c
        if self.inter:
            total += self.inter_mlp.param_count()
        if self.intra:
            total += sum(self.intra_mlp(s).param_count() for s in range(len(self.group_sizes)))
        if self.dk_mode == "parallel":
            total += self.dk_mlp.param_count()
        if self.centroid:
            total += c * c
        return total

    @classmethod
    def for_topology(cls, topo: SkeletonTopology, channels: int, hidden: int, **flags) -> "GroupInteractionParams":
        return cls(topo.n_joints, channels, hidden, tuple(len(g) for g in topo.groups), **flags)


@dataclass
class BlockState:
    """Positions and velocities entering (or leaving) block `layer`"""
    X: Var
    V: Var
    layer: int = 0


def project_centroid_columns(weights: np.ndarray) -> np.ndarray:
    """Shift every output column of phi_c so its input weights sum to 1"""
    weights = np.asarray(weights, dtype=geom.DTYPE)
    gap = 1.0 - weights.sum(axis=0, keepdims=True)
    # already projected: leave the weights bit-identical
    if np.max(np.abs(gap)) <= PROJECTION_TOL:
        return weights
    return weights + gap / weights.shape[0]


def project_centroid_weights(store: ParamStore):
    for path in store:
        if path.endswith(".phi_c"):
            store.set(path, project_centroid_columns(store[path]))


def inter_group(scope: Scope, f: Var, topo: SkeletonTopology, p: GroupInteractionParams) -> Var:
    """
    Exchange resultant group forces

    Args:
        scope: Block scope
        f: (..., N, 3, C) forces
        topo: Skeleton topology
        p: Interaction shape declaration

    Returns:
        Var: f plus the shared output (or, with inter_slice, each joint's own group slice)
    """
    group_of = np.asarray(topo.group_of, dtype=np.intp)
    resultants = ad.scatter_add(f, group_of, topo.n_groups, axis=-3)
    delta = eqmlp_forward(scope.child("inter"), p.inter_mlp, resultants)
    if p.inter_slice:
        return f + ad.take(delta, group_of, axis=-3)
    return f + ad.reshape(delta, delta.shape[:-2] + (1, 3, p.channels))


def intra_group(scope: Scope, f: Var, topo: SkeletonTopology, p: GroupInteractionParams) -> Var:
    """Per-group residual: each joint receives its own intermediate of the group's equivariant MLP"""
    out = f
    for s, members in enumerate(topo.groups):
        idx = np.asarray(members, dtype=np.intp)
        delta = eqmlp_forward(scope.child("intra").child(s), p.intra_mlp(s), ad.take(f, idx, axis=-3))
        out = out + ad.scatter_add(delta, idx, topo.n_joints, axis=-3)
    return out


def parallel_dk(scope: Scope, f: Var, state: BlockState, topo: SkeletonTopology, p: GroupInteractionParams) -> Var:
    """
    Accelerations of all joints at once: a_j = f_j - eqmlp(f_j, r_ij, v_ij)

    The global root is its own parent, so its r and v are exactly zero.
    """
    parent = topo.parent_index()
    r = state.X - ad.take(state.X, parent, axis=-3)
    v = state.V - ad.take(state.V, parent, axis=-3)
    stacked = ad.stack([f, r, v], axis=-3)
    return f - eqmlp_forward(scope.child("dk"), p.dk_mlp, stacked)


def _squared_col_norm(r: Var) -> Var:
    return ad.clamp_min(ad.reduce_sum(ad.square(r), axis=-2, keepdims=True), geom.EPS)


def iterative_dk(f: Var, state: BlockState, topo: SkeletonTopology) -> Var:
    """
    Sequential parent-to-child propagation used by the iterative ablation

    Group roots take a = f. Every other joint, visited parents first, takes
    a_j = a_i + alpha x r + omega x v with alpha = r x (f_j - a_i) / |r|^2 and
    omega = r x v / |r|^2, per channel.
    """
    roots = set(topo.group_roots)
    acc: Dict[int, Var] = {}
    for j in topo.order:
        f_j = ad.take(f, [j], axis=-3)
        i = topo.parent[j]
        if j in roots or i is None:
            acc[j] = f_j
            continue
        r = ad.take(state.X, [j], axis=-3) - ad.take(state.X, [i], axis=-3)
        v = ad.take(state.V, [j], axis=-3) - ad.take(state.V, [i], axis=-3)
        norm2 = _squared_col_norm(r)
        alpha = ad.cross(r, f_j - acc[i]) / norm2
        omega = ad.cross(r, v) / norm2
        acc[j] = acc[i] + ad.cross(alpha, r) + ad.cross(omega, v)
    return ad.concat([acc[j] for j in range(topo.n_joints)], axis=-3)


def accelerations(scope: Scope, f: Var, state: BlockState, topo: SkeletonTopology, p: GroupInteractionParams) -> Var:
    if p.dk_mode == "parallel":
        return parallel_dk(scope, f, state, topo, p)
    if p.dk_mode == "iterative":
        return iterative_dk(f, state, topo)
    return f


def kinematics_update(scope: Scope, state: BlockState, a: Var) -> BlockState:
    """V' = V + v_update(a); X' = X + V'"""
    V_next = state.V + ad.matmul(a, scope("v_update"))
    return BlockState(state.X + V_next, V_next, state.layer + 1)


def centroid_update(scope: Scope, state: BlockState) -> Var:
    """Mean of phi_c(X) over joints and channels: (..., N, 3, C) -> (..., 3)"""
    return ad.reduce_mean(ad.matmul(state.X, scope("phi_c")), axis=(-3, -1))


def iterative_dk_oracle(a_root, chain: Sequence[int], X, V, f) -> np.ndarray:
    """
    Reference rigid-link propagation along one parent-to-leaf chain

    Args:
        a_root: Acceleration of chain[0], shape (3,) or (3, C)
        chain: Joint indices, each the parent of the next
        X: (N, 3[, C]) positions
        V: (N, 3[, C]) velocities
        f: (N, 3[, C]) forces per unit mass

    Returns:
        np.ndarray: (len(chain), 3[, C]) accelerations in chain order
    """
    squeeze = np.ndim(X) == 2
    X, V, f = (np.asarray(a, dtype=geom.DTYPE) for a in (X, V, f))
    if squeeze:
        X, V, f = X[..., None], V[..., None], f[..., None]
    a_root = np.asarray(a_root, dtype=geom.DTYPE).reshape(3, -1)
    if len(chain) == 0:
        raise ConfigurationError("chain must contain at least one joint")

    out = [np.broadcast_to(a_root, X.shape[1:]).copy()]
    for k in range(1, len(chain)):
        i, j = chain[k - 1], chain[k]
        r = X[j] - X[i]
        v = V[j] - V[i]
        norm2 = np.sum(r * r, axis=0)
        if np.any(np.sqrt(norm2) <= geom.EPS):
            raise DomainError(f"degenerate link {i}->{j}: |r| <= {geom.EPS}")
        a_i = out[-1]
        alpha = geom.cross_cols(r, f[j] - a_i) / norm2
        omega = geom.cross_cols(r, v) / norm2
        out.append(a_i + geom.cross_cols(alpha, r) + geom.cross_cols(omega, v))
    result = np.stack(out)
    return result[..., 0] if squeeze else result
