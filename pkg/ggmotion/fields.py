"""
Spatio-temporal radial field.

A joint's motion force is its velocity plus weighted direction vectors: towards
its skeleton neighbours (spatial field) and towards the pose centroid (temporal
field). Weights come from column norms only, so both fields are invariant to
translation and equivariant under O(3).
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from ggmotion import autodiff as ad
from ggmotion import geom
from ggmotion.autodiff import ParamStore, Scope, Var
from ggmotion.eqmlp import invariant_mlp
from ggmotion.errors import ConfigurationError
from ggmotion.topology import SkeletonTopology, hop_table

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FieldParams:
    """
    Shape declaration of one block's field parameters

    Paths below the block prefix:
        spatial.phi_e.{w1,b1,w2}, spatial.phi_lin, spatial.phi_att, spatial.beta
        temporal.phi_m.{w1,b1,w2}, temporal.phi_lin, temporal.gamma
    beta and gamma only exist when scaling is on; otherwise they are fixed to 1.
    """
    n_joints: int
    channels: int
    hidden: int
    spatial: bool = True
    temporal: bool = True
    scaling: bool = True

    def init(self, store: ParamStore, prefix: str, rng: geom.Rng):
        n, c, h = self.n_joints, self.channels, self.hidden
        if self.spatial:
            r = rng.split("spatial")
            store.update(geom.InvariantMlp.init(c, h, c, r.split("phi_e")).named_arrays(f"{prefix}.spatial.phi_e"))
            store.update(geom.LinearMap.init(c, c, r.split("phi_lin")).named_arrays(f"{prefix}.spatial.phi_lin"))
            store.update(geom.LinearMap.init(h, 1, r.split("phi_att")).named_arrays(f"{prefix}.spatial.phi_att"))
            if self.scaling:
                store.add(f"{prefix}.spatial.beta", np.ones((n, c)))
        if self.temporal:
            r = rng.split("temporal")
            store.update(geom.InvariantMlp.init(c, h, c, r.split("phi_m")).named_arrays(f"{prefix}.temporal.phi_m"))
            store.update(geom.LinearMap.init(c, c, r.split("phi_lin")).named_arrays(f"{prefix}.temporal.phi_lin"))
            if self.scaling:
                store.add(f"{prefix}.temporal.gamma", np.ones((n, c)))

    def param_count(self) -> int:
        n, c, h = self.n_joints, self.channels, self.hidden
        mlp = c * h + h + h * c
        scale = n * c if self.scaling else 0
        total = 0
        if self.spatial:
            total += mlp + c * c + h + scale
        if self.temporal:
            total += mlp + c * c + scale
        return total


@dataclass(frozen=True)
class FieldGeometry:
    """Topology-derived constants of the spatial field"""
    src: np.ndarray
    dst: np.ndarray
    # hop embedding of (group root -> joint m), one row per joint
    hop_rows: np.ndarray
    # membership[i, m] = 1 when m is a non-root member of i's group
    membership: np.ndarray


@lru_cache(maxsize=64)
def field_geometry(topo: SkeletonTopology, hidden: int) -> FieldGeometry:
    table = hop_table(topo, hidden)
    n = topo.n_joints
    hop_rows = np.zeros((n, hidden))
    membership = np.zeros((n, n))
    roots = topo.group_roots
    for m in range(n):
        s = topo.group_of[m]
        hop_rows[m] = table[topo.hop[roots[s], m]]
    for i in range(n):
        for m in topo.groups[topo.group_of[i]]:
            if m != roots[topo.group_of[i]]:
                membership[i, m] = 1.0
    src, dst = topo.edges()
    return FieldGeometry(src, dst, hop_rows, membership)


def _check_shapes(X: Var, V: Var, p: FieldParams):
    if X.shape != V.shape:
        raise ConfigurationError(f"positions {X.shape} and velocities {V.shape} differ in shape")
    if X.ndim < 3 or X.shape[-3:] != (p.n_joints, 3, p.channels):
        raise ConfigurationError(f"field expects (..., {p.n_joints}, 3, {p.channels}) features, got {X.shape}")


def hop_attention(scope: Scope, geometry: FieldGeometry) -> Var:
    """Per-joint gate: sum of sigmoid(phi_att(hop embedding)) over the non-root members of the joint's group"""
    tape = scope.tape
    gates = ad.sigmoid(ad.matmul(tape.constant(geometry.hop_rows), scope("phi_att")))
    return ad.matmul(tape.constant(geometry.membership), gates)


def spatial_field(scope: Scope, X: Var, V: Var, topo: SkeletonTopology, p: FieldParams) -> Var:
    """
    Neighbour term of the motion force

    Args:
        scope: Block scope (parameters under "spatial")
        X: (..., N, 3, C) positions
        V: (..., N, 3, C) velocities
        topo: Skeleton topology
        p: Field shape declaration

    Returns:
        Var: V + gate * sum_j e_ij * phi_lin(X_i - X_j)
    """
    _check_shapes(X, V, p)
    geometry = field_geometry(topo, p.hidden)
    if geometry.src.size == 0:
        return V
    scope = scope.child("spatial")
    diff = ad.take(X, geometry.src, axis=-3) - ad.take(X, geometry.dst, axis=-3)
    e = invariant_mlp(scope.child("phi_e"), ad.col_norm(diff))
    if p.scaling:
        e = e * ad.take(scope("beta"), geometry.src, axis=0)
    msg = ad.reshape(e, e.shape[:-1] + (1, p.channels)) * ad.matmul(diff, scope("phi_lin"))
    agg = ad.scatter_add(msg, geometry.src, p.n_joints, axis=-3)
    gate = ad.reshape(hop_attention(scope, geometry), (p.n_joints, 1, 1))
    return V + agg * gate


def temporal_field(scope: Scope, X: Var, V: Var, centroid: Var, p: FieldParams) -> Var:
    """
    Centroid term of the motion force

    Args:
        scope: Block scope (parameters under "temporal")
        X: (..., N, 3, C) positions
        V: (..., N, 3, C) velocities
        centroid: (..., 3) centroid of the current layer
        p: Field shape declaration

    Returns:
        Var: V + m_i * phi_lin(X_i - centroid)
    """
    _check_shapes(X, V, p)
    if centroid.shape != X.shape[:-3] + (3,):
        raise ConfigurationError(f"centroid shape {centroid.shape} does not match features {X.shape}")
    scope = scope.child("temporal")
    diff = X - ad.reshape(centroid, centroid.shape[:-1] + (1, 3, 1))
    m = invariant_mlp(scope.child("phi_m"), ad.col_norm(diff))
    if p.scaling:
        m = m * scope("gamma")
    return V + ad.reshape(m, m.shape[:-1] + (1, p.channels)) * ad.matmul(diff, scope("phi_lin"))


def total_force(f_spatial: Optional[Var], f_temporal: Optional[Var], V: Var) -> Var:
    """Sum of the active fields; velocities stand in when both fields are switched off"""
    if f_spatial is None and f_temporal is None:
        return V
    if f_spatial is None:
        return f_temporal
    if f_temporal is None:
        return f_spatial
    return f_spatial + f_temporal


def motion_force(scope: Scope, X: Var, V: Var, centroid: Var, topo: SkeletonTopology,
                 p: FieldParams) -> Tuple[Var, Optional[Var], Optional[Var]]:
    f_spatial = spatial_field(scope, X, V, topo, p) if p.spatial else None
    f_temporal = temporal_field(scope, X, V, centroid, p) if p.temporal else None
    return total_force(f_spatial, f_temporal, V), f_spatial, f_temporal
