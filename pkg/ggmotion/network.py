"""
Network assembly: embedding, stacked blocks, output head.

Inputs are past frames shaped (..., N, 3, T_h); the frame axis plays the role
of the channel axis during embedding. Outputs are (..., N, 3, T_f).
"""
import logging
from typing import Tuple

import numpy as np

from ggmotion import autodiff as ad
from ggmotion import geom
from ggmotion.autodiff import ParamStore, Scope, Tape, Var
from ggmotion.errors import ConfigurationError, UsageError
from ggmotion.fields import FieldParams, motion_force
from ggmotion.group_dk import (
    BlockState,
    GroupInteractionParams,
    accelerations,
    centroid_update,
    inter_group,
    intra_group,
    kinematics_update,
)
from ggmotion.models import ModelConfig
from ggmotion.topology import SkeletonTopology

logger = logging.getLogger(__name__)


def block_params(cfg: ModelConfig, topo: SkeletonTopology) -> Tuple[FieldParams, GroupInteractionParams]:
    flags = cfg.ablation
    fields = FieldParams(topo.n_joints, cfg.channels, cfg.hidden, spatial=flags.spatial_field,
                         temporal=flags.temporal_field, scaling=flags.scaling_factors)
    group = GroupInteractionParams.for_topology(
        topo, cfg.channels, cfg.hidden,
        inter=flags.inter_group,
        intra=flags.intra_group,
        dk_mode=flags.dk_mode,
        attention=flags.attention_mlp,
        inter_slice=flags.inter_group_slice,
        centroid=flags.centroid_update,
    )
    return fields, group


def check_compatible(cfg: ModelConfig, topo: SkeletonTopology):
    if cfg.n_joints != topo.n_joints:
        raise ConfigurationError(f"model configured for {cfg.n_joints} joints, topology has {topo.n_joints}")


def init_params(cfg: ModelConfig, topo: SkeletonTopology) -> ParamStore:
    """
    Seeded parameter initialisation

    Args:
        cfg: Model configuration
        topo: Skeleton topology

    Returns:
        ParamStore: Every parameter under its stable path
    """
    check_compatible(cfg, topo)
    rng = geom.Rng(cfg.seed)
    store = ParamStore()
    c = cfg.channels
    store.add("embed.pos", geom.uniform_init(rng.split("embed.pos"), cfg.t_h, c))
    store.add("embed.vel", geom.uniform_init(rng.split("embed.vel"), cfg.t_h - 1, c))
    if cfg.ablation.coordinate_bias:
        store.add("embed.coord_bias", rng.split("embed.coord_bias").normal(0.0, 1.0, size=(3, c)))
    fields, group = block_params(cfg, topo)
    for layer in range(cfg.blocks):
        block_rng = rng.split(f"block.{layer}")
        fields.init(store, f"block.{layer}", block_rng)
        group.init(store, f"block.{layer}", block_rng)
    store.add("head", geom.uniform_init(rng.split("head"), c, cfg.t_f))
    logger.debug("Initialised %d parameters (%d arrays) with seed %d", store.count(), len(store), cfg.seed)
    return store


def expected_param_count(cfg: ModelConfig, topo: SkeletonTopology) -> int:
    fields, group = block_params(cfg, topo)
    c = cfg.channels
    embed = cfg.t_h * c + (cfg.t_h - 1) * c + (3 * c if cfg.ablation.coordinate_bias else 0)
    return embed + cfg.blocks * (fields.param_count() + group.param_count()) + c * cfg.t_f


def param_count(store: ParamStore) -> int:
    return store.count()


def _as_batch(x, cfg: ModelConfig) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=geom.DTYPE)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[-2] != 3:
        raise UsageError(f"expected past frames shaped (N, 3, T_h) or (B, N, 3, T_h), got {x.shape}")
    if x.shape[-1] != cfg.t_h:
        raise UsageError(f"model expects T_h={cfg.t_h} past frames, got {x.shape[-1]}")
    if x.shape[-3] != cfg.n_joints:
        raise UsageError(f"model expects {cfg.n_joints} joints, got {x.shape[-3]}")
    return x, single


def embed(scope: Scope, x: np.ndarray, cfg: ModelConfig) -> Tuple[BlockState, Var]:
    """
    Lift raw frames to C-channel geometric features

    Args:
        scope: Root scope
        x: (B, N, 3, T_h) past positions
        cfg: Model configuration

    Returns:
        tuple: (state at layer 0, centroid (B, 3) over joints and frames)
    """
    tape = scope.tape
    centroid = x.mean(axis=(-3, -1))
    anchored = tape.constant(x - centroid[..., None, :, None])
    X0 = ad.matmul(anchored, scope("embed.pos")) + centroid[..., None, :, None]
    if scope.has("embed.coord_bias"):
        X0 = X0 + scope("embed.coord_bias")
    V0 = ad.matmul(tape.constant(np.diff(x, axis=-1)), scope("embed.vel"))
    return BlockState(X0, V0, 0), tape.constant(centroid)


def run_block(scope: Scope, state: BlockState, centroid: Var, topo: SkeletonTopology,
              cfg: ModelConfig) -> Tuple[BlockState, Var]:
    fields, group = block_params(cfg, topo)
    f, _, _ = motion_force(scope, state.X, state.V, centroid, topo, fields)
    if group.inter:
        f = inter_group(scope, f, topo, group)
    if group.intra:
        f = intra_group(scope, f, topo, group)
    a = accelerations(scope, f, state, topo, group)
    state = kinematics_update(scope, state, a)
    if group.centroid:
        centroid = centroid_update(scope, state)
    return state, centroid


def trace_forward(tape: Tape, store: ParamStore, x, cfg: ModelConfig, topo: SkeletonTopology) -> Var:
    """
    Record the full network on a tape

    Args:
        tape: Tape to record on
        store: Parameters
        x: (B, N, 3, T_h) past positions (already scaled)
        cfg: Model configuration
        topo: Skeleton topology

    Returns:
        Var: (B, N, 3, T_f) predicted positions
    """
    check_compatible(cfg, topo)
    x, _ = _as_batch(x, cfg)
    root = Scope(tape, store)
    state, centroid = embed(root, x, cfg)
    for layer in range(cfg.blocks):
        state, centroid = run_block(root.child(f"block.{layer}"), state, centroid, topo, cfg)
    anchor = ad.reshape(centroid, centroid.shape[:-1] + (1, 3, 1))
    return ad.matmul(state.X - anchor, root("head")) + anchor


def forward(store: ParamStore, x, cfg: ModelConfig, topo: SkeletonTopology) -> np.ndarray:
    """Eager prediction; accepts a single (N, 3, T_h) window or a batch"""
    _, single = _as_batch(x, cfg)
    out = trace_forward(Tape(), store, x, cfg, topo).value
    return out[0] if single else out
