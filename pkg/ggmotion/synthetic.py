"""
Articulated rigid-body sequences with exact bone lengths.

Every joint carries a fixed rest direction and swings sinusoidally about a fixed
local axis; orientations compose from the root down the tree, so every
child-parent distance equals its configured bone length in every frame.
"""
import logging
from typing import Optional

import numpy as np

from ggmotion import geom
from ggmotion.errors import ConfigurationError
from ggmotion.file_handler import MotionSequence
from ggmotion.models import SynthConfig
from ggmotion.topology import SkeletonTopology, human22, topology_from_spec

logger = logging.getLogger(__name__)


def _per_joint(values, n: int, name: str, default: np.ndarray) -> np.ndarray:
    if values is None:
        return default
    if len(values) != n:
        raise ConfigurationError(f"{name} needs {n} entries, got {len(values)}")
    return np.asarray(values, dtype=geom.DTYPE)


def root_trajectory(cfg: SynthConfig, initial: np.ndarray) -> np.ndarray:
    """(T, 3) root positions: initial + drift * t / fps"""
    t = np.arange(cfg.frames, dtype=geom.DTYPE) / cfg.fps
    return initial[None, :] + t[:, None] * np.asarray(cfg.drift, dtype=geom.DTYPE)[None, :]


def synth_generate(cfg: SynthConfig, topo: Optional[SkeletonTopology] = None) -> MotionSequence:
    """
    Generate one sequence by forward kinematics

    Args:
        cfg: Generator settings; unset bone lengths, frequencies and amplitudes are drawn from the seed
        topo: Skeleton to animate (default: cfg.topology, else the 22-joint human layout)

    Returns:
        MotionSequence: Positions in millimetres with the skeleton's parent list attached
    """
    if topo is None:
        topo = topology_from_spec(cfg.topology) if cfg.topology is not None else human22()
    n = topo.n_joints
    rng = geom.Rng(cfg.seed).split("synth")

    bone_defaults = rng.split("bones").uniform(80.0, 250.0, size=n - 1)
    bones = _per_joint(cfg.bone_lengths, n - 1, "bone_lengths", bone_defaults)
    freq = _per_joint(cfg.frequencies, n, "frequencies", rng.split("freq").uniform(0.5, 3.0, size=n))
    amp = _per_joint(cfg.amplitudes, n, "amplitudes", rng.split("amp").uniform(0.1, 0.6, size=n))

    # bone_lengths follow joint-index order over non-root joints
    length = np.zeros(n)
    length[[j for j in range(n) if j != topo.root]] = bones

    t = np.arange(cfg.frames, dtype=geom.DTYPE) / cfg.fps
    positions = np.zeros((n, cfg.frames, 3))
    orientation = np.zeros((n, cfg.frames, 3, 3))
    initial = rng.split("origin").normal(0.0, 100.0, size=3)
    positions[topo.root] = root_trajectory(cfg, initial)
    orientation[topo.root] = np.eye(3)

    for j in topo.order:
        p = topo.parent[j]
        if p is None:
            continue
        joint_rng = rng.split(f"joint.{j}")
        rest = joint_rng.split("rest").unit_vector()
        axis = joint_rng.split("axis").unit_vector()
        phase = joint_rng.split("phase").uniform(0.0, 2.0 * np.pi)
        local = geom.rotation_about(axis, amp[j] * np.sin(freq[j] * t + phase))
        orientation[j] = orientation[p] @ local
        positions[j] = positions[p] + length[j] * (orientation[j] @ rest)

    logger.debug("Generated %d joints x %d frames (seed %d)", n, cfg.frames, cfg.seed)
    return MotionSequence(np.transpose(positions, (0, 2, 1)), cfg.fps, list(topo.parent))
