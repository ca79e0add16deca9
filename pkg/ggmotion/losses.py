"""
Training objectives and evaluation metrics.

Sequences are (..., N, 3, T): joints, coordinates, frames. Eager functions take
numpy arrays; the trace_* counterparts record the same formulas on a tape.
"""
from typing import Optional

import numpy as np

from ggmotion import autodiff as ad
from ggmotion import geom
from ggmotion.autodiff import Var
from ggmotion.errors import ConfigurationError
from ggmotion.topology import SkeletonTopology


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=geom.DTYPE)
    truth = np.asarray(truth, dtype=geom.DTYPE)
    if pred.shape != truth.shape:
        raise ConfigurationError(f"prediction {pred.shape} and ground truth {truth.shape} differ in shape")
    if pred.ndim < 3 or pred.shape[-2] != 3:
        raise ConfigurationError(f"sequences must be shaped (..., N, 3, T), got {pred.shape}")
    return pred, truth


def _bone_index(topo: SkeletonTopology):
    bones = topo.bones()
    child = np.array([c for c, _ in bones], dtype=np.intp)
    parent = np.array([p for _, p in bones], dtype=np.intp)
    return child, parent


def loss_pos(pred, truth) -> float:
    """Mean L2 distance per joint and frame"""
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.sqrt(np.sum((pred - truth) ** 2, axis=-2))))


def loss_aux(pred, truth, topo: SkeletonTopology) -> float:
    """
    Mean L1 distance between each predicted child joint and its ground-truth parent

    Args:
        pred: (..., N, 3, T) prediction
        truth: (..., N, 3, T) ground truth
        topo: Skeleton topology

    Returns:
        float: Sum over bones and frames / (T * (N - 1)), averaged over leading axes; 0 for N = 1
    """
    pred, truth = _pair(pred, truth)
    if topo.n_joints == 1:
        return 0.0
    child, parent = _bone_index(topo)
    l1 = np.sum(np.abs(pred[..., child, :, :] - truth[..., parent, :, :]), axis=-2)
    return float(np.mean(l1))


def loss_bone_length(pred, truth, topo: SkeletonTopology) -> float:
    """Mean |predicted bone length - true bone length|"""
    pred, truth = _pair(pred, truth)
    if topo.n_joints == 1:
        return 0.0
    child, parent = _bone_index(topo)
    pred_len = np.sqrt(np.sum((pred[..., child, :, :] - pred[..., parent, :, :]) ** 2, axis=-2))
    true_len = np.sqrt(np.sum((truth[..., child, :, :] - truth[..., parent, :, :]) ** 2, axis=-2))
    return float(np.mean(np.abs(pred_len - true_len)))


def mpjpe_per_frame(pred, truth, scale: float = 1.0) -> np.ndarray:
    """Mean per-joint position error for every future frame, in millimetres"""
    pred, truth = _pair(pred, truth)
    err = np.sqrt(np.sum((pred - truth) ** 2, axis=-2))
    err = err.reshape(-1, err.shape[-1])
    return err.mean(axis=0) / scale


def mpjpe(pred, truth, scale: float = 1.0) -> float:
    """
    Mean per-joint position error

    Args:
        pred: Prediction
        truth: Ground truth
        scale: Model units per millimetre (the input scale when arrays are in model units)

    Returns:
        float: Error in millimetres
    """
    return loss_pos(pred, truth) / scale


def bone_length_drift(pred, topo: SkeletonTopology, truth: Optional[np.ndarray] = None) -> float:
    """
    Mean deviation of predicted bone lengths from their reference lengths

    The reference is the ground-truth bone length when truth is given, else the
    first predicted frame.
    """
    pred = np.asarray(pred, dtype=geom.DTYPE)
    if topo.n_joints == 1:
        return 0.0
    child, parent = _bone_index(topo)
    lengths = np.sqrt(np.sum((pred[..., child, :, :] - pred[..., parent, :, :]) ** 2, axis=-2))
    if truth is None:
        reference = lengths[..., :1]
    else:
        truth = np.asarray(truth, dtype=geom.DTYPE)
        reference = np.sqrt(np.sum((truth[..., child, :, :] - truth[..., parent, :, :]) ** 2, axis=-2))
    return float(np.mean(np.abs(lengths - reference)))


def trace_loss_pos(pred: Var, truth: np.ndarray) -> Var:
    return ad.reduce_mean(ad.col_norm(pred - truth))


def trace_loss_aux(pred: Var, truth: np.ndarray, topo: SkeletonTopology) -> Var:
    if topo.n_joints == 1:
        return pred.tape.constant(0.0)
    child, parent = _bone_index(topo)
    gap = ad.take(pred, child, axis=-3) - truth[..., parent, :, :]
    return ad.reduce_mean(ad.reduce_sum(ad.absolute(gap), axis=-2))


def trace_loss_bone_length(pred: Var, truth: np.ndarray, topo: SkeletonTopology) -> Var:
    if topo.n_joints == 1:
        return pred.tape.constant(0.0)
    child, parent = _bone_index(topo)
    true_len = np.sqrt(np.sum((truth[..., child, :, :] - truth[..., parent, :, :]) ** 2, axis=-2))
    pred_len = ad.col_norm(ad.take(pred, child, axis=-3) - ad.take(pred, parent, axis=-3))
    return ad.reduce_mean(ad.absolute(pred_len - true_len))


def trace_objective(pred: Var, truth: np.ndarray, topo: SkeletonTopology, aux: str = "literal"):
    """
    Total objective L_pos + L_aux

    Returns:
        tuple: (total, position term, auxiliary term) as Vars
    """
    pos = trace_loss_pos(pred, truth)
    if aux == "literal":
        extra = trace_loss_aux(pred, truth, topo)
    elif aux == "bone_length":
        extra = trace_loss_bone_length(pred, truth, topo)
    elif aux == "off":
        extra = pred.tape.constant(0.0)
    else:
        raise ConfigurationError(f"unknown auxiliary loss {aux!r}")
    return pos + extra, pos, extra
