"""
Optimisation: Adam with per-epoch decay, micro-batched gradients, evaluation.

Micro-batches are independent tapes. Their gradients are summed in micro-batch
order regardless of which worker finished first, so the history does not
depend on the thread count.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ggmotion import geom
from ggmotion import losses
from ggmotion import network
from ggmotion.autodiff import ParamStore, Tape
from ggmotion.errors import NumericalError, UsageError
from ggmotion.group_dk import project_centroid_weights
from ggmotion.models import ModelConfig, TrainConfig
from ggmotion.topology import SkeletonTopology

logger = logging.getLogger(__name__)

Window = Tuple[np.ndarray, np.ndarray]


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, store: ParamStore) -> "AdamState":
        return cls({p: np.zeros_like(store[p]) for p in store}, {p: np.zeros_like(store[p]) for p in store})


@dataclass
class TrainResult:
    params: ParamStore
    history: List[dict] = field(default_factory=list)
    steps: int = 0
    wall_time_s: float = 0.0


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate in effect during (0-based) epoch"""
    return cfg.lr * cfg.lr_decay ** epoch


def adam_step(store: ParamStore, state: AdamState, cfg: TrainConfig, lr: Optional[float] = None) -> AdamState:
    """
    One bias-corrected Adam update from store.grads, followed by the centroid-map projection

    Args:
        store: Parameters (updated in place)
        state: Moment estimates (updated in place)
        cfg: Supplies beta1, beta2, eps and the default lr
        lr: Learning rate for this step

    Returns:
        AdamState: The advanced state
    """
    lr = cfg.lr if lr is None else lr
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    correct1 = 1.0 - b1 ** state.step
    correct2 = 1.0 - b2 ** state.step
    for path in store:
        g = store.grads[path]
        state.m[path] = b1 * state.m[path] + (1.0 - b1) * g
        state.v[path] = b2 * state.v[path] + (1.0 - b2) * g * g
        m_hat = state.m[path] / correct1
        v_hat = state.v[path] / correct2
        store.values[path] = store.values[path] - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    project_centroid_weights(store)
    return state


def stack_windows(windows: Sequence[Window]) -> Tuple[np.ndarray, np.ndarray]:
    if not windows:
        raise UsageError("dataset contains no windows")
    past = np.stack([np.asarray(w[0], dtype=geom.DTYPE) for w in windows])
    future = np.stack([np.asarray(w[1], dtype=geom.DTYPE) for w in windows])
    return past, future


def split_windows(windows: Sequence[Window], seed: int = 0) -> Tuple[List[Window], List[Window], List[Window]]:
    """Seeded 80/10/10 split by window index: (train, validation, test)"""
    order = geom.Rng(seed).split("split").permutation(len(windows))
    n_hold = len(windows) // 10
    val = [windows[i] for i in order[:n_hold]]
    test = [windows[i] for i in order[n_hold:2 * n_hold]]
    train = [windows[i] for i in order[2 * n_hold:]]
    return train, val, test


def _micro_batch(store: ParamStore, model_cfg: ModelConfig, topo: SkeletonTopology, past: np.ndarray,
                 future: np.ndarray, aux: str, weight: float):
    tape = Tape()
    pred = network.trace_forward(tape, store, past, model_cfg, topo)
    total, pos, extra = losses.trace_objective(pred, future, topo, aux)
    loss = total * weight
    return float(pos.value), float(extra.value), tape.param_gradients(loss, store)


def batch_gradients(store: ParamStore, model_cfg: ModelConfig, train_cfg: TrainConfig, topo: SkeletonTopology,
                    past: np.ndarray, future: np.ndarray,
                    pool: Optional[ThreadPoolExecutor] = None) -> Tuple[float, float]:
    """
    Fill store.grads with the gradient of the batch-mean objective

    Args:
        store: Parameters
        model_cfg: Model configuration
        train_cfg: Supplies micro_batch and aux_loss
        topo: Skeleton topology
        past: (B, N, 3, T_h) scaled inputs
        future: (B, N, 3, T_f) scaled targets
        pool: Optional executor for the micro-batches

    Returns:
        tuple: Batch-mean position and auxiliary losses
    """
    size = past.shape[0]
    bounds = list(range(0, size, train_cfg.micro_batch)) + [size]
    jobs = [(past[lo:hi], future[lo:hi], (hi - lo) / size) for lo, hi in zip(bounds[:-1], bounds[1:])]

    def run(job):
        return _micro_batch(store, model_cfg, topo, job[0], job[1], train_cfg.aux_loss, job[2])

    results = list(pool.map(run, jobs)) if pool is not None else [run(job) for job in jobs]
    pos = aux = 0.0
    store.zero_grad()
    for (p, a, grads), (_, _, weight) in zip(results, jobs):
        pos += p * weight
        aux += a * weight
        for path, g in grads.items():
            store.grads[path] = store.grads[path] + g
    return pos, aux


def evaluate(store: ParamStore, model_cfg: ModelConfig, topo: SkeletonTopology, windows: Sequence[Window],
             input_scale: float = 1e-3, batch_size: int = 64) -> dict:
    """
    MPJPE of the model on windows given in millimetres

    Returns:
        dict: {"per_frame": [mm per future frame], "mean": mm}
    """
    past, future = stack_windows(windows)
    preds = []
    for lo in range(0, past.shape[0], batch_size):
        preds.append(network.forward(store, past[lo:lo + batch_size] * input_scale, model_cfg, topo) / input_scale)
    pred = np.concatenate(preds)
    per_frame = losses.mpjpe_per_frame(pred, future)
    return {"per_frame": [float(x) for x in per_frame], "mean": losses.mpjpe(pred, future)}


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, topo: SkeletonTopology, windows: Sequence[Window],
          val_windows: Optional[Sequence[Window]] = None, params: Optional[ParamStore] = None) -> TrainResult:
    """
    Minimise L_pos + L_aux with Adam, decaying the learning rate once per epoch

    Args:
        model_cfg: Model configuration
        train_cfg: Optimisation settings
        topo: Skeleton topology
        windows: Training (past, future) pairs in millimetres
        val_windows: Optional validation pairs for the per-epoch MPJPE
        params: Starting parameters (default: fresh seeded initialisation)

    Returns:
        TrainResult: Final parameters, one history row per epoch, optimizer step count
    """
    if not windows:
        raise UsageError("cannot train on an empty dataset")
    network.check_compatible(model_cfg, topo)
    past, future = stack_windows(windows)
    if past.shape[-1] != model_cfg.t_h or future.shape[-1] != model_cfg.t_f:
        raise UsageError(f"windows hold {past.shape[-1]}+{future.shape[-1]} frames, "
                         f"model expects {model_cfg.t_h}+{model_cfg.t_f}")
    past = past * train_cfg.input_scale
    future = future * train_cfg.input_scale

    store = params if params is not None else network.init_params(model_cfg, topo)
    state = AdamState.zeros_like(store)
    shuffle = geom.Rng(train_cfg.seed).split("shuffle")
    result = TrainResult(store)
    started = time.perf_counter()
    pool = ThreadPoolExecutor(max_workers=train_cfg.threads) if train_cfg.threads > 1 else None
    try:
        for epoch in range(train_cfg.epochs):
            lr = lr_at(train_cfg, epoch)
            order = shuffle.permutation(past.shape[0])
            pos_sum = aux_sum = 0.0
            n_batches = 0
            for lo in range(0, len(order), train_cfg.batch_size):
                idx = order[lo:lo + train_cfg.batch_size]
                pos, aux = batch_gradients(store, model_cfg, train_cfg, topo, past[idx], future[idx], pool)
                if not np.isfinite(pos + aux):
                    raise NumericalError("non-finite training loss", step=result.steps)
                adam_step(store, state, train_cfg, lr)
                result.steps += 1
                pos_sum += pos
                aux_sum += aux
                n_batches += 1
                if train_cfg.max_steps is not None and result.steps >= train_cfg.max_steps:
                    break
            val = None
            if val_windows:
                val = evaluate(store, model_cfg, topo, val_windows, train_cfg.input_scale)["mean"]
            row = {
                "epoch": epoch,
                "loss_pos": pos_sum / n_batches,
                "loss_aux": aux_sum / n_batches,
                "val_mpjpe": val,
                "lr": lr,
            }
            result.history.append(row)
            logger.info("epoch %d: loss_pos=%.6g loss_aux=%.6g val_mpjpe=%s lr=%.3g",
                        epoch, row["loss_pos"], row["loss_aux"], "n/a" if val is None else f"{val:.3f}", lr)
            if train_cfg.max_steps is not None and result.steps >= train_cfg.max_steps:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    result.wall_time_s = time.perf_counter() - started
    return result
