"""
Self-checks behind the check and gradcheck commands.
"""
import logging
from typing import Optional

import numpy as np

from ggmotion import autodiff as ad
from ggmotion import geom
from ggmotion import losses
from ggmotion import network
from ggmotion.autodiff import ParamStore, Tape
from ggmotion.file_handler import windows
from ggmotion.models import ModelConfig, SynthConfig
from ggmotion.synthetic import synth_generate
from ggmotion.topology import SkeletonTopology, chain

logger = logging.getLogger(__name__)


def transform(x: np.ndarray, rotation: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """R x + t on the coordinate axis of (..., 3, T) arrays"""
    return np.einsum("ij,...jt->...it", rotation, x) + shift[:, None]


def equivariance_report(store: ParamStore, cfg: ModelConfig, topo: SkeletonTopology, trials: int = 100,
                        tol: float = 1e-9, seed: int = 0, translation_only: bool = False,
                        x: Optional[np.ndarray] = None) -> dict:
    """
    Push random (R, t) pairs through the network and compare against R F(X) + t

    Odd trials use reflections (det R = -1). Deviations are relative to max |F(X)|.

    Returns:
        dict: max deviation, worst trial, reflection count and pass flag
    """
    rng = geom.Rng(seed).split("equivariance")
    if x is None:
        x = rng.split("input").normal(0.0, 1.0, size=(cfg.n_joints, 3, cfg.t_h))
    base = network.forward(store, x, cfg, topo)
    scale = max(float(np.max(np.abs(base))), geom.EPS)

    worst = {"trial": None, "deviation": 0.0, "det": None}
    reflections = 0
    for k in range(trials):
        trial_rng = rng.split(f"trial.{k}")
        shift = trial_rng.split("shift").normal(0.0, 1.0, size=3)
        if translation_only:
            rotation = np.eye(3)
        else:
            rotation = geom.sample_orthogonal(trial_rng.split("rotation"), reflect=bool(k % 2))
        reflections += int(np.linalg.det(rotation) < 0)
        out = network.forward(store, transform(x, rotation, shift), cfg, topo)
        deviation = float(np.max(np.abs(out - transform(base, rotation, shift)))) / scale
        if worst["trial"] is None or deviation > worst["deviation"]:
            worst = {"trial": k, "deviation": deviation, "det": float(np.linalg.det(rotation))}

    report = {
        "trials": trials,
        "tolerance": tol,
        "reflections": reflections,
        "output_scale": scale,
        "max_deviation": worst["deviation"],
        "worst_trial": worst,
        "passed": worst["deviation"] <= tol,
    }
    logger.info("Equivariance: max relative deviation %.3e over %d trials (%s)",
                report["max_deviation"], trials, "pass" if report["passed"] else "FAIL")
    return report


def toy_problem(seed: int = 0):
    """Small chain model plus a two-window batch in model units"""
    topo = chain(5, 2)
    cfg = ModelConfig(n_joints=5, t_h=4, t_f=3, channels=4, hidden=4, blocks=2, seed=seed)
    seq = synth_generate(SynthConfig(frames=12, seed=seed), topo)
    pairs = windows(seq, cfg.t_h, cfg.t_f, stride=3)[:2]
    past = np.stack([p for p, _ in pairs]) * 1e-3
    future = np.stack([f for _, f in pairs]) * 1e-3
    return cfg, topo, past, future


def gradcheck_report(seed: int = 0, coords: int = 200, h: float = 1e-5, rtol: float = 1e-4,
                     aux: str = "literal") -> dict:
    """Finite-difference check of the full L_pos + L_aux objective on the toy problem"""
    cfg, topo, past, future = toy_problem(seed)
    store = network.init_params(cfg, topo)

    def program(tape: Tape, params: ParamStore):
        pred = network.trace_forward(tape, params, past, cfg, topo)
        total, _, _ = losses.trace_objective(pred, future, topo, aux)
        return total

    report = ad.grad_check(program, store, geom.Rng(seed).split("gradcheck"), coords, h=h, rtol=rtol)
    logger.info("Gradient check: %d/%d coordinates within tolerance, max relative error %.3e",
                coords - report.failures, coords, report.max_rel_error)
    return report.to_dict()
