"""
Ablation harness: train structural variants on the same synthetic data and
report them side by side.
"""
import logging
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ggmotion import losses
from ggmotion import network
from ggmotion.errors import UsageError
from ggmotion.file_handler import windows
from ggmotion.models import ModelConfig, SynthConfig, TrainConfig
from ggmotion.synthetic import synth_generate
from ggmotion.topology import HUMAN22_GROUPS, SkeletonTopology, chain, human22
from ggmotion.training import evaluate, split_windows, stack_windows, train

logger = logging.getLogger(__name__)

AXES = ("field", "group", "dk", "loss", "blocks", "mlp", "centroid", "scaling")

# (variant name, ablation flag overrides, train overrides, model overrides, group count or None)
Variant = Tuple[str, dict, dict, dict, Optional[int]]


def variants_for(axis: str, topo: SkeletonTopology) -> List[Variant]:
    if axis == "field":
        return [
            ("full", {}, {}, {}, None),
            ("spatial_only", {"temporal_field": False}, {}, {}, None),
            ("temporal_only", {"spatial_field": False}, {}, {}, None),
            ("no_field", {"spatial_field": False, "temporal_field": False}, {}, {}, None),
        ]
    if axis == "group":
        counts = sorted(HUMAN22_GROUPS) if topo.n_joints == 22 else [s for s in (1, 2, 5, 6) if s <= topo.n_joints]
        out: List[Variant] = [(f"groups_{s}", {}, {}, {}, s) for s in counts]
        out.append(("no_inter", {"inter_group": False}, {}, {}, None))
        out.append(("no_intra", {"intra_group": False}, {}, {}, None))
        out.append(("inter_slice", {"inter_group_slice": True}, {}, {}, None))
        return out
    if axis == "dk":
        return [(mode, {"dk_mode": mode}, {}, {}, None) for mode in ("parallel", "iterative", "none")]
    if axis == "loss":
        return [(aux, {}, {"aux_loss": aux}, {}, None) for aux in ("literal", "bone_length", "off")]
    if axis == "blocks":
        return [(f"blocks_{b}", {}, {}, {"blocks": b}, None) for b in range(1, 6)]
    if axis == "mlp":
        return [("attention", {}, {}, {}, None), ("replace_mlp", {"attention_mlp": False}, {}, {}, None)]
    if axis == "centroid":
        return [("centroid_update", {}, {}, {}, None), ("fixed_centroid", {"centroid_update": False}, {}, {}, None)]
    if axis == "scaling":
        return [("scaled", {}, {}, {}, None), ("unscaled", {"scaling_factors": False}, {}, {}, None)]
    raise UsageError(f"unknown ablation axis {axis!r} (choose from {', '.join(AXES)})")


def regroup(topo: SkeletonTopology, n_groups: int) -> SkeletonTopology:
    """Same skeleton under another group layout (22-joint human or serial chain only)"""
    if topo.n_joints == 22 and list(topo.parent) == list(human22().parent):
        return human22(n_groups)
    if list(topo.parent) == [None] + list(range(topo.n_joints - 1)):
        return chain(topo.n_joints, n_groups)
    raise UsageError("the group axis needs the 22-joint human skeleton or a serial chain")


def run_variant(name: str, model_cfg: ModelConfig, train_cfg: TrainConfig, topo: SkeletonTopology,
                data: Tuple[list, list, list]) -> dict:
    train_w, _, test_w = data
    eval_w = test_w or train_w
    started = time.perf_counter()
    result = train(model_cfg, train_cfg, topo, train_w)
    per_step = (time.perf_counter() - started) / max(result.steps, 1)

    past, future = stack_windows(eval_w)
    pred = network.forward(result.params, past * train_cfg.input_scale, model_cfg, topo) / train_cfg.input_scale
    row = {
        "name": name,
        "param_count": network.param_count(result.params),
        "steps": result.steps,
        "sec_per_step": per_step,
        "final_train_mpjpe": evaluate(result.params, model_cfg, topo, train_w, train_cfg.input_scale)["mean"],
        "test_mpjpe": losses.mpjpe(pred, future),
        "bone_length_drift": losses.bone_length_drift(pred, topo, truth=future),
        "final_loss_pos": result.history[-1]["loss_pos"],
    }
    logger.info("Variant %s: train MPJPE %.3f mm, %.4f s/step", name, row["final_train_mpjpe"], per_step)
    return row


def _average(rows: List[dict]) -> dict:
    merged = dict(rows[0])
    for key, value in rows[0].items():
        if isinstance(value, float):
            merged[key] = float(np.mean([row[key] for row in rows]))
    merged["seeds"] = len(rows)
    return merged


def orderings(axis: str, rows: Dict[str, dict]) -> dict:
    """Expected qualitative comparisons per axis; None when a variant is missing"""
    def le(a: str, b: str, key: str = "final_train_mpjpe", strict: bool = False):
        if a not in rows or b not in rows:
            return None
        return rows[a][key] < rows[b][key] if strict else rows[a][key] <= rows[b][key]

    if axis == "field":
        return {
            "full<=spatial_only": le("full", "spatial_only"),
            "full<=temporal_only": le("full", "temporal_only"),
            "spatial_only<=no_field": le("spatial_only", "no_field"),
            "temporal_only<=no_field": le("temporal_only", "no_field"),
        }
    if axis == "dk":
        return {"parallel<=iterative (s/step)": le("parallel", "iterative", "sec_per_step")}
    if axis == "loss":
        # literal is reported alongside; bone_length is the expected winner
        return {
            "bone_length<off (bone drift)": le("bone_length", "off", "bone_length_drift", strict=True),
            "literal<off (bone drift)": le("literal", "off", "bone_length_drift", strict=True),
        }
    return {}


def ablate(axis: str, model_cfg: ModelConfig, train_cfg: TrainConfig, synth_cfg: SynthConfig,
           topo: SkeletonTopology, seeds: Sequence[int] = (0,), stride: int = 1) -> dict:
    """
    Train every variant of one axis on the same synthetic split

    Args:
        axis: One of AXES
        model_cfg: Base model configuration
        train_cfg: Base training configuration
        synth_cfg: Data generator settings
        topo: Base skeleton
        seeds: Seeds to average over (data, initialisation and shuffling)
        stride: Window stride

    Returns:
        dict: {"axis", "variants": [...], "orderings": {...}}
    """
    plan = variants_for(axis, topo)
    collected: Dict[str, List[dict]] = {name: [] for name, *_ in plan}
    for seed in seeds:
        seq = synth_generate(synth_cfg.model_copy(update={"seed": seed}), topo)
        data = split_windows(windows(seq, model_cfg.t_h, model_cfg.t_f, stride), seed)
        for name, flags, train_over, model_over, n_groups in plan:
            ablation = model_cfg.ablation.model_copy(update=flags)
            cfg = model_cfg.model_copy(update={**model_over, "ablation": ablation, "seed": seed})
            tcfg = train_cfg.model_copy(update={**train_over, "seed": seed})
            variant_topo = regroup(topo, n_groups) if n_groups is not None else topo
            collected[name].append(run_variant(name, cfg, tcfg, variant_topo, data))
    rows = {name: _average(found) for name, found in collected.items()}
    return {"axis": axis, "variants": [rows[name] for name, *_ in plan], "orderings": orderings(axis, rows)}
