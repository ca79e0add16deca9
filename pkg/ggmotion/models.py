from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# Structure switches used by the ablation harness
class AblationFlags(BaseModel):
    """Which parts of a block are active; defaults describe the full network"""
    model_config = ConfigDict(extra="forbid")

    spatial_field: bool = True
    temporal_field: bool = True
    scaling_factors: bool = True
    centroid_update: bool = True
    inter_group: bool = True
    intra_group: bool = True
    dk_mode: Literal["parallel", "iterative", "none"] = "parallel"
    attention_mlp: bool = True
    # Each joint receives only its own group's slice of the inter-group output
    inter_group_slice: bool = False
    # Fault injection for the equivariance checker: bias on the coordinate axis
    coordinate_bias: bool = False


class TopologySpec(BaseModel):
    model_config = ConfigDict(extra="ignore")

    n_joints: Optional[int] = None
    parent: List[Optional[int]]
    groups: List[List[int]]

    @model_validator(mode="after")
    def check_joint_count(self):
        if self.n_joints is not None and self.n_joints != len(self.parent):
            raise ValueError(f"n_joints={self.n_joints} but parent list has {len(self.parent)} entries")
        return self


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_joints: int = Field(22, gt=0)
    t_h: int = Field(10, ge=2)
    t_f: int = Field(10, gt=0)
    channels: int = Field(16, gt=0)
    hidden: int = Field(32, gt=0)
    blocks: int = Field(4, ge=1)
    seed: int = 0
    ablation: AblationFlags = Field(default_factory=AblationFlags)

    @field_validator("hidden")
    @classmethod
    def hidden_is_even(cls, value):
        if value % 2:
            raise ValueError("hidden width C' must be even for the sinusoidal hop embedding")
        return value


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(50, gt=0)
    batch_size: int = Field(64, gt=0)
    micro_batch: int = Field(8, gt=0)
    lr: float = Field(3e-4, gt=0)
    lr_decay: float = Field(0.88, gt=0, le=1)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    input_scale: float = Field(1e-3, gt=0)
    aux_loss: Literal["literal", "bone_length", "off"] = "literal"
    max_steps: Optional[int] = Field(None, gt=0)
    window_stride: int = Field(1, gt=0)
    threads: int = Field(1, gt=0)
    seed: int = 0


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    topology: Optional[TopologySpec] = None
    # One entry per non-root joint, in joint-index order (mm)
    bone_lengths: Optional[List[float]] = None
    # Per-joint angular frequency (rad/s) and amplitude (rad)
    frequencies: Optional[List[float]] = None
    amplitudes: Optional[List[float]] = None
    drift: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)
    frames: int = Field(120, gt=0)
    fps: float = Field(25.0, gt=0)
    seed: int = 0

    @field_validator("bone_lengths")
    @classmethod
    def bones_positive(cls, value):
        if value is not None and any(length <= 0 for length in value):
            raise ValueError("bone lengths must be > 0")
        return value

    @field_validator("frequencies")
    @classmethod
    def frequencies_non_negative(cls, value):
        if value is not None and any(freq < 0 for freq in value):
            raise ValueError("frequencies must be >= 0")
        return value


class RunManifest(BaseModel):
    command: str
    config: Dict[str, object] = Field(default_factory=dict)
    seed: Optional[int] = None
    artifacts: Dict[str, str] = Field(default_factory=dict)
    started_at: str
    wall_time_s: float = 0.0
    exit_status: int = 0
