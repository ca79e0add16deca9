import os
import json
import struct
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ggmotion import geom
from ggmotion.errors import SequenceFormatError, UsageError
from ggmotion.utils import read_json, write_bytes_atomic

logger = logging.getLogger(__name__)

# Constants
MAGIC = b"GGS1"
HEADER = struct.Struct("<IIf")


@dataclass
class MotionSequence:
    """Joint positions in millimetres, stored (N, 3, T)"""
    positions: np.ndarray
    fps: float
    parent: Optional[List[Optional[int]]] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=geom.DTYPE)
        if self.positions.ndim != 3 or self.positions.shape[1] != 3:
            raise UsageError(f"positions must be shaped (N, 3, T), got {self.positions.shape}")
        if self.positions.shape[0] < 1 or self.positions.shape[2] < 1:
            raise UsageError("a sequence needs at least one joint and one frame")
        if not np.all(np.isfinite(self.positions)):
            raise UsageError("sequence contains non-finite positions")

    @property
    def n_joints(self) -> int:
        return self.positions.shape[0]

    @property
    def n_frames(self) -> int:
        return self.positions.shape[2]


def encode_sequence(seq: MotionSequence) -> bytes:
    body = np.ascontiguousarray(np.transpose(seq.positions, (0, 2, 1))).astype("<f4")
    return MAGIC + HEADER.pack(seq.n_joints, seq.n_frames, seq.fps) + body.tobytes()


def decode_sequence(data: bytes) -> MotionSequence:
    """
    Parse a GGS1 byte string

    Args:
        data: Complete file content

    Returns:
        MotionSequence: Positions widened to float64
    """
    if len(data) < 4:
        raise SequenceFormatError("file too short for a sequence header", offset=len(data))
    if data[:4] != MAGIC:
        if data[:3] == MAGIC[:3] and data[3:4].isdigit():
            raise SequenceFormatError(f"unsupported sequence version {data[3:4].decode()}", offset=3)
        raise SequenceFormatError("bad magic, expected GGS1", offset=0)
    if len(data) < 4 + HEADER.size:
        raise SequenceFormatError("truncated header", offset=len(data))
    n_joints, n_frames, fps = HEADER.unpack_from(data, 4)
    start = 4 + HEADER.size
    expected = start + 4 * 3 * n_joints * n_frames
    if len(data) < expected:
        raise SequenceFormatError(f"truncated positions: expected {expected} bytes, found {len(data)}",
                                  offset=len(data))
    if len(data) > expected:
        raise SequenceFormatError(f"{len(data) - expected} trailing bytes after positions", offset=expected)
    if n_joints < 1 or n_frames < 1 or not np.isfinite(fps) or fps <= 0:
        raise SequenceFormatError(f"invalid header: {n_joints} joints, {n_frames} frames, fps {fps}", offset=4)
    body = np.frombuffer(data, dtype="<f4", count=3 * n_joints * n_frames, offset=start)
    positions = np.transpose(body.reshape(n_joints, n_frames, 3), (0, 2, 1)).astype(geom.DTYPE)
    return MotionSequence(positions, float(fps))


def sequence_to_json(seq: MotionSequence) -> dict:
    return {
        "fps": seq.fps,
        "parent": seq.parent,
        "positions": np.transpose(seq.positions, (0, 2, 1)).tolist(),
    }


def sequence_from_json(data: dict, source: str = "<json>") -> MotionSequence:
    try:
        positions = np.asarray(data["positions"], dtype=geom.DTYPE)
        fps = float(data["fps"])
    except (KeyError, TypeError, ValueError) as e:
        raise UsageError(f"Invalid sequence JSON in {source}: {e}")
    if positions.ndim != 3 or positions.shape[2] != 3:
        raise UsageError(f"positions in {source} must be [[[x, y, z] per frame] per joint], got {positions.shape}")
    return MotionSequence(np.transpose(positions, (0, 2, 1)), fps, data.get("parent"))


def save_sequence(path: str, seq: MotionSequence) -> str:
    """
    Save a sequence; a .json path writes the JSON fixture layout, anything else GGS1

    Args:
        path: Destination path
        seq: Sequence to store

    Returns:
        str: The destination path
    """
    if path.lower().endswith(".json"):
        payload = (json.dumps(sequence_to_json(seq)) + "\n").encode("utf-8")
    else:
        payload = encode_sequence(seq)
    write_bytes_atomic(path, payload)
    logger.debug("Saved %d joints x %d frames to %s", seq.n_joints, seq.n_frames, path)
    return path


def load_sequence(path: str) -> MotionSequence:
    if not os.path.exists(path):
        raise UsageError(f"File not found: {path}")
    if path.lower().endswith(".json"):
        seq = sequence_from_json(read_json(path), path)
    else:
        with open(path, "rb") as f:
            seq = decode_sequence(f.read())
    logger.debug("Loaded %d joints x %d frames from %s", seq.n_joints, seq.n_frames, path)
    return seq


def windows(seq: MotionSequence, t_h: int, t_f: int, stride: int = 1) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Sliding (past, future) windows

    Args:
        seq: Source sequence
        t_h: Past frames per window
        t_f: Future frames per window
        stride: Frames between window starts

    Returns:
        list: floor((T - t_h - t_f) / stride) + 1 pairs of (N, 3, t_h) and (N, 3, t_f) arrays
    """
    if t_h < 1 or t_f < 1 or stride < 1:
        raise UsageError(f"t_h, t_f and stride must be >= 1, got {t_h}, {t_f}, {stride}")
    span = t_h + t_f
    if span > seq.n_frames:
        raise UsageError(f"sequence has {seq.n_frames} frames, a window needs {span}")
    out = []
    for start in range(0, seq.n_frames - span + 1, stride):
        out.append((seq.positions[:, :, start:start + t_h].copy(),
                    seq.positions[:, :, start + t_h:start + span].copy()))
    return out
