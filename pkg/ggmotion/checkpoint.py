"""
Parameter checkpoint store.

Layout (little-endian):
    b"GGMP" | u16 version | u32 meta_len | meta JSON (model config, topology, input scale)
    u32 n_records | per record: u16 path_len | path | u8 ndim | u32 dims... | f32 payload
"""
import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

from ggmotion import network
from ggmotion.autodiff import ParamStore
from ggmotion.errors import CheckpointError
from ggmotion.group_dk import project_centroid_weights
from ggmotion.models import ModelConfig
from ggmotion.topology import SkeletonTopology, build_topology
from ggmotion.utils import write_bytes_atomic

logger = logging.getLogger(__name__)

MAGIC = b"GGMP"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    topology: SkeletonTopology
    params: ParamStore
    input_scale: float = 1e-3


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    meta = json.dumps({
        "model": ckpt.config.model_dump(),
        "topology": ckpt.topology.to_dict(),
        "input_scale": ckpt.input_scale,
    }, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(meta)), meta, struct.pack("<I", len(ckpt.params))]
    for path in ckpt.params:
        value = ckpt.params[path]
        name = path.encode("utf-8")
        parts.append(struct.pack("<H", len(name)))
        parts.append(name)
        parts.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        parts.append(value.astype("<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(path: str, ckpt: Checkpoint):
    data = encode_checkpoint(ckpt)
    write_bytes_atomic(path, data)
    logger.debug("Wrote checkpoint %s (%d bytes, %d arrays)", path, len(data), len(ckpt.params))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what} at byte {self.offset}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes) -> Checkpoint:
    reader = _Reader(data)
    if reader.take(4, "magic") != MAGIC:
        raise CheckpointError("not a parameter checkpoint (bad magic at byte 0)")
    version, meta_len = reader.unpack("<HI", "header")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        meta = json.loads(reader.take(meta_len, "metadata").decode("utf-8"))
        config = ModelConfig.model_validate(meta["model"])
        topo_meta = meta["topology"]
        input_scale = float(meta.get("input_scale", 1e-3))
    except CheckpointError:
        raise
    except Exception as e:
        raise CheckpointError(f"invalid checkpoint metadata: {e}")
    topology = build_topology(topo_meta["parent"], topo_meta["groups"])

    template = network.init_params(config, topology)
    params = ParamStore()
    (n_records,) = reader.unpack("<I", "record count")
    for _ in range(n_records):
        (name_len,) = reader.unpack("<H", "path length")
        path = reader.take(name_len, "path").decode("utf-8")
        (ndim,) = reader.unpack("<B", f"{path} rank")
        shape = reader.unpack(f"<{ndim}I", f"{path} shape")
        count = int(np.prod(shape, dtype=np.int64))
        payload = np.frombuffer(reader.take(4 * count, f"{path} payload"), dtype="<f4")
        if path not in template:
            raise CheckpointError(f"checkpoint holds unknown parameter {path}")
        if tuple(shape) != template[path].shape:
            raise CheckpointError(f"{path}: stored shape {tuple(shape)}, config expects {template[path].shape}")
        params.add(path, payload.reshape(shape).astype(np.float64))
    if reader.offset != len(data):
        raise CheckpointError(f"{len(data) - reader.offset} trailing bytes after the last record")
    missing = sorted(set(template) - set(params))
    if missing:
        raise CheckpointError(f"checkpoint is missing {len(missing)} parameters, e.g. {missing[0]}")
    # single-precision storage perturbs the centroid column sums
    project_centroid_weights(params)
    return Checkpoint(config, topology, params, input_scale)


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    ckpt = decode_checkpoint(data)
    logger.debug("Loaded checkpoint %s: %d parameters", path, ckpt.params.count())
    return ckpt
