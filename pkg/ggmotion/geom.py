"""
Fixed-shape numerical kernel.

Geometric features are float64 arrays whose last two axes are (3, C): the
coordinate axis followed by the channel axis. Leading axes (batch, joints,
variables) are carried through untouched. Every channel-mixing map acts on the
last axis only, so it commutes with any 3x3 orthogonal matrix applied to the
coordinate axis.
"""
import hashlib
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ggmotion.errors import ConfigurationError

EPS = 1e-8
DTYPE = np.float64


def _check_geo(a: np.ndarray, name: str = "feature"):
    if a.ndim < 2 or a.shape[-2] != 3:
        raise ConfigurationError(f"{name} must have a (3, C) trailing shape, got {a.shape}")


def as_geo_feature(data, channels: Optional[int] = None) -> np.ndarray:
    """
    Validate and convert data into a geometric feature array

    Args:
        data: Array-like with trailing shape (3, C)
        channels: Expected C, if fixed

    Returns:
        np.ndarray: float64 copy of the data
    """
    a = np.array(data, dtype=DTYPE)
    _check_geo(a)
    if a.shape[-1] < 1 or (channels is not None and a.shape[-1] != channels):
        raise ConfigurationError(f"expected {channels} channels, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConfigurationError("geometric feature contains non-finite entries")
    return a


def cross_cols(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise 3-vector cross product of two (..., 3, C) features"""
    _check_geo(a, "a")
    _check_geo(b, "b")
    if a.shape[-1] != b.shape[-1]:
        raise ConfigurationError(f"cross_cols channel mismatch: {a.shape} vs {b.shape}")
    a0, a1, a2 = a[..., 0, :], a[..., 1, :], a[..., 2, :]
    b0, b1, b2 = b[..., 0, :], b[..., 1, :], b[..., 2, :]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-2)


def col_norm(a: np.ndarray) -> np.ndarray:
    """Euclidean norm of every column: (..., 3, C) -> (..., C)"""
    _check_geo(a)
    return np.sqrt(np.sum(a * a, axis=-2))


def apply_linear(weights: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Bias-free channel mixing: (..., 3, C_in) @ (C_in, C_out)"""
    if a.shape[-1] != weights.shape[0]:
        raise ConfigurationError(f"linear map expects {weights.shape[0]} input channels, got {a.shape[-1]}")
    return np.matmul(a, weights)


def gram(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Inner products over coordinate and channel axes: (..., n, 3, C) x2 -> (..., n, n)"""
    if q.shape != k.shape:
        raise ConfigurationError(f"gram operands differ in shape: {q.shape} vs {k.shape}")
    return np.einsum("...adc,...bdc->...ab", q, k)


def row_l2_normalize(m: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Divide each row by max(its L2 norm, eps); zero rows stay zero"""
    if eps <= 0:
        raise ConfigurationError("eps must be > 0")
    norms = np.sqrt(np.sum(m * m, axis=-1, keepdims=True))
    return m / np.maximum(norms, eps)


def uniform_init(rng: "Rng", c_in: int, c_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(c_in)
    return rng.uniform(-bound, bound, size=(c_in, c_out))


@dataclass(frozen=True)
class LinearMap:
    weights: np.ndarray

    @classmethod
    def init(cls, c_in: int, c_out: int, rng: "Rng") -> "LinearMap":
        return cls(uniform_init(rng, c_in, c_out))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.weights.shape

    def apply(self, a: np.ndarray) -> np.ndarray:
        return apply_linear(self.weights, a)

    def named_arrays(self, path: str) -> dict:
        return {path: self.weights}


@dataclass(frozen=True)
class InvariantMlp:
    """Two channel maps with tanh between; only ever fed rotation-invariant scalars"""
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray

    @classmethod
    def init(cls, c_in: int, hidden: int, c_out: int, rng: "Rng") -> "InvariantMlp":
        w1 = uniform_init(rng.split("w1"), c_in, hidden)
        bound = 1.0 / np.sqrt(c_in)
        b1 = rng.split("b1").uniform(-bound, bound, size=(hidden,))
        w2 = uniform_init(rng.split("w2"), hidden, c_out)
        return cls(w1, b1, w2)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.matmul(np.tanh(np.matmul(x, self.w1) + self.b1), self.w2)

    def named_arrays(self, path: str) -> dict:
        return {f"{path}.w1": self.w1, f"{path}.b1": self.b1, f"{path}.w2": self.w2}


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little")


class Rng:
    """
    Deterministic random stream addressable by a seed and a path of labels

    Splitting never consumes from the parent stream, so the values drawn for a
    label do not depend on what else has been drawn.
    """

    def __init__(self, seed: int, path: Tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(path)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.PCG64(sequence))

    def split(self, label: str) -> "Rng":
        return Rng(self.seed, self.path + (_label_key(label),))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def unit_vector(self) -> np.ndarray:
        v = self._gen.normal(size=3)
        return v / np.linalg.norm(v)


def rotation_about(axis: np.ndarray, angle) -> np.ndarray:
    """
    Rodrigues rotation matrix for a unit axis

    Args:
        axis: Unit 3-vector
        angle: Scalar angle, or an array of angles (returns a stack of matrices)

    Returns:
        np.ndarray: (3, 3) or (..., 3, 3) rotation matrices
    """
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    angle = np.asarray(angle, dtype=DTYPE)
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def sample_orthogonal(rng: Rng, angle: Optional[float] = None, reflect: Optional[bool] = None) -> np.ndarray:
    """
    Sample a 3x3 orthogonal matrix, reflections included

    Args:
        rng: Random stream
        angle: Force the rotation angle (radians) instead of drawing it
        reflect: Force (True) or forbid (False) the reflection branch; a forced
            angle without reflect gives a proper rotation

    Returns:
        np.ndarray: Matrix R with R^T R = I and det(R) = +1 or -1
    """
    axis = rng.unit_vector()
    theta = rng.uniform(0.0, np.pi) if angle is None else angle
    if reflect is None:
        reflect = False if angle is not None else bool(rng.integers(0, 2))
    rotation = rotation_about(axis, theta)
    return -rotation if reflect else rotation
