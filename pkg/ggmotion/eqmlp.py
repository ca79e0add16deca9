"""
Equivariant MLP with covariance attention.

The n input variables are mixed only through rotation-invariant weights
computed from their Gram matrix, so for any orthogonal R:
eqmlp_forward(R * vars) == R * eqmlp_forward(vars).
"""
from dataclasses import dataclass

import numpy as np

from ggmotion import autodiff as ad
from ggmotion import geom
from ggmotion.autodiff import ParamStore, Scope, Tape, Var
from ggmotion.errors import ConfigurationError


@dataclass(frozen=True)
class EqMlpParams:
    """
    Shape declaration of one equivariant MLP; the arrays live in a ParamStore

    pooled=True projects the channel-concatenation of the n intermediates to C
    channels (one output). pooled=False applies a shared C->C projection to each
    intermediate (n outputs, one per input variable). attention=False drops the
    query/key/value maps and the row normalisation, leaving the plain
    Gram-weighted message-passing MLP.
    """
    n: int
    channels: int
    hidden: int
    pooled: bool = True
    attention: bool = True

    def init(self, store: ParamStore, prefix: str, rng: geom.Rng):
        c = self.channels
        if self.attention:
            for name in ("w_q", "w_k", "w_v"):
                store.update(geom.LinearMap.init(c, c, rng.split(name)).named_arrays(f"{prefix}.{name}"))
        mix = geom.InvariantMlp.init(self.n * self.n, self.hidden, self.n * self.n, rng.split("mix"))
        store.update(mix.named_arrays(f"{prefix}.mix"))
        c_in = self.n * c if self.pooled else c
        store.update(geom.LinearMap.init(c_in, c, rng.split("out")).named_arrays(f"{prefix}.out"))

    def param_count(self) -> int:
        c, nn = self.channels, self.n * self.n
        qkv = 3 * c * c if self.attention else 0
        mix = nn * self.hidden + self.hidden + self.hidden * nn
        out = (self.n * c if self.pooled else c) * c
        return qkv + mix + out


def invariant_mlp(scope: Scope, x: Var) -> Var:
    """Taped counterpart of geom.InvariantMlp.apply"""
    return ad.matmul(ad.tanh(ad.matmul(x, scope("w1")) + scope("b1")), scope("w2"))


def gram(vars_q, vars_k):
    """Inner products of every query variable with every key variable: (..., n, 3, C) -> (..., n, n)"""
    if isinstance(vars_q, Var) or isinstance(vars_k, Var):
        q, k = ad.lift_all(vars_q, vars_k)
        if q.shape != k.shape:
            raise ConfigurationError(f"gram operands differ in shape: {q.shape} vs {k.shape}")
        return ad.gram(q, k)
    return geom.gram(np.asarray(vars_q, dtype=geom.DTYPE), np.asarray(vars_k, dtype=geom.DTYPE))


def eqmlp_forward(scope: Scope, p: EqMlpParams, variables: Var) -> Var:
    """
    Args:
        scope: Parameter scope of this MLP
        p: Shape declaration
        variables: (..., n, 3, C) stack of geometric variables

    Returns:
        Var: (..., 3, C) when pooled, else (..., n, 3, C)
    """
    if variables.ndim < 3 or variables.shape[-3] != p.n or variables.shape[-2] != 3:
        raise ConfigurationError(f"equivariant MLP built for n={p.n} variables, got shape {variables.shape}")
    if variables.shape[-1] != p.channels:
        raise ConfigurationError(f"equivariant MLP built for C={p.channels}, got {variables.shape[-1]} channels")

    if p.attention:
        z_q = ad.matmul(variables, scope("w_q"))
        z_k = ad.matmul(variables, scope("w_k"))
        z_v = ad.matmul(variables, scope("w_v"))
        sigma = ad.row_l2_normalize(gram(z_q, z_k), geom.EPS)
    else:
        z_v = variables
        sigma = gram(variables, variables)

    lead = sigma.shape[:-2]
    flat = ad.reshape(sigma, lead + (p.n * p.n,))
    weights = ad.reshape(invariant_mlp(scope.child("mix"), flat), lead + (p.n, p.n))

    # intermediate a = sum_b z_v[b] * M[b, a]
    intermediates = ad.einsum("...bdc,...ba->...adc", z_v, weights)
    if not p.pooled:
        return ad.matmul(intermediates, scope("out"))
    stacked = ad.moveaxis(intermediates, -3, -2)
    joined = ad.reshape(stacked, stacked.shape[:-2] + (p.n * p.channels,))
    return ad.matmul(joined, scope("out"))


def eqmlp_apply(store: ParamStore, prefix: str, p: EqMlpParams, variables) -> np.ndarray:
    """Eager evaluation on a throwaway tape"""
    tape = Tape()
    return eqmlp_forward(Scope(tape, store, prefix), p, tape.constant(variables)).value
