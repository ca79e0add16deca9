"""
Reverse-mode differentiation over numpy arrays.

A Tape is an append-only list of primitive applications. Node ids grow
monotonically, so walking the records backwards from the loss node is a valid
reverse topological order. Forward values are produced by the same kernels as
eager code (ggmotion.geom), which keeps taped and eager results bit-identical.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ggmotion import geom
from ggmotion.errors import ConfigurationError, UsageError

Vjp = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Var:
    """Handle to one node on a tape: node id plus its forward value"""

    __slots__ = ("tape", "id", "value")
    # Make ndarray <op> Var defer to the Var reflected operators
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", node_id: int, value: np.ndarray):
        self.tape = tape
        self.id = node_id
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"


@dataclass
class _Record:
    op: str
    inputs: Tuple[int, ...]
    vjp: Optional[Vjp]
    requires_grad: bool


class Tape:
    """Append-only record of primitive applications"""

    def __init__(self):
        self.values: List[np.ndarray] = []
        self.records: List[_Record] = []
        self._param_nodes: Dict[str, int] = {}
        self._param_store: Optional["ParamStore"] = None

    def __len__(self):
        return len(self.records)

    def _push(self, op: str, value: np.ndarray, inputs: Tuple[int, ...], vjp: Optional[Vjp], requires_grad: bool) -> Var:
        node_id = len(self.records)
        self.values.append(value)
        self.records.append(_Record(op, inputs, vjp, requires_grad))
        return Var(self, node_id, value)

    def constant(self, value) -> Var:
        return self._push("const", np.asarray(value, dtype=geom.DTYPE), (), None, False)

    def param(self, store: "ParamStore", path: str) -> Var:
        """Leaf for a parameter; repeated requests for one path share the node"""
        if self._param_store is None:
            self._param_store = store
        elif self._param_store is not store:
            raise UsageError("a tape can only record parameters from a single ParamStore")
        if path in self._param_nodes:
            node_id = self._param_nodes[path]
            return Var(self, node_id, self.values[node_id])
        var = self._push("param", store[path], (), None, True)
        self._param_nodes[path] = var.id
        return var

    def record(self, op: str, inputs: Sequence[Var], value: np.ndarray, vjp: Vjp) -> Var:
        for var in inputs:
            if var.tape is not self:
                raise UsageError(f"{op}: operand recorded on a different tape")
        requires_grad = any(self.records[var.id].requires_grad for var in inputs)
        return self._push(op, value, tuple(var.id for var in inputs), vjp if requires_grad else None, requires_grad)

    def lift(self, x) -> Var:
        return x if isinstance(x, Var) else self.constant(x)

    def backward(self, loss: Var) -> Dict[int, np.ndarray]:
        """
        Sweep the tape backwards from a scalar loss

        Args:
            loss: Scalar node

        Returns:
            dict: Gradient of the loss for every reached leaf that requires a gradient
        """
        if loss.tape is not self:
            raise UsageError("loss node belongs to a different tape")
        if loss.value.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        grads: Dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
        leaves: Dict[int, np.ndarray] = {}
        for node_id in range(loss.id, -1, -1):
            g = grads.pop(node_id, None)
            if g is None:
                continue
            rec = self.records[node_id]
            if rec.vjp is None:
                if rec.requires_grad:
                    leaves[node_id] = g
                continue
            for input_id, input_grad in zip(rec.inputs, rec.vjp(g)):
                if input_grad is None or not self.records[input_id].requires_grad:
                    continue
                if input_id in grads:
                    grads[input_id] = grads[input_id] + input_grad
                else:
                    grads[input_id] = input_grad
        return leaves

    def param_gradients(self, loss: Var, store: "ParamStore") -> Dict[str, np.ndarray]:
        """Gradient per parameter path without touching the store; unreached parameters get exact zeros"""
        leaves = self.backward(loss)
        grads = {}
        for path in store:
            node_id = self._param_nodes.get(path)
            if node_id is not None and node_id in leaves:
                grads[path] = np.array(leaves[node_id], dtype=geom.DTYPE).reshape(store[path].shape)
            else:
                grads[path] = np.zeros_like(store[path])
        return grads

    def gradients(self, loss: Var, store: "ParamStore") -> "ParamStore":
        """Populate store.grads from param_gradients"""
        store.grads.update(self.param_gradients(loss, store))
        return store


class ParamStore:
    """Learnable arrays addressed by stable path strings, each with a gradient slot"""

    def __init__(self):
        self.values: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def add(self, path: str, value) -> np.ndarray:
        if path in self.values:
            raise ConfigurationError(f"duplicate parameter path: {path}")
        array = np.array(value, dtype=geom.DTYPE)
        if not np.all(np.isfinite(array)):
            raise ConfigurationError(f"parameter {path} has non-finite entries")
        self.values[path] = array
        self.grads[path] = np.zeros_like(array)
        return array

    def update(self, mapping: Dict[str, np.ndarray]):
        for path, value in mapping.items():
            self.add(path, value)

    def set(self, path: str, value):
        array = np.array(value, dtype=geom.DTYPE)
        if array.shape != self.values[path].shape:
            raise ConfigurationError(f"{path}: shape {array.shape} does not match {self.values[path].shape}")
        self.values[path] = array

    def __getitem__(self, path: str) -> np.ndarray:
        try:
            return self.values[path]
        except KeyError:
            raise ConfigurationError(f"unknown parameter path: {path}")

    def __contains__(self, path: str) -> bool:
        return path in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def paths(self) -> List[str]:
        return list(self.values)

    def zero_grad(self):
        for path in self.values:
            self.grads[path] = np.zeros_like(self.values[path])

    def count(self) -> int:
        return int(sum(v.size for v in self.values.values()))

    def copy(self) -> "ParamStore":
        clone = ParamStore()
        for path, value in self.values.items():
            clone.values[path] = value.copy()
            clone.grads[path] = self.grads[path].copy()
        return clone


class Scope:
    """Parameter lookup under a path prefix, e.g. Scope(...).child("block.0")("v_update")"""

    def __init__(self, tape: Tape, store: ParamStore, prefix: str = ""):
        self.tape = tape
        self.store = store
        self.prefix = prefix

    def path(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def __call__(self, name: str) -> Var:
        return self.tape.param(self.store, self.path(name))

    def has(self, name: str) -> bool:
        return self.path(name) in self.store

    def child(self, name) -> "Scope":
        return Scope(self.tape, self.store, self.path(str(name)))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _tape_of(*items) -> Tape:
    for item in items:
        if isinstance(item, Var):
            return item.tape
    raise UsageError("at least one operand must be a taped Var")


def lift_all(*items) -> List[Var]:
    tape = _tape_of(*items)
    return [tape.lift(item) for item in items]


def add(a, b) -> Var:
    a, b = lift_all(a, b)
    return a.tape.record("add", (a, b), a.value + b.value,
                         lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Var:
    a, b = lift_all(a, b)
    return a.tape.record("sub", (a, b), a.value - b.value,
                         lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Var:
    a, b = lift_all(a, b)
    return a.tape.record("mul", (a, b), a.value * b.value,
                         lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def div(a, b) -> Var:
    a, b = lift_all(a, b)
    return a.tape.record(
        "div", (a, b), a.value / b.value,
        lambda g: (_unbroadcast(g / b.value, a.shape), _unbroadcast(-g * a.value / (b.value * b.value), b.shape)),
    )


def neg(a: Var) -> Var:
    return a.tape.record("neg", (a,), -a.value, lambda g: (-g,))


def matmul(a, w) -> Var:
    """Channel mixing a @ w; with a 2-D w this is geom.apply_linear"""
    a, w = lift_all(a, w)
    value = geom.apply_linear(w.value, a.value) if w.ndim == 2 else np.matmul(a.value, w.value)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(w.value, -1, -2))
        gw = np.matmul(np.swapaxes(a.value, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gw, w.shape)

    return a.tape.record("matmul", (a, w), value, vjp)


def tanh(a: Var) -> Var:
    y = np.tanh(a.value)
    return a.tape.record("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Var) -> Var:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return a.tape.record("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def absolute(a: Var) -> Var:
    return a.tape.record("abs", (a,), np.abs(a.value), lambda g: (g * np.sign(a.value),))


def square(a: Var) -> Var:
    return a.tape.record("square", (a,), a.value * a.value, lambda g: (2.0 * g * a.value,))


def clamp_min(a: Var, lower: float) -> Var:
    return a.tape.record("clamp_min", (a,), np.maximum(a.value, lower), lambda g: (g * (a.value > lower),))


def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(a: Var, axis=None, keepdims: bool = False) -> Var:
    value = np.sum(a.value, axis=axis, keepdims=keepdims)
    return a.tape.record("sum", (a,), np.asarray(value),
                         lambda g: (np.array(_expand_reduced(g, a.shape, axis, keepdims)),))


def reduce_mean(a: Var, axis=None, keepdims: bool = False) -> Var:
    value = np.mean(a.value, axis=axis, keepdims=keepdims)
    count = a.value.size // max(np.asarray(value).size, 1)
    return a.tape.record("mean", (a,), np.asarray(value),
                         lambda g: (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,))


def reshape(a: Var, shape) -> Var:
    return a.tape.record("reshape", (a,), a.value.reshape(shape), lambda g: (g.reshape(a.shape),))


def moveaxis(a: Var, source: int, destination: int) -> Var:
    return a.tape.record("moveaxis", (a,), np.moveaxis(a.value, source, destination),
                         lambda g: (np.moveaxis(g, destination, source),))


def concat(items: Sequence[Var], axis: int) -> Var:
    items = lift_all(*items)
    sizes = [item.shape[axis] for item in items]
    bounds = np.cumsum(sizes)[:-1]
    value = np.concatenate([item.value for item in items], axis=axis)
    return items[0].tape.record("concat", tuple(items), value, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(items: Sequence[Var], axis: int) -> Var:
    items = lift_all(*items)
    value = np.stack([item.value for item in items], axis=axis)
    return items[0].tape.record(
        "stack", tuple(items), value,
        lambda g: tuple(np.take(g, k, axis=axis) for k in range(len(items))),
    )


def take(a: Var, index, axis: int) -> Var:
    """Gather along one axis with a 1-D integer index (repeats allowed)"""
    index = np.asarray(index, dtype=np.intp)
    axis = axis % a.ndim

    def vjp(g):
        out = np.zeros(np.moveaxis(a.value, axis, 0).shape, dtype=g.dtype)
        np.add.at(out, index, np.moveaxis(g, axis, 0))
        return (np.moveaxis(out, 0, axis),)

    return a.tape.record("take", (a,), np.take(a.value, index, axis=axis), vjp)


def scatter_add(a: Var, index, size: int, axis: int) -> Var:
    """Sum slices of a into `size` buckets along axis; inverse of take"""
    index = np.asarray(index, dtype=np.intp)
    axis = axis % a.ndim
    moved = np.moveaxis(a.value, axis, 0)
    out = np.zeros((size,) + moved.shape[1:], dtype=a.value.dtype)
    np.add.at(out, index, moved)
    return a.tape.record("scatter_add", (a,), np.moveaxis(out, 0, axis),
                         lambda g: (np.take(g, index, axis=axis),))


def cross(a, b) -> Var:
    a, b = lift_all(a, b)
    return a.tape.record(
        "cross", (a, b), geom.cross_cols(a.value, b.value),
        lambda g: (_unbroadcast(geom.cross_cols(b.value, g), a.shape),
                   _unbroadcast(geom.cross_cols(g, a.value), b.shape)),
    )


def col_norm(a: Var, eps: float = geom.EPS) -> Var:
    """Column norms; below eps the derivative uses eps in place of the norm (zero at the origin)"""
    n = geom.col_norm(a.value)
    return a.tape.record(
        "col_norm", (a,), n,
        lambda g: (g[..., None, :] * a.value / np.maximum(n, eps)[..., None, :],),
    )


def row_l2_normalize(m: Var, eps: float = geom.EPS) -> Var:
    value = geom.row_l2_normalize(m.value, eps)
    norms = np.sqrt(np.sum(m.value * m.value, axis=-1, keepdims=True))

    def vjp(g):
        active = norms > eps
        safe = np.where(active, norms, eps)
        projected = g - value * np.sum(value * g, axis=-1, keepdims=True)
        # Rows guarded by eps behave as a constant scaling 1/eps
        return (np.where(active, projected / safe, g / eps),)

    return m.tape.record("row_l2_normalize", (m,), value, vjp)


def gram(q: Var, k: Var) -> Var:
    return q.tape.record(
        "gram", (q, k), geom.gram(q.value, k.value),
        lambda g: (np.einsum("...ab,...bdc->...adc", g, k.value), np.einsum("...ab,...adc->...bdc", g, q.value)),
    )


def einsum(spec: str, a, b) -> Var:
    """
    Two-operand einsum; every index of an operand must also appear in the
    other operand or in the output
    """
    a, b = lift_all(a, b)
    operands, out = spec.replace(" ", "").split("->")
    left, right = operands.split(",")
    return a.tape.record(
        "einsum", (a, b), np.einsum(spec, a.value, b.value),
        lambda g: (np.einsum(f"{out},{right}->{left}", g, b.value), np.einsum(f"{out},{left}->{right}", g, a.value)),
    )


def forward(tape: Tape, program: Callable[..., Var], *inputs) -> Var:
    """
    Record a composition of primitives on the tape

    Args:
        tape: Tape to record on
        program: Callable taking Vars and returning a Var
        *inputs: Arrays or Vars; arrays are registered as constants

    Returns:
        Var: The program output (value and node id)
    """
    return program(*[tape.lift(x) for x in inputs])


def backward(tape: Tape, loss: Var, store: ParamStore) -> ParamStore:
    return tape.gradients(loss, store)


@dataclass
class GradCheckReport:
    n_coords: int
    max_rel_error: float
    max_abs_error: float
    worst_path: Optional[str]
    worst_index: Optional[int]
    worst_analytic: float
    worst_numeric: float
    failures: int
    rtol: float
    atol: float
    samples: List[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_dict(self) -> dict:
        return {
            "n_coords": self.n_coords,
            "max_rel_error": self.max_rel_error,
            "max_abs_error": self.max_abs_error,
            "worst_path": self.worst_path,
            "worst_index": self.worst_index,
            "worst_analytic": self.worst_analytic,
            "worst_numeric": self.worst_numeric,
            "failures": self.failures,
            "rtol": self.rtol,
            "atol": self.atol,
            "passed": self.passed,
        }


def grad_check(program: Callable[[Tape, ParamStore], Var], params: ParamStore, rng: geom.Rng,
               n_coords: int, h: float = 1e-5, rtol: float = 1e-4, atol: float = 1e-7) -> GradCheckReport:
    """
    Compare analytic gradients against central differences on sampled coordinates

    Args:
        program: Callable (tape, params) -> scalar loss Var
        params: Parameters to perturb (restored afterwards)
        rng: Stream used to sample coordinates uniformly over all scalars
        n_coords: Number of coordinates to check
        h: Finite-difference step
        rtol: Relative tolerance
        atol: Absolute tolerance; a coordinate passes if either bound holds

    Returns:
        GradCheckReport: Worst offender and failure count
    """
    if n_coords < 1:
        raise UsageError("n_coords must be >= 1")
    tape = Tape()
    tape.gradients(program(tape, params), params)
    analytic = {path: params.grads[path].copy() for path in params}

    paths = params.paths()
    sizes = np.array([params[path].size for path in paths])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    picks = rng.integers(0, int(offsets[-1]), size=n_coords)

    def evaluate() -> float:
        return float(program(Tape(), params).value)

    report = GradCheckReport(n_coords, 0.0, 0.0, None, None, 0.0, 0.0, 0, rtol, atol)
    worst_score = -1.0
    for pick in picks:
        slot = int(np.searchsorted(offsets, pick, side="right") - 1)
        path, flat = paths[slot], int(pick - offsets[slot])
        array = params.values[path].reshape(-1)
        original = array[flat]
        array[flat] = original + h
        plus, upper = evaluate(), array[flat]
        array[flat] = original - h
        minus, lower = evaluate(), array[flat]
        array[flat] = original
        numeric = (plus - minus) / (upper - lower)
        exact = float(analytic[path].reshape(-1)[flat])
        abs_err = abs(exact - numeric)
        scale = max(abs(exact), abs(numeric))
        rel_err = abs_err / scale if scale > 0 else 0.0
        ok = abs_err <= atol or rel_err <= rtol
        report.failures += 0 if ok else 1
        report.max_abs_error = max(report.max_abs_error, abs_err)
        if abs_err > atol:
            report.max_rel_error = max(report.max_rel_error, rel_err)
        score = rel_err if abs_err > atol else 0.0
        if score > worst_score:
            worst_score = score
            report.worst_path, report.worst_index = path, flat
            report.worst_analytic, report.worst_numeric = exact, numeric
        report.samples.append({"path": path, "index": flat, "analytic": exact, "numeric": numeric})
    return report
