"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

The op set is deliberately small: matmul, add (with row-broadcast bias),
elementwise multiply, concat along the last axis, row mean/sum, sigmoid, tanh,
row softmax, log, plus the stabilised log-softmax / clamp helpers the losses
need, three segment ops used to batch ragged per-scene object sets, and a
fused gated-recurrent cell.  Every op records one node on the tape; one
reverse sweep visits each node exactly once and accumulates gradients into
watched Parameters.  Gradients are only propagated to tensors that need them
(watched leaves and anything computed from them).

Tapes are rebuilt per forward pass and are confined to a single thread.
"""

from __future__ import annotations

import contextlib
import gc

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Parameter",
    "ShapeError",
    "GradCheckError",
    "relaxed_gc",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "concat",
    "row_mean",
    "row_sum",
    "mean",
    "sigmoid",
    "tanh",
    "log",
    "clamp",
    "row_softmax",
    "log_softmax",
    "repeat_rows",
    "segment_softmax",
    "segment_weighted_sum",
    "gru_gates",
    "backward",
    "grad_check",
]


@contextlib.contextmanager
def relaxed_gc():
    """Raise the gen-0 collection threshold while building large tapes.

    A forward pass allocates tens of thousands of small container objects;
    default thresholds make the cyclic collector scan them constantly even
    though tapes are dropped wholesale after each step.
    """
    thresholds = gc.get_threshold()
    gc.set_threshold(200_000, thresholds[1], thresholds[2])
    try:
        yield
    finally:
        gc.set_threshold(*thresholds)


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to a primitive's contract."""

    def __init__(self, primitive, *shapes):
        self.primitive = primitive
        self.shapes = shapes
        super().__init__(f"{primitive}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


class GradCheckError(RuntimeError):
    """Raised by grad_check when an evaluation produces a non-finite value."""


class Parameter:
    """A named trainable tensor with a gradient accumulator of the same shape."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Tensor:
    """A dense float64 array bound to the tape that produced it.

    `rg` marks whether gradients must flow to this tensor (it is a watched
    leaf or depends on one).
    """

    __slots__ = ("data", "tape", "rg")

    def __init__(self, data: np.ndarray, tape: "Tape", rg: bool = False):
        self.data = data
        self.tape = tape
        self.rg = rg

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # operator sugar over the primitive set; floats map to scale/add_scalar
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of primitive ops from one forward pass.

    Nodes are appended in execution order, which is a topological order of
    the graph, so a single reversed sweep propagates all gradients.  `cache`
    holds per-tape memos (e.g. fused weight views reused across time steps).
    """

    def __init__(self):
        self.nodes = []  # (output Tensor, backward callable)
        self.watched = []  # (leaf Tensor, Parameter)
        self.cache: dict = {}

    def tensor(self, data) -> Tensor:
        """Wrap a constant array as a leaf on this tape (no gradient)."""
        return Tensor(np.asarray(data, dtype=np.float64), self)

    def watch(self, param: Parameter) -> Tensor:
        """Expose a Parameter's value as a leaf; backward() accumulates into it."""
        leaf = Tensor(param.value, self, rg=True)
        self.watched.append((leaf, param))
        return leaf

    def backward(self, out: Tensor) -> None:
        backward(self, out)


def _record(tape: Tape, out_data: np.ndarray, bwd, rg: bool) -> Tensor:
    out = Tensor(out_data, tape, rg)
    if rg:
        tape.nodes.append((out, bwd))
    return out


def _tape_of(*tensors: Tensor) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ValueError("operands belong to different tapes")
    return tape


def _acc(grads: dict, t: Tensor, g: np.ndarray) -> None:
    # the first stored gradient may alias an upstream array (pass-through ops
    # like add or concat slices), so it must not be mutated; from the second
    # contribution on we own a private buffer and add in place
    k = id(t)
    if k in grads:
        entry = grads[k]
        if entry[1]:
            entry[0] += g
        else:
            grads[k] = [entry[0] + g, True]
    else:
        grads[k] = [g, False]


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    tape = _tape_of(a, b)
    out_data = a.data @ b.data

    def bwd(g, grads):
        if a.rg:
            _acc(grads, a, g @ b.data.T)
        if b.rg:
            _acc(grads, b, a.data.T @ g)

    return _record(tape, out_data, bwd, a.rg or b.rg)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also accepts a 1-D bias broadcast over the rows of a."""
    bias = a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]
    if not bias and a.data.shape != b.data.shape:
        raise ShapeError("add", a.data.shape, b.data.shape)
    tape = _tape_of(a, b)
    out_data = a.data + b.data

    def bwd(g, grads):
        if a.rg:
            _acc(grads, a, g)
        if b.rg:
            _acc(grads, b, g.sum(axis=0) if bias else g)

    return _record(tape, out_data, bwd, a.rg or b.rg)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError("sub", a.data.shape, b.data.shape)
    tape = _tape_of(a, b)
    out_data = a.data - b.data

    def bwd(g, grads):
        if a.rg:
            _acc(grads, a, g)
        if b.rg:
            _acc(grads, b, -g)

    return _record(tape, out_data, bwd, a.rg or b.rg)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError("mul", a.data.shape, b.data.shape)
    tape = _tape_of(a, b)
    out_data = a.data * b.data

    def bwd(g, grads):
        if a.rg:
            _acc(grads, a, g * b.data)
        if b.rg:
            _acc(grads, b, g * a.data)

    return _record(tape, out_data, bwd, a.rg or b.rg)


def scale(a: Tensor, c: float) -> Tensor:
    out_data = a.data * c

    def bwd(g, grads):
        _acc(grads, a, g * c)

    return _record(a.tape, out_data, bwd, a.rg)


def add_scalar(a: Tensor, c: float) -> Tensor:
    out_data = a.data + c

    def bwd(g, grads):
        _acc(grads, a, g)

    return _record(a.tape, out_data, bwd, a.rg)


def concat(parts, axis: int = -1) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat", ())
    if axis not in (-1, parts[0].data.ndim - 1):
        raise ShapeError("concat", *(p.data.shape for p in parts))
    lead = [p.data.shape[:-1] for p in parts]
    if any(s != lead[0] for s in lead):
        raise ShapeError("concat", *(p.data.shape for p in parts))
    tape = _tape_of(*parts)
    out_data = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bwd(g, grads):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.rg:
                _acc(grads, p, g[..., lo:hi])

    return _record(tape, out_data, bwd, any(p.rg for p in parts))


def row_mean(a: Tensor) -> Tensor:
    """Mean over the last axis: (N, K) -> (N,)."""
    if a.data.ndim != 2:
        raise ShapeError("row_mean", a.data.shape)
    k = a.data.shape[1]
    out_data = a.data.mean(axis=1)

    def bwd(g, grads):
        _acc(grads, a, np.repeat(g[:, None], k, axis=1) / k)

    return _record(a.tape, out_data, bwd, a.rg)


def row_sum(a: Tensor) -> Tensor:
    """Sum over the last axis: (N, K) -> (N,)."""
    if a.data.ndim != 2:
        raise ShapeError("row_sum", a.data.shape)
    k = a.data.shape[1]
    out_data = a.data.sum(axis=1)

    def bwd(g, grads):
        _acc(grads, a, np.repeat(g[:, None], k, axis=1))

    return _record(a.tape, out_data, bwd, a.rg)


def mean(a: Tensor) -> Tensor:
    """Mean over all elements, producing a scalar tensor."""
    n = a.data.size
    out_data = np.asarray(a.data.mean())

    def bwd(g, grads):
        _acc(grads, a, np.full_like(a.data, float(g) / n))

    return _record(a.tape, out_data, bwd, a.rg)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out_data = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bwd(g, grads):
        _acc(grads, a, g * out_data * (1.0 - out_data))

    return _record(a.tape, out_data, bwd, a.rg)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bwd(g, grads):
        _acc(grads, a, g * (1.0 - out_data * out_data))

    return _record(a.tape, out_data, bwd, a.rg)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise ValueError("log: input must be strictly positive; clamp first")
    out_data = np.log(a.data)

    def bwd(g, grads):
        _acc(grads, a, g / a.data)

    return _record(a.tape, out_data, bwd, a.rg)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out_data = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def bwd(g, grads):
        _acc(grads, a, g * inside)

    return _record(a.tape, out_data, bwd, a.rg)


def row_softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis of a 1-D or 2-D tensor."""
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g, grads):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        _acc(grads, a, out_data * (g - dot))

    return _record(a.tape, out_data, bwd, a.rg)


def log_softmax(a: Tensor) -> Tensor:
    """Numerically stable log softmax along the last axis."""
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out_data = shifted - lse

    def bwd(g, grads):
        _acc(grads, a, g - np.exp(out_data) * g.sum(axis=-1, keepdims=True))

    return _record(a.tape, out_data, bwd, a.rg)


# ---------------------------------------------------------------------------
# segment ops for ragged per-scene object sets
#
# `counts` gives the number of consecutive rows owned by each segment; rows of
# all segments are stacked into one matrix so one matmul embeds every instance
# in a batch.  Segments may be empty.
# ---------------------------------------------------------------------------

def _segment_index(counts: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(counts)), counts)


def _segment_sum(rows: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Sum row blocks given per-segment counts; empty segments give zero rows."""
    ends = np.cumsum(counts)
    csum = np.vstack([np.zeros((1, rows.shape[1])), np.cumsum(rows, axis=0)])
    return csum[ends] - csum[ends - counts]


def repeat_rows(a: Tensor, counts) -> Tensor:
    """Repeat row i of a 2-D tensor counts[i] times."""
    counts = np.asarray(counts, dtype=np.int64)
    if a.data.ndim != 2 or len(counts) != a.data.shape[0]:
        raise ShapeError("repeat_rows", a.data.shape, (len(counts),))
    idx = _segment_index(counts)
    out_data = a.data[idx]

    def bwd(g, grads):
        _acc(grads, a, _segment_sum(g, counts))

    return _record(a.tape, out_data, bwd, a.rg)


def segment_softmax(a: Tensor, counts) -> Tensor:
    """Softmax over each segment of a (N, 1) column; empty segments allowed."""
    counts = np.asarray(counts, dtype=np.int64)
    if a.data.ndim != 2 or a.data.shape[1] != 1 or counts.sum() != a.data.shape[0]:
        raise ShapeError("segment_softmax", a.data.shape, (int(counts.sum()),))
    idx = _segment_index(counts)
    x = a.data[:, 0]
    seg_max = np.full(len(counts), -np.inf)
    np.maximum.at(seg_max, idx, x)
    e = np.exp(x - seg_max[idx])
    seg_sum = _segment_sum(e[:, None], counts)[:, 0]
    out_data = (e / seg_sum[idx])[:, None]

    def bwd(g, grads):
        w = out_data[:, 0]
        gw = g[:, 0] * w
        seg_dot = _segment_sum(gw[:, None], counts)[:, 0]
        _acc(grads, a, (gw - w * seg_dot[idx])[:, None])

    return _record(a.tape, out_data, bwd, a.rg)


def segment_weighted_sum(weights: Tensor, values: Tensor, counts) -> Tensor:
    """Per-segment weighted sum of rows: (N,1) weights, (N,K) values -> (S,K).

    Segments with zero rows produce an all-zero output row.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if (weights.data.ndim != 2 or weights.data.shape[1] != 1
            or values.data.ndim != 2 or weights.data.shape[0] != values.data.shape[0]
            or counts.sum() != values.data.shape[0]):
        raise ShapeError("segment_weighted_sum", weights.data.shape, values.data.shape)
    tape = _tape_of(weights, values)
    idx = _segment_index(counts)
    out_data = _segment_sum(weights.data * values.data, counts)

    def bwd(g, grads):
        g_rows = g[idx]
        if weights.rg:
            _acc(grads, weights, (g_rows * values.data).sum(axis=1, keepdims=True))
        if values.rg:
            _acc(grads, values, g_rows * weights.data)

    return _record(tape, out_data, bwd, weights.rg or values.rg)


# ---------------------------------------------------------------------------
# fused gated recurrent cell
# ---------------------------------------------------------------------------

def gru_gates(x: Tensor, h: Tensor, w_all: Tensor, u_zr: Tensor, u_n: Tensor,
              b_all: Tensor) -> Tensor:
    """One GRU update as a single node: h' = (1 - z) * n + z * h.

    z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
    n = tanh(x Wn + (r * h) Un + bn).  The input projections travel fused:
    w_all is [Wz | Wr | Wn] (in, 3H), u_zr is [Uz | Ur] (H, 2H) and b_all is
    [bz | br | bn] (3H,).
    """
    hidden = h.data.shape[1]
    if (x.data.ndim != 2 or h.data.ndim != 2
            or w_all.data.shape != (x.data.shape[1], 3 * hidden)
            or u_zr.data.shape != (hidden, 2 * hidden)
            or u_n.data.shape != (hidden, hidden)
            or b_all.data.shape != (3 * hidden,)):
        raise ShapeError("gru_gates", x.data.shape, h.data.shape, w_all.data.shape,
                         u_zr.data.shape, u_n.data.shape, b_all.data.shape)
    tape = _tape_of(x, h, w_all, u_zr, u_n, b_all)
    xw = x.data @ w_all.data + b_all.data
    hu = h.data @ u_zr.data
    pre_z = xw[:, :hidden] + hu[:, :hidden]
    e_z = np.exp(-np.abs(pre_z))
    z = np.where(pre_z >= 0, 1.0 / (1.0 + e_z), e_z / (1.0 + e_z))
    pre_r = xw[:, hidden:2 * hidden] + hu[:, hidden:]
    e_r = np.exp(-np.abs(pre_r))
    r = np.where(pre_r >= 0, 1.0 / (1.0 + e_r), e_r / (1.0 + e_r))
    rh = r * h.data
    n = np.tanh(xw[:, 2 * hidden:] + rh @ u_n.data)
    out_data = (1.0 - z) * n + z * h.data

    def bwd(g, grads):
        d_pre_z = g * (h.data - n) * z * (1.0 - z)
        d_pre_n = g * (1.0 - z) * (1.0 - n * n)
        d_rh = d_pre_n @ u_n.data.T
        d_pre_r = d_rh * h.data * r * (1.0 - r)
        d_cat = np.concatenate([d_pre_z, d_pre_r, d_pre_n], axis=1)
        if x.rg:
            _acc(grads, x, d_cat @ w_all.data.T)
        if h.rg:
            _acc(grads, h, g * z + d_cat[:, :2 * hidden] @ u_zr.data.T + d_rh * r)
        if w_all.rg:
            _acc(grads, w_all, x.data.T @ d_cat)
        if u_zr.rg:
            _acc(grads, u_zr, h.data.T @ d_cat[:, :2 * hidden])
        if u_n.rg:
            _acc(grads, u_n, rh.T @ d_pre_n)
        if b_all.rg:
            _acc(grads, b_all, d_cat.sum(axis=0))

    rg = x.rg or h.rg or w_all.rg or u_zr.rg or u_n.rg or b_all.rg
    return _record(tape, out_data, bwd, rg)


# ---------------------------------------------------------------------------
# backward sweep and finite-difference checking
# ---------------------------------------------------------------------------

def backward(tape: Tape, out: Tensor) -> None:
    """Propagate d(out)/d(leaf) through the tape into watched Parameters.

    `out` must be a scalar (one element) produced on this tape.  Parameter
    gradients accumulate; call zero_grad between independent passes.
    """
    if out.data.size != 1:
        raise ValueError(f"backward: output must be scalar, got shape {out.data.shape}")
    if out.tape is not tape:
        raise ValueError("backward: output does not belong to this tape")
    grads: dict[int, list] = {id(out): [np.ones_like(out.data), True]}
    for node_out, bwd in reversed(tape.nodes):
        entry = grads.pop(id(node_out), None)
        if entry is None:
            continue
        bwd(entry[0], grads)
    for leaf, param in tape.watched:
        entry = grads.get(id(leaf))
        if entry is not None:
            param.grad += entry[0]


def grad_check(fn, point: np.ndarray, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `fn` maps a Tensor to a scalar Tensor.  The relative error at each
    coordinate is |a - n| / max(1e-8, |a| + |n|).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    point = np.asarray(point, dtype=np.float64)
    param = Parameter("gradcheck.x", point.copy())
    tape = Tape()
    out = fn(tape.watch(param))
    tape.backward(out)
    analytic = param.grad.copy()

    def value_at(x):
        t = Tape()
        v = fn(t.tensor(x))
        if v.data.size != 1:
            raise ValueError("grad_check: function must return a scalar")
        return float(v.data)

    numeric = np.zeros_like(point)
    flat = point.ravel()
    num_flat = numeric.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        hi = value_at(point)
        flat[i] = orig - epsilon
        lo = value_at(point)
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise GradCheckError(f"non-finite value while perturbing coordinate {i}")
        num_flat[i] = (hi - lo) / (2.0 * epsilon)

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
