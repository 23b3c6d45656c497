"""Dense float64 tensors with reverse-mode automatic differentiation.

The operation set is fixed: it covers exactly what the three video models
need (dense/conv layers, pooling attention, the two losses). Every forward
op records a graph node when gradients are required; the tape order (node
creation order) is a valid topological order, so ``backward`` walks nodes
by descending id. ``grad_check`` compares analytic gradients of any op
against central finite differences.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np


class AutodiffError(Exception):
    """Base class for tensor-engine failures."""


class ShapeMismatch(AutodiffError):
    def __init__(self, kind, expected, actual):
        super().__init__(f"{kind}: expected {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class NonFiniteError(AutodiffError):
    pass


class UnknownOpError(AutodiffError):
    pass


class GraphError(AutodiffError):
    pass


_node_counter = itertools.count()


@dataclass
class OpNode:
    kind: str
    inputs: tuple
    attrs: dict
    out_shape: tuple


class Tensor:
    """Immutable n-d array of float64, optionally tracked on the tape.

    ``grad`` is populated on requires_grad leaves by ``backward``;
    ``node_id`` orders tensors by creation and keys the gradient map.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id", "op")

    def __init__(self, data, requires_grad=False, _op=None, _checked=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if not _checked:
            _require_finite(arr, "tensor")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = next(_node_counter)
        self.op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, id={self.node_id})"


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape):
    return Tensor(np.zeros(shape), _checked=True)


def ones(shape):
    return Tensor(np.ones(shape), _checked=True)


def _require_finite(arr, where):
    # a single-pass reduction is cheaper than isfinite().all(); NaN and
    # +-inf both poison the sum. The sum itself can overflow on huge finite
    # values, so confirm with the exact check before raising.
    with np.errstate(over="ignore"):
        fast = float(arr.sum()) if arr.size else 0.0
    if not math.isfinite(fast) and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in {where}")


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcastable(a, b):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        return None


# ---------------------------------------------------------------------------
# op registry: kind -> (forward, vjp)
#
# forward(arrays, attrs) -> output array
# vjp(grad, arrays, out, attrs) -> tuple of per-input gradients (None where
# an input needs no gradient contribution)
# ---------------------------------------------------------------------------

_OPS = {}


def _register(kind):
    def wrap(cls):
        _OPS[kind] = cls
        return cls

    return wrap


def _ew_check(kind, a, b):
    shape = _broadcastable(a.shape, b.shape)
    if shape is None:
        raise ShapeMismatch(kind, f"broadcastable shapes", f"{a.shape} vs {b.shape}")
    return shape


@_register("add")
class _Add:
    @staticmethod
    def forward(xs, attrs):
        a, b = xs
        _ew_check("add", a, b)
        return a + b

    @staticmethod
    def vjp(g, xs, out, attrs):
        a, b = xs
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


@_register("subtract")
class _Subtract:
    @staticmethod
    def forward(xs, attrs):
        a, b = xs
        _ew_check("subtract", a, b)
        return a - b

    @staticmethod
    def vjp(g, xs, out, attrs):
        a, b = xs
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


@_register("multiply")
class _Multiply:
    @staticmethod
    def forward(xs, attrs):
        a, b = xs
        _ew_check("multiply", a, b)
        return a * b

    @staticmethod
    def vjp(g, xs, out, attrs):
        a, b = xs
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@_register("scalar_multiply")
class _ScalarMultiply:
    @staticmethod
    def forward(xs, attrs):
        return xs[0] * attrs["value"]

    @staticmethod
    def vjp(g, xs, out, attrs):
        return (g * attrs["value"],)


@_register("matmul")
class _Matmul:
    @staticmethod
    def forward(xs, attrs):
        a, b = xs
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeMismatch("matmul", "rank >= 2 operands", f"{a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeMismatch("matmul", f"inner dim {a.shape[-1]}", f"{b.shape[-2]}")
        if _broadcastable(a.shape[:-2], b.shape[:-2]) is None:
            raise ShapeMismatch("matmul", "broadcastable batch dims", f"{a.shape} @ {b.shape}")
        return a @ b

    @staticmethod
    def vjp(g, xs, out, attrs):
        a, b = xs
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


@_register("reshape")
class _Reshape:
    @staticmethod
    def forward(xs, attrs):
        (a,) = xs
        shape = tuple(attrs["shape"])
        if int(np.prod(shape)) != a.size:
            raise ShapeMismatch("reshape", f"{a.size} elements", f"shape {shape}")
        return a.reshape(shape)

    @staticmethod
    def vjp(g, xs, out, attrs):
        return (g.reshape(xs[0].shape),)


@_register("permute")
class _Permute:
    @staticmethod
    def forward(xs, attrs):
        (a,) = xs
        axes = tuple(attrs["axes"])
        if sorted(axes) != list(range(a.ndim)):
            raise ShapeMismatch("permute", f"permutation of {a.ndim} axes", f"{axes}")
        return np.transpose(a, axes)

    @staticmethod
    def vjp(g, xs, out, attrs):
        inverse = np.argsort(attrs["axes"])
        return (np.transpose(g, inverse),)


@_register("concat")
class _Concat:
    @staticmethod
    def forward(xs, attrs):
        axis = attrs["axis"]
        ref = xs[0].shape
        for x in xs[1:]:
            if len(x.shape) != len(ref) or any(
                x.shape[i] != ref[i] for i in range(len(ref)) if i != axis
            ):
                raise ShapeMismatch("concat", f"match {ref} off axis {axis}", f"{x.shape}")
        return np.concatenate(xs, axis=axis)

    @staticmethod
    def vjp(g, xs, out, attrs):
        axis = attrs["axis"]
        splits = np.cumsum([x.shape[axis] for x in xs[:-1]])
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))


@_register("slice")
class _Slice:
    @staticmethod
    def forward(xs, attrs):
        (a,) = xs
        starts, stops = attrs["starts"], attrs["stops"]
        if len(starts) != a.ndim or len(stops) != a.ndim:
            raise ShapeMismatch("slice", f"{a.ndim} start/stop pairs", f"{len(starts)}/{len(stops)}")
        for i, (s, e) in enumerate(zip(starts, stops)):
            if not (0 <= s < e <= a.shape[i]):
                raise ShapeMismatch("slice", f"0 <= start < stop <= {a.shape[i]} on axis {i}", f"[{s}:{e}]")
        return a[tuple(slice(s, e) for s, e in zip(starts, stops))]

    @staticmethod
    def vjp(g, xs, out, attrs):
        gx = np.zeros(xs[0].shape)
        gx[tuple(slice(s, e) for s, e in zip(attrs["starts"], attrs["stops"]))] = g
        return (gx,)


@_register("relu")
class _Relu:
    @staticmethod
    def forward(xs, attrs):
        return np.maximum(xs[0], 0.0)

    @staticmethod
    def vjp(g, xs, out, attrs):
        # derivative at exactly 0 is defined as 0
        return (g * (xs[0] > 0.0),)


@_register("sigmoid")
class _Sigmoid:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    @staticmethod
    def vjp(g, xs, out, attrs):
        return (g * out * (1.0 - out),)


@_register("tanh")
class _Tanh:
    @staticmethod
    def forward(xs, attrs):
        return np.tanh(xs[0])

    @staticmethod
    def vjp(g, xs, out, attrs):
        return (g * (1.0 - out * out),)


@_register("softmax")
class _Softmax:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        axis = attrs["axis"]
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=axis, keepdims=True)

    @staticmethod
    def vjp(g, xs, out, attrs):
        axis = attrs["axis"]
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)


@_register("layer_norm")
class _LayerNorm:
    """Normalizes the last axis to zero mean, unit variance (no affine)."""

    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        eps = attrs.get("epsilon", 1e-5)
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        return (x - mu) / np.sqrt(var + eps)

    @staticmethod
    def vjp(g, xs, out, attrs):
        x = xs[0]
        eps = attrs.get("epsilon", 1e-5)
        n = x.shape[-1]
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)


def _conv_out(n, k, s, p):
    return (n + 2 * p - k) // s + 1


@_register("conv2d")
class _Conv2d:
    @staticmethod
    def forward(xs, attrs):
        x, w = xs
        if x.ndim != 4 or w.ndim != 4:
            raise ShapeMismatch("conv2d", "(B,C,H,W) and (O,C,kh,kw)", f"{x.shape}, {w.shape}")
        if x.shape[1] != w.shape[1]:
            raise ShapeMismatch("conv2d", f"{w.shape[1]} input channels", f"{x.shape[1]}")
        sh, sw = attrs["stride"]
        ph, pw = attrs["padding"]
        b, c, h, wd = x.shape
        o, _, kh, kw = w.shape
        oh, ow = _conv_out(h, kh, sh, ph), _conv_out(wd, kw, sw, pw)
        if oh <= 0 or ow <= 0:
            raise ShapeMismatch("conv2d", "positive output extent", f"{oh}x{ow}")
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        out = np.zeros((b, o, oh, ow))
        for u in range(kh):
            for v in range(kw):
                patch = xp[:, :, u : u + sh * oh : sh, v : v + sw * ow : sw]
                out += np.einsum("bcij,oc->boij", patch, w[:, :, u, v])
        return out

    @staticmethod
    def vjp(g, xs, out, attrs):
        x, w = xs
        sh, sw = attrs["stride"]
        ph, pw = attrs["padding"]
        _, _, oh, ow = g.shape
        kh, kw = w.shape[2], w.shape[3]
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        for u in range(kh):
            for v in range(kw):
                patch = xp[:, :, u : u + sh * oh : sh, v : v + sw * ow : sw]
                gw[:, :, u, v] = np.einsum("boij,bcij->oc", g, patch)
                gxp[:, :, u : u + sh * oh : sh, v : v + sw * ow : sw] += np.einsum(
                    "boij,oc->bcij", g, w[:, :, u, v]
                )
        h, wd = x.shape[2], x.shape[3]
        return gxp[:, :, ph : ph + h, pw : pw + wd], gw


@_register("conv1d")
class _Conv1d:
    """Temporal convolution over (B, C, T)."""

    @staticmethod
    def forward(xs, attrs):
        x, w = xs
        if x.ndim != 3 or w.ndim != 3:
            raise ShapeMismatch("conv1d", "(B,C,T) and (O,C,k)", f"{x.shape}, {w.shape}")
        if x.shape[1] != w.shape[1]:
            raise ShapeMismatch("conv1d", f"{w.shape[1]} input channels", f"{x.shape[1]}")
        s = attrs["stride"]
        p = attrs["padding"]
        b, c, t = x.shape
        o, _, k = w.shape
        ot = _conv_out(t, k, s, p)
        if ot <= 0:
            raise ShapeMismatch("conv1d", "positive output extent", f"{ot}")
        xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
        out = np.zeros((b, o, ot))
        for u in range(k):
            out += np.einsum("bct,oc->bot", xp[:, :, u : u + s * ot : s], w[:, :, u])
        return out

    @staticmethod
    def vjp(g, xs, out, attrs):
        x, w = xs
        s = attrs["stride"]
        p = attrs["padding"]
        ot = g.shape[2]
        k = w.shape[2]
        xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        for u in range(k):
            patch = xp[:, :, u : u + s * ot : s]
            gw[:, :, u] = np.einsum("bot,bct->oc", g, patch)
            gxp[:, :, u : u + s * ot : s] += np.einsum("bot,oc->bct", g, w[:, :, u])
        return gxp[:, :, p : p + x.shape[2]], gw


def _pool_counts(dims, stride):
    """Per-output-cell coverage for ceil-mode pooling (truncated windows)."""
    outs = [math.ceil(n / s) for n, s in zip(dims, stride)]
    counts = np.ones(outs)
    for axis, (n, s, m) in enumerate(zip(dims, stride, outs)):
        per = np.full(m, s, dtype=np.float64)
        per[-1] = n - (m - 1) * s
        shape = [1] * len(outs)
        shape[axis] = m
        counts = counts * per.reshape(shape)
    return outs, counts


@_register("avg_pool")
class _AvgPool:
    """Strided average pooling over a token grid (B, n1..nk, C), k in 1..3.

    Ceil mode: windows truncated at the boundary are averaged over their
    actual coverage.
    """

    @staticmethod
    def forward(xs, attrs):
        (x,) = xs
        stride = tuple(attrs["stride"])
        k = len(stride)
        if not 1 <= k <= 3 or x.ndim != k + 2:
            raise ShapeMismatch("avg_pool", f"rank {len(stride) + 2} input", f"{x.shape}")
        if any(s < 1 for s in stride):
            raise ShapeMismatch("avg_pool", "positive strides", f"{stride}")
        dims = x.shape[1:-1]
        outs, counts = _pool_counts(dims, stride)
        padded = [m * s for m, s in zip(outs, stride)]
        xp = np.zeros((x.shape[0], *padded, x.shape[-1]))
        xp[(slice(None), *[slice(0, n) for n in dims], slice(None))] = x
        grouped = xp.reshape(
            x.shape[0], *itertools.chain(*zip(outs, stride)), x.shape[-1]
        )
        summed = grouped.sum(axis=tuple(range(2, 2 + 2 * k, 2)))
        return summed / counts[None, ..., None]

    @staticmethod
    def vjp(g, xs, out, attrs):
        (x,) = xs
        stride = tuple(attrs["stride"])
        k = len(stride)
        dims = x.shape[1:-1]
        outs, counts = _pool_counts(dims, stride)
        gn = g / counts[None, ..., None]
        expand = gn.reshape(
            g.shape[0], *itertools.chain(*zip(outs, [1] * k)), g.shape[-1]
        )
        target = (g.shape[0], *itertools.chain(*zip(outs, stride)), g.shape[-1])
        full = np.broadcast_to(expand, target).reshape(
            g.shape[0], *[m * s for m, s in zip(outs, stride)], g.shape[-1]
        )
        return (full[(slice(None), *[slice(0, n) for n in dims], slice(None))],)


@_register("global_average_pool")
class _GlobalAveragePool:
    @staticmethod
    def forward(xs, attrs):
        (x,) = xs
        axes = tuple(attrs["axes"])
        if any(not 0 <= a < x.ndim for a in axes):
            raise ShapeMismatch("global_average_pool", f"axes within rank {x.ndim}", f"{axes}")
        return x.mean(axis=axes)

    @staticmethod
    def vjp(g, xs, out, attrs):
        x = xs[0]
        axes = tuple(attrs["axes"])
        scale = 1.0 / np.prod([x.shape[a] for a in axes])
        return (np.broadcast_to(np.expand_dims(g, axes) * scale, x.shape),)


@_register("sum")
class _Sum:
    @staticmethod
    def forward(xs, attrs):
        axes = attrs.get("axes")
        return xs[0].sum(axis=None if axes is None else tuple(axes))

    @staticmethod
    def vjp(g, xs, out, attrs):
        x = xs[0]
        axes = attrs.get("axes")
        if axes is None:
            return (np.broadcast_to(g, x.shape),)
        return (np.broadcast_to(np.expand_dims(g, tuple(axes)), x.shape),)


@_register("mean")
class _Mean:
    @staticmethod
    def forward(xs, attrs):
        axes = attrs.get("axes")
        return xs[0].mean(axis=None if axes is None else tuple(axes))

    @staticmethod
    def vjp(g, xs, out, attrs):
        x = xs[0]
        axes = attrs.get("axes")
        if axes is None:
            return (np.broadcast_to(g / x.size, x.shape),)
        scale = 1.0 / np.prod([x.shape[a] for a in axes])
        return (np.broadcast_to(np.expand_dims(g, tuple(axes)) * scale, x.shape),)


@_register("squared_error_sum")
class _SquaredErrorSum:
    @staticmethod
    def forward(xs, attrs):
        a, b = xs
        if a.shape != b.shape:
            raise ShapeMismatch("squared_error_sum", f"{a.shape}", f"{b.shape}")
        d = a - b
        return np.asarray((d * d).sum())

    @staticmethod
    def vjp(g, xs, out, attrs):
        a, b = xs
        d = 2.0 * g * (a - b)
        return d, -d


@_register("cross_entropy_logits")
class _CrossEntropyLogits:
    """Sum over the batch of -log softmax(logits)[target], via log-sum-exp."""

    @staticmethod
    def forward(xs, attrs):
        (logits,) = xs
        targets = attrs["targets"]
        if logits.ndim != 2:
            raise ShapeMismatch("cross_entropy_logits", "(B,K) logits", f"{logits.shape}")
        if len(targets) != logits.shape[0]:
            raise ShapeMismatch(
                "cross_entropy_logits", f"{logits.shape[0]} targets", f"{len(targets)}"
            )
        k = logits.shape[1]
        for t in targets:
            if not 0 <= t < k:
                raise AutodiffError(f"cross_entropy_logits: class {t} out of range [0,{k})")
        m = logits.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
        picked = logits[np.arange(logits.shape[0]), list(targets)]
        return np.asarray((lse - picked).sum())

    @staticmethod
    def vjp(g, xs, out, attrs):
        (logits,) = xs
        targets = list(attrs["targets"])
        m = logits.max(axis=1, keepdims=True)
        e = np.exp(logits - m)
        p = e / e.sum(axis=1, keepdims=True)
        p[np.arange(logits.shape[0]), targets] -= 1.0
        return (g * p,)


@_register("embedding_add")
class _EmbeddingAdd:
    """Adds a learned positional table to every batch item of a token grid."""

    @staticmethod
    def forward(xs, attrs):
        grid, table = xs
        if table.shape != grid.shape[1:]:
            raise ShapeMismatch("embedding_add", f"table {grid.shape[1:]}", f"{table.shape}")
        return grid + table

    @staticmethod
    def vjp(g, xs, out, attrs):
        return g, g.sum(axis=0)


OP_KINDS = tuple(sorted(_OPS))


def apply(kind, inputs, attrs=None):
    """Run one forward op, recording a graph node if gradients are needed.

    Inputs must be Tensors; all values are finite by construction and the
    output is verified finite (overflow raises instead of propagating).
    """
    if kind not in _OPS:
        raise UnknownOpError(f"unknown op kind {kind!r}")
    attrs = {} if attrs is None else attrs
    arrays = tuple(t.data for t in inputs)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = _OPS[kind].forward(arrays, attrs)
    _require_finite(out, f"{kind} output")
    requires = any(t.requires_grad for t in inputs)
    node = OpNode(kind, tuple(inputs), attrs, out.shape) if requires else None
    return Tensor(out, requires_grad=requires, _op=node, _checked=True)


def backward(loss):
    """Accumulate d(loss)/d(node) for every tensor reachable from ``loss``.

    Returns a map node_id -> gradient Tensor. Populates ``grad`` on every
    requires_grad leaf in the graph, then consumes the graph (the visited
    tensors drop their op records, so a second backward raises).
    """
    if loss.shape != ():
        raise GraphError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss.op is None:
        raise GraphError("backward on an empty graph (loss records no ops)")

    visited = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.node_id in visited:
            continue
        visited[t.node_id] = t
        if t.op is not None:
            stack.extend(t.op.inputs)

    grads = {loss.node_id: np.ones(())}
    result = {}
    for t in sorted(visited.values(), key=lambda v: v.node_id, reverse=True):
        g = grads.pop(t.node_id, None)
        if g is None:
            continue
        result[t.node_id] = g
        if t.op is None:
            if t.requires_grad:
                g = np.asarray(g)
                g.flags.writeable = False
                t.grad = g
            continue
        input_grads = _OPS[t.op.kind].vjp(g, tuple(i.data for i in t.op.inputs), t.data, t.op.attrs)
        for inp, ig in zip(t.op.inputs, input_grads):
            if ig is None or not (inp.requires_grad or inp.op is not None):
                continue
            if inp.node_id in grads:
                grads[inp.node_id] = grads[inp.node_id] + ig
            else:
                grads[inp.node_id] = ig

    for t in visited.values():
        t.op = None
    return {nid: Tensor(g, _checked=True) for nid, g in result.items()}


@dataclass
class CheckReport:
    """Outcome of one finite-difference gradient check."""

    kind: str
    max_rel_err: float
    per_input: list = field(default_factory=list)

    def ok(self, tol):
        return self.max_rel_err < tol


FD_STEP = 1e-5


def _rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def _seeded_inputs(kind, shapes, rng):
    arrays = [rng.standard_normal(s) for s in shapes]
    if kind == "relu":
        # keep inputs away from the kink so the difference quotient is valid
        arrays = [np.where(np.abs(a) < 1e-3, np.sign(a) * 1e-3 + (a == 0) * 1e-3, a) for a in arrays]
    return arrays


def _default_attrs(kind, shapes):
    if kind == "scalar_multiply":
        return {"value": 1.7}
    if kind == "softmax":
        return {"axis": len(shapes[0]) - 1}
    if kind == "layer_norm":
        return {"epsilon": 1e-5}
    if kind == "conv2d":
        return {"stride": (1, 1), "padding": (1, 1)}
    if kind == "conv1d":
        return {"stride": 1, "padding": 1}
    if kind == "avg_pool":
        return {"stride": (2,) * (len(shapes[0]) - 2)}
    if kind == "global_average_pool":
        return {"axes": tuple(range(1, len(shapes[0])))}
    if kind == "reshape":
        return {"shape": (int(np.prod(shapes[0])),)}
    if kind == "permute":
        return {"axes": tuple(reversed(range(len(shapes[0]))))}
    if kind == "concat":
        return {"axis": 0}
    if kind == "slice":
        return {"starts": (0,) * len(shapes[0]), "stops": tuple(shapes[0])}
    if kind == "sum" or kind == "mean":
        return {"axes": None}
    if kind == "cross_entropy_logits":
        return {"targets": tuple(i % shapes[0][1] for i in range(shapes[0][0]))}
    return {}


def grad_check(kind, shapes, seed, attrs=None):
    """Compare reverse-mode gradients of one op against central differences.

    The op output is contracted to a scalar with fixed random weights, so
    every partial derivative of that scalar is exercised. Relative error
    uses max(|analytic|, |numeric|, 1e-8) as the denominator.
    """
    if kind not in _OPS:
        raise UnknownOpError(f"unknown op kind {kind!r}")
    attrs = _default_attrs(kind, shapes) if attrs is None else attrs
    rng = np.random.default_rng(seed)
    arrays = _seeded_inputs(kind, shapes, rng)
    out_probe = _OPS[kind].forward(tuple(arrays), attrs)
    weights = rng.standard_normal(out_probe.shape)

    def objective(arrs):
        return float((_OPS[kind].forward(tuple(arrs), attrs) * weights).sum())

    tensors = [tensor(a, requires_grad=True) for a in arrays]
    out = apply(kind, tensors, attrs)
    loss = apply("sum", [apply("multiply", [out, tensor(weights)])], {"axes": None})
    backward(loss)

    report = CheckReport(kind=kind, max_rel_err=0.0)
    for idx, (base, t) in enumerate(zip(arrays, tensors)):
        analytic = t.grad if t.grad is not None else np.zeros(base.shape)
        worst = 0.0
        flat = base.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            plus = [a.copy() for a in arrays]
            plus[idx].reshape(-1)[j] = orig + FD_STEP
            minus = [a.copy() for a in arrays]
            minus[idx].reshape(-1)[j] = orig - FD_STEP
            numeric = (objective(plus) - objective(minus)) / (2 * FD_STEP)
            worst = max(worst, _rel_err(float(analytic.reshape(-1)[j]), numeric))
        report.per_input.append(worst)
        report.max_rel_err = max(report.max_rel_err, worst)
    return report


# canonical shape/attr cases covering every registered op; the verify
# suite and the tests both run these across seeds
GRADCHECK_SUITE = (
    ("add", ((3, 4), (3, 4)), None),
    ("add", ((3, 4), (4,)), None),
    ("subtract", ((3, 4), (3, 4)), None),
    ("multiply", ((3, 4), (3, 4)), None),
    ("scalar_multiply", ((3, 4),), None),
    ("matmul", ((3, 4), (4, 2)), None),
    ("matmul", ((2, 3, 4), (2, 4, 2)), None),
    ("matmul", ((2, 3, 4), (4, 2)), None),
    ("reshape", ((2, 6),), {"shape": (3, 4)}),
    ("permute", ((2, 3, 4),), {"axes": (2, 0, 1)}),
    ("concat", ((2, 3), (2, 2)), {"axis": 1}),
    ("slice", ((4, 5),), {"starts": (1, 0), "stops": (3, 4)}),
    ("relu", ((8,),), None),
    ("sigmoid", ((6,),), None),
    ("tanh", ((6,),), None),
    ("softmax", ((5,),), {"axis": 0}),
    ("softmax", ((3, 4),), {"axis": 1}),
    ("layer_norm", ((4,),), None),
    ("layer_norm", ((2, 5),), None),
    ("conv2d", ((2, 2, 5, 5), (3, 2, 3, 3)), {"stride": (2, 2), "padding": (1, 1)}),
    ("conv1d", ((2, 2, 7), (3, 2, 3)), {"stride": 2, "padding": 1}),
    ("avg_pool", ((2, 5, 3),), {"stride": (2,)}),
    ("avg_pool", ((2, 5, 4, 3),), {"stride": (2, 2)}),
    ("avg_pool", ((2, 3, 5, 4, 2),), {"stride": (2, 2, 2)}),
    ("global_average_pool", ((2, 3, 4, 5),), {"axes": (1, 2)}),
    ("sum", ((3, 4),), {"axes": None}),
    ("sum", ((3, 4),), {"axes": (0,)}),
    ("mean", ((3, 4),), {"axes": (1,)}),
    ("squared_error_sum", ((3, 2), (3, 2)), None),
    ("cross_entropy_logits", ((3, 5),), {"targets": (0, 4, 2)}),
    ("embedding_add", ((2, 3, 4, 5), (3, 4, 5)), None),
)


# convenience wrappers used by the model code -------------------------------


def add(a, b):
    return apply("add", (a, b))


def subtract(a, b):
    return apply("subtract", (a, b))


def multiply(a, b):
    return apply("multiply", (a, b))


def scalar_multiply(a, value):
    return apply("scalar_multiply", (a,), {"value": float(value)})


def matmul(a, b):
    return apply("matmul", (a, b))


def reshape(a, shape):
    return apply("reshape", (a,), {"shape": tuple(shape)})


def permute(a, axes):
    return apply("permute", (a,), {"axes": tuple(axes)})


def concat(tensors, axis):
    return apply("concat", tuple(tensors), {"axis": axis})


def slice_(a, starts, stops):
    return apply("slice", (a,), {"starts": tuple(starts), "stops": tuple(stops)})


def relu(a):
    return apply("relu", (a,))


def sigmoid(a):
    return apply("sigmoid", (a,))


def tanh(a):
    return apply("tanh", (a,))


def softmax(a, axis):
    return apply("softmax", (a,), {"axis": axis})


def layer_norm(a, epsilon=1e-5):
    return apply("layer_norm", (a,), {"epsilon": epsilon})


def conv2d(x, w, stride, padding):
    return apply("conv2d", (x, w), {"stride": tuple(stride), "padding": tuple(padding)})


def conv1d(x, w, stride, padding):
    return apply("conv1d", (x, w), {"stride": int(stride), "padding": int(padding)})


def avg_pool(x, stride):
    return apply("avg_pool", (x,), {"stride": tuple(stride)})


def global_average_pool(x, axes):
    return apply("global_average_pool", (x,), {"axes": tuple(axes)})


def sum_(a, axes=None):
    return apply("sum", (a,), {"axes": axes})


def mean(a, axes=None):
    return apply("mean", (a,), {"axes": axes})


def squared_error_sum(a, b):
    return apply("squared_error_sum", (a, b))


def cross_entropy_logits(logits, targets):
    return apply("cross_entropy_logits", (logits,), {"targets": tuple(int(t) for t in targets)})


def embedding_add(grid, table):
    return apply("embedding_add", (grid, table))
