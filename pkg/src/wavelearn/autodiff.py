"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records every differentiable operation of one forward pass in
execution order (which is a topological order by construction).  ``backward``
walks the records in reverse and accumulates gradients into the
``requires_grad`` leaves.  There is one tape per forward pass; parameters are
registered as leaves the first time the pass touches them.  Tapes are
confined to a single thread; running with no active tape computes plain
forward values and records nothing.
"""

from __future__ import annotations

import itertools
import threading

import numpy as np

from .errors import ContractError, DimensionError, DomainError, InputTooShortError

_STATE = threading.local()
_TAPE_IDS = itertools.count(1)


def _active_tape():
    return getattr(_STATE, "tape", None)


class Tape:
    """Ordered record of one forward pass, usable as a context manager."""

    def __init__(self):
        self.uid = next(_TAPE_IDS)
        self.kinds = []
        self.parent_ids = []
        self.backward_fns = []
        self.leaves = []  # (node_id, Tensor) pairs for gradient write-back
        self._leaf_ids = {}

    def __len__(self):
        return len(self.kinds)

    def __enter__(self):
        self._outer = _active_tape()
        _STATE.tape = self
        return self

    def __exit__(self, *exc):
        _STATE.tape = self._outer
        return False

    def _leaf_node(self, tensor):
        nid = self._leaf_ids.get(id(tensor))
        if nid is None:
            nid = self._append("leaf", (), None)
            self._leaf_ids[id(tensor)] = nid
            self.leaves.append((nid, tensor))
        return nid

    def _append(self, kind, parent_ids, backward_fn):
        nid = len(self.kinds)
        self.kinds.append(kind)
        self.parent_ids.append(parent_ids)
        self.backward_fns.append(backward_fn)
        return nid


class Tensor:
    """Dense float64 array that can participate in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = None
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return take(self, index)


def _wrap(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data):
    return Tensor(data, requires_grad=True)


def record(kind, out_data, parents, backward_fn):
    """Create the output tensor of an operation, recording it when needed.

    ``backward_fn(grad) -> tuple`` must return one gradient array (or None)
    per parent, in order.  Custom fused primitives in other modules use this
    hook too.
    """
    tape = _active_tape()
    out = Tensor(out_data)
    if tape is None:
        return out
    pids = []
    tracked = False
    for p in parents:
        if p.node_id is not None and p.tape is tape:
            pids.append(p.node_id)
            tracked = True
        elif p.requires_grad:
            pids.append(tape._leaf_node(p))
            tracked = True
        else:
            pids.append(-1)
    if not tracked:
        return out
    out.node_id = tape._append(kind, tuple(pids), backward_fn)
    out.tape = tape
    out.requires_grad = True
    return out


def backward(root):
    """Accumulate d(root)/d(leaf) into every requires_grad leaf of the tape.

    Repeated calls without clearing leaf grads accumulate, which is what
    gradient accumulation over a logical batch relies on.
    """
    if not isinstance(root, Tensor) or root.tape is None or root.node_id is None:
        raise ContractError("backward root must be produced on an active tape")
    if root.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.data.shape}")
    tape = root.tape
    grads = [None] * (root.node_id + 1)
    grads[root.node_id] = np.ones_like(root.data)
    for nid in range(root.node_id, -1, -1):
        g = grads[nid]
        if g is None:
            continue
        fn = tape.backward_fns[nid]
        if fn is None:
            continue
        parent_grads = fn(g)
        for pid, pg in zip(tape.parent_ids[nid], parent_grads):
            if pid < 0 or pg is None:
                continue
            if grads[pid] is None:
                grads[pid] = np.array(pg, dtype=np.float64, copy=True)
            else:
                grads[pid] += pg
        grads[nid] = None
    for nid, tensor in tape.leaves:
        if nid <= root.node_id and grads[nid] is not None:
            if tensor.grad is None:
                tensor.grad = grads[nid]
            else:
                tensor.grad = tensor.grad + grads[nid]


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# ---------------------------------------------------------------------------
# pointwise operations


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data, "add")
    return record(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data, "sub")
    return record(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data, "mul")
    return record(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def neg(a):
    return record("neg", -a.data, (a,), lambda g: (-g,))


def exp(a):
    out = np.exp(a.data)
    return record("exp", out, (a,), lambda g: (g * out,))


def log(a):
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    return record("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(a):
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(a.data)
    return record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def leaky_relu(a, slope=0.01):
    factor = np.where(a.data >= 0, 1.0, slope)
    return record("leaky_relu", a.data * factor, (a,), lambda g: (g * factor,))


def softplus(a):
    # log(1 + e^x) in an overflow-safe form; derivative is the sigmoid.
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bwd(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return (g * s,)

    return record("softplus", out, (a,), bwd)


def pow_const(a, exponent):
    """Elementwise a**c for a constant real exponent."""
    c = float(exponent)
    out = a.data**c

    def bwd(g):
        if c == 0.0:
            return (np.zeros_like(a.data),)
        return (g * c * a.data ** (c - 1.0),)

    return record("pow", out, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError("matmul operands must have at least 2 dimensions")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner extents differ: {a.data.shape} x {b.data.shape}"
        )
    out = a.data @ b.data

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return (_unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape))

    return record("matmul", out, (a, b), bwd)


def transpose(a, axes=None):
    order = tuple(axes) if axes is not None else tuple(reversed(range(a.data.ndim)))
    inverse = tuple(np.argsort(order))
    return record(
        "transpose",
        np.transpose(a.data, order),
        (a,),
        lambda g: (np.transpose(g, inverse),),
    )


def reshape(a, shape):
    old = a.data.shape
    return record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def flip(a, axis):
    return record("flip", np.flip(a.data, axis=axis), (a,), lambda g: (np.flip(g, axis=axis),))


def take(a, index):
    """Basic (non-repeating) indexing with ints and slices."""
    out = a.data[index]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return record("take", out, (a,), bwd)


def concat(tensors, axis):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def bwd(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(tensors)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return record("concat", out, tuple(tensors), bwd)


def stack(tensors, axis):
    tensors = [_wrap(t) for t in tensors]
    first = tensors[0].data.shape
    for t in tensors:
        if t.data.shape != first:
            raise DimensionError(f"stack extents differ: {t.data.shape} vs {first}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return record("stack", out, tuple(tensors), bwd)


def _normalize_axis(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    normalized = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} invalid for {ndim}-d value")
        normalized.append(ax % ndim)
    return tuple(normalized)


def reduce_sum(a, axis=None, keepdims=False):
    axes = _normalize_axis(axis, a.data.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return record("sum", out, (a,), bwd)


def reduce_mean(a, axis=None, keepdims=False):
    axes = _normalize_axis(axis, a.data.ndim)
    out = a.data.mean(axis=axes, keepdims=keepdims)
    if axes is None:
        count = a.data.size
    else:
        count = int(np.prod([a.data.shape[ax] for ax in axes]))

    def bwd(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape).copy() / count,)

    return record("mean", out, (a,), bwd)


def softmax(a, axis):
    _normalize_axis(axis, a.data.ndim)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", out, (a,), bwd)


def log_softmax(a, axis):
    _normalize_axis(axis, a.data.ndim)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return record("log_softmax", out, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution and normalization


def _conv_geometry(width, taps, stride, dilation, padding):
    span = dilation * (taps - 1) + 1
    if padding == "circular":
        if width < span:
            raise InputTooShortError(
                f"circular conv needs width >= {span}, got {width}"
            )
        out_w = -(-width // stride)
        idx = (np.arange(out_w)[:, None] * stride + np.arange(taps)[None, :] * dilation) % width
        return out_w, idx, 0
    pad = int(padding)
    padded = width + 2 * pad
    out_w = (padded - span) // stride + 1
    if out_w < 1:
        raise InputTooShortError(
            f"conv input too short: padded width {padded} < kernel span {span}"
        )
    idx = np.arange(out_w)[:, None] * stride + np.arange(taps)[None, :] * dilation
    return out_w, idx, pad


def _conv_forward_data(x, w, b, stride, dilation, padding):
    batch, chans, width = x.shape
    k_out, _, taps = w.shape
    out_w, idx, pad = _conv_geometry(width, taps, stride, dilation, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    cols = xp[:, :, idx]  # (batch, C, out_w, S)
    mat = cols.transpose(0, 2, 1, 3).reshape(batch * out_w, chans * taps)
    out = mat @ w.reshape(k_out, chans * taps).T
    out = out.reshape(batch, out_w, k_out).transpose(0, 2, 1)
    if b is not None:
        out = out + b[None, :, None]
    return out, mat, idx, pad


def conv1d(x, w, b=None, stride=1, dilation=1, padding=0):
    """Cross-correlation along the last axis.

    ``x``: (batch, C, W), ``w``: (K, C, S), optional ``b``: (K,).  ``padding``
    is an integer count of zeros added to both ends, or ``"circular"`` for
    periodic indexing (output width ceil(W / stride)).
    """
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise DimensionError("conv1d expects x (batch, C, W) and w (K, C, S)")
    if x.data.shape[1] != w.data.shape[1]:
        raise DimensionError(
            f"conv1d channel mismatch: input {x.data.shape[1]}, weight {w.data.shape[1]}"
        )
    if stride < 1 or dilation < 1:
        raise DimensionError("conv1d stride and dilation must be positive")
    out, mat, idx, pad = _conv_forward_data(
        x.data, w.data, None if b is None else b.data, stride, dilation, padding
    )
    batch, chans, width = x.data.shape
    k_out, _, taps = w.data.shape
    out_w = out.shape[2]

    def bwd(g):
        gmat = g.transpose(0, 2, 1).reshape(batch * out_w, k_out)
        gw = (gmat.T @ mat).reshape(k_out, chans, taps)
        gb = None if b is None else g.sum(axis=(0, 2))
        gcols = (gmat @ w.data.reshape(k_out, chans * taps)).reshape(
            batch, out_w, chans, taps
        )
        if stride == 1 and padding != "circular":
            span = dilation * (taps - 1)
            gpad = np.pad(g, ((0, 0), (0, 0), (span, span)))
            wt = np.ascontiguousarray(w.data[:, :, ::-1].transpose(1, 0, 2))
            gx_full, _, _, _ = _conv_forward_data(gpad, wt, None, 1, dilation, 0)
            gx = gx_full[:, :, pad : pad + width] if pad else gx_full
        elif padding == "circular":
            # scatter the tap contributions with two wrap-free slice adds
            gx = np.zeros((batch, chans, width))
            parts = gcols.transpose(0, 2, 1, 3)  # (batch, C, out_w, S)
            for s in range(taps):
                offset = dilation * s
                n_direct = min(out_w, -(-(width - offset) // stride))
                seg = parts[:, :, :, s]
                stop = offset + (n_direct - 1) * stride + 1
                gx[:, :, offset : stop : stride] += seg[:, :, :n_direct]
                if n_direct < out_w:
                    start = n_direct * stride + offset - width
                    m = out_w - n_direct
                    gx[:, :, start : start + (m - 1) * stride + 1 : stride] += seg[:, :, n_direct:]
        else:
            gxp = np.zeros((batch, chans, width + 2 * pad))
            np.add.at(
                gxp,
                (
                    np.arange(batch)[:, None, None, None],
                    np.arange(chans)[None, :, None, None],
                    idx[None, None, :, :],
                ),
                gcols.transpose(0, 2, 1, 3),
            )
            gx = gxp[:, :, pad : pad + width] if pad else gxp
        grads = (gx, gw) if b is None else (gx, gw, gb)
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return record("conv1d", out, parents, bwd)


def instance_norm(x, gamma, beta, eps=1e-5):
    """Standardize each (batch, channel) row over the width axis, then affine."""
    if x.data.ndim != 3:
        raise DimensionError("instance_norm expects (batch, C, W)")
    if gamma.data.shape != (x.data.shape[1],) or beta.data.shape != (x.data.shape[1],):
        raise DimensionError("instance_norm affine parameters must have shape (C,)")
    mu = x.data.mean(axis=2, keepdims=True)
    var = x.data.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def bwd(g):
        ggamma = (g * xhat).sum(axis=(0, 2))
        gbeta = g.sum(axis=(0, 2))
        gxhat = g * gamma.data[None, :, None]
        gx = inv * (
            gxhat
            - gxhat.mean(axis=2, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=2, keepdims=True)
        )
        return (gx, ggamma, gbeta)

    return record("instance_norm", out, (x, gamma, beta), bwd)
