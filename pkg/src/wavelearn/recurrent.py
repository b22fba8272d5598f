"""Bidirectional recurrent sequence encoding with attention over time.

Gated recurrent cells follow the standard reset/update/candidate form.  The
stacked encoder runs one cell forward and one backward over time per layer
and concatenates their states per step; dropout applies between layers only,
during training, from a seeded generator.  The attention head scores hidden
states against the final state, softmax-normalizes over time, and squashes a
linear map of [context; final state] to produce one vector per sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _scan_kernels
from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, InputTooShortError


@dataclass
class GRUCellParams:
    w_ir: Tensor
    w_iz: Tensor
    w_in: Tensor
    w_hr: Tensor
    w_hz: Tensor
    w_hn: Tensor
    b_ir: Tensor
    b_iz: Tensor
    b_in: Tensor
    b_hr: Tensor
    b_hz: Tensor
    b_hn: Tensor

    @staticmethod
    def shapes(input_size, hidden_size):
        return (
            [(hidden_size, input_size)] * 3
            + [(hidden_size, hidden_size)] * 3
            + [(hidden_size,)] * 6
        )

    @classmethod
    def init(cls, input_size, hidden_size, rng):
        k = 1.0 / np.sqrt(hidden_size)
        arrays = [rng.uniform(-k, k, size=s) for s in cls.shapes(input_size, hidden_size)]
        return cls(*[ad.parameter(a) for a in arrays])

    def tensors(self):
        return [
            self.w_ir, self.w_iz, self.w_in,
            self.w_hr, self.w_hz, self.w_hn,
            self.b_ir, self.b_iz, self.b_in,
            self.b_hr, self.b_hz, self.b_hn,
        ]

    @property
    def hidden_size(self):
        return self.w_hr.data.shape[0]


def _linear(x, w, b):
    return ad.add(ad.matmul(x, ad.transpose(w)), b)


def gru_cell_step(x_t, h_prev, p):
    """One recurrence step on (batch, D_in) input and (batch, D_h) state."""
    if x_t.data.shape[1] != p.w_ir.data.shape[1]:
        raise DimensionError(
            f"cell input extent {x_t.data.shape[1]} != {p.w_ir.data.shape[1]}"
        )
    if h_prev.data.shape[1] != p.hidden_size:
        raise DimensionError(
            f"cell state extent {h_prev.data.shape[1]} != {p.hidden_size}"
        )
    r = ad.sigmoid(ad.add(_linear(x_t, p.w_ir, p.b_ir), _linear(h_prev, p.w_hr, p.b_hr)))
    z = ad.sigmoid(ad.add(_linear(x_t, p.w_iz, p.b_iz), _linear(h_prev, p.w_hz, p.b_hz)))
    n = ad.tanh(
        ad.add(_linear(x_t, p.w_in, p.b_in), ad.mul(r, _linear(h_prev, p.w_hn, p.b_hn)))
    )
    return ad.add(ad.mul(ad.sub(Tensor(1.0), z), n), ad.mul(z, h_prev))


def gru_scan(xproj, b_ih, w_hh, b_hh, h0, reverse=False):
    """Fused recurrence over (T, batch, 3H) precomputed input projections.

    ``b_ih`` is the input-side bias stack, applied inside the kernel;
    ``w_hh`` is the (3H, H) stack of the three hidden-side matrices and
    ``b_hh`` the matching bias stack.  With ``reverse`` the scan consumes
    time from the end; outputs stay aligned with input time either way.
    Returns the (T, batch, H) state sequence; the backward pass is
    hand-derived full-length BPTT.
    """
    out, hs, r, z, n = _scan_kernels.scan_forward(
        xproj.data, b_ih.data, w_hh.data, b_hh.data, h0.data, reverse
    )

    def bwd(g):
        T, B, H = g.shape
        prev = hs[:-1].reshape(T * B, H)
        # recompute the candidate gate's hidden-side pre-activation in bulk
        vn = (prev @ w_hh.data[2 * H :].T + b_hh.data[2 * H :]).reshape(T, B, H)
        dxp, dv, dh0 = _scan_kernels.scan_backward(g, hs, r, z, n, vn, w_hh.data, reverse)
        dvm = dv.reshape(T * B, 3 * H)
        dwhh = dvm.T @ prev
        dbhh = dvm.sum(axis=0)
        dbih = dxp.sum(axis=(0, 1))
        return dxp, dbih, dwhh, dbhh, dh0

    return ad.record("gru_scan", out, (xproj, b_ih, w_hh, b_hh, h0), bwd)


@dataclass
class BiGRULayer:
    fwd: GRUCellParams
    bwd: GRUCellParams


@dataclass
class BiGRUStack:
    layers: list
    dropout_p: float
    hidden_size: int

    @classmethod
    def init(cls, layers, input_size, hidden_size, dropout_p, rng):
        if not 0.0 <= dropout_p < 1.0:
            raise DimensionError("dropout_p must lie in [0, 1)")
        built = []
        d_in = input_size
        for _ in range(layers):
            built.append(
                BiGRULayer(
                    fwd=GRUCellParams.init(d_in, hidden_size, rng),
                    bwd=GRUCellParams.init(d_in, hidden_size, rng),
                )
            )
            d_in = 2 * hidden_size
        return cls(layers=built, dropout_p=dropout_p, hidden_size=hidden_size)

    @classmethod
    def template_arrays(cls, layers, input_size, hidden_size, rng):
        """Numpy arrays in ``parameters()`` order, for gradient checking."""
        stack = cls.init(layers, input_size, hidden_size, 0.0, rng)
        return [p.data.copy() for p in stack.parameters()]

    @classmethod
    def from_tensors(cls, tensors, layers, input_size, hidden_size, dropout_p):
        built = []
        it = iter(tensors)
        for _ in range(layers):
            fwd = GRUCellParams(*[next(it) for _ in range(12)])
            bwd = GRUCellParams(*[next(it) for _ in range(12)])
            built.append(BiGRULayer(fwd=fwd, bwd=bwd))
        return cls(layers=built, dropout_p=dropout_p, hidden_size=hidden_size)

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.fwd.tensors())
            out.extend(layer.bwd.tensors())
        return out


def _fused_input(cell):
    w = ad.concat([cell.w_ir, cell.w_iz, cell.w_in], axis=0)
    b = ad.concat([cell.b_ir, cell.b_iz, cell.b_in], axis=0)
    return w, b


def _fused_hidden(cell):
    w = ad.concat([cell.w_hr, cell.w_hz, cell.w_hn], axis=0)
    b = ad.concat([cell.b_hr, cell.b_hz, cell.b_hn], axis=0)
    return w, b


def _direction(x_tbd, cell, reverse):
    t_len, batch, _ = x_tbd.data.shape
    w_ih, b_ih = _fused_input(cell)
    w_hh, b_hh = _fused_hidden(cell)
    flat = ad.reshape(x_tbd, (t_len * batch, x_tbd.data.shape[2]))
    xp = ad.reshape(
        ad.matmul(flat, ad.transpose(w_ih)),
        (t_len, batch, 3 * cell.hidden_size),
    )
    h0 = Tensor(np.zeros((batch, cell.hidden_size)))
    return gru_scan(xp, b_ih, w_hh, b_hh, h0, reverse=reverse)


def bigru_forward(seq, stack, training=False, seed=None):
    """Encode (batch, T, D_in) into (batch, T, 2 * hidden) state sequences.

    Inter-layer activations are dropped out with probability ``dropout_p``
    only when ``training``; masks come from ``seed`` (int or Generator), so a
    fixed seed reproduces the pass bit for bit.
    """
    if seq.data.ndim != 3:
        raise DimensionError("bigru_forward expects (batch, T, D_in)")
    if seq.data.shape[1] < 1:
        raise InputTooShortError("bigru_forward needs at least one time step")
    rng = None
    if training and stack.dropout_p > 0.0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = ad.transpose(seq, (1, 0, 2))
    for index, layer in enumerate(stack.layers):
        fwd_states = _direction(x, layer.fwd, reverse=False)
        bwd_states = _direction(x, layer.bwd, reverse=True)
        x = ad.concat([fwd_states, bwd_states], axis=2)
        if rng is not None and index < len(stack.layers) - 1:
            keep = (rng.random(x.data.shape) >= stack.dropout_p).astype(np.float64)
            x = ad.mul(x, Tensor(keep / (1.0 - stack.dropout_p)))
    return ad.transpose(x, (1, 0, 2))


@dataclass
class TemporalAttentionParams:
    fc1_weight: Tensor  # (D, D)
    fc1_bias: Tensor
    fc2_weight: Tensor  # (D, 2D), applied to [context; final state]
    fc2_bias: Tensor

    @classmethod
    def init(cls, dim, rng):
        k1 = 1.0 / np.sqrt(dim)
        k2 = 1.0 / np.sqrt(2 * dim)
        return cls(
            fc1_weight=ad.parameter(rng.uniform(-k1, k1, size=(dim, dim))),
            fc1_bias=ad.parameter(rng.uniform(-k1, k1, size=(dim,))),
            fc2_weight=ad.parameter(rng.uniform(-k2, k2, size=(dim, 2 * dim))),
            fc2_bias=ad.parameter(rng.uniform(-k2, k2, size=(dim,))),
        )

    def tensors(self):
        return [self.fc1_weight, self.fc1_bias, self.fc2_weight, self.fc2_bias]


def temporal_attention(states, p):
    """Collapse (batch, T, D) state sequences to one (batch, D) vector each.

    Scores are inner products of the linearly mapped states with the final
    state; softmax over time yields the weights of the context sum.
    """
    if states.data.ndim != 3:
        raise DimensionError("temporal_attention expects (batch, T, D)")
    batch, t_len, dim = states.data.shape
    if p.fc2_weight.data.shape[1] != 2 * dim:
        raise DimensionError("fc2 input extent must be 2 * D")
    h_last = states[:, t_len - 1, :]
    flat = ad.reshape(states, (batch * t_len, dim))
    mapped = ad.reshape(
        ad.add(ad.matmul(flat, ad.transpose(p.fc1_weight)), p.fc1_bias),
        (batch, t_len, dim),
    )
    scores = ad.matmul(mapped, ad.reshape(h_last, (batch, dim, 1)))
    weights = ad.softmax(scores, axis=1)
    context = ad.reshape(ad.matmul(ad.transpose(weights, (0, 2, 1)), states), (batch, dim))
    merged = ad.concat([context, h_last], axis=1)
    return ad.tanh(ad.add(ad.matmul(merged, ad.transpose(p.fc2_weight)), p.fc2_bias))
