"""LSTM and bidirectional LSTM layers as fused autodiff ops.

Gate layout in the stacked weights is (input, forget, cell, output). A whole
sequence is one graph node; its backward pass is hand-written
backpropagation through time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, make, parameter


@dataclass
class LstmParams:
    W: Tensor  # (4H, D) input weights
    R: Tensor  # (4H, H) recurrent weights
    b: Tensor  # (4H,)

    @property
    def hidden(self) -> int:
        return self.R.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"W": self.W, "R": self.R, "b": self.b}


def init_lstm(input_size: int, hidden: int, rng: np.random.Generator, dtype=np.float64,
              forget_bias: float = 1.0) -> LstmParams:
    bound = 1.0 / np.sqrt(input_size + hidden)
    W = rng.uniform(-bound, bound, (4 * hidden, input_size))
    R = rng.uniform(-bound, bound, (4 * hidden, hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = forget_bias
    return LstmParams(parameter(W.astype(dtype)), parameter(R.astype(dtype)), parameter(b.astype(dtype)))


def _cell_forward(z, c, gates, c_out, h_out, tmp):
    """One step; ``z`` (4, B, H) gate pre-activations, gate-major."""
    # sigmoid(x) = (tanh(x / 2) + 1) / 2, so all four gates share one tanh pass
    z[0:2] *= 0.5
    z[3] *= 0.5
    np.tanh(z, out=gates)
    sig = gates[0:2]
    sig *= 0.5
    sig += 0.5
    o = gates[3]
    o *= 0.5
    o += 0.5
    np.multiply(gates[1], c, out=c_out)
    np.multiply(gates[0], gates[2], out=tmp)
    c_out += tmp
    np.tanh(c_out, out=h_out)
    h_out *= o


def _cell_backward(dh, dc_next, gates, c, c_prev, dz):
    """Fill ``dz`` (4, B, H) for one step; ``dc_next`` becomes dL/dc_prev in place."""
    i, f, g, o = gates
    tc = np.tanh(c)
    np.multiply(dh, tc, out=dz[3])
    dz[3] *= o * (1 - o)
    dc = dh * o
    dc *= 1 - tc * tc
    dc += dc_next
    np.multiply(dc, g, out=dz[0])
    dz[0] *= i * (1 - i)
    np.multiply(dc, c_prev, out=dz[1])
    dz[1] *= f * (1 - f)
    np.multiply(dc, i, out=dz[2])
    dz[2] *= 1 - g * g
    np.multiply(dc, f, out=dc_next)


def lstm_forward(params: LstmParams, seq: Tensor, reverse: bool = False) -> Tensor:
    """Run an LSTM over ``seq`` (B, L, D) from zero state; returns (B, L, H).

    With ``reverse=True`` the sequence is processed from the last step to the
    first and the output at step t is the state after consuming steps L-1..t.
    """
    W, R, b = params.W, params.R, params.b
    x = seq.value
    if x.ndim != 3 or x.shape[-1] != W.shape[1]:
        raise ValueError(f"lstm: expected (B, L, {W.shape[1]}) input, got {x.shape}")
    B, L, D = x.shape
    H = R.shape[1]
    dtype = np.result_type(x.dtype, W.dtype)
    Wv = W.value.astype(dtype, copy=False)
    Rv = R.value.astype(dtype, copy=False)
    R4 = Rv.reshape(4, H, H)
    R4T = np.ascontiguousarray(R4.transpose(0, 2, 1))
    xt = np.ascontiguousarray(np.swapaxes(x, 0, 1), dtype=dtype)  # time-major (L, B, D)
    pre = xt @ Wv.T + b.value.astype(dtype, copy=False)  # (L, B, 4H)
    pre = np.ascontiguousarray(pre.reshape(L, B, 4, H).transpose(0, 2, 1, 3))  # (L, 4, B, H)
    gates = np.empty((L, 4, B, H), dtype=dtype)
    cells = np.empty((L, B, H), dtype=dtype)
    hs = np.empty((L, B, H), dtype=dtype)
    zero = np.zeros((B, H), dtype=dtype)
    tmp = np.empty((B, H), dtype=dtype)
    steps = list(range(L - 1, -1, -1)) if reverse else list(range(L))
    h, c = zero, zero
    for t in steps:
        z = pre[t]
        z += np.matmul(h, R4T)
        _cell_forward(z, c, gates[t], cells[t], hs[t], tmp)
        h, c = hs[t], cells[t]
    del pre
    out = np.ascontiguousarray(np.swapaxes(hs, 0, 1))

    def backward(g):
        gt = np.ascontiguousarray(np.swapaxes(g, 0, 1), dtype=dtype)
        dz = np.empty_like(gates)
        dh = np.empty((B, H), dtype=dtype)
        dh_next = np.zeros((B, H), dtype=dtype)
        dc_next = np.zeros((B, H), dtype=dtype)
        for n in range(L - 1, -1, -1):
            t = steps[n]
            c_prev = cells[steps[n - 1]] if n > 0 else zero
            np.add(gt[t], dh_next, out=dh)
            _cell_backward(dh, dc_next, gates[t], cells[t], c_prev, dz[t])
            dh_next = np.matmul(dz[t], R4).sum(axis=0)
        # hidden state that fed each step's recurrence
        h_prev = np.zeros_like(hs)
        if reverse:
            h_prev[:-1] = hs[1:]
        else:
            h_prev[1:] = hs[:-1]
        dz2 = dz.transpose(0, 2, 1, 3).reshape(L * B, 4 * H)
        gx = None
        if seq.requires_grad:
            gx = np.swapaxes((dz2 @ Wv).reshape(L, B, D), 0, 1).astype(x.dtype, copy=False)
        gW = (dz2.T @ xt.reshape(-1, D)).astype(W.dtype, copy=False) if W.requires_grad else None
        gR = (dz2.T @ h_prev.reshape(-1, H)).astype(R.dtype, copy=False) if R.requires_grad else None
        gb = dz2.sum(axis=0).astype(b.dtype, copy=False) if b.requires_grad else None
        return gx, gW, gR, gb

    return make(out, (seq, W, R, b), backward)


def bilstm(fwd: LstmParams, bwd: LstmParams, seq: Tensor) -> Tensor:
    """Bidirectional LSTM: forward and time-reversed features concatenated, (B, L, 2H)."""
    return concat([lstm_forward(fwd, seq), lstm_forward(bwd, seq, reverse=True)], axis=-1)
