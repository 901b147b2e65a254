"""Differentiable building blocks for the dual-rate network.

Shape convention: feature maps are (T, C, H, W) with the frame axis T
treated as a batch.  All functions build autograd nodes on top of
:class:`stpen.tensor.Tensor`.
"""

import numpy as np

from .errors import BoxError, InvalidArgument, LabelError, ShapeError
from .tensor import Tensor, as_tensor


def _im2col(padded, k, stride, out_h, out_w):
    # (T, C, Hp, Wp) -> (T, C*k*k, out_h*out_w), one column per output pixel.
    t, c, _, _ = padded.shape
    st, sc, sh, sw = padded.strides
    view = np.lib.stride_tricks.as_strided(
        padded,
        shape=(t, c, k, k, out_h, out_w),
        strides=(st, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return view.reshape(t, c * k * k, out_h * out_w)


def conv2d(x, kernel, bias, stride=1, pad=0):
    """2-d cross-correlation over each frame.

    x: (T, C_in, H, W); kernel: (C_out, C_in, k, k); bias: (C_out,).
    Returns (T, C_out, H', W') with H' = floor((H + 2*pad - k)/stride) + 1.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    t, c_in, h, w = x.shape
    c_out, c_k, k, k2 = kernel.shape
    if k != k2 or k < 1:
        raise ShapeError(f"conv2d kernel must be square and non-empty, got {kernel.shape}")
    if c_k != c_in:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {c_out} output channels")
    if stride < 1 or pad < 0:
        raise InvalidArgument(f"conv2d needs stride >= 1 and pad >= 0, got {stride}, {pad}")
    out_h = (h + 2 * pad - k) // stride + 1
    out_w = (w + 2 * pad - k) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}, k={k}, "
                         f"stride={stride}, pad={pad}")

    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(padded, k, stride, out_h, out_w)          # (T, F, N)
    k_mat = kernel.data.reshape(c_out, -1)                    # (C_out, F)
    out_data = np.matmul(k_mat, cols).reshape(t, c_out, out_h, out_w)
    out_data = out_data + bias.data.reshape(1, c_out, 1, 1)
    out = Tensor(out_data, (x, kernel, bias), "conv2d")

    def backward():
        g = out.grad
        bias.accumulate(g.sum(axis=(0, 2, 3)))
        g_mat = g.reshape(t, c_out, -1)                       # (T, C_out, N)
        g_flat = g_mat.transpose(1, 0, 2).reshape(c_out, -1)  # (C_out, T*N)
        cols_flat = cols.transpose(0, 2, 1).reshape(-1, cols.shape[1])
        kernel.accumulate((g_flat @ cols_flat).reshape(kernel.shape))
        g_cols = np.matmul(k_mat.T, g_mat)                    # (T, F, N)
        g_cols = g_cols.reshape(t, c_in, k, k, out_h, out_w)
        g_pad = np.zeros_like(padded)
        for ki in range(k):
            for kj in range(k):
                g_pad[:, :, ki:ki + stride * out_h:stride,
                      kj:kj + stride * out_w:stride] += g_cols[:, :, ki, kj]
        if pad:
            g_pad = g_pad[:, :, pad:pad + h, pad:pad + w]
        x.accumulate(g_pad)

    out._backward = backward
    return out


def linear(x, weight, bias):
    """Affine map weight @ x + bias for a 1-d input vector."""
    if x.ndim != 1 or weight.ndim != 2 or bias.ndim != 1:
        raise ShapeError(f"linear expects vector/matrix/vector, got {x.shape}, "
                         f"{weight.shape}, {bias.shape}")
    if weight.shape[1] != x.shape[0] or weight.shape[0] != bias.shape[0]:
        raise ShapeError(f"linear shapes inconsistent: x {x.shape}, weight {weight.shape}, "
                         f"bias {bias.shape}")
    return weight @ x + bias


def broadcast_mul(features, gate):
    """Scale every channel of each frame by that frame's single-channel gate.

    features: (T, C, H, W); gate: (T, 1, H, W).
    """
    if features.ndim != 4 or gate.ndim != 4:
        raise ShapeError(f"broadcast_mul expects 4-d tensors, got {features.shape} "
                         f"and {gate.shape}")
    t, _, h, w = features.shape
    if gate.shape != (t, 1, h, w):
        raise ShapeError(f"gate shape {gate.shape} not broadcastable over features "
                         f"{features.shape}")
    return features * gate


def temporal_difference(seq):
    """Consecutive-frame differences: out[t] = seq[t+1] - seq[t]."""
    if seq.shape[0] < 2:
        raise InvalidArgument(f"temporal_difference needs at least 2 frames, got {seq.shape}")
    out = Tensor(seq.data[1:] - seq.data[:-1], (seq,), "tdiff")

    def backward():
        g = np.zeros_like(seq.data)
        g[1:] += out.grad
        g[:-1] -= out.grad
        seq.accumulate(g)

    out._backward = backward
    return out


def spatial_max_pool(x):
    """Global spatial max per frame and channel: (T, C, H, W) -> (T, C).

    Gradient flows only to the maximal position; ties go to the first
    occurrence in row-major order.
    """
    if x.ndim != 4:
        raise ShapeError(f"spatial_max_pool expects (T, C, H, W), got {x.shape}")
    t, c, h, w = x.shape
    flat = x.data.reshape(t, c, h * w)
    idx = flat.argmax(axis=2)  # argmax returns the first maximum
    out = Tensor(np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0],
                 (x,), "maxpool")

    def backward():
        buf = np.zeros((t, c, h * w))
        np.put_along_axis(buf, idx[:, :, None], out.grad[:, :, None], axis=2)
        x.accumulate(buf.reshape(x.data.shape))

    out._backward = backward
    return out


def _roi_grid(lo, hi, n):
    # Sample positions inside [lo, hi]: the endpoints for n >= 2 (so a
    # full-extent box with n == map size reproduces the map exactly),
    # the midpoint for n == 1.
    if n == 1:
        return np.array([(lo + hi) / 2.0])
    return lo + (hi - lo) * np.arange(n) / (n - 1)


def _axis_samples(coords, extent):
    # Continuous coordinate u = x * (extent - 1), split into a base index
    # and a bilinear fraction; degenerate 1-wide axes collapse to index 0.
    if extent == 1:
        return np.zeros(len(coords), dtype=np.intp), np.zeros(len(coords))
    u = coords * (extent - 1)
    base = np.clip(np.floor(u).astype(np.intp), 0, extent - 2)
    return base, u - base


def roi_align(feature_map, box, out_size):
    """Bilinear crop of a normalized box to a (T, C, P, P) grid."""
    x1, y1, x2, y2 = box
    if not (0.0 <= x1 < x2 <= 1.0 and 0.0 <= y1 < y2 <= 1.0):
        raise BoxError(f"invalid box {box}: need 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1")
    if out_size < 1:
        raise InvalidArgument(f"roi_align output size must be >= 1, got {out_size}")
    if feature_map.ndim != 4:
        raise ShapeError(f"roi_align expects (T, C, H, W), got {feature_map.shape}")
    t, c, h, w = feature_map.shape
    p = out_size

    v0, dv = _axis_samples(_roi_grid(y1, y2, p), h)
    u0, du = _axis_samples(_roi_grid(x1, x2, p), w)
    v1 = np.minimum(v0 + 1, h - 1)
    u1 = np.minimum(u0 + 1, w - 1)
    dv = dv[:, None]
    du = du[None, :]
    w00 = (1 - dv) * (1 - du)
    w01 = (1 - dv) * du
    w10 = dv * (1 - du)
    w11 = dv * du

    m = feature_map.data
    gv0 = v0[:, None]
    gv1 = v1[:, None]
    gu0 = u0[None, :]
    gu1 = u1[None, :]
    out_data = (w00 * m[:, :, gv0, gu0] + w01 * m[:, :, gv0, gu1]
                + w10 * m[:, :, gv1, gu0] + w11 * m[:, :, gv1, gu1])
    out = Tensor(out_data, (feature_map,), "roi_align")

    def backward():
        g = out.grad
        buf = np.zeros_like(m)
        np.add.at(buf, (slice(None), slice(None), gv0, gu0), g * w00)
        np.add.at(buf, (slice(None), slice(None), gv0, gu1), g * w01)
        np.add.at(buf, (slice(None), slice(None), gv1, gu0), g * w10)
        np.add.at(buf, (slice(None), slice(None), gv1, gu1), g * w11)
        feature_map.accumulate(buf)

    out._backward = backward
    return out


LSTM_GATES = ("i", "f", "o", "g")


def lstm_step(x, h, c, params):
    """One LSTM cell update.

    params maps "<gate>.wx" / "<gate>.wh" / "<gate>.b" for gates i, f, o, g
    to tensors of shapes (H, C_in), (H, H) and (H,).  Returns (h', c').
    """
    for gate in LSTM_GATES:
        for part in ("wx", "wh", "b"):
            if f"{gate}.{part}" not in params:
                raise ShapeError(f"lstm_step missing parameter {gate}.{part}")

    def affine(gate):
        return params[f"{gate}.wx"] @ x + params[f"{gate}.wh"] @ h + params[f"{gate}.b"]

    i = affine("i").sigmoid()
    f = affine("f").sigmoid()
    o = affine("o").sigmoid()
    g = affine("g").tanh()
    c_next = f * c + i * g
    h_next = o * c_next.tanh()
    return h_next, c_next


def bce_multilabel_loss(scores, targets):
    """Mean binary cross-entropy over K independent classes.

    scores: Tensor of K probabilities (post-sigmoid); targets: array of
    K values in {0, 1}.  Probabilities are clamped to [1e-7, 1 - 1e-7]
    before the logs.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != scores.shape:
        raise ShapeError(f"targets shape {targets.shape} != scores shape {scores.shape}")
    if not np.all((targets == 0.0) | (targets == 1.0)):
        raise LabelError(f"targets must be 0 or 1, got {targets}")
    p = scores.clamp(1e-7, 1.0 - 1e-7)
    loss = -(targets * p.log() + (1.0 - targets) * (1.0 - p).log())
    return loss.mean()


def zero_prepend(seq):
    """Insert one all-zero frame at t=0, restoring a differenced length."""
    zero = Tensor(np.zeros((1,) + seq.shape[1:]))
    return Tensor.concat([zero, seq], axis=0)
