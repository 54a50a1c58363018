"""Dense float32 kernels used by every other module.

All functions are pure: they never mutate their inputs and identical inputs
give bitwise-identical outputs within a process. Data is float32; reductions
(softmax denominators, pooling sums, norm statistics) accumulate in float64.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ParameterError, ShapeMismatchError


def _as_f32(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float32))


def linear(x: np.ndarray, W: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Row-wise affine map: out[i] = W @ x[i] + b.

    x: [n, d_in], W: [d_out, d_in], b: [d_out] or None.
    """
    x = _as_f32(x)
    W = _as_f32(W)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeMismatchError(
            f"linear: x shape {x.shape} incompatible with W shape {W.shape}"
        )
    out = x @ W.T
    if b is not None:
        b = _as_f32(b)
        if b.shape != (W.shape[0],):
            raise ShapeMismatchError(
                f"linear: bias shape {b.shape} incompatible with W shape {W.shape}"
            )
        out = out + b
    return out.astype(np.float32)


def softmax(logits: np.ndarray, tau: float = 1.0, axis: int = -1) -> np.ndarray:
    """Temperature softmax with max-subtraction, float64 accumulation."""
    if tau <= 0:
        raise ParameterError(f"softmax temperature must be positive, got {tau}")
    z = np.asarray(logits, dtype=np.float64) / tau
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)
    return out.astype(np.float32)


def layer_norm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Per-row normalization followed by an affine transform."""
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be positive, got {eps}")
    x64 = np.asarray(x, dtype=np.float64)
    mu = x64.mean(axis=-1, keepdims=True)
    var = x64.var(axis=-1, keepdims=True)
    y = (x64 - mu) / np.sqrt(var + eps)
    return (y * np.asarray(gamma, dtype=np.float64) + np.asarray(beta, dtype=np.float64)).astype(
        np.float32
    )


def conv_output_size(size: int, k: int, stride: int, dilation: int, padding: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    stride: int = 1,
    dilation: int = 1,
    padding: int = 0,
    bias: np.ndarray | None = None,
) -> np.ndarray:
    """2-D cross-correlation. x: [C_in, H, W], kernel: [C_out, C_in, k, k]."""
    x = _as_f32(x)
    kernel = _as_f32(kernel)
    if x.ndim != 3 or kernel.ndim != 4 or x.shape[0] != kernel.shape[1]:
        raise ShapeMismatchError(
            f"conv2d: input shape {x.shape} incompatible with kernel shape {kernel.shape}"
        )
    if stride < 1 or dilation < 1:
        raise ParameterError("conv2d: stride and dilation must be >= 1")
    c_in, h, w = x.shape
    c_out, _, kh, kw = kernel.shape
    out_h = conv_output_size(h, kh, stride, dilation, padding)
    out_w = conv_output_size(w, kw, stride, dilation, padding)
    if out_h < 1 or out_w < 1:
        raise ConfigError(
            f"conv2d: non-positive output size {out_h}x{out_w} for input {h}x{w}, "
            f"k={kh}, stride={stride}, dilation={dilation}, padding={padding}"
        )
    if padding > 0:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    # im2col over the dilated window
    cols = np.empty((c_in, kh, kw, out_h, out_w), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            r = i * dilation
            c = j * dilation
            cols[:, i, j] = x[
                :, r : r + (out_h - 1) * stride + 1 : stride,
                c : c + (out_w - 1) * stride + 1 : stride,
            ]
    out = kernel.reshape(c_out, -1) @ cols.reshape(c_in * kh * kw, out_h * out_w)
    out = out.reshape(c_out, out_h, out_w)
    if bias is not None:
        out = out + _as_f32(bias)[:, None, None]
    return out.astype(np.float32)


def avg_pool2d(
    x: np.ndarray, k: int, stride: int = 1, dilation: int = 1
) -> np.ndarray:
    """Window average over [C, H, W] with the conv2d output-size formula."""
    x = _as_f32(x)
    if x.ndim != 3:
        raise ShapeMismatchError(f"avg_pool2d: expected [C,H,W], got shape {x.shape}")
    if stride < 1 or dilation < 1 or k < 1:
        raise ParameterError("avg_pool2d: k, stride, dilation must be >= 1")
    c, h, w = x.shape
    out_h = conv_output_size(h, k, stride, dilation, 0)
    out_w = conv_output_size(w, k, stride, dilation, 0)
    if out_h < 1 or out_w < 1:
        raise ConfigError(
            f"avg_pool2d: non-positive output size for input {h}x{w}, "
            f"k={k}, stride={stride}, dilation={dilation}"
        )
    acc = np.zeros((c, out_h, out_w), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            r = i * dilation
            cc = j * dilation
            acc += x[
                :, r : r + (out_h - 1) * stride + 1 : stride,
                cc : cc + (out_w - 1) * stride + 1 : stride,
            ]
    return (acc / (k * k)).astype(np.float32)


def bilinear_resize(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resampling of an [h, w, d] grid.

    Corner cells map to corner cells exactly; identity when sizes match.
    """
    grid = _as_f32(grid)
    if grid.ndim == 2:
        return bilinear_resize(grid[:, :, None], out_h, out_w)[:, :, 0]
    if grid.ndim != 3:
        raise ShapeMismatchError(f"bilinear_resize: expected [h,w,d], got {grid.shape}")
    h, w, _ = grid.shape
    if h == out_h and w == out_w:
        return grid.copy()

    def coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if n_out == 1 or n_in == 1:
            src = np.zeros(n_out, dtype=np.float64)
        else:
            src = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
        lo = np.clip(np.floor(src).astype(np.int64), 0, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (src - lo).astype(np.float32)
        return lo, hi, frac

    r_lo, r_hi, r_f = coords(h, out_h)
    c_lo, c_hi, c_f = coords(w, out_w)
    top = grid[r_lo][:, c_lo] * (1 - c_f)[None, :, None] + grid[r_lo][:, c_hi] * c_f[None, :, None]
    bot = grid[r_hi][:, c_lo] * (1 - c_f)[None, :, None] + grid[r_hi][:, c_hi] * c_f[None, :, None]
    out = top * (1 - r_f)[:, None, None] + bot * r_f[:, None, None]
    return out.astype(np.float32)


def quick_gelu(x: np.ndarray) -> np.ndarray:
    """Sigmoid-approximated GELU used by the source contrastive model."""
    x = _as_f32(x)
    return (x * (1.0 / (1.0 + np.exp(-1.702 * np.asarray(x, dtype=np.float64))))).astype(
        np.float32
    )


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(_as_f32(x), np.float32(0))


def l2_normalize(v: np.ndarray, axis: int = -1, eps: float = 0.0) -> np.ndarray:
    """Unit-norm along an axis; raises on an exactly-zero vector when eps == 0."""
    from .errors import DegenerateInputError

    v = _as_f32(v)
    n = np.sqrt(np.sum(np.asarray(v, dtype=np.float64) ** 2, axis=axis, keepdims=True))
    if eps == 0.0 and np.any(n == 0):
        raise DegenerateInputError("cannot normalize a zero vector")
    return (v / np.maximum(n, eps if eps > 0 else np.finfo(np.float64).tiny)).astype(np.float32)
