"""Layer forward/backward semantics: convolution, max-pooling, cross-channel
local response normalization, ReLU, fully connected classifier, and softmax
cross-entropy loss.

Every layer accepts a single sample (C,H,W) or a batch (N,C,H,W); the fully
connected layer takes (D,) or (N,D). backward() consumes the upstream
gradient for the most recent forward(), returns the input gradient, and
leaves parameter gradients on grad_* attributes. Analytic gradients are
finite-difference verified in the test suite (central differences, step 1e-3,
double precision, relative error < 1e-4).
"""

import numpy as np


class ShapeError(ValueError):
    """Layer input incompatible with layer parameters (channel or extent mismatch)."""


def conv_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    """Output spatial extent: floor((size + 2*padding - kernel) / stride) + 1."""
    return (size + 2 * padding - kernel) // stride + 1


def _window_cols(xp: np.ndarray, kh: int, kw: int, stride: int):
    """im2col: (N,C,Hp,Wp) -> patch matrix (N*oh*ow, C*kh*kw) plus (oh, ow)."""
    n, c, hp, wp = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N,C,oh,ow,kh,kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return cols, oh, ow


class Conv2d:
    """2D convolution with symmetric zero padding and square kernels.

    out[o,y,x] = bias[o] + sum_{c,i,j} w[o,c,i,j] * padded[c, y*stride+i, x*stride+j]
    """

    def __init__(self, weights: np.ndarray, bias: np.ndarray, stride: int = 1,
                 padding: int = 0):
        weights = np.asarray(weights)
        bias = np.asarray(bias)
        if weights.ndim != 4:
            raise ShapeError(f"conv weights must be 4D, got shape {weights.shape}")
        if weights.shape[2] != weights.shape[3]:
            raise ShapeError(f"conv kernels must be square, got {weights.shape[2:]}")
        if bias.shape != (weights.shape[0],):
            raise ShapeError(f"conv bias shape {bias.shape} != ({weights.shape[0]},)")
        if stride < 1 or padding < 0:
            raise ShapeError(f"bad stride/padding ({stride}, {padding})")
        self.weights = weights
        self.bias = bias
        self.stride = stride
        self.padding = padding
        self.grad_weights = None
        self.grad_bias = None
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        n, c, h, w = x.shape
        co, ci, kh, kw = self.weights.shape
        if c != ci:
            raise ShapeError(f"conv expects {ci} input channels, got {c}")
        oh = conv_extent(h, kh, self.stride, self.padding)
        ow = conv_extent(w, kw, self.stride, self.padding)
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"conv output extent collapsed to {oh}x{ow} "
                f"(input {h}x{w}, kernel {kh}, stride {self.stride}, pad {self.padding})")
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols, oh, ow = _window_cols(xp, kh, kw, self.stride)
        w2 = self.weights.reshape(co, -1)
        out = cols @ w2.T + self.bias
        out = np.ascontiguousarray(
            out.reshape(n, oh, ow, co).transpose(0, 3, 1, 2))
        self._cache = (cols, x.shape, xp.shape, squeeze)
        return out[0] if squeeze else out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        cols, x_shape, xp_shape, squeeze = self._cache
        if squeeze:
            dout = dout[None]
        n, _, h, w = x_shape
        co, ci, kh, kw = self.weights.shape
        _, _, oh, ow = dout.shape
        s, p = self.stride, self.padding
        dmat = dout.transpose(0, 2, 3, 1).reshape(n * oh * ow, co)
        self.grad_weights = (dmat.T @ cols).reshape(self.weights.shape)
        self.grad_bias = dmat.sum(axis=0)
        dcols = dmat @ self.weights.reshape(co, -1)
        dwin = dcols.reshape(n, oh, ow, ci, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += dwin[:, :, i, j]
        dx = dxp[:, :, p:p + h, p:p + w] if p else dxp
        return dx[0] if squeeze else dx


class MaxPool:
    """Max pooling; backward routes each upstream value to the window argmax
    (first position in row-major scan order on ties), zero elsewhere."""

    def __init__(self, window: int, stride: int):
        if window < 1 or stride < 1:
            raise ShapeError(f"bad pool window/stride ({window}, {stride})")
        self.window = window
        self.stride = stride
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        n, c, h, w = x.shape
        k, s = self.window, self.stride
        if k > h or k > w:
            raise ShapeError(f"pool window {k} larger than input {h}x{w}")
        win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
        win = win[:, :, ::s, ::s]
        oh, ow = win.shape[2], win.shape[3]
        flat = win.reshape(n, c, oh, ow, k * k)
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        self._cache = (idx, x.shape, squeeze)
        return np.ascontiguousarray(out[0] if squeeze else out)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        idx, x_shape, squeeze = self._cache
        if squeeze:
            dout = dout[None]
        n, c, h, w = x_shape
        k, s = self.window, self.stride
        oh, ow = idx.shape[2], idx.shape[3]
        iy = idx // k
        ix = idx % k
        y = np.arange(oh)[None, None, :, None] * s + iy
        x = np.arange(ow)[None, None, None, :] * s + ix
        nn = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        flat_idx = ((nn * c + cc) * h + y) * w + x
        # bincount accumulates overlapping-window contributions in float64
        acc = np.bincount(flat_idx.ravel(),
                          weights=dout.ravel().astype(np.float64),
                          minlength=n * c * h * w)
        dx = acc.reshape(x_shape).astype(dout.dtype)
        return dx[0] if squeeze else dx


def _channel_window_sum(v: np.ndarray, radius: int) -> np.ndarray:
    """Per-position sum of v over the channel window [c-radius, c+radius]."""
    c = v.shape[1]
    cs = np.concatenate([np.zeros_like(v[:, :1]), np.cumsum(v, axis=1)], axis=1)
    hi = np.minimum(np.arange(c) + radius + 1, c)
    lo = np.maximum(np.arange(c) - radius, 0)
    return cs[:, hi] - cs[:, lo]


class Lrn:
    """Cross-channel local response normalization.

    out[c,y,x] = in[c,y,x] / (k + alpha * sum_{|c'-c| <= radius} in[c',y,x]^2)^beta
    """

    def __init__(self, radius: int, k: float = 2.0, alpha: float = 1e-4,
                 beta: float = 0.75):
        if k <= 0 or beta <= 0 or radius < 0:
            raise ValueError(f"bad LRN constants (radius={radius}, k={k}, beta={beta})")
        self.radius = radius
        self.k = k
        self.alpha = alpha
        self.beta = beta
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        base = self.k + self.alpha * _channel_window_sum(x * x, self.radius)
        scale = base ** (-self.beta)
        self._cache = (x, base, scale, squeeze)
        out = x * scale
        return out[0] if squeeze else out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x, base, scale, squeeze = self._cache
        if squeeze:
            dout = dout[None]
        inner = dout * x * base ** (-self.beta - 1.0)
        dx = dout * scale - (2.0 * self.alpha * self.beta) * x * \
            _channel_window_sum(inner, self.radius)
        return dx[0] if squeeze else dx


class Relu:
    """max(0, x); gradient passes where x > 0, zero elsewhere (including x == 0)."""

    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x > 0
        return np.maximum(x, 0)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * self._cache


class FullyConnected:
    """Affine map W @ x + b over flattened feature vectors."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        weights = np.asarray(weights)
        bias = np.asarray(bias)
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ShapeError(
                f"fc expects weights (K,D) and bias (K,), got {weights.shape}, {bias.shape}")
        self.weights = weights
        self.bias = bias
        self.grad_weights = None
        self.grad_bias = None
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None]
        if x.shape[1] != self.weights.shape[1]:
            raise ShapeError(
                f"fc expects {self.weights.shape[1]} features, got {x.shape[1]}")
        self._cache = (x, squeeze)
        out = x @ self.weights.T + self.bias
        return out[0] if squeeze else out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x, squeeze = self._cache
        if squeeze:
            dout = dout[None]
        self.grad_weights = dout.T @ x
        self.grad_bias = dout.sum(axis=0)
        dx = dout @ self.weights
        return dx[0] if squeeze else dx


def softmax_xent(logits: np.ndarray, label: int):
    """Stabilized softmax cross-entropy for one sample.

    Returns (loss, grad) with loss = -log softmax(logits)[label] and
    grad = softmax(logits) - onehot(label).
    """
    logits = np.asarray(logits)
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range [0, {logits.shape[-1]})")
    losses, grads = softmax_xent_batch(logits[None], np.array([label]))
    return float(losses[0]), grads[0]


def softmax_xent_batch(logits: np.ndarray, labels: np.ndarray):
    """Per-sample losses (N,) and logit gradients (N,K) for a batch."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    p = ez / sez
    n = logits.shape[0]
    losses = np.log(sez[:, 0]) - z[np.arange(n), labels]
    grads = p.copy()
    grads[np.arange(n), labels] -= 1.0
    return losses, grads
