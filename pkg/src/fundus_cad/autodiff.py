"""Dense tensors and tape-based reverse-mode automatic differentiation.

The layer set is exactly what the fully-convolutional classifier needs:
2-D cross-correlation, 2x2 max pooling, ReLU, inverted dropout, global
average pooling and softmax cross-entropy, plus two small glue ops
(elementwise add, scalar element selection) used by the saliency code and
the tests.

Data layout is N x C x H x W throughout. Values are float32 by default;
passing float64 arrays switches the whole computation to double precision,
which is how the finite-difference verification harness runs.

Gradients are recorded on an explicit :class:`Tape`. Execution is eager, so
the tape's op list is already topologically ordered; one reverse sweep visits
each recorded op exactly once and accumulates gradients at fan-out points.
A tape and the tensors it produced belong to a single worker; sharing
read-only tensors (loaded weights) across workers is safe.
"""

from __future__ import annotations

from typing import Callable, NamedTuple, Sequence

import numpy as np

from .rng import RngState

__all__ = [
    "Tensor",
    "Tape",
    "conv2d",
    "maxpool2d",
    "relu",
    "dropout",
    "global_avg_pool",
    "softmax_cross_entropy",
    "add",
    "take_scalar",
]

DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """N-dimensional real-valued array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def assert_finite(self, what: str = "tensor") -> None:
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in {what}")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class _Recorded(NamedTuple):
    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    # maps the upstream gradient to one gradient array (or None) per input
    backward: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of forward ops, replayed in reverse by :meth:`backward`."""

    def __init__(self):
        self._ops: list[_Recorded] = []
        self._produced: set[int] = set()

    def __len__(self) -> int:
        return len(self._ops)

    def watch(self, tensor: Tensor) -> None:
        """Mark a tensor so subsequent ops propagate gradients back to it."""
        tensor.requires_grad = True

    def record(self, name: str, inputs: Sequence[Tensor], output: Tensor, backward) -> None:
        self._ops.append(_Recorded(name, tuple(inputs), output, backward))
        self._produced.add(id(output))

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``.

        The loss must be a scalar produced on this tape (or a watched leaf).
        Gradients sum at fan-out points. The tape is cleared afterwards.
        """
        if loss.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._produced and not loss.requires_grad:
            raise ValueError("loss tensor is detached from this tape")

        if loss.grad is None:
            loss.grad = np.zeros_like(loss.data)
        loss.grad += np.ones_like(loss.data)

        for op in reversed(self._ops):
            g_out = op.output.grad
            if g_out is None:
                continue
            for tensor, g in zip(op.inputs, op.backward(g_out)):
                if g is None or not tensor.requires_grad:
                    continue
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)
                tensor.grad += g
        self._ops.clear()
        self._produced.clear()


def _result(data: np.ndarray, inputs: Sequence[Tensor], tape: Tape | None,
            name: str, backward) -> Tensor:
    requires = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    if requires:
        tape.record(name, inputs, out, backward)
    return out


# -- convolution --------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Extract sliding windows: (N, C, H, W) -> (N*Ho*Wo, C*kh*kw)."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    view = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    view = view[:, :, ::stride, ::stride]  # (N, C, Ho, Wo, kh, kw)
    n, c, ho, wo = view.shape[:4]
    return np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def _col2im(dcols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int,
            ho: int, wo: int) -> np.ndarray:
    """Scatter-add window gradients back onto the input: inverse of _im2col."""
    n, c, h, w = x_shape
    dwin = dcols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)  # (N,C,kh,kw,Ho,Wo)
    padded = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            padded[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dwin[:, :, i, j]
    if padding:
        return padded[:, :, padding:padding + h, padding:padding + w]
    return padded


def conv2d(x: Tensor, weights: Tensor, bias: Tensor, stride: int = 1,
           padding: int = 0, tape: Tape | None = None) -> Tensor:
    """2-D cross-correlation with per-output-channel bias.

    Output extent: floor((H + 2*padding - Kh)/stride) + 1, analogously for W.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects an NxCxHxW input, got shape {x.shape}")
    if weights.data.ndim != 4:
        raise ValueError(f"conv2d expects CoutxCinxKhxKw weights, got shape {weights.shape}")
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weights.shape
    if cin != cin_w:
        raise ValueError(f"conv2d: input has {cin} channels but weights expect {cin_w}")
    if bias.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be non-negative, got {padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(
            f"conv2d: kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{w + 2 * padding}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d: zero-sized output {ho}x{wo}")

    cols = _im2col(x.data, kh, kw, stride, padding)            # (N*Ho*Wo, Cin*kh*kw)
    wmat = weights.data.reshape(cout, -1)
    out = cols @ wmat.T + bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(g_out: np.ndarray):
        gmat = np.ascontiguousarray(g_out.transpose(0, 2, 3, 1)).reshape(-1, cout)
        g_w = (gmat.T @ cols).reshape(weights.shape)
        g_b = g_out.sum(axis=(0, 2, 3))
        g_x = None
        if x.requires_grad:
            g_x = _col2im(gmat @ wmat, x.shape, kh, kw, stride, padding, ho, wo)
        return g_x, g_w, g_b

    return _result(out, (x, weights, bias), tape, "conv2d", backward)


# -- pooling and activations --------------------------------------------------

def maxpool2d(x: Tensor, tape: Tape | None = None) -> Tensor:
    """2x2 max pooling with stride 2; ties route the gradient to the first
    window element in row-major order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2d: spatial extent {h}x{w} not divisible by 2")
    ho, wo = h // 2, w // 2
    windows = x.data.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g_out: np.ndarray):
        g_win = np.zeros_like(windows)
        np.put_along_axis(g_win, idx[..., None], g_out[..., None], axis=-1)
        g_x = g_win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (g_x,)

    return _result(out, (x,), tape, "maxpool2d", backward)


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g_out: np.ndarray):
        return (g_out * (x.data > 0),)

    return _result(out, (x,), tape, "relu", backward)


def dropout(x: Tensor, rate: float = 0.5, mode: str = "train",
            rng: RngState | None = None, tape: Tape | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by
    1/(1-rate) so eval mode is an exact identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval":
        return x
    if mode != "train":
        raise ValueError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ValueError("dropout in train mode needs an RngState")
    keep = rng.random(x.shape) >= rate
    scaled_mask = keep.astype(x.dtype) / (1.0 - rate)
    out = x.data * scaled_mask

    def backward(g_out: np.ndarray):
        return (g_out * scaled_mask,)

    return _result(out, (x,), tape, "dropout", backward)


def global_avg_pool(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Mean over spatial positions: (N, C, H, W) -> (N, C)."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g_out: np.ndarray):
        return (np.broadcast_to(g_out[:, :, None, None] / (h * w), x.shape),)

    return _result(out, (x,), tape, "global_avg_pool", backward)


# -- loss ---------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels, tape: Tape | None = None
                          ) -> tuple[Tensor, Tensor]:
    """Mean softmax cross-entropy over the batch.

    Returns (scalar loss, probabilities). Gradients flow through the loss only;
    the probability tensor is a detached by-product.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    probs = exp / denom
    log_probs = shifted - np.log(denom)
    loss_val = -log_probs[np.arange(n), labels].mean()

    def backward(g_out: np.ndarray):
        g = probs.copy()
        g[np.arange(n), labels] -= 1.0
        return (g * (float(g_out) / n),)

    loss = _result(np.asarray(loss_val, dtype=logits.dtype), (logits,), tape,
                   "softmax_cross_entropy", backward)
    return loss, Tensor(probs)


# -- glue ops -----------------------------------------------------------------

def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def backward(g_out: np.ndarray):
        return g_out, g_out

    return _result(a.data + b.data, (a, b), tape, "add", backward)


def take_scalar(x: Tensor, index: tuple[int, ...], tape: Tape | None = None) -> Tensor:
    """Select one element as a scalar tensor (used to seed class-specific
    backward passes)."""
    value = x.data[index]
    if np.ndim(value) != 0:
        raise ValueError(f"take_scalar: index {index} does not select a single element")

    def backward(g_out: np.ndarray):
        g = np.zeros_like(x.data)
        g[index] = g_out
        return (g,)

    return _result(np.asarray(value, dtype=x.dtype), (x,), tape, "take_scalar", backward)
