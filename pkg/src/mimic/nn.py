"""
Minimal dense-array math with reverse-mode differentiation

Arrays are numpy buffers in NCHW layout. Every op returns a ``Tensor`` that
remembers its parents and a backward closure; ``Tensor.backward`` walks the
tape in reverse topological order.
"""

import logging
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvariantViolation, NonFiniteGradientError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32

# Branch choices (ReLU signs, pooling picks) of the forward pass being recorded
_branches: Optional[List[np.ndarray]] = None


@contextmanager
def record_branches() -> Iterator[List[np.ndarray]]:
    """Collect the ReLU masks and pooling argmax picks made inside the block."""
    global _branches
    previous, _branches = _branches, []
    try:
        yield _branches
    finally:
        _branches = previous


def same_branches(first: Sequence[np.ndarray], second: Sequence[np.ndarray]) -> bool:
    return len(first) == len(second) and all(np.array_equal(a, b) for a, b in zip(first, second))


class Tensor:
    """Array value recorded on the differentiation tape."""

    def __init__(self, data, parents: Sequence["Tensor"] = (),
                 backward: Optional[Callable[[np.ndarray], None]] = None,
                 requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self._parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in self._parents)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def accumulate(self, grad: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self, grad: Optional[np.ndarray] = None):
        """Propagate gradients from this tensor to every tensor it depends on."""
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        if grad is None:
            grad = np.ones_like(self.data)
        self.accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


class Parameter(Tensor):
    """Trainable tensor with a name and an optimizer velocity buffer."""

    def __init__(self, name: str, data: np.ndarray, decay: bool = True):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.decay = decay
        self.velocity = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape})"

    def astype(self, dtype):
        self.data = self.data.astype(dtype)
        self.velocity = self.velocity.astype(dtype)
        self.grad = None


def constant(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(grad):
        a.accumulate(_unbroadcast(grad, a.shape))
        b.accumulate(_unbroadcast(grad, b.shape))

    return Tensor(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(grad):
        a.accumulate(_unbroadcast(grad * b.data, a.shape))
        b.accumulate(_unbroadcast(grad * a.data, b.shape))

    return Tensor(out_data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not agree",
                         field="matmul", value=(a.shape, b.shape))
    out_data = a.data @ b.data

    def backward(grad):
        a.accumulate(grad @ b.data.T)
        b.accumulate(a.data.T @ grad)

    return Tensor(out_data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _branches is not None:
        _branches.append(mask)
    out_data = np.where(mask, x.data, 0).astype(x.dtype)

    def backward(grad):
        x.accumulate(grad * mask)

    return Tensor(out_data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out_data = (0.5 * (1.0 + np.tanh(0.5 * x.data))).astype(x.dtype)

    def backward(grad):
        x.accumulate(grad * out_data * (1.0 - out_data))

    return Tensor(out_data, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def backward(grad):
        x.accumulate(grad * (1.0 - out_data * out_data))

    return Tensor(out_data, (x,), backward)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    out_data = x.data.reshape(shape)

    def backward(grad):
        x.accumulate(grad.reshape(x.shape))

    return Tensor(out_data, (x,), backward)


def transpose(x: Tensor, axes: Tuple[int, ...]) -> Tensor:
    out_data = x.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward(grad):
        x.accumulate(grad.transpose(inverse))

    return Tensor(out_data, (x,), backward)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice the last axis."""
    out_data = x.data[..., start:stop]

    def backward(grad):
        full = np.zeros_like(x.data)
        full[..., start:stop] = grad
        x.accumulate(full)

    return Tensor(out_data, (x,), backward)


def take(x: Tensor, index: int, axis: int) -> Tensor:
    """Select one index along an axis, dropping that axis."""
    out_data = np.take(x.data, index, axis=axis)

    def backward(grad):
        full = np.zeros_like(x.data)
        slicer = [slice(None)] * x.data.ndim
        slicer[axis] = index
        full[tuple(slicer)] = grad
        x.accumulate(full)

    return Tensor(out_data, (x,), backward)


def stack(tensors: Sequence[Tensor], axis: int) -> Tensor:
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(grad):
        for i, t in enumerate(tensors):
            t.accumulate(np.take(grad, i, axis=axis))

    return Tensor(out_data, tuple(tensors), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward(grad):
        offset = 0
        for t, size in zip(tensors, sizes):
            slicer = [slice(None)] * grad.ndim
            slicer[axis] = slice(offset, offset + size)
            t.accumulate(grad[tuple(slicer)])
            offset += size

    return Tensor(out_data, tuple(tensors), backward)


def crop2d(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left height x width window of an NCHW array."""
    if x.shape[2] < height or x.shape[3] < width:
        raise ShapeError(f"cannot crop {x.shape[2:]} to {(height, width)}",
                         field="crop2d", value=x.shape)
    out_data = x.data[:, :, :height, :width]

    def backward(grad):
        full = np.zeros_like(x.data)
        full[:, :, :height, :width] = grad
        x.accumulate(full)

    return Tensor(out_data, (x,), backward)


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Same-padded stride-1 cross-correlation.

    Args:
        x: Input of shape (N, C, H, W)
        kernel: Weights of shape (O, C, k, k), k odd
        bias: Optional bias of shape (O,)

    Returns:
        Tensor: Output of shape (N, O, H, W)
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}",
                         field="conv2d", value=(x.shape, kernel.shape))
    n, c, h, w = x.shape
    out_channels, in_channels, kh, kw = kernel.shape
    if in_channels != c:
        raise ShapeError(f"conv2d input has {c} channels but kernel expects {in_channels}",
                         field="conv2d.channels", value=(c, in_channels))
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel spatial dims must be odd, got {(kh, kw)}",
                         field="conv2d.kernel", value=(kh, kw))
    if bias is not None and bias.shape != (out_channels,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {out_channels} outputs",
                         field="conv2d.bias", value=bias.shape)

    ph, pw = kh // 2, kw // 2
    padded = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = sliding_window_view(padded, (kh, kw), axis=(2, 3))  # (N, C, H, W, kh, kw)
    out_data = np.tensordot(cols, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]
    out_data = np.ascontiguousarray(out_data)

    def backward(grad):
        if kernel.requires_grad:
            dk = np.tensordot(grad, cols, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, kh, kw)
            kernel.accumulate(dk)
        if bias is not None:
            bias.accumulate(grad.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dpad = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(grad, kernel.data[:, :, i, j], axes=([1], [0]))
                    dpad[:, :, i:i + h, j:j + w] += contrib.transpose(0, 3, 1, 2)
            x.accumulate(dpad[:, :, ph:ph + h, pw:pw + w])

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor(out_data, parents, backward)


def maxpool2(x: Tensor) -> Tensor:
    """
    Stride-2 2x2 max pooling with ceiling division.

    Odd trailing rows and columns pool over a 1-wide window. The first
    row-major maximum of each window receives the gradient.
    """
    n, c, h, w = x.shape
    oh, ow = (h + 1) // 2, (w + 1) // 2
    padded = np.full((n, c, oh * 2, ow * 2), -np.inf, dtype=x.dtype)
    padded[:, :, :h, :w] = x.data
    windows = padded.reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
    argmax = windows.argmax(axis=-1)
    if _branches is not None:
        _branches.append(argmax)
    out_data = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]

    def backward(grad):
        dwin = np.zeros((n, c, oh, ow, 4), dtype=x.dtype)
        np.put_along_axis(dwin, argmax[..., None], grad[..., None], axis=-1)
        dpad = dwin.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh * 2, ow * 2)
        x.accumulate(dpad[:, :, :h, :w])

    return Tensor(out_data, (x,), backward)


def deconv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 2) -> Tensor:
    """
    Stride-2 transposed convolution doubling the spatial size.

    The full output is cropped at offset (k - 2) // 2 to exactly 2H x 2W.

    Args:
        x: Input of shape (N, C, H, W)
        kernel: Weights of shape (C, O, k, k)
        bias: Optional bias of shape (O,)
        stride: Must be 2

    Returns:
        Tensor: Output of shape (N, O, 2H, 2W)
    """
    if stride != 2:
        raise ShapeError(f"deconv2d supports stride 2 only, got {stride}", field="deconv2d.stride", value=stride)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"deconv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}",
                         field="deconv2d", value=(x.shape, kernel.shape))
    n, c, h, w = x.shape
    in_channels, out_channels, kh, kw = kernel.shape
    if in_channels != c:
        raise ShapeError(f"deconv2d input has {c} channels but kernel expects {in_channels}",
                         field="deconv2d.channels", value=(c, in_channels))
    if bias is not None and bias.shape != (out_channels,):
        raise ShapeError(f"deconv2d bias shape {bias.shape} does not match {out_channels} outputs",
                         field="deconv2d.bias", value=bias.shape)

    oy, ox = max(kh - 2, 0) // 2, max(kw - 2, 0) // 2
    full = np.zeros((n, out_channels, 2 * h + kh, 2 * w + kw), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(x.data, kernel.data[:, :, i, j], axes=([1], [0]))  # (N, H, W, O)
            full[:, :, i:i + 2 * h:2, j:j + 2 * w:2] += contrib.transpose(0, 3, 1, 2)
    out_data = full[:, :, oy:oy + 2 * h, ox:ox + 2 * w]
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]
    out_data = np.ascontiguousarray(out_data)

    def backward(grad):
        dfull = np.zeros_like(full)
        dfull[:, :, oy:oy + 2 * h, ox:ox + 2 * w] = grad
        if bias is not None:
            bias.accumulate(grad.sum(axis=(0, 2, 3)))
        dx = np.zeros_like(x.data) if x.requires_grad else None
        dk = np.zeros_like(kernel.data) if kernel.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                tap = dfull[:, :, i:i + 2 * h:2, j:j + 2 * w:2]  # (N, O, H, W)
                if dx is not None:
                    dx += np.tensordot(tap, kernel.data[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
                if dk is not None:
                    dk[:, :, i, j] = np.tensordot(x.data, tap, axes=([0, 2, 3], [0, 2, 3]))
        if dx is not None:
            x.accumulate(dx)
        if dk is not None:
            kernel.accumulate(dk)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor(out_data, parents, backward)


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              w_x: Tensor, w_h: Tensor, bias: Tensor) -> Tuple[Tensor, Tensor]:
    """
    One LSTM cell update with gate layout (input, forget, cell, output).

    Args:
        x: Input (B, D)
        h_prev: Previous hidden state (B, Hd)
        c_prev: Previous cell state (B, Hd)
        w_x: Input weights (D, 4Hd)
        w_h: Recurrent weights (Hd, 4Hd)
        bias: Gate bias (4Hd,)

    Returns:
        Tuple[Tensor, Tensor]: New (hidden, cell) states
    """
    hidden = h_prev.shape[1]
    if w_x.shape != (x.shape[1], 4 * hidden) or w_h.shape != (hidden, 4 * hidden) or bias.shape != (4 * hidden,):
        raise ShapeError(
            f"lstm_step weights {w_x.shape}, {w_h.shape}, {bias.shape} do not fit input {x.shape} "
            f"and hidden size {hidden}",
            field="lstm_step", value=(x.shape, h_prev.shape),
        )
    if c_prev.shape != h_prev.shape or x.shape[0] != h_prev.shape[0]:
        raise ShapeError(f"lstm_step state shapes {h_prev.shape}, {c_prev.shape} do not fit input {x.shape}",
                         field="lstm_step.state", value=(h_prev.shape, c_prev.shape))

    gates = add(add(matmul(x, w_x), matmul(h_prev, w_h)), bias)
    input_gate = sigmoid(slice_last(gates, 0, hidden))
    forget_gate = sigmoid(slice_last(gates, hidden, 2 * hidden))
    cell_gate = tanh(slice_last(gates, 2 * hidden, 3 * hidden))
    output_gate = sigmoid(slice_last(gates, 3 * hidden, 4 * hidden))
    c = add(mul(forget_gate, c_prev), mul(input_gate, cell_gate))
    h = mul(output_gate, tanh(c))
    return h, c


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out_data = exp / exp.sum(axis=axis, keepdims=True)

    def backward(grad):
        dot = (grad * out_data).sum(axis=axis, keepdims=True)
        x.accumulate(out_data * (grad - dot))

    return Tensor(out_data, (x,), backward)


def cross_entropy(pred: Tensor, label: np.ndarray) -> Tensor:
    """
    Cross-entropy -sum(label * log(pred)) averaged over the leading axis.

    Args:
        pred: Probabilities (B, K)
        label: Target distribution (B, K), rows summing to 1

    Returns:
        Tensor: Scalar loss
    """
    tiny = np.finfo(pred.dtype).tiny
    safe = np.maximum(pred.data, tiny)
    batch = pred.shape[0]
    out_data = np.asarray(-(label * np.log(safe)).sum() / batch, dtype=pred.dtype)

    def backward(grad):
        pred.accumulate(grad * (-label / safe) / batch)

    return Tensor(out_data, (pred,), backward)


def softmax_cross_entropy(logits: Tensor, label: np.ndarray) -> Tensor:
    """Fused softmax + cross-entropy over the last axis; gradient is pred - label."""
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_prob = shifted - log_norm
    batch = logits.shape[0]
    out_data = np.asarray(-(label * log_prob).sum() / batch, dtype=logits.dtype)

    def backward(grad):
        pred = np.exp(log_prob)
        logits.accumulate(grad * (pred - label) / batch)

    return Tensor(out_data, (logits,), backward)


def zero_grad(params: Iterable[Parameter]):
    for param in params:
        param.grad = None


def sgd_update(params: Sequence[Parameter], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
    """
    In-place momentum SGD step.

    Weight decay adds weight_decay * w to the gradient of decaying parameters.
    The whole step is aborted before any parameter changes if a gradient is
    not finite.

    Raises:
        NonFiniteGradientError: If any gradient contains NaN or infinity
    """
    if lr <= 0:
        raise ValueError(f"Learning rate must be positive, got {lr}")
    for param in params:
        if param.grad is not None and not np.all(np.isfinite(param.grad)):
            raise NonFiniteGradientError(
                f"Non-finite gradient in {param.name}; step aborted",
                field=param.name,
            )
    for param in params:
        grad = param.grad if param.grad is not None else np.zeros_like(param.data)
        if weight_decay and param.decay:
            grad = grad + weight_decay * param.data
        param.velocity *= momentum
        param.velocity += grad
        param.data -= lr * param.velocity


def grad_check(function: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-3,
               samples: int = 100, rng: Optional[np.random.Generator] = None,
               floor: float = 1e-6, kink_tol: float = 1e-3) -> float:
    """
    Compare analytic gradients against central differences.

    Each parameter contributes ``samples`` random coordinates, or all of
    them when it has fewer. The numeric slope is taken at eps and eps/2.
    A coordinate is skipped and replaced by another one when any of the
    perturbed passes takes a different ReLU or pooling branch than the
    unperturbed pass, or when the two slopes disagree by more than
    ``kink_tol``. The remaining ones are compared to the Richardson
    combination of both estimates.

    Args:
        function: Rebuilds the scalar loss from the current parameter values
        params: Parameters to check; must be float64
        eps: Finite-difference step
        samples: Coordinates checked per parameter
        rng: Random generator for coordinate sampling
        floor: Gradients below this magnitude are compared absolutely
        kink_tol: Relative disagreement that marks a kink

    Returns:
        float: Maximum relative error over the checked coordinates
    """
    for param in params:
        if param.dtype != np.float64:
            raise InvariantViolation(f"grad_check needs float64 parameters, {param.name} is {param.dtype}",
                                     field=param.name)
    rng = rng if rng is not None else np.random.default_rng(0)

    zero_grad(params)
    with record_branches() as base:
        loss = function()
    loss.backward()
    analytic = {id(p): (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params}

    worst = 0.0
    skipped = 0
    checked = 0
    for param in params:
        flat = param.data.reshape(-1)
        grads = analytic[id(param)].reshape(-1)
        taken = 0
        for coord in rng.permutation(flat.size):
            if taken >= samples:
                break
            original = flat[coord]
            values = {}
            smooth = True
            for step in (eps, -eps, eps / 2, -eps / 2):
                flat[coord] = original + step
                with record_branches() as branches:
                    values[step] = float(function().data)
                smooth = smooth and same_branches(base, branches)
            flat[coord] = original
            wide = (values[eps] - values[-eps]) / (2 * eps)
            narrow = (values[eps / 2] - values[-eps / 2]) / eps
            if not smooth or abs(wide - narrow) > kink_tol * max(abs(wide), abs(narrow), floor):
                skipped += 1
                continue
            numeric = (4.0 * narrow - wide) / 3.0
            exact = grads[coord]
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            worst = max(worst, error)
            taken += 1
        if taken < min(samples, flat.size):
            logger.warning(f"grad_check: only {taken} smooth coordinates in {param.name}")
        checked += taken

    logger.debug(f"grad_check: {checked} coordinates checked, {skipped} kinks skipped, max error {worst:.3e}")
    return worst
