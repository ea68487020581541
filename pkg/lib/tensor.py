#!/usr/bin/env python3
"""
Tensor core
Dense numpy-backed tensors, a per-step reverse-mode gradient tape, the primitive
operations every model component is built from, and the seeded counter-based Rng
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes do not conform to an operation's rules"""


class NumericGuardError(FloatingPointError):
    """Non-finite value reached a primitive while strict mode is on"""


class TapeError(RuntimeError):
    """Gradient tape misuse: no tape, consumed tape or non-scalar loss"""


# Process-wide defaults; tapes are per thread
_DEFAULTS = {'dtype': np.dtype(np.float32), 'strict': False}
_LOCAL = threading.local()


def default_dtype() -> np.dtype:
    return _DEFAULTS['dtype']


def set_precision(dtype) -> None:
    """Set the dtype of newly created tensors and parameters ('float32' or 'float64')"""
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"Unsupported precision: {dtype}")
    _DEFAULTS['dtype'] = dtype


@contextmanager
def precision(dtype):
    """Temporarily switch the default dtype, e.g. float64 for gradient checks"""
    previous = _DEFAULTS['dtype']
    set_precision(dtype)
    try:
        yield
    finally:
        _DEFAULTS['dtype'] = previous


def set_strict(enabled: bool) -> None:
    _DEFAULTS['strict'] = bool(enabled)


def is_strict() -> bool:
    return _DEFAULTS['strict']


@contextmanager
def strict_mode(enabled: bool = True):
    """Check every primitive input for NaN/inf while active"""
    previous = _DEFAULTS['strict']
    _DEFAULTS['strict'] = bool(enabled)
    try:
        yield
    finally:
        _DEFAULTS['strict'] = previous


def _tape_stack() -> list:
    if not hasattr(_LOCAL, 'tapes'):
        _LOCAL.tapes = []
    return _LOCAL.tapes


def current_tape() -> Optional['Tape']:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """Suspend recording; primitives run as plain array math"""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


# ============================================================================
# Tensor / Parameter
# ============================================================================

class Tensor:
    """Immutable dense array; records onto the active tape when it requires grad"""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or default_dtype())
        self.requires_grad = requires_grad
        self.tape_node: Optional[TapeNode] = None

    @classmethod
    def _from_array(cls, array: np.ndarray) -> 'Tensor':
        out = cls.__new__(Tensor)
        out.data = array
        out.requires_grad = False
        out.tape_node = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")

    def __repr__(self) -> str:
        flag = ', requires_grad=True' if self.requires_grad else ''
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # Arithmetic
    def __add__(self, other): return apply_primitive('add', self, _as_tensor(other, self))
    def __radd__(self, other): return apply_primitive('add', _as_tensor(other, self), self)
    def __sub__(self, other): return apply_primitive('sub', self, _as_tensor(other, self))
    def __rsub__(self, other): return apply_primitive('sub', _as_tensor(other, self), self)
    def __mul__(self, other): return apply_primitive('mul', self, _as_tensor(other, self))
    def __rmul__(self, other): return apply_primitive('mul', _as_tensor(other, self), self)
    def __truediv__(self, other): return apply_primitive('div', self, _as_tensor(other, self))
    def __rtruediv__(self, other): return apply_primitive('div', _as_tensor(other, self), self)
    def __neg__(self): return apply_primitive('neg', self)
    def __matmul__(self, other): return apply_primitive('matmul', self, _as_tensor(other, self))
    def __getitem__(self, index): return apply_primitive('getitem', self, index=index)

    # Elementwise maps
    def exp(self): return apply_primitive('exp', self)
    def log(self): return apply_primitive('log', self)
    def sigmoid(self): return apply_primitive('sigmoid', self)
    def silu(self): return apply_primitive('silu', self)
    def softplus(self): return apply_primitive('softplus', self)
    def tanh(self): return apply_primitive('tanh', self)

    # Shape / reductions
    def reshape(self, *shape):
        shape = shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape
        return apply_primitive('reshape', self, shape=tuple(shape))

    def transpose(self, *axes):
        axes = axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes
        return apply_primitive('transpose', self, axes=tuple(axes) if axes else None)

    def broadcast_to(self, shape): return apply_primitive('broadcast_to', self, shape=tuple(shape))
    def sum(self, axis=None, keepdims=False): return apply_primitive('sum', self, axis=axis, keepdims=keepdims)
    def mean(self, axis=None, keepdims=False): return apply_primitive('mean', self, axis=axis, keepdims=keepdims)
    def softmax(self, axis=-1): return apply_primitive('softmax', self, axis=axis)
    def log_softmax(self, axis=-1): return apply_primitive('log_softmax', self, axis=axis)


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter of one parameter"""
    m: np.ndarray
    v: np.ndarray
    step: int = 0


class Parameter(Tensor):
    """Trainable tensor with a unique dotted name and its own Adam state"""

    def __init__(self, data, name: str = ''):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.adam_state = AdamState(m=np.zeros_like(self.data), v=np.zeros_like(self.data))

    @property
    def tensor(self) -> 'Parameter':
        return self

    def assign(self, values: np.ndarray) -> None:
        """In-place update of the stored values; shape must match"""
        values = np.asarray(values, dtype=self.data.dtype)
        if values.shape != self.data.shape:
            raise ShapeError(f"assign: {self.name} expects {self.data.shape}, got {values.shape}")
        self.data[...] = values

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


def _as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, dtype=None) -> Tensor:
    return Tensor._from_array(np.zeros(shape, dtype=dtype or default_dtype()))


def ones(shape, dtype=None) -> Tensor:
    return Tensor._from_array(np.ones(shape, dtype=dtype or default_dtype()))


def stop_gradient(x: Tensor) -> Tensor:
    """Same values, no tape node, contributes zero gradient"""
    return Tensor._from_array(x.data)


# ============================================================================
# Gradient tape
# ============================================================================

class TapeNode:
    __slots__ = ('tape', 'op_kind', 'inputs', 'output', 'vjp', 'index')

    def __init__(self, tape, op_kind, inputs, output, vjp, index):
        self.tape = tape
        self.op_kind = op_kind
        self.inputs = inputs
        self.output = output
        self.vjp = vjp
        self.index = index


class Tape:
    """
    Records primitive applications in execution order. One tape per training
    step; it is consumed by backward and must not be reused.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.consumed = False

    def __enter__(self) -> 'Tape':
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        for i in range(len(stack) - 1, -1, -1):
            if stack[i] is self:
                del stack[i]
                break

    def record(self, op_kind: str, inputs: list, output: Tensor, vjp: Callable) -> TapeNode:
        if self.consumed:
            raise TapeError(f"cannot record '{op_kind}' on a consumed tape")
        node = TapeNode(self, op_kind, tuple(inputs), output, vjp, len(self.nodes))
        self.nodes.append(node)
        return node

    def gradients(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of a scalar loss with respect to arbitrary leaf tensors"""
        if self.consumed:
            raise TapeError("backward called twice on one tape")
        if loss.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")

        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            for inp, grad in zip(node.inputs, node.vjp(upstream)):
                if grad is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = grads[key] + grad if key in grads else grad

        self.consumed = True
        self.nodes = []
        return [
            np.asarray(grads[id(t)], dtype=t.dtype).reshape(t.shape) if id(t) in grads
            else np.zeros_like(t.data)
            for t in wrt
        ]

    def parameters(self) -> list[Parameter]:
        """Parameters read by any recorded node, in first-use order"""
        seen = {}
        for node in self.nodes:
            for inp in node.inputs:
                if isinstance(inp, Parameter) and id(inp) not in seen:
                    seen[id(inp)] = inp
        return list(seen.values())

    def backward(self, loss: Tensor, params: Optional[Iterable[Parameter]] = None) -> dict[str, Tensor]:
        """
        Gradient map keyed by parameter name

        Args:
            loss: Scalar produced under this tape
            params: Parameters to report; unreachable ones get zeros. Defaults to
                every parameter the tape saw.

        Returns:
            Dict of parameter name -> gradient Tensor
        """
        params = list(params) if params is not None else self.parameters()
        grads = self.gradients(loss, params)
        return {p.name: Tensor._from_array(g) for p, g in zip(params, grads)}


def backward(loss: Tensor, params: Optional[Iterable[Parameter]] = None) -> dict[str, Tensor]:
    """Backward through the tape that produced `loss` (or the active tape)"""
    tape = loss.tape_node.tape if loss.tape_node is not None else current_tape()
    if tape is None:
        raise TapeError("loss was not produced under an active tape")
    return tape.backward(loss, params)


# ============================================================================
# Primitives
# ============================================================================

_PRIMITIVES: dict[str, Callable] = {}


def register_primitive(name: str):
    def register(fn):
        _PRIMITIVES[name] = fn
        return fn
    return register


def primitive_names() -> list[str]:
    return sorted(_PRIMITIVES)


def apply_primitive(op_kind: str, *inputs, **attrs) -> Tensor:
    """
    Apply a registered primitive and record it on the active tape

    Args:
        op_kind: Registered primitive name
        inputs: Tensor operands (python scalars and arrays are wrapped)
        attrs: Non-differentiable attributes (axis, shape, stride, ...)

    Returns:
        Output Tensor, carrying a tape node when any input requires grad
    """
    forward = _PRIMITIVES.get(op_kind)
    if forward is None:
        raise ValueError(f"Unknown primitive '{op_kind}'")

    tensors = [_as_tensor(x) for x in inputs]
    if _DEFAULTS['strict']:
        for t in tensors:
            if not np.all(np.isfinite(t.data)):
                raise NumericGuardError(f"{op_kind}: non-finite input of shape {t.shape}")

    array, vjp = forward(*[t.data for t in tensors], **attrs)
    out = Tensor._from_array(array)

    tape = current_tape()
    if tape is not None and vjp is not None and any(t.requires_grad for t in tensors):
        out.requires_grad = True
        out.tape_node = tape.record(op_kind, tensors, out, vjp)
    return out


def _broadcast_check(op_kind: str, *shapes) -> tuple:
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeError(f"{op_kind}: cannot broadcast shapes {' and '.join(str(s) for s in shapes)}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)


@register_primitive('add')
def _add(a, b):
    _broadcast_check('add', a.shape, b.shape)
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


@register_primitive('sub')
def _sub(a, b):
    _broadcast_check('sub', a.shape, b.shape)
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


@register_primitive('mul')
def _mul(a, b):
    _broadcast_check('mul', a.shape, b.shape)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


@register_primitive('div')
def _div(a, b):
    _broadcast_check('div', a.shape, b.shape)
    out = a / b
    return out, lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape))


@register_primitive('neg')
def _neg(a):
    return -a, lambda g: (-g,)


@register_primitive('matmul')
def _matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not contract")
    _broadcast_check('matmul', a.shape[:-2], b.shape[:-2])

    def vjp(g):
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return a @ b, vjp


@register_primitive('exp')
def _exp(a):
    out = np.exp(a)
    return out, lambda g: (g * out,)


@register_primitive('log')
def _log(a):
    return np.log(a), lambda g: (g / a,)


@register_primitive('softplus')
def _softplus(a):
    return np.logaddexp(0, a).astype(a.dtype), lambda g: (g * _stable_sigmoid(a),)


@register_primitive('sigmoid')
def _sigmoid(a):
    out = _stable_sigmoid(a)
    return out, lambda g: (g * out * (1 - out),)


@register_primitive('silu')
def _silu(a):
    s = _stable_sigmoid(a)
    return a * s, lambda g: (g * (s + a * s * (1 - s)),)


@register_primitive('tanh')
def _tanh(a):
    out = np.tanh(a)
    return out, lambda g: (g * (1 - out * out),)


@register_primitive('softmax')
def _softmax(a, axis=-1):
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)
    return out, lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),)


@register_primitive('log_softmax')
def _log_softmax(a, axis=-1):
    shifted = a - a.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    return out, lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)


@register_primitive('layer_norm')
def _layer_norm(x, gain, bias, eps=1e-5):
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(f"layer_norm: input {x.shape} with gain {gain.shape} and bias {bias.shape}")
    centered = x - x.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std

    def vjp(g):
        g_normed = g * gain
        gx = inv_std * (
            g_normed
            - g_normed.mean(axis=-1, keepdims=True)
            - normed * (g_normed * normed).mean(axis=-1, keepdims=True)
        )
        return gx, _unbroadcast(g * normed, gain.shape), _unbroadcast(g, bias.shape)
    return normed * gain + bias, vjp


@register_primitive('concat')
def _concat(*arrays, axis=0):
    ref = arrays[0]
    ax = axis % ref.ndim
    for arr in arrays[1:]:
        if arr.ndim != ref.ndim or any(
            n != m for i, (n, m) in enumerate(zip(arr.shape, ref.shape)) if i != ax
        ):
            raise ShapeError(f"concat: shapes {ref.shape} and {arr.shape} differ off axis {axis}")
    splits = np.cumsum([arr.shape[ax] for arr in arrays])[:-1]
    return np.concatenate(arrays, axis=ax), lambda g: tuple(np.split(g, splits, axis=ax))


@register_primitive('stack')
def _stack(*arrays, axis=0):
    for arr in arrays[1:]:
        if arr.shape != arrays[0].shape:
            raise ShapeError(f"stack: shapes {arrays[0].shape} and {arr.shape} differ")
    out = np.stack(arrays, axis=axis)
    ax = axis % out.ndim
    return out, lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(arrays)))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


@register_primitive('getitem')
def _getitem(a, index=None):
    out = np.array(a[index])

    def vjp(g):
        grad = np.zeros_like(a)
        if _is_basic_index(index):
            grad[index] = g
        else:
            np.add.at(grad, index, g)
        return (grad,)
    return out, vjp


@register_primitive('reshape')
def _reshape(a, shape=()):
    try:
        out = a.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    return out, lambda g: (g.reshape(a.shape),)


@register_primitive('transpose')
def _transpose(a, axes=None):
    axes = tuple(range(a.ndim))[::-1] if axes is None else axes
    inverse = tuple(np.argsort(axes))
    return np.transpose(a, axes), lambda g: (np.transpose(g, inverse),)


@register_primitive('broadcast_to')
def _broadcast_to(a, shape=()):
    if _broadcast_check('broadcast_to', a.shape, shape) != tuple(shape):
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}")
    return np.broadcast_to(a, shape).copy(), lambda g: (_unbroadcast(g, a.shape),)


def _expand_reduced(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


@register_primitive('sum')
def _sum(a, axis=None, keepdims=False):
    out = np.asarray(a.sum(axis=axis, keepdims=keepdims))
    return out, lambda g: (_expand_reduced(g, a.shape, axis, keepdims),)


@register_primitive('mean')
def _mean(a, axis=None, keepdims=False):
    out = np.asarray(a.mean(axis=axis, keepdims=keepdims))
    count = a.size // max(out.size, 1)
    return out, lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,)


@register_primitive('clamp_min')
def _clamp_min(a, floor=0.0):
    out = np.maximum(a, floor).astype(a.dtype)
    return out, lambda g: (g * (a >= floor),)


@register_primitive('straight_through')
def _straight_through(probs, hard=None):
    hard = np.asarray(hard, dtype=probs.dtype)
    if hard.shape != probs.shape:
        raise ShapeError(f"straight_through: hard sample {hard.shape} vs probs {probs.shape}")
    return hard, lambda g: (g,)


@register_primitive('one_hot')
def _one_hot(indices=None, depth=0):
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= depth):
        raise ValueError(f"one_hot: indices must lie in [0, {depth}), got range "
                         f"[{indices.min()}, {indices.max()}]")
    return np.eye(depth, dtype=default_dtype())[indices], None


def _conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


@register_primitive('conv2d')
def _conv2d(x, w, stride=1, padding=0):
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} and kernel {w.shape} do not conform")
    _, _, height, width = x.shape
    kh, kw = w.shape[2:]
    out_h, out_w = _conv_out(height, kh, stride, padding), _conv_out(width, kw, stride, padding)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")

    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    out = np.einsum('bchwij,ocij->bohw', windows, w, optimize=True)

    def vjp(g):
        gw = np.einsum('bohw,bchwij->ocij', g, windows, optimize=True)
        g_padded = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                g_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                    np.einsum('bohw,oc->bchw', g, w[:, :, i, j], optimize=True)
        gx = g_padded[:, :, padding:padding + height, padding:padding + width]
        return gx, gw
    return out, vjp


@register_primitive('conv_transpose2d')
def _conv_transpose2d(x, w, stride=1, padding=0):
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"conv_transpose2d: input {x.shape} and kernel {w.shape} do not conform")
    batch, _, height, width = x.shape
    kh, kw = w.shape[2:]
    full_h, full_w = (height - 1) * stride + kh, (width - 1) * stride + kw
    if full_h - 2 * padding < 1 or full_w - 2 * padding < 1:
        raise ShapeError(f"conv_transpose2d: padding {padding} too large for input {x.shape}")

    full = np.zeros((batch, w.shape[1], full_h, full_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + stride * height:stride, j:j + stride * width:stride] += \
                np.einsum('bchw,co->bohw', x, w[:, :, i, j], optimize=True)
    out = full[:, :, padding:full_h - padding, padding:full_w - padding]

    def vjp(g):
        g_full = np.zeros_like(full)
        g_full[:, :, padding:full_h - padding, padding:full_w - padding] = g
        gx = np.zeros_like(x)
        gw = np.zeros_like(w)
        for i in range(kh):
            for j in range(kw):
                window = g_full[:, :, i:i + stride * height:stride, j:j + stride * width:stride]
                gx += np.einsum('bohw,co->bchw', window, w[:, :, i, j], optimize=True)
                gw[:, :, i, j] = np.einsum('bchw,bohw->co', x, window, optimize=True)
        return gx, gw
    return np.ascontiguousarray(out), vjp


# Functional wrappers for primitives without a method form

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return apply_primitive('concat', *tensors, axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return apply_primitive('stack', *tensors, axis=axis)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    return apply_primitive('layer_norm', x, gain, bias, eps=eps)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(floor, x) with zero gradient where x < floor"""
    return apply_primitive('clamp_min', x, floor=floor)


def straight_through(probs: Tensor, hard: np.ndarray) -> Tensor:
    """Forward value `hard`, gradient passed unchanged to `probs`"""
    return apply_primitive('straight_through', probs, hard=hard)


def one_hot(indices, depth: int) -> Tensor:
    return apply_primitive('one_hot', indices=indices, depth=depth)


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return apply_primitive('conv2d', x, weight, stride=stride, padding=padding)


def conv_transpose2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return apply_primitive('conv_transpose2d', x, weight, stride=stride, padding=padding)


# ============================================================================
# Rng
# ============================================================================

@dataclass
class Rng:
    """
    Counter-based (Philox) generator. Identical seed, stream and call sequence
    give identical draws on every platform.
    """
    seed: int
    stream: int = 0
    _generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        bit_generator = np.random.Philox(np.random.SeedSequence([int(self.seed) % 2**64, int(self.stream)]))
        self._generator = np.random.Generator(bit_generator)

    def spawn(self, stream: int) -> 'Rng':
        """Independent named stream derived from the same seed"""
        return Rng(self.seed, stream)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return (self._generator.standard_normal(shape) * scale).astype(default_dtype())

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._generator.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._generator.integers(low, high, size=size)

    def categorical(self, probs: np.ndarray) -> np.ndarray:
        """One index per row of the last axis, by inverse-CDF on a single uniform"""
        cdf = np.cumsum(probs, axis=-1)
        u = self._generator.uniform(size=probs.shape[:-1])[..., None] * cdf[..., -1:]
        return np.minimum((cdf <= u).sum(axis=-1), probs.shape[-1] - 1)

    def get_state(self) -> dict:
        state = self._generator.bit_generator.state
        return {
            'seed': int(self.seed),
            'stream': int(self.stream),
            'counter': [int(v) for v in state['state']['counter']],
            'key': [int(v) for v in state['state']['key']],
            'buffer': [int(v) for v in state['buffer']],
            'buffer_pos': int(state['buffer_pos']),
            'has_uint32': int(state['has_uint32']),
            'uinteger': int(state['uinteger']),
        }

    def set_state(self, state: dict) -> None:
        self.seed, self.stream = state['seed'], state['stream']
        self._generator.bit_generator.state = {
            'bit_generator': 'Philox',
            'state': {
                'counter': np.array(state['counter'], dtype=np.uint64),
                'key': np.array(state['key'], dtype=np.uint64),
            },
            'buffer': np.array(state['buffer'], dtype=np.uint64),
            'buffer_pos': state['buffer_pos'],
            'has_uint32': state['has_uint32'],
            'uinteger': state['uinteger'],
        }
