"""Tape-based reverse-mode differentiation with surrogate spike gradients.

Every primitive call appends one node to a :class:`Tape` and computes its
value eagerly. :meth:`Tape.backward` walks the tape once in reverse order,
so gradients of an unrolled recurrent network come out as full
backpropagation through time.

The spike nonlinearity is the only non-differentiable primitive. Its
forward pass is the Heaviside step ``H(u) = [u >= 0]`` and its backward
pass substitutes a surrogate derivative ``psi(u)``. In *smooth mode* the
forward pass uses ``Phi``, an antiderivative of ``psi``, instead; then the
surrogate is the true derivative and finite differences can check it.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ShapeError

SURROGATE_KINDS = ("triangular", "arctan", "scaled_tanh")


@dataclass(frozen=True)
class SurrogateSpec:
    kind: str = "triangular"
    scale: float = 1.0
    v_th: float = 1.0

    def __post_init__(self):
        if self.kind not in SURROGATE_KINDS:
            raise ValueError(f"unknown surrogate kind {self.kind!r}; expected one of {SURROGATE_KINDS}")
        if not self.scale > 0:
            raise ValueError(f"surrogate scale must be positive, got {self.scale}")


def surrogate_derivative(u, spec: SurrogateSpec) -> np.ndarray:
    """``psi(u)`` where ``u = v - v_th``. Even and nonnegative for every kind."""
    u = T.as_tensor(u)
    g = spec.scale
    if spec.kind == "arctan":
        return g / (1.0 + (np.pi * g * u) ** 2)
    if spec.kind == "triangular":
        return g * np.maximum(0.0, 1.0 - g * np.abs(u))
    return g * (1.0 - np.tanh(g * u) ** 2)


def smooth_spike(u, spec: SurrogateSpec) -> np.ndarray:
    """Sigmoidal antiderivative of the arctan surrogate, ``Phi(0) = 1/2``."""
    if spec.kind != "arctan":
        raise ValueError(f"smooth mode needs the arctan surrogate, got {spec.kind!r}")
    u = T.as_tensor(u)
    return np.arctan(np.pi * spec.scale * u) / np.pi + 0.5


# --------------------------------------------------------------------------
# primitives

@dataclass(frozen=True)
class Primitive:
    forward: Callable
    vjp: Callable  # (g, out, *input_values, **attrs) -> tuple of cotangents


PRIMITIVES: dict[str, Primitive] = {}


def primitive(name, vjp):
    def wrap(forward):
        PRIMITIVES[name] = Primitive(forward, vjp)
        return forward
    return wrap


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    g = g.sum(axis=tuple(range(g.ndim - len(shape)))) if g.ndim > len(shape) else g
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _shape_of(a):
    return np.shape(a)


primitive("add", lambda g, out, a, b: (_unbroadcast(g, _shape_of(a)), _unbroadcast(g, _shape_of(b))))(
    lambda a, b: a + b)
primitive("sub", lambda g, out, a, b: (_unbroadcast(g, _shape_of(a)), -_unbroadcast(g, _shape_of(b))))(
    lambda a, b: a - b)
primitive("mul", lambda g, out, a, b: (_unbroadcast(g * b, _shape_of(a)), _unbroadcast(g * a, _shape_of(b))))(
    lambda a, b: a * b)
primitive("neg", lambda g, out, a: (-g,))(lambda a: -a)
primitive("scale", lambda g, out, a, c: (g * c,))(lambda a, c: a * c)
primitive("shift", lambda g, out, a, c: (g,))(lambda a, c: a + c)
primitive("sigmoid", lambda g, out, a: (g * out * (1.0 - out),))(T.sigmoid)
primitive("tanh", lambda g, out, a: (g * (1.0 - out * out),))(T.tanh)
primitive("sum", lambda g, out, a: (np.broadcast_to(g, np.shape(a)).copy(),))(lambda a: np.sum(a))
primitive("mean", lambda g, out, a: (np.full(np.shape(a), g / np.size(a)),))(lambda a: np.mean(a))
primitive("reshape", lambda g, out, a, shape: (np.reshape(g, np.shape(a)),))(
    lambda a, shape: np.reshape(a, shape))
primitive("detach", lambda g, out, a: (None,))(lambda a: a)


def _spike_forward(u, spec, smooth=False):
    return smooth_spike(u, spec) if smooth else T.heaviside(u)


primitive("spike", lambda g, out, u, spec, smooth=False: (g * surrogate_derivative(u, spec),))(_spike_forward)


def _affine_vjp(g, out, w, x, b):
    dw, dx, db = T.affine_vjp(g, w, x)
    return dw, dx, db


primitive("affine", _affine_vjp)(T.affine)
primitive("matmul", lambda g, out, w, x: T.affine_vjp(g, w, x)[:2])(lambda w, x: T.affine(w, x))


def _conv_vjp(g, out, x, k, b, stride=1, padding="same"):
    return T.conv2d_vjp(g, x, k, stride=stride, padding=padding)


primitive("conv2d", _conv_vjp)(T.conv2d)
primitive(
    "conv",
    lambda g, out, x, k, stride=1, padding="same": T.conv2d_vjp(g, x, k, stride=stride, padding=padding)[:2],
)(lambda x, k, stride=1, padding="same": T.conv2d(x, k, None, stride=stride, padding=padding))
primitive("maxpool2d", lambda g, out, x, window=2: (T.maxpool2d_vjp(g, x, window),))(T.maxpool2d)


def _stack_vjp(g, out, *xs):
    return tuple(g[k] for k in range(len(xs)))


primitive("stack", _stack_vjp)(lambda *xs: np.stack(xs))


# --------------------------------------------------------------------------
# tape

class Node:
    __slots__ = ("op", "inputs", "value", "attrs", "name")

    def __init__(self, op, inputs, value, attrs, name=None):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.attrs = attrs
        self.name = name


class Var:
    """Handle to a value recorded on a tape."""

    __slots__ = ("tape", "id", "value")
    __array_ufunc__ = None  # make ndarray <op> Var defer to Var's reflected ops

    def __init__(self, tape, node_id, value):
        self.tape = tape
        self.id = node_id
        self.value = value

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"

    def __add__(self, other):
        if np.isscalar(other):
            return apply("shift", self, c=float(other))
        return apply("add", self, other)

    def __radd__(self, other):
        if np.isscalar(other):
            return apply("shift", self, c=float(other))
        return apply("add", other, self)

    def __sub__(self, other):
        if np.isscalar(other):
            return apply("shift", self, c=-float(other))
        return apply("sub", self, other)

    def __rsub__(self, other):
        if np.isscalar(other):
            return apply("shift", -self, c=float(other))
        return apply("sub", other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return apply("scale", self, c=float(other))
        return apply("mul", self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return apply("scale", self, c=float(other))
        return apply("mul", other, self)

    def __neg__(self):
        return apply("neg", self)


class Gradients(Mapping):
    """Gradients keyed by node id; indexing with a :class:`Var` also works.

    Nodes the loss does not depend on map to zeros.
    """

    def __init__(self, tape, grads):
        self._tape = tape
        self._grads = grads

    def _key(self, k):
        return k.id if isinstance(k, Var) else k

    def __getitem__(self, k):
        i = self._key(k)
        if not 0 <= i < len(self._tape.nodes):
            raise KeyError(f"node {i} is not on this tape")
        g = self._grads[i] if i < len(self._grads) else None
        if g is None:
            return np.zeros(np.shape(self._tape.nodes[i].value))
        return g

    def __iter__(self):
        return iter(i for i, node in enumerate(self._tape.nodes) if node.op == "leaf")

    def __len__(self):
        return sum(1 for node in self._tape.nodes if node.op == "leaf")


class Tape:
    """Ordered record of primitive applications.

    With ``grad_enabled=False`` nothing is stored; values are computed and
    returned but :meth:`backward` is unavailable. Use that for inference.
    """

    def __init__(self, grad_enabled: bool = True):
        self.grad_enabled = grad_enabled
        self.nodes: list[Node] = []
        self.visits = 0

    def __len__(self):
        return len(self.nodes)

    def _append(self, op, inputs, value, attrs, name=None):
        if not self.grad_enabled:
            return Var(self, -1, value)
        self.nodes.append(Node(op, inputs, value, attrs, name))
        return Var(self, len(self.nodes) - 1, value)

    def leaf(self, value, name=None) -> Var:
        """A differentiable input, typically a parameter."""
        return self._append("leaf", (), T.as_tensor(value), {}, name)

    def constant(self, value) -> Var:
        return self._append("const", (), T.as_tensor(value), {})

    def _resolve(self, x):
        if isinstance(x, Var):
            if x.tape is not self:
                if x.tape.grad_enabled:
                    raise ValueError(f"{x!r} belongs to a different tape")
                return self.constant(x.value)
            if self.grad_enabled and not 0 <= x.id < len(self.nodes):
                raise KeyError(f"node {x.id} is not on this tape")
            return x
        if isinstance(x, (int, np.integer)):
            if not self.grad_enabled:
                raise KeyError("node ids are not tracked on a no-grad tape")
            if not 0 <= x < len(self.nodes):
                raise KeyError(f"node {x} is not on this tape")
            return Var(self, int(x), self.nodes[x].value)
        return self.constant(x)

    def record(self, op: str, inputs, **attrs) -> Var:
        try:
            prim = PRIMITIVES[op]
        except KeyError:
            raise ValueError(f"unknown primitive {op!r}") from None
        args = [self._resolve(x) for x in inputs]
        value = prim.forward(*(a.value for a in args), **attrs)
        return self._append(op, tuple(a.id for a in args), value, attrs)

    def backward(self, loss) -> Gradients:
        if not self.grad_enabled:
            raise RuntimeError("backward() on a tape recorded with grad_enabled=False")
        loss = self._resolve(loss)
        if np.size(loss.value) != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        grads: list = [None] * (loss.id + 1)
        grads[loss.id] = np.ones(np.shape(loss.value))
        self.visits = 0
        for idx in range(loss.id, -1, -1):
            self.visits += 1
            node = self.nodes[idx]
            g = grads[idx]
            if g is None or not node.inputs:
                continue
            prim = PRIMITIVES[node.op]
            cots = prim.vjp(g, node.value, *(self.nodes[i].value for i in node.inputs), **node.attrs)
            for i, c in zip(node.inputs, cots):
                if c is None:
                    continue
                grads[i] = c if grads[i] is None else grads[i] + c
        return Gradients(self, grads)


# --------------------------------------------------------------------------
# functional front end; ndarray arguments are lifted onto the tape of any
# Var argument, or onto a throwaway no-grad tape if there is none

def _tape_of(*args):
    fallback = None
    for a in args:
        if isinstance(a, Var):
            if a.tape.grad_enabled:
                return a.tape
            fallback = fallback or a.tape
    return fallback or Tape(grad_enabled=False)


def apply(op, *args, **attrs) -> Var:
    return _tape_of(*args).record(op, args, **attrs)


def sigmoid(x):
    return apply("sigmoid", x)


def tanh(x):
    return apply("tanh", x)


def spike(u, spec: SurrogateSpec, smooth: bool = False):
    return apply("spike", u, spec=spec, smooth=smooth)


def affine(w, x, b):
    return apply("affine", w, x, b)


def conv2d(x, k, b, stride=1, padding="same"):
    return apply("conv2d", x, k, b, stride=stride, padding=padding)


def matmul(w, x):
    return apply("matmul", w, x)


def conv(x, k, stride=1, padding="same"):
    return apply("conv", x, k, stride=stride, padding=padding)


def maxpool2d(x, window=2):
    return apply("maxpool2d", x, window=window)


def reshape(x, shape):
    return apply("reshape", x, shape=tuple(shape))


def vsum(x):
    return apply("sum", x)


def mean(x):
    return apply("mean", x)


def stack(xs):
    return apply("stack", *xs)


def detach(x):
    return apply("detach", x)


def value(x):
    return x.value if isinstance(x, Var) else T.as_tensor(x)
