"""Reverse-mode differentiation over complex fields (Wirtinger calculus).

A small, closed set of operations is recorded on a :class:`Tape`; each knows
its own adjoint. Real-valued nodes carry the ordinary gradient dL/dx. Complex
nodes carry the conjugate cogradient ``dL/dz*``; for a real parameter ``t``
feeding a complex node ``z`` the chain rule is ``dL/dt = 2 Re(conj(dL/dz*) dz/dt)``.

Example
-------
>>> tape = Tape()
>>> a = tape.leaf(np.ones((4, 4)))
>>> phi = tape.leaf(np.zeros((4, 4)))
>>> z = polar(a, phi)
>>> loss = total(square(magnitude(z)))
>>> g_a, g_phi = backward(tape, loss, [a, phi])
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

from .propagation import crop_center, pad_center


class GradientError(RuntimeError):
    pass


class UnsupportedOpError(ValueError):
    pass


@dataclass
class _Node:
    kind: str
    inputs: tuple[int, ...]
    adjoint: Callable | None
    is_complex: bool
    shape: tuple


class Variable:
    __slots__ = ("tape", "id", "value")

    def __init__(self, tape: "Tape", node_id: int, value):
        self.tape = tape
        self.id = node_id
        self.value = value

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.value)

    def __repr__(self):
        kind = self.tape.nodes[self.id].kind
        return f"Variable(id={self.id}, kind={kind}, shape={np.shape(self.value)})"


class Tape:
    """Append-only record of operations; one tape per forward evaluation."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value) -> Variable:
        value = np.asarray(value)
        if np.iscomplexobj(value):
            raise TypeError("leaves must be real; parameterize complex fields via polar()")
        if not np.isfinite(value).all():
            raise ValueError("leaf value is not finite")
        return self._push("leaf", (), value, None)

    def _push(self, kind, inputs, value, adjoint) -> Variable:
        node_id = len(self.nodes)
        for v in inputs:
            if v.tape is not self:
                raise ValueError("operands belong to a different tape")
            if v.id >= node_id:
                raise GradientError("tape is not acyclic")
        self.nodes.append(
            _Node(kind, tuple(v.id for v in inputs), adjoint, np.iscomplexobj(value), np.shape(value))
        )
        return Variable(self, node_id, value)


# ---------------------------------------------------------------- linear ops

def fft2(x: Variable) -> Variable:
    out = sfft.fft2(x.value, norm="ortho")
    return x.tape._push("fft2", (x,), out, lambda c: (sfft.ifft2(c, norm="ortho"),))


def ifft2(x: Variable) -> Variable:
    out = sfft.ifft2(x.value, norm="ortho")
    return x.tape._push("ifft2", (x,), out, lambda c: (sfft.fft2(c, norm="ortho"),))


def mul_const(x: Variable, mask: np.ndarray) -> Variable:
    """Elementwise product with a constant (real or complex) mask."""
    out = x.value * mask
    if np.iscomplexobj(mask):
        def adjoint(c):
            # conjugate on demand: keeping a copy doubles the mask's footprint
            g = np.conj(mask)
            g *= c
            return (g,)

        return x.tape._push("mul_const", (x,), out, adjoint)
    return x.tape._push("mul_const", (x,), out, lambda c: (c * mask,))


def add(a: Variable, b: Variable) -> Variable:
    return a.tape._push("add", (a, b), a.value + b.value, lambda c: (c, c))


def scale(x: Variable, factor: float) -> Variable:
    factor = float(factor)
    return x.tape._push("scale", (x,), x.value * factor, lambda c: (c * factor,))


def pad(x: Variable, shape: tuple[int, int]) -> Variable:
    inner = x.value.shape
    return x.tape._push(
        "pad", (x,), pad_center(x.value, shape), lambda c: (crop_center(c, inner),)
    )


def crop(x: Variable, shape: tuple[int, int]) -> Variable:
    outer = x.value.shape
    return x.tape._push(
        "crop", (x,), crop_center(x.value, shape), lambda c: (pad_center(c, outer),)
    )


# ------------------------------------------------------------ nonlinear ops

def polar(amplitude: Variable, phase: Variable, dtype=np.complex128) -> Variable:
    """Compose a complex field ``A exp(j phi)`` from two real leaves."""
    a, phi = amplitude.value, phase.value
    out = (a * np.exp(1j * phi)).astype(dtype, copy=False)

    def adjoint(c):
        w = np.exp(1j * phi).astype(c.dtype, copy=False)
        w *= np.conj(c)
        g_a = 2 * np.real(w)
        w *= a
        return g_a, -2 * np.imag(w)

    return amplitude.tape._push("polar", (amplitude, phase), out, adjoint)


def checker_sign(shape: tuple[int, int]) -> np.ndarray:
    """-1 where (i + j) is even, +1 elsewhere."""
    i, j = np.indices(shape)
    return np.where((i + j) % 2 == 0, -1.0, 1.0)


def double_phase(amplitude: Variable, phase: Variable, dtype=np.complex128) -> Variable:
    """Checkerboard-interleaved two-phase encoding of ``A exp(j phi)``, A in [0, 1)."""
    a, phi = amplitude.value, phase.value
    if a.max(initial=0.0) >= 1 or a.min(initial=0.0) < 0:
        raise ValueError("double_phase needs amplitudes in [0, 1)")
    s = checker_sign(a.shape)
    theta = phi + s * np.arccos(a)
    out = np.exp(1j * theta).astype(dtype, copy=False)

    def adjoint(c):
        g_theta = 2 * np.real(np.conj(c) * 1j * np.exp(1j * theta))
        return g_theta * (-s / np.sqrt(1 - a ** 2)), g_theta

    return amplitude.tape._push("double_phase", (amplitude, phase), out, adjoint)


def magnitude(z: Variable) -> Variable:
    """|z| of a complex node; the subgradient at z = 0 is taken as 0."""
    zv = z.value
    r = np.abs(zv)

    def adjoint(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = zv / r
        out[r == 0] = 0
        out *= 0.5 * g
        return (out,)

    return z.tape._push("magnitude", (z,), r, adjoint)


def square(x: Variable) -> Variable:
    xv = x.value
    return x.tape._push("square", (x,), xv * xv, lambda g: (2 * xv * g,))


def total(x: Variable) -> Variable:
    shape = np.shape(x.value)
    out = np.asarray(np.sum(x.value))
    return x.tape._push("sum", (x,), out, lambda g: (np.full(shape, g),))


def logistic(x: Variable) -> Variable:
    s = 1.0 / (1.0 + np.exp(-x.value))
    return x.tape._push("logistic", (x,), s, lambda g: (g * s * (1 - s),))


def fit_scale(x: Variable, reference: np.ndarray) -> Variable:
    """Rescale ``x`` by the least-squares factor that best matches ``reference``."""
    xv = x.value
    xx = float(np.sum(xv * xv, dtype=np.float64))
    xr = float(np.sum(xv * reference, dtype=np.float64))
    s = xr / xx if xx > 0 else 0.0

    def adjoint(g):
        if xx == 0:
            return (np.zeros_like(xv),)
        gx = float(np.sum(g * xv, dtype=np.float64))
        return (s * g + (reference / xx - 2 * xr / xx ** 2 * xv) * gx,)

    return x.tape._push("fit_scale", (x,), (xv * s).astype(xv.dtype, copy=False), adjoint)


def loss(x: Variable, fn: Callable[[np.ndarray], tuple[float, np.ndarray]], name="loss") -> Variable:
    """Scalar loss node; ``fn`` returns (value, dvalue/dx) for the real image ``x``."""
    if np.iscomplexobj(x.value):
        raise TypeError("losses take real-valued images")
    value, grad = fn(x.value)
    return x.tape._push(name, (x,), np.asarray(float(value)), lambda g: (grad * g,))


# ------------------------------------------------------------------ driver

_STAGES = {
    "fft2": fft2,
    "ifft2": ifft2,
    "mul": mul_const,
    "pad": pad,
    "crop": crop,
    "magnitude": magnitude,
    "square": square,
    "sum": total,
    "scale": scale,
    "logistic": logistic,
    "fit_scale": fit_scale,
}


def record_pipeline(x: Variable, stages: Sequence[tuple]) -> Variable:
    """Record a chain of single-input stages, e.g. ``[("pad", shape), ("fft2",)]``."""
    for stage in stages:
        name, *args = stage
        try:
            op = _STAGES[name]
        except KeyError:
            raise UnsupportedOpError(f"unsupported stage {name!r}") from None
        x = op(x, *args)
    return x


def backward(
    tape: Tape,
    loss_node: Variable,
    wrt: Sequence[Variable] | None = None,
    release: bool = False,
):
    """Propagate from a scalar real loss back to the leaves.

    Returns a list of gradients aligned with ``wrt`` when given, otherwise a
    dict mapping leaf node ids to their gradients. Leaves that do not
    influence the loss get zeros. ``release=True`` drops each node's saved
    forward values once its adjoint has run, which lowers peak memory but
    leaves the tape unusable for a second pass.
    """
    if not tape.nodes:
        raise GradientError("cannot run backward on an empty tape")
    if loss_node.tape is not tape:
        raise GradientError("loss node belongs to a different tape")
    if np.ndim(loss_node.value) != 0 or np.iscomplexobj(loss_node.value):
        raise GradientError("backward needs a real scalar loss")

    grads: dict[int, np.ndarray] = {loss_node.id: np.asarray(1.0)}
    leaves: dict[int, np.ndarray] = {}
    for node_id in range(loss_node.id, -1, -1):
        g = grads.pop(node_id, None)
        if g is None:
            continue
        node = tape.nodes[node_id]
        if node.kind == "leaf":
            leaves[node_id] = g
            continue
        if node.adjoint is None:
            raise GradientError(f"node {node_id} ({node.kind}) was released by an earlier pass")
        parent_grads = node.adjoint(g)
        del g
        if release:
            node.adjoint = None
        for parent, pg in zip(node.inputs, parent_grads):
            if not tape.nodes[parent].is_complex and np.iscomplexobj(pg):
                # real operand promoted into a complex node
                pg = 2 * np.real(pg)
            if not np.isfinite(np.sum(pg)):
                raise GradientError(f"non-finite gradient at node {node_id} ({node.kind})")
            if parent in grads:
                grads[parent] = grads[parent] + pg
            else:
                grads[parent] = pg

    if wrt is None:
        return leaves
    out = []
    for v in wrt:
        if tape.nodes[v.id].kind != "leaf":
            raise GradientError(f"node {v.id} is not a leaf")
        g = leaves.get(v.id)
        out.append(np.zeros(tape.nodes[v.id].shape) if g is None else np.asarray(g))
    return out
