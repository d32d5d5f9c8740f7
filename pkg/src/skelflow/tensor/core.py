"""Dense tensor with reverse-mode differentiation.

Every differentiable operation produces a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient onto the parents'
gradients. :meth:`Tensor.backward` walks the graph in reverse topological
order. Values are always float64.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import InvalidArgumentError

BackwardFn = Callable[[np.ndarray], None]


class Tensor:
    """A float64 array that can take part in a gradient graph.

    Args:
        values: Anything ``np.asarray`` accepts. Copied only when it is not
            already a float64 array.
        requires_grad: Whether gradients should flow into this tensor.
        name: Optional label, used in error messages and checkpoints.
    """

    __slots__ = ("values", "requires_grad", "name", "_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None) -> None:
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def grad(self) -> np.ndarray:
        """Accumulated gradient; all zeros until something flows in."""
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.values.shape:
            raise InvalidArgumentError(
                f"gradient shape {value.shape} does not match values shape {self.values.shape}"
            )
        self._grad = value

    def zero_grad(self) -> None:
        self._grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self._grad is None:
            self._grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self._grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.values, requires_grad=False, name=self.name)

    def item(self) -> float:
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values

    def backward(self) -> None:
        """Back-propagate from a scalar tensor."""
        if self.values.size != 1:
            raise InvalidArgumentError(f"backward needs a scalar, got shape {self.shape}")
        order = _topological_order(self)
        self._grad = np.ones_like(self.values)
        for node in reversed(order):
            if node._backward is not None and node._grad is not None:
                node._backward(node._grad)
        # Intermediate gradients are not needed after the sweep.
        for node in order:
            if node._parents:
                node._grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the real work lives in ops.
    def __add__(self, other):
        from . import ops

        return ops.add(self, as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, as_tensor(-1.0))

    def __sub__(self, other):
        return self + (-as_tensor(other))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(
    values: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn
) -> Tensor:
    """Wrap ``values`` as the output of an op over ``parents``."""
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
