"""Dense float64 tensors with reverse-mode gradient accumulation.

A tensor is a flat row-major ``array('d')`` plus a shape of rank 1..4.
Operations (see :mod:`.ops`) record parents and a backward closure; calling
:func:`backward` on a scalar walks the tape in reverse topological order and
accumulates gradients into the ``grad`` buffers of the participating leaves.
Repeated backward calls accumulate additively until :func:`zero_grad`.

Every operation output is checked for NaN/Inf; non-finite values raise
immediately rather than propagating.
"""

from array import array
from typing import Iterable, Optional, Sequence

from . import backend
from .errors import ShapeError

Shape = tuple[int, ...]


def _check_shape(shape: Shape) -> int:
    if not 1 <= len(shape) <= 4:
        raise ShapeError(f"rank must be 1..4, got shape {shape}")
    size = 1
    for d in shape:
        if d <= 0:
            raise ShapeError(f"dimensions must be positive, got shape {shape}")
        size *= d
    return size


def _zeros_buf(n: int) -> array:
    return array("d", bytes(8 * n))


class Tensor:
    __slots__ = ("shape", "data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, shape: Sequence[int], data: array, requires_grad: bool = False):
        shape = tuple(shape)
        size = _check_shape(shape)
        if len(data) != size:
            raise ShapeError(f"shape {shape} needs {size} elements, data has {len(data)}")
        self.shape = shape
        self.data = data
        self.grad: Optional[array] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._bwd = None

    @property
    def size(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    @property
    def rank(self) -> int:
        return len(self.shape)

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return self.data[0]

    def tolist(self) -> list:
        def build(shape, offset):
            if len(shape) == 1:
                return [self.data[offset + i] for i in range(shape[0])]
            stride = 1
            for d in shape[1:]:
                stride *= d
            return [build(shape[1:], offset + i * stride) for i in range(shape[0])]

        return build(self.shape, 0)

    def detach(self) -> "Tensor":
        """Same buffer, outside the tape."""
        return Tensor(self.shape, self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def ensure_grad(self) -> array:
        if self.grad is None:
            self.grad = _zeros_buf(self.size)
        return self.grad

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(values: Iterable[float], shape: Optional[Sequence[int]] = None,
           requires_grad: bool = False) -> Tensor:
    """Build a tensor from a flat iterable (or nested lists when shape is None)."""
    if shape is None:
        shape = []
        probe = values
        while isinstance(probe, (list, tuple)):
            shape.append(len(probe))
            probe = probe[0]

        def flatten(v):
            if isinstance(v, (list, tuple)):
                for item in v:
                    yield from flatten(item)
            else:
                yield float(v)

        data = array("d", flatten(values))
    else:
        data = array("d", (float(v) for v in values))
    t = Tensor(shape, data, requires_grad=requires_grad)
    if not backend.active.all_finite(t.size, t.data):
        raise ValueError("tensor initialized with non-finite values")
    return t


def zeros(shape: Sequence[int], requires_grad: bool = False) -> Tensor:
    return Tensor(shape, _zeros_buf(_check_shape(tuple(shape))), requires_grad=requires_grad)


def full(shape: Sequence[int], value: float, requires_grad: bool = False) -> Tensor:
    t = zeros(shape, requires_grad)
    backend.active.fill(t.size, float(value), t.data)
    return t


def scalar(value: float, requires_grad: bool = False) -> Tensor:
    return tensor([value], (1,), requires_grad=requires_grad)


def moments_population(x: Tensor) -> tuple[float, float]:
    """(mean, population std) of all elements; divisor is N, not N-1."""
    import math

    n = x.size
    mean = backend.active.total_sum(n, x.data) / n
    acc = 0.0
    for i in range(n):
        d = x.data[i] - mean
        acc += d * d
    return mean, math.sqrt(acc / n)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every participating leaf's grad."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return  # constant: no inputs participated, nothing to write

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    # transient grads for interior nodes; leaves accumulate into .grad
    grads: dict[int, array] = {id(loss): array("d", [1.0])}

    def gbuf(t: Tensor) -> array:
        g = grads.get(id(t))
        if g is None:
            g = _zeros_buf(t.size)
            grads[id(t)] = g
        return g

    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None:
            continue
        if node._bwd is not None:
            node._bwd(g, gbuf)
        elif not node._parents:
            backend.active.axpy(node.size, 1.0, g, node.ensure_grad())
        grads.pop(id(node), None)
