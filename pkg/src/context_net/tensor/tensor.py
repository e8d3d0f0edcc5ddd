import logging
import threading
from abc import ABC, abstractmethod
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

DTYPE = np.float64


class TensorError(Exception):
    """Base exception for tensor-engine errors"""

    pass


class DimensionError(TensorError):
    """Raised when operand shapes or channel counts do not agree"""

    pass


class GeometryError(TensorError):
    """Raised when a spatial extent is empty or a resolution contract is violated"""

    pass


class TapeError(TensorError):
    """Raised when the tape is replayed in an invalid state"""

    pass


class Tensor:
    """Dense real array with an optional gradient buffer.

    Feature maps are rank-4 ``(batch, channels, height, width)`` in row-major
    order. Parameters (biases, BN affine vectors, scalar factors) use the same
    type with their natural rank.

    Args:
        data: Array-like payload, stored at double precision
        requires_grad: Whether backward should produce a gradient for this tensor
        name: Optional label used in reports and checkpoints
    """

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=DTYPE))
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise DimensionError(
                f"Gradient shape {grad.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = np.array(grad, dtype=DTYPE, copy=True)
        else:
            self.grad = self.grad + grad

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    @classmethod
    def zeros(cls, shape: Sequence[int], requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(tuple(shape), dtype=DTYPE), requires_grad=requires_grad)

    @classmethod
    def ones(cls, shape: Sequence[int], requires_grad: bool = False) -> "Tensor":
        return cls(np.ones(tuple(shape), dtype=DTYPE), requires_grad=requires_grad)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


class Parameter(Tensor):
    """Learnable tensor. ``decay`` marks whether weight decay applies to it."""

    def __init__(self, data: Any, name: Optional[str] = None, decay: bool = True):
        super().__init__(data, requires_grad=True, name=name)
        self.decay = decay


class Context:
    """Intermediates a primitive keeps between its forward and backward pass"""

    pass


class Node:
    """One recorded primitive application"""

    __slots__ = ("primitive", "inputs", "output", "ctx")

    def __init__(self, primitive: "Primitive", inputs: Sequence[Tensor], output: Tensor, ctx: Context):
        self.primitive = primitive
        self.inputs = tuple(inputs)
        self.output = output
        self.ctx = ctx


_local = threading.local()


def _tape_stack() -> List["Tape"]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> Optional["Tape"]:
    """Innermost tape entered on the calling thread, if any"""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive applications on one thread.

    Entering the tape starts a new forward pass; ``backward`` replays the
    recorded nodes in reverse order exactly once.
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self._consumed = False
        self.logger = logging.getLogger("Tape")

    def __enter__(self) -> "Tape":
        self.nodes = []
        self._consumed = False
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, node: Node) -> None:
        if self._consumed:
            raise TapeError("Cannot record on a tape that was already replayed; enter it again")
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Node]:
        return iter(self.nodes)

    def backward(self, output: Tensor, grad: Optional[np.ndarray] = None) -> None:
        """Propagate gradients from ``output`` to every leaf that requires them.

        Args:
            output: Tensor produced by a recorded node
            grad: Seed gradient, defaults to ones of ``output``'s shape

        Raises:
            TapeError: If the tape was already replayed or never recorded ``output``
        """
        if self._consumed:
            raise TapeError("backward called twice without a new forward pass")

        produced = {id(node.output) for node in self.nodes}
        if id(output) not in produced:
            raise TapeError("Output tensor was not produced on this tape")

        seed = np.ones_like(output.data) if grad is None else np.asarray(grad, dtype=DTYPE)
        if seed.shape != output.shape:
            raise DimensionError(f"Seed gradient shape {seed.shape} != output shape {output.shape}")

        pending: Dict[int, np.ndarray] = {id(output): seed}
        self.logger.debug(f"Replaying {len(self.nodes)} nodes")

        for node in reversed(self.nodes):
            grad_out = pending.pop(id(node.output), None)
            if grad_out is None:
                continue
            input_grads = node.primitive.backward(node.ctx, grad_out)
            for tensor, input_grad in zip(node.inputs, input_grads):
                if input_grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in produced:
                    pending[key] = pending[key] + input_grad if key in pending else input_grad
                else:
                    tensor.accumulate_grad(input_grad)

        self._consumed = True


class Primitive(ABC):
    """Differentiable operation on tensors.

    Subclasses implement ``forward`` on raw arrays and ``backward`` returning
    one gradient (or ``None``) per tensor input. Non-tensor arguments are
    passed as keyword attributes.
    """

    name = "primitive"

    @abstractmethod
    def forward(self, ctx: Context, *arrays: np.ndarray, **attrs: Any) -> np.ndarray:
        """Compute the output array, saving intermediates on ``ctx``"""
        pass

    @abstractmethod
    def backward(self, ctx: Context, grad_output: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        """Return gradients with respect to each tensor input"""
        pass

    def __call__(self, *inputs: Tensor, **attrs: Any) -> Tensor:
        ctx = Context()
        data = self.forward(ctx, *[t.data for t in inputs], **attrs)
        requires_grad = any(t.requires_grad for t in inputs)
        out = Tensor(data, requires_grad=requires_grad)
        tape = active_tape()
        if tape is not None and requires_grad:
            tape.record(Node(self, inputs, out, ctx))
        return out

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name})"
