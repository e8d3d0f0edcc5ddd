import logging
from abc import ABC, abstractmethod
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..tensor import ops
from ..tensor.ops import ConvSpec, RunningStats
from ..tensor.tensor import DTYPE, Parameter, Tensor


class Module(ABC):
    """Container of parameters, BN running statistics and child modules.

    Registration order is preserved, so ``named_parameters`` yields a stable
    ordering that checkpoints and the optimizer rely on.
    """

    def __init__(self):
        self._parameters: Dict[str, Parameter] = {}
        self._buffers: Dict[str, RunningStats] = {}
        self._modules: Dict[str, "Module"] = {}
        self.training = True

    def register_parameter(self, name: str, param: Parameter) -> Parameter:
        self._parameters[name] = param
        return param

    def register_buffer(self, name: str, stats: RunningStats) -> RunningStats:
        self._buffers[name] = stats
        return stats

    def register_module(self, name: str, module: Optional["Module"]) -> Optional["Module"]:
        if module is not None:
            self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._parameters.items():
            yield f"{prefix}{name}", param
        for name, module in self._modules.items():
            yield from module.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, RunningStats]]:
        for name, stats in self._buffers.items():
            yield f"{prefix}{name}", stats
        for name, module in self._modules.items():
            yield from module.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for module in self._modules.values():
            yield from module.modules()

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    @abstractmethod
    def forward(self, *args, **kwargs):
        """Run the module on tensors"""
        pass


def he_normal(spec: ConvSpec, rng: np.random.Generator) -> np.ndarray:
    """Fan-in scaled normal init, std = sqrt(2 / fan_in)"""
    return rng.standard_normal(spec.weight_shape) * ops.he_std(spec)


def scalar_parameter(value: float, name: str) -> Parameter:
    """Learnable gating factor; exempt from weight decay"""
    return Parameter(np.full((1,), value, dtype=DTYPE), name=name, decay=False)


class ConvBNReLU(Module):
    """Convolution (same padding) followed by batch normalization and ReLU

    Args:
        in_channels: Input channel count
        out_channels: Output channel count
        rng: Generator drawing the initial weights
        kernel: Square kernel size (1 or 3)
        stride: Convolution stride
        dilation: Dilation rate; padding keeps the extent for stride 1
        bias: Whether the convolution carries its own bias
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        kernel: int = 3,
        stride: int = 1,
        dilation: int = 1,
        bias: bool = False,
    ):
        super().__init__()
        self.spec = ConvSpec(
            in_channels=in_channels,
            out_channels=out_channels,
            kernel=(kernel, kernel),
            stride=stride,
            padding=dilation * (kernel - 1) // 2,
            dilation=dilation,
            bias=bias,
        )
        self.weight = self.register_parameter("weight", Parameter(he_normal(self.spec, rng)))
        self.bias = (
            self.register_parameter("bias", Parameter(np.zeros(out_channels), decay=False))
            if bias
            else None
        )
        self.gamma = self.register_parameter("bn.gamma", Parameter(np.ones(out_channels), decay=False))
        self.beta = self.register_parameter("bn.beta", Parameter(np.zeros(out_channels), decay=False))
        self.stats = self.register_buffer("bn", RunningStats(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        y = ops.conv2d(x, self.weight, self.spec, bias=self.bias)
        y = ops.batchnorm2d(y, self.gamma, self.beta, self.stats, self.training)
        return ops.relu(y)


class Classifier(Module):
    """1x1 convolution with bias producing per-class scores"""

    def __init__(self, in_channels: int, num_classes: int, rng: np.random.Generator):
        super().__init__()
        self.spec = ConvSpec(
            in_channels=in_channels, out_channels=num_classes, kernel=(1, 1), bias=True
        )
        self.weight = self.register_parameter("weight", Parameter(he_normal(self.spec, rng)))
        self.bias = self.register_parameter("bias", Parameter(np.zeros(num_classes), decay=False))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.spec, bias=self.bias)
