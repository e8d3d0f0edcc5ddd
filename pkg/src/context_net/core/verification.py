"""Finite-difference suites for primitives, context modules and whole networks."""

import logging
from typing import Callable, Dict, List

import numpy as np

from ..tensor import ops
from ..tensor.gradcheck import GradCheckReport, grad_check
from ..tensor.ops import ConvSpec, RunningStats
from ..tensor.tensor import Parameter, Tensor
from ..utils.config import BackboneConfig, NetworkConfig
from .context_modules import AdaptiveContextBlock, GlobalContextModule, LocalContextModule
from .gates import FrozenOffsets, compute_distance_map, compute_global_gate, compute_local_gate
from .network import build_model

SCOPES = ("op", "module", "network")

Check = Callable[[np.random.Generator, int], GradCheckReport]


def _tensor(rng: np.random.Generator, *shape: int, low: float = -1.0, high: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape))


def _param(rng: np.random.Generator, *shape: int) -> Parameter:
    return Parameter(rng.standard_normal(shape) * 0.5)


def _conv_check(stride: int, padding: int, dilation: int, bias: bool) -> Check:
    def check(rng, seed):
        spec = ConvSpec(
            in_channels=3, out_channels=4, kernel=(3, 3), stride=stride,
            padding=padding, dilation=dilation, bias=bias,
        )
        x = _tensor(rng, 2, 3, 7, 7)
        w = _param(rng, *spec.weight_shape)
        inputs = [x, w]
        b = None
        if bias:
            b = _param(rng, 4)
            inputs.append(b)
        return grad_check(
            lambda: ops.conv2d(x, w, spec, bias=b), inputs, seed=seed,
            target=f"conv2d(s={stride},p={padding},d={dilation},bias={bias})",
        )

    return check


def _batchnorm_check(training: bool) -> Check:
    def check(rng, seed):
        x = _tensor(rng, 2, 4, 6, 6, low=-3.0, high=3.0)
        gamma = Parameter(rng.uniform(0.5, 1.5, size=4))
        beta = Parameter(rng.uniform(-0.5, 0.5, size=4))
        state = RunningStats(4)
        state.mean = rng.uniform(-0.2, 0.2, size=4)
        state.var = rng.uniform(0.5, 1.5, size=4)
        mode = "train" if training else "eval"
        return grad_check(
            lambda: ops.batchnorm2d(x, gamma, beta, state, training), [x, gamma, beta],
            seed=seed, target=f"batchnorm2d({mode})",
        )

    return check


def _unary_check(name: str, fn: Callable[[Tensor], Tensor], shape=(2, 3, 4, 5)) -> Check:
    def check(rng, seed):
        x = _tensor(rng, *shape)
        return grad_check(lambda: fn(x), x, seed=seed, target=name)

    return check


def _binary_check(name: str, fn, shape_a, shape_b) -> Check:
    def check(rng, seed):
        a = _tensor(rng, *shape_a)
        b = _tensor(rng, *shape_b)
        return grad_check(lambda: fn(a, b), [a, b], seed=seed, target=name)

    return check


def _scale_check(rng, seed) -> GradCheckReport:
    a = _tensor(rng, 2, 3, 4, 4)
    factor = Parameter(np.array([0.7]))
    return grad_check(lambda: ops.scale(a, factor), [a, factor], seed=seed, target="scale")


OP_CHECKS: Dict[str, Check] = {
    "conv2d": _conv_check(1, 1, 1, False),
    "conv2d_strided": _conv_check(2, 1, 1, True),
    "conv2d_dilated": _conv_check(1, 2, 2, False),
    "conv2d_multigrid": _conv_check(1, 4, 4, False),
    "batchnorm2d_train": _batchnorm_check(True),
    "batchnorm2d_eval": _batchnorm_check(False),
    "relu": _unary_check("relu", ops.relu),
    "exp": _unary_check("exp", ops.exp),
    "global_avg_pool": _unary_check("global_avg_pool", ops.global_avg_pool),
    "bilinear_upsample": _unary_check(
        "bilinear_upsample", lambda x: ops.bilinear_upsample(x, 7, 9), shape=(2, 2, 3, 4)
    ),
    "slice_channels": _unary_check("slice_channels", lambda x: ops.split_channels(x, 1)[1]),
    "channel_norm": _unary_check("channel_norm", lambda x: ops.channel_norm(x, 1e-12)),
    "sum_all": _unary_check("sum_all", ops.sum_all),
    "add_scalar": _unary_check("add_scalar", lambda x: ops.add(x, 2.5)),
    "concat_channels": _binary_check("concat_channels", ops.concat_channels, (2, 2, 3, 3), (2, 3, 3, 3)),
    "add": _binary_check("add", ops.add, (2, 3, 4, 4), (2, 3, 1, 1)),
    "sub": _binary_check("sub", ops.sub, (2, 3, 4, 4), (2, 1, 4, 4)),
    "mul": _binary_check("mul", ops.mul, (2, 1, 4, 4), (2, 3, 1, 1)),
    "scale": _scale_check,
}


def _distance_check(rng, seed) -> GradCheckReport:
    A = _tensor(rng, 2, 4, 5, 5)
    p = _tensor(rng, 2, 4, 1, 1)
    return grad_check(lambda: compute_distance_map(A, p), [A, p], seed=seed, target="distance_map")


def _global_gate_check(rng, seed) -> GradCheckReport:
    D = _tensor(rng, 2, 1, 5, 5, low=0.0, high=4.0)
    return grad_check(
        lambda: compute_global_gate(D, 2.0).values, D, seed=seed,
        target="global_gate", context=FrozenOffsets(),
    )


def _local_gate_check(rng, seed) -> GradCheckReport:
    D = _tensor(rng, 2, 1, 3, 3, low=0.0, high=4.0)
    return grad_check(
        lambda: compute_local_gate(compute_global_gate(D, 2.0), 6, 6).values, D,
        seed=seed, target="local_gate", context=FrozenOffsets(),
    )


def _gcm_check(rng, seed) -> GradCheckReport:
    gcm = GlobalContextModule(4, rng, delta=2.0)
    A = _tensor(rng, 2, 4, 5, 5)
    inputs = [A, gcm.alpha, gcm.reduce.weight]
    return grad_check(
        lambda: gcm(A)[0], inputs, seed=seed, target="gcm", context=FrozenOffsets(),
    )


def _lcm_check(rng, seed) -> GradCheckReport:
    lcm = LocalContextModule(3, 4, 5, rng, reduced_channels=3, reuse_count=3)
    low = _tensor(rng, 2, 3, 6, 6)
    E = _tensor(rng, 2, 4, 6, 6)
    gate = compute_local_gate(compute_global_gate(_tensor(rng, 2, 1, 3, 3, low=0.0, high=3.0), 2.0), 6, 6)
    inputs = [low, E, lcm.beta, lcm.fuse_convs[0].weight, lcm.fuse_convs[-1].weight]
    return grad_check(
        lambda: lcm(lcm.lowlevel_reduce(low), E, gate), inputs, seed=seed, target="lcm",
    )


def _acb_check(with_lcm: bool) -> Check:
    def check(rng, seed):
        block = AdaptiveContextBlock(
            4, rng, delta=2.0,
            low_channels=3 if with_lcm else None, out_channels=5,
            reduced_channels=3, reuse_count=2,
        )
        high = _tensor(rng, 2, 4, 3, 3)
        low = _tensor(rng, 2, 3, 6, 6) if with_lcm else None
        inputs = [high, block.gcm.alpha, block.gcm.reduce.weight]
        if with_lcm:
            inputs += [low, block.lcm.beta, block.lcm.lowlevel_reduce.weight]
        return grad_check(
            lambda: block(high, low)[0], inputs, seed=seed,
            target="acb" if with_lcm else "acb(gcm only)", context=FrozenOffsets(),
        )

    return check


MODULE_CHECKS: Dict[str, Check] = {
    "distance_map": _distance_check,
    "global_gate": _global_gate_check,
    "local_gate": _local_gate_check,
    "gcm": _gcm_check,
    "lcm": _lcm_check,
    "acb": _acb_check(True),
    "acb_gcm_only": _acb_check(False),
}


def tiny_network_config(model: str = "acnet") -> NetworkConfig:
    """Narrow network used by the whole-graph gradient check"""
    return NetworkConfig(
        model=model,
        backbone=BackboneConfig(stem_channels=4, stage_channels=[4, 6, 8, 8]),
        head_channels=8,
        acb_channels=(8, 6),
        lowlevel_channels=4,
        aux_channels=4,
        num_classes=3,
        reuse_count=2,
        delta=2.0,
    )


def _network_check(model_name: str) -> Check:
    def check(rng, seed):
        model = build_model(tiny_network_config(model_name), rng)
        image = _tensor(rng, 2, 3, 32, 32, low=0.0, high=1.0)
        named = dict(model.named_parameters())
        picked = [name for name in named if name.endswith(("alpha", "beta", "classifier.weight", "stem.weight"))]
        inputs = [image] + [named[name] for name in picked if not name.endswith("bn.beta")]

        def fn() -> Tensor:
            out = model(image)
            if out.aux_logits is None:
                return out.logits
            return ops.add(out.logits, ops.scale(out.aux_logits, 0.4))

        return grad_check(
            fn, inputs, seed=seed, max_coords=16, target=f"network({model_name})",
            context=FrozenOffsets(),
        )

    return check


NETWORK_CHECKS: Dict[str, Check] = {
    "acnet": _network_check("acnet"),
    "fcn": _network_check("fcn"),
}

SUITES: Dict[str, Dict[str, Check]] = {
    "op": OP_CHECKS,
    "module": MODULE_CHECKS,
    "network": NETWORK_CHECKS,
}


def run_verification(scope: str, seed: int = 0) -> List[GradCheckReport]:
    """Run every check of ``scope`` and return one report per target

    Raises:
        ValueError: For an unknown scope
    """
    if scope not in SUITES:
        raise ValueError(f"Unknown scope: {scope}. Choose from {', '.join(SCOPES)}")
    logger = logging.getLogger("GradChecker")
    reports = []
    for index, (name, check) in enumerate(SUITES[scope].items()):
        rng = np.random.default_rng([seed, index])
        report = check(rng, seed)
        logger.info(report.summary())
        reports.append(report)
    return reports
