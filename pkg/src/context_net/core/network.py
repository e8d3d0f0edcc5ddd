import logging
from typing import Dict, List, Optional, Tuple, Type

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..tensor import ops
from ..tensor.tensor import GeometryError, Tensor
from ..utils.config import BackboneConfig, NetworkConfig
from .context_modules import AdaptiveContextBlock, GlobalContextModule
from .gates import GateField
from .layers import Classifier, ConvBNReLU, Module

OUTPUT_STRIDE = 16


class NetworkOutput(BaseModel):
    """Result of a segmentation forward pass

    Attributes:
        logits: (n, num_classes, H, W) class scores at input resolution
        aux_logits: Auxiliary-head scores at input resolution, if enabled
        gates: Global gate of every context block, coarsest first
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    logits: Tensor
    aux_logits: Optional[Tensor] = None
    gates: List[GateField] = []


class Backbone(Module):
    """Plain conv-BN-ReLU stages at output stride 16 or 8.

    Stem and stages 1-2 each halve the resolution on their first conv. At
    output stride 16 stage 3 halves it once more and the last stage keeps
    1/16 with dilated convs. At output stride 8 stage 3 keeps 1/8 with
    dilation 2 and the last stage's rates are doubled.
    """

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, bias: bool = False):
        super().__init__()
        c1, c2, c3, c4 = cfg.stage_channels
        self.output_stride = cfg.output_stride
        rate = OUTPUT_STRIDE // self.output_stride
        stride3 = 2 if rate == 1 else 1
        self.stem = self.register_module("stem", ConvBNReLU(3, cfg.stem_channels, rng, stride=2, bias=bias))
        self.stage1 = self._stage("stage1", [(cfg.stem_channels, c1, 2, 1), (c1, c1, 1, 1)], rng, bias)
        self.stage2 = self._stage("stage2", [(c1, c2, 2, 1), (c2, c2, 1, 1)], rng, bias)
        self.stage3 = self._stage("stage3", [(c2, c3, stride3, rate), (c3, c3, 1, rate)], rng, bias)
        d1, d2, d3 = (d * rate for d in cfg.last_stage_dilations)
        self.stage4 = self._stage(
            "stage4", [(c3, c4, 1, d1), (c4, c4, 1, d2), (c4, c4, 1, d3)], rng, bias
        )
        self.channels = (c1, c2, c3, c4)

    def _stage(self, name, layers, rng, bias) -> List[ConvBNReLU]:
        convs = []
        for i, (cin, cout, stride, dilation) in enumerate(layers):
            conv = ConvBNReLU(cin, cout, rng, stride=stride, dilation=dilation, bias=bias)
            convs.append(self.register_module(f"{name}.{i}", conv))
        return convs

    @staticmethod
    def _run(convs: List[ConvBNReLU], x: Tensor) -> Tensor:
        for conv in convs:
            x = conv(x)
        return x

    def forward(self, image: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        """Return (f1, f2, f4) at 1/4, 1/8 and 1/output_stride resolution

        Raises:
            GeometryError: If the image sides are not multiples of 16
        """
        h, w = image.shape[2], image.shape[3]
        if h % OUTPUT_STRIDE or w % OUTPUT_STRIDE or h == 0 or w == 0:
            raise GeometryError(f"Input {h}x{w} is not divisible by {OUTPUT_STRIDE}; pad it first")
        x = self.stem(image)
        f1 = self._run(self.stage1, x)
        f2 = self._run(self.stage2, f1)
        f3 = self._run(self.stage3, f2)
        f4 = self._run(self.stage4, f3)
        return f1, f2, f4


class AuxHead(Module):
    """3x3 conv + classifier on the 1/16 backbone feature"""

    def __init__(self, in_channels: int, channels: int, num_classes: int, rng: np.random.Generator, bias: bool = False):
        super().__init__()
        self.conv = self.register_module("conv", ConvBNReLU(in_channels, channels, rng, bias=bias))
        self.classifier = self.register_module("classifier", Classifier(channels, num_classes, rng))

    def forward(self, f4: Tensor, out_h: int, out_w: int) -> Tensor:
        return ops.bilinear_upsample(self.classifier(self.conv(f4)), out_h, out_w)


class SegmentationModel(Module):
    """Backbone, 3x3 reduction to ``head_channels`` and optional auxiliary head"""

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.backbone = self.register_module("backbone", Backbone(cfg.backbone, rng, bias=cfg.conv_bias))
        c4 = self.backbone.channels[3]
        self.reduce = self.register_module(
            "reduce", ConvBNReLU(c4, cfg.head_channels, rng, bias=cfg.conv_bias)
        )
        self.aux_head: Optional[AuxHead] = None

    def _attach_aux(self, rng: np.random.Generator) -> None:
        # Registered last so the main path owns the leading parameter names
        if self.cfg.aux_enabled:
            c4 = self.backbone.channels[3]
            self.aux_head = self.register_module(
                "aux_head", AuxHead(c4, self.cfg.aux_channels, self.cfg.num_classes, rng, bias=self.cfg.conv_bias)
            )

    def _aux(self, f4: Tensor, out_h: int, out_w: int) -> Optional[Tensor]:
        if self.aux_head is None:
            return None
        return self.aux_head(f4, out_h, out_w)


class DilatedFCN(SegmentationModel):
    """Baseline: backbone, reduction conv, 1x1 classifier at 1/16 or 1/8, bilinear to input size"""

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        super().__init__(cfg, rng)
        self.classifier = self.register_module("classifier", Classifier(cfg.head_channels, cfg.num_classes, rng))
        self._attach_aux(rng)

    def forward(self, image: Tensor) -> NetworkOutput:
        out_h, out_w = image.shape[2], image.shape[3]
        _, _, f4 = self.backbone(image)
        logits = ops.bilinear_upsample(self.classifier(self.reduce(f4)), out_h, out_w)
        return NetworkOutput(logits=logits, aux_logits=self._aux(f4, out_h, out_w), gates=[])


class ACNet(SegmentationModel):
    """Backbone followed by cascaded adaptive context blocks.

    Block 1 refines 1/16 -> 1/8 with the stage-2 feature, block 2 refines
    1/8 -> 1/4 with the stage-1 feature, block 3 is a GCM at 1/4 followed by
    a x2 upsample. The 1x1 classifier runs on the last block's output and is
    bilinearly upsampled to the input size. ``num_blocks`` truncates the
    cascade; ``gcm_only`` replaces it by a single GCM at 1/16.
    """

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        super().__init__(cfg, rng)
        c1, c2, _, _ = self.backbone.channels
        self.blocks: List[AdaptiveContextBlock] = []
        self.gcm: Optional[GlobalContextModule] = None

        if cfg.gcm_only:
            self.gcm = self.register_module(
                "gcm",
                GlobalContextModule(cfg.head_channels, rng, delta=cfg.delta, gate_mode=cfg.gate_mode, bias=cfg.conv_bias),
            )
            width = cfg.head_channels
        else:
            lows = [c2, c1, None]
            outs = [cfg.acb_channels[0], cfg.acb_channels[1], None]
            width = cfg.head_channels
            for k in range(cfg.num_blocks):
                block = AdaptiveContextBlock(
                    width,
                    rng,
                    delta=cfg.delta,
                    low_channels=lows[k],
                    out_channels=outs[k],
                    reduced_channels=cfg.lowlevel_channels,
                    reuse_count=cfg.reuse_count,
                    gate_mode=cfg.gate_mode,
                    local_gating=cfg.local_gating,
                    bias=cfg.conv_bias,
                )
                self.blocks.append(self.register_module(f"acb{k + 1}", block))
                width = block.out_channels

        self.classifier = self.register_module("classifier", Classifier(width, cfg.num_classes, rng))
        self._attach_aux(rng)

    def forward(self, image: Tensor, gated: bool = True) -> NetworkOutput:
        """``gated=False`` runs the same weights with every gating term removed"""
        out_h, out_w = image.shape[2], image.shape[3]
        f1, f2, f4 = self.backbone(image)
        x = self.reduce(f4)
        gates: List[GateField] = []
        if self.gcm is not None:
            x, gate = self.gcm(x, gated=gated)
            gates.append(gate)
        else:
            lows = [f2, f1, None]
            for block, low in zip(self.blocks, lows):
                x, gate = block(x, low, gated=gated)
                gates.append(gate)
        logits = ops.bilinear_upsample(self.classifier(x), out_h, out_w)
        return NetworkOutput(logits=logits, aux_logits=self._aux(f4, out_h, out_w), gates=gates)


MODEL_REGISTRY: Dict[str, Type[SegmentationModel]] = {
    "acnet": ACNet,
    "fcn": DilatedFCN,
}


def build_model(cfg: NetworkConfig, rng: np.random.Generator) -> SegmentationModel:
    """Instantiate the model named by ``cfg.model``"""
    if cfg.model not in MODEL_REGISTRY:
        raise ValueError(f"Unknown model: {cfg.model}")
    model = MODEL_REGISTRY[cfg.model](cfg, rng)
    logging.getLogger(__name__).info(
        f"Built {cfg.model} with {model.num_parameters()} parameters"
    )
    return model


def backbone_forward(image: Tensor, backbone: Backbone) -> Tuple[Tensor, Tensor, Tensor]:
    return backbone(image)


def acnet_forward(image: Tensor, model: ACNet) -> Tuple[Tensor, Optional[Tensor], List[GateField]]:
    out = model(image)
    return out.logits, out.aux_logits, out.gates


def fcn_baseline_forward(image: Tensor, model: DilatedFCN) -> Tensor:
    return model(image).logits
