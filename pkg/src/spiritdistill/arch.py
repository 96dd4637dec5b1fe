"""Declarative network architectures and the analytic parameter/FLOP profiler.

A network half (extractor or head) is described by an ``ArchitectureSpec``:
an ordered list of stages, each a stem / bottleneck stack / upsampling
decoder block / classifier. Both the torch module builders in
:mod:`spiritdistill.models` and the profiler below derive their convolution
shapes from the same ``*_convs`` helpers, so the analytic counts stay in
lockstep with the instantiated networks (asserted by tests).

FLOP convention: one multiply-accumulate counts as 2 FLOPs. Elementwise ops
(BN, ReLU, residual adds, pooling, bilinear resampling) are counted at a
small per-element cost; convolutions dominate everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterator

GroupRule = str  # "none" | "gcd"

#: Per-output-element FLOP charges for non-convolution ops.
BN_FLOPS_PER_ELEM = 2
RELU_FLOPS_PER_ELEM = 1
ADD_FLOPS_PER_ELEM = 1
BILINEAR_FLOPS_PER_ELEM = 8
MAXPOOL_FLOPS_PER_ELEM = 3  # k=2: three pairwise comparisons


@dataclass(frozen=True)
class ConvShape:
    """Shape of a single convolution, shared by builder and profiler."""

    name: str
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    groups: int
    bias: bool

    @property
    def params(self) -> int:
        w = self.out_channels * (self.in_channels // self.groups) * self.kernel**2
        return w + (self.out_channels if self.bias else 0)


def conv_groups(in_ch: int, out_ch: int, kernel: int, rule: GroupRule,
                shortcut: bool = False) -> int:
    """Group count for a convolution under the given rule.

    Under the "gcd" rule the spatial (k>1) convolutions and the residual
    shortcut projections are split into gcd(in, out) groups. The pointwise
    squeeze/expand convolutions inside bottlenecks stay dense: they are the
    only place channels mix across groups, and grouping them too would cut
    the network into permanently disjoint channel slices.
    """
    if rule == "none":
        return 1
    if rule != "gcd":
        raise ValueError(f"unknown group rule {rule!r}")
    if kernel > 1 or shortcut:
        return math.gcd(in_ch, out_ch)
    return 1


@dataclass(frozen=True)
class StageDef:
    """One stage of a network half.

    kind:
      - "stem":       7x7 stride-2 conv + BN + ReLU + 2x2 maxpool  (out at 1/4)
      - "bottleneck": `repeat` residual bottlenecks, `stride` on the first
      - "upconv":     2x bilinear upsample + `repeat` (3x3 conv + BN + ReLU)
      - "classifier": 1x1 conv to `out_channels` + 2x bilinear upsample
    """

    name: str
    kind: str
    out_channels: int
    repeat: int = 1
    stride: int = 1  # downsampling factor of this stage (upconv/classifier upsample by 2)


@dataclass(frozen=True)
class ArchitectureSpec:
    """An ordered stack of stages plus the grouping rule applied to it."""

    stages: tuple[StageDef, ...]
    in_channels: int
    group_rule: GroupRule = "none"

    @property
    def out_channels(self) -> int:
        return self.stages[-1].out_channels

    @property
    def resolution_factor(self) -> Fraction:
        """Output spatial size as a fraction of the input size."""
        f = Fraction(1)
        for st in self.stages:
            if st.kind == "stem":
                f /= 4
            elif st.kind == "bottleneck":
                f /= st.stride
            else:  # upconv / classifier upsample by 2
                f *= 2
        return f

    @property
    def total_stride(self) -> int:
        f = self.resolution_factor
        if f.numerator != 1:
            raise ValueError("total_stride is only defined for downsampling specs")
        return f.denominator

    def with_group_rule(self, rule: GroupRule) -> "ArchitectureSpec":
        return replace(self, group_rule=rule)

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "group_rule": self.group_rule,
            "stages": [vars(s) for s in self.stages],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        stages = tuple(StageDef(**s) for s in d["stages"])
        return cls(stages=stages, in_channels=d["in_channels"],
                   group_rule=d["group_rule"])


def scaled(channels: int, scale: float) -> int:
    return max(1, round(channels * scale))


def extractor_spec(scale: float = 1.0, repeats: tuple[int, ...] = (3, 4, 6, 3),
                   group_rule: GroupRule = "none") -> ArchitectureSpec:
    """ResNet-50-style front half: stem to 1/4, bottlenecks to 1/8.

    Stage channels follow the 64/256/512/1024/2048 ladder times `scale`.
    Only the first bottleneck stack downsamples; the rest run at 1/8 so the
    output keeps enough spatial detail for dense prediction.
    """
    c = [scaled(ch, scale) for ch in (64, 256, 512, 1024, 2048)]
    stages = (
        StageDef("stage1", "stem", c[0]),
        StageDef("stage2", "bottleneck", c[1], repeat=repeats[0], stride=2),
        StageDef("stage3", "bottleneck", c[2], repeat=repeats[1]),
        StageDef("stage4", "bottleneck", c[3], repeat=repeats[2]),
        StageDef("stage5", "bottleneck", c[4], repeat=repeats[3]),
    )
    return ArchitectureSpec(stages=stages, in_channels=3, group_rule=group_rule)


def head_spec(n_classes: int, in_channels: int, scale: float = 1.0,
              repeats: tuple[int, int] = (3, 4),
              group_rule: GroupRule = "gcd") -> ArchitectureSpec:
    """Decoder head: two conv+BN+ReLU groups with bilinear jumps, 1/8 -> 1.

    The classifier stage carries the only channel change to `n_classes`; the
    listed decoder width (512 at full scale) is shared by both conv groups.
    """
    width = scaled(512, scale)
    stages = (
        StageDef("head1", "upconv", width, repeat=repeats[0]),
        StageDef("head2", "upconv", width, repeat=repeats[1]),
        StageDef("head3", "classifier", n_classes),
    )
    return ArchitectureSpec(stages=stages, in_channels=in_channels,
                            group_rule=group_rule)


# ---------------------------------------------------------------------------
# Convolution shape enumeration (single source of truth for builder/profiler)
# ---------------------------------------------------------------------------

def stem_convs(in_ch: int, out_ch: int, rule: GroupRule) -> list[ConvShape]:
    g = conv_groups(in_ch, out_ch, 7, rule)
    return [ConvShape("conv", in_ch, out_ch, 7, 2, g, bias=False)]


def bottleneck_convs(in_ch: int, out_ch: int, stride: int,
                     rule: GroupRule) -> list[ConvShape]:
    mid = max(1, out_ch // 4)
    convs = [
        ConvShape("conv1", in_ch, mid, 1, 1,
                  conv_groups(in_ch, mid, 1, rule), bias=False),
        ConvShape("conv2", mid, mid, 3, stride,
                  conv_groups(mid, mid, 3, rule), bias=False),
        ConvShape("conv3", mid, out_ch, 1, 1,
                  conv_groups(mid, out_ch, 1, rule), bias=False),
    ]
    if stride != 1 or in_ch != out_ch:
        convs.append(ConvShape("shortcut", in_ch, out_ch, 1, stride,
                               conv_groups(in_ch, out_ch, 1, rule, shortcut=True),
                               bias=False))
    return convs


def upconv_convs(in_ch: int, out_ch: int, repeat: int,
                 rule: GroupRule) -> list[ConvShape]:
    convs = []
    c = in_ch
    for i in range(repeat):
        g = conv_groups(c, out_ch, 3, rule)
        convs.append(ConvShape(f"conv{i + 1}", c, out_ch, 3, 1, g, bias=False))
        c = out_ch
    return convs


def classifier_convs(in_ch: int, n_classes: int) -> list[ConvShape]:
    # Always dense: the class projection must see every channel.
    return [ConvShape("conv", in_ch, n_classes, 1, 1, 1, bias=True)]


def iter_block_convs(spec: ArchitectureSpec) -> Iterator[tuple[StageDef, int, list[ConvShape]]]:
    """Yield (stage, block_index, convs) for every block in the spec."""
    c = spec.in_channels
    for stage in spec.stages:
        if stage.kind == "stem":
            yield stage, 0, stem_convs(c, stage.out_channels, spec.group_rule)
            c = stage.out_channels
        elif stage.kind == "bottleneck":
            for b in range(stage.repeat):
                stride = stage.stride if b == 0 else 1
                yield stage, b, bottleneck_convs(c, stage.out_channels, stride,
                                                 spec.group_rule)
                c = stage.out_channels
        elif stage.kind == "upconv":
            yield stage, 0, upconv_convs(c, stage.out_channels, stage.repeat,
                                         spec.group_rule)
            c = stage.out_channels
        elif stage.kind == "classifier":
            yield stage, 0, classifier_convs(c, stage.out_channels)
            c = stage.out_channels
        else:
            raise ValueError(f"unknown stage kind {stage.kind!r}")


# ---------------------------------------------------------------------------
# Analytic profiling
# ---------------------------------------------------------------------------

@dataclass
class StageProfile:
    name: str
    params: int
    flops: int


@dataclass
class ModelProfile:
    """Analytic parameter and FLOP counts at a stated input resolution."""

    param_count: int
    flops: int
    input_resolution: tuple[int, int]
    stages: list[StageProfile] = field(default_factory=list)

    @property
    def gflops(self) -> float:
        return self.flops / 1e9

    @property
    def params_m(self) -> float:
        return self.param_count / 1e6

    def to_dict(self) -> dict:
        return {
            "param_count": self.param_count,
            "flops": self.flops,
            "gflops": self.gflops,
            "params_m": self.params_m,
            "input_resolution": list(self.input_resolution),
            "stages": [vars(s) for s in self.stages],
        }


def _bn_params(channels: int) -> int:
    return 2 * channels  # scale + shift; running stats are buffers


def _profile_stage(stage: StageDef, in_ch: int, h: int, w: int,
                   rule: GroupRule) -> tuple[StageProfile, int, int, int]:
    params = 0
    flops = 0
    c = in_ch

    def conv_cost(shape: ConvShape, oh: int, ow: int) -> tuple[int, int]:
        p = shape.params
        f = 2 * oh * ow * shape.out_channels * (shape.in_channels // shape.groups) \
            * shape.kernel**2
        if shape.bias:
            f += oh * ow * shape.out_channels
        return p, f

    if stage.kind == "stem":
        (shape,) = stem_convs(c, stage.out_channels, rule)
        ch, cw = h // 2, w // 2
        p, f = conv_cost(shape, ch, cw)
        params += p + _bn_params(stage.out_channels)
        flops += f + ch * cw * stage.out_channels * (BN_FLOPS_PER_ELEM + RELU_FLOPS_PER_ELEM)
        h, w = ch // 2, cw // 2
        flops += h * w * stage.out_channels * MAXPOOL_FLOPS_PER_ELEM
        c = stage.out_channels
    elif stage.kind == "bottleneck":
        for b in range(stage.repeat):
            stride = stage.stride if b == 0 else 1
            oh, ow = h // stride, w // stride
            for shape in bottleneck_convs(c, stage.out_channels, stride, rule):
                # conv1 runs at the incoming resolution; all others at the output
                sh, sw = (h, w) if shape.name == "conv1" else (oh, ow)
                p, f = conv_cost(shape, sh, sw)
                params += p + _bn_params(shape.out_channels)
                flops += f + sh * sw * shape.out_channels * BN_FLOPS_PER_ELEM
                if shape.name in ("conv1", "conv2"):
                    flops += sh * sw * shape.out_channels * RELU_FLOPS_PER_ELEM
            # residual add + trailing ReLU
            flops += oh * ow * stage.out_channels * (ADD_FLOPS_PER_ELEM + RELU_FLOPS_PER_ELEM)
            h, w = oh, ow
            c = stage.out_channels
    elif stage.kind == "upconv":
        h, w = h * 2, w * 2
        flops += h * w * c * BILINEAR_FLOPS_PER_ELEM
        for shape in upconv_convs(c, stage.out_channels, stage.repeat, rule):
            p, f = conv_cost(shape, h, w)
            params += p + _bn_params(shape.out_channels)
            flops += f + h * w * shape.out_channels * (BN_FLOPS_PER_ELEM + RELU_FLOPS_PER_ELEM)
        c = stage.out_channels
    elif stage.kind == "classifier":
        (shape,) = classifier_convs(c, stage.out_channels)
        p, f = conv_cost(shape, h, w)
        params += p
        flops += f
        h, w = h * 2, w * 2
        flops += h * w * stage.out_channels * BILINEAR_FLOPS_PER_ELEM
        c = stage.out_channels
    else:
        raise ValueError(f"unknown stage kind {stage.kind!r}")

    return StageProfile(stage.name, params, flops), c, h, w


def profile_specs(specs: list[ArchitectureSpec],
                  input_resolution: tuple[int, int]) -> ModelProfile:
    """Profile a chain of specs (e.g. extractor then head) analytically."""
    h, w = input_resolution
    stride = math.prod(
        4 if st.kind == "stem" else st.stride
        for sp in specs for st in sp.stages if st.kind in ("stem", "bottleneck")
    )
    if h % stride or w % stride:
        raise ValueError(
            f"input resolution {input_resolution} not divisible by total stride {stride}")
    stages: list[StageProfile] = []
    c = specs[0].in_channels
    for spec in specs:
        if spec.in_channels != c:
            raise ValueError(
                f"spec expects {spec.in_channels} input channels, got {c}")
        for stage in spec.stages:
            sp, c, h, w = _profile_stage(stage, c, h, w, spec.group_rule)
            stages.append(sp)
    return ModelProfile(
        param_count=sum(s.params for s in stages),
        flops=sum(s.flops for s in stages),
        input_resolution=input_resolution,
        stages=stages,
    )
