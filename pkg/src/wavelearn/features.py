"""Per-band local feature extraction.

A short stack of dilated convolution blocks (conv, instance norm, leaky
activation) followed by width-wise attention that scores every position with
a kernel-size-1 convolution over the feature map blended with its global
mean context.  No pooling anywhere: for stride-1 blocks the output width is
W minus the total dilated kernel span.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError


@dataclass
class ConvBlockParams:
    weight: Tensor
    bias: Tensor
    in_gamma: Tensor
    in_beta: Tensor
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    leaky_slope: float = 0.01
    in_eps: float = 1e-5

    @classmethod
    def init(cls, in_channels, out_channels, kernel, rng, dilation=1, stride=1,
             padding=0, leaky_slope=0.01, in_eps=1e-5):
        scale = (2.0 / (in_channels * kernel)) ** 0.5
        return cls(
            weight=ad.parameter(rng.normal(0.0, scale, size=(out_channels, in_channels, kernel))),
            bias=ad.parameter(rng.normal(0.0, 0.01, size=(out_channels,))),
            in_gamma=ad.parameter(np.ones(out_channels)),
            in_beta=ad.parameter(np.zeros(out_channels)),
            stride=stride,
            dilation=dilation,
            padding=padding,
            leaky_slope=leaky_slope,
            in_eps=in_eps,
        )

    def tensors(self):
        return [self.weight, self.bias, self.in_gamma, self.in_beta]


def conv_block(x, p):
    """leaky_relu(instance_norm(conv1d(x))) with the block's parameters."""
    y = ad.conv1d(x, p.weight, p.bias, stride=p.stride, dilation=p.dilation,
                  padding=p.padding)
    y = ad.instance_norm(y, p.in_gamma, p.in_beta, eps=p.in_eps)
    return ad.leaky_relu(y, p.leaky_slope)


@dataclass
class SpatialAttentionParams:
    score_weight: Tensor  # (1, C, 1) kernel-size-1 convolution
    score_bias: Tensor

    @classmethod
    def init(cls, channels, rng):
        scale = (1.0 / channels) ** 0.5
        return cls(
            score_weight=ad.parameter(rng.normal(0.0, scale, size=(1, channels, 1))),
            score_bias=ad.parameter(rng.normal(0.0, 0.01, size=(1,))),
        )

    def tensors(self):
        return [self.score_weight, self.score_bias]


class AttentionResult(NamedTuple):
    summary: Tensor  # (batch, C) width-summed weighted map
    weighted: Tensor  # (batch, C, W) attention-weighted feature map
    weights: Tensor  # (batch, 1, W) probability distribution over width


def spatial_attention(l, p):
    """Width attention over a feature map.

    The global context is the width-wise mean of the map; the score map comes
    from a width-1 convolution of map + context, softmax-normalized over
    width.  Returns the weighted map, the weights, and their width sum.
    """
    if p.score_weight.data.shape[2] != 1:
        raise DimensionError("spatial attention kernel width must be 1")
    context = ad.reduce_mean(l, axis=2, keepdims=True)
    combined = ad.add(l, context)
    scores = ad.conv1d(combined, p.score_weight, p.score_bias)
    weights = ad.softmax(scores, axis=2)
    weighted = ad.mul(weights, l)
    summary = ad.reduce_sum(weighted, axis=2)
    return AttentionResult(summary=summary, weighted=weighted, weights=weights)


@dataclass
class BandPipelineParams:
    """The shared conv stack plus attention applied to every frequency band."""

    blocks: list
    attention: SpatialAttentionParams

    @classmethod
    def init(cls, channels, kernel, dilations, rng, strides=None, paddings=None,
             leaky_slope=0.01, in_eps=1e-5):
        strides = strides or (1,) * len(dilations)
        paddings = paddings or (0,) * len(dilations)
        blocks = []
        c_in = 1
        for d, s, p in zip(dilations, strides, paddings):
            blocks.append(
                ConvBlockParams.init(
                    c_in, channels, kernel, rng, dilation=d, stride=s, padding=p,
                    leaky_slope=leaky_slope, in_eps=in_eps,
                )
            )
            c_in = channels
        return cls(blocks=blocks, attention=SpatialAttentionParams.init(channels, rng))

    def tensors(self):
        out = []
        for b in self.blocks:
            out.extend(b.tensors())
        out.extend(self.attention.tensors())
        return out


def band_features(band, blocks, attention):
    """Conv stack then spatial attention for one (batch, 1, W) band.

    Returns the attention-weighted feature sequence that feeds the sequence
    encoder, and the width-summed summary vector.
    """
    x = band
    for p in blocks:
        x = conv_block(x, p)
    result = spatial_attention(x, attention)
    return result.weighted, result.summary
