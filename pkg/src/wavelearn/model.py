"""Full network: wavelet front-end, band pipelines, fusion head.

One forward pass maps a raw waveform (one utterance, any admissible length)
to log class probabilities.  Parameters live in a flat name -> tensor
mapping so the optimizer and the checkpoint format stay trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .features import BandPipelineParams, band_features
from .fusion import ChannelWeights, HeadParams, channel_weighting, classify, fuse_bands
from .recurrent import BiGRUStack, TemporalAttentionParams, bigru_forward, temporal_attention
from .wavelet import FrontEndConfig, FrontEndFilters, LAHTParams, frontend_forward

ABLATION_TAGS = (
    "db10",
    "db10+laht",
    "1kernel",
    "1kernel-layerwise",
    "1kernel+laht",
    "1kernel-layerwise+laht",
    "allkernel+laht",
    "allkernel+laht-nogru",
)

_ABLATION_SHARING = {
    "db10": "db10_fixed",
    "db10+laht": "db10_fixed",
    "1kernel": "single_kernel",
    "1kernel-layerwise": "layer_wise",
    "1kernel+laht": "single_kernel",
    "1kernel-layerwise+laht": "layer_wise",
    "allkernel+laht": "all_kernel",
    "allkernel+laht-nogru": "all_kernel",
}


@dataclass
class ModelConfig:
    frontend: FrontEndConfig = field(default_factory=FrontEndConfig)
    conv_channels: int = 16
    conv_kernel: int = 3
    dilations: tuple = (1, 2, 4)
    # strides > 1 in the first blocks shrink the sequences the recurrent
    # encoder has to scan; paddings keep the short low-frequency bands alive
    conv_strides: tuple = (2, 2, 1)
    conv_paddings: tuple = (1, 2, 4)
    leaky_slope: float = 0.01
    in_eps: float = 1e-5
    gru_layers: int = 6
    gru_hidden: int = 16
    dropout: float = 0.2
    bigru_enabled: bool = True
    per_band_params: bool = False
    head_kernel: int = 3
    classes: int = 4


def apply_ablation(cfg, tag):
    """Resolve an ablation tag into sharing / thresholding / encoder flags."""
    if tag is None:
        return cfg
    if tag not in ABLATION_TAGS:
        raise ConfigError(f"unknown ablation tag {tag!r}; known: {ABLATION_TAGS}")
    frontend = replace(
        cfg.frontend,
        sharing=_ABLATION_SHARING[tag],
        laht_enabled="laht" in tag,
    )
    return replace(cfg, frontend=frontend, bigru_enabled="nogru" not in tag)


class Network:
    """Parameter container plus the forward pass."""

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        fe = cfg.frontend
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x5EED)))
        self.filters = FrontEndFilters(fe)
        self.lahts = (
            [LAHTParams.init() for _ in range(fe.levels)] if fe.laht_enabled else None
        )
        bands = fe.levels + 1
        n_pipes = bands if cfg.per_band_params else 1
        self.pipelines = [
            BandPipelineParams.init(
                cfg.conv_channels, cfg.conv_kernel, cfg.dilations, rng,
                strides=cfg.conv_strides, paddings=cfg.conv_paddings,
                leaky_slope=cfg.leaky_slope, in_eps=cfg.in_eps,
            )
            for _ in range(n_pipes)
        ]
        if cfg.bigru_enabled:
            self.stacks = [
                BiGRUStack.init(
                    cfg.gru_layers, cfg.conv_channels, cfg.gru_hidden, cfg.dropout, rng
                )
                for _ in range(n_pipes)
            ]
            self.temporal = [
                TemporalAttentionParams.init(2 * cfg.gru_hidden, rng)
                for _ in range(n_pipes)
            ]
        else:
            self.stacks = []
            self.temporal = []
        self.channel_weights = ChannelWeights.init(bands)
        self.head = HeadParams.init(
            bands, cfg.classes, cfg.head_kernel, rng,
            leaky_slope=cfg.leaky_slope, in_eps=cfg.in_eps,
        )
        self._params = self._collect()

    def _collect(self):
        params = {}

        def put(prefix, tensors):
            for i, t in enumerate(tensors):
                params[f"{prefix}.{i}"] = t

        for i, t in enumerate(self.filters.parameters()):
            params[f"frontend.filter.{i}"] = t
        if self.lahts is not None:
            for level, p in enumerate(self.lahts):
                put(f"frontend.laht.{level}", p.tensors())
        for i, pipe in enumerate(self.pipelines):
            put(f"pipeline.{i}", pipe.tensors())
        for i, stack in enumerate(self.stacks):
            put(f"gru.{i}", stack.parameters())
        for i, att in enumerate(self.temporal):
            put(f"temporal.{i}", att.tensors())
        put("fusion.weights", self.channel_weights.tensors())
        put("head", self.head.tensors())
        return params

    def parameters(self):
        return self._params

    def parameter_count(self):
        return sum(p.data.size for p in self._params.values())

    def load_state(self, state):
        for name, p in self._params.items():
            if name not in state:
                raise ConfigError(f"checkpoint is missing parameter {name!r}")
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ConfigError(
                    f"checkpoint shape {value.shape} != {p.data.shape} for {name!r}"
                )
            p.data = value.copy()

    def state(self):
        return {name: p.data.copy() for name, p in self._params.items()}

    def _band_vector(self, band, index, training, dropout_seed):
        pipe_idx = index if self.cfg.per_band_params else 0
        pipe = self.pipelines[pipe_idx]
        sequence, summary = band_features(band, pipe.blocks, pipe.attention)
        if not self.cfg.bigru_enabled:
            return summary
        states = bigru_forward(
            ad.transpose(sequence, (0, 2, 1)),
            self.stacks[pipe_idx],
            training=training,
            seed=dropout_seed,
        )
        return temporal_attention(states, self.temporal[pipe_idx])

    def forward(self, samples, training=False, dropout_seed=None):
        """Log class probabilities (1, classes) for one waveform."""
        samples = np.asarray(samples, dtype=np.float64).reshape(-1)
        x = Tensor(samples.reshape(1, 1, -1))
        decomp = frontend_forward(x, self.cfg.frontend, self.filters, self.lahts)
        vectors = [
            self._band_vector(band, i, training, dropout_seed)
            for i, band in enumerate(decomp.bands())
        ]
        fused = fuse_bands(vectors)
        weighted = channel_weighting(fused, self.channel_weights)
        return classify(weighted, self.head)
