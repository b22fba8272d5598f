"""Learnable multilevel wavelet decomposition front-end.

Each level cross-correlates the running approximation with a low-pass and a
high-pass filter at stride 2 under circular boundary extension, optionally
squashing both outputs through a learnable soft thresholding activation
before they are used further.  The high-pass filter can be tied to the
low-pass one through the alternating-flip (quadrature mirror) construction,
which keeps the two-channel bank orthogonal for any low-pass filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from mpmath import mp

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, InputTooShortError

SHARING_MODES = ("db10_fixed", "single_kernel", "layer_wise", "all_kernel")

_DAUB_CACHE = {}


def _poly_mul(a, b):
    out = [mp.mpf(0)] * (len(a) + len(b) - 1)
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            out[i + j] += ai * bj
    return out


def daubechies_lowpass(order):
    """Minimum-phase orthonormal low-pass filter with ``order`` vanishing moments.

    Built by spectral factorization: the roots of the binomial half-band
    polynomial are mapped to the unit disc and recombined with the maximal
    root at z = -1.  Coefficients are computed at 60 decimal digits and
    rounded once, so the orthonormality identities hold to near float64
    precision.  Normalized so sum(h) = sqrt(2) and sum(h^2) = 1.
    """
    if order < 1 or int(order) != order:
        raise ConfigError(f"unsupported wavelet order {order!r}")
    order = int(order)
    cached = _DAUB_CACHE.get(order)
    if cached is not None:
        return cached.copy()
    with mp.workdps(60):
        binom = [mp.binomial(order - 1 + k, k) for k in range(order)]
        poly = [mp.mpf(1)]
        if order > 1:
            roots = mp.polyroots(list(reversed(binom)), maxsteps=400, extraprec=300)
            for y in roots:
                c = 1 - 2 * y
                disc = mp.sqrt(c * c - 1)
                z = c + disc
                if abs(z) > 1:
                    z = c - disc
                poly = _poly_mul(poly, [-z, mp.mpf(1)])
        for _ in range(order):
            poly = _poly_mul(poly, [mp.mpf(1), mp.mpf(1)])
        real = [mp.re(c) for c in poly]
        scale = mp.sqrt(2) / mp.fsum(real)
        # reverse into the minimum-phase orientation used by published tables
        h = np.array([float(c * scale) for c in reversed(real)])
    _DAUB_CACHE[order] = h
    return h.copy()


def init_daubechies(order=10):
    """The length-2*order orthonormal low-pass filter as a constant tensor."""
    return Tensor(daubechies_lowpass(order))


def derive_cqf(h):
    """High-pass filter g[n] = (-1)^n h[K-1-n] for an even-length low-pass h.

    Differentiable, so gradients through g flow back into h.  The alternating
    flip makes sum h[n] g[n - 2k] vanish exactly for every shift k.
    """
    h = h if isinstance(h, Tensor) else Tensor(h)
    k = h.data.shape[-1]
    if h.data.ndim != 1:
        raise DimensionError("derive_cqf expects a 1-d filter")
    if k % 2 != 0:
        raise ConfigError(f"quadrature mirror construction needs even length, got {k}")
    signs = Tensor(np.where(np.arange(k) % 2 == 0, 1.0, -1.0))
    return ad.mul(ad.flip(h, 0), signs)


def _as_filter_weight(f):
    return ad.reshape(f, (1, 1, f.data.shape[-1]))


def _extend_odd(a):
    if a.data.shape[2] % 2 == 0:
        return a
    return ad.concat([a, a[:, :, :1]], axis=2)


def decompose_level(a, h, g):
    """One analysis level: stride-2 circular cross-correlation with h and g.

    ``a`` is (batch, 1, W) with W >= 2; odd widths are first extended by one
    circularly.  Both outputs have width ceil(W / 2).
    """
    if a.data.ndim != 3 or a.data.shape[1] != 1:
        raise DimensionError("decompose_level expects (batch, 1, W)")
    if a.data.shape[2] < 2:
        raise InputTooShortError("decompose_level needs at least 2 samples")
    a = _extend_odd(a)
    a_next = ad.conv1d(a, _as_filter_weight(h), stride=2, padding="circular")
    d_next = ad.conv1d(a, _as_filter_weight(g), stride=2, padding="circular")
    return a_next, d_next


@dataclass
class LAHTParams:
    """Reparameterized thresholding parameters.

    The raw scalars are unconstrained; the effective values are
    alpha = -exp(raw_alpha) < 0, beta = exp(raw_beta) > 0 and softplus biases
    > 0, so the sign constraints survive any optimizer trajectory.
    """

    raw_alpha: Tensor
    raw_beta: Tensor
    raw_bias_pos: Tensor
    raw_bias_neg: Tensor

    @classmethod
    def init(cls, sharpness=10.0, bias=0.01):
        raw_bias = float(np.log(np.expm1(bias)))
        return cls(
            raw_alpha=ad.parameter(np.log(sharpness)),
            raw_beta=ad.parameter(np.log(sharpness)),
            raw_bias_pos=ad.parameter(raw_bias),
            raw_bias_neg=ad.parameter(raw_bias),
        )

    def effective(self):
        alpha = ad.neg(ad.exp(self.raw_alpha))
        beta = ad.exp(self.raw_beta)
        bias_pos = ad.softplus(self.raw_bias_pos)
        bias_neg = ad.softplus(self.raw_bias_neg)
        return alpha, beta, bias_pos, bias_neg

    def tensors(self):
        return [self.raw_alpha, self.raw_beta, self.raw_bias_pos, self.raw_bias_neg]


def laht_apply(x, alpha, beta, bias_pos, bias_neg):
    """x * [S(alpha (x + bias_neg)) + S(beta (x - bias_pos))] elementwise."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    gate = ad.add(
        ad.sigmoid(ad.mul(alpha, ad.add(x, bias_neg))),
        ad.sigmoid(ad.mul(beta, ad.sub(x, bias_pos))),
    )
    return ad.mul(x, gate)


def laht(x, params):
    """Thresholding with the constrained effective values of ``params``."""
    alpha, beta, bias_pos, bias_neg = params.effective()
    return laht_apply(x, alpha, beta, bias_pos, bias_neg)


@dataclass
class FrontEndConfig:
    levels: int = 8
    kernel_size: int = 20
    sharing: str = "all_kernel"
    laht_enabled: bool = True
    laht_on_approx: bool = True

    def __post_init__(self):
        if self.sharing not in SHARING_MODES:
            raise ConfigError(f"unknown sharing mode {self.sharing!r}")
        if self.kernel_size % 2 != 0 or self.kernel_size < 2:
            raise ConfigError("kernel_size must be a positive even number")
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")

    @property
    def min_input_length(self):
        return (2**self.levels) * self.kernel_size


class FrontEndFilters:
    """Per-level (h, g) filter pairs under one of the sharing modes.

    Modes: ``db10_fixed`` keeps the initialization constant; ``single_kernel``
    learns one low-pass filter shared by every level with g tied by the
    quadrature mirror map; ``layer_wise`` learns one low-pass filter per
    level, g tied; ``all_kernel`` learns h and g independently per level.
    Tied g filters are re-derived on every forward pass so filter updates
    propagate immediately.
    """

    def __init__(self, cfg, rng=None):
        self.cfg = cfg
        base = daubechies_lowpass(cfg.kernel_size // 2)
        self.mode = cfg.sharing
        self._h = []
        self._g = []
        if self.mode == "db10_fixed":
            self._h = [Tensor(base)]
        elif self.mode == "single_kernel":
            self._h = [ad.parameter(base)]
        elif self.mode == "layer_wise":
            self._h = [ad.parameter(base.copy()) for _ in range(cfg.levels)]
        else:  # all_kernel
            g0 = np.where(np.arange(base.size) % 2 == 0, 1.0, -1.0) * base[::-1]
            self._h = [ad.parameter(base.copy()) for _ in range(cfg.levels)]
            self._g = [ad.parameter(g0.copy()) for _ in range(cfg.levels)]

    def level_pair(self, level):
        if self.mode == "all_kernel":
            return self._h[level], self._g[level]
        h = self._h[0 if self.mode in ("db10_fixed", "single_kernel") else level]
        return h, derive_cqf(h)

    def parameters(self):
        if self.mode == "db10_fixed":
            return []
        return list(self._h) + list(self._g)

    def learnable_filter_count(self):
        return len(self.parameters())


@dataclass
class DecompositionOutput:
    """L detail bands ordered high frequency first, then the approximation."""

    details: list
    approximation: Tensor

    def bands(self):
        return list(self.details) + [self.approximation]


def frontend_forward(signal, cfg, filters, lahts=None):
    """Run the full analysis cascade on (batch, 1, W) input.

    Recursion always continues on the approximation.  When thresholding is
    enabled, each level's activation is applied to both of its outputs before
    further use; ``cfg.laht_on_approx`` controls whether the final
    approximation is thresholded too.
    """
    if signal.data.ndim != 3 or signal.data.shape[1] != 1:
        raise DimensionError("frontend_forward expects (batch, 1, W)")
    width = signal.data.shape[2]
    if width < cfg.min_input_length:
        raise InputTooShortError(
            f"input width {width} below the {cfg.levels}-level minimum "
            f"{cfg.min_input_length}"
        )
    if cfg.laht_enabled and lahts is None:
        raise ConfigError("laht_enabled requires per-level LAHT parameters")
    a = signal
    details = []
    for level in range(cfg.levels):
        h, g = filters.level_pair(level)
        a, d = decompose_level(a, h, g)
        if cfg.laht_enabled:
            params = lahts[level]
            d = laht(d, params)
            last = level == cfg.levels - 1
            if not last or cfg.laht_on_approx:
                a = laht(a, params)
        details.append(d)
    return DecompositionOutput(details=details, approximation=a)


def reconstruct(bands, filters_or_pairs):
    """Inverse cascade for orthonormal analysis filters (test utility).

    Upsamples each level by 2 and applies the adjoint circular correlation,
    which inverts the analysis exactly for orthonormal filters, circular
    boundaries, and even widths throughout.  Operates on plain arrays and is
    not differentiable.
    """
    if isinstance(bands, DecompositionOutput):
        details = [np.asarray(d.data if isinstance(d, Tensor) else d) for d in bands.details]
        approx = np.asarray(
            bands.approximation.data
            if isinstance(bands.approximation, Tensor)
            else bands.approximation
        )
    else:
        *details, approx = [np.asarray(b.data if isinstance(b, Tensor) else b) for b in bands]
    levels = len(details)
    pairs = _resolve_pairs(filters_or_pairs, levels)
    if len(pairs) != levels:
        raise DimensionError(
            f"band count {levels} does not match filter levels {len(pairs)}"
        )
    a = approx.reshape(-1)
    for level in range(levels - 1, -1, -1):
        d = details[level].reshape(-1)
        if d.shape != a.shape:
            raise DimensionError(
                f"detail band {level + 1} has length {d.size}, expected {a.size}"
            )
        h, g = pairs[level]
        width = 2 * a.size
        out = np.zeros(width)
        pos = 2 * np.arange(a.size)
        for s in range(h.size):
            np.add.at(out, (pos + s) % width, a * h[s] + d * g[s])
        a = out
    return a


def _resolve_pairs(filters_or_pairs, levels):
    if isinstance(filters_or_pairs, FrontEndFilters):
        pairs = []
        for level in range(levels):
            h, g = filters_or_pairs.level_pair(level)
            pairs.append((np.asarray(h.data), np.asarray(g.data)))
        return pairs
    resolved = []
    for h, g in filters_or_pairs:
        h = np.asarray(h.data if isinstance(h, Tensor) else h)
        g = np.asarray(g.data if isinstance(g, Tensor) else g)
        resolved.append((h, g))
    return resolved
