"""Feature pyramids and frequency-domain cross-modal filtering.

A shallow encoder turns each modality (the four demultiplexed
sub-exposures, or the two event polarity channels) into an L-level
pyramid: two 3x3 conv layers at full resolution, then one conv layer
after each 2x average downsample. Per level, the two modalities are
pooled, mixed by a 1x1 conv, and the mix drives a learnable spectral
gate: multiply the feature spectrum by a per-channel frequency response
K, which equals circular convolution in space. K is parameterized as
real and imaginary parts and symmetrized so K(-u,-v) = conj(K(u,v))
by construction, making the filtered output exactly real.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evsve import autodiff as ad
from evsve.autodiff import Tensor

DEFAULT_LEVELS = 3
DEFAULT_WIDTH = 8


@dataclass
class FeaturePyramid:
    """Per-level feature tensors, level l at 1/2^(l-1) resolution."""

    levels: list

    def __post_init__(self):
        if not self.levels:
            raise ValueError("pyramid needs at least one level")
        for lo, hi in zip(self.levels[:-1], self.levels[1:]):
            if lo.ndim != 3 or hi.ndim != 3:
                raise ValueError("pyramid levels must be (C, H, W) tensors")
            eh = (lo.shape[1] + 1) // 2
            ew = (lo.shape[2] + 1) // 2
            if hi.shape[1] != eh or hi.shape[2] != ew:
                raise ValueError("each level must halve the previous (ceil)")

    @property
    def num_levels(self) -> int:
        return len(self.levels)


@dataclass
class SpectralKernel:
    """Learnable per-channel frequency response, optionally hermitian."""

    re: Tensor
    im: Tensor
    hermitian: bool = True

    def __post_init__(self):
        if self.re.shape != self.im.shape or self.re.ndim != 3:
            raise ValueError("kernel parts must be matching (C, H, W) tensors")

    def spectrum(self) -> Tensor:
        z = ad.make_complex(self.re, self.im)
        return ad.hermitian_symmetrize(z) if self.hermitian else z

    def params(self) -> list:
        return [self.re, self.im]


@dataclass
class EncoderParams:
    """Weights for one modality encoder: a 2-conv stem plus one conv per
    downsampled level. Each entry is a (weight, bias) Tensor pair."""

    stem: list
    per_level: list

    def params(self) -> list:
        out = []
        for w, b in self.stem + self.per_level:
            out.extend([w, b])
        return out

    @property
    def num_levels(self) -> int:
        return 1 + len(self.per_level)


def _he_conv(rng, c_out, c_in, k, name):
    w = rng.normal(0.0, np.sqrt(2.0 / (c_in * k * k)), size=(c_out, c_in, k, k))
    return (
        ad.parameter(w, name=f"{name}.w"),
        ad.parameter(np.zeros(c_out), name=f"{name}.b"),
    )


def init_encoder(rng, c_in, width=DEFAULT_WIDTH, levels=DEFAULT_LEVELS, prefix="enc"):
    if levels < 1:
        raise ValueError("need at least one pyramid level")
    stem = [
        _he_conv(rng, width, c_in, 3, f"{prefix}.stem1"),
        _he_conv(rng, width, width, 3, f"{prefix}.stem2"),
    ]
    per_level = [
        _he_conv(rng, width, width, 3, f"{prefix}.down{l}")
        for l in range(2, levels + 1)
    ]
    return EncoderParams(stem=stem, per_level=per_level)


def init_kernel(rng, channels, h, w, hermitian=True, prefix="K"):
    """Near-allpass start: response 1 + small noise, so the gate initially
    passes features through and training perturbs from identity."""
    re = 1.0 + 0.01 * rng.normal(size=(channels, h, w))
    im = 0.01 * rng.normal(size=(channels, h, w))
    return SpectralKernel(
        re=ad.parameter(re, name=f"{prefix}.re"),
        im=ad.parameter(im, name=f"{prefix}.im"),
        hermitian=hermitian,
    )


def leaky(x, slope: float = 0.1) -> Tensor:
    """relu with a small negative-side slope, composed from primitive ops.

    Keeps gradient flowing on the negative side; a plain relu backbone can
    die wholesale early in optimization when the output must drop far
    below its initial scale.
    """
    x = ad.as_tensor(x)
    return ad.add(ad.mul(x, slope), ad.mul(ad.relu(x), 1.0 - slope))


def build_pyramid(x, enc: EncoderParams, levels: int | None = None) -> FeaturePyramid:
    """Run the encoder; x is a (C, H, W) array or Tensor."""
    x = ad.as_tensor(x)
    if x.ndim != 3:
        raise ValueError("encoder input must be (C, H, W)")
    if levels is None:
        levels = enc.num_levels
    if levels < 1 or levels > enc.num_levels:
        raise ValueError("requested level count exceeds encoder depth")
    size = min(x.shape[1], x.shape[2])
    if (size + (1 << (levels - 1)) - 1) >> (levels - 1) < 2:
        raise ValueError("too many levels for this image size")

    (w1, b1), (w2, b2) = enc.stem
    f = leaky(ad.conv2d(x, w1, b1))
    f = leaky(ad.conv2d(f, w2, b2))
    out = [f]
    for w, b in enc.per_level[: levels - 1]:
        f = leaky(ad.conv2d(ad.avg_pool2(f), w, b))
        out.append(f)
    return FeaturePyramid(levels=out)


def spatial_pool(f: Tensor) -> Tensor:
    """3x3 average pooling, stride 1, shape preserving."""
    return ad.avg_pool3(f)


def fdconv(x, kernel: SpectralKernel) -> Tensor:
    """Filter per channel in the frequency domain: IFFT2(FFT2(x) * K).

    Equivalent to circular convolution with IFFT2(K); exactly real when
    the kernel is hermitian, and the real part is returned regardless.
    """
    x = ad.as_tensor(x)
    k = kernel.spectrum()
    if x.shape != k.shape:
        raise ValueError("kernel spectrum must match feature dimensions")
    return ad.ifft2_real(ad.complex_mul(ad.fft2(x), k))


def fuse_level(f_sve, f_evt, w_c, kernel: SpectralKernel) -> Tensor:
    """One pyramid level of cross-modal fusion.

    Pool both modalities, mix with a 1x1 conv, turn the mix into a
    spatial gate via the spectral filter, and apply the gate to the SVE
    features before adding the event features:

        out = fdconv(conv1x1([pool(f_sve) || pool(f_evt)]), K) * f_sve + f_evt
    """
    f_sve, f_evt = ad.as_tensor(f_sve), ad.as_tensor(f_evt)
    if f_sve.shape[1:] != f_evt.shape[1:]:
        raise ValueError("modalities must share spatial dimensions")
    wc_w, wc_b = w_c
    s = ad.concat([spatial_pool(f_sve), spatial_pool(f_evt)], axis=0)
    z = ad.conv2d(s, wc_w, wc_b)
    if z.shape[0] != f_sve.shape[0]:
        raise ValueError("mixing conv must output one gate channel per SVE channel")
    h = fdconv(z, kernel)
    return ad.add(ad.mul(h, f_sve), f_evt)
