"""SVE micro-attenuation sensor: mosaic formation, demultiplexing, merging.

The sensor interleaves four exposure levels in one readout through a 2x2
macro-pixel pattern of fixed attenuation factors. With (u, v) = (column,
row), the sub-pixel index is

    s(u, v) = 2 * (v mod 2) + (u mod 2)        (0-based here)

so index 0 is top-left, 1 top-right, 2 bottom-left, 3 bottom-right, and the
attenuation tuple is ordered the same way. Demultiplexing strips each parity
class into a half-resolution sub-image; remosaic is its exact inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evsve.radiometry import SAT_EPS, Crf, RadianceImage, apply_crf, invert_crf

DEFAULT_TAUS = (0.95, 0.45, 0.55, 0.005)
DEFAULT_T_EXP = 0.016


@dataclass(frozen=True)
class SvePattern:
    """2x2 attenuation pattern and per-cycle exposure time (seconds)."""

    taus: tuple = DEFAULT_TAUS
    t_exp: float = DEFAULT_T_EXP

    def __post_init__(self):
        if len(self.taus) != 4:
            raise ValueError("pattern needs exactly four attenuation factors")
        for t in self.taus:
            if not (np.isfinite(t) and 0.0 < t <= 1.0):
                raise ValueError("attenuation factors must lie in (0, 1]")
        if not (np.isfinite(self.t_exp) and self.t_exp > 0):
            raise ValueError("exposure time must be positive")

    def tau_grid(self, height: int, width: int) -> np.ndarray:
        """Full-resolution map of the attenuation factor at each pixel."""
        taus = np.asarray(self.taus, dtype=np.float64)
        v, u = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        return taus[2 * (v % 2) + (u % 2)]


@dataclass
class MosaicFrame:
    """Single raw SVE readout; intensities in [0, 1], even dimensions."""

    data: np.ndarray
    pattern: SvePattern

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("mosaic must be a 2-d array")
        h, w = self.data.shape
        if h % 2 or w % 2 or h == 0 or w == 0:
            raise ValueError("mosaic dimensions must be even and nonzero")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("mosaic values must be finite")
        if self.data.min() < 0 or self.data.max() > 1:
            raise ValueError("mosaic values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class ExposureStack:
    """Four half-resolution sub-images, one per attenuation factor."""

    subs: tuple
    pattern: SvePattern

    def __post_init__(self):
        if len(self.subs) != 4:
            raise ValueError("stack needs exactly four sub-images")
        subs = tuple(np.asarray(s, dtype=np.float64) for s in self.subs)
        shape = subs[0].shape
        for s in subs:
            if s.ndim != 2 or s.shape != shape:
                raise ValueError("sub-images must share one 2-d shape")
            if not np.all(np.isfinite(s)) or s.min() < 0 or s.max() > 1:
                raise ValueError("sub-image values must lie in [0, 1]")
        self.subs = subs

    @property
    def height(self) -> int:
        return self.subs[0].shape[0]

    @property
    def width(self) -> int:
        return self.subs[0].shape[1]

    def as_array(self) -> np.ndarray:
        """Stack the four sub-images into a (4, H/2, W/2) array."""
        return np.stack(self.subs, axis=0)


def mosaic_forward(
    scene: RadianceImage,
    pattern: SvePattern,
    crf: Crf,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> MosaicFrame:
    """Form the raw mosaic: intensity = f(radiance * tau(u,v) * t_exp) + noise.

    Gaussian read noise is added after the response curve (the forward model
    is silent on the ordering; post-response is the documented choice) and
    the result is clamped back to [0, 1]. noise_sigma = 0 is deterministic.
    """
    if scene.height % 2 or scene.width % 2:
        raise ValueError("scene dimensions must be even")
    if not (np.isfinite(noise_sigma) and noise_sigma >= 0):
        raise ValueError("noise_sigma must be finite and >= 0")
    taus = pattern.tau_grid(scene.height, scene.width)
    m = apply_crf(crf, scene.data * taus * pattern.t_exp)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        m = m + rng.normal(0.0, noise_sigma, size=m.shape)
    m = np.clip(m, 0.0, 1.0)
    return MosaicFrame(data=m, pattern=pattern)


def demultiplex(frame: MosaicFrame) -> ExposureStack:
    """Split the mosaic into four half-resolution sub-images by parity."""
    d = frame.data
    subs = (d[0::2, 0::2], d[0::2, 1::2], d[1::2, 0::2], d[1::2, 1::2])
    return ExposureStack(subs=tuple(s.copy() for s in subs), pattern=frame.pattern)


def remosaic(stack: ExposureStack) -> MosaicFrame:
    """Exact inverse of demultiplex."""
    h, w = stack.height, stack.width
    m = np.empty((2 * h, 2 * w), dtype=np.float64)
    m[0::2, 0::2] = stack.subs[0]
    m[0::2, 1::2] = stack.subs[1]
    m[1::2, 0::2] = stack.subs[2]
    m[1::2, 1::2] = stack.subs[3]
    return MosaicFrame(data=m, pattern=stack.pattern)


def exposure_normalize(stack: ExposureStack, crf: Crf):
    """Build the exposure-normalized reference map from the stack.

    Per pixel, picks the sub-exposure whose intensity is closest to
    mid-range 0.5 among non-saturated candidates (best SNR for inversion),
    inverts the response, and divides by tau * t_exp. Pixels saturated in
    all four sub-exposures fall back to the least-attenuated-by-light
    sample (smallest tau) and are cleared in the validity mask. The map is
    rescaled so its maximum is 1.

    Returns (i_ref, valid) where i_ref is in [0, 1] and valid is a boolean
    mask, False where every sub-exposure saturated.
    """
    intens = stack.as_array()
    taus = np.asarray(stack.pattern.taus, dtype=np.float64)
    sat = intens >= 1.0 - SAT_EPS
    all_sat = sat.all(axis=0)

    # Distance to mid-range, with saturated candidates pushed out of the running.
    score = np.abs(intens - 0.5) + 10.0 * sat
    k_star = np.argmin(score, axis=0)
    k_star = np.where(all_sat, int(np.argmin(taus)), k_star)

    sel = np.take_along_axis(intens, k_star[None], axis=0)[0]
    exposure, _ = invert_crf(crf, sel)
    radiance = exposure / (taus[k_star] * stack.pattern.t_exp)

    peak = radiance.max()
    i_ref = radiance / peak if peak > 0 else radiance
    return i_ref, ~all_sat


def classical_merge(stack: ExposureStack, crf: Crf) -> RadianceImage:
    """Inverse-response exposure merging with triangle weights.

    Each sub-exposure votes for radiance = invert(I) / (tau * t_exp) with
    weight max(0, 1 - |2I - 1|); saturated samples are excluded. Pixels
    left with zero total weight (all saturated, or all pinned at 0/1) use
    the smallest-tau sample directly.
    """
    intens = stack.as_array()
    taus = np.asarray(stack.pattern.taus, dtype=np.float64)
    t_exp = stack.pattern.t_exp

    exposure, sat = invert_crf(crf, intens)
    radiance = exposure / (taus[:, None, None] * t_exp)
    weights = np.maximum(0.0, 1.0 - np.abs(2.0 * intens - 1.0))
    weights[sat] = 0.0

    wsum = weights.sum(axis=0)
    merged = np.divide(
        (weights * radiance).sum(axis=0),
        wsum,
        out=np.zeros_like(wsum),
        where=wsum > 0,
    )
    k_dark = int(np.argmin(taus))
    merged = np.where(wsum > 0, merged, radiance[k_dark])
    return RadianceImage(data=merged)
