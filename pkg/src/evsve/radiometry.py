"""Camera response, scene radiance containers, and display tone mapping.

Radiance is linear and unit-agnostic: only products radiance * attenuation *
exposure_time ever meet the response curve, so any consistent radiometric
unit works. The response function maps collected exposure to a recorded
intensity in [0, 1] with a hard full-well limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Intensities at or above 1 - SAT_EPS count as saturated. Keeps inversion
# away from the full-well shoulder where quantization noise blows up.
SAT_EPS = 1e-4


@dataclass(frozen=True)
class Crf:
    """Camera response function.

    kind "identity-clip" is a linear sensor with a hard clip at the
    saturation exposure; kind "gamma" additionally applies the usual
    1/gamma power compression. Both map [0, saturation] onto [0, 1]
    monotonically.
    """

    kind: str = "identity-clip"
    gamma: float = 2.2
    saturation: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity-clip", "gamma"):
            raise ValueError(f"unknown CRF kind: {self.kind!r}")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError("gamma must be a positive finite number")
        if not (np.isfinite(self.saturation) and self.saturation > 0):
            raise ValueError("saturation must be a positive finite number")


@dataclass
class RadianceImage:
    """Linear HDR scene radiance, nonnegative per pixel."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] == 0 or self.data.shape[1] == 0:
            raise ValueError("radiance image must be a nonempty 2-d array")
        if not np.all(np.isfinite(self.data)) or np.any(self.data < 0):
            raise ValueError("radiance values must be finite and >= 0")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def apply_crf(crf: Crf, exposure):
    """Map collected exposure (radiance * time units) to intensity in [0, 1].

    Accepts scalars or arrays. Raises ValueError on negative or non-finite
    exposure.
    """
    e = np.asarray(exposure, dtype=np.float64)
    if not np.all(np.isfinite(e)) or np.any(e < 0):
        raise ValueError("exposure must be finite and >= 0")
    v = np.minimum(e / crf.saturation, 1.0)
    if crf.kind == "gamma":
        v = v ** (1.0 / crf.gamma)
    if np.isscalar(exposure) or np.ndim(exposure) == 0:
        return float(v)
    return v


def invert_crf(crf: Crf, intensity):
    """Recover the exposure that produced an intensity in [0, 1].

    Returns (exposure, saturated) where saturated marks intensities within
    SAT_EPS of full well; those exposures are lower bounds, not estimates.
    """
    v = np.asarray(intensity, dtype=np.float64)
    if not np.all(np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
        raise ValueError("intensity must lie in [0, 1]")
    saturated = v >= 1.0 - SAT_EPS
    if crf.kind == "gamma":
        e = (v**crf.gamma) * crf.saturation
    else:
        e = v * crf.saturation
    if np.isscalar(intensity) or np.ndim(intensity) == 0:
        return float(e), bool(saturated)
    return e, saturated


def tone_map(hdr, mu: float = 5000.0) -> np.ndarray:
    """Compress HDR radiance into a display image in [0, 1].

    Accepts a RadianceImage or a bare array. Normalizes by the image
    maximum, then applies log(1 + mu*x) / log(1 + mu). An all-zero image
    maps to all zeros rather than raising.
    """
    if not (np.isfinite(mu) and mu > 0):
        raise ValueError("mu must be a positive finite number")
    x = hdr.data if isinstance(hdr, RadianceImage) else np.asarray(hdr, dtype=np.float64)
    peak = x.max()
    if peak == 0.0:
        return np.zeros_like(x)
    return np.log1p(mu * (x / peak)) / np.log1p(mu)
