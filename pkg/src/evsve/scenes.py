"""Procedural test scenes: drifting band-limited texture plus a bright disk.

Scenes are generated at twice the working resolution so that each 2x2
macro-pixel sees genuine sub-pixel structure; the ground truth at working
resolution is the per-block mean. The texture is synthesized in the
frequency domain (Gaussian-enveloped white noise) and moved by exact
Fourier phase shifts, so motion is subpixel-smooth, periodic, and
bit-reproducible. Radiance is log-uniform over the configured span and
the sequence is rescaled in log space so the ground truth's max/min
ratio equals the span exactly. The disk's top sits at the span maximum,
which is chosen bright enough to saturate every attenuation level of
the default mosaic; the background tops out well below that so only the
disk core is beyond all four sub-exposures.

The video list carries one extra frame past the last trigger window so
event simulation covers the final window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evsve.events import TriggerTable
from evsve.radiometry import RadianceImage

# background ceiling as a fraction of the scene maximum; keeps the darkest
# attenuation level unsaturated everywhere except the disk core
BG_FRACTION = 0.03


@dataclass(frozen=True)
class SceneParams:
    size: int = 64
    frames: int = 4
    motion: str = "translate"
    span: float = 1e4
    base_radiance: float = 10.0
    disk_radius: float = 10.0
    disk_vx: float = 60.0
    disk_vy: float = 30.0
    bg_vx: float = 14.0
    bg_vy: float = -9.0
    texture_cycles: float = 6.0
    rate: float = 60.0

    def __post_init__(self):
        if self.size < 8 or self.size % 2:
            raise ValueError("scene size must be even and >= 8")
        if self.frames < 1:
            raise ValueError("need at least one frame")
        if self.motion not in ("none", "translate"):
            raise ValueError("motion must be 'none' or 'translate'")
        if not (self.span > 1):
            raise ValueError("radiance span must exceed 1")
        if not (self.base_radiance > 0):
            raise ValueError("base radiance must be positive")
        if not (0 < self.disk_radius < self.size / 2):
            raise ValueError("disk radius must fit in the image")
        if not (self.texture_cycles > 0 and self.rate > 0):
            raise ValueError("texture_cycles and rate must be positive")


@dataclass
class SceneData:
    """full: full-resolution frames for mosaic formation; gt: working-
    resolution radiance targets; video: (frame, time) pairs for event
    simulation, one more than gt; triggers: the shared clock."""

    full: list
    gt: list
    video: list
    triggers: TriggerTable


def _block_mean(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def synth_scene(params: SceneParams, seed: int = 0) -> SceneData:
    n = params.frames
    size2 = 2 * params.size
    rng = np.random.default_rng(seed)
    triggers = TriggerTable.regular(n, rate=params.rate)
    times = triggers.times

    # frequency-domain texture with Gaussian band limit
    white = rng.normal(size=(size2, size2))
    spec = np.fft.fft2(white)
    fy = np.fft.fftfreq(size2)[:, None] * size2
    fx = np.fft.fftfreq(size2)[None, :] * size2
    envelope = np.exp(-0.5 * ((fx**2 + fy**2) / params.texture_cycles**2))
    spec *= envelope

    moving = params.motion == "translate"
    vx = params.bg_vx if moving else 0.0
    vy = params.bg_vy if moving else 0.0
    dvx = params.disk_vx if moving else 0.0
    dvy = params.disk_vy if moving else 0.0

    fields = []
    for t in times:
        phase = np.exp(-2j * np.pi * (fx * vx * t + fy * vy * t) / size2)
        fields.append(np.real(np.fft.ifft2(spec * phase)))
    lo = min(f.min() for f in fields[:n])
    hi = max(f.max() for f in fields[:n])
    fields = [(f - lo) / max(hi - lo, 1e-12) for f in fields]

    top = params.base_radiance * params.span
    bg_top = top * BG_FRACTION
    cy0 = 0.35 * size2
    cx0 = 0.30 * size2
    yy, xx = np.mgrid[0:size2, 0:size2].astype(np.float64)

    frames = []
    for f, t in zip(fields, times):
        bg = params.base_radiance * (bg_top / params.base_radiance) ** np.clip(f, 0, 1)
        cx = cx0 + 2.0 * dvx * t
        cy = cy0 + 2.0 * dvy * t
        d = np.hypot(xx - cx, yy - cy)
        mask = 0.5 * (1.0 + np.tanh((2.0 * params.disk_radius - d) / 1.5))
        frames.append(bg * (1.0 - mask) + top * mask)

    # exact span in log space, measured on the block-mean ground truth;
    # block averaging in linear units lifts the minimum, so the exponent
    # is solved by a short fixed-point iteration rather than one division
    lo_r = min(f.min() for f in frames[:n])
    hi_r = max(f.max() for f in frames[:n])
    gamma = np.log(params.span) / np.log(hi_r / lo_r)
    scaled = frames
    for _ in range(12):
        scaled = [params.base_radiance * (f / lo_r) ** gamma for f in frames]
        gts = [_block_mean(f) for f in scaled[:n]]
        ratio = max(g.max() for g in gts) / min(g.min() for g in gts)
        if abs(np.log(ratio) - np.log(params.span)) < 1e-12:
            break
        gamma *= np.log(params.span) / np.log(ratio)
    frames = scaled

    full = [RadianceImage(data=f) for f in frames[:n]]
    gt = [_block_mean(f) for f in frames[:n]]
    video = [
        (RadianceImage(data=_block_mean(f)), float(t))
        for f, t in zip(frames, times)
    ]
    return SceneData(full=full, gt=gt, video=video, triggers=triggers)
