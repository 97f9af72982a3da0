"""Coarse cross-modal alignment.

The two sensors view the scene through different optics, so their pixel
grids are related by a planar homography H that maps reference-image
coordinates (image A, the SVE side) to event-image coordinates (image B).
H is estimated once per capture setup from sparse correspondences: Harris
corners matched by zero-normalized cross-correlation, then RANSAC with a
normalized-DLT minimal solver and an inlier refit.

warp() uses inverse mapping: the output pixel at x samples the source at
pi(h x), so resampling the event side onto the SVE grid uses the
estimated A-to-B homography directly (as a point transform this moves
events by H^-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evsve import autodiff as ad
from evsve import fileio

DEFAULT_RANSAC_ITERS = 2000
DEFAULT_INLIER_PX = 2.0
PATCH = 11


class EstimationError(RuntimeError):
    """Raised when no usable homography can be recovered from the matches."""


@dataclass
class Homography:
    """3x3 projective map, stored normalized so h[2, 2] = 1."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        if h.shape != (3, 3) or not np.all(np.isfinite(h)):
            raise ValueError("homography must be a finite 3x3 matrix")
        if abs(h[2, 2]) < 1e-12:
            raise ValueError("homography has vanishing scale entry")
        h = h / h[2, 2]
        if abs(np.linalg.det(h)) <= 1e-9:
            raise ValueError("homography must be invertible")
        self.h = h

    @classmethod
    def identity(cls) -> "Homography":
        return cls(h=np.eye(3))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Map (N, 2) points; rows with vanishing depth come back non-finite."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        hom = np.column_stack([pts, np.ones(len(pts))])
        proj = hom @ self.h.T
        w = proj[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = proj[:, :2] / w[:, None]
        out[np.abs(w) < 1e-12] = np.inf
        return out

    def inverse(self) -> "Homography":
        return Homography(h=np.linalg.inv(self.h))

    def save(self, path) -> None:
        fileio.write_homography(path, self.h)

    @classmethod
    def load(cls, path) -> "Homography":
        return cls(h=fileio.read_homography(path))


@dataclass
class MatchSet:
    """Putative correspondences between image A and image B."""

    pts_a: np.ndarray
    pts_b: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.pts_a = np.asarray(self.pts_a, dtype=np.float64).reshape(-1, 2)
        self.pts_b = np.asarray(self.pts_b, dtype=np.float64).reshape(-1, 2)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(self.pts_a) != len(self.pts_b) or len(self.pts_a) != len(self.scores):
            raise ValueError("matches need equal-length point and score arrays")
        if len(self.pts_a) and not (
            np.all(np.isfinite(self.pts_a)) and np.all(np.isfinite(self.pts_b))
        ):
            raise ValueError("match coordinates must be finite")

    def __len__(self) -> int:
        return len(self.pts_a)

    @classmethod
    def from_file(cls, path) -> "MatchSet":
        pts_a, pts_b = fileio.read_correspondences(path)
        return cls(pts_a=pts_a, pts_b=pts_b, scores=np.ones(len(pts_a)))

    def to_file(self, path) -> None:
        fileio.write_correspondences(path, self.pts_a, self.pts_b)


# ---------------------------------------------------------------------------
# Detection and matching


def _conv_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(img, ((ph, ph), (pw, pw)), mode="reflect")
    out = np.zeros_like(img)
    for dy in range(kh):
        for dx in range(kw):
            out += kernel[dy, dx] * padded[dy:dy + img.shape[0], dx:dx + img.shape[1]]
    return out


def _gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def _harris_keypoints(img: np.ndarray, max_keypoints: int, margin: int) -> np.ndarray:
    dx = np.array([[-0.5, 0.0, 0.5]])
    ix = _conv_same(img, dx)
    iy = _conv_same(img, dx.T)
    g = _gaussian_kernel(1.0, 2)
    sxx = _conv_same(ix * ix, g)
    syy = _conv_same(iy * iy, g)
    sxy = _conv_same(ix * iy, g)
    r = (sxx * syy - sxy * sxy) - 0.06 * (sxx + syy) ** 2

    peak = r.max()
    if not (peak > 0):
        return np.empty((0, 2), dtype=np.int64)
    # 3x3 non-max suppression via padded neighbourhood max
    padded = np.pad(r, 1, mode="constant", constant_values=-np.inf)
    local_max = np.ones_like(r, dtype=bool)
    for ddy in (0, 1, 2):
        for ddx in (0, 1, 2):
            if ddy == 1 and ddx == 1:
                continue
            local_max &= r >= padded[ddy:ddy + r.shape[0], ddx:ddx + r.shape[1]]
    keep = local_max & (r > 0.01 * peak)
    keep[:margin] = keep[-margin:] = False
    keep[:, :margin] = keep[:, -margin:] = False
    ys, xs = np.nonzero(keep)
    if len(ys) > max_keypoints:
        order = np.argsort(r[ys, xs])[::-1][:max_keypoints]
        ys, xs = ys[order], xs[order]
    return np.column_stack([xs, ys]).astype(np.int64)


def _patches(img: np.ndarray, pts: np.ndarray) -> np.ndarray:
    half = PATCH // 2
    dy, dx = np.mgrid[-half:half + 1, -half:half + 1]
    return img[pts[:, 1, None, None] + dy, pts[:, 0, None, None] + dx]


def _zncc_rows(patches: np.ndarray) -> np.ndarray:
    """Flatten and normalize patches so dot products are ZNCC in [-1, 1]."""
    flat = patches.reshape(len(patches), -1)
    flat = flat - flat.mean(axis=1, keepdims=True)
    norm = np.linalg.norm(flat, axis=1, keepdims=True)
    ok = norm[:, 0] > 1e-12
    flat = np.divide(flat, norm, out=np.zeros_like(flat), where=norm > 1e-12)
    flat[~ok] = 0.0
    return flat


def detect_and_match(
    img_a: np.ndarray,
    img_b: np.ndarray,
    max_keypoints: int = 300,
    min_score: float = 0.6,
    search_radius: float | None = None,
) -> MatchSet:
    """Harris corners matched by mutual-best ZNCC over 11x11 patches.

    search_radius, when given, only considers candidate pairs closer than
    that many pixels (useful when the images are already nearly aligned).
    Flat images produce no corners and an empty MatchSet, which callers
    treat as the signal to fall back to externally supplied points.
    """
    img_a = np.asarray(img_a, dtype=np.float64)
    img_b = np.asarray(img_b, dtype=np.float64)
    if img_a.ndim != 2 or img_b.ndim != 2:
        raise ValueError("matching expects 2-d intensity images")
    empty = MatchSet(
        pts_a=np.empty((0, 2)), pts_b=np.empty((0, 2)), scores=np.empty(0)
    )
    margin = PATCH // 2 + 1
    if min(img_a.shape) <= 2 * margin or min(img_b.shape) <= 2 * margin:
        return empty

    kp_a = _harris_keypoints(img_a, max_keypoints, margin)
    kp_b = _harris_keypoints(img_b, max_keypoints, margin)
    if len(kp_a) == 0 or len(kp_b) == 0:
        return empty

    za = _zncc_rows(_patches(img_a, kp_a))
    zb = _zncc_rows(_patches(img_b, kp_b))
    scores = za @ zb.T
    if search_radius is not None:
        d2 = ((kp_a[:, None, :] - kp_b[None, :, :]) ** 2).sum(axis=2)
        scores[d2 > search_radius**2] = -np.inf

    best_b = scores.argmax(axis=1)
    best_a = scores.argmax(axis=0)
    idx_a = np.flatnonzero(best_a[best_b] == np.arange(len(kp_a)))
    idx_b = best_b[idx_a]
    sc = scores[idx_a, idx_b]
    keep = sc >= min_score
    idx_a, idx_b, sc = idx_a[keep], idx_b[keep], sc[keep]
    if len(idx_a) == 0:
        return empty

    # quadratic peak refinement of the B position on the 3x3 ZNCC surface
    pa = za[idx_a]
    grid = np.zeros((len(idx_a), 3, 3))
    for gy, dy in enumerate((-1, 0, 1)):
        for gx, dx in enumerate((-1, 0, 1)):
            shifted = kp_b[idx_b] + np.array([dx, dy])
            zb_off = _zncc_rows(_patches(img_b, shifted))
            grid[:, gy, gx] = (pa * zb_off).sum(axis=1)

    def _parabola(sm, s0, sp):
        denom = sm - 2.0 * s0 + sp
        safe = np.where(np.abs(denom) < 1e-12, 1.0, denom)
        off = 0.5 * (sm - sp) / safe
        # refine only where the 1-d quadratic is concave (a proper peak)
        return np.clip(np.where(denom < -1e-12, off, 0.0), -1.0, 1.0)

    off_x = _parabola(grid[:, 1, 0], grid[:, 1, 1], grid[:, 1, 2])
    off_y = _parabola(grid[:, 0, 1], grid[:, 1, 1], grid[:, 2, 1])
    pts_b = kp_b[idx_b].astype(np.float64)
    pts_b[:, 0] += off_x
    pts_b[:, 1] += off_y
    return MatchSet(pts_a=kp_a[idx_a].astype(np.float64), pts_b=pts_b, scores=sc)


# ---------------------------------------------------------------------------
# Homography estimation


def _normalize_pts(pts: np.ndarray):
    """Hartley conditioning: centroid to origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    s = np.sqrt(2.0) / max(d, 1e-12)
    t = np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )
    return (pts - centroid) * s, t


def _dlt(pts_a: np.ndarray, pts_b: np.ndarray) -> np.ndarray:
    """Direct linear transform on >= 4 correspondences, with conditioning."""
    na, ta = _normalize_pts(pts_a)
    nb, tb = _normalize_pts(pts_b)
    n = len(na)
    a = np.zeros((2 * n, 9))
    x, y = na[:, 0], na[:, 1]
    u, v = nb[:, 0], nb[:, 1]
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1.0
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1.0
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v
    _, _, vt = np.linalg.svd(a)
    h_hat = vt[-1].reshape(3, 3)
    return np.linalg.inv(tb) @ h_hat @ ta


def _reproj_errors(h: np.ndarray, pts_a: np.ndarray, pts_b: np.ndarray) -> np.ndarray:
    hom = np.column_stack([pts_a, np.ones(len(pts_a))])
    proj = hom @ h.T
    w = proj[:, 2]
    bad = np.abs(w) < 1e-12
    w = np.where(bad, 1.0, w)
    err = np.linalg.norm(proj[:, :2] / w[:, None] - pts_b, axis=1)
    err[bad] = np.inf
    return err


def _min_triple_area(pts: np.ndarray) -> np.ndarray:
    """Smallest |triangle area| over the four point triples of each sample.

    pts has shape (iters, 4, 2); a tiny value means a degenerate sample.
    """
    areas = []
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        d1 = pts[:, j] - pts[:, i]
        d2 = pts[:, k] - pts[:, i]
        areas.append(np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]))
    return np.min(areas, axis=0)


def estimate_homography(
    matches: MatchSet,
    ransac_iters: int = DEFAULT_RANSAC_ITERS,
    inlier_px: float = DEFAULT_INLIER_PX,
    seed: int = 0,
):
    """RANSAC homography fit; returns (Homography, inlier mask).

    Hypotheses are 4-point minimal DLT solves, batched: the null vectors
    come from an eigendecomposition of the stacked normal matrices, which
    is much faster than per-sample SVD and is exact for noise-free
    samples. The winning consensus set is refit with a conditioned DLT.
    Degenerate samples (any three points nearly collinear) are discarded;
    if no valid hypothesis survives, estimation fails.
    """
    n = len(matches)
    if n < 4:
        raise EstimationError("need at least four matches")
    pts_a, pts_b = matches.pts_a, matches.pts_b
    rng = np.random.default_rng(seed)

    sel = rng.random((ransac_iters, n)).argsort(axis=1)[:, :4]
    sa = pts_a[sel]
    sb = pts_b[sel]

    spread_a = max(_spread(pts_a), 1e-12)
    spread_b = max(_spread(pts_b), 1e-12)
    valid = (_min_triple_area(sa) > 1e-6 * spread_a**2) & (
        _min_triple_area(sb) > 1e-6 * spread_b**2
    )

    # per-sample Hartley conditioning
    ca = sa.mean(axis=1, keepdims=True)
    cb = sb.mean(axis=1, keepdims=True)
    da = np.maximum(np.linalg.norm(sa - ca, axis=2).mean(axis=1), 1e-12)
    db = np.maximum(np.linalg.norm(sb - cb, axis=2).mean(axis=1), 1e-12)
    fa = (np.sqrt(2.0) / da)[:, None, None]
    fb = (np.sqrt(2.0) / db)[:, None, None]
    na = (sa - ca) * fa
    nb = (sb - cb) * fb

    m = np.zeros((ransac_iters, 8, 9))
    x, y = na[..., 0], na[..., 1]
    u, v = nb[..., 0], nb[..., 1]
    m[:, 0::2, 0] = -x
    m[:, 0::2, 1] = -y
    m[:, 0::2, 2] = -1.0
    m[:, 0::2, 6] = u * x
    m[:, 0::2, 7] = u * y
    m[:, 0::2, 8] = u
    m[:, 1::2, 3] = -x
    m[:, 1::2, 4] = -y
    m[:, 1::2, 5] = -1.0
    m[:, 1::2, 6] = v * x
    m[:, 1::2, 7] = v * y
    m[:, 1::2, 8] = v
    ata = np.einsum("nij,nik->njk", m, m)
    _, vecs = np.linalg.eigh(ata)
    h_hat = vecs[:, :, 0].reshape(ransac_iters, 3, 3)

    # undo conditioning: H = Tb^-1 Hhat Ta with similarity transforms
    fa1 = fa[:, 0, 0]
    fb1 = fb[:, 0, 0]
    ta = np.zeros((ransac_iters, 3, 3))
    ta[:, 0, 0] = fa1
    ta[:, 1, 1] = fa1
    ta[:, 2, 2] = 1.0
    ta[:, 0, 2] = -fa1 * ca[:, 0, 0]
    ta[:, 1, 2] = -fa1 * ca[:, 0, 1]
    tb_inv = np.zeros((ransac_iters, 3, 3))
    tb_inv[:, 0, 0] = 1.0 / fb1
    tb_inv[:, 1, 1] = 1.0 / fb1
    tb_inv[:, 2, 2] = 1.0
    tb_inv[:, 0, 2] = cb[:, 0, 0]
    tb_inv[:, 1, 2] = cb[:, 0, 1]
    h_all = tb_inv @ h_hat @ ta

    scale = h_all[:, 2, 2]
    valid &= np.abs(scale) > 1e-12
    h_all = h_all / np.where(np.abs(scale) < 1e-12, 1.0, scale)[:, None, None]
    valid &= np.abs(np.linalg.det(h_all)) > 1e-9

    hom = np.column_stack([pts_a, np.ones(n)])
    proj = np.einsum("nij,kj->nki", h_all, hom)
    w = proj[..., 2]
    wsafe = np.where(np.abs(w) < 1e-12, 1.0, w)
    err = np.linalg.norm(proj[..., :2] / wsafe[..., None] - pts_b[None], axis=2)
    err[np.abs(w) < 1e-12] = np.inf
    counts = (err < inlier_px).sum(axis=1)
    counts[~valid] = -1

    best = int(np.argmax(counts))
    if counts[best] < 4:
        raise EstimationError("no non-degenerate consensus found")

    inliers = err[best] < inlier_px
    try:
        h_fit = _dlt(pts_a[inliers], pts_b[inliers])
        homography = Homography(h=h_fit)
    except (np.linalg.LinAlgError, ValueError):
        homography = Homography(h=h_all[best])
    mask = _reproj_errors(homography.h, pts_a, pts_b) < inlier_px
    if mask.sum() < 4:
        raise EstimationError("refit lost the consensus set")
    return homography, mask


def _spread(pts: np.ndarray) -> float:
    return float(np.linalg.norm(pts - pts.mean(axis=0), axis=1).mean())


# ---------------------------------------------------------------------------
# Warping


def warp(image, h: Homography, out_size: tuple | None = None):
    """Inverse-mapped bilinear resampling; out-of-bounds samples are 0.

    image is a 2-d array or an AccumFrame (both channels warped with the
    same map). out_size is (height, width) of the output grid; default is
    the input size.
    """
    from evsve.events import AccumFrame

    if isinstance(image, AccumFrame):
        pos = warp(image.pos, h, out_size)
        neg = warp(image.neg, h, out_size)
        return AccumFrame(pos=pos, neg=neg, window=image.window)

    src = np.asarray(image, dtype=np.float64)
    if src.ndim != 2:
        raise ValueError("warp expects a 2-d image or an AccumFrame")
    oh, ow = out_size if out_size is not None else src.shape
    ys, xs = np.mgrid[0:oh, 0:ow]
    pts = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
    mapped = h.apply(pts)
    mx = mapped[:, 0].reshape(oh, ow)
    my = mapped[:, 1].reshape(oh, ow)

    x0 = np.floor(mx).astype(np.int64)
    y0 = np.floor(my).astype(np.int64)
    fx = mx - x0
    fy = my - y0
    hh, ww = src.shape

    def sample(yi, xi):
        ok = (yi >= 0) & (yi < hh) & (xi >= 0) & (xi < ww)
        vals = src[np.clip(yi, 0, hh - 1), np.clip(xi, 0, ww - 1)]
        return np.where(ok, vals, 0.0)

    finite = np.isfinite(mx) & np.isfinite(my)
    fx = np.where(finite, fx, 0.0)
    fy = np.where(finite, fy, 0.0)
    out = (
        sample(y0, x0) * (1 - fy) * (1 - fx)
        + sample(y0, x0 + 1) * (1 - fy) * fx
        + sample(y0 + 1, x0) * fy * (1 - fx)
        + sample(y0 + 1, x0 + 1) * fy * fx
    )
    return np.where(finite, out, 0.0)


def warp_events(stream, h: Homography):
    """Move each event through h as a point map, rounding to the pixel
    grid and dropping events that land outside the sensor. Used to
    emulate a displaced event camera: h maps source coordinates to the
    displaced camera's coordinates."""
    from evsve.events import EventStream

    pts = np.column_stack([stream.x, stream.y]).astype(np.float64)
    mapped = h.apply(pts)
    xn = np.rint(mapped[:, 0]).astype(np.int64)
    yn = np.rint(mapped[:, 1]).astype(np.int64)
    ok = (
        np.isfinite(mapped).all(axis=1)
        & (xn >= 0)
        & (xn < stream.width)
        & (yn >= 0)
        & (yn < stream.height)
    )
    t, x, y, p = stream.t[ok], xn[ok], yn[ok], stream.p[ok]
    order = np.lexsort((x, y, t))
    return EventStream(
        t=t[order], x=x[order], y=y[order], p=p[order],
        width=stream.width, height=stream.height, c=stream.c,
    )


# ---------------------------------------------------------------------------
# Edge-consistency loss

_DX = np.array([[-0.5, 0.0, 0.5]])


def alignment_loss(i_ref, edge_evt):
    """Mean absolute gap between the normalized gradient magnitude of the
    reference map and the event edge map. Differentiable in i_ref; the
    magnitude is rescaled by its maximum (plus a tiny floor so flat
    images stay at zero loss)."""
    edge = np.asarray(edge_evt, dtype=np.float64)
    x = ad.as_tensor(i_ref)
    if x.shape != edge.shape:
        raise ValueError("reference and edge maps must share a shape")
    gx = ad.filter2d(x, _DX)
    gy = ad.filter2d(x, _DX.T)
    mag = ad.sqrt(ad.add(ad.square(gx), ad.square(gy)))
    peak = ad.reduce_max(mag)
    norm = ad.div(mag, ad.add(peak, 1e-8))
    return ad.reduce_mean(ad.absval(ad.sub(norm, edge)))
