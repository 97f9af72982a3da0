"""Cross-modal fusion network, losses, and per-sequence HDR reconstruction.

The reconstruction is variational: a small network (two pyramid encoders,
per-level spectral fusion, a skip-connected decoder, a weight head, and a
mutual-information critic) is optimized from scratch against one input
sequence, rather than trained across a dataset. All parameters are plain
autodiff tensors updated jointly by Adam.

Loss structure, with lambda = (l1..l6) and mixing weights w from the
weight head's per-pixel softmax:

    fuse  = int + alpha * grad
    int   = mean(w_exp |I - I_ref| + w_evt |dlog I - dL_events|)
    grad  = mean(| |grad I| - event edges |)
    total = l1 rec + l2 ssim + l3 vgg + l4 mi + l5 align + l6 fuse

The vgg slot is structural only: perceptual losses need pretrained
weights, so l3 defaults to 0 and no network backs it. The mi term is the
negated sum over pyramid levels of a Donsker-Varadhan bound, so
minimizing the total maximizes the cross-modal mutual information
estimate and simultaneously tightens the critic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from evsve import autodiff as ad
from evsve import fileio
from evsve import spectral
from evsve.alignment import alignment_loss
from evsve.autodiff import Tensor
from evsve.events import AccumFrame, event_edge_map
from evsve.metrics import _gaussian_window
from evsve.radiometry import Crf
from evsve.sve import MosaicFrame, demultiplex, exposure_normalize

LOG_EPS = 1e-4
DEFAULT_LAMBDAS = (1.0, 0.2, 0.0, 0.05, 0.1, 0.5)
DEFAULT_ALPHA = 0.3


@dataclass(frozen=True)
class ReconSettings:
    """Reconstruction configuration with grid-searchable defaults."""

    levels: int = 3
    iters: int = 500
    lr: float = 1e-3
    lambdas: tuple = DEFAULT_LAMBDAS
    alpha: float = DEFAULT_ALPHA
    supervised: bool = True
    width: int = 8
    hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if len(self.lambdas) != 6:
            raise ValueError("need exactly six loss weights")
        if any(l < 0 for l in self.lambdas) or self.alpha < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.iters < 1 or self.levels < 1 or self.width < 1 or self.hidden < 1:
            raise ValueError("iters, levels, width, hidden must be >= 1")
        if not (self.lr > 0):
            raise ValueError("learning rate must be positive")


@dataclass
class FrameInput:
    """One aligned observation: raw mosaic, warped event accumulation, and
    the event log-intensity change linking the previous frame to this one
    (None for the first frame)."""

    mosaic: MosaicFrame
    acc: AccumFrame
    dlog_prev: np.ndarray | None = None

    def __post_init__(self):
        mh, mw = self.mosaic.data.shape
        ah, aw = self.acc.pos.shape
        if (mh, mw) != (2 * ah, 2 * aw):
            raise ValueError("mosaic must be exactly twice the event resolution")
        if self.dlog_prev is not None:
            self.dlog_prev = np.asarray(self.dlog_prev, dtype=np.float64)
            if self.dlog_prev.shape != (ah, aw):
                raise ValueError("log-change map must match event resolution")


@dataclass
class WeightMaps:
    """Per-pixel convex mixing weights; the pair sums to one everywhere."""

    w_exp: Tensor
    w_evt: Tensor

    def __post_init__(self):
        if self.w_exp.shape != self.w_evt.shape:
            raise ValueError("weight maps must share a shape")
        total = self.w_exp.data + self.w_evt.data
        if np.max(np.abs(total - 1.0)) > 1e-6:
            raise ValueError("weights must sum to one per pixel")


@dataclass
class MlpParams:
    """Two-layer perceptron weights for the mutual-information critic."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def params(self) -> list:
        return [self.w1, self.b1, self.w2, self.b2]


def init_mlp(rng, d_in: int, hidden: int, prefix: str = "t_phi") -> MlpParams:
    # zero last layer -> critic starts at 0, so the bound starts at 0
    return MlpParams(
        w1=ad.parameter(
            rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_in, hidden)),
            name=f"{prefix}.fc1.w",
        ),
        b1=ad.parameter(np.zeros(hidden), name=f"{prefix}.fc1.b"),
        w2=ad.parameter(np.zeros((hidden, 1)), name=f"{prefix}.fc2.w"),
        b2=ad.parameter(np.zeros(1), name=f"{prefix}.fc2.b"),
    )


@dataclass
class FusionParams:
    """Every trainable tensor of the reconstruction network."""

    enc_sve: spectral.EncoderParams
    enc_evt: spectral.EncoderParams
    fuse_wc: list
    fuse_kernels: list
    fuse_conv: list
    dec_convs: list
    dec_out: tuple
    g_theta: list
    t_phi: MlpParams

    def params(self) -> list:
        out = self.enc_sve.params() + self.enc_evt.params()
        for w, b in self.fuse_wc + self.fuse_conv + self.dec_convs:
            out.extend([w, b])
        for k in self.fuse_kernels:
            out.extend(k.params())
        out.extend(self.dec_out)
        for w, b in self.g_theta:
            out.extend([w, b])
        out.extend(self.t_phi.params())
        return out

    def state_dict(self) -> dict:
        return {p.name: p.data.copy() for p in self.params()}

    def load_state(self, state: dict) -> None:
        for p in self.params():
            if p.name not in state:
                raise KeyError(f"checkpoint missing tensor {p.name!r}")
            arr = np.asarray(state[p.name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"checkpoint shape mismatch for {p.name!r}")
            p.data = arr.copy()

    def save(self, path) -> None:
        fileio.save_tensors(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state(fileio.load_tensors(path))


def _level_shapes(h: int, w: int, levels: int) -> list:
    shapes = [(h, w)]
    for _ in range(levels - 1):
        h, w = (h + 1) // 2, (w + 1) // 2
        shapes.append((h, w))
    return shapes


def init_params(rng, height: int, width: int, settings: ReconSettings) -> FusionParams:
    """Build all parameter tensors for an event-resolution input of the
    given size. Spectral kernel shapes are tied to the pyramid geometry."""
    nc = settings.width
    lv = settings.levels
    shapes = _level_shapes(height, width, lv)

    enc_sve = spectral.init_encoder(rng, 4, nc, lv, prefix="enc_sve")
    enc_evt = spectral.init_encoder(rng, 2, nc, lv, prefix="enc_evt")
    fuse_wc = [
        spectral._he_conv(rng, nc, 2 * nc, 1, f"fuse.l{i + 1}.w_c") for i in range(lv)
    ]
    fuse_kernels = [
        spectral.init_kernel(rng, nc, sh, sw, prefix=f"fuse.l{i + 1}.K")
        for i, (sh, sw) in enumerate(shapes)
    ]
    fuse_conv = [
        spectral._he_conv(rng, nc, 2 * nc, 3, f"fuse.l{i + 1}.c") for i in range(lv)
    ]
    dec_convs = [
        spectral._he_conv(rng, nc, nc, 3, f"decoder.up{i + 1}") for i in range(lv - 1)
    ]
    dec_out = spectral._he_conv(rng, 1, nc, 3, "decoder.out")
    # start the softplus output near the dark end of the normalized range;
    # an initial output far above the target mean drives every unit
    # downward at once and can kill the whole backbone
    dec_out[1].data[:] = -3.0
    # zero final projection -> exact 0.5/0.5 starting weights
    g1 = spectral._he_conv(rng, nc, 2 * nc, 3, "g_theta.conv1")
    g2 = (
        ad.parameter(np.zeros((2, nc, 3, 3)), name="g_theta.conv2.w"),
        ad.parameter(np.zeros(2), name="g_theta.conv2.b"),
    )
    t_phi = init_mlp(rng, 2 * nc, settings.hidden)
    return FusionParams(
        enc_sve=enc_sve,
        enc_evt=enc_evt,
        fuse_wc=fuse_wc,
        fuse_kernels=fuse_kernels,
        fuse_conv=fuse_conv,
        dec_convs=dec_convs,
        dec_out=dec_out,
        g_theta=[g1, g2],
        t_phi=t_phi,
    )


# ---------------------------------------------------------------------------
# Network forward pieces


def fuse_and_decode(sve_pyr, evt_pyr, params: FusionParams) -> Tensor:
    """Fuse per level and decode coarse-to-fine into a positive HDR map.

    Per level, the SVE and aligned event features are concatenated and
    mixed by a 3x3 conv; the decoder starts at the coarsest mix, and at
    each finer scale upsamples, convolves, and adds the skip. A final
    3x3 conv plus softplus yields a strictly positive 1-channel image.
    """
    if sve_pyr.num_levels != evt_pyr.num_levels:
        raise ValueError("pyramids must have matching depth")
    lv = sve_pyr.num_levels
    skips = []
    for i in range(lv):
        fs, fe = sve_pyr.levels[i], evt_pyr.levels[i]
        if fs.shape != fe.shape:
            raise ValueError("pyramid level shapes must match")
        w, b = params.fuse_conv[i]
        skips.append(spectral.leaky(ad.conv2d(ad.concat([fs, fe], axis=0), w, b)))

    d = skips[-1]
    for i in range(lv - 2, -1, -1):
        w, b = params.dec_convs[i]
        up = ad.upsample2(d, out_hw=(skips[i].shape[1], skips[i].shape[2]))
        d = ad.add(spectral.leaky(ad.conv2d(up, w, b)), skips[i])
    w, b = params.dec_out
    out = ad.softplus(ad.conv2d(d, w, b))
    return ad.reshape(out, (out.shape[1], out.shape[2]))


def align_pyramids(sve_pyr, evt_pyr, params: FusionParams):
    """Spectrally gate each event level against its SVE counterpart."""
    if sve_pyr.num_levels != evt_pyr.num_levels:
        raise ValueError("pyramids must have matching depth")
    aligned = [
        spectral.fuse_level(fs, fe, params.fuse_wc[i], params.fuse_kernels[i])
        for i, (fs, fe) in enumerate(zip(sve_pyr.levels, evt_pyr.levels))
    ]
    return spectral.FeaturePyramid(levels=aligned)


def predict_weights(f_sve, f_evt, g_theta) -> WeightMaps:
    """Per-pixel softmax over two logit channels from finest features."""
    if f_sve.shape != f_evt.shape:
        raise ValueError("feature maps must share a shape")
    (w1, b1), (w2, b2) = g_theta
    h = spectral.leaky(ad.conv2d(ad.concat([f_sve, f_evt], axis=0), w1, b1))
    logits = ad.conv2d(h, w2, b2)
    probs = ad.softmax(logits, axis=0)
    return WeightMaps(
        w_exp=_slice_channel(probs, 0),
        w_evt=_slice_channel(probs, 1),
    )


def _slice_channel(x: Tensor, idx: int) -> Tensor:
    data = x.data[idx]

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        x._accumulate(gx)

    return Tensor(data, parents=(x,), backward=bw)


# ---------------------------------------------------------------------------
# Losses


def loss_int(hdr, i_ref, dlog_evt, prev_hdr, weights: WeightMaps):
    """Weighted intensity consistency; returns (loss, temporal_used).

    The exposure branch penalizes |hdr - i_ref|; the event branch
    penalizes the gap between the temporal log change of the estimate and
    the event-integrated change. Without a previous frame the event
    branch is skipped.
    """
    hdr = ad.as_tensor(hdr)
    ref = np.asarray(i_ref, dtype=np.float64)
    if hdr.shape != ref.shape or hdr.shape != weights.w_exp.shape:
        raise ValueError("loss_int inputs must share a shape")
    term = ad.mul(weights.w_exp, ad.absval(ad.sub(hdr, ref)))
    used = False
    if prev_hdr is not None:
        if dlog_evt is None:
            raise ValueError("temporal term needs the event log-change map")
        dlog = np.asarray(dlog_evt, dtype=np.float64)
        if dlog.shape != ref.shape:
            raise ValueError("loss_int inputs must share a shape")
        prev = ad.as_tensor(prev_hdr)
        dt = ad.sub(ad.log(ad.add(hdr, LOG_EPS)), ad.log(ad.add(prev, LOG_EPS)))
        term = ad.add(term, ad.mul(weights.w_evt, ad.absval(ad.sub(dt, dlog))))
        used = True
    return ad.reduce_mean(term), used


def loss_grad(hdr, edge_evt):
    """Gap between the estimate's normalized gradient magnitude and the
    event edge map; same magnitude convention as the alignment loss."""
    return alignment_loss(hdr, edge_evt)


def loss_rec(hdr, gt):
    hdr = ad.as_tensor(hdr)
    gt = np.asarray(gt, dtype=np.float64)
    if hdr.shape != gt.shape:
        raise ValueError("loss_rec inputs must share a shape")
    return ad.reduce_mean(ad.absval(ad.sub(hdr, gt)))


def loss_ssim(hdr, gt):
    """1 - mean local structural similarity, differentiable in hdr.

    11x11 Gaussian window, sigma 1.5; stabilizers scale with the target's
    dynamic range."""
    hdr = ad.as_tensor(hdr)
    gt = np.asarray(gt, dtype=np.float64)
    if hdr.shape != gt.shape:
        raise ValueError("loss_ssim inputs must share a shape")
    rng_ = float(gt.max() - gt.min())
    if rng_ <= 0:
        rng_ = 1.0
    c1 = (0.01 * rng_) ** 2
    c2 = (0.03 * rng_) ** 2
    win = _gaussian_window()

    mu_x = ad.filter2d(hdr, win)
    mu_y = _filter_np(gt, win)
    var_x = ad.sub(ad.filter2d(ad.mul(hdr, hdr), win), ad.mul(mu_x, mu_x))
    var_y = _filter_np(gt * gt, win) - mu_y * mu_y
    cov = ad.sub(ad.filter2d(ad.mul(hdr, gt), win), ad.mul(mu_x, mu_y))

    num = ad.mul(
        ad.add(ad.mul(ad.mul(mu_x, mu_y), 2.0), c1), ad.add(ad.mul(cov, 2.0), c2)
    )
    den = ad.mul(
        ad.add(ad.add(ad.mul(mu_x, mu_x), mu_y * mu_y), c1),
        ad.add(ad.add(var_x, var_y), c2),
    )
    return ad.sub(1.0, ad.reduce_mean(ad.div(num, den)))


def _filter_np(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(img, ((ph, ph), (pw, pw)), mode="reflect")
    out = np.zeros_like(img)
    for dy in range(kh):
        for dx in range(kw):
            out += kernel[dy, dx] * padded[dy:dy + img.shape[0], dx:dx + img.shape[1]]
    return out


def mine_bound(u, v, t_phi: MlpParams):
    """Donsker-Varadhan mutual-information lower bound for paired rows.

    mean T(u_i, v_i) - log mean exp T(u_i, v_sigma(i)), with the marginal
    built by cyclically shifting v one row; deterministic and adequate as
    a batch shuffle for the bound.
    """
    u, v = ad.as_tensor(u), ad.as_tensor(v)
    if u.ndim != 2 or v.ndim != 2 or u.shape[0] != v.shape[0]:
        raise ValueError("bound needs matching (N, D) row batches")
    if u.shape[0] < 2:
        raise ValueError("bound needs at least two paired rows")

    def critic(a, b):
        h = ad.relu(ad.add(ad.matmul(ad.concat([a, b], axis=1), t_phi.w1), t_phi.b1))
        return ad.add(ad.matmul(h, t_phi.w2), t_phi.b2)

    joint = ad.reduce_mean(critic(u, v))
    marg = ad.reduce_mean(ad.exp(critic(u, ad.roll_rows(v, 1))))
    return ad.sub(joint, ad.log(marg))


def total_loss(l_rec, l_ssim, l_vgg, l_mi, l_align, l_fuse, lambdas=DEFAULT_LAMBDAS):
    """Weighted sum of the six terms; None terms contribute zero."""
    if len(lambdas) != 6:
        raise ValueError("need exactly six loss weights")
    terms = (l_rec, l_ssim, l_vgg, l_mi, l_align, l_fuse)
    total = ad.as_tensor(0.0)
    for lam, term in zip(lambdas, terms):
        if term is None or lam == 0:
            continue
        total = ad.add(total, ad.mul(ad.as_tensor(term), float(lam)))
    return total


def fuse_loss(l_int, l_grad, alpha=DEFAULT_ALPHA):
    return ad.add(l_int, ad.mul(l_grad, float(alpha)))


# ---------------------------------------------------------------------------
# Reconstruction loop


@dataclass
class Report:
    """Optimization record: configuration echo, per-iteration losses,
    convergence flags, and the final per-frame weight maps."""

    settings: ReconSettings
    rows: list = field(default_factory=list)
    temporal_used: bool = False
    supervised: bool = False
    diverged: bool = False
    iters_run: int = 0
    elapsed_s: float = 0.0
    weight_maps: list = field(default_factory=list)
    final_losses: dict = field(default_factory=dict)

    COLUMNS = ("iter", "total", "rec", "ssim", "mi", "align", "int", "grad")

    def to_text(self, include_timing: bool = True) -> str:
        # timing is the one non-deterministic field; callers that need
        # bit-identical reports across runs leave it out
        lines = []
        s = self.settings
        lines.append(f"levels {s.levels}")
        lines.append(f"iters {s.iters}")
        lines.append(f"lr {s.lr!r}")
        lines.append("lambdas " + " ".join(repr(l) for l in s.lambdas))
        lines.append(f"alpha {s.alpha!r}")
        lines.append(f"width {s.width}")
        lines.append(f"hidden {s.hidden}")
        lines.append(f"seed {s.seed}")
        lines.append(f"supervised {int(self.supervised)}")
        lines.append(f"temporal_term {int(self.temporal_used)}")
        lines.append(f"diverged {int(self.diverged)}")
        lines.append(f"iters_run {self.iters_run}")
        if include_timing:
            lines.append(f"elapsed_s {self.elapsed_s:.3f}")
        for key, val in sorted(self.final_losses.items()):
            lines.append(f"final_{key} {val!r}")
        lines.append("")
        lines.append(" ".join(self.COLUMNS))
        for row in self.rows:
            lines.append(
                " ".join(
                    [str(row["iter"])]
                    + [f"{row[c]:.6e}" for c in self.COLUMNS[1:]]
                )
            )
        return "\n".join(lines) + "\n"


def _prepare_frames(frames, crf: Crf):
    """Precompute everything constant during optimization."""
    subs, refs, valids, edges, dlogs = [], [], [], [], []
    for fr in frames:
        stack = demultiplex(fr.mosaic)
        subs.append(stack.as_array())
        i_ref, valid = exposure_normalize(stack, crf)
        refs.append(i_ref)
        valids.append(valid)
        edges.append(event_edge_map(fr.acc))
        dlogs.append(fr.dlog_prev)
    accs = [fr.acc.as_array() for fr in frames]
    return subs, accs, refs, valids, edges, dlogs


def reconstruct(frames, crf: Crf, gt=None, settings: ReconSettings = ReconSettings()):
    """Optimize the fusion network against one aligned sequence.

    frames: list of FrameInput (accumulations already warped onto the SVE
    grid). gt: per-frame ground-truth radiance (list or single array) for
    supervised runs; targets are normalized by the sequence peak so the
    network regresses values near [0, 1]. Returns (hdr list, Report).

    A non-finite loss or gradient aborts the loop and restores the last
    finite parameter state before reporting.
    """
    if not frames:
        raise ValueError("need at least one frame")
    for fr in frames:
        if not isinstance(fr, FrameInput):
            raise ValueError("frames must be FrameInput records")

    n = len(frames)
    eh, ew = frames[0].acc.pos.shape
    for fr in frames:
        if fr.acc.pos.shape != (eh, ew):
            raise ValueError("all frames must share one resolution")

    supervised = gt is not None
    targets = None
    out_scale = 1.0
    if supervised:
        gt_list = [gt] * n if isinstance(gt, np.ndarray) and gt.ndim == 2 else list(gt)
        if len(gt_list) != n:
            raise ValueError("need one ground-truth image per frame")
        gt_arr = [np.asarray(g, dtype=np.float64) for g in gt_list]
        for g in gt_arr:
            if g.shape != (eh, ew):
                raise ValueError("ground truth must match event resolution")
        peak = max(g.max() for g in gt_arr)
        if not (peak > 0):
            raise ValueError("ground truth must contain positive radiance")
        # normalize targets by a robust (90th percentile) scale, not the
        # peak: with peak normalization an HDR target is nearly black
        # almost everywhere and the L1 majority pressure collapses the
        # decoder output to zero, where softplus gradients vanish.
        # Returned images are rescaled to peak units (max value ~1).
        scale = max(float(np.percentile(g, 90.0)) for g in gt_arr)
        if not (scale > 0):
            scale = peak
        targets = [g / scale for g in gt_arr]
        out_scale = scale / peak

    subs, accs, refs, valids, edges, dlogs = _prepare_frames(frames, crf)

    rng = np.random.default_rng(settings.seed)
    params = init_params(rng, eh, ew, settings)
    opt = ad.Adam(params.params(), lr=settings.lr)

    report = Report(settings=settings, supervised=supervised)
    lams = settings.lambdas
    start = time.perf_counter()
    snapshot = params.state_dict()
    hdrs_np = [None] * n
    wmaps_np = [None] * n

    for it in range(settings.iters):
        opt.zero_grad()
        hdr_t = []
        weight_t = []
        mi_u = [[] for _ in range(settings.levels)]
        mi_v = [[] for _ in range(settings.levels)]

        for i in range(n):
            sve_pyr = spectral.build_pyramid(subs[i], params.enc_sve, settings.levels)
            evt_pyr = spectral.build_pyramid(accs[i], params.enc_evt, settings.levels)
            aligned = align_pyramids(sve_pyr, evt_pyr, params)
            hdr_t.append(fuse_and_decode(sve_pyr, aligned, params))
            weight_t.append(
                predict_weights(sve_pyr.levels[0], aligned.levels[0], params.g_theta)
            )
            for l in range(settings.levels):
                mi_u[l].append(
                    ad.reshape(ad.reduce_mean(sve_pyr.levels[l], axis=(1, 2)), (1, -1))
                )
                mi_v[l].append(
                    ad.reshape(ad.reduce_mean(aligned.levels[l], axis=(1, 2)), (1, -1))
                )

        l_int_sum = ad.as_tensor(0.0)
        l_grad_sum = ad.as_tensor(0.0)
        l_align_sum = ad.as_tensor(0.0)
        l_rec_sum = ad.as_tensor(0.0)
        l_ssim_sum = ad.as_tensor(0.0)
        temporal_any = False
        for i in range(n):
            prev = hdr_t[i - 1] if i > 0 else None
            li, used = loss_int(hdr_t[i], refs[i], dlogs[i], prev, weight_t[i])
            temporal_any = temporal_any or used
            l_int_sum = ad.add(l_int_sum, li)
            l_grad_sum = ad.add(l_grad_sum, loss_grad(hdr_t[i], edges[i]))
            l_align_sum = ad.add(l_align_sum, alignment_loss(refs[i], edges[i]))
            if supervised:
                l_rec_sum = ad.add(l_rec_sum, loss_rec(hdr_t[i], targets[i]))
                l_ssim_sum = ad.add(l_ssim_sum, loss_ssim(hdr_t[i], targets[i]))
        inv_n = 1.0 / n
        l_int = ad.mul(l_int_sum, inv_n)
        l_grad = ad.mul(l_grad_sum, inv_n)
        l_align = ad.mul(l_align_sum, inv_n)
        l_fuse = fuse_loss(l_int, l_grad, settings.alpha)
        l_rec = ad.mul(l_rec_sum, inv_n) if supervised else None
        l_ssim = ad.mul(l_ssim_sum, inv_n) if supervised else None

        if n >= 2 and lams[3] > 0:
            bound_sum = ad.as_tensor(0.0)
            for l in range(settings.levels):
                u = ad.concat(mi_u[l], axis=0)
                v = ad.concat(mi_v[l], axis=0)
                bound_sum = ad.add(bound_sum, mine_bound(u, v, params.t_phi))
            l_mi = ad.mul(bound_sum, -1.0)
        else:
            l_mi = None

        total = total_loss(l_rec, l_ssim, None, l_mi, l_align, l_fuse, lams)

        row = {
            "iter": it,
            "total": float(total.data),
            "rec": float(l_rec.data) if l_rec is not None else 0.0,
            "ssim": float(l_ssim.data) if l_ssim is not None else 0.0,
            "mi": float(l_mi.data) if l_mi is not None else 0.0,
            "align": float(l_align.data),
            "int": float(l_int.data),
            "grad": float(l_grad.data),
        }

        if not np.isfinite(row["total"]):
            params.load_state(snapshot)
            report.diverged = True
            break

        snapshot = params.state_dict()
        report.rows.append(row)
        report.iters_run = it + 1
        report.temporal_used = temporal_any

        hdrs_np = [t.data.copy() for t in hdr_t]
        wmaps_np = [(w.w_exp.data.copy(), w.w_evt.data.copy()) for w in weight_t]

        total.backward()
        try:
            opt.step()
        except RuntimeError:
            params.load_state(snapshot)
            report.diverged = True
            break

    report.elapsed_s = time.perf_counter() - start
    report.weight_maps = wmaps_np
    if report.rows:
        last = report.rows[-1]
        report.final_losses = {k: last[k] for k in Report.COLUMNS[1:]}
    if out_scale != 1.0:
        hdrs_np = [None if h is None else h * out_scale for h in hdrs_np]
    return hdrs_np, report
