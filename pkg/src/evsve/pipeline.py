"""End-to-end orchestration: configuration, stages, artifacts, ingest.

A run goes scene -> mosaics -> events -> (optional simulated camera
displacement) -> coarse alignment -> warp -> reconstruction -> metrics,
with every product written to the output directory. Failures surface as
StageError tagged with the stage name so the command line can report
which phase broke; artifacts written before the failure are left behind.

Determinism contract: everything that lands in report.txt and the PFM
outputs is a pure function of (config, seeds). Wall-clock numbers go to
a separate timings.txt so reports from identical runs are bit-identical.

Configuration lives in a plain text file of "key value" lines ('#'
comments allowed). Every key has a typed default in PipelineConfig;
unknown keys are rejected rather than ignored so typos cannot silently
fall back to defaults.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from evsve import fileio
from evsve.alignment import (
    EstimationError,
    Homography,
    MatchSet,
    estimate_homography,
    warp,
    warp_events,
)
from evsve.events import (
    EventStream,
    TriggerTable,
    accumulate,
    event_edge_map,
    integrate_log,
    simulate_events,
    window_events,
)
from evsve.fusion import FrameInput, ReconSettings, reconstruct
from evsve.metrics import entropy, psnr, ssim
from evsve.radiometry import Crf, tone_map
from evsve.scenes import SceneParams, synth_scene
from evsve.sve import (
    MosaicFrame,
    SvePattern,
    demultiplex,
    exposure_normalize,
    mosaic_forward,
)


class ConfigError(ValueError):
    """Bad, unknown, or unreadable configuration."""


# Cross-modal patches correlate weaker than same-modality ones, so the
# coarse-align stage accepts lower ZNCC scores than the keypoint matcher
# default and lets RANSAC reject the extra outliers.
MATCH_MIN_SCORE = 0.3
# grid spacing of template anchors and the residual search radius left
# after the global shift pre-search
MATCH_STRIDE = 3
MATCH_SEARCH = 4


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    # scene
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
    seed: int = 0
    # sensor
    tau1: float = 0.95
    tau2: float = 0.45
    tau3: float = 0.55
    tau4: float = 0.005
    t_exp: float = 0.016
    crf: str = "identity-clip"
    gamma: float = 2.2
    noise_sigma: float = 0.0
    # events
    threshold_c: float = 0.1
    log_eps: float = 1e-3
    refractory: float = 0.0
    clip_q: float = 0.99
    rate: float = 60.0
    events_binary: bool = False
    # alignment
    align: bool = True
    ransac_iters: int = 2000
    inlier_px: float = 2.0
    align_seed: int = 0
    corr_file: str = ""
    search_radius: float = 12.0
    perturb_dx: float = 0.0
    perturb_dy: float = 0.0
    perturb_rot_deg: float = 0.0
    perturb_persp: float = 0.0
    # reconstruction
    levels: int = 3
    iters: int = 500
    lr: float = 1e-3
    lambda1: float = 1.0
    lambda2: float = 0.2
    lambda3: float = 0.0
    lambda4: float = 0.05
    lambda5: float = 0.1
    lambda6: float = 0.5
    alpha: float = 0.3
    supervised: bool = True
    width: int = 8
    hidden: int = 64
    recon_seed: int = 0
    # ingest (empty -> synthesize)
    input_events: str = ""
    input_mosaics: str = ""
    input_triggers: str = ""
    # output
    out_dir: str = "out"

    # -- factories ---------------------------------------------------------

    def scene_params(self) -> SceneParams:
        return SceneParams(
            size=self.size,
            frames=self.frames,
            motion=self.motion,
            span=self.span,
            base_radiance=self.base_radiance,
            disk_radius=self.disk_radius,
            disk_vx=self.disk_vx,
            disk_vy=self.disk_vy,
            bg_vx=self.bg_vx,
            bg_vy=self.bg_vy,
            texture_cycles=self.texture_cycles,
            rate=self.rate,
        )

    def pattern(self) -> SvePattern:
        return SvePattern(
            taus=(self.tau1, self.tau2, self.tau3, self.tau4), t_exp=self.t_exp
        )

    def crf_obj(self) -> Crf:
        return Crf(kind=self.crf, gamma=self.gamma)

    def recon_settings(self) -> ReconSettings:
        return ReconSettings(
            levels=self.levels,
            iters=self.iters,
            lr=self.lr,
            lambdas=(
                self.lambda1,
                self.lambda2,
                self.lambda3,
                self.lambda4,
                self.lambda5,
                self.lambda6,
            ),
            alpha=self.alpha,
            supervised=self.supervised,
            width=self.width,
            hidden=self.hidden,
            seed=self.recon_seed,
        )

    def perturb_homography(self):
        """Simulated camera displacement, or None when all terms vanish."""
        if (
            self.perturb_dx == 0
            and self.perturb_dy == 0
            and self.perturb_rot_deg == 0
            and self.perturb_persp == 0
        ):
            return None
        c = (self.size - 1) / 2.0
        th = np.deg2rad(self.perturb_rot_deg)
        rot = np.array(
            [
                [np.cos(th), -np.sin(th), 0.0],
                [np.sin(th), np.cos(th), 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        rot[2, 0] = self.perturb_persp / (10.0 * self.size)
        rot[2, 1] = -self.perturb_persp / (14.0 * self.size)
        to_c = np.array([[1, 0, -c], [0, 1, -c], [0, 0, 1.0]])
        from_c = np.array(
            [[1, 0, c + self.perturb_dx], [0, 1, c + self.perturb_dy], [0, 0, 1.0]]
        )
        return Homography(h=from_c @ rot @ to_c)

    # -- parsing -----------------------------------------------------------

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        try:
            text = Path(path).read_text(encoding="ascii")
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        pairs = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split(None, 1)
            if len(parts) != 2:
                raise ConfigError(f"config line {lineno} is not 'key value'")
            pairs[parts[0]] = parts[1].strip()
        return cls().with_overrides(pairs)

    def with_overrides(self, pairs: dict) -> "PipelineConfig":
        by_name = {f.name: f for f in fields(self)}
        updates = {}
        for key, raw in pairs.items():
            if key not in by_name:
                raise ConfigError(f"unknown config key {key!r}")
            updates[key] = _coerce(key, raw, by_name[key].type)
        cfg = replace(self, **updates)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.scene_params()
            self.pattern()
            self.crf_obj()
            self.recon_settings()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not (self.threshold_c > 0):
            raise ConfigError("threshold_c must be positive")
        if not (self.log_eps > 0):
            raise ConfigError("log_eps must be positive")
        if self.refractory < 0:
            raise ConfigError("refractory must be >= 0")
        if not (0 < self.clip_q <= 1):
            raise ConfigError("clip_q must lie in (0, 1]")
        if self.ransac_iters < 1:
            raise ConfigError("ransac_iters must be >= 1")
        if not (self.inlier_px > 0):
            raise ConfigError("inlier_px must be positive")
        if self.search_radius < 0:
            raise ConfigError("search_radius must be >= 0")
        if not (self.noise_sigma >= 0):
            raise ConfigError("noise_sigma must be >= 0")
        inputs = (self.input_events, self.input_mosaics, self.input_triggers)
        if any(inputs) and not all(inputs):
            raise ConfigError("ingest needs input_events, input_mosaics, input_triggers")

    def echo(self) -> str:
        lines = [f"{f.name} {getattr(self, f.name)!r}" for f in fields(self)]
        return "\n".join(lines) + "\n"


def _coerce(key, raw, ftype):
    ftype = {int: "int", float: "float", bool: "bool", str: "str"}.get(ftype, ftype)
    try:
        if ftype == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# Ingest


@dataclass
class IngestData:
    mosaics: list
    stream: EventStream
    triggers: TriggerTable


def ingest(events_path, mosaic_paths, triggers_path, binary=False) -> IngestData:
    """Load captured inputs and validate their mutual consistency."""
    stream = EventStream.load(events_path, binary=binary)
    times = fileio.read_triggers(triggers_path)
    triggers = TriggerTable(times=times)
    mosaics = []
    pattern = None
    for mp in mosaic_paths:
        data = fileio.read_pfm(mp)
        side = Path(mp).with_suffix(".txt")
        pat = fileio.read_pattern_sidecar(side)
        if pattern is None:
            pattern = pat
        elif pat != pattern:
            raise ValueError("mosaic sidecars disagree on the sensor pattern")
        mosaics.append(MosaicFrame(data=data, pattern=pat))
    if not mosaics:
        raise ValueError("need at least one mosaic")
    if len(times) != len(mosaics) + 1:
        raise ValueError(
            f"trigger count {len(times)} does not fit {len(mosaics)} frames"
        )
    h, w = mosaics[0].data.shape
    for m in mosaics:
        if m.data.shape != (h, w):
            raise ValueError("mosaic sizes disagree")
    if (stream.height, stream.width) != (h // 2, w // 2):
        raise ValueError("event geometry must be half the mosaic size")
    return IngestData(mosaics=mosaics, stream=stream, triggers=triggers)


# ---------------------------------------------------------------------------
# Pipeline


@dataclass
class PipelineResult:
    config: PipelineConfig
    homography: Homography
    hdrs: list
    report: object
    metrics_rows: list
    out_dir: Path


def _edge_image(i_ref: np.ndarray) -> np.ndarray:
    """Normalized gradient magnitude of the tone-mapped reference map;
    the representation both matching inputs share."""
    tm = tone_map(i_ref)
    gx = np.zeros_like(tm)
    gy = np.zeros_like(tm)
    gx[:, 1:-1] = 0.5 * (tm[:, 2:] - tm[:, :-2])
    gy[1:-1, :] = 0.5 * (tm[2:, :] - tm[:-2, :])
    mag = np.hypot(gx, gy)
    peak = mag.max()
    return mag / peak if peak > 0 else mag


def _match_blur(img: np.ndarray, sigma: float = 1.2) -> np.ndarray:
    """Gaussian smoothing applied to both edge maps before matching.

    Event edges are spiky and anisotropic while exposure edges are
    smooth; without shared support the cross-modal patch correlation
    collapses. Peak-normalized so corner strengths stay comparable.
    """
    r = int(np.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    padded = np.pad(img, r, mode="reflect")
    sm = np.apply_along_axis(lambda v: np.convolve(v, k, mode="valid"), 1, padded)
    sm = np.apply_along_axis(lambda v: np.convolve(v, k, mode="valid"), 0, sm)
    peak = sm.max()
    return sm / peak if peak > 0 else sm


def _grid_matches(
    ea: np.ndarray,
    eb: np.ndarray,
    stride: int = MATCH_STRIDE,
    half: int = 5,
    search: int = MATCH_SEARCH,
    min_score: float = MATCH_MIN_SCORE,
) -> MatchSet:
    """Dense ZNCC template search from grid anchors on the exposure edges.

    Corner detectors rarely fire at the same physical sites in the two
    edge representations, which starves mutual-best keypoint matching.
    Anchors on a regular grid of textured exposure patches avoid the
    event-side detection entirely and guarantee spatial spread, which the
    eight-parameter fit needs for conditioning. Subpixel refinement uses
    the same 1-d parabola as the keypoint matcher.
    """
    h, w = ea.shape
    margin = half + search + 1
    if h < 2 * margin + 1 or w < 2 * margin + 1:
        return MatchSet(
            pts_a=np.empty((0, 2)), pts_b=np.empty((0, 2)), scores=np.empty(0)
        )
    ys, xs = np.mgrid[margin:h - margin:stride, margin:w - margin:stride]
    ys, xs = ys.ravel(), xs.ravel()
    dyy, dxx = np.mgrid[-half:half + 1, -half:half + 1]
    pa = ea[ys[:, None, None] + dyy, xs[:, None, None] + dxx].reshape(len(ys), -1)
    pa = pa - pa.mean(axis=1, keepdims=True)
    na = np.linalg.norm(pa, axis=1)
    textured = na > 0.05 * na.max()
    ys, xs, pa, na = ys[textured], xs[textured], pa[textured], na[textured]
    n = len(ys)
    if n == 0:
        return MatchSet(
            pts_a=np.empty((0, 2)), pts_b=np.empty((0, 2)), scores=np.empty(0)
        )
    pa = pa / na[:, None]

    side = 2 * search + 1
    table = np.full((n, side, side), -1.0)
    for iy, dy in enumerate(range(-search, search + 1)):
        for ix, dx in enumerate(range(-search, search + 1)):
            pb = eb[
                (ys + dy)[:, None, None] + dyy, (xs + dx)[:, None, None] + dxx
            ].reshape(n, -1)
            pb = pb - pb.mean(axis=1, keepdims=True)
            nb = np.linalg.norm(pb, axis=1)
            ok = nb > 1e-12
            table[ok, iy, ix] = (pa[ok] * pb[ok] / nb[ok, None]).sum(axis=1)

    flat = table.reshape(n, -1)
    best = flat.argmax(axis=1)
    by, bx = np.divmod(best, side)
    sc = flat[np.arange(n), best]

    def refine(sm, s0, sp):
        den = sm - 2.0 * s0 + sp
        safe = np.where(np.abs(den) < 1e-12, 1.0, den)
        off = 0.5 * (sm - sp) / safe
        return np.clip(np.where(den < -1e-12, off, 0.0), -1.0, 1.0)

    off_x = np.zeros(n)
    off_y = np.zeros(n)
    inner = np.flatnonzero((by > 0) & (by < side - 1) & (bx > 0) & (bx < side - 1))
    off_x[inner] = refine(
        table[inner, by[inner], bx[inner] - 1],
        sc[inner],
        table[inner, by[inner], bx[inner] + 1],
    )
    off_y[inner] = refine(
        table[inner, by[inner] - 1, bx[inner]],
        sc[inner],
        table[inner, by[inner] + 1, bx[inner]],
    )
    keep = sc >= min_score
    pts_a = np.column_stack([xs, ys]).astype(np.float64)
    pts_b = np.column_stack([xs + bx - search + off_x, ys + by - search + off_y])
    return MatchSet(pts_a=pts_a[keep], pts_b=pts_b[keep], scores=sc[keep])


def _global_shift(pairs, radius: int):
    """Integer (dx, dy) displacement maximizing summed zero-mean NCC of
    the paired edge images over all frames.

    Exhaustive search over overlap windows; the winner pre-aligns the
    event side so keypoint matching only has to absorb the residual
    rotation and perspective, where its cross-modal bias is small.
    """
    best, best_score = (0, 0), -np.inf
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            score = 0.0
            for ea, eb in pairs:
                h, w = ea.shape
                ya0, ya1 = max(0, dy), min(h, h + dy)
                xa0, xa1 = max(0, dx), min(w, w + dx)
                if ya1 - ya0 < 8 or xa1 - xa0 < 8:
                    score = -np.inf
                    break
                a = ea[ya0:ya1, xa0:xa1]
                b = eb[ya0 - dy:ya1 - dy, xa0 - dx:xa1 - dx]
                a = a - a.mean()
                b = b - b.mean()
                den = np.sqrt((a * a).sum() * (b * b).sum())
                if den > 1e-12:
                    score += float((a * b).sum() / den)
            if score > best_score:
                best_score, best = score, (dx, dy)
    return best


def _int_shift(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate by whole pixels, zero-filling uncovered borders."""
    out = np.zeros_like(img)
    h, w = img.shape
    ys0, ys1 = max(0, dy), min(h, h + dy)
    xs0, xs1 = max(0, dx), min(w, w + dx)
    out[ys0:ys1, xs0:xs1] = img[ys0 - dy:ys1 - dy, xs0 - dx:xs1 - dx]
    return out


def _write_atomic(path, writer) -> None:
    tmp = str(path) + ".tmp"
    writer(tmp)
    os.replace(tmp, path)


def run_pipeline(config: PipelineConfig, stop_after: str = "") -> PipelineResult:
    """Execute all stages; stop_after ("synth" | "align" | "reconstruct")
    truncates the run after that stage for the partial subcommands."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = []
    t_last = time.perf_counter()

    def mark(stage):
        nonlocal t_last
        now = time.perf_counter()
        timings.append((stage, now - t_last))
        t_last = now

    pattern = config.pattern()
    crf = config.crf_obj()
    ingesting = bool(config.input_events)

    # -- source data
    stage = "synth"
    try:
        if ingesting:
            stage = "ingest"
            mosaic_paths = [p for p in config.input_mosaics.split(",") if p]
            data = ingest(
                config.input_events,
                mosaic_paths,
                config.input_triggers,
                binary=config.events_binary,
            )
            mosaics, stream, triggers = data.mosaics, data.stream, data.triggers
            gt_frames = None
            scene = None
        else:
            scene = synth_scene(config.scene_params(), seed=config.seed)
            triggers = scene.triggers
            gt_frames = scene.gt
            stage = "mosaic"
            mosaics = [
                mosaic_forward(
                    f, pattern, crf, config.noise_sigma, seed=config.seed + 1000 + i
                )
                for i, f in enumerate(scene.full)
            ]
            stage = "events"
            stream = simulate_events(
                scene.video,
                c=config.threshold_c,
                log_eps=config.log_eps,
                refractory=config.refractory,
            )
            stage = "perturb"
            hp = config.perturb_homography()
            if hp is not None:
                stream = warp_events(stream, hp)
    except Exception as exc:
        raise StageError(stage, exc) from exc
    mark(stage)

    n = len(mosaics)
    _write_source_artifacts(out, config, mosaics, gt_frames, stream, triggers)
    mark("write_source")
    if stop_after == "synth":
        return PipelineResult(config, Homography.identity(), [], None, [], out)

    # -- windowing and alignment
    try:
        stage = "align"
        windows = window_events(stream, triggers)[:n]
        accs = [
            accumulate(
                windows[i],
                clip_q=config.clip_q,
                window=(float(triggers.times[i]), float(triggers.times[i + 1])),
            )
            for i in range(n)
        ]
        refs = []
        for m in mosaics:
            i_ref, _ = exposure_normalize(demultiplex(m), crf)
            refs.append(i_ref)
        if not config.align:
            h_est = Homography.identity()
        elif config.corr_file:
            matches = MatchSet.from_file(config.corr_file)
            h_est, _ = estimate_homography(
                matches,
                ransac_iters=config.ransac_iters,
                inlier_px=config.inlier_px,
                seed=config.align_seed,
            )
        else:
            # stage 1: one global integer shift over all frames absorbs the
            # bulk displacement; stage 2: grid template matches on the
            # pre-shifted edges only carry the small residual, then their
            # B coordinates are mapped back before the homography fit.
            sve_edges = [_match_blur(_edge_image(r)) for r in refs]
            evt_edges = [_match_blur(event_edge_map(a)) for a in accs]
            shift_range = max(1, int(round(config.search_radius))) or 12
            dx, dy = _global_shift(list(zip(sve_edges, evt_edges)), shift_range)
            pts_a, pts_b, scores = [], [], []
            for i in range(n):
                ms = _grid_matches(sve_edges[i], _int_shift(evt_edges[i], dx, dy))
                pts_a.append(ms.pts_a)
                pts_b.append(ms.pts_b - np.array([dx, dy], dtype=np.float64))
                scores.append(ms.scores)
            matches = MatchSet(
                pts_a=np.concatenate(pts_a) if pts_a else np.empty((0, 2)),
                pts_b=np.concatenate(pts_b) if pts_b else np.empty((0, 2)),
                scores=np.concatenate(scores) if scores else np.empty(0),
            )
            h_est, _ = estimate_homography(
                matches,
                ransac_iters=config.ransac_iters,
                inlier_px=config.inlier_px,
                seed=config.align_seed,
            )
    except Exception as exc:
        raise StageError("align", exc) from exc
    mark("align")

    _write_atomic(out / "homography.txt", lambda p: h_est.save(p))
    if stop_after == "align":
        return PipelineResult(config, h_est, [], None, [], out)

    # -- warp and reconstruct
    try:
        stage = "warp"
        frames = []
        for i in range(n):
            acc_w = warp(accs[i], h_est)
            dlog = None
            if i > 0:
                dlog = warp(integrate_log(windows[i - 1]), h_est)
            frames.append(FrameInput(mosaic=mosaics[i], acc=acc_w, dlog_prev=dlog))
        stage = "reconstruct"
        settings = config.recon_settings()
        gt_arg = gt_frames if (config.supervised and gt_frames is not None) else None
        hdrs, report = reconstruct(frames, crf, gt=gt_arg, settings=settings)
    except Exception as exc:
        raise StageError(stage, exc) from exc
    mark("reconstruct")

    # -- metrics
    try:
        rows = []
        if gt_frames is not None:
            peak = max(g.max() for g in gt_frames)
            targets = [g / peak for g in gt_frames]
        for i, hdr in enumerate(hdrs):
            row = {"frame": i, "entropy": entropy(tone_map(hdr))}
            if gt_frames is not None:
                row["psnr"] = psnr(hdr, targets[i], peak=1.0)
                row["ssim"] = ssim(hdr, targets[i], peak=1.0)
            rows.append(row)
    except Exception as exc:
        raise StageError("metrics", exc) from exc
    mark("metrics")

    _write_result_artifacts(out, config, h_est, hdrs, report, rows)
    if stop_after != "reconstruct":
        _write_atomic(out / "metrics.csv", lambda p: _write_csv(p, rows))
    _write_atomic(out / "timings.txt", lambda p: _write_timings(p, timings, report))
    return PipelineResult(config, h_est, hdrs, report, rows, out)


def _write_csv(path, rows) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write("frame,psnr,ssim,entropy\n")
        for row in rows:
            p = f"{row['psnr']!r}" if "psnr" in row else ""
            s = f"{row['ssim']!r}" if "ssim" in row else ""
            f.write(f"{row['frame']},{p},{s},{row['entropy']!r}\n")


def _write_timings(path, timings, report) -> None:
    with open(path, "w", encoding="ascii") as f:
        for stage, dt in timings:
            f.write(f"{stage} {dt:.3f}\n")
        if report is not None:
            f.write(f"reconstruct_loop {report.elapsed_s:.3f}\n")


def _write_source_artifacts(out, config, mosaics, gt_frames, stream, triggers):
    _write_atomic(out / "config.txt", lambda p: Path(p).write_text(config.echo()))
    for i, m in enumerate(mosaics):
        _write_atomic(out / f"mosaic_{i:03d}.pfm", lambda p, m=m: fileio.write_pfm(p, m.data))
        _write_atomic(
            out / f"mosaic_{i:03d}.txt",
            lambda p, m=m: fileio.write_pattern_sidecar(p, m.pattern),
        )
    if gt_frames is not None:
        for i, g in enumerate(gt_frames):
            _write_atomic(out / f"gt_{i:03d}.pfm", lambda p, g=g: fileio.write_pfm(p, g))
            _write_atomic(
                out / f"preview_gt_{i:03d}.pgm",
                lambda p, g=g: fileio.write_pgm(p, tone_map(g)),
            )
    name = "events.evt" if config.events_binary else "events.txt"
    _write_atomic(out / name, lambda p: stream.save(p, binary=config.events_binary))
    _write_atomic(out / "triggers.txt", lambda p: fileio.write_triggers(p, triggers.times))
    hp = config.perturb_homography()
    if hp is not None:
        _write_atomic(out / "perturb_homography.txt", lambda p: hp.save(p))


def _write_result_artifacts(out, config, h_est, hdrs, report, rows):
    for i, hdr in enumerate(hdrs):
        _write_atomic(out / f"hdr_{i:03d}.pfm", lambda p, a=hdr: fileio.write_pfm(p, a))
        _write_atomic(
            out / f"preview_hdr_{i:03d}.pgm",
            lambda p, a=hdr: fileio.write_pgm(p, tone_map(a)),
        )
    for i, (w_exp, w_evt) in enumerate(report.weight_maps):
        _write_atomic(out / f"w_exp_{i:03d}.pfm", lambda p, a=w_exp: fileio.write_pfm(p, a))
        _write_atomic(out / f"w_evt_{i:03d}.pfm", lambda p, a=w_evt: fileio.write_pfm(p, a))

    def write_report(p):
        with open(p, "w", encoding="ascii") as f:
            f.write("# configuration\n")
            f.write(config.echo())
            f.write("\n# homography\n")
            for v in h_est.h.ravel():
                f.write(f"{float(v)!r}\n")
            f.write("\n# reconstruction\n")
            f.write(report.to_text(include_timing=False))
            f.write("\n# metrics\n")
            for row in rows:
                parts = [f"frame {row['frame']}"]
                for key in ("psnr", "ssim", "entropy"):
                    if key in row:
                        parts.append(f"{key} {row[key]!r}")
                f.write(" ".join(parts) + "\n")

    _write_atomic(out / "report.txt", write_report)
