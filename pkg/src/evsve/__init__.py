"""Event + spatially-varying-exposure (SVE) HDR imaging toolkit.

Synthesizes SVE mosaics and event streams from ground-truth radiance,
aligns the two modalities, and reconstructs HDR images by per-sequence
minimization of a learnable fusion objective on a small built-in
reverse-mode autodiff engine.
"""

from evsve.radiometry import Crf, RadianceImage, apply_crf, invert_crf, tone_map
from evsve.sve import (
    ExposureStack,
    MosaicFrame,
    SvePattern,
    classical_merge,
    demultiplex,
    exposure_normalize,
    mosaic_forward,
    remosaic,
)
from evsve.events import (
    AccumFrame,
    Event,
    EventStream,
    TriggerTable,
    accumulate,
    event_edge_map,
    integrate_log,
    simulate_events,
    window_events,
)
from evsve.alignment import (
    EstimationError,
    Homography,
    MatchSet,
    alignment_loss,
    detect_and_match,
    estimate_homography,
    warp,
    warp_events,
)
from evsve.metrics import entropy, psnr, ssim
from evsve.scenes import SceneData, SceneParams, synth_scene
from evsve.fusion import FrameInput, ReconSettings, Report, reconstruct
from evsve.pipeline import (
    ConfigError,
    PipelineConfig,
    StageError,
    ingest,
    run_pipeline,
)

__version__ = "0.1.0"
