"""Command line front end.

Subcommands:
  synth        generate a scene and write mosaics, events, and triggers
  align        continue through coarse alignment; writes homography.txt
  reconstruct  continue through optimization; writes HDR frames and report
  run          the whole pipeline including metrics.csv
  metrics      score existing PFM images against references

Every configuration key can be set in a "key value" config file passed
with -c/--config, and any key can be overridden on the command line with
--<key> <value>. Command line values use the same syntax as the file
(booleans accept 0/1/true/false).

Exit codes: 0 success, 2 bad configuration or arguments, 3 a pipeline
stage or input file failed, 1 unexpected internal error.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from dataclasses import fields

from evsve import fileio
from evsve.alignment import EstimationError
from evsve.fileio import FormatError
from evsve.metrics import entropy, psnr, ssim
from evsve.pipeline import ConfigError, PipelineConfig, StageError, run_pipeline
from evsve.radiometry import tone_map

_KEYS = tuple(f.name for f in fields(PipelineConfig))


def _add_config_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("-c", "--config", metavar="FILE", help="key-value config file")
    for f in fields(PipelineConfig):
        sub.add_argument(
            f"--{f.name}",
            metavar="V",
            default=None,
            help=f"override {f.name} (default {f.default!r})",
        )


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    overrides = {
        k: v for k, v in vars(args).items() if k in _KEYS and v is not None
    }
    return cfg.with_overrides(overrides)


def _run_cmd(stop_after: str):
    def fn(args) -> int:
        cfg = _load_config(args)
        result = run_pipeline(cfg, stop_after=stop_after)
        print(f"artifacts in {result.out_dir}")
        if stop_after in ("", "align", "reconstruct"):
            h = result.homography.h
            print("homography " + " ".join(f"{v:.6g}" for v in h.ravel()))
        for row in result.metrics_rows:
            parts = [f"frame {row['frame']}"]
            for key in ("psnr", "ssim", "entropy"):
                if key in row:
                    parts.append(f"{key} {row[key]:.4f}")
            print(" ".join(parts))
        return 0

    return fn


def _cmd_metrics(args) -> int:
    if args.ref and len(args.ref) != len(args.test):
        raise ConfigError("--ref needs one path per --test path")
    for i, tp in enumerate(args.test):
        img = fileio.read_pfm(tp)
        parts = [tp, f"entropy {entropy(tone_map(img)):.4f}"]
        if args.ref:
            ref = fileio.read_pfm(args.ref[i])
            peak = args.peak if args.peak is not None else float(ref.max())
            parts.append(f"psnr {psnr(img, ref, peak=peak):.4f}")
            parts.append(f"ssim {ssim(img, ref, peak=peak):.4f}")
        print(" ".join(parts))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evsve",
        description="Simulation and reconstruction for a dual event / "
        "spatially varying exposure camera.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    for name, stop, doc in (
        ("synth", "synth", "generate scene, mosaics, events, triggers"),
        ("align", "align", "run through coarse alignment"),
        ("reconstruct", "reconstruct", "run through HDR reconstruction"),
        ("run", "", "run the full pipeline with metrics"),
    ):
        sub = subs.add_parser(name, help=doc)
        _add_config_args(sub)
        sub.set_defaults(func=_run_cmd(stop))

    m = subs.add_parser("metrics", help="score PFM images")
    m.add_argument("--test", nargs="+", required=True, metavar="PFM")
    m.add_argument("--ref", nargs="*", default=[], metavar="PFM")
    m.add_argument("--peak", type=float, default=None, help="PSNR/SSIM peak value")
    m.set_defaults(func=_cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (StageError, FormatError, EstimationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
