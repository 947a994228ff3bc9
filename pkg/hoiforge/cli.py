"""
Command-line entry point: hoi-forge {trajgen|render|pack|eval|filter|pipeline}
"""

import argparse
import asyncio
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import __version__
from .config import DEFAULT_CONFIG_PATH, PipelineConfig, load_config
from .engine import HOIForge
from .exceptions import HOIForgeError
from .trajectory import load_pose_sequence

logger = logging.getLogger("hoiforge")

EXIT_OK = 0
EXIT_INTERNAL = 1


def setup_logging(verbose: bool = False) -> None:
    """Sets up basic console logging."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(name)s - [%(levelname)s] - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        type=Path,
        default=DEFAULT_CONFIG_PATH,
        help="INI or JSON pipeline config (default: bundled toy config)",
    )
    common.add_argument("--jobs", type=int, default=1, help="Worker threads for per-frame and per-clip work")
    common.add_argument("--seed-override", type=int, default=None, help="Replace every configured seed with K")
    common.add_argument("--out", type=Path, default=None, help="Output directory (default: config output.directory)")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(
        prog="hoi-forge",
        description="Hand-object interaction poses, conditions, latents and evaluation metrics",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    trajgen = commands.add_parser("trajgen", parents=[common], help="Interpolate and validate a pose sequence")
    trajgen.add_argument("--endpoints", type=Path, default=None, help="Endpoints JSON (default: config assets)")

    render = commands.add_parser("render", parents=[common], help="Rasterize depth/seg/keypoint conditions")
    render.add_argument("--poses", type=Path, default=None, help="Pose sequence JSON (default: OUT/poses/sequence.json)")
    render.add_argument("--object-mesh", type=Path, default=None, help="Object OBJ file (default: config assets)")

    pack = commands.add_parser("pack", parents=[common], help="Encode conditions into latents")
    pack.add_argument("--conditions", type=Path, default=None, help="Conditions directory (default: OUT/conditions)")

    evaluate = commands.add_parser("eval", parents=[common], help="Evaluate a clip manifest")
    evaluate.add_argument("--manifest", type=Path, required=True, help="JSON-lines clip manifest")
    evaluate.add_argument("--report", type=Path, default=None, help="Report path (default: OUT/report.json)")
    evaluate.add_argument("--csv", type=Path, default=None, help="Per-clip CSV path")

    filter_ = commands.add_parser("filter", parents=[common], help="Discard the worst candidates by pose error")
    filter_.add_argument("--manifest", type=Path, required=True, help="JSON-lines candidate manifest")
    filter_.add_argument("--fraction", type=float, default=None, help="Share to discard (default: config)")
    filter_.add_argument("--output", type=Path, required=True, help="Filtered manifest path")

    pipeline = commands.add_parser("pipeline", parents=[common], help="Run every stage and write report.json")
    pipeline.add_argument("--endpoints", type=Path, default=None, help="Endpoints JSON (default: config assets)")
    pipeline.add_argument("--generated", type=Path, default=None, help="Directory with generated output to score")
    pipeline.add_argument("--reference", type=Path, default=None, help="Directory with reference frames/features")
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config)
    if args.seed_override is not None:
        config = config.with_seed(args.seed_override)
    if args.out is not None:
        config = config.with_output(args.out)
    if getattr(args, "object_mesh", None) is not None:
        config = replace(config, assets=replace(config.assets, object_mesh=args.object_mesh))
    return config


async def run(args: argparse.Namespace) -> None:
    config = resolve_config(args)
    out = Path(config.output.directory)
    async with HOIForge(config, jobs=args.jobs) as forge:
        if args.command == "trajgen":
            _, report = await forge.trajgen(args.endpoints, out)
            logger.info("Wrote %s (validation pass=%s)", out / "poses" / "sequence.json", report.passed)

        elif args.command == "render":
            poses = args.poses or out / "poses" / "sequence.json"
            if not poses.is_file():
                raise HOIForgeError(f"pose sequence not found: {poses}")
            result = await forge.render(load_pose_sequence(poses), out)
            logger.info("Wrote %d condition frames and %d tracklets", result.cues.frame_count, len(result.tracklets))

        elif args.command == "pack":
            result = await forge.pack(args.conditions or out / "conditions", out)
            logger.info("Wrote latents %s to %s", result.packed.shape, out / "latents")

        elif args.command == "eval":
            out.mkdir(parents=True, exist_ok=True)
            csv_path = args.csv
            if csv_path is None and config.output.per_clip_csv:
                csv_path = out / "metrics.csv"
            report, _ = await forge.evaluate(args.manifest, csv_path=csv_path)
            report_path = args.report or out / "report.json"
            report.save(report_path)
            logger.info("Wrote %s", report_path)

        elif args.command == "filter":
            filtered = await forge.filter(args.manifest, args.fraction, args.output)
            logger.info("Wrote %s with %d clips", args.output, len(filtered))

        elif args.command == "pipeline":
            report = await forge.pipeline(args.endpoints, args.generated, args.reference, out)
            logger.debug("Report: %s", json.dumps(report))


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, run one command and map failures to exit codes

    Returns:
        0 on success, 2 for invalid input, 3 for shape errors, 1 otherwise
    """
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        asyncio.run(run(args))
    except HOIForgeError as e:
        logger.error("%s", e)
        return e.exit_code
    except OSError as e:
        logger.error("%s", e)
        return EXIT_INTERNAL
    except Exception:
        logger.exception("Internal error")
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
