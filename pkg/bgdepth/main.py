import argparse
import sys
from pathlib import Path

import numpy as np
import structlog
from pydantic import ValidationError

from bgdepth.exceptions import BGDepthError, GradientCheckError, UsageError
from bgdepth.logging_utils import setup_logging
from bgdepth.version import get_version

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1


class ArgumentParser(argparse.ArgumentParser):
    """argparse that reports usage errors with exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _grid_params(args):
    from bgdepth.grid import GridParams

    return GridParams(sr_s=args.sr_s, n_bins=args.bins)


def _out_dir(config) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _datasets(config, data_dir):
    """(train, test) samples: a dataset directory for both, or the configured synthetic split."""
    from bgdepth.pipeline.dataset import load_dataset
    from bgdepth.pipeline.synth import synth_dataset

    cfg = config.train_config()
    data_dir = data_dir or cfg.dataset
    if data_dir:
        samples = load_dataset(data_dir, workers=config.workers)
        return samples, samples
    return synth_dataset(cfg.synth, "train"), synth_dataset(cfg.synth, "test")


def cmd_lift(args, config):
    from bgdepth.grid import lift_gray, lift_rgb, summarize, write_grid
    from bgdepth.imaging import load_image, to_gray

    image = load_image(args.image)
    p = _grid_params(args)
    grids = lift_rgb(image, p) if args.rgb else [lift_gray(to_gray(image), p)]
    stem = Path(args.image).stem
    out = _out_dir(config)
    for channel, grid in enumerate(grids):
        suffix = f".c{channel}" if len(grids) > 1 else ""
        path = out / f"{stem}{suffix}.bgrd"
        write_grid(path, grid)
        print(f"path={path}")
        print(summarize(grid).render())


def cmd_slice(args, config):
    from bgdepth.grid import GridParams, normalize, read_grid, slice
    from bgdepth.imaging import load_gray, save_image

    grid = read_grid(args.grid)
    p = GridParams(sr_s=args.sr_s, n_bins=grid.dims[2])
    out_path = _out_dir(config) / f"{Path(args.grid).stem}.slice.pgm"
    save_image(slice(normalize(grid), load_gray(args.reference), p), out_path)
    print(f"path={out_path}")


def cmd_filter(args, config):
    from bgdepth.grid import bilateral_filter
    from bgdepth.imaging import ImageRGB, load_image, save_image, to_gray

    image = load_image(args.image)
    p = _grid_params(args)
    if args.rgb:
        channels = [bilateral_filter(channel, p, args.sigma_s, args.sigma_r).data for channel in image.channels()]
        result = ImageRGB.clipped(np.stack(channels, axis=-1))
        out_path = _out_dir(config) / f"{Path(args.image).stem}.filtered.ppm"
    else:
        result = bilateral_filter(to_gray(image), p, args.sigma_s, args.sigma_r)
        out_path = _out_dir(config) / f"{Path(args.image).stem}.filtered.pgm"
    save_image(result, out_path)
    print(f"path={out_path}")


def cmd_synth(args, config):
    from bgdepth.pipeline.dataset import save_sample
    from bgdepth.pipeline.synth import synth_dataset

    spec = config.train_config().synth
    updates = {k: v for k, v in (("count", args.count), ("test_count", args.test_count)) if v is not None}
    spec = spec.model_validate({**spec.model_dump(), **updates})
    out = _out_dir(config)
    for split in ("train", "test"):
        for sample in synth_dataset(spec, split):
            save_sample(sample, out / split)
    print(f"train={spec.count} test={spec.test_count} path={out}")


def _train_config(args, config, model=None):
    cfg = config.train_config()
    updates = {}
    if model is not None:
        updates["model"] = model
    if args.steps is not None:
        updates["max_steps"] = args.steps
    if args.epochs is not None:
        updates["epochs"] = args.epochs
    return type(cfg).model_validate({**cfg.model_dump(), **updates})


def _run_training(args, config, cfg):
    from bgdepth.pipeline.checkpoint import read_checkpoint
    from bgdepth.pipeline.train import train

    train_samples, _ = _datasets(config, args.data)
    resume = read_checkpoint(args.resume) if args.resume else None
    result = train(cfg, train_samples, output_dir=_out_dir(config), resume_from=resume)
    for entry in result.history:
        print(f"epoch={entry.epoch}\tsteps={entry.steps}\tloss={entry.mean_loss:.8f}")


def cmd_train_bg(args, config):
    from bgdepth.models.bgunet import BGUNetConfig

    cfg = config.train_config()
    model = cfg.model if isinstance(cfg.model, BGUNetConfig) else cfg.model.geometry_model
    _run_training(args, config, _train_config(args, config, model.model_dump()))


def cmd_train_fusion(args, config):
    from bgdepth.tasks.commands.run_ablation import fusion_template

    template = fusion_template(config.train_config()).model_dump()
    if args.mode:
        template["mode"] = args.mode
    if args.geometry:
        template["geometry_checkpoint"] = args.geometry
    if args.geometry_source:
        template["geometry_source"] = args.geometry_source
    template["kind"] = "fusion"
    _run_training(args, config, _train_config(args, config, template))


def _sibling(image_path: Path, suffix: str, loader):
    path = image_path.with_name(image_path.name[: -len(image_path.suffix)] + suffix)
    return loader(path) if path.exists() else None


def cmd_predict(args, config):
    """Depth for each image; ``.seg.ppm``, ``.edge.pgm`` and ``.geom.pgm`` siblings are used when present."""
    from bgdepth.imaging import DepthMap, depth_visualization, load_gray, load_image, save_depth, save_image
    from bgdepth.pipeline.dataset import EDGE_SUFFIX, GEOMETRY_SUFFIX, SEG_SUFFIX, Sample
    from bgdepth.pipeline.evaluate import Predictor

    predictor = Predictor.from_checkpoint(args.checkpoint)
    out = _out_dir(config)
    for name in args.images:
        image_path = Path(name)
        rgb = load_image(image_path)
        sample = Sample(
            id=image_path.stem,
            rgb=rgb,
            depth=DepthMap(np.ones(rgb.shape[:2])),
            seg=_sibling(image_path, SEG_SUFFIX, load_image),
            edge=_sibling(image_path, EDGE_SUFFIX, load_gray),
            geometry=_sibling(image_path, GEOMETRY_SUFFIX, load_gray),
        )
        depth = predictor.predict(sample)
        depth_path = out / f"{image_path.stem}.depth.pgm"
        save_depth(depth, depth_path)
        save_image(depth_visualization(depth), out / f"{image_path.stem}.vis.pgm")
        print(f"path={depth_path}")


def cmd_eval(args, config):
    from bgdepth.metrics.report import render_tsv
    from bgdepth.pipeline.evaluate import GroundTruthPredictor, Predictor, evaluate, write_report

    if not args.checkpoints:
        raise UsageError("eval needs at least one checkpoint, or 'identity'")
    _, test_samples = _datasets(config, args.data)
    rows = []
    for source in args.checkpoints:
        predictor = GroundTruthPredictor() if source == "identity" else Predictor.from_checkpoint(source)
        evaluation = evaluate(predictor, test_samples, workers=config.workers)
        if len(args.checkpoints) == 1:
            text = evaluation.to_tsv()
            break
        rows.append(evaluation.mean.model_copy(update={"sample_id": Path(source).name}))
    else:
        text = render_tsv(rows, label="checkpoint")
    write_report(_out_dir(config) / "report.tsv", text)
    print(text, end="")


def cmd_gradcheck(args, config):
    from bgdepth.autodiff.gradcheck import GRADCHECK_TOLERANCE, run_gradcheck_suite

    results = run_gradcheck_suite(config.train_config().seed)
    for name, error in results.items():
        print(f"{name}\t{error:.3e}")
    failed = sorted(name for name, error in results.items() if not error <= GRADCHECK_TOLERANCE)
    if failed:
        raise GradientCheckError(f"Gradient check failed for: {', '.join(failed)}")


def cmd_ablation(args, config):
    from bgdepth.metrics.report import render_tsv
    from bgdepth.tasks.commands.run_ablation import run_ablation

    train_samples, test_samples = _datasets(config, args.data)
    cfg = _train_config(args, config)
    reports = run_ablation(cfg, train_samples, test_samples, _out_dir(config), workers=config.workers)
    print(render_tsv(reports.values(), label="mode"), end="")


def _add_grid_flags(parser):
    parser.add_argument("--sr-s", type=int, default=2, help="pixels per spatial grid cell")
    parser.add_argument("--bins", type=int, default=16, help="number of range bins")


def _add_training_flags(parser):
    parser.add_argument("--data", help="dataset directory; defaults to the configured synthetic scenes")
    parser.add_argument("--steps", type=int, help="cap on optimisation steps")
    parser.add_argument("--epochs", type=int, help="number of epochs")
    parser.add_argument("--resume", help="checkpoint to resume from")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="bgdepth", description="Bilateral-grid monocular depth estimation")
    parser.add_argument("--version", action="store_true", help="Print the version of bgdepth")
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--seed", type=int, help="seed for training, initialisation and synthesis")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging level")
    parser.add_argument("--workers", type=int, help="threads for dataset loading and evaluation")
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)

    lift = sub.add_parser("lift", help="lift an image into a bilateral grid dump")
    lift.add_argument("image")
    lift.add_argument("--rgb", action="store_true", help="one grid per color channel")
    _add_grid_flags(lift)
    lift.set_defaults(handler=cmd_lift)

    slicer = sub.add_parser("slice", help="slice a grid dump with a reference image")
    slicer.add_argument("grid")
    slicer.add_argument("reference")
    slicer.add_argument("--sr-s", type=int, default=2, help="pixels per spatial grid cell")
    slicer.set_defaults(handler=cmd_slice)

    filt = sub.add_parser("filter", help="classic splat-blur-slice bilateral filter")
    filt.add_argument("image")
    filt.add_argument("--sigma-s", type=float, default=1.0, help="spatial blur in grid cells")
    filt.add_argument("--sigma-r", type=float, default=1.0, help="range blur in bins")
    filt.add_argument("--rgb", action="store_true", help="filter each color channel")
    _add_grid_flags(filt)
    filt.set_defaults(handler=cmd_filter)

    synth = sub.add_parser("synth", help="write a synthetic dataset")
    synth.add_argument("--count", type=int, help="training scenes")
    synth.add_argument("--test-count", type=int, help="held-out scenes")
    synth.set_defaults(handler=cmd_synth)

    train_bg = sub.add_parser("train-bg", help="train the grid UNet")
    _add_training_flags(train_bg)
    train_bg.set_defaults(handler=cmd_train_bg)

    train_fusion = sub.add_parser("train-fusion", help="train the fusion UNet")
    _add_training_flags(train_fusion)
    train_fusion.add_argument("--mode", choices=["full", "rgb_seg_edge", "rgb_seg", "rgb_edge"])
    train_fusion.add_argument("--geometry", help="geometry network checkpoint")
    train_fusion.add_argument("--geometry-source", choices=["checkpoint", "joint", "precomputed"])
    train_fusion.set_defaults(handler=cmd_train_fusion)

    predict = sub.add_parser("predict", help="predict depth maps for images")
    predict.add_argument("checkpoint")
    predict.add_argument("images", nargs="+")
    predict.set_defaults(handler=cmd_predict)

    evaluate = sub.add_parser("eval", help="score checkpoints on a dataset")
    evaluate.add_argument("checkpoints", nargs="*", help="checkpoints, or 'identity' for the ground truth")
    evaluate.add_argument("--data", help="dataset directory; defaults to the synthetic test split")
    evaluate.set_defaults(handler=cmd_eval)

    gradcheck = sub.add_parser("gradcheck", help="finite-difference check of every operation")
    gradcheck.set_defaults(handler=cmd_gradcheck)

    ablation = sub.add_parser("ablation", help="train and score every fusion input variant")
    _add_training_flags(ablation)
    ablation.set_defaults(handler=cmd_ablation)
    return parser


def main(argv=None) -> int:
    from bgdepth.config_utils import get_config

    parser = build_parser()
    args = parser.parse_args(argv)
    if args.version:
        print(get_version())
        return EXIT_OK
    if not getattr(args, "handler", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        overrides = {"seed": args.seed, "output_dir": args.out, "log_level": args.log_level, "workers": args.workers}
        config = get_config(args.config, overrides)
        setup_logging(config.log_level)
        structlog.contextvars.bind_contextvars(command=args.command)
        args.handler(args, config)
    except BGDepthError as e:
        logger.error("Command failed", error=str(e), exit_code=e.exit_code)
        print(f"bgdepth: {e}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        logger.error("Invalid configuration", error=str(e))
        print(f"bgdepth: invalid configuration\n{e}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        structlog.contextvars.unbind_contextvars("command")
    return EXIT_OK


def app():
    sys.exit(main())
