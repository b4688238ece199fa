"""Command-line entry point.

Subcommands cover the pipeline end to end: ``degrade`` synthesises LR
images, ``train-encoder`` pretrains the degradation encoder, ``train``
runs joint training, ``eval`` scores a checkpoint, ``embed`` dumps
degradation embeddings.  Every run is a pure function of (inputs,
config, seed); artifacts rerun bit-identically.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.  Errors print one line to stderr: ``error: <kind>: <detail>``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import load_config, write_resolved
from .data import load_image, load_manifest, save_image
from .degradation import DegradationSpec, degrade, sample_spec
from .encoder import Encoder
from .errors import ConfigError, DataError, DsatError, NumericError
from .network import DsatModel
from .serialization import load_checkpoint
from .tensor import Tensor, no_grad
from .train import _RNG_EVAL, _sub_records, evaluate_model, run_training

__all__ = ["main", "build_parser"]


def _formatter(prog):
    # fixed width keeps --help output stable across terminals
    return argparse.HelpFormatter(prog, width=80)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsat",
        description="Blind super-resolution with contrastive degradation learning.",
        formatter_class=_formatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser(
        "degrade",
        help="synthesize an LR image from an HR image",
        description="Blur, downsample and add noise to an HR PNG, writing the LR PNG.",
        formatter_class=_formatter,
    )
    p.add_argument("--input", required=True, help="HR input PNG")
    p.add_argument("--out", required=True, help="LR output PNG")
    p.add_argument("--scale", type=int, required=True, choices=(2, 3, 4), help="downscale factor")
    p.add_argument("--sigma", type=float, help="isotropic blur width")
    p.add_argument(
        "--aniso",
        metavar="L1,L2,THETA",
        help="anisotropic blur: covariance eigenvalues and rotation (radians)",
    )
    p.add_argument("--noise", type=float, default=0.0, help="AWGN std on the 0..255 scale")
    p.add_argument("--kernel-size", type=int, default=21, help="blur kernel size (odd)")
    p.add_argument("--seed", type=int, default=0, help="noise seed")

    for name, description in (
        ("train-encoder", "Contrastive pretraining of the degradation encoder."),
        ("train", "Joint training of encoder and SR network."),
    ):
        p = sub.add_parser(
            name,
            help=description.rstrip(".").lower(),
            description=description,
            formatter_class=_formatter,
        )
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--resume", help="checkpoint to continue from")
        if name == "train":
            p.add_argument("--encoder-init", help="pretrained encoder checkpoint")

    p = sub.add_parser(
        "eval",
        help="evaluate a trained checkpoint",
        description="Degrade a pool, super-resolve it and report PSNR/SSIM against bicubic.",
        formatter_class=_formatter,
    )
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--checkpoint", required=True, help="joint-training checkpoint")
    p.add_argument("--out", required=True, help="output directory for the report")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--save-images", action="store_true", help="also write SR PNGs")

    p = sub.add_parser(
        "embed",
        help="emit degradation embeddings as CSV",
        description="Run the degradation encoder on LR patches; one 256-d row per input.",
        formatter_class=_formatter,
    )
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--checkpoint", required=True, help="checkpoint holding the encoder")
    p.add_argument(
        "--input", required=True, nargs="+", help="LR patch PNGs, or one manifest file"
    )
    p.add_argument("--out", required=True, help="output CSV path")
    return parser


def _load_run_config(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _cmd_degrade(args) -> int:
    if (args.sigma is None) == (args.aniso is None):
        raise ConfigError("specify exactly one of --sigma or --aniso")
    if args.sigma is not None:
        spec = DegradationSpec(
            kind="isotropic",
            scale=args.scale,
            sigma=args.sigma,
            noise_sigma=args.noise,
            kernel_size=args.kernel_size,
        )
    else:
        parts = args.aniso.split(",")
        if len(parts) != 3:
            raise ConfigError(f"--aniso wants L1,L2,THETA, got {args.aniso!r}")
        try:
            l1, l2, theta = (float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"--aniso wants three numbers, got {args.aniso!r}")
        spec = DegradationSpec(
            kind="anisotropic",
            scale=args.scale,
            lambda1=l1,
            lambda2=l2,
            theta=theta,
            noise_sigma=args.noise,
            kernel_size=args.kernel_size,
        )
    hr = load_image(args.input)
    h = hr.shape[0] - hr.shape[0] % args.scale
    w = hr.shape[1] - hr.shape[1] % args.scale
    if h == 0 or w == 0:
        raise DataError(f"image {args.input} too small for scale {args.scale}")
    lr = degrade(hr[:h, :w], spec, rng_seed=args.seed)
    save_image(args.out, lr)
    print(f"wrote {args.out} ({lr.shape[1]}x{lr.shape[0]})")
    return 0


def _cmd_train(args, phase: str) -> int:
    config = _load_run_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved(config, out_dir / "resolved_config.ini")
    state = run_training(
        config,
        out_dir,
        phase=phase,
        encoder_init=getattr(args, "encoder_init", None),
        resume=args.resume,
    )
    print(f"{phase} training finished at step {state.step}; artifacts in {out_dir}")
    return 0


def _load_model_bundle(config, checkpoint: str, need_model: bool):
    records = load_checkpoint(checkpoint)
    rng = np.random.default_rng(0)  # architecture only; weights come from the checkpoint
    encoder = Encoder(config.encoder_config(), rng)
    encoder.load_state_arrays(_sub_records(records, "encoder_q."))
    encoder.eval()  # inference embeds single images from stored batch statistics
    model = None
    if need_model:
        model = DsatModel(config.network_config(), rng)
        model.load_state_arrays(_sub_records(records, "model."))
    return encoder, model


def _cmd_eval(args) -> int:
    config = _load_run_config(args)
    encoder, model = _load_model_bundle(config, args.checkpoint, need_model=True)
    pool = config.build_pool()[: config.eval_images]
    if config.mode == "two_spec":
        specs = [
            DegradationSpec(kind="isotropic", scale=config.scale, sigma=s)
            for s in config.two_spec_sigmas
        ]
    else:
        rng = np.random.default_rng([config.seed, _RNG_EVAL])
        specs = [sample_spec(rng, config.scale, config.mode) for _ in range(config.eval_specs)]
    report = evaluate_model(
        model,
        encoder,
        pool,
        specs,
        seed=config.seed,
        zero_d=not config.degradation_learning,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_csv(out_dir / "eval_report.csv")
    if args.save_images:
        _save_eval_images(model, encoder, pool, specs, config, out_dir)
    print(report.summary())
    return 0


def _save_eval_images(model, encoder, pool, specs, config, out_dir: Path) -> None:
    from .train import _derive_seed

    for i, hr in enumerate(pool):
        spec = specs[i % len(specs)]
        h = hr.shape[0] - hr.shape[0] % config.scale
        w = hr.shape[1] - hr.shape[1] % config.scale
        lr = degrade(hr[:h, :w], spec, rng_seed=_derive_seed(config.seed, i))
        lr_chw = np.ascontiguousarray(lr.transpose(2, 0, 1))[None]
        with no_grad():
            _, d = encoder(Tensor(lr_chw))
            if not config.degradation_learning:
                d = Tensor(np.zeros_like(d.data))
            sr = model(Tensor(lr_chw), d).data[0].transpose(1, 2, 0)
        save_image(out_dir / f"sr_{i:03d}.png", np.clip(sr, 0.0, 1.0))


def _cmd_embed(args) -> int:
    config = _load_run_config(args)
    encoder, _ = _load_model_bundle(config, args.checkpoint, need_model=False)
    inputs = args.input
    if len(inputs) == 1 and not inputs[0].lower().endswith(".png"):
        patches = load_manifest(inputs[0])
    else:
        patches = [load_image(p) for p in inputs]
    rows = []
    for patch in patches:
        chw = np.ascontiguousarray(patch.transpose(2, 0, 1))[None]
        with no_grad():
            z, _ = encoder(Tensor(chw))
        rows.append(z.data[0])
    out = Path(args.out)
    with open(out, "w") as fh:
        for row in rows:
            fh.write(",".join(f"{v:.8g}" for v in row) + "\n")
    print(f"wrote {len(rows)} embeddings to {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "degrade":
            return _cmd_degrade(args)
        if args.command == "train-encoder":
            return _cmd_train(args, phase="encoder")
        if args.command == "train":
            return _cmd_train(args, phase="joint")
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "embed":
            return _cmd_embed(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return DataError.exit_code
    except NumericError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return NumericError.exit_code
    except DsatError as exc:  # base-class fallback, config semantics
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
