"""Command line entry point: synth / train / eval / remove / serve.

Exit codes: 0 success, 2 rejected input, 3 runtime failure. Every command
that writes into an output directory echoes its effective configuration
there (run_config.json) so runs are reproducible from the artifacts alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .config import apply_overrides, flatten_config, load_config_file, update_dataclass
from .errors import DemarkError, InputError
from .images import load_image, save_image
from .metrics import CONDITIONS, evaluate, rmse_w, write_report
from .model import load_model_dir, restore_image
from .synth import PlacementConfig, generate_dataset
from .trainer import PRESETS, TrainConfig, fit, make_preset

log = logging.getLogger("demark")

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_RUNTIME = 3

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


@dataclass
class RunConfig:
    subcommand: str
    config_file: str = ""
    overrides: dict = field(default_factory=dict)
    out: str = ""
    verbosity: int = 0

    def persist(self, out_dir: Path, effective: dict | None = None):
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = dataclasses.asdict(self)
        if effective is not None:
            payload["effective"] = effective
        with open(out_dir / "run_config.json", "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _train_config_epilog() -> str:
    keys = flatten_config(TrainConfig())
    lines = ["config keys (use --set KEY=VALUE, defaults shown):"]
    for key, val in sorted(keys.items()):
        lines.append(f"  {key} = {val!r}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demark", description="Visible watermark removal toolkit"
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a synthetic watermarked dataset")
    p.add_argument("--backgrounds", required=True, help="directory of background images")
    p.add_argument("--watermarks", required=True, help="directory of RGBA watermark images")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=256, help="square sample size")
    p.add_argument("--identity-t", action="store_true", help="skip codec/resample distortion")

    p = sub.add_parser(
        "train",
        help="train the removal model",
        epilog=_train_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", default="paper", choices=sorted(PRESETS))
    p.add_argument("--config", default="", help="JSON config file merged over the preset")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="dotted config override")
    p.add_argument("--resume", action="store_true", help="resume from the out directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint under mask conditions")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", default="", help="run directory with checkpoint + model card")
    p.add_argument("--out", required=True)
    p.add_argument("--conditions", default="fixed", help=f"comma list from {CONDITIONS}")
    p.add_argument("--limit", type=int, default=0, help="evaluate only the first N samples")
    p.add_argument("--model-hook", default="", choices=["", "identity", "input"],
                   help="test hook replacing the model (identity: returns ground truth)")

    p = sub.add_parser("remove", help="remove a watermark from one image")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True,
                   help="mask image path, or 'white' (all ones) / 'none' (all zeros)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-cbkg", default="", help="also write the background component image")

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--checkpoint", default="")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--size-limit-mb", type=int, default=16)

    return parser


def _collect_images(directory: str) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        raise InputError(f"not a directory: {directory}")
    return sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def cmd_synth(args) -> int:
    bgs = _collect_images(args.backgrounds)
    wms = _collect_images(args.watermarks)
    out = Path(args.out)
    placement = PlacementConfig(size=(args.size, args.size), identity_t=args.identity_t)
    manifest = generate_dataset(bgs, wms, args.n, args.seed, out, placement=placement)
    RunConfig(
        subcommand="synth", out=args.out, verbosity=args.verbose,
        overrides={"n": args.n, "seed": args.seed, "size": args.size,
                   "identity_t": args.identity_t},
    ).persist(out)
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    config = make_preset(args.preset)
    if args.config:
        update_dataclass(config, load_config_file(args.config))
    overrides = _parse_overrides(args.overrides)
    apply_overrides(config, overrides)
    config = TrainConfig(**config.to_dict())  # re-validate after mutation
    out = Path(args.out)
    RunConfig(
        subcommand="train", config_file=args.config, overrides=overrides,
        out=args.out, verbosity=args.verbose,
    ).persist(out, effective=config.to_dict())
    ckpt = fit(args.dataset, config, out, resume=args.resume)
    print(ckpt)
    return EXIT_OK


def cmd_eval(args) -> int:
    conditions = tuple(c.strip() for c in args.conditions.split(",") if c.strip())
    forward_fn = None
    model = None
    if args.model_hook == "identity":
        forward_fn = lambda X, M, s: s.G_wf  # noqa: E731
    elif args.model_hook == "input":
        forward_fn = lambda X, M, s: X  # noqa: E731
    else:
        if not args.checkpoint:
            raise InputError("--checkpoint required unless a --model-hook is given")
        model, _ = load_model_dir(args.checkpoint)
    report = evaluate(
        model, args.dataset, conditions=conditions, forward_fn=forward_fn,
        limit=args.limit or None,
    )
    out = Path(args.out)
    paths = write_report(report, out)
    RunConfig(
        subcommand="eval", out=args.out, verbosity=args.verbose,
        overrides={"conditions": list(conditions), "checkpoint": args.checkpoint,
                   "model_hook": args.model_hook, "limit": args.limit},
    ).persist(out)
    print(paths["text"].read_text())
    print(paths["jsonl"])
    return EXIT_OK


def _load_mask_for(image: np.ndarray, mask_arg: str) -> np.ndarray:
    h, w = image.shape[:2]
    if mask_arg in ("white", "ones"):
        return np.ones((h, w, 1), dtype=np.float32)
    if mask_arg in ("none", "zeros"):
        return np.zeros((h, w, 1), dtype=np.float32)
    mask = load_image(mask_arg, channels=1)
    if mask.shape[:2] != (h, w):
        im = Image.fromarray((mask[:, :, 0] * 255).astype(np.uint8))
        mask = np.asarray(im.resize((w, h), Image.BILINEAR), dtype=np.float32) / 255.0
        mask = (mask >= 0.5).astype(np.float32)[:, :, None]
    return mask


def cmd_remove(args) -> int:
    image = load_image(args.image, channels=3)
    mask = _load_mask_for(image, args.mask)
    model, _ = load_model_dir(args.checkpoint)
    out_img, cbkg = restore_image(model, image, mask, want_cbkg=bool(args.dump_cbkg))
    save_image(args.out, out_img)
    if args.dump_cbkg:
        if cbkg is None:
            raise InputError("model has no cleaning branch; cannot dump C_bkg")
        save_image(args.dump_cbkg, cbkg)
    before = rmse_w(image, out_img, mask) if mask.any() else None
    if before is not None:
        log.info("masked rmse between input and output: %.2f", before)
    print(args.out)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        checkpoint_dir=args.checkpoint or None,
        size_limit=args.size_limit_mb * 1024 * 1024,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise InputError(f"override {pair!r} is not KEY=VALUE")
        key, _, value = pair.partition("=")
        out[key.strip()] = value.strip()
    return out


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "remove": cmd_remove,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else
        logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.subcommand](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except DemarkError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
