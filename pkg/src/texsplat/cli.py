"""Command-line surface: dataset synthesis, training, rendering, evaluation
and statistics export.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.  Config
precedence is built-in defaults < ``--config`` key=value file < command-line
flags; the effective merged config is written next to the outputs, and
unknown config keys are rejected.
"""

import argparse
import json
import os
import sys

import numpy as np

from .adaptive import AdaptiveConfig
from .metrics import (
    psnr,
    resolution_histogram,
    ssim,
    timing_report,
    write_histogram_csv,
    write_metrics_csv,
    write_timing_csv,
)
from .ppm import write_ppm
from .rasterizer import RenderMode, render
from .sceneio import SceneFormatError, load_checkpoint
from .texture import memory_report
from .trainer import TrainConfig, export_dataset, ingest_dataset, synth_dataset, train

# Every tunable reachable from the config file, with its TrainConfig /
# AdaptiveConfig destination and parser.
_INT = int
_FLOAT = float
_BOOL = lambda s: s.lower() in ("1", "true", "yes")
CONFIG_KEYS = {
    "stage1_iters": _INT,
    "stage2_iters": _INT,
    "lr_mu": _FLOAT,
    "lr_scale": _FLOAT,
    "lr_rot": _FLOAT,
    "lr_opacity": _FLOAT,
    "lr_sh": _FLOAT,
    "lr_rgb_texels": _FLOAT,
    "lr_alpha_texels": _FLOAT,
    "loss_lambda": _FLOAT,
    "adaptive_enabled": _BOOL,
    "uniform_texture": _INT,  # side length; 0 disables
    "image_downscale": _INT,
    "eval_interval": _INT,
    "init_count": _INT,
    "sh_degree": _INT,
    "k_a": _FLOAT,
    "k_s": _FLOAT,
    "k_g": _FLOAT,
    "cadence": _INT,
    "max_tex": _INT,
}
ADAPTIVE_KEYS = {"k_a": "k_a", "k_s": "k_s", "k_g": "k_g",
                 "cadence": "cadence", "max_tex": "max_dim"}

MODE_NAMES = {
    "full": RenderMode.FULL,
    "notexture": RenderMode.NO_TEXTURE,
    "nobasecolor": RenderMode.NO_BASE_COLOR,
}


class UsageError(Exception):
    pass


def _read_config_file(path):
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key=value")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise UsageError(f"config line {lineno}: unknown key '{key}'")
        try:
            values[key] = CONFIG_KEYS[key](raw.strip())
        except ValueError as exc:
            raise UsageError(f"config line {lineno}: bad value for '{key}'") from exc
    return values


def _build_train_config(args):
    values = {}
    if args.config:
        values.update(_read_config_file(args.config))
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    adaptive = AdaptiveConfig()
    for key, attr in ADAPTIVE_KEYS.items():
        if key in values:
            setattr(adaptive, attr, values.pop(key))
    adaptive.__post_init__()
    uniform = values.pop("uniform_texture", 0)
    cfg = TrainConfig(
        adaptive=adaptive,
        seed=args.seed,
        uniform_texture=(uniform, uniform) if uniform else None,
        **values,
    )
    return cfg, {**values, **{k: getattr(adaptive, a) for k, a in ADAPTIVE_KEYS.items()},
                 "uniform_texture": uniform, "seed": args.seed}


class _OutputLock:
    """Guards one output directory against concurrent invocations."""

    def __init__(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        self.path = os.path.join(out_dir, ".lock")
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"output directory is locked by another run: {self.path}"
            ) from None
        os.write(self.fd, str(os.getpid()).encode("ascii"))

    def release(self):
        os.close(self.fd)
        os.unlink(self.path)


def _write_effective_config(out_dir, record):
    with open(os.path.join(out_dir, "effective_config.json"), "w",
              encoding="utf-8") as fh:
        json.dump(record, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")


def cmd_synth(args):
    if args.views < 2:
        raise UsageError("--views must be >= 2")
    if args.scene not in ("flat", "checker", "blocks", "stripes"):
        raise UsageError(f"unknown scene '{args.scene}'")
    lock = _OutputLock(args.out)
    try:
        dataset, _ = synth_dataset(args.scene, args.views, args.res, args.seed)
        export_dataset(dataset, args.out)
        _write_effective_config(
            args.out,
            {"scene": args.scene, "views": args.views, "res": args.res,
             "seed": args.seed},
        )
    finally:
        lock.release()
    print(f"wrote {args.views} views to {args.out}")
    return 0


def cmd_train(args):
    cfg, record = _build_train_config(args)
    dataset = ingest_dataset(args.data)
    lock = _OutputLock(args.out)
    try:
        _write_effective_config(args.out, record)
        state, rows = train(dataset, cfg, out_dir=args.out)
    finally:
        lock.release()
    print(f"trained {state.iteration} iterations; outputs in {args.out}")
    return 0


def cmd_render(args):
    mode_key = args.mode.lower().replace("_", "").replace("-", "")
    if mode_key not in MODE_NAMES:
        raise UsageError(f"unknown mode '{args.mode}'")
    scene, _, _, _, _ = load_checkpoint(args.checkpoint)
    dataset = ingest_dataset(args.data)
    if not 0 <= args.camera < len(dataset.views):
        raise UsageError(f"camera index {args.camera} out of range")
    cam, _ = dataset.views[args.camera]
    out = render(scene, cam, MODE_NAMES[mode_key])
    write_ppm(args.out, out.image)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args):
    scene, _, iteration, _, _ = load_checkpoint(args.checkpoint)
    dataset = ingest_dataset(args.data)
    ids = dataset.test_ids or dataset.train_ids
    ps, ss = [], []
    for i in ids:
        cam, target = dataset.views[i]
        image = render(scene, cam).image
        ps.append(psnr(image, target))
        ss.append(ssim(image, target))
    rep = memory_report(scene.n, scene.sh_degree, textures=scene.textures)
    os.makedirs(args.out, exist_ok=True)
    write_metrics_csv(
        os.path.join(args.out, "metrics.csv"),
        [(iteration, float(np.mean(ps)), float(np.mean(ss)), rep.total_bytes)],
    )
    print(
        f"splats {scene.n}  psnr {np.mean(ps):.3f}  ssim {np.mean(ss):.4f}  "
        f"mem {rep.total_mb:.3f} MB (+{rep.overhead_percent:.0f}%)"
    )
    return 0


def cmd_stats(args):
    scene, _, _, _, _ = load_checkpoint(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    hist = resolution_histogram(scene)
    write_histogram_csv(os.path.join(args.out, "histogram.csv"), hist)
    if args.data:
        dataset = ingest_dataset(args.data)
        cam = dataset.views[0][0]
        write_timing_csv(
            os.path.join(args.out, "timing.csv"),
            timing_report(scene, cam, n_frames=args.frames),
        )
        write_ppm(
            os.path.join(args.out, "highlight.ppm"),
            render(_highlight_scene(scene), cam).image,
        )
    print(
        f"1x1 {hist.one_by_one}  square>1 {hist.square_gt1}  "
        f"non-square {hist.non_square}"
    )
    return 0


def _highlight_scene(scene):
    """Tint square >1x1 textures blue and non-square ones red."""
    from .model import SH_C0

    out = scene.copy()
    blue = (np.array([0.1, 0.2, 0.9]) - 0.5) / SH_C0
    red = (np.array([0.9, 0.15, 0.1]) - 0.5) / SH_C0
    for i in range(out.n):
        w = int(out.textures.widths[i])
        h = int(out.textures.heights[i])
        if (w, h) == (1, 1):
            continue
        out.sh[i, :, :] = 0.0
        out.sh[i, 0, :] = blue if w == h else red
    return out


def _add_shared(p, out_required=True):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="reserved; rendering is single-threaded")
    p.add_argument("--out", required=out_required, help="output path")


def build_parser():
    p = argparse.ArgumentParser(
        prog="texsplat",
        description="Differentiable 2D Gaussian splatting with adaptive "
                    "anisotropic textures.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--scene", required=True, help="flat | checker | blocks | stripes")
    sp.add_argument("--views", type=int, default=12)
    sp.add_argument("--res", type=int, default=64)
    _add_shared(sp)
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser(
        "train",
        help="run two-stage training",
        epilog="config keys: " + ", ".join(sorted(CONFIG_KEYS)),
    )
    tp.add_argument("--data", required=True, help="dataset directory")
    for key, parse in CONFIG_KEYS.items():
        flag = "--" + key.replace("_", "-")
        tp.add_argument(flag, dest=key, type=parse, default=None,
                        help=f"config key {key}")
    _add_shared(tp)
    tp.set_defaults(func=cmd_train)

    rp = sub.add_parser("render", help="render a checkpoint view")
    rp.add_argument("--checkpoint", required=True)
    rp.add_argument("--data", required=True, help="dataset directory (cameras)")
    rp.add_argument("--camera", type=int, default=0)
    rp.add_argument("--mode", default="full",
                    help="full | notexture | nobasecolor")
    _add_shared(rp)
    rp.set_defaults(func=cmd_render)

    ep = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    ep.add_argument("--checkpoint", required=True)
    ep.add_argument("--data", required=True)
    _add_shared(ep)
    ep.set_defaults(func=cmd_eval)

    gp = sub.add_parser("stats", help="texture statistics and timing")
    gp.add_argument("--checkpoint", required=True)
    gp.add_argument("--data", help="dataset directory for timing/highlight")
    gp.add_argument("--frames", type=int, default=3)
    _add_shared(gp)
    gp.set_defaults(func=cmd_stats)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, SceneFormatError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
