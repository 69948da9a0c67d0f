"""Two-stage training loop, loss, optimizer and dataset plumbing.

Stage 1 fits plain splats (textures frozen at their 1x1 defaults, rendered
without texture modulation); stage 2 renders full textured splats, unfreezes
texels and runs the adaptive upscaling policy on a fixed cadence.  The loss
is a convex combination of L1 and (1 - SSIM).  Optimization is
adaptive-moment (Adam) with per-group learning rates; rotations are
re-normalized and scales clamped positive after every step.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .adaptive import AdaptiveConfig, apply_adaptive_step
from .geometry import Camera
from .metrics import psnr as psnr_metric
from .metrics import ssim as ssim_metric
from .metrics import ssim_and_grad, write_metrics_csv
from .model import SH_C0, Scene, init_scene, logit
from .ppm import read_ppm, write_ppm
from .rasterizer import GradientStats, RenderMode, backward, render
from .sceneio import load_checkpoint, save_checkpoint
from .texture import Texture, atlas_rebuild, memory_report

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8
SCALE_MIN = 1e-6

PARAM_GROUPS = ("mu", "scale", "rot", "opacity", "sh", "texels")


@dataclass
class TrainConfig:
    stage1_iters: int = 30000
    stage2_iters: int = 30000
    lr_mu: float = 2e-3
    lr_scale: float = 5e-3
    lr_rot: float = 1e-3
    lr_opacity: float = 5e-2
    lr_sh: float = 2.5e-3
    lr_rgb_texels: float = 2.5e-2
    lr_alpha_texels: float = 2.5e-2
    loss_lambda: float = 0.2
    adaptive: AdaptiveConfig = field(default_factory=AdaptiveConfig)
    adaptive_enabled: bool = True
    uniform_texture: tuple = None  # (w, h) fixed-resolution baseline, no adaptivity
    seed: int = 0
    image_downscale: int = 1
    eval_interval: int = 100
    init_count: int = 50
    init_bounds: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    init_scale_range: tuple = (0.05, 0.4)
    sh_degree: int = 0
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise ValueError("iteration counts must be >= 0")
        for lr in (self.lr_mu, self.lr_scale, self.lr_rot, self.lr_opacity,
                   self.lr_sh, self.lr_rgb_texels, self.lr_alpha_texels):
            if lr <= 0:
                raise ValueError("learning rates must be > 0")
        if not 0.0 <= self.loss_lambda <= 1.0:
            raise ValueError("loss_lambda must be in [0, 1]")
        if self.image_downscale < 1:
            raise ValueError("image_downscale must be >= 1")


@dataclass
class Dataset:
    views: list  # (Camera, (H, W, 3) image in [0, 1])
    train_ids: list
    test_ids: list


@dataclass
class TrainState:
    scene: Scene
    moments: dict  # group name -> (m, v) arrays shaped like the parameter
    iteration: int = 0
    stage: int = 0
    adam_t: int = 0
    rng: np.random.Generator = None


def loss(rendered, target, lam):
    """(1-lam)*L1 + lam*(1-SSIM) and its exact gradient w.r.t. ``rendered``."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError("image shapes differ")
    diff = rendered - target
    l1 = np.mean(np.abs(diff))
    d = (1.0 - lam) * np.sign(diff) / diff.size
    if lam > 0.0:
        s, gs = ssim_and_grad(rendered, target)
        value = (1.0 - lam) * l1 + lam * (1.0 - s)
        d = d - lam * gs
    else:
        value = l1
    return value, d


def _init_moments(scene: Scene):
    return {
        "mu": (np.zeros_like(scene.mu), np.zeros_like(scene.mu)),
        "scale": (np.zeros_like(scene.scale), np.zeros_like(scene.scale)),
        "rot": (np.zeros_like(scene.rot), np.zeros_like(scene.rot)),
        "opacity": (
            np.zeros_like(scene.opacity_logit),
            np.zeros_like(scene.opacity_logit),
        ),
        "sh": (np.zeros_like(scene.sh), np.zeros_like(scene.sh)),
        "texels": (
            np.zeros_like(scene.textures.texels),
            np.zeros_like(scene.textures.texels),
        ),
    }


def _texel_lr(scene: Scene, cfg: TrainConfig):
    lr = np.full(scene.textures.texels.shape, cfg.lr_rgb_texels)
    lr[3::4] = cfg.lr_alpha_texels
    return lr


def optimizer_step(state: TrainState, grads, cfg: TrainConfig, frozen=()):
    """One bias-corrected adaptive-moment update over all parameter groups.

    ``grads`` is a SceneGradients; groups in ``frozen`` keep their values
    and moments untouched.
    """
    scene = state.scene
    state.adam_t += 1
    t = state.adam_t
    params = {
        "mu": (scene.mu, grads.d_mu, cfg.lr_mu),
        "scale": (scene.scale, grads.d_scale, cfg.lr_scale),
        "rot": (scene.rot, grads.d_rot, cfg.lr_rot),
        "opacity": (scene.opacity_logit, grads.d_opacity_logit, cfg.lr_opacity),
        "sh": (scene.sh, grads.d_sh, cfg.lr_sh),
        "texels": (scene.textures.texels, grads.d_texels, _texel_lr(scene, cfg)),
    }
    bc1 = 1.0 - ADAM_B1**t
    bc2 = 1.0 - ADAM_B2**t
    for name, (p, g, lr) in params.items():
        if name in frozen:
            continue
        m, v = state.moments[name]
        m *= ADAM_B1
        m += (1.0 - ADAM_B1) * g
        v *= ADAM_B2
        v += (1.0 - ADAM_B2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    # Constraint projection: unit quaternions, strictly positive scales.
    norms = np.linalg.norm(scene.rot, axis=1, keepdims=True)
    scene.rot /= np.where(norms > 0, norms, 1.0)
    np.maximum(scene.scale, SCALE_MIN, out=scene.scale)
    return state


def _remap_texel_moments(state: TrainState, old_atlas, new_atlas):
    """Carry per-texel moments across an atlas rebuild.

    Unchanged textures keep their moments at the new offsets; upscaled ones
    start from zero (stale second moments would misstate curvature for
    texels that never received gradients).
    """
    old_m, old_v = state.moments["texels"]
    m = np.zeros_like(new_atlas.texels)
    v = np.zeros_like(new_atlas.texels)
    for i in range(len(new_atlas)):
        if (
            new_atlas.widths[i] == old_atlas.widths[i]
            and new_atlas.heights[i] == old_atlas.heights[i]
        ):
            size = int(4 * new_atlas.widths[i] * new_atlas.heights[i])
            src = int(old_atlas.offsets[i])
            dst = int(new_atlas.offsets[i])
            m[dst : dst + size] = old_m[src : src + size]
            v[dst : dst + size] = old_v[src : src + size]
    state.moments["texels"] = (m, v)


def _evaluate(scene, dataset: Dataset, ids):
    ps, ss = [], []
    for i in ids:
        cam, target = dataset.views[i]
        out = render(scene, cam, RenderMode.FULL)
        ps.append(psnr_metric(out.image, target))
        ss.append(ssim_metric(out.image, target))
    return float(np.mean(ps)), float(np.mean(ss))


def train(dataset: Dataset, cfg: TrainConfig, scene=None, out_dir=None,
          resume_from=None):
    """Run both stages; returns (TrainState, metric rows).

    Metric rows are (iter, psnr, ssim, mem_bytes) over the test split (the
    train split when no test view exists).  With ``out_dir`` the run also
    writes metrics.csv, events.log, run.log and checkpoint.bin there.
    """
    if not dataset.train_ids:
        raise ValueError("train split is empty")
    eval_ids = dataset.test_ids or dataset.train_ids
    if resume_from is not None:
        scene, moments, iteration, stage, rng_state = load_checkpoint(resume_from)
        state = TrainState(scene=scene, moments=moments or _init_moments(scene),
                           iteration=iteration, stage=stage, adam_t=iteration,
                           rng=np.random.default_rng(cfg.seed))
        if rng_state is not None:
            state.rng.bit_generator.state = json.loads(rng_state)
    else:
        if scene is None:
            scene = init_scene(
                cfg.init_count, cfg.init_bounds, cfg.seed, cfg.sh_degree,
                scale_range=cfg.init_scale_range, background=cfg.background,
            )
        if cfg.uniform_texture is not None:
            w, h = cfg.uniform_texture
            scene.textures = atlas_rebuild(
                [Texture.constant(width=w, height=h) for _ in range(scene.n)]
            )
        state = TrainState(scene=scene, moments=_init_moments(scene),
                           rng=np.random.default_rng(cfg.seed))

    events_path = run_log = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        events_path = os.path.join(out_dir, "events.log")
        open(events_path, "w", encoding="utf-8").close()
        run_log = open(os.path.join(out_dir, "run.log"), "w", encoding="utf-8")
        run_log.write(f"config {json.dumps(_config_record(cfg), sort_keys=True)}\n")

    stats = GradientStats.zeros(state.scene.n)
    metric_rows = []
    n_upscaled_total = 0
    total_iters = cfg.stage1_iters + cfg.stage2_iters

    def evaluate(last_l1):
        p, s = _evaluate(state.scene, dataset, eval_ids)
        mem = memory_report(
            state.scene.n, state.scene.sh_degree, textures=state.scene.textures
        ).total_bytes
        metric_rows.append((state.iteration, p, s, mem))
        if run_log is not None:
            run_log.write(
                f"{state.iteration} {p:.6f} {s:.6f} {last_l1:.6f} "
                f"{mem} {n_upscaled_total}\n"
            )
            run_log.flush()

    last_l1 = 0.0
    while state.iteration < total_iters:
        stage2 = state.iteration >= cfg.stage1_iters
        state.stage = 2 if stage2 else 1
        mode = RenderMode.FULL if stage2 else RenderMode.NO_TEXTURE
        vid = dataset.train_ids[int(state.rng.integers(len(dataset.train_ids)))]
        cam, target = dataset.views[vid]
        out = render(state.scene, cam, mode, record=True)
        _, d_image = loss(out.image, target, cfg.loss_lambda)
        last_l1 = float(np.mean(np.abs(out.image - target)))
        grads, step_stats = backward(
            state.scene, cam, mode, d_image, forward_out=out
        )
        stats.add(step_stats)
        frozen = () if stage2 else ("texels",)
        optimizer_step(state, grads, cfg, frozen=frozen)
        state.iteration += 1

        if stage2 and cfg.adaptive_enabled and cfg.uniform_texture is None:
            it2 = state.iteration - cfg.stage1_iters
            if it2 % cfg.adaptive.cadence == 0:
                old_atlas = state.scene.textures
                _, events = apply_adaptive_step(
                    state.scene, stats, cfg.adaptive, state.iteration,
                    log_path=events_path,
                )
                grown = [e for e in events if e["old"] != e["new"]]
                if grown:
                    _remap_texel_moments(state, old_atlas, state.scene.textures)
                    n_upscaled_total += len(grown)
        elif not stage2 and state.iteration == cfg.stage1_iters:
            # Stage boundary: the selection signal restarts with stage 2.
            stats = GradientStats.zeros(state.scene.n)

        if state.iteration % cfg.eval_interval == 0 or state.iteration == total_iters:
            evaluate(last_l1)

    if out_dir is not None:
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), metric_rows)
        save_checkpoint(
            os.path.join(out_dir, "checkpoint.bin"),
            state.scene,
            moments=state.moments,
            iteration=state.iteration,
            stage=state.stage,
            rng_state=json.dumps(state.rng.bit_generator.state, sort_keys=True),
        )
        run_log.close()
    return state, metric_rows


def _config_record(cfg: TrainConfig):
    rec = {}
    for k, v in vars(cfg).items():
        if isinstance(v, AdaptiveConfig):
            rec[k] = vars(v)
        else:
            rec[k] = v if not isinstance(v, tuple) else list(np.ravel(v))
    return rec


def lookat_camera(eye, target, up, focal, width, height) -> Camera:
    """Pinhole camera at ``eye`` looking at ``target``; image +y points down."""
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    f /= np.linalg.norm(f)
    r = np.cross(f, np.asarray(up, dtype=np.float64))
    r /= np.linalg.norm(r)
    u = np.cross(r, f)
    R = np.stack([r, -u, f])
    V = np.eye(4)
    V[:3, :3] = R
    V[:3, 3] = -R @ eye
    K = np.array(
        [
            [focal, 0.0, width / 2.0, 0.0],
            [0.0, focal, height / 2.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ]
    )
    return Camera(world_to_screen=K @ V, width=width, height=height, origin=eye)


def _card_scene(kind):
    """Ground-truth card: a grid of opaque splats in the z=0 plane.

    ``flat`` is one color, ``checker`` alternates per cell, ``blocks``
    alternates per 3x3 block of cells (coarse checkerboard with detail
    only along block borders), ``stripes`` uses thin column-aligned
    splats with alternating colors.
    """
    grid = 12
    half = 0.8
    step = 2 * half / grid
    centers = -half + step * (np.arange(grid) + 0.5)
    flat_color = (158 / 255, 112 / 255, 76 / 255)
    palette = {
        "flat": [flat_color, flat_color],
        "checker": [(0.85, 0.15, 0.10), (0.10, 0.20, 0.85)],
        "blocks": [(0.85, 0.15, 0.10), (0.10, 0.20, 0.85)],
        "stripes": [(0.90, 0.80, 0.10), (0.12, 0.60, 0.25)],
    }[kind]
    mu, scale, rot, op, sh = [], [], [], [], []
    for j, cy in enumerate(centers):
        for i, cx in enumerate(centers):
            mu.append((cx, cy, 0.0))
            if kind == "stripes":
                scale.append((step * 0.22, step * 0.75))
                color = palette[i % 2]
            elif kind == "blocks":
                scale.append((step * 0.62, step * 0.62))
                color = palette[(i // 3 + j // 3) % 2]
            else:
                scale.append((step * 0.62, step * 0.62))
                color = palette[(i + j) % 2]
            rot.append((1.0, 0.0, 0.0, 0.0))
            op.append(logit(0.98))
            sh.append([[(c - 0.5) / SH_C0 for c in color]])
    n = len(mu)
    scene = Scene(
        mu=np.asarray(mu, dtype=np.float64),
        scale=np.asarray(scale, dtype=np.float64),
        rot=np.asarray(rot, dtype=np.float64),
        opacity_logit=np.asarray(op, dtype=np.float64),
        sh=np.asarray(sh, dtype=np.float64),
        textures=atlas_rebuild([Texture.constant() for _ in range(n)]),
        sh_degree=0,
        # The flat card sits on a background of its own color so the
        # target is uniform edge to edge.
        background=np.array(flat_color if kind == "flat" else (0.0, 0.0, 0.0)),
    )
    return scene


def _split_every_eighth(n_views):
    test = [i for i in range(n_views) if i % 8 == 0]
    train = [i for i in range(n_views) if i % 8 != 0]
    return train, test


def synth_dataset(kind, n_views, resolution, seed):
    """Render a known card scene from cameras on a circle.

    Returns (Dataset, ground-truth scene).  Images are quantized through
    8-bit like the on-disk format so in-memory and ingested datasets agree.
    """
    if kind not in ("flat", "checker", "blocks", "stripes"):
        raise ValueError(f"unknown scene kind '{kind}'")
    if n_views < 2:
        raise ValueError("n_views must be >= 2")
    gt = _card_scene(kind)
    rng = np.random.default_rng(seed)
    views = []
    for k in range(n_views):
        theta = 2.0 * np.pi * k / n_views
        jitter = rng.uniform(-0.05, 0.05, size=2)
        eye = np.array(
            [
                0.75 * np.sin(theta) + jitter[0],
                0.55 * np.cos(theta) + jitter[1],
                2.3,
            ]
        )
        cam = lookat_camera(
            eye, (0.0, 0.0, 0.0), (0.0, 1.0, 0.0),
            focal=1.45 * resolution, width=resolution, height=resolution,
        )
        image = render(gt, cam, RenderMode.FULL).image
        image = np.clip(np.rint(image * 255.0), 0, 255) / 255.0
        views.append((cam, image))
    train, test = _split_every_eighth(n_views)
    return Dataset(views=views, train_ids=train, test_ids=test), gt


def export_dataset(dataset: Dataset, dir_path):
    """Write cameras.json plus one 8-bit PPM per view."""
    os.makedirs(dir_path, exist_ok=True)
    records = []
    for i, (cam, image) in enumerate(dataset.views):
        name = f"view_{i:03d}.ppm"
        write_ppm(os.path.join(dir_path, name), image)
        records.append(
            {
                "file": name,
                "width": cam.width,
                "height": cam.height,
                "world_to_screen": [float(x) for x in cam.world_to_screen.ravel()],
                "origin": [float(x) for x in cam.origin],
            }
        )
    with open(os.path.join(dir_path, "cameras.json"), "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=1)
        fh.write("\n")


def ingest_dataset(dir_path) -> Dataset:
    """Load a dataset directory; test split is every eighth view."""
    cam_path = os.path.join(dir_path, "cameras.json")
    if not os.path.isfile(cam_path):
        raise ValueError(f"missing cameras.json in {dir_path}")
    try:
        with open(cam_path, "r", encoding="utf-8") as fh:
            records = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed cameras.json in {dir_path}: {exc}") from exc
    views = []
    shape = None
    for rec in records:
        for key in ("file", "width", "height", "world_to_screen", "origin"):
            if key not in rec:
                raise ValueError(
                    f"cameras.json record missing field '{key}' "
                    f"(file={rec.get('file', '?')})"
                )
        img_path = os.path.join(dir_path, rec["file"])
        if not os.path.isfile(img_path):
            raise ValueError(f"missing image file '{rec['file']}'")
        image = read_ppm(img_path)
        if image.shape[:2] != (rec["height"], rec["width"]):
            raise ValueError(f"dimension mismatch for image '{rec['file']}'")
        if shape is None:
            shape = image.shape
        elif image.shape != shape:
            raise ValueError(f"inconsistent image size for '{rec['file']}'")
        cam = Camera(
            world_to_screen=np.asarray(
                rec["world_to_screen"], dtype=np.float64
            ).reshape(4, 4),
            width=int(rec["width"]),
            height=int(rec["height"]),
            origin=np.asarray(rec["origin"], dtype=np.float64),
        )
        views.append((cam, image))
    train, test = _split_every_eighth(len(views))
    return Dataset(views=views, train_ids=train, test_ids=test)
