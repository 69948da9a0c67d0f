"""Gradient-driven splat selection and anisotropic texture upscaling policy.

Every ``cadence`` iterations, splats whose mean per-pixel accumulated
positional-gradient norm strictly exceeds k_G become upscaling candidates.
A candidate's texture doubles along the axis chosen by its anisotropy:
only the long axis when the aspect ratio exceeds k_A and the short axis is
below k_S, otherwise both axes.  Dimensions saturate at the configured cap
and never shrink.
"""

from dataclasses import dataclass

import numpy as np

from .rasterizer import GradientStats, reset_stats
from .texture import DEFAULT_MAX_DIM, atlas_rebuild, upscale

# Paper-reported thresholds.
DEFAULT_K_A = 4.0
DEFAULT_K_S = 0.01
DEFAULT_K_G = 0.00002
DEFAULT_CADENCE = 500


@dataclass
class AdaptiveConfig:
    k_a: float = DEFAULT_K_A
    k_s: float = DEFAULT_K_S
    k_g: float = DEFAULT_K_G
    cadence: int = DEFAULT_CADENCE
    max_dim: int = DEFAULT_MAX_DIM

    def __post_init__(self):
        if self.k_a <= 0 or self.k_s <= 0 or self.k_g <= 0:
            raise ValueError("thresholds must be positive")
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")
        if self.max_dim < 1 or (self.max_dim & (self.max_dim - 1)) != 0:
            raise ValueError("max_dim must be a power of two")


@dataclass
class UpscaleDecision:
    double_u: bool
    double_v: bool


def select_candidates(stats: GradientStats, cfg: AdaptiveConfig):
    """Splat ids whose mean per-pixel gradient norm strictly exceeds k_G.

    The accumulated norm is normalized by the contribution count before
    comparison, so the threshold is resolution-independent.
    """
    count = np.maximum(stats.pixel_count, 1)
    mean = stats.accum_abs_grad / count
    return [int(i) for i in np.nonzero(mean > cfg.k_g)[0]]


def upscale_decision(scale, cfg: AdaptiveConfig) -> UpscaleDecision:
    """Axis choice from the splat's anisotropy: long axis only for thin,
    strongly elongated splats, otherwise both."""
    sx, sy = float(scale[0]), float(scale[1])
    if sx <= 0 or sy <= 0:
        raise ValueError("scale must be positive")
    if sx / sy > cfg.k_a and sy < cfg.k_s:
        return UpscaleDecision(double_u=True, double_v=False)
    if sy / sx > cfg.k_a and sx < cfg.k_s:
        return UpscaleDecision(double_u=False, double_v=True)
    return UpscaleDecision(double_u=True, double_v=True)


def apply_adaptive_step(scene, stats: GradientStats, cfg: AdaptiveConfig,
                        iteration, log_path=None):
    """Upscale candidate textures in place, rebuild the atlas, reset stats.

    Returns (scene, events); each event is a dict with id, old/new dims and
    a reason in {u, v, both, capped}.  When ``log_path`` is given, one
    record per event is appended there.
    """
    candidates = select_candidates(stats, cfg)
    events = []
    if candidates:
        textures = [scene.textures.get(i) for i in range(scene.n)]
        changed = False
        for i in candidates:
            dec = upscale_decision(scene.scale[i], cfg)
            old = textures[i]
            new, capped = upscale(old, dec.double_u, dec.double_v, cap=cfg.max_dim)
            grew = (new.width, new.height) != (old.width, old.height)
            if capped and not grew:
                reason = "capped"
            elif dec.double_u and dec.double_v:
                reason = "both"
            else:
                reason = "u" if dec.double_u else "v"
            events.append(
                {
                    "iter": iteration,
                    "id": i,
                    "old": (old.width, old.height),
                    "new": (new.width, new.height),
                    "reason": reason,
                }
            )
            if grew:
                textures[i] = new
                changed = True
        if changed:
            scene.textures = atlas_rebuild(textures)
    reset_stats(stats)
    if log_path is not None and events:
        with open(log_path, "a", encoding="utf-8") as fh:
            for e in events:
                fh.write(
                    f"iter={e['iter']} id={e['id']} "
                    f"old={e['old'][0]}x{e['old'][1]} "
                    f"new={e['new'][0]}x{e['new'][1]} reason={e['reason']}\n"
                )
    return scene, events
