"""CPU differentiable 2D Gaussian splatting with adaptive anisotropic textures."""

from .geometry import Camera, LocalFrame, RaySplatHit, build_local_frame, ray_splat_uv, project_bbox
from .model import Gaussian2D, Scene, eval_sh, init_scene
from .texture import Texture, TextureAtlas, MemoryReport, memory_report
from .rasterizer import RenderMode, RenderOutput, GradientStats, SceneGradients, render, backward
from .sceneio import save_scene, load_scene, save_checkpoint, load_checkpoint, SceneFormatError
from .adaptive import AdaptiveConfig, UpscaleDecision, select_candidates, upscale_decision, apply_adaptive_step
from .trainer import TrainConfig, Dataset, TrainState, loss, optimizer_step, train, synth_dataset, export_dataset, ingest_dataset, lookat_camera
from .metrics import psnr, ssim, resolution_histogram, timing_report, ResolutionHistogram, TimingReport
from .ppm import read_ppm, write_ppm

__all__ = [
    "Camera", "LocalFrame", "RaySplatHit", "build_local_frame", "ray_splat_uv",
    "project_bbox", "Gaussian2D", "Scene", "eval_sh", "init_scene", "Texture",
    "TextureAtlas", "MemoryReport", "memory_report", "RenderMode",
    "RenderOutput", "GradientStats", "SceneGradients", "render", "backward",
    "save_scene", "load_scene", "save_checkpoint", "load_checkpoint",
    "SceneFormatError", "AdaptiveConfig", "UpscaleDecision",
    "select_candidates", "upscale_decision", "apply_adaptive_step",
    "TrainConfig", "Dataset", "TrainState", "loss", "optimizer_step", "train",
    "synth_dataset", "export_dataset", "ingest_dataset", "lookat_camera",
    "psnr", "ssim", "resolution_histogram", "timing_report",
    "ResolutionHistogram", "TimingReport", "read_ppm", "write_ppm",
]
