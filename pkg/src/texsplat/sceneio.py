"""Binary scene and checkpoint files.

Little-endian container: magic "A2TG", format version u32, sh_degree u32,
gaussian count u64, background 3xf32; then per-splat arrays in splat order
(mu f32x3, scale f32x2, rot f32x4, opacity_logit f32, sh f32x3(d+1)^2);
then the atlas (entry table of offset u64 / width u16 / height u16 per
splat, texel array length u64, texels f32 RGBA interleaved).

A checkpoint is the same container followed by an "OPTS" optimizer section
holding Adam moments (f64), the iteration counter, the stage marker and
the serialized training RNG state.
"""

import json
import os
import struct

import numpy as np

from .model import Scene
from .texture import TextureAtlas

MAGIC = b"A2TG"
OPT_MAGIC = b"OPTS"
VERSION = 1


class SceneFormatError(ValueError):
    """Raised on malformed scene/checkpoint files; names the bad section."""


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, section):
        if self.pos + n > len(self.data):
            raise SceneFormatError(f"truncated file in section '{section}'")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, section):
        return struct.unpack("<I", self.take(4, section))[0]

    def u64(self, section):
        return struct.unpack("<Q", self.take(8, section))[0]

    def f32_array(self, count, section):
        raw = self.take(4 * count, section)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)

    def f64_array(self, count, section):
        raw = self.take(8 * count, section)
        return np.frombuffer(raw, dtype="<f8").copy()

    @property
    def exhausted(self):
        return self.pos >= len(self.data)


def _scene_bytes(scene: Scene):
    parts = [MAGIC, struct.pack("<II", VERSION, scene.sh_degree)]
    n = scene.n
    parts.append(struct.pack("<Q", n))
    parts.append(np.asarray(scene.background, dtype="<f4").tobytes())
    for arr in (scene.mu, scene.scale, scene.rot, scene.opacity_logit, scene.sh):
        parts.append(np.asarray(arr, dtype="<f4").tobytes())
    atlas = scene.textures
    entry = np.zeros(n, dtype=[("off", "<u8"), ("w", "<u2"), ("h", "<u2")])
    entry["off"] = atlas.offsets
    entry["w"] = atlas.widths
    entry["h"] = atlas.heights
    parts.append(entry.tobytes())
    parts.append(struct.pack("<Q", len(atlas.texels)))
    parts.append(np.asarray(atlas.texels, dtype="<f4").tobytes())
    return b"".join(parts)


def save_scene(scene: Scene, path):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_scene_bytes(scene))
    os.replace(tmp, path)


def _read_scene(r: _Reader) -> Scene:
    if r.take(4, "header") != MAGIC:
        raise SceneFormatError("bad magic in section 'header'")
    version = r.u32("header")
    if version != VERSION:
        raise SceneFormatError(f"unsupported version {version} in section 'header'")
    sh_degree = r.u32("header")
    if sh_degree > 3:
        raise SceneFormatError("invalid sh_degree in section 'header'")
    n = r.u64("header")
    background = r.f32_array(3, "header")
    bands = (sh_degree + 1) ** 2
    mu = r.f32_array(3 * n, "gaussians").reshape(n, 3)
    scale = r.f32_array(2 * n, "gaussians").reshape(n, 2)
    rot = r.f32_array(4 * n, "gaussians").reshape(n, 4)
    op = r.f32_array(n, "gaussians")
    sh = r.f32_array(3 * bands * n, "gaussians").reshape(n, bands, 3)
    raw = r.take(12 * n, "atlas")
    entry = np.frombuffer(raw, dtype=[("off", "<u8"), ("w", "<u2"), ("h", "<u2")])
    texel_len = r.u64("atlas")
    texels = r.f32_array(texel_len, "atlas")
    atlas = TextureAtlas(
        texels=texels,
        offsets=entry["off"].astype(np.int64),
        widths=entry["w"].astype(np.int64),
        heights=entry["h"].astype(np.int64),
    )
    expect = 4 * (atlas.widths * atlas.heights).sum() if n else 0
    if texel_len != expect:
        raise SceneFormatError("texel count mismatch in section 'atlas'")
    if n and np.any(scale <= 0):
        raise SceneFormatError("non-positive scale in section 'gaussians'")
    return Scene(
        mu=mu,
        scale=scale,
        rot=rot,
        opacity_logit=op,
        sh=sh,
        textures=atlas,
        sh_degree=sh_degree,
        background=background,
    )


def load_scene(path) -> Scene:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    scene = _read_scene(r)
    if not r.exhausted:
        raise SceneFormatError("trailing data in section 'atlas'")
    return scene


def save_checkpoint(path, scene, moments=None, iteration=0, stage=0, rng_state=None):
    """Write a scene plus an optimizer section.

    ``moments`` maps parameter-group name to an (m, v) pair of arrays with
    the group's shape.
    """
    parts = [_scene_bytes(scene), OPT_MAGIC]
    meta = {
        "iteration": int(iteration),
        "stage": int(stage),
        "rng_state": rng_state,
        "groups": [],
    }
    blobs = []
    for name, (m, v) in (moments or {}).items():
        meta["groups"].append({"name": name, "shape": list(np.shape(m))})
        blobs.append(np.asarray(m, dtype="<f8").tobytes())
        blobs.append(np.asarray(v, dtype="<f8").tobytes())
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<Q", len(meta_bytes)))
    parts.append(meta_bytes)
    parts.extend(blobs)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read a checkpoint; returns (scene, moments, iteration, stage, rng_state).

    A plain scene file loads with empty optimizer state.
    """
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    scene = _read_scene(r)
    if r.exhausted:
        return scene, {}, 0, 0, None
    if r.take(4, "optimizer") != OPT_MAGIC:
        raise SceneFormatError("bad magic in section 'optimizer'")
    meta_len = r.u64("optimizer")
    try:
        meta = json.loads(r.take(meta_len, "optimizer").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SceneFormatError("corrupt metadata in section 'optimizer'") from exc
    moments = {}
    for group in meta["groups"]:
        shape = tuple(group["shape"])
        count = int(np.prod(shape)) if shape else 1
        m = r.f64_array(count, "optimizer").reshape(shape)
        v = r.f64_array(count, "optimizer").reshape(shape)
        moments[group["name"]] = (m, v)
    return scene, moments, meta["iteration"], meta["stage"], meta.get("rng_state")
