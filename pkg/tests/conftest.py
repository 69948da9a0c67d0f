"""Shared builders for randomized scenes and cameras."""

import numpy as np
import pytest

from texsplat.model import Scene, logit
from texsplat.texture import Texture, atlas_rebuild
from texsplat.trainer import lookat_camera

TEXTURE_SIZES = [(1, 1), (2, 1), (1, 2), (2, 2), (4, 2), (2, 4), (4, 4)]


def make_camera(rng, width=16, height=16):
    theta = rng.uniform(0, 2 * np.pi)
    eye = np.array(
        [2.2 * np.sin(theta), rng.uniform(-0.8, 0.8), 2.2 * np.cos(theta)]
    )
    return lookat_camera(eye, (0, 0, 0), (0, 1, 0), focal=1.1 * width,
                         width=width, height=height)


def make_scene(rng, n, sh_degree, background=None, texel_scale=0.5):
    """Random scene with mixed texture sizes and non-trivial texels."""
    bands = (sh_degree + 1) ** 2
    mu = rng.uniform(-0.6, 0.6, size=(n, 3))
    scale = rng.uniform(0.1, 0.5, size=(n, 2))
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    op = logit(rng.uniform(0.3, 0.9, size=n))
    sh = rng.normal(size=(n, bands, 3)) * 0.3
    textures = []
    for i in range(n):
        w, h = TEXTURE_SIZES[int(rng.integers(len(TEXTURE_SIZES)))]
        textures.append(
            Texture(
                width=w, height=h,
                rgb=rng.normal(size=(h, w, 3)) * texel_scale,
                alpha=rng.uniform(0.2, 0.95, size=(h, w)),
            )
        )
    if background is None:
        background = rng.uniform(0, 0.4, size=3)
    return Scene(
        mu=mu, scale=scale, rot=rot, opacity_logit=op, sh=sh,
        textures=atlas_rebuild(textures), sh_degree=sh_degree,
        background=np.asarray(background, dtype=np.float64),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
