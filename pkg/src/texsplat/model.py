"""Scene container: splat parameters, SH color evaluation, initialization.

The scene is stored structure-of-arrays for vectorized rendering; the
``Gaussian2D`` record view exists for construction and inspection.  Opacity
is parameterized through a sigmoid logit so unconstrained optimizer steps
keep it in (0, 1); rotations are re-normalized after each optimizer step.
"""

from dataclasses import dataclass, field

import numpy as np

from .texture import Texture, TextureAtlas, atlas_rebuild

# Real spherical-harmonics basis constants (bands 0..3).
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

SH_OFFSET = 0.5  # fixed channel offset added after the basis sum


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    return np.log(p / (1.0 - p))


@dataclass
class Gaussian2D:
    mu: np.ndarray  # (3,)
    scale: np.ndarray  # (2,) > 0
    rot: np.ndarray  # (4,) unit quaternion (w, x, y, z)
    opacity_logit: float
    sh: np.ndarray  # ((degree+1)^2, 3)


@dataclass
class Scene:
    mu: np.ndarray  # (N, 3)
    scale: np.ndarray  # (N, 2)
    rot: np.ndarray  # (N, 4)
    opacity_logit: np.ndarray  # (N,)
    sh: np.ndarray  # (N, B, 3)
    textures: TextureAtlas
    sh_degree: int
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64)
        if len(self.textures) != self.n:
            raise ValueError("atlas must have one entry per gaussian")

    @property
    def n(self):
        return self.mu.shape[0]

    def gaussian(self, i) -> Gaussian2D:
        return Gaussian2D(
            mu=self.mu[i].copy(),
            scale=self.scale[i].copy(),
            rot=self.rot[i].copy(),
            opacity_logit=float(self.opacity_logit[i]),
            sh=self.sh[i].copy(),
        )

    def texture(self, i) -> Texture:
        return self.textures.get(i)

    @classmethod
    def from_gaussians(cls, gaussians, textures, sh_degree, background=(0, 0, 0)):
        n = len(gaussians)
        bands = (sh_degree + 1) ** 2
        scene = cls(
            mu=np.array([g.mu for g in gaussians], dtype=np.float64).reshape(n, 3),
            scale=np.array([g.scale for g in gaussians], dtype=np.float64).reshape(n, 2),
            rot=np.array([g.rot for g in gaussians], dtype=np.float64).reshape(n, 4),
            opacity_logit=np.array(
                [g.opacity_logit for g in gaussians], dtype=np.float64
            ),
            sh=np.array([g.sh for g in gaussians], dtype=np.float64).reshape(
                n, bands, 3
            ),
            textures=atlas_rebuild(textures),
            sh_degree=sh_degree,
            background=np.asarray(background, dtype=np.float64),
        )
        return scene

    def copy(self):
        return Scene(
            mu=self.mu.copy(),
            scale=self.scale.copy(),
            rot=self.rot.copy(),
            opacity_logit=self.opacity_logit.copy(),
            sh=self.sh.copy(),
            textures=self.textures.copy(),
            sh_degree=self.sh_degree,
            background=self.background.copy(),
        )


def sh_basis(view_dir):
    """Real SH basis values for a unit direction, bands 0..3, shape (16,).

    Callers slice to (degree+1)^2 entries.
    """
    x, y, z = view_dir
    b = np.empty(16, dtype=np.float64)
    b[0] = SH_C0
    b[1] = -SH_C1 * y
    b[2] = SH_C1 * z
    b[3] = -SH_C1 * x
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    b[4] = SH_C2[0] * xy
    b[5] = SH_C2[1] * yz
    b[6] = SH_C2[2] * (2 * zz - xx - yy)
    b[7] = SH_C2[3] * xz
    b[8] = SH_C2[4] * (xx - yy)
    b[9] = SH_C3[0] * y * (3 * xx - yy)
    b[10] = SH_C3[1] * xy * z
    b[11] = SH_C3[2] * y * (4 * zz - xx - yy)
    b[12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
    b[13] = SH_C3[4] * x * (4 * zz - xx - yy)
    b[14] = SH_C3[5] * z * (xx - yy)
    b[15] = SH_C3[6] * x * (xx - 3 * yy)
    return b


def sh_basis_grad(view_dir):
    """Jacobian of sh_basis w.r.t. the (unnormalized-basis) direction, (16, 3)."""
    x, y, z = view_dir
    g = np.zeros((16, 3), dtype=np.float64)
    g[1] = (0.0, -SH_C1, 0.0)
    g[2] = (0.0, 0.0, SH_C1)
    g[3] = (-SH_C1, 0.0, 0.0)
    g[4] = (SH_C2[0] * y, SH_C2[0] * x, 0.0)
    g[5] = (0.0, SH_C2[1] * z, SH_C2[1] * y)
    g[6] = (-2 * SH_C2[2] * x, -2 * SH_C2[2] * y, 4 * SH_C2[2] * z)
    g[7] = (SH_C2[3] * z, 0.0, SH_C2[3] * x)
    g[8] = (2 * SH_C2[4] * x, -2 * SH_C2[4] * y, 0.0)
    g[9] = (SH_C3[0] * 6 * x * y, SH_C3[0] * (3 * x * x - 3 * y * y), 0.0)
    g[10] = (SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y)
    g[11] = (
        -2 * SH_C3[2] * x * y,
        SH_C3[2] * (4 * z * z - x * x - 3 * y * y),
        8 * SH_C3[2] * y * z,
    )
    g[12] = (
        -6 * SH_C3[3] * x * z,
        -6 * SH_C3[3] * y * z,
        SH_C3[3] * (6 * z * z - 3 * x * x - 3 * y * y),
    )
    g[13] = (
        SH_C3[4] * (4 * z * z - 3 * x * x - y * y),
        -2 * SH_C3[4] * x * y,
        8 * SH_C3[4] * x * z,
    )
    g[14] = (2 * SH_C3[5] * x * z, -2 * SH_C3[5] * y * z, SH_C3[5] * (x * x - y * y))
    g[15] = (SH_C3[6] * (3 * x * x - 3 * y * y), -6 * SH_C3[6] * x * y, 0.0)
    return g


def eval_sh(coeffs, view_dir):
    """View-dependent RGB from SH coefficients ((d+1)^2, 3) and a unit direction.

    Output is the basis-weighted sum plus a fixed +0.5 channel offset,
    unclamped; pixels are clamped only at final write.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    bands = coeffs.shape[0]
    b = sh_basis(view_dir)[:bands]
    return b @ coeffs + SH_OFFSET


def init_scene(count, bounds, rng_seed, sh_degree,
               scale_range=(0.05, 0.4), background=(0, 0, 0)):
    """Seed a scene with uniformly scattered splats and 1x1 blank textures.

    Centers are uniform in ``bounds`` (pair of 3-vectors), scales
    log-uniform in ``scale_range``, rotations uniform on the quaternion
    sphere, opacity 0.1, SH band 0 mid-gray (zero residual over the +0.5
    offset), higher bands zero.  Values are rounded through float32 so that
    the float32 scene file roundtrips bit-identically.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    mu = rng.uniform(lo, hi, size=(count, 3))
    scale = np.exp(
        rng.uniform(np.log(scale_range[0]), np.log(scale_range[1]), size=(count, 2))
    )
    rot = rng.normal(size=(count, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    bands = (sh_degree + 1) ** 2
    sh = np.zeros((count, bands, 3), dtype=np.float64)
    op = np.full(count, logit(0.1), dtype=np.float64)

    f32 = lambda a: np.asarray(a, dtype=np.float32).astype(np.float64)
    textures = [Texture.constant() for _ in range(count)]
    return Scene(
        mu=f32(mu),
        scale=f32(scale),
        rot=f32(rot),
        opacity_logit=f32(op),
        sh=f32(sh),
        textures=atlas_rebuild(textures),
        sh_degree=sh_degree,
        background=np.asarray(background, dtype=np.float64),
    )
