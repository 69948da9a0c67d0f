"""Per-splat variable-resolution RGBA textures and the packed atlas.

Each splat carries an RGB texture (additive color residual, unbounded) and
an alpha texture (multiplicative opacity, clamped to [0, 1] at sample
time).  Width and height are independent powers of two up to a configured
cap.  All textures are stored in one flat RGBA-interleaved texel array with
per-splat (offset, width, height) metadata; texel (x, y) of entry i lives
at offset_i + 4 * (y * width_i + x).
"""

from dataclasses import dataclass, field

import numpy as np

DEFAULT_MAX_DIM = 4
BYTES_PER_SCALAR = 4  # float32 accounting


def _check_dim(n, cap):
    return n >= 1 and n <= cap and (n & (n - 1)) == 0


@dataclass
class Texture:
    """One splat's texel grid.  ``rgb`` is (h, w, 3), ``alpha`` is (h, w)."""

    width: int
    height: int
    rgb: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64).reshape(
            self.height, self.width, 3
        )
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(
            self.height, self.width
        )

    @classmethod
    def constant(cls, width=1, height=1, rgb=(0.0, 0.0, 0.0), alpha=1.0):
        return cls(
            width=width,
            height=height,
            rgb=np.tile(np.asarray(rgb, dtype=np.float64), (height, width, 1)),
            alpha=np.full((height, width), alpha, dtype=np.float64),
        )


@dataclass
class TextureAtlas:
    """Densely packed texel store for a whole scene."""

    texels: np.ndarray = field(default_factory=lambda: np.zeros(0))
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    widths: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    heights: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.offsets)

    def get(self, i) -> Texture:
        w = int(self.widths[i])
        h = int(self.heights[i])
        off = int(self.offsets[i])
        block = self.texels[off : off + 4 * w * h].reshape(h, w, 4)
        return Texture(width=w, height=h, rgb=block[:, :, :3].copy(),
                       alpha=block[:, :, 3].copy())

    def put(self, i, tex: Texture):
        """Overwrite entry i in place; dimensions must match."""
        if tex.width != self.widths[i] or tex.height != self.heights[i]:
            raise ValueError("dimension mismatch; rebuild the atlas instead")
        off = int(self.offsets[i])
        block = np.concatenate([tex.rgb, tex.alpha[:, :, None]], axis=2)
        self.texels[off : off + 4 * tex.width * tex.height] = block.ravel()

    def copy(self):
        return TextureAtlas(
            texels=self.texels.copy(),
            offsets=self.offsets.copy(),
            widths=self.widths.copy(),
            heights=self.heights.copy(),
        )


@dataclass
class MemoryReport:
    base_bytes: int
    texture_bytes: int
    total_bytes: int
    overhead_percent: float

    @property
    def total_mb(self):
        return self.total_bytes / 1e6

    @property
    def base_mb(self):
        return self.base_bytes / 1e6


def uv_to_texel(u, v, width, height):
    """Rescale splat-local (u, v) in [-1, 1] to continuous texel coordinates.

    Inputs outside [-1, 1] are clamped (the Gaussian kernel attenuates
    them anyway); the caller additionally clamps to texel-center range
    before interpolation.
    """
    u = np.clip(u, -1.0, 1.0)
    v = np.clip(v, -1.0, 1.0)
    return (u + 1.0) / 2.0 * width, (v + 1.0) / 2.0 * height


def sample_bilinear(tex: Texture, u, v):
    """Bilinearly sample a texture at splat-local (u, v) in [-1, 1].

    Texel centers sit at integer + 0.5; samples are edge-clamped.  Returns
    (rgb, alpha) with alpha clamped to [0, 1].
    """
    tx, ty = uv_to_texel(u, v, tex.width, tex.height)
    x0, x1, fx = _bilinear_axis(tx, tex.width)
    y0, y1, fy = _bilinear_axis(ty, tex.height)
    # Nested lerp so constant corner values reproduce exactly.
    row0 = tex.rgb[y0, x0] + fx * (tex.rgb[y0, x1] - tex.rgb[y0, x0])
    row1 = tex.rgb[y1, x0] + fx * (tex.rgb[y1, x1] - tex.rgb[y1, x0])
    rgb = row0 + fy * (row1 - row0)
    a0 = tex.alpha[y0, x0] + fx * (tex.alpha[y0, x1] - tex.alpha[y0, x0])
    a1 = tex.alpha[y1, x0] + fx * (tex.alpha[y1, x1] - tex.alpha[y1, x0])
    a = a0 + fy * (a1 - a0)
    return rgb, float(np.clip(a, 0.0, 1.0))


def _bilinear_axis(t, dim):
    """Clamped bilinear index pair and fraction along one axis."""
    tc = np.clip(t, 0.5, dim - 0.5)
    i0 = int(np.clip(np.floor(tc - 0.5), 0, max(dim - 2, 0)))
    i1 = min(i0 + 1, dim - 1)
    f = float(tc - 0.5 - i0)
    if dim == 1:
        return 0, 0, 0.0
    return i0, i1, f


def upscale(tex: Texture, double_u, double_v, cap=None):
    """Double the texture along the requested axes, nearest-pixel initialized.

    Returns (texture, capped): when the result would exceed ``cap`` on an
    axis, that axis saturates silently and ``capped`` is True.
    """
    if not (double_u or double_v):
        raise ValueError("at least one axis must be doubled")
    new_w = tex.width * 2 if double_u else tex.width
    new_h = tex.height * 2 if double_v else tex.height
    capped = False
    if cap is not None:
        if new_w > cap:
            new_w = tex.width
            capped = True
        if new_h > cap:
            new_h = tex.height
            capped = True
    if new_w == tex.width and new_h == tex.height:
        return tex, capped
    xs = (np.arange(new_w) * tex.width) // new_w
    ys = (np.arange(new_h) * tex.height) // new_h
    return (
        Texture(
            width=new_w,
            height=new_h,
            rgb=tex.rgb[np.ix_(ys, xs)].copy(),
            alpha=tex.alpha[np.ix_(ys, xs)].copy(),
        ),
        capped,
    )


def atlas_rebuild(textures) -> TextureAtlas:
    """Pack a list of textures densely, in splat order."""
    n = len(textures)
    widths = np.array([t.width for t in textures], dtype=np.int64)
    heights = np.array([t.height for t in textures], dtype=np.int64)
    sizes = 4 * widths * heights
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]) if n else np.zeros(0, dtype=np.int64)
    texels = np.empty(int(sizes.sum()), dtype=np.float64)
    for i, t in enumerate(textures):
        block = np.concatenate([t.rgb, t.alpha[:, :, None]], axis=2)
        texels[offsets[i] : offsets[i] + sizes[i]] = block.ravel()
    return TextureAtlas(
        texels=texels,
        offsets=offsets.astype(np.int64),
        widths=widths,
        heights=heights,
    )


def memory_report(num_gaussians, sh_degree, textures=None, uniform=None,
                  bytes_per_scalar=BYTES_PER_SCALAR) -> MemoryReport:
    """Byte-exact accounting of trainable parameters.

    ``textures`` is a list of Texture or a TextureAtlas; alternatively
    ``uniform`` gives a (width, height) applied to every splat.  Base cost
    per splat is mu(3) + scale(2) + rot(4) + opacity(1) + SH(3*(d+1)^2)
    scalars; textures cost 4 scalars (RGBA) per texel.
    """
    if sh_degree not in (0, 1, 2, 3):
        raise ValueError("sh_degree must be in 0..3")
    if bytes_per_scalar not in (2, 4):
        raise ValueError("bytes_per_scalar must be 2 or 4")
    per_splat = 3 + 2 + 4 + 1 + 3 * (sh_degree + 1) ** 2
    base = num_gaussians * per_splat * bytes_per_scalar
    if uniform is not None:
        w, h = uniform
        tex = num_gaussians * 4 * w * h * bytes_per_scalar
    elif isinstance(textures, TextureAtlas):
        tex = int(4 * (textures.widths * textures.heights).sum()) * bytes_per_scalar
    elif textures is not None:
        tex = sum(4 * t.width * t.height for t in textures) * bytes_per_scalar
    else:
        tex = 0
    overhead = 100.0 * tex / base if base else 0.0
    return MemoryReport(
        base_bytes=int(base),
        texture_bytes=int(tex),
        total_bytes=int(base + tex),
        overhead_percent=overhead,
    )
