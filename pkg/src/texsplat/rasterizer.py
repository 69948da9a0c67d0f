"""Forward rendering and analytic backward pass for textured 2D splats.

The forward path gathers, per splat, all pixels inside its projected
footprint (via a conservative screen-space bounding box), shades each
ray-splat hit, sorts the resulting fragments per pixel by intersection
depth, and alpha-composites front to back.  Compositing terminates once
transmittance drops below EPS_T; the same rule is applied in the scalar
reference path so the two agree to float precision.

The backward pass differentiates the full dependency graph (positions,
scales, rotations, opacity logits, SH coefficients and every texel),
re-deriving the fragment stream from a recorded forward pass.  Alongside
the training gradients it accumulates the selection signal: per-pixel
absolute positional-gradient magnitudes routed through the alpha chain
only, summed per splat.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import geometry
from .geometry import Camera, EPS_PLANE
from .model import Scene, sh_basis, sh_basis_grad, sigmoid
from .texture import Texture, sample_bilinear

ALPHA_MAX = 0.999  # keeps transmittance nonzero so occluded splats get gradients
ALPHA_MIN = 1.0 / 255.0  # fragments fainter than this are skipped
EPS_T = 1e-4  # early-termination transmittance cutoff
DEFAULT_TEXTURE_EXTENT_SIGMA = 1.0  # uv range mapped onto the texture, in sigmas


class RenderMode(Enum):
    FULL = "full"
    NO_TEXTURE = "no_texture"
    NO_BASE_COLOR = "no_base_color"


@dataclass
class GradientStats:
    """Accumulated absolute positional gradients and contribution counts."""

    accum_abs_grad: np.ndarray
    pixel_count: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(
            accum_abs_grad=np.zeros(n, dtype=np.float64),
            pixel_count=np.zeros(n, dtype=np.int64),
        )

    def add(self, other):
        self.accum_abs_grad += other.accum_abs_grad
        self.pixel_count += other.pixel_count


def reset_stats(stats: GradientStats):
    stats.accum_abs_grad[:] = 0.0
    stats.pixel_count[:] = 0
    return stats


@dataclass
class SceneGradients:
    """Loss gradients for every trainable parameter; shapes mirror the scene.

    ``d_texels`` shares the atlas RGBA-interleaved layout.
    """

    d_mu: np.ndarray
    d_scale: np.ndarray
    d_rot: np.ndarray
    d_opacity_logit: np.ndarray
    d_sh: np.ndarray
    d_texels: np.ndarray

    @property
    def d_rgb_texels(self):
        return self.d_texels.reshape(-1, 4)[:, :3]

    @property
    def d_alpha_texels(self):
        return self.d_texels.reshape(-1, 4)[:, 3]


@dataclass
class _Fragments:
    """Flat fragment stream sorted by (pixel, depth), plus splat precomputes."""

    sid: np.ndarray = None
    pix: np.ndarray = None  # flat pixel index
    px: np.ndarray = None  # continuous pixel coords
    py: np.ndarray = None
    u: np.ndarray = None
    v: np.ndarray = None
    den: np.ndarray = None
    G: np.ndarray = None
    alpha_raw: np.ndarray = None
    alpha: np.ndarray = None
    tA_raw: np.ndarray = None
    tA: np.ndarray = None
    trgb: np.ndarray = None  # (F, 3)
    color: np.ndarray = None  # (F, 3)
    T: np.ndarray = None
    contrib: np.ndarray = None  # bool, transmittance above cutoff
    # bilinear cache
    corner_idx: np.ndarray = None  # (F, 4) flat atlas index of the R channel
    corner_w: np.ndarray = None  # (F, 4) weights in order 00, 10, 01, 11
    fx: np.ndarray = None
    fy: np.ndarray = None
    open_x: np.ndarray = None  # bool, tx unclamped (gradient flows to u)
    open_y: np.ndarray = None
    # per-splat precomputes
    A4: np.ndarray = None  # (N, 4)
    B4: np.ndarray = None
    C4: np.ndarray = None
    tu: np.ndarray = None  # (N, 3)
    tv: np.ndarray = None
    qn: np.ndarray = None
    o: np.ndarray = None
    view_dir: np.ndarray = None  # (N, 3)
    view_dist: np.ndarray = None
    basis: np.ndarray = None  # (N, bands)
    c_sh: np.ndarray = None  # (N, 3)
    T_bg: np.ndarray = None  # (H*W,)
    raw_image: np.ndarray = None  # (H*W, 3) before final clip


@dataclass
class RenderOutput:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    alpha_map: np.ndarray  # (H, W)
    fragments: _Fragments = field(default=None, repr=False)


def composite_pixel(fragments, background):
    """Front-to-back compositing of (rgb, alpha) fragments over a background.

    Scalar reference for one pixel; applies the EPS_T termination rule used
    by the full renderer.
    """
    background = np.asarray(background, dtype=np.float64)
    out = np.zeros(3, dtype=np.float64)
    T = 1.0
    for c, a in fragments:
        if T < EPS_T:
            break
        out += np.asarray(c, dtype=np.float64) * a * T
        T *= 1.0 - a
    return out + background * T


def shade_fragment(g, tex: Texture, hit, view_dir, mode=RenderMode.FULL,
                   texture_extent_sigma=DEFAULT_TEXTURE_EXTENT_SIGMA):
    """Color and alpha of one ray-splat hit (scalar reference path)."""
    if not hit.valid:
        raise ValueError("shade_fragment requires a valid hit")
    o = sigmoid(g.opacity_logit)
    G = np.exp(-(hit.u**2 + hit.v**2) / 2.0)
    c_sh = sh_basis(view_dir)[: g.sh.shape[0]] @ g.sh + 0.5
    if mode is RenderMode.NO_TEXTURE:
        return c_sh, min(o * G, ALPHA_MAX)
    trgb, ta = sample_bilinear(
        tex, hit.u / texture_extent_sigma, hit.v / texture_extent_sigma
    )
    color = trgb if mode is RenderMode.NO_BASE_COLOR else c_sh + trgb
    return color, min(o * G * ta, ALPHA_MAX)


def _quat_cols_and_grads(qn):
    """First two rotation-matrix columns of a unit quaternion and their
    Jacobians w.r.t. the quaternion components, shapes (3,), (3, 4)."""
    w, x, y, z = qn
    tu = np.array([1 - 2 * (y * y + z * z), 2 * (x * y + w * z), 2 * (x * z - w * y)])
    tv = np.array([2 * (x * y - w * z), 1 - 2 * (x * x + z * z), 2 * (y * z + w * x)])
    dtu = np.array(
        [
            [0.0, 0.0, -4 * y, -4 * z],
            [2 * z, 2 * y, 2 * x, 2 * w],
            [-2 * y, 2 * z, -2 * w, 2 * x],
        ]
    )
    dtv = np.array(
        [
            [-2 * z, 2 * y, 2 * x, -2 * w],
            [0.0, -4 * x, 0.0, -4 * z],
            [2 * x, 2 * w, 2 * z, 2 * y],
        ]
    )
    return tu, tv, dtu, dtv


def _splat_precompute(scene: Scene, cam: Camera):
    n = scene.n
    W = cam.world_to_screen
    A4 = np.empty((n, 4))
    B4 = np.empty((n, 4))
    tu = np.empty((n, 3))
    tv = np.empty((n, 3))
    qn = scene.rot / np.linalg.norm(scene.rot, axis=1, keepdims=True)
    for i in range(n):
        ti, vi, _, _ = _quat_cols_and_grads(qn[i])
        tu[i] = ti
        tv[i] = vi
        A4[i] = W[:, :3] @ (scene.scale[i, 0] * ti)
        B4[i] = W[:, :3] @ (scene.scale[i, 1] * vi)
    hom = np.concatenate([scene.mu, np.ones((n, 1))], axis=1)
    C4 = hom @ W.T
    d = scene.mu - cam.origin
    dist = np.linalg.norm(d, axis=1)
    view_dir = d / dist[:, None]
    bands = (scene.sh_degree + 1) ** 2
    if n:
        basis = np.stack([sh_basis(view_dir[i])[:bands] for i in range(n)])
    else:
        basis = np.zeros((0, bands))
    c_sh = np.einsum("nb,nbc->nc", basis, scene.sh) + 0.5
    o = sigmoid(scene.opacity_logit)
    return A4, B4, C4, tu, tv, qn, o, view_dir, dist, basis, c_sh


def _bilinear_cache(u, v, off, w, h, extent):
    """Vectorized clamped-bilinear lookup cache for one splat's fragments."""
    ut = np.clip(u / extent, -1.0, 1.0)
    vt = np.clip(v / extent, -1.0, 1.0)
    tx = (ut + 1.0) / 2.0 * w
    ty = (vt + 1.0) / 2.0 * h
    txc = np.clip(tx, 0.5, w - 0.5)
    tyc = np.clip(ty, 0.5, h - 0.5)
    open_x = (np.abs(u) < extent) & (tx > 0.5) & (tx < w - 0.5) & (w > 1)
    open_y = (np.abs(v) < extent) & (ty > 0.5) & (ty < h - 0.5) & (h > 1)
    if w > 1:
        x0 = np.clip(np.floor(txc - 0.5), 0, w - 2).astype(np.int64)
        fx = txc - 0.5 - x0
        x1 = np.minimum(x0 + 1, w - 1)
    else:
        x0 = np.zeros_like(u, dtype=np.int64)
        x1 = x0
        fx = np.zeros_like(u)
    if h > 1:
        y0 = np.clip(np.floor(tyc - 0.5), 0, h - 2).astype(np.int64)
        fy = tyc - 0.5 - y0
        y1 = np.minimum(y0 + 1, h - 1)
    else:
        y0 = np.zeros_like(v, dtype=np.int64)
        y1 = y0
        fy = np.zeros_like(v)
    idx = np.stack(
        [
            off + 4 * (y0 * w + x0),
            off + 4 * (y0 * w + x1),
            off + 4 * (y1 * w + x0),
            off + 4 * (y1 * w + x1),
        ],
        axis=1,
    )
    wts = np.stack(
        [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1
    )
    return idx, wts, fx, fy, open_x, open_y


def _forward(scene: Scene, cam: Camera, mode: RenderMode, sigma_cut,
             texture_extent_sigma, record):
    n = scene.n
    H, Wd = cam.height, cam.width
    W = cam.world_to_screen
    pre = _splat_precompute(scene, cam)
    A4, B4, C4, tu, tv, qn, o, view_dir, view_dist, basis, c_sh = pre
    atlas = scene.textures

    cols = {k: [] for k in (
        "sid", "pix", "px", "py", "u", "v", "den", "G", "alpha_raw", "tA_raw",
        "tA", "trgb", "color", "depth", "cidx", "cw", "fx", "fy", "ox", "oy",
    )}
    for i in range(n):
        P = np.array(
            [
                [A4[i, 0], B4[i, 0], C4[i, 0]],
                [A4[i, 1], B4[i, 1], C4[i, 1]],
                [A4[i, 3], B4[i, 3], C4[i, 3]],
            ]
        )
        bbox = geometry.bbox_from_local_screen(P, sigma_cut, Wd, H)
        if bbox is None:
            continue
        ix0, iy0, ix1, iy1 = bbox
        xs = np.arange(ix0, ix1 + 1) + 0.5
        ys = np.arange(iy0, iy1 + 1) + 0.5
        px, py = np.meshgrid(xs, ys)
        px = px.ravel()
        py = py.ravel()
        a1 = px * A4[i, 3] - A4[i, 0]
        b1 = px * B4[i, 3] - B4[i, 0]
        c1 = px * C4[i, 3] - C4[i, 0]
        a2 = py * A4[i, 3] - A4[i, 1]
        b2 = py * B4[i, 3] - B4[i, 1]
        c2 = py * C4[i, 3] - C4[i, 1]
        den = a1 * b2 - a2 * b1
        ok = np.abs(den) >= EPS_PLANE
        den_safe = np.where(ok, den, 1.0)
        u = (b1 * c2 - b2 * c1) / den_safe
        v = (a2 * c1 - a1 * c2) / den_safe
        w_h = A4[i, 3] * u + B4[i, 3] * v + C4[i, 3]
        r2 = u * u + v * v
        ok &= (w_h > 0) & (r2 <= sigma_cut * sigma_cut)
        if not ok.any():
            continue
        px, py, u, v, den, r2 = (a[ok] for a in (px, py, u, v, den, r2))
        G = np.exp(-r2 / 2.0)
        if mode is RenderMode.NO_TEXTURE:
            tA_raw = np.ones_like(u)
            tA = tA_raw
            trgb = np.zeros((u.size, 3))
            cidx = np.zeros((u.size, 4), dtype=np.int64)
            cw = np.zeros((u.size, 4))
            fx = fy = np.zeros_like(u)
            ox = oy = np.zeros(u.size, dtype=bool)
            alpha_raw = o[i] * G
            color = np.broadcast_to(c_sh[i], (u.size, 3)).copy()
        else:
            cidx, cw, fx, fy, ox, oy = _bilinear_cache(
                u, v, int(atlas.offsets[i]), int(atlas.widths[i]),
                int(atlas.heights[i]), texture_extent_sigma,
            )
            tex = atlas.texels
            # Nested lerp (matches sample_bilinear) so constant corner
            # values reproduce exactly; cidx columns are 00, 10, 01, 11.
            corners = tex[cidx[:, :, None] + np.arange(3)]
            fxc, fyc = fx[:, None], fy[:, None]
            row0 = corners[:, 0] + fxc * (corners[:, 1] - corners[:, 0])
            row1 = corners[:, 2] + fxc * (corners[:, 3] - corners[:, 2])
            trgb = row0 + fyc * (row1 - row0)
            ac = tex[cidx + 3]
            a0 = ac[:, 0] + fx * (ac[:, 1] - ac[:, 0])
            a1 = ac[:, 2] + fx * (ac[:, 3] - ac[:, 2])
            tA_raw = a0 + fy * (a1 - a0)
            tA = np.clip(tA_raw, 0.0, 1.0)
            alpha_raw = o[i] * G * tA
            if mode is RenderMode.NO_BASE_COLOR:
                color = trgb
            else:
                color = c_sh[i] + trgb
        alpha = np.minimum(alpha_raw, ALPHA_MAX)
        keep = alpha >= ALPHA_MIN
        if not keep.any():
            continue
        for name, arr in (
            ("px", px), ("py", py), ("u", u), ("v", v), ("den", den), ("G", G),
            ("alpha_raw", alpha_raw), ("tA_raw", tA_raw), ("tA", tA),
            ("trgb", trgb), ("color", color), ("cidx", cidx), ("cw", cw),
            ("fx", fx), ("fy", fy), ("ox", ox), ("oy", oy),
        ):
            cols[name].append(np.asarray(arr)[keep])
        uk, vk = u[keep], v[keep]
        p_world = (
            scene.mu[i]
            + uk[:, None] * (scene.scale[i, 0] * tu[i])
            + vk[:, None] * (scene.scale[i, 1] * tv[i])
        )
        cols["depth"].append(np.linalg.norm(p_world - cam.origin, axis=1))
        ipx = (px[keep] - 0.5).astype(np.int64)
        ipy = (py[keep] - 0.5).astype(np.int64)
        cols["pix"].append(ipy * Wd + ipx)
        cols["sid"].append(np.full(keep.sum(), i, dtype=np.int64))

    if cols["sid"]:
        frag = {k: np.concatenate(vals) for k, vals in cols.items()}
    else:
        frag = {
            k: np.zeros((0, 3)) if k in ("trgb", "color")
            else np.zeros((0, 4)) if k in ("cidx", "cw")
            else np.zeros(0)
            for k in cols
        }
        frag["sid"] = frag["sid"].astype(np.int64)
        frag["pix"] = frag["pix"].astype(np.int64)

    order = np.lexsort((frag["depth"], frag["pix"]))
    frag = {k: v[order] for k, v in frag.items()}
    pix = frag["pix"].astype(np.int64)
    alpha = np.minimum(frag["alpha_raw"], ALPHA_MAX)

    # Segmented exclusive product of (1 - alpha) front to back.
    npix = H * Wd
    F = pix.size
    if F:
        is_start = np.empty(F, dtype=bool)
        is_start[0] = True
        is_start[1:] = pix[1:] != pix[:-1]
        log1m = np.log1p(-alpha)
        cum = np.cumsum(log1m)
        excl = cum - log1m
        start_excl = np.where(is_start, excl, 0.0)
        seg_id = np.cumsum(is_start) - 1
        base = start_excl[is_start][seg_id]
        T = np.exp(excl - base)
        contrib = T >= EPS_T  # prefix of each segment since T is nonincreasing
        w = np.where(contrib, alpha * T, 0.0)
        log_in = np.where(contrib, log1m, 0.0)
        seg_total = np.bincount(pix, weights=log_in, minlength=npix)
        covered = np.bincount(pix, minlength=npix) > 0
        T_bg_map = np.where(covered, np.exp(seg_total), 1.0)
        raw = np.zeros((npix, 3))
        for c in range(3):
            raw[:, c] = np.bincount(
                pix, weights=frag["color"][:, c] * w, minlength=npix
            )
    else:
        T = np.zeros(0)
        contrib = np.zeros(0, dtype=bool)
        T_bg_map = np.ones(npix)
        raw = np.zeros((npix, 3))

    raw += scene.background[None, :] * T_bg_map[:, None]
    image = np.clip(raw, 0.0, 1.0).reshape(H, Wd, 3)
    alpha_map = (1.0 - T_bg_map).reshape(H, Wd)

    rec = None
    if record:
        rec = _Fragments(
            sid=frag["sid"].astype(np.int64), pix=pix, px=frag["px"],
            py=frag["py"], u=frag["u"], v=frag["v"], den=frag["den"],
            G=frag["G"], alpha_raw=frag["alpha_raw"], alpha=alpha,
            tA_raw=frag["tA_raw"], tA=frag["tA"], trgb=frag["trgb"],
            color=frag["color"], T=T, contrib=contrib,
            corner_idx=frag["cidx"].astype(np.int64), corner_w=frag["cw"],
            fx=frag["fx"], fy=frag["fy"], open_x=frag["ox"].astype(bool),
            open_y=frag["oy"].astype(bool), A4=A4, B4=B4, C4=C4, tu=tu, tv=tv,
            qn=qn, o=o, view_dir=view_dir, view_dist=view_dist, basis=basis,
            c_sh=c_sh, T_bg=T_bg_map, raw_image=raw,
        )
    return RenderOutput(image=image, alpha_map=alpha_map, fragments=rec)


def render(scene: Scene, cam: Camera, mode=RenderMode.FULL,
           sigma_cut=geometry.DEFAULT_SIGMA_CUT,
           texture_extent_sigma=DEFAULT_TEXTURE_EXTENT_SIGMA,
           record=False) -> RenderOutput:
    """Render the scene; with ``record`` the fragment stream is retained
    for a subsequent backward pass."""
    return _forward(scene, cam, mode, sigma_cut, texture_extent_sigma, record)


def backward(scene: Scene, cam: Camera, mode, d_image,
             sigma_cut=geometry.DEFAULT_SIGMA_CUT,
             texture_extent_sigma=DEFAULT_TEXTURE_EXTENT_SIGMA,
             forward_out: RenderOutput = None):
    """Gradients of <d_image, rendered image> w.r.t. every trainable
    parameter, plus the accumulated positional-gradient selection signal.

    ``d_image`` is dL/dpixel, shape (H, W, 3).  A recorded forward output
    may be passed to avoid recomputing it.
    """
    n = scene.n
    if forward_out is None or forward_out.fragments is None:
        forward_out = _forward(scene, cam, mode, sigma_cut,
                               texture_extent_sigma, record=True)
    r = forward_out.fragments
    W = cam.world_to_screen
    H, Wd = cam.height, cam.width
    d_image = np.asarray(d_image, dtype=np.float64).reshape(H * Wd, 3)

    grads = SceneGradients(
        d_mu=np.zeros((n, 3)),
        d_scale=np.zeros((n, 2)),
        d_rot=np.zeros((n, 4)),
        d_opacity_logit=np.zeros(n),
        d_sh=np.zeros_like(scene.sh),
        d_texels=np.zeros_like(scene.textures.texels),
    )
    stats = GradientStats.zeros(n)
    F = r.pix.size
    if F == 0:
        return grads, stats

    # Final-clip gate: pixels saturated outside (0, 1) pass no gradient.
    clip_open = (r.raw_image > 0.0) & (r.raw_image < 1.0)
    dpix = np.where(clip_open, d_image, 0.0)

    pix = r.pix
    alpha = r.alpha
    T = r.T
    contrib = r.contrib
    w = np.where(contrib, alpha * T, 0.0)
    dp = dpix[pix]  # (F, 3)

    # Suffix sums S_i = sum_{p > i, same pixel} c_p w_p + bg * T_bg.
    npix = H * Wd
    cw_val = r.color * w[:, None]
    S = np.empty((F, 3))
    for c in range(3):
        seg_total = np.bincount(pix, weights=cw_val[:, c], minlength=npix)
        is_start = np.empty(F, dtype=bool)
        is_start[0] = True
        is_start[1:] = pix[1:] != pix[:-1]
        cs = np.cumsum(cw_val[:, c])
        seg_id = np.cumsum(is_start) - 1
        base = np.where(is_start, cs - cw_val[:, c], 0.0)[is_start][seg_id]
        incl = cs - base
        S[:, c] = seg_total[pix] - incl + scene.background[c] * r.T_bg[pix]

    one_minus = 1.0 - alpha
    dc_frag = dp * w[:, None]  # (F, 3) gradient to fragment color
    dalpha = np.where(
        contrib,
        np.einsum("fc,fc->f", dp, r.color * T[:, None] - S / one_minus[:, None]),
        0.0,
    )

    # Alpha composition chain: alpha = min(o * G * tA, ALPHA_MAX).
    open_amax = r.alpha_raw <= ALPHA_MAX
    dalpha_t = np.where(open_amax, dalpha, 0.0)
    o_f = r.o[r.sid]
    if mode is RenderMode.NO_TEXTURE:
        tA_eff = np.ones(F)
    else:
        tA_eff = r.tA
    do_frag = dalpha_t * r.G * tA_eff
    dG = dalpha_t * o_f * tA_eff
    du = dG * (-r.u * r.G)
    dv = dG * (-r.v * r.G)

    d_texels = grads.d_texels
    if mode is not RenderMode.NO_TEXTURE:
        # Texture alpha: sample clamped to [0, 1].
        open_ta = (r.tA_raw > 0.0) & (r.tA_raw < 1.0)
        dtA = np.where(open_ta, dalpha_t * o_f * r.G, 0.0)
        # Texture rgb: additive color residual.
        dtrgb = dc_frag  # (F, 3)
        if mode is RenderMode.NO_BASE_COLOR:
            pass  # color is the texture sample alone; same upstream
        # Corner accumulation (order 00, 10, 01, 11).
        tex = scene.textures.texels
        widths = scene.textures.widths[r.sid].astype(np.float64)
        heights = scene.textures.heights[r.sid].astype(np.float64)
        for k in range(4):
            idx = r.corner_idx[:, k]
            wk = r.corner_w[:, k]
            for c in range(3):
                np.add.at(d_texels, idx + c, wk * dtrgb[:, c])
            np.add.at(d_texels, idx + 3, wk * dtA)
        # Gradient to continuous texel coords through the bilinear weights.
        v00 = np.stack([tex[r.corner_idx[:, 0] + c] for c in range(4)], axis=1)
        v10 = np.stack([tex[r.corner_idx[:, 1] + c] for c in range(4)], axis=1)
        v01 = np.stack([tex[r.corner_idx[:, 2] + c] for c in range(4)], axis=1)
        v11 = np.stack([tex[r.corner_idx[:, 3] + c] for c in range(4)], axis=1)
        dsample = np.concatenate([dtrgb, dtA[:, None]], axis=1)  # (F, 4)
        fx = r.fx[:, None]
        fy = r.fy[:, None]
        dtx = (dsample * ((1 - fy) * (v10 - v00) + fy * (v11 - v01))).sum(axis=1)
        dty = (dsample * ((1 - fx) * (v01 - v00) + fx * (v11 - v10))).sum(axis=1)
        du += np.where(r.open_x, dtx * widths / (2.0 * texture_extent_sigma), 0.0)
        dv += np.where(r.open_y, dty * heights / (2.0 * texture_extent_sigma), 0.0)

    # Plane-intersection backward: (u, v) from the 2x2 solve.
    sid = r.sid
    A4, B4, C4 = r.A4, r.B4, r.C4
    px, py = r.px, r.py
    a1 = px * A4[sid, 3] - A4[sid, 0]
    b1 = px * B4[sid, 3] - B4[sid, 0]
    c1 = px * C4[sid, 3] - C4[sid, 0]
    a2 = py * A4[sid, 3] - A4[sid, 1]
    b2 = py * B4[sid, 3] - B4[sid, 1]
    c2 = py * C4[sid, 3] - C4[sid, 1]
    den = r.den
    u, v = r.u, r.v
    du_da1 = -u * b2 / den
    du_db1 = (c2 + u * a2) / den
    du_dc1 = -b2 / den
    du_da2 = u * b1 / den
    du_db2 = (-c1 - u * a1) / den
    du_dc2 = b1 / den
    dv_da1 = (-c2 - v * b2) / den
    dv_db1 = v * a2 / den
    dv_dc1 = a2 / den
    dv_da2 = (c1 + v * b1) / den
    dv_db2 = -v * a1 / den
    dv_dc2 = -a1 / den

    da1 = du * du_da1 + dv * dv_da1
    db1 = du * du_db1 + dv * dv_db1
    dc1 = du * du_dc1 + dv * dv_dc1
    da2 = du * du_da2 + dv * dv_da2
    db2 = du * du_db2 + dv * dv_db2
    dc2 = du * du_dc2 + dv * dv_dc2

    def splat_sum(vals):
        return np.bincount(sid, weights=vals, minlength=n)

    dA4 = np.zeros((n, 4))
    dB4 = np.zeros((n, 4))
    dC4 = np.zeros((n, 4))
    dA4[:, 0] = splat_sum(-da1)
    dA4[:, 1] = splat_sum(-da2)
    dA4[:, 3] = splat_sum(px * da1 + py * da2)
    dB4[:, 0] = splat_sum(-db1)
    dB4[:, 1] = splat_sum(-db2)
    dB4[:, 3] = splat_sum(px * db1 + py * db2)
    dC4[:, 0] = splat_sum(-dc1)
    dC4[:, 1] = splat_sum(-dc2)
    dC4[:, 3] = splat_sum(px * dc1 + py * dc2)

    Wt3 = W[:, :3].T  # (3, 4)
    g_col_u = dA4 @ Wt3.T  # (n, 3): gradient to s_x * t_u
    g_col_v = dB4 @ Wt3.T
    grads.d_mu += dC4 @ Wt3.T
    grads.d_scale[:, 0] = np.einsum("nc,nc->n", g_col_u, r.tu)
    grads.d_scale[:, 1] = np.einsum("nc,nc->n", g_col_v, r.tv)
    dtu_full = scene.scale[:, 0:1] * g_col_u
    dtv_full = scene.scale[:, 1:2] * g_col_v
    rot_norm = np.linalg.norm(scene.rot, axis=1)
    for i in range(n):
        _, _, dtu_dq, dtv_dq = _quat_cols_and_grads(r.qn[i])
        dqn = dtu_full[i] @ dtu_dq + dtv_full[i] @ dtv_dq
        qn = r.qn[i]
        grads.d_rot[i] = (dqn - qn * (qn @ dqn)) / rot_norm[i]

    # Opacity through the sigmoid.
    do_sum = splat_sum(do_frag)
    grads.d_opacity_logit = do_sum * r.o * (1.0 - r.o)

    # SH coefficients and the view-direction path into mu.
    if mode is not RenderMode.NO_BASE_COLOR:
        bands = (scene.sh_degree + 1) ** 2
        dcsum = np.zeros((n, 3))
        for c in range(3):
            dcsum[:, c] = splat_sum(dc_frag[:, c])
        grads.d_sh += r.basis[:, :, None] * dcsum[:, None, :]
        for i in range(n):
            if not np.any(dcsum[i]):
                continue
            gY = sh_basis_grad(r.view_dir[i])[:bands]
            s_b = scene.sh[i] @ dcsum[i]  # (bands,)
            ddir = gY.T @ s_b
            dirv = r.view_dir[i]
            grads.d_mu[i] += (ddir - dirv * (dirv @ ddir)) / r.view_dist[i]

    # Selection signal: positional gradient through the alpha chain only
    # (transmittance-weighted color difference times o * dG/dmu * tA),
    # absolute-valued per pixel before accumulation.
    w1 = px[:, None] * W[3, :3] - W[0, :3]  # (F, 3) d c1 / d mu
    w2 = py[:, None] * W[3, :3] - W[1, :3]
    du_dmu = du_dc1[:, None] * w1 + du_dc2[:, None] * w2
    dv_dmu = dv_dc1[:, None] * w1 + dv_dc2[:, None] * w2
    dG_dmu = r.G[:, None] * (-u[:, None] * du_dmu - v[:, None] * dv_dmu)
    gvec = (dalpha * o_f * tA_eff)[:, None] * dG_dmu
    gnorm = np.where(contrib, np.linalg.norm(gvec, axis=1), 0.0)
    stats.accum_abs_grad += np.bincount(sid, weights=gnorm, minlength=n)
    stats.pixel_count += np.bincount(
        sid, weights=contrib.astype(np.float64), minlength=n
    ).astype(np.int64)

    return grads, stats
