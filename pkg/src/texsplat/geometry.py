"""Splat-local frames, ray-splat intersection and screen-space bounding boxes.

A 2D splat lives on a plane in world space.  Its local frame maps
(u, v, 1, 1) homogeneous coordinates -- u and v measured in standard
deviations along the splat's two tangent axes -- to homogeneous world
points.  Composed with a camera's world-to-screen matrix, rays through
pixel centers can be intersected with the splat plane in closed form via
the two-plane method: the pixel constrains two linear equations on the
homogeneous screen point, which pull back to a 2x2 linear system in (u, v).
"""

from dataclasses import dataclass

import numpy as np

# Denominator cutoff for the 2x2 plane-intersection solve.  Splats this
# close to edge-on contribute far less than 1/255 alpha anywhere.
EPS_PLANE = 1e-9

# Conventional footprint cutoff, in standard deviations.
DEFAULT_SIGMA_CUT = 3.0


@dataclass
class Camera:
    """Pinhole camera defined by a 4x4 world-to-screen matrix.

    ``world_to_screen`` maps homogeneous world points to homogeneous screen
    coordinates in pixel units: pixel = (s0/s3, s1/s3), with s3 > 0 for
    points in front of the camera.  Pixel (i, j) samples the continuous
    coordinate (i + 0.5, j + 0.5); origin top-left, +x right, +y down.
    """

    world_to_screen: np.ndarray  # (4, 4)
    width: int
    height: int
    origin: np.ndarray  # (3,) camera center in world units

    def __post_init__(self):
        self.world_to_screen = np.asarray(self.world_to_screen, dtype=np.float64)
        self.origin = np.asarray(self.origin, dtype=np.float64)
        if self.width < 1 or self.height < 1:
            raise ValueError("camera dimensions must be >= 1")
        if self.world_to_screen.shape != (4, 4):
            raise ValueError("world_to_screen must be 4x4")
        if not np.all(np.isfinite(self.world_to_screen)):
            raise ValueError("world_to_screen must be finite")


@dataclass
class LocalFrame:
    """Local-to-world transform of one splat.

    Columns of ``H`` are (s_x * t_u, s_y * t_v, 0, mu) over a (0, 0, 0, 1)
    bottom row, so H @ (u, v, 1, 1) = (mu + u s_x t_u + v s_y t_v, 1).
    """

    H: np.ndarray  # (4, 4)


@dataclass
class RaySplatHit:
    """Ray-splat intersection in splat-local units (standard deviations).

    When ``valid`` is False the remaining fields carry no meaning.
    """

    u: float
    v: float
    depth: float
    valid: bool


def quat_to_rotmat(q):
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def build_local_frame(mu, rot, scale):
    """Build the local-to-world frame from center, quaternion and 2D scale.

    ``rot`` is normalized silently when within 1e-3 of unit norm; scale
    components must be strictly positive.
    """
    mu = np.asarray(mu, dtype=np.float64)
    rot = np.asarray(rot, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if np.any(scale <= 0):
        raise ValueError("scale components must be positive")
    norm = np.linalg.norm(rot)
    if abs(norm - 1.0) > 1e-3:
        raise ValueError("rotation quaternion is not unit norm")
    rot = rot / norm
    R = quat_to_rotmat(rot)
    H = np.zeros((4, 4), dtype=np.float64)
    H[:3, 0] = scale[0] * R[:, 0]
    H[:3, 1] = scale[1] * R[:, 1]
    H[:3, 3] = mu
    H[3, 3] = 1.0
    return LocalFrame(H=H)


def _plane_coeffs(M, px, py):
    """Coefficients of the 2x2 system a*u + b*v + c = 0 for both pixel planes.

    M is the combined local-to-screen matrix W @ H; (px, py) the continuous
    pixel coordinate.
    """
    A = M[:, 0]
    B = M[:, 1]
    C = M[:, 2] + M[:, 3]
    a1 = px * A[3] - A[0]
    b1 = px * B[3] - B[0]
    c1 = px * C[3] - C[0]
    a2 = py * A[3] - A[1]
    b2 = py * B[3] - B[1]
    c2 = py * C[3] - C[1]
    return a1, b1, c1, a2, b2, c2


def ray_splat_uv(cam: Camera, frame: LocalFrame, pixel) -> RaySplatHit:
    """Intersect the ray through ``pixel`` with the splat plane.

    Returns an invalid hit (never raises) for edge-on splats or
    intersections behind the camera.
    """
    px, py = float(pixel[0]), float(pixel[1])
    M = cam.world_to_screen @ frame.H
    a1, b1, c1, a2, b2, c2 = _plane_coeffs(M, px, py)
    den = a1 * b2 - a2 * b1
    if abs(den) < EPS_PLANE:
        return RaySplatHit(0.0, 0.0, 0.0, False)
    u = (b1 * c2 - b2 * c1) / den
    v = (a2 * c1 - a1 * c2) / den
    # Homogeneous w of the screen point; positive means in front.
    s = M @ np.array([u, v, 1.0, 1.0])
    if s[3] <= 0.0:
        return RaySplatHit(0.0, 0.0, 0.0, False)
    p_world = frame.H @ np.array([u, v, 1.0, 1.0])
    depth = float(np.linalg.norm(p_world[:3] - cam.origin))
    return RaySplatHit(float(u), float(v), depth, True)


def project_bbox(cam: Camera, frame: LocalFrame, sigma_cut=DEFAULT_SIGMA_CUT):
    """Integer pixel AABB covering the splat footprint u^2 + v^2 <= sigma_cut^2.

    Conservative: every in-footprint pixel is inside the box.  Returns
    (ix0, iy0, ix1, iy1) inclusive, or None when the splat cannot touch the
    image (fully behind the camera or off-screen).
    """
    if sigma_cut <= 0:
        raise ValueError("sigma_cut must be positive")
    M = cam.world_to_screen @ frame.H
    # 3x3 map from local homogeneous (u, v, 1) to screen homogeneous
    # (x*w, y*w, w): third column collapses M columns 2 and 3.
    P = np.array(
        [
            [M[0, 0], M[0, 1], M[0, 2] + M[0, 3]],
            [M[1, 0], M[1, 1], M[1, 2] + M[1, 3]],
            [M[3, 0], M[3, 1], M[3, 2] + M[3, 3]],
        ]
    )
    return bbox_from_local_screen(P, sigma_cut, cam.width, cam.height)


def bbox_from_local_screen(P, sigma_cut, width, height):
    """AABB of the projected footprint from the 3x3 local-to-screen map.

    See project_bbox; P maps local homogeneous (u, v, 1) to (x*w, y*w, w).
    """
    w_center = P[2, 2]
    w_swing = sigma_cut * np.hypot(P[2, 0], P[2, 1])
    if w_center + w_swing <= 0.0:
        return None  # fully behind the camera
    if w_center - w_swing <= 0.0:
        # Footprint crosses the camera plane; fall back to the full image.
        return (0, 0, width - 1, height - 1)

    # Dual conic of the footprint boundary circle u^2 + v^2 = sigma_cut^2.
    Qd = np.diag([-sigma_cut**2, -sigma_cut**2, 1.0])
    Cd = P @ Qd @ P.T
    bounds = []
    for (caa, cab) in ((Cd[0, 0], Cd[0, 2]), (Cd[1, 1], Cd[1, 2])):
        cc = Cd[2, 2]
        disc = cab * cab - caa * cc
        if disc < 0.0 or abs(cc) < 1e-300:
            return (0, 0, width - 1, height - 1)
        r = np.sqrt(disc)
        t0 = (cab - r) / cc
        t1 = (cab + r) / cc
        bounds.append((min(t0, t1), max(t0, t1)))
    (xmin, xmax), (ymin, ymax) = bounds

    # Pixel centers sit at integer + 0.5; pad one pixel for numerical slack.
    ix0 = int(np.floor(xmin - 0.5)) - 1
    ix1 = int(np.ceil(xmax - 0.5)) + 1
    iy0 = int(np.floor(ymin - 0.5)) - 1
    iy1 = int(np.ceil(ymax - 0.5)) + 1
    if ix1 < 0 or iy1 < 0 or ix0 > width - 1 or iy0 > height - 1:
        return None
    ix0 = max(ix0, 0)
    iy0 = max(iy0, 0)
    ix1 = min(ix1, width - 1)
    iy1 = min(iy1, height - 1)
    return (ix0, iy0, ix1, iy1)
