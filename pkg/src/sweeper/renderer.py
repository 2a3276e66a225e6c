"""Deterministic software rasterizer: RGB, depth, and object-id maps per pose."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SIZE = 512
FOV_Y_DEGREES = 45.0
BACKGROUND_RGB = (255, 255, 255)
BACKGROUND_ID = -1
# Depth quantization for unique_depth: 1e-3 of r-normalized depth, so flat
# surfaces collapse to one value under floating-point noise.
DEPTH_QUANT_DECIMALS = 3


@dataclass(frozen=True)
class CameraPose:
    """Orbit camera: target point, latitudinal/longitudinal angles in degrees,
    viewing distance r. Up vector is fixed +Y."""

    target: tuple[float, float, float]
    alpha: float
    beta: float
    r: float

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("viewing distance must be positive")
        if not -90.0 <= self.alpha <= 90.0:
            raise ValueError("alpha outside [-90, 90]")
        if not 0.0 <= self.beta < 360.0:
            raise ValueError("beta outside [0, 360)")

    @property
    def eye(self) -> np.ndarray:
        return np.asarray(self.target) + self.r * orbit_direction(self.alpha, self.beta)


def orbit_direction(alpha: float, beta: float) -> np.ndarray:
    """Unit vector from target toward the camera for angles in degrees."""
    a = np.radians(alpha)
    b = np.radians(beta)
    return np.array([np.cos(a) * np.cos(b), np.sin(a), np.cos(a) * np.sin(b)])


@dataclass(frozen=True)
class SampledView:
    """One rendered view: 512x512 RGB, per-pixel view depth (+inf background),
    and per-pixel object ids (-1 background)."""

    index: int
    pose: CameraPose
    rgb: np.ndarray
    depth: np.ndarray
    object_ids: np.ndarray


def _view_matrix(pose: CameraPose) -> np.ndarray:
    eye = pose.eye
    forward = np.asarray(pose.target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    up = np.array([0.0, 1.0, 0.0])
    # Straight-down/up poses are collinear with +Y; fall back to +Z.
    if abs(float(forward @ up)) > 1.0 - 1e-9:
        up = np.array([0.0, 0.0, 1.0])
    side = np.cross(forward, up)
    side /= np.linalg.norm(side)
    true_up = np.cross(side, forward)
    m = np.eye(4)
    m[0, :3] = side
    m[1, :3] = true_up
    m[2, :3] = -forward
    m[:3, 3] = -m[:3, :3] @ eye
    return m


def _clip_near(poly: np.ndarray, near: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a camera-space polygon against z <= -near."""
    out: list[np.ndarray] = []
    n = len(poly)
    for i in range(n):
        cur, nxt = poly[i], poly[(i + 1) % n]
        cur_in = cur[2] <= -near
        nxt_in = nxt[2] <= -near
        if cur_in:
            out.append(cur)
        if cur_in != nxt_in:
            t = (-near - cur[2]) / (nxt[2] - cur[2])
            out.append(cur + t * (nxt - cur))
    return np.asarray(out) if out else np.empty((0, 3))


def render_view(mesh, pose: CameraPose, index: int = 0, size: int = IMAGE_SIZE) -> SampledView:
    """Rasterize the mesh from ``pose``: perspective projection with vertical
    FOV 45 degrees, near r/100, far 10r, z-buffered, no anti-aliasing.

    Bit-exact for identical inputs; a pose seeing nothing yields an
    all-background view. ``size`` defaults to the pipeline's 512; smaller
    values serve internal coverage estimates.
    """
    near = pose.r / 100.0
    far = 10.0 * pose.r
    focal = 1.0 / np.tan(np.radians(FOV_Y_DEGREES) / 2.0)

    view = _view_matrix(pose)
    rot, trans = view[:3, :3], view[:3, 3]

    zbuf = np.full((size, size), np.inf)
    ids = np.full((size, size), BACKGROUND_ID, dtype=np.int32)
    color = np.empty((size, size, 3))
    color[:] = np.asarray(BACKGROUND_RGB) / 255.0

    cam_tris = mesh.triangles @ rot.T + trans

    for t in range(len(cam_tris)):
        poly = cam_tris[t]
        if poly[:, 2].min() > -near:
            continue
        colors = mesh.vertex_colors[t]
        if poly[:, 2].max() > -near:
            clipped = _clip_near(poly, near)
            if len(clipped) < 3:
                continue
            # Clipped corners inherit the nearest original color; flat color
            # fixtures are unaffected and this keeps the loop simple.
            sub_colors = _reinterp_colors(poly, colors, clipped)
            fans = [
                (clipped[[0, k, k + 1]], sub_colors[[0, k, k + 1]])
                for k in range(1, len(clipped) - 1)
            ]
        else:
            fans = [(poly, colors)]
        for verts, vcols in fans:
            _raster_triangle(
                verts, vcols, int(mesh.object_ids[t]), focal, far, size, zbuf, ids, color
            )

    rgb = np.clip(np.rint(color * 255.0), 0, 255).astype(np.uint8)
    return SampledView(index=index, pose=pose, rgb=rgb, depth=zbuf, object_ids=ids)


def _reinterp_colors(poly: np.ndarray, colors: np.ndarray, clipped: np.ndarray) -> np.ndarray:
    dists = np.linalg.norm(clipped[:, None, :] - poly[None, :, :], axis=2)
    return colors[np.argmin(dists, axis=1)]


def _raster_triangle(verts, vcols, object_id, focal, far, size, zbuf, ids, color):
    w = -verts[:, 2]
    inv_w = 1.0 / w
    sx = (focal * verts[:, 0] * inv_w + 1.0) * 0.5 * size
    sy = (1.0 - focal * verts[:, 1] * inv_w) * 0.5 * size

    area2 = (sx[1] - sx[0]) * (sy[2] - sy[0]) - (sx[2] - sx[0]) * (sy[1] - sy[0])
    if area2 == 0.0:
        return

    x0 = max(int(np.floor(sx.min() - 0.5)), 0)
    x1 = min(int(np.ceil(sx.max() + 0.5)), size - 1)
    y0 = max(int(np.floor(sy.min() - 0.5)), 0)
    y1 = min(int(np.ceil(sy.max() + 0.5)), size - 1)
    if x0 > x1 or y0 > y1:
        return

    px = np.arange(x0, x1 + 1) + 0.5
    py = np.arange(y0, y1 + 1) + 0.5

    # Separable edge functions: E(x, y) = dy*(y - ay) - dx*(x - ax), built by
    # broadcasting a column against a row to avoid full meshgrid copies.
    def bary(a, b):
        col = (sx[b] - sx[a]) * (py - sy[a])
        row = (sy[b] - sy[a]) * (px - sx[a])
        return (col[:, None] - row[None, :]) / area2

    b0 = bary(1, 2)
    b1 = bary(2, 0)
    b2 = bary(0, 1)
    inside = (b0 >= 0.0) & (b1 >= 0.0) & (b2 >= 0.0)
    if not inside.any():
        return

    iw = b0 * inv_w[0]
    iw += b1 * inv_w[1]
    iw += b2 * inv_w[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = 1.0 / iw
    window = zbuf[y0 : y1 + 1, x0 : x1 + 1]
    visible = inside & (depth < window) & (depth <= far)
    if not visible.any():
        return

    window[visible] = depth[visible]
    ids[y0 : y1 + 1, x0 : x1 + 1][visible] = object_id

    color_window = color[y0 : y1 + 1, x0 : x1 + 1]
    if (vcols[0] == vcols[1]).all() and (vcols[0] == vcols[2]).all():
        color_window[visible] = vcols[0]
    else:
        # Perspective-correct vertex color interpolation, visible pixels only.
        b0v, b1v, b2v = b0[visible], b1[visible], b2[visible]
        c = (
            np.outer(b0v * inv_w[0], vcols[0])
            + np.outer(b1v * inv_w[1], vcols[1])
            + np.outer(b2v * inv_w[2], vcols[2])
        ) / iw[visible][:, None]
        color_window[visible] = c


def visible_fractions(view: SampledView, object_count: int) -> np.ndarray:
    """Per-object visible pixel fractions relative to all non-background
    pixels; all zeros for an all-background view."""
    fg = view.object_ids >= 0
    total = int(fg.sum())
    if total == 0:
        return np.zeros(object_count)
    counts = np.bincount(view.object_ids[fg], minlength=object_count)
    return counts[:object_count] / total


def unique_depth(view: SampledView) -> int:
    """Count of distinct quantized depth values among non-background pixels.

    Quantization is round(depth / r * 1000) / 1000, i.e. three decimals of
    r-normalized depth.
    """
    fg = view.object_ids >= 0
    if not fg.any():
        return 0
    q = np.round(view.depth[fg] / view.pose.r, DEPTH_QUANT_DECIMALS)
    return int(np.unique(q).size)


def save_rgb_png(view: SampledView, path: str | Path) -> None:
    Image.fromarray(view.rgb, mode="RGB").save(str(path), format="PNG")


def save_depth_png(view: SampledView, path: str | Path) -> None:
    """16-bit PNG of depth normalized by the far plane; background maps to 65535."""
    norm = np.clip(view.depth / (10.0 * view.pose.r), 0.0, 1.0)
    norm[~np.isfinite(view.depth)] = 1.0
    img = np.rint(norm * 65535.0).astype(np.uint16)
    Image.fromarray(img).save(str(path), format="PNG")


def rgb_png_bytes(rgb: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def rgb_from_png_bytes(blob: bytes) -> np.ndarray:
    import io

    return np.asarray(Image.open(io.BytesIO(blob)).convert("RGB"))
