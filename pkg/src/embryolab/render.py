"""Deterministic software rendering of stimulus images.

A z-buffered rasterizer with Gouraud-interpolated Lambertian shading plus a
small ambient term renders each object on a uniform gray background.  The
object rotates; the camera is fixed on the -y axis with +z up.  Pitch turns
the object about the camera-horizontal x axis, yaw about the world-vertical
z axis (yaw applied first).  Identical inputs produce byte-identical
pixels, independent of thread count.

Also provides 1/f ("pink") noise masks used between stimulus and response.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from PIL import Image

from .mesh import Mesh, bounding_sphere, face_normals_areas, vertex_normals
from .seeding import rng as _rng

GRID_STEP = 30

# Exact cos/sin for multiples of 30 degrees, keyed by degrees mod 360.
_HALF_SQRT3 = math.sqrt(3.0) / 2.0
_COS_TABLE = {0: 1.0, 30: _HALF_SQRT3, 60: 0.5, 90: 0.0, 120: -0.5,
              150: -_HALF_SQRT3, 180: -1.0, 210: -_HALF_SQRT3, 240: -0.5,
              270: 0.0, 300: 0.5, 330: _HALF_SQRT3}


def _cos_deg(d: int) -> float:
    return _COS_TABLE[d % 360]


def _sin_deg(d: int) -> float:
    return _COS_TABLE[(d - 90) % 360]


class RenderError(ValueError):
    """Rendering misconfiguration (empty mesh, object out of frame, ...)."""


@dataclass(frozen=True)
class ViewSpec:
    """Object pose: pitch/yaw in degrees, multiples of 30, within [-180, 180).

    Angles outside the range are normalized, so (360, 0) equals (0, 0).
    """

    pitch_deg: int
    yaw_deg: int

    def __post_init__(self):
        for name in ("pitch_deg", "yaw_deg"):
            value = getattr(self, name)
            if value % GRID_STEP != 0:
                raise ValueError(f"{name}={value} is not a multiple of {GRID_STEP}")
            normalized = ((int(value) + 180) % 360) - 180
            object.__setattr__(self, name, normalized)

    def rotation(self) -> np.ndarray:
        """World rotation matrix: pitch about x applied after yaw about z."""
        cp, sp = _cos_deg(self.pitch_deg), _sin_deg(self.pitch_deg)
        cy, sy = _cos_deg(self.yaw_deg), _sin_deg(self.yaw_deg)
        rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
        rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        return rx @ rz


def compose_views(first: ViewSpec, then: ViewSpec) -> ViewSpec:
    """Angle-wise composition on the 30-degree grid (same-axis sequences)."""
    return ViewSpec(first.pitch_deg + then.pitch_deg, first.yaw_deg + then.yaw_deg)


@dataclass(frozen=True)
class RenderConfig:
    camera_distance: float = 3.0  # bounding-sphere multiples
    fov_deg: float = 40.0
    light_direction: tuple[float, float, float] = (-0.45, -0.75, 0.65)
    albedo: float = 0.85
    ambient: float = 0.25
    background: int = 128
    size: int = 224
    supersample: int = 2


@dataclass
class StimulusImage:
    """224x224 (by default) 8-bit RGB rendering of one object pose."""

    object_id: str
    view: ViewSpec
    pixels: np.ndarray  # (H, W, 3) uint8

    @property
    def image_id(self) -> str:
        return image_id(self.object_id, self.view)


def image_id(object_id: str, view: ViewSpec) -> str:
    return f"{object_id}_p{view.pitch_deg}_y{view.yaw_deg}"


@njit(cache=True, nogil=True)
def _raster_kernel(sx, sy, inv_depth, shade, faces, width, height, bg):
    img = np.full((height, width), bg, dtype=np.float64)
    zbuf = np.zeros((height, width), dtype=np.float64)
    for t in range(faces.shape[0]):
        i0, i1, i2 = faces[t, 0], faces[t, 1], faces[t, 2]
        x0, y0 = sx[i0], sy[i0]
        x1, y1 = sx[i1], sy[i1]
        x2, y2 = sx[i2], sy[i2]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        xmin = int(max(math.floor(min(x0, x1, x2)), 0))
        xmax = int(min(math.ceil(max(x0, x1, x2)), width - 1))
        ymin = int(max(math.floor(min(y0, y1, y2)), 0))
        ymax = int(min(math.ceil(max(y0, y1, y2)), height - 1))
        for py in range(ymin, ymax + 1):
            cy = py + 0.5
            for px in range(xmin, xmax + 1):
                cx = px + 0.5
                w0 = (x1 - cx) * (y2 - cy) - (x2 - cx) * (y1 - cy)
                w1 = (x2 - cx) * (y0 - cy) - (x0 - cx) * (y2 - cy)
                w2 = (x0 - cx) * (y1 - cy) - (x1 - cx) * (y0 - cy)
                if area > 0.0:
                    if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                        continue
                else:
                    if w0 > 0.0 or w1 > 0.0 or w2 > 0.0:
                        continue
                b0 = w0 / area
                b1 = w1 / area
                b2 = w2 / area
                iz = b0 * inv_depth[i0] + b1 * inv_depth[i1] + b2 * inv_depth[i2]
                if iz > zbuf[py, px]:
                    zbuf[py, px] = iz
                    img[py, px] = b0 * shade[i0] + b1 * shade[i1] + b2 * shade[i2]
    return img, zbuf


def _project_and_shade(mesh: Mesh, view: ViewSpec, cfg: RenderConfig):
    verts = mesh.vertices
    if len(verts) == 0 or len(mesh.faces) == 0:
        raise RenderError("empty mesh")
    center, radius = bounding_sphere(verts)
    if radius <= 0.0:
        raise RenderError("degenerate mesh extent")
    if cfg.camera_distance <= 1.0:
        raise RenderError("camera inside bounding sphere")

    rot = view.rotation()
    v = (verts - center) @ rot.T
    normals = vertex_normals(v, mesh.faces)

    light = np.asarray(cfg.light_direction, dtype=np.float64)
    light = light / np.linalg.norm(light)
    lambert = np.maximum(normals @ light, 0.0)
    shade = cfg.albedo * (cfg.ambient + (1.0 - cfg.ambient) * lambert)

    cam_dist = cfg.camera_distance * radius
    depth = v[:, 1] + cam_dist
    if depth.min() <= 0.0:
        raise RenderError("object behind camera: camera_distance too small")
    focal = 1.0 / math.tan(math.radians(cfg.fov_deg) / 2.0)
    ndc_x = focal * v[:, 0] / depth
    ndc_y = focal * v[:, 2] / depth
    if np.abs(ndc_x).max() >= 1.0 or np.abs(ndc_y).max() >= 1.0:
        raise RenderError("object out of frame: increase camera_distance or fov")

    res = cfg.size * cfg.supersample
    sx = (ndc_x + 1.0) * 0.5 * res
    sy = (1.0 - ndc_y) * 0.5 * res

    # Cull faces pointing away from the camera.
    cam_pos = np.array([0.0, -cam_dist, 0.0])
    fnormals, _ = face_normals_areas(v, mesh.faces)
    centroids = (v[mesh.faces[:, 0]] + v[mesh.faces[:, 1]] + v[mesh.faces[:, 2]]) / 3.0
    front = np.einsum("ij,ij->i", fnormals, centroids - cam_pos) <= 0.0
    faces = np.ascontiguousarray(mesh.faces[front])

    return sx, sy, 1.0 / depth, shade, faces, res


def render_with_coverage(mesh: Mesh, view: ViewSpec, cfg: RenderConfig = RenderConfig()):
    """Render one view; returns (StimulusImage, foreground pixel fraction)."""
    sx, sy, inv_depth, shade, faces, res = _project_and_shade(mesh, view, cfg)
    img, zbuf = _raster_kernel(sx, sy, inv_depth, shade, faces, res, res,
                               cfg.background / 255.0)
    ss = cfg.supersample
    small = img.reshape(cfg.size, ss, cfg.size, ss).mean(axis=(1, 3))
    pixels8 = np.rint(np.clip(small, 0.0, 1.0) * 255.0).astype(np.uint8)
    pixels = np.repeat(pixels8[:, :, None], 3, axis=2)
    coverage = float(np.count_nonzero(zbuf) / zbuf.size)
    return StimulusImage(mesh.lineage.object_id, view, pixels), coverage


def render(mesh: Mesh, view: ViewSpec, cfg: RenderConfig = RenderConfig()) -> StimulusImage:
    return render_with_coverage(mesh, view, cfg)[0]


def canonical_views() -> list[ViewSpec]:
    """Initial pose plus the 11 pitch-only and 11 yaw-only 30-degree steps."""
    angles = [a for a in range(-180, 180, GRID_STEP) if a != 0]
    views = [ViewSpec(0, 0)]
    views += [ViewSpec(p, 0) for p in angles]
    views += [ViewSpec(0, y) for y in angles]
    return views


def rotation_series(mesh: Mesh, cfg: RenderConfig = RenderConfig(),
                    threads: int = 1) -> list[StimulusImage]:
    """The canonical 23-image series for one object."""
    views = canonical_views()
    if threads <= 1:
        return [render(mesh, v, cfg) for v in views]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda v: render(mesh, v, cfg), views))


# ---------------------------------------------------------------------------
# pink noise


def pink_noise_mask(seed: int, width: int = 224, height: int = 224) -> StimulusImage:
    """Grayscale mask whose amplitude spectrum falls off as 1/f.

    Pixel values span the full 8-bit range; identical seeds give identical
    bytes.
    """
    gen = _rng("pink-noise", seed)
    spectrum = gen.normal(size=(height, width)) + 1j * gen.normal(size=(height, width))
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    freq = np.hypot(fy, fx)
    freq[0, 0] = 1.0
    spectrum /= freq
    spectrum[0, 0] = 0.0
    field = np.fft.ifft2(spectrum).real
    lo, hi = field.min(), field.max()
    pixels8 = np.rint((field - lo) / (hi - lo) * 255.0).astype(np.uint8)
    pixels = np.repeat(pixels8[:, :, None], 3, axis=2)
    return StimulusImage(f"mask-{seed}", ViewSpec(0, 0), pixels)


def spectral_slope(pixels: np.ndarray) -> float:
    """Log-log slope of the radially averaged amplitude spectrum.

    Fit over mid frequencies (4 cycles/image up to a quarter of the
    Nyquist band); pink noise sits near -1.
    """
    gray = pixels[:, :, 0].astype(np.float64) if pixels.ndim == 3 else pixels.astype(np.float64)
    gray = gray - gray.mean()
    amp = np.abs(np.fft.fft2(gray))
    h, w = gray.shape
    fy = np.fft.fftfreq(h)[:, None] * h
    fx = np.fft.fftfreq(w)[None, :] * w
    radius = np.hypot(fy, fx)
    bins = np.rint(radius).astype(np.int64)
    top = min(h, w) // 4
    means = np.array([amp[bins == r].mean() for r in range(4, top)])
    freqs = np.arange(4, top, dtype=np.float64)
    slope, _ = np.polyfit(np.log10(freqs), np.log10(means), 1)
    return float(slope)


# ---------------------------------------------------------------------------
# PNG IO


def save_png(pixels: np.ndarray | StimulusImage, path: str | Path) -> None:
    if isinstance(pixels, StimulusImage):
        pixels = pixels.pixels
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))
