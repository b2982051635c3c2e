"""Procedural planet: terrain raster, nadir camera flights and their ground truth.

Terrain is multi-octave value noise shaded into a grayscale orthophoto. Flights
are rendered by resampling that orthophoto through the exact plane-induced
homography of each ground-truth camera pose, so every frame ships with the
homography that produced it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from uavloc.errors import InvalidArgument, OutOfBounds
from uavloc.geometry import Pose6, apply_homography, euler_zyx

# camera axes expressed in the body frame: x forward, image-down = body-right, optical axis = body-down
BODY_FROM_CAMERA = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


class TerrainKind(str, enum.Enum):
    CRATER = "crater"
    GRAVEL = "gravel"
    MOUNTAIN = "mountain"


_KIND_CODE = {TerrainKind.CRATER: 1, TerrainKind.GRAVEL: 2, TerrainKind.MOUNTAIN: 3}


@dataclass(frozen=True)
class WorldMap:
    raster: np.ndarray
    meters_per_pixel: float
    origin_world: tuple
    seed: int
    terrain_kind: TerrainKind

    @property
    def width(self):
        return self.raster.shape[1]

    @property
    def height(self):
        return self.raster.shape[0]

    def pixel_to_world(self, uv):
        """Map pixel coordinates (u right, v down) to world (x east, y north) meters."""
        uv = np.asarray(uv, dtype=float)
        ox, oy = self.origin_world
        x = ox + uv[..., 0] * self.meters_per_pixel
        y = oy - uv[..., 1] * self.meters_per_pixel
        return np.stack([x, y], axis=-1)

    def world_to_pixel(self, xy):
        xy = np.asarray(xy, dtype=float)
        ox, oy = self.origin_world
        u = (xy[..., 0] - ox) / self.meters_per_pixel
        v = (oy - xy[..., 1]) / self.meters_per_pixel
        return np.stack([u, v], axis=-1)

    def pixel_from_world_matrix(self):
        """3x3 affine taking homogeneous world (x, y, 1) to pixel (u, v, 1)."""
        m = self.meters_per_pixel
        ox, oy = self.origin_world
        return np.array([[1 / m, 0.0, -ox / m], [0.0, -1 / m, oy / m], [0.0, 0.0, 1.0]])

    def metadata(self):
        return {
            "seed": int(self.seed),
            "kind": self.terrain_kind.value,
            "meters_per_pixel": float(self.meters_per_pixel),
            "origin_world": [float(v) for v in self.origin_world],
            "width": self.width,
            "height": self.height,
        }

    @property
    def extent(self):
        """(xmin, xmax, ymin, ymax) of the raster in world meters."""
        ox, oy = self.origin_world
        m = self.meters_per_pixel
        return ox, ox + (self.width - 1) * m, oy - (self.height - 1) * m, oy


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    image_width: int
    image_height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidArgument("focal lengths must be positive")
        if not (0 <= self.cx <= self.image_width - 1 and 0 <= self.cy <= self.image_height - 1):
            raise InvalidArgument("principal point must lie inside the image")

    @classmethod
    def nadir(cls, size=256, fov_deg=None, focal=160.0):
        if fov_deg is not None:
            focal = 0.5 * size / np.tan(np.radians(fov_deg) / 2)
        c = (size - 1) / 2.0
        return cls(float(focal), float(focal), c, c, size, size)

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self):
        return np.linalg.inv(self.K)

    @property
    def center(self):
        return np.array([(self.image_width - 1) / 2.0, (self.image_height - 1) / 2.0])

    def to_dict(self):
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "image_width", "image_height")}


@dataclass(frozen=True)
class GroundTruthFrame:
    frame_id: int
    timestamp: float
    pose: Pose6
    image: np.ndarray
    gt_homography: np.ndarray


@dataclass(frozen=True)
class FlightPath:
    waypoints: tuple  # ((x, y), ...) world meters
    speed: float = 10.0  # m/s
    altitude: float = 40.0  # m above the ground plane
    frame_rate: float = 10.0  # Hz
    yaw: float = 0.0  # camera heading, radians; held fixed along the path


@dataclass(frozen=True)
class NoiseSpec:
    attitude_jitter_deg: float = 2.0
    jitter_max_hz: float = 0.6
    intensity_noise: float = 0.0
    gain: float = 1.0
    bias: float = 0.0
    blur_sigma: float = 0.0
    seed: int = 0


# ---------------------------------------------------------------------------
# terrain


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def value_noise(shape, cell, rng):
    """Smoothly interpolated lattice noise in [0, 1] with feature size ``cell`` pixels."""
    h, w = shape
    ny = int(np.ceil(h / cell)) + 2
    nx = int(np.ceil(w / cell)) + 2
    lattice = rng.random((ny, nx))
    ys = np.arange(h) / cell
    xs = np.arange(w) / cell
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = _fade(ys - y0)[:, None]
    fx = _fade(xs - x0)[None, :]
    a = lattice[np.ix_(y0, x0)]
    b = lattice[np.ix_(y0, x0 + 1)]
    c = lattice[np.ix_(y0 + 1, x0)]
    d = lattice[np.ix_(y0 + 1, x0 + 1)]
    top = a + (b - a) * fx
    bot = c + (d - c) * fx
    return top + (bot - top) * fy


def fractal_noise(shape, rng, base_cell=256, octaves=8, persistence=0.55):
    total = np.zeros(shape)
    amp, norm, cell = 1.0, 0.0, float(base_cell)
    for _ in range(octaves):
        if cell < 1:
            break
        total += amp * value_noise(shape, cell, rng)
        norm += amp
        amp *= persistence
        cell /= 2
    return total / norm


def _add_craters(height, rng, mpp, count):
    h, w = height.shape
    yy, xx = np.mgrid[0:h, 0:w]
    radii = rng.uniform(4.0, 30.0, count) / mpp * (rng.random(count) ** 2 + 0.2)
    cys = rng.uniform(0, h, count)
    cxs = rng.uniform(0, w, count)
    for r, cy, cx in zip(radii, cys, cxs):
        r = max(r, 3.0)
        y0, y1 = int(max(cy - 1.6 * r, 0)), int(min(cy + 1.6 * r + 1, h))
        x0, x1 = int(max(cx - 1.6 * r, 0)), int(min(cx + 1.6 * r + 1, w))
        if y0 >= y1 or x0 >= x1:
            continue
        d = np.hypot(yy[y0:y1, x0:x1] - cy, xx[y0:y1, x0:x1] - cx) / r
        bowl = np.where(d < 1, -(1 - d**2), 0.0)
        rim = 0.35 * np.exp(-(((d - 1.0) / 0.18) ** 2))
        height[y0:y1, x0:x1] += 0.25 * (bowl + rim) * min(r / 40.0, 1.0)
    return height


def generate_world(seed, kind, width, height, mpp, origin_world=None) -> WorldMap:
    """Build a deterministic grayscale planet surface.

    ``kind`` shapes the spectrum: craters add radial bowls with raised rims,
    gravel adds high-frequency speckle and scattered rocks, mountains use ridged
    noise. The same arguments always produce a byte-identical raster.
    """
    kind = TerrainKind(kind)
    if width < 32 or height < 32:
        raise InvalidArgument(f"world dims must be >= 32 px, got {width}x{height}")
    if not mpp > 0:
        raise InvalidArgument(f"meters_per_pixel must be positive, got {mpp}")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, _KIND_CODE[kind], width, height])
    shape = (height, width)

    relief = fractal_noise(shape, rng, base_cell=256, octaves=6, persistence=0.5)
    albedo = fractal_noise(shape, rng, base_cell=64, octaves=6, persistence=0.65)
    if kind is TerrainKind.CRATER:
        relief = _add_craters(relief, rng, mpp, count=max(8, int(width * height / 9000)))
    elif kind is TerrainKind.MOUNTAIN:
        ridged = 1.0 - np.abs(2.0 * fractal_noise(shape, rng, base_cell=128, octaves=6) - 1.0)
        relief = 0.4 * relief + 1.2 * ridged**2
    elif kind is TerrainKind.GRAVEL:
        speckle = fractal_noise(shape, rng, base_cell=4, octaves=3, persistence=0.7)
        albedo = 0.5 * albedo + 0.5 * speckle
        n_rocks = int(width * height / 400)
        rocks = np.zeros(shape)
        ry = rng.integers(0, height, n_rocks)
        rx = rng.integers(0, width, n_rocks)
        rocks[ry, rx] = rng.uniform(0.5, 1.0, n_rocks)
        relief = relief + 0.6 * ndimage.gaussian_filter(rocks, 1.2) * 6

    # hillshade with light from the north-west, 45 degrees elevation
    relief_m = relief * 60.0
    gy, gx = np.gradient(relief_m, mpp)
    az, el = np.radians(315.0), np.radians(45.0)
    lx, ly, lz = np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)
    norm = np.sqrt(gx**2 + gy**2 + 1.0)
    # raster rows grow southward, so the north component of the gradient is -gy
    shade = (-gx * lx + gy * ly + lz) / norm
    img = 0.6 * _stretch(shade) + 0.4 * _stretch(albedo)
    raster = np.clip(np.rint(_stretch(img) * 255.0), 0, 255).astype(np.uint8)

    if origin_world is None:
        origin_world = (0.0, (height - 1) * mpp)
    return WorldMap(raster, float(mpp), tuple(float(v) for v in origin_world), int(seed), kind)


def _stretch(a, lo=0.5, hi=99.5):
    p0, p1 = np.percentile(a, [lo, hi])
    return np.clip((a - p0) / max(p1 - p0, 1e-12), 0.0, 1.0)


# ---------------------------------------------------------------------------
# camera geometry


def camera_rotation(yaw, pitch, roll):
    """world_from_camera rotation for a body attitude (radians)."""
    return euler_zyx(yaw, pitch, roll) @ BODY_FROM_CAMERA


def ground_homography(world: WorldMap, camera: CameraModel, pose: Pose6):
    """Homography taking UAV pixels to world-map pixels for a camera over the z = 0 plane."""
    R_cw = pose.R.T
    t_cw = -R_cw @ pose.translation
    img_from_plane = camera.K @ np.column_stack([R_cw[:, 0], R_cw[:, 1], t_cw])
    H = world.pixel_from_world_matrix() @ np.linalg.inv(img_from_plane)
    return H / H[2, 2]


def warp_to(image, H_src_from_dst, out_shape, order=1, cval=np.nan):
    """Resample ``image`` on the pixel grid of the destination.

    ``H_src_from_dst`` maps destination pixels to source pixels. Samples that
    fall outside the source are filled with ``cval``.
    """
    h, w = out_shape
    vv, uu = np.mgrid[0:h, 0:w]
    pts = np.stack([uu.ravel(), vv.ravel()], axis=1).astype(float)
    src = apply_homography(H_src_from_dst, pts)
    coords = np.stack([src[:, 1], src[:, 0]])
    out = ndimage.map_coordinates(
        np.asarray(image, dtype=float), coords, order=order, mode="nearest"
    ).reshape(h, w)
    sh, sw = np.asarray(image).shape
    inside = (src[:, 0] >= 0) & (src[:, 0] <= sw - 1) & (src[:, 1] >= 0) & (src[:, 1] <= sh - 1)
    out = np.where(inside.reshape(h, w), out, cval)
    return out


def footprint_corners(camera: CameraModel, H):
    w, h = camera.image_width, camera.image_height
    corners = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], float)
    return apply_homography(H, corners)


# ---------------------------------------------------------------------------
# flights


def _jitter_signal(rng, times, amplitude, max_hz):
    """Smooth zero-mean oscillation bounded by ``amplitude``."""
    if amplitude == 0:
        return np.zeros_like(times)
    n = 3
    weights = rng.uniform(0.5, 1.0, n)
    weights /= weights.sum()
    freqs = rng.uniform(0.15 * max_hz, max_hz, n)
    phases = rng.uniform(0, 2 * np.pi, n)
    sig = np.sum(weights[:, None] * np.sin(2 * np.pi * freqs[:, None] * times[None, :] + phases[:, None]), axis=0)
    return amplitude * sig


def interpolate_path(path: FlightPath):
    """Positions (N, 2), waypoint segment index per sample, and timestamps along the path."""
    wps = np.asarray(path.waypoints, dtype=float).reshape(-1, 2)
    if len(wps) == 0:
        raise InvalidArgument("path needs at least one waypoint")
    if path.speed <= 0 or path.frame_rate <= 0:
        raise InvalidArgument("speed and frame rate must be positive")
    seg = np.linalg.norm(np.diff(wps, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    step = path.speed / path.frame_rate
    n = int(np.floor(total / step + 1e-9)) + 1
    s = np.arange(n) * step
    if len(wps) == 1:
        return wps.copy(), np.zeros(1, int), np.zeros(1)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = np.where(seg[idx] > 0, (s - cum[idx]) / np.where(seg[idx] > 0, seg[idx], 1.0), 0.0)
    pos = wps[idx] + frac[:, None] * (wps[idx + 1] - wps[idx])
    return pos, idx, np.arange(n) / path.frame_rate


def footprint_half_extent(camera: CameraModel, altitude):
    return 0.5 * max(camera.image_width / camera.fx, camera.image_height / camera.fy) * altitude


def check_path_bounds(world: WorldMap, camera: CameraModel, path: FlightPath, jitter_deg=0.0):
    xmin, xmax, ymin, ymax = world.extent
    half = footprint_half_extent(camera, path.altitude)
    half += path.altitude * np.tan(np.radians(jitter_deg)) * 2.0
    for i, (x, y) in enumerate(np.asarray(path.waypoints, float).reshape(-1, 2)):
        if x - half < xmin or x + half > xmax or y - half < ymin or y + half > ymax:
            raise OutOfBounds(
                f"waypoint {i} at ({x:.2f}, {y:.2f}) m leaves the map (footprint half-extent {half:.2f} m)",
                waypoint_index=i,
            )


def render_flight(world: WorldMap, camera: CameraModel, path: FlightPath, noise: NoiseSpec = NoiseSpec()):
    """Render the nadir image sequence for a flight over ``world``."""
    if path.altitude <= 0:
        raise InvalidArgument("altitude must be positive")
    check_path_bounds(world, camera, path, noise.attitude_jitter_deg)
    pos, seg_idx, times = interpolate_path(path)
    rng = np.random.default_rng([int(noise.seed), int(world.seed), 7])
    amp = np.radians(noise.attitude_jitter_deg)
    roll = _jitter_signal(rng, times, amp, noise.jitter_max_hz)
    pitch = _jitter_signal(rng, times, amp, noise.jitter_max_hz)

    raster = world.raster
    frames = []
    for i in range(len(pos)):
        R = camera_rotation(path.yaw, pitch[i], roll[i])
        pose = Pose6.from_rt(R, [pos[i, 0], pos[i, 1], path.altitude], "world_from_camera")
        H = ground_homography(world, camera, pose)
        corners = footprint_corners(camera, H)
        if (corners.min() < 0) or (corners[:, 0].max() > world.width - 1) or (corners[:, 1].max() > world.height - 1):
            k = int(seg_idx[i])
            raise OutOfBounds(f"frame {i} footprint leaves the map after waypoint {k}", waypoint_index=k)
        img = warp_to(raster, H, (camera.image_height, camera.image_width), cval=0.0)
        img = _photometric(img, noise, rng)
        frames.append(GroundTruthFrame(i, float(times[i]), pose, img, H))
    return frames


def _photometric(img, noise: NoiseSpec, rng):
    out = img
    if noise.blur_sigma > 0:
        out = ndimage.gaussian_filter(out, noise.blur_sigma)
    if noise.gain != 1.0 or noise.bias != 0.0:
        out = noise.gain * out + noise.bias
    if noise.intensity_noise > 0:
        out = out + rng.normal(0.0, noise.intensity_noise, out.shape)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def gt_position_of(frame: GroundTruthFrame):
    return np.array(frame.pose.translation, dtype=float)


def ellipse_waypoints(center, semi_x, semi_y, n=240, start_angle=0.0):
    """Closed elliptical loop, handy for benchmark flights."""
    ang = start_angle + np.linspace(0.0, 2 * np.pi, n + 1)
    return tuple((center[0] + semi_x * np.cos(a), center[1] + semi_y * np.sin(a)) for a in ang)


def path_length(waypoints):
    w = np.asarray(waypoints, float).reshape(-1, 2)
    return float(np.sum(np.linalg.norm(np.diff(w, axis=0), axis=1)))
