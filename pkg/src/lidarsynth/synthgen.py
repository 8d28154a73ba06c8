"""Procedural scenes with aligned camera, depth, radar, and LiDAR ground truth.

Scenes are a ground plane plus axis-aligned boxes and vertical cylinders,
each with a reflectivity and a radial velocity.  Every sensor is simulated
analytically from the same primitive list, so modalities stay consistent:
the LiDAR raster comes from exact ray intersections, the camera and depth
images from a pinhole projection of the same rays, and the radar cube from
a sum of complex tones whose FFT peaks land at predictable bins.

The sensor sits at the origin; +x is the boresight, +z is up, azimuth is
measured counterclockwise from +x (positive toward +y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lidarsynth import formats
from lidarsynth.geometry import GridSpec, PolarRaster
from lidarsynth.radar import RadarCube, range_angle_map, range_transform, range_velocity_map

__all__ = [
    "WORLD_RADIUS",
    "GROUND_REFLECTIVITY",
    "Primitive",
    "Scene",
    "SceneProfile",
    "RadarParams",
    "PROFILES",
    "PROFILE_ORDER",
    "resolve_profiles",
    "generate_scene",
    "raycast_lidar",
    "render_camera",
    "render_depth",
    "simulate_radar",
    "build_sample",
    "export_sample",
    "SAMPLE_FILES",
]

WORLD_RADIUS = 90.0
GROUND_REFLECTIVITY = 0.35
# camera shading: reflectivity * brightness / (1 + t / FALLOFF_SCALE)
FALLOFF_SCALE = 25.0
BACKGROUND_SHADE = 0.15
_EPS = 1e-9

SAMPLE_FILES = (
    "camera.lstf",
    "depth.lstf",
    "radar_cube.lstf",
    "range_angle.lstf",
    "range_velocity.lstf",
    "target_raster.lstf",
    "meta.txt",
)


@dataclass(frozen=True)
class Primitive:
    """One scene object: an axis-aligned cube or a vertical cylinder.

    ``size`` is the cube edge length; for cylinders it doubles as both the
    diameter and the height.  ``radial_velocity`` is the range rate seen by
    the radar, in m/s (positive receding).
    """

    kind: str
    center: tuple[float, float, float]
    size: float
    reflectivity: float
    radial_velocity: float = 0.0

    def __post_init__(self):
        if self.kind not in ("box", "cylinder"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if len(self.center) != 3:
            raise ValueError("center must have 3 components")
        if not self.size > 0.0:
            raise ValueError(f"size must be positive, got {self.size}")
        if not 0.0 <= self.reflectivity <= 1.0:
            raise ValueError(f"reflectivity {self.reflectivity} outside [0, 1]")


@dataclass(frozen=True)
class Scene:
    """A ground plane (optional) plus primitives, under one ambient brightness."""

    ground_height: float | None
    primitives: tuple[Primitive, ...]
    ambient_brightness: float

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if not 0.0 <= self.ambient_brightness <= 1.0:
            raise ValueError("ambient_brightness outside [0, 1]")
        if self.ground_height is not None and self.ground_height >= 0.0:
            raise ValueError("ground plane must sit below the sensor")
        for p in self.primitives:
            if math.hypot(*p.center) > WORLD_RADIUS:
                raise ValueError(f"primitive at {p.center} outside world radius")


@dataclass(frozen=True)
class SceneProfile:
    """Named sampling distribution for scenes.

    Profiles differ mainly in clutter and brightness; the low-brightness
    ones stand in for night-time captures.  All ranges are inclusive and
    must be non-empty.
    """

    name: str
    n_primitives: tuple[int, int]
    distance: tuple[float, float]
    size: tuple[float, float]
    brightness: tuple[float, float]
    noise_sigma: float
    max_speed: float = 12.0
    ground_height: float = -1.5

    def __post_init__(self):
        for label, rng in (
            ("n_primitives", self.n_primitives),
            ("distance", self.distance),
            ("size", self.size),
            ("brightness", self.brightness),
        ):
            if rng[0] > rng[1]:
                raise ValueError(f"empty {label} range {rng}")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be non-negative")
        if self.distance[1] + self.size[1] > WORLD_RADIUS:
            raise ValueError("profile can place primitives outside world radius")


PROFILES: dict[str, SceneProfile] = {
    "plaza_day": SceneProfile(
        name="plaza_day",
        n_primitives=(2, 5),
        distance=(6.0, 45.0),
        size=(0.8, 3.5),
        brightness=(0.7, 1.0),
        noise_sigma=0.02,
    ),
    "garage_night": SceneProfile(
        name="garage_night",
        n_primitives=(4, 8),
        distance=(4.0, 30.0),
        size=(0.6, 2.5),
        brightness=(0.05, 0.25),
        noise_sigma=0.05,
    ),
    "roadside_dusk": SceneProfile(
        name="roadside_dusk",
        n_primitives=(3, 6),
        distance=(8.0, 55.0),
        size=(1.0, 4.0),
        brightness=(0.3, 0.6),
        noise_sigma=0.03,
        max_speed=25.0,
    ),
    "campus_day": SceneProfile(
        name="campus_day",
        n_primitives=(1, 3),
        distance=(5.0, 40.0),
        size=(0.8, 3.0),
        brightness=(0.6, 0.95),
        noise_sigma=0.02,
    ),
}

PROFILE_ORDER = ("plaza_day", "garage_night", "roadside_dusk", "campus_day")


def resolve_profiles(name: str) -> tuple[SceneProfile, ...]:
    """Map a profile name (or "mixed") to the sequence used for a dataset.

    "mixed" cycles through all four profiles round-robin, so sample i uses
    profile i mod 4.
    """
    if name == "mixed":
        return tuple(PROFILES[n] for n in PROFILE_ORDER)
    if name not in PROFILES:
        known = ", ".join(sorted(PROFILES) + ["mixed"])
        raise ValueError(f"unknown profile {name!r} (known: {known})")
    return (PROFILES[name],)


def generate_scene(seed: int, profile: SceneProfile) -> Scene:
    """Draw a deterministic scene from the profile's distributions."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(profile.n_primitives[0], profile.n_primitives[1] + 1))
    prims = []
    for _ in range(n):
        kind = "box" if rng.random() < 0.5 else "cylinder"
        dist = float(rng.uniform(*profile.distance))
        azim = float(rng.uniform(-math.pi / 3, math.pi / 3))
        size = float(rng.uniform(*profile.size))
        # objects rest on the ground plane
        center = (
            dist * math.cos(azim),
            dist * math.sin(azim),
            profile.ground_height + size / 2.0,
        )
        prims.append(
            Primitive(
                kind=kind,
                center=center,
                size=size,
                reflectivity=float(rng.uniform(0.2, 1.0)),
                radial_velocity=float(rng.uniform(-profile.max_speed, profile.max_speed)),
            )
        )
    brightness = float(rng.uniform(*profile.brightness))
    return Scene(
        ground_height=profile.ground_height,
        primitives=tuple(prims),
        ambient_brightness=brightness,
    )


# -- analytic ray casting -----------------------------------------------------


def _intersect_box(dirs: np.ndarray, center, half: float) -> np.ndarray:
    """Slab-method ray/cube test from the origin; inf where there is no hit."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t_lo = (np.asarray(center) - half) * inv
        t_hi = (np.asarray(center) + half) * inv
    near = np.fmin(t_lo, t_hi)
    far = np.fmax(t_lo, t_hi)
    # both NaN only when the origin lies exactly on a slab along a zero
    # direction component; the slab then imposes no constraint
    near = np.where(np.isnan(near), -np.inf, near)
    far = np.where(np.isnan(far), np.inf, far)
    t_near = near.max(axis=1)
    t_far = far.min(axis=1)
    hit = (t_near <= t_far) & (t_far > _EPS)
    t = np.where(t_near > _EPS, t_near, t_far)
    return np.where(hit, t, np.inf)


def _intersect_cylinder(dirs: np.ndarray, center, size: float) -> np.ndarray:
    """Vertical cylinder (radius size/2, height size) with end caps."""
    cx, cy, cz = center
    radius = size / 2.0
    half_h = size / 2.0
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]

    best = np.full(dirs.shape[0], np.inf)

    a = dx * dx + dy * dy
    b = -2.0 * (dx * cx + dy * cy)
    c = cx * cx + cy * cy - radius * radius
    disc = b * b - 4.0 * a * c
    ok = (disc >= 0.0) & (a > _EPS)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        roots = np.stack([(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)])
    for t in roots:
        z = t * dz
        valid = ok & (t > _EPS) & (np.abs(z - cz) <= half_h)
        best = np.where(valid & (t < best), t, best)

    with np.errstate(divide="ignore", invalid="ignore"):
        for z_cap in (cz - half_h, cz + half_h):
            t = np.where(np.abs(dz) > _EPS, z_cap / dz, np.inf)
            px = t * dx - cx
            py = t * dy - cy
            valid = (t > _EPS) & (px * px + py * py <= radius * radius)
            best = np.where(valid & (t < best), t, best)
    return best


def _cast(scene: Scene, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit distance and reflectivity per ray; (inf, 0) for misses."""
    dirs = np.asarray(dirs, dtype=np.float64)
    n = dirs.shape[0]
    t_best = np.full(n, np.inf)
    refl = np.zeros(n)

    if scene.ground_height is not None:
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = scene.ground_height / dz
        hit = (dz < -_EPS) & (t > _EPS)
        closer = hit & (t < t_best)
        t_best = np.where(closer, t, t_best)
        refl = np.where(closer, GROUND_REFLECTIVITY, refl)

    for prim in scene.primitives:
        if prim.kind == "box":
            t = _intersect_box(dirs, prim.center, prim.size / 2.0)
        else:
            t = _intersect_cylinder(dirs, prim.center, prim.size)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        refl = np.where(closer, prim.reflectivity, refl)
    return t_best, refl


def raycast_lidar(scene: Scene, grid: GridSpec) -> PolarRaster:
    """Exact range image: one ray through every bin center, 0 where nothing hits."""
    phi = np.deg2rad(grid.row_centers())
    theta = np.deg2rad(grid.col_centers())
    cos_phi = np.cos(phi)[:, None]
    dirs = np.empty((grid.n_rows, grid.n_cols, 3))
    dirs[:, :, 0] = cos_phi * np.cos(theta)[None, :]
    dirs[:, :, 1] = cos_phi * np.sin(theta)[None, :]
    dirs[:, :, 2] = np.sin(phi)[:, None]
    t, _ = _cast(scene, dirs.reshape(-1, 3))
    ranges = t.reshape(grid.n_rows, grid.n_cols)
    ranges = np.where(ranges <= grid.max_range, ranges, 0.0)
    return PolarRaster(grid=grid, data=ranges.astype(np.float32))


def _camera_rays(width: int, height: int) -> np.ndarray:
    """Pinhole rays looking down +x with a 90 degree horizontal field of view."""
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")
    f = width / 2.0
    u = np.arange(width) + 0.5 - width / 2.0
    v = height / 2.0 - (np.arange(height) + 0.5)
    dirs = np.empty((height, width, 3))
    dirs[:, :, 0] = 1.0
    dirs[:, :, 1] = -u[None, :] / f  # columns increase to the right (-y)
    dirs[:, :, 2] = v[:, None] / f
    dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
    return dirs


def render_camera(scene: Scene, width: int, height: int) -> np.ndarray:
    """Flat-shaded grayscale frame: reflectivity x brightness x distance falloff."""
    dirs = _camera_rays(width, height)
    t, refl = _cast(scene, dirs.reshape(-1, 3))
    shade = refl * scene.ambient_brightness / (1.0 + t / FALLOFF_SCALE)
    shade = np.where(np.isfinite(t), shade, BACKGROUND_SHADE * scene.ambient_brightness)
    return shade.reshape(height, width).astype(np.float32)


def render_depth(scene: Scene, width: int, height: int) -> np.ndarray:
    """Ground-truth inverse depth in [0, 1]; 0 where no surface is seen."""
    dirs = _camera_rays(width, height)
    t, _ = _cast(scene, dirs.reshape(-1, 3))
    depth = np.where(np.isfinite(t), 1.0 / (1.0 + t), 0.0)
    return depth.reshape(height, width).astype(np.float32)


# -- radar --------------------------------------------------------------------


@dataclass(frozen=True)
class RadarParams:
    """FMCW cube dimensions and the normalization constants of the tone model."""

    n_rx: int = 4
    n_samples: int = 256
    n_chirps: int = 128
    noise_sigma: float = 0.02
    r_max: float = 100.0
    v_max: float = 30.0

    def __post_init__(self):
        if min(self.n_rx, self.n_samples, self.n_chirps) < 1:
            raise ValueError("cube dimensions must be at least 1")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be non-negative")
        if self.r_max <= 0.0 or self.v_max <= 0.0:
            raise ValueError("r_max and v_max must be positive")


def simulate_radar(
    scene: Scene,
    n_rx: int,
    n_samples: int,
    n_chirps: int,
    noise_sigma: float,
    seed: int,
    r_max: float = 100.0,
    v_max: float = 30.0,
) -> RadarCube:
    """Sum of one complex tone per primitive, plus circular Gaussian noise.

    Primitive at range r, azimuth a, radial velocity v contributes
    A * exp(2*pi*i * (f_r*n + f_a*k + f_v*m)) over (rx k, sample n, chirp m)
    with f_r = r / r_max, f_a = 0.5 * sin(a) (half-wavelength array), and
    f_v = v / v_max, so FFT peaks land at closed-form bins.
    """
    if min(n_rx, n_samples, n_chirps) < 1:
        raise ValueError("cube dimensions must be at least 1")
    if noise_sigma < 0.0:
        raise ValueError("noise_sigma must be non-negative")
    k = np.arange(n_rx).reshape(-1, 1, 1)
    n = np.arange(n_samples).reshape(1, -1, 1)
    m = np.arange(n_chirps).reshape(1, 1, -1)
    cube = np.zeros((n_rx, n_samples, n_chirps), dtype=np.complex128)
    for prim in scene.primitives:
        x, y, z = prim.center
        r = math.sqrt(x * x + y * y + z * z)
        azimuth = math.atan2(y, x)
        f_r = r / r_max
        f_a = 0.5 * math.sin(azimuth)
        f_v = prim.radial_velocity / v_max
        phase = f_r * n + f_a * k + f_v * m
        cube += prim.reflectivity * np.exp(2j * np.pi * phase)
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        shape = cube.shape
        scale = noise_sigma / math.sqrt(2.0)
        cube += rng.normal(0.0, scale, shape) + 1j * rng.normal(0.0, scale, shape)
    return RadarCube(cube.astype(np.complex64))


# -- sample assembly ----------------------------------------------------------


def build_sample(
    scene: Scene,
    grid: GridSpec,
    radar: RadarParams,
    cam_width: int,
    cam_height: int,
    seed: int,
) -> dict[str, np.ndarray]:
    """All per-sample arrays, keyed by modality name."""
    cube = simulate_radar(
        scene,
        radar.n_rx,
        radar.n_samples,
        radar.n_chirps,
        radar.noise_sigma,
        seed,
        r_max=radar.r_max,
        v_max=radar.v_max,
    )
    ranged = range_transform(cube)
    return {
        "camera": render_camera(scene, cam_width, cam_height),
        "depth": render_depth(scene, cam_width, cam_height),
        "radar_cube": cube.to_interleaved(),
        "range_angle": range_angle_map(ranged).data,
        "range_velocity": range_velocity_map(ranged).data,
        "target_raster": raycast_lidar(scene, grid).data,
    }


def export_sample(
    scene: Scene,
    grid: GridSpec,
    radar: RadarParams,
    cam_width: int,
    cam_height: int,
    out_dir,
    seed: int = 0,
    scenario: str = "",
) -> None:
    """Write one sample directory: five LSTF arrays plus meta.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = build_sample(scene, grid, radar, cam_width, cam_height, seed)
    for name, arr in arrays.items():
        formats.write_lstf(out / f"{name}.lstf", arr)
    meta = [
        f"scenario={scenario}",
        f"seed={seed}",
        f"n_primitives={len(scene.primitives)}",
        f"brightness={scene.ambient_brightness!r}",
        f"ground_height={scene.ground_height!r}",
        f"noise_sigma={radar.noise_sigma!r}",
    ]
    (out / "meta.txt").write_text("\n".join(meta) + "\n", encoding="utf-8")
