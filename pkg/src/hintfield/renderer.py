"""Pixel/ray generation and the discrete relit-color compositor."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .fields import SampleConfig, normal_at, radiance_eval, sample_ray
from .hints import HintConfig, compute_hints

THREADS_ENV = "HINTFIELD_THREADS"


# ---------------------------------------------------------------------------
# Cameras and rays
# ---------------------------------------------------------------------------

@dataclass
class Pose:
    """Camera-to-world rotation and translation."""

    rotation: np.ndarray     # (3, 3), orthonormal, det +1
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)

    def validate(self, tol=1e-6):
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > tol or np.linalg.det(self.rotation) < 0:
            raise ValueError("pose rotation is not a proper rotation matrix")

    def to_json(self):
        return {"rotation": self.rotation.tolist(),
                "translation": self.translation.tolist()}

    @staticmethod
    def from_json(obj):
        return Pose(np.array(obj["rotation"]), np.array(obj["translation"]))


@dataclass
class Camera:
    pose: Pose
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def to_json(self):
        return {"pose": self.pose.to_json(), "fx": self.fx, "fy": self.fy,
                "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @staticmethod
    def from_json(obj):
        return Camera(pose=Pose.from_json(obj["pose"]), fx=obj["fx"], fy=obj["fy"],
                      cx=obj["cx"], cy=obj["cy"],
                      width=int(obj["width"]), height=int(obj["height"]))


@dataclass
class LightSource:
    position: np.ndarray
    intensity: float = 1.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.intensity <= 0:
            raise ValueError("light intensity must be positive")


def ray_from_pixel(camera: Camera, px, py):
    """Rays through pixel centers (px + 0.5, py + 0.5); px/py may be arrays.

    Returns (origins, unit directions) with shape (..., 3).
    """
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    x = (px + 0.5 - camera.cx) / camera.fx
    y = (py + 0.5 - camera.cy) / camera.fy
    d_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
    d = d_cam @ camera.pose.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(camera.pose.translation, d.shape).copy()
    return o, d


def camera_rays(camera: Camera):
    """All pixel rays, row-major: returns (H*W, 3) origins and directions."""
    py, px = np.meshgrid(np.arange(camera.height), np.arange(camera.width),
                         indexing="ij")
    o, d = ray_from_pixel(camera, px.ravel(), py.ravel())
    return o, d


def ray_sphere_span(origins, directions, radius):
    """Near/far intersection depths with the scene bounding sphere.

    Rays that miss get near == far == 0 (no samples).
    """
    b = np.sum(origins * directions, axis=-1)
    c = np.sum(origins * origins, axis=-1) - radius * radius
    disc = b * b - c
    hit = disc > 0.0
    sq = np.sqrt(np.maximum(disc, 0.0))
    near = np.where(hit, np.maximum(-b - sq, 1e-4), 0.0)
    far = np.where(hit, np.maximum(-b + sq, 0.0), 0.0)
    far = np.maximum(far, near)
    return near, far


# ---------------------------------------------------------------------------
# Neural rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RenderConfig:
    sample: SampleConfig = SampleConfig()
    hint: HintConfig = HintConfig(march_bound=1.0)
    bounding_radius: float = 1.0
    seed: int = 0
    deterministic: bool = True


def render_rays(density, radiance, origins, directions, lights, cfg: RenderConfig,
                rng: np.random.Generator):
    """Relit color for a batch of rays; lights is (3,) or (B, 3) positions.

    C = sum_i w_i s(p_i, n_i, v, l, f_i, hints), composited over black.
    """
    origins = np.atleast_2d(origins)
    directions = np.atleast_2d(directions)
    B = origins.shape[0]
    lights = np.broadcast_to(np.asarray(lights, dtype=float), (B, 3))
    near, far = ray_sphere_span(origins, directions, cfg.bounding_radius)
    samples = sample_ray(density, origins, directions, near, far, cfg.sample, rng)
    hint_vec = compute_hints(density, samples, origins, lights, cfg.hint, rng)

    K = samples.n_sections
    pts = samples.positions()[:, :-1, :].reshape(-1, 3)
    feats = samples.features[:, :-1, :].reshape(B * K, -1)
    normals = normal_at(density, pts)
    v = np.repeat(directions, K, axis=0)
    l = np.repeat(lights, K, axis=0)
    h = np.repeat(hint_vec.as_array(), K, axis=0)
    rgb = radiance_eval(radiance, pts, normals, v, l, feats, h)
    return np.sum(samples.weights[..., None] * rgb.reshape(B, K, 3), axis=1)


def resolve_workers(n_workers=None):
    env = os.environ.get(THREADS_ENV)
    if n_workers is None:
        n_workers = int(env) if env else 1
    elif env:
        n_workers = min(n_workers, int(env))
    return max(1, n_workers)


def render_image(density, radiance, camera: Camera, light: LightSource,
                 cfg: RenderConfig, n_workers=None, rows_per_chunk=8):
    """Render a full image; returns (H, W, 3) float32 linear radiance.

    Work is chunked by rows with per-chunk seeds derived from (seed, row), so
    the result is bit-identical regardless of the worker count.
    """
    H, W = camera.height, camera.width
    out = np.zeros((H, W, 3), dtype=np.float32)
    origins, directions = camera_rays(camera)
    origins = origins.reshape(H, W, 3)
    directions = directions.reshape(H, W, 3)

    def run_chunk(r0):
        r1 = min(r0 + rows_per_chunk, H)
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, r0)))
        rgb = render_rays(density, radiance,
                          origins[r0:r1].reshape(-1, 3),
                          directions[r0:r1].reshape(-1, 3),
                          light.position, cfg, rng)
        out[r0:r1] = rgb.reshape(r1 - r0, W, 3)

    starts = range(0, H, rows_per_chunk)
    workers = resolve_workers(n_workers)
    if workers == 1:
        for r0 in starts:
            run_chunk(r0)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_chunk, starts))
    return out
