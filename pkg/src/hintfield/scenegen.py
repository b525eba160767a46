"""Analytic-SDF ground truth: scenes, sphere tracer, direct-light shading,
and the synthetic acquisition protocol (random upper-hemisphere views and
lights at 2 to 2.5 times the scene size).

The oracle renders direct lighting only (no interreflections); shadows come
from sphere-traced visibility rays, so shadow regions are exactly black.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .hints import ggx_eval
from .pfm import write_pfm
from .renderer import Camera, LightSource, Pose, camera_rays, resolve_workers

SCHEMA_VERSION = 1
TRACE_TOL = 1e-4
TRACE_MAX_STEPS = 512


# ---------------------------------------------------------------------------
# Scene description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Material:
    albedo: tuple
    specular_weight: float = 0.0
    roughness: float = 0.5

    def __post_init__(self):
        if any(not 0 <= a <= 1 for a in self.albedo):
            raise ValueError("albedo components must be in [0, 1]")
        if self.specular_weight < 0:
            raise ValueError("specular_weight must be >= 0")
        if not 0 < self.roughness <= 1:
            raise ValueError("roughness must be in (0, 1]")


@dataclass(frozen=True)
class Primitive:
    shape: str                 # sphere | box | torus | plane
    material: int = 0
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0        # sphere
    half_extents: tuple = (1.0, 1.0, 1.0)  # box
    major: float = 0.5         # torus (axis +z)
    minor: float = 0.2
    normal: tuple = (0.0, 0.0, 1.0)        # plane: n.p = offset
    offset: float = 0.0

    def __post_init__(self):
        if self.shape not in ("sphere", "box", "torus", "plane"):
            raise ValueError(f"unknown primitive shape {self.shape!r}")


@dataclass(frozen=True)
class SceneSpec:
    name: str
    primitives: tuple
    materials: tuple
    scene_radius: float = 1.0

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")
        if self.scene_radius <= 0:
            raise ValueError("scene_radius must be positive")

    def to_json(self):
        prims = []
        for p in self.primitives:
            prims.append({"shape": p.shape, "material": p.material,
                          "center": list(p.center), "radius": p.radius,
                          "half_extents": list(p.half_extents),
                          "major": p.major, "minor": p.minor,
                          "normal": list(p.normal), "offset": p.offset})
        mats = [{"albedo": list(m.albedo), "specular_weight": m.specular_weight,
                 "roughness": m.roughness} for m in self.materials]
        return {"name": self.name, "primitives": prims, "materials": mats,
                "scene_radius": self.scene_radius}

    @staticmethod
    def from_json(obj):
        prims = tuple(Primitive(shape=p["shape"], material=p["material"],
                                center=tuple(p["center"]), radius=p["radius"],
                                half_extents=tuple(p["half_extents"]),
                                major=p["major"], minor=p["minor"],
                                normal=tuple(p["normal"]), offset=p["offset"])
                      for p in obj["primitives"])
        mats = tuple(Material(albedo=tuple(m["albedo"]),
                              specular_weight=m["specular_weight"],
                              roughness=m["roughness"]) for m in obj["materials"])
        return SceneSpec(name=obj["name"], primitives=prims, materials=mats,
                         scene_radius=obj["scene_radius"])


def sphere_plane_glossy() -> SceneSpec:
    """Canonical scene: glossy red sphere resting on a grey slab, inside the
    unit scene sphere. Exercises both shadow and highlight hints."""
    return SceneSpec(
        name="sphere_plane_glossy",
        primitives=(
            Primitive(shape="sphere", material=0, center=(0.0, 0.0, 0.1), radius=0.5),
            Primitive(shape="box", material=1, center=(0.0, 0.0, -0.5),
                      half_extents=(0.55, 0.55, 0.1)),
        ),
        materials=(
            Material(albedo=(0.7, 0.3, 0.3), specular_weight=0.3, roughness=0.13),
            Material(albedo=(0.5, 0.5, 0.5), specular_weight=0.0, roughness=0.5),
        ),
        scene_radius=1.0,
    )


SCENES = {"sphere_plane_glossy": sphere_plane_glossy}


# ---------------------------------------------------------------------------
# Signed distance evaluation
# ---------------------------------------------------------------------------

def primitive_sdf(prim: Primitive, p):
    p = np.asarray(p, dtype=float)
    c = np.asarray(prim.center)
    if prim.shape == "sphere":
        return np.linalg.norm(p - c, axis=-1) - prim.radius
    if prim.shape == "box":
        q = np.abs(p - c) - np.asarray(prim.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside
    if prim.shape == "torus":
        rel = p - c
        ring = np.hypot(np.linalg.norm(rel[..., :2], axis=-1) - prim.major,
                        rel[..., 2])
        return ring - prim.minor
    if prim.shape == "plane":
        n = np.asarray(prim.normal, dtype=float)
        n = n / np.linalg.norm(n)
        return p @ n - prim.offset
    raise ValueError(prim.shape)


def scene_sdf(scene: SceneSpec, p):
    """(signed distance, material id) as the min-union over primitives."""
    p = np.asarray(p, dtype=float)
    dists = np.stack([primitive_sdf(prim, p) for prim in scene.primitives], axis=-1)
    idx = np.argmin(dists, axis=-1)
    f = np.take_along_axis(dists, idx[..., None], axis=-1)[..., 0]
    mats = np.array([prim.material for prim in scene.primitives])
    return f, mats[idx]


def scene_normal(scene: SceneSpec, p, h=1e-4):
    """Central-difference SDF gradient, normalized."""
    p = np.asarray(p, dtype=float)
    g = np.empty_like(p)
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        g[..., axis] = scene_sdf(scene, p + e)[0] - scene_sdf(scene, p - e)[0]
    return g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)


# ---------------------------------------------------------------------------
# Sphere tracing
# ---------------------------------------------------------------------------

@dataclass
class Hit:
    position: np.ndarray  # (B, 3)
    normal: np.ndarray    # (B, 3), unit where hit
    material: np.ndarray  # (B,) int
    depth: np.ndarray     # (B,)
    hit: np.ndarray       # (B,) bool


def sphere_trace(scene: SceneSpec, origins, directions, t_max=20.0,
                 tol=TRACE_TOL, max_steps=TRACE_MAX_STEPS) -> Hit:
    """March each ray by the current SDF value until |f| < tol or escape."""
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    B = origins.shape[0]
    t = np.zeros(B)
    done = np.zeros(B, dtype=bool)
    hit = np.zeros(B, dtype=bool)
    for _ in range(max_steps):
        active = ~done
        if not active.any():
            break
        p = origins[active] + t[active, None] * directions[active]
        f, _ = scene_sdf(scene, p)
        converged = np.abs(f) < tol
        idx = np.flatnonzero(active)
        hit[idx[converged]] = True
        done[idx[converged]] = True
        t[idx] += np.where(converged, 0.0, f)
        escaped = t[idx] > t_max
        done[idx[escaped]] = True
    pos = origins + t[:, None] * directions
    mat = np.zeros(B, dtype=int)
    normal = np.zeros((B, 3))
    if hit.any():
        _, mat_hit = scene_sdf(scene, pos[hit])
        mat[hit] = mat_hit
        normal[hit] = scene_normal(scene, pos[hit])
    return Hit(position=pos, normal=normal, material=mat, depth=t, hit=hit)


def light_occluded(scene: SceneSpec, points, normals, light_pos, eps=1e-3):
    """Binary shadow test by sphere tracing from the surface to the light."""
    points = np.atleast_2d(points)
    light = np.broadcast_to(np.asarray(light_pos, dtype=float), points.shape)
    to_light = light - points
    dist = np.linalg.norm(to_light, axis=-1)
    d = to_light / np.maximum(dist[:, None], 1e-12)
    start = points + eps * normals + eps * d
    shadow = sphere_trace(scene, start, d, t_max=float(dist.max()))
    return shadow.hit & (shadow.depth < dist - 2 * eps)


# ---------------------------------------------------------------------------
# Direct-light shading
# ---------------------------------------------------------------------------

def shade_direct(scene: SceneSpec, hit: Hit, light: LightSource, camera_pos,
                 exposure=1.0):
    """Direct lighting with sphere-traced shadows; black where no surface.

    rgb = vis * exposure * I/d^2 * [ (n.l)+ albedo/pi
                                     + specular_weight * ggx(n, v, l, rough) ]
    (the GGX term already carries its (n.l) cosine).
    """
    B = hit.position.shape[0]
    out = np.zeros((B, 3))
    if not hit.hit.any():
        return out
    m = hit.hit
    pos, nrm = hit.position[m], hit.normal[m]
    to_light = light.position - pos
    dist = np.linalg.norm(to_light, axis=-1)
    l = to_light / dist[:, None]
    v = np.asarray(camera_pos, dtype=float) - pos
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    ndl = np.maximum(np.sum(nrm * l, axis=-1), 0.0)

    albedo = np.array([mat.albedo for mat in scene.materials])[hit.material[m]]
    spec_w = np.array([mat.specular_weight for mat in scene.materials])[hit.material[m]]
    rough = np.array([mat.roughness for mat in scene.materials])[hit.material[m]]
    spec = np.zeros(len(pos))
    for r in np.unique(rough):
        sel = rough == r
        spec[sel] = ggx_eval(nrm[sel], v[sel], l[sel], float(r))
    radiance = ndl[:, None] * albedo / np.pi + (spec_w * spec)[:, None]

    vis = ~light_occluded(scene, pos, nrm, light.position)
    falloff = light.intensity / np.square(dist)
    out[m] = exposure * (vis * falloff)[:, None] * radiance
    return out


def oracle_render_image(scene: SceneSpec, camera: Camera, light: LightSource,
                        exposure=1.0, n_workers=None):
    """Reference image: sphere trace + direct shading, (H, W, 3) float32."""
    origins, directions = camera_rays(camera)
    hit = sphere_trace(scene, origins, directions)
    rgb = shade_direct(scene, hit, light, camera.pose.translation, exposure)
    return rgb.reshape(camera.height, camera.width, 3).astype(np.float32)


def oracle_shadow_mask(scene: SceneSpec, camera: Camera, light_pos):
    """Boolean (H, W) mask of pixels whose primary hit is light-occluded."""
    origins, directions = camera_rays(camera)
    hit = sphere_trace(scene, origins, directions)
    mask = np.zeros(origins.shape[0], dtype=bool)
    if hit.hit.any():
        occ = light_occluded(scene, hit.position[hit.hit], hit.normal[hit.hit],
                             light_pos)
        mask[hit.hit] = occ
    return mask.reshape(camera.height, camera.width)


# ---------------------------------------------------------------------------
# Acquisition protocol
# ---------------------------------------------------------------------------

def sample_upper_hemisphere(rng, n):
    """Uniform directions on the z >= 0 hemisphere."""
    z = rng.random(n)
    phi = 2.0 * np.pi * rng.random(n)
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def lookat_pose(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose looking from eye at target (+z forward,
    +y down-ish image convention)."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=float)
    if abs(np.dot(fwd, up / np.linalg.norm(up))) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=-1)
    return Pose(rotation=R, translation=eye)


def make_camera(eye, size, fov_deg=55.0) -> Camera:
    focal = 0.5 * size / np.tan(np.radians(fov_deg) / 2.0)
    return Camera(pose=lookat_pose(eye), fx=focal, fy=focal,
                  cx=size / 2.0, cy=size / 2.0, width=size, height=size)


@dataclass
class ImageRecord:
    file: str
    camera: Camera
    light_pos: np.ndarray
    light_intensity: float
    split: str                 # train | test
    pose_true: Pose = None     # set by perturb_poses

    def to_json(self):
        rec = {"file": self.file, "camera": self.camera.to_json(),
               "light_pos": np.asarray(self.light_pos).tolist(),
               "light_intensity": self.light_intensity, "split": self.split}
        if self.pose_true is not None:
            rec["pose_true"] = self.pose_true.to_json()
        return rec

    @staticmethod
    def from_json(obj):
        return ImageRecord(file=obj["file"], camera=Camera.from_json(obj["camera"]),
                           light_pos=np.array(obj["light_pos"]),
                           light_intensity=obj["light_intensity"],
                           split=obj["split"],
                           pose_true=(Pose.from_json(obj["pose_true"])
                                      if "pose_true" in obj else None))


@dataclass
class DatasetManifest:
    scene: SceneSpec
    records: list
    exposure: float
    seed: int
    schema_version: int = SCHEMA_VERSION

    def split(self, tag):
        return [r for r in self.records if r.split == tag]

    def to_json(self):
        return {"schema_version": self.schema_version,
                "scene_name": self.scene.name,
                "scene": self.scene.to_json(),
                "exposure": self.exposure, "generator_seed": self.seed,
                "images": [r.to_json() for r in self.records]}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @staticmethod
    def load(path):
        with open(path) as fh:
            obj = json.load(fh)
        return DatasetManifest(scene=SceneSpec.from_json(obj["scene"]),
                               records=[ImageRecord.from_json(r) for r in obj["images"]],
                               exposure=obj["exposure"], seed=obj["generator_seed"],
                               schema_version=obj["schema_version"])


def calibrate_exposure(scene, size, light_intensity, fov_deg=55.0,
                       target=0.8, percentile=95.0):
    """Exposure so the 95th percentile pixel of a reference view hits ~0.8."""
    eye = 2.25 * scene.scene_radius * np.array([0.0, -np.sin(np.radians(50.0)),
                                                np.cos(np.radians(50.0))])
    light_eye = 2.25 * scene.scene_radius * np.array([np.sin(np.radians(30.0)),
                                                      -0.3, 0.9])
    light_eye *= 2.25 * scene.scene_radius / np.linalg.norm(light_eye)
    cam = make_camera(eye, max(size, 64), fov_deg)
    img = oracle_render_image(scene, cam, LightSource(light_eye, light_intensity))
    p = np.percentile(img, percentile)
    if p <= 0:
        raise ValueError("reference view is black; cannot calibrate exposure")
    return float(target / p)


def generate_dataset(scene: SceneSpec, n_train, n_test, image_size, seed,
                     out_dir, fov_deg=55.0, light_intensity=10.0,
                     n_workers=None) -> DatasetManifest:
    """Render a synthetic capture: independent random view and light draws
    per image, uniform on the upper hemisphere at distance U[2, 2.5] times
    the scene radius, cameras looking at the origin. Writes PFM images and a
    JSON manifest to out_dir and returns the manifest."""
    if n_train < 1 or n_test < 0:
        raise ValueError("need at least one training image")
    rng = np.random.default_rng(seed)
    exposure = calibrate_exposure(scene, image_size, light_intensity, fov_deg)
    os.makedirs(out_dir, exist_ok=True)
    records = []
    jobs = []
    for split, count in (("train", n_train), ("test", n_test)):
        os.makedirs(os.path.join(out_dir, split), exist_ok=True)
        view_dir = sample_upper_hemisphere(rng, count)
        view_dist = scene.scene_radius * rng.uniform(2.0, 2.5, count)
        light_dir = sample_upper_hemisphere(rng, count)
        light_dist = scene.scene_radius * rng.uniform(2.0, 2.5, count)
        for i in range(count):
            eye = view_dir[i] * view_dist[i]
            light_pos = light_dir[i] * light_dist[i]
            fname = f"{split}/{i:04d}.pfm"
            records.append(ImageRecord(file=fname,
                                       camera=make_camera(eye, image_size, fov_deg),
                                       light_pos=light_pos,
                                       light_intensity=light_intensity,
                                       split=split))
            jobs.append(records[-1])

    workers = resolve_workers(n_workers)
    def render_one(rec):
        img = oracle_render_image(scene, rec.camera,
                                  LightSource(rec.light_pos, rec.light_intensity),
                                  exposure)
        write_pfm(os.path.join(out_dir, rec.file), img)
    if workers == 1:
        for rec in jobs:
            render_one(rec)
    else:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(render_one, jobs))

    manifest = DatasetManifest(scene=scene, records=records, exposure=exposure,
                               seed=seed)
    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest


def random_rotation(rng, angle_rad):
    """Rotation by a fixed angle around a uniformly random axis."""
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    from .trainer import so3_exp
    return so3_exp(axis * angle_rad)


def perturb_poses(manifest: DatasetManifest, rot_degrees, trans_frac, seed,
                  splits=("train",)) -> DatasetManifest:
    """Perturb camera poses by a fixed rotation angle (random axis) and a
    translation of trans_frac * scene_radius in a random direction. The
    original pose is kept in each record for error measurement."""
    if rot_degrees < 0:
        raise ValueError("rot_degrees must be >= 0")
    rng = np.random.default_rng(seed)
    new_records = []
    for rec in manifest.records:
        if rec.split not in splits or (rot_degrees == 0 and trans_frac == 0):
            new_records.append(rec)
            continue
        dR = random_rotation(rng, np.radians(rot_degrees))
        dt_dir = rng.standard_normal(3)
        dt_dir /= np.linalg.norm(dt_dir)
        old = rec.camera.pose
        new_pose = Pose(rotation=dR @ old.rotation,
                        translation=old.translation
                        + trans_frac * manifest.scene.scene_radius * dt_dir)
        cam = replace(rec.camera, pose=new_pose)
        new_records.append(ImageRecord(file=rec.file, camera=cam,
                                       light_pos=rec.light_pos,
                                       light_intensity=rec.light_intensity,
                                       split=rec.split, pose_true=old))
    return DatasetManifest(scene=manifest.scene, records=new_records,
                           exposure=manifest.exposure, seed=manifest.seed)
