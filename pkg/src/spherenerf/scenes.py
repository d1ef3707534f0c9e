"""Analytic test scenes: exact geometry, shading, and visibility.

These scenes provide three services the rest of the package is validated
against: ground-truth training images (sphere-traced surface shading), an
exact density stand-in for the learned field, and a brute-force occlusion
oracle used as ground truth for the consistency mask.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np
import torch
from scipy.special import expit

from .errors import DegenerateDirection
from .geometry import Camera, look_at
from .rng import STREAM_CAMERA_RIG, stream

LIGHT_DIR = np.array([0.4, 1.0, 0.6]) / np.linalg.norm([0.4, 1.0, 0.6])
_AMBIENT = 0.08
_SHININESS = 32.0
_NORMAL_STEP = 1e-5


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    albedo: tuple
    specular: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be > 0")

    def sdf(self, pts: np.ndarray) -> np.ndarray:
        return np.linalg.norm(pts - np.asarray(self.center), axis=-1) - self.radius


@dataclass(frozen=True)
class Box:
    center: tuple
    half_extents: tuple
    albedo: tuple
    specular: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.half_extents) <= 0):
            raise ValueError("box half extents must be > 0")

    def sdf(self, pts: np.ndarray) -> np.ndarray:
        q = np.abs(pts - np.asarray(self.center)) - np.asarray(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside


@dataclass(frozen=True)
class Plane:
    """Half-space: inside (negative) is the side the normal points away from."""

    point: tuple
    normal: tuple
    albedo: tuple
    specular: float = 0.0

    def sdf(self, pts: np.ndarray) -> np.ndarray:
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        return (pts - np.asarray(self.point)) @ n


@dataclass(frozen=True)
class SyntheticScene:
    primitives: tuple
    background: str = "black"  # "black" or "white"

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")
        if self.background not in ("black", "white"):
            raise ValueError(f"unknown background {self.background!r}")

    def sdf(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return np.min([p.sdf(pts) for p in self.primitives], axis=0)

    def nearest_primitive(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return np.argmin([p.sdf(pts) for p in self.primitives], axis=0)

    def background_color(self) -> np.ndarray:
        return np.ones(3) if self.background == "white" else np.zeros(3)


def sdf_eval(scene: SyntheticScene, x) -> float:
    """Signed distance to the nearest primitive; negative inside."""
    return float(scene.sdf(np.asarray(x, dtype=np.float64).reshape(1, 3))[0])


def _normals(scene: SyntheticScene, pts: np.ndarray) -> np.ndarray:
    h = _NORMAL_STEP
    grads = np.empty_like(pts)
    for axis in range(3):
        off = np.zeros(3)
        off[axis] = h
        grads[:, axis] = (scene.sdf(pts + off) - scene.sdf(pts - off)) / (2 * h)
    norms = np.linalg.norm(grads, axis=-1, keepdims=True)
    return grads / np.maximum(norms, 1e-12)


def shade(scene: SyntheticScene, pts: np.ndarray, view_dirs: np.ndarray) -> np.ndarray:
    """Surface color: albedo * Lambert under a fixed directional light, plus a
    Blinn-Phong specular term scaled by the primitive's coefficient."""
    pts = np.atleast_2d(pts)
    which = scene.nearest_primitive(pts)
    albedo = np.array([scene.primitives[i].albedo for i in which])
    spec_coef = np.array([scene.primitives[i].specular for i in which])
    n = _normals(scene, pts)
    lambert = np.maximum(n @ LIGHT_DIR, 0.0)
    color = albedo * (_AMBIENT + (1.0 - _AMBIENT) * lambert)[:, None]
    if np.any(spec_coef > 0):
        v = -np.asarray(view_dirs, dtype=np.float64)
        v = v / np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), 1e-12)
        halfway = v + LIGHT_DIR
        halfway = halfway / np.maximum(np.linalg.norm(halfway, axis=-1, keepdims=True), 1e-12)
        spec = np.maximum(np.sum(n * halfway, axis=-1), 0.0) ** _SHININESS
        color = color + (spec_coef * spec)[:, None]
    return np.clip(color, 0.0, 1.0)


def sphere_trace(scene: SyntheticScene, origins: np.ndarray, dirs_unit: np.ndarray,
                 t_max: float, hit_eps: float = 1e-9, max_steps: int = 256):
    """March each ray by its SDF value; returns (t, hit) arrays."""
    m = origins.shape[0]
    t = np.zeros(m)
    hit = np.zeros(m, dtype=bool)
    active = np.ones(m, dtype=bool)
    for _ in range(max_steps):
        if not active.any():
            break
        pts = origins[active] + t[active, None] * dirs_unit[active]
        dist = scene.sdf(pts)
        found = dist < hit_eps
        idx = np.flatnonzero(active)
        hit[idx[found]] = True
        t[idx[~found]] += dist[~found]
        active[idx[found]] = False
        active[idx[~found]] &= t[idx[~found]] < t_max
    return t, hit


def ground_truth_render(scene: SyntheticScene, camera: Camera, t_max: float = 100.0):
    """Exact first-hit render: (rgb HxWx3, depth HxW).

    Depth is the world-space distance along the unit ray direction; misses
    get the background color and zero depth. Deterministic.
    """
    dirs = camera.pixel_directions()
    dirs_unit = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.translation, dirs.shape).copy()
    t, hit = sphere_trace(scene, origins, dirs_unit, t_max)
    rgb = np.tile(scene.background_color(), (dirs.shape[0], 1))
    depth = np.zeros(dirs.shape[0])
    if hit.any():
        pts = origins[hit] + t[hit, None] * dirs_unit[hit]
        rgb[hit] = shade(scene, pts, dirs_unit[hit])
        depth[hit] = t[hit]
    h, w = camera.height, camera.width
    return rgb.reshape(h, w, 3), depth.reshape(h, w)


def occlusion_oracle(scene: SyntheticScene, origin, target, tol: float) -> bool:
    """Exact visibility: march origin -> target, true iff the first surface
    crossing lies within tol of the target (or nothing blocks the segment)."""
    return bool(
        occlusion_oracle_batch(
            scene,
            np.asarray(origin, dtype=np.float64).reshape(1, 3),
            np.asarray(target, dtype=np.float64).reshape(1, 3),
            tol,
        )[0]
    )


def occlusion_oracle_batch(scene: SyntheticScene, origins: np.ndarray,
                           targets: np.ndarray, tol) -> np.ndarray:
    """Vectorized occlusion oracle; returns (B,) bool visibility.

    `tol` may be a scalar or a per-ray array. A crossing means actual
    penetration (sdf < 0): the march steps by the SDF value with a floor of
    tol/4 so it always advances, and a step that lands inside a solid is the
    crossing, one step late at worst. Grazing past a surface without
    entering it is not an occlusion.
    """
    origins = np.atleast_2d(origins).astype(np.float64)
    targets = np.atleast_2d(targets).astype(np.float64)
    m = origins.shape[0]
    tol = np.broadcast_to(np.asarray(tol, dtype=np.float64), (m,))
    if np.any(tol <= 0):
        raise ValueError("tol must be > 0")
    seg = targets - origins
    length = np.linalg.norm(seg, axis=-1)
    if np.any(length < 1e-12):
        raise DegenerateDirection("oracle origin coincides with target")
    d = seg / length[:, None]
    min_step = tol / 4.0

    t = np.zeros(m)
    visible = np.zeros(m, dtype=bool)
    active = np.ones(m, dtype=bool)
    max_steps = int(np.ceil((length / min_step).max())) + 4
    for _ in range(max_steps):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        pts = origins[idx] + t[idx, None] * d[idx]
        dist = scene.sdf(pts)
        crossed = dist < 0.0
        # crossing: visible only if it happened within tol of the target
        visible[idx[crossed]] = (length[idx[crossed]] - t[idx[crossed]]) <= tol[idx[crossed]]
        active[idx[crossed]] = False
        rest = idx[~crossed]
        t[rest] += np.maximum(dist[~crossed], min_step[rest])
        reached = t[rest] >= length[rest]
        visible[rest[reached]] = True  # got to the target with no crossing
        active[rest[reached]] = False
    return visible


def density_bypass(scene: SyntheticScene, sharpness: float, shaded: bool = True):
    """Exact field stand-in: sigma(x) = sharpness * sigmoid(-sdf * sharpness).

    Returns a query callable with the same signature the renderer expects
    from a field model. Colors are the scene's shaded surface colors (or raw
    albedo with shaded=False); the bottleneck feature is a zero placeholder.
    Carries no parameters and no gradients.
    """
    if sharpness <= 0:
        raise ValueError("sharpness must be > 0")

    def query(xs: torch.Tensor, dirs: torch.Tensor):
        pts = xs.detach().numpy()
        sigma = sharpness * expit(-scene.sdf(pts) * sharpness)
        if shaded:
            colors = shade(scene, pts, dirs.detach().numpy())
        else:
            which = scene.nearest_primitive(pts)
            colors = np.array([scene.primitives[i].albedo for i in which])
        return (
            torch.from_numpy(colors),
            torch.from_numpy(sigma),
            torch.zeros((pts.shape[0], 1), dtype=torch.float64),
        )

    return query


@dataclass(frozen=True)
class CameraRig:
    """Camera placement around a scene. Kinds: ring (fixed elevation),
    arc (a ring sector), sphere (area-uniform random directions)."""

    kind: str = "ring"
    radius: float = 4.0
    center: tuple = (0.0, 0.0, 0.0)
    elevation: float = np.deg2rad(25.0)   # ring/arc
    arc_center: float = -np.pi / 2        # arc: central azimuth
    arc_span: float = 0.6                 # arc: azimuth range
    width: int = 64
    height: int = 64
    focal: float = 64.0
    t_near: float = 2.0
    t_far: float = 6.5

    def __post_init__(self):
        if self.kind not in ("ring", "arc", "sphere"):
            raise ValueError(f"unknown rig kind {self.kind!r}")


def _rig_eye(rig: CameraRig, azimuth: float, elevation: float) -> np.ndarray:
    direction = np.array([
        np.cos(elevation) * np.cos(azimuth),
        np.sin(elevation),
        np.cos(elevation) * np.sin(azimuth),
    ])
    return np.asarray(rig.center) + rig.radius * direction


def _rig_camera(rig: CameraRig, azimuth: float, elevation: float) -> Camera:
    return look_at(_rig_eye(rig, azimuth, elevation), rig.center,
                   focal=rig.focal, width=rig.width, height=rig.height)


def make_cameras(rig: CameraRig, n_train: int, n_heldout: int, seed: int):
    """Deterministic train/heldout cameras; the two sets never coincide."""
    rng = stream(seed, STREAM_CAMERA_RIG)
    train, heldout = [], []
    if rig.kind in ("ring", "arc"):
        if rig.kind == "ring":
            phase = rng.uniform(0.0, 2 * np.pi)
            train_az = phase + 2 * np.pi * np.arange(n_train) / max(n_train, 1)
            held_az = (phase + np.pi / max(n_train, 1)
                       + 2 * np.pi * np.arange(n_heldout) / max(n_heldout, 1))
        else:
            lo = rig.arc_center - rig.arc_span / 2
            train_az = np.linspace(lo, lo + rig.arc_span, max(n_train, 1), endpoint=True)
            held_az = lo + (np.arange(n_heldout) + 0.5) * rig.arc_span / max(n_heldout, 1)
        train = [_rig_camera(rig, az, rig.elevation) for az in train_az[:n_train]]
        heldout = [_rig_camera(rig, az, rig.elevation + np.deg2rad(8.0))
                   for az in held_az[:n_heldout]]
    else:
        for k in range(n_train + n_heldout):
            az = rng.uniform(0.0, 2 * np.pi)
            sin_el = rng.uniform(np.sin(-0.25 * np.pi), np.sin(0.45 * np.pi))
            cam = _rig_camera(rig, az, np.arcsin(sin_el))
            (train if k < n_train else heldout).append(cam)
    eyes_t = np.array([c.translation for c in train])
    eyes_h = np.array([c.translation for c in heldout])
    if len(train) and len(heldout):
        gaps = np.linalg.norm(eyes_t[:, None, :] - eyes_h[None, :, :], axis=-1)
        assert gaps.min() > 1e-9, "train and heldout cameras coincide"
    return train, heldout


@dataclass
class DatasetBundle:
    """Rendered views of a scene with their cameras, bounds, and splits."""

    images: list                 # H x W x 3 float arrays in [0, 1]
    cameras: list
    t_near: float
    t_far: float
    splits: list = dc_field(default_factory=list)  # "train" / "heldout" per view
    background: str = "black"

    def indices(self, split: str):
        return [i for i, s in enumerate(self.splits) if s == split]


def make_dataset(scene: SyntheticScene, n_train: int, n_heldout: int,
                 rig: CameraRig, seed: int) -> DatasetBundle:
    """Render a few-shot dataset from ground truth; fully seeded."""
    if n_train < 1:
        raise ValueError("need at least one training view")
    train, heldout = make_cameras(rig, n_train, n_heldout, seed)
    cameras = train + heldout
    images = [ground_truth_render(scene, cam)[0] for cam in cameras]
    splits = ["train"] * len(train) + ["heldout"] * len(heldout)
    return DatasetBundle(images, cameras, rig.t_near, rig.t_far, splits, scene.background)


def three_spheres_scene() -> tuple[SyntheticScene, CameraRig]:
    """Three overlapping-depth spheres, one glossy; black background."""
    scene = SyntheticScene(
        primitives=(
            Sphere((0.0, -0.1, 0.0), 0.6, (0.85, 0.25, 0.2)),
            Sphere((0.65, 0.25, 0.3), 0.35, (0.2, 0.7, 0.3), specular=0.5),
            Sphere((-0.6, 0.3, -0.25), 0.3, (0.25, 0.35, 0.85)),
        ),
    )
    rig = CameraRig(kind="ring", radius=4.0, t_near=2.0, t_far=6.5)
    return scene, rig


def occluder_scene() -> tuple[SyntheticScene, CameraRig]:
    """A sphere behind a wall with a square aperture; cameras on the open
    side look through the hole. Exercises occlusion-heavy masking."""
    gray = (0.55, 0.55, 0.55)
    scene = SyntheticScene(
        primitives=(
            Box((-2.45, 0.0, 1.0), (1.55, 4.0, 0.05), gray),
            Box((2.45, 0.0, 1.0), (1.55, 4.0, 0.05), gray),
            Box((0.0, -2.45, 1.0), (0.9, 1.55, 0.05), gray),
            Box((0.0, 2.45, 1.0), (0.9, 1.55, 0.05), gray),
            Sphere((0.0, 0.0, 3.0), 1.0, (0.8, 0.3, 0.25)),
        ),
    )
    rig = CameraRig(kind="arc", radius=6.0, center=(0.0, 0.0, 2.0),
                    elevation=np.deg2rad(6.0), arc_center=-np.pi / 2,
                    arc_span=0.5, t_near=3.0, t_far=9.0)
    return scene, rig


PRESETS = {
    "three-spheres": three_spheres_scene,
    "occluder": occluder_scene,
}
