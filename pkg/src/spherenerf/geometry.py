"""Rays, cameras, and sphere-based construction of augmented rays.

An augmented ray is cast toward the estimated surface point of an original
ray, from a random point on (or inside) the sphere centered at that surface
point whose radius is the camera-to-surface distance. All functions here are
pure and operate on plain numpy values; nothing carries gradients.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AllWeightsZero, DegenerateDirection, NonPositiveRadius
from .rng import STREAM_SPHERE_DRAW, stream

_DEGENERATE_EPS = 1e-12


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Ray:
    """A ray O + t*d with sampling bounds. The direction is NOT normalized."""

    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        object.__setattr__(self, "origin", _vec3(self.origin))
        object.__setattr__(self, "direction", _vec3(self.direction))
        if np.linalg.norm(self.direction) <= 0:
            raise DegenerateDirection("ray direction has zero length")
        if not (self.t_far > self.t_near >= 0):
            raise ValueError(f"need t_far > t_near >= 0, got [{self.t_near}, {self.t_far}]")

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: camera-to-world rotation/translation plus intrinsics.

    Convention: camera looks along -z in its own frame, x right, y up;
    pixel (px, py) has its center at (px + 0.5, py + 0.5).
    """

    rotation: np.ndarray     # (3, 3) camera-to-world
    translation: np.ndarray  # (3,) camera center in world coordinates
    focal: float             # pixels
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", _vec3(self.translation))

    def pixel_directions(self) -> np.ndarray:
        """World-space ray directions through all pixel centers, shape (H*W, 3).

        Directions are not normalized; the z component in the camera frame is
        -1, so the ray parameter t measures depth along the optical axis.
        """
        px, py = np.meshgrid(np.arange(self.width), np.arange(self.height))
        dirs_cam = np.stack(
            [
                (px + 0.5 - self.cx) / self.focal,
                -(py + 0.5 - self.cy) / self.focal,
                -np.ones_like(px, dtype=np.float64),
            ],
            axis=-1,
        ).reshape(-1, 3)
        return dirs_cam @ self.rotation.T

    def ray_for_pixel(self, px: int, py: int, t_near: float, t_far: float) -> Ray:
        dir_cam = np.array(
            [(px + 0.5 - self.cx) / self.focal, -(py + 0.5 - self.cy) / self.focal, -1.0]
        )
        return Ray(self.translation.copy(), self.rotation @ dir_cam, t_near, t_far)

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m: np.ndarray, focal: float, width: int, height: int) -> "Camera":
        m = np.asarray(m, dtype=np.float64)
        return Camera(m[:3, :3], m[:3, 3], focal, width / 2.0, height / 2.0, width, height)


def look_at(eye, target, up=(0.0, 1.0, 0.0), focal: float = 64.0,
            width: int = 64, height: int = 64) -> Camera:
    """Camera at `eye` whose optical axis points at `target`."""
    eye = _vec3(eye)
    forward = _vec3(target) - eye
    norm = np.linalg.norm(forward)
    if norm < _DEGENERATE_EPS:
        raise DegenerateDirection("look_at eye and target coincide")
    forward = forward / norm
    up = _vec3(up)
    x = np.cross(forward, up)
    if np.linalg.norm(x) < 1e-9:  # looking straight along up: pick another up
        up = np.array([1.0, 0.0, 0.0])
        x = np.cross(forward, up)
    x = x / np.linalg.norm(x)
    z = -forward
    y = np.cross(z, x)
    rotation = np.stack([x, y, z], axis=1)
    return Camera(rotation, eye, focal, width / 2.0, height / 2.0, width, height)


@dataclass(frozen=True)
class SphereDraw:
    """One random draw shared by the surface- and inner-sphere rays."""

    theta: float  # polar angle, [0, pi]
    phi: float    # azimuth, [0, 2*pi)
    r: float      # radial fraction, (0, 1]

    def __post_init__(self):
        if not (0.0 <= self.theta <= np.pi):
            raise ValueError(f"theta out of [0, pi]: {self.theta}")
        if not (0.0 <= self.phi < 2 * np.pi):
            raise ValueError(f"phi out of [0, 2*pi): {self.phi}")
        if not (0.0 < self.r <= 1.0):
            raise ValueError(f"r out of (0, 1]: {self.r}")

    def unit_offset(self) -> np.ndarray:
        st = np.sin(self.theta)
        return np.array([st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)])


def sample_sphere_draw(seed: int, iteration: int, ray_id: int,
                       area_uniform: bool = False) -> SphereDraw:
    """Draw (theta, phi, r) for one ray; addressed, not sequential.

    theta ~ U[0, pi] and phi ~ U[0, 2*pi) by default. With area_uniform the
    polar angle is drawn so that points are uniform on the sphere surface
    instead of uniform in angle.
    """
    u = stream(seed, STREAM_SPHERE_DRAW, iteration, ray_id).random(3)
    theta = np.arccos(1.0 - 2.0 * u[0]) if area_uniform else u[0] * np.pi
    return SphereDraw(theta=float(theta), phi=float(u[1] * 2 * np.pi), r=float(1.0 - u[2]))


@dataclass(frozen=True)
class AugmentedPair:
    """An original ray with its surface-sphere and inner-sphere companions."""

    original: Ray
    surface_ray: Ray
    inner_ray: Ray
    draw: SphereDraw
    surface_point: np.ndarray  # P_s, world coordinates
    radius: float              # ||O - P_s||
    mask: bool = field(default=False)

    def with_mask(self, mask: bool) -> "AugmentedPair":
        return replace(self, mask=mask)


def surface_point(ray: Ray, profile) -> np.ndarray:
    """Most likely surface point along `ray`: O + t_s*d at the argmax weight.

    `profile` is a BlendingProfile from the renderer, computed on this ray's
    coarse grid. Ties pick the lowest index. The result is a plain vector and
    carries no gradient.
    """
    weights = np.asarray(getattr(profile.weights, "detach", lambda: profile.weights)())
    if not np.any(weights > 0):
        raise AllWeightsZero("all blending weights are zero; cannot infer a surface point")
    s = int(np.argmax(weights))
    t_s = float(np.asarray(profile.grid.midpoints)[s])
    return ray.origin + t_s * ray.direction


def surface_sphere_origin(surface_pt, radius: float, draw: SphereDraw) -> np.ndarray:
    """Random point on the sphere of `radius` centered at the surface point."""
    if radius <= 0:
        raise NonPositiveRadius(f"radius must be > 0, got {radius}")
    return _vec3(surface_pt) + radius * draw.unit_offset()


def inner_sphere_origin(surface_pt, radius: float, draw: SphereDraw) -> np.ndarray:
    """Point inside the sphere: the surface-sphere point pulled in by draw.r."""
    if radius <= 0:
        raise NonPositiveRadius(f"radius must be > 0, got {radius}")
    return _vec3(surface_pt) + draw.r * radius * draw.unit_offset()


def augmented_direction(surface_pt, new_origin, magnitude: float) -> np.ndarray:
    """Direction from `new_origin` toward the surface point, rescaled.

    The magnitude is set to the original ray's ||d|| so that the augmented
    ray's t-parameterization matches the original's sampling geometry.
    """
    offset = _vec3(surface_pt) - _vec3(new_origin)
    norm = np.linalg.norm(offset)
    if norm < _DEGENERATE_EPS:
        raise DegenerateDirection("new origin coincides with the surface point")
    if magnitude <= 0:
        raise ValueError(f"magnitude must be > 0, got {magnitude}")
    return magnitude * offset / norm


def build_augmented_pair(ray: Ray, profile, draw: SphereDraw) -> AugmentedPair:
    """Construct the surface-sphere and inner-sphere rays for one original ray.

    The surface ray reuses the original's (t_near, t_far) so the sample
    spacing matches exactly; the inner ray's bounds are scaled by draw.r so
    the surface point keeps the same fractional grid position. The mask bit
    starts False; the consistency module sets it.
    """
    p_s = surface_point(ray, profile)
    radius = float(np.linalg.norm(ray.origin - p_s))
    if radius <= 0:
        raise NonPositiveRadius("surface point coincides with the ray origin")
    magnitude = float(np.linalg.norm(ray.direction))

    o_surface = surface_sphere_origin(p_s, radius, draw)
    d_surface = augmented_direction(p_s, o_surface, magnitude)
    surface_ray = Ray(o_surface, d_surface, ray.t_near, ray.t_far)

    o_inner = inner_sphere_origin(p_s, radius, draw)
    d_inner = augmented_direction(p_s, o_inner, magnitude)
    inner_ray = Ray(o_inner, d_inner, draw.r * ray.t_near, draw.r * ray.t_far)

    return AugmentedPair(
        original=ray,
        surface_ray=surface_ray,
        inner_ray=inner_ray,
        draw=draw,
        surface_point=p_s,
        radius=radius,
    )


def augment_batch(origins: np.ndarray, directions: np.ndarray, surface_t: np.ndarray,
                  theta: np.ndarray, phi: np.ndarray, r: np.ndarray):
    """Vectorized core of build_augmented_pair for a batch of rays.

    Args:
        origins, directions: (B, 3) original rays.
        surface_t: (B,) argmax-midpoint t values along each original ray.
        theta, phi, r: (B,) sphere draws.

    Returns:
        (surface_origins, inner_origins, aug_directions) each (B, 3); the
        inner ray shares the surface ray's direction.
    """
    p_s = origins + surface_t[:, None] * directions          # (B, 3)
    radius = np.linalg.norm(origins - p_s, axis=1)           # (B,)
    st = np.sin(theta)
    unit = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=1)
    o_surface = p_s + radius[:, None] * unit
    o_inner = p_s + (r * radius)[:, None] * unit
    mag = np.linalg.norm(directions, axis=1)
    d_aug = -mag[:, None] * unit  # (P_s - O') / ||P_s - O'|| = -unit, rescaled
    return o_surface, o_inner, d_aug
