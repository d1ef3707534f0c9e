"""Coarse sampling and volume rendering.

Rendering composes a field query with alpha compositing over an
equal-interval coarse grid. There is no hierarchical fine pass: the surface
estimate and the consistency mask are defined on the coarse grid, so a fine
network would sit outside the method core.

The batched entry point (`render_rays`) is the differentiable path used in
training; `render_ray` / `volume_render` are single-ray conveniences over the
same core.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import NonFiniteOutput
from .field import FieldModel
from .geometry import Camera, Ray


@dataclass(frozen=True)
class SampleGrid:
    """Equal-interval coarse grid along one ray, in t units."""

    t_values: np.ndarray   # (N+1,) bin edges, strictly increasing
    midpoints: np.ndarray  # (N,) sample positions (bin centers, or jittered)
    deltas: np.ndarray     # (N,) bin widths t_{i+1} - t_i

    @property
    def n(self) -> int:
        return len(self.deltas)


def coarse_sample(ray: Ray, n: int, jitter: bool = False,
                  rng: np.random.Generator | None = None) -> SampleGrid:
    """Split [t_near, t_far] into n equal bins and pick one sample per bin.

    jitter=False samples bin centers (the deterministic grid required by the
    consistency mask); jitter=True draws one uniform offset per bin.
    """
    if n < 2:
        raise ValueError("need at least 2 samples")
    edges = np.linspace(ray.t_near, ray.t_far, n + 1)
    deltas = np.diff(edges)
    if jitter:
        if rng is None:
            raise ValueError("jitter=True requires an rng")
        midpoints = edges[:-1] + rng.random(n) * deltas
    else:
        midpoints = 0.5 * (edges[:-1] + edges[1:])
    return SampleGrid(edges, midpoints, deltas)


@dataclass
class BlendingProfile:
    """Per-sample blending state of one rendered ray.

    weights[i] = T[i] * alphas[i] is the contribution of sample i to the
    pixel color; argmax_index is the first maximum of the weights.
    """

    weights: torch.Tensor        # (N,)
    transmittance: torch.Tensor  # (N,) T_i before sample i; T_1 = 1
    alphas: torch.Tensor         # (N,) 1 - exp(-sigma_i * delta_i)
    argmax_index: int
    rendered_color: torch.Tensor  # (3,) sum_i w_i c_i
    rendered_depth: torch.Tensor  # scalar, sum w t / max(sum w, 1e-12)
    grid: SampleGrid
    accumulation: torch.Tensor       # scalar, sum of weights
    transmittance_end: torch.Tensor  # scalar, T_{N+1}
    sample_colors: torch.Tensor | None = None  # (N, 3)
    densities: torch.Tensor | None = None      # (N,)
    bottlenecks: torch.Tensor | None = None    # (N, D)

    def final_color(self, white_background: bool = False) -> torch.Tensor:
        if white_background:
            return self.rendered_color + (1.0 - self.accumulation)
        return self.rendered_color


@dataclass
class ProfileBatch:
    """Column-stacked BlendingProfiles for a batch of rays."""

    edges: np.ndarray        # (B, N+1)
    midpoints: np.ndarray    # (B, N)
    deltas: np.ndarray       # (B, N)
    weights: torch.Tensor    # (B, N)
    transmittance: torch.Tensor
    alphas: torch.Tensor
    argmax_index: np.ndarray      # (B,) int
    rendered_color: torch.Tensor  # (B, 3)
    rendered_depth: torch.Tensor  # (B,)
    accumulation: torch.Tensor    # (B,)
    transmittance_end: torch.Tensor  # (B,)
    sample_colors: torch.Tensor      # (B, N, 3)
    densities: torch.Tensor          # (B, N)
    bottlenecks: torch.Tensor | None = None  # (B, N, D)

    def __len__(self) -> int:
        return self.weights.shape[0]

    def final_color(self, white_background: bool = False) -> torch.Tensor:
        if white_background:
            return self.rendered_color + (1.0 - self.accumulation)[:, None]
        return self.rendered_color

    def row(self, i: int) -> BlendingProfile:
        return BlendingProfile(
            weights=self.weights[i],
            transmittance=self.transmittance[i],
            alphas=self.alphas[i],
            argmax_index=int(self.argmax_index[i]),
            rendered_color=self.rendered_color[i],
            rendered_depth=self.rendered_depth[i],
            grid=SampleGrid(self.edges[i], self.midpoints[i], self.deltas[i]),
            accumulation=self.accumulation[i],
            transmittance_end=self.transmittance_end[i],
            sample_colors=self.sample_colors[i],
            densities=self.densities[i],
            bottlenecks=None if self.bottlenecks is None else self.bottlenecks[i],
        )


def _composite(sigmas: torch.Tensor, deltas: torch.Tensor, mids: torch.Tensor,
               colors: torch.Tensor):
    """Alpha compositing. sigmas/deltas/mids: (B, N); colors: (B, N, 3)."""
    optical = sigmas * deltas
    csum = torch.cumsum(optical, dim=-1)                     # (B, N)
    transmittance = torch.exp(-(csum - optical))             # T_i = exp(-sum_{j<i})
    alphas = 1.0 - torch.exp(-optical)
    weights = transmittance * alphas
    accumulation = weights.sum(dim=-1)
    rendered_color = (weights[..., None] * colors).sum(dim=-2)
    rendered_depth = (weights * mids).sum(dim=-1) / torch.clamp(accumulation, min=1e-12)
    transmittance_end = torch.exp(-csum[..., -1])
    # first maximum, detached: the index is discrete and never carries grad
    argmax_index = np.argmax(weights.detach().numpy(), axis=-1)
    return weights, transmittance, alphas, argmax_index, rendered_color, \
        rendered_depth, accumulation, transmittance_end


def volume_render(sigmas, colors, grid: SampleGrid) -> BlendingProfile:
    """Composite one ray's densities and colors over its sample grid."""
    sig = torch.as_tensor(np.asarray(sigmas, dtype=np.float64)
                          if not torch.is_tensor(sigmas) else sigmas)
    col = torch.as_tensor(np.asarray(colors, dtype=np.float64)
                          if not torch.is_tensor(colors) else colors)
    if sig.shape[0] != grid.n or col.shape != (grid.n, 3):
        raise ValueError("sigmas/colors do not match the grid")
    deltas = torch.as_tensor(grid.deltas)
    mids = torch.as_tensor(grid.midpoints)
    w, t, a, s, c, d, acc, t_end = _composite(
        sig[None], deltas[None], mids[None], col[None]
    )
    return BlendingProfile(
        weights=w[0], transmittance=t[0], alphas=a[0], argmax_index=int(s[0]),
        rendered_color=c[0], rendered_depth=d[0], grid=grid,
        accumulation=acc[0], transmittance_end=t_end[0],
        sample_colors=col, densities=sig,
    )


def _as_query(field):
    if isinstance(field, FieldModel):
        return field.query()
    return field


def render_rays(field, origins: np.ndarray, directions: np.ndarray,
                t_near: np.ndarray, t_far: np.ndarray, n: int,
                jitter_offsets: np.ndarray | None = None,
                want_bottlenecks: bool = False) -> ProfileBatch:
    """Render a batch of rays; the differentiable core of the trainer.

    Args:
        field: FieldModel or a (xs, dirs) -> (colors, sigmas, bottlenecks)
            callable on torch tensors.
        origins, directions: (B, 3).
        t_near, t_far: (B,) per-ray bounds.
        jitter_offsets: optional (B, n) uniforms in [0, 1); None renders the
            deterministic mid-bin grid the mask path requires.
    """
    query = _as_query(field)
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    t_near = np.asarray(t_near, dtype=np.float64).reshape(-1)
    t_far = np.asarray(t_far, dtype=np.float64).reshape(-1)
    b = origins.shape[0]

    frac = np.linspace(0.0, 1.0, n + 1)
    edges = t_near[:, None] + (t_far - t_near)[:, None] * frac  # (B, N+1)
    deltas = np.diff(edges, axis=-1)
    if jitter_offsets is None:
        mids = 0.5 * (edges[:, :-1] + edges[:, 1:])
    else:
        mids = edges[:, :-1] + jitter_offsets * deltas

    xs = origins[:, None, :] + mids[..., None] * directions[:, None, :]  # (B, N, 3)
    xs_t = torch.from_numpy(xs.reshape(-1, 3))
    dirs_t = torch.from_numpy(np.repeat(directions, n, axis=0))
    colors, sigmas, bottlenecks = query(xs_t, dirs_t)
    if not (torch.isfinite(sigmas).all() and torch.isfinite(colors).all()):
        raise NonFiniteOutput("field produced NaN or Inf during rendering")
    colors = colors.reshape(b, n, 3)
    sigmas = sigmas.reshape(b, n)

    w, t, a, s, c, d, acc, t_end = _composite(
        sigmas, torch.from_numpy(deltas), torch.from_numpy(mids), colors
    )
    return ProfileBatch(
        edges=edges, midpoints=mids, deltas=deltas,
        weights=w, transmittance=t, alphas=a, argmax_index=s,
        rendered_color=c, rendered_depth=d, accumulation=acc,
        transmittance_end=t_end, sample_colors=colors, densities=sigmas,
        bottlenecks=bottlenecks.reshape(b, n, -1) if want_bottlenecks else None,
    )


def render_ray(field, ray: Ray, n: int, jitter: bool = False,
               rng: np.random.Generator | None = None,
               want_bottlenecks: bool = False) -> BlendingProfile:
    """Sample, query the field, and composite a single ray."""
    offsets = None
    if jitter:
        if rng is None:
            raise ValueError("jitter=True requires an rng")
        offsets = rng.random(n)[None, :]
    batch = render_rays(
        field, ray.origin[None], ray.direction[None],
        np.array([ray.t_near]), np.array([ray.t_far]), n,
        jitter_offsets=offsets, want_bottlenecks=want_bottlenecks,
    )
    return batch.row(0)


def render_image(field, camera: Camera, n: int, t_near: float, t_far: float,
                 white_background: bool = False, chunk: int = 16384):
    """Render one ray per pixel center; returns (rgb HxWx3, depth HxW)."""
    query = _as_query(field)
    dirs = camera.pixel_directions()
    origins = np.broadcast_to(camera.translation, dirs.shape)
    n_pix = dirs.shape[0]
    rgb = np.zeros((n_pix, 3))
    depth = np.zeros(n_pix)
    near = np.full(n_pix, t_near)
    far = np.full(n_pix, t_far)
    with torch.no_grad():
        for lo in range(0, n_pix, chunk):
            hi = min(lo + chunk, n_pix)
            batch = render_rays(query, origins[lo:hi], dirs[lo:hi],
                                near[lo:hi], far[lo:hi], n)
            rgb[lo:hi] = batch.final_color(white_background).numpy()
            depth[lo:hi] = batch.rendered_depth.numpy()
    h, w = camera.height, camera.width
    return rgb.reshape(h, w, 3), depth.reshape(h, w)
