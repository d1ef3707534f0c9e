"""The differentiable radiance field: (X, d) -> (color, density, bottleneck).

Parameters live in one flat float64 vector so checkpoints, finite-difference
probes, and the optimizer all see the same layout. Forward/backward run
through torch on CPU in float64; the flat vector is the source of truth.
"""

import struct
from dataclasses import dataclass, field as dc_field

import numpy as np
import torch

from .errors import NonFiniteGradient, NonFiniteOutput
from .rng import STREAM_INIT, stream

CHECKPOINT_MAGIC = b"RFLD"
CHECKPOINT_VERSION = 1

DEFAULT_PE_POS = 6
DEFAULT_PE_DIR = 2
DEFAULT_WIDTHS = (64, 64, 64, 64)


def positional_encoding(x, levels: int) -> np.ndarray:
    """Sinusoidal features [sin(2^j*pi*x_m), cos(2^j*pi*x_m)] for j < levels.

    Output length is 2*levels*len(x); levels=0 yields an empty vector.
    """
    x = np.asarray(x, dtype=np.float64)
    if levels < 0:
        raise ValueError("levels must be >= 0")
    if levels == 0:
        return np.zeros(0)
    out = _encode(torch.as_tensor(x.reshape(1, -1)), levels)
    return out.numpy().reshape(-1)


def _encode(x: torch.Tensor, levels: int) -> torch.Tensor:
    # x: (M, k) -> (M, 2*levels*k); per level j: [sin(2^j*pi*x), cos(2^j*pi*x)]
    if levels == 0:
        return x.new_zeros((x.shape[0], 0))
    parts = []
    for j in range(levels):
        scaled = x * (np.pi * (2.0 ** j))
        parts.append(torch.sin(scaled))
        parts.append(torch.cos(scaled))
    return torch.cat(parts, dim=-1)


@dataclass
class FieldOutput:
    color: np.ndarray      # (3,), sigmoid-activated
    density: float         # >= 0, softplus-activated
    bottleneck: np.ndarray  # (bottleneck_dim,), last hidden activation


@dataclass
class FieldModel:
    """Positional-encoding MLP with an exposed bottleneck feature.

    Density comes from the last hidden layer and depends only on position;
    color comes from the bottleneck concatenated with the encoded viewing
    direction. Directions are normalized at entry, so only their orientation
    matters to the field.
    """

    pe_levels_pos: int = DEFAULT_PE_POS
    pe_levels_dir: int = DEFAULT_PE_DIR
    layer_widths: tuple = DEFAULT_WIDTHS
    params: np.ndarray = dc_field(default=None, repr=False)

    def __post_init__(self):
        self.layer_widths = tuple(int(w) for w in self.layer_widths)
        if len(self.layer_widths) < 1:
            raise ValueError("need at least one hidden layer")
        if self.params is None:
            self.params = np.zeros(self.param_count())
        self.params = np.asarray(self.params, dtype=np.float64).reshape(-1)
        if self.params.size != self.param_count():
            raise ValueError(
                f"parameter vector has {self.params.size} entries, "
                f"architecture needs {self.param_count()}"
            )

    @property
    def bottleneck_dim(self) -> int:
        return self.layer_widths[-1]

    def segments(self):
        """(name, shape) for every weight/bias block, in flat-vector order."""
        pos_dim = 2 * self.pe_levels_pos * 3
        dir_dim = 2 * self.pe_levels_dir * 3
        segs = []
        prev = pos_dim
        for i, w in enumerate(self.layer_widths):
            segs.append((f"w{i}", (prev, w)))
            segs.append((f"b{i}", (w,)))
            prev = w
        segs.append(("w_sigma", (prev, 1)))
        segs.append(("b_sigma", (1,)))
        hidden = self.bottleneck_dim
        segs.append(("w_color1", (prev + dir_dim, hidden)))
        segs.append(("b_color1", (hidden,)))
        segs.append(("w_color2", (hidden, 3)))
        segs.append(("b_color2", (3,)))
        return segs

    def param_count(self) -> int:
        return int(sum(np.prod(shape) for _, shape in self.segments()))

    @staticmethod
    def initialize(seed: int, pe_levels_pos: int = DEFAULT_PE_POS,
                   pe_levels_dir: int = DEFAULT_PE_DIR,
                   layer_widths: tuple = DEFAULT_WIDTHS,
                   density_bias: float = -1.0) -> "FieldModel":
        """Seeded uniform fan-in init; biases zero except the density bias.

        The default density bias of -1 keeps the field near-empty early in
        training.
        """
        model = FieldModel(pe_levels_pos, pe_levels_dir, layer_widths)
        rng = stream(seed, STREAM_INIT)
        chunks = []
        for name, shape in model.segments():
            size = int(np.prod(shape))
            if name.startswith("w"):
                bound = 1.0 / np.sqrt(shape[0])
                chunks.append(rng.uniform(-bound, bound, size))
            elif name == "b_sigma":
                chunks.append(np.full(size, density_bias))
            else:
                chunks.append(np.zeros(size))
        model.params = np.concatenate(chunks)
        return model

    def torch_parameters(self, requires_grad: bool = False) -> torch.Tensor:
        t = torch.from_numpy(self.params.copy())
        t.requires_grad_(requires_grad)
        return t

    def unpack(self, params_t: torch.Tensor) -> dict:
        views = {}
        offset = 0
        for name, shape in self.segments():
            size = int(np.prod(shape))
            views[name] = params_t[offset:offset + size].reshape(shape)
            offset += size
        return views

    def query(self, params_t: torch.Tensor | None = None):
        """A (xs, dirs) -> (colors, densities, bottlenecks) callable on torch
        tensors; pass a parameter tensor with requires_grad for training."""
        if params_t is None:
            params_t = self.torch_parameters()
        views = self.unpack(params_t)
        lp, ld, n_hidden = self.pe_levels_pos, self.pe_levels_dir, len(self.layer_widths)

        def query_fn(xs: torch.Tensor, dirs: torch.Tensor):
            h = _encode(xs, lp)
            for i in range(n_hidden):
                h = torch.relu(h @ views[f"w{i}"] + views[f"b{i}"])
            bottleneck = h
            sigma = torch.nn.functional.softplus(
                h @ views["w_sigma"] + views["b_sigma"]
            ).squeeze(-1)
            d_unit = dirs / torch.linalg.norm(dirs, dim=-1, keepdim=True)
            e_d = _encode(d_unit, ld)
            ch = torch.relu(torch.cat([bottleneck, e_d], dim=-1) @ views["w_color1"]
                            + views["b_color1"])
            color = torch.sigmoid(ch @ views["w_color2"] + views["b_color2"])
            return color, sigma, bottleneck

        return query_fn


def field_forward(model: FieldModel, x, d) -> FieldOutput:
    """Evaluate the field at one point; raises NonFiniteOutput on NaN/Inf."""
    xs = torch.as_tensor(np.asarray(x, dtype=np.float64).reshape(1, 3))
    ds = torch.as_tensor(np.asarray(d, dtype=np.float64).reshape(1, 3))
    with torch.no_grad():
        color, sigma, bottleneck = model.query()(xs, ds)
    if not (torch.isfinite(color).all() and torch.isfinite(sigma).all()
            and torch.isfinite(bottleneck).all()):
        raise NonFiniteOutput("field produced NaN or Inf")
    return FieldOutput(
        color=color[0].numpy(), density=float(sigma[0]), bottleneck=bottleneck[0].numpy()
    )


def field_backward(model: FieldModel, xs, ds, d_color=None, d_density=None,
                   d_bottleneck=None) -> np.ndarray:
    """Parameter gradient for a batch of queries given upstream gradients.

    Computes d(sum of upstream-weighted outputs)/d(params) as a flat vector;
    linear in the upstream gradients, so a zero upstream yields a zero
    gradient and batches add.
    """
    xs = torch.as_tensor(np.asarray(xs, dtype=np.float64).reshape(-1, 3))
    ds = torch.as_tensor(np.asarray(ds, dtype=np.float64).reshape(-1, 3))
    params_t = model.torch_parameters(requires_grad=True)
    color, sigma, bottleneck = model.query(params_t)(xs, ds)
    total = color.new_zeros(())
    if d_color is not None:
        total = total + (color * torch.as_tensor(np.asarray(d_color, dtype=np.float64))).sum()
    if d_density is not None:
        total = total + (sigma * torch.as_tensor(np.asarray(d_density, dtype=np.float64))).sum()
    if d_bottleneck is not None:
        total = total + (bottleneck
                         * torch.as_tensor(np.asarray(d_bottleneck, dtype=np.float64))).sum()
    (grad,) = torch.autograd.grad(total, params_t, allow_unused=True)
    if grad is None:
        return np.zeros(model.param_count())
    g = grad.numpy()
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("field backward produced NaN or Inf")
    return g


def save_checkpoint(model: FieldModel, path) -> None:
    """Versioned binary checkpoint: header + little-endian f64 parameters."""
    widths = model.layer_widths
    header = struct.pack(
        f"<4sIIII{len(widths)}IIQ",
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
        model.pe_levels_pos, model.pe_levels_dir, len(widths),
        *widths, model.bottleneck_dim, model.param_count(),
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(model.params.astype("<f8").tobytes())


def load_checkpoint(path) -> FieldModel:
    with open(path, "rb") as f:
        data = f.read()
    fixed = struct.calcsize("<4sIIII")
    magic, version, pe_pos, pe_dir, n_layers = struct.unpack_from("<4sIIII", data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"not a field checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    tail = struct.unpack_from(f"<{n_layers}IIQ", data, fixed)
    widths, bottleneck, count = tail[:n_layers], tail[n_layers], tail[n_layers + 1]
    offset = fixed + struct.calcsize(f"<{n_layers}IIQ")
    params = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64)
    model = FieldModel(pe_pos, pe_dir, widths, params)
    if model.bottleneck_dim != bottleneck:
        raise ValueError("checkpoint bottleneck dim inconsistent with architecture")
    return model
