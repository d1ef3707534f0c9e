"""The optimization loop: ray batches, augmentation, masking, losses, and
adaptive-moment updates, with reproducible counter-based randomness.

One training step renders the original rays once on the deterministic
mid-bin grid and reuses that render for both the photometric loss and the
mask path; each original ray gets one surface-sphere and one inner-sphere
companion per iteration (configurable multiplier).
"""

import json
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np
import torch

from .consistency import MaskConfig, consistency_mask_batch, should_clip_batch
from .errors import NonFiniteGradient
from .field import FieldModel, save_checkpoint
from .geometry import augment_batch, sample_sphere_draw
from .losses import LossBatch, LossConfig, total_loss
from .metrics import avge, psnr, ssim
from .renderer import ProfileBatch, render_image, render_rays
from .rng import STREAM_PIXEL_BATCH, stream
from .scenes import DatasetBundle


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 5000
    batch_rays: int = 100
    learning_rate: float = 5e-4
    lr_decay: float = 0.1          # lr multiplier reached at the final iteration
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    seed: int = 0
    n_samples: int = 64
    augment_multiplier: int = 1    # augmented pairs per original ray per step
    area_uniform_draws: bool = False
    pbf_features: str = "surface"  # "surface", or "inner" for the unmatched-
                                   # pairing ablation arm
    mask: MaskConfig = dc_field(default_factory=MaskConfig)
    loss: LossConfig = dc_field(default_factory=LossConfig)
    checkpoint_every: int = 1000
    eval_every: int = 0            # 0 disables periodic heldout evaluation

    def __post_init__(self):
        if self.batch_rays < 1:
            raise ValueError("batch_rays must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.augment_multiplier < 1:
            raise ValueError("augment_multiplier must be >= 1")
        if self.pbf_features not in ("surface", "inner"):
            raise ValueError(f"unknown pbf_features {self.pbf_features!r}")

    def lr_at(self, iteration: int) -> float:
        frac = iteration / max(self.iterations, 1)
        return self.learning_rate * (self.lr_decay ** frac)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def for_model(model: FieldModel) -> "AdamState":
        n = model.param_count()
        return AdamState(np.zeros(n), np.zeros(n))


def adam_update(params: np.ndarray, grad: np.ndarray, state: AdamState,
                lr: float, beta1: float, beta2: float, eps: float) -> None:
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * grad
    state.v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = state.m / (1 - beta1 ** state.t)
    v_hat = state.v / (1 - beta2 ** state.t)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class RayPool:
    """Flattened training pixels: per-ray origin, direction, target color."""

    origins: np.ndarray     # (P, 3)
    directions: np.ndarray  # (P, 3)
    targets: np.ndarray     # (P, 3)
    t_near: float
    t_far: float
    white_background: bool

    @staticmethod
    def from_dataset(dataset: DatasetBundle, split: str = "train") -> "RayPool":
        origins, dirs, targets = [], [], []
        for i in dataset.indices(split):
            cam = dataset.cameras[i]
            d = cam.pixel_directions()
            dirs.append(d)
            origins.append(np.broadcast_to(cam.translation, d.shape))
            targets.append(np.asarray(dataset.images[i], dtype=np.float64).reshape(-1, 3))
        return RayPool(
            origins=np.concatenate(origins),
            directions=np.concatenate(dirs),
            targets=np.concatenate(targets),
            t_near=dataset.t_near,
            t_far=dataset.t_far,
            white_background=dataset.background == "white",
        )

    def __len__(self) -> int:
        return self.origins.shape[0]


def _repeat_rows(batch: ProfileBatch, rep: np.ndarray) -> ProfileBatch:
    t_rep = torch.from_numpy(rep)
    return ProfileBatch(
        edges=batch.edges[rep], midpoints=batch.midpoints[rep], deltas=batch.deltas[rep],
        weights=batch.weights[t_rep], transmittance=batch.transmittance[t_rep],
        alphas=batch.alphas[t_rep], argmax_index=batch.argmax_index[rep],
        rendered_color=batch.rendered_color[t_rep],
        rendered_depth=batch.rendered_depth[t_rep],
        accumulation=batch.accumulation[t_rep],
        transmittance_end=batch.transmittance_end[t_rep],
        sample_colors=batch.sample_colors[t_rep],
        densities=batch.densities[t_rep],
        bottlenecks=None if batch.bottlenecks is None else batch.bottlenecks[t_rep],
    )


def train_step(model: FieldModel, opt: AdamState, pool: RayPool,
               cfg: TrainConfig, iteration: int) -> dict:
    """One optimizer update; returns the per-iteration metrics record.

    Raises NonFiniteGradient (tagged with the iteration) when the loss or
    its gradient diverges.
    """
    b = cfg.batch_rays
    ids = stream(cfg.seed, STREAM_PIXEL_BATCH, iteration).integers(0, len(pool), size=b)
    origins = pool.origins[ids]
    dirs = pool.directions[ids]
    targets = torch.from_numpy(pool.targets[ids])
    near = np.full(b, pool.t_near)
    far = np.full(b, pool.t_far)

    loss_cfg = cfg.loss
    warm = iteration < loss_cfg.warmup_iters
    augmenting = (not warm) and (
        loss_cfg.lambda_rc > 0 or loss_cfg.lambda_pbf > 0 or loss_cfg.lambda_mnll > 0
    )
    want_bn = augmenting and loss_cfg.lambda_pbf > 0

    params_t = model.torch_parameters(requires_grad=True)
    query = model.query(params_t)
    orig = render_rays(query, origins, dirs, near, far, cfg.n_samples,
                       want_bottlenecks=want_bn)

    if augmenting:
        m = cfg.augment_multiplier
        rep = np.repeat(np.arange(b), m)
        theta = np.empty(b * m)
        phi = np.empty(b * m)
        r = np.empty(b * m)
        for j, pos in enumerate(rep):
            copy = j % m
            # extra companions (copy > 0) shift the iteration counter so each
            # draw stays an independent, addressable stream
            draw = sample_sphere_draw(cfg.seed, iteration + copy * 0x40000000,
                                      int(ids[pos]), area_uniform=cfg.area_uniform_draws)
            theta[j], phi[j], r[j] = draw.theta, draw.phi, draw.r
        surface_t = orig.midpoints[np.arange(b), orig.argmax_index][rep]
        o_surf, o_inner, d_aug = augment_batch(origins[rep], dirs[rep],
                                               surface_t, theta, phi, r)
        surface = render_rays(query, o_surf, d_aug, near[rep], far[rep],
                              cfg.n_samples, want_bottlenecks=want_bn)
        inner = render_rays(query, o_inner, d_aug, r * near[rep], r * far[rep],
                            cfg.n_samples,
                            want_bottlenecks=want_bn and cfg.pbf_features == "inner")
        if cfg.pbf_features == "inner":
            surface = replace(surface, bottlenecks=inner.bottlenecks)
        orig_side = _repeat_rows(orig, rep) if m > 1 else orig
        # uniform repetition keeps every per-original mean identical, so the
        # repeated batch can feed all loss terms directly
        loss_batch = LossBatch(
            original=orig_side,
            targets=targets[torch.from_numpy(rep)],
            surface=surface,
            inner=inner,
            masks=consistency_mask_batch(orig_side, surface, cfg.mask),
            clip_flags=should_clip_batch(dirs[rep], d_aug, cfg.mask),
            white_background=pool.white_background,
        )
    else:
        loss_batch = LossBatch(original=orig, targets=targets,
                               white_background=pool.white_background)

    result = total_loss(loss_batch, cfg.loss, iteration)
    if not torch.isfinite(result.total):
        raise NonFiniteGradient(f"loss diverged at iteration {iteration}", iteration)
    result.total.backward()
    grad = params_t.grad.numpy()
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient(f"gradient diverged at iteration {iteration}", iteration)

    lr = cfg.lr_at(iteration)
    adam_update(model.params, grad, opt, lr, cfg.beta1, cfg.beta2, cfg.eps_opt)

    record = {"iteration": iteration, "lr": lr, **result.components}
    record["masked_fraction"] = result.masked_fraction
    return record


def evaluate_model(model: FieldModel, dataset: DatasetBundle, n_samples: int,
                   split: str = "heldout"):
    """Render a split and report PSNR/SSIM/AVGE against ground truth."""
    white = dataset.background == "white"
    preds, refs = [], []
    for i in dataset.indices(split):
        rgb, _ = render_image(model, dataset.cameras[i], n_samples,
                              dataset.t_near, dataset.t_far, white_background=white)
        preds.append(rgb)
        refs.append(dataset.images[i])
    p = float(np.mean([psnr(a, b) for a, b in zip(preds, refs)]))
    s = float(np.mean([ssim(a, b) for a, b in zip(preds, refs)]))
    return {"psnr": p, "ssim": s, "avge": avge(p, s)}, preds


def train(model: FieldModel, dataset: DatasetBundle, cfg: TrainConfig,
          out_dir=None, log_every: int = 100, quiet: bool = False):
    """Run the full optimization; returns (model, history).

    With out_dir set, writes metrics.jsonl (one JSON record per iteration),
    periodic checkpoints, and heldout renders at eval points.
    """
    pool = RayPool.from_dataset(dataset)
    opt = AdamState.for_model(model)
    history = []
    out = Path(out_dir) if out_dir is not None else None
    metrics_f = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_f = open(out / "metrics.jsonl", "w")
    try:
        for it in range(cfg.iterations):
            record = train_step(model, opt, pool, cfg, it)
            history.append(record)
            if metrics_f is not None:
                metrics_f.write(json.dumps(record) + "\n")
            if not quiet and log_every and (it % log_every == 0 or it == cfg.iterations - 1):
                print(f"iter {it:6d}  loss {record['total']:.5f}  mse {record['mse']:.5f}"
                      f"  masked {record['masked_fraction']}")
            if out is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(model, out / f"ckpt_{it + 1:06d}.rf")
            if (out is not None and cfg.eval_every and (it + 1) % cfg.eval_every == 0
                    and dataset.indices("heldout")):
                scores, preds = evaluate_model(model, dataset, cfg.n_samples)
                _write_eval(out, it + 1, scores, preds)
        if out is not None:
            save_checkpoint(model, out / "ckpt_final.rf")
    finally:
        if metrics_f is not None:
            metrics_f.close()
    return model, history


def _write_eval(out: Path, iteration: int, scores: dict, preds: list) -> None:
    from .images import write_ppm

    eval_dir = out / f"eval_{iteration:06d}"
    eval_dir.mkdir(exist_ok=True)
    for i, img in enumerate(preds):
        write_ppm(eval_dir / f"heldout_{i:03d}.ppm", img)
    with open(eval_dir / "scores.json", "w") as f:
        json.dump(scores, f, indent=2)


ABLATION_ARMS = {
    "base": {"lambda_rc": 0.0, "lambda_pbf": 0.0, "lambda_mnll": 0.0},
    "rc": {"lambda_pbf": 0.0, "lambda_mnll": 0.0},
    "rc_pbf": {"lambda_mnll": 0.0},
    "full": {},
    # bottleneck-feature arm: feature pairs come from the inner ray, whose
    # r-scaled grid breaks the equal-distance pairing of the surface ray
    "bf": {"_pbf_features": "inner"},
}


def ablation_run(dataset: DatasetBundle, base_cfg: TrainConfig, arms: list):
    """Train one model per loss-toggle arm from the same seed and evaluate.

    `arms` is a list of names from ABLATION_ARMS. Returns one row per arm
    with heldout PSNR/SSIM/AVGE.
    """
    if not arms:
        raise ValueError("arms must be non-empty")
    rows = []
    for name in arms:
        if name not in ABLATION_ARMS:
            raise ValueError(f"unknown ablation arm {name!r}; "
                             f"choose from {sorted(ABLATION_ARMS)}")
        overrides = dict(ABLATION_ARMS[name])
        pbf_source = overrides.pop("_pbf_features", base_cfg.pbf_features)
        cfg = replace(base_cfg, loss=replace(base_cfg.loss, **overrides),
                      pbf_features=pbf_source)
        model = FieldModel.initialize(cfg.seed)
        model, _ = train(model, dataset, cfg, quiet=True)
        scores, _ = evaluate_model(model, dataset, cfg.n_samples)
        rows.append({"arm": name, **scores})
    return rows
