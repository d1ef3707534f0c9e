"""Training objectives: MSE, ray-consistency KL, positional bottleneck
feature JSD, Laplace-mixture NLLs, and the emptiness regularizer.

Per-ray functions are the documented unit surface; the *_batch variants are
the vectorized cores the trainer uses. Masked rays are excluded by indexing,
so a masked-out ray contributes exactly zero gradient through the gated
terms.
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import torch

from .errors import AllWeightsZero, ShapeMismatch
from .renderer import BlendingProfile, ProfileBatch

_LOG2 = math.log(2.0)
_TINY = 1e-300


@dataclass(frozen=True)
class LossConfig:
    """Weights and shapes of the total objective.

    lambda_rc..lambda_ue are the balancing weights of the ray-consistency,
    bottleneck-feature, inner-ray mixture NLL, original-ray NLL, and
    emptiness terms. During the first `warmup_iters` iterations the three
    augmentation weights are forced to zero (the surface estimate is
    meaningless at initialization).
    """

    temperature: float = 0.1
    lambda_rc: float = 0.1
    lambda_pbf: float = 0.01
    lambda_mnll: float = 0.1
    lambda_nll: float = 0.1
    lambda_ue: float = 0.01
    laplace_scale: float = 0.1
    ue_halfwidth: int = 2
    warmup_iters: int = 500
    two_sided_rc: bool = False       # let KL gradients reach the original ray
    mnll_center: str = "sample"      # "sample": per-sample Laplacians;
                                     # "rendered": one Laplacian at C(ray)

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.laplace_scale <= 0:
            raise ValueError("laplace_scale must be > 0")
        for name in ("lambda_rc", "lambda_pbf", "lambda_mnll", "lambda_nll", "lambda_ue"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.ue_halfwidth < 0:
            raise ValueError("ue_halfwidth must be >= 0")
        if self.mnll_center not in ("sample", "rendered"):
            raise ValueError(f"unknown mnll_center {self.mnll_center!r}")


def _as_tensor(x) -> torch.Tensor:
    if torch.is_tensor(x):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def mse_loss(predicted, target) -> torch.Tensor:
    """Mean over the batch of squared color errors ||C_gt - C||^2."""
    p, t = _as_tensor(predicted), _as_tensor(target)
    if p.shape != t.shape:
        raise ShapeMismatch(f"predicted {tuple(p.shape)} vs target {tuple(t.shape)}")
    return ((p - t) ** 2).sum(dim=-1).mean()


def tempered_softmax(weights, temperature: float) -> torch.Tensor:
    """softmax(w / T); small T sharpens the peak. Stable via max-subtraction."""
    w = _as_tensor(weights)
    z = w / temperature
    z = z - z.max(dim=-1, keepdim=True).values
    e = torch.exp(z)
    return e / e.sum(dim=-1, keepdim=True)


def _log_tempered_softmax(weights: torch.Tensor, temperature: float) -> torch.Tensor:
    return torch.log_softmax(weights / temperature, dim=-1)


def _clip_after(weights: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
    # weights: (B, N); s: (B,) long. Zero entries with index > s.
    idx = torch.arange(weights.shape[-1])
    keep = idx[None, :] <= s[:, None]
    return torch.where(keep, weights, torch.zeros((), dtype=weights.dtype))


def rc_terms_batch(weights: torch.Tensor, weights_aug: torch.Tensor,
                   argmax_index: torch.Tensor, temperature: float,
                   clip: torch.Tensor, two_sided: bool = False) -> torch.Tensor:
    """KL(P_T || Q_T) per ray between original and augmented weight softmaxes.

    Rays flagged in `clip` have both weight vectors zeroed past the
    original's argmax before the softmax. The original side is detached
    unless two_sided.
    """
    if weights.shape != weights_aug.shape:
        raise ShapeMismatch(f"{tuple(weights.shape)} vs {tuple(weights_aug.shape)}")
    w = weights if two_sided else weights.detach()
    wp = weights_aug
    if clip.any():
        w = torch.where(clip[:, None], _clip_after(w, argmax_index), w)
        wp = torch.where(clip[:, None], _clip_after(wp, argmax_index), wp)
    log_p = _log_tempered_softmax(w, temperature)
    log_q = _log_tempered_softmax(wp, temperature)
    return (torch.exp(log_p) * (log_p - log_q)).sum(dim=-1)


def ray_consistency_term(weights, weights_aug, s: int, temperature: float,
                         clip: bool = False, two_sided: bool = False) -> torch.Tensor:
    """Single-ray ray-consistency loss; see rc_terms_batch."""
    w = _as_tensor(weights)[None]
    wp = _as_tensor(weights_aug)[None]
    return rc_terms_batch(
        w, wp, torch.tensor([s]), temperature, torch.tensor([clip]), two_sided
    )[0]


def _jsd_rows(feat_a: torch.Tensor, feat_b: torch.Tensor) -> torch.Tensor:
    # feat_*: (..., D) logits. Returns JSD(softmax(a), softmax(b)) in nats.
    log_p = torch.log_softmax(feat_a, dim=-1)
    log_q = torch.log_softmax(feat_b, dim=-1)
    log_m = torch.logaddexp(log_p, log_q) - _LOG2
    kl_pm = (torch.exp(log_p) * (log_p - log_m)).sum(dim=-1)
    kl_qm = (torch.exp(log_q) * (log_q - log_m)).sum(dim=-1)
    return 0.5 * (kl_pm + kl_qm)


def pbf_terms_batch(features: torch.Tensor, features_aug: torch.Tensor) -> torch.Tensor:
    """Mean over samples of JSD between softmaxed bottleneck features.

    features: (B, N, D) from the original ray, features_aug likewise from
    the surface-sphere ray at matching indices (equidistant from the surface
    point by construction). Gradients flow to both sides.
    """
    if features.shape != features_aug.shape:
        raise ShapeMismatch(f"{tuple(features.shape)} vs {tuple(features_aug.shape)}")
    return _jsd_rows(features, features_aug).mean(dim=-1)


def pbf_term(features, features_aug) -> torch.Tensor:
    """Single-ray positional bottleneck feature loss; JSD in [0, ln 2]."""
    f = _as_tensor(features)[None]
    fa = _as_tensor(features_aug)[None]
    return pbf_terms_batch(f, fa)[0]


def mnll_batch(weights: torch.Tensor, sample_colors: torch.Tensor,
               targets: torch.Tensor, laplace_scale: float,
               center: str = "sample",
               rendered_color: torch.Tensor | None = None) -> torch.Tensor:
    """Negative log-likelihood of target colors under a Laplace mixture.

    Mixture coefficients are the normalized blending weights; components are
    per-channel-independent Laplacians centered at per-sample colors
    (center="sample") or a single Laplacian at the rendered ray color
    (center="rendered", which collapses the mixture). Rays must have
    positive total weight.
    """
    b = laplace_scale
    if center == "rendered":
        err = (targets - rendered_color).abs().sum(dim=-1)  # (B,)
        return err / b + 3.0 * math.log(2.0 * b)
    wsum = weights.sum(dim=-1)
    log_pi = torch.log(weights.clamp(min=_TINY)) - torch.log(wsum.clamp(min=_TINY))[:, None]
    log_lap = (-(targets[:, None, :] - sample_colors).abs() / b
               - math.log(2.0 * b)).sum(dim=-1)            # (B, N)
    return -torch.logsumexp(log_pi + log_lap, dim=-1)


def mixture_nll(profile: BlendingProfile, sample_colors, target,
                laplace_scale: float) -> torch.Tensor:
    """Single-ray mixture NLL; raises AllWeightsZero when sum(w) = 0."""
    w = profile.weights
    if float(w.detach().sum()) <= 0.0:
        raise AllWeightsZero("mixture NLL undefined: all blending weights are zero")
    return mnll_batch(
        w[None], _as_tensor(sample_colors)[None], _as_tensor(target)[None], laplace_scale
    )[0]


def ue_terms_batch(weights: torch.Tensor, argmax_index: torch.Tensor,
                   halfwidth: int) -> torch.Tensor:
    """Blending mass farther than `halfwidth` indices from the argmax."""
    idx = torch.arange(weights.shape[-1])
    far = (idx[None, :] - argmax_index[:, None]).abs() > halfwidth
    return torch.where(far, weights, torch.zeros((), dtype=weights.dtype)).sum(dim=-1)


def emptiness_loss(profile: BlendingProfile, halfwidth: int) -> torch.Tensor:
    """Single-ray emptiness regularizer, >= 0; zero for one-hot weights."""
    return ue_terms_batch(
        profile.weights[None], torch.tensor([profile.argmax_index]), halfwidth
    )[0]


@dataclass
class LossBatch:
    """Everything total_loss needs for one training batch."""

    original: ProfileBatch
    targets: torch.Tensor                  # (B, 3) ground-truth colors
    surface: ProfileBatch | None = None
    inner: ProfileBatch | None = None
    masks: np.ndarray | None = None        # (B,) bool, surface-ray consistency
    clip_flags: np.ndarray | None = None   # (B,) bool
    white_background: bool = False


@dataclass
class TotalLoss:
    total: torch.Tensor
    components: dict = dc_field(default_factory=dict)
    masked_fraction: float | None = None


def total_loss(batch: LossBatch, cfg: LossConfig, iteration: int) -> TotalLoss:
    """Weighted sum of all objectives for one batch.

    MSE uses original rays only. The three augmentation terms are gated per
    ray by the surface-ray consistency mask and are disabled entirely during
    warmup. NLL and the emptiness term always apply to the original rays.
    """
    orig = batch.original
    n_rays = len(orig)
    pred = orig.final_color(batch.white_background)
    mse = mse_loss(pred, batch.targets)
    zero = mse.new_zeros(())

    warm = iteration < cfg.warmup_iters
    l_rc = 0.0 if warm else cfg.lambda_rc
    l_pbf = 0.0 if warm else cfg.lambda_pbf
    l_mnll = 0.0 if warm else cfg.lambda_mnll

    rc = pbf = mnll = zero
    masked_fraction = None
    if batch.surface is not None and batch.masks is not None:
        masked_fraction = float(np.mean(batch.masks))
        idx = torch.from_numpy(np.flatnonzero(batch.masks))
        if idx.numel() > 0:
            s = torch.from_numpy(orig.argmax_index[batch.masks])
            if l_rc > 0:
                clip = (torch.from_numpy(batch.clip_flags[batch.masks])
                        if batch.clip_flags is not None
                        else torch.zeros(idx.numel(), dtype=torch.bool))
                rc = rc_terms_batch(
                    orig.weights[idx], batch.surface.weights[idx], s,
                    cfg.temperature, clip, cfg.two_sided_rc,
                ).sum() / n_rays
            if l_pbf > 0:
                rc_feats = orig.bottlenecks, batch.surface.bottlenecks
                if rc_feats[0] is None or rc_feats[1] is None:
                    raise ValueError("bottleneck features missing for the PBF loss")
                pbf = pbf_terms_batch(rc_feats[0][idx], rc_feats[1][idx]).sum() / n_rays
            if l_mnll > 0 and batch.inner is not None:
                w_in = batch.inner.weights[idx]
                ok = w_in.detach().sum(dim=-1) > 0
                if bool(ok.any()):
                    mnll = mnll_batch(
                        w_in[ok], batch.inner.sample_colors[idx][ok],
                        batch.targets[idx][ok], cfg.laplace_scale,
                        cfg.mnll_center,
                        rendered_color=batch.inner.rendered_color[idx][ok],
                    ).sum() / n_rays

    nll = zero
    if cfg.lambda_nll > 0:
        ok = orig.weights.detach().sum(dim=-1) > 0
        if bool(ok.any()):
            nll = mnll_batch(
                orig.weights[ok], orig.sample_colors[ok], batch.targets[ok],
                cfg.laplace_scale, cfg.mnll_center,
                rendered_color=orig.rendered_color[ok],
            ).sum() / n_rays

    ue = zero
    if cfg.lambda_ue > 0:
        ue = ue_terms_batch(
            orig.weights, torch.from_numpy(orig.argmax_index), cfg.ue_halfwidth
        ).sum() / n_rays

    total = (mse + l_rc * rc + l_pbf * pbf + l_mnll * mnll
             + cfg.lambda_nll * nll + cfg.lambda_ue * ue)
    components = {
        "mse": float(mse.detach()),
        "rc": float(rc.detach()),
        "pbf": float(pbf.detach()),
        "mnll": float(mnll.detach()),
        "nll": float(nll.detach()),
        "ue": float(ue.detach()),
        "total": float(total.detach()),
    }
    return TotalLoss(total=total, components=components, masked_fraction=masked_fraction)
