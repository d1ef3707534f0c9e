"""Few-shot radiance-field trainer with sphere-based ray augmentation.

Augmented rays are cast toward each original ray's most likely surface
point from random points on (surface-sphere) and inside (inner-sphere) a
virtual sphere centered there; a consistency mask over coarse-grid argmax
indices filters occluded companions, and divergence-based losses align the
kept ones. Everything is validated against analytic scenes with an exact
occlusion oracle.
"""

from .consistency import MaskConfig, clip_weights, consistency_mask, should_clip
from .errors import (
    AllWeightsZero,
    BadConfig,
    DegenerateDirection,
    GridMismatch,
    IndexOutOfRange,
    NonFiniteGradient,
    NonFiniteOutput,
    NonPositiveRadius,
    ShapeMismatch,
)
from .field import FieldModel, field_backward, field_forward, load_checkpoint, \
    positional_encoding, save_checkpoint
from .geometry import AugmentedPair, Camera, Ray, SphereDraw, augmented_direction, \
    build_augmented_pair, inner_sphere_origin, sample_sphere_draw, surface_point, \
    surface_sphere_origin
from .losses import LossConfig, emptiness_loss, mixture_nll, mse_loss, pbf_term, \
    ray_consistency_term, tempered_softmax, total_loss
from .metrics import avge, psnr, ssim
from .renderer import BlendingProfile, SampleGrid, coarse_sample, render_image, \
    render_ray, volume_render
from .scenes import CameraRig, DatasetBundle, SyntheticScene, density_bypass, \
    ground_truth_render, make_dataset, occlusion_oracle, sdf_eval
from .trainer import TrainConfig, ablation_run, train, train_step

__version__ = "0.1.0"
