"""Scribble-supervised segmentation with uncertainty reduction and eigenspace self-supervision."""
from .gridtransform import TransformSpec, apply_spatial, build_computing_matrices, apply_transform_to_transition
from .losses import LossWeights, partial_cross_entropy, entropy_soft, soft_eigenspace_ss, total_loss
from .segnet import BackboneSpec, SegNet
from .spectral import eigendecompose_transition
from .transition import compute_transition, random_walk_embedded

__version__ = "0.1.0"
