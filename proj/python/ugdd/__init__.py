"""Python bindings for the ugdd segmentation core."""

from ugdd._core import (
    Model,
    adaptive_margin,
    dwt2,
    ece,
    entropy_map,
    generate,
    highfreq_reconstruct,
    idwt2,
    iou_dice,
    paired_t_test,
    surface_distances,
)

__all__ = [
    "Model",
    "adaptive_margin",
    "dwt2",
    "ece",
    "entropy_map",
    "generate",
    "highfreq_reconstruct",
    "idwt2",
    "iou_dice",
    "paired_t_test",
    "surface_distances",
]
