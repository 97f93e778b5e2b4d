"""Spectral-spatial graph reasoning for hyperspectral image classification.

Arrays follow the on-disk layouts: cubes are float32 (bands, height, width),
label maps are uint16 (height, width) with 0 meaning unlabeled.
"""

from ._core import (
    Model,
    aa,
    chebyshev_eval,
    confusion_matrix,
    count_attention_ops,
    kappa,
    load_cube,
    load_labels,
    make_split,
    normalized_laplacian,
    oa,
    poly_lr,
    renormalized_propagation,
    run_cli,
    save_cube,
    save_labels,
    spectral_radius,
    standardize,
    synth_scene,
    train,
)

__all__ = [
    "Model",
    "aa",
    "chebyshev_eval",
    "confusion_matrix",
    "count_attention_ops",
    "kappa",
    "load_cube",
    "load_labels",
    "make_split",
    "normalized_laplacian",
    "oa",
    "poly_lr",
    "renormalized_propagation",
    "run_cli",
    "save_cube",
    "save_labels",
    "spectral_radius",
    "standardize",
    "synth_scene",
    "train",
]
