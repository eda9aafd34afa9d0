"""No-reference quality metric for synthesized views built on a context-encoder discriminator."""

from ._core import (
    DibrqaError,
    Metric,
    Checkpoint,
    load_image,
    save_image,
    load_mask,
    save_mask,
    rotate_ccw,
    slic_segment,
    mask_type1,
    mask_type2,
    mask_type3,
    punch_holes,
    psnr,
    pcc,
    scc,
    rmse,
    t_test,
    rank_algorithms,
    kendall_tau,
    normalized_time,
    train_svr,
    read_manifest,
    make_split,
    make_folds,
    synthetic_scene,
    synthetic_hole_mask,
)

__all__ = [
    "DibrqaError",
    "Metric",
    "Checkpoint",
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "rotate_ccw",
    "slic_segment",
    "mask_type1",
    "mask_type2",
    "mask_type3",
    "punch_holes",
    "psnr",
    "pcc",
    "scc",
    "rmse",
    "t_test",
    "rank_algorithms",
    "kendall_tau",
    "normalized_time",
    "train_svr",
    "read_manifest",
    "make_split",
    "make_folds",
    "synthetic_scene",
    "synthetic_hole_mask",
]
