"""Python access to the cdseg engine: losses, metrics, scene generator, checkpoints."""

from ._core import (
    Error,
    evaluate_masks,
    generate_sample,
    gradcheck,
    load_checkpoint,
    lovasz_grad,
    lovasz_softmax,
    lr_at,
    network_parameter_count,
    ntxent,
    save_checkpoint,
)

__all__ = [
    "Error",
    "evaluate_masks",
    "generate_sample",
    "gradcheck",
    "load_checkpoint",
    "lovasz_grad",
    "lovasz_softmax",
    "lr_at",
    "network_parameter_count",
    "ntxent",
    "save_checkpoint",
]
