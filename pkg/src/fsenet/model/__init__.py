from .config import FSENetConfig, toy_config
from .fsenet import FSENet, build_model, count_parameters, restore_image
from .loss import loss_and_grad, total_loss

__all__ = [
    "FSENet",
    "FSENetConfig",
    "build_model",
    "count_parameters",
    "loss_and_grad",
    "restore_image",
    "total_loss",
    "toy_config",
]
