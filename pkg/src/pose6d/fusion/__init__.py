"""Toy RGB/point-cloud fusion network with its own reverse-mode autodiff."""
from .autodiff import Tensor, gather_max, parameter
from .losses import focal_loss, l1_offset_loss, multi_task_loss
from .network import (FusionConfig, NetworkOutput, build_plan, downsample_xyz, forward,
                      init_params, pixel_to_point_fuse, point_to_pixel_fuse, shared_mlp)
from .train import train_toy

__all__ = ["Tensor", "gather_max", "parameter", "focal_loss", "l1_offset_loss",
           "multi_task_loss", "FusionConfig", "NetworkOutput", "build_plan", "downsample_xyz",
           "forward", "init_params", "pixel_to_point_fuse", "point_to_pixel_fuse",
           "shared_mlp", "train_toy"]
