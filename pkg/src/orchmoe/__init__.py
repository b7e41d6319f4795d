"""Multi-adapter fine-tuning with a task router and a Gumbel-sigmoid skill router."""

from .autodiff import Tensor, backward, finite_diff_grad
from .estimator import MultiAdapterRegressor
from .layer import OrchMoeLayer, init_orchmoe_layer, trainable_param_count
from .lora import LoraAdapter, init_adapter, lora_forward, merge_adapters

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "finite_diff_grad",
    "MultiAdapterRegressor",
    "OrchMoeLayer",
    "init_orchmoe_layer",
    "trainable_param_count",
    "LoraAdapter",
    "init_adapter",
    "lora_forward",
    "merge_adapters",
]
