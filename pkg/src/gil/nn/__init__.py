"""Minimal dense-network toolkit: autodiff tape, MLPs and Adam."""

from .autodiff import Graph, Node, backward
from .mlp import Layer, MLPParams, forward, gradients, input_gradient_node, predict
from .optim import AdamState, adam_step

__all__ = [
    "AdamState", "Graph", "Layer", "MLPParams", "Node", "adam_step", "backward",
    "forward", "gradients", "input_gradient_node", "predict",
]
