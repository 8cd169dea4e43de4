"""Small numpy network engine: layers, sequential networks, SGD, gradient checks."""

from .layers import Conv2D, FullyConnected, Layer, MaxPool2D, ReLU, Upsample2x
from .network import SGD, Network, backward, forward, sgd_step, softmax, softmax_loss
from .gradcheck import GradReport, grad_check

__all__ = [
    "Conv2D", "FullyConnected", "Layer", "MaxPool2D", "ReLU", "Upsample2x",
    "SGD", "Network", "backward", "forward", "sgd_step", "softmax", "softmax_loss",
    "GradReport", "grad_check",
]
