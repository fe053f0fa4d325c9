import torch.nn as nn

from .resnet import ConvBN, Projection


def init_weights(model: nn.Module, slope: float):
  """He-normal (fan-in) kernels for the LReLU slope; zero biases, unit BN scale."""
  for module in model.modules():
    if isinstance(module, (ConvBN, Projection)):
      nn.init.kaiming_normal_(module.weight, a=slope, mode='fan_in', nonlinearity='leaky_relu')
    if isinstance(module, ConvBN):
      nn.init.ones_(module.gamma)
      nn.init.zeros_(module.beta)
    if isinstance(module, Projection):
      nn.init.zeros_(module.bias)
    if isinstance(module, nn.Linear):
      nn.init.kaiming_normal_(module.weight, a=slope, mode='fan_in', nonlinearity='leaky_relu')
      if module.bias is not None:
        nn.init.zeros_(module.bias)
