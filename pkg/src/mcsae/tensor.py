"""Float64 tensor primitives on top of torch autograd.

Every op validates the shapes its equations need and reports mismatches with a
``DimensionError`` that names both operands. Gradients flow through torch's
reverse-mode engine.
"""

import struct
import numpy as np
import torch
import torch.nn.functional as F

from typing import BinaryIO, Callable, Dict, Iterable, Optional, Sequence
from .errors import ContractError, DimensionError, LabelIndexError, NumericError
from .typings import PathLike

DTYPE = torch.float64

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

CHECKPOINT_MAGIC = b'MCT1'


def tensor(data, requires_grad: bool = False) -> torch.Tensor:
  t = torch.as_tensor(data, dtype=DTYPE).clone()
  return t.requires_grad_(requires_grad)


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
  """Matrix product over the last two axes; leading axes are batch axes."""
  if a.dim() < 2 or b.dim() < 2 or a.shape[-1] != b.shape[-2]:
    raise DimensionError(f'matmul: cannot multiply {tuple(a.shape)} by {tuple(b.shape)}')
  return torch.matmul(a, b)


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
  if not -x.dim() <= axis < max(x.dim(), 1):
    raise DimensionError(f'softmax: axis {axis} out of range for shape {tuple(x.shape)}')
  if not torch.isfinite(x).all():
    raise NumericError(f'softmax: non-finite input of shape {tuple(x.shape)}')
  # torch subtracts the slice maximum internally.
  return torch.softmax(x, dim=axis)


def leaky_relu(x: torch.Tensor, slope: float) -> torch.Tensor:
  if not 0. < slope < 1.:
    raise ValueError(f'leaky_relu: slope must lie in (0, 1), got {slope}')
  return F.leaky_relu(x, negative_slope=slope)


def conv2d(
  x: torch.Tensor,
  weight: torch.Tensor,
  bias: Optional[torch.Tensor] = None,
  stride: int = 1,
  pad: int = 0,
) -> torch.Tensor:
  """Cross-correlation of a C×H×W (or B×C×H×W) map with a C_out×C_in×k×k kernel."""
  unbatched = x.dim() == 3
  if unbatched:
    x = x.unsqueeze(0)
  if x.dim() != 4 or weight.dim() != 4:
    raise DimensionError(f'conv2d: expected a 3-d/4-d input and 4-d kernel, got {tuple(x.shape)} and {tuple(weight.shape)}')

  c_out, c_in, kh, kw = weight.shape
  if kh != kw or kh % 2 == 0:
    raise DimensionError(f'conv2d: kernel must be square with odd size, got {kh}×{kw}')
  if x.shape[1] != c_in:
    raise DimensionError(f'conv2d: input has {x.shape[1]} channels but kernel {tuple(weight.shape)} expects {c_in}')
  if bias is not None and bias.shape != (c_out,):
    raise DimensionError(f'conv2d: bias {tuple(bias.shape)} does not match {c_out} output channels')

  # The output grid must either fit exactly, or tile the input exactly when
  # downsampling (H' · stride == H).
  for extent in x.shape[2:]:
    span = extent + 2 * pad - kh
    if span < 0 or (span % stride != 0 and (span // stride + 1) * stride != extent):
      raise DimensionError(
        f'conv2d: ({extent} + 2·{pad} − {kh}) / {stride} + 1 is not a positive integer for input {tuple(x.shape)}'
      )

  y = F.conv2d(x, weight, bias, stride=stride, padding=pad)
  return y.squeeze(0) if unbatched else y


def batch_norm2d(
  x: torch.Tensor,
  weight: torch.Tensor,
  bias: torch.Tensor,
  running_mean: torch.Tensor,
  running_var: torch.Tensor,
  training: bool,
  momentum: float = BN_MOMENTUM,
  eps: float = BN_EPS,
) -> torch.Tensor:
  """Per-channel normalisation of a B×C×H×W map.

  In training mode the batch statistics are used and the running statistics are
  updated in place; in eval mode the running statistics are used unchanged.
  """
  if x.dim() != 4:
    raise DimensionError(f'batch_norm2d: expected B×C×H×W, got {tuple(x.shape)}')
  if training and x.shape[0] < 2:
    raise ContractError(f'batch_norm2d: training mode needs a batch of at least 2, got {x.shape[0]}')
  return F.batch_norm(
    x, running_mean, running_var, weight, bias,
    training=training, momentum=momentum, eps=eps,
  )


def global_avg_pool(x: torch.Tensor) -> torch.Tensor:
  """C×H×W → 1×C, or B×C×H×W → B×C."""
  if x.dim() == 3:
    x = x.unsqueeze(0)
  if x.dim() != 4:
    raise DimensionError(f'global_avg_pool: expected C×H×W or B×C×H×W, got {tuple(x.shape)}')
  return x.mean(dim=(-2, -1))


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
  if logits.dim() != 2 or labels.shape != logits.shape[:1]:
    raise DimensionError(f'cross_entropy: logits {tuple(logits.shape)} do not match labels {tuple(labels.shape)}')
  num_classes = logits.shape[1]
  if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
    raise LabelIndexError(f'cross_entropy: labels must lie in [0, {num_classes}), got {labels.tolist()}')
  return F.cross_entropy(logits, labels.long())


def backward(loss: torch.Tensor, retain_graph: bool = True):
  """Accumulates d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
  if loss.dim() != 0:
    raise ContractError(f'backward: loss must be a scalar, got shape {tuple(loss.shape)}')
  if not loss.requires_grad:
    raise ContractError('backward: loss is not connected to any tensor that requires grad')
  loss.backward(retain_graph=retain_graph)


def zero_grad(tensors: Iterable[torch.Tensor]):
  for t in tensors:
    if t.grad is not None:
      t.grad = None


def grad_check(
  f: Callable[[torch.Tensor], torch.Tensor],
  x: torch.Tensor,
  eps: float = 1e-5,
) -> float:
  """Maximum relative error between backward gradients and central differences.

  The denominator of each element is max(|analytic|, |numeric|, 1e-8).
  """
  x = x.detach().to(DTYPE).clone().requires_grad_(True)
  y = f(x)
  backward(y, retain_graph=False)
  analytic = x.grad.detach().reshape(-1)

  base = x.detach().reshape(-1)
  numeric = torch.empty_like(base)
  with torch.no_grad():
    for i in range(base.numel()):
      shifted = base.clone()
      shifted[i] += eps
      f_plus = f(shifted.view_as(x)).item()
      shifted[i] -= 2 * eps
      f_minus = f(shifted.view_as(x)).item()
      numeric[i] = (f_plus - f_minus) / (2 * eps)

  scale = torch.maximum(torch.maximum(analytic.abs(), numeric.abs()), torch.tensor(1e-8, dtype=DTYPE))
  return ((analytic - numeric).abs() / scale).max().item()


def write_tensors(stream: BinaryIO, named: Dict[str, torch.Tensor]):
  stream.write(CHECKPOINT_MAGIC)
  stream.write(struct.pack('<I', len(named)))
  for name, value in named.items():
    encoded = name.encode('utf-8')
    value = value.detach().to('cpu', DTYPE).contiguous()
    stream.write(struct.pack('<I', len(encoded)))
    stream.write(encoded)
    stream.write(struct.pack('<I', value.dim()))
    stream.write(struct.pack(f'<{value.dim()}I', *value.shape))
    stream.write(value.numpy().astype('<f8', copy=False).tobytes())


def read_tensors(stream: BinaryIO) -> Dict[str, torch.Tensor]:
  magic = stream.read(4)
  if magic != CHECKPOINT_MAGIC:
    raise ValueError(f'Not a tensor checkpoint: expected magic {CHECKPOINT_MAGIC!r}, got {magic!r}')

  def read_u32(count: int = 1) -> Sequence[int]:
    raw = stream.read(4 * count)
    if len(raw) != 4 * count:
      raise ValueError('Truncated tensor checkpoint')
    return struct.unpack(f'<{count}I', raw)

  named = {}
  (num_entries,) = read_u32()
  for _ in range(num_entries):
    (name_len,) = read_u32()
    name = stream.read(name_len).decode('utf-8')
    (rank,) = read_u32()
    shape = read_u32(rank) if rank else ()
    count = int(np.prod(shape)) if rank else 1
    raw = stream.read(8 * count)
    if len(raw) != 8 * count:
      raise ValueError(f'Truncated tensor checkpoint at entry {name!r}')
    values = np.frombuffer(raw, dtype='<f8').astype(np.float64)
    named[name] = torch.from_numpy(values.reshape(shape))
  return named


def save_tensors(path: PathLike, named: Dict[str, torch.Tensor]):
  with open(path, 'wb') as f:
    write_tensors(f, named)


def load_tensors(path: PathLike) -> Dict[str, torch.Tensor]:
  with open(path, 'rb') as f:
    return read_tensors(f)
