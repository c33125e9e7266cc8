"""Building blocks of the predictive stack.

Thin, testable operations: 2-D convolution forward/backward, a
convolutional LSTM cell, and the split positive/negative error unit.
Tensors are torch tensors; analytic gradients come from autograd and
are cross-checked against finite differences in the test suite.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


def conv2d_forward(x: torch.Tensor, kernels: torch.Tensor,
                   bias: torch.Tensor | None = None,
                   stride: int = 1, padding: int = 0) -> torch.Tensor:
    """Cross-correlation of x (B,Cin,H,W) with kernels (Cout,Cin,kh,kw)."""
    if x.dim() != 4 or kernels.dim() != 4 or x.shape[1] != kernels.shape[1]:
        raise ValueError(f"incompatible shapes {tuple(x.shape)} / {tuple(kernels.shape)}")
    return F.conv2d(x, kernels, bias, stride=stride, padding=padding)


def conv2d_backward(x: torch.Tensor, kernels: torch.Tensor, grad_out: torch.Tensor,
                    bias: torch.Tensor | None = None,
                    stride: int = 1, padding: int = 0):
    """Gradients of sum(conv2d(x, k) * grad_out) w.r.t. (x, kernels[, bias])."""
    x = x.detach().requires_grad_(True)
    kernels = kernels.detach().requires_grad_(True)
    inputs = [x, kernels]
    if bias is not None:
        bias = bias.detach().requires_grad_(True)
        inputs.append(bias)
    out = conv2d_forward(x, kernels, bias, stride, padding)
    grads = torch.autograd.grad(out, inputs, grad_outputs=grad_out)
    if bias is None:
        return grads[0], grads[1]
    return grads


def prednet_error(a: torch.Tensor, a_hat: torch.Tensor) -> torch.Tensor:
    """Split rectified error: [relu(a_hat - a), relu(a - a_hat)] on channels."""
    if a.shape != a_hat.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(a_hat.shape)}")
    return torch.cat([F.relu(a_hat - a), F.relu(a - a_hat)], dim=1)


class ConvLSTMCell(nn.Module):
    """LSTM cell whose gate transforms are convolutions."""

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int = 3):
        super().__init__()
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.gates = nn.Conv2d(in_channels + hidden_channels, 4 * hidden_channels,
                               kernel_size, padding=kernel_size // 2)

    def init_state(self, batch: int, h: int, w: int, *, device=None, dtype=None):
        zeros = torch.zeros(batch, self.hidden_channels, h, w,
                            device=device, dtype=dtype)
        return zeros, zeros.clone()

    def forward(self, x: torch.Tensor, state):
        hidden, cell = state
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        gates = self.gates(torch.cat([x, hidden], dim=1))
        i, f, g, o = torch.chunk(gates, 4, dim=1)
        i, f, o = torch.sigmoid(i), torch.sigmoid(f), torch.sigmoid(o)
        g = torch.tanh(g)
        cell_next = f * cell + i * g
        hidden_next = o * torch.tanh(cell_next)
        return hidden_next, cell_next


def convlstm_step(x: torch.Tensor, state, cell: ConvLSTMCell):
    """One recurrence step; returns the next (hidden, cell) state."""
    return cell(x, state)


def dst_fuse_torch(mo1, me1, mo2, me2, eps: float = 1e-7):
    """Differentiable Dempster's rule over {O, E} on torch tensors."""
    mu1 = 1.0 - mo1 - me1
    mu2 = 1.0 - mo2 - me2
    norm = torch.clamp(1.0 - (mo1 * me2 + me1 * mo2), min=eps)
    mo = (mo1 * mo2 + mo1 * mu2 + mu1 * mo2) / norm
    me = (me1 * me2 + me1 * mu2 + mu1 * me2) / norm
    return mo, me
