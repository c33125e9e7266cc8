"""Predictive-coding models for occupancy and semantic grid sequences.

Each prong is a stack of PredNet-style layers: a recurrent
representation R_l predicts the layer input A_l, and the rectified
error E_l feeds both the same layer at the next step and the layer
above. The semantics-conditioned model wires the semantic prong's
predicted class-probability map into the occupancy prong's first
representation layer. Baselines: an occupancy-only prong and a
double-prong static/dynamic split merged by Dempster fusion.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .layers import ConvLSTMCell, dst_fuse_torch, prednet_error

T_IN = 5
HORIZON = 15

LAMBDA_TOP = 0.1  # weight of layers above the bottom in the error loss


def mass_activation(raw: torch.Tensor) -> torch.Tensor:
    """Sigmoid per channel, then renormalize so m_occ + m_emp <= 1.

    The final clamp removes the float rounding of the division so the
    invariant holds exactly.
    """
    sig = torch.sigmoid(raw)
    total = sig.sum(dim=1, keepdim=True)
    out = sig / torch.clamp(total, min=1.0)
    mo, me = out[:, :1], out[:, 1:]
    return torch.cat([mo, torch.minimum(me, 1.0 - mo)], dim=1)


class PredNetProng(nn.Module):
    """One stack of target/prediction/representation/error layers.

    channels[l] is the A_l (and R_l hidden) width at layer l; layer 0
    runs at grid resolution and each layer above is pooled by 2. An
    optional side input is concatenated onto layer 0's representation
    input at full resolution.
    """

    def __init__(self, channels, side_channels: int = 0, output: str = "mass",
                 kernel_size: int = 3):
        super().__init__()
        if output not in ("mass", "softmax"):
            raise ValueError(f"unknown output activation {output!r}")
        self.channels = tuple(channels)
        self.side_channels = side_channels
        self.output = output
        L = len(self.channels)
        cells, ahat_convs, a_convs = [], [], []
        for l in range(L):
            in_ch = 2 * self.channels[l]  # E_l from the previous step
            if l < L - 1:
                in_ch += self.channels[l + 1]  # upsampled R_{l+1}
            if l == 0:
                in_ch += side_channels
            cells.append(ConvLSTMCell(in_ch, self.channels[l], kernel_size))
            ahat_convs.append(nn.Conv2d(self.channels[l], self.channels[l],
                                        kernel_size, padding=kernel_size // 2))
            if l < L - 1:
                a_convs.append(nn.Conv2d(2 * self.channels[l], self.channels[l + 1],
                                         kernel_size, padding=kernel_size // 2))
        self.cells = nn.ModuleList(cells)
        self.ahat_convs = nn.ModuleList(ahat_convs)
        self.a_convs = nn.ModuleList(a_convs)

    @property
    def num_layers(self) -> int:
        return len(self.channels)

    def init_state(self, batch: int, h: int, w: int, *, device=None, dtype=None):
        states, errors = [], []
        for l, ch in enumerate(self.channels):
            hl, wl = h >> l, w >> l
            if hl << l != h or wl << l != w:
                raise ValueError(f"grid {h}x{w} not divisible by 2^{l}")
            states.append(self.cells[l].init_state(batch, hl, wl,
                                                   device=device, dtype=dtype))
            errors.append(torch.zeros(batch, 2 * ch, hl, wl,
                                      device=device, dtype=dtype))
        return states, errors

    def _out_activation(self, raw: torch.Tensor) -> torch.Tensor:
        if self.output == "mass":
            return mass_activation(raw)
        return torch.softmax(raw, dim=1)

    def step(self, a0: torch.Tensor, states, errors, side: torch.Tensor | None = None):
        """One timestep: update R top-down, then predict bottom-up.

        Returns (prediction at layer 0, new states, new errors). The
        prediction is made before a0 is consumed, so it is a next-frame
        prediction relative to the previous input.
        """
        L = self.num_layers
        if (side is None) != (self.side_channels == 0):
            raise ValueError("side input does not match configuration")
        new_states = list(states)
        for l in reversed(range(L)):
            parts = [errors[l]]
            if l < L - 1:
                parts.append(F.interpolate(new_states[l + 1][0], scale_factor=2,
                                           mode="nearest"))
            if l == 0 and side is not None:
                parts.append(side)
            new_states[l] = self.cells[l](torch.cat(parts, dim=1), states[l])

        new_errors = []
        a = a0
        prediction = None
        for l in range(L):
            raw = self.ahat_convs[l](new_states[l][0])
            a_hat = self._out_activation(raw) if l == 0 else F.relu(raw)
            if l == 0:
                prediction = a_hat
            err = prednet_error(a, a_hat)
            new_errors.append(err)
            if l < L - 1:
                a = F.max_pool2d(F.relu(self.a_convs[l](err)), 2)
        return prediction, new_states, new_errors


def error_loss(errors, lambda_top: float = LAMBDA_TOP) -> torch.Tensor:
    """Layer-weighted mean error activation for one timestep."""
    total = errors[0].mean()
    for err in errors[1:]:
        total = total + lambda_top * err.mean()
    return total


def _check_batch(occ: torch.Tensor):
    if occ.dim() != 5 or occ.shape[2] != 2:
        raise ValueError(f"expected (B,T,2,H,W) occupancy batch, got {tuple(occ.shape)}")


class SemanticsPredictor(nn.Module):
    """Upstream prong over one-hot semantic maps with a softmax output."""

    kind = "semantics"

    def __init__(self, n_classes: int, widths=(8, 16), kernel_size: int = 3):
        super().__init__()
        self.n_classes = n_classes
        self.prong = PredNetProng((n_classes, *widths), output="softmax",
                                  kernel_size=kernel_size)

    def stage1_loss(self, sem: torch.Tensor) -> torch.Tensor:
        """Next-frame categorical cross-entropy over frames 2..T."""
        B, T, _, H, W = sem.shape
        states, errors = self.prong.init_state(B, H, W, device=sem.device,
                                               dtype=sem.dtype)
        loss = sem.new_zeros(())
        for t in range(T):
            pred, states, errors = self.prong.step(sem[:, t], states, errors)
            if t > 0:  # the first prediction is made from an empty state
                loss = loss + cross_entropy_map(pred, sem[:, t])
        return loss / (T - 1)

    def stage2_loss(self, sem: torch.Tensor, t_in: int = T_IN,
                    horizon: int = HORIZON) -> torch.Tensor:
        preds, _ = self.rollout_probs(sem[:, :t_in], horizon)
        loss = sem.new_zeros(())
        for t in range(horizon):
            loss = loss + cross_entropy_map(preds[t], sem[:, t_in + t])
        return loss / horizon

    def rollout_probs(self, sem_context: torch.Tensor, horizon: int,
                      harden: bool = False):
        """Recursive class-probability predictions after a context run."""
        B, T, _, H, W = sem_context.shape
        states, errors = self.prong.init_state(B, H, W, device=sem_context.device,
                                               dtype=sem_context.dtype)
        for t in range(T):
            pred, states, errors = self.prong.step(sem_context[:, t], states, errors)
        preds = []
        for _ in range(horizon):
            feed = harden_probs(pred) if harden else pred
            pred, states, errors = self.prong.step(feed, states, errors)
            preds.append(pred)
        return preds, (states, errors)


def cross_entropy_map(probs: torch.Tensor, onehot: torch.Tensor) -> torch.Tensor:
    """Mean per-cell categorical cross-entropy between probability maps."""
    return -(onehot * torch.log(torch.clamp(probs, min=1e-12))).sum(dim=1).mean()


def harden_probs(probs: torch.Tensor) -> torch.Tensor:
    """Argmax one-hot encoding of a class-probability map."""
    idx = probs.argmax(dim=1, keepdim=True)
    return torch.zeros_like(probs).scatter_(1, idx, 1.0)


class _OccupancyRolloutMixin:
    """Shared recursive-rollout plumbing for single-prong occupancy models."""

    def _context_then_recurse(self, prong, occ_context, horizon, sides):
        B, T, _, H, W = occ_context.shape
        states, errors = prong.init_state(B, H, W, device=occ_context.device,
                                          dtype=occ_context.dtype)
        for t in range(T):
            pred, states, errors = prong.step(occ_context[:, t], states, errors,
                                              side=sides[t] if sides else None)
        preds = []
        for k in range(horizon):
            side = sides[T + k] if sides else None
            pred, states, errors = prong.step(pred, states, errors, side=side)
            preds.append(pred)
        return preds


class OccupancyOnlyModel(nn.Module, _OccupancyRolloutMixin):
    """Baseline prong over evidential grids with no semantic input."""

    kind = "prednet"

    def __init__(self, widths=(8, 16), kernel_size: int = 3):
        super().__init__()
        self.prong = PredNetProng((2, *widths), output="mass",
                                  kernel_size=kernel_size)

    def stage1_loss(self, occ, sem=None, masks=None):
        _check_batch(occ)
        B, T, _, H, W = occ.shape
        states, errors = self.prong.init_state(B, H, W, device=occ.device,
                                               dtype=occ.dtype)
        loss = occ.new_zeros(())
        for t in range(T):
            _, states, errors = self.prong.step(occ[:, t], states, errors)
            if t > 0:
                loss = loss + error_loss(errors)
        return loss / (T - 1)

    def stage2_loss(self, occ, sem=None, masks=None, t_in: int = T_IN,
                    horizon: int = HORIZON):
        preds = self._context_then_recurse(self.prong, occ[:, :t_in], horizon, None)
        loss = occ.new_zeros(())
        for t in range(horizon):
            loss = loss + prednet_error(occ[:, t_in + t], preds[t]).mean()
        return loss / horizon

    def rollout(self, occ, sem=None, masks=None, t_in: int = T_IN,
                horizon: int = HORIZON, harden: bool = False):
        _check_batch(occ)
        preds = self._context_then_recurse(self.prong, occ[:, :t_in], horizon, None)
        return torch.stack(preds, dim=1), None


class TwoProngModel(nn.Module):
    """Semantics-conditioned occupancy predictor.

    The upstream semantic prong predicts per-cell class probabilities
    one frame ahead; that map enters the occupancy prong's first
    representation layer at every step.
    """

    kind = "ours"

    def __init__(self, n_classes: int, widths=(8, 16), kernel_size: int = 3):
        super().__init__()
        self.n_classes = n_classes
        self.semantics = SemanticsPredictor(n_classes, widths, kernel_size)
        self.occupancy = PredNetProng((2, *widths), side_channels=n_classes,
                                      output="mass", kernel_size=kernel_size)

    def freeze_semantics(self) -> None:
        for p in self.semantics.parameters():
            p.requires_grad_(False)

    def occupancy_parameters(self):
        return self.occupancy.parameters()

    def stage1_loss(self, occ, sem, masks=None):
        _check_batch(occ)
        B, T, _, H, W = occ.shape
        s_states, s_errors = self.semantics.prong.init_state(
            B, H, W, device=occ.device, dtype=occ.dtype)
        o_states, o_errors = self.occupancy.init_state(
            B, H, W, device=occ.device, dtype=occ.dtype)
        loss = occ.new_zeros(())
        for t in range(T):
            sem_pred, s_states, s_errors = self.semantics.prong.step(
                sem[:, t], s_states, s_errors)
            _, o_states, o_errors = self.occupancy.step(
                occ[:, t], o_states, o_errors, side=sem_pred)
            if t > 0:
                loss = loss + error_loss(o_errors)
        return loss / (T - 1)

    def _rollout_preds(self, occ, sem, t_in, horizon, harden=False):
        B, _, _, H, W = occ.shape
        s_states, s_errors = self.semantics.prong.init_state(
            B, H, W, device=occ.device, dtype=occ.dtype)
        o_states, o_errors = self.occupancy.init_state(
            B, H, W, device=occ.device, dtype=occ.dtype)
        for t in range(t_in):
            sem_pred, s_states, s_errors = self.semantics.prong.step(
                sem[:, t], s_states, s_errors)
            occ_pred, o_states, o_errors = self.occupancy.step(
                occ[:, t], o_states, o_errors, side=sem_pred)
        occ_preds, sem_preds = [], []
        for _ in range(horizon):
            sem_feed = harden_probs(sem_pred) if harden else sem_pred
            sem_pred, s_states, s_errors = self.semantics.prong.step(
                sem_feed, s_states, s_errors)
            occ_pred, o_states, o_errors = self.occupancy.step(
                occ_pred, o_states, o_errors, side=sem_pred)
            occ_preds.append(occ_pred)
            sem_preds.append(sem_pred)
        return occ_preds, sem_preds

    def stage2_loss(self, occ, sem, masks=None, t_in: int = T_IN,
                    horizon: int = HORIZON):
        occ_preds, _ = self._rollout_preds(occ, sem, t_in, horizon)
        loss = occ.new_zeros(())
        for t in range(horizon):
            loss = loss + prednet_error(occ[:, t_in + t], occ_preds[t]).mean()
        return loss / horizon

    def rollout(self, occ, sem, masks=None, t_in: int = T_IN,
                horizon: int = HORIZON, harden: bool = False):
        _check_batch(occ)
        occ_preds, sem_preds = self._rollout_preds(occ, sem, t_in, horizon, harden)
        return torch.stack(occ_preds, dim=1), torch.stack(sem_preds, dim=1)


class DoubleProngModel(nn.Module):
    """Static/dynamic split baseline; prong outputs merge by Dempster fusion.

    Inputs are split with ground-truth dynamic masks: the static prong
    sees masses outside the mask, the dynamic prong sees masses inside.
    """

    kind = "double_prong"

    def __init__(self, widths=(8, 16), kernel_size: int = 3):
        super().__init__()
        self.static_prong = PredNetProng((2, *widths), output="mass",
                                         kernel_size=kernel_size)
        self.dynamic_prong = PredNetProng((2, *widths), output="mass",
                                          kernel_size=kernel_size)

    @staticmethod
    def split(occ: torch.Tensor, masks: torch.Tensor):
        m = masks.unsqueeze(2).to(occ.dtype)
        return occ * (1.0 - m), occ * m

    @staticmethod
    def merge(static_pred: torch.Tensor, dynamic_pred: torch.Tensor) -> torch.Tensor:
        mo, me = dst_fuse_torch(static_pred[:, 0], static_pred[:, 1],
                                dynamic_pred[:, 0], dynamic_pred[:, 1])
        total = torch.clamp(mo + me, min=1.0)
        mo, me = mo / total, me / total
        return torch.stack([mo, torch.minimum(me, 1.0 - mo)], dim=1)

    def stage1_loss(self, occ, sem=None, masks=None):
        _check_batch(occ)
        static_in, dynamic_in = self.split(occ, masks)
        B, T, _, H, W = occ.shape
        loss = occ.new_zeros(())
        for prong, data in ((self.static_prong, static_in),
                            (self.dynamic_prong, dynamic_in)):
            states, errors = prong.init_state(B, H, W, device=occ.device,
                                              dtype=occ.dtype)
            for t in range(T):
                _, states, errors = prong.step(data[:, t], states, errors)
                if t > 0:
                    loss = loss + error_loss(errors)
        return loss / (2 * (T - 1))

    def _rollout_preds(self, occ, masks, t_in, horizon):
        static_in, dynamic_in = self.split(occ[:, :t_in], masks[:, :t_in])
        B, _, _, H, W = occ.shape
        preds = []
        per_prong = []
        for prong, data in ((self.static_prong, static_in),
                            (self.dynamic_prong, dynamic_in)):
            states, errors = prong.init_state(B, H, W, device=occ.device,
                                              dtype=occ.dtype)
            for t in range(t_in):
                pred, states, errors = prong.step(data[:, t], states, errors)
            outs = []
            for _ in range(horizon):
                pred, states, errors = prong.step(pred, states, errors)
                outs.append(pred)
            per_prong.append(outs)
        for t in range(horizon):
            preds.append(self.merge(per_prong[0][t], per_prong[1][t]))
        return preds

    def stage2_loss(self, occ, sem=None, masks=None, t_in: int = T_IN,
                    horizon: int = HORIZON):
        preds = self._rollout_preds(occ, masks, t_in, horizon)
        loss = occ.new_zeros(())
        for t in range(horizon):
            loss = loss + prednet_error(occ[:, t_in + t], preds[t]).mean()
        return loss / horizon

    def rollout(self, occ, sem=None, masks=None, t_in: int = T_IN,
                horizon: int = HORIZON, harden: bool = False):
        _check_batch(occ)
        preds = self._rollout_preds(occ, masks, t_in, horizon)
        return torch.stack(preds, dim=1), None


def torch_predict_fn(model: nn.Module, n_classes: int, t_in: int = T_IN,
                     horizon: int = HORIZON, harden: bool = False):
    """Adapt a model to the metrics interface: SequenceSample -> (H,2,h,w)."""
    def predict(seq):
        occ = torch.from_numpy(np.stack([seq.m_occ, seq.m_emp], axis=1))[None]
        onehot = np.eye(n_classes, dtype=np.float32)[seq.labels]
        sem = torch.from_numpy(np.transpose(onehot, (0, 3, 1, 2)))[None]
        masks = torch.from_numpy(seq.masks.astype(np.float32))[None]
        with torch.no_grad():
            preds, _ = model.rollout(occ, sem, masks, t_in=t_in,
                                     horizon=horizon, harden=harden)
        return preds[0].numpy()

    return predict


def oracle_predict_fn(t_in: int = T_IN, horizon: int = HORIZON):
    """Perfect model: returns the ground-truth future masses."""
    def predict(seq):
        end = t_in + horizon
        return np.stack([seq.m_occ[t_in:end], seq.m_emp[t_in:end]], axis=1)

    return predict


def copy_last_predict_fn(t_in: int = T_IN, horizon: int = HORIZON):
    """Copy-last-input baseline: repeats the final context frame."""
    def predict(seq):
        frame = np.stack([seq.m_occ[t_in - 1], seq.m_emp[t_in - 1]])
        return np.repeat(frame[None], horizon, axis=0)

    return predict


def build_model(meta: dict) -> nn.Module:
    """Instantiate a model from a checkpoint descriptor."""
    kind = meta["kind"]
    widths = tuple(meta.get("widths", (8, 16)))
    kernel = int(meta.get("kernel_size", 3))
    if kind == "semantics":
        return SemanticsPredictor(int(meta["n_classes"]), widths, kernel)
    if kind == "ours":
        return TwoProngModel(int(meta["n_classes"]), widths, kernel)
    if kind == "prednet":
        return OccupancyOnlyModel(widths, kernel)
    if kind == "double_prong":
        return DoubleProngModel(widths, kernel)
    raise ValueError(f"unknown model kind {kind!r}")
