"""Training loops, gradient checking, and dataset/tensor conversion.

The two-stage protocol: stage 1 trains next-frame prediction, stage 2
fine-tunes from the stage-1 weights on the fully recursive 15-step
rollout. The semantic prong is trained first and stays frozen while
the occupancy prong trains. Runs are bit-reproducible for a fixed
seed (single-threaded torch, seeded shuffles and initializers).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
import torch

from .models import SemanticsPredictor, T_IN, HORIZON


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    t_in: int = T_IN
    horizon: int = HORIZON
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    stage: int = 1

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")
        if self.t_in + self.horizon > 20:
            raise ValueError("t_in + horizon must fit in a 20-frame sequence")


def worker_threads() -> int:
    """Thread cap from GRIDCAST_THREADS; training itself stays on 1 thread."""
    env = os.environ.get("GRIDCAST_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def tensors_from_dataset(dataset, indices=None):
    """Stack sequences into (occ, sem_onehot, masks) float32 torch tensors."""
    if indices is None:
        indices = range(len(dataset.sequences))
    n_classes = len(dataset.table)
    occ_list, sem_list, mask_list = [], [], []
    for i in indices:
        seq = dataset.sequences[i]
        occ_list.append(np.stack([seq.m_occ, seq.m_emp], axis=1))
        onehot = np.eye(n_classes, dtype=np.float32)[seq.labels]  # (T,H,W,C)
        sem_list.append(np.transpose(onehot, (0, 3, 1, 2)))
        mask_list.append(seq.masks.astype(np.float32))
    occ = torch.from_numpy(np.stack(occ_list))
    sem = torch.from_numpy(np.stack(sem_list))
    masks = torch.from_numpy(np.stack(mask_list))
    return occ, sem, masks


def _batch_loss(model, cfg: TrainConfig, occ, sem, masks):
    if isinstance(model, SemanticsPredictor):
        if cfg.stage == 1:
            return model.stage1_loss(sem)
        return model.stage2_loss(sem, cfg.t_in, cfg.horizon)
    if cfg.stage == 1:
        return model.stage1_loss(occ, sem, masks)
    return model.stage2_loss(occ, sem, masks, cfg.t_in, cfg.horizon)


def train_model(model, data, cfg: TrainConfig, parameters=None):
    """Optimize with Adam; returns the per-epoch mean loss curve.

    data is the (occ, sem, masks) tensor triple of the training split.
    parameters restricts the optimizer (used to keep the frozen
    semantic prong untouched); defaults to all trainable parameters.
    """
    occ, sem, masks = data
    n = occ.shape[0]
    if n == 0:
        raise ValueError("empty training split")
    torch.set_num_threads(1)  # fixed reduction order for bit-reproducibility
    if parameters is None:
        parameters = [p for p in model.parameters() if p.requires_grad]
    else:
        parameters = list(parameters)
    optimizer = torch.optim.Adam(parameters, lr=cfg.lr, betas=cfg.betas,
                                 eps=cfg.eps)
    shuffler = torch.Generator().manual_seed(cfg.seed)
    curve = []
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        order = torch.randperm(n, generator=shuffler)
        total, batches = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = _batch_loss(model, cfg, occ[idx], sem[idx], masks[idx])
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {batches} "
                    f"(stage {cfg.stage}, lr {cfg.lr})")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
            batches += 1
        curve.append(total / batches)
    model.eval()
    return curve


def seed_model(model, seed: int) -> None:
    """Reinitialize every parameter from a seeded stream (reproducible)."""
    gen = torch.Generator().manual_seed(seed)
    for module in model.modules():
        if isinstance(module, torch.nn.Conv2d):
            fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            bound = 1.0 / np.sqrt(fan_in)
            with torch.no_grad():
                module.weight.uniform_(-bound, bound, generator=gen)
                if module.bias is not None:
                    module.bias.uniform_(-bound, bound, generator=gen)


def write_loss_csv(path, stage: int, curve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "stage", "loss"])
        for epoch, loss in enumerate(curve, start=1):
            writer.writerow([epoch, stage, format(loss, ".10g")])


# --------------------------------------------------------------------------
# Gradient checking

def grad_check(loss_fn, parameters, epsilon: float = 1e-3) -> float:
    """Max relative error between autograd and central finite differences.

    loss_fn() must be a deterministic scalar function of the given
    parameters. Run modules in float64; with epsilon = 1e-3 the
    finite-difference noise floor sits around 1e-7.
    """
    parameters = list(parameters)
    if not parameters:
        return 0.0
    loss = loss_fn()
    grads = torch.autograd.grad(loss, parameters, allow_unused=True)
    max_rel = 0.0
    with torch.no_grad():
        for param, grad in zip(parameters, grads):
            analytic = torch.zeros_like(param) if grad is None else grad
            flat = param.view(-1)
            for j in range(flat.numel()):
                orig = flat[j].item()
                flat[j] = orig + epsilon
                hi = float(loss_fn())
                flat[j] = orig - epsilon
                lo = float(loss_fn())
                flat[j] = orig
                fd = (hi - lo) / (2.0 * epsilon)
                ga = float(analytic.view(-1)[j])
                denom = max(abs(ga) + abs(fd), 1e-4)
                max_rel = max(max_rel, abs(ga - fd) / denom)
    return max_rel
