"""Evaluation metrics: MSE, image similarity (IS), and dynamic MSE.

IS compares thresholded occupancy-class maps by mean minimum Manhattan
distance between same-class cells, summed symmetrically over the three
classes; identical maps score 0 and lower is better. Distances come
from a multi-source breadth-first transform (4-connected BFS equals
Manhattan distance on an unobstructed grid).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .grid import DEFAULT_THRESHOLDS, EOGM, OGM, classify, pignistic

HORIZON = 15


def mse(pred: OGM, gt: OGM) -> float:
    if pred.p.shape != gt.p.shape:
        raise ValueError("shape mismatch")
    return float(np.mean((pred.p - gt.p) ** 2))


def dynamic_mse(pred: OGM, gt: OGM, mask: np.ndarray):
    """MSE over mask-true cells; (0.0, 0) when the mask is empty."""
    if pred.p.shape != gt.p.shape or pred.p.shape != mask.shape:
        raise ValueError("shape mismatch")
    count = int(np.count_nonzero(mask))
    if count == 0:
        return 0.0, 0
    sel = mask.astype(bool)
    return float(np.mean((pred.p[sel] - gt.p[sel]) ** 2)), count


def manhattan_distance_field(sources: np.ndarray) -> np.ndarray:
    """Distance of every cell to the nearest True source cell.

    Multi-source BFS expanded level by level with array shifts;
    4-connectivity makes the result the exact Manhattan distance.
    Cells are inf when there are no sources.
    """
    dist = np.full(sources.shape, np.inf)
    frontier = sources.astype(bool)
    dist[frontier] = 0.0
    level = 0.0
    while frontier.any():
        level += 1.0
        grown = np.zeros_like(frontier)
        grown[1:, :] |= frontier[:-1, :]
        grown[:-1, :] |= frontier[1:, :]
        grown[:, 1:] |= frontier[:, :-1]
        grown[:, :-1] |= frontier[:, 1:]
        frontier = grown & np.isinf(dist)
        dist[frontier] = level
    return dist


def class_map_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric IS between two occupancy-class maps (lower is better)."""
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    h, w = a.shape
    absent_penalty = float(w + h)
    total = 0.0
    for cls in np.union1d(np.unique(a), np.unique(b)):
        in_a = a == cls
        in_b = b == cls
        if not in_a.any() and not in_b.any():
            continue
        if not in_a.any() or not in_b.any():
            total += absent_penalty
            continue
        total += float(np.mean(manhattan_distance_field(in_b)[in_a]))
        total += float(np.mean(manhattan_distance_field(in_a)[in_b]))
    return total


def image_similarity(pred: OGM, gt: OGM, thresholds=DEFAULT_THRESHOLDS) -> float:
    return class_map_similarity(classify(pred.p, thresholds),
                                classify(gt.p, thresholds))


# --------------------------------------------------------------------------
# Aggregate evaluation

@dataclass
class MetricReport:
    """Per-timestep and horizon-mean metrics for one (model, dataset)."""

    model: str
    dataset: str
    frame_period: float
    mse: np.ndarray       # (H,) pooled over cells across sequences
    mse_se: np.ndarray
    is_score: np.ndarray  # (H,) mean over sequences
    is_se: np.ndarray
    dyn_mse: np.ndarray   # (H,) pooled over masked cells
    dyn_mse_se: np.ndarray
    dyn_cells: np.ndarray  # (H,) masked-cell counts
    horizon: dict = field(default_factory=dict)

    def timestep_rows(self):
        for t in range(len(self.mse)):
            yield {
                "model": self.model,
                "scenario": self.dataset,
                "timestep_s": round((t + 1) * self.frame_period, 3),
                "mse": self.mse[t],
                "mse_se": self.mse_se[t],
                "is": self.is_score[t],
                "is_se": self.is_se[t],
                "dyn_mse": self.dyn_mse[t],
                "dyn_mse_se": self.dyn_mse_se[t],
                "dyn_cells": int(self.dyn_cells[t]),
            }

    def summary_row(self):
        row = {"model": self.model, "scenario": self.dataset}
        row.update(self.horizon)
        return row


def _pooled_stats(sq_errors: list) -> tuple[float, float]:
    pooled = np.concatenate(sq_errors) if sq_errors else np.zeros(0)
    if pooled.size == 0:
        return 0.0, 0.0
    return float(pooled.mean()), float(pooled.std(ddof=0) / np.sqrt(pooled.size))


def evaluate(predict_fn, dataset, indices, model_tag="model", dataset_tag="dataset",
             thresholds=DEFAULT_THRESHOLDS, t_in=5, horizon=HORIZON) -> MetricReport:
    """Run rollout over every indexed sequence and aggregate the metrics.

    predict_fn(sample) must return predicted belief masses shaped
    (horizon, 2, h, w) for frames t_in .. t_in+horizon-1. MSE and
    dynamic-MSE standard errors pool cells across sequences; IS standard
    error is over sequences.
    """
    if not indices:
        raise ValueError("empty evaluation split")
    cfg = dataset.config
    sq = [[] for _ in range(horizon)]
    dyn_sq = [[] for _ in range(horizon)]
    is_vals = [[] for _ in range(horizon)]
    for idx in indices:
        seq = dataset.sequences[idx]
        pred = np.asarray(predict_fn(seq), dtype=np.float64)
        if pred.shape != (horizon, 2, cfg.height, cfg.width):
            raise ValueError(f"bad prediction shape {pred.shape}")
        for t in range(horizon):
            frame = t_in + t
            gt = pignistic(seq.eogm(frame, cfg))
            p = pignistic(EOGM(cfg, pred[t, 0], pred[t, 1]))
            diff2 = (p.p - gt.p) ** 2
            sq[t].append(diff2.ravel())
            mask = seq.masks[frame].astype(bool)
            if mask.any():
                dyn_sq[t].append(diff2[mask].ravel())
            is_vals[t].append(class_map_similarity(
                classify(p.p, thresholds), classify(gt.p, thresholds)))

    mse_t, mse_se, dyn_t, dyn_se = (np.zeros(horizon) for _ in range(4))
    is_t, is_se, dyn_cells = (np.zeros(horizon) for _ in range(3))
    for t in range(horizon):
        mse_t[t], mse_se[t] = _pooled_stats(sq[t])
        dyn_t[t], dyn_se[t] = _pooled_stats(dyn_sq[t])
        dyn_cells[t] = sum(arr.size for arr in dyn_sq[t])
        vals = np.asarray(is_vals[t])
        is_t[t] = vals.mean()
        is_se[t] = vals.std(ddof=0) / np.sqrt(vals.size) if vals.size > 1 else 0.0

    all_sq = [np.concatenate(sq[t]) for t in range(horizon) if sq[t]]
    all_dyn = [np.concatenate(dyn_sq[t]) for t in range(horizon) if dyn_sq[t]]
    h_mse, h_mse_se = _pooled_stats(all_sq)
    h_dyn, h_dyn_se = _pooled_stats(all_dyn)
    all_is = np.asarray([v for t in range(horizon) for v in is_vals[t]])
    horizon_means = {
        "mse": h_mse, "mse_se": h_mse_se,
        "is": float(all_is.mean()),
        "is_se": float(all_is.std(ddof=0) / np.sqrt(all_is.size)),
        "dyn_mse": h_dyn, "dyn_mse_se": h_dyn_se,
    }
    return MetricReport(model_tag, dataset_tag, dataset.sequences[indices[0]].frame_period,
                        mse_t, mse_se, is_t, is_se, dyn_t, dyn_se, dyn_cells,
                        horizon_means)


TIMESTEP_COLUMNS = ["model", "scenario", "timestep_s", "mse", "mse_se",
                    "is", "is_se", "dyn_mse", "dyn_mse_se", "dyn_cells"]
SUMMARY_COLUMNS = ["model", "scenario", "mse", "mse_se", "is", "is_se",
                   "dyn_mse", "dyn_mse_se"]


def write_timestep_csv(path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TIMESTEP_COLUMNS)
        writer.writeheader()
        for report in reports:
            for row in report.timestep_rows():
                writer.writerow({k: _fmt(v) for k, v in row.items()})


def write_summary_csv(path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        for report in reports:
            writer.writerow({k: _fmt(v) for k, v in report.summary_row().items()})


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".10g")
    return v
