"""Ray-casting range-bearing sensor over the synthetic world.

All obstacle geometry (agent footprints, boxes, polylines) is reduced
to 2-D segments; each beam returns the nearest intersection, so
occlusion falls out of the min over candidate hits. Bearings and hits
are expressed in the ego frame (world-aligned axes centered on the ego).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridConfig, LabelTable
from .world import World


@dataclass(frozen=True)
class ScanHit:
    bearing: float
    range: float
    label: int
    is_return: bool = True


@dataclass(frozen=True)
class SensorConfig:
    beam_count: int = 720
    max_range: float = 21.0
    span: float = 2.0 * math.pi
    p_label_noise: float = 0.0

    @classmethod
    def for_grid(cls, cfg: GridConfig, beam_count: int = 720,
                 p_label_noise: float = 0.0) -> "SensorConfig":
        # Fill the grid like an ego-centered square region: half-extent reach.
        return cls(beam_count, min(cfg.width, cfg.height) * cfg.resolution / 2.0,
                   2.0 * math.pi, p_label_noise)


def world_segments(w: World):
    """All obstacle segments in the ego frame with their class names."""
    segs, names = [], []
    for a in w.agents:
        c = a.corners()
        for i in range(4):
            segs.append((c[i], c[(i + 1) % 4]))
            names.append(a.cls)
    for obs in list(w.boxes) + list(w.polylines):
        for s in obs.segments():
            segs.append((s[0], s[1]))
            names.append(obs.cls)
    if not segs:
        return np.zeros((0, 2, 2)), []
    arr = np.asarray(segs, dtype=np.float64)
    arr -= np.array([w.ego.x, w.ego.y])
    return arr, names


def beam_bearings(sensor: SensorConfig) -> np.ndarray:
    n = sensor.beam_count
    if n < 1:
        raise ValueError("beam_count must be >= 1")
    if abs(sensor.span - 2.0 * math.pi) < 1e-12:
        return -math.pi + np.arange(n) * (2.0 * math.pi / n)
    return np.linspace(-sensor.span / 2.0, sensor.span / 2.0, n)


def sense(w: World, sensor: SensorConfig, table: LabelTable,
          rng: np.random.Generator | None = None) -> list[ScanHit]:
    """Cast all beams; nearest segment intersection wins per beam.

    With p_label_noise > 0 each return's label is flipped to a uniform
    random table label with that probability (rng required).
    """
    bearings = beam_bearings(sensor)
    dirs = np.stack([np.cos(bearings), np.sin(bearings)], axis=1)  # (n, 2)
    segs, names = world_segments(w)

    n = len(bearings)
    ranges = np.full(n, sensor.max_range)
    seg_idx = np.full(n, -1, dtype=np.int64)
    if len(segs):
        a = segs[:, 0]                      # (m, 2) segment starts
        s = segs[:, 1] - segs[:, 0]         # (m, 2) segment vectors
        denom = dirs[:, 0:1] * s[:, 1] - dirs[:, 1:2] * s[:, 0]   # (n, m)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (a[:, 0] * s[:, 1] - a[:, 1] * s[:, 0]) / denom   # (n, m)
            u = (a[:, 0] * dirs[:, 1:2] - a[:, 1] * dirs[:, 0:1]) / denom
        valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= 0.0) & (u <= 1.0)
        t = np.where(valid, t, np.inf)
        nearest = np.argmin(t, axis=1)
        tmin = t[np.arange(n), nearest]
        returned = tmin <= sensor.max_range
        ranges[returned] = tmin[returned]
        seg_idx[returned] = nearest[returned]

    if sensor.p_label_noise > 0.0 and rng is None:
        raise ValueError("label noise requires an rng")

    hits = []
    for i in range(n):
        if seg_idx[i] < 0:
            hits.append(ScanHit(float(bearings[i]), float(sensor.max_range), 0, False))
            continue
        label = table.id_for(names[seg_idx[i]])
        if sensor.p_label_noise > 0.0 and rng.random() < sensor.p_label_noise:
            label = int(rng.integers(len(table)))
        hits.append(ScanHit(float(bearings[i]), float(ranges[i]), label, True))
    return hits
