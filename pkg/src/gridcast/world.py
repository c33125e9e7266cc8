"""Deterministic 2-D synthetic world with class-typed moving agents.

World evolution is a pure function of (World, dt): agents follow a
unicycle model and agents that leave the bounds are respawned from a
seeded stream keyed by (rng_seed, spawn_count). Emitted grids are
ego-centric: the ego sits at the grid center and the frame axes stay
world-aligned, so ego motion appears as pure translation of the scene.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .grid import GridConfig

# Distinct per-class speed ranges (m/s) make class identity informative
# at the 0.1 s frame period; applied when (re)spawning agents.
CLASS_SPEED_RANGES = {
    "vehicle": (3.0, 14.0),
    "cyclist": (1.5, 6.0),
    "pedestrian": (0.5, 2.0),
}

# Footprints (length, width) in meters.
CLASS_FOOTPRINTS = {
    "vehicle": (4.5, 2.0),
    "cyclist": (1.8, 0.6),
    "pedestrian": (0.5, 0.5),
}

V_STATIC = 0.1  # m/s; slower agents count as static for dynamic masks


@dataclass(frozen=True)
class AgentState:
    cls: str
    x: float
    y: float
    heading: float
    speed: float
    turn_rate: float = 0.0
    length: float = 4.5
    width: float = 2.0

    def corners(self) -> np.ndarray:
        """Footprint rectangle corners in world frame, (4, 2)."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])


@dataclass(frozen=True)
class Box:
    """Axis-aligned static obstacle."""
    cls: str
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def segments(self) -> np.ndarray:
        p = [(self.xmin, self.ymin), (self.xmax, self.ymin),
             (self.xmax, self.ymax), (self.xmin, self.ymax)]
        return np.array([[p[i], p[(i + 1) % 4]] for i in range(4)])


@dataclass(frozen=True)
class Polyline:
    """Open static obstacle chain (road edge, wall, curb)."""
    cls: str
    points: tuple

    def segments(self) -> np.ndarray:
        pts = np.asarray(self.points, dtype=np.float64)
        return np.stack([pts[:-1], pts[1:]], axis=1)


@dataclass(frozen=True)
class World:
    ego: AgentState
    agents: tuple
    boxes: tuple = ()
    polylines: tuple = ()
    bounds: tuple = (-25.0, -25.0, 25.0, 25.0)  # xmin, ymin, xmax, ymax
    rng_seed: int = 0
    spawn_count: int = 0


def _advance(a: AgentState, dt: float) -> AgentState:
    heading = a.heading + a.turn_rate * dt
    return replace(
        a,
        heading=heading,
        x=a.x + a.speed * dt * math.cos(heading),
        y=a.y + a.speed * dt * math.sin(heading),
    )


def _respawn(cls: str, footprint, rng: np.random.Generator, bounds) -> AgentState:
    xmin, ymin, xmax, ymax = bounds
    edge = int(rng.integers(4))
    t = float(rng.uniform(0.1, 0.9))
    if edge == 0:    # left edge, heading roughly +x
        x, y, inward = xmin, ymin + t * (ymax - ymin), 0.0
    elif edge == 1:  # right edge
        x, y, inward = xmax, ymin + t * (ymax - ymin), math.pi
    elif edge == 2:  # bottom edge
        x, y, inward = xmin + t * (xmax - xmin), ymin, math.pi / 2
    else:            # top edge
        x, y, inward = xmin + t * (xmax - xmin), ymax, -math.pi / 2
    heading = inward + float(rng.uniform(-math.pi / 4, math.pi / 4))
    lo, hi = CLASS_SPEED_RANGES.get(cls, (0.5, 2.0))
    return AgentState(cls, x, y, heading, float(rng.uniform(lo, hi)),
                      0.0, footprint[0], footprint[1])


def _out_of_bounds(a: AgentState, bounds) -> bool:
    xmin, ymin, xmax, ymax = bounds
    return not (xmin <= a.x <= xmax and ymin <= a.y <= ymax)


def step_world(w: World, dt: float) -> World:
    """Advance every agent (and the ego) one unicycle step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    spawn_count = w.spawn_count
    agents = []
    for a in w.agents:
        nxt = _advance(a, dt)
        if _out_of_bounds(nxt, w.bounds):
            rng = np.random.default_rng([w.rng_seed, spawn_count])
            spawn_count += 1
            nxt = _respawn(a.cls, (a.length, a.width), rng, w.bounds)
        agents.append(nxt)
    return replace(w, ego=_advance(w.ego, dt), agents=tuple(agents),
                   spawn_count=spawn_count)


def dynamic_mask(w: World, cfg: GridConfig, v_static: float = V_STATIC) -> np.ndarray:
    """Boolean grid marking cells covered by moving agents' footprints.

    A cell counts as covered when its center lies inside the footprint
    rectangle (ego-centric frame). The ego itself is never marked.
    """
    mask = np.zeros(cfg.shape, dtype=bool)
    res = cfg.resolution
    # Cell-center coordinates in the ego frame.
    cols = (np.arange(cfg.width) + 0.5 - cfg.width / 2.0) * res
    rows = (np.arange(cfg.height) + 0.5 - cfg.height / 2.0) * res
    cx, cy = np.meshgrid(cols, rows)
    for a in w.agents:
        if a.speed <= v_static:
            continue
        dx = cx - (a.x - w.ego.x)
        dy = cy - (a.y - w.ego.y)
        c, s = math.cos(a.heading), math.sin(a.heading)
        u = dx * c + dy * s
        v = -dx * s + dy * c
        mask |= (np.abs(u) <= a.length / 2.0) & (np.abs(v) <= a.width / 2.0)
    return mask


# --------------------------------------------------------------------------
# Scenario library

SCENARIOS = (
    "static_clutter",
    "straight_crossing",
    "multi_vehicle_straight",
    "turning_at_intersection",
    "appearing_vehicle",
)


def build_world(scenario: str, cfg: GridConfig, seed: int,
                n_agents: int | None = None,
                ego_speed: float | None = None) -> World:
    """Construct the initial world for a named scenario.

    The seed jitters placements/speeds (per-sequence variety) and also
    keys the respawn stream, so identical arguments give an identical
    world trajectory.
    """
    rng = np.random.default_rng([seed, 0xC0FFEE])
    extent = min(cfg.width, cfg.height) * cfg.resolution / 2.0
    e = extent  # half-size of the visible region, meters
    bounds = (-2.2 * e, -2.2 * e, 2.2 * e, 2.2 * e)
    respawn_seed = int(rng.integers(2**31))

    def vehicle(x, y, heading, speed, turn_rate=0.0):
        L, W = CLASS_FOOTPRINTS["vehicle"]
        # Scale footprints down on very small grids so agents stay a few cells.
        scale = min(1.0, e / 10.0)
        return AgentState("vehicle", x, y, heading, speed, turn_rate,
                          max(L * scale, 2 * cfg.resolution),
                          max(W * scale, cfg.resolution))

    ego = AgentState("vehicle", 0.0, 0.0, 0.0,
                     ego_speed if ego_speed is not None else 0.0)
    jit = lambda s: float(rng.uniform(-s, s))

    if scenario == "static_clutter":
        boxes = tuple(
            Box("building",
                x - 0.15 * e, y - 0.1 * e, x + 0.15 * e, y + 0.1 * e)
            for x, y in ((0.6 * e + jit(0.1 * e), 0.5 * e + jit(0.1 * e)),
                         (-0.6 * e + jit(0.1 * e), 0.5 * e),
                         (0.5 * e, -0.6 * e + jit(0.1 * e))))
        lines = (Polyline("road", ((-e, -0.25 * e), (e, -0.25 * e))),)
        return World(ego, (), boxes, lines, bounds, respawn_seed)

    if scenario == "straight_crossing":
        speed = 3.3 + jit(0.5)
        agent = vehicle(0.5 * e + jit(0.1 * e), -0.9 * e, math.pi / 2, speed)
        boxes = (Box("building", -0.9 * e, 0.55 * e, -0.3 * e, 0.95 * e),)
        return World(ego, (agent,), boxes, (), bounds, respawn_seed)

    if scenario == "multi_vehicle_straight":
        n = n_agents if n_agents is not None else 3
        agents = []
        for i in range(n):
            lane = (-0.5 + 0.45 * i) * e + jit(0.05 * e)
            x0 = -0.9 * e + jit(0.2 * e)
            agents.append(vehicle(x0, lane, 0.0, 3.3 + jit(0.8)))
        boxes = (Box("building", -0.9 * e, 0.7 * e, -0.2 * e, 0.95 * e),
                 Box("building", 0.3 * e, -0.95 * e, 0.9 * e, -0.7 * e))
        ego2 = replace(ego, speed=ego_speed if ego_speed is not None else 1.0)
        return World(ego2, tuple(agents), boxes, (), bounds, respawn_seed)

    if scenario == "turning_at_intersection":
        speed = 3.0 + jit(0.4)
        # Quarter turn over the 2 s sequence.
        agent = vehicle(0.7 * e, -0.4 * e + jit(0.05 * e), math.pi / 2,
                        speed, turn_rate=-math.pi / 4)
        boxes = (Box("building", 0.45 * e, 0.45 * e, 0.95 * e, 0.95 * e),
                 Box("building", -0.95 * e, -0.95 * e, -0.45 * e, -0.45 * e))
        return World(ego, (agent,), boxes, (), bounds, respawn_seed)

    if scenario == "appearing_vehicle":
        # Vehicle starts occluded behind the building and emerges mid-sequence.
        boxes = (Box("building", 0.25 * e, 0.25 * e, 0.55 * e, 0.8 * e),)
        agent = vehicle(0.4 * e + jit(0.02 * e), 1.1 * e, -math.pi / 2,
                        3.3 + jit(0.3))
        return World(ego, (agent,), boxes, (), bounds, respawn_seed)

    raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
