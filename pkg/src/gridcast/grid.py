"""Evidential and semantic grid maps.

Cells carry Dempster-Shafer belief masses over the binary frame
{occupied, empty}; the residual mass is assigned to the unknown
hypothesis {occupied, empty}. Grids are ego-centric with the sensor
at the grid center.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

CONFLICT_EPS = 1e-9

# Default inverse-sensor evidence masses: occupied mass at the hit cell,
# empty mass along the traversed ray.
DEFAULT_SENSOR_MASSES = (0.7, 0.6)

# Default band mapping occupancy probability to the three occupancy classes.
DEFAULT_THRESHOLDS = (0.4, 0.6)


class TotalConflictError(ValueError):
    """Raised when two mass assignments are fully contradictory (K >= 1)."""


@dataclass(frozen=True)
class BeliefMass:
    """Mass assignment over {occupied, empty}; the rest is unknown."""

    m_occ: float
    m_emp: float

    def __post_init__(self):
        if not (0.0 <= self.m_occ <= 1.0 and 0.0 <= self.m_emp <= 1.0):
            raise ValueError(f"masses must lie in [0,1]: {self}")
        if self.m_occ + self.m_emp > 1.0 + 1e-12:
            raise ValueError(f"m_occ + m_emp must not exceed 1: {self}")

    @property
    def m_unk(self) -> float:
        return 1.0 - self.m_occ - self.m_emp


VACUOUS = BeliefMass(0.0, 0.0)


@dataclass(frozen=True)
class GridConfig:
    width: int = 128
    height: int = 128
    resolution: float = 0.33  # meters per cell

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.resolution <= 0:
            raise ValueError(f"invalid grid config: {self}")

    @property
    def shape(self) -> tuple[int, int]:
        # numpy order: (rows, cols) == (height, width)
        return (self.height, self.width)

    @property
    def center_cell(self) -> tuple[int, int]:
        return (self.height // 2, self.width // 2)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """Cell (row, col) containing ego-frame point (x, y) in meters."""
        col = int(np.floor(x / self.resolution + self.width / 2.0))
        row = int(np.floor(y / self.resolution + self.height / 2.0))
        return (row, col)

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width


def dst_fuse_arrays(mo1, me1, mo2, me2):
    """Dempster's rule of combination over {O, E}, elementwise.

    Returns (m_occ, m_emp) arrays. Raises TotalConflictError if any
    pair is fully conflicting.
    """
    mo1, me1 = np.asarray(mo1, dtype=np.float64), np.asarray(me1, dtype=np.float64)
    mo2, me2 = np.asarray(mo2, dtype=np.float64), np.asarray(me2, dtype=np.float64)
    mu1 = 1.0 - mo1 - me1
    mu2 = 1.0 - mo2 - me2
    conflict = mo1 * me2 + me1 * mo2
    if np.any(conflict >= 1.0 - CONFLICT_EPS):
        raise TotalConflictError("contradictory certain evidence (conflict ~ 1)")
    norm = 1.0 - conflict
    mo = (mo1 * mo2 + mo1 * mu2 + mu1 * mo2) / norm
    me = (me1 * me2 + me1 * mu2 + mu1 * me2) / norm
    return mo, me


def dst_fuse(prior: BeliefMass, evidence: BeliefMass) -> BeliefMass:
    """Fuse two belief masses with Dempster's rule."""
    mo, me = dst_fuse_arrays(prior.m_occ, prior.m_emp, evidence.m_occ, evidence.m_emp)
    return BeliefMass(float(np.clip(mo, 0.0, 1.0)), float(np.clip(me, 0.0, 1.0)))


@dataclass
class EOGM:
    """Two-channel evidential occupancy grid (m_occ, m_emp per cell)."""

    config: GridConfig
    m_occ: np.ndarray
    m_emp: np.ndarray

    @classmethod
    def vacuous(cls, config: GridConfig) -> "EOGM":
        return cls(
            config,
            np.zeros(config.shape, dtype=np.float32),
            np.zeros(config.shape, dtype=np.float32),
        )

    def validate(self) -> None:
        for name, m in (("m_occ", self.m_occ), ("m_emp", self.m_emp)):
            if m.shape != self.config.shape:
                raise ValueError(f"{name} shape {m.shape} != {self.config.shape}")
        if np.any(self.m_occ < 0) or np.any(self.m_emp < 0):
            raise ValueError("negative belief mass")
        if np.any(self.m_occ + self.m_emp > 1.0 + 1e-6):
            raise ValueError("m_occ + m_emp exceeds 1")


@dataclass
class OGM:
    """Occupancy-probability grid, p(O) per cell."""

    config: GridConfig
    p: np.ndarray


def pignistic(e: EOGM) -> OGM:
    """Convert belief masses to occupancy probability.

    p(O) = 0.5 * (1 - m_emp) + 0.5 * m_occ; total ignorance maps to 0.5.
    """
    p = 0.5 * (1.0 - e.m_emp) + 0.5 * e.m_occ
    return OGM(e.config, p.astype(np.float64))


class OccClass(enum.IntEnum):
    EMPTY = 0
    UNKNOWN = 1
    OCCUPIED = 2


def classify(p, thresholds=DEFAULT_THRESHOLDS):
    """Threshold occupancy probability into {EMPTY, UNKNOWN, OCCUPIED}.

    Boundaries are exclusive: p == t_emp or p == t_occ maps to UNKNOWN.
    Accepts a scalar (returns OccClass) or an array (returns int array).
    """
    t_emp, t_occ = thresholds
    if not (0.0 <= t_emp < t_occ <= 1.0):
        raise ValueError(f"invalid thresholds: {thresholds}")
    arr = np.asarray(p)
    out = np.full(arr.shape, int(OccClass.UNKNOWN), dtype=np.int8)
    out[arr < t_emp] = int(OccClass.EMPTY)
    out[arr > t_occ] = int(OccClass.OCCUPIED)
    if out.ndim == 0:
        return OccClass(int(out))
    return out


# --------------------------------------------------------------------------
# Label taxonomy

class LabelVariant(enum.IntEnum):
    FULL = 0
    SIX = 1
    FOUR = 2
    BINARY = 3


_VARIANT_CLASSES = {
    LabelVariant.FULL: [
        "others", "car", "other_vehicle", "bicyclist", "pedestrian",
        "traffic_object", "building", "vegetation", "road",
        "undrivable_surface", "ego_vehicle",
    ],
    LabelVariant.SIX: ["others", "vehicle", "cyclist", "pedestrian", "building", "road"],
    LabelVariant.FOUR: ["others", "vehicle", "cyclist", "pedestrian"],
    LabelVariant.BINARY: ["others", "vehicle"],
}

# Canonical simulator class names -> the closest name in each variant.
_CANONICAL_ALIASES = {
    LabelVariant.FULL: {"vehicle": "car", "cyclist": "bicyclist"},
    LabelVariant.SIX: {"car": "vehicle", "other_vehicle": "vehicle", "bicyclist": "cyclist"},
    LabelVariant.FOUR: {"car": "vehicle", "other_vehicle": "vehicle", "bicyclist": "cyclist"},
    LabelVariant.BINARY: {"car": "vehicle", "other_vehicle": "vehicle"},
}

MOVABLE_CLASSES = frozenset(
    {"vehicle", "car", "other_vehicle", "cyclist", "bicyclist", "pedestrian", "ego_vehicle"}
)


@dataclass(frozen=True)
class LabelTable:
    """Ordered class taxonomy for a semantic grid map; id 0 is `others`."""

    variant: LabelVariant
    names: tuple[str, ...] = field(default=None)

    def __post_init__(self):
        if self.names is None:
            object.__setattr__(self, "names", tuple(_VARIANT_CLASSES[self.variant]))
        if self.names[0] != "others":
            raise ValueError("label id 0 must be `others`")

    @classmethod
    def for_variant(cls, variant) -> "LabelTable":
        if isinstance(variant, str):
            variant = LabelVariant[variant.upper()]
        return cls(variant)

    def __len__(self) -> int:
        return len(self.names)

    def id_for(self, canonical_name: str) -> int:
        """Label id for a canonical simulator class; unknown names map to 0."""
        name = _CANONICAL_ALIASES[self.variant].get(canonical_name, canonical_name)
        try:
            return self.names.index(name)
        except ValueError:
            return 0

    def is_movable(self, label_id: int) -> bool:
        return self.names[label_id] in MOVABLE_CLASSES


@dataclass
class SMGM:
    """Semantic grid map: a label id per cell plus its taxonomy."""

    config: GridConfig
    labels: np.ndarray  # uint8, (height, width)
    table: LabelTable

    @classmethod
    def blank(cls, config: GridConfig, table: LabelTable) -> "SMGM":
        return cls(config, np.zeros(config.shape, dtype=np.uint8), table)

    def validate(self) -> None:
        if self.labels.shape != self.config.shape:
            raise ValueError("label grid shape mismatch")
        if np.any(self.labels >= len(self.table)):
            raise ValueError("label id outside table")


# --------------------------------------------------------------------------
# Measurement rasterization

def bresenham(r0: int, c0: int, r1: int, c1: int) -> list[tuple[int, int]]:
    """Integer line trace from (r0, c0) to (r1, c1), inclusive."""
    cells = []
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dc - dr
    r, c = r0, c0
    while True:
        cells.append((r, c))
        if r == r1 and c == c1:
            break
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr
    return cells


def _trace_beam(cfg: GridConfig, hit):
    """Cells traversed by one beam: (free_cells, hit_cell_or_None).

    Misses carry range == max_range, so hit.range is always the reach.
    """
    x = hit.range * np.cos(hit.bearing)
    y = hit.range * np.sin(hit.bearing)
    end = cfg.cell_of(x, y)
    r0, c0 = cfg.center_cell
    cells = bresenham(r0, c0, end[0], end[1])
    # A ray from the center leaves the grid at most once; clip there.
    inside = []
    for cell in cells:
        if not cfg.in_bounds(*cell):
            break
        inside.append(cell)
    if not inside:
        return [], None
    if hit.is_return and cfg.in_bounds(*end) and inside[-1] == end:
        return inside[:-1], end
    return inside, None


def rasterize_scan(hits, cfg: GridConfig, table: LabelTable,
                   sensor_masses=DEFAULT_SENSOR_MASSES):
    """Build per-frame (EOGM, SMGM) from one range-bearing scan.

    Cells traversed before a return accumulate empty evidence, the hit
    cell accumulates occupied evidence and the hit's label; evidence in
    a cell is fused with Dempster's rule. Beams without a return mark
    free cells out to max range (encoded by the hit's range).
    """
    m_hit, m_free = sensor_masses
    if not (0.0 < m_hit <= 1.0 and 0.0 < m_free <= 1.0):
        raise ValueError(f"sensor masses must lie in (0, 1]: {sensor_masses}")

    n_free = np.zeros(cfg.shape, dtype=np.int32)
    n_hit = np.zeros(cfg.shape, dtype=np.int32)
    smgm = SMGM.blank(cfg, table)
    for hit in hits:
        free_cells, hit_cell = _trace_beam(cfg, hit)
        for r, c in free_cells:
            n_free[r, c] += 1
        if hit_cell is not None:
            n_hit[hit_cell] += 1
            smgm.labels[hit_cell] = hit.label  # last beam wins

    # Dempster's rule is associative and commutative, so per-cell evidence
    # aggregates by count: k same-type fusions leave 1 - (1 - m)^k. Saturate
    # just below 1 so a cell with both hit and free evidence keeps a
    # renormalizable (K < 1) combination.
    saturation = 1.0 - 1e-6
    agg_emp = np.minimum(1.0 - (1.0 - m_free) ** n_free, saturation)
    agg_occ = np.minimum(1.0 - (1.0 - m_hit) ** n_hit, saturation)
    mo, me = dst_fuse_arrays(agg_occ, np.zeros_like(agg_occ), np.zeros_like(agg_emp), agg_emp)
    eogm = EOGM(cfg, mo.astype(np.float32), me.astype(np.float32))
    return eogm, smgm


# --------------------------------------------------------------------------
# PGM export

def ogm_to_pgm(ogm: OGM) -> bytes:
    """Binary PGM (P5, maxval 255) of p(O) scaled by 255."""
    data = np.clip(np.rint(ogm.p * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{ogm.config.width} {ogm.config.height}\n255\n".encode("ascii")
    return header + data.tobytes()


def smgm_to_pgm(s: SMGM) -> bytes:
    """Binary PGM of label ids scaled to the full gray range."""
    max_id = max(len(s.table) - 1, 1)
    data = (s.labels.astype(np.float64) * (255.0 / max_id)).round().astype(np.uint8)
    header = f"P5\n{s.config.width} {s.config.height}\n255\n".encode("ascii")
    return header + data.tobytes()
