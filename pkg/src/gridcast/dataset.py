"""Sequence generation and the on-disk dataset format.

A sequence is 20 aligned frames of (eOGM, SMGM, dynamic mask) sampled
at 0.1 s, i.e. 2 s of world evolution. Datasets round-trip bit-exactly
through a little-endian binary format (magic "EOGM").
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .grid import (
    DEFAULT_SENSOR_MASSES,
    EOGM,
    SMGM,
    GridConfig,
    LabelTable,
    LabelVariant,
    rasterize_scan,
)
from .sensor import SensorConfig, sense
from .world import SCENARIOS, build_world, dynamic_mask, step_world

FRAMES_PER_SEQUENCE = 20
FRAME_PERIOD = 0.1  # seconds

MAGIC = b"EOGM"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    """Parsed scenario JSON; drives world construction and sensing."""

    scenario: str = "multi_vehicle_straight"
    grid: GridConfig = field(default_factory=GridConfig)
    variant: str = "four"
    beam_count: int = 720
    max_range: float | None = None  # None: grid half extent
    span_deg: float = 360.0
    p_label_noise: float = 0.0
    m_hit: float = DEFAULT_SENSOR_MASSES[0]
    m_free: float = DEFAULT_SENSOR_MASSES[1]
    n_agents: int | None = None
    ego_speed: float | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if isinstance(self.variant, str):
            names = [v.name.lower() for v in LabelVariant]
            if self.variant.lower() not in names:
                raise ValueError(f"unknown label variant {self.variant!r} "
                                 f"(expected one of {names})")

    @classmethod
    def from_json(cls, doc: dict) -> "ScenarioConfig":
        grid = doc.get("grid", {})
        sensor = doc.get("sensor", {})
        noise = doc.get("noise", {})
        masses = doc.get("masses", {})
        return cls(
            scenario=doc.get("scenario", "multi_vehicle_straight"),
            grid=GridConfig(
                width=int(grid.get("width", 128)),
                height=int(grid.get("height", 128)),
                resolution=float(grid.get("resolution", 0.33)),
            ),
            variant=doc.get("variant", "four"),
            beam_count=int(sensor.get("beams", 720)),
            max_range=sensor.get("max_range"),
            span_deg=float(sensor.get("span_deg", 360.0)),
            p_label_noise=float(noise.get("p_label", 0.0)),
            m_hit=float(masses.get("hit", DEFAULT_SENSOR_MASSES[0])),
            m_free=float(masses.get("free", DEFAULT_SENSOR_MASSES[1])),
            n_agents=doc.get("n_agents"),
            ego_speed=doc.get("ego_speed"),
        )

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def table(self) -> LabelTable:
        return LabelTable.for_variant(self.variant)

    def sensor(self) -> SensorConfig:
        max_range = self.max_range
        if max_range is None:
            max_range = min(self.grid.width, self.grid.height) * self.grid.resolution / 2.0
        return SensorConfig(self.beam_count, float(max_range),
                            np.deg2rad(self.span_deg), self.p_label_noise)


@dataclass
class SequenceSample:
    """20 aligned frames: belief masses, labels, and dynamic masks."""

    m_occ: np.ndarray   # (20, h, w) float32
    m_emp: np.ndarray   # (20, h, w) float32
    labels: np.ndarray  # (20, h, w) uint8
    masks: np.ndarray   # (20, h, w) uint8 (0/1)
    frame_period: float = FRAME_PERIOD

    def __post_init__(self):
        if self.m_occ.shape[0] != FRAMES_PER_SEQUENCE:
            raise ValueError("a sequence holds exactly 20 frames")

    def eogm(self, t: int, cfg: GridConfig) -> EOGM:
        return EOGM(cfg, self.m_occ[t], self.m_emp[t])

    def smgm(self, t: int, cfg: GridConfig, table: LabelTable) -> SMGM:
        return SMGM(cfg, self.labels[t], table)


@dataclass
class Dataset:
    config: GridConfig
    table: LabelTable
    seed: int
    sequences: list

    def __len__(self) -> int:
        return len(self.sequences)

    # -- binary IO ---------------------------------------------------------

    def write(self, path) -> None:
        cfg, table = self.config, self.table
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<H", FORMAT_VERSION))
            fh.write(struct.pack("<IIf", cfg.width, cfg.height, cfg.resolution))
            fh.write(struct.pack("<BB", int(table.variant), len(table)))
            for label_id, name in enumerate(table.names):
                raw = name.encode("utf-8")
                fh.write(struct.pack("<BB", label_id, len(raw)))
                fh.write(raw)
            fh.write(struct.pack("<q", self.seed))
            fh.write(struct.pack("<I", len(self.sequences)))
            for seq in self.sequences:
                for t in range(FRAMES_PER_SEQUENCE):
                    fh.write(seq.m_occ[t].astype("<f4").tobytes())
                    fh.write(seq.m_emp[t].astype("<f4").tobytes())
                    fh.write(seq.labels[t].astype(np.uint8).tobytes())
                    fh.write(seq.masks[t].astype(np.uint8).tobytes())

    @classmethod
    def read(cls, path) -> "Dataset":
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise DatasetFormatError(f"cannot read dataset {path}: {exc}") from exc
        try:
            return cls._parse(data)
        except (struct.error, ValueError, IndexError) as exc:
            raise DatasetFormatError(f"corrupt dataset {path}: {exc}") from exc

    @classmethod
    def _parse(cls, data: bytes) -> "Dataset":
        if data[:4] != MAGIC:
            raise DatasetFormatError("bad magic")
        off = 4
        (version,) = struct.unpack_from("<H", data, off); off += 2
        if version != FORMAT_VERSION:
            raise DatasetFormatError(f"unsupported version {version}")
        w, h, res = struct.unpack_from("<IIf", data, off); off += 12
        cfg = GridConfig(w, h, res)
        variant, count = struct.unpack_from("<BB", data, off); off += 2
        names = []
        for _ in range(count):
            label_id, nlen = struct.unpack_from("<BB", data, off); off += 2
            names.append(data[off:off + nlen].decode("utf-8")); off += nlen
            if label_id != len(names) - 1:
                raise DatasetFormatError("label ids must be consecutive")
        table = LabelTable(LabelVariant(variant), tuple(names))
        (seed,) = struct.unpack_from("<q", data, off); off += 8
        (n_seq,) = struct.unpack_from("<I", data, off); off += 4
        cells = w * h
        sequences = []
        for _ in range(n_seq):
            m_occ = np.empty((FRAMES_PER_SEQUENCE, h, w), dtype=np.float32)
            m_emp = np.empty_like(m_occ)
            labels = np.empty((FRAMES_PER_SEQUENCE, h, w), dtype=np.uint8)
            masks = np.empty_like(labels)
            for t in range(FRAMES_PER_SEQUENCE):
                m_occ[t] = np.frombuffer(data, "<f4", cells, off).reshape(h, w); off += 4 * cells
                m_emp[t] = np.frombuffer(data, "<f4", cells, off).reshape(h, w); off += 4 * cells
                labels[t] = np.frombuffer(data, np.uint8, cells, off).reshape(h, w); off += cells
                masks[t] = np.frombuffer(data, np.uint8, cells, off).reshape(h, w); off += cells
            sequences.append(SequenceSample(m_occ, m_emp, labels, masks))
        if off != len(data):
            raise DatasetFormatError("trailing bytes")
        return cls(cfg, table, seed, sequences)


def generate_sequence(scn: ScenarioConfig, seed: int, index: int) -> SequenceSample:
    """One 20-frame sequence; deterministic in (scn, seed, index)."""
    cfg, table, sensor = scn.grid, scn.table(), scn.sensor()
    world_seed = int(np.random.default_rng([seed, index, 0]).integers(2**31))
    noise_rng = np.random.default_rng([seed, index, 1])
    world = build_world(scn.scenario, cfg, world_seed,
                        n_agents=scn.n_agents, ego_speed=scn.ego_speed)
    shape = (FRAMES_PER_SEQUENCE, cfg.height, cfg.width)
    m_occ = np.empty(shape, dtype=np.float32)
    m_emp = np.empty(shape, dtype=np.float32)
    labels = np.empty(shape, dtype=np.uint8)
    masks = np.empty(shape, dtype=np.uint8)
    for t in range(FRAMES_PER_SEQUENCE):
        hits = sense(world, sensor, table, rng=noise_rng)
        eogm, smgm = rasterize_scan(hits, cfg, table, (scn.m_hit, scn.m_free))
        m_occ[t], m_emp[t] = eogm.m_occ, eogm.m_emp
        labels[t] = smgm.labels
        masks[t] = dynamic_mask(world, cfg).astype(np.uint8)
        world = step_world(world, FRAME_PERIOD)
    return SequenceSample(m_occ, m_emp, labels, masks)


def generate_dataset(scn: ScenarioConfig, n_sequences: int, seed: int) -> Dataset:
    """n independent sequences; bit-identical for identical (scn, seed)."""
    if n_sequences < 1:
        raise ValueError("n_sequences must be >= 1")
    sequences = [generate_sequence(scn, seed, i) for i in range(n_sequences)]
    return Dataset(scn.grid, scn.table(), seed, sequences)


def split_indices(n: int, seed: int, ratios=(0.7, 0.15, 0.15)):
    """Deterministic seeded shuffle into train/val/test index lists."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    order = np.random.default_rng([seed, 0x5917]).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    return (order[:n_train].tolist(),
            order[n_train:n_train + n_val].tolist(),
            order[n_train + n_val:].tolist())
