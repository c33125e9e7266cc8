import math

import numpy as np
import pytest

from gridcast.grid import GridConfig, LabelTable
from gridcast.sensor import ScanHit, SensorConfig, beam_bearings, sense
from gridcast.world import AgentState, Box, Polyline, World

TABLE = LabelTable.for_variant("six")


def ego(**kw):
    base = dict(cls="vehicle", x=0.0, y=0.0, heading=0.0, speed=0.0)
    base.update(kw)
    return AgentState(**base)


def march_first_hit(world, bearing, max_range, step=0.002):
    """Fine-grained ray-marching oracle: walk until inside any obstacle."""
    d = np.array([math.cos(bearing), math.sin(bearing)])
    shapes = []
    for a in world.agents:
        c, s = math.cos(a.heading), math.sin(a.heading)
        shapes.append(("agent", a, c, s))
    for r in np.arange(step, max_range, step):
        p = d * r + np.array([world.ego.x, world.ego.y])
        for box in world.boxes:
            if box.xmin <= p[0] <= box.xmax and box.ymin <= p[1] <= box.ymax:
                return r, box.cls
        for kind, a, c, s in shapes:
            dx, dy = p[0] - a.x, p[1] - a.y
            u, v = dx * c + dy * s, -dx * s + dy * c
            if abs(u) <= a.length / 2 and abs(v) <= a.width / 2:
                return r, a.cls
    return None, None


class TestSense:
    def test_empty_world_all_misses(self):
        w = World(ego(), ())
        hits = sense(w, SensorConfig(32, 10.0), TABLE)
        assert len(hits) == 32
        assert all(not h.is_return and h.range == 10.0 for h in hits)

    def test_box_ahead_matches_analytic_intersection(self):
        # Analytic ray/AABB oracle via the slab method.
        box = Box("building", 4.0, -2.0, 6.0, 2.0)
        w = World(ego(), (), (box,))
        sensor = SensorConfig(360, 15.0)
        hits = sense(w, sensor, TABLE)
        got_return = False
        for h in hits:
            d = np.array([math.cos(h.bearing), math.sin(h.bearing)])
            ts = []
            for t in np.concatenate([
                    (np.array([box.xmin, box.xmax])) / d[0] if d[0] != 0 else [],
                    (np.array([box.ymin, box.ymax])) / d[1] if d[1] != 0 else []]):
                if t > 0:
                    p = d * t
                    if (box.xmin - 1e-9 <= p[0] <= box.xmax + 1e-9
                            and box.ymin - 1e-9 <= p[1] <= box.ymax + 1e-9):
                        ts.append(t)
            expected = min(ts) if ts else None
            if expected is not None and expected <= 15.0:
                assert h.is_return
                assert h.range == pytest.approx(expected, abs=1e-9)
                assert h.label == TABLE.id_for("building")
                got_return = True
            else:
                assert not h.is_return
        assert got_return

    def test_occluded_agent_returns_nothing(self):
        # Vehicle fully hidden behind a wide building.
        building = Box("building", 3.0, -4.0, 4.0, 4.0)
        hidden = AgentState("vehicle", 8.0, 0.0, 0.0, 5.0, length=3.0, width=1.5)
        w = World(ego(), (hidden,), (building,))
        hits = sense(w, SensorConfig(720, 20.0), TABLE)
        assert all(h.label != TABLE.id_for("vehicle") for h in hits if h.is_return)

    def test_matches_ray_marching_oracle(self):
        w = World(
            ego(),
            (AgentState("pedestrian", -2.0, 3.0, 0.4, 1.0, length=0.6, width=0.6),),
            (Box("building", 2.0, 2.0, 5.0, 5.0),),
            (Polyline("road", ((-6.0, -3.0), (6.0, -3.0))),),
        )
        sensor = SensorConfig(48, 12.0)
        hits = sense(w, sensor, TABLE)
        for h in hits:
            r, cls = march_first_hit(w, h.bearing, 12.0)
            if r is None:
                # polyline has zero thickness; marching cannot see it
                if h.is_return:
                    assert h.label == TABLE.id_for("road")
                continue
            assert h.is_return
            assert h.range == pytest.approx(r, abs=5e-3)
            assert h.label == TABLE.id_for(cls)

    def test_occlusion_monotonicity(self):
        # No return may lie beyond the marching oracle's first obstacle.
        w = World(ego(), (), (Box("building", 3.0, -1.0, 4.0, 1.0),
                              Box("vegetation", 6.0, -2.0, 8.0, 2.0)))
        for h in sense(w, SensorConfig(90, 15.0), TABLE):
            r, _ = march_first_hit(w, h.bearing, 15.0)
            if r is not None:
                assert h.is_return and h.range <= r + 5e-3

    def test_label_noise_flips_with_rng(self):
        box = Box("building", 2.0, -5.0, 3.0, 5.0)
        w = World(ego(), (), (box,))
        sensor = SensorConfig(256, 10.0, 2 * math.pi, p_label_noise=1.0)
        rng = np.random.default_rng(0)
        hits = sense(w, sensor, TABLE, rng=rng)
        labels = {h.label for h in hits if h.is_return}
        assert len(labels) > 1  # noise produced several classes

    def test_label_noise_requires_rng(self):
        w = World(ego(), ())
        with pytest.raises(ValueError):
            sense(w, SensorConfig(8, 5.0, 2 * math.pi, p_label_noise=0.5), TABLE)

    def test_bearing_layout(self):
        bearings = beam_bearings(SensorConfig(4, 5.0))
        assert np.allclose(bearings, [-math.pi, -math.pi / 2, 0.0, math.pi / 2])
        with pytest.raises(ValueError):
            beam_bearings(SensorConfig(0, 5.0))

    def test_ego_frame_translation(self):
        # Moving the ego shifts hits by the opposite amount.
        box = Box("building", 4.0, -1.0, 6.0, 1.0)
        near = sense(World(ego(x=1.0), (), (box,)), SensorConfig(1, 10.0, 1e-9), TABLE)
        far = sense(World(ego(x=0.0), (), (box,)), SensorConfig(1, 10.0, 1e-9), TABLE)
        assert near[0].range == pytest.approx(far[0].range - 1.0)


class TestScanHit:
    def test_fields(self):
        h = ScanHit(0.1, 2.0, 3)
        assert h.is_return
        assert h.label == 3
