import math

import numpy as np
import pytest

from bidoppler import channel
from bidoppler import geometry as geo


def make_scene(tx_speed=2.0, tx_heading=1.0, target_speed=3.0, n_static=2, carrier_hz=60e9):
    statics = [geo.Point2(2, -4), geo.Point2(6, 6), geo.Point2(-3, 3), geo.Point2(1, 7)][:n_static]
    scatterers = [geo.Scatterer(geo.Point2(4, 5), target_speed, 2.0, "target")]
    scatterers += [geo.Scatterer(p) for p in statics]
    return geo.SceneSnapshot(
        geo.DeviceState(geo.Point2(0, 0), tx_speed, tx_heading),
        geo.Point2(8, 1),
        tuple(scatterers),
        carrier_hz,
    )


def amplitudes(n_static=2):
    return [1.0, 0.3j, 0.5, -0.4, 0.35 + 0.1j, 0.2j][: n_static + 2]


def random_scene(rng, n_static=2, side=20.0):
    """Random scene with all points at least 0.5 m apart."""
    while True:
        pts = rng.uniform(0, side, (n_static + 3, 2))
        d = np.hypot(*(pts[:, None] - pts[None, :]).transpose(2, 0, 1))
        if d[np.triu_indices(len(pts), 1)].min() > 0.5:
            break
    tx = geo.DeviceState(geo.Point2(*pts[0]), rng.uniform(0.5, 5), rng.uniform(0, 2 * math.pi))
    target = geo.Scatterer(geo.Point2(*pts[2]), rng.uniform(0.1, 5), rng.uniform(0, 2 * math.pi), "target")
    statics = [geo.Scatterer(geo.Point2(*p)) for p in pts[3:]]
    return geo.SceneSnapshot(tx, geo.Point2(*pts[1]), (target, *statics))


@pytest.fixture
def scene():
    return make_scene()


@pytest.fixture
def uniform_timing():
    return channel.FrameTiming.uniform(64, 1 / 6000)
