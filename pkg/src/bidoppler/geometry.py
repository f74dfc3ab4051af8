"""2D bistatic scene and ground-truth geometric quantities.

Conventions used everywhere in the package:

* Angles are counter-clockwise positive.
* ``eta`` is the angle from the elongation of the LoS segment (the ray from
  the RX through the TX, continued beyond the TX) to the TX velocity.
* The AoD of a path is the signed angle at the TX from the TX->RX direction
  to the TX->scatterer direction, so the LoS AoD is 0.
* Doppler is ``(1/lambda) d(path length)/dt``: lengthening paths have a
  positive Doppler shift. With these conventions ``cos(xi) == cos(aod - eta)``
  holds for every path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .errors import ConfigurationError, DegenerateGeometryError

TWO_PI = 2.0 * math.pi
LOS = "los"
PathId = Union[int, str]

_EPS_DIST = 1e-12


def wrap_2pi(angle):
    """Wrap to [0, 2pi)."""
    out = np.mod(angle, TWO_PI)
    # np.mod can return exactly 2pi for tiny negative inputs
    out = np.where(out >= TWO_PI, 0.0, out)
    return float(out) if np.ndim(out) == 0 else out


def wrap_pi(angle):
    """Wrap to (-pi, pi]."""
    a = np.asarray(angle, dtype=float)
    out = np.where((a > -math.pi) & (a <= math.pi), a, math.pi - np.mod(math.pi - a, TWO_PI))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class DeviceState:
    position: Point2
    speed: float = 0.0
    heading: float = 0.0

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        object.__setattr__(self, "heading", wrap_2pi(self.heading))

    @property
    def velocity(self) -> np.ndarray:
        return self.speed * np.array([math.cos(self.heading), math.sin(self.heading)])


@dataclass(frozen=True)
class Scatterer:
    position: Point2
    speed: float = 0.0
    heading: float = 0.0
    kind: str = "static"

    def __post_init__(self):
        if self.kind not in ("static", "target"):
            raise ValueError(f"unknown scatterer kind {self.kind!r}")
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if self.kind == "static" and self.speed != 0:
            raise ValueError("static scatterers cannot move")
        object.__setattr__(self, "heading", wrap_2pi(self.heading))

    @property
    def velocity(self) -> np.ndarray:
        return self.speed * np.array([math.cos(self.heading), math.sin(self.heading)])


@dataclass(frozen=True)
class SceneSnapshot:
    tx: DeviceState
    rx_position: Point2
    scatterers: tuple = field(default_factory=tuple)
    carrier_hz: float = 60e9

    def __post_init__(self):
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        if self.carrier_hz <= 0:
            raise ValueError("carrier frequency must be positive")

    @classmethod
    def from_wavelength(cls, tx, rx_position, scatterers, wavelength):
        return cls(tx, rx_position, tuple(scatterers), SPEED_OF_LIGHT / wavelength)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def target_index(self) -> int:
        idx = [i for i, s in enumerate(self.scatterers) if s.kind == "target"]
        if len(idx) != 1:
            raise ConfigurationError(f"expected exactly one target, found {len(idx)}")
        return idx[0]

    @property
    def static_indices(self) -> list:
        return [i for i, s in enumerate(self.scatterers) if s.kind == "static"]


def _unit(vec, what="vector"):
    n = float(np.hypot(vec[0], vec[1]))
    if n < _EPS_DIST:
        raise DegenerateGeometryError(f"coincident points ({what})")
    return vec / n


def _direction(vec) -> float:
    return math.atan2(vec[1], vec[0])


def _scatterer(scene: SceneSnapshot, path: PathId) -> Scatterer:
    if path == LOS:
        raise ValueError("LoS has no scatterer")
    return scene.scatterers[int(path)]


def eta(scene: SceneSnapshot) -> float:
    """Angle between the TX velocity and the LoS elongation, in [0, 2pi)."""
    tx = scene.tx.position.as_array()
    rx = scene.rx_position.as_array()
    elong = _unit(tx - rx, "TX/RX")
    return wrap_2pi(scene.tx.heading - _direction(elong))


def aod(scene: SceneSnapshot, path: PathId) -> float:
    """Signed AoD of ``path`` relative to the TX->RX direction, in (-pi, pi]."""
    tx = scene.tx.position.as_array()
    to_rx = _unit(scene.rx_position.as_array() - tx, "TX/RX")
    if path == LOS:
        return 0.0
    q = _scatterer(scene, path).position.as_array()
    to_q = _unit(q - tx, "TX/scatterer")
    return wrap_pi(_direction(to_q) - _direction(to_rx))


def bistatic_angle_points(tx, rx, q) -> float:
    """Angle TX-q-RX in [0, pi] for raw coordinates."""
    q = np.asarray(q, float)
    a = _unit(np.asarray(tx, float) - q, "scatterer/TX")
    b = _unit(np.asarray(rx, float) - q, "scatterer/RX")
    return float(np.arccos(np.clip(a @ b, -1.0, 1.0)))


def bistatic_angle(scene: SceneSnapshot, index: int) -> float:
    q = _scatterer(scene, index).position
    return bistatic_angle_points(
        scene.tx.position.as_array(), scene.rx_position.as_array(), q.as_array()
    )


def xi(scene: SceneSnapshot, path: PathId) -> float:
    """Angle from the outgoing direction of the TX-side leg to the TX velocity.

    The outgoing direction points from the path's first hop (RX for LoS, the
    scatterer otherwise) through the TX, so ``cos(xi)`` is the rate at which
    the TX lengthens that leg per unit speed.
    """
    tx = scene.tx.position.as_array()
    if path == LOS:
        other = scene.rx_position.as_array()
    else:
        other = _scatterer(scene, path).position.as_array()
    away = _unit(tx - other, "TX leg")
    return wrap_pi(scene.tx.heading - _direction(away))


def tx_motion_doppler(scene: SceneSnapshot, path: PathId) -> float:
    """Doppler on ``path`` caused by TX motion alone [Hz]."""
    if scene.tx.speed == 0:
        return 0.0
    return scene.tx.speed / scene.wavelength * math.cos(xi(scene, path))


def bisector_gamma(scene: SceneSnapshot, index: int) -> float:
    """Angle between the scatterer velocity and the outward bistatic bisector.

    The outward bisector is the sum of the unit vectors TX->q and RX->q; it
    points away from both devices. Returns 0 when the bisector is undefined
    (forward scatter, beta = pi).
    """
    s = _scatterer(scene, index)
    q = s.position.as_array()
    u_tx = _unit(q - scene.tx.position.as_array(), "scatterer/TX")
    u_rx = _unit(q - scene.rx_position.as_array(), "scatterer/RX")
    b = u_tx + u_rx
    if np.hypot(*b) < 1e-12:
        return 0.0
    return wrap_pi(s.heading - _direction(b))


def target_bistatic_doppler(scene: SceneSnapshot, index: int) -> float:
    """Doppler caused by the scatterer's own motion [Hz].

    ``2 v/lambda cos(gamma) cos(beta/2)``: the rate of change of the summed
    TX->q->RX path length. Static scatterers return exactly 0.
    """
    s = _scatterer(scene, index)
    if s.kind == "static" or s.speed == 0:
        return 0.0
    beta = bistatic_angle(scene, index)
    gamma = bisector_gamma(scene, index)
    return 2.0 * s.speed / scene.wavelength * math.cos(gamma) * math.cos(beta / 2.0)


def path_doppler(scene: SceneSnapshot, path: PathId) -> float:
    """Total Doppler of a path: target motion plus TX motion."""
    f = tx_motion_doppler(scene, path)
    if path != LOS:
        f += target_bistatic_doppler(scene, path)
    return f


def path_length(scene: SceneSnapshot, path: PathId, t: float = 0.0) -> float:
    """Propagation length at time ``t`` under constant-velocity motion [m]."""
    tx = scene.tx.position.as_array() + scene.tx.velocity * t
    rx = scene.rx_position.as_array()
    if path == LOS:
        return float(np.hypot(*(rx - tx)))
    s = _scatterer(scene, path)
    q = s.position.as_array() + s.velocity * t
    return float(np.hypot(*(q - tx)) + np.hypot(*(rx - q)))


def numeric_doppler_oracle(scene: SceneSnapshot, path: PathId, dt: float = 1e-7) -> float:
    """Central finite difference of the path length, divided by lambda [Hz]."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    dl = path_length(scene, path, dt) - path_length(scene, path, -dt)
    return dl / (2.0 * dt) / scene.wavelength


def path_delay(scene: SceneSnapshot, path: PathId) -> float:
    """Propagation delay [s]."""
    return path_length(scene, path) / SPEED_OF_LIGHT


def scene_to_dict(scene: SceneSnapshot) -> dict:
    return {
        "tx": {
            "x": scene.tx.position.x,
            "y": scene.tx.position.y,
            "speed": scene.tx.speed,
            "heading": scene.tx.heading,
        },
        "rx": {"x": scene.rx_position.x, "y": scene.rx_position.y},
        "scatterers": [
            {
                "x": s.position.x,
                "y": s.position.y,
                "speed": s.speed,
                "heading": s.heading,
                "kind": s.kind,
            }
            for s in scene.scatterers
        ],
        "carrier_hz": scene.carrier_hz,
    }


def scene_from_dict(doc: dict) -> SceneSnapshot:
    try:
        tx = doc["tx"]
        rx = doc["rx"]
        scatterers = [
            Scatterer(
                Point2(float(s["x"]), float(s["y"])),
                float(s.get("speed", 0.0)),
                float(s.get("heading", 0.0)),
                s.get("kind", "static"),
            )
            for s in doc.get("scatterers", [])
        ]
        return SceneSnapshot(
            DeviceState(
                Point2(float(tx["x"]), float(tx["y"])),
                float(tx.get("speed", 0.0)),
                float(tx.get("heading", 0.0)),
            ),
            Point2(float(rx["x"]), float(rx["y"])),
            tuple(scatterers),
            float(doc["carrier_hz"]),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"invalid scene document: {exc}") from exc


def load_scene(path) -> SceneSnapshot:
    return scene_from_dict(json.loads(Path(path).read_text()))


def save_scene(scene: SceneSnapshot, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2))


def path_ids(scene: SceneSnapshot) -> list:
    """LoS, target, then statics in scene order."""
    return [LOS, scene.target_index, *scene.static_indices]


def aods(scene: SceneSnapshot, paths: Sequence[PathId]) -> np.ndarray:
    return np.array([aod(scene, p) for p in paths])
