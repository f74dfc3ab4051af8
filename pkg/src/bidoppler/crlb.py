"""Phase-noise propagation, Fisher information and Doppler CRLB for two statics.

Per-path phase noise is ``sigma_w^2 / (2 G |A_i|^2)``; the LoS-referenced
normalised difference of path ``i`` over a gap ``T_k`` has variance
``sigma_w^2 kappa_i / (4 pi^2 G T_k^2)`` with ``kappa_i = |A_i|^-2 + |A_LoS|^-2``.

Two closed forms are kept side by side:

* ``"printed"`` evaluates the reference closed-form expressions term by
  term, keeping their inconsistent ``T_k`` powers, the first-power
  half-angle sines in the bound denominator, and the reference ``zeta``
  expansion.
* ``"derived"`` is the re-derived exact inverse, which agrees with the
  numerical FIM oracle.

:func:`conformance_report` quantifies the gap between the two.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InfiniteVarianceError
from .estimator import ParamVector, g_model

FORMS = ("printed", "derived")
DEGENERACY_TOL = 1e-9


@dataclass(frozen=True)
class NoiseModel:
    """Noise level, processing gain and path magnitudes.

    ``amplitudes`` are ``|A_t|, |A_1|, ..., |A_S|`` (target first).
    """

    sigma_w_sq: float
    gain: float
    amp_los: float
    amplitudes: tuple

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        if self.sigma_w_sq <= 0:
            raise ValueError("sigma_w_sq must be positive")
        if self.gain < 1:
            raise ValueError("processing gain must be >= 1")

    @property
    def sigma_h_sq(self) -> float:
        return self.sigma_w_sq / self.gain

    @property
    def kappas(self) -> np.ndarray:
        if self.amp_los == 0 or any(a == 0 for a in self.amplitudes):
            raise InfiniteVarianceError("zero path amplitude")
        return np.array([a ** -2 for a in self.amplitudes]) + self.amp_los ** -2

    def relative_phase_variance(self) -> np.ndarray:
        """Variance of each path's phase after LoS subtraction."""
        return self.sigma_h_sq / 2 * self.kappas

    def difference_variance(self, gaps) -> np.ndarray:
        """``sigma^2_{i,k}`` for every entry ``i`` and gap ``T_k``: shape (S+1, K-1)."""
        gaps = np.atleast_1d(np.asarray(gaps, float))
        return self.sigma_w_sq * self.kappas[:, None] / (4 * math.pi ** 2 * self.gain * gaps[None, :] ** 2)

    def covariance(self, gap: float) -> np.ndarray:
        return np.diag(self.difference_variance([gap])[:, 0])


def phase_noise_variance(noise: NoiseModel, path) -> float:
    """Linearised phase-noise variance of one path; ``path`` is ``"los"`` or an entry index."""
    amp = noise.amp_los if path == "los" else noise.amplitudes[int(path)]
    if amp == 0:
        raise InfiniteVarianceError("zero amplitude gives unbounded phase noise")
    return noise.sigma_w_sq / (2 * noise.gain * amp ** 2)


@dataclass(frozen=True)
class FimPoint:
    theta: ParamVector
    alphas: tuple  # alpha_t, alpha_1, alpha_2
    noise: NoiseModel
    gap: float
    wavelength: float

    @property
    def rho(self) -> np.ndarray:
        a = np.asarray(self.alphas, float)
        return np.sin(a - self.theta.eta) + math.sin(self.theta.eta)

    @property
    def gamma(self) -> np.ndarray:
        a = np.asarray(self.alphas, float)
        return np.cos(a - self.theta.eta) - math.cos(self.theta.eta)


def fim(point: FimPoint, mode: str = "printed") -> np.ndarray:
    """FIM from the closed-form entries.

    ``mode="printed"`` uses ``T_k`` to the first power in the heading and
    speed entries as in the reference expressions; ``mode="consistent"`` uses ``T_k^2``
    throughout.
    """
    if mode not in ("printed", "consistent"):
        raise ValueError(f"unknown FIM mode {mode!r}")
    n = point.noise
    kap = n.kappas[:3]
    lam, v = point.wavelength, point.theta.v_tx
    rho, gam = point.rho, point.gamma
    base2 = 4 * math.pi ** 2 * n.gain * point.gap ** 2 / n.sigma_w_sq
    base_heading = base2 if mode == "consistent" else 4 * math.pi ** 2 * n.gain * point.gap / n.sigma_w_sq
    j = np.empty((3, 3))
    j[0, 0] = base2 / kap[0]
    j[0, 1] = base2 * v / lam / kap[0] * rho[0]
    j[0, 2] = base2 / lam / kap[0] * gam[0]
    j[1, 1] = base_heading * v ** 2 / lam ** 2 * np.sum(rho ** 2 / kap)
    j[1, 2] = base_heading * v / lam ** 2 * np.sum(rho * gam / kap)
    j[2, 2] = base_heading / lam ** 2 * np.sum(gam ** 2 / kap)
    j[1, 0], j[2, 0], j[2, 1] = j[0, 1], j[0, 2], j[1, 2]
    return j


def fim_numeric_oracle(point: FimPoint, step: float = 1e-3) -> np.ndarray:
    """``Jac^T C^-1 Jac`` with the model Jacobian from Richardson-extrapolated
    central differences (steps ``h`` and ``h/2``)."""
    th = point.theta.as_array()
    scales = np.array([max(abs(th[0]), 1.0), 1.0, max(abs(th[2]), 1.0)])

    def central(c, h):
        up, down = th.copy(), th.copy()
        up[c] += h
        down[c] -= h
        return (g_model(up, point.alphas, point.wavelength)
                - g_model(down, point.alphas, point.wavelength)) / (2 * h)

    jac = np.empty((3, 3))
    for c in range(3):
        h = step * scales[c]
        jac[:, c] = (4 * central(c, h / 2) - central(c, h)) / 3
    cinv = np.diag(1.0 / np.diag(point.noise.covariance(point.gap))[:3])
    return jac.T @ cinv @ jac


def fim_multi(point: FimPoint, gaps: Sequence[float]) -> np.ndarray:
    """Sum of per-frame FIMs over independent frames (additivity extension)."""
    total = np.zeros((3, 3))
    for gap in gaps:
        p = FimPoint(point.theta, point.alphas, point.noise, float(gap), point.wavelength)
        total += fim_numeric_oracle(p)
    return total


def _half_sines(alphas):
    _, a1, a2 = alphas
    return math.sin(a1 / 2), math.sin((a1 - a2) / 2), math.sin(a2 / 2)


def degeneracy(alphas, tol: float = DEGENERACY_TOL) -> str:
    """Reason tag when the static AoDs make the bound diverge, else ``""``."""
    s1, s12, s2 = _half_sines(alphas)
    if abs(s1) < tol or abs(s2) < tol:
        return "static_aod_on_los"
    if abs(s12) < tol:
        return "coincident_static_aods"
    return ""


def zeta(alphas, kappas, form: str = "printed") -> float:
    """The angle/amplitude factor in the Doppler bound numerator.

    ``kappas`` are ``kappa_t, kappa_1, kappa_2``.
    """
    at, a1, a2 = (float(a) for a in alphas)
    kt, k1, k2 = (float(k) for k in kappas)
    cos = math.cos
    if form == "printed":
        return (
            3 * (k1 + k2 + kt)
            - (k2 + kt) * (2 * cos(a1) + cos(2 * a1))
            + 2 * kt * (cos(a1 - 2 * a2) + cos(a1 - a2))
            - kt * cos(2 * (a1 - a2))
            + 2 * kt * cos(2 * a1 - a2)
            - (2 * k1 + kt) * (2 * cos(a2) * cos(2 * a2))
            + 2 * kt * cos(a1 + a2)
            - 2 * k2 * cos(a1 - 2 * at)
            + 2 * k1 * cos(a2 - 2 * at)
            - 2 * k2 * cos(a1 - at)
            - k2 * cos(2 * (a1 - at))
            + 2 * k2 * cos(2 * a1 - at)
            + 2 * k1 * cos(2 * a2 - at)
            - (2 * k1 + 2 * k2) * cos(at)
            - (k1 + k2) * cos(2 * at)
            + 2 * k2 * cos(a1 + at)
            + 2 * k1 * cos(a2 + at)
        )
    if form == "derived":
        return (
            3 * (k1 + k2 + kt)
            - (k2 + kt) * (2 * cos(a1) + cos(2 * a1))
            - (k1 + kt) * (2 * cos(a2) + cos(2 * a2))
            - (k1 + k2) * (2 * cos(at) + cos(2 * at))
            + 2 * kt * (cos(a1 - 2 * a2) - cos(a1 - a2) + cos(a1 + a2) + cos(2 * a1 - a2))
            - kt * cos(2 * (a1 - a2))
            + k2 * (2 * cos(a1 - 2 * at) - 2 * cos(a1 - at) + 2 * cos(a1 + at)
                    - cos(2 * (a1 - at)) + 2 * cos(2 * a1 - at))
            + k1 * (2 * cos(a2 - 2 * at) - 2 * cos(a2 - at) + 2 * cos(a2 + at)
                    - cos(2 * (a2 - at)) + 2 * cos(2 * a2 - at))
        )
    raise ValueError(f"unknown form {form!r}")


def _denominator(alphas, form):
    s1, s12, s2 = _half_sines(alphas)
    prod = s1 * s12 * s2
    return prod if form == "printed" else prod ** 2


def crlb_exact(alphas, noise: NoiseModel, gap: float, form: str = "derived") -> float:
    """Single-frame bound on the target Doppler variance [Hz^2].

    Degenerate static AoDs give ``+inf`` (see :func:`degeneracy`). The
    printed form can be negative, since its denominator is not squared.
    """
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}")
    if degeneracy(alphas):
        return math.inf
    z = zeta(alphas, noise.kappas[:3], form)
    scale = noise.sigma_w_sq / (128 * math.pi ** 2 * noise.gain * gap ** 2)
    return scale * z / _denominator(alphas, form)


def crlb_upper(alphas, noise: NoiseModel, gap: float, form: str = "derived") -> float:
    """Bound obtained from ``zeta < 18 sum(kappa)``."""
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}")
    if degeneracy(alphas):
        return math.inf
    total = float(np.sum(noise.kappas[:3]))
    scale = 9 * noise.sigma_w_sq * total / (64 * math.pi ** 2 * noise.gain * gap ** 2)
    return scale / _denominator(alphas, form)


def crlb_from_oracle(point: FimPoint) -> float:
    return float(np.linalg.inv(fim_numeric_oracle(point))[0, 0])


def crlb_from_fim_difference_route(alphas, noise: NoiseModel, gap: float) -> float:
    """Bound via the three-path determinant identity, independent of ``zeta``.

    With ``D_ab = sin a - sin b - sin(a - b)`` the inverse element equals
    ``(k1 D2t^2 + k2 D1t^2 + kt D12^2) / D12^2`` scaled by the noise factor.
    """
    at, a1, a2 = alphas
    kt, k1, k2 = noise.kappas[:3]

    def d(a, b):
        return math.sin(a) - math.sin(b) - math.sin(a - b)

    d12 = d(a1, a2)
    if abs(d12) < DEGENERACY_TOL:
        return math.inf
    num = k1 * d(a2, at) ** 2 + k2 * d(a1, at) ** 2 + kt * d12 ** 2
    return noise.sigma_w_sq * num / (4 * math.pi ** 2 * noise.gain * gap ** 2 * d12 ** 2)


@dataclass
class ConformanceReport:
    """Relative deviation of each printed quantity from the oracle."""

    fim_entry_error: dict
    consistent_fim_error: float
    zeta_error: float
    crlb_printed_error: float
    crlb_derived_error: float
    notes: list

    def lines(self) -> list:
        out = [f"FIM {k}: printed vs oracle rel. error {v:.3e}" for k, v in self.fim_entry_error.items()]
        out.append(f"FIM with T_k^2 throughout: max rel. error {self.consistent_fim_error:.3e}")
        out.append(f"zeta printed vs derived rel. error {self.zeta_error:.3e}")
        out.append(f"printed bound vs oracle rel. error {self.crlb_printed_error:.3e}")
        out.append(f"derived bound vs oracle rel. error {self.crlb_derived_error:.3e}")
        out.extend(self.notes)
        return out


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def conformance_report(point: FimPoint) -> ConformanceReport:
    oracle = fim_numeric_oracle(point)
    printed = fim(point, "printed")
    consistent = fim(point, "consistent")
    names = {(0, 0): "J11", (0, 1): "J12", (0, 2): "J13", (1, 1): "J22", (1, 2): "J23", (2, 2): "J33"}
    entry = {name: _rel(printed[ij], oracle[ij]) for ij, name in names.items()}
    cons = max(_rel(consistent[ij], oracle[ij]) for ij in names)
    truth = crlb_from_oracle(point)
    kap = point.noise.kappas[:3]
    z_p, z_d = zeta(point.alphas, kap, "printed"), zeta(point.alphas, kap, "derived")
    notes = []
    bad = [n for n, e in entry.items() if e > 1e-6]
    if bad:
        notes.append("printed entries off the oracle: " + ", ".join(bad)
                     + f" (ratio printed/oracle = 1/T_k = {1 / point.gap:.6g})")
    return ConformanceReport(
        fim_entry_error=entry,
        consistent_fim_error=cons,
        zeta_error=_rel(z_p, z_d),
        crlb_printed_error=_rel(crlb_exact(point.alphas, point.noise, point.gap, "printed"), truth),
        crlb_derived_error=_rel(crlb_exact(point.alphas, point.noise, point.gap, "derived"), truth),
        notes=notes,
    )


def crlb_grid(alpha_t: float, noise: NoiseModel, gap: float, n: int = 121, form: str = "derived"):
    """Evaluate the bound over a grid of static AoDs in [0, 2pi]."""
    grid = np.linspace(0.0, 2 * math.pi, n)
    rows = []
    for a1 in grid:
        for a2 in grid:
            alphas = (alpha_t, float(a1), float(a2))
            tag = degeneracy(alphas)
            exact = crlb_exact(alphas, noise, gap, form)
            upper = crlb_upper(alphas, noise, gap, form)
            rows.append({
                "alpha1": float(a1),
                "alpha2": float(a2),
                "crlb_sqrt_hz": math.sqrt(abs(exact)),
                "upper_sqrt_hz": math.sqrt(abs(upper)),
                "degenerate": tag,
            })
    return rows


def write_grid_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["alpha1", "alpha2", "crlb_sqrt_hz", "upper_sqrt_hz", "degenerate"])
        w.writeheader()
        w.writerows(rows)


def heatmap_noise(sigma_w_sq: float = 1e-2, gain: float = 10.0) -> NoiseModel:
    """Amplitude set of the reference heat map: |A_t|=0.05, |A_1|=|A_2|=0.2, |A_LoS|=0.1."""
    return NoiseModel(sigma_w_sq, gain, 0.1, (0.05, 0.2, 0.2))


HEATMAP_ALPHA_T = 5 * math.pi / 3
HEATMAP_GAP = 0.25e-3
