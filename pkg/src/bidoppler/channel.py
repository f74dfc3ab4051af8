"""Discrete-time CIR synthesis with clock offsets, noise and irregular timing.

The synthesized CIR of frame ``k`` is::

    h[k, l] = e^{j psi_o(t_k)} sum_m A_m e^{j 2 pi (f_m + f_o(t_k)) t_k} chi(l - l_m - l_o(t_k)) + n[k, l]

where ``f_m`` is the total (target + TX motion) Doppler of path ``m``. The
offset rotation is applied to the whole received CIR, noise included, as the
RX local oscillator does; this keeps the cross-path phase differences
independent of the offset draw for a fixed noise realisation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import geometry as geo
from .errors import ConfigurationError, InsufficientFramesError, UnsupportedLengthError

PEAK_KINDS = ("los", "target", "static", "unknown")


@dataclass
class OffsetProcess:
    """Per-frame CFO, PO and TO draws.

    ``to_mode`` is ``"zero"``, ``"constant"`` (``to_value`` seconds) or
    ``"random_walk"`` (``to_value`` is the per-frame step std in seconds).
    """

    cfo_std: float = 0.0
    to_mode: str = "zero"
    to_value: float = 0.0
    seed: object = None
    enabled: bool = True

    def __post_init__(self):
        if self.cfo_std < 0:
            raise ValueError("cfo_std must be non-negative")
        if self.to_mode not in ("zero", "constant", "random_walk"):
            raise ValueError(f"unknown TO model {self.to_mode!r}")

    def draw(self, t: np.ndarray):
        """Return ``(f_o, psi_o, tau_o)`` arrays for the frame instants ``t``."""
        k = len(t)
        if not self.enabled:
            return np.zeros(k), np.zeros(k), np.zeros(k)
        rng = np.random.default_rng(self.seed)
        f_o = rng.normal(0.0, self.cfo_std, k) if self.cfo_std > 0 else np.zeros(k)
        psi_o = rng.uniform(0.0, 2 * math.pi, k)
        if self.to_mode == "zero":
            tau_o = np.zeros(k)
        elif self.to_mode == "constant":
            tau_o = np.full(k, self.to_value)
        else:
            tau_o = np.cumsum(rng.normal(0.0, self.to_value, k))
        return f_o, psi_o, tau_o

    def aggregate_phase(self, t: np.ndarray) -> np.ndarray:
        """``psi_o + 2 pi f_o t``: the phase common to every path."""
        f_o, psi_o, _ = self.draw(t)
        return psi_o + 2 * math.pi * f_o * np.asarray(t)


@dataclass(frozen=True)
class FrameTiming:
    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or len(t) == 0:
            raise ValueError("timestamps must be a non-empty 1-D sequence")
        if t[0] != 0.0:
            raise ValueError("first timestamp must be 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)

    @classmethod
    def uniform(cls, k: int, period: float) -> "FrameTiming":
        if k < 1 or period <= 0:
            raise ValueError("need k >= 1 and a positive period")
        return cls(np.arange(k) * period)

    @property
    def k(self) -> int:
        return len(self.t)

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def is_uniform(self) -> bool:
        g = self.gaps
        return len(g) == 0 or bool(np.allclose(g, g[0], rtol=1e-9, atol=0))

    def satisfies_bound(self, f_max: float) -> bool:
        """True when every gap is below 1/(6 f_max) (no phase ambiguity)."""
        return bool(np.all(self.gaps <= 1.0 / (6.0 * f_max) * (1 + 1e-9)))


@dataclass(frozen=True)
class PulseShape:
    """Delay-domain pulse: ideal on-grid delta, or Golay correlation."""

    kind: str = "delta"
    bandwidth: float = 1.76e9
    span: int = 256
    golay_length: int = 128
    first_bin: int = 8

    def __post_init__(self):
        if self.kind not in ("delta", "golay"):
            raise ValueError(f"unknown pulse kind {self.kind!r}")
        if self.bandwidth <= 0 or self.span < 1:
            raise ValueError("bandwidth must be positive and span >= 1")

    @property
    def resolution(self) -> float:
        return 1.0 / self.bandwidth


@dataclass
class Peak:
    delay_bin: int
    value: complex
    aod: float = float("nan")
    kind: str = "unknown"
    path: Optional[str] = None

    @property
    def label(self) -> str:
        return self.path if self.path is not None else self.kind


@dataclass
class CirFrame:
    t: float
    samples: Optional[np.ndarray] = None
    peaks: Optional[list] = None

    @property
    def is_dense(self) -> bool:
        return self.samples is not None


@dataclass(frozen=True)
class GolayPair:
    a: np.ndarray
    b: np.ndarray

    @property
    def n(self) -> int:
        return len(self.a)


@dataclass
class Synthesis:
    """Synthesized frames plus the ground truth used to make them."""

    frames: list
    labels: list
    kinds: list
    true_phases: np.ndarray  # noise-free, offset-free phases (paths x K)
    offset_phase: np.ndarray  # psi_o + 2 pi f_o t per frame
    dopplers: np.ndarray
    aods: np.ndarray
    bins: np.ndarray
    timing_ok: bool
    processing_gain: float = 1.0


def golay_pair(n: int) -> GolayPair:
    """Complementary Golay pair of length ``n`` by recursive doubling."""
    if n < 2 or n & (n - 1):
        raise UnsupportedLengthError(f"Golay length must be a power of two >= 2, got {n}")
    a = np.array([1, 1], dtype=np.int64)
    b = np.array([1, -1], dtype=np.int64)
    while len(a) < n:
        a, b = np.concatenate([a, b]), np.concatenate([a, -b])
    return GolayPair(a, b)


def aperiodic_autocorr(x: np.ndarray) -> np.ndarray:
    """Autocorrelation over lags -(N-1)..(N-1); exact for integer input."""
    return np.correlate(x, x, mode="full")


def golay_waveform(taps: np.ndarray, pair: GolayPair) -> np.ndarray:
    """Noise-free received samples for the pilot ``[a, 0*(L-1), b, 0*(L-1)]``.

    ``taps`` is the on-grid channel of length ``L``.
    """
    taps = np.asarray(taps, dtype=complex)
    seg_a = np.convolve(pair.a, taps)
    seg_b = np.convolve(pair.b, taps)
    return np.concatenate([seg_a, seg_b])


def estimate_cir_by_correlation(rx_samples, pair: GolayPair, t: float = 0.0) -> CirFrame:
    """Correlate the two received pilot segments with ``a`` and ``b``.

    The output is normalised by ``2N`` so a noise-free tap of amplitude ``A``
    appears as ``A``. Per-sample noise variance is divided by the processing
    gain ``G = 2N``.
    """
    rx = np.asarray(rx_samples, dtype=complex)
    n = pair.n
    if len(rx) % 2 or len(rx) // 2 < n:
        raise ValueError(f"received length {len(rx)} does not match Golay length {n}")
    seg = len(rx) // 2
    span = seg - n + 1
    ra, rb = rx[:seg], rx[seg:]
    # np.correlate conjugates its second argument; the pilots are real
    ca = np.correlate(ra, pair.a.astype(complex), mode="valid")
    cb = np.correlate(rb, pair.b.astype(complex), mode="valid")
    # 'valid' yields lags 0..span-1 in order
    h = (ca + cb) / (2.0 * n)
    assert len(h) == span
    return CirFrame(t=t, samples=h)


def detect_peaks(frame: CirFrame, threshold_factor: float = 5.0) -> list:
    """Local maxima of ``|h|`` above ``threshold_factor`` x the noise floor.

    The noise floor is the median magnitude of the bins that are not local
    maxima or their neighbours.
    """
    if not frame.is_dense:
        raise ValueError("peak detection needs a dense frame")
    h = np.asarray(frame.samples)
    mag = np.abs(h)
    n = len(mag)
    if n == 0:
        return []
    left = np.concatenate([[-np.inf], mag[:-1]])
    right = np.concatenate([mag[1:], [-np.inf]])
    is_max = (mag > left) & (mag >= right)
    excluded = is_max.copy()
    excluded[:-1] |= is_max[1:]
    excluded[1:] |= is_max[:-1]
    rest = mag[~excluded]
    floor = float(np.median(rest)) if len(rest) else 0.0
    # rounding residue of exact cancellations must not count as a path
    thr = max(threshold_factor * floor, 1e-9 * float(mag.max()))
    idx = np.flatnonzero(is_max & (mag > thr))
    return [Peak(int(i), complex(h[i])) for i in idx]


def measure_aod(true_alpha, sigma_alpha: float, rng=None):
    """Noisy AoD measurement, wrapped to (-pi, pi]."""
    if sigma_alpha < 0:
        raise ValueError("sigma_alpha must be non-negative")
    if sigma_alpha == 0:
        return geo.wrap_pi(true_alpha)
    rng = np.random.default_rng(rng)
    return geo.wrap_pi(np.asarray(true_alpha) + rng.normal(0.0, sigma_alpha, np.shape(true_alpha)))


def drop_frames(frames: Sequence, p: float, seed=None) -> list:
    """Keep frame 0, and every later frame independently with probability 1-p."""
    if not 0 <= p < 1:
        raise ValueError("drop probability must be in [0, 1)")
    frames = list(frames)
    if p == 0 or len(frames) <= 1:
        return frames
    rng = np.random.default_rng(seed)
    keep = rng.random(len(frames)) >= p
    keep[0] = True
    return [f for f, kept in zip(frames, keep) if kept]


def _path_labels(scene: geo.SceneSnapshot):
    labels, kinds, ids = ["los"], ["los"], [geo.LOS]
    labels.append("target")
    kinds.append("target")
    ids.append(scene.target_index)
    for n, i in enumerate(scene.static_indices, start=1):
        labels.append(f"s{n}")
        kinds.append("static")
        ids.append(i)
    return labels, kinds, ids


def synthesize_cir(
    scene: geo.SceneSnapshot,
    amplitudes,
    offsets: OffsetProcess,
    timing: FrameTiming,
    pulse: PulseShape = PulseShape(),
    noise_std: float = 0.0,
    *,
    sigma_alpha: float = 0.0,
    noise_seed=None,
    aod_seed=None,
    dense: bool = False,
    f_max: Optional[float] = None,
    threshold_factor: float = 5.0,
) -> Synthesis:
    """Synthesize a CIR frame sequence for ``scene``.

    ``amplitudes`` are the complex path gains ordered LoS, target, then the
    static scatterers in scene order. ``noise_std`` is the per-sample CIR
    noise std ``sigma_h`` (complex, circularly symmetric). With ``dense``
    False (the default) only the labelled peak values are produced; otherwise
    the full delay grid is built (through Golay correlation when
    ``pulse.kind == "golay"``) and peaks are found with :func:`detect_peaks`.
    """
    labels, kinds, ids = _path_labels(scene)
    amps = np.asarray(amplitudes, dtype=complex)
    if len(amps) != len(ids):
        raise ConfigurationError(f"expected {len(ids)} amplitudes, got {len(amps)}")
    t = timing.t
    k = len(t)

    dopplers = np.array([geo.path_doppler(scene, p) for p in ids])
    alphas = np.array([geo.aod(scene, p) for p in ids])
    delays = np.array([geo.path_delay(scene, p) for p in ids])

    f_o, psi_o, tau_o = offsets.draw(t)
    common = psi_o + 2 * math.pi * f_o * t

    rel_bins = np.rint((delays - delays[0]) * pulse.bandwidth).astype(int) + pulse.first_bin
    to_bins = np.rint(tau_o * pulse.bandwidth).astype(int)
    bins = rel_bins[:, None] + to_bins[None, :]
    if np.any(bins < 0) or np.any(bins >= pulse.span):
        raise ConfigurationError("path delay falls outside the CIR delay grid")

    true_phases = np.angle(amps)[:, None] + 2 * math.pi * dopplers[:, None] * t[None, :]
    clean = amps[:, None] * np.exp(1j * 2 * math.pi * dopplers[:, None] * t[None, :])
    rotation = np.exp(1j * common)

    noise_rng = np.random.default_rng(noise_seed)
    aod_rng = np.random.default_rng(aod_seed)
    meas_aod = np.zeros((len(ids), k))
    meas_aod[1:] = measure_aod(np.repeat(alphas[1:, None], k, axis=1), sigma_alpha, aod_rng)

    timing_ok = True if f_max is None else timing.satisfies_bound(f_max)
    if not timing_ok:
        warnings.warn("frame gaps exceed 1/(6 f_max): phase differences may wrap", stacklevel=2)

    frames = []
    gain = 1.0
    if not dense:
        noise = _complex_noise(noise_rng, noise_std, clean.shape)
        values = (clean + noise) * rotation[None, :]
        for j in range(k):
            peaks = [
                Peak(int(bins[i, j]), complex(values[i, j]), float(meas_aod[i, j]), kinds[i], labels[i])
                for i in range(len(ids))
            ]
            frames.append(CirFrame(t=float(t[j]), peaks=peaks))
    else:
        pair = golay_pair(pulse.golay_length) if pulse.kind == "golay" else None
        if pair is not None:
            gain = 2.0 * pair.n
        for j in range(k):
            taps = np.zeros(pulse.span, dtype=complex)
            np.add.at(taps, bins[:, j], clean[:, j])
            if pair is None:
                h = taps + _complex_noise(noise_rng, noise_std, pulse.span)
            else:
                rx = golay_waveform(taps, pair)
                # per-sample noise sigma_w^2 = G sigma_h^2 before correlation
                rx = rx + _complex_noise(noise_rng, noise_std * math.sqrt(gain), rx.shape)
                h = estimate_cir_by_correlation(rx, pair).samples
            h = h * rotation[j]
            frame = CirFrame(t=float(t[j]), samples=h)
            peaks = detect_peaks(frame, threshold_factor)
            frame.peaks = _label_peaks(peaks, bins[:, j], labels, kinds, meas_aod[:, j])
            frames.append(frame)

    return Synthesis(
        frames=frames,
        labels=labels,
        kinds=kinds,
        true_phases=true_phases,
        offset_phase=common,
        dopplers=dopplers,
        aods=alphas,
        bins=bins,
        timing_ok=timing_ok,
        processing_gain=gain,
    )


def _complex_noise(rng, std, shape):
    if std == 0:
        return np.zeros(shape, dtype=complex)
    return (rng.normal(0.0, std / math.sqrt(2), shape)
            + 1j * rng.normal(0.0, std / math.sqrt(2), shape))


def _label_peaks(peaks, true_bins, labels, kinds, aods):
    """Attach labels to detected peaks that sit exactly on a true path bin."""
    by_bin = {int(b): i for i, b in enumerate(true_bins)}
    out = []
    for p in peaks:
        i = by_bin.get(p.delay_bin)
        if i is None:
            out.append(p)
            continue
        p.kind, p.path, p.aod = kinds[i], labels[i], float(aods[i])
        out.append(p)
    return out


def require_frames(frames, minimum: int = 2):
    if len(frames) < minimum:
        raise InsufficientFramesError(f"need at least {minimum} frames, got {len(frames)}")
