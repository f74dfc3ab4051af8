"""DFT Doppler baseline for static devices.

Mixing the target peak with the conjugate LoS peak removes the offsets;
the Doppler is then the location of the DFT magnitude peak inside
``[-f_max, f_max]``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .channel import FrameTiming
from .errors import InsufficientFramesError, UnsupportedTimingError


@dataclass
class DopplerSpectrum:
    freqs: np.ndarray
    magnitudes: np.ndarray
    resolution: float
    peak_hz: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["freq_hz", "magnitude"])
            for f, m in zip(self.freqs, self.magnitudes):
                w.writerow([f"{f:.10g}", f"{m:.10g}"])


def conj_los_mix(target_peaks, los_peaks) -> np.ndarray:
    """``target * conj(los)`` per frame; frames with a zero LoS become NaN."""
    tgt = np.asarray(target_peaks, complex)
    los = np.asarray(los_peaks, complex)
    if tgt.shape != los.shape:
        raise ValueError("target and LoS sequences differ in length")
    out = tgt * np.conj(los)
    zero = los == 0
    if np.any(zero):
        warnings.warn(f"{int(zero.sum())} frame(s) with zero LoS skipped", stacklevel=2)
        out = out.astype(complex)
        out[zero] = np.nan
    return out


def doppler_dft(sequence, timing: FrameTiming, zero_pad_factor: int = 8,
                f_max: float | None = None) -> DopplerSpectrum:
    """Rectangular-window DFT of a uniformly sampled sequence.

    The search is limited to ``|f| <= f_max`` when given. Frames marked NaN
    by :func:`conj_los_mix` are zeroed.
    """
    x = np.asarray(sequence, complex)
    if len(x) < 2:
        raise InsufficientFramesError("the DFT baseline needs at least 2 frames")
    if len(x) != timing.k:
        raise ValueError("sequence and timing differ in length")
    if not timing.is_uniform:
        raise UnsupportedTimingError("the DFT baseline needs uniform frame timing")
    if zero_pad_factor < 1:
        raise ValueError("zero_pad_factor must be >= 1")
    period = float(timing.gaps[0])
    x = np.where(np.isnan(x), 0, x)
    n = len(x) * int(zero_pad_factor)
    spec = np.fft.fftshift(np.fft.fft(x, n))
    freqs = np.fft.fftshift(np.fft.fftfreq(n, period))
    mags = np.abs(spec)
    band = np.ones(n, bool) if f_max is None else np.abs(freqs) <= f_max
    if not band.any():
        raise ValueError("no DFT bin inside the search band")
    idx = np.flatnonzero(band)[np.argmax(mags[band])]
    return DopplerSpectrum(freqs, mags, 1.0 / (len(x) * period), float(freqs[idx]))


def dft_from_frames(frames, zero_pad_factor: int = 8, f_max: float | None = None,
                    target: str = "target") -> DopplerSpectrum:
    """Run the baseline directly on peak-mode frames."""
    los, tgt, ts = [], [], []
    for fr in frames:
        peaks = {(p.path or p.kind): p for p in fr.peaks}
        if "los" not in peaks or target not in peaks:
            continue
        los.append(peaks["los"].value)
        tgt.append(peaks[target].value)
        ts.append(fr.t)
    if len(ts) < 2:
        raise InsufficientFramesError("fewer than 2 frames carry both LoS and target")
    ts = np.asarray(ts) - ts[0]
    return doppler_dft(conj_los_mix(tgt, los), FrameTiming(ts), zero_pad_factor, f_max)
