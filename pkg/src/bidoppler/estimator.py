"""Target Doppler and TX velocity estimation from multipath phase series.

Pipeline: peak phases -> subtract the LoS phase (removes every offset common
to all paths) -> wrapped first differences -> normalise by ``2 pi T_k`` and
average -> solve ``dbar = g(theta)`` for ``theta = (f_d, eta, v_tx)``.

The measurement model, for AoDs ``alpha`` measured from the TX->RX direction::

    g_target = f_d + (v/lambda) (cos(eta - alpha_t) - cos(eta))
    g_static = (v/lambda) (cos(eta - alpha_s) - cos(eta))
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import geometry as geo
from .channel import FrameTiming, require_frames
from .errors import (
    BiDopplerError,
    ConfigurationError,
    DegenerateGeometryError,
    IllConditionedError,
    InconsistentMeasurementError,
    InsufficientFramesError,
    InsufficientPathsError,
    MissingReferenceError,
)

AVERAGING_MODES = ("uniform", "inverse_variance", "duration")


@dataclass(frozen=True)
class ParamVector:
    f_d: float
    eta: float
    v_tx: float

    def __post_init__(self):
        if self.v_tx < 0:
            raise ValueError("v_tx must be non-negative; use ParamVector.canonical")
        object.__setattr__(self, "eta", geo.wrap_2pi(self.eta))

    @classmethod
    def canonical(cls, f_d, eta, v_tx) -> "ParamVector":
        """Fold a negative speed into the heading: (v, eta) -> (-v, eta + pi)."""
        if v_tx < 0:
            return cls(float(f_d), float(eta) + math.pi, -float(v_tx))
        return cls(float(f_d), float(eta), float(v_tx))

    def as_array(self) -> np.ndarray:
        return np.array([self.f_d, self.eta, self.v_tx])


@dataclass
class EstimatorConfig:
    f_max: float = 1000.0
    deg_tol: float = 0.02
    static_threshold: float = 1e-3
    max_iterations: int = 50
    damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    step_tol: float = 1e-10
    residual_tol: float = 1e-24
    averaging: str = "uniform"
    smoothing_window: Optional[float] = None
    smoothing_order: int = 2
    eta_grid: int = 72

    def __post_init__(self):
        if self.f_max <= 0 or self.deg_tol <= 0 or self.step_tol <= 0 or self.residual_tol <= 0:
            raise ConfigurationError("tolerances and f_max must be positive")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if self.averaging not in AVERAGING_MODES:
            raise ConfigurationError(f"unknown averaging mode {self.averaging!r}")
        if self.smoothing_window is not None and self.smoothing_window <= 0:
            raise ConfigurationError("smoothing window must be positive")


@dataclass
class PathPhaseSeries:
    """Wrapped phases per path and frame; NaN marks a frame where a path is missing.

    Row 0 is always the LoS. ``aods`` are relative to the LoS AoD.
    """

    labels: list
    kinds: list
    phases: np.ndarray
    aods: np.ndarray
    amplitudes: np.ndarray
    timing: FrameTiming

    @property
    def available(self) -> np.ndarray:
        return ~np.isnan(self.phases)

    @property
    def n_static(self) -> int:
        return sum(k == "static" for k in self.kinds)


@dataclass
class NormalizedDifferences:
    """Per-frame normalised differences ``(K-1, S+1)`` and their average.

    Entries are ordered target first, then statics.
    """

    labels: list
    per_frame: np.ndarray
    mean: np.ndarray
    aods: np.ndarray
    amplitudes: np.ndarray
    gaps: np.ndarray
    variances: Optional[np.ndarray] = None

    @property
    def n_static(self) -> int:
        return len(self.mean) - 1


@dataclass
class ClosedFormDiagnostics:
    xi_ratio: float
    u_value: float
    sign_cos_eta: int
    branch: str
    condition_margins: dict
    low_confidence: bool = False


@dataclass
class FitReport:
    iterations: int
    final_cost: float
    converged: bool
    cost_history: list = field(default_factory=list)
    init: str = "closed_form"


@dataclass
class ImuReport:
    candidates: list
    selected: int
    ambiguous: bool
    residuals: list


@dataclass
class WindowEstimate:
    t_start: float
    t_end: float
    theta: Optional[ParamVector]
    converged: bool
    method: str
    fail_reason: str = ""
    detail: object = None

    def to_record(self) -> dict:
        th = self.theta
        return {
            "t_start": self.t_start,
            "t_end": self.t_end,
            "f_d_hz": None if th is None else th.f_d,
            "eta_rad": None if th is None else th.eta,
            "v_tx_mps": None if th is None else th.v_tx,
            "converged": bool(self.converged),
            "method": self.method,
        }


# ---------------------------------------------------------------- phases


def _peak_label(peak) -> str:
    if peak.path is not None:
        return peak.path
    if peak.kind in ("los", "target"):
        return peak.kind
    return f"{peak.kind}@{peak.delay_bin}"


def _circular_mean(angles):
    angles = np.asarray(angles, float)
    angles = angles[~np.isnan(angles)]
    if len(angles) == 0:
        return 0.0
    return math.atan2(np.sin(angles).mean(), np.cos(angles).mean())


def extract_phases(frames, labels: Optional[Sequence[str]] = None) -> PathPhaseSeries:
    """Collect per-path peak phases over a window of peak-mode frames.

    Paths are identified by their ``path`` label (or their kind for the LoS
    and target). ``labels`` restricts and orders the non-LoS paths; by
    default every labelled non-``unknown`` path is used, target first.
    """
    frames = list(frames)
    require_frames(frames)
    by_frame = []
    seen, kinds = [], {}
    for k, fr in enumerate(frames):
        if fr.peaks is None:
            raise ValueError("phase extraction needs peak-mode frames")
        entry = {}
        for p in fr.peaks:
            if p.kind == "unknown":
                continue
            lab = _peak_label(p)
            entry[lab] = p
            if lab not in kinds:
                kinds[lab] = p.kind
                seen.append(lab)
        if "los" not in entry:
            raise MissingReferenceError(f"frame {k} (t={fr.t}) has no LoS peak")
        by_frame.append(entry)

    if labels is None:
        others = [l for l in seen if kinds[l] == "target"] + [l for l in seen if kinds[l] == "static"]
    else:
        others = [l for l in labels if l != "los"]
        missing = [l for l in others if l not in kinds]
        if missing:
            raise InsufficientPathsError(f"paths never observed: {missing}")
    order = ["los", *others]

    k_frames = len(frames)
    phases = np.full((len(order), k_frames), np.nan)
    aod_frames = np.full((len(order), k_frames), np.nan)
    mags = np.full((len(order), k_frames), np.nan)
    for k, entry in enumerate(by_frame):
        for i, lab in enumerate(order):
            p = entry.get(lab)
            if p is None:
                continue
            phases[i, k] = geo.wrap_2pi(np.angle(p.value))
            aod_frames[i, k] = p.aod
            mags[i, k] = abs(p.value)

    los_aod = _circular_mean(aod_frames[0])
    aods = np.array([geo.wrap_pi(_circular_mean(a) - los_aod) for a in aod_frames])
    aods[0] = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        amps = np.nanmean(mags, axis=1)
    timing = FrameTiming(np.array([f.t for f in frames]) - frames[0].t)
    return PathPhaseSeries(order, [kinds.get(l, "los") for l in order], phases, aods, amps, timing)


def cancel_offsets(series: PathPhaseSeries) -> np.ndarray:
    """Phases relative to the LoS, wrapped to [0, 2pi); rows follow ``labels[1:]``."""
    return geo.wrap_2pi(series.phases[1:] - series.phases[0])


def difference(phi_tilde) -> np.ndarray:
    """Consecutive-frame phase differences re-wrapped to (-pi, pi]."""
    phi_tilde = np.asarray(phi_tilde, float)
    if phi_tilde.shape[-1] < 2:
        raise InsufficientFramesError("differencing needs at least 2 frames")
    return geo.wrap_pi(np.diff(phi_tilde, axis=-1))


def normalize_and_average(delta, timing: FrameTiming, noise=None, mode: str = "uniform",
                          labels=None, aods=None, amplitudes=None) -> NormalizedDifferences:
    """Scale differences to Hz and average them over the window.

    ``mode``: ``"uniform"`` is the plain mean over frames; ``"inverse_variance"``
    weights frame ``k`` by ``1/sigma^2_{i,k}`` (proportional to ``T_k^2``);
    ``"duration"`` divides the summed phase change by the summed gap
    duration. Missing entries (NaN) are skipped.
    """
    if mode not in AVERAGING_MODES:
        raise ConfigurationError(f"unknown averaging mode {mode!r}")
    delta = np.atleast_2d(np.asarray(delta, float))
    gaps = timing.gaps
    if delta.shape[1] != len(gaps):
        raise ValueError("differences and timing disagree on the frame count")
    per_frame = delta / (2 * math.pi * gaps[None, :])
    ok = ~np.isnan(per_frame)
    if np.any(ok.sum(axis=1) == 0):
        raise InsufficientFramesError("a path has no valid phase difference in the window")
    if mode == "uniform":
        mean = np.nanmean(per_frame, axis=1)
    elif mode == "inverse_variance":
        w = np.where(ok, gaps[None, :] ** 2, 0.0)
        mean = np.nansum(per_frame * w, axis=1) / w.sum(axis=1)
    else:
        span = np.where(ok, gaps[None, :], 0.0).sum(axis=1)
        mean = np.nansum(delta, axis=1) / (2 * math.pi * span)
    variances = None
    if noise is not None:
        variances = noise.difference_variance(gaps)
    n = delta.shape[0]
    return NormalizedDifferences(
        labels=list(labels) if labels is not None else [f"p{i}" for i in range(n)],
        per_frame=per_frame.T,
        mean=mean,
        aods=np.zeros(n) if aods is None else np.asarray(aods, float),
        amplitudes=np.ones(n) if amplitudes is None else np.asarray(amplitudes, float),
        gaps=gaps,
        variances=variances,
    )


def measurements_from_series(series: PathPhaseSeries, mode: str = "uniform", noise=None):
    """Run cancellation, differencing and averaging on a phase series."""
    if len(series.labels) < 2 or series.kinds[1] != "target":
        raise InsufficientPathsError("a target path is required")
    delta = difference(cancel_offsets(series))
    return normalize_and_average(
        delta, series.timing, noise, mode,
        labels=series.labels[1:], aods=series.aods[1:], amplitudes=series.amplitudes[1:],
    )


# ---------------------------------------------------------------- model


def _as_theta(theta):
    if isinstance(theta, ParamVector):
        return theta.f_d, theta.eta, theta.v_tx
    f, e, v = theta
    return float(f), float(e), float(v)


def g_model(theta, aods, wavelength: float) -> np.ndarray:
    """Noise-free averaged differences ``[target, static_1..static_S]`` [Hz]."""
    f_d, eta, v = _as_theta(theta)
    a = np.asarray(aods, float)
    out = v / wavelength * (np.cos(eta - a) - math.cos(eta))
    out[0] += f_d
    return out


def jacobian(theta, aods, wavelength: float) -> np.ndarray:
    """Analytic ``d g / d(f_d, eta, v)``, shape ``(S+1, 3)``."""
    _, eta, v = _as_theta(theta)
    a = np.asarray(aods, float)
    jac = np.empty((len(a), 3))
    jac[:, 0] = 0.0
    jac[0, 0] = 1.0
    jac[:, 1] = v / wavelength * (np.sin(a - eta) + math.sin(eta))
    jac[:, 2] = (np.cos(a - eta) - math.cos(eta)) / wavelength
    return jac


# ---------------------------------------------------------------- closed form


def closed_form(dbar_t, dbar_1, dbar_2, alpha_t, alpha_1, alpha_2, wavelength,
                tol: float = 0.02, f_max: Optional[float] = None,
                static_threshold: float = 1e-3):
    """Exact solution of the three-equation system with two static paths.

    Returns ``(ParamVector, ClosedFormDiagnostics)``. When both static
    averages are below ``static_threshold * f_max`` the TX is treated as
    static: ``(dbar_t, 0, 0)`` flagged low-confidence.
    """
    margins = {
        "nonzero_aod": min(abs(geo.wrap_pi(alpha_1)), abs(geo.wrap_pi(alpha_2))),
        "distinct_aod": abs(geo.wrap_pi(alpha_1 - alpha_2)),
    }
    if margins["nonzero_aod"] < tol:
        raise DegenerateGeometryError(f"static AoD within {tol} rad of the LoS direction")
    if margins["distinct_aod"] < tol:
        raise DegenerateGeometryError(f"static AoDs closer than {tol} rad")

    c1, s1 = math.cos(alpha_1), math.sin(alpha_1)
    c2, s2 = math.cos(alpha_2), math.sin(alpha_2)
    u = s1 * (1 - c2) + s2 * (c1 - 1)

    static_floor = 0.0 if f_max is None else static_threshold * f_max
    if max(abs(dbar_1), abs(dbar_2)) <= static_floor:
        diag = ClosedFormDiagnostics(math.nan, u, 0, "static", margins, low_confidence=True)
        return ParamVector(float(dbar_t), 0.0, 0.0), diag

    num = dbar_2 * (c1 - 1) - dbar_1 * (c2 - 1)
    den = dbar_1 * s2 - dbar_2 * s1
    if den == 0:
        # cos(eta) = 0: the sign of sin(eta) follows num / u
        ratio = math.copysign(math.inf, num * u)
        eta, sign_cos, branch = math.copysign(math.pi / 2, num * u), 0, "principal"
    else:
        ratio = num / den
        eta = math.atan(ratio)
        sign_cos = 1 if den / u > 0 else -1
        branch = "principal"
        if sign_cos < 0:
            eta += math.pi
            branch = "shifted"
    eta = geo.wrap_2pi(eta)

    margins["aod_vs_twice_eta"] = min(
        abs(geo.wrap_pi(alpha_1 - 2 * eta)), abs(geo.wrap_pi(alpha_2 - 2 * eta))
    )
    if margins["aod_vs_twice_eta"] < tol:
        raise IllConditionedError(f"static AoD within {tol} rad of twice the heading estimate")

    gamma_1 = math.cos(eta - alpha_1) - math.cos(eta)
    gamma_t = math.cos(alpha_t - eta) - math.cos(eta)
    v = wavelength * dbar_1 / gamma_1
    f_d = dbar_t - dbar_1 * gamma_t / gamma_1
    diag = ClosedFormDiagnostics(ratio, u, sign_cos, branch, margins)
    return ParamVector.canonical(f_d, eta, v), diag


def _static_pairs(meas: NormalizedDifferences, tol: float):
    """Static index pairs (1-based into the entry vector), strongest first."""
    s = meas.n_static
    amps = meas.amplitudes
    a = meas.aods
    pairs = []
    for i, j in itertools.combinations(range(1, s + 1), 2):
        if min(abs(geo.wrap_pi(a[i])), abs(geo.wrap_pi(a[j]))) < tol:
            continue
        if abs(geo.wrap_pi(a[i] - a[j])) < tol:
            continue
        pairs.append((min(amps[i], amps[j]), i, j))
    pairs.sort(key=lambda p: -p[0])
    return [(i, j) for _, i, j in pairs]


def closed_form_init(meas: NormalizedDifferences, wavelength: float, cfg: EstimatorConfig):
    """Closed form on the strongest usable static pair; raises if none works."""
    last = None
    for i, j in _static_pairs(meas, cfg.deg_tol):
        try:
            return closed_form(meas.mean[0], meas.mean[i], meas.mean[j],
                               meas.aods[0], meas.aods[i], meas.aods[j], wavelength,
                               cfg.deg_tol, cfg.f_max, cfg.static_threshold)
        except IllConditionedError as exc:
            last = exc
    if last is not None:
        raise last
    raise DegenerateGeometryError("no static pair satisfies the AoD margins")


def grid_init(dbar, aods, wavelength: float, n_grid: int = 72) -> ParamVector:
    """Scan the heading; for each, (f_d, v) enter linearly and are solved exactly."""
    dbar = np.asarray(dbar, float)
    a = np.asarray(aods, float)
    best = None
    for eta in np.linspace(0, 2 * math.pi, n_grid, endpoint=False):
        gam = (np.cos(eta - a) - math.cos(eta)) / wavelength
        design = np.zeros((len(a), 2))
        design[0, 0] = 1.0
        design[:, 1] = gam
        coef, *_ = np.linalg.lstsq(design, dbar, rcond=None)
        cost = float(np.sum((design @ coef - dbar) ** 2))
        if best is None or cost < best[0]:
            best = (cost, coef[0], eta, coef[1])
    return ParamVector.canonical(best[1], best[2], best[3])


# ---------------------------------------------------------------- LM


def levenberg_marquardt(residual, jac, x0, cfg: EstimatorConfig):
    """Minimise ``||residual(x)||^2`` with Marquardt-scaled damping.

    Returns ``(x, FitReport)``; on non-convergence the best iterate is
    returned with ``converged=False``. Accepted steps never increase the cost.
    """
    x = np.array(x0, float)
    r = residual(x)
    cost = float(r @ r)
    history = [cost]
    lam = cfg.damping
    if cost <= cfg.residual_tol:
        return x, FitReport(0, cost, True, history)
    for it in range(1, cfg.max_iterations + 1):
        jm = jac(x)
        jtj = jm.T @ jm
        grad = jm.T @ r
        scale = np.maximum(np.diag(jtj), 1e-12 * max(np.diag(jtj).max(), 1e-300))
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                lam *= cfg.damping_up
                continue
            cand = x + step
            r_c = residual(cand)
            cost_c = float(r_c @ r_c)
            if cost_c <= cost:
                accepted = True
                break
            lam *= cfg.damping_up
        if not accepted:
            return x, FitReport(it, cost, cost <= cfg.residual_tol, history)
        small = np.linalg.norm(step) <= cfg.step_tol * (np.linalg.norm(x) + cfg.step_tol)
        x, r, cost = cand, r_c, cost_c
        history.append(cost)
        lam = max(lam / cfg.damping_down, 1e-12)
        if small or cost <= cfg.residual_tol:
            return x, FitReport(it, cost, True, history)
    return x, FitReport(cfg.max_iterations, cost, False, history)


def nls_solve(meas, aods, init: ParamVector, cfg: EstimatorConfig, wavelength: float):
    """Least-squares fit of ``g(theta)`` to the averaged differences.

    ``meas`` is a :class:`NormalizedDifferences` or a plain ``dbar`` vector.
    Needs at least two static paths.
    """
    dbar = np.asarray(meas.mean if isinstance(meas, NormalizedDifferences) else meas, float)
    aods = np.asarray(aods, float)
    if len(dbar) < 3:
        raise InsufficientPathsError("NLS needs at least two static paths; use the IMU mode")
    x, report = levenberg_marquardt(
        lambda x: dbar - g_model(x, aods, wavelength),
        lambda x: -jacobian(x, aods, wavelength),
        init.as_array(),
        cfg,
    )
    return ParamVector.canonical(*x), report


# ---------------------------------------------------------------- IMU


def estimate_with_imu(meas, aods, v_tx_known: float, cfg: EstimatorConfig, wavelength: float,
                      eta_hint: Optional[float] = None):
    """Solve for ``(f_d, eta)`` with the TX speed supplied externally.

    The first static path gives ``R cos(eta - phi0) = lambda dbar_1 / v``
    with two roots. Extra statics pick the root with the smaller residual,
    which is then refined; with a single static the root closest to
    ``eta_hint`` wins (or the first root without a hint) and the report is
    flagged ambiguous.
    """
    dbar = np.asarray(meas.mean if isinstance(meas, NormalizedDifferences) else meas, float)
    a = np.asarray(aods, float)
    if v_tx_known < 0:
        raise ConfigurationError("TX speed must be non-negative")
    if len(dbar) < 2:
        raise InsufficientPathsError("the IMU mode needs at least one static path")
    if v_tx_known == 0:
        return ParamVector(float(dbar[0]), 0.0, 0.0), ImuReport([(float(dbar[0]), 0.0)], 0, True, [0.0])

    alpha_1 = a[1]
    radius = 2 * abs(math.sin(alpha_1 / 2))
    if radius < cfg.deg_tol:
        raise DegenerateGeometryError("reference static path is aligned with the LoS")
    phi0 = math.atan2(math.sin(alpha_1), math.cos(alpha_1) - 1)
    c = wavelength * dbar[1] / (v_tx_known * radius)
    if abs(c) > 1:
        if abs(c) - 1 > 1e-12:
            raise InconsistentMeasurementError(
                f"static Doppler {dbar[1]:.4g} Hz not reachable at speed {v_tx_known} m/s"
            )
        c = math.copysign(1.0, c)
    spread = math.acos(c)
    scale = v_tx_known / wavelength
    candidates, residuals = [], []
    for eta in (phi0 + spread, phi0 - spread):
        eta = geo.wrap_2pi(eta)
        f_d = dbar[0] - scale * (math.cos(a[0] - eta) - math.cos(eta))
        res = dbar[2:] - scale * (np.cos(eta - a[2:]) - math.cos(eta))
        candidates.append((float(f_d), eta))
        residuals.append(float(res @ res))

    distinct = abs(geo.wrap_pi(candidates[0][1] - candidates[1][1])) > 1e-9
    if len(dbar) >= 3:
        pick = int(np.argmin(residuals))
        ambiguous = False
    elif eta_hint is not None:
        pick = int(np.argmin([abs(geo.wrap_pi(e - eta_hint)) for _, e in candidates]))
        ambiguous = distinct
    else:
        pick = 0
        ambiguous = distinct
    f_d, eta = candidates[pick]

    if len(dbar) >= 3:
        x, _ = levenberg_marquardt(
            lambda x: dbar - g_model((x[0], x[1], v_tx_known), a, wavelength),
            lambda x: -jacobian((x[0], x[1], v_tx_known), a, wavelength)[:, :2],
            np.array([f_d, eta]),
            cfg,
        )
        f_d, eta = float(x[0]), float(x[1])
    return ParamVector(f_d, eta, v_tx_known), ImuReport(candidates, pick, ambiguous, residuals)


# ---------------------------------------------------------------- windows


def estimate_window(series: PathPhaseSeries, cfg: EstimatorConfig, wavelength: float,
                    method: str = "nls", v_tx_known: Optional[float] = None,
                    eta_hint: Optional[float] = None, noise=None) -> WindowEstimate:
    """Full pipeline on one window. ``method`` is nls, closed_form or imu.

    Statics missing from the whole window are dropped before solving.
    """
    t0 = float(series.timing.t[0])
    t1 = float(series.timing.t[-1])
    keep = [0, 1] + [i for i in range(2, len(series.labels))
                     if np.sum(series.available[i] & series.available[0]) >= 2]
    sub = PathPhaseSeries(
        [series.labels[i] for i in keep], [series.kinds[i] for i in keep],
        series.phases[keep], series.aods[keep], series.amplitudes[keep], series.timing,
    )
    meas = measurements_from_series(sub, cfg.averaging, noise)
    if method == "imu":
        if v_tx_known is None:
            raise ConfigurationError("the IMU mode needs a TX speed")
        theta, report = estimate_with_imu(meas, meas.aods, v_tx_known, cfg, wavelength, eta_hint)
        return WindowEstimate(t0, t1, theta, True, "imu", detail=report)
    if meas.n_static < 2:
        raise InsufficientPathsError(
            f"{meas.n_static} static path(s) in window; two are needed without a TX speed"
        )
    init_kind = "closed_form"
    try:
        init, diag = closed_form_init(meas, wavelength, cfg)
    except (IllConditionedError, DegenerateGeometryError):
        if method == "closed_form" or meas.n_static < 2:
            raise
        init, diag, init_kind = grid_init(meas.mean, meas.aods, wavelength, cfg.eta_grid), None, "grid"
    if method == "closed_form":
        return WindowEstimate(t0, t1, init, True, "closed_form", detail=diag)
    if method != "nls":
        raise ConfigurationError(f"unknown method {method!r}")
    if diag is not None and diag.low_confidence:
        return WindowEstimate(t0, t1, init, True, "nls", detail=diag)
    theta, report = nls_solve(meas, meas.aods, init, cfg, wavelength)
    report.init = init_kind
    return WindowEstimate(t0, t1, theta, report.converged, "nls", detail=report)


def split_windows(frames, window: float, hop: Optional[float] = None):
    """Group frames into windows of ``window`` seconds advancing by ``hop``."""
    frames = list(frames)
    if not frames:
        return []
    hop = window if hop is None else hop
    if window <= 0 or hop <= 0:
        raise ConfigurationError("window and hop must be positive")
    t = np.array([f.t for f in frames])
    out = []
    start = t[0]
    while start <= t[-1]:
        idx = np.flatnonzero((t >= start - 1e-12) & (t < start + window - 1e-12))
        if len(idx):
            out.append([frames[i] for i in idx])
        start += hop
    return out


def estimate_trace(frames, cfg: EstimatorConfig, wavelength: float, window: float,
                   hop: Optional[float] = None, method: str = "nls",
                   v_tx_known=None) -> list:
    """Window-by-window estimates over a frame sequence.

    Failures are returned as estimates with ``theta=None`` and a reason tag.
    ``v_tx_known`` is a speed or a callable of the window start time. In the
    IMU mode the previous window's heading breaks the single-static tie.
    """
    results = []
    eta_hint = None
    for group in split_windows(frames, window, hop):
        t0, t1 = group[0].t, group[-1].t
        try:
            series = extract_phases(group)
            speed = v_tx_known(t0) if callable(v_tx_known) else v_tx_known
            est = estimate_window(series, cfg, wavelength, method, speed, eta_hint)
            est.t_start, est.t_end = float(t0), float(t1)
            if est.theta is not None and est.theta.v_tx > 0:
                eta_hint = est.theta.eta
        except BiDopplerError as exc:
            est = WindowEstimate(float(t0), float(t1), None, False, method, exc.reason)
        results.append(est)
    if cfg.smoothing_window is not None:
        results = _smooth_estimates(results, cfg)
    return results


def _smooth_estimates(results, cfg):
    good = [r for r in results if r.theta is not None]
    if len(good) < 2:
        return results
    times = np.array([0.5 * (r.t_start + r.t_end) for r in good])
    fd = smooth_series(times, [r.theta.f_d for r in good], cfg.smoothing_window, cfg.smoothing_order)
    for r, f in zip(good, fd):
        r.theta = ParamVector(float(f), r.theta.eta, r.theta.v_tx)
    return results


def write_estimates(results, path) -> None:
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r.to_record()) + "\n")


# ---------------------------------------------------------------- smoothing


def smooth_series(times, values, window: float, order: int = 2) -> np.ndarray:
    """Savitzky-Golay smoothing on arbitrary timestamps.

    Each output is the value at ``t_i`` of the least-squares polynomial of
    degree ``order`` fitted to the samples within ``window/2`` of ``t_i``.
    Windows are truncated at the ends of the series and the degree drops
    when a window holds too few samples.
    """
    t = np.asarray(times, float)
    y = np.asarray(values, float)
    if t.shape != y.shape:
        raise ValueError("times and values differ in length")
    if order < 0 or window <= 0:
        raise ValueError("order must be >= 0 and window positive")
    if len(y) < order + 1:
        warnings.warn("too few samples for smoothing; returning input", stacklevel=2)
        return y.copy()
    out = np.empty_like(y)
    half = window / 2
    for i, ti in enumerate(t):
        sel = np.abs(t - ti) <= half * (1 + 1e-12)
        deg = min(order, int(sel.sum()) - 1)
        dt = t[sel] - ti
        coef = np.polynomial.polynomial.polyfit(dt, y[sel], deg)
        out[i] = coef[0]
    return out
