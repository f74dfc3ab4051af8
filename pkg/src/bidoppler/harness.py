"""Seeded Monte Carlo runner, carrier profiles, metrics and result export.

Seed splitting: the master seed feeds a ``numpy.random.SeedSequence``; trial
``i`` uses child ``i`` of ``spawn(trials)``, which is split again into
independent streams for the scene, the offsets, the CIR noise, the AoD
noise, frame dropping and the IMU speed noise. Results therefore do not
depend on the number of workers or on completion order.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import baseline, channel, estimator
from . import geometry as geo
from .errors import BiDopplerError, ConfigurationError

SCHEMA_VERSION = 1
METHODS = ("nls", "closed_form", "imu", "dft")
RESULT_COLUMNS = [
    "trial", "method", "f_d_true", "f_d_est", "eta_true", "eta_est", "v_true", "v_est",
    "eps_fd", "eps_eta", "eps_v", "abs_fd_hz", "converged", "fail_reason",
]
SUMMARY_STATS = ["median", "q1", "q3", "lo_whisker", "hi_whisker", "mean", "std", "n"]

# carrier -> (f_max Hz, v_max m/s, area side m, period s, bandwidth Hz)
PROFILES = {
    "60GHz": dict(carrier_hz=60e9, f_max=1000.0, v_max=5.0, area=20.0, period=1 / 6000, bandwidth=1.76e9),
    "28GHz": dict(carrier_hz=28e9, f_max=930.0, v_max=10.0, area=50.0, period=0.178e-3, bandwidth=0.4e9),
    "5GHz": dict(carrier_hz=5e9, f_max=300.0, v_max=20.0, area=100.0, period=0.5e-3, bandwidth=0.16e9),
    # indoor 5 m room; short links give a high per-path SNR
    "testbed": dict(carrier_hz=60e9, f_max=200.0, v_max=1.0, area=5.0, period=0.254e-3, bandwidth=1.76e9,
                    snr_db=30.0),
    "fig4": dict(carrier_hz=60e9, f_max=1000.0, v_max=5.0, area=20.0, period=0.25e-3, bandwidth=1.76e9,
                 fixed_amplitudes=(0.1, 0.05, 0.2, 0.2)),
}


@dataclass
class SimConfig:
    profile: str = "60GHz"
    carrier_hz: float = 60e9
    f_max: float = 1000.0
    f_min: float = 100.0
    v_max: float = 5.0
    v_min: float = 0.5
    area: float = 20.0
    period: float = 1 / 6000
    bandwidth: float = 1.76e9
    cfo_std: Optional[float] = None
    n_static: int = 2
    snr_db: float = 5.0
    snr_reference: str = "weakest"
    sigma_alpha_deg: float = 5.0
    window: float = 16e-3
    dft_window: Optional[float] = None
    trials: int = 500
    seed: int = 0
    methods: tuple = ("nls",)
    averaging: str = "uniform"
    drop_p: float = 0.0
    imu_speed_noise_std: float = 0.0
    waveform_fidelity: bool = False
    golay_length: int = 128
    static_tx: bool = False
    allow_period_override: bool = False
    amplitude_range_db: float = 14.0
    fixed_amplitudes: Optional[tuple] = None
    dft_zero_pad: int = 8
    deg_tol: float = 0.02

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if self.fixed_amplitudes is not None:
            self.fixed_amplitudes = tuple(self.fixed_amplitudes)
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigurationError(f"unknown methods {bad}")
        if self.area <= 0 or self.period <= 0 or self.window <= 0:
            raise ConfigurationError("area, period and window must be positive")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if not 0 < self.f_min <= self.f_max or not 0 <= self.v_min <= self.v_max:
            raise ConfigurationError("inconsistent Doppler or speed range")
        if self.n_static < 0:
            raise ConfigurationError("n_static must be >= 0")
        if self.snr_reference not in ("weakest", "los"):
            raise ConfigurationError("snr_reference is 'weakest' or 'los'")
        if not 0 <= self.drop_p < 1:
            raise ConfigurationError("drop_p must be in [0, 1)")
        if self.period > 1 / (6 * self.f_max) * (1 + 1e-9) and not self.allow_period_override:
            raise ConfigurationError(
                f"period {self.period:g} s exceeds 1/(6 f_max); set allow_period_override"
            )
        if self.frames_for(self.window) < 2:
            raise ConfigurationError("window holds fewer than 2 frames")

    @property
    def wavelength(self) -> float:
        return geo.SPEED_OF_LIGHT / self.carrier_hz

    @property
    def sigma_o(self) -> float:
        """Residual CFO std; defaults to 0.1 ppm of the carrier."""
        return 1e-7 * self.carrier_hz if self.cfo_std is None else self.cfo_std

    def frames_for(self, window: float) -> int:
        return max(int(round(window / self.period)), 1)

    @property
    def total_frames(self) -> int:
        windows = [self.window] + ([self.dft_window] if self.dft_window else [])
        return max(self.frames_for(w) for w in windows)

    def estimator_config(self) -> estimator.EstimatorConfig:
        return estimator.EstimatorConfig(f_max=self.f_max, deg_tol=self.deg_tol, averaging=self.averaging)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["methods"] = list(self.methods)
        if self.fixed_amplitudes is not None:
            d["fixed_amplitudes"] = list(self.fixed_amplitudes)
        d["schema"] = SCHEMA_VERSION
        return d


def profile_config(name: str, **overrides) -> SimConfig:
    if name not in PROFILES:
        raise ConfigurationError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    params = dict(PROFILES[name])
    params.update(overrides)
    return SimConfig(profile=name, **params)


def config_from_dict(doc: dict) -> SimConfig:
    doc = dict(doc)
    version = doc.pop("schema", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported config schema {version}")
    profile = doc.pop("profile", "60GHz")
    known = {f.name for f in dataclasses.fields(SimConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    try:
        return profile_config(profile, **doc)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def load_config(path) -> SimConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError("config must be a JSON object")
    return config_from_dict(doc)


# ---------------------------------------------------------------- scenarios


@dataclass
class Scenario:
    scene: geo.SceneSnapshot
    amplitudes: np.ndarray
    offsets: channel.OffsetProcess
    timing: channel.FrameTiming
    noise_std: float
    f_d_target: float


def _uniform_point(rng, side):
    return geo.Point2(*rng.uniform(0.0, side, 2))


def _geometry_ok(scene, cfg, pulse):
    tol = cfg.deg_tol
    ids = geo.path_ids(scene)
    alphas = [geo.aod(scene, p) for p in ids]
    statics = alphas[2:]
    if any(abs(a) < tol for a in statics):
        return False
    for a, b in itertools.combinations(statics, 2):
        if abs(geo.wrap_pi(a - b)) < tol:
            return False
    delays = np.array([geo.path_delay(scene, p) for p in ids])
    bins = np.rint((delays - delays[0]) * pulse.bandwidth).astype(int)
    if len(set(bins.tolist())) != len(bins) or bins.max() + pulse.first_bin >= pulse.span:
        return False
    return True


def _pulse(cfg):
    return channel.PulseShape(
        kind="golay" if cfg.waveform_fidelity else "delta",
        bandwidth=cfg.bandwidth,
        span=1024,
        golay_length=cfg.golay_length,
    )


def sample_scenario(cfg: SimConfig, rng, max_attempts: int = 10000) -> Scenario:
    """Draw a random scene whose target Doppler is uniform in ``+-[f_min, f_max]``.

    The Doppler value is drawn first and kept; positions and the target
    heading are re-drawn until a target speed of at most ``v_max`` produces
    it and the static AoDs and delay bins satisfy the margins.
    """
    rng = np.random.default_rng(rng)
    lam = cfg.wavelength
    side = cfg.area
    pulse = _pulse(cfg)
    f_target = rng.uniform(cfg.f_min, cfg.f_max) * rng.choice([-1.0, 1.0])
    min_sep = 0.02 * side
    for _ in range(max_attempts):
        tx_pos, rx_pos = _uniform_point(rng, side), _uniform_point(rng, side)
        pts = [_uniform_point(rng, side) for _ in range(cfg.n_static + 1)]
        everyone = [tx_pos, rx_pos, *pts]
        arr = np.array([[p.x, p.y] for p in everyone])
        dist = np.hypot(*(arr[:, None, :] - arr[None, :, :]).transpose(2, 0, 1))
        if np.min(dist[np.triu_indices(len(arr), 1)]) < min_sep:
            continue
        beta = geo.bistatic_angle_points(tx_pos.as_array(), rx_pos.as_array(), pts[0].as_array())
        bis = (pts[0].as_array() - tx_pos.as_array()) / np.hypot(*(pts[0].as_array() - tx_pos.as_array()))
        bis = bis + (pts[0].as_array() - rx_pos.as_array()) / np.hypot(*(pts[0].as_array() - rx_pos.as_array()))
        if np.hypot(*bis) < 1e-9:
            continue
        gamma = rng.uniform(0, 2 * math.pi)
        factor = 2.0 / lam * math.cos(gamma) * math.cos(beta / 2)
        if abs(factor) < 1e-12:
            continue
        speed = f_target / factor
        heading = gamma + math.atan2(bis[1], bis[0])
        if speed < 0:
            speed, heading = -speed, heading + math.pi
        if speed > cfg.v_max:
            continue
        tx_speed = 0.0 if cfg.static_tx else rng.uniform(cfg.v_min, cfg.v_max)
        tx = geo.DeviceState(tx_pos, tx_speed, rng.uniform(0, 2 * math.pi))
        scatterers = [geo.Scatterer(pts[0], speed, heading, "target")]
        scatterers += [geo.Scatterer(p, 0.0, 0.0, "static") for p in pts[1:]]
        scene = geo.SceneSnapshot(tx, rx_pos, tuple(scatterers), cfg.carrier_hz)
        if not _geometry_ok(scene, cfg, pulse):
            continue
        break
    else:
        raise ConfigurationError("could not draw a valid scenario; check f_min, v_max and area")

    n_paths = cfg.n_static + 2
    if cfg.fixed_amplitudes is not None:
        mags = np.asarray(cfg.fixed_amplitudes, float)
        if len(mags) != n_paths:
            raise ConfigurationError(f"fixed_amplitudes needs {n_paths} values")
    else:
        mags = np.concatenate([[1.0], 10 ** (-rng.uniform(0, cfg.amplitude_range_db, n_paths - 1) / 20)])
    amps = mags * np.exp(1j * rng.uniform(0, 2 * math.pi, n_paths))
    ref = mags.min() if cfg.snr_reference == "weakest" else mags[0]
    noise_std = ref / math.sqrt(10 ** (cfg.snr_db / 10))
    return Scenario(
        scene=scene,
        amplitudes=amps,
        offsets=channel.OffsetProcess(cfo_std=cfg.sigma_o),
        timing=channel.FrameTiming.uniform(cfg.total_frames, cfg.period),
        noise_std=noise_std,
        f_d_target=geo.target_bistatic_doppler(scene, scene.target_index),
    )


# ---------------------------------------------------------------- trials


@dataclass
class TrialResult:
    trial: int
    method: str
    f_d_true: float
    eta_true: float
    v_true: float
    f_d_est: float = math.nan
    eta_est: float = math.nan
    v_est: float = math.nan
    converged: bool = False
    fail_reason: str = ""

    @property
    def abs_fd(self) -> float:
        return abs(self.f_d_true - self.f_d_est)

    @property
    def abs_eta(self) -> float:
        return abs(geo.wrap_pi(self.eta_true - self.eta_est)) if math.isfinite(self.eta_est) else math.nan

    @property
    def abs_v(self) -> float:
        return abs(self.v_true - self.v_est)

    @staticmethod
    def _normalized(err, ref):
        if not math.isfinite(err):
            return math.nan
        return err / abs(ref) if ref != 0 else math.nan

    @property
    def eps_fd(self) -> float:
        return self._normalized(self.abs_fd, self.f_d_true)

    @property
    def eps_eta(self) -> float:
        return self._normalized(self.abs_eta, self.eta_true)

    @property
    def eps_v(self) -> float:
        return self._normalized(self.abs_v, self.v_true)

    @property
    def ok(self) -> bool:
        return not self.fail_reason

    def row(self) -> dict:
        return {
            "trial": self.trial, "method": self.method,
            "f_d_true": self.f_d_true, "f_d_est": self.f_d_est,
            "eta_true": self.eta_true, "eta_est": self.eta_est,
            "v_true": self.v_true, "v_est": self.v_est,
            "eps_fd": self.eps_fd, "eps_eta": self.eps_eta, "eps_v": self.eps_v,
            "abs_fd_hz": self.abs_fd, "converged": int(self.converged),
            "fail_reason": self.fail_reason,
        }


def trial_streams(master_seed: int, trials: int):
    """Per-trial seed bundles: (scene, offsets, noise, aod, drop, imu)."""
    root = np.random.SeedSequence(master_seed)
    return [child.spawn(6) for child in root.spawn(trials)]


def _first_window(frames, window):
    return [f for f in frames if f.t < window - 1e-12]


def run_trial(cfg: SimConfig, index: int, streams, offset_seed=None) -> list:
    """Run every configured method on one random scenario.

    ``offset_seed`` overrides the offset stream (used to check that results
    do not depend on the clock offsets).
    """
    s_scene, s_off, s_noise, s_aod, s_drop, s_imu = streams
    sc = sample_scenario(cfg, np.random.default_rng(s_scene))
    sc.offsets.seed = np.random.default_rng(s_off if offset_seed is None else offset_seed)
    scene = sc.scene
    truth = dict(f_d_true=sc.f_d_target, eta_true=geo.eta(scene), v_true=scene.tx.speed)
    synth = channel.synthesize_cir(
        scene, sc.amplitudes, sc.offsets, sc.timing, _pulse(cfg), sc.noise_std,
        sigma_alpha=math.radians(cfg.sigma_alpha_deg),
        noise_seed=np.random.default_rng(s_noise), aod_seed=np.random.default_rng(s_aod),
        dense=cfg.waveform_fidelity, f_max=cfg.f_max if not cfg.allow_period_override else None,
    )
    frames = channel.drop_frames(synth.frames, cfg.drop_p, np.random.default_rng(s_drop))
    est_cfg = cfg.estimator_config()
    imu_rng = np.random.default_rng(s_imu)
    out = []
    for method in cfg.methods:
        res = TrialResult(index, method, **truth)
        try:
            if method == "dft":
                win = _first_window(frames, cfg.dft_window or cfg.window)
                spec = baseline.dft_from_frames(win, cfg.dft_zero_pad, cfg.f_max)
                res.f_d_est, res.converged = spec.peak_hz, True
            else:
                win = _first_window(frames, cfg.window)
                series = estimator.extract_phases(win)
                speed = None
                if method == "imu":
                    speed = max(scene.tx.speed + imu_rng.normal(0.0, cfg.imu_speed_noise_std), 0.0) \
                        if cfg.imu_speed_noise_std > 0 else scene.tx.speed
                est = estimator.estimate_window(series, est_cfg, cfg.wavelength, method, speed)
                res.f_d_est, res.eta_est, res.v_est = est.theta.f_d, est.theta.eta, est.theta.v_tx
                res.converged = est.converged
        except BiDopplerError as exc:
            res.fail_reason = exc.reason
        out.append(res)
    return out


def _run_chunk(args):
    cfg_dict, indices, master = args
    cfg = config_from_dict(cfg_dict)
    streams = trial_streams(master, cfg.trials)
    out = []
    for i in indices:
        try:
            out.extend(run_trial(cfg, i, streams[i]))
        except BiDopplerError as exc:
            out.extend(TrialResult(i, m, math.nan, math.nan, math.nan, fail_reason=exc.reason)
                       for m in cfg.methods)
    return out


def run_monte_carlo(cfg: SimConfig, methods: Optional[Sequence[str]] = None, workers: int = 1) -> list:
    """All trials of ``cfg``, ordered by trial index then method."""
    if methods is not None:
        cfg = dataclasses.replace(cfg, methods=tuple(methods))
    doc = cfg.to_dict()
    indices = list(range(cfg.trials))
    if workers <= 1:
        return _run_chunk((doc, indices, cfg.seed))
    chunks = [indices[w::workers] for w in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, [(doc, c, cfg.seed) for c in chunks]))
    merged = [r for part in parts for r in part]
    order = {m: j for j, m in enumerate(cfg.methods)}
    return sorted(merged, key=lambda r: (r.trial, order[r.method]))


# ---------------------------------------------------------------- metrics


def box_stats(values) -> dict:
    """Median, quartiles, 1.5 IQR whiskers, mean, std and count."""
    x = np.sort(np.asarray(values, float))
    x = x[np.isfinite(x)]
    if len(x) == 0:
        raise ValueError("no finite values")
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    lo = x[x >= q1 - 1.5 * iqr].min()
    hi = x[x <= q3 + 1.5 * iqr].max()
    return {
        "median": float(med), "q1": float(q1), "q3": float(q3),
        "lo_whisker": float(lo), "hi_whisker": float(hi),
        "mean": float(x.mean()), "std": float(x.std()), "n": int(len(x)),
    }


def summarize(results, group_by=("method",), metric: str = "eps_fd", cell: Optional[dict] = None):
    """Box statistics of ``metric`` per group; failed trials are excluded.

    Groups with no usable value are omitted and listed in the returned notes.
    """
    groups = {}
    for r in results:
        key = tuple(getattr(r, g) for g in group_by)
        groups.setdefault(key, []).append(r)
    rows, notes = [], []
    for key, members in groups.items():
        vals = [getattr(r, metric) for r in members if r.ok]
        vals = [v for v in vals if math.isfinite(v)]
        if not vals:
            notes.append(f"cell {dict(zip(group_by, key))} has no successful trials")
            continue
        row = dict(cell or {})
        row.update(zip(group_by, key))
        row.update(box_stats(vals))
        row["failures"] = sum(not r.ok for r in members)
        rows.append(row)
    return rows, notes


def median_error(results, method: str = "nls", metric: str = "eps_fd") -> float:
    vals = [getattr(r, metric) for r in results if r.method == method and r.ok]
    vals = [v for v in vals if math.isfinite(v)]
    return float(np.median(vals)) if vals else math.nan


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def results_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in results:
        row = r.row()
        w.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])
    return buf.getvalue()


def write_results(results, path) -> None:
    Path(path).write_text(results_csv(results))


def write_results_jsonl(results, path) -> None:
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r.row()) + "\n")


def sweep(base: SimConfig, grid: dict, metric: str = "eps_fd", workers: int = 1):
    """Cartesian sweep over ``grid`` (field -> values); one summary row per cell and method."""
    keys = list(grid)
    unknown = set(keys) - {f.name for f in dataclasses.fields(SimConfig)}
    if unknown:
        raise ConfigurationError(f"unknown sweep parameters {sorted(unknown)}")
    rows, notes = [], []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cell = dict(zip(keys, combo))
        cfg = dataclasses.replace(base, **cell)
        res = run_monte_carlo(cfg, workers=workers)
        r, n = summarize(res, ("method",), metric, cell)
        rows.extend(r)
        notes.extend(n)
    return rows, notes


def write_summary(rows, path, keys: Sequence[str]) -> None:
    cols = list(keys) + ["method"] + SUMMARY_STATS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in cols])
