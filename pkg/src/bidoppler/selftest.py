"""Fast invariant checks runnable without the test suite."""

from __future__ import annotations

import math

import numpy as np

from . import channel, crlb, estimator
from . import geometry as geo

WAVELENGTH = 0.005


def _random_theta_alphas(rng, margin=0.05):
    while True:
        alphas = rng.uniform(-math.pi, math.pi, 3)
        theta = (rng.uniform(-1000, 1000), rng.uniform(0, 2 * math.pi), rng.uniform(0.5, 5))
        a1, a2 = alphas[1:]
        if min(abs(a1), abs(a2), abs(geo.wrap_pi(a1 - a2))) < margin:
            continue
        if min(abs(geo.wrap_pi(a1 - 2 * theta[1])), abs(geo.wrap_pi(a2 - 2 * theta[1]))) < margin:
            continue
        return theta, alphas


def check_closed_form_roundtrip(n=200, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        theta, a = _random_theta_alphas(rng)
        d = estimator.g_model(theta, a, WAVELENGTH)
        est, _ = estimator.closed_form(d[0], d[1], d[2], a[0], a[1], a[2], WAVELENGTH, tol=0.02)
        rel = max(abs(est.f_d - theta[0]) / abs(theta[0]),
                  abs(geo.wrap_pi(est.eta - theta[1])) / max(theta[1], 1e-12),
                  abs(est.v_tx - theta[2]) / theta[2])
        worst = max(worst, rel)
    return worst < 1e-9, f"worst relative error {worst:.2e}"


def check_jacobian(n=50, seed=1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        theta, a = _random_theta_alphas(rng)
        jac = estimator.jacobian(theta, a, WAVELENGTH)
        for c in range(3):
            h = 1e-6 * max(abs(theta[c]), 1.0)
            up, dn = list(theta), list(theta)
            up[c] += h
            dn[c] -= h
            fd = (estimator.g_model(up, a, WAVELENGTH) - estimator.g_model(dn, a, WAVELENGTH)) / (2 * h)
            scale = np.max(np.abs(jac[:, c])) + 1e-12
            worst = max(worst, float(np.max(np.abs(fd - jac[:, c])) / scale))
    return worst < 1e-6, f"worst relative mismatch {worst:.2e}"


def check_golay(max_log2=10):
    for n in range(1, max_log2 + 1):
        pair = channel.golay_pair(2 ** n)
        total = channel.aperiodic_autocorr(pair.a) + channel.aperiodic_autocorr(pair.b)
        expect = np.zeros_like(total)
        expect[len(total) // 2] = 2 * 2 ** n
        if not np.array_equal(total, expect):
            return False, f"complementarity broken at N={2 ** n}"
    return True, f"exact for N=2..{2 ** max_log2}"


def check_crlb(n=200, seed=2):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        theta, a = _random_theta_alphas(rng)
        noise = crlb.NoiseModel(1e-2, 10.0, rng.uniform(0.1, 1), rng.uniform(0.05, 1, 3))
        point = crlb.FimPoint(estimator.ParamVector.canonical(*theta), tuple(a), noise, 1 / 6000, WAVELENGTH)
        oracle = crlb.crlb_from_oracle(point)
        worst = max(worst, abs(crlb.crlb_exact(a, noise, point.gap) - oracle) / oracle)
    return worst < 1e-6, f"derived bound vs oracle worst {worst:.2e}"


def check_offset_invariance(seed=3):
    scene = geo.SceneSnapshot(
        geo.DeviceState(geo.Point2(0, 0), 2.0, 1.0), geo.Point2(8, 1),
        (geo.Scatterer(geo.Point2(4, 5), 3.0, 2.0, "target"),
         geo.Scatterer(geo.Point2(2, -4), kind="static"),
         geo.Scatterer(geo.Point2(6, 6), kind="static")),
    )
    timing = channel.FrameTiming.uniform(64, 1 / 6000)
    amps = [1.0, 0.3j, 0.5, -0.4]
    outs = []
    for off_seed in (10, 11):
        syn = channel.synthesize_cir(scene, amps, channel.OffsetProcess(cfo_std=6e3, seed=off_seed),
                                     timing, noise_std=0.05, noise_seed=seed, aod_seed=seed,
                                     sigma_alpha=0.02)
        series = estimator.extract_phases(syn.frames)
        est = estimator.estimate_window(series, estimator.EstimatorConfig(), scene.wavelength)
        outs.append(est.theta.as_array())
    diff = float(np.max(np.abs(outs[0] - outs[1]) / np.maximum(np.abs(outs[0]), 1e-300)))
    return diff <= 1e-12, f"max relative difference across offset seeds {diff:.1e}"


CHECKS = {
    "closed-form round trip": check_closed_form_roundtrip,
    "analytic Jacobian": check_jacobian,
    "Golay complementarity": check_golay,
    "derived CRLB vs FIM oracle": check_crlb,
    "offset invariance": check_offset_invariance,
}


def run_selftest(verbose: bool = False) -> bool:
    ok_all = True
    for name, fn in CHECKS.items():
        ok, detail = fn()
        ok_all &= ok
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok_all
