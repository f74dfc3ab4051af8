import csv
import math

import numpy as np
import pytest

from bidoppler import crlb
from bidoppler.crlb import FimPoint, NoiseModel
from bidoppler.errors import InfiniteVarianceError
from bidoppler.estimator import ParamVector

LAM = 0.005
HEATMAP_ALPHAS = (crlb.HEATMAP_ALPHA_T, math.pi / 3, -math.pi / 2)
HEATMAP_THETA = ParamVector(300.0, 2.0, 3.0)
FROZEN_FIM = np.array([
    [4.934802200542563e-06, 0.0024132439523537096, -0.000571846115614415],
    [0.0024132439523537096, 13.727309349836087, -1.6056679565419434],
    [-0.000571846115614415, -1.6056679565419434, 1.0408405498572126],
])
FROZEN_CRLB = 226641.33113


def heatmap_point(theta=HEATMAP_THETA, alphas=HEATMAP_ALPHAS):
    return FimPoint(theta, alphas, crlb.heatmap_noise(), crlb.HEATMAP_GAP, LAM)


def random_point(rng, margin=0.05):
    while True:
        a = rng.uniform(-math.pi, math.pi, 3)
        if crlb.degeneracy(a, margin) == "":
            break
    noise = NoiseModel(rng.uniform(1e-3, 1), rng.uniform(1, 100), rng.uniform(0.1, 1), rng.uniform(0.05, 1, 3))
    theta = ParamVector(rng.uniform(-1000, 1000), rng.uniform(0, 2 * math.pi), rng.uniform(0.5, 5))
    return FimPoint(theta, tuple(a), noise, rng.uniform(1e-4, 1e-3), LAM)


class TestNoiseModel:
    def test_direct_substitution(self):
        assert crlb.phase_noise_variance(NoiseModel(0.02, 1.0, 1.0, (1.0,)), 0) == pytest.approx(0.01)

    def test_zero_amplitude(self):
        with pytest.raises(InfiniteVarianceError):
            crlb.phase_noise_variance(NoiseModel(0.02, 1.0, 1.0, (0.0,)), 0)
        with pytest.raises(InfiniteVarianceError):
            NoiseModel(0.02, 1.0, 0.0, (1.0,)).kappas

    def test_chain_identity(self):
        n = NoiseModel(0.03, 7.0, 0.4, (0.05, 0.2, 0.3))
        gap = 0.25e-3
        var_phi = np.array([crlb.phase_noise_variance(n, i) for i in range(3)])
        var_los = crlb.phase_noise_variance(n, "los")
        rel = var_phi + var_los
        assert np.allclose(n.relative_phase_variance(), rel, rtol=1e-15)
        diff = 2 * rel
        assert np.allclose(n.difference_variance([gap])[:, 0], diff / (2 * math.pi * gap) ** 2, rtol=1e-15)

    def test_variances_decrease_with_gap_and_gain(self):
        a = NoiseModel(0.01, 10.0, 1.0, (0.5,))
        assert np.all(np.diff(a.difference_variance([1e-4, 2e-4, 4e-4])[0]) < 0)
        b = NoiseModel(0.01, 20.0, 1.0, (0.5,))
        assert b.difference_variance([1e-4])[0, 0] < a.difference_variance([1e-4])[0, 0]

    def test_kappa_floor(self):
        n = NoiseModel(0.01, 1.0, 0.3, (5.0, 9.0))
        assert np.all(n.kappas >= 0.3 ** -2)

    def test_monte_carlo_phase_variance(self):
        rng = np.random.default_rng(0)
        amp = 0.7
        sigma_h = amp / 30
        noise = rng.normal(0, sigma_h / math.sqrt(2), (2, 100_000))
        z = amp * np.exp(0.4j) + noise[0] + 1j * noise[1]
        measured = np.var(np.angle(z))
        n = NoiseModel(sigma_h ** 2 * 4.0, 4.0, 1.0, (amp,))
        assert measured == pytest.approx(crlb.phase_noise_variance(n, 0), rel=0.05)


class TestFim:
    def test_frozen_oracle(self):
        assert np.allclose(crlb.fim_numeric_oracle(heatmap_point()), FROZEN_FIM, rtol=1e-8, atol=0)

    def test_consistent_matches_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            p = random_point(rng)
            o = crlb.fim_numeric_oracle(p)
            assert np.allclose(crlb.fim(p, "consistent"), o, rtol=1e-6, atol=1e-9 * np.abs(o).max())

    def test_printed_entries_off_by_gap(self):
        p = heatmap_point()
        printed, consistent = crlb.fim(p, "printed"), crlb.fim(p, "consistent")
        for ij in [(1, 1), (1, 2), (2, 2)]:
            assert printed[ij] * p.gap == pytest.approx(consistent[ij], rel=1e-12)
        for ij in [(0, 0), (0, 1), (0, 2)]:
            assert printed[ij] == consistent[ij]

    def test_j12_vanishes_when_rho_t_zero(self):
        at = 1.0
        eta = at / 2 + math.pi / 2  # sin(at - eta) + sin(eta) = 0
        p = heatmap_point(ParamVector(100.0, eta, 2.0), (at, 2.5, -1.0))
        assert abs(p.rho[0]) < 1e-15
        assert abs(crlb.fim(p)[0, 1]) < 1e-12

    def test_zero_speed_structure(self):
        p = heatmap_point(ParamVector(100.0, 1.0, 0.0))
        j = crlb.fim(p)
        assert j[1, 1] == 0.0 and j[0, 1] == 0.0

    def test_symmetric_psd(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            o = crlb.fim_numeric_oracle(random_point(rng))
            assert np.allclose(o, o.T, rtol=1e-13, atol=0)
            assert np.linalg.eigvalsh(o).min() >= -1e-9 * np.abs(o).max()

    def test_multi_frame_additive(self):
        p = heatmap_point()
        total = crlb.fim_multi(p, [p.gap] * 4)
        assert np.allclose(total, 4 * crlb.fim_numeric_oracle(p), rtol=1e-12)

    def test_conformance_report(self):
        rep = crlb.conformance_report(heatmap_point())
        assert rep.consistent_fim_error < 1e-6
        assert rep.crlb_derived_error < 1e-6
        assert rep.fim_entry_error["J11"] < 1e-6
        assert rep.fim_entry_error["J22"] > 0.5
        assert any("J22" in line for line in rep.lines())


class TestBound:
    def test_frozen_value(self):
        p = heatmap_point()
        assert crlb.crlb_exact(p.alphas, p.noise, p.gap) == pytest.approx(FROZEN_CRLB, rel=1e-9)

    def test_matches_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            p = random_point(rng)
            assert crlb.crlb_exact(p.alphas, p.noise, p.gap) == pytest.approx(crlb.crlb_from_oracle(p), rel=1e-6)

    def test_independent_routes_agree(self):
        rng = np.random.default_rng(4)
        for _ in range(500):
            p = random_point(rng)
            assert crlb.crlb_exact(p.alphas, p.noise, p.gap) == pytest.approx(
                crlb.crlb_from_fim_difference_route(p.alphas, p.noise, p.gap), rel=1e-9)

    def test_invariant_to_speed_and_heading(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            p = random_point(rng)
            ref = crlb.crlb_from_oracle(p)
            q = FimPoint(ParamVector(p.theta.f_d, rng.uniform(0, 2 * math.pi), rng.uniform(0.5, 5)),
                         p.alphas, p.noise, p.gap, LAM)
            assert crlb.crlb_from_oracle(q) == pytest.approx(ref, rel=1e-8)

    def test_coincident_statics_diverge(self):
        n = crlb.heatmap_noise()
        assert crlb.crlb_exact((1.0, 0.7, 0.7), n, 1e-3) == math.inf
        assert crlb.degeneracy((1.0, 0.7, 0.7)) == "coincident_static_aods"
        assert crlb.degeneracy((1.0, 0.0, 0.7)) == "static_aod_on_los"
        near = [crlb.crlb_exact((1.0, 0.7 + d, 0.7), n, 1e-3) for d in (1e-1, 1e-2, 1e-3)]
        assert near[0] < near[1] < near[2]

    def test_upper_dominates(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            p = random_point(rng)
            assert crlb.crlb_upper(p.alphas, p.noise, p.gap) >= crlb.crlb_exact(p.alphas, p.noise, p.gap)

    def test_zeta_bound(self):
        rng = np.random.default_rng(7)
        a = rng.uniform(-math.pi, math.pi, (100_000, 3))
        k = rng.uniform(1, 400, (100_000, 3))
        for alphas, kap in zip(a, k):
            assert crlb.zeta(alphas, kap, "derived") < 18 * kap.sum()

    def test_monotonicity(self):
        a = HEATMAP_ALPHAS
        base = crlb.crlb_exact(a, NoiseModel(1e-2, 10.0, 0.1, (0.05, 0.2, 0.2)), 2.5e-4)
        assert crlb.crlb_exact(a, NoiseModel(1e-2, 20.0, 0.1, (0.05, 0.2, 0.2)), 2.5e-4) < base
        assert crlb.crlb_exact(a, NoiseModel(1e-2, 10.0, 0.1, (0.05, 0.2, 0.2)), 3e-4) < base
        assert crlb.crlb_exact(a, NoiseModel(2e-2, 10.0, 0.1, (0.05, 0.2, 0.2)), 2.5e-4) > base

    def test_printed_form_differs(self):
        p = heatmap_point()
        assert crlb.crlb_exact(p.alphas, p.noise, p.gap, "printed") == pytest.approx(-18875.8966, rel=1e-6)

    def test_unknown_form(self):
        with pytest.raises(ValueError):
            crlb.crlb_exact(HEATMAP_ALPHAS, crlb.heatmap_noise(), 1e-3, "other")


class TestGrid:
    def test_grid_csv(self, tmp_path):
        rows = crlb.crlb_grid(crlb.HEATMAP_ALPHA_T, crlb.heatmap_noise(), crlb.HEATMAP_GAP, n=13)
        assert len(rows) == 169
        out = tmp_path / "grid.csv"
        crlb.write_grid_csv(rows, out)
        with open(out) as fh:
            read = list(csv.DictReader(fh))
        assert len(read) == 169
        diag = [r for r in read if r["alpha1"] == r["alpha2"]]
        assert all(r["degenerate"] for r in diag)
        assert all(float(r["crlb_sqrt_hz"]) == math.inf for r in diag)
