import numpy as np
import pytest

from conftest import reduced_spec
from resonlab import model
from resonlab.errors import ValidationError
from resonlab.fock import SparseOperator
from resonlab.model import build_hamiltonian, decoupled_eigenvalues
from resonlab.spectral import (dense_spectrum, eig_near, theta_report,
                               track_resonance)


class TestDenseSpectrum:
    def test_diagonal_sorted(self):
        d = np.array([3.0, -1.0, 2.0 + 0.5j])
        vals = [v for v, _ in dense_spectrum(SparseOperator.diagonal(d))]
        assert np.allclose(vals, [-1.0, 2.0 + 0.5j, 3.0])

    def test_g0_decoupled_set(self, small_nelson):
        h = build_hamiltonian(small_nelson, 0.2j, 0.0).matrix
        got = np.sort_complex(np.array([v for v, _ in dense_spectrum(h)]))
        want = np.sort_complex(decoupled_eigenvalues(small_nelson, 0.2j))
        assert np.abs(got - want).max() < 1e-12

    def test_cap(self):
        with pytest.raises(ValidationError):
            dense_spectrum(SparseOperator.identity(10), dense_cap=5)


class TestEigNear:
    def test_diagonal_midway(self):
        d = np.arange(1.0, 21.0)
        ests = eig_near(SparseOperator.diagonal(d), 4.5 + 0j, count=2)
        got = sorted(e.value.real for e in ests)
        assert np.allclose(got, [4.0, 5.0], atol=1e-9)

    def test_matches_dense_on_default(self, default_nelson):
        h = build_hamiltonian(default_nelson, 0.3j, 0.05).matrix
        dense_vals = np.array([v for v, _ in dense_spectrum(h)])
        rng = np.random.default_rng(3)
        targets = rng.choice(dense_vals, 5, replace=False) + 0.01 + 0.005j
        for z0 in targets:
            est = eig_near(h, z0, count=1, with_left=False)[0]
            assert np.min(np.abs(dense_vals - est.value)) < 1e-9

    def test_count_clamp(self):
        d = np.arange(1.0, 7.0)
        ests = eig_near(SparseOperator.diagonal(d), 3.0 + 0j, count=50)
        assert len(ests) == 6

    def test_residual_recorded(self, small_nelson):
        h = build_hamiltonian(small_nelson, 0.3j, 0.05).matrix
        for est in eig_near(h, 1.0 - 0.05j, count=3):
            assert est.residual <= 1e-8
            v = est.right_vec
            assert np.linalg.norm(h.mat @ v - est.value * v) <= 1e-8

    def test_left_vectors_biorthogonal(self, small_nelson):
        h = build_hamiltonian(small_nelson, 0.3j, 0.05).matrix
        ests = eig_near(h, 1.0 - 0.05j, count=3)
        for i, a in enumerate(ests):
            for j, b in enumerate(ests):
                if i != j:
                    num = abs(np.vdot(a.left_vec, b.right_vec))
                    assert num < 1e-6


class TestTrackResonance:
    def test_g0_exact(self, small_nelson):
        est = track_resonance(small_nelson, 0.3j, [0.0], 1)[0]
        assert est.value == 1.0 + 0.0j
        assert est.value.imag == 0.0
        assert est.residual == 0.0
        assert est.overlap == 1.0

    def test_negative_imag_for_positive_g(self, small_nelson):
        ests = track_resonance(small_nelson, 0.3j, [0.0, 0.02, 0.05], 1)
        for est in ests[1:]:
            assert est.value.imag < 0
        assert ests[2].value.imag < ests[1].value.imag  # width grows with g

    def test_overlap_column_against_unperturbed(self, small_nelson):
        est = track_resonance(small_nelson, 0.3j, [0.0, 0.05], 1)[-1]
        assert 0.9 < est.overlap <= 1.0

    def test_requires_deformation(self, small_nelson):
        with pytest.raises(ValidationError):
            track_resonance(small_nelson, 0.0, [0.0, 0.05], 1)

    def test_path_must_start_at_zero(self, small_nelson):
        with pytest.raises(ValidationError):
            track_resonance(small_nelson, 0.3j, [0.05], 1)

    def test_conjugate_theta_pairs_eigenvalues(self, small_nelson):
        a = track_resonance(small_nelson, 0.3j, [0.0, 0.05], 1)[-1].value
        b = track_resonance(small_nelson, -0.3j, [0.0], 1)[0].value
        h_conj = build_hamiltonian(small_nelson, -0.3j, 0.05).matrix
        vals = np.array([v for v, _ in dense_spectrum(h_conj)])
        assert np.min(np.abs(vals - np.conj(a))) < 1e-9

    def test_cutoff_tracking(self, small_nelson):
        est = track_resonance(small_nelson, 0.3j, [0.0, 0.05], 1, sigma=0.1)[-1]
        assert est.value.imag < 0
        assert est.sigma == 0.1


class TestThetaReport:
    def test_g0_spread_exactly_zero(self, small_nelson):
        rep = theta_report(small_nelson, 0.0, [0.2j, 0.3j, 0.4j], 1, sigma=0.1)
        assert rep.full_spread == 0.0
        assert rep.cutoff_spread == 0.0

    def test_string_angle_matches_rotation_at_g0(self, small_nelson):
        rep = theta_report(small_nelson, 0.0, [0.2j, 0.3j, 0.4j], 1, sigma=0.1)
        for theta, angle in zip(rep.thetas, rep.string_angles):
            assert abs(angle - (-theta.imag)) < 0.05

    def test_requires_three_thetas_in_band(self, small_nelson):
        with pytest.raises(ValidationError):
            theta_report(small_nelson, 0.0, [0.2j, 0.3j], 1, sigma=0.1)
        with pytest.raises(ValidationError):
            theta_report(small_nelson, 0.0, [0.05j, 0.3j, 0.4j], 1, sigma=0.1)

    def test_spreads_within_grid_tolerance(self):
        # Discretization honesty: tolerance(grid) is the value displacement
        # under grid doubling; the theta spreads stay within it (the genuine
        # cutoff theta-dependence is far below desk-scale resolution).
        thetas = [0.2j, 0.3j, 0.4j]
        coarse = reduced_spec(modes=12)
        fine = reduced_spec(modes=24)
        rep = theta_report(coarse, 0.05, thetas, 1, sigma=0.1)
        tol = max(abs(track_resonance(coarse, t, [0.0, 0.05], 1)[-1].value
                      - track_resonance(fine, t, [0.0, 0.05], 1)[-1].value)
                  for t in thetas)
        assert rep.full_spread <= tol
        assert rep.cutoff_spread <= tol
