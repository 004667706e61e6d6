"""Tests for quantum objects: bases, Bloch coordinates, Born probabilities,
random ensembles and square-root measurements."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from tomolin import qstate

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


class TestGellmannBasis:
    def test_qubit_basis_is_scaled_paulis(self):
        basis = qstate.gellmann_basis(2)
        assert_allclose(basis.gammas[0], SX / np.sqrt(2), atol=1e-15)
        assert_allclose(basis.gammas[1], SY / np.sqrt(2), atol=1e-15)
        assert_allclose(basis.gammas[2], SZ / np.sqrt(2), atol=1e-15)

    def test_qutrit_gram_matrix(self):
        basis = qstate.gellmann_basis(3)
        gram = np.einsum("aij,bji->ab", basis.gammas, basis.gammas).real
        assert_allclose(gram, np.eye(8), atol=1e-14)

    @pytest.mark.parametrize("d", range(2, 9))
    def test_count_tracelessness_hermiticity(self, d):
        basis = qstate.gellmann_basis(d)
        assert basis.gammas.shape == (d * d - 1, d, d)
        assert np.abs(np.trace(basis.gammas, axis1=1, axis2=2)).max() < 1e-14
        dev = np.abs(basis.gammas - np.conj(np.swapaxes(basis.gammas, 1, 2))).max()
        assert dev < 1e-14
        gram = np.einsum("aij,bji->ab", basis.gammas, basis.gammas).real
        assert np.abs(gram - np.eye(d * d - 1)).max() < 1e-12

    def test_rejects_small_dimension(self):
        with pytest.raises(ValueError):
            qstate.gellmann_basis(1)


class TestBloch:
    def test_maximally_mixed_maps_to_zero(self):
        basis = qstate.gellmann_basis(3)
        r = qstate.state_to_bloch(np.eye(3) / 3, basis)
        assert np.abs(r).max() < 1e-15

    def test_ground_state_qubit(self):
        basis = qstate.gellmann_basis(2)
        rho = np.diag([1.0, 0.0]).astype(complex)
        r = qstate.state_to_bloch(rho, basis)
        assert_allclose(r, [0.0, 0.0, 1.0 / np.sqrt(2)], atol=1e-15)

    @pytest.mark.parametrize("d", [2, 3, 4, 6])
    def test_round_trip(self, d):
        rng = np.random.default_rng(d)
        basis = qstate.gellmann_basis(d)
        rho = qstate.random_density_hs(d, rng)
        back = qstate.bloch_to_state(qstate.state_to_bloch(rho, basis), basis)
        assert np.abs(back - rho).max() < 1e-12

    def test_batched_round_trip(self):
        rng = np.random.default_rng(5)
        basis = qstate.gellmann_basis(3)
        rhos = qstate.random_density_hs(3, rng, size=10)
        rs = qstate.state_to_bloch(rhos, basis)
        assert rs.shape == (10, 8)
        assert np.abs(qstate.bloch_to_state(rs, basis) - rhos).max() < 1e-12

    def test_pure_state_radius(self):
        rng = np.random.default_rng(6)
        basis = qstate.gellmann_basis(4)
        kets = qstate.haar_random_pure(4, rng, size=50)
        rhos = np.einsum("mi,mj->mij", kets, kets.conj())
        norms = np.linalg.norm(qstate.state_to_bloch(rhos, basis), axis=1)
        assert_allclose(norms, np.sqrt(3.0 / 4.0), atol=1e-9)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            qstate.state_to_bloch(np.eye(3), qstate.gellmann_basis(2))


class TestDetectorModel:
    def test_computational_basis_offsets(self):
        basis = qstate.gellmann_basis(2)
        povm = qstate.Povm(dim=2, elements=np.array([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])], dtype=complex))
        det = qstate.povm_to_affine(povm, basis)
        assert_allclose(det.offset, [0.5, 0.5], atol=1e-15)

    @pytest.mark.parametrize("d", [2, 3, 4, 6])
    def test_sum_rules(self, d):
        rng = np.random.default_rng(d + 10)
        basis = qstate.gellmann_basis(d)
        povm = qstate.square_root_measurement(qstate.haar_random_pure(d, rng, size=2 * d))
        det = qstate.povm_to_affine(povm, basis)
        # completeness forces sum(b) = 1 and zero column sums of A
        assert det.offset.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.abs(det.amatrix.sum(axis=0)).max() < 1e-12

    @pytest.mark.parametrize("d", [2, 3, 4, 6])
    def test_affine_matches_born(self, d):
        rng = np.random.default_rng(d + 20)
        basis = qstate.gellmann_basis(d)
        for _ in range(25):
            povm = qstate.square_root_measurement(qstate.haar_random_pure(d, rng, size=d + 3))
            det = qstate.povm_to_affine(povm, basis)
            rho = qstate.random_density_hs(d, rng)
            r = qstate.state_to_bloch(rho, basis)
            assert np.abs(det.probabilities(r) - qstate.born_probabilities(rho, povm)).max() < 1e-12

    def test_augmented_layout(self):
        det = qstate.DetectorModel(offset=np.array([0.25, 0.75]), amatrix=np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert_allclose(det.augmented(), [[0.25, 1.0, 2.0], [0.75, 3.0, 4.0]])


class TestBornProbabilities:
    def test_maximally_mixed(self):
        rng = np.random.default_rng(31)
        povm = qstate.square_root_measurement(qstate.haar_random_pure(3, rng, size=5))
        p = qstate.born_probabilities(np.eye(3) / 3, povm)
        expected = np.trace(povm.elements, axis1=1, axis2=2).real / 3
        assert_allclose(p, expected, atol=1e-14)

    def test_projective_ground_state(self):
        povm = qstate.Povm(dim=2, elements=np.array([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])], dtype=complex))
        assert_allclose(qstate.born_probabilities(np.diag([1.0, 0.0]).astype(complex), povm), [1.0, 0.0], atol=1e-15)

    def test_normalised_and_nonnegative(self):
        rng = np.random.default_rng(32)
        for d in (2, 4):
            povm = qstate.square_root_measurement(qstate.haar_random_pure(d, rng, size=2 * d))
            p = qstate.born_probabilities(qstate.random_density_hs(d, rng), povm)
            assert p.sum() == pytest.approx(1.0, abs=1e-9)
            assert p.min() > -1e-10


class TestRandomEnsembles:
    def test_haar_unit_norm(self):
        rng = np.random.default_rng(41)
        kets = qstate.haar_random_pure(5, rng, size=100)
        assert_allclose(np.linalg.norm(kets, axis=1), 1.0, atol=1e-12)

    def test_haar_one_dimensional(self):
        rng = np.random.default_rng(42)
        v = qstate.haar_random_pure(1, rng)
        assert v.shape == (1,)
        assert abs(abs(v[0]) - 1.0) < 1e-12

    def test_haar_overlap_uniformity(self):
        # for d=2 the overlap |<0|phi>|^2 is uniform on [0,1]: mean 1/2
        rng = np.random.default_rng(43)
        kets = qstate.haar_random_pure(2, rng, size=10_000)
        overlap = np.abs(kets[:, 0]) ** 2
        three_sigma = 3.0 / np.sqrt(12.0 * 10_000)
        assert abs(overlap.mean() - 0.5) < three_sigma

    def test_hs_density_invariants(self):
        rng = np.random.default_rng(44)
        rhos = qstate.random_density_hs(3, rng, size=50)
        assert_allclose(np.trace(rhos, axis1=1, axis2=2).real, 1.0, atol=1e-12)
        for rho in rhos:
            assert np.linalg.eigvalsh(rho)[0] > -1e-12
            assert np.abs(rho - rho.conj().T).max() < 1e-12

    def test_hs_density_scalar_case(self):
        rng = np.random.default_rng(45)
        assert_allclose(qstate.random_density_hs(1, rng), [[1.0]], atol=1e-15)

    def test_hs_mean_purity_against_quadrature_oracle(self):
        # for d=2 the squared-radius density is prop. to (2x-1)^2 on [0,1];
        # integrate purity x^2 + (1-x)^2 against it numerically
        x = np.linspace(0.0, 1.0, 20_001)
        weight = (2 * x - 1) ** 2
        purity = x**2 + (1 - x) ** 2
        oracle = np.trapezoid(weight * purity, x) / np.trapezoid(weight, x)
        rng = np.random.default_rng(46)
        rhos = qstate.random_density_hs(2, rng, size=10_000)
        sample = np.einsum("bij,bji->b", rhos, rhos).real
        three_sigma = 3.0 * sample.std() / np.sqrt(sample.size)
        assert abs(sample.mean() - oracle) < three_sigma
        assert oracle == pytest.approx(0.8, abs=1e-6)

    def test_pure_density_projectors(self):
        rng = np.random.default_rng(47)
        rhos = qstate.random_density_pure(3, rng, size=20)
        purity = np.einsum("bij,bji->b", rhos, rhos).real
        assert_allclose(purity, 1.0, atol=1e-12)


class TestSquareRootMeasurement:
    def test_orthonormal_states_give_projectors(self):
        kets = np.eye(3, dtype=complex)
        povm = qstate.square_root_measurement(kets)
        for j in range(3):
            assert_allclose(povm.elements[j], np.outer(kets[j], kets[j].conj()), atol=1e-12)

    @pytest.mark.parametrize("d,m", [(2, 2), (2, 5), (3, 4), (4, 12), (3, 9)])
    def test_completeness(self, d, m):
        rng = np.random.default_rng(100 * d + m)
        povm = qstate.square_root_measurement(qstate.haar_random_pure(d, rng, size=m))
        povm.validate()
        assert np.abs(povm.elements.sum(axis=0) - np.eye(d)).max() < 1e-9

    def test_two_state_case_against_closed_form(self):
        # states |0> and |+>; G = [[3/2, 1/2], [1/2, 1/2]], and for a SPD
        # 2x2 matrix sqrt(G) = (G + sqrt(det) I) / sqrt(tr + 2 sqrt(det))
        kets = np.array([[1.0, 0.0], [1.0 / np.sqrt(2), 1.0 / np.sqrt(2)]], dtype=complex)
        gram = np.array([[1.5, 0.5], [0.5, 0.5]])
        sqrt_det = np.sqrt(np.linalg.det(gram))
        sqrt_g = (gram + sqrt_det * np.eye(2)) / np.sqrt(np.trace(gram) + 2 * sqrt_det)
        g_inv_half = np.linalg.inv(sqrt_g)
        expected = np.array([
            g_inv_half @ np.outer(k, k.conj()) @ g_inv_half for k in kets
        ])
        povm = qstate.square_root_measurement(kets)
        assert np.abs(povm.elements - expected).max() < 1e-10

    def test_rank_deficient_gram_rejected(self):
        kets = np.array([[1.0, 0.0], [1.0, 0.0]], dtype=complex)
        with pytest.raises(qstate.RankDeficientGramError):
            qstate.square_root_measurement(kets)

    def test_too_few_states_rejected(self):
        with pytest.raises(ValueError, match="at least"):
            qstate.square_root_measurement(np.array([[1.0, 0.0]], dtype=complex))
