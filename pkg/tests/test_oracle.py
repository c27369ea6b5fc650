"""Exact-dynamics oracle checked against brute-force dense linear algebra.

Everything here rebuilds operators from explicit 2x2 Pauli matrices and
Kronecker products inside the test, so the oracle's bit tricks and
Krylov stepping are validated against plain matrix arithmetic.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.linalg import expm

from ctwa import oracle
from ctwa.model import (
    CouplingTerm,
    FieldTerm,
    InitialStateSpec,
    ProductState,
    SpinModel,
    bloch_spinor,
    realize_initial_state,
)

PAULI = {
    "I": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def kron_op(n, site_ops):
    """Operator with the given letters on sites, identity elsewhere."""
    m = np.array([[1.0 + 0j]])
    for site in range(n):
        m = np.kron(m, PAULI[site_ops.get(site, "I")])
    return m


def brute_hamiltonian(model):
    n = model.n_sites
    h = np.zeros((2**n, 2**n), dtype=complex)
    for f in model.fields:
        h += f.coeff * kron_op(n, {f.site: f.axis})
    for c in model.couplings:
        h += c.coeff * kron_op(n, {c.site_i: c.axis_i, c.site_j: c.axis_j})
    return h


def chain_model(n=3):
    return SpinModel(
        n_sites=n,
        couplings=tuple(
            CouplingTerm(i, i + 1, a, b, w)
            for i in range(n - 1)
            for a, b, w in (("x", "x", 0.4), ("z", "z", -0.2), ("x", "y", 0.15))
        ),
        fields=(FieldTerm(0, "z", 0.9), FieldTerm(n - 1, "x", -0.5), FieldTerm(1, "y", 0.3)),
    )


def random_product(n, seed):
    rng = np.random.default_rng(seed)
    spinors = tuple(
        tuple(bloch_spinor(rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi)))
        for _ in range(n)
    )
    return ProductState(spinors)


class TestHamiltonianConstruction:
    def test_sparse_matches_brute_force_kron(self):
        model = chain_model()
        h = oracle.sparse_hamiltonian(model).toarray()
        assert_allclose(h, brute_hamiltonian(model), atol=1e-14)

    def test_hermitian(self):
        h = oracle.sparse_hamiltonian(chain_model()).toarray()
        assert_allclose(h, h.conj().T, atol=1e-14)

    def test_dense_equals_sparse(self):
        model = chain_model()
        assert_allclose(
            oracle.dense_hamiltonian(model),
            oracle.sparse_hamiltonian(model).toarray(),
            atol=0,
        )

    def test_site_size_limits(self):
        big = SpinModel(n_sites=oracle.MAX_SITES + 1, couplings=())
        with pytest.raises(ValueError, match="16"):
            oracle.sparse_hamiltonian(big)
        mid = SpinModel(n_sites=11, couplings=())
        with pytest.raises(ValueError, match="10"):
            oracle.dense_hamiltonian(mid)

    def test_repeated_site_in_string_rejected(self):
        with pytest.raises(ValueError, match="repeated"):
            oracle.string_masks((1, 1), ("x", "z"), 3)


class TestStrings:
    @pytest.mark.parametrize(
        "sites,letters", [((0,), "x"), ((1,), "y"), ((2,), "z"), ((0, 2), "yz"), ((0, 1, 2), "xyz")]
    )
    def test_apply_string_matches_matrix(self, sites, letters):
        n = 3
        rng = np.random.default_rng(1)
        psi = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        x, z, c = oracle.string_masks(sites, letters, n)
        mat = kron_op(n, dict(zip(sites, letters)))
        assert_allclose(oracle.apply_string(psi, x, z, c, n), mat @ psi, atol=1e-13)

    def test_string_expectation_is_real_quadratic_form(self):
        n = 2
        rng = np.random.default_rng(2)
        psi = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        psi /= np.linalg.norm(psi)
        x, z, c = oracle.string_masks((0, 1), "xy", n)
        mat = kron_op(n, {0: "x", 1: "y"})
        assert_allclose(
            oracle.string_expectation(psi, x, z, c, n),
            float(np.real(psi.conj() @ mat @ psi)),
            atol=1e-13,
        )

    def test_expectation_series_matches_per_state_values(self):
        n = 2
        rng = np.random.default_rng(3)
        states = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        x, z, c = oracle.string_masks((0,), "y", n)
        series = oracle.expectation_series(states, x, z, c, n)
        for t in range(4):
            assert_allclose(
                series[t], oracle.string_expectation(states[t], x, z, c, n), atol=1e-13
            )


class TestStateVectors:
    def test_all_up_is_basis_index_zero(self):
        state = realize_initial_state(InitialStateSpec("all_up"), 3)
        psi = oracle.product_state_vector(state)
        expect = np.zeros(8)
        expect[0] = 1.0
        assert_allclose(psi, expect, atol=0)

    def test_amplitudes_factorize_first_site_most_significant(self):
        state = random_product(3, 4)
        psi = oracle.product_state_vector(state)
        for idx in range(8):
            amp = 1.0 + 0j
            for site in range(3):
                bit = (idx >> (3 - 1 - site)) & 1
                amp *= state.spinors[site][bit]
            assert_allclose(psi[idx], amp, atol=1e-14)


class TestEvolution:
    def test_larmor_precession(self):
        h = 0.7
        model = SpinModel(n_sites=1, couplings=(), fields=(FieldTerm(0, "x", h),))
        psi0 = np.array([1.0, 0.0], dtype=complex)
        times = np.linspace(0.0, 4.0, 17)
        states = oracle.evolve(oracle.sparse_hamiltonian(model), psi0, times)
        xz = oracle.string_masks((0,), "z", 1)
        xy = oracle.string_masks((0,), "y", 1)
        assert_allclose(
            oracle.expectation_series(states, *xz, 1), np.cos(2 * h * times), atol=1e-9
        )
        assert_allclose(
            oracle.expectation_series(states, *xy, 1), -np.sin(2 * h * times), atol=1e-9
        )

    def test_krylov_matches_dense_exponential(self):
        model = chain_model()
        psi0 = oracle.product_state_vector(random_product(3, 5))
        times = np.array([0.0, 0.4, 1.3, 5.0])
        krylov = oracle.evolve(oracle.sparse_hamiltonian(model), psi0, times)
        dense = oracle.dense_evolve(model, psi0, times)
        assert_allclose(krylov, dense, atol=1e-9)

    def test_single_long_step_triggers_halving(self):
        model = chain_model()
        psi0 = oracle.product_state_vector(random_product(3, 6))
        out = oracle.evolve(oracle.sparse_hamiltonian(model), psi0, [25.0], m_max=8)
        dense = oracle.dense_evolve(model, psi0, [25.0])
        assert_allclose(out, dense, atol=1e-8)

    def test_norm_and_energy_conserved(self):
        model = chain_model()
        h = oracle.sparse_hamiltonian(model)
        psi0 = oracle.product_state_vector(random_product(3, 7))
        states = oracle.evolve(h, psi0, np.linspace(0, 6, 13))
        assert_allclose(np.linalg.norm(states, axis=1), 1.0, atol=1e-10)
        e = np.einsum("ti,ti->t", states.conj(), (h @ states.T).T).real
        assert np.abs(e - e[0]).max() < 1e-9

    def test_descending_times_rejected(self):
        model = chain_model()
        h = oracle.sparse_hamiltonian(model)
        with pytest.raises(ValueError, match="nondecreasing"):
            oracle.evolve(h, np.ones(8, dtype=complex) / np.sqrt(8), [1.0, 0.5])


class TestTwoTime:
    def test_equal_time_anticommutator_and_commutator(self):
        model = SpinModel(n_sites=1, couplings=(), fields=(FieldTerm(0, "z", 0.4),))
        h = oracle.sparse_hamiltonian(model)
        psi0 = np.array([1.0, 0.0], dtype=complex)
        sym, com = oracle.two_time_correlators(
            h, psi0, 1, ((0,), "x"), [((0,), "y")], 0.0, [0.0]
        )
        # {x, y} = 0 and i[x, y] = -2z
        assert_allclose(sym[0, 0], 0.0, atol=1e-12)
        assert_allclose(com[0, 0], -2.0, atol=1e-12)

    def test_single_spin_response_anchor(self):
        h_field = 0.8
        model = SpinModel(n_sites=1, couplings=(), fields=(FieldTerm(0, "x", h_field),))
        h = oracle.sparse_hamiltonian(model)
        psi0 = np.array([1.0, 0.0], dtype=complex)
        t2 = np.linspace(0.0, 2.5, 11)
        sym, com = oracle.two_time_correlators(
            h, psi0, 1, ((0,), "x"), [((0,), "z")], 0.0, t2
        )
        assert_allclose(com[:, 0], -2.0 * np.sin(2 * h_field * t2), atol=1e-9)
        assert_allclose(sym[:, 0], 0.0, atol=1e-9)

    def test_matches_brute_force_heisenberg_picture(self):
        model = chain_model()
        n = model.n_sites
        hd = brute_hamiltonian(model)
        psi0 = oracle.product_state_vector(random_product(n, 8))
        op_a = ((0,), "z")
        ops_b = [((2,), "z"), ((0, 1), "xy")]
        t1 = 0.3
        t2 = np.array([0.3, 0.8, 1.6])
        sym, com = oracle.two_time_correlators(
            oracle.sparse_hamiltonian(model), psi0, n, op_a, ops_b, t1, t2
        )
        a = kron_op(n, dict(zip(*op_a)))
        u1 = expm(-1j * hd * t1)
        a_h = u1.conj().T @ a @ u1
        for i, t in enumerate(t2):
            u2 = expm(-1j * hd * t)
            for j, b_spec in enumerate(ops_b):
                b = kron_op(n, dict(zip(*b_spec)))
                b_h = u2.conj().T @ b @ u2
                sym_ref = np.real(psi0.conj() @ (a_h @ b_h + b_h @ a_h) @ psi0)
                com_ref = np.real(1j * (psi0.conj() @ (a_h @ b_h - b_h @ a_h) @ psi0))
                assert_allclose(sym[i, j], sym_ref, atol=1e-8)
                assert_allclose(com[i, j], com_ref, atol=1e-8)

    def test_observation_before_kick_rejected(self):
        model = chain_model()
        h = oracle.sparse_hamiltonian(model)
        psi0 = oracle.product_state_vector(random_product(3, 9))
        with pytest.raises(ValueError, match="precede"):
            oracle.two_time_correlators(h, psi0, 3, ((0,), "x"), [((1,), "x")], 1.0, [0.2])


class TestReducedDensityMatrix:
    def test_product_state_gives_pure_site_matrices(self):
        state = random_product(3, 10)
        psi = oracle.product_state_vector(state)
        for site in range(3):
            rho = oracle.reduced_density_matrix(psi, 3, [site])
            s = np.asarray(state.spinors[site])
            assert_allclose(rho, np.outer(s, s.conj()), atol=1e-13)

    def test_ghz_site_marginal_is_maximally_mixed(self):
        psi = np.zeros(8, dtype=complex)
        psi[0] = psi[7] = 1 / np.sqrt(2)
        rho = oracle.reduced_density_matrix(psi, 3, [1])
        assert_allclose(rho, np.eye(2) / 2, atol=1e-14)

    def test_nonadjacent_pair_matches_einsum_partial_trace(self):
        rng = np.random.default_rng(11)
        psi = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        psi /= np.linalg.norm(psi)
        rho = oracle.reduced_density_matrix(psi, 4, [0, 2])
        t = psi.reshape(2, 2, 2, 2)
        ref = np.einsum("abcd,ebfd->acef", t, t.conj()).reshape(4, 4)
        assert_allclose(rho, ref, atol=1e-13)
        assert_allclose(np.trace(rho), 1.0, atol=1e-13)
