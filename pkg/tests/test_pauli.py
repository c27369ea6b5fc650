"""Pauli-string indexing, products, and structure constants against dense matrices."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctwa import pauli

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
SI = np.eye(2, dtype=complex)
BY_LETTER = {"I": SI, "x": SX, "y": SY, "z": SZ}


def matrix_from_label(label):
    out = np.eye(1, dtype=complex)
    for letter in label:
        out = np.kron(out, BY_LETTER[letter])
    return out


def all_labels(n):
    if n == 0:
        yield ""
        return
    for rest in all_labels(n - 1):
        for letter in "Ixyz":
            yield letter + rest


def test_label_index_roundtrip():
    for n in (1, 2, 3):
        for alpha, label in enumerate(sorted(all_labels(n), key=pauli.index_from_label)):
            assert pauli.index_from_label(label) == alpha
            assert pauli.label_from_index(alpha, n) == label


def test_first_site_is_most_significant_digit():
    # base-4 positional indexing, first letter outermost in the kron
    assert pauli.index_from_label("xI") == 4
    assert pauli.index_from_label("Ix") == 1
    assert pauli.index_from_label("zy") == 3 * 4 + 2


def test_matrices_match_kron_construction():
    for n in (1, 2):
        for label in all_labels(n):
            alpha = pauli.index_from_label(label)
            np.testing.assert_allclose(
                pauli.pauli_matrix(alpha, n), matrix_from_label(label), atol=0
            )


def test_orthogonality_and_identity():
    n = 2
    dim = 4**n
    mats = [pauli.pauli_matrix(a, n) for a in range(dim)]
    assert np.array_equal(mats[0], np.eye(2**n))
    gram = np.array([[np.trace(a.conj().T @ b) for b in mats] for a in mats])
    np.testing.assert_allclose(gram, 2**n * np.eye(dim), atol=1e-13)


def test_masks_roundtrip():
    for n in (1, 2, 3):
        for alpha in range(4**n):
            x, z = pauli.masks_from_index(alpha, n)
            assert pauli.index_from_masks(x, z, n) == alpha


@settings(deadline=None, max_examples=200)
@given(st.integers(0, 63), st.integers(0, 63))
def test_product_against_matrices(alpha, beta):
    n = 3
    gamma, phase = pauli.product(alpha, beta, n)
    assert gamma == alpha ^ beta
    lhs = pauli.pauli_matrix(alpha, n) @ pauli.pauli_matrix(beta, n)
    np.testing.assert_allclose(lhs, phase * pauli.pauli_matrix(gamma, n), atol=1e-13)


@settings(deadline=None, max_examples=200)
@given(st.integers(0, 63), st.integers(0, 63))
def test_f_scalar_against_commutator(alpha, beta):
    n = 3
    f = pauli.f_scalar(alpha, beta, n)
    a = pauli.pauli_matrix(alpha, n)
    b = pauli.pauli_matrix(beta, n)
    comm = a @ b - b @ a
    if f == 0.0:
        assert not comm.any()
        assert pauli.commutes(alpha, beta, n)
    else:
        c = pauli.pauli_matrix(alpha ^ beta, n)
        np.testing.assert_allclose(comm, 1j * f * c, atol=1e-13)
        assert not pauli.commutes(alpha, beta, n)


def test_f_sign_anchor():
    # [sigma_z, sigma_x] = 2i sigma_y on the first site of a pair
    zi = pauli.index_from_label("zI")
    xi = pauli.index_from_label("xI")
    assert pauli.f_scalar(zi, xi, 2) == 2.0
    assert pauli.f_scalar(xi, zi, 2) == -2.0


def test_f_column_matches_scalar():
    n = 2
    xm, zm = pauli.mask_table(n)
    for beta in range(4**n):
        col = pauli.f_column(beta, xm, zm)
        expect = [pauli.f_scalar(a, beta, n) for a in range(4**n)]
        np.testing.assert_array_equal(col, expect)


def test_f_antisymmetric_in_first_pair():
    n = 2
    for alpha in range(16):
        for beta in range(16):
            assert pauli.f_scalar(alpha, beta, n) == -pauli.f_scalar(beta, alpha, n)


def test_identity_commutes_with_everything():
    for beta in range(64):
        assert pauli.f_scalar(0, beta, 3) == 0.0


@settings(deadline=None, max_examples=50)
@given(st.integers(0, 255))
def test_apply_tables_match_matrix_action(alpha):
    n = 4
    rng = np.random.default_rng(alpha)
    psi = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    perm, phase = pauli.apply_tables([alpha], n)
    applied = phase[0] * psi[perm[0]]
    np.testing.assert_allclose(applied, pauli.pauli_matrix(alpha, n) @ psi, atol=1e-12)


def test_weight_and_support():
    n = 3
    assert pauli.weight(0, n) == 0
    alpha = pauli.index_from_label("xIz")
    assert pauli.weight(alpha, n) == 2
    assert pauli.support_sites(alpha, n) == (0, 2)
    assert pauli.support_sites(0, n) == ()


def test_single_site_y_has_correct_phase():
    # y = i * x * z as strings; the matrix must still be the textbook sigma_y
    alpha = pauli.index_from_label("y")
    np.testing.assert_array_equal(pauli.pauli_matrix(alpha, 1), SY)
