"""Exact quantum dynamics on small lattices.

This module is the reference the ensemble methods are judged against.
It deliberately shares no code path with the trajectory machinery: the
Hamiltonian is built as a sparse matrix over the full 2^n Hilbert space
directly from the model terms, states evolve by Krylov-subspace
approximation of the exact propagator, and observables are evaluated as
true quantum expectation values.

Site p maps to bit (n - 1 - p), so the first site is the most
significant bit and basis index 0 is the all-up state.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal, expm

from .model import ProductState, SpinModel

MAX_SITES = 16


def _axis_masks(site: int, axis: str, n: int) -> tuple[int, int, int]:
    """(xmask, zmask, i-power) for a single-site Pauli as i^c X^x Z^z."""
    bit = 1 << (n - 1 - site)
    if axis == "x":
        return bit, 0, 0
    if axis == "y":
        return bit, bit, 1
    if axis == "z":
        return 0, bit, 0
    raise ValueError(f"unknown axis {axis!r}")


def string_masks(sites, letters, n: int) -> tuple[int, int, int]:
    """Masks of a product of single-site Paulis on distinct sites."""
    x = z = c = 0
    for site, letter in zip(sites, letters):
        if letter == "I":
            continue
        xs, zs, cs = _axis_masks(site, letter, n)
        if (x | z) & (xs | zs):
            raise ValueError("repeated site in operator string")
        x |= xs
        z |= zs
        c += cs
    return x, z, c


def hamiltonian_terms(model: SpinModel) -> list[tuple[int, int, int, float]]:
    terms = []
    n = model.n_sites
    for f in model.fields:
        x, z, c = _axis_masks(f.site, f.axis, n)
        terms.append((x, z, c, f.coeff))
    for cp in model.couplings:
        x, z, c = string_masks((cp.site_i, cp.site_j), (cp.axis_i, cp.axis_j), n)
        terms.append((x, z, c, cp.coeff))
    return terms


def _term_entries(x: int, z: int, c: int, coeff: float, n: int):
    cols = np.arange(1 << n, dtype=np.int64)
    rows = cols ^ x
    signs = 1.0 - 2.0 * (np.bitwise_count(cols & z) & 1)
    data = coeff * (1j ** c) * signs
    return rows, cols, data


def sparse_hamiltonian(model: SpinModel) -> sp.csr_matrix:
    n = model.n_sites
    if n > MAX_SITES:
        raise ValueError(f"exact evolution limited to {MAX_SITES} sites, got {n}")
    dim = 1 << n
    rows, cols, data = [], [], []
    for x, z, c, coeff in hamiltonian_terms(model):
        r, cl, d = _term_entries(x, z, c, coeff, n)
        rows.append(r)
        cols.append(cl)
        data.append(d)
    h = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    ).tocsr()
    h.sum_duplicates()
    return h


def dense_hamiltonian(model: SpinModel) -> np.ndarray:
    if model.n_sites > 10:
        raise ValueError("dense Hamiltonian limited to 10 sites")
    return sparse_hamiltonian(model).toarray()


def apply_string(psi: np.ndarray, x: int, z: int, c: int, n: int) -> np.ndarray:
    m = np.arange(1 << n, dtype=np.int64)
    src = m ^ x
    return (1j ** c) * (1.0 - 2.0 * (np.bitwise_count(z & src) & 1)) * psi[..., src]


def string_expectation(psi: np.ndarray, x: int, z: int, c: int, n: int) -> float:
    return float(np.vdot(psi, apply_string(psi, x, z, c, n)).real)


def product_state_vector(state: ProductState) -> np.ndarray:
    psi = np.array([1.0 + 0.0j])
    for spinor in state.spinors:
        psi = np.kron(psi, np.asarray(spinor, dtype=complex))
    return psi


# ---------------------------------------------------------------------------
# Krylov propagation


def _lanczos_attempt(matvec, psi: np.ndarray, dt: float, m_max: int, tol: float):
    """One Krylov approximation of exp(-i dt H) psi; None if not converged."""
    nrm = float(np.linalg.norm(psi))
    if nrm == 0.0:
        return psi.copy()
    v = np.empty((m_max, psi.size), dtype=complex)
    v[0] = psi / nrm
    alphas: list[float] = []
    betas: list[float] = []
    for j in range(m_max):
        w = matvec(v[j])
        a = float(np.vdot(v[j], w).real)
        alphas.append(a)
        w = w - a * v[j]
        if j:
            w -= betas[-1] * v[j - 1]
        # full reorthogonalization keeps the basis clean at long steps
        w -= v[: j + 1].T @ (v[: j + 1].conj() @ w)
        b = float(np.linalg.norm(w))
        theta, q = eigh_tridiagonal(alphas, betas)
        u = q @ (np.exp(-1j * dt * theta) * q[0])
        err = abs(dt) * b * abs(u[j])
        if err < tol or b < 1e-14:
            return nrm * (v[: j + 1].T @ u)
        if j + 1 < m_max:
            betas.append(b)
            v[j + 1] = w / b
    return None


def krylov_propagate(
    matvec, psi: np.ndarray, dt: float, m_max: int = 30, tol: float = 1e-11, _depth: int = 0
) -> np.ndarray:
    """exp(-i dt H) psi with automatic step halving."""
    if dt == 0.0:
        return psi.copy()
    out = _lanczos_attempt(matvec, psi, dt, m_max, tol)
    if out is not None:
        return out
    if _depth >= 40:
        raise RuntimeError("Krylov propagation failed to converge")
    half = krylov_propagate(matvec, psi, dt / 2, m_max, tol, _depth + 1)
    return krylov_propagate(matvec, half, dt / 2, m_max, tol, _depth + 1)


def evolve(
    hamiltonian: sp.spmatrix,
    psi0: np.ndarray,
    times,
    m_max: int = 30,
    tol: float = 1e-11,
) -> np.ndarray:
    """States at the requested times (nt, dim); times must be nondecreasing."""
    times = np.asarray(times, dtype=np.float64)
    if np.any(np.diff(times) < 0):
        raise ValueError("times must be nondecreasing")
    matvec = hamiltonian.dot
    out = np.empty((len(times), psi0.size), dtype=complex)
    psi = np.asarray(psi0, dtype=complex)
    t = 0.0
    for i, target in enumerate(times):
        psi = krylov_propagate(matvec, psi, float(target) - t, m_max, tol)
        t = float(target)
        out[i] = psi
    return out


def dense_evolve(model: SpinModel, psi0: np.ndarray, times) -> np.ndarray:
    """Direct matrix-exponential evolution, for cross-checking small systems."""
    h = dense_hamiltonian(model)
    return np.stack([expm(-1j * float(t) * h) @ psi0 for t in times])


# ---------------------------------------------------------------------------
# derived quantities


def expectation_series(states: np.ndarray, x: int, z: int, c: int, n: int) -> np.ndarray:
    op = apply_string(states, x, z, c, n)
    return np.einsum("ti,ti->t", states.conj(), op).real


def two_time_correlators(
    hamiltonian: sp.spmatrix,
    psi0: np.ndarray,
    n: int,
    op_a: tuple,
    ops_b: list,
    t1: float,
    t2_grid,
    m_max: int = 30,
    tol: float = 1e-11,
):
    """Exact symmetric and commutator correlators of Pauli strings.

    op_a and each entry of ops_b are (sites, letters) pairs.  Returns
    (sym, com) of shape (nt2, n_b) with sym = <{A(t1), B(t2)}> and
    com = i<[A(t1), B(t2)]>.
    """
    t2_grid = np.asarray(t2_grid, dtype=np.float64)
    if len(t2_grid) and t2_grid[0] < t1 - 1e-12:
        raise ValueError("t2 grid precedes t1")
    matvec = hamiltonian.dot
    psi1 = krylov_propagate(matvec, np.asarray(psi0, dtype=complex), t1, m_max, tol)
    xa, za, ca = string_masks(*op_a, n)
    phi = apply_string(psi1, xa, za, ca, n)
    masks_b = [string_masks(*b, n) for b in ops_b]
    sym = np.empty((len(t2_grid), len(ops_b)))
    com = np.empty((len(t2_grid), len(ops_b)))
    t = t1
    for i, target in enumerate(t2_grid):
        dt = float(target) - t
        psi1 = krylov_propagate(matvec, psi1, dt, m_max, tol)
        phi = krylov_propagate(matvec, phi, dt, m_max, tol)
        t = float(target)
        for j, (xb, zb, cb) in enumerate(masks_b):
            zval = np.vdot(phi, apply_string(psi1, xb, zb, cb, n))
            sym[i, j] = 2.0 * zval.real
            com[i, j] = -2.0 * zval.imag
    return sym, com


def reduced_density_matrix(psi: np.ndarray, n: int, keep_sites) -> np.ndarray:
    keep = list(keep_sites)
    rest = [i for i in range(n) if i not in keep]
    t = psi.reshape((2,) * n).transpose(keep + rest).reshape(2 ** len(keep), -1)
    return t @ t.conj().T
