"""Gaussian Wigner sampling of initial conditions for every backend.

All recipes start from the cluster reference state |0> = all-up and a
per-cluster rotation U built from the product-state spinors.  The base
noise per cluster is 2(D-1) standard normals (delta_n, sigma_n), turned
into the off-diagonal amplitudes y_n = (delta_n + i sigma_n)/2 of the
sampled phase-space matrix

    M = |0><0| + sum_n y_n |n><0| + y_n* |0><n|.

The operator backend stores x_alpha = Tr[M' X_alpha] with M' the
rotated matrix; the reduced backend stores the two eigenvectors of M
with eigenvalues (lambda+, lambda-) as quasi-probability weights; the
Schwinger-boson backend uses its own positive Gaussian distribution
over mode amplitudes.  Backends that consume (delta, sigma) draw them
through the same function in the same order, so operator and reduced
trajectories can be paired draw for draw.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .algebra import ClusterBasis
from .compiler import ClusterHamiltonian
from .model import InitialStateSpec, ProductState, realize_initial_state


def draw_pauli_noise(rng: np.random.Generator, state_dim: int, n_draws: int):
    """(delta, sigma) standard-normal arrays of shape (n_draws, state_dim - 1)."""
    z = rng.standard_normal((n_draws, 2, state_dim - 1))
    return z[:, 0], z[:, 1]


def schwinger_radius(state_dim: int) -> float:
    """Empty-mode variance r_D solving D r^2 + 2 r - 1 = 0."""
    return (np.sqrt(1.0 + state_dim) - 1.0) / state_dim


def draw_schwinger_modes(rng: np.random.Generator, state_dim: int, n_draws: int):
    """Mode amplitudes in the reference frame, special mode at index 0.

    |b_0| is pinned to sqrt(1 + r_D) with a uniform random phase; the
    empty modes are complex Gaussians with E|b_a|^2 = r_D.
    """
    r = schwinger_radius(state_dim)
    theta = rng.uniform(0.0, 2.0 * np.pi, n_draws)
    g = rng.standard_normal((n_draws, 2, state_dim - 1)) * np.sqrt(r / 2.0)
    b = np.empty((n_draws, state_dim), dtype=complex)
    b[:, 0] = np.sqrt(1.0 + r) * np.exp(1j * theta)
    b[:, 1:] = g[:, 0] + 1j * g[:, 1]
    return b


def site_unitary(spinor: np.ndarray) -> np.ndarray:
    """2x2 unitary sending |up> to the given normalized spinor."""
    a, b = spinor
    return np.array([[a, -np.conj(b)], [b, np.conj(a)]])


def cluster_unitary(spinors) -> np.ndarray:
    """Kronecker product of site unitaries, first site most significant."""
    u = np.array([[1.0 + 0j]])
    for s in spinors:
        u = np.kron(u, site_unitary(np.asarray(s, dtype=complex)))
    return u


@lru_cache(maxsize=8)
def _full_tables(n_sites: int):
    basis = ClusterBasis(n_sites)
    return basis.apply_tables(np.arange(basis.dim, dtype=np.int64))


def operator_coordinates(n_sites: int, u0: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x_alpha = <u0|X|u0> + 2 Re <u0|X|w> for a batch of w draws.

    u0 is the rotated reference (sdim,), w the rotated noise vectors
    (n_draws, sdim); result (n_draws, 4^n).  With w = 0 this is the
    mean-field point.
    """
    perm, phase = _full_tables(n_sites)
    v = u0[None, :] + 2.0 * w if w is not None else u0[None, :]
    bra = np.conj(u0)
    out = np.empty((v.shape[0], perm.shape[0]))
    # chunk the alpha axis to bound the gather workspace
    step = max(1, (1 << 22) // max(1, v.shape[0] * perm.shape[1]))
    for a0 in range(0, perm.shape[0], step):
        a1 = min(perm.shape[0], a0 + step)
        gathered = v[:, perm[a0:a1]]
        out[:, a0:a1] = np.einsum("m,am,nam->na", bra, phase[a0:a1], gathered).real
    return out


def reduced_vectors(state_dim: int, delta: np.ndarray, sigma: np.ndarray):
    """Eigenpairs of the sampled matrix M in the reference frame.

    Returns (psi, lam): psi of shape (n, 2, D) holding the unit
    eigenvectors and lam of shape (n, 2) the quasi-probability weights
    (lambda+ > 0 > lambda-, lambda+ + lambda- = 1).
    """
    n = delta.shape[0]
    y = (delta + 1j * sigma) / 2.0
    r2 = np.sum(np.abs(y) ** 2, axis=1)
    root = np.sqrt(1.0 + 4.0 * r2)
    lam = np.empty((n, 2))
    lam[:, 0] = 0.5 + 0.5 * root
    lam[:, 1] = 0.5 - 0.5 * root
    psi = np.zeros((n, 2, state_dim), dtype=complex)
    for s in range(2):
        ls = lam[:, s]
        with np.errstate(divide="ignore", invalid="ignore"):
            v0 = ls / np.sqrt(ls**2 + r2)
            psi[:, s, 0] = v0
            psi[:, s, 1:] = y * (v0 / ls)[:, None]
    degenerate = r2 < 1e-28
    if degenerate.any():
        # noiseless draw: lambda- = 0 and any unit vector orthogonal to
        # |0> carries zero weight
        psi[degenerate, 1, :] = 0.0
        psi[degenerate, 1, 1] = 1.0
        psi[degenerate, 0, :] = 0.0
        psi[degenerate, 0, 0] = 1.0
        lam[degenerate, 0] = 1.0
        lam[degenerate, 1] = 0.0
    return psi, lam


@dataclass
class SampledBatch:
    """Initial data for a batch of trajectories, layout per backend.

    operator / meanfield: x0 (n, n_coords); psi0, weights None.
    schwinger: psi0 (n, 1, ns), weights (n, n_clusters, 1).
    reduced:   psi0 (n, 2, ns), weights (n, n_clusters, 2).
    """

    backend: str
    x0: np.ndarray | None = None
    psi0: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __len__(self):
        arr = self.x0 if self.x0 is not None else self.psi0
        return arr.shape[0]


BACKENDS = ("operator", "meanfield", "schwinger", "reduced")


class InitialConditions:
    """Sampler bound to a compiled Hamiltonian and an initial-state spec."""

    def __init__(
        self,
        compiled: ClusterHamiltonian,
        initial: InitialStateSpec,
        backend: str,
        antithetic: bool = False,
    ):
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}")
        if antithetic and backend == "meanfield":
            raise ValueError("antithetic pairing is meaningless without noise")
        self.compiled = compiled
        self.initial = initial
        self.backend = backend
        self.antithetic = antithetic
        self.partition = compiled.partition
        self._fixed_unitaries = None
        if not initial.stochastic:
            state = realize_initial_state(initial, self.partition.n_sites)
            self._fixed_unitaries = self._unitaries_for(state)

    def _unitaries_for(self, state: ProductState) -> list[np.ndarray]:
        return [
            cluster_unitary([state.spinor(s) for s in cl]) for cl in self.partition.clusters
        ]

    def _unitary_batch(self, rng_init: np.random.Generator, n: int) -> list[list[np.ndarray]]:
        """Per-trajectory cluster unitaries (shared object when deterministic)."""
        if self._fixed_unitaries is not None:
            return [self._fixed_unitaries] * n
        out = []
        for _ in range(n):
            state = realize_initial_state(self.initial, self.partition.n_sites, rng_init)
            out.append(self._unitaries_for(state))
        return out

    def draw(
        self, rng_init: np.random.Generator, rng_noise: np.random.Generator, n: int
    ) -> SampledBatch:
        if self.antithetic and n % 2:
            raise ValueError("antithetic batches need an even trajectory count")
        n_base = n // 2 if self.antithetic else n
        unitaries = self._unitary_batch(rng_init, n_base)
        if self.antithetic:
            unitaries = [u for u in unitaries for _ in range(2)]

        if self.backend in ("operator", "meanfield"):
            return self._draw_coordinates(rng_noise, n, n_base, unitaries)
        if self.backend == "reduced":
            return self._draw_reduced(rng_noise, n, n_base, unitaries)
        return self._draw_schwinger(rng_noise, n, n_base, unitaries)

    def _expand_noise(self, arr: np.ndarray) -> np.ndarray:
        """Interleave each draw with its sign-flipped partner."""
        paired = np.stack([arr, -arr], axis=1)
        return paired.reshape((-1,) + arr.shape[1:])

    def _draw_coordinates(self, rng_noise, n, n_base, unitaries) -> SampledBatch:
        comp = self.compiled
        off = comp.coordinate_offsets
        x0 = np.empty((n, comp.n_coordinates))
        for c, basis in enumerate(comp.bases):
            sdim = basis.state_dim
            if self.backend == "meanfield":
                w = np.zeros((n, sdim), dtype=complex)
            else:
                delta, sigma = draw_pauli_noise(rng_noise, sdim, n_base)
                if self.antithetic:
                    delta = self._expand_noise(delta)
                    sigma = self._expand_noise(sigma)
                y = np.zeros((n, sdim), dtype=complex)
                y[:, 1:] = (delta + 1j * sigma) / 2.0
                w = y
            same_u = self._fixed_unitaries is not None
            if same_u:
                u = unitaries[0][c]
                u0 = u[:, 0]
                w_rot = w @ u.T
                x0[:, off[c] : off[c + 1]] = operator_coordinates(basis.n_sites, u0, w_rot)
            else:
                for k in range(n):
                    u = unitaries[k][c]
                    x0[k, off[c] : off[c + 1]] = operator_coordinates(
                        basis.n_sites, u[:, 0], (w[k] @ u.T)[None, :]
                    )[0]
        return SampledBatch(backend=self.backend, x0=x0)

    def _draw_reduced(self, rng_noise, n, n_base, unitaries) -> SampledBatch:
        comp = self.compiled
        sdims = [b.state_dim for b in comp.bases]
        soff = np.concatenate([[0], np.cumsum(sdims)]).astype(int)
        psi0 = np.empty((n, 2, soff[-1]), dtype=complex)
        weights = np.empty((n, comp.partition.n_clusters, 2))
        for c, basis in enumerate(comp.bases):
            sdim = basis.state_dim
            delta, sigma = draw_pauli_noise(rng_noise, sdim, n_base)
            if self.antithetic:
                delta = self._expand_noise(delta)
                sigma = self._expand_noise(sigma)
            psi, lam = reduced_vectors(sdim, delta, sigma)
            weights[:, c, :] = lam
            if self._fixed_unitaries is not None:
                u = unitaries[0][c]
                psi0[:, :, soff[c] : soff[c + 1]] = psi @ u.T
            else:
                for k in range(n):
                    psi0[k, :, soff[c] : soff[c + 1]] = psi[k] @ unitaries[k][c].T
        return SampledBatch(backend="reduced", psi0=psi0, weights=weights)

    def _draw_schwinger(self, rng_noise, n, n_base, unitaries) -> SampledBatch:
        comp = self.compiled
        sdims = [b.state_dim for b in comp.bases]
        soff = np.concatenate([[0], np.cumsum(sdims)]).astype(int)
        psi0 = np.empty((n, 1, soff[-1]), dtype=complex)
        weights = np.ones((n, comp.partition.n_clusters, 1))
        for c, basis in enumerate(comp.bases):
            sdim = basis.state_dim
            b = draw_schwinger_modes(rng_noise, sdim, n_base)
            if self.antithetic:
                # reflect only the Gaussian modes; the pinned amplitude is
                # a pure phase and flipping it would be a symmetry of the
                # observables rather than a variance-reducing pairing
                ref = b.copy()
                ref[:, 1:] *= -1.0
                b = np.stack([b, ref], axis=1).reshape(-1, sdim)
            if self._fixed_unitaries is not None:
                u = unitaries[0][c]
                psi0[:, 0, soff[c] : soff[c + 1]] = b @ u.T
            else:
                for k in range(n):
                    psi0[k, 0, soff[c] : soff[c + 1]] = b[k] @ unitaries[k][c].T
        return SampledBatch(backend="schwinger", psi0=psi0, weights=weights)


def schwinger_second_moment(
    basis: ClusterBasis, alpha: int, beta: int, reference: int = 0
) -> float:
    """Classical E[x_alpha x_beta] under the Schwinger-boson distribution.

    Wick contraction over independent modes with weights w_a = 1 + r on
    the reference mode and r elsewhere; the pinned reference amplitude
    has no modulus fluctuations, so E|b_ref|^4 = (1+r)^2 while Gaussian
    modes give E|b_a|^4 = 2 r^2.
    """
    d = basis.state_dim
    r = schwinger_radius(d)
    w = np.full(d, r)
    w[reference] = 1.0 + r
    fourth = 2.0 * r**2 * np.ones(d)
    fourth[reference] = (1.0 + r) ** 2
    a = basis.matrix(alpha)
    b = basis.matrix(beta)
    total = 0.0
    for i in range(d):
        for j in range(d):
            if i == j:
                total += (a[i, i] * b[i, i]).real * fourth[i]
            else:
                total += (a[i, i] * b[j, j]).real * w[i] * w[j]
                total += (a[i, j] * b[j, i]).real * w[i] * w[j]
    return float(total)


def quantum_symmetric_moment(basis: ClusterBasis, alpha: int, beta: int, psi: np.ndarray) -> float:
    """Re <psi| X_alpha X_beta |psi>, the symmetrized quantum moment."""
    return float(np.real(np.conj(psi) @ (basis.matrix(alpha) @ (basis.matrix(beta) @ psi))))
