"""Ensemble estimators: running moments, reduced density matrices, entropy.

Estimation happens in two stages.  While trajectories are integrated,
accumulators collect first and (optionally) second moments of the
coordinate series in a fixed batch order, so results are reproducible
for a given seed regardless of how batches were scheduled.  Afterwards
the accumulated moments are turned into physical quantities: linear
observables with standard errors, connected cross-cluster correlators,
and reduced density matrices whose eigenvalues give entanglement
entropies.
"""

from __future__ import annotations

import itertools

import numpy as np

from .compiler import ClusterHamiltonian
from .pauli import SINGLE_SITE


class SeriesAccumulator:
    """Mean and standard error of per-trajectory series, shape (nt, m)."""

    def __init__(self, nt: int, m: int):
        self.count = 0
        self.s1 = np.zeros((nt, m))
        self.s2 = np.zeros((nt, m))

    def add(self, values: np.ndarray) -> None:
        v = np.asarray(values)
        self.count += v.shape[0]
        self.s1 += v.sum(axis=0)
        self.s2 += (v * v).sum(axis=0)

    def mean(self) -> np.ndarray:
        return self.s1 / self.count

    def stderr(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.s1)
        m = self.mean()
        var = (self.s2 - self.count * m * m) / (self.count - 1)
        return np.sqrt(np.maximum(var, 0.0) / self.count)


class MomentAccumulator:
    """First and second moments of coordinate series, shape (nt, k).

    The second moment is the full symmetric matrix E[x_a x_b] per time
    node.  When track_batches is set, per-batch sums are kept so that
    nonlinear functions of the moments (entropies) can be given a
    standard error from batch-to-batch scatter.
    """

    def __init__(self, nt: int, k: int, track_batches: bool = False):
        self.count = 0
        self.s1 = np.zeros((nt, k))
        self.s2 = np.zeros((nt, k, k))
        self.batches: list[tuple[int, np.ndarray, np.ndarray]] | None = (
            [] if track_batches else None
        )

    def add(self, values: np.ndarray) -> None:
        v = np.asarray(values)
        n = v.shape[0]
        s1 = v.sum(axis=0)
        s2 = np.einsum("ntk,ntl->tkl", v, v)
        self.count += n
        self.s1 += s1
        self.s2 += s2
        if self.batches is not None:
            self.batches.append((n, s1, s2))

    def mean(self) -> np.ndarray:
        return self.s1 / self.count

    def second(self) -> np.ndarray:
        return self.s2 / self.count

    def connected(self) -> np.ndarray:
        m = self.mean()
        return self.second() - np.einsum("tk,tl->tkl", m, m)


# ---------------------------------------------------------------------------
# reduced density matrices and entropy


def adjacent_pair_supports(n_sites: int, periodic: bool = True) -> list[tuple[int, int]]:
    pairs = [(i, i + 1) for i in range(n_sites - 1)]
    if periodic and n_sites > 2:
        pairs.append((n_sites - 1, 0))
    return pairs


def support_coordinates(
    compiled: ClusterHamiltonian, supports: list[tuple[int, ...]]
) -> list[tuple[int, int]]:
    """Deduplicated (cluster, alpha) list needed to assemble the supports."""
    seen: dict[tuple[int, int], None] = {}
    for support in supports:
        for letters in itertools.product("Ixyz", repeat=len(support)):
            ops = _support_ops(compiled, support, letters)
            for ca in ops.items():
                seen.setdefault(ca, None)
    return list(seen)


def _support_ops(compiled, support, letters) -> dict[int, int]:
    ops: dict[int, int] = {}
    for site, letter in zip(support, letters):
        if letter == "I":
            continue
        c, p = compiled.partition.site_location[site]
        ops[c] = ops.get(c, 0) ^ compiled.bases[c].single_site_index(p, letter)
    return ops


def assemble_rdm(
    compiled: ClusterHamiltonian,
    support: tuple[int, ...],
    mean_of,
    moment_of,
) -> np.ndarray:
    """Reduced density matrix on the given sites from ensemble moments.

    Operators supported inside a single cluster use the mean of the
    corresponding coordinate; operators straddling two clusters use the
    ensemble second moment of the pair.  mean_of(cluster, alpha) and
    moment_of((c1, a1), (c2, a2)) supply those numbers.
    """
    dim = 2 ** len(support)
    rho = np.zeros((dim, dim), dtype=complex)
    for letters in itertools.product("Ixyz", repeat=len(support)):
        ops = _support_ops(compiled, support, letters)
        if not ops:
            val = 1.0
        elif len(ops) == 1:
            ((c, a),) = ops.items()
            val = mean_of(c, a)
        elif len(ops) == 2:
            pair = sorted(ops.items())
            val = moment_of(tuple(pair[0]), tuple(pair[1]))
        else:
            raise ValueError("support spans more than two clusters")
        mat = SINGLE_SITE[letters[0]]
        for letter in letters[1:]:
            mat = np.kron(mat, SINGLE_SITE[letter])
        rho += val * mat
    return rho / dim


def rdm_lookups(coords: list[tuple[int, int]], mean_vec: np.ndarray, moment_mat: np.ndarray):
    """Closures reading means/moments out of accumulator rows.

    mean_vec is (k,) and moment_mat (k, k) for one time node, indexed in
    the order of coords.
    """
    pos = {ca: i for i, ca in enumerate(coords)}

    def mean_of(c: int, a: int) -> float:
        return float(mean_vec[pos[(c, a)]])

    def moment_of(p: tuple[int, int], q: tuple[int, int]) -> float:
        return float(moment_mat[pos[p], pos[q]])

    return mean_of, moment_of


def entanglement_entropy(rho: np.ndarray, eps: float = 1e-12) -> tuple[float, float]:
    """Von Neumann entropy in bits and the spectral mass clipped away.

    Ensemble-reconstructed density matrices need not be exactly positive
    at finite sampling; eigenvalues at or below eps are discarded rather
    than renormalized, and the discarded mass 1 - sum(kept) is reported
    so the caller can judge the reconstruction quality.
    """
    lam = np.linalg.eigvalsh(rho).real
    kept = lam[lam > eps]
    entropy = float(-np.sum(kept * np.log2(kept)))
    return entropy, float(1.0 - kept.sum())


def entropy_of_supports(
    compiled: ClusterHamiltonian,
    supports: list[tuple[int, ...]],
    coords: list[tuple[int, int]],
    mean_vec: np.ndarray,
    moment_mat: np.ndarray,
    eps: float = 1e-12,
) -> tuple[np.ndarray, np.ndarray]:
    """Entropy and clipped mass per support at one time node."""
    mean_of, moment_of = rdm_lookups(coords, mean_vec, moment_mat)
    s = np.empty(len(supports))
    clip = np.empty(len(supports))
    for i, support in enumerate(supports):
        rho = assemble_rdm(compiled, support, mean_of, moment_of)
        s[i], clip[i] = entanglement_entropy(rho, eps=eps)
    return s, clip


# ---------------------------------------------------------------------------
# linear observables over an engine coordinate list


def observable_matrix(
    compiled: ClusterHamiltonian,
    engine_coords: list[tuple[int, int]],
    observables,
) -> np.ndarray:
    """Weights (n_obs, k) mapping engine coordinate columns to observables."""
    pos = {ca: i for i, ca in enumerate(engine_coords)}
    offsets = compiled.coordinate_offsets
    out = np.zeros((len(observables), len(engine_coords)))
    for row, obs in enumerate(observables):
        for g, w in zip(obs.global_indices, obs.weights):
            c = int(np.searchsorted(offsets, g, side="right") - 1)
            a = int(g - offsets[c])
            out[row, pos[(c, a)]] += w
    return out
