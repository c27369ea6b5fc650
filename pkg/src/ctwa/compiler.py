"""Mapping lattice Hamiltonians onto cluster operator bases.

The lattice is split into disjoint clusters.  Every Hamiltonian term
that lives inside one cluster becomes a linear coefficient B~ on that
cluster's operator basis; every term that straddles two clusters
becomes a bilinear coupling J~ between one basis operator on each side.
The compiled form is exact (no approximation happens here):

    H = sum_c sum_alpha B~[c][alpha] X_alpha^c
      + sum_pairs J~ X_alpha^{ci} X_beta^{cj}

Identity components never appear: single-site letters are traceless and
an intra-cluster product of letters on two distinct positions is again
a non-identity string.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .algebra import ClusterBasis
from .model import SpinModel


@dataclass(frozen=True)
class ClusterPartition:
    """Disjoint cover of the chain by ordered site groups."""

    n_sites: int
    clusters: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen = set()
        for cl in self.clusters:
            if not cl:
                raise ValueError("empty cluster")
            for s in cl:
                if not 0 <= s < self.n_sites:
                    raise ValueError(f"site {s} outside 0..{self.n_sites - 1}")
                if s in seen:
                    raise ValueError(f"site {s} assigned twice")
                seen.add(s)
        if len(seen) != self.n_sites:
            raise ValueError("partition does not cover every site")

    @cached_property
    def site_location(self) -> dict[int, tuple[int, int]]:
        """site -> (cluster index, position within cluster)."""
        loc = {}
        for c, cl in enumerate(self.clusters):
            for p, s in enumerate(cl):
                loc[s] = (c, p)
        return loc

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def sizes(self) -> tuple[int, ...]:
        return tuple(len(cl) for cl in self.clusters)


def contiguous_partition(
    n_sites: int, cluster_size: int, offset: int = 0, periodic: bool = False
) -> ClusterPartition:
    """Equal contiguous clusters; cyclic shift by `offset` when periodic.

    On open chains only offset 0 is meaningful and a ragged final cluster
    is allowed; periodic chains require the size to divide the chain.
    """
    if cluster_size < 1:
        raise ValueError("cluster size must be positive")
    if periodic:
        if n_sites % cluster_size:
            raise ValueError(
                f"cluster size {cluster_size} does not divide periodic chain of {n_sites}"
            )
        offset = offset % n_sites
        sites = [(offset + k) % n_sites for k in range(n_sites)]
    else:
        if offset:
            raise ValueError("offsets need periodic boundaries")
        sites = list(range(n_sites))
    clusters = tuple(
        tuple(sites[i : i + cluster_size]) for i in range(0, n_sites, cluster_size)
    )
    return ClusterPartition(n_sites, clusters)


def enumerate_offsets(n_sites: int, cluster_size: int) -> list[ClusterPartition]:
    """All distinct cyclic offsets of the contiguous periodic partition."""
    return [
        contiguous_partition(n_sites, cluster_size, offset=o, periodic=True)
        for o in range(cluster_size)
    ]


@dataclass
class ClusterHamiltonian:
    """Hamiltonian compiled onto cluster operator coordinates."""

    partition: ClusterPartition
    bases: tuple[ClusterBasis, ...]
    linear: tuple[dict[int, float], ...]
    couplings: tuple[tuple[int, int, int, int, float], ...]

    @cached_property
    def coordinate_offsets(self) -> np.ndarray:
        """Start index of each cluster's coordinate block in the flat layout."""
        dims = [b.dim for b in self.bases]
        return np.concatenate([[0], np.cumsum(dims)])

    @property
    def n_coordinates(self) -> int:
        return int(self.coordinate_offsets[-1])

    def global_index(self, cluster: int, alpha: int) -> int:
        return int(self.coordinate_offsets[cluster]) + alpha

    def energy(self, x: np.ndarray) -> float:
        """Classical Hamiltonian H_W at a phase-space point (flat layout)."""
        total = 0.0
        off = self.coordinate_offsets
        for c, terms in enumerate(self.linear):
            for alpha, coeff in terms.items():
                total += coeff * x[off[c] + alpha]
        for ci, a, cj, b, w in self.couplings:
            total += w * x[off[ci] + a] * x[off[cj] + b]
        return float(total)


def compile_hamiltonian(model: SpinModel, partition: ClusterPartition) -> ClusterHamiltonian:
    if partition.n_sites != model.n_sites:
        raise ValueError("partition and model disagree on the number of sites")
    bases = tuple(ClusterBasis(len(cl)) for cl in partition.clusters)
    linear: list[dict[int, float]] = [dict() for _ in partition.clusters]
    pair_weights: dict[tuple[int, int, int, int], float] = {}
    loc = partition.site_location

    def add_linear(c: int, alpha: int, coeff: float):
        if alpha == 0:
            raise AssertionError("identity component leaked into the linear part")
        linear[c][alpha] = linear[c].get(alpha, 0.0) + coeff

    for t in model.fields:
        c, p = loc[t.site]
        add_linear(c, bases[c].single_site_index(p, t.axis), t.coeff)

    for t in model.couplings:
        ci, pi = loc[t.site_i]
        cj, pj = loc[t.site_j]
        ai = bases[ci].single_site_index(pi, t.axis_i)
        aj = bases[cj].single_site_index(pj, t.axis_j)
        if ci == cj:
            # letters on distinct positions commute and multiply phase-free
            add_linear(ci, ai ^ aj, t.coeff)
        else:
            if ci > cj:
                ci, cj, ai, aj = cj, ci, aj, ai
            key = (ci, ai, cj, aj)
            pair_weights[key] = pair_weights.get(key, 0.0) + t.coeff

    linear = [dict(sorted(d.items())) for d in linear]
    couplings = tuple(
        (ci, ai, cj, aj, w) for (ci, ai, cj, aj), w in sorted(pair_weights.items()) if w != 0.0
    )
    return ClusterHamiltonian(partition, bases, tuple(linear), couplings)


def compile_site_operator(
    compiled: ClusterHamiltonian, site: int, axis: str
) -> tuple[int, int]:
    """(cluster, alpha) of a single-site Pauli in the compiled layout."""
    c, p = compiled.partition.site_location[site]
    return c, compiled.bases[c].single_site_index(p, axis)


def compile_string(
    compiled: ClusterHamiltonian, sites: tuple[int, ...], letters: tuple[str, ...]
) -> dict[int, int]:
    """Pauli string on distinct lattice sites -> {cluster: alpha} factors.

    The string factorizes over clusters; the expectation of the full
    string is the moment E[prod_c x_alpha^c] over trajectories (for a
    single cluster it reduces to a plain coordinate mean).
    """
    if len(set(sites)) != len(sites):
        raise ValueError("sites in a string must be distinct")
    factors: dict[int, int] = {}
    for site, letter in zip(sites, letters):
        c, p = compiled.partition.site_location[site]
        alpha = compiled.bases[c].single_site_index(p, letter)
        factors[c] = factors.get(c, 0) ^ alpha
    return factors


@dataclass(frozen=True)
class LinearObservable:
    """Weighted sum of single-cluster coordinates, sum_k w_k x_{global_k}."""

    name: str
    global_indices: np.ndarray
    weights: np.ndarray

    def evaluate(self, x: np.ndarray) -> float:
        return float(np.dot(self.weights, x[self.global_indices]))


def staggered_magnetization_observable(
    compiled: ClusterHamiltonian, normalized: bool = True
) -> LinearObservable:
    from .model import staggered_signs

    n = compiled.partition.n_sites
    signs = staggered_signs(n)
    idx = []
    w = []
    for site in range(n):
        c, alpha = compile_site_operator(compiled, site, "z")
        idx.append(compiled.global_index(c, alpha))
        w.append(signs[site] / n if normalized else signs[site])
    return LinearObservable(
        name="staggered_magnetization",
        global_indices=np.array(idx, dtype=np.int64),
        weights=np.array(w),
    )


def site_axis_observable(
    compiled: ClusterHamiltonian, site: int, axis: str
) -> LinearObservable:
    c, alpha = compile_site_operator(compiled, site, axis)
    return LinearObservable(
        name=f"site_{axis}_{site}",
        global_indices=np.array([compiled.global_index(c, alpha)], dtype=np.int64),
        weights=np.array([1.0]),
    )
