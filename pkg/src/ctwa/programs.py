"""Flat array programs for the equation-of-motion kernels.

The compiled Hamiltonian is lowered to plain integer/float arrays so
the integration kernels (compiled or NumPy) never touch Python objects.
Two lowerings exist:

* operator program: phase-space coordinates x, one slot per distinct
  operator beta with a nonzero drive h_beta.  Each slot expands to the
  sparse column of structure constants, stored as (dst, src, f)
  triples with global coordinate indices, so the right-hand side is

      h[slot] = const[slot] + sum_entries w * x[src_coord]
      dx[dst] += f * h[slot] * x[src]

* wavefunction program: per-cluster states psi evolving under the
  effective Hamiltonian H_eff = sum_slots h[slot] X_beta, with X_beta
  applied through permutation/phase tables.  Mean-field sources are
  "probes" <psi| X_alpha |psi> weighted over the vectors of a cluster.

Slot constants are passed to the kernels separately from the program so
per-trajectory disorder only rewrites a small vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compiler import ClusterHamiltonian


@dataclass
class OperatorProgram:
    n_coords: int
    n_slots: int
    slot_const: np.ndarray      # float64 (n_slots,) baseline B~ values
    ent_slot: np.ndarray        # int64 (n_entries,)
    ent_dst: np.ndarray         # int64, global coordinate written
    ent_src: np.ndarray         # int64, global coordinate read
    ent_f: np.ndarray           # float64 structure constants
    cpl_slot: np.ndarray        # int64 (n_cpl,) slot receiving the drive
    cpl_src: np.ndarray         # int64 global coordinate of the mean field
    cpl_w: np.ndarray           # float64 coupling weights
    slot_index: dict[tuple[int, int], int]  # (cluster, beta) -> slot


def build_operator_program(
    compiled: ClusterHamiltonian,
    extra_slots: tuple[tuple[int, int], ...] = (),
) -> OperatorProgram:
    """Lower a compiled Hamiltonian; extra_slots reserves zero-constant
    slots (cluster, beta) so disorder fields can be added per trajectory."""
    off = compiled.coordinate_offsets
    used: list[set[int]] = [set(d) for d in compiled.linear]
    for ci, ai, cj, aj, _ in compiled.couplings:
        used[ci].add(ai)
        used[cj].add(aj)
    for c, beta in extra_slots:
        if beta == 0:
            raise ValueError("identity operator cannot drive the motion")
        used[c].add(beta)

    slot_index: dict[tuple[int, int], int] = {}
    slot_const = []
    ent_slot, ent_dst, ent_src, ent_f = [], [], [], []
    for c, betas in enumerate(used):
        basis = compiled.bases[c]
        alphas = np.arange(basis.dim, dtype=np.int64)
        for beta in sorted(betas):
            s = len(slot_const)
            slot_index[(c, beta)] = s
            slot_const.append(compiled.linear[c].get(beta, 0.0))
            col = basis.f_column(beta)
            nz = np.nonzero(col)[0]
            ent_slot.append(np.full(len(nz), s, dtype=np.int64))
            ent_dst.append(off[c] + nz)
            ent_src.append(off[c] + (nz ^ beta))
            ent_f.append(col[nz])

    cpl_slot, cpl_src, cpl_w = [], [], []
    for ci, ai, cj, aj, w in compiled.couplings:
        cpl_slot.append(slot_index[(ci, ai)])
        cpl_src.append(compiled.global_index(cj, aj))
        cpl_w.append(w)
        cpl_slot.append(slot_index[(cj, aj)])
        cpl_src.append(compiled.global_index(ci, ai))
        cpl_w.append(w)

    def cat(parts, dtype):
        if not parts:
            return np.empty(0, dtype=dtype)
        return np.ascontiguousarray(np.concatenate(parts), dtype=dtype)

    return OperatorProgram(
        n_coords=compiled.n_coordinates,
        n_slots=len(slot_const),
        slot_const=np.array(slot_const, dtype=np.float64),
        ent_slot=cat(ent_slot, np.int64),
        ent_dst=cat(ent_dst, np.int64),
        ent_src=cat(ent_src, np.int64),
        ent_f=cat(ent_f, np.float64),
        cpl_slot=np.array(cpl_slot, dtype=np.int64),
        cpl_src=np.array(cpl_src, dtype=np.int64),
        cpl_w=np.array(cpl_w, dtype=np.float64),
        slot_index=slot_index,
    )


@dataclass
class WavefunctionProgram:
    n_clusters: int
    state_dim: int              # total flat state length (sum of 2^N blocks)
    state_off: np.ndarray       # int64 (n_clusters + 1,)
    n_slots: int
    slot_cluster: np.ndarray    # int64 (n_slots,)
    slot_const: np.ndarray      # float64 baseline B~
    slot_perm: np.ndarray       # int64 (n_slots, max_sdim) global source index
    slot_phase: np.ndarray      # complex128 (n_slots, max_sdim)
    slot_len: np.ndarray        # int64 rows used of perm/phase (cluster sdim)
    slot_out: np.ndarray        # int64 (n_slots,) global offset of outputs
    n_probes: int
    probe_cluster: np.ndarray
    probe_perm: np.ndarray
    probe_phase: np.ndarray
    probe_len: np.ndarray
    probe_out: np.ndarray
    cpl_slot: np.ndarray
    cpl_probe: np.ndarray
    cpl_w: np.ndarray
    slot_index: dict[tuple[int, int], int]
    probe_index: dict[tuple[int, int], int]


def build_wavefunction_program(
    compiled: ClusterHamiltonian,
    extra_slots: tuple[tuple[int, int], ...] = (),
) -> WavefunctionProgram:
    part = compiled.partition
    sdims = [b.state_dim for b in compiled.bases]
    state_off = np.concatenate([[0], np.cumsum(sdims)]).astype(np.int64)
    max_sdim = max(sdims)

    used: list[set[int]] = [set(d) for d in compiled.linear]
    probe_set: list[set[int]] = [set() for _ in range(part.n_clusters)]
    for ci, ai, cj, aj, _ in compiled.couplings:
        used[ci].add(ai)
        used[cj].add(aj)
        probe_set[ci].add(ai)
        probe_set[cj].add(aj)
    for c, beta in extra_slots:
        if beta == 0:
            raise ValueError("identity operator cannot drive the motion")
        used[c].add(beta)

    slot_index: dict[tuple[int, int], int] = {}
    slot_cluster, slot_const = [], []
    slot_perm, slot_phase, slot_len, slot_out = [], [], [], []

    def tables(c: int, alphas: list[int]):
        basis = compiled.bases[c]
        perm, phase = basis.apply_tables(np.array(alphas, dtype=np.int64))
        return perm + state_off[c], phase

    for c in range(part.n_clusters):
        betas = sorted(used[c])
        if not betas:
            continue
        perm, phase = tables(c, betas)
        for k, beta in enumerate(betas):
            s = len(slot_const)
            slot_index[(c, beta)] = s
            slot_cluster.append(c)
            slot_const.append(compiled.linear[c].get(beta, 0.0))
            row_p = np.zeros(max_sdim, dtype=np.int64)
            row_f = np.zeros(max_sdim, dtype=complex)
            row_p[: sdims[c]] = perm[k]
            row_f[: sdims[c]] = phase[k]
            slot_perm.append(row_p)
            slot_phase.append(row_f)
            slot_len.append(sdims[c])
            slot_out.append(state_off[c])

    probe_index: dict[tuple[int, int], int] = {}
    probe_cluster, probe_perm, probe_phase, probe_len, probe_out = [], [], [], [], []
    for c in range(part.n_clusters):
        alphas = sorted(probe_set[c])
        if not alphas:
            continue
        perm, phase = tables(c, alphas)
        for k, alpha in enumerate(alphas):
            if alpha == 0:
                raise AssertionError("identity probe would pin a constant mean field")
            p = len(probe_cluster)
            probe_index[(c, alpha)] = p
            probe_cluster.append(c)
            row_p = np.zeros(max_sdim, dtype=np.int64)
            row_f = np.zeros(max_sdim, dtype=complex)
            row_p[: sdims[c]] = perm[k]
            row_f[: sdims[c]] = phase[k]
            probe_perm.append(row_p)
            probe_phase.append(row_f)
            probe_len.append(sdims[c])
            probe_out.append(state_off[c])

    cpl_slot, cpl_probe, cpl_w = [], [], []
    for ci, ai, cj, aj, w in compiled.couplings:
        cpl_slot.append(slot_index[(ci, ai)])
        cpl_probe.append(probe_index[(cj, aj)])
        cpl_w.append(w)
        cpl_slot.append(slot_index[(cj, aj)])
        cpl_probe.append(probe_index[(ci, ai)])
        cpl_w.append(w)

    def arr(v, dtype):
        return np.asarray(v, dtype=dtype) if len(v) else np.empty(0, dtype=dtype)

    def mat(v, dtype):
        if not v:
            return np.empty((0, max_sdim), dtype=dtype)
        return np.ascontiguousarray(np.stack(v), dtype=dtype)

    return WavefunctionProgram(
        n_clusters=part.n_clusters,
        state_dim=int(state_off[-1]),
        state_off=state_off,
        n_slots=len(slot_const),
        slot_cluster=arr(slot_cluster, np.int64),
        slot_const=arr(slot_const, np.float64),
        slot_perm=mat(slot_perm, np.int64),
        slot_phase=mat(slot_phase, complex),
        slot_len=arr(slot_len, np.int64),
        slot_out=arr(slot_out, np.int64),
        n_probes=len(probe_cluster),
        probe_cluster=arr(probe_cluster, np.int64),
        probe_perm=mat(probe_perm, np.int64),
        probe_phase=mat(probe_phase, complex),
        probe_len=arr(probe_len, np.int64),
        probe_out=arr(probe_out, np.int64),
        cpl_slot=arr(cpl_slot, np.int64),
        cpl_probe=arr(cpl_probe, np.int64),
        cpl_w=arr(cpl_w, np.float64),
        slot_index=slot_index,
        probe_index=probe_index,
    )


@dataclass
class CoordinateProbes:
    """Tables turning wavefunction blocks into coordinates x = <X_alpha>."""

    coords: tuple[tuple[int, int], ...]  # (cluster, alpha) per output
    cluster: np.ndarray
    out_off: np.ndarray                  # int64 global offset of each cluster block
    perm: np.ndarray                     # (k, sdim_c) global source indices, ragged rows
    phase: np.ndarray
    length: np.ndarray


def build_coordinate_probes(
    compiled: ClusterHamiltonian, coords: list[tuple[int, int]]
) -> CoordinateProbes:
    sdims = [b.state_dim for b in compiled.bases]
    state_off = np.concatenate([[0], np.cumsum(sdims)]).astype(np.int64)
    max_sdim = max(sdims)
    k = len(coords)
    perm = np.zeros((k, max_sdim), dtype=np.int64)
    phase = np.zeros((k, max_sdim), dtype=complex)
    length = np.zeros(k, dtype=np.int64)
    cluster = np.zeros(k, dtype=np.int64)
    out_off = np.zeros(k, dtype=np.int64)
    for i, (c, alpha) in enumerate(coords):
        basis = compiled.bases[c]
        p, f = basis.apply_tables(np.array([alpha], dtype=np.int64))
        perm[i, : sdims[c]] = p[0] + state_off[c]
        phase[i, : sdims[c]] = f[0]
        length[i] = sdims[c]
        cluster[i] = c
        out_off[i] = state_off[c]
    return CoordinateProbes(
        coords=tuple(coords),
        cluster=cluster,
        out_off=out_off,
        perm=perm,
        phase=phase,
        length=length,
    )


def probe_values(probes: CoordinateProbes, psi: np.ndarray) -> np.ndarray:
    """Per-vector expectations Re <psi_v| X_alpha_k |psi_v>.

    psi has shape (..., n_vec, state_dim); output (..., n_vec, n_probes).
    """
    psi = np.asarray(psi)
    out = np.empty(psi.shape[:-1] + (len(probes.cluster),))
    for i in range(len(probes.cluster)):
        L = int(probes.length[i])
        rows = int(probes.out_off[i]) + np.arange(L)
        bra = np.conj(psi[..., :, rows])
        ket = psi[..., :, probes.perm[i, :L]]
        out[..., i] = np.einsum("...vm,m,...vm->...v", bra, probes.phase[i, :L], ket).real
    return out


def probe_values_cross(
    probes: CoordinateProbes, bra: np.ndarray, ket: np.ndarray
) -> np.ndarray:
    """Per-vector matrix elements <bra_v| X_alpha_k |ket_v>, complex.

    bra/ket have shape (..., n_vec, state_dim); output (..., n_vec, n_probes).
    """
    bra = np.asarray(bra)
    ket = np.asarray(ket)
    out = np.empty(np.broadcast_shapes(bra.shape, ket.shape)[:-1] + (len(probes.cluster),), dtype=complex)
    for i in range(len(probes.cluster)):
        L = int(probes.length[i])
        rows = int(probes.out_off[i]) + np.arange(L)
        out[..., i] = np.einsum(
            "...vm,m,...vm->...v",
            np.conj(bra[..., :, rows]),
            probes.phase[i, :L],
            ket[..., :, probes.perm[i, :L]],
        )
    return out


def evaluate_probes(
    probes: CoordinateProbes, psi: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Coordinates x_k = sum_v w[..., cluster_k, v] <psi_v| X_alpha_k |psi_v>.

    weights is (n_clusters, n_vec) or any shape broadcastable against the
    leading axes of psi after indexing by cluster; output (..., n_probes).
    """
    pv = probe_values(probes, psi)
    w = np.asarray(weights)[..., probes.cluster, :]
    return np.einsum("...vk,...kv->...k", pv, w)
