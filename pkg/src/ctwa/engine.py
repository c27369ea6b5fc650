"""Trajectory integration for the four backends.

The engine owns the lowered program for one compiled Hamiltonian and a
fixed list of requested coordinates (cluster, alpha).  It turns sampled
initial data into coordinate time series, handling the representation
differences: the operator and mean-field backends integrate the
coordinates directly, the Schwinger-boson and reduced-vector backends
integrate wavefunction blocks and read coordinates out through
expectation probes, with the identity coordinate pinned to 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .compiler import ClusterHamiltonian
from .programs import (
    build_coordinate_probes,
    build_operator_program,
    build_wavefunction_program,
    evaluate_probes,
    probe_values_cross,
)
from .sampling import SampledBatch


@dataclass
class IntegrationOptions:
    rtol: float = 1e-8
    atol: float = 1e-10
    max_steps: int = 500_000
    impl: str | None = None


def all_coordinates(compiled: ClusterHamiltonian) -> list[tuple[int, int]]:
    out = []
    for c, basis in enumerate(compiled.bases):
        out.extend((c, a) for a in range(basis.dim))
    return out


def site_disorder_slots(compiled: ClusterHamiltonian) -> tuple[np.ndarray, tuple]:
    """Slots for per-site z fields: (site -> (cluster, alpha)) list."""
    part = compiled.partition
    pairs = []
    for site in range(part.n_sites):
        c, p = part.site_location[site]
        pairs.append((c, compiled.bases[c].single_site_index(p, "z")))
    return pairs


class Engine:
    def __init__(
        self,
        compiled: ClusterHamiltonian,
        backend: str,
        coords: list[tuple[int, int]] | None = None,
        options: IntegrationOptions | None = None,
        with_site_disorder: bool = False,
    ):
        if backend not in ("operator", "meanfield", "schwinger", "reduced"):
            raise ValueError(f"unknown backend {backend!r}")
        self.compiled = compiled
        self.backend = backend
        self.options = options or IntegrationOptions()
        self.coords = list(coords) if coords is not None else all_coordinates(compiled)

        extra = ()
        self._site_slot_pairs = None
        if with_site_disorder:
            self._site_slot_pairs = site_disorder_slots(compiled)
            extra = tuple(self._site_slot_pairs)

        if self.uses_wavefunction:
            self.program = build_wavefunction_program(compiled, extra_slots=extra)
            nonid = [(c, a) for c, a in self.coords if a != 0]
            self._probes = build_coordinate_probes(compiled, nonid)
            self._coord_is_identity = np.array([a == 0 for _, a in self.coords])
            self._nonid_pos = np.flatnonzero(~self._coord_is_identity)
        else:
            self.program = build_operator_program(compiled, extra_slots=extra)
            off = compiled.coordinate_offsets
            self._gidx = np.array(
                [off[c] + a for c, a in self.coords], dtype=np.int64
            )
        if self._site_slot_pairs is not None:
            self._site_slots = np.array(
                [self.program.slot_index[pair] for pair in self._site_slot_pairs],
                dtype=np.int64,
            )

    @property
    def uses_wavefunction(self) -> bool:
        return self.backend in ("schwinger", "reduced")

    @property
    def n_vectors(self) -> int:
        return {"schwinger": 1, "reduced": 2}.get(self.backend, 0)

    def slot_const(self, disorder_offsets: np.ndarray | None = None) -> np.ndarray:
        const = self.program.slot_const.copy()
        if disorder_offsets is not None:
            if self._site_slot_pairs is None:
                raise ValueError("engine was built without site-disorder slots")
            const[self._site_slots] += disorder_offsets
        return const

    def run(
        self,
        batch: SampledBatch,
        t_eval,
        slot_const: np.ndarray | None = None,
        slot_const_batch: np.ndarray | None = None,
        t0: float = 0.0,
    ):
        """Integrate a sampled batch; returns (series (n, nt, k), statuses).

        slot_const_batch, when given, holds one constant vector per
        trajectory (disordered ensembles); otherwise slot_const (or the
        clean baseline) is shared.
        """
        t_eval = np.asarray(t_eval, dtype=np.float64)
        n = len(batch)
        nt = len(t_eval)
        k = len(self.coords)
        series = np.empty((n, nt, k))
        statuses = np.empty(n, dtype=np.int64)
        shared_const = slot_const if slot_const is not None else self.program.slot_const
        opt = self.options

        if not self.uses_wavefunction:
            for i in range(n):
                const = shared_const if slot_const_batch is None else slot_const_batch[i]
                y, status = kernels.integrate_operator(
                    self.program, const, batch.x0[i], t_eval,
                    t0=t0, rtol=opt.rtol, atol=opt.atol,
                    max_steps=opt.max_steps, impl=opt.impl,
                )
                series[i] = y[:, self._gidx]
                statuses[i] = status
            return series, statuses

        # cap the stacked wavefunction block at ~2^20 complex entries
        per_traj = nt * self.n_vectors * self.program.state_dim
        chunk = max(1, min(n, (1 << 20) // max(1, per_traj)))
        psi_buf = []
        for i in range(n):
            const = shared_const if slot_const_batch is None else slot_const_batch[i]
            psi, status = kernels.integrate_wavefunction(
                self.program, const, batch.psi0[i], batch.weights[i], t_eval,
                t0=t0, rtol=opt.rtol, atol=opt.atol,
                max_steps=opt.max_steps, impl=opt.impl, project_norm=True,
            )
            statuses[i] = status
            psi_buf.append(psi)
            if len(psi_buf) >= chunk or i == n - 1:
                lo = i + 1 - len(psi_buf)
                block = np.stack(psi_buf)  # (m, nt, nvec, ns)
                w = batch.weights[lo : i + 1][:, None]  # broadcast over time
                vals = evaluate_probes(self._probes, block, w)
                series[lo : i + 1][:, :, self._coord_is_identity] = 1.0
                series[lo : i + 1][:, :, self._nonid_pos] = vals
                psi_buf = []
        return series, statuses

    def run_wavefunction_raw(
        self,
        batch: SampledBatch,
        t_eval,
        slot_const: np.ndarray | None = None,
        t0: float = 0.0,
    ):
        """Wavefunction series (n, nt, nvec, ns) without coordinate readout."""
        t_eval = np.asarray(t_eval, dtype=np.float64)
        n = len(batch)
        const = slot_const if slot_const is not None else self.program.slot_const
        opt = self.options
        out = np.empty((n, len(t_eval), self.n_vectors, self.program.state_dim), dtype=complex)
        statuses = np.empty(n, dtype=np.int64)
        for i in range(n):
            psi, status = kernels.integrate_wavefunction(
                self.program, const, batch.psi0[i], batch.weights[i], t_eval,
                t0=t0, rtol=opt.rtol, atol=opt.atol,
                max_steps=opt.max_steps, impl=opt.impl, project_norm=True,
            )
            out[i] = psi
            statuses[i] = status
        return out, statuses


# ---------------------------------------------------------------------------
# conserved quantities and tangent initial data


def energy_terms(compiled: ClusterHamiltonian):
    """(linear vector, pair index arrays) over the flat coordinate layout."""
    lin = np.zeros(compiled.n_coordinates)
    off = compiled.coordinate_offsets
    for c, terms in enumerate(compiled.linear):
        for alpha, coeff in terms.items():
            lin[off[c] + alpha] += coeff
    if compiled.couplings:
        ii = np.array([off[ci] + a for ci, a, _, _, _ in compiled.couplings], dtype=np.int64)
        jj = np.array([off[cj] + b for _, _, cj, b, _ in compiled.couplings], dtype=np.int64)
        ww = np.array([w for *_, w in compiled.couplings])
    else:
        ii = jj = np.empty(0, dtype=np.int64)
        ww = np.empty(0)
    return lin, ii, jj, ww


def energy_series(compiled: ClusterHamiltonian, series: np.ndarray) -> np.ndarray:
    """H_W along a full-coordinate series (..., n_coordinates)."""
    lin, ii, jj, ww = energy_terms(compiled)
    e = series @ lin
    if len(ii):
        e = e + np.einsum("...k,k->...", series[..., ii] * series[..., jj], ww)
    return e


def tangent_initial_operator(
    compiled: ClusterHamiltonian, cluster: int, alpha: int, x: np.ndarray
) -> np.ndarray:
    """u(t1) for the response to a kick by X_alpha on one cluster.

    u_nu = f_{alpha, gamma, nu} x_gamma is the Hamiltonian vector field
    of the coordinate x_alpha at the phase-space point x.
    """
    u = np.zeros_like(x)
    basis = compiled.bases[cluster]
    off = int(compiled.coordinate_offsets[cluster])
    gammas = np.arange(basis.dim)
    col = basis.f_column(alpha)  # f_{gamma, alpha}
    u[off + (gammas ^ alpha)] = -col * x[off + gammas]
    return u


def tangent_initial_wavefunction(
    compiled: ClusterHamiltonian, cluster: int, alpha: int, psi: np.ndarray
) -> np.ndarray:
    """dpsi(t1) = -i X_alpha psi on the kicked cluster, zero elsewhere."""
    basis = compiled.bases[cluster]
    sdims = [b.state_dim for b in compiled.bases]
    soff = np.concatenate([[0], np.cumsum(sdims)]).astype(int)
    perm, phase = basis.apply_tables(np.array([alpha], dtype=np.int64))
    dpsi = np.zeros_like(psi)
    lo, hi = soff[cluster], soff[cluster + 1]
    dpsi[..., lo:hi] = -1j * phase[0] * psi[..., lo + perm[0]]
    return dpsi


def two_time_pair(
    engine: Engine,
    batch: SampledBatch,
    coord_a: tuple[int, int],
    coords_b: list[tuple[int, int]],
    t1: float,
    t2_grid,
    slot_const: np.ndarray | None = None,
    slot_const_batch: np.ndarray | None = None,
):
    """Per-trajectory two-time correlator estimates between X_A(t1) and X_B(t2).

    Returns (sym, com, statuses): sym[i, j, b] estimates <{A(t1), B(t2_j)}>
    as 2 x_A(t1) x_B(t2_j); com[i, j, b] estimates i<[A(t1), B(t2_j)]> by
    propagating the kick response along the trajectory.  t2_grid must not
    precede t1.
    """
    t2_grid = np.asarray(t2_grid, dtype=np.float64)
    if len(t2_grid) and t2_grid[0] < t1 - 1e-12:
        raise ValueError("t2 grid precedes the kick time t1")
    compiled, prog, opt = engine.compiled, engine.program, engine.options
    ca, aa = coord_a
    n = len(batch)
    nb = len(coords_b)
    sym = np.empty((n, len(t2_grid), nb))
    com = np.empty((n, len(t2_grid), nb))
    statuses = np.zeros(n, dtype=np.int64)
    t1_arr = np.array([t1])

    if not engine.uses_wavefunction:
        off = compiled.coordinate_offsets
        ga = off[ca] + aa
        gb = np.array([off[c] + a for c, a in coords_b], dtype=np.int64)
        for i in range(n):
            const = _traj_const(prog, slot_const, slot_const_batch, i)
            y1, s1 = kernels.integrate_operator(
                prog, const, batch.x0[i], t1_arr,
                rtol=opt.rtol, atol=opt.atol, max_steps=opt.max_steps, impl=opt.impl,
            )
            x1 = y1[-1]
            u1 = tangent_initial_operator(compiled, ca, aa, x1)
            Y, U, s2 = kernels.integrate_operator_tangent(
                prog, const, x1, u1, t2_grid, t0=t1,
                rtol=opt.rtol, atol=opt.atol, max_steps=opt.max_steps, impl=opt.impl,
            )
            sym[i] = 2.0 * x1[ga] * Y[:, gb]
            com[i] = U[:, gb]
            statuses[i] = max(s1, s2)
        return sym, com, statuses

    probes_a = build_coordinate_probes(compiled, [coord_a])
    probes_b = build_coordinate_probes(compiled, coords_b)
    for i in range(n):
        const = _traj_const(prog, slot_const, slot_const_batch, i)
        w = batch.weights[i]
        p1, s1 = kernels.integrate_wavefunction(
            prog, const, batch.psi0[i], w, t1_arr,
            rtol=opt.rtol, atol=opt.atol, max_steps=opt.max_steps, impl=opt.impl,
        )
        psi1 = p1[-1]
        xa = evaluate_probes(probes_a, psi1, w)[0]
        dpsi1 = tangent_initial_wavefunction(compiled, ca, aa, psi1)
        P, D, s2 = kernels.integrate_wavefunction_tangent(
            prog, const, psi1, dpsi1, w, t2_grid, t0=t1,
            rtol=opt.rtol, atol=opt.atol, max_steps=opt.max_steps, impl=opt.impl,
        )
        xb = evaluate_probes(probes_b, P, w)
        cross = probe_values_cross(probes_b, P, D)
        wsel = w[probes_b.cluster, :]  # (nb, nvec)
        dxb = 2.0 * np.einsum("tvk,kv->tk", cross, wsel).real
        sym[i] = 2.0 * xa * xb
        com[i] = dxb
        statuses[i] = max(s1, s2)
    return sym, com, statuses


def _traj_const(prog, slot_const, slot_const_batch, i):
    if slot_const_batch is not None:
        return slot_const_batch[i]
    return slot_const if slot_const is not None else prog.slot_const
