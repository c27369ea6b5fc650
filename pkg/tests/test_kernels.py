"""Integration kernels: compiled/NumPy agreement and reference solutions.

The right-hand sides are rebuilt here directly from the compiled
Hamiltonian (scalar structure constants, dense cluster matrices) and
integrated with scipy at tight tolerance, so both kernel paths are
checked against an implementation that shares none of their lowering
or stepping code.
"""

import os
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from ctwa import kernels
from ctwa.compiler import compile_hamiltonian, contiguous_partition
from ctwa.model import CouplingTerm, FieldTerm, InitialStateSpec, SpinModel
from ctwa.programs import (
    OperatorProgram,
    build_operator_program,
    build_wavefunction_program,
)
from ctwa.sampling import InitialConditions

HAVE_CYTHON = "cython" in kernels.available_implementations()
IMPLS = list(kernels.available_implementations())

needs_cython = pytest.mark.skipif(not HAVE_CYTHON, reason="compiled extension not built")


def coupled_chain():
    terms = []
    for i in range(3):
        for ax in ("x", "y", "z"):
            terms.append(CouplingTerm(i, i + 1, ax, ax, 0.25))
    model = SpinModel(
        n_sites=4,
        couplings=tuple(terms),
        fields=(FieldTerm(0, "x", 0.9), FieldTerm(2, "z", -0.4), FieldTerm(3, "y", 0.3)),
    )
    return compile_hamiltonian(model, contiguous_partition(4, 2))


def single_cluster():
    model = SpinModel(
        n_sites=2,
        couplings=(CouplingTerm(0, 1, "x", "x", 0.5), CouplingTerm(0, 1, "z", "z", -0.3)),
        fields=(FieldTerm(0, "z", 1.1), FieldTerm(1, "x", 0.6)),
    )
    return compile_hamiltonian(model, contiguous_partition(2, 2))


def sample_x0(compiled, seed=42):
    ic = InitialConditions(compiled, InitialStateSpec("neel"), "operator")
    ss = np.random.SeedSequence(seed)
    r1, r2 = [np.random.Generator(np.random.Philox(s)) for s in ss.spawn(2)]
    return ic.draw(r1, r2, 1).x0[0]


def sample_reduced(compiled, seed=43):
    ic = InitialConditions(compiled, InitialStateSpec("neel"), "reduced")
    ss = np.random.SeedSequence(seed)
    r1, r2 = [np.random.Generator(np.random.Philox(s)) for s in ss.spawn(2)]
    batch = ic.draw(r1, r2, 1)
    return batch.psi0[0], batch.weights[0]


def slot_values(compiled, x):
    """Drive h_{c,beta} = field + sum of coupling weights times mean fields."""
    off = compiled.coordinate_offsets
    h = {}
    for c, terms in enumerate(compiled.linear):
        for beta, w in terms.items():
            h[(c, beta)] = h.get((c, beta), 0.0) + w
    for ci, ai, cj, aj, w in compiled.couplings:
        h[(ci, ai)] = h.get((ci, ai), 0.0) + w * x[off[cj] + aj]
        h[(cj, aj)] = h.get((cj, aj), 0.0) + w * x[off[ci] + ai]
    return h

def reference_operator_rhs(compiled, x):
    """dx_alpha = sum_beta f(alpha, beta) h_beta x_(alpha xor beta)."""
    off = compiled.coordinate_offsets
    dx = np.zeros_like(x)
    for (c, beta), val in slot_values(compiled, x).items():
        basis = compiled.bases[c]
        for alpha in range(basis.dim):
            f = basis.f(alpha, beta)
            if f:
                dx[off[c] + alpha] += f * val * x[off[c] + (alpha ^ beta)]
    return dx


def reference_wavefunction_rhs(compiled, psi, weights):
    """dpsi_c = -i H_eff^c psi_c with mean-field drives from the probes."""
    sdims = [b.state_dim for b in compiled.bases]
    soff = np.concatenate([[0], np.cumsum(sdims)]).astype(int)

    def mean(c, alpha):
        blk = psi[:, soff[c] : soff[c + 1]]
        m = compiled.bases[c].matrix(alpha)
        vals = np.einsum("vm,mn,vn->v", blk.conj(), m, blk).real
        return float(vals @ weights[c])

    h = {}
    for c, terms in enumerate(compiled.linear):
        for beta, w in terms.items():
            h[(c, beta)] = h.get((c, beta), 0.0) + w
    for ci, ai, cj, aj, w in compiled.couplings:
        h[(ci, ai)] = h.get((ci, ai), 0.0) + w * mean(cj, aj)
        h[(cj, aj)] = h.get((cj, aj), 0.0) + w * mean(ci, ai)
    out = np.zeros_like(psi)
    for (c, beta), val in h.items():
        blk = psi[:, soff[c] : soff[c + 1]]
        out[:, soff[c] : soff[c + 1]] += -1j * val * (blk @ compiled.bases[c].matrix(beta).T)
    return out


T_EVAL = np.array([0.0, 0.35, 0.8, 1.5])


class TestOperatorKernel:
    @pytest.mark.parametrize("impl", IMPLS)
    def test_matches_reference_integration(self, impl):
        compiled = coupled_chain()
        prog = build_operator_program(compiled)
        x0 = sample_x0(compiled)
        ref = solve_ivp(
            lambda t, x: reference_operator_rhs(compiled, x),
            (0.0, T_EVAL[-1]),
            x0,
            t_eval=T_EVAL,
            rtol=1e-12,
            atol=1e-13,
            method="DOP853",
        )
        out, status = kernels.integrate_operator(
            prog, prog.slot_const, x0, T_EVAL, rtol=1e-10, atol=1e-12, impl=impl
        )
        assert status == kernels.STATUS_OK
        assert_allclose(out, ref.y.T, atol=5e-8)

    @needs_cython
    def test_implementations_agree(self):
        compiled = coupled_chain()
        prog = build_operator_program(compiled)
        x0 = sample_x0(compiled)
        out_p, st_p = kernels.integrate_operator(
            prog, prog.slot_const, x0, T_EVAL, rtol=1e-8, atol=1e-10, impl="python"
        )
        out_c, st_c = kernels.integrate_operator(
            prog, prog.slot_const, x0, T_EVAL, rtol=1e-8, atol=1e-10, impl="cython"
        )
        assert st_p == st_c == kernels.STATUS_OK
        assert_allclose(out_c, out_p, atol=1e-10)

    def test_first_node_at_t0_is_exact_copy(self):
        compiled = coupled_chain()
        prog = build_operator_program(compiled)
        x0 = sample_x0(compiled)
        out, status = kernels.integrate_operator(prog, prog.slot_const, x0, np.array([0.0]))
        assert status == kernels.STATUS_OK
        assert np.array_equal(out[0], x0)

    def test_accuracy_improves_with_tolerance(self):
        compiled = coupled_chain()
        prog = build_operator_program(compiled)
        x0 = sample_x0(compiled)
        t = np.array([2.0])
        ref = solve_ivp(
            lambda _, x: reference_operator_rhs(compiled, x),
            (0.0, 2.0),
            x0,
            t_eval=t,
            rtol=1e-12,
            atol=1e-13,
            method="DOP853",
        ).y[:, -1]
        errs = []
        for rtol in (1e-4, 1e-7, 1e-10):
            out, _ = kernels.integrate_operator(prog, prog.slot_const, x0, t, rtol=rtol, atol=rtol * 1e-2)
            errs.append(np.max(np.abs(out[-1] - ref)))
        assert errs[0] < 1e-2
        assert errs[1] < errs[0]
        assert errs[2] < errs[1]
        assert errs[2] < 1e-8

    def test_descending_targets_rejected(self):
        compiled = coupled_chain()
        prog = build_operator_program(compiled)
        x0 = sample_x0(compiled)
        for impl in IMPLS:
            with pytest.raises(ValueError, match="ascending"):
                kernels.integrate_operator(
                    prog, prog.slot_const, x0, np.array([0.5, 0.1]), impl=impl
                )

    def test_step_budget_status(self):
        compiled = coupled_chain()
        prog = build_operator_program(compiled)
        x0 = sample_x0(compiled)
        for impl in IMPLS:
            _, status = kernels.integrate_operator(
                prog, prog.slot_const, x0, np.array([50.0]), max_steps=3, impl=impl
            )
            assert status == kernels.STATUS_MAX_STEPS

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_underflow_status_on_finite_time_blowup(self):
        # dx/dt = x^2 via a self-coupled slot; diverges at t = 1, so the
        # adaptive step collapses before reaching the requested t = 2
        prog = OperatorProgram(
            n_coords=1,
            n_slots=1,
            slot_const=np.zeros(1),
            ent_slot=np.zeros(1, dtype=np.int64),
            ent_dst=np.zeros(1, dtype=np.int64),
            ent_src=np.zeros(1, dtype=np.int64),
            ent_f=np.ones(1),
            cpl_slot=np.zeros(1, dtype=np.int64),
            cpl_src=np.zeros(1, dtype=np.int64),
            cpl_w=np.ones(1),
            slot_index={(0, 0): 0},
        )
        for impl in IMPLS:
            _, status = kernels.integrate_operator(
                prog, prog.slot_const, np.ones(1), np.array([2.0]), impl=impl
            )
            assert status == kernels.STATUS_UNDERFLOW


class TestOperatorTangent:
    @pytest.mark.parametrize("impl", IMPLS)
    def test_matches_finite_difference(self, impl):
        compiled = coupled_chain()
        prog = build_operator_program(compiled)
        x0 = sample_x0(compiled)
        rng = np.random.default_rng(3)
        u0 = rng.standard_normal(len(x0))
        t = np.array([0.0, 0.6, 1.2])
        xs, us, status = kernels.integrate_operator_tangent(
            prog, prog.slot_const, x0, u0, t, rtol=1e-10, atol=1e-12, impl=impl
        )
        assert status == kernels.STATUS_OK
        assert np.array_equal(us[0], u0)
        eps = 1e-6
        hi, _ = kernels.integrate_operator(
            prog, prog.slot_const, x0 + eps * u0, t, rtol=1e-12, atol=1e-13, impl=impl
        )
        lo, _ = kernels.integrate_operator(
            prog, prog.slot_const, x0 - eps * u0, t, rtol=1e-12, atol=1e-13, impl=impl
        )
        fd = (hi - lo) / (2 * eps)
        assert_allclose(us, fd, atol=2e-4)
        base, _ = kernels.integrate_operator(
            prog, prog.slot_const, x0, t, rtol=1e-10, atol=1e-12, impl=impl
        )
        assert_allclose(xs, base, atol=1e-9)

    @needs_cython
    def test_implementations_agree(self):
        compiled = single_cluster()
        prog = build_operator_program(compiled)
        x0 = sample_x0(compiled)
        u0 = np.sin(np.arange(len(x0)) * 0.7)
        t = np.array([0.9])
        xs_p, us_p, _ = kernels.integrate_operator_tangent(
            prog, prog.slot_const, x0, u0, t, impl="python"
        )
        xs_c, us_c, _ = kernels.integrate_operator_tangent(
            prog, prog.slot_const, x0, u0, t, impl="cython"
        )
        assert_allclose(xs_c, xs_p, atol=1e-10)
        assert_allclose(us_c, us_p, atol=1e-10)


class TestWavefunctionKernel:
    @pytest.mark.parametrize("impl", IMPLS)
    def test_matches_reference_integration(self, impl):
        compiled = coupled_chain()
        prog = build_wavefunction_program(compiled)
        psi0, weights = sample_reduced(compiled)
        ref = solve_ivp(
            lambda t, y: reference_wavefunction_rhs(
                compiled, y.reshape(psi0.shape), weights
            ).reshape(-1),
            (0.0, T_EVAL[-1]),
            psi0.reshape(-1),
            t_eval=T_EVAL,
            rtol=1e-12,
            atol=1e-13,
            method="DOP853",
        )
        out, status = kernels.integrate_wavefunction(
            prog, prog.slot_const, psi0, weights, T_EVAL, rtol=1e-10, atol=1e-12, impl=impl
        )
        assert status == kernels.STATUS_OK
        assert_allclose(out, ref.y.T.reshape(out.shape), atol=5e-8)

    @pytest.mark.parametrize("impl", IMPLS)
    def test_isolated_cluster_matches_matrix_exponential(self, impl):
        compiled = single_cluster()
        prog = build_wavefunction_program(compiled)
        basis = compiled.bases[0]
        h_dense = np.zeros((4, 4), dtype=complex)
        for beta, w in compiled.linear[0].items():
            h_dense += w * basis.matrix(beta)
        psi0 = np.array([[0.5, 0.5j, -0.5, 0.5]], dtype=complex)
        weights = np.ones((1, 1))
        t = np.array([0.0, 0.7, 1.9])
        out, status = kernels.integrate_wavefunction(
            prog, prog.slot_const, psi0, weights, t, rtol=1e-11, atol=1e-13, impl=impl
        )
        assert status == kernels.STATUS_OK
        for i, ti in enumerate(t):
            assert_allclose(out[i, 0], expm(-1j * h_dense * ti) @ psi0[0], atol=1e-8)

    @needs_cython
    def test_implementations_agree(self):
        compiled = coupled_chain()
        prog = build_wavefunction_program(compiled)
        psi0, weights = sample_reduced(compiled)
        out_p, _ = kernels.integrate_wavefunction(
            prog, prog.slot_const, psi0, weights, T_EVAL, impl="python"
        )
        out_c, _ = kernels.integrate_wavefunction(
            prog, prog.slot_const, psi0, weights, T_EVAL, impl="cython"
        )
        assert_allclose(out_c, out_p, atol=1e-10)


class TestWavefunctionTangent:
    @pytest.mark.parametrize("impl", IMPLS)
    def test_matches_finite_difference(self, impl):
        compiled = coupled_chain()
        prog = build_wavefunction_program(compiled)
        psi0, weights = sample_reduced(compiled)
        rng = np.random.default_rng(8)
        dpsi0 = rng.standard_normal(psi0.shape) + 1j * rng.standard_normal(psi0.shape)
        t = np.array([0.0, 0.5, 1.0])
        psis, dpsis, status = kernels.integrate_wavefunction_tangent(
            prog, prog.slot_const, psi0, dpsi0, weights, t, rtol=1e-10, atol=1e-12, impl=impl
        )
        assert status == kernels.STATUS_OK
        assert_allclose(dpsis[0], dpsi0, atol=1e-14)
        eps = 1e-6
        hi, _ = kernels.integrate_wavefunction(
            prog, prog.slot_const, psi0 + eps * dpsi0, weights, t, rtol=1e-12, atol=1e-13, impl=impl
        )
        lo, _ = kernels.integrate_wavefunction(
            prog, prog.slot_const, psi0 - eps * dpsi0, weights, t, rtol=1e-12, atol=1e-13, impl=impl
        )
        assert_allclose(dpsis, (hi - lo) / (2 * eps), atol=5e-4)

    @needs_cython
    def test_implementations_agree(self):
        compiled = coupled_chain()
        prog = build_wavefunction_program(compiled)
        psi0, weights = sample_reduced(compiled)
        dpsi0 = np.exp(1j * np.arange(psi0.size)).reshape(psi0.shape)
        t = np.array([0.8])
        _, dp_p, _ = kernels.integrate_wavefunction_tangent(
            prog, prog.slot_const, psi0, dpsi0, weights, t, impl="python"
        )
        _, dp_c, _ = kernels.integrate_wavefunction_tangent(
            prog, prog.slot_const, psi0, dpsi0, weights, t, impl="cython"
        )
        assert_allclose(dp_c, dp_p, atol=1e-9)


class TestDispatch:
    def test_unknown_implementation_rejected(self):
        compiled = single_cluster()
        prog = build_operator_program(compiled)
        with pytest.raises(ValueError, match="implementation"):
            kernels.integrate_operator(
                prog, prog.slot_const, np.zeros(prog.n_coords), np.array([1.0]), impl="fortran"
            )

    def test_pure_python_env_var_disables_extension(self):
        env = dict(os.environ, CTWA_PURE_PYTHON="1")
        code = "import ctwa.kernels as k; print(k.backend_name(), k.available_implementations())"
        res = subprocess.run(
            [sys.executable, "-c", code], capture_output=True, text=True, env=env
        )
        assert res.returncode == 0, res.stderr
        assert res.stdout.split()[0] == "python"
        assert "cython" not in res.stdout

    @needs_cython
    def test_default_backend_is_compiled(self):
        assert kernels.backend_name() == "cython"
