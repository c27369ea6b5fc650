"""Kernel dispatch: compiled extension when available, NumPy otherwise.

Selection happens at import time; set CTWA_PURE_PYTHON=1 to force the
NumPy implementation, or pass impl="python"/"cython" per call (used by
the cross-checking tests and the benchmark).
"""

from __future__ import annotations

import os

import numpy as np

from . import kernels_py
from .programs import OperatorProgram, WavefunctionProgram

STATUS_OK = kernels_py.STATUS_OK
STATUS_UNDERFLOW = kernels_py.STATUS_UNDERFLOW
STATUS_MAX_STEPS = kernels_py.STATUS_MAX_STEPS

_compiled = None
if os.environ.get("CTWA_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None


def backend_name() -> str:
    return "cython" if _compiled is not None else "python"


def available_implementations() -> tuple[str, ...]:
    return ("cython", "python") if _compiled is not None else ("python",)


def _module(impl: str | None):
    if impl is None:
        return _compiled if _compiled is not None else kernels_py
    if impl == "python":
        return kernels_py
    if impl == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this install")
        return _compiled
    raise ValueError(f"unknown kernel implementation {impl!r}")


def integrate_operator(
    prog: OperatorProgram,
    slot_const: np.ndarray,
    x0: np.ndarray,
    t_eval,
    t0: float = 0.0,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    max_steps: int = 500_000,
    impl: str | None = None,
):
    mod = _module(impl)
    return mod.integrate_operator(
        np.ascontiguousarray(slot_const, dtype=np.float64),
        prog.ent_slot,
        prog.ent_dst,
        prog.ent_src,
        prog.ent_f,
        prog.cpl_slot,
        prog.cpl_src,
        prog.cpl_w,
        np.ascontiguousarray(x0, dtype=np.float64),
        float(t0),
        np.ascontiguousarray(t_eval, dtype=np.float64),
        float(rtol),
        float(atol),
        int(max_steps),
    )


def integrate_operator_tangent(
    prog: OperatorProgram,
    slot_const: np.ndarray,
    x0: np.ndarray,
    u0: np.ndarray,
    t_eval,
    t0: float = 0.0,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    max_steps: int = 500_000,
    impl: str | None = None,
):
    mod = _module(impl)
    return mod.integrate_operator_tangent(
        np.ascontiguousarray(slot_const, dtype=np.float64),
        prog.ent_slot,
        prog.ent_dst,
        prog.ent_src,
        prog.ent_f,
        prog.cpl_slot,
        prog.cpl_src,
        prog.cpl_w,
        np.ascontiguousarray(x0, dtype=np.float64),
        np.ascontiguousarray(u0, dtype=np.float64),
        float(t0),
        np.ascontiguousarray(t_eval, dtype=np.float64),
        float(rtol),
        float(atol),
        int(max_steps),
    )


def _probe_weights(prog: WavefunctionProgram, weights: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if prog.n_probes == 0:
        return np.zeros((0, weights.shape[-1]))
    return np.ascontiguousarray(weights[prog.probe_cluster, :])


def integrate_wavefunction(
    prog: WavefunctionProgram,
    slot_const: np.ndarray,
    psi0: np.ndarray,
    weights: np.ndarray,
    t_eval,
    t0: float = 0.0,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    max_steps: int = 500_000,
    impl: str | None = None,
    project_norm: bool = False,
):
    mod = _module(impl)
    return mod.integrate_wavefunction(
        np.ascontiguousarray(slot_const, dtype=np.float64),
        prog.slot_perm,
        prog.slot_phase,
        prog.slot_len,
        prog.slot_out,
        _probe_weights(prog, weights),
        prog.probe_perm,
        prog.probe_phase,
        prog.probe_len,
        prog.probe_out,
        prog.cpl_slot,
        prog.cpl_probe,
        prog.cpl_w,
        np.ascontiguousarray(psi0, dtype=complex),
        float(t0),
        np.ascontiguousarray(t_eval, dtype=np.float64),
        float(rtol),
        float(atol),
        int(max_steps),
        prog.state_off if project_norm else None,
    )


def integrate_wavefunction_tangent(
    prog: WavefunctionProgram,
    slot_const: np.ndarray,
    psi0: np.ndarray,
    dpsi0: np.ndarray,
    weights: np.ndarray,
    t_eval,
    t0: float = 0.0,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    max_steps: int = 500_000,
    impl: str | None = None,
):
    mod = _module(impl)
    return mod.integrate_wavefunction_tangent(
        np.ascontiguousarray(slot_const, dtype=np.float64),
        prog.slot_perm,
        prog.slot_phase,
        prog.slot_len,
        prog.slot_out,
        _probe_weights(prog, weights),
        prog.probe_perm,
        prog.probe_phase,
        prog.probe_len,
        prog.probe_out,
        prog.cpl_slot,
        prog.cpl_probe,
        prog.cpl_w,
        np.ascontiguousarray(psi0, dtype=complex),
        np.ascontiguousarray(dpsi0, dtype=complex),
        float(t0),
        np.ascontiguousarray(t_eval, dtype=np.float64),
        float(rtol),
        float(atol),
        int(max_steps),
    )
