"""NumPy reference implementation of the integration kernels.

Mirrors the compiled extension exactly (same argument order, same
stepping logic, same status codes) so the two can be swapped and
compared.  Status: 0 ok, 1 step underflow, 2 step budget exhausted.

The integrator is an adaptive Dormand-Prince 5(4) pair.  Requested
output times are hit exactly by clipping the step, so no interpolation
error enters recorded values.
"""

from __future__ import annotations

import numpy as np

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_MAX_STEPS = 2

_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71 / 57600,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


def _error_norm(err, y0, y1, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean(np.abs(err / scale) ** 2)))


def _initial_step(rhs, t0, y0, f0, rtol, atol):
    scale = atol + rtol * np.abs(y0)
    d0 = float(np.sqrt(np.mean(np.abs(y0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean(np.abs(f0 / scale) ** 2)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = rhs(y1)
    d2 = float(np.sqrt(np.mean(np.abs((f1 - f0) / scale) ** 2))) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)


def _drive(rhs, y0, t0, t_eval, rtol, atol, max_steps, project=None):
    """Generic adaptive DP5(4) loop hitting every output node exactly.

    ``project``, when given, is applied to the state after every accepted
    step (manifold projection in the sense of Hairer/Lubich/Wanner IV.4).
    The FSAL derivative is kept from the unprojected point; the projection
    displacement is O(local error), below the tolerance already granted.
    """
    t_eval = np.asarray(t_eval, dtype=np.float64)
    out = np.empty((len(t_eval),) + y0.shape, dtype=y0.dtype)
    t = float(t0)
    y = y0.copy()
    f = rhs(y)
    h_nat = _initial_step(rhs, t, y, f, rtol, atol)
    steps = 0
    for i, target in enumerate(t_eval):
        if target < t - 1e-12:
            raise ValueError("output times must be ascending and >= t0")
        while t < target - 1e-14 * max(1.0, abs(target)):
            h = min(h_nat, target - t)
            clipped = h < h_nat
            while True:
                steps += 1
                if steps > max_steps:
                    return out, STATUS_MAX_STEPS
                k1 = f
                k2 = rhs(y + h * (_A21 * k1))
                k3 = rhs(y + h * (_A31 * k1 + _A32 * k2))
                k4 = rhs(y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3))
                k5 = rhs(y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4))
                k6 = rhs(y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5))
                y_new = y + h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
                k7 = rhs(y_new)
                err = h * (
                    _E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7
                )
                norm = _error_norm(err, y, y_new, rtol, atol)
                if norm <= 1.0:
                    factor = (
                        _MAX_FACTOR
                        if norm == 0.0
                        else min(_MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * norm**-0.2))
                    )
                    t += h
                    y = y_new
                    f = k7
                    if project is not None:
                        y = project(y)
                    if clipped:
                        h_nat = max(h_nat, h * factor)
                    else:
                        h_nat = h * factor
                    break
                if np.isfinite(norm):
                    factor = max(_MIN_FACTOR, min(1.0, _SAFETY * norm**-0.2))
                else:
                    # the state went non-finite inside the trial step;
                    # shrink hard and let the underflow check catch it
                    factor = _MIN_FACTOR
                h *= factor
                clipped = False
                h_nat = h
                if h < 1e-13 * max(1.0, abs(t)):
                    return out, STATUS_UNDERFLOW
        out[i] = y
        t = max(t, float(target))
    return out, STATUS_OK


# ---------------------------------------------------------------------------
# operator backend


def _operator_rhs_factory(
    slot_const, ent_slot, ent_dst, ent_src, ent_f, cpl_slot, cpl_src, cpl_w, n_coords
):
    def rhs(x):
        h = slot_const.copy()
        if len(cpl_slot):
            np.add.at(h, cpl_slot, cpl_w * x[cpl_src])
        return np.bincount(
            ent_dst, weights=ent_f * h[ent_slot] * x[ent_src], minlength=n_coords
        )

    return rhs


def integrate_operator(
    slot_const,
    ent_slot,
    ent_dst,
    ent_src,
    ent_f,
    cpl_slot,
    cpl_src,
    cpl_w,
    x0,
    t0,
    t_eval,
    rtol,
    atol,
    max_steps,
):
    x0 = np.asarray(x0, dtype=np.float64)
    rhs = _operator_rhs_factory(
        slot_const, ent_slot, ent_dst, ent_src, ent_f, cpl_slot, cpl_src, cpl_w, len(x0)
    )
    return _drive(rhs, x0, t0, t_eval, rtol, atol, max_steps)


def integrate_operator_tangent(
    slot_const,
    ent_slot,
    ent_dst,
    ent_src,
    ent_f,
    cpl_slot,
    cpl_src,
    cpl_w,
    x0,
    u0,
    t0,
    t_eval,
    rtol,
    atol,
    max_steps,
):
    """Joint integration of x and its tangent (linearized) vector u."""
    x0 = np.asarray(x0, dtype=np.float64)
    u0 = np.asarray(u0, dtype=np.float64)
    n = len(x0)

    def rhs(y):
        x, u = y[:n], y[n:]
        h = slot_const.copy()
        dh = np.zeros_like(h)
        if len(cpl_slot):
            np.add.at(h, cpl_slot, cpl_w * x[cpl_src])
            np.add.at(dh, cpl_slot, cpl_w * u[cpl_src])
        hx = h[ent_slot]
        dx = np.bincount(ent_dst, weights=ent_f * hx * x[ent_src], minlength=n)
        du = np.bincount(
            ent_dst,
            weights=ent_f * (hx * u[ent_src] + dh[ent_slot] * x[ent_src]),
            minlength=n,
        )
        return np.concatenate([dx, du])

    y0 = np.concatenate([x0, u0])
    out, status = _drive(rhs, y0, t0, t_eval, rtol, atol, max_steps)
    return out[:, :n], out[:, n:], status


# ---------------------------------------------------------------------------
# wavefunction backends (Schwinger-boson and reduced-vector states)


def _probe_values(psi, probe_w, probe_perm, probe_phase, probe_len, probe_out):
    """p_k = sum_v probe_w[k, v] * Re <psi_v| X_k |psi_v>."""
    n_probes = len(probe_len)
    p = np.empty(n_probes)
    for k in range(n_probes):
        L = int(probe_len[k])
        o = int(probe_out[k])
        bra = np.conj(psi[:, o : o + L])
        ket = psi[:, probe_perm[k, :L]]
        vals = np.einsum("vm,m,vm->v", bra, probe_phase[k, :L], ket).real
        p[k] = float(vals @ probe_w[k])
    return p


def _apply_slots(psi, h, slot_perm, slot_phase, slot_len, slot_out, out):
    """out_v -= i * sum_s h[s] X_s psi_v, accumulated in place."""
    for s in range(len(h)):
        hs = h[s]
        if hs == 0.0:
            continue
        L = int(slot_len[s])
        o = int(slot_out[s])
        out[:, o : o + L] += (-1j * hs) * slot_phase[s, :L] * psi[:, slot_perm[s, :L]]


def integrate_wavefunction(
    slot_const,
    slot_perm,
    slot_phase,
    slot_len,
    slot_out,
    probe_w,
    probe_perm,
    probe_phase,
    probe_len,
    probe_out,
    cpl_slot,
    cpl_probe,
    cpl_w,
    psi0,
    t0,
    t_eval,
    rtol,
    atol,
    max_steps,
    norm_off=None,
):
    psi0 = np.asarray(psi0, dtype=complex)
    n_vec, ns = psi0.shape

    def rhs(psi_flat):
        psi = psi_flat.reshape(n_vec, ns)
        h = slot_const.copy()
        if len(cpl_slot):
            p = _probe_values(psi, probe_w, probe_perm, probe_phase, probe_len, probe_out)
            np.add.at(h, cpl_slot, cpl_w * p[cpl_probe])
        out = np.zeros_like(psi)
        _apply_slots(psi, h, slot_perm, slot_phase, slot_len, slot_out, out)
        return out.reshape(-1)

    project = None
    if norm_off is not None:
        off = np.asarray(norm_off, dtype=np.int64)
        lo, hi = off[:-1], off[1:]
        tgt = np.stack(
            [np.linalg.norm(psi0[:, a:b], axis=1) for a, b in zip(lo, hi)], axis=1
        )

        def project(psi_flat):
            # rescale each per-cluster block back to its initial norm,
            # which the continuous flow conserves exactly
            psi = psi_flat.reshape(n_vec, ns)
            for k in range(len(lo)):
                cur = np.linalg.norm(psi[:, lo[k] : hi[k]], axis=1)
                fac = np.divide(
                    tgt[:, k], cur, out=np.ones_like(cur), where=(cur > 0.0) & (tgt[:, k] > 0.0)
                )
                psi[:, lo[k] : hi[k]] *= fac[:, None]
            return psi_flat

    out, status = _drive(
        rhs, psi0.reshape(-1), t0, t_eval, rtol, atol, max_steps, project=project
    )
    return out.reshape(len(t_eval), n_vec, ns), status


def integrate_wavefunction_tangent(
    slot_const,
    slot_perm,
    slot_phase,
    slot_len,
    slot_out,
    probe_w,
    probe_perm,
    probe_phase,
    probe_len,
    probe_out,
    cpl_slot,
    cpl_probe,
    cpl_w,
    psi0,
    dpsi0,
    t0,
    t_eval,
    rtol,
    atol,
    max_steps,
):
    """Joint state + tangent evolution for two-time response functions.

    The tangent feels both the propagated perturbation and the feedback
    of the perturbed mean fields: d(dpsi) = -i (H_eff dpsi + dH_eff psi)
    with dH_eff built from dp_k = sum_v w 2 Re <psi_v|X_k|dpsi_v>.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    dpsi0 = np.asarray(dpsi0, dtype=complex)
    n_vec, ns = psi0.shape
    block = n_vec * ns

    def rhs(y):
        psi = y[:block].reshape(n_vec, ns)
        dpsi = y[block:].reshape(n_vec, ns)
        h = slot_const.copy()
        dh = np.zeros_like(h)
        if len(cpl_slot):
            p = _probe_values(psi, probe_w, probe_perm, probe_phase, probe_len, probe_out)
            np.add.at(h, cpl_slot, cpl_w * p[cpl_probe])
            dp = np.empty(len(probe_len))
            for k in range(len(probe_len)):
                L = int(probe_len[k])
                o = int(probe_out[k])
                bra = np.conj(psi[:, o : o + L])
                ket = dpsi[:, probe_perm[k, :L]]
                vals = 2.0 * np.einsum("vm,m,vm->v", bra, probe_phase[k, :L], ket).real
                dp[k] = float(vals @ probe_w[k])
            np.add.at(dh, cpl_slot, cpl_w * dp[cpl_probe])
        out = np.zeros_like(psi)
        dout = np.zeros_like(dpsi)
        _apply_slots(psi, h, slot_perm, slot_phase, slot_len, slot_out, out)
        _apply_slots(dpsi, h, slot_perm, slot_phase, slot_len, slot_out, dout)
        _apply_slots(psi, dh, slot_perm, slot_phase, slot_len, slot_out, dout)
        return np.concatenate([out.reshape(-1), dout.reshape(-1)])

    y0 = np.concatenate([psi0.reshape(-1), dpsi0.reshape(-1)])
    out, status = _drive(rhs, y0, t0, t_eval, rtol, atol, max_steps)
    nt = len(t_eval)
    return (
        out[:, :block].reshape(nt, n_vec, ns),
        out[:, block:].reshape(nt, n_vec, ns),
        status,
    )
