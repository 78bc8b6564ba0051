"""Hot integration loops, JIT-compiled with numba when available.

The pure-numpy fallback in ``sme.Propagator`` implements the identical
arithmetic; set QPE_NO_NUMBA=1 to force it (mainly for testing).

Both loops share the same single-step recipe:

    det  = G rho + rho G+  +  sum_k Lw_k rho Lw_k+        (Lw_k = sqrt(rate) L_k)
    hrho = A rho + rho A+ - Tr[(A + A+) rho] rho
    rho' = rho + dt det + w hrho

with w = sqrt(kappa eta) dW (sampled) or 2 kappa eta (I - m) dt (driven),
followed by optional Hermitian symmetrization and trace renormalization.
"""

from __future__ import annotations

import os

import numpy as np

HAVE_NUMBA = False
if not os.environ.get("QPE_NO_NUMBA"):
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover
        pass

if not HAVE_NUMBA:  # pragma: no cover
    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco if not (args and callable(args[0])) else args[0]


@njit(cache=True)
def _traces(mat, rho, d):
    """Tr[mat rho] as a complex scalar."""
    out = 0.0 + 0.0j
    for r in range(d):
        for c in range(d):
            out += mat[r, c] * rho[c, r]
    return out


@njit(cache=True)
def _step_core(G, Gd, Lw, Lwd, A, Ad, Asum, rho, dt, w):
    det = G @ rho + rho @ Gd
    for k in range(Lw.shape[0]):
        det = det + Lw[k] @ rho @ Lwd[k]
    trc = _traces(Asum, rho, rho.shape[0])
    hrho = A @ rho + rho @ Ad - trc * rho
    return rho + dt * det + w * hrho


@njit(cache=True)
def _post(rho1, symmetrize, renormalize):
    """Returns (rho_next, drift, ok)."""
    d = rho1.shape[0]
    tr = 0.0
    mx = 0.0
    for r in range(d):
        tr += rho1[r, r].real
        for c in range(d):
            a = abs(rho1[r, c])
            if a > mx:
                mx = a
    drift = abs(tr - 1.0)
    if not np.isfinite(tr) or drift > 0.5 or mx > 1e6:
        return rho1, drift, False
    if symmetrize:
        rho1 = 0.5 * (rho1 + np.conj(rho1.T))
    if renormalize:
        tr = 0.0
        for r in range(d):
            tr += rho1[r, r].real
        rho1 = rho1 / tr
    return rho1, drift, True


@njit(cache=True)
def sampled_loop(
    G, Gd, Lw, Lwd, A, Ad, Asum, X,
    rho0, dt, dw, diff_gain, noise_gain,
    symmetrize, renormalize, snap_stride, snaps, diag_stride, diags,
):
    """Sampled-noise integration; fills currents/truth, returns diagnostics.

    Returns (currents, truth, rho_final, drift_max, n_snaps, n_diags, bad_step).
    """
    n = dw.shape[0]
    d = rho0.shape[0]
    rho = rho0.copy()
    currents = np.empty(n)
    truth = np.empty(n)
    drift_max = 0.0
    n_snap = 0
    n_diag = 0
    for j in range(n):
        m = _traces(X, rho, d).real
        truth[j] = m
        currents[j] = m + dw[j] * noise_gain
        if snap_stride > 0 and j % snap_stride == 0:
            snaps[n_snap] = rho
            n_snap += 1
        if diag_stride > 0 and j % diag_stride == 0:
            diags[n_diag] = rho
            n_diag += 1
        rho1 = _step_core(G, Gd, Lw, Lwd, A, Ad, Asum, rho, dt, diff_gain * dw[j])
        rho, drift, ok = _post(rho1, symmetrize, renormalize)
        if not ok:
            return currents, truth, rho, drift, n_snap, n_diag, j
        if drift > drift_max:
            drift_max = drift
    return currents, truth, rho, drift_max, n_snap, n_diag, -1


@njit(cache=True)
def driven_loop(
    G, Gd, Lw, Lwd, A, Ad, Asum, X,
    rho0, dt, currents, gain,
    symmetrize, renormalize, snap_stride, snaps, diag_stride, diags,
):
    """Record-driven integration; returns conditional means and diagnostics.

    Returns (cond_means, rho_final, drift_max, n_snaps, n_diags, bad_step).
    """
    n = currents.shape[0]
    d = rho0.shape[0]
    rho = rho0.copy()
    cond = np.empty(n)
    drift_max = 0.0
    n_snap = 0
    n_diag = 0
    for j in range(n):
        m = _traces(X, rho, d).real
        cond[j] = m
        if snap_stride > 0 and j % snap_stride == 0:
            snaps[n_snap] = rho
            n_snap += 1
        if diag_stride > 0 and j % diag_stride == 0:
            diags[n_diag] = rho
            n_diag += 1
        rho1 = _step_core(G, Gd, Lw, Lwd, A, Ad, Asum, rho, dt, gain * (currents[j] - m))
        rho, drift, ok = _post(rho1, symmetrize, renormalize)
        if not ok:
            return cond, rho, drift, n_snap, n_diag, j
        if drift > drift_max:
            drift_max = drift
    return cond, rho, drift_max, n_snap, n_diag, -1
