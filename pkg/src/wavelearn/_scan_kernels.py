"""Compiled inner loops for the recurrent scan.

The recurrence over time cannot be vectorized, so the per-step work runs in
numba-compiled kernels; everything batchable (input projections, weight
gradients) stays in BLAS calls outside.  The kernels add the input-side bias
themselves and support reversed iteration, so the surrounding graph needs no
flip or broadcast-add nodes.  A pure numpy fallback with identical arithmetic
keeps the package importable without a working numba.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except Exception:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return deco


@njit(cache=True)
def _scan_forward_jit(xp, bih, whh_rows, bhh, h0, reverse):
    # xp: (T, B, 3H) input projections without bias; bih: (3H,) input bias;
    # whh_rows: (3H, H) row j = hidden weights of output j; h0: (B, H).
    # Gates and hs are stored in scan order; out[t] follows input time.
    T, B, H3 = xp.shape
    H = H3 // 3
    r = np.empty((T, B, H))
    z = np.empty((T, B, H))
    n = np.empty((T, B, H))
    hs = np.empty((T + 1, B, H))
    out = np.empty((T, B, H))
    hs[0] = h0
    v = np.empty(H3)
    for s in range(T):
        t = T - 1 - s if reverse else s
        for b in range(B):
            h = hs[s, b]
            for j in range(H3):
                acc = bhh[j]
                row = whh_rows[j]
                for i in range(H):
                    acc += h[i] * row[i]
                v[j] = acc
            for j in range(H):
                r[s, b, j] = 1.0 / (1.0 + np.exp(-(xp[t, b, j] + bih[j] + v[j])))
            for j in range(H):
                z[s, b, j] = 1.0 / (
                    1.0 + np.exp(-(xp[t, b, H + j] + bih[H + j] + v[H + j]))
                )
            for j in range(H):
                n[s, b, j] = np.tanh(
                    xp[t, b, 2 * H + j] + bih[2 * H + j] + r[s, b, j] * v[2 * H + j]
                )
            for j in range(H):
                hs[s + 1, b, j] = (1.0 - z[s, b, j]) * n[s, b, j] + z[s, b, j] * h[j]
                out[t, b, j] = hs[s + 1, b, j]
    return out, hs, r, z, n


@njit(cache=True)
def _scan_backward_jit(gh, hs, r, z, n, vn, whh_cols, reverse):
    # gh: (T, B, H) upstream gradient in input time; gates/hs/vn in scan
    # order; whh_cols: (H, 3H) row i = column i of the hidden weights.
    T, B, H = gh.shape
    dxp = np.empty((T, B, 3 * H))
    dv = np.empty((T, B, 3 * H))
    carry = np.zeros((B, H))
    for s in range(T - 1, -1, -1):
        t = T - 1 - s if reverse else s
        for b in range(B):
            for j in range(H):
                dh = gh[t, b, j] + carry[b, j]
                dn = dh * (1.0 - z[s, b, j])
                dz = dh * (hs[s, b, j] - n[s, b, j])
                da_n = dn * (1.0 - n[s, b, j] * n[s, b, j])
                dr = da_n * vn[s, b, j]
                da_z = dz * z[s, b, j] * (1.0 - z[s, b, j])
                da_r = dr * r[s, b, j] * (1.0 - r[s, b, j])
                dxp[t, b, j] = da_r
                dxp[t, b, H + j] = da_z
                dxp[t, b, 2 * H + j] = da_n
                dv[s, b, j] = da_r
                dv[s, b, H + j] = da_z
                dv[s, b, 2 * H + j] = da_n * r[s, b, j]
                carry[b, j] = dh * z[s, b, j]
            for i in range(H):
                acc = 0.0
                row = whh_cols[i]
                for j in range(3 * H):
                    acc += dv[s, b, j] * row[j]
                carry[b, i] += acc
    return dxp, dv, carry


def _scan_forward_py(xp, bih, whh_rows, bhh, h0, reverse):
    T, B, H3 = xp.shape
    H = H3 // 3
    r = np.empty((T, B, H))
    z = np.empty((T, B, H))
    n = np.empty((T, B, H))
    hs = np.empty((T + 1, B, H))
    out = np.empty((T, B, H))
    hs[0] = h0
    w = whh_rows.T  # (H, 3H)
    for s in range(T):
        t = T - 1 - s if reverse else s
        u = xp[t] + bih
        v = hs[s] @ w + bhh
        r[s] = 1.0 / (1.0 + np.exp(-(u[:, :H] + v[:, :H])))
        z[s] = 1.0 / (1.0 + np.exp(-(u[:, H : 2 * H] + v[:, H : 2 * H])))
        n[s] = np.tanh(u[:, 2 * H :] + r[s] * v[:, 2 * H :])
        hs[s + 1] = (1.0 - z[s]) * n[s] + z[s] * hs[s]
        out[t] = hs[s + 1]
    return out, hs, r, z, n


def _scan_backward_py(gh, hs, r, z, n, vn, whh_cols, reverse):
    T, B, H = gh.shape
    dxp = np.empty((T, B, 3 * H))
    dv = np.empty((T, B, 3 * H))
    carry = np.zeros((B, H))
    w = whh_cols.T  # (3H, H)
    for s in range(T - 1, -1, -1):
        t = T - 1 - s if reverse else s
        dh = gh[t] + carry
        dn = dh * (1.0 - z[s])
        dz = dh * (hs[s] - n[s])
        da_n = dn * (1.0 - n[s] * n[s])
        dr = da_n * vn[s]
        da_z = dz * z[s] * (1.0 - z[s])
        da_r = dr * r[s] * (1.0 - r[s])
        dxp[t, :, :H] = da_r
        dxp[t, :, H : 2 * H] = da_z
        dxp[t, :, 2 * H :] = da_n
        dv[s, :, :H] = da_r
        dv[s, :, H : 2 * H] = da_z
        dv[s, :, 2 * H :] = da_n * r[s]
        carry = dh * z[s] + dv[s] @ w
    return dxp, dv, carry


def scan_forward(xp, bih, whh_rows, bhh, h0, reverse=False):
    fn = _scan_forward_jit if HAVE_NUMBA else _scan_forward_py
    return fn(
        np.ascontiguousarray(xp),
        np.ascontiguousarray(bih),
        np.ascontiguousarray(whh_rows),
        np.ascontiguousarray(bhh),
        np.ascontiguousarray(h0),
        reverse,
    )


def scan_backward(gh, hs, r, z, n, vn, whh_rows, reverse=False):
    whh_cols = np.ascontiguousarray(whh_rows.T)
    fn = _scan_backward_jit if HAVE_NUMBA else _scan_backward_py
    return fn(
        np.ascontiguousarray(gh),
        hs, r, z, n,
        np.ascontiguousarray(vn),
        whh_cols,
        reverse,
    )
