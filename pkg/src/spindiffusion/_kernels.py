"""Numba kernels for planar (re/im) state vectors.

Gates act on bit pairs ``i < j`` of an internal bit order; the flip-flop
rotation mixes the amplitudes with bits (i, j) = (1, 0) and (0, 1).
"""

import numpy as np
from numba import njit

_FM = {"contract"}
_SCALAR_LANE = 8


@njit(fastmath=_FM, inline="always", cache=True)
def _rot_lane(ar, ai, br, bi, c, s):
    for k in range(ar.size):
        xr = ar[k]
        xi = ai[k]
        yr = br[k]
        yi = bi[k]
        ar[k] = c * xr + s * yi
        ai[k] = c * xi - s * yr
        br[k] = c * yr + s * xi
        bi[k] = c * yi - s * xr


@njit(fastmath=_FM, cache=True)
def flipflop(re, im, off, size, i, j, c, s):
    """exp(-i theta X) on the {10, 01} subspace of bits (i, j); c=cos, s=sin theta."""
    mi = 1 << i
    mj = 1 << j
    nhi = size >> (j + 1)
    nmid = 1 << (j - i - 1)
    if mi >= _SCALAR_LANE:
        for h in range(nhi):
            for m in range(nmid):
                base = off + (h << (j + 1)) + (m << (i + 1))
                ka = base + mi
                kb = base + mj
                _rot_lane(re[ka:ka + mi], im[ka:ka + mi], re[kb:kb + mi], im[kb:kb + mi], c, s)
    else:
        for h in range(nhi):
            for m in range(nmid):
                base = off + (h << (j + 1)) + (m << (i + 1))
                for k in range(mi):
                    ka = base + k + mi
                    kb = base + k + mj
                    xr = re[ka]
                    xi = im[ka]
                    yr = re[kb]
                    yi = im[kb]
                    re[ka] = c * xr + s * yi
                    im[ka] = c * xi - s * yr
                    re[kb] = c * yr + s * xi
                    im[kb] = c * yi - s * xr


@njit(fastmath=_FM, cache=True)
def diag_phase(re, im, off, m, nbits, tau, z, J, W, P):
    """Multiply the chunk ``[off, off + 2^m)`` by ``exp(-i tau E(b))``.

    ``E(b) = sum_k z_k s_k + sum_{k<l} J_kl s_k s_l`` with ``s = bit - 1/2``.
    Bits ``>= m`` are fixed by ``off``.  ``W`` and ``P`` are complex scratch
    arrays of length ``2^m``; the phase table is built by doubling in
    ``O(2^m)`` multiplications.
    """
    e0 = 0.0
    for q in range(m, nbits):
        sq = ((off >> q) & 1) - 0.5
        e0 += z[q] * sq
        for r in range(q + 1, nbits):
            sr = ((off >> r) & 1) - 0.5
            e0 += J[q, r] * sq * sr
    P[0] = np.cos(tau * e0) - 1j * np.sin(tau * e0)
    for k in range(m):
        hk = z[k]
        for q in range(m, nbits):
            hk += J[k, q] * (((off >> q) & 1) - 0.5)
        acc = hk
        for i in range(k):
            acc -= 0.5 * J[i, k]
        W[0] = np.cos(0.5 * tau * acc) - 1j * np.sin(0.5 * tau * acc)
        for i in range(k):
            ang = 0.5 * tau * J[i, k]
            w = np.cos(ang) - 1j * np.sin(ang)
            half = 1 << i
            for b in range(half):
                W[b + half] = W[b] * w
        half = 1 << k
        for b in range(half):
            p = P[b]
            wb = W[b]
            P[b + half] = p * wb
            P[b] = p * wb.conjugate()
    for b in range(1 << m):
        pr = P[b].real
        pi = P[b].imag
        xr = re[off + b]
        xi = im[off + b]
        re[off + b] = xr * pr - xi * pi
        im[off + b] = xr * pi + xi * pr


@njit(fastmath=_FM, cache=True)
def s2_sweep(re, im, m, nbits, gp, gc, gs, lp, lc, ls, tau, z, J, W, P):
    """Symmetric second-order sweep: global gates, then per chunk local gates,
    diagonal, local gates reversed, then global gates reversed."""
    n = re.size
    ng = gp.shape[0]
    nl = lp.shape[0]
    for g in range(ng):
        flipflop(re, im, 0, n, gp[g, 0], gp[g, 1], gc[g], gs[g])
    csize = 1 << m
    for off in range(0, n, csize):
        for g in range(nl):
            flipflop(re, im, off, csize, lp[g, 0], lp[g, 1], lc[g], ls[g])
        diag_phase(re, im, off, m, nbits, tau, z, J, W, P)
        for g in range(nl - 1, -1, -1):
            flipflop(re, im, off, csize, lp[g, 0], lp[g, 1], lc[g], ls[g])
    for g in range(ng - 1, -1, -1):
        flipflop(re, im, 0, n, gp[g, 0], gp[g, 1], gc[g], gs[g])


@njit(fastmath=_FM, cache=True)
def polarizations(re, im, bits, out):
    """``out[k] = 2 <S_z>`` for each internal bit in ``bits``."""
    nb = bits.shape[0]
    for k in range(nb):
        out[k] = 0.0
    for x in range(re.size):
        p = re[x] * re[x] + im[x] * im[x]
        for k in range(nb):
            if (x >> bits[k]) & 1:
                out[k] += p
            else:
                out[k] -= p


@njit(cache=True)
def run_steps(re, im, m, nbits, gp, GC, GS, lp, LC, LS, TAU, Z, JJ, rows_per_step,
              first_row, n_rows, n_steps, record_every, rec_bits, out):
    """Advance ``n_steps`` steps cycling through the coefficient table.

    Row ``r`` of each table is one second-order sub-step; step ``k`` uses rows
    ``(first_row + k * rows_per_step + q) % n_rows``.  Polarizations are
    written to ``out[0]`` before the first step and to ``out[k // record_every]``
    after every ``record_every``-th step.
    """
    W = np.empty(1 << m, dtype=np.complex128)
    P = np.empty(1 << m, dtype=np.complex128)
    buf = np.empty(rec_bits.shape[0])
    if record_every > 0:
        polarizations(re, im, rec_bits, buf)
        out[0, :] = buf
    row = first_row
    for k in range(n_steps):
        for q in range(rows_per_step):
            r = row % n_rows
            s2_sweep(re, im, m, nbits, gp, GC[r], GS[r], lp, LC[r], LS[r], TAU[r], Z[r], JJ[r], W, P)
            row += 1
        if record_every > 0 and (k + 1) % record_every == 0:
            polarizations(re, im, rec_bits, buf)
            out[(k + 1) // record_every, :] = buf
