"""Compiled tridiagonal kernels for the Cayley propagator.

Operators handled here are real symmetric tridiagonal matrices stored as
``(diag, off)`` plus a real diagonal bias ``vdiag``; the instantaneous operator
is ``T + kappa * diag(vdiag)``.  State blocks have shape ``(n, m)`` with one
column per panel vector.

The forward elimination of the Thomas algorithm converges to a fixed point
inside stretches where the coefficients are constant (the leads).  ``seg_end``
marks those stretches so the elimination can stop as soon as the pivot has
converged to machine precision, which removes most of the per-step cost.
"""

import numpy as np
from numba import njit


def uniform_segments(diag, off, vdiag):
    """Return ``seg_end[i]``: last index of the constant stretch holding ``i``.

    Row ``i`` continues a stretch when its diagonal, bias and left coupling
    equal those of row ``i - 1`` (and the left coupling of ``i - 1``).
    """
    n = diag.shape[0]
    same = np.zeros(n, dtype=bool)
    if n > 1:
        same[1:] = (diag[1:] == diag[:-1]) & (vdiag[1:] == vdiag[:-1])
        if n > 2:
            same[2:] &= off[1:] == off[:-1]
        same[1:] &= off != 0.0
    seg_end = np.arange(n, dtype=np.int64)
    for i in range(n - 2, -1, -1):
        if same[i + 1]:
            seg_end[i] = seg_end[i + 1]
    return seg_end


@njit(cache=True, fastmath=True)
def _factor(diag, off, vdiag, seg_end, kappa, shift, scale, cp, binv):
    # Forward elimination for scale * (T + kappa V) + shift.
    n = diag.shape[0]
    binv[0] = 1.0 / (shift + scale * (diag[0] + kappa * vdiag[0]))
    i = 1
    while i < n:
        a = scale * off[i - 1]
        cp[i - 1] = a * binv[i - 1]
        binv[i] = 1.0 / (shift + scale * (diag[i] + kappa * vdiag[i]) - a * cp[i - 1])
        e = seg_end[i]
        if e > i and abs(binv[i] - binv[i - 1]) <= 1e-16 * abs(binv[i]):
            c = a * binv[i]
            for q in range(i, e):
                cp[q] = c
                binv[q + 1] = binv[i]
            i = e + 1
        else:
            i += 1


@njit(cache=True, fastmath=True)
def _substitute(off, scale, cp, binv, rhs, x):
    n, m = rhs.shape
    for j in range(m):
        rhs[0, j] *= binv[0]
    for i in range(1, n):
        a = scale * off[i - 1]
        bi = binv[i]
        for j in range(m):
            rhs[i, j] = (rhs[i, j] - a * rhs[i - 1, j]) * bi
    for j in range(m):
        x[n - 1, j] = rhs[n - 1, j]
    for i in range(n - 2, -1, -1):
        c = cp[i]
        for j in range(m):
            x[i, j] = rhs[i, j] - c * x[i + 1, j]


@njit(cache=True, fastmath=True)
def _apply_into(diag, off, vdiag, kappa, shift, scale, psi, out):
    # out = shift * psi + scale * (T + kappa V) psi
    n, m = psi.shape
    for i in range(n):
        d = shift + scale * (diag[i] + kappa * vdiag[i])
        for j in range(m):
            out[i, j] = d * psi[i, j]
        if i > 0:
            a = scale * off[i - 1]
            for j in range(m):
                out[i, j] += a * psi[i - 1, j]
        if i < n - 1:
            a = scale * off[i]
            for j in range(m):
                out[i, j] += a * psi[i + 1, j]


@njit(cache=True)
def cayley_sweep(diag, off, vdiag, seg_end, kappas, tau, psi, record_at, out):
    """Apply ``len(kappas)`` Cayley steps to ``psi`` in place.

    Each step maps ``psi -> (1 + i tau K)^{-1} (1 - i tau K) psi`` with
    ``K = T + kappas[k] V``; ``tau = +dt/2`` steps forward in time and
    ``tau = -dt/2`` backward.  After ``k`` steps the state is copied to
    ``out[r]`` for every ``r`` with ``record_at[r] == k`` (sorted).
    """
    n, m = psi.shape
    rhs = np.empty((n, m), dtype=np.complex128)
    cp = np.empty(n, dtype=np.complex128)
    binv = np.empty(n, dtype=np.complex128)
    itau = 1j * tau
    r = 0
    nrec = record_at.shape[0]
    while r < nrec and record_at[r] == 0:
        out[r] = psi
        r += 1
    for k in range(kappas.shape[0]):
        kappa = kappas[k]
        _factor(diag, off, vdiag, seg_end, kappa, 1.0 + 0j, itau, cp, binv)
        _apply_into(diag, off, vdiag, kappa, 1.0 + 0j, -itau, psi, rhs)
        _substitute(off, itau, cp, binv, rhs, psi)
        while r < nrec and record_at[r] == k + 1:
            out[r] = psi
            r += 1


@njit(cache=True)
def tridiag_apply(diag, off, vdiag, kappa, shift, psi):
    """Return ``(T + kappa V + shift) @ psi``."""
    out = np.empty_like(psi)
    _apply_into(diag, off, vdiag, kappa, shift, 1.0 + 0j, psi, out)
    return out


@njit(cache=True)
def tridiag_solve(diag, off, vdiag, seg_end, kappa, shift, rhs):
    """Solve ``(T + kappa V + shift) x = rhs`` by the Thomas algorithm.

    Intended for shifts that keep the system well conditioned without
    pivoting: ``shift = 1`` on a non-negative operator or complex shifts
    away from the real axis.
    """
    n, m = rhs.shape
    work = rhs.copy()
    x = np.empty_like(work)
    cp = np.empty(n, dtype=np.complex128)
    binv = np.empty(n, dtype=np.complex128)
    _factor(diag, off, vdiag, seg_end, kappa, shift, 1.0 + 0j, cp, binv)
    _substitute(off, 1.0 + 0j, cp, binv, work, x)
    return x


@njit(cache=True)
def cayley_accumulate(diag, off, vdiag, seg_end, kappas, tau, acc, sources, weights):
    """Step ``acc`` through ``len(kappas)`` Cayley steps, adding sources.

    After step ``k`` the update ``acc += weights[k] * sources[k]`` is applied,
    so a forward sweep from ``s_0`` accumulates ``sum_k w_k U(s_end, s_k) g_k``
    for sources given at the grid points ``s_1, s_2, ...``.
    """
    n, m = acc.shape
    rhs = np.empty((n, m), dtype=np.complex128)
    cp = np.empty(n, dtype=np.complex128)
    binv = np.empty(n, dtype=np.complex128)
    itau = 1j * tau
    for k in range(kappas.shape[0]):
        kappa = kappas[k]
        _factor(diag, off, vdiag, seg_end, kappa, 1.0 + 0j, itau, cp, binv)
        _apply_into(diag, off, vdiag, kappa, 1.0 + 0j, -itau, acc, rhs)
        _substitute(off, itau, cp, binv, rhs, acc)
        w = weights[k]
        for i in range(n):
            for j in range(m):
                acc[i, j] += w * sources[k, i, j]
