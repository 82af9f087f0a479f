"""Wave operators: adiabatic, stationary and their Cook-integral forms.

Conventions (``s <= 0``):

* ``W(s)`` coupled propagator of ``K(chi(eta s))`` from 0 to ``s``;
* ``W_dec(s)`` decoupled propagator (spectral, bias phases per block);
* ``omega_eta = lim W(s)^* U0(s)``, ``U0`` the free evolution of ``H``;
* ``Xi_eta = lim E_ac(K(1)) W(s)^* E_ac(H) W_dec(s) E_ac(H_dec)``;
* ``Xi_0 = lim E_ac(K(1)) exp(isK(1)) exp(-isK_dec(1)) E_ac(H_dec)``.

The free and decoupled evolutions used next to a stepped ``W`` default to the
Cayley-consistent flavour (see :mod:`propagate`), so differences of the two
evolutions are free of the time-discretization error of the free motion.

``E_ac(H_dec)`` is the projection onto the two lead blocks: the sample block
of the decoupled operator is a Dirichlet box with discrete spectrum.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from ._kernels import cayley_accumulate, tridiag_apply, tridiag_solve
from .errors import DomainError, HorizonError, StepSizeError
from .model import HamiltonianSet, lattice_velocity
from .propagate import (EvolutionParams, VectorPanel, _as_block, check_params,
                        coupled_eigensystem, coupling_path, decoupled_eigensystem,
                        decoupled_propagator, free_propagator, max_horizon,
                        propagate, step_states)
from .spectral import bound_states


# --------------------------------------------------------------------------
# Results and certificates
# --------------------------------------------------------------------------

@dataclass
class Certificate:
    """Cauchy increments ``|A(t) f - A(s) f|`` for recorded pairs ``s < t``.

    ``increments`` has one row per pair and one column per panel vector;
    ``bounds`` holds the theoretical bound per unit input norm (NaN when no
    bound is available).
    """

    pairs: np.ndarray
    increments: np.ndarray
    bounds: np.ndarray
    input_norms: np.ndarray
    tail_bound: float = float("nan")
    kind: str = "consecutive"

    def bound_ratio(self):
        """``max increment / (bound * |f|)`` over pairs and columns."""
        b = self.bounds[:, None] * self.input_norms[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(b > 0, self.increments / b, np.where(self.increments > 0, np.inf, 0.0))
        return float(np.nanmax(r)) if r.size else 0.0

    def satisfies_bound(self, rel=1e-6, atol=1e-13):
        b = self.bounds[:, None] * self.input_norms[None, :]
        return bool(np.all(self.increments <= b * (1 + rel) + atol))

    def final_increment(self):
        return float(np.max(self.increments[-1])) if self.increments.size else 0.0

    def to_rows(self, label=""):
        rows = []
        for (s, t), inc, b in zip(self.pairs, self.increments, self.bounds):
            rows.append([label, self.kind, f"{s:.10g}", f"{t:.10g}",
                         f"{float(np.max(inc)):.12e}", f"{b:.12e}"])
        return rows

    def to_csv(self, path, label=""):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["label", "kind", "s", "t", "increment", "bound"])
            wr.writerows(self.to_rows(label))


@dataclass
class WaveOpResult:
    action: np.ndarray
    certificates: list
    route: str
    adjoint: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def certificate(self):
        return self.certificates[0] if self.certificates else None


def _norms(f):
    return np.linalg.norm(f, axis=0)


def ac_split(hset: HamiltonianSet, kappa: float, theta=0.9, margin=None):
    """Cached bound-state split of ``K(kappa)``."""
    key = ("split", float(kappa), theta, margin)
    if key not in hset._cache:
        hset._cache[key] = bound_states(hset, kappa, theta, margin)
    return hset._cache[key]


def lead_mask(hset: HamiltonianSet):
    return hset.region != 0


def apply_ac_dec(hset, f):
    """``E_ac(H_dec) f``: restriction to the lead blocks."""
    return f * lead_mask(hset)[:, None]


def _record_times(s_start, n_records, dt):
    k = np.unique(np.round(np.linspace(0, -s_start / dt, n_records + 1)).astype(int))
    return -dt * k[::-1]          # ascending from s_start to 0


def cauchy_bound(hset, chi, eta, s, t):
    """``|V| int_s^t chi(eta u) du`` for ``s < t <= 0``."""
    F = chi.antiderivative
    return hset.v_norm * (F(eta * np.asarray(t)) - F(eta * np.asarray(s))) / eta


def _forward_with_restarts(hset, chi, eta, dt, g_of_t, times):
    """Propagate ``g(times[0])`` forward to ``times[-1]`` with Cauchy data.

    Returns the final state, consecutive increments
    ``|U(t_{k+1}, t_k) g(t_k) - g(t_{k+1})|`` and anchored increments
    ``|U(t_{k+1}, t_0) g(t_0) - g(t_{k+1})|``; for ``A(t) = W(t)^* g(t)``
    these equal ``|A(t_{k+1}) - A(t_k)|`` and ``|A(t_{k+1}) - A(t_0)|``.
    """
    main = g_of_t(times[0])
    fresh = main.copy()
    m = main.shape[1]
    cons = np.zeros((times.size - 1, m))
    anch = np.zeros((times.size - 1, m))
    for k in range(times.size - 1):
        block = np.concatenate([main, fresh], axis=1)
        block, _ = propagate(hset, chi, eta, block, times[k], times[k + 1], dt, check=(k == 0))
        main, fresh = block[:, :m], block[:, m:]
        g = g_of_t(times[k + 1])
        cons[k] = _norms(fresh - g)
        anch[k] = _norms(main - g)
        fresh = g
    return main, cons, anch


# --------------------------------------------------------------------------
# Adiabatic wave operator
# --------------------------------------------------------------------------

def adjoint_certificates(hset, chi, eta, dt, times, states, tail=float("nan"), U0=None):
    """Cauchy certificates of ``omega_eta^*`` from recorded ``W(s) f``.

    ``times`` ascend to 0 and ``states[k] = W(times[k]) f``; returns the
    action at ``times[0]`` and the consecutive/anchored certificates.
    """
    if U0 is None:
        U0 = free_propagator(hset, chi, eta, dt, "cayley")
    A = np.stack([U0.apply(states[i], [t], adjoint=True)[0] for i, t in enumerate(times)])
    pairs = np.stack([times[:-1], times[1:]], axis=1)
    pairs_a = np.stack([np.full(times.size - 1, times[0]), times[1:]], axis=1)
    nrm = _norms(states[-1])
    cons = np.linalg.norm(A[1:] - A[:-1], axis=1)
    anch = np.linalg.norm(A[1:] - A[0], axis=1)
    return A[0], [Certificate(pairs, cons, cauchy_bound(hset, chi, eta, times[:-1], times[1:]),
                              nrm, tail, "consecutive"),
                  Certificate(pairs_a, anch, cauchy_bound(hset, chi, eta, times[0], times[1:]),
                              nrm, tail, "anchored")]


def omega_eta(hset, chi, params: EvolutionParams, panel, adjoint=False, n_records=100,
              free_scheme="cayley", tail_tol=1e-3):
    """Adiabatic wave operator ``omega_eta`` (or its adjoint) on a panel.

    ``omega_eta^* f = lim U0(s)^* W(s) f`` is computed with one backward
    sweep; ``omega_eta g = lim W(s)^* U0(s) g`` with one forward sweep from
    ``s_min`` (plus a restarted copy for consecutive Cauchy increments).
    """
    diag = check_params(hset, params)
    f = _as_block(panel)
    eta, dt, s0 = params.eta, params.dt, params.s_start
    tail = hset.v_norm * float(chi.antiderivative(eta * s0)) / eta
    if tail > tail_tol:
        need = float(np.log(tail_tol * eta / max(hset.v_norm, 1e-300))) / eta
        vmax = lattice_velocity(hset.geometry.h)
        raise HorizonError(
            f"omega_eta: tail bound {tail:.3g} > {tail_tol:g}; need |s_min| >= {-need:.4g}",
            max_abs_s=max_horizon(hset), required_L=hset.geometry.a + (-need) * vmax / 1.5)
    times = _record_times(s0, n_records, dt)
    U0 = free_propagator(hset, chi, eta, dt, free_scheme)
    meta = dict(diag, s_min=s0, tail_bound=tail)
    if adjoint:
        _, ev = propagate(hset, chi, eta, f, 0.0, s0, dt, times)
        action, certs = adjoint_certificates(hset, chi, eta, dt, times, ev.states, tail, U0)
        return WaveOpResult(action, certs, "omega_eta", adjoint, meta)

    def g_of_t(t):
        return U0.apply(f, [t])[0]
    action, cons, anch = _forward_with_restarts(hset, chi, eta, dt, g_of_t, times)
    pairs = np.stack([times[:-1], times[1:]], axis=1)
    pairs_a = np.stack([np.full(times.size - 1, times[0]), times[1:]], axis=1)
    nrm = _norms(f)
    certs = [Certificate(pairs, cons, cauchy_bound(hset, chi, eta, times[:-1], times[1:]),
                         nrm, tail, "consecutive"),
             Certificate(pairs_a, anch, cauchy_bound(hset, chi, eta, times[0], times[1:]),
                         nrm, tail, "anchored")]
    return WaveOpResult(action, certs, "omega_eta", adjoint, meta)


# --------------------------------------------------------------------------
# Static wave operator omega_-
# --------------------------------------------------------------------------

def _static_pair(hset, kappa):
    """Eigensystems of ``K(kappa)`` and ``K_dec(kappa)``."""
    eigK = coupled_eigensystem(hset, kappa)
    eigD, vb = decoupled_eigensystem(hset)
    return eigK, (eigD.energies + kappa * vb, eigD.vectors)


def _expm_apply(vectors, energies, f, s):
    return vectors @ (np.exp(-1j * s * energies)[:, None] * (vectors.T @ f))


def omega_minus(hset, panel, s_min=None, n_records=50):
    """``omega_- = lim exp(isH_dec) exp(-isH) E_ac(H)`` at ``s = s_min``."""
    f = _as_block(panel)
    if s_min is None:
        s_min = -max_horizon(hset)
    eigK, (Ed, Vd) = _static_pair(hset, 0.0)
    g = ac_split(hset, 0.0).apply_ac(f)
    times = np.linspace(s_min, 0.0, n_records + 1)
    A = np.stack([_expm_apply(Vd, Ed, _expm_apply(eigK.vectors, eigK.energies, g, s), -s)
                  for s in times])
    cons = np.linalg.norm(A[1:] - A[:-1], axis=1)
    pairs = np.stack([times[:-1], times[1:]], axis=1)
    cert = Certificate(pairs, cons, np.full(times.size - 1, np.nan), _norms(f), kind="consecutive")
    return WaveOpResult(A[0], [cert], "omega_minus", False,
                        {"s_min": s_min, "converging": _decade_check(times, cons)})


def _decade_check(times, cons):
    """True when increments over the last decade of |s| do not grow."""
    far = np.abs(times[:-1]) >= 0.1 * np.abs(times[0])
    inc = cons.max(axis=1)[far]
    if inc.size < 4:
        return True
    third = max(1, inc.size // 3)
    # pairs are ordered from s_min upwards: the far end comes first
    return bool(inc[:third].max() <= inc[-third:].max() * 1.0 + 1e-14)


# --------------------------------------------------------------------------
# V_delta panels
# --------------------------------------------------------------------------

def lead_modes(hset: HamiltonianSet, lead: int, channel: int = 0):
    """Analytic Dirichlet eigenmodes of one decoupled lead block.

    Returns ``(indices, energies, k, depth)``: full-space node indices
    ordered from the internal wall outwards, mode energies (unbiased
    ``H_dec`` energies), wave numbers and node distances from the wall
    (``depth[j] = (j + 1) h``).  The mode ``q`` is
    ``sqrt(2/(N+1)) sin(k_q depth)``.
    """
    geo = hset.geometry
    if lead not in (-1, 1):
        raise DomainError("lead must be -1 (left) or +1 (right)")
    nodes = np.flatnonzero(geo.region == lead)
    if lead == -1:
        nodes = nodes[::-1]
    N = nodes.size
    q = np.arange(1, N + 1)
    kh = np.pi * q / (N + 1)
    energies = geo.lambdas[channel] + (2.0 - 2.0 * np.cos(kh)) / geo.h ** 2
    depth = geo.h * np.arange(1, N + 1)
    return channel * geo.n + nodes, energies, kh / geo.h, depth


def _profile(u, kind):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = (u > 0) & (u < 1)
    if kind == "bump":
        v = u[inside]
        out[inside] = np.exp(-1.0 / (v * (1.0 - v)) + 4.0)
    elif kind == "hat":
        out[inside] = 1.0 - np.abs(2.0 * u[inside] - 1.0)
    else:
        raise DomainError(f"unknown profile {kind!r}")
    return out


def make_vdelta_panel(hset: HamiltonianSet, delta: float, windows, m=None,
                      profile="bump") -> VectorPanel:
    """Lead wave packets with compact spectral support in ``H_dec``.

    Each window is a mapping with ``lead`` (-1/+1), ``channel``, ``e_lo``,
    ``e_hi`` (unbiased energies), optional ``offset`` (packet distance from
    the internal wall at ``s = 0``) and ``direction`` (``"outgoing"`` moves
    away from the sample, ``"incoming"`` towards it).
    """
    if not delta > 0:
        raise DomainError("delta must be positive")
    windows = list(windows)
    if not windows:
        raise DomainError("at least one window required")
    if m is None:
        m = len(windows)
    geo = hset.geometry
    cols, meta = [], []
    for i in range(m):
        w = dict(windows[i % len(windows)])
        lead, c = int(w.get("lead", 1)), int(w.get("channel", 0))
        lo, hi = float(w["e_lo"]), float(w["e_hi"])
        if not hi > lo:
            raise DomainError(f"window {i}: zero or negative width [{lo}, {hi}]")
        lam = geo.lambdas[c]
        top = lam + 4.0 / geo.h ** 2
        if lo < lam + delta or hi > top - delta:
            raise DomainError(f"window {i}: [{lo}, {hi}] within {delta} of a band edge of channel {c}")
        for l2 in geo.lambdas:
            if hi > l2 - delta and lo < l2 + delta:
                raise DomainError(f"window {i}: [{lo}, {hi}] within {delta} of threshold {l2}")
        idx, E, k, depth = lead_modes(hset, lead, c)
        amp = _profile((E - lo) / (hi - lo), profile)
        if not np.any(amp > 0):
            raise DomainError(f"window {i}: no lead modes inside [{lo}, {hi}]")
        d = float(w.get("offset", 0.0))
        sign = -1.0 if w.get("direction", "outgoing") == "outgoing" else 1.0
        coef = amp * np.exp(sign * 1j * k * d)
        N = idx.size
        modes = np.sqrt(2.0 / (N + 1)) * np.sin(np.outer(depth, k))
        v = np.zeros(hset.size, dtype=complex)
        v[idx] = modes @ coef
        v /= np.linalg.norm(v)
        cols.append(v)
        meta.append({"lead": lead, "channel": c, "window": (lo, hi), "delta": delta,
                     "offset": d, "direction": w.get("direction", "outgoing"),
                     "profile": profile})
    return VectorPanel(np.stack(cols, axis=1), tuple(meta))


# --------------------------------------------------------------------------
# Xi_eta, time-limit route
# --------------------------------------------------------------------------

def xi_eta_timelimit(hset, chi, params: EvolutionParams, panel, adjoint=False,
                     inner_filter=True, n_records=50, scheme="cayley"):
    """``Xi_eta f`` as the value at ``s_min`` of the time-limit expression.

    With ``inner_filter=False`` the ``E_ac(H)`` factor is replaced by the
    identity; the norm of what that factor removes is reported in ``meta``.
    """
    check_params(hset, params)
    f = _as_block(panel)
    eta, dt, s0 = params.eta, params.dt, params.s_start
    Wd = decoupled_propagator(hset, chi, eta, dt, scheme)
    spl_H, spl_K1 = ac_split(hset, 0.0), ac_split(hset, 1.0)
    times = _record_times(s0, n_records, dt)
    pairs = np.stack([times[:-1], times[1:]], axis=1)
    if not adjoint:
        f0 = apply_ac_dec(hset, f)

        def g_of_t(t):
            g = Wd.apply(f0, [t])[0]
            return spl_H.apply_ac(g) if inner_filter else g
        state, cons, _ = _forward_with_restarts(hset, chi, eta, dt, g_of_t, times)
        action = spl_K1.apply_ac(state)
        removed = float(np.max(_norms(spl_H.apply_pp(Wd.apply(f0, [s0])[0]))))
    else:
        g = spl_K1.apply_ac(f)
        _, ev = propagate(hset, chi, eta, g, 0.0, s0, dt, times)
        A = []
        for i, t in enumerate(times):
            x = ev.states[i]
            if inner_filter:
                x = spl_H.apply_ac(x)
            A.append(apply_ac_dec(hset, Wd.apply(x, [t], adjoint=True)[0]))
        A = np.stack(A)
        cons = np.linalg.norm(A[1:] - A[:-1], axis=1)
        action = A[0]
        removed = float("nan")
    cert = Certificate(pairs, cons, np.full(times.size - 1, np.nan), _norms(f))
    return WaveOpResult(action, [cert], "xi_eta_time", adjoint,
                        {"s_min": s0, "inner_filter_removed": removed})


# --------------------------------------------------------------------------
# Xi_eta, Cook route
# --------------------------------------------------------------------------

def resolvent_shift(hset, margin=0.5):
    """Shift ``c >= 1`` with ``K(kappa) + c`` positive for all ``kappa``."""
    emin = min(float(np.min(ac_split(hset, 0.0).pp_energies, initial=0.0)),
               float(np.min(ac_split(hset, 1.0).pp_energies, initial=0.0)),
               float(np.min(hset.diag)) - 2.0 / hset.geometry.h ** 2)
    return max(1.0, -emin + margin)


def cook_integrands(hset, chi, eta, y, times, shift):
    """Integrands from decoupled states ``y[i] = W_dec(times[i]) f``.

    ``g1(s) = D W_dec (K_dec + c)^2 f`` and
    ``g2(s) = eta chi'(eta s) R V D W_dec (K_dec + c) f``, where ``K_dec``
    commutes with ``W_dec`` and ``D = R - R_dec`` at ``kappa = chi(eta s)``.
    """
    diag, off, vdiag, seg = hset.tridiag(False)
    _, off_d, _, seg_d = hset.tridiag(True)
    kap = chi.value(eta * times)
    dchi = eta * chi.derivative(eta * times)
    g1 = np.empty_like(y)
    g2 = np.empty_like(y)
    c = complex(shift)
    m = y.shape[2]
    for i in range(times.size):
        k = float(kap[i])
        y1 = tridiag_apply(diag, off_d, vdiag, k, c, y[i])
        both = np.concatenate([tridiag_apply(diag, off_d, vdiag, k, c, y1), y1], axis=1)
        D = tridiag_solve(diag, off, vdiag, seg, k, c, both) \
            - tridiag_solve(diag, off_d, vdiag, seg_d, k, c, both)
        g1[i] = D[:, :m]
        g2[i] = dchi[i] * tridiag_solve(diag, off, vdiag, seg, k, c, vdiag[:, None] * D[:, m:])
    return g1, g2


def _decoupled_chunks(hset, chi, eta, dt, f, s0, n_steps, chunk, scheme):
    """Yield ``(start, stop, states)`` with ``states = W_dec(grid) f`` in order.

    The Cayley flavour steps the decoupled tridiagonal operator (same
    midpoint couplings as the spectral Cayley phases, O(n) per step): one
    backward sweep to ``s0`` followed by forward sweeps that record each chunk.
    """
    grid = s0 + dt * np.arange(n_steps + 1)
    if scheme == "exact":
        Wd = decoupled_propagator(hset, chi, eta, dt, scheme)
        for start in range(0, n_steps + 1, chunk):
            stop = min(start + chunk, n_steps + 1)
            yield start, stop, Wd.apply(f, grid[start:stop])
        return
    back = coupling_path(chi, eta, 0.0, n_steps, dt, -1.0)
    psi, _ = step_states(hset, back, dt, -1.0, f, decoupled=True)
    fwd = back[::-1]
    cur = 0
    for start in range(0, n_steps + 1, chunk):
        stop = min(start + chunk, n_steps + 1)
        rec = np.arange(start - cur, stop - cur)
        psi, states = step_states(hset, fwd[cur:stop - 1], dt, 1.0, psi, rec, decoupled=True)
        cur = stop - 1
        yield start, stop, states


def xi_eta_cook(hset, chi, params: EvolutionParams, panel, shift=None, chunk=None,
                scheme="cayley", sign=1.0, return_integrand=False):
    """``Xi_eta f`` by Cook's method.

    ``Phi(s) = E_ac W(s)^* R(s) W_dec(s) (K_dec(s) + c) f`` with
    ``R(s) = (K(chi(eta s)) + c)^{-1}`` has derivative
    ``-i W^* D W_dec (K_dec + c)^2 f - eta chi' W^* R V D W_dec (K_dec + c) f``
    with ``D = R - R_dec``, hence
    ``Xi_eta f = Phi(0) + i int W^* g1 + int W^* g2`` (trapezoid on the grid).
    ``sign=-1`` flips both integral terms (used only to test the sign).
    """
    check_params(hset, params)
    f = apply_ac_dec(hset, _as_block(panel))
    eta, dt, s0 = params.eta, params.dt, params.s_start
    c = resolvent_shift(hset) if shift is None else float(shift)
    diag, off, vdiag, seg = hset.tridiag(False)
    _, off_d, _, _ = hset.tridiag(True)
    n_steps = params.n_steps
    m = f.shape[1]
    if chunk is None:
        chunk = max(16, int(4e6 // (hset.size * m)))
    grid = s0 + dt * np.arange(n_steps + 1)          # ascending
    weights = np.full(n_steps + 1, dt)
    weights[0] = weights[-1] = 0.5 * dt
    kap_steps = coupling_path(chi, eta, s0, n_steps, dt, 1.0)
    acc = np.zeros((hset.size, m), dtype=complex)
    tail_norm = np.zeros(n_steps + 1)
    for start, stop, y in _decoupled_chunks(hset, chi, eta, dt, f, s0, n_steps, chunk, scheme):
        g1, g2 = cook_integrands(hset, chi, eta, y, grid[start:stop], c)
        src = sign * (1j * g1 + g2)
        tail_norm[start:stop] = np.max(np.linalg.norm(g1, axis=1), axis=1)
        if start == 0:
            # first node: no propagation yet
            acc += weights[0] * src[0]
            src, start = src[1:], 1
        if start < stop:
            cayley_accumulate(diag, off, vdiag, seg, kap_steps[start - 1:stop - 1], 0.5 * dt,
                              acc, np.ascontiguousarray(src), weights[start:stop].astype(complex))
    phi0 = tridiag_solve(diag, off, vdiag, seg, 1.0, complex(c),
                         tridiag_apply(diag, off_d, vdiag, 1.0, complex(c), f.astype(complex)))
    action = ac_split(hset, 1.0).apply_ac(phi0 + acc)
    meta = {"s_min": s0, "shift": c, "boundary_term": phi0}
    if return_integrand:
        meta["integrand_times"] = grid
        meta["integrand_norm"] = tail_norm
    return WaveOpResult(action, [], "xi_eta_cook", False, meta)


def fit_tail_exponent(times, norms, window=None, n_bins=12):
    """Fit ``|g(s)| ~ C |s|^-p`` to the envelope of an oscillating integrand.

    ``window`` is ``(s_near, s_far)`` in ``|s|``; by default the outer decade
    of the recorded range.  The envelope is the maximum of ``norms`` over
    ``n_bins`` logarithmically spaced bins, which removes the beating between
    the spectral components before the log-log least-squares fit.
    """
    u = np.abs(np.asarray(times, dtype=float))
    norms = np.asarray(norms, dtype=float)
    if window is None:
        window = (u.max() / 10.0, u.max())
    lo, hi = sorted(float(w) for w in np.abs(window))
    if not lo > 0:
        raise DomainError("fit window must exclude s = 0")
    edges = np.geomspace(lo, hi, n_bins + 1)
    xs, ys = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (u >= a) & (u <= b) & (norms > 0)
        if np.any(sel):
            i = np.argmax(np.where(sel, norms, -np.inf))
            xs.append(u[i])
            ys.append(norms[i])
    if len(xs) < 3:
        raise DomainError("not enough integrand samples in the fit window")
    slope = np.polyfit(np.log(xs), np.log(ys), 1)[0]
    return float(-slope)


# --------------------------------------------------------------------------
# Stationary wave operator Xi_0
# --------------------------------------------------------------------------

def xi_zero(hset, panel, s_min, adjoint=False, cook=True, shift=None, tol=1e-4):
    """``Xi_0`` (or ``Xi_0^*``) at ``s = s_min`` by the time limit and by Cook.

    The Cook form at fixed ``s_min`` integrates the oscillating phases
    exactly in the eigenbases of ``K(1)`` and ``K_dec(1)``.
    """
    f = _as_block(panel)
    eigK, (Ed, Vd) = _static_pair(hset, 1.0)
    VK, EK = eigK.vectors, eigK.energies
    spl = ac_split(hset, 1.0)
    if adjoint:
        g = spl.apply_ac(f)
        x = _expm_apply(VK, EK, g, s_min)
        act = apply_ac_dec(hset, _expm_apply(Vd, Ed, x, -s_min))
        return WaveOpResult(act, [], "xi_zero_time", True, {"s_min": s_min})
    f0 = apply_ac_dec(hset, f)
    y = _expm_apply(Vd, Ed, f0, s_min)
    act = spl.apply_ac(_expm_apply(VK, EK, y, -s_min))
    meta = {"s_min": s_min}
    if cook:
        c = resolvent_shift(hset) if shift is None else float(shift)
        diag, off, vdiag, seg = hset.tridiag(False)
        _, off_d, _, seg_d = hset.tridiag(True)
        coef = Vd.T @ f0                                    # (nD, m)
        y1 = Vd @ ((Ed + c)[:, None] * coef)
        phi0 = tridiag_solve(diag, off, vdiag, seg, 1.0, complex(c), y1)
        # D applied to each decoupled eigenvector weighted by (E + c)^2
        cols = Vd * (Ed + c) ** 2
        D = tridiag_solve(diag, off, vdiag, seg, 1.0, complex(c), cols.astype(complex)) \
            - tridiag_solve(diag, off_d, vdiag, seg_d, 1.0, complex(c), cols.astype(complex))
        M = VK.T @ D                                         # (nK, nD)
        omega = EK[:, None] - Ed[None, :]
        # int_{s_min}^0 exp(i s omega) ds
        with np.errstate(divide="ignore", invalid="ignore"):
            I = np.where(np.abs(omega) > 1e-12,
                         -np.expm1(1j * s_min * omega) / (1j * omega), -s_min + 0j)
        integ = VK @ ((M * I) @ coef)
        cook_act = spl.apply_ac(phi0 + 1j * integ)
        diff = float(np.max(_norms(cook_act - act)))
        meta.update(cook=cook_act, route_diff=diff, consistent=diff <= tol, shift=c)
    return WaveOpResult(act, [], "xi_zero_time", False, meta)


def intertwining_defect(hset, panel, s_min):
    """``|(K(1) Xi_0 - Xi_0 K_dec(1)) f| / |K_dec(1) f|`` per column."""
    f = apply_ac_dec(hset, _as_block(panel))
    diag, off, vdiag, _ = hset.tridiag(False)
    _, off_d, _, _ = hset.tridiag(True)
    Kf = tridiag_apply(diag, off_d, vdiag, 1.0, 0j, f)
    left = tridiag_apply(diag, off, vdiag, 1.0, 0j, xi_zero(hset, f, s_min, cook=False).action)
    right = xi_zero(hset, Kf, s_min, cook=False).action
    return _norms(left - right) / _norms(Kf)


def adjoint_defect(a_f, f, g, a_star_g):
    """``max |<A f, g> - <f, A^* g>|`` over panel pairs."""
    lhs = a_f.conj().T @ g
    rhs = f.conj().T @ a_star_g
    return float(np.max(np.abs(lhs - rhs)))


def check_quadrature(hset, chi, params, panel, tol, **kw):
    """Compare the Cook route at ``dt`` and ``dt/2``; raise if they disagree."""
    a = xi_eta_cook(hset, chi, params, panel, **kw).action
    p2 = EvolutionParams(params.eta, params.s_start, params.dt / 2, horizon=params.horizon,
                         cfl=params.cfl, horizon_velocity=params.horizon_velocity)
    b = xi_eta_cook(hset, chi, p2, panel, **kw).action
    diff = float(np.max(_norms(a - b)))
    if diff > tol:
        raise StepSizeError(f"Cook quadrature refinement disagreement {diff:.3e} > {tol:g}")
    return b, diff
