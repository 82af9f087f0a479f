"""Eigen-analysis: Fermi-Dirac calculus, bound/extended split, branch tracking.

The finite lattice has purely discrete spectrum.  Bound states are identified
by a localization weight (norm inside ``|x| <= a + margin``) together with an
energy below the continuum floor ``min_c lambda_c + min(kappa v_-, kappa v_+, 0)``.
Eigenvalue branches of ``K(kappa)`` are continued in ``kappa`` by maximal
eigenvector overlap; clusters of (near) degenerate eigenvalues are aligned with
the previous sample by an orthogonal Procrustes rotation, which is what keeps
labels on the analytic continuation through an exact crossing.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment
from scipy.special import expit

from .errors import (BranchResolutionError, DomainError, HypothesisViolation,
                     NumericalError)
from .model import HamiltonianSet


# --------------------------------------------------------------------------
# Fermi-Dirac
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FermiParams:
    kT: float
    mu: float

    def __post_init__(self):
        if not (np.isfinite(self.kT) and self.kT > 0):
            raise DomainError(f"fermi: temperature kT must be positive, got {self.kT}")
        if not np.isfinite(self.mu):
            raise DomainError("fermi: chemical potential must be finite")


class SpectralOperator:
    """Operator ``sum_i values[i] |v_i><v_i|`` kept in factored form."""

    def __init__(self, vectors, values):
        self.vectors = np.asarray(vectors)
        self.values = np.asarray(values)

    def apply(self, F):
        F = np.asarray(F)
        one = F.ndim == 1
        F2 = F[:, None] if one else F
        out = self.vectors @ (self.values[:, None] * (self.vectors.conj().T @ F2))
        return out[:, 0] if one else out

    __call__ = apply

    def to_dense(self):
        return (self.vectors * self.values) @ self.vectors.conj().T


def fermi_dirac(x, params: FermiParams):
    """Fermi-Dirac weight ``1/(1 + exp((E - mu)/kT))``.

    Scalars and arrays are mapped elementwise; a :class:`SpectralData` is
    mapped to the corresponding :class:`SpectralOperator`.
    """
    if isinstance(x, SpectralData):
        return SpectralOperator(x.vectors, fermi_dirac(x.energies, params))
    e = np.asarray(x, dtype=float)
    val = expit(-(e - params.mu) / params.kT)
    return float(val) if val.ndim == 0 else val


# --------------------------------------------------------------------------
# Eigendecomposition
# --------------------------------------------------------------------------

@dataclass
class SpectralData:
    """Eigenpairs (ascending) with localization weights."""

    energies: np.ndarray
    vectors: np.ndarray
    localization: np.ndarray
    op_norm: float = 1.0

    def __len__(self):
        return self.energies.size


def _as_tridiagonal(op):
    """Return ``(d, e)`` if ``op`` is (sparse or dense) tridiagonal, else None."""
    if isinstance(op, tuple) and len(op) == 2:
        return np.asarray(op[0], float), np.asarray(op[1], float)
    if sp.issparse(op):
        coo = op.tocoo()
        if coo.nnz == 0 or np.max(np.abs(coo.row - coo.col)) <= 1:
            csr = op.tocsr()
            return csr.diagonal(0).real.astype(float), csr.diagonal(1).real.astype(float)
    return None


def _fix_signs(vecs):
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])].real)
    signs[signs == 0] = 1.0
    return vecs * signs


def eigendecompose(op, local_mask=None, select=None, check=True) -> SpectralData:
    """Symmetric eigendecomposition with deterministic ordering and signs.

    Parameters
    ----------
    op : sparse matrix, ndarray or ``(diag, offdiag)`` tuple.
    local_mask : boolean array marking the "sample" region used for the
        localization weight (default: everything).
    select : ``None`` (all), ``("i", lo, hi)`` index range inclusive, or
        ``("v", lo, hi)`` half-open energy window.
    """
    tri = _as_tridiagonal(op)
    if tri is None:
        A = op.toarray() if sp.issparse(op) else np.asarray(op)
        if not np.allclose(A, A.conj().T, atol=0, rtol=0):
            raise DomainError("eigendecompose: operator is not symmetric")
    try:
        if tri is not None:
            d, e = tri
            if select is None:
                w, v = sla.eigh_tridiagonal(d, e)
            else:
                kind, lo, hi = select
                w, v = sla.eigh_tridiagonal(d, e, select=kind, select_range=(lo, hi))
            norm = float(np.max(np.abs(d) + np.r_[0, np.abs(e)] + np.r_[np.abs(e), 0]))
            A = None
        else:
            if select is None:
                w, v = sla.eigh(A)
            else:
                kind, lo, hi = select
                key = "subset_by_index" if kind == "i" else "subset_by_value"
                w, v = sla.eigh(A, **{key: [lo, hi]})
            norm = float(np.max(np.sum(np.abs(A), axis=1)))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigendecompose: solver failed ({exc})") from None
    v = _fix_signs(v)
    if check and w.size:
        if A is None:
            Kv = d[:, None] * v
            Kv[:-1] += e[:, None] * v[1:]
            Kv[1:] += e[:, None] * v[:-1]
        else:
            Kv = A @ v
        res = np.max(np.linalg.norm(Kv - v * w, axis=0))
        if res > 1e-9 * max(norm, 1.0):
            raise NumericalError(f"eigendecompose: residual {res:.3e} above 1e-9*|K|")
        orth = np.max(np.abs(v.conj().T @ v - np.eye(w.size)))
        if orth > 1e-10:
            raise NumericalError(f"eigendecompose: orthonormality defect {orth:.3e}")
    if local_mask is None:
        loc = np.ones(w.size)
    else:
        loc = np.sum(np.abs(v[np.asarray(local_mask)]) ** 2, axis=0)
    return SpectralData(w, v, loc, norm)


# --------------------------------------------------------------------------
# pp / ac split
# --------------------------------------------------------------------------

def localization_mask(hset: HamiltonianSet, margin=None):
    """Boolean mask ``|x| <= a + margin`` (default margin ``2h``)."""
    geo = hset.geometry
    if margin is None:
        margin = 2.0 * geo.h
    return np.abs(hset.x) <= geo.a + margin + 1e-9 * geo.h


def continuum_floor(hset: HamiltonianSet, kappa: float) -> float:
    b = hset.bias
    lam = hset.geometry.lambdas[0]
    return lam + min(kappa * b.v_minus, kappa * b.v_plus, 0.0)


@dataclass
class SpectralSplit:
    """Partition of an orthonormal basis into bound (pp) and extended (ac) parts.

    Only the pp vectors are stored; the ac projector is ``1 - E_pp``, which is
    the orthogonal complement within the full basis.
    """

    pp_vectors: np.ndarray
    pp_energies: np.ndarray
    ac_index: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    pp_index: np.ndarray = field(default_factory=lambda: np.zeros(0, int))

    @property
    def n_pp(self):
        return self.pp_energies.size

    def apply_pp(self, F):
        P = self.pp_vectors
        return P @ (P.conj().T @ F)

    def apply_ac(self, F):
        return F - self.apply_pp(F)

    def dense_pp(self):
        P = self.pp_vectors
        return P @ P.conj().T

    def dense_ac(self):
        return np.eye(self.pp_vectors.shape[0]) - self.dense_pp()


def classify_states(sd: SpectralData, theta: float = 0.9, floor: float = 0.0,
                    n_expected=None) -> SpectralSplit:
    """Split eigenstates into pp (localized and below ``floor``) and ac sets."""
    if not 0.5 < theta < 1.0:
        raise DomainError(f"classify_states: theta={theta} outside (0.5, 1)")
    pp = (sd.localization >= theta) & (sd.energies < floor)
    pp_idx = np.flatnonzero(pp)
    ac_idx = np.flatnonzero(~pp)
    if n_expected is not None and pp_idx.size != n_expected:
        raise HypothesisViolation(
            f"classify_states: found {pp_idx.size} bound states, expected {n_expected}")
    return SpectralSplit(sd.vectors[:, pp_idx], sd.energies[pp_idx], ac_idx, pp_idx)


def bound_states(hset: HamiltonianSet, kappa: float, theta: float = 0.9,
                 margin=None, n_expected=None, decoupled=False) -> SpectralSplit:
    """Bound-state split of ``K(kappa)`` computing only eigenpairs below the floor."""
    diag, off, vdiag, _ = hset.tridiag(decoupled)
    floor = continuum_floor(hset, kappa)
    d = diag + kappa * vdiag
    lo = float(np.min(d) - 2 * np.max(np.abs(off), initial=0.0)) - 1.0
    if lo >= floor:
        sd = SpectralData(np.zeros(0), np.zeros((d.size, 0)), np.zeros(0))
    else:
        sd = eigendecompose((d, off), localization_mask(hset, margin), select=("v", lo, floor))
    return classify_states(sd, theta, floor, n_expected)


# --------------------------------------------------------------------------
# Operator families and branch tracking
# --------------------------------------------------------------------------

class LatticeFamily:
    """``kappa -> K(kappa)`` for a :class:`HamiltonianSet`."""

    def __init__(self, hset: HamiltonianSet, margin=None, decoupled=False):
        self.hset = hset
        self.decoupled = decoupled
        self.local_mask = localization_mask(hset, margin)
        self.size = hset.size

    def floor(self, kappa):
        return continuum_floor(self.hset, kappa)

    def tridiagonal(self, kappa):
        diag, off, vdiag, _ = self.hset.tridiag(self.decoupled)
        return diag + kappa * vdiag, off

    def matrix(self, kappa):
        d, e = self.tridiagonal(kappa)
        return sp.diags([e, d, e], [-1, 0, 1], format="csr")

    def lowest(self, kappa, count):
        d, e = self.tridiagonal(kappa)
        return eigendecompose((d, e), self.local_mask, select=("i", 0, count - 1))

    def derivative(self):
        """``dK/dkappa`` as a sparse matrix."""
        return sp.diags(self.hset.vdiag, 0, format="csr")


@dataclass
class CrossingRecord:
    branches: tuple
    kappa0: float
    order: int
    order_fit: float


def _match(prev, cand_vecs, cand_e, degeneracy_tol):
    """Match previous branch vectors to candidate eigenvectors.

    Returns the continued vectors (sign aligned), energies and overlaps.
    """
    ov = np.abs(cand_vecs.conj().T @ prev)
    rows, cols = linear_sum_assignment(-ov)
    order = np.empty(prev.shape[1], dtype=int)
    order[cols] = rows
    vecs = cand_vecs[:, order].copy()
    en = cand_e[order].copy()
    # Procrustes alignment inside clusters of near-degenerate energies
    N = prev.shape[1]
    done = np.zeros(N, bool)
    for j in range(N):
        if done[j]:
            continue
        cluster = [k for k in range(N) if abs(en[k] - en[j]) <= degeneracy_tol]
        for k in cluster:
            done[k] = True
        if len(cluster) > 1:
            sub = vecs[:, cluster]
            M = sub.conj().T @ prev[:, cluster]
            u, _, vh = np.linalg.svd(M)
            vecs[:, cluster] = sub @ (u @ vh)
            # energies inside a degenerate cluster: Rayleigh quotients equal
    # sign alignment with previous sample
    s = np.sum(vecs.conj() * prev, axis=0)
    vecs = vecs * np.where(s.real < 0, -1.0, 1.0)
    overlaps = np.abs(np.sum(vecs.conj() * prev, axis=0))
    return vecs, en, overlaps


@dataclass
class BranchTable:
    """Continued eigenvalue branches ``eps_j(kappa)`` and eigenvectors."""

    kappas: np.ndarray
    energies: np.ndarray          # (K, N)
    vectors: np.ndarray           # (K, size, N)
    floors: np.ndarray            # (K,)
    overlaps: np.ndarray          # (K, N), overlap with previous sample
    crossings: list
    family: object = None
    extra: int = 4

    @property
    def N(self):
        return self.energies.shape[1]

    def gap(self):
        """Per-sample minimal pairwise distance between branches."""
        if self.N < 2:
            return np.full(self.kappas.size, np.inf)
        e = self.energies
        g = np.abs(e[:, :, None] - e[:, None, :])
        g[:, np.arange(self.N), np.arange(self.N)] = np.inf
        return g.min(axis=(1, 2))

    def floor_distance(self):
        if self.N == 0:
            return np.full(self.kappas.size, np.inf)
        return (self.floors[:, None] - self.energies).min(axis=1)

    def lipschitz_constant(self):
        """Fitted ``max ||E_j(k_{i+1}) - E_j(k_i)|| / dk`` over samples."""
        if self.N == 0 or self.kappas.size < 2:
            return 0.0
        ov = np.abs(np.einsum("kij,kij->kj", self.vectors[1:].conj(), self.vectors[:-1]))
        dist = np.sqrt(np.clip(1.0 - ov ** 2, 0.0, None))
        return float(np.max(dist / np.diff(self.kappas)[:, None]))

    def to_csv(self, path):
        gap, dmin = self.gap(), self.floor_distance()
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["kappa"] + [f"eps_{j + 1}" for j in range(self.N)] + ["gap", "d_min"])
            for i, k in enumerate(self.kappas):
                wr.writerow([f"{k:.12g}"] + [f"{e:.15e}" for e in self.energies[i]]
                            + [f"{gap[i]:.15e}", f"{dmin[i]:.15e}"])

    # -- continued projectors at arbitrary kappa ---------------------------
    def vectors_at(self, kappa):
        """Continued eigenvectors (size x N) and energies at ``kappa``."""
        i = int(np.argmin(np.abs(self.kappas - kappa)))
        if abs(self.kappas[i] - kappa) <= 1e-15:
            return self.vectors[i], self.energies[i]
        if self.family is None:
            raise BranchResolutionError("branch table has no operator family attached")
        sd = self.family.lowest(kappa, self.N + self.extra)
        scale = max(1.0, float(np.max(np.abs(sd.energies))))
        vecs, en, ov = _match(self.vectors[i], sd.vectors, sd.energies, 1e-9 * scale)
        dk = abs(self.kappas[i] - kappa)
        if np.any(ov < 0.8):
            raise BranchResolutionError(
                f"projector continuation at kappa={kappa:.6g}: overlap {ov.min():.3f} < 0.8 "
                f"with sample kappa={self.kappas[i]:.6g} (dk={dk:.2g})")
        return vecs, en

    def projector_at(self, kappa, j):
        """Unit vector spanning the continued projector ``E_j(kappa)``."""
        vecs, _ = self.vectors_at(kappa)
        return vecs[:, j]

    def energy_at(self, kappa, j):
        return float(self.vectors_at(kappa)[1][j])

    def derivative_vector(self, kappa, j, dk=1e-3, richardson=True):
        """``d phi_j / d kappa`` by centered differences of continued vectors.

        ``E_j' = phi' phi^T + phi phi'^T``.  With ``richardson`` the step is
        also halved and the two estimates extrapolated; the difference is
        returned as an error estimate.
        """
        def cd(h):
            lo, hi = max(0.0, kappa - h), min(1.0, kappa + h)
            p0 = self.projector_at(kappa, j)
            pl, ph = self.projector_at(lo, j), self.projector_at(hi, j)
            pl = pl * np.sign((pl.conj() @ p0).real or 1.0)
            ph = ph * np.sign((ph.conj() @ p0).real or 1.0)
            return (ph - pl) / (hi - lo)
        d1 = cd(dk)
        if not richardson:
            return d1, np.nan
        d2 = cd(dk / 2)
        est = (4 * d2 - d1) / 3
        return est, float(np.linalg.norm(est - d2))


def track_branches(family, kappas, N, theta=0.9, extra=4, reject_degenerate=True,
                   min_overlap=0.8) -> BranchTable:
    """Continue the ``N`` bound-state branches of ``family`` across ``kappas``."""
    kappas = np.asarray(kappas, dtype=float)
    if kappas.ndim != 1 or kappas.size < 1 or np.any(np.diff(kappas) <= 0):
        raise DomainError("track_branches: kappa grid must be strictly increasing")
    if kappas[0] < 0 or kappas[-1] > 1:
        raise DomainError("track_branches: kappa grid must lie in [0, 1]")
    size = family.size
    K = kappas.size
    energies = np.zeros((K, N))
    vectors = np.zeros((K, size, N))
    floors = np.array([family.floor(k) for k in kappas])
    overlaps = np.ones((K, N))

    sd0 = family.lowest(kappas[0], N + extra)
    split = classify_states(sd0, theta, floors[0])
    if split.n_pp != N:
        raise HypothesisViolation(
            f"track_branches: {split.n_pp} bound states at kappa={kappas[0]}, expected {N}")
    if N == 0:
        return BranchTable(kappas, energies, vectors, floors, overlaps, [], family, extra)
    if reject_degenerate and N > 1 and np.min(np.diff(split.pp_energies)) < 1e-8:
        raise HypothesisViolation("track_branches: degenerate bound states at kappa=0")
    vectors[0] = split.pp_vectors
    energies[0] = split.pp_energies

    for i in range(1, K):
        sd = family.lowest(kappas[i], N + extra)
        scale = max(1.0, float(np.max(np.abs(sd.energies))))
        vecs, en, ov = _match(vectors[i - 1], sd.vectors, sd.energies, 1e-9 * scale)
        vectors[i], energies[i], overlaps[i] = vecs, en, ov

    crossings = _detect_crossings(kappas, energies)
    if len(crossings) > 1:
        raise HypothesisViolation(
            f"track_branches: {len(crossings)} crossings detected, at most one allowed")
    near = np.zeros(K, bool)
    for c in crossings:
        near |= np.abs(kappas - c.kappa0) <= 2 * np.median(np.diff(kappas)) if K > 1 else False
    bad = (overlaps.min(axis=1) < min_overlap) & ~near
    if np.any(bad):
        k = kappas[np.flatnonzero(bad)[0]]
        raise BranchResolutionError(f"track_branches: overlap below {min_overlap} at kappa={k:.6g}")
    return BranchTable(kappas, energies, vectors, floors, overlaps, crossings, family, extra)


def _detect_crossings(kappas, energies):
    K, N = energies.shape
    if N < 2 or K < 3:
        return []
    dk = np.diff(kappas)
    slopes = np.abs(np.diff(energies, axis=0) / dk[:, None])
    tol = 10.0 * np.median(dk) * max(np.median(slopes), 1e-12)
    out = []
    for a in range(N):
        for b in range(a + 1, N):
            d = energies[:, a] - energies[:, b]
            sgn = np.sign(d)
            for i in range(K - 1):
                if sgn[i] == 0 and i > 0:
                    continue
                change = sgn[i] * sgn[i + 1] < 0 or (sgn[i + 1] == 0 and i + 2 < K
                                                      and sgn[i] * sgn[i + 2] < 0)
                if not change or min(abs(d[i]), abs(d[i + 1])) > tol:
                    continue
                if sgn[i + 1] == 0:
                    k0 = kappas[i + 1]
                else:
                    k0 = kappas[i] - d[i] * (kappas[i + 1] - kappas[i]) / (d[i + 1] - d[i])
                dist = np.abs(kappas - k0)
                sel = (dist > 0.5 * np.median(dk)) & (dist <= 10 * np.median(dk)) & (np.abs(d) > 0)
                if np.count_nonzero(sel) >= 2:
                    slope = np.polyfit(np.log(dist[sel]), np.log(np.abs(d[sel])), 1)[0]
                else:
                    slope = 1.0
                out.append(CrossingRecord((a, b), float(k0), max(1, int(round(slope))), float(slope)))
    return out


def gap_audit(table: BranchTable) -> float:
    """Minimal distance of a tracked branch to the continuum floor (inf if none)."""
    if table.N == 0:
        return float("inf")
    return float(np.min(table.floor_distance()))
