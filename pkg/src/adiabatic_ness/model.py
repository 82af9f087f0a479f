"""Discretized waveguide: geometry, potentials, bias, Hamiltonians, switching.

The configuration space is a 1D lattice on (-L, L) with spacing ``h`` and
Dirichlet walls at ``x = +-L``.  Transverse channels enter as constant energy
offsets ``lambda_c``, so every operator is a direct sum of real symmetric
tridiagonal blocks, one per channel.  Full-system vectors are stored channel
major: index ``c * n + i`` refers to channel ``c`` and node ``i``.

Units: hbar = 1, mass = 1/2, so the kinetic term is ``-d^2/dx^2`` and the
lattice dispersion reads ``E(k) = (2 - 2 cos(k h)) / h^2``.
"""

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import PchipInterpolator

from ._kernels import uniform_segments
from .errors import ConfigError, DomainError, HypothesisViolation, InputError

_EPS = 1e-9


# --------------------------------------------------------------------------
# Geometry
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Geometry:
    """Lattice geometry of the truncated waveguide.

    Attributes
    ----------
    h : grid spacing.
    L : lead truncation, Dirichlet walls at ``x = -L`` and ``x = L``.
    a_tilde : half width of the potential support.
    a : position of the internal walls of the decoupled Hamiltonian.
    lambdas : sorted channel thresholds, ``lambdas[0] >= 0``.
    """

    h: float
    L: float
    a_tilde: float
    a: float
    lambdas: tuple = (0.0,)

    @property
    def n(self) -> int:
        """Number of longitudinal nodes per channel."""
        return int(round(2.0 * self.L / self.h)) - 1

    @property
    def channels(self) -> int:
        return len(self.lambdas)

    @property
    def size(self) -> int:
        """Dimension of the full Hilbert space (all channels)."""
        return self.n * self.channels

    @property
    def x(self) -> np.ndarray:
        return -self.L + self.h * np.arange(1, self.n + 1)

    @property
    def region(self) -> np.ndarray:
        """Per-node region label: -1 left lead, 0 sample, +1 right lead."""
        x = self.x
        tol = _EPS * self.h
        reg = np.zeros(self.n, dtype=np.int8)
        reg[x < -self.a - tol] = -1
        reg[x > self.a + tol] = 1
        return reg

    @property
    def n_sample(self) -> int:
        return int(np.count_nonzero(self.region == 0))

    def wall_bonds(self) -> np.ndarray:
        """Indices ``i`` whose bond ``(i, i+1)`` crosses ``x = -a`` or ``x = a``."""
        reg = self.region
        return np.flatnonzero(reg[1:] != reg[:-1])

    def full(self, per_node: np.ndarray) -> np.ndarray:
        """Tile a per-node array over all channels."""
        return np.tile(np.asarray(per_node), self.channels)


def build_geometry(config: Mapping) -> Geometry:
    """Validate a raw mapping and return a :class:`Geometry`.

    Required keys: ``h``, ``L``, ``a``, ``a_tilde``; optional ``lambdas``.
    """
    try:
        h = float(config["h"])
        L = float(config["L"])
        a = float(config["a"])
        a_tilde = float(config["a_tilde"])
    except KeyError as exc:
        raise ConfigError(f"geometry: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError):
        raise ConfigError("geometry: h, L, a, a_tilde must be numbers") from None
    lambdas = tuple(float(v) for v in config.get("lambdas", (0.0,)))
    if not all(np.isfinite([h, L, a, a_tilde, *lambdas])):
        raise ConfigError("geometry: non-finite value")
    if h <= 0:
        raise ConfigError("geometry: h must be positive")
    if a_tilde <= 0:
        raise ConfigError("geometry: a_tilde must be positive")
    if not a_tilde < a:
        raise ConfigError(f"geometry: ordering violated, need a_tilde < a (a_tilde={a_tilde}, a={a})")
    if not a < L:
        raise ConfigError(f"geometry: wall outside truncated lead (a={a}, L={L})")
    if not lambdas:
        raise ConfigError("geometry: at least one channel threshold required")
    if lambdas[0] < 0 or any(b < c for c, b in zip(lambdas, lambdas[1:])):
        raise ConfigError("geometry: lambdas must be non-negative and sorted ascending")
    geo = Geometry(h=h, L=L, a_tilde=a_tilde, a=a, lambdas=lambdas)
    if geo.n < 3:
        raise ConfigError("geometry: fewer than three nodes")
    reg = geo.region
    if not (np.any(reg == -1) and np.any(reg == 1)):
        raise ConfigError(f"geometry: wall outside truncated lead (a={a}, L={L}, h={h})")
    return geo


# --------------------------------------------------------------------------
# Potential and bias
# --------------------------------------------------------------------------

def bump(x, radius, amplitude=1.0, center=0.0):
    """Compactly supported smooth bump with peak value ``amplitude``.

    ``amplitude * exp(1 + 1/((x - c)^2/r^2 - 1))`` inside ``|x - c| < r``.
    """
    u = (np.asarray(x, dtype=float) - center) / radius
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = amplitude * np.exp(1.0 + 1.0 / (u[inside] ** 2 - 1.0))
    return out


@dataclass(frozen=True)
class PotentialSpec:
    """Sample potential ``w``.

    ``kind`` is ``"bump"`` (one bump at the origin), ``"double_well"`` (one
    bump per entry of ``centers``) or ``"tabulated"`` (``values`` on the grid).
    Wells are negative amplitudes.
    """

    kind: str = "bump"
    amplitudes: tuple = (0.0,)
    radius: float = 1.0
    centers: tuple = (0.0,)
    values: tuple = ()
    smoothness_bound: float = 1.0e3

    def evaluate(self, geo: Geometry) -> np.ndarray:
        x = geo.x
        if self.kind == "bump":
            w = bump(x, self.radius, self.amplitudes[0], self.centers[0] if self.centers else 0.0)
        elif self.kind == "double_well":
            if len(self.centers) != len(self.amplitudes):
                raise ConfigError("potential: centers and amplitudes must have equal length")
            w = np.zeros(geo.n)
            for c, amp in zip(self.centers, self.amplitudes):
                w += bump(x, self.radius, amp, c)
        elif self.kind == "tabulated":
            w = np.asarray(self.values, dtype=float)
            if w.shape != (geo.n,):
                raise InputError(f"potential: tabulated values need {geo.n} entries, got {w.size}")
        else:
            raise ConfigError(f"potential: unknown kind {self.kind!r}")
        if not np.all(np.isfinite(w)):
            raise InputError("potential: non-finite value")
        support = np.abs(x) >= geo.a_tilde - _EPS * geo.h
        if np.any(w[support] != 0.0):
            raise HypothesisViolation("potential: w must vanish for |x| >= a_tilde")
        if self.kind != "tabulated":
            extent = self.radius + max(abs(c) for c in self.centers)
            if extent > geo.a_tilde + _EPS:
                raise HypothesisViolation(
                    f"potential: support radius {extent} exceeds a_tilde={geo.a_tilde}")
        if w.size > 2:
            d2 = np.abs(np.diff(w, 2)) / geo.h ** 2
            if d2.max() > self.smoothness_bound:
                raise InputError(
                    f"potential: second divided difference {d2.max():.3g} exceeds "
                    f"smoothness bound {self.smoothness_bound:.3g}")
        return w


def potential_from_config(config: Mapping | None) -> PotentialSpec:
    if not config:
        return PotentialSpec(kind="bump", amplitudes=(0.0,), radius=1.0)
    kind = config.get("kind", "bump")
    amps = config.get("amplitudes", config.get("amplitude", 0.0))
    amps = tuple(float(v) for v in np.atleast_1d(amps))
    centers = tuple(float(v) for v in np.atleast_1d(config.get("centers", 0.0)))
    return PotentialSpec(
        kind=kind,
        amplitudes=amps,
        radius=float(config.get("radius", 1.0)),
        centers=centers,
        values=tuple(config.get("values", ())),
        smoothness_bound=float(config.get("smoothness_bound", 1.0e3)),
    )


@dataclass(frozen=True)
class BiasSpec:
    """Lead bias: ``v_minus`` on ``x < -a`` and ``v_plus`` on ``x > a``."""

    v_minus: float = 0.0
    v_plus: float = 0.0

    @property
    def norm(self) -> float:
        return max(abs(self.v_minus), abs(self.v_plus))

    def diagonal(self, geo: Geometry) -> np.ndarray:
        reg = geo.region
        v = np.zeros(geo.n)
        v[reg == -1] = self.v_minus
        v[reg == 1] = self.v_plus
        return geo.full(v)


# --------------------------------------------------------------------------
# Hamiltonians
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HamiltonianSet:
    """Coupled and decoupled Hamiltonians together with the bias.

    The tridiagonal data (``diag``, ``off``, ``off_dec``, ``vdiag``) drive the
    compiled kernels; ``H``, ``H_dec`` and ``V`` are sparse views of the same
    operators.
    """

    geometry: Geometry
    bias: BiasSpec
    w: np.ndarray
    diag: np.ndarray
    off: np.ndarray
    off_dec: np.ndarray
    vdiag: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.diag.size

    @property
    def x(self) -> np.ndarray:
        return self.geometry.full(self.geometry.x)

    @property
    def region(self) -> np.ndarray:
        return self.geometry.full(self.geometry.region)

    @property
    def channel(self) -> np.ndarray:
        return np.repeat(np.arange(self.geometry.channels), self.geometry.n)

    @property
    def weights(self) -> np.ndarray:
        """Position weights <x> = sqrt(1 + x^2) per node."""
        return np.sqrt(1.0 + self.x ** 2)

    @property
    def v_norm(self) -> float:
        return float(np.max(np.abs(self.vdiag))) if self.vdiag.size else 0.0

    def tridiag(self, decoupled=False):
        """Return ``(diag, off, vdiag, seg_end)`` for the kernels."""
        key = ("tri", bool(decoupled))
        if key not in self._cache:
            off = self.off_dec if decoupled else self.off
            self._cache[key] = (self.diag, off, self.vdiag,
                                uniform_segments(self.diag, off, self.vdiag))
        return self._cache[key]

    def _sparse(self, diag, off):
        return sp.diags([off, diag, off], [-1, 0, 1], format="csr")

    @property
    def H(self):
        if "H" not in self._cache:
            self._cache["H"] = self._sparse(self.diag, self.off)
        return self._cache["H"]

    @property
    def H_dec(self):
        if "H_dec" not in self._cache:
            self._cache["H_dec"] = self._sparse(self.diag, self.off_dec)
        return self._cache["H_dec"]

    @property
    def V(self):
        if "V" not in self._cache:
            self._cache["V"] = sp.diags(self.vdiag, 0, format="csr")
        return self._cache["V"]

    def projection(self, label: int):
        """Sparse orthogonal projection onto region ``label`` (-1, 0, +1)."""
        return sp.diags((self.region == label).astype(float), 0, format="csr")

    def norm_estimate(self) -> float:
        """Gershgorin bound on ``max(|K(0)|, |K(1)|)``."""
        left = np.concatenate(([0.0], np.abs(self.off)))
        right = np.concatenate((np.abs(self.off), [0.0]))
        rows0 = np.abs(self.diag) + left + right
        rows1 = np.abs(self.diag + self.vdiag) + left + right
        return float(max(rows0.max(), rows1.max()))

    def with_bias(self, bias: BiasSpec) -> "HamiltonianSet":
        return HamiltonianSet(self.geometry, bias, self.w, self.diag, self.off,
                              self.off_dec, bias.diagonal(self.geometry))

    def severed(self) -> "HamiltonianSet":
        """Copy whose coupled Hamiltonian also has the wall bonds removed."""
        return HamiltonianSet(self.geometry, self.bias, self.w, self.diag,
                              self.off_dec.copy(), self.off_dec, self.vdiag)


def assemble_hamiltonians(geo: Geometry, potential: PotentialSpec,
                          bias: BiasSpec) -> HamiltonianSet:
    """Build ``H``, the decoupled ``H_dec`` and the bias ``V``.

    ``H`` is the Dirichlet second-difference Laplacian divided by ``h^2`` in
    each channel, shifted by ``lambda_c`` and by the potential.  ``H_dec``
    drops the two bonds per channel that cross ``x = -a`` and ``x = a``.
    """
    n, h, C = geo.n, geo.h, geo.channels
    w = potential.evaluate(geo)
    diag = np.concatenate([2.0 / h ** 2 + lam + w for lam in geo.lambdas])
    off = np.full(n * C - 1, -1.0 / h ** 2)
    off[n - 1::n] = 0.0  # no coupling between channels
    off_dec = off.copy()
    for c in range(C):
        off_dec[c * n + geo.wall_bonds()] = 0.0
    return HamiltonianSet(geo, bias, w, diag, off, off_dec, bias.diagonal(geo))


def hamiltonian_at(hset: HamiltonianSet, kappa: float, decoupled: bool = False):
    """Return ``K(kappa) = H + kappa V`` (or ``H_dec + kappa V``) as sparse CSR."""
    if not 0.0 <= kappa <= 1.0:
        raise DomainError(f"kappa={kappa} outside [0, 1]")
    base = hset.H_dec if decoupled else hset.H
    if kappa == 0.0 or hset.v_norm == 0.0:
        return base
    return (base + kappa * hset.V).tocsr()


# --------------------------------------------------------------------------
# Switching function
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SwitchingFunction:
    """Monotone switching profile with ``chi(0) = 1`` and ``chi(-inf) = 0``.

    ``kind="exponential"`` is ``chi(t) = exp(t)``.  ``kind="tabulated-smooth"``
    interpolates ``table = (t_k, chi_k)`` with a monotone cubic (PCHIP) and
    continues it below ``t_min`` by an exponential tail matched in value and
    slope.
    """

    kind: str = "exponential"
    t_min: float = float(np.log(1e-6))
    table: tuple = ()

    def __post_init__(self):
        if self.t_min >= 0:
            raise ConfigError("switching: t_min must be negative")
        if self.kind == "tabulated-smooth":
            t, c = (np.asarray(v, dtype=float) for v in self.table)
            if t[0] > self.t_min or t[-1] != 0.0 or c[-1] != 1.0:
                raise ConfigError("switching: table must span [t_min, 0] with chi(0) = 1")
            if np.any(np.diff(c) <= 0) or c[0] <= 0:
                raise ConfigError("switching: tabulated chi must be positive and increasing")
            spline = PchipInterpolator(t, c)
            object.__setattr__(self, "_spline", spline)
            object.__setattr__(self, "_dspline", spline.derivative())
            object.__setattr__(self, "_ispline", spline.antiderivative())
        elif self.kind != "exponential":
            raise ConfigError(f"switching: unknown kind {self.kind!r}")

    # tail parameters for the tabulated kind: chi ~ c0 exp(r (t - t_min))
    def _tail(self):
        c0 = float(self._spline(self.t_min))
        r = float(self._dspline(self.t_min)) / c0
        return c0, r

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "exponential":
            return np.exp(t)
        c0, r = self._tail()
        return np.where(t < self.t_min, c0 * np.exp(r * (t - self.t_min)),
                        self._spline(np.maximum(t, self.t_min)))

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "exponential":
            return np.exp(t)
        c0, r = self._tail()
        return np.where(t < self.t_min, r * c0 * np.exp(r * (t - self.t_min)),
                        self._dspline(np.maximum(t, self.t_min)))

    def antiderivative(self, t):
        """``int_{-inf}^t chi``."""
        t = np.asarray(t, dtype=float)
        if self.kind == "exponential":
            return np.exp(t)
        c0, r = self._tail()
        below = c0 / r * np.exp(r * (t - self.t_min))
        above = c0 / r + self._ispline(np.maximum(t, self.t_min)) - self._ispline(self.t_min)
        return np.where(t < self.t_min, below, above)

    def integral_from_t_min(self, t):
        return self.antiderivative(t) - self.antiderivative(self.t_min)

    def tail(self) -> float:
        """``int_{-inf}^{t_min} chi``."""
        return float(self.antiderivative(self.t_min))

    def phase_integral(self, s, eta):
        """``int_0^s chi(eta u) du`` for ``s <= 0``."""
        return (self.antiderivative(eta * np.asarray(s, dtype=float))
                - self.antiderivative(0.0)) / eta

    def check_contract(self, samples: int = 2001, tail_tol: float = 1e-5) -> None:
        """Sample the monotonicity and normalization contract; raise on failure."""
        t = np.linspace(self.t_min, 0.0, samples)[1:-1]
        v, dv = self.value(t), self.derivative(t)
        if not (np.all(v > 0) and np.all(v < 1) and np.all(dv > 0)):
            raise ConfigError("switching: need 0 < chi < 1 and chi' > 0 on (t_min, 0)")
        if abs(float(self.value(0.0)) - 1.0) > 1e-14:
            raise ConfigError("switching: chi(0) must equal 1")
        if self.tail() > tail_tol:
            raise ConfigError(f"switching: tail integral {self.tail():.3g} exceeds {tail_tol:.3g}")


def switching_eval(chi: SwitchingFunction, t: float):
    """Return ``(chi(t), chi'(t), int_{t_min}^t chi)``; ``t`` must be ``<= 0``."""
    if t > 0:
        raise DomainError(f"switching function evaluated at t={t} > 0")
    return (float(chi.value(t)), float(chi.derivative(t)),
            float(chi.integral_from_t_min(t)))


def switching_from_config(config: Mapping | None) -> SwitchingFunction:
    if not config:
        return SwitchingFunction()
    kind = config.get("kind", "exponential")
    t_min = float(config.get("t_min", np.log(1e-6)))
    table = ()
    if kind == "tabulated-smooth":
        table = (tuple(config["t"]), tuple(config["chi"]))
    return SwitchingFunction(kind=kind, t_min=t_min, table=table)


def build_model(config: Mapping) -> HamiltonianSet:
    """Convenience: geometry + potential + bias blocks of a scenario mapping."""
    geo = build_geometry(config["geometry"])
    pot = potential_from_config(config.get("potential"))
    b = config.get("bias", {}) or {}
    bias = BiasSpec(float(b.get("v_minus", 0.0)), float(b.get("v_plus", 0.0)))
    return assemble_hamiltonians(geo, pot, bias)


def lattice_velocity(h: float, energy: float | Sequence | None = None):
    """Group speed ``2 sin(k h)/h`` of the lattice at kinetic ``energy``.

    Without an energy this is the maximal speed ``2/h``.
    """
    if energy is None:
        return 2.0 / h
    e = np.clip(np.asarray(energy, dtype=float) * h ** 2 / 2.0, 0.0, 2.0)
    k_h = np.arccos(1.0 - e)
    return 2.0 * np.sin(k_h) / h
