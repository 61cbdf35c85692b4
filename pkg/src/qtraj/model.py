"""Open systems: Hamiltonian plus jump channels, their generators, and a model catalog.

Every generator is built from the rate-absorbed jump operators
``sqrt(rate) * op``; rate and operator are stored separately only for
bookkeeping, so ``(rate / s**2, s * op)`` describes the same physics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import hilbert as hb
from .errors import (
    DimensionMismatchError,
    InvalidOperatorError,
    NonUnitaryError,
    NotCompletelyPositiveError,
    TruncationError,
)

FOCK_GUARD = 1e-4


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class JumpChannel:
    label: str
    rate: float
    op: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.rate) or self.rate < 0:
            raise ValueError(f"channel {self.label!r}: rate must be >= 0, got {self.rate}")
        object.__setattr__(self, "op", _frozen(hb.as_operator(self.op)))
        object.__setattr__(self, "rate", float(self.rate))

    @property
    def absorbed(self) -> np.ndarray:
        """sqrt(rate) * op, the form entering all generators."""
        return np.sqrt(self.rate) * self.op


@dataclass(frozen=True, eq=False)
class OpenSystem:
    """Hamiltonian ``hamiltonian`` (hbar = 1) with an ordered tuple of jump channels.

    ``labels`` names the basis states; ``meta`` carries the catalog name,
    constructor parameters and, for oscillator models, the Fock cutoff
    (``meta["fock_levels"]`` and the atom dimension ``meta["atom_dim"]``).
    """

    hamiltonian: np.ndarray
    channels: tuple[JumpChannel, ...] = ()
    labels: tuple[str, ...] | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        H = hb.as_operator(self.hamiltonian)
        if not hb.is_hermitian(H, 1e-10):
            raise InvalidOperatorError("Hamiltonian is not Hermitian")
        object.__setattr__(self, "hamiltonian", _frozen(H))
        channels = tuple(self.channels)
        for ch in channels:
            if ch.op.shape != H.shape:
                raise DimensionMismatchError(
                    f"channel {ch.label!r} has shape {ch.op.shape}, system dim is {H.shape[0]}"
                )
        object.__setattr__(self, "channels", channels)
        if self.labels is not None and len(self.labels) != H.shape[0]:
            raise DimensionMismatchError("one basis label per dimension required")

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def jump_operators(self) -> list[np.ndarray]:
        return [ch.absorbed for ch in self.channels]

    def with_channels(self, channels: Sequence[JumpChannel], hamiltonian=None) -> "OpenSystem":
        H = self.hamiltonian if hamiltonian is None else hamiltonian
        return OpenSystem(H, tuple(channels), self.labels, dict(self.meta))

    def index(self, label: str) -> int:
        if self.labels is None or label not in self.labels:
            raise KeyError(f"unknown basis label {label!r}")
        return self.labels.index(label)


@dataclass(frozen=True, eq=False)
class LindbladMatrixForm:
    """Generator sum_ij gamma_ij (c_i rho c_j^+ - 1/2 {c_j^+ c_i, rho})."""

    gamma: np.ndarray
    ops: tuple[np.ndarray, ...]

    def __post_init__(self):
        g = np.array(self.gamma, dtype=complex)
        n = len(self.ops)
        if g.shape != (n, n):
            raise DimensionMismatchError(f"gamma must be {n}x{n}, got {g.shape}")
        if not hb.is_hermitian(g, 1e-10):
            raise NotCompletelyPositiveError("gamma is not Hermitian")
        object.__setattr__(self, "gamma", _frozen(g))
        object.__setattr__(self, "ops", tuple(_frozen(hb.as_operator(c)) for c in self.ops))


# -- generators -------------------------------------------------------------


def effective_hamiltonian(sys: OpenSystem) -> np.ndarray:
    """H - (i/2) sum_j rate_j c_j^+ c_j."""
    H = np.array(sys.hamiltonian)
    for C in sys.jump_operators():
        H = H - 0.5j * (hb.dag(C) @ C)
    return H


def recycling_superoperator(sys: OpenSystem, channels: Sequence[int] | None = None) -> np.ndarray:
    """Superoperator of rho -> sum_j rate_j c_j rho c_j^+ over the selected channels."""
    d = sys.dim
    J = np.zeros((d * d, d * d), dtype=complex)
    idx = range(sys.n_channels) if channels is None else channels
    for j in idx:
        C = sys.channels[j].absorbed
        J += hb.sprepost(C, hb.dag(C))
    return J


def liouvillian(sys: OpenSystem) -> np.ndarray:
    """Column-stacked matrix of the Lindblad generator."""
    H = sys.hamiltonian
    L = -1j * (hb.spre(H) - hb.spost(H))
    for C in sys.jump_operators():
        CdC = hb.dag(C) @ C
        L += hb.sprepost(C, hb.dag(C)) - 0.5 * hb.spre(CdC) - 0.5 * hb.spost(CdC)
    return L


def matrix_form_liouvillian(hamiltonian, form: LindbladMatrixForm) -> np.ndarray:
    """Liouvillian of the gamma_ij (non-diagonal) Lindblad form, built term by term."""
    H = hb.as_operator(hamiltonian)
    L = -1j * (hb.spre(H) - hb.spost(H))
    for i, ci in enumerate(form.ops):
        for j, cj in enumerate(form.ops):
            g = form.gamma[i, j]
            if g == 0:
                continue
            cjd_ci = hb.dag(cj) @ ci
            L += g * (hb.sprepost(ci, hb.dag(cj)) - 0.5 * hb.spre(cjd_ci) - 0.5 * hb.spost(cjd_ci))
    return L


# -- channel transformations --------------------------------------------------


def canonicalize_lindblad(form: LindbladMatrixForm, tol: float = 1e-10) -> tuple[JumpChannel, ...]:
    """Diagonalize gamma_ij and return unit-rate channels sqrt(k) * sum_i c_i V[i, k]."""
    kappa, V = np.linalg.eigh(form.gamma)
    if kappa.min(initial=0.0) < -tol:
        raise NotCompletelyPositiveError(
            f"gamma has eigenvalue {kappa.min():.3g} < 0; generator is not completely positive"
        )
    channels = []
    for k in range(len(kappa)):
        if kappa[k] <= tol:
            continue
        op = np.sqrt(kappa[k]) * sum(c * V[i, k] for i, c in enumerate(form.ops))
        channels.append(JumpChannel(f"k{len(channels)}", 1.0, op))
    return tuple(channels)


def mix_channels(sys: OpenSystem, U, tol: float = 1e-10) -> OpenSystem:
    """Replace sqrt(g_j) c_j by sum_k U[j, k] sqrt(g_k) c_k (unit rates)."""
    U = np.asarray(U, dtype=complex)
    n = sys.n_channels
    if U.shape != (n, n):
        raise DimensionMismatchError(f"mixing matrix must be {n}x{n}")
    if np.max(np.abs(U @ hb.dag(U) - np.eye(n)), initial=0.0) > tol:
        raise NonUnitaryError("mixing matrix is not unitary")
    C = sys.jump_operators()
    new = [
        JumpChannel(f"mix{j}", 1.0, sum(U[j, k] * C[k] for k in range(n)))
        for j in range(n)
    ]
    return sys.with_channels(new)


def displace_channel(sys: OpenSystem, j: int, amplitude: complex) -> OpenSystem:
    """Shift channel ``j`` by a c-number, compensating in the Hamiltonian.

    sqrt(g_j) c_j -> sqrt(g_j) c_j + amplitude and
    H -> H - (i/2)(amplitude^* sqrt(g_j) c_j - amplitude sqrt(g_j) c_j^+).
    """
    if not 0 <= j < sys.n_channels:
        raise IndexError(f"channel index {j} out of range")
    a = complex(amplitude)
    C = sys.channels[j].absorbed
    H = sys.hamiltonian - 0.5j * (np.conj(a) * C - a * hb.dag(C))
    H = 0.5 * (H + hb.dag(H))
    channels = list(sys.channels)
    channels[j] = JumpChannel(sys.channels[j].label, 1.0, C + a * np.eye(sys.dim))
    return sys.with_channels(channels, hamiltonian=H)


# -- catalog ------------------------------------------------------------------


def build_two_level(omega: float, delta: float, gamma: float) -> OpenSystem:
    """Driven, damped two-level atom in the rotating frame, basis (g, e)."""
    H = -delta * np.diag([0.0, 1.0]) - 0.5 * omega * hb.sigma_x()
    return OpenSystem(
        H,
        (JumpChannel("s", gamma, hb.sigma_minus()),),
        labels=("g", "e"),
        meta={"model": "two_level", "params": {"omega": omega, "delta": delta, "gamma": gamma}},
    )


def build_three_level(
    omega_s: float,
    omega_w: float,
    delta_s: float,
    delta_w: float,
    gamma_s: float,
    gamma_w: float,
) -> OpenSystem:
    """V-scheme shelving atom: strong g-e line and weak g-r line, basis (g, e, r)."""
    g, e, r = (hb.basis(3, k) for k in range(3))
    H = (
        -delta_s * hb.projector(e)
        - delta_w * hb.projector(r)
        - 0.5 * omega_s * (np.outer(e, g) + np.outer(g, e))
        - 0.5 * omega_w * (np.outer(r, g) + np.outer(g, r))
    )
    channels = (
        JumpChannel("s", gamma_s, np.outer(g, e)),
        JumpChannel("w", gamma_w, np.outer(g, r)),
    )
    params = dict(omega_s=omega_s, omega_w=omega_w, delta_s=delta_s,
                  delta_w=delta_w, gamma_s=gamma_s, gamma_w=gamma_w)
    return OpenSystem(H, channels, labels=("g", "e", "r"),
                      meta={"model": "three_level", "params": params})


def build_jcm_ion(
    nu: float,
    delta: float,
    omega: float,
    eta: float,
    gamma: float,
    n_max: int,
    rwa: bool = False,
) -> OpenSystem:
    """Two-level ion at the node of a standing wave in a harmonic trap.

    Basis index is ``2 * n + a`` with Fock number ``n`` in 0..n_max and
    atomic state ``a`` in (g, e).
    """
    n_max = int(n_max)
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if eta < 0:
        raise ValueError("eta must be >= 0")
    nf = n_max + 1
    a = hb.destroy(nf)
    ad = hb.dag(a)
    I_f, I_a = np.eye(nf), np.eye(2)
    sp, sm = hb.sigma_plus(), hb.sigma_minus()
    H = nu * np.kron(ad @ a, I_a) - 0.5 * delta * np.kron(I_f, hb.sigma_z())
    if rwa:
        coupling = np.kron(a, sp) + np.kron(ad, sm)
    else:
        coupling = np.kron(a + ad, sp + sm)
    H = H - 0.5 * omega * eta * coupling
    labels = tuple(f"{n}{s}" for n in range(nf) for s in "ge")
    params = dict(nu=nu, delta=delta, omega=omega, eta=eta, gamma=gamma, n_max=n_max, rwa=bool(rwa))
    return OpenSystem(
        H,
        (JumpChannel("s", gamma, np.kron(I_f, sm)),),
        labels=labels,
        meta={"model": "jcm_ion", "params": params, "fock_levels": nf, "atom_dim": 2},
    )


def build_decaying_qubit(gamma: float) -> OpenSystem:
    """Undriven qubit, basis (0, 1), with |1> decaying to |0> at rate gamma."""
    return OpenSystem(
        np.zeros((2, 2)),
        (JumpChannel("decay", gamma, np.outer(hb.basis(2, 0), hb.basis(2, 1))),),
        labels=("0", "1"),
        meta={"model": "decaying_qubit", "params": {"gamma": gamma}},
    )


@dataclass(frozen=True, eq=False)
class CatalogEntry:
    builder: Callable[..., OpenSystem]
    params: tuple[str, ...]
    rates: tuple[str, ...]
    defaults: dict = field(default_factory=dict)


CATALOG: dict[str, CatalogEntry] = {
    "two_level": CatalogEntry(build_two_level, ("omega", "delta", "gamma"), ("gamma",)),
    "three_level": CatalogEntry(
        build_three_level,
        ("omega_s", "omega_w", "delta_s", "delta_w", "gamma_s", "gamma_w"),
        ("gamma_s", "gamma_w"),
    ),
    "jcm_ion": CatalogEntry(
        build_jcm_ion,
        ("nu", "delta", "omega", "eta", "gamma", "n_max", "rwa"),
        ("gamma",),
        {"rwa": False},
    ),
    "decaying_qubit": CatalogEntry(build_decaying_qubit, ("gamma",), ("gamma",)),
}


def build_model(name: str, params: dict) -> OpenSystem:
    if name not in CATALOG:
        raise KeyError(f"unknown model {name!r}; known: {sorted(CATALOG)}")
    entry = CATALOG[name]
    kwargs = {**entry.defaults, **params}
    return entry.builder(**{k: kwargs[k] for k in entry.params})


# -- guards -------------------------------------------------------------------


def fock_populations(sys: OpenSystem, rho: np.ndarray) -> np.ndarray:
    """Populations of each Fock level (atom traced out); ``rho`` may be a stack."""
    nf, na = sys.meta["fock_levels"], sys.meta["atom_dim"]
    diag = np.real(np.diagonal(rho, axis1=-2, axis2=-1))
    return diag.reshape(diag.shape[:-1] + (nf, na)).sum(axis=-1)


def check_fock_truncation(sys: OpenSystem, rho: np.ndarray, threshold: float = FOCK_GUARD) -> float:
    """Raise TruncationError when the top Fock level holds population above threshold.

    Returns the largest top-level population seen. Systems without a Fock
    cutoff pass trivially.
    """
    if "fock_levels" not in sys.meta:
        return 0.0
    pops = fock_populations(sys, rho)
    top = float(np.max(pops[..., -1]))
    if top > threshold:
        raise TruncationError(
            f"Fock cutoff n_max={sys.meta['fock_levels'] - 1} too small: "
            f"top-level population {top:.3g} > {threshold:g}"
        )
    return top
