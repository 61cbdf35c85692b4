"""Deterministic oracles: master equation, steady states, correlations and counting statistics.

Everything here works on dense superoperators (column stacking, see
:mod:`qtraj.hilbert`) and is exact up to the accuracy of the matrix
exponential, so these routines serve as references for the stochastic
engines.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.integrate
import scipy.linalg

from . import hilbert as hb
from .errors import NonUniqueSteadyStateError, TruncationError
from .model import OpenSystem, effective_hamiltonian, liouvillian, recycling_superoperator

# superoperators up to this dimension are exponentiated directly (system dim 64)
DENSE_SUPER_MAX = 4096


@dataclass(frozen=True, eq=False)
class CorrelationSeries:
    """Values of <A(t0 + tau) B(t0)> on lags ``tau >= 0``.

    ``provenance`` is ``"oracle"`` or ``"trajectory"``; trajectory estimates
    carry ``stderr`` (real and imaginary parts separately). For homodyne
    current correlations ``shot_noise`` is the weight of the delta(tau) term,
    which is reported analytically and never estimated.
    """

    lags: np.ndarray
    values: np.ndarray
    provenance: str = "oracle"
    stderr: np.ndarray | None = None
    n_samples: int | None = None
    shot_noise: float | None = None


@dataclass(frozen=True, eq=False)
class CountingDistribution:
    horizon: float
    probabilities: np.ndarray
    provenance: str = "oracle"
    n_samples: int | None = None

    @property
    def m_max(self) -> int:
        return self.probabilities.size - 1

    def mean(self) -> float:
        return float(np.dot(np.arange(self.probabilities.size), self.probabilities))


@dataclass(frozen=True, eq=False)
class HierarchyResult:
    """Photon-number-resolved densities ``rho_n[n, t]`` and their traces."""

    times: np.ndarray
    rho_n: np.ndarray
    truncated: bool

    @property
    def probabilities(self) -> np.ndarray:
        return np.real(np.trace(self.rho_n, axis1=-2, axis2=-1))

    def total(self) -> np.ndarray:
        return self.rho_n.sum(axis=0)


def check_grid(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("time grid must be a non-empty 1-d sequence")
    if np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    if times[0] < 0:
        raise ValueError("time grid must start at t >= 0")
    return times


def propagate(generator: np.ndarray, x0: np.ndarray, times) -> np.ndarray:
    """Rows are exp(generator * t) x0 for each t (t >= 0, increasing)."""
    times = check_grid(times)
    n = generator.shape[0]
    out = np.empty((times.size, n), dtype=complex)
    if n <= DENSE_SUPER_MAX:
        cache: dict[float, np.ndarray] = {}
        x, t_prev = np.asarray(x0, dtype=complex), 0.0
        for k, t in enumerate(times):
            dt = t - t_prev
            if dt > 0:
                key = round(dt, 14)
                if key not in cache:
                    cache[key] = scipy.linalg.expm(generator * dt)
                x = cache[key] @ x
            out[k] = x
            t_prev = t
        return out
    sol = scipy.integrate.solve_ivp(
        lambda _t, y: generator @ y, (0.0, times[-1]), np.asarray(x0, dtype=complex),
        method="DOP853", t_eval=times, rtol=1e-10, atol=1e-12,
    )
    return sol.y.T


def master_solve(sys: OpenSystem, rho0, times) -> np.ndarray:
    """rho(t) = exp(L t) rho0 on the grid; returns shape ``(n_t, d, d)``."""
    rho0 = hb.as_operator(rho0)
    vs = propagate(liouvillian(sys), hb.vec(rho0), times)
    return _vec_stack_to_ops(vs, sys.dim)


def _vec_stack_to_ops(vs: np.ndarray, d: int) -> np.ndarray:
    # row k of vs is a column-stacked d x d matrix
    return vs.reshape(vs.shape[0], d, d).transpose(0, 2, 1)


def steady_state(sys: OpenSystem, tol: float = 1e-9) -> np.ndarray:
    """Unique trace-one kernel element of the Liouvillian."""
    L = liouvillian(sys)
    _, s, vh = np.linalg.svd(L)
    scale = max(s[0], 1.0)
    kernel = int(np.sum(s <= tol * scale))
    if kernel != 1:
        raise NonUniqueSteadyStateError(f"Liouvillian kernel has dimension {kernel}, expected 1")
    rho = hb.unvec(np.conj(vh[-1]), sys.dim)
    tr = np.trace(rho)
    if abs(tr) < 1e-12:
        raise NonUniqueSteadyStateError("kernel element is traceless")
    rho = rho / tr
    return 0.5 * (rho + hb.dag(rho))


def regression_correlation(sys: OpenSystem, A, B, rho0, lags) -> CorrelationSeries:
    """<A(t0 + tau) B(t0)> = Tr{A exp(L tau) (B rho0)}."""
    A, B, rho0 = hb.as_operator(A), hb.as_operator(B), hb.as_operator(rho0)
    lags = check_grid(lags)
    d = sys.dim
    xs = _vec_stack_to_ops(propagate(liouvillian(sys), hb.vec(B @ rho0), lags), d)
    values = np.einsum("ij,tji->t", A, xs)
    return CorrelationSeries(lags, values, "oracle")


def homodyne_correlation_oracle(sys: OpenSystem, lags, channel: int = 0,
                                rho_ss: np.ndarray | None = None) -> CorrelationSeries:
    """Smooth part of the stationary homodyne current correlation.

    Tr{x exp(L tau)(C rho_ss + rho_ss C^+)} with C the rate-absorbed jump
    operator and x = C + C^+; the delta(tau) shot-noise term has unit weight
    and is returned in ``shot_noise``.
    """
    lags = check_grid(lags)
    rho = steady_state(sys) if rho_ss is None else hb.as_operator(rho_ss)
    C = sys.channels[channel].absorbed
    x = C + hb.dag(C)
    X0 = C @ rho + rho @ hb.dag(C)
    xs = _vec_stack_to_ops(propagate(liouvillian(sys), hb.vec(X0), lags), sys.dim)
    values = np.einsum("ij,tji->t", x, xs)
    return CorrelationSeries(lags, values, "oracle", shot_noise=1.0)


def intensity_correlation(sys: OpenSystem, rho, lags, channels: Sequence[int] | None = None) -> np.ndarray:
    """Unnormalized photon-count correlation Tr{J exp(L tau) J rho} on the selected channels."""
    L = liouvillian(sys)
    J = recycling_superoperator(sys, channels)
    x0 = J @ hb.vec(hb.as_operator(rho))
    xs = propagate(L, x0, lags)
    return np.array([np.trace(hb.unvec(J @ x, sys.dim)).real for x in xs])


def _nojump_states(sys: OpenSystem, psi, times) -> np.ndarray:
    heff = effective_hamiltonian(sys)
    psi = hb.as_state(psi)
    return np.array([hb.expm_operator(heff, t) @ psi for t in np.asarray(times, dtype=float)])


def waiting_time_oracle(sys: OpenSystem, psi, times, channel: int | None = None) -> np.ndarray:
    """Density rate_j ||c_j exp(-i H_eff t) psi||^2 of the first count after a (re)start.

    Returns shape ``(n_t, n_channels)``, or ``(n_t,)`` when ``channel`` is given.
    """
    states = _nojump_states(sys, psi, times)
    dens = np.stack(
        [np.sum(np.abs(states @ C.T) ** 2, axis=1) for C in sys.jump_operators()], axis=1
    )
    return dens if channel is None else dens[:, channel]


def waiting_time_cdf(sys: OpenSystem, psi, times) -> np.ndarray:
    """Probability that the first count (any channel) occurs by t: 1 - ||exp(-i H_eff t) psi||^2."""
    states = _nojump_states(sys, psi, times)
    return 1.0 - np.sum(np.abs(states) ** 2, axis=1)


def epd_evaluate(sys: OpenSystem, rho0, sequence: Sequence[tuple[int, float]], t: float) -> float:
    """Exclusive probability density of the count record ``[(j_1, t_1), ..., (j_m, t_m)]``.

    Tr{S(t, t_m) J_{j_m} ... J_{j_1} S(t_1, 0) rho0} with S(t, s) rho = U rho U^+,
    i.e. counts exactly at those times and channels and none else in (0, t].
    """
    heff = effective_hamiltonian(sys)
    rho = hb.as_operator(rho0)
    t_prev = 0.0
    for j, tk in sequence:
        if not t_prev < tk or tk > t:
            raise ValueError("count times must satisfy 0 < t_1 < ... < t_m <= t")
        U = hb.expm_operator(heff, tk - t_prev)
        rho = U @ rho @ hb.dag(U)
        C = sys.channels[j].absorbed
        rho = C @ rho @ hb.dag(C)
        t_prev = tk
    U = hb.expm_operator(heff, t - t_prev)
    return float(np.trace(U @ rho @ hb.dag(U)).real)


def next_count_density(sys: OpenSystem, rho, channel: int, lags) -> np.ndarray:
    """Density of the next count on ``channel`` after a count from state ``rho``.

    Tr{J exp((L - J) tau) J rho} / Tr{J rho}; counts on other channels are
    summed over, i.e. they stay inside the generator.
    """
    L = liouvillian(sys)
    J = recycling_superoperator(sys, [channel])
    x0 = J @ hb.vec(hb.as_operator(rho))
    norm = np.trace(hb.unvec(x0, sys.dim))
    xs = propagate(L - J, x0 / norm, lags)
    return np.array([np.trace(hb.unvec(J @ x, sys.dim)).real for x in xs])


def mean_count(sys: OpenSystem, rho0, T: float, channels: Sequence[int] | None = None) -> float:
    """Expected number of counts in (0, T]: integral of Tr{J rho(s)}."""
    L = liouvillian(sys)
    J = recycling_superoperator(sys, channels)
    n = L.shape[0]
    block = np.zeros((2 * n, 2 * n), dtype=complex)
    block[:n, :n] = L
    block[n:, :n] = np.eye(n)
    integral = scipy.linalg.expm(block * T)[n:, :n]
    x = J @ integral @ hb.vec(hb.as_operator(rho0))
    return float(np.trace(hb.unvec(x, sys.dim)).real)


def characteristic_trace(sys: OpenSystem, rho0, T: float, ks, channels=None) -> np.ndarray:
    """Tr chi_T[k] for constant counting fields ``ks``."""
    L = liouvillian(sys)
    J = recycling_superoperator(sys, channels)
    v0 = hb.vec(hb.as_operator(rho0))
    d = sys.dim
    out = []
    for k in np.atleast_1d(ks):
        chi = scipy.linalg.expm((L + (np.exp(1j * k) - 1.0) * J) * T) @ v0
        out.append(np.trace(hb.unvec(chi, d)))
    return np.array(out)


def counting_oracle(sys: OpenSystem, rho0, T: float, m_max: int | None = None,
                    channels: Sequence[int] | None = None) -> CountingDistribution:
    """Probabilities P_m of m counts in (0, T] by inverting the counting generating function.

    Tr chi_T[k] is sampled at k_l = 2 pi l / M and P_m = (1/M) sum_l Phi(k_l) e^{-i k_l m}.
    With ``m_max`` unset it defaults to 4x the mean count and grows until
    P_{m_max} < 1e-4; an explicit ``m_max`` that violates this raises.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    auto = m_max is None
    if auto:
        m_max = max(int(np.ceil(4.0 * mean_count(sys, rho0, T, channels))), 4)
    for _ in range(12):
        M = 1 << int(np.ceil(np.log2(4 * (m_max + 1))))
        ks = 2.0 * np.pi * np.arange(M) / M
        phi = characteristic_trace(sys, rho0, T, ks, channels)
        P = np.fft.fft(phi) / M
        if np.max(np.abs(P.imag)) > 1e-8:
            raise ArithmeticError(f"counting distribution has imaginary part {np.max(np.abs(P.imag)):.2g}")
        P = P.real[: m_max + 1]
        if P[-1] < 1e-4:
            return CountingDistribution(T, P, "oracle")
        if not auto:
            raise TruncationError(f"P_(m_max={m_max}) = {P[-1]:.3g} >= 1e-4; increase m_max")
        m_max *= 2
    raise TruncationError("counting distribution did not converge")


def counting_histogram(counts, T: float, m_max: int | None = None) -> CountingDistribution:
    counts = np.asarray(counts, dtype=int)
    size = (counts.max() if m_max is None else m_max) + 1
    hist = np.bincount(counts, minlength=size)[:size] / counts.size
    return CountingDistribution(T, hist.astype(float), "trajectory", counts.size)


def hierarchy_integrate(sys: OpenSystem, rho0, times, n_max: int,
                        channels: Sequence[int] | None = None) -> HierarchyResult:
    """Integrate the photon-number ladder d rho_n/dt = (L - J) rho_n + J rho_{n-1}.

    ``rho_n`` is the part of the density with exactly n counts so far; the
    ladder is cut at ``n_max`` and ``truncated`` is set when the retained
    probability drops below 1 - 1e-4.
    """
    times = check_grid(times)
    L = liouvillian(sys)
    J = recycling_superoperator(sys, channels)
    n = L.shape[0]
    N = n_max + 1
    G = np.zeros((N * n, N * n), dtype=complex)
    for k in range(N):
        G[k * n:(k + 1) * n, k * n:(k + 1) * n] = L - J
        if k > 0:
            G[k * n:(k + 1) * n, (k - 1) * n:k * n] = J
    x0 = np.zeros(N * n, dtype=complex)
    x0[:n] = hb.vec(hb.as_operator(rho0))
    xs = propagate(G, x0, times)
    d = sys.dim
    rho_n = np.stack([_vec_stack_to_ops(xs[:, k * n:(k + 1) * n], d) for k in range(N)])
    total = np.real(np.trace(rho_n, axis1=-2, axis2=-1)).sum(axis=0)
    return HierarchyResult(times, rho_n, bool(np.any(total < 1 - 1e-4)))


def spectrum_fft(series: CorrelationSeries, complex_output: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """One-sided spectrum S(w) = int C(tau) e^{i w tau} dtau over all tau.

    The lag series is extended to negative lags by C(-tau) = C(tau)^*; the
    returned frequencies are angular, ``w_k = 2 pi k / (M dtau)``. With
    ``complex_output`` the (numerically zero) imaginary part is kept.
    """
    lags = np.asarray(series.lags, dtype=float)
    if lags.size < 2 or lags[0] != 0.0:
        raise ValueError("spectrum needs lags starting at 0")
    d = np.diff(lags)
    if np.max(np.abs(d - d[0])) > 1e-9 * d[0]:
        raise ValueError("spectrum needs uniformly spaced lags")
    dtau = d[0]
    v = np.asarray(series.values, dtype=complex)
    x = np.concatenate([v, np.conj(v[:0:-1])])
    M = x.size
    S = dtau * M * np.fft.ifft(x)
    if np.max(np.abs(S.imag)) > 1e-8 * max(1.0, np.max(np.abs(S.real))):
        raise ArithmeticError("spectrum of a Hermitian-symmetric series is not real")
    half = M // 2 + 1
    omega = 2.0 * np.pi * np.arange(half) / (M * dtau)
    return omega, (S[:half] if complex_output else S.real[:half])
