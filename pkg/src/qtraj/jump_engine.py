"""Photon-counting unraveling: quantum-jump trajectories of the conditional wave function.

Between counts the unnormalized state evolves under the non-Hermitian
effective Hamiltonian; the next count time is found where the squared norm
has decayed to a uniform variate ``1 - r``, the channel is drawn in
proportion to ``rate_j * ||c_j psi||**2`` and the state jumps to
``c_j psi / ||c_j psi||``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np
import scipy.linalg

from . import hilbert as hb
from .errors import NoJumpPossibleError, ZeroAmplitudeJumpError
from .model import OpenSystem, effective_hamiltonian
from .streams import parallel_map, stream

# eigenbasis of H_eff is only used when it is this well conditioned
_MAX_EIGEN_COND = 1e6


class NoJumpPropagator:
    """Cached exp(-i H_eff t) for a time-independent system.

    Uses the eigen-decomposition of ``H_eff`` when it is well conditioned
    and falls back to Pade exponentials for (near-)defective generators.
    """

    def __init__(self, heff: np.ndarray):
        self.heff = hb.as_operator(heff)
        self.dim = self.heff.shape[0]
        lam, V = np.linalg.eig(self.heff)
        cond = np.linalg.cond(V)
        self.eigen = bool(np.isfinite(cond) and cond < _MAX_EIGEN_COND)
        if self.eigen:
            self.lam = lam
            self.V = V
            self.Vinv = np.linalg.inv(V)
            self._gram = hb.dag(V) @ V

    @classmethod
    def for_system(cls, sys: OpenSystem) -> "NoJumpPropagator":
        return cls(effective_hamiltonian(sys))

    def apply(self, psi: np.ndarray, t: float) -> np.ndarray:
        if self.eigen:
            return self.V @ (np.exp(-1j * self.lam * t) * (self.Vinv @ psi))
        return scipy.linalg.expm(-1j * t * self.heff) @ psi

    def apply_many(self, psi: np.ndarray, ts: np.ndarray) -> np.ndarray:
        """Rows are exp(-i H_eff t) psi for each t in ``ts``."""
        ts = np.asarray(ts, dtype=float)
        if ts.size == 0:
            return np.zeros((0, self.dim), dtype=complex)
        if self.eigen:
            a = self.Vinv @ psi
            return (np.exp(-1j * np.outer(ts, self.lam)) * a) @ self.V.T
        return np.array([self.apply(psi, t) for t in ts])

    def survival(self, psi: np.ndarray):
        """Return f(t) = ||exp(-i H_eff t) psi||**2 as a fast scalar function."""
        if not self.eigen:
            return lambda t: float(np.vdot(v := self.apply(psi, t), v).real)
        a = self.Vinv @ psi
        w = (np.conj(a)[:, None] * a[None, :] * self._gram).ravel()
        nu = (1j * (np.conj(self.lam)[:, None] - self.lam[None, :])).ravel()
        return lambda t: float(np.dot(w, np.exp(nu * t)).real)


@dataclass(frozen=True, eq=False)
class TrajectoryConfig:
    """Discretization of a jump-trajectory run.

    ``dt_int`` is the initial monitoring step of the norm search (it only
    affects cost, not accuracy); ``norm_tol`` bounds ``|1 - ||psi||**2 - r|``
    at each located jump.
    """

    t_max: float
    grid: np.ndarray
    dt_int: float = 0.05
    norm_tol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        if not (0 < self.dt_int <= self.t_max):
            raise ValueError("need 0 < dt_int <= t_max")
        if not (0 < self.norm_tol <= 1e-6):
            raise ValueError("norm_tol must lie in (0, 1e-6]")
        if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be a non-empty, strictly increasing sequence")
        if grid[0] < 0 or grid[-1] > self.t_max:
            raise ValueError("grid must lie inside [0, t_max]")

    @classmethod
    def uniform(cls, t_max: float, n_points: int, **kw) -> "TrajectoryConfig":
        return cls(t_max, np.linspace(0.0, t_max, n_points), **kw)


@dataclass(frozen=True)
class JumpEvent:
    time: float
    channel: int
    pre_jump_norm2: float


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    config: TrajectoryConfig
    events: tuple[JumpEvent, ...]
    states: np.ndarray
    seed: int
    stream: int = 0

    @property
    def times(self) -> np.ndarray:
        return self.config.grid

    def event_times(self) -> np.ndarray:
        return np.array([e.time for e in self.events], dtype=float)

    def event_channels(self) -> np.ndarray:
        return np.array([e.channel for e in self.events], dtype=int)

    def counts(self, times=None, channels: Sequence[int] | None = None) -> np.ndarray:
        """Number of events with time <= t for each t (default: the grid)."""
        t = self.times if times is None else np.asarray(times, dtype=float)
        ev = self.event_times()
        if channels is not None:
            ev = ev[np.isin(self.event_channels(), list(channels))]
        return np.searchsorted(ev, t, side="right")

    def waits(self) -> np.ndarray:
        """Complete inter-event intervals, starting with the first count since t = 0."""
        return np.diff(np.concatenate([[0.0], self.event_times()]))


@dataclass(frozen=True, eq=False)
class EnsembleEstimate:
    """Ensemble-averaged density matrices on the grid.

    ``stderr`` holds the standard error of each matrix element, real and
    imaginary parts separately (as the real/imag parts of a complex array).
    ``obs_mean``/``obs_stderr`` are filled for the designated observable.
    """

    times: np.ndarray
    rho: np.ndarray
    n_traj: int
    stderr: np.ndarray
    obs_mean: np.ndarray | None = None
    obs_stderr: np.ndarray | None = None


# -- elementary operations ------------------------------------------------------


def propagate_nojump(psi, sys: OpenSystem, t0: float, t1: float,
                     propagator: NoJumpPropagator | None = None) -> np.ndarray:
    """Unnormalized exp(-i H_eff (t1 - t0)) psi."""
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    prop = propagator or NoJumpPropagator.for_system(sys)
    return prop.apply(hb.as_state(psi), t1 - t0)


def sample_waiting_time(
    psi,
    sys: OpenSystem,
    t_start: float,
    t_max: float,
    r: float,
    dt_int: float = 0.05,
    norm_tol: float = 1e-10,
    propagator: NoJumpPropagator | None = None,
) -> tuple[float | None, np.ndarray]:
    """Locate the next count time by norm monitoring.

    Returns ``(t, psi_tilde)`` with ``1 - ||psi_tilde||**2 = r`` to
    ``norm_tol``, or ``(None, psi_tilde(t_max))`` when the survival
    probability stays above ``1 - r`` until ``t_max``. The bracket is found
    by doubling the step from ``dt_int``; the root by bisection.
    """
    if not 0.0 < r < 1.0:
        raise ValueError("r must lie in (0, 1)")
    prop = propagator or NoJumpPropagator.for_system(sys)
    psi = hb.as_state(psi)
    surv = prop.survival(psi)
    target = 1.0 - r
    horizon = t_max - t_start
    lo, s_lo, h = 0.0, 1.0, dt_int
    while True:
        hi = min(lo + h, horizon)
        s_hi = surv(hi)
        if s_hi > s_lo + 1e-12:
            raise ArithmeticError(f"no-jump norm increased from {s_lo} to {s_hi}")
        if s_hi <= target:
            break
        if hi >= horizon:
            return None, prop.apply(psi, horizon)
        lo, s_lo = hi, s_hi
        h *= 2.0
    if abs(s_hi - target) <= norm_tol:
        t = hi
    else:
        while True:
            mid = 0.5 * (lo + hi)
            s_mid = surv(mid)
            if abs(s_mid - target) <= norm_tol:
                t = mid
                break
            if s_mid > target:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 4 * np.finfo(float).eps * max(1.0, hi):
                t = hi
                break
    return t_start + t, prop.apply(psi, t)


def channel_weights(psi_tilde: np.ndarray, sys: OpenSystem) -> np.ndarray:
    return np.array([np.vdot(v := C @ psi_tilde, v).real for C in sys.jump_operators()])


def select_channel(psi_tilde, sys: OpenSystem, u: float) -> int:
    """Draw channel j with probability rate_j ||c_j psi||^2 / sum_k (...) by inverting u."""
    w = channel_weights(hb.as_state(psi_tilde), sys)
    total = w.sum()
    if not total > 0:
        raise NoJumpPossibleError("all channel weights vanish; no jump is possible")
    cum = np.cumsum(w)
    j = int(np.searchsorted(cum, u * total, side="right"))
    return min(j, len(w) - 1)


def apply_jump(psi_tilde, sys: OpenSystem, j: int) -> np.ndarray:
    """Normalized c_j psi / ||c_j psi||."""
    phi = sys.channels[j].op @ hb.as_state(psi_tilde)
    norm = np.linalg.norm(phi)
    if norm == 0.0:
        raise ZeroAmplitudeJumpError(f"channel {j} annihilates the state")
    return phi / norm


def _uniform_open(rng: np.random.Generator) -> float:
    while True:
        r = rng.random()
        if r > 0.0:
            return r


# -- trajectories -----------------------------------------------------------------


def simulate_trajectory(
    sys: OpenSystem,
    psi0,
    cfg: TrajectoryConfig,
    stream_index: int = 0,
    propagator: NoJumpPropagator | None = None,
) -> TrajectoryRecord:
    """One quantum-jump realization with normalized states stored on ``cfg.grid``.

    The run is a pure function of ``(sys, psi0, cfg, stream_index)``.
    """
    psi = hb.as_state(psi0)
    if abs(np.vdot(psi, psi).real - 1.0) > 1e-12:
        raise ValueError("initial state must be normalized")
    prop = propagator or NoJumpPropagator.for_system(sys)
    rng = stream(cfg.seed, stream_index)
    grid = cfg.grid
    states = np.empty((grid.size, sys.dim), dtype=complex)
    events: list[JumpEvent] = []
    t = 0.0
    k = int(np.searchsorted(grid, 0.0, side="left"))
    while True:
        r = _uniform_open(rng)
        t_jump, psi_t = sample_waiting_time(
            psi, sys, t, cfg.t_max, r, cfg.dt_int, cfg.norm_tol, prop
        )
        end = grid.size if t_jump is None else int(np.searchsorted(grid, t_jump, side="left"))
        if end > k:
            seg = prop.apply_many(psi, grid[k:end] - t)
            states[k:end] = seg / np.linalg.norm(seg, axis=1, keepdims=True)
            k = end
        if t_jump is None:
            break
        j = select_channel(psi_t, sys, rng.random())
        events.append(JumpEvent(t_jump, j, float(np.vdot(psi_t, psi_t).real)))
        psi = apply_jump(psi_t, sys, j)
        t = t_jump
    return TrajectoryRecord(cfg, tuple(events), states, cfg.seed, stream_index)


def _trajectory_task(sys, psi0, cfg, prop, index):
    return simulate_trajectory(sys, psi0, cfg, index, prop)


def simulate_ensemble(
    sys: OpenSystem,
    psi0,
    cfg: TrajectoryConfig,
    n_traj: int,
    workers: int = 1,
    first_stream: int = 0,
) -> list[TrajectoryRecord]:
    """Independent trajectories on streams ``first_stream .. first_stream + n_traj - 1``."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    prop = NoJumpPropagator.for_system(sys)
    task = partial(_trajectory_task, sys, hb.as_state(psi0), cfg, prop)
    return parallel_map(task, range(first_stream, first_stream + n_traj), workers)


def _stack(records: Sequence[TrajectoryRecord]) -> np.ndarray:
    if not records:
        raise ValueError("empty ensemble")
    grid = records[0].times
    for rec in records[1:]:
        if rec.times.shape != grid.shape or np.any(rec.times != grid):
            raise ValueError("records do not share a grid")
    return np.stack([rec.states for rec in records])


def _element_stderr(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    if n < 2:
        return np.zeros(x.shape[1:], dtype=complex)
    se_re = x.real.std(axis=0, ddof=1) / np.sqrt(n)
    se_im = x.imag.std(axis=0, ddof=1) / np.sqrt(n)
    return se_re + 1j * se_im


def ensemble_density(records: Sequence[TrajectoryRecord], observable=None) -> EnsembleEstimate:
    """Average |psi_c(t)><psi_c(t)| over realizations."""
    psi = _stack(records)
    proj = psi[:, :, :, None] * np.conj(psi)[:, :, None, :]
    rho = proj.mean(axis=0)
    obs_mean = obs_se = None
    if observable is not None:
        A = hb.as_operator(observable)
        vals = np.einsum("nti,ij,ntj->nt", np.conj(psi), A, psi)
        obs_mean = vals.mean(axis=0)
        obs_se = _element_stderr(vals)
    return EnsembleEstimate(records[0].times, rho, len(records), _element_stderr(proj), obs_mean, obs_se)


def photon_resolved_density(records: Sequence[TrajectoryRecord], n: int):
    """Photon-number-resolved density on the grid.

    Returns ``(rho_n, p_n, rho_n_stderr)`` where ``rho_n[t]`` is the
    unnormalized density built from trajectories with exactly ``n`` counts
    in ``(0, t]`` and ``p_n[t]`` is the fraction of such trajectories.
    Summing ``rho_n`` over all observed ``n`` reproduces the ensemble mean.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    psi = _stack(records)
    counts = np.stack([rec.counts() for rec in records])
    mask = (counts == n).astype(float)
    proj = psi[:, :, :, None] * np.conj(psi)[:, :, None, :]
    contrib = proj * mask[:, :, None, None]
    return contrib.mean(axis=0), mask.mean(axis=0), _element_stderr(contrib)


# -- correlation functions ----------------------------------------------------------


def _default_burn_in(sys: OpenSystem) -> float:
    rates = [ch.rate * np.linalg.norm(ch.op, 2) ** 2 for ch in sys.channels]
    rates = [g for g in rates if g > 0]
    if not rates:
        raise ValueError("correlation simulation needs at least one damped channel")
    return 20.0 / min(rates)


def correlation_pair_trajectory(
    sys: OpenSystem,
    psi0,
    A,
    B,
    lags: np.ndarray,
    n_kicks: int,
    burn_in: float,
    rng: np.random.Generator,
    dt_int: float = 0.05,
    norm_tol: float = 1e-10,
    propagator: NoJumpPropagator | None = None,
) -> np.ndarray:
    """Kicked-pair estimates <psi_c(t)|A|psi_c^+(t)> / ||psi_c(t)||^2 for ``n_kicks`` windows.

    The trajectory is relaxed for ``burn_in``; then at each kick time the
    partner state is set to ``B psi_c``, both states evolve with the same
    no-jump propagator and receive the same jumps (dictated by ``psi_c``),
    and the next kick follows when the lag window is exhausted.
    Returns an array of shape ``(n_kicks, len(lags))``.
    """
    prop = propagator or NoJumpPropagator.for_system(sys)
    A = hb.as_operator(A)
    B = hb.as_operator(B)
    lags = np.asarray(lags, dtype=float)
    if lags[0] != 0.0 or np.any(np.diff(lags) <= 0):
        raise ValueError("lags must start at 0 and increase")
    horizon = float(lags[-1])
    psi = hb.as_state(psi0)

    def run_until(psi, t, t_end, partner=None, out=None):
        # propagate psi (and the partner) from t to t_end, recording lag samples
        k = 0
        while True:
            t_jump, psi_t = sample_waiting_time(psi, sys, t, t_end, _uniform_open(rng),
                                                dt_int, norm_tol, prop)
            stop = t_end if t_jump is None else t_jump
            if partner is not None:
                end = int(np.searchsorted(lags, stop - t0, side="left"))
                if t_jump is None:
                    end = lags.size
                if end > k:
                    taus = lags[k:end] + t0 - t
                    P = prop.apply_many(psi, taus)
                    Q = prop.apply_many(partner, taus)
                    num = np.einsum("ti,ij,tj->t", np.conj(P), A, Q)
                    out[k:end] = num / np.einsum("ti,ti->t", np.conj(P), P).real
                    k = end
            if t_jump is None:
                psi_end = psi_t / np.linalg.norm(psi_t)
                return psi_end
            j = select_channel(psi_t, sys, rng.random())
            C = sys.channels[j].op
            if partner is not None:
                partner_t = prop.apply(partner, t_jump - t)
                partner = C @ partner_t / np.linalg.norm(C @ psi_t)
            psi = apply_jump(psi_t, sys, j)
            t = t_jump

    t0 = 0.0
    psi = run_until(psi, 0.0, burn_in)
    t0 = burn_in
    out = np.empty((n_kicks, lags.size), dtype=complex)
    for kick in range(n_kicks):
        psi = run_until(psi, t0, t0 + horizon, partner=B @ psi, out=out[kick])
        t0 += horizon
    return out


def _correlation_task(sys, psi0, A, B, lags, n_kicks, burn_in, seed, dt_int, norm_tol, prop, index):
    return correlation_pair_trajectory(sys, psi0, A, B, lags, n_kicks, burn_in,
                                       stream(seed, index), dt_int, norm_tol, prop)


def simulate_correlation(
    sys: OpenSystem,
    A,
    B,
    lags,
    n_traj: int,
    n_kicks: int = 10,
    seed: int = 0,
    psi0=None,
    burn_in: float | None = None,
    dt_int: float = 0.05,
    norm_tol: float = 1e-10,
    workers: int = 1,
):
    """Stationary <A(t0 + tau) B(t0)> from kicked trajectory pairs.

    Kick times are spaced by the lag horizon after a burn-in of ``20 / rate_min``.
    The standard error is computed across trajectories (each one averaged
    over its kicks), so correlations between kicks of one trajectory are
    accounted for.
    """
    from .analysis import CorrelationSeries

    lags = np.asarray(lags, dtype=float)
    psi0 = hb.basis(sys.dim, 0) if psi0 is None else hb.as_state(psi0)
    burn_in = _default_burn_in(sys) if burn_in is None else burn_in
    prop = NoJumpPropagator.for_system(sys)
    task = partial(_correlation_task, sys, psi0, hb.as_operator(A), hb.as_operator(B),
                   lags, n_kicks, burn_in, seed, dt_int, norm_tol, prop)
    per_traj = np.stack([w.mean(axis=0) for w in parallel_map(task, range(n_traj), workers)])
    return CorrelationSeries(
        lags=lags,
        values=per_traj.mean(axis=0),
        provenance="trajectory",
        stderr=_element_stderr(per_traj) if n_traj > 1 else None,
        n_samples=n_traj * n_kicks,
    )


# -- Ito-form updates (single channel) --------------------------------------------


def sse_unnormalized_step(psi, A, B, dt: float, dN: int) -> np.ndarray:
    """[1 + A dt + (B - 1) dN] psi with the Ito rule dN dt = 0."""
    psi = hb.as_state(psi)
    if dN:
        return B @ psi
    return psi + dt * (A @ psi)


def sse_normalized_step(psi, A, B, dt: float, dN: int) -> np.ndarray:
    """Equivalent update of the normalized state.

    psi + [(A - <A + A^+>/2) dt + (B / sqrt(<B^+ B>) - 1) dN] psi, with dN dt = 0.
    """
    psi = hb.as_state(psi)
    if dN:
        return B @ psi / np.sqrt(np.vdot(psi, hb.dag(B) @ B @ psi).real)
    shift = 0.5 * np.vdot(psi, (A + hb.dag(A)) @ psi).real
    return psi + dt * (A @ psi - shift * psi)
