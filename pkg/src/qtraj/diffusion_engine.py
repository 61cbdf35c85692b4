"""Homodyne unraveling: Euler-Maruyama integration of the normalized diffusive SSE.

With ``C = sqrt(rate) c`` and ``x = C + C^+`` each step applies

    dpsi = [-i H - (C^+C - <x> C + <x>^2 / 4) / 2] psi dt + (C - <x>/2) psi dW

and renormalizes. The recorded current is ``I = <x> + dW/dt`` with ``<x>``
taken at the start of the step.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Sequence

import numpy as np
import scipy.integrate

from . import hilbert as hb
from .model import OpenSystem
from .streams import parallel_map, stream

# records integrated together; fixed so results do not depend on worker count
CHUNK = 250
# noise is drawn per record in blocks of this many steps
NOISE_BLOCK = 1024


@dataclass(frozen=True, eq=False)
class HomodyneConfig:
    """Fixed-step discretization of a homodyne run.

    Grid times must be integer multiples of ``dt``; the current is reported
    as the average of the per-step currents over each grid interval.
    """

    t_max: float
    grid: np.ndarray
    dt: float
    seed: int = 0
    channel: int = 0

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        if not (0 < self.dt <= self.t_max):
            raise ValueError("need 0 < dt <= t_max")
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be a strictly increasing sequence of at least 2 times")
        if grid[0] < 0 or grid[-1] > self.t_max * (1 + 1e-12):
            raise ValueError("grid must lie inside [0, t_max]")
        steps = grid / self.dt
        if np.any(np.abs(steps - np.round(steps)) > 1e-6):
            raise ValueError("grid times must be multiples of dt")

    @property
    def grid_steps(self) -> np.ndarray:
        return np.round(self.grid / self.dt).astype(np.int64)

    @classmethod
    def uniform(cls, t_max: float, n_intervals: int, dt: float, **kw) -> "HomodyneConfig":
        return cls(t_max, np.linspace(0.0, t_max, n_intervals + 1), dt, **kw)

    def check_rate(self, sys: OpenSystem) -> None:
        rate = max((ch.rate for ch in sys.channels), default=0.0)
        if rate > 0 and self.dt > 1e-2 / rate * (1 + 1e-9):
            raise ValueError(f"dt={self.dt} exceeds 1e-2 / largest rate ({1e-2 / rate})")


@dataclass(frozen=True, eq=False)
class HomodyneRecord:
    """One homodyne realization.

    ``states[k]`` is the conditional state at ``grid[k]``; ``current[k]`` is
    the mean current over ``[grid[k], grid[k+1])``; ``dW`` holds the Wiener
    increments of every step when requested.
    """

    config: HomodyneConfig
    states: np.ndarray
    current: np.ndarray
    dW: np.ndarray | None
    stream: int = 0

    @property
    def times(self) -> np.ndarray:
        return self.config.grid

    @property
    def current_times(self) -> np.ndarray:
        return self.config.grid[:-1]


def diffusive_step(psi, sys: OpenSystem, j: int, dt: float, dW: float) -> np.ndarray:
    """One normalized Euler-Maruyama step homodyning channel ``j``.

    Other channels only contribute their damping term to the drift.
    """
    psi = hb.as_state(psi)
    if not np.isfinite(dW):
        raise ValueError("dW must be finite")
    C = sys.channels[j].absorbed
    Cpsi = C @ psi
    x = 2.0 * np.vdot(psi, Cpsi).real
    drift = -1j * (sys.hamiltonian @ psi)
    for ch in sys.channels:
        Ck = ch.absorbed
        drift -= 0.5 * (hb.dag(Ck) @ (Ck @ psi))
    drift += 0.5 * x * Cpsi - 0.125 * x * x * psi
    new = psi + drift * dt + (Cpsi - 0.5 * x * psi) * dW
    return new / np.linalg.norm(new)


def _rows_matvec(M: np.ndarray, psi: np.ndarray) -> np.ndarray:
    # row-wise M @ psi[n]; elementwise so each row is independent of the batch size
    out = psi[:, 0:1] * M[:, 0]
    for k in range(1, M.shape[1]):
        out = out + psi[:, k:k + 1] * M[:, k]
    return out


def _integrate_chunk(sys: OpenSystem, psi0: np.ndarray, cfg: HomodyneConfig,
                     indices: Sequence[int], keep_noise: bool):
    n = len(indices)
    d = sys.dim
    C = sys.channels[cfg.channel].absorbed
    K = -1j * sys.hamiltonian - 0.5 * (hb.dag(C) @ C)
    dt = cfg.dt
    sqdt = np.sqrt(dt)
    marks = cfg.grid_steps
    n_steps = int(marks[-1])
    rngs = [stream(cfg.seed, i) for i in indices]

    states = np.empty((n, marks.size, d), dtype=complex)
    current = np.zeros((n, marks.size - 1))
    noise_all = np.empty((n, n_steps)) if keep_noise else None
    psi = np.tile(psi0, (n, 1))
    mark = 0
    if marks[0] == 0:
        states[:, 0] = psi
        mark = 1
    noise = np.empty((n, 0))
    for s in range(n_steps):
        b = s % NOISE_BLOCK
        if b == 0:
            size = min(NOISE_BLOCK, n_steps - s)
            noise = np.stack([rng.standard_normal(size) for rng in rngs]) * sqdt
            if keep_noise:
                noise_all[:, s:s + size] = noise
        dW = noise[:, b]
        Cpsi = _rows_matvec(C, psi)
        x = 2.0 * np.sum((np.conj(psi) * Cpsi).real, axis=1)
        seg = np.searchsorted(marks, s, side="right") - 1
        if 0 <= seg < marks.size - 1:
            current[:, seg] += x + dW / dt
        xc = x[:, None]
        new = (psi + (_rows_matvec(K, psi) + 0.5 * xc * Cpsi - 0.125 * xc * xc * psi) * dt
               + (Cpsi - 0.5 * xc * psi) * dW[:, None])
        psi = new / np.sqrt(np.sum(np.abs(new) ** 2, axis=1))[:, None]
        if mark < marks.size and s + 1 == marks[mark]:
            states[:, mark] = psi
            mark += 1
    current /= np.diff(marks)[None, :]
    return [
        HomodyneRecord(cfg, states[r], current[r], None if noise_all is None else noise_all[r], indices[r])
        for r in range(n)
    ]


def _check_system(sys: OpenSystem, cfg: HomodyneConfig) -> None:
    if not 0 <= cfg.channel < sys.n_channels:
        raise ValueError(f"channel {cfg.channel} out of range")
    if sys.n_channels != 1:
        raise ValueError("homodyne runs need exactly one (the homodyned) channel")
    cfg.check_rate(sys)


def simulate_homodyne_trajectory(sys: OpenSystem, psi0, cfg: HomodyneConfig,
                                 stream_index: int = 0, keep_noise: bool = True) -> HomodyneRecord:
    _check_system(sys, cfg)
    psi0 = hb.as_state(psi0)
    psi0 = psi0 / np.linalg.norm(psi0)
    return _integrate_chunk(sys, psi0, cfg, [stream_index], keep_noise)[0]


def _chunk_task(sys, psi0, cfg, keep_noise, chunk):
    return _integrate_chunk(sys, psi0, cfg, chunk, keep_noise)


def simulate_homodyne_ensemble(sys: OpenSystem, psi0, cfg: HomodyneConfig, n_records: int,
                               workers: int = 1, keep_noise: bool = False) -> list[HomodyneRecord]:
    """Records on streams ``0 .. n_records - 1``, integrated in fixed-size batches."""
    if n_records < 1:
        raise ValueError("n_records must be >= 1")
    _check_system(sys, cfg)
    psi0 = hb.as_state(psi0)
    psi0 = psi0 / np.linalg.norm(psi0)
    chunks = [list(range(i, min(i + CHUNK, n_records))) for i in range(0, n_records, CHUNK)]
    task = partial(_chunk_task, sys, psi0, cfg, keep_noise)
    out: list[HomodyneRecord] = []
    for part in parallel_map(task, chunks, workers):
        out.extend(part)
    return out


# -- ensemble statistics ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HomodyneStatistics:
    """Ensemble mean current per bin and the two-time estimate mean[I(t1) I(t2)].

    The diagonal of ``correlation`` is NaN: the equal-time product contains the
    delta shot-noise term, whose weight ``shot_noise`` is analytic.
    """

    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    correlation: np.ndarray
    correlation_stderr: np.ndarray
    n_records: int
    shot_noise: float = 1.0


def _currents(records: Sequence[HomodyneRecord]) -> np.ndarray:
    if not records:
        raise ValueError("empty ensemble")
    grid = records[0].times
    for rec in records[1:]:
        if rec.times.shape != grid.shape or np.any(rec.times != grid):
            raise ValueError("records do not share a grid")
    return np.stack([rec.current for rec in records])


def homodyne_statistics(records: Sequence[HomodyneRecord]) -> HomodyneStatistics:
    I = _currents(records)
    n = I.shape[0]
    mean = I.mean(axis=0)
    se = I.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    prod = I[:, :, None] * I[:, None, :]
    corr = prod.mean(axis=0)
    corr_se = prod.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(corr)
    np.fill_diagonal(corr, np.nan)
    np.fill_diagonal(corr_se, np.nan)
    return HomodyneStatistics(records[0].current_times, mean, se, corr, corr_se, n)


def ensemble_density(records: Sequence[HomodyneRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Mean of |psi_c><psi_c| per grid time and elementwise standard errors (re + i im)."""
    if not records:
        raise ValueError("empty ensemble")
    psi = np.stack([rec.states for rec in records])
    proj = psi[:, :, :, None] * np.conj(psi)[:, :, None, :]
    n = proj.shape[0]
    se = (proj.real.std(axis=0, ddof=1) + 1j * proj.imag.std(axis=0, ddof=1)) / np.sqrt(n) \
        if n > 1 else np.zeros(proj.shape[1:], dtype=complex)
    return proj.mean(axis=0), se


def stationary_current_correlation(records: Sequence[HomodyneRecord], t_burn: float, lag_bins):
    """Time-and-ensemble estimate of mean[I(t) I(t + k * bin)] for integer ``lag_bins`` >= 1.

    Each record contributes its average over origins ``t >= t_burn``; the
    standard error is taken across records. Returns ``(lags, values, stderr)``.
    """
    I = _currents(records)
    t = records[0].current_times
    width = np.diff(records[0].times)
    if np.max(np.abs(width - width[0])) > 1e-9 * width[0]:
        raise ValueError("stationary correlation needs a uniform grid")
    lag_bins = np.asarray(lag_bins, dtype=int)
    if np.any(lag_bins < 1):
        raise ValueError("lags must be at least one bin (the equal-time term holds shot noise)")
    start = int(np.searchsorted(t, t_burn - 1e-12))
    per_record = []
    for k in lag_bins:
        stop = I.shape[1] - k
        if stop <= start:
            raise ValueError(f"lag of {k} bins leaves no stationary origins")
        per_record.append(np.mean(I[:, start:stop] * I[:, start + k:stop + k], axis=1))
    per_record = np.stack(per_record, axis=1)
    n = per_record.shape[0]
    se = per_record.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(lag_bins.size)
    return lag_bins * width[0], per_record.mean(axis=0), se


def binned_correlation_oracle(smooth, lags: np.ndarray, width: float, n_quad: int = 201) -> np.ndarray:
    """Expected product of two currents averaged over bins of ``width`` separated by ``lags``.

    ``smooth(tau)`` evaluates the smooth correlation at lags ``tau >= 0``;
    the bin average is the triangular-kernel mean over ``[L - width, L + width]``.
    """
    u = np.linspace(-width, width, n_quad)
    w = (1.0 - np.abs(u) / width) / width
    out = []
    for L in np.atleast_1d(lags):
        if L < width - 1e-12:
            raise ValueError("bins must not overlap")
        vals = np.asarray(smooth(np.maximum(L + u, 0.0)))
        out.append(scipy.integrate.trapezoid(w * vals, u))
    return np.array(out)
