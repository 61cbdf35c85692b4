"""Command-line front end.

    qtraj simulate  CONFIG [--seed N] [--workers N] [--output DIR] [--plot]
    qtraj homodyne  CONFIG ...
    qtraj master    CONFIG ...
    qtraj correlate CONFIG ...
    qtraj counting  CONFIG ...
    qtraj waiting   CONFIG ...
    qtraj replay    MANIFEST [--workers N] [--output DIR]

Exit status: 0 on success, 1 on I/O failure, 2 on configuration errors,
3 when a numerical guard trips (Fock truncation, non-unique steady state, ...).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys as _sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from . import diffusion_engine as de
from . import hilbert as hb
from . import jump_engine as je
from .config import RunConfig, parse_config, serialize, to_dict, from_dict
from .errors import ConfigError, QTrajError
from .model import OpenSystem, check_fock_truncation

COMMANDS = {
    "simulate": "trajectories",
    "homodyne": "homodyne",
    "master": "master",
    "correlate": "correlate",
    "counting": "counting",
    "waiting": "waiting",
}

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_GUARD = 0, 1, 2, 3


def fmt(x: float) -> str:
    return repr(float(x))


# -- observables ----------------------------------------------------------------


def observable_operator(sys: OpenSystem, name: str) -> np.ndarray:
    if name in ("sigma_minus", "sigma_plus", "x"):
        if not sys.channels:
            raise ConfigError(f"observable {name!r} needs a model with a jump channel")
        c = sys.channels[0].op
        return {"sigma_minus": c, "sigma_plus": hb.dag(c), "x": c + hb.dag(c)}[name]
    if name == "number":
        nf, na = sys.meta["fock_levels"], sys.meta["atom_dim"]
        a = hb.destroy(nf)
        return np.kron(hb.dag(a) @ a, np.eye(na))
    raise ConfigError(f"{name!r} is not an operator observable")


def observable_columns(sys: OpenSystem, names, rho: np.ndarray) -> tuple[list[str], list[np.ndarray]]:
    """Header names and real-valued columns for a density-matrix series ``rho[t]``."""
    header: list[str] = []
    cols: list[np.ndarray] = []
    for name in names:
        if name == "populations":
            diag = np.real(np.diagonal(rho, axis1=1, axis2=2))
            for k, label in enumerate(sys.labels):
                header.append(f"pop_{label}")
                cols.append(diag[:, k])
        elif name == "entropy":
            header.append("entropy")
            cols.append(np.array([hb.von_neumann_entropy(r) for r in rho]))
        else:
            A = observable_operator(sys, name)
            vals = np.einsum("ij,tji->t", A, rho)
            if hb.is_hermitian(A):
                header.append(name)
                cols.append(vals.real)
            else:
                header += [f"{name}_re", f"{name}_im"]
                cols += [vals.real, vals.imag]
    return header, cols


# -- writers --------------------------------------------------------------------


def table_text(header: list[str], cols: list[np.ndarray], fmt_name: str) -> str:
    rows = list(zip(*cols))
    if fmt_name == "json":
        doc = {"columns": header,
               "rows": [[float(v) if np.isfinite(v) else None for v in r] for r in rows]}
        return json.dumps(doc) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


# -- tasks ------------------------------------------------------------------------


def initial_state(cfg: RunConfig, sys: OpenSystem) -> np.ndarray:
    if cfg.initial_state.label is not None:
        return hb.basis(sys.dim, sys.labels.index(cfg.initial_state.label))
    psi = np.array([complex(re, im) for re, im in cfg.initial_state.amplitudes])
    return psi / np.linalg.norm(psi)


def _grid(cfg: RunConfig) -> np.ndarray:
    return np.linspace(0.0, cfg.solver.t_max, cfg.solver.n_grid)


def _run_trajectories(cfg, sys, psi0, out: Path) -> list[str]:
    s = cfg.solver
    tcfg = je.TrajectoryConfig(s.t_max, _grid(cfg), s.dt_int, s.norm_tol, s.seed)
    recs = je.simulate_ensemble(sys, psi0, tcfg, s.n_traj, workers=s.workers)
    rho = je.ensemble_density(recs).rho
    check_fock_truncation(sys, rho)
    header, cols = observable_columns(sys, cfg.observables, rho)
    name = f"trajectories.{cfg.output.format}"
    _write(out / name, table_text(["time"] + header, [tcfg.grid] + cols, cfg.output.format))
    ev_t, ev_j, ev_k = [], [], []
    for k, rec in enumerate(recs):
        for e in rec.events:
            ev_k.append(k)
            ev_t.append(e.time)
            ev_j.append(e.channel)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trajectory", "time", "channel"])
    for k, t, j in zip(ev_k, ev_t, ev_j):
        w.writerow([k, fmt(t), sys.channels[j].label])
    _write(out / "events.csv", buf.getvalue())
    return [name, "events.csv"]


def _run_homodyne(cfg, sys, psi0, out: Path) -> list[str]:
    s = cfg.solver
    hcfg = de.HomodyneConfig(s.t_max, _grid(cfg), s.dt, s.seed, s.channel)
    recs = de.simulate_homodyne_ensemble(sys, psi0, hcfg, s.n_traj, workers=s.workers)
    rho, _ = de.ensemble_density(recs)
    stats = de.homodyne_statistics(recs)
    header, cols = observable_columns(sys, cfg.observables, rho)
    # current bins start at grid[k]; the final grid time has no bin
    cur = np.append(stats.mean, np.nan)
    cur_se = np.append(stats.stderr, np.nan)
    name = f"homodyne.{cfg.output.format}"
    _write(out / name, table_text(["time"] + header + ["current", "current_se"],
                                  [hcfg.grid] + cols + [cur, cur_se], cfg.output.format))
    return [name]


def _run_master(cfg, sys, psi0, out: Path) -> list[str]:
    grid = _grid(cfg)
    rho = an.master_solve(sys, hb.projector(psi0), grid)
    check_fock_truncation(sys, rho)
    header, cols = observable_columns(sys, cfg.observables, rho)
    name = f"master.{cfg.output.format}"
    _write(out / name, table_text(["time"] + header, [grid] + cols, cfg.output.format))
    return [name]


def _run_correlate(cfg, sys, psi0, out: Path) -> list[str]:
    s = cfg.solver
    lags = _grid(cfg)
    A = observable_operator(sys, s.corr_a)
    B = observable_operator(sys, s.corr_b)
    header, cols = ["lag"], [lags]
    if s.method in ("oracle", "both"):
        rho_ss = an.steady_state(sys)
        orc = an.regression_correlation(sys, A, B, rho_ss, lags)
        header += ["oracle_re", "oracle_im"]
        cols += [orc.values.real, orc.values.imag]
    if s.method in ("trajectory", "both"):
        est = je.simulate_correlation(sys, A, B, lags, s.n_traj, s.n_kicks, s.seed, psi0,
                                      s.burn_in, s.dt_int, s.norm_tol, s.workers)
        se = est.stderr if est.stderr is not None else np.full(lags.size, np.nan * (1 + 1j))
        header += ["trajectory_re", "trajectory_im", "trajectory_se_re", "trajectory_se_im"]
        cols += [est.values.real, est.values.imag, se.real, se.imag]
    name = f"correlate.{cfg.output.format}"
    _write(out / name, table_text(header, cols, cfg.output.format))
    return [name]


def _run_counting(cfg, sys, psi0, out: Path) -> list[str]:
    s = cfg.solver
    rho0 = hb.projector(psi0)
    doc: dict = {"horizon": s.t_max}
    P = None
    if s.method in ("oracle", "both"):
        dist = an.counting_oracle(sys, rho0, s.t_max, s.m_max)
        P = dist.probabilities
        doc["oracle"] = {"probabilities": [float(p) for p in P], "mean": dist.mean(),
                         "total": float(P.sum())}
    H = None
    if s.method in ("trajectory", "both"):
        tcfg = je.TrajectoryConfig(s.t_max, np.array([s.t_max]), s.dt_int, s.norm_tol, s.seed)
        recs = je.simulate_ensemble(sys, psi0, tcfg, s.n_traj, workers=s.workers)
        counts = np.array([rec.counts()[-1] for rec in recs])
        H = an.counting_histogram(counts, s.t_max).probabilities
        doc["trajectory"] = {"probabilities": [float(p) for p in H], "n_traj": s.n_traj}
        if P is not None:
            n = max(P.size, H.size)
            doc["total_variation"] = 0.5 * float(
                np.abs(np.pad(P, (0, n - P.size)) - np.pad(H, (0, n - H.size))).sum()
            )
    name = f"counting.{cfg.output.format}"
    if cfg.output.format == "json":
        _write(out / name, json.dumps(doc, indent=2) + "\n")
    else:
        n = max(x.size for x in (P, H) if x is not None)
        header, cols = ["m"], [np.arange(n)]
        for label, x in (("oracle", P), ("trajectory", H)):
            if x is not None:
                header.append(label)
                cols.append(np.pad(x, (0, n - x.size)))
        _write(out / name, table_text(header, cols, "csv"))
    return [name]


def _run_waiting(cfg, sys, psi0, out: Path) -> list[str]:
    grid = _grid(cfg)
    dens = an.waiting_time_oracle(sys, psi0, grid)
    cdf = an.waiting_time_cdf(sys, psi0, grid)
    header = ["time"] + [f"p_{ch.label}" for ch in sys.channels] + ["cdf"]
    cols = [grid] + [dens[:, j] for j in range(sys.n_channels)] + [cdf]
    name = f"waiting.{cfg.output.format}"
    _write(out / name, table_text(header, cols, cfg.output.format))
    return [name]


RUNNERS = {
    "trajectories": _run_trajectories,
    "homodyne": _run_homodyne,
    "master": _run_master,
    "correlate": _run_correlate,
    "counting": _run_counting,
    "waiting": _run_waiting,
}


def run(cfg: RunConfig) -> list[Path]:
    """Execute a validated configuration; returns the files written (manifest last)."""
    sys = cfg.model.build()
    psi0 = initial_state(cfg, sys)
    out = Path(cfg.output.path)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    files = RUNNERS[cfg.task](cfg, sys, psi0, out)
    wall = time.perf_counter() - start
    if cfg.output.plot:
        files.append(emit_plot_script(out / files[0], cfg.task).name)
    manifest = {
        "artifact": "qtraj",
        "version": __version__,
        "task": cfg.task,
        "seed": cfg.solver.seed,
        "model": cfg.model.name,
        "parameters": dict(cfg.model.params),
        "dimension": sys.dim,
        "wall_time_s": wall,
        "files": files,
        "config": to_dict(cfg),
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return [out / f for f in files] + [out / "manifest.json"]


# -- plot scripts -----------------------------------------------------------------


def emit_plot_script(data_path, task: str) -> Path:
    """Write a gnuplot command file next to ``data_path`` that plots its columns."""
    data_path = Path(data_path)
    if task not in RUNNERS:
        raise ValueError(f"unknown task {task!r}")
    if not data_path.exists():
        raise FileNotFoundError(data_path)
    if data_path.suffix != ".csv":
        raise ValueError("plot scripts read CSV data")
    header = data_path.read_text(encoding="utf-8").splitlines()[0].split(",")
    data = data_path.name
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set terminal pngcairo size 900,600",
        f"set output '{data_path.stem}.png'",
    ]

    def col(name):
        return header.index(name) + 1

    if task == "trajectories":
        pops = [h for h in header if h.startswith("pop_")]
        y = pops[-1] if pops else header[1]
        lines += ["set xlabel 'time'", f"set ylabel '{y}'",
                  f"plot '{data}' using {col('time')}:{col(y)} with lines,"
                  f" 'events.csv' using 2:(0) with points pt 7 title 'events'"]
    elif task == "counting":
        lines += ["set style fill solid", "set boxwidth 0.8", "set xlabel 'm'",
                  "set ylabel 'P_m'",
                  f"plot '{data}' using {col('m')}:{col(header[1])} with boxes"]
    elif task == "correlate":
        pairs = [h for h in header if h.endswith("_re") or h.endswith("_im")]
        pairs = [h for h in pairs if "_se_" not in h]
        plots = ", ".join(f"'{data}' using 1:{col(h)} with lines" for h in pairs)
        lines += ["set xlabel 'lag'", f"plot {plots}"]
    else:
        plots = ", ".join(f"'{data}' using 1:{k + 1} with lines" for k in range(1, len(header)))
        lines += ["set xlabel 'time'", f"plot {plots}"]
    path = data_path.with_suffix(".gp")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# -- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qtraj", description="Quantum trajectory simulations and oracles.")
    p.add_argument("--version", action="version", version=f"qtraj {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for cmd in list(COMMANDS) + ["replay"]:
        sp = sub.add_parser(cmd)
        sp.add_argument("config", help="manifest.json" if cmd == "replay" else "JSON configuration")
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--output", default=None, help="output directory")
        if cmd != "replay":
            sp.add_argument("--seed", type=int, default=None)
            sp.add_argument("--plot", action="store_true", help="also write a gnuplot script")
    return p


def load(args) -> RunConfig:
    text = Path(args.config).read_text(encoding="utf-8")
    if args.command == "replay":
        try:
            doc = json.loads(text)["config"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"not a run manifest: {exc}") from exc
        cfg = from_dict(doc)
        return cfg.with_overrides(workers=args.workers, path=args.output)
    cfg = parse_config(text, COMMANDS[args.command])
    cfg = cfg.with_overrides(seed=args.seed, workers=args.workers, path=args.output)
    if args.plot:
        cfg = replace(cfg, output=replace(cfg.output, plot=True))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args)
        if cfg.solver.workers < 1:
            raise ConfigError("--workers must be >= 1")
        dim = cfg.model.build().dim
        print(f"qtraj {cfg.task}: model {cfg.model.name} (dimension {dim}), seed {cfg.solver.seed}",
              file=_sys.stderr)
        print(serialize(cfg), end="", file=_sys.stderr)
        files = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except QTrajError as exc:
        print(f"numerical guard: {exc}", file=_sys.stderr)
        return EXIT_GUARD
    except OSError as exc:
        print(f"i/o error: {exc}", file=_sys.stderr)
        return EXIT_IO
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
