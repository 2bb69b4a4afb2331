"""Sweep runner behind the command line.

Every sweep point is a pure function of ``(config, point index)``: the
channel comes from the config seed and any randomness inside a point from a
seed derived from the config seed and the index. Points can therefore run
in any order on any number of worker processes and still produce the same
bytes once the rows are written back in sweep order.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, render_config
from .mm import mm_solve
from .model import (ChannelStats, PowerAllocation, budget_power, dbm_to_watt, read_coupling,
                    synth_coupling)
from .oracle import MC_RATE_FLOOR, de_vs_mc_report, fd_check, grid_search_re, refsolve_inner
from .rates import mc_rate_approx, mc_rate_exact, metrics

__all__ = [
    "SWEEP_COLUMNS",
    "build_channel",
    "derived_seed",
    "effective_threads",
    "fmt",
    "run_sweep",
    "solve_once",
    "verify",
]

SWEEP_COLUMNS = {
    "pmax": ["pmax_dbm", "re", "se", "ee", "pt_used_w", "mm_iters", "status"],
    "beta": ["beta", "re", "se", "ee", "status"],
    "tradeoff": ["pmax_dbm", "se", "ee", "method", "status"],
    "convergence": ["pmax_dbm", "mm_iter", "re"],
    "multistart": ["pmax_dbm", "re_default", "re_best", "gap", "starts", "status"],
    "rate_compare": ["pmax_dbm", "user", "rate_exact", "rate_approx", "n_samples"],
}
METRICS_COLUMNS = ["se_de", "ee_de", "re_de", "se_mc", "ee_mc", "re_mc",
                   "pt_used_w", "mm_iters", "status"]
VERIFY_COLUMNS = ["check", "kind", "gap", "bound", "result", "detail"]
TRADEOFF_METHODS = ("REOpt", "EEOpt", "SEOpt")


def fmt(v) -> str:
    """CSV text for one cell: floats with 17 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def derived_seed(seed: int, index: int, salt: int = 0) -> int:
    """Independent 32-bit seed for sweep point ``index``."""
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, salt, index]).generate_state(1)[0])


def effective_threads(requested: int | None, cfg: ExperimentConfig | None = None) -> int:
    """Worker count: ``BEAMRE_THREADS`` beats ``requested``, which beats the config."""
    env = os.environ.get("BEAMRE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"BEAMRE_THREADS must be an integer, got {env!r}") from None
    elif requested is not None:
        n = requested
    else:
        n = cfg.threads if cfg is not None else 1
    if n < 1:
        raise ValueError("thread count must be >= 1")
    return n


def build_channel(cfg: ExperimentConfig) -> ChannelStats:
    ch = cfg.channel
    if ch.file is not None:
        stats = read_coupling(ch.file)
        stats.check(cfg.params)
        return stats
    return synth_coupling(cfg.params, ch.pathloss_db, ch.support_fraction, ch.decay,
                          cfg.channel_seed, jitter=ch.jitter)


def _status(state, *values) -> str:
    if not all(math.isfinite(float(v)) for v in values):
        return "failed"
    return state.status


def _random_init(params, rng) -> PowerAllocation:
    lam = rng.dirichlet(np.ones(params.K * params.M)).reshape(params.K, params.M)
    return PowerAllocation(lam * params.Pmax * rng.uniform(0.0, 1.0))


# ---------------------------------------------------------------------------
# per-point workers; each returns (rows, manifest entry)

def _point_pmax(cfg, stats, i, v):
    params = cfg.params.replace(Pmax=dbm_to_watt(v))
    try:
        alloc, st = mm_solve(stats, params, cfg.solver)
        m = metrics(stats, alloc, params)
        status = _status(st, m.re, m.se, m.ee)
        row = [v, m.re, m.se, m.ee, alloc.total, st.ell, status]
    except Exception as exc:  # recorded per point, the sweep goes on
        return [[v, math.nan, math.nan, math.nan, math.nan, 0, "failed"]], \
            {"point": i, "status": "failed", "error": str(exc)}
    return [row], {"point": i, "status": status, "converged": st.converged}


def _point_beta(cfg, stats, i, v):
    params = cfg.params.replace(beta=v)
    try:
        alloc, st = mm_solve(stats, params, cfg.solver)
        m = metrics(stats, alloc, params)
        status = _status(st, m.re, m.se, m.ee)
    except Exception as exc:
        return [[v, math.nan, math.nan, math.nan, "failed"]], \
            {"point": i, "status": "failed", "error": str(exc)}
    return [[v, m.re, m.se, m.ee, status]], {"point": i, "status": status,
                                             "converged": st.converged}


def tradeoff_betas(cfg: ExperimentConfig, params) -> dict:
    """Weights of the three compared designs at one budget."""
    seopt = cfg.sweep.seopt_beta_factor * budget_power(params) / params.W
    return {"REOpt": params.beta, "EEOpt": 0.0, "SEOpt": seopt}


def _point_tradeoff(cfg, stats, i, v):
    base = cfg.params.replace(Pmax=dbm_to_watt(v))
    betas = tradeoff_betas(cfg, base)
    rows, flags = [], {}
    for method in TRADEOFF_METHODS:
        params = base.replace(beta=betas[method])
        try:
            alloc, st = mm_solve(stats, params, cfg.solver)
            m = metrics(stats, alloc, params)
            status = _status(st, m.se, m.ee)
            rows.append([v, m.se, m.ee, method, status])
        except Exception as exc:
            status = "failed"
            rows.append([v, math.nan, math.nan, method, status])
            flags[method + "_error"] = str(exc)
        flags[method] = status
    return rows, {"point": i, "status": flags, "betas": betas}


def _point_convergence(cfg, stats, i, v):
    params = cfg.params.replace(Pmax=dbm_to_watt(v))
    try:
        _, st = mm_solve(stats, params, cfg.solver)
    except Exception as exc:
        return [], {"point": i, "status": "failed", "error": str(exc)}
    rows = [[v, it, re] for it, re in enumerate(st.re_trace)]
    status = _status(st, *st.re_trace)
    return rows, {"point": i, "status": status, "converged": st.converged,
                  "iterations": st.ell}


def _point_multistart(cfg, stats, i, v):
    params = cfg.params.replace(Pmax=dbm_to_watt(v))
    rng = np.random.default_rng(derived_seed(cfg.seed, i, salt=1))
    try:
        _, st = mm_solve(stats, params, cfg.solver)
        default = st.re_trace[-1]
        best = -math.inf
        flags = [st.status]
        for _ in range(cfg.sweep.multistart_count):
            _, s2 = mm_solve(stats, params, cfg.solver, init_alloc=_random_init(params, rng))
            best = max(best, s2.re_trace[-1])
            flags.append(s2.status)
        gap = max(best - default, 0.0) / max(abs(default), MC_RATE_FLOOR)
        status = "failed" if not all(map(math.isfinite, (default, best, gap))) else (
            "converged" if all(f == "converged" for f in flags) else "max_iter")
    except Exception as exc:
        return [[v, math.nan, math.nan, math.nan, cfg.sweep.multistart_count, "failed"]], \
            {"point": i, "status": "failed", "error": str(exc)}
    return [[v, default, best, gap, cfg.sweep.multistart_count, status]], \
        {"point": i, "status": status}


def _point_rate_compare(cfg, stats, i, v):
    params = cfg.params.replace(Pmax=dbm_to_watt(v))
    alloc = PowerAllocation.uniform(params.K, params.M, params.Pmax)
    n = cfg.solver.mc_samples
    seed = derived_seed(cfg.seed, i, salt=2)
    rows = []
    for k in range(params.K):
        ex = mc_rate_exact(stats, alloc, k, params.sigma2, n, seed)
        ap = mc_rate_approx(stats, alloc, k, params.sigma2, n, seed)
        rows.append([v, k, ex, ap, n])
    ok = all(math.isfinite(r[2]) and math.isfinite(r[3]) for r in rows)
    return rows, {"point": i, "status": "ok" if ok else "failed", "mc_seed": seed}


_WORKERS = {
    "pmax": _point_pmax,
    "beta": _point_beta,
    "tradeoff": _point_tradeoff,
    "convergence": _point_convergence,
    "multistart": _point_multistart,
    "rate_compare": _point_rate_compare,
}


def _run_point(args):
    cfg, i, v = args
    stats = build_channel(cfg)
    return _WORKERS[cfg.sweep.kind](cfg, stats, i, v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(c) for c in r])


def _write_manifest(path: Path, cfg: ExperimentConfig, extra: dict) -> None:
    doc = {
        "tool": "beamre",
        "version": __version__,
        "config": render_config(cfg),
        "seed": cfg.seed,
        "channel_seed": cfg.channel_seed,
        "solver": asdict(cfg.solver),
        **extra,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def run_sweep(cfg: ExperimentConfig, out_dir=None, threads: int | None = None) -> Path:
    """Run the configured sweep and write ``<kind>.csv`` plus ``manifest.json``.

    Returns the CSV path. Solver failures become ``failed`` rows; the run
    itself only raises on configuration problems.
    """
    kind = cfg.sweep.kind
    if kind not in _WORKERS:
        raise ValueError(f"config has no runnable sweep kind (got {kind!r})")
    out = Path(out_dir if out_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    build_channel(cfg)  # fail fast on a bad channel before spawning workers
    jobs = [(cfg, i, float(v)) for i, v in enumerate(cfg.sweep.values)]
    n = min(effective_threads(threads, cfg), max(len(jobs), 1))
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]
    rows = [r for res in results for r in res[0]]
    csv_path = out / f"{kind}.csv"
    _write_csv(csv_path, SWEEP_COLUMNS[kind], rows)
    extra = {"kind": kind, "points": [res[1] for res in results]}
    if kind == "tradeoff":
        extra["seopt_beta_factor"] = cfg.sweep.seopt_beta_factor
    _write_manifest(out / "manifest.json", cfg, extra)
    return csv_path


def solve_once(cfg: ExperimentConfig, out_dir=None) -> tuple[Path, Path]:
    """Solve one instance; write ``allocation.txt`` and ``metrics.csv``.

    The allocation file has one line per UT with ``M`` powers in watts.
    The metrics row carries DE and Monte-Carlo (mean-interference model)
    figures for the same allocation.
    """
    out = Path(out_dir if out_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    stats = build_channel(cfg)
    params = cfg.params
    error = None
    try:
        alloc, st = mm_solve(stats, params, cfg.solver)
        de = metrics(stats, alloc, params)
        mc = metrics(stats, alloc, params, rate_fn="approx", n_samples=cfg.solver.mc_samples,
                     seed=derived_seed(cfg.seed, 0, salt=3))
        status = _status(st, de.se, de.ee, de.re, mc.se, mc.ee, mc.re)
        row = [de.se, de.ee, de.re, mc.se, mc.ee, mc.re, alloc.total, st.ell, status]
        lam = alloc.lam
    except Exception as exc:
        error = str(exc)
        row = [math.nan] * 7 + [0, "failed"]
        lam = np.full((params.K, params.M), math.nan)
        st = None
    alloc_path = out / "allocation.txt"
    with open(alloc_path, "w", encoding="utf-8") as fh:
        for r in lam:
            fh.write(" ".join(fmt(float(x)) for x in r) + "\n")
    metrics_path = out / "metrics.csv"
    _write_csv(metrics_path, METRICS_COLUMNS, [row])
    extra = {"kind": "solve", "status": row[-1],
             "re_trace": list(st.re_trace) if st is not None else []}
    if error:
        extra["error"] = error
    _write_manifest(out / "manifest.json", cfg, extra)
    return alloc_path, metrics_path


# ---------------------------------------------------------------------------
# verification suite

def _verify_rows(cfg: ExperimentConfig, stats: ChannelStats):
    from .de import de_fixed_point
    from .mm import mm_derivative
    from .powerctl import inner_problem, nu, nu_prime, re_derivative, waterfill

    params = cfg.params
    rows = []
    rng = np.random.default_rng(derived_seed(cfg.seed, 0, salt=4))

    # fixed-gain inner problem at the uniform full-budget point
    alloc = PowerAllocation.uniform(params.K, params.M, params.Pmax)
    states = [de_fixed_point(stats, alloc, k, params.sigma2, cfg.solver.eps1,
                             cfg.solver.max_fp_iter) for k in range(params.K)]
    gam = [s.gamma for s in states]
    gtil = [s.gamma_tilde for s in states]
    d = mm_derivative(stats, alloc, params.sigma2)
    prob = inner_problem(stats, gam, gtil, d, params.sigma2)

    # water-filling vs projected-gradient reference
    P_T = 0.5 * params.Pmax
    wf = waterfill(stats, gam, gtil, d, P_T, params.sigma2, cfg.solver)
    if params.Pmax > 0 and wf.mu_star > 0:
        _, ref = refsolve_inner(stats, gam, gtil, d, P_T, params.sigma2)
        gap = abs(wf.se_value - ref) / max(abs(ref), 1e-12)
        rows.append(["waterfill_vs_refsolver", "refsolver", gap, 1e-5, gap <= 1e-5,
                     f"P_T={fmt(P_T)}"])
    rows.append(["waterfill_kkt", "refsolver", wf.kkt_residual, 1e-6,
                 wf.kkt_residual <= 1e-6, f"mu*={fmt(wf.mu_star)}"])

    # stationarity function derivative at random beams
    worst = 0.0
    x = wf.alloc.lam
    for _ in range(10):
        k, m = int(rng.integers(params.K)), int(rng.integers(params.M))
        xb = float(rng.uniform(0.0, max(params.Pmax, 1e-12)))
        h = 1e-6 * max(xb, params.Pmax, 1e-12)
        g = fd_check(lambda t: nu(k, m, t, x, prob, 0.0), xb, h,
                     nu_prime(k, m, xb, x, prob))
        worst = max(worst, g)
    rows.append(["nu_derivative", "fd", worst, 1e-6, worst <= 1e-6, "10 random beams"])

    # derivative of the surrogate SE in P_T is the water level
    if params.Pmax > 0:
        def se_at(t):
            return waterfill(stats, gam, gtil, d, t, params.sigma2, cfg.solver).se_nats

        def re_at(t):
            c = 1.0 / (params.xi * t + params.M * params.Pc + params.Ps)
            return (c + params.beta / budget_power(params)) * se_at(t)

        mu_gap = re_gap = 0.0
        for pt in rng.uniform(0.2, 0.8, size=3) * params.Pmax:
            h = 1e-4 * pt
            res = waterfill(stats, gam, gtil, d, pt, params.sigma2, cfg.solver)
            fd = (se_at(pt + h) - se_at(pt - h)) / (2 * h)
            if abs(fd - res.mu_star) > 1e-8:
                mu_gap = max(mu_gap, abs(fd - res.mu_star) / abs(res.mu_star))
            re_gap = max(re_gap, fd_check(re_at, pt, h,
                                          re_derivative(pt, res.se_nats, res.mu_star, params)))
        rows.append(["mu_equals_dse_dpt", "fd", mu_gap, 1e-3, mu_gap <= 1e-3, "3 budgets"])
        rows.append(["re_derivative", "fd", re_gap, 1e-3, re_gap <= 1e-3, "3 budgets"])

    # deterministic equivalent vs Monte-Carlo at the uniform point
    rep = de_vs_mc_report(stats, alloc, params, max(cfg.solver.mc_samples, 100),
                          derived_seed(cfg.seed, 0, salt=5))
    # the 2% bound is an asymptotic claim; below M = 64 the gap is reported only
    rows.append(["de_vs_mc", rep.kind, rep.gap, 0.02,
                 (rep.gap <= 0.02) if params.M >= 64 else "info",
                 f"n={rep.details['n_samples']} M={params.M}"])

    # exhaustive grid on tiny instances
    if params.K * params.M <= 6:
        galloc, gre = grid_search_re(stats, params, 25)
        _, st = mm_solve(stats, params, cfg.solver)
        got = st.re_trace[-1]
        short = max(gre - got, 0.0) / max(abs(gre), 1e-300)
        rows.append(["mm_vs_grid", "grid", short, 1e-3, short <= 1e-3,
                     f"grid={fmt(gre)} mm={fmt(got)}"])
    else:
        rows.append(["mm_vs_grid", "grid", 0.0, 1e-3, "skipped",
                     f"K*M={params.K * params.M} above the grid cap"])
    return rows


def verify(cfg: ExperimentConfig, out_dir=None) -> Path:
    """Run the oracle checks on the configured instance; write ``verify.csv``."""
    out = Path(out_dir if out_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    stats = build_channel(cfg)
    rows = []
    for r in _verify_rows(cfg, stats):
        if isinstance(r[4], (bool, np.bool_)):
            r[4] = "pass" if r[4] else "fail"
        rows.append(r)
    path = out / "verify.csv"
    _write_csv(path, VERIFY_COLUMNS, rows)
    _write_manifest(out / "manifest.json", cfg,
                    {"kind": "verify", "results": {r[0]: r[4] for r in rows}})
    return path

