"""Time the compiled water-filling kernel against the pure-Python one.

    python benchmarks/bench_waterfill.py --M 32 --K 4 --repeat 5

Both kernels run the same Gauss-Seidel sweeps on the same inner problem;
the script also reports the largest difference between their allocations.
"""

import argparse
import time

import numpy as np

from beamre import _wfcore_py
from beamre.config import SolverConfig
from beamre.de import de_fixed_point
from beamre.mm import mm_derivative
from beamre.model import PowerAllocation, SystemParams, dbm_to_watt, synth_coupling
from beamre.powerctl import inner_problem, mu_upper_bound

try:
    from beamre import _wfcore as _wfcore_c
except ImportError:
    _wfcore_c = None


def make_problem(M, K, N, pmax_dbm, seed):
    p = SystemParams(M=M, K=K, N=(N,) * K, W=10e6, sigma2=dbm_to_watt(-105.0), xi=5.0,
                     Pc=1.0, Ps=10.0, Pmax=dbm_to_watt(pmax_dbm), beta=0.5)
    stats = synth_coupling(p, -120.0, 0.25, 0.1, seed)
    alloc = PowerAllocation.uniform(K, M, p.Pmax)
    states = [de_fixed_point(stats, alloc, k, p.sigma2) for k in range(K)]
    prob = inner_problem(stats, [s.gamma for s in states], [s.gamma_tilde for s in states],
                         mm_derivative(stats, alloc, p.sigma2), p.sigma2)
    return prob


def run(core, prob, mu, cfg):
    x = np.zeros((prob.K, prob.M))
    t0 = time.perf_counter()
    sweeps, _ = core.solve_at_mu(prob.rows, prob.owner, prob.gamma, prob.base, prob.d, x, mu,
                                 cfg.eps4, cfg.eps4, cfg.max_sweeps, cfg.max_newton_iter)
    return time.perf_counter() - t0, sweeps, x


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--M", type=int, default=32)
    ap.add_argument("--K", type=int, default=4)
    ap.add_argument("--N", type=int, default=2)
    ap.add_argument("--pmax-dbm", type=float, default=40.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    prob = make_problem(args.M, args.K, args.N, args.pmax_dbm, args.seed)
    cfg = SolverConfig()
    mu = 0.25 * mu_upper_bound(prob)
    kernels = [("python", _wfcore_py)]
    if _wfcore_c is not None:
        kernels.append(("cython", _wfcore_c))
    else:
        print("compiled kernel not built; timing the Python kernel only")

    best = {}
    outs = {}
    for name, core in kernels:
        times = []
        for _ in range(args.repeat):
            dt, sweeps, x = run(core, prob, mu, cfg)
            times.append(dt)
        best[name] = min(times)
        outs[name] = x
        print(f"{name:>7}: best {best[name] * 1e3:9.3f} ms over {args.repeat} runs, "
              f"{sweeps} sweeps, {args.K * args.M} beams")
    if "cython" in best:
        diff = np.abs(outs["cython"] - outs["python"]).max()
        print(f"speedup: {best['python'] / best['cython']:.1f}x, "
              f"max |x_cython - x_python| = {diff:.3e} W")


if __name__ == "__main__":
    main()
