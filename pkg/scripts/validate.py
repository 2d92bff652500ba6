"""Quick numerical health report for one market spec.

Usage:
    python3 scripts/validate.py [--preset table1 | --spec file.json] [--paths 100000]

Prints bond-price cross checks, HJB residuals, closed-form gaps (two
regimes only) and the Monte Carlo value identity from regime 1.
"""
import argparse
import sys
import time

import numpy as np

from regimedefault import bond, cli, hjb, market, sim, two_regime


def load(args) -> market.MarketSpec:
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            return market.load_spec(fh.read())
    return market.from_dict(cli.load_preset(args.preset)["spec"])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="table1")
    ap.add_argument("--spec")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args(argv)
    spec = load(args)
    sol = hjb.solve_log(spec, steps=args.steps)

    psi0 = sol.psi.values[0]
    print(f"psi(0)             {np.array2string(psi0, precision=8)}")
    if spec.n_regimes == 2 and np.array_equal(spec.gen_p, spec.gen_q):
        quad = bond.psi_quadrature_2state(spec, 0.0)
        print(f"  quadrature gap   {np.max(np.abs(quad - psi0)):.2e}")

    post = np.max(np.abs(hjb.hjb_residual_post(spec, sol.K)))
    foc, pre = hjb.hjb_residual_pre(spec, sol.K, sol.J, sol.p, sol.psi, sol.theta)
    print(f"residuals          post {post:.2e}  pre {np.max(np.abs(pre)):.2e}  "
          f"foc {np.max(np.abs(foc)):.2e}")
    print(f"stock fractions    {sol.stock_frac}")
    print(f"p(0)               {sol.p.values[0]}")
    print(f"J(0)               {sol.J.values[0]}")

    if spec.n_regimes == 2 and np.array_equal(spec.gen_p, spec.gen_q):
        ts = sol.grid.nodes[:: max(1, sol.grid.steps // 10)]
        gk = max(np.max(np.abs(np.subtract(two_regime.closed_k(spec, t), sol.K.at(t)))) for t in ts)
        gp = max(np.max(np.abs(np.subtract(two_regime.closed_p(spec, sol.psi, t, sol.theta.at(t),
                                                                  fallback=True), sol.p.at(t))))
                 for t in ts)
        gj = max(np.max(np.abs(np.subtract(two_regime.closed_j(spec, sol.psi, sol.K, sol.p, t,
                                                                  sol.theta), sol.J.at(t))))
                 for t in ts[:4])
        print(f"closed-form gaps   K {gk:.1e}  p {gp:.1e}  J {gj:.1e}")

    t0 = time.perf_counter()
    rep = sim.evaluate_strategy(spec, sol.strategy(), sol, args.paths, args.seed)
    z = (rep.mean_log_wealth - sol.J.values[0, 0]) / rep.stderr
    print(f"Monte Carlo        mean log V_R {rep.mean_log_wealth:.6f} +- {rep.stderr:.1e}, "
          f"J(0,1) {sol.J.values[0, 0]:.6f}, z {z:+.2f} ({time.perf_counter() - t0:.1f}s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
