"""Command line interface.

Subcommands
-----------
kernel-table   CSV table of kernel values (or potentials with --potentials)
simulate       CSV snapshots of one sampled process or a reflected run
estimate       one configured estimator experiment, CSV output
verify         the full verification suite at smoke or full level
"""

import argparse
import json
import math
import sys

import numpy as np

from . import harness, kernels, potentials
from .grids import SpaceTimeGrid
from .reflected import solve_reflected
from .sampling import (RngStream, sample_bessel3_bridge,
                       sample_brownian_bridge_3d, string_transition,
                       stochastic_convolution_path)


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x)


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w")


def cmd_kernel_table(args):
    params = kernels.KernelParams(truncation_K=args.truncation,
                                  tail_tol=args.tail_tol)
    out = _open_out(args.out)
    if args.potentials:
        out.write("theta,a,u3,gamma3,rho,eta_mass,l_mass\n")
        for th in _floats(args.theta):
            tg = potentials.revuz_targets(th)
            for a in _floats(args.a):
                q = potentials.PotentialQuery(theta=th, a=[a, 0.0, 0.0])
                u3 = potentials.u3_potential(q)
                g3 = potentials.gamma3(None, th)
                rho = potentials.marginal_density(th, a)
                out.write(f"{th},{a},{u3:.10g},{g3:.10g},{rho:.10g},"
                          f"{tg.eta_density_mass:.10g},{tg.l_mass:.10g}\n")
    else:
        out.write("kernel,t,theta,theta_p,value,err_bound\n")
        tol = params.tail_tol
        for t in _floats(args.t):
            for th in _floats(args.theta):
                for tp in _floats(args.theta_p or args.theta):
                    rows = [
                        ("g", kernels.heat_kernel_g(t, th, tp, params), tol),
                        ("G", kernels.kernel_G(t, th, tp), 0.0),
                        ("q_t", kernels.q_kernel(t, th, tp, params), tol),
                        ("q_comp", kernels.q_complement(t, th, tp, params), tol),
                        ("q_inf", kernels.q_infinity(th, tp), 0.0),
                    ]
                    for name, v, e in rows:
                        out.write(f"{name},{t},{th},{tp},{v:.12g},{e:.2g}\n")
    if out is not sys.stdout:
        out.close()


def cmd_simulate(args):
    grid = SpaceTimeGrid(args.n, args.dt, args.T)
    rng = RngStream(args.seed, 0)
    out = _open_out(args.out)
    if args.process == "bridge3":
        f = sample_brownian_bridge_3d(grid, rng)
        out.write("t,theta,v1,v2,v3\n")
        for th, v in zip(grid.thetas, f.values):
            out.write(f"0,{th},{v[0]},{v[1]},{v[2]}\n")
    elif args.process == "bessel3":
        f = sample_bessel3_bridge(grid, rng)
        out.write("t,theta,value\n")
        for th, v in zip(grid.thetas, f.values):
            out.write(f"0,{th},{v}\n")
    elif args.process == "string":
        x0 = sample_brownian_bridge_3d(grid, rng)
        f = string_transition(x0, args.T, RngStream(args.seed, 1))
        out.write("t,theta,v1,v2,v3\n")
        for th, v in zip(grid.thetas, f.values):
            out.write(f"{args.T},{th},{v[0]},{v[1]},{v[2]}\n")
    elif args.process == "convolution":
        times, fields = stochastic_convolution_path(
            grid, args.dt, grid.n_steps, rng,
            snapshot_stride=max(1, grid.n_steps // args.snapshots))
        out.write("t,theta,value\n")
        for t, row in zip(times, fields):
            for th, v in zip(grid.thetas, row):
                out.write(f"{t},{th},{v}\n")
    elif args.process == "reflected":
        if args.init == "zero":
            x0 = np.zeros(grid.n_sites)
        elif args.init == "bessel3":
            x0 = sample_bessel3_bridge(grid, RngStream(args.seed, 1))
        else:
            x0 = np.loadtxt(args.init)
        traj = solve_reflected(
            x0, grid, rng, scheme=args.scheme, delta=args.delta,
            snapshot_stride=max(1, grid.n_steps // args.snapshots))
        out.write("t,theta,value\n")
        for t, row in zip(traj.snapshot_times, traj.snapshots):
            for th, v in zip(grid.thetas, row):
                out.write(f"{t},{th},{v}\n")
        ledger_path = args.ledger_out or "ledger.csv"
        with open(ledger_path, "w") as lf:
            lf.write("t,theta,eta_density\n")
            for t, row in zip(traj.ledger.times, traj.ledger.density):
                for th, v in zip(grid.thetas, row):
                    lf.write(f"{t},{th},{v}\n")
    if out is not sys.stdout:
        out.close()


def cmd_estimate(args):
    if args.config:
        cfg = harness.ExperimentConfig.from_json(args.config)
    else:
        kw = dict(experiment=args.experiment, seed=args.seed,
                  replicas=args.replicas, theta=args.theta,
                  workers=args.workers,
                  analytic_surrogate=args.analytic_surrogate)
        if args.eps_list:
            kw["eps_list"] = _floats(args.eps_list)
        if args.a_list:
            kw["a_list"] = _floats(args.a_list)
        if args.n:
            kw["n_sites"] = args.n
        if args.dt:
            kw["dt"] = args.dt
        if args.T:
            kw["T"] = args.T
        cfg = harness.ExperimentConfig(**kw)
    rows = harness.run_experiment(cfg)
    out = _open_out(args.out)
    out.write("experiment,param,value,stderr,n,target,target_provenance\n")
    for r in rows:
        out.write(f"{r.experiment},{r.param},{r.estimate:.10g},"
                  f"{r.stderr:.4g},{r.n},{r.target:.10g},"
                  f"{r.target_provenance}\n")
    if out is not sys.stdout:
        out.close()
    bad = [r for r in rows if r.status == "FAIL"]
    return 1 if bad else 0


def cmd_verify(args):
    summary = harness.verify_all(level=args.level, seed=args.seed,
                                 out_dir=args.out, workers=args.workers)
    print(json.dumps(summary["counts"]))
    if not summary["ok"]:
        print("unexpected failures:", ", ".join(summary["unexpected_failures"]))
        return 1
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="spdelab", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    kt = sub.add_parser("kernel-table", help="emit kernel or potential tables")
    kt.add_argument("--potentials", action="store_true")
    kt.add_argument("--t", default="0.05,0.1,0.5")
    kt.add_argument("--theta", default="0.25,0.5,0.75")
    kt.add_argument("--theta-p", dest="theta_p", default=None)
    kt.add_argument("--a", default="0,0.5,1.0")
    kt.add_argument("--truncation", type=int, default=4000)
    kt.add_argument("--tail-tol", type=float, default=1e-10)
    kt.add_argument("--out", default=None)
    kt.set_defaults(fn=cmd_kernel_table)

    sim = sub.add_parser("simulate", help="sample one process, CSV snapshots")
    sim.add_argument("--process", required=True,
                     choices=["bridge3", "bessel3", "string", "convolution",
                              "reflected"])
    sim.add_argument("--n", type=int, default=127)
    sim.add_argument("--dt", type=float, default=1e-4)
    sim.add_argument("--T", type=float, default=0.5)
    sim.add_argument("--seed", type=int, default=2026)
    sim.add_argument("--scheme", default="lcp", choices=["lcp", "penalized"])
    sim.add_argument("--delta", type=float, default=1e-2)
    sim.add_argument("--init", default="bessel3",
                     help="zero | bessel3 | path to a loadtxt file")
    sim.add_argument("--snapshots", type=int, default=20)
    sim.add_argument("--out", default=None)
    sim.add_argument("--ledger-out", default=None)
    sim.set_defaults(fn=cmd_simulate)

    est = sub.add_parser("estimate", help="run one estimator experiment")
    est.add_argument("--experiment", choices=sorted(harness.EXPERIMENTS),
                     default="abscon")
    est.add_argument("--theta", type=float, default=0.5)
    est.add_argument("--eps-list", default=None)
    est.add_argument("--a-list", default=None)
    est.add_argument("--replicas", type=int, default=64)
    est.add_argument("--seed", type=int, default=2026)
    est.add_argument("--n", type=int, default=None)
    est.add_argument("--dt", type=float, default=None)
    est.add_argument("--T", type=float, default=None)
    est.add_argument("--workers", type=int, default=1)
    est.add_argument("--analytic-surrogate", action="store_true")
    est.add_argument("--config", default=None,
                     help="JSON file with ExperimentConfig fields")
    est.add_argument("--out", default=None)
    est.set_defaults(fn=cmd_estimate)

    ver = sub.add_parser("verify", help="run the verification suite")
    ver.add_argument("--level", choices=["smoke", "full"], default="smoke")
    ver.add_argument("--seed", type=int, default=2026)
    ver.add_argument("--out", default=None)
    ver.add_argument("--workers", type=int, default=1)
    ver.set_defaults(fn=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    rc = args.fn(args)
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
