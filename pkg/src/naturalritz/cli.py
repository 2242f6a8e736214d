"""Command-line entry points.

Verbs: solve (train one configuration), oracle (finite-difference
decomposition check), gradcheck (autodiff battery), quaddump (quadrature
CSVs).  Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import runner

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _add_solve(sub):
    p = sub.add_parser("solve", help="train one experiment configuration")
    p.add_argument("--config", type=str, default=None, help="JSON config file")
    p.add_argument("--example", type=int, default=None)
    p.add_argument("--method", type=str, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--activation", type=str, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--n-blocks", type=int, default=None, dest="n_blocks")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lbfgs-outer", type=int, default=None)
    p.add_argument("--lbfgs-inner", type=int, default=None)
    p.add_argument("--lbfgs-history", type=int, default=None)
    p.add_argument("--panels", type=int, default=None)
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--boundary-panels", type=int, default=None)
    p.add_argument("--couple-stages", action="store_true", default=None)
    p.add_argument("--example4-interface", action="store_true", default=None)
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--out", type=str, default=None, help="output directory")
    return p


def _solve_overrides(args):
    ov = {
        "example": args.example,
        "method": args.method,
        "seed": args.seed,
        "activation": args.activation,
        "width": args.width,
        "n_blocks": args.n_blocks,
        "beta": args.beta,
        "adam.epochs": args.epochs,
        "adam.batch": args.batch,
        "adam.lr": args.lr,
        "lbfgs.outer": args.lbfgs_outer,
        "lbfgs.inner": args.lbfgs_inner,
        "lbfgs.history": args.lbfgs_history,
        "quadrature.panels": args.panels,
        "quadrature.order": args.order,
        "quadrature.boundary_panels": args.boundary_panels,
        "couple_stages": args.couple_stages,
        "example4_interface": args.example4_interface,
        "out_dir": args.out,
    }
    if args.no_plots:
        ov["log_figures"] = False
    return ov


def main(argv=None):
    parser = argparse.ArgumentParser(prog="naturalritz")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    _add_solve(sub)

    p = sub.add_parser("oracle", help="finite-difference decomposition check")
    p.add_argument("--example", type=int, required=True)
    p.add_argument("--grid", type=int, default=129)
    p.add_argument("--example4-interface", action="store_true", default=None)
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--out", type=str, default=None)

    p = sub.add_parser("gradcheck", help="gradient-vs-finite-difference battery")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("quaddump", help="dump quadrature sets to CSV")
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--panels", type=int, default=20)
    p.add_argument("--order", type=int, default=5)
    p.add_argument("--boundary-panels", type=int, default=50)
    p.add_argument("--interface-panels", type=int, default=25)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")

    try:
        if args.verb == "solve":
            cfg = runner.parse_config(args.config, _solve_overrides(args))
            result = runner.run_experiment(cfg)
            print(
                f"example {cfg.example} method {cfg.method} seed {cfg.seed}: "
                f"rel_l2={result.final['rel_l2']:.3e} rel_linf={result.final['rel_linf']:.3e}"
            )
            return EXIT_OK
        if args.verb == "oracle":
            ov = {
                "example": args.example,
                "method": "fd-oracle",
                "grid": args.grid,
                "example4_interface": args.example4_interface,
                "out_dir": args.out,
            }
            if args.no_plots:
                ov["log_figures"] = False
            cfg = runner.parse_config(None, ov)
            result = runner.run_experiment(cfg)
            for row in result.final["report"]:
                order = row.get("observed_order")
                print(
                    f"n={row['n']}: gap={row['gap_rel_l2']:.3e} "
                    f"direct-vs-exact={row['direct_vs_exact']:.3e} "
                    f"compose-vs-exact={row['compose_vs_exact']:.3e}"
                    + (f" order={order:.2f}" if order is not None else "")
                )
            return EXIT_OK
        if args.verb == "gradcheck":
            return _gradcheck(args.seed)
        if args.verb == "quaddump":
            from . import quadrature as qd

            qs = qd.build_quadrature(
                panels=args.panels,
                order=args.order,
                boundary_panels=args.boundary_panels,
                interface_panels=args.interface_panels,
                with_interface=True,
            )
            qd.dump_csv(qs, Path(args.out))
            print(f"quadrature CSVs written to {args.out}")
            return EXIT_OK
    except runner.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except runner.NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except IOError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_CONFIG


def _gradcheck(seed):
    from . import autodiff as ad
    from . import losses as ls
    from . import network as nw
    from . import problems as pb
    from . import quadrature as qd

    quad = qd.build_quadrature(panels=3, order=2, boundary_panels=4, interface_panels=3, with_interface=True, test_points=5)
    p1 = pb.make_example(1)
    p5 = pb.make_example(5)
    quad.interior_region = p5.infer_region(quad.interior_x)
    worst = 0.0
    for activation in ("tanh", "recu"):
        spec1 = nw.NetworkSpec(2, 1, 2, 5, activation, seed)
        spec2 = nw.NetworkSpec(2, 2, 2, 5, activation, seed + 1)
        th = nw.init_params(spec1).flat
        th_b = nw.init_params(nw.NetworkSpec(2, 1, 2, 5, activation, seed + 2)).flat
        th_c = nw.init_params(spec2).flat
        checks = {
            "stage1": lambda t: ls.loss_stage1(p5, quad, spec1, t)[:2],
            "stage2": lambda t: ls.loss_stage2(p5, quad, spec1, t, (spec1, th_b))[:2],
            "stage3": lambda t: ls.loss_stage3(p5, quad, spec2, t, (spec1, th), (spec1, th_b))[:2],
            "drm": lambda t: ls.loss_drm(p1, quad, spec1, t, 1000.0)[:2],
            "pinn": lambda t: ls.loss_pinn(p1, quad, spec1, t, 1000.0)[:2],
        }
        for name, fn in checks.items():
            theta = th_c if name == "stage3" else th
            err = ad.grad_check(fn, theta, seed=seed)
            worst = max(worst, err)
            print(f"{activation:5s} {name:7s}: max rel grad error {err:.3e}")
    print(f"worst: {worst:.3e}")
    return EXIT_OK if worst <= 1e-5 else EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
