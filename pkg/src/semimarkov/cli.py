"""Command-line front end.

Subcommands: ``validate`` (kernel file + model assumptions), ``simulate``
(trajectory CSV), ``test`` (block test of one trajectory, single alternative
or covering net), ``power`` (empirical error-rate study CSV), ``posterior``
(posterior concentration curve and mass-condition feasibility CSVs) and
``verify`` (mixture identity suite).

Exit codes: 0 success, 2 configuration problems (bad flags, malformed files,
infeasible constants), 3 numeric failures.  ``validate`` exits 1 when the
kernel fails the model assumptions.  Relative output paths land in
``$SEMIMARKOV_OUT`` when that is set.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import bayes, core, hypotest, kernel, metrics, simulate
from .kernel import NumericError, ValidationError


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        print(f"error: config: {message}", file=sys.stderr)
        raise SystemExit(2)


def _out_path(name: str) -> Path:
    p = Path(name)
    if not p.is_absolute():
        base = os.environ.get("SEMIMARKOV_OUT")
        if base:
            p = Path(base) / p
    if p.parent != Path("."):
        p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _ints(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok]
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok]
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from None


def _load(path: str) -> kernel.KernelDocument:
    doc = kernel.read_kernel(path)
    for adj in doc.adjustments:
        print(f"note: renormalized row {adj.state} (off by {adj.deviation:.3g})")
    return doc


def _load_discrete(path: str) -> kernel.DiscreteSmk:
    doc = _load(path)
    if not isinstance(doc.kernel, kernel.DiscreteSmk):
        raise ValidationError(f"{path}: this command needs a discrete kernel")
    return doc.kernel


# ---------------------------------------------------------------------------
# subcommands


def _cmd_validate(args) -> int:
    doc = _load(args.kernel)
    smk = doc.kernel
    kind = "discrete" if isinstance(smk, kernel.DiscreteSmk) else "continuous"
    print(f"kernel {smk.digest()} kind={kind} states={','.join(smk.states.labels)}"
          + (f" k_max={smk.k_max}" if kind == "discrete" else ""))
    report = kernel.validate_assumptions(smk)
    for line in report.lines():
        print(line)
    if kind == "discrete" and report.a1:
        k = kernel.smallest_k_with_mass(smk.emc())
        env = kernel.minorization(smk.emc(), k, 1)
        nu = " ".join(f"{v:.6g}" for v in env.nu_star)
        eta = " ".join(f"{v:.6g}" for v in env.eta_star)
        print(f"minorization k={k} l=1 nu*=[{nu}] eta*=[{eta}]"
              + (" (vacuous)" if env.vacuous else ""))
        pair = kernel.stationary_pair(smk)
        print("stationary = " + " ".join(f"{v:.6g}" for v in pair.rho))
    return 0 if report.ok else 1


def _cmd_simulate(args) -> int:
    doc = _load(args.kernel)
    traj = simulate.sample_trajectory(doc.kernel, args.n, args.seed, init=args.init)
    out = _out_path(args.out)
    simulate.write_trajectory_csv(traj, out)
    print(f"wrote {out} (n={traj.n}, seed={args.seed}, init={args.init}, "
          f"backend={core.backend_name()})")
    return 0


def _print_outcome(out: hypotest.TestOutcome) -> None:
    print(f"variant={out.variant} statistic={out.statistic:.6g} "
          f"blocks={out.blocks} kappa={out.kappa} epsilon={out.epsilon:.6g}")
    print(f"type1_bound={out.type1_bound:.6g} type2_bound={out.type2_bound:.6g}")
    print(f"decision: {'reject H0' if out.reject else 'accept H0'}")


def _cmd_test(args) -> int:
    q0 = _load_discrete(args.kernel0)
    traj = simulate.read_trajectory_csv(args.traj, q0.states)
    if args.net:
        if args.radius is None:
            raise ValidationError("--net requires --radius")
        family = metrics.read_net_spec(args.net)
        net_radius = args.net_radius if args.net_radius is not None else args.radius / 2.0
        net = metrics.covering_net(q0, family, args.radius, net_radius)
        if args.net_csv:
            path = _out_path(args.net_csv)
            metrics.write_net_csv(net, path)
            print(f"wrote {path} ({len(net.shell_kernels)} shell points, net size {net.size})")
        agg = hypotest.psi_aggregate(traj, q0, net, lam=args.lam, xi=args.xi,
                                     k=args.k, l=args.l, seed=args.seed)
        print(f"net size={agg.net_size} radius={agg.radius:.6g} "
              f"union_type1_bound={agg.union_type1_bound:.6g}")
        for j, o in enumerate(agg.outcomes):
            print(f"point {j}: statistic={o.statistic:.6g} "
                  f"{'reject' if o.reject else 'accept'}")
        print("decision: " + ("reject H0" if agg.reject else "accept H0")
              + (f" (first rejecting point {agg.first_reject})" if agg.reject else ""))
        return 0
    if not args.kernel1:
        raise ValidationError("give --kernel1 or --net")
    q1 = _load_discrete(args.kernel1)
    if args.variant == "ball":
        plan = hypotest.plan_ball(q0, q1, lam=args.lam, xi=args.xi, k=args.k,
                                  l=args.l, epsilon=args.epsilon, seed=args.seed)
    else:
        plan = hypotest.plan_simple(q0, q1, k=args.k, epsilon=args.epsilon, seed=args.seed)
    _print_outcome(hypotest.psi(traj, plan))
    return 0


def _cmd_power(args) -> int:
    q0 = _load_discrete(args.kernel0)
    q1 = _load_discrete(args.kernel1)
    study = hypotest.error_study(
        q0, q1, _ints(args.n), args.reps, probes=args.probes, lam=args.lam,
        xi=args.xi, k=args.k, l=args.l, epsilon=args.epsilon, seed=args.seed,
        variant=args.variant)
    out = _out_path(args.out)
    hypotest.write_error_study_csv(study, out)
    print(f"wrote {out} (variant={study.variant} epsilon={study.epsilon:.6g} "
          f"kappa={study.kappa} K={study.K:.6g} K_tilde={study.K_tilde:.6g})")
    for row in study.rows:
        if row.skip_reason:
            print(f"n={row.n}: skipped ({row.skip_reason})")
            continue
        msg = (f"n={row.n}: type1 {row.type1_rate:.4f} (bound {row.type1_bound:.4f})")
        if study.probes:
            msg += (f", type2 sup {row.type2_sup_rate:.4f} "
                    f"(bound {row.type2_bound:.4f}, probe {row.type2_argmax_probe})")
        print(msg)
    return 0


def _read_concentration(prior_arg: str, states: kernel.StateSpace, k_max: int
                        ) -> bayes.DirichletSmkPrior:
    try:
        value = float(prior_arg)
    except ValueError:
        rows = []
        with open(prior_arg) as fh:
            for ln in fh:
                ln = ln.strip()
                if ln and not ln.startswith("#"):
                    rows.append(_floats(ln))
        return bayes.DirichletSmkPrior(states, k_max, np.array(rows, dtype=np.float64))
    return bayes.DirichletSmkPrior.constant(states, k_max, value)


def _cmd_posterior(args) -> int:
    q0 = _load_discrete(args.kernel0)
    prior = _read_concentration(args.concentration, q0.states, q0.k_max)
    n_values = _ints(args.n)
    m_values = _floats(args.m)
    curve = bayes.concentration_curve(
        q0, prior, n_values, m_values, replications=args.reps,
        mc_samples=args.mc_samples, seed=args.seed)
    out = _out_path(args.out)
    bayes.write_curve_csv(curve, out)
    print(f"wrote {out}")
    for m in m_values:
        print(f"M={m:g}: final outside-mass {curve.final_mass(m):.4f}, "
              f"nonincreasing={str(curve.nonincreasing(m)).lower()}")
    if args.c_grid:
        report = bayes.feasibility_report(
            prior, q0, n_values, _floats(args.c_grid),
            mc_samples=args.mc_samples, seed=args.seed)
        fpath = _out_path(args.feasibility_out)
        bayes.write_feasibility_csv(report, fpath)
        feas = ",".join(f"{c:g}" for c in report.feasible_c) or "none"
        print(f"wrote {fpath} (feasible c: {feas})")
    return 0


def _cmd_verify(args) -> int:
    report = metrics.verify_identities(seed=args.seed, draws=args.draws)
    print(f"identity suite: {report.draws} draws, max deviation "
          f"{report.max_deviation:.3e}, {len(report.violations)} violations "
          f"[{report.elapsed_s:.2f}s, backend={core.backend_name()}]")
    for v in report.violations:
        print(f"violation: {v}")
    if report.violations:
        raise NumericError(f"{len(report.violations)} identity violations")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smk", description="finite-state semi-Markov kernels: "
                "simulation, block tests, posterior concentration")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a kernel file and the model assumptions")
    v.add_argument("--kernel", required=True)
    v.set_defaults(func=_cmd_validate)

    s = sub.add_parser("simulate", help="sample a trajectory to CSV")
    s.add_argument("--kernel", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--init", default="stationary")
    s.add_argument("--out", default="trajectory.csv")
    s.set_defaults(func=_cmd_simulate)

    t = sub.add_parser("test", help="run the block test on a trajectory")
    t.add_argument("--kernel0", required=True, help="null kernel file")
    t.add_argument("--kernel1", help="alternative kernel file")
    t.add_argument("--net", help="JSON family spec for an aggregate net test")
    t.add_argument("--radius", type=float, help="shell radius for --net")
    t.add_argument("--net-radius", type=float, help="net resolution (default radius/2)")
    t.add_argument("--net-csv", help="also write the net layout CSV here")
    t.add_argument("--traj", required=True, help="trajectory CSV")
    t.add_argument("--variant", choices=("ball", "simple"), default="ball")
    t.add_argument("--lam", type=float, default=0.1)
    t.add_argument("--xi", type=float, default=None)
    t.add_argument("--k", type=int, default=None)
    t.add_argument("--l", type=int, default=1)
    t.add_argument("--epsilon", type=float, default=None)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=_cmd_test)

    w = sub.add_parser("power", help="empirical type I/II error study CSV")
    w.add_argument("--kernel0", required=True)
    w.add_argument("--kernel1", required=True)
    w.add_argument("--n", required=True, help="comma-separated trajectory lengths")
    w.add_argument("--reps", type=int, default=2000)
    w.add_argument("--probes", type=int, default=0)
    w.add_argument("--lam", type=float, default=0.1)
    w.add_argument("--xi", type=float, default=None)
    w.add_argument("--k", type=int, default=None)
    w.add_argument("--l", type=int, default=1)
    w.add_argument("--epsilon", type=float, default=None)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--variant", choices=("ball", "simple"), default="ball")
    w.add_argument("--out", default="error_study.csv")
    w.set_defaults(func=_cmd_power)

    b = sub.add_parser("posterior", help="posterior concentration curve CSV")
    b.add_argument("--kernel0", required=True)
    b.add_argument("--concentration", default="1.0",
                   help="Dirichlet concentration: scalar or CSV file of rows")
    b.add_argument("--n", required=True, help="comma-separated trajectory lengths")
    b.add_argument("--m", default="10", help="comma-separated ball multipliers")
    b.add_argument("--reps", type=int, default=20)
    b.add_argument("--mc-samples", type=int, default=500)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--c-grid", default="", help="run the mass-condition search over these c")
    b.add_argument("--out", default="concentration.csv")
    b.add_argument("--feasibility-out", default="feasibility.csv")
    b.set_defaults(func=_cmd_posterior)

    y = sub.add_parser("verify", help="run the mixture identity suite")
    y.add_argument("--seed", type=int, default=7)
    y.add_argument("--draws", type=int, default=1000)
    y.set_defaults(func=_cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 2
    except ValidationError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
