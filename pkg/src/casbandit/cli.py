"""Command-line entry point: ``casbandit <subcommand> [--config PATH] [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical
divergence, 3 a ``*-check`` subcommand whose check failed.
"""

from __future__ import annotations

import argparse
import sys
import textwrap

import numpy as np

from . import config as cfg
from . import runner
from .analysis import (
    PowerSchedule,
    composite_hessian,
    convergence_run,
    equilibrium_frequencies,
    equilibrium_target,
    matrix_stats,
    sequential_failure_demo,
    tradeoff_matrix,
)
from .bandit import pseudo_regret, regret_bound, run_thompson, run_ucb
from .env import DivergenceError, make_environment
from .rng import substream

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_CHECK_FAILED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _keys_epilog() -> str:
    lines = ["configuration keys (TOML; unknown keys are rejected):"]
    for key, desc in cfg.describe_keys():
        lines.append(f"  {key}")
        lines.extend(textwrap.wrap(desc, 72, initial_indent="      ", subsequent_indent="      "))
    lines += ["", "exit codes: 0 ok, 1 usage/config error, 2 divergence, 3 check failed"]
    return "\n".join(lines)


def _common(p: argparse.ArgumentParser, many_configs: bool = False):
    if many_configs:
        p.add_argument("--config", action="append", required=True, metavar="PATH",
                       help="run configuration (repeat once per compared policy)")
    else:
        p.add_argument("--config", metavar="PATH", help="run configuration (TOML); defaults apply when omitted")
    p.add_argument("--seed", type=int, help="run seed, overrides the configuration")
    p.add_argument("--out", metavar="DIR", help="output directory, overrides outputs.directory")


def build_parser() -> argparse.ArgumentParser:
    epilog = _keys_epilog()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="casbandit", description="Adversarial-sampling bandit simulator.",
                     epilog=epilog, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "run": "train with one policy; writes trace.csv, summary.json, config.toml",
        "compare": "paired repeats of several configurations; writes compare.csv and compare.txt",
        "tradeoff-matrix": "single-arm fine-tuning matrix; writes tradeoff_matrix.csv and matrix_stats.json",
        "regret-bench": "bandit pseudo-regret against the logarithmic bound; writes regret.csv and regret.json",
        "convergence-check": "SGD under a power step-size schedule; writes convergence.csv and .json",
        "equilibrium-check": "selection frequencies with frozen rewards; writes equilibrium.csv and .json",
        "drift-demo": "sequential fine-tuning on two arms; writes drift.csv and drift.json",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text, epilog=epilog, formatter_class=fmt)
        _common(p, many_configs=name == "compare")
        if name == "compare":
            p.add_argument("--repeats", type=int, default=5, help="paired seeds per configuration (default 5)")
    return parser


def _load(path, args) -> cfg.RunConfig:
    conf = cfg.load(path) if path else cfg.RunConfig()
    return conf.with_overrides(seed=args.seed, out=args.out)


def _status(ok: bool, what: str) -> int:
    print(f"{'PASS' if ok else 'FAIL'}: {what}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_run(args) -> int:
    conf = _load(args.config, args)
    s = runner.run(conf)
    print(f"{conf.policy}: weighted accuracy {s.weighted_accuracy:.6f}, "
          f"{s.grad_evals} gradient evaluations, {s.wall_seconds:.2f} s -> {conf.outputs.directory}")
    return EXIT_OK


def cmd_compare(args) -> int:
    confs = [_load(p, args) for p in args.config]
    rows = runner.compare(confs, args.repeats, seed=args.seed)
    out = args.out or confs[0].outputs.directory
    text = runner.comparison_text(rows)
    runner.write_atomically(out, {"compare.csv": runner.comparison_csv(rows), "compare.txt": text})
    print(text, end="")
    return EXIT_OK


def cmd_tradeoff(args) -> int:
    conf = _load(args.config, args)
    env, _ = runner.build_environment(conf)
    tm = tradeoff_matrix(env, conf.tradeoff.steps, conf.env.beta, conf.env.learning_rate, conf.tradeoff.mode)
    st = matrix_stats(tm)
    m = env.n_arms
    rows = [[str(v)] + [runner.fmt_float(x) for x in tm.entries[v]] for v in range(m)]
    stats = {"total": st.total, "asymmetry": st.asymmetry, "row_sums": st.row_sums.tolist(),
             "col_sums": st.col_sums.tolist(), "baseline_accuracies": tm.baseline.tolist(),
             "steps": tm.steps, "mode": tm.mode}
    runner.write_atomically(conf.outputs.directory, {
        "tradeoff_matrix.csv": runner.csv_text(["trained_on"] + [f"arm_{k}" for k in range(m)], rows),
        "matrix_stats.json": runner.json_text(stats),
    })
    print(f"total {st.total:.6f}, asymmetry {st.asymmetry:.6f}")
    return EXIT_OK


def cmd_regret(args) -> int:
    conf = _load(args.config, args)
    r = conf.regret
    bound = regret_bound(r.means, r.horizon, r.slack)
    rows, means = [], {}
    for algo in r.algorithms:
        values = []
        for i in range(r.seeds):
            rng = substream(conf.seed, f"regret-{algo}-{i}")
            trace = run_ucb(r.means, r.horizon, rng) if algo == "ucb" else run_thompson(r.means, r.horizon, rng)[0]
            values.append(pseudo_regret(r.means, trace.pulls()))
            rows.append([algo, str(i), runner.fmt_float(values[-1]), runner.fmt_float(bound)])
        means[algo] = float(np.mean(values))
    runner.write_atomically(conf.outputs.directory, {
        "regret.csv": runner.csv_text(["algorithm", "run", "pseudo_regret", "bound"], rows),
        "regret.json": runner.json_text({"bound": bound, "mean_pseudo_regret": means,
                                         "horizon": r.horizon, "runs": r.seeds}),
    })
    for algo, v in means.items():
        print(f"{algo}: mean pseudo-regret {v:.3f} (bound {bound:.3f})")
    return EXIT_OK


def cmd_convergence(args) -> int:
    conf = _load(args.config, args)
    c = conf.convergence
    env = make_environment(c.dimension, [1.0] * c.n_risks, c.conflict, c.env_seed, radius=c.radius)
    probs = np.full(c.n_risks, 1.0 / c.n_risks)
    scale = c.scale if c.scale is not None else 1.0 / np.linalg.eigvalsh(composite_hessian(env.risks, probs))[-1]
    schedule = PowerSchedule(float(scale), c.power)
    theta0 = np.full(c.dimension, c.start)
    rows, reports = [], []
    for i in range(c.seeds):
        rep = convergence_run(env.risks, probs, schedule, c.horizon, substream(conf.seed, f"convergence-{i}"),
                              theta0, c.tolerance)
        reports.append(rep)
        rows.append([str(i), runner.fmt_float(rep.v_series[0]), runner.fmt_float(rep.v_series[-1]),
                     runner.fmt_float(rep.ratio), str(rep.converged).lower()])
    valid = reports[0].schedule.valid
    agree = all(r.converged == valid for r in reports)
    runner.write_atomically(conf.outputs.directory, {
        "convergence.csv": runner.csv_text(["run", "v_initial", "v_final", "ratio", "converged"], rows),
        "convergence.json": runner.json_text({
            "scale": float(scale), "power": c.power, "schedule_valid": valid,
            "eta_sum": reports[0].schedule.eta_sum, "eta_sq_sum": reports[0].schedule.eta_sq_sum,
            "converged_runs": sum(r.converged for r in reports), "runs": c.seeds, "passed": agree}),
    })
    verdict = "converges" if valid else "does not converge"
    return _status(agree, f"schedule {'valid' if valid else 'invalid'}; expected it {verdict} on every run "
                          f"({sum(r.converged for r in reports)}/{c.seeds} converged)")


def cmd_equilibrium(args) -> int:
    conf = _load(args.config, args)
    q = conf.equilibrium
    m = conf.n_arms
    rewards = np.array(q.rewards) if q.rewards is not None else np.linspace(-0.05, 0.05, m)
    weights = [a.weight for a in conf.arms]
    alpha = conf.scheduler.alpha
    freqs = np.mean([equilibrium_frequencies(rewards, weights, alpha, q.draws,
                                             substream(conf.seed, f"equilibrium-{i}")) for i in range(q.seeds)],
                    axis=0)
    target = equilibrium_target(rewards, weights, alpha)
    dev = np.abs(freqs - target)
    ok = bool(np.all(dev <= q.tolerance))
    rows = [[str(k), runner.fmt_float(rewards[k]), runner.fmt_float(target[k]), runner.fmt_float(freqs[k]), runner.fmt_float(dev[k])]
            for k in range(m)]
    runner.write_atomically(conf.outputs.directory, {
        "equilibrium.csv": runner.csv_text(["arm", "reward", "target", "frequency", "abs_deviation"], rows),
        "equilibrium.json": runner.json_text({"max_abs_deviation": float(dev.max()), "tolerance": q.tolerance,
                                              "draws": q.draws, "runs": q.seeds, "passed": ok}),
    })
    return _status(ok, f"max absolute deviation {dev.max():.5f} (tolerance {q.tolerance})")


def cmd_drift(args) -> int:
    conf = _load(args.config, args)
    d = conf.drift
    if max(d.p_arm, d.q_arm) >= conf.n_arms or d.p_arm == d.q_arm:
        raise cfg.ConfigError("drift.p_arm/q_arm: two distinct arm indices within range are required")
    env, _ = runner.build_environment(conf)
    demo = sequential_failure_demo(env.theta0, env.risks[d.p_arm], env.risks[d.q_arm], d.p_steps, d.q_steps,
                                   conf.env.learning_rate, conf.env.beta, env.clean)
    head = ["q_step", "avg_risk", "drift_norm", "threshold", "actual_delta", "bound_value", "cos_psi",
            "within_threshold"]
    rows = [[str(i), runner.fmt_float(r), runner.fmt_float(rep.drift_norm), runner.fmt_float(rep.threshold),
             runner.fmt_float(rep.actual_delta), runner.fmt_float(rep.bound_value), runner.fmt_float(rep.cos_psi),
             str(rep.within_threshold).lower()]
            for i, (r, rep) in enumerate(zip(demo.q_phase_risk, demo.reports), start=1)]
    first = demo.reports[0]
    runner.write_atomically(conf.outputs.directory, {
        "drift.csv": runner.csv_text(head, rows),
        "drift.json": runner.json_text({"crossing_step": demo.crossing_step, "cos_psi": first.cos_psi,
                                        "threshold": first.threshold, "lambda_max": first.lambda_max,
                                        "avg_risk_after_p": float(demo.p_phase_risk[-1])}),
    })
    print(f"cos psi {first.cos_psi:.4f}, threshold {first.threshold:.4f}, crossing step {demo.crossing_step}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "tradeoff-matrix": cmd_tradeoff,
    "regret-bench": cmd_regret,
    "convergence-check": cmd_convergence,
    "equilibrium-check": cmd_equilibrium,
    "drift-demo": cmd_drift,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except cfg.ConfigError as exc:
        print(f"casbandit: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"casbandit: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"casbandit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
