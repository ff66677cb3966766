"""``harq-delay`` command line: analyze, optimize, simulate and sweep.

Exit status: 0 on success, 1 on invalid input, 2 when the queue is unstable
or the optimisation has no feasible policy.
"""
import argparse
import io
import math
import sys

from . import config as cfgmod
from .analytics import delay_report
from .config import ConfigError, RunConfig, fmt_float
from .errors import HarqDelayError, QueueExplosion, UnstableQueue
from .mi_stats import mi_moments
from .optimizer import optimize
from .simulator import SimConfig, TraceWriter, run

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE = 0, 1, 2

SWEEP_HEADER = ("sweep_var", "value", "scheme", "feasible", "objective_s", "p_out", "n", "alphas")
COMPARE_HEADER = ("quantity", "analytic", "empirical", "half_width_95", "tolerance", "pass")
SWEEP_KEYS = {
    "snr_f": "feedback.snr_f_db",
    "snr_d": "channel.snr_d_db",
    "epsilon": "problem.epsilon",
    "lambda0": "queue.lambda0",
}


def _v(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return fmt_float(x)
    return str(x)


def render(rows, fmt, header=("quantity", "value")):
    buf = io.StringIO()
    if fmt == "csv":
        buf.write(",".join(header) + "\n")
        for row in rows:
            buf.write(",".join(_v(c) for c in row) + "\n")
    else:
        cells = [[_v(c) for c in row] for row in rows]
        widths = [max([len(h)] + [len(r[i]) for r in cells]) for i, h in enumerate(header)]
        buf.write("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip() + "\n")
        for r in cells:
            buf.write("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n")
    return buf.getvalue()


def _emit(text, out_path):
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def load_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfgmod.load(args.config, into=cfg)
    if getattr(args, "policy", None):
        pol = cfgmod.load(args.policy)
        cfg.merge(pol, prefix="policy.")
    cfgmod.apply_overrides(cfg, args.set)
    if getattr(args, "seed", None) is not None:
        cfg.set("sim.seed", str(args.seed), "--seed")
    if getattr(args, "threads", None) is not None:
        cfg.set("optimizer.threads", str(args.threads), "--threads")
        cfg.set("sim.workers", str(args.threads), "--threads")
    return cfg


def report_rows(report):
    return list(report.as_dict().items())


def cmd_analyze(cfg: RunConfig, fmt="text"):
    policy = cfg.policy()
    channel = cfg.channel()
    report = delay_report(policy, channel, cfg.feedback(policy), cfg.queue(), strict=False)
    rows = [("policy.n", ";".join(map(str, policy.n))),
            ("policy.alphas", ";".join(fmt_float(a) for a in policy.alphas))]
    rows += report_rows(report)
    return report, render(rows, fmt)


def cmd_optimize(cfg: RunConfig, fmt="text"):
    problem = cfg.problem()
    result = optimize(problem, cfg.optimizer())
    pol = result.best_policy
    rows = [
        ("scheme", result.scheme),
        ("feasible", result.feasible),
        ("objective_s", result.objective),
        ("policy.n", ";".join(map(str, pol.n))),
        ("policy.alphas", ";".join(fmt_float(a) for a in pol.alphas)),
        ("cells_evaluated", result.cells_evaluated),
        ("cells_total", result.cells_total),
        ("pgd_iterations", result.pgd_iterations_total),
    ]
    if not result.feasible:
        rows.append(("violation", result.violation))
    rows += report_rows(result.best_report)
    return result, render(rows, fmt)


def policy_file(cfg: RunConfig, result) -> str:
    """A self-contained config that pins the optimised policy."""
    out = RunConfig(dict(cfg.values), dict(cfg.origins))
    if result.scheme == "perfect":
        out.values["feedback.snr_f_db"] = math.inf
    return cfgmod.dump(out, result.best_policy, {
        "objective_s": float(result.objective),
        "p_out": float(result.best_report.p_out),
        "feasible": bool(result.feasible),
    })


def sim_config(cfg: RunConfig) -> SimConfig:
    policy = cfg.policy()
    try:
        return SimConfig(
            policy=policy,
            channel=cfg.channel(),
            feedback=cfg.feedback(policy),
            queue=cfg.queue(),
            num_packets=cfg.get("sim.num_packets"),
            warmup_packets=cfg.get("sim.warmup_packets"),
            seed=cfg.get("sim.seed"),
            use_gaussian_mi=cfg.get("sim.use_gaussian_mi"),
            occupy_during_feedback=cfg.get("sim.occupy_during_feedback"),
            replications=cfg.get("sim.replications"),
            workers=max(1, cfg.get("sim.workers")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), cfg._first_origin("sim.")) from None


def _prob_row(name, analytic, est, k_sigma=3.0):
    tol = k_sigma * est.std_error
    ok = bool(abs(analytic - est.mean) <= tol + 1e-12)
    return (name, float(analytic), est.mean, est.half_width_95, f"{k_sigma:g} sigma", ok)


def _rel_row(name, analytic, est, rel):
    ok = bool(math.isfinite(analytic) and abs(est.mean - analytic) <= rel * abs(analytic))
    return (name, float(analytic), est.mean, est.half_width_95, f"{rel:.0%} rel", ok)


def comparison_rows(report, sim):
    rows = []
    for i, (a, e) in enumerate(zip(report.p_fail, sim.p_fail), start=1):
        rows.append(_prob_row(f"p_fail[{i}]", a, e))
    for i, (a, e) in enumerate(zip(report.p_occur, sim.p_occur), start=1):
        rows.append(_prob_row(f"p_occur[{i}]", a, e))
    rows.append(_prob_row("p_out", report.p_out, sim.p_out))
    per_attempt = report.sum_t_p / float(report.p_occur.sum())
    rows.append(_rel_row("service_per_attempt_s", per_attempt, sim.mean_service, 0.05))
    rows.append(_rel_row("t_queue_s", report.t_queue, sim.mean_queue_wait, 0.05))
    rows.append(_rel_row("avg_delay_s", report.avg_delay, sim.mean_delay, 0.10))
    rows.append(_rel_row("expected_rtts", report.expected_rtts, sim.mean_rtt_count, 0.10))
    return rows


def cmd_simulate(cfg: RunConfig, fmt="text"):
    sc = sim_config(cfg)
    report = delay_report(sc.policy, sc.channel, sc.feedback, sc.queue, strict=False)
    trace_path = cfg.get("sim.trace")
    if trace_path:
        with open(trace_path, "w", encoding="utf-8", newline="") as fh:
            sim = run(sc, trace=TraceWriter(fh))
    else:
        sim = run(sc)
    rows = comparison_rows(report, sim)
    text = render(rows, fmt, COMPARE_HEADER)
    if fmt == "text":
        text += (f"# rounds={sim.rounds} packets={sim.packets} jobs={sim.jobs} "
                 f"max_queue={sim.max_queue_length} seed={sim.seed} backend={sim.backend}\n"
                 f"# rng: {sim.rng}\n")
    return report, sim, text


def sweep_rows(cfg: RunConfig):
    var = cfg.sweep_var()
    key = SWEEP_KEYS[var]
    values = cfg.sweep_values()
    schemes = cfg.get("sweep.schemes")
    # validate every point before spending time on any of them
    points = []
    for v in values:
        point = RunConfig(dict(cfg.values), dict(cfg.origins))
        point.values[key] = float(v)
        point.origins[key] = f"sweep point {var}={v!r}"
        for s in schemes:
            point.problem(s)
        points.append((v, point))
    opt = cfg.optimizer()
    moments_cache = {}
    for v, point in points:
        for s in schemes:
            problem = point.problem(s)
            ch = problem.channel
            if ch not in moments_cache:
                moments_cache[ch] = mi_moments(ch)
            res = optimize(problem, opt, moments_cache[ch])
            yield (var, float(v), s, int(res.feasible), float(res.objective),
                   float(res.best_report.p_out), ";".join(map(str, res.best_policy.n)),
                   ";".join(fmt_float(a) for a in res.best_policy.alphas))


def cmd_sweep(cfg: RunConfig, fmt="csv"):
    rows = list(sweep_rows(cfg))
    return rows, render(rows, fmt, SWEEP_HEADER)


def build_parser():
    p = argparse.ArgumentParser(prog="harq-delay", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value configuration file")
    common.add_argument("--out", metavar="PATH", help="write output here instead of stdout")
    common.add_argument("--format", choices=("csv", "text"), default=None)
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None)
    sub = p.add_subparsers(dest="command", required=True)
    a = sub.add_parser("analyze", parents=[common], help="analytic delay report for a given policy")
    a.add_argument("--policy", metavar="PATH", help="policy file written by 'optimize'")
    o = sub.add_parser("optimize", parents=[common], help="optimise attempt lengths and detection indices")
    o.add_argument("--policy-out", metavar="PATH", help="write the optimised policy as a reusable config")
    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo run against the analytic report")
    s.add_argument("--policy", metavar="PATH", help="policy file written by 'optimize'")
    w = sub.add_parser("sweep", parents=[common], help="optimise every scheme over a parameter sweep")
    w.add_argument("--var", choices=cfgmod.SWEEP_VARS, default=None)
    w.add_argument("--values", default=None, help="comma separated list")
    w.add_argument("--range", dest="range_", default=None, metavar="START:STOP:STEP")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "analyze":
            report, text = cmd_analyze(cfg, args.format or "text")
            _emit(text, args.out)
            if not report.stable:
                print(f"error: unstable queue (utilization={report.utilization:.6g}, load={report.load:.6g})",
                      file=sys.stderr)
                return EXIT_INFEASIBLE
        elif args.command == "optimize":
            result, text = cmd_optimize(cfg, args.format or "text")
            _emit(text, args.out)
            if args.policy_out:
                with open(args.policy_out, "w", encoding="utf-8") as fh:
                    fh.write(policy_file(cfg, result))
            if not result.feasible:
                print("error: no policy meets the outage limit with a stable queue", file=sys.stderr)
                return EXIT_INFEASIBLE
        elif args.command == "simulate":
            report, _, text = cmd_simulate(cfg, args.format or "text")
            _emit(text, args.out)
            if not report.stable:
                print("warning: analytic queue is unstable", file=sys.stderr)
        else:
            if args.var:
                cfg.set("sweep.var", args.var, "--var")
            if args.values is not None:
                cfg.set("sweep.values", args.values, "--values")
            if args.range_ is not None:
                cfg.set("sweep.range", args.range_, "--range")
            _, text = cmd_sweep(cfg, args.format or "csv")
            _emit(text, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (UnstableQueue, QueueExplosion) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (HarqDelayError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
