import os
import sys
import math
import argparse
import logging

from typing import List, Optional

from cobound import settings
from cobound.artifacts import ArtifactSet
from cobound.asymptotics import (
    MartingaleTables,
    check_tail_domination,
    deviation_rows,
    ip_max_discrepancy,
    limit_diagnostics,
    lil_normalized_max,
    martingale_constants,
    rademacher_tail,
    tightness_probe,
)
from cobound.config import COMMANDS, RunConfig, discover, load, parse
from cobound.decomposition import (
    check_condition_2,
    decompose,
    gordin_criterion,
    l2_series_criterion,
    martingale_schedules,
    stationary_decompose,
    verify_decomposition,
)
from cobound.errors import (
    AcceptanceError,
    ConfigError,
    ConvergenceError,
    DomainError,
    ResourceError,
)
from cobound.measure_core import FiniteProbabilitySpace, RandomVariable
from cobound.orlicz import (
    DecreasingFiltrationView,
    Variant,
    backward_projection,
    build_counterexample,
    exp_moment,
    orlicz_norm_lower_bound,
    tail_bound,
    verify_divergence,
)
from cobound.process_models import build_exact

logger = logging.getLogger("cli")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RESOURCE = 3
EXIT_ACCEPTANCE = 4

SUITE_COMMAND = "check-suite"


class Run:
    """
    State of one command: collected artifacts, failed checks, summary output.
    """

    def __init__(self, config: RunConfig, threads=None, quiet=False):
        self.config = config
        self.threads = settings.thread_count(threads)
        self.quiet = quiet
        self.artifacts = ArtifactSet()
        self.failures = []

    def say(self, line):
        if not self.quiet:
            print(line)

    def expect(self, name, ok, detail):
        if not ok:
            self.failures.append((name, detail))

    def checks(self, name):
        return name in self.config.checks

    def check_value(self, name):
        return self.config.checks[name]


def _k_range(config: RunConfig):
    k_range = config.get("k_range")
    if k_range is None:
        return None
    if not isinstance(k_range, list) or len(k_range) != 2:
        raise ConfigError("k_range must be [first, last]")
    return (int(k_range[0]), int(k_range[1]))


def _decomposed(run: Run):
    process = build_exact(run.config.model.exact_model())
    result = decompose(process, _k_range(run.config), run.config.get("I_max"))
    return (process, result)


def _decomposition_csv(run: Run, process, result):
    run.artifacts.add_csv(
        "decomposition.csv",
        result.summary_rows(process),
        ("k", "V_l1", "W_l1", "U_l2", "residual"),
    )


def run_decompose(run: Run):
    (process, result) = _decomposed(run)
    run.artifacts.add_json("decomposition.json", result.to_json(process))
    _decomposition_csv(run, process, result)

    residuals = []
    for row in result.summary_rows(process):
        residuals.append(row["residual"])
        run.say(
            f"k={row['k']:>4}  |V|_1={row['V_l1']:.6g}  |W|_1={row['W_l1']:.6g}  "
            f"|U|_2={row['U_l2']:.6g}  residual={row['residual']:.3g}"
        )

    if run.checks("residual"):
        worst = max(residuals)
        run.expect("residual", worst <= run.check_value("residual"), f"max residual {worst:.3g}")
    if run.checks("exact"):
        run.expect(
            "exact",
            result.exact_flag == bool(run.check_value("exact")),
            f"exact flag is {result.exact_flag}",
        )


def run_verify(run: Run):
    (process, result) = _decomposed(run)
    report = verify_decomposition(result, process)
    (first, last) = result.k_range
    center = (first + last) // 2
    condition_2 = check_condition_2(result, process, center, run.config.get("j_max"))

    run.artifacts.add_json(
        "verification.json",
        {
            "report": report.as_dict(),
            "exact": result.exact_flag,
            "truncation_index": result.truncation_index,
            "k_range": list(result.k_range),
            "tail": {
                str(k): {side: entry.as_dict() for (side, entry) in sides.items()}
                for (k, sides) in result.tail_report.items()
            },
            "condition_2": condition_2.as_dict(),
        },
    )
    _decomposition_csv(run, process, result)

    for (name, value) in report.as_dict().items():
        run.say(f"{name:>22}: {value:.3g}")
    run.say(f"{'exact':>22}: {result.exact_flag}")

    if run.checks("residual"):
        tol = run.check_value("residual")
        for (name, value) in report.as_dict().items():
            run.expect("residual", value <= tol, f"{name} = {value:.3g}")
    if run.checks("vanishes_beyond"):
        j0 = run.check_value("vanishes_beyond")
        for column in ("forward", "backward"):
            run.expect(
                "vanishes_beyond",
                condition_2.vanishes_beyond(j0, column),
                f"{column} column does not vanish beyond j={j0}",
            )


def run_stationary(run: Run):
    model = run.config.model.stationary_model()
    decomposition = stationary_decompose(model, run.config.get("I_max"))
    n_max = run.config.get("n_max", 4)
    l2 = l2_series_criterion(model, n_max)
    (forward, backward) = gordin_criterion(
        model.process, run.config.get("p", 2), run.config.get("i_max", 3)
    )

    run.artifacts.add_json(
        "stationary.json",
        {
            "report": decomposition.report,
            "l2_terms": l2.terms.tolist(),
            "l2_partial_sums": l2.partial_sums.tolist(),
            "gordin_forward": forward.tolist(),
            "gordin_backward": backward.tolist(),
        },
    )
    run.say(f"f = m + g - g o T residual: {decomposition.report['coboundary_residual']:.3g}")
    run.say("L2 series partial sums: " + ", ".join(f"{v:.6g}" for v in l2.partial_sums))

    if run.checks("residual"):
        tol = run.check_value("residual")
        for name in ("coboundary_residual", "shift_residual", "martingale_residual"):
            value = decomposition.report[name]
            run.expect("residual", value <= tol, f"{name} = {value:.3g}")
    if run.checks("l2_constant_from"):
        n = run.check_value("l2_constant_from")
        run.expect(
            "l2_constant_from",
            n <= n_max and l2.constant_from(n),
            f"partial sums not constant from n={n}",
        )


def run_orlicz(run: Run):
    config = run.config
    K_max = config.get("K_max", 200)
    N_max = config.get("N_max", 20)
    tol = config.get("tol", settings.TOL)
    try:
        variant = Variant(config.get("variant", "orlicz"))
    except ValueError:
        raise ConfigError("variant must be 'orlicz' or 'linf'")

    layout = build_counterexample(K_max, N_max, tol, variant)
    view = DecreasingFiltrationView(layout)
    projections = [backward_projection(layout, n) for n in range(1, N_max + 1)]
    masses = [
        {"n": n, "mass": layout.block_mass(n), "deviation": abs(layout.block_mass(n) - 2.0**-n)}
        for n in range(1, N_max + 1)
    ]

    run.artifacts.add_csv(
        "layout.csv", layout.rows(), ("n", "k", "sign", "left", "length", "value")
    )

    certificates = []
    if config.get("lambda") is not None:
        certificate = verify_divergence(
            layout,
            config.get("n", 1),
            config.get("lambda"),
            config.get("M", 2.0),
            k_cap=config.get("k_cap", settings.DIVERGENCE_K_CAP),
        )
        certificates.append(certificate.as_dict())
        run.say(
            f"n={certificate.n} lambda={certificate.lam} M={certificate.M}: "
            f"k_star={certificate.k_star} partial sum={certificate.partial_sum:.6g}"
        )

    bounds = []
    if variant is Variant.ORLICZ:
        scales = config.get("scales", [0.9, 0.95, 0.99])
        for n in range(1, min(5, N_max) + 1):
            bound = orlicz_norm_lower_bound(layout, n, scales=scales)
            bounds.append(bound.as_dict())
            run.say(f"n={n}: Orlicz norm >= {bound.bound}")
    moment = exp_moment(layout)

    run.artifacts.add_json("certificates.json", certificates)
    run.artifacts.add_json(
        "orlicz.json",
        {
            "K_max": K_max,
            "N_max": N_max,
            "variant": variant.value,
            "c": layout.c,
            "tail_mass": layout.tail_mass,
            "decreasing": view.is_decreasing(),
            "block_masses": masses,
            "projections": [p.as_dict() for p in projections],
            "lower_bounds": bounds,
            "exp_moment": moment.value,
            "exp_moment_half_width": moment.half_width,
        },
    )
    run.say(f"E exp|X| = {moment.value:.10g} +- {moment.half_width:.2g}")

    if run.checks("block_mass_tol"):
        tol = run.check_value("block_mass_tol")
        upto = config.checks.get("block_mass_n", N_max)
        for m in masses[:upto]:
            run.expect("block_mass_tol", m["deviation"] <= tol, f"|mu(B_{m['n']}) - 2^-n| = {m['deviation']:.3g}")
    if run.checks("projection_tol"):
        tol = run.check_value("projection_tol")
        run.expect("projection_tol", view.is_decreasing(), "filtration is not decreasing")
        for p in projections:
            run.expect("projection_tol", p.residual <= tol, f"E(X|F_{p.n}) residual {p.residual:.3g}")
    if run.checks("norm_lower_bound"):
        target = run.check_value("norm_lower_bound")
        run.expect("norm_lower_bound", bool(bounds), "no lower bounds for the linf variant")
        for b in bounds:
            run.expect("norm_lower_bound", b["bound"] >= target, f"n={b['n']}: bound {b['bound']}")
    if run.checks("exp_moment_tol"):
        run.expect(
            "exp_moment_tol",
            math.isfinite(moment.value) and moment.half_width <= run.check_value("exp_moment_tol"),
            f"half width {moment.half_width:.3g}",
        )
    if run.checks("linf") and run.check_value("linf"):
        _check_linf(run, K_max, N_max, tol)


def _check_linf(run: Run, K_max, N_max, tol):
    layout = build_counterexample(K_max, N_max, tol, Variant.LINF)
    slack = 2.0**-N_max + 2.0 * tail_bound(K_max) + settings.EXACT_TOL
    for n in range(1, N_max + 1):
        projection = backward_projection(layout, n)
        run.expect(
            "linf",
            abs(projection.linf_norm - 1.0) <= settings.EXACT_TOL,
            f"||X_{n}||_inf = {projection.linf_norm}",
        )
        run.expect(
            "linf",
            abs(projection.c_mass - 2.0 ** (1 - n)) <= slack,
            f"mu(C_{n}) = {projection.c_mass}",
        )


def _replicas(config: RunConfig):
    replicas = config.get("replicas")
    if not isinstance(replicas, int) or replicas < 1:
        raise ConfigError("parameters.replicas must be a positive integer")
    return replicas


def run_deviations(run: Run):
    config = run.config
    sampler = config.model.sampler()
    (_process, result) = _decomposed(run)
    (a, b) = martingale_constants(result)
    replicas = _replicas(config)

    rows = deviation_rows(
        sampler,
        config.get("n_list", [64, 256, 1024]),
        config.get("x_list", [0.3, 0.5, 0.8]),
        replicas,
        a,
        b,
        lam=config.get("lambda"),
        eps=config.get("eps", 0.0),
        threads=run.threads,
        quiet=run.quiet,
    )
    run.artifacts.add_csv(
        "deviations.csv", rows, ("n", "x", "p_hat", "ci", "bound_ii", "bound_iii", "eps")
    )
    run.artifacts.describe(a=a, b=b)
    for row in rows:
        run.say(
            f"n={row['n']:>6} x={row['x']:<5} p_hat={row['p_hat']:.5f} +- {row['ci']:.5f}"
            f"  azuma={row['bound_ii']}"
        )

    if run.checks("azuma") and run.check_value("azuma"):
        for row in rows:
            bound = row["bound_ii"]
            run.expect(
                "azuma",
                bound is not None and row["p_hat"] - row["ci"] <= bound,
                f"n={row['n']} x={row['x']}: p_hat={row['p_hat']} bound={bound}",
            )
    if run.checks("binomial_oracle") and run.check_value("binomial_oracle"):
        for row in rows:
            exact = rademacher_tail(row["n"], row["x"])
            run.expect(
                "binomial_oracle",
                abs(row["p_hat"] - exact) <= row["ci"] + settings.EXACT_TOL,
                f"n={row['n']} x={row['x']}: p_hat={row['p_hat']} exact={exact:.6g}",
            )


def _dominating_variable(config: RunConfig, U_sup) -> RandomVariable:
    z = config.get("z")
    if z is None:
        return FiniteProbabilitySpace([1.0]).constant(U_sup)
    if not isinstance(z, dict) or set(z) != {"values", "probabilities"}:
        raise ConfigError("parameters.z must be {\"values\": [...], \"probabilities\": [...]}")
    return FiniteProbabilitySpace(z["probabilities"]).variable(z["values"])


def run_limits(run: Run):
    config = run.config
    (process, result) = _decomposed(run)
    sampler = config.model.sampler()
    tables = MartingaleTables(process, result)
    n_list = config.get("n_list", [100, 1000, 10000])
    replicas = config.get("replicas")
    ks_n = config.get("ks_n", [])

    diagnostics = limit_diagnostics(
        process,
        result,
        n_list,
        eps=config.get("eps", 0.1),
        sampler=sampler if ks_n else None,
        replicas=replicas,
        threads=run.threads,
        quiet=run.quiet,
        ks_n=ks_n,
        tables=tables,
    )
    run.artifacts.add_csv(
        "limits.csv",
        [r.as_dict() for r in diagnostics],
        ("n", "sigma_n", "sigma_bar_n", "ratio", "g1", "cond5", "cond6", "ks"),
    )
    for r in diagnostics:
        run.say(
            f"n={r.n:>6} sigma^2={r.sigma2:.6g} sigma_bar^2={r.sigma_bar2:.6g} "
            f"g1={r.g1:.4g} cond5={r.cond5:.4g} cond6={r.cond6:.4g} ks={r.ks}"
        )

    ip_stats = []
    if config.get("ip_n"):
        schedules = martingale_schedules(result, process)
        for n in config.get("ip_n"):
            ip_stats.append(
                ip_max_discrepancy(
                    sampler, tables, schedules, n, _replicas(config),
                    threads=run.threads, quiet=run.quiet,
                )
            )
        run.artifacts.add_csv(
            "ip.csv",
            [s.as_dict() for s in ip_stats],
            ("n", "p99", "bound_p99", "bound_holds", "stated_bound_p99", "max", "replicas", "seed"),
        )

    lil_stats = []
    tail_domination = None
    if config.get("lil_n"):
        (_Y, U_schedule) = martingale_schedules(result, process)
        for n in config.get("lil_n"):
            lil_stats.append(
                lil_normalized_max(
                    sampler, U_schedule, n, _replicas(config),
                    threads=run.threads, quiet=run.quiet,
                )
            )
        run.artifacts.add_csv(
            "lil.csv",
            [s.as_dict() for s in lil_stats],
            ("n", "p99", "max", "replicas", "seed"),
        )
        if config.get("x_grid"):
            (_a, b) = martingale_constants(result)
            Z = _dominating_variable(config, b)
            tail_domination = check_tail_domination(
                process, result, Z, config.get("lil_n"), config.get("x_grid")
            )
            run.artifacts.add_csv(
                "tail_domination.csv", tail_domination.rows, ("n", "x", "lhs", "rhs", "holds")
            )

    run.artifacts.add_json(
        "limits.json",
        {
            "exact": diagnostics.exact,
            "eps": diagnostics.eps,
            "martingale_part_degenerate": diagnostics.martingale_part_degenerate,
            "ratio_constants": diagnostics.ratio_constants(),
            "g1_telescoped": {str(r.n): r.g1_telescoped for r in diagnostics},
        },
    )
    if diagnostics.martingale_part_degenerate:
        run.say("martingale part is degenerate: sigma_n^2 / n vanishes")

    _limit_checks(run, diagnostics, ip_stats, tail_domination)


def _limit_checks(run: Run, diagnostics, ip_stats, tail_domination):
    if run.checks("expected"):
        expected = run.check_value("expected")
        tol = run.config.checks.get("moments_tol", 1e-9)
        for r in diagnostics:
            for (name, value) in (("sigma2", r.sigma2), ("sigma_bar2", r.sigma_bar2)):
                if name in expected:
                    (slope, intercept) = expected[name]
                    target = slope * r.n + intercept
                    run.expect(
                        "expected",
                        abs(value - target) <= tol * max(1.0, abs(target)),
                        f"n={r.n}: {name}={value} expected {target}",
                    )
            if "g1_squared_times_n" in expected:
                target = math.sqrt(expected["g1_squared_times_n"] / r.n)
                run.expect("expected", abs(r.g1 - target) <= tol, f"n={r.n}: g1={r.g1}")
    if run.checks("g1_consistency"):
        tol = run.check_value("g1_consistency")
        for r in diagnostics:
            run.expect(
                "g1_consistency",
                abs(r.g1 - r.g1_telescoped) <= tol,
                f"n={r.n}: {r.g1} vs {r.g1_telescoped}",
            )
    if run.checks("ks_threshold"):
        threshold = run.check_value("ks_threshold")
        for r in diagnostics:
            if r.ks is not None:
                run.expect("ks_threshold", r.ks < threshold, f"n={r.n}: ks={r.ks:.4g}")
    if run.checks("ip_monotone") and run.check_value("ip_monotone"):
        p99 = [s.percentile_99 for s in ip_stats]
        run.expect(
            "ip_monotone",
            all(b < a for (a, b) in zip(p99, p99[1:])),
            f"99th percentiles {p99}",
        )
    if run.checks("ip_bound") and run.check_value("ip_bound"):
        for s in ip_stats:
            run.expect(
                "ip_bound",
                s.bound_holds() and s.percentile_99 <= s.bound_percentile_99,
                f"n={s.n}: p99={s.percentile_99} bound p99={s.bound_percentile_99}",
            )
    if run.checks("martingale_part_degenerate"):
        wanted = bool(run.check_value("martingale_part_degenerate"))
        run.expect(
            "martingale_part_degenerate",
            diagnostics.martingale_part_degenerate == wanted,
            f"degenerate martingale part is {diagnostics.martingale_part_degenerate}",
        )
    if run.checks("tail_domination") and run.check_value("tail_domination"):
        run.expect(
            "tail_domination",
            tail_domination is not None and tail_domination.holds,
            "tail domination fails at "
            + ("no grid" if tail_domination is None else str(tail_domination.failures()[:3])),
        )


def run_tightness(run: Run):
    config = run.config
    report = tightness_probe(
        config.model.sampler(),
        config.get("n_list", [10, 100, 1000, 10000]),
        _replicas(config),
        q=config.get("q", 0.99),
        threads=run.threads,
        quiet=run.quiet,
    )
    run.artifacts.add_csv("tightness.csv", report.as_rows(), ("n", "q", "quantile"))
    for row in report.as_rows():
        run.say(f"n={row['n']:>6} q={row['q']} quantile={row['quantile']:.6g}")
    run.say(f"looks bounded: {report.looks_bounded}")

    if run.checks("max_quantile"):
        limit = run.check_value("max_quantile")
        for row in report.as_rows():
            run.expect("max_quantile", row["quantile"] <= limit, f"n={row['n']}: {row['quantile']}")
    if run.checks("bounded"):
        run.expect(
            "bounded",
            report.looks_bounded == bool(run.check_value("bounded")),
            f"looks bounded is {report.looks_bounded}",
        )


HANDLERS = {
    "decompose": run_decompose,
    "verify": run_verify,
    "stationary": run_stationary,
    "orlicz": run_orlicz,
    "deviations": run_deviations,
    "limits": run_limits,
    "tightness": run_tightness,
}


def _out_dir(config: RunConfig, out=None):
    if out:
        return out
    if config.get("out"):
        return config.resolve(config.get("out"))
    return os.path.join(os.getcwd(), "cobound-out", config.name)


def run(config: RunConfig, check=False, out=None, threads=None, quiet=False) -> Run:
    """
    Executes one command and commits its artifacts. In check mode failed
    acceptance criteria raise AcceptanceError after the artifacts are written.
    """
    state = Run(config, threads, quiet)
    HANDLERS[config.command](state)

    state.artifacts.describe(
        command=config.command,
        config=config.data,
        seed=config.model.seed if config.model else None,
        replicas=config.get("replicas"),
        threads=state.threads,
    )
    state.artifacts.commit(_out_dir(config, out))

    if check and state.failures:
        raise AcceptanceError(state.failures)
    return state


def check_suite(config_dir, out=None, threads=None, quiet=False) -> int:
    paths = discover(config_dir)
    if not paths:
        logger.warning("no configs in %s; nothing to check", config_dir)
        return EXIT_OK

    status = EXIT_OK
    for path in paths:
        name = os.path.splitext(os.path.basename(path))[0]
        target = os.path.join(out, name) if out else None
        code = EXIT_OK
        detail = ""
        try:
            run(load(path), check=True, out=target, threads=threads, quiet=True)
        except AcceptanceError as e:
            code = EXIT_ACCEPTANCE
            detail = "; ".join(f"{n}: {d}" for (n, d) in e.failures)
        except (ConfigError, DomainError) as e:
            code = EXIT_INVALID
            detail = str(e)
        except (ResourceError, ConvergenceError) as e:
            code = EXIT_RESOURCE
            detail = str(e)

        if code == EXIT_OK:
            if not quiet:
                print(f"PASS {name}")
        else:
            print(f"FAIL {name}: {detail}")
            if status in (EXIT_OK, EXIT_ACCEPTANCE):
                status = code
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cobound",
        description="Martingale-coboundary decompositions and their diagnostics.",
    )
    parser.add_argument("command", choices=COMMANDS + (SUITE_COMMAND,))
    parser.add_argument(
        "--config", metavar="PATH", help="run config (a directory for check-suite)"
    )
    parser.add_argument("--check", action="store_true", help="enforce the config's checks")
    parser.add_argument("--quiet", action="store_true", help="no summary output")
    parser.add_argument("--out", metavar="DIR", help="artifact directory")
    parser.add_argument("--threads", type=int, metavar="N", help="worker threads")
    orlicz = parser.add_argument_group("orlicz")
    orlicz.add_argument("--n", type=int, help="backward filtration index")
    orlicz.add_argument("--lambda", dest="lam", type=float, help="exponent scale, > 1")
    orlicz.add_argument("--M", type=float, help="partial-sum target")
    return parser


def _config_from_args(args) -> RunConfig:
    if args.config:
        config = load(args.config)
        if config.command != args.command:
            raise ConfigError(
                f"config is for {config.command}, not {args.command}"
            )
    elif args.command == "orlicz":
        config = parse({"command": "orlicz", "parameters": {}})
    else:
        raise ConfigError(f"{args.command} needs --config")

    overrides = {"n": args.n, "lambda": args.lam, "M": args.M}
    if any(v is not None for v in overrides.values()):
        if config.command != "orlicz":
            raise ConfigError("--n, --lambda and --M only apply to orlicz")
        if args.lam is None and config.get("lambda") is None:
            raise ConfigError("--n and --M need --lambda")
        config.parameters.update({k: v for (k, v) in overrides.items() if v is not None})
    return config


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        if args.command == SUITE_COMMAND:
            if not args.config:
                raise ConfigError("check-suite needs --config DIR")
            return check_suite(args.config, args.out, args.threads, args.quiet)
        config = _config_from_args(args)
        run(config, args.check, args.out, args.threads, args.quiet)
    except (ConfigError, DomainError) as e:
        logger.error("%s", e)
        return EXIT_INVALID
    except (ResourceError, ConvergenceError) as e:
        logger.error("%s", e)
        return EXIT_RESOURCE
    except AcceptanceError as e:
        for (name, detail) in e.failures:
            logger.error("%s: %s", name, detail)
        return EXIT_ACCEPTANCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
