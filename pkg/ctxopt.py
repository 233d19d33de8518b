# ctxopt.py
"""``ctxopt`` command line: fit and evaluate contextual decision models, reproduce and sweep."""
from __future__ import annotations

import functools
import json
import logging

import click
import numpy as np

from config import Config
from errors import CtxoptError, InvalidConfigError
from experiments import (
    ExperimentConfig,
    NewsvendorApp,
    PlacementApp,
    ProducerApp,
    reproduce_illustrative,
    run_experiment,
    run_technology_sweep,
)
from market import MarketSynthConfig, fit_market_dataset, read_bid_stacks, read_hour_features, synthesize_market
from models import BoundedInterval, SplitPlan, read_dataset, write_dataset
from newsvendor import NewsvendorInstance, nv_fit_bl, nv_fit_dr, nv_fit_fo, nv_in_sample_cost
from placement import pl_fit_dr, pl_fit_fo, pl_in_sample_cost, pl_policy_decisions, pl_solve_bl, read_network
from producer import (
    METHODS as PRODUCER_METHODS,
    TECHNOLOGIES,
    ProducerInstance,
    pr_decision_curve,
    pr_fit,
    pr_in_sample_income,
)
from reports import (
    curve_rows,
    format_table,
    illustrative_table,
    method_table,
    sweep_table,
    write_csv,
    write_illustrative,
    write_json,
    write_report,
    write_sweep,
)

logger = logging.getLogger("ctxopt.cli")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def handle_errors(fn):
    """Turn library errors into a clean exit code 1 with the message."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CtxoptError as exc:
            raise click.ClickException(str(exc)) from exc
    return wrapper


def _split_options(fn):
    options = [
        click.option("--bin-size", type=int, default=Config.SPLIT_BIN_SIZE, show_default=True),
        click.option("--train-fraction", type=float, default=Config.SPLIT_TRAIN_FRACTION, show_default=True),
        click.option("--repeats", type=int, default=Config.SPLIT_REPEATS, show_default=True),
        click.option("--seed", "split_seed", type=int, default=Config.SPLIT_SEED, show_default=True),
        click.option("--in-sample", is_flag=True, help="Train and test on the whole dataset."),
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="JSON experiment configuration; replaces the flags."),
        click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Report directory."),
        click.option("--xlsx", is_flag=True, help="Also write report.xlsx."),
        click.option("--workers", type=int, default=None, help="Parallel split workers."),
        click.option("--time-limit", type=float, default=None, help="BL-M seconds per fit."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _methods(value, allowed):
    methods = tuple(m.strip().lower() for m in value.split(",") if m.strip())
    bad = [m for m in methods if m not in allowed]
    if bad or not methods:
        raise click.BadParameter(f"choose from {', '.join(allowed)}", param_hint="--methods")
    return methods


def _experiment(application, methods, instance, data, opts) -> ExperimentConfig:
    if opts["config_path"]:
        return ExperimentConfig.from_json(opts["config_path"])
    if data is None:
        raise click.UsageError("either --data or --config is required")
    plan = SplitPlan(bin_size=opts["bin_size"], train_fraction=opts["train_fraction"],
                     repeats=opts["repeats"], seed=opts["split_seed"])
    return ExperimentConfig(application=application, methods=methods, plan=plan, instance=instance,
                            data_path=data, output=opts["out_dir"], in_sample=opts["in_sample"],
                            time_limit=opts["time_limit"])


def _run_and_report(cfg: ExperimentConfig, opts):
    report = run_experiment(cfg, workers=opts["workers"])
    click.echo(format_table(method_table(report)))
    out_dir = opts["out_dir"] or cfg.output
    if out_dir:
        paths = write_report(report, out_dir, xlsx=opts["xlsx"])
        click.echo(f"Report written to {out_dir} ({', '.join(sorted(paths))})")
    return report


def _emit(payload: dict, out):
    if out:
        write_json(payload, out)
        click.echo(f"Wrote {out}")
    else:
        click.echo(json.dumps(payload, indent=2, default=str))


# ----- Group -----

@click.group()
@click.option("--log-level", default=Config.LOG_LEVEL, show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False),
              help="Write solver tableaux and iterates to this file.")
@click.option("--solve-log", "solve_log_path", type=click.Path(dir_okay=False),
              help="Write the branch-and-bound node log (JSON) to this file.")
@click.pass_context
def cli(ctx, log_level, trace_path, solve_log_path):
    """Decision-aware contextual models: fit, evaluate, reproduce."""
    logging.basicConfig(level=log_level.upper(), format=LOG_FORMAT)
    if trace_path:
        handler = logging.FileHandler(trace_path, mode="w", encoding="utf-8")
        handler.setFormatter(logging.Formatter("%(message)s"))
        trace = logging.getLogger("ctxopt.trace")
        trace.setLevel(logging.DEBUG)
        trace.propagate = False
        trace.addHandler(handler)
        ctx.call_on_close(lambda: (trace.removeHandler(handler), handler.close()))

    ctx.ensure_object(dict)
    ctx.obj["solve_log"] = [] if solve_log_path else None
    if solve_log_path:
        def flush():
            with open(solve_log_path, "w", encoding="utf-8") as fh:
                json.dump(ctx.obj["solve_log"], fh, indent=1, default=str)
        ctx.call_on_close(flush)


# ----- Newsvendor -----

@cli.group()
def newsvendor():
    """Single-item ordering with cost d per unit and revenue r per unit sold."""


@newsvendor.command("fit")
@click.option("--d", "d", type=float, required=True, help="Unit purchase cost.")
@click.option("--r", "r", type=float, required=True, help="Unit revenue.")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--method", type=click.Choice(["fo", "bl", "dr"]), default="bl", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), help="Write coefficients as JSON.")
@handle_errors
def newsvendor_fit(d, r, data, method, out):
    inst = NewsvendorInstance(d, r)
    dataset = read_dataset(data)
    if method == "fo":
        w = nv_fit_fo(inst, dataset)
    elif method == "dr":
        w = nv_fit_dr(inst, dataset)
        click.echo("DR coincides with BL for the newsvendor; reporting the BL fit.", err=True)
    else:
        w = nv_fit_bl(inst, dataset)
    _emit({"method": method, "w": w.w.tolist(), "in_sample_cost": nv_in_sample_cost(inst, w, dataset),
           "critical_ratio": inst.critical_ratio}, out)


@newsvendor.command("evaluate")
@click.option("--d", "d", type=float)
@click.option("--r", "r", type=float)
@click.option("--data", type=click.Path(exists=True, dir_okay=False))
@click.option("--methods", default="bn,fo,bl", show_default=True)
@_split_options
@handle_errors
def newsvendor_evaluate(d, r, data, methods, **opts):
    if not opts["config_path"] and (d is None or r is None):
        raise click.UsageError("--d and --r are required without --config")
    cfg = _experiment("newsvendor", _methods(methods, NewsvendorApp.methods), {"d": d, "r": r}, data, opts)
    _run_and_report(cfg, opts)


# ----- Placement -----

@cli.group()
def placement():
    """Stock placement on a network with shipping and unmet-demand penalties."""


_network_options = [
    click.option("--network", type=click.Path(exists=True, dir_okay=False), help="Arc CSV: origin,end,g."),
    click.option("--nodes", type=click.Path(exists=True, dir_okay=False), help="Node CSV: node,h,r_pen."),
]


def _with_network(fn):
    for option in reversed(_network_options):
        fn = option(fn)
    return fn


@placement.command("fit")
@_with_network
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--method", type=click.Choice(["fo", "dr", "bl-m", "bl-r"]), default="bl-m", show_default=True)
@click.option("--time-limit", type=float, default=None)
@click.option("--out", type=click.Path(dir_okay=False), help="Write the fitted policy as JSON.")
@click.pass_context
@handle_errors
def placement_fit(ctx, network, nodes, data, method, time_limit, out):
    if not (network and nodes):
        raise click.UsageError("--network and --nodes are required")
    net, inst = read_network(network, nodes)
    dataset = read_dataset(data)
    payload = {"method": method}
    if method == "fo":
        policy = pl_fit_fo(inst, net, dataset)
    elif method == "dr":
        policy = pl_fit_dr(inst, net, dataset)
    else:
        mode = "bigm" if method == "bl-m" else "regularized"
        policy, report = pl_solve_bl(inst, net, dataset, mode=mode, time_limit=time_limit,
                                     solve_log=ctx.obj["solve_log"])
        payload["report"] = report.as_dict()
    rule = "rule" if method == "dr" else "surrogate"
    decisions = pl_policy_decisions(inst, net, policy, dataset.contexts, method=rule)
    payload["W"] = policy.W.tolist()
    payload["in_sample_cost"] = pl_in_sample_cost(inst, net, decisions, dataset)
    _emit(payload, out)


@placement.command("evaluate")
@_with_network
@click.option("--data", type=click.Path(exists=True, dir_okay=False))
@click.option("--methods", default="bn,fo,dr,bl-m", show_default=True)
@_split_options
@handle_errors
def placement_evaluate(network, nodes, data, methods, **opts):
    if not opts["config_path"] and not (network and nodes):
        raise click.UsageError("--network and --nodes are required without --config")
    cfg = _experiment("placement", _methods(methods, PlacementApp.methods),
                      {"network": network, "nodes": nodes}, data, opts)
    _run_and_report(cfg, opts)


# ----- Producer -----

@cli.group()
def producer():
    """Strategic producer offering into a market with linear inverse demand."""


def _producer_instance(c1, c2, qmin, qmax):
    if c1 is None or c2 is None or qmax is None:
        raise click.UsageError("--c1, --c2 and --qmax are required")
    return ProducerInstance(c1, c2, BoundedInterval(qmin, qmax))


def _producer_flags(fn):
    options = [
        click.option("--c1", type=float, help="Linear production cost."),
        click.option("--c2", type=float, help="Quadratic production cost."),
        click.option("--qmin", type=float, default=0.0, show_default=True),
        click.option("--qmax", type=float),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@producer.command("fit")
@_producer_flags
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--method", type=click.Choice(PRODUCER_METHODS), default="bl-m", show_default=True)
@click.option("--time-limit", type=float, default=None)
@click.option("--curve-dump", type=click.Path(dir_okay=False),
              help="CSV of offers over a grid of the first feature (single-feature data).")
@click.option("--out", type=click.Path(dir_okay=False), help="Write the fitted policy as JSON.")
@click.pass_context
@handle_errors
def producer_fit(ctx, c1, c2, qmin, qmax, data, method, time_limit, curve_dump, out):
    inst = _producer_instance(c1, c2, qmin, qmax)
    if method == "bn":
        raise click.UsageError("BN needs the realized market parameters and has nothing to fit")
    dataset = read_dataset(data)
    options = {}
    if method == "bl-m":
        options = {"time_limit": time_limit, "solve_log": ctx.obj["solve_log"]}
    policy = pr_fit(method, inst, dataset, **options)
    payload = policy.as_dict()
    payload["in_sample_income"] = pr_in_sample_income(policy, inst, dataset)
    if curve_dump:
        if dataset.feature_dim != 2:
            raise click.UsageError("--curve-dump needs contexts of the form (1, x)")
        _dump_curve(policy, dataset, inst.bounds, curve_dump)
        click.echo(f"Wrote {curve_dump}", err=True)
    _emit(payload, out)


def _dump_curve(policy, dataset, bounds, path):
    x = dataset.contexts[:, 1]
    grid = np.linspace(x.min(), x.max(), 101)
    write_csv(curve_rows(grid, {policy.method: pr_decision_curve(policy, grid, bounds)}), path)


@producer.command("evaluate")
@_producer_flags
@click.option("--data", type=click.Path(exists=True, dir_okay=False))
@click.option("--methods", default="bn,fo,dr,bl-m", show_default=True)
@_split_options
@handle_errors
def producer_evaluate(c1, c2, qmin, qmax, data, methods, **opts):
    instance = {}
    if not opts["config_path"]:
        _producer_instance(c1, c2, qmin, qmax)
        instance = {"c1": c1, "c2": c2, "qmin": qmin, "qmax": qmax}
    cfg = _experiment("producer", _methods(methods, ProducerApp.methods), instance, data, opts)
    _run_and_report(cfg, opts)


@producer.command("sweep")
@click.option("--seeds", type=int, default=5, show_default=True, help="Number of synthetic datasets.")
@click.option("--technologies", default="base,medium,peak", show_default=True)
@click.option("--methods", default="bn,fo,dr,bl-m", show_default=True)
@click.option("--n", "n", type=int, default=400, show_default=True, help="Hours per dataset.")
@click.option("--c2", type=float, default=None, help="Override the quadratic cost of every technology.")
@click.option("--beta-factor", type=float, default=None, help="Multiply every market slope.")
@click.option("--time-limit", type=float, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False))
@click.option("--xlsx", is_flag=True)
@handle_errors
def producer_sweep(seeds, technologies, methods, n, c2, beta_factor, time_limit, workers, out_dir, xlsx):
    names = tuple(t.strip() for t in technologies.split(",") if t.strip())
    unknown = [t for t in names if t not in TECHNOLOGIES]
    if unknown or not names:
        raise click.BadParameter(f"choose from {', '.join(TECHNOLOGIES)}", param_hint="--technologies")
    if seeds < 1:
        raise click.BadParameter("must be at least 1", param_hint="--seeds")
    sweep = run_technology_sweep(technologies=names, seeds=range(seeds), n=n,
                                 methods=_methods(methods, PRODUCER_METHODS), c2=c2,
                                 beta_factor=beta_factor, time_limit=time_limit, workers=workers)
    click.echo(format_table(sweep_table(sweep)))
    if out_dir:
        write_sweep(sweep, out_dir, xlsx=xlsx)
        click.echo(f"Sweep written to {out_dir}")


# ----- Reproduction -----

@cli.group()
def reproduce():
    """Recompute reference results."""


@reproduce.command("illustrative")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Write tables and curve dumps here.")
@handle_errors
def reproduce_illustrative_cmd(out_dir):
    result = reproduce_illustrative()
    click.echo(format_table(illustrative_table(result)))
    if out_dir:
        write_illustrative(result, out_dir)
        click.echo(f"Illustrative outputs written to {out_dir}")
    if result.deviations:
        for line in result.deviations:
            click.echo(f"  - {line}", err=True)
        raise click.ClickException(f"{len(result.deviations)} value(s) deviate from the reference values")
    click.echo("All illustrative values match.")


# ----- Market data -----

@cli.group()
def market():
    """Inverse-demand fitting and synthetic market data."""


@market.command("fit-curves")
@click.option("--bids", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Bid CSV: hour,side,quantity_mw,price.")
@click.option("--features", type=click.Path(exists=True, dir_okay=False), help="Hour feature CSV.")
@click.option("--delta", type=float, default=Config.MARKET_DELTA_MW, show_default=True)
@click.option("--grid", type=int, default=Config.MARKET_GRID_SIZE, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Dataset CSV to write.")
@handle_errors
def market_fit_curves(bids, features, delta, grid, out):
    stacks = read_bid_stacks(bids)
    hour_features = read_hour_features(features) if features else None
    dataset = fit_market_dataset(stacks, hour_features, delta, grid)
    write_dataset(dataset, out)
    click.echo(f"Fitted {len(dataset)} of {len(stacks)} hours into {out}")


@market.command("synth")
@click.option("--n", "n", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON generator settings.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@handle_errors
def market_synth(n, seed, config_path, out):
    cfg = MarketSynthConfig()
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                cfg = MarketSynthConfig.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise InvalidConfigError(f"{config_path}: invalid JSON ({exc})") from exc
    dataset = synthesize_market(cfg, n, seed)
    write_dataset(dataset, out)
    click.echo(f"Wrote {len(dataset)} synthetic hours to {out}")


if __name__ == "__main__":
    cli()
