"""Command line interface.

`copycart run` executes the whole pipeline; the other subcommands rerun one
stage from the dumps a previous stage left in the output directory, which
keeps long analyses resumable and lets any stage be reproduced in isolation.
Exit codes: 0 success, 1 module error, 2 usage error, 3 balance gate failed.
"""

from __future__ import annotations

import functools
import glob
import json
import os
import sys

import click

from .. import baseline as B
from .. import estimate as E
from .. import sensitivity as S
from ..context import compute_context
from ..dyads import DyadSet, extract_dyads, filter_frequent_pairs, reconstruct_queues, select_additions
from ..errors import CopycartError
from ..infer import feature_matrix, train_status_model, write_predictions_csv
from ..matching import MatchedPairSet, build_matched_pairs
from ..model import serialize_transactions
from ..sim import SimulationConfig, simulate, write_simulation
from .._util import derive_seed
from .config import ConfigError, RunConfig, load_yaml
from .pipeline import ingest_inputs, run_pipeline
from .plots import emit_plots

EXIT_BALANCE = 3


def _fail(err: Exception) -> "click.ClickException":
    mod = type(err).__module__.replace("copycart.", "")
    return click.ClickException(f"[{mod}.{type(err).__name__}] {err}")


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CopycartError as err:
            raise _fail(err) from err

    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="YAML run configuration.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", type=click.Path(), default=None, help="Output directory.")
@click.option("--threads", type=int, default=None, help="Worker threads for per-item analyses.")
@click.option("--require-balance", is_flag=True, default=False,
              help="Exit nonzero when any matched set fails the balance check.")
@click.pass_context
def main(ctx, config_path, seed, out, threads, require_balance):
    """Mimicry analysis for sequential point-of-sale logs."""
    ctx.ensure_object(dict)
    ctx.obj.update(
        config_path=config_path, seed=seed, out=out, threads=threads,
        require_balance=require_balance,
    )


def _run_config(ctx, **extra) -> RunConfig:
    o = ctx.obj
    data = load_yaml(o["config_path"]) if o["config_path"] else {}
    data.update({k: v for k, v in extra.items() if v is not None})
    try:
        return RunConfig.from_dict(
            data,
            seed=o["seed"],
            out=o["out"],
            threads=o["threads"],
            require_balance=True if o["require_balance"] else None,
        )
    except ConfigError as err:
        raise _fail(err) from err


def _stage_inputs(cfg: RunConfig):
    cfg.validate_paths()
    return ingest_inputs(cfg)


def _load_dyads(cfg: RunConfig, log) -> DyadSet:
    path = os.path.join(cfg.out, "dyads.csv")
    if not os.path.exists(path):
        raise click.ClickException(f"missing stage dump {path}; run `copycart dyads` first")
    return DyadSet.from_csv(path, log)


def _load_pairs(cfg: RunConfig, log, items) -> dict:
    dyads = _load_dyads(cfg, log)
    out = {}
    for path in sorted(glob.glob(os.path.join(cfg.out, "matched_pairs", "*.csv"))):
        out.update(MatchedPairSet.from_csv(path, dyads))
    if items:
        missing = [i for i in items if i not in out]
        if missing:
            raise click.ClickException(
                f"no matched pairs dumped for: {', '.join(missing)}; run `copycart match`"
            )
        out = {i: out[i] for i in items}
    return out


def _echo_json(obj) -> None:
    click.echo(json.dumps(obj, indent=2, sort_keys=True))


@main.command("simulate")
@click.option("--sim-config", type=click.Path(exists=True), default=None,
              help="YAML of generator settings.")
@click.option("--set", "assignments", multiple=True, metavar="KEY=VALUE",
              help="Override one generator setting (JSON-parsed value).")
@click.pass_context
@guarded
def simulate_cmd(ctx, sim_config, assignments):
    """Generate a synthetic transaction log with known ground truth."""
    data = load_yaml(sim_config) if sim_config else {}
    for item in assignments:
        key, _, raw = item.partition("=")
        if not _:
            raise click.ClickException(f"--set expects KEY=VALUE, got {item!r}")
        try:
            data[key] = json.loads(raw)
        except json.JSONDecodeError:
            data[key] = raw
    if ctx.obj["seed"] is not None:
        data["seed"] = ctx.obj["seed"]
    if "seed" not in data:
        raise click.ClickException("simulate needs a seed (--seed or config)")
    out = ctx.obj["out"] or "out"
    result = simulate(SimulationConfig.from_dict(data))
    paths = write_simulation(result, out)
    for name in sorted(paths):
        click.echo(f"{name}: {paths[name]}")
    click.echo(f"expected_rd: {result.ground_truth.expected_rd!r}")


@main.command()
@click.pass_context
@guarded
def ingest(ctx):
    """Parse and validate the transaction log; write the canonical dump."""
    cfg = _run_config(ctx)
    log, _catalog, _demo = _stage_inputs(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    dest = os.path.join(cfg.out, "transactions.csv")
    serialize_transactions(log, dest)
    click.echo(f"transactions: {log.n}")
    click.echo(f"persons: {len(log.persons)}")
    click.echo(f"rejected_records: {log.report.n_rejected}")
    click.echo(f"canonical: {dest}")


@main.command()
@click.pass_context
@guarded
def dyads(ctx):
    """Extract adjacent-transaction dyads and keep recurring pairs."""
    cfg = _run_config(ctx)
    log, catalog, _demo = _stage_inputs(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    ctx_stats = compute_context(log, catalog)
    ctx_stats.to_csv(os.path.join(cfg.out, "context.csv"))
    raw = extract_dyads(reconstruct_queues(log), max_gap_s=cfg.max_gap_s,
                        require_anchor=cfg.require_anchor)
    kept = filter_frequent_pairs(raw, cfg.min_pair_count)
    kept.to_csv(os.path.join(cfg.out, "dyads.csv"))
    click.echo(f"dyads_raw: {raw.n}")
    click.echo(f"dyads_kept: {kept.n}")


def _item_option(fn):
    return click.option("--item", "items", multiple=True,
                        help="Focus item key; repeatable. Default: every selected item.")(fn)


def _selected_items(cfg, dyads_set, catalog, items):
    if items:
        return sorted(items)
    per = select_additions(dyads_set, catalog, cfg.min_fraction)
    return sorted({i for lst in per.values() for i in lst})


@main.command()
@_item_option
@click.pass_context
@guarded
def match(ctx, items):
    """Build matched treated/control pairs for each focus item."""
    cfg = _run_config(ctx)
    log, catalog, _demo = _stage_inputs(cfg)
    ctx_stats = compute_context(log, catalog)
    dyads_set = _load_dyads(cfg, log)
    pair_dir = os.path.join(cfg.out, "matched_pairs")
    os.makedirs(pair_dir, exist_ok=True)
    for item in _selected_items(cfg, dyads_set, catalog, items):
        pairs = build_matched_pairs(dyads_set, item, ctx_stats, cfg.adjustment)
        if pairs.n == 0:
            click.echo(f"{item}: no_pairs")
            continue
        pairs.to_csv(os.path.join(pair_dir, f"{item}.csv"))
        click.echo(f"{item}: {pairs.n} pairs ({pairs.n_unmatched} unmatched treated)")


@main.command()
@_item_option
@click.pass_context
@guarded
def estimate(ctx, items):
    """Matched-pair effect estimates from dumped pairs."""
    cfg = _run_config(ctx)
    log, _catalog, _demo = _stage_inputs(cfg)
    for item, pairs in sorted(_load_pairs(cfg, log, items).items()):
        est = E.effect_estimate(pairs, cfg.n_boot, int(derive_seed(cfg.seed, "item", item)))
        _echo_json(est.to_dict())


@main.command()
@_item_option
@click.pass_context
@guarded
def baseline(ctx, items):
    """Re-estimate after shuffling partners within comparable queues."""
    cfg = _run_config(ctx)
    log, catalog, _demo = _stage_inputs(cfg)
    ctx_stats = compute_context(log, catalog)
    dyads_set = _load_dyads(cfg, log)
    for item in _selected_items(cfg, dyads_set, catalog, items):
        rnd = B.randomize_partners(dyads_set, int(derive_seed(cfg.seed, "item", item, "shuffle")))
        pairs = build_matched_pairs(rnd, item, ctx_stats, cfg.adjustment)
        if pairs.n == 0:
            _echo_json({"item": item, "status": "no_pairs"})
            continue
        est = E.effect_estimate(pairs, cfg.n_boot,
                                int(derive_seed(cfg.seed, "item", item, "baseline")))
        _echo_json(est.to_dict(stratum="baseline"))


@main.command()
@_item_option
@click.pass_context
@guarded
def sensitivity(ctx, items):
    """Hidden-bias severity needed to overturn each significant estimate."""
    cfg = _run_config(ctx)
    log, _catalog, _demo = _stage_inputs(cfg)
    for item, pairs in sorted(_load_pairs(cfg, log, items).items()):
        est = E.effect_estimate(pairs, cfg.n_boot, int(derive_seed(cfg.seed, "item", item)))
        _echo_json(S.sensitivity_result(est.counts, cfg.alpha, item).to_dict())


@main.command()
@_item_option
@click.pass_context
@guarded
def dose(ctx, items):
    """Effect by partner-to-focal delay bin, with the fitted trend."""
    cfg = _run_config(ctx)
    log, _catalog, _demo = _stage_inputs(cfg)
    for item, pairs in sorted(_load_pairs(cfg, log, items).items()):
        res = E.dose_response(pairs, n_rep=cfg.n_boot,
                              seed=int(derive_seed(cfg.seed, "item", item, "dose")))
        _echo_json(res.to_dict())


@main.command()
@_item_option
@click.pass_context
@guarded
def coordinate(ctx, items):
    """Compare focal uptake when the pair leader orders first versus second."""
    cfg = _run_config(ctx)
    log, catalog, _demo = _stage_inputs(cfg)
    dyads_set = _load_dyads(cfg, log)
    for item in _selected_items(cfg, dyads_set, catalog, items):
        res = B.coordination_test(dyads_set, item,
                                  seed=int(derive_seed(cfg.seed, "item", item, "coordination")))
        _echo_json(res.to_dict())


@main.command("infer-status")
@click.pass_context
@guarded
def infer_status(ctx):
    """Train the status classifier and predict unlabeled persons."""
    cfg = _run_config(ctx)
    log, _catalog, demo = _stage_inputs(cfg)
    if demo is None:
        raise click.ClickException("infer-status needs a demographics input")
    in_log = set(log.persons)
    labeled = [r.person_id for r in demo.records()
               if r.status in ("student", "staff") and r.person_id in in_log]
    ids, X = feature_matrix(log, labeled)
    model = train_status_model(X, [demo.status_of(p) for p in ids],
                               seed=int(derive_seed(cfg.seed, "infer")))
    unknown = [p for p in log.persons if demo.status_of(p) is None]
    os.makedirs(cfg.out, exist_ok=True)
    dest = os.path.join(cfg.out, "predictions.csv")
    if unknown:
        u_ids, u_X = feature_matrix(log, unknown)
        labels, conf = model.predict(u_X)
        write_predictions_csv(dest, list(u_ids), list(labels), conf.tolist())
    else:
        write_predictions_csv(dest, [], [], [])
    _echo_json({"classes": model.classes, "metrics": model.metrics,
                "n_labeled": len(ids), "n_predicted": len(unknown)})
    click.echo(f"predictions: {dest}")


@main.command()
@click.pass_context
@guarded
def run(ctx):
    """Execute every stage and write the full report."""
    cfg = _run_config(ctx)
    report = run_pipeline(cfg)
    click.echo(f"results: {report.paths['results']}")
    for it in report.results["items"]:
        if it["status"] != "ok":
            click.echo(f"{it['item']}: {it['status']}")
            continue
        est = it["estimate"]
        ci = est["rd_ci"] or (float("nan"), float("nan"))
        click.echo(f"{it['item']}: rd {est['rd']:+.4f} [{ci[0]:+.4f}, {ci[1]:+.4f}] "
                   f"n_pairs {est['n_pairs']}")
    if not report.balance_ok:
        click.echo("balance: FAILED", err=True)
        if cfg.require_balance:
            sys.exit(EXIT_BALANCE)


@main.command()
@click.pass_context
@guarded
def plot(ctx):
    """Re-render the SVG plots from an existing results.json."""
    out = ctx.obj["out"] or "out"
    path = os.path.join(out, "results.json")
    if not os.path.exists(path):
        raise click.ClickException(f"missing {path}; run `copycart run` first")
    with open(path, encoding="utf-8") as fh:
        results = json.load(fh)
    report = emit_plots(results, os.path.join(out, "plots"))
    for name in sorted(report):
        click.echo(f"{name}: {report[name]}")


if __name__ == "__main__":
    main()
