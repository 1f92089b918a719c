"""Experiment runner CLI: `run <config>`, `compare <reports...>`,
`gen-data <spec> <out>`.

Run configs are YAML trees (see README for the schema). Exit codes:
0 success, 1 config error, 2 runtime error.
"""

import argparse
import os
import sys
from pathlib import Path

import yaml

from .baselines import StrategyError, StrategySpec, build_clients
from .data import (CsvParseError, DataConfigError, SyntheticSpec,
                   generate_synthetic, load_csv, save_csv)
from .federation import (FederationConfig, FederationError, TrainingDivergence,
                         evaluate_client, run_training, serialize_store)
from .report import (ReportWriter, read_report, render_comparison_figure,
                     render_training_figure, write_metrics_csv)

SEED_ENV = "AUTOFED_SEED"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class ConfigError(ValueError):
    pass


def _require(mapping, key, context):
    if key not in mapping:
        raise ConfigError(f"missing field {context}.{key}" if context else
                          f"missing field {key}")
    return mapping[key]


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return raw


def resolve_config(raw, base_dir):
    """Validate the raw tree and fill defaults; returns a plain dict that is
    embedded verbatim in the report header."""
    strategy = raw.get("strategy", {"name": "autofed"})
    if isinstance(strategy, str):
        strategy = {"name": strategy}
    spec = StrategySpec(
        name=_require(strategy, "name", "strategy"),
        without_ae=bool(strategy.get("without_ae", False)),
        without_fedbn=bool(strategy.get("without_fedbn", False)),
    )
    try:
        spec.validate()
    except StrategyError as exc:
        raise ConfigError(str(exc))

    model = raw.get("model", {})
    hidden = int(model.get("hidden", 16))
    history = int(model.get("history", 12))
    horizon = int(model.get("horizon", 12))
    if min(hidden, history, horizon) < 1:
        raise ConfigError("model.hidden, model.history, model.horizon must be >= 1")

    fed = raw.get("federation", {})
    seed = int(fed.get("seed", 0))
    if os.environ.get(SEED_ENV):
        seed = int(os.environ[SEED_ENV])
    fed_cfg = FederationConfig(
        rounds=int(fed.get("rounds", 50)),
        local_epochs=int(fed.get("local_epochs", 1)),
        fraction=float(fed.get("fraction", 1.0)),
        weighting=str(fed.get("weighting", "uniform")),
        seed=seed,
        batch_size=int(fed.get("batch_size", 128)),
        learning_rate=float(fed.get("learning_rate", 1e-3)),
        alpha_through=bool(fed.get("alpha_through", False)),
        log_batches=bool(fed.get("log_batches", False)),
    )
    try:
        fed_cfg.validate()
    except FederationError as exc:
        raise ConfigError(f"federation: {exc}")

    data = raw.get("data")
    if not isinstance(data, dict) or ("synthetic" not in data) == ("csv" not in data):
        raise ConfigError("data must contain exactly one of 'synthetic' or 'csv'")
    if "csv" in data:
        paths = [Path(base_dir) / p for p in data["csv"]]
        for p in paths:
            if not p.exists():
                raise ConfigError(f"data.csv: file not found: {p}")
        data_resolved = {"csv": [str(p) for p in paths]}
    else:
        syn = dict(data["synthetic"])
        try:
            syn_spec = SyntheticSpec(
                clients=int(_require(syn, "clients", "data.synthetic")),
                nodes=int(_require(syn, "nodes", "data.synthetic")),
                length=int(_require(syn, "length", "data.synthetic")),
                **{k: v for k, v in syn.items()
                   if k not in ("clients", "nodes", "length")},
            )
        except TypeError as exc:
            raise ConfigError(f"data.synthetic: {exc}")
        data_resolved = {"synthetic": syn_spec}

    output_dir = raw.get("output_dir", "runs/out")
    return {
        "strategy": spec,
        "hidden": hidden,
        "history": history,
        "horizon": horizon,
        "federation": fed_cfg,
        "data": data_resolved,
        "output_dir": str(Path(base_dir) / output_dir),
    }


def _config_header(cfg):
    spec = cfg["strategy"]
    fed = cfg["federation"]
    data = cfg["data"]
    if "synthetic" in data:
        data_desc = {"synthetic": vars(data["synthetic"])}
    else:
        data_desc = {"csv": data["csv"]}
    return {
        "type": "config",
        "strategy": {"name": spec.name, "without_ae": spec.without_ae,
                     "without_fedbn": spec.without_fedbn, "label": spec.label},
        "model": {"hidden": cfg["hidden"], "history": cfg["history"],
                  "horizon": cfg["horizon"]},
        "federation": {k: getattr(fed, k) for k in (
            "rounds", "local_epochs", "fraction", "weighting", "seed",
            "batch_size", "learning_rate", "alpha_through", "log_batches")},
        "data": data_desc,
    }


def _node_weighted_aggregate(per_client, node_counts):
    total = float(sum(node_counts.values()))
    keys = ("mae", "rmse", "mse", "mape_percent", "masked_fraction")
    return {k: sum(per_client[c][k] * node_counts[c] / total for c in per_client)
            for k in keys}


def execute_run(cfg):
    """Run one experiment from a resolved config; returns the report path."""
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    data = cfg["data"]
    if "synthetic" in data:
        series_list = generate_synthetic(data["synthetic"])
    else:
        series_list = [load_csv(p) for p in data["csv"]]

    fed = cfg["federation"]
    clients = build_clients(cfg["strategy"], series_list,
                            history=cfg["history"], horizon=cfg["horizon"],
                            hidden=cfg["hidden"], seed=fed.seed,
                            learning_rate=fed.learning_rate)

    report_path = out_dir / "report.jsonl"
    writer = ReportWriter(report_path)
    writer.write(_config_header(cfg))

    def on_round(report):
        writer.write({"type": "round", **report})

    try:
        run_training(clients, fed, round_hook=on_round)
        test = {c.client_id: evaluate_client(c, "test", fed.eval_batch_size).as_dict()
                for c in clients}
        node_counts = {c.client_id: c.node_count for c in clients}
        final = {
            "type": "final",
            "label": cfg["strategy"].label,
            "seed": fed.seed,
            "test": test,
            "aggregate": _node_weighted_aggregate(test, node_counts),
            "shared_parameter_count": clients[0].store.comm_cost(),
        }
        writer.write(final)
    finally:
        writer.close()

    checkpoint = {}
    for c in clients:
        for name, arr in c.store.all_arrays().items():
            checkpoint[f"{c.client_id}/{name}"] = arr
    (out_dir / "checkpoint.bin").write_bytes(serialize_store(checkpoint))

    _, rounds, final_line = read_report(report_path)
    write_metrics_csv(out_dir / "metrics.csv", final_line)
    render_training_figure(rounds, out_dir / "training_curves.png")
    return report_path


def cmd_run(args):
    raw = load_config(args.config)
    cfg = resolve_config(raw, Path(args.config).resolve().parent)
    report_path = execute_run(cfg)
    print(f"report written to {report_path}")
    return EXIT_OK


def build_compare_table(report_paths):
    table = []
    for path in report_paths:
        header, _, final = read_report(path)
        if final is None:
            raise ValueError(f"{path}: run did not finish (no final record)")
        table.append({
            "path": str(path),
            "label": final["label"],
            "seed": final["seed"],
            "test": final["test"],
            "aggregate": final["aggregate"],
        })
    return table


def format_compare_table(table):
    keys = ("mae", "rmse", "mse", "mape_percent")
    best = {k: min(row["aggregate"][k] for row in table) for k in keys}
    lines = [f"{'run':32s} " + " ".join(f"{k:>14s}" for k in keys)]
    for row in table:
        cells = []
        for k in keys:
            value = row["aggregate"][k]
            mark = "*" if value == best[k] else " "
            cells.append(f"{value:13.4f}{mark}")
        lines.append(f"{row['label'] + '/s' + str(row['seed']):32s} " + " ".join(cells))
    return "\n".join(lines)


def cmd_compare(args):
    table = build_compare_table(args.reports)
    print(format_compare_table(table))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        keys = ("mae", "rmse", "mse", "mape_percent", "masked_fraction")
        with open(out / "summary.csv", "w", encoding="utf-8") as fh:
            fh.write("run,seed," + ",".join(keys) + "\n")
            for row in table:
                fh.write(",".join([row["label"], str(row["seed"])]
                                  + [repr(row["aggregate"][k]) for k in keys]) + "\n")
        render_comparison_figure(table, out / "comparison.png")
    return EXIT_OK


def cmd_gen_data(args):
    with open(args.spec, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{args.spec}: spec must be a mapping")
    try:
        spec = SyntheticSpec(**raw)
    except TypeError as exc:
        raise ConfigError(f"{args.spec}: {exc}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for series in generate_synthetic(spec):
        save_csv(series, out / f"{series.client_id}.csv")
    print(f"wrote {spec.clients} client series to {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="autofed")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a training run from a config file")
    p_run.add_argument("config")
    p_run.set_defaults(fn=cmd_run)

    p_cmp = sub.add_parser("compare", help="tabulate final metrics across reports")
    p_cmp.add_argument("reports", nargs="+")
    p_cmp.add_argument("--out", help="directory for summary.csv and comparison.png")
    p_cmp.set_defaults(fn=cmd_compare)

    p_gen = sub.add_parser("gen-data", help="generate synthetic client CSVs")
    p_gen.add_argument("spec")
    p_gen.add_argument("out")
    p_gen.set_defaults(fn=cmd_gen_data)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, StrategyError, DataConfigError, CsvParseError,
            FederationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergence as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
