"""Experiment harness: run protocols from a declarative config file.

Config schema (JSON)::

    {
      "dataset": {"type": "synthetic", "n_clients": 12,
                  "profiles": "flagship"},
      "model":   [{"input_dim": 1200, "output_dim": 128,
                   "activation": "relu"}, ...],        # optional
      "train":   {"learning_rate": 1e-4, "batch_size": 32},   # optional
      "protocols": [{"protocol": "cefl", "T": 20, "K": 2},
                    {"protocol": "regular_fl", "T": 60}],
      "seeds":   [0, 1, 2],
      "out_dir": "results",
      "k_sweep": [2, 5, 10]                            # optional, cefl only
    }

``dataset.profiles`` is either the string ``"flagship"`` (one large
balanced client, one small falls-only client, one skewed client, moderate
random ones for the rest) or an explicit list of
``{"n_samples": ..., "class_weights": [8 floats]}``.  A CSV dataset is
``{"type": "csv", "path": "samples.csv"}`` with the one-row-per-sample
schema documented in ``cefl.data``.  Protocol entries take every
``ProtocolConfig`` field; ``N`` defaults to the dataset's client count.

Outputs per (protocol, seed): ``<out>/<name>_seed<seed>/`` with
``metrics.csv`` (round, protocol, mean_acc, std_acc, cum_bits),
``ledger.csv``, and ``summary.json``; plus a cross-protocol
``comparison.csv``/``comparison.txt`` and, in sweep mode, one averaged
accuracy curve per K under ``<out>/ksweep/``.  Outputs are a pure
function of the config content.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import data as datamod
from .cost import closed_form_delta, savings_ratio
from .errors import ConfigurationError, InputError, ParseError
from .flcore import DEFAULT_LAYER_SPECS, ProtocolConfig, RunResult, run_protocol
from .model import LayerSpec, TrainConfig

METRICS_HEADER = ["round", "protocol", "mean_acc", "std_acc", "cum_bits"]
COMPARISON_HEADER = [
    "protocol", "agg_rounds", "episodes_per_round", "local_episodes",
    "mean_acc", "std_acc", "cost_bits", "savings_vs_regular_fl",
]


def _load_config(path) -> dict:
    with open(path) as f:
        return json.load(f)


def _parse_model(raw) -> tuple:
    if raw is None:
        return DEFAULT_LAYER_SPECS
    return tuple(
        LayerSpec(d["input_dim"], d["output_dim"], d.get("activation", "relu"))
        for d in raw
    )


def _parse_profiles(dataset: dict, n_clients: int, seed: int) -> list:
    raw = dataset.get("profiles", "flagship")
    if raw == "flagship":
        return datamod.flagship_profiles(n_clients, seed)
    return [
        datamod.HeterogeneityProfile(p["n_samples"],
                                     np.asarray(p["class_weights"]))
        for p in raw
    ]


def _build_shards(dataset: dict, seed: int) -> list:
    kind = dataset.get("type", "synthetic")
    if kind == "synthetic":
        n = int(dataset["n_clients"])
        return datamod.synth_dataset(n, _parse_profiles(dataset, n, seed), seed)
    if kind == "csv":
        return datamod.recordings_to_shards(datamod.ingest_csv(dataset["path"]))
    raise ConfigurationError(f"dataset.type {kind!r} not recognized")


def _protocol_config(entry: dict, config: dict, n_clients: int) -> ProtocolConfig:
    fields = dict(entry)
    fields.setdefault("N", n_clients)
    train = TrainConfig(**config.get("train", {}))
    return ProtocolConfig(
        layer_specs=_parse_model(config.get("model")), train=train, **fields
    )


def _count_csv_subjects(path, diagnostics: list) -> int:
    """Distinct subjects in a sample CSV (each becomes one client)."""
    subjects = set()
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            next(reader, None)
            for row in reader:
                if row:
                    subjects.add(row[0])
    except OSError as e:
        diagnostics.append(f"dataset.path: {e}")
        return 0
    if not subjects:
        diagnostics.append("dataset.path: no sample rows")
    return len(subjects)


def validate(config_path) -> list:
    """All constraint violations in the config, without executing."""
    diagnostics = []
    try:
        config = _load_config(config_path)
    except (OSError, json.JSONDecodeError) as e:
        return [f"config: unreadable or invalid JSON: {e}"]

    dataset = config.get("dataset")
    n_clients = 0
    if not isinstance(dataset, dict):
        diagnostics.append("dataset: missing or not an object")
    else:
        kind = dataset.get("type", "synthetic")
        if kind == "synthetic":
            n_clients = dataset.get("n_clients", 0)
            if not isinstance(n_clients, int) or n_clients < 1:
                diagnostics.append("dataset.n_clients: must be a positive integer")
            profiles = dataset.get("profiles", "flagship")
            if profiles != "flagship":
                if not isinstance(profiles, list) or len(profiles) != n_clients:
                    diagnostics.append(
                        "dataset.profiles: need one profile per client"
                    )
                else:
                    for i, p in enumerate(profiles):
                        try:
                            datamod.HeterogeneityProfile(
                                p["n_samples"], np.asarray(p["class_weights"])
                            )
                        except (InputError, KeyError, TypeError) as e:
                            diagnostics.append(f"dataset.profiles[{i}]: {e}")
        elif kind == "csv":
            if not Path(dataset.get("path", "")).exists():
                diagnostics.append("dataset.path: file not found")
            else:
                n_clients = _count_csv_subjects(dataset["path"], diagnostics)
        else:
            diagnostics.append(f"dataset.type: {kind!r} not recognized")

    try:
        _parse_model(config.get("model"))
    except (ConfigurationError, KeyError, TypeError) as e:
        diagnostics.append(f"model: {e}")

    try:
        TrainConfig(**config.get("train", {}))
    except (ConfigurationError, TypeError) as e:
        diagnostics.append(f"train: {e}")

    protocols = config.get("protocols")
    if not protocols:
        diagnostics.append("protocols: need at least one protocol entry")
    else:
        for i, entry in enumerate(protocols):
            try:
                _protocol_config(entry, config, n_clients or 1)
            except (ConfigurationError, InputError, TypeError) as e:
                diagnostics.append(f"protocols[{i}]: {e}")

    seeds = config.get("seeds")
    if not seeds or not all(isinstance(s, int) for s in seeds):
        diagnostics.append("seeds: need a nonempty list of integers")

    for k in config.get("k_sweep", []):
        if not isinstance(k, int) or k < 1:
            diagnostics.append("k_sweep: entries must be positive integers")
        elif n_clients and k > n_clients:
            diagnostics.append(f"k_sweep: K={k} exceeds the client count")
    return diagnostics


def _run_name(cfg: ProtocolConfig, k_tag: bool = False) -> str:
    if k_tag:
        return f"{cfg.protocol}_k{cfg.K}"
    return cfg.protocol


def _write_metrics(path, result: RunResult) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        writer.writerows(result.metrics_rows())


def _write_run(run_dir: Path, cfg: ProtocolConfig, result: RunResult) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_metrics(run_dir / "metrics.csv", result)
    result.ledger.export_csv(run_dir / "ledger.csv")
    closed = None
    if cfg.protocol == "cefl":
        closed = closed_form_delta(
            cfg.N, cfg.K, cfg.T, cfg.base_layers, cfg.n_layers,
            result.ledger.sizes.delta,
        )
    summary = result.ledger.summary(closed)
    summary["protocol"] = cfg.protocol
    summary["final_mean_acc"] = result.rows[-1].mean_acc
    summary["final_std_acc"] = result.rows[-1].std_acc
    summary["partial_layer_violations"] = result.partial_layer_violations
    if result.clustering is not None:
        summary["clustering"] = result.clustering.to_dict()
        summary["degenerate_clustering"] = result.degenerate_clustering
    with open(run_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)


def _comparison_rows(entries) -> list:
    """Cross-protocol table; one row per protocol config, seed-averaged."""
    regular_cost = None
    for cfg, results in entries:
        if cfg.protocol == "regular_fl":
            regular_cost = results[0].ledger.total_bits
    rows = []
    for cfg, results in entries:
        final = [r.rows[-1].mean_acc for r in results]
        cost = results[0].ledger.total_bits
        if cfg.protocol == "individual":
            agg_rounds, eps_round = "-", "-"
            local = str(cfg.individual_episodes)
        else:
            agg_rounds, eps_round = str(cfg.T), str(cfg.epsilon)
            local = str(cfg.eta) if cfg.protocol == "cefl" else "-"
        saving = ""
        if regular_cost:
            saving = repr(savings_ratio(cost, regular_cost))
        rows.append([
            _run_name(cfg), agg_rounds, eps_round, local,
            repr(float(np.mean(final))), repr(float(np.std(final))),
            str(cost), saving,
        ])
    return rows


def _write_comparison(out_dir: Path, entries) -> None:
    rows = _comparison_rows(entries)
    with open(out_dir / "comparison.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(COMPARISON_HEADER)
        writer.writerows(rows)
    widths = [
        max(len(h), *(len(r[i]) for r in rows))
        for i, h in enumerate(COMPARISON_HEADER)
    ]
    with open(out_dir / "comparison.txt", "w") as f:
        f.write("  ".join(h.ljust(w) for h, w in zip(COMPARISON_HEADER, widths)))
        f.write("\n")
        for r in rows:
            f.write("  ".join(v.ljust(w) for v, w in zip(r, widths)))
            f.write("\n")


def _write_ksweep_curves(out_dir: Path, sweep_entries) -> None:
    sweep_dir = out_dir / "ksweep"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    for cfg, results in sweep_entries:
        n_rounds = len(results[0].rows)
        with open(sweep_dir / f"accuracy_k{cfg.K}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["round", "mean_acc"])
            for r in range(n_rounds):
                acc = float(np.mean([res.rows[r].mean_acc for res in results]))
                writer.writerow([results[0].rows[r].round, repr(acc)])


def run(config_path, seed_override: int | None = None,
        out_dir: str | None = None) -> int:
    diagnostics = validate(config_path)
    if diagnostics:
        for d in diagnostics:
            print(d, file=sys.stderr)
        return 2
    config = _load_config(config_path)
    out = Path(out_dir or config.get("out_dir", "results"))
    out.mkdir(parents=True, exist_ok=True)
    seeds = [seed_override] if seed_override is not None else config["seeds"]
    dataset = config["dataset"]
    n_clients = (dataset.get("n_clients")
                 if dataset.get("type", "synthetic") == "synthetic" else None)

    shards_by_seed = {}
    for seed in seeds:
        shards_by_seed[seed] = _build_shards(dataset, seed)
        if n_clients is None:
            n_clients = len(shards_by_seed[seed])

    entries = []
    for entry in config["protocols"]:
        cfg = _protocol_config(entry, config, n_clients)
        results = []
        for seed in seeds:
            result = run_protocol(cfg, shards_by_seed[seed], seed)
            _write_run(out / f"{_run_name(cfg)}_seed{seed}", cfg, result)
            results.append(result)
        entries.append((cfg, results))
    _write_comparison(out, entries)

    if config.get("k_sweep"):
        sweep_entries = []
        for k in config["k_sweep"]:
            base = dict(next(
                (e for e in config["protocols"] if e["protocol"] == "cefl"),
                {"protocol": "cefl"},
            ))
            base["protocol"] = "cefl"
            base["K"] = k
            cfg = _protocol_config(base, config, n_clients)
            results = []
            for seed in seeds:
                result = run_protocol(cfg, shards_by_seed[seed], seed)
                _write_run(out / f"{_run_name(cfg, k_tag=True)}_seed{seed}",
                           cfg, result)
                results.append(result)
            sweep_entries.append((cfg, results))
        _write_ksweep_curves(out, sweep_entries)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cefl", description="communication-efficient FL simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute every (protocol, seed) run")
    p_run.add_argument("config")
    p_run.add_argument("--seed-override", type=int, default=None)
    p_run.add_argument("--out-dir", default=None)
    p_val = sub.add_parser("validate", help="check a config without running")
    p_val.add_argument("config")
    args = parser.parse_args(argv)

    if args.command == "validate":
        try:
            diagnostics = validate(args.config)
        except OSError as e:
            print(f"cannot read config: {e}", file=sys.stderr)
            return 2
        for d in diagnostics:
            print(d)
        return 0 if not diagnostics else 2
    try:
        return run(args.config, args.seed_override, args.out_dir)
    except (ParseError, InputError, ConfigurationError) as e:
        print(str(e), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
