"""Single entry point exposing the pipeline as composable subcommands.

Each stage reads the previous stage's files and writes its own outputs plus
an effective-config echo (config.json) into the output directory, so any run
can be reproduced from its echo. Flags override values from --config; the
config file is one JSON object with per-stage sections.

Exit codes: 0 success, 1 validation/config error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import evaluation, federation, heterogeneity, ingest, models
from .features import build_feature_table, read_features, write_features
from .partition import partition_by_station
from .sessions import DatasetConfig, retain_sessions


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must contain a JSON object")
    return cfg


def _merge(section: dict, args: argparse.Namespace, keys: list[str]) -> dict:
    """Effective per-stage settings: flag value wins over config value."""
    out = dict(section)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def _echo_config(out_dir: Path, stage: str, effective: dict) -> None:
    payload = {"stage": stage, **effective}
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _outdir(path_str: str) -> Path:
    out = Path(path_str)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_cfg(settings: dict) -> DatasetConfig:
    return DatasetConfig(
        early_window_minutes=float(settings.get("early_window_minutes", 10.0)),
        min_early_current_samples=int(settings.get("min_early_current_samples", 5)),
        nominal_voltage_v=float(settings.get("nominal_voltage_v", 208.0)),
    )


def _parse_range(text: str) -> tuple[int, int]:
    lo, _, hi = str(text).partition(":")
    return (int(lo), int(hi or lo))


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_synth(args, cfg_file: dict) -> int:
    keys = [
        "stations", "sessions_per_station", "mean_kwh", "std_kwh", "shift_kwh",
        "noise_kwh", "seed", "session_minutes", "period_s", "presence", "format",
    ]
    eff = _merge(cfg_file.get("synth", {}), args, keys)
    spec = ingest.SyntheticDepotSpec(
        n_stations=int(eff.get("stations", 20)),
        sessions_per_station=_parse_range(eff.get("sessions_per_station", "20:30")),
        station_energy_mean_kwh=float(eff.get("mean_kwh", 9.0)),
        station_energy_std_kwh=float(eff.get("std_kwh", 3.0)),
        heterogeneity_shift_kwh=float(eff.get("shift_kwh", 0.0)),
        noise_std_kwh=float(eff.get("noise_kwh", 0.5)),
        seed=int(eff.get("seed", 0)),
        session_minutes=_parse_range(eff.get("session_minutes", "90:150")),
        sample_period_s=int(eff.get("period_s", 60)),
        user_field_presence=float(eff.get("presence", 0.75)),
    )
    sessions, series = ingest.generate_synthetic(spec)
    out = _outdir(args.out)
    ext = "jsonl" if str(eff.get("format", "csv")) == "jsonl" else "csv"
    ingest.write_sessions(out / f"sessions.{ext}", sessions)
    ingest.write_timeseries(out / f"timeseries.{ext}", series)
    _echo_config(out, "synth", {"synth": eff})
    print(f"wrote {len(sessions)} sessions across {spec.n_stations} stations to {out}")
    return 0


def _resolve_inputs(args, cfg_file: dict) -> tuple[Path, Path]:
    paths = cfg_file.get("paths", {})
    base = args.in_dir or paths.get("in")
    sessions = args.sessions or paths.get("sessions")
    timeseries = args.timeseries or paths.get("timeseries")
    if base is not None:
        base = Path(base)
        sessions = sessions or _find_default(base, "sessions")
        timeseries = timeseries or _find_default(base, "timeseries")
    if sessions is None or timeseries is None:
        raise ValueError("need --in DIR or both --sessions and --timeseries")
    return Path(sessions), Path(timeseries)


def _find_default(base: Path, stem: str) -> Path:
    for ext in ("csv", "jsonl", "ndjson", "json"):
        candidate = base / f"{stem}.{ext}"
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no {stem}.csv or {stem}.jsonl under {base}")


def _parse_and_retain(args, cfg_file: dict):
    sessions_path, series_path = _resolve_inputs(args, cfg_file)
    dataset = _merge(cfg_file.get("dataset", {}), args, [
        "early_window_minutes", "min_early_current_samples", "nominal_voltage_v",
    ])
    strict = bool(args.strict) or bool(dataset.get("strict", False))
    dataset["strict"] = strict
    cfg = _dataset_cfg(dataset)
    parsed_sessions = ingest.parse_sessions(sessions_path, strict=strict)
    parsed_series = ingest.parse_timeseries(series_path, strict=strict)
    retained = retain_sessions(parsed_sessions.records, parsed_series.index, cfg)
    report = {
        "sessions_path": str(sessions_path),
        "timeseries_path": str(series_path),
        "n_session_rows": len(parsed_sessions.records),
        "n_session_issues": len(parsed_sessions.issues),
        "n_series_sessions": len(parsed_series.index),
        "n_series_issues": len(parsed_series.issues),
        "n_negative_clamped": parsed_series.n_negative_clamped,
        "n_duplicates_merged": parsed_series.n_duplicates_merged,
        "n_retained": len(retained.sessions),
        "dropped": dict(retained.dropped),
        "first_issues": (parsed_sessions.issues + parsed_series.issues)[:20],
    }
    return retained, parsed_series.index, cfg, dataset, report


def _cmd_ingest(args, cfg_file: dict) -> int:
    retained, index, _, dataset, report = _parse_and_retain(args, cfg_file)
    out = _outdir(args.out)
    kept_ids = {s.session_id for s in retained.sessions}
    ingest.write_sessions(out / "sessions.csv", retained.sessions)
    ingest.write_timeseries(
        out / "timeseries.csv", {k: v for k, v in index.items() if k in kept_ids}
    )
    with open(out / "ingest_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _echo_config(out, "ingest", {
        "dataset": dataset,
        "paths": {"sessions": report["sessions_path"], "timeseries": report["timeseries_path"]},
    })
    print(f"retained {report['n_retained']} sessions (dropped: {report['dropped']})")
    return 0


def _cmd_featurize(args, cfg_file: dict) -> int:
    retained, index, cfg, dataset, report = _parse_and_retain(args, cfg_file)
    table = build_feature_table(retained.sessions, index, cfg)
    out = _outdir(args.out)
    write_features(out / "features.csv", table)
    report["warnings"] = dict(table.warnings)
    with open(out / "featurize_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _echo_config(out, "featurize", {
        "dataset": dataset,
        "paths": {"sessions": report["sessions_path"], "timeseries": report["timeseries_path"]},
    })
    print(f"wrote {len(table)} feature rows ({table.X.shape[1]} features) to {out}")
    return 0


def _cmd_analyze(args, cfg_file: dict) -> int:
    eff = _merge(cfg_file.get("heterogeneity", {}), args, ["bins", "permutations", "seed"])
    features_path = args.features or cfg_file.get("paths", {}).get("features")
    if features_path is None:
        raise ValueError("need --features FILE")
    table = read_features(features_path)
    if len(table) == 0:
        raise ValueError("features file contains no rows")
    partition = partition_by_station(table.station_ids)
    report = heterogeneity.analyze_partition(
        table.y,
        partition,
        n_bins=int(eff.get("bins", heterogeneity.DEFAULT_BINS)),
        n_permutations=int(eff.get("permutations", heterogeneity.DEFAULT_PERMUTATIONS)),
        seed=int(eff.get("seed", 0)),
    )
    ranked = sorted(report.per_client_js.items(), key=lambda kv: (-kv[1], kv[0]))
    payload = {
        "classification": report.classification,
        "js_weighted": report.js_weighted,
        "js_max": report.js_max,
        "mu_iid": report.mu_iid,
        "sigma_iid": report.sigma_iid,
        "tau_iid": report.tau_iid,
        "n_clients": partition.n_clients,
        "n_bins": report.n_bins,
        "n_permutations": report.n_permutations,
        "seed": report.seed,
        "per_client_js": report.per_client_js,
        "client_sizes": report.client_sizes,
        "ranked_clients": [
            {"client": cid, "js": value} for cid, value in ranked
        ],
    }
    out = _outdir(args.out)
    with open(out / "heterogeneity.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _echo_config(out, "analyze", {
        "heterogeneity": {
            "bins": report.n_bins,
            "permutations": report.n_permutations,
            "seed": report.seed,
        },
        "paths": {"features": str(features_path)},
    })
    print(
        f"{report.classification}: JS_weighted={report.js_weighted:.6f} "
        f"tau={report.tau_iid:.6f} over {partition.n_clients} clients"
    )
    return 0


def _train_configs(args, cfg_file: dict):
    fed_section = _merge(cfg_file.get("fed", {}), args, [
        "rounds", "local_epochs", "fraction", "batch_size", "lr", "seed",
    ])
    central_section = _merge(cfg_file.get("central", {}), args, [
        "epochs", "batch_size", "lr", "seed",
    ])
    train_section = _merge(cfg_file.get("train", {}), args, ["dropout"])
    dropout = float(train_section.get("dropout", 0.2))
    seed = int(fed_section.get("seed", central_section.get("seed", 0)))
    fed_cfg = federation.FedConfig(
        rounds=int(fed_section.get("rounds", 400)),
        local_epochs=int(fed_section.get("local_epochs", 3)),
        client_fraction=float(fed_section.get("fraction", 0.2)),
        batch_size=int(fed_section.get("batch_size", 128)),
        lr=float(fed_section.get("lr", 1e-3)),
        seed=seed,
    )
    central_cfg = federation.CentralConfig(
        epochs=int(central_section.get("epochs", 40)),
        batch_size=int(central_section.get("batch_size", 128)),
        lr=float(central_section.get("lr", 1e-3)),
        seed=seed,
    )
    return fed_cfg, central_cfg, seed, dropout


def _cmd_train(args, cfg_file: dict) -> int:
    features_path = args.features or cfg_file.get("paths", {}).get("features")
    if features_path is None:
        raise ValueError("need --features FILE")
    model_kind = args.model or cfg_file.get("train", {}).get("model")
    mode = args.mode or cfg_file.get("train", {}).get("mode")
    if model_kind is None or mode is None:
        raise ValueError("need --model and --mode")
    table = read_features(features_path)
    fed_cfg, central_cfg, seed, dropout = _train_configs(args, cfg_file)
    seed_result, artifacts = evaluation.run_experiment(
        table, model_kind, mode, seed,
        fed_cfg=fed_cfg, central_cfg=central_cfg, dropout_rate=dropout,
    )
    out = _outdir(args.out)
    _write_rounds_csv(out / "rounds.csv", artifacts.result.logs if artifacts.result else [])
    model = artifacts.model
    models.save_checkpoint(out / "model.ckpt", models.get_params(model), model.spec_dict())
    evaluation.write_predictions(
        out / "predictions.csv",
        artifacts.prepared.test_session_ids,
        artifacts.prepared.data.y_test,
        artifacts.predictions,
    )
    summary = {
        "model": model_kind,
        "mode": mode,
        "seed": seed,
        "test_mae": seed_result.test_mae,
        "test_rmse": seed_result.test_rmse,
        "best_round": seed_result.best_round,
        "convergence_round": seed_result.convergence_round,
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _echo_config(out, "train", _training_sections(features_path, model_kind, mode,
                                                  fed_cfg, central_cfg, dropout=dropout))
    print(
        f"{model_kind}/{mode} seed={seed}: test MAE {seed_result.test_mae:.4f} "
        f"RMSE {seed_result.test_rmse:.4f}"
    )
    return 0


def _training_sections(features_path, model_kind, mode, fed_cfg, central_cfg,
                       dropout=0.2, seeds=None):
    train_section = {"model": model_kind, "mode": mode, "dropout": dropout}
    if seeds is not None:
        train_section["seeds"] = ",".join(str(s) for s in seeds)
    return {
        "paths": {"features": str(features_path)},
        "train": train_section,
        "fed": {
            "rounds": fed_cfg.rounds,
            "local_epochs": fed_cfg.local_epochs,
            "fraction": fed_cfg.client_fraction,
            "batch_size": fed_cfg.batch_size,
            "lr": fed_cfg.lr,
            "seed": fed_cfg.seed,
        },
        "central": {
            "epochs": central_cfg.epochs,
            "batch_size": central_cfg.batch_size,
            "lr": central_cfg.lr,
            "seed": central_cfg.seed,
        },
    }


def _write_rounds_csv(path: Path, logs) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "val_mae", "val_rmse", "test_mae", "test_rmse", "clients"])
        for log in logs:
            writer.writerow(
                [
                    log.round,
                    repr(log.val_mae),
                    repr(log.val_rmse),
                    repr(log.test_mae),
                    repr(log.test_rmse),
                    ";".join(log.clients),
                ]
            )


def _parse_seeds(text: str) -> list[int]:
    return [int(tok) for tok in str(text).split(",") if tok != ""]


def _cmd_evaluate(args, cfg_file: dict) -> int:
    features_path = args.features or cfg_file.get("paths", {}).get("features")
    if features_path is None:
        raise ValueError("need --features FILE")
    model_kind = args.model or cfg_file.get("train", {}).get("model")
    mode = args.mode or cfg_file.get("train", {}).get("mode")
    if model_kind is None or mode is None:
        raise ValueError("need --model and --mode")
    seeds = _parse_seeds(
        args.seeds or cfg_file.get("train", {}).get("seeds", "0,1,2,3,4,5,6,7,8,9")
    )
    table = read_features(features_path)
    fed_cfg, central_cfg, _, dropout = _train_configs(args, cfg_file)
    report = evaluation.multi_seed_run(
        table, model_kind, mode, seeds,
        fed_cfg=fed_cfg, central_cfg=central_cfg, dropout_rate=dropout,
    )
    out = _outdir(args.out)
    with open(out / "run_report.json", "w", encoding="utf-8") as fh:
        json.dump(evaluation.report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _echo_config(out, "evaluate", _training_sections(features_path, model_kind, mode,
                                                     fed_cfg, central_cfg,
                                                     dropout=dropout, seeds=seeds))
    print(
        f"{model_kind}/{mode} over {len(seeds)} seeds: "
        f"MAE {report.mae_mean:.4f} +/- {report.mae_std:.4f}"
    )
    return 0


def _cmd_report(args, cfg_file: dict) -> int:
    paths = list(args.reports or [])
    if not paths:
        raise ValueError("need at least one run_report.json path")
    reports = []
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        per_seed = [
            evaluation.SeedResult(
                seed=e["seed"],
                test_mae=e["test_mae"],
                test_rmse=e["test_rmse"],
                best_round=e.get("best_round"),
                convergence_round=e.get("convergence_round"),
            )
            for e in payload["per_seed"]
        ]
        reports.append(
            evaluation.RunReport(
                model=payload["model"], mode=payload["mode"], per_seed=per_seed
            )
        )
    out = _outdir(args.out)
    csv_path, json_path = evaluation.emit_report(reports, out)
    print(f"wrote {csv_path} and {json_path}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedcharge",
        description="EV charging-session energy prediction pipeline "
        "(featurization, heterogeneity analysis, centralized and federated training)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("synth", help="generate a deterministic synthetic depot")
    common(p)
    p.add_argument("--stations", type=int)
    p.add_argument("--sessions-per-station", dest="sessions_per_station",
                   help="inclusive range lo:hi")
    p.add_argument("--mean-kwh", dest="mean_kwh", type=float)
    p.add_argument("--std-kwh", dest="std_kwh", type=float)
    p.add_argument("--shift-kwh", dest="shift_kwh", type=float)
    p.add_argument("--noise-kwh", dest="noise_kwh", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--session-minutes", dest="session_minutes", help="range lo:hi")
    p.add_argument("--period-s", dest="period_s", type=int)
    p.add_argument("--presence", type=float)
    p.add_argument("--format", choices=["csv", "jsonl"])

    for name, helptext in (
        ("ingest", "parse raw files, apply retention, write the clean dataset"),
        ("featurize", "build features.csv from session and time-series files"),
    ):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--in", dest="in_dir", help="directory with sessions/timeseries files")
        p.add_argument("--sessions", help="sessions file (csv or jsonl)")
        p.add_argument("--timeseries", help="timeseries file (csv or jsonl)")
        p.add_argument("--strict", action="store_true",
                       help="abort on malformed rows instead of skipping them")
        p.add_argument("--early-window-minutes", dest="early_window_minutes", type=float)
        p.add_argument("--min-early-current-samples", dest="min_early_current_samples",
                       type=int)
        p.add_argument("--nominal-voltage-v", dest="nominal_voltage_v", type=float)

    p = sub.add_parser("analyze", help="station-level heterogeneity report")
    common(p)
    p.add_argument("--features", help="features.csv from the featurize stage")
    p.add_argument("--bins", type=int)
    p.add_argument("--permutations", type=int)
    p.add_argument("--seed", type=int)

    for name, helptext in (
        ("train", "single seeded training run"),
        ("evaluate", "multi-seed experiment for one model and mode"),
    ):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--features", help="features.csv from the featurize stage")
        p.add_argument("--mode", choices=["centralized", "federated"])
        p.add_argument("--model", choices=list(models.MODEL_KINDS))
        p.add_argument("--rounds", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--local-epochs", dest="local_epochs", type=int)
        p.add_argument("--fraction", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--dropout", type=float,
                       help="MLP dropout rate (also active in federated local training)")
        if name == "evaluate":
            p.add_argument("--seeds", help="comma-separated seed list")

    p = sub.add_parser("report", help="merge run reports into results.csv/json")
    common(p)
    p.add_argument("--reports", nargs="+", help="run_report.json files")

    return parser


_COMMANDS = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "featurize": _cmd_featurize,
    "analyze": _cmd_analyze,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
}


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        cfg_file = _load_config(args.config)
        return _COMMANDS[args.command](args, cfg_file)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
