"""Command line entry point: ``fedsim gen-data | run | report``.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import re
import sys

import numpy as np

from fedsim import __version__
from fedsim.cohort import (
    CENTER_FULL_NAMES,
    Cohort,
    builtin_profiles,
    load_csv,
    stratified_holdout,
    stratified_kfold,
    synth_generate,
    write_csv,
)
from fedsim.config import ExperimentConfig, load_config
from fedsim.errors import FedSimError, FormatError, ValidationError
from fedsim.federation import evaluate, make_clients, run_centralized, run_federated
from fedsim.metrics import cv_summary
from fedsim.model import DenseNetConfig

log = logging.getLogger("fedsim")

CENTRALIZED = "centralized"
GLOBAL = "Global"


def build_cohort(cfg: ExperimentConfig) -> Cohort:
    d = cfg.data
    if d.source == "builtin":
        cohort = synth_generate(builtin_profiles(d.modality), d.feature_dim, d.center_shift,
                                d.class_separation, cfg.seed, num_classes=cfg.num_classes)
    else:
        try:
            cohort = load_csv(d.csv_path)
        except OSError as exc:
            raise ValidationError(f"cannot read {d.csv_path}: {exc}") from None
        if cfg.num_classes == 2:
            cohort = cohort.binarized()
        elif cohort.num_classes != 3:
            raise ValidationError("three_class task needs no/low/high labels in the CSV")
    if cfg.task == "three_class" and cfg.fed.algorithms:
        missing = [name for name, counts in zip(cohort.names, cohort.class_counts()) if min(counts) == 0]
        if missing:
            raise ValidationError(
                "three_class federated runs need every class at every center; "
                f"missing cells at {', '.join(missing)} (use task = binary)")
    return cohort


def fold_seed(seed: int, fold: int) -> int:
    seq = np.random.SeedSequence(seed, spawn_key=(fold,))
    return int(seq.generate_state(1, np.uint64)[0])


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", label).strip("_")


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Cross-validated centralized and federated runs; returns the manifest.

    When ``out_dir`` is given the manifest, the flat metrics CSV and the
    best checkpoint of every (fold, algorithm) are written there.
    """
    cohort = build_cohort(cfg)
    model_cfg = DenseNetConfig(cohort.feature_dim, cfg.model.num_layers, cfg.model.growth,
                               cfg.num_classes)
    folds = stratified_kfold(cohort, cfg.cv_folds, cfg.seed)
    runs = []
    if cfg.fed.centralized:
        runs.append((CENTRALIZED, "fedavg", 0.0))
    for alg, mu in cfg.fed.algorithms:
        runs.append((cfg.fed.fed_config(alg, mu, 0).label, alg, mu))

    if out_dir:
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)

    records = []
    for f in range(cfg.cv_folds):
        seed_f = fold_seed(cfg.seed, f)
        train, test = folds.split(cohort, f)
        select = None
        if cfg.fed.checkpoint_split == "validation":
            train, select = stratified_holdout(train, cfg.fed.validation_fraction, seed_f)
        for label, alg, mu in runs:
            fed_cfg = cfg.fed.fed_config(alg, mu, seed_f)
            if label == CENTRALIZED:
                state, _ = run_centralized(fed_cfg, train.pooled(), test, model_cfg, select_sets=select)
            else:
                state, _ = run_federated(fed_cfg, make_clients(train, seed_f), test, model_cfg,
                                         select_sets=select, max_workers=cfg.fed.workers)
            report = evaluate(state.best_params, model_cfg, test, fold_id=f)
            rec = {
                "fold": f,
                "algorithm": label,
                "centers": [c.to_dict() for c in report.per_center],
                "global": {"acc": report.global_acc, "auc": report.global_auc},
                "best_round": state.best_round,
                "selection_auc": state.best_auc,
            }
            if out_dir:
                rel = os.path.join("checkpoints", f"fold{f}_{_slug(label)}.npy")
                np.save(os.path.join(out_dir, rel), state.best_params)
                rec["checkpoint"] = rel
            records.append(rec)
            log.info("fold %d %-18s acc=%.4f auc=%s", f, label, report.global_acc, report.global_auc)

    manifest = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "engine_version": __version__,
        "task": cfg.task,
        "cv_folds": cfg.cv_folds,
        "center_names": cohort.names,
        "config": cfg.semantic_dict(),
        "folds": records,
        "summary": summarize(records, cohort.names),
    }
    if out_dir:
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            fh.write(dump_manifest(manifest))
        with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
            fh.write(metrics_csv(records))
    return manifest


def dump_manifest(manifest: dict) -> str:
    return json.dumps(manifest, indent=2) + "\n"


def _stat(values: list) -> dict | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    mean, std = cv_summary(vals)
    return {"mean": mean, "std": std, "n": len(vals)}


def summarize(records: list[dict], center_names: list[str]) -> dict:
    """Mean and sample std over folds per (algorithm, center, metric).

    Folds where a metric is undefined are left out of that metric's summary.
    """
    summary: dict = {}
    algorithms = list(dict.fromkeys(r["algorithm"] for r in records))
    for alg in algorithms:
        recs = [r for r in records if r["algorithm"] == alg]
        centers = []
        for name in center_names:
            rows = [c for r in recs for c in r["centers"] if c["name"] == name]
            centers.append({"name": name,
                            "acc": _stat([c["acc"] for c in rows]),
                            "auc": _stat([c["auc"] for c in rows])})
        summary[alg] = {
            "centers": centers,
            "global": {"acc": _stat([r["global"]["acc"] for r in recs]),
                       "auc": _stat([r["global"]["auc"] for r in recs])},
        }
    return summary


def _num(v) -> str:
    return "n/a" if v is None else repr(float(v))


def metrics_csv(records: list[dict]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["algorithm", "center", "fold", "acc", "auc"])
    for r in records:
        for c in r["centers"]:
            w.writerow([r["algorithm"], c["name"], r["fold"], _num(c["acc"]), _num(c["auc"])])
        w.writerow([r["algorithm"], GLOBAL, r["fold"], _num(r["global"]["acc"]), _num(r["global"]["auc"])])
    return out.getvalue()


def format_stat(stat: dict | None) -> str:
    if stat is None:
        return "n/a"
    return f"{stat['mean']:.4f}±{stat['std']:.4f}"


def format_report(manifest: dict) -> str:
    """Per-center blocks followed by the Global block, one row per method."""
    try:
        records = manifest["folds"]
        names = manifest.get("center_names") or list(dict.fromkeys(
            c["name"] for r in records for c in r["centers"]))
        summary = summarize(records, names)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed manifest: {exc!r}") from None

    width = max([len("Method")] + [len(a) for a in summary]) + 2
    lines = [f"{manifest.get('task', 'binary')} classification, "
             f"{manifest.get('cv_folds', '?')}-fold cross-validation (mean±std)"]

    def block(title, pick):
        lines.append("")
        lines.append(title)
        lines.append(f"{'Method':<{width}}{'ACC':<17}AUC")
        for alg, s in summary.items():
            entry = pick(s)
            lines.append(f"{alg:<{width}}{format_stat(entry['acc']):<17}{format_stat(entry['auc'])}")

    for i, name in enumerate(names):
        full = CENTER_FULL_NAMES.get(name)
        title = f"Center {i + 1}: {full} ({name})" if full else f"Center {i + 1}: {name}"
        block(title, lambda s, i=i: s["centers"][i])
    block(GLOBAL, lambda s: s["global"])
    return "\n".join(lines) + "\n"


def cmd_report(manifest_path: str) -> str:
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict):
        raise FormatError("manifest must be a JSON object")
    return format_report(manifest)


def counts_table(cohort: Cohort) -> str:
    lines = [f"{'Center':<8}{'No':>6}{'Low':>6}{'High':>6}{'Total':>7}"]
    totals = [0, 0, 0, 0]
    for c in cohort.centers:
        counts = c.risk_counts()
        if counts is None:
            counts = (int(np.sum(c.y == 0)), 0, int(np.sum(c.y == 1)))
        row = [*counts, c.n]
        totals = [a + b for a, b in zip(totals, row)]
        lines.append(f"{c.name:<8}" + "".join(f"{v:>6}" for v in row[:3]) + f"{row[3]:>7}")
    lines.append(f"{'Total':<8}" + "".join(f"{v:>6}" for v in totals[:3]) + f"{totals[3]:>7}")
    return "\n".join(lines) + "\n"


def cmd_gen_data(cfg: ExperimentConfig, out_path: str) -> str:
    cohort = build_cohort(cfg)
    parent = os.path.dirname(os.path.abspath(out_path))
    os.makedirs(parent, exist_ok=True)
    write_csv(cohort, out_path)
    return counts_table(cohort)


def cmd_run(cfg: ExperimentConfig, out_dir: str) -> dict:
    return run_experiment(cfg, out_dir)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic cohort CSV")
    g.add_argument("--config", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="CSV path (default: <output dir>/cohort.csv)")

    r = sub.add_parser("run", help="cross-validated centralized + federated runs")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory (overrides [output] dir)")

    rep = sub.add_parser("report", help="print a manifest as a results table")
    rep.add_argument("manifest")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        if args.command == "report":
            sys.stdout.write(cmd_report(args.manifest))
            return 0
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.command == "gen-data":
            out = args.out or os.path.join(cfg.output_dir, "cohort.csv")
            sys.stdout.write(cmd_gen_data(cfg, out))
        else:
            out = args.out or cfg.output_dir
            manifest = cmd_run(cfg, out)
            sys.stdout.write(format_report(manifest))
        return 0
    except ValidationError as exc:
        print(f"fedsim: invalid configuration: {exc}", file=sys.stderr)
        return 1
    except (FedSimError, OSError) as exc:
        print(f"fedsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
