"""Command-line surface: seeded, manifest-stamped runs over CSV datasets.

Commands: synth, audit, correct, sweep, apply.  Every run writes a manifest
recording the config snapshot, input digests, and output digests, so a rerun
with identical inputs can be checked byte for byte.

Exit codes: 0 all artifacts written, 2 validation problem, 1 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import traceback
from pathlib import Path

from . import __version__
from .data import (
    ConfigError,
    DataError,
    Dataset,
    SyntheticGroup,
    UnknownGroupError,
    assign_tier,
    generate_synthetic,
    load_dataset,
    merge_small_groups,
    save_dataset,
    whole_sample,
)
from .metrics import FairnessDefinition
from .optimizer import DegenerateScoresError, InfeasibleTierError, agnostic_tiers
from .pipeline import (
    AUDIT_FIELDS,
    EVALUATION_FIELDS,
    THRESHOLD_FIELDS,
    TRADEOFF_FIELDS,
    CorrectionConfig,
    GuardViolationError,
    SelectionError,
    audit,
    evaluate,
    evaluation_rows,
    run_correction,
    sweep,
    write_csv,
    write_json,
)
from .thresholds import ThresholdMatrix

_VALIDATION_ERRORS = (
    DataError,
    ConfigError,
    UnknownGroupError,
    DegenerateScoresError,
    InfeasibleTierError,
    GuardViolationError,
    SelectionError,
    KeyError,
    json.JSONDecodeError,
    FileNotFoundError,
)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class _Manifest:
    def __init__(self, command: str, config: dict, seed: int | None):
        self.payload = {
            "command": command,
            "artifact_version": __version__,
            "config": config,
            "seed": seed,
            "inputs": {},
            "outputs": {},
        }

    def add_input(self, path: Path) -> None:
        self.payload["inputs"][str(path)] = _sha256(path)

    def add_output(self, path: Path) -> None:
        self.payload["outputs"][str(path)] = _sha256(path)

    def write(self, path: Path) -> None:
        write_json(self.payload, path)


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def _load_config(args) -> tuple[CorrectionConfig, dict, Path | None]:
    """Correction config from --config JSON plus flag overrides."""
    raw: dict = {}
    cfg_path = None
    if args.config:
        cfg_path = Path(args.config)
        raw = _read_json(cfg_path)
    extras = {k: raw.pop(k) for k in ("column_map", "min_group_size") if k in raw}
    cfg = CorrectionConfig.from_dict(raw)
    if args.seed is not None:
        cfg = CorrectionConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    if getattr(args, "definition", None):
        cfg = CorrectionConfig.from_dict({**cfg.to_dict(), "definition": args.definition})
    if getattr(args, "threads", None):
        cfg = CorrectionConfig.from_dict({**cfg.to_dict(), "threads": args.threads})
    return cfg, extras, cfg_path


def _load_data(args, extras: dict, manifest: _Manifest) -> Dataset:
    data_path = Path(args.data)
    dataset = load_dataset(data_path, column_map=extras.get("column_map"))
    manifest.add_input(data_path)
    min_size = extras.get("min_group_size")
    if min_size:
        dataset, events = merge_small_groups(dataset, int(min_size))
        if events and getattr(args, "out_dir", None):
            log_path = Path(args.out_dir) / "merge_log.jsonl"
            with log_path.open("w", encoding="utf-8") as fh:
                for event in events:
                    fh.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")
            manifest.add_output(log_path)
    return dataset


def _load_matrix(path: Path) -> ThresholdMatrix:
    payload = _read_json(path)
    if "selected" in payload:
        payload = payload["selected"]["post"]
    elif "post" in payload:
        payload = payload["post"]
    try:
        return ThresholdMatrix.from_dict(payload)
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: bad thresholds file: {exc}") from exc


# ---------------------------------------------------------------------------
# Commands

def cmd_synth(args) -> int:
    cfg_path = Path(args.config)
    raw = _read_json(cfg_path)
    seed = args.seed if args.seed is not None else raw.get("seed", 0)
    groups = [
        SyntheticGroup(
            name=g["name"],
            size=g["size"],
            prevalence=g["prevalence"],
            pos_beta=tuple(g.get("pos_beta", (3.0, 4.0))),
            neg_beta=tuple(g.get("neg_beta", (2.0, 8.0))),
        )
        for g in raw.get("groups", [])
    ]
    if not groups:
        raise ConfigError(f"{cfg_path}: config has no groups")
    dataset = generate_synthetic(
        groups, seed=seed, extra_records_rate=raw.get("extra_records_rate", 0.0)
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out)
    manifest = _Manifest("synth", raw, seed)
    manifest.add_input(cfg_path)
    manifest.add_output(out)
    manifest.write(out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote {out} ({dataset.n} records, {dataset.n_groups} groups)")
    return 0


def cmd_audit(args) -> int:
    cfg, extras, cfg_path = _load_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest("audit", cfg.to_dict(), cfg.seed)
    if cfg_path:
        manifest.add_input(cfg_path)
    dataset = _load_data(args, extras, manifest)

    if args.thresholds == "agnostic":
        anchors = agnostic_tiers(whole_sample(dataset))
        matrix = anchors.replicate(dataset.groups)
    else:
        tpath = Path(args.thresholds)
        matrix = _load_matrix(tpath)
        manifest.add_input(tpath)
        missing = set(dataset.groups) - set(matrix.groups)
        if missing:
            raise DataError(f"thresholds file missing group {sorted(missing)[0]!r}")

    report = audit(dataset, matrix, cfg)
    audit_path = out_dir / "audit.csv"
    write_csv(report.rows(), AUDIT_FIELDS, audit_path)
    manifest.add_output(audit_path)
    summary_path = out_dir / "audit_summary.json"
    write_json(
        {
            "flags": report.flags,
            "delta_mean": report.delta.mean,
            "conventions": report.conventions,
            "n_subsamples": report.n_subsamples,
        },
        summary_path,
    )
    manifest.add_output(summary_path)
    manifest.write(out_dir / "manifest_audit.json")
    print(f"wrote {audit_path}")
    return 0


def cmd_correct(args) -> int:
    cfg, extras, cfg_path = _load_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest("correct", cfg.to_dict(), cfg.seed)
    if cfg_path:
        manifest.add_input(cfg_path)
    dataset = _load_data(args, extras, manifest)

    entry = run_correction(dataset, cfg, args.w)
    evaluation = evaluate(dataset, cfg, entry.pre, entry.post, w=args.w)

    thresholds_path = out_dir / "thresholds.json"
    write_json(
        {
            "config": cfg.to_dict(),
            "w": args.w,
            "pre": entry.pre.to_dict(),
            "post": entry.post.to_dict(),
            "selected": {"pre": entry.pre.to_dict(), "post": entry.post.to_dict()},
            "coveredness_gaps": entry.coveredness_gaps,
        },
        thresholds_path,
    )
    manifest.add_output(thresholds_path)
    eval_path = out_dir / "evaluation.csv"
    write_csv(evaluation_rows({args.w: evaluation}), EVALUATION_FIELDS, eval_path)
    manifest.add_output(eval_path)
    manifest.write(out_dir / "manifest_correct.json")
    print(f"wrote {thresholds_path}")
    return 0


def cmd_sweep(args) -> int:
    cfg, extras, cfg_path = _load_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest("sweep", cfg.to_dict(), cfg.seed)
    if cfg_path:
        manifest.add_input(cfg_path)
    dataset = _load_data(args, extras, manifest)

    result = sweep(dataset, cfg)

    thresholds_path = out_dir / "thresholds.json"
    write_json(result.to_dict(), thresholds_path)
    eval_path = out_dir / "evaluation.csv"
    write_csv(evaluation_rows(result.evaluations), EVALUATION_FIELDS, eval_path)
    curve_thresholds = out_dir / "curve_thresholds.csv"
    write_csv(result.threshold_rows(), THRESHOLD_FIELDS, curve_thresholds)
    curve_tradeoff = out_dir / "curve_tradeoff.csv"
    write_csv(result.tradeoff_rows(), TRADEOFF_FIELDS, curve_tradeoff)
    best_path = out_dir / "best_w.json"
    write_json({"definition": cfg.definition.value, "best_w": result.best_w}, best_path)
    for path in (thresholds_path, eval_path, curve_thresholds, curve_tradeoff, best_path):
        manifest.add_output(path)
    manifest.write(out_dir / "manifest_sweep.json")
    print(f"wrote {thresholds_path}; best w per tier: {result.best_w}")
    return 0


def cmd_apply(args) -> int:
    data_path = Path(args.data)
    tpath = Path(args.thresholds)
    matrix = _load_matrix(tpath)
    manifest = _Manifest("apply", {"thresholds": str(tpath)}, None)
    manifest.add_input(data_path)
    manifest.add_input(tpath)

    import csv as _csv

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with data_path.open(newline="", encoding="utf-8") as src, out.open(
        "w", newline="", encoding="utf-8"
    ) as dst:
        reader = _csv.DictReader(src)
        if reader.fieldnames is None:
            raise DataError(f"{data_path}: file is empty")
        for col in ("group", "score"):
            if col not in reader.fieldnames:
                raise DataError(f"{data_path}: missing column {col!r}")
        writer = _csv.writer(dst)
        writer.writerow(list(reader.fieldnames) + ["tier"])
        for row in reader:
            group = row["group"]
            if group not in matrix.groups:
                raise DataError(
                    f"row {reader.line_num}: group {group!r} not in thresholds file"
                )
            tier = assign_tier(float(row["score"]), group, matrix)
            writer.writerow([row[c] for c in reader.fieldnames] + [tier])
    manifest.add_output(out)
    manifest.write(out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# Entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairtiers",
        description="Group-specific risk-tier threshold correction and auditing.",
    )
    parser.add_argument("--version", action="version", version=f"fairtiers {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, definition=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=None, help="worker processes")
        if definition:
            p.add_argument(
                "--definition",
                choices=[d.value for d in FairnessDefinition],
                default=None,
                help="fairness definition override",
            )
        p.add_argument("--out-dir", default=".", help="artifact directory")

    p = sub.add_parser("synth", help="generate a synthetic scored dataset")
    p.add_argument("--config", required=True, help="synthetic recipe JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("audit", help="nine-definition fairness audit")
    p.add_argument("--data", required=True)
    p.add_argument(
        "--thresholds",
        required=True,
        help='thresholds JSON, or "agnostic" for the pre-correction audit',
    )
    common(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("correct", help="bagged correction at a single weight")
    p.add_argument("--data", required=True)
    p.add_argument("--w", type=float, required=True, help="penalty weight in [0, 1]")
    common(p)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("sweep", help="full penalty-weight sweep with evaluation")
    p.add_argument("--data", required=True)
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("apply", help="append tier labels using a thresholds file")
    p.add_argument("--data", required=True)
    p.add_argument("--thresholds", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:  # internal failure
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
