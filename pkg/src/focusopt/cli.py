"""Command-line entry point for reproducible runs.

Settings come from an optional flat ``key = value`` config file plus
``--key value`` flags; flags override file values, unknown keys are
rejected, and the fully resolved configuration is echoed into every output
record.  Identical config and seeds produce byte-identical output files.

Exit codes: 0 success, 1 usage/config error, 2 runtime/numeric failure.
"""

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bench, reportio, theory
from .backends import kernels
from .focus import FocusConfig
from .network import (MlpSpec, TrainingDiverged, load_checkpoint,
                      save_checkpoint, train_base)


class ConfigError(ValueError):
    pass


def _parse_bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _parse_int_list(s):
    return tuple(int(v) for v in s.split(",") if v.strip() != "")


def _parse_float_list(s):
    return tuple(float(v) for v in s.split(",") if v.strip() != "")


def _parse_pairs(s):
    pairs = []
    for item in s.split(","):
        item = item.strip()
        if not item:
            continue
        a, _, b = item.partition("-")
        pairs.append((int(a), int(b)))
    return tuple(pairs)


@dataclass(frozen=True)
class Field:
    parse: object
    default: object
    doc: str


# Defaults follow the refinement-step defaults (T=1, n_f=2, d12=0.16); the
# synthetic-benchmark and training defaults are the pinned desk-scale setup.
FOCUS_FIELDS = {
    "eta": Field(float, 1.0, "refinement learning rate (>= 0)"),
    "T": Field(int, 1, "refinement iterations"),
    "n_f": Field(int, 2, "number of focus classes (>= 2)"),
    "d12": Field(float, 0.16, "uncertainty threshold in [0, 1]"),
    "loss_kind": Field(str, "ifo", "ifo | dofo | entropy | ce_focus"),
    "weighted": Field(_parse_bool, True, "probability weighting (ifo, ce_focus)"),
    "clip_norm": Field(float, 1.0, "gradient clip norm (0 disables)"),
}

DATA_FIELDS = {
    "num_classes": Field(int, 5, "number of classes (>= 3)"),
    "samples_per_class": Field(int, 2000, "samples per class"),
    "feature_dim": Field(int, 8, "feature dimension (>= num_classes)"),
    "class_separation": Field(float, 4.0, "distance scale between class means"),
    "confusion_pairs": Field(_parse_pairs, ((0, 1), (2, 3)),
                             "pairs pulled together, e.g. 0-1,2-3"),
    "noise_scale": Field(float, 1.0, "cluster noise scale"),
    "data_seed": Field(int, 0, "dataset seed"),
}

TRAIN_FIELDS = {
    "hidden": Field(_parse_int_list, (24,), "hidden layer widths, e.g. 24 or 32,16"),
    "init_seed": Field(int, 1, "weight init seed"),
    "epochs": Field(int, 30, "training epochs"),
    "train_lr": Field(float, 0.05, "training learning rate"),
    "batch_size": Field(int, 64, "training batch size"),
    "train_seed": Field(int, 2, "shuffling seed"),
}

RUN_FIELDS = {
    "max_uncertain": Field(int, bench.DEFAULT_MAX_UNCERTAIN,
                           "cap on evaluated uncertain samples"),
    "jobs": Field(int, 1, "worker processes for sample-level evaluation"),
}

SWEEP_FIELDS = {
    "loss_kinds": Field(lambda s: tuple(v.strip() for v in s.split(",")),
                        ("ifo", "dofo", "entropy", "ce_focus"),
                        "loss kinds to evaluate"),
}

LR_SWEEP_FIELDS = {
    "base_lr": Field(float, 1e-3, "smallest learning rate"),
    "factor": Field(float, 2.0, "multiplicative step between rates"),
    "count": Field(int, 19, "number of rates"),
    "weighting": Field(str, "on", "on | off | both"),
}

TOPK_FIELDS = {
    "d12_grid": Field(_parse_float_list, (0.04, 0.16, 0.84),
                      "thresholds defining the evaluated subsets"),
}

SVM_FIELDS = {
    "t_multi": Field(int, 8, "iterations of the multi-step arm"),
    "powers": Field(_parse_int_list, (0, 1, 2, 3),
                    "single-step rate boosts: eta * 2**power"),
}

THEORY_CURVE_FIELDS = {
    "resolution": Field(int, 1000, "number of sweep points"),
}

THEORY_GRADS_FIELDS = {
    "coeffs": Field(_parse_float_list, (1.0, 1.0, 1.0, 0.0, 0.5, 0.25, 0.75),
                    "seven model coefficients"),
    "features": Field(_parse_float_list, (1.0, 0.8, 0.6, 0.9),
                      "four nonnegative feature values"),
}

COMMAND_FIELDS = {
    "gen-data": {**DATA_FIELDS},
    "train": {**TRAIN_FIELDS},
    "eval": {**FOCUS_FIELDS, **RUN_FIELDS},
    "sweep": {**FOCUS_FIELDS, **RUN_FIELDS, **SWEEP_FIELDS},
    "lr-sweep": {**FOCUS_FIELDS, **RUN_FIELDS, **LR_SWEEP_FIELDS},
    "topk": {**TOPK_FIELDS},
    "single-vs-multi": {**FOCUS_FIELDS, **RUN_FIELDS, **SVM_FIELDS},
    "theory-curve": {**THEORY_CURVE_FIELDS},
    "theory-grads": {**THEORY_GRADS_FIELDS},
}

PATH_ARGS = {
    "gen-data": [("--out", "output dataset CSV", True)],
    "train": [("--data", "input dataset CSV", True),
              ("--out", "output checkpoint", True)],
    "eval": [("--model", "checkpoint", True), ("--data", "dataset CSV", True),
             ("--out-dir", "output directory", True)],
    "sweep": [("--model", "checkpoint", True), ("--data", "dataset CSV", True),
              ("--out-dir", "output directory", True)],
    "lr-sweep": [("--model", "checkpoint", True), ("--data", "dataset CSV", True),
                 ("--out-dir", "output directory", True)],
    "topk": [("--model", "checkpoint", True), ("--data", "dataset CSV", True),
             ("--out-dir", "output directory", True)],
    "single-vs-multi": [("--model", "checkpoint", True),
                        ("--data", "dataset CSV", True),
                        ("--out-dir", "output directory", True)],
    "theory-curve": [("--out", "output CSV", True)],
    "theory-grads": [("--out-dir", "output directory", True)],
}


def read_config_file(path):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    pairs = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        pairs[key.strip()] = value.strip()
    return pairs


def resolve_config(fields, file_pairs, flag_pairs):
    """Defaults <- config file <- flags, with unknown keys rejected."""
    cfg = {k: f.default for k, f in fields.items()}
    for source, pairs in (("config file", file_pairs), ("flag", flag_pairs)):
        for key, raw in pairs.items():
            if key not in fields:
                raise ConfigError(f"unknown {source} key: {key!r}")
            if raw is None:
                continue
            try:
                cfg[key] = fields[key].parse(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})")
    return cfg


def _echo(cfg):
    """Config as an echo-able dict (tuples to lists for JSON)."""
    out = {}
    for k, v in cfg.items():
        if isinstance(v, tuple):
            out[k] = [list(p) if isinstance(p, tuple) else p for p in v]
        else:
            out[k] = v
    return out


def _base_record(command, cfg):
    return {
        "format_version": reportio.FORMAT_VERSION,
        "command": command,
        "backend": kernels.NAME,
        "config": _echo(cfg),
    }


def _focus_config(cfg):
    try:
        return FocusConfig(eta=cfg["eta"], T=cfg["T"], n_f=cfg["n_f"],
                           d12=cfg["d12"], loss_kind=cfg["loss_kind"],
                           weighted=cfg["weighted"], clip_norm=cfg["clip_norm"])
    except ValueError as exc:
        raise ConfigError(str(exc))


def _load_inputs(args):
    params = load_checkpoint(args.model)
    features, labels = reportio.read_dataset_csv(args.data)
    return params, bench.Dataset(features, labels)


def _report_rows(records):
    keys = list(records[0].keys()) if records else []
    flat_keys = [k for k in keys if k != "config"]
    return flat_keys, [[rec[k] for k in flat_keys] for rec in records]


def _write_reports(out_dir, stem, records):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reportio.write_jsonl(out / f"{stem}.jsonl", records)
    header, rows = _report_rows(records)
    reportio.write_csv(out / f"{stem}.csv", header, rows)


def _write_samples(out_dir, stem, report):
    rows = [[s.index, s.label, s.original, s.refined, s.delta12, s.outcome,
             s.diverged] for s in report.samples]
    reportio.write_csv(Path(out_dir) / f"{stem}_samples.csv",
                       ["index", "label", "original", "refined", "delta12",
                        "outcome", "diverged"], rows)


def cmd_gen_data(args, cfg):
    spec = bench.DatasetSpec(
        num_classes=cfg["num_classes"],
        samples_per_class=cfg["samples_per_class"],
        feature_dim=cfg["feature_dim"],
        class_separation=cfg["class_separation"],
        confusion_pairs=cfg["confusion_pairs"],
        noise_scale=cfg["noise_scale"],
        seed=cfg["data_seed"],
    )
    data = bench.gen_synthetic(spec)
    reportio.write_dataset_csv(args.out, data.features, data.labels)
    print(f"wrote {len(data)} samples to {args.out}")
    return 0


def cmd_train(args, cfg):
    features, labels = reportio.read_dataset_csv(args.data)
    num_classes = int(labels.max()) + 1
    widths = (features.shape[1], *cfg["hidden"], num_classes)
    spec = MlpSpec(widths, seed=cfg["init_seed"])
    result = train_base(spec, features, labels, cfg["epochs"], cfg["train_lr"],
                        cfg["batch_size"], cfg["train_seed"])
    save_checkpoint(result.params, args.out)
    rec = _base_record("train", cfg)
    rec["final_train_accuracy"] = result.final_train_accuracy
    rec["widths"] = list(widths)
    print(reportio.json_record(rec))
    return 0


def cmd_eval(args, cfg):
    params, data = _load_inputs(args)
    report = bench.evaluate_config(params, data, _focus_config(cfg),
                                   cfg["max_uncertain"], cfg["jobs"])
    rec = report.to_record(**_base_record("eval", cfg))
    _write_reports(args.out_dir, "eval", [rec])
    _write_samples(args.out_dir, "eval", report)
    print(f"delta_acc {reportio.fmt_float(report.delta_acc)} "
          f"on {report.n_evaluated} uncertain samples")
    return 0


def cmd_sweep(args, cfg):
    params, data = _load_inputs(args)
    records = []
    for kind in cfg["loss_kinds"]:
        run_cfg = dict(cfg, loss_kind=kind)
        report = bench.evaluate_config(params, data, _focus_config(run_cfg),
                                       cfg["max_uncertain"], cfg["jobs"])
        records.append(report.to_record(**_base_record("sweep", run_cfg)))
    _write_reports(args.out_dir, "sweep", records)
    print(f"wrote {len(records)} reports to {args.out_dir}")
    return 0


def cmd_lr_sweep(args, cfg):
    params, data = _load_inputs(args)
    modes = {"on": [True], "off": [False], "both": [True, False]}
    if cfg["weighting"] not in modes:
        raise ConfigError("weighting must be on | off | both")
    records = []
    for weighted in modes[cfg["weighting"]]:
        run_cfg = dict(cfg, weighted=weighted)
        lrs, reports = bench.lr_sweep(params, data, _focus_config(run_cfg),
                                      cfg["base_lr"], cfg["factor"],
                                      cfg["count"], cfg["max_uncertain"],
                                      cfg["jobs"])
        for report in reports:
            records.append(report.to_record(**_base_record("lr-sweep", run_cfg)))
    _write_reports(args.out_dir, "lr_sweep", records)
    print(f"wrote {len(records)} reports to {args.out_dir}")
    return 0


def cmd_topk(args, cfg):
    params, data = _load_inputs(args)
    num_classes = params.spec.num_classes
    records = []
    for d12 in cfg["d12_grid"]:
        uncertain, _ = bench.partition_uncertain(params, data, d12)
        for k in range(1, num_classes + 1):
            rec = _base_record("topk", cfg)
            rec.update({
                "d12": d12,
                "k": k,
                "n_subset": len(uncertain),
                "topk_accuracy": (bench.topk_accuracy(params, uncertain, k)
                                  if len(uncertain) else float("nan")),
            })
            records.append(rec)
    _write_reports(args.out_dir, "topk", records)
    print(f"wrote {len(records)} rows to {args.out_dir}")
    return 0


def cmd_single_vs_multi(args, cfg):
    params, data = _load_inputs(args)
    base = _focus_config(cfg)
    result = bench.single_vs_multi(params, data, cfg["eta"], cfg["t_multi"],
                                   cfg["powers"], base, cfg["max_uncertain"],
                                   cfg["jobs"])
    records = []
    rec = result.multi_report.to_record(**_base_record("single-vs-multi", cfg))
    rec.update({"arm": "multi", "power": None})
    records.append(rec)
    for power, report in result.single_reports:
        rec = report.to_record(**_base_record("single-vs-multi", cfg))
        rec.update({"arm": "single", "power": power})
        records.append(rec)
    _write_reports(args.out_dir, "single_vs_multi", records)
    print(f"wrote {len(records)} reports to {args.out_dir}")
    return 0


def cmd_theory_curve(args, cfg):
    curve = theory.coefficient_curve(cfg["resolution"])
    rows = zip(curve.p, curve.alpha_ifo, curve.g_a, curve.g_b)
    reportio.write_csv(args.out, ["p", "alpha_ifo", "g_a", "g_b"],
                       ([float(a), float(b), float(c), float(d)]
                        for a, b, c, d in rows))
    print(f"wrote {len(curve.p)} rows to {args.out}")
    return 0


def cmd_theory_grads(args, cfg):
    try:
        model = theory.ToyModel(cfg["coeffs"], cfg["features"])
    except ValueError as exc:
        raise ConfigError(str(exc))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kinds = [("ifo_unweighted", 0), ("dofo", 0), ("entropy", 0),
             ("single_plus", 0), ("single_plus", 1), ("single_plus", 2),
             ("single_minus", 0), ("single_minus", 1), ("single_minus", 2)]
    rows = []
    for kind, idx in kinds:
        rep = theory.toy_grad(model, kind, idx)
        label = kind if not kind.startswith("single") else f"{kind}_{idx}"
        rows.append([label] + [float(v) for v in rep.partials]
                    + [rep.shared_pathway])
    reportio.write_csv(out / "theory_grads.csv",
                       ["loss"] + [f"dc{i}" for i in range(7)] + ["shared_pathway"],
                       rows)
    amp = theory.amplification_report(model)
    rec = _base_record("theory-grads", cfg)
    rec.update({
        "regime": amp.regime,
        "ifo_pathway": amp.ifo_pathway,
        "single_pathway": amp.single_pathway,
        "entropy_pathway": amp.entropy_pathway,
        "ifo_exceeds_single": amp.ifo_exceeds_single,
        "entropy_below_ifo": amp.entropy_below_ifo,
    })
    reportio.write_jsonl(out / "amplification.jsonl", [rec])
    print(f"wrote theory tables to {out}")
    return 0


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "lr-sweep": cmd_lr_sweep,
    "topk": cmd_topk,
    "single-vs-multi": cmd_single_vs_multi,
    "theory-curve": cmd_theory_curve,
    "theory-grads": cmd_theory_grads,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="focusopt",
        description="uncertainty-gated test-time prediction refinement")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, fields in COMMAND_FIELDS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", help="flat key = value config file")
        for flag, doc, required in PATH_ARGS[command]:
            p.add_argument(flag, help=doc, required=required)
        for key, f in fields.items():
            p.add_argument(f"--{key}", dest=f"opt_{key}", metavar="V",
                           help=f"{f.doc} (default: {f.default})")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    fields = COMMAND_FIELDS[args.command]
    try:
        file_pairs = read_config_file(args.config) if args.config else {}
        flag_pairs = {k: getattr(args, f"opt_{k}") for k in fields
                      if getattr(args, f"opt_{k}", None) is not None}
        cfg = resolve_config(fields, file_pairs, flag_pairs)
        return HANDLERS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
