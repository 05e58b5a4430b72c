"""Deterministic emission of reports and datasets.

All numeric output is printed with 17 significant digits, which round-trips
float64 exactly, so identical runs produce byte-identical files.  Records go
to JSON-lines (one record per configuration) and flat CSV for plotting.
"""

import json

import numpy as np

FORMAT_VERSION = 1


def fmt_float(x):
    """%.17g rendering; exact round-trip for float64."""
    return "%.17g" % x


def _json_value(v):
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not np.isfinite(v):
            return "null"
        return fmt_float(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_json_value(u) for u in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(
            f"{json.dumps(str(k))}: {_json_value(u)}" for k, u in v.items()
        ) + "}"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def json_record(record):
    """One JSON object on one line, floats at 17 significant digits."""
    return _json_value(dict(record))


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json_record(rec) + "\n")


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(float(v))
    s = str(v)
    if any(ch in s for ch in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(v) for v in row) + "\n")


def write_dataset_csv(path, features, labels):
    """Dataset file: header ``label,f0,f1,...`` then one sample per row."""
    d = features.shape[1]
    header = ["label"] + [f"f{i}" for i in range(d)]
    rows = ([int(y)] + [float(v) for v in x] for x, y in zip(features, labels))
    write_csv(path, header, rows)


def read_dataset_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "label":
            raise ValueError(f"not a dataset file: {path}")
        feats, labels = [], []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if not parts or parts == [""]:
                continue
            labels.append(int(parts[0]))
            feats.append([float(v) for v in parts[1:]])
    return np.asarray(feats, dtype=np.float64), np.asarray(labels, dtype=np.int64)
