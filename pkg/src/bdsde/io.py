"""Report writers with provenance headers.

CSV files start with ``#`` comment lines naming the artifact version, the
config hash and the master seed, followed by a mandatory header row. Floats
are written with ``repr`` so equal arrays give equal bytes.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__


def provenance(cfg):
    return {"artifact_version": __version__, "config_sha256": cfg.config_hash(),
            "master_seed": cfg.monte_carlo.master_seed, "command": cfg.command}


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, columns, rows, meta):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for key, value in meta.items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def write_json(path, payload, meta):
    path = Path(path)
    body = {"provenance": meta, **_jsonable(payload)}
    path.write_text(json.dumps(body, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


def write_outputs(cfg, name, report, tables):
    """Write the resolved config echo, the JSON report and the CSV tables."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = provenance(cfg)
    written = [write_json(out / "resolved_config.json", cfg.model_dump(mode="json"), meta)]
    if "json" in cfg.formats:
        written.append(write_json(out / f"{name}.json", report, meta))
    if "csv" in cfg.formats:
        for table, (columns, rows) in tables.items():
            written.append(write_csv(out / f"{table}.csv", columns, rows, meta))
    return written
