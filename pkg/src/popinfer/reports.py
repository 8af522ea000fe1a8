"""Report persistence: JSON inference reports, sweep CSVs and sample files.

Outputs hold no timestamps or run ids, so identical inputs give
byte-identical files. Floats are written with 17 significant digits, which
round-trip exactly. NaN is written as ``nan`` in CSV and ``null`` in JSON.
"""

import csv
import dataclasses
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .gaussian import GaussianDensity

logger = logging.getLogger("popinfer.reports")

REPORT_FILENAME = "report.json"
SWEEP_FILENAME = "sweep.csv"
SUMMARY_FILENAME = "summary.json"

FLOAT_FORMAT = ".17g"
STATUS_OK = "ok"

PathLike = Union[str, Path]


def to_jsonable(value: Any) -> Any:
    """Convert numpy values, densities and dataclasses into plain JSON types."""
    if isinstance(value, GaussianDensity):
        return {"mean": to_jsonable(value.mean), "cov": to_jsonable(value.covariance)}
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {field.name: to_jsonable(getattr(value, field.name)) for field in dataclasses.fields(value)}
    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _json_float(value: float) -> str:
    if not math.isfinite(value):
        raise ValueError(f"Out of range float value {value!r} is not JSON compliant")
    text = format(value, FLOAT_FORMAT)
    # keep floats recognizable as floats when .17g drops the fraction
    return text if any(c in text for c in ".en") else text + ".0"


class FixedDigitsEncoder(json.JSONEncoder):
    """JSON encoder writing floats with 17 significant digits like the CSV files."""

    def iterencode(self, o: Any, _one_shot: bool = False):
        encode_string = (
            json.encoder.py_encode_basestring_ascii if self.ensure_ascii else json.encoder.py_encode_basestring
        )
        iterencode = json.encoder._make_iterencode(
            {} if self.check_circular else None,
            self.default,
            encode_string,
            self.indent,
            _json_float,
            self.key_separator,
            self.item_separator,
            self.sort_keys,
            self.skipkeys,
            _one_shot,
        )
        return iterencode(o, 0)


def dumps_json(document: Any) -> str:
    """Serialize a report document as sorted, indented JSON with 17-digit floats."""
    return json.dumps(to_jsonable(document), indent=2, sort_keys=True, cls=FixedDigitsEncoder)


def _dump(document: Any, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(document) + "\n", encoding="utf-8")
    return path


def write_report(report: Dict[str, Any], out_dir: PathLike, filename: str = REPORT_FILENAME) -> Path:
    """Write an inference report as JSON.

    Args:
        report: Report dictionary; numpy arrays and densities are converted
        out_dir: Output directory, created when missing
        filename: Name of the report file

    Returns:
        Path of the written file
    """
    path = _dump(report, Path(out_dir) / filename)
    logger.info(f"Wrote report {path}")
    return path


def format_float(value: float) -> str:
    value = float(value)
    if math.isnan(value):
        return "nan"
    return format(value, FLOAT_FORMAT)


def data_columns(dim: int) -> List[str]:
    return ["y"] if dim == 1 else [f"y_{k + 1}" for k in range(dim)]


def sweep_columns(data_dim: int, with_acceptance: bool = False) -> List[str]:
    columns = ["realization", *data_columns(data_dim), "kl_standard", "kl_pop", "relative_gain", "ood_flag"]
    if with_acceptance:
        columns.append("acceptance_rate")
    columns.append("status")
    return columns


def _format_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def write_sweep(
    rows: Sequence[Dict[str, Any]],
    out_dir: PathLike,
    data_dim: int,
    extra_summary: Optional[Dict[str, Any]] = None,
) -> Dict[str, Path]:
    """Write per-realization rows to ``sweep.csv`` and their summary to ``summary.json``.

    Each row holds ``realization``, ``data`` (the y vector), the KL pair,
    ``relative_gain``, ``ood_flag``, ``status`` and optionally
    ``acceptance_rate``. Rows are written in realization order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = sorted(rows, key=lambda row: row["realization"])
    with_acceptance = any("acceptance_rate" in row for row in rows)
    columns = sweep_columns(data_dim, with_acceptance)

    csv_path = out_dir / SWEEP_FILENAME
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            cells = [row["realization"], *np.atleast_1d(row["data"])]
            cells += [row["kl_standard"], row["kl_pop"], row["relative_gain"], row["ood_flag"]]
            if with_acceptance:
                cells.append(row.get("acceptance_rate", math.nan))
            cells.append(row["status"])
            writer.writerow([_format_cell(cell) for cell in cells])

    summary = summarize_rows(rows)
    if extra_summary:
        summary.update(extra_summary)
    summary_path = _dump(summary, out_dir / SUMMARY_FILENAME)
    logger.info(f"Wrote {len(rows)} sweep rows to {csv_path}")
    return {"rows": csv_path, "summary": summary_path}


def read_sweep_rows(path: PathLike) -> List[Dict[str, Any]]:
    """Read ``sweep.csv`` back into row dictionaries shaped like the ones written."""
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for record in csv.DictReader(f):
            y_keys = [key for key in record if key == "y" or key.startswith("y_")]
            row = {
                "realization": int(record["realization"]),
                "data": [float(record[key]) for key in y_keys],
                "kl_standard": float(record["kl_standard"]),
                "kl_pop": float(record["kl_pop"]),
                "relative_gain": float(record["relative_gain"]),
                "ood_flag": bool(int(record["ood_flag"])),
                "status": record["status"],
            }
            if "acceptance_rate" in record:
                row["acceptance_rate"] = float(record["acceptance_rate"])
            rows.append(row)
    return rows


def _mean(values: List[float]) -> float:
    return float(np.mean(values)) if values else math.nan


def _fraction(flags: List[bool]) -> float:
    return float(np.mean(flags)) if flags else math.nan


def summarize_rows(rows: Iterable[Dict[str, Any]]) -> Dict[str, Any]:
    """Summary statistics of sweep rows; failed rows only count towards ``n_failed``."""
    rows = list(rows)
    ok = [row for row in rows if row["status"] == STATUS_OK]
    gains = [row["relative_gain"] for row in ok]
    negative = [row for row in ok if row["relative_gain"] < 0.0]
    positive = [row for row in ok if row["relative_gain"] >= 0.0]

    summary: Dict[str, Any] = {
        "n_realizations": len(rows),
        "n_failed": len(rows) - len(ok),
        "mean_kl_standard": _mean([row["kl_standard"] for row in ok]),
        "mean_kl_pop": _mean([row["kl_pop"] for row in ok]),
        "mean_relative_gain": _mean(gains),
        "min_relative_gain": float(np.min(gains)) if gains else math.nan,
        "max_relative_gain": float(np.max(gains)) if gains else math.nan,
        "fraction_negative": _fraction([gain < 0.0 for gain in gains]),
        "ood_fraction": _fraction([row["ood_flag"] for row in ok]),
        "ood_fraction_negative": _fraction([row["ood_flag"] for row in negative]),
        "ood_fraction_positive": _fraction([row["ood_flag"] for row in positive]),
    }
    rates = [row["acceptance_rate"] for row in ok if "acceptance_rate" in row]
    if rates:
        summary["acceptance_rate"] = {
            "mean": float(np.mean(rates)),
            "min": float(np.min(rates)),
            "max": float(np.max(rates)),
        }
    return summary


def write_samples(samples: np.ndarray, path: PathLike, prefix: str = "lambda") -> Path:
    """Write an (N, n) sample matrix as CSV with columns ``lambda_1..lambda_n``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([f"{prefix}_{k + 1}" for k in range(samples.shape[1])])
        for sample in samples:
            writer.writerow([format_float(value) for value in sample])
    logger.info(f"Wrote {samples.shape[0]} samples to {path}")
    return path


def read_samples(path: PathLike) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
