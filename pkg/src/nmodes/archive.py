"""Manifold archives (JSON) and plot-ready CSV tables."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .continuation import Eigenmanifold, GeneratorPoint
from .errors import ContractViolation

ARCHIVE_FORMAT = "nmodes-manifold"
ARCHIVE_VERSION = 1

REPORT_COLUMNS = ("model_a", "model_b", "mode", "component", "energy_J", "s_m", "metric", "value")
ENERGY_FREQUENCY_COLUMNS = ("model", "mode", "energy_J", "omega_rad_s", "freq_hz")
STROBE_COLUMNS = ("fraction", "time_s", "s_m", "x_m", "y_m", "z_m")


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file in the same directory."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# archives
# ---------------------------------------------------------------------------
def _floats(a) -> list[float]:
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def manifold_to_dict(manifold: Eigenmanifold, *, model_spec: dict | None = None, model_name: str = "") -> dict:
    return {
        "format": ARCHIVE_FORMAT,
        "version": ARCHIVE_VERSION,
        "model_name": model_name,
        "model_fingerprint": manifold.fingerprint,
        "model_spec": model_spec,
        "mode_index": manifold.mode_index,
        "linear_seed": {"omega": float(manifold.omega), "eigvec": _floats(manifold.eigvec)},
        "settings": manifold.settings,
        "truncated": manifold.truncated,
        "diagnostic": manifold.diagnostic,
        "points": [
            {
                "q0": _floats(p.q0),
                "T": float(p.T),
                "E": float(p.E),
                "residual_norm": float(p.residual_norm),
                "newton_iters": int(p.newton_iters),
            }
            for p in manifold.points
        ],
    }


def manifold_from_dict(doc: dict) -> Eigenmanifold:
    if doc.get("format") != ARCHIVE_FORMAT:
        raise ContractViolation("not a manifold archive")
    if doc.get("version") != ARCHIVE_VERSION:
        raise ContractViolation(f"unsupported archive version {doc.get('version')!r}")
    try:
        points = [
            GeneratorPoint(np.array(p["q0"], dtype=float), p["T"], p["E"], p["newton_iters"], p["residual_norm"])
            for p in doc["points"]
        ]
        seed = doc["linear_seed"]
        return Eigenmanifold(
            doc["mode_index"],
            seed["omega"],
            np.array(seed["eigvec"], dtype=float),
            points,
            doc["model_fingerprint"],
            doc["truncated"],
            doc["diagnostic"],
            doc["settings"],
        )
    except (KeyError, TypeError) as exc:
        raise ContractViolation(f"malformed manifold archive: {exc}") from None


def dumps_archive(doc: dict) -> str:
    # repr-based float output is the shortest string that round-trips exactly
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def save_archive(path, manifold: Eigenmanifold, *, model_spec=None, model_name: str = "") -> None:
    atomic_write_text(path, dumps_archive(manifold_to_dict(manifold, model_spec=model_spec, model_name=model_name)))


def load_archive_document(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ContractViolation(f"cannot parse archive {path}: {exc}") from None


def load_archive(path) -> Eigenmanifold:
    return manifold_from_dict(load_archive_document(path))


# ---------------------------------------------------------------------------
# CSV tables
# ---------------------------------------------------------------------------
def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows) -> None:
    atomic_write_text(path, csv_text(columns, rows))
