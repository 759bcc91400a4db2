"""
Breather Lab Artifact Storage
=============================

Single place where results touch the disk: tables, manifests, lattice
fields and polynomial dumps. Every write is atomic (temp file in the
target directory, then rename) so concurrent sweep points never leave
half-written artifacts behind.
"""

import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Dict, Union

import numpy as np
import pandas as pd

from breather_lab.config import run as run_config
from breather_lab.lattice import Boundary, LatticeGrid, RealField

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


def get_output_root() -> Path:
    """Root directory for artifacts, overridable with BREATHER_LAB_OUTPUT."""
    return Path(run_config.output_root)


def atomic_write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except Exception as e:
        logger.error(f"Failed writing {path}: {e}")
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


# ------------------------------------------------------------------
# Tables and manifests
# ------------------------------------------------------------------

def table_to_csv(df: pd.DataFrame) -> str:
    return df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_table(df: pd.DataFrame, path: PathLike) -> Path:
    path = atomic_write_text(path, table_to_csv(df))
    logger.info(f"Wrote {len(df)} rows to {path}")
    return path


def read_table(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path)


def _json_default(value):
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "value"):
        return value.value
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(payload: Dict, path: PathLike) -> Path:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    return atomic_write_text(path, text + "\n")


def read_json(path: PathLike) -> Dict:
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


# ------------------------------------------------------------------
# Lattice fields
# ------------------------------------------------------------------

def field_to_text(field: RealField) -> str:
    body = table_to_csv(pd.DataFrame({"value": field.values}))
    return f"# {field.grid.header()}\n{body}"


def write_field(field: RealField, path: PathLike) -> Path:
    return atomic_write_text(path, field_to_text(field))


def parse_field_header(line: str) -> LatticeGrid:
    if not line.startswith("#"):
        raise ValueError(f"Field file must start with a '#' header, got {line!r}")
    entries = dict(item.split("=", 1) for item in line.lstrip("#").split())
    missing = {"d", "N", "boundary"} - entries.keys()
    if missing:
        raise ValueError(f"Field header missing keys: {sorted(missing)}")
    return LatticeGrid(int(entries["d"]), int(entries["N"]), Boundary(entries["boundary"]))


def read_field(path: PathLike) -> RealField:
    text = Path(path).read_text(encoding="utf-8")
    header, body = text.split("\n", 1)
    grid = parse_field_header(header)
    values = pd.read_csv(io.StringIO(body))["value"].to_numpy()
    return RealField(grid, values)
