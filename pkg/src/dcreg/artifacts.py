"""On-disk artifact handling: PGM images, CSV tables, run manifests, locks.

Images are 16-bit binary PGM (P5, maxval 65535, big-endian rows), mapping
[0, peak] linearly onto [0, 65535] with clipping.  CSV files use a header
row, comma separators and '.' decimals, with floats printed in shortest
round-trip form so that reruns produce byte-identical files.  A manifest
is written only after a command finishes: a half-written output directory
is recognizable by its absence.  A lock file guards each output directory
against concurrent writers.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from dcreg.linalg import DimensionMismatchError

MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".lock"


class LockError(RuntimeError):
    """The output directory is already claimed by another run."""


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------


def write_pgm(path, values: np.ndarray, peak: float = 1.0) -> None:
    """Write a grid as binary 16-bit PGM, mapping [0, peak] to [0, 65535]."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionMismatchError(f"write_pgm: expected 2-d grid, got {values.shape}")
    if peak <= 0:
        raise ValueError("write_pgm: peak must be positive")
    scaled = np.clip(values / peak, 0.0, 1.0) * 65535.0
    quantized = np.rint(scaled).astype(">u2")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(quantized.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM written by :func:`write_pgm`; returns floats in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    w, h = (int(tok) for tok in parts[1].split())
    maxval = int(parts[2])
    raw = parts[3][: w * h * 2]
    grid = np.frombuffer(raw, dtype=">u2").reshape(h, w).astype(np.float64)
    return grid / maxval


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def format_cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise DimensionMismatchError("write_csv: row width differs from header")
        lines.append(",".join(format_cell(cell) for cell in row))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", encoding="ascii") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


# ---------------------------------------------------------------------------
# manifest and lock
# ---------------------------------------------------------------------------


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    out_dir,
    stage: str,
    config_text: str,
    artifact_paths: list,
    metrics: dict | None = None,
    started: float | None = None,
) -> dict:
    """Checksum the run's artifacts and write the manifest (success marker).

    Returns the manifest dict.  Callers write this last; failures before
    this point leave the directory without a manifest.
    """
    import dcreg
    import scipy

    out_dir = Path(out_dir)
    checksums = {}
    for p in sorted(Path(p) for p in artifact_paths):
        checksums[p.name] = sha256_file(p)
    manifest = {
        "stage": stage,
        "config": config_text,
        "versions": {
            "dcreg": dcreg.__version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "wall_time_s": None if started is None else round(time.time() - started, 3),
        "checksums": checksums,
        "metrics": metrics or {},
    }
    tmp = out_dir / (MANIFEST_NAME + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, out_dir / MANIFEST_NAME)
    return manifest


def read_manifest(out_dir) -> dict:
    with open(Path(out_dir) / MANIFEST_NAME, "r", encoding="utf-8") as fh:
        return json.load(fh)


@contextmanager
def output_lock(out_dir):
    """Exclusive lock on an output directory for the duration of a command."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock_path = out_dir / LOCK_NAME
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(
            f"{out_dir} is locked by another run (remove {lock_path} if stale)"
        ) from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode("ascii"))
        os.close(fd)
        yield
    finally:
        try:
            os.unlink(lock_path)
        except FileNotFoundError:  # pragma: no cover - already cleaned up
            pass
