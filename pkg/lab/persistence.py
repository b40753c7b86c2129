"""
On-disk formats.

Snapshot file (``.vlsnap``):

    bytes 0-7    magic b"VLSNAP01"
    bytes 8-11   header length H, little-endian uint32
    next H       UTF-8 JSON header
                 {format_version, dim, N, L, time, mu, fields: [{name, rank}, ...]}
    remainder    for each field in header order, its coefficients as
                 little-endian complex128, row-major: component axes first,
                 then the mode axes in numpy FFT order.

A trajectory directory holds snapshot_<index>.vlsnap files, monitors.csv,
energy_steps.csv and manifest.json. Every file is written to a temporary
file in the same directory and renamed into place.
"""

import csv
import hashlib
import io
import json
import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from lab import __version__
from lab.exceptions import ContractViolation
from lab.solver import State
from lab.spectral import Grid, SpectralField

logger = logging.getLogger(__name__)

MAGIC = b"VLSNAP01"
FORMAT_VERSION = 1
COEFF_DTYPE = np.dtype("<c16")
MANIFEST_NAME = "manifest.json"


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text):
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, payload):
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def write_csv(path, rows, columns=None):
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _csv_value(row.get(k)) for k in columns})
    return atomic_write_text(path, buffer.getvalue())


def read_csv(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def _csv_value(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def canonical_json(payload):
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_json_default)


def config_hash(payload):
    """Git-style blob SHA-1 of the canonical JSON of the config."""
    data = canonical_json(payload).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def encode_snapshot(fields, time=0.0, mu=1.0):
    """`fields` maps names to SpectralFields on one grid."""
    if not fields:
        raise ContractViolation("a snapshot needs at least one field")
    grids = {f.grid for f in fields.values()}
    if len(grids) != 1:
        raise ContractViolation("all snapshot fields must share a grid")
    grid = grids.pop()
    header = {
        "format_version": FORMAT_VERSION,
        "dim": grid.dim,
        "N": grid.points_per_axis,
        "L": grid.box_length,
        "time": float(time),
        "mu": float(mu),
        "fields": [{"name": name, "rank": f.rank} for name, f in fields.items()],
    }
    if len(fields) == 1:
        header["rank"] = next(iter(fields.values())).rank
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(f.coeffs, dtype=COEFF_DTYPE).tobytes() for f in fields.values())
    return MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + payload


def decode_snapshot(data):
    """Return (header, {name: SpectralField})."""
    if data[:8] != MAGIC:
        raise ContractViolation("not a snapshot file: bad magic")
    (length,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + length].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ContractViolation(f"unsupported snapshot version {header.get('format_version')}")
    grid = Grid(header["dim"], header["N"], header["L"])
    offset = 12 + length
    fields = {}
    for entry in header["fields"]:
        shape = (grid.dim,) * entry["rank"] + grid.shape
        count = int(np.prod(shape))
        end = offset + count * COEFF_DTYPE.itemsize
        if end > len(data):
            raise ContractViolation(f"snapshot payload truncated in field '{entry['name']}'")
        coeffs = np.frombuffer(data[offset:end], dtype=COEFF_DTYPE).reshape(shape)
        fields[entry["name"]] = SpectralField(grid, entry["rank"], coeffs)
        offset = end
    return header, fields


def save_state(path, state):
    return atomic_write_bytes(path, encode_snapshot({"u": state.u, "E": state.E}, state.t, state.mu))


def load_state(path):
    header, fields = decode_snapshot(Path(path).read_bytes())
    return State(fields["u"], fields["E"], header["time"], header["mu"])


class TrajectoryWriter:
    """Writes a run into `directory`; `finalize` emits the manifest."""

    def __init__(self, directory, config=None, seeds=None):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.config = config or {}
        self.seeds = seeds or {}
        self.snapshots = []
        self.tables = {}

    def write_snapshot(self, index, state):
        name = f"snapshot_{index}.vlsnap"
        save_state(self.directory / name, state)
        self.snapshots.append({"index": index, "time": state.t, "file": name})
        logger.debug(f"wrote {name} at t={state.t:.6g}")
        return self.directory / name

    def write_rows(self, name, rows, columns=None):
        write_csv(self.directory / name, rows, columns)
        self.tables[Path(name).stem] = name
        return self.directory / name

    def write_json(self, name, payload):
        write_json(self.directory / name, payload)
        self.tables[Path(name).stem] = name
        return self.directory / name

    def manifest(self, **extra):
        return {
            "config": self.config,
            "config_hash": config_hash(self.config),
            "seeds": self.seeds,
            "code_version": __version__,
            "snapshot_format": {"magic": MAGIC.decode("ascii"), "version": FORMAT_VERSION},
            "snapshots": self.snapshots,
            "files": self.tables,
            **extra,
        }

    def finalize(self, **extra):
        payload = self.manifest(**extra)
        write_json(self.directory / MANIFEST_NAME, payload)
        logger.info(f"trajectory written to {self.directory} ({len(self.snapshots)} snapshots)")
        return payload


def read_manifest(directory):
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise ContractViolation(f"no manifest in {directory}")
    return json.loads(path.read_text())


def load_trajectory(directory):
    """States of a written trajectory, in snapshot order."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    entries = sorted(manifest["snapshots"], key=lambda entry: entry["index"])
    return [load_state(directory / entry["file"]) for entry in entries]
