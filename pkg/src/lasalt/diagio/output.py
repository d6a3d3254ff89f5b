"""Diagnostics, field dumps and plot data on disk.

* ``diagnostics.ndjson``: one JSON object per record, ``{"t":...,"name":...}``,
  compact separators, floats in shortest round-trip form, flushed per record.
* ``<stem>.f64`` + ``<stem>.json``: raw little-endian float64 in row-major
  order plus a sidecar with the shape and run metadata.
* ``plotdata/<name>.csv``: two columns ``t,<name>``.
"""

import json
import os

import numpy as np


def _record_items(record):
    if hasattr(record, "values") and hasattr(record, "t"):
        return record.t, record.values
    record = dict(record)
    return record.pop("t"), record


def format_record(record):
    """One NDJSON line (with the trailing newline) for a record."""
    t, values = _record_items(record)
    obj = {"t": float(t)}
    for name, value in values.items():
        if name == "t":
            raise ValueError("diagnostic name 't' is reserved")
        obj[str(name)] = float(value)
    return json.dumps(obj, separators=(",", ":")) + "\n"


class DiagnosticsWriter:
    """Append records to an NDJSON file, flushing after each one."""

    def __init__(self, path):
        self.path = os.fspath(path)
        self._fh = open(self.path, "w", encoding="utf-8", newline="\n")

    def write(self, record):
        self._fh.write(format_record(record))
        self._fh.flush()

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_diagnostics(records, path):
    with DiagnosticsWriter(path) as writer:
        for record in records:
            writer.write(record)


def read_diagnostics(path):
    """List of dicts, one per line, ``t`` included."""
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _sidecar(shape, metadata):
    meta = dict(metadata or {})
    meta["shape"] = [int(s) for s in shape]
    if len(shape) == 1:
        meta.setdefault("n", int(shape[0]))
    elif len(shape) == 2:
        meta.setdefault("nx", int(shape[0]))
        meta.setdefault("ny", int(shape[1]))
    for key in ("L", "t", "name", "model"):
        meta.setdefault(key, None)
    return meta


def dump_field(field, metadata, path_stem):
    """Write ``<stem>.f64`` and its ``<stem>.json`` sidecar."""
    arr = np.ascontiguousarray(field, dtype="<f8")
    stem = os.fspath(path_stem)
    with open(stem + ".f64", "wb") as fh:
        fh.write(arr.tobytes(order="C"))
    with open(stem + ".json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_sidecar(arr.shape, metadata), fh, sort_keys=True)
        fh.write("\n")


def load_field(path_stem):
    """Inverse of :func:`dump_field`; returns ``(array, metadata)``."""
    stem = os.fspath(path_stem)
    with open(stem + ".json", encoding="utf-8") as fh:
        meta = json.load(fh)
    data = np.fromfile(stem + ".f64", dtype="<f8")
    shape = tuple(meta["shape"])
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{stem}.f64 holds {data.size} values, sidecar says {shape}")
    return data.reshape(shape).astype(float), meta


def write_plotdata(records, directory):
    """One ``t,<name>`` CSV per diagnostic name, in first-seen order."""
    os.makedirs(directory, exist_ok=True)
    columns = {}
    for record in records:
        t, values = _record_items(record)
        for name, value in values.items():
            columns.setdefault(name, []).append((float(t), float(value)))
    paths = []
    for name, rows in columns.items():
        path = os.path.join(directory, f"{name}.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"t,{name}\n")
            fh.writelines(f"{t!r},{v!r}\n" for t, v in rows)
        paths.append(path)
    return paths
