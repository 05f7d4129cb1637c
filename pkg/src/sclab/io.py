"""Binary field dumps and CSV exports.

Binary layout (little endian): magic ``SCLB``, version ``u32``, ``n`` as ``u32``, per-axis
count ``u32``, per-axis ``lo`` and ``hi`` as ``f64``, ``eps`` as ``f64``, then row-major
``(re, im)`` ``f64`` pairs.  Version 2 stores phase-space fields: after the position
block follow the kind code ``u32`` and per-axis momentum count ``u32``, ``lo``, ``hi``
(``f64``); values are then real ``f64``.  Axis bounds are cell edges.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .classical import MeasurePath, ParticleEnsemble
from .grid import Axis, SpatialGrid, Wavefunction
from .phase_space import PhaseSpaceField

__all__ = [
    "MAGIC",
    "dump_wavefunction",
    "load_wavefunction",
    "dump_field",
    "load_field",
    "write_csv",
    "write_diagnostics_csv",
    "write_ensemble_csv",
    "read_ensemble_csv",
    "write_measure_path",
    "write_convergence_csv",
    "write_manifest",
]

MAGIC = b"SCLB"
KINDS = {"wigner": 0, "husimi": 1}
DIAGNOSTIC_COLUMNS = ("t", "mass", "energy", "Hnorm2", "coulomb_moment", "tail_R1", "tail_R2")


def _axes_block(axes: Sequence[Axis]) -> bytes:
    out = struct.pack(f"<{len(axes)}I", *(a.count for a in axes))
    for a in axes:
        out += struct.pack("<2d", a.lo, a.hi)
    return out


def _read_axes(buf: bytes, pos: int, n: int) -> tuple:
    counts = struct.unpack_from(f"<{n}I", buf, pos)
    pos += 4 * n
    axes = []
    for c in counts:
        lo, hi = struct.unpack_from("<2d", buf, pos)
        pos += 16
        axes.append(Axis(lo, hi, c))
    return tuple(axes), pos


def _header(buf: bytes, expected: int) -> tuple:
    if buf[:4] != MAGIC:
        raise ValueError("not an SCLB file")
    version, n = struct.unpack_from("<2I", buf, 4)
    if version != expected:
        raise ValueError(f"expected version {expected}, found {version}")
    return n, 12


def dump_wavefunction(psi: Wavefunction, path) -> Path:
    path = Path(path)
    axes = psi.grid.axes
    head = MAGIC + struct.pack("<2I", 1, len(axes)) + _axes_block(axes) + struct.pack("<d", psi.eps)
    body = np.ascontiguousarray(psi.values, dtype="<c16").tobytes()
    path.write_bytes(head + body)
    return path


def load_wavefunction(path) -> Wavefunction:
    buf = Path(path).read_bytes()
    n, pos = _header(buf, 1)
    axes, pos = _read_axes(buf, pos, n)
    (eps,) = struct.unpack_from("<d", buf, pos)
    pos += 8
    shape = tuple(a.count for a in axes)
    values = np.frombuffer(buf, dtype="<c16", offset=pos, count=int(np.prod(shape))).reshape(shape)
    return Wavefunction(SpatialGrid(axes), eps, values.astype(complex))


def dump_field(field: PhaseSpaceField, path) -> Path:
    path = Path(path)
    head = MAGIC + struct.pack("<2I", 2, len(field.x_axes)) + _axes_block(field.x_axes)
    head += struct.pack("<d", field.eps)
    head += struct.pack("<I", KINDS[field.kind]) + _axes_block(field.p_axes)
    path.write_bytes(head + np.ascontiguousarray(field.values, dtype="<f8").tobytes())
    return path


def load_field(path) -> PhaseSpaceField:
    buf = Path(path).read_bytes()
    n, pos = _header(buf, 2)
    x_axes, pos = _read_axes(buf, pos, n)
    (eps,) = struct.unpack_from("<d", buf, pos)
    (kind,) = struct.unpack_from("<I", buf, pos + 8)
    p_axes, pos = _read_axes(buf, pos + 12, n)
    shape = tuple(a.count for a in x_axes) + tuple(a.count for a in p_axes)
    values = np.frombuffer(buf, dtype="<f8", offset=pos, count=int(np.prod(shape))).reshape(shape)
    name = {v: k for k, v in KINDS.items()}[kind]
    return PhaseSpaceField(x_axes, p_axes, values.copy(), name, eps)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()) -> Path:
    """Plain CSV; floats in ``repr`` form so reruns are byte-identical."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def write_diagnostics_csv(path, diagnostics: Sequence) -> Path:
    rows = []
    for d in diagnostics:
        tails = list(d.tails) + [float("nan")] * (2 - len(d.tails))
        rows.append([d.t, d.mass, d.energy, d.Hnorm2, d.coulomb_moment, tails[0], tails[1]])
    return write_csv(path, DIAGNOSTIC_COLUMNS, rows)


def write_ensemble_csv(path, ens: ParticleEnsemble) -> Path:
    n = ens.n
    cols = ["id"] + [f"x{i}" for i in range(n)] + [f"p{i}" for i in range(n)] + ["weight", "flag"]
    rows = ([i, *map(float, ens.x[i]), *map(float, ens.p[i]), float(ens.weights[i]), int(ens.absorbed[i])]
            for i in range(ens.size))
    return write_csv(path, cols, rows)


def read_ensemble_csv(path) -> ParticleEnsemble:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = (data.shape[1] - 3) // 2
    return ParticleEnsemble(data[:, 1:1 + n], data[:, 1 + n:1 + 2 * n], data[:, -2], data[:, -1].astype(bool))


def write_measure_path(directory, path: MeasurePath, stem: str = "ensemble") -> Path:
    """One ensemble CSV per sample time plus ``index.csv`` listing ``(step, t, file)``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (t, e) in enumerate(zip(path.times, path.ensembles)):
        name = f"{stem}_{i:04d}.csv"
        write_ensemble_csv(directory / name, e)
        rows.append([i, float(t), name])
    return write_csv(directory / "index.csv", ["step", "t", "file"], rows)


def write_convergence_csv(path, report) -> Path:
    """``eps, D, stderr, excluded_fraction`` with the dictionary in a comment header."""
    rows = [[r.eps, r.D, r.stderr, r.excluded_fraction] for r in report.results]
    header = "dictionary: " + json.dumps(report.dictionary.header(), sort_keys=True)
    return write_csv(path, ["eps", "D", "stderr", "excluded_fraction"], rows, [header])


def write_manifest(path, content: dict, timestamp: str) -> Path:
    """JSON with sorted keys; ``timestamp`` is the only run-dependent entry."""
    path = Path(path)
    body = dict(content)
    body["timestamp"] = timestamp
    path.write_text(json.dumps(body, sort_keys=True, indent=2, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (tuple, set)):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")
