"""Plain-text persistence: curve CSVs with JSON sidecars, datasets, BER
tables, and content hashing.

Floats are written with ``repr`` so files round-trip exactly and reruns are
byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend_name
from .fitting import DATASET_COLUMNS, DatasetRow, ParamDataset
from .geometry import SystemParams
from .sim import ChannelCurve


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    return repr(float(x))


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def sha256_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_curves(path, s11: ChannelCurve, s21: ChannelCurve, params: SystemParams, simcfg,
                 include_replications=False, extra_meta=None):
    """``t,s11_mean,s21_mean[,rep_0,...]`` plus ``<path>.json`` metadata.

    Replication columns hold the aligned-link (S11) per-replication curves.
    """
    header = ["t", "s11_mean", "s21_mean"]
    reps = s11.per_replication_fraction if include_replications else None
    if reps is not None:
        header += [f"rep_{i}" for i in range(reps.shape[0])]
    rows = []
    for k in range(len(s11)):
        row = [_fmt(s11.time_grid[k]), _fmt(s11.mean_fraction[k]), _fmt(s21.mean_fraction[k])]
        if reps is not None:
            row += [_fmt(v) for v in reps[:, k]]
        rows.append(row)
    _write_rows(path, header, rows)
    body = simcfg.body.resolve(params)
    meta = {
        "system": params.to_dict(),
        "sim": simcfg.to_dict(),
        "body": body.to_dict(),
        "seed": int(simcfg.rng_seed),
        "emitter": int(s11.emitter_id),
        "software_version": __version__,
        "hit_detection": "end-of-step + brownian-bridge" if simcfg.bridge else "end-of-step",
    }
    meta.update(extra_meta or {})
    write_json(sidecar(path), meta)


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_curves(path):
    """Returns ``(s11, s21, meta)``; ``meta`` is ``None`` without a sidecar."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r], dtype=float)
    if header[:3] != ["t", "s11_mean", "s21_mean"]:
        raise ValueError(f"{path}: unexpected header {header[:3]}")
    reps = data[:, 3:].T if data.shape[1] > 3 else None
    s11 = ChannelCurve(data[:, 0], data[:, 1], 1, 1, reps)
    s21 = ChannelCurve(data[:, 0], data[:, 2], 2, 1)
    meta = read_json(sidecar(path)) if sidecar(path).exists() else None
    return s11, s21, meta


def write_dataset(path, dataset: ParamDataset):
    rows = []
    for row in dataset.rows:
        rows.append([_fmt(v) for v in row.sys.as_tuple()] + [_fmt(v) for v in row.coeffs]
                    + [_fmt(row.rmse11), _fmt(row.rmse21), _fmt(row.converged11), _fmt(row.converged21)])
    _write_rows(path, list(DATASET_COLUMNS), rows)


def read_dataset(path) -> ParamDataset:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            coeffs = np.array([float(rec[f"b{i}"]) for i in range(1, 7)])
            rows.append(DatasetRow(SystemParams(*(float(rec[k]) for k in ("d", "h", "R", "D"))),
                                   coeffs, float(rec["rmse11"]), float(rec["rmse21"]),
                                   rec["converged11"] == "1", rec["converged21"] == "1",
                                   None if np.all(np.isfinite(coeffs)) else "fit failed"))
    return ParamDataset(rows)


def write_ber(path, taus, analytic, mc_results, meta=None):
    rows = [[_fmt(t), _fmt(a), _fmt(m.p_e), _fmt(m.standard_error)]
            for t, a, m in zip(taus, analytic, mc_results)]
    _write_rows(path, ["tau", "p_e_analytic", "p_e_mc", "mc_stderr"], rows)
    write_json(sidecar(path), dict(meta or {}, software_version=__version__))


def write_table(path, header, rows):
    _write_rows(path, header, [[v if isinstance(v, str) else _fmt(v) for v in row] for row in rows])


def write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def scan_files(root, exclude=("manifest.json",)):
    root = Path(root)
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            p = Path(dirpath) / name
            rel = p.relative_to(root).as_posix()
            if rel in exclude:
                continue
            out[rel] = sha256_file(p)
    return dict(sorted(out.items()))


def runtime_info():
    return {"software_version": __version__, "kernel_backend": backend_name()}
