"""Campaign orchestration: grids, simulate -> fit -> train -> evaluate, and
plot-data emission.

A campaign directory is self-describing: ``config.json`` holds the fully
resolved settings and ``manifest.json`` maps every file to its SHA-256.
Simulated cases are skipped on rerun when the manifest records a matching
input hash and the file on disk still matches its recorded content hash.
"""
from __future__ import annotations

import itertools
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .channel import ModelParams, f11_model, f21_model, taps_from_model
from .fitting import ParamDataset, fit_case
from .geometry import CuboidSpec, SystemParams
from .link import BerConfig, TapSet, analytic_sweep, default_taus, monte_carlo_sweep
from .sim import SimConfig, simulate_channel
from .surrogate import (MODES, DatasetTooSmall, NonFiniteLoss, SurrogateEnsemble, TrainConfig,
                        evaluate_rmse, predict, train)

log = logging.getLogger(__name__)

TDS_DISTANCES = (3.0, 5.0, 7.0, 9.0, 11.0)
VDS_DISTANCES = (2.0, 4.0, 6.0, 8.0, 10.0)
SEPARATIONS = (0.0, 1.0, 2.0)
DIFFUSIVITIES = (50.0, 100.0)
RADII = (3.0, 5.0, 7.0)

NEAR_CASE = SystemParams(2, 1, 3, 100)
FAR_CASE = SystemParams(8, 1, 5, 50)
BER_CASE = SystemParams(6, 1, 5, 100)
BER_LINK = {"N": 1000, "t_s": 0.5, "eta": 5}

DESK_SCALE = {"n_molecules": 1000, "n_replications": 50}
FULL_SCALE = {"n_molecules": 3000, "n_replications": 500}


def generate_grid(kind="tds", d=None, h=None, R=None, D=None):
    """Cartesian parameter grid ordered lexicographically by (d, h, D, R).

    ``kind`` is ``"tds"`` or ``"vds"`` (distances from the training or
    validation set) or ``"custom"``, in which case every axis must be given.
    Explicit axes override the defaults for any kind.
    """
    if kind == "tds":
        d = TDS_DISTANCES if d is None else d
    elif kind == "vds":
        d = VDS_DISTANCES if d is None else d
    elif kind == "custom":
        if any(v is None for v in (d, h, R, D)):
            raise ValueError("custom grids need explicit d, h, R and D values")
    else:
        raise ValueError(f"unknown grid kind {kind!r}")
    h = SEPARATIONS if h is None else h
    R = RADII if R is None else R
    D = DIFFUSIVITIES if D is None else D
    axes = [sorted({float(v) for v in np.atleast_1d(a)}) for a in (d, h, D, R)]
    return [SystemParams(dd, hh, rr, DD) for dd, hh, DD, rr in itertools.product(*axes)]


def case_seed(seed, sys: SystemParams) -> int:
    """Per-case seed from the campaign seed and the case parameters, so a
    case gets the same stream in any grid or order."""
    key = [int(seed)] + [int(round(v * 1_000_000)) for v in sys.as_tuple()]
    return int(np.random.SeedSequence(key).generate_state(1, np.uint64)[0])


def case_config(cfg: SimConfig, sys: SystemParams) -> SimConfig:
    return replace(cfg, rng_seed=case_seed(cfg.rng_seed, sys))


def case_name(sys: SystemParams) -> str:
    return "d{:g}_h{:g}_R{:g}_D{:g}".format(*sys.as_tuple())


@dataclass
class Campaign:
    output_dir: Path
    simcfg: SimConfig = field(default_factory=lambda: SimConfig(body=CuboidSpec(enabled=True)))
    tds: list = field(default_factory=lambda: generate_grid("tds"))
    vds: list = field(default_factory=lambda: generate_grid("vds"))
    workers: int = 1
    modes: tuple = MODES
    half_tds: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    ber: dict = field(default_factory=lambda: dict(BER_LINK, n_bits=100_000))
    plots: bool = True
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)
        for name, grid in (("tds", self.tds), ("vds", self.vds)):
            if len(set(grid)) != len(grid):
                raise ValueError(f"{name} grid has duplicate entries")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ValueError(f"unknown modes {bad}")

    @property
    def seed(self) -> int:
        return int(self.simcfg.rng_seed)

    def resolved_config(self) -> dict:
        return {
            "seed": self.seed,
            "sim": self.simcfg.to_dict(),
            "tds": [s.to_dict() for s in self.tds],
            "vds": [s.to_dict() for s in self.vds],
            "modes": list(self.modes),
            "half_tds": self.half_tds,
            "train": self.train.to_dict(),
            "ber": self.ber,
            "plots": self.plots,
            "software_version": io.__version__,
        }

    @classmethod
    def from_config(cls, output_dir, config: Optional[dict] = None, *, seed=None, workers=None,
                    full_scale=False, half_tds=None, modes=None) -> "Campaign":
        """Build from a declarative config dict plus command-line overrides."""
        config = dict(config or {})
        sim = dict(DESK_SCALE, body={"enabled": True})
        sim.update(config.get("sim", {}))
        if full_scale:
            sim.update(FULL_SCALE)
        if seed is not None:
            sim["rng_seed"] = int(seed)
        elif "seed" in config:
            sim["rng_seed"] = int(config["seed"])
        simcfg = SimConfig.from_dict(sim)
        grids = {}
        for tag in ("tds", "vds"):
            spec = config.get(tag, tag)
            if isinstance(spec, str):
                grids[tag] = generate_grid(spec)
            elif isinstance(spec, dict):
                grids[tag] = generate_grid(spec.get("kind", tag), spec.get("d"), spec.get("h"),
                                           spec.get("R"), spec.get("D"))
            else:
                grids[tag] = [SystemParams(**s) for s in spec]
        tcfg = dict(config.get("train", {}))
        tcfg["seed"] = simcfg.rng_seed if "seed" not in tcfg else tcfg["seed"]
        if modes is None:
            modes = config.get("modes", MODES)
        return cls(
            output_dir=output_dir,
            simcfg=simcfg,
            tds=grids["tds"],
            vds=grids["vds"],
            workers=int(workers if workers is not None else config.get("workers", 1)),
            modes=tuple(modes),
            half_tds=bool(half_tds if half_tds is not None else config.get("half_tds", False)),
            train=TrainConfig(**tcfg),
            ber={**BER_LINK, "n_bits": 100_000, **config.get("ber", {})},
            plots=bool(config.get("plots", True)),
        )


class _Manifest:
    """Thread-safe record of input hashes, flushed after every case."""

    def __init__(self, root: Path):
        self.root = root
        self.path = root / "manifest.json"
        prev = io.read_json(self.path) if self.path.exists() else {}
        self.prev_files = prev.get("files", {})
        self.prev_inputs = prev.get("inputs", {})
        self.inputs = {}
        self.lock = threading.Lock()

    def fresh(self, rel, input_hash) -> bool:
        paths = [rel, rel + ".json"]
        if self.prev_inputs.get(rel) != input_hash:
            return False
        for p in paths:
            f = self.root / p
            if not f.exists() or self.prev_files.get(p) != io.sha256_file(f):
                return False
        return True

    def keep(self, rel, input_hash):
        with self.lock:
            self.inputs[rel] = input_hash

    def record(self, rel, input_hash):
        with self.lock:
            self.inputs[rel] = input_hash
            self.prev_inputs[rel] = input_hash
            for p in (rel, rel + ".json"):
                self.prev_files[p] = io.sha256_file(self.root / p)
            io.write_json(self.path, {"files": dict(sorted(self.prev_files.items())),
                                      "inputs": dict(sorted(self.prev_inputs.items()))})

    def finalize(self):
        files = io.scan_files(self.root)
        io.write_json(self.path, {"files": files, "inputs": dict(sorted(self.inputs.items()))})
        return files


def _simulate_case(campaign: Campaign, manifest: _Manifest, tag, sys):
    rel = f"curves/{tag}/{case_name(sys)}.csv"
    cfg = case_config(campaign.simcfg, sys)
    input_hash = io.sha256_json({"system": sys.to_dict(), "sim": cfg.to_dict(),
                                 "version": io.__version__})
    path = campaign.output_dir / rel
    if manifest.fresh(rel, input_hash):
        s11, s21, _ = io.read_curves(path)
        manifest.keep(rel, input_hash)
        return s11, s21, True
    s11, s21 = simulate_channel(sys, cfg)
    io.write_curves(path, s11, s21, sys, cfg, extra_meta={"input_hash": input_hash})
    # reload so resumed and fresh runs feed identical floats downstream
    s11, s21, _ = io.read_curves(path)
    manifest.record(rel, input_hash)
    return s11, s21, False


def _rmse_layout(tables: dict, modes, header_prefix=("d", "curve")):
    """Rows grouped by distance with F11/F21 sub-rows; columns D x mode."""
    first = next(iter(tables.values()))
    ds = sorted({k[0] for k in first.groups})
    Ds = sorted({k[1] for k in first.groups})
    header = list(header_prefix) + [f"D={D:g}/{m}" for D in Ds for m in modes]
    rows = []
    for d in ds:
        for slot, label in ((0, "F11"), (1, "F21")):
            row = [f"{d:g}", label]
            for D in Ds:
                for m in modes:
                    row.append(tables[m].groups[(d, D)][slot])
            rows.append(row)
    return header, rows


def half_indices(n, seed):
    rng = np.random.default_rng([int(seed), 0x4A1F])
    return np.sort(rng.choice(n, size=n // 2, replace=False))


def emit_received_signal(out_dir, sys, s11, s21, fitted: Optional[ModelParams], surrogates: dict):
    """Two files (F11, F21) with aligned columns: t, simulation mean, curve
    fit, and one column per surrogate mode."""
    out_dir = Path(out_dir)
    t = s11.time_grid
    preds = {m: predict(ens, sys) for m, ens in surrogates.items()}
    names = {"one": "one_machine", "two": "two_machines"}
    paths = []
    for label, curve, model in (("F11", s11, f11_model), ("F21", s21, f21_model)):
        header = ["t", "simulation"]
        cols = [t, curve.mean_fraction]
        if fitted is not None:
            header.append("curve_fit")
            cols.append(model(t, fitted, sys))
        for m, p in preds.items():
            header.append(names.get(m, m))
            cols.append(model(t, p, sys))
        path = out_dir / f"received_signal_{case_name(sys)}_{label}.csv"
        io.write_table(path, header, np.column_stack(cols).tolist())
        paths.append(path)
    return paths


def emit_ber_curve(path, taps: TapSet, cfg: BerConfig, n_bits, seed=0, taus=None, provenance="surrogate",
                   extra_meta=None):
    """``tau,p_e_analytic,p_e_mc,mc_stderr`` over a threshold sweep."""
    taus = default_taus(taps, cfg.N) if taus is None else np.asarray(taus, dtype=float)
    analytic = analytic_sweep(taps, cfg, taus)
    mc = monte_carlo_sweep(taps, cfg, taus, n_bits, seed)
    best = int(np.argmin(analytic))
    meta = {"taps_provenance": provenance, "N": cfg.N, "t_s": cfg.t_s, "eta": cfg.eta,
            "n_bits": int(n_bits), "seed": int(seed), "burn_in": cfg.burn_in,
            "F11": taps.F11.tolist(), "F21": taps.F21.tolist(),
            "best_tau": float(taus[best]), "best_p_e_analytic": float(analytic[best])}
    meta.update(extra_meta or {})
    io.write_ber(path, taus, analytic, mc, meta)
    return path


def emit_plot_data(kind, out, **inputs):
    """Dispatch to :func:`emit_received_signal` or :func:`emit_ber_curve`."""
    if kind == "received_signal":
        return emit_received_signal(out, **inputs)
    if kind == "ber_curve":
        return [emit_ber_curve(out, **inputs)]
    raise ValueError(f"unknown plot kind {kind!r}")


def surrogate_taps(ens: SurrogateEnsemble, sys: SystemParams, t_s, eta) -> TapSet:
    p = predict(ens, sys)
    return TapSet(taps_from_model(p, sys, t_s, eta, 11).taps, taps_from_model(p, sys, t_s, eta, 21).taps)


def run_pipeline(campaign: Campaign, modes=None) -> dict:
    """simulate -> fit on both grids, train on TDS, evaluate on VDS."""
    modes = tuple(modes or campaign.modes)
    out = campaign.output_dir
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "config.json", campaign.resolved_config())
    manifest = _Manifest(out)
    failures = []
    curves = {}
    reused = 0

    for tag, grid in (("tds", campaign.tds), ("vds", campaign.vds)):
        def job(sys, tag=tag):
            try:
                return _simulate_case(campaign, manifest, tag, sys)
            except Exception as exc:  # recorded, campaign continues
                log.exception("case %s/%s failed", tag, case_name(sys))
                return exc

        if campaign.workers > 1:
            with ThreadPoolExecutor(max_workers=campaign.workers) as pool:
                results = list(pool.map(job, grid))
        else:
            results = [job(s) for s in grid]
        for sys, res in zip(grid, results):
            if isinstance(res, Exception):
                failures.append({"grid": tag, "case": case_name(sys), "error": repr(res)})
            else:
                curves[(tag, sys)] = res[:2]
                reused += int(res[2])

    datasets = {}
    for tag, grid in (("tds", campaign.tds), ("vds", campaign.vds)):
        rows = [fit_case(sys, *curves[(tag, sys)], case_index=i)
                for i, sys in enumerate(grid) if (tag, sys) in curves]
        datasets[tag] = ParamDataset(rows)
        io.write_dataset(out / f"datasets/{tag}.csv", datasets[tag])
        for row in rows:
            if not row.ok:
                failures.append({"grid": tag, "case": case_name(row.sys), "error": row.error})

    vds_cases = [(sys, *curves[("vds", sys)]) for sys in campaign.vds if ("vds", sys) in curves]
    fitted = {r.sys: ModelParams.from_array(r.coeffs) for r in datasets["vds"].rows if r.ok}
    report = {"tds_cases": len(campaign.tds), "vds_cases": len(campaign.vds),
              "reused_cases": reused, "failures": failures, "subsets": {}}

    if vds_cases and fitted:
        fit_table = evaluate_rmse(None, [c for c in vds_cases if c[0] in fitted],
                                  params_for=fitted.__getitem__)
        header, rows = _rmse_layout({"fit": fit_table}, ("fit",))
        io.write_table(out / "tables/rmse_curve_fit.csv", header, rows)

    train_rows = datasets["tds"].usable()
    subsets = {"full": train_rows}
    if campaign.half_tds:
        subsets["half"] = train_rows.subset(half_indices(len(train_rows), campaign.seed))
    ensembles = {}
    for subset, data in subsets.items():
        tables = {}
        for mode in modes:
            try:
                ens = train(data, mode, campaign.train)
            except (DatasetTooSmall, NonFiniteLoss, ValueError) as exc:
                failures.append({"grid": "tds", "case": f"train:{mode}_{subset}", "error": repr(exc)})
                continue
            ensembles[(subset, mode)] = ens
            io.write_text(out / f"models/{mode}_{subset}.json", ens.to_json() + "\n")
            if vds_cases:
                tables[mode] = evaluate_rmse(ens, vds_cases)
                io.write_table(out / f"tables/rmse_cases_{mode}_{subset}.csv",
                               ["d", "h", "R", "D", "rmse11", "rmse21"],
                               [[c[k] for k in ("d", "h", "R", "D", "rmse11", "rmse21")]
                                for c in tables[mode].cases])
        info = {"train_rows": len(data)}
        if tables:
            header, rows = _rmse_layout(tables, modes)
            io.write_table(out / f"tables/rmse_{subset}.csv", header, rows)
            info["mean_rmse11"] = {m: float(np.mean([c["rmse11"] for c in t.cases])) for m, t in tables.items()}
            info["mean_rmse21"] = {m: float(np.mean([c["rmse21"] for c in t.cases])) for m, t in tables.items()}
            info["groups"] = {m: {f"d={k[0]:g},D={k[1]:g}": list(v) for k, v in t.groups.items()}
                              for m, t in tables.items()}
        report["subsets"][subset] = info

    if campaign.plots and vds_cases:
        surrogates = {m: ensembles[("full", m)] for m in modes if ("full", m) in ensembles}
        for case in (NEAR_CASE, FAR_CASE):
            if ("vds", case) in curves:
                emit_received_signal(out / "plots", case, *curves[("vds", case)], fitted.get(case), surrogates)
        if BER_CASE in set(campaign.vds) and surrogates:
            ber = campaign.ber
            cfg = BerConfig(int(ber["N"]), float(ber["t_s"]), int(ber["eta"]), 0.0)
            for m in surrogates:
                taps = surrogate_taps(surrogates[m], BER_CASE, cfg.t_s, cfg.eta)
                emit_ber_curve(out / f"plots/ber_{case_name(BER_CASE)}_{m}.csv", taps, cfg,
                               int(ber["n_bits"]), campaign.seed, provenance=f"surrogate:{m}")

    io.write_json(out / "report.json", report)
    report["manifest"] = campaign.manifest = manifest.finalize()
    return report
