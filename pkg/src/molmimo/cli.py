"""Command-line entry point: ``molmimo <subcommand> ...``.

Exit codes: 0 success, 1 error (a JSON error report goes to stderr), 3 when
a pipeline finished but some cases failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .channel import ModelParams, taps_from_curve, taps_from_model
from .fitting import FitProblem, fit_channel
from .geometry import SystemParams
from .link import BerConfig, TapSet
from .sim import SimConfig, simulate_channel
from .surrogate import SurrogateEnsemble, TrainConfig, evaluate_rmse, predict, train
from . import workbench as wb

MODE_CHOICES = ("one", "two", "both")


def _common(p):
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--paper-scale", "--full-scale", dest="full_scale", action="store_true",
                   help="3000 molecules x 500 replications instead of the desk-scale defaults")
    p.add_argument("--half-tds", action="store_true", help="also train on a random half of the TDS")
    p.add_argument("--mode", choices=MODE_CHOICES, default=None)


def _system_args(p, required=True):
    for name, helptext in (("d", "Tx to receiver-surface distance (um)"),
                           ("h", "antenna separation (um)"), ("R", "receiver radius (um)"),
                           ("D", "diffusion coefficient (um^2/s)")):
        p.add_argument(f"--{name}", dest=name, type=float, required=required, help=helptext)


def _sys(args) -> SystemParams:
    return SystemParams(args.d, args.h, args.R, args.D)


def _modes(args, config):
    mode = args.mode or config.get("mode")
    if mode in (None, "both"):
        return ("one", "two")
    return (mode,)


def _load_config(args):
    return io.read_json(args.config) if getattr(args, "config", None) else {}


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        io.write_text(out, text + "\n")
    else:
        print(text)


def cmd_grid(args):
    grid = wb.generate_grid(args.kind, args.d, args.h, args.R, args.D)
    rows = [list(s.as_tuple()) for s in grid]
    if args.output:
        io.write_table(args.output, ["d", "h", "R", "D"], rows)
    else:
        print("d,h,R,D")
        for r in rows:
            print(",".join(f"{v:g}" for v in r))
    return 0


def _simcfg(args, config):
    sim = dict(wb.DESK_SCALE)
    sim.update(config.get("sim", {}))
    if args.full_scale:
        sim.update(wb.FULL_SCALE)
    for key, attr in (("n_molecules", "molecules"), ("n_replications", "replications"),
                      ("t_end", "t_end"), ("dt", "dt")):
        if getattr(args, attr, None) is not None:
            sim[key] = getattr(args, attr)
    if args.seed is not None:
        sim["rng_seed"] = args.seed
    if getattr(args, "body", None) is not None:
        sim["body"] = {"enabled": args.body}
    return SimConfig.from_dict(sim)


def cmd_simulate(args):
    config = _load_config(args)
    sys_ = _sys(args)
    cfg = _simcfg(args, config)
    s_own, s_cross = simulate_channel(sys_, cfg, emitter=args.emitter, isolated=args.isolated,
                                      keep_replications=args.keep_replications,
                                      workers=args.workers or 1)
    io.write_curves(args.output, s_own, s_cross, sys_, cfg, args.keep_replications,
                    {"isolated": args.isolated})
    print(args.output)
    return 0


def cmd_fit(args):
    s11, s21, meta = io.read_curves(args.curve)
    if meta is None and args.d is None:
        raise ValueError("curve has no sidecar; pass --d --h --R --D")
    sys_ = _sys(args) if args.d is not None else SystemParams(**meta["system"])
    out = {"system": sys_.to_dict()}
    links = []
    for kind, curve in ((11, s11), (21, s21)):
        res = fit_channel(FitProblem.from_curve(curve, kind, sys_))
        links.append(res.params)
        out[f"F{kind}"] = {"params": res.params.tolist(), "rmse": res.rmse, "rss": res.rss,
                           "iterations": res.iterations, "converged": res.converged}
    out["model"] = json.loads(ModelParams.from_links(*links).to_json())
    _emit(out, args.output)
    return 0


def cmd_train(args):
    config = _load_config(args)
    data = io.read_dataset(args.dataset).usable()
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    hyper = TrainConfig(**{**config.get("train", {}), "seed": seed})
    if args.half_tds:
        data = data.subset(wb.half_indices(len(data), seed))
    modes = _modes(args, config)
    if len(modes) != 1:
        raise ValueError("train needs --mode one or --mode two")
    ens = train(data, modes[0], hyper, workers=args.workers or 1)
    io.write_text(args.output, ens.to_json() + "\n")
    print(args.output)
    return 0


def _load_model(path) -> SurrogateEnsemble:
    return SurrogateEnsemble.from_json(Path(path).read_text())


def cmd_predict(args):
    ens = _load_model(args.model)
    params, flags = predict(ens, _sys(args), return_flags=True)
    out = json.loads(params.to_json(_sys(args)))
    out["clamped"] = [f"b{i + 1}" for i, f in enumerate(flags) if f]
    _emit(out, args.output)
    return 0


def cmd_rmse_table(args):
    root = Path(args.campaign)
    grid = [SystemParams(**s) for s in io.read_json(root / "config.json")["vds"]]
    cases = []
    for s in grid:
        s11, s21, _ = io.read_curves(root / f"curves/vds/{wb.case_name(s)}.csv")
        cases.append((s, s11, s21))
    tables = {}
    for path in args.model:
        ens = _load_model(path)
        tables[Path(path).stem] = evaluate_rmse(ens, cases)
    header, rows = wb._rmse_layout(tables, tuple(tables))
    if args.output:
        io.write_table(args.output, header, rows)
    else:
        print(",".join(header))
        for r in rows:
            print(",".join(v if isinstance(v, str) else f"{v:.6f}" for v in r))
    return 0


def _taps(args, sys_, cfg):
    if args.model:
        return wb.surrogate_taps(_load_model(args.model), sys_, cfg.t_s, cfg.eta), "surrogate"
    if args.params:
        p, _ = ModelParams.from_json(Path(args.params).read_text())
        return TapSet(taps_from_model(p, sys_, cfg.t_s, cfg.eta, 11).taps,
                      taps_from_model(p, sys_, cfg.t_s, cfg.eta, 21).taps), "fitted"
    if args.curve:
        s11, s21, _ = io.read_curves(args.curve)
        return TapSet(taps_from_curve(s11, cfg.t_s, cfg.eta).taps,
                      taps_from_curve(s21, cfg.t_s, cfg.eta).taps), "empirical"
    raise ValueError("one of --model, --params or --curve is required")


def cmd_ber(args):
    sys_ = _sys(args)
    cfg = BerConfig(args.N, args.t_s, args.eta, 0.0, args.burn_in)
    taps, prov = _taps(args, sys_, cfg)
    taus = None if args.tau is None else np.array(args.tau, dtype=float)
    wb.emit_ber_curve(args.output, taps, cfg, args.bits, args.seed or 0, taus, prov,
                      {"system": sys_.to_dict()})
    print(args.output)
    return 0


def cmd_plot_data(args):
    root = Path(args.campaign)
    sys_ = _sys(args)
    name = wb.case_name(sys_)
    models = {Path(m).stem.split("_")[0]: _load_model(m) for m in args.model}
    out_dir = Path(args.output or root / "plots")
    if args.kind == "received-signal":
        tag = args.grid
        s11, s21, _ = io.read_curves(root / f"curves/{tag}/{name}.csv")
        fitted = None
        for row in io.read_dataset(root / f"datasets/{tag}.csv").rows:
            if row.sys == sys_ and row.ok:
                fitted = ModelParams.from_array(row.coeffs)
        paths = wb.emit_received_signal(out_dir, sys_, s11, s21, fitted, models)
    else:
        cfg = BerConfig(args.N, args.t_s, args.eta, 0.0)
        paths = []
        for m, ens in models.items():
            taps = wb.surrogate_taps(ens, sys_, cfg.t_s, cfg.eta)
            paths.append(wb.emit_ber_curve(out_dir / f"ber_{name}_{m}.csv", taps, cfg, args.bits,
                                           args.seed or 0, provenance=f"surrogate:{m}"))
    for p in paths:
        print(p)
    return 0


def cmd_pipeline(args):
    config = _load_config(args)
    campaign = wb.Campaign.from_config(
        args.output, config, seed=args.seed, workers=args.workers, full_scale=args.full_scale,
        half_tds=True if args.half_tds else None,
        modes=_modes(args, config) if (args.mode or "modes" not in config) else None)
    report = wb.run_pipeline(campaign)
    summary = {k: v for k, v in report.items() if k != "manifest"}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 3 if report["failures"] else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="molmimo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("grid", help="list a parameter grid")
    _common(p)
    p.add_argument("--kind", choices=("tds", "vds", "custom"), default="tds")
    for name in ("d", "h", "R", "D"):
        p.add_argument(f"--{name}", dest=name, type=float, nargs="+")
    p.add_argument("-o", "--output", type=Path)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("simulate", help="particle simulation of one case")
    _common(p)
    _system_args(p)
    p.add_argument("--molecules", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--emitter", type=int, choices=(1, 2), default=1)
    p.add_argument("--body", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--isolated", action="store_true", help="remove the other receiver")
    p.add_argument("--keep-replications", action="store_true")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit channel coefficients to a curve file")
    _common(p)
    p.add_argument("curve", type=Path)
    _system_args(p, required=False)
    p.add_argument("-o", "--output", type=Path)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("train", help="train a surrogate on a dataset CSV")
    _common(p)
    p.add_argument("dataset", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="surrogate coefficients for one case")
    _common(p)
    p.add_argument("model", type=Path)
    _system_args(p)
    p.add_argument("-o", "--output", type=Path)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("rmse-table", help="VDS RMSE table for trained models")
    _common(p)
    p.add_argument("--campaign", type=Path, required=True)
    p.add_argument("--model", type=Path, nargs="+", required=True)
    p.add_argument("-o", "--output", type=Path)
    p.set_defaults(func=cmd_rmse_table)

    p = sub.add_parser("ber", help="analytic and Monte Carlo BER over a threshold sweep")
    _common(p)
    _system_args(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", type=Path)
    src.add_argument("--params", type=Path)
    src.add_argument("--curve", type=Path)
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--t-s", dest="t_s", type=float, default=0.5)
    p.add_argument("--eta", type=int, default=5)
    p.add_argument("--bits", type=int, default=100_000)
    p.add_argument("--tau", type=float, nargs="+")
    p.add_argument("--burn-in", action="store_true")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_ber)

    p = sub.add_parser("plot-data", help="CSV columns for received-signal or BER plots")
    _common(p)
    p.add_argument("kind", choices=("received-signal", "ber"))
    p.add_argument("--campaign", type=Path, required=True)
    p.add_argument("--model", type=Path, nargs="*", default=[])
    p.add_argument("--grid", choices=("tds", "vds"), default="vds")
    _system_args(p)
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--t-s", dest="t_s", type=float, default=0.5)
    p.add_argument("--eta", type=int, default=5)
    p.add_argument("--bits", type=int, default=100_000)
    p.add_argument("-o", "--output", type=Path)
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("pipeline", help="simulate, fit, train and evaluate a full campaign")
    _common(p)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc), "command": args.command},
                  sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
