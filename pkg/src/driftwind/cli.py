"""Command-line interface: ``driftwind <subcommand> [options]``.

Every option can also come from a JSON config (``--config``); explicit flags
win.  Each run writes ``<out>/<subcommand>.manifest.json`` with the resolved
configuration.  Failures exit nonzero and print one JSON error record on
stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .gridstore import (GeometryMismatchError, GridError, GridGeometry,
                        OutOfDomainError, read_gridstack, read_layers,
                        write_gridstack, write_layers)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_DIMENSION = 4
EXIT_OUT_OF_DOMAIN = 5
EXIT_INVALID_DATA = 6

ERROR_KINDS = {
    EXIT_CONFIG: "config_error",
    EXIT_MISSING_INPUT: "missing_input",
    EXIT_DIMENSION: "dimension_mismatch",
    EXIT_OUT_OF_DOMAIN: "out_of_domain",
    EXIT_INVALID_DATA: "invalid_data",
    EXIT_INTERNAL: "internal_error",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Opt:
    name: str
    type: type
    default: object
    help: str
    nargs: str | None = None
    choices: tuple | None = None

    @property
    def flag(self):
        return "--" + self.name.replace("_", "-")


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


COMMON = [
    Opt("out", str, "out", "output directory"),
    Opt("workers", int, None, "worker processes (default: $DRIFTWIND_WORKERS or 1)"),
    Opt("figures", bool, False, "also render PNG figures"),
]

DMWA_OPTS = [
    Opt("outer_size", int, 15, "DMWA scene side"),
    Opt("inner_size", int, 3, "DMWA inner (template) window side"),
    Opt("search_radius", int, 4, "DMWA search radius in pixels"),
    Opt("dbscan_eps", float, 1.0, "DBSCAN eps"),
    Opt("dbscan_min_pts", int, 4, "DBSCAN minPts"),
    Opt("dmwa_mode", str, "central", "DMWA tracking mode",
        choices=("central", "nested")),
]

COMMANDS = {
    "simulate": ("Draw a Gaussian-process stack with known wind.", [
        Opt("kind", str, "constant", "wind field kind",
            choices=("constant", "rotational")),
        Opt("size", int, 60, "grid side in pixels"),
        Opt("n_times", int, 3, "number of frames"),
        Opt("pixel_size", float, 1.0 / 59.0, "pixel size (domain units)"),
        Opt("alpha1", float, 0.075, "spatial range (domain units)"),
        Opt("alpha2", float, 15.0, "temporal range (time steps)"),
        Opt("u", _floats, [0.058, 0.058], "constant drift u1,u2 (domain units)"),
        Opt("rotation_deg", float, 6.0, "rotation per time step (degrees)"),
        Opt("seed", int, 0, "random seed"),
        Opt("allow_large", bool, False, "allow joint dimension above 12000"),
    ]),
    "standardize": ("Pixel-wise standardization with a smoothed SD map.", [
        Opt("input", str, None, "input grid stack"),
        Opt("bandwidth", float, 2.0, "SD smoothing bandwidth (pixels)"),
    ]),
    "estimate": ("Estimate a wind field.", [
        Opt("input", str, None, "standardized grid stack"),
        Opt("method", str, "stdm", "estimator", choices=("stdm", "dmwa")),
        Opt("half_width", int, 7, "window half width (pixels)"),
        Opt("stride", int, 1, "centre lattice stride"),
        Opt("center_axis", _ints, None,
            "explicit centre lattice: comma-separated pixel indices used for rows and columns"),
        Opt("times", _ints, None, "comma-separated time indices (default: all interior)"),
        Opt("budget", int, 2000, "Nelder-Mead evaluation budget"),
        Opt("dmwa_init", bool, True, "extra start from a window block-matching estimate"),
        Opt("warm_start", bool, False, "reuse the previous optimum as a start"),
        Opt("csv", bool, False, "dump per-pixel CSV rows"),
    ] + DMWA_OPTS),
    "smooth": ("Kernel-smooth a wind field.", [
        Opt("input", str, None, "wind field"),
        Opt("bandwidth", float, 2.0, "kernel bandwidth (pixels)"),
        Opt("mode", str, "inverse-variance", "weighting",
            choices=("inverse-variance", "unweighted")),
        Opt("csv", bool, False, "dump per-pixel CSV rows"),
    ]),
    "predict": ("One-step conditional-mean prediction of a frame.", [
        Opt("input", str, None, "standardized grid stack"),
        Opt("wind", str, None, "wind field (its fitted ranges are used)"),
        Opt("params_from", str, None, "take ranges from this wind field instead"),
        Opt("t", int, 3, "frame to predict (wind from t-2)"),
        Opt("half_width", int, 3, "conditioning half width"),
        Opt("conditioning", str, "single", "conditioning frames",
            choices=("single", "three")),
        Opt("strict", bool, False, "mask pixels without their own estimate"),
        Opt("csv", bool, False, "dump per-pixel CSV rows"),
    ]),
    "evaluate": ("Score estimates (MVD) or predictions (MSPE).", [
        Opt("metric", str, "mvd", "metric", choices=("mvd", "mspe")),
        Opt("estimate", str, None, "wind field to score (mvd)"),
        Opt("truth", str, None, "true wind field (mvd)"),
        Opt("prediction", str, None, "prediction layers (mspe)"),
        Opt("input", str, None, "observed stack (mspe)"),
        Opt("t", int, None, "time index (default: first valid / predicted)"),
        Opt("units", str, "pixels", "VD units for mvd",
            choices=("pixels", "physical")),
    ]),
    "table1": ("Replicated single-window recovery experiment.", [
        Opt("window_sizes", _ints, [7, 11, 15], "window sides"),
        Opt("alpha1_sqs", _floats, [1, 2, 4, 8], "squared spatial ranges"),
        Opt("alpha2_sqs", _floats, [1, 2, 3, 4], "squared temporal ranges"),
        Opt("u0s", _floats, [1, 2, 3, 5], "drifts, flattened pairs"),
        Opt("n_reps", int, 30, "replicates per cell"),
        Opt("full", bool, False, "use 100 replicates"),
        Opt("methods", str, "stdm,dmwa", "comma-separated methods"),
        Opt("seed", int, 20200101, "base seed"),
        Opt("inner_size", int, 3, "DMWA inner window side"),
        Opt("search_radius", int, None, "DMWA search radius (default: by window)"),
        Opt("budget", int, 2000, "Nelder-Mead evaluation budget"),
    ]),
    "table2": ("Domain experiments with raw and smoothed estimates.", [
        Opt("kinds", str, "constant,rotational", "comma-separated wind kinds"),
        Opt("n_reps_constant", int, 20, "replicates, constant wind"),
        Opt("n_reps_rotational", int, 10, "replicates, rotational wind"),
        Opt("full", bool, False, "use 100 replicates"),
        Opt("centers_constant", _ints, [18, 26, 34, 42], "constant-wind centre axis"),
        Opt("centers_rotational", _ints, None,
            "rotational centre axis (default: random interior pixels per replicate)"),
        Opt("n_centers_rotational", int, 9, "random centres per rotational replicate"),
        Opt("bandwidth_stdm", float, 4.0, "STDM smoothing bandwidth"),
        Opt("bandwidth_dmwa", float, 4.0, "DMWA smoothing bandwidth"),
        Opt("seed", int, 20200402, "base seed"),
        Opt("budget", int, 2000, "Nelder-Mead evaluation budget"),
    ]),
    "cv": ("Choose a window size by held-out prediction.", [
        Opt("input", str, None, "standardized grid stack"),
        Opt("candidates", _ints, [11, 15, 21, 25], "window sides"),
        Opt("t_fit", int, 1, "estimation time (prediction at t_fit + 2)"),
        Opt("stride", int, 1, "centre lattice stride"),
        Opt("predict_half_width", int, None, "conditioning half width"),
        Opt("budget", int, 2000, "Nelder-Mead evaluation budget"),
    ]),
}

REQUIRED = {
    "standardize": ("input",), "estimate": ("input",), "smooth": ("input",),
    "predict": ("input", "wind"), "cv": ("input",),
}


def options(command):
    return COMMANDS[command][1] + COMMON


def config_schema() -> dict:
    """JSON schema of the config file for every subcommand."""
    kinds = {str: "string", int: "integer", float: "number", bool: "boolean",
             _ints: "array", _floats: "array"}
    out = {}
    for cmd in COMMANDS:
        props = {}
        for opt in options(cmd):
            prop = {"type": kinds[opt.type], "description": opt.help}
            if opt.type in (_ints, _floats):
                prop["items"] = {"type": "integer" if opt.type is _ints else "number"}
            if opt.choices:
                prop["enum"] = list(opt.choices)
            if opt.default is not None:
                prop["default"] = opt.default
            props[opt.name] = prop
        out[cmd] = {"type": "object", "properties": props,
                    "additionalProperties": False,
                    "required": list(REQUIRED.get(cmd, ()))}
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftwind", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("schema", help="print the config JSON schema")
    for cmd, (help_text, _) in COMMANDS.items():
        p = sub.add_parser(cmd, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON config file")
        for opt in options(cmd):
            if opt.type is bool:
                p.add_argument(opt.flag, dest=opt.name, default=None,
                               action=argparse.BooleanOptionalAction, help=opt.help)
            else:
                p.add_argument(opt.flag, dest=opt.name, default=None,
                               type=opt.type, choices=opt.choices, help=opt.help)
    return parser


def _coerce(opt: Opt, value):
    try:
        if opt.type is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if opt.type in (_ints, _floats):
            items = value.split(",") if isinstance(value, str) else list(value)
            conv = int if opt.type is _ints else float
            out = [conv(v) for v in items]
            if conv is int and any(float(a) != b for a, b in zip(items, out)):
                raise TypeError
            return out
        if opt.type is int and (isinstance(value, bool) or float(value) != int(value)):
            raise TypeError
        value = opt.type(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {opt.name!r} has invalid value {value!r}")
    if opt.choices and value not in opt.choices:
        raise ConfigError(f"config key {opt.name!r} must be one of {list(opt.choices)}")
    return value


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then config-file keys, then explicit flags."""
    opts = {o.name: o for o in options(command)}
    resolved = {name: o.default for name, o in opts.items()}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file {path} not found")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(data) - set(opts))
        if unknown:
            raise ConfigError(f"unknown config keys for {command!r}: {unknown}")
        for key, value in data.items():
            resolved[key] = None if value is None else _coerce(opts[key], value)
    for name in opts:
        value = getattr(args, name, None)
        if value is not None:
            resolved[name] = value
    for name in REQUIRED.get(command, ()):
        if resolved.get(name) is None:
            raise ConfigError(f"{command} needs --{name.replace('_', '-')}")
    if resolved["workers"] is None:
        from .scanner import default_workers

        resolved["workers"] = default_workers()
    if resolved["workers"] < 1:
        raise ConfigError("workers must be at least 1")
    return resolved


# -- helpers -------------------------------------------------------------------

def _need(path):
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".json", ".bin") else p
    if not stem.with_suffix(".json").exists():
        raise FileNotFoundError(f"input {stem.with_suffix('.json')} not found")
    return stem


def _write_manifest(out: Path, command: str, cfg: dict, outputs, extra=None,
                    runtime=None):
    manifest = {"tool": "driftwind", "version": __version__,
                "command": command, "config": cfg,
                "outputs": [str(p) for p in outputs],
                "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                "runtime_seconds": runtime}
    if extra:
        manifest.update(extra)
    path = out / f"{command}.manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def _dump_wind_csv(wind, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "i", "j", "x", "y", "u", "v", "var_u", "var_v"])
        for row in wind.to_records():
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def _wind_figures(wind, out: Path, stem: str):
    from .plotting import quiver_map, sd_map

    paths = []
    for t in range(wind.geometry.n_times):
        if wind.valid_mask[t].any():
            paths.append(quiver_map(wind, t, out / f"{stem}_t{t}_quiver.png"))
            if np.isfinite(wind.var_u_map[t][wind.valid_mask[t]]).any():
                paths.append(sd_map(wind, t, out / f"{stem}_t{t}_sd.png"))
    return paths


# -- subcommands ---------------------------------------------------------------

def cmd_simulate(cfg, out):
    from .covmodel import DriftParams
    from .simulator import SimConfig, WindFieldSpec, simulate_domain, write_simulation

    grid = GridGeometry(cfg["size"], cfg["size"], cfg["n_times"], cfg["pixel_size"])
    if len(cfg["u"]) != 2:
        raise ConfigError("u needs two components")
    if cfg["kind"] == "constant":
        spec = WindFieldSpec("constant", u_const=tuple(cfg["u"]))
    else:
        spec = WindFieldSpec("rotational", rotation_deg_per_step=cfg["rotation_deg"])
    sim = SimConfig(grid, DriftParams(cfg["alpha1"], cfg["alpha2"]), cfg["seed"])
    stack, truth = simulate_domain(spec, sim, allow_large=cfg["allow_large"])
    write_simulation(out, stack, truth, spec, sim)
    outputs = [out / "data.json", out / "truth.json", out / "manifest.json"]
    if cfg["figures"]:
        from .plotting import quiver_map

        outputs.append(quiver_map(truth, 1, out / "truth_quiver.png", step=4))
    return outputs, {}


def cmd_standardize(cfg, out):
    from .preprocess import fit_standardization, standardize, write_model

    stack = read_gridstack(_need(cfg["input"]))
    model = fit_standardization(stack, cfg["bandwidth"])
    return [write_gridstack(standardize(stack, model), out / "standardized"),
            write_model(model, out / "standardization_model")], {}


def cmd_estimate(cfg, out):
    from .dmwa import DmwaConfig, dmwa_scan
    from .scanner import ScanConfig, scan, write_windfield

    stack = read_gridstack(_need(cfg["input"]))
    axis = cfg["center_axis"]
    centers = None if axis is None else [(i, j) for i in axis for j in axis]
    if cfg["method"] == "stdm":
        sc = ScanConfig(half_width=cfg["half_width"], stride=cfg["stride"],
                        budget=cfg["budget"], dmwa_init=cfg["dmwa_init"],
                        dmwa_search_radius=cfg["search_radius"],
                        warm_start=cfg["warm_start"], workers=cfg["workers"])
        wind = scan(stack, t_range=cfg["times"], config=sc, centers=centers)
    else:
        dc = DmwaConfig(cfg["outer_size"], cfg["inner_size"], cfg["search_radius"],
                        cfg["dbscan_eps"], cfg["dbscan_min_pts"], cfg["dmwa_mode"])
        wind = dmwa_scan(stack, cfg["times"], dc, centers=centers,
                         stride=cfg["stride"])
    outputs = [write_windfield(wind, out / "wind")]
    if cfg["csv"]:
        outputs.append(_dump_wind_csv(wind, out / "wind.csv"))
    if cfg["figures"]:
        outputs += _wind_figures(wind, out, "wind")
    return outputs, {"n_valid": int(wind.valid_mask.sum())}


def cmd_smooth(cfg, out):
    from .scanner import read_windfield, write_windfield
    from .smoother import SmoothConfig, smooth_field

    wind = read_windfield(_need(cfg["input"]))
    smoothed = smooth_field(wind, SmoothConfig(cfg["bandwidth"], cfg["mode"]))
    outputs = [write_windfield(smoothed, out / "wind_smoothed")]
    if cfg["csv"]:
        outputs.append(_dump_wind_csv(smoothed, out / "wind_smoothed.csv"))
    if cfg["figures"]:
        outputs += _wind_figures(smoothed, out, "wind_smoothed")
    return outputs, {}


def cmd_predict(cfg, out):
    from .evaluate import predict_frame
    from .scanner import read_windfield

    stack = read_gridstack(_need(cfg["input"]))
    wind = read_windfield(_need(cfg["wind"]))
    if not wind.geometry.same_grid(stack.geometry):
        raise GeometryMismatchError("wind field and stack grids differ")
    source = "field" if cfg["params_from"] is None else \
        read_windfield(_need(cfg["params_from"]))
    t = cfg["t"]
    pred, var = predict_frame(stack, wind, t, cfg["half_width"], source,
                              cfg["conditioning"], strict=cfg["strict"])
    geom = stack.geometry.with_times(1)
    outputs = [write_layers(out / "prediction", {"pred": pred[None], "var": var[None]},
                            geom, extra={"t": t})]
    if cfg["csv"]:
        path = out / "prediction.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", "x", "y", "pred", "var", "observed"])
            for i, j in zip(*np.nonzero(np.isfinite(pred))):
                x, y = stack.geometry.location(i, j)
                w.writerow([int(i), int(j), repr(float(x)), repr(float(y)),
                            repr(float(pred[i, j])), repr(float(var[i, j])),
                            repr(float(stack.values[t, i, j]))])
        outputs.append(path)
    if cfg["figures"]:
        from .plotting import prediction_maps

        outputs.append(prediction_maps(pred, var, stack.values[t],
                                       out / "prediction.png"))
    return outputs, {"n_predicted": int(np.isfinite(pred).sum())}


def cmd_evaluate(cfg, out):
    from .evaluate import ExperimentReport, baseline_persistence, mspe, write_report
    from .scanner import read_windfield

    report = ExperimentReport(cfg["metric"].upper())
    if cfg["metric"] == "mvd":
        if not cfg["estimate"] or not cfg["truth"]:
            raise ConfigError("mvd needs --estimate and --truth")
        est = read_windfield(_need(cfg["estimate"]))
        truth = read_windfield(_need(cfg["truth"]))
        if not est.geometry.same_grid(truth.geometry) or \
                est.geometry.n_times != truth.geometry.n_times:
            raise GeometryMismatchError("estimate and truth grids differ")
        times = [t for t in range(est.geometry.n_times) if est.valid_mask[t].any()]
        if cfg["t"] is not None:
            times = [cfg["t"]]
        scale = 1.0 if cfg["units"] == "physical" else \
            est.geometry.time_step / est.geometry.pixel_size
        for t in times:
            ok = est.valid_mask[t] & truth.valid_mask[t]
            if not ok.any():
                raise OutOfDomainError(f"no valid estimate at t={t}")
            vd = np.hypot(est.u_map[t] - truth.u_map[t],
                          est.v_map[t] - truth.v_map[t])[ok] * scale
            report.add({"t": t, "method": est.method, "units": cfg["units"]}, vd)
    else:
        if not cfg["prediction"] or not cfg["input"]:
            raise ConfigError("mspe needs --prediction and --input")
        layers, geom, extra = read_layers(_need(cfg["prediction"]))
        stack = read_gridstack(_need(cfg["input"]))
        if not geom.same_grid(stack.geometry):
            raise GeometryMismatchError("prediction and stack grids differ")
        t = cfg["t"] if cfg["t"] is not None else int(extra.get("t", 3))
        pred = layers["pred"][0]
        mask = ~np.isfinite(pred) | stack.missing_mask[t]
        obs = stack.values[t]
        report.add({"t": t, "method": "stdm"}, [mspe(pred, obs, mask)],
                   n_pixels=int((~mask).sum()))
        report.add({"t": t, "method": "persistence"},
                   [mspe(baseline_persistence(stack, t), obs, mask)],
                   n_pixels=int((~mask).sum()))
    report.provenance = {"inputs": {k: cfg[k] for k in
                                    ("estimate", "truth", "prediction", "input")}}
    return [write_report(report, out, "report")], {}


def cmd_table1(cfg, out):
    from .evaluate import Table1Config, format_table1, run_table1, write_report

    flat = cfg["u0s"]
    if len(flat) % 2:
        raise ConfigError("u0s must hold pairs")
    tc = Table1Config(
        window_sizes=tuple(cfg["window_sizes"]), alpha1_sqs=tuple(cfg["alpha1_sqs"]),
        alpha2_sqs=tuple(cfg["alpha2_sqs"]),
        u0s=tuple((flat[k], flat[k + 1]) for k in range(0, len(flat), 2)),
        n_reps=100 if cfg["full"] else cfg["n_reps"],
        methods=tuple(m for m in cfg["methods"].split(",") if m),
        seed=cfg["seed"], dmwa_inner_size=cfg["inner_size"],
        dmwa_search_radius=cfg["search_radius"], budget=cfg["budget"],
        workers=cfg["workers"])
    if set(tc.methods) - {"stdm", "dmwa"}:
        raise ConfigError("methods must be stdm and/or dmwa")
    report = run_table1(tc)
    path = write_report(report, out, "table1")
    layout = out / "table1_layout.txt"
    layout.write_text(format_table1(report))
    return [path, layout], {}


def cmd_table2(cfg, out):
    from .evaluate import Table2Config, run_table2, write_report

    kinds = tuple(k for k in cfg["kinds"].split(",") if k)
    if set(kinds) - {"constant", "rotational"}:
        raise ConfigError("kinds must be constant and/or rotational")
    reps = {"constant": cfg["n_reps_constant"], "rotational": cfg["n_reps_rotational"]}
    if cfg["full"]:
        reps = {k: 100 for k in reps}
    tc = Table2Config(kinds=kinds, n_reps=reps,
                      centers={k: None if cfg[f"centers_{k}"] is None
                               else tuple(cfg[f"centers_{k}"]) for k in reps},
                      n_centers={"constant": 16,
                                 "rotational": cfg["n_centers_rotational"]},
                      bandwidth_stdm=cfg["bandwidth_stdm"],
                      bandwidth_dmwa=cfg["bandwidth_dmwa"], seed=cfg["seed"],
                      budget=cfg["budget"], workers=cfg["workers"])
    return [write_report(run_table2(tc), out, "table2")], {}


def cmd_cv(cfg, out):
    from .evaluate import cv_window_size, write_report
    from .scanner import ScanConfig

    stack = read_gridstack(_need(cfg["input"]))
    best, report = cv_window_size(
        stack, cfg["candidates"], t_fit=cfg["t_fit"], t_predict=cfg["t_fit"] + 2,
        scan_config=ScanConfig(stride=cfg["stride"], budget=cfg["budget"],
                               workers=cfg["workers"]),
        predict_half_width=cfg["predict_half_width"])
    return [write_report(report, out, "cv")], {"selected": best}


HANDLERS = {"simulate": cmd_simulate, "standardize": cmd_standardize,
            "estimate": cmd_estimate, "smooth": cmd_smooth, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "table1": cmd_table1, "table2": cmd_table2,
            "cv": cmd_cv}


def _classify(exc) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, FileNotFoundError):
        return EXIT_MISSING_INPUT
    if isinstance(exc, GeometryMismatchError):
        return EXIT_DIMENSION
    if isinstance(exc, OutOfDomainError):
        return EXIT_OUT_OF_DOMAIN
    if isinstance(exc, (GridError, ValueError, np.linalg.LinAlgError)):
        return EXIT_INVALID_DATA
    return EXIT_INTERNAL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "schema":
        json.dump(config_schema(), sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
        return EXIT_OK
    try:
        cfg = resolve_config(args.command, args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        outputs, extra = HANDLERS[args.command](cfg, out)
        _write_manifest(out, args.command, cfg, outputs, extra,
                        runtime=time.perf_counter() - start)
    except Exception as exc:  # noqa: BLE001 - turned into an error record
        code = _classify(exc)
        record = {"error": ERROR_KINDS[code], "exit_code": code,
                  "type": type(exc).__name__, "message": str(exc),
                  "command": args.command}
        sys.stderr.write(json.dumps(record) + "\n")
        return code
    return EXIT_OK


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
