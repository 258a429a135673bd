"""Command-line front end.

Configuration is a flat JSON object in human units (MHz, ns, us, uT, kHz);
command-line flags override file values. Every command writes a CSV with a
header row plus a JSON sidecar (``<output>.json``) holding the resolved
configuration, which can be fed back with ``--config`` to repeat the run.

Exit codes: 0 success, 2 configuration error, 3 numeric failure
(unconverged quadrature or fit), 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import fit_double_lorentzian, fit_noise_model, sweep_detuning, sweep_pulse_width
from .modulation import dense_times, modulation_trace
from .response import (
    CoherenceTrace,
    LineShape,
    NoiseLine,
    NoiseModel,
    QuadratureWarning,
    coherence_trace,
    mc_coherence,
    coherence_point,
)
from .sequence import SequenceSpec, build_timeline
from .spectrum import default_omega_grid, filter_spectrum_closed, find_peaks

log = logging.getLogger("ddfilter")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("modfun", "filter", "coherence", "sweep", "fitdip", "fitnmr", "mc")
TWO_PI = 2 * math.pi
MHZ = TWO_PI * 1e6
NS = 1e-9

# key -> (type, default); None default means "not set"
DEFAULTS = {
    "kind": (str, "CPMG"),
    "n_pulses": (int, 128),
    "tau_ns": (float, 240.0),
    "t_p_ns": (float, 40.0),
    "detuning_mhz": (float, 0.0),
    "rabi_mhz": (float, None),
    "phases_deg": (list, None),
    "lines": (list, []),
    "gamma_e_ghz_per_t": (float, -28.0),
    "tau_start_ns": (float, 215.0),
    "tau_stop_ns": (float, 260.0),
    "tau_num": (int, 46),
    "freq_start_mhz": (float, None),
    "freq_stop_mhz": (float, None),
    "freq_num": (int, None),
    "sweep_parameter": (str, "detuning"),
    "sweep_values": (list, None),
    "samples_per_segment": (int, 20),
    "min_height_fraction": (float, 0.2),
    "baseline": (bool, False),
    "realizations": (int, 2000),
    "seed": (int, 0),
    "tones_per_line": (int, 64),
    "input": (str, None),
    "initial": (dict, None),
    "output": (str, None),
}
LINE_KEYS = {"center_mhz", "t2star_us", "fwhm_khz", "b_rms_ut", "shape"}


class ConfigError(ValueError):
    pass


# --- configuration ---------------------------------------------------------

def _coerce(key, value):
    typ, _ = DEFAULTS[key]
    if value is None:
        return None
    try:
        if typ is bool:
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if typ is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if typ is float:
            return float(value)
        if typ is list:
            if isinstance(value, str):
                value = json.loads(value)
            if not isinstance(value, list):
                raise ValueError(value)
            return value
        if typ is dict:
            if isinstance(value, str):
                value = json.loads(value)
            if not isinstance(value, dict):
                raise ValueError(value)
            return value
        return str(value)
    except (TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from exc


def load_config(path) -> dict:
    """Read a config file or a previous run's JSON sidecar."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if "config" in data and "version" in data:
        data = data["config"]
    return data


def resolve_config(command: str, file_values: dict, overrides: dict) -> dict:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    merged = {}
    for source in (file_values, overrides):
        for key, value in source.items():
            if key == "command":
                if value != command:
                    raise ConfigError(f"config is for command {value!r}, not {command!r}")
                continue
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = _coerce(key, value)
    cfg = {"command": command}
    for key, (_, default) in DEFAULTS.items():
        cfg[key] = merged.get(key, default)
    for ln in cfg["lines"]:
        _check_line(ln)
    if cfg["initial"] is not None:
        _check_line(cfg["initial"])
    if cfg["output"] is None:
        raise ConfigError("an output path is required (--output)")
    return cfg


def _check_line(ln):
    if not isinstance(ln, dict):
        raise ConfigError(f"noise line must be an object, got {ln!r}")
    bad = set(ln) - LINE_KEYS
    if bad:
        raise ConfigError(f"unknown noise-line key(s) {sorted(bad)}")
    if "center_mhz" not in ln or "b_rms_ut" not in ln:
        raise ConfigError("noise line needs center_mhz and b_rms_ut")


def make_line(ln: dict) -> NoiseLine:
    shape = LineShape(str(ln.get("shape", "lorentzian")).lower())
    center = float(ln["center_mhz"]) * MHZ
    b = float(ln["b_rms_ut"]) * 1e-6
    if shape is LineShape.DELTA:
        return NoiseLine(center, 0.0, b, shape)
    if "fwhm_khz" in ln and "t2star_us" in ln:
        raise ConfigError("give either fwhm_khz or t2star_us, not both")
    if "fwhm_khz" in ln:
        fwhm = float(ln["fwhm_khz"]) * TWO_PI * 1e3
    elif "t2star_us" in ln:
        fwhm = 2.0 / (float(ln["t2star_us"]) * 1e-6)
    else:
        raise ConfigError("broadened noise line needs fwhm_khz or t2star_us")
    return NoiseLine(center, fwhm, b, shape)


def make_spec(cfg) -> SequenceSpec:
    try:
        return SequenceSpec(
            kind=cfg["kind"],
            n_pulses=cfg["n_pulses"],
            tau=cfg["tau_ns"] * NS,
            t_p=cfg["t_p_ns"] * NS,
            detuning=cfg["detuning_mhz"] * MHZ,
            rabi=None if cfg["rabi_mhz"] is None else cfg["rabi_mhz"] * MHZ,
            phases=None if cfg["phases_deg"] is None else [math.radians(p) for p in cfg["phases_deg"]],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def make_noise(cfg, lines=None) -> NoiseModel:
    try:
        lines = [make_line(ln) for ln in (cfg["lines"] if lines is None else lines)]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return NoiseModel(tuple(lines), cfg["gamma_e_ghz_per_t"] * TWO_PI * 1e9)


def tau_grid(cfg) -> np.ndarray:
    if cfg["tau_num"] < 2 or cfg["tau_stop_ns"] <= cfg["tau_start_ns"]:
        raise ConfigError("tau grid needs tau_num >= 2 and tau_stop_ns > tau_start_ns")
    return np.linspace(cfg["tau_start_ns"], cfg["tau_stop_ns"], cfg["tau_num"]) * NS


def omega_grid(cfg, spec: SequenceSpec) -> np.ndarray:
    keys = ("freq_start_mhz", "freq_stop_mhz", "freq_num")
    given = [cfg[k] is not None for k in keys]
    if not any(given):
        return default_omega_grid(spec.total_time, spec.omega_dd)
    if not all(given):
        raise ConfigError("set all of freq_start_mhz, freq_stop_mhz and freq_num, or none")
    return np.linspace(cfg["freq_start_mhz"], cfg["freq_stop_mhz"], cfg["freq_num"]) * MHZ


# --- output ----------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_sidecar(path, cfg, results):
    meta = {"version": __version__, "command": cfg["command"], "config": cfg, "results": results}
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _peaks_json(peaks):
    return [{"freq_mhz": p.position / MHZ, "height": p.height, "fwhm_khz": p.fwhm / TWO_PI / 1e3}
            for p in peaks]


# --- commands --------------------------------------------------------------

def cmd_modfun(cfg):
    spec = make_spec(cfg)
    tl = build_timeline(spec)
    t = dense_times(tl, cfg["samples_per_segment"])
    f = modulation_trace(tl)(t)
    rows = [(ti / NS, *fi) for ti, fi in zip(t, f)]
    write_csv(cfg["output"], ["t_ns", "f_x", "f_y", "f_z"], rows)
    return {}, True


def cmd_filter(cfg):
    spec = make_spec(cfg)
    tl = build_timeline(spec)
    om = omega_grid(cfg, spec)
    fs = filter_spectrum_closed(modulation_trace(tl), om)
    c = fs.components
    rows = [(w / MHZ, F, *c[:, i].real, *c[:, i].imag) for i, (w, F) in enumerate(zip(om, fs.filter))]
    header = ["freq_mhz", "filter", "re_fx", "re_fy", "re_fz", "im_fx", "im_fy", "im_fz"]
    write_csv(cfg["output"], header, rows)
    peaks = find_peaks(fs, cfg["min_height_fraction"])
    return {"peaks": _peaks_json(peaks), "t_total_us": tl.total_time * 1e6}, True


def cmd_coherence(cfg):
    spec = make_spec(cfg)
    noise = make_noise(cfg)
    taus = tau_grid(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuadratureWarning)
        tr = coherence_trace(spec, taus, noise, with_baseline=cfg["baseline"])
    header = ["tau_ns", "coherence"] + (["baseline"] if cfg["baseline"] else []) + ["flagged"]
    rows = []
    for i, tau in enumerate(taus):
        row = [tau / NS, tr.coherence[i]]
        if cfg["baseline"]:
            row.append(tr.baseline[i])
        row.append(bool(tr.flags[i]))
        rows.append(row)
    write_csv(cfg["output"], header, rows)
    return {"flagged_points": int(tr.flags.sum())}, not tr.flags.any()


def cmd_sweep(cfg):
    spec = make_spec(cfg)
    values = cfg["sweep_values"]
    if not values:
        raise ConfigError("sweep needs sweep_values")
    om = omega_grid(cfg, spec)
    param = cfg["sweep_parameter"]
    try:
        if param == "detuning":
            sm = sweep_detuning(spec, np.asarray(values, float) * MHZ, om, cfg["min_height_fraction"])
            unit, scale = "detuning_mhz", MHZ
        elif param == "t_p":
            sm = sweep_pulse_width(spec, np.asarray(values, float) * NS, om, cfg["min_height_fraction"])
            unit, scale = "t_p_ns", NS
        else:
            raise ConfigError(f"sweep_parameter must be 'detuning' or 't_p', got {param!r}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = [(v / scale, w / MHZ, sm.values[i, j]) for i, v in enumerate(sm.axis1) for j, w in enumerate(om)]
    write_csv(cfg["output"], [unit, "freq_mhz", "filter"], rows)
    prow = [(v / scale, k, p.position / MHZ, p.height, p.fwhm / TWO_PI / 1e3)
            for i, v in enumerate(sm.axis1) for k, p in enumerate(sm.peaks[i])]
    out = Path(cfg["output"])
    peaks_path = out.with_name(out.stem + "_peaks" + out.suffix)
    write_csv(peaks_path, [unit, "peak", "freq_mhz", "height", "fwhm_khz"], prow)
    split = sm.splitting()
    return {"peaks_csv": peaks_path.name,
            "splitting_khz": [None if np.isnan(s) else s / TWO_PI / 1e3 for s in split]}, True


def _read_trace(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header = rows[0]
    try:
        it = header.index("tau_ns")
        ic = header.index("coherence")
    except ValueError:
        raise ConfigError(f"{path}: needs 'tau_ns' and 'coherence' columns")
    data = np.array([[float(r[it]), float(r[ic])] for r in rows[1:] if r])
    return data[:, 0] * NS, data[:, 1]


def cmd_fitdip(cfg):
    if not cfg["input"]:
        raise ConfigError("fitdip needs an input CSV")
    tau, L = _read_trace(cfg["input"])
    try:
        fit = fit_double_lorentzian(tau, L)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = []
    for k, d in enumerate(fit.dips, start=1):
        rows.append((k, d.center / NS, fit.stderr[f"center{k}"] / NS, d.fwhm / NS,
                     fit.stderr[f"fwhm{k}"] / NS, d.amplitude, fit.stderr[f"amplitude{k}"]))
    write_csv(cfg["output"], ["dip", "center_ns", "center_err_ns", "fwhm_ns", "fwhm_err_ns",
                              "amplitude", "amplitude_err"], rows)
    res = {"baseline": fit.baseline, "significant": fit.significant, "converged": fit.converged,
           "message": fit.message, "residual_norm": fit.residual_norm}
    return res, fit.converged


def cmd_fitnmr(cfg):
    if not cfg["input"] or cfg["initial"] is None:
        raise ConfigError("fitnmr needs an input CSV and an initial noise line")
    tau, L = _read_trace(cfg["input"])
    spec = make_spec(cfg)
    initial = make_noise(cfg, [cfg["initial"]])
    try:
        fit = fit_noise_model(CoherenceTrace(tau, L, spec=spec), initial, spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ln, e = fit.line, fit.stderr
    rows = [
        ("b_rms_ut", ln.b_rms * 1e6, e["b_rms"] * 1e6),
        ("center_mhz", ln.center / MHZ, e["center"] / MHZ),
        ("fwhm_khz", ln.fwhm / TWO_PI / 1e3, e["fwhm"] / TWO_PI / 1e3),
        ("t2star_us", ln.t2star * 1e6, e["t2star"] * 1e6),
    ]
    write_csv(cfg["output"], ["parameter", "value", "stderr"], rows)
    return {"converged": fit.converged, "residual_norm": fit.residual_norm}, fit.converged


def cmd_mc(cfg):
    spec = make_spec(cfg)
    noise = make_noise(cfg)
    taus = tau_grid(cfg)
    rows, ok = [], True
    for tau in taus:
        tl = build_timeline(spec.with_(tau=float(tau)))
        try:
            r = mc_coherence(tl, noise, cfg["realizations"], cfg["seed"], cfg["tones_per_line"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", QuadratureWarning)
            ref = coherence_point(tl, noise, full_output=True)
        ok &= ref.converged
        rows.append((tau / NS, r.mean, r.stderr, r.mean_cos, r.stderr_cos, ref.value))
    write_csv(cfg["output"], ["tau_ns", "coherence_mc", "stderr", "coherence_cos", "stderr_cos",
                              "coherence_eq"], rows)
    return {}, ok


HANDLERS = {
    "modfun": cmd_modfun, "filter": cmd_filter, "coherence": cmd_coherence, "sweep": cmd_sweep,
    "fitdip": cmd_fitdip, "fitnmr": cmd_fitnmr, "mc": cmd_mc,
}


def run(cfg: dict) -> int:
    """Execute a resolved configuration and return the exit status."""
    try:
        results, ok = HANDLERS[cfg["command"]](cfg)
        write_sidecar(cfg["output"], cfg, results)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    if not ok:
        log.error("numeric failure: see flagged rows in %s", cfg["output"])
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ddfilter",
        description="Filter functions and coherence of dynamical decoupling with finite pulses.",
        epilog="Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.",
    )
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file or a previous run's .json sidecar")
    p.add_argument("--line", action="append", metavar="JSON",
                   help="noise line as JSON, e.g. '{\"center_mhz\": 2.1, \"t2star_us\": 12, "
                        "\"b_rms_ut\": 0.1}'; repeatable, replaces config lines")
    p.add_argument("-v", "--verbose", action="store_true")
    for key, (typ, _) in DEFAULTS.items():
        if key == "lines":
            continue
        p.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                       help=f"({typ.__name__})")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        file_values = load_config(args.config) if args.config else {}
        overrides = {k: v for k, v in vars(args).items() if k in DEFAULTS and v is not None}
        if args.line:
            overrides["lines"] = [json.loads(s) for s in args.line]
        cfg = resolve_config(args.command, file_values, overrides)
    except (ConfigError, json.JSONDecodeError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
