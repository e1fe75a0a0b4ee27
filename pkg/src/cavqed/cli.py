"""Batch command-line front end.

Every command reads a JSON config (``--config``) with optional flat
``--set key=value`` overrides, validates all parameters before computing and
writes CSV or JSON with the resolved config and toolkit version embedded.
Frequencies are in MHz, times in microseconds and rates in counts/s.

Exit codes: 0 success, 1 usage (including an empty config), 2 validation
error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable

import numpy as np

from . import __version__
from .dynamics import SingularExcitedBlockError, SteadyStateError, StepSizeUnderflowError
from .models import CavityParams, Rb87Params
from .protocols import (
    MeasurementSet,
    bell_fidelity,
    carving_ceiling_rb87,
    carving_outcome_full,
    carving_outcome_rb87,
    carving_outcome_simplified,
    cz_gate_full,
    cz_gate_metrics_rb87,
    cz_gate_metrics_simplified,
    cz_operating_point_rb87,
)
from .readout import (
    DetectorModel,
    ThresholdModel,
    bin_time_tags,
    dead_time_rate,
    read_time_tags,
    readout_report,
    simulate_readout,
)
from .spectra import (
    FitError,
    Spectrum,
    fit_cavity_params,
    loss_spectrum,
    probe_spectrum_numeric,
    probe_transmission_analytic,
    side_drive_analytic,
    side_drive_spectrum_numeric,
)

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NONCONVERGENCE = 0, 1, 2, 3

_CAVITY = {"g_a": 100.0, "g_b": 100.0, "kappa": 65.0, "gamma": 6.0, "delta_c": 0.0, "delta_a": 0.0}
_RB87 = {"g": 100.0, "kappa": 65.0, "gamma": 6.0, "omega": 0.6}

DEFAULTS: dict[str, dict[str, Any]] = {
    "spectrum": {
        **_CAVITY, "drive": "probe", "method": "analytic", "atoms": [0, 1, 2],
        "omega_probe": 0.65, "omega_side": 0.65, "start": -300.0, "stop": 300.0,
        "points": 401, "fock_levels": 3,
    },
    "fit": {
        **_CAVITY, "input": None, "g_init": 80.0, "kappa_init": 50.0,
        "synthetic_g": 100.0, "synthetic_kappa": 65.0, "noise": 0.01,
        "start": -300.0, "stop": 300.0, "points": 201, "max_iter": 200,
    },
    "readout": {
        "mu_low": 0.09, "mu_high": 16.6, "k_threshold": None, "windows": 0,
        "t_dead_ns": 17.0, "dark_rate": 0.0, "window_us": 1.0, "n_detectors": 2,
        "time_tags": None, "tag_start_ns": 0.0, "confidence": 0.95,
        "rate_start": 0.0, "rate_stop": 2e8, "rate_points": 0, "printed_dead_time": False,
    },
    "carve": {
        **_RB87, "model": "simplified", "cooperativity": 101.0, "t": None,
        "t_start": 0.0, "t_stop": 100.0, "points": 101, "rates": "printed",
    },
    "gate": {
        **_RB87, "model": "simplified", "cooperativity": 101.0, "omega": None,
        "form": "cooperativity", "optimize": True,
    },
    "bell-fidelity": {"input": None, "populations": None, "target": "phi+", "shots": None},
    "sweep": {
        "target": "loss", "param": "delta", "start": -20.0, "stop": 20.0, "points": 41,
        "values": None, "base": {}, "initial_state": "10", "pulse_time": 20.0,
        **_RB87,
    },
}

COMMANDS = tuple(DEFAULTS)


class ValidationError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)
    out: str | None = None
    seed: int = 0
    format: str = "json"
    threads: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        """Validate and fill defaults."""
        if not isinstance(d, dict):
            raise ValidationError("config must be a JSON object")
        unknown = set(d) - {"command", "params", "out", "seed", "format", "threads"}
        if unknown:
            raise ValidationError(f"unknown config fields {sorted(unknown)}", sorted(unknown)[0])
        cmd = d.get("command")
        if cmd not in DEFAULTS:
            raise ValidationError(f"command must be one of {list(COMMANDS)}, got {cmd!r}", "command")
        params = dict(DEFAULTS[cmd])
        given = d.get("params") or {}
        if not isinstance(given, dict):
            raise ValidationError("params must be an object", "params")
        for k, v in given.items():
            if k not in params:
                raise ValidationError(f"unknown parameter {k!r} for {cmd}", k)
            params[k] = _coerce(k, v, DEFAULTS[cmd][k])
        fmt = d.get("format", "json")
        if fmt not in ("csv", "json"):
            raise ValidationError("format must be csv or json", "format")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer", "seed")
        threads = d.get("threads", 1)
        if not isinstance(threads, int) or threads < 1:
            raise ValidationError("threads must be a positive integer", "threads")
        out = d.get("out")
        if out is not None:
            _check_writable(out)
        return cls(cmd, params, out, seed, fmt, threads)

    def to_dict(self) -> dict:
        return {"command": self.command, "params": self.params, "out": self.out,
                "seed": self.seed, "format": self.format, "threads": self.threads}


def _coerce(key: str, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"{key} must be true or false", key)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ValidationError(f"{key} must be an integer", key)
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
            raise ValidationError(f"{key} must be a finite number", key)
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ValidationError(f"{key} must be a string", key)
    if isinstance(default, list) and not isinstance(value, list):
        raise ValidationError(f"{key} must be a list", key)
    if isinstance(default, dict) and not isinstance(value, dict):
        raise ValidationError(f"{key} must be an object", key)
    return value


def _check_writable(path: str):
    d = os.path.abspath(path)
    while not os.path.exists(d):
        parent = os.path.dirname(d)
        if parent == d:
            break
        d = parent
    if not os.access(d, os.W_OK):
        raise ValidationError(f"output path {path!r} is not writable", "out")


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


# ----------------------------------------------------------------------------
# commands; each returns (rows for CSV with a header, results for JSON)


def _grid(p, key="points"):
    if p[key] < 1:
        raise ValidationError(f"{key} must be >= 1", key)
    return np.linspace(p["start"], p["stop"], p[key])


def _cavity(p) -> CavityParams:
    try:
        return CavityParams(**{k: p[k] for k in _CAVITY})
    except ValueError as e:
        raise ValidationError(str(e)) from e


def _pmap(fn: Callable, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def cmd_spectrum(cfg: RunConfig):
    p = cfg.params
    if p["drive"] not in ("probe", "side") or p["method"] not in ("analytic", "numeric"):
        raise ValidationError("drive must be probe/side and method analytic/numeric")
    atoms = p["atoms"]
    if not atoms or any(a not in (0, 1, 2) for a in atoms):
        raise ValidationError("atoms must list values from 0, 1, 2", "atoms")
    if p["drive"] == "side" and 0 in atoms:
        raise ValidationError("side-drive spectra need at least one atom", "atoms")
    base = _cavity(p)
    d = _grid(p)

    def trace(n):
        if p["drive"] == "probe":
            q = base.with_(omega_probe=p["omega_probe"])
            if p["method"] == "analytic":
                return probe_transmission_analytic(q, d, n)
            return probe_spectrum_numeric(q, d, n, p["fock_levels"])
        q = base.with_(omega_side_a=p["omega_side"], omega_side_b=p["omega_side"])
        if p["method"] == "analytic":
            sig = np.mean([side_drive_analytic(q.with_(phi_rel=ph), d, n).signal
                           for ph in ((0.0,) if n == 1 else (0.0, np.pi))], axis=0)
            return Spectrum(d, sig, "probe", "analytic", n)
        return side_drive_spectrum_numeric(q, n, d, fock_levels=p["fock_levels"])

    traces = _pmap(trace, atoms, cfg.threads)
    rows = [["trace", "detuning_mhz", "signal"]]
    for n, s in zip(atoms, traces):
        rows += [[f"{n}_atoms", repr(float(x)), repr(float(y))] for x, y in zip(s.detunings, s.signal)]
    return rows, {"traces": [s.to_dict() for s in traces]}


def _read_trace_csv(path) -> list[Spectrum]:
    groups: dict[str, tuple[list, list]] = {}
    with open(path, newline="") as fh:
        rd = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in rd:
            g = groups.setdefault(row.get("trace", "1_atoms"), ([], []))
            g[0].append(float(row["detuning_mhz"]))
            g[1].append(float(row["signal"]))
    out = []
    for lab, (x, y) in groups.items():
        try:
            n = int(str(lab).split("_")[0])
        except ValueError:
            raise ValidationError(f"trace label {lab!r} must start with the atom number", "input")
        out.append(Spectrum(x, y, n_atoms=n))
    return out


def cmd_fit(cfg: RunConfig):
    p = cfg.params
    base = _cavity(p)
    if p["input"]:
        spectra = _read_trace_csv(p["input"])
    else:
        rng = np.random.default_rng(cfg.seed)
        true = base.with_(g_a=p["synthetic_g"], g_b=p["synthetic_g"], kappa=p["synthetic_kappa"])
        d = _grid(p)
        spectra = []
        for n in (0, 1, 2):
            s = probe_transmission_analytic(true, d, n)
            y = s.signal * (1 + p["noise"] * rng.standard_normal(d.size))
            spectra.append(Spectrum(d, np.clip(y, 0, None), n_atoms=n))
    r = fit_cavity_params(spectra, {"g": p["g_init"], "kappa": p["kappa_init"]}, base=base,
                          max_iter=p["max_iter"])
    res = r.to_dict()
    rows = [["quantity", "value", "std_error"], ["g", r.g, r.g_err], ["kappa", r.kappa, r.kappa_err]]
    for i, (a, b, ea, eb) in enumerate(zip(r.amplitudes, r.offsets, r.amplitude_errs, r.offset_errs)):
        rows += [[f"amplitude_{i}", a, ea], [f"offset_{i}", b, eb]]
    rows.append(["residual_norm", r.residual_norm, ""])
    return rows, res


def cmd_readout(cfg: RunConfig):
    p = cfg.params
    try:
        m = ThresholdModel(p["mu_low"], p["mu_high"], p["k_threshold"])
        det = DetectorModel(p["t_dead_ns"], p["dark_rate"], p["window_us"], p["n_detectors"])
    except ValueError as e:
        raise ValidationError(str(e)) from e
    records = {}
    if p["windows"] > 0:
        for stream, state in enumerate(("coupled", "uncoupled")):
            records[state] = simulate_readout(state, m, p["windows"],
                                              cfg.seed * 2 + stream, workers=cfg.threads)
    res = readout_report(m, det, records, p["confidence"])
    if p["time_tags"]:
        ts, _ = read_time_tags(p["time_tags"])
        counts = bin_time_tags(ts, p["window_us"], p["tag_start_ns"])
        res["time_tags"] = {"windows": int(counts.size), "counts": counts.tolist(),
                            "labels": m.label(counts).tolist()}
    if p["rate_points"] > 0:
        cp = np.linspace(p["rate_start"], p["rate_stop"], p["rate_points"])
        res["dead_time_curve"] = {
            "incident_rate": cp.tolist(),
            "measured_rate": dead_time_rate(cp, det, p["printed_dead_time"]).tolist(),
        }
    rows = [["quantity", "value"]] + [[k, v] for k, v in res.items() if np.isscalar(v)]
    return rows, res


def cmd_carve(cfg: RunConfig):
    p = cfg.params
    model = p["model"]
    if model not in ("simplified", "rb87", "rb87-full"):
        raise ValidationError("model must be simplified, rb87 or rb87-full", "model")
    if model == "simplified":
        gamma, C, om = p["gamma"], p["cooperativity"], p["omega"]
        if om is None or gamma <= 0 or C <= 0:
            raise ValidationError("simplified carving needs omega, gamma > 0 and cooperativity > 0")
        f = lambda t: carving_outcome_simplified(om, gamma, C, t)
    else:
        if p["rates"] not in ("printed", "numeric"):
            raise ValidationError("rates must be printed or numeric", "rates")
        try:
            rp = Rb87Params(g=p["g"], kappa=p["kappa"], gamma=p["gamma"], omega=p["omega"])
        except (ValueError, TypeError) as e:
            raise ValidationError(str(e)) from e
        if model == "rb87":
            f = lambda t: carving_outcome_rb87(rp, t, p["rates"])
        else:
            f = lambda t: carving_outcome_full(rp, t)
    times = [p["t"]] if p["t"] is not None else np.linspace(p["t_start"], p["t_stop"], p["points"])
    if any(t < 0 for t in times):
        raise ValidationError("times must be non-negative", "t")
    outs = _pmap(f, list(times), cfg.threads)
    res = {"curve": [o.to_dict() for o in outs]}
    if model == "rb87":
        res["ceiling"] = carving_ceiling_rb87(rp, p["rates"]).to_dict()
    rows = [["t_us", "fidelity", "success_probability"]]
    rows += [[repr(float(o.pulse_time)), repr(o.fidelity), repr(o.success_probability)] for o in outs]
    return rows, res


def cmd_gate(cfg: RunConfig):
    p = cfg.params
    model = p["model"]
    if model == "simplified":
        if p["form"] not in ("cooperativity", "exact"):
            raise ValidationError("form must be cooperativity or exact", "form")
        try:
            m = cz_gate_metrics_simplified(
                p["gamma"], C=p["cooperativity"] if p["form"] == "cooperativity" else None,
                g=p["g"], kappa=p["kappa"], omega=p["omega"], form=p["form"])
        except ValueError as e:
            raise ValidationError(str(e)) from e
    elif model in ("rb87", "rb87-full"):
        try:
            rp = Rb87Params(g=p["g"], kappa=p["kappa"], gamma=p["gamma"],
                            omega=p["omega"] if p["omega"] is not None else 1.0)
        except (ValueError, TypeError) as e:
            raise ValidationError(str(e)) from e
        if p["omega"] is None and p["optimize"]:
            m = cz_operating_point_rb87(rp)
        else:
            m = cz_gate_metrics_rb87(rp)
        if model == "rb87-full":
            m = cz_gate_full(rp.with_(omega=m.omega_opt))
    else:
        raise ValidationError("model must be simplified, rb87 or rb87-full", "model")
    res = m.to_dict()
    res["omega_opt_over_gamma"] = m.omega_opt / p["gamma"]
    rows = [["quantity", "value"]] + [[k, v] for k, v in res.items() if np.isscalar(v)]
    rows += [[k, v] for k, v in m.details.items()]
    return rows, res


def cmd_bell(cfg: RunConfig):
    p = cfg.params
    pops = p["populations"]
    if p["input"]:
        with open(p["input"]) as fh:
            pops = json.load(fh)
    if not pops:
        raise ValidationError("bell-fidelity needs populations or an input file", "populations")
    try:
        table = pops["populations"] if "populations" in pops else pops
        ms = MeasurementSet({b: table[b] for b in ("x", "y", "z")},
                            sigmas=pops.get("sigmas"), shots=p["shots"] or pops.get("shots"))
        f, s = bell_fidelity(ms, p["target"])
    except (ValueError, KeyError, TypeError) as e:
        raise ValidationError(str(e)) from e
    res = {"fidelity": f, "std_error": s, "target": p["target"]}
    return [["quantity", "value"], ["fidelity", f], ["std_error", s]], res


def cmd_sweep(cfg: RunConfig):
    p = cfg.params
    values = p["values"] if p["values"] is not None else list(_grid(p))
    try:
        rp = Rb87Params(g=p["g"], kappa=p["kappa"], gamma=p["gamma"], omega=p["omega"])
    except (ValueError, TypeError) as e:
        raise ValidationError(str(e)) from e
    tgt = p["target"]
    if tgt == "loss":
        if p["param"] != "delta":
            raise ValidationError("loss sweeps run over delta", "param")
        if p["initial_state"] not in ("10", "11"):
            raise ValidationError("initial_state must be 10 or 11", "initial_state")

        def one(v):
            return float(loss_spectrum(rp, p["initial_state"], p["pulse_time"], [v]).signal[0])
        cols = ["loss"]
    elif tgt in ("carve", "gate"):
        sub = {**p["base"]}

        def one(v):
            c = RunConfig.from_dict({"command": tgt, "params": {**sub, p["param"]: v}})
            r = (cmd_carve if tgt == "carve" else cmd_gate)(c)[1]
            if tgt == "carve":
                o = r["curve"][0]
                return o["fidelity"], o["success_probability"]
            return r["f_uncorr"], r["p_success"], r["f_corr"]
        cols = ["fidelity", "success_probability"] if tgt == "carve" else ["f_uncorr", "p_success", "f_corr"]
    else:
        raise ValidationError("target must be loss, carve or gate", "target")
    outs = _pmap(one, values, cfg.threads)
    outs = [o if isinstance(o, tuple) else (o,) for o in outs]
    rows = [[p["param"], *cols]] + [[repr(float(v)), *map(repr, o)] for v, o in zip(values, outs)]
    res = {"param": p["param"], "values": [float(v) for v in values],
           **{c: [o[i] for o in outs] for i, c in enumerate(cols)}}
    return rows, res


HANDLERS = {
    "spectrum": cmd_spectrum, "fit": cmd_fit, "readout": cmd_readout, "carve": cmd_carve,
    "gate": cmd_gate, "bell-fidelity": cmd_bell, "sweep": cmd_sweep,
}


# ----------------------------------------------------------------------------
# output


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def render(cfg: RunConfig, rows, results, timestamp: str) -> str:
    """Serialized artifact; the timestamp occupies exactly one line."""
    conf = _jsonable(cfg.to_dict())
    if cfg.format == "json":
        body = json.dumps({"version": __version__, "config": conf, "results": _jsonable(results)},
                          indent=2, sort_keys=True)
        return body[:1] + f'\n  "generated": {json.dumps(timestamp)},' + body[1:] + "\n"
    buf = io.StringIO()
    buf.write(f"# cavqed {__version__}\n")
    buf.write(f"# generated: {timestamp}\n")
    buf.write("# config: " + json.dumps(conf, sort_keys=True) + "\n")
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _write_atomic(path: str, text: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".partial-")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def run(cfg: RunConfig, timestamp: str | None = None) -> str:
    """Execute a validated config and return the rendered artifact."""
    rows, results = HANDLERS[cfg.command](cfg)
    ts = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    text = render(cfg, rows, results, ts)
    if cfg.out:
        _write_atomic(os.path.join(cfg.out, f"{cfg.command}.{cfg.format}"), text)
    return text


def _error(code: int, kind: str, message: str, key: str | None = None, **extra) -> int:
    rep = {"error": kind, "message": message, "exit_code": code}
    if key:
        rep["key"] = key
    rep.update(extra)
    sys.stderr.write(json.dumps(_jsonable(rep), sort_keys=True) + "\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cavqed", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"cavqed {__version__}")
    sub = ap.add_subparsers(dest="command")
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} analysis")
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a parameter")
        sp.add_argument("--out", help="output directory (default: stdout)")
        sp.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
        sp.add_argument("--format", choices=("csv", "json"))
        sp.add_argument("--threads", type=int, help="worker threads for independent points")
        if name in ("carve", "gate"):
            sp.add_argument("--model", help="simplified, rb87 or rb87-full")
            sp.add_argument("--cooperativity", type=float)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command is None:
        ap.print_usage(sys.stderr)
        return EXIT_USAGE
    doc: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as e:
            return _error(EXIT_VALIDATION, "validation", f"cannot read config: {e}", "config")
        if not text.strip():
            ap.print_usage(sys.stderr)
            sys.stderr.write("error: empty config\n")
            return EXIT_USAGE
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            return _error(EXIT_VALIDATION, "validation", f"config is not valid JSON: {e}", "config")
        if not isinstance(doc, dict):
            return _error(EXIT_VALIDATION, "validation", "config must be a JSON object", "config")
        if not doc:
            ap.print_usage(sys.stderr)
            sys.stderr.write("error: empty config\n")
            return EXIT_USAGE
        if doc.get("command", args.command) != args.command:
            return _error(EXIT_VALIDATION, "validation",
                          f"config is for {doc['command']!r}, not {args.command!r}", "command")
    doc = dict(doc)
    doc["command"] = args.command
    params = dict(doc.get("params") or {})
    try:
        params.update(_parse_set(args.set))
    except ValidationError as e:
        return _error(EXIT_VALIDATION, "validation", str(e), e.key)
    for flag in ("model", "cooperativity"):
        if getattr(args, flag, None) is not None:
            params[flag] = getattr(args, flag)
    doc["params"] = params
    for flag in ("out", "seed", "format", "threads"):
        if getattr(args, flag) is not None:
            doc[flag] = getattr(args, flag)
    try:
        cfg = RunConfig.from_dict(doc)
        text = run(cfg)
    except ValidationError as e:
        return _error(EXIT_VALIDATION, "validation", str(e), e.key)
    except (FitError, SteadyStateError, StepSizeUnderflowError, SingularExcitedBlockError) as e:
        extra = {}
        if isinstance(e, FitError) and e.best is not None:
            extra = {"best": np.asarray(e.best).tolist(), "diagnostics": e.diagnostics}
        return _error(EXIT_NONCONVERGENCE, "non-convergence", str(e), **extra)
    except (ValueError, OSError) as e:
        return _error(EXIT_VALIDATION, "validation", str(e))
    if not cfg.out:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
