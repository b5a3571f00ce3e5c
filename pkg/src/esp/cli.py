"""Scenario runner: ``esp <kind> --config scenario.yaml [--seed-override N] [--workers K] [--out DIR]``.

A scenario file is YAML with the top-level keys ``schema``, ``kind``, ``id``,
``seeds``, ``out`` and ``params``. Lengths are in wavelengths. Each run writes
one or more CSV tables plus ``summary.json`` into the output directory.

Exit codes: 0 success, 2 parse error, 3 validation error, 4 non-convergence
(partial results written and flagged), 5 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import re
import sys
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import yaml

from . import SCHEMA_VERSION, __version__
from . import circuit, dof, modes, ris, scm, sim
from .em import Medium
from .errors import EspError
from .rng import stream

EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_NOCONV, EXIT_IO = 0, 2, 3, 4, 5
VERSION = f"esp {__version__}"

KINDS = ("dof-table", "modes", "dsa-precoder", "sim-train", "sim-doa", "ris-pattern", "scm-link")


class ConfigParseError(Exception):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line, self.column = line, column


class ConfigValidationError(Exception):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------- schema

@dataclass(frozen=True)
class Field:
    kind: str  # int, float, bool, str, float_list, int_list, angle_pairs
    default: Any = None
    required: bool = False
    low: Optional[float] = None
    low_open: bool = False
    high: Optional[float] = None
    choices: Optional[tuple] = None


def _pos(kind="float", default=None, **kw):
    return Field(kind, default, low=0.0, low_open=True, **kw)


_SIM_FIELDS = {
    "n_layers": _pos("int", 3),
    "n_atoms": _pos("int", 36),
    "n_antennas": _pos("int", 16),
    "atom_spacing": _pos("float", 0.5),
    "layer_spacing": _pos("float", 0.5),
    "learning_rate": _pos("float", 0.1),
    "decay": Field("float", 0.99, low=0.0, low_open=True, high=1.0),
    "max_iter": _pos("int", 10000),
    "stop_threshold": _pos("float", 1e-6),
    "fit_scale": Field("bool", False),
}

SCHEMAS: Dict[str, Dict[str, Field]] = {
    "dof-table": {
        "lengths": Field("float_list", required=True, low=0.0, low_open=True),
        "dimension": Field("int", 2, choices=(1, 2, 3)),
        "polarizations": Field("int", 1, choices=(1, 2)),
    },
    "modes": {
        "tx_length": _pos("float", required=True),
        "rx_length": _pos("float", required=True),
        "distance": _pos("float", required=True),
        "pitch": Field("float", 0.25, low=0.0, low_open=True, high=0.5),
        "threshold_db": _pos("float", 10.0),
        "snr_db": Field("float", 20.0),
    },
    "dsa-precoder": {
        "frequency_hz": _pos("float", 28e9),
        "rings": _pos("int", 3),
        "spacing": _pos("float", 0.25),
        "element_length": _pos("float", 0.01),
        "n_active": _pos("int", 2),
        "singular_values_db": Field("float_list", [0.0, -6.8]),
        "n_modes": _pos("int", 6),
        "power": _pos("float", 1.0),
        "restarts": Field("int", 8, low=0),
        "leakage_limit_db": Field("float", -20.0),
    },
    "sim-train": dict(_SIM_FIELDS),
    "sim-doa": {
        **_SIM_FIELDS,
        "snr_db": Field("float_list", [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0]),
        "trials": _pos("int", 500),
        "snapshots": _pos("int", 1),
    },
    "ris-pattern": {
        "side": _pos("int", 16),
        "pairs": Field("int", 20, low=0),
        "angles": Field("angle_pairs", []),
        "max_elevation_deg": Field("float", 60.0, low=0.0, high=90.0),
        "step_deg": _pos("float", 1.0),
    },
    "scm-link": {
        "n_ap": _pos("int", 400),
        "n_cells": _pos("int", 100),
        "rank": _pos("int", 1),
        "singular_values": Field("float_list", [1.0], low=0.0, low_open=True),
        "snr_max_db": Field("float", 35.0),
        "iterations": _pos("int", 20),
        "modulation": Field("str", "BPSK"),
        "p_tx": _pos("float", 1.0),
        "gain": Field("float", 1.0, low=0.0, low_open=True, high=1.0),
        "margin_db": _pos("float", 1.0),
    },
}

TOP_LEVEL = {"schema", "kind", "id", "seeds", "out", "params"}


def _check_number(path, value, spec: Field):
    if spec.low is not None and (value < spec.low or (spec.low_open and value == spec.low)):
        op = ">" if spec.low_open else ">="
        raise ConfigValidationError(path, f"must be {op} {spec.low:g}")
    if spec.high is not None and value > spec.high:
        raise ConfigValidationError(path, f"must be <= {spec.high:g}")
    if spec.choices is not None and value not in spec.choices:
        raise ConfigValidationError(path, f"must be one of {list(spec.choices)}")
    return value


def _coerce(path, value, spec: Field):
    k = spec.kind
    if k == "bool":
        if not isinstance(value, bool):
            raise ConfigValidationError(path, "expected a boolean")
        return value
    if k == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigValidationError(path, "expected an integer")
        return _check_number(path, value, spec)
    if k == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigValidationError(path, "expected a number")
        if not math.isfinite(value):
            raise ConfigValidationError(path, "must be finite")
        return _check_number(path, float(value), spec)
    if k == "str":
        if not isinstance(value, str):
            raise ConfigValidationError(path, "expected a string")
        return value
    if k in ("float_list", "int_list"):
        if not isinstance(value, list) or not value:
            raise ConfigValidationError(path, "expected a non-empty list")
        inner = Field("float" if k == "float_list" else "int", low=spec.low,
                      low_open=spec.low_open, high=spec.high)
        return [_coerce(f"{path}[{i}]", v, inner) for i, v in enumerate(value)]
    if k == "angle_pairs":
        if not isinstance(value, list):
            raise ConfigValidationError(path, "expected a list of [inc_el, inc_az, des_el, des_az]")
        out = []
        for i, row in enumerate(value):
            if not isinstance(row, list) or len(row) != 4:
                raise ConfigValidationError(f"{path}[{i}]", "expected four angles in degrees")
            vals = [_coerce(f"{path}[{i}][{j}]", v, Field("float")) for j, v in enumerate(row)]
            for j in (0, 2):
                if not 0 <= vals[j] <= 90:
                    raise ConfigValidationError(f"{path}[{i}][{j}]", "elevation must lie in [0, 90]")
            out.append(vals)
        return out
    raise AssertionError(k)


@dataclass
class Scenario:
    kind: str
    id: str
    seeds: List[int]
    out: Path
    params: Dict[str, Any]


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a sign or dot (``28e9``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def parse_config(text: str, source: str = "<config>") -> dict:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        col = mark.column + 1 if mark is not None else None
        raise ConfigParseError(f"{source}: {getattr(exc, 'problem', None) or exc}", line, col)
    if not isinstance(doc, dict):
        raise ConfigParseError(f"{source}: top level must be a mapping", 1, 1)
    return doc


def validate(doc: dict, kind: Optional[str] = None, default_id: str = "scenario") -> Scenario:
    """Check a parsed document against the schema; raises ConfigValidationError."""
    for key in doc:
        if key not in TOP_LEVEL:
            raise ConfigValidationError(str(key), "unknown key")
    schema = doc.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigValidationError("schema", f"unsupported schema version (expected {SCHEMA_VERSION})")
    doc_kind = doc.get("kind", kind)
    if doc_kind not in KINDS:
        raise ConfigValidationError("kind", f"must be one of {list(KINDS)}")
    if kind is not None and doc_kind != kind:
        raise ConfigValidationError("kind", f"config declares {doc_kind!r} but subcommand is {kind!r}")
    sid = doc.get("id", default_id)
    if not isinstance(sid, str) or not sid:
        raise ConfigValidationError("id", "expected a non-empty string")
    seeds = _coerce("seeds", doc.get("seeds", [0]), Field("int_list", low=0))
    out = doc.get("out", os.path.join("results", sid))
    if not isinstance(out, str):
        raise ConfigValidationError("out", "expected a path string")
    raw = doc.get("params", {}) or {}
    if not isinstance(raw, dict):
        raise ConfigValidationError("params", "expected a mapping")
    schema_fields = SCHEMAS[doc_kind]
    params = {}
    for key in raw:
        if key not in schema_fields:
            raise ConfigValidationError(f"params.{key}", "unknown key")
    for key, spec in schema_fields.items():
        if key in raw:
            params[key] = _coerce(f"params.{key}", raw[key], spec)
        elif spec.required:
            raise ConfigValidationError(f"params.{key}", "required")
        else:
            params[key] = spec.default
    _cross_validate(doc_kind, params)
    return Scenario(kind=doc_kind, id=sid, seeds=seeds, out=Path(out), params=params)


def _cross_validate(kind, p):
    try:
        if kind == "dsa-precoder":
            if len(p["singular_values_db"]) != p["n_active"]:
                raise ConfigValidationError("params.singular_values_db", "need one value per active port")
            if p["n_modes"] < p["n_active"]:
                raise ConfigValidationError("params.n_modes", "must be >= n_active")
            if p["n_modes"] > 1 + 3 * p["rings"] * (p["rings"] + 1):
                raise ConfigValidationError("params.n_modes", "exceeds the number of elements")
        elif kind in ("sim-train", "sim-doa"):
            sim.SimStack(p["n_layers"], p["n_atoms"], p["atom_spacing"], p["layer_spacing"],
                         Medium(1.0), n_antennas=p["n_antennas"])
        elif kind == "scm-link":
            scm.modulation_order(p["modulation"])
            if len(p["singular_values"]) != p["rank"]:
                raise ConfigValidationError("params.singular_values", "need one value per rank")
            if p["rank"] > min(p["n_ap"], p["n_cells"]):
                raise ConfigValidationError("params.rank", "exceeds min(n_ap, n_cells)")
            if any(np.diff(p["singular_values"]) > 0):
                raise ConfigValidationError("params.singular_values", "must be non-increasing")
        elif kind == "modes":
            if p["rx_length"] < p["pitch"] or p["tx_length"] < p["pitch"]:
                raise ConfigValidationError("params.pitch", "must not exceed the segment lengths")
    except EspError as exc:
        raise ConfigValidationError("params", str(exc))


def load_scenario(path, kind=None) -> Scenario:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return validate(parse_config(text, str(path)), kind, default_id=path.stem)


# ---------------------------------------------------------------- experiments

@dataclass
class TrialResult:
    seed: int
    tables: Dict[str, List[dict]] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)
    converged: bool = True


def _int_seed(rng) -> int:
    return int(rng.integers(0, 2**31 - 1))


def run_dof_table(p, sid, seed):
    m = Medium(1.0)
    make = {1: dof.ApertureGeometry.segment, 2: dof.ApertureGeometry.square,
            3: dof.ApertureGeometry.cube}[p["dimension"]]
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for length in p["lengths"]:
            g = make(length)
            rows.append({
                "L_over_lambda": length,
                "formula_dof": dof.dof_unbounded(g, m, "formula", p["polarizations"]).value,
                "lattice_dof": dof.dof_unbounded(g, m, "lattice", p["polarizations"]).value,
            })
    return TrialResult(seed, {"dof_table": rows})


def run_modes(p, sid, seed):
    m = Medium(1.0)
    tx = modes.SampledSpace.segment(p["tx_length"], p["pitch"])
    rx = modes.SampledSpace.segment(p["rx_length"], p["pitch"], center=(0.0, p["distance"], 0.0))
    dec = modes.mode_decomposition(modes.coupling_matrix(tx, rx, m))
    s = dec.singular_values
    n_dof = modes.count_dof(dec, threshold_db=p["threshold_db"])
    noise = s[0] ** 2 / 10 ** (p["snr_db"] / 10)
    cap = modes.link_capacity(s**2, noise, 1.0)
    rows = [{"index": i + 1, "singular_value": float(v),
             "relative_db": float(20 * np.log10(v / s[0])) if v > 0 else float("-inf")}
            for i, v in enumerate(s)]
    link = dof.LinkGeometry.segments(p["tx_length"], p["rx_length"], p["distance"])
    summary = {"dof_count": n_dof, "capacity_bits": cap,
               "dof_classic": dof.dof_link(link, m, "classic").value,
               "dof_corrected": dof.dof_link(link, m, "corrected").value}
    return TrialResult(seed, {"modes": rows}, summary)


def run_dsa_precoder(p, sid, seed):
    rng = stream(sid, seed, 0)
    m = Medium.from_frequency(p["frequency_hz"])
    lam = m.wavelength
    arr = circuit.DipoleArray.hexagonal(p["rings"], p["spacing"] * lam, p["element_length"] * lam)
    z = circuit.impedance_matrix(arr, m)
    s = 10 ** (np.asarray(p["singular_values_db"]) / 20)
    c = circuit.synthetic_channel(z, s, p["n_modes"], rng)
    cfg = circuit.DsaConfig(len(arr), p["n_active"])
    target = np.diag(s) * np.sqrt(p["power"] / p["n_active"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = circuit.dsa_optimize(z, cfg, c, target, p["power"], restarts=p["restarts"],
                                   seed=_int_seed(rng))
    ok = bool(res.converged and res.leakage_db <= p["leakage_limit_db"])
    row = {"leakage_db": res.leakage_db, "residual": res.residual,
           "radiated_power": res.radiated_power, "restart": res.restart, "converged": int(ok)}
    for i, g in enumerate(np.atleast_1d(res.gain_loss_db)):
        row[f"gain_loss_db_{i + 1}"] = float(g)
    loads = [{"port": i + 1, "reactance_ohm": float(x)} for i, x in enumerate(res.loads.reactance)]
    return TrialResult(seed, {"dsa_precoder": [row], "dsa_loads": loads}, converged=ok)


def _sim_setup(p, rng):
    stack = sim.SimStack(p["n_layers"], p["n_atoms"], p["atom_spacing"], p["layer_spacing"],
                         Medium(1.0), n_antennas=p["n_antennas"])
    model = sim.SimModel(stack)
    sched = sim.TrainSchedule(p["learning_rate"], p["decay"], p["max_iter"],
                              p["stop_threshold"], p["fit_scale"])
    target = sim.dft_steering_target(p["n_antennas"], p["n_atoms"])
    init = rng.uniform(0, 2 * np.pi, (p["n_layers"], p["n_atoms"]))
    res = sim.sim_train(stack, target, sched, init=init, model=model)
    return stack, model, target, res


def run_sim_train(p, sid, seed):
    rng = stream(sid, seed, 0)
    _, _, target, res = _sim_setup(p, rng)
    ref = float(np.sum(np.abs(target) ** 2))
    rows = [{"iteration": i, "loss": v, "normalized_loss": v / ref}
            for i, v in enumerate(res.loss_history)]
    summary = {"final_loss": res.loss, "normalized_loss": res.loss / ref,
               "iterations": res.iterations}
    return TrialResult(seed, {"sim_train": rows}, summary,
                       converged=res.iterations < p["max_iter"])


def run_sim_doa(p, sid, seed):
    rng = stream(sid, seed, 0)
    stack, model, _, res = _sim_setup(p, rng)
    grid = sim.grid_angles(stack.n_antennas)
    hits = 0
    for psi in grid:
        est = sim.doa_estimate(stack, res.phases, sim.plane_wave(stack.n_atoms, *psi), 0.0, 1,
                               model=model, rng=stream(sid, seed, 1))
        hits += bool(np.allclose(est, psi))
    mse, hit_rate = sim.doa_mse(stack, res.phases, p["snr_db"], p["trials"], p["snapshots"],
                                rng=stream(sid, seed, 2), model=model)
    rows = [{"snr_db": s, "mse": float(e), "hit_rate": float(h)}
            for s, e, h in zip(p["snr_db"], mse, hit_rate)]
    summary = {"noiseless_recovery": hits / grid.shape[0], "train_iterations": res.iterations}
    return TrialResult(seed, {"sim_doa": rows}, summary)


def run_ris_pattern(p, sid, seed):
    rng = stream(sid, seed, 0)
    pairs = [list(a) for a in p["angles"]]
    top = p["max_elevation_deg"]
    for _ in range(p["pairs"]):
        pairs.append([rng.uniform(0, top), rng.uniform(0, 360), rng.uniform(0, top),
                      rng.uniform(0, 360)])
    rows = []
    for i, (ie, ia, de, da) in enumerate(pairs):
        inc, des = ris.Angle.from_degrees(ie, ia), ris.Angle.from_degrees(de, da)
        panel = ris.RisPanel(p["side"], ris.anomalous_phase_profile(inc, des, p["side"]))
        peak = ris.pattern_peak(panel, inc, p["step_deg"])
        rows.append({"pair": i, "inc_el_deg": ie, "inc_az_deg": ia, "des_el_deg": de,
                     "des_az_deg": da, "peak_el_deg": float(np.degrees(peak.elevation)),
                     "peak_az_deg": float(np.degrees(peak.azimuth)),
                     "error_deg": float(np.degrees(ris.angular_distance(peak, des)))})
    summary = {"max_error_deg": max((r["error_deg"] for r in rows), default=0.0)}
    return TrialResult(seed, {"ris_pattern": rows}, summary)


def run_scm_link(p, sid, seed):
    rng = stream(sid, seed, 0)
    ch = scm.make_channel(p["n_ap"], p["n_cells"], p["rank"], p["singular_values"], rng=rng)
    prm = scm.params_for_snr_max(ch, p["snr_max_db"], p["p_tx"], p["gain"], p["modulation"])
    packet = scm.random_packet(rng, p["iterations"], p["modulation"])
    tr = scm.run_link(ch, prm, packet, rng=rng)
    err = np.concatenate([[0], tr.errors.astype(int)])
    rows = [{"k": k, "snr_db": float(tr.snr_db[k]), "alignment": float(tr.alignment[k]),
             "symbol_error": int(err[k])} for k in range(p["iterations"] + 1)]
    conv = tr.convergence_index(p["margin_db"])
    summary = {"converged_at": -1 if conv is None else conv, "symbol_errors": tr.n_errors}
    return TrialResult(seed, {"scm_link": rows}, summary)


RUNNERS: Dict[str, Callable] = {
    "dof-table": run_dof_table, "modes": run_modes, "dsa-precoder": run_dsa_precoder,
    "sim-train": run_sim_train, "sim-doa": run_sim_doa, "ris-pattern": run_ris_pattern,
    "scm-link": run_scm_link,
}


def _aggregate(scn: Scenario, trials: List[TrialResult]) -> Dict[str, Any]:
    """Campaign-level tables and statistics; independent of worker scheduling."""
    agg: Dict[str, Any] = {"tables": {}, "summary": {}}
    if scn.kind == "scm-link":
        snr = np.array([[r["snr_db"] for r in t.tables["scm_link"]] for t in trials])
        agg["tables"]["scm_link_median"] = [
            {"k": k, "median_snr_db": float(np.median(snr[:, k])),
             "p10_snr_db": float(np.percentile(snr[:, k], 10)),
             "p90_snr_db": float(np.percentile(snr[:, k], 90))}
            for k in range(snr.shape[1])
        ]
        p = scn.params
        agg["summary"] = {
            "snr_max_db": p["snr_max_db"],
            "bootstrap_snr_db": scm.bootstrap_snr(p["snr_max_db"], p["n_ap"]),
            "median_snr_10_db": float(np.median(snr[:, min(10, snr.shape[1] - 1)])),
        }
    elif scn.kind == "sim-doa":
        mse = np.array([[r["mse"] for r in t.tables["sim_doa"]] for t in trials])
        agg["tables"]["sim_doa_mean"] = [
            {"snr_db": s, "mean_mse": float(v)} for s, v in zip(scn.params["snr_db"], mse.mean(0))
        ]
    elif scn.kind == "dsa-precoder":
        leak = [t.tables["dsa_precoder"][0]["leakage_db"] for t in trials]
        agg["summary"] = {"median_leakage_db": float(np.median(leak))}
    return agg


# ---------------------------------------------------------------- output

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def atomic_write(path: Path, text: str):
    """Write ``text`` to ``path`` through a temporary file and an atomic rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_csv(rows: List[dict]) -> str:
    if not rows:
        raise ValueError("no rows to write")
    columns = list(rows[0].keys())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def emit_results(result: dict, out: Path, formats=("tabular", "structured")) -> List[Path]:
    """Write every table as CSV and the whole result set as ``summary.json``."""
    tables = result.get("tables", {})
    if not tables or not any(tables.values()):
        raise ValueError("result set is empty; nothing written")
    written = []
    if "tabular" in formats:
        for name, rows in tables.items():
            path = out / f"{name}.csv"
            atomic_write(path, to_csv(rows))
            written.append(path)
    if "structured" in formats:
        path = out / "summary.json"
        doc = {k: v for k, v in result.items() if k != "tables"}
        doc["tables"] = sorted(f"{name}.csv" for name in tables)
        atomic_write(path, json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n")
        written.append(path)
    return written


def _run_trial(args):
    kind, params, sid, seed = args
    return RUNNERS[kind](params, sid, seed)


def run_scenario(scn: Scenario, workers: int = 1) -> dict:
    """Execute every seed of a scenario and assemble the result set (not written)."""
    jobs = [(scn.kind, scn.params, scn.id, s) for s in scn.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(_run_trial, jobs))
    else:
        trials = [_run_trial(j) for j in jobs]
    tables: Dict[str, List[dict]] = {}
    for t in trials:
        for name, rows in t.tables.items():
            tables.setdefault(name, []).extend(
                {"seed": t.seed, **r, "version": VERSION} for r in rows)
    agg = _aggregate(scn, trials)
    for name, rows in agg["tables"].items():
        tables[name] = [{**r, "version": VERSION} for r in rows]
    return {
        "version": VERSION,
        "schema": SCHEMA_VERSION,
        "kind": scn.kind,
        "id": scn.id,
        "seeds": list(scn.seeds),
        "params": scn.params,
        "converged": all(t.converged for t in trials),
        "trials": [{"seed": t.seed, "converged": t.converged, **t.summary} for t in trials],
        "aggregate": agg["summary"],
        "tables": tables,
    }


# ---------------------------------------------------------------- entry point

def build_parser():
    ap = argparse.ArgumentParser(prog="esp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version",
                    version=f"{VERSION} (config schema {SCHEMA_VERSION})")
    sub = ap.add_subparsers(dest="kind", metavar="<subcommand>")
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run a {kind} scenario")
        sp.add_argument("--config", required=True, help="scenario YAML file")
        sp.add_argument("--seed-override", type=int, default=None,
                        help="replace the seed list with this single seed")
        sp.add_argument("--workers", type=int, default=1, help="parallel worker processes")
        sp.add_argument("--out", default=None, help="output directory (overrides the config)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.kind is None:
        ap.print_help(sys.stderr)
        return EXIT_INVALID
    try:
        scn = load_scenario(args.config, args.kind)
    except OSError as exc:
        print(f"esp: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigParseError as exc:
        loc = f" (line {exc.line}, column {exc.column})" if exc.line else ""
        print(f"esp: parse error{loc}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigValidationError as exc:
        print(f"esp: invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.seed_override is not None:
        if args.seed_override < 0:
            print("esp: invalid config: seeds: must be >= 0", file=sys.stderr)
            return EXIT_INVALID
        scn.seeds = [args.seed_override]
    if args.workers < 1:
        print("esp: invalid config: --workers: must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    if args.out is not None:
        scn.out = Path(args.out)
    try:
        scn.out.mkdir(parents=True, exist_ok=True)
        if not os.access(scn.out, os.W_OK):
            raise PermissionError(f"{scn.out} is not writable")
    except OSError as exc:
        print(f"esp: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        result = run_scenario(scn, args.workers)
    except EspError as exc:
        print(f"esp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    try:
        paths = emit_results(result, scn.out)
    except OSError as exc:
        print(f"esp: write failed: {exc}", file=sys.stderr)
        return EXIT_IO
    for p in paths:
        print(p)
    if not result["converged"]:
        print("esp: some trials did not converge; results flagged in summary.json",
              file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
