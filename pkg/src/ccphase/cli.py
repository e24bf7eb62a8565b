"""Batch front-end: scenario files, spectrum/plan/gate/sweep/calibrate commands.

A scenario is a JSON object; every section is optional::

    {
      "device":  {"couplings": {"q1-coupler": 0.14}, "modes": {"coupler": {"anharmonicity": -0.3}}},
      "pulses":  {"op_freq": 4.5, "rise": 5.0},
      "grid":    {"start": 4.2, "stop": 6.2, "points": 601},
      "gate":    {"kind": "ccphase", "phases": {"phi_ccp": 3.14159}},
      "noise":   {"t1_us": 84, "t_phi_us": 124, "charge_noise": 6e-5, "budget": true},
      "sweep":   {"parameter": "gate.phases.phi_ccp", "start": 0, "stop": 6.283, "num": 17,
                  "probe": "gate"}
    }

Device entries patch the reference device: ``modes`` may be a full list or a
mapping from mode label to the fields to change, and ``couplings`` entries
replace single pairs.  Sweep parameters are dotted paths into the resolved
scenario (``device.g_ic`` sets all three qubit-coupler couplings at once).
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from . import evolution as ev
from .hilbert import COUPLER, QUBITS, DeviceSpec, default_device
from .metrics import leakage_report
from .pipeline import GateContext, PulseDefaults
from .refocus import GatePlan, InfeasibleError
from .shifts import PhaseVector

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL, EXIT_INFEASIBLE = 0, 1, 3, 4
PHASE_KEYS = ("phi_011", "phi_101", "phi_110", "phi_ccp")
PROBES = ("gate", "pulse", "shifts")


class ConfigError(ValueError):
    pass


# --- scenario --------------------------------------------------------------------

def _default_raw() -> dict:
    return {
        "device": default_device().to_dict(),
        "pulses": PulseDefaults().to_dict(),
        "grid": {"start": 4.2, "stop": 6.2, "points": 601},
        "gate": {"kind": "ccphase", "phases": {k: 0.0 for k in PHASE_KEYS}, "pair": None},
        "noise": None,
        "sweep": None,
    }


def _merge_device(base: dict, patch: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in patch.items():
        if key == "modes" and isinstance(val, dict):
            by_label = {m["label"]: m for m in out["modes"]}
            for label, fields in val.items():
                if label not in by_label:
                    raise ConfigError(f"unknown mode {label!r} in device.modes")
                by_label[label].update(fields)
        elif key == "couplings":
            cur = out["couplings"]
            for pair, g in val.items():
                a, b = pair.split("-")
                rev = f"{b}-{a}"
                cur[rev if rev in cur else pair] = g
        else:
            out[key] = val
    return out


def resolve(raw: dict) -> dict:
    """Fill defaults into a user scenario (a pure function of the input)."""
    unknown = set(raw) - set(_default_raw()) - {"seed", "name", "probe_width"}
    if unknown:
        raise ConfigError(f"unknown scenario sections: {sorted(unknown)}")
    out = _default_raw()
    out["device"] = _merge_device(out["device"], raw.get("device") or {})
    out["pulses"].update(raw.get("pulses") or {})
    out["grid"].update(raw.get("grid") or {})
    gate = raw.get("gate") or {}
    out["gate"]["kind"] = gate.get("kind", "ccphase")
    out["gate"]["pair"] = gate.get("pair")
    out["gate"]["phases"].update(gate.get("phases") or {})
    out["noise"] = raw.get("noise")
    out["sweep"] = raw.get("sweep")
    out["probe_width"] = raw.get("probe_width", 60.0)
    out["seed"] = raw.get("seed", 0)
    out["name"] = raw.get("name", "scenario")
    return out


def _path_parts(path: str) -> List[str]:
    parts = path.split(".")
    if not all(parts):
        raise ConfigError(f"malformed parameter path {path!r}")
    return parts


def set_path(cfg: dict, path: str, value) -> dict:
    """Copy of a resolved scenario with ``path`` set; the path must already exist."""
    cfg = copy.deepcopy(cfg)
    parts = _path_parts(path)
    if parts == ["device", "g_ic"]:
        for q in QUBITS:
            set_path_inplace(cfg, f"device.couplings.{q}-{COUPLER}", value)
        return cfg
    set_path_inplace(cfg, path, value)
    return cfg


def set_path_inplace(cfg: dict, path: str, value):
    parts = _path_parts(path)
    node = cfg
    for i, key in enumerate(parts[:-1]):
        if isinstance(node, list):  # modes list addressed by label
            match = [m for m in node if m.get("label") == key]
            if not match:
                raise ConfigError(f"parameter path {path!r}: no entry {key!r}")
            node = match[0]
            continue
        if not isinstance(node, dict) or key not in node or node[key] is None:
            raise ConfigError(f"parameter path {path!r} does not exist")
        node = node[key]
    leaf = parts[-1]
    if isinstance(node, dict) and parts[-2:-1] == ["couplings"] and leaf not in node:
        a, b = leaf.split("-") if "-" in leaf else (leaf, "")
        if f"{b}-{a}" in node:
            leaf = f"{b}-{a}"
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"parameter path {path!r} does not exist")
    node[leaf] = value


def sweep_values(sweep: dict) -> np.ndarray:
    if "values" in sweep:
        vals = np.asarray(sweep["values"], dtype=float)
    elif {"start", "stop", "num"} <= set(sweep):
        vals = np.linspace(float(sweep["start"]), float(sweep["stop"]), int(sweep["num"]))
    else:
        raise ConfigError("sweep needs 'values' or 'start'/'stop'/'num'")
    if vals.size == 0:
        raise ConfigError("sweep grid is empty")
    if not np.all(np.isfinite(vals)):
        raise ConfigError("sweep grid contains non-finite values")
    return vals


def validate(cfg: dict):
    """Build every object once so that bad configs fail before any simulation."""
    device_from(cfg)
    pulses_from(cfg)
    grid_from(cfg)
    target_from(cfg)
    if cfg["noise"] is not None:
        noise_from(cfg)
    sw = cfg["sweep"]
    if sw is not None:
        if "parameter" not in sw:
            raise ConfigError("sweep needs a 'parameter' path")
        if sw.get("probe", "gate") not in PROBES:
            raise ConfigError(f"sweep probe must be one of {PROBES}")
        vals = sweep_values(sw)
        set_path(cfg, sw["parameter"], float(vals[0]))


def device_from(cfg: dict) -> DeviceSpec:
    try:
        return DeviceSpec.from_dict(cfg["device"])
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"invalid device: {exc}") from exc


def pulses_from(cfg: dict) -> PulseDefaults:
    try:
        return PulseDefaults.from_dict(cfg["pulses"])
    except TypeError as exc:
        raise ConfigError(f"invalid pulses section: {exc}") from exc


def grid_from(cfg: dict) -> np.ndarray:
    g = cfg["grid"]
    n = int(g["points"])
    if n < 1 or not (np.isfinite(g["start"]) and np.isfinite(g["stop"])):
        raise ConfigError("grid needs finite bounds and at least one point")
    return np.linspace(float(g["start"]), float(g["stop"]), n)


def target_from(cfg: dict):
    g = cfg["gate"]
    kind = g["kind"]
    if kind not in ("ccphase", "generalized", "cphase", "identity"):
        raise ConfigError(f"unknown gate kind {g['kind']!r}")
    unknown = set(g["phases"]) - set(PHASE_KEYS)
    if unknown:
        raise ConfigError(f"unknown phase keys {sorted(unknown)}")
    phases = PhaseVector(*(float(g["phases"][k]) for k in PHASE_KEYS))
    pair = None
    if kind == "cphase":
        if not g.get("pair") or len(g["pair"]) != 2:
            raise ConfigError("cphase needs a two-qubit 'pair', e.g. [\"q1\", \"q3\"]")
        pair = tuple(sorted(QUBITS.index(q) if isinstance(q, str) else int(q) - 1
                            for q in g["pair"]))
    if kind == "identity":
        kind, phases = "ccphase", PhaseVector()
    return kind, phases, pair


def noise_from(cfg: dict) -> ev.NoiseModel:
    n = cfg["noise"]
    modes = tuple(n.get("modes", (COUPLER,) + tuple(QUBITS)))

    def per_mode(value):
        if value is None:
            return {}
        if isinstance(value, dict):
            return {k: float(v) for k, v in value.items()}
        return {m: float(value) for m in modes}

    try:
        return ev.NoiseModel(per_mode(n.get("t1_us")), per_mode(n.get("t_phi_us")),
                             float(n.get("charge_noise", 0.0)),
                             {k: float(v) for k, v in (n.get("ej_ec_ratio") or {}).items()},
                             tuple(n.get("charge_modes", (COUPLER,))))
    except ValueError as exc:
        raise ConfigError(f"invalid noise section: {exc}") from exc


_CONTEXTS: Dict[str, GateContext] = {}


def context_for(cfg: dict) -> GateContext:
    """Per-process cache keyed by everything the context depends on."""
    key = json.dumps([cfg["device"], cfg["pulses"], cfg["grid"]], sort_keys=True)
    ctx = _CONTEXTS.get(key)
    if ctx is None:
        ctx = GateContext(device_from(cfg), pulses_from(cfg), grid_from(cfg))
        _CONTEXTS.clear()
        _CONTEXTS[key] = ctx
    return ctx


# --- output -------------------------------------------------------------------------

class RunDir:
    def __init__(self, root: str, overwrite: bool):
        self.root = Path(root)
        if self.root.exists() and any(self.root.iterdir()) and not overwrite:
            raise ConfigError(f"output directory {self.root} is not empty (use --overwrite)")
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: List[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.root / name

    def write_json(self, name: str, obj):
        with open(self.path(name), "w") as fh:
            json.dump(obj, fh, indent=2, default=_json_default)

    def write_rows(self, name: str, header: List[str], rows):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)

    def manifest(self, command: str, cfg: dict, started: float, status: str, extra=None):
        self.write_json("config.json", cfg)
        entries = {}
        for name in sorted(set(self.files)):
            p = self.root / name
            if p.exists():
                entries[name] = hashlib.sha256(p.read_bytes()).hexdigest()
        man = {"command": command, "status": status, "version": __version__,
               "numpy": np.__version__, "elapsed_s": round(time.time() - started, 3),
               "files": entries}
        if extra:
            man.update(extra)
        with open(self.root / "manifest.json", "w") as fh:
            json.dump(man, fh, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    raise TypeError(f"not serializable: {type(o)}")


# --- commands --------------------------------------------------------------------------

def cmd_spectrum(cfg: dict, out: RunDir, args) -> int:
    ctx = context_for(cfg)
    ctx.track.to_csv(out.path("spectrum.csv"))
    from .hamiltonian import computational_frequencies
    computational_frequencies(ctx.track).to_csv(out.path("adiabatic.csv"))
    ctx.shifts.to_csv(out.path("shifts.csv"))
    rows = [[e.interval[0], e.interval[1], e.location, e.gap * 1e3, int(e.resolved),
             _label(e.labels[0]), _label(e.labels[1])] for e in ctx.track.diabatic_events]
    out.write_rows("diabatic_events.csv",
                   ["interval_lo_ghz", "interval_hi_ghz", "location_ghz", "gap_mhz", "resolved",
                    "state_a", "state_b"], rows)
    sc = ctx.shifts
    print(f"max |chi_011|/2pi = {np.max(np.abs(sc.chi_011)) * 1e3:.1f} MHz, "
          f"max |chi_ccp|/2pi = {np.max(np.abs(sc.chi_ccp)) * 1e3:.1f} MHz, "
          f"{len(ctx.track.diabatic_events)} diabatic events")
    return EXIT_OK


def _label(lab) -> str:
    return f"|{lab[0]},{''.join(str(x) for x in lab[1:])}>"


def _plan(ctx: GateContext, cfg: dict) -> GatePlan:
    kind, phases, pair = target_from(cfg)
    return ctx.plan(phases, kind, pair)


def cmd_plan(cfg: dict, out: RunDir, args) -> int:
    ctx = context_for(cfg)
    plan = _plan(ctx, cfg)
    plan.to_json(out.path("plan.json"))
    out.write_json("calibration.json", ctx.chi_calibration.to_dict())
    print(_plan_summary(plan))
    return EXIT_OK


def _plan_summary(plan: GatePlan) -> str:
    if plan.is_empty:
        return "empty plan (identity)"
    durs = ", ".join(f"{t:.2f}" for t in plan.durations)
    return (f"frames {'/'.join(plan.frames)}  durations ({durs}) ns  windings {plan.windings}  "
            f"pi pulses {plan.n_pi_pulses}  total {plan.total_duration:.1f} ns")


def _run_gate(ctx: GateContext, cfg: dict, plan: GatePlan, out: Optional[RunDir], args):
    noise = noise_from(cfg) if cfg["noise"] else None
    schedule = ctx.plan_schedule(plan) if not plan.is_empty else ctx.render([], 0.0)
    if noise is not None:
        kinds = tuple(cfg["noise"].get("channels", ("relaxation", "dephasing")))
        report = ctx.run_plan(plan, noise, kinds, schedule=schedule)
    else:
        report = ctx.run_plan(plan, schedule=schedule)
    if out is None:
        return report, None
    report.to_json(out.path("report.json"))
    plan.to_json(out.path("plan.json"))
    schedule.to_csv(out.path("schedule.csv"))
    lk = report.leakage
    out.write_rows("leakage.csv", ["state", "out_of_space", "within_space", "retained"],
                   [[f"{i:03b}", lk.out_of_space[i], lk.within_space[i], lk.retained[i]]
                    for i in range(8)])
    budget = None
    if noise is not None and cfg["noise"].get("budget", False):
        budget = ctx.error_budget(plan, noise, schedule)
        out.write_rows("budget.csv", ["component", "infidelity"],
                       [[k, v] for k, v in budget.items()])
    if getattr(args, "dump_states", False):
        _dump_states(ctx, schedule, out)
    return report, budget


def _dump_states(ctx: GateContext, schedule, out: RunDir):
    """Populations of the dressed computational states along the schedule."""
    blocks = ev.block_propagators(ctx.h, schedule)
    V = ctx.idle_vectors
    U = np.eye(ctx.h.dimension, dtype=complex)
    rows = []
    t = 0.0
    step = 15 * schedule.dt
    for X in blocks:
        U = X @ U
        t = min(t + step, schedule.duration)
        P = np.abs(V.conj().T @ U @ V) ** 2
        for i in range(8):
            rows.append([f"{t:.4f}", f"{i:03b}"] + [f"{p:.8g}" for p in P[:, i]]
                        + [f"{1 - P[:, i].sum():.8g}"])
    out.write_rows("states.csv", ["time_ns", "initial"] + [f"p_{j:03b}" for j in range(8)]
                   + ["p_leaked"], rows)


def cmd_gate(cfg: dict, out: RunDir, args) -> int:
    ctx = context_for(cfg)
    plan = _plan(ctx, cfg)
    report, budget = _run_gate(ctx, cfg, plan, out, args)
    print(_plan_summary(plan))
    print(f"fidelity {report.fidelity * 100:.3f} %  phases "
          + " ".join(f"{k}={v:+.4f}" for k, v in report.phases.to_dict().items()))
    if budget:
        print("budget " + " ".join(f"{k}={v * 100:.3f}%" for k, v in budget.items()))
    return EXIT_OK


def cmd_simulate(cfg: dict, out: RunDir, args) -> int:
    ctx = context_for(cfg)
    with open(args.plan) as fh:
        plan = GatePlan.from_dict(json.load(fh))
    report, _ = _run_gate(ctx, cfg, plan, out, args)
    print(f"fidelity {report.fidelity * 100:.3f} %")
    return EXIT_OK


def cmd_calibrate(cfg: dict, out: RunDir, args) -> int:
    ctx = context_for(cfg)
    drag = {q: dict(carrier_ghz=c.carrier, amplitude=c.amplitude,
                    drag_coefficient=c.drag_coefficient, isolated_fidelity=c.isolated_fidelity,
                    dressed_anharmonicity_ghz=ctx.dressed_anharmonicity(q))
            for q, c in ctx.drag.items()}
    out.write_json("drag.json", drag)
    cal = ctx.chi_calibration
    out.write_json("calibration.json", cal.to_dict())
    out.write_rows("calibration.csv", ["width_ns"] + list(PHASE_KEYS),
                   [[w] + list(p) for w, p in zip(cal.widths, cal.phases)])
    for q, d in drag.items():
        print(f"{q}: carrier {d['carrier_ghz']:.6f} GHz, amplitude {d['amplitude']:.5f} rad/ns, "
              f"drag {d['drag_coefficient']:.4f} ns, isolated F {d['isolated_fidelity']:.6f}")
    print("slopes (MHz): " + " ".join(f"{x / (2 * math.pi) * 1e3:+.2f}" for x in cal.slope)
          + f"  fit rms {cal.residual_rms:.2e} rad")
    return EXIT_OK


# --- sweeps ---------------------------------------------------------------------------

def _sweep_point(payload):
    cfg, probe, value = payload
    row = {"value": value, "status": "ok", "error": ""}
    try:
        ctx = context_for(cfg)
        if probe == "shifts":
            chi = ctx.shifts.at(ctx.defaults.op_freq)
            row.update({f"chi_{k[4:]}_ghz": float(x) for k, x in zip(PHASE_KEYS, chi)})
        elif probe == "pulse":
            sched = ctx.single_pulse_schedule(float(cfg["probe_width"]))
            ph, U = ctx.simulated_phases(sched)
            lk = leakage_report(U, ctx.idle_vectors)
            row.update({k: v for k, v in ph.to_dict().items()})
            row.update({f"loss_{i:03b}": float(lk.out_of_space[i] + lk.within_space[i])
                        for i in range(8)})
            row["leakage_total"] = lk.total
            row["leakage_out"] = lk.total_out
        else:
            plan = _plan(ctx, cfg)
            report, _ = _run_gate(ctx, cfg, plan, None, None)
            row["fidelity"] = report.fidelity
            row["duration_ns"] = plan.total_duration
            row["pi_slots"] = plan.n_pi_slots
            for i in range(4):
                row[f"tau{i + 1}_ns"] = plan.durations[i] if i < len(plan.durations) else 0.0
                row[f"k{i + 1}"] = plan.windings[i]
            row.update(report.phases.to_dict())
            row["leakage_out"] = report.leakage.total_out
            row["leakage_within"] = report.leakage.total_within
    except Exception as exc:  # recorded per point, the sweep continues
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
        if os.environ.get("CCPHASE_DEBUG"):
            traceback.print_exc()
    return row


def run_sweep(cfg: dict, workers: int = 1) -> List[dict]:
    sw = cfg["sweep"]
    if sw is None:
        raise ConfigError("scenario has no sweep section")
    vals = sweep_values(sw)
    probe = sw.get("probe", "gate")
    points = [(set_path(cfg, sw["parameter"], float(v)), probe, float(v)) for v in vals]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_point, points))
    return [_sweep_point(p) for p in points]


def cmd_sweep(cfg: dict, out: RunDir, args) -> int:
    rows = run_sweep(cfg, args.workers)
    keys: List[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    out.write_rows("sweep.csv", keys, [[r.get(k, "") for k in keys] for r in rows])
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} points ok")
    return EXIT_PARTIAL if failed else EXIT_OK


COMMANDS = {"spectrum": cmd_spectrum, "plan": cmd_plan, "gate": cmd_gate, "sweep": cmd_sweep,
            "calibrate": cmd_calibrate, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccphase", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="scenario JSON file (defaults to the reference device)")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")
        s.add_argument("--dt", type=float, help="simulation step in ps (overrides sim_rate)")
        s.add_argument("--dump-states", action="store_true",
                       help="write computational-state populations along the schedule")
        s.add_argument("--overwrite", action="store_true", help="allow a non-empty --out")
        if name == "simulate":
            s.add_argument("--plan", required=True, help="plan JSON written by 'plan'")
    return p


def load_config(path: Optional[str], dt_ps: Optional[float] = None) -> dict:
    raw = {}
    if path:
        with open(path) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("scenario must be a JSON object")
    cfg = resolve(raw)
    if dt_ps is not None:
        if dt_ps <= 0:
            raise ConfigError("--dt must be positive")
        cfg["pulses"]["sim_rate"] = 1e3 / dt_ps
    validate(cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        cfg = load_config(args.config, args.dt)
        if args.command == "sweep" and cfg["sweep"] is None:
            raise ConfigError("scenario has no sweep section")
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        out = RunDir(args.out, args.overwrite)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        code = COMMANDS[args.command](cfg, out, args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        out.manifest(args.command, cfg, started, "infeasible", {"error": str(exc)})
        return EXIT_INFEASIBLE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        out.manifest(args.command, cfg, started, "error", {"error": str(exc)})
        return EXIT_ERROR
    out.manifest(args.command, cfg, started, "partial" if code == EXIT_PARTIAL else "ok")
    return code


if __name__ == "__main__":
    sys.exit(main())
