"""End-to-end gate pipeline: calibrate, plan, render, evolve, report."""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from . import evolution as ev
from .hamiltonian import HamiltonianSet, assemble, dressed_states, track_adiabatic, computational_frequencies
from .hilbert import COUPLER, QUBITS, TWO_PI, DeviceSpec, ModeSpec, build_basis, computational_labels, default_device
from .metrics import (BITS, GateReport, channel_leakage, extract_phases, fidelity, leakage_report,
                      unwrap_to)
from .pulses import (ControlSchedule, DragPulseSpec, DriveSegment, FluxPulseSpec, FluxSegment,
                     drag_pulse, gaussian_area, render)
from .refocus import (QUBIT_NAMES, ChiCalibration, GatePlan, calibrate_chis, plan_gate)
from .shifts import PhaseVector, ShiftCurve, accumulated_phases, shift_curve


@dataclass
class PulseDefaults:
    idle_freq: float = 5.8
    op_freq: float = 4.5
    rise: float = 5.0
    pi_duration: float = 20.0
    pad: float = 2.0
    awg_rate: float = 2.4
    sim_rate: float = 30.0
    filter_sigma: float = 0.3
    calibration_widths: Tuple[float, ...] = (20.0, 35.0, 50.0, 65.0, 80.0)
    calibration_method: str = "simulate"  # or "integrate"
    max_winding: int = 4
    duration_floor: float = 20.0

    @classmethod
    def from_dict(cls, d) -> "PulseDefaults":
        d = dict(d)
        if "calibration_widths" in d:
            d["calibration_widths"] = tuple(d["calibration_widths"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass
class DragCalibration:
    qubit: str
    carrier: float  # GHz
    amplitude: float
    drag_coefficient: float
    isolated_fidelity: float


def isolated_transmon(frequency: float, anharmonicity: float, levels: int):
    """Hamiltonian (rad/ns) and drive operator of a single Kerr oscillator."""
    n = np.arange(levels)
    H = TWO_PI * np.diag(frequency * n + 0.5 * anharmonicity * n * (n - 1))
    a = np.diag(np.sqrt(np.arange(1, levels)), 1)
    return H, a + a.T


def isolated_pulse_unitary(H0, X, spec: DragPulseSpec, carrier: float, defaults: PulseDefaults,
                           start: float = 0.0):
    """Propagator of one DRAG pulse on an isolated transmon, same render path as the device."""
    sched = render([DriveSegment(start, spec, carrier)], duration=start + spec.duration,
                   awg_rate=defaults.awg_rate, sim_rate=defaults.sim_rate,
                   filter_sigma=defaults.filter_sigma)
    starts, h = ev.magnus_steps(sched, 0, sched.n_ticks)
    w, dts = ev.cf4_coefficients(lambda t: sched.drive_at(spec.target, t)[None], starts, h)
    U = ev.ordered_product(ev._expm_herm(0.5 * H0[None] + w[0][:, None, None] * X[None], dts))
    # move to the frame rotating with the bare levels
    return np.exp(1j * np.diag(H0) * sched.duration)[:, None] * U


def pi_pulse_fidelity(U: np.ndarray) -> float:
    """Average fidelity of the qubit block to X, up to free Z rotations on both sides."""
    return float(((abs(U[1, 0]) + abs(U[0, 1])) ** 2 + np.sum(np.abs(U[:2, :2]) ** 2)) / 6.0)


def calibrate_drag(qubit: str, frequency: float, anharmonicity: float, levels: int,
                   defaults: PulseDefaults, x0=None) -> DragCalibration:
    """Tune amplitude and DRAG coefficient on an isolated transmon by Nelder-Mead."""
    H0, X = isolated_transmon(frequency, anharmonicity, max(levels, 3))
    dur = defaults.pi_duration
    sigma = dur / 4.0
    if x0 is None:
        x0 = (np.pi / gaussian_area(dur, sigma), -1.0 / (TWO_PI * anharmonicity))

    def cost(x):
        spec = DragPulseSpec(qubit, dur, 0.0, x[0], x[1], 0.0, sigma)
        return 1.0 - pi_pulse_fidelity(isolated_pulse_unitary(H0, X, spec, frequency, defaults))

    res = minimize(cost, np.asarray(x0, float), method="Nelder-Mead",
                   options=dict(xatol=1e-9, fatol=1e-14, maxiter=600,
                                initial_simplex=_simplex(np.asarray(x0, float))))
    amp, beta = res.x
    return DragCalibration(qubit, frequency, float(amp), float(beta), 1.0 - float(res.fun))


def _simplex(x0):
    return np.array([x0, x0 * [1.01, 1.0] + [0, 0], x0 + [0.0, 0.05 * max(abs(x0[1]), 0.1)]])


class GateContext:
    """Cached device model shared by planning and simulation."""

    def __init__(self, spec: DeviceSpec | None = None, defaults: PulseDefaults | None = None,
                 grid=None):
        self.spec = spec or default_device()
        self.defaults = defaults or PulseDefaults()
        self.basis = build_basis(self.spec)
        self.h: HamiltonianSet = assemble(self.spec, self.basis)
        self.comp_labels = computational_labels(self.basis)
        self.grid = np.linspace(4.2, 6.2, 601) if grid is None else np.asarray(grid)
        e, v = dressed_states(self.h, self.defaults.idle_freq, self.comp_labels)
        self.idle_energies = e - e[0]  # rad/ns relative to ground
        self.idle_vectors = v
        self.qubit_freqs = {q: self.idle_energies[1 << (2 - k)] / TWO_PI
                            for k, q in enumerate(QUBITS)}

    # -- spectra ------------------------------------------------------------
    @functools.cached_property
    def track(self):
        return track_adiabatic(self.h, self.grid, idle_freq=self.defaults.idle_freq)

    @functools.cached_property
    def shifts(self) -> ShiftCurve:
        return shift_curve(computational_frequencies(self.track))

    # -- single-qubit pulses ---------------------------------------------------
    def dressed_anharmonicity(self, qubit: str) -> float:
        k = self.basis.mode_index(qubit)
        occ = [0] * len(self.basis.mode_labels)
        occ[k] = 2
        lab = tuple(occ)
        e, _ = dressed_states(self.h, self.defaults.idle_freq, [self.comp_labels[0], lab])
        return (e[1] - e[0]) / TWO_PI - 2 * self.qubit_freqs[qubit]

    @functools.cached_property
    def drag(self) -> Dict[str, DragCalibration]:
        out = {}
        for q in QUBITS:
            out[q] = calibrate_drag(q, self.qubit_freqs[q], self.dressed_anharmonicity(q),
                                    self.spec.mode(q).level_count, self.defaults)
        return out

    def pi_pulse(self, qubit: str, start: float) -> DriveSegment:
        c = self.drag[qubit]
        spec = DragPulseSpec(qubit, self.defaults.pi_duration, 0.0, c.amplitude,
                             c.drag_coefficient, 0.0, self.defaults.pi_duration / 4.0)
        return DriveSegment(start, spec, c.carrier)

    # -- schedules ----------------------------------------------------------------
    def flux_spec(self, width: float) -> FluxPulseSpec:
        d = self.defaults
        return FluxPulseSpec(width, d.rise, d.idle_freq, d.op_freq)

    def render(self, segments, duration=None) -> ControlSchedule:
        d = self.defaults
        return render(segments, duration, idle_freq=d.idle_freq, awg_rate=d.awg_rate,
                      sim_rate=d.sim_rate, filter_sigma=d.filter_sigma, pad=d.pad)

    def single_pulse_schedule(self, width: float) -> ControlSchedule:
        d = self.defaults
        return self.render([FluxSegment(d.pad, self.flux_spec(width))],
                           duration=width + 2 * d.pad)

    def plan_schedule(self, plan: GatePlan) -> ControlSchedule:
        entries, total = plan.timeline()
        segs = []
        for kind, t, payload in entries:
            if kind == "flux":
                segs.append(FluxSegment(t, self.flux_spec(payload)))
            else:
                segs.extend(self.pi_pulse(QUBIT_NAMES[q], t) for q in payload)
        return self.render(segs, duration=total)

    # -- frames and blocks ----------------------------------------------------------
    def rotating_frame(self, duration: float) -> np.ndarray:
        """Diagonal undoing the free single-qubit precession over ``duration``."""
        w = np.array([self.qubit_freqs[q] for q in QUBITS]) * TWO_PI
        return np.exp(1j * (BITS @ w) * duration)

    def block(self, U: np.ndarray, duration: float) -> np.ndarray:
        B = self.idle_vectors.conj().T @ U @ self.idle_vectors
        return self.rotating_frame(duration)[:, None] * B

    # -- chi calibration ------------------------------------------------------------
    def idle_rate(self) -> np.ndarray:
        return -TWO_PI * self.shifts.at(self.defaults.idle_freq)

    def integrated_phases(self, schedule: ControlSchedule) -> PhaseVector:
        t = np.linspace(0.0, schedule.duration, 2 * schedule.n_ticks + 1)
        return accumulated_phases(self.shifts, t, schedule.coupler_at(t))

    def simulated_phases(self, schedule: ControlSchedule, reference: PhaseVector | None = None):
        U = ev.unitary_evolve(self.h, schedule).unitary
        ph, _ = extract_phases(self.block(U, schedule.duration))
        ref = self.integrated_phases(schedule) if reference is None else reference
        return unwrap_to(ph, ref), U

    @functools.cached_property
    def chi_calibration(self) -> ChiCalibration:
        d = self.defaults
        pad_phase = lambda: self.idle_rate() * 2 * d.pad

        def probe(width):
            sched = self.single_pulse_schedule(width)
            if d.calibration_method == "integrate":
                ph = self.integrated_phases(sched)
            else:
                ph, _ = self.simulated_phases(sched)
            return PhaseVector.from_array(ph.as_array() - pad_phase())

        cal = calibrate_chis(probe, d.calibration_widths, idle_rate=self.idle_rate())
        if d.calibration_method != "integrate":
            for r in (1, 2, 3):
                for layer in itertools.combinations(range(3), r):
                    cal.layer_phases[frozenset(layer)] = self.layer_phase(layer)
        return cal

    def layer_phase(self, layer) -> np.ndarray:
        """Conditional phases of a simultaneous pi layer, as X_F D with D diagonal."""
        T = self.defaults.pi_duration
        sched = self.render([self.pi_pulse(QUBIT_NAMES[q], 0.0) for q in sorted(layer)], duration=T)
        B = self.block(ev.unitary_evolve(self.h, sched).unitary, T)
        mask = sum(1 << (2 - q) for q in layer)
        D = B[np.arange(8) ^ mask, :]
        ph, _ = extract_phases(D)
        return ph.as_array()

    # -- gates ----------------------------------------------------------------------
    def plan(self, target: PhaseVector, kind: str = "ccphase", pair=None, frames=None) -> GatePlan:
        d = self.defaults
        return plan_gate(target, self.chi_calibration, kind, pair, frames, d.max_winding,
                         d.duration_floor, d.pi_duration, d.pad)

    def run_plan(self, plan: GatePlan, noise: ev.NoiseModel | None = None,
                 noise_kinds=("relaxation", "dephasing"), schedule=None,
                 block_unitaries=None) -> GateReport:
        if schedule is None:
            schedule = self.plan_schedule(plan) if not plan.is_empty else self.render([], 0.0)
        T = schedule.duration
        reference = plan.predicted if not plan.is_empty else PhaseVector()
        if noise is None:
            U = ev.unitary_evolve(self.h, schedule).unitary
            B = self.block(U, T)
            ph, _ = extract_phases(B)
            F, z = fidelity(B, plan.target, return_angles=True)
            leak = leakage_report(U, self.idle_vectors)
            return GateReport(B, None, unwrap_to(ph, reference), ph, F, z, leak, plan.target,
                              plan.total_duration, {"plan": plan.to_dict()})
        channel, U = self.noisy_channel(schedule, noise, noise_kinds, block_unitaries)
        B = self.block(U, T)
        ph, _ = extract_phases(B)
        F, z = fidelity(channel, plan.target, return_angles=True)
        return GateReport(B, channel, unwrap_to(ph, reference), ph, F, z,
                          leakage_report(U, self.idle_vectors), plan.target, plan.total_duration,
                          {"plan": plan.to_dict(), "channel_leakage": channel_leakage(channel)})

    def noisy_channel(self, schedule: ControlSchedule, noise: ev.NoiseModel,
                      kinds=("relaxation", "dephasing"), block_unitaries=None, block_ticks: int = 15):
        ops = ev.collapse_operators(self.spec, noise, self.basis, kinds)
        if block_unitaries is None:
            block_unitaries = ev.block_propagators(self.h, schedule, block_ticks)
        U = np.eye(self.h.dimension, dtype=complex)
        for X in block_unitaries:
            U = X @ U
        R = self.rotating_frame(schedule.duration)

        def evaluator(batch):
            return ev.lindblad_evolve(self.h, schedule, ops, batch, method="split",
                                      block_ticks=block_ticks, block_unitaries=block_unitaries,
                                      validate=False)

        ch = ev.process_tomography(evaluator, self.idle_vectors)
        # apply the rotating frame: rho -> R rho R^dag on the subspace
        ch.superop = np.kron(np.diag(R), np.diag(R).conj()) @ ch.superop
        return ch, U

    def error_budget(self, plan: GatePlan, noise: ev.NoiseModel, schedule=None) -> Dict[str, float]:
        """Infidelity split into coherent, relaxation, dephasing and charge-noise parts.

        Each channel is switched on alone and its contribution is the excess over
        the coherent infidelity; ``additivity_residual`` compares the sum with
        the all-channels run.
        """
        if schedule is None:
            schedule = self.plan_schedule(plan)
        bu = ev.block_propagators(self.h, schedule)
        coherent = self.run_plan(plan, schedule=schedule).infidelity
        parts = {
            "relaxation": replace(noise, t_phi={}, charge_noise=0.0),
            "dephasing": replace(noise, t1={}, charge_noise=0.0),
            "charge": replace(noise, t1={}, t_phi={}),
        }
        out = {"coherent": coherent}
        for name, model in parts.items():
            if not ev.collapse_operators(self.spec, model, self.basis):
                out[name] = 0.0
                continue
            r = self.run_plan(plan, model, schedule=schedule, block_unitaries=bu)
            out[name] = r.infidelity - coherent
        total = self.run_plan(plan, noise, schedule=schedule, block_unitaries=bu).infidelity
        out["total"] = total
        out["sum_of_parts"] = coherent + out["relaxation"] + out["dephasing"] + out["charge"]
        out["additivity_residual"] = total - out["sum_of_parts"]
        return out

    def gate(self, target: PhaseVector, kind: str = "ccphase", pair=None,
             noise: ev.NoiseModel | None = None) -> GateReport:
        plan = self.plan(target, kind, pair)
        return self.run_plan(plan, noise)
