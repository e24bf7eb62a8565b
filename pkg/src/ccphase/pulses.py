"""Flux and microwave control waveforms with an AWG sampling and filter model.

Waveforms are defined analytically, sampled at the AWG rate at the centre of
each sample interval, held (zero-order hold) and smoothed with a Gaussian
filter.  Because the held signal is piecewise constant, the filtered signal is
a sum of error-function steps and can be evaluated exactly at any time.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.special import erf

from .hilbert import TWO_PI


@dataclass(frozen=True)
class FluxPulseSpec:
    width: float  # ns
    rise: float = 5.0  # ns
    idle_freq: float = 5.8  # GHz
    op_freq: float = 4.5  # GHz

    def __post_init__(self):
        if self.width <= 0 or self.rise <= 0:
            raise ValueError("flux pulse width and rise time must be positive")


def flux_pulse(spec: FluxPulseSpec, t) -> np.ndarray:
    """Flat-top pulse with error-function edges; zero deviation outside [0, width]."""
    if spec.width < 2 * spec.rise:
        warnings.warn(f"flux pulse width {spec.width} ns is shorter than twice the rise time",
                      stacklevel=2)
    t = np.asarray(t, dtype=float)
    shape = erf(t / spec.rise) * erf((spec.width - t) / spec.rise)
    inside = (t >= 0) & (t <= spec.width)
    return spec.idle_freq + (spec.op_freq - spec.idle_freq) * np.where(inside, shape, 0.0)


def gaussian_shape(t, duration: float, sigma: float):
    """Gaussian centred in [0, duration], shifted so it vanishes at both ends.

    Returns (g, dg/dt), both zero outside the window; peak of g is 1.
    """
    t = np.asarray(t, dtype=float)
    tc = 0.5 * duration
    floor = np.exp(-tc ** 2 / (2 * sigma ** 2))
    raw = np.exp(-(t - tc) ** 2 / (2 * sigma ** 2))
    g = (raw - floor) / (1.0 - floor)
    dg = -(t - tc) / sigma ** 2 * raw / (1.0 - floor)
    inside = (t >= 0) & (t <= duration)
    return np.where(inside, g, 0.0), np.where(inside, dg, 0.0)


def gaussian_area(duration: float, sigma: float) -> float:
    tc = 0.5 * duration
    floor = np.exp(-tc ** 2 / (2 * sigma ** 2))
    area = sigma * np.sqrt(2 * np.pi) * erf(tc / (np.sqrt(2) * sigma))
    return (area - floor * duration) / (1.0 - floor)


@dataclass(frozen=True)
class DragPulseSpec:
    """Gaussian pulse with a derivative quadrature.

    The complex envelope is amplitude * (g + i * drag_coefficient * dg/dt) * exp(i phase).
    ``amplitude`` is the peak Rabi rate in rad/ns; the default gives a pi rotation.
    ``drag_coefficient`` is in ns.
    """

    target: str
    duration: float = 20.0
    detuning: float = 0.0  # GHz, carrier offset from the dressed frequency
    amplitude: float | None = None
    drag_coefficient: float = 0.0
    phase: float = 0.0
    sigma: float | None = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("pulse duration must be positive")
        if self.sigma is None:
            object.__setattr__(self, "sigma", self.duration / 4.0)
        if self.amplitude is None:
            object.__setattr__(self, "amplitude", np.pi / gaussian_area(self.duration, self.sigma))


@dataclass(frozen=True)
class DriveWaveform:
    spec: DragPulseSpec
    carrier: float  # GHz

    def envelope(self, t) -> np.ndarray:
        """Complex envelope at times measured from the pulse start."""
        s = self.spec
        g, dg = gaussian_shape(t, s.duration, s.sigma)
        return s.amplitude * (g + 1j * s.drag_coefficient * dg) * np.exp(1j * s.phase)

    def rotation_angle(self) -> float:
        s = self.spec
        return float(s.amplitude * gaussian_area(s.duration, s.sigma))


def drag_pulse(spec: DragPulseSpec, dressed_freq: float) -> DriveWaveform:
    """Drive waveform with its carrier at the dressed qubit frequency plus detuning."""
    return DriveWaveform(spec, dressed_freq + spec.detuning)


# --- rendering ---------------------------------------------------------------

@dataclass(frozen=True)
class FluxSegment:
    start: float
    pulse: FluxPulseSpec

    @property
    def end(self) -> float:
        return self.start + self.pulse.width


@dataclass(frozen=True)
class DriveSegment:
    start: float
    pulse: DragPulseSpec
    carrier: float  # GHz

    @property
    def end(self) -> float:
        return self.start + self.pulse.duration

    @property
    def target(self) -> str:
        return self.pulse.target


def _filtered(samples: np.ndarray, dA: float, sigma: float, t: np.ndarray) -> np.ndarray:
    """Gaussian-filtered zero-order hold of ``samples`` (sample k spans [k dA, (k+1) dA))."""
    t = np.asarray(t, dtype=float)
    n = len(samples)
    if n == 0:
        return np.zeros(t.shape, dtype=samples.dtype)
    if sigma <= 0:
        k = np.floor(t / dA).astype(int)
        ok = (k >= 0) & (k < n)
        out = np.zeros(t.shape, dtype=samples.dtype)
        out[ok] = samples[k[ok]]
        return out
    m = int(np.ceil(9.0 * sigma / dA)) + 1
    base = np.floor(t / dA).astype(int)
    out = np.zeros(t.shape, dtype=np.result_type(samples, float))
    r = np.sqrt(2.0) * sigma
    for off in range(-m, m + 1):
        k = base + off
        ok = (k >= 0) & (k < n)
        if not ok.any():
            continue
        a = k[ok] * dA
        w = 0.5 * (erf((t[ok] - a) / r) - erf((t[ok] - a - dA) / r))
        out[ok] += w * samples[k[ok]]
    return out


@dataclass
class DriveChannel:
    carrier: float  # GHz
    samples: np.ndarray  # complex envelope, AWG rate


@dataclass
class ControlSchedule:
    duration: float
    idle_freq: float
    flux_samples: np.ndarray  # AWG-rate deviation from idle, GHz
    drives: Dict[str, DriveChannel]
    awg_rate: float = 2.4
    sim_rate: float = 30.0
    filter_sigma: float = 0.3
    segments: Tuple = ()

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration * self.sim_rate))

    @property
    def dt(self) -> float:
        n = self.n_ticks
        return self.duration / n if n else 0.0

    @property
    def times(self) -> np.ndarray:
        """Tick start times."""
        return np.arange(self.n_ticks) * self.dt

    def coupler_at(self, t) -> np.ndarray:
        return self.idle_freq + _filtered(self.flux_samples, 1.0 / self.awg_rate,
                                          self.filter_sigma, t)

    def envelope_at(self, qubit: str, t) -> np.ndarray:
        ch = self.drives.get(qubit)
        t = np.asarray(t, dtype=float)
        if ch is None:
            return np.zeros(t.shape, dtype=complex)
        return _filtered(ch.samples, 1.0 / self.awg_rate, self.filter_sigma, t)

    def drive_at(self, qubit: str, t) -> np.ndarray:
        """Real drive amplitude Omega(t) in rad/ns: Re[envelope * exp(-i 2 pi f t)]."""
        t = np.asarray(t, dtype=float)
        ch = self.drives.get(qubit)
        if ch is None:
            return np.zeros(t.shape)
        env = self.envelope_at(qubit, t)
        return np.real(env * np.exp(-1j * TWO_PI * ch.carrier * t))

    @property
    def coupler_freq_samples(self) -> np.ndarray:
        return self.coupler_at(self.times + 0.5 * self.dt)

    def drive_samples(self, qubit: str) -> np.ndarray:
        return self.envelope_at(qubit, self.times + 0.5 * self.dt)

    def to_csv(self, path):
        tm = self.times + 0.5 * self.dt
        wc = self.coupler_at(tm)
        qs = sorted(self.drives)
        env = {q: self.envelope_at(q, tm) for q in qs}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_ns", "coupler_freq_ghz"]
                       + [f"{q}_{c}" for q in qs for c in ("i", "q")])
            for k in range(len(tm)):
                row = [f"{tm[k]:.6f}", f"{wc[k]:.10g}"]
                for q in qs:
                    row += [f"{env[q][k].real:.8g}", f"{env[q][k].imag:.8g}"]
                w.writerow(row)


def _check_overlaps(segs, name):
    segs = sorted(segs, key=lambda s: s.start)
    for a, b in zip(segs[:-1], segs[1:]):
        if b.start < a.end - 1e-9:
            raise ValueError(f"overlapping segments on channel {name}: "
                             f"[{a.start}, {a.end}] and [{b.start}, {b.end}]")


def render(segments: Sequence, duration: float | None = None, *, idle_freq: float | None = None,
           awg_rate: float = 2.4, sim_rate: float = 30.0, filter_sigma: float = 0.3,
           pad: float = 2.0) -> ControlSchedule:
    """Sample the segments on the AWG grid and wrap them in a filtered schedule.

    Without ``duration`` the schedule ends ``pad`` ns after the last segment.
    """
    segments = list(segments)
    flux = [s for s in segments if isinstance(s, FluxSegment)]
    drive = [s for s in segments if isinstance(s, DriveSegment)]
    if len(flux) + len(drive) != len(segments):
        raise TypeError("segments must be FluxSegment or DriveSegment instances")
    if any(s.start < 0 for s in segments):
        raise ValueError("segments must start at t >= 0")
    _check_overlaps(flux, "coupler")
    for q in {s.target for s in drive}:
        _check_overlaps([s for s in drive if s.target == q], q)
    if idle_freq is None:
        idle_freq = flux[0].pulse.idle_freq if flux else 5.8
    if any(abs(s.pulse.idle_freq - idle_freq) > 1e-12 for s in flux):
        raise ValueError("all flux segments must share the idle frequency")
    end = max((s.end for s in segments), default=0.0)
    if duration is None:
        duration = end + pad if segments else 0.0
    if duration < end - 1e-9:
        raise ValueError("duration shorter than the last segment")

    dA = 1.0 / awg_rate
    n_awg = int(np.ceil(duration / dA - 1e-9))
    tc = (np.arange(n_awg) + 0.5) * dA
    fs = np.zeros(n_awg)
    for s in flux:
        ok = (tc >= s.start) & (tc <= s.end)
        fs[ok] += flux_pulse(s.pulse, tc[ok] - s.start) - s.pulse.idle_freq
    drives: Dict[str, DriveChannel] = {}
    for s in drive:
        ch = drives.get(s.target)
        if ch is None:
            ch = drives[s.target] = DriveChannel(s.carrier, np.zeros(n_awg, dtype=complex))
        ok = (tc >= s.start) & (tc <= s.end)
        env = drag_pulse(s.pulse, s.carrier - s.pulse.detuning).envelope(tc[ok] - s.start)
        if s.carrier != ch.carrier:
            # re-reference to the channel carrier
            env = env * np.exp(-1j * TWO_PI * (s.carrier - ch.carrier) * tc[ok])
        ch.samples[ok] += env
    return ControlSchedule(float(duration), float(idle_freq), fs, drives, awg_rate, sim_rate,
                           filter_sigma, tuple(segments))
