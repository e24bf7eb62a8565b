"""Refocused CPHASE / CCPHASE synthesis.

A frame is a string over {I, X}, one character per qubit (Q1 Q2 Q3).  During a
flux segment in frame f the conditional Hamiltonian is conjugated by X on the
flipped qubits.  Coefficient rows are ordered (H23, H13, H12, HCCP), which map
to the phases (phi_011, phi_101, phi_110, phi_ccp); columns are the shifts
(chi_011, chi_101, chi_110, chi_ccp) of the unconjugated Hamiltonian.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from .shifts import PhaseVector

FRAMES = tuple("".join(p) for p in itertools.product("IX", repeat=3))
PAIRS = ((1, 2), (0, 2), (0, 1))  # qubit indices of H23, H13, H12
CCPHASE_FRAMES = ("III", "IXI", "XXI", "IXX")
QUBIT_NAMES = ("q1", "q2", "q3")


class InfeasibleError(RuntimeError):
    pass


def _check_frame(frame: str) -> str:
    if len(frame) != 3 or any(c not in "IX" for c in frame):
        raise ValueError(f"invalid frame {frame!r}")
    return frame


def flips(frame: str) -> frozenset:
    return frozenset(i for i, c in enumerate(_check_frame(frame)) if c == "X")


def frame_from_flips(qs) -> str:
    return "".join("X" if i in qs else "I" for i in range(3))


def _z_expansion(term):
    """Z-string coefficients of n_k n_l (pairs) or n1 n2 n3, with n = (1 - Z)/2."""
    qubits = term
    out: Dict[frozenset, Fraction] = {}
    for subset_len in range(len(qubits) + 1):
        for sub in itertools.combinations(qubits, subset_len):
            out[frozenset(sub)] = Fraction((-1) ** subset_len, 2 ** len(qubits))
    return out


def _to_zz(coeffs) -> Dict[frozenset, Fraction]:
    """Z-string expansion of sum_j coeffs[j] H_j, keeping only two- and three-body strings."""
    terms = [PAIRS[0], PAIRS[1], PAIRS[2], (0, 1, 2)]
    acc: Dict[frozenset, Fraction] = {}
    for c, t in zip(coeffs, terms):
        for z, v in _z_expansion(t).items():
            if len(z) >= 2:
                acc[z] = acc.get(z, Fraction(0)) + c * v
    return acc


def _from_zz(zz: Dict[frozenset, Fraction]) -> List[Fraction]:
    """Inverse of ``_to_zz`` on the span of two- and three-body Z strings."""
    zzz = zz.get(frozenset({0, 1, 2}), Fraction(0))
    c_ccp = -8 * zzz
    out = []
    for p in PAIRS:
        out.append(4 * (zz.get(frozenset(p), Fraction(0)) - c_ccp / 8))
    return out + [c_ccp]


def conjugate_frame(frame: str) -> np.ndarray:
    """Integer 4x4 matrix giving the conjugated coefficients in terms of the chis.

    X on qubit k maps Z_k -> -Z_k.  Single-qubit and global terms are dropped,
    as they are absorbed into virtual Z rotations.
    """
    fl = flips(frame)
    M = np.zeros((4, 4), dtype=int)
    for col in range(4):
        unit = [Fraction(int(j == col)) for j in range(4)]
        zz = _to_zz(unit)
        conj = {z: v * (-1) ** len(z & fl) for z, v in zz.items()}
        coeffs = _from_zz(conj)
        for row, c in enumerate(coeffs):
            if c.denominator != 1:
                raise ArithmeticError("non-integer conjugation coefficient")
            M[row, col] = int(c)
    return M


# Stored table: rows (H23, H13, H12, HCCP) as combinations of (chi_011, chi_101, chi_110, chi_ccp).
SIGN_TABLE = {
    "III": [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]],
    "IXI": [[-1, 0, 0, 0], [0, 1, 0, 1], [0, 0, -1, 0], [0, 0, 0, -1]],
    "XXI": [[-1, 0, 0, -1], [0, -1, 0, -1], [0, 0, 1, 0], [0, 0, 0, 1]],
    "IXX": [[1, 0, 0, 0], [0, -1, 0, -1], [0, 0, -1, -1], [0, 0, 0, 1]],
    "XII": [[1, 0, 0, 1], [0, -1, 0, 0], [0, 0, -1, 0], [0, 0, 0, -1]],
    "IIX": [[-1, 0, 0, 0], [0, -1, 0, 0], [0, 0, 1, 1], [0, 0, 0, -1]],
    "XIX": [[-1, 0, 0, -1], [0, 1, 0, 0], [0, 0, -1, -1], [0, 0, 0, 1]],
    "XXX": [[1, 0, 0, 1], [0, 1, 0, 1], [0, 0, 1, 1], [0, 0, 0, -1]],
}


def sign_table() -> Dict[str, np.ndarray]:
    return {f: conjugate_frame(f) for f in FRAMES}


# --- calibration ---------------------------------------------------------------

@dataclass
class ChiCalibration:
    """Phase model of a single flux pulse of width tau: phi(tau) = slope * tau + offset.

    ``idle_rate`` is the phase rate (rad/ns) with the coupler parked at idle;
    it accounts for padding and, when no measured ``layer_phases`` exist, for
    the refocusing slots.  ``layer_phases`` maps a set of flipped qubits to the
    conditional phases of that pi layer, written as X_F D with D diagonal in the
    labels before the layer.
    """

    slope: np.ndarray  # rad/ns, order (011, 101, 110, ccp)
    offset: np.ndarray  # rad
    idle_rate: np.ndarray  # rad/ns
    widths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    phases: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    residual_rms: float = 0.0
    layer_phases: Dict[frozenset, np.ndarray] = field(default_factory=dict)

    def pulse_phase(self, width: float) -> np.ndarray:
        return self.slope * width + self.offset

    def to_dict(self) -> dict:
        return dict(slope=self.slope.tolist(), offset=self.offset.tolist(),
                    idle_rate=self.idle_rate.tolist(), widths=self.widths.tolist(),
                    phases=self.phases.tolist(), residual_rms=self.residual_rms,
                    layer_phases={"".join(QUBIT_NAMES[q] for q in sorted(k)): v.tolist()
                                  for k, v in self.layer_phases.items()})


def calibrate_chis(phase_probe: Callable[[float], PhaseVector], widths: Sequence[float],
                   idle_rate=None, max_residual: float = 1e-2) -> ChiCalibration:
    """Fit accumulated (unwrapped) phases of single flux pulses linearly in width."""
    w = np.asarray(widths, dtype=float)
    if len(w) < 2:
        raise ValueError("need at least two widths for a linear fit")
    P = np.array([phase_probe(x).as_array() for x in w])
    A = np.vstack([w, np.ones_like(w)]).T
    coef, *_ = np.linalg.lstsq(A, P, rcond=None)
    resid = P - A @ coef
    rms = float(np.sqrt(np.mean(resid ** 2)))
    if rms > max_residual:
        raise RuntimeError(f"phase fit residual {rms:.3g} rad exceeds {max_residual}")
    idle = np.zeros(4) if idle_rate is None else np.asarray(idle_rate, dtype=float)
    return ChiCalibration(coef[0], coef[1], idle, w, P, rms)


# --- planning -----------------------------------------------------------------

@dataclass
class GatePlan:
    frames: Tuple[str, ...]
    durations: Tuple[float, ...]  # flux pulse widths, ns
    pi_layers: Tuple[frozenset, ...]  # qubits flipped before segment j (last: after final segment)
    windings: Tuple[int, ...]
    target: PhaseVector
    predicted: PhaseVector  # unwrapped prediction
    pi_duration: float = 20.0
    pad: float = 2.0

    @property
    def n_pi_pulses(self) -> int:
        return sum(len(l) for l in self.pi_layers)

    @property
    def n_pi_slots(self) -> int:
        return sum(1 for l in self.pi_layers if l)

    @property
    def is_empty(self) -> bool:
        return not self.frames

    @property
    def total_duration(self) -> float:
        """Flux time plus refocusing slots (padding excluded)."""
        return float(sum(self.durations) + self.pi_duration * self.n_pi_slots)

    def timeline(self):
        """(kind, start, payload) entries: ('pi', t, qubits) and ('flux', t, width)."""
        t = self.pad
        out = []
        for j, layer in enumerate(self.pi_layers):
            if layer:
                out.append(("pi", t, tuple(sorted(layer))))
                t += self.pi_duration
            if j < len(self.durations):
                out.append(("flux", t, self.durations[j]))
                t += self.durations[j]
        return out, t + self.pad

    def to_dict(self) -> dict:
        return dict(
            frames=list(self.frames), durations_ns=list(self.durations),
            pi_layers=[[QUBIT_NAMES[q] for q in sorted(l)] for l in self.pi_layers],
            windings=list(self.windings), target=self.target.to_dict(),
            predicted=self.predicted.to_dict(), n_pi_pulses=self.n_pi_pulses,
            total_duration_ns=self.total_duration, pi_duration_ns=self.pi_duration,
            pad_ns=self.pad,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "GatePlan":
        name_to_q = {n: i for i, n in enumerate(QUBIT_NAMES)}
        return cls(tuple(d["frames"]), tuple(d["durations_ns"]),
                   tuple(frozenset(name_to_q[n] for n in l) for l in d["pi_layers"]),
                   tuple(d["windings"]), PhaseVector(**d["target"]),
                   PhaseVector(**d["predicted"]), d.get("pi_duration_ns", 20.0),
                   d.get("pad_ns", 2.0))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path) -> "GatePlan":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def pi_layers_for(frames: Sequence[str]) -> Tuple[frozenset, ...]:
    """Leading flips, boundary flips (XOR of neighbouring frames, so repeats cancel), trailing flips."""
    if not frames:
        return ()
    fl = [flips(f) for f in frames]
    layers = [fl[0]]
    for a, b in zip(fl[:-1], fl[1:]):
        layers.append(a ^ b)
    layers.append(fl[-1])
    return tuple(layers)


def _idle_phase(frames, cal: ChiCalibration, pi_duration: float, pad: float) -> np.ndarray:
    """Phase accumulated outside the flux segments: padding plus refocusing layers."""
    if not frames:
        return np.zeros(4)
    out = conjugate_frame("III") @ cal.idle_rate * (2 * pad)
    state = frozenset()
    for layer in pi_layers_for(frames):
        if not layer:
            continue
        new = state ^ layer
        if layer in cal.layer_phases:
            out = out + conjugate_frame(frame_from_flips(state)) @ cal.layer_phases[layer]
        else:
            for st in (state, new):
                out = out + conjugate_frame(frame_from_flips(st)) @ cal.idle_rate * (0.5 * pi_duration)
        state = new
    return out


def predict_phases(frames: Sequence[str], durations: Sequence[float], cal: ChiCalibration,
                   pi_duration: float = 20.0, pad: float = 2.0) -> np.ndarray:
    out = _idle_phase(frames, cal, pi_duration, pad)
    for f, tau in zip(frames, durations):
        out = out + conjugate_frame(f) @ cal.pulse_phase(tau)
    return out


def solve_durations(cal: ChiCalibration, targets: PhaseVector, frames: Sequence[str] = CCPHASE_FRAMES,
                    max_winding: int = 4, duration_floor: float = 20.0,
                    pi_duration: float = 20.0, pad: float = 2.0):
    """Solve the 4x4 phase-matching system over all winding vectors |k| <= max_winding.

    Returns (durations, windings, predicted phases).  The objective is the total
    flux time; ties go to the smaller max |k|.
    """
    frames = tuple(_check_frame(f) for f in frames)
    if len(frames) != 4:
        raise ValueError("the three-qubit system needs four frames")
    C = [conjugate_frame(f) for f in frames]
    M = np.column_stack([c @ cal.slope for c in C])
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e12:
        raise InfeasibleError(f"singular frame matrix (condition number {cond:.3g})")
    const = _idle_phase(frames, cal, pi_duration, pad) + sum(c @ cal.offset for c in C)
    tgt = np.mod(targets.as_array(), 2 * np.pi)
    ks = np.array(list(itertools.product(range(-max_winding, max_winding + 1), repeat=4)))
    rhs = tgt[None, :] + 2 * np.pi * ks - const[None, :]
    taus = np.linalg.solve(M, rhs.T).T
    ok = np.all(taus >= duration_floor, axis=1)
    if not ok.any():
        raise InfeasibleError(f"no winding vector with |k| <= {max_winding} gives durations "
                              f">= {duration_floor} ns")
    tot = taus.sum(axis=1)
    kmax = np.abs(ks).max(axis=1)
    cand = np.nonzero(ok)[0]
    best = cand[np.lexsort((kmax[cand], np.round(tot[cand], 9)))[0]]
    tau = taus[best]
    pred = predict_phases(frames, tau, cal, pi_duration, pad)
    return tuple(float(x) for x in tau), tuple(int(x) for x in ks[best]), pred


def pair_spectator(pair: Tuple[int, int]) -> int:
    (spec,) = set(range(3)) - set(pair)
    return spec


def _pair_row(pair: Tuple[int, int]) -> int:
    return PAIRS.index(tuple(sorted(pair)))


def plan_gate(targets: PhaseVector, cal: ChiCalibration, kind: str = "ccphase",
              pair: Tuple[int, int] | None = None, frames: Sequence[str] | None = None,
              max_winding: int = 4, duration_floor: float = 20.0,
              pi_duration: float = 20.0, pad: float = 2.0) -> GatePlan:
    """Plan a refocused gate.

    ``kind="ccphase"`` solves the four-frame system for arbitrary targets.
    ``kind="generalized"`` does the same but never returns the empty plan, so a
    zero target is realized by a full refocused sequence with non-zero windings.
    ``kind="cphase"`` uses two equal segments in frames (III, X on the spectator),
    which cancels every term except H_kl; only that pair's target is used.
    An all-zero target yields the empty plan.
    """
    tgt_wrapped = np.mod(targets.as_array(), 2 * np.pi)
    if kind == "generalized":
        kind = "ccphase"
    elif np.allclose(np.minimum(tgt_wrapped, 2 * np.pi - tgt_wrapped), 0.0, atol=1e-12):
        return GatePlan((), (), (), (0, 0, 0, 0), targets, PhaseVector(), pi_duration, pad)
    if kind == "ccphase":
        frames = tuple(frames or CCPHASE_FRAMES)
        tau, ks, pred = solve_durations(cal, targets, frames, max_winding, duration_floor,
                                        pi_duration, pad)
        return GatePlan(frames, tau, pi_layers_for(frames), ks, targets,
                        PhaseVector.from_array(pred), pi_duration, pad)
    if kind == "cphase":
        if pair is None:
            raise ValueError("cphase needs a qubit pair")
        pair = tuple(sorted(pair))
        row = _pair_row(pair)
        fr = ("III", frame_from_flips({pair_spectator(pair)}))
        C = conjugate_frame(fr[0]) + conjugate_frame(fr[1])
        rate = (C @ cal.slope)[row]
        off = (C @ cal.offset)[row] + _idle_phase(fr, cal, pi_duration, pad)[row]
        phi = tgt_wrapped[row]
        best = None
        for k in range(-max_winding, max_winding + 1):
            tau = (phi + 2 * np.pi * k - off) / rate
            if tau >= duration_floor and (best is None or tau < best[0]):
                best = (tau, k)
        if best is None:
            raise InfeasibleError("no feasible duration for the CPHASE target")
        tau, k = best
        ks = [0, 0, 0, 0]
        ks[row] = k
        pred = predict_phases(fr, (tau, tau), cal, pi_duration, pad)
        tv = np.zeros(4)
        tv[row] = targets.as_array()[row]
        return GatePlan(fr, (float(tau), float(tau)), pi_layers_for(fr), tuple(ks),
                        PhaseVector.from_array(tv), PhaseVector.from_array(pred), pi_duration, pad)
    raise ValueError(f"unknown gate kind {kind!r}")
