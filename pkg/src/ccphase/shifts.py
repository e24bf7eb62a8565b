"""Conditional energy shifts and accumulated entangling phases."""
from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline

from .hamiltonian import AdiabaticFrequencies
from .hilbert import TWO_PI

CHI_NAMES = ("chi_011", "chi_101", "chi_110", "chi_ccp")


@dataclass
class ShiftCurve:
    grid: np.ndarray  # GHz
    chi_011: np.ndarray  # GHz
    chi_101: np.ndarray
    chi_110: np.ndarray
    chi_ccp: np.ndarray

    def stack(self) -> np.ndarray:
        return np.vstack([self.chi_011, self.chi_101, self.chi_110, self.chi_ccp])

    def __post_init__(self):
        self._spline = None

    def interpolate(self, w) -> np.ndarray:
        """Cubic interpolation, shape (4, len(w)); raises outside the grid."""
        w = np.atleast_1d(np.asarray(w, dtype=float))
        lo, hi = self.grid[0], self.grid[-1]
        tol = 1e-9
        if w.size and (w.min() < lo - tol or w.max() > hi + tol):
            raise ValueError(f"coupler trajectory leaves the grid [{lo}, {hi}] GHz")
        if len(self.grid) == 1:
            return np.repeat(self.stack(), len(w), axis=1)
        if self._spline is None:
            self._spline = CubicSpline(self.grid, self.stack(), axis=1)
        return self._spline(np.clip(w, lo, hi))

    def at(self, w: float) -> np.ndarray:
        return self.interpolate([w])[:, 0]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["coupler_freq_ghz"] + [n + "_ghz" for n in CHI_NAMES])
            for k, x in enumerate(self.grid):
                wr.writerow([f"{x:.9g}"] + [f"{c[k]:.12g}" for c in self.stack()])


@dataclass(frozen=True)
class PhaseVector:
    """Entangling phases in radians (accumulated, not wrapped)."""

    phi_011: float = 0.0
    phi_101: float = 0.0
    phi_110: float = 0.0
    phi_ccp: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.phi_011, self.phi_101, self.phi_110, self.phi_ccp])

    @classmethod
    def from_array(cls, a) -> "PhaseVector":
        a = np.asarray(a, dtype=float)
        return cls(*map(float, a[:4]))

    def __add__(self, other: "PhaseVector") -> "PhaseVector":
        return PhaseVector.from_array(self.as_array() + other.as_array())

    def __sub__(self, other: "PhaseVector") -> "PhaseVector":
        return PhaseVector.from_array(self.as_array() - other.as_array())

    def wrapped(self) -> "PhaseVector":
        return PhaseVector.from_array(wrap(self.as_array()))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def wrap(x):
    """Map angles into (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, TWO_PI) - np.pi
    return np.where(y == -np.pi, np.pi, y)


def shift_curve(freqs: AdiabaticFrequencies) -> ShiftCurve:
    c = freqs.curves
    need = [(a, b, d) for a in (0, 1) for b in (0, 1) for d in (0, 1)]
    missing = [k for k in need if k not in c]
    if missing:
        raise ValueError(f"missing computational curves {missing}")
    w100, w010, w001 = c[(1, 0, 0)], c[(0, 1, 0)], c[(0, 0, 1)]
    chi_011 = c[(0, 1, 1)] - (w001 + w010)
    chi_101 = c[(1, 0, 1)] - (w001 + w100)
    chi_110 = c[(1, 1, 0)] - (w010 + w100)
    chi_ccp = c[(1, 1, 1)] - (w001 + w010 + w100) - (chi_011 + chi_101 + chi_110)
    return ShiftCurve(np.asarray(freqs.grid, float).copy(), chi_011, chi_101, chi_110, chi_ccp)


def accumulated_phases(curve: ShiftCurve, times, trajectory) -> PhaseVector:
    """phi_j = -2 pi * integral chi_j(w_c(t)) dt with Simpson quadrature.

    ``times`` in ns, ``trajectory`` the coupler frequency in GHz on those times.
    """
    t = np.asarray(times, dtype=float)
    w = np.asarray(trajectory, dtype=float)
    if t.shape != w.shape:
        raise ValueError("times and trajectory must have the same shape")
    if t.size < 2 or t[-1] == t[0]:
        if w.size:
            curve.interpolate(w)
        return PhaseVector()
    chi = curve.interpolate(w)
    return PhaseVector.from_array(-TWO_PI * simpson(chi, x=t, axis=1))
