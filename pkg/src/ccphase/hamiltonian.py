"""System Hamiltonian, diagonalization and adiabatic state tracking.

Energies inside matrices are angular (rad/ns).  Spectra reported by
``SpectrumTrack`` and ``AdiabaticFrequencies`` are in GHz.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .hilbert import (COUPLER, QUBITS, TWO_PI, BareLabel, DeviceSpec,
                      TruncatedBasis, build_basis, computational_labels)

FREQ_WINDOW = (3.0, 7.0)
AMBIGUITY_TOL = 1e-3


class TrackingError(RuntimeError):
    pass


@dataclass(frozen=True)
class HamiltonianSet:
    """H(w_c) = h0_fixed + w_c * coupler_number, with w_c in GHz.

    ``coupler_number`` already carries the factor 2*pi.  ``drive_ops`` maps each
    qubit to its (a^dag + a) operator; a drive amplitude Omega in rad/ns enters
    as Omega * drive_ops[q].
    """

    spec: DeviceSpec
    basis: TruncatedBasis
    h0_fixed: np.ndarray
    coupler_number: np.ndarray
    drive_ops: Dict[str, np.ndarray]
    lowering: Dict[str, np.ndarray] = field(repr=False)

    @property
    def dimension(self) -> int:
        return len(self.basis)

    def at(self, coupler_freq: float) -> np.ndarray:
        return self.h0_fixed + coupler_freq * self.coupler_number


def assemble(spec: DeviceSpec, basis: TruncatedBasis | None = None) -> HamiltonianSet:
    """Build the Hamiltonian pieces.

    Every operator product is formed on the untruncated product space and only
    then restricted, so terms such as a^dag a^dag a a keep their intermediate states.
    """
    if basis is None:
        basis = build_basis(spec)
    if basis.mode_labels != spec.mode_labels or basis.level_counts != spec.levels:
        raise ValueError("basis was not built from this spec")
    if COUPLER not in spec.mode_labels:
        raise ValueError("spec needs a coupler mode")

    a = {m.label: basis.product_lowering(m.label) for m in spec.modes}
    dim_full = next(iter(a.values())).shape[0]
    h = np.zeros((dim_full, dim_full))
    for m in spec.modes:
        op = a[m.label]
        n = op.T @ op
        if m.label != COUPLER:
            h += m.frequency * n
        h += 0.5 * m.anharmonicity * (op.T @ op.T @ op @ op)
    for (p, q), g in spec.couplings.items():
        if g == 0.0:
            continue
        if spec.coupling_form == "exchange":
            h += g * (a[p].T @ a[q] + a[p] @ a[q].T)
        else:
            h -= g * (a[p].T - a[p]) @ (a[q].T - a[q])
    nc = a[COUPLER].T @ a[COUPLER]

    h0 = TWO_PI * basis.project(h)
    h0 = 0.5 * (h0 + h0.T)
    ncp = TWO_PI * basis.project(nc)
    lowering = {k: basis.project(v) for k, v in a.items()}
    drives = {q: basis.project(a[q] + a[q].T) for q in spec.mode_labels if q != COUPLER}
    return HamiltonianSet(spec, basis, h0, ncp, drives, lowering)


def eigensolve(h: HamiltonianSet, coupler_freq: float):
    """Ascending eigenvalues (rad/ns) and orthonormal eigenvectors of H(w_c)."""
    lo, hi = FREQ_WINDOW
    if not lo <= coupler_freq <= hi:
        raise ValueError(f"coupler frequency {coupler_freq} GHz outside [{lo}, {hi}]")
    H = h.at(coupler_freq)
    try:
        e, v = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed at w_c={coupler_freq}") from exc
    if not (np.all(np.isfinite(e)) and np.all(np.isfinite(v))):
        raise RuntimeError(f"non-finite eigensystem at w_c={coupler_freq}")
    return e, v


def dressed_assignment(vectors: np.ndarray) -> np.ndarray:
    """Eigenvector index for each bare basis row by maximal one-to-one overlap."""
    rows, cols = linear_sum_assignment(-np.abs(vectors))
    out = np.empty(vectors.shape[0], dtype=int)
    out[rows] = cols
    return out


def dressed_states(h: HamiltonianSet, coupler_freq: float, labels: Sequence[BareLabel]):
    """Eigenenergies (rad/ns) and eigenvectors of ``labels`` at a fixed coupler frequency."""
    e, v = eigensolve(h, coupler_freq)
    assign = dressed_assignment(v)
    idx = [assign[h.basis.index[lab]] for lab in labels]
    vecs = v[:, idx].copy()
    # fix the gauge: bare component real positive
    rows = [h.basis.index[lab] for lab in labels]
    ph = vecs[rows, np.arange(len(rows))]
    vecs *= np.conj(ph / np.abs(ph))
    return e[idx], vecs


@dataclass(frozen=True)
class DiabaticEvent:
    interval: Tuple[float, float]  # grid interval containing the fitted minimum
    location: float  # fitted crossing position (GHz), NaN if unresolved
    labels: Tuple[BareLabel, BareLabel]  # dominant bare character of the crossing pair
    gap: float  # minimum gap (GHz); upper bound for unresolved events
    resolved: bool = True
    branches: Tuple[BareLabel, BareLabel] | None = None  # labels carried in from idle


@dataclass
class SpectrumTrack:
    grid: np.ndarray  # GHz ascending
    eigenvalues: np.ndarray  # (n_grid, dim) GHz ascending per row
    tracked: Tuple[BareLabel, ...]
    adiabatic_map: np.ndarray  # (n_grid, n_tracked) eigen index per tracked label
    diabatic_events: List[DiabaticEvent]
    idle_index: int

    def energy(self, label: BareLabel) -> np.ndarray:
        j = self.tracked.index(label)
        return self.eigenvalues[np.arange(len(self.grid)), self.adiabatic_map[:, j]]

    def map_at(self, k: int) -> Dict[BareLabel, int]:
        return {lab: int(self.adiabatic_map[k, j]) for j, lab in enumerate(self.tracked)}

    def to_csv(self, path):
        cols = [self.energy(lab) for lab in self.tracked]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["coupler_freq_ghz"] + [label_name(l) for l in self.tracked])
            for k, x in enumerate(self.grid):
                w.writerow([f"{x:.9g}"] + [f"{c[k]:.12g}" for c in cols])


def label_name(label: BareLabel) -> str:
    return "|" + str(label[0]) + "," + "".join(str(n) for n in label[1:]) + ">"


def track_adiabatic(h: HamiltonianSet, grid, diabatic_gap_threshold: float = 0.010,
                    labels: Sequence[BareLabel] | None = None,
                    idle_freq: float | None = None) -> SpectrumTrack:
    """Follow eigenstates outward from the idle point by overlap continuation.

    Adjacent curves whose fitted minimum gap lies below the threshold are
    passed diabatically: their labels are exchanged beyond the fitted crossing.
    Only pairs involving a tracked label are considered.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0:
        raise ValueError("grid must be a non-empty 1-D array")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly ascending")
    basis = h.basis
    if labels is None:
        labels = computational_labels(basis)
    labels = tuple(tuple(l) for l in labels)
    for lab in labels:
        if lab not in basis.index:
            raise ValueError(f"label {lab} not in basis")
    if idle_freq is None:
        idle_freq = h.spec.mode(COUPLER).frequency
    n, d = len(grid), len(basis)

    E = np.empty((n, d))
    V = np.empty((n, d, d), dtype=np.result_type(h.h0_fixed, h.coupler_number))
    for k, w in enumerate(grid):
        E[k], V[k] = eigensolve(h, w)
    nc = h.coupler_number / TWO_PI

    k0 = int(np.argmin(np.abs(grid - idle_freq)))
    # adiabatic map for every bare label: A[k, bare] = eigen index
    A = np.empty((n, d), dtype=int)
    A[k0] = dressed_assignment(V[k0])
    tracked_rows = np.array([basis.index[l] for l in labels])

    events: List[Tuple[int, float, int, int, float, bool, Tuple[float, float]]] = []
    for step in (1, -1):
        ks = list(range(k0, n)) if step == 1 else list(range(k0, -1, -1))
        for k, kn in zip(ks[:-1], ks[1:]):
            O = np.abs(V[k].conj().T @ V[kn])
            r, c = linear_sum_assignment(-O)
            nxt = np.empty(d, dtype=int)
            nxt[r] = c
            A[kn] = nxt[A[k]]
            for row in tracked_rows:
                e = A[k, row]
                s = np.sort(O[e])[::-1]
                if s[1] > 0.1 and s[0] - s[1] < AMBIGUITY_TOL:
                    raise TrackingError(
                        f"ambiguous continuation of {basis.labels[row]} at w_c={grid[kn]:.6f} GHz")
        events.extend(_find_crossings(grid, E, V, A, nc, ks, diabatic_gap_threshold, step))

    # apply label exchanges in order of distance from idle
    final = np.empty((n, len(labels)), dtype=int)
    recorded: List[DiabaticEvent] = []
    for step in (1, -1):
        ks = list(range(k0, n)) if step == 1 else list(range(k0, -1, -1))
        evs = sorted([e for e in events if e[0] == step], key=lambda e: step * e[1])
        # perm[final bare row] -> adiabatic bare row
        perm = np.arange(d)
        inv = np.arange(d)
        j = 0
        tracked_set = set(tracked_rows.tolist())
        for k in ks:
            while j < len(evs) and step * (grid[k] - evs[j][1]) > 0:
                _, loc, ra, rb, gap, resolved, interval, chars = evs[j]
                fa, fb = inv[ra], inv[rb]
                if fa in tracked_set or fb in tracked_set:
                    if resolved:
                        perm[fa], perm[fb] = rb, ra
                        inv[ra], inv[rb] = fb, fa
                    recorded.append(DiabaticEvent(
                        interval, loc if resolved else float("nan"),
                        (basis.labels[chars[0]], basis.labels[chars[1]]), gap, resolved,
                        (basis.labels[fa], basis.labels[fb])))
                j += 1
            final[k] = A[k, perm[tracked_rows]]
    recorded.sort(key=lambda ev: ev.interval[0])
    return SpectrumTrack(grid, E / TWO_PI, labels, final, recorded, k0)


def _find_crossings(grid, E, V, A, nc, ks, thr, step):
    """Scan adjacent eigenpairs for narrow anticrossings along one direction.

    Returns tuples (step, location, bare_row_a, bare_row_b, gap, resolved,
    interval, character_rows).
    """

    def character(k, ea, eb):
        w = V[k][:, ea] ** 2 + V[k][:, eb] ** 2
        top = np.argsort(-np.abs(w))[:2]
        return tuple(int(t) for t in top)

    out = []
    d = E.shape[1]
    thr_ang = thr * TWO_PI
    for j in range(len(ks) - 1):
        km, kn = ks[j], ks[j + 1]
        e2b_m = np.empty(d, dtype=int)
        e2b_m[A[km]] = np.arange(d)
        # unresolved: the continuation itself swapped two interacting neighbours
        order_n = A[kn]
        for e in range(d - 1):
            ra, rb = e2b_m[e], e2b_m[e + 1]
            if order_n[ra] > order_n[rb] and E[kn, order_n[ra]] > E[kn, order_n[rb]]:
                va, vb = V[km][:, e], V[km][:, e + 1]
                if abs(va.conj() @ nc @ vb) > 1e-3:
                    gap = max(abs(E[km, e + 1] - E[km, e]),
                              abs(E[kn, order_n[ra]] - E[kn, order_n[rb]])) / TWO_PI
                    lo, hi = sorted((grid[km], grid[kn]))
                    out.append((step, 0.5 * (grid[km] + grid[kn]), ra, rb, gap, False, (lo, hi),
                                character(km, e, e + 1)))
        if j == 0:
            continue
        kp = ks[j - 1]
        gm = E[km, 1:] - E[km, :-1]
        ra_all, rb_all = e2b_m[:-1], e2b_m[1:]
        gp = E[kp, A[kp, rb_all]] - E[kp, A[kp, ra_all]]
        gn = E[kn, A[kn, rb_all]] - E[kn, A[kn, ra_all]]
        cand = np.nonzero((gm < np.abs(gp)) & (gm <= np.abs(gn)) & (gp > 0) & (gn > 0)
                          & (gm < 3 * thr_ang))[0]
        for e in cand:
            x = grid[[kp, km, kn]] - grid[km]
            y = np.array([gp[e], gm[e], gn[e]]) ** 2
            cf = np.polyfit(x, y, 2)
            if cf[0] <= 0:
                continue
            xm = -cf[1] / (2 * cf[0])
            if not min(x) <= xm <= max(x):
                continue
            ymin = np.polyval(cf, xm)
            gap = np.sqrt(max(ymin, 0.0)) / TWO_PI
            if gap >= thr:
                continue
            va, vb = V[km][:, e], V[km][:, e + 1]
            if abs(va.conj() @ nc @ vb) <= 1e-3:
                continue
            lo, hi = sorted((grid[kp], grid[kn]))
            out.append((step, grid[km] + xm, ra_all[e], rb_all[e], gap, True, (lo, hi),
                        character(kp, A[kp, ra_all[e]], A[kp, rb_all[e]])))
    return out


@dataclass
class AdiabaticFrequencies:
    grid: np.ndarray
    curves: Dict[Tuple[int, int, int], np.ndarray]  # GHz relative to ground
    diabatic_events: List[DiabaticEvent]

    def to_csv(self, path):
        keys = sorted(self.curves)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["coupler_freq_ghz"] + ["w_" + "".join(map(str, k)) for k in keys])
            for i, x in enumerate(self.grid):
                w.writerow([f"{x:.9g}"] + [f"{self.curves[k][i]:.12g}" for k in keys])


def computational_frequencies(track: SpectrumTrack) -> AdiabaticFrequencies:
    names_ok = len(track.tracked[0]) == 4
    comp = [(0, a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)]
    missing = [l for l in comp if l not in track.tracked]
    if missing or not names_ok:
        raise ValueError(f"track is missing computational labels: {missing}")
    ground = track.energy((0, 0, 0, 0))
    curves = {lab[1:]: track.energy(lab) - ground for lab in comp}
    return AdiabaticFrequencies(track.grid.copy(), curves, list(track.diabatic_events))
