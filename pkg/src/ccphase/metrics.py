"""Phase extraction, leakage and fidelity on the computational subspace.

Computational index ordering is binary in (n1, n2, n3): index = 4 n1 + 2 n2 + n3.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .evolution import QuantumChannel
from .shifts import PhaseVector, wrap

BITS = np.array([[(i >> 2) & 1, (i >> 1) & 1, i & 1] for i in range(8)])
IDX = {tuple(b): i for i, b in enumerate(BITS.tolist())}


def target_diagonal(phases: PhaseVector, thetas=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Diagonal of the phase gate: single-qubit phases thetas plus entangling phases."""
    th = np.asarray(thetas, dtype=float)
    p = phases
    out = np.empty(8, dtype=complex)
    for i, (a, b, c) in enumerate(BITS):
        ang = th[0] * a + th[1] * b + th[2] * c
        ang += p.phi_011 * b * c + p.phi_101 * a * c + p.phi_110 * a * b + p.phi_ccp * a * b * c
        out[i] = np.exp(1j * ang)
    return out


def target_unitary(phases: PhaseVector, thetas=(0.0, 0.0, 0.0)) -> np.ndarray:
    return np.diag(target_diagonal(phases, thetas))


def z_diagonal(thetas) -> np.ndarray:
    th = np.asarray(thetas, dtype=float)
    return np.exp(1j * BITS @ th)


def extract_phases(block: np.ndarray):
    """Entangling phases (wrapped) and single-qubit angles of a near-diagonal block.

    The ground-state phase is gauged out; theta_k = arg of the single-excitation
    diagonal elements.
    """
    B = np.asarray(block)
    if B.shape != (8, 8):
        raise ValueError("expected an 8x8 computational block")
    dg = np.diag(B)
    if np.min(np.abs(dg)) <= 0.5:
        raise ValueError("block is not diagonal-dominant (min |diag| <= 0.5)")
    ph = np.angle(dg / dg[0])
    th = np.array([ph[IDX[(1, 0, 0)]], ph[IDX[(0, 1, 0)]], ph[IDX[(0, 0, 1)]]])
    p011 = ph[IDX[(0, 1, 1)]] - th[1] - th[2]
    p101 = ph[IDX[(1, 0, 1)]] - th[0] - th[2]
    p110 = ph[IDX[(1, 1, 0)]] - th[0] - th[1]
    pccp = ph[IDX[(1, 1, 1)]] - th.sum() - p011 - p101 - p110
    phases = PhaseVector.from_array(wrap([p011, p101, p110, pccp]))
    return phases, th


def unwrap_to(measured: PhaseVector, reference: PhaseVector) -> PhaseVector:
    """Add the multiple of 2 pi to each measured phase that brings it closest to ``reference``."""
    m, r = measured.as_array(), reference.as_array()
    return PhaseVector.from_array(r + wrap(m - r))


def _unitary_fid(M_diag_weighted: np.ndarray, mm: float, z: np.ndarray, d: int = 8) -> float:
    tr = np.sum(np.conj(z) * M_diag_weighted)
    return float((abs(tr) ** 2 + mm) / (d * (d + 1)))


def fidelity(block_or_channel, target: PhaseVector, thetas0=None, return_angles: bool = False):
    """Average gate fidelity against the phase gate, maximized over local Z angles.

    For a block U: F = (|Tr M|^2 + Tr M M^dag) / (d (d + 1)), M = (Z V)^dag U.
    For a channel E: F = (Tr[(W kron W*)^dag S] + Tr E(1)) / (d (d + 1)), W = Z V.
    """
    d = 8
    tgt = target_diagonal(target)
    if isinstance(block_or_channel, QuantumChannel):
        S = block_or_channel.superop
        n = block_or_channel.dim
        if n != d:
            raise ValueError("channel must act on the 8-dim computational space")
        # Tr[(W kron W*)^dag S] = sum_ab conj(w_a) w_b S[(ab),(ab)] for diagonal W
        pair = np.arange(d)[:, None] * d + np.arange(d)[None, :]
        Sdiag = np.diag(S)[pair]
        ii = np.arange(d) * (d + 1)
        trE = float(np.real(np.sum(S[ii][:, ii])))

        def f(th):
            w = tgt * z_diagonal(th)
            return float((np.real(np.sum(np.outer(w.conj(), w) * Sdiag)) + trE) / (d * (d + 1)))
        start = _initial_angles_channel(Sdiag, tgt) if thetas0 is None else np.asarray(thetas0)
    else:
        U = np.asarray(block_or_channel)
        if U.shape != (d, d):
            raise ValueError("expected an 8x8 block")
        mm = float(np.real(np.sum(np.abs(U) ** 2)))
        u = np.conj(tgt) * np.diag(U)

        def f(th):
            return _unitary_fid(u, mm, z_diagonal(th))
        start = _initial_angles(u) if thetas0 is None else np.asarray(thetas0)
    best = _maximize(f, start)
    return (best[0], best[1]) if return_angles else best[0]


def _initial_angles(u: np.ndarray) -> np.ndarray:
    ph = np.angle(u / u[0]) if abs(u[0]) > 0 else np.angle(u)
    return np.array([ph[IDX[(1, 0, 0)]], ph[IDX[(0, 1, 0)]], ph[IDX[(0, 0, 1)]]])


def _initial_angles_channel(Sdiag: np.ndarray, tgt: np.ndarray) -> np.ndarray:
    # S[(i0),(i0)] ~ u_i u_0^*, so its phase gives the relative diagonal phase
    u = np.conj(tgt) * tgt[0] * Sdiag[:, 0]
    return _initial_angles(u)


def _maximize(f, x0):
    res = minimize(lambda x: -f(x), x0, method="Nelder-Mead",
                   options=dict(xatol=1e-10, fatol=1e-14, maxiter=4000))
    x = res.x
    # polish: a second restart guards against premature simplex collapse
    res2 = minimize(lambda y: -f(y), x, method="Nelder-Mead",
                    options=dict(xatol=1e-12, fatol=1e-16, maxiter=4000))
    if -res2.fun >= -res.fun:
        x = res2.x
    return f(x), wrap(x)


def flip_fidelity(block: np.ndarray, qubits: Sequence[int]) -> float:
    """Average fidelity of a block to X on ``qubits`` (0-based), up to local Z rotations.

    Z rotations commute through X up to sign, so one layer of free angles after
    the flip covers both sides.
    """
    U = np.asarray(block)
    mask = sum(1 << (2 - q) for q in qubits)
    perm = np.arange(8) ^ mask
    u = U[perm, np.arange(8)]
    mm = float(np.sum(np.abs(U) ** 2))
    zs = lambda th: z_diagonal(th)[perm]
    f = lambda th: float((abs(np.sum(np.conj(zs(th)) * u)) ** 2 + mm) / 72.0)
    # gauge to the input that lands on |000>; the output |k> then carries theta_k
    ref = u[int(np.flatnonzero(perm == 0)[0])]
    ph = np.angle(u * np.conj(ref)) if abs(ref) > 0 else np.angle(u)
    start = np.zeros(3)
    for k in range(3):
        i = int(np.flatnonzero(perm == (1 << (2 - k)))[0])
        start[k] = ph[i]
    return _maximize(f, start)[0]


@dataclass
class LeakageReport:
    out_of_space: np.ndarray  # Lambda_Cbar per computational state
    within_space: np.ndarray  # Lambda_C per computational state
    retained: np.ndarray  # |<i|U|i>|^2

    @property
    def total_out(self) -> float:
        return float(self.out_of_space.sum())

    @property
    def total_within(self) -> float:
        return float(self.within_space.sum())

    @property
    def total(self) -> float:
        return self.total_out + self.total_within


def leakage_report(propagator: np.ndarray, vectors: np.ndarray) -> LeakageReport:
    """Population losses of the computational states under a full-space unitary.

    ``vectors`` holds the (dressed) computational states as columns.
    """
    U = np.asarray(propagator)
    V = np.asarray(vectors)
    out = U @ V
    block = V.conj().T @ out
    pop_block = np.abs(block) ** 2
    norm = np.sum(np.abs(out) ** 2, axis=0)
    within_total = np.sum(pop_block, axis=0)
    retained = np.diag(pop_block).copy()
    return LeakageReport(norm - within_total, within_total - retained, retained)


@dataclass
class GateReport:
    block: Optional[np.ndarray]
    channel: Optional[QuantumChannel]
    phases: PhaseVector  # unwrapped to the target when a prediction exists
    phases_wrapped: PhaseVector
    fidelity: float
    z_angles: np.ndarray
    leakage: Optional[LeakageReport]
    target: PhaseVector
    duration: float = 0.0
    extra: Dict = field(default_factory=dict)

    @property
    def infidelity(self) -> float:
        return 1.0 - self.fidelity

    def to_dict(self) -> dict:
        d = dict(
            fidelity=self.fidelity,
            infidelity=self.infidelity,
            phases=self.phases.to_dict(),
            phases_wrapped=self.phases_wrapped.to_dict(),
            target=self.target.to_dict(),
            z_angles=[float(x) for x in self.z_angles],
            duration_ns=self.duration,
        )
        if self.leakage is not None:
            d["leakage"] = dict(out_of_space=self.leakage.out_of_space.tolist(),
                                within_space=self.leakage.within_space.tolist(),
                                total_out=self.leakage.total_out,
                                total_within=self.leakage.total_within)
        if self.block is not None:
            d["block_abs"] = np.abs(self.block).round(8).tolist()
            d["block_phase"] = np.angle(self.block).round(8).tolist()
        d.update(self.extra)
        return d

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def channel_leakage(channel: QuantumChannel) -> float:
    """1 - Tr E(1/d) over the subspace: population leaving on average."""
    d = channel.dim
    return float(1.0 - np.trace(channel.apply(np.eye(d) / d)).real)
