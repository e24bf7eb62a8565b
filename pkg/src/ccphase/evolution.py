"""Closed and open system propagation under a ControlSchedule.

The coherent propagator is built tick by tick with a fourth-order
commutator-free Magnus step: each tick is the product of two exponentials of
Hermitian combinations of H at the two Gauss nodes, each exponentiated exactly
through ``eigh``.  ``method="midpoint"`` gives the plain piecewise-constant
product exp(-i H(t_mid) dt).

Open-system dynamics use Strang splitting.  Blocks of ticks are propagated
coherently and the dissipator acts between blocks; with the dissipator frozen
over a block the splitting error is second order in the block length times the
noise rates.  ``method="superoperator"`` integrates the full Liouvillian per
tick by scaling-and-squaring and serves as a reference for small systems.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Sequence

import numpy as np
from scipy.linalg import expm

from .hamiltonian import HamiltonianSet
from .hilbert import COUPLER, TWO_PI, DeviceSpec, TruncatedBasis
from .pulses import ControlSchedule

_C = np.sqrt(3.0) / 6.0
_A1 = (3.0 - 2.0 * np.sqrt(3.0)) / 12.0
_A2 = (3.0 + 2.0 * np.sqrt(3.0)) / 12.0


@dataclass
class Propagator:
    unitary: np.ndarray
    t_start: float
    t_end: float


def _controls(h: HamiltonianSet, schedule: ControlSchedule, t: np.ndarray):
    """Coefficient rows for [coupler_number, drive_q...] at times ``t``."""
    qubits = [q for q in schedule.drives if q in h.drive_ops]
    missing = [q for q in schedule.drives if q not in h.drive_ops]
    if missing:
        raise ValueError(f"schedule drives unknown qubits {missing}")
    ops = [h.coupler_number] + [h.drive_ops[q] for q in qubits]
    rows = [schedule.coupler_at(t)] + [schedule.drive_at(q, t) for q in qubits]
    return ops, np.vstack(rows)


def _expm_herm(H: np.ndarray, dt) -> np.ndarray:
    """exp(-i H dt) for a Hermitian matrix or a stack of them (dt scalar or one per matrix)."""
    e, v = np.linalg.eigh(H)
    if not np.all(np.isfinite(e)):
        raise FloatingPointError("non-finite eigenvalues in tick exponential")
    phase = np.exp(-1j * np.asarray(dt, dtype=float)[..., None] * e)
    return (v * phase[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


def ordered_product(mats: np.ndarray) -> np.ndarray:
    """mats[-1] @ ... @ mats[0] by pairwise reduction."""
    mats = np.asarray(mats)
    if len(mats) == 0:
        raise ValueError("empty product")
    while len(mats) > 1:
        if len(mats) % 2:
            tail = mats[-1:]
            mats = mats[:-1]
        else:
            tail = None
        mats = mats[1::2] @ mats[0::2]
        if tail is not None:
            mats = np.concatenate([mats, tail])
    return mats[0]


def _stack_hamiltonians(base: np.ndarray, ops, coeffs: np.ndarray) -> np.ndarray:
    H = np.broadcast_to(base, (coeffs.shape[1],) + base.shape).copy()
    for op, c in zip(ops, coeffs):
        H += c[:, None, None] * op
    return H


def magnus_steps(schedule: ControlSchedule, start: int, stop: int, drive_substeps: int = 4):
    """Step start times and lengths covering ticks [start, stop).

    Ticks where any drive envelope is non-zero are split into ``drive_substeps``
    equal steps: the lab-frame carrier oscillates too fast for one fourth-order
    step per 33 ps tick to reach 1e-5 accuracy.
    """
    dt = schedule.dt
    t0 = np.arange(start, stop) * dt
    s = np.ones(len(t0), dtype=int)
    if drive_substeps > 1 and schedule.drives:
        active = np.zeros(len(t0), dtype=bool)
        for q in schedule.drives:
            for f in (0.0, 0.5, 1.0):
                active |= schedule.envelope_at(q, t0 + f * dt) != 0
        s[active] = drive_substeps
    h = np.repeat(dt / s, s)
    first = np.repeat(np.cumsum(s) - s, s)
    starts = np.repeat(t0, s) + (np.arange(s.sum()) - first) * h
    return starts, h


def cf4_coefficients(coeff_at: Callable[[np.ndarray], np.ndarray], starts: np.ndarray,
                     h: np.ndarray):
    """Control coefficients of the two CF4 exponentials of each step, in application order.

    Returns (coeffs, lengths) with one column / entry per exponential; the
    static Hamiltonian enters each exponential with weight 1/2.
    """
    c1 = coeff_at(starts + (0.5 - _C) * h)
    c2 = coeff_at(starts + (0.5 + _C) * h)
    c = np.empty((c1.shape[0], 2 * c1.shape[1]))
    c[:, 0::2] = _A2 * c1 + _A1 * c2
    c[:, 1::2] = _A1 * c1 + _A2 * c2
    return c, np.repeat(h, 2)


def tick_exponentials(h: HamiltonianSet, schedule: ControlSchedule, start: int, stop: int,
                      method: str = "magnus4", chunk: int = 256, drive_substeps: int = 4):
    """Yield stacks of step factors in application order for ticks [start, stop)."""
    if method not in ("magnus4", "midpoint"):
        raise ValueError(f"unknown method {method!r}")
    starts, lengths = magnus_steps(schedule, start, stop,
                                   drive_substeps if method == "magnus4" else 1)
    ops, _ = _controls(h, schedule, starts[:0])
    coeffs = lambda t: _controls(h, schedule, t)[1]
    for s in range(0, len(starts), chunk):
        t0, dt = starts[s:s + chunk], lengths[s:s + chunk]
        if method == "magnus4":
            c, dts = cf4_coefficients(coeffs, t0, dt)
            yield _expm_herm(_stack_hamiltonians(0.5 * h.h0_fixed, ops, c), dts)
        else:
            c = coeffs(t0 + 0.5 * dt)
            yield _expm_herm(_stack_hamiltonians(h.h0_fixed, ops, c), dt)


def unitary_evolve(h: HamiltonianSet, schedule: ControlSchedule, method: str = "magnus4",
                   start_tick: int = 0, stop_tick: int | None = None) -> Propagator:
    """Time-ordered product of tick propagators on the full truncated space."""
    n = schedule.n_ticks
    stop = n if stop_tick is None else stop_tick
    if not 0 <= start_tick <= stop <= n:
        raise ValueError("tick range outside the schedule")
    U = np.eye(h.dimension, dtype=complex)
    for X in tick_exponentials(h, schedule, start_tick, stop, method):
        U = ordered_product(X) @ U
    if not np.all(np.isfinite(U)):
        raise FloatingPointError("non-finite propagator")
    dt = schedule.dt
    return Propagator(U, start_tick * dt, stop * dt)


def block_propagators(h: HamiltonianSet, schedule: ControlSchedule, block_ticks: int = 15,
                      method: str = "magnus4") -> List[np.ndarray]:
    """Coherent propagators for consecutive blocks of ``block_ticks`` ticks."""
    n = schedule.n_ticks
    out = []
    for s in range(0, n, block_ticks):
        out.append(unitary_evolve(h, schedule, method, s, min(n, s + block_ticks)).unitary)
    return out


# --- noise -------------------------------------------------------------------

def charge_dispersion(m: int, ej_ec: float, ec: float) -> float:
    """Charge dispersion amplitude of level m (same units as ``ec``)."""
    from math import factorial
    return ((-1) ** m * ec * 2.0 ** (4 * m + 5) / factorial(m) * np.sqrt(2.0 / np.pi)
            * (ej_ec / 2.0) ** (m / 2.0 + 0.75) * np.exp(-np.sqrt(8.0 * ej_ec)))


def transmon_ej_ec(frequency: float, anharmonicity: float) -> float:
    """E_J/E_C from w = sqrt(8 E_J E_C) - E_C and alpha = -E_C."""
    ec = -anharmonicity
    if ec <= 0:
        raise ValueError("transmon anharmonicity must be negative")
    ej = (frequency + ec) ** 2 / (8.0 * ec)
    return ej / ec


@dataclass
class NoiseModel:
    """Coherence parameters; times in microseconds, charge noise A_n in units of e.

    ``t1``/``t_phi`` map mode labels to times (missing or ``None``: channel off).
    Charge dispersion is applied to ``charge_modes``; E_J/E_C comes from
    ``ej_ec_ratio`` or else from the mode frequency (the coupler is evaluated at
    ``coupler_reference_freq``) and anharmonicity.
    """

    t1: Dict[str, float | None] = field(default_factory=dict)
    t_phi: Dict[str, float | None] = field(default_factory=dict)
    charge_noise: float = 0.0
    ej_ec_ratio: Dict[str, float] = field(default_factory=dict)
    charge_modes: tuple = (COUPLER,)
    coupler_reference_freq: float | None = 4.5

    def __post_init__(self):
        for name, d in (("t1", self.t1), ("t_phi", self.t_phi)):
            for k, v in d.items():
                if v is not None and v <= 0:
                    raise ValueError(f"{name}[{k}] must be positive")
        if self.charge_noise < 0:
            raise ValueError("charge noise amplitude must be non-negative")

    @classmethod
    def uniform(cls, modes: Sequence[str], t1: float | None = None, t_phi: float | None = None,
                charge_noise: float = 0.0, **kw) -> "NoiseModel":
        return cls({m: t1 for m in modes}, {m: t_phi for m in modes}, charge_noise, **kw)

    def ej_ec(self, spec: DeviceSpec, mode: str) -> float:
        if mode in self.ej_ec_ratio:
            return self.ej_ec_ratio[mode]
        m = spec.mode(mode)
        w = m.frequency
        if mode == COUPLER and self.coupler_reference_freq is not None:
            w = self.coupler_reference_freq
        return transmon_ej_ec(w, m.anharmonicity)

    def dephasing_rates(self, spec: DeviceSpec, mode: str) -> np.ndarray:
        """Pairwise rates (1/ns) between levels m and m+1, m = 0 .. levels-2."""
        m_spec = spec.mode(mode)
        n = m_spec.level_count
        base = self.t_phi.get(mode)
        rates = np.full(n - 1, 0.0 if base is None else 1.0 / (base * 1e3))
        if self.charge_noise > 0 and mode in self.charge_modes:
            ratio = self.ej_ec(spec, mode)
            ec = -m_spec.anharmonicity
            eps = np.array([charge_dispersion(m, ratio, ec) for m in range(n - 1)])
            rates = rates + np.pi * self.charge_noise * np.abs(TWO_PI * eps)
        return rates


@dataclass
class CollapseOperator:
    name: str
    mode: str
    kind: str  # "relaxation" | "dephasing"
    level: int
    rate: float  # 1/ns
    matrix: np.ndarray


def collapse_operators(spec: DeviceSpec, noise: NoiseModel, basis: TruncatedBasis,
                       kinds: Sequence[str] = ("relaxation", "dephasing")) -> List[CollapseOperator]:
    """Bare-basis collapse operators.

    Relaxation m -> m-1 at rate m/T1, one operator per level pair.  Dephasing
    uses sqrt(2 Gamma_m) times the projector on levels above m, so the
    coherence between neighbouring levels m, m+1 decays at exactly Gamma_m.
    """
    occ = basis.occupations()
    d = len(basis)
    out: List[CollapseOperator] = []
    for k, mode in enumerate(basis.mode_labels):
        n = basis.level_counts[k]
        t1 = noise.t1.get(mode)
        if "relaxation" in kinds and t1 is not None:
            for m in range(1, n):
                rate = m / (t1 * 1e3)
                L = np.zeros((d, d))
                for j, lab in enumerate(basis.labels):
                    if lab[k] == m:
                        low = list(lab)
                        low[k] -= 1
                        i = basis.index.get(tuple(low))
                        if i is not None:
                            L[i, j] = np.sqrt(rate)
                out.append(CollapseOperator(f"relax_{mode}_{m}", mode, "relaxation", m, rate, L))
        if "dephasing" in kinds:
            if noise.charge_noise > 0 and mode in noise.charge_modes and mode not in noise.ej_ec_ratio:
                if spec.mode(mode).anharmonicity >= 0:
                    raise ValueError(f"E_J/E_C for {mode} needed for charge noise")
            rates = noise.dephasing_rates(spec, mode)
            for m, g in enumerate(rates):
                if g <= 0:
                    continue
                diag = np.sqrt(2.0 * g) * (occ[:, k] > m)
                out.append(CollapseOperator(f"dephase_{mode}_{m}", mode, "dephasing", m, g,
                                            np.diag(diag.astype(float))))
    return out


class Dissipator:
    """Fast action of sum_k D[L_k] on batches of density matrices."""

    def __init__(self, ops: Sequence, d: int):
        mats = [o.matrix if isinstance(o, CollapseOperator) else np.asarray(o) for o in ops]
        self.d = d
        self.gamma = np.zeros((d, d), dtype=complex)  # diagonal ops, elementwise
        self.k_diag = np.zeros(d)  # diagonal part of sum L^dag L from non-diagonal ops
        self.mono = []  # (src, dst, coef)
        self.dense = []
        k_dense = np.zeros((d, d), dtype=complex)
        for L in mats:
            if L.shape != (d, d):
                raise ValueError("collapse operator dimension mismatch")
            off = L - np.diag(np.diag(L))
            if not off.any():
                l = np.diag(L)
                self.gamma += (np.outer(l, l.conj()) - 0.5 * np.abs(l)[:, None] ** 2
                               - 0.5 * np.abs(l)[None, :] ** 2)
                continue
            nz_cols = np.nonzero(np.any(L != 0, axis=0))[0]
            rows = [np.nonzero(L[:, j])[0] for j in nz_cols]
            if all(len(r) == 1 for r in rows) and len({int(r[0]) for r in rows}) == len(rows):
                dst = np.array([int(r[0]) for r in rows])
                coef = L[dst, nz_cols]
                self.mono.append((nz_cols, dst, coef, np.outer(coef, coef.conj())))
                self.k_diag[nz_cols] += np.abs(coef) ** 2
            else:
                self.dense.append(L)
                k_dense += L.conj().T @ L
        self.k_dense = k_dense if self.dense else None
        self.k_sum = self.k_diag[:, None] + self.k_diag[None, :]
        self.empty = not (self.mono or self.dense or np.any(self.gamma))

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        out = self.gamma * rho - 0.5 * self.k_sum * rho
        for src, dst, coef, cc in self.mono:
            out[..., dst[:, None], dst[None, :]] += cc * rho[..., src[:, None], src[None, :]]
        for L in self.dense:
            out += L @ rho @ L.conj().T
        if self.k_dense is not None:
            out -= 0.5 * (self.k_dense @ rho + rho @ self.k_dense)
        return out

    def step(self, rho: np.ndarray, tau: float, substeps: int = 1) -> np.ndarray:
        """Integrate d rho/dt = D(rho) over ``tau`` with classical RK4."""
        if self.empty or tau == 0:
            return rho
        h = tau / substeps
        for _ in range(substeps):
            k1 = self(rho)
            k2 = self(rho + 0.5 * h * k1)
            k3 = self(rho + 0.5 * h * k2)
            k4 = self(rho + h * k3)
            rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return rho

    def superoperator(self) -> np.ndarray:
        """Row-major vectorized generator: vec(A rho B) = (A kron B^T) vec(rho)."""
        d = self.d
        I = np.eye(d)
        S = np.diag(self.gamma.reshape(-1)).astype(complex)
        S -= 0.5 * np.diag(self.k_sum.reshape(-1))
        for src, dst, coef, _ in self.mono:
            L = np.zeros((d, d), dtype=complex)
            L[dst, src] = coef
            S += np.kron(L, L.conj())
        for L in self.dense:
            S += np.kron(L, L.conj())
        if self.k_dense is not None:
            S -= 0.5 * (np.kron(self.k_dense, I) + np.kron(I, self.k_dense.T))
        return S


def _check_density_matrix(rho: np.ndarray, d: int):
    if rho.shape != (d, d):
        raise ValueError(f"density matrix must be {d}x{d}")
    if not np.allclose(rho, rho.conj().T, atol=1e-10):
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > 1e-8:
        raise ValueError("density matrix trace is not 1")
    if np.linalg.eigvalsh(rho).min() < -1e-10:
        raise ValueError("density matrix is not positive semidefinite")


def lindblad_evolve(h: HamiltonianSet, schedule: ControlSchedule, collapse_ops: Sequence,
                    rho0: np.ndarray, method: str = "split", block_ticks: int = 15,
                    block_unitaries: Sequence[np.ndarray] | None = None,
                    validate: bool = True) -> np.ndarray:
    """Final density matrix; ``rho0`` may also be a batch (B, d, d) when validate=False."""
    d = h.dimension
    rho = np.asarray(rho0, dtype=complex)
    if validate:
        _check_density_matrix(rho, d)
    diss = Dissipator(collapse_ops, d)
    if method == "split":
        return _split_evolve(h, schedule, diss, rho, block_ticks, block_unitaries)
    if method == "superoperator":
        return _superop_evolve(h, schedule, diss, rho)
    raise ValueError(f"unknown method {method!r}")


def _conj(U, rho):
    return U @ rho @ U.conj().T


def _split_evolve(h, schedule, diss, rho, block_ticks, block_unitaries):
    n = schedule.n_ticks
    dt = schedule.dt
    if block_unitaries is None:
        block_unitaries = block_propagators(h, schedule, block_ticks)
    starts = list(range(0, n, block_ticks))
    if len(block_unitaries) != len(starts):
        raise ValueError("block unitaries do not match the schedule")
    prev_half = 0.0
    for s, U in zip(starts, block_unitaries):
        tau = (min(n, s + block_ticks) - s) * dt
        rho = diss.step(rho, prev_half + 0.5 * tau)
        rho = _conj(U, rho)
        prev_half = 0.5 * tau
    return diss.step(rho, prev_half)


def _superop_evolve(h, schedule, diss, rho):
    d = h.dimension
    n = schedule.n_ticks
    dt = schedule.dt
    I = np.eye(d)
    D = diss.superoperator()
    ops, c = _controls(h, schedule, (np.arange(n) + 0.5) * dt)
    shape = rho.shape
    vec = rho.reshape(-1, d * d).T  # columns are vectorized states
    k = 0
    while k < n:
        # group runs of identical generators
        j = k + 1
        while j < n and np.array_equal(c[:, j], c[:, k]):
            j += 1
        H = h.h0_fixed.astype(complex)
        for op, x in zip(ops, c[:, k]):
            H = H + x * op
        Lsup = -1j * (np.kron(H, I) - np.kron(I, H.T)) + D
        vec = expm(Lsup * dt * (j - k)) @ vec
        k = j
    return vec.T.reshape(shape)


# --- channels ----------------------------------------------------------------

@dataclass
class QuantumChannel:
    """Row-major superoperator S: vec(E(rho)) = S vec(rho) on an n-dim space."""

    superop: np.ndarray
    dim: int

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return (self.superop @ np.asarray(rho).reshape(-1)).reshape(self.dim, self.dim)

    @classmethod
    def from_unitary(cls, U: np.ndarray) -> "QuantumChannel":
        return cls(np.kron(U, U.conj()), U.shape[0])

    def trace_error(self) -> float:
        """Largest deviation of Tr E(|i><j|) from delta_ij."""
        n = self.dim
        tr = np.einsum("iik->k", self.superop.reshape(n, n, n * n))
        return float(np.max(np.abs(tr - np.eye(n).reshape(-1))))

    def choi_min_eigenvalue(self) -> float:
        n = self.dim
        choi = self.superop.reshape(n, n, n, n).transpose(0, 2, 1, 3).reshape(n * n, n * n)
        return float(np.linalg.eigvalsh(0.5 * (choi + choi.conj().T)).min())


def process_tomography(evaluator: Callable[[np.ndarray], np.ndarray],
                       vectors: np.ndarray) -> QuantumChannel:
    """Restrict a channel to span(vectors) by propagating every |i><j|.

    ``evaluator`` maps a batch (B, d, d) of operators to their images; ``vectors``
    is a (d, n) matrix of orthonormal columns spanning the subspace.
    """
    V = np.asarray(vectors, dtype=complex)
    n = V.shape[1]
    inputs = np.einsum("ai,bj->ijab", V, V.conj()).reshape(n * n, V.shape[0], V.shape[0])
    outputs = np.asarray(evaluator(inputs))
    restricted = V.conj().T[None] @ outputs @ V[None]
    S = restricted.reshape(n * n, n * n).T
    return QuantumChannel(S, n)
