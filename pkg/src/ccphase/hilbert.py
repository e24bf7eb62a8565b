"""Truncated multi-mode bases and ladder operators for the coupler + three qubit device.

Frequencies are stored in GHz (cycles per ns).  Operators built here are
dimensionless; the Hamiltonian module multiplies by 2*pi.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import reduce
from typing import Dict, Iterable, Mapping, Sequence, Tuple

import numpy as np

TWO_PI = 2.0 * np.pi

COUPLER = "coupler"
QUBITS = ("q1", "q2", "q3")
DEFAULT_LEVELS = {"coupler": 5, "q1": 4, "q2": 4, "q3": 3}

BareLabel = Tuple[int, ...]


@dataclass(frozen=True)
class ModeSpec:
    label: str
    frequency: float  # GHz
    anharmonicity: float  # GHz, negative for transmons
    level_count: int | None = None

    def __post_init__(self):
        if self.level_count is None:
            if self.label not in DEFAULT_LEVELS:
                raise ValueError(f"mode {self.label!r} has no default level count")
            object.__setattr__(self, "level_count", DEFAULT_LEVELS[self.label])
        if int(self.level_count) < 2:
            raise ValueError(f"mode {self.label!r}: level_count must be >= 2")
        object.__setattr__(self, "level_count", int(self.level_count))

    def bare_energy(self, n: int, frequency: float | None = None) -> float:
        w = self.frequency if frequency is None else frequency
        return w * n + 0.5 * self.anharmonicity * n * (n - 1)


def _pair_key(a: str, b: str) -> Tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class DeviceSpec:
    """Device constants.

    ``coupling_form`` selects the qubit-coupler interaction:
    ``"exchange"`` keeps g (a^dag b + a b^dag); ``"charge"`` is the full
    charge-charge form -g (a^dag - a)(b^dag - b) including counter-rotating terms.
    ``energy_cutoff`` (GHz), when set, additionally drops every state whose bare
    energy exceeds it, with the coupler evaluated at ``cutoff_reference``.  The
    default ``None`` keeps all states allowed by the per-mode level counts and the
    excitation cap.  A strict 16 GHz filter removes |0,112> (16.3 GHz), which
    leaves the Q3 pi pulse without a second level when Q1 and Q2 are excited.
    """

    modes: Tuple[ModeSpec, ...]
    couplings: Mapping[Tuple[str, str], float]
    energy_cutoff: float | None = None
    max_total_excitations: int = 4
    cutoff_reference: float | None = 4.5
    coupling_form: str = "exchange"

    def __post_init__(self):
        modes = tuple(self.modes)
        object.__setattr__(self, "modes", modes)
        names = [m.label for m in modes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate mode labels")
        sym: Dict[Tuple[str, str], float] = {}
        for (a, b), g in dict(self.couplings).items():
            if a == b:
                raise ValueError(f"self-coupling on {a!r} is not allowed")
            if a not in names or b not in names:
                raise ValueError(f"coupling references unknown mode: {(a, b)}")
            key = _pair_key(a, b)
            if key in sym and not np.isclose(sym[key], g):
                raise ValueError(f"asymmetric coupling for {key}")
            sym[key] = float(g)
        object.__setattr__(self, "couplings", sym)
        if self.energy_cutoff is not None and self.energy_cutoff <= 0:
            raise ValueError("energy_cutoff must be positive")
        if self.max_total_excitations <= 0:
            raise ValueError("max_total_excitations must be positive")
        if self.coupling_form not in ("exchange", "charge"):
            raise ValueError(f"unknown coupling_form {self.coupling_form!r}")

    # -- lookup ---------------------------------------------------------
    @property
    def mode_labels(self) -> Tuple[str, ...]:
        return tuple(m.label for m in self.modes)

    def mode(self, label: str) -> ModeSpec:
        for m in self.modes:
            if m.label == label:
                return m
        raise KeyError(f"unknown mode {label!r}")

    def mode_index(self, label: str) -> int:
        try:
            return self.mode_labels.index(label)
        except ValueError:
            raise KeyError(f"unknown mode {label!r}") from None

    def coupling(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        return self.couplings.get(_pair_key(a, b), 0.0)

    @property
    def levels(self) -> Tuple[int, ...]:
        return tuple(m.level_count for m in self.modes)

    # -- variants ---------------------------------------------------------
    def replace_mode(self, label: str, **changes) -> "DeviceSpec":
        modes = []
        for m in self.modes:
            if m.label == label:
                d = dict(label=m.label, frequency=m.frequency,
                         anharmonicity=m.anharmonicity, level_count=m.level_count)
                d.update(changes)
                m = ModeSpec(**d)
            modes.append(m)
        return self._copy(modes=tuple(modes))

    def with_couplings(self, updates: Mapping[Tuple[str, str], float]) -> "DeviceSpec":
        c = dict(self.couplings)
        for (a, b), g in updates.items():
            c[_pair_key(a, b)] = float(g)
        return self._copy(couplings=c)

    def _copy(self, **kw) -> "DeviceSpec":
        d = dict(modes=self.modes, couplings=self.couplings,
                 energy_cutoff=self.energy_cutoff,
                 max_total_excitations=self.max_total_excitations,
                 cutoff_reference=self.cutoff_reference,
                 coupling_form=self.coupling_form)
        d.update(kw)
        return DeviceSpec(**d)

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "modes": [dict(label=m.label, frequency=m.frequency,
                           anharmonicity=m.anharmonicity, level_count=m.level_count)
                      for m in self.modes],
            "couplings": {f"{a}-{b}": g for (a, b), g in self.couplings.items()},
            "energy_cutoff": self.energy_cutoff,
            "max_total_excitations": self.max_total_excitations,
            "cutoff_reference": self.cutoff_reference,
            "coupling_form": self.coupling_form,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DeviceSpec":
        d = dict(d)
        modes = tuple(ModeSpec(**m) for m in d.pop("modes"))
        couplings = {}
        for key, g in d.pop("couplings", {}).items():
            a, b = key.split("-") if isinstance(key, str) else key
            couplings[(a, b)] = g
        return cls(modes=modes, couplings=couplings, **d)

    @classmethod
    def from_json(cls, path) -> "DeviceSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_device(**overrides) -> DeviceSpec:
    """The reference device: qubits at 3.5/4.0/4.5 GHz, coupler idling at 5.8 GHz."""
    modes = (
        ModeSpec(COUPLER, 5.8, -0.30),
        ModeSpec("q1", 3.5, -0.20),
        ModeSpec("q2", 4.0, -0.23),
        ModeSpec("q3", 4.5, -0.20),
    )
    couplings = {
        ("q1", COUPLER): 0.150, ("q2", COUPLER): 0.150, ("q3", COUPLER): 0.120,
        ("q1", "q2"): 0.013, ("q2", "q3"): 0.014, ("q1", "q3"): 0.010,
    }
    d = dict(modes=modes, couplings=couplings)
    d.update(overrides)
    return DeviceSpec(**d)


@dataclass(frozen=True)
class TruncatedBasis:
    mode_labels: Tuple[str, ...]
    level_counts: Tuple[int, ...]
    labels: Tuple[BareLabel, ...]
    index: Dict[BareLabel, int] = field(repr=False, compare=False)

    def __len__(self):
        return len(self.labels)

    @property
    def dimension(self) -> int:
        return len(self.labels)

    def mode_index(self, mode: str) -> int:
        try:
            return self.mode_labels.index(mode)
        except ValueError:
            raise KeyError(f"unknown mode {mode!r}") from None

    def occupations(self) -> np.ndarray:
        return np.array(self.labels, dtype=int).reshape(len(self.labels), len(self.mode_labels))

    @property
    def product_indices(self) -> np.ndarray:
        """Row-major positions of the basis labels inside the full product space."""
        return np.ravel_multi_index(self.occupations().T, self.level_counts)

    def project(self, full: np.ndarray) -> np.ndarray:
        """Restrict a full product-space operator onto the truncated basis."""
        sel = self.product_indices
        return np.ascontiguousarray(full[np.ix_(sel, sel)])

    def product_lowering(self, mode: str) -> np.ndarray:
        """Lowering operator of ``mode`` on the untruncated product space."""
        k = self.mode_index(mode)
        mats = [np.eye(n) for n in self.level_counts]
        mats[k] = np.diag(np.sqrt(np.arange(1, self.level_counts[k])), 1)
        return reduce(np.kron, mats)


def build_basis(spec: DeviceSpec) -> TruncatedBasis:
    """Enumerate bare labels within the level counts, the excitation cap and the energy cutoff.

    Labels are ordered lexicographically over occupations in mode order.
    """
    levels = spec.levels
    if any(n < 2 for n in levels):
        raise ValueError("level_count must be >= 2 for every mode")
    if (spec.energy_cutoff is not None and spec.energy_cutoff <= 0) \
            or spec.max_total_excitations <= 0:
        raise ValueError("cutoffs must be positive")
    ref = {}
    for m in spec.modes:
        ref[m.label] = (spec.cutoff_reference
                        if (m.label == COUPLER and spec.cutoff_reference is not None)
                        else m.frequency)
    labels = []
    for occ in itertools.product(*(range(n) for n in levels)):
        if sum(occ) > spec.max_total_excitations:
            continue
        if spec.energy_cutoff is not None:
            e = sum(m.bare_energy(n, ref[m.label]) for m, n in zip(spec.modes, occ))
            if e > spec.energy_cutoff + 1e-12:
                continue
        labels.append(tuple(occ))
    labels = tuple(labels)
    return TruncatedBasis(spec.mode_labels, levels, labels,
                          {lab: i for i, lab in enumerate(labels)})


def ladder_operator(basis: TruncatedBasis, mode: str, kind: str = "lower") -> np.ndarray:
    """<m|a^dag|n> = sqrt(n+1) between basis labels differing by one quantum in ``mode``."""
    k = basis.mode_index(mode)
    if kind not in ("raise", "lower"):
        raise ValueError("kind must be 'raise' or 'lower'")
    d = len(basis)
    raise_op = np.zeros((d, d))
    for j, lab in enumerate(basis.labels):
        up = list(lab)
        up[k] += 1
        i = basis.index.get(tuple(up))
        if i is not None:
            raise_op[i, j] = np.sqrt(lab[k] + 1)
    return raise_op if kind == "raise" else raise_op.T.copy()


def number_operator(basis: TruncatedBasis, mode: str) -> np.ndarray:
    k = basis.mode_index(mode)
    return np.diag(basis.occupations()[:, k].astype(float))


def computational_labels(spec_or_basis) -> Tuple[BareLabel, ...]:
    """The eight labels (coupler in ground, qubits in {0,1}) ordered by n1 n2 n3 as binary."""
    names = spec_or_basis.mode_labels
    ic = names.index(COUPLER)
    iq = [names.index(q) for q in QUBITS]
    out = []
    for bits in itertools.product((0, 1), repeat=3):
        occ = [0] * len(names)
        occ[ic] = 0
        for i, b in zip(iq, bits):
            occ[i] = b
        out.append(tuple(occ))
    return tuple(out)
