from dataclasses import replace
from math import factorial

import numpy as np
import pytest
from scipy.linalg import expm

from ccphase import evolution as ev
from ccphase.hamiltonian import assemble
from ccphase.hilbert import COUPLER, TWO_PI, DeviceSpec, ModeSpec
from ccphase.pulses import DragPulseSpec, DriveSegment, FluxPulseSpec, FluxSegment, render

from conftest import reference_noise


def _random_state(d, rng, rank=None):
    A = rng.normal(size=(d, rank or d)) + 1j * rng.normal(size=(d, rank or d))
    rho = A @ A.conj().T
    return rho / np.trace(rho)


def _small_device(levels=2, qubit=False):
    modes = [ModeSpec(COUPLER, 5.8, -0.3, levels)]
    couplings = {}
    if qubit:
        modes.append(ModeSpec("q1", 4.5, -0.2, 3))
        couplings = {("q1", COUPLER): 0.1}
    return DeviceSpec(tuple(modes), couplings)


@pytest.fixture(scope="module")
def h(device):
    return assemble(device)


@pytest.fixture(scope="module")
def busy_schedule(ctx):
    """Flux pulse with a pi pulse on q2 in the middle; exercises every control."""
    return ctx.render([FluxSegment(2.0, ctx.flux_spec(30.0)), ctx.pi_pulse("q2", 34.0),
                       FluxSegment(56.0, ctx.flux_spec(30.0))], duration=90.0)


def test_zero_length_schedule_is_identity(h):
    U = ev.unitary_evolve(h, render([], 0.0)).unitary
    assert np.array_equal(U, np.eye(h.dimension))


def test_constant_hamiltonian_is_exact(h):
    T = 10.0
    U = ev.unitary_evolve(h, render([], T, idle_freq=5.8)).unitary
    assert np.max(np.abs(U - expm(-1j * h.at(5.8) * T))) < 1e-9


def test_halving_dt_converged(ctx, busy_schedule):
    U30 = ev.unitary_evolve(ctx.h, busy_schedule).unitary
    U60 = ev.unitary_evolve(ctx.h, replace(busy_schedule, sim_rate=60.0)).unitary
    T = busy_schedule.duration
    diff = ctx.block(U30, T) - ctx.block(U60, T)
    assert np.max(np.abs(diff)) < 1e-5


def test_midpoint_method_agrees_without_drives(ctx):
    sched = ctx.single_pulse_schedule(30.0)
    Um = ev.unitary_evolve(ctx.h, sched, method="midpoint").unitary
    Uc = ev.unitary_evolve(ctx.h, sched).unitary
    assert np.max(np.abs(Um - Uc)) < 1e-3
    with pytest.raises(ValueError):
        ev.unitary_evolve(ctx.h, sched, method="euler")


def test_composition_and_unitarity(ctx, busy_schedule):
    n = busy_schedule.n_ticks
    m = 1234
    A = ev.unitary_evolve(ctx.h, busy_schedule, stop_tick=m).unitary
    B = ev.unitary_evolve(ctx.h, busy_schedule, start_tick=m).unitary
    U = ev.unitary_evolve(ctx.h, busy_schedule).unitary
    assert np.max(np.abs(B @ A - U)) < 1e-9
    err = np.max(np.abs(U.conj().T @ U - np.eye(len(U))))
    assert err < 1e-8 * max(1.0, n / 1000)
    blocks = ev.block_propagators(ctx.h, busy_schedule, 15)
    assert len(blocks) == -(-n // 15)
    assert np.max(np.abs(ev.ordered_product(np.array(blocks)) - U)) < 1e-9


def test_energy_conserved_without_drives(h):
    rng = np.random.default_rng(1)
    psi = rng.normal(size=h.dimension) + 1j * rng.normal(size=h.dimension)
    psi /= np.linalg.norm(psi)
    H = h.at(4.5)
    U = ev.unitary_evolve(h, render([], 100.0, idle_freq=4.5)).unitary
    e0 = np.vdot(psi, H @ psi).real
    e1 = np.vdot(U @ psi, H @ (U @ psi)).real
    assert abs(e1 - e0) < 1e-8 * abs(e0)


def test_t1_decay_of_single_mode():
    spec = _small_device()
    hs = assemble(spec)
    T1 = 84.0
    sched = render([], T1 * 1e3, idle_freq=5.8, sim_rate=0.01)
    ops = ev.collapse_operators(spec, ev.NoiseModel({COUPLER: T1}), hs.basis)
    assert len(ops) == 1 and ops[0].rate == pytest.approx(1 / (T1 * 1e3))
    rho0 = np.diag([0.0, 1.0]).astype(complex)
    rho = ev.lindblad_evolve(hs, sched, ops, rho0)
    assert abs(rho[1, 1].real - np.exp(-1)) < 1e-4
    assert abs(np.trace(rho) - 1) < 1e-7


def test_relaxation_rates_grow_linearly_with_level():
    spec = _small_device(levels=4)
    hs = assemble(spec)
    ops = ev.collapse_operators(spec, ev.NoiseModel({COUPLER: 10.0}), hs.basis)
    assert [o.level for o in ops] == [1, 2, 3]
    assert np.allclose([o.rate for o in ops], np.array([1, 2, 3]) / 1e4)


def test_zero_rate_channel_matches_unitary(ctx, busy_schedule):
    rng = np.random.default_rng(7)
    rho0 = _random_state(ctx.h.dimension, rng)
    ops = ev.collapse_operators(ctx.spec, ev.NoiseModel(), ctx.basis)
    assert ops == []
    rho = ev.lindblad_evolve(ctx.h, busy_schedule, ops, rho0)
    U = ev.unitary_evolve(ctx.h, busy_schedule).unitary
    assert np.max(np.abs(rho - U @ rho0 @ U.conj().T)) < 1e-8


def test_dephasing_oracle():
    spec = _small_device()
    hs = assemble(spec)
    t_phi = 0.2  # us
    T = 300.0
    ops = ev.collapse_operators(spec, ev.NoiseModel(t_phi={COUPLER: t_phi}), hs.basis)
    rho0 = np.array([[0.3, 0.2 - 0.4j], [0.2 + 0.4j, 0.7]])
    rho = ev.lindblad_evolve(hs, render([], T, idle_freq=5.8), ops, rho0)
    assert np.allclose(np.diag(rho), np.diag(rho0), atol=1e-9)
    ratio = abs(rho[0, 1]) / abs(rho0[0, 1])
    assert abs(ratio / np.exp(-T / (t_phi * 1e3)) - 1) < 0.01


def test_purity_never_increases_under_dephasing(ctx):
    noise = ev.NoiseModel.uniform(ctx.basis.mode_labels, t_phi=0.5)
    ops = ev.collapse_operators(ctx.spec, noise, ctx.basis, kinds=("dephasing",))
    d = ctx.h.dimension
    psi = np.zeros(d, complex)
    psi[:4] = [0.6, 0.5j, 0.4, -0.48]
    psi /= np.linalg.norm(psi)
    rho = np.outer(psi, psi.conj())
    purity = [np.trace(rho @ rho).real]
    for _ in range(4):
        rho = ev.lindblad_evolve(ctx.h, render([], 20.0, idle_freq=5.8), ops, rho)
        purity.append(np.trace(rho @ rho).real)
    assert np.all(np.diff(purity) <= 1e-12)
    assert purity[-1] < purity[0]


def test_split_matches_superoperator_reference():
    spec = _small_device(levels=3, qubit=True)
    hs = assemble(spec)
    # the reference is piecewise constant per tick, so keep the carrier out of it
    sched = render([FluxSegment(1.0, FluxPulseSpec(12.0, 3.0, op_freq=4.7))], 15.0)
    noise = ev.NoiseModel.uniform(hs.basis.mode_labels, t1=0.5, t_phi=0.8)
    ops = ev.collapse_operators(spec, noise, hs.basis)
    rho0 = _random_state(hs.dimension, np.random.default_rng(2), rank=2)
    a = ev.lindblad_evolve(hs, sched, ops, rho0, method="split", block_ticks=3)
    b = ev.lindblad_evolve(hs, sched, ops, rho0, method="superoperator")
    assert np.max(np.abs(a - b)) < 1e-4
    assert abs(np.trace(a) - 1) < 1e-7


def test_rejects_unphysical_initial_state(h):
    rho = np.zeros((h.dimension, h.dimension))
    with pytest.raises(ValueError):
        ev.lindblad_evolve(h, render([], 1.0), [], rho)
    rho[0, 0], rho[1, 1] = 1.5, -0.5
    with pytest.raises(ValueError):
        ev.lindblad_evolve(h, render([], 1.0), [], rho)


def test_charge_dispersion_against_direct_formula():
    r, ec = 50.0, 0.3
    for m in range(4):
        direct = ((-1) ** m * ec * 2 ** (4 * m + 5) / factorial(m)
                  * np.sqrt(2 / np.pi) * (r / 2) ** (m / 2 + 3 / 4) * np.exp(-np.sqrt(8 * r)))
        assert ev.charge_dispersion(m, r, ec) == pytest.approx(direct, rel=1e-12)
    # neighbouring levels: ratio -16 sqrt(r/2)
    assert ev.charge_dispersion(1, r, ec) / ev.charge_dispersion(0, r, ec) == pytest.approx(-80.0)
    signs = np.sign([ev.charge_dispersion(m, r, ec) for m in range(5)])
    assert np.array_equal(signs, [1, -1, 1, -1, 1])


def test_dephasing_rates(device):
    noise = ev.NoiseModel.uniform(device.mode_labels, 84.0, 124.0)
    for m in device.mode_labels:
        assert np.allclose(noise.dephasing_rates(device, m), 1 / 124e3)
    noisy = ev.NoiseModel.uniform(device.mode_labels, 84.0, 124.0, charge_noise=6e-5)
    assert np.allclose(noisy.dephasing_rates(device, "q1"), 1 / 124e3)
    c = noisy.dephasing_rates(device, COUPLER)
    assert np.all(np.diff(c) > 0) and c[0] > 1 / 124e3
    r = noisy.ej_ec(device, COUPLER)
    eps = [ev.charge_dispersion(m, r, 0.3) for m in range(4)]
    assert np.allclose(c - 1 / 124e3, np.pi * 6e-5 * np.abs(TWO_PI * np.array(eps)))


def test_noise_model_validation(device, h):
    with pytest.raises(ValueError):
        ev.NoiseModel({"q1": -1.0})
    with pytest.raises(ValueError):
        ev.NoiseModel(charge_noise=-1e-5)
    spec = DeviceSpec((ModeSpec(COUPLER, 5.0, 0.0, 3),), {})
    with pytest.raises(ValueError):
        ev.collapse_operators(spec, ev.NoiseModel(charge_noise=1e-4), assemble(spec).basis)


def test_tomography_of_identity_and_unitary(ctx):
    V = ctx.idle_vectors
    ch = ev.process_tomography(lambda b: b, V)
    assert np.allclose(ch.superop, np.eye(64), atol=1e-12)
    U = ev.unitary_evolve(ctx.h, render([], 3.0, idle_freq=4.6)).unitary
    ch = ev.process_tomography(lambda b: U @ b @ U.conj().T, V)
    B = V.conj().T @ U @ V
    assert np.max(np.abs(ch.superop - np.kron(B, B.conj()))) < 1e-8


def test_ccphase_noise_channel_is_cptp(ctx, ccphase_schedule):
    noise = reference_noise()
    ops = ev.collapse_operators(ctx.spec, noise, ctx.basis)
    bu = ev.block_propagators(ctx.h, ccphase_schedule)
    V = ctx.idle_vectors
    inputs = np.einsum("ai,bi->iab", V, V.conj())
    out = ev.lindblad_evolve(ctx.h, ccphase_schedule, ops, inputs, block_unitaries=bu,
                             validate=False)
    # the full-space map preserves trace
    assert np.max(np.abs(np.trace(out, axis1=1, axis2=2) - 1)) < 1e-6
    noisy_channel, _ = ctx.noisy_channel(ccphase_schedule, noise, block_unitaries=bu)
    # restricted to the computational subspace the trace deficit is the leaked population
    kept = np.einsum("ai,kab,bi->k", V.conj(), out, V).real
    tr = np.einsum("iik->k", noisy_channel.superop.reshape(8, 8, 64)).real[::9]
    assert np.allclose(tr, kept, atol=1e-9)
    assert noisy_channel.choi_min_eigenvalue() > -1e-8
    rng = np.random.default_rng(11)
    for _ in range(5):
        out = noisy_channel.apply(_random_state(8, rng))
        assert np.linalg.eigvalsh(0.5 * (out + out.conj().T)).min() > -1e-8
