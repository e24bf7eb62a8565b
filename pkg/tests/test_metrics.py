import json

import numpy as np
import pytest

from ccphase import evolution as ev
from ccphase.metrics import (BITS, IDX, channel_leakage, extract_phases, fidelity, flip_fidelity,
                             leakage_report, target_unitary, unwrap_to, z_diagonal)
from ccphase.shifts import PhaseVector

from conftest import CCPHASE, CPHASE13


def _near_diagonal(rng, target, eps=0.05):
    """Unitary close to ``target``: target times exp(-i eps H) with H random Hermitian."""
    A = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    H = 0.5 * (A + A.conj().T)
    e, v = np.linalg.eigh(H)
    return target @ (v * np.exp(-1j * eps * e)) @ v.conj().T


def test_exact_ccphase_phases():
    ph, th = extract_phases(target_unitary(CCPHASE))
    assert np.allclose(ph.as_array(), [0, 0, 0, np.pi], atol=1e-12)
    assert np.allclose(th, 0)


def test_cphase_with_local_rotations_is_gauge_removed():
    th = np.array([0.3, -1.1, 2.0])
    U = 1.7j * target_unitary(CPHASE13, th)  # global phase is gauged out too
    ph, got = extract_phases(U)
    assert np.allclose(ph.as_array(), [0, np.pi, 0, 0], atol=1e-12)
    assert np.allclose(got, th)


def test_extract_rejects_off_diagonal():
    X = np.eye(8)[::-1]
    with pytest.raises(ValueError):
        extract_phases(X)
    with pytest.raises(ValueError):
        extract_phases(np.eye(4))


def test_target_has_unit_fidelity():
    F = fidelity(target_unitary(CCPHASE), CCPHASE)
    assert abs(F - 1) < 1e-10


def test_local_z_rotations_are_free():
    th = np.array([0.4, 2.5, -0.9])
    F, z = fidelity(target_unitary(CCPHASE, th), CCPHASE, return_angles=True)
    assert abs(F - 1) < 1e-10
    assert np.allclose(np.angle(np.exp(1j * (z - th))), 0, atol=1e-5)


def test_uniform_amplitude_loss_closed_form():
    """U = target * sqrt(0.99): |Tr M|^2 = 64 * 0.99 and Tr M M^dag = 8 * 0.99."""
    U = np.sqrt(0.99) * target_unitary(CCPHASE)
    assert fidelity(U, CCPHASE) == pytest.approx((64 * 0.99 + 8 * 0.99) / 72, abs=1e-12)


def test_fidelity_matches_entanglement_fidelity_oracle():
    rng = np.random.default_rng(4)
    U = _near_diagonal(rng, target_unitary(CPHASE13))
    F, z = fidelity(U, CPHASE13, return_angles=True)
    W = target_unitary(CPHASE13, z)
    fe = abs(np.trace(W.conj().T @ U)) ** 2 / 64  # <Phi|(1 x U) Phi> for the corrected gate
    assert F == pytest.approx((8 * fe + 1) / 9, abs=1e-12)
    # no other local frame does better
    for th in rng.uniform(-np.pi, np.pi, size=(200, 3)):
        W = target_unitary(CPHASE13, th)
        assert (abs(np.trace(W.conj().T @ U)) ** 2 + 8) / 72 <= F + 1e-12


def test_channel_and_block_fidelities_agree():
    rng = np.random.default_rng(5)
    U = 0.995 * _near_diagonal(rng, target_unitary(CCPHASE), 0.03)
    fb = fidelity(U, CCPHASE)
    fc = fidelity(ev.QuantumChannel.from_unitary(U), CCPHASE)
    assert fb == pytest.approx(fc, abs=1e-10)
    with pytest.raises(ValueError):
        fidelity(ev.QuantumChannel.from_unitary(np.eye(4)), CCPHASE)


def test_fidelity_invariant_under_extra_z(cphase_report):
    B = cphase_report.block
    rng = np.random.default_rng(6)
    for _ in range(3):
        Z = z_diagonal(rng.uniform(-np.pi, np.pi, 3))
        assert abs(fidelity(Z[:, None] * B, CPHASE13) - cphase_report.fidelity) < 1e-8


def test_flip_fidelity():
    X1 = np.eye(8)[np.arange(8) ^ 4]
    assert flip_fidelity(X1, [0]) == pytest.approx(1.0, abs=1e-12)
    Z = z_diagonal([0.2, -0.7, 1.3])
    assert flip_fidelity(Z[:, None] * X1, [0]) == pytest.approx(1.0, abs=1e-10)
    assert flip_fidelity(np.eye(8), [0]) == pytest.approx(8 / 72)


def test_leakage_of_identity_is_zero(ctx):
    r = leakage_report(np.eye(ctx.h.dimension), ctx.idle_vectors)
    assert abs(r.total) < 1e-12 and np.allclose(r.retained, 1)


def test_leakage_partition(ctx, cphase_report):
    sched = ctx.single_pulse_schedule(60.0)
    U = ev.unitary_evolve(ctx.h, sched).unitary
    r = leakage_report(U, ctx.idle_vectors)
    assert np.allclose(r.out_of_space + r.within_space + r.retained, 1, atol=1e-9)
    # with a unitary channel on the subspace, channel leakage is the mean out-of-space loss
    B = ctx.idle_vectors.conj().T @ U @ ctx.idle_vectors
    assert channel_leakage(ev.QuantumChannel.from_unitary(B)) == pytest.approx(r.total_out / 8,
                                                                                abs=1e-8)


def test_single_flux_pulse_losses_sit_on_111_and_011(ctx):
    U = ev.unitary_evolve(ctx.h, ctx.single_pulse_schedule(60.0)).unitary
    r = leakage_report(U, ctx.idle_vectors)
    loss = r.out_of_space + r.within_space
    top = set(np.argsort(loss)[-2:])
    assert top == {IDX[(1, 1, 1)], IDX[(0, 1, 1)]}


def test_unwrap_to_reference():
    m = PhaseVector(0.1, -3.0, 3.0, 0.0)
    r = PhaseVector(0.0, 2 * np.pi, -2 * np.pi, 2.9 * np.pi)
    u = unwrap_to(m, r)
    assert np.allclose(u.as_array(), [0.1, 2 * np.pi - 3.0, -2 * np.pi + 3.0, 2 * np.pi])


def test_report_serializes(tmp_path, cphase_report):
    p = tmp_path / "r.json"
    cphase_report.to_json(p)
    d = json.loads(p.read_text())
    assert d["fidelity"] == pytest.approx(cphase_report.fidelity)
    assert set(d["phases"]) == {"phi_011", "phi_101", "phi_110", "phi_ccp"}
    assert len(d["leakage"]["out_of_space"]) == 8


def test_bits_ordering():
    assert BITS.tolist()[5] == [1, 0, 1]
    assert IDX[(0, 1, 1)] == 3
