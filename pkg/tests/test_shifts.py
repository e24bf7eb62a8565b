import numpy as np
import pytest
from hypothesis import given, strategies as st

from ccphase import evolution as ev
from ccphase.hamiltonian import assemble, computational_frequencies, eigensolve, track_adiabatic
from ccphase.hilbert import TWO_PI, default_device
from ccphase.pulses import render
from ccphase.shifts import PhaseVector, ShiftCurve, accumulated_phases, shift_curve, wrap


@pytest.fixture(scope="module")
def curve(ctx):
    return ctx.shifts


def test_idle_shifts_are_small(curve):
    assert np.all(np.abs(curve.at(5.8)) < 1e-4)


def test_decoupled_device_has_no_shifts():
    h = assemble(default_device(couplings={}))
    c = shift_curve(computational_frequencies(track_adiabatic(h, np.linspace(4.2, 6.2, 41))))
    assert np.max(np.abs(c.stack())) < 1e-12


def test_definition_uses_adiabatic_frequencies(ctx, curve):
    f = computational_frequencies(ctx.track)
    k = 150
    c = f.curves
    chi_110 = c[(1, 1, 0)][k] - c[(1, 0, 0)][k] - c[(0, 1, 0)][k]
    total = c[(1, 1, 1)][k] - c[(1, 0, 0)][k] - c[(0, 1, 0)][k] - c[(0, 0, 1)][k]
    assert np.isclose(curve.chi_110[k], chi_110)
    assert np.isclose(curve.chi_011[k] + curve.chi_101[k] + curve.chi_110[k] + curve.chi_ccp[k],
                      total)


def test_shifts_peak_below_operation_window():
    """Where the strongest shifts of the reference device sit (wider grid)."""
    h = assemble(default_device())
    grid = np.linspace(3.9, 6.2, 691)
    c = shift_curve(computational_frequencies(track_adiabatic(h, grid, idle_freq=5.8)))
    assert np.max(np.abs(c.chi_011)) > 0.120
    assert np.max(np.abs(c.chi_ccp)) > 0.150


def test_constant_idle_trajectory(curve):
    t = np.linspace(0, 100, 3001)
    ph = accumulated_phases(curve, t, np.full_like(t, 5.8))
    assert np.all(np.abs(ph.as_array()) < 0.1)


def test_zero_duration_gives_zero(curve):
    assert accumulated_phases(curve, [0.0], [5.8]) == PhaseVector()


def test_trajectory_outside_grid_raises(curve):
    with pytest.raises(ValueError):
        accumulated_phases(curve, [0.0, 1.0], [4.0, 4.0])


def test_simpson_additivity(ctx, curve):
    sched = ctx.single_pulse_schedule(40.0)
    t = np.linspace(0, sched.duration, 1201)
    w = sched.coupler_at(t)
    whole = accumulated_phases(curve, t, w).as_array()
    parts = (accumulated_phases(curve, t[:601], w[:601]).as_array()
             + accumulated_phases(curve, t[600:], w[600:]).as_array())
    assert np.max(np.abs(whole - parts)) < 1e-9


def test_flat_top_contribution_is_linear(ctx):
    ph = {w: ctx.integrated_phases(ctx.single_pulse_schedule(w)).as_array() for w in (40, 60, 80)}
    a, b = ph[60] - ph[40], ph[80] - ph[40]
    assert np.allclose(b, 2 * a, rtol=0.01)


def test_shifts_match_unitary_phase_rates(ctx, curve):
    """Cross-check against the diagonal phases of evolutions parked at 4.5 GHz."""
    w = 4.5
    k = int(np.argmin(np.abs(ctx.track.grid - w)))
    assert abs(ctx.track.grid[k] - w) < 1e-9
    _, v = eigensolve(ctx.h, w)
    cols = [ctx.track.map_at(k)[lab] for lab in ctx.comp_labels]
    V = v[:, cols]
    phases = []
    for T in (5.0, 10.0):
        sched = render([], T, idle_freq=w)
        U = ev.unitary_evolve(ctx.h, sched).unitary
        d = np.angle(np.diag(V.conj().T @ U @ V))
        phases.append(d - d[0])
    rate = wrap(phases[1] - phases[0]) / 5.0  # -2 pi * frequency, rad/ns
    f = -rate / TWO_PI
    chi = np.array([f[3] - f[1] - f[2], f[5] - f[1] - f[4], f[6] - f[2] - f[4]])
    ccp = f[7] - f[1] - f[2] - f[4] - chi.sum()
    ref = curve.at(w)
    assert np.allclose(np.r_[chi, ccp], ref, rtol=0.02)


def test_phase_vector_arithmetic():
    a = PhaseVector(1.0, 2.0, 3.0, 4.0)
    b = PhaseVector.from_array([0.5, 0.5, 0.5, 0.5])
    assert (a - b) + b == a
    assert a.to_dict()["phi_ccp"] == 4.0
    assert np.all(np.abs(PhaseVector(7.0, -7.0, np.pi, -np.pi).wrapped().as_array()) <= np.pi)


@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_wrap_range_and_congruence(x):
    y = float(wrap(x))
    assert -np.pi < y <= np.pi
    assert abs(np.sin(x) - np.sin(y)) < 1e-9 and abs(np.cos(x) - np.cos(y)) < 1e-9


def test_csv_export(tmp_path, curve):
    p = tmp_path / "chi.csv"
    curve.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "coupler_freq_ghz,chi_011_ghz,chi_101_ghz,chi_110_ghz,chi_ccp_ghz"
    assert len(lines) == len(curve.grid) + 1


def test_single_point_curve():
    c = ShiftCurve(np.array([4.5]), *(np.array([x]) for x in (1.0, 2.0, 3.0, 4.0)))
    assert np.allclose(c.at(4.5), [1, 2, 3, 4])
