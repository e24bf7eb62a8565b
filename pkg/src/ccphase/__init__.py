"""Three transmons on a shared tunable coupler: conditional shifts, refocused
CPHASE/CCPHASE synthesis, and closed/open-system gate simulation."""

from .hilbert import (COUPLER, QUBITS, DeviceSpec, ModeSpec, TruncatedBasis, build_basis,
                      computational_labels, default_device, ladder_operator, number_operator)
from .hamiltonian import (AdiabaticFrequencies, DiabaticEvent, HamiltonianSet, SpectrumTrack,
                          TrackingError, assemble, computational_frequencies, eigensolve,
                          track_adiabatic)
from .shifts import PhaseVector, ShiftCurve, accumulated_phases, shift_curve
from .pulses import (ControlSchedule, DragPulseSpec, DriveSegment, FluxPulseSpec, FluxSegment,
                     drag_pulse, flux_pulse, render)
from .evolution import (NoiseModel, Propagator, QuantumChannel, collapse_operators,
                        lindblad_evolve, process_tomography, unitary_evolve)
from .metrics import (GateReport, LeakageReport, extract_phases, fidelity, flip_fidelity,
                      leakage_report)
from .refocus import (CCPHASE_FRAMES, ChiCalibration, GatePlan, InfeasibleError, calibrate_chis,
                      conjugate_frame, plan_gate, sign_table, solve_durations)
from .pipeline import GateContext, PulseDefaults

__version__ = "0.1.0"
