"""
Two-tone gradient entangling gate on a two-ion mode.

Tones at f0 +/- (f_r + delta) give the spin-dependent force

    H = sum_i (Omega_i / 2) sigma_phi,i (a^dag e^{-i(delta t - theta_k)} + h.c.)

where theta_k is the motional (tone-difference) phase of segment k. Flipping
theta_k by pi reverses the force and reflects the phase-space loop. The
numerical propagator works in the frame rotating with delta, where each
segment Hamiltonian is time independent.

Two-qubit basis ordering is {uu, ud, du, dd}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .dynamics import (
    SIGMA_PLUS,
    SIGMA_Z,
    SpinMotionState,
    ThermalState,
    annihilation,
    check_density,
    choose_cutoff,
    spin_op,
)
from .errors import CutoffError, InvariantError

TWO_PI = 2 * math.pi
TARGET_PHASE = math.pi / 2

UU, UD, DU, DD = 0, 1, 2, 3
PSI_TARGET = np.array([-1j, 0, 0, 1]) / math.sqrt(2)
RHO_DOWN_DOWN = np.diag([0.0, 0.0, 0.0, 1.0]).astype(complex)


@dataclass(frozen=True)
class Segment:
    duration: float  # s
    motional_phase: float = 0.0  # rad
    sideband_rate: float = 0.0  # rad/s, multiplied by each ion's participation sign


@dataclass(frozen=True)
class GateSchedule:
    mode_frequency: float  # Hz
    gate_detuning_delta: float  # Hz
    segments: tuple[Segment, ...]
    participation: tuple[float, float] = (1.0, -1.0)
    spin_phase: float = math.pi / 2

    def __post_init__(self):
        if any(not s.duration > 0 for s in self.segments):
            raise ValueError("segment durations must be positive")

    @classmethod
    def two_segment(cls, delta=4.9e3, segment_duration=None, sideband_rate=0.0, mode_frequency=7.6e6):
        """Two equal segments, the second with the force reversed.

        ``segment_duration`` defaults to 1/delta (exact loop closure).
        """
        t = 1 / delta if segment_duration is None else segment_duration
        segs = (Segment(t, 0.0, sideband_rate), Segment(t, math.pi, sideband_rate))
        return cls(mode_frequency, delta, segs)

    @classmethod
    def single_segment(cls, delta=4.9e3, duration=None, sideband_rate=0.0, mode_frequency=7.6e6):
        t = 2 / delta if duration is None else duration
        return cls(mode_frequency, delta, (Segment(t, 0.0, sideband_rate),))

    def with_rate(self, rate: float) -> "GateSchedule":
        return replace(self, segments=tuple(replace(s, sideband_rate=rate) for s in self.segments))

    @property
    def total_duration(self) -> float:
        return math.fsum(s.duration for s in self.segments)

    def closure_residual(self) -> list[float]:
        """Per segment, |delta * T - nearest integer| (0 means a closed loop)."""
        return [abs(self.gate_detuning_delta * s.duration - round(self.gate_detuning_delta * s.duration))
                for s in self.segments]


@dataclass(frozen=True)
class NoiseModel:
    motional_freq_jitter_rms: float = 0.0  # Hz, quasi-static per shot
    residual_field_amplitude: float = 0.0  # T, RMS per tone and ion
    heating_rate: float = 0.0  # quanta/s
    shots: int = 1000
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.motional_freq_jitter_rms, self.residual_field_amplitude, self.heating_rate) < 0:
            raise ValueError("noise magnitudes must be non-negative")
        if self.shots < 1:
            raise ValueError("shots must be at least 1")


# --- closed-form solution ----------------------------------------------------

def _segment_integrals(schedule: GateSchedule, delta_offset: float = 0.0):
    """Per-segment force integrals G_k and intra-segment phases, angular detuning."""
    d = TWO_PI * (schedule.gate_detuning_delta + delta_offset)
    t0 = 0.0
    out = []
    for s in schedule.segments:
        amp = 0.5 * s.sideband_rate
        t1 = t0 + s.duration
        if d == 0:
            G = amp * np.exp(1j * s.motional_phase) * s.duration
            own = 0.0
        else:
            G = amp * 1j * np.exp(1j * s.motional_phase) * (np.exp(-1j * d * t1) - np.exp(-1j * d * t0)) / d
            own = amp**2 * (d * s.duration - math.sin(d * s.duration)) / d**2
        out.append((t0, t1, G, own))
        t0 = t1
    return out


def geometric_phase(schedule: GateSchedule, delta_offset: float = 0.0) -> float:
    """Relative phase accumulated between the two parity sectors of sigma_phi sigma_phi."""
    segs = _segment_integrals(schedule, delta_offset)
    phi = 0.0
    for k, (_, _, Gk, own) in enumerate(segs):
        phi += own
        for _, _, Gj, _ in segs[:k]:
            phi += (np.conj(Gk) * Gj).imag
    return 4 * abs(schedule.participation[0] * schedule.participation[1]) * phi


def calibrate_rate(schedule: GateSchedule, target_phase: float = TARGET_PHASE) -> float:
    """Common segment rate (rad/s) giving ``target_phase`` of geometric phase."""
    if target_phase == 0:
        return 0.0
    unit = geometric_phase(schedule.with_rate(1.0))
    return math.sqrt(target_phase / unit)


def loop_trajectory(schedule: GateSchedule, times, delta_offset: float = 0.0) -> np.ndarray:
    """Phase-space displacement per unit spin eigenvalue at each time."""
    d = TWO_PI * (schedule.gate_detuning_delta + delta_offset)
    segs = _segment_integrals(schedule, delta_offset)
    times = np.asarray(times, dtype=float)
    out = np.zeros(times.shape, dtype=complex)
    acc = 0.0 + 0.0j
    for (t0, t1, G, _), s in zip(segs, schedule.segments):
        inside = (times > t0) & (times <= t1)
        amp = 0.5 * s.sideband_rate * np.exp(1j * s.motional_phase)
        tt = times[inside]
        partial = amp * 1j * (np.exp(-1j * d * tt) - np.exp(-1j * d * t0)) / d if d else amp * (tt - t0)
        out[inside] = -1j * (acc + partial)
        acc += G
    out[times > (segs[-1][1] if segs else 0.0)] = -1j * acc
    return out


def _sigma_phi(phase: float) -> np.ndarray:
    sp = SIGMA_PLUS * np.exp(1j * phase)
    return sp + sp.conj().T


def _spin_eigenbasis(schedule: GateSchedule):
    """Unitary whose columns are product eigenvectors of sigma_phi on each ion, and S eigenvalues."""
    w, v = np.linalg.eigh(_sigma_phi(schedule.spin_phase))
    V = np.kron(v, v)
    p1, p2 = schedule.participation
    s = np.array([p1 * a + p2 * b for a in w for b in w])
    return V, s


@dataclass
class AnalyticGate:
    times: np.ndarray
    branch_displacements: dict  # S eigenvalue -> complex trajectory
    geometric_phase: float
    rho: np.ndarray


def analytic_ms(
    schedule: GateSchedule,
    initial_nbar: float = 0.0,
    initial_spin: np.ndarray = RHO_DOWN_DOWN,
    n_times: int = 401,
    delta_offset: float = 0.0,
) -> AnalyticGate:
    """Closed-form spin-dependent-force solution for an ideal schedule."""
    segs = _segment_integrals(schedule, delta_offset)
    phi = 0.0
    for k, (_, _, Gk, own) in enumerate(segs):
        phi += own + sum((np.conj(Gk) * Gj).imag for _, _, Gj, _ in segs[:k])
    G = sum((g for _, _, g, _ in segs), 0.0 + 0.0j)
    V, s = _spin_eigenbasis(schedule)
    rho_e = V.conj().T @ np.asarray(initial_spin, dtype=complex) @ V
    sa, sb = s[:, None], s[None, :]
    factor = np.exp(-1j * phi * (sa**2 - sb**2)) * np.exp(-abs(G) ** 2 * (sa - sb) ** 2 * (initial_nbar + 0.5))
    rho = V @ (rho_e * factor) @ V.conj().T
    times = np.linspace(0.0, schedule.total_duration, n_times)
    unit = loop_trajectory(schedule, times, delta_offset)
    branches = {float(v): v * unit for v in np.unique(s)}
    chi = 4 * abs(schedule.participation[0] * schedule.participation[1]) * phi
    return AnalyticGate(times, branches, chi, rho)


# --- numerical propagation ---------------------------------------------------

@lru_cache(maxsize=16)
def _operators(cutoff: int, spin_phase: float):
    a = annihilation(cutoff)
    eye_s = np.eye(4)
    number = np.kron(eye_s, np.diag(np.arange(cutoff + 1.0)))
    sphi = [spin_op(_sigma_phi(spin_phase), i, 2) for i in range(2)]
    sz = [np.kron(spin_op(SIGMA_Z, i, 2), np.eye(cutoff + 1)) for i in range(2)]
    return a, number, sphi, sz


def gate_hamiltonian(schedule, segment: Segment, cutoff: int, delta_offset=0.0, zeeman=(0.0, 0.0)):
    """Rotating-frame segment Hamiltonian (rad/s); ``zeeman`` are per-ion shifts in Hz."""
    a, number, sphi, sz = _operators(cutoff, schedule.spin_phase)
    d = TWO_PI * (schedule.gate_detuning_delta + delta_offset)
    quad = a.T * np.exp(1j * segment.motional_phase)
    quad = quad + quad.conj().T
    spin = sum(p * s for p, s in zip(schedule.participation, sphi))
    H = -d * number + 0.5 * segment.sideband_rate * np.kron(spin, quad)
    for shift, z in zip(zeeman, sz):
        if shift:
            H = H + 0.5 * TWO_PI * shift * z
    return H


def _trace_motion(rho, cutoff):
    return np.einsum("injn->ij", rho.reshape(4, cutoff + 1, 4, cutoff + 1))


def _trace_spin(rho, cutoff):
    return np.einsum("imin->mn", rho.reshape(4, cutoff + 1, 4, cutoff + 1))


def _check_spin_input(initial_spin):
    rho = np.asarray(initial_spin, dtype=complex)
    if rho.shape != (4, 4):
        raise InvariantError("two-qubit density matrix must be 4x4")
    check_density(rho)
    return rho


def propagate_ideal(schedule, initial_spin, initial_motion: ThermalState, delta_offset=0.0, cutoff=None):
    """Exact density-matrix propagation; returns the final SpinMotionState."""
    rho_s = _check_spin_input(initial_spin)
    if cutoff is None:
        cutoff = max(choose_cutoff(initial_motion.nbar), initial_motion.cutoff)
    motion = initial_motion.padded(cutoff)
    state = SpinMotionState.product(rho_s, motion, 2)
    rho = state.rho
    for seg in schedule.segments:
        U = expm(-1j * gate_hamiltonian(schedule, seg, cutoff, delta_offset) * seg.duration)
        rho = U @ rho @ U.conj().T
        check_density(rho)
        top = np.real(np.trace(_trace_spin(rho, cutoff)[-1:, -1:]))
        if top > 1e-4:
            raise CutoffError(f"top Fock level population {top:.2e} at cutoff {cutoff}")
    return SpinMotionState(rho, 2, cutoff)


def _shift_sampler(noise, shift_tensors):
    """Per-shot AC-Zeeman shifts (Hz) for both ions from random residual fields."""
    def sample(rng):
        out = []
        for _ in range(2):
            total = 0.0
            for S in shift_tensors:
                b = rng.normal(0.0, noise.residual_field_amplitude / math.sqrt(3), 3)
                total += float(b @ S @ b)
            out.append(total)
        return tuple(out)
    return sample


def _trajectory(schedule, psi_spin, n0, delta_offset, zeeman, gamma, rng, steps_per_segment):
    """One quantum-jump trajectory; returns the final spin reduced density matrix."""
    cutoff = n0 + 20
    while True:
        psi = np.kron(psi_spin, np.eye(cutoff + 1)[n0]).astype(complex)
        a, number, _, _ = _operators(cutoff, schedule.spin_phase)
        A = np.kron(np.eye(4), a)
        Ad = A.conj().T
        r = rng.random()
        for seg in schedule.segments:
            H = gate_hamiltonian(schedule, seg, cutoff, delta_offset, zeeman)
            if gamma:
                H = H - 0.5j * gamma * (2 * number + np.eye(H.shape[0]))
            dt = seg.duration / steps_per_segment
            P = expm(-1j * H * dt)
            for _ in range(steps_per_segment):
                psi = P @ psi
                if gamma and np.vdot(psi, psi).real < r:
                    up, down = Ad @ psi, A @ psi
                    w_up, w_down = np.vdot(up, up).real, np.vdot(down, down).real
                    psi = up if rng.random() * (w_up + w_down) < w_up else down
                    psi = psi / math.sqrt(np.vdot(psi, psi).real)
                    r = rng.random()
        psi = psi / math.sqrt(np.vdot(psi, psi).real)
        m = psi.reshape(4, cutoff + 1)
        if np.sum(np.abs(m[:, -1]) ** 2) <= 1e-4:
            return m @ m.conj().T
        if cutoff > 400:
            raise CutoffError("trajectory escapes the Fock window")
        cutoff += 20


@dataclass
class NoisyGateResult:
    rho: np.ndarray
    fidelity: float
    fidelity_stderr: float
    shot_fidelities: np.ndarray = field(repr=False)


def _fsum_matrices(mats):
    stack = np.asarray(mats)
    re = np.vectorize(lambda i, j: math.fsum(stack[:, i, j].real))
    im = np.vectorize(lambda i, j: math.fsum(stack[:, i, j].imag))
    i, j = np.indices(stack.shape[1:])
    return (re(i, j) + 1j * im(i, j)) / len(mats)


def propagate_noisy(
    schedule,
    initial_spin,
    initial_motion: ThermalState,
    noise: NoiseModel,
    shift_tensors=(),
    steps_per_segment: int = 40,
) -> NoisyGateResult:
    """Monte Carlo average over shots with quasi-static noise and quantum-jump heating.

    Each shot owns child generators spawned from ``noise.rng_seed`` for the
    mode-frequency offset, the residual fields, and the trajectory, in that
    order, so scaling one noise source keeps the others' draws fixed.
    """
    rho_s = _check_spin_input(initial_spin)
    w, v = np.linalg.eigh(rho_s)
    w = np.clip(w, 0, None)
    w = w / w.sum()
    motion_p = initial_motion.probs / initial_motion.probs.sum()
    sample_shift = _shift_sampler(noise, shift_tensors)
    shots = []
    fids = []
    for child in np.random.SeedSequence(noise.rng_seed).spawn(noise.shots):
        g_jit, g_field, g_traj = (np.random.default_rng(s) for s in child.spawn(3))
        offset = -noise.motional_freq_jitter_rms * g_jit.standard_normal()
        zeeman = sample_shift(g_field) if noise.residual_field_amplitude and shift_tensors else (0.0, 0.0)
        k = g_traj.choice(4, p=w)
        n0 = int(g_traj.choice(motion_p.size, p=motion_p))
        rho_k = _trajectory(schedule, v[:, k], n0, offset, zeeman, noise.heating_rate, g_traj, steps_per_segment)
        shots.append(rho_k)
        fids.append(float(np.real(PSI_TARGET.conj() @ rho_k @ PSI_TARGET)))
    rho = _fsum_matrices(shots)
    fids = np.array(fids)
    stderr = float(fids.std(ddof=1) / math.sqrt(len(fids))) if len(fids) > 1 else float("nan")
    return NoisyGateResult(rho, state_fidelity(rho, check=False), stderr, fids)


def ms_propagate(
    schedule: GateSchedule,
    initial_spin=RHO_DOWN_DOWN,
    initial_motion: ThermalState | None = None,
    noise: NoiseModel | None = None,
    delta_offset: float = 0.0,
    shift_tensors=(),
) -> np.ndarray:
    """Motion-traced two-qubit density matrix after the gate.

    ``delta_offset`` (Hz) adds a fixed error to the gate detuning. With
    ``noise``, per-shot results are averaged (see ``propagate_noisy``);
    ``shift_tensors`` map residual field vectors to qubit shifts, one per tone.
    """
    if initial_motion is None:
        initial_motion = ThermalState.thermal(0.0)
    if not schedule.segments:
        return _check_spin_input(initial_spin).copy()
    if noise is None:
        state = propagate_ideal(schedule, initial_spin, initial_motion, delta_offset)
        return _trace_motion(state.rho, state.cutoff)
    if delta_offset:
        schedule = replace(schedule, gate_detuning_delta=schedule.gate_detuning_delta + delta_offset)
    return propagate_noisy(schedule, initial_spin, initial_motion, noise, shift_tensors).rho


def state_fidelity(rho, check: bool = True) -> float:
    """1/2 (rho_uu,uu + rho_dd,dd) + |rho_uu,dd|."""
    rho = np.asarray(rho)
    if check:
        _check_spin_input(rho)
    return float(0.5 * (rho[UU, UU].real + rho[DD, DD].real) + abs(rho[UU, DD]))


def trace_distance(a, b) -> float:
    return float(0.5 * np.abs(np.linalg.eigvalsh(np.asarray(a) - np.asarray(b))).sum())


def motion_restoration(schedule, initial_motion: ThermalState, initial_spin=RHO_DOWN_DOWN) -> float:
    """Trace distance between the final reduced motional state and the input."""
    state = propagate_ideal(schedule, initial_spin, initial_motion)
    rho_m = _trace_spin(state.rho, state.cutoff)
    return trace_distance(rho_m, np.diag(initial_motion.padded(state.cutoff).probs))
