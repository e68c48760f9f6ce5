"""
Carrier and sideband dynamics of one or two spins coupled to one motional mode.

Spin ordering per ion is (up, down); multi-ion spin states use the Kronecker
product in ion order, so two ions span {uu, ud, du, dd}. The full space is
spin (x) Fock with the spin index major. "Bright" means spin down.

Sideband drives sit at f0 + f_r (+ offset). From down they add a phonon
(|d,n> -> |u,n+1>); from up they remove one (|u,n> -> |d,n-1>).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.linalg import expm

from .errors import CutoffError, InvariantError
from .lsq import levenberg_marquardt

DEFAULT_CUTOFF = 30
ESCALATED_CUTOFF = 60
TOP_LEVEL_LIMIT = 1e-4
TAIL_LIMIT = 1e-6

# repump beam along the static field (15 deg from z in the y-z plane), mode
# along the quadrupole principal axis (26.6 deg from x in the x-z plane)
REPUMP_MODE_PROJECTION = math.sin(math.radians(26.6)) * math.cos(math.radians(15))

SIGMA_Z = np.diag([1.0, -1.0])
SIGMA_PLUS = np.array([[0.0, 1.0], [0.0, 0.0]])  # |u><d|


@dataclass(frozen=True)
class MotionalMode:
    frequency: float
    ion_mass: float
    n_ions: int = 1
    mode_vector: tuple[float, ...] = (1.0,)
    fock_cutoff: int = DEFAULT_CUTOFF

    def __post_init__(self):
        if self.n_ions not in (1, 2):
            raise ValueError("n_ions must be 1 or 2")
        if len(self.mode_vector) != self.n_ions:
            raise ValueError("mode_vector length must equal n_ions")
        if abs(math.fsum(v * v for v in self.mode_vector) - 1) > 1e-9:
            raise ValueError("mode_vector must be normalized")
        if self.fock_cutoff < 10:
            raise ValueError("fock_cutoff must be at least 10")
        if not self.frequency > 0 or not self.ion_mass > 0:
            raise ValueError("frequency and mass must be positive")

    @classmethod
    def rocking(cls, frequency, ion_mass, fock_cutoff=DEFAULT_CUTOFF):
        s = 1 / math.sqrt(2)
        return cls(frequency, ion_mass, 2, (s, -s), fock_cutoff)

    def with_cutoff(self, cutoff: int) -> "MotionalMode":
        return MotionalMode(self.frequency, self.ion_mass, self.n_ions, self.mode_vector, cutoff)


def thermal_probs(nbar: float, cutoff: int) -> np.ndarray:
    """Geometric occupation p(n) = nbar^n / (nbar+1)^(n+1) for n = 0..cutoff.

    Defined for nbar > -1/2 as an analytic continuation, which fits rely on
    near nbar = 0.
    """
    r = nbar / (nbar + 1)
    n = np.arange(cutoff + 1)
    return (1 - r) * r**n


def choose_cutoff(nbar: float, base: int = DEFAULT_CUTOFF) -> int:
    """Smallest of (base, escalated) whose thermal tail beyond the cutoff is < 1e-6."""
    for cutoff in (base, max(ESCALATED_CUTOFF, 2 * base)):
        if nbar <= 0 or (nbar / (nbar + 1)) ** (cutoff + 1) < TAIL_LIMIT:
            return cutoff
    raise CutoffError(f"thermal tail for nbar={nbar} exceeds {TAIL_LIMIT} at cutoff {cutoff}")


@dataclass(frozen=True)
class ThermalState:
    """Occupation distribution over Fock levels 0..cutoff (thermal or not)."""

    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < -1e-15):
            raise InvariantError("occupation probabilities must be a non-negative vector")
        if abs(p.sum() - 1) > TAIL_LIMIT:
            raise InvariantError(f"occupation probabilities sum to {p.sum()}")
        object.__setattr__(self, "probs", p)

    @classmethod
    def thermal(cls, nbar: float, cutoff: int | None = None) -> "ThermalState":
        if nbar < 0:
            raise ValueError("nbar must be non-negative")
        if cutoff is None:
            cutoff = choose_cutoff(nbar)
        p = thermal_probs(nbar, cutoff)
        if 1 - p.sum() > TAIL_LIMIT:
            raise CutoffError(f"cutoff {cutoff} truncates {1 - p.sum():.2e} of a thermal nbar={nbar}")
        return cls(p / p.sum())

    @classmethod
    def fock(cls, n: int, cutoff: int = DEFAULT_CUTOFF) -> "ThermalState":
        p = np.zeros(cutoff + 1)
        p[n] = 1.0
        return cls(p)

    @property
    def cutoff(self) -> int:
        return self.probs.size - 1

    @property
    def nbar(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)

    def padded(self, cutoff: int) -> "ThermalState":
        if cutoff < self.cutoff:
            if self.probs[cutoff + 1:].sum() > TAIL_LIMIT:
                raise CutoffError("cannot shrink distribution without losing population")
            p = self.probs[: cutoff + 1]
            return ThermalState(p / p.sum())
        return ThermalState(np.pad(self.probs, (0, cutoff - self.cutoff)))


@dataclass
class SpinMotionState:
    rho: np.ndarray
    n_ions: int
    cutoff: int

    def validate(self, tol_herm=1e-10, tol_trace=1e-8, tol_psd=1e-8):
        check_density(self.rho, tol_herm, tol_trace, tol_psd)
        return self

    @classmethod
    def product(cls, spin_rho, motion: ThermalState, n_ions: int):
        return cls(np.kron(spin_rho, np.diag(motion.probs).astype(complex)), n_ions, motion.cutoff)

    def spin_reduced(self) -> np.ndarray:
        d = 2**self.n_ions
        r = self.rho.reshape(d, self.cutoff + 1, d, self.cutoff + 1)
        return np.einsum("injn->ij", r)

    def motion_reduced(self) -> np.ndarray:
        d = 2**self.n_ions
        r = self.rho.reshape(d, self.cutoff + 1, d, self.cutoff + 1)
        return np.einsum("imin->mn", r)


def check_density(rho, tol_herm=1e-10, tol_trace=1e-8, tol_psd=1e-8):
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvariantError("density matrix must be square")
    if np.max(np.abs(rho - rho.conj().T)) > tol_herm:
        raise InvariantError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol_trace:
        raise InvariantError(f"density matrix trace is {np.trace(rho).real}")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -tol_psd:
        raise InvariantError("density matrix is not positive semidefinite")


# --- operators -------------------------------------------------------------

def annihilation(cutoff: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, cutoff + 1)), 1)


def spin_op(op, ion: int, n_ions: int) -> np.ndarray:
    mats = [op if k == ion else np.eye(2) for k in range(n_ions)]
    return reduce(np.kron, mats)


def spin_down_count(n_ions: int) -> np.ndarray:
    """Number of down spins for each spin basis index."""
    return np.array([bin(k).count("1") for k in range(2**n_ions)], dtype=float)


def sideband_hamiltonian(mode: MotionalMode, sideband_rate: float, offset: float, cutoff: int | None = None):
    """Interaction-picture Hamiltonian (rad/s) for a drive at f0 + f_r + offset.

    ``offset`` is angular (rad/s). Ion i couples with rate sideband_rate * mode_vector[i].
    """
    cutoff = mode.fock_cutoff if cutoff is None else cutoff
    a = annihilation(cutoff)
    eye_m = np.eye(cutoff + 1)
    dim = 2**mode.n_ions * (cutoff + 1)
    H = np.zeros((dim, dim))
    for i, eta in enumerate(mode.mode_vector):
        sp = spin_op(SIGMA_PLUS, i, mode.n_ions)
        sz = spin_op(SIGMA_Z, i, mode.n_ions)
        coupling = 0.5 * sideband_rate * eta * np.kron(sp, a.T)
        H += coupling + coupling.T
        H -= 0.5 * offset * np.kron(sz, eye_m)
    return H


def _block_structure(n_ions: int, cutoff: int):
    """Index groups conserved by the f0 + f_r sideband coupling (n - number of up spins)."""
    n_up = n_ions - spin_down_count(n_ions)
    fock = np.arange(cutoff + 1)
    label = (fock[None, :] - n_up[:, None]).ravel()
    groups = {}
    for idx, lab in enumerate(label):
        groups.setdefault(int(lab), []).append(idx)
    by_size = {}
    for idxs in groups.values():
        by_size.setdefault(len(idxs), []).append(idxs)
    return [np.array(v) for v in by_size.values()]


def block_propagator(H: np.ndarray, duration: float, blocks) -> np.ndarray:
    """exp(-i H t) for a Hamiltonian that is block diagonal on ``blocks``."""
    U = np.zeros(H.shape, dtype=complex)
    for idx in blocks:
        sub = H[idx[:, :, None], idx[:, None, :]]
        w, v = np.linalg.eigh(sub)
        ub = (v * np.exp(-1j * w * duration)[:, None, :]) @ np.conj(np.swapaxes(v, 1, 2))
        U[idx[:, :, None], idx[:, None, :]] = ub
    return U


def propagate(state: SpinMotionState, H: np.ndarray, duration: float) -> SpinMotionState:
    """Exact unitary step rho -> U rho U^dagger."""
    U = expm(-1j * H * duration)
    return SpinMotionState(U @ state.rho @ U.conj().T, state.n_ions, state.cutoff)


# --- carrier ---------------------------------------------------------------

def carrier_rabi(rabi_rate: float, detuning: float, duration: float, initial="down"):
    """(P_down, P_up) after a square carrier pulse.

    ``initial`` is "down", "up", or amplitudes (c_up, c_down).
    """
    if duration < 0:
        raise ValueError("duration must be non-negative")
    if isinstance(initial, str):
        psi = np.array([1.0, 0.0]) if initial == "up" else np.array([0.0, 1.0])
    else:
        psi = np.asarray(initial, dtype=complex)
        psi = psi / np.linalg.norm(psi)
    w_eff = math.hypot(rabi_rate, detuning)
    if w_eff == 0:
        U = np.eye(2)
    else:
        c, s = math.cos(w_eff * duration / 2), math.sin(w_eff * duration / 2)
        # exp(-i t (Omega sx - Delta sz) / 2)
        U = np.array(
            [[c + 1j * detuning / w_eff * s, -1j * rabi_rate / w_eff * s],
             [-1j * rabi_rate / w_eff * s, c - 1j * detuning / w_eff * s]]
        )
    out = U @ psi
    p_up = float(abs(out[0]) ** 2)
    return 1 - p_up, p_up


# --- sideband scans --------------------------------------------------------

@dataclass
class SidebandScan:
    offsets: np.ndarray  # Hz
    signal: np.ndarray  # expected number of down (bright) ions
    sigma: np.ndarray
    initial_spin: str
    n_ions: int
    shots: int | None = None  # set when sigma is projection noise of this many shots

    @property
    def response(self) -> np.ndarray:
        """Number of spins flipped by the sideband pulse."""
        if self.initial_spin == "down":
            return self.n_ions - self.signal
        return self.signal


def _initial_spin_index(initial_spin: str, n_ions: int) -> int:
    if initial_spin not in ("down", "up"):
        raise ValueError(f"initial spin must be 'down' or 'up', got {initial_spin!r}")
    return 2**n_ions - 1 if initial_spin == "down" else 0


def sideband_class_probs(mode, initial_spin, motion_probs, sideband_rate, pulse_duration, offsets, cutoff):
    """Probabilities of k = 0..n_ions down spins after the pulse, for each offset (Hz).

    Returns (probs[len(offsets), n_ions+1], max top-level population).
    """
    n_spin = 2**mode.n_ions
    dim = n_spin * (cutoff + 1)
    s0 = _initial_spin_index(initial_spin, mode.n_ions)
    p0 = np.zeros(dim)
    p0[s0 * (cutoff + 1): (s0 + 1) * (cutoff + 1)] = motion_probs
    blocks = _block_structure(mode.n_ions, cutoff)
    counts = np.repeat(spin_down_count(mode.n_ions), cutoff + 1).astype(int)
    top = np.arange(dim) % (cutoff + 1) == cutoff
    H0 = sideband_hamiltonian(mode, sideband_rate, 0.0, cutoff)
    sz_total = np.diag(np.kron(sum(spin_op(SIGMA_Z, i, mode.n_ions) for i in range(mode.n_ions)), np.eye(cutoff + 1)))
    out = np.zeros((len(offsets), mode.n_ions + 1))
    top_max = abs(motion_probs[-1])
    for k, off in enumerate(offsets):
        H = H0 - 0.5 * 2 * math.pi * off * np.diag(sz_total)
        U = block_propagator(H, pulse_duration, blocks)
        pf = np.abs(U) ** 2 @ p0
        top_max = max(top_max, abs(pf[top].sum()))
        out[k] = np.bincount(counts, weights=pf, minlength=mode.n_ions + 1)
    return out, top_max


def _with_cutoff_escalation(fn, mode: MotionalMode, motion: ThermalState):
    """Run ``fn(cutoff, probs)``, escalating the cutoff once if the top level is populated."""
    tried = []
    for cutoff in dict.fromkeys((max(mode.fock_cutoff, motion.cutoff), max(ESCALATED_CUTOFF, 2 * mode.fock_cutoff))):
        if cutoff < motion.cutoff and motion.probs[cutoff + 1:].sum() > TAIL_LIMIT:
            continue
        probs = motion.padded(cutoff).probs
        result, top = fn(cutoff, probs)
        if top <= TOP_LEVEL_LIMIT:
            return result
        tried.append((cutoff, top))
    raise CutoffError(f"top Fock level population too large: {tried}")


def sideband_scan(
    mode: MotionalMode,
    initial_spin: str,
    motion: ThermalState,
    sideband_rate: float,
    pulse_duration: float,
    drive_frequency_offsets,
) -> SidebandScan:
    """Thermally averaged bright-ion signal versus drive offset from f0 + f_r (noise free)."""
    if not pulse_duration > 0:
        raise ValueError("pulse duration must be positive")
    offsets = np.asarray(drive_frequency_offsets, dtype=float)

    def run(cutoff, probs):
        return sideband_class_probs(mode, initial_spin, probs, sideband_rate, pulse_duration, offsets, cutoff)

    probs = _with_cutoff_escalation(run, mode, motion)
    signal = probs @ np.arange(mode.n_ions + 1)
    return SidebandScan(offsets, signal, np.zeros_like(signal), initial_spin, mode.n_ions)


def sample_scan(
    mode, initial_spin, motion, sideband_rate, pulse_duration, offsets, shots: int, rng: np.random.Generator
) -> SidebandScan:
    """Sideband scan with per-point projection noise from ``shots`` experiments."""
    offsets = np.asarray(offsets, dtype=float)

    def run(cutoff, probs):
        return sideband_class_probs(mode, initial_spin, probs, sideband_rate, pulse_duration, offsets, cutoff)

    probs = _with_cutoff_escalation(run, mode, motion)
    k = np.arange(mode.n_ions + 1)
    signal = np.empty(len(offsets))
    sigma = np.empty(len(offsets))
    for i, p in enumerate(probs):
        draws = rng.multinomial(shots, np.clip(p, 0, None) / np.clip(p, 0, None).sum())
        mean = draws @ k / shots
        var = draws @ (k - mean) ** 2 / max(shots - 1, 1)
        signal[i] = mean
        # one-count floor keeps fully deterministic points from getting infinite weight
        sigma[i] = math.sqrt(max(var, 1.0 / shots) / shots)
    return SidebandScan(offsets, signal, sigma, initial_spin, mode.n_ions, shots)


@dataclass
class NbarFit:
    nbar: float
    nbar_err: float
    sideband_rate: float
    sideband_rate_err: float
    chi2_reduced: float


def fit_nbar(
    scan_red: SidebandScan,
    scan_blue: SidebandScan,
    mode: MotionalMode,
    pulse_duration: float,
    sideband_rate_guess: float,
    nbar_guess: float = 1.0,
    cutoff: int | None = None,
    max_reweight: int = 10,
) -> NbarFit:
    """Joint least-squares fit of nbar and sideband rate to both sideband scans.

    ``scan_red`` starts in up (motion subtracting), ``scan_blue`` in down.
    """
    if not np.array_equal(scan_red.offsets, scan_blue.offsets):
        raise ValueError("scans must share offsets")
    offsets = scan_red.offsets
    if cutoff is None:
        cutoff = max(ESCALATED_CUTOFF, mode.fock_cutoff)
    k = np.arange(mode.n_ions + 1)
    data = np.concatenate([scan_red.signal, scan_blue.signal])
    sigma = np.concatenate([scan_red.sigma, scan_blue.sigma])
    if np.any(sigma <= 0):
        raise ValueError("scan uncertainties must be positive")
    # With known shot counts the weights come from the model's projection
    # noise, frozen during each inner fit and refreshed between fits. Weights
    # taken from the data bias the fit toward low-signal points, and letting
    # the variance float inside the objective biases it the other way.
    shots = None
    if scan_red.shots and scan_blue.shots:
        shots = np.concatenate([np.full(offsets.size, scan_red.shots), np.full(offsets.size, scan_blue.shots)])

    def model(p):
        nbar, rate = p
        probs = thermal_probs(nbar, cutoff)
        red, _ = sideband_class_probs(mode, scan_red.initial_spin, probs, rate, pulse_duration, offsets, cutoff)
        blue, _ = sideband_class_probs(mode, scan_blue.initial_spin, probs, rate, pulse_duration, offsets, cutoff)
        both = np.vstack([red, blue])
        mean = both @ k
        return mean, both @ k**2 - mean**2

    def fit(weights_sigma, p_start):
        def resid(p):
            if p[0] <= -0.45:
                return np.full(data.size, 1e6)
            return (model(p)[0] - data) / weights_sigma

        steps = np.array([1e-4, 1e-5 * abs(sideband_rate_guess)])
        return levenberg_marquardt(resid, p_start, steps=steps)

    res = fit(sigma, np.array([nbar_guess, sideband_rate_guess]))
    if shots is not None:
        for _ in range(max_reweight):
            var = model(res.params)[1]
            prev = res.params
            res = fit(np.sqrt(np.maximum(var, 1.0 / shots) / shots), prev)
            if np.all(np.abs(res.params - prev) <= 1e-2 * res.stderr):
                break
    err = res.stderr
    return NbarFit(float(res.params[0]), float(err[0]), float(res.params[1]), float(err[1]), res.chi2_reduced)


# --- heating and cooling ---------------------------------------------------

def heating_generator(cutoff: int, rate: float) -> np.ndarray:
    """Rate matrix for up-jumps at rate*(n+1) and down-jumps at rate*n.

    Up-jumps out of the top level are dropped, so columns sum to zero.
    """
    n = np.arange(cutoff + 1)
    up = rate * (n + 1.0)
    up[-1] = 0.0
    down = rate * n.astype(float)
    L = np.diag(-(up + down))
    L += np.diag(up[:-1], -1)
    L += np.diag(down[1:], 1)
    return L


def apply_heating(distribution: ThermalState, rate: float, duration: float) -> ThermalState:
    """Diffusive heating raising <n> by rate*duration (quanta/s * s)."""
    if rate < 0 or duration < 0:
        raise ValueError("rate and duration must be non-negative")
    if rate == 0 or duration == 0:
        return distribution
    for cutoff in dict.fromkeys((distribution.cutoff, max(ESCALATED_CUTOFF, 2 * distribution.cutoff))):
        p = distribution.padded(cutoff).probs
        out = expm(heating_generator(cutoff, rate) * duration) @ p
        if out[-1] <= TOP_LEVEL_LIMIT:
            out = np.clip(out, 0.0, None)
            return ThermalState(out / out.sum())
    raise CutoffError(f"heating drives {out[-1]:.2e} into the top Fock level")


def recoil_quanta_per_cycle(
    photons: float = 20,
    wavelength: float = 279.6e-9,
    ion_mass: float = 4.1489e-26,
    mode_frequency: float = 6.8e6,
    participation: float = 1 / math.sqrt(2),
    projection: float = REPUMP_MODE_PROJECTION,
) -> float:
    """Mean phonons added per repump by photon recoil.

    Each scattered photon adds eta^2 * (projection^2 + 1/3): the absorption
    kick along the beam projected on the mode axis plus isotropic emission.
    """
    hbar = 1.054571817e-34
    k = 2 * math.pi / wavelength
    eta_sq = (k * participation) ** 2 * hbar / (2 * ion_mass * 2 * math.pi * mode_frequency)
    return photons * eta_sq * (projection**2 + 1 / 3)


@dataclass
class CoolingResult:
    distribution: ThermalState
    nbar_history: list[float]
    spin_populations: np.ndarray  # final P(spin config)


def sideband_cool(
    mode: MotionalMode,
    initial: ThermalState,
    cycles: int,
    pulse_duration,
    sideband_rate: float,
    repump_efficiency: float,
    recoil_heating_per_cycle: float,
    heating_rate: float = 0.0,
    cycle_duration: float | None = None,
) -> CoolingResult:
    """Pulsed sideband cooling starting from all spins up.

    Each cycle applies the motion-subtracting pulse, then repumps every down
    spin to up with probability ``repump_efficiency`` and adds recoil heating.
    ``pulse_duration`` may be a scalar or one value per cycle. Optional
    ambient heating acts for ``cycle_duration`` (defaults to the pulse length).
    """
    if cycles < 0:
        raise ValueError("cycles must be non-negative")
    if not 0 <= repump_efficiency <= 1:
        raise ValueError("repump efficiency must lie in [0, 1]")
    durations = np.broadcast_to(np.asarray(pulse_duration, dtype=float), (cycles,)) if cycles else []
    n_ions = mode.n_ions
    n_spin = 2**n_ions
    cutoff = max(mode.fock_cutoff, initial.cutoff)
    if initial.probs[-1] > TOP_LEVEL_LIMIT:
        raise CutoffError("initial distribution populates the top Fock level")
    joint = np.zeros((n_spin, cutoff + 1))
    joint[0] = initial.padded(cutoff).probs
    history = [initial.nbar]
    blocks = _block_structure(n_ions, cutoff)
    H = sideband_hamiltonian(mode, sideband_rate, 0.0, cutoff)
    # per-ion repump: down -> up with probability eta
    single = np.array([[1.0, repump_efficiency], [0.0, 1 - repump_efficiency]])
    repump = reduce(np.kron, [single] * n_ions)
    for t in durations:
        U = block_propagator(H, float(t), blocks)
        joint = (np.abs(U) ** 2 @ joint.ravel()).reshape(n_spin, cutoff + 1)
        joint = repump @ joint
        heat = recoil_heating_per_cycle + heating_rate * (t if cycle_duration is None else cycle_duration)
        if heat > 0:
            G = expm(heating_generator(cutoff, 1.0) * heat)
            joint = joint @ G.T
        if joint[:, -1].sum() > TOP_LEVEL_LIMIT:
            raise CutoffError("cooling cycle populates the top Fock level")
        history.append(float(np.arange(cutoff + 1) @ joint.sum(axis=0)))
    motion = joint.sum(axis=0)
    return CoolingResult(ThermalState(motion / motion.sum()), history, joint.sum(axis=1))
