"""
Oscillating near-field around a quadrupole null and the AC-Zeeman shifts it causes.

Coordinates follow the trap frame: x and z radial, y along the trap axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.constants import hbar

from .errors import RankDeficiencyError, ResonanceError
from .levels import MU_B, AtomModel, TransitionSpec, _moment_matrices, level_map
from .lsq import levenberg_marquardt

GUARD_BAND_HZ = 100e3


@dataclass(frozen=True)
class QuadrupoleField:
    gradient_Bprime: float
    angle_alpha: float
    drive_frequency: float = 1.69e9
    null_position: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.gradient_Bprime < 0:
            raise ValueError("gradient must be non-negative")
        object.__setattr__(self, "angle_alpha", self.angle_alpha % math.pi)

    def matrix(self) -> np.ndarray:
        c2, s2 = math.cos(2 * self.angle_alpha), math.sin(2 * self.angle_alpha)
        return self.gradient_Bprime * np.array([[c2, 0.0, s2], [0.0, 0.0, 0.0], [s2, 0.0, -c2]])


@dataclass(frozen=True)
class ShiftMeasurement:
    displacement: tuple[float, float]
    shift: float
    uncertainty: float
    line: int | None = None

    def __post_init__(self):
        if not self.uncertainty > 0:
            raise ValueError(f"uncertainty must be positive, got {self.uncertainty}")


@dataclass(frozen=True)
class StaticFieldFrame:
    quantization_direction: tuple[float, float, float] = field(
        default=(0.0, math.sin(math.radians(15)), math.cos(math.radians(15)))
    )
    magnitude_B0: float = 21.3e-3

    def __post_init__(self):
        n = np.asarray(self.quantization_direction, dtype=float)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("quantization direction must be nonzero")
        object.__setattr__(self, "quantization_direction", tuple(n / norm))

    def basis(self) -> np.ndarray:
        """Rows are the frame axes x', y', z' (z' along the static field)."""
        z = np.asarray(self.quantization_direction)
        trial = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        x = trial - z * (trial @ z)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return np.vstack([x, y, z])


def field_at(q: QuadrupoleField, displacement) -> np.ndarray:
    """Oscillating field amplitude (T) at a 3D displacement from the nominal ion position."""
    d = np.asarray(displacement, dtype=float)
    rel = d - np.array([q.null_position[0], 0.0, q.null_position[1]])
    return q.matrix() @ rel


def decompose_polarization(frame: StaticFieldFrame, b) -> dict[int, complex]:
    """Spherical components b_q (q = 0, +1, -1) of a field vector in the static-field frame."""
    bx, by, bz = frame.basis() @ np.asarray(b, dtype=float)
    return {0: complex(bz), 1: -(bx + 1j * by) / math.sqrt(2), -1: (bx - 1j * by) / math.sqrt(2)}


def _coupled_levels(atom, frame, t):
    levels = level_map(atom, frame.magnitude_B0)
    labels, mats = _moment_matrices(atom, frame.magnitude_B0)
    return levels, labels, mats


def _level_shift_terms(atom, frame, label, drive_frequency, levels, labels, mats, guard):
    """[(q, matrix element <K|M_q|L>, omega_KL)] for all K coupled to L."""
    idx = {lab: k for k, lab in enumerate(labels)}
    li = idx[tuple(label)]
    e_l = levels[tuple(label)].energy
    terms = []
    for q, mat in mats.items():
        col = mat[:, li]
        for k in np.flatnonzero(np.abs(col) > 1e-14):
            f_kl = levels[labels[k]].energy - e_l
            if abs(abs(f_kl) - drive_frequency) < guard:
                raise ResonanceError(
                    f"drive {drive_frequency:.6e} Hz within {guard:.0f} Hz of "
                    f"{label}->{labels[k]} at {abs(f_kl):.6e} Hz"
                )
            terms.append((q, col[k], 2 * math.pi * f_kl))
    return terms


def _level_shift(terms, bq, drive_frequency):
    """Second-order shift (rad/s) of one level from all coupled levels."""
    wd = 2 * math.pi * drive_frequency
    total = 0.0
    for q, me, w_kl in terms:
        # <K| b.M |L> = sum_q (-1)^q b_{-q} <K|M_q|L>
        coupling = (-1) ** q * bq[-q] * me
        rabi_sq = (MU_B * abs(coupling) / hbar) ** 2
        total -= rabi_sq / 4 * (1 / (w_kl - wd) + 1 / (w_kl + wd))
    return total


def ac_zeeman_shift(
    atom: AtomModel,
    frame: StaticFieldFrame,
    t: TransitionSpec,
    field_amplitude,
    drive_frequency: float,
    guard_band: float = GUARD_BAND_HZ,
) -> float:
    """Second-order AC-Zeeman shift (Hz) of transition ``t``.

    Every magnetic-dipole coupling within the ground manifold contributes,
    with both co- and counter-rotating terms.
    """
    if not drive_frequency > 0:
        raise ValueError("drive frequency must be positive")
    levels, labels, mats = _coupled_levels(atom, frame, t)
    bq = decompose_polarization(frame, field_amplitude)
    shifts = []
    for label in (t.upper, t.lower):
        if tuple(label) not in levels:
            raise KeyError(f"unknown level label {label}")
        terms = _level_shift_terms(atom, frame, label, drive_frequency, levels, labels, mats, guard_band)
        shifts.append(_level_shift(terms, bq, drive_frequency))
    return (shifts[0] - shifts[1]) / (2 * math.pi)


def shift_tensor(atom, frame, t, drive_frequency, guard_band: float = GUARD_BAND_HZ) -> np.ndarray:
    """Symmetric S with ac_zeeman_shift(b) == b @ S @ b for real field vectors b."""
    e = np.eye(3)
    S = np.empty((3, 3))
    for i in range(3):
        S[i, i] = ac_zeeman_shift(atom, frame, t, e[i], drive_frequency, guard_band)
    for i in range(3):
        for j in range(i + 1, 3):
            both = ac_zeeman_shift(atom, frame, t, e[i] + e[j], drive_frequency, guard_band)
            S[i, j] = S[j, i] = 0.5 * (both - S[i, i] - S[j, j])
    return S


def _model_shifts(params, dx, dz, S):
    bprime, alpha, x0, z0 = params
    c2, s2 = math.cos(2 * alpha), math.sin(2 * alpha)
    u, w = dx - x0, dz - z0
    bx = bprime * (c2 * u + s2 * w)
    bz = bprime * (s2 * u - c2 * w)
    return S[0, 0] * bx**2 + 2 * S[0, 2] * bx * bz + S[2, 2] * bz**2


@dataclass
class QuadrupoleFit:
    field: QuadrupoleField
    covariance: np.ndarray  # order: B', alpha, null x, null z
    chi2_reduced: float
    iterations: int

    def report(self) -> dict:
        return {
            "bprime_t_per_m": self.field.gradient_Bprime,
            "alpha_rad": self.field.angle_alpha,
            "null_x_m": self.field.null_position[0],
            "null_z_m": self.field.null_position[1],
            "covariance": [_json_float(v) for v in self.covariance.ravel()],
            "chi2_reduced": self.chi2_reduced,
        }


def _json_float(v):
    v = float(v)
    if math.isnan(v):
        return None
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def fit_quadrupole(
    measurements,
    atom: AtomModel,
    frame: StaticFieldFrame,
    t: TransitionSpec,
    drive_frequency: float,
    initial_guess: QuadrupoleField,
    max_iter: int = 200,
) -> QuadrupoleFit:
    """Weighted fit of (B', alpha, null x, null z) to a measured shift map."""
    measurements = list(measurements)
    if len(measurements) < 6:
        raise RankDeficiencyError(f"need at least 6 measurements, got {len(measurements)}")
    d = np.array([m.displacement for m in measurements], dtype=float)
    centered = d - d.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-12 * max(np.abs(centered).max(), 1e-30)) < 2:
        raise RankDeficiencyError("displacements are collinear")
    y = np.array([m.shift for m in measurements])
    sigma = np.array([m.uncertainty for m in measurements])
    S = shift_tensor(atom, frame, t, drive_frequency)

    # work in micrometres so the parameters have similar scale
    scale = 1e-6
    dx, dz = d[:, 0] / scale, d[:, 1] / scale
    S_um = S * scale**2

    def resid(p):
        return (_model_shifts(p, dx, dz, S_um) - y) / sigma

    g = initial_guess
    p0 = np.array([g.gradient_Bprime, g.angle_alpha, g.null_position[0] / scale, g.null_position[1] / scale])
    steps = np.array([1e-6 * max(abs(p0[0]), 1.0), 1e-6, 1e-6, 1e-6])
    res = levenberg_marquardt(resid, p0, steps=steps, max_iter=max_iter)
    bprime, alpha, x0, z0 = res.params
    if bprime < 0:
        # -B' is the same field as alpha + pi/2
        bprime, alpha = -bprime, alpha + math.pi / 2
    units = np.array([1.0, 1.0, scale, scale])
    cov = res.covariance * np.outer(units, units)
    fitted = QuadrupoleField(bprime, alpha, drive_frequency, (x0 * scale, z0 * scale))
    return QuadrupoleFit(fitted, cov, res.chi2_reduced, res.iterations)


def plane_wave_gradient(field_amplitude: float, frequency: float) -> float:
    """Gradient (T/m) of a free-space plane wave of the given amplitude."""
    if not frequency > 0:
        raise ValueError("frequency must be positive")
    return 2 * math.pi * frequency / SPEED_OF_LIGHT * field_amplitude


def ground_state_extent(mass: float, frequency: float) -> float:
    """sqrt(hbar / (2 m omega)) for a mode at ``frequency`` (Hz)."""
    return math.sqrt(hbar / (2 * mass * 2 * math.pi * frequency))


def predict_sideband(q: QuadrupoleField, matrix_element: float, mode, alignment_angle: float = 0.0):
    """Ground-state sideband Rabi rate (rad/s) and pi-time (s) for one ion of ``mode``.

    A zero projection on the mode gives rate 0 and pi-time ``math.inf``.
    """
    if not mode.frequency > 0:
        raise ValueError("mode frequency must be positive")
    x0 = ground_state_extent(mode.ion_mass, mode.frequency) * abs(mode.mode_vector[0])
    proj = math.cos(alignment_angle)
    if abs(proj) < 1e-12:
        return 0.0, math.inf
    rate = abs(matrix_element) * MU_B * q.gradient_Bprime * x0 / hbar * abs(proj)
    return rate, math.pi / rate


def synthetic_shift_map(q, atom, frame, t, displacements, sigma, rng=None):
    """Forward-model shift map, optionally with Gaussian noise of width ``sigma`` (Hz)."""
    S = shift_tensor(atom, frame, t, q.drive_frequency)
    out = []
    for dx, dz in displacements:
        b = field_at(q, (dx, 0.0, dz))
        shift = float(b @ S @ b)
        if rng is not None:
            shift += rng.normal(0.0, sigma)
        out.append(ShiftMeasurement((float(dx), float(dz)), shift, sigma))
    return out
