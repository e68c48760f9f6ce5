"""
Ground-state hyperfine structure of a J=1/2 ion in a static magnetic field.

Energies are computed by exact diagonalization of the 2x2 blocks of fixed
m_F in the |m_J, m_I> product basis. All frequencies are in Hz, fields in
Tesla. Energies are referenced to the hyperfine centroid (the trace of the
Hamiltonian is zero).
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.constants import h, physical_constants

from .errors import NoRootError

MU_B = physical_constants["Bohr magneton"][0]
MU_B_HZ = MU_B / h  # Hz per Tesla

POLARIZATIONS = {"pi": 0, "sigma_plus": 1, "sigma_minus": -1}
_REQUIRED_KEYS = ("A_hfs_hz", "g_J", "g_I", "I2", "mass_kg")


@dataclass(frozen=True)
class AtomModel:
    nuclear_spin: float
    hyperfine_constant_A: float
    electron_g: float
    nuclear_g: float
    mass: float

    def __post_init__(self):
        if self.nuclear_spin <= 0 or (2 * self.nuclear_spin) % 2 != 1:
            raise ValueError(f"nuclear spin must be a positive half-integer, got {self.nuclear_spin}")
        if not self.mass > 0:
            raise ValueError("mass must be positive")

    @property
    def f_upper(self) -> int:
        return int(self.nuclear_spin + 0.5)

    @property
    def f_lower(self) -> int:
        return int(self.nuclear_spin - 0.5)

    @property
    def zero_field_splitting(self) -> float:
        return abs(self.hyperfine_constant_A) * (self.nuclear_spin + 0.5)


def load_atom(path: str | Path | None = None) -> AtomModel:
    """Read atomic constants from a ``key = value`` file.

    With no path, the bundled 25Mg+ defaults are used.
    """
    if path is None:
        text = resources.files("mwion").joinpath("data/mg25.conf").read_text()
    else:
        text = Path(path).read_text()
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read_string("[atom]\n" + text)
    sec = parser["atom"]
    missing = [k for k in _REQUIRED_KEYS if k not in sec]
    if missing:
        raise KeyError(f"atomic constants file missing keys: {', '.join(missing)}")
    return AtomModel(
        nuclear_spin=int(sec["I2"]) / 2,
        hyperfine_constant_A=float(sec["A_hfs_hz"]),
        electron_g=float(sec["g_J"]),
        nuclear_g=float(sec["g_I"]),
        mass=float(sec["mass_kg"]),
    )


@dataclass(frozen=True)
class ZeemanLevel:
    """One hyperfine-Zeeman eigenstate.

    ``amplitudes`` are the coefficients on (|m_J=+1/2, m_I=m_F-1/2>,
    |m_J=-1/2, m_I=m_F+1/2>); a basis state that does not exist for the
    stretched levels carries a zero coefficient.
    """

    f_label: int
    m_f: int
    energy: float
    amplitudes: tuple[float, float]

    @property
    def label(self) -> tuple[int, int]:
        return (self.f_label, self.m_f)


@dataclass(frozen=True)
class TransitionSpec:
    lower: tuple[int, int]
    upper: tuple[int, int]
    polarization_component: str | None = None

    def __post_init__(self):
        dm = self.delta_m
        if self.polarization_component is None:
            # infer; forbidden (|dm| > 1) transitions keep None
            for name, q in POLARIZATIONS.items():
                if q == dm:
                    object.__setattr__(self, "polarization_component", name)
        elif self.polarization_component not in POLARIZATIONS:
            raise ValueError(f"unknown polarization {self.polarization_component!r}")
        elif POLARIZATIONS[self.polarization_component] != dm:
            raise ValueError(
                f"polarization {self.polarization_component} inconsistent with delta m_F = {dm}"
            )

    @property
    def delta_m(self) -> int:
        return self.upper[1] - self.lower[1]


QUBIT = TransitionSpec(lower=(3, 1), upper=(2, 1))
MAPPING = TransitionSpec(lower=(3, 1), upper=(2, 0))


def _check_field(B):
    if not math.isfinite(B):
        raise ValueError(f"field must be finite, got {B}")
    if B < 0:
        raise ValueError(f"field must be non-negative, got {B}")


def _block(atom: AtomModel, m: float, B: float):
    """Hamiltonian block (Hz) for fixed m_F on (m_J=+1/2, m_J=-1/2)."""
    I, A = atom.nuclear_spin, atom.hyperfine_constant_A
    zJ, zI = MU_B_HZ * B * atom.electron_g, MU_B_HZ * B * atom.nuclear_g
    mi_a, mi_b = m - 0.5, m + 0.5
    a = 0.5 * A * mi_a + 0.5 * zJ + zI * mi_a
    d = -0.5 * A * mi_b - 0.5 * zJ + zI * mi_b
    c = 0.5 * A * math.sqrt(I * (I + 1) - mi_a * mi_b)
    return a, c, d


def _diag2(a, c, d):
    """Eigenpairs of [[a, c], [c, d]] with a continuous eigenvector gauge."""
    mean, half = 0.5 * (a + d), 0.5 * (a - d)
    r = math.hypot(half, c)
    theta = 0.5 * math.atan2(c, half)
    v_plus = (math.cos(theta), math.sin(theta))
    v_minus = (-math.sin(theta), math.cos(theta))
    return (mean + r, v_plus), (mean - r, v_minus)


def breit_rabi_levels(atom: AtomModel, B: float) -> list[ZeemanLevel]:
    """All 2(2I+1) ground-state levels at field ``B``, ordered by (F, m_F)."""
    _check_field(B)
    I, A = atom.nuclear_spin, atom.hyperfine_constant_A
    fu, fl = atom.f_upper, atom.f_lower
    zJ, zI = MU_B_HZ * B * atom.electron_g, MU_B_HZ * B * atom.nuclear_g
    levels = []
    # stretched states are single basis states
    for s in (1, -1):
        e = 0.5 * A * I + s * (0.5 * zJ + zI * I)
        amps = (1.0, 0.0) if s > 0 else (0.0, 1.0)
        levels.append(ZeemanLevel(fu, s * fu, e, amps))
    for m in range(-fl, fl + 1):
        plus, minus = _diag2(*_block(atom, m, B))
        # F = I + 1/2 lies above F = I - 1/2 when A > 0; the blocks never cross
        upper_f, lower_f = (plus, minus) if A > 0 else (minus, plus)
        levels.append(ZeemanLevel(fu, m, upper_f[0], upper_f[1]))
        levels.append(ZeemanLevel(fl, m, lower_f[0], lower_f[1]))
    levels.sort(key=lambda lv: (lv.f_label, lv.m_f))
    return levels


def level_map(atom: AtomModel, B: float) -> dict[tuple[int, int], ZeemanLevel]:
    return {lv.label: lv for lv in breit_rabi_levels(atom, B)}


def hamiltonian_trace(atom: AtomModel, B: float) -> float:
    """Trace of the assembled block Hamiltonian (Hz)."""
    _check_field(B)
    I, A = atom.nuclear_spin, atom.hyperfine_constant_A
    zJ, zI = MU_B_HZ * B * atom.electron_g, MU_B_HZ * B * atom.nuclear_g
    tr = 0.0
    for s in (1, -1):
        tr += 0.5 * A * I + s * (0.5 * zJ + zI * I)
    for m in range(-atom.f_lower, atom.f_lower + 1):
        a, _, d = _block(atom, m, B)
        tr += a + d
    return tr


def _lookup(levels, label):
    try:
        return levels[tuple(label)]
    except KeyError:
        raise KeyError(f"unknown level label {label}") from None


def transition_frequency(atom: AtomModel, t: TransitionSpec, B: float) -> float:
    """E(upper) - E(lower) in Hz."""
    levels = level_map(atom, B)
    return _lookup(levels, t.upper).energy - _lookup(levels, t.lower).energy


def frequency_slope(atom: AtomModel, t: TransitionSpec, B: float, step: float = 1e-6) -> float:
    """df/dB in Hz/T by central differences."""
    lo = max(B - step, 0.0)
    return (transition_frequency(atom, t, B + step) - transition_frequency(atom, t, lo)) / (B + step - lo)


def field_independent_point(
    atom: AtomModel,
    t: TransitionSpec,
    bracket: tuple[float, float] = (15e-3, 30e-3),
    tol: float = 10.0 * 1e3,
    step: float = 1e-6,
    max_iter: int = 200,
) -> tuple[float, float]:
    """Bisect df/dB to find the field where the transition is first-order insensitive.

    ``tol`` is the slope tolerance in Hz/T (default 10 Hz/mT).
    Returns (B0, f0).
    """
    lo, hi = bracket
    s_lo = frequency_slope(atom, t, lo, step)
    s_hi = frequency_slope(atom, t, hi, step)
    if not (s_lo * s_hi < 0):
        raise NoRootError(f"df/dB does not change sign on [{lo}, {hi}] T")
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        s_mid = frequency_slope(atom, t, mid, step)
        if abs(s_mid) < tol:
            break
        if s_mid * s_lo < 0:
            hi = mid
        else:
            lo, s_lo = mid, s_mid
    return mid, transition_frequency(atom, t, mid)


def _moment_matrices(atom: AtomModel, B: float):
    """Spherical components of g_J J + g_I I in the level eigenbasis.

    Returns (labels, {q: matrix}) where matrix[i, j] = <i| M_q |j>.
    """
    I = atom.nuclear_spin
    levels = breit_rabi_levels(atom, B)
    labels = [lv.label for lv in levels]
    # product basis |m_J, m_I>
    basis = [(mj, mi) for mj in (0.5, -0.5) for mi in np.arange(-I, I + 1)]
    index = {b: k for k, b in enumerate(basis)}
    n = len(basis)
    vecs = np.zeros((n, len(levels)))
    for col, lv in enumerate(levels):
        m = lv.m_f
        for amp, mj in zip(lv.amplitudes, (0.5, -0.5)):
            mi = m - mj
            if abs(mi) <= I and amp != 0.0:
                vecs[index[(mj, mi)], col] = amp
    gJ, gI = atom.electron_g, atom.nuclear_g
    mz = np.diag([gJ * mj + gI * mi for mj, mi in basis])
    mplus = np.zeros((n, n))
    for (mj, mi), k in index.items():
        # J+ and I+ raising parts
        if mj == -0.5:
            mplus[index[(0.5, mi)], k] += gJ
        if mi + 1 <= I:
            mplus[index[(mj, mi + 1)], k] += gI * math.sqrt(I * (I + 1) - mi * (mi + 1))
    # M_{+1} = -M_+/sqrt2, M_{-1} = M_-/sqrt2
    ops = {0: mz, 1: -mplus / math.sqrt(2), -1: mplus.T / math.sqrt(2)}
    return labels, {q: vecs.T @ op @ vecs for q, op in ops.items()}


def dipole_matrix_element(atom: AtomModel, t: TransitionSpec, B: float) -> float:
    """<upper| M_q |lower> in units of the Bohr magneton, q from the polarization."""
    dm = t.delta_m
    if abs(dm) > 1:
        return 0.0
    if t.polarization_component is not None and POLARIZATIONS[t.polarization_component] != dm:
        raise ValueError("polarization inconsistent with delta m_F")
    labels, mats = _moment_matrices(atom, B)
    idx = {lab: k for k, lab in enumerate(labels)}
    try:
        u, l = idx[tuple(t.upper)], idx[tuple(t.lower)]
    except KeyError as exc:
        raise KeyError(f"unknown level label {exc.args[0]}") from None
    return float(mats[dm][u, l])


def pi_time_from_field(matrix_element: float, field_amplitude: float) -> float:
    """Resonant pi-time for a linearly oscillating field of the given component amplitude."""
    rabi = abs(matrix_element) * MU_B * field_amplitude / (h / (2 * math.pi))
    return math.pi / rabi
