"""
State-dependent fluorescence: detection model, reference calibration, and
parity-scan analysis of the entangled state.

Bright means spin down. Population channels are indexed by the number of
bright ions: 0 (uu), 1 (ud + du), 2 (dd).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import poisson

from .errors import FitError, RankDeficiencyError
from .lsq import covariance_from_jacobian, levenberg_marquardt

DEFAULT_DARK = 0.3
DEFAULT_BRIGHT = 11.0
MIN_BIN_COUNT = 5.0


@dataclass(frozen=True)
class PoissonMixture:
    """Three-Poissonian detection model.

    Component means are (dark, dark + one_bright, dark + 2 * one_bright).
    Row k of ``class_weights`` is the composition of the k-bright class
    histogram over those three components; each row lies on the simplex.
    """

    mean_dark: float = DEFAULT_DARK
    mean_one_bright: float = DEFAULT_BRIGHT
    class_weights: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        w = np.asarray(self.class_weights, dtype=float)
        if not (self.mean_dark > 0 and self.mean_one_bright > 0):
            raise ValueError("Poisson means must be positive")
        if w.shape != (3, 3) or np.any(w < -1e-12) or np.any(np.abs(w.sum(axis=1) - 1) > 1e-9):
            raise ValueError("class weights must be three rows on the probability simplex")
        object.__setattr__(self, "class_weights", w)

    @property
    def means(self) -> np.ndarray:
        return self.mean_dark + self.mean_one_bright * np.arange(3)

    def component_pmf(self, counts) -> np.ndarray:
        return poisson.pmf(np.asarray(counts)[None, :], self.means[:, None])

    def class_pmf(self, counts) -> np.ndarray:
        """(3, len(counts)) pmf of the zero-, one- and two-bright class histograms."""
        return self.class_weights @ self.component_pmf(counts)


@dataclass
class CountHistogram:
    counts: np.ndarray  # occurrences of photon number 0..max
    phase: float = float("nan")
    expected: bool = False  # expectation values rather than integer tallies

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float)
        if c.ndim != 1 or np.any(c < 0):
            raise ValueError("histogram bins must be non-negative")
        if not self.expected and np.any(c != np.round(c)):
            raise ValueError("histogram bins must be integers")
        self.counts = c

    @property
    def total_shots(self) -> float:
        return float(self.counts.sum())

    @property
    def mean(self) -> float:
        return float(np.arange(self.counts.size) @ self.counts / self.total_shots)


def ramsey_reference_probs(theta: float) -> tuple[float, float, float]:
    """Probabilities of zero, one, two bright ions after a Ramsey sequence of phase theta."""
    c, s = math.cos(theta / 2) ** 2, math.sin(theta / 2) ** 2
    return (c * c, 2 * c * s, s * s)


def simulate_detection(populations, mixture: PoissonMixture, shots: int, seed=None, phase=float("nan")):
    """Histogram of photon counts for ``shots`` detections of the given class populations."""
    if shots < 1:
        raise ValueError("shots must be at least 1")
    p = np.asarray(populations, dtype=float)
    if np.any(p < -1e-12) or abs(p.sum() - 1) > 1e-9:
        raise ValueError("populations must lie on the simplex")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    classes = rng.choice(3, size=shots, p=np.clip(p, 0, None) / np.clip(p, 0, None).sum())
    comp = np.empty(shots, dtype=int)
    for k in range(3):
        sel = classes == k
        comp[sel] = rng.choice(3, size=int(sel.sum()), p=mixture.class_weights[k])
    counts = rng.poisson(mixture.means[comp])
    return CountHistogram(np.bincount(counts), phase)


def expected_histogram(populations, mixture: PoissonMixture, shots: float, max_count: int = 80, phase=float("nan")):
    q = np.asarray(populations, dtype=float) @ mixture.class_pmf(np.arange(max_count + 1))
    return CountHistogram(shots * q, phase, expected=True)


# --- binning -----------------------------------------------------------------

def pooled_edges(weights: np.ndarray, threshold: float) -> list[int]:
    """Left edges of bins, merging counts until each bin reaches ``threshold``.

    The last bin is open ended.
    """
    edges = [0]
    acc = 0.0
    for c, w in enumerate(weights):
        acc += w
        if acc >= threshold and c + 1 < len(weights):
            edges.append(c + 1)
            acc = 0.0
    if len(edges) > 1 and acc < threshold:
        edges.pop()
    return edges


def _pool_observed(counts, edges):
    c = np.zeros(max(len(counts), edges[-1] + 1))
    c[: len(counts)] = counts
    return np.add.reduceat(c, edges)


def _pool_pmf(pmf_fn, edges):
    """Class pmf integrated over pooled bins; the last bin includes the tail to infinity."""
    last = edges[-1]
    head = pmf_fn(np.arange(last))
    pooled = np.add.reduceat(head, edges[:-1], axis=1) if last > 0 else np.zeros((3, 0))
    tail = 1 - head.sum(axis=1)
    return np.column_stack([pooled, tail])


# --- reference calibration ---------------------------------------------------

@dataclass
class ReferenceFit:
    mixture: PoissonMixture
    chi2_reduced: float
    covariance: np.ndarray
    dof: int
    params: np.ndarray | None = None  # mu_dark, mu_one, off-diagonal weights row by row


def reference_class_probs(theta: float, prep_error: float = 0.0):
    p = np.asarray(ramsey_reference_probs(theta))
    if prep_error:
        p = (1 - prep_error) * p + prep_error * np.array([0.25, 0.5, 0.25])
    return p


def _mixture_from_params(p):
    mu0, mu1 = p[0], p[1]
    w = np.empty((3, 3))
    off = np.asarray(p[2:]).reshape(3, 2)
    for k in range(3):
        others = [j for j in range(3) if j != k]
        w[k, others] = off[k]
        w[k, k] = 1 - off[k].sum()
    return mu0, mu1, w


def _class_pmf_params(p, counts):
    mu0, mu1, w = _mixture_from_params(p)
    means = mu0 + mu1 * np.arange(3)
    return w @ poisson.pmf(np.asarray(counts)[None, :], means[:, None])


def fit_reference(
    histograms,
    thetas,
    initial: PoissonMixture | None = None,
    prep_error: float = 0.0,
    max_iter: int = 200,
) -> ReferenceFit:
    """Simultaneous least-squares fit of the detection model to Ramsey reference histograms.

    Class populations at each theta are fixed to ``reference_class_probs``.
    Free parameters: the dark and one-bright means and the two off-diagonal
    weights of each class composition (eight in total).
    """
    histograms = list(histograms)
    thetas = np.asarray(thetas, dtype=float)
    if len(histograms) != thetas.size:
        raise ValueError("one theta per histogram required")
    if np.unique(np.round(thetas, 12)).size < 3:
        raise RankDeficiencyError("need at least three distinct theta values")
    pops = np.array([reference_class_probs(t, prep_error) for t in thetas])
    if pops[:, 0].max() < 0.5 or pops[:, 2].max() < 0.5:
        raise RankDeficiencyError("theta coverage must include values near 0 and near pi")

    n_bins = max(h.counts.size for h in histograms)
    total = np.zeros(n_bins)
    for h in histograms:
        total[: h.counts.size] += h.counts
    edges = pooled_edges(total, MIN_BIN_COUNT * len(histograms))
    observed = np.array([_pool_observed(h.counts, edges) for h in histograms])
    shots = np.array([h.total_shots for h in histograms])
    if len(edges) < 4:
        raise RankDeficiencyError("histograms do not resolve the three Poisson components")

    def expected(p):
        return shots[:, None] * (pops @ _pool_pmf(lambda c: _class_pmf_params(p, c), edges))

    def resid(p):
        # signed Poisson deviance: Pearson weighting pushes leak weights off zero
        e = np.maximum(expected(p), 1e-300)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(observed > 0, observed * np.log(observed / e), 0.0)
        return (np.sign(observed - e) * np.sqrt(np.maximum(2 * (e - observed + t), 0))).ravel()

    guess = initial or PoissonMixture()
    off0 = [guess.class_weights[k, [j for j in range(3) if j != k]] for k in range(3)]
    p0 = np.concatenate([[guess.mean_dark, guess.mean_one_bright], np.ravel(off0)])
    lo = np.concatenate([[1e-6, 1e-6], np.zeros(6)])
    hi = np.concatenate([[np.inf, np.inf], np.ones(6)])
    # strictly interior start for the bounded trust-region solver
    p0 = np.clip(p0, lo + 1e-4, np.minimum(hi - 1e-4, 1e6))
    res = least_squares(resid, p0, bounds=(lo, hi), max_nfev=max_iter * p0.size, x_scale="jac")
    if not res.success:
        raise FitError(f"reference fit did not converge: {res.message}", last=res.x)
    dof = int(observed.size - observed.shape[0] - p0.size)
    e = expected(res.x)
    chi2 = float(np.sum((observed - e) ** 2 / np.maximum(e, 1e-12)))
    cov, _ = covariance_from_jacobian(res.jac)
    mu0, mu1, w = _mixture_from_params(res.x)
    w = np.clip(w, 0, None)
    w = w / w.sum(axis=1, keepdims=True)
    return ReferenceFit(PoissonMixture(mu0, mu1, w), chi2 / dof, cov, dof, res.x)


# --- population decomposition ------------------------------------------------

def _simplex_lsq(A, y, wts):
    """min ||sqrt(wts) (A p - y)|| with p on the 3-simplex, by active-set enumeration."""
    sw = np.sqrt(wts)
    Aw, yw = A * sw[:, None], y * sw
    best, best_cost = None, np.inf
    supports = [(0, 1, 2), (0, 1), (0, 2), (1, 2), (0,), (1,), (2,)]
    for sup in supports:
        sup = list(sup)
        ref, free = sup[0], sup[1:]
        # p_ref = 1 - sum(p_free)
        base = Aw[:, ref]
        if free:
            M = Aw[:, free] - base[:, None]
            sol, *_ = np.linalg.lstsq(M, yw - base, rcond=None)
        else:
            sol = np.array([])
        p = np.zeros(3)
        p[free] = sol
        p[ref] = 1 - sol.sum()
        if np.any(p < -1e-12):
            continue
        p = np.clip(p, 0, None)
        cost = float(np.sum((Aw @ p - yw) ** 2))
        if cost < best_cost - 1e-15:
            best, best_cost = p, cost
    return best


@dataclass
class Decomposition:
    populations: np.ndarray  # (p0, p1, p2)
    covariance: np.ndarray  # 3x3
    chi2_reduced: float
    warning: str | None = None

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))


def _decomposition_design(mixture: PoissonMixture, shots: int, max_count: int = 0):
    max_c = max(max_count, int(mixture.means[-1] + 10 * math.sqrt(mixture.means[-1])))
    shape_avg = mixture.class_pmf(np.arange(max_c + 1)).mean(axis=0) * shots
    edges = pooled_edges(shape_avg, MIN_BIN_COUNT)
    return edges, shots * _pool_pmf(mixture.class_pmf, edges).T  # bins x classes


_SIMPLEX_T = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def _simplex_fisher(A, p):
    e = A @ p
    wts = 1 / np.maximum(e, 1e-9 * A.sum() / 3)
    J = (A @ _SIMPLEX_T) * np.sqrt(wts)[:, None]
    return J.T @ J, e, wts


def population_covariance(populations, mixture: PoissonMixture, shots: int) -> np.ndarray:
    """Expected 3x3 covariance of ``decompose_populations`` at the given true populations."""
    _, A = _decomposition_design(mixture, shots)
    jtj, _, _ = _simplex_fisher(A, np.asarray(populations, dtype=float))
    return _SIMPLEX_T @ np.linalg.pinv(jtj) @ _SIMPLEX_T.T


def decompose_populations(h: CountHistogram, mixture: PoissonMixture, iterations: int = 10) -> Decomposition:
    """Simplex-constrained least-squares weights of the three class shapes in ``h``."""
    N = h.total_shots
    edges, A = _decomposition_design(mixture, N, h.counts.size)
    y = _pool_observed(h.counts, edges)
    p = np.full(3, 1 / 3)
    for _ in range(iterations):
        e = A @ p
        wts = 1 / np.maximum(e, 1e-9 * N)
        p_new = _simplex_lsq(A, y, wts)
        if np.max(np.abs(p_new - p)) < 1e-13:
            p = p_new
            break
        p = p_new
    jtj, e, wts = _simplex_fisher(A, p)
    warning = None
    sep = mixture.mean_one_bright / math.sqrt(mixture.means[1])
    cond = np.linalg.cond(jtj)
    if sep < 2 or not np.isfinite(cond) or cond > 1e8:
        warning = f"poorly separated classes (separation {sep:.2f} sigma, condition {cond:.2e})"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    cov = _SIMPLEX_T @ np.linalg.pinv(jtj) @ _SIMPLEX_T.T
    chi2 = float(np.sum((y - e) ** 2 * wts))
    dof = max(len(edges) - 1 - 2, 1)
    return Decomposition(p, cov, chi2 / dof, warning)


# --- analysis pulse and parity fit -------------------------------------------

def analysis_rotation(phi: float) -> np.ndarray:
    """pi/2 pulse about cos(phi) x + sin(phi) y applied to both qubits (basis uu, ud, du, dd)."""
    c = math.cos(math.pi / 4)
    s = math.sin(math.pi / 4)
    r = np.array([[c, -1j * s * np.exp(-1j * phi)], [-1j * s * np.exp(1j * phi), c]])
    return np.kron(r, r)


def bright_populations(rho) -> np.ndarray:
    """(zero, one, two) bright-ion populations of a two-qubit density matrix."""
    d = np.real(np.diag(rho))
    return np.array([d[0], d[1] + d[2], d[3]])


def rotated_populations(rho, phi: float) -> np.ndarray:
    R = analysis_rotation(phi)
    return bright_populations(R @ np.asarray(rho) @ R.conj().T)


@dataclass
class ParityScanResult:
    phases: np.ndarray
    populations: np.ndarray  # (n, 3)
    population_sigma: np.ndarray  # (n, 3)
    parity: np.ndarray
    parity_sigma: np.ndarray
    amplitude: float  # A_Pi
    amplitude_err: float
    phase_offset: float  # phi_0
    channel_amplitudes: np.ndarray  # a_k
    channel_offsets: np.ndarray  # a_0,k
    coherence: float  # |rho_uu,dd| = A_Pi / 2
    fidelity: float
    fidelity_err: float
    chi2_reduced: float

    def report(self) -> dict:
        return {
            "phases_rad": self.phases.tolist(),
            "populations": self.populations.tolist(),
            "population_sigma": self.population_sigma.tolist(),
            "parity_amplitude": self.amplitude,
            "parity_amplitude_err": self.amplitude_err,
            "phase_offset_rad": self.phase_offset,
            "channel_amplitudes": self.channel_amplitudes.tolist(),
            "channel_offsets": self.channel_offsets.tolist(),
            "coherence_abs": self.coherence,
            "coherence_convention": "|rho_uu,dd| = A_Pi / 2",
            "fidelity": self.fidelity,
            "fidelity_err": self.fidelity_err,
            "chi2_reduced_populations": self.chi2_reduced,
        }


def _whiteners(covariances):
    """Per-phase 2x2 whitening matrices for the (zero, two) bright channels."""
    out = []
    for cov in covariances:
        c2 = np.asarray(cov)[np.ix_([0, 2], [0, 2])]
        w, v = np.linalg.eigh(c2)
        w = np.maximum(w, 1e-12)
        out.append((v / np.sqrt(w)).T)
    return np.array(out)


def fit_parity_scan(
    phases,
    populations,
    covariances,
    direct_populations,
    direct_covariance,
    covariance_model=None,
    max_reweight: int = 10,
) -> ParityScanResult:
    """Shared-phase sinusoid fit of the three population channels versus analysis phase.

    Each channel follows a_k cos(2 phi + phi_0) + a_0,k with sum(a_k) = 0 and
    sum(a_0,k) = 1. The fidelity combines the parity amplitude with the
    zero- and two-bright populations measured without the analysis pulse
    (``direct_populations``), since the scan itself does not determine them.

    ``covariance_model(populations) -> 3x3`` switches the channel weights from
    the per-phase ``covariances`` to ones evaluated at the fitted model, refreshed
    between fits. Weights taken from the noisy estimates themselves bias the
    amplitude upward.
    """
    phases = np.asarray(phases, dtype=float)
    pops = np.asarray(populations, dtype=float)
    covs = np.asarray(covariances, dtype=float)
    if phases.size < 8:
        raise RankDeficiencyError("need at least 8 analysis phases")
    span = np.ptp(np.unwrap(2 * np.sort(phases)))
    if span < 2 * math.pi * (1 - 1 / phases.size) - 1e-9:
        raise RankDeficiencyError("analysis phases must span a full period of 2 phi")
    obs = pops[:, [0, 2]]

    def model(p):
        phi0, a0, a2, c0, c2 = p
        wave = np.cos(2 * phases + phi0)
        return np.column_stack([a0 * wave + c0, a2 * wave + c2])

    # linear start: regress each channel on cos 2phi, sin 2phi, 1
    X = np.column_stack([np.cos(2 * phases), np.sin(2 * phases), np.ones_like(phases)])
    coef, *_ = np.linalg.lstsq(X, obs, rcond=None)
    u, v = coef[0], coef[1]
    # p_k = a_k cos(2 phi + phi0) gives u_k = a_k cos(phi0), v_k = -a_k sin(phi0)
    phi0_start = math.atan2(-(v[0] + v[1]), u[0] + u[1])
    amp = lambda k: u[k] * math.cos(phi0_start) - v[k] * math.sin(phi0_start)
    p0 = np.array([phi0_start, amp(0), amp(1), coef[2][0], coef[2][1]])

    W = _whiteners(covs)
    for _ in range(max_reweight if covariance_model is not None else 1):
        res = levenberg_marquardt(lambda p: np.einsum("nij,nj->ni", W, model(p) - obs).ravel(),
                                  p0, steps=np.full(5, 1e-7))
        if covariance_model is None:
            break
        step = np.abs(res.params - p0)
        p0 = res.params
        m = model(p0)
        pred = np.clip(np.column_stack([m[:, 0], 1 - m.sum(axis=1), m[:, 1]]), 0, 1)
        W = _whiteners([covariance_model(q / q.sum()) for q in pred])
        if np.all(step <= 1e-2 * np.sqrt(np.abs(np.diag(res.covariance)))):
            break
    phi0, a0, a2, c0, c2 = res.params
    cov = res.covariance
    a1, c1 = -(a0 + a2), 1 - c0 - c2
    A = 2 * (a0 + a2)
    var_A = 4 * (cov[1, 1] + cov[2, 2] + 2 * cov[1, 2])
    if A < 0:
        A, a0, a1, a2 = -A, -a0, -a1, -a2
        phi0 += math.pi
    phi0 = (phi0 + math.pi) % (2 * math.pi) - math.pi

    parity = pops[:, 0] + pops[:, 2] - pops[:, 1]
    # Pi = 2 (p0 + p2) - 1 under the simplex constraint
    par_var = 4 * (covs[:, 0, 0] + covs[:, 2, 2] + 2 * covs[:, 0, 2])
    dp = np.asarray(direct_populations, dtype=float)
    dc = np.asarray(direct_covariance, dtype=float)
    coherence = A / 2
    F = 0.5 * (dp[0] + dp[2]) + coherence
    var_F = 0.25 * (dc[0, 0] + dc[2, 2] + 2 * dc[0, 2]) + 0.25 * var_A
    sig = np.sqrt(np.clip(np.diagonal(covs, axis1=1, axis2=2), 0, None))
    return ParityScanResult(
        phases=phases,
        populations=pops,
        population_sigma=sig,
        parity=parity,
        parity_sigma=np.sqrt(np.clip(par_var, 0, None)),
        amplitude=float(A),
        amplitude_err=float(math.sqrt(max(var_A, 0.0))),
        phase_offset=float(phi0),
        channel_amplitudes=np.array([a0, a1, a2]),
        channel_offsets=np.array([c0, c1, c2]),
        coherence=float(coherence),
        fidelity=float(F),
        fidelity_err=float(math.sqrt(max(var_F, 0.0))),
        chi2_reduced=res.chi2_reduced,
    )


def analyze_parity_scan(scan_histograms, direct_histogram, mixture, calibration: ReferenceFit | None = None):
    """Decompose the scan and direct histograms and fit the parity model.

    With ``calibration`` the reference-fit covariance is propagated into the
    fidelity and amplitude uncertainties by central differences.
    Returns (result, scan decompositions, direct decomposition).
    """
    phases = [h.phase for h in scan_histograms]

    def run(mix):
        decs = [decompose_populations(h, mix) for h in scan_histograms]
        d = decompose_populations(direct_histogram, mix)
        shots = int(round(np.mean([h.total_shots for h in scan_histograms])))
        res = fit_parity_scan(phases, [x.populations for x in decs], [x.covariance for x in decs],
                              d.populations, d.covariance,
                              covariance_model=lambda q: population_covariance(q, mix, shots))
        return res, decs, d

    res, decs, direct = run(mixture)
    if calibration is None or calibration.params is None:
        return res, decs, direct
    cov = np.asarray(calibration.covariance)
    if not np.all(np.isfinite(cov)):
        return res, decs, direct
    p = np.asarray(calibration.params, dtype=float)
    sig = np.sqrt(np.clip(np.diag(cov), 0, None))
    grad_f, grad_a = np.zeros(p.size), np.zeros(p.size)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for k in np.flatnonzero(sig > 0):
            h = 0.1 * sig[k]
            # forward difference for weights sitting on their zero bound
            signs = (1, -1) if k < 2 or p[k] >= h else (1, 0)
            out = []
            for sgn in signs:
                q = p.copy()
                q[k] += sgn * h
                out.append(run(PoissonMixture(*_mixture_from_params(q)))[0] if sgn else res)
            span = h * (signs[0] - signs[1])
            grad_f[k] = (out[0].fidelity - out[1].fidelity) / span
            grad_a[k] = (out[0].amplitude - out[1].amplitude) / span
    res.fidelity_err = float(math.sqrt(res.fidelity_err**2 + grad_f @ cov @ grad_f))
    res.amplitude_err = float(math.sqrt(res.amplitude_err**2 + grad_a @ cov @ grad_a))
    return res, decs, direct
