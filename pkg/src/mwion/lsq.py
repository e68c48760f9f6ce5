"""Small dense Levenberg-Marquardt solver used by every fit in the package."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FitError


@dataclass
class LsqResult:
    params: np.ndarray
    covariance: np.ndarray
    cost: float  # sum of squared weighted residuals
    dof: int
    iterations: int
    rank: int

    @property
    def chi2_reduced(self) -> float:
        return self.cost / self.dof if self.dof > 0 else float("nan")

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


def numeric_jacobian(fun, p, steps):
    r0 = fun(p)
    jac = np.empty((r0.size, p.size))
    for k in range(p.size):
        dp = np.zeros_like(p)
        dp[k] = steps[k]
        jac[:, k] = (fun(p + dp) - fun(p - dp)) / (2 * steps[k])
    return jac


def covariance_from_jacobian(jac: np.ndarray, rcond: float = 1e-10):
    """(J^T J)^-1, with infinite variance on unidentifiable directions."""
    jtj = jac.T @ jac
    u, s, vt = np.linalg.svd(jtj)
    keep = s > rcond * (s[0] if s.size and s[0] > 0 else 1.0)
    if s.size and s[0] == 0:
        keep[:] = False
    inv = (vt[keep].T / s[keep]) @ vt[keep]
    rank = int(keep.sum())
    if rank < jtj.shape[0]:
        null = vt[~keep]
        unbounded = np.any(np.abs(null) > 1e-6, axis=0)
        for k in np.flatnonzero(unbounded):
            inv[k, :] = np.where(np.arange(inv.shape[1]) == k, np.inf, np.nan)
            inv[:, k] = inv[k, :]
    return inv, rank


def levenberg_marquardt(
    fun,
    p0,
    steps=None,
    jac=None,
    max_iter: int = 200,
    rtol: float = 1e-10,
    atol: float = 1e-30,
    lam0: float = 1e-3,
) -> LsqResult:
    """Minimize ``sum(fun(p)**2)``.

    ``fun`` returns weighted residuals. Converges when the relative cost
    decrease of an accepted step drops below ``rtol`` or the cost falls
    below ``atol``. Raises FitError (carrying the last iterate) otherwise.
    """
    p = np.asarray(p0, dtype=float).copy()
    if steps is None:
        steps = 1e-6 * np.maximum(np.abs(p), 1e-3)
    steps = np.asarray(steps, dtype=float)

    def jacobian(x):
        return jac(x) if jac is not None else numeric_jacobian(fun, x, steps)

    r = fun(p)
    cost = float(r @ r)
    lam = lam0
    it = 0
    converged = cost <= atol
    J = jacobian(p)
    while not converged and it < max_iter:
        it += 1
        g = J.T @ r
        A = J.T @ J
        diag = np.diag(A).copy()
        diag[diag == 0] = 1.0
        accepted = False
        for _ in range(60):
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            p_new = p + step
            r_new = fun(p_new)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            lam *= 10
        if not accepted:
            # no descent direction left: at a (possibly degenerate) minimum
            converged = True
            break
        rel = (cost - cost_new) / cost if cost > 0 else 0.0
        p, r, cost = p_new, r_new, cost_new
        lam = max(lam / 10, 1e-12)
        if rel < rtol or cost <= atol:
            converged = True
            break
        J = jacobian(p)
    if not converged:
        raise FitError(f"no convergence after {max_iter} iterations", last=p)
    J = jacobian(p)
    cov, rank = covariance_from_jacobian(J)
    return LsqResult(params=p, covariance=cov, cost=cost, dof=r.size - p.size, iterations=it, rank=rank)
