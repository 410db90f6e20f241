"""Outer Krylov solvers: right-preconditioned GMRES and a CG-based
eigenvalue estimator for smoother setup.

GMRES keeps the preconditioned Arnoldi directions so the solution update
needs no extra preconditioner applications, and reports the residual norm
of the unpreconditioned system (right preconditioning leaves it unchanged).
The estimator runs Jacobi-preconditioned CG and harvests the Lanczos
tridiagonal matrix from the CG coefficients; its extreme eigenvalues bound
the spectrum of  D^{-1} A  from inside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SolverControl",
    "SpectrumEstimate",
    "NoConvergence",
    "gmres",
    "estimate_spectrum",
]


@dataclass
class SolverControl:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-4
    max_iters: int = 1000
    restart: int = 30

    def tolerance(self, r0_norm):
        return max(self.abs_tol, self.rel_tol * r0_norm)


class NoConvergence(RuntimeError):
    """Raised when GMRES exhausts max_iters; carries the best iterate."""

    def __init__(self, x, residual_norm, iterations):
        super().__init__(
            f"no convergence after {iterations} iterations "
            f"(residual {residual_norm:.3e})")
        self.x = x
        self.residual_norm = residual_norm
        self.iterations = iterations


def gmres(op, precond, b, control=None, x0=None):
    """Right-preconditioned GMRES with modified Gram-Schmidt Arnoldi.

    Parameters
    ----------
    op, precond : callables mapping a vector to a vector; `precond` may be
        None for the unpreconditioned iteration.
    b : right-hand side.
    control : SolverControl; termination at
        ||b - A x|| <= max(abs_tol, rel_tol * ||b - A x0||).

    Returns (x, iterations) where iterations counts operator applications
    inside the Arnoldi loop.  Raises NoConvergence when the budget is
    exhausted.
    """
    control = control or SolverControl()
    if precond is None:
        precond = lambda v: v  # noqa: E731
    b = np.asarray(b, dtype=float)
    n = b.size
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()

    r = b - op(x) if x.any() else b.copy()
    r_norm = float(np.linalg.norm(r))
    tol = control.tolerance(r_norm)
    if r_norm <= tol:
        return x, 0

    total = 0
    while True:
        m = min(control.restart, control.max_iters - total)
        if m <= 0:
            raise NoConvergence(x, r_norm, total)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        V[0] = r / r_norm
        g[0] = r_norm

        j_used = 0
        for j in range(m):
            Z[j] = precond(V[j])
            w = np.array(op(Z[j]), dtype=float)  # copy: op may return its input
            total += 1
            w_norm0 = np.linalg.norm(w)
            for i in range(j + 1):
                H[i, j] = V[i] @ w
                w -= H[i, j] * V[i]
            # re-orthogonalize once when cancellation ate the new direction
            if np.linalg.norm(w) < 1e-3 * w_norm0:
                for i in range(j + 1):
                    corr = V[i] @ w
                    H[i, j] += corr
                    w -= corr * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            breakdown = H[j + 1, j] == 0.0
            if not breakdown:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j_used = j + 1
            if abs(g[j + 1]) <= tol or breakdown:
                break

        y = np.zeros(j_used)
        for i in range(j_used - 1, -1, -1):
            y[i] = (g[i] - H[i, i + 1:j_used] @ y[i + 1:]) / H[i, i]
        x = x + Z[:j_used].T @ y

        r = b - op(x)
        r_norm = float(np.linalg.norm(r))
        if r_norm <= tol * (1.0 + 1e-8):
            return x, total
        if total >= control.max_iters:
            raise NoConvergence(x, r_norm, total)


@dataclass
class SpectrumEstimate:
    lambda_min_hat: float
    lambda_max_hat: float
    fallback: bool = False


def estimate_spectrum(op, diag_precond, n_iters=10, seed=0, constrained=None):
    """Extreme eigenvalue estimates of D^{-1} A from preconditioned CG.

    A deterministic pseudo-random right-hand side (zeroed at constrained
    dofs) drives `n_iters` CG iterations; the Lanczos tridiagonal matrix
    reconstructed from the step lengths and orthogonalization coefficients
    yields interior estimates of the spectrum.  If CG breaks down before
    two completed iterations, returns the flagged fallback (1, 1), which is
    exact whenever A equals its diagonal.
    """
    diag = np.asarray(diag_precond, dtype=float)
    n = diag.size
    rng = np.random.default_rng(seed)
    b = rng.standard_normal(n)
    if constrained is not None:
        b[constrained] = 0.0

    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    alphas, betas = [], []
    for _ in range(n_iters):
        if rz <= 0.0 or not np.isfinite(rz):
            break
        Ap = op(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0 or not np.isfinite(pAp):
            break
        alpha = rz / pAp
        alphas.append(alpha)
        r = r - alpha * Ap
        z = r / diag
        rz_new = float(r @ z)
        if rz_new <= 1e-28 * rz or not np.isfinite(rz_new):
            break
        beta = rz_new / rz
        betas.append(beta)
        p = z + beta * p
        rz = rz_new

    k = len(alphas)
    if k < 2:
        return SpectrumEstimate(1.0, 1.0, fallback=True)
    T = np.zeros((k, k))
    T[0, 0] = 1.0 / alphas[0]
    for i in range(1, k):
        T[i, i] = 1.0 / alphas[i] + betas[i - 1] / alphas[i - 1]
        off = np.sqrt(betas[i - 1]) / alphas[i - 1]
        T[i, i - 1] = off
        T[i - 1, i] = off
    ev = np.linalg.eigvalsh(T)
    return SpectrumEstimate(float(ev[0]), float(ev[-1]), fallback=False)
