"""Geometric multigrid V-cycle preconditioners.

A level context carries the matrix-free operator of that level together
with its diagonal and per-block eigenvalue estimates.  States, active-set
indicators and Dirichlet flags travel to coarser levels by nodal injection,
which keeps indicator entries binary on every level.  Smoothing is
Chebyshev-accelerated Jacobi applied blockwise (displacement block and
phase-field block, coupling ignored inside the smoother); the coarsest
level is solved by the same iteration with the range widened to the whole
estimated spectrum and the polynomial degree chosen from the Chebyshev
error bound, so the preconditioner stays linear.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import model
from .fem import ConstraintMask
from .krylov import estimate_spectrum

__all__ = [
    "ChebyshevMode",
    "ChebyshevParams",
    "PreconditionerKind",
    "LevelContext",
    "smoother_params",
    "solver_params",
    "chebyshev_apply",
    "chebyshev_solver_degree",
    "build_level_contexts",
    "contexts_from_operators",
    "vcycle",
    "coarse_solve",
]


class ChebyshevMode(Enum):
    SMOOTHER = "smoother"
    SOLVER = "solver"


class PreconditionerKind(Enum):
    FULL = "full"
    BLOCK_DIAG = "blockdiag"


@dataclass
class ChebyshevParams:
    degree: int
    a: float
    b: float
    mode: ChebyshevMode


def smoother_params(spectrum, degree=4):
    """Smoothing range targeting the upper spectrum: [1.2 lmax / 5, 1.2 lmax]."""
    top = 1.2 * spectrum.lambda_max_hat
    return ChebyshevParams(degree, top / 5.0, top, ChebyshevMode.SMOOTHER)


def solver_params(spectrum, degree):
    """Solver range covering the estimated spectrum: [0.9 lmin, 1.2 lmax]."""
    return ChebyshevParams(degree, 0.9 * spectrum.lambda_min_hat,
                           1.2 * spectrum.lambda_max_hat, ChebyshevMode.SOLVER)


def chebyshev_solver_degree(spectrum, target=1e-3, cap=30):
    """Smallest degree whose min-max bound on the solver range beats `target`."""
    a = 0.9 * spectrum.lambda_min_hat
    b = 1.2 * spectrum.lambda_max_hat
    if b - a <= 1e-14 * max(b, 1.0):
        return 1
    sigma = (b + a) / (b - a)
    d = int(np.ceil(np.arccosh(1.0 / target) / np.arccosh(sigma)))
    return max(1, min(cap, d))


def chebyshev_apply(apply_fn, diag, params, x, b):
    """Degree-d Chebyshev-accelerated Jacobi iteration for A x = b.

    Damps error components of D^{-1} A with eigenvalues inside
    [params.a, params.b]; the error polynomial is the scaled and shifted
    Chebyshev polynomial normalized to 1 at the origin.  Returns the
    updated iterate; entries where b and x vanish and A acts as identity
    stay zero.
    """
    theta = 0.5 * (params.b + params.a)
    delta = 0.5 * (params.b - params.a)
    inv_diag = 1.0 / np.asarray(diag, dtype=float)
    x = np.asarray(x, dtype=float).copy()
    r = b - apply_fn(x) if x.any() else np.asarray(b, dtype=float).copy()

    if delta <= 1e-14 * max(abs(theta), 1.0):
        for _ in range(params.degree):
            x += inv_diag * r / theta
            r = b - apply_fn(x)
        return x

    sigma = theta / delta
    rho_old = 1.0 / sigma
    d = inv_diag * r / theta
    x += d
    for _ in range(params.degree - 1):
        r = r - apply_fn(d)
        rho = 1.0 / (2.0 * sigma - rho_old)
        d = (rho * rho_old) * d + (2.0 * rho / delta) * (inv_diag * r)
        x += d
        rho_old = rho
    return x


@dataclass
class LevelContext:
    """Per-level solver state: operator, diagonal, block spectra, masks."""

    level: int
    op: object
    diag: np.ndarray
    spectra: tuple
    constrained: np.ndarray
    disc: object


def _estimate_blocks(op, diag, eig_iters, seed):
    spectra = []
    for k, blk in enumerate(op.blocks):
        spectra.append(estimate_spectrum(
            lambda vb, k=k: op.apply_block(k, vb),
            diag[blk],
            n_iters=eig_iters,
            seed=seed + 31 * op.space.level + 7 * k if hasattr(op, "space")
            else seed + 7 * k,
            constrained=op.mask.is_constrained[blk],
        ))
    return tuple(spectra)


def contexts_from_operators(disc, ops, eig_iters=10, seed=0):
    """Level contexts for arbitrary operators implementing the block surface."""
    contexts = []
    for l, op in enumerate(ops):
        diag = op.diagonal()
        spectra = _estimate_blocks(op, diag, eig_iters, seed)
        contexts.append(LevelContext(
            level=l, op=op, diag=diag, spectra=spectra,
            constrained=op.mask.is_constrained, disc=disc))
    return contexts


def build_level_contexts(disc, state, active_mask, dirichlet_mask, params,
                         split, eig_iters=10, seed=0, threads=1):
    """Phase-field level contexts from finest-level data.

    State vectors, the active-set indicator and the Dirichlet flags are
    carried to each coarser level by nodal injection, so indicator entries
    remain exactly 0 or 1.  Diagonals and block eigenvalue estimates are
    recomputed for every level (they change whenever the state or the
    masks change).
    """
    n_levels = disc.hierarchy.n_levels
    states = [None] * n_levels
    masks = [None] * n_levels
    states[-1] = state
    fine_constrained = dirichlet_mask.is_constrained | active_mask
    fine_values = np.where(dirichlet_mask.is_constrained,
                           dirichlet_mask.inhomogeneity, 0.0)
    masks[-1] = ConstraintMask(fine_constrained, fine_values)

    for l in range(n_levels - 2, -1, -1):
        s = states[l + 1]
        states[l] = model.LinearizationState(
            U=disc.restrict_nodal(s.U, l),
            U_prev1=disc.restrict_nodal(s.U_prev1, l),
            U_prev2=disc.restrict_nodal(s.U_prev2, l),
            t=s.t, t_prev1=s.t_prev1, t_prev2=s.t_prev2,
            phi_tilde=disc.inject_scalar(s.phi_tilde, l),
        )
        prev = masks[l + 1]
        nc = disc.hierarchy.dim + 1
        Vf = disc.hierarchy.levels[l + 1].n_vertices
        flags = prev.is_constrained.reshape(nc, Vf)[:, disc.injection(l)].ravel()
        masks[l] = ConstraintMask(flags, np.zeros(flags.size))

    contexts = []
    for l in range(n_levels):
        op = model.PhaseFieldOperator(
            disc.spaces[l], states[l], masks[l], params, split, threads=threads)
        diag = op.diagonal()
        spectra = _estimate_blocks(op, diag, eig_iters, seed)
        contexts.append(LevelContext(
            level=l, op=op, diag=diag, spectra=spectra,
            constrained=masks[l].is_constrained, disc=disc))
    return contexts


def _smooth_blockwise(ctx, x, b, degree):
    for k, blk in enumerate(ctx.op.blocks):
        prm = smoother_params(ctx.spectra[k], degree)
        x[blk] = chebyshev_apply(
            lambda vb, k=k: ctx.op.apply_block(k, vb),
            ctx.diag[blk], prm, x[blk], b[blk])
    return x


def coarse_solve(ctx, r, target=1e-3, cap=30):
    """Blockwise Chebyshev solve on the coarsest level (linear in r)."""
    x = np.zeros_like(r)
    for k, blk in enumerate(ctx.op.blocks):
        degree = chebyshev_solver_degree(ctx.spectra[k], target, cap)
        prm = solver_params(ctx.spectra[k], degree)
        x[blk] = chebyshev_apply(
            lambda vb, k=k: ctx.op.apply_block(k, vb),
            ctx.diag[blk], prm, x[blk], r[blk])
    return x


def _vcycle_monolithic(contexts, r, level, degree, coarse_target, coarse_cap):
    ctx = contexts[level]
    if level == 0:
        return coarse_solve(ctx, r, coarse_target, coarse_cap)
    x = np.zeros_like(r)
    x = _smooth_blockwise(ctx, x, r, degree)
    d = r - ctx.op.apply(x)
    rc = ctx.disc.restrict(d, level - 1)
    rc[contexts[level - 1].constrained] = 0.0
    ec = _vcycle_monolithic(contexts, rc, level - 1, degree,
                            coarse_target, coarse_cap)
    ef = ctx.disc.prolongate(ec, level - 1)
    ef[ctx.constrained] = 0.0
    x += ef
    return _smooth_blockwise(ctx, x, r, degree)


def _vcycle_single_block(contexts, k, rb, level, degree, coarse_target,
                         coarse_cap, n_comp):
    ctx = contexts[level]
    blk = ctx.op.blocks[k]
    if level == 0:
        deg = chebyshev_solver_degree(ctx.spectra[k], coarse_target, coarse_cap)
        prm = solver_params(ctx.spectra[k], deg)
        return chebyshev_apply(
            lambda vb: ctx.op.apply_block(k, vb),
            ctx.diag[blk], prm, np.zeros_like(rb), rb)
    prm = smoother_params(ctx.spectra[k], degree)
    apply_b = lambda vb: ctx.op.apply_block(k, vb)  # noqa: E731
    x = chebyshev_apply(apply_b, ctx.diag[blk], prm, np.zeros_like(rb), rb)
    d = rb - apply_b(x)
    rc = ctx.disc.restrict_block(d, level - 1, n_comp)
    rc[contexts[level - 1].constrained[contexts[level - 1].op.blocks[k]]] = 0.0
    ec = _vcycle_single_block(contexts, k, rc, level - 1, degree,
                              coarse_target, coarse_cap, n_comp)
    ef = ctx.disc.prolongate_block(ec, level - 1, n_comp)
    ef[ctx.constrained[blk]] = 0.0
    x += ef
    return chebyshev_apply(apply_b, ctx.diag[blk], prm, x, rb)


def vcycle(contexts, kind, r, degree=4, coarse_target=1e-3, coarse_cap=30):
    """One V(1,1) multigrid cycle applied to a fine-level residual.

    kind FULL runs the cycle on the monolithic operator with the blockwise
    smoother; kind BLOCK_DIAG runs an independent cycle per diagonal block
    and leaves the off-diagonal coupling out entirely.  Output is zero at
    constrained dofs.
    """
    fine = contexts[-1]
    r = np.asarray(r, dtype=float).copy()
    r[fine.constrained] = 0.0
    top = len(contexts) - 1
    if kind is PreconditionerKind.FULL:
        return _vcycle_monolithic(contexts, r, top, degree,
                                  coarse_target, coarse_cap)
    dim = fine.disc.hierarchy.dim
    out = np.zeros_like(r)
    for k, blk in enumerate(fine.op.blocks):
        n_comp = dim if k == 0 else 1
        out[blk] = _vcycle_single_block(contexts, k, r[blk], top, degree,
                                        coarse_target, coarse_cap, n_comp)
    return out
