"""Primal-dual active set driver for the irreversibility constraint.

Each iteration assembles the unconstrained residual, re-classifies the
phase-field dofs into active (bound enforced as equality) and inactive
(equation enforced), solves the row/column-filtered linear correction with
multigrid-preconditioned GMRES and applies one Newton update.  The loop
stops once the set stops changing and the filtered residual is below the
absolute tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import krylov, mgsolve, model
from .fem import ConstraintMask

__all__ = [
    "ActiveSetParams",
    "ActiveSetIteration",
    "ActiveSetReport",
    "ActiveSetNonConvergence",
    "lumped_mass_inverse",
    "compute_active_set",
    "ActiveSetSolver",
]


@dataclass
class ActiveSetParams:
    c: float = 100.0
    eps_as: float = 1e-10
    max_iters: int = 50
    # Newton safeguard: halve the update while the filtered residual grows
    # by more than `growth_cap`; `max_halvings = 0` restores plain updates.
    growth_cap: float = 4.0
    max_halvings: int = 8


@dataclass
class ActiveSetIteration:
    set_size: int
    set_changed: bool
    residual_norm: float
    gmres_iters: int


@dataclass
class ActiveSetReport:
    iterations: int = 0
    history: list = field(default_factory=list)
    converged: bool = False

    @property
    def gmres_iters(self):
        return [h.gmres_iters for h in self.history]


class ActiveSetNonConvergence(RuntimeError):
    def __init__(self, report, message):
        super().__init__(message)
        self.report = report


def lumped_mass_inverse(space):
    """Reciprocal Gauss-Lobatto lumped mass, one entry per dof."""
    m = space.vertex_mass
    if np.any(m <= 0.0):
        raise RuntimeError("lumped mass has non-positive entries")
    return np.tile(1.0 / m, space.dofmap.n_components)


def compute_active_set(R, U, phi_old, mass_inv, params, dofmap,
                       dirichlet_flags=None):
    """Phase-field dofs where the bound phi <= phi_old must be enforced.

    R is the residual -A(U) with Dirichlet rows zeroed; the classification
    follows  (M^{-1} R)_i + c (phi - phi_old)_i > 0  on phase-field dofs
    only.  Returns a boolean array over all dofs.
    """
    phi = dofmap.phi_slice
    indicator = mass_inv[phi] * R[phi] + params.c * (U[phi] - np.asarray(phi_old))
    active = np.zeros(dofmap.n_dofs, dtype=bool)
    active[phi] = indicator > 0.0
    if dirichlet_flags is not None:
        active &= ~dirichlet_flags
    return active


@dataclass
class SolverConfig:
    """Everything the nonlinear stack needs beyond the physics."""

    control: krylov.SolverControl = field(default_factory=krylov.SolverControl)
    active_set: ActiveSetParams = field(default_factory=ActiveSetParams)
    precond: mgsolve.PreconditionerKind = mgsolve.PreconditionerKind.FULL
    cheb_degree: int = 4
    coarse_target: float = 1e-3
    coarse_cap: int = 30
    eig_iters: int = 10
    seed: int = 0
    threads: int = 1


class ActiveSetSolver:
    """Bound-constrained Newton solve of one incremental step."""

    def __init__(self, disc, params, split, config=None):
        self.disc = disc
        self.params = params
        self.split = split
        self.config = config or SolverConfig()
        self.mass_inv = lumped_mass_inverse(disc.finest)

    def solve_step(self, state, dirichlet, phi_old, active_prev=None):
        """Advance one incremental step.

        Parameters
        ----------
        state : LinearizationState with U holding the previous solution
            (used as initial guess); Dirichlet values of `dirichlet` are
            imposed on it before the first iteration.
        dirichlet : ConstraintMask of boundary conditions at the new time.
        phi_old : bound values for the phase field (previous step).
        active_prev : boolean dof array, the converged set of the previous
            call; the set-stability test of the first iteration compares
            against it.

        Returns (U, ActiveSetReport, active) and raises
        ActiveSetNonConvergence when the iteration budget is exhausted.
        """
        cfg = self.config
        space = self.disc.finest
        dofmap = space.dofmap
        n = dofmap.n_dofs

        U = np.asarray(state.U, dtype=float).copy()
        U[dirichlet.is_constrained] = dirichlet.inhomogeneity[dirichlet.is_constrained]
        active = (np.zeros(n, dtype=bool) if active_prev is None
                  else np.asarray(active_prev, dtype=bool).copy())
        phi_old = np.asarray(phi_old, dtype=float)

        report = ActiveSetReport()
        R = -model.residual(space, state.with_U(U), dirichlet, self.params,
                            self.split)
        for _k in range(cfg.active_set.max_iters):
            # R is the Newton right-hand side -A(U), Dirichlet rows zeroed
            active_new = compute_active_set(
                R, U, phi_old, self.mass_inv, cfg.active_set, dofmap,
                dirichlet_flags=dirichlet.is_constrained)
            changed = bool(np.any(active_new != active))

            mask = dirichlet.combined_with(
                active_new, np.concatenate(
                    [np.zeros(dofmap.dim * dofmap.n_vertices), phi_old]))
            Rt = R.copy()
            Rt[mask.is_constrained] = 0.0
            rnorm = float(np.linalg.norm(Rt))

            if not changed and rnorm <= cfg.active_set.eps_as:
                report.history.append(ActiveSetIteration(
                    int(active_new.sum()), changed, rnorm, 0))
                report.iterations = len(report.history)
                report.converged = True
                active = active_new
                break

            contexts = mgsolve.build_level_contexts(
                self.disc, state.with_U(U), active_new, dirichlet, self.params,
                self.split, eig_iters=cfg.eig_iters, seed=cfg.seed,
                threads=cfg.threads)
            fine_op = contexts[-1].op
            precond = lambda r: mgsolve.vcycle(  # noqa: E731
                contexts, cfg.precond, r, degree=cfg.cheb_degree,
                coarse_target=cfg.coarse_target, coarse_cap=cfg.coarse_cap)
            try:
                dU, gmres_iters = krylov.gmres(
                    fine_op.apply, precond, Rt, cfg.control)
            except krylov.NoConvergence as err:
                report.history.append(ActiveSetIteration(
                    int(active_new.sum()), changed, rnorm, err.iterations))
                report.iterations = len(report.history)
                raise ActiveSetNonConvergence(
                    report, f"linear solver failed: {err}") from err

            # accept the update, halving it while the residual explodes
            # (full steps can badly overshoot across the tensile/compressive
            # switching manifold of the spectral split)
            for _h in range(cfg.active_set.max_halvings + 1):
                U_trial = U + dU
                U_trial[mask.is_constrained] = \
                    mask.inhomogeneity[mask.is_constrained]
                R_trial = -model.residual(space, state.with_U(U_trial),
                                          dirichlet, self.params, self.split)
                Rt_trial = np.where(mask.is_constrained, 0.0, R_trial)
                if (np.linalg.norm(Rt_trial)
                        <= cfg.active_set.growth_cap * max(rnorm, 1e-300)):
                    break
                dU = 0.5 * dU
            U = U_trial
            R = R_trial
            active = active_new
            report.history.append(ActiveSetIteration(
                int(active_new.sum()), changed, rnorm, gmres_iters))
        else:
            report.iterations = len(report.history)
            raise ActiveSetNonConvergence(
                report,
                f"active set did not settle within {cfg.active_set.max_iters} "
                "iterations")

        report.iterations = len(report.history)
        return U, report, active
