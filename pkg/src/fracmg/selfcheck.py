"""Built-in verification oracles.

Three independent cross-checks of the matrix-free machinery:

* the operator action against an explicitly assembled matrix (the
  assembly walks test/trial basis pairs, a completely different code path
  from the batched gather/contract/scatter kernels),
* the Jacobian action against central finite differences of the residual,
* grid-transfer adjointness and injection round trips against dense
  transfer matrices.

All checks run on meshes small enough to finish in seconds and use fixed
seeds, so a failure is always reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from .fem import ConstraintMask, Discretization
from .mesh import build_lshape, build_square
from .model import LinearizationState, SplitKind

__all__ = ["CheckResult", "assemble_matrix", "random_state", "run_all"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def assemble_matrix(space, state, mask, params, split):
    """Dense constrained Jacobian assembled from basis-pair integrals."""
    dim = space.dim
    n_corners = 2**dim
    dofmap = space.dofmap
    N = space.N
    G = space.gradN
    JxW = space.JxW
    C = space.mesh.n_cells

    loc = space.gather(state.U)
    grad_u = np.einsum("cin,qnj->cqij", loc[:, :dim], G)
    e_u = 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))
    div_u = np.trace(grad_u, axis1=-2, axis2=-1)
    phi_q = np.einsum("cn,qn->cq", loc[:, dim], N)
    phit_q = np.einsum("cn,qn->cq", np.asarray(state.phi_tilde)[space.mesh.cells], N)
    gk = model.degradation(phit_q, params.kappa)
    if params.modulus_field is not None:
        rho = np.asarray(params.modulus_field(space.qp_coords), dtype=float)
    else:
        rho = np.ones_like(phi_q)
    p = params.pressure(state.t)
    q = model._split_batch(e_u, split, params.lam, params.mu,
                           need_dsig=split is SplitKind.MIEHE,
                           band=params.split_band)

    eye = np.eye(dim)
    # symmetric gradient of each displacement basis function, (dim, n, Q, d, d)
    esym = np.zeros((dim, n_corners, space.N.shape[0], dim, dim))
    for i in range(dim):
        for a in range(dim):
            esym[i, :, :, i, a] += 0.5 * G[:, :, a].T
            esym[i, :, :, a, i] += 0.5 * G[:, :, a].T

    A = np.zeros((dofmap.n_dofs, dofmap.n_dofs))
    cells = space.mesh.cells
    V = dofmap.n_vertices
    nq = len(JxW)

    def add(rows, cols, vals):
        np.add.at(A, (rows, cols), vals)

    for qi in range(nq):
        w = JxW[qi]
        for cj in range(dim):           # trial displacement component
            for nj in range(n_corners):
                ej = esym[cj, nj, qi]   # (d, d)
                trj = ej.trace()
                iso = 2.0 * params.mu * ej + params.lam * trj * eye
                if split is SplitKind.NOSPLIT:
                    s_lin = (gk[:, qi] * rho[:, qi])[:, None, None] * iso
                else:
                    extra = np.einsum("cijkl,kl->cij", q["dsig_plus"][:, qi], ej)
                    s_lin = rho[:, qi, None, None] * iso \
                        + ((gk[:, qi] - 1.0) * rho[:, qi])[:, None, None] * extra
                col = cj * V + cells[:, nj]
                for ci in range(dim):   # test displacement component
                    for ni in range(n_corners):
                        val = w * np.einsum("cab,ab->c", s_lin, esym[ci, ni, qi])
                        add(ci * V + cells[:, ni], col, val)
                # phase-field row, displacement column
                coup = (1.0 - params.kappa) * phi_q[:, qi] * rho[:, qi] \
                    * np.einsum("cab,ab->c", q["sig_plus"][:, qi], ej) \
                    + 2.0 * p * phi_q[:, qi] * trj
                for ni in range(n_corners):
                    add(dim * V + cells[:, ni], col, w * coup * N[qi, ni])
        a_pp = (1.0 - params.kappa) * rho[:, qi] * q["E_plus"][:, qi] \
            + 2.0 * p * div_u[:, qi] + params.g_c / params.eps
        for nj in range(n_corners):
            col = dim * V + cells[:, nj]
            for ni in range(n_corners):
                val = w * (a_pp * N[qi, nj] * N[qi, ni]
                           + params.g_c * params.eps * (G[qi, nj] @ G[qi, ni]))
                add(dim * V + cells[:, ni], col, val)

    c = mask.is_constrained
    A[c, :] = 0.0
    A[:, c] = 0.0
    A[np.ix_(c, c)] = np.eye(int(c.sum()))
    return A


def random_state(space, rng, t=0.1, gapped=False):
    """Random linearization state; `gapped` resamples displacements until
    every quadrature-point strain has clearly separated, nonzero
    eigenvalues (relative to the strain magnitude)."""
    dofmap = space.dofmap
    n = dofmap.n_dofs
    V = dofmap.n_vertices
    magnitude = 0.1 * float(np.min(space.mesh.cell_size))
    for _ in range(200):
        U = magnitude * rng.standard_normal(n)
        U[dofmap.phi_slice] = np.clip(
            0.6 + 0.4 * rng.standard_normal(V), 0.0, 1.0)
        if not gapped:
            break
        loc = space.gather(U)
        grad = np.einsum("cin,qnj->cqij", loc[:, :space.dim], space.gradN)
        e = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        w = np.linalg.eigvalsh(e)
        scale = np.max(np.abs(w))
        gaps = np.diff(w, axis=-1)
        if np.all(np.abs(gaps) > 1e-3 * scale) and np.all(np.abs(w) > 1e-4 * scale):
            break
    else:
        raise RuntimeError("could not sample a gapped state")
    prev1 = U.copy()
    prev2 = U + 0.01 * rng.standard_normal(n)
    phi_tilde = model.extrapolate(prev1[dofmap.phi_slice],
                                  prev2[dofmap.phi_slice], t, t / 2, 0.0)
    return LinearizationState(U=U, U_prev1=prev1, U_prev2=prev2,
                              t=t, t_prev1=t / 2, t_prev2=0.0,
                              phi_tilde=phi_tilde)


def _test_spaces():
    out = []
    for hier in (build_square(4.0, 3), build_lshape(500.0, 2),
                 build_lshape(500.0, 2, extrude=250.0)):
        disc = Discretization(hier)
        out.append(disc)
    return out


def _params_for(space):
    scale = 1.0 if space.mesh.cell_size[0] < 10 else 250.0
    return model.MaterialParams(
        mu=1.3, lam=0.9, g_c=0.7, kappa=1e-10, eps=2.0 * scale,
        pressure_fn=lambda t: 10.0 * t)


def check_matrixfree_vs_assembled(n_states=3, seed=1234):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for disc in _test_spaces():
        space = disc.finest
        params = _params_for(space)
        dofmap = space.dofmap
        for split in (SplitKind.NOSPLIT, SplitKind.MIEHE):
            for use_mask in (False, True):
                for _ in range(n_states):
                    state = random_state(space, rng,
                                         gapped=split is SplitKind.MIEHE)
                    mask = ConstraintMask.empty(dofmap.n_dofs)
                    if use_mask:
                        flags = rng.random(dofmap.n_dofs) < 0.15
                        mask = ConstraintMask(flags, np.zeros(dofmap.n_dofs))
                    A = assemble_matrix(space, state, mask, params, split)
                    op = model.PhaseFieldOperator(space, state, mask, params, split)
                    v = rng.standard_normal(dofmap.n_dofs)
                    ref = A @ v
                    got = op.apply(v)
                    err = np.linalg.norm(got - ref) / max(np.linalg.norm(ref), 1e-300)
                    worst = max(worst, err)
                    # the computed diagonal must match the assembled one too
                    derr = np.linalg.norm(op.diagonal() - np.diag(A)) \
                        / np.linalg.norm(np.diag(A))
                    worst = max(worst, derr)
    return CheckResult(
        "matrix-free action vs assembled matrix",
        worst <= 1e-12,
        f"max relative error {worst:.3e} (tolerance 1e-12)")


def check_fd_jacobian(seed=4321):
    rng = np.random.default_rng(seed)
    delta = 1e-6
    worst = 0.0
    for disc in _test_spaces():
        space = disc.finest
        params = _params_for(space)
        dofmap = space.dofmap
        mask = ConstraintMask.empty(dofmap.n_dofs)
        for split in (SplitKind.NOSPLIT, SplitKind.MIEHE):
            state = random_state(space, rng, gapped=split is SplitKind.MIEHE)
            v = rng.standard_normal(dofmap.n_dofs)
            plus = state.with_U(state.U + delta * v)
            minus = state.with_U(state.U - delta * v)
            fd = (model.residual(space, plus, mask, params, split)
                  - model.residual(space, minus, mask, params, split)) / (2 * delta)
            Gv = model.jacobian_vmult(space, state, mask, params, split, v)
            err = np.linalg.norm(fd - Gv) / max(np.linalg.norm(Gv), 1e-300)
            worst = max(worst, err)
    return CheckResult(
        "jacobian action vs finite differences",
        worst <= 1e-5,
        f"max relative error {worst:.3e} (tolerance 1e-5)")


def check_transfers(seed=999):
    rng = np.random.default_rng(seed)
    worst = 0.0
    ok = True
    for disc in _test_spaces():
        hier = disc.hierarchy
        for l in range(hier.n_levels - 1):
            Vc = hier.levels[l].n_vertices
            Vf = hier.levels[l + 1].n_vertices
            P = np.zeros((Vf, Vc))
            for j in range(Vc):
                ej = np.zeros(Vc)
                ej[j] = 1.0
                P[:, j] = disc.prolongate_scalar(ej, l)
            vc = rng.standard_normal(Vc)
            wf = rng.standard_normal(Vf)
            lhs = float((P @ vc) @ wf)
            rhs = float(vc @ disc.restrict_scalar(wf, l))
            err = abs(lhs - rhs) / max(abs(lhs), 1e-300)
            worst = max(worst, err)
            # injection inverts nodal prolongation of coarse data
            up = np.zeros(Vf)
            up[disc.injection(l)] = vc
            ok = ok and np.array_equal(disc.inject_scalar(up, l), vc)
            # linear functions are reproduced exactly
            xc = hier.levels[l].vertices[:, 0]
            xf = hier.levels[l + 1].vertices[:, 0]
            err_lin = np.max(np.abs(disc.prolongate_scalar(xc, l) - xf)) \
                / max(np.max(np.abs(xf)), 1e-300)
            worst = max(worst, err_lin)
    return CheckResult(
        "transfer adjointness and injection",
        ok and worst <= 1e-13,
        f"max relative error {worst:.3e} (tolerance 1e-13)")


def run_all(verbose=False):
    checks = [check_transfers, check_fd_jacobian, check_matrixfree_vs_assembled]
    results = [chk() for chk in checks]
    if verbose:
        for r in results:
            print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    return results
