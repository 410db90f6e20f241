"""Coupled displacement/phase-field fracture physics.

Implements the residual of the quasi-monolithic semilinear form, the
matrix-free action of its Jacobian, the exact operator diagonal and the
energy/load quantities of interest.  The displacement equation is
linearized around a time-lagged extrapolation of the phase field, which
decouples it from the current phase field (the u-phi Jacobian block
vanishes); the remaining blocks are

    G_uu      degraded tensile stiffness plus compressive stiffness,
    G_phi_u   crack driving force and pressure coupling,
    G_phi_phi reaction (tensile energy, pressure, 1/eps) plus eps-diffusion.

Tensile/compressive stress splitting follows the spectral decomposition of
the strain; its linearization uses the regularized divided-difference form
so nearly-degenerate eigenvalues stay well defined.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .mesh import BoundaryId

__all__ = [
    "SplitKind",
    "MaterialParams",
    "LinearizationState",
    "extrapolate",
    "degradation",
    "ddegradation",
    "strain_split",
    "PhaseFieldOperator",
    "residual",
    "jacobian_vmult",
    "diagonal",
    "crack_energy",
    "bulk_energy",
    "boundary_load",
    "fracture_volume",
]

_EIG_GAP_TOL = 1e-8


class SplitKind(Enum):
    NOSPLIT = "none"
    MIEHE = "miehe"


# The hard positive part makes the split stress only C^0 in the strain.
# Newton iterates then chatter across the tensile/compressive switch at
# noise-level strains inside fully degraded cells (stiffness jumps by 1/kappa
# there) and cannot reach tight absolute tolerances.  A C^1 blend over a
# fixed eigenvalue half-width `band` removes the kink; with a constant band
# the blended stress remains the exact gradient of the blended energy, so
# the Jacobian stays consistent and symmetric.  band = 0 recovers the hard
# split bit for bit.

def _blend_pos(x, band):
    """C^1 positive part: equals max(x, 0) outside [-band, band]."""
    if band <= 0.0:
        return np.maximum(x, 0.0)
    mid = np.square(x + band) / (4.0 * band)
    return np.where(x >= band, x, np.where(x <= -band, 0.0, mid))


def _blend_pos_prime(x, band):
    if band <= 0.0:
        return (x > 0.0).astype(float)
    mid = (x + band) / (2.0 * band)
    return np.where(x >= band, 1.0, np.where(x <= -band, 0.0, mid))


def _blend_pos_sq(x, band):
    """Potential of the blend: derivative equals 2 * _blend_pos(x)."""
    if band <= 0.0:
        return np.square(np.maximum(x, 0.0))
    mid = (x + band) ** 3 / (6.0 * band)
    return np.where(x >= band, np.square(x) + band**2 / 3.0,
                    np.where(x <= -band, 0.0, mid))


@dataclass
class MaterialParams:
    mu: float
    lam: float
    g_c: float
    kappa: float = 1e-10
    eps: float = 1.0
    pressure_fn: Optional[Callable[[float], float]] = None
    modulus_field: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # half-width of the C^1 tensile/compressive blend of the spectral split;
    # 0 keeps the hard split (see _blend_pos)
    split_band: float = 0.0

    def pressure(self, t):
        return float(self.pressure_fn(t)) if self.pressure_fn is not None else 0.0


@dataclass
class LinearizationState:
    """Current coefficients plus the lagged history needed for extrapolation."""

    U: np.ndarray
    U_prev1: np.ndarray
    U_prev2: np.ndarray
    t: float
    t_prev1: float
    t_prev2: float
    phi_tilde: np.ndarray

    def with_U(self, U):
        return replace(self, U=U)


def extrapolate(phi_prev1, phi_prev2, t, t_prev1, t_prev2):
    """Linear-in-time extrapolation of the phase field, clamped to [0, 1].

    Falls back to the previous value on the first step (t_prev1 == t_prev2).
    """
    phi_prev1 = np.asarray(phi_prev1, dtype=float)
    dt_hist = t_prev1 - t_prev2
    if dt_hist <= 0.0:
        return np.clip(phi_prev1, 0.0, 1.0)
    slope = (phi_prev1 - np.asarray(phi_prev2, dtype=float)) / dt_hist
    return np.clip(phi_prev1 + (t - t_prev1) * slope, 0.0, 1.0)


def degradation(phi, kappa):
    """Stiffness degradation (1 - kappa) phi^2 + kappa."""
    return (1.0 - kappa) * np.square(phi) + kappa


def ddegradation(phi, kappa):
    return 2.0 * (1.0 - kappa) * np.asarray(phi)


# ---------------------------------------------------------------------------
# stress splitting
# ---------------------------------------------------------------------------

def _split_batch(e, kind, lam, mu, need_dsig=False, band=0.0):
    """Split quantities for a batch of symmetric tensors e (..., d, d).

    Returns a dict with E_plus, E_minus, sig_plus, sig_minus and, when
    requested for the spectral split, the fourth-order tensor dsig_plus
    (..., d, d, d, d) mapping a strain increment to the tensile stress
    increment.  `band` is the C^1 blending half-width of the positive part
    (see _blend_pos); zero gives the hard split.
    """
    e = np.asarray(e, dtype=float)
    d = e.shape[-1]
    eye = np.eye(d)
    tr = np.trace(e, axis1=-2, axis2=-1)

    if kind is SplitKind.NOSPLIT:
        ee = np.einsum("...ij,...ij->...", e, e)
        E_plus = 0.5 * lam * tr**2 + mu * ee
        sig_plus = 2.0 * mu * e + lam * tr[..., None, None] * eye
        return dict(
            E_plus=E_plus,
            E_minus=np.zeros_like(E_plus),
            sig_plus=sig_plus,
            sig_minus=np.zeros_like(sig_plus),
            dsig_plus=None,
        )

    w, Nv = np.linalg.eigh(e)
    scale = np.linalg.norm(e, axis=(-2, -1))
    wp = _blend_pos(w, band)
    trp = _blend_pos(tr, band)
    E_s = 0.5 * lam * tr**2 + mu * np.sum(w**2, axis=-1)
    E_plus = 0.5 * lam * _blend_pos_sq(tr, band) \
        + mu * np.sum(_blend_pos_sq(w, band), axis=-1)
    e_plus = np.einsum("...ia,...a,...ja->...ij", Nv, wp, Nv)
    sig = 2.0 * mu * e + lam * tr[..., None, None] * eye
    sig_plus = 2.0 * mu * e_plus + lam * trp[..., None, None] * eye
    out = dict(
        E_plus=E_plus,
        E_minus=E_s - E_plus,
        sig_plus=sig_plus,
        sig_minus=sig - sig_plus,
        dsig_plus=None,
    )
    if need_dsig:
        H = _blend_pos_prime(w, band)
        P4 = np.zeros(e.shape + (d, d))
        for a in range(d):
            Ma = np.einsum("...i,...j->...ij", Nv[..., :, a], Nv[..., :, a])
            P4 += H[..., a, None, None, None, None] * np.einsum(
                "...ij,...kl->...ijkl", Ma, Ma)
        for a in range(d):
            for b in range(a + 1, d):
                gap = w[..., a] - w[..., b]
                degenerate = np.abs(gap) < _EIG_GAP_TOL * np.maximum(scale, 1e-300)
                safe_gap = np.where(degenerate, 1.0, gap)
                dd = np.where(
                    degenerate,
                    0.5 * (H[..., a] + H[..., b]),
                    (wp[..., a] - wp[..., b]) / safe_gap,
                )
                S = 0.5 * (
                    np.einsum("...i,...j->...ij", Nv[..., :, a], Nv[..., :, b])
                    + np.einsum("...i,...j->...ij", Nv[..., :, b], Nv[..., :, a])
                )
                P4 += 2.0 * dd[..., None, None, None, None] * np.einsum(
                    "...ij,...kl->...ijkl", S, S)
        Htr = _blend_pos_prime(tr, band)
        dsig = lam * Htr[..., None, None, None, None] * np.einsum(
            "ij,kl->ijkl", eye, eye)
        dsig = dsig + 2.0 * mu * P4
        out["dsig_plus"] = dsig
    return out


def strain_split(e, kind, lam, mu, band=0.0):
    """Tensile/compressive split of one symmetric strain tensor.

    Returns (energy_plus, energy_minus, sigma_plus, sigma_minus).
    """
    q = _split_batch(np.asarray(e, dtype=float)[None, ...], kind, lam, mu,
                     band=band)
    return (float(q["E_plus"][0]), float(q["E_minus"][0]),
            q["sig_plus"][0], q["sig_minus"][0])


# ---------------------------------------------------------------------------
# matrix-free operator
# ---------------------------------------------------------------------------

def _chunk_ranges(n, threads):
    bounds = np.linspace(0, n, threads + 1).astype(int)
    return [(bounds[i], bounds[i + 1]) for i in range(threads) if bounds[i + 1] > bounds[i]]


class PhaseFieldOperator:
    """Matrix-free action of the constrained Jacobian on one level.

    Quadrature-point data that depends on the linearization state is
    computed once at construction; each application then reduces to a chain
    of cell-batched contractions equivalent to summing the element-local
    matrix products over all cells.  Constrained rows act as identity,
    constrained columns contribute nothing to unconstrained rows.
    """

    def __init__(self, space, state, mask, params, split, threads=1):
        self.space = space
        self.state = state
        self.mask = mask
        self.params = params
        self.split = split
        self.threads = max(1, int(threads))
        self._pool = None
        self._build_caches()

    @property
    def n_dofs(self):
        return self.space.n_dofs

    @property
    def blocks(self):
        return (self.space.dofmap.u_slice, self.space.dofmap.phi_slice)

    def _build_caches(self):
        sp_ = self.space
        prm = self.params
        dim = sp_.dim
        loc = sp_.gather(self.state.U)
        grad_u = sp_.qp_grad_vector(loc[:, :dim])
        e_u = 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))
        div_u = np.trace(grad_u, axis1=-2, axis2=-1)
        phi_q = sp_.qp_scalar(loc[:, dim])

        phit_nodal = np.asarray(self.state.phi_tilde)[sp_.mesh.cells]
        phit_q = sp_.qp_scalar(phit_nodal)
        gk = degradation(phit_q, prm.kappa)

        if prm.modulus_field is not None:
            rho = np.asarray(prm.modulus_field(sp_.qp_coords), dtype=float)
        else:
            rho = np.ones_like(phi_q)
        p = prm.pressure(self.state.t)

        q = _split_batch(e_u, self.split, prm.lam, prm.mu,
                         need_dsig=self.split is SplitKind.MIEHE,
                         band=prm.split_band)

        self._rho = rho
        self._gk_rho = gk * rho
        self._gkm1_rho = (gk - 1.0) * rho
        self._dsig = q["dsig_plus"]
        eye = np.eye(dim)
        self._T_phiu = (
            rho[..., None, None] * (1.0 - prm.kappa) * phi_q[..., None, None]
            * q["sig_plus"]
            + 2.0 * p * phi_q[..., None, None] * eye
        )
        self._a_phiphi = (
            (1.0 - prm.kappa) * rho * q["E_plus"]
            + 2.0 * p * div_u
            + prm.g_c / prm.eps
        )
        self._k_phi = prm.g_c * prm.eps

    # -- local kernels -----------------------------------------------------

    def _lin_stress(self, e, rows):
        """Linearized u-block stress for strain increments e (C', Q, d, d)."""
        prm = self.params
        dim = self.space.dim
        tr = np.trace(e, axis1=-2, axis2=-1)
        iso = 2.0 * prm.mu * e + prm.lam * tr[..., None, None] * np.eye(dim)
        if self.split is SplitKind.NOSPLIT:
            return self._gk_rho[rows, :, None, None] * iso
        extra = np.einsum("cqijkl,cqkl->cqij", self._dsig[rows], e)
        return (self._rho[rows, :, None, None] * iso
                + self._gkm1_rho[rows, :, None, None] * extra)

    def _local_apply_u(self, loc_u, rows=slice(None)):
        sp_ = self.space
        grad = sp_.qp_grad_vector(loc_u)
        e = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        s = self._lin_stress(e, rows)
        return np.einsum("q,cqij,qnj->cin", sp_.JxW, s, sp_.gradN)

    def _local_apply_phi(self, loc_phi, rows=slice(None)):
        sp_ = self.space
        val = sp_.qp_scalar(loc_phi)
        grad = sp_.qp_grad_scalar(loc_phi)
        out = np.einsum("q,cq,qn->cn", sp_.JxW, self._a_phiphi[rows] * val, sp_.N)
        out += self._k_phi * np.einsum("q,cqj,qnj->cn", sp_.JxW, grad, sp_.gradN)
        return out

    def _local_apply(self, loc, rows=slice(None)):
        sp_ = self.space
        dim = sp_.dim
        out = np.empty_like(loc)
        grad = sp_.qp_grad_vector(loc[:, :dim])
        e = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        s = self._lin_stress(e, rows)
        out[:, :dim] = np.einsum("q,cqij,qnj->cin", sp_.JxW, s, sp_.gradN)
        val = sp_.qp_scalar(loc[:, dim])
        gphi = sp_.qp_grad_scalar(loc[:, dim])
        coupling = np.einsum("cqij,cqij->cq", self._T_phiu[rows], grad)
        vphi = coupling + self._a_phiphi[rows] * val
        out[:, dim] = np.einsum("q,cq,qn->cn", sp_.JxW, vphi, sp_.N)
        out[:, dim] += self._k_phi * np.einsum(
            "q,cqj,qnj->cn", sp_.JxW, gphi, sp_.gradN)
        return out

    def _run_local(self, kernel, loc):
        if self.threads == 1 or loc.shape[0] < 2 * self.threads:
            return kernel(loc, slice(None))
        chunks = _chunk_ranges(loc.shape[0], self.threads)
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.threads)
        futures = [self._pool.submit(kernel, loc[a:b], slice(a, b)) for a, b in chunks]
        return np.concatenate([f.result() for f in futures], axis=0)

    # -- public surface ------------------------------------------------------

    def apply(self, v):
        """Constrained operator action on a full dof vector."""
        v = np.asarray(v, dtype=float)
        loc = self.space.gather(v, mask=self.mask)
        out = self.space.scatter(self._run_local(self._local_apply, loc))
        c = self.mask.is_constrained
        out[c] = v[c]
        return out

    def apply_block(self, which, v_block):
        """Action of a diagonal block (0: displacement, 1: phase field)."""
        v_block = np.asarray(v_block, dtype=float)
        dim = self.space.dim
        blk = self.blocks[which]
        vz = np.where(self.mask.is_constrained[blk], 0.0, v_block)
        if which == 0:
            loc = self.space.gather_components(vz, range(dim))
            local = self._run_local(self._local_apply_u, loc)
        else:
            loc = self.space.gather_components(vz, [dim])[:, 0]
            local = self._run_local(self._local_apply_phi, loc)[:, None, :]
        out = self.space.scatter(local)
        c = self.mask.is_constrained[blk]
        out[c] = v_block[c]
        return out

    def diagonal(self):
        """Exact diagonal of the constrained operator (constrained rows = 1)."""
        sp_ = self.space
        prm = self.params
        dim = sp_.dim
        esym, e2, tr = sp_.diag_basis()
        base = 2.0 * prm.mu * e2 + prm.lam * tr**2
        if self.split is SplitKind.NOSPLIT:
            du = np.einsum("q,cq,inq->cin", sp_.JxW, self._gk_rho, base)
        else:
            du = np.einsum("q,cq,inq->cin", sp_.JxW, self._rho, base)
            du += np.einsum("q,cq,cqabgd,inqab,inqgd->cin", sp_.JxW,
                            self._gkm1_rho, self._dsig, esym, esym)
        dphi = np.einsum("q,cq,qn->cn", sp_.JxW, self._a_phiphi, sp_.N**2)
        g2 = np.einsum("q,qnj,qnj->n", sp_.JxW, sp_.gradN, sp_.gradN)
        dphi = dphi + self._k_phi * g2[None, :]
        local = np.concatenate([du, dphi[:, None, :]], axis=1)
        out = self.space.scatter(local)
        out[self.mask.is_constrained] = 1.0
        return out


# ---------------------------------------------------------------------------
# residual and derived quantities
# ---------------------------------------------------------------------------

def residual(space, state, mask, params, split, threads=1):
    """Discrete semilinear form A_h(U); rows constrained in `mask` are zeroed.

    The state is evaluated as-is (constraint filtering only zeroes test
    rows, never the trial values).
    """
    dim = space.dim
    loc = space.gather(state.U)
    grad_u = space.qp_grad_vector(loc[:, :dim])
    e_u = 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))
    div_u = np.trace(grad_u, axis1=-2, axis2=-1)
    phi_q = space.qp_scalar(loc[:, dim])
    gphi_q = space.qp_grad_scalar(loc[:, dim])
    phit_q = space.qp_scalar(np.asarray(state.phi_tilde)[space.mesh.cells])

    if params.modulus_field is not None:
        rho = np.asarray(params.modulus_field(space.qp_coords), dtype=float)
    else:
        rho = np.ones_like(phi_q)
    p = params.pressure(state.t)
    gk = degradation(phit_q, params.kappa)

    q = _split_batch(e_u, split, params.lam, params.mu,
                     band=params.split_band)
    eye = np.eye(dim)
    stress = (gk * rho)[..., None, None] * q["sig_plus"] \
        + rho[..., None, None] * q["sig_minus"] \
        + (np.square(phit_q) * p)[..., None, None] * eye
    out_u = np.einsum("q,cqij,qnj->cin", space.JxW, stress, space.gradN)

    vphi = (1.0 - params.kappa) * phi_q * rho * q["E_plus"] \
        + 2.0 * p * phi_q * div_u \
        - params.g_c / params.eps * (1.0 - phi_q)
    out_phi = np.einsum("q,cq,qn->cn", space.JxW, vphi, space.N)
    out_phi += params.g_c * params.eps * np.einsum(
        "q,cqj,qnj->cn", space.JxW, gphi_q, space.gradN)

    local = np.concatenate([out_u, out_phi[:, None, :]], axis=1)
    out = space.scatter(local)
    out[mask.is_constrained] = 0.0
    return out


def jacobian_vmult(space, state, mask, params, split, v, threads=1):
    """Convenience one-shot Jacobian action (builds the operator caches)."""
    return PhaseFieldOperator(space, state, mask, params, split, threads).apply(v)


def diagonal(space, state, mask, params, split, threads=1):
    return PhaseFieldOperator(space, state, mask, params, split, threads).diagonal()


def crack_energy(space, state, params):
    """Regularized surface energy of the phase field."""
    dim = space.dim
    loc_phi = space.gather(state.U)[:, dim]
    phi_q = space.qp_scalar(loc_phi)
    gphi_q = space.qp_grad_scalar(loc_phi)
    dens = (np.square(1.0 - phi_q) / params.eps
            + params.eps * np.einsum("cqj,cqj->cq", gphi_q, gphi_q))
    return 0.5 * params.g_c * float(np.einsum("q,cq->", space.JxW, dens))


def bulk_energy(space, state, params, split):
    """Degraded tensile plus compressive elastic energy plus pressure work."""
    dim = space.dim
    loc = space.gather(state.U)
    grad_u = space.qp_grad_vector(loc[:, :dim])
    e_u = 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))
    div_u = np.trace(grad_u, axis1=-2, axis2=-1)
    phi_q = space.qp_scalar(loc[:, dim])
    if params.modulus_field is not None:
        rho = np.asarray(params.modulus_field(space.qp_coords), dtype=float)
    else:
        rho = np.ones_like(phi_q)
    p = params.pressure(state.t)
    q = _split_batch(e_u, split, params.lam, params.mu,
                     band=params.split_band)
    dens = (degradation(phi_q, params.kappa) * rho * q["E_plus"]
            + rho * q["E_minus"]
            + np.square(phi_q) * p * div_u)
    return float(np.einsum("q,cq->", space.JxW, dens))


def fracture_volume(space, U):
    """Integral of (1 - phi) over the domain."""
    dim = space.dim
    phi_q = space.qp_scalar(space.gather(U)[:, dim])
    return float(np.einsum("q,cq->", space.JxW, 1.0 - phi_q))


def boundary_load(space, state, params, split, boundary, direction):
    """Traction component integrated over the faces tagged `boundary`.

    The transmitted stress is the degraded tensile part plus the full
    compressive part; with an intact phase field it reduces to the plain
    linear elastic stress.
    """
    if int(boundary) not in set(int(b) for b in BoundaryId):
        raise ValueError(f"unknown boundary tag {boundary!r}")
    mesh = space.mesh
    dim = space.dim
    rows = np.nonzero(mesh.bf_tag == int(boundary))[0]
    loc_all = space.gather(state.U)
    lo, _ = mesh.cell_bounds()
    total = 0.0
    for f in np.unique(mesh.bf_face[rows]):
        sel = rows[mesh.bf_face[rows] == f]
        axis, side = int(f) // 2, int(f) % 2
        sign = 1.0 if side == 1 else -1.0
        Nf, Gf, wf, ref = space.face_table(axis, side)
        cells = mesh.bf_cell[sel]
        loc = loc_all[cells]
        grad_u = np.einsum("cin,qnj->cqij", loc[:, :dim], Gf)
        e_u = 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))
        phi_q = np.einsum("cn,qn->cq", loc[:, dim], Nf)
        coords = lo[cells][:, None, :] + ref[None, :, :] * mesh.cell_size
        if params.modulus_field is not None:
            rho = np.asarray(params.modulus_field(coords), dtype=float)
        else:
            rho = np.ones_like(phi_q)
        q = _split_batch(e_u, split, params.lam, params.mu,
                         band=params.split_band)
        stress = (degradation(phi_q, params.kappa) * rho)[..., None, None] \
            * q["sig_plus"] + rho[..., None, None] * q["sig_minus"]
        t_dir = sign * stress[..., direction, axis]
        total += float(np.einsum("q,cq->", wf, t_dir))
    return total
