"""Q1 finite element machinery.

Dof layout is component-major: global index = component * n_vertices +
vertex, with displacement components first and the scalar phase field last.
Because all cells of a level are congruent axis-aligned boxes, shape
gradients, quadrature weights and the element geometry factor are shared by
every cell, and the cell loops below reduce to dense einsum contractions
over a (cells, quad points, ...) layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import _encode, corner_offsets

__all__ = [
    "QuadratureRule",
    "gauss_rule",
    "gauss_lobatto_rule",
    "shape_eval",
    "DofMap",
    "ConstraintMask",
    "cell_gather",
    "cell_scatter_add",
    "LevelSpace",
    "Discretization",
]

_GAUSS_1D = (np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)]),
             np.array([0.5, 0.5]))
_LOBATTO_1D = (np.array([0.0, 1.0]), np.array([0.5, 0.5]))


@dataclass
class QuadratureRule:
    points: np.ndarray    # (Q, dim) in the reference cell [0,1]^dim
    weights: np.ndarray   # (Q,), summing to the reference volume 1


def _tensor_rule(pts1, wts1, dim):
    grids = np.meshgrid(*([pts1] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)[:, ::-1]  # x fastest
    wgrids = np.meshgrid(*([wts1] * dim), indexing="ij")
    wts = np.ones(len(pts))
    for g in wgrids:
        wts = wts * g.ravel()
    return QuadratureRule(points=pts, weights=wts)


def gauss_rule(dim):
    """Tensor Gauss rule with 2 points per direction (exact for Q3)."""
    return _tensor_rule(*_GAUSS_1D, dim)


def gauss_lobatto_rule(dim):
    """Tensor Gauss-Lobatto rule with points at the 2**dim cell corners."""
    return _tensor_rule(*_LOBATTO_1D, dim)


def shape_eval(ref_point):
    """Q1 basis values and reference gradients at one point of [0,1]^dim.

    Returns (values, gradients) with shapes (2**dim,) and (2**dim, dim),
    corners ordered lexicographically (x fastest).
    """
    ref_point = np.asarray(ref_point, dtype=float)
    vals, grads = _shape_eval_many(ref_point[None, :])
    return vals[0], grads[0]


def _shape_eval_many(pts):
    """Vectorized shape evaluation: pts (P, dim) -> (P, n), (P, n, dim)."""
    pts = np.asarray(pts, dtype=float)
    dim = pts.shape[1]
    off = corner_offsets(dim)                       # (n, dim)
    # factor[p, n, a] = xi_a if corner bit set else 1 - xi_a
    factor = np.where(off[None, :, :] == 1, pts[:, None, :], 1.0 - pts[:, None, :])
    vals = np.prod(factor, axis=2)
    dfac = np.where(off[None, :, :] == 1, 1.0, -1.0)
    grads = np.empty((len(pts), len(off), dim))
    for a in range(dim):
        rest = np.prod(np.delete(factor, a, axis=2), axis=2)
        grads[:, :, a] = dfac[:, :, a] * rest
    return vals, grads


class DofMap:
    """Component-major Q1 dof numbering for a level mesh."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.n_vertices = mesh.n_vertices
        self.dim = mesh.dim
        self.n_components = mesh.dim + 1
        self.cells = mesh.cells

    @property
    def n_dofs(self):
        return self.n_components * self.n_vertices

    def index(self, component, vertex):
        return component * self.n_vertices + vertex

    def component_of(self, gid):
        return np.asarray(gid) // self.n_vertices

    def vertex_of(self, gid):
        return np.asarray(gid) % self.n_vertices

    def cell_dofs(self, cell):
        """Global dof ids of one cell, component-major then corner order."""
        verts = self.cells[cell]
        comps = np.arange(self.n_components)[:, None]
        return (comps * self.n_vertices + verts[None, :]).ravel()

    @property
    def u_slice(self):
        return slice(0, self.dim * self.n_vertices)

    @property
    def phi_slice(self):
        return slice(self.dim * self.n_vertices, self.n_dofs)


@dataclass
class ConstraintMask:
    """Per-dof constraint flags and target values (Dirichlet or bound)."""

    is_constrained: np.ndarray
    inhomogeneity: np.ndarray

    @classmethod
    def empty(cls, n_dofs):
        return cls(np.zeros(n_dofs, dtype=bool), np.zeros(n_dofs))

    def combined_with(self, flags, values):
        """New mask with extra constrained dofs; existing entries win."""
        is_c = self.is_constrained | flags
        vals = np.where(self.is_constrained, self.inhomogeneity,
                        np.where(flags, values, 0.0))
        return ConstraintMask(is_c, vals)


def cell_gather(v, cell, dofmap, mask=None):
    """Cell-local coefficients (operator mode: constrained entries read 0)."""
    dofs = dofmap.cell_dofs(cell)
    local = np.asarray(v)[dofs].copy()
    if mask is not None:
        local[mask.is_constrained[dofs]] = 0.0
    return local

def cell_scatter_add(w_local, cell, dofmap, w, mask=None):
    """Accumulate local contributions; constrained rows stay untouched."""
    dofs = dofmap.cell_dofs(cell)
    keep = np.ones(len(dofs), dtype=bool)
    if mask is not None:
        keep = ~mask.is_constrained[dofs]
    np.add.at(w, dofs[keep], np.asarray(w_local)[keep])


class LevelSpace:
    """Discretization bundle of one level: dofs, quadrature, kernel tables."""

    def __init__(self, mesh, level):
        self.mesh = mesh
        self.level = level
        self.dofmap = DofMap(mesh)
        dim = mesh.dim

        rule = gauss_rule(dim)
        self.quadrature = rule
        vals, ref_grads = _shape_eval_many(rule.points)
        self.N = vals                                   # (Q, n)
        self.gradN = ref_grads / mesh.cell_size[None, None, :]   # physical
        self.JxW = rule.weights * mesh.cell_volume      # (Q,)

        lo, _ = mesh.cell_bounds()
        self.qp_coords = lo[:, None, :] + rule.points[None, :, :] * mesh.cell_size

        # Gauss-Lobatto lumped mass: every corner carries an equal share of
        # the cell volume, accumulated over adjacent cells.
        share = mesh.cell_volume / 2**dim
        self.vertex_mass = np.bincount(
            mesh.cells.ravel(), minlength=mesh.n_vertices).astype(float) * share

        self._face_tables = {}
        self._diag_basis = None

    @property
    def n_dofs(self):
        return self.dofmap.n_dofs

    @property
    def dim(self):
        return self.mesh.dim

    # -- vectorized gather/scatter over all cells ------------------------

    def gather(self, v, mask=None):
        """All cell-local coefficient blocks, shape (C, ncomp, n)."""
        if mask is not None:
            v = np.where(mask.is_constrained, 0.0, v)
        v2 = np.asarray(v).reshape(self.dofmap.n_components, self.dofmap.n_vertices)
        return v2[:, self.mesh.cells].transpose(1, 0, 2)

    def gather_components(self, v_block, comps):
        """Cell-local blocks of a component subset, shape (C, len(comps), n)."""
        v2 = np.asarray(v_block).reshape(len(comps), self.dofmap.n_vertices)
        return v2[:, self.mesh.cells].transpose(1, 0, 2)

    def scatter(self, local):
        """Sum (C, ncomp, n) cell contributions into a global vector."""
        ncomp = local.shape[1]
        V = self.dofmap.n_vertices
        out = np.empty(ncomp * V)
        flat_cells = self.mesh.cells.ravel()
        for c in range(ncomp):
            out[c * V:(c + 1) * V] = np.bincount(
                flat_cells, weights=np.ascontiguousarray(local[:, c, :]).ravel(),
                minlength=V)
        return out

    # -- per-quadrature-point interpolation -------------------------------

    def qp_scalar(self, nodal_local):
        """(C, n) nodal values -> (C, Q) quadrature point values."""
        return np.einsum("cn,qn->cq", nodal_local, self.N)

    def qp_grad_scalar(self, nodal_local):
        return np.einsum("cn,qnj->cqj", nodal_local, self.gradN)

    def qp_grad_vector(self, nodal_local):
        """(C, dim, n) nodal values -> (C, Q, dim, dim) gradients."""
        return np.einsum("cin,qnj->cqij", nodal_local, self.gradN)

    # -- diagonal helper tables -------------------------------------------

    def diag_basis(self):
        """Symmetrized single-basis strain table for diagonal evaluation.

        Returns (esym, e2, tr) with esym[i, n, q, a, b] the symmetric
        gradient of the basis function of displacement component i at
        corner n, plus its double contraction e2 and trace tr.
        """
        if self._diag_basis is None:
            dim = self.dim
            n = self.gradN.shape[1]
            Q = self.gradN.shape[0]
            esym = np.zeros((dim, n, Q, dim, dim))
            for i in range(dim):
                for a in range(dim):
                    esym[i, :, :, i, a] += 0.5 * self.gradN[:, :, a].T
                    esym[i, :, :, a, i] += 0.5 * self.gradN[:, :, a].T
            e2 = np.einsum("inqab,inqab->inq", esym, esym)
            tr = np.einsum("inqaa->inq", esym)
            self._diag_basis = (esym, e2, tr)
        return self._diag_basis

    # -- boundary face quadrature ------------------------------------------

    def face_table(self, axis, side):
        """Shape values/gradients and weights at face quadrature points."""
        key = (axis, side)
        if key not in self._face_tables:
            dim = self.dim
            pts1, wts1 = _GAUSS_1D
            other = [a for a in range(dim) if a != axis]
            if dim == 2:
                ref = np.zeros((2, dim))
                ref[:, other[0]] = pts1
                w = wts1.copy()
            else:
                g0, g1 = np.meshgrid(pts1, pts1, indexing="ij")
                ref = np.zeros((4, dim))
                ref[:, other[0]] = g0.ravel()
                ref[:, other[1]] = g1.ravel()
                w0, w1 = np.meshgrid(wts1, wts1, indexing="ij")
                w = (w0 * w1).ravel()
            ref[:, axis] = float(side)
            vals, ref_grads = _shape_eval_many(ref)
            area = self.mesh.cell_volume / self.mesh.cell_size[axis]
            self._face_tables[key] = (
                vals,
                ref_grads / self.mesh.cell_size[None, None, :],
                w * area,
                ref,
            )
        return self._face_tables[key]


class Discretization:
    """Hierarchy-wide bundle: one LevelSpace per level plus transfers."""

    def __init__(self, hierarchy):
        self.hierarchy = hierarchy
        self.spaces = [LevelSpace(m, l) for l, m in enumerate(hierarchy.levels)]
        self._P = [self._build_prolongation(l) for l in range(hierarchy.n_levels - 1)]
        self._inj = [self._build_injection(l) for l in range(hierarchy.n_levels - 1)]

    @property
    def finest(self):
        return self.spaces[-1]

    def _build_prolongation(self, l):
        """Scalar Q1 interpolation matrix from level l to level l+1."""
        coarse = self.hierarchy.levels[l]
        fine = self.hierarchy.levels[l + 1]
        kf = fine.keys
        dim = fine.dim
        enc_coarse = _encode_sorted(coarse)

        klo = kf // 2
        khi = (kf + 1) // 2
        even = (kf % 2) == 0
        wlo = np.where(even, 1.0, 0.5)
        whi = np.where(even, 0.0, 0.5)

        rows, cols, vals = [], [], []
        for bits in range(2**dim):
            key = np.empty_like(klo)
            w = np.ones(len(kf))
            for a in range(dim):
                if (bits >> a) & 1:
                    key[:, a] = khi[:, a]
                    w = w * whi[:, a]
                else:
                    key[:, a] = klo[:, a]
                    w = w * wlo[:, a]
            nz = w > 0.0
            if not np.any(nz):
                continue
            cidx = np.searchsorted(enc_coarse, _encode(key[nz], coarse.key_mod))
            rows.append(np.nonzero(nz)[0])
            cols.append(cidx)
            vals.append(w[nz])
        P = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(fine.n_vertices, coarse.n_vertices),
        )
        return P.tocsr()

    def _build_injection(self, l):
        """For each level-l vertex, the id of the coincident level-(l+1) vertex."""
        coarse = self.hierarchy.levels[l]
        fine = self.hierarchy.levels[l + 1]
        enc_fine = _encode_sorted(fine)
        return np.searchsorted(enc_fine, _encode(coarse.keys * 2, fine.key_mod))

    # -- scalar transfers ---------------------------------------------------

    def prolongate_scalar(self, v, l):
        return self._P[l] @ v

    def restrict_scalar(self, v, l):
        return self._P[l].T @ v

    def inject_scalar(self, v, l):
        """Nodal values on level l+1 -> level l by vertex coincidence."""
        return np.asarray(v)[self._inj[l]]

    def injection(self, l):
        """Vertex map: level-l vertex id -> coincident level-(l+1) vertex id."""
        return self._inj[l]

    # -- full dof-vector transfers (all components) -------------------------

    def _per_component(self, v, l_from, op):
        V = self.hierarchy.levels[l_from].n_vertices
        v2 = np.asarray(v).reshape(-1, V)
        return np.concatenate([op(comp) for comp in v2])

    def prolongate(self, v_coarse, l):
        """Q1 interpolation of a level-l dof vector to level l+1."""
        nc = self.hierarchy.dim + 1
        Vc = self.hierarchy.levels[l].n_vertices
        if len(v_coarse) != nc * Vc:
            raise ValueError(
                f"expected {nc * Vc} dofs on level {l}, got {len(v_coarse)}")
        return self._per_component(v_coarse, l, lambda c: self._P[l] @ c)

    def restrict(self, v_fine, l):
        """Transpose of prolongate: level l+1 residuals to level l."""
        nc = self.hierarchy.dim + 1
        Vf = self.hierarchy.levels[l + 1].n_vertices
        if len(v_fine) != nc * Vf:
            raise ValueError(
                f"expected {nc * Vf} dofs on level {l + 1}, got {len(v_fine)}")
        return self._per_component(v_fine, l + 1, lambda c: self._P[l].T @ c)

    def restrict_nodal(self, v_fine, l):
        """Injection: coarse dofs copy the value of the coincident fine dof."""
        nc = self.hierarchy.dim + 1
        Vf = self.hierarchy.levels[l + 1].n_vertices
        if len(v_fine) != nc * Vf:
            raise ValueError(
                f"expected {nc * Vf} dofs on level {l + 1}, got {len(v_fine)}")
        return self._per_component(v_fine, l + 1, lambda c: c[self._inj[l]])

    def restrict_block(self, v_fine, l, n_comp):
        Vf = self.hierarchy.levels[l + 1].n_vertices
        v2 = np.asarray(v_fine).reshape(n_comp, Vf)
        return np.concatenate([self._P[l].T @ c for c in v2])

    def prolongate_block(self, v_coarse, l, n_comp):
        Vc = self.hierarchy.levels[l].n_vertices
        v2 = np.asarray(v_coarse).reshape(n_comp, Vc)
        return np.concatenate([self._P[l] @ c for c in v2])


def _encode_sorted(mesh):
    return _encode(mesh.keys, mesh.key_mod)
