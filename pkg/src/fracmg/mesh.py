"""Nested structured quadrilateral/hexahedral mesh hierarchies.

All supported geometries are unions of equal-size axis-aligned blocks that
are refined uniformly, so every vertex of level ``l`` reappears on level
``l+1`` at identical coordinates.  Vertices are identified by integer
lattice coordinates, which makes vertex coincidence between levels an exact
index computation instead of a floating-point search.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = [
    "BoundaryId",
    "LevelMesh",
    "GridHierarchy",
    "build_square",
    "build_lshape",
    "locate_cells",
    "corner_offsets",
    "face_corner_indices",
]


class BoundaryId(IntEnum):
    OUTER = 0
    FIXED = 1
    LOADED = 2
    TRACTION_FREE = 3


def corner_offsets(dim):
    """Lexicographic corner offsets of the unit cell, x running fastest."""
    idx = np.arange(2**dim)
    return np.stack([(idx >> a) & 1 for a in range(dim)], axis=1)


def face_corner_indices(dim, axis, side):
    """Corner indices of the cell face on `axis` (side 0 = low, 1 = high)."""
    off = corner_offsets(dim)
    return np.nonzero(off[:, axis] == side)[0]


def _encode(keys, mod):
    enc = np.zeros(len(keys), dtype=np.int64)
    for a in range(keys.shape[1] - 1, -1, -1):
        enc = enc * mod + keys[:, a]
    return enc


def _decode(enc, mod, dim):
    keys = np.empty((len(enc), dim), dtype=np.int64)
    rest = enc.copy()
    for a in range(dim):
        keys[:, a] = rest % mod
        rest //= mod
    return keys


@dataclass
class LevelMesh:
    """One uniformly refined level: congruent axis-aligned cells.

    `cells` lists vertex ids in lexicographic corner order.  `keys` holds the
    integer lattice coordinate of every vertex (spacing = `cell_size`); a
    vertex with key k on this level has key 2k on the next finer level.
    """

    vertices: np.ndarray      # (V, dim) coordinates
    cells: np.ndarray         # (C, 2**dim) vertex ids
    cell_size: np.ndarray     # (dim,) edge lengths shared by all cells
    keys: np.ndarray          # (V, dim) integer lattice coordinates
    key_mod: int              # modulus used to linearize keys
    bf_cell: np.ndarray       # (F,) cell id of each boundary face
    bf_face: np.ndarray       # (F,) local face id = 2*axis + side
    bf_tag: np.ndarray        # (F,) BoundaryId values

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def cell_volume(self):
        return float(np.prod(self.cell_size))

    @property
    def diameter(self):
        return float(np.linalg.norm(self.cell_size))

    def cell_bounds(self):
        """Lower/upper corner coordinates of every cell."""
        return self.vertices[self.cells[:, 0]], self.vertices[self.cells[:, -1]]

    def face_vertex_ids(self, face_rows):
        """Vertex ids (F, 2**(dim-1)) of the given boundary-face rows."""
        out = np.empty((len(face_rows), 2 ** (self.dim - 1)), dtype=np.int64)
        for f in np.unique(self.bf_face[face_rows]):
            rows = self.bf_face[face_rows] == f
            cols = face_corner_indices(self.dim, f // 2, f % 2)
            out[rows] = self.cells[np.asarray(self.bf_cell[face_rows])[rows]][:, cols]
        return out

    def boundary_vertices(self, tag=None):
        """Sorted unique vertex ids on boundary faces (optionally one tag)."""
        rows = np.arange(len(self.bf_cell))
        if tag is not None:
            rows = rows[self.bf_tag == int(tag)]
        if len(rows) == 0:
            return np.empty(0, dtype=np.int64)
        return np.unique(self.face_vertex_ids(rows))


@dataclass
class GridHierarchy:
    """Sequence of nested levels ordered coarse to fine."""

    dim: int
    levels: list
    coarse_cells: np.ndarray   # (B, 2, dim) lo/hi corners of the coarse blocks

    @property
    def n_levels(self):
        return len(self.levels)

    @property
    def finest(self):
        return self.levels[-1]

    def diameter(self, level):
        return self.levels[level].diameter

    @property
    def domain_bounds(self):
        return self.coarse_cells[:, 0].min(axis=0), self.coarse_cells[:, 1].max(axis=0)


def _extract_boundary(cells, dim):
    n_faces = 2 * dim
    C = len(cells)
    fv = np.empty((C, n_faces, 2 ** (dim - 1)), dtype=np.int64)
    for f in range(n_faces):
        cols = face_corner_indices(dim, f // 2, f % 2)
        fv[:, f, :] = cells[:, cols]
    flat = np.sort(fv.reshape(C * n_faces, -1), axis=1)
    _, inv, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
    boundary = counts[inv] == 1
    rows = np.nonzero(boundary)[0]
    return rows // n_faces, rows % n_faces


def _build_level(blocks, level, dim, tagger):
    n = 2**level
    size = blocks[0, 1] - blocks[0, 0]
    g = size / n
    max_k = int(round((blocks[:, 1] / g).max())) + 2

    key_chunks = []
    for lo, _hi in blocks:
        lo_k = np.rint(lo / g).astype(np.int64)
        axes = [lo_k[a] + np.arange(n + 1, dtype=np.int64) for a in range(dim)]
        grids = np.meshgrid(*axes, indexing="ij")
        key_chunks.append(np.stack([gr.ravel() for gr in grids], axis=1))
    all_keys = np.concatenate(key_chunks, axis=0)
    enc = np.unique(_encode(all_keys, max_k))
    keys = _decode(enc, max_k, dim)
    vertices = keys.astype(float) * g

    off = corner_offsets(dim)
    cell_chunks = []
    for lo, _hi in blocks:
        lo_k = np.rint(lo / g).astype(np.int64)
        idx = np.arange(n**dim)
        base = np.empty((n**dim, dim), dtype=np.int64)
        rest = idx
        for a in range(dim):
            base[:, a] = rest % n
            rest = rest // n
        base += lo_k
        corner_keys = base[:, None, :] + off[None, :, :]
        corner_enc = _encode(corner_keys.reshape(-1, dim), max_k)
        cell_chunks.append(np.searchsorted(enc, corner_enc).reshape(-1, 2**dim))
    cells = np.concatenate(cell_chunks, axis=0)

    bf_cell, bf_face = _extract_boundary(cells, dim)
    fv_lo = np.empty((len(bf_cell), dim))
    fv_hi = np.empty((len(bf_cell), dim))
    for f in np.unique(bf_face):
        rows = bf_face == f
        cols = face_corner_indices(dim, f // 2, f % 2)
        coords = vertices[cells[bf_cell[rows]][:, cols]]
        fv_lo[rows] = coords.min(axis=1)
        fv_hi[rows] = coords.max(axis=1)
    bf_tag = tagger(fv_lo, fv_hi, bf_face // 2, bf_face % 2)

    return LevelMesh(
        vertices=vertices,
        cells=cells,
        cell_size=np.asarray(g, dtype=float),
        keys=keys,
        key_mod=max_k,
        bf_cell=bf_cell,
        bf_face=bf_face,
        bf_tag=np.asarray(bf_tag, dtype=np.int64),
    )


def _build_hierarchy(blocks, n_levels, dim, tagger):
    blocks = np.asarray(blocks, dtype=float)
    levels = [_build_level(blocks, l, dim, tagger) for l in range(n_levels)]
    return GridHierarchy(dim=dim, levels=levels, coarse_cells=blocks)


def build_square(side_length, n_levels):
    """Unit-block square (0, s)^2 refined `n_levels` times, all-Outer boundary."""
    if side_length <= 0:
        raise ValueError(f"side_length must be positive, got {side_length}")
    if n_levels < 1:
        raise ValueError(f"n_levels must be at least 1, got {n_levels}")
    blocks = [[(0.0, 0.0), (side_length, side_length)]]

    def tagger(lo, hi, axis, side):
        return np.full(len(lo), int(BoundaryId.OUTER))

    return _build_hierarchy(blocks, n_levels, 2, tagger)


def build_lshape(side_length, n_levels, extrude=None):
    """Three-block L-shape (0,s)^2 minus the lower-right quadrant.

    The bottom edge is tagged Fixed, the strip (s - 30 s/500, s) x {s/2} is
    tagged Loaded (faces overlapping the strip with positive measure), the
    rest is Outer.  `extrude` switches to 3d with that thickness in z.
    """
    if side_length <= 0:
        raise ValueError(f"side_length must be positive, got {side_length}")
    if n_levels < 1:
        raise ValueError(f"n_levels must be at least 1, got {n_levels}")
    s = float(side_length)
    b = s / 2.0
    blocks2d = [
        [(0.0, 0.0), (b, b)],
        [(0.0, b), (b, s)],
        [(b, b), (s, s)],
    ]
    if extrude is None:
        dim = 2
        blocks = blocks2d
    else:
        if extrude <= 0:
            raise ValueError(f"extrude must be positive, got {extrude}")
        dim = 3
        blocks = [[lo + (0.0,), hi + (float(extrude),)] for (lo, hi) in
                  [(tuple(lo), tuple(hi)) for lo, hi in blocks2d]]

    load_lo = s - 30.0 * s / 500.0
    tol = 1e-9 * s

    def tagger(lo, hi, axis, side):
        tags = np.full(len(lo), int(BoundaryId.OUTER))
        on_y = axis == 1
        tags[on_y & (np.abs(hi[:, 1]) < tol)] = int(BoundaryId.FIXED)
        overlap = np.minimum(hi[:, 0], s) - np.maximum(lo[:, 0], load_lo)
        loaded = on_y & (np.abs(hi[:, 1] - b) < tol) & (overlap > tol)
        tags[loaded] = int(BoundaryId.LOADED)
        return tags

    return _build_hierarchy(blocks, n_levels, dim, tagger)


def locate_cells(mesh, box):
    """Indices of cells whose closure overlaps `box` with positive measure."""
    lo, hi = mesh.cell_bounds()
    blo = np.asarray(box[0], dtype=float)
    bhi = np.asarray(box[1], dtype=float)
    eps = 1e-12 * float(np.max(mesh.cell_size))
    overlap = np.minimum(hi, bhi) - np.maximum(lo, blo)
    return np.nonzero(np.all(overlap > eps, axis=1))[0]
