"""Benchmark scenarios and the incremental time-stepping driver.

Three configurations are provided: pressure-driven growth of two
prescribed cracks in a square (optionally with a smooth random stiffness
field), and the L-shaped panel under cyclic displacement in two and three
dimensions.  `run` advances the coupled system step by step, enforcing
crack irreversibility against the previous solution and recording
iteration counts, energies and the boundary load after every step.
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

log = logging.getLogger("fracmg")

from . import model, nonlinear
from .fem import ConstraintMask, Discretization
from .mesh import BoundaryId, build_lshape, build_square, locate_cells
from .model import LinearizationState, MaterialParams, SplitKind
from .nonlinear import SolverConfig

__all__ = [
    "NoiseField",
    "noise_value",
    "EpsRule",
    "Scenario",
    "TimestepRecord",
    "RunAborted",
    "make_multiple_fractures",
    "make_lshape",
    "displacement_program",
    "run",
]


# ---------------------------------------------------------------------------
# deterministic gradient noise
# ---------------------------------------------------------------------------

_MIX1 = np.uint64(0x9E3779B97F4A7C15)
_MIX2 = np.uint64(0xBF58476D1CE4E5B9)
_MIX3 = np.uint64(0x94D049BB133111EB)


def _mix64(z):
    z = (z + _MIX1).astype(np.uint64)
    z ^= z >> np.uint64(30)
    z = (z * _MIX2).astype(np.uint64)
    z ^= z >> np.uint64(27)
    z = (z * _MIX3).astype(np.uint64)
    z ^= z >> np.uint64(31)
    return z


def _lattice_hash(cellk, seed):
    seed_salt = np.uint64((int(seed) * 0x94D049BB133111EB) % 2**64)
    h = np.full(cellk.shape[:-1], seed_salt, dtype=np.uint64)
    for a in range(cellk.shape[-1]):
        axis_salt = np.uint64((a * 0xBF58476D1CE4E5B9) % 2**64)
        h = _mix64(h ^ (cellk[..., a].astype(np.uint64) * _MIX1 + axis_salt))
    return h


@dataclass
class NoiseField:
    """Smooth deterministic gradient noise mapped into [low, high].

    A pure function of position: the same coordinates give the same value
    on every level and in every process.  `frequency` sets the lattice
    density, so the correlation length is about 1 / frequency.
    """

    seed: int = 2
    frequency: float = 0.5
    low: float = 0.1
    high: float = 1.0
    amplitude: float = 2.2

    def __call__(self, positions):
        return noise_value(self, positions)


def _lattice_gradients(cellk, seed, dim):
    h = _lattice_hash(cellk, seed)
    u = h.astype(np.float64) / 2.0**64
    if dim == 2:
        ang = 2.0 * np.pi * u
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    g = np.empty(h.shape + (3,))
    for a in range(3):
        ua = _mix64(h + np.uint64(a + 1)).astype(np.float64) / 2.0**64
        g[..., a] = 2.0 * ua - 1.0
    norm = np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)
    return g / norm


def noise_value(field, positions):
    """Noise samples at one position (dim,) or a batch (..., dim)."""
    pts = np.asarray(positions, dtype=float)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    dim = pts.shape[-1]
    x = pts * field.frequency
    base = np.floor(x).astype(np.int64)
    frac = x - base

    raw = np.zeros(pts.shape[:-1])
    for bits in range(2**dim):
        off = np.array([(bits >> a) & 1 for a in range(dim)], dtype=np.int64)
        corner = base + off
        g = _lattice_gradients(corner, field.seed, dim)
        rel = frac - off
        dot = np.einsum("...a,...a->...", g, rel)
        w = np.ones(pts.shape[:-1])
        for a in range(dim):
            w = w * np.where(off[a] == 1, frac[..., a], 1.0 - frac[..., a])
        raw += w * dot
    center = 0.5 * (field.high + field.low)
    half = 0.5 * (field.high - field.low)
    val = np.clip(center + half * np.clip(field.amplitude * raw, -1.0, 1.0),
                  field.low, field.high)
    return float(val[0]) if single else val


# ---------------------------------------------------------------------------
# scenario definitions
# ---------------------------------------------------------------------------

@dataclass
class EpsRule:
    """Regularization length rule: equal to the finest diameter or fixed."""

    kind: str = "h"          # "h" or "fixed"
    value: float = 0.0

    def resolve(self, finest_diameter):
        if self.kind == "h":
            return finest_diameter
        if self.kind == "fixed":
            if self.value <= 0.0:
                raise ValueError("fixed eps must be positive")
            return self.value
        raise ValueError(f"unknown eps rule {self.kind!r}")

    @classmethod
    def parse(cls, text):
        if text == "h":
            return cls("h")
        if text.startswith("fixed:"):
            return cls("fixed", float(text.split(":", 1)[1]))
        raise ValueError(f"cannot parse eps rule {text!r}")


@dataclass
class Scenario:
    name: str
    geometry: str                # "square" or "lshape"
    side: float
    levels: int
    dim: int
    material: MaterialParams
    split: SplitKind
    dt: float
    t_end: float
    eps_rule: EpsRule
    initial_cracks: list
    load_boundary: BoundaryId
    qoi_direction: int
    bc_values: dict              # BoundaryId -> {component: value_fn(t)}
    extrude: Optional[float] = None
    noise: Optional[NoiseField] = None

    def build_hierarchy(self):
        if self.geometry == "square":
            return build_square(self.side, self.levels)
        if self.geometry == "lshape":
            return build_lshape(self.side, self.levels, self.extrude)
        raise ValueError(f"unknown geometry {self.geometry!r}")

    def dirichlet_fn(self, t, position, component):
        """Dirichlet value at a position, or None where unconstrained."""
        pos = np.asarray(position, dtype=float)
        tol = 1e-9 * self.side
        if self.geometry == "square":
            on = np.any(np.abs(pos[:2] - 0.0) < tol) or \
                np.any(np.abs(pos[:2] - self.side) < tol)
            if on and component < self.dim:
                return 0.0
            return None
        if abs(pos[1]) < tol and component < self.dim:
            return 0.0
        if abs(pos[1] - self.side / 2) < tol and pos[0] > self.side * 0.9 \
                and component == 1:
            return self.bc_values[BoundaryId.LOADED][1](t)
        return None


def _plane_strain_lame(E, nu):
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return mu, lam


def make_multiple_fractures(levels, random_field=False, t_end=0.25):
    """Two pressurized cracks in (0, 4 m)^2 with homogeneous displacement BCs.

    Pressure ramps linearly in time; crack strips are one finest-level
    diameter wide.  With `random_field` the elastic modulus is scaled
    pointwise by a smooth deterministic noise in [0.1, 1].
    """
    if levels < 2:
        raise ValueError("multiple fractures needs at least 2 levels")
    side = 4.0
    h = side * np.sqrt(2.0) / 2 ** (levels - 1)
    noise = NoiseField() if random_field else None
    mu, lam = _plane_strain_lame(1.0e4, 0.2)
    material = MaterialParams(
        mu=mu, lam=lam, g_c=1.0, kappa=1e-10,
        pressure_fn=lambda t: 1.0e3 * t,
        modulus_field=noise,
    )
    cracks = [
        ((2.5 - h / 2, 0.8), (2.5 + h / 2, 1.5)),
        ((0.5, 3.0 - h / 2), (1.5, 3.0 + h / 2)),
    ]
    zero = lambda t: 0.0  # noqa: E731
    return Scenario(
        name="multiple_fractures" + ("_random" if random_field else ""),
        geometry="square", side=side, levels=levels, dim=2,
        material=material, split=SplitKind.NOSPLIT,
        dt=1e-2, t_end=t_end, eps_rule=EpsRule("h"),
        initial_cracks=cracks,
        load_boundary=BoundaryId.OUTER, qoi_direction=1,
        bc_values={BoundaryId.OUTER: {0: zero, 1: zero}},
        noise=noise,
    )


def displacement_program(t):
    """Cyclic loading: up to 0.3, unload to -0.2, reload to 1.0 at t = 2."""
    if t < 0.3:
        return t
    if t < 0.8:
        return 0.6 - t
    return -1.0 + t


def make_lshape(levels, dim=2, eps_rule=None, split=SplitKind.MIEHE):
    """L-shaped panel under cyclic vertical displacement, no pressure."""
    if levels < 2:
        raise ValueError("lshape needs at least 2 levels")
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    side = 500.0
    eps_rule = eps_rule or EpsRule("h")
    material = MaterialParams(mu=10.95, lam=6.16, g_c=8.9e-5, kappa=1e-10)
    zero = lambda t: 0.0  # noqa: E731
    bc = {
        BoundaryId.FIXED: {c: zero for c in range(dim)},
        BoundaryId.LOADED: {1: displacement_program},
    }
    return Scenario(
        name="lshape2d" if dim == 2 else "lshape3d",
        geometry="lshape", side=side, levels=levels, dim=dim,
        material=material, split=split,
        dt=1e-3, t_end=2.0, eps_rule=eps_rule,
        initial_cracks=[],
        load_boundary=BoundaryId.LOADED, qoi_direction=1,
        bc_values=bc,
        extrude=side / 2 if dim == 3 else None,
    )


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------

@dataclass
class TimestepRecord:
    step: int
    time: float
    active_set_iters: int
    gmres_iters_per_as_step: list
    load: float
    crack_energy: float
    bulk_energy: float
    n_active: int
    wall_time: float = 0.0


class RunAborted(RuntimeError):
    """Solver failure mid-run; completed records are preserved."""

    def __init__(self, records, cause):
        super().__init__(f"run aborted after {len(records)} steps: {cause}")
        self.records = records
        self.cause = cause


@dataclass
class RunContext:
    """Handed to sinks after every completed step."""

    scenario: Scenario
    disc: Discretization
    U: np.ndarray
    state: LinearizationState


def _dirichlet_mask(space, scenario, t):
    dofmap = space.dofmap
    flags = np.zeros(dofmap.n_dofs, dtype=bool)
    values = np.zeros(dofmap.n_dofs)
    # Fixed wins over Loaded wins over Outer where a vertex carries several tags
    for tag in (BoundaryId.OUTER, BoundaryId.LOADED, BoundaryId.FIXED):
        comps = scenario.bc_values.get(tag)
        if not comps:
            continue
        verts = space.mesh.boundary_vertices(tag)
        if len(verts) == 0:
            continue
        for comp, fn in comps.items():
            gids = dofmap.index(comp, verts)
            flags[gids] = True
            values[gids] = fn(t)
    return ConstraintMask(flags, values)


def initial_phase_field(space, cracks):
    """1 everywhere except vertices whose support overlaps a crack box."""
    phi = np.ones(space.dofmap.n_vertices)
    for box in cracks:
        cells = locate_cells(space.mesh, box)
        phi[np.unique(space.mesh.cells[cells])] = 0.0
    return phi


def run(scenario, config=None, sinks=()):
    """Advance the scenario from t = 0 to t_end and collect step records.

    Solver failure raises RunAborted carrying the completed records;
    sinks are callables sink(record, ctx) invoked after every step.
    """
    config = config or SolverConfig()
    hierarchy = scenario.build_hierarchy()
    disc = Discretization(hierarchy)
    space = disc.finest
    dofmap = space.dofmap

    eps = scenario.eps_rule.resolve(hierarchy.finest.diameter)
    # blend the spectral split over a sliver of the characteristic critical
    # strain so the Newton linearization stays continuous at strain noise
    # level (irrelevant for the unsplit model)
    band = 1e-6 * np.sqrt(scenario.material.g_c
                          / (2.0 * scenario.material.mu * eps))
    material = replace(scenario.material, eps=eps, split_band=band)

    phi0 = initial_phase_field(space, scenario.initial_cracks)
    U = np.zeros(dofmap.n_dofs)
    U[dofmap.phi_slice] = phi0

    solver = nonlinear.ActiveSetSolver(disc, material, scenario.split, config)
    records = []
    active = np.zeros(dofmap.n_dofs, dtype=bool)
    U_prev1, U_prev2 = U.copy(), U.copy()
    t_prev1 = t_prev2 = 0.0

    n_steps = int(round(scenario.t_end / scenario.dt))
    for step in range(1, n_steps + 1):
        t = step * scenario.dt
        started = _time.perf_counter()
        phi_old = U_prev1[dofmap.phi_slice].copy()
        phi_tilde = model.extrapolate(
            U_prev1[dofmap.phi_slice], U_prev2[dofmap.phi_slice],
            t, t_prev1, t_prev2)
        state = LinearizationState(
            U=U_prev1.copy(), U_prev1=U_prev1, U_prev2=U_prev2,
            t=t, t_prev1=t_prev1, t_prev2=t_prev2, phi_tilde=phi_tilde)
        dirichlet = _dirichlet_mask(space, scenario, t)

        try:
            U, report, active = solver.solve_step(state, dirichlet, phi_old, active)
        except nonlinear.ActiveSetNonConvergence as err:
            raise RunAborted(records, err) from err

        # [0,1] bounds: the discrete crack profile undershoots a little at
        # coarse eps = h, so small excess only warns; large excess means the
        # model structure broke down and the run stops.
        phi = U[dofmap.phi_slice]
        excess = max(float(-phi.min()), float(phi.max() - 1.0), 0.0)
        if excess > 1e-8:
            log.warning("step %d: phase field leaves [0,1] by %.3e",
                        step, excess)
        if excess > 0.1:
            raise RunAborted(records, RuntimeError(
                f"phase field left [0,1] by {excess:.3e} at step {step}"))

        state = state.with_U(U)
        record = TimestepRecord(
            step=step,
            time=t,
            active_set_iters=report.iterations,
            gmres_iters_per_as_step=report.gmres_iters,
            load=model.boundary_load(space, state, material, scenario.split,
                                     scenario.load_boundary,
                                     scenario.qoi_direction),
            crack_energy=model.crack_energy(space, state, material),
            bulk_energy=model.bulk_energy(space, state, material, scenario.split),
            n_active=int(active.sum()),
            wall_time=_time.perf_counter() - started,
        )
        records.append(record)
        ctx = RunContext(scenario=scenario, disc=disc, U=U, state=state)
        for sink in sinks:
            sink(record, ctx)

        U_prev2, U_prev1 = U_prev1, U.copy()
        t_prev2, t_prev1 = t_prev1, t
    return records
