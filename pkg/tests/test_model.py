import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracmg import fem, mesh, model
from fracmg.fem import ConstraintMask, Discretization
from fracmg.model import (LinearizationState, MaterialParams, SplitKind,
                          degradation, extrapolate, strain_split)
from fracmg.selfcheck import assemble_matrix, random_state


def _unit_state(space, U, t=0.0, phi_tilde=None):
    V = space.dofmap.n_vertices
    if phi_tilde is None:
        phi_tilde = np.asarray(U)[space.dofmap.phi_slice].copy()
    return LinearizationState(U=np.asarray(U, float), U_prev1=np.asarray(U, float),
                              U_prev2=np.asarray(U, float), t=t, t_prev1=0.0,
                              t_prev2=0.0, phi_tilde=np.clip(phi_tilde, 0, 1))


@pytest.fixture
def unit_cell():
    h = mesh.build_square(1.0, 1)
    return Discretization(h).finest


# ---------------------------------------------------------------------------
# extrapolation and degradation
# ---------------------------------------------------------------------------

def test_extrapolate_constant_history():
    phi = np.array([0.2, 0.8, 1.0])
    assert np.allclose(extrapolate(phi, phi, 3.0, 2.0, 1.0), phi)


def test_extrapolate_first_step_fallback():
    phi = np.array([0.3, 0.9])
    assert np.allclose(extrapolate(phi, np.zeros(2), 1.0, 0.0, 0.0), phi)


def test_extrapolate_linear_value():
    out = extrapolate(np.array([0.8]), np.array([1.0]), 2.0, 1.0, 0.0)
    assert np.isclose(out[0], 0.6)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 10))
def test_extrapolate_clamped(p1, p2, dt):
    out = extrapolate(np.array([p1]), np.array([p2]), 2 * dt, dt, 0.0)
    assert 0.0 <= out[0] <= 1.0


def test_degradation_values():
    assert degradation(1.0, 1e-10) == pytest.approx(1.0)
    assert degradation(0.0, 1e-10) == pytest.approx(1e-10)
    assert degradation(0.5, 1e-10) == pytest.approx(0.25, rel=1e-8)
    assert model.ddegradation(0.5, 0.0) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# stress splitting
# ---------------------------------------------------------------------------

def test_split_zero_strain():
    for kind in SplitKind:
        Ep, Em, sp, sm = strain_split(np.zeros((2, 2)), kind, 1.0, 1.0)
        assert Ep == Em == 0.0
        assert not sp.any() and not sm.any()


def test_miehe_analytic_diagonal():
    Ep, Em, sp, sm = strain_split(np.diag([2.0, -1.0]), SplitKind.MIEHE, 0.0, 1.0)
    assert Ep == pytest.approx(4.0)
    assert np.allclose(sp, np.diag([4.0, 0.0]))
    assert Em == pytest.approx(1.0)
    assert np.allclose(sm, np.diag([0.0, -2.0]))


def test_nosplit_analytic():
    Ep, Em, sp, sm = strain_split(np.diag([1.0, 1.0]), SplitKind.NOSPLIT, 1.0, 1.0)
    assert Ep == pytest.approx(4.0)
    assert np.allclose(sp, np.diag([4.0, 4.0]))
    assert Em == 0.0 and not sm.any()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3),
       st.floats(0.1, 3.0), st.floats(0.0, 2.0))
def test_split_parts_sum_to_whole(entries, mu, lam):
    e = np.array([[entries[0], entries[2]], [entries[2], entries[1]]])
    Ep, Em, sp, sm = strain_split(e, SplitKind.MIEHE, lam, mu)
    Es = 0.5 * lam * np.trace(e) ** 2 + mu * np.sum(e * e)
    sig = 2 * mu * e + lam * np.trace(e) * np.eye(2)
    assert Ep + Em == pytest.approx(Es, abs=1e-12)
    assert np.allclose(sp + sm, sig, atol=1e-12)
    assert Ep >= -1e-15 and Em >= -1e-15


def test_miehe_3d_rotation_invariance():
    rng = np.random.default_rng(5)
    e = rng.standard_normal((3, 3))
    e = 0.5 * (e + e.T)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    Ep1, Em1, sp1, _ = strain_split(e, SplitKind.MIEHE, 0.7, 1.1)
    Ep2, Em2, sp2, _ = strain_split(q @ e @ q.T, SplitKind.MIEHE, 0.7, 1.1)
    assert Ep1 == pytest.approx(Ep2)
    assert Em1 == pytest.approx(Em2)
    assert np.allclose(q @ sp1 @ q.T, sp2, atol=1e-12)


# ---------------------------------------------------------------------------
# residual
# ---------------------------------------------------------------------------

def _mask0(space):
    return ConstraintMask.empty(space.dofmap.n_dofs)


def test_residual_stationary_unfractured(unit_cell):
    space = unit_cell
    params = MaterialParams(mu=1.0, lam=1.0, g_c=1.0, eps=0.5)
    U = np.zeros(space.dofmap.n_dofs)
    U[space.dofmap.phi_slice] = 1.0
    out = model.residual(space, _unit_state(space, U), _mask0(space), params,
                         SplitKind.NOSPLIT)
    assert np.allclose(out, 0.0, atol=1e-14)


def test_residual_pressure_only_hits_u_rows(unit_cell):
    space = unit_cell
    params = MaterialParams(mu=1.0, lam=1.0, g_c=1.0, eps=0.5,
                            pressure_fn=lambda t: 5.0)
    U = np.zeros(space.dofmap.n_dofs)
    U[space.dofmap.phi_slice] = 1.0
    out = model.residual(space, _unit_state(space, U, t=1.0), _mask0(space),
                         params, SplitKind.NOSPLIT)
    u_rows = out[space.dofmap.u_slice]
    phi_rows = out[space.dofmap.phi_slice]
    assert np.abs(u_rows).max() > 0.0
    assert np.allclose(phi_rows, 0.0, atol=1e-14)
    # (phi^2 p, div w): for w = hat at corner (0,0), div w integrates to
    # p * int(dN/dx) = -p/2 per component on the unit cell
    assert out[space.dofmap.index(0, 0)] == pytest.approx(-5.0 / 2)
    assert out[space.dofmap.index(1, 0)] == pytest.approx(-5.0 / 2)


def _dense_one_cell_residual(space, state, params, split):
    """Quadrature-loop evaluation with scalar physics, no batching."""
    dm = space.dofmap
    dim = space.dim
    out = np.zeros(dm.n_dofs)
    cell = space.mesh.cells[0]
    p = params.pressure(state.t)
    for q, w in enumerate(space.JxW):
        grad = np.zeros((dim, dim))
        phi = 0.0
        phit = 0.0
        gphi = np.zeros(dim)
        for n, vid in enumerate(cell):
            for i in range(dim):
                grad[i] += state.U[dm.index(i, vid)] * space.gradN[q, n]
            phi += state.U[dm.index(dim, vid)] * space.N[q, n]
            phit += state.phi_tilde[vid] * space.N[q, n]
            gphi += state.U[dm.index(dim, vid)] * space.gradN[q, n]
        e = 0.5 * (grad + grad.T)
        Ep, Em, sp, sm = strain_split(e, split, params.lam, params.mu)
        gk = degradation(phit, params.kappa)
        stress = gk * sp + sm + phit**2 * p * np.eye(dim)
        vphi = ((1 - params.kappa) * phi * Ep + 2 * p * phi * np.trace(grad)
                - params.g_c / params.eps * (1 - phi))
        for n, vid in enumerate(cell):
            for i in range(dim):
                out[dm.index(i, vid)] += w * stress[i] @ space.gradN[q, n]
            out[dm.index(dim, vid)] += w * (
                vphi * space.N[q, n]
                + params.g_c * params.eps * gphi @ space.gradN[q, n])
    return out


@pytest.mark.parametrize("split", list(SplitKind))
def test_residual_one_cell_dense_oracle(unit_cell, split):
    space = unit_cell
    rng = np.random.default_rng(11)
    params = MaterialParams(mu=1.7, lam=0.6, g_c=0.9, eps=0.8,
                            pressure_fn=lambda t: 3.0 * t)
    state = random_state(space, rng, t=0.7)
    got = model.residual(space, state, _mask0(space), params, split)
    ref = _dense_one_cell_residual(space, state, params, split)
    assert np.linalg.norm(got - ref) <= 1e-12 * np.linalg.norm(ref)


# ---------------------------------------------------------------------------
# jacobian
# ---------------------------------------------------------------------------

def test_jacobian_zero_vector_and_identity_rows(square_disc, square_params):
    space = square_disc.finest
    rng = np.random.default_rng(2)
    state = random_state(space, rng)
    assert not model.jacobian_vmult(space, state, _mask0(space), square_params,
                                    SplitKind.NOSPLIT,
                                    np.zeros(space.dofmap.n_dofs)).any()
    full = ConstraintMask(np.ones(space.dofmap.n_dofs, bool),
                          np.zeros(space.dofmap.n_dofs))
    v = rng.standard_normal(space.dofmap.n_dofs)
    assert np.array_equal(
        model.jacobian_vmult(space, state, full, square_params,
                             SplitKind.NOSPLIT, v), v)


@pytest.mark.parametrize("split", list(SplitKind))
def test_jacobian_fd_consistency_2x2(split, square_params):
    h = mesh.build_square(1.0, 2)  # 2x2 elements
    space = Discretization(h).finest
    rng = np.random.default_rng(7)
    state = random_state(space, rng, gapped=split is SplitKind.MIEHE)
    mask = _mask0(space)
    v = rng.standard_normal(space.dofmap.n_dofs)
    d = 1e-6
    fd = (model.residual(space, state.with_U(state.U + d * v), mask,
                         square_params, split)
          - model.residual(space, state.with_U(state.U - d * v), mask,
                           square_params, split)) / (2 * d)
    Gv = model.jacobian_vmult(space, state, mask, square_params, split, v)
    err = np.linalg.norm(fd - Gv) / np.linalg.norm(Gv)
    assert err <= 1e-5


def test_block_structure_u_phi_zero(square_disc, square_params):
    """A vector supported on phase-field dofs must produce zero u-rows."""
    space = square_disc.finest
    rng = np.random.default_rng(3)
    state = random_state(space, rng)
    v = np.zeros(space.dofmap.n_dofs)
    v[space.dofmap.phi_slice] = rng.standard_normal(space.dofmap.n_vertices)
    out = model.jacobian_vmult(space, state, _mask0(space), square_params,
                               SplitKind.NOSPLIT, v)
    assert np.allclose(out[space.dofmap.u_slice], 0.0, atol=1e-14)


@pytest.mark.parametrize("split", list(SplitKind))
def test_diagonal_block_symmetry(square_disc, square_params, split):
    space = square_disc.finest
    rng = np.random.default_rng(4)
    state = random_state(space, rng, gapped=split is SplitKind.MIEHE)
    mask = _mask0(space)
    op = model.PhaseFieldOperator(space, state, mask, square_params, split)
    n = space.dofmap.n_dofs
    for blk in (space.dofmap.u_slice, space.dofmap.phi_slice):
        v = np.zeros(n); w = np.zeros(n)
        v[blk] = rng.standard_normal(v[blk].size)
        w[blk] = rng.standard_normal(w[blk].size)
        lhs = op.apply(v) @ w
        rhs = v @ op.apply(w)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


@pytest.mark.parametrize("split", list(SplitKind))
def test_block_apply_matches_full(square_disc, square_params, split):
    space = square_disc.finest
    rng = np.random.default_rng(9)
    state = random_state(space, rng, gapped=split is SplitKind.MIEHE)
    flags = rng.random(space.dofmap.n_dofs) < 0.2
    mask = ConstraintMask(flags, np.zeros(space.dofmap.n_dofs))
    op = model.PhaseFieldOperator(space, state, mask, square_params, split)
    dm = space.dofmap
    vu = rng.standard_normal(dm.dim * dm.n_vertices)
    full_in = np.zeros(dm.n_dofs)
    full_in[dm.u_slice] = vu
    assert np.allclose(op.apply_block(0, vu), op.apply(full_in)[dm.u_slice],
                       rtol=1e-13, atol=1e-13)
    vp = rng.standard_normal(dm.n_vertices)
    full_in = np.zeros(dm.n_dofs)
    full_in[dm.phi_slice] = vp
    assert np.allclose(op.apply_block(1, vp), op.apply(full_in)[dm.phi_slice],
                       rtol=1e-13, atol=1e-13)


def test_diagonal_matches_assembled(square_disc, square_params):
    space = square_disc.finest
    rng = np.random.default_rng(5)
    for split in SplitKind:
        state = random_state(space, rng, gapped=split is SplitKind.MIEHE)
        flags = rng.random(space.dofmap.n_dofs) < 0.1
        mask = ConstraintMask(flags, np.zeros(space.dofmap.n_dofs))
        A = assemble_matrix(space, state, mask, square_params, split)
        d = model.diagonal(space, state, mask, square_params, split)
        assert np.linalg.norm(d - np.diag(A)) <= 1e-12 * np.linalg.norm(np.diag(A))
        assert np.all(d[flags] == 1.0)


def test_phi_diagonal_strictly_positive(square_disc, square_params):
    space = square_disc.finest
    U = np.zeros(space.dofmap.n_dofs)
    U[space.dofmap.phi_slice] = 1.0
    d = model.diagonal(space, _unit_state(space, U), _mask0(space),
                       square_params, SplitKind.NOSPLIT)
    assert np.all(d[space.dofmap.phi_slice] > 0.0)


def test_threaded_apply_bitwise_identical(square_disc, square_params):
    space = square_disc.finest
    rng = np.random.default_rng(12)
    state = random_state(space, rng)
    mask = _mask0(space)
    v = rng.standard_normal(space.dofmap.n_dofs)
    op1 = model.PhaseFieldOperator(space, state, mask, square_params,
                                   SplitKind.NOSPLIT, threads=1)
    op4 = model.PhaseFieldOperator(space, state, mask, square_params,
                                   SplitKind.NOSPLIT, threads=4)
    assert np.array_equal(op1.apply(v), op4.apply(v))


# ---------------------------------------------------------------------------
# energies and load
# ---------------------------------------------------------------------------

def test_crack_energy_values(square_disc):
    space = square_disc.finest
    params = MaterialParams(mu=1.0, lam=1.0, g_c=0.7, eps=0.3)
    U = np.zeros(space.dofmap.n_dofs)
    U[space.dofmap.phi_slice] = 1.0
    assert model.crack_energy(space, _unit_state(space, U), params) == \
        pytest.approx(0.0, abs=1e-28)
    U[space.dofmap.phi_slice] = 0.0
    # constant phi = 0: G_c |D| / (2 eps)
    expected = 0.7 * 16.0 / (2 * 0.3)
    assert model.crack_energy(space, _unit_state(space, U), params) == \
        pytest.approx(expected, rel=1e-12)


def test_crack_energy_linear_phi_one_cell(unit_cell):
    space = unit_cell
    params = MaterialParams(mu=1.0, lam=1.0, g_c=2.0, eps=0.5)
    U = np.zeros(space.dofmap.n_dofs)
    phi = space.mesh.vertices[:, 0]          # phi = x on the unit cell
    U[space.dofmap.phi_slice] = phi
    # int (1-x)^2 = 1/3, int |grad phi|^2 = 1
    expected = 0.5 * 2.0 * (1.0 / 3.0 / 0.5 + 0.5 * 1.0)
    got = model.crack_energy(space, _unit_state(space, U), params)
    assert got == pytest.approx(expected, rel=1e-12)


def test_bulk_energy_uniform_strain(square_disc):
    space = square_disc.finest
    params = MaterialParams(mu=1.2, lam=0.8, g_c=1.0, eps=0.5)
    a = 0.01
    U = np.zeros(space.dofmap.n_dofs)
    U[space.dofmap.u_slice] = np.concatenate([
        a * space.mesh.vertices[:, 0], a * space.mesh.vertices[:, 1]])
    U[space.dofmap.phi_slice] = 1.0
    expected = 16.0 * (0.5 * 0.8 * (2 * a) ** 2 + 2 * 1.2 * a**2)
    got = model.bulk_energy(space, _unit_state(space, U), params,
                            SplitKind.NOSPLIT)
    assert got == pytest.approx(expected, rel=1e-12)
    U[space.dofmap.u_slice] = 0.0
    assert model.bulk_energy(space, _unit_state(space, U), params,
                             SplitKind.NOSPLIT) == 0.0


def test_phi_residual_is_crack_energy_gradient_at_zero_strain(square_disc):
    """With u = 0 and p = 0 the phase-field rows equal the crack-energy
    gradient (finite differences)."""
    space = square_disc.finest
    params = MaterialParams(mu=1.0, lam=1.0, g_c=0.9, eps=0.7)
    rng = np.random.default_rng(6)
    U = np.zeros(space.dofmap.n_dofs)
    U[space.dofmap.phi_slice] = np.clip(rng.random(space.dofmap.n_vertices), 0, 1)
    state = _unit_state(space, U)
    R = model.residual(space, state, _mask0(space), params, SplitKind.NOSPLIT)
    d = 1e-6
    for gid in rng.integers(space.dofmap.phi_slice.start,
                            space.dofmap.phi_slice.stop, size=8):
        Up = U.copy(); Up[gid] += d
        Um = U.copy(); Um[gid] -= d
        fd = (model.crack_energy(space, _unit_state(space, Up), params)
              - model.crack_energy(space, _unit_state(space, Um), params)) / (2 * d)
        assert R[gid] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_tensile_drive_carries_half_energy_gradient(square_disc):
    """The phase-field residual drives damage with half the derivative of
    the stored tensile energy (the governing form, not the energy QoI)."""
    space = square_disc.finest
    params = MaterialParams(mu=1.0, lam=0.5, g_c=0.9, eps=0.7)
    rng = np.random.default_rng(13)
    state = random_state(space, rng)
    mask = _mask0(space)
    R_full = model.residual(space, state, mask, params, SplitKind.NOSPLIT)
    U0 = state.U.copy()
    U0[space.dofmap.u_slice] = 0.0
    R_nou = model.residual(space, state.with_U(U0), mask, params,
                           SplitKind.NOSPLIT)
    drive = R_full - R_nou          # tensile contribution to phi rows only
    d = 1e-6
    gid = space.dofmap.phi_slice.start + 3
    Up, Um = state.U.copy(), state.U.copy()
    Up[gid] += d
    Um[gid] -= d
    fd_bulk = (model.bulk_energy(space, state.with_U(Up), params, SplitKind.NOSPLIT)
               - model.bulk_energy(space, state.with_U(Um), params,
                                   SplitKind.NOSPLIT)) / (2 * d)
    assert drive[gid] == pytest.approx(0.5 * fd_bulk, rel=1e-4)


def test_boundary_load_zero_displacement(square_disc, square_params):
    space = square_disc.finest
    U = np.zeros(space.dofmap.n_dofs)
    U[space.dofmap.phi_slice] = 1.0
    got = model.boundary_load(space, _unit_state(space, U), square_params,
                              SplitKind.NOSPLIT, mesh.BoundaryId.OUTER, 1)
    assert got == 0.0


def test_boundary_load_uniaxial_on_top():
    h = mesh.build_lshape(500.0, 3)
    space = Discretization(h).finest
    params = MaterialParams(mu=10.95, lam=6.16, g_c=1.0, eps=30.0)
    b = 1e-3
    U = np.zeros(space.dofmap.n_dofs)
    V = space.dofmap.n_vertices
    U[space.dofmap.u_slice] = np.concatenate([
        np.zeros(V), b * space.mesh.vertices[:, 1]])
    U[space.dofmap.phi_slice] = 1.0
    state = _unit_state(space, U)
    # loaded strip: outward normal -y, sigma_yy = (lam + 2 mu) * b
    sig_yy = (6.16 + 2 * 10.95) * b
    measured = model.boundary_load(space, state, params, SplitKind.NOSPLIT,
                                   mesh.BoundaryId.LOADED, 1)
    m = space.mesh
    loaded_rows = np.nonzero(m.bf_tag == int(mesh.BoundaryId.LOADED))[0]
    length = len(loaded_rows) * m.cell_size[0]
    assert measured == pytest.approx(-sig_yy * length, rel=1e-12)
    # sign flips with the displacement
    state2 = _unit_state(space, np.concatenate([-U[:2 * V], U[2 * V:]]))
    measured2 = model.boundary_load(space, state2, params, SplitKind.NOSPLIT,
                                    mesh.BoundaryId.LOADED, 1)
    assert measured2 == pytest.approx(-measured, rel=1e-12)


def test_boundary_load_unknown_tag(square_disc, square_params):
    space = square_disc.finest
    U = np.zeros(space.dofmap.n_dofs)
    with pytest.raises(ValueError):
        model.boundary_load(space, _unit_state(space, U), square_params,
                            SplitKind.NOSPLIT, 42, 1)


def test_fracture_volume(square_disc):
    space = square_disc.finest
    U = np.zeros(space.dofmap.n_dofs)
    U[space.dofmap.phi_slice] = 1.0
    assert model.fracture_volume(space, U) == pytest.approx(0.0, abs=1e-14)
    U[space.dofmap.phi_slice] = 0.25
    assert model.fracture_volume(space, U) == pytest.approx(12.0, rel=1e-12)
