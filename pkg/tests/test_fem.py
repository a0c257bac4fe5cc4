import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import macro_mesh, operators, small_meshes
from ksfem.fem import (
    FeFunction,
    LumpedMass,
    assemble_chemotaxis,
    assemble_lumped_mass,
    assemble_stiffness,
    discrete_laplacian,
    load_function,
    nodal_interpolate,
    norms,
    save_function,
)
from ksfem.mesh import Mesh, build_macro_mesh

MESHES = small_meshes()
IDS = [f"mesh{i}-{m.n_triangles}T" for i, m in enumerate(MESHES)]


@pytest.mark.parametrize("mesh", MESHES, ids=IDS)
def test_lumped_mass_matches_oracle(mesh):
    ref = oracles.lumped_mass(mesh.vertices, mesh.triangles)
    assert np.max(np.abs(assemble_lumped_mass(mesh).diagonal - ref)) <= 1e-12


@pytest.mark.parametrize("mesh", MESHES, ids=IDS)
def test_stiffness_matches_oracle(mesh):
    ref = oracles.stiffness(mesh.vertices, mesh.triangles)
    assert np.max(np.abs(assemble_stiffness(mesh).toarray() - ref)) <= 1e-12


@pytest.mark.parametrize("mesh", MESHES, ids=IDS)
def test_chemotaxis_matches_oracle(mesh):
    rng = np.random.default_rng(mesh.n_vertices)
    v = rng.normal(size=mesh.n_vertices)
    ref = oracles.chemotaxis(mesh.vertices, mesh.triangles, v)
    assert np.max(np.abs(assemble_chemotaxis(mesh, v).toarray() - ref)) <= 1e-12


def test_right_triangle_stiffness_against_cotangents():
    p = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    K = assemble_stiffness(Mesh(p, [[0, 1, 2]])).toarray()
    expected = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    assert np.allclose(K, expected, atol=1e-15)
    assert np.allclose(K, oracles.cotangent_local(p), atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_random_triangle_against_cotangents(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(size=(3, 2))
    d1, d2 = p[1] - p[0], p[2] - p[0]
    if d1[0] * d2[1] - d1[1] * d2[0] < 0:
        p = p[[0, 2, 1]]
    K = assemble_stiffness(Mesh(p, [[0, 1, 2]])).toarray()
    assert np.allclose(K, oracles.cotangent_local(p), atol=1e-10)


def test_chemotaxis_single_triangle():
    p = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    m = Mesh(p, [[0, 1, 2]])
    C = assemble_chemotaxis(m, p[:, 0]).toarray()  # v = x
    # row i is (|T|/3) * d(phi_i)/dx repeated over the three columns
    assert np.allclose(C[0], -1 / 6, atol=1e-15)
    assert np.allclose(C[1], 1 / 6, atol=1e-15)
    assert np.allclose(C[2], 0.0, atol=1e-15)


def test_chemotaxis_of_constant_is_zero():
    m = build_macro_mesh(3)
    C = assemble_chemotaxis(m, np.full(m.n_vertices, 7.5))
    assert np.max(np.abs(C.toarray())) <= 1e-12


def test_chemotaxis_rejects_foreign_mesh():
    a, b = build_macro_mesh(1), build_macro_mesh(2)
    with pytest.raises(ValueError):
        assemble_chemotaxis(a, FeFunction(b, np.zeros(b.n_vertices)))


@pytest.mark.parametrize("kind", ["Acute", "NonAcute"])
def test_column_sums_of_chemotaxis_vanish(kind):
    # sum_i grad phi_i = 0 on every triangle
    m = build_macro_mesh(4, kind)
    v = np.random.default_rng(3).normal(size=m.n_vertices)
    C = assemble_chemotaxis(m, v).matrix
    assert np.max(np.abs(np.asarray(C.sum(axis=0)))) <= 1e-12


def test_chemotaxis_row_sum_identity():
    # (C 1)_i = (grad v, grad phi_i) = (A v)_i
    m, M, A = operators(4)
    for seed in range(5):
        v = np.random.default_rng(seed).normal(size=m.n_vertices)
        C = assemble_chemotaxis(m, v)
        assert np.allclose(C @ np.ones(m.n_vertices), A @ v, atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 4])
@pytest.mark.parametrize("kind", ["Acute", "NonAcute"])
def test_stiffness_symmetric_psd_with_constant_kernel(n, kind):
    m = build_macro_mesh(n, kind)
    K = assemble_stiffness(m).toarray()
    assert np.array_equal(K, K.T)
    eig = np.linalg.eigvalsh(K)
    assert eig.min() >= -1e-10
    assert np.sum(eig < 1e-10) == 1
    assert np.max(np.abs(K.sum(axis=1))) <= 1e-12


@pytest.mark.parametrize("n", [1, 4, 10])
def test_acute_mesh_gives_negative_offdiagonals(n):
    m = build_macro_mesh(n, "Acute")
    vals = assemble_stiffness(m).edge_values(m.edges)
    assert np.all(vals < 0)


def test_nonacute_mesh_has_nonnegative_offdiagonal():
    m = build_macro_mesh(2, "NonAcute")
    vals = assemble_stiffness(m).edge_values(m.edges)
    assert vals.max() >= -1e-14


def test_lumped_mass_sums_to_area():
    m, M, _ = operators(5)
    assert abs(M.diagonal.sum() - 1.0) <= 1e-12
    with pytest.raises(ValueError):
        LumpedMass(np.array([1.0, 0.0]))


def test_interpolation_of_constants_and_bell():
    m = macro_mesh(50)
    assert np.all(nodal_interpolate(lambda x, y: 3.25, m).values == 3.25)
    bell = nodal_interpolate(lambda x, y: 70 * np.exp(-70 * (x * x + y * y)), m)
    centre = np.flatnonzero(np.all(m.vertices == 0.0, axis=1))
    assert len(centre) == 1
    assert bell.values[centre[0]] == 70.0


def test_interpolation_reproduces_linears():
    m = build_macro_mesh(3, "NonAcute")
    f = nodal_interpolate(lambda x, y: 2 * x - 3 * y + 1, m)
    g = m.basis_gradients
    grad = np.einsum("tk,tkd->td", f.values[m.triangles], g)
    assert np.allclose(grad, [2.0, -3.0], atol=1e-12)
    bary = m.vertices[m.triangles].mean(axis=1)
    assert np.allclose(f.at_barycenters(), 2 * bary[:, 0] - 3 * bary[:, 1] + 1, atol=1e-13)


def test_interpolation_reports_bad_vertex():
    m = build_macro_mesh(1)
    with pytest.raises(ValueError, match="vertex"):
        nodal_interpolate(lambda x, y: np.where(x == 0, np.inf, 1.0), m)


def test_discrete_laplacian_residual_and_constants():
    m, M, A = operators(6)
    v = np.random.default_rng(0).normal(size=m.n_vertices)
    w = discrete_laplacian(v, M, A)
    assert np.max(np.abs(M @ w + A @ v)) <= 1e-12 * np.abs(A @ v).max()
    assert np.max(np.abs(discrete_laplacian(np.full(m.n_vertices, 2.0), M, A))) <= 1e-12


def test_discrete_laplacian_of_quadratic_converges_weakly():
    # Pointwise, the lumped Laplacian of x^2 + y^2 is only O(1) accurate on
    # these meshes; its mass-weighted mean over interior nodes converges.
    errs = []
    for n in (4, 8, 16, 32):
        m, M, A = operators(n)
        v = nodal_interpolate(lambda x, y: x * x + y * y, m).values
        w = discrete_laplacian(v, M, A)
        inner = np.ones(m.n_vertices, bool)
        inner[m.boundary_vertices] = False
        d = M.diagonal[inner]
        errs.append(abs(np.dot(d, w[inner]) / d.sum() - 4.0))
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 0.01
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 0.8)


def test_norms_of_one():
    m, M, A = operators(3)
    r = norms(np.ones(m.n_vertices), M, A)
    assert r.lumped_l2 == pytest.approx(1.0, abs=1e-12)
    assert r.lumped_l1 == pytest.approx(1.0, abs=1e-12)
    assert r.mass == pytest.approx(1.0, abs=1e-12)
    assert r.grad_l2 <= 1e-6
    assert (r.min, r.max) == (1.0, 1.0)


def test_function_dump_roundtrip(tmp_path):
    m = build_macro_mesh(2)
    u = FeFunction(m, np.random.default_rng(4).normal(size=m.n_vertices) * 1e5)
    save_function(u, tmp_path / "u.txt")
    assert np.array_equal(load_function(tmp_path / "u.txt", m).values, u.values)


def test_fefunction_validation_and_arithmetic():
    m = build_macro_mesh(1)
    with pytest.raises(ValueError):
        FeFunction(m, np.zeros(3))
    with pytest.raises(ValueError):
        FeFunction(m, np.full(m.n_vertices, np.nan))
    a = FeFunction(m, np.ones(m.n_vertices))
    assert np.array_equal((a + a - a * 0.5).values, np.full(m.n_vertices, 1.5))


MESH3 = build_macro_mesh(3)
_, M3, A3 = operators(3)
vectors = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=MESH3.n_vertices,
                   max_size=MESH3.n_vertices).map(np.array)


@settings(max_examples=40, deadline=None)
@given(vectors)
def test_property_stiffness_quadratic_form_nonnegative(v):
    assert v @ (A3 @ v) >= -1e-9 * max(1.0, float(v @ v))


@settings(max_examples=40, deadline=None)
@given(vectors, st.floats(-1e3, 1e3))
def test_property_chemotaxis_linear_and_shift_invariant(v, c):
    C1 = assemble_chemotaxis(MESH3, v).toarray()
    C2 = assemble_chemotaxis(MESH3, v + c).toarray()
    C3 = assemble_chemotaxis(MESH3, 2 * v).toarray()
    scale = max(1.0, np.abs(C1).max())
    assert np.allclose(C1, C2, atol=1e-9 * scale)
    assert np.allclose(C3, 2 * C1, atol=1e-9 * scale)


@settings(max_examples=40, deadline=None)
@given(vectors)
def test_property_laplacian_of_shift_unchanged(v):
    w1 = discrete_laplacian(v, M3, A3)
    w2 = discrete_laplacian(v + 5.0, M3, A3)
    assert np.allclose(w1, w2, atol=1e-8 * max(1.0, np.abs(w1).max()))


def test_single_triangle_lumped_mass():
    m = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    assert np.allclose(assemble_lumped_mass(m).diagonal, 1 / 6, rtol=0, atol=1e-16)


@pytest.mark.parametrize("kind", ["Acute", "NonAcute"])
def test_sparsity_pattern_is_mesh_adjacency(kind):
    m = build_macro_mesh(3, kind)
    allowed = {(i, i) for i in range(m.n_vertices)}
    allowed |= {(int(a), int(b)) for a, b in m.edges} | {(int(b), int(a)) for a, b in m.edges}
    v = np.random.default_rng(0).normal(size=m.n_vertices)
    for op in (assemble_stiffness(m), assemble_chemotaxis(m, v)):
        coo = op.matrix.tocoo()
        assert set(zip(coo.row.tolist(), coo.col.tolist())) <= allowed
    K = assemble_stiffness(m)
    assert K.symmetric and abs(K.matrix - K.matrix.T).max() <= 1e-14
    C = assemble_chemotaxis(m, v)
    assert not C.symmetric and abs(C.matrix - C.matrix.T).max() > 1e-14
