import numpy as np
import pytest

from latticefmm.defect import DefectSpec, apply_B, apply_S, solve_defect
from latticefmm.green import apply_discrete_laplacian, phi
from latticefmm.oracle import dense_kernel_matrix, dense_solve_truncated


def removed_bar_spec():
    return DefectSpec([((0, 0), (1, 0), -1.0)])


def residual_map(spec, u, radius):
    """(A+B)u on all nodes with |m|_inf <= radius (u must cover radius+1)."""
    get = lambda p: u[p]
    bu = apply_B(spec, u)
    out = {}
    for x in range(-radius, radius + 1):
        for y in range(-radius, radius + 1):
            out[(x, y)] = apply_discrete_laplacian(get, (x, y)) + bu.get((x, y), 0.0)
    return out


def grid_queries(radius):
    return [
        (x, y)
        for x in range(-radius, radius + 1)
        for y in range(-radius, radius + 1)
    ]


def test_empty_spec_returns_far_field_exactly():
    u = solve_defect(DefectSpec([]), (1.0, 0.5), queries=[(3, 4), (-2, 7), (0, 0)])
    assert u[(3, 4)] == 3.0 + 2.0
    assert u[(-2, 7)] == -2.0 + 3.5
    assert u[(0, 0)] == 0.0


def test_apply_B_hand_example():
    spec = removed_bar_spec()
    w = {(0, 0): 0.0, (1, 0): 1.0}  # v = m1
    bw = apply_B(spec, w)
    assert bw[(0, 0)] == pytest.approx(1.0)
    assert bw[(1, 0)] == pytest.approx(-1.0)


def test_apply_B_constant_is_zero():
    spec = DefectSpec(
        [((0, 0), (1, 0), -1.0), ((2, 2), (2, 3), 0.5), ((0, 0), (3, 3), 1.0)]
    )
    w = {p: 7.25 for p in spec.nodes}
    assert all(v == 0.0 for v in apply_B(spec, w).values())


def test_apply_B_empty_spec():
    assert apply_B(DefectSpec([]), {}) == {}


def test_apply_B_missing_node():
    with pytest.raises(KeyError, match="missing node"):
        apply_B(removed_bar_spec(), {(0, 0): 1.0})


def test_spec_validation():
    with pytest.raises(ValueError, match="below full removal"):
        DefectSpec([((0, 0), (1, 0), -1.5)])
    with pytest.raises(ValueError, match="nonnegative"):
        DefectSpec([((0, 0), (2, 2), -0.5)])
    with pytest.raises(ValueError, match="coincide"):
        DefectSpec([((1, 1), (1, 1), 1.0)])
    with pytest.raises(ValueError, match="disconnected"):
        DefectSpec(
            [
                ((0, 0), (1, 0), -1.0),
                ((0, 0), (-1, 0), -1.0),
                ((0, 0), (0, 1), -1.0),
                ((0, 0), (0, -1), -1.0),
            ]
        )


def test_spec_accumulates_repeated_bars():
    spec = DefectSpec([((0, 0), (1, 0), -0.5), ((1, 0), (0, 0), -0.5)])
    assert len(spec) == 1
    assert spec.bars[0][2] == pytest.approx(-1.0)


def test_apply_S_unit_charge():
    u = apply_S([(0, 0)], [1.0], [(1, 1)])
    assert u[0] == pytest.approx(phi(1, 1), abs=1e-13)


def test_removed_bar_residual(table):
    spec = removed_bar_spec()
    u = solve_defect(spec, (1.0, 0.0), tol=1e-9, queries=grid_queries(21), table=table)
    res = residual_map(spec, u, 20)
    assert max(abs(v) for v in res.values()) <= 1e-8


def test_added_long_link_residual(table):
    spec = DefectSpec([((0, 0), (2, 3), 2.0)])
    u = solve_defect(spec, (0.5, 1.0), tol=1e-9, queries=grid_queries(9), table=table)
    res = residual_map(spec, u, 8)
    assert max(abs(v) for v in res.values()) <= 1e-8


def test_strengthened_bar_matches_dense_formulation(table):
    # independent path: dense LU on the reduced system + windowed convolution
    spec = DefectSpec([((0, 0), (1, 0), 1.0)])
    queries = grid_queries(10)
    u = solve_defect(spec, (1.0, 0.0), tol=1e-9, queries=queries, table=table)

    nodes = spec.nodes
    n = len(nodes)
    pos = {p: i for i, p in enumerate(nodes)}
    b_mat = np.zeros((n, n))
    for a, b, dc in spec.bars:
        i, j = pos[a], pos[b]
        b_mat[i, i] += dc
        b_mat[j, j] += dc
        b_mat[i, j] -= dc
        b_mat[j, i] -= dc
    s_mat = dense_kernel_matrix(np.array(nodes), table)
    v_vec = np.array([p[0] for p in nodes], dtype=float)
    rhs = -b_mat @ s_mat @ b_mat @ v_vec
    mu = np.linalg.solve(np.eye(n) + b_mat @ s_mat, rhs)
    w = b_mat @ v_vec + mu
    window = dense_solve_truncated(
        {p: -float(w[i]) for i, p in enumerate(nodes)}, window_radius=26, table=table
    )
    for p in queries:
        u_dense = p[0] + window[p]
        assert u[p] == pytest.approx(u_dense, abs=1e-7)


def test_s_inverts_discrete_laplacian(table):
    rng = np.random.default_rng(5)
    pts = np.unique(rng.integers(-15, 16, size=(20, 2)), axis=0)
    w = {tuple(p): float(rng.standard_normal()) for p in map(tuple, pts)}
    # f = A w on the support and its neighbours
    touched = set(w)
    for x, y in list(w):
        touched.update([(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)])
    get = lambda p: w.get(p, 0.0)
    f_nodes = sorted(touched)
    f_vals = np.array([apply_discrete_laplacian(get, p) for p in f_nodes])
    back = apply_S(np.array(f_nodes), f_vals, pts, table=table)
    expected = np.array([w[tuple(p)] for p in pts])
    assert np.max(np.abs(back - expected)) <= 1e-9


def test_linearity_in_far_field(table):
    spec = DefectSpec([((0, 0), (1, 0), -1.0), ((4, 4), (4, 5), 0.75)])
    queries = [(12, 3), (-7, 9), (0, 0), (30, 30)]
    u10 = solve_defect(spec, (1.0, 0.0), tol=1e-9, queries=queries, table=table)
    u01 = solve_defect(spec, (0.0, 1.0), tol=1e-9, queries=queries, table=table)
    u11 = solve_defect(spec, (1.0, 1.0), tol=1e-9, queries=queries, table=table)
    for p in queries:
        assert u11[p] == pytest.approx(u10[p] + u01[p], abs=1e-8)


def test_far_field_decay(table):
    spec = removed_bar_spec()
    pts = [(100, 1), (10000, 1)]
    u = solve_defect(spec, (1.0, 0.0), tol=1e-9, queries=pts, table=table)
    d_near = abs(u[(100, 1)] - 100.0)
    d_far = abs(u[(10000, 1)] - 10000.0)
    assert d_near > 0
    assert d_far <= d_near / 10.0


def test_tol_precondition():
    with pytest.raises(ValueError, match="10x"):
        solve_defect(removed_bar_spec(), (1.0, 0.0), tol=1e-12, eps=1e-10)
