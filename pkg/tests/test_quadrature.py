import numpy as np
import pytest

from naturalritz import quadrature as qd


def test_interior_counts_and_measure():
    x, w = qd.build_interior(20, 5)
    assert x.shape == (10000, 2)
    assert abs(np.sum(w) - 4.0) <= 1e-12
    assert np.all(w > 0)


def test_interior_monomial_exactness():
    x, w = qd.build_interior(20, 5)
    val = float(np.sum(x[:, 0] ** 4 * x[:, 1] ** 4 * w))
    assert abs(val - 4.0 / 25.0) <= 1e-12


def test_interior_degree9_exactness():
    # order-5 Gauss is exact through degree 9 per direction
    x, w = qd.build_interior(4, 5)
    odd = float(np.sum(x[:, 0] ** 9 * x[:, 1] ** 9 * w))
    assert abs(odd) <= 1e-12
    even = float(np.sum(x[:, 0] ** 8 * x[:, 1] ** 8 * w))
    assert abs(even - (2.0 / 9.0) ** 2) <= 1e-12


def test_interior_alignment_check():
    qd.build_interior(20, 5, partition_lines=(-0.5, 0.0, 0.5))
    with pytest.raises(qd.AlignmentError):
        qd.build_interior(7, 5, partition_lines=(0.5,))


def test_boundary_measure_and_count():
    x, w, n, t, seg = qd.build_boundary(50, 5)
    assert x.shape == (1000, 2)
    assert abs(np.sum(w) - 8.0) <= 1e-12
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0)
    assert np.allclose(np.linalg.norm(t, axis=1), 1.0)
    assert np.allclose(np.sum(n * t, axis=1), 0.0)


def test_boundary_orientation_right_edge():
    x, w, n, t, seg = qd.build_boundary(10, 3)
    right = x[:, 0] == 1.0
    assert np.all(n[right] == np.array([1.0, 0.0]))
    assert np.all(t[right] == np.array([0.0, 1.0]))


def test_boundary_closed_loop_gradient():
    # tangential derivative of any polynomial integrates to zero on the loop
    x, w, n, t, seg = qd.build_boundary(50, 5)
    grad = np.column_stack([3 * x[:, 0] ** 2 * x[:, 1], x[:, 0] ** 3])
    val = float(np.sum(np.sum(grad * t, axis=1) * w))
    assert abs(val) <= 1e-12


def test_boundary_winding_sign():
    # counterclockwise tangents give +2*pi for the angular form
    x, w, n, t, seg = qd.build_boundary(50, 5)
    r2 = np.sum(x**2, axis=1)
    grad_theta = np.column_stack([-x[:, 1] / r2, x[:, 0] / r2])
    val = float(np.sum(np.sum(grad_theta * t, axis=1) * w))
    assert abs(val - 2 * np.pi) <= 1e-10


def test_interface_measure_and_normals():
    x, w, n, t, seg = qd.build_interface(25, 5)
    assert x.shape == (500, 2)
    assert abs(np.sum(w) - 4.0) <= 1e-12
    top = x[:, 1] == 0.5
    assert np.all(n[top] == np.array([0.0, 1.0]))


def test_interface_closed_loop():
    x, w, n, t, seg = qd.build_interface(25, 5)
    kappa_grad = np.column_stack([np.cos(x[:, 0]) * np.cos(x[:, 1]), -np.sin(x[:, 0]) * np.sin(x[:, 1])])
    val = float(np.sum(np.sum(kappa_grad * t, axis=1) * w))
    assert abs(val) <= 1e-10


def test_line_interface():
    x, w, n, t, seg = qd.build_line_interface(50, 5)
    assert abs(np.sum(w) - 2.0) <= 1e-12
    assert np.all(x[:, 1] == 0.0)
    assert np.all(n == np.array([0.0, -1.0]))


def test_test_grid():
    g = qd.build_test_grid(100)
    assert g.shape == (10000, 2)
    corners = {(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)}
    present = {tuple(p) for p in g if abs(p[0]) == 1.0 and abs(p[1]) == 1.0}
    assert corners == present
    xs = np.unique(g[:, 0])
    assert np.isclose(xs[1] - xs[0], 2.0 / 99.0)


def test_region_tags():
    x = np.array([[0.0, 0.0], [0.7, 0.0], [0.49, 0.49], [-0.9, 0.2]])
    tags = qd.region_tags(x, has_interface=True)
    assert list(tags) == [1, 2, 1, 2]
    assert np.all(qd.region_tags(x, has_interface=False) == 1)


def test_quadrature_set_sums():
    qs = qd.build_quadrature(panels=20, order=5, with_interface=True)
    assert abs(qs.interior_w_sum - 4.0) <= 1e-12
    assert abs(qs.boundary_w_sum - 8.0) <= 1e-12
    assert abs(float(np.sum(qs.interface_w)) - 4.0) <= 1e-12
    assert np.all(np.abs(qs.interior_x) < 1.0)


def test_dump_csv(tmp_path):
    qs = qd.build_quadrature(panels=3, order=2, boundary_panels=3, interface_panels=2, with_interface=True, test_points=4)
    qd.dump_csv(qs, tmp_path)
    for name in ("interior.csv", "boundary.csv", "interface.csv", "test_grid.csv"):
        assert (tmp_path / name).exists()
    header = (tmp_path / "boundary.csv").read_text().splitlines()[0]
    assert header == "x1,x2,w,n1,n2,t1,t2,segment"
