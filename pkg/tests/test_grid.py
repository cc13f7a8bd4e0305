import numpy as np
import pytest
from hypothesis import given, strategies as st

from locmor.errors import ConfigurationError, QueryError
from locmor.grid import build_grid, decompose, oversampling_patch


def test_single_cell_has_four_boundary_faces():
    g = build_grid((0, 1, 0, 1), 1, 1)
    assert g.num_cells == 1
    assert g.is_boundary_face.sum() == 4
    assert (~g.is_boundary_face).sum() == 0


def test_two_cells_share_one_face_pointing_right():
    g = build_grid((0, 1, 0, 1), 2, 1)
    inner = np.flatnonzero(~g.is_boundary_face)
    assert inner.size == 1
    f = inner[0]
    assert np.allclose(g.face_normal[f], [1.0, 0.0])
    assert g.face_plus[f] == 0 and g.face_minus[f] == 1


def test_scaled_channel_grid_size():
    assert build_grid((0, 5, 0, 1), 500, 100).num_cells == 50_000


@pytest.mark.parametrize("args", [(0, 1), (1, 0), (2.5, 1)])
def test_bad_counts_rejected(args):
    with pytest.raises(ConfigurationError):
        build_grid((0, 1, 0, 1), *args)


def test_degenerate_rectangle_rejected():
    with pytest.raises(ConfigurationError):
        build_grid((0, 0, 0, 1), 2, 2)


@given(st.integers(1, 6), st.integers(1, 6))
def test_face_topology(nx, ny):
    g = build_grid((0, 2, -1, 1), nx, ny)
    counts = np.bincount(g.face_plus, minlength=g.num_cells)
    counts += np.bincount(g.face_minus[g.face_minus >= 0], minlength=g.num_cells)
    assert np.all(counts == 4)
    # normals point away from the plus cell
    c = g.cell_centers
    mid = g.node_coords[g.face_nodes].mean(axis=1)
    assert np.all(((mid - c[g.face_plus]) * g.face_normal).sum(axis=1) > 0)
    # closed-surface check: oriented face measures cancel per cell
    acc = np.zeros((g.num_cells, 2))
    np.add.at(acc, g.face_plus, g.face_normal * g.face_h[:, None])
    inner = g.face_minus >= 0
    np.add.at(acc, g.face_minus[inner], -g.face_normal[inner] * g.face_h[inner, None])
    assert np.allclose(acc, 0.0)


def test_two_subdomains_one_interface():
    dd = decompose(build_grid((0, 1, 0, 1), 2, 1), 2, 1)
    assert dd.num_subdomains == 2
    assert len(dd.interfaces) == 1
    assert len(dd.interfaces[0].faces) == 1


def test_channel_decomposition_count():
    assert decompose(build_grid((0, 5, 0, 1), 500, 100), 25, 5).num_subdomains == 125


def test_four_by_four_checkerboard():
    dd = decompose(build_grid((0, 1, 0, 1), 4, 4), 2, 2)
    assert len(dd.interfaces) == 4
    assert list(dd.colors) == [0, 1, 1, 0]


def test_non_divisible_rejected():
    with pytest.raises(ConfigurationError):
        decompose(build_grid((0, 1, 0, 1), 5, 4), 2, 2)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3))
def test_decomposition_partition(Mx, My, sx, sy):
    dd = decompose(build_grid((0, 1, 0, 1), Mx * sx, My * sy), Mx, My)
    cells = np.concatenate([dd.subdomain_cells[m] for m in range(dd.num_subdomains)])
    assert np.array_equal(np.sort(cells), np.arange(dd.grid.num_cells))
    g = dd.grid
    inner = np.flatnonzero(~g.is_boundary_face)
    itf = np.concatenate([i.faces for i in dd.interfaces] or [np.zeros(0, int)])
    assert len(np.unique(itf)) == len(itf)
    same = dd.cell_subdomain[g.face_plus[inner]] == dd.cell_subdomain[g.face_minus[inner]]
    assert np.array_equal(np.sort(inner[~same]), np.sort(itf))
    for i in dd.interfaces:
        assert dd.colors[i.plus] != dd.colors[i.minus]


def test_centre_patch_of_3x3_covers_everything():
    dd = decompose(build_grid((0, 1, 0, 1), 9, 9), 3, 3)
    p = oversampling_patch(dd, ("subdomain", 4), 1)
    assert sorted(p.subdomains) == list(range(9))
    assert len(p.gamma_out) == 0


def test_interior_patch_is_3x3():
    dd = decompose(build_grid((0, 5, 0, 1), 200, 40), 25, 5)
    p = oversampling_patch(dd, ("subdomain", dd.subdomain_index(12, 2)), 1)
    assert len(p.subdomains) == 9
    assert (p.nx, p.ny) == (24, 24)
    assert len(p.gamma_out) == 4 * 24


def test_interface_patch_ends():
    dd = decompose(build_grid((0, 1, 0, 1), 2, 1), 2, 1)
    p = oversampling_patch(dd, ("interface", 0), 1)
    assert sorted(p.subdomains) == [0, 1]
    assert len(p.gamma_out) == 0  # both ends lie on the domain boundary


def test_locate_outside_raises():
    g = build_grid((0, 1, 0, 1), 2, 2)
    with pytest.raises(QueryError):
        g.locate((1.5, 0.5))
