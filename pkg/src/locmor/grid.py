"""Structured rectangular grids, non-overlapping domain decompositions and
oversampling patches.

Cells are numbered lexicographically (x fastest), ``c = j * nx + i``; grid
nodes likewise, ``n = j * (nx + 1) + i``. Faces are numbered with all
x-normal (vertical) faces first, then all y-normal faces, each block in
lexicographic order. Interior faces point from the lower/left cell ``t+``
towards the upper/right cell ``t-``; boundary faces carry the outward normal
of their single cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigurationError

SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True, eq=False)
class FineGrid:
    domain: tuple[float, float, float, float]
    nx: int
    ny: int

    @property
    def hx(self):
        return (self.domain[1] - self.domain[0]) / self.nx

    @property
    def hy(self):
        return (self.domain[3] - self.domain[2]) / self.ny

    @property
    def num_cells(self):
        return self.nx * self.ny

    @property
    def num_nodes(self):
        return (self.nx + 1) * (self.ny + 1)

    @property
    def cell_area(self):
        return self.hx * self.hy

    @cached_property
    def cell_ij(self):
        c = np.arange(self.num_cells)
        return np.stack([c % self.nx, c // self.nx], axis=1)

    @cached_property
    def cell_centers(self):
        ij = self.cell_ij
        return np.stack([self.domain[0] + (ij[:, 0] + 0.5) * self.hx,
                         self.domain[2] + (ij[:, 1] + 0.5) * self.hy], axis=1)

    @cached_property
    def cell_nodes(self):
        """Corner node indices per cell, ordered (x0,y0), (x1,y0), (x0,y1), (x1,y1)."""
        i, j = self.cell_ij.T
        n0 = j * (self.nx + 1) + i
        return np.stack([n0, n0 + 1, n0 + self.nx + 1, n0 + self.nx + 2], axis=1)

    @cached_property
    def node_coords(self):
        n = np.arange(self.num_nodes)
        i, j = n % (self.nx + 1), n // (self.nx + 1)
        return np.stack([self.domain[0] + i * self.hx, self.domain[2] + j * self.hy], axis=1)

    @cached_property
    def boundary_node_sides(self):
        """Boolean array (num_nodes, 4): node lies on left/right/bottom/top side."""
        n = np.arange(self.num_nodes)
        i, j = n % (self.nx + 1), n // (self.nx + 1)
        return np.stack([i == 0, i == self.nx, j == 0, j == self.ny], axis=1)

    @cached_property
    def _faces(self):
        nx, ny = self.nx, self.ny
        # x-normal faces
        jv, iv = np.meshgrid(np.arange(ny), np.arange(nx + 1), indexing="ij")
        jv, iv = jv.ravel(), iv.ravel()
        plus_v = np.where(iv == 0, jv * nx, jv * nx + iv - 1)
        minus_v = np.where((iv == 0) | (iv == nx), -1, jv * nx + iv)
        normal_v = np.zeros((iv.size, 2))
        normal_v[:, 0] = np.where(iv == 0, -1.0, 1.0)
        nodes_v = np.stack([jv * (nx + 1) + iv, (jv + 1) * (nx + 1) + iv], axis=1)
        side_v = np.full(iv.size, -1)
        side_v[iv == 0] = 0
        side_v[iv == nx] = 1
        # y-normal faces
        jh, ih = np.meshgrid(np.arange(ny + 1), np.arange(nx), indexing="ij")
        jh, ih = jh.ravel(), ih.ravel()
        plus_h = np.where(jh == 0, ih, (jh - 1) * nx + ih)
        minus_h = np.where((jh == 0) | (jh == ny), -1, jh * nx + ih)
        normal_h = np.zeros((ih.size, 2))
        normal_h[:, 1] = np.where(jh == 0, -1.0, 1.0)
        nodes_h = np.stack([jh * (nx + 1) + ih, jh * (nx + 1) + ih + 1], axis=1)
        side_h = np.full(ih.size, -1)
        side_h[jh == 0] = 2
        side_h[jh == ny] = 3
        return dict(
            plus=np.concatenate([plus_v, plus_h]),
            minus=np.concatenate([minus_v, minus_h]),
            normal=np.concatenate([normal_v, normal_h]),
            axis=np.concatenate([np.zeros(iv.size, int), np.ones(ih.size, int)]),
            h=np.concatenate([np.full(iv.size, self.hy), np.full(ih.size, self.hx)]),
            nodes=np.concatenate([nodes_v, nodes_h]),
            side=np.concatenate([side_v, side_h]),
        )

    @property
    def num_faces(self):
        return self._faces["plus"].size

    @property
    def face_plus(self):
        return self._faces["plus"]

    @property
    def face_minus(self):
        """Cell on the far side of each face, -1 on the boundary."""
        return self._faces["minus"]

    @property
    def face_normal(self):
        return self._faces["normal"]

    @property
    def face_axis(self):
        return self._faces["axis"]

    @property
    def face_h(self):
        return self._faces["h"]

    @property
    def face_nodes(self):
        return self._faces["nodes"]

    @property
    def face_side(self):
        """Index into SIDES for boundary faces, -1 for interior faces."""
        return self._faces["side"]

    @property
    def is_boundary_face(self):
        return self._faces["minus"] < 0

    @cached_property
    def cell_faces(self):
        """Face indices per cell ordered left, right, bottom, top."""
        i, j = self.cell_ij.T
        nv = (self.nx + 1) * self.ny
        left = j * (self.nx + 1) + i
        bottom = nv + j * self.nx + i
        return np.stack([left, left + 1, bottom, bottom + self.nx], axis=1)

    def locate(self, point):
        """Cell index and local coordinates in [0,1]^2 of a point.

        Points on cell boundaries belong to the cell to their lower left, except
        on the lower/left domain boundary.
        """
        from .errors import QueryError

        x, y = float(point[0]), float(point[1])
        x0, x1, y0, y1 = self.domain
        tol = 1e-12 * max(x1 - x0, y1 - y0)
        if not (x0 - tol <= x <= x1 + tol and y0 - tol <= y <= y1 + tol):
            raise QueryError(f"point {point} outside domain {self.domain}")
        sx, sy = (x - x0) / self.hx, (y - y0) / self.hy
        i = min(max(int(np.ceil(sx)) - 1, 0), self.nx - 1)
        j = min(max(int(np.ceil(sy)) - 1, 0), self.ny - 1)
        return j * self.nx + i, np.array([sx - i, sy - j])


def build_grid(domain, nx, ny) -> FineGrid:
    x0, x1, y0, y1 = (float(v) for v in domain)
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ConfigurationError(f"cell counts must be positive integers, got {nx}x{ny}")
    if not (x1 > x0 and y1 > y0):
        raise ConfigurationError(f"degenerate rectangle {domain}")
    return FineGrid((x0, x1, y0, y1), int(nx), int(ny))


@dataclass(frozen=True)
class Interface:
    plus: int  # subdomain on the t+ side (left/below)
    minus: int
    faces: np.ndarray = field(repr=False)
    axis: int  # 0: normal along x (vertical interface), 1: along y


@dataclass(frozen=True, eq=False)
class DomainDecomposition:
    grid: FineGrid
    Mx: int
    My: int

    @property
    def num_subdomains(self):
        return self.Mx * self.My

    @property
    def sub_nx(self):
        return self.grid.nx // self.Mx

    @property
    def sub_ny(self):
        return self.grid.ny // self.My

    def subdomain_ij(self, m):
        return m % self.Mx, m // self.Mx

    def subdomain_index(self, I, J):
        return J * self.Mx + I

    def color(self, m):
        I, J = self.subdomain_ij(m)
        return (I + J) % 2

    @cached_property
    def colors(self):
        return np.array([self.color(m) for m in range(self.num_subdomains)])

    @cached_property
    def cell_subdomain(self):
        i, j = self.grid.cell_ij.T
        return (j // self.sub_ny) * self.Mx + i // self.sub_nx

    @cached_property
    def subdomain_cells(self):
        """Cell indices of each subdomain in local lexicographic order."""
        out = []
        for m in range(self.num_subdomains):
            I, J = self.subdomain_ij(m)
            ii, jj = np.meshgrid(np.arange(I * self.sub_nx, (I + 1) * self.sub_nx),
                                 np.arange(J * self.sub_ny, (J + 1) * self.sub_ny))
            out.append((jj * self.grid.nx + ii).ravel())
        return out

    def subdomain_box(self, m):
        I, J = self.subdomain_ij(m)
        g = self.grid
        wx, wy = self.sub_nx * g.hx, self.sub_ny * g.hy
        return (g.domain[0] + I * wx, g.domain[0] + (I + 1) * wx,
                g.domain[2] + J * wy, g.domain[2] + (J + 1) * wy)

    @cached_property
    def face_kind(self):
        """Per face: 0 inside a subdomain, 1 on an interface, 2 on the boundary."""
        g = self.grid
        kind = np.full(g.num_faces, 2)
        inner = ~g.is_boundary_face
        sp = self.cell_subdomain[g.face_plus[inner]]
        sm = self.cell_subdomain[g.face_minus[inner]]
        kind[inner] = np.where(sp == sm, 0, 1)
        return kind

    @cached_property
    def interfaces(self) -> list[Interface]:
        g = self.grid
        faces = np.flatnonzero(self.face_kind == 1)
        sp = self.cell_subdomain[g.face_plus[faces]]
        sm = self.cell_subdomain[g.face_minus[faces]]
        out = []
        for axis in (0, 1):
            pairs = sorted({(int(a), int(b)) for a, b, f in zip(sp, sm, faces) if g.face_axis[f] == axis},
                           key=lambda p: (p[0] // self.Mx, p[0] % self.Mx))
            for a, b in pairs:
                sel = faces[(sp == a) & (sm == b)]
                out.append(Interface(a, b, sel, axis))
        return out

    @cached_property
    def neighbors(self):
        nb = {m: set() for m in range(self.num_subdomains)}
        for itf in self.interfaces:
            nb[itf.plus].add(itf.minus)
            nb[itf.minus].add(itf.plus)
        return {m: sorted(v) for m, v in nb.items()}

    def touches_boundary(self, m, sides=SIDES):
        I, J = self.subdomain_ij(m)
        hit = {"left": I == 0, "right": I == self.Mx - 1, "bottom": J == 0, "top": J == self.My - 1}
        return any(hit[s] for s in sides)


def decompose(grid: FineGrid, Mx, My) -> DomainDecomposition:
    if Mx < 1 or My < 1 or grid.nx % Mx or grid.ny % My:
        raise ConfigurationError(
            f"{grid.nx}x{grid.ny} cells cannot be split into {Mx}x{My} subdomains")
    return DomainDecomposition(grid, int(Mx), int(My))


@dataclass(frozen=True, eq=False)
class OversamplingPatch:
    dd: DomainDecomposition
    target: tuple  # ("subdomain", m) or ("interface", k)
    layers: int
    I_range: tuple[int, int]  # inclusive subdomain index ranges
    J_range: tuple[int, int]

    @cached_property
    def subdomains(self):
        return [self.dd.subdomain_index(I, J)
                for J in range(self.J_range[0], self.J_range[1] + 1)
                for I in range(self.I_range[0], self.I_range[1] + 1)]

    @property
    def nx(self):
        return (self.I_range[1] - self.I_range[0] + 1) * self.dd.sub_nx

    @property
    def ny(self):
        return (self.J_range[1] - self.J_range[0] + 1) * self.dd.sub_ny

    @property
    def cell_offset(self):
        return self.I_range[0] * self.dd.sub_nx, self.J_range[0] * self.dd.sub_ny

    @cached_property
    def cells(self):
        """Global cell indices in patch-lexicographic order."""
        i0, j0 = self.cell_offset
        jj, ii = np.meshgrid(np.arange(j0, j0 + self.ny), np.arange(i0, i0 + self.nx), indexing="ij")
        return (jj * self.dd.grid.nx + ii).ravel()

    @cached_property
    def nodes(self):
        """Global grid node indices in patch-lexicographic order."""
        i0, j0 = self.cell_offset
        jj, ii = np.meshgrid(np.arange(j0, j0 + self.ny + 1), np.arange(i0, i0 + self.nx + 1), indexing="ij")
        return (jj * (self.dd.grid.nx + 1) + ii).ravel()

    @cached_property
    def outer_sides(self):
        """Patch sides (subset of SIDES) that lie on the domain boundary."""
        dd = self.dd
        return tuple(s for s, hit in zip(SIDES, (self.I_range[0] == 0, self.I_range[1] == dd.Mx - 1,
                                                  self.J_range[0] == 0, self.J_range[1] == dd.My - 1)) if hit)

    @cached_property
    def gamma_out(self):
        """Global face indices of the patch boundary minus the domain boundary."""
        g = self.dd.grid
        i0, j0 = self.cell_offset
        i1, j1 = i0 + self.nx, j0 + self.ny
        nv = (g.nx + 1) * g.ny
        faces = []
        if "left" not in self.outer_sides:
            faces += [j * (g.nx + 1) + i0 for j in range(j0, j1)]
        if "right" not in self.outer_sides:
            faces += [j * (g.nx + 1) + i1 for j in range(j0, j1)]
        if "bottom" not in self.outer_sides:
            faces += [nv + j0 * g.nx + i for i in range(i0, i1)]
        if "top" not in self.outer_sides:
            faces += [nv + j1 * g.nx + i for i in range(i0, i1)]
        return np.array(sorted(faces), dtype=int)


def oversampling_patch(dd: DomainDecomposition, target, layers=1) -> OversamplingPatch:
    """Patch of whole subdomains around a subdomain or an interface.

    ``target`` is ``("subdomain", m)`` or ``("interface", k)`` with ``k`` an
    index into ``dd.interfaces``. For an interface the patch spans the two
    adjacent subdomains plus ``layers - 1`` rings across and ``layers`` rings
    along the interface, so the interface ends keep one subdomain width from
    the outer boundary. Patches are clipped at the domain boundary.
    """
    kind, idx = target
    if layers < 0:
        raise ConfigurationError("layers must be non-negative")
    if kind == "subdomain":
        I, J = dd.subdomain_ij(idx)
        Ir, Jr = (I - layers, I + layers), (J - layers, J + layers)
    elif kind == "interface":
        itf = dd.interfaces[idx]
        (Ia, Ja), (Ib, Jb) = dd.subdomain_ij(itf.plus), dd.subdomain_ij(itf.minus)
        across = max(layers - 1, 0)
        if itf.axis == 0:
            Ir, Jr = (Ia - across, Ib + across), (Ja - layers, Ja + layers)
        else:
            Ir, Jr = (Ia - layers, Ia + layers), (Ja - across, Jb + across)
    else:
        raise ConfigurationError(f"unknown patch target {target!r}")
    Ir = (max(Ir[0], 0), min(Ir[1], dd.Mx - 1))
    Jr = (max(Jr[0], 0), min(Jr[1], dd.My - 1))
    return OversamplingPatch(dd, (kind, int(idx)), int(layers), Ir, Jr)
