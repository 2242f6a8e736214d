"""Composite Gauss-Legendre quadrature on [-1, 1]^2, its boundary, and the
interface of the inner square [-0.5, 0.5]^2, plus the uniform test lattice.

Boundary and interface nodes carry unit outward normals and counterclockwise
tangents (t = n rotated +90 degrees).  Panels must align with any coefficient
discontinuity line so no panel straddles it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QuadratureSet",
    "build_interior",
    "build_boundary",
    "build_interface",
    "build_test_grid",
    "build_quadrature",
    "dump_csv",
]

_INNER_HALF = 0.5  # interface square half-width (Gamma_0 = boundary of [-0.5, 0.5]^2)

# edge order fixed to a counterclockwise traversal starting at the bottom
_EDGES = (
    ("bottom", np.array([0.0, -1.0])),
    ("right", np.array([1.0, 0.0])),
    ("top", np.array([0.0, 1.0])),
    ("left", np.array([-1.0, 0.0])),
)


class AlignmentError(ValueError):
    """A required discontinuity line is not a union of panel edges."""


def _rot90(n):
    return np.array([-n[1], n[0]])


def _panel_nodes(a, b, panels, order):
    """Composite Gauss-Legendre nodes/weights on [a, b]."""
    ref_x, ref_w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    xs, ws = [], []
    for k in range(panels):
        lo, hi = edges[k], edges[k + 1]
        half = 0.5 * (hi - lo)
        xs.append(0.5 * (lo + hi) + half * ref_x)
        ws.append(half * ref_w)
    return np.concatenate(xs), np.concatenate(ws)


def build_interior(panels_per_side=20, order=5, partition_lines=()):
    """Tensor-product rule over the square; `partition_lines` lists coordinate
    values (applied to both axes) that must coincide with panel edges."""
    if panels_per_side < 1:
        raise ValueError("panels_per_side must be >= 1")
    edges = np.linspace(-1.0, 1.0, panels_per_side + 1)
    for line in partition_lines:
        if not np.any(np.isclose(edges, line, atol=1e-12)):
            raise AlignmentError(
                f"discontinuity line at {line} is not a panel edge "
                f"for panels_per_side={panels_per_side}"
            )
    x1, w1 = _panel_nodes(-1.0, 1.0, panels_per_side, order)
    X1, X2 = np.meshgrid(x1, x1, indexing="ij")
    W1, W2 = np.meshgrid(w1, w1, indexing="ij")
    x = np.column_stack([X1.ravel(), X2.ravel()])
    w = (W1 * W2).ravel()
    return x, w


def _edge_points(name, panels, order, half=1.0):
    """Quadrature along one edge of the square with half-width `half`,
    ordered in the counterclockwise traversal direction."""
    s, ws = _panel_nodes(-half, half, panels, order)
    if name == "bottom":
        pts = np.column_stack([s, np.full_like(s, -half)])
    elif name == "right":
        pts = np.column_stack([np.full_like(s, half), s])
    elif name == "top":
        pts = np.column_stack([-s, np.full_like(s, half)])
    else:
        pts = np.column_stack([np.full_like(s, -half), -s])
    return pts, ws


def _build_loop(panels_per_edge, order, half):
    xs, ws, ns, ts, seg = [], [], [], [], []
    for sid, (name, n) in enumerate(_EDGES):
        pts, w = _edge_points(name, panels_per_edge, order, half)
        t = _rot90(n)
        xs.append(pts)
        ws.append(w)
        ns.append(np.tile(n, (len(w), 1)))
        ts.append(np.tile(t, (len(w), 1)))
        seg.append(np.full(len(w), sid, dtype=int))
    return (
        np.concatenate(xs),
        np.concatenate(ws),
        np.concatenate(ns),
        np.concatenate(ts),
        np.concatenate(seg),
    )


def build_boundary(panels_per_edge=50, order=5):
    if panels_per_edge < 1:
        raise ValueError("panels_per_edge must be >= 1")
    return _build_loop(panels_per_edge, order, half=1.0)


def build_interface(panels_per_edge=25, order=5):
    """Rule on the inner-square interface; normals point outward from the
    inner region."""
    if panels_per_edge < 1:
        raise ValueError("panels_per_edge must be >= 1")
    return _build_loop(panels_per_edge, order, half=_INNER_HALF)


def build_line_interface(panels=50, order=5):
    """Rule on the straight split line x2 = 0; region 1 is the upper
    half-plane, so its outward normal points down."""
    s, w = _panel_nodes(-1.0, 1.0, panels, order)
    pts = np.column_stack([s, np.zeros_like(s)])
    n = np.tile(np.array([0.0, -1.0]), (len(w), 1))
    t = np.tile(_rot90(np.array([0.0, -1.0])), (len(w), 1))
    seg = np.zeros(len(w), dtype=int)
    return pts, w, n, t, seg


def build_test_grid(n_per_side=100):
    """Closed uniform lattice over the square, corners included."""
    if n_per_side < 2:
        raise ValueError("n_per_side must be >= 2")
    xs = np.linspace(-1.0, 1.0, n_per_side)
    X1, X2 = np.meshgrid(xs, xs, indexing="ij")
    return np.column_stack([X1.ravel(), X2.ravel()])


def region_tags(x, has_interface):
    """1 for points strictly inside the inner square, else 2 (all 1s when the
    problem has no interface)."""
    x = np.atleast_2d(x)
    if not has_interface:
        return np.ones(x.shape[0], dtype=int)
    inside = np.maximum(np.abs(x[:, 0]), np.abs(x[:, 1])) < _INNER_HALF
    return np.where(inside, 1, 2)


@dataclass
class QuadratureSet:
    """Weighted interior / boundary / interface points plus the test lattice.

    Interior points carry a region tag (1 inside the inner square) used by
    interface problems; the tags are all 1 otherwise.
    """

    interior_x: np.ndarray
    interior_w: np.ndarray
    interior_region: np.ndarray
    boundary_x: np.ndarray
    boundary_w: np.ndarray
    boundary_n: np.ndarray
    boundary_t: np.ndarray
    boundary_seg: np.ndarray
    interface_x: np.ndarray | None = None
    interface_w: np.ndarray | None = None
    interface_n: np.ndarray | None = None
    interface_t: np.ndarray | None = None
    interface_seg: np.ndarray | None = None
    test_grid: np.ndarray = field(default_factory=lambda: build_test_grid(100))

    @property
    def has_interface(self):
        return self.interface_x is not None

    @property
    def boundary_w_sum(self):
        return float(np.sum(self.boundary_w))

    @property
    def interior_w_sum(self):
        return float(np.sum(self.interior_w))


def build_quadrature(
    panels=20,
    order=5,
    boundary_panels=50,
    interface_panels=25,
    with_interface=False,
    partition_lines=(),
    test_points=100,
):
    """Assemble the full quadrature set for one experiment."""
    ix, iw = build_interior(panels, order, partition_lines)
    bx, bw, bn, bt, bseg = build_boundary(boundary_panels, order)
    qs = QuadratureSet(
        interior_x=ix,
        interior_w=iw,
        interior_region=region_tags(ix, with_interface),
        boundary_x=bx,
        boundary_w=bw,
        boundary_n=bn,
        boundary_t=bt,
        boundary_seg=bseg,
        test_grid=build_test_grid(test_points),
    )
    if with_interface:
        gx, gw, gn, gt, gseg = build_interface(interface_panels, order)
        qs.interface_x, qs.interface_w = gx, gw
        qs.interface_n, qs.interface_t = gn, gt
        qs.interface_seg = gseg
    return qs


def dump_csv(qs, out_dir):
    """Write the quadrature sets to CSV files for inspection."""
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "interior.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "w", "region"])
        for p, ww, r in zip(qs.interior_x, qs.interior_w, qs.interior_region):
            w.writerow([repr(p[0]), repr(p[1]), repr(ww), r])
    for name, x, ww, n, t, seg in [
        ("boundary", qs.boundary_x, qs.boundary_w, qs.boundary_n, qs.boundary_t, qs.boundary_seg),
        ("interface", qs.interface_x, qs.interface_w, qs.interface_n, qs.interface_t, qs.interface_seg),
    ]:
        if x is None:
            continue
        with open(out_dir / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "w", "n1", "n2", "t1", "t2", "segment"])
            for p, wi, ni, ti, si in zip(x, ww, n, t, seg):
                w.writerow([repr(p[0]), repr(p[1]), repr(wi), repr(ni[0]), repr(ni[1]), repr(ti[0]), repr(ti[1]), si])
    with open(out_dir / "test_grid.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2"])
        for p in qs.test_grid:
            w.writerow([repr(p[0]), repr(p[1])])
