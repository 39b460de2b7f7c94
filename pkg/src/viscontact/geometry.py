"""Reference domain, graded triangulation and boundary tagging.

The body is the rectangle ``[0, 5] x [0, 2]`` topped by the half-disk of
radius 2.5 centred on the middle of its top edge.  The union is convex, so a
Delaunay triangulation of boundary plus interior points covers the boundary
polygon exactly and no constrained triangulator is needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

GAMMA1 = "gamma1"
GAMMA2 = "gamma2"
GAMMA3 = "gamma3"
TAGS = (GAMMA1, GAMMA2, GAMMA3)

_ON_TOL = 1e-9


class InvalidSizes(ValueError):
    pass


class MeshFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Segment:
    start: tuple[float, float]
    end: tuple[float, float]

    @property
    def length(self) -> float:
        return math.dist(self.start, self.end)

    def contains(self, p, tol: float = _ON_TOL) -> bool:
        a = np.asarray(self.start, dtype=float)
        d = np.asarray(self.end, dtype=float) - a
        s = np.dot(np.asarray(p) - a, d) / np.dot(d, d)
        if s < -tol or s > 1 + tol:
            return False
        return float(np.linalg.norm(a + s * d - p)) <= tol


@dataclass(frozen=True)
class Arc:
    """Upper semicircle ``{|p - center| = radius, y >= center_y}``."""

    center: tuple[float, float]
    radius: float

    @property
    def apex(self) -> tuple[float, float]:
        return (self.center[0], self.center[1] + self.radius)

    def contains(self, p, tol: float = 1e-9) -> bool:
        r = math.dist(p, self.center)
        return abs(r - self.radius) <= tol * max(1.0, self.radius) and p[1] >= self.center[1] - tol


@dataclass(frozen=True)
class DomainSpec:
    """Rectangle, optionally capped by a full-width upper half-disk.

    ``gamma1`` (clamped) and ``gamma3`` (contact) are segments of the bottom
    edge; the rest of the boundary is ``gamma2``.  ``gamma3`` may be omitted.
    """

    rectangle: tuple[float, float, float, float]
    gamma1: Segment
    gamma3: Segment | None = None
    cap_center: tuple[float, float] | None = None
    cap_radius: float | None = None

    def __post_init__(self):
        x0, y0, x1, y1 = self.rectangle
        if not (x1 > x0 and y1 > y0):
            raise ValueError("degenerate rectangle")
        for seg in self.bottom_segments:
            if abs(seg.start[1] - y0) > _ON_TOL or abs(seg.end[1] - y0) > _ON_TOL:
                raise ValueError("gamma1/gamma3 must lie on the bottom edge")
            if not (x0 - _ON_TOL <= seg.start[0] < seg.end[0] <= x1 + _ON_TOL):
                raise ValueError("gamma segments must run left to right inside the bottom edge")
        if self.gamma3 is not None:
            a, b = sorted((s.start[0], s.end[0]) for s in self.bottom_segments)
            if a[1] > b[0] + _ON_TOL:
                raise ValueError("gamma1 and gamma3 overlap")
        if self.cap_center is not None:
            cx, cy = self.cap_center
            if (abs(cx - 0.5 * (x0 + x1)) > _ON_TOL or abs(cy - y1) > _ON_TOL
                    or self.cap_radius is None or abs(self.cap_radius - 0.5 * (x1 - x0)) > _ON_TOL):
                raise ValueError("the cap must span the full top edge")

    @property
    def bottom_segments(self) -> list[Segment]:
        return [s for s in (self.gamma1, self.gamma3) if s is not None]

    @property
    def load_arc(self) -> Arc | None:
        if self.cap_center is None:
            return None
        return Arc(self.cap_center, self.cap_radius)

    @property
    def area(self) -> float:
        """Exact area (curved cap), not the polygonal approximation."""
        x0, y0, x1, y1 = self.rectangle
        cap = 0.5 * math.pi * self.cap_radius ** 2 if self.cap_center is not None else 0.0
        return (x1 - x0) * (y1 - y0) + cap

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        x0, y0, x1, y1 = self.rectangle
        x, y = pts[:, 0], pts[:, 1]
        d = np.minimum.reduce([x - x0, x1 - x, y - y0])
        if self.cap_center is None:
            return np.minimum(d, y1 - y)
        cx, cy = self.cap_center
        d_cap = np.where(y > cy, self.cap_radius - np.hypot(x - cx, y - cy), np.inf)
        return np.minimum(d, d_cap)

    def contact_distance(self, pts: np.ndarray) -> np.ndarray:
        """Distance to the union of gamma1 and gamma3."""
        out = np.full(len(pts), np.inf)
        for seg in self.bottom_segments:
            xa, xb = seg.start[0], seg.end[0]
            dx = np.maximum.reduce([xa - pts[:, 0], np.zeros(len(pts)), pts[:, 0] - xb])
            out = np.minimum(out, np.hypot(dx, pts[:, 1] - seg.start[1]))
        return out

    def tag_of(self, a, b) -> str:
        mid = 0.5 * (np.asarray(a) + np.asarray(b))
        if all(self.gamma1.contains(p) for p in (a, b, mid)):
            return GAMMA1
        if self.gamma3 is not None and all(self.gamma3.contains(p) for p in (a, b, mid)):
            return GAMMA3
        return GAMMA2

    def on_load_arc(self, a, b) -> bool:
        arc = self.load_arc
        return arc is not None and arc.contains(a) and arc.contains(b)


def build_reference_domain() -> DomainSpec:
    return DomainSpec(
        rectangle=(0.0, 0.0, 5.0, 2.0),
        gamma1=Segment((0.0, 0.0), (1.0, 0.0)),
        gamma3=Segment((4.0, 0.0), (5.0, 0.0)),
        cap_center=(2.5, 2.0),
        cap_radius=2.5,
    )


def unit_square_domain() -> DomainSpec:
    """Unit square clamped along its bottom edge, no contact zone."""
    return DomainSpec(rectangle=(0.0, 0.0, 1.0, 1.0), gamma1=Segment((0.0, 0.0), (1.0, 0.0)))


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable P1 triangulation.

    ``boundary_edges[e]`` is ordered as in its (counterclockwise) triangle, so
    the body lies to the left and ``edge_normals[e]`` points to the right.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: tuple[str, ...]
    edge_normals: np.ndarray
    load_edges: np.ndarray  # boolean mask over boundary_edges

    def __post_init__(self):
        for name in ("nodes", "triangles", "boundary_edges", "edge_normals", "load_edges"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def edges_tagged(self, tag: str) -> np.ndarray:
        return self.boundary_edges[np.array([t == tag for t in self.edge_tags], dtype=bool)]

    def nodes_tagged(self, tag: str) -> np.ndarray:
        """Sorted node indices touching an edge with ``tag`` (endpoints included)."""
        return np.unique(self.edges_tagged(tag))

    def boundary_polygon_area(self) -> float:
        """Shoelace area of the closed boundary polyline."""
        p = self.nodes
        a, b = self.boundary_edges[:, 0], self.boundary_edges[:, 1]
        return 0.5 * float(np.sum(p[a, 0] * p[b, 1] - p[b, 0] * p[a, 1]))

    def diameters(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        lengths = [np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)]
        return np.max(lengths, axis=0)

    def edge_lengths(self, tag: str | None = None) -> np.ndarray:
        edges = self.boundary_edges if tag is None else self.edges_tagged(tag)
        return np.linalg.norm(self.nodes[edges[:, 1]] - self.nodes[edges[:, 0]], axis=1)

    def export(self, path) -> None:
        """Write the plain-text snapshot (17 significant digits)."""
        Path(path).write_text(self.to_text())

    def to_text(self) -> str:
        lines = [f"nodes {self.n_nodes} triangles {self.n_triangles} edges {len(self.boundary_edges)}"]
        lines += [f"{i} {x:.17g} {y:.17g}" for i, (x, y) in enumerate(self.nodes.tolist())]
        lines += [f"{i} {a} {b} {c}" for i, (a, b, c) in enumerate(self.triangles.tolist())]
        lines += [f"{i} {a} {b} {t}" for i, ((a, b), t) in enumerate(zip(self.boundary_edges.tolist(), self.edge_tags))]
        return "\n".join(lines) + "\n"


def read_mesh_text(text: str) -> dict:
    """Parse a snapshot written by :meth:`Mesh.to_text` (extra blocks ignored)."""
    lines = text.splitlines()
    head = lines[0].split()
    n, m, k = int(head[1]), int(head[3]), int(head[5])
    body = lines[1:]
    nodes = np.array([[float(v) for v in ln.split()[1:3]] for ln in body[:n]])
    tris = np.array([[int(v) for v in ln.split()[1:4]] for ln in body[n:n + m]], dtype=np.int64)
    edges, tags = [], []
    for ln in body[n + m:n + m + k]:
        parts = ln.split()
        edges.append((int(parts[1]), int(parts[2])))
        tags.append(parts[3])
    return {"nodes": nodes, "triangles": tris, "edges": np.array(edges, dtype=np.int64), "tags": tags}


# --------------------------------------------------------------------------
# mesh generation

def _boundary_pieces(domain: DomainSpec):
    """Counterclockwise boundary as parametrised pieces ``(length, point_fn)``."""
    x0, y0, x1, y1 = domain.rectangle
    breaks = {x0, x1}
    for seg in domain.bottom_segments:
        breaks.update((seg.start[0], seg.end[0]))
    breaks = sorted(b for b in breaks if x0 <= b <= x1)

    def line(a, b):
        a, b = np.asarray(a, float), np.asarray(b, float)
        return float(np.linalg.norm(b - a)), lambda s, a=a, b=b, L=float(np.linalg.norm(b - a)): a + np.outer(s / L, b - a)

    pieces = [line((xa, y0), (xb, y0)) for xa, xb in zip(breaks[:-1], breaks[1:])]
    pieces.append(line((x1, y0), (x1, y1)))
    if domain.cap_center is None:
        pieces.append(line((x1, y1), (x0, y1)))
    else:
        c = np.asarray(domain.cap_center, float)
        r = domain.cap_radius

        def arc(s, c=c, r=r):
            th = s / r
            return c + r * np.column_stack([np.cos(th), np.sin(th)])

        pieces.append((math.pi * r, arc))
    pieces.append(line((x0, y1), (x0, y0)))
    return pieces


def _discretise_piece(length, point_fn, sizing, h_max):
    s = np.linspace(0.0, length, 2001)
    h = sizing(point_fn(s))
    density = 1.0 / h
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(s))])
    n = max(1, math.ceil(cum[-1] - 1e-9))
    # a curved piece is only ever refined, never coarsened, so chords stay <= h_max
    n = max(n, math.ceil(length / h_max - 1e-9))
    targets = np.linspace(0.0, cum[-1], n + 1)
    s_nodes = np.interp(targets, cum, s)
    s_nodes[0], s_nodes[-1] = 0.0, length
    pts = point_fn(s_nodes)
    return pts[:-1]  # the last point starts the next piece


def _greedy_interior(domain, sizing, h_min, boundary_pts, spacing_factor):
    x0, y0, x1, _ = domain.rectangle
    y_top = domain.rectangle[3] + (domain.cap_radius or 0.0)
    a = 0.5 * h_min
    dy = a * math.sqrt(3) / 2
    ys = np.arange(y0 + dy, y_top, dy)
    rows = []
    for j, y in enumerate(ys):
        xs = np.arange(x0 + a * (0.5 if j % 2 else 1.0), x1, a)
        rows.append(np.column_stack([xs, np.full(len(xs), y)]))
    cand = np.vstack(rows)
    h = sizing(cand)
    keep = domain.boundary_distance(cand) > 0.55 * spacing_factor * h
    cand, h = cand[keep], h[keep]
    order = np.lexsort((cand[:, 0], cand[:, 1], h))
    cand, h = cand[order], h[order]

    cell = h_min * spacing_factor
    grid: dict[tuple[int, int], list[int]] = {}
    pts: list[np.ndarray] = []

    def insert(p):
        key = (int(p[0] // cell), int(p[1] // cell))
        grid.setdefault(key, []).append(len(pts))
        pts.append(p)

    for p in boundary_pts:
        insert(p)
    n_boundary = len(pts)
    for p, hp in zip(cand, h):
        r = spacing_factor * hp
        reach = int(math.ceil(r / cell))
        ci, cj = int(p[0] // cell), int(p[1] // cell)
        ok = True
        r2 = r * r
        for di in range(-reach, reach + 1):
            for dj in range(-reach, reach + 1):
                for idx in grid.get((ci + di, cj + dj), ()):
                    q = pts[idx]
                    if (q[0] - p[0]) ** 2 + (q[1] - p[1]) ** 2 < r2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            insert(p)
    return np.array(pts[n_boundary:]).reshape(-1, 2)


def _delaunay(points: np.ndarray) -> np.ndarray:
    tri = Delaunay(points)
    if len(tri.coplanar):
        raise MeshFailure("Delaunay dropped points as coplanar")
    simp = tri.simplices.astype(np.int64)
    p = points[simp]
    area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = area2 < 0
    simp[flip] = simp[flip][:, [0, 2, 1]]
    return simp[np.abs(area2) > 1e-14 * np.max(np.abs(area2))]


def _boundary_edges(triangles: np.ndarray) -> np.ndarray:
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return e[counts[inv.ravel()] == 1]


def _order_loop(edges: np.ndarray) -> np.ndarray:
    nxt = {int(a): int(b) for a, b in edges}
    start = min(nxt)
    loop = [start]
    while nxt[loop[-1]] != start:
        loop.append(nxt[loop[-1]])
        if len(loop) > len(edges):
            raise MeshFailure("boundary is not a single closed loop")
    return np.array([(a, nxt[a]) for a in loop], dtype=np.int64)


def triangulate(domain: DomainSpec, h_interior: float, h_contact_boundary: float, *,
                grading: float = 0.3, smoothing_passes: int = 8, spacing: float = 0.6,
                boundary_refine: float = 1.0) -> Mesh:
    """Graded conforming P1 triangulation of ``domain``.

    Edge lengths on gamma1/gamma3 never exceed ``h_contact_boundary``; the
    target size grows linearly (rate ``grading``) with distance from those
    segments, capped at ``h_interior``.  Fully deterministic.
    """
    if not (0 < h_contact_boundary <= h_interior):
        raise InvalidSizes(f"need 0 < h_contact_boundary <= h_interior, got {h_contact_boundary}, {h_interior}")

    def sizing(pts):
        return np.minimum(h_interior, h_contact_boundary + grading * domain.contact_distance(pts))

    def bsizing(pts):
        return np.minimum(sizing(pts), boundary_refine * h_interior)

    boundary = np.vstack([_discretise_piece(L, fn, bsizing, h_interior) for L, fn in _boundary_pieces(domain)])
    nb = len(boundary)
    interior = _greedy_interior(domain, sizing, h_contact_boundary, boundary, spacing_factor=spacing)
    points = np.vstack([boundary, interior])

    tris = _delaunay(points)
    for _ in range(smoothing_passes):
        points = _smooth(points, tris, nb, domain)
        tris = _delaunay(points)

    for _ in range(20):
        long_edges = _edges_longer_than(points, tris, h_interior)
        if not len(long_edges):
            break
        points = np.vstack([points, 0.5 * (points[long_edges[:, 0]] + points[long_edges[:, 1]])])
        tris = _delaunay(points)
    else:
        raise MeshFailure("could not bring element diameters below h_interior")

    edges = _order_loop(_boundary_edges(tris))
    on_boundary = np.zeros(len(points), dtype=bool)
    on_boundary[edges.ravel()] = True
    if len(edges) != nb or not on_boundary[:nb].all() or on_boundary[nb:].any():
        raise MeshFailure("boundary discretisation not reproduced by the triangulation")

    d = points[edges[:, 1]] - points[edges[:, 0]]
    lengths = np.hypot(d[:, 0], d[:, 1])
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]
    tags = tuple(domain.tag_of(points[a], points[b]) for a, b in edges)
    for i, t in enumerate(tags):
        if t == GAMMA3:
            normals[i] = (0.0, -1.0)
    load = np.array([domain.on_load_arc(points[a], points[b]) for a, b in edges], dtype=bool)
    mesh = Mesh(points, tris, edges, tags, normals, load)
    _check(mesh, h_contact_boundary)
    return mesh


def _edges_longer_than(points, tris, h):
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    lengths = np.linalg.norm(points[e[:, 1]] - points[e[:, 0]], axis=1)
    return e[lengths > h]


def _smooth(points, tris, nb, domain):
    """One Laplacian pass over interior nodes; moves leaving the domain are undone."""
    n = len(points)
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    acc = np.zeros((n, 2))
    deg = np.zeros(n)
    np.add.at(acc, e[:, 0], points[e[:, 1]])
    np.add.at(acc, e[:, 1], points[e[:, 0]])
    np.add.at(deg, e.ravel(), 1.0)
    new = points.copy()
    avg = acc[nb:] / deg[nb:, None]
    inside = domain.boundary_distance(avg) > 1e-6
    new[nb:][inside] = avg[inside]
    return new


def _check(mesh: Mesh, h_contact: float) -> None:
    if np.any(mesh.signed_areas() <= 0):
        raise MeshFailure("non-positive triangle area")
    for tag in (GAMMA1, GAMMA3):
        lengths = mesh.edge_lengths(tag)
        if len(lengths) and lengths.max() > h_contact * (1 + 1e-12):
            raise MeshFailure(f"{tag} edges exceed the contact size")


def reference_mesh() -> Mesh:
    return triangulate(build_reference_domain(), 0.275, 0.06)
