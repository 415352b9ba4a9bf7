"""Triangle meshes with tagged boundaries: data model, I/O, generators and quality.

Vertex coordinates are dimensionless model units. Boundary edges are stored
oriented so that the domain lies on their left, which fixes the outward
normal of every edge as ``(dy, -dx) / length``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq


class MeshError(ValueError):
    """Raised when a mesh or boundary polyline violates an invariant."""


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - p0
    e2 = vertices[triangles[:, 2]] - p0
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _triangle_edges(triangles):
    """All directed edges (a, b) of the triangles, in CCW order."""
    t = triangles
    return np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])


def _boundary_from_triangles(triangles):
    """Directed edges used by exactly one triangle, plus a non-manifold flag."""
    directed = _triangle_edges(triangles)
    undirected = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(undirected, axis=0, return_inverse=True,
                                   return_counts=True)
    inverse = inverse.ravel()
    edge_counts = counts[inverse]
    return directed[edge_counts == 1], bool(np.any(counts > 2))


def _segments_intersect(p1, p2, q1, q2):
    """Vectorised proper/colinear intersection test between segment batches."""
    def orient(a, b, c):
        return np.sign((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
                       - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))

    def on_seg(a, b, c):
        return ((np.minimum(a[..., 0], b[..., 0]) <= c[..., 0])
                & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]))
                & (np.minimum(a[..., 1], b[..., 1]) <= c[..., 1])
                & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1])))

    o1 = orient(p1, p2, q1)
    o2 = orient(p1, p2, q2)
    o3 = orient(q1, q2, p1)
    o4 = orient(q1, q2, p2)
    hit = (o1 != o2) & (o3 != o4) & (o1 != 0) & (o2 != 0) & (o3 != 0) & (o4 != 0)
    hit |= (o1 == 0) & on_seg(p1, p2, q1)
    hit |= (o2 == 0) & on_seg(p1, p2, q2)
    hit |= (o3 == 0) & on_seg(q1, q2, p1)
    hit |= (o4 == 0) & on_seg(q1, q2, p2)
    return hit


def _check_no_self_intersection(points, seg_a, seg_b, label="boundary"):
    """Raise if two non-adjacent segments of the closed loops intersect."""
    n = len(seg_a)
    pa, pb = points[seg_a], points[seg_b]
    lo = np.minimum(pa, pb)
    hi = np.maximum(pa, pb)
    chunk = max(1, 2_000_000 // max(n, 1))
    for start in range(0, n, chunk):
        i = np.arange(start, min(n, start + chunk))
        # bounding-box prefilter, then exact orientation test
        overlap = ((lo[i, None, 0] <= hi[None, :, 0]) & (lo[None, :, 0] <= hi[i, None, 0])
                   & (lo[i, None, 1] <= hi[None, :, 1]) & (lo[None, :, 1] <= hi[i, None, 1]))
        ii, jj = np.nonzero(overlap)
        ii = ii + start
        keep = jj > ii
        ii, jj = ii[keep], jj[keep]
        shares = ((seg_a[ii] == seg_a[jj]) | (seg_a[ii] == seg_b[jj])
                  | (seg_b[ii] == seg_a[jj]) | (seg_b[ii] == seg_b[jj]))
        ii, jj = ii[~shares], jj[~shares]
        if len(ii) == 0:
            continue
        hit = _segments_intersect(pa[ii], pb[ii], pa[jj], pb[jj])
        if np.any(hit):
            k = int(np.argmax(hit))
            raise MeshError(f"self-intersecting {label}: segments {ii[k]} and {jj[k]}")


@dataclass(frozen=True)
class BoundaryPolyline:
    """Closed tagged boundary loops.

    ``loops[i]`` is a ``(k, 2)`` array of points; segment ``j`` joins point
    ``j`` to point ``(j + 1) % k`` and carries tag ``tag_names[seg_tags[i][j]]``.
    ``tracked_points`` maps point names to coordinates.
    """

    loops: tuple
    seg_tags: tuple
    tag_names: tuple
    tracked_points: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.loops:
            raise MeshError("empty polyline")
        for pts, tags in zip(self.loops, self.seg_tags):
            if len(pts) < 3:
                raise MeshError("loop with fewer than 3 points")
            if len(tags) != len(pts):
                raise MeshError("one tag per segment is required")
            d = np.roll(pts, -1, axis=0) - pts
            if np.any(np.all(d == 0.0, axis=1)):
                raise MeshError("consecutive loop points coincide")

    @classmethod
    def from_named(cls, loops, tags, tracked_points=None):
        """Build from loops of points and per-segment tag *strings*."""
        names = []
        seg_tags = []
        for loop_tags in tags:
            ids = []
            for t in loop_tags:
                if t not in names:
                    names.append(t)
                ids.append(names.index(t))
            seg_tags.append(np.asarray(ids, dtype=np.int64))
        loops = tuple(np.asarray(p, dtype=float).reshape(-1, 2) for p in loops)
        tracked = {k: np.asarray(v, dtype=float) for k, v in (tracked_points or {}).items()}
        return cls(loops, tuple(seg_tags), tuple(names), tracked)

    @property
    def segments(self):
        """``(S, 2, 2)`` segment endpoints and ``(S,)`` tag ids over all loops."""
        a = np.concatenate(self.loops)
        b = np.concatenate([np.roll(p, -1, axis=0) for p in self.loops])
        return np.stack([a, b], axis=1), np.concatenate(self.seg_tags)

    def junctions(self):
        """Points where the tag changes along a loop, keyed by the tag pair."""
        out = {}
        for pts, tags in zip(self.loops, self.seg_tags):
            prev = np.roll(tags, 1)
            for j in np.nonzero(prev != tags)[0]:
                key = frozenset((self.tag_names[prev[j]], self.tag_names[tags[j]]))
                out.setdefault(key, []).append(pts[j])
        return {k: np.asarray(v) for k, v in out.items()}

    def validate(self):
        segs, _ = self.segments
        offsets = np.cumsum([0] + [len(p) for p in self.loops])
        idx_a, idx_b = [], []
        for k, p in enumerate(self.loops):
            i = np.arange(len(p)) + offsets[k]
            idx_a.append(i)
            idx_b.append(np.roll(i, -1))
        _check_no_self_intersection(np.concatenate(self.loops), np.concatenate(idx_a),
                                    np.concatenate(idx_b), "polyline")

    def to_json(self):
        return {
            "loops": [
                {"points": [[float(x), float(y)] for x, y in pts],
                 "tags": [self.tag_names[t] for t in tags]}
                for pts, tags in zip(self.loops, self.seg_tags)
            ],
            "tracked_points": {k: [float(v[0]), float(v[1])] for k, v in self.tracked_points.items()},
        }

    @classmethod
    def from_json(cls, doc):
        loops = [l["points"] for l in doc["loops"]]
        tags = [l["tags"] for l in doc["loops"]]
        return cls.from_named(loops, tags, doc.get("tracked_points", {}))


class Mesh2D:
    """Immutable triangulated planar domain with tagged boundary edges.

    Parameters
    ----------
    vertices : (N, 2) array
    triangles : (T, 3) int array, counter-clockwise
    boundary_edges : (B, 2) int array of vertex pairs (any orientation)
    edge_tags : sequence of B tag strings
    tracked_points : mapping name -> boundary vertex index
    validate : run the full invariant check (always done on load)
    """

    def __init__(self, vertices, triangles, boundary_edges, edge_tags,
                 tracked_points=None, validate=True):
        vertices = np.array(vertices, dtype=float).reshape(-1, 2)
        triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        boundary_edges = np.array(boundary_edges, dtype=np.int64).reshape(-1, 2)
        tags = [str(t) for t in edge_tags]
        if len(tags) != len(boundary_edges):
            raise MeshError("every boundary edge needs exactly one tag")
        names = []
        for t in tags:
            if t not in names:
                names.append(t)
        tag_ids = np.array([names.index(t) for t in tags], dtype=np.int64)
        self.tracked_points = dict(tracked_points or {})
        n = len(vertices)
        for arr, label in ((triangles, "triangle"), (boundary_edges, "boundary edge")):
            bad = np.nonzero(np.any((arr < 0) | (arr >= n), axis=1))[0]
            if len(bad):
                raise MeshError(f"dangling vertex index in {label} {int(bad[0])}")
        for name, v in self.tracked_points.items():
            if not 0 <= int(v) < n:
                raise MeshError(f"dangling vertex index in tracked point {name!r}")

        # orient the tagged edges like the boundary edges of the triangles
        bdir, non_manifold = _boundary_from_triangles(triangles)
        if non_manifold:
            raise MeshError("non-manifold edge shared by more than two triangles")
        lookup = {(int(a), int(b)): k for k, (a, b) in enumerate(bdir)}
        oriented = boundary_edges.copy()
        seen = set()
        for k, (a, b) in enumerate(boundary_edges):
            a, b = int(a), int(b)
            if (a, b) in lookup:
                key = (a, b)
            elif (b, a) in lookup:
                key = (b, a)
                oriented[k] = (b, a)
            else:
                raise MeshError(f"edge ({a}, {b}) is tagged but is not a boundary edge")
            if key in seen:
                raise MeshError(f"boundary edge ({a}, {b}) tagged more than once")
            seen.add(key)
        if len(seen) != len(bdir):
            missing = [e for e in lookup if e not in seen][0]
            raise MeshError(f"untagged boundary edge {missing}")

        self.vertices = vertices
        self.triangles = triangles
        self.boundary_edges = oriented
        self.edge_tags = tag_ids
        self.tag_names = tuple(names)
        for arr in (self.vertices, self.triangles, self.boundary_edges, self.edge_tags):
            arr.flags.writeable = False
        if validate:
            self.validate()

    # -- derived data -----------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def boundary_vertices(self):
        return np.unique(self.boundary_edges)

    @property
    def loops(self):
        """Closed boundary loops as ordered vertex-index arrays.

        Each loop starts at its smallest vertex index and follows the edge
        orientation (domain on the left).
        """
        if not hasattr(self, "_loops"):
            nxt = {int(a): int(b) for a, b in self.boundary_edges}
            left = set(nxt)
            loops = []
            while left:
                start = min(left)
                loop = [start]
                left.discard(start)
                v = nxt[start]
                while v != start:
                    if v not in left:
                        raise MeshError(f"boundary loop through vertex {v} is not closed")
                    loop.append(v)
                    left.discard(v)
                    v = nxt[v]
                loops.append(np.array(loop, dtype=np.int64))
            object.__setattr__(self, "_loops", loops)
        return self._loops

    def tag_id(self, name):
        try:
            return self.tag_names.index(name)
        except ValueError:
            raise KeyError(f"unknown tag {name!r}") from None

    def validate(self):
        """Check every invariant; raise :class:`MeshError` on the first failure."""
        area = signed_areas(self.vertices, self.triangles)
        bad = np.nonzero(area <= 0.0)[0]
        if len(bad):
            i = int(bad[0])
            kind = "negative" if area[i] < 0 else "zero"
            raise MeshError(f"{kind} signed area at triangle {i}")
        used = np.zeros(self.n_vertices, dtype=bool)
        used[self.triangles.ravel()] = True
        if not used.all():
            raise MeshError(f"vertex {int(np.argmin(used))} is not used by any triangle")
        bset = set(self.boundary_vertices.tolist())
        for name, v in self.tracked_points.items():
            if int(v) not in bset:
                raise MeshError(f"tracked point {name!r} (vertex {v}) is not on the boundary")
        out_deg = np.bincount(self.boundary_edges[:, 0], minlength=self.n_vertices)
        in_deg = np.bincount(self.boundary_edges[:, 1], minlength=self.n_vertices)
        bad = np.nonzero((out_deg != in_deg) | (out_deg > 1))[0]
        if len(bad):
            raise MeshError(f"boundary is not a set of simple closed loops at vertex {int(bad[0])}")
        self.loops  # noqa: B018 - closure check
        _check_no_self_intersection(self.vertices, self.boundary_edges[:, 0],
                                    self.boundary_edges[:, 1])

    def with_vertices(self, vertices):
        """Same topology and tags at new vertex positions (no validation)."""
        new = object.__new__(Mesh2D)
        new.vertices = np.array(vertices, dtype=float).reshape(-1, 2)
        new.vertices.flags.writeable = False
        new.triangles = self.triangles
        new.boundary_edges = self.boundary_edges
        new.edge_tags = self.edge_tags
        new.tag_names = self.tag_names
        new.tracked_points = dict(self.tracked_points)
        if hasattr(self, "_loops"):
            new._loops = self._loops
        return new

    def areas(self):
        return signed_areas(self.vertices, self.triangles)

    def boundary_polyline(self):
        """Boundary loops of this mesh as a :class:`BoundaryPolyline`."""
        tag_of = {(int(a), int(b)): int(t) for (a, b), t in zip(self.boundary_edges, self.edge_tags)}
        loops, tags = [], []
        for loop in self.loops:
            loops.append(self.vertices[loop])
            nxt = np.roll(loop, -1)
            tags.append(np.array([tag_of[(int(a), int(b))] for a, b in zip(loop, nxt)], dtype=np.int64))
        tracked = {k: self.vertices[v].copy() for k, v in self.tracked_points.items()}
        return BoundaryPolyline(tuple(loops), tuple(tags), self.tag_names, tracked)

    def boundary_length(self):
        d = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        return float(np.hypot(d[:, 0], d[:, 1]).sum())

    def __eq__(self, other):
        if not isinstance(other, Mesh2D):
            return NotImplemented
        return (np.array_equal(self.vertices, other.vertices)
                and np.array_equal(self.triangles, other.triangles)
                and np.array_equal(self.boundary_edges, other.boundary_edges)
                and [self.tag_names[t] for t in self.edge_tags]
                == [other.tag_names[t] for t in other.edge_tags]
                and self.tracked_points == other.tracked_points)

    __hash__ = None

    def __repr__(self):
        return (f"Mesh2D({self.n_vertices} vertices, {len(self.triangles)} triangles, "
                f"tags={list(self.tag_names)})")


# -- I/O ------------------------------------------------------------------

def _fmt(x):
    return format(float(x), ".17g")


def mesh_to_json_text(mesh):
    verts = ",".join(f"[{_fmt(x)},{_fmt(y)}]" for x, y in mesh.vertices)
    tris = ",".join(f"[{a},{b},{c}]" for a, b, c in mesh.triangles)
    edges = ",".join(f"[{a},{b},{json.dumps(mesh.tag_names[t])}]"
                     for (a, b), t in zip(mesh.boundary_edges, mesh.edge_tags))
    tracked = json.dumps({k: int(v) for k, v in sorted(mesh.tracked_points.items())})
    return (f'{{"vertices":[{verts}],"triangles":[{tris}],'
            f'"boundary_edges":[{edges}],"tracked_points":{tracked}}}\n')


def save_mesh(mesh, path):
    """Write the JSON mesh schema, coordinates with 17 significant digits."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(mesh_to_json_text(mesh))


def mesh_from_json(doc):
    try:
        edges = doc["boundary_edges"]
        return Mesh2D(doc["vertices"], doc["triangles"],
                      [e[:2] for e in edges], [e[2] for e in edges],
                      doc.get("tracked_points", {}))
    except (KeyError, TypeError, IndexError) as exc:
        raise MeshError(f"malformed mesh document: {exc}") from exc


def load_mesh(path):
    """Read and fully validate a JSON mesh file."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MeshError(f"cannot parse {path}: {exc}") from exc
    return mesh_from_json(doc)


def save_polyline(poly, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(poly.to_json()) + "\n")


def load_target(path):
    """Target boundary from either a mesh file or a polyline file."""
    doc = json.loads(Path(path).read_text())
    if "loops" in doc:
        poly = BoundaryPolyline.from_json(doc)
        poly.validate()
        return poly
    return mesh_from_json(doc).boundary_polyline()


def export_vtk(mesh, path, point_data=None, cell_data=None):
    """Legacy ASCII VTK unstructured grid; 2-vectors are padded to 3D."""
    lines = ["# vtk DataFile Version 3.0", "morphrom mesh", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n_vertices} double"]
    lines += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.vertices]
    nt = len(mesh.triangles)
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt

    def block(data, n):
        out = []
        for name, arr in (data or {}).items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 2 and arr.shape[1] == 2:
                out.append(f"VECTORS {name} double")
                out += [f"{_fmt(a)} {_fmt(b)} 0" for a, b in arr]
            elif arr.ndim == 1 and len(arr) == n:
                out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                out += [_fmt(a) for a in arr]
            else:
                raise ValueError(f"field {name!r} has shape {arr.shape}")
        return out

    if point_data:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        lines += block(point_data, mesh.n_vertices)
    if cell_data:
        lines.append(f"CELL_DATA {nt}")
        lines += block(cell_data, nt)
    Path(path).write_text("\n".join(lines) + "\n")


# -- generators -----------------------------------------------------------

def _graded_layers(length, first, last, min_layers=2):
    """Normalised 0..1 stations whose first step is ``first/length`` and which
    grow geometrically towards ``last``."""
    if last <= first * 1.2:
        n = max(min_layers, math.ceil(length / first))
        return np.linspace(0.0, 1.0, n + 1)
    last = min(last, 0.5 * length)
    q = (length - first) / (length - last)
    n = max(min_layers, int(round(1 + math.log(last / first) / math.log(q))))
    s1 = first / length
    if s1 * n >= 1.0:
        return np.linspace(0.0, 1.0, n + 1)
    q = brentq(lambda r: (r - 1.0) / (r ** n - 1.0) - s1, 1.0 + 1e-12, 100.0)
    s = (q ** np.arange(n + 1) - 1.0) / (q ** n - 1.0)
    s[-1] = 1.0
    return s


def _quads_to_triangles(idx):
    """Split a structured ``(nj, ni)`` node-index grid into triangles with an
    alternating diagonal."""
    a = idx[:-1, :-1]
    b = idx[1:, :-1]
    c = idx[1:, 1:]
    d = idx[:-1, 1:]
    nj, ni = a.shape
    parity = (np.add.outer(np.arange(nj), np.arange(ni)) % 2).astype(bool)
    t1 = np.where(parity[..., None], np.stack([a, b, c], -1), np.stack([a, b, d], -1))
    t2 = np.where(parity[..., None], np.stack([a, c, d], -1), np.stack([b, c, d], -1))
    return np.concatenate([t1.reshape(-1, 3), t2.reshape(-1, 3)])


def _orient_ccw(vertices, tris):
    area = signed_areas(vertices, tris)
    flip = area < 0
    tris = tris.copy()
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


def _mesh_from_triangles(vertices, tris, tag_fn, tracked):
    bdir, _ = _boundary_from_triangles(tris)
    tags = [tag_fn(int(a), int(b)) for a, b in bdir]
    order = np.lexsort((bdir[:, 1], bdir[:, 0]))
    return Mesh2D(vertices, tris, bdir[order], [tags[k] for k in order], tracked)


def synth_plate(R, h):
    """Square ``[-1, 1]^2`` with half-disk notches of radius ``R`` at ``(+-1, 0)``.

    Each half of the plate is one structured block of straight rays from the
    notch centre to the outer square, graded from ``h`` at the arc. Rays from
    a point of a convex set never cross, so every triangle is valid.
    Tags: ``arc_left``, ``arc_right``, ``wall_top``, ``wall_bottom``;
    tracked points are the four arc/wall junctions.
    """
    if not 0.0 < R < 1.0:
        raise ValueError(f"radius must lie in (0, 1), got {R}")
    if h <= 0.0:
        raise ValueError(f"edge length must be positive, got {h}")
    n_arc = max(8, math.ceil(math.pi * R / h))
    k = max(2, math.ceil(n_arc / 4))
    if 4 * k > 4000:
        raise ValueError("edge length too small for this radius")
    nj = 4 * k
    theta = np.pi / 2 + np.pi * np.arange(nj + 1) / nj
    inner = np.stack([1.0 + R * np.cos(theta), R * np.sin(theta)], axis=1)
    inner[0] = (1.0, R)
    inner[2 * k] = (1.0 - R, 0.0)
    inner[nj] = (1.0, -R)
    outer = np.empty_like(inner)
    for j, th in enumerate(theta):
        c, s = math.cos(th), math.sin(th)
        if j <= k:
            outer[j] = (1.0 + c / s, 1.0)
        elif j < 3 * k:
            outer[j] = (0.0, -s / c)
        else:
            outer[j] = (1.0 - c / s, -1.0)
    outer[0] = (1.0, 1.0)
    outer[k] = (0.0, 1.0)
    outer[2 * k] = (0.0, 0.0)
    outer[3 * k] = (0.0, -1.0)
    outer[nj] = (1.0, -1.0)
    lengths = np.hypot(*(outer - inner).T)
    stations = _graded_layers(float(lengths.mean()), h, 1.0 / k)
    ni = len(stations) - 1
    s = stations[None, :, None]
    right = (1.0 - s) * inner[:, None, :] + s * outer[:, None, :]  # (nj+1, ni+1, 2)

    # right half nodes, then left-half mirrors excluding the shared x=0 nodes
    idx_r = np.arange((nj + 1) * (ni + 1)).reshape(nj + 1, ni + 1)
    verts = [right.reshape(-1, 2)]
    idx_l = np.empty_like(idx_r)
    shared = np.zeros_like(idx_r, dtype=bool)
    shared[k:3 * k + 1, ni] = True
    idx_l[shared] = idx_r[shared]
    n_new = int((~shared).sum())
    base = idx_r.size
    idx_l[~shared] = base + np.arange(n_new)
    left = right.copy()
    left[..., 0] *= -1.0
    verts.append(left[~shared])
    vertices = np.concatenate(verts)
    vertices[vertices[:, 0] == 0.0, 0] = 0.0  # drop negative zeros
    tris = np.concatenate([_quads_to_triangles(idx_r), _quads_to_triangles(idx_l)])
    tris = _orient_ccw(vertices, tris)

    arc_r = set(idx_r[:, 0].tolist())
    arc_l = set(idx_l[:, 0].tolist())

    def tag(a, b):
        if a in arc_r and b in arc_r:
            return "arc_right"
        if a in arc_l and b in arc_l:
            return "arc_left"
        return "wall_top" if vertices[a, 1] + vertices[b, 1] > 0 else "wall_bottom"

    tracked = {
        "junction_right_top": int(idx_r[0, 0]),
        "junction_right_bottom": int(idx_r[nj, 0]),
        "junction_left_top": int(idx_l[0, 0]),
        "junction_left_bottom": int(idx_l[nj, 0]),
    }
    return _mesh_from_triangles(vertices, tris, tag, tracked)


def _plate_loop(notch_right, notch_left):
    """CCW plate boundary loop given the two notch polylines, each listed
    from its bottom junction to its top junction."""
    pts, tags = [], []

    def add(p, t):
        pts.append(p)
        tags.append(t)

    add((-1.0, -1.0), "wall_bottom")
    add((1.0, -1.0), "wall_bottom")
    for p in notch_right[:-1]:
        add(tuple(p), "arc_right")
    add(tuple(notch_right[-1]), "wall_top")
    add((1.0, 1.0), "wall_top")
    add((-1.0, 1.0), "wall_top")
    for p in notch_left[::-1][:-1]:
        add(tuple(p), "arc_left")
    add(tuple(notch_left[0]), "wall_bottom")
    return np.asarray(pts), tags


def plate_polyline(R, n_arc=256):
    """Boundary of ``synth_plate(R, .)`` with ``n_arc`` segments per notch."""
    if not 0.0 < R < 1.0:
        raise ValueError(f"radius must lie in (0, 1), got {R}")
    th = -np.pi / 2 - np.pi * np.arange(n_arc + 1) / n_arc  # bottom -> top through x=1-R
    right = np.stack([1.0 + R * np.cos(th), R * np.sin(th)], axis=1)
    right[0] = (1.0, -R)
    right[-1] = (1.0, R)
    right[n_arc // 2] = (1.0 - R, 0.0) if n_arc % 2 == 0 else right[n_arc // 2]
    left = right * np.array([-1.0, 1.0])
    pts, tags = _plate_loop(right, left)
    tracked = {"junction_right_top": (1.0, R), "junction_right_bottom": (1.0, -R),
               "junction_left_top": (-1.0, R), "junction_left_bottom": (-1.0, -R)}
    return BoundaryPolyline.from_named([pts], [tags], tracked)


def square_notch_polyline(s, n_side=32):
    """Plate with square notches of half-width ``s`` (same tags as the plate)."""
    if not 0.0 < s < 1.0:
        raise ValueError(f"half-width must lie in (0, 1), got {s}")
    t = np.linspace(0.0, 1.0, n_side + 1)
    a, b, c, d = (1.0, -s), (1.0 - s, -s), (1.0 - s, s), (1.0, s)
    legs = [np.outer(1 - t, p) + np.outer(t, q) for p, q in ((a, b), (b, c), (c, d))]
    right = np.concatenate([legs[0][:-1], legs[1][:-1], legs[2]])
    left = right * np.array([-1.0, 1.0])
    pts, tags = _plate_loop(right, left)
    tracked = {"junction_right_top": (1.0, s), "junction_right_bottom": (1.0, -s),
               "junction_left_top": (-1.0, s), "junction_left_bottom": (-1.0, -s)}
    return BoundaryPolyline.from_named([pts], [tags], tracked)


def naca4(m, p, t, n):
    """Upper and lower NACA 4-digit surfaces with a closed trailing edge.

    Returns two ``(n + 1, 2)`` arrays ordered from the leading edge ``(0, 0)``
    to the trailing edge ``(1, 0)``, cosine-spaced in x.
    """
    if not 0.0 <= m <= 0.09:
        raise ValueError(f"camber {m} outside [0, 0.09]")
    if not 0.1 <= p <= 0.9:
        raise ValueError(f"camber position {p} outside [0.1, 0.9]")
    if not 0.06 <= t <= 0.18:
        raise ValueError(f"degenerate thickness {t}: expected [0.06, 0.18]")
    x = 0.5 * (1.0 - np.cos(np.linspace(0.0, np.pi, n + 1)))
    yt = 5 * t * (0.2969 * np.sqrt(x) - 0.1260 * x - 0.3516 * x ** 2
                  + 0.2843 * x ** 3 - 0.1036 * x ** 4)
    fore = x < p
    yc = np.where(fore, m / p ** 2 * (2 * p * x - x ** 2),
                  m / (1 - p) ** 2 * ((1 - 2 * p) + 2 * p * x - x ** 2))
    dyc = np.where(fore, 2 * m / p ** 2 * (p - x), 2 * m / (1 - p) ** 2 * (p - x))
    th = np.arctan(dyc)
    upper = np.stack([x - yt * np.sin(th), yc + yt * np.cos(th)], axis=1)
    lower = np.stack([x + yt * np.sin(th), yc - yt * np.cos(th)], axis=1)
    for surf in (upper, lower):
        surf[0] = (0.0, 0.0)
        surf[-1] = (1.0, 0.0)
    return upper, lower


def airfoil_loop(m, p, t, n_boundary):
    """Closed airfoil loop, CCW starting at the trailing edge, with per-segment
    tags and the leading-edge index."""
    upper, lower = naca4(m, p, t, n_boundary)
    pts = np.concatenate([upper[::-1][:-1], lower[:-1]])  # TE -> upper -> LE -> lower
    tags = ["upper"] * n_boundary + ["lower"] * n_boundary
    return pts, tags, n_boundary


def airfoil_polyline(m, p, t, n_boundary=200, farfield_radius=5.0, n_far=None):
    """Target boundary of an airfoil domain (airfoil hole plus far-field circle)."""
    wing, wtags, _ = airfoil_loop(m, p, t, n_boundary)
    n_far = n_far or 2 * n_boundary
    ang = 2 * np.pi * np.arange(n_far) / n_far
    far = np.stack([0.5 + farfield_radius * np.cos(ang), farfield_radius * np.sin(ang)], axis=1)
    tracked = {"leading_edge": (0.0, 0.0), "trailing_edge": (1.0, 0.0)}
    # holes run clockwise so the domain stays on the left
    return BoundaryPolyline.from_named(
        [far, wing[::-1]], [["farfield"] * n_far, _reverse_tags(wtags)], tracked)


def _reverse_tags(tags):
    # segment j of the reversed loop joins points j and j+1 of the reversed list,
    # i.e. original segment (-2 - j) mod n
    n = len(tags)
    return [tags[(-2 - j) % n] for j in range(n)]


def synth_airfoil(m, p, t, n_boundary=24, farfield_radius=5.0, first_layer=None):
    """O-type triangulated annulus between a NACA 4-digit airfoil and a far-field
    circle centred at ``(0.5, 0)``.

    ``n_boundary`` segments per wing surface. Grid lines run straight from each
    wing node to a far-field node at the matching loop fraction, with geometric
    grading away from the wing. Tags ``upper``, ``lower``, ``farfield``; tracked
    points ``leading_edge`` and ``trailing_edge``.
    """
    if farfield_radius < 5.0:
        raise ValueError(f"far-field radius must be >= 5, got {farfield_radius}")
    if n_boundary < 8:
        raise ValueError("n_boundary must be at least 8")
    wing, _, i_le = airfoil_loop(m, p, t, n_boundary)
    nw = len(wing)
    seg = np.hypot(*(np.roll(wing, -1, axis=0) - wing).T)
    poly = BoundaryPolyline.from_named([wing], [["w"] * nw])
    poly.validate()
    ang = 2 * np.pi * np.arange(nw) / nw
    far = np.stack([0.5 + farfield_radius * np.cos(ang), farfield_radius * np.sin(ang)], axis=1)
    first = first_layer if first_layer is not None else 0.5 * float(seg.mean())
    stations = _graded_layers(farfield_radius, first, 2 * np.pi * farfield_radius / nw)
    ni = len(stations) - 1
    s = stations[None, :, None]
    grid = (1.0 - s) * wing[:, None, :] + s * far[:, None, :]  # (nw, ni+1, 2)
    vertices = grid.reshape(-1, 2)
    idx = np.arange(nw * (ni + 1)).reshape(nw, ni + 1)
    idx_closed = np.concatenate([idx, idx[:1]], axis=0)
    tris = _orient_ccw(vertices, _quads_to_triangles(idx_closed))
    if np.any(signed_areas(vertices, tris) <= 0):
        raise MeshError("airfoil O-mesh has degenerate cells; increase n_boundary")
    wing_nodes = set(idx[:, 0].tolist())
    upper_nodes = set(idx[:i_le + 1, 0].tolist())

    def tag(a, b):
        if a in wing_nodes and b in wing_nodes:
            return "upper" if a in upper_nodes and b in upper_nodes else "lower"
        return "farfield"

    tracked = {"leading_edge": int(idx[i_le, 0]), "trailing_edge": int(idx[0, 0])}
    return _mesh_from_triangles(vertices, tris, tag, tracked)


# -- quality and interpolation -------------------------------------------

@dataclass(frozen=True)
class QualityReport:
    per_element: np.ndarray
    mask: np.ndarray

    @property
    def max(self):
        return float(self.per_element[self.mask].max())


def shape_regularity(mesh, mask=None):
    """Cell diameter over shortest edge for every triangle (>= 1)."""
    v = mesh.vertices
    t = mesh.triangles
    e = np.stack([v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 1]], v[t[:, 0]] - v[t[:, 2]]], 1)
    lens = np.hypot(e[..., 0], e[..., 1])
    ratio = lens.max(axis=1) / lens.min(axis=1)
    if mask is None:
        mask = np.ones(len(t), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty element mask")
    return QualityReport(ratio, mask)


def elements_touching_tags(mesh, tags):
    """Mask of triangles that have a vertex on one of the given tagged lines."""
    ids = [mesh.tag_id(t) for t in tags]
    sel = np.isin(mesh.edge_tags, ids)
    nodes = np.zeros(mesh.n_vertices, dtype=bool)
    nodes[mesh.boundary_edges[sel].ravel()] = True
    return nodes[mesh.triangles].any(axis=1)


@dataclass(frozen=True)
class InterpolationResult:
    values: np.ndarray
    positive: bool
    n_extrapolated: int


def interpolate_morphing(coarse, displacement, fine, tol=1e-8):
    """P1 interpolation of a nodal displacement from ``coarse`` onto the vertices
    of ``fine``.

    Fine vertices outside the coarse domain by less than ``tol`` are evaluated
    with the linear extension of the nearest coarse triangle. ``positive``
    reports whether the morphed fine mesh keeps every triangle positive.
    """
    from scipy.spatial import cKDTree

    displacement = np.asarray(displacement, dtype=float).reshape(-1, 2)
    v = coarse.vertices
    t = coarse.triangles
    p0 = v[t[:, 0]]
    e1 = v[t[:, 1]] - p0
    e2 = v[t[:, 2]] - p0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    centroids = v[t].mean(axis=1)
    radius = np.max(np.hypot(*(v[t] - centroids[:, None, :]).transpose(2, 0, 1)), axis=1)
    tree = cKDTree(centroids)
    rmax = float(radius.max())
    x = fine.vertices
    out = np.empty((len(x), 2))
    n_ext = 0
    _, near = tree.query(x, k=min(8, len(t)))
    near = np.atleast_2d(near)
    for i, q in enumerate(x):
        cands = near[i]
        found = _locate(q, cands, p0, e1, e2, det)
        if found is None:
            d, _ = tree.query(q)
            cands = np.asarray(tree.query_ball_point(q, d + rmax + tol), dtype=np.int64)
            found = _locate(q, cands, p0, e1, e2, det)
        if found is None:
            # distance from q to each candidate triangle
            dist = np.array([_point_triangle_distance(q, v[t[c]]) for c in cands])
            c = int(cands[np.argmin(dist)])
            if dist.min() > tol:
                raise ValueError(f"fine vertex {i} lies {dist.min():.3g} outside the coarse domain")
            n_ext += 1
            found = (c, _barycentric(q, p0[c], e1[c], e2[c], det[c]))
        c, lam = found
        out[i] = lam @ displacement[t[c]]
    positive = bool(np.all(signed_areas(x + out, fine.triangles) > 0))
    return InterpolationResult(out, positive, n_ext)


def _barycentric(q, p0, e1, e2, det):
    d = q - p0
    l1 = (d[0] * e2[1] - d[1] * e2[0]) / det
    l2 = (e1[0] * d[1] - e1[1] * d[0]) / det
    return np.array([1.0 - l1 - l2, l1, l2])


def _locate(q, cands, p0, e1, e2, det, eps=1e-12):
    best = None
    for c in cands:
        lam = _barycentric(q, p0[c], e1[c], e2[c], det[c])
        if lam.min() >= -eps:
            if best is None or lam.min() > best[1].min():
                best = (int(c), lam)
    return best


def _point_triangle_distance(q, tri):
    lam = _barycentric(q, tri[0], tri[1] - tri[0], tri[2] - tri[0],
                       (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1])
                       - (tri[1, 1] - tri[0, 1]) * (tri[2, 0] - tri[0, 0]))
    if lam.min() >= 0:
        return 0.0
    best = np.inf
    for a, b in ((0, 1), (1, 2), (2, 0)):
        ab = tri[b] - tri[a]
        s = np.clip(np.dot(q - tri[a], ab) / np.dot(ab, ab), 0.0, 1.0)
        best = min(best, float(np.hypot(*(tri[a] + s * ab - q))))
    return best
