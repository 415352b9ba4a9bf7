"""Exact distance queries against tagged target polylines.

Closest points are searched with a KD-tree over the midpoints of short
pieces of the segments. Since ``dist(x, piece) >= |x - mid| - L/2``, a
candidate set is accepted only once the k-th nearest piece is provably
farther than the best candidate; otherwise k grows. Results therefore equal
an exhaustive scan. Ties go to the lowest segment id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .instrument import bump
from .mesh import BoundaryPolyline, Mesh2D

SAMPLINGS = ("nodes_only", "nodes_plus_9")


def point_segment(x, a, b):
    """Closest points and distances between points ``x`` and segments ``a-b``
    (broadcasting over leading axes)."""
    ab = b - a
    denom = np.einsum("...i,...i->...", ab, ab)
    t = np.einsum("...i,...i->...", x - a, ab) / denom
    t = np.clip(t, 0.0, 1.0)
    p = a + t[..., None] * ab
    d = np.hypot(x[..., 0] - p[..., 0], x[..., 1] - p[..., 1])
    return p, d


class _Bucket:
    """Segments of one tag (or of the whole polyline) with a midpoint tree."""

    def __init__(self, seg_ids, a, b):
        self.ids = np.asarray(seg_ids, dtype=np.int64)
        self.a = a
        self.b = b
        # long segments are split into pieces so the midpoint bound stays tight;
        # each tree point remembers its parent segment
        L = np.hypot(*(b - a).T)
        h = float(np.median(L))
        pieces = np.maximum(1, np.ceil(L / h).astype(np.int64))
        parent = np.repeat(np.arange(len(L)), pieces)
        start = np.cumsum(pieces) - pieces
        j = np.arange(len(parent)) - start[parent]
        s = (j + 0.5) / pieces[parent]
        mid = a[parent] + s[:, None] * (b - a)[parent]
        self.parent = parent
        self.tree = cKDTree(mid)
        self.halflen = float((0.5 * L / pieces).max())

    def closest(self, x, k=8):
        """Closest points of ``x`` (n, 2) over this bucket: (points, dist, local index).

        Candidate sets grow (k, 4k, 16k, ..., all) until the midpoint bound
        proves that no segment outside the set can be as close.
        """
        n = len(x)
        m = len(self.parent)
        best_p = np.empty((n, 2))
        best_d = np.empty(n)
        best_i = np.empty(n, dtype=np.int64)
        todo = np.arange(n)
        while len(todo):
            k = min(k, m)
            xs = x[todo]
            mid_dist, near = self.tree.query(xs, k=k)
            mid_dist = mid_dist.reshape(len(todo), k)
            cand = np.sort(self.parent[near.reshape(len(todo), k)], axis=1)  # ties -> lowest id
            p, d = point_segment(xs[:, None, :], self.a[cand], self.b[cand])
            j = np.argmin(d, axis=1)
            rows = np.arange(len(todo))
            best_d[todo] = d[rows, j]
            best_p[todo] = p[rows, j]
            best_i[todo] = cand[rows, j]
            if k == m:
                break
            # any other segment is at least |x - mid| - halflen away
            bound = mid_dist[:, -1] - self.halflen
            slack = 1e-12 * (1.0 + np.abs(xs).max(axis=1))
            todo = todo[bound <= d[rows, j] + slack]
            k *= 4
        return best_p, best_d, best_i


@dataclass(frozen=True)
class VectorDistanceSample:
    """Projection of query points onto their tag's target line."""

    x: np.ndarray
    tag: np.ndarray
    proj: np.ndarray
    segment: np.ndarray

    @property
    def D(self):
        return self.proj - self.x

    @property
    def distance(self):
        D = self.D
        return np.hypot(D[..., 0], D[..., 1])


class BoundaryIndex:
    """Immutable search structure over a :class:`BoundaryPolyline`."""

    def __init__(self, target: BoundaryPolyline):
        segs, tags = target.segments
        if len(segs) == 0:
            raise ValueError("empty polyline")
        self.target = target
        self.a = np.ascontiguousarray(segs[:, 0])
        self.b = np.ascontiguousarray(segs[:, 1])
        self.seg_tags = tags
        self.tag_names = target.tag_names
        self._all = _Bucket(np.arange(len(segs)), self.a, self.b)
        self._buckets = {}
        for t, name in enumerate(self.tag_names):
            ids = np.nonzero(tags == t)[0]
            if len(ids):
                self._buckets[name] = _Bucket(ids, self.a[ids], self.b[ids])
        self._junctions = target.junctions()

    @property
    def n_segments(self):
        return len(self.a)

    def _bucket(self, tag):
        try:
            return self._buckets[tag]
        except KeyError:
            raise KeyError(f"unknown tag {tag!r}") from None

    def project(self, x, tag):
        """Closest point of ``x`` on the closure of line ``tag``.

        ``x`` may be a single point or an ``(n, 2)`` array.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xs = np.atleast_2d(x)
        bucket = self._bucket(tag)
        p, _, i = bucket.closest(xs)
        bump("distance_queries", len(xs))
        tag_id = self.tag_names.index(tag)
        out = VectorDistanceSample(xs, np.full(len(xs), tag_id), p, bucket.ids[i])
        if single:
            return VectorDistanceSample(out.x[0], out.tag[0], out.proj[0], out.segment[0])
        return out

    def project_tagged(self, x, tag_ids):
        """Vectorised :meth:`project` where every point carries its own tag id."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        tag_ids = np.asarray(tag_ids, dtype=np.int64)
        proj = np.empty_like(x)
        seg = np.empty(len(x), dtype=np.int64)
        for t in np.unique(tag_ids):
            sel = tag_ids == t
            bucket = self._bucket(self.tag_names[t])
            p, _, i = bucket.closest(x[sel])
            proj[sel] = p
            seg[sel] = bucket.ids[i]
        bump("distance_queries", len(x))
        return VectorDistanceSample(x, tag_ids, proj, seg)

    def unsigned_distance(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        _, d, _ = self._all.closest(x)
        bump("distance_queries", len(x))
        return d

    def signed_distance_clustered(self, pts, centers, radii):
        """Signed distance of point clusters ``pts[g]`` (G, q, 2), each contained
        in the disk ``(centers[g], radii[g])``.

        Only segments within ``d(center) + 2 radius`` of a centre can be
        closest to a point of its cluster, so each cluster is scanned against
        that short candidate list; values equal :meth:`signed_distance`.
        """
        pts = np.asarray(pts, dtype=float)
        G, q, _ = pts.shape
        bucket = self._all
        _, dc, _ = bucket.closest(centers)
        reach = dc + 2.0 * radii + bucket.halflen
        reach = reach + 1e-12 * (1.0 + np.abs(centers).max(axis=1) + reach)
        balls = bucket.tree.query_ball_point(centers, reach)
        d = np.empty((G, q))
        for g in range(G):
            cand = np.unique(bucket.parent[np.asarray(balls[g], dtype=np.int64)])
            _, dd = point_segment(pts[g][:, None, :], self.a[cand][None], self.b[cand][None])
            d[g] = dd.min(axis=1)
        bump("distance_queries", G * q)
        flat = pts.reshape(-1, 2)
        s = np.where(self.inside(flat), -d.ravel(), d.ravel())
        s[d.ravel() == 0.0] = 0.0
        return s.reshape(G, q)

    def inside(self, x):
        """Odd number of loops with nonzero winding number around ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        count = np.zeros(len(x), dtype=np.int64)
        for loop in self.target.loops:
            count += winding_number(loop, x) != 0
        return count % 2 == 1

    def signed_distance(self, x):
        """Signed distance, negative inside the target domain."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xs = np.atleast_2d(x)
        d = self.unsigned_distance(xs)
        s = np.where(self.inside(xs), -d, d)
        s[d == 0.0] = 0.0
        return float(s[0]) if single else s

    def junction_point(self, tag_a, tag_b, near):
        """Target junction between two tags that is closest to ``near``."""
        pts = self._junctions.get(frozenset((tag_a, tag_b)))
        if pts is None:
            raise KeyError(f"target has no junction between {tag_a!r} and {tag_b!r}")
        d = np.hypot(*(pts - near).T)
        return pts[int(np.argmin(d))]


def winding_number(loop, x, chunk=4096):
    """Winding number of a closed polyline around each query point."""
    a = loop
    b = np.roll(loop, -1, axis=0)
    out = np.zeros(len(x), dtype=np.int64)
    if len(x) * len(a) > 2_000_000:
        # sweep: each segment only tests the queries inside its y-band
        order = np.argsort(x[:, 1], kind="stable")
        ys = x[order, 1]
        lo = np.searchsorted(ys, np.minimum(a[:, 1], b[:, 1]), side="left")
        hi = np.searchsorted(ys, np.maximum(a[:, 1], b[:, 1]), side="right")
        acc = np.zeros(len(x), dtype=np.int64)
        for s in np.nonzero(hi > lo)[0]:
            q = x[order[lo[s]:hi[s]]]
            ay = a[s, 1] - q[:, 1]
            by = b[s, 1] - q[:, 1]
            cross = (a[s, 0] - q[:, 0]) * by - (b[s, 0] - q[:, 0]) * ay
            acc[lo[s]:hi[s]] += (((ay <= 0) & (by > 0) & (cross > 0)).astype(np.int64)
                                 - ((ay > 0) & (by <= 0) & (cross < 0)))
        out[order] = acc
        return out
    for s in range(0, len(x), chunk):
        q = x[s:s + chunk, None, :]
        ay = a[None, :, 1] - q[..., 1]
        by = b[None, :, 1] - q[..., 1]
        cross = ((a[None, :, 0] - q[..., 0]) * by - (b[None, :, 0] - q[..., 0]) * ay)
        up = (ay <= 0) & (by > 0) & (cross > 0)
        down = (ay > 0) & (by <= 0) & (cross < 0)
        out[s:s + chunk] = up.sum(axis=1) - down.sum(axis=1)
    return out


def build_index(target):
    if isinstance(target, Mesh2D):
        target = target.boundary_polyline()
    return BoundaryIndex(target)


def check_tags(mesh, index):
    missing = [t for t in mesh.tag_names if t not in index.tag_names]
    if missing:
        raise ValueError(f"tag mismatch: target has no line {missing[0]!r}")


def sample_points(mesh, sampling="nodes_only"):
    """Boundary sample points of a morphed mesh with the tag that owns each.

    Node samples appear once per incident edge (junction nodes therefore
    carry both tags). ``nodes_plus_9`` adds 9 evenly spaced interior points
    on every boundary edge.
    """
    if sampling not in SAMPLINGS:
        raise ValueError(f"sampling must be one of {SAMPLINGS}, got {sampling!r}")
    e = mesh.boundary_edges
    v = mesh.vertices
    pts = [v[e[:, 0]], v[e[:, 1]]]
    tags = [mesh.edge_tags, mesh.edge_tags]
    if sampling == "nodes_plus_9":
        for j in range(1, 10):
            s = j / 10.0
            pts.append((1 - s) * v[e[:, 0]] + s * v[e[:, 1]])
            tags.append(mesh.edge_tags)
    return np.concatenate(pts), np.concatenate(tags)


def _target_tag_ids(mesh, index, tag_ids):
    check_tags(mesh, index)
    remap = np.array([index.tag_names.index(t) for t in mesh.tag_names], dtype=np.int64)
    return remap[tag_ids]


def vector_distance_field(index, mesh, sampling="nodes_only"):
    """Own-tag projections of the morphed boundary samples (see :func:`sample_points`)."""
    x, tags = sample_points(mesh, sampling)
    return index.project_tagged(x, _target_tag_ids(mesh, index, tags))


def edge_vector_distance(index, mesh):
    """``(B, 2, 2)`` vector distance at both endpoints of every boundary edge,
    each endpoint projected on the line of that edge."""
    e = mesh.boundary_edges
    v = mesh.vertices
    B = len(e)
    samples = index.project_tagged(np.concatenate([v[e[:, 0]], v[e[:, 1]]]),
                                   _target_tag_ids(mesh, index, np.tile(mesh.edge_tags, 2)))
    return samples.D.reshape(2, B, 2).transpose(1, 0, 2)


def delta1(index, mesh, sampling="nodes_only"):
    """Largest |signed distance| over the boundary samples."""
    x, _ = sample_points(mesh, sampling)
    return float(np.abs(index.signed_distance(x)).max())


def delta2(index, mesh, sampling="nodes_only"):
    """Largest vector-distance norm over the boundary samples."""
    return float(vector_distance_field(index, mesh, sampling).distance.max())


def dump_csv(index, mesh, path):
    """Diagnostic table of node, tag and distance for every boundary sample."""
    s = vector_distance_field(index, mesh)
    e = mesh.boundary_edges
    nodes = np.concatenate([e[:, 0], e[:, 1]])
    rows = ["node,tag,distance"]
    rows += [f"{n},{index.tag_names[t]},{d:.17g}" for n, t, d in zip(nodes, s.tag, s.distance)]
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
