"""Specular propagation paths: LOS, image-method solving, candidate generation.

Candidate primitive sequences come either from exhaustive enumeration (all
sequences up to a cap) or from launching rays along a Fibonacci lattice and
recording the primitives each ray bounces off. For every candidate the image
method mirrors the transmitter across the primitive planes and back-solves
the interaction points so that the path arrives exactly at the receiver;
candidates failing the barycentric, same-side or occlusion checks are
dropped. Duplicates are removed, a possible LOS path is added, and the
result is deterministically ordered.

Path topology (which primitives, which paths) is frozen per call. Between
topology changes all geometric quantities are closed-form in the endpoint
positions, which is what :func:`solve_points` exposes for gradient work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import DiffScalar
from .bvh import RAY_EPS, Bvh
from .geometry import SPEED_OF_LIGHT, t_add, t_dot, t_scale, t_sub

ENUM_CAP = 10_000_000  # max primitive_count ** max_depth for exhaustive mode
DEFAULT_NUM_RAYS = 4096
MERGE_TOL = 1e-6  # meters; paths with all vertices this close are one path
_BARY_TOL = 1e-9
_SIDE_TOL = 1e-12


class TracerError(ValueError):
    pass


@dataclass(frozen=True)
class PropagationPath:
    """One specular (or LOS) path between a transmitter and a receiver."""

    tx: str
    rx: str
    kind: str  # "los" | "specular"
    seq: tuple  # primitive ids, one per interaction (empty for LOS)
    vertices: np.ndarray  # [order+2, 3]: tx, interactions..., rx
    length_m: float
    delay_s: float
    k_dep: np.ndarray  # unit departure direction (at tx)
    k_arr: np.ndarray  # unit arrival direction (propagation into rx)
    normals: np.ndarray  # [order, 3] unit, oriented against the incident segment
    cos_incidence: tuple  # per interaction

    @property
    def order(self) -> int:
        return len(self.seq)


@dataclass
class PathSet:
    scene: object
    max_depth: int
    method: str
    paths: list

    def between(self, tx_name: str, rx_name: str) -> list:
        return [p for p in self.paths if p.tx == tx_name and p.rx == rx_name]


def _mirror(p, n, c):
    """Mirror point across the plane with unit normal n and offset c."""
    return t_sub(p, t_scale(n, 2.0 * (t_dot(p, n) - c)))


def solve_points(tx, rx, planes):
    """Back-substituted interaction points for a candidate plane chain.

    ``planes`` is a list of (unit normal 3-tuple, offset). Returns
    (points, line_params) where points (tx side first) may be None when a
    segment runs parallel to its plane, and line_params are the segment
    fractions used for validity checks. Works on floats or tape scalars.
    """
    images = [tx]
    for n, c in planes:
        images.append(_mirror(images[-1], n, c))
    pts = [None] * len(planes)
    cur = rx
    params = [None] * len(planes)
    for k in range(len(planes) - 1, -1, -1):
        n, c = planes[k]
        target = images[k + 1]
        seg = t_sub(target, cur)
        denom = t_dot(seg, n)
        dval = denom.value if isinstance(denom, DiffScalar) else denom
        if abs(dval) < 1e-15:
            return None, None
        s = (c - t_dot(cur, n)) / denom
        pts[k] = t_add(cur, t_scale(seg, s))
        params[k] = s
        cur = pts[k]
    return pts, params


def path_from_points(tx_name, rx_name, seq, tx, rx, points, bvh: Bvh):
    """Assemble a PropagationPath from solved interaction points (floats)."""
    chain = [np.asarray(tx, dtype=np.float64)]
    chain += [np.asarray(p, dtype=np.float64) for p in points]
    chain.append(np.asarray(rx, dtype=np.float64))
    verts = np.stack(chain)
    segs = verts[1:] - verts[:-1]
    lens = np.linalg.norm(segs, axis=1)
    dirs = segs / lens[:, None]
    normals = np.zeros((len(seq), 3))
    cosines = []
    for k, prim in enumerate(seq):
        n = bvh.normals[prim]
        ci = -float(dirs[k] @ n)
        if ci < 0.0:
            n = -n
            ci = -ci
        normals[k] = n
        cosines.append(ci)
    total = float(lens.sum())
    return PropagationPath(
        tx=tx_name, rx=rx_name,
        kind="specular" if len(seq) else "los",
        seq=tuple(int(s) for s in seq),
        vertices=verts, length_m=total,
        delay_s=total / SPEED_OF_LIGHT,
        k_dep=dirs[0], k_arr=dirs[-1],
        normals=normals, cos_incidence=tuple(cosines),
    )


def _inside_triangle(bvh: Bvh, prim: int, p) -> bool:
    w = np.asarray(p) - bvh.v0[prim]
    e1, e2 = bvh.e1[prim], bvh.e2[prim]
    d11 = float(e1 @ e1)
    d12 = float(e1 @ e2)
    d22 = float(e2 @ e2)
    w1 = float(w @ e1)
    w2 = float(w @ e2)
    den = d11 * d22 - d12 * d12
    u = (d22 * w1 - d12 * w2) / den
    v = (d11 * w2 - d12 * w1) / den
    return u >= -_BARY_TOL and v >= -_BARY_TOL and u + v <= 1.0 + _BARY_TOL


def image_solve(tx_name, rx_name, tx_pos, rx_pos, seq, bvh: Bvh):
    """Image-method solve of one candidate sequence; None when invalid.

    Valid means: every interaction point lies inside its triangle, both
    neighbouring vertices sit on the same side of each reflecting plane,
    every segment crossing is a proper reflection (segment fraction in
    (0, 1)), and no segment is occluded.
    """
    tx = (float(tx_pos[0]), float(tx_pos[1]), float(tx_pos[2]))
    rx = (float(rx_pos[0]), float(rx_pos[1]), float(rx_pos[2]))
    planes = [(tuple(bvh.normals[p]), float(bvh.plane_offset[p])) for p in seq]
    points, params = solve_points(tx, rx, planes)
    if points is None:
        return None
    for s in params:
        if not (1e-12 < s < 1.0 - 1e-12):
            return None
    for k, prim in enumerate(seq):
        if not _inside_triangle(bvh, prim, points[k]):
            return None
    # reflection, not transmission: both neighbours on the same plane side
    chain = [tx] + points + [rx]
    for k, (n, c) in enumerate(planes):
        before = t_dot(chain[k], n) - c
        after = t_dot(chain[k + 2], n) - c
        if before * after <= _SIDE_TOL:
            return None
    for a, b in zip(chain[:-1], chain[1:]):
        d = math.dist(a, b)
        if d <= 2 * RAY_EPS:
            return None
        if bvh.occluded(a, b):
            return None
    return path_from_points(tx_name, rx_name, seq, tx, rx, points, bvh)


def los_path(scene, bvh: Bvh, tx_dev, rx_dev):
    """LOS path between two devices, or None when the segment is blocked."""
    if np.allclose(tx_dev.position, rx_dev.position):
        raise TracerError(f"tx {tx_dev.name!r} and rx {rx_dev.name!r} coincide")
    if bvh.num_prims and bvh.occluded(tx_dev.position, rx_dev.position):
        return None
    return path_from_points(tx_dev.name, rx_dev.name, (), tx_dev.position,
                            rx_dev.position, [], bvh)


def enumerate_candidates(bvh: Bvh, max_depth: int, cap: int = ENUM_CAP):
    """All primitive sequences of length 1..max_depth, no immediate repeats."""
    if max_depth < 1:
        raise TracerError("max_depth must be >= 1 for candidate enumeration")
    n = bvh.num_prims
    if n == 0:
        return []
    if n ** max_depth > cap:
        raise TracerError(
            f"exhaustive enumeration of {n} primitives at depth {max_depth} "
            f"exceeds the cap of {cap:.0e} sequences; use the fibonacci "
            "ray-launching method instead")
    out = []
    frontier = [(p,) for p in range(n)]
    out.extend(frontier)
    for _ in range(max_depth - 1):
        frontier = [s + (p,) for s in frontier for p in range(n) if p != s[-1]]
        out.extend(frontier)
    return out


def launch_candidates(scene, bvh: Bvh, tx_pos, max_depth: int,
                      num_rays: int = DEFAULT_NUM_RAYS):
    """Candidate sequences hit by Fibonacci-lattice rays from ``tx_pos``.

    Every prefix of each ray's bounce history is collected, so lower-order
    candidates along a deep ray are found too.
    """
    from .geometry import fibonacci_directions

    if num_rays < 1 or max_depth < 1:
        raise TracerError("need num_rays >= 1 and max_depth >= 1")
    found = set()
    if bvh.num_prims == 0:
        return found
    origin0 = np.asarray(tx_pos, dtype=np.float64)
    for d in fibonacci_directions(num_rays):
        origin = origin0
        direction = d
        seq = ()
        for _ in range(max_depth):
            hit = bvh.intersect(origin, direction)
            if hit is None:
                break
            seq = seq + (hit.prim,)
            found.add(seq)
            direction = direction - 2.0 * float(direction @ hit.normal) * hit.normal
            origin = hit.point
    return found


def _merge_coincident(paths):
    """Merge specular paths whose interaction points all coincide.

    Coplanar triangles can produce one physical path under several ids;
    the representative with the smallest sequence wins.
    """
    kept = []
    for p in paths:
        merged = False
        for i, q in enumerate(kept):
            if (p.kind == q.kind and p.order == q.order and p.order > 0
                    and np.max(np.abs(p.vertices - q.vertices)) < MERGE_TOL):
                if p.seq < q.seq:
                    kept[i] = p
                merged = True
                break
        if not merged:
            kept.append(p)
    return kept


def compute_paths_between(scene, bvh: Bvh, tx_dev, rx_dev, max_depth: int,
                          method: str = "exhaustive",
                          num_rays: int = DEFAULT_NUM_RAYS):
    """All valid paths from one tx to one rx, deduplicated and sorted."""
    paths = []
    los = los_path(scene, bvh, tx_dev, rx_dev)
    if los is not None:
        paths.append(los)
    if max_depth >= 1 and bvh.num_prims:
        if method == "exhaustive":
            candidates = enumerate_candidates(bvh, max_depth)
        elif method == "fibonacci":
            candidates = launch_candidates(scene, bvh, tx_dev.position,
                                           max_depth, num_rays)
        else:
            raise TracerError(f"unknown path-finding method {method!r}")
        seen = set()
        for seq in sorted(candidates):
            if seq in seen:
                continue
            seen.add(seq)
            p = image_solve(tx_dev.name, rx_dev.name, tx_dev.position,
                            rx_dev.position, seq, bvh)
            if p is not None:
                paths.append(p)
    paths = _merge_coincident(paths)
    paths.sort(key=lambda p: (0 if p.kind == "los" else 1, p.order, p.seq))
    return paths


def compute_paths(scene, bvh: Bvh, max_depth: int, method: str = "exhaustive",
                  num_rays: int = DEFAULT_NUM_RAYS) -> PathSet:
    """Paths for every (tx, rx) device pair in the scene."""
    txs, rxs = scene.transmitters, scene.receivers
    if not txs or not rxs:
        raise TracerError("scene needs at least one transmitter and one receiver")
    if max_depth < 0:
        raise TracerError("max_depth must be >= 0")
    all_paths = []
    for tx in txs:
        for rx in rxs:
            all_paths.extend(compute_paths_between(scene, bvh, tx, rx,
                                                   max_depth, method, num_rays))
    return PathSet(scene=scene, max_depth=max_depth, method=method, paths=all_paths)


def dump_paths(pathset: PathSet, normalize_delays: bool = False) -> str:
    """Human- and machine-readable path records (the CLI trace format).

    With ``normalize_delays`` each (tx, rx) pair's delays are shifted so
    its first arrival is zero; absolute delays are the default.
    """
    first = {}
    if normalize_delays:
        for p in pathset.paths:
            key = (p.tx, p.rx)
            first[key] = min(first.get(key, math.inf), p.delay_s)
    lines = ["# tx rx type order length_m delay_s primitive_ids vertices"]
    for p in pathset.paths:
        verts = ";".join(",".join(repr(float(x)) for x in v) for v in p.vertices)
        prims = ",".join(str(s) for s in p.seq) if p.seq else "-"
        delay = p.delay_s - first.get((p.tx, p.rx), 0.0)
        lines.append(f"{p.tx} {p.rx} {p.kind} {p.order} {p.length_m!r} "
                     f"{delay!r} {prims} {verts}")
    return "\n".join(lines) + "\n"
