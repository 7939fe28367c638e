"""Procedural growth of novel closed-surface 3D objects.

Objects descend from a regular icosahedron across two generations.  Growth
applies a seed-determined sequence of local surface events (outward bumps,
curvature-coupled bumps, inward collapses, and collapses targeted near
earlier events).  Category labels follow lineage: all objects sharing a
first-generation parent belong to that parent's category.

Every emitted mesh is a closed, consistently outward-wound 2-manifold with
positive volume; growth is a pure function of (parent, params, seed).
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .seeding import derive_seed, rng as _rng

CATEGORIES = ("Lauz", "Puns", "Eulf")

DUPLICATE_TOL = 1e-9
DEGENERATE_AREA = 1e-12
MAX_EVENT_RETRIES = 8
MAX_FACES = 6000

# Patch geometry: falloff radius as a fraction of the bounding-sphere
# radius; cosine falloff inside the patch.  Amplitudes are fractions of
# the patch radius, keeping bumps lobe-like rather than spiky.
PATCH_FRACTION = 0.15
NEIGHBOR_FRACTION = 0.30

_GROWTH_AMPLITUDE = (0.6, 1.1)
_SHRINK_AMPLITUDE = (0.4, 0.8)


class MeshError(ValueError):
    """A mesh violates the closed-manifold invariants."""


class GrowthError(RuntimeError):
    """Growth could not produce a valid mesh within the retry budget."""

    def __init__(self, message: str, lineage_position: str | None = None):
        super().__init__(message)
        self.lineage_position = lineage_position


@dataclass(frozen=True)
class LineageTag:
    """Identity and ancestry of one object.

    ``category`` equals the identity of the generation-1 ancestor; the
    ancestor itself (generation 0) carries no category.
    """

    generation: int
    parent_id: str | None
    object_id: str
    category: str | None
    seed: int

    def __post_init__(self):
        if self.generation == 0 and self.parent_id is not None:
            raise ValueError("generation 0 cannot have a parent")
        if self.generation > 0 and self.parent_id is None:
            raise ValueError("generation %d requires a parent" % self.generation)


@dataclass(frozen=True)
class GrowthParams:
    """Event counts for one growth step.

    The two hydro counts exist for manifest compatibility and are pinned
    to zero.
    """

    threshold_growth: int
    interaction_growth: int
    shrinkage_pcd: int
    shrinkage_pcd_interaction: int
    hydro_pcd: int = 0
    hydro_interaction_pcd: int = 0

    def __post_init__(self):
        counts = (
            self.threshold_growth,
            self.interaction_growth,
            self.shrinkage_pcd,
            self.shrinkage_pcd_interaction,
        )
        if any(c < 0 for c in counts):
            raise ValueError("event counts must be non-negative")
        if self.hydro_pcd != 0 or self.hydro_interaction_pcd != 0:
            raise ValueError("hydro event counts are fixed at zero")

    @property
    def total_events(self) -> int:
        return (
            self.threshold_growth
            + self.interaction_growth
            + self.shrinkage_pcd
            + self.shrinkage_pcd_interaction
        )


PARENT_PARAMS = GrowthParams(6, 6, 4, 6)
CHILD_PARAMS = GrowthParams(3, 0, 0, 2)


@dataclass
class Mesh:
    """Closed triangle surface with lineage metadata.

    vertices: (V, 3) float64, model units.  faces: (F, 3) int64 vertex
    indices, wound consistently outward (signed volume > 0).
    """

    vertices: np.ndarray
    faces: np.ndarray
    lineage: LineageTag

    def copy(self) -> "Mesh":
        return Mesh(self.vertices.copy(), self.faces.copy(), self.lineage)


# ---------------------------------------------------------------------------
# geometry helpers


def face_normals_areas(vertices: np.ndarray, faces: np.ndarray):
    """Unnormalized face normals (cross products) and face areas."""
    v0 = vertices[faces[:, 0]]
    v1 = vertices[faces[:, 1]]
    v2 = vertices[faces[:, 2]]
    cross = np.cross(v1 - v0, v2 - v0)
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    return cross, areas


def signed_volume(vertices: np.ndarray, faces: np.ndarray) -> float:
    v0 = vertices[faces[:, 0]]
    v1 = vertices[faces[:, 1]]
    v2 = vertices[faces[:, 2]]
    return float(np.einsum("ij,ij->", v0, np.cross(v1, v2)) / 6.0)


def bounding_sphere(vertices: np.ndarray):
    """(center, radius) of the axis-aligned-box bounding sphere."""
    center = 0.5 * (vertices.min(axis=0) + vertices.max(axis=0))
    radius = float(np.linalg.norm(vertices - center, axis=1).max())
    return center, radius


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals, unit length."""
    cross, _ = face_normals_areas(vertices, faces)
    normals = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(normals, faces[:, k], cross)
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return normals / norms


def validate_mesh(mesh: Mesh, duplicate_tol: float = DUPLICATE_TOL) -> None:
    """Raise MeshError unless the mesh is a closed outward-wound 2-manifold."""
    verts, faces = mesh.vertices, mesh.faces
    if len(verts) == 0 or len(faces) == 0:
        raise MeshError("empty mesh")
    if faces.min() < 0 or faces.max() >= len(verts):
        raise MeshError("face index out of range")
    if any(len(set(f)) != 3 for f in faces.tolist()):
        raise MeshError("face with repeated vertex")

    directed = set()
    undirected: dict[tuple[int, int], int] = {}
    for a, b, c in faces.tolist():
        for u, v in ((a, b), (b, c), (c, a)):
            if (u, v) in directed:
                raise MeshError(f"directed edge ({u},{v}) used twice: inconsistent winding")
            directed.add((u, v))
            key = (u, v) if u < v else (v, u)
            undirected[key] = undirected.get(key, 0) + 1
    bad = [e for e, n in undirected.items() if n != 2]
    if bad:
        raise MeshError(f"{len(bad)} edges not shared by exactly two faces (first: {bad[0]})")

    euler = len(verts) - len(undirected) + len(faces)
    if euler != 2:
        raise MeshError(f"Euler characteristic {euler} != 2")

    _, areas = face_normals_areas(verts, faces)
    if areas.min() <= DEGENERATE_AREA:
        raise MeshError("degenerate (zero-area) face")

    pairs = cKDTree(verts).query_pairs(duplicate_tol)
    if pairs:
        raise MeshError(f"{len(pairs)} duplicate vertex pairs within {duplicate_tol}")

    if signed_volume(verts, faces) <= 0.0:
        raise MeshError("signed volume not positive: inward winding or inverted mesh")


# ---------------------------------------------------------------------------
# ancestor


def icosahedron() -> Mesh:
    """Regular icosahedron with unit circumradius: the generation-0 ancestor."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    raw = []
    for a in (-1.0, 1.0):
        for b in (-phi, phi):
            raw.append((0.0, a, b))
            raw.append((a, b, 0.0))
            raw.append((b, 0.0, a))
    verts = np.asarray(raw, dtype=np.float64)
    verts /= np.linalg.norm(verts[0])

    # Faces from the convex hull, re-wound outward and canonically ordered
    # so the construction never depends on hull output order.
    from scipy.spatial import ConvexHull

    hull = ConvexHull(verts)
    faces = []
    for tri in hull.simplices:
        a, b, c = (int(i) for i in tri)
        n = np.cross(verts[b] - verts[a], verts[c] - verts[a])
        centroid = (verts[a] + verts[b] + verts[c]) / 3.0
        if np.dot(n, centroid) < 0.0:
            b, c = c, b
        shift = int(np.argmin((a, b, c)))
        order = ((a, b, c), (b, c, a), (c, a, b))[shift]
        faces.append(order)
    faces.sort()
    mesh = Mesh(verts, np.asarray(faces, dtype=np.int64),
                LineageTag(0, None, "ancestor", None, 0))
    validate_mesh(mesh)
    return mesh


# ---------------------------------------------------------------------------
# local refinement (red-green edge split, manifold-preserving)


def _refine_faces(vertices: np.ndarray, faces: np.ndarray, red: np.ndarray):
    """Split each face in ``red`` 1:4 at edge midpoints; neighbours with one
    split edge get a conforming 1:2 split.  Geometry is preserved exactly
    (new vertices are edge midpoints)."""
    red_set = set(int(i) for i in np.flatnonzero(red))
    if not red_set:
        return vertices, faces

    face_list = faces.tolist()
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for fi, (a, b, c) in enumerate(face_list):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            edge_faces.setdefault(key, []).append(fi)

    split_edges: set[tuple[int, int]] = set()

    def mark_face(fi: int):
        a, b, c = face_list[fi]
        for u, v in ((a, b), (b, c), (c, a)):
            split_edges.add((u, v) if u < v else (v, u))

    for fi in red_set:
        mark_face(fi)

    # Promote any face with 2+ split edges to red until stable.
    changed = True
    while changed:
        changed = False
        for fi, (a, b, c) in enumerate(face_list):
            if fi in red_set:
                continue
            n = sum(
                ((u, v) if u < v else (v, u)) in split_edges
                for u, v in ((a, b), (b, c), (c, a))
            )
            if n >= 2:
                red_set.add(fi)
                mark_face(fi)
                changed = True

    midpof: dict[tuple[int, int], int] = {}
    new_verts = [vertices]
    next_idx = len(vertices)
    for key in sorted(split_edges):
        midpof[key] = next_idx
        new_verts.append(0.5 * (vertices[key[0]] + vertices[key[1]])[None, :])
        next_idx += 1
    all_verts = np.concatenate(new_verts, axis=0)

    out = []
    for fi, (a, b, c) in enumerate(face_list):
        if fi in red_set:
            mab = midpof[(a, b) if a < b else (b, a)]
            mbc = midpof[(b, c) if b < c else (c, b)]
            mca = midpof[(c, a) if c < a else (a, c)]
            out += [(a, mab, mca), (b, mbc, mab), (c, mca, mbc), (mab, mbc, mca)]
        else:
            split = [
                (u, v) for u, v in ((a, b), (b, c), (c, a))
                if ((u, v) if u < v else (v, u)) in split_edges
            ]
            if not split:
                out.append((a, b, c))
            else:
                u, v = split[0]
                w = ({a, b, c} - {u, v}).pop()
                m = midpof[(u, v) if u < v else (v, u)]
                out += [(u, m, w), (m, v, w)]
    return all_verts, np.asarray(out, dtype=np.int64)


def _geodesic_distances(vertices, faces, seed_vertices, seed_dists, cutoff):
    """Dijkstra over the edge graph from seed vertices; inf beyond cutoff."""
    adj: dict[int, list[tuple[int, float]]] = {}
    for a, b, c in faces.tolist():
        for u, v in ((a, b), (b, c), (c, a)):
            d = float(np.linalg.norm(vertices[u] - vertices[v]))
            adj.setdefault(u, []).append((v, d))
            adj.setdefault(v, []).append((u, d))
    dist = np.full(len(vertices), np.inf)
    heap = []
    for v, d in zip(seed_vertices, seed_dists):
        if d < dist[v]:
            dist[v] = d
            heapq.heappush(heap, (d, int(v)))
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u] or d > cutoff:
            continue
        for v, w in adj.get(u, ()):
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def _angle_deficits(vertices, faces, vertex_ids):
    """Absolute angle deficit (2*pi minus incident angles) per requested vertex."""
    wanted = set(int(v) for v in vertex_ids)
    angles = {v: 0.0 for v in wanted}
    for a, b, c in faces.tolist():
        tri = (a, b, c)
        if not (set(tri) & wanted):
            continue
        for i in range(3):
            v = tri[i]
            if v not in wanted:
                continue
            p = vertices[v]
            q = vertices[tri[(i + 1) % 3]] - p
            r = vertices[tri[(i + 2) % 3]] - p
            cosang = np.dot(q, r) / max(np.linalg.norm(q) * np.linalg.norm(r), 1e-300)
            angles[v] += float(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return {v: abs(2.0 * np.pi - a) for v, a in angles.items()}


# ---------------------------------------------------------------------------
# growth events


def _apply_event(vertices, faces, kind, event_rng, prior_sites):
    """One growth/shrink event; returns (vertices, faces, site_center)."""
    center, radius_bs = bounding_sphere(vertices)
    patch_r = PATCH_FRACTION * radius_bs

    cross, areas = face_normals_areas(vertices, faces)
    centroids = (
        vertices[faces[:, 0]] + vertices[faces[:, 1]] + vertices[faces[:, 2]]
    ) / 3.0

    weights = areas.copy()
    if kind == "shrink_nbr" and prior_sites:
        sites = np.asarray(prior_sites)
        near = np.zeros(len(faces), dtype=bool)
        for s in sites:
            near |= np.linalg.norm(centroids - s, axis=1) < NEIGHBOR_FRACTION * radius_bs
        if near.any():
            weights = np.where(near, areas, 0.0)
    site_face = int(event_rng.choice(len(faces), p=weights / weights.sum()))
    site = centroids[site_face]

    # Refine until the patch is resolved finer than half its radius.
    for _ in range(4):
        if len(faces) >= MAX_FACES:
            break
        centroids = (
            vertices[faces[:, 0]] + vertices[faces[:, 1]] + vertices[faces[:, 2]]
        ) / 3.0
        edge_len = np.stack(
            [
                np.linalg.norm(vertices[faces[:, 0]] - vertices[faces[:, 1]], axis=1),
                np.linalg.norm(vertices[faces[:, 1]] - vertices[faces[:, 2]], axis=1),
                np.linalg.norm(vertices[faces[:, 2]] - vertices[faces[:, 0]], axis=1),
            ]
        ).max(axis=0)
        in_patch = np.linalg.norm(centroids - site, axis=1) < patch_r
        red = in_patch & (edge_len > 0.5 * patch_r)
        if not red.any():
            break
        vertices, faces = _refine_faces(vertices, faces, red)

    # Geodesic patch around the nearest vertex to the site.
    d_site = np.linalg.norm(vertices - site, axis=1)
    seed_vertex = int(np.argmin(d_site))
    dist = _geodesic_distances(
        vertices, faces, [seed_vertex], [float(d_site[seed_vertex])], patch_r
    )
    patch = dist < patch_r
    if not patch.any():
        raise MeshError("empty displacement patch")

    cross, areas = face_normals_areas(vertices, faces)
    centroids = (
        vertices[faces[:, 0]] + vertices[faces[:, 1]] + vertices[faces[:, 2]]
    ) / 3.0
    near_faces = np.linalg.norm(centroids - site, axis=1) < patch_r
    if not near_faces.any():
        near_faces = patch[faces].any(axis=1)
    direction = cross[near_faces].sum(axis=0)
    norm = np.linalg.norm(direction)
    if norm < 1e-15:
        raise MeshError("degenerate patch normal")
    direction /= norm

    lo, hi = _GROWTH_AMPLITUDE if kind in ("threshold", "interaction") else _SHRINK_AMPLITUDE
    amplitude = float(event_rng.uniform(lo, hi)) * patch_r
    if kind == "interaction":
        # Couple to surface curvature accumulated by earlier events.
        deficits = _angle_deficits(vertices, faces, np.flatnonzero(patch))
        kappa = float(np.mean(list(deficits.values()))) if deficits else 0.0
        amplitude *= float(np.clip(0.6 + kappa / (np.pi / 4.0), 0.6, 1.8))
    if kind in ("shrink", "shrink_nbr"):
        amplitude = -amplitude
        # Never collapse through the local interior.
        depth_limit = 0.6 * float(np.linalg.norm(vertices[patch] - center, axis=1).min())
        amplitude = -min(-amplitude, depth_limit)

    falloff = 0.5 * (1.0 + np.cos(np.pi * np.clip(dist[patch] / patch_r, 0.0, 1.0)))
    moved = vertices.copy()
    moved[patch] += amplitude * falloff[:, None] * direction
    return moved, faces, site


def _merge_close_vertices(vertices, faces, tol=DUPLICATE_TOL):
    """Weld vertices closer than tol and drop faces that became degenerate."""
    pairs = cKDTree(vertices).query_pairs(tol)
    if not pairs:
        return vertices, faces
    remap = np.arange(len(vertices))
    for a, b in sorted(pairs):
        root = min(remap[a], remap[b])
        remap[a] = remap[b] = root
    keep = np.unique(remap)
    new_index = np.full(len(vertices), -1)
    new_index[keep] = np.arange(len(keep))
    faces = new_index[remap[faces]]
    good = (
        (faces[:, 0] != faces[:, 1])
        & (faces[:, 1] != faces[:, 2])
        & (faces[:, 2] != faces[:, 0])
    )
    return vertices[keep], faces[good]


def grow(
    parent: Mesh,
    params: GrowthParams,
    seed: int,
    object_id: str | None = None,
    category: str | None = None,
) -> Mesh:
    """Grow a child mesh from ``parent`` by applying the configured events.

    The event order and every random choice derive from ``seed`` alone, so
    identical (parent, params, seed) yield bit-identical children.  Events
    that would break the closed-manifold invariants are resampled up to
    MAX_EVENT_RETRIES times before growth fails.
    """
    validate_mesh(parent)
    generation = parent.lineage.generation + 1
    if object_id is None:
        object_id = f"{parent.lineage.object_id}-s{seed & 0xFFFFFFFF:08x}"
    if category is None:
        category = object_id if generation == 1 else parent.lineage.category
    lineage = LineageTag(generation, parent.lineage.object_id, object_id, category, seed)

    kinds = (
        ["threshold"] * params.threshold_growth
        + ["interaction"] * params.interaction_growth
        + ["shrink"] * params.shrinkage_pcd
        + ["shrink_nbr"] * params.shrinkage_pcd_interaction
    )
    order = _rng("grow-order", seed).permutation(len(kinds))
    schedule = [kinds[i] for i in order]

    vertices, faces = parent.vertices.copy(), parent.faces.copy()
    sites: list[np.ndarray] = []
    for idx, kind in enumerate(schedule):
        last_err: Exception | None = None
        for retry in range(MAX_EVENT_RETRIES):
            event_rng = _rng("grow-event", seed, idx, retry)
            try:
                v, f, site = _apply_event(vertices, faces, kind, event_rng, sites)
                v, f = _merge_close_vertices(v, f)
                candidate = Mesh(v, f, lineage)
                validate_mesh(candidate)
            except MeshError as err:
                last_err = err
                continue
            vertices, faces, _ = v, f, None
            sites.append(site)
            break
        else:
            raise GrowthError(
                f"event {idx} ({kind}) failed after {MAX_EVENT_RETRIES} retries: {last_err}",
                lineage_position=object_id,
            )

    child = Mesh(vertices, faces, lineage)
    validate_mesh(child)
    return child


def spawn_taxonomy(master_seed: int, children_per_parent: int = 100) -> list[Mesh]:
    """Grow the full two-generation taxonomy.

    Three parents (one per category) grow from the icosahedron with the
    parent-generation event counts; each parent then yields
    ``children_per_parent`` second-generation objects.  Returns parents
    followed by children, 303 meshes for the canonical counts.
    """
    ancestor = icosahedron()
    parents: list[Mesh] = []
    children: list[Mesh] = []
    for cat in CATEGORIES:
        pseed = derive_seed("embryo-parent", master_seed, cat)
        try:
            parent = grow(ancestor, PARENT_PARAMS, pseed,
                          object_id=cat.lower(), category=cat)
        except GrowthError as err:
            raise GrowthError(f"parent {cat}: {err}", lineage_position=cat.lower()) from err
        parents.append(parent)
        for k in range(children_per_parent):
            cseed = derive_seed("embryo-child", master_seed, cat, k)
            cid = f"{cat.lower()}-{k:03d}"
            try:
                children.append(grow(parent, CHILD_PARAMS, cseed, object_id=cid))
            except GrowthError as err:
                raise GrowthError(f"child {cid}: {err}", lineage_position=cid) from err
    return parents + children


# ---------------------------------------------------------------------------
# export


def write_off(mesh: Mesh, path: str | Path) -> None:
    """ASCII OFF file; coordinates keep full float64 precision."""
    path = Path(path)
    verts, faces = mesh.vertices, mesh.faces
    n_edges = 3 * len(faces) // 2
    lines = ["OFF", f"{len(verts)} {len(faces)} {n_edges}"]
    lines += ["%.17g %.17g %.17g" % (x, y, z) for x, y, z in verts]
    lines += ["3 %d %d %d" % (a, b, c) for a, b, c in faces]
    path.write_text("\n".join(lines) + "\n")


def read_off(path: str | Path):
    """(vertices, faces) from an ASCII OFF file."""
    tokens = Path(path).read_text().split()
    if tokens[0] != "OFF":
        raise ValueError(f"{path}: not an OFF file")
    nv, nf = int(tokens[1]), int(tokens[2])
    cursor = 4
    verts = np.array(tokens[cursor : cursor + 3 * nv], dtype=np.float64).reshape(nv, 3)
    cursor += 3 * nv
    faces = []
    for _ in range(nf):
        cnt = int(tokens[cursor])
        if cnt != 3:
            raise ValueError(f"{path}: non-triangular face")
        faces.append([int(t) for t in tokens[cursor + 1 : cursor + 4]])
        cursor += 4
    return verts, np.asarray(faces, dtype=np.int64)


def write_taxonomy(meshes: list[Mesh], out_dir: str | Path) -> Path:
    """Write one OFF per object plus a JSON Lines taxonomy manifest."""
    out_dir = Path(out_dir)
    manifest_path = out_dir / "taxonomy.jsonl"
    records = []
    for mesh in meshes:
        tag = mesh.lineage
        rel = Path("objects") / (tag.category or "root") / f"{tag.object_id}.off"
        full = out_dir / rel
        full.parent.mkdir(parents=True, exist_ok=True)
        write_off(mesh, full)
        records.append(
            {
                "object_id": tag.object_id,
                "category": tag.category,
                "generation": tag.generation,
                "parent_id": tag.parent_id,
                "seed": tag.seed,
                "path": str(rel),
            }
        )
    with manifest_path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return manifest_path


def load_taxonomy(out_dir: str | Path) -> list[Mesh]:
    """Rehydrate meshes written by write_taxonomy."""
    out_dir = Path(out_dir)
    meshes = []
    with (out_dir / "taxonomy.jsonl").open() as fh:
        for line in fh:
            rec = json.loads(line)
            verts, faces = read_off(out_dir / rec["path"])
            tag = LineageTag(
                rec["generation"], rec["parent_id"], rec["object_id"],
                rec["category"], rec["seed"],
            )
            meshes.append(Mesh(verts, faces, tag))
    return meshes
