"""Grid evaluation, marching cubes, and gradients through the iso-surface.

The sampling grid always covers [-1, 1]^3 with R nodes per axis (spacing
2/(R-1)), matching the meshing region of the shape data. Marching cubes
uses the classic 256-case tables with linear edge interpolation and shared
vertices, so extracted surfaces are closed by construction whenever the
iso-surface does not leave the grid.

Surface gradients follow the implicit-function relation: a parameter
perturbation moves a surface point along the field normal by
-(ds/dparam)/|grad_x s|, which lets mesh-level objectives backpropagate
into latents and poses while treating connectivity as fixed within a step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import decoder as dec
from .mc_tables import EDGE_CORNERS, EDGE_TABLE, TRI_TABLE

# corner offsets in (x, y, z), z-ring order used by the tables
_CORNER_OFFSETS = np.array(
    [
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ],
    dtype=np.intp,
)

# canonical (base corner offset, axis) for each of the 12 cube edges
_EDGE_CANONICAL = []
for _a, _b in EDGE_CORNERS:
    _lo = np.minimum(_CORNER_OFFSETS[_a], _CORNER_OFFSETS[_b])
    _axis = int(np.argmax(np.abs(_CORNER_OFFSETS[_a] - _CORNER_OFFSETS[_b])))
    _EDGE_CANONICAL.append((_lo, _axis))


@dataclass
class SdfGrid:
    values: np.ndarray  # (R, R, R), axis order (x, y, z)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or len(set(self.values.shape)) != 1:
            raise ValueError("grid must be cubic (R, R, R)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite grid values")

    @property
    def resolution(self):
        return self.values.shape[0]

    @property
    def spacing(self):
        return 2.0 / (self.resolution - 1)

    def node(self, i, j, k):
        h = self.spacing
        return np.array([-1.0 + i * h, -1.0 + j * h, -1.0 + k * h])


def grid_points(resolution):
    """All grid node coordinates, C-ordered over (x, y, z) indices."""
    axis = np.linspace(-1.0, 1.0, resolution)
    X, Y, Z = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([X, Y, Z], axis=-1).reshape(-1, 3)


def grid_from_field(fn, resolution):
    """Sample an analytic scalar field on the standard grid."""
    vals = fn(grid_points(resolution))
    return SdfGrid(vals.reshape(resolution, resolution, resolution))


def eval_grid(params, z, poses, resolution, dtype=np.float64, chunk=65536):
    """Decoder SDF on the grid: (global SdfGrid, per-part (R,R,R,P) values)."""
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    pts = grid_points(resolution)
    s_parts = dec.batch_forward(params, z, poses, pts, chunk=chunk, dtype=dtype)
    R = resolution
    part_values = s_parts.reshape(R, R, R, params.config.n_parts)
    return SdfGrid(part_values.min(axis=-1)), part_values


@dataclass
class TriMesh:
    vertices: np.ndarray  # (n, 3)
    triangles: np.ndarray  # (m, 3) int
    normals: np.ndarray = None  # optional per-vertex

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.intp).reshape(-1, 3)
        if len(self.triangles):
            if self.triangles.max() >= len(self.vertices) or self.triangles.min() < 0:
                raise ValueError("triangle index out of range")
            t = self.triangles
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise ValueError("degenerate triangle with repeated indices")

    def is_empty(self):
        return len(self.triangles) == 0

    def face_normals_areas(self):
        """Area-weighted face normal vectors (|n| = face area) and areas."""
        v = self.vertices
        t = self.triangles
        n = 0.5 * np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return n, np.linalg.norm(n, axis=1)

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def marching_cubes(grid, iso=0.0):
    """Extract the iso-surface as a shared-vertex triangle mesh.

    Cells are visited in C order and edge vertices are deduplicated by
    canonical grid-edge id, so output indexing is deterministic. An
    all-positive (or all-negative) grid yields an empty mesh.
    """
    vals = grid.values - iso
    R = grid.resolution
    h = grid.spacing

    inside = vals < 0.0
    case = np.zeros((R - 1, R - 1, R - 1), dtype=np.uint16)
    for bit, (dx, dy, dz) in enumerate(_CORNER_OFFSETS):
        case |= inside[dx : R - 1 + dx, dy : R - 1 + dy, dz : R - 1 + dz].astype(np.uint16) << bit
    active = np.argwhere((case > 0) & (case < 255))

    vertices = []
    triangles = []
    edge_ids = {}
    origin = -1.0

    for i, j, k in active:
        c = int(case[i, j, k])
        edges = EDGE_TABLE[c]
        if edges == 0:
            continue
        local = [-1] * 12
        for e in range(12):
            if not (edges >> e) & 1:
                continue
            lo, axis = _EDGE_CANONICAL[e]
            key = (i + lo[0], j + lo[1], k + lo[2], axis)
            vid = edge_ids.get(key)
            if vid is None:
                ca, cb = EDGE_CORNERS[e]
                oa = _CORNER_OFFSETS[ca]
                ob = _CORNER_OFFSETS[cb]
                va = vals[i + oa[0], j + oa[1], k + oa[2]]
                vb = vals[i + ob[0], j + ob[1], k + ob[2]]
                frac = va / (va - vb)
                pa = origin + h * np.array([i + oa[0], j + oa[1], k + oa[2]], dtype=np.float64)
                pb = origin + h * np.array([i + ob[0], j + ob[1], k + ob[2]], dtype=np.float64)
                vid = len(vertices)
                vertices.append(pa + frac * (pb - pa))
                edge_ids[key] = vid
            local[e] = vid
        tri = TRI_TABLE[c]
        for a in range(0, len(tri), 3):
            v0, v1, v2 = local[tri[a]], local[tri[a + 1]], local[tri[a + 2]]
            if v0 == v1 or v1 == v2 or v0 == v2:
                continue  # zero-area case from coincident edge crossings
            triangles.append((v0, v2, v1))  # flip: outward normals toward sdf > 0
    if not vertices:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.intp))
    return TriMesh(np.array(vertices), np.array(triangles, dtype=np.intp))


def mesh_parts(params, z, poses, resolution, iso=0.0, dtype=np.float64):
    """Global mesh plus one (possibly empty) mesh per part slot."""
    grid, part_values = eval_grid(params, z, poses, resolution, dtype=dtype)
    global_mesh = marching_cubes(grid, iso)
    part_meshes = [
        marching_cubes(SdfGrid(part_values[..., p]), iso)
        for p in range(part_values.shape[-1])
    ]
    return global_mesh, part_meshes


# ---------------------------------------------------------------------------
# gradients through the extracted surface


def vertex_sensitivities(params, z, poses, verts, dL_dv, grad_floor=1e-6):
    """Chain mesh-vertex gradients into latent and pose gradients.

    For each surface vertex the active part is the argmin slot; the vertex
    moves along the field normal n = grad_x s / |grad_x s| at a rate
    -(ds/dparam)/|grad_x s|. Vertices with |grad_x s| below grad_floor are
    skipped. Returns (Gradients over (z, q, t, s), skipped count).
    """
    verts = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    dL_dv = np.asarray(dL_dv, dtype=np.float64).reshape(-1, 3)
    pose_arrays = poses if isinstance(poses, tuple) else dec.poses_to_arrays(poses)

    s_parts, cache = dec.forward(params, z, pose_arrays, verts, want_cache=True)
    active = s_parts.argmin(axis=-1)
    onehot = np.zeros_like(s_parts)
    onehot[np.arange(len(verts)), active] = 1.0

    g1 = dec.backward(params, z, pose_arrays, verts, onehot, cache=cache)
    grad_x = g1.x
    norms = np.linalg.norm(grad_x, axis=1)
    ok = norms >= grad_floor
    skipped = int(np.sum(~ok))
    safe = np.where(ok, norms, 1.0)

    # (dL_dv . n) * (-1 / |grad_x s|)
    factor = -np.einsum("ni,ni->n", dL_dv, grad_x) / (safe * safe)
    factor = np.where(ok, factor, 0.0)
    g2 = dec.backward(params, z, pose_arrays, verts, factor[:, None] * onehot, cache=cache)
    return g2, skipped


def vertex_sensitivity(params, z, poses, v, dL_dv, grad_floor=1e-6):
    """Single-vertex form of vertex_sensitivities."""
    return vertex_sensitivities(params, z, poses, [v], [dL_dv], grad_floor)


# ---------------------------------------------------------------------------
# OBJ output


def save_obj(path, mesh, part_meshes=None, part_names=None):
    """ASCII Wavefront OBJ, vertices then faces, 1-based indices.

    With part_meshes given, each part goes into its own "g part_k" group
    (the global mesh is omitted in that case).
    """
    lines = []
    if part_meshes is None:
        _obj_lines(lines, mesh, 0)
    else:
        offset = 0
        for k, pm in enumerate(part_meshes):
            name = part_names[k] if part_names else f"part_{k}"
            lines.append(f"g {name}")
            offset += _obj_lines(lines, pm, offset)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _obj_lines(lines, mesh, offset):
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1 + offset} {t[1] + 1 + offset} {t[2] + 1 + offset}")
    return len(mesh.vertices)


def load_obj(path):
    verts, faces = [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                   np.array(faces, dtype=np.intp).reshape(-1, 3))
