"""Shape evaluation metrics.

Chamfer distance (squared-distance convention), volumetric IoU on a 128^3
grid over the joint bounding box, per-part IoU under the closest-region
occupancy rule, image consistency from a built-in orthographic z-buffer
renderer, and MMD / COV set metrics on surface point samples.

Chamfer values are in squared scene units, so numbers look small; this
matches the summed-squared-nearest-neighbor formula rather than the RMS
convention.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


# ---------------------------------------------------------------------------
# point sampling


def sample_mesh_surface(mesh, n=30000, seed=0):
    """n points drawn area-uniformly from the mesh surface."""
    if mesh.is_empty():
        raise ValueError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    _, areas = mesh.face_normals_areas()
    probs = areas / areas.sum()
    faces = rng.choice(len(areas), size=n, p=probs)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tri = mesh.vertices[mesh.triangles[faces]]
    return tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])


def chamfer(x, y):
    """Symmetric Chamfer distance, mean of squared NN distances both ways."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 3)
    if len(x) == 0 or len(y) == 0:
        raise ValueError("empty point set")
    d_xy, _ = cKDTree(y).query(x)
    d_yx, _ = cKDTree(x).query(y)
    return float(np.mean(d_xy**2) + np.mean(d_yx**2))


# ---------------------------------------------------------------------------
# volumetric IoU


def _joint_grid(bounds_a, bounds_b, resolution):
    lo = np.minimum(bounds_a[0], bounds_b[0])
    hi = np.maximum(bounds_a[1], bounds_b[1])
    axes = [np.linspace(lo[i], hi[i], resolution) for i in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    return np.stack([X, Y, Z], axis=-1).reshape(-1, 3)


def iou(occ_a, occ_b, bounds_a, bounds_b, resolution=128):
    """Volumetric IoU of two occupancy oracles on the joint bounding box.

    occ_* map (n,3) points to boolean occupancy; bounds_* are (lo, hi)
    pairs. Both-empty is defined as IoU 1.
    """
    pts = _joint_grid(bounds_a, bounds_b, resolution)
    a = np.asarray(occ_a(pts), dtype=bool)
    b = np.asarray(occ_b(pts), dtype=bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def occupancy_from_sdf(sdf_fn):
    """Wrap a signed-distance callable as an occupancy oracle (inside = s < 0)."""
    return lambda pts: np.asarray(sdf_fn(pts)) < 0.0


def part_iou(pred_part_sdf, gt_shape, resolution=128, bounds=None):
    """Mean per-part IoU with part correspondence fixed by slot index.

    GT part occupancy is the full-shape occupancy intersected with the
    nearest-part region; predicted part occupancy is (part SDF < 0).
    pred_part_sdf maps (n,3) points to (n,P) values. Only slots present in
    the GT shape contribute.
    """
    from .shapegen import part_region_label, shape_sdf

    if bounds is None:
        bounds = gt_shape.bounds()
    pts = _joint_grid(bounds, bounds, resolution)
    gt_occ = shape_sdf(gt_shape, pts)[0] < 0.0
    labels = part_region_label(gt_shape, pts)
    pred = np.asarray(pred_part_sdf(pts)) < 0.0

    ious = []
    for j, _ in gt_shape.present_parts():
        gt_j = gt_occ & (labels == j)
        pr_j = pred[:, j]
        union = np.count_nonzero(gt_j | pr_j)
        ious.append(1.0 if union == 0 else np.count_nonzero(gt_j & pr_j) / union)
    return float(np.mean(ious)), ious


def mesh_occupancy_grid(mesh, lo, hi, resolution=128):
    """Boolean inside/outside grid for a closed mesh by z-ray parity counting.

    For every (x, y) grid column the crossings with all triangles are
    collected; a node is inside when an odd number of crossings lies below
    it. Rays are offset by a fixed irrational sub-voxel shift so they never
    hit shared triangle edges or vertices exactly, which would double-count
    crossings and flip the parity of a whole column.
    """
    R = resolution
    # irrational, deterministic offsets; tiny relative to the voxel size
    eps = 1e-7 * max(hi[0] - lo[0], hi[1] - lo[1]) / (R - 1)
    xs = np.linspace(lo[0], hi[0], R) + eps * np.sqrt(2.0)
    ys = np.linspace(lo[1], hi[1], R) + eps * np.sqrt(3.0)
    zs = np.linspace(lo[2], hi[2], R)
    crossings = [[[] for _ in range(R)] for _ in range(R)]
    v = mesh.vertices
    for i0, i1, i2 in mesh.triangles:
        p0, p1, p2 = v[i0], v[i1], v[i2]
        x0, x1v, x2 = p0[0], p1[0], p2[0]
        y0, y1v, y2 = p0[1], p1[1], p2[1]
        det = (x1v - x0) * (y2 - y0) - (x2 - x0) * (y1v - y0)
        if abs(det) < 1e-15:
            continue
        ia = np.searchsorted(xs, min(x0, x1v, x2), side="left")
        ib = np.searchsorted(xs, max(x0, x1v, x2), side="right")
        ja = np.searchsorted(ys, min(y0, y1v, y2), side="left")
        jb = np.searchsorted(ys, max(y0, y1v, y2), side="right")
        for i in range(ia, ib):
            for j in range(ja, jb):
                px, py = xs[i], ys[j]
                w1 = ((px - x0) * (y2 - y0) - (py - y0) * (x2 - x0)) / det
                w2 = ((py - y0) * (x1v - x0) - (px - x0) * (y1v - y0)) / det
                w0 = 1.0 - w1 - w2
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                crossings[i][j].append(w0 * p0[2] + w1 * p1[2] + w2 * p2[2])
    occ = np.zeros((R, R, R), dtype=bool)
    for i in range(R):
        for j in range(R):
            cz = crossings[i][j]
            if not cz:
                continue
            below = np.searchsorted(np.sort(cz), zs, side="left")
            occ[i, j] = (below % 2) == 1
    return occ


def iou_meshes(mesh_a, mesh_b, resolution=128):
    """Volumetric IoU of two closed meshes on their joint bounding box."""
    lo = np.minimum(mesh_a.bounds()[0], mesh_b.bounds()[0]) - 1e-4
    hi = np.maximum(mesh_a.bounds()[1], mesh_b.bounds()[1]) + 1e-4
    a = mesh_occupancy_grid(mesh_a, lo, hi, resolution)
    b = mesh_occupancy_grid(mesh_b, lo, hi, resolution)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


# ---------------------------------------------------------------------------
# image consistency


def _bbox_cameras(mesh):
    """8 camera positions at the bounding-cuboid corners, aimed at the centroid."""
    lo, hi = mesh.bounds()
    centroid = mesh.vertices.mean(axis=0)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    return corners, centroid


def _view_basis(eye, target):
    fwd = target - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        fwd = np.array([0.0, 0.0, -1.0])
    else:
        fwd = fwd / n
    up = np.array([0.0, 0.0, 1.0])
    if abs(fwd @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    up = np.cross(right, fwd)
    return right, up, fwd


def render_view(mesh, eye, target, half_width, res=256):
    """Orthographic z-buffer render: (silhouette (res,res) bool, normals (res,res,3)).

    Normals are flat per-face unit normals of the frontmost face; background
    normals are zero (undefined).
    """
    right, up, fwd = _view_basis(eye, target)
    v = mesh.vertices - target
    px = (v @ right) / half_width  # [-1,1] across the image
    py = (v @ up) / half_width
    depth = v @ fwd

    n_vec, area = mesh.face_normals_areas()
    ok = area >= 1e-12
    unit_n = np.where(ok[:, None], n_vec / np.where(ok, area, 1.0)[:, None], 0.0)

    sil = np.zeros((res, res), dtype=bool)
    zbuf = np.full((res, res), np.inf)
    nmap = np.zeros((res, res, 3))
    tx = (px + 1.0) * 0.5 * (res - 1)
    ty = (py + 1.0) * 0.5 * (res - 1)
    tris = mesh.triangles
    for f in range(len(tris)):
        if not ok[f]:
            continue
        i0, i1, i2 = tris[f]
        x0, y0 = tx[i0], ty[i0]
        x1, y1 = tx[i1], ty[i1]
        x2, y2 = tx[i2], ty[i2]
        xmin = max(int(np.ceil(min(x0, x1, x2))), 0)
        xmax = min(int(np.floor(max(x0, x1, x2))), res - 1)
        ymin = max(int(np.ceil(min(y0, y1, y2))), 0)
        ymax = min(int(np.floor(max(y0, y1, y2))), res - 1)
        if xmin > xmax or ymin > ymax:
            continue
        det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(det) < 1e-12:
            continue
        xs = np.arange(xmin, xmax + 1)
        ys = np.arange(ymin, ymax + 1)
        PX, PY = np.meshgrid(xs, ys, indexing="ij")
        w1 = ((PX - x0) * (y2 - y0) - (PY - y0) * (x2 - x0)) / det
        w2 = ((PY - y0) * (x1 - x0) - (PX - x0) * (y1 - y0)) / det
        w0 = 1.0 - w1 - w2
        inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
        if not inside.any():
            continue
        z = w0 * depth[i0] + w1 * depth[i1] + w2 * depth[i2]
        sub = zbuf[xmin : xmax + 1, ymin : ymax + 1]
        closer = inside & (z < sub)
        sub[closer] = z[closer]
        sil[xmin : xmax + 1, ymin : ymax + 1][closer] = True
        nmap[xmin : xmax + 1, ymin : ymax + 1][closer] = unit_n[f]
    return sil, nmap


def image_consistency(mesh_a, mesh_b, res=256):
    """Mean over 8 bbox-corner views of (silhouette IoU x mean normal cosine).

    The cosine is averaged over pixels covered by both silhouettes; a view
    with empty silhouette intersection contributes 0.
    """
    if mesh_a.is_empty() or mesh_b.is_empty():
        raise ValueError("image consistency needs non-empty meshes")
    eyes_a, c_a = _bbox_cameras(mesh_a)
    lo = np.minimum(mesh_a.bounds()[0], mesh_b.bounds()[0])
    hi = np.maximum(mesh_a.bounds()[1], mesh_b.bounds()[1])
    half_width = 0.5 * float(np.max(hi - lo)) * 1.05  # margin avoids edge clipping
    scores = []
    for eye in eyes_a:
        sil_a, n_a = render_view(mesh_a, eye, c_a, half_width, res)
        sil_b, n_b = render_view(mesh_b, eye, c_a, half_width, res)
        union = np.count_nonzero(sil_a | sil_b)
        both = sil_a & sil_b
        if union == 0 or not both.any():
            scores.append(0.0)
            continue
        s_iou = np.count_nonzero(both) / union
        cos = np.sum(n_a[both] * n_b[both], axis=1)
        scores.append(s_iou * float(np.mean(cos)))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# set metrics


def _cd_matrix(gen_samples, ref_samples):
    return np.array([[chamfer(t, g) for g in gen_samples] for t in ref_samples])


def mmd(gen_samples, ref_samples):
    """Mean over references of the Chamfer distance to the closest generated."""
    if not gen_samples or not ref_samples:
        raise ValueError("empty sample set")
    d = _cd_matrix(gen_samples, ref_samples)
    return float(d.min(axis=1).mean())


def cov(gen_samples, ref_samples):
    """Fraction of references that are some generated shape's nearest match.

    Argmin ties break toward the lowest reference index.
    """
    if not gen_samples or not ref_samples:
        raise ValueError("empty sample set")
    d = _cd_matrix(gen_samples, ref_samples)
    matched = {int(np.argmin(d[:, j])) for j in range(d.shape[1])}
    return len(matched) / len(ref_samples)


# ---------------------------------------------------------------------------
# reporting


def report_csv(rows):
    """rows: list of dicts with shape_id, cd, iou, ic, piou (missing -> nan)."""
    lines = ["shape_id,CD,IoU,IC,pIoU"]
    for r in rows:
        lines.append(
            f"{r['shape_id']},{r.get('cd', float('nan')):.8g},"
            f"{r.get('iou', float('nan')):.8g},{r.get('ic', float('nan')):.8g},"
            f"{r.get('piou', float('nan')):.8g}"
        )
    return "\n".join(lines) + "\n"


def summary_block(mmd_value=None, cov_value=None):
    lines = ["== set metrics =="]
    if mmd_value is not None:
        lines.append(f"MMD: {mmd_value:.8g}")
    if cov_value is not None:
        lines.append(f"COV: {cov_value:.8g}")
    return "\n".join(lines) + "\n"
