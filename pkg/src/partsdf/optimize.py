"""Part-constrained shape optimization against a mesh-level drag objective.

The aerodynamic surrogate is the Newtonian impact model: windward faces see
pressure p = 2 q_inf max(0, -n.v)^2, leeward faces none. Drag is the flow-axis
component of the integrated pressure force and the frontal area of a closed
mesh is A = 0.5 * sum |n_x| dS, so the drag coefficient and its vertex
gradients are fully analytic. Any other per-face pressure model with the same
(pressure, d pressure/d vertices) interface can be substituted.

The outer loop re-extracts the mesh every iteration, treats connectivity as
fixed within the step, chains vertex gradients into latents and poses, and
never touches frozen part slots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import decoder as dec
from . import meshing as msh
from .geometry import quat_canonical, quat_normalize
from .training import AdamState


@dataclass
class ObjectiveConfig:
    flow_direction: tuple = (1.0, 0.0, 0.0)
    q_inf: float = 1.0
    frozen_slots: tuple = ()
    w_knn: float = 0.0
    knn_k: int = 5
    w_init_latent: float = 0.0
    w_init_pose: float = 0.0
    iterations: int = 200
    resolution: int = 64
    lr: float = 1e-3
    grid_dtype: object = np.float64

    def __post_init__(self):
        v = np.asarray(self.flow_direction, dtype=np.float64)
        n = np.linalg.norm(v)
        if not np.isfinite(n) or n < 1e-12:
            raise ValueError("flow direction must be a nonzero vector")
        self.flow_direction = tuple(v / n)
        if self.q_inf <= 0:
            raise ValueError("dynamic pressure must be positive")
        if min(self.w_knn, self.w_init_latent, self.w_init_pose) < 0:
            raise ValueError("regularizer weights must be >= 0")
        if self.iterations < 0 or self.resolution < 8 or self.lr <= 0:
            raise ValueError("bad iteration count, resolution, or learning rate")


def _face_geometry(mesh, flow):
    """Per-face (n_vec, area, c) with n_vec the area-weighted normal and
    c = n_vec . flow (signed projected area)."""
    n_vec, area = mesh.face_normals_areas()
    return n_vec, area, n_vec @ flow


def surface_pressure(mesh, cfg):
    """Newtonian per-face pressure; zero on leeward and degenerate faces."""
    flow = np.asarray(cfg.flow_direction)
    _, area, c = _face_geometry(mesh, flow)
    ok = area >= 1e-12
    cosw = np.where(ok, np.minimum(c, 0.0) / np.where(ok, area, 1.0), 0.0)
    return 2.0 * cfg.q_inf * cosw * cosw


def pressure_drag(mesh, pressures, flow_direction):
    """Flow-axis force from an arbitrary per-face pressure field.

    drag = sum_faces -(n . v) p dS; zero for constant pressure on any
    closed mesh (discrete divergence identity).
    """
    flow = np.asarray(flow_direction, dtype=np.float64)
    _, _, c = _face_geometry(mesh, flow)
    return float(-np.sum(c * np.asarray(pressures)))


def drag_coefficient(mesh, cfg):
    """(C_d, dC_d/dvertices) for a closed, outward-oriented mesh.

    drag = sum_faces -(n.v) p dS, frontal area A = 0.5 sum |n.v| dS,
    C_d = drag / (q_inf A). Gradients are exact for the Newtonian model
    with the face set treated as fixed.
    """
    if mesh.is_empty():
        raise ValueError("empty mesh")
    flow = np.asarray(cfg.flow_direction)
    v = mesh.vertices
    t = mesh.triangles
    n_vec, area, c = _face_geometry(mesh, flow)
    ok = area >= 1e-12
    wind = ok & (c < 0.0)

    # drag_f = -2 q c^3 / area^2 on windward faces
    q = cfg.q_inf
    drag = float(-2.0 * q * np.sum(c[wind] ** 3 / area[wind] ** 2))
    A = float(0.5 * np.sum(np.abs(c[ok])))
    if A < 1e-9:
        raise ValueError("frontal area vanishes; flow direction degenerate for this mesh")
    cd = drag / (q * A)

    # chain rule through c = n_vec.flow and area = |n_vec|
    d_drag_dc = np.where(wind, -6.0 * q * c**2 / np.where(ok, area, 1.0) ** 2, 0.0)
    d_drag_darea = np.where(wind, 4.0 * q * c**3 / np.where(ok, area, 1.0) ** 3, 0.0)
    dA_dc = np.where(ok, 0.5 * np.sign(c), 0.0)

    dcd_dc = (d_drag_dc + drag / A * (-dA_dc)) / (q * A)
    dcd_darea = d_drag_darea / (q * A)

    e1 = v[t[:, 1]] - v[t[:, 0]]
    e2 = v[t[:, 2]] - v[t[:, 0]]
    unit_n = n_vec / np.where(ok, area, 1.0)[:, None]
    # c = 0.5 det(flow, e1, e2); area responds along the unit normal
    g1 = 0.5 * (dcd_dc[:, None] * np.cross(e2, flow[None, :])
                + dcd_darea[:, None] * np.cross(e2, unit_n))
    g2 = 0.5 * (dcd_dc[:, None] * np.cross(flow[None, :], e1)
                + dcd_darea[:, None] * np.cross(unit_n, e1))
    grad = np.zeros_like(v)
    np.add.at(grad, t[:, 1], g1)
    np.add.at(grad, t[:, 2], g2)
    np.add.at(grad, t[:, 0], -(g1 + g2))
    return cd, grad


def knn_latent_reg(z, table_z, k=5):
    """Squared distance from z to the mean of its k nearest training latents.

    The neighbor set is treated as fixed, so the gradient is 2 (z - mean).
    """
    table_z = np.asarray(table_z, dtype=np.float64)
    if len(table_z) < k:
        raise ValueError(f"need at least k={k} table entries, got {len(table_z)}")
    _, idx = cKDTree(table_z).query(z, k=k)
    mean = table_z[np.atleast_1d(idx)].mean(axis=0)
    diff = z - mean
    return float(diff @ diff), 2.0 * diff


@dataclass
class OptimReport:
    history: list  # per-iteration dicts
    state_init: object  # ShapeState before
    state_final: object  # ShapeState after
    mesh_init: object
    mesh_final: object
    aborted: bool = False

    def csv(self):
        lines = ["iter,objective,cd,reg_knn,reg_init,max_disp"]
        for r in self.history:
            lines.append(
                f"{r['iter']},{r['objective']:.8g},{r['cd']:.8g},"
                f"{r['reg_knn']:.8g},{r['reg_init']:.8g},{r['max_disp']:.8g}"
            )
        return "\n".join(lines) + "\n"


def pressure_csv(mesh, cfg):
    """Per-face pressure sidecar for external visualization."""
    p = surface_pressure(mesh, cfg)
    lines = ["face,pressure"]
    lines += [f"{i},{pi:.8g}" for i, pi in enumerate(p)]
    return "\n".join(lines) + "\n"


def _global_grid(params, state, cfg, frozen_part_vals):
    """Global SDF grid, reusing cached frozen-slot grids when possible."""
    P = params.config.n_parts
    free = [p for p in range(P) if p not in cfg.frozen_slots]
    if frozen_part_vals is None or not free:
        grid, part_vals = msh.eval_grid(
            params, state.z, state.poses(), cfg.resolution, dtype=cfg.grid_dtype
        )
        return grid.values, part_vals
    sub_params, sub_z, sub_poses = dec.slice_parts(params, state.z, state.poses(), free)
    pts = msh.grid_points(cfg.resolution)
    R = cfg.resolution
    s_free = dec.batch_forward(sub_params, sub_z, sub_poses, pts, dtype=cfg.grid_dtype)
    part_vals = frozen_part_vals.copy()
    part_vals[..., free] = s_free.reshape(R, R, R, len(free))
    return part_vals.min(axis=-1), part_vals


def _vertex_owners(part_vals, verts):
    """Argmin part slot at mesh vertices, trilinearly interpolated from the
    per-part grid the mesh was extracted from.

    Used only to route vertex gradients to slots; a vertex near an exact
    part tie may be assigned either way, where the min-composition
    subgradient choice is arbitrary anyway.
    """
    R = part_vals.shape[0]
    h = 2.0 / (R - 1)
    u = (np.asarray(verts, dtype=np.float64) + 1.0) / h
    i0 = np.clip(np.floor(u).astype(np.intp), 0, R - 2)
    f = u - i0
    acc = np.zeros((len(u), part_vals.shape[-1]))
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = ((f[:, 0] if dx else 1.0 - f[:, 0])
                     * (f[:, 1] if dy else 1.0 - f[:, 1])
                     * (f[:, 2] if dz else 1.0 - f[:, 2]))
                acc += w[:, None] * part_vals[i0[:, 0] + dx, i0[:, 1] + dy,
                                              i0[:, 2] + dz]
    return acc.argmin(axis=-1)


def optimize_shape(params, init, cfg, table=None):
    """Minimize C_d plus regularizers over the non-frozen part slots.

    init is a ShapeState; table (LatentTable) supplies the kNN latent prior
    when cfg.w_knn > 0. The decoder and all frozen slots stay bit-identical.
    Returns an OptimReport; an empty mesh mid-run aborts with the last good
    state.
    """
    P = params.config.n_parts
    for slot in cfg.frozen_slots:
        if not 0 <= slot < P:
            raise ValueError(f"frozen slot {slot} out of range")
    if cfg.w_knn > 0 and table is None:
        raise ValueError("kNN regularizer needs the training latent table")
    free = np.array([p for p in range(P) if p not in cfg.frozen_slots], dtype=np.intp)

    state = init.copy()
    state0 = init.copy()
    vars_ = {"z": state.z, "q": state.q, "t": state.t, "s": state.s}
    adam = AdamState.for_params(vars_)

    # frozen part grids depend only on frozen slots; cacheable without mixing
    frozen_part_vals = None
    if len(cfg.frozen_slots) and not params.config.use_conv and len(free):
        _, part_vals = msh.eval_grid(
            params, state.z, state.poses(), cfg.resolution, dtype=cfg.grid_dtype
        )
        frozen_part_vals = part_vals

    history = []
    mesh_init = None
    last_mesh = None
    aborted = False
    for it in range(cfg.iterations + 1):
        grid_vals, part_vals = _global_grid(params, state, cfg, frozen_part_vals)
        mesh = msh.marching_cubes(msh.SdfGrid(grid_vals))
        if mesh.is_empty():
            if it == 0:
                raise ValueError("initial shape has no surface inside the grid")
            aborted = True
            break
        if it == 0:
            mesh_init = mesh
        last_mesh = mesh

        cd, dcd_dv = drag_coefficient(mesh, cfg)

        reg_knn = 0.0
        g_knn = np.zeros_like(state.z)
        if cfg.w_knn > 0:
            for p in free:
                val, gz = knn_latent_reg(state.z[p], table.z[:, p, :], k=cfg.knn_k)
                reg_knn += val
                g_knn[p] = gz
        dz0 = state.z - state0.z
        dq0 = state.q - state0.q
        dt0 = state.t - state0.t
        ds0 = state.s - state0.s
        reg_init = cfg.w_init_latent * float(np.sum(dz0 * dz0)) + cfg.w_init_pose * float(
            np.sum(dq0 * dq0) + np.sum(dt0 * dt0) + np.sum(ds0 * ds0)
        )
        objective = cd + cfg.w_knn * reg_knn + reg_init
        max_disp = float(
            max(np.abs(dz0).max(), np.abs(dq0).max(), np.abs(dt0).max(), np.abs(ds0).max())
        )
        history.append(dict(iter=it, objective=objective, cd=cd,
                            reg_knn=reg_knn, reg_init=reg_init, max_disp=max_disp))
        if it == cfg.iterations:
            break

        if frozen_part_vals is not None:
            # Without mixing layers, a vertex owned by a frozen slot feeds
            # gradient only into that slot, which is zeroed below. Restrict
            # the two backward passes to free-slot vertices through the
            # sliced decoder instead of running them at full part count.
            owners = _vertex_owners(part_vals, mesh.vertices)
            sel = np.isin(owners, free)
            sub_params, sub_z, sub_poses = dec.slice_parts(
                params, state.z, state.poses(), list(free))
            g_sub, _ = msh.vertex_sensitivities(
                sub_params, sub_z, sub_poses, mesh.vertices[sel], dcd_dv[sel])
            g = dec.Gradients(params={}, z=np.zeros_like(state.z),
                              q=np.zeros_like(state.q), t=np.zeros_like(state.t),
                              s=np.zeros_like(state.s), x=None)
            g.z[free], g.q[free] = g_sub.z, g_sub.q
            g.t[free], g.s[free] = g_sub.t, g_sub.s
        else:
            g, _ = msh.vertex_sensitivities(
                params, state.z, state.poses(), mesh.vertices, dcd_dv)
        grads = {
            "z": g.z + cfg.w_knn * g_knn + 2.0 * cfg.w_init_latent * dz0,
            "q": g.q + 2.0 * cfg.w_init_pose * dq0,
            "t": g.t + 2.0 * cfg.w_init_pose * dt0,
            "s": g.s + 2.0 * cfg.w_init_pose * ds0,
        }
        for slot in cfg.frozen_slots:
            for k in grads:
                grads[k][slot] = 0.0
        adam.t += 1
        b1, b2 = adam.beta1, adam.beta2
        c1 = 1.0 - b1**adam.t
        c2 = 1.0 - b2**adam.t
        for k, p_arr in vars_.items():
            gk = grads[k]
            adam.m[k] = b1 * adam.m[k] + (1 - b1) * gk
            adam.v[k] = b2 * adam.v[k] + (1 - b2) * gk * gk
            step = cfg.lr * (adam.m[k] / c1) / (np.sqrt(adam.v[k] / c2) + adam.eps)
            p_arr[free] -= step[free]
        for p in free:
            state.q[p] = quat_canonical(quat_normalize(state.q[p]))
            np.clip(state.s[p], 1e-3, None, out=state.s[p])

    return OptimReport(history, state0, state, mesh_init, last_mesh, aborted=aborted)
