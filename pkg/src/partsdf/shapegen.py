"""Procedural composite shapes with exact analytic part SDFs.

Shapes are unions of rigidly-posed primitives. Every part carries two
things: an exact signed distance evaluated in its rigid local frame, and a
decoder pose whose scale is the primitive's half-extent. Scene SDFs stay
exact because part placement uses rotation+translation only (sizes live in
the primitive parameters).

Families (fixed slot semantics):
  barbell: capsule bar, sphere left end, sphere right end       (3 slots)
  table:   box slab + 4 box legs                                (5 slots)
  rocket:  cylinder body, cone nose, 3 box fins                 (5 slots)
  car:     box body + 4 capsule wheels                          (5 slots)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, quat_from_axis_angle, quat_to_matrix

FAMILIES = ("barbell", "table", "rocket", "car")

# slots that generate_dataset may drop to exercise the missing-part rule
OPTIONAL_SLOTS = {
    "barbell": (2,),
    "table": (4,),
    "rocket": (3, 4),
    "car": (),
}


# ---------------------------------------------------------------------------
# analytic primitives (local-frame exact SDFs, iquilezles-style formulas)


def _sdf_sphere(p, params):
    return np.linalg.norm(p, axis=-1) - params["radius"]


def _sdf_box(p, params):
    d = np.abs(p) - params["half"]
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
    inside = np.minimum(np.max(d, axis=-1), 0.0)
    return outside + inside


def _sdf_capsule(p, params):
    # segment along z from -h to +h, radius r
    h, r = params["half_length"], params["radius"]
    q = p.copy()
    q[..., 2] = q[..., 2] - np.clip(q[..., 2], -h, h)
    return np.linalg.norm(q, axis=-1) - r


def _sdf_cylinder(p, params):
    h, r = params["half_length"], params["radius"]
    dr = np.linalg.norm(p[..., :2], axis=-1) - r
    dz = np.abs(p[..., 2]) - h
    outside = np.sqrt(np.maximum(dr, 0.0) ** 2 + np.maximum(dz, 0.0) ** 2)
    inside = np.minimum(np.maximum(dr, dz), 0.0)
    return outside + inside


def _sdf_cone(p, params):
    # capped cone along z: base radius r at z=-h, apex radius 0 at z=+h
    h, r = params["half_length"], params["radius"]
    q = np.stack([np.linalg.norm(p[..., :2], axis=-1), p[..., 2]], axis=-1)
    k1 = np.array([0.0, h])
    k2 = np.array([-r, 2.0 * h])
    qx, qy = q[..., 0], q[..., 1]
    # distance to the slanted side segment and to the base disk edge
    ca_x = qx - np.minimum(qx, np.where(qy < 0.0, r, 0.0))
    ca_y = np.abs(qy) - h
    t = np.clip(((k1[0] - qx) * k2[0] + (k1[1] - qy) * k2[1]) / (k2 @ k2), 0.0, 1.0)
    cb_x = qx - k1[0] + k2[0] * t
    cb_y = qy - k1[1] + k2[1] * t
    inside = (cb_x < 0.0) & (ca_y < 0.0)
    s = np.where(inside, -1.0, 1.0)
    d2 = np.minimum(ca_x**2 + ca_y**2, cb_x**2 + cb_y**2)
    return s * np.sqrt(d2)


_SDF = {
    "sphere": _sdf_sphere,
    "box": _sdf_box,
    "capsule": _sdf_capsule,
    "cylinder": _sdf_cylinder,
    "cone": _sdf_cone,
}


def _half_extent(primitive, params):
    """Local-frame half-extents, also used as the decoder pose scale."""
    if primitive == "sphere":
        r = params["radius"]
        return np.array([r, r, r])
    if primitive == "box":
        return np.asarray(params["half"], dtype=np.float64).copy()
    if primitive == "capsule":
        h, r = params["half_length"], params["radius"]
        return np.array([r, r, h + r])
    if primitive in ("cylinder", "cone"):
        h, r = params["half_length"], params["radius"]
        return np.array([r, r, h])
    raise ValueError(f"unknown primitive: {primitive!r}")


@dataclass
class AnalyticPart:
    primitive: str
    q: np.ndarray
    t: np.ndarray
    params: dict

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).reshape(4)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        for k, v in self.params.items():
            if np.any(np.asarray(v, dtype=np.float64) <= 0):
                raise ValueError(f"primitive parameter {k} must be positive")

    def sdf(self, x):
        """Exact signed distance of posed primitive at scene points x."""
        x = np.asarray(x, dtype=np.float64)
        R = quat_to_matrix(self.q)
        local = (x - self.t) @ R
        return _SDF[self.primitive](local, self.params)

    def pose(self):
        """Decoder pose: rigid placement with half-extent scale."""
        return Pose(q=self.q, t=self.t, s=_half_extent(self.primitive, self.params))

    def bounds(self):
        """Axis-aligned scene-space bounding box (lo, hi)."""
        half = _half_extent(self.primitive, self.params)
        R = quat_to_matrix(self.q)
        # extent of the rotated local box: |R| @ half
        ext = np.abs(R) @ half
        return self.t - ext, self.t + ext

    def surface_area(self):
        p = self.params
        if self.primitive == "sphere":
            return 4 * np.pi * p["radius"] ** 2
        if self.primitive == "box":
            a, b, c = 2 * np.asarray(p["half"])
            return 2 * (a * b + b * c + a * c)
        if self.primitive == "capsule":
            return 2 * np.pi * p["radius"] * 2 * p["half_length"] + 4 * np.pi * p["radius"] ** 2
        if self.primitive == "cylinder":
            return 2 * np.pi * p["radius"] * 2 * p["half_length"] + 2 * np.pi * p["radius"] ** 2
        if self.primitive == "cone":
            r, h = p["radius"], 2 * p["half_length"]
            return np.pi * r * np.sqrt(r * r + h * h) + np.pi * r * r
        raise ValueError(self.primitive)

    def sample_surface(self, n, rng):
        """n points uniform by area on the posed primitive surface."""
        local = _sample_surface_local(self.primitive, self.params, n, rng)
        R = quat_to_matrix(self.q)
        return local @ R.T + self.t

    def copy(self):
        return AnalyticPart(self.primitive, self.q.copy(), self.t.copy(), dict(self.params))


def _sample_surface_local(primitive, params, n, rng):
    if primitive == "sphere":
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * params["radius"]
    if primitive == "box":
        half = np.asarray(params["half"], dtype=np.float64)
        areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
        areas = np.repeat(areas, 2)  # +x, -x, +y, -y, +z, -z
        face = rng.choice(6, size=n, p=areas / areas.sum())
        u = rng.uniform(-1, 1, size=(n, 3)) * half
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        u[np.arange(n), axis] = sign * half[axis]
        return u
    if primitive == "capsule":
        h, r = params["half_length"], params["radius"]
        a_side = 2 * np.pi * r * 2 * h
        a_caps = 4 * np.pi * r * r
        on_side = rng.uniform(size=n) < a_side / (a_side + a_caps)
        phi = rng.uniform(0, 2 * np.pi, size=n)
        pts = np.empty((n, 3))
        z = rng.uniform(-h, h, size=n)
        pts[:, 0] = r * np.cos(phi)
        pts[:, 1] = r * np.sin(phi)
        pts[:, 2] = z
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        caps = v * r
        caps[:, 2] = np.abs(caps[:, 2]) * np.sign(rng.uniform(-1, 1, size=n))
        caps[:, 2] += np.where(caps[:, 2] >= 0, h, -h)
        pts[~on_side] = caps[~on_side]
        return pts
    if primitive == "cylinder":
        h, r = params["half_length"], params["radius"]
        a_side = 2 * np.pi * r * 2 * h
        a_cap = np.pi * r * r
        which = rng.choice(3, size=n, p=np.array([a_side, a_cap, a_cap]) / (a_side + 2 * a_cap))
        phi = rng.uniform(0, 2 * np.pi, size=n)
        rad = r * np.sqrt(rng.uniform(size=n))
        pts = np.empty((n, 3))
        side = which == 0
        pts[:, 0] = np.where(side, r, rad) * np.cos(phi)
        pts[:, 1] = np.where(side, r, rad) * np.sin(phi)
        pts[:, 2] = np.where(side, rng.uniform(-h, h, size=n), np.where(which == 1, h, -h))
        return pts
    if primitive == "cone":
        h, r = params["half_length"], params["radius"]
        slant = np.sqrt(r * r + (2 * h) ** 2)
        a_side = np.pi * r * slant
        a_base = np.pi * r * r
        on_side = rng.uniform(size=n) < a_side / (a_side + a_base)
        phi = rng.uniform(0, 2 * np.pi, size=n)
        pts = np.empty((n, 3))
        # side: radius fraction sqrt(u) for uniform-by-area along the slant
        f = np.sqrt(rng.uniform(size=n))
        pts[:, 0] = f * r * np.cos(phi)
        pts[:, 1] = f * r * np.sin(phi)
        pts[:, 2] = h - f * 2 * h
        rad = r * np.sqrt(rng.uniform(size=n))
        base = np.stack([rad * np.cos(phi), rad * np.sin(phi), np.full(n, -h)], axis=1)
        pts[~on_side] = base[~on_side]
        return pts
    raise ValueError(primitive)


# ---------------------------------------------------------------------------
# composite shapes


@dataclass
class CompositeShape:
    family_id: str
    parts: list  # AnalyticPart or None per slot
    shape_id: str = ""

    def __post_init__(self):
        if not any(p is not None for p in self.parts):
            raise ValueError("composite shape needs at least one part")

    @property
    def n_slots(self):
        return len(self.parts)

    def present(self):
        return np.array([p is not None for p in self.parts], dtype=bool)

    def present_parts(self):
        return [(i, p) for i, p in enumerate(self.parts) if p is not None]

    def bounds(self):
        los, his = zip(*(p.bounds() for _, p in self.present_parts()))
        return np.min(los, axis=0), np.max(his, axis=0)

    def part_sdfs(self, x):
        """(..., n_slots) part SDFs; absent slots are +inf."""
        x = np.asarray(x, dtype=np.float64)
        out = np.full(x.shape[:-1] + (self.n_slots,), np.inf)
        for i, p in self.present_parts():
            out[..., i] = p.sdf(x)
        return out

    def copy(self):
        return CompositeShape(
            self.family_id,
            [p.copy() if p is not None else None for p in self.parts],
            self.shape_id,
        )


def shape_sdf(shape, x):
    """Union SDF and nearest-part label: (min_p sdf_p, argmin_p sdf_p).

    The label follows the signed projection-distance rule: outside points go
    to the closest part, interior points to the part they are deepest inside;
    ties break to the lowest slot index.
    """
    sdfs = shape.part_sdfs(x)
    return sdfs.min(axis=-1), sdfs.argmin(axis=-1)


def part_region_label(shape, x):
    """Nearest-part slot index at x (argmin of signed part SDFs)."""
    return shape.part_sdfs(x).argmin(axis=-1)


def normalize_shape(shape):
    """Center the bounding box at the origin and scale its longest edge to 1.8.

    The same similarity transform is applied to every part (idempotent for
    already-normalized shapes).
    """
    lo, hi = shape.bounds()
    extent = hi - lo
    if np.max(extent) < 1e-12:
        raise ValueError("degenerate shape bounding box")
    center = (lo + hi) / 2.0
    k = 1.8 / np.max(extent)
    out = shape.copy()
    for _, p in out.present_parts():
        p.t[:] = (p.t - center) * k
        for key in p.params:
            if key == "half":
                p.params[key] = np.asarray(p.params[key], dtype=np.float64) * k
            else:
                p.params[key] = p.params[key] * k
    return out


# ---------------------------------------------------------------------------
# families

_IDQ = np.array([1.0, 0.0, 0.0, 0.0])
_QX = quat_from_axis_angle([0, 1, 0], np.pi / 2)  # local z -> scene x


def _make_barbell(rng):
    bar_r = rng.uniform(0.06, 0.12)
    bar_h = rng.uniform(0.45, 0.7)
    r1 = rng.uniform(0.18, 0.3)
    r2 = rng.uniform(0.18, 0.3)
    parts = [
        AnalyticPart("capsule", _QX, [0, 0, 0], {"half_length": bar_h, "radius": bar_r}),
        AnalyticPart("sphere", _IDQ, [-bar_h, 0, 0], {"radius": r1}),
        AnalyticPart("sphere", _IDQ, [bar_h, 0, 0], {"radius": r2}),
    ]
    return parts


def _make_table(rng):
    top_w = rng.uniform(0.5, 0.8)
    top_d = rng.uniform(0.35, 0.65)
    top_t = rng.uniform(0.04, 0.09)
    leg_h = rng.uniform(0.25, 0.5)
    leg_w = rng.uniform(0.035, 0.07)
    inset = rng.uniform(1.2, 2.2) * leg_w
    parts = [
        AnalyticPart("box", _IDQ, [0, 0, leg_h + top_t], {"half": np.array([top_w, top_d, top_t])})
    ]
    for sx in (-1, 1):
        for sy in (-1, 1):
            t = [sx * (top_w - inset), sy * (top_d - inset), leg_h / 2]
            parts.append(
                AnalyticPart("box", _IDQ, t, {"half": np.array([leg_w, leg_w, leg_h / 2 + top_t])})
            )
    return parts


def _make_rocket(rng):
    body_r = rng.uniform(0.12, 0.2)
    body_h = rng.uniform(0.4, 0.6)
    nose_h = rng.uniform(0.15, 0.3)
    fin_l = rng.uniform(0.12, 0.2)
    fin_w = rng.uniform(0.015, 0.03)
    fin_h = rng.uniform(0.15, 0.25)
    parts = [
        AnalyticPart("cylinder", _IDQ, [0, 0, 0], {"half_length": body_h, "radius": body_r}),
        AnalyticPart(
            "cone", _IDQ, [0, 0, body_h + nose_h], {"half_length": nose_h, "radius": body_r}
        ),
    ]
    for k in range(3):
        ang = 2 * np.pi * k / 3
        q = quat_from_axis_angle([0, 0, 1], ang)
        R = quat_to_matrix(q)
        t = R @ np.array([body_r + fin_l * 0.6, 0.0, -body_h + fin_h])
        parts.append(
            AnalyticPart("box", q, t, {"half": np.array([fin_l, fin_w, fin_h])})
        )
    return parts


def _make_car(rng):
    body_l = rng.uniform(0.55, 0.8)
    body_h = rng.uniform(0.14, 0.22)
    body_w = rng.uniform(0.2, 0.3)
    wheel_r = rng.uniform(0.09, 0.14)
    wheel_w = rng.uniform(0.03, 0.05)
    wb = rng.uniform(0.55, 0.75) * body_l
    parts = [
        AnalyticPart(
            "box", _IDQ, [0, 0, wheel_r * 0.7 + body_h],
            {"half": np.array([body_l, body_w, body_h])},
        )
    ]
    # wheels: capsules along y (axle direction), slight squash via short length
    for sx in (-1, 1):
        for sy in (-1, 1):
            t = [sx * wb, sy * body_w, wheel_r]
            q = quat_from_axis_angle([1, 0, 0], np.pi / 2)  # local z -> scene y
            parts.append(
                AnalyticPart("capsule", q, t, {"half_length": wheel_w, "radius": wheel_r})
            )
    return parts


_MAKERS = {
    "barbell": _make_barbell,
    "table": _make_table,
    "rocket": _make_rocket,
    "car": _make_car,
}


def generate_dataset(family, n_shapes, seed, missing_fraction=0.2):
    """Deterministic list of normalized composite shapes for one family."""
    if family not in _MAKERS:
        raise ValueError(f"unknown family: {family!r}")
    if n_shapes < 1:
        raise ValueError("n_shapes must be >= 1")
    rng = np.random.default_rng(seed)
    shapes = []
    for i in range(n_shapes):
        parts = _MAKERS[family](rng)
        drop = rng.uniform() < missing_fraction
        optional = OPTIONAL_SLOTS[family]
        if drop and optional:
            slot = optional[rng.integers(len(optional))]
            parts[slot] = None
        shape = CompositeShape(family, parts, shape_id=f"{family}_{i:04d}")
        shapes.append(normalize_shape(shape))
    return shapes


# ---------------------------------------------------------------------------
# SDF training samples


@dataclass
class SdfSampleSet:
    points: np.ndarray  # (N, 3)
    sdf: np.ndarray  # (N,)
    part_label: np.ndarray  # (N,) uint32
    n_slots: int
    n_near: int = 0
    n_uniform: int = 0

    def __len__(self):
        return len(self.points)


def sample_sdf(shape, n, seed, near_fraction=0.95, variances=(0.005, 0.0005)):
    """SDF supervision samples: near-surface Gaussian-perturbed + uniform.

    95% of points are surface samples (uniform by area over present parts)
    perturbed with isotropic Gaussian noise, half at each variance; the rest
    are uniform in [-1, 1]^3. Each point carries the union SDF and its
    nearest-part slot.
    """
    if n < 20:
        raise ValueError("need n >= 20 for a representable near/uniform split")
    rng = np.random.default_rng(seed)
    n_near = int(round(near_fraction * n))
    n_uni = n - n_near

    idx, parts = zip(*shape.present_parts())
    areas = np.array([p.surface_area() for p in parts])
    counts = rng.multinomial(n_near, areas / areas.sum())
    surf = np.concatenate(
        [p.sample_surface(c, rng) if c else np.zeros((0, 3)) for p, c in zip(parts, counts)]
    )
    rng.shuffle(surf, axis=0)
    n_a = n_near // 2
    noise = np.empty((n_near, 3))
    noise[:n_a] = rng.normal(scale=np.sqrt(variances[0]), size=(n_a, 3))
    noise[n_a:] = rng.normal(scale=np.sqrt(variances[1]), size=(n_near - n_a, 3))
    near = surf + noise
    uni = rng.uniform(-1.0, 1.0, size=(n_uni, 3))
    points = np.concatenate([near, uni])
    sdf, label = shape_sdf(shape, points)
    return SdfSampleSet(
        points=points,
        sdf=sdf,
        part_label=label.astype(np.uint32),
        n_slots=shape.n_slots,
        n_near=n_near,
        n_uniform=n_uni,
    )


# ---------------------------------------------------------------------------
# serialization

_SAMPLE_MAGIC = b"PSMP"
_SAMPLE_VERSION = 1
_REC_DTYPE = np.dtype([("p", "<f8", 3), ("s", "<f8"), ("l", "<u4")])


def save_samples(path, samples):
    with open(path, "wb") as f:
        f.write(_SAMPLE_MAGIC)
        f.write(struct.pack("<IIQ", _SAMPLE_VERSION, samples.n_slots, len(samples)))
        rec = np.empty(len(samples), dtype=_REC_DTYPE)
        rec["p"] = samples.points
        rec["s"] = samples.sdf
        rec["l"] = samples.part_label
        f.write(rec.tobytes())


def load_samples(path):
    with open(path, "rb") as f:
        if f.read(4) != _SAMPLE_MAGIC:
            raise ValueError(f"{path}: not a PSMP sample file")
        version, n_slots, n = struct.unpack("<IIQ", f.read(16))
        if version != _SAMPLE_VERSION:
            raise ValueError(f"{path}: unsupported PSMP version {version}")
        rec = np.frombuffer(f.read(n * _REC_DTYPE.itemsize), dtype=_REC_DTYPE)
    return SdfSampleSet(
        points=rec["p"].astype(np.float64),
        sdf=rec["s"].astype(np.float64),
        part_label=rec["l"].copy(),
        n_slots=n_slots,
    )


def save_shape(path, shape):
    """Human-readable key=value description of a composite shape."""
    lines = [f"family={shape.family_id}", f"shape_id={shape.shape_id}",
             f"n_slots={shape.n_slots}"]
    for i, p in enumerate(shape.parts):
        if p is None:
            lines.append(f"part{i}.present=0")
            continue
        lines.append(f"part{i}.present=1")
        lines.append(f"part{i}.primitive={p.primitive}")
        lines.append(f"part{i}.q=" + " ".join(repr(float(v)) for v in p.q))
        lines.append(f"part{i}.t=" + " ".join(repr(float(v)) for v in p.t))
        for k in sorted(p.params):
            v = p.params[k]
            if np.ndim(v):
                lines.append(f"part{i}.param.{k}=" + " ".join(repr(float(x)) for x in v))
            else:
                lines.append(f"part{i}.param.{k}={float(v)!r}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_shape(path):
    kv = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            kv[k] = v
    n = int(kv["n_slots"])
    parts = []
    for i in range(n):
        if kv[f"part{i}.present"] == "0":
            parts.append(None)
            continue
        params = {}
        prefix = f"part{i}.param."
        for k, v in kv.items():
            if k.startswith(prefix):
                vals = [float(x) for x in v.split()]
                params[k[len(prefix):]] = np.array(vals) if len(vals) > 1 else vals[0]
        parts.append(
            AnalyticPart(
                kv[f"part{i}.primitive"],
                [float(x) for x in kv[f"part{i}.q"].split()],
                [float(x) for x in kv[f"part{i}.t"].split()],
                params,
            )
        )
    return CompositeShape(kv["family"], parts, shape_id=kv.get("shape_id", ""))
