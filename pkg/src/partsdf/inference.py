"""Frozen-decoder usage: latent/pose fitting, interpolation, part edits.

The decoder weights never change here. A shape is a per-slot latent plus a
per-slot pose; fitting runs Adam on those against SDF samples, interpolation
blends two such states, and edit scripts patch individual slots while
leaving every untouched slot bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import decoder as dec
from .geometry import Pose, quat_canonical, quat_normalize, slerp
from .training import AdamState, adam_step, average_pose, loss_total, loss_upstream


@dataclass
class ShapeState:
    """One shape under a trained decoder: per-slot latents and poses."""

    z: np.ndarray  # (P, Z)
    q: np.ndarray  # (P, 4)
    t: np.ndarray  # (P, 3)
    s: np.ndarray  # (P, 3)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)
        self.s = np.asarray(self.s, dtype=np.float64)
        P = len(self.z)
        if not (len(self.q) == len(self.t) == len(self.s) == P):
            raise ValueError("slot counts disagree")

    @property
    def n_parts(self):
        return len(self.z)

    def poses(self):
        return (self.q, self.t, self.s)

    def copy(self):
        return ShapeState(self.z.copy(), self.q.copy(), self.t.copy(), self.s.copy())

    @staticmethod
    def from_table(table, i):
        return ShapeState(table.z[i].copy(), table.q[i].copy(),
                          table.t[i].copy(), table.s[i].copy())


def mean_state(table):
    """Training-set mean latent and slot-wise mean pose; the default fit init."""
    P = table.z.shape[1]
    z = table.z.mean(axis=0)
    q = np.zeros((P, 4))
    t = np.zeros((P, 3))
    s = np.ones((P, 3))
    for j in range(P):
        q[j], t[j], s[j] = average_pose(
            table.q[:, j], table.t[:, j], table.s[:, j], table.present[:, j]
        )
    return ShapeState(z, q, t, s)


@dataclass
class FitConfig:
    iterations: int = 500
    lr_latent: float = 1e-3
    lr_pose: float = 1e-3
    lam: float = 1e-4
    clamp_delta: float = 0.1
    tau: float = 0.02
    use_part_loss: bool = True
    use_inter_loss: bool = True
    optimize_poses: bool = True
    points_per_step: int = 8192

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if min(self.lr_latent, self.lr_pose, self.lam, self.clamp_delta, self.tau) <= 0:
            raise ValueError("rates and loss constants must be positive")


def fit_shape(params, samples, cfg, init=None, table=None, seed=0):
    """Auto-decode a new shape: optimize latents (and poses) on SDF samples.

    The decoder stays frozen. init defaults to the training-set mean state
    (requires table). Aborts with RuntimeError if the loss exceeds 10x its
    initial value. Returns (ShapeState, history list of loss dicts).
    """
    if init is None:
        if table is None:
            raise ValueError("need either an init state or the training table")
        init = mean_state(table)
    state = init.copy()
    rng = np.random.default_rng(seed)

    vars_ = {"z": state.z}
    if cfg.optimize_poses:
        vars_.update(q=state.q, t=state.t, s=state.s)
    adam = AdamState.for_params(vars_)

    labels_all = samples.part_label if cfg.use_part_loss else None
    loss0 = None
    history = []
    for it in range(cfg.iterations):
        n_take = min(cfg.points_per_step, len(samples))
        idx = rng.choice(len(samples), size=n_take, replace=False)
        pts, sdf = samples.points[idx], samples.sdf[idx]
        lab = labels_all[idx] if labels_all is not None else None

        s_hat, cache = dec.forward(params, state.z, state.poses(), pts, want_cache=True)
        total, parts = loss_total(
            s_hat, sdf, lab, state.z, cfg.lam, cfg.clamp_delta, cfg.tau,
            use_inter=cfg.use_inter_loss,
        )
        if loss0 is None:
            loss0 = total
        if not np.isfinite(total) or total > 10.0 * loss0:
            raise RuntimeError(f"fit diverged at step {it}: loss {total:g} vs initial {loss0:g}")
        up = loss_upstream(s_hat, sdf, lab, cfg.clamp_delta, cfg.tau,
                           use_inter=cfg.use_inter_loss)
        g = dec.backward(params, state.z, state.poses(), pts, up, cache=cache)

        grads = {"z": g.z + 2.0 * cfg.lam * state.z}
        if cfg.optimize_poses:
            grads.update(q=g.q, t=g.t, s=g.s)
        # single Adam state; latent vs pose rates applied per tensor
        adam.t += 1
        for k in vars_:
            lr = cfg.lr_latent if k == "z" else cfg.lr_pose
            _adam_tensor(vars_[k], grads[k], adam, k, lr)
        if cfg.optimize_poses:
            for p in range(state.n_parts):
                state.q[p] = quat_canonical(quat_normalize(state.q[p]))
            np.clip(state.s, 1e-3, None, out=state.s)
        history.append(dict(parts, total=total, step=it))
    return state, history


def _adam_tensor(p, g, state, k, lr):
    b1, b2 = state.beta1, state.beta2
    state.m[k] = b1 * state.m[k] + (1 - b1) * g
    state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    p -= lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + state.eps)


def interpolate(a, b, u):
    """Blend two shape states: lerp latents/translations/scales, slerp rotations."""
    if a.n_parts != b.n_parts:
        raise ValueError("part counts differ")
    u = float(u)
    q = np.stack([slerp(a.q[p], b.q[p], u) for p in range(a.n_parts)])
    return ShapeState(
        (1.0 - u) * a.z + u * b.z, q,
        (1.0 - u) * a.t + u * b.t, (1.0 - u) * a.s + u * b.s,
    )


# ---------------------------------------------------------------------------
# edit scripts

_POSE_FIELDS = {
    "q.w": ("q", 0), "q.x": ("q", 1), "q.y": ("q", 2), "q.z": ("q", 3),
    "t.x": ("t", 0), "t.y": ("t", 1), "t.z": ("t", 2),
    "s.x": ("s", 0), "s.y": ("s", 1), "s.z": ("s", 2),
}


@dataclass
class EditScript:
    """Ordered slot edits parsed from line-oriented text.

    Commands (one per line, '#' comments):
        set_latent <slot> <file.lat>
        set_pose <slot> <field> <value>     field in q.wxyz / t.xyz / s.xyz
        lerp_latent <slot> <file.lat> <u>
    """

    edits: list = field(default_factory=list)  # (op, slot, payload...)

    @staticmethod
    def parse(text):
        from .io import load_latents

        edits = []
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                if tok[0] == "set_latent" and len(tok) == 3:
                    edits.append(("set_latent", int(tok[1]), load_latents(tok[2])[0]))
                elif tok[0] == "set_pose" and len(tok) == 4:
                    if tok[2] not in _POSE_FIELDS:
                        raise ValueError(f"unknown pose field '{tok[2]}'")
                    edits.append(("set_pose", int(tok[1]), tok[2], float(tok[3])))
                elif tok[0] == "lerp_latent" and len(tok) == 4:
                    u = float(tok[3])
                    edits.append(("lerp_latent", int(tok[1]), load_latents(tok[2])[0], u))
                else:
                    raise ValueError(f"unknown command '{tok[0]}'")
            except (ValueError, OSError) as e:
                raise ValueError(f"edit script line {ln}: {e}") from e
        return EditScript(edits)

    @staticmethod
    def load(path):
        with open(path) as f:
            return EditScript.parse(f.read())


def apply_edits(state, script):
    """Apply an EditScript in order; untouched slots stay bit-identical."""
    out = state.copy()
    for edit in script.edits:
        op, slot = edit[0], edit[1]
        if not 0 <= slot < out.n_parts:
            raise ValueError(f"edit slot {slot} out of range for {out.n_parts} parts")
        if op == "set_latent":
            z = np.asarray(edit[2], dtype=np.float64)
            if z.shape != out.z[slot].shape:
                raise ValueError(f"latent length {z.shape} != {out.z[slot].shape}")
            out.z[slot] = z
        elif op == "set_pose":
            name, comp = _POSE_FIELDS[edit[2]]
            getattr(out, name)[slot, comp] = edit[3]
            if name == "s" and out.s[slot, comp] <= 0:
                raise ValueError(f"edit made scale non-positive on slot {slot}")
            if name == "q":
                nq = np.linalg.norm(out.q[slot])
                if nq < 1e-9:
                    raise ValueError(f"edit made quaternion degenerate on slot {slot}")
                out.q[slot] = quat_canonical(out.q[slot] / nq)
        elif op == "lerp_latent":
            z = np.asarray(edit[2], dtype=np.float64)
            u = edit[3]
            out.z[slot] = (1.0 - u) * out.z[slot] + u * z
        else:
            raise ValueError(f"unknown edit op '{op}'")
    return out
