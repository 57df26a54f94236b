"""Auto-decoding training: clamped-L1 SDF losses, non-intersection loss,
Adam over decoder weights and per-shape part latents.

The per-shape objective is

    L = L_sdf + L_part + L_inter + lam * sum_p ||z_p||^2

with the global prediction obtained by min-composition of the unclamped
part outputs, clamping applied inside the L1 terms. Poses come from the
dataset and are not optimized here.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import decoder as dec
from .geometry import Pose, quat_normalize


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 16
    points_per_shape: int = 8192
    lr_model: float = 5e-4
    lr_latent: float = 1e-3
    lr_decay: float = 0.35
    decay_milestones: tuple = (0.8, 0.9)
    lam: float = 1e-4  # latent L2 regularization weight
    clamp_delta: float = 0.1
    tau: float = 0.02  # non-intersection softmax temperature
    z_dim: int = 256
    hidden: int = 0  # 0 -> default_hidden(n_parts)
    use_conv: bool = True
    use_modulation: bool = True
    use_poses: bool = True
    use_inter_loss: bool = True
    inter_warmup_epochs: int = 0  # keep the overlap penalty off this long
    checkpoint_every: int = 0
    checkpoint_dir: str = ""

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.points_per_shape) < 1:
            raise ValueError("epochs, batch_size, points_per_shape must be positive")
        if min(self.lr_model, self.lr_latent, self.lam, self.clamp_delta, self.tau) <= 0:
            raise ValueError("rates and loss constants must be positive")
        if not all(0.0 < m < 1.0 for m in self.decay_milestones):
            raise ValueError("decay milestones must lie in (0, 1)")
        if self.inter_warmup_epochs < 0:
            raise ValueError("warmup must be >= 0")


# ---------------------------------------------------------------------------
# losses


def _clamp(v, delta):
    return np.clip(v, -delta, delta)


def loss_sdf(s_hat, s, delta):
    """Mean clamped-L1 between predicted and true global SDF."""
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s_hat.size == 0:
        raise ValueError("empty batch")
    return float(np.mean(np.abs(_clamp(s_hat, delta) - _clamp(s, delta))))


def loss_part(s_hat_parts, s, labels, delta):
    """Clamped-L1 on the part predicted at each point's nearest-part slot."""
    s_hat_parts = np.asarray(s_hat_parts, dtype=np.float64)
    if s_hat_parts.size == 0:
        raise ValueError("empty batch")
    picked = s_hat_parts[np.arange(len(s_hat_parts)), np.asarray(labels, dtype=np.intp)]
    return float(np.mean(np.abs(_clamp(picked, delta) - _clamp(s, delta))))


def _inter_weights(s_hat_parts, tau):
    """Softmax over negative part outputs (positive parts get weight 0)."""
    neg = s_hat_parts < 0.0
    any_neg = neg.any(axis=-1, keepdims=True)
    logits = np.where(neg, s_hat_parts / tau, -np.inf)
    m = np.max(np.where(any_neg, logits, 0.0), axis=-1, keepdims=True)
    e = np.where(neg, np.exp(np.where(neg, logits - m, 0.0)), 0.0)
    total = e.sum(axis=-1, keepdims=True)
    return np.divide(e, total, out=np.zeros_like(e), where=total > 0)


def loss_inter(s_hat_parts, tau):
    """Non-intersection loss over points where >= 2 parts are negative."""
    s_hat_parts = np.asarray(s_hat_parts, dtype=np.float64)
    mask = (s_hat_parts < 0.0).sum(axis=-1) >= 2
    if not np.any(mask):
        return 0.0
    sub = s_hat_parts[mask]
    w = _inter_weights(sub, tau)
    return float(np.mean(np.abs(np.sum(w * sub, axis=-1))))


def loss_total(s_hat_parts, s, labels, z, lam, delta, tau, use_inter=True):
    """Full per-shape objective and its components."""
    s_hat_parts = np.asarray(s_hat_parts, dtype=np.float64)
    s_global = dec.compose_min(s_hat_parts)
    parts = {
        "sdf": loss_sdf(s_global, s, delta),
        "part": loss_part(s_hat_parts, s, labels, delta) if labels is not None else 0.0,
        "inter": loss_inter(s_hat_parts, tau) if use_inter else 0.0,
        "reg": float(lam * np.sum(z * z)),
    }
    return sum(parts.values()), parts


def loss_upstream(s_hat_parts, s, labels, delta, tau, use_inter=True):
    """d(L_sdf + L_part + L_inter)/d s_hat_parts for one shape's points.

    The min-composition subgradient goes to the argmin slot, split equally
    on exact ties.
    """
    s_hat_parts = np.asarray(s_hat_parts, dtype=np.float64)
    n, P = s_hat_parts.shape
    up = np.zeros_like(s_hat_parts)
    s = np.asarray(s, dtype=np.float64)

    # L_sdf through the min
    s_global = s_hat_parts.min(axis=-1)
    dsg = np.sign(_clamp(s_global, delta) - _clamp(s, delta)) * (np.abs(s_global) < delta) / n
    is_min = s_hat_parts == s_global[:, None]
    share = is_min / is_min.sum(axis=-1, keepdims=True)
    up += dsg[:, None] * share

    # L_part on the labeled slot (skipped in part-agnostic fitting)
    if labels is not None:
        idx = np.arange(n)
        lab = np.asarray(labels, dtype=np.intp)
        picked = s_hat_parts[idx, lab]
        dpart = np.sign(_clamp(picked, delta) - _clamp(s, delta)) * (np.abs(picked) < delta) / n
        np.add.at(up, (idx, lab), dpart)

    # L_inter (selection set treated as fixed)
    if use_inter:
        mask = (s_hat_parts < 0.0).sum(axis=-1) >= 2
        m = int(mask.sum())
        if m:
            sub = s_hat_parts[mask]
            w = _inter_weights(sub, tau)
            v = np.sum(w * sub, axis=-1, keepdims=True)
            dv = w + (w / tau) * (sub - v) * (sub < 0.0)
            up[mask] += np.sign(v) * dv / m
    return up


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(tensors):
        return AdamState(
            m={k: np.zeros_like(a) for k, a in tensors.items()},
            v={k: np.zeros_like(a) for k, a in tensors.items()},
        )


def adam_step(tensors, grads, state, lr):
    """Standard bias-corrected Adam update, in place on `tensors`."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for k, p in tensors.items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        p -= lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + state.eps)
    return tensors


# ---------------------------------------------------------------------------
# latent / pose table


@dataclass
class LatentTable:
    z: np.ndarray  # (S, P, Z)
    q: np.ndarray  # (S, P, 4)
    t: np.ndarray  # (S, P, 3)
    s: np.ndarray  # (S, P, 3)
    present: np.ndarray  # (S, P) bool
    shape_ids: list = field(default_factory=list)

    @property
    def n_shapes(self):
        return len(self.z)

    def poses_of(self, i):
        return (self.q[i], self.t[i], self.s[i])

    def entry(self, i):
        return self.z[i], self.poses_of(i)

    def copy(self):
        return LatentTable(
            self.z.copy(), self.q.copy(), self.t.copy(), self.s.copy(),
            self.present.copy(), list(self.shape_ids),
        )


def average_pose(q, t, s, present):
    """Slot-wise dataset-average pose over shapes where the slot exists.

    Quaternions are averaged by normalized component mean (adequate for
    near-aligned poses); translations and scales by arithmetic mean.
    """
    if not np.any(present):
        return np.array([1.0, 0, 0, 0]), np.zeros(3), np.ones(3)
    qm = q[present]
    # align signs to the first quaternion before averaging
    signs = np.where(qm @ qm[0] < 0, -1.0, 1.0)
    q_avg = quat_normalize((qm * signs[:, None]).mean(axis=0))
    return q_avg, t[present].mean(axis=0), s[present].mean(axis=0)


def build_latent_table(shapes, z_dim, seed):
    """Initial latents ~ N(0, I/Z) and dataset poses; absent slots carry the
    slot's average pose over the shapes where it exists."""
    rng = np.random.default_rng(seed)
    S = len(shapes)
    P = shapes[0].n_slots
    z = rng.normal(scale=1.0 / np.sqrt(z_dim), size=(S, P, z_dim))
    q = np.zeros((S, P, 4))
    t = np.zeros((S, P, 3))
    s = np.ones((S, P, 3))
    present = np.zeros((S, P), dtype=bool)
    for i, shape in enumerate(shapes):
        for j, part in shape.present_parts():
            pose = part.pose()
            q[i, j], t[i, j], s[i, j] = pose.q, pose.t, pose.s
            present[i, j] = True
    for j in range(P):
        qa, ta, sa = average_pose(q[:, j], t[:, j], s[:, j], present[:, j])
        absent = ~present[:, j]
        q[absent, j], t[absent, j], s[absent, j] = qa, ta, sa
    return LatentTable(z, q, t, s, present, [sh.shape_id for sh in shapes])


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainingSet:
    shapes: list  # CompositeShape
    samples: list  # SdfSampleSet, one per shape

    def __post_init__(self):
        if not self.shapes:
            raise ValueError("empty dataset")
        if len(self.shapes) != len(self.samples):
            raise ValueError("shapes and samples must align")


def train(dataset, config, seed, on_epoch=None):
    """Jointly optimize decoder weights and per-shape latents.

    Returns (DecoderParams, LatentTable, history) where history is a list of
    per-epoch dicts (epoch, sdf, part, inter, reg, lr).
    """
    cfg = config
    P = dataset.shapes[0].n_slots
    hidden = cfg.hidden or dec.default_hidden(P)
    dcfg = dec.DecoderConfig(
        z_dim=cfg.z_dim, hidden=hidden, n_parts=P,
        use_conv=cfg.use_conv, use_modulation=cfg.use_modulation, use_poses=cfg.use_poses,
    )
    rng = np.random.default_rng(seed)
    params = dec.init_params(dcfg, seed=rng.integers(2**31))
    table = build_latent_table(dataset.shapes, cfg.z_dim, rng.integers(2**31))

    model_state = AdamState.for_params(params.tensors)
    latent_state = AdamState.for_params({"z": table.z})
    S = len(dataset.shapes)
    milestones = {int(m * cfg.epochs) for m in cfg.decay_milestones}
    lr_scale = 1.0
    history = []

    for epoch in range(cfg.epochs):
        if epoch in milestones:
            lr_scale *= cfg.lr_decay
        # With the overlap penalty active from the start, part ownership of
        # contested regions is decided by init noise and a losing part can be
        # pinned out of its own region for good. A short warmup lets the
        # per-part supervision settle the partition first.
        use_inter = cfg.use_inter_loss and epoch >= cfg.inter_warmup_epochs
        order = rng.permutation(S)
        totals = {"sdf": 0.0, "part": 0.0, "inter": 0.0, "reg": 0.0}
        n_batches = 0
        for start in range(0, S, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            model_grads = params.zeros_like()
            z_grads = np.zeros_like(table.z)
            B = len(batch)
            for i in batch:
                smp = dataset.samples[i]
                n_take = min(cfg.points_per_shape, len(smp))
                idx = rng.choice(len(smp), size=n_take, replace=False)
                pts, sdf, lab = smp.points[idx], smp.sdf[idx], smp.part_label[idx]
                z_i, poses_i = table.entry(i)
                s_hat, cache = dec.forward(params, z_i, poses_i, pts, want_cache=True)
                total, parts = loss_total(
                    s_hat, sdf, lab, z_i, cfg.lam, cfg.clamp_delta, cfg.tau,
                    use_inter=use_inter,
                )
                if not np.isfinite(total):
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch}, shape {i}: {parts}"
                    )
                for k in totals:
                    totals[k] += parts[k]
                up = loss_upstream(
                    s_hat, sdf, lab, cfg.clamp_delta, cfg.tau, use_inter=use_inter
                ) / B
                g = dec.backward(params, z_i, poses_i, pts, up, cache=cache)
                for k in model_grads:
                    model_grads[k] += g.params[k]
                z_grads[i] = g.z + (2.0 * cfg.lam / B) * z_i
            adam_step(params.tensors, model_grads, model_state, cfg.lr_model * lr_scale)
            adam_step({"z": table.z}, {"z": z_grads}, latent_state, cfg.lr_latent * lr_scale)
            n_batches += 1
        row = {k: v / S for k, v in totals.items()}
        row.update(epoch=epoch, lr=cfg.lr_model * lr_scale)
        history.append(row)
        if on_epoch is not None:
            on_epoch(epoch, row, params, table)
        if cfg.checkpoint_every and cfg.checkpoint_dir and (epoch + 1) % cfg.checkpoint_every == 0:
            from .io import save_checkpoint

            save_checkpoint(f"{cfg.checkpoint_dir}/epoch_{epoch + 1:05d}.psdf", params, table)
    return params, table, history


def history_csv(history):
    lines = ["epoch,L_sdf,L_part,L_inter,reg,lr"]
    for row in history:
        lines.append(
            f"{row['epoch']},{row['sdf']:.8g},{row['part']:.8g},"
            f"{row['inter']:.8g},{row['reg']:.8g},{row['lr']:.8g}"
        )
    return "\n".join(lines) + "\n"
