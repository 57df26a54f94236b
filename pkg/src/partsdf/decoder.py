"""Part-conditioned SDF decoder: forward evaluation and exact gradients.

The network maps a query point to one signed distance per part slot. Each
part's query is first canonicalized by that part's pose, then passed through
8 weight-normalized fully-connected layers modulated by the part latent
(relu(W x + b + Wz z_p + bp[p])), with a cross-part mixing layer wrapped in
a residual connection between consecutive FC layers:

    u   = W a + b + Wz z_p + bp[p]          (per part, shared W)
    c   = u + (w_conv @_parts u + b_conv)    (mixing across part slots)
    a'  = relu(c)

The output layer emits one raw (unclamped) value per part and has no
nonlinearity and no mixing after it. Everything is float64; backward() is
hand-written reverse mode and is finite-difference exact, including
gradients w.r.t. pose quaternions, translations, scales, and query points.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import quat_to_matrix, quat_to_matrix_jac

N_LAYERS = 8


def default_hidden(n_parts):
    """Hidden width: 512, reduced to 256 for many-part models."""
    return 256 if n_parts >= 8 else 512


@dataclass(frozen=True)
class DecoderConfig:
    z_dim: int = 256
    hidden: int = 512
    n_parts: int = 5
    use_conv: bool = True
    use_modulation: bool = True
    use_poses: bool = True

    def layer_dims(self):
        dims = [(3, self.hidden)]
        dims += [(self.hidden, self.hidden)] * (N_LAYERS - 2)
        dims += [(self.hidden, 1)]
        return dims


def _param_spec(cfg):
    """Ordered (name, shape) pairs; also the checkpoint tensor order."""
    spec = []
    for l, (din, dout) in enumerate(cfg.layer_dims()):
        spec.append((f"fc{l}.V", (dout, din)))
        spec.append((f"fc{l}.b", (dout,)))
        spec.append((f"fc{l}.Wz", (dout, cfg.z_dim)))
        spec.append((f"fc{l}.bp", (cfg.n_parts, dout)))
        spec.append((f"fc{l}.g", (dout,)))
    for l in range(N_LAYERS - 1):
        spec.append((f"conv{l}.w", (cfg.n_parts, cfg.n_parts)))
        spec.append((f"conv{l}.b", (cfg.n_parts,)))
    return spec


@dataclass
class DecoderParams:
    config: DecoderConfig
    tensors: dict  # name -> float64 ndarray, ordered per _param_spec

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self):
        return DecoderParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self):
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


def init_params(cfg, seed=0):
    """Identity-like start: FC weights Gaussian with std 1/sqrt(fan_in) and
    weight-norm gains equal to the initial row norms; per-part biases and
    mixing filters start at zero so parts begin fully independent."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _param_spec(cfg):
        if name.endswith(".V"):
            tensors[name] = rng.normal(scale=1.0 / np.sqrt(shape[1]), size=shape)
        elif name.endswith(".Wz"):
            tensors[name] = rng.normal(scale=1.0 / np.sqrt(cfg.z_dim), size=shape)
        else:
            tensors[name] = np.zeros(shape)
    for l in range(N_LAYERS):
        V = tensors[f"fc{l}.V"]
        tensors[f"fc{l}.g"] = np.linalg.norm(V, axis=1)
    # Start the output layer near zero so every part field begins inside the
    # clamp band of the L1 losses. A part whose initial field exceeds +delta
    # over its own region receives no part-loss gradient there and can stay
    # empty forever; near-zero outputs keep all parts trainable from step 1.
    # The latent modulation of the output layer matters as much as the weight
    # path: unscaled, z @ Wz.T adds a random per-part constant of std 1/sqrt(Z).
    tensors[f"fc{N_LAYERS - 1}.g"] *= 1e-2
    tensors[f"fc{N_LAYERS - 1}.Wz"] *= 1e-2
    return DecoderParams(cfg, tensors)


def randomize_params(cfg, seed=0, scale=0.5):
    """Fully random parameters (incl. mixing filters); for gradient tests."""
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed=seed)
    for name, v in params.tensors.items():
        if name.endswith((".b", ".bp")) or name.startswith("conv"):
            params.tensors[name] = v + rng.normal(scale=scale, size=v.shape)
        elif name.endswith(".g"):
            params.tensors[name] = np.abs(v) + 0.1  # gains stay positive
    return params


def _effective_weight(V, g):
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    return (g[:, None] / norms) * V


def _effective_weight_backward(V, g, dW):
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    dot = np.sum(dW * V, axis=1, keepdims=True)
    dV = (g[:, None] / norms) * dW - (g[:, None] * dot / norms**3) * V
    dg = (dot / norms)[:, 0]
    return dV, dg


# ---------------------------------------------------------------------------
# pose canonicalization (vectorized over parts, batched over points)


def _canonicalize(x, pose_arrays, use_poses=True):
    """x (N,3) -> xhat (N,P,3) plus cached rotations and local offsets."""
    q, t, s = pose_arrays  # (P,4), (P,3), (P,3)
    P = len(q)
    N = len(x)
    if not use_poses:
        xhat = np.broadcast_to(x[:, None, :], (N, P, 3)).copy()
        return xhat, None
    R = np.stack([quat_to_matrix(qi) for qi in q])  # (P,3,3)
    d = x[:, None, :] - t[None, :, :]  # (N,P,3)
    y = np.einsum("npi,pij->npj", d, R)
    xhat = y / s[None, :, :]
    return xhat, (R, d, y)


def _canonicalize_backward(dxhat, x, pose_arrays, cache):
    q, t, s = pose_arrays
    if cache is None:  # poses ablated
        return dxhat.sum(axis=1), np.zeros_like(q), np.zeros_like(t), np.zeros_like(s)
    R, d, y = cache
    dy = dxhat / s[None, :, :]
    ds = -np.sum(dxhat * y, axis=0) / s**2
    dd = np.einsum("npj,pij->npi", dy, R)
    dx = dd.sum(axis=1)
    dt = -dd.sum(axis=0)
    dR = np.einsum("npi,npj->pij", d, dy)
    dq = np.stack([np.einsum("ij,ijk->k", dR[p], quat_to_matrix_jac(q[p])) for p in range(len(q))])
    return dx, dq, dt, ds


def poses_to_arrays(poses):
    """List of geometry.Pose -> (q, t, s) stacked float64 arrays."""
    q = np.stack([p.q for p in poses]).astype(np.float64)
    t = np.stack([p.t for p in poses]).astype(np.float64)
    s = np.stack([p.s for p in poses]).astype(np.float64)
    return q, t, s


def _pose_arrays(cfg, poses):
    if poses is None:
        if cfg.use_poses:
            raise ValueError("poses required unless pose canonicalization is ablated")
        P = cfg.n_parts
        return (np.tile([1.0, 0, 0, 0], (P, 1)), np.zeros((P, 3)), np.ones((P, 3)))
    return poses if isinstance(poses, tuple) else poses_to_arrays(poses)


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class ForwardCache:
    x: np.ndarray
    xhat: np.ndarray
    pose_cache: object
    acts: list  # layer inputs a_l, l = 0..7 (a_0 = xhat)
    pre_conv: list  # u_l for the 7 mixing layers
    zmods: list


def _zmod(params, z, l):
    if not params.config.use_modulation and l > 0:
        return 0.0
    return z @ params[f"fc{l}.Wz"].T  # (P, dout)


def forward_core(params, z, xhat, want_cache=False):
    """Decoder trunk on canonicalized points xhat (N,P,3), z (P,Z) -> (N,P)."""
    cfg = params.config
    acts = [xhat]
    pre_conv = []
    zmods = []
    a = xhat
    for l in range(N_LAYERS):
        W = _effective_weight(params[f"fc{l}.V"], params[f"fc{l}.g"])
        zm = _zmod(params, z, l)
        zmods.append(zm)
        u = a @ W.T + params[f"fc{l}.b"] + zm + params[f"fc{l}.bp"]
        if l == N_LAYERS - 1:
            a = u
            break
        pre_conv.append(u if cfg.use_conv else None)
        if cfg.use_conv:
            w, bc = params[f"conv{l}.w"], params[f"conv{l}.b"]
            u = u + np.einsum("pq,nqd->npd", w, u) + bc[None, :, None]
        a = np.maximum(u, 0.0)
        acts.append(a)
    out = a[..., 0]
    if want_cache:
        return out, ForwardCache(None, xhat, None, acts, pre_conv, zmods)
    return out


def backward_core(params, z, cache, upstream):
    """Reverse-mode through the trunk. upstream (N,P) weights on outputs.

    Returns (param grads dict, dz (P,Z), dxhat (N,P,3)).
    """
    cfg = params.config
    grads = params.zeros_like()
    dz = np.zeros_like(z)
    da = upstream[..., None]  # (N,P,1) gradient w.r.t. output layer activation
    for l in reversed(range(N_LAYERS)):
        if l < N_LAYERS - 1:
            post = cache.acts[l + 1]
            dc = da * (post > 0.0)
            if cfg.use_conv:
                # c = u + w @_parts u + b
                w = params[f"conv{l}.w"]
                du = dc + np.einsum("pq,npd->nqd", w, dc)
                grads[f"conv{l}.w"] += np.einsum("npd,nqd->pq", dc, cache.pre_conv[l])
                grads[f"conv{l}.b"] += dc.sum(axis=(0, 2))
            else:
                du = dc
        else:
            du = da
        a_in = cache.acts[l]
        V, g = params[f"fc{l}.V"], params[f"fc{l}.g"]
        W = _effective_weight(V, g)
        dW = np.einsum("npo,npi->oi", du, a_in)
        dV, dg = _effective_weight_backward(V, g, dW)
        grads[f"fc{l}.V"] += dV
        grads[f"fc{l}.g"] += dg
        du_p = du.sum(axis=0)  # (P, dout)
        grads[f"fc{l}.b"] += du_p.sum(axis=0)
        grads[f"fc{l}.bp"] += du_p
        if cfg.use_modulation or l == 0:
            grads[f"fc{l}.Wz"] += np.einsum("po,pz->oz", du_p, z)
            dz += du_p @ params[f"fc{l}.Wz"]
        da = du @ W  # (N,P,din)
    return grads, dz, da


def forward(params, z, poses, x, want_cache=False):
    """Per-part raw SDF predictions at scene points x (...,3) -> (...,P)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    pose_arrays = _pose_arrays(params.config, poses)
    xhat, pcache = _canonicalize(x, pose_arrays, params.config.use_poses)
    if want_cache:
        out, cache = forward_core(params, z, xhat, want_cache=True)
        cache.x = x
        cache.pose_cache = pcache
        return out, cache
    return forward_core(params, z, xhat)


@dataclass
class Gradients:
    params: dict  # name -> grad array
    z: np.ndarray  # (P, Z)
    q: np.ndarray  # (P, 4)
    t: np.ndarray  # (P, 3)
    s: np.ndarray  # (P, 3)
    x: np.ndarray  # (N, 3)


def backward(params, z, poses, x, upstream, cache=None):
    """Gradients of sum(upstream * forward(params, z, poses, x))."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    pose_arrays = _pose_arrays(params.config, poses)
    if cache is None:
        _, cache = forward(params, z, pose_arrays, x, want_cache=True)
    grads, dz, dxhat = backward_core(params, z, cache, upstream)
    dx, dq, dt, ds = _canonicalize_backward(dxhat, x, pose_arrays, cache.pose_cache)
    return Gradients(params=grads, z=dz, q=dq, t=dt, s=ds, x=dx)


def batch_forward(params, z, poses, X, chunk=65536, dtype=np.float64):
    """forward() over many points, evaluated in fixed-size chunks.

    dtype=float32 is allowed for large grid evaluations; results then carry
    single precision but identical chunking keeps them reproducible.
    """
    X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
    pose_arrays = _pose_arrays(params.config, poses)
    out = np.empty((len(X), params.config.n_parts), dtype=np.float64)
    if dtype == np.float64:
        for i in range(0, len(X), chunk):
            out[i : i + chunk] = forward(params, z, pose_arrays, X[i : i + chunk])
        return out
    params32 = DecoderParams(
        params.config, {k: v.astype(np.float32) for k, v in params.tensors.items()}
    )
    z32 = z.astype(np.float32)
    for i in range(0, len(X), chunk):
        xhat, _ = _canonicalize(X[i : i + chunk], pose_arrays, params.config.use_poses)
        out[i : i + chunk] = forward_core(params32, z32, xhat.astype(np.float32))
    return out


def compose_min(s_parts, present=None):
    """Union SDF: min over all part slots (absent slots included; the model
    is trained to emit positive values there)."""
    s_parts = np.asarray(s_parts)
    if s_parts.shape[-1] < 1:
        raise ValueError("need at least one part")
    return s_parts.min(axis=-1)


def slice_parts(params, z, poses, idx):
    """Restrict a no-conv decoder to a subset of part slots.

    Valid only without cross-part mixing, where each slot's output is
    independent of the others; the sliced model then reproduces those
    slots' outputs exactly.
    """
    cfg = params.config
    if cfg.use_conv:
        raise ValueError("part slicing requires use_conv=False")
    idx = np.asarray(idx, dtype=np.intp)
    new_cfg = replace(cfg, n_parts=len(idx))
    tensors = {}
    for name, v in params.tensors.items():
        if name.endswith(".bp"):
            tensors[name] = v[idx]
        elif name.startswith("conv"):
            tensors[name] = v[np.ix_(idx, idx)] if name.endswith(".w") else v[idx]
        else:
            tensors[name] = v
    pose_arrays = _pose_arrays(params.config, poses)
    return (
        DecoderParams(new_cfg, tensors),
        z[idx],
        tuple(a[idx] for a in pose_arrays),
    )


def permute_parts(params, z, poses, perm):
    """Relabel part slots consistently; outputs permute identically."""
    perm = np.asarray(perm)
    out = params.copy()
    for l in range(N_LAYERS):
        out.tensors[f"fc{l}.bp"] = params[f"fc{l}.bp"][perm]
    for l in range(N_LAYERS - 1):
        out.tensors[f"conv{l}.w"] = params[f"conv{l}.w"][np.ix_(perm, perm)]
        out.tensors[f"conv{l}.b"] = params[f"conv{l}.b"][perm]
    z2 = z[perm]
    poses2 = [poses[i] for i in perm] if isinstance(poses, list) else tuple(a[perm] for a in poses)
    return out, z2, poses2
