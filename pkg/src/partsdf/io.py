"""Binary artifact formats.

Checkpoint (.psdf): magic "PSDF", version, ablation flag bits, dims
(Z, hidden, P, n_layers), decoder tensors in declaration order, then the
training-set latent/pose table. All tensors are float64 little-endian;
presence flags are u8.

Latent file (.lat): magic "PLAT", version, (n, Z), float64 rows.
"""

from __future__ import annotations

import struct

import numpy as np

from . import decoder as dec
from .training import LatentTable

_CKPT_MAGIC = b"PSDF"
_CKPT_VERSION = 1
_LAT_MAGIC = b"PLAT"
_LAT_VERSION = 1


def _flags(cfg):
    return (cfg.use_conv << 0) | (cfg.use_modulation << 1) | (cfg.use_poses << 2)


def _write_array(f, a):
    f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_array(f, shape):
    n = int(np.prod(shape))
    a = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape)
    return a.astype(np.float64)


def save_checkpoint(path, params, table=None):
    cfg = params.config
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(
            struct.pack(
                "<IIIIIII",
                _CKPT_VERSION,
                _flags(cfg),
                cfg.z_dim,
                cfg.hidden,
                cfg.n_parts,
                dec.N_LAYERS,
                0 if table is None else table.n_shapes,
            )
        )
        for name, _ in dec._param_spec(cfg):
            _write_array(f, params[name])
        if table is not None:
            _write_array(f, table.z)
            _write_array(f, table.q)
            _write_array(f, table.t)
            _write_array(f, table.s)
            f.write(table.present.astype("u1").tobytes())
            ids = "\n".join(table.shape_ids).encode()
            f.write(struct.pack("<I", len(ids)))
            f.write(ids)


def load_checkpoint(path):
    """Returns (DecoderParams, LatentTable or None)."""
    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a PSDF checkpoint")
        version, flags, z_dim, hidden, n_parts, n_layers, n_shapes = struct.unpack(
            "<IIIIIII", f.read(28)
        )
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        if n_layers != dec.N_LAYERS:
            raise ValueError(f"{path}: layer count mismatch")
        cfg = dec.DecoderConfig(
            z_dim=z_dim,
            hidden=hidden,
            n_parts=n_parts,
            use_conv=bool(flags & 1),
            use_modulation=bool(flags & 2),
            use_poses=bool(flags & 4),
        )
        tensors = {}
        for name, shape in dec._param_spec(cfg):
            tensors[name] = _read_array(f, shape)
        params = dec.DecoderParams(cfg, tensors)
        table = None
        if n_shapes:
            z = _read_array(f, (n_shapes, n_parts, z_dim))
            q = _read_array(f, (n_shapes, n_parts, 4))
            t = _read_array(f, (n_shapes, n_parts, 3))
            s = _read_array(f, (n_shapes, n_parts, 3))
            present = np.frombuffer(f.read(n_shapes * n_parts), dtype="u1")
            present = present.reshape(n_shapes, n_parts).astype(bool)
            (id_len,) = struct.unpack("<I", f.read(4))
            raw = f.read(id_len).decode()
            ids = raw.split("\n") if raw else []
            table = LatentTable(z, q, t, s, present, ids)
    return params, table


def save_latents(path, z):
    """z: (Z,) single latent or (n, Z) rows."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    with open(path, "wb") as f:
        f.write(_LAT_MAGIC)
        f.write(struct.pack("<III", _LAT_VERSION, z.shape[0], z.shape[1]))
        _write_array(f, z)


def load_latents(path):
    with open(path, "rb") as f:
        if f.read(4) != _LAT_MAGIC:
            raise ValueError(f"{path}: not a PLAT latent file")
        version, n, z_dim = struct.unpack("<III", f.read(12))
        if version != _LAT_VERSION:
            raise ValueError(f"{path}: unsupported latent file version {version}")
        return _read_array(f, (n, z_dim))
