"""Command-line entry point and run plumbing.

One binary with subcommands (make-data, train, fit, mesh, interpolate,
edit, optimize, eval) sharing a flat key=value config with documented
defaults. Every run writes a manifest (config snapshot, seed, artifact
checksums, timings) atomically at the end, and all randomness is seeded
from the config, never the clock.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import decoder as dec
from . import meshing as msh
from . import metrics as met
from . import optimize as opt
from . import shapegen as sg
from .inference import EditScript, FitConfig, ShapeState, apply_edits, fit_shape, interpolate
from .io import load_checkpoint, load_latents, save_checkpoint, save_latents
from .training import TrainConfig, TrainingSet, history_csv, train

# ---------------------------------------------------------------------------
# configuration

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_bool(s):
    try:
        return _BOOL[s.lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got '{s}'")


def _parse_int_list(s):
    return tuple(int(x) for x in s.split(",")) if s else ()


def _parse_float_list(s):
    return tuple(float(x) for x in s.split(",")) if s else ()


# key -> (parser, default, help)
CONFIG_SCHEMA = {
    # dataset
    "family": (str, "barbell", "shape family: barbell | table | rocket | car"),
    "n_shapes": (int, 20, "number of shapes to generate"),
    "seed": (int, 0, "master seed for every command"),
    "missing_fraction": (float, 0.2, "fraction of shapes dropping an optional part"),
    "samples_per_shape": (int, 20000, "precomputed SDF samples per shape"),
    # training
    "epochs": (int, 2000, "training epochs"),
    "batch_size": (int, 16, "shapes per batch"),
    "points_per_shape": (int, 8192, "sample subset per shape per epoch"),
    "lr_model": (float, 5e-4, "decoder learning rate"),
    "lr_latent": (float, 1e-3, "latent learning rate"),
    "lr_decay": (float, 0.35, "step decay factor"),
    "decay_milestones": (_parse_float_list, (0.8, 0.9), "decay points as epoch fractions"),
    "lam": (float, 1e-4, "latent L2 regularization weight"),
    "clamp_delta": (float, 0.1, "SDF clamping distance"),
    "tau": (float, 0.02, "non-intersection softmax temperature"),
    "z_dim": (int, 256, "part latent dimension"),
    "hidden": (int, 0, "decoder width (0 = automatic)"),
    "use_conv": (_parse_bool, True, "cross-part mixing layers"),
    "use_modulation": (_parse_bool, True, "latent modulation at every layer"),
    "use_poses": (_parse_bool, True, "pose canonicalization of queries"),
    "use_inter_loss": (_parse_bool, True, "non-intersection loss"),
    "inter_warmup_epochs": (int, 0, "epochs before the non-intersection loss turns on"),
    "checkpoint_every": (int, 0, "epochs between checkpoints (0 = final only)"),
    # fitting
    "fit_iterations": (int, 500, "latent fitting steps"),
    "fit_lr_latent": (float, 1e-3, "fitting latent learning rate"),
    "fit_lr_pose": (float, 1e-3, "fitting pose learning rate"),
    "fit_use_part_loss": (_parse_bool, True, "use part labels when fitting"),
    "fit_use_inter_loss": (_parse_bool, True, "non-intersection loss when fitting"),
    "fit_optimize_poses": (_parse_bool, True, "fit poses as well as latents"),
    "fit_points_per_step": (int, 8192, "sample subset per fitting step"),
    # meshing
    "mesh_resolution": (int, 256, "marching cubes grid resolution"),
    "mesh_f32": (_parse_bool, False, "evaluate large grids in float32"),
    # optimization
    "flow_direction": (_parse_float_list, (1.0, 0.0, 0.0), "flow direction (normalized)"),
    "q_inf": (float, 1.0, "dynamic pressure"),
    "freeze": (_parse_int_list, (), "frozen part slots"),
    "w_knn": (float, 0.0, "kNN latent prior weight"),
    "knn_k": (int, 5, "kNN neighbor count"),
    "w_init_latent": (float, 0.0, "L2-to-init weight on latents"),
    "w_init_pose": (float, 0.0, "L2-to-init weight on poses"),
    "opt_iterations": (int, 200, "shape optimization iterations"),
    "opt_resolution": (int, 64, "optimization meshing resolution"),
    "opt_lr": (float, 1e-3, "shape optimization learning rate"),
    # evaluation
    "eval_resolution": (int, 128, "IoU grid resolution"),
    "eval_samples": (int, 30000, "surface samples for Chamfer distance"),
    "set_samples": (int, 2048, "surface samples per shape for MMD/COV"),
    "eval_ic": (_parse_bool, True, "compute image consistency (slower)"),
    "interp_steps": (int, 7, "interpolation steps"),
}

_SERIALIZERS = {tuple: lambda v: ",".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)}


@dataclass
class Config:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        full = {k: d for k, (_, d, _) in CONFIG_SCHEMA.items()}
        full.update(self.values)
        self.values = full

    def __getitem__(self, key):
        return self.values[key]


def parse_config(text):
    """Flat key=value text (''#'' comments) -> Config with defaults filled."""
    values = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {ln}: expected key=value, got '{line}'")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in CONFIG_SCHEMA:
            raise ValueError(f"config line {ln}: unknown key '{key}'")
        parser = CONFIG_SCHEMA[key][0]
        try:
            values[key] = parser(val)
        except ValueError as e:
            raise ValueError(f"config line {ln}: key '{key}': {e}") from e
    return Config(values)


def serialize_config(cfg):
    lines = []
    for key in CONFIG_SCHEMA:
        v = cfg[key]
        if isinstance(v, tuple):
            s = _SERIALIZERS[tuple](v)
        elif isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        lines.append(f"{key}={s}")
    return "\n".join(lines) + "\n"


def load_config(path):
    if path is None:
        return Config({})
    with open(path) as f:
        return parse_config(f.read())


def config_help():
    return "\n".join(f"  {k} (default {d!r}): {h}" for k, (_, d, h) in CONFIG_SCHEMA.items())


# ---------------------------------------------------------------------------
# run manifest


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    def __init__(self, command, cfg):
        self.data = {
            "command": command,
            "config": serialize_config(cfg),
            "seed": cfg["seed"],
            "artifacts": {},
            "timings": {},
        }
        self._t0 = time.perf_counter()

    def add_artifact(self, path):
        self.data["artifacts"][os.path.basename(path)] = _sha256(path)

    def write(self, out_dir):
        self.data["timings"]["total_s"] = round(time.perf_counter() - self._t0, 3)
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest-")
        with os.fdopen(fd, "w") as f:
            json.dump(self.data, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, os.path.join(out_dir, "manifest.json"))


# ---------------------------------------------------------------------------
# shared artifact helpers


def _require(path, what):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing {what}: {path}")
    return path


def _load_dataset(data_dir):
    names = sorted(f for f in os.listdir(data_dir) if f.endswith(".shape"))
    if not names:
        raise FileNotFoundError(f"missing shape files (*.shape) in: {data_dir}")
    shapes, samples = [], []
    for name in names:
        shapes.append(sg.load_shape(os.path.join(data_dir, name)))
        smp = os.path.splitext(name)[0] + ".psmp"
        samples.append(sg.load_samples(_require(os.path.join(data_dir, smp), "sample file")))
    return TrainingSet(shapes, samples)


def save_state(prefix, state):
    """ShapeState -> <prefix>.lat (latents) and <prefix>.poses (text)."""
    save_latents(prefix + ".lat", state.z)
    lines = [f"n_parts={state.n_parts}"]
    for p in range(state.n_parts):
        lines.append(f"q{p}=" + ",".join(repr(float(x)) for x in state.q[p]))
        lines.append(f"t{p}=" + ",".join(repr(float(x)) for x in state.t[p]))
        lines.append(f"s{p}=" + ",".join(repr(float(x)) for x in state.s[p]))
    with open(prefix + ".poses", "w") as f:
        f.write("\n".join(lines) + "\n")


def load_state(prefix):
    z = load_latents(_require(prefix + ".lat", "latent file"))
    kv = {}
    with open(_require(prefix + ".poses", "pose file")) as f:
        for line in f:
            if "=" in line:
                k, _, v = line.strip().partition("=")
                kv[k] = v
    P = int(kv["n_parts"])
    q = np.array([[float(x) for x in kv[f"q{p}"].split(",")] for p in range(P)])
    t = np.array([[float(x) for x in kv[f"t{p}"].split(",")] for p in range(P)])
    s = np.array([[float(x) for x in kv[f"s{p}"].split(",")] for p in range(P)])
    return ShapeState(z, q, t, s)


def _train_config(cfg):
    return TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        points_per_shape=cfg["points_per_shape"], lr_model=cfg["lr_model"],
        lr_latent=cfg["lr_latent"], lr_decay=cfg["lr_decay"],
        decay_milestones=cfg["decay_milestones"], lam=cfg["lam"],
        clamp_delta=cfg["clamp_delta"], tau=cfg["tau"], z_dim=cfg["z_dim"],
        hidden=cfg["hidden"], use_conv=cfg["use_conv"],
        use_modulation=cfg["use_modulation"], use_poses=cfg["use_poses"],
        use_inter_loss=cfg["use_inter_loss"],
        inter_warmup_epochs=cfg["inter_warmup_epochs"],
        checkpoint_every=cfg["checkpoint_every"],
    )


def _fit_config(cfg):
    return FitConfig(
        iterations=cfg["fit_iterations"], lr_latent=cfg["fit_lr_latent"],
        lr_pose=cfg["fit_lr_pose"], lam=cfg["lam"], clamp_delta=cfg["clamp_delta"],
        tau=cfg["tau"], use_part_loss=cfg["fit_use_part_loss"],
        use_inter_loss=cfg["fit_use_inter_loss"],
        optimize_poses=cfg["fit_optimize_poses"],
        points_per_step=cfg["fit_points_per_step"],
    )


def _objective_config(cfg, freeze=None):
    return opt.ObjectiveConfig(
        flow_direction=cfg["flow_direction"], q_inf=cfg["q_inf"],
        frozen_slots=cfg["freeze"] if freeze is None else freeze,
        w_knn=cfg["w_knn"], knn_k=cfg["knn_k"],
        w_init_latent=cfg["w_init_latent"], w_init_pose=cfg["w_init_pose"],
        iterations=cfg["opt_iterations"], resolution=cfg["opt_resolution"],
        lr=cfg["opt_lr"],
        grid_dtype=np.float32 if cfg["mesh_f32"] else np.float64,
    )


def _mesh_dtype(cfg):
    return np.float32 if cfg["mesh_f32"] else np.float64


def _state_from_ckpt(table, shape_id):
    if table is None:
        raise FileNotFoundError("checkpoint carries no latent table; fit a state first")
    if not 0 <= shape_id < table.n_shapes:
        raise ValueError(f"shape id {shape_id} out of range (n={table.n_shapes})")
    return ShapeState.from_table(table, shape_id)


# ---------------------------------------------------------------------------
# subcommands


def cmd_make_data(args):
    cfg = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest("make-data", cfg)
    shapes = sg.generate_dataset(
        cfg["family"], cfg["n_shapes"], cfg["seed"], missing_fraction=cfg["missing_fraction"]
    )
    for i, shape in enumerate(shapes):
        sp = os.path.join(args.out, f"shape_{i:04d}.shape")
        pp = os.path.join(args.out, f"shape_{i:04d}.psmp")
        sg.save_shape(sp, shape)
        samples = sg.sample_sdf(shape, cfg["samples_per_shape"], seed=cfg["seed"] * 100003 + i)
        sg.save_samples(pp, samples)
        manifest.add_artifact(sp)
        manifest.add_artifact(pp)
    manifest.write(args.out)
    print(f"wrote {len(shapes)} shapes to {args.out}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config)
    dataset = _load_dataset(_require(args.data, "data directory"))
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest("train", cfg)
    tcfg = _train_config(cfg)
    if tcfg.checkpoint_every:
        tcfg.checkpoint_dir = args.out
    params, table, history = train(dataset, tcfg, seed=cfg["seed"])
    ckpt = os.path.join(args.out, "model.psdf")
    save_checkpoint(ckpt, params, table)
    hist = os.path.join(args.out, "history.csv")
    with open(hist, "w") as f:
        f.write(history_csv(history))
    manifest.add_artifact(ckpt)
    manifest.add_artifact(hist)
    manifest.write(args.out)
    print(f"trained {tcfg.epochs} epochs; final L_sdf {history[-1]['sdf']:.6g}")
    return 0


def cmd_fit(args):
    cfg = load_config(args.config)
    params, table = load_checkpoint(_require(args.ckpt, "checkpoint"))
    samples = sg.load_samples(_require(args.samples, "sample file"))
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest("fit", cfg)
    state, history = fit_shape(
        params, samples, _fit_config(cfg), table=table, seed=cfg["seed"]
    )
    prefix = os.path.join(args.out, "fitted")
    save_state(prefix, state)
    hist = os.path.join(args.out, "fit_history.csv")
    with open(hist, "w") as f:
        f.write("step,total,sdf,part,inter,reg\n")
        for r in history:
            f.write(f"{r['step']},{r['total']:.8g},{r['sdf']:.8g},"
                    f"{r['part']:.8g},{r['inter']:.8g},{r['reg']:.8g}\n")
    for ext in (".lat", ".poses"):
        manifest.add_artifact(prefix + ext)
    manifest.add_artifact(hist)
    manifest.write(args.out)
    print(f"fit finished; final loss {history[-1]['total']:.6g}")
    return 0


def cmd_mesh(args):
    cfg = load_config(args.config)
    params, table = load_checkpoint(_require(args.ckpt, "checkpoint"))
    if args.state:
        state = load_state(args.state)
    else:
        state = _state_from_ckpt(table, args.shape_id)
    res = args.res or cfg["mesh_resolution"]
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest("mesh", cfg)
    if args.parts:
        mesh, part_meshes = msh.mesh_parts(
            params, state.z, state.poses(), res, dtype=_mesh_dtype(cfg)
        )
        path = os.path.join(args.out, f"shape_{args.shape_id:04d}_parts.obj")
        msh.save_obj(path, mesh, part_meshes=part_meshes)
    else:
        grid, _ = msh.eval_grid(params, state.z, state.poses(), res, dtype=_mesh_dtype(cfg))
        mesh = msh.marching_cubes(grid)
        path = os.path.join(args.out, f"shape_{args.shape_id:04d}.obj")
        msh.save_obj(path, mesh)
    manifest.add_artifact(path)
    manifest.write(args.out)
    print(f"wrote {path} ({len(mesh.vertices)} vertices, {len(mesh.triangles)} faces)")
    return 0


def cmd_interpolate(args):
    cfg = load_config(args.config)
    params, table = load_checkpoint(_require(args.ckpt, "checkpoint"))
    state_a = _state_from_ckpt(table, args.a)
    state_b = _state_from_ckpt(table, args.b)
    steps = args.steps or cfg["interp_steps"]
    if steps < 2:
        raise ValueError("need at least 2 interpolation steps")
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest("interpolate", cfg)
    for i in range(steps):
        u = i / (steps - 1)
        state = interpolate(state_a, state_b, u)
        grid, _ = msh.eval_grid(
            params, state.z, state.poses(), cfg["mesh_resolution"], dtype=_mesh_dtype(cfg)
        )
        path = os.path.join(args.out, f"interp_{i:03d}.obj")
        msh.save_obj(path, msh.marching_cubes(grid))
        manifest.add_artifact(path)
    manifest.write(args.out)
    print(f"wrote {steps} interpolation meshes to {args.out}")
    return 0


def cmd_edit(args):
    cfg = load_config(args.config)
    params, table = load_checkpoint(_require(args.ckpt, "checkpoint"))
    state = _state_from_ckpt(table, args.shape_id)
    script = EditScript.load(_require(args.script, "edit script"))
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest("edit", cfg)
    edited = apply_edits(state, script)
    prefix = os.path.join(args.out, f"edited_{args.shape_id:04d}")
    save_state(prefix, edited)
    grid, _ = msh.eval_grid(
        params, edited.z, edited.poses(), cfg["mesh_resolution"], dtype=_mesh_dtype(cfg)
    )
    path = prefix + ".obj"
    msh.save_obj(path, msh.marching_cubes(grid))
    for ext in (".lat", ".poses", ".obj"):
        manifest.add_artifact(prefix + ext)
    manifest.write(args.out)
    print(f"applied {len(script.edits)} edits; wrote {path}")
    return 0


def cmd_optimize(args):
    cfg = load_config(args.config)
    params, table = load_checkpoint(_require(args.ckpt, "checkpoint"))
    state = _state_from_ckpt(table, args.shape_id)
    freeze = _parse_int_list(args.freeze) if args.freeze is not None else None
    ocfg = _objective_config(cfg, freeze=freeze)
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest("optimize", cfg)
    report = opt.optimize_shape(params, state, ocfg, table=table)
    paths = {
        "report": os.path.join(args.out, "report.csv"),
        "before": os.path.join(args.out, "before.obj"),
        "after": os.path.join(args.out, "after.obj"),
        "pressure": os.path.join(args.out, "after_pressure.csv"),
    }
    with open(paths["report"], "w") as f:
        f.write(report.csv())
    msh.save_obj(paths["before"], report.mesh_init)
    msh.save_obj(paths["after"], report.mesh_final)
    with open(paths["pressure"], "w") as f:
        f.write(opt.pressure_csv(report.mesh_final, ocfg))
    prefix = os.path.join(args.out, f"optimized_{args.shape_id:04d}")
    save_state(prefix, report.state_final)
    for p in paths.values():
        manifest.add_artifact(p)
    manifest.write(args.out)
    cd0, cd1 = report.history[0]["cd"], report.history[-1]["cd"]
    print(f"C_d {cd0:.6g} -> {cd1:.6g} ({100 * (cd0 - cd1) / cd0:.2f}% reduction)"
          + (" [aborted: empty mesh]" if report.aborted else ""))
    return 0


def cmd_eval(args):
    cfg = load_config(args.config)
    pred_dir = _require(args.pred, "prediction directory")
    gt_dir = _require(args.gt, "ground-truth directory")
    pred_names = sorted(f for f in os.listdir(pred_dir) if f.endswith(".obj"))
    gt_names = sorted(f for f in os.listdir(gt_dir) if f.endswith(".obj"))
    if not pred_names or not gt_names:
        raise FileNotFoundError(f"missing .obj meshes in: {pred_dir if not pred_names else gt_dir}")
    if len(pred_names) != len(gt_names):
        raise ValueError(f"{len(pred_names)} predictions vs {len(gt_names)} references")
    rows = []
    pred_sets, gt_sets = [], []
    for k, (pn, gn) in enumerate(zip(pred_names, gt_names)):
        pm = msh.load_obj(os.path.join(pred_dir, pn))
        gm = msh.load_obj(os.path.join(gt_dir, gn))
        xp = met.sample_mesh_surface(pm, n=cfg["eval_samples"], seed=cfg["seed"] + 2 * k)
        xg = met.sample_mesh_surface(gm, n=cfg["eval_samples"], seed=cfg["seed"] + 2 * k + 1)
        row = {
            "shape_id": os.path.splitext(pn)[0],
            "cd": met.chamfer(xp, xg),
            "iou": met.iou_meshes(pm, gm, resolution=cfg["eval_resolution"]),
        }
        if cfg["eval_ic"]:
            row["ic"] = met.image_consistency(gm, pm)
        rows.append(row)
        m = cfg["set_samples"]
        pred_sets.append(xp[:m])
        gt_sets.append(xg[:m])
    text = met.report_csv(rows)
    text += met.summary_block(met.mmd(pred_sets, gt_sets), met.cov(pred_sets, gt_sets))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        manifest = RunManifest("eval", cfg)
        path = os.path.join(args.out, "eval.csv")
        with open(path, "w") as f:
            f.write(text)
        manifest.add_artifact(path)
        manifest.write(args.out)
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    epilog = "config keys (key=value lines):\n" + config_help()
    parser = argparse.ArgumentParser(
        prog="partsdf",
        description="Part-based signed-distance-field shape modeling toolkit.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap worker threads (falls back to PARTSDF_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter, **kw)
        p.add_argument("--config", default=None, help="key=value config file")
        p.set_defaults(fn=fn)
        return p

    p = add("make-data", cmd_make_data, help="generate a procedural shape dataset")
    p.add_argument("--out", required=True)
    p = add("train", cmd_train, help="train decoder and latents on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p = add("fit", cmd_fit, help="fit latents/poses of a new shape to samples")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True)
    p = add("mesh", cmd_mesh, help="extract a mesh from a trained shape")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--shape-id", type=int, default=0)
    p.add_argument("--state", default=None, help="state file prefix (overrides --shape-id)")
    p.add_argument("--res", type=int, default=None)
    p.add_argument("--parts", action="store_true", help="write per-part groups")
    p.add_argument("--out", required=True)
    p = add("interpolate", cmd_interpolate, help="interpolate between two shapes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--a", type=int, required=True)
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", required=True)
    p = add("edit", cmd_edit, help="apply an edit script to a shape")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--shape-id", type=int, default=0)
    p.add_argument("--script", required=True)
    p.add_argument("--out", required=True)
    p = add("optimize", cmd_optimize, help="drag-optimize a shape with frozen slots")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--shape-id", type=int, default=0)
    p.add_argument("--freeze", default=None, help="comma-separated frozen slots")
    p.add_argument("--out", required=True)
    p = add("eval", cmd_eval, help="evaluate predicted meshes against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    threads = args.threads
    if threads is None:
        env = os.environ.get("PARTSDF_THREADS")
        threads = int(env) if env else None
    try:
        if threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                return args.fn(args)
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
