"""Command-line entry point exposing the pipeline as subcommands.

Stages compose through files: scenes (JSON) -> datasets (.psmp) -> models
(.psm) -> renders (.pfm) and reports (JSON + CSV + figures). Every run
prints its resolved configuration and seed; failures exit nonzero with a
single machine-parseable line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

DEFAULTS = {
    "seed": 0,
    "threads": None,  # resolved from PSAMPLE_THREADS, then cpu count
    "flow_epochs": 500,
    "flow_lr": 3e-3,
    "albedo_iterations": 3000,
    "albedo_lr": 1e-4,
    "steps": 50,
    "reflow_steps": 10,
    "reflow_pairs": 1_048_576,
    "reflow_epochs": 30,
    "texture_size": 256,
    "latent_dim": 32,
    "tv_lambda": 1e-4,
    "gen_walks_per_wi": 2000,
    "albedo_group_size": 100,
    "spp": 16,
}


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("PSAMPLE_THREADS")
    if env:
        return int(env)
    return os.cpu_count() or 1


def _print_config(cmd, args, extra=None):
    cfg = {k: v for k, v in vars(args).items() if k != "func" and v is not None}
    cfg["command"] = cmd
    cfg["threads"] = _threads(args)
    if extra:
        cfg.update(extra)
    print("config " + json.dumps(cfg, sort_keys=True, default=str))
    print(f"seed {args.seed}")


def _rng(args):
    from .rng import Rng

    return Rng(args.seed)


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise SystemExit2(f"--{name} is required for this command")


class SystemExit2(RuntimeError):
    pass


# -- subcommands -----------------------------------------------------------------


def cmd_gen(args):
    from .dataset import generate_homogeneous, generate_sv, write
    from .microgeo import scene_from_file

    _require(args, "scene", "out")
    scene = scene_from_file(args.scene)
    count = args.count or 1_000_000
    rng = _rng(args)
    threads = _threads(args)
    if args.sv or scene.sv:
        ds = generate_sv(scene, rng, n_pairs=count, threads=threads)
    else:
        per = DEFAULTS["gen_walks_per_wi"]
        n_per = per if count % per == 0 and count >= per else 1
        n_wi = count // n_per
        _print_config("gen", args, {"n_wi": n_wi, "n_per_wi": n_per})
        ds = generate_homogeneous(scene, rng, n_wi=n_wi, n_per_wi=n_per, threads=threads)
        write(ds, args.out)
        print(f"wrote {args.out} records {len(ds)} accepted {int(ds.accepted.sum())} trapped {ds.meta.get('trapped', 0)}")
        return 0
    _print_config("gen", args)
    write(ds, args.out)
    print(f"wrote {args.out} records {len(ds)} accepted {int(ds.accepted.sum())} trapped {ds.meta.get('trapped', 0)}")
    return 0


def _material_with_placeholder_albedo(flow, texture, metadata):
    from .albedo import make_albedo_model
    from .material import PureSampleMaterial
    from .rng import Rng

    alb = make_albedo_model(Rng(0), sv=flow.sv, feature_dim=flow.feature_dim)
    alb.net.snap_f32()
    metadata = dict(metadata)
    metadata["albedo_trained"] = False
    return PureSampleMaterial(flow=flow, albedo=alb, texture=texture, metadata=metadata)


def cmd_train_flow(args):
    from . import dataset as ds_mod
    from . import material as mat_mod
    from .flow import FlowTrainConfig, train_flow

    _require(args, "dataset", "out")
    _print_config("train-flow", args)
    ds = ds_mod.read(args.dataset)
    cfg = FlowTrainConfig(
        epochs=args.epochs or DEFAULTS["flow_epochs"],
        lr=args.lr or DEFAULTS["flow_lr"],
        steps=args.steps or DEFAULTS["steps"],
        texture_size=DEFAULTS["texture_size"],
        latent_dim=DEFAULTS["latent_dim"],
        tv_lambda=DEFAULTS["tv_lambda"],
    )
    model, texture = train_flow(ds, cfg, _rng(args))
    mat = _material_with_placeholder_albedo(
        model, texture, {"scene_hash": ds.meta.get("scene_hash", ""), "train": "flow"}
    )
    mat_mod.save(mat, args.out)
    print(f"wrote {args.out} final-loss {model.train_log[-1]:.6f}")
    return 0


def cmd_train_albedo(args):
    from . import dataset as ds_mod
    from . import material as mat_mod
    from .albedo import AlbedoTrainConfig, train_albedo
    from .dataset import generate_albedo_sv
    from .microgeo import scene_from_file

    _require(args, "model", "out")
    _print_config("train-albedo", args)
    mat = mat_mod.load(args.model)
    if args.dataset:
        ds = ds_mod.read(args.dataset)
    elif args.scene:
        scene = scene_from_file(args.scene)
        if not scene.sv:
            raise SystemExit2("on-the-fly albedo data needs an sv scene; pass --dataset otherwise")
        ds = generate_albedo_sv(
            scene, _rng(args).substream(77),
            n_wi=(args.count or 20000), n_per=DEFAULTS["albedo_group_size"],
            threads=_threads(args),
        )
    else:
        raise SystemExit2("train-albedo needs --dataset or --scene")
    cfg = AlbedoTrainConfig(
        iterations=args.epochs or DEFAULTS["albedo_iterations"],
        lr=args.lr or DEFAULTS["albedo_lr"],
    )
    alb = train_albedo(ds, cfg, _rng(args), texture=mat.texture)
    mat.albedo = alb
    mat.metadata["albedo_trained"] = True
    mat_mod.save(mat, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_reflow(args):
    from . import material as mat_mod
    from .flow import ReflowConfig, reflow_distill

    _require(args, "model", "out")
    _print_config("reflow", args)
    mat = mat_mod.load(args.model)
    cfg = ReflowConfig(
        epochs=args.epochs or DEFAULTS["reflow_epochs"],
        pairs_per_epoch=args.count or DEFAULTS["reflow_pairs"],
        lr=args.lr or DEFAULTS["flow_lr"],
        student_steps=args.steps or DEFAULTS["reflow_steps"],
    )
    student = reflow_distill(mat.flow, cfg, _rng(args), texture=mat.texture)
    mat.flow = student
    mat.metadata["reflow"] = True
    mat_mod.save(mat, args.out)
    print(f"wrote {args.out} steps {student.steps}")
    return 0


def _parse_dirs(args, need_wo):
    coords = args.coords
    want = 6 if need_wo else 3
    if len(coords) not in (want, want + 2):
        raise SystemExit2(
            f"expected {want} direction components (plus optional u v), got {len(coords)}"
        )
    wi = np.array(coords[:3])
    wo = np.array(coords[3:6]) if need_wo else None
    uv = np.array(coords[want:]) if len(coords) == want + 2 else None
    return wi, wo, uv


def cmd_eval(args):
    from . import material as mat_mod
    from .material import eval_brdf

    _require(args, "model")
    _print_config("eval", args)
    wi, wo, uv = _parse_dirs(args, need_wo=True)
    mat = mat_mod.load(args.model)
    val = eval_brdf(mat, wi, wo, uv=uv)
    print("%.8g %.8g %.8g" % tuple(val))
    return 0


def cmd_sample(args):
    from . import material as mat_mod
    from .material import sample_dir

    _require(args, "model")
    _print_config("sample", args)
    wi, _, uv = _parse_dirs(args, need_wo=False)
    mat = mat_mod.load(args.model)
    rng = _rng(args)
    rows = []
    for _ in range(args.count or 1):
        wo, pdf, weight = sample_dir(mat, wi, rng, uv=uv)
        rows.append("%.8g %.8g %.8g %.8g %.8g %.8g %.8g" % (*wo, pdf, *weight))
    out = "\n".join(rows)
    if args.out:
        with open(args.out, "w") as f:
            f.write("wo_x wo_y wo_z pdf weight_r weight_g weight_b\n" + out + "\n")
        print(f"wrote {args.out}")
    else:
        print(out)
    return 0


def cmd_pdf(args):
    from . import material as mat_mod
    from .material import pdf_dir

    _require(args, "model")
    _print_config("pdf", args)
    wi, wo, uv = _parse_dirs(args, need_wo=True)
    mat = mat_mod.load(args.model)
    print("%.8g" % pdf_dir(mat, wi, wo, uv=uv))
    return 0


def cmd_render(args):
    from . import render as render_mod

    _require(args, "scene", "out")
    _print_config("render", args)
    with open(args.scene) as f:
        text = f.read()
    if args.model:
        obj = json.loads(text)
        for m in obj.get("materials", {}).values():
            if m.get("kind") == "neural":
                m["path"] = args.model
        text = json.dumps(obj)
    scene = render_mod.scene_from_json(text, base_dir=os.path.dirname(os.path.abspath(args.scene)))
    if args.spp:
        scene.spp = args.spp
    if args.steps:
        for m in scene.materials.values():
            if isinstance(m, render_mod.NeuralMaterialAdapter):
                m.mat.flow.steps = args.steps
    img = render_mod.render(scene, _rng(args), threads=_threads(args))
    render_mod.write_pfm(img, args.out)
    base, _ = os.path.splitext(args.out)
    render_mod.write_ppm(img, base + ".ppm")
    from .figures import save_image_preview

    save_image_preview(img, base + ".png")
    print(f"wrote {args.out} (+{base}.ppm, {base}.png) mean-radiance {float(img.mean()):.6g}")
    return 0


def cmd_validate(args):
    from . import material as mat_mod
    from .figures import report_figures
    from .microgeo import scene_from_file
    from .validate import Report, furnace, run_model_report

    _require(args, "model", "out")
    _print_config("validate", args)
    mat = mat_mod.load(args.model)
    rng = _rng(args)
    report = run_model_report(mat, rng)
    if args.scene:
        scene = scene_from_file(args.scene)
        dev, lossless = furnace(scene, n_walks=2048, rng=rng.substream(400))
        if lossless:
            report.add("furnace_scene", dev, None, dev <= 1e-9, args.seed)
            mdev, _ = furnace(mat)
            report.add("furnace_material", mdev, None, mdev <= 0.02, args.seed)
        else:
            report.add("furnace_scene(lossy)", dev, None, True, args.seed, warning="scene is lossy; furnace value is informational")
    with open(args.out, "w") as f:
        f.write(report.to_json())
    base, _ = os.path.splitext(args.out)
    with open(base + ".csv", "w") as f:
        f.write(report.to_csv())
    figs = report_figures(mat, os.path.join(os.path.dirname(os.path.abspath(args.out)), "figures"), rng.substream(900))
    print(f"wrote {args.out} (+{base}.csv, {len(figs)} figures) pass={report.all_passed}")
    return 0 if report.all_passed else 3


def cmd_inspect(args):
    from . import dataset as ds_mod
    from . import material as mat_mod

    _print_config("inspect", args)
    if args.dataset:
        ds = ds_mod.read(args.dataset)
        counts = ds.channel_counts()
        acc = [int(ds.accepted[ds.channel == c].sum()) for c in range(3)]
        print(f"dataset records {len(ds)} sv {int(ds.sv)}")
        for c in range(3):
            frac = acc[c] / counts[c] if counts[c] else 0.0
            print(f"channel {c} records {int(counts[c])} accepted {acc[c]} fraction {frac:.4f}")
        for k, v in sorted(ds.meta.items()):
            print(f"meta {k} {v}")
        return 0
    if args.model:
        mat = mat_mod.load(args.model)
        print(f"model sv {int(mat.sv)} flow-steps {mat.flow.steps}")
        print(f"flow-net {'x'.join(str(s) for s in mat.flow.net.sizes)}")
        print(f"albedo-net {'x'.join(str(s) for s in mat.albedo.net.sizes)}")
        if mat.texture is not None:
            print(f"texture {'x'.join(str(s) for s in mat.texture.data.shape)}")
        for k, v in sorted(mat.metadata.items()):
            print(f"meta {k} {v}")
        return 0
    raise SystemExit2("inspect needs --dataset or --model")


# -- wiring -----------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="psample", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    commands = {
        "gen": cmd_gen,
        "train-flow": cmd_train_flow,
        "train-albedo": cmd_train_albedo,
        "reflow": cmd_reflow,
        "eval": cmd_eval,
        "sample": cmd_sample,
        "pdf": cmd_pdf,
        "render": cmd_render,
        "validate": cmd_validate,
        "inspect": cmd_inspect,
    }
    for name, fn in commands.items():
        sp = sub.add_parser(name)
        sp.add_argument("--scene", type=str, default=None)
        sp.add_argument("--dataset", type=str, default=None)
        sp.add_argument("--model", type=str, default=None)
        sp.add_argument("--out", type=str, default=None)
        sp.add_argument("--seed", type=int, default=DEFAULTS["seed"])
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--steps", type=int, default=None)
        sp.add_argument("--epochs", type=int, default=None)
        sp.add_argument("--lr", type=float, default=None)
        sp.add_argument("--sv", action="store_true")
        sp.add_argument("--count", type=int, default=None)
        sp.add_argument("--spp", type=int, default=None)
        sp.add_argument("--deterministic", action="store_true")
        sp.add_argument("coords", nargs="*", type=float)
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.deterministic:
        # all pipelines are stream-keyed and order-deterministic already;
        # the flag additionally pins BLAS threading for strict bitwise runs
        os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
    try:
        return args.func(args)
    except SystemExit2 as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # single-line machine-parseable failure
        msg = str(e).replace("\n", " ")
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
