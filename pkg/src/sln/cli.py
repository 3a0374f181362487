"""Command-line entry points wrapping the library modules."""

from __future__ import annotations

import json
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:             # Python < 3.11
    import tomli as tomllib

import click
import numpy as np

from .core import SceneValidationError, scene_from_json, scene_to_json
from .dataset import generate_dataset, load_dataset
from .model import GraphBatch, SlnModel
from .refine import RefineConfig, evaluate_refinement
from .refine import refine as run_refine
from .render import (RenderTarget, default_camera, layout_svg, rasterize_hard,
                     read_pfm, read_pgm, write_pfm, write_pgm)
from .train import TrainConfig, Trainer, evaluate


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    if path.endswith(".toml"):
        with open(path, "rb") as f:
            return tomllib.load(f)
    with open(path) as f:
        return json.load(f)


def _read_scene(path: str):
    try:
        with open(path) as f:
            return scene_from_json(json.load(f))
    except FileNotFoundError:
        click.echo(f"scene file not found: {path}", err=True)
        sys.exit(2)
    except (SceneValidationError, json.JSONDecodeError) as err:
        click.echo(f"invalid scene {path}: {err}", err=True)
        sys.exit(2)


def _load_model(path: str) -> SlnModel:
    if not os.path.exists(path):
        click.echo(f"checkpoint not found: {path}", err=True)
        sys.exit(2)
    try:
        return SlnModel.load(path)
    except Exception as err:
        click.echo(f"cannot load checkpoint {path}: {err}", err=True)
        sys.exit(1)


@click.group(name="sln")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="TOML or JSON file with per-command option defaults.")
@click.pass_context
def main(ctx, config_path):
    """Scene-graph-conditioned 3D layout synthesis toolkit."""
    try:
        ctx.default_map = _load_config(config_path)
    except (OSError, ValueError) as err:
        click.echo(f"cannot read config {config_path}: {err}", err=True)
        sys.exit(2)


@main.command("gen-data")
@click.option("--out", required=True, type=click.Path())
@click.option("--train", "n_train", default=100, show_default=True)
@click.option("--val", "n_val", default=20, show_default=True)
@click.option("--seed", default=0, show_default=True)
def gen_data(out, n_train, n_val, seed):
    """Generate a procedural bedroom corpus with full relation graphs."""
    if n_train < 1 or n_val < 0:
        click.echo("--train must be >= 1 and --val >= 0", err=True)
        sys.exit(2)
    manifest = generate_dataset(out, n_train, n_val, seed)
    click.echo(json.dumps({"out": out, "train": len(manifest["train"]),
                           "val": len(manifest["val"]), "seed": seed}))


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", "ckpt_dir", default="checkpoints", show_default=True)
@click.option("--batches", default=20_000, show_default=True)
@click.option("--batch-size", default=128, show_default=True)
@click.option("--lr", default=1e-4, show_default=True)
@click.option("--hidden", default=512, show_default=True)
@click.option("--latent", default=64, show_default=True)
@click.option("--variant", type=click.Choice(["full", "gcn"]), default="full")
@click.option("--seed", default=0, show_default=True)
@click.option("--resume", type=click.Path(exists=True), default=None)
def train(data, ckpt_dir, batches, batch_size, lr, hidden, latent, variant,
          seed, resume):
    """Train the layout model; checkpoints and an LDJSON metric log land in --out."""
    from .model import ModelConfig
    from .train import TrainingError
    train_scenes, val_scenes, _ = load_dataset(data)
    config = TrainConfig(batch_size=batch_size, learning_rate=lr,
                         total_batches=batches, seed=seed, variant=variant,
                         checkpoint_dir=ckpt_dir)
    trainer = Trainer(config, train_scenes, val_scenes,
                      model_config=ModelConfig(hidden=hidden, latent=latent,
                                               variant=variant))
    if resume:
        trainer.load_checkpoint(resume)
    try:
        records = trainer.train()
    except TrainingError as err:
        click.echo(str(err), err=True)
        sys.exit(1)
    click.echo(json.dumps({"batches": trainer.batch_counter,
                           "final": records[-1] if records else None}))


@main.command("eval")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--samples", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--z-mode", type=click.Choice(["prior", "zero", "noise"]),
              default=None, help="Latent source; defaults by model variant.")
def eval_cmd(data, checkpoint, samples, seed, z_mode):
    """Scene-graph accuracy, L1 box loss, and diversity STDs on the val split."""
    model = _load_model(checkpoint)
    _, val_scenes, _ = load_dataset(data)
    if not val_scenes:
        click.echo("dataset has no validation split", err=True)
        sys.exit(2)
    report = evaluate(model, val_scenes, samples_per_graph=samples, seed=seed,
                      z_mode=z_mode)
    click.echo(json.dumps(report, sort_keys=True))


@main.command()
@click.option("--scene", required=True, type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--n", default=1, show_default=True)
@click.option("--seed", default=0, show_default=True)
def sample(scene, checkpoint, n, seed):
    """Sample layouts for a scene graph; deterministic per seed."""
    if n < 1:
        click.echo("--n must be positive", err=True)
        sys.exit(2)
    model = _load_model(checkpoint)
    sc = _read_scene(scene)
    from .metrics import scene_graph_accuracy
    out = []
    for i in range(n):
        layout = model.sample(sc.graph, seed + i)
        out.append({"layout": [list(o.as_tuple()) for o in layout.objects],
                    "scene_graph_accuracy": scene_graph_accuracy(layout, sc.graph)})
    click.echo(json.dumps({"samples": out, "seed": seed}))


@main.command()
@click.option("--scene", required=True, type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--target-depth", required=True, type=click.Path())
@click.option("--target-sem", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--steps", default=90, show_default=True)
@click.option("--attempts", default=6, show_default=True)
@click.option("--seed", default=0, show_default=True)
def refine(scene, checkpoint, target_depth, target_sem, out, steps, attempts,
           seed):
    """Optimize latents + a decoder copy so renders match the target maps."""
    sc = _read_scene(scene)
    if steps == 0:
        # contract: zero steps is a no-op pass-through of the input layout
        if sc.layout is None:
            click.echo("scene has no layout to pass through at --steps 0",
                       err=True)
            sys.exit(2)
        with open(out, "w") as f:
            json.dump(scene_to_json(sc), f)
        click.echo(json.dumps({"steps": 0, "out": out}))
        return
    model = _load_model(checkpoint)
    for path in (target_depth, target_sem):
        if not os.path.exists(path):
            click.echo(f"target file not found: {path}", err=True)
            sys.exit(2)
    try:
        target = RenderTarget(depth=read_pfm(target_depth),
                              semantic=read_pgm(target_sem))
    except ValueError as err:
        click.echo(f"bad target: {err}", err=True)
        sys.exit(2)
    config = RefineConfig(steps=steps, attempts=attempts)
    layout, report = run_refine(model, sc.graph, None, target, config, seed,
                                sc.room)
    doc = scene_to_json(sc)
    doc["layout"] = [list(o.as_tuple()) for o in layout.objects]
    with open(out, "w") as f:
        json.dump(doc, f)
    click.echo(json.dumps(report.to_json()))


@main.command()
@click.option("--scene", required=True, type=click.Path())
@click.option("--out-depth", required=True, type=click.Path())
@click.option("--out-sem", required=True, type=click.Path())
@click.option("--out-svg", type=click.Path(), default=None)
@click.option("--size", default=64, show_default=True)
def render(scene, out_depth, out_sem, out_svg, size):
    """Rasterize a scene's layout to depth (PFM) + semantic (PGM) maps."""
    sc = _read_scene(scene)
    if sc.layout is None:
        click.echo(f"scene {scene} has no layout to render", err=True)
        sys.exit(2)
    cam = default_camera(sc.room, size)
    cls = [n.class_id for n in sc.graph.nodes]
    target = rasterize_hard(sc.layout, cls, cam, sc.room)
    write_pfm(out_depth, target.depth)
    write_pgm(out_sem, target.semantic)
    if out_svg:
        with open(out_svg, "w") as f:
            f.write(layout_svg(sc.layout, cls, sc.room))
    click.echo(json.dumps({"depth": out_depth, "semantic": out_sem,
                           "camera": cam.to_json()}))


@main.command()
@click.option("--scene", required=True, type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--samples", default=2000, show_default=True)
@click.option("--bins", default=32, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None,
              help="Write the JSON here instead of stdout.")
def heatmap(scene, checkpoint, samples, bins, seed, out):
    """Top-down centroid-density grids per class from prior samples."""
    if samples < 1:
        click.echo("--samples must be positive", err=True)
        sys.exit(2)
    model = _load_model(checkpoint)
    sc = _read_scene(scene)
    from .core import CLASSES
    cls = [n.class_id for n in sc.graph.nodes]
    grids = {c: np.zeros((bins, bins)) for c in set(cls)}
    for i in range(samples):
        layout = model.sample(sc.graph, seed + i)
        for obj, c in zip(layout.objects, cls):
            cx, cy, _ = obj.center
            grids[c][min(int(cy * bins), bins - 1),
                     min(int(cx * bins), bins - 1)] += 1
    doc = {"bins": bins, "samples": samples,
           "classes": {CLASSES[c]: (g / g.sum()).tolist()
                       for c, g in grids.items() if g.sum() > 0}}
    if out:
        with open(out, "w") as f:
            json.dump(doc, f)
        click.echo(json.dumps({"out": out}))
    else:
        click.echo(json.dumps(doc))


@main.command()
@click.option("--workspace", default=None, type=click.Path(),
              help="Falls back to $SLN_WORKSPACE.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--frontend", type=click.Path(), default=None,
              help="Directory of built UI assets to serve at /.")
def serve(workspace, host, port, frontend):
    """Run the HTTP service over a workspace directory."""
    workspace = workspace or os.environ.get("SLN_WORKSPACE")
    if not workspace:
        click.echo("no workspace: pass --workspace or set SLN_WORKSPACE",
                   err=True)
        sys.exit(2)
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(workspace, frontend_dir=frontend),
                host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
