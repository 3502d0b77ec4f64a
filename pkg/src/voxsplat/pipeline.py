"""Training loop, checkpointing, evaluation, and surfel export.

A training step samples one scene and one supervised view, runs the model on
the scene's input views, renders the supervised view, and applies the full
objective. All randomness flows from a single seeded generator whose state is
checkpointed, so a fixed seed gives a bit-identical loss trajectory and a
save/reload/continue run equals an uninterrupted one.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import io as vio
from . import objective as obj
from . import renderer
from . import synthdata as sd
from .model import ReconstructionModel, view_stacks
from .optim import AdamW, make_schedule

ABLATION_FLAGS = ("no_normal_input", "no_cvf", "no_depth_loss", "no_reg_loss")


class NumericFailure(RuntimeError):
    """Raised when a loss component stops being finite; names the component."""


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    seed: int = 0
    resolution: int = 16
    image_size: int = 64
    n_views: int = 8
    n_heldout: int = 4
    feat_channels: int = 32
    schedule: tuple[int, ...] = (64, 32, 16, 8)
    groups: int = 16
    heads: int = 4
    batch: int = 1
    base_lr: float = 1e-3
    lr_schedule: str = "restarts"
    lr_period: int = 32
    lr_warmup: int = 0
    min_lr: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    w_depth: float = 1.0
    w_reg: float = 0.5
    w_rgb: float = 1.0
    w_alpha: float = 1.0
    w_perceptual: float = 0.5
    log_every: int = 50
    checkpoint_every: int = 500
    ablate: tuple[str, ...] = ()
    backend: str = ""

    def __post_init__(self):
        for flag in self.ablate:
            if flag not in ABLATION_FLAGS:
                raise ValueError(f"unknown ablation flag {flag!r}; known: {ABLATION_FLAGS}")
        if self.lr_schedule not in ("restarts", "cosine"):
            raise ValueError(f"lr_schedule must be 'restarts' or 'cosine', got {self.lr_schedule!r}")
        if self.steps < 0 or self.batch < 1:
            raise ValueError("steps must be >= 0 and batch >= 1")
        if self.lr_warmup < 0:
            raise ValueError("lr_warmup must be >= 0")

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @staticmethod
    def from_json(rec: dict) -> "TrainConfig":
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(rec) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        rec = dict(rec)
        for key in ("schedule", "ablate"):
            if key in rec:
                rec[key] = tuple(rec[key])
        return TrainConfig(**rec)


def loss_weights(config: TrainConfig) -> obj.LossWeights:
    """Objective weights with the loss-side ablation flags applied."""
    return obj.LossWeights(
        depth=0.0 if "no_depth_loss" in config.ablate else config.w_depth,
        reg=0.0 if "no_reg_loss" in config.ablate else config.w_reg,
        rgb=config.w_rgb, alpha=config.w_alpha, perceptual=config.w_perceptual,
    )


def build_model(config: TrainConfig, rng: np.random.Generator) -> ReconstructionModel:
    return ReconstructionModel(
        rng, resolution=config.resolution, feat_channels=config.feat_channels,
        schedule=config.schedule, groups=config.groups, heads=config.heads,
        no_normal_input="no_normal_input" in config.ablate,
        no_cvf="no_cvf" in config.ablate,
    )


@dataclass
class SceneData:
    """One scene's spec plus its loaded train and held-out views."""

    spec: sd.ViewsetSpec
    train: list[dict]
    heldout: list[dict]
    stacks: tuple = field(default=None, repr=False)

    def input_stacks(self):
        if self.stacks is None:
            self.stacks = view_stacks(self.train)
        return self.stacks


def fixture_scene_data(config: TrainConfig) -> SceneData:
    """The built-in textured sphere-plus-box scene at the configured extent."""
    spec = sd.ViewsetSpec(sd.fixture_scene(), n_views=config.n_views,
                          n_heldout=config.n_heldout, image_size=config.image_size)
    train, held = sd.make_viewset(spec)
    return SceneData(spec, train, held)


def load_scene_dirs(root: str) -> list[SceneData]:
    """Load every viewset directory under ``root`` (or ``root`` itself)."""
    if os.path.exists(os.path.join(root, "scene.json")):
        dirs = [root]
    else:
        dirs = sorted(os.path.join(root, d) for d in os.listdir(root)
                      if os.path.exists(os.path.join(root, d, "scene.json")))
    if not dirs:
        raise FileNotFoundError(f"no viewset (scene.json) found under {root!r}")
    scenes = []
    for d in dirs:
        spec, train, held = sd.load_viewset(d)
        scenes.append(SceneData(spec, train, held))
    return scenes


def make_bundle(out: renderer.RenderOutput, view: dict) -> obj.SupervisionBundle:
    alpha_gt = np.asarray(view["alpha"], dtype=np.float64)
    mask = alpha_gt > 0.5
    return obj.SupervisionBundle(
        rgb=out.color, alpha=out.alpha, depth=out.depth,
        rgb_gt=np.asarray(view["rgb"], dtype=np.float64),
        alpha_gt=alpha_gt,
        depth_gt=np.asarray(view["depth"], dtype=np.float64),
        mask=mask,
    )


def _check_finite(parts: dict, step: int) -> None:
    for name, value in parts.items():
        if not np.isfinite(value):
            raise NumericFailure(f"non-finite loss component {name!r} ({value}) at step {step}")


# ------------------------------------------------------------- checkpointing


def save_checkpoint(path, model: ReconstructionModel, opt: AdamW, step: int,
                    rng: np.random.Generator, config: TrainConfig) -> None:
    arrays = {f"model.{n}": p.data for n, p in model.parameters().items()}
    arrays.update(opt.state_arrays())
    meta = {"step": step, "rng_state": rng.bit_generator.state,
            "config": config.to_json()}
    vio.write_checkpoint(path, arrays, meta)


def load_checkpoint(path) -> tuple[TrainConfig, dict, dict]:
    """Returns (config, arrays, meta); callers push arrays into model/optimizer."""
    arrays, meta = vio.read_checkpoint(path)
    return TrainConfig.from_json(meta["config"]), arrays, meta


def restore_model(config: TrainConfig, arrays: dict) -> ReconstructionModel:
    model = build_model(config, np.random.default_rng(config.seed))
    model.load_state(arrays, prefix="model.")
    return model


# ------------------------------------------------------------------ training


def train(config: TrainConfig, scenes: list[SceneData], out_dir: str,
          resume: str | None = None, quiet: bool = False) -> dict:
    """Run the training loop; writes metrics JSONL and checkpoints under
    ``out_dir`` and returns a summary dict."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(config.to_json(), f, indent=1)

    rng = np.random.default_rng(config.seed)
    model = build_model(config, rng)
    opt = AdamW(model.parameters(), lr=config.base_lr,
                betas=(config.beta1, config.beta2), eps=config.eps,
                weight_decay=config.weight_decay)
    schedule = make_schedule(config.lr_schedule, config.base_lr,
                             config.lr_period, config.steps, config.min_lr,
                             warmup=config.lr_warmup)
    weights = loss_weights(config)
    hook = None if config.w_perceptual == 0 else obj.ZeroPerceptualLoss()
    backend = config.backend or None

    start_step = 0
    if resume is not None:
        ck_config, arrays, meta = load_checkpoint(resume)
        if ck_config != config:
            raise ValueError("checkpoint config does not match the requested config")
        model.load_state(arrays, prefix="model.")
        opt.load_state(arrays)
        rng.bit_generator.state = meta["rng_state"]
        start_step = meta["step"]

    log_path = os.path.join(out_dir, "metrics.jsonl")
    log_file = open(log_path, "a")
    t_start = time.time()
    parts = {}
    for step in range(start_step, config.steps):
        lr = schedule(step)
        model.zero_grad()
        for _ in range(config.batch):
            scene = scenes[int(rng.integers(len(scenes)))]
            view = scene.train[int(rng.integers(len(scene.train)))]
            rgb, nor, poses = scene.input_stacks()
            surfels = model(rgb, nor, poses)
            out = renderer.render(surfels, view["pose"], backend=backend)
            bundle = make_bundle(out, view)
            loss, parts = obj.total_loss(bundle, out, view["pose"].intrinsics,
                                         weights, hook)
            _check_finite(parts, step)
            loss.backward()
        opt.step(lr=lr)

        done = step + 1
        if done % config.log_every == 0 or done == config.steps:
            view_psnr = obj.psnr(out.color.numpy(), bundle.rgb_gt)
            record = {"step": done, "lr": lr, "view_psnr": view_psnr,
                      "elapsed_s": round(time.time() - t_start, 3),
                      "losses": {k: float(v) for k, v in parts.items()}}
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()
            if not quiet:
                print(f"step {done}/{config.steps} loss {parts['total']:.4f} "
                      f"psnr {view_psnr:.2f} lr {lr:.2e}")
        if config.checkpoint_every and done % config.checkpoint_every == 0 and done < config.steps:
            save_checkpoint(os.path.join(out_dir, f"ckpt_{done:06d}.vxsp"),
                            model, opt, done, rng, config)

    final_path = os.path.join(out_dir, "ckpt_final.vxsp")
    save_checkpoint(final_path, model, opt, config.steps, rng, config)
    log_file.close()
    return {"checkpoint": final_path, "metrics": log_path,
            "final_losses": {k: float(v) for k, v in parts.items()},
            "elapsed_s": time.time() - t_start}


# ---------------------------------------------------------------- evaluation


def evaluate(model: ReconstructionModel, scenes: list[SceneData], step: int,
             backend: str | None = None, weights: obj.LossWeights = obj.LossWeights(),
             chamfer_points: int = 4096) -> list[dict]:
    """Render every held-out view, returning one metrics record per scene.

    Scenes without held-out views are skipped; evaluating the same checkpoint
    twice gives identical records (Chamfer sampling is seeded per scene).
    """
    records = []
    for index, scene in enumerate(scenes):
        if not scene.heldout:
            continue
        rgb, nor, poses = scene.input_stacks()
        surfels = model(rgb, nor, poses)

        psnrs, ssims, losses = [], [], []
        for view in scene.heldout:
            out = renderer.render(surfels, view["pose"], backend=backend)
            bundle = make_bundle(out, view)
            _, parts = obj.total_loss(bundle, out, view["pose"].intrinsics, weights)
            losses.append(parts)
            psnrs.append(obj.psnr(out.color.numpy(), bundle.rgb_gt))
            ssims.append(obj.ssim(out.color.numpy(), bundle.rgb_gt))

        centers = surfels.centers.numpy()
        opa = surfels.opacities.numpy()
        solid = centers[opa > 0.5]
        surface = sd.surface_samples(scene.spec.scene, chamfer_points,
                                     np.random.default_rng(index))
        chamfer = (obj.chamfer_distance(solid, surface) if len(solid)
                   else float("inf"))
        mean_losses = {k: float(np.mean([p[k] for p in losses])) for k in losses[0]}
        records.append(obj.metrics_record(
            step, float(np.mean(psnrs)), float(np.mean(ssims)), chamfer, mean_losses))
    return records


def evaluate_checkpoint(ckpt_path: str, scenes: list[SceneData],
                        backend: str | None = None) -> list[dict]:
    config, arrays, meta = load_checkpoint(ckpt_path)
    model = restore_model(config, arrays)
    return evaluate(model, scenes, meta["step"], backend=backend or (config.backend or None),
                    weights=loss_weights(config))


# ------------------------------------------------------------------- export


def export_surfels(model: ReconstructionModel, scene: SceneData, ply_path: str,
                   turntable_dir: str | None = None, n_turntable: int = 0,
                   backend: str | None = None) -> None:
    """Write the decoded surfels as PLY and, optionally, orbit renders."""
    rgb, nor, poses = scene.input_stacks()
    surfels = model(rgb, nor, poses)
    vio.write_ply(ply_path, surfels.ply_rows(), sh_channels=surfels.sh.shape[1])
    if turntable_dir and n_turntable > 0:
        render_orbit(surfels, scene, turntable_dir, n_turntable, backend=backend)


def render_orbit(surfels, scene: SceneData, out_dir: str, n_views: int,
                 backend: str | None = None) -> None:
    """Render ``n_views`` poses on the scene's camera orbit to image files."""
    os.makedirs(out_dir, exist_ok=True)
    spec = scene.spec
    K = scene.train[0]["pose"].intrinsics
    from . import camera as cam
    poses = cam.circular_path(n_views, spec.elevation_deg, spec.radius, K)
    for i, pose in enumerate(poses):
        out = renderer.render(surfels, pose, backend=backend)
        stem = os.path.join(out_dir, f"render_{i:03d}")
        vio.write_png(stem + ".rgb.png", out.color.numpy())
        vio.write_png(stem + ".alpha.png", out.alpha.numpy())
        vio.write_pfm(stem + ".depth.pfm", out.depth_with_sentinel(far=spec.radius * 2.0))
        vio.write_pfm(stem + ".normal.pfm", out.normal.numpy())
