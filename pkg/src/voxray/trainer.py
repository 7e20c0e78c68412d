"""Two-phase training loop.

Phase one fits the voxel-field encoder alone with a low-res MSE objective.
Phase two trains encoder and decoder jointly on sampled patches with the
weighted multi-term objective, plus one discriminator step per iteration
whenever the adversarial weight is positive.

Everything that consumes randomness (init, view/patch selection, ray jitter)
draws from one seeded generator whose state is checkpointed, so a fixed seed
gives bit-identical runs and a resumed run continues the interrupted loss
trace exactly.
"""

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import Tape
from .checkpoint import load_container, save_container
from .decoder import DecoderConfig, DetailDecoder, normalize_depth
from .encoder import FEATURE_DIM, FieldEncoder
from .losses import (
    Discriminator,
    DiscriminatorConfig,
    FilterBankExtractor,
    LossWeights,
    adversarial_losses,
    combined_loss,
    l1_loss,
    mse_loss,
    perceptual_loss,
)
from .optim import Adam, clip_grad_norm
from .scene.patches import build_patch_set, extract_full, extract_low

log = logging.getLogger("voxray.trainer")

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 500


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    upscale: int = 4
    patch_size: int = 64
    n_samples: int = 128
    pretrain_iters: int = 30000
    joint_iters: int = 200000
    lr_encoder: float = 1e-4
    lr_decoder: float = 2e-4
    # Grids tolerate far larger steps than the MLP; raw density must travel
    # tens of units in a few visits per voxel, so it gets the biggest boost.
    density_lr_scale: float = 1000.0
    color_lr_scale: float = 100.0
    grid_dims: tuple = (96, 96, 96)
    bbox: float = 1.2
    decoder_width: int = 64
    decoder_blocks: int = 4
    modulate: bool = True
    joint_flow: bool = True
    disc_widths: tuple = (32, 64, 128, 256)
    weights: LossWeights = field(default_factory=LossWeights)
    grad_clip: float = 10.0
    checkpoint_interval: int = 1000
    jitter: bool = True
    perceptual_levels: int = 2
    log_every: int = 100

    def __post_init__(self):
        if isinstance(self.grid_dims, int):
            self.grid_dims = (self.grid_dims,) * 3
        self.grid_dims = tuple(int(d) for d in self.grid_dims)
        self.disc_widths = tuple(int(w) for w in self.disc_widths)
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.patch_size % self.upscale:
            raise ValueError(f"patch size {self.patch_size} is not divisible "
                             f"by upscale {self.upscale}")
        if self.n_samples < 2:
            raise ValueError("need at least 2 samples per ray")
        if self.pretrain_iters < 0 or self.joint_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.bbox <= 0:
            raise ValueError("bbox half-extent must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid_dims"] = list(self.grid_dims)
        d["disc_widths"] = list(self.disc_widths)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def paper(cls) -> "TrainConfig":
        return cls()

    @classmethod
    def desk(cls) -> "TrainConfig":
        return cls(upscale=2, patch_size=32, n_samples=64,
                   pretrain_iters=2000, joint_iters=5000,
                   lr_encoder=1e-3, lr_decoder=1e-3,
                   decoder_width=32, decoder_blocks=2,
                   disc_widths=(16, 32, 64), checkpoint_interval=1000)


PROFILES = {"paper": TrainConfig.paper, "desk": TrainConfig.desk}


class Trainer:
    def __init__(self, views, config: TrainConfig):
        if not views:
            raise ValueError("training needs at least one view")
        sizes = {(v.camera.width, v.camera.height) for v in views}
        if len(sizes) != 1:
            raise ValueError(f"views must share one resolution, got {sizes}")
        width, height = sizes.pop()
        self.views = list(views)
        self.config = config
        self.patch_set = build_patch_set(width, height, config.patch_size,
                                         config.upscale)

        self.rng = np.random.default_rng(config.seed)
        b = config.bbox
        self.encoder = FieldEncoder(config.grid_dims, (-b, -b, -b), (b, b, b),
                                    rng=self.rng)
        self.decoder = DetailDecoder(
            DecoderConfig(in_channels=FEATURE_DIM, width=config.decoder_width,
                          n_blocks=config.decoder_blocks, upscale=config.upscale,
                          modulate=config.modulate),
            rng=self.rng)
        self.disc = None
        if config.weights.adversarial > 0:
            self.disc = Discriminator(DiscriminatorConfig(widths=config.disc_widths),
                                      rng=self.rng)
        self.extractor = None
        if config.weights.perceptual > 0:
            self.extractor = FilterBankExtractor(config.perceptual_levels)

        grid_scales = {"density_grid": config.density_lr_scale,
                       "color_grid": config.color_lr_scale}
        self.opt_encoder = Adam(self.encoder.parameters(), config.lr_encoder,
                                lr_scales=grid_scales)
        self.opt_decoder = Adam(self.decoder.parameters(), config.lr_decoder)
        self.opt_disc = (Adam(self.disc.parameters(), config.lr_decoder)
                         if self.disc else None)

        self.pretrain_done = 0
        self.joint_done = 0
        self.pretrain_losses: list = []
        self.joint_losses: list = []
        self._initial_joint_loss = None
        self._divergence_run = 0

    # --- sampling -----------------------------------------------------------

    def _draw_patch(self):
        view = self.views[int(self.rng.integers(len(self.views)))]
        patch = self.patch_set[int(self.rng.integers(len(self.patch_set)))]
        return view, patch

    # --- shared step plumbing -------------------------------------------------

    def _generator_params(self, include_decoder: bool):
        params = list(self.encoder.parameters().values())
        if include_decoder:
            params += list(self.decoder.parameters().values())
        return params

    def _abort_if_not_finite(self, loss_value: float, norm: float, phase: str,
                             iteration: int, lr: float):
        if np.isfinite(loss_value) and np.isfinite(norm):
            return
        raise TrainingDiverged(
            f"non-finite loss at iteration {iteration} of {phase} "
            f"(loss {loss_value}, lr {lr}, grad norm {norm})")

    def _note_divergence(self, loss_value: float, iteration: int):
        if self._initial_joint_loss is None:
            self._initial_joint_loss = loss_value
            return
        if loss_value > DIVERGENCE_FACTOR * self._initial_joint_loss:
            self._divergence_run += 1
            if self._divergence_run >= DIVERGENCE_PATIENCE:
                log.warning("loss has exceeded 10x its initial value for %d "
                            "iterations (now %.4g at iteration %d)",
                            self._divergence_run, loss_value, iteration)
                self._divergence_run = 0
        else:
            self._divergence_run = 0

    # --- phase one ------------------------------------------------------------

    def pretrain(self, n_iters: int | None = None, checkpoint_path=None) -> None:
        """Fit grids + MLP + rgb head with low-res MSE on random patches."""
        n_iters = self.config.pretrain_iters if n_iters is None else n_iters
        cfg = self.config
        enc_params = self._generator_params(include_decoder=False)
        for _ in range(n_iters):
            view, patch = self._draw_patch()
            with Tape() as tape:
                out = self.encoder.render_patch_lowres(
                    view.camera, patch, cfg.n_samples, jitter=cfg.jitter,
                    rng=self.rng)
                loss = mse_loss(out.rgb_low, extract_low(view, patch))
                tape.backward(loss)
            norm = clip_grad_norm(enc_params, cfg.grad_clip)
            value = float(loss.data)
            self._abort_if_not_finite(value, norm, "pretraining",
                                      self.pretrain_done, cfg.lr_encoder)
            self.opt_encoder.step()
            self.opt_encoder.zero_grad()
            self.pretrain_done += 1
            self.pretrain_losses.append(value)
            if self.pretrain_done % cfg.log_every == 0:
                log.info("pretrain %d/%d mse %.5f grad %.3f",
                         self.pretrain_done, n_iters, value, norm)
            if (checkpoint_path and cfg.checkpoint_interval
                    and self.pretrain_done % cfg.checkpoint_interval == 0):
                self.save(checkpoint_path)

    # --- phase two --------------------------------------------------------------

    def _joint_iteration(self, view, patch):
        cfg = self.config
        w = cfg.weights
        need_full = w.high > 0 or w.adversarial > 0 or w.perceptual > 0
        loss_d = None
        with Tape() as tape:
            out = self.encoder.render_patch_lowres(
                view.camera, patch, cfg.n_samples, jitter=cfg.jitter,
                rng=self.rng)
            terms = {}
            if w.low > 0:
                terms["low"] = mse_loss(out.rgb_low, extract_low(view, patch))
            if need_full:
                feats, depth = out.features, out.depth
                if not cfg.joint_flow:
                    feats, depth = feats.detach(), depth.detach()
                d_norm = (normalize_depth(depth, view.camera.near, view.camera.far)
                          if cfg.modulate else None)
                pred = self.decoder(feats, d_norm)
                gt_full = extract_full(view, patch)
                if w.high > 0:
                    terms["high"] = l1_loss(pred, gt_full)
                if w.perceptual > 0:
                    terms["perceptual"] = perceptual_loss(self.extractor, pred,
                                                          gt_full)
                if w.adversarial > 0:
                    loss_g, loss_d = adversarial_losses(self.disc, gt_full, pred)
                    terms["adversarial"] = loss_g
            total, breakdown = combined_loss(w, **terms)
            tape.backward(total)

            gen_params = self._generator_params(include_decoder=need_full)
            norm = clip_grad_norm(gen_params, cfg.grad_clip)
            value = float(total.data)
            self._abort_if_not_finite(value, norm, "joint training",
                                      self.joint_done, cfg.lr_encoder)
            self.opt_encoder.step()
            self.opt_encoder.zero_grad()
            if need_full:
                self.opt_decoder.step()
            self.opt_decoder.zero_grad()

            if loss_d is not None:
                self.opt_disc.zero_grad()
                tape.backward(loss_d)
                disc_params = list(self.disc.parameters().values())
                d_norm_grad = clip_grad_norm(disc_params, cfg.grad_clip)
                self._abort_if_not_finite(float(loss_d.data), d_norm_grad,
                                          "discriminator step",
                                          self.joint_done, cfg.lr_decoder)
                breakdown["disc"] = float(loss_d.data)
                self.opt_disc.step()
                self.opt_disc.zero_grad()
        return value, norm, breakdown

    def train_joint(self, n_iters: int | None = None, checkpoint_path=None) -> None:
        """Joint encoder+decoder (+discriminator) training on sampled patches."""
        n_iters = self.config.joint_iters if n_iters is None else n_iters
        cfg = self.config
        for _ in range(n_iters):
            view, patch = self._draw_patch()
            value, norm, breakdown = self._joint_iteration(view, patch)
            self.joint_done += 1
            self.joint_losses.append(value)
            self._note_divergence(value, self.joint_done)
            if self.joint_done % cfg.log_every == 0:
                parts = " ".join(f"{k} {v:.5f}" for k, v in sorted(breakdown.items()))
                log.info("joint %d/%d total %.5f grad %.3f %s",
                         self.joint_done, n_iters, value, norm, parts)
            if (checkpoint_path and cfg.checkpoint_interval
                    and self.joint_done % cfg.checkpoint_interval == 0):
                self.save(checkpoint_path)

    def train(self, checkpoint_path=None) -> None:
        """Run both phases for their configured iteration budgets."""
        remaining_pre = self.config.pretrain_iters - self.pretrain_done
        if remaining_pre > 0:
            self.pretrain(remaining_pre, checkpoint_path)
        remaining_joint = self.config.joint_iters - self.joint_done
        if remaining_joint > 0:
            self.train_joint(remaining_joint, checkpoint_path)
        if checkpoint_path:
            self.save(checkpoint_path)

    # --- persistence -----------------------------------------------------------

    def _all_params(self) -> dict:
        params = {}
        params.update(self.encoder.parameters())
        params.update(self.decoder.parameters())
        if self.disc is not None:
            params.update(self.disc.parameters())
        return params

    def save(self, path) -> None:
        tensors = {name: p.data for name, p in self._all_params().items()}
        adam_steps = {}
        groups = [("encoder", self.opt_encoder), ("decoder", self.opt_decoder)]
        if self.opt_disc is not None:
            groups.append(("disc", self.opt_disc))
        for group, opt in groups:
            opt_tensors, opt_meta = opt.state_dict()
            for key, arr in opt_tensors.items():
                tensors[f"adam.{group}.{key}"] = arr
            adam_steps[group] = opt_meta["t"]
        meta = {
            "config": self.config.to_dict(),
            "prng_state": self.rng.bit_generator.state,
            "progress": {"pretrain_done": self.pretrain_done,
                         "joint_done": self.joint_done},
            "adam.steps": adam_steps,
        }
        save_container(path, tensors, meta)

    def _load_state(self, tensors: dict, meta: dict) -> None:
        for name, p in self._all_params().items():
            if name not in tensors:
                raise ValueError(f"checkpoint is missing section {name}")
            arr = tensors[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"section {name} has shape {arr.shape}, "
                                 f"model expects {p.data.shape}")
            p.data[:] = arr
        groups = [("encoder", self.opt_encoder), ("decoder", self.opt_decoder)]
        if self.opt_disc is not None:
            groups.append(("disc", self.opt_disc))
        for group, opt in groups:
            prefix = f"adam.{group}."
            opt_tensors = {key[len(prefix):]: arr for key, arr in tensors.items()
                           if key.startswith(prefix)}
            opt.load_state_dict(opt_tensors, {"t": meta["adam.steps"][group]})
        self.rng.bit_generator.state = meta["prng_state"]
        self.pretrain_done = meta["progress"]["pretrain_done"]
        self.joint_done = meta["progress"]["joint_done"]

    @classmethod
    def from_checkpoint(cls, path, views) -> "Trainer":
        tensors, meta = load_container(path)
        if "config" not in meta:
            raise ValueError(f"checkpoint has no config section: {path}")
        trainer = cls(views, TrainConfig.from_dict(meta["config"]))
        trainer._load_state(tensors, meta)
        return trainer


def load_models(path):
    """Encoder/decoder pair from a checkpoint, for rendering and evaluation."""
    tensors, meta = load_container(path)
    config = TrainConfig.from_dict(meta["config"])
    b = config.bbox
    encoder = FieldEncoder(config.grid_dims, (-b, -b, -b), (b, b, b),
                           rng=np.random.default_rng(0))
    decoder = DetailDecoder(
        DecoderConfig(in_channels=FEATURE_DIM, width=config.decoder_width,
                      n_blocks=config.decoder_blocks, upscale=config.upscale,
                      modulate=config.modulate),
        rng=np.random.default_rng(0))
    for model in (encoder, decoder):
        for name, p in model.parameters().items():
            if name not in tensors:
                raise ValueError(f"checkpoint is missing section {name}")
            p.data[:] = tensors[name]
    return encoder, decoder, config
