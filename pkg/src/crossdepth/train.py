"""Training loop, schedule, configuration and the ablation switchboard."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterator

import numpy as np
import torch

from .augment import AugmentConfig, augment_pipeline, sample_rng
from .losses import LossBundle, LossWeights, ssi_loss_single, total_loss
from .metrics import MetricReport, aggregate, evaluate
from .models import DepthEstimator, DualBranchModel, ModelConfig, load_dual, save_checkpoint
from .types import DepthRange, Sample, valid_mask_of

log = logging.getLogger(__name__)

LOG_KEYS = ("step", "lr", "ssi", "urcd", "u", "total")

# Table-style ablation rows: id -> (cross_distill, uncertainty_rectify, coupling, cutflip)
ABLATION_ROWS = {
    1: (False, False, False, False),
    2: (True, False, False, False),
    3: (True, True, False, False),
    4: (True, False, True, False),
    5: (True, True, True, False),
    6: (False, False, False, True),
    7: (True, True, True, True),
}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending field when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, batch_ids: list[str], terms: dict[str, float]):
        super().__init__(f"non-finite loss at step {step} on batch {batch_ids}: {terms}")
        self.step = step
        self.batch_ids = batch_ids
        self.terms = terms


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    poly_power: float = 0.9
    max_steps: int | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    cross_distill: bool = True
    uncertainty_rectify: bool = True
    coupling: bool = True
    cutflip: bool = True
    seed: int = 0
    depth_range: DepthRange = field(default_factory=DepthRange)
    grad_clip: float | None = 10.0
    urcd_on_valid_only: bool = False
    branches: str = "both"
    val_every: int = 1
    pixel_weighted: bool = False
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not self.lr_start >= self.lr_end > 0:
            raise ConfigError("need lr_start >= lr_end > 0", "lr_start")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1", "epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", "batch_size")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1", "max_steps")
        if self.uncertainty_rectify and not self.cross_distill:
            raise ConfigError("uncertainty_rectify requires cross_distill", "uncertainty_rectify")
        if self.branches not in ("both", "transformer"):
            raise ConfigError("branches must be 'both' or 'transformer'", "branches")
        if self.branches == "transformer" and self.cross_distill:
            raise ConfigError("training the transformer alone excludes cross_distill", "branches")

    @property
    def model_config(self) -> ModelConfig:
        """Model config with the run-level switches (coupling, depth range) applied."""
        return replace(self.model, coupling_enabled=self.coupling, depth_range=self.depth_range)

    @property
    def augment_config(self) -> AugmentConfig:
        aug = self.augment if self.cutflip else replace(self.augment, cutflip_prob=0.0)
        return replace(aug, seed=self.seed)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _build(cls, d, "")


_NESTED = {"weights": LossWeights, "augment": AugmentConfig, "model": ModelConfig,
           "depth_range": DepthRange}


def _build(cls, d: Any, prefix: str):
    if cls is DepthRange and isinstance(d, (list, tuple)):
        if len(d) != 2:
            raise ConfigError(f"{prefix or 'depth_range'} needs [d_min, d_max]", prefix)
        d = {"d_min": d[0], "d_max": d[1]}
    if not isinstance(d, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object", prefix or None)
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in d.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in known:
            raise ConfigError(f"unknown config key {path!r}", path)
        if key in _NESTED:
            value = _build(_NESTED[key], value, path)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}", prefix or None) from exc


def ablation_config(base: TrainConfig, cd: bool, up: bool, cu: bool, cf: bool) -> TrainConfig:
    return replace(base, cross_distill=cd, uncertainty_rectify=up, coupling=cu, cutflip=cf)


# ---------------------------------------------------------------------------
# schedule and single step


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Polynomial decay from ``lr_start`` (step 0) to ``lr_end`` (step ``total_steps``)."""
    if total_steps <= 0 or not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    frac = 1.0 - step / total_steps
    return cfg.lr_end + (cfg.lr_start - cfg.lr_end) * frac ** cfg.poly_power


def collate(samples: list[Sample]) -> dict[str, Any]:
    return {
        "image": torch.from_numpy(np.stack([s.image for s in samples])).float(),
        "depth": torch.from_numpy(np.stack([s.gt_depth for s in samples])).float(),
        "ids": [s.id for s in samples],
    }


def _branch_params(model: DualBranchModel) -> list[list[torch.nn.Parameter]]:
    return [list(model.transformer.parameters()), list(model.cnn.parameters())]


def compute_losses(model: DualBranchModel, batch: dict, cfg: TrainConfig) -> LossBundle:
    gt = batch["depth"]
    mask = valid_mask_of(gt, cfg.depth_range)
    if cfg.branches == "transformer":
        out, _ = model.transformer(batch["image"])
        ssi = ssi_loss_single(out.depth, gt, mask, cfg.weights.kappa, cfg.weights.eta)
        zero = ssi.new_zeros(())
        return LossBundle(ssi=ssi, urcd=zero, u=zero, total=ssi, lambda1=0.0, lambda2=0.0)
    return total_loss(model(batch["image"]), gt, mask, cfg.weights,
                      cross_distill=cfg.cross_distill,
                      uncertainty_rectify=cfg.uncertainty_rectify,
                      urcd_on_valid_only=cfg.urcd_on_valid_only)


def train_step(model: DualBranchModel, optimizer: torch.optim.Optimizer, batch: dict,
               cfg: TrainConfig, lr: float, step: int = 0) -> LossBundle:
    """One optimizer update on ``batch``; raises NonFiniteLossError before touching weights."""
    model.train()
    for group in optimizer.param_groups:
        group["lr"] = lr
    bundle = compute_losses(model, batch, cfg)
    if not torch.isfinite(bundle.total):
        raise NonFiniteLossError(step, list(batch["ids"]), bundle.as_floats())
    optimizer.zero_grad(set_to_none=True)
    bundle.total.backward()
    if cfg.grad_clip:
        # per branch, so one branch's gradients never rescale the other's
        for params in _branch_params(model):
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
    optimizer.step()
    return bundle


# ---------------------------------------------------------------------------
# evaluation


def estimator_from(model: DualBranchModel) -> DepthEstimator:
    """Copy only the transformer branch into a fresh inference model."""
    est = DepthEstimator(model.cfg)
    est.transformer.load_state_dict(model.transformer.state_dict())
    return est.eval()


@torch.no_grad()
def predict(estimator: DepthEstimator, samples: list[Sample], batch_size: int = 8) -> list[np.ndarray]:
    estimator.eval()
    preds = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        image = torch.from_numpy(np.stack([s.image for s in chunk])).float()
        depth = estimator(image).depth.numpy()
        preds.extend(depth[j] for j in range(len(chunk)))
    return preds


def evaluate_samples(estimator: DepthEstimator, samples: list[Sample], depth_range: DepthRange,
                     pixel_weighted: bool = False) -> tuple[MetricReport, list[MetricReport]]:
    if not samples:
        raise ValueError("no samples to evaluate")
    preds = predict(estimator, samples)
    per_image = [evaluate(p, s.gt_depth, valid_mask_of(s.gt_depth, depth_range))
                 for p, s in zip(preds, samples)]
    return aggregate(per_image, pixel_weighted=pixel_weighted), per_image


# ---------------------------------------------------------------------------
# the loop


class Trainer:
    """Stateful training run; batches are a pure function of (seed, epoch, sample ids)."""

    def __init__(self, cfg: TrainConfig, train: list[Sample], val: list[Sample] | None = None,
                 out_dir: str | os.PathLike | None = None):
        if not train:
            raise ValueError("training dataset is empty")
        self.cfg = cfg
        self.train_samples = list(train)
        self.val_samples = list(val) if val else []
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.steps_per_epoch = math.ceil(len(self.train_samples) / cfg.batch_size)
        self.total_steps = cfg.max_steps or cfg.epochs * self.steps_per_epoch
        self.model = DualBranchModel(cfg.model_config, seed=cfg.seed)
        params = (self.model.transformer.parameters() if cfg.branches == "transformer"
                  else self.model.parameters())
        self.optimizer = torch.optim.Adam(params, lr=cfg.lr_start, betas=(0.9, 0.999))
        self.step = 0
        self.best_abs_rel = math.inf
        self.history: list[dict] = []

    # batches -------------------------------------------------------------
    def epoch_order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.cfg.seed, epoch, 0x5EED]).permutation(len(self.train_samples))

    def batch_at(self, step: int) -> dict:
        epoch, index = divmod(step, self.steps_per_epoch)
        order = self.epoch_order(epoch)
        picked = order[index * self.cfg.batch_size:(index + 1) * self.cfg.batch_size]
        aug = self.cfg.augment_config
        samples = [augment_pipeline(self.train_samples[i], aug,
                                    sample_rng(self.cfg.seed, self.train_samples[i].id, epoch))
                   for i in picked]
        return collate(samples)

    # state ---------------------------------------------------------------
    def state_dict(self) -> dict:
        return {"step": self.step, "epoch": self.step // self.steps_per_epoch,
                "optimizer": self.optimizer.state_dict(),
                "torch_rng": torch.get_rng_state(),
                "best_abs_rel": self.best_abs_rel,
                "config": self.cfg.to_dict()}

    def load_state(self, checkpoint: str | os.PathLike) -> None:
        model, payload = load_dual(checkpoint, seed=self.cfg.seed)
        state = payload.get("train_state")
        if not state:
            raise ValueError(f"{checkpoint} carries no training state")
        self.model.load_state_dict(model.state_dict())
        self.optimizer.load_state_dict(state["optimizer"])
        torch.set_rng_state(state["torch_rng"])
        self.step = int(state["step"])
        self.best_abs_rel = float(state["best_abs_rel"])

    def save(self, name: str, meta: dict | None = None) -> Path | None:
        if self.out_dir is None:
            return None
        return save_checkpoint(self.out_dir / name, self.model, self.state_dict(), meta)

    # running -------------------------------------------------------------
    def _log(self, record: dict) -> None:
        self.history.append(record)
        if self.out_dir is not None:
            with open(self.out_dir / "train_log.jsonl", "a") as f:
                f.write(json.dumps(record) + "\n")

    def validate(self) -> MetricReport | None:
        if not self.val_samples:
            return None
        report, _ = evaluate_samples(estimator_from(self.model), self.val_samples,
                                     self.cfg.depth_range, self.cfg.pixel_weighted)
        return report

    def _dump_failure(self, err: NonFiniteLossError) -> None:
        if self.out_dir is None:
            return
        dump = {"step": err.step, "batch_ids": err.batch_ids, "terms": err.terms}
        (self.out_dir / "nonfinite_batch.json").write_text(json.dumps(dump, indent=2) + "\n")

    def run(self, until_step: int | None = None) -> dict[str, Path | None]:
        """Train up to ``until_step`` (default: the end of the schedule)."""
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        stop = self.total_steps if until_step is None else min(until_step, self.total_steps)
        best_path = self.out_dir / "best.ckpt" if self.out_dir is not None else None
        while self.step < stop:
            lr = lr_at(self.step, self.total_steps, self.cfg)
            batch = self.batch_at(self.step)
            try:
                bundle = train_step(self.model, self.optimizer, batch, self.cfg, lr, self.step)
            except NonFiniteLossError as err:
                self._dump_failure(err)
                raise
            self._log({"step": self.step, "lr": lr, **bundle.as_floats()})
            self.step += 1
            end_of_epoch = self.step % self.steps_per_epoch == 0
            epoch = self.step // self.steps_per_epoch
            if (end_of_epoch and epoch % self.cfg.val_every == 0) or self.step == self.total_steps:
                report = self.validate()
                if report is not None:
                    log.info("step %d epoch %d val abs_rel %.4f delta1 %.4f",
                             self.step, epoch, report.abs_rel, report.delta1)
                    if report.abs_rel < self.best_abs_rel:
                        self.best_abs_rel = report.abs_rel
                        self.save("best.ckpt", {"val": report.as_dict(), "step": self.step})
        last = self.save("last.ckpt", {"step": self.step})
        if best_path is not None and not best_path.exists():
            # no validation data: the final weights are the best we have
            best_path = self.save("best.ckpt", {"step": self.step})
        return {"best": best_path, "last": last}


def fit(train: list[Sample], cfg: TrainConfig, out_dir: str | os.PathLike,
        val: list[Sample] | None = None, resume: str | os.PathLike | None = None,
        until_step: int | None = None) -> Path:
    """Train and return the best-validation checkpoint path (``last.ckpt`` is written too)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(cfg, train, val, out_dir)
    if resume is not None:
        trainer.load_state(resume)
        _truncate_log(out_dir / "train_log.jsonl", trainer.step)
    paths = trainer.run(until_step)
    return paths["best"]


def _truncate_log(path: Path, step: int) -> None:
    """Drop log lines at or after ``step`` so a resumed run does not duplicate them."""
    if not path.exists():
        return
    keep = [line for line in path.read_text().splitlines()
            if line.strip() and json.loads(line)["step"] < step]
    path.write_text("".join(line + "\n" for line in keep))


def read_log(path: str | os.PathLike) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
