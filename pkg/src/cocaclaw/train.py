"""train.py

CocaClaw - training loop

Per epoch
---------
1) Rebuild the augmented pool from the original training windows (fresh noise every epoch);
   coca_vi instead draws a jittered and a scaled view of every batch.
   Augmentation noise comes from its own stream seeded by `AugmentConfig.seed`; shuffling
   and weight init follow `TrainConfig.seed`.
2) Shuffle and cut into batches (a trailing batch of one window is skipped: batch-norm and
   the variance term need >= 2).
3) Forward, pick the center, compute the loss, AdamW step with global-norm clipping.
   - epochs 0 .. e-1: the center is recomputed from every batch (no gradient through it)
   - end of epoch e-1: the center is computed once over the whole training set in eval
     mode and frozen; later epochs use it unchanged
4) Early stopping on the epoch-mean training loss, counted from the first epoch that runs
   entirely on the frozen center; the best such epoch's weights are returned.

History
-------
One `EpochRecord` per completed epoch: loss terms, similarity diagnostics, per-dimension
projection std, center digest. `collapse_probe` reads it.
"""

from __future__ import annotations

import copy
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Sequence

import numpy as np
import torch

from cocaclaw.augment import AugmentConfig, expand_training_set, view_pair
from cocaclaw.data import TimeSeriesObject, WindowBatch, prepare_windows
from cocaclaw.errors import ConfigError, DimensionMismatchError, EmptyBatchError, TrainingDivergedError
from cocaclaw.model import CocaNet, ModelConfig, build_model, to_tensor
from cocaclaw.objective import (
    Center,
    ObjectiveConfig,
    coca_loss,
    compute_center,
    l2_normalize,
    scoring_pair,
    similarity_diagnostics,
)

logger = logging.getLogger(__name__)

USUAL_LR_RANGE = (1e-4, 5e-4)


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    batch_size: int = 64
    max_epochs: int = 50
    center_freeze_epoch: int = 10
    early_stop_patience: int = 10
    min_delta: float = 1e-5
    grad_clip: float = 5.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.center_freeze_epoch < 1:
            raise ConfigError(f"center_freeze_epoch must be >= 1, got {self.center_freeze_epoch}")
        if self.early_stop_patience < 1:
            raise ConfigError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        lo, hi = USUAL_LR_RANGE
        if not lo <= self.learning_rate <= hi:
            logger.warning("[train] learning_rate=%g outside the usual range [%g, %g]", self.learning_rate, lo, hi)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    invariance: float
    variance_q: float
    variance_q_prime: float
    boundary: float | None
    sim_q_ce: float
    sim_qp_ce: float
    sim_q_qp: float
    proj_std: float
    center_hash: str
    center_frozen: bool
    best_loss: float | None
    batches: int

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False
    best_epoch: int | None = None

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def losses(self) -> list[float]:
        return [r.loss for r in self.records]


class TrainResult(NamedTuple):
    model: CocaNet
    center: Center
    history: TrainHistory


@dataclass
class CollapseReport:
    status: str  # "collapsed" | "healthy" | "insufficient_data"
    collapsed: bool
    final_loss: float | None
    final_proj_std: float | None
    std_threshold: float
    loss_threshold: float


# -------------------------
# Helpers
# -------------------------
def _batch_projections(
    model: CocaNet,
    batch: WindowBatch,
    variant: str,
    aug_cfg: AugmentConfig,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, torch.Tensor, tuple[torch.Tensor, torch.Tensor] | None]:
    if variant == "coca_vi":
        jittered, scaled = view_pair(batch, aug_cfg, rng)
        q1 = model.project(model.encode(to_tensor(jittered.windows, model)))
        q2 = model.project(model.encode(to_tensor(scaled.windows, model)))
        return q1, q2, (q1, q2)
    q, q_prime = model(to_tensor(batch.windows, model))
    return q, q_prime, None


def project_windows(model: CocaNet, windows: np.ndarray, *, chunk: int = 512) -> tuple[torch.Tensor, torch.Tensor]:
    """(q, q') for every window, no gradient; the caller sets train/eval mode."""
    qs, qps = [], []
    with torch.no_grad():
        for start in range(0, len(windows), chunk):
            q, qp = model(to_tensor(windows[start : start + chunk], model))
            qs.append(q)
            qps.append(qp)
    return torch.cat(qs, dim=0), torch.cat(qps, dim=0)


def full_set_center(model: CocaNet, batch: WindowBatch, variant: str) -> Center:
    """Center over the whole original training set, eval mode, then frozen."""
    was_training = model.training
    model.eval()
    try:
        q, q_prime = project_windows(model, batch.windows)
        a, b = scoring_pair(variant, q, q_prime)
        center = compute_center(l2_normalize(a), l2_normalize(b)).freeze()
    finally:
        model.train(was_training)
    return center


def _seed_everything(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


# -------------------------
# Training
# -------------------------
def train_windows(
    pool: WindowBatch,
    model_cfg: ModelConfig,
    obj_cfg: ObjectiveConfig,
    train_cfg: TrainConfig,
    aug_cfg: AugmentConfig,
    *,
    dtype: torch.dtype = torch.float32,
) -> TrainResult:
    """Run the optimization loop on an already normalized/windowed training pool."""
    if len(pool) < 2:
        raise EmptyBatchError(f"need at least 2 training windows, got {len(pool)}")
    if pool.d != model_cfg.in_channels or pool.window_length != model_cfg.window_length:
        raise DimensionMismatchError(
            f"training windows are [T={pool.window_length}, d={pool.d}], model expects "
            f"[T={model_cfg.window_length}, d={model_cfg.in_channels}]"
        )
    variant = obj_cfg.variant
    if variant == "coca_vi" and not aug_cfg.enabled:
        raise ConfigError("coca_vi needs augmentation enabled (its positive pair is jitter vs scale)")

    rng = _seed_everything(train_cfg.seed)
    aug_rng = np.random.default_rng(aug_cfg.seed)
    model = build_model(model_cfg, dtype=dtype)
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=train_cfg.learning_rate,
        betas=(train_cfg.adam_beta1, train_cfg.adam_beta2),
        weight_decay=train_cfg.weight_decay,
    )
    freeze_at = train_cfg.center_freeze_epoch
    logger.info(
        "[train] variant=%s mode=%s windows=%d epochs=%d freeze_epoch=%d batch=%d seed=%d",
        variant,
        obj_cfg.mode,
        len(pool),
        train_cfg.max_epochs,
        freeze_at,
        train_cfg.batch_size,
        train_cfg.seed,
    )

    history = TrainHistory()
    frozen: Center | None = None
    best_loss = math.inf
    best_state: dict[str, torch.Tensor] | None = None
    stale = 0

    for epoch in range(train_cfg.max_epochs):
        model.train()
        epoch_pool = pool if variant == "coca_vi" else expand_training_set(pool, aug_cfg, aug_rng)
        order = rng.permutation(len(epoch_pool))

        sums: dict[str, float] = {}
        n_batches = 0
        boundary_sum = 0.0
        last_center: Center | None = frozen
        for batch_no, start in enumerate(range(0, len(order), train_cfg.batch_size)):
            idx = order[start : start + train_cfg.batch_size]
            if len(idx) < 2:
                continue
            batch = epoch_pool.take(idx)
            q, q_prime, views = _batch_projections(model, batch, variant, aug_cfg, aug_rng)

            if frozen is None:
                a, b = (q, q_prime) if views is not None else scoring_pair(variant, q, q_prime)
                center = compute_center(l2_normalize(a.detach()), l2_normalize(b.detach()))
            else:
                center = frozen
            last_center = center

            losses = coca_loss(q, q_prime, center, obj_cfg, views=views)
            if not torch.isfinite(losses.total):
                raise TrainingDivergedError(f"non-finite loss {float(losses.total)}", epoch=epoch, batch=batch_no)

            optimizer.zero_grad()
            losses.total.backward()
            if train_cfg.grad_clip and train_cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            optimizer.step()

            rec = losses.to_record()
            diag = similarity_diagnostics(q.detach(), q_prime.detach(), center)
            for key in ("total", "invariance", "variance_q", "variance_q_prime"):
                sums[key] = sums.get(key, 0.0) + rec[key]
            for key, value in diag.items():
                sums[key] = sums.get(key, 0.0) + value
            if rec["boundary"] is not None:
                boundary_sum += rec["boundary"]
            n_batches += 1

        if n_batches == 0:
            raise EmptyBatchError(f"epoch {epoch} produced no batch of >= 2 windows")

        if frozen is None and epoch == freeze_at - 1:
            frozen = full_set_center(model, pool, variant)
            last_center = frozen
            logger.info("[train] center frozen after epoch=%d hash=%s", epoch, frozen.digest())

        mean = {k: v / n_batches for k, v in sums.items()}
        loss = mean["total"]

        # best/early-stop bookkeeping only once every batch of the epoch used the frozen center
        best_value: float | None = None
        if frozen is not None and epoch >= freeze_at:
            if loss < best_loss - train_cfg.min_delta:
                best_loss = loss
                best_state = copy.deepcopy(model.state_dict())
                history.best_epoch = epoch
                stale = 0
            else:
                stale += 1
            best_value = best_loss

        record = EpochRecord(
            epoch=epoch,
            loss=loss,
            invariance=mean["invariance"],
            variance_q=mean["variance_q"],
            variance_q_prime=mean["variance_q_prime"],
            boundary=(boundary_sum / n_batches) if obj_cfg.mode == "soft" else None,
            sim_q_ce=mean["sim_q_ce"],
            sim_qp_ce=mean["sim_qp_ce"],
            sim_q_qp=mean["sim_q_qp"],
            proj_std=mean["proj_std"],
            center_hash=last_center.digest() if last_center is not None else "",
            center_frozen=frozen is not None,
            best_loss=best_value,
            batches=n_batches,
        )
        history.append(record)
        logger.info(
            "[train] epoch=%d loss=%.6f inv=%.6f var_q=%.4f var_qp=%.4f sim_q_ce=%.4f sim_qp_ce=%.4f "
            "sim_q_qp=%.4f proj_std=%.5f center=%s",
            epoch,
            loss,
            record.invariance,
            record.variance_q,
            record.variance_q_prime,
            record.sim_q_ce,
            record.sim_qp_ce,
            record.sim_q_qp,
            record.proj_std,
            record.center_hash,
        )

        if stale >= train_cfg.early_stop_patience:
            history.stopped_early = True
            logger.info("[train] early stop at epoch=%d best_epoch=%s best_loss=%.6f", epoch, history.best_epoch, best_loss)
            break

    if frozen is None:
        # max_epochs < center_freeze_epoch: freeze from the final weights
        frozen = full_set_center(model, pool, variant)
        logger.info("[train] center frozen at end of training hash=%s", frozen.digest())
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model=model, center=frozen, history=history)


def train(
    objects: Sequence[TimeSeriesObject],
    model_cfg: ModelConfig,
    obj_cfg: ObjectiveConfig,
    train_cfg: TrainConfig,
    aug_cfg: AugmentConfig,
    *,
    max_workers: int = 1,
    dtype: torch.dtype = torch.float32,
) -> TrainResult:
    """Normalize and window every object's training split, pool, then train."""
    prepared = prepare_windows(objects, model_cfg.window_length, "train", max_workers=max_workers)
    pool = WindowBatch.concat([p.batch for p in prepared])
    return train_windows(pool, model_cfg, obj_cfg, train_cfg, aug_cfg, dtype=dtype)


# -------------------------
# Collapse diagnostics
# -------------------------
def collapse_probe(
    history: TrainHistory,
    *,
    gamma: float = 1.0,
    std_ratio: float = 0.01,
    loss_threshold: float = 1e-3,
) -> CollapseReport:
    """Flag hypersphere collapse: tiny projection spread together with near-zero loss."""
    std_threshold = std_ratio * gamma
    if len(history) < 2:
        return CollapseReport(
            status="insufficient_data",
            collapsed=False,
            final_loss=history.records[-1].loss if history.records else None,
            final_proj_std=history.records[-1].proj_std if history.records else None,
            std_threshold=std_threshold,
            loss_threshold=loss_threshold,
        )
    last = history.records[-1]
    collapsed = last.proj_std < std_threshold and last.loss < loss_threshold
    return CollapseReport(
        status="collapsed" if collapsed else "healthy",
        collapsed=collapsed,
        final_loss=last.loss,
        final_proj_std=last.proj_std,
        std_threshold=std_threshold,
        loss_threshold=loss_threshold,
    )
