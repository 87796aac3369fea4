"""objective.py

CocaClaw - contrastive one-class loss family

Terms
-----
- center      Ce = l2norm(mean of the 2N normalized projections), nonzero in every dimension
- score       S_i = 2 - sim(q_i, Ce) - sim(q'_i, Ce), in [0, 4]
- invariance  mean(S)                                   (hard mode)
              B + 1/(nu*N) * sum(max(0, S_i - B))       (soft mode, B = nearest-rank
                                                          (1-eta)-quantile of S)
- variance    mean_j max(0, gamma - sqrt(Var_j(q) + eps)), Var over the batch (÷N)
- total       lambda * invariance + mu/2 * (variance(q) + variance(q'))

Variants
--------
- full     as above
- nooc     invariance = mean(1 - sim(q_i, q'_i))
- nocl     invariance = mean(1 - sim(q_i, Ce)); variance on q only (reported for both slots)
- novar    total = lambda * invariance
- coca_vi  the two augmented views (jittered, scaled) take the place of (q, q')

Projections enter un-normalized; normalization happens here.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Any

import torch

from cocaclaw.errors import (
    ConfigError,
    EmptyBatchError,
    UndefinedSimilarityError,
    VarianceUndefinedError,
    VariantModeError,
)

VARIANTS = ("full", "nooc", "nocl", "novar", "coca_vi")
MODES = ("hard", "soft")
CENTER_GUARD = 1e-6

# variants whose invariance term is built on the anomaly score S_i
_SCORE_VARIANTS = ("full", "novar", "coca_vi")


def normalize_variant_name(name: str) -> str:
    return str(name or "").strip().lower().replace("-", "_")


@dataclass
class ObjectiveConfig:
    lam: float = 1.0
    mu: float = 0.1
    gamma: float = 1.0
    eps: float = 1e-4
    nu: float = 0.001
    # None -> eta := nu
    eta: float | None = None
    mode: str = "hard"
    variant: str = "full"

    def __post_init__(self) -> None:
        self.variant = normalize_variant_name(self.variant)
        self.mode = str(self.mode).strip().lower()
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown objective variant {self.variant!r}; expected one of {VARIANTS}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown objective mode {self.mode!r}; expected one of {MODES}")
        if not 0.0 < self.nu <= 1.0:
            raise ConfigError(f"nu must be in (0, 1], got {self.nu}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if self.mode == "soft":
            if not 0.0 < self.effective_eta < 1.0:
                raise ConfigError(f"eta must be in (0, 1) in soft mode, got {self.effective_eta}")
            if self.variant not in _SCORE_VARIANTS:
                raise ConfigError(f"soft mode is defined on anomaly scores; variant {self.variant!r} has none")

    @property
    def effective_eta(self) -> float:
        return self.nu if self.eta is None else float(self.eta)


@dataclass
class Center:
    values: torch.Tensor
    frozen: bool = False

    def freeze(self) -> "Center":
        return Center(values=self.values.detach().clone(), frozen=True)

    def digest(self) -> str:
        raw = self.values.detach().cpu().to(torch.float64).numpy().tobytes()
        return hashlib.sha256(raw).hexdigest()[:16]


@dataclass
class LossBreakdown:
    invariance: torch.Tensor
    variance_q: torch.Tensor
    variance_q_prime: torch.Tensor
    total: torch.Tensor
    boundary: torch.Tensor | None = None

    def to_record(self) -> dict[str, Any]:
        return {
            "invariance": float(self.invariance.detach()),
            "variance_q": float(self.variance_q.detach()),
            "variance_q_prime": float(self.variance_q_prime.detach()),
            "total": float(self.total.detach()),
            "boundary": None if self.boundary is None else float(self.boundary.detach()),
        }


# -------------------------
# Primitives
# -------------------------
def l2_normalize(x: torch.Tensor) -> torch.Tensor:
    norm = x.norm(dim=-1, keepdim=True)
    if bool((norm == 0).any()):
        raise UndefinedSimilarityError("zero vector cannot be normalized")
    return x / norm


def cosine_sim(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """u.v / (|u||v|) along the last dimension (broadcasting)."""
    nu_, nv_ = u.norm(dim=-1), v.norm(dim=-1)
    if bool((nu_ == 0).any()) or bool((nv_ == 0).any()):
        raise UndefinedSimilarityError("cosine similarity of a zero vector is undefined")
    sim = (u * v).sum(dim=-1) / (nu_ * nv_)
    return sim.clamp(-1.0, 1.0)


def compute_center(q: torch.Tensor, q_prime: torch.Tensor) -> Center:
    """Normalized mean of the 2N normalized projections; |c_j| >= 1e-6 before normalizing."""
    if q.shape[0] == 0 or q_prime.shape[0] == 0:
        raise EmptyBatchError("center of an empty batch")
    if q.shape != q_prime.shape:
        raise ValueError(f"q and q' shapes differ: {tuple(q.shape)} vs {tuple(q_prime.shape)}")
    with torch.no_grad():
        c = torch.cat([q, q_prime], dim=0).mean(dim=0)
        sign = torch.where(c >= 0, torch.ones_like(c), -torch.ones_like(c))
        c = torch.where(c.abs() < CENTER_GUARD, sign * CENTER_GUARD, c)
        c = c / c.norm()
    return Center(values=c.detach(), frozen=False)


def anomaly_scores(q: torch.Tensor, q_prime: torch.Tensor, center: Center | torch.Tensor) -> torch.Tensor:
    ce = center.values if isinstance(center, Center) else center
    return 2.0 - cosine_sim(q, ce) - cosine_sim(q_prime, ce)


def invariance(scores: torch.Tensor) -> torch.Tensor:
    if scores.numel() == 0:
        raise EmptyBatchError("invariance of an empty batch")
    return scores.mean()


def nearest_rank_index(n: int, level: float) -> int:
    """0-based index of the nearest-rank `level`-quantile in an ascending sort of n items."""
    # the small slack keeps exact products like 0.75 * 4 from rounding up
    k = math.ceil(level * n - 1e-9) - 1
    return min(max(k, 0), n - 1)


def soft_boundary_invariance(scores: torch.Tensor, nu: float, eta: float) -> tuple[torch.Tensor, torch.Tensor]:
    if scores.numel() == 0:
        raise EmptyBatchError("soft-boundary invariance of an empty batch")
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"nu must be in (0, 1], got {nu}")
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must be in (0, 1), got {eta}")
    n = scores.numel()
    ordered, _ = torch.sort(scores.reshape(-1))
    boundary = ordered[nearest_rank_index(n, 1.0 - eta)]
    hinge = torch.clamp(scores - boundary, min=0.0).sum()
    return boundary + hinge / (nu * n), boundary


def variance_term(q: torch.Tensor, gamma: float, eps: float) -> torch.Tensor:
    if q.shape[0] < 2:
        raise VarianceUndefinedError(f"variance needs a batch of >= 2, got {q.shape[0]}")
    std = torch.sqrt(q.var(dim=0, correction=0) + eps)
    return torch.clamp(gamma - std, min=0.0).mean()


def scoring_pair(variant: str, q: torch.Tensor, q_prime: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Projections that define the center and the anomaly score for a variant."""
    variant = normalize_variant_name(variant)
    if variant in ("nocl", "coca_vi"):
        return q, q
    return q, q_prime


# -------------------------
# Loss
# -------------------------
def coca_loss(
    q_raw: torch.Tensor,
    q_prime_raw: torch.Tensor,
    center: Center | torch.Tensor,
    cfg: ObjectiveConfig,
    *,
    views: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> LossBreakdown:
    variant = cfg.variant
    if variant == "coca_vi":
        if views is None:
            raise VariantModeError("coca_vi needs the two augmented views")
        a, b = views
    else:
        a, b = q_raw, q_prime_raw
    if cfg.mode == "soft" and variant not in _SCORE_VARIANTS:
        raise VariantModeError(f"soft mode is not defined for variant {variant!r}")

    qa, qb = l2_normalize(a), l2_normalize(b)
    ce = center.values if isinstance(center, Center) else center
    ce = ce.to(qa.dtype)

    boundary = None
    if variant in _SCORE_VARIANTS:
        scores = anomaly_scores(qa, qb, ce)
        if cfg.mode == "soft":
            inv, boundary = soft_boundary_invariance(scores, cfg.nu, cfg.effective_eta)
        else:
            inv = invariance(scores)
    elif variant == "nooc":
        inv = (1.0 - cosine_sim(qa, qb)).mean()
    else:  # nocl
        inv = (1.0 - cosine_sim(qa, ce)).mean()

    var_a = variance_term(qa, cfg.gamma, cfg.eps)
    var_b = var_a if variant == "nocl" else variance_term(qb, cfg.gamma, cfg.eps)

    if variant == "novar":
        total = cfg.lam * inv
    else:
        total = cfg.lam * inv + (cfg.mu / 2.0) * (var_a + var_b)

    return LossBreakdown(
        invariance=inv,
        variance_q=var_a,
        variance_q_prime=var_b,
        total=total,
        boundary=boundary,
    )


def similarity_diagnostics(q_raw: torch.Tensor, q_prime_raw: torch.Tensor, center: Center | torch.Tensor) -> dict[str, float]:
    """Mean sim(q,Ce), sim(q',Ce), sim(q,q') and mean per-dimension std of normalized q."""
    with torch.no_grad():
        ce = center.values if isinstance(center, Center) else center
        qa, qb = l2_normalize(q_raw), l2_normalize(q_prime_raw)
        ce = ce.to(qa.dtype)
        return {
            "sim_q_ce": float(cosine_sim(qa, ce).mean()),
            "sim_qp_ce": float(cosine_sim(qb, ce).mean()),
            "sim_q_qp": float(cosine_sim(qa, qb).mean()),
            "proj_std": float(qa.std(dim=0, correction=0).mean()),
        }
