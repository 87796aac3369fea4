"""model.py

CocaClaw - network: temporal-conv encoder, LSTM Seq2Seq, projector

Shapes (batch-first)
--------------------
    X      [B, T, d]   normalized windows
    Z      [B, L, K]   encode(X), L = T / 8
    Z'     [B, L, K]   reconstruct(Z)
    q, q'  [B, P]      project(Z), project(Z') -- one projector serves both branches

Train/eval mode is the usual torch switch (`model.train()` / `model.eval()`): dropout is
active in train mode only, batch-norm uses running statistics (momentum 0.1) in eval mode.

Checkpoint
----------
`save_checkpoint` writes a torch container:
    {"format_version": 1, "model_config": {...}, "state_dict": {...},
     "center": tensor | None, "meta": {...}}
Tensors are stored as-is, so a load/save round trip is bit-exact.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch
from torch import nn

from cocaclaw.errors import ConfigError, DimensionMismatchError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
POOLING_BLOCKS = 3


@dataclass
class ModelConfig:
    in_channels: int = 1
    window_length: int = 32
    repre_channels: int = 64
    # first two entries of the conv ladder; the third is repre_channels
    conv_channels: tuple[int, int] = (32, 64)
    kernel_size: int = 4
    dropout_rate: float = 0.45
    hidden_size: int = 128
    project_hidden: int | None = None
    project_channels: int = 400
    num_layers: int = 3
    bn_momentum: float = 0.1

    def __post_init__(self) -> None:
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if len(self.conv_channels) != 2:
            raise ConfigError(f"conv_channels needs 2 entries (the third is repre_channels), got {self.conv_channels}")
        if self.window_length % 8 != 0 or self.window_length < 8:
            raise ConfigError(f"window_length must be a positive multiple of 8, got {self.window_length}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def channel_ladder(self) -> tuple[int, int, int]:
        return (self.conv_channels[0], self.conv_channels[1], self.repre_channels)

    @property
    def latent_length(self) -> int:
        return self.window_length // 2**POOLING_BLOCKS

    @property
    def projector_hidden(self) -> int:
        return self.project_hidden or self.hidden_size

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["conv_channels"] = list(self.conv_channels)
        return out

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in raw.items() if k in known})


class ConvEncoder(nn.Module):
    """Three (conv -> BN -> ReLU -> maxpool/2) blocks, dropout after block 1."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        blocks = []
        in_ch = cfg.in_channels
        for i, out_ch in enumerate(cfg.channel_ladder):
            layers: list[nn.Module] = [
                nn.Conv1d(in_ch, out_ch, kernel_size=cfg.kernel_size, stride=1, padding="same"),
                nn.BatchNorm1d(out_ch, momentum=cfg.bn_momentum),
                nn.ReLU(),
                nn.MaxPool1d(kernel_size=2, stride=2),
            ]
            if i == 0:
                layers.append(nn.Dropout(cfg.dropout_rate))
            blocks.append(nn.Sequential(*layers))
            in_ch = out_ch
        self.blocks = nn.Sequential(*blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # [B, T, d] -> [B, d, T] -> conv stack -> [B, L, K]
        return self.blocks(x.transpose(1, 2)).transpose(1, 2)


class Seq2Seq(nn.Module):
    """LSTM encoder summarizes z_1..z_L into a context; the LSTM decoder rebuilds Z.

    The decoder starts from a zero vector, feeds back its own output, and emits the
    sequence in reverse time order; the result is flipped back to align with Z.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        k, h = cfg.repre_channels, cfg.hidden_size
        dropout = cfg.dropout_rate if cfg.num_layers > 1 else 0.0
        self.encoder = nn.LSTM(k, h, num_layers=cfg.num_layers, batch_first=True, dropout=dropout)
        self.decoder = nn.LSTM(k, h, num_layers=cfg.num_layers, batch_first=True, dropout=dropout)
        self.output = nn.Linear(h, k)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        batch, steps, width = z.shape
        _, state = self.encoder(z)
        step = z.new_zeros(batch, 1, width)
        emitted = []
        for _ in range(steps):
            out, state = self.decoder(step, state)
            step = self.output(out)
            emitted.append(step)
        return torch.cat(emitted, dim=1).flip(1)


class Projector(nn.Module):
    """Temporal mean-pool, then linear -> BN -> ReLU -> linear."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(cfg.repre_channels, cfg.projector_hidden),
            nn.BatchNorm1d(cfg.projector_hidden, momentum=cfg.bn_momentum),
            nn.ReLU(),
            nn.Linear(cfg.projector_hidden, cfg.project_channels),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z.mean(dim=1))


class CocaNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = ConvEncoder(cfg)
        self.seq2seq = Seq2Seq(cfg)
        self.projector = Projector(cfg)

    def _check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 3 or x.shape[1] != self.cfg.window_length or x.shape[2] != self.cfg.in_channels:
            raise DimensionMismatchError(
                f"expected windows [B, {self.cfg.window_length}, {self.cfg.in_channels}], got {tuple(x.shape)}"
            )

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        return self.encoder(x)

    def reconstruct(self, z: torch.Tensor) -> torch.Tensor:
        return self.seq2seq(z)

    def project(self, z: torch.Tensor) -> torch.Tensor:
        return self.projector(z)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        z = self.encode(x)
        return self.project(z), self.project(self.reconstruct(z))


def build_model(cfg: ModelConfig, *, dtype: torch.dtype = torch.float32) -> CocaNet:
    return CocaNet(cfg).to(dtype)


def to_tensor(windows: Any, model: nn.Module) -> torch.Tensor:
    p = next(model.parameters())
    return torch.as_tensor(windows, dtype=p.dtype, device=p.device)


# -------------------------
# Checkpoint
# -------------------------
def save_checkpoint(
    path: str | Path,
    model: CocaNet,
    center: torch.Tensor | None = None,
    meta: dict[str, Any] | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "dtype": str(next(model.parameters()).dtype).replace("torch.", ""),
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "center": None if center is None else center.detach().clone(),
        "meta": dict(meta or {}),
    }
    torch.save(payload, path)
    logger.info("[model] checkpoint saved: %s", path)
    return path


def load_checkpoint(path: str | Path) -> tuple[CocaNet, torch.Tensor | None, dict[str, Any]]:
    path = Path(path)
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version={version} in {path}")
    cfg = ModelConfig.from_dict(payload["model_config"])
    dtype = getattr(torch, str(payload.get("dtype") or "float32"))
    model = build_model(cfg, dtype=dtype)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload.get("center"), dict(payload.get("meta") or {})
