"""Compact transformer encoders for video tokens and audio spectrograms, a
two-token fusion head, and teacher maintenance via exponential moving average.

Sizes default to desk scale (64-dim, two encoder layers) so a full training
run fits in CPU minutes. Dropout is zero everywhere: evaluation must be
deterministic and the consistency signal comes from the data augmentations.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import container
from .features import LogMelSpec, TokenGrid

CHECKPOINT_KIND = "checkpoint"


@dataclass
class ModelConfig:
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    fusion_layers: int = 1
    num_classes: int = 4
    patch_size: int = 8
    frames: int = 8
    height: int = 32
    width: int = 32
    channels: int = 3
    n_mels: int = 64
    spec_steps: int = 60
    audio_patch_mels: int = 8
    audio_patch_steps: int = 10

    def __post_init__(self) -> None:
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ValueError("frame size must be divisible by patch_size")
        if self.n_mels % self.audio_patch_mels or self.spec_steps % self.audio_patch_steps:
            raise ValueError("spectrogram size must be divisible by the audio patch")

    @property
    def tokens_per_frame(self) -> int:
        return (self.height // self.patch_size) * (self.width // self.patch_size)

    @property
    def video_token_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def audio_tokens(self) -> int:
        return (self.n_mels // self.audio_patch_mels) * (self.spec_steps // self.audio_patch_steps)

    @property
    def audio_token_dim(self) -> int:
        return self.audio_patch_mels * self.audio_patch_steps


def _encoder_stack(d_model: int, heads: int, layers: int) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d_model=d_model,
        nhead=heads,
        dim_feedforward=2 * d_model,
        dropout=0.0,
        batch_first=True,
    )
    return nn.TransformerEncoder(layer, num_layers=layers, enable_nested_tensor=False)


class SequenceEncoder(nn.Module):
    """Shared backbone: project tokens, prepend a CLS token, add learned
    positional embeddings, run the transformer stack, and read logits off CLS."""

    def __init__(self, token_dim: int, seq_tokens: int, cfg: ModelConfig):
        super().__init__()
        self.proj = nn.Linear(token_dim, cfg.d_model)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.d_model))
        self.pos_embed = nn.Parameter(torch.empty(1, 1 + seq_tokens, cfg.d_model))
        nn.init.normal_(self.pos_embed, std=0.02)
        nn.init.normal_(self.cls_token, std=0.02)
        self.encoder = _encoder_stack(cfg.d_model, cfg.heads, cfg.layers)
        self.head = nn.Linear(cfg.d_model, cfg.num_classes)

    def forward(self, tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        b = tokens.shape[0]
        if tokens.shape[1] + 1 != self.pos_embed.shape[1]:
            raise ValueError(
                f"sequence length {tokens.shape[1]} does not match the "
                f"configured {self.pos_embed.shape[1] - 1} tokens"
            )
        x = self.proj(tokens)
        cls = self.cls_token.expand(b, -1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        z = self.encoder(x)
        cls_out = z[:, 0]
        return z, cls_out, self.head(cls_out)


class VideoEncoder(nn.Module):
    """Encoder over flattened frame-token sequences (1 + T*N tokens)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        seq = cfg.frames * cfg.tokens_per_frame
        self.backbone = SequenceEncoder(cfg.video_token_dim, seq, cfg)

    def forward(self, tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        b, t, n, d = tokens.shape
        return self.backbone(tokens.reshape(b, t * n, d))


class AudioEncoder(nn.Module):
    """Encoder over non-overlapping time-frequency patches of a spectrogram."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = SequenceEncoder(cfg.audio_token_dim, cfg.audio_tokens, cfg)

    def patchify_spec(self, spec: torch.Tensor) -> torch.Tensor:
        b, m, l = spec.shape
        pm, pl = self.cfg.audio_patch_mels, self.cfg.audio_patch_steps
        if m % pm or l % pl:
            raise ValueError(f"spectrogram {m}x{l} not divisible by patch {pm}x{pl}")
        x = spec.reshape(b, m // pm, pm, l // pl, pl)
        return x.permute(0, 1, 3, 2, 4).reshape(b, (m // pm) * (l // pl), pm * pl)

    def forward(self, spec: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return self.backbone(self.patchify_spec(spec))


class FusionHead(nn.Module):
    """Transformer over the two CLS vectors with learned modality-type
    embeddings, mean-pooled into a linear classifier."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.modality_embed = nn.Parameter(torch.empty(1, 2, cfg.d_model))
        nn.init.normal_(self.modality_embed, std=0.02)
        self.encoder = _encoder_stack(cfg.d_model, cfg.heads, cfg.fusion_layers)
        self.head = nn.Linear(cfg.d_model, cfg.num_classes)

    def forward(self, cls_vid: torch.Tensor, cls_aud: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        seq = torch.stack([cls_vid, cls_aud], dim=1) + self.modality_embed
        pooled = self.encoder(seq).mean(dim=1)
        logits = self.head(pooled)
        return torch.softmax(logits, dim=1), logits


@dataclass
class ClassifierOutput:
    probs: torch.Tensor
    logits: torch.Tensor
    cls_vid: torch.Tensor
    cls_aud: torch.Tensor
    logits_vid: torch.Tensor
    logits_aud: torch.Tensor


class AvClassifier(nn.Module):
    """Full audio-visual model: the two encoders plus the fusion head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.video = VideoEncoder(cfg)
        self.audio = AudioEncoder(cfg)
        self.fusion = FusionHead(cfg)

    def forward(self, tokens: torch.Tensor, spec: torch.Tensor) -> ClassifierOutput:
        _, cls_v, logits_v = self.video(tokens)
        _, cls_a, logits_a = self.audio(spec)
        probs, logits = self.fusion(cls_v, cls_a)
        return ClassifierOutput(
            probs=probs,
            logits=logits,
            cls_vid=cls_v,
            cls_aud=cls_a,
            logits_vid=logits_v,
            logits_aud=logits_a,
        )

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


# ---------------------------------------------------------------------------
# unbatched convenience wrappers


def encode_video(grid: TokenGrid, model: VideoEncoder | AvClassifier):
    enc = model.video if isinstance(model, AvClassifier) else model
    dtype = next(enc.parameters()).dtype
    tokens = torch.as_tensor(grid.tokens, dtype=dtype)[None]
    z, cls, logits = enc(tokens)
    return z[0], cls[0], logits[0]


def encode_audio(spec: LogMelSpec, model: AudioEncoder | AvClassifier):
    enc = model.audio if isinstance(model, AvClassifier) else model
    dtype = next(enc.parameters()).dtype
    values = torch.as_tensor(spec.values, dtype=dtype)[None]
    z, cls, logits = enc(values)
    return z[0], cls[0], logits[0]


def fuse(cls_vid: torch.Tensor, cls_aud: torch.Tensor, model: FusionHead | AvClassifier) -> torch.Tensor:
    head = model.fusion if isinstance(model, AvClassifier) else model
    probs, _ = head(cls_vid[None], cls_aud[None])
    return probs[0]


# ---------------------------------------------------------------------------
# teacher maintenance


def make_teacher(student: nn.Module) -> nn.Module:
    """Start the teacher as a frozen copy of the student."""
    teacher = copy.deepcopy(student)
    for p in teacher.parameters():
        p.requires_grad_(False)
    teacher.eval()
    return teacher


@torch.no_grad()
def ema_update(teacher: nn.Module, student: nn.Module, momentum: float = 0.999) -> nn.Module:
    """teacher <- momentum * teacher + (1 - momentum) * student, parameterwise."""
    t_params = dict(teacher.named_parameters())
    s_params = dict(student.named_parameters())
    if t_params.keys() != s_params.keys():
        raise ValueError("teacher and student parameter sets differ")
    for name, tp in t_params.items():
        sp = s_params[name]
        if tp.shape != sp.shape:
            raise ValueError(f"shape mismatch for {name}: {tuple(tp.shape)} vs {tuple(sp.shape)}")
        tp.mul_(momentum).add_(sp.detach(), alpha=1.0 - momentum)
    return teacher


# ---------------------------------------------------------------------------
# checkpoints (same container as dataset bundles)


def save_checkpoint(model: AvClassifier, path: str | Path, extra: dict | None = None) -> None:
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    manifest = {
        "kind": CHECKPOINT_KIND,
        "model_config": asdict(model.cfg),
        **(extra or {}),
    }
    container.write_container(path, manifest, arrays)


def load_checkpoint(path: str | Path, dtype: torch.dtype = torch.float32) -> tuple[AvClassifier, dict]:
    manifest, arrays = container.read_container(path)
    if manifest.get("kind") != CHECKPOINT_KIND:
        raise ValueError(f"{path} is not a checkpoint")
    cfg = ModelConfig(**manifest["model_config"])
    model = AvClassifier(cfg).to(dtype)
    state = {k: torch.as_tensor(v, dtype=dtype) for k, v in arrays.items()}
    model.load_state_dict(state)
    return model, manifest
