"""Frozen audio-source localizers feeding the guided mask builder.

The oracle variant manufactures features from the ground-truth sprite box:
visual rows inside the box share one random unit direction, rows outside get
noise orthogonal to it, and the audio rows carry the same direction, so the
attention-product map peaks on the box. A corruption rate replaces a fraction
of visual rows with unrelated directions for sensitivity tests.

The learned variant is a pair of small convolutional encoders pretrained on
the synthetic corpus with a symmetric audio-visual correspondence objective,
then frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .features import LogMelParams, LogMelSpec, logmel
from .masks import LocFeatures
from .synthdata import DatasetBundle, SourceRegion, VideoClip


@dataclass
class LocalizerConfig:
    variant: str = "oracle"  # oracle | learned
    grid: int = 4  # localization tokens per side (N_loc = grid**2)
    feat_dim: int = 16
    noise: float = 0.05
    corruption: float = 0.0


class OracleLocalizer:
    """Ground-truth-driven feature factory; needs no training and is frozen
    by construction."""

    def __init__(self, cfg: LocalizerConfig):
        self.cfg = cfg

    def extract(
        self,
        clip: VideoClip,
        spec: LogMelSpec | None,
        source: SourceRegion | None,
        rng: np.random.Generator,
    ) -> LocFeatures:
        if source is None:
            raise ValueError("oracle localizer requires the sample's source region")
        t, h, w, _ = clip.frames.shape
        g, d = self.cfg.grid, self.cfg.feat_dim
        n_loc = g * g
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        centers_y = (np.arange(g) + 0.5) * h / g
        centers_x = (np.arange(g) + 0.5) * w / g
        cy, cx = np.meshgrid(centers_y, centers_x, indexing="ij")
        cy, cx = cy.reshape(-1), cx.reshape(-1)

        f_vid = np.empty((t, n_loc, d))
        for ti in range(t):
            x0, y0, x1, y1 = source.frame_boxes[ti]
            inside = (cx >= x0) & (cx < x1) & (cy >= y0) & (cy < y1)
            noise = rng.standard_normal((n_loc, d))
            ortho = noise - np.outer(noise @ u, u)
            f_vid[ti] = np.where(
                inside[:, None], u[None, :] + self.cfg.noise * noise, self.cfg.noise * ortho
            )
            if self.cfg.corruption > 0:
                corrupt = rng.random(n_loc) < self.cfg.corruption
                fresh = rng.standard_normal((n_loc, d))
                fresh /= np.linalg.norm(fresh, axis=1, keepdims=True)
                f_vid[ti] = np.where(corrupt[:, None], fresh, f_vid[ti])
        f_aud = u[None, :] + self.cfg.noise * rng.standard_normal((n_loc, d))
        return LocFeatures(f_vid=f_vid, f_aud=f_aud)

    def checksum(self) -> float:
        return 0.0  # stateless


class LearnedLocalizer(nn.Module):
    """Two small conv encoders whose features are used (frozen) by the mask
    builder; trained only by :func:`pretrain_localizer`."""

    def __init__(self, cfg: LocalizerConfig, channels: int = 3):
        super().__init__()
        self.cfg = cfg
        d = cfg.feat_dim
        self.vid_net = nn.Sequential(
            nn.Conv2d(channels, 16, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(16, d, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(cfg.grid),
        )
        self.aud_net = nn.Sequential(
            nn.Conv2d(1, 16, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(16, d, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(cfg.grid),
        )

    def vid_features(self, frames: torch.Tensor) -> torch.Tensor:
        """[T, C, H, W] -> [T, N_loc, d]"""
        out = self.vid_net(frames)
        t, d, gh, gw = out.shape
        return out.reshape(t, d, gh * gw).permute(0, 2, 1)

    def aud_features(self, spec: torch.Tensor) -> torch.Tensor:
        """[M, L] -> [N_loc, d]"""
        out = self.aud_net(spec[None, None])
        _, d, gh, gw = out.shape
        return out.reshape(d, gh * gw).T

    @torch.no_grad()
    def extract(
        self,
        clip: VideoClip,
        spec: LogMelSpec | None,
        source: SourceRegion | None,
        rng: np.random.Generator | None = None,
    ) -> LocFeatures:
        if spec is None:
            raise ValueError("learned localizer requires the audio spectrogram")
        frames = torch.as_tensor(clip.frames, dtype=torch.float32).permute(0, 3, 1, 2)
        f_vid = self.vid_features(frames)
        f_aud = self.aud_features(torch.as_tensor(spec.values, dtype=torch.float32))
        return LocFeatures(f_vid=f_vid.numpy().astype(np.float64), f_aud=f_aud.numpy().astype(np.float64))

    def freeze(self) -> "LearnedLocalizer":
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self

    def checksum(self) -> float:
        return float(sum(p.double().sum().item() for p in self.parameters()))


def pretrain_localizer(
    bundle: DatasetBundle,
    cfg: LocalizerConfig,
    seed: int = 0,
    epochs: int = 10,
    batch_size: int = 16,
    lr: float = 1e-3,
    logmel_params: LogMelParams | None = None,
) -> LearnedLocalizer:
    """Train the learned localizer with a symmetric correspondence objective
    (clip-mean visual embedding vs clip audio embedding, in-batch negatives),
    then freeze it."""
    torch.manual_seed(seed)
    channels = bundle.labeled[0].clip.frames.shape[-1]
    model = LearnedLocalizer(cfg, channels=channels)
    samples = bundle.unlabeled + bundle.labeled
    specs = [
        logmel(s.waveform.samples, s.waveform.sample_rate, logmel_params) for s in samples
    ]
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(order) - batch_size + 1, batch_size):
            idx = order[start : start + batch_size]
            v_embs, a_embs = [], []
            for i in idx:
                frames = torch.as_tensor(samples[i].clip.frames, dtype=torch.float32)
                f_vid = model.vid_features(frames.permute(0, 3, 1, 2))
                f_aud = model.aud_features(torch.as_tensor(specs[i].values, dtype=torch.float32))
                v_embs.append(f_vid.mean(dim=(0, 1)))
                a_embs.append(f_aud.mean(dim=0))
            zv = F.normalize(torch.stack(v_embs), dim=1)
            za = F.normalize(torch.stack(a_embs), dim=1)
            sim = (za @ zv.T) / 0.1
            targets = torch.arange(len(idx))
            loss = (F.cross_entropy(sim, targets) + F.cross_entropy(sim.T, targets)) / 2
            opt.zero_grad()
            loss.backward()
            opt.step()
    return model.freeze()


def build_localizer(cfg: LocalizerConfig, bundle: DatasetBundle | None = None, seed: int = 0):
    """Instantiate the configured localizer variant; the learned one is
    pretrained on the bundle it will be used with."""
    if cfg.variant == "oracle":
        return OracleLocalizer(cfg)
    if cfg.variant == "learned":
        if bundle is None:
            raise ValueError("learned localizer needs a bundle to pretrain on")
        return pretrain_localizer(bundle, cfg, seed=seed)
    raise ValueError(f"unknown localizer variant {cfg.variant!r}")
