"""The training objective: supervised cross-entropy, confidence-gated
consistency with fixed or per-class flexible thresholds, mixture consistency,
symmetric audio-visual contrastive alignment, and their weighted total.

Loss functions operate on torch tensors so gradients flow; the threshold
bookkeeping is plain numpy updated once per step by the training loop.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

DEFAULT_TEMPERATURE = 0.05
DEFAULT_GAMMA1 = 2.0
DEFAULT_GAMMA2 = 2.0
DEFAULT_GAMMA3 = 0.2
_LOG_CLAMP = 1e-12


class ThresholdMode(str, enum.Enum):
    FIXED = "fixed"
    FLEX = "flex"


@dataclass
class ThresholdState:
    """Per-class confidence thresholds for pseudo-label gating.

    In FLEX mode each class threshold is ``tau_base`` scaled by how often that
    class has produced confident predictions this epoch, relative to the
    best-learned class (or to the count of still-unconfident samples during
    warm-up, whichever is larger).
    """

    tau_base: float
    num_classes: int
    mode: ThresholdMode = ThresholdMode.FLEX
    sigma: np.ndarray = field(init=False)
    unused: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        if not 0.0 < self.tau_base <= 1.0:
            raise ValueError(f"tau_base must be in (0, 1], got {self.tau_base}")
        self.mode = ThresholdMode(self.mode)
        self.sigma = np.zeros(self.num_classes, dtype=np.int64)

    def thresholds(self) -> np.ndarray:
        if self.mode is ThresholdMode.FIXED:
            return np.full(self.num_classes, self.tau_base)
        denom = max(int(self.sigma.max()), self.unused, 1)
        return (self.sigma / denom) * self.tau_base

    def reset_epoch(self) -> None:
        self.sigma[:] = 0
        self.unused = 0

    def total_confident(self) -> int:
        return int(self.sigma.sum())


def update_flex_thresholds(state: ThresholdState, teacher_probs: np.ndarray) -> ThresholdState:
    """Accumulate confident-prediction counts per class and the number of
    samples still below the base threshold."""
    if state.mode is not ThresholdMode.FLEX:
        raise ValueError("threshold updates only apply in FLEX mode")
    probs = np.asarray(teacher_probs)
    top = probs.max(axis=1)
    arg = probs.argmax(axis=1)
    confident = top > state.tau_base
    for cls in range(state.num_classes):
        state.sigma[cls] += int((confident & (arg == cls)).sum())
    state.unused += int((~confident).sum())
    return state


# ---------------------------------------------------------------------------
# loss terms


def supervised_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of logits against integer labels."""
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label index out of range")
    return F.cross_entropy(logits, labels)


def consistency_loss_unlabeled(
    teacher_probs: torch.Tensor,
    student_probs: torch.Tensor,
    state: ThresholdState,
    hard_pseudo_label: bool = True,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Confidence-gated cross-entropy between teacher and student predictions.

    A row passes when the teacher's max probability meets the threshold of its
    argmax class; non-passing rows contribute zero. Returns the batch-mean
    loss and the boolean pass mask.
    """
    taus = torch.as_tensor(
        state.thresholds(), dtype=teacher_probs.dtype, device=teacher_probs.device
    )
    top, arg = teacher_probs.max(dim=1)
    passes = top >= taus[arg]
    log_q = torch.log(student_probs.clamp_min(_LOG_CLAMP))
    if hard_pseudo_label:
        per_row = -log_q.gather(1, arg[:, None]).squeeze(1)
    else:
        per_row = -(teacher_probs * log_q).sum(dim=1)
    loss = (per_row * passes.to(per_row.dtype)).sum() / teacher_probs.shape[0]
    return loss, passes


def mix_consistency_loss(
    y_bar: torch.Tensor, y_hat: torch.Tensor, tau: float
) -> tuple[torch.Tensor, torch.Tensor]:
    """Gated squared error between the interpolated pseudo-label and the
    prediction on the mixture: rows whose pseudo-label max falls below the
    fixed threshold contribute zero. Squared distance sums over classes and
    averages over the batch."""
    if y_bar.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(y_bar.shape)} vs {tuple(y_hat.shape)}")
    passes = y_bar.max(dim=1).values >= tau
    sq = ((y_bar - y_hat) ** 2).sum(dim=1)
    loss = (sq * passes.to(sq.dtype)).sum() / y_bar.shape[0]
    return loss, passes


@dataclass
class EmbeddingBank:
    """Row-aligned video and audio embeddings [K, D]: row i of both matrices
    comes from the same clip or mixture, ordered labeled, unlabeled, mixed."""

    z_vid: torch.Tensor
    z_aud: torch.Tensor

    def __post_init__(self) -> None:
        if self.z_vid.shape != self.z_aud.shape:
            raise ValueError(
                f"bank shapes differ: {tuple(self.z_vid.shape)} vs {tuple(self.z_aud.shape)}"
            )


def contrastive_loss(bank: EmbeddingBank, temperature: float = DEFAULT_TEMPERATURE) -> torch.Tensor:
    """Symmetric noise-contrastive alignment of the two embedding matrices.

    Rows are L2-normalized; the similarity matrix is scaled by 1/temperature;
    the loss averages the row-softmax and column-softmax diagonal NLLs.
    """
    for name, z in (("z_vid", bank.z_vid), ("z_aud", bank.z_aud)):
        norms = z.norm(dim=1)
        bad = (norms == 0).nonzero()
        if len(bad):
            raise ValueError(f"{name} row {int(bad[0])} has zero norm")
    zv = F.normalize(bank.z_vid, dim=1)
    za = F.normalize(bank.z_aud, dim=1)
    sim = (za @ zv.T) / temperature
    targets = torch.arange(sim.shape[0], device=sim.device)
    nce_audio_to_video = F.cross_entropy(sim, targets)
    nce_video_to_audio = F.cross_entropy(sim.T, targets)
    return (nce_audio_to_video + nce_video_to_audio) / 2.0


def total_loss(
    loss_s,
    loss_u,
    loss_mix,
    loss_con,
    gamma1: float = DEFAULT_GAMMA1,
    gamma2: float = DEFAULT_GAMMA2,
    gamma3: float = DEFAULT_GAMMA3,
):
    """Weighted sum of the four terms; raises on a non-finite component,
    naming it. Works on torch scalars (keeping the graph) or plain floats."""
    parts = {"loss_s": loss_s, "loss_u": loss_u, "loss_mix": loss_mix, "loss_con": loss_con}
    for name, value in parts.items():
        v = float(value.detach() if isinstance(value, torch.Tensor) else value)
        if not np.isfinite(v):
            raise FloatingPointError(f"loss component {name} is not finite ({v})")
    return loss_s + gamma1 * loss_u + gamma2 * loss_mix + gamma3 * loss_con


@dataclass
class LossReport:
    """Per-step scalars written to the metrics log. Construction verifies the
    recomposition identity total = s + g1*u + g2*mix + g3*con."""

    step: int
    loss_s: float
    loss_u: float
    loss_mix: float
    loss_con: float
    loss_total: float
    gamma1: float
    gamma2: float
    gamma3: float
    pass_rate: float
    mix_pass_rate: float
    thresholds: list[float]
    lam: float
    lr: float

    def __post_init__(self) -> None:
        recomposed = (
            self.loss_s
            + self.gamma1 * self.loss_u
            + self.gamma2 * self.loss_mix
            + self.gamma3 * self.loss_con
        )
        scale = max(1.0, abs(self.loss_total))
        if abs(recomposed - self.loss_total) > 1e-9 * scale:
            raise ValueError(
                f"loss recomposition failed: {recomposed!r} != {self.loss_total!r}"
            )

    def to_json_dict(self) -> dict:
        return {
            "event": "train_step",
            "step": self.step,
            "loss_s": self.loss_s,
            "loss_u": self.loss_u,
            "loss_mix": self.loss_mix,
            "loss_con": self.loss_con,
            "loss_total": self.loss_total,
            "pass_rate": self.pass_rate,
            "mix_pass_rate": self.mix_pass_rate,
            "thresholds": self.thresholds,
            "lam": self.lam,
            "lr": self.lr,
        }
