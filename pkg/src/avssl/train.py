"""Training loop wiring data, features, masks, mixing, models, and losses.

Each step runs: supervised loss on strong-augmented labeled samples; gated
teacher-student consistency on unlabeled samples (teacher sees weak video and
clean audio, student sees strong video and masked audio); localization-guided
token mixup of the unlabeled batch against its reverse with a mixture
consistency loss; a contrastive loss over the video/audio CLS embeddings of
all three blocks; then one SGD step, the teacher EMA update, and the
per-class threshold bookkeeping.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .features import (
    LogMelParams,
    LogMelSpec,
    SpecAugmentParams,
    apply_strong,
    logmel,
    patchify,
    sample_strong_params,
    specaugment,
    transform_boxes_strong,
    weak_augment,
)
from .localize import LocalizerConfig, OracleLocalizer, build_localizer
from .losses import (
    EmbeddingBank,
    LossReport,
    ThresholdMode,
    ThresholdState,
    consistency_loss_unlabeled,
    contrastive_loss,
    mix_consistency_loss,
    supervised_loss,
    total_loss,
    update_flex_thresholds,
)
from .masks import build_asl_mask, build_random_mask, build_tube_mask, compute_localization
from .mixup import mix_audio, mix_pseudo_labels, mix_tokens, sample_lambda
from .models import AvClassifier, ModelConfig, ema_update, make_teacher, save_checkpoint
from .synthdata import (
    DatasetBundle,
    Sample,
    SourceRegion,
    VideoClip,
    make_batches,
    read_bundle,
    steps_per_epoch,
)


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; carries a diagnostic snapshot."""

    def __init__(self, step: int, component: str, batch_uids: list[str]):
        super().__init__(
            f"non-finite loss at step {step} ({component}); batch uids: {batch_uids}"
        )
        self.step = step
        self.component = component
        self.batch_uids = batch_uids


@dataclass
class StepTrace:
    """Intermediate tensors of one step, for independent recomputation."""

    logits_labeled: np.ndarray
    labels: np.ndarray
    teacher_probs: np.ndarray
    student_probs: np.ndarray
    mixed_student_probs: np.ndarray
    mixed_pseudo_labels: np.ndarray
    bank_vid: np.ndarray
    bank_aud: np.ndarray
    thresholds: np.ndarray
    lam: float
    tau_base: float
    gammas: tuple[float, float, float]
    temperature: float


class Trainer:
    def __init__(
        self,
        cfg: RunConfig,
        bundle: DatasetBundle | None = None,
        metrics_path: str | Path | None = None,
    ):
        self.cfg = cfg
        torch.set_num_threads(int(cfg["train.threads"]))
        self.dtype = torch.float64 if cfg["train.precision"] == "float64" else torch.float32
        if bundle is None:
            path = cfg["dataset.path"]
            if not path or not Path(path).exists():
                raise FileNotFoundError(f"dataset path not found: {path!r}")
            bundle = read_bundle(path)
        self.bundle = bundle
        meta = bundle.metadata

        self.model_cfg = ModelConfig(
            d_model=cfg["model.d_model"],
            layers=cfg["model.layers"],
            heads=cfg["model.heads"],
            fusion_layers=cfg["model.fusion_layers"],
            num_classes=bundle.num_classes,
            patch_size=cfg["model.patch_size"],
            frames=int(meta["frames"]),
            height=int(meta["height"]),
            width=int(meta["width"]),
            channels=int(meta["channels"]),
            n_mels=cfg["audio.n_mels"],
            spec_steps=cfg["audio.time_crop"],
            audio_patch_mels=cfg["model.audio_patch_mels"],
            audio_patch_steps=cfg["model.audio_patch_steps"],
        )
        seed = int(cfg["seed"])
        torch.manual_seed(seed)
        self.student = AvClassifier(self.model_cfg).to(self.dtype)
        self.teacher = make_teacher(self.student)
        self.optimizer = torch.optim.SGD(
            self.student.parameters(),
            lr=cfg["optimizer.lr"],
            momentum=cfg["optimizer.momentum"],
            weight_decay=cfg["optimizer.weight_decay"],
        )
        self.threshold_state = ThresholdState(
            tau_base=cfg["ssl.tau_base"],
            num_classes=bundle.num_classes,
            mode=ThresholdMode(cfg["ssl.threshold_mode"]),
        )
        self.loc_cfg = LocalizerConfig(
            variant=cfg["localizer.variant"],
            grid=cfg["localizer.grid"],
            feat_dim=cfg["localizer.feat_dim"],
            noise=cfg["localizer.noise"],
            corruption=cfg["localizer.corruption"],
        )
        self.localizer = build_localizer(self.loc_cfg, bundle=bundle, seed=seed)

        ss = np.random.SeedSequence(seed)
        (batch_s, aug_s, spec_s, mask_s, loc_s, mix_s) = ss.spawn(6)
        self.batch_rng = np.random.default_rng(batch_s)
        self.aug_rng = np.random.default_rng(aug_s)
        self.spec_rng = np.random.default_rng(spec_s)
        self.mask_rng = np.random.default_rng(mask_s)
        self.loc_rng = np.random.default_rng(loc_s)
        self.mix_rng = np.random.default_rng(mix_s)

        self.logmel_params = LogMelParams(
            n_fft=cfg["audio.n_fft"],
            hop=cfg["audio.hop"],
            n_mels=cfg["audio.n_mels"],
            floor=cfg["audio.floor"],
        )
        self.specaug_params = SpecAugmentParams()
        self._spec_cache: dict[str, LogMelSpec] = {}

        self.metrics_path = Path(metrics_path) if metrics_path else None
        self._metrics_fh = None
        self.step = 0
        self.grid_shape = (
            self.model_cfg.height // self.model_cfg.patch_size,
            self.model_cfg.width // self.model_cfg.patch_size,
        )
        self.n_tokens = self.grid_shape[0] * self.grid_shape[1]

    # -- feature helpers ----------------------------------------------------

    def spec_for(self, sample: Sample) -> LogMelSpec:
        """Cached log-mel of the raw waveform, time-cropped to the model's
        step count."""
        cached = self._spec_cache.get(sample.uid)
        if cached is None:
            full = logmel(sample.waveform.samples, sample.waveform.sample_rate, self.logmel_params)
            crop = int(self.cfg["audio.time_crop"])
            if full.values.shape[1] < crop:
                raise ValueError(
                    f"spectrogram has {full.values.shape[1]} steps, need {crop}"
                )
            cached = LogMelSpec(values=full.values[:, :crop], floor=full.floor)
            self._spec_cache[sample.uid] = cached
        return cached

    def _t(self, arr: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(np.asarray(arr), dtype=self.dtype)

    def _strong_view(self, sample: Sample):
        """Strong-augmented tokens plus the co-transformed source boxes and
        the augmented clip (the localizer input)."""
        t, h, w, _ = sample.clip.frames.shape
        params = sample_strong_params(self.aug_rng, t, h, w)
        clip_s = apply_strong(sample.clip, params)
        boxes_s = transform_boxes_strong(sample.source.frame_boxes, params, h, w)
        return patchify(clip_s, self.model_cfg.patch_size), clip_s, boxes_s

    def _build_mask(self, clip_s: VideoClip, spec_s: LogMelSpec, boxes_s: np.ndarray, lam: float):
        kind = self.cfg["mask.type"]
        t = clip_s.frames.shape[0]
        if kind == "tube":
            return build_tube_mask(self.n_tokens, t, lam, self.mask_rng)
        if kind == "random":
            return build_random_mask(self.n_tokens, t, lam, self.mask_rng)
        if isinstance(self.localizer, OracleLocalizer):
            feats = self.localizer.extract(clip_s, spec_s, SourceRegion(boxes_s), self.loc_rng)
        else:
            feats = self.localizer.extract(clip_s, spec_s, None)
        loc_map = compute_localization(feats, self.grid_shape, eps=self.cfg["mask.eps"])
        return build_asl_mask(loc_map, lam, self.cfg["mask.frames_per_map"], self.mask_rng)

    # -- the step -----------------------------------------------------------

    def train_step(
        self, labeled: list[Sample], unlabeled: list[Sample], trace: bool = False
    ):
        cfg = self.cfg
        g1, g2, g3 = cfg["loss.gamma1"], cfg["loss.gamma2"], cfg["loss.gamma3"]
        ssl_on = g1 != 0 or g2 != 0
        b_l, b_u = len(labeled), len(unlabeled)
        thresholds = self.threshold_state.thresholds()

        # labeled block: strong video + masked audio
        lab_tokens = []
        for s in labeled:
            grid, _, _ = self._strong_view(s)
            lab_tokens.append(grid.tokens)
        lab_specs = [
            specaugment(self.spec_for(s), self.spec_rng, self.specaug_params).values
            for s in labeled
        ]
        labels = torch.as_tensor([s.label for s in labeled], dtype=torch.long)

        zero = torch.zeros((), dtype=self.dtype)
        loss_u = loss_mix = zero
        pass_rate = mix_pass_rate = 0.0
        lam = 0.0
        teacher_probs_np = None

        if ssl_on:
            # teacher sees weak video and the clean spectrogram
            weak_tokens = [
                patchify(weak_augment(s.clip, self.aug_rng), self.model_cfg.patch_size).tokens
                for s in unlabeled
            ]
            clean_specs = [self.spec_for(s) for s in unlabeled]
            with torch.no_grad():
                teacher_out = self.teacher(
                    self._t(np.stack(weak_tokens)),
                    self._t(np.stack([sp.values for sp in clean_specs])),
                )
            teacher_probs = teacher_out.probs
            teacher_probs_np = teacher_probs.numpy()

            # student strong views, reused as mixing substrate
            strong = [self._strong_view(s) for s in unlabeled]
            aug_specs = [
                specaugment(self.spec_for(s), self.spec_rng, self.specaug_params)
                for s in unlabeled
            ]

            ratio = sample_lambda(self.mix_rng, self.n_tokens, cfg["mix.alpha1"], cfg["mix.alpha2"])
            lam = ratio.lam
            mixed_tokens, mixed_specs, y_bar_rows = [], [], []
            for i in range(b_u):
                j = b_u - 1 - i
                grid_a, clip_a, boxes_a = strong[i]
                grid_b = strong[j][0]
                mask = self._build_mask(clip_a, aug_specs[i], boxes_a, lam)
                mixed_tokens.append(mix_tokens(grid_a, grid_b, mask).tokens)
                mixed_specs.append(mix_audio(aug_specs[i], aug_specs[j], lam).values)
                y_bar_rows.append(
                    mix_pseudo_labels(teacher_probs_np[i], teacher_probs_np[j], lam)
                )
            y_bar = self._t(np.stack(y_bar_rows))

            tokens_all = np.concatenate(
                [np.stack(lab_tokens), np.stack([s[0].tokens for s in strong]), np.stack(mixed_tokens)]
            )
            specs_all = np.concatenate(
                [np.stack(lab_specs), np.stack([sp.values for sp in aug_specs]), np.stack(mixed_specs)]
            )
        else:
            tokens_all = np.stack(lab_tokens)
            specs_all = np.stack(lab_specs)

        out = self.student(self._t(tokens_all), self._t(specs_all))
        logits_lab = out.logits[:b_l]
        loss_s = supervised_loss(logits_lab, labels)

        if ssl_on:
            student_probs = out.probs[b_l : b_l + b_u]
            mixed_probs = out.probs[b_l + b_u :]
            loss_u, passes = consistency_loss_unlabeled(
                teacher_probs, student_probs, self.threshold_state, cfg["ssl.hard_pseudo_label"]
            )
            loss_mix, mix_passes = mix_consistency_loss(y_bar, mixed_probs, cfg["ssl.tau_base"])
            pass_rate = float(passes.to(torch.float64).mean())
            mix_pass_rate = float(mix_passes.to(torch.float64).mean())

        loss_con = zero
        if g3 != 0:
            bank = EmbeddingBank(out.cls_vid, out.cls_aud)
            loss_con = contrastive_loss(bank, cfg["loss.temperature"])

        try:
            loss = total_loss(loss_s, loss_u, loss_mix, loss_con, g1, g2, g3)
        except FloatingPointError as err:
            uids = [s.uid for s in labeled + unlabeled]
            raise TrainingDiverged(self.step, str(err), uids) from err

        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        ema_update(self.teacher, self.student, self._ema_momentum())
        if ssl_on and self.threshold_state.mode is ThresholdMode.FLEX:
            update_flex_thresholds(self.threshold_state, teacher_probs_np)
        self.step += 1

        f_s, f_u = float(loss_s.detach()), float(loss_u.detach())
        f_m, f_c = float(loss_mix.detach()), float(loss_con.detach())
        report = LossReport(
            step=self.step,
            loss_s=f_s,
            loss_u=f_u,
            loss_mix=f_m,
            loss_con=f_c,
            loss_total=f_s + g1 * f_u + g2 * f_m + g3 * f_c,
            gamma1=g1,
            gamma2=g2,
            gamma3=g3,
            pass_rate=pass_rate,
            mix_pass_rate=mix_pass_rate,
            thresholds=[float(x) for x in thresholds],
            lam=lam,
            lr=float(self.optimizer.param_groups[0]["lr"]),
        )
        if not trace:
            return report
        trace_out = StepTrace(
            logits_labeled=logits_lab.detach().numpy().copy(),
            labels=labels.numpy().copy(),
            teacher_probs=teacher_probs_np.copy() if ssl_on else np.zeros((0, 0)),
            student_probs=student_probs.detach().numpy().copy() if ssl_on else np.zeros((0, 0)),
            mixed_student_probs=mixed_probs.detach().numpy().copy() if ssl_on else np.zeros((0, 0)),
            mixed_pseudo_labels=y_bar.detach().numpy().copy() if ssl_on else np.zeros((0, 0)),
            bank_vid=out.cls_vid.detach().numpy().copy(),
            bank_aud=out.cls_aud.detach().numpy().copy(),
            thresholds=thresholds,
            lam=lam,
            tau_base=cfg["ssl.tau_base"],
            gammas=(g1, g2, g3),
            temperature=cfg["loss.temperature"],
        )
        return report, trace_out

    # -- loop ---------------------------------------------------------------

    def _ema_momentum(self) -> float:
        m = float(self.cfg["train.ema_decay"])
        if self.cfg["train.ema_warmup"]:
            return min(m, (self.step + 1) / (self.step + 10))
        return m

    def _set_lr(self, fraction_done: float) -> None:
        base = self.cfg["optimizer.lr"]
        lr = base * 0.5 * (1.0 + math.cos(math.pi * fraction_done)) if self.cfg["optimizer.cosine"] else base
        for group in self.optimizer.param_groups:
            group["lr"] = lr

    def _emit(self, doc: dict) -> None:
        if self._metrics_fh is not None:
            self._metrics_fh.write(json.dumps(doc) + "\n")
            self._metrics_fh.flush()

    def run(self) -> dict:
        """Full training; returns the final evaluation summary."""
        from .evaluate import EvalPolicy, evaluate

        cfg = self.cfg
        epochs = int(cfg["train.epochs"])
        b_l, ratio = int(cfg["train.batch_labeled"]), int(cfg["train.ratio"])
        spe = steps_per_epoch(self.bundle, b_l, ratio)
        if spe < 1:
            raise ValueError("unlabeled split too small for one batch per epoch")
        total_steps = epochs * spe
        batches = make_batches(self.bundle, b_l, ratio, self.batch_rng)
        policy = EvalPolicy(
            segments=cfg["eval.segments"], crops=cfg["eval.crops"], crop_size=cfg["eval.crop_size"]
        )

        if self.metrics_path is not None:
            self.metrics_path.parent.mkdir(parents=True, exist_ok=True)
            self._metrics_fh = open(self.metrics_path, "w")
        try:
            self._emit({"event": "config", "step": 0, "config": cfg.to_dict()})
            eval_every = int(cfg["train.eval_every"])
            for epoch in range(epochs):
                if self.threshold_state.mode is ThresholdMode.FLEX:
                    self.threshold_state.reset_epoch()
                for _ in range(spe):
                    labeled, unlabeled = next(batches)
                    self._set_lr(self.step / max(total_steps - 1, 1))
                    report = self.train_step(labeled, unlabeled)
                    self._emit(report.to_json_dict())
                if eval_every and (epoch + 1) % eval_every == 0 and epoch + 1 < epochs:
                    mid = evaluate(self.teacher, self.bundle.test, policy, self.model_cfg.patch_size, self.spec_for)
                    self._emit({"event": "eval", "step": self.step, "top1": mid.top1})
            final_teacher = evaluate(
                self.teacher, self.bundle.test, policy, self.model_cfg.patch_size, self.spec_for
            )
            final_student = evaluate(
                self.student, self.bundle.test, policy, self.model_cfg.patch_size, self.spec_for
            )
            self._emit(
                {
                    "event": "final",
                    "step": self.step,
                    "top1": final_teacher.top1,
                    "student_top1": final_student.top1,
                }
            )
        finally:
            if self._metrics_fh is not None:
                self._metrics_fh.close()
                self._metrics_fh = None
        return {
            "top1": final_teacher.top1,
            "student_top1": final_student.top1,
            "per_class": final_teacher.per_class,
            "confusion": final_teacher.confusion,
            "steps": self.step,
            "parameters": self.student.parameter_count(),
        }

    def save(self, path: str | Path) -> None:
        save_checkpoint(self.student, path, extra={"step": self.step, "role": "student"})
