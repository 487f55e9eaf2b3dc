"""Training regimes: unimodal two-view pre-training, multimodal contrastive
pre-training (with or without cross-modal knowledge mining) and the
supervised end-to-end baseline.

All loops are single-threaded and seeded, so re-running a plan with the same
seed reproduces the logged loss curve bit-identically. Checkpoints are plain
dicts (config echo + named parameter tensors + training metadata) serialized
with ``torch.save``.
"""

from __future__ import annotations

import copy
import hashlib
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .augment import AugmentationPipeline, apply_pipeline, default_pipeline
from .contrastive import (
    ProjectionBatch,
    cmc_loss,
    cmkm_loss,
    guidance_from_encoders,
    mine_sets,
    nt_xent,
)
from .data import MultimodalSample, stack_modalities
from .encoders import (
    FusionClassifier,
    FusionHeadConfig,
    InertialEncoder,
    InertialEncoderConfig,
    ProjectionHead,
    ProjectionHeadConfig,
    SkeletonEncoder,
    SkeletonEncoderConfig,
)

FRAMEWORKS = ("simclr_inertial", "simclr_skeleton", "cmc", "cmc_cmkm")

CHECKPOINT_FORMAT = "mmhar-checkpoint-v1"


class ConfigurationError(ValueError):
    """Raised when a plan or experiment configuration cannot be executed."""


# ---------------------------------------------------------------------------
# Optimizer schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerSchedule:
    """Adam with reduce-on-plateau: after ``plateau_patience_epochs`` epochs
    without relative improvement the learning rate is multiplied by
    ``reduction_factor``, at most ``max_reductions`` times."""

    lr: float = 1e-3
    plateau_patience_epochs: int = 20
    reduction_factor: float = 0.1
    max_reductions: int = 2
    min_rel_improvement: float = 1e-5

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 < self.reduction_factor < 1.0:
            raise ValueError("reduction_factor must be in (0, 1)")
        if self.max_reductions < 0:
            raise ValueError("max_reductions must be >= 0")


class PlateauScheduler:
    """Stateful reduce-on-plateau tracker; ``step`` returns the current lr."""

    def __init__(self, schedule: OptimizerSchedule):
        self.schedule = schedule
        self.lr = schedule.lr
        self.best = np.inf
        self.stale_epochs = 0
        self.reductions = 0

    def step(self, monitored_loss: float) -> float:
        s = self.schedule
        improved = monitored_loss < self.best - s.min_rel_improvement * abs(self.best)
        if improved or not np.isfinite(self.best):
            self.best = monitored_loss
            self.stale_epochs = 0
            return self.lr
        self.stale_epochs += 1
        if self.stale_epochs >= s.plateau_patience_epochs and self.reductions < s.max_reductions:
            self.lr *= s.reduction_factor
            self.reductions += 1
            self.stale_epochs = 0
        return self.lr


def step_scheduler(schedule: OptimizerSchedule, epoch_losses: list[float]) -> float:
    """Replay a loss history through the plateau rule; returns the final lr."""
    if not epoch_losses:
        raise ValueError("epoch_losses must be non-empty")
    tracker = PlateauScheduler(schedule)
    lr = schedule.lr
    for loss in epoch_losses:
        lr = tracker.step(loss)
    return lr


# ---------------------------------------------------------------------------
# Plans and checkpoints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PretrainPlan:
    framework: str
    epochs: int
    batch_size: int
    tau: float
    top_k: int = 1
    seed: int = 0
    guidance_checkpoints: tuple[str, str] | None = None
    use_intra_negatives: bool = True
    warm_start: bool = False
    reduction: str = "mean"

    def __post_init__(self):
        if self.framework not in FRAMEWORKS:
            raise ConfigurationError(f"unknown framework {self.framework!r}, expected one of {FRAMEWORKS}")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.framework == "cmc_cmkm" and self.guidance_checkpoints is None:
            raise ConfigurationError("cmc_cmkm requires guidance_checkpoints")
        if self.warm_start and self.guidance_checkpoints is None:
            raise ConfigurationError("warm_start requires guidance_checkpoints to initialize from")


def _cpu_state(module: nn.Module) -> dict:
    return {k: v.detach().cpu().clone() for k, v in module.state_dict().items()}


def state_fingerprint(module: nn.Module) -> str:
    """Order-independent digest of every named parameter/buffer tensor."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(tensor.detach().cpu().numpy()).tobytes())
    return digest.hexdigest()


def encoder_config_doc(config) -> dict:
    kind = "inertial" if isinstance(config, InertialEncoderConfig) else "skeleton"
    return {"type": kind, **asdict(config)}


def build_encoder(doc: dict) -> nn.Module:
    doc = dict(doc)
    kind = doc.pop("type")
    if kind == "inertial":
        cfg = InertialEncoderConfig(**{**doc, "conv_channels": tuple(doc["conv_channels"])})
        return InertialEncoder(cfg)
    if kind == "skeleton":
        cfg = SkeletonEncoderConfig(
            **{
                **doc,
                "point_channels": tuple(doc["point_channels"]),
                "joint_channels": tuple(doc["joint_channels"]),
                "fused_channels": tuple(doc["fused_channels"]),
            }
        )
        return SkeletonEncoder(cfg)
    raise ConfigurationError(f"unknown encoder type {kind!r} in checkpoint")


def make_checkpoint(kind: str, configs: dict, modules: dict[str, nn.Module], meta: dict) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "kind": kind,
        "configs": configs,
        "state": {name: _cpu_state(mod) for name, mod in modules.items()},
        "meta": meta,
    }


def save_checkpoint(doc: dict, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(doc, path)
    return path


def load_checkpoint(path: Path | str) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    doc = torch.load(path, map_location="cpu", weights_only=True)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a recognized checkpoint file")
    return doc


def load_encoder(source: dict | Path | str, part: str = "encoder") -> nn.Module:
    """Rebuild an encoder from a checkpoint doc or file and load its weights."""
    doc = source if isinstance(source, dict) else load_checkpoint(source)
    encoder = build_encoder(doc["configs"][part])
    encoder.load_state_dict(doc["state"][part])
    return encoder


def _frozen(encoder: nn.Module) -> nn.Module:
    encoder.eval()
    encoder.requires_grad_(False)
    return encoder


# ---------------------------------------------------------------------------
# Shared loop machinery
# ---------------------------------------------------------------------------


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _augment_batch(x: np.ndarray, idx: np.ndarray, pipeline: AugmentationPipeline,
                   rng: np.random.Generator) -> torch.Tensor:
    return torch.from_numpy(np.stack([apply_pipeline(x[i], pipeline, rng) for i in idx]))


def _default_encoder_configs(inertial: np.ndarray, skeleton: np.ndarray,
                             inertial_config: InertialEncoderConfig | None,
                             skeleton_config: SkeletonEncoderConfig | None):
    if inertial_config is None:
        inertial_config = InertialEncoderConfig(in_channels=inertial.shape[-1])
    if skeleton_config is None:
        skeleton_config = SkeletonEncoderConfig(
            num_joints=skeleton.shape[2], coord_channels=skeleton.shape[3]
        )
    return inertial_config, skeleton_config


def _default_pipelines(inertial: np.ndarray, seed: int,
                       inertial_pipeline: AugmentationPipeline | None,
                       skeleton_pipeline: AugmentationPipeline | None):
    family = "utd" if inertial.shape[-1] % 3 == 0 else "mmact"
    if inertial_pipeline is None:
        inertial_pipeline = default_pipeline("inertial", family, seed)
    if skeleton_pipeline is None:
        skeleton_pipeline = default_pipeline("skeleton", family, seed)
    return inertial_pipeline, skeleton_pipeline


@dataclass
class TrainResult:
    """Final and best-loss checkpoints plus the per-epoch history."""

    checkpoints: dict[str, dict]
    best_checkpoints: dict[str, dict]
    loss_curve: list[float]
    lr_curve: list[float]
    records: list[dict] = field(default_factory=list)

    @property
    def checkpoint(self) -> dict:
        (only,) = self.checkpoints.values()
        return only

    @property
    def best_checkpoint(self) -> dict:
        (only,) = self.best_checkpoints.values()
        return only


def _record(framework: str, epoch: int, loss: float, lr: float, started: float,
            **extra) -> dict:
    rec = {
        "framework": framework,
        "epoch": epoch,
        "loss": loss,
        "lr": lr,
        "wall_time": time.time() - started,
    }
    rec.update(extra)
    return rec


# ---------------------------------------------------------------------------
# Pre-training
# ---------------------------------------------------------------------------


def pretrain_unimodal(plan: PretrainPlan, samples: list[MultimodalSample],
                      encoder_config=None, pipeline: AugmentationPipeline | None = None,
                      schedule: OptimizerSchedule | None = None,
                      projection_dim: int = 128) -> TrainResult:
    """Two-view contrastive pre-training of one modality encoder.

    The returned checkpoints keep both the encoder (the part reused as a
    frozen guidance or evaluation backbone) and the projection head (kept
    for unimodal evaluation, discarded by downstream consumers).
    """
    if plan.framework not in ("simclr_inertial", "simclr_skeleton"):
        raise ConfigurationError(f"pretrain_unimodal cannot run framework {plan.framework!r}")
    if plan.batch_size < 2:
        raise ConfigurationError("two-view contrastive pre-training needs batch_size >= 2")
    schedule = schedule or OptimizerSchedule()
    inertial, skeleton, _ = stack_modalities(samples)
    modality = "inertial" if plan.framework == "simclr_inertial" else "skeleton"
    x = inertial if modality == "inertial" else skeleton

    torch.manual_seed(plan.seed)
    if modality == "inertial":
        icfg, _ = _default_encoder_configs(inertial, skeleton, encoder_config, None)
        encoder_cfg = icfg
        encoder = InertialEncoder(icfg)
    else:
        _, scfg = _default_encoder_configs(inertial, skeleton, None, encoder_config)
        encoder_cfg = scfg
        encoder = SkeletonEncoder(scfg)
    head_cfg = ProjectionHeadConfig(input_dim=encoder.feature_dim, output_dim=projection_dim)
    projection = ProjectionHead(head_cfg)

    if pipeline is None:
        ipipe, spipe = _default_pipelines(inertial, plan.seed, None, None)
        pipeline = ipipe if modality == "inertial" else spipe

    optimizer = torch.optim.Adam(
        list(encoder.parameters()) + list(projection.parameters()), lr=schedule.lr
    )
    tracker = PlateauScheduler(schedule)
    shuffle_rng, aug_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(plan.seed).spawn(2))

    started = time.time()
    loss_curve, lr_curve, records = [], [], []
    best_loss, best_states = np.inf, None
    encoder.train()
    projection.train()
    for epoch in range(1, plan.epochs + 1):
        total, count = 0.0, 0
        for idx in _batches(len(x), plan.batch_size, shuffle_rng):
            if len(idx) < 2:
                continue
            v1 = _augment_batch(x, idx, pipeline, aug_rng)
            v2 = _augment_batch(x, idx, pipeline, aug_rng)
            z = projection(encoder(torch.cat([v1, v2])))
            loss = nt_xent(z[: len(idx)], z[len(idx):], plan.tau)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(idx)
            count += len(idx)
        if count == 0:
            raise ConfigurationError("dataset too small for the configured batch size")
        epoch_loss = total / count
        lr = tracker.step(epoch_loss)
        for group in optimizer.param_groups:
            group["lr"] = lr
        loss_curve.append(epoch_loss)
        lr_curve.append(lr)
        records.append(_record(plan.framework, epoch, epoch_loss, lr, started))
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_states = (copy.deepcopy(encoder.state_dict()), copy.deepcopy(projection.state_dict()), epoch)

    def doc(enc_state, head_state, epoch):
        return make_checkpoint(
            "unimodal",
            configs={
                "encoder": encoder_config_doc(encoder_cfg),
                "projection": {"type": "projection", **asdict(head_cfg)},
            },
            modules={},
            meta={
                "framework": plan.framework,
                "modality": modality,
                "epoch": epoch,
                "seed": plan.seed,
                "tau": plan.tau,
                "loss_curve": list(loss_curve),
            },
        ) | {"state": {"encoder": enc_state, "projection": head_state}}

    final = doc(_cpu_state(encoder), _cpu_state(projection), plan.epochs)
    best = doc(*(best_states[:2]), best_states[2]) if best_states else final
    return TrainResult({modality: final}, {modality: best}, loss_curve, lr_curve, records)


def pretrain_multimodal(plan: PretrainPlan, samples: list[MultimodalSample],
                        inertial_config: InertialEncoderConfig | None = None,
                        skeleton_config: SkeletonEncoderConfig | None = None,
                        inertial_pipeline: AugmentationPipeline | None = None,
                        skeleton_pipeline: AugmentationPipeline | None = None,
                        schedule: OptimizerSchedule | None = None,
                        projection_dim: int = 128) -> TrainResult:
    """Cross-modal contrastive pre-training (plain or with positive mining).

    Only the two encoders and projection heads are updated; with mining
    enabled the frozen guidance encoders provide the similarity matrices and
    never receive gradients.
    """
    if plan.framework not in ("cmc", "cmc_cmkm"):
        raise ConfigurationError(f"pretrain_multimodal cannot run framework {plan.framework!r}")
    schedule = schedule or OptimizerSchedule()
    inertial, skeleton, _ = stack_modalities(samples)
    mining = plan.framework == "cmc_cmkm"

    guidance_inertial = guidance_skeleton = None
    if mining or plan.warm_start:
        gi_path, gs_path = plan.guidance_checkpoints
        guidance_inertial = _frozen(load_encoder(gi_path))
        guidance_skeleton = _frozen(load_encoder(gs_path))

    torch.manual_seed(plan.seed)
    icfg, scfg = _default_encoder_configs(inertial, skeleton, inertial_config, skeleton_config)
    enc_i, enc_s = InertialEncoder(icfg), SkeletonEncoder(scfg)
    head_i_cfg = ProjectionHeadConfig(input_dim=enc_i.feature_dim, output_dim=projection_dim)
    head_s_cfg = ProjectionHeadConfig(input_dim=enc_s.feature_dim, output_dim=projection_dim)
    head_i, head_s = ProjectionHead(head_i_cfg), ProjectionHead(head_s_cfg)
    if plan.warm_start:
        enc_i.load_state_dict(guidance_inertial.state_dict())
        enc_s.load_state_dict(guidance_skeleton.state_dict())

    ipipe, spipe = _default_pipelines(inertial, plan.seed, inertial_pipeline, skeleton_pipeline)
    optimizer = torch.optim.Adam(
        [p for m in (enc_i, head_i, enc_s, head_s) for p in m.parameters()], lr=schedule.lr
    )
    tracker = PlateauScheduler(schedule)
    shuffle_rng, aug_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(plan.seed).spawn(2))

    started = time.time()
    loss_curve, lr_curve, records = [], [], []
    best_loss, best_states = np.inf, None
    for module in (enc_i, head_i, enc_s, head_s):
        module.train()
    for epoch in range(1, plan.epochs + 1):
        total, count = 0.0, 0
        direction_i, direction_s, mined_sims = [], [], []
        for idx in _batches(len(samples), plan.batch_size, shuffle_rng):
            if mining and len(idx) < 2:
                continue  # mining and intra negatives are undefined for singletons
            singleton = len(idx) == 1
            if singleton:
                # the one-sample loss is identically 0 (numerator equals the
                # denominator), so log it via an eval-mode forward (train-mode
                # batch norm cannot see a single sample) and skip the update
                for module in (enc_i, head_i, enc_s, head_s):
                    module.eval()
            x_i = _augment_batch(inertial, idx, ipipe, aug_rng)
            x_s = _augment_batch(skeleton, idx, spipe, aug_rng)
            batch = ProjectionBatch(head_i(enc_i(x_i)), head_s(enc_s(x_s)))
            if mining:
                guidance = guidance_from_encoders(guidance_inertial, guidance_skeleton, x_i, x_s)
                k = min(plan.top_k, len(idx) - 1)
                sets = mine_sets(guidance, k)
                loss, terms_i, terms_s = cmkm_loss(
                    batch, guidance, k, plan.tau,
                    use_intra_negatives=plan.use_intra_negatives,
                    reduction=plan.reduction, sets=sets, return_terms=True)
                if k > 0:
                    mined_sims.append(float(np.mean([
                        np.mean([g[j, s.intra_pos[j]].mean().item() for j in range(len(idx))])
                        for g, s in ((guidance.s_inertial, sets.inertial),
                                     (guidance.s_skeleton, sets.skeleton))
                    ])))
            else:
                loss, terms_i, terms_s = cmc_loss(batch, plan.tau, reduction=plan.reduction,
                                                  return_terms=True)
            direction_i.append(terms_i.detach().mean().item())
            direction_s.append(terms_s.detach().mean().item())
            if singleton:
                for module in (enc_i, head_i, enc_s, head_s):
                    module.train()
            else:
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            total += loss.item() * len(idx)
            count += len(idx)
        if count == 0:
            raise ConfigurationError("dataset too small for the configured batch size")
        epoch_loss = total / count
        lr = tracker.step(epoch_loss)
        for group in optimizer.param_groups:
            group["lr"] = lr
        loss_curve.append(epoch_loss)
        lr_curve.append(lr)
        extra = {
            "loss_inertial_anchors": float(np.mean(direction_i)),
            "loss_skeleton_anchors": float(np.mean(direction_s)),
        }
        if mined_sims:
            extra["mean_mined_similarity"] = float(np.mean(mined_sims))
        records.append(_record(plan.framework, epoch, epoch_loss, lr, started, **extra))
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_states = (
                copy.deepcopy(enc_i.state_dict()), copy.deepcopy(head_i.state_dict()),
                copy.deepcopy(enc_s.state_dict()), copy.deepcopy(head_s.state_dict()),
                epoch,
            )

    def doc(modality, cfg, head_cfg, enc_state, head_state, epoch):
        return make_checkpoint(
            "unimodal",
            configs={
                "encoder": encoder_config_doc(cfg),
                "projection": {"type": "projection", **asdict(head_cfg)},
            },
            modules={},
            meta={
                "framework": plan.framework,
                "modality": modality,
                "epoch": epoch,
                "seed": plan.seed,
                "tau": plan.tau,
                "top_k": plan.top_k if mining else None,
                "loss_curve": list(loss_curve),
            },
        ) | {"state": {"encoder": enc_state, "projection": head_state}}

    final = {
        "inertial": doc("inertial", icfg, head_i_cfg, _cpu_state(enc_i), _cpu_state(head_i), plan.epochs),
        "skeleton": doc("skeleton", scfg, head_s_cfg, _cpu_state(enc_s), _cpu_state(head_s), plan.epochs),
    }
    if best_states is not None:
        ei, hi, es, hs, at = best_states
        best = {
            "inertial": doc("inertial", icfg, head_i_cfg, ei, hi, at),
            "skeleton": doc("skeleton", scfg, head_s_cfg, es, hs, at),
        }
    else:
        best = final
    return TrainResult(final, best, loss_curve, lr_curve, records)


# ---------------------------------------------------------------------------
# Supervised baseline
# ---------------------------------------------------------------------------


def train_supervised(train_samples: list[MultimodalSample], num_classes: int, epochs: int,
                     modality: str = "multimodal", batch_size: int = 64, seed: int = 0,
                     schedule: OptimizerSchedule | None = None,
                     val_samples: list[MultimodalSample] | None = None,
                     inertial_config: InertialEncoderConfig | None = None,
                     skeleton_config: SkeletonEncoderConfig | None = None,
                     fusion_dim: int = 256) -> TrainResult:
    """End-to-end cross-entropy training of the encoders plus classifier.

    ``modality`` selects multimodal (both encoders and the fusion classifier)
    or a single-encoder mode with a linear classifier. The plateau schedule
    monitors the validation loss when ``val_samples`` is given, otherwise the
    training loss.
    """
    if modality not in ("multimodal", "inertial", "skeleton"):
        raise ConfigurationError(f"unknown supervised modality {modality!r}")
    if any(s.label is None for s in train_samples):
        raise ConfigurationError("supervised training requires labels on every sample")
    if len(train_samples) < 2:
        raise ConfigurationError("supervised training needs at least 2 labeled samples (batch norm)")
    schedule = schedule or OptimizerSchedule()
    inertial, skeleton, labels = stack_modalities(train_samples)
    y = torch.from_numpy(labels)

    torch.manual_seed(seed)
    icfg, scfg = _default_encoder_configs(inertial, skeleton, inertial_config, skeleton_config)
    if modality == "multimodal":
        enc_i, enc_s = InertialEncoder(icfg), SkeletonEncoder(scfg)
        fusion_cfg = FusionHeadConfig(
            classifier_classes=num_classes,
            inertial_dim=enc_i.feature_dim,
            skeleton_dim=enc_s.feature_dim,
            per_modality_out=fusion_dim,
        )
        fusion = FusionClassifier(fusion_cfg)
        modules: dict[str, nn.Module] = {"encoder_inertial": enc_i, "encoder_skeleton": enc_s, "fusion": fusion}
        configs = {
            "encoder_inertial": encoder_config_doc(icfg),
            "encoder_skeleton": encoder_config_doc(scfg),
            "fusion": {"type": "fusion", **asdict(fusion_cfg)},
        }
    else:
        encoder = InertialEncoder(icfg) if modality == "inertial" else SkeletonEncoder(scfg)
        classifier = nn.Linear(encoder.feature_dim, num_classes)
        modules = {"encoder": encoder, "classifier": classifier}
        configs = {
            "encoder": encoder_config_doc(icfg if modality == "inertial" else scfg),
            "classifier": {"type": "linear", "in_dim": encoder.feature_dim, "classes": num_classes},
        }

    params = [p for m in modules.values() for p in m.parameters()]
    optimizer = torch.optim.Adam(params, lr=schedule.lr)
    tracker = PlateauScheduler(schedule)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    criterion = nn.CrossEntropyLoss()

    def forward(idx_or_all) -> torch.Tensor:
        xi = torch.from_numpy(inertial[idx_or_all])
        xs = torch.from_numpy(skeleton[idx_or_all])
        if modality == "multimodal":
            return modules["fusion"](modules["encoder_inertial"](xi), modules["encoder_skeleton"](xs))
        x = xi if modality == "inertial" else xs
        return modules["classifier"](modules["encoder"](x))

    val_arrays = None
    if val_samples is not None:
        vi, vs, vl = stack_modalities(val_samples)
        val_arrays = (vi, vs, torch.from_numpy(vl))

    started = time.time()
    loss_curve, lr_curve, records = [], [], []
    best_loss, best_state = np.inf, None
    for epoch in range(1, epochs + 1):
        for m in modules.values():
            m.train()
        total, count = 0.0, 0
        for idx in _batches(len(train_samples), batch_size, shuffle_rng):
            if len(idx) < 2:
                continue  # batch norm cannot train on a singleton remainder
            logits = forward(idx)
            loss = criterion(logits, y[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(idx)
            count += len(idx)
        epoch_loss = total / count
        monitored = epoch_loss
        if val_arrays is not None:
            for m in modules.values():
                m.eval()
            with torch.no_grad():
                vi, vs, vy = val_arrays
                v_logits = (
                    modules["fusion"](modules["encoder_inertial"](torch.from_numpy(vi)),
                                      modules["encoder_skeleton"](torch.from_numpy(vs)))
                    if modality == "multimodal"
                    else modules["classifier"](modules["encoder"](
                        torch.from_numpy(vi if modality == "inertial" else vs)))
                )
                monitored = float(criterion(v_logits, vy))
        lr = tracker.step(monitored)
        for group in optimizer.param_groups:
            group["lr"] = lr
        loss_curve.append(epoch_loss)
        lr_curve.append(lr)
        records.append(_record(f"supervised_{modality}", epoch, epoch_loss, lr, started,
                               monitored=monitored))
        if monitored < best_loss:
            best_loss = monitored
            best_state = ({k: copy.deepcopy(m.state_dict()) for k, m in modules.items()}, epoch)

    meta = {
        "framework": f"supervised_{modality}",
        "modality": modality,
        "epoch": epochs,
        "seed": seed,
        "num_classes": num_classes,
        "loss_curve": list(loss_curve),
    }
    final = make_checkpoint("supervised", configs, modules, meta)
    if best_state is not None:
        states, at = best_state
        best = dict(final, state=states, meta=dict(meta, epoch=at))
    else:
        best = final
    return TrainResult({"supervised": final}, {"supervised": best}, loss_curve, lr_curve, records)
