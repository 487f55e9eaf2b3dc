"""Experiment configuration: a single YAML file per run with a strict schema.

Unknown keys are rejected so typos fail fast, and every unset field resolves
to a documented default. Batch size, temperature and epoch defaults depend on
the dataset family (derived from the split protocol) and the framework:

    family   framework        batch  tau   epochs
    utd      simclr_inertial  128    0.05  300
    utd      simclr_skeleton  32     0.5   300
    utd      cmc/cmc_cmkm     64     0.1   100
    mmact    simclr_inertial  64     0.2   300
    mmact    simclr_skeleton  128    0.2   300
    mmact    cmc/cmc_cmkm     128    0.1   100
    custom   any              64     0.1   300/100

Inertial augmentations default to {jitter, scale, rotate} for the utd family
and {jitter, scale, permute, channel_shuffle} for mmact; skeletons always use
{jitter, random_resized_crop, scale, rotate, shear} with jitter always on.
The mmact family reports macro F1 by default, everything else accuracy.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import AugmentationPipeline
from .data import DatasetManifest, SPLIT_PROTOCOLS, SplitSpec
from .encoders import InertialEncoderConfig, SkeletonEncoderConfig
from .train import FRAMEWORKS, ConfigurationError, OptimizerSchedule, PretrainPlan

PRETRAIN_DEFAULTS = {
    ("utd", "simclr_inertial"): {"batch_size": 128, "tau": 0.05, "epochs": 300},
    ("utd", "simclr_skeleton"): {"batch_size": 32, "tau": 0.5, "epochs": 300},
    ("utd", "cmc"): {"batch_size": 64, "tau": 0.1, "epochs": 100},
    ("utd", "cmc_cmkm"): {"batch_size": 64, "tau": 0.1, "epochs": 100},
    ("mmact", "simclr_inertial"): {"batch_size": 64, "tau": 0.2, "epochs": 300},
    ("mmact", "simclr_skeleton"): {"batch_size": 128, "tau": 0.2, "epochs": 300},
    ("mmact", "cmc"): {"batch_size": 128, "tau": 0.1, "epochs": 100},
    ("mmact", "cmc_cmkm"): {"batch_size": 128, "tau": 0.1, "epochs": 100},
    ("custom", "simclr_inertial"): {"batch_size": 64, "tau": 0.1, "epochs": 300},
    ("custom", "simclr_skeleton"): {"batch_size": 64, "tau": 0.1, "epochs": 300},
    ("custom", "cmc"): {"batch_size": 64, "tau": 0.1, "epochs": 100},
    ("custom", "cmc_cmkm"): {"batch_size": 64, "tau": 0.1, "epochs": 100},
}

INERTIAL_AUGMENTATION_DEFAULTS = {
    "utd": ("jitter", "scale", "rotate"),
    "mmact": ("jitter", "scale", "permute", "channel_shuffle"),
    "custom": ("jitter", "scale"),
}
SKELETON_AUGMENTATION_DEFAULT = ("jitter", "random_resized_crop", "scale", "rotate", "shear")


def dataset_family(protocol: str) -> str:
    if protocol.startswith("utd"):
        return "utd"
    if protocol.startswith("mmact"):
        return "mmact"
    return "custom"


@dataclass(frozen=True)
class DatasetSection:
    manifest: str | None = None
    protocol: str = "custom"
    train_subjects: tuple[int, ...] = ()
    test_subjects: tuple[int, ...] = ()
    resample_timesteps: int = 50
    normalize_skeleton: bool = True

    def split_spec(self) -> SplitSpec:
        return SplitSpec(
            protocol=self.protocol,
            train_ids=frozenset(self.train_subjects),
            test_ids=frozenset(self.test_subjects),
        )


@dataclass(frozen=True)
class AugmentationSection:
    inertial: tuple[str, ...] | None = None
    skeleton: tuple[str, ...] | None = None
    apply_prob: float = 0.75
    inertial_always: tuple[str, ...] = ()
    skeleton_always: tuple[str, ...] = ("jitter",)
    strengths: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EncoderSection:
    inertial: dict = field(default_factory=dict)
    skeleton: dict = field(default_factory=dict)
    projection_dim: int = 128
    fusion_dim: int = 256


@dataclass(frozen=True)
class EvaluationSection:
    epochs: int = 100
    batch_size: int = 64
    metric: str | None = None
    fractions: tuple[float, ...] = (0.01, 0.02, 0.05, 0.10, 0.25, 0.50)
    repeats: int = 10
    k_values: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    retrieval_k: int = 1
    retrieval_modality: str = "inertial"
    include_baselines: bool = True
    supervised_epochs: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    framework: str = "cmc"
    batch_size: int | None = None
    tau: float | None = None
    top_k: int = 1
    epochs: int | None = None
    seed: int = 0
    use_intra_negatives: bool = True
    warm_start: bool = False
    reduction: str = "mean"
    guidance_checkpoints: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    augmentations: AugmentationSection = field(default_factory=AugmentationSection)
    encoders: EncoderSection = field(default_factory=EncoderSection)
    optimizer: OptimizerSchedule = field(default_factory=OptimizerSchedule)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    output_dir: str | None = None

    def __post_init__(self):
        if self.framework not in FRAMEWORKS and not self.framework.startswith("supervised"):
            raise ConfigurationError(
                f"unknown framework {self.framework!r}, expected one of {FRAMEWORKS}"
            )
        if self.dataset.protocol not in SPLIT_PROTOCOLS:
            raise ConfigurationError(
                f"unknown protocol {self.dataset.protocol!r}, expected one of {SPLIT_PROTOCOLS}"
            )

    @property
    def family(self) -> str:
        return dataset_family(self.dataset.protocol)

    def resolved(self) -> "ExperimentConfig":
        """Fill every unset field with its documented default."""
        defaults = PRETRAIN_DEFAULTS.get((self.family, self.framework),
                                         {"batch_size": 64, "tau": 0.1, "epochs": 100})
        updates: dict = {}
        if self.batch_size is None:
            updates["batch_size"] = defaults["batch_size"]
        if self.tau is None:
            updates["tau"] = defaults["tau"]
        if self.epochs is None:
            updates["epochs"] = defaults["epochs"]
        aug_updates = {}
        if self.augmentations.inertial is None:
            aug_updates["inertial"] = INERTIAL_AUGMENTATION_DEFAULTS[self.family]
        if self.augmentations.skeleton is None:
            aug_updates["skeleton"] = SKELETON_AUGMENTATION_DEFAULT
        if aug_updates:
            updates["augmentations"] = dataclasses.replace(self.augmentations, **aug_updates)
        eval_updates = {}
        if self.evaluation.metric is None:
            eval_updates["metric"] = "f1_macro" if self.family == "mmact" else "accuracy"
        if eval_updates:
            updates["evaluation"] = dataclasses.replace(self.evaluation, **eval_updates)
        return dataclasses.replace(self, **updates) if updates else self

    # -- builders ----------------------------------------------------------

    def pretrain_plan(self) -> PretrainPlan:
        cfg = self.resolved()
        guidance = None
        if cfg.guidance_checkpoints:
            missing = {"inertial", "skeleton"} - set(cfg.guidance_checkpoints)
            if missing:
                raise ConfigurationError(
                    f"guidance_checkpoints is missing entries for {sorted(missing)}"
                )
            guidance = (cfg.guidance_checkpoints["inertial"], cfg.guidance_checkpoints["skeleton"])
        return PretrainPlan(
            framework=cfg.framework,
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            tau=cfg.tau,
            top_k=cfg.top_k,
            seed=cfg.seed,
            guidance_checkpoints=guidance,
            use_intra_negatives=cfg.use_intra_negatives,
            warm_start=cfg.warm_start,
            reduction=cfg.reduction,
        )

    def pipelines(self) -> tuple[AugmentationPipeline, AugmentationPipeline]:
        cfg = self.resolved()
        aug = cfg.augmentations
        inertial = AugmentationPipeline(
            modality="inertial",
            ops=tuple(aug.inertial),
            apply_prob=aug.apply_prob,
            always_apply=frozenset(aug.inertial_always),
            rng_seed=cfg.seed,
            strengths=dict(aug.strengths),
        )
        skeleton = AugmentationPipeline(
            modality="skeleton",
            ops=tuple(aug.skeleton),
            apply_prob=aug.apply_prob,
            always_apply=frozenset(aug.skeleton_always),
            rng_seed=cfg.seed,
            strengths=dict(aug.strengths),
        )
        return inertial, skeleton

    def encoder_configs(self, manifest: DatasetManifest):
        inertial = InertialEncoderConfig(
            **{"in_channels": manifest.sensor_channels, **self.encoders.inertial}
        )
        skeleton = SkeletonEncoderConfig(
            **{
                "num_joints": manifest.num_joints,
                "coord_channels": manifest.coord_channels,
                **self.encoders.skeleton,
            }
        )
        return inertial, skeleton


# ---------------------------------------------------------------------------
# Strict (de)serialization
# ---------------------------------------------------------------------------

_SECTION_TYPES = {
    "dataset": DatasetSection,
    "augmentations": AugmentationSection,
    "encoders": EncoderSection,
    "optimizer": OptimizerSchedule,
    "evaluation": EvaluationSection,
}


def _build_section(cls, doc: dict, path: str):
    if not isinstance(doc, dict):
        raise ConfigurationError(f"config section {path!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigurationError(f"unknown config key(s) under {path!r}: {sorted(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid value under {path!r}: {exc}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigurationError("experiment config must be a mapping")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {sorted(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        if key in _SECTION_TYPES:
            kwargs[key] = _build_section(_SECTION_TYPES[key], value or {}, key)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return ExperimentConfig(**kwargs)


def load_config(path: Path | str) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    doc = yaml.safe_load(path.read_text()) or {}
    return config_from_dict(doc)


def config_to_dict(config: ExperimentConfig) -> dict:
    def clean(value):
        if dataclasses.is_dataclass(value):
            return {k: clean(v) for k, v in dataclasses.asdict(value).items()}
        if isinstance(value, tuple):
            return [clean(v) for v in value]
        if isinstance(value, (frozenset, set)):
            return sorted(value)
        if isinstance(value, dict):
            return {k: clean(v) for k, v in value.items()}
        return value

    return {f.name: clean(getattr(config, f.name)) for f in dataclasses.fields(ExperimentConfig)}


def save_config(config: ExperimentConfig, path: Path | str) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(config), sort_keys=False))


def apply_overrides(config: ExperimentConfig, overrides: dict[str, object]) -> ExperimentConfig:
    """Apply dotted-path overrides (e.g. ``{"dataset.protocol": "utd_cross_subject"}``).

    New leaves may be created inside free-form mapping fields (checkpoint
    paths, encoder overrides, augmentation strengths); the rebuilt config is
    re-validated, so typos against the schema still fail closed.
    """
    doc = config_to_dict(config)
    for dotted, value in overrides.items():
        node = doc
        *parents, leaf = dotted.split(".")
        for part in parents:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigurationError(f"unknown config key {dotted!r}")
            node = node[part]
        node[leaf] = value
    return config_from_dict(doc)
