"""Canonical multimodal dataset handling.

A dataset on disk is a JSON manifest plus one binary tensor container per
modality per sample:

    manifest.json
    samples/
        000000_inertial.mmt
        000000_skeleton.mmt
        ...

Tensor container layout (".mmt", little-endian throughout): magic ``b"MMT1"``,
``uint8`` ndim, ``ndim x uint32`` shape, then the C-order ``float32`` payload.
The manifest carries dataset-level metadata (name, class/channel/joint counts)
and one record per sample with keys ``inertial_path``, ``skeleton_path``,
``label``, ``subject_id``, ``scene_id``; paths are relative to the manifest's
directory.

Everything in this module is a pure function of its inputs plus an explicit
seed, so concurrent use is safe.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"MMT1"

SPLIT_PROTOCOLS = (
    "utd_cross_subject",
    "mmact_cross_subject",
    "mmact_cross_scene",
    "custom",
)

OCCLUSION_SCENE = "occlusion"


class DatasetError(ValueError):
    """Raised when a manifest or sample file fails validation."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite entries")


@dataclass(frozen=True)
class InertialSequence:
    """Wearable-sensor sequence of shape (T, S)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"inertial sequence must be T x S with T,S >= 1, got {values.shape}")
        _check_finite(values, "inertial sequence")
        object.__setattr__(self, "values", values)

    @property
    def num_timesteps(self) -> int:
        return self.values.shape[0]

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SkeletonSequence:
    """Joint-coordinate sequence of shape (T, J, C) with C in {2, 3}."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"skeleton sequence must be T x J x C, got {values.shape}")
        if values.shape[2] not in (2, 3):
            raise ValueError(f"skeleton coordinate channels must be 2 or 3, got {values.shape[2]}")
        _check_finite(values, "skeleton sequence")
        object.__setattr__(self, "values", values)

    @property
    def num_timesteps(self) -> int:
        return self.values.shape[0]

    @property
    def num_joints(self) -> int:
        return self.values.shape[1]

    @property
    def coord_channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class MultimodalSample:
    """One aligned (inertial, skeleton) recording with its metadata.

    The two modalities may have different lengths before preprocessing;
    after :func:`preprocess_samples` they share the same T.
    """

    inertial: InertialSequence
    skeleton: SkeletonSequence
    label: int | None
    subject_id: int
    scene_id: str | None = None


@dataclass(frozen=True)
class SampleRecord:
    inertial_path: str
    skeleton_path: str
    label: int | None
    subject_id: int
    scene_id: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    num_classes: int
    sensor_channels: int
    num_joints: int
    coord_channels: int
    samples: tuple[SampleRecord, ...]

    def __post_init__(self):
        if len(self.samples) < 1:
            raise DatasetError("manifest declares no samples")
        for rec in self.samples:
            if rec.label is not None and not 0 <= rec.label < self.num_classes:
                raise DatasetError(
                    f"label {rec.label} out of range [0, {self.num_classes}) "
                    f"for sample {rec.inertial_path}"
                )


@dataclass(frozen=True)
class SplitSpec:
    """Assignment rule mapping samples to train/test sides.

    ``train_ids``/``test_ids`` are only consulted for the ``custom`` protocol,
    where they name subject ids.
    """

    protocol: str
    train_ids: frozenset[int] = frozenset()
    test_ids: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.protocol not in SPLIT_PROTOCOLS:
            raise ValueError(f"unknown split protocol {self.protocol!r}, expected one of {SPLIT_PROTOCOLS}")
        if self.train_ids & self.test_ids:
            raise ValueError("train and test subject sets overlap")
        if self.protocol == "custom" and (not self.train_ids or not self.test_ids):
            raise ValueError("custom protocol requires non-empty train_ids and test_ids")


# ---------------------------------------------------------------------------
# Tensor container + manifest IO
# ---------------------------------------------------------------------------


def write_tensor(path: Path | str, values: np.ndarray) -> None:
    """Write one array in the canonical binary container format."""
    values = np.ascontiguousarray(values, dtype="<f4")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<B", values.ndim))
        fh.write(struct.pack(f"<{values.ndim}I", *values.shape))
        fh.write(values.tobytes(order="C"))


def read_tensor(path: Path | str) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"tensor file not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != TENSOR_MAGIC:
        raise DatasetError(f"bad magic in tensor file {path}")
    ndim = struct.unpack_from("<B", raw, 4)[0]
    shape = struct.unpack_from(f"<{ndim}I", raw, 5)
    payload = raw[5 + 4 * ndim:]
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise DatasetError(f"tensor file {path} payload size {len(payload)} != expected {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    path = Path(path)
    doc = {
        "name": manifest.name,
        "num_classes": manifest.num_classes,
        "sensor_channels": manifest.sensor_channels,
        "num_joints": manifest.num_joints,
        "coord_channels": manifest.coord_channels,
        "samples": [
            {
                "inertial_path": r.inertial_path,
                "skeleton_path": r.skeleton_path,
                "label": r.label,
                "subject_id": r.subject_id,
                "scene_id": r.scene_id,
            }
            for r in manifest.samples
        ],
    }
    path.write_text(json.dumps(doc, indent=2))


def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest {path} is not valid JSON: {exc}") from exc
    try:
        records = tuple(
            SampleRecord(
                inertial_path=r["inertial_path"],
                skeleton_path=r["skeleton_path"],
                label=r["label"],
                subject_id=r["subject_id"],
                scene_id=r.get("scene_id"),
            )
            for r in doc["samples"]
        )
        return DatasetManifest(
            name=doc["name"],
            num_classes=doc["num_classes"],
            sensor_channels=doc["sensor_channels"],
            num_joints=doc["num_joints"],
            coord_channels=doc["coord_channels"],
            samples=records,
        )
    except KeyError as exc:
        raise DatasetError(f"manifest {path} is missing required field {exc}") from exc


def load_dataset(manifest_path: Path | str, config=None) -> list[MultimodalSample]:
    """Load every sample referenced by a manifest, in manifest order.

    Raw shapes are preserved; preprocessing is a separate step. Per-sample
    shapes are validated against the manifest metadata (``config`` is accepted
    for interface symmetry with the rest of the toolkit; manifest metadata is
    authoritative).
    """
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    base = manifest_path.parent
    samples = []
    for rec in manifest.samples:
        inertial = read_tensor(base / rec.inertial_path)
        skeleton = read_tensor(base / rec.skeleton_path)
        if inertial.ndim != 2 or inertial.shape[1] != manifest.sensor_channels:
            raise DatasetError(
                f"{rec.inertial_path}: expected T x {manifest.sensor_channels} inertial data, "
                f"got shape {inertial.shape}"
            )
        if (
            skeleton.ndim != 3
            or skeleton.shape[1] != manifest.num_joints
            or skeleton.shape[2] != manifest.coord_channels
        ):
            raise DatasetError(
                f"{rec.skeleton_path}: expected T x {manifest.num_joints} x "
                f"{manifest.coord_channels} skeleton data, got shape {skeleton.shape}"
            )
        samples.append(
            MultimodalSample(
                inertial=InertialSequence(inertial),
                skeleton=SkeletonSequence(skeleton),
                label=rec.label,
                subject_id=rec.subject_id,
                scene_id=rec.scene_id,
            )
        )
    return samples


def write_dataset(samples: list[MultimodalSample], out_dir: Path | str, name: str,
                  num_classes: int) -> Path:
    """Write samples in the canonical format; returns the manifest path."""
    out_dir = Path(out_dir)
    sample_dir = out_dir / "samples"
    sample_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, sample in enumerate(samples):
        ipath = f"samples/{i:06d}_inertial.mmt"
        spath = f"samples/{i:06d}_skeleton.mmt"
        write_tensor(out_dir / ipath, sample.inertial.values)
        write_tensor(out_dir / spath, sample.skeleton.values)
        records.append(
            SampleRecord(
                inertial_path=ipath,
                skeleton_path=spath,
                label=sample.label,
                subject_id=sample.subject_id,
                scene_id=sample.scene_id,
            )
        )
    first = samples[0]
    manifest = DatasetManifest(
        name=name,
        num_classes=num_classes,
        sensor_channels=first.inertial.num_channels,
        num_joints=first.skeleton.num_joints,
        coord_channels=first.skeleton.coord_channels,
        samples=tuple(records),
    )
    manifest_path = out_dir / "manifest.json"
    save_manifest(manifest, manifest_path)
    return manifest_path


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def _resample_array(values: np.ndarray, target_len: int) -> np.ndarray:
    if target_len < 1:
        raise ValueError(f"target length must be >= 1, got {target_len}")
    t = values.shape[0]
    if t == target_len:
        return values.copy()
    flat = values.reshape(t, -1).astype(np.float64)
    grid = np.linspace(0.0, t - 1.0, target_len)
    lo = np.floor(grid).astype(np.intp)
    hi = np.minimum(lo + 1, t - 1)
    w = (grid - lo)[:, None]
    out = (1.0 - w) * flat[lo] + w * flat[hi]
    return out.reshape((target_len,) + values.shape[1:]).astype(values.dtype)


def resample_sequence(seq, target_timesteps: int):
    """Linearly resample the time axis to exactly ``target_timesteps`` steps.

    Interpolation happens on a uniform grid over [0, T-1]; non-time axes are
    untouched. Accepts a sequence wrapper or a bare array and returns the
    same kind.
    """
    if isinstance(seq, InertialSequence):
        return InertialSequence(_resample_array(seq.values, target_timesteps))
    if isinstance(seq, SkeletonSequence):
        return SkeletonSequence(_resample_array(seq.values, target_timesteps))
    return _resample_array(np.asarray(seq), target_timesteps)


def normalize_skeleton(seq):
    """Subtract the first frame's joint centroid from every frame.

    The centroid is the mean over joints of frame 0, so the normalized
    sequence has a zero frame-0 centroid and is invariant to constant
    translations of the whole recording.
    """
    if isinstance(seq, SkeletonSequence):
        return SkeletonSequence(normalize_skeleton(seq.values))
    values = np.asarray(seq)
    centroid = values[0].mean(axis=0)
    return values - centroid.astype(values.dtype)


def preprocess_samples(samples: list[MultimodalSample], target_timesteps: int = 50,
                       center_skeleton: bool = True) -> list[MultimodalSample]:
    """Resample both modalities to a shared length, then center skeletons.

    Resampling happens before any augmentation is applied downstream.
    """
    out = []
    for sample in samples:
        skeleton = _resample_array(sample.skeleton.values, target_timesteps)
        if center_skeleton:
            skeleton = normalize_skeleton(skeleton)
        out.append(
            replace(
                sample,
                inertial=InertialSequence(_resample_array(sample.inertial.values, target_timesteps)),
                skeleton=SkeletonSequence(skeleton),
            )
        )
    return out


def stack_modalities(samples: list[MultimodalSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack preprocessed samples into (N,T,S), (N,T,J,C) and label arrays.

    Unlabeled samples get label -1.
    """
    lengths = {s.inertial.num_timesteps for s in samples} | {s.skeleton.num_timesteps for s in samples}
    if len(lengths) != 1:
        raise ValueError(f"samples must share one sequence length before stacking, got lengths {sorted(lengths)}")
    inertial = np.stack([s.inertial.values for s in samples]).astype(np.float32)
    skeleton = np.stack([s.skeleton.values for s in samples]).astype(np.float32)
    labels = np.array([-1 if s.label is None else s.label for s in samples], dtype=np.int64)
    return inertial, skeleton, labels


# ---------------------------------------------------------------------------
# Splits and label subsampling
# ---------------------------------------------------------------------------


def make_split(samples: list[MultimodalSample], spec: SplitSpec):
    """Partition samples into (train, test) according to the protocol.

    utd_cross_subject: odd-numbered subjects train, even-numbered test.
    mmact_cross_subject: subjects 1..16 train, the rest test.
    mmact_cross_scene: occlusion-scene samples test, all others train.
    custom: by the subject id sets carried in ``spec``.
    """
    train: list[MultimodalSample] = []
    test: list[MultimodalSample] = []
    for sample in samples:
        if spec.protocol == "utd_cross_subject":
            if not 1 <= sample.subject_id <= 10:
                raise ValueError(
                    f"utd_cross_subject expects subject ids in 1..10, got {sample.subject_id}"
                )
            (train if sample.subject_id % 2 == 1 else test).append(sample)
        elif spec.protocol == "mmact_cross_subject":
            (train if sample.subject_id <= 16 else test).append(sample)
        elif spec.protocol == "mmact_cross_scene":
            (test if sample.scene_id == OCCLUSION_SCENE else train).append(sample)
        else:
            if sample.subject_id in spec.train_ids:
                train.append(sample)
            elif sample.subject_id in spec.test_ids:
                test.append(sample)
            else:
                raise ValueError(
                    f"custom split does not cover subject id {sample.subject_id}"
                )
    if not train or not test:
        raise DatasetError(
            f"split {spec.protocol} produced an empty side "
            f"({len(train)} train / {len(test)} test)"
        )
    return train, test


def subsample_labels(train: list[MultimodalSample], fraction: float, seed: int,
                     stratified: bool = False) -> list[MultimodalSample]:
    """Pick a uniformly random labeled subset of size round(fraction * n).

    At least one sample is always returned. Unstratified by default; the
    stratified mode draws proportionally per class.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if not train:
        raise ValueError("train list is empty")
    rng = np.random.default_rng(seed)
    size = max(1, round(fraction * len(train)))
    if not stratified:
        picked = rng.choice(len(train), size=size, replace=False)
        return [train[i] for i in picked]
    by_class: dict[int, list[int]] = {}
    for i, sample in enumerate(train):
        by_class.setdefault(-1 if sample.label is None else sample.label, []).append(i)
    picked_idx: list[int] = []
    for _, idxs in sorted(by_class.items()):
        take = max(1, round(fraction * len(idxs)))
        picked_idx.extend(rng.choice(idxs, size=min(take, len(idxs)), replace=False))
    return [train[i] for i in picked_idx]


# ---------------------------------------------------------------------------
# Synthetic dataset generator
# ---------------------------------------------------------------------------


def generate_synthetic(num_classes: int, per_class: int, timesteps: int = 50,
                       sensor_channels: int = 6, num_joints: int = 8,
                       coord_channels: int = 2, noise: float = 0.1,
                       seed: int = 0, *, signature_scale: float = 0.09,
                       base_frequency: float = 2.0, frequency_spacing: float = 0.13,
                       phase_range: float = 3.0) -> list[MultimodalSample]:
    """Build a labeled multimodal dataset with a shared latent class signature.

    Each class owns a frequency (``base_frequency + frequency_spacing * c``)
    plus per-channel and per-joint phase patterns, rendered as sinusoidal
    sensor channels and as oscillations of a fixed circular joint layout.
    Amplitudes and joint displacement directions are shared across classes,
    so class identity lives only in the frequency/phase structure; samples of
    one class differ only by a per-sample phase offset (uniform in
    ``[0, phase_range]``, drawn from the seeded stream) and i.i.d. Gaussian
    noise of the given scale. With ``signature_scale`` near the noise floor
    the classes stay recoverable by invariance-learning encoders while raw
    geometry keeps only a thin inter/intra-class distance margin.

    Subjects cycle 1..10 per block of one-sample-per-class and every fourth
    block is tagged as the occlusion scene, so all split protocols are
    exercisable on generated data.
    """
    if min(num_classes, per_class, timesteps, sensor_channels, num_joints) < 1:
        raise ValueError("all counts must be >= 1")
    if coord_channels not in (2, 3):
        raise ValueError("coord_channels must be 2 or 3")
    if noise < 0:
        raise ValueError("noise must be >= 0")

    rng = np.random.default_rng(seed)
    t_grid = np.arange(timesteps) / timesteps

    freqs = base_frequency + frequency_spacing * np.arange(num_classes)
    chan_phase = rng.uniform(0.0, 2.0 * np.pi, size=(num_classes, sensor_channels))
    chan_amp = signature_scale * rng.uniform(0.6, 1.4, size=sensor_channels)
    joint_phase = rng.uniform(0.0, 2.0 * np.pi, size=(num_classes, num_joints))
    joint_amp = signature_scale * rng.uniform(1.0, 2.0, size=num_joints)
    # one unit displacement direction per joint, shared by all classes
    directions = rng.standard_normal(size=(num_joints, coord_channels))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)

    angles = 2.0 * np.pi * np.arange(num_joints) / num_joints
    base_layout = 0.25 * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    if coord_channels == 3:
        base_layout = np.concatenate(
            [base_layout, 0.25 * np.sin(3.0 * angles)[:, None]], axis=-1
        )

    samples = []
    total = num_classes * per_class
    for i in range(total):
        label = i % num_classes
        subject = (i // num_classes) % 10 + 1
        scene = OCCLUSION_SCENE if (i // num_classes) % 4 == 3 else "open"
        phase = rng.uniform(0.0, phase_range)

        arg = 2.0 * np.pi * freqs[label] * t_grid[:, None]
        inertial = chan_amp * np.sin(arg + chan_phase[label] + phase)
        osc = joint_amp * np.sin(arg + joint_phase[label] + phase)
        skeleton = base_layout + osc[:, :, None] * directions
        if noise > 0:
            inertial = inertial + noise * rng.standard_normal(inertial.shape)
            skeleton = skeleton + noise * rng.standard_normal(skeleton.shape)

        samples.append(
            MultimodalSample(
                inertial=InertialSequence(inertial.astype(np.float32)),
                skeleton=SkeletonSequence(skeleton.astype(np.float32)),
                label=label,
                subject_id=subject,
                scene_id=scene,
            )
        )
    return samples
