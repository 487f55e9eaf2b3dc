"""Stochastic modality-specific augmentations for pre-training.

All operations act on bare numpy arrays (inertial: T x S, skeleton:
T x J x C), preserve shape and dtype, and take an explicit
``numpy.random.Generator`` so repeated application with the same seed is
bit-identical. Pipelines apply a configured op list in order; each op runs
with the configured probability except the ones in ``always_apply``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import _resample_array


class AugmentationConfigError(ValueError):
    """Raised for unknown augmentation names or invalid pipeline settings."""


def _rng(rng: np.random.Generator | None) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng()


def jitter(values: np.ndarray, sigma, rng: np.random.Generator | None = None) -> np.ndarray:
    """Add zero-mean Gaussian noise of std ``sigma`` to every entry.

    ``sigma`` may be a scalar or an array broadcastable against the trailing
    axis (per-channel strengths).
    """
    sigma = np.asarray(sigma)
    if np.any(sigma < 0):
        raise ValueError("sigma must be >= 0")
    noise = _rng(rng).standard_normal(values.shape) * sigma
    return (values + noise).astype(values.dtype)


def scale(values: np.ndarray, sigma: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Multiply each trailing-axis channel by an independent Normal(1, sigma) factor."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    factors = _rng(rng).normal(1.0, sigma, size=values.shape[-1])
    return (values * factors).astype(values.dtype)


def rotation_matrix_2d(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def random_rotation_3d(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix via quaternion sampling."""
    u1, u2, u3 = rng.uniform(size=3)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    w, x = a * np.sin(2 * np.pi * u2), a * np.cos(2 * np.pi * u2)
    y, z = b * np.sin(2 * np.pi * u3), b * np.cos(2 * np.pi * u3)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotate(values: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply one random rotation to every timestep.

    Inertial input (2-D array) is rotated per consecutive 3-channel sensor
    group with a single shared 3-D rotation; skeleton input gets one rotation
    of its coordinate space (uniform angle for C=2, uniform over the rotation
    group for C=3). Vector norms are preserved.
    """
    rng = _rng(rng)
    if values.ndim == 2:
        t, s = values.shape
        if s % 3 != 0:
            raise ValueError(f"inertial rotation needs channel count divisible by 3, got {s}")
        rot = random_rotation_3d(rng)
        grouped = values.reshape(t, s // 3, 3)
        return (grouped @ rot.T).reshape(t, s).astype(values.dtype)
    c = values.shape[-1]
    if c == 2:
        rot = rotation_matrix_2d(rng.uniform(0.0, 2.0 * np.pi))
    elif c == 3:
        rot = random_rotation_3d(rng)
    else:
        raise ValueError(f"skeleton rotation needs 2 or 3 coordinate channels, got {c}")
    return (values @ rot.T).astype(values.dtype)


def permute(values: np.ndarray, num_segments: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Cut the time axis into contiguous segments and shuffle them uniformly."""
    t = values.shape[0]
    if not 1 <= num_segments <= t:
        raise ValueError(f"num_segments must be in [1, {t}], got {num_segments}")
    segments = np.array_split(np.arange(t), num_segments)
    order = _rng(rng).permutation(num_segments)
    idx = np.concatenate([segments[i] for i in order])
    return values[idx]


def channel_shuffle(values: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Reorder sensor channels by a uniform random permutation."""
    perm = _rng(rng).permutation(values.shape[-1])
    return values[..., perm]


def random_resized_crop(values: np.ndarray, min_fraction: float = 0.5,
                        rng: np.random.Generator | None = None) -> np.ndarray:
    """Pick a random temporal window of length >= min_fraction * T and stretch
    it back to T by linear interpolation."""
    if not 0.0 < min_fraction <= 1.0:
        raise ValueError(f"min_fraction must be in (0, 1], got {min_fraction}")
    rng = _rng(rng)
    t = values.shape[0]
    window = max(1, int(np.ceil(rng.uniform(min_fraction, 1.0) * t)))
    start = rng.integers(0, t - window + 1)
    return _resample_array(values[start:start + window], t)


def shear_matrix(dim: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    mat = np.eye(dim)
    off = ~np.eye(dim, dtype=bool)
    mat[off] += rng.normal(0.0, sigma, size=int(off.sum()))
    return mat


def shear(values: np.ndarray, sigma: float = 0.1, rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply one random shear (identity plus Normal(0, sigma) off-diagonals)
    to every joint coordinate in every frame."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    c = values.shape[-1]
    if c not in (2, 3):
        raise ValueError(f"shear needs 2 or 3 coordinate channels, got {c}")
    mat = shear_matrix(c, sigma, _rng(rng))
    return (values @ mat.T).astype(values.dtype)


INERTIAL_OPS = ("jitter", "scale", "rotate", "permute", "channel_shuffle")
SKELETON_OPS = ("jitter", "scale", "rotate", "shear", "random_resized_crop")

DEFAULT_STRENGTHS: dict[str, dict] = {
    "jitter": {"sigma": 0.05, "relative": True},
    "scale": {"sigma": 0.1},
    "permute": {"num_segments": 4},
    "random_resized_crop": {"min_fraction": 0.5},
    "shear": {"sigma": 0.1},
}


@dataclass(frozen=True)
class AugmentationPipeline:
    """Ordered augmentation policy for one modality.

    Ops in ``always_apply`` run every call; the rest run independently with
    probability ``apply_prob``, in listed order. ``strengths`` overrides the
    per-op default parameters.
    """

    modality: str
    ops: tuple[str, ...]
    apply_prob: float = 0.75
    always_apply: frozenset[str] = frozenset()
    rng_seed: int = 0
    strengths: dict = field(default_factory=dict)

    def __post_init__(self):
        registered = {"inertial": INERTIAL_OPS, "skeleton": SKELETON_OPS}.get(self.modality)
        if registered is None:
            raise AugmentationConfigError(f"unknown modality {self.modality!r}")
        for name in tuple(self.ops) + tuple(self.always_apply):
            if name not in registered:
                raise AugmentationConfigError(
                    f"unknown {self.modality} augmentation {name!r}; registered: {registered}"
                )
        if not 0.0 <= self.apply_prob <= 1.0:
            raise AugmentationConfigError("apply_prob must be in [0, 1]")
        object.__setattr__(self, "ops", tuple(self.ops))
        object.__setattr__(self, "always_apply", frozenset(self.always_apply))

    def op_params(self, name: str) -> dict:
        params = dict(DEFAULT_STRENGTHS.get(name, {}))
        params.update(self.strengths.get(name, {}))
        return params


def default_pipeline(modality: str, dataset_family: str = "utd", seed: int = 0,
                     apply_prob: float = 0.75) -> AugmentationPipeline:
    """Stock pipelines: rotation-based inertial set for 3-axis sensor groups,
    permutation/shuffle set otherwise, and the standard skeleton set with
    jitter always on."""
    if modality == "inertial":
        ops = ("jitter", "scale", "rotate") if dataset_family == "utd" else (
            "jitter", "scale", "permute", "channel_shuffle")
        return AugmentationPipeline("inertial", ops, apply_prob, frozenset(), seed)
    return AugmentationPipeline(
        "skeleton",
        ("jitter", "random_resized_crop", "scale", "rotate", "shear"),
        apply_prob,
        frozenset({"jitter"}),
        seed,
    )


def _apply_op(values: np.ndarray, name: str, params: dict, rng: np.random.Generator) -> np.ndarray:
    if name == "jitter":
        sigma = params.get("sigma", 0.05)
        if params.get("relative", False):
            axes = tuple(range(values.ndim - 1))
            sigma = sigma * values.std(axis=axes)
        return jitter(values, sigma, rng)
    if name == "scale":
        return scale(values, params.get("sigma", 0.1), rng)
    if name == "rotate":
        return rotate(values, rng)
    if name == "permute":
        return permute(values, params.get("num_segments", 4), rng)
    if name == "channel_shuffle":
        return channel_shuffle(values, rng)
    if name == "random_resized_crop":
        return random_resized_crop(values, params.get("min_fraction", 0.5), rng)
    if name == "shear":
        return shear(values, params.get("sigma", 0.1), rng)
    raise AugmentationConfigError(f"unknown augmentation {name!r}")


def apply_pipeline(values: np.ndarray, pipeline: AugmentationPipeline,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Run the pipeline on one modality tensor.

    When ``rng`` is omitted a fresh generator is seeded from the pipeline, so
    the call is a deterministic function of (values, pipeline). For each op
    the gating uniform (if any) is drawn before the op's own randomness.
    """
    if rng is None:
        rng = np.random.default_rng(pipeline.rng_seed)
    out = values
    for name in pipeline.ops:
        if name not in pipeline.always_apply and rng.uniform() >= pipeline.apply_prob:
            continue
        out = _apply_op(out, name, pipeline.op_params(name), rng)
    return out
