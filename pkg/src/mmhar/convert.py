"""Converters from raw public dataset layouts into the canonical format.

Raw datasets are converted exactly once; all downstream code reads the
canonical manifest + tensor containers and stays dataset-agnostic.
"""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np
from scipy.io import loadmat

from .data import (
    DatasetError,
    InertialSequence,
    MultimodalSample,
    SkeletonSequence,
    write_dataset,
)

_UTD_STEM = re.compile(r"a(\d+)_s(\d+)_t(\d+)_inertial\.mat$")


def convert_utd_mhad(src_dir: Path | str, out_dir: Path | str) -> Path:
    """Convert a local UTD-MHAD copy (MATLAB files) to the canonical format.

    Expects the usual ``a<action>_s<subject>_t<trial>_inertial.mat`` /
    ``..._skeleton.mat`` pairs (flat or under ``Inertial``/``Skeleton``
    directories) with ``d_iner`` of shape T x 6 and ``d_skel`` of shape
    20 x 3 x T. Pairs missing either modality are skipped, which reproduces
    the dataset's published corrupted-file removals; the resulting sample
    count lives in the manifest rather than in code.
    """
    src_dir = Path(src_dir)
    inertial_files = sorted(src_dir.rglob("*_inertial.mat"))
    if not inertial_files:
        raise DatasetError(f"no *_inertial.mat files found under {src_dir}")
    samples = []
    for ipath in inertial_files:
        match = _UTD_STEM.search(ipath.name)
        if not match:
            continue
        action, subject, trial = (int(g) for g in match.groups())
        spath = _find_skeleton_mate(ipath)
        if spath is None:
            continue
        inertial = np.asarray(loadmat(ipath)["d_iner"], dtype=np.float32)
        skeleton = np.asarray(loadmat(spath)["d_skel"], dtype=np.float32)
        if skeleton.ndim == 2:  # single-frame recordings come through as J x C
            skeleton = skeleton[:, :, None]
        skeleton = np.transpose(skeleton, (2, 0, 1))  # J x C x T -> T x J x C
        samples.append(
            MultimodalSample(
                inertial=InertialSequence(inertial),
                skeleton=SkeletonSequence(skeleton),
                label=action - 1,
                subject_id=subject,
                scene_id=None,
            )
        )
        del trial
    if not samples:
        raise DatasetError(f"no complete inertial/skeleton pairs found under {src_dir}")
    return write_dataset(samples, out_dir, name="utd_mhad", num_classes=27)


def _find_skeleton_mate(inertial_path: Path) -> Path | None:
    name = inertial_path.name.replace("_inertial.mat", "_skeleton.mat")
    for candidate in (
        inertial_path.with_name(name),
        inertial_path.parent.parent / "Skeleton" / name,
    ):
        if candidate.exists():
            return candidate
    return None


def convert_index_csv(index_path: Path | str, out_dir: Path | str, name: str,
                      num_classes: int) -> Path:
    """Convert a generic prepared dataset described by an index CSV.

    The CSV needs a header with columns ``inertial_path``, ``skeleton_path``,
    ``label``, ``subject_id`` and optionally ``scene_id``; paths are relative
    to the CSV and point at ``.npy`` arrays (inertial T x S, skeleton
    T x J x C) or whitespace/comma text files for the inertial modality. This
    is the interchange route for datasets without a dedicated converter.
    """
    index_path = Path(index_path)
    if not index_path.exists():
        raise FileNotFoundError(f"index file not found: {index_path}")
    base = index_path.parent
    samples = []
    with index_path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"inertial_path", "skeleton_path", "label", "subject_id"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise DatasetError(f"index {index_path} must have columns {sorted(required)}")
        for row in reader:
            inertial = _load_array(base / row["inertial_path"])
            skeleton = _load_array(base / row["skeleton_path"])
            label = row["label"].strip()
            samples.append(
                MultimodalSample(
                    inertial=InertialSequence(inertial.astype(np.float32)),
                    skeleton=SkeletonSequence(skeleton.astype(np.float32)),
                    label=None if label in ("", "none") else int(label),
                    subject_id=int(row["subject_id"]),
                    scene_id=(row.get("scene_id") or None),
                )
            )
    if not samples:
        raise DatasetError(f"index {index_path} lists no samples")
    return write_dataset(samples, out_dir, name=name, num_classes=num_classes)


def _load_array(path: Path) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"referenced data file not found: {path}")
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None)
