"""Contrastive objectives for paired-modality batches.

All losses share the same similarity kernel: delta(a, b) = exp(s(a, b) / tau)
with s the cosine similarity. ``nt_xent`` is the unimodal two-view objective,
``cmc_loss`` contrasts the two modalities of each sample against the rest of
the batch in both directions, and ``cmkm_loss`` generalizes it with extra
positives mined from frozen-encoder similarity matrices plus optional
intra-modality negatives.

Losses are pure, differentiable functions of the projection tensors; mining
is a hard (non-differentiable) index selection driven only by the guidance
matrices.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

REDUCTIONS = ("mean", "sum")


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ValueError(f"temperature must be > 0, got {tau}")


@dataclass(frozen=True)
class ProjectionBatch:
    """Per-modality projection matrices for one training batch.

    Rows of ``z_inertial`` and ``z_skeleton`` index the same underlying
    samples.
    """

    z_inertial: torch.Tensor
    z_skeleton: torch.Tensor

    def __post_init__(self):
        zi, zs = self.z_inertial, self.z_skeleton
        if zi.ndim != 2 or zs.ndim != 2 or zi.shape != zs.shape:
            raise ValueError(
                f"projection matrices must share one N x d shape, got "
                f"{tuple(zi.shape)} and {tuple(zs.shape)}"
            )
        if not (torch.isfinite(zi).all() and torch.isfinite(zs).all()):
            raise ValueError("projections contain non-finite entries")

    @property
    def batch_size(self) -> int:
        return self.z_inertial.shape[0]


@dataclass(frozen=True)
class GuidanceSimilarity:
    """Frozen-encoder intra-modality cosine similarity matrices."""

    s_inertial: torch.Tensor
    s_skeleton: torch.Tensor

    def __post_init__(self):
        for name, s in (("s_inertial", self.s_inertial), ("s_skeleton", self.s_skeleton)):
            if s.ndim != 2 or s.shape[0] != s.shape[1]:
                raise ValueError(f"{name} must be square, got {tuple(s.shape)}")
            if s.shape != self.s_inertial.shape:
                raise ValueError("guidance matrices must share one shape")
            if (s - s.T).abs().max() > 1e-6:
                raise ValueError(f"{name} is not symmetric")
            if (s.diagonal() - 1).abs().max() > 1e-6:
                raise ValueError(f"{name} diagonal must be 1")
            if s.min() < -1 - 1e-6 or s.max() > 1 + 1e-6:
                raise ValueError(f"{name} entries must lie in [-1, 1]")

    @property
    def batch_size(self) -> int:
        return self.s_inertial.shape[0]


@dataclass(frozen=True)
class AnchorSets:
    """Per-anchor index sets for one anchor modality.

    ``cross_pos[j]`` indexes other-modality embeddings (always starts with j,
    the natural positive), ``intra_pos[j]`` same-modality embeddings; the
    negative lists are the index complement of everything mined for j.
    """

    cross_pos: tuple[np.ndarray, ...]
    intra_pos: tuple[np.ndarray, ...]
    cross_neg: tuple[np.ndarray, ...]
    intra_neg: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class MiningSets:
    inertial: AnchorSets
    skeleton: AnchorSets


def cosine_similarity_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise cosine similarities between rows of ``a`` (N x d) and ``b`` (M x d).

    All-zero rows map to similarity 0 by convention, which keeps degenerate
    early-training states NaN-free.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(
            f"expected matching feature dims, got {tuple(a.shape)} and {tuple(b.shape)}"
        )
    return F.normalize(a, dim=1) @ F.normalize(b, dim=1).T


def nt_xent(z1: torch.Tensor, z2: torch.Tensor, tau: float) -> torch.Tensor:
    """Normalized-temperature cross entropy over 2N augmented views.

    ``z1[j]`` and ``z2[j]`` are the two views of sample j; each of the 2N
    views is an anchor whose positive is its counterpart and whose negatives
    are the remaining 2N - 2 views. Returns the mean over anchors.
    """
    _check_tau(tau)
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ValueError(f"views must share one N x d shape, got {tuple(z1.shape)} and {tuple(z2.shape)}")
    n = z1.shape[0]
    if n < 2:
        raise ValueError("nt_xent needs at least 2 samples (no negatives otherwise)")
    z = torch.cat([z1, z2], dim=0)
    sim = torch.exp(cosine_similarity_matrix(z, z) / tau)
    pos = torch.cat([sim.diagonal(offset=n)[:n], sim.diagonal(offset=-n)[:n]])
    denom = sim.sum(dim=1) - sim.diagonal()
    return -(torch.log(pos / denom)).mean()


def _direction_loss(exp_cross: torch.Tensor, exp_intra: torch.Tensor,
                    sets: AnchorSets, use_intra_negatives: bool) -> torch.Tensor:
    n = exp_cross.shape[0]
    cpos = _mask(sets.cross_pos, n, exp_cross)
    ipos = _mask(sets.intra_pos, n, exp_cross)
    cneg = _mask(sets.cross_neg, n, exp_cross)
    num = (exp_cross * cpos).sum(dim=1) + (exp_intra * ipos).sum(dim=1)
    den = num + (exp_cross * cneg).sum(dim=1)
    if use_intra_negatives:
        den = den + (exp_intra * _mask(sets.intra_neg, n, exp_cross)).sum(dim=1)
    return -torch.log(num / den)


def _mask(index_lists, n: int, like: torch.Tensor) -> torch.Tensor:
    mask = torch.zeros(n, n, dtype=like.dtype, device=like.device)
    for j, idx in enumerate(index_lists):
        if len(idx):
            mask[j, torch.as_tensor(np.asarray(idx), device=like.device)] = 1
    return mask


def _natural_sets(n: int) -> AnchorSets:
    empty = np.empty(0, dtype=np.intp)
    allk = np.arange(n, dtype=np.intp)
    return AnchorSets(
        cross_pos=tuple(np.array([j], dtype=np.intp) for j in range(n)),
        intra_pos=tuple(empty for _ in range(n)),
        cross_neg=tuple(np.delete(allk, j) for j in range(n)),
        intra_neg=tuple(empty for _ in range(n)),
    )


def _paired_terms(batch: ProjectionBatch, tau: float, inertial_sets: AnchorSets,
                  skeleton_sets: AnchorSets, use_intra_negatives: bool):
    zi, zs = batch.z_inertial, batch.z_skeleton
    exp_cross = torch.exp(cosine_similarity_matrix(zi, zs) / tau)
    exp_ii = torch.exp(cosine_similarity_matrix(zi, zi) / tau)
    exp_ss = torch.exp(cosine_similarity_matrix(zs, zs) / tau)
    loss_i = _direction_loss(exp_cross, exp_ii, inertial_sets, use_intra_negatives)
    loss_s = _direction_loss(exp_cross.T, exp_ss, skeleton_sets, use_intra_negatives)
    return loss_i, loss_s


def _paired_loss(batch: ProjectionBatch, tau: float, inertial_sets: AnchorSets,
                 skeleton_sets: AnchorSets, use_intra_negatives: bool,
                 reduction: str, return_terms: bool = False):
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")
    loss_i, loss_s = _paired_terms(batch, tau, inertial_sets, skeleton_sets, use_intra_negatives)
    total = (loss_i + loss_s).sum()
    loss = total / batch.batch_size if reduction == "mean" else total
    return (loss, loss_i, loss_s) if return_terms else loss


def cmc_loss(batch: ProjectionBatch, tau: float, reduction: str = "mean",
             return_terms: bool = False):
    """Two-direction InfoNCE between the modalities of each batch sample.

    For each anchor the positive is the other modality of the same sample and
    the negatives are the other modality of every other sample. The anchor
    sum over both directions is divided by N under the default mean
    reduction; ``reduction="sum"`` returns the raw accumulated total. With
    ``return_terms`` the per-anchor, per-direction loss vectors come back
    alongside the scalar (for training diagnostics).
    """
    _check_tau(tau)
    sets = _natural_sets(batch.batch_size)
    return _paired_loss(batch, tau, sets, sets, use_intra_negatives=False,
                        reduction=reduction, return_terms=return_terms)


def topk_offdiagonal(matrix: np.ndarray, k: int) -> list[np.ndarray]:
    """Indices of the k largest off-diagonal entries of each row.

    Ties break toward lower indices; results are deterministic.
    """
    n = matrix.shape[0]
    out = []
    for j in range(n):
        row = matrix[j].copy()
        row[j] = -np.inf
        order = np.argsort(-row, kind="stable")
        out.append(np.sort(order[:k]).astype(np.intp) if k else np.empty(0, dtype=np.intp))
    return out


def mine_sets(guidance: GuidanceSimilarity, k: int) -> MiningSets:
    """Build per-anchor positive/negative index sets from guidance similarities.

    For each anchor j, the k most similar other samples under each modality's
    guidance matrix are mined. The anchor's cross-modal positives are the
    natural positive j plus the other-modality top-k; its intra-modal
    positives are the same-modality top-k. Both negative lists are the index
    complement of j and of everything mined (so mined indices never reappear
    as negatives of either kind).
    """
    n = guidance.batch_size
    if not 0 <= k <= n - 1:
        raise ValueError(f"k must be in [0, {n - 1}] for a batch of {n}, got {k}")
    top_i = topk_offdiagonal(guidance.s_inertial.detach().cpu().numpy(), k)
    top_s = topk_offdiagonal(guidance.s_skeleton.detach().cpu().numpy(), k)
    allk = np.arange(n, dtype=np.intp)

    def build(cross_top, intra_top) -> AnchorSets:
        cross_pos, intra_pos, cross_neg, intra_neg = [], [], [], []
        for j in range(n):
            mined = np.union1d(cross_top[j], intra_top[j])
            rest = np.setdiff1d(allk, np.append(mined, j), assume_unique=False)
            cross_pos.append(np.append(np.intp(j), cross_top[j]))
            intra_pos.append(intra_top[j])
            cross_neg.append(rest)
            intra_neg.append(rest.copy())
        return AnchorSets(tuple(cross_pos), tuple(intra_pos), tuple(cross_neg), tuple(intra_neg))

    return MiningSets(inertial=build(top_s, top_i), skeleton=build(top_i, top_s))


def cmkm_loss(batch: ProjectionBatch, guidance: GuidanceSimilarity, k: int, tau: float,
              use_intra_negatives: bool = True, reduction: str = "mean",
              sets: MiningSets | None = None, return_terms: bool = False):
    """Mined-positive contrastive loss over both modality directions.

    Per anchor the numerator sums delta over the mined positive set (both
    modalities); the denominator adds the cross-modal negatives and, when
    ``use_intra_negatives`` is set, the intra-modality negatives. With k=0
    and intra negatives disabled this reduces exactly to :func:`cmc_loss`.
    """
    _check_tau(tau)
    n = batch.batch_size
    if guidance.batch_size != n:
        raise ValueError(
            f"guidance covers {guidance.batch_size} samples but batch has {n}"
        )
    if n < 2 and (k >= 1 or use_intra_negatives):
        raise ValueError("mined positives or intra negatives need a batch of at least 2")
    if sets is None:
        sets = mine_sets(guidance, k)
    if k >= n - 1 and not use_intra_negatives:
        warnings.warn(
            "every sample is mined as a positive and no negatives remain; "
            "the loss is identically 0",
            RuntimeWarning,
            stacklevel=2,
        )
    return _paired_loss(batch, tau, sets.inertial, sets.skeleton,
                        use_intra_negatives=use_intra_negatives, reduction=reduction,
                        return_terms=return_terms)


def guidance_from_encoders(frozen_inertial, frozen_skeleton,
                           inertial_batch: torch.Tensor,
                           skeleton_batch: torch.Tensor) -> GuidanceSimilarity:
    """Encode an augmented batch with the frozen unimodal encoders and return
    the intra-modality cosine similarity matrices.

    The encoders must be in evaluation mode (their projection heads were
    discarded after unimodal pre-training); no gradients flow through them.
    """
    for name, enc in (("inertial", frozen_inertial), ("skeleton", frozen_skeleton)):
        if enc.training:
            raise ValueError(f"frozen {name} guidance encoder must be in evaluation mode")
    with torch.no_grad():
        feats_i = frozen_inertial(inertial_batch)
        feats_s = frozen_skeleton(skeleton_batch)
        s_i = cosine_similarity_matrix(feats_i, feats_i)
        s_s = cosine_similarity_matrix(feats_s, feats_s)
        # guard the unit-diagonal/symmetry invariants against fp round-off
        s_i = ((s_i + s_i.T) / 2).fill_diagonal_(1.0).clamp(-1.0, 1.0)
        s_s = ((s_s + s_s.T) / 2).fill_diagonal_(1.0).clamp(-1.0, 1.0)
    return GuidanceSimilarity(s_inertial=s_i, s_skeleton=s_s)
