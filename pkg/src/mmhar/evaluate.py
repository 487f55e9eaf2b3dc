"""Downstream evaluation protocols for pre-trained encoders.

Linear probing trains fusion layers plus a linear classifier on frozen
encoder features; retrieval classifies each test sample by its cosine-nearest
training neighbors; the sweep utilities drive the mining-depth ablation and
the label-fraction study with repeat-based confidence intervals.

Encoders are never mutated here: features are extracted once in evaluation
mode and only the probe heads are trained.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import stats
from torch import nn

from .contrastive import cosine_similarity_matrix
from .data import MultimodalSample, stack_modalities, subsample_labels
from .encoders import FusionClassifier, FusionHeadConfig
from .train import (
    ConfigurationError,
    OptimizerSchedule,
    PlateauScheduler,
    PretrainPlan,
    _batches,
    build_encoder,
    pretrain_multimodal,
    train_supervised,
)

METRICS = ("accuracy", "f1_macro")

SEMI_SUPERVISED_FRACTIONS = (0.01, 0.02, 0.05, 0.10, 0.25, 0.50)


@dataclass(frozen=True)
class EvalResult:
    """One protocol outcome; ``repeats`` holds per-run values (and the 95%
    confidence half-width) for repeated protocols."""

    protocol: str
    metric_name: str
    value: float
    per_class: tuple[float, ...] | None = None
    config_echo: dict = field(default_factory=dict)
    repeats: tuple[float, ...] | None = None
    ci_half_width: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"metric value must be in [0, 1], got {self.value}")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def per_class_f1(predictions: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """F1 per class; classes absent from both predictions and labels score 0."""
    scores = np.zeros(num_classes)
    for k in range(num_classes):
        tp = int(np.sum((predictions == k) & (labels == k)))
        fp = int(np.sum((predictions == k) & (labels != k)))
        fn = int(np.sum((predictions != k) & (labels == k)))
        denom = 2 * tp + fp + fn
        scores[k] = 0.0 if denom == 0 else 2 * tp / denom
    return scores


def compute_metric(predictions, labels, metric_name: str, num_classes: int | None = None) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(
            f"predictions and labels must have equal length, got {predictions.shape} vs {labels.shape}"
        )
    if predictions.size < 1:
        raise ValueError("metric needs at least one prediction")
    if metric_name == "accuracy":
        return float(np.mean(predictions == labels))
    if metric_name == "f1_macro":
        if num_classes is None:
            num_classes = int(max(predictions.max(), labels.max())) + 1
        return float(per_class_f1(predictions, labels, num_classes).mean())
    raise ValueError(f"unknown metric {metric_name!r}, expected one of {METRICS}")


def confidence_half_width(values, confidence: float = 0.95) -> float:
    """Student-t half width of the mean's confidence interval."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    quantile = stats.t.ppf(0.5 + confidence / 2, df=values.size - 1)
    return float(quantile * values.std(ddof=1) / np.sqrt(values.size))


# ---------------------------------------------------------------------------
# Feature extraction and probe heads
# ---------------------------------------------------------------------------


def extract_features(encoder: nn.Module, array: np.ndarray, batch_size: int = 256) -> torch.Tensor:
    """Eval-mode, no-grad forward over the whole array."""
    encoder.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(array), batch_size):
            chunks.append(encoder(torch.from_numpy(array[start:start + batch_size])))
    return torch.cat(chunks) if chunks else torch.zeros((0, encoder.feature_dim))


def _modality_arrays(samples: list[MultimodalSample]) -> dict[str, np.ndarray]:
    inertial, skeleton, labels = stack_modalities(samples)
    return {"inertial": inertial, "skeleton": skeleton, "labels": labels}


def _features_for(encoders: dict[str, nn.Module], samples: list[MultimodalSample]):
    arrays = _modality_arrays(samples)
    feats = {m: extract_features(enc, arrays[m]) for m, enc in encoders.items() if enc is not None}
    return feats, arrays["labels"]


class _LinearProbe(nn.Module):
    def __init__(self, in_dim: int, num_classes: int):
        super().__init__()
        self.classifier = nn.Linear(in_dim, num_classes)

    def forward(self, feats: dict[str, torch.Tensor]) -> torch.Tensor:
        (only,) = feats.values()
        return self.classifier(only)


class _FusionProbe(nn.Module):
    def __init__(self, inertial_dim: int, skeleton_dim: int, fusion_dim: int, num_classes: int):
        super().__init__()
        self.fusion = FusionClassifier(
            FusionHeadConfig(
                classifier_classes=num_classes,
                inertial_dim=inertial_dim,
                skeleton_dim=skeleton_dim,
                per_modality_out=fusion_dim,
            )
        )

    def forward(self, feats: dict[str, torch.Tensor]) -> torch.Tensor:
        return self.fusion(feats["inertial"], feats["skeleton"])


def _train_probe(train_feats: dict[str, torch.Tensor], train_labels: np.ndarray,
                 num_classes: int, epochs: int, batch_size: int, seed: int,
                 schedule: OptimizerSchedule, fusion_dim: int) -> nn.Module:
    n = len(train_labels)
    multimodal = len(train_feats) == 2
    if multimodal and n < 2:
        raise ConfigurationError("the fusion probe needs at least 2 labeled samples (batch norm)")
    torch.manual_seed(seed)
    if multimodal:
        probe: nn.Module = _FusionProbe(
            train_feats["inertial"].shape[1], train_feats["skeleton"].shape[1],
            fusion_dim, num_classes,
        )
    else:
        (only,) = train_feats.values()
        probe = _LinearProbe(only.shape[1], num_classes)
    optimizer = torch.optim.Adam(probe.parameters(), lr=schedule.lr)
    tracker = PlateauScheduler(schedule)
    criterion = nn.CrossEntropyLoss()
    rng = np.random.default_rng(seed)
    y = torch.from_numpy(train_labels)
    probe.train()
    for _ in range(epochs):
        total, count = 0.0, 0
        for idx in _batches(n, batch_size, rng):
            if multimodal and len(idx) < 2:
                continue
            logits = probe({m: f[idx] for m, f in train_feats.items()})
            loss = criterion(logits, y[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(idx)
            count += len(idx)
        lr = tracker.step(total / max(count, 1))
        for group in optimizer.param_groups:
            group["lr"] = lr
    return probe


def _probe_predictions(probe: nn.Module, feats: dict[str, torch.Tensor]) -> np.ndarray:
    probe.eval()
    with torch.no_grad():
        return probe(feats).argmax(dim=1).cpu().numpy()


# ---------------------------------------------------------------------------
# Protocols
# ---------------------------------------------------------------------------


def linear_eval(encoders: dict[str, nn.Module], train_samples: list[MultimodalSample],
                test_samples: list[MultimodalSample], num_classes: int, epochs: int = 100,
                batch_size: int = 64, seed: int = 0, metric: str = "accuracy",
                schedule: OptimizerSchedule | None = None, fusion_dim: int = 256,
                protocol: str = "linear_eval") -> EvalResult:
    """Frozen-feature probing: train fusion layers plus a linear classifier
    (or a single linear classifier in unimodal mode) and score the test set."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    labels = [s.label for s in train_samples + test_samples]
    if any(label is None for label in labels):
        raise ConfigurationError("linear evaluation requires labels on every sample")
    if any(label >= num_classes for label in labels):
        raise ConfigurationError("sample labels exceed the configured class count")
    schedule = schedule or OptimizerSchedule()
    train_feats, train_labels = _features_for(encoders, train_samples)
    test_feats, test_labels = _features_for(encoders, test_samples)
    probe = _train_probe(train_feats, train_labels, num_classes, epochs, batch_size,
                         seed, schedule, fusion_dim)
    predictions = _probe_predictions(probe, test_feats)
    value = compute_metric(predictions, test_labels, metric, num_classes)
    return EvalResult(
        protocol=protocol,
        metric_name=metric,
        value=value,
        per_class=tuple(per_class_f1(predictions, test_labels, num_classes)),
        config_echo={
            "modalities": sorted(train_feats), "num_classes": num_classes,
            "epochs": epochs, "batch_size": batch_size, "seed": seed,
        },
    )


def knn_predict(train_features: np.ndarray, train_labels: np.ndarray,
                test_features: np.ndarray, k: int = 1) -> np.ndarray:
    """Cosine k-nearest-neighbor label prediction.

    Neighbors are ranked by similarity with ties broken toward the smallest
    training index; vote ties go to the label of the best-ranked neighbor
    among the tied labels.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(train_features) == 0:
        raise ValueError("retrieval needs a non-empty training set")
    sims = (
        cosine_similarity_matrix(
            torch.from_numpy(np.asarray(test_features, dtype=np.float64)),
            torch.from_numpy(np.asarray(train_features, dtype=np.float64)),
        )
        .numpy()
    )
    k = min(k, len(train_features))
    out = np.empty(len(test_features), dtype=np.int64)
    for i in range(len(test_features)):
        ranked = np.argsort(-sims[i], kind="stable")[:k]
        votes = Counter(int(train_labels[j]) for j in ranked)
        top = max(votes.values())
        tied = {label for label, c in votes.items() if c == top}
        out[i] = next(int(train_labels[j]) for j in ranked if int(train_labels[j]) in tied)
    return out


def retrieve(encoder: nn.Module, modality: str, train_samples: list[MultimodalSample],
             test_samples: list[MultimodalSample], k: int = 1,
             num_classes: int | None = None, metric: str = "accuracy") -> EvalResult:
    """Activity retrieval: label each test sample from its cosine-nearest
    training features (pre-projection encoder outputs)."""
    if modality not in ("inertial", "skeleton"):
        raise ValueError(f"unknown modality {modality!r}")
    if not train_samples:
        raise ValueError("retrieval needs a non-empty training set")
    train_arrays = _modality_arrays(train_samples)
    test_arrays = _modality_arrays(test_samples)
    train_feats = extract_features(encoder, train_arrays[modality]).numpy()
    test_feats = extract_features(encoder, test_arrays[modality]).numpy()
    predictions = knn_predict(train_feats, train_arrays["labels"], test_feats, k)
    value = compute_metric(predictions, test_arrays["labels"], metric, num_classes)
    return EvalResult(
        protocol="retrieval",
        metric_name=metric,
        value=value,
        config_echo={"modality": modality, "k": k},
    )


def topk_ablation(pretrain_samples: list[MultimodalSample], train_samples: list[MultimodalSample],
                  test_samples: list[MultimodalSample], guidance_checkpoints: tuple[str, str],
                  num_classes: int, k_values=(0, 1, 2, 3, 4, 5), tau: float = 0.1,
                  epochs: int = 100, batch_size: int = 64, seed: int = 0,
                  eval_epochs: int = 100, metric: str = "accuracy",
                  schedule: OptimizerSchedule | None = None, **pretrain_kwargs) -> list[EvalResult]:
    """Mining-depth sweep: pre-train with each k (k=0 keeps intra-modality
    negatives only) and linear-probe the resulting encoders."""
    results = []
    for k in k_values:
        plan = PretrainPlan(
            framework="cmc_cmkm", epochs=epochs, batch_size=batch_size, tau=tau,
            top_k=k, seed=seed, guidance_checkpoints=tuple(guidance_checkpoints),
            use_intra_negatives=True,
        )
        pre = pretrain_multimodal(plan, pretrain_samples, schedule=schedule, **pretrain_kwargs)
        encoders = {
            "inertial": _rebuilt_encoder(pre.best_checkpoints["inertial"]),
            "skeleton": _rebuilt_encoder(pre.best_checkpoints["skeleton"]),
        }
        probe = linear_eval(encoders, train_samples, test_samples, num_classes,
                            epochs=eval_epochs, batch_size=batch_size, seed=seed,
                            metric=metric, protocol="topk_ablation")
        echo = dict(probe.config_echo, top_k=k, tau=tau, pretrain_epochs=epochs)
        results.append(
            EvalResult(protocol="topk_ablation", metric_name=metric, value=probe.value,
                       per_class=probe.per_class, config_echo=echo)
        )
    return results


def _rebuilt_encoder(checkpoint_doc: dict) -> nn.Module:
    encoder = build_encoder(checkpoint_doc["configs"]["encoder"])
    encoder.load_state_dict(checkpoint_doc["state"]["encoder"])
    encoder.eval()
    return encoder


def _random_encoders_like(encoders: dict[str, nn.Module], seed: int) -> dict[str, nn.Module]:
    torch.manual_seed(seed)
    fresh = {}
    for modality, encoder in encoders.items():
        fresh[modality] = type(encoder)(encoder.config)
        fresh[modality].eval()
    return fresh


def semi_supervised_sweep(encoders: dict[str, nn.Module], train_samples: list[MultimodalSample],
                          test_samples: list[MultimodalSample], num_classes: int,
                          fractions=SEMI_SUPERVISED_FRACTIONS, repeats: int = 10,
                          seed: int = 0, epochs: int = 100, batch_size: int = 64,
                          metric: str = "accuracy", include_baselines: bool = True,
                          supervised_epochs: int | None = None,
                          schedule: OptimizerSchedule | None = None) -> list[EvalResult]:
    """Label-fraction study with repeated random subsets.

    For every fraction p the probe is re-trained ``repeats`` times on
    independent label subsets (seeds ``seed + r``) and the mean plus the 95%
    Student-t half width are reported. The supervised and random-frozen
    baselines reuse the same subsets so the curves are directly comparable;
    a single fully supervised run on the complete training split is appended
    as the p=100% reference.
    """
    for fraction in fractions:
        if round(fraction * len(train_samples)) < 1:
            raise ValueError(
                f"fraction {fraction} yields no labeled samples on {len(train_samples)} training samples"
            )
    supervised_epochs = supervised_epochs or epochs
    results = []
    for fraction in fractions:
        ssl_vals, sup_vals, rand_vals = [], [], []
        for r in range(repeats):
            run_seed = seed + r
            subset = subsample_labels(train_samples, fraction, seed=run_seed)
            ssl_vals.append(
                linear_eval(encoders, subset, test_samples, num_classes, epochs=epochs,
                            batch_size=batch_size, seed=run_seed, metric=metric,
                            schedule=schedule, protocol="semi_supervised").value
            )
            if include_baselines:
                sup = train_supervised(subset, num_classes, supervised_epochs,
                                       batch_size=batch_size, seed=run_seed, schedule=schedule)
                sup_vals.append(
                    supervised_score(sup.best_checkpoints["supervised"], test_samples, metric, num_classes)
                )
                rand_vals.append(
                    linear_eval(_random_encoders_like(encoders, run_seed + 7919), subset,
                                test_samples, num_classes, epochs=epochs, batch_size=batch_size,
                                seed=run_seed, metric=metric, schedule=schedule,
                                protocol="semi_supervised_random").value
                )
        def bundle(protocol, values):
            return EvalResult(
                protocol=protocol, metric_name=metric, value=float(np.mean(values)),
                config_echo={"fraction": fraction, "repeats": repeats, "seed": seed},
                repeats=tuple(values), ci_half_width=confidence_half_width(values),
            )
        results.append(bundle("semi_supervised", ssl_vals))
        if include_baselines:
            results.append(bundle("semi_supervised_supervised", sup_vals))
            results.append(bundle("semi_supervised_random", rand_vals))
    if include_baselines:
        full = train_supervised(train_samples, num_classes, supervised_epochs,
                                batch_size=batch_size, seed=seed, schedule=schedule)
        results.append(
            EvalResult(
                protocol="supervised_full",
                metric_name=metric,
                value=supervised_score(full.best_checkpoints["supervised"], test_samples,
                                       metric, num_classes),
                config_echo={"fraction": 1.0, "repeats": 1, "seed": seed},
            )
        )
    return results


def supervised_score(checkpoint_doc: dict, samples: list[MultimodalSample], metric: str,
                     num_classes: int) -> float:
    """Score a supervised checkpoint on a labeled sample list."""
    arrays = _modality_arrays(samples)
    state = checkpoint_doc["state"]
    configs = checkpoint_doc["configs"]
    with torch.no_grad():
        if "fusion" in state:
            enc_i = build_encoder(configs["encoder_inertial"])
            enc_i.load_state_dict(state["encoder_inertial"])
            enc_s = build_encoder(configs["encoder_skeleton"])
            enc_s.load_state_dict(state["encoder_skeleton"])
            fusion_cfg = {k: v for k, v in configs["fusion"].items() if k != "type"}
            fusion = FusionClassifier(FusionHeadConfig(**fusion_cfg))
            fusion.load_state_dict(state["fusion"])
            for m in (enc_i, enc_s, fusion):
                m.eval()
            logits = fusion(
                extract_features(enc_i, arrays["inertial"]),
                extract_features(enc_s, arrays["skeleton"]),
            )
        else:
            encoder = build_encoder(configs["encoder"])
            encoder.load_state_dict(state["encoder"])
            classifier = nn.Linear(configs["classifier"]["in_dim"], configs["classifier"]["classes"])
            classifier.load_state_dict(state["classifier"])
            encoder.eval()
            classifier.eval()
            modality = "inertial" if configs["encoder"]["type"] == "inertial" else "skeleton"
            logits = classifier(extract_features(encoder, arrays[modality]))
        predictions = logits.argmax(dim=1).numpy()
    return compute_metric(predictions, arrays["labels"], metric, num_classes)


# ---------------------------------------------------------------------------
# Embedding export
# ---------------------------------------------------------------------------


def export_embeddings(encoders: dict[str, nn.Module], samples: list[MultimodalSample],
                      out_dir) -> list:
    """Write per-sample encoder features plus labels as CSV files.

    One file per available modality (``<modality>_embeddings.csv``) and, when
    both encoders are present, ``multimodal_embeddings.csv`` with the
    concatenated features. Columns are ``feat_0..feat_{d-1},label``.
    """
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feats, labels = _features_for(encoders, samples)
    tables = {m: f.numpy() for m, f in feats.items()}
    if len(tables) == 2:
        tables["multimodal"] = np.concatenate([tables["inertial"], tables["skeleton"]], axis=1)
    written = []
    for name, table in tables.items():
        path = out_dir / f"{name}_embeddings.csv"
        header = ",".join([f"feat_{i}" for i in range(table.shape[1])] + ["label"])
        with path.open("w") as fh:
            fh.write(header + "\n")
            for row, label in zip(table, labels):
                fh.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")
        written.append(path)
    return written
