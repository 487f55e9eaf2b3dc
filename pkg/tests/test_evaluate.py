import numpy as np
import pytest
import torch

from helpers import tiny_dataset, tiny_inertial_config, tiny_skeleton_config
from oracles import knn_oracle

from mmhar.data import make_split, SplitSpec
from mmhar.encoders import InertialEncoder, InertialEncoderConfig, SkeletonEncoder, SkeletonEncoderConfig
from mmhar.evaluate import (
    EvalResult,
    compute_metric,
    confidence_half_width,
    export_embeddings,
    knn_predict,
    linear_eval,
    retrieve,
    semi_supervised_sweep,
)
from mmhar.train import ConfigurationError, state_fingerprint


def tiny_encoders(seed=0):
    torch.manual_seed(seed)
    return {
        "inertial": InertialEncoder(tiny_inertial_config()).eval(),
        "skeleton": SkeletonEncoder(tiny_skeleton_config()).eval(),
    }


@pytest.fixture(scope="module")
def split():
    samples = tiny_dataset(num_classes=3, per_class=10, timesteps=10, noise=0.05, seed=0)
    return make_split(samples, SplitSpec("utd_cross_subject"))


class TestComputeMetric:
    def test_all_correct_is_one_for_both_metrics(self):
        assert compute_metric([0, 1, 2], [0, 1, 2], "accuracy") == 1.0
        assert compute_metric([0, 1, 2], [0, 1, 2], "f1_macro") == 1.0

    def test_hand_computed_binary_case(self):
        predictions, labels = [1, 1, 0, 0], [1, 0, 1, 0]
        assert compute_metric(predictions, labels, "accuracy") == 0.5
        assert compute_metric(predictions, labels, "f1_macro") == pytest.approx(0.5)

    def test_single_sample(self):
        assert compute_metric([2], [2], "accuracy") == 1.0

    def test_absent_classes_count_as_zero(self):
        # classes 2 and 3 appear nowhere: macro averages over all four
        value = compute_metric([0, 1], [0, 1], "f1_macro", num_classes=4)
        assert value == pytest.approx(0.5)

    def test_accuracy_is_one_minus_hamming_error(self):
        rng = np.random.default_rng(0)
        predictions = rng.integers(0, 4, size=50)
        labels = rng.integers(0, 4, size=50)
        hamming = float(np.mean(predictions != labels))
        assert compute_metric(predictions, labels, "accuracy") == pytest.approx(1.0 - hamming)

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError, match="equal length"):
            compute_metric([0, 1], [0], "accuracy")

    def test_rejects_unknown_metric(self):
        with pytest.raises(ValueError, match="unknown metric"):
            compute_metric([0], [0], "auc")


class TestConfidenceHalfWidth:
    def test_matches_t_table_for_ten_repeats(self):
        values = np.linspace(0.5, 0.6, 10)
        half = confidence_half_width(values)
        # t(0.975, df=9) = 2.2622, std computed with ddof=1
        expected = 2.2621571627 * np.std(values, ddof=1) / np.sqrt(10)
        assert half == pytest.approx(expected, rel=1e-6)

    def test_single_value_has_zero_width(self):
        assert confidence_half_width([0.7]) == 0.0


class TestKnnPredict:
    def test_self_retrieval_is_perfect(self):
        rng = np.random.default_rng(1)
        features = rng.standard_normal((12, 6)).astype(np.float32)
        labels = rng.integers(0, 3, size=12)
        predictions = knn_predict(features, labels, features, k=1)
        np.testing.assert_array_equal(predictions, labels)

    def test_orthogonal_exact_match(self):
        train = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        labels = np.array([5, 9])
        predictions = knn_predict(train, labels, np.array([[1.0, 0.0]], dtype=np.float32), k=1)
        assert predictions.tolist() == [5]

    def test_matches_exhaustive_scan_oracle(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            n, m, d = rng.integers(2, 15), rng.integers(1, 10), rng.integers(2, 6)
            train = rng.standard_normal((n, d))
            labels = rng.integers(0, 4, size=n)
            test = rng.standard_normal((m, d))
            k = int(rng.integers(1, n + 1))
            np.testing.assert_array_equal(
                knn_predict(train, labels, test, k), knn_oracle(train, labels, test, k)
            )

    def test_rejects_empty_train(self):
        with pytest.raises(ValueError, match="non-empty"):
            knn_predict(np.zeros((0, 3)), np.zeros(0, dtype=int), np.zeros((1, 3)), 1)


class TestRetrieve:
    def test_self_matched_sets_score_one(self, split):
        train, _ = split
        encoder = tiny_encoders()["inertial"]
        result = retrieve(encoder, "inertial", train, train, k=1)
        assert result.value == 1.0
        assert result.protocol == "retrieval"

    def test_shuffle_invariance(self, split):
        train, test = split
        encoder = tiny_encoders()["skeleton"]
        base = retrieve(encoder, "skeleton", train, test, k=1).value
        shuffled = list(test)
        np.random.default_rng(3).shuffle(shuffled)
        assert retrieve(encoder, "skeleton", train, shuffled, k=1).value == base

    def test_does_not_mutate_encoder(self, split):
        train, test = split
        encoder = tiny_encoders()["inertial"]
        before = state_fingerprint(encoder)
        retrieve(encoder, "inertial", train, test, k=3)
        assert state_fingerprint(encoder) == before


class TestLinearEval:
    def test_smoke_and_frozen_contract(self, split):
        train, test = split
        encoders = tiny_encoders()
        before = {m: state_fingerprint(e) for m, e in encoders.items()}
        result = linear_eval(encoders, train, test, num_classes=3, epochs=3, seed=0)
        assert {m: state_fingerprint(e) for m, e in encoders.items()} == before
        assert 0.0 <= result.value <= 1.0
        assert len(result.per_class) == 3

    def test_unimodal_mode_trains_linear_head(self, split):
        train, test = split
        encoders = {"inertial": tiny_encoders()["inertial"]}
        result = linear_eval(encoders, train, test, num_classes=3, epochs=3, seed=0)
        assert result.config_echo["modalities"] == ["inertial"]

    def test_class_count_mismatch_rejected(self, split):
        train, test = split
        with pytest.raises(ConfigurationError, match="class count"):
            linear_eval(tiny_encoders(), train, test, num_classes=2, epochs=1)

    def test_deterministic(self, split):
        train, test = split
        a = linear_eval(tiny_encoders(), train, test, num_classes=3, epochs=3, seed=5).value
        b = linear_eval(tiny_encoders(), train, test, num_classes=3, epochs=3, seed=5).value
        assert a == b

    def test_test_order_shuffle_leaves_metric_unchanged(self, split):
        train, test = split
        base = linear_eval(tiny_encoders(), train, test, num_classes=3, epochs=3, seed=5).value
        shuffled = list(test)
        np.random.default_rng(9).shuffle(shuffled)
        other = linear_eval(tiny_encoders(), train, shuffled, num_classes=3, epochs=3, seed=5).value
        assert other == base


class TestSemiSupervisedSweep:
    def test_full_fraction_single_repeat_equals_linear_eval(self, split):
        train, test = split
        encoders = tiny_encoders()
        sweep = semi_supervised_sweep(
            encoders, train, test, num_classes=3, fractions=(1.0,), repeats=1,
            seed=2, epochs=3, include_baselines=False,
        )
        assert len(sweep) == 1
        probe = linear_eval(encoders, subsampled(train, 2), test, num_classes=3, epochs=3, seed=2)
        assert sweep[0].value == probe.value
        assert sweep[0].repeats == (probe.value,)

    def test_repeats_and_ci_are_reproducible(self, split):
        train, test = split
        encoders = tiny_encoders()
        kwargs = dict(fractions=(0.5,), repeats=2, seed=3, epochs=2, include_baselines=False)
        a = semi_supervised_sweep(encoders, train, test, 3, **kwargs)
        b = semi_supervised_sweep(encoders, train, test, 3, **kwargs)
        assert a[0].repeats == b[0].repeats
        assert a[0].ci_half_width == b[0].ci_half_width

    def test_baselines_produce_three_curves_plus_full_reference(self, split):
        train, test = split
        sweep = semi_supervised_sweep(
            tiny_encoders(), train, test, num_classes=3, fractions=(0.5,), repeats=1,
            seed=0, epochs=2, include_baselines=True, supervised_epochs=1,
        )
        assert [r.protocol for r in sweep] == [
            "semi_supervised", "semi_supervised_supervised", "semi_supervised_random",
            "supervised_full",
        ]
        assert sweep[-1].config_echo["fraction"] == 1.0

    def test_rejects_fraction_below_one_sample(self, split):
        train, test = split
        with pytest.raises(ValueError, match="yields no labeled samples"):
            semi_supervised_sweep(tiny_encoders(), train, test, 3, fractions=(0.001,), repeats=1)


def subsampled(train, seed):
    from mmhar.data import subsample_labels

    return subsample_labels(train, 1.0, seed=seed)


class TestEvalResult:
    def test_rejects_out_of_range_value(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            EvalResult(protocol="x", metric_name="accuracy", value=1.2)


class TestExportEmbeddings:
    def test_shapes_and_concatenated_width(self, tmp_path, split):
        train, _ = split
        torch.manual_seed(0)
        encoders = {
            "inertial": InertialEncoder(InertialEncoderConfig(in_channels=6)).eval(),
            "skeleton": SkeletonEncoder(SkeletonEncoderConfig(num_joints=4, coord_channels=2)).eval(),
        }
        written = export_embeddings(encoders, train[:3], tmp_path)
        names = {path.name for path in written}
        assert names == {
            "inertial_embeddings.csv", "skeleton_embeddings.csv", "multimodal_embeddings.csv",
        }
        inertial = (tmp_path / "inertial_embeddings.csv").read_text().splitlines()
        assert len(inertial) == 4  # header + 3 samples
        assert inertial[0].split(",")[:2] == ["feat_0", "feat_1"]
        assert len(inertial[1].split(",")) == 128 + 1
        multi = (tmp_path / "multimodal_embeddings.csv").read_text().splitlines()
        assert len(multi[1].split(",")) == 128 + 512 + 1

    def test_re_export_is_bit_identical(self, tmp_path, split):
        train, _ = split
        encoders = {"inertial": tiny_encoders()["inertial"]}
        first = export_embeddings(encoders, train[:4], tmp_path / "a")[0].read_text()
        second = export_embeddings(encoders, train[:4], tmp_path / "b")[0].read_text()
        assert first == second

    def test_label_column_holds_labels(self, tmp_path, split):
        train, _ = split
        encoders = {"inertial": tiny_encoders()["inertial"]}
        path = export_embeddings(encoders, train[:5], tmp_path)[0]
        labels = [int(line.rsplit(",", 1)[1]) for line in path.read_text().splitlines()[1:]]
        assert labels == [s.label for s in train[:5]]
