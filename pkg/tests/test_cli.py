import json

import numpy as np
import pytest
import yaml
from scipy.io import savemat

from mmhar.cli import main
from mmhar.data import (
    MultimodalSample,
    generate_synthetic,
    load_manifest,
    write_dataset,
)

TINY_ENCODERS = {
    "inertial": {
        "conv_channels": [8, 16], "feature_dim": 16, "attention_blocks": 1,
        "attention_heads": 2, "attention_feedforward": 32, "attention_dropout": 0.0,
    },
    "skeleton": {
        "point_channels": [8, 4], "joint_channels": [4, 8],
        "fused_channels": [8, 16], "feature_dim": 16,
    },
    "projection_dim": 16,
    "fusion_dim": 16,
}


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    code = main([
        "generate-synthetic", "--out", str(out), "--classes", "3", "--per-class", "8",
        "--timesteps", "10", "--channels", "6", "--joints", "4", "--coords", "2",
        "--noise", "0.05", "--seed", "0",
    ])
    assert code == 0
    return out


def write_config(path, **body):
    base = {
        "dataset": {
            "manifest": str(body.pop("manifest")),
            "protocol": "custom",
            "train_subjects": [1, 3, 5, 7, 9],
            "test_subjects": [2, 4, 6, 8, 10],
            "resample_timesteps": 10,
        },
        "encoders": TINY_ENCODERS,
        "evaluation": {"epochs": 2, "batch_size": 8},
    }
    base.update(body)
    path.write_text(yaml.safe_dump(base))
    return path


@pytest.fixture(scope="module")
def unimodal_checkpoints(tmp_path_factory, dataset_dir):
    paths = {}
    for modality in ("inertial", "skeleton"):
        out = tmp_path_factory.mktemp(f"uni_{modality}")
        config = write_config(
            out / "config.yaml",
            manifest=dataset_dir / "manifest.json",
            framework=f"simclr_{modality}",
            epochs=1, batch_size=8, tau=0.1,
        )
        assert main(["pretrain-unimodal", "--config", str(config), "--out", str(out)]) == 0
        paths[modality] = out / f"simclr_{modality}_best.pt"
        assert paths[modality].exists()
    return paths


class TestGenerateAndConvert:
    def test_generated_dataset_loads(self, dataset_dir):
        manifest = load_manifest(dataset_dir / "manifest.json")
        assert len(manifest.samples) == 24
        assert manifest.num_classes == 3

    def test_convert_utd_mhad_layout(self, tmp_path):
        raw = tmp_path / "raw"
        (raw / "Inertial").mkdir(parents=True)
        (raw / "Skeleton").mkdir()
        rng = np.random.default_rng(0)
        for action, subject in [(1, 1), (2, 1), (1, 2)]:
            stem = f"a{action}_s{subject}_t1"
            savemat(raw / "Inertial" / f"{stem}_inertial.mat", {"d_iner": rng.standard_normal((30, 6))})
            savemat(raw / "Skeleton" / f"{stem}_skeleton.mat", {"d_skel": rng.standard_normal((20, 3, 40))})
        # one incomplete pair must be skipped
        savemat(raw / "Inertial" / "a3_s1_t1_inertial.mat", {"d_iner": rng.standard_normal((30, 6))})
        out = tmp_path / "canonical"
        assert main(["convert-dataset", "--format", "utd-mhad", "--src", str(raw), "--out", str(out)]) == 0
        manifest = load_manifest(out / "manifest.json")
        assert len(manifest.samples) == 3
        assert manifest.num_joints == 20 and manifest.coord_channels == 3
        assert sorted({r.label for r in manifest.samples}) == [0, 1]

    def test_convert_index_csv(self, tmp_path):
        raw = tmp_path / "raw"
        raw.mkdir()
        rng = np.random.default_rng(1)
        np.save(raw / "i0.npy", rng.standard_normal((12, 4)).astype(np.float32))
        np.save(raw / "s0.npy", rng.standard_normal((9, 3, 2)).astype(np.float32))
        (raw / "index.csv").write_text(
            "inertial_path,skeleton_path,label,subject_id,scene_id\n"
            "i0.npy,s0.npy,0,1,open\n"
        )
        out = tmp_path / "canonical"
        assert main([
            "convert-dataset", "--format", "index-csv", "--src", str(raw / "index.csv"),
            "--out", str(out), "--name", "prepared", "--num-classes", "2",
        ]) == 0
        manifest = load_manifest(out / "manifest.json")
        assert manifest.sensor_channels == 4 and manifest.num_joints == 3


class TestPretrainCommands:
    def test_missing_manifest_message(self, tmp_path, capsys):
        config = write_config(
            tmp_path / "config.yaml", manifest=tmp_path / "nowhere.json",
            framework="simclr_inertial",
        )
        assert main(["pretrain-unimodal", "--config", str(config), "--out", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert "dataset.manifest not found:" in err and "nowhere.json" in err

    def test_unimodal_writes_artifacts(self, unimodal_checkpoints, dataset_dir):
        path = unimodal_checkpoints["inertial"]
        assert path.exists()
        log = path.parent / "train_log.jsonl"
        records = [json.loads(line) for line in log.read_text().splitlines()]
        assert len(records) == 1 and records[0]["framework"] == "simclr_inertial"
        echo = yaml.safe_load((path.parent / "config_echo.yaml").read_text())
        assert echo["framework"] == "simclr_inertial"
        assert echo["batch_size"] == 8

    def test_seed_rerun_reproduces_logged_losses(self, tmp_path, dataset_dir):
        losses = []
        for run in ("a", "b"):
            out = tmp_path / run
            config = write_config(
                tmp_path / f"config_{run}.yaml", manifest=dataset_dir / "manifest.json",
                framework="simclr_inertial", epochs=2, batch_size=8, tau=0.1, seed=13,
            )
            assert main(["pretrain-unimodal", "--config", str(config), "--out", str(out)]) == 0
            records = [json.loads(line) for line in (out / "train_log.jsonl").read_text().splitlines()]
            losses.append([r["loss"] for r in records])
        assert losses[0] == losses[1]

    def test_run_is_reproducible_from_config_echo(self, tmp_path, dataset_dir):
        out_a = tmp_path / "a"
        config = write_config(
            tmp_path / "config.yaml", manifest=dataset_dir / "manifest.json",
            framework="simclr_inertial", epochs=2, batch_size=8, tau=0.1, seed=21,
        )
        assert main(["pretrain-unimodal", "--config", str(config), "--out", str(out_a)]) == 0
        out_b = tmp_path / "b"
        echo = out_a / "config_echo.yaml"
        assert main(["pretrain-unimodal", "--config", str(echo), "--out", str(out_b)]) == 0
        read = lambda p: [json.loads(l)["loss"] for l in (p / "train_log.jsonl").read_text().splitlines()]
        assert read(out_a) == read(out_b)

    def test_multimodal_cmc_smoke(self, tmp_path, dataset_dir):
        config = write_config(
            tmp_path / "config.yaml", manifest=dataset_dir / "manifest.json",
            framework="cmc", epochs=1, batch_size=8, tau=0.1,
        )
        assert main(["pretrain-multimodal", "--config", str(config), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "cmc_inertial_final.pt").exists()
        assert (tmp_path / "cmc_skeleton_best.pt").exists()

    def test_cmkm_without_guidance_reports_error(self, tmp_path, dataset_dir, capsys):
        config = write_config(
            tmp_path / "config.yaml", manifest=dataset_dir / "manifest.json",
            framework="cmc_cmkm", epochs=1, batch_size=8, tau=0.1,
        )
        assert main(["pretrain-multimodal", "--config", str(config), "--out", str(tmp_path)]) == 1
        assert "cmc_cmkm requires guidance_checkpoints" in capsys.readouterr().err

    def test_cmkm_echo_carries_tau(self, tmp_path, dataset_dir, unimodal_checkpoints):
        config = write_config(
            tmp_path / "config.yaml", manifest=dataset_dir / "manifest.json",
            framework="cmc_cmkm", epochs=1, batch_size=8, tau=0.1, top_k=1,
            guidance_checkpoints={m: str(p) for m, p in unimodal_checkpoints.items()},
        )
        assert main(["pretrain-multimodal", "--config", str(config), "--out", str(tmp_path)]) == 0
        echo = yaml.safe_load((tmp_path / "config_echo.yaml").read_text())
        assert echo["tau"] == 0.1


class TestEvaluateCommands:
    def test_retrieve_on_self_matched_sets_scores_one(self, tmp_path, unimodal_checkpoints):
        # duplicate every sample across the two split sides: the nearest
        # neighbor of each test sample is its exact train copy
        base = generate_synthetic(2, 4, timesteps=10, sensor_channels=6,
                                  num_joints=4, coord_channels=2, noise=0.05, seed=3)
        doubled = []
        for sample in base:
            doubled.append(MultimodalSample(sample.inertial, sample.skeleton, sample.label, 1, None))
            doubled.append(MultimodalSample(sample.inertial, sample.skeleton, sample.label, 2, None))
        data_dir = tmp_path / "selfmatch"
        write_dataset(doubled, data_dir, name="selfmatch", num_classes=2)
        config_path = tmp_path / "config.yaml"
        config_path.write_text(yaml.safe_dump({
            "dataset": {
                "manifest": str(data_dir / "manifest.json"), "protocol": "custom",
                "train_subjects": [1], "test_subjects": [2], "resample_timesteps": 10,
            },
            "encoders": TINY_ENCODERS,
            "checkpoints": {"inertial": str(unimodal_checkpoints["inertial"])},
            "evaluation": {"retrieval_modality": "inertial", "retrieval_k": 1},
        }))
        out = tmp_path / "out"
        assert main(["evaluate", "--mode", "retrieve", "--config", str(config_path), "--out", str(out)]) == 0
        rows = (out / "results.csv").read_text().splitlines()
        header, row = rows[0].split(","), rows[1].split(",")
        assert float(row[header.index("value")]) == 1.0

    def test_linear_mode_writes_results(self, tmp_path, dataset_dir, unimodal_checkpoints):
        config = write_config(
            tmp_path / "config.yaml", manifest=dataset_dir / "manifest.json",
            checkpoints={m: str(p) for m, p in unimodal_checkpoints.items()},
        )
        out = tmp_path / "out"
        assert main(["evaluate", "--mode", "linear", "--config", str(config), "--out", str(out)]) == 0
        assert (out / "results.csv").exists()

    def test_semisup_mode_writes_ci_and_plot(self, tmp_path, dataset_dir, unimodal_checkpoints):
        config = write_config(
            tmp_path / "config.yaml", manifest=dataset_dir / "manifest.json",
            checkpoints={m: str(p) for m, p in unimodal_checkpoints.items()},
            evaluation={
                "epochs": 2, "batch_size": 8, "fractions": [0.5], "repeats": 2,
                "include_baselines": False,
            },
        )
        out = tmp_path / "out"
        assert main(["evaluate", "--mode", "semisup", "--config", str(config), "--out", str(out)]) == 0
        rows = (out / "results.csv").read_text().splitlines()
        assert len(rows) == 2  # header + one fraction row
        assert "ci_half_width" in rows[0]
        curves = (out / "semisup_curves.csv").read_text().splitlines()
        assert curves[0].startswith("fraction,")
        assert (out / "semisup.png").exists()

    def test_topk_mode_emits_one_row_per_k(self, tmp_path, dataset_dir, unimodal_checkpoints):
        config = write_config(
            tmp_path / "config.yaml", manifest=dataset_dir / "manifest.json",
            framework="cmc_cmkm", epochs=1, batch_size=8, tau=0.1,
            guidance_checkpoints={m: str(p) for m, p in unimodal_checkpoints.items()},
            evaluation={"epochs": 2, "batch_size": 8, "k_values": [0, 1]},
        )
        out = tmp_path / "out"
        assert main(["evaluate", "--mode", "topk", "--config", str(config), "--out", str(out)]) == 0
        rows = (out / "results.csv").read_text().splitlines()
        assert len(rows) == 3
        header = rows[0].split(",")
        k_column = header.index("top_k")
        assert [row.split(",")[k_column] for row in rows[1:]] == ["0", "1"]

    def test_finetune_alias_works(self, tmp_path, dataset_dir, unimodal_checkpoints):
        config = write_config(
            tmp_path / "config.yaml", manifest=dataset_dir / "manifest.json",
            checkpoints={"inertial": str(unimodal_checkpoints["inertial"])},
        )
        out = tmp_path / "out"
        assert main(["finetune", "--mode", "linear", "--config", str(config), "--out", str(out)]) == 0


class TestExportCommand:
    def test_export_embeddings_files(self, tmp_path, dataset_dir, unimodal_checkpoints):
        config = write_config(
            tmp_path / "config.yaml", manifest=dataset_dir / "manifest.json",
            checkpoints={m: str(p) for m, p in unimodal_checkpoints.items()},
        )
        out = tmp_path / "out"
        assert main(["export-embeddings", "--config", str(config), "--out", str(out)]) == 0
        for name in ("inertial_embeddings.csv", "skeleton_embeddings.csv", "multimodal_embeddings.csv"):
            assert (out / name).exists()


class TestOutputRoot:
    def test_relative_out_anchors_at_env_root(self, tmp_path, dataset_dir, monkeypatch):
        monkeypatch.setenv("MMHAR_OUTPUT_ROOT", str(tmp_path))
        config = write_config(
            tmp_path / "config.yaml", manifest=dataset_dir / "manifest.json",
            framework="simclr_inertial", epochs=1, batch_size=8, tau=0.1,
        )
        assert main(["pretrain-unimodal", "--config", str(config), "--out", "nested/run"]) == 0
        assert (tmp_path / "nested" / "run" / "train_log.jsonl").exists()

    def test_unknown_config_key_fails_closed(self, tmp_path, dataset_dir, capsys):
        config_path = tmp_path / "config.yaml"
        config_path.write_text(yaml.safe_dump({
            "dataset": {"manifest": str(dataset_dir / "manifest.json")},
            "framwork": "cmc",
        }))
        assert main(["pretrain-multimodal", "--config", str(config_path), "--out", str(tmp_path)]) == 1
        assert "unknown config key" in capsys.readouterr().err
