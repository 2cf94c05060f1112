from __future__ import annotations

import json

import numpy as np
import pytest

from fragpair.config import ConfigError, ExperimentConfig
from fragpair.metrics import mrae
from fragpair.pipeline import (
    PipelineError,
    compare_pairings,
    prepare_splits,
    run_experiment,
    run_noise_free_reference,
)


def small_config(**overrides) -> ExperimentConfig:
    raw = {
        "dataset": {"kind": "synthetic", "n": 240, "d": 2, "label_lo": 0.0,
                     "label_hi": 100.0, "feature_noise_std": 0.1},
        "noise": {"kind": "symmetric", "rate": 0.4},
        "epochs": 3,
        "seed": 0,
    }
    raw.update(overrides)
    return ExperimentConfig.from_dict(raw)


class TestConfigValidation:
    def test_unknown_key_rejected(self) -> None:
        with pytest.raises(ConfigError, match="unknown config keys: epochz"):
            ExperimentConfig.from_dict({"epochz": 5})

    def test_unknown_nested_key_rejected(self) -> None:
        with pytest.raises(ConfigError, match="dataset"):
            ExperimentConfig.from_dict({"dataset": {"kind": "synthetic", "m": 3}})

    @pytest.mark.parametrize(
        "field,value,fragment",
        [
            ("fragments", 5, "fragments"),
            ("fragments", 14, "fragments"),
            ("jitter", 0.5, "jitter"),
            ("knn_k", 4, "knn_k"),
            ("epochs", 0, "epochs"),
            ("expert_lr", 0.0, "expert_lr"),
            ("batch_size", 0, "batch_size"),
            ("mode", "fancy", "mode"),
            ("selection_combine", "both", "selection_combine"),
            ("test_frac", 1.5, "test_frac"),
        ],
    )
    def test_invariant_violations_name_the_field(self, field, value, fragment) -> None:
        with pytest.raises(ConfigError, match=fragment):
            small_config(**{field: value})

    def test_pairing_override_must_cover_fragments(self) -> None:
        with pytest.raises(ConfigError, match="pairing_override"):
            small_config(pairing_override=[[1, 2]])

    def test_round_trip_through_dict(self) -> None:
        cfg = small_config(jitter=0.1, mode="select_regr")
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_config_hash_stable_and_sensitive(self) -> None:
        a, b = small_config(), small_config()
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != small_config(seed=1).config_hash()


class TestRunExperiment:
    def test_deterministic_history(self) -> None:
        cfg = small_config()
        first = run_experiment(cfg)
        second = run_experiment(cfg)
        assert first.history == second.history

    def test_metrics_jsonl_byte_identical(self, tmp_path) -> None:
        cfg = small_config()
        run_experiment(cfg, out_dir=tmp_path / "a")
        run_experiment(cfg, out_dir=tmp_path / "b")
        assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (
            tmp_path / "b" / "metrics.jsonl"
        ).read_bytes()

    def test_artifacts_layout(self, tmp_path) -> None:
        cfg = small_config()
        result = run_experiment(cfg, out_dir=tmp_path / "run")
        root = result.out_dir
        assert (root / "metrics.jsonl").exists()
        assert (root / "config.json").exists()
        assert (root / "layout.json").exists()
        assert (root / "summary.csv").exists()
        assert (root / "checkpoints" / "regressor.npz").exists()
        assert (root / "checkpoints" / "expert_1_3.npz").exists()
        selections = sorted((root / "selection").iterdir())
        assert len(selections) == cfg.epochs
        lines = selections[0].read_text().splitlines()
        train_n = 240 - round(240 * cfg.test_frac)
        assert len(lines) == train_n
        row = json.loads(lines[0])
        assert {"index", "p_pred", "p_repr", "chosen_pred", "chosen_repr", "y", "y_gt"} <= set(row)

    def test_resolved_config_round_trips(self, tmp_path) -> None:
        cfg = small_config()
        run_experiment(cfg, out_dir=tmp_path / "run")
        reloaded = ExperimentConfig.from_file(tmp_path / "run" / "config.json")
        assert reloaded == cfg

    def test_history_carries_selection_bookkeeping(self) -> None:
        result = run_experiment(small_config())
        for record in result.history:
            assert record["n_selected"] <= record["n_pred"] + record["n_repr"]
            assert record["n_selected"] >= max(record["n_pred"], record["n_repr"])
            assert 0.0 <= record["selection_rate"] <= 1.0
            assert "jitter_delta" in record

    def test_vanilla_selects_everything(self) -> None:
        result = run_experiment(small_config(mode="vanilla"))
        for record in result.history:
            assert record["selection_rate"] == 1.0
            assert record["err"] == pytest.approx(1.0)
            assert "n_pred" not in record

    def test_pairing_override_respected(self) -> None:
        result = run_experiment(small_config(pairing_override=[[1, 2], [3, 4]]))
        assert result.pairing.pairs == ((1, 2), (3, 4))

    def test_contrastive_pairing_discovered(self) -> None:
        result = run_experiment(small_config())
        assert result.pairing.pairs == ((1, 3), (2, 4))

    def test_stage_reported_on_failure(self) -> None:
        cfg = small_config(dataset={"kind": "csv", "path": "missing.csv",
                                    "feature_cols": ["a"], "label_col": "label"})
        with pytest.raises(PipelineError, match="stage prepare"):
            run_experiment(cfg)

    def test_selection_combine_variants_run(self) -> None:
        for combine in ("intersection", "pred_only", "repr_only"):
            result = run_experiment(small_config(selection_combine=combine))
            assert len(result.history) == 3


class TestNoiseFreeBehavior:
    def test_vanilla_noise_free_learns_the_map(self) -> None:
        cfg = small_config(
            dataset={"kind": "synthetic", "n": 1000, "d": 2, "label_lo": 0.0,
                      "label_hi": 100.0, "feature_noise_std": 0.1},
            noise=None,
            mode="vanilla",
            epochs=100,
        )
        result = run_experiment(cfg)
        assert result.final_mae < 10.0  # under 10% of the label range

    def test_select_mode_keeps_clean_data(self) -> None:
        cfg = small_config(
            dataset={"kind": "synthetic", "n": 800, "d": 2, "label_lo": 0.0,
                      "label_hi": 100.0, "feature_noise_std": 0.1},
            noise=None,
            epochs=60,
        )
        result = run_experiment(cfg)
        assert result.final_selection_rate >= 0.9


class TestReferenceRun:
    def test_reference_equals_vanilla_on_ground_truth(self) -> None:
        cfg = small_config(epochs=5)
        rho, ref = run_noise_free_reference(cfg)
        again = run_experiment(
            cfg.replace(mode="vanilla", noise=None), use_ground_truth=True
        )
        assert rho == again.final_mae
        assert rho > 0
        assert mrae(rho, rho) == 0.0

    def test_reference_feeds_relative_error(self) -> None:
        cfg = small_config(epochs=4)
        rho, _ = run_noise_free_reference(cfg)
        result = run_experiment(cfg.replace(reference_rho=rho))
        for record in result.history:
            assert record["mrae"] == pytest.approx(record["mae"] / rho - 1.0)

    def test_reference_requires_ground_truth(self, tmp_path) -> None:
        path = tmp_path / "plain.csv"
        path.write_text("a,label\n" + "\n".join(f"{i},{i}" for i in range(30)) + "\n")
        cfg = small_config(
            dataset={"kind": "csv", "path": str(path), "feature_cols": ["a"],
                      "label_col": "label"},
            noise=None,
        )
        with pytest.raises(PipelineError, match="ground-truth"):
            run_noise_free_reference(cfg)


class TestComparePairings:
    def test_single_pairing_single_row(self) -> None:
        rows = compare_pairings(small_config(), [[[1, 3], [2, 4]]])
        assert len(rows) == 1
        assert rows[0]["pairing"] == "1-3;2-4"

    def test_duplicates_deduplicated_with_note(self) -> None:
        with pytest.warns(UserWarning, match="duplicate"):
            rows = compare_pairings(
                small_config(),
                [[[1, 3], [2, 4]], [[2, 4], [1, 3]]],
            )
        assert len(rows) == 1

    def test_invalid_matching_rejected(self) -> None:
        with pytest.raises(Exception):
            compare_pairings(small_config(), [[[1, 2], [2, 3]]])

    def test_csv_written(self, tmp_path) -> None:
        out = tmp_path / "cmp.csv"
        compare_pairings(small_config(), [[[1, 3], [2, 4]], [[1, 2], [3, 4]]], out_path=out)
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 3  # header + two pairings
        assert lines[0].startswith("pairing,")


class TestSplitsPreparation:
    def test_noise_applied_before_split(self) -> None:
        cfg = small_config()
        train, test = prepare_splits(cfg)
        assert train.n == 192 and test.n == 48
        corrupted = (train.y != train.y_gt).mean()
        assert 0.25 < corrupted < 0.55

    def test_ground_truth_mode_strips_noise(self) -> None:
        train, test = prepare_splits(small_config(), use_ground_truth=True)
        assert np.array_equal(train.y, train.y_gt)
