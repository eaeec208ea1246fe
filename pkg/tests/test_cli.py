import subprocess
import sys

import numpy as np
import pytest

from hdhash.cli import (
    cmd_encode,
    cmd_eval_pr,
    cmd_query,
    cmd_train,
    main,
)
from hdhash.codes import HashCode, pack_bits
from hdhash.features import FeatureMatrix, save_packed
from hdhash.pipeline import TrainingConfig, config_lines
from hdhash.search import read_codes_file, write_codes_file


def write_config(path, **overrides):
    base = dict(layer_dims=(4, 3), code_bits=4, epochs=2, batch_size=5, seed=1,
                outer_iters=2, init_mode="symmetric")
    base.update(overrides)
    config = TrainingConfig(**base)
    path.write_text("\n".join(config_lines(config, prefix="")) + "\n")
    return config


def write_features_csv(path, rows=10, dim=4, seed=0, labels=None):
    rng = np.random.default_rng(seed)
    values = rng.uniform(-1, 1, size=(rows, dim))
    lines = []
    for i, row in enumerate(values):
        cells = [f"{x:.9g}" for x in row]
        if labels is not None:
            cells.append(str(labels[i]))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return values


@pytest.fixture
def trained(tmp_path):
    config_path = tmp_path / "train.cfg"
    features_path = tmp_path / "train.csv"
    model_path = tmp_path / "model.hdhm"
    write_config(config_path)
    write_features_csv(features_path)
    outcome = cmd_train(str(config_path), str(features_path), str(model_path))
    assert outcome.exit_code == 0
    return config_path, features_path, model_path


class TestTrainCommand:
    def test_success_and_history_lines(self, trained, tmp_path):
        config_path, features_path, model_path = trained
        assert model_path.exists()
        outcome = cmd_train(str(config_path), str(features_path),
                            str(tmp_path / "again.hdhm"))
        iter_lines = [l for l in outcome.lines if l.startswith("iter=")]
        assert len(iter_lines) == 2  # outer_iters
        assert all("R=" in l and "J=" in l for l in iter_lines)
        assert outcome.summary.startswith("status=ok")

    def test_missing_config_key_names_it(self, tmp_path):
        config_path = tmp_path / "bad.cfg"
        write_config(config_path)
        lines = [l for l in config_path.read_text().splitlines()
                 if not l.startswith("alpha=")]
        config_path.write_text("\n".join(lines))
        features_path = tmp_path / "f.csv"
        write_features_csv(features_path)
        outcome = cmd_train(str(config_path), str(features_path),
                            str(tmp_path / "m.hdhm"))
        assert outcome.exit_code == 1
        assert "alpha" in outcome.message

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exits_3(self, tmp_path):
        config_path = tmp_path / "diverge.cfg"
        write_config(config_path, alpha=1e308)
        features_path = tmp_path / "f.csv"
        write_features_csv(features_path)
        outcome = cmd_train(str(config_path), str(features_path),
                            str(tmp_path / "m.hdhm"))
        assert outcome.exit_code == 3
        assert "sae" in outcome.message or "rbm" in outcome.message

    def test_missing_config_file(self, tmp_path):
        features_path = tmp_path / "f.csv"
        write_features_csv(features_path)
        outcome = cmd_train(str(tmp_path / "nope.cfg"), str(features_path),
                            str(tmp_path / "m.hdhm"))
        assert outcome.exit_code == 1


class TestEncodeCommand:
    def test_count_matches_rows(self, trained, tmp_path):
        _, features_path, model_path = trained
        codes_path = tmp_path / "c.hdhc"
        outcome = cmd_encode(str(model_path), str(features_path), str(codes_path))
        assert outcome.exit_code == 0
        words, n_bits = read_codes_file(codes_path)
        assert words.shape[0] == 10
        assert n_bits == 4

    def test_dimension_mismatch_exits_2(self, trained, tmp_path):
        _, _, model_path = trained
        wrong = tmp_path / "wrong.csv"
        write_features_csv(wrong, dim=7)
        outcome = cmd_encode(str(model_path), str(wrong), str(tmp_path / "c.hdhc"))
        assert outcome.exit_code == 2
        assert "4" in outcome.message and "7" in outcome.message

    def test_rerun_byte_identical(self, trained, tmp_path):
        _, features_path, model_path = trained
        p1, p2 = tmp_path / "c1.hdhc", tmp_path / "c2.hdhc"
        cmd_encode(str(model_path), str(features_path), str(p1))
        cmd_encode(str(model_path), str(features_path), str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_packed_binary_features(self, trained, tmp_path):
        _, features_path, model_path = trained
        rng = np.random.default_rng(4)
        m = FeatureMatrix(rng.uniform(-1, 1, size=(6, 4)))
        packed = tmp_path / "f.bin"
        save_packed(m, packed)
        outcome = cmd_encode(str(model_path), str(packed), str(tmp_path / "c.hdhc"))
        assert outcome.exit_code == 0


class TestQueryCommand:
    def make_codes(self, tmp_path, n=8, k=16, seed=0):
        gen = np.random.default_rng(seed)
        bits = (gen.random((n, k)) < 0.5).astype(np.uint8)
        path = tmp_path / "c.hdhc"
        write_codes_file(path, pack_bits(bits), k)
        return path, bits

    def test_indexed_code_found_at_distance_zero(self, tmp_path):
        path, bits = self.make_codes(tmp_path)
        query = HashCode.from_bits(bits[3])
        outcome = cmd_query(str(path), query.to_hex(), 3)
        assert outcome.exit_code == 0
        first = outcome.lines[0]
        assert first.endswith("distance=0")

    def test_malformed_hex_exits_1(self, tmp_path):
        path, _ = self.make_codes(tmp_path)
        outcome = cmd_query(str(path), "nothex!", 3)
        assert outcome.exit_code == 1

    def test_k_zero_exits_1(self, tmp_path):
        path, bits = self.make_codes(tmp_path)
        query = HashCode.from_bits(bits[0])
        outcome = cmd_query(str(path), query.to_hex(), 0)
        assert outcome.exit_code == 1

    def test_missing_codes_file_exits_2(self, tmp_path):
        outcome = cmd_query(str(tmp_path / "nope.hdhc"), "00" * 8, 1)
        assert outcome.exit_code == 2


class TestEvalPrCommand:
    def test_perfect_codes_auc_one(self, tmp_path):
        # two labeled clusters; identical codes inside, complementary across
        n_per, k = 10, 16
        bits = np.vstack([np.zeros((n_per, k), dtype=np.uint8),
                          np.ones((n_per, k), dtype=np.uint8)])
        labels = [0] * n_per + [1] * n_per
        codes_path = tmp_path / "c.hdhc"
        write_codes_file(codes_path, pack_bits(bits), k)
        features_path = tmp_path / "f.csv"
        write_features_csv(features_path, rows=2 * n_per, dim=3, labels=labels)
        out_csv = tmp_path / "pr.csv"
        outcome = cmd_eval_pr(str(codes_path), str(features_path), "label", 0,
                              str(out_csv), label_col="last")
        assert outcome.exit_code == 0
        auc_field = [f for f in outcome.summary.split() if f.startswith("auc=")][0]
        assert abs(float(auc_field.split("=")[1]) - 1.0) <= 1e-9
        header = out_csv.read_text().splitlines()[0]
        assert header == "radius,recall,precision,mean_retrieved"
        assert len(out_csv.read_text().splitlines()) == k + 2

    def test_random_codes_precision_near_class_prior(self, tmp_path):
        gen = np.random.default_rng(20)
        n, k = 1000, 16
        bits = (gen.random((n, k)) < 0.5).astype(np.uint8)
        labels = ([0] * (n // 2)) + ([1] * (n // 2))
        codes_path = tmp_path / "c.hdhc"
        write_codes_file(codes_path, pack_bits(bits), k)
        features_path = tmp_path / "f.bin"
        values = gen.normal(size=(n, 2))
        save_packed(FeatureMatrix(values, np.array(labels)), features_path)
        out_csv = tmp_path / "pr.csv"
        outcome = cmd_eval_pr(str(codes_path), str(features_path), "label", 0,
                              str(out_csv))
        assert outcome.exit_code == 0
        rows = out_csv.read_text().strip().splitlines()[1:]
        last = rows[-1].split(",")
        assert int(last[0]) == k
        assert float(last[1]) == pytest.approx(1.0)      # full recall at radius k
        assert abs(float(last[2]) - 0.5) <= 0.05         # precision ~ class prior

    def test_label_mode_without_labels_exits_2(self, tmp_path):
        gen = np.random.default_rng(21)
        bits = (gen.random((6, 8)) < 0.5).astype(np.uint8)
        codes_path = tmp_path / "c.hdhc"
        write_codes_file(codes_path, pack_bits(bits), 8)
        features_path = tmp_path / "f.csv"
        write_features_csv(features_path, rows=6, dim=3)
        outcome = cmd_eval_pr(str(codes_path), str(features_path), "label", 0,
                              str(tmp_path / "pr.csv"))
        assert outcome.exit_code == 2

    def test_euclidean_mode(self, tmp_path):
        gen = np.random.default_rng(22)
        bits = (gen.random((12, 8)) < 0.5).astype(np.uint8)
        codes_path = tmp_path / "c.hdhc"
        write_codes_file(codes_path, pack_bits(bits), 8)
        features_path = tmp_path / "f.csv"
        write_features_csv(features_path, rows=12, dim=3)
        outcome = cmd_eval_pr(str(codes_path), str(features_path), "euclidean", 3,
                              str(tmp_path / "pr.csv"))
        assert outcome.exit_code == 0

    def test_count_mismatch_exits_2(self, tmp_path):
        gen = np.random.default_rng(23)
        bits = (gen.random((5, 8)) < 0.5).astype(np.uint8)
        codes_path = tmp_path / "c.hdhc"
        write_codes_file(codes_path, pack_bits(bits), 8)
        features_path = tmp_path / "f.csv"
        write_features_csv(features_path, rows=7, dim=3)
        outcome = cmd_eval_pr(str(codes_path), str(features_path), "euclidean", 2,
                              str(tmp_path / "pr.csv"))
        assert outcome.exit_code == 2


class TestMainEntry:
    def test_usage_error_exit_code(self, capsys):
        assert main(["query", "--codes", "x"]) == 1  # missing required flags

    def test_full_flow_through_main(self, tmp_path, capsys):
        config_path = tmp_path / "t.cfg"
        write_config(config_path)
        features_path = tmp_path / "f.csv"
        write_features_csv(features_path)
        model_path = tmp_path / "m.hdhm"
        codes_path = tmp_path / "c.hdhc"

        assert main(["train", "--config", str(config_path), "--features",
                     str(features_path), "--out", str(model_path)]) == 0
        out = capsys.readouterr().out
        assert out.count("iter=") == 2
        assert "status=ok" in out

        assert main(["encode", "--model", str(model_path), "--features",
                     str(features_path), "--out", str(codes_path)]) == 0
        words, n_bits = read_codes_file(codes_path)
        query = HashCode(n_bits, words[0])
        assert main(["query", "--codes", str(codes_path), "--q", query.to_hex(),
                     "--k", "2"]) == 0
        out = capsys.readouterr().out
        assert "distance=0" in out.splitlines()[-2] or "distance=0" in out

    def test_invalid_threads_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HDH_THREADS", "zero")
        outcome = cmd_query(str(tmp_path / "c.hdhc"), "00", 1)
        assert outcome.exit_code == 1

    def test_console_script_runs(self, tmp_path):
        result = subprocess.run(
            [sys.executable, "-m", "hdhash.cli", "query", "--codes",
             str(tmp_path / "missing.hdhc"), "--q", "0000000000000000", "--k", "1"],
            capture_output=True, text=True)
        assert result.returncode == 2
