import os
import subprocess
import sys
from dataclasses import fields

import numpy as np
import pytest

from dynhawkes import checkpoint as ckpt
from dynhawkes.cli import main
from dynhawkes.config import RunConfig, build, coerce, read_kv
from dynhawkes.errors import CheckpointError, ValidationError
from dynhawkes.graph import DynamicNetwork, bucket_snapshots, ingest_edges
from dynhawkes.synth import PlantedSpec, generate
from dynhawkes.training import TrainingConfig, TrainingState, train

SMALL = ["--interval", "1", "--dim", "4", "--epochs", "3"]


@pytest.fixture
def edges(tmp_path):
    spec = tmp_path / "spec.txt"
    spec.write_text("N = 24\nblock_sizes = 12, 12\nT = 4\np_in = 0.3\np_out = 0.05\n")
    assert main(["generate", str(spec), "--out", str(tmp_path / "gen"), "--seed", "2"]) == 0
    return tmp_path / "gen" / "edges.tsv"


def run_train(tmp_path, edges, out="run", extra=()):
    return main(["train", "--input", str(edges), "--out", str(tmp_path / out), *SMALL, *extra])


class TestGenerate:
    def test_files_and_round_trip(self, tmp_path):
        spec = tmp_path / "spec.txt"
        spec.write_text("N = 4\nblock_sizes = 2,2\nT = 2\np_in = 1.0\np_out = 1.0\n")
        assert main(["generate", str(spec), "--out", str(tmp_path)]) == 0
        with open(tmp_path / "edges.tsv") as fh:
            net = bucket_snapshots(ingest_edges(fh), 1)
        g = generate(PlantedSpec(N=4, block_sizes=(2, 2), T=2, p_in=1.0, p_out=1.0))
        assert net == g.net
        assert (tmp_path / "labels.tsv").read_text() == "0\t0\n1\t0\n2\t1\n3\t1\n"

    def test_seed_override_changes_output(self, tmp_path):
        spec = tmp_path / "spec.txt"
        spec.write_text("N = 30\nblock_sizes = 15,15\np_in = 0.3\n")
        main(["generate", str(spec), "--out", str(tmp_path / "a"), "--seed", "1"])
        main(["generate", str(spec), "--out", str(tmp_path / "b"), "--seed", "2"])
        assert (tmp_path / "a" / "edges.tsv").read_text() != (tmp_path / "b" / "edges.tsv").read_text()

    @pytest.mark.parametrize("sizes, code", [("3,2", 0), ("3,3", 2)])
    def test_block_invariant(self, tmp_path, capsys, sizes, code):
        spec = tmp_path / "spec.txt"
        spec.write_text(f"N = 5\nblock_sizes = {sizes}\nT = 2\n")
        assert main(["generate", str(spec), "--out", str(tmp_path)]) == code
        if code:
            assert "block_sizes" in capsys.readouterr().err

    def test_bad_field(self, tmp_path, capsys):
        spec = tmp_path / "spec.txt"
        spec.write_text("p_in = lots\n")
        assert main(["generate", str(spec), "--out", str(tmp_path)]) == 2
        assert "'p_in'" in capsys.readouterr().err


class TestTrainEval:
    def test_missing_input(self, tmp_path, capsys):
        missing = tmp_path / "nowhere.tsv"
        assert main(["train", "--input", str(missing), "--out", str(tmp_path)]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_train_outputs(self, tmp_path, edges, capsys):
        assert run_train(tmp_path, edges) == 0
        out = capsys.readouterr().out
        for key in ("L_1st", "L_DHP", "L_smooth", "total"):
            assert key in out
        trace = (tmp_path / "run" / "loss_trace.tsv").read_text().splitlines()
        assert trace[0] == "epoch\tL_1st\tL_DHP\tL_smooth\ttotal" and len(trace) == 4
        c = ckpt.load(tmp_path / "run" / "checkpoint.txt")
        assert (c.N, c.T, c.dim) == (24, 4, 4) and c.state.epoch == 3
        assert not [p for p in os.listdir(tmp_path / "run") if p.startswith(".ckpt")]

    def test_zero_epochs_is_initial_state(self, tmp_path, edges):
        assert run_train(tmp_path, edges, extra=["--epochs", "0"]) == 0
        c = ckpt.load(tmp_path / "run" / "checkpoint.txt")
        with open(edges) as fh:
            net = bucket_snapshots(ingest_edges(fh), 1)
        init = TrainingState.initialize(net, TrainingConfig(dim=4))
        np.testing.assert_array_equal(c.state.emb.vectors, init.emb.vectors)
        np.testing.assert_array_equal(c.state.params.W, init.params.W)

    def test_byte_identical_checkpoints(self, tmp_path, edges):
        run_train(tmp_path, edges)
        first = (tmp_path / "run" / "checkpoint.txt").read_bytes()
        trace = (tmp_path / "run" / "loss_trace.tsv").read_bytes()
        run_train(tmp_path, edges)
        assert (tmp_path / "run" / "checkpoint.txt").read_bytes() == first
        assert (tmp_path / "run" / "loss_trace.tsv").read_bytes() == trace

    def test_input_not_modified(self, tmp_path, edges):
        before = edges.read_bytes()
        run_train(tmp_path, edges)
        assert edges.read_bytes() == before

    def test_eval_link_and_determinism(self, tmp_path, edges):
        run_train(tmp_path, edges)
        args = ["eval", "--input", str(edges), "--out", str(tmp_path / "run"), "--interval", "1",
                "--dim", "4", "--repeats", "2"]
        assert main(args) == 0
        first = (tmp_path / "run" / "report_link.tsv").read_text()
        assert main(args) == 0
        assert (tmp_path / "run" / "report_link.tsv").read_text() == first
        assert [ln.split("\t")[1] for ln in first.splitlines()[1:]] == ["F1", "AUC"]

    def test_eval_recommend_rows(self, tmp_path, edges):
        run_train(tmp_path, edges)
        assert main(["eval", "--input", str(edges), "--out", str(tmp_path / "run"),
                     "--interval", "1", "--dim", "4", "--task", "recommend", "--ks", "10,20"]) == 0
        rows = (tmp_path / "run" / "report_recommend.tsv").read_text().splitlines()[1:]
        assert [(r.split("\t")[1], r.split("\t")[2]) for r in rows] == [
            ("P", "10"), ("R", "10"), ("P", "20"), ("R", "20")]

    def test_eval_single_snapshot(self, tmp_path, capsys):
        path = tmp_path / "one.tsv"
        path.write_text("0\t1\t0\n1\t2\t0\n")
        assert main(["train", "--input", str(path), "--out", str(tmp_path), *SMALL]) == 0
        assert main(["eval", "--input", str(path), "--out", str(tmp_path), "--interval", "1",
                     "--dim", "4"]) == 2
        assert "t+1" in capsys.readouterr().err

    def test_eval_dim_mismatch(self, tmp_path, edges, capsys):
        run_train(tmp_path, edges)
        assert main(["eval", "--input", str(edges), "--out", str(tmp_path / "run"),
                     "--interval", "1", "--dim", "8"]) == 2
        assert "dim" in capsys.readouterr().err

    def test_config_file_and_override(self, tmp_path, edges):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"input = {edges}\ninterval = 1\ndim = 4\nepochs = 2  # short\n")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r"),
                     "--epochs", "1"]) == 0
        assert ckpt.load(tmp_path / "r" / "checkpoint.txt").state.epoch == 1

    def test_inspect(self, tmp_path, edges, capsys):
        run_train(tmp_path, edges)
        capsys.readouterr()
        assert main(["inspect", "--input", str(edges), "--out", str(tmp_path / "run"),
                     "--interval", "1", "--dim", "4", "--i", "0", "--j", "1", "--t", "3"]) == 0
        lines = dict(ln.split("\t") for ln in capsys.readouterr().out.splitlines())
        assert float(lines["raw"]) == pytest.approx(float(lines["base"]) + float(lines["excitation"]))
        assert float(lines["transferred"]) > 0

    def test_sweep(self, tmp_path, edges):
        assert main(["sweep", "--input", str(edges), "--out", str(tmp_path / "sw"), *SMALL,
                     "--repeats", "1", "--sweep_kernels", "exponential,flat",
                     "--sweep_h", "1,2"]) == 0
        rows = (tmp_path / "sw" / "sweep.tsv").read_text().splitlines()
        assert rows[0] == "kernel\th\ttask\tmetric\tk\tmean\tstd"
        assert len(rows) == 1 + 2 * 2 * 2


class TestGradcheck:
    def test_default_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "result\tPASS" in out and "max_rel_error" in out

    def test_tiny_tolerance_fails(self, capsys):
        assert main(["gradcheck", "--tolerance", "1e-12"]) == 1
        assert "result\tFAIL" in capsys.readouterr().out

    def test_dim_one(self, capsys):
        main(["gradcheck", "--dim", "1"])
        assert "max_rel_error" in capsys.readouterr().out


class TestConfig:
    def test_every_field_documented_in_help(self):
        out = subprocess.run([sys.executable, "-m", "dynhawkes.cli", "train", "--help"],
                             capture_output=True, text=True, check=True).stdout
        # argparse may wrap inside a value, so compare without whitespace
        flat = "".join(out.split())
        defaults = RunConfig()
        for f in fields(RunConfig):
            assert f"--{f.name}" in flat
            assert "".join(f"(default: {getattr(defaults, f.name)!r})".split()) in flat

    def test_unknown_key(self):
        with pytest.raises(ValidationError):
            coerce(RunConfig, "learning_rate", "0.1")

    def test_precedence(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("lr = 0.5\nnew_only = yes\n")
        cfg = build(RunConfig, read_kv(path), {"lr": 0.25, "epochs": None})
        assert cfg.lr == 0.25 and cfg.new_only is True and cfg.epochs == RunConfig().epochs

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("lr 0.5\n")
        with pytest.raises(ValidationError, match=":1:"):
            read_kv(path)

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as info:
            main(["train", "--epoch", "3"])
        assert info.value.code == 2


class TestCheckpoint:
    def state(self):
        net = DynamicNetwork.from_edge_sets(5, [{(0, 1): 1.0}, {(1, 2): 1.0, (3, 4): 2.0}])
        return train(net, TrainingConfig(epochs=2, dim=3, kernel="rayleigh"))

    def test_round_trip_exact(self):
        st = self.state()
        c = ckpt.loads(ckpt.dumps(st, {"a": 1}))
        np.testing.assert_array_equal(c.state.emb.vectors, st.emb.vectors)
        np.testing.assert_array_equal(c.state.params.theta, st.params.theta)
        assert c.state.params.kernel == "rayleigh" and c.config == {"a": 1}

    @pytest.mark.parametrize("mangle", [
        lambda s: "NOT-A-CHECKPOINT\n" + s,
        lambda s: s.replace("CHECKPOINT\t1", "CHECKPOINT\t9", 1),
        lambda s: s.rsplit("[theta]", 1)[0],
        lambda s: s + "extra\n",
        lambda s: s.replace("dim\t3", "dim\t4", 1),
    ])
    def test_rejects_damage(self, mangle):
        with pytest.raises(CheckpointError):
            ckpt.loads(mangle(ckpt.dumps(self.state(), {})))
