import json

import numpy as np
import pytest

from pibinn.checkpoint import load_checkpoint, save_checkpoint
from pibinn.cli import main, render
from pibinn.data import load_dataset
from pibinn.experiment import compare_schemes, ternary_overlap, _physics_mask, resolve_dataset
from pibinn.unroll import UnrolledNet

SPEC = {"m": 6, "n": 12, "p_nonzero": 0.25, "n_train": 48, "n_test": 16, "seed": 5}


def _write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def _train_cfg(dataset, **kw):
    cfg = {"dataset": dataset, "model": {"K": 2, "quant_mode": "one_bit"},
           "quant": {"epochs": 2}, "pretrain_epochs": 1, "stage2_epochs": 2, "batch_size": 16}
    cfg.update(kw)
    return cfg


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = _write(tmp, "gen.json", {"dataset": SPEC})
    assert main(["gen-data", "--config", cfg, "--out", str(tmp / "data")]) == 0
    return tmp / "data"


@pytest.fixture(scope="module")
def run_dir(data_dir, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = _write(tmp, "train.json", _train_cfg(str(data_dir)))
    assert main(["train", "--config", cfg, "--out", str(tmp / "run")]) == 0
    return tmp / "run"


class TestBits:
    @pytest.mark.parametrize("model,K,m,n,expected", [
        ("one_bit", 5, 50, 100, "25160"), ("dun", 5, 50, 100, "800160"),
        ("one_bit", 1, 1, 1, "33"), ("fcn_relu", 5, 50, 100, "1440000")])
    def test_values(self, capsys, model, K, m, n, expected):
        argv = ["bits", "--model", model, "--K", str(K), "--m", str(m), "--n", str(n)]
        assert main(argv) == 0
        assert capsys.readouterr().out.strip() == expected

    def test_invalid_model(self):
        assert main(["bits", "--model", "nope", "--K", "1", "--m", "1", "--n", "1"]) == 2


class TestGenData:
    def test_roundtrip_and_determinism(self, data_dir, tmp_path):
        ds = load_dataset(data_dir / "train")
        assert ds.X.shape == (48, 12)
        cfg = _write(tmp_path, "gen.json", {"dataset": SPEC})
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
        for f in ("Y.bin", "X.bin", "A.bin", "manifest.json"):
            assert (tmp_path / "again" / "train" / f).read_bytes() == \
                (data_dir / "train" / f).read_bytes()

    def test_rejects_empty_training_split(self, tmp_path):
        cfg = _write(tmp_path, "gen.json", {"dataset": dict(SPEC, n_train=0)})
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "x")]) == 2
        assert not (tmp_path / "x").exists()

    def test_missing_config_and_bad_json(self, tmp_path):
        assert main(["gen-data"]) == 2
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        assert main(["gen-data", "--config", str(bad)]) == 2
        assert main(["gen-data", "--config", str(tmp_path / "absent.json")]) == 4


class TestTrainEval:
    def test_outputs(self, run_dir):
        for f in ("metrics.json", "layers.csv", "losses.csv", "checkpoint/manifest.json"):
            assert (run_dir / f).exists()
        head = (run_dir / "losses.csv").read_text().splitlines()[0]
        assert head == "stage,epoch,lr,loss,scale"

    def test_eval_matches_train_metric(self, run_dir, data_dir, tmp_path):
        cfg = _write(tmp_path, "eval.json", {"checkpoint": str(run_dir / "checkpoint"),
                                             "dataset": str(data_dir)})
        assert main(["eval", "--config", cfg, "--out", str(tmp_path / "e1")]) == 0
        assert main(["eval", "--config", cfg, "--out", str(tmp_path / "e2")]) == 0
        trained = json.loads((run_dir / "metrics.json").read_text())
        e1 = json.loads((tmp_path / "e1" / "metrics.json").read_text())
        e2 = json.loads((tmp_path / "e2" / "metrics.json").read_text())
        assert abs(e1["train_nmse_db"] - trained["train_nmse_db"]) <= 1e-9
        assert abs(e1["test_nmse_db"] - trained["test_nmse_db"]) <= 1e-9
        assert e1 == e2

    def test_zero_weight_checkpoint_is_0db(self, data_dir, tmp_path):
        net = UnrolledNet([np.zeros((6, 12))] * 2, [0.1, 0.1])
        save_checkpoint(net, tmp_path / "zero")
        cfg = _write(tmp_path, "eval.json", {"checkpoint": str(tmp_path / "zero"),
                                             "dataset": str(data_dir)})
        assert main(["eval", "--config", cfg, "--out", str(tmp_path / "e")]) == 0
        rep = json.loads((tmp_path / "e" / "metrics.json").read_text())
        assert rep["test_nmse_db"] == pytest.approx(0.0, abs=1e-12)

    def test_shape_mismatch_is_config_error(self, data_dir, tmp_path):
        save_checkpoint(UnrolledNet([np.zeros((5, 12))], [0.1]), tmp_path / "bad")
        cfg = _write(tmp_path, "eval.json", {"checkpoint": str(tmp_path / "bad"),
                                             "dataset": str(data_dir)})
        assert main(["eval", "--config", cfg]) == 2

    def test_schema_error_before_work(self, data_dir, tmp_path):
        cfg = _train_cfg(str(data_dir))
        del cfg["pretrain_epochs"]
        path = _write(tmp_path, "t.json", cfg)
        assert main(["train", "--config", path, "--out", str(tmp_path / "never")]) == 2
        assert not (tmp_path / "never").exists()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_failure_exit_code(self, tmp_path):
        cfg = _train_cfg(dict(SPEC, n_train=8, n_test=2))
        cfg["pretrain_lr"] = 1e12
        cfg["quant"] = {"epochs": 2, "optimizer": "sgd"}
        cfg["pretrain_epochs"] = 20
        path = _write(tmp_path, "t.json", cfg)
        assert main(["train", "--config", path, "--out", str(tmp_path / "r")]) == 3

    def test_same_seed_same_metrics(self, tmp_path):
        path = _write(tmp_path, "t.json", _train_cfg(dict(SPEC, n_train=16, n_test=4)))
        for d in ("a", "b"):
            assert main(["train", "--config", path, "--out", str(tmp_path / d), "--seed", "2"]) == 0
        assert (tmp_path / "a" / "metrics.json").read_text().split('"wall_times"')[0] == \
            (tmp_path / "b" / "metrics.json").read_text().split('"wall_times"')[0]

    def test_fmt(self, run_dir, capsys):
        assert main(["fmt", str(run_dir / "metrics.json"), str(run_dir / "losses.csv")]) == 0
        out = capsys.readouterr().out
        assert "train_nmse_db" in out and "stage1" in out


class TestDiagnose:
    def test_missing_support_names_flag(self, run_dir, data_dir, tmp_path, capsys):
        cfg = _write(tmp_path, "d.json", {"checkpoint": str(run_dir / "checkpoint"),
                                          "dataset": str(data_dir)})
        assert main(["diagnose", "--config", cfg]) == 2
        assert "--support" in capsys.readouterr().err

    def test_outputs_and_determinism(self, run_dir, data_dir, tmp_path):
        cfg = _write(tmp_path, "d.json", {"checkpoint": str(run_dir / "checkpoint"),
                                          "dataset": str(data_dir)})
        for d in ("a", "b"):
            argv = ["diagnose", "--config", cfg, "--support", "0,3,7", "--variant", "hard",
                    "--out", str(tmp_path / d)]
            assert main(argv) == 0
        a = (tmp_path / "a" / "diagnostics.json").read_text()
        assert a == (tmp_path / "b" / "diagnostics.json").read_text()
        res = json.loads(a)
        assert len(res["fk"]) == 2 and res["support"] == [0, 3, 7]
        assert len((tmp_path / "a" / "diagnostics.csv").read_text().splitlines()) == 3
        assert "fk" in render(tmp_path / "a" / "diagnostics.json")

    def test_identity_toy_net(self, tmp_path):
        cfg = _write(tmp_path, "g.json", {"dataset": {"m": 3, "n": 3, "n_train": 4, "n_test": 0,
                                                      "p_nonzero": 0.9}})
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
        A = load_dataset(tmp_path / "d" / "train").A
        # W with W^T A = 0.25 I on the support gives f = |1 - 0.25|
        W = 0.25 * np.linalg.inv(A).T
        save_checkpoint(UnrolledNet([W], [0.0], activation="hard"), tmp_path / "c")
        dcfg = _write(tmp_path, "d.json", {"checkpoint": str(tmp_path / "c"),
                                           "dataset": str(tmp_path / "d"), "split": "train"})
        assert main(["diagnose", "--config", dcfg, "--support", "0,1,2",
                     "--out", str(tmp_path / "o")]) == 0
        res = json.loads((tmp_path / "o" / "diagnostics.json").read_text())
        assert res["fk"][0] == pytest.approx(0.75, abs=1e-8)
        assert res["all_good"] is True


class TestCompare:
    def test_single_config_one_row(self, data_dir, tmp_path):
        path = _write(tmp_path, "c.json", _train_cfg(str(data_dir), name="pibinn"))
        assert main(["compare", "--config", path, "--out", str(tmp_path / "cmp")]) == 0
        lines = (tmp_path / "cmp" / "compare.csv").read_text().splitlines()
        assert lines[0] == "scheme,quant_mode,train_nmse_db,test_nmse_db,gap_db,params,bits,overlap"
        assert len(lines) == 2 and lines[1].startswith("pibinn,one_bit,")

    def test_mismatched_datasets(self, data_dir, tmp_path):
        a = _write(tmp_path, "a.json", _train_cfg(str(data_dir)))
        b = _write(tmp_path, "b.json", _train_cfg(str(tmp_path)))
        assert main(["compare", "--config", a, "--config", b]) == 2

    def test_block_pibinn_fewer_bits_and_overlap_oracle(self, tmp_path):
        ds = {"n_train": 32, "n_test": 8, "seed": 1, "p_nonzero": 0.2,
              "structure": {"u": 3, "v": 4, "p": 6}}
        base = {"pretrain_epochs": 1, "stage2_epochs": 1, "quant": {"epochs": 2},
                "batch_size": 16}
        schemes = [dict(base, name="pibinn",
                        model={"K": 2, "quant_mode": "one_bit", "structure": ds["structure"]}),
                   dict(base, name="ternary", model={"K": 2, "quant_mode": "ternary"})]
        rows = compare_schemes(ds, schemes, tmp_path / "cmp")
        assert rows[0]["bits"] < rows[1]["bits"]
        # recompute the overlap from the saved ternary checkpoint by set arithmetic
        tern = load_checkpoint(tmp_path / "cmp" / "ternary" / "checkpoint")
        physics = _physics_mask(resolve_dataset(ds)[0])
        zeros = {(k, i, j) for k, W in enumerate(tern.weights) for i, j in zip(*np.nonzero(W == 0))}
        phys0 = {(k, i, j) for k in range(2) for i, j in zip(*np.nonzero(~physics.active))}
        assert zeros
        assert rows[1]["overlap"] == pytest.approx(len(zeros & phys0) / len(zeros), abs=1e-15)
        assert ternary_overlap(tern, physics) == rows[1]["overlap"]
        assert rows[0]["overlap"] is None
