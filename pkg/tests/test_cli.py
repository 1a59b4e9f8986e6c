"""Command-line behavior, compared against direct library calls."""

import subprocess
import sys
import time

import numpy as np
import pytest

from untied_mixup import cli
from untied_mixup import policy as pa
from untied_mixup import trainer as tr


def run(*args):
    return cli.main([str(a) for a in args])


SWEEP_TOML = """
dataset = "noisy_blobs"
n = 120
n_test = 300
runs = 2
epochs = 6
eval_window = 2
width = 16
schemes = ["baseline", "mix:beta:0.9,0.9", "umix:beta:1.4,0.7|U"]
"""


class TestPolicySpec:
    def test_beta(self):
        parsed = cli.parse_policy_spec("beta:2.2,0.9")
        assert parsed.label == "B(2.2,0.9)"
        np.testing.assert_array_equal(parsed.value.masses, pa.beta_policy(2.2, 0.9).masses)

    def test_untied_label(self):
        parsed = cli.parse_policy_spec("beta:1.4,0.7|U")
        assert parsed.label == "U(B(1.4,0.7))" and isinstance(parsed.value, pa.UntiedScheme)

    @pytest.mark.parametrize("spec,field", [("beta:1", "beta"), ("point:x", "point"), ("gauss:1,2", "gauss"),
                                            ("beta:1,1|Q", "Q"), ("beta:1,1|Du", "gamma"),
                                            ("beta:-1,1", "positive")])
    def test_malformed_names_field(self, spec, field):
        with pytest.raises(cli.UsageError, match=field):
            cli.parse_policy_spec(spec)

    def test_scheme_entries(self):
        assert cli.parse_scheme_entry("baseline") == ("baseline", None)
        tag, parsed = cli.parse_scheme_entry("dat:beta:1,1|D")
        assert tag == "dat" and parsed.label == "D(B(1,1))"
        for bad in ("umix:beta:1,1", "mix:beta:1,1|U", "cutmix:beta:1,1", "mix"):
            with pytest.raises(cli.UsageError):
                cli.parse_scheme_entry(bad)


class TestTransform:
    def test_D_of_uniform(self, tmp_path):
        assert run("transform", "--map", "D", "--policy", "beta:1,1", "--out", tmp_path) == 0
        got = pa.load_policy(tmp_path / "policy.txt")
        assert pa.l1_distance(got, pa.beta_policy(2, 1)) < 1024 * 1e-12

    def test_U_writes_both_files(self, tmp_path):
        assert run("transform", "--map", "U", "--policy", "beta:2.2,0.9", "--out", tmp_path) == 0
        want = pa.transform_U(pa.beta_policy(2.2, 0.9))
        assert (tmp_path / "policy.txt").read_text() == pa.format_policy(want.policy)
        assert (tmp_path / "gamma.txt").read_text() == pa.format_weighting(want.weighting)

    def test_round_trip_through_files(self, tmp_path):
        run("transform", "--map", "U", "--policy", "beta:2.2,0.9", "--out", tmp_path / "u")
        code = run("transform", "--map", "Du", "--policy", f"file:{tmp_path / 'u' / 'policy.txt'}",
                   "--gamma", tmp_path / "u" / "gamma.txt", "--out", tmp_path / "du")
        assert code == 0
        back = pa.load_policy(tmp_path / "du" / "policy.txt")
        assert pa.l1_distance(back, pa.beta_policy(2.2, 0.9)) < 1e-9

    def test_bad_spec_exit_code(self, tmp_path, capsys):
        assert run("transform", "--map", "D", "--policy", "beta:two,1", "--out", tmp_path) == 2
        assert "beta" in capsys.readouterr().err

    def test_missing_gamma(self, tmp_path):
        assert run("transform", "--map", "Du", "--policy", "beta:1,1", "--out", tmp_path) == 2

    def test_argparse_errors_are_usage(self):
        with pytest.raises(SystemExit) as exc:
            run("transform", "--map", "X", "--policy", "beta:1,1")
        assert exc.value.code == 2


class TestVerify:
    def test_theorems_pass_and_fast(self, tmp_path):
        start = time.perf_counter()
        assert run("verify", "--suite", "theorems", "--seed", 0, "--out", tmp_path) == 0
        assert time.perf_counter() - start < 60
        lines = (tmp_path / "verify_theorems.csv").read_text().splitlines()
        assert lines[0] == "check,config,value,tolerance,passed"
        assert all(line.endswith(",true") for line in lines[1:])

    def test_injected_fault_fails(self, tmp_path, monkeypatch):
        def flipped(scheme):
            p = scheme.policy
            g = scheme.weighting.at_nodes(p.nodes)
            bad = np.abs(g * p.masses - (1.0 - g[::-1]) * p.reversed())
            return p._derived(bad / bad.sum())

        monkeypatch.setattr(pa, "transform_Du", flipped)
        assert run("verify", "--suite", "theorems", "--out", tmp_path) == 1


class TestTrainAndSweep:
    def test_train_bytes_repeat(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text('n = 100\nn_test = 200\nepochs = 4\neval_window = 2\nwidth = 8\n')
        for out in ("a", "b"):
            assert run("train", "--config", cfg, "--scheme", "mix:beta:0.9,0.9", "--seed", 3,
                       "--out", tmp_path / out) == 0
        name = "mixUp-CE_B_0.9_0.9_seed3.csv"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_train_matches_library(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text('n = 100\nn_test = 200\nepochs = 4\neval_window = 2\nwidth = 8\n')
        run("train", "--config", cfg, "--scheme", "baseline", "--seed", 1, "--out", tmp_path)
        train, test = tr.make_toy_dataset("noisy_blobs", 100, 1, n_test=200)
        rep = tr.train(tr.TrainConfig(epochs=4, eval_window=2, width=8, seed=1), train, test)
        assert (tmp_path / "baseline-CE_seed1.csv").read_text() == rep.to_csv()

    def test_sweep_table(self, tmp_path):
        cfg = tmp_path / "sweep.toml"
        cfg.write_text(SWEEP_TOML)
        assert run("sweep", "--config", cfg, "--jobs", 2, "--out", tmp_path) == 0
        lines = (tmp_path / "table.csv").read_text().splitlines()
        assert lines[0] == "model,policy,runs,mean,confint"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["baseline-CE", "mixUp-CE", "uMixUp-CE"]
        assert len(list((tmp_path / "runs").glob("*.csv"))) == 6
        assert not list(tmp_path.rglob(".*"))

    def test_sweep_parallel_equals_serial(self, tmp_path):
        cfg = tmp_path / "sweep.toml"
        cfg.write_text(SWEEP_TOML)
        run("sweep", "--config", cfg, "--jobs", 1, "--out", tmp_path / "serial")
        run("sweep", "--config", cfg, "--jobs", 2, "--out", tmp_path / "parallel")
        assert (tmp_path / "serial" / "table.csv").read_text() == (tmp_path / "parallel" / "table.csv").read_text()

    @pytest.mark.parametrize("body", ["schemes = []\n", "runs = 2\n", 'schemes = "baseline"\n',
                                      'schemes = ["baseline"]\nrunz = 3\n', "schemes = [\n",
                                      'schemes = ["baseline"]\nruns = 1\n'])
    def test_bad_config_is_usage_error(self, tmp_path, body):
        cfg = tmp_path / "bad.toml"
        cfg.write_text(body)
        assert run("sweep", "--config", cfg, "--out", tmp_path) == 2

    def test_missing_config_file(self, tmp_path):
        assert run("sweep", "--config", tmp_path / "nope.toml") == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "untied_mixup", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "transform" in proc.stdout
