import io
import math
import os

import numpy as np
import pytest

from clicklab import cli, harness
from clicklab.core import ClickModel, Query, QueryDistribution
from clicklab.errors import InvalidInputError
from clicklab.harness import ExperimentConfig, PairSetup, ResultRow
from clicklab.oracles import SmallInstance, enum_expected_outcome
from clicklab.policies import DeterministicPolicy, UniformPolicy

TINY = dict(synthetic_queries=6, synthetic_docs=4, synthetic_features=4, pairs=2,
            budget=2_000, checkpoints=(1_000, 2_000), display_length=3, logopt_steps=20,
            update_schedule=(1_000,), batch_size=500)


def tiny(**kw):
    return ExperimentConfig(**{**TINY, **kw})


def tdi_setup(pair_id=0):
    inst = SmallInstance.three_doc((1.0, 0.9, 0.8), 0.1, 1.0)
    return PairSetup(pair_id, QueryDistribution.single(inst.query), inst.policy1, inst.policy2,
                     inst.model), inst


class TestConfig:
    def test_text_and_overrides(self):
        cfg = ExperimentConfig.from_text("pairs = 3  # few\nmethods = ab,tdi\nbudget = 1e4\n",
                                         ["seed=9", "bias_known=true", "checkpoints=1e3,1e4"])
        assert (cfg.pairs, cfg.methods, cfg.budget, cfg.seed) == (3, ("ab", "tdi"), 10_000, 9)
        assert cfg.bias_known and cfg.checkpoints == (1_000, 10_000)
        assert ExperimentConfig.from_text(cfg.to_text()) == cfg

    @pytest.mark.parametrize("text", ["pairs 3", "colour = red", "pairs = many", "methods = ab,zz",
                                      "checkpoints = 10,5", "budget = 10\ncheckpoints = 100"])
    def test_rejects(self, text):
        with pytest.raises(InvalidInputError):
            ExperimentConfig.from_text(text)


class TestRun:
    def test_one_row(self):
        rows = harness.run_experiment(tiny(pairs=1, methods=("ab",), budget=1_000, checkpoints=(1_000,)))
        assert len(rows) == 1 and rows[0].queries == 1_000 and not rows[0].error

    def test_all_methods_run(self):
        cfg = tiny(methods=harness.METHODS)
        rows = harness.run_experiment(cfg)
        assert [r for r in rows if r.error] == []
        assert len(rows) == cfg.pairs * len(harness.METHODS) * len(cfg.checkpoints)

    def test_deterministic_and_thread_independent(self):
        cfg = tiny(methods=("ab", "pi", "ips-logopt"))
        outs = []
        for threads in (1, 1, 2):
            buf = io.StringIO()
            harness.write_results(harness.run_experiment(cfg, threads), buf)
            outs.append(buf.getvalue())
        assert outs[0] == outs[1] == outs[2]

    def test_failing_cell_is_isolated(self):
        cfg = tiny(synthetic_docs=8, methods=("oi", "ab"), pairs=1)
        rows = harness.run_experiment(cfg)
        oi = [r for r in rows if r.method == "oi"]
        assert len(oi) == 1 and oi[0].error.startswith("EnumerationCapError")
        assert len([r for r in rows if r.method == "ab" and not r.error]) == 2

    def test_tdi_pair_long_run(self):
        setup, inst = tdi_setup()
        cfg = ExperimentConfig(display_length=3, budget=1_000_000, checkpoints=(1_000_000,),
                               batch_size=100_000)
        tdi = harness.run_cell(setup, "tdi", cfg)[-1]
        ips = harness.run_cell(setup, "ips-uniform", cfg)[-1]
        assert tdi.delta_hat > 0
        assert abs(ips.delta_hat + 0.08) < 0.01

    @pytest.mark.parametrize("method", ["ab", "tdi", "pi", "oi", "ips-uniform"])
    def test_simulation_matches_enumeration(self, method):
        setup, inst = tdi_setup()
        n = 1_000_000
        cfg = ExperimentConfig(display_length=3, budget=n, checkpoints=(n,), batch_size=100_000,
                               bias_known=True)
        row = harness.run_cell(setup, method, cfg)[-1]
        enum = enum_expected_outcome("ips" if method == "ips-uniform" else method, inst,
                                     UniformPolicy())
        # mse about the truth bounds the per-interaction variance from above
        assert abs(row.delta_hat - enum) < 4 * math.sqrt(row.mse / n)

    def test_mse_trend(self):
        rows = harness.run_experiment(tiny(methods=("ab", "ips-uniform"), pairs=3, budget=20_000,
                                           checkpoints=(200, 2_000, 20_000), bias_known=True))
        s = harness.summarize(rows)
        for method in ("ab", "ips-uniform"):
            mse = [r[6] for r in s.table if r[0] == method]
            assert mse[-1] <= mse[0] * 1.2


class TestSummary:
    def test_single_row(self):
        row = ResultRow(0, "ab", 100, 1.0, 0.2, 0.3, 0.015, 0.2)
        s = harness.summarize([row])
        assert s.table == [("ab", 100, 1, 0, 1.0, 0.2, 0.3)]
        assert ("ab", 100, "0.01-0.02", 1, 1.0) in s.bins

    def test_error_rows_counted_separately(self):
        rows = [ResultRow(0, "ab", 10, 0.0, 0.1, 0.1, 0.5, 0.4), ResultRow(1, "ab", 0, error="boom"),
                ResultRow(2, "ab", 10, 1.0, 0.3, 0.1, 0.5, -0.1)]
        (entry,) = harness.summarize(rows).table
        assert entry[2:5] == (2, 1, 0.5)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            harness.summarize([])

    def test_results_round_trip(self):
        rows = [ResultRow(0, "tdi", 1000, 0.0, 0.01, 0.5, -0.08, -0.07), ResultRow(1, "oi", 0, error="x")]
        buf = io.StringIO()
        harness.write_results(rows, buf)
        assert buf.getvalue().splitlines()[0] == ",".join(harness.RESULT_COLUMNS)
        again = harness.read_results(io.StringIO(buf.getvalue()))
        assert again[0].delta_hat == -0.07 and again[1].error == "x" and math.isnan(again[1].mse)


class TestCli:
    def test_compare_and_summarize(self, tmp_path):
        out = tmp_path / "run"
        code = cli.main(["compare", "--out", str(out), "--seed", "3", "--set", "pairs=1",
                         "--set", "methods=ab,tdi", "--set", "budget=1000", "--set", "checkpoints=1000",
                         "--set", "synthetic_queries=5", "--set", "synthetic_docs=4", "--plot"])
        assert code == 0
        for name in ("config.txt", "results.csv", "timings.csv", "pairs.csv", "summary.csv",
                     "summary_bins.csv", "curves.svg"):
            assert (out / name).exists()
        assert "seed = 3" in (out / "config.txt").read_text()
        assert cli.main(["summarize", str(out / "results.csv"), "--out", str(tmp_path / "s")]) == 0

    def test_gen_rankers_and_logopt(self, tmp_path):
        rk = tmp_path / "rk"
        assert cli.main(["gen-rankers", "--out", str(rk), "--queries", "4", "--docs", "3",
                         "--features", "4"]) == 0
        rng = np.random.default_rng(0)
        from clicklab.data import parse_letor, read_log, write_log
        from clicklab.core import InteractionLog, InteractionRecord
        data = parse_letor((rk / "dataset.txt").read_bytes())
        log = InteractionLog()
        for _ in range(200):
            q = data.queries[rng.integers(len(data))]
            r = tuple(rng.permutation(q.n_docs))
            log.append(InteractionRecord(q.qid, r, tuple(int(v) for v in rng.random(len(r)) < 0.3)))
        with open(tmp_path / "log.tsv", "w") as fh:
            write_log(log, fh)
        code = cli.main(["logopt", "--log", str(tmp_path / "log.tsv"), "--data", str(rk / "dataset.txt"),
                         "--ranker1", str(rk / "ranker_0.txt"), "--ranker2", str(rk / "ranker_1.txt"),
                         "--out", str(tmp_path / "lo"), "--steps", "10"])
        assert code == 0
        assert (tmp_path / "lo" / "policy.txt").read_text().startswith("clicklab-params")
        assert len((tmp_path / "lo" / "trace.csv").read_text().splitlines()) == 11

    def test_oracle(self, tmp_path, capsys):
        assert cli.main(["oracle"]) == 0
        assert "-0.196000" in capsys.readouterr().out

    def test_error_exit(self, tmp_path, capsys):
        assert cli.main(["compare", "--config", str(tmp_path / "missing.txt")]) == 2
        assert cli.main(["compare", "--set", "pairs=0", "--out", str(tmp_path)]) == 2
