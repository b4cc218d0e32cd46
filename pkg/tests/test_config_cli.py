import csv
from pathlib import Path

import numpy as np
import pytest

import oracles
from ticketforge import cli, experiment
from ticketforge.config import THREADS_ENV, ExperimentConfig, load_config, parse_config, render_config
from ticketforge.corpus import read_divergence_csv
from ticketforge.errors import ConfigError, NumericalError
from ticketforge.report import report

TINY = """
[experiment]
seeds = 1, 2
strategies = reset, random
threads = 1

[data]
synthetic = true
domains = alpha, beta
sizes = 40, 20, 20

[synthetic]
records = 200

[vocab]
size = 80

[model]
embed_dim = 4
heights = 2, 3
channels = 2
mlp_hidden = 3
max_len = 10

[prune]
rounds = 2

[train]
max_epochs = 1
learning_rate = 0.005

[transfer]
pairs = alpha>beta, alpha>alpha
"""


@pytest.fixture
def tiny_ini(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY)
    return p


def run(*args):
    return cli.main([str(a) for a in args])


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg.seeds == (1, 2, 3, 4, 5)
        assert cfg.prune.fraction == 0.35 and cfg.prune.rounds == 20
        assert cfg.train.learning_rate == 1e-3 and cfg.train.batch_size == 32

    def test_tiny(self, tiny_ini):
        cfg = load_config(tiny_ini)
        assert cfg.domains == ("alpha", "beta")
        assert cfg.transfer.pairs == (("alpha", "beta"), ("alpha", "alpha"))
        assert cfg.model.heights == (2, 3)

    @pytest.mark.parametrize("text, match", [
        ("[bogus]\nx = 1", "unknown config section"),
        ("[train]\nlearnin_rate = 1", "unknown key"),
        ("[transfer]\npairs = alpha-beta", "source>target"),
        ("[train]\nbatch_size = many", "cannot parse"),
        ("[data\n", "syntax"),
    ])
    def test_errors(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config(text)

    def test_validate(self):
        with pytest.raises(ConfigError, match="no domains"):
            ExperimentConfig().validate()
        with pytest.raises(ConfigError, match="path"):
            parse_config("[data]\ndomains = books").validate()
        with pytest.raises(ConfigError, match="does not exist"):
            parse_config("[data]\ndomains = books\npath.books = /no/such/file.jsonl").validate()
        with pytest.raises(ConfigError, match="seed"):
            parse_config("[experiment]\nseeds =\n[data]\nsynthetic = true\ndomains = a").validate()

    def test_render_round_trip(self, tiny_ini):
        cfg = load_config(tiny_ini)
        again = parse_config(render_config(cfg))
        assert again == ExperimentConfig(**{**cfg.__dict__, "out": cfg.out.resolve()})

    def test_thread_cap(self, monkeypatch):
        cfg = parse_config("[experiment]\nthreads = 8")
        monkeypatch.setenv(THREADS_ENV, "3")
        assert cfg.effective_threads() == 3
        monkeypatch.setenv(THREADS_ENV, "x")
        with pytest.raises(ConfigError):
            cfg.effective_threads()

    def test_seed_list_syntax(self):
        assert cli._seed_list("1-3,5") == (1, 2, 3, 5)

    def test_paper_flag(self, tiny_ini):
        args = cli.build_parser().parse_args(["obtain", "--config", str(tiny_ini), "--paper"])
        cfg = cli.resolve_config(args)
        assert cfg.prune.rounds == 20 and cfg.vocab_size == 8000 and cfg.model.channels == 127
        assert cfg.train.max_epochs == 15


@pytest.fixture(scope="module")
def done(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    ini = root / "tiny.ini"
    ini.write_text(TINY)
    out = root / "out"
    for cmd in ("build-vocab", "divergence", "obtain", "transfer"):
        assert cli.main([cmd, "--config", str(ini), "--out", str(out)]) == 0
    return ini, out


class TestPipeline:
    def test_layout(self, done):
        _, out = done
        runs = sorted(p.name for p in (out / "runs").iterdir())
        assert len(runs) == 2 * 2 * 2
        for name in runs:
            rd = out / "runs" / name
            for f in ("vocab", "theta0.bin", "records.csv", "config.resolved.ini", "DONE"):
                assert (rd / f).exists(), f
            assert sorted(p.name for p in (rd / "tickets").iterdir()) == ["round-1.tkt", "round-2.tkt"]
            load_config(rd / "config.resolved.ini").validate()
        rows = list(csv.DictReader((out / "obtain_records.csv").open()))
        assert len(rows) == 8 * 3
        assert list(rows[0]) == experiment.RECORD_FIELDS

    def test_divergence_matrix(self, done):
        _, out = done
        names, m = read_divergence_csv(out / "divergence.csv")
        assert names == ["alpha", "beta"]
        np.testing.assert_array_equal(m, m.T)
        assert m[0, 0] == 0 and m[0, 1] > 0

    def test_degenerate_transfer_cell(self, done):
        _, out = done
        obtain = {(r["seed"], r["round"]): r for r in csv.DictReader((out / "obtain_records.csv").open())
                  if r["domain"] == "alpha" and r["strategy"] == "reset"}
        moved = [r for r in csv.DictReader((out / "transfer_records.csv").open())
                 if r["target"] == "alpha" and r["strategy"] == "masks-reset"]
        assert moved
        for r in moved:
            own = obtain[(r["seed"], r["round"])]
            assert (r["val_acc"], r["test_acc"], r["sparsity"]) == (own["val_acc"], own["test_acc"], own["sparsity"])

    def test_idempotent_unless_forced(self, done):
        ini, out = done
        rec = out / "runs" / "alpha-reset-seed1" / "records.csv"
        before = rec.stat().st_mtime_ns
        assert run("obtain", "--config", ini, "--out", out) == 0
        assert rec.stat().st_mtime_ns == before
        assert run("obtain", "--config", ini, "--out", out, "--force") == 0
        assert rec.stat().st_mtime_ns != before

    def test_deterministic_rerun(self, done, tmp_path):
        ini, out = done
        again = tmp_path / "again"
        assert run("obtain", "--config", ini, "--out", again) == 0
        assert (again / "obtain_records.csv").read_bytes() == (out / "obtain_records.csv").read_bytes()

    def test_report(self, done, capsys):
        _, out = done
        assert run("report", out) == 0
        rep = out / "report"
        assert (rep / "summary.csv").exists() and (rep / "phase_transition.csv").exists()
        pngs = sorted(p.name for p in rep.glob("*.png"))
        assert "obtain_alpha.png" in pngs and "transfer_alpha_beta.png" in pngs
        assert all((rep / p).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n" for p in pngs)
        assert "phase transition" in capsys.readouterr().out


class TestExitCodes:
    def test_missing_config(self, tmp_path, capsys):
        assert run("obtain", "--config", tmp_path / "none.ini") == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_input_path(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[data]\ndomains = books\npath.books = books.jsonl\n")
        assert run("build-vocab", "--config", ini) == 2

    def test_ticket_target_without_target_run(self, tiny_ini, tmp_path, capsys):
        out = tmp_path / "o"
        assert run("obtain", "--config", tiny_ini, "--out", out, "--seed-list", "1") == 0
        # beta was obtained too, so remove it to provoke the error
        import shutil
        shutil.rmtree(out / "runs" / "beta-reset-seed1")
        assert run("transfer", "--config", tiny_ini, "--out", out, "--seed-list", "1") == 3
        assert "beta-reset-seed1" in capsys.readouterr().err

    def test_numerical_failure(self, tiny_ini, monkeypatch):
        def boom(cfg, force=False):
            raise NumericalError("non-finite loss")

        monkeypatch.setattr(experiment, "obtain", boom)
        assert run("obtain", "--config", tiny_ini) == 4

    def test_malformed_records(self, tmp_path, capsys):
        d = tmp_path / "runs"
        d.mkdir()
        (d / "obtain_records.csv").write_text(
            ",".join(experiment.RECORD_FIELDS) + "\n1,0.35,0.9,0.8,3,reset,a,1\n2,oops,0.9,0.8,3,reset,a,1\n")
        assert run("report", d) == 3
        assert "obtain_records.csv:3:" in capsys.readouterr().err


class TestSummary:
    def _write(self, path, rows):
        with path.open("w") as fh:
            fh.write(",".join(experiment.RECORD_FIELDS) + "\n")
            for r in rows:
                fh.write(",".join(map(str, r)) + "\n")

    def test_mean_std_against_recomputation(self, tmp_path):
        g = np.random.default_rng(0)
        rows, by_round = [], {}
        for seed in range(1, 6):
            for rnd in range(0, 4):
                acc = round(float(g.uniform(0.5, 1.0)), 4)
                rows.append((rnd, 1 - 0.65 ** rnd, 0.9, acc, 2, "reset", "a", seed))
                by_round.setdefault(rnd, []).append(acc)
        self._write(tmp_path / "obtain_records.csv", rows)
        (tmp_path / "config.resolved.ini").write_text(render_config(parse_config("[prune]\nfraction = 0.35")))
        res = report([tmp_path], figures=False)
        got = {r.round: r for r in res["rows"] if r.strategy == "reset"}
        for rnd, accs in by_round.items():
            mean, std = oracles.mean_std(accs)
            assert got[rnd].mean_test_acc == pytest.approx(mean, abs=1e-12)
            assert got[rnd].std_test_acc == pytest.approx(std, abs=1e-12)
            assert got[rnd].n_seeds == 5
            assert got[rnd].expected_sparsity == pytest.approx(1 - 0.65 ** rnd, abs=1e-15)
        full = [r for r in res["rows"] if r.strategy == "full-model"]
        assert len(full) == 1 and full[0].mean_test_acc == pytest.approx(oracles.mean_std(by_round[0])[0])

    def test_constant_accuracy(self, tmp_path):
        self._write(tmp_path / "obtain_records.csv",
                    [(1, 0.35, 0.9, 0.8, 2, "random", "a", s) for s in range(1, 6)])
        res = report([tmp_path], figures=False)
        (row,) = res["rows"]
        assert row.mean_test_acc == pytest.approx(0.8) and row.std_test_acc == 0.0
        text = (tmp_path / "report" / "summary.csv").read_text().splitlines()
        assert text[0].split(",") == ["experiment", "cell", "strategy", "round", "sparsity",
                                      "expected_sparsity", "mean_test_acc", "std_test_acc", "n_seeds"]
