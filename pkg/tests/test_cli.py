import json
from pathlib import Path

import numpy as np
import pytest

from undersmooth.cli import CsvInputError, CsvSchema, config_hash, ingest_csv, run
from oracles import direct_interval, model_slots

CONFIG = """\
seed = 3
sbar = 2
[data]
path = "data.csv"
outcome = "y"
treatment = "d"
[initial_model]
paired = ["x0", "x1"]
[[functionals]]
name = "zeta1"
kind = "coefficient"
interaction = "x1"
[[functionals]]
name = "pi"
kind = "profit_vs_none"
nu = 0.3
cost = 0.1
[expand]
columns = ["x2", "x3", "x4"]
keep = ["y", "d"]
max_order = 2
[expand.prune]
group_by = "d"
min_nonzero = 5
[simulate]
n = 100
p = 22
s0 = 4
reps = 3
oracle_draws = 100000
sbar_max = 2
estimators = ["True", "PL", "TU"]
"""


def write_data(path, n=80, k=5, seed=0):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, k))
    X[:, 2:] = (X[:, 2:] > 0).astype(float)
    d = r.integers(0, 2, n).astype(float)
    y = 1 + X[:, 0] + d * (0.5 + X[:, 1]) + r.standard_normal(n)
    lines = ["y,d," + ",".join(f"x{j}" for j in range(k))]
    lines += [",".join(repr(float(v)) for v in row) for row in np.column_stack([y, d, X])]
    path.write_text("\n".join(lines) + "\n")
    return y, d, X


@pytest.fixture
def workdir(tmp_path):
    write_data(tmp_path / "data.csv")
    (tmp_path / "cfg.toml").write_text(CONFIG)
    return tmp_path


def outputs(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir())}


class TestIngest:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("# comment\ny,d,a,b\n1.5,0,2,3\n2.5,1,4,5\n-1,1,6,7\n")
        data = ingest_csv(p, CsvSchema("y", "d"))
        np.testing.assert_array_equal(data.y, [1.5, 2.5, -1])
        np.testing.assert_array_equal(data.d, [0, 1, 1])
        np.testing.assert_array_equal(data.X, [[2, 3], [4, 5], [6, 7]])
        assert data.names == ("a", "b")

    def test_covariate_subset(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("y,a,b\n1,2,3\n4,5,6\n")
        data = ingest_csv(p, {"outcome": "y", "covariates": ["b"]})
        assert data.names == ("b",) and not data.has_treatment

    def test_missing_value_located(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("y,a\n1,2\n3,NA\n")
        with pytest.raises(CsvInputError, match=r"row 2.*'a'|'a'.*row 2"):
            ingest_csv(p, CsvSchema("y"))

    @pytest.mark.parametrize("text,match", [
        ("y,a\n1,2\n", "z"),
        ("y,a\n1,2,3\n", "line"),
        ("y,y\n1,2\n", "duplicate"),
        ("y,a\n", "no data"),
    ])
    def test_malformed(self, tmp_path, text, match):
        p = tmp_path / "a.csv"
        p.write_text(text)
        with pytest.raises(CsvInputError, match=match):
            ingest_csv(p, CsvSchema("y", covariates=("z",) if match == "z" else None))


class TestConfigHash:
    def test_ignores_runtime_only_keys(self):
        a = {"seed": 1, "threads": 1, "out": "x", "format": "csv", "data": {"path": "/a", "sha256": "h"}}
        b = {**a, "threads": 8, "out": "y", "format": "json", "data": {"path": "/b", "sha256": "h"}}
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash({**a, "seed": 2})
        assert config_hash(a) != config_hash({**a, "data": {"path": "/a", "sha256": "g"}})


class TestSubcommands:
    @pytest.mark.parametrize("command,files", [
        ("analyze", {"tu_zeta1.json", "tu_pi.json", "sensitivity_zeta1.csv", "sensitivity_pi.csv"}),
        ("test-heterogeneity", {"wald.json"}),
        ("expand", {"features.csv"}),
        ("simulate", {"report.csv", "path.csv"}),
    ])
    def test_runs_and_reruns_identically(self, workdir, command, files):
        a, b = workdir / "a", workdir / "b"
        cfg = str(workdir / "cfg.toml")
        assert run([command, "--config", cfg, "--out", str(a)]) == 0
        assert run([command, "--config", cfg, "--out", str(b)]) == 0
        assert set(outputs(a)) == files
        assert outputs(a) == outputs(b)

    def test_json_format(self, workdir):
        out = workdir / "o"
        assert run(["simulate", "--config", str(workdir / "cfg.toml"), "--out", str(out),
                    "--format", "json", "--reps", "2"]) == 0
        doc = json.loads((out / "report.json").read_text())
        assert doc["meta"]["seed"] == 3 and doc["design"]["reps"] == 2
        assert "runtime_seconds" not in doc

    def test_csv_metadata_and_line_endings(self, workdir):
        out = workdir / "o"
        assert run(["analyze", "--config", str(workdir / "cfg.toml"), "--out", str(out)]) == 0
        raw = (out / "sensitivity_zeta1.csv").read_bytes()
        lines = raw.split(b"\r\n")
        assert lines[0].startswith(b"# ")
        assert any(l.startswith(b"# config_sha256: ") for l in lines)
        header = next(l for l in lines if not l.startswith(b"#"))
        assert header == b"sbar,lower,upper,length,lower_added,upper_added"

    def test_sbar_zero_is_initial_interval(self, workdir):
        out = workdir / "o"
        assert run(["analyze", "--config", str(workdir / "cfg.toml"), "--out", str(out), "--sbar", "0"]) == 0
        doc = json.loads((out / "tu_zeta1.json").read_text())
        data = ingest_csv(workdir / "data.csv", CsvSchema("y", "d"))
        k = data.k
        slot = k + 2 + 1
        grad = np.zeros(2 * k + 2)
        grad[slot] = 1.0
        lo, up = direct_interval(data, model_slots([0, 1], [0, 1], k), lambda t: t[slot], lambda t: grad)
        np.testing.assert_allclose(doc["result"]["interval"], [lo, up], rtol=1e-9)
        assert doc["result"]["per_sbar"] == [{"sbar": 0, "lower": doc["result"]["interval"][0],
                                               "upper": doc["result"]["interval"][1]}]

    def test_flag_overrides_input(self, workdir, tmp_path_factory):
        other = tmp_path_factory.mktemp("other") / "d.csv"
        write_data(other, seed=9)
        a, b = workdir / "a", workdir / "b"
        cfg = str(workdir / "cfg.toml")
        assert run(["test-heterogeneity", "--config", cfg, "--out", str(a)]) == 0
        assert run(["test-heterogeneity", "--config", cfg, "--out", str(b), "--input", str(other)]) == 0
        assert outputs(a) != outputs(b)


class TestErrors:
    def _err(self, capsys):
        return json.loads(capsys.readouterr().err.strip().splitlines()[-1])

    def test_missing_config(self, tmp_path, capsys):
        assert run(["analyze", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 1
        err = self._err(capsys)
        assert err["error"] == "CliError" and err["subcommand"] == "analyze"

    def test_bad_csv(self, workdir, capsys):
        (workdir / "data.csv").write_text("y,d,x0\n1,0,2\n2,1,oops\n")
        assert run(["analyze", "--config", str(workdir / "cfg.toml"), "--out", str(workdir)]) == 1
        err = self._err(capsys)
        assert err["error"] == "CsvInputError" and "x0" in err["message"]

    def test_unknown_subcommand(self, capsys):
        assert run(["bogus"]) == 1
        assert self._err(capsys)["error"] == "CliError"

    def test_unknown_simulate_key(self, workdir, capsys):
        (workdir / "s.toml").write_text("[simulate]\nwidth = 3\n")
        assert run(["simulate", "--config", str(workdir / "s.toml"), "--out", str(workdir)]) == 1
        assert "width" in self._err(capsys)["message"]
