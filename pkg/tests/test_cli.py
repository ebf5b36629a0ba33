import json
import os
import subprocess
import sys

import jsonschema
import pytest

from doobdynkin import cli
from doobdynkin.rng import DEFAULT_SEED


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj), encoding="utf-8")
    return str(p)


@pytest.fixture
def impossible_space(tmp_path):
    # constant Y with a two-valued X: no phi can satisfy X = phi(Y)
    return write(tmp_path, "space.json", {
        "atoms": [1, 2], "weights": [1, 1],
        "maps": {"X": [0, 1], "Y": ["y0", "y0"]}})


@pytest.fixture
def parity_space(tmp_path):
    return write(tmp_path, "parity.json", {
        "atoms": [1, 2, 3, 4], "weights": [1, 1, 2, "1/2"],
        "maps": {"W": [1, 2, 3, 4], "P": ["odd", "even", "odd", "even"],
                 "Q": ["odd", "even", "odd", "even"], "G": ["1/2", 2, 3, "inf"]}})


def run_cli(argv, capsys=None):
    code = cli.main(argv)
    if capsys is None:
        return code
    out, err = capsys.readouterr()
    return code, out, err


def validate(doc, name):
    jsonschema.validate(doc, cli.load_schema(name))


class TestParse:
    def test_factorize_routing(self):
        cfg = cli.parse_args(["factorize", "--space", "s.json", "--x", "X", "--y", "Y"])
        assert cfg.subcommand == "factorize" and cfg.seed == DEFAULT_SEED == 0xD00BD00B
        assert cfg.options["space"] == "s.json" and cfg.threads == 1 and cfg.out is None

    def test_missing_space_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            cli.parse_args(["factorize", "--x", "X", "--y", "Y"])
        assert info.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag_rejected(self):
        with pytest.raises(SystemExit) as info:
            cli.parse_args(["kalman-demo", "--bogus", "1"])
        assert info.value.code == 2

    def test_truncation_list(self):
        cfg = cli.parse_args(["risk", "--model", "m.json", "--phi", "p.json",
                              "--truncations", "1,10,100", "--report", "r.json"])
        assert cfg.options["truncations"] == [1.0, 10.0, 100.0]
        assert cfg.out == "r.json"

    @pytest.mark.parametrize("bad", ["10,1", "0,1", "a,b", ""])
    def test_bad_truncations(self, bad):
        with pytest.raises(SystemExit) as info:
            cli.parse_args(["risk", "--model", "m", "--phi", "p", "--truncations", bad])
        assert info.value.code == 2

    @pytest.mark.parametrize("seed, ok", [("0x10", True), ("18446744073709551615", True),
                                          ("-1", False), ("18446744073709551616", False)])
    def test_seed_range(self, seed, ok):
        argv = ["fiducial-demo", "--seed", seed]
        if ok:
            assert cli.parse_args(argv).seed == int(seed, 0)
        else:
            with pytest.raises(SystemExit):
                cli.parse_args(argv)


class TestFactorize:
    def test_not_measurable_is_a_verdict(self, impossible_space, capsys):
        code, out, _ = run_cli(["factorize", "--space", impossible_space,
                                "--x", "X", "--y", "Y"], capsys)
        doc = json.loads(out)
        assert code == 0 and doc["status"] == "not_measurable"
        assert doc["witness"] == [1, 2]
        validate(doc, "factorize")

    def test_factored_with_extension(self, parity_space, capsys):
        code, out, _ = run_cli(["factorize", "--space", parity_space, "--x", "P", "--y", "Q"],
                               capsys)
        doc = json.loads(out)
        assert code == 0 and doc["status"] == "factored"
        assert {(r["y"], r["x"]) for r in doc["phi"]} == {("odd", "odd"), ("even", "even")}
        validate(doc, "factorize")

    def test_levels(self, tmp_path, capsys):
        space = write(tmp_path, "s.json", {"atoms": [1, 2, 3], "weights": [1, 1, 1],
                                           "maps": {"X": ["1/4", "1/4", "3/4"],
                                                    "Y": [0, 0, 1]}})
        code, out, _ = run_cli(["factorize", "--space", space, "--x", "X", "--y", "Y",
                                "--levels", "2"], capsys)
        doc = json.loads(out)
        assert doc["phi"] == [{"y": 0, "x": "1/4"}, {"y": 1, "x": "3/4"}]
        assert doc["provenance"] == "simple-function-limit"
        validate(doc, "factorize")

    def test_missing_map_names_field(self, parity_space, capsys):
        code, _, err = run_cli(["factorize", "--space", parity_space, "--x", "Nope",
                                "--y", "Q"], capsys)
        assert code == 1 and "maps.Nope" in err
        assert len(err.strip().splitlines()) == 1

    def test_bad_weights_names_field(self, tmp_path, capsys):
        space = write(tmp_path, "s.json", {"atoms": [1], "weights": ["-2"], "maps": {}})
        code, _, err = run_cli(["factorize", "--space", space, "--x", "X", "--y", "Y"], capsys)
        assert code == 1 and "weights" in err

    def test_invalid_json(self, tmp_path, capsys):
        space = write(tmp_path, "s.json", "{not json")
        code, _, err = run_cli(["factorize", "--space", space, "--x", "X", "--y", "Y"], capsys)
        assert code == 1

    def test_missing_file(self, capsys):
        code, _, err = run_cli(["factorize", "--space", "/nonexistent/s.json",
                                "--x", "X", "--y", "Y"], capsys)
        assert code == 1 and err.startswith("doobdynkin:")


class TestCondexp:
    def test_csv(self, parity_space, capsys):
        code, out, _ = run_cli(["condexp", "--space", parity_space, "--gamma", "W",
                                "--y", "P"], capsys)
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "y,phi,mass"
        # odd: (1*1 + 2*3) / 3 = 7/3; even: (1*2 + 1/2*4) / (3/2) = 8/3
        assert set(lines[1:]) == {"odd,7/3,3", "even,8/3,3/2"}
        assert "\r" not in out

    def test_infinite_fibre_is_error(self, parity_space, capsys):
        space = json.loads(open(parity_space).read())
        space["weights"][3] = "inf"
        path = parity_space.replace("parity", "inf")
        with open(path, "w") as fh:
            json.dump(space, fh)
        code, _, err = run_cli(["condexp", "--space", path, "--gamma", "W", "--y", "P"], capsys)
        assert code == 1


class TestProject:
    def test_report(self, tmp_path, capsys):
        rows = "y,gamma\n" + "".join(f"{y},{2 * y + 1}\n" for y in range(10))
        samples = write(tmp_path, "s.csv", rows)
        basis = write(tmp_path, "b.json", {"features": [{"kind": "power", "degree": 0},
                                                        {"kind": "power", "degree": 1}]})
        code, out, _ = run_cli(["project", "--samples", samples, "--basis", basis,
                                "--ridge", "0"], capsys)
        doc = json.loads(out)
        assert code == 0
        assert doc["coefficients"] == pytest.approx([1.0, 2.0], abs=1e-10)
        validate(doc, "project")

    def test_bad_basis_names_field(self, tmp_path, capsys):
        samples = write(tmp_path, "s.csv", "y,gamma\n1,1\n2,2\n")
        basis = write(tmp_path, "b.json", {"features": [{"kind": "spline"}]})
        code, _, err = run_cli(["project", "--samples", samples, "--basis", basis], capsys)
        assert code == 1 and "basis" in err

    def test_missing_column(self, tmp_path, capsys):
        samples = write(tmp_path, "s.csv", "y,z\n1,1\n")
        basis = write(tmp_path, "b.json", {"features": [{"kind": "power", "degree": 0}]})
        code, _, err = run_cli(["project", "--samples", samples, "--basis", basis], capsys)
        assert code == 1 and "samples" in err

    def test_degenerate_basis_exit_one(self, tmp_path, capsys):
        samples = write(tmp_path, "s.csv", "y,gamma\n1,1\n2,2\n3,3\n")
        basis = write(tmp_path, "b.json", {"features": [{"kind": "power", "degree": 1}] * 2})
        code, _, _ = run_cli(["project", "--samples", samples, "--basis", basis,
                              "--ridge", "0"], capsys)
        assert code == 1


class TestRisk:
    finite = {"kind": "finite", "thetas": ["a", "b"], "prior": ["1/2", "1/2"], "ys": [0, 1],
              "likelihood": [["3/4", "1/4"], ["1/4", "3/4"]], "psi": [0, 1]}

    def test_finite_optimal(self, tmp_path, capsys):
        model = write(tmp_path, "m.json", self.finite)
        phi = write(tmp_path, "p.json", {"kind": "optimal"})
        code, out, _ = run_cli(["risk", "--model", model, "--phi", phi], capsys)
        doc = json.loads(out)
        assert code == 0 and doc["bayes_risk"] == "3/16" and doc["discrepancy"] == 0
        validate(doc, "risk")

    def test_location_diverges(self, tmp_path, capsys):
        model = write(tmp_path, "m.json", {"kind": "location", "noise": "normal"})
        phi = write(tmp_path, "p.json", {"kind": "identity"})
        out = tmp_path / "r.json"
        code = run_cli(["risk", "--model", model, "--phi", phi, "--truncations", "1,10,100",
                        "--n", "20000", "--report", str(out)])
        doc = json.loads(out.read_text())
        assert code == 0 and doc["diverged"] and doc["bayes_risk"] == "inf"
        validate(doc, "risk")

    def test_location_needs_truncations(self, tmp_path, capsys):
        model = write(tmp_path, "m.json", {"kind": "location"})
        phi = write(tmp_path, "p.json", {"kind": "identity"})
        code, _, _ = run_cli(["risk", "--model", model, "--phi", phi], capsys)
        assert code == 1

    def test_table_missing_entry(self, tmp_path, capsys):
        model = write(tmp_path, "m.json", self.finite)
        phi = write(tmp_path, "p.json", {"kind": "table", "ys": [0], "values": [0]})
        code, _, err = run_cli(["risk", "--model", model, "--phi", phi], capsys)
        assert code == 1 and "phi" in err

    def test_bad_kind_names_field(self, tmp_path, capsys):
        model = write(tmp_path, "m.json", {"kind": "mystery"})
        phi = write(tmp_path, "p.json", {"kind": "optimal"})
        code, _, err = run_cli(["risk", "--model", model, "--phi", phi], capsys)
        assert code == 1 and "model.kind" in err


class TestDemos:
    def test_fiducial_defaults(self, capsys):
        code, out, _ = run_cli(["fiducial-demo", "--n", "20000"], capsys)
        doc = json.loads(out)
        assert code == 0 and doc["estimate"] == doc["y"] == 0.0
        assert doc["posterior_risk"] == 1.0 and doc["diverged"]
        validate(doc, "fiducial")

    def test_kalman_csv(self, capsys):
        code, out, _ = run_cli(["kalman-demo", "--tmax", "0.2", "--dt", "0.01",
                                "--paths", "200", "--every", "5"], capsys)
        lines = out.splitlines()
        assert code == 0 and lines[0] == "t,S,mse,stderr"
        assert len(lines) == 1 + 5  # t = 0, .05, .1, .15, .2

    def test_kalman_invalid_model(self, capsys):
        code, _, err = run_cli(["kalman-demo", "--d", "0", "--paths", "200"], capsys)
        assert code == 1 and "D" in err


class TestOutput:
    def test_atomic_write_leaves_no_temp(self, tmp_path):
        target = tmp_path / "o.json"
        target.write_text("old")
        cli.write_output("new\n", str(target))
        assert target.read_text() == "new\n"
        assert [p.name for p in tmp_path.iterdir()] == ["o.json"]

    def test_failed_write_keeps_old_file(self, tmp_path, monkeypatch):
        target = tmp_path / "o.json"
        target.write_text("old")

        def boom(src, dst):
            raise OSError("disk full")
        monkeypatch.setattr(os, "replace", boom)
        with pytest.raises(OSError):
            cli.write_output("new", str(target))
        assert target.read_text() == "old"
        assert [p.name for p in tmp_path.iterdir()] == ["o.json"]

    @pytest.mark.parametrize("argv", [
        ["fiducial-demo", "--y", "2.5", "--n", "20000"],
        ["kalman-demo", "--tmax", "0.5", "--dt", "0.01", "--paths", "300"],
    ])
    def test_byte_identical_across_runs_and_threads(self, tmp_path, argv):
        outs = []
        for k, threads in enumerate(("1", "1", "4")):
            path = tmp_path / f"o{k}"
            assert cli.main(argv + ["--seed", "7", "--threads", threads,
                                    "--out", str(path)]) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_console_entry_point(self, tmp_path):
        out = tmp_path / "f.json"
        proc = subprocess.run([sys.executable, "-m", "doobdynkin", "fiducial-demo", "--n", "1000",
                               "--out", str(out)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert json.loads(out.read_text())["estimate"] == 0.0
        proc = subprocess.run([sys.executable, "-m", "doobdynkin", "factorize"],
                              capture_output=True, text=True)
        assert proc.returncode == 2 and "usage" in proc.stderr
