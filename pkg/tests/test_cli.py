import json
import subprocess
import sys
from fractions import Fraction

import pytest

from conftest import DATA
from pertsmp import corpus
from pertsmp.cli import main
from pertsmp.expansion import RootExpansion


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize(
    "model, code",
    [("geometric", 0), ("pseudo3", 0), (str(DATA / "periodic.json"), 1), (str(DATA / "disconnected.json"), 1)],
)
def test_validate_exit_codes(capsys, model, code):
    assert run(capsys, "validate", "--model", model)[0] == code


def test_validate_reports_failed_condition(capsys):
    code, out, _ = run(capsys, "validate", "--model", str(DATA / "periodic.json"), "--format", "json")
    doc = json.loads(out)
    assert code == 1 and doc["passed"] is False
    assert doc["report"]["condition_E"] is False


@pytest.mark.parametrize("argv", [["validate", "--model", str(DATA / "bad_rowsum.json")], ["validate", "--model", "nope.json"]])
def test_usage_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2 and err.startswith("error:")


def test_argparse_errors_exit_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--model", "geometric", "--eps", "0.1", "--seed", "-3"])
    assert exc.value.code == 2


def test_expand_rational(capsys):
    code, out, _ = run(capsys, "expand", "--model", "geometric", "--order", "4", "--rational", "--format", "json")
    assert code == 0
    doc = json.loads(out)
    rx = RootExpansion.from_dict(doc["expansion"])
    assert rx.c == [Fraction(1, n) for n in range(1, 5)]
    assert doc["manifest"]["command"] == "expand"
    assert doc["manifest"]["parameters"]["order"] == 4


def test_expand_rational_irrational_root(capsys):
    code, _, err = run(capsys, "expand", "--model", "quasi3", "--rational")
    assert code == 2 and "rational" in err


def test_expand_table(capsys):
    code, out, _ = run(capsys, "expand", "--model", "quasi")
    assert code == 0
    assert "quasi-stationary" in out and "0.693147" in out


def test_expand_negative_order(capsys):
    assert run(capsys, "expand", "--model", "quasi", "--order", "-1")[0] == 2


def test_expand_no_root(capsys, tmp_path):
    doc = {
        "num_states": 2,
        "eps_max": 0.1,
        "entries": [
            {"from": 1, "to": 2, "time": 1, "poly": [0.5]},
            {"from": 1, "to": 0, "time": 1, "poly": [0.5]},
            {"from": 2, "to": 2, "time": 1, "poly": [0.9]},
            {"from": 2, "to": 0, "time": 1, "poly": [0.1]},
        ],
    }
    p = tmp_path / "noreturn.json"
    p.write_text(json.dumps(doc))
    code, _, err = run(capsys, "expand", "--model", str(p))
    assert code == 1 and "condition failure" in err


def test_verify_passes_on_pseudo(capsys):
    code, out, _ = run(capsys, "verify", "--model", "pseudo3", "--eps", "0.04,0.02,0.01", "--format", "json")
    doc = json.loads(out)
    assert code == 0 and doc["passed"] and doc["monotone"]
    errs = [doc["max_relative_error"][k] for k in ("0.04", "0.02", "0.01")]
    assert errs[0] > errs[1] > errs[2]


def test_verify_fails_tight_tolerance(capsys):
    code, _, _ = run(capsys, "verify", "--model", "pseudo3", "--eps", "0.04,0.02", "--tol", "1e-6")
    assert code == 1


def test_verify_horizon_cap(capsys):
    code, _, err = run(capsys, "verify", "--model", "pseudo3", "--eps", "0.001", "--r", "2")
    assert code == 3 and "cap" in err


def test_verify_bad_r(capsys):
    assert run(capsys, "verify", "--model", "pseudo3", "--eps", "0.1", "--r", "2", "--order", "1")[0] == 2


def test_simulate_json(capsys):
    argv = ["simulate", "--model", "pseudo3", "--eps", "0.1", "--horizon", "5", "--trials", "20000", "--seed", "4", "--format", "json"]
    code, out, _ = run(capsys, *argv)
    doc = json.loads(out)
    assert code == 0 and doc["passed"]
    assert doc["manifest"]["parameters"]["seed"] == 4
    again = json.loads(run(capsys, *argv)[1])
    assert again["results"] == doc["results"]


def test_oracle_csv(capsys, tmp_path):
    out = tmp_path / "o.csv"
    code, stdout, _ = run(capsys, "oracle", "--model", "cycle4", "--eps", "0.05", "--horizon", "30", "--format", "csv", "--out", str(out))
    assert code == 0 and stdout == ""
    lines = out.read_text().splitlines()
    meta = [ln for ln in lines if ln.startswith("#")]
    assert any(ln.startswith("# command:") for ln in meta)
    assert json.loads(next(ln for ln in meta if ln.startswith("# parameters:")).split(": ", 1)[1])["horizon"] == 30
    body = [ln for ln in lines if not ln.startswith("#")]
    assert body[0].startswith("n,")
    assert len(body) == 32


def test_oracle_matches_library(capsys):
    from pertsmp import renewal

    code, out, _ = run(capsys, "oracle", "--model", "quasi3", "--eps", "0.1", "--horizon", "20", "--format", "json")
    doc = json.loads(out)
    sol = renewal.renewal_solve(corpus.load("quasi3"), 0.1, 1, 20)
    cols = doc["columns"]
    row = doc["rows"][7]
    assert row[cols.index("P_1")] == sol.P[7, 0]


def test_oracle_short_horizon(capsys):
    assert run(capsys, "oracle", "--model", "cycle4", "--eps", "0.0", "--horizon", "1")[0] == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pertsmp", "validate", "--model", "quasi"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "all conditions hold" in res.stdout
