import json

import numpy as np
import pytest

from finslerlab import cli
from finslerlab.catalog import FieldSpec, MetricSpec, default_metrics


@pytest.fixture
def files(tmp_path):
    def write(name, obj):
        path = tmp_path / name
        path.write_text(json.dumps(obj.to_dict() if hasattr(obj, "to_dict") else obj))
        return str(path)

    return write


def _tensor_schema_ok(t):
    arr = np.asarray(t["values"], dtype=float)
    return (set(t) == {"indices", "shape", "values"} and list(arr.shape) == t["shape"]
            and len(t["indices"].replace("^", "").replace("_", "")) == arr.ndim)


def _compute(files, tmp_path, metric, change=None, at="0,0;3,4"):
    args = ["compute", "--metric", files("m.json", metric), "--at", at,
            "--out", str(tmp_path / "dump.json")]
    if change is not None:
        args += ["--change", files("c.json", change)]
    code = cli.main(args)
    return code, (json.loads((tmp_path / "dump.json").read_text()) if code == 0 else None)


def test_compute_euclidean_has_zero_connection(files, tmp_path):
    code, doc = _compute(files, tmp_path, MetricSpec("euclidean", 2))
    assert code == cli.EXIT_OK
    assert np.max(np.abs(doc["unbarred"]["Gamma"]["values"])) == 0.0
    assert doc["unbarred"]["Gamma"]["indices"] == "^i_jk"
    assert all(_tensor_schema_ok(t) for t in doc["unbarred"].values())
    assert "barred" not in doc


def test_compute_flat_randers_has_zero_difference_tensor(files, tmp_path):
    chg = FieldSpec(2, b={"kind": "constant", "vector": [0.1, 0.0]})
    code, doc = _compute(files, tmp_path, MetricSpec("euclidean", 2), chg)
    assert code == cli.EXIT_OK
    assert np.max(np.abs(doc["barred"]["D"]["values"])) < 1e-14
    assert doc["barred"]["Lbar"]["values"] == pytest.approx(5.3)
    assert all(_tensor_schema_ok(t) for t in doc["barred"].values())


def test_compute_conformal_spray_difference(files, tmp_path):
    chg = FieldSpec(2, {"kind": "linear", "coeffs": [1.0, 0.0]})
    code, doc = _compute(files, tmp_path, MetricSpec("euclidean", 2), chg)
    assert code == cli.EXIT_OK
    assert doc["barred"]["D00"]["values"] == pytest.approx([-7.0, 24.0], abs=1e-12)
    assert doc["barred"]["Sbar"]["values"] == pytest.approx([-7.0, 24.0], abs=1e-12)


def test_compute_csv(files, tmp_path, capsys):
    code = cli.main(["compute", "--metric", files("m.json", MetricSpec("euclidean", 2)),
                     "--at", "0,0;3,4", "--format", "csv"])
    assert code == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "block,name,index,value"
    assert "unbarred,L,,5.0" in lines


@pytest.mark.parametrize("at, code", [
    ("0,0;0,0", cli.EXIT_POINT),
    ("0,0;3", cli.EXIT_CONFIG),
    ("nonsense", cli.EXIT_CONFIG),
])
def test_compute_bad_points(files, at, code):
    assert cli.main(["compute", "--metric", files("m.json", MetricSpec("euclidean", 2)),
                     "--at", at]) == code


def test_compute_rejects_bad_spec(files):
    path = files("m.json", {"kind": "euclidean", "n": 2, "params": {"radius": 3}})
    assert cli.main(["compute", "--metric", path, "--at", "0,0;1,0"]) == cli.EXIT_CONFIG


def test_verify_writes_json_and_csv(files, tmp_path):
    out = tmp_path / "reports.json"
    code = cli.main(["verify", "--metric", files("m.json", MetricSpec("euclidean", 2)),
                     "--change", files("c.json", FieldSpec(2, b={"kind": "constant",
                                                                "vector": [0.1, 0.0]})),
                     "--suite", "theorem_A", "--suite", "theorems_BC", "--samples", "5",
                     "--out", str(out), "--format", "json"])
    assert code == cli.EXIT_OK
    doc = json.loads(out.read_text())
    assert {d["suite"] for d in doc} == {"theorem_A", "theorems_BC"}
    assert out.with_suffix(".csv").read_text().startswith("identity,case,max_rel")


def test_verify_corrupted_tolerance_exits_one(files, capsys):
    code = cli.main(["verify", "--metric", files("m.json", default_metrics(2)["quartic"]),
                     "--change", files("c.json", FieldSpec(2, {"kind": "linear",
                                                               "coeffs": [0.4, 0.1]})),
                     "--suite", "theorem_A", "--samples", "5",
                     "--tolerance", "diff.D=1e-30"])
    assert code == cli.EXIT_FAIL
    assert "FAIL diff.D" in capsys.readouterr().err


def test_verify_unknown_suite_exits_two(capsys):
    assert cli.main(["verify", "--suite", "theorem_Z"]) == cli.EXIT_CONFIG
    assert "theorem_Z" in capsys.readouterr().err


def test_verify_unknown_config_key_exits_two(files, capsys):
    assert cli.main(["verify", "--config", files("cfg.json", {"sampels": 3})]) == cli.EXIT_CONFIG
    assert "sampels" in capsys.readouterr().err


def test_verify_is_deterministic(files, tmp_path):
    args = ["verify", "--metric", files("m.json", MetricSpec("quartic", 2)),
            "--change", files("c.json", FieldSpec(2, {"kind": "linear", "coeffs": [0.4, 0.1]},
                                                  {"kind": "constant", "vector": [0.1, 0.0]})),
            "--suite", "theorem_A", "--samples", "5", "--seed", "7"]
    outs = []
    for k in range(2):
        path = tmp_path / f"r{k}.json"
        assert cli.main(args + ["--out", str(path)]) == cli.EXIT_OK
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_scan_command(tmp_path):
    out = tmp_path / "scan.csv"
    code = cli.main(["scan", "--sigma-amplitudes", "0,0.5", "--b-magnitudes", "0,1.5",
                     "--samples", "5", "--out", str(out)])
    assert code == cli.EXIT_OK
    lines = out.read_text().splitlines()
    assert len(lines) == 5
    assert ",invalid," in lines[2]
