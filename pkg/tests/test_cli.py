import json
import os

import numpy as np
import pytest

from skofbsde.cli import RunConfig, main

BASE = {
    "spec_version": 1,
    "measure": {"kind": "uniform", "lo": 0.0, "hi": 1.0},
    "coefficients": {
        "G0": 0.0,
        "alpha": {"kind": "const", "value": 0.25},
        "beta": {"kind": "const", "value": 1.0},
        "beta_floor": 1.0,
    },
    "solver": {"nt": 64, "nx1": 65, "nx2": 33},
    "simulation": {"n_paths": 64, "n_steps": 256, "seed": 7},
    "embedding": {"n_steps": 256},
    "output_dir": "out",
}


def write_config(tmp_path, name="cfg.json", **overrides):
    cfg = json.loads(json.dumps(BASE))
    for key, val in overrides.items():
        if isinstance(val, dict) and key in cfg and isinstance(cfg[key], dict):
            cfg[key].update(val)
        else:
            cfg[key] = val
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_missing_config_file(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "nope.json")]) == 1
    assert "config error" in capsys.readouterr().err


def test_invalid_json(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["solve", "--config", str(p)]) == 1
    assert "config error" in capsys.readouterr().err


def test_unknown_keys_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, typo_key=1)
    assert main(["solve", "--config", cfg]) == 1
    err = capsys.readouterr().err
    assert "typo_key" in err


def test_unknown_nested_key_rejected(tmp_path):
    cfg = write_config(tmp_path, solver={"mt": 12})
    assert main(["solve", "--config", cfg]) == 1


def test_wrong_spec_version(tmp_path):
    cfg = write_config(tmp_path, spec_version=2)
    assert main(["solve", "--config", cfg]) == 1


def test_solve_embed_verify_chain(tmp_path, capsys):
    out = str(tmp_path / "run")
    cfg = write_config(tmp_path)
    assert main(["solve", "--config", cfg, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "field.csv"))
    assert os.path.exists(os.path.join(out, "field.json"))
    assert main(["embed", "--config", cfg, "--out", out,
                 "--field", os.path.join(out, "field.csv")]) == 0
    assert os.path.exists(os.path.join(out, "embedding.csv"))
    assert os.path.exists(os.path.join(out, "law_report.json"))
    assert main(["verify", "--config", cfg, "--out", out,
                 "--results", os.path.join(out, "embedding.csv")]) == 0
    report = json.loads((tmp_path / "run" / "law_report.json").read_text())
    assert report["law_strong"]["n"] == 64
    assert "guard_counts" in report
    capsys.readouterr()


def test_all_deterministic(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["all", "--config", cfg, "--out", out1]) == 0
    assert main(["all", "--config", cfg, "--out", out2]) == 0
    capsys.readouterr()
    for name in ("field.csv", "field.json", "embedding.csv",
                 "law_report.json", "verify_report.json", "stopped_hist.csv"):
        a = open(os.path.join(out1, name), "rb").read()
        b = open(os.path.join(out2, name), "rb").read()
        assert a == b, name


def test_seed_changes_output(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out1, out2 = str(tmp_path / "s1"), str(tmp_path / "s2")
    assert main(["all", "--config", cfg, "--out", out1, "--seed", "1"]) == 0
    assert main(["all", "--config", cfg, "--out", out2, "--seed", "2"]) == 0
    capsys.readouterr()
    a = open(os.path.join(out1, "embedding.csv"), "rb").read()
    b = open(os.path.join(out2, "embedding.csv"), "rb").read()
    assert a != b


def test_verify_detects_corruption(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = str(tmp_path / "v")
    assert main(["all", "--config", cfg, "--out", out]) == 0
    rows = open(os.path.join(out, "embedding.csv")).read().splitlines()
    head, body = rows[0], rows[1:]
    shifted = [head]
    for row in body:
        parts = row.split(",")
        parts[3] = repr(float(parts[3]) + 0.4)
        shifted.append(",".join(parts))
    bad = os.path.join(out, "corrupted.csv")
    with open(bad, "w") as fh:
        fh.write("\n".join(shifted) + "\n")
    assert main(["verify", "--config", cfg, "--out", out, "--results", bad]) == 2
    capsys.readouterr()


def test_dump_paths(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = str(tmp_path / "d")
    assert main(["solve", "--config", cfg, "--out", out]) == 0
    assert main(["embed", "--config", cfg, "--out", out,
                 "--field", os.path.join(out, "field.csv"),
                 "--dump-paths", "3"]) == 0
    capsys.readouterr()
    files = sorted(os.listdir(os.path.join(out, "paths")))
    assert len(files) == 3
    header = open(os.path.join(out, "paths", files[0])).readline().strip()
    assert header == "t,W,X1,X2,Y,Z"


def test_empirical_measure_cannot_be_solved(tmp_path, capsys):
    cfg = write_config(
        tmp_path, measure={"kind": "empirical",
                           "samples": list(np.linspace(0, 1, 40))})
    # remove uniform-only keys
    raw = json.loads(open(cfg).read())
    raw["measure"] = {"kind": "empirical",
                      "samples": list(np.linspace(0, 1, 40))}
    open(cfg, "w").write(json.dumps(raw))
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "e")]) == 3
    assert "solver error" in capsys.readouterr().err


def test_field_config_mismatch(tmp_path, capsys):
    cfg_u = write_config(tmp_path, "u.json")
    out = str(tmp_path / "m")
    assert main(["solve", "--config", cfg_u, "--out", out]) == 0
    cfg_n = write_config(tmp_path, "n.json",
                         measure={"kind": "normal", "mu": 0.0, "sigma": 1.0})
    raw = json.loads(open(cfg_n).read())
    raw["measure"] = {"kind": "normal", "mu": 0.0, "sigma": 1.0}
    open(cfg_n, "w").write(json.dumps(raw))
    assert main(["embed", "--config", cfg_n, "--out", out,
                 "--field", os.path.join(out, "field.csv")]) == 1
    capsys.readouterr()


def test_table_coefficients_from_csv(tmp_path):
    table = tmp_path / "beta.csv"
    table.write_text("0.0,1.0\n1.0,1.0\n2.0,1.0\n")
    cfg = write_config(tmp_path, coefficients={
        "G0": 0.0,
        "alpha": {"kind": "const", "value": 0.1},
        "beta": {"kind": "table", "csv": str(table)},
        "beta_floor": 1.0,
    })
    rc = RunConfig.from_file(cfg)
    # beta == 1 from the table, so H is the identity on [0, T_phys]
    half = rc.coefficients.t_phys * 0.5
    assert rc.coefficients.clock_H(half) == pytest.approx(half, abs=1e-9)


def test_piecewise_measure_config(tmp_path):
    cfg = write_config(tmp_path)
    raw = json.loads(open(cfg).read())
    raw["measure"] = {"kind": "piecewise_cdf", "xs": [0.0, 0.5, 1.0],
                      "Fs": [0.0, 0.6, 1.0]}
    open(cfg, "w").write(json.dumps(raw))
    rc = RunConfig.from_file(cfg)
    assert rc.measure.kind == "piecewise_cdf"
    assert rc.g.lipschitz > 0


def test_shipped_example_configs_parse():
    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    for name in ("normal_nodrift.json", "uniform_lineardrift.json",
                 "normal_sindrift.json", "smoke_small.json"):
        rc = RunConfig.from_file(os.path.join(root, name))
        assert rc.solver.T == 1.0
