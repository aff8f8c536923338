import csv
import json
import math
import subprocess
import sys

import pytest

from oseen_cutfem import cli


def base_config(**over):
    cfg = {
        "mesh": {"box": [[-2, 2], [-2, 2]], "n": 16},
        "domain": {"preset": "static_circle", "params": {"radius": 1.0}},
        "pair": "TaylorHood(2)",
        "dt": {"value": 0.125},
        "T": 0.5,
    }
    cfg.update(over)
    return cfg


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_missing_field_exit_code_and_path(tmp_path, capsys):
    cfg = base_config()
    del cfg["mesh"]["n"]
    assert cli.main(["solve", "--config", str(write(tmp_path, cfg))]) == cli.EXIT_CONFIG
    assert "mesh/n" in capsys.readouterr().err


@pytest.mark.parametrize("bad", [{"dt": {"c": 1.0, "alpha": 3.0}}, {"pair": "P7P9"}, {"T": -1.0},
                                 {"integrator": "rk4"}, {"extra": 1}])
def test_schema_rejections(tmp_path, bad):
    assert cli.main(["solve", "--config", str(write(tmp_path, base_config(**bad)))]) == cli.EXIT_CONFIG


def test_invalid_json_and_missing_file(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{")
    assert cli.main(["solve", "--config", str(p)]) == cli.EXIT_CONFIG
    assert cli.main(["solve", "--config", str(tmp_path / "absent.json")]) == cli.EXIT_CONFIG


def test_bad_domain_parameters(tmp_path):
    cfg = base_config(domain={"preset": "static_circle", "params": {"radius": 1.0, "spin": 3}})
    assert cli.main(["solve", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_defaults_filled():
    cfg = cli.validate_config(base_config())
    assert cfg["integrator"] == "bdf1" and cfg["penalties"]["gamma_s"] == 1.0
    assert cfg["verify"]["shifts"] == 10


def test_dt_law():
    cfg = cli.validate_config(base_config(dt={"c": 0.5, "alpha": 1.0}))
    assert cli.dt_for(cfg, 0.25) == 0.125
    cfg = cli.validate_config(base_config(dt={"c": 1.0, "alpha": 2.0}))
    assert cli.dt_for(cfg, 0.25) == 0.0625


def test_zero_data_solve(tmp_path):
    cfg = base_config(domain={"preset": "translating_circle", "params": {"center": [-0.2, 0.0]}},
                      pair="Mini", problem={"kind": "zero"}, T=0.25)
    out = tmp_path / "out"
    assert cli.main(["solve", "--config", str(write(tmp_path, cfg)), "--out", str(out)]) == cli.EXIT_OK
    rows = read_csv(out / "run.csv")
    assert len(rows) == 3
    for r in rows:
        for key in ("u_l2", "u_triple", "u_triple_ext", "u_ghost"):
            assert float(r[key]) == 0.0
    # no pressure exists before the first step
    assert math.isnan(float(rows[0]["p_seminorm_ext"]))
    for r in rows[1:]:
        assert float(r["p_seminorm_ext"]) == 0.0 and float(r["p_ghost"]) == 0.0


def test_problem_a_row_count_and_stride(tmp_path):
    cfg = base_config(output={"stride": 2})
    out = tmp_path / "out"
    assert cli.main(["solve", "--config", str(write(tmp_path, cfg)), "--out", str(out)]) == cli.EXIT_OK
    rows = read_csv(out / "run.csv")
    assert len(rows) == 4 + 1
    assert [int(r["n"]) for r in rows] == list(range(5))
    assert "err_u_triple" in rows[0]
    assert sorted(p.name for p in out.glob("run_*.vtk")) == ["run_0.vtk", "run_2.vtk", "run_4.vtk"]


def test_solve_is_byte_identical(tmp_path):
    path = write(tmp_path, base_config(T=0.25))
    cli.main(["solve", "--config", str(path), "--out", str(tmp_path / "a")])
    cli.main(["solve", "--config", str(path), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "run.csv").read_bytes() == (tmp_path / "b" / "run.csv").read_bytes()


def test_converge_single_level(tmp_path):
    cfg = base_config(pair="Mini", T=0.25)
    out = tmp_path / "c"
    assert cli.main(["converge", "--config", str(write(tmp_path, cfg)), "--out", str(out),
                     "--h", "0.25"]) == cli.EXIT_OK
    rows = read_csv(out / "convergence.csv")
    assert len(rows) == 1
    assert all(math.isnan(float(rows[0][f"rate_{k}"])) for k in ("l2", "energy", "pressure"))


def test_converge_two_levels_has_rates(tmp_path):
    cfg = base_config(pair="Mini", T=0.5, dt={"c": 1.0, "alpha": 1.0})
    out = tmp_path / "c"
    assert cli.main(["converge", "--config", str(write(tmp_path, cfg)), "--out", str(out),
                     "--h", "0.5", "0.25"]) == cli.EXIT_OK
    rows = read_csv(out / "convergence.csv")
    assert len(rows) == 2 and math.isfinite(float(rows[1]["rate_energy"]))


def test_converge_non_monotone_rejected(tmp_path):
    cfg = base_config(pair="Mini", T=0.25)
    assert cli.main(["converge", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "c"),
                     "--h", "0.25", "0.5"]) == cli.EXIT_CONFIG


def verify_config(**over):
    cfg = base_config(verify={"shifts": 2, "samples": 4, "energy_steps": 3}, mesh={"box": [[-2, 2], [-2, 2]], "n": 8})
    cfg.update(over)
    return cfg


def test_verify_all_one_row_per_check(tmp_path):
    out = tmp_path / "v"
    code = cli.main(["verify", "--config", str(write(tmp_path, verify_config())), "--out", str(out),
                     "--check", "all"])
    rows = read_csv(out / "verify.csv")
    assert [r["check"].split("[")[0] for r in rows] == list(cli.CHECKS)
    assert code == (cli.EXIT_OK if all(r["pass"] == "1" for r in rows) else cli.EXIT_FAILURE)


def test_verify_multiple_pairs(tmp_path):
    cfg = verify_config()
    cfg["verify"]["pairs"] = ["Mini", "P3P0"]
    out = tmp_path / "v"
    cli.main(["verify", "--config", str(write(tmp_path, cfg)), "--out", str(out), "--check", "trace"])
    assert [r["check"] for r in read_csv(out / "verify.csv")] == ["trace[Mini]", "trace[P3P0]"]


def test_verify_tampered_eta_fails(tmp_path):
    cfg = verify_config(penalties={"eta": 0.01})
    out = tmp_path / "v"
    code = cli.main(["verify", "--config", str(write(tmp_path, cfg)), "--out", str(out), "--check", "coercivity"])
    assert code == cli.EXIT_FAILURE
    row = read_csv(out / "verify.csv")[0]
    assert row["pass"] == "0" and float(row["constant"]) < 0


def test_export_mesh(tmp_path):
    out = tmp_path / "m"
    assert cli.main(["export-mesh", "--config", str(write(tmp_path, base_config())), "--out", str(out)]) == 0
    text = (out / "mesh.vtk").read_text()
    assert "class" in text and "phi" in text


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "oseen_cutfem", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "export-mesh" in res.stdout


def test_verify_coercivity_default_config(tmp_path):
    out = tmp_path / "v"
    code = cli.main(["verify", "--config", str(write(tmp_path, verify_config())), "--out", str(out),
                     "--check", "coercivity"])
    assert code == cli.EXIT_OK, read_csv(out / "verify.csv")


@pytest.mark.parametrize("name", ["problem_a.json", "problem_b.json"])
def test_shipped_configs_validate(name):
    from pathlib import Path
    path = Path(__file__).resolve().parents[1] / "configs" / name
    cfg = cli.load_config(path)
    assert cli.build_problem(cfg).exact is not None
