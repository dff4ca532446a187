import json

import pytest

from oscstrip.cli import main
from oscstrip.harness import parse_report


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_profile(capsys):
    code, out, _ = run(capsys, "profile", "--profile", "cosine:2", "--samples", "4")
    data = json.loads(out)
    assert code == 0 and data["b_max"] == 2.0 and len(data["samples"]) == 5


def test_profile_error_exit_code(capsys):
    code, _, err = run(capsys, "profile", "--profile", "smoothed_custom:0,1")
    assert code == 1 and err.startswith("error:")


def test_mesh_export(capsys, tmp_path):
    path = tmp_path / "mesh.txt"
    code, out, _ = run(capsys, "mesh", "--epsilon", "0.25", "--n-vertical", "16", "--out", str(path))
    data = json.loads(out)
    assert code == 0 and data["min_angle"] > 1.0
    assert path.read_text().startswith(f"# nodes {data['nodes']}")


def test_solve_reports_error_breakdown(capsys, tmp_path):
    path = tmp_path / "u.txt"
    code, out, _ = run(capsys, "solve", "--epsilon", "0.25", "--eta", "0.1", "--bc", "robin", "--export", str(path))
    data = json.loads(out)
    assert code == 0 and 0 < data["h1"] < 1
    assert path.read_text().startswith("# x1 x2 re im")


def test_corrector(capsys, tmp_path):
    code, out, _ = run(capsys, "corrector", "--resolution", "32", "--dump", str(tmp_path / "y.txt"))
    data = json.loads(out)
    assert code == 0 and data["grad_norm"] > 0 and data["decay_rate"] == pytest.approx(6.28, abs=0.2)


def test_oracle(capsys):
    code, out, _ = run(capsys, "oracle", "--eta", "0.1", "--points", "0", "1")
    data = json.loads(out)
    assert code == 0 and max(data["checks"].values()) < 1e-11
    assert abs(complex(*data["U"][1][1:])) < 1e-14


def test_study_from_config(capsys, tmp_path):
    cfg = tmp_path / "study.cfg"
    out_path = tmp_path / "rep.json"
    cfg.write_text(
        'theorem = "T2.1_dirichlet"\neps.list = ["1/8", "1/16", "1/32"]\n'
        f'out.format = "json"\nout.path = "{out_path}"\n'
    )
    code, out, err = run(capsys, "study", "--config", str(cfg))
    assert code == 0 and out == ""
    assert "slope" in err
    rep = parse_report(out_path.read_text(), "json")
    assert len(rep.rows) == 3
