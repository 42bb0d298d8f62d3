import csv
import io
import json
import subprocess
import sys

import pytest

from hodge_tree.cli import HODGE_COLUMNS, POINCARE_COLUMNS, PRECOND_COLUMNS, main
from hodge_tree.mesh import generate_structured, write_mesh


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.mark.parametrize("dim, expected", [(3, "N=1: 8 19 18 6, chi=1"), (2, "N=1: 4 5 2, chi=1")])
def test_mesh_info_counts(capsys, dim, expected):
    code, out, _ = run(capsys, "mesh-info", "--dim", str(dim), "--refine", "1")
    assert code == 0
    assert out.splitlines()[0] == expected


def test_mesh_info_ladder_chi(capsys):
    code, out, _ = run(capsys, "mesh-info", "--dim", "3", "--ladder", "1,2,3")
    assert code == 0
    summaries = [ln for ln in out.splitlines() if ln.startswith("N=")]
    assert len(summaries) == 3 and all(ln.endswith("chi=1") for ln in summaries)


def test_mesh_info_dump_trees(capsys, tmp_path):
    target = tmp_path / "trees.txt"
    code, _, _ = run(capsys, "mesh-info", "--refine", "2", "--dump-trees", "--out", str(target))
    text = target.read_text()
    assert code == 0
    assert "partition dim 2" in text and "node_parent " in text


def test_mesh_from_file(capsys, tmp_path):
    path = tmp_path / "cube.txt"
    write_mesh(generate_structured(3, 1), path)
    code, out, _ = run(capsys, "mesh-info", "--dim", "3", "--mesh", str(path))
    assert code == 0 and "8 19 18 6, chi=1" in out
    code, _, err = run(capsys, "mesh-info", "--dim", "2", "--mesh", str(path))
    assert code == 1 and "3D" in err


def test_hodge_rows(capsys):
    code, out, _ = run(capsys, "hodge", "--dim", "3", "--refine", "2")
    assert code == 0
    table = rows(out)
    assert list(table[0]) == HODGE_COLUMNS
    assert [r["k"] for r in table] == ["1", "2", "3"]
    assert table[2]["method"] == "three-step"
    for r in table:
        total = sum(int(r[f"n_prob{i}"]) for i in range(1, 5))
        assert total == int(r["dofs_total"]) == int(r["dofs_monolithic"])
        assert float(r["rel_diff"]) < 1e-10


def test_poincare_constants_json(capsys):
    code, out, _ = run(
        capsys, "poincare-constants", "--ladder", "1,2", "--dense-oracle", "--format", "json"
    )
    data = json.loads(out)
    assert code == 0
    assert [list(r) for r in data] == [POINCARE_COLUMNS] * 4
    assert [(r["N"], r["k"]) for r in data] == [(1, 0), (1, 1), (2, 0), (2, 1)]
    for r in data:
        assert r["cbar"] == pytest.approx(r["cbar_dense"], rel=1e-8)
    assert data[0]["cbar"] == pytest.approx(12**-0.5, rel=1e-10)


def test_precond_study_rows_ordered_and_consistent(capsys):
    code, out, _ = run(
        capsys, "precond-study", "--dim", "3", "--refine", "2", "--alpha-exp=-4..0", "--jobs", "3"
    )
    table = rows(out)
    assert code == 0
    assert list(table[0]) == PRECOND_COLUMNS
    keys = [(r["k"], float(r["log10_alpha"])) for r in table]
    assert keys == [(k, float(e)) for k in ("1", "2") for e in range(-4, 1)]
    for r in table:
        assert float(r["kappa"]) >= 1 and int(r["minres_iters"]) >= 1 and r["status"] == "ok"


def test_csv_output_is_reproducible(capsys):
    argv = ["hodge", "--dim", "2", "--ladder", "2,3", "--seed", "5", "--no-timings"]
    _, first, _ = run(capsys, *argv)
    _, second, _ = run(capsys, *argv)
    assert first == second
    argv = ["precond-study", "--refine", "3", "--seed", "5"]
    assert run(capsys, *argv)[1] == run(capsys, *argv)[1]


def test_jobs_do_not_change_output(capsys):
    base = ["poincare-constants", "--dim", "3", "--ladder", "1,2"]
    _, serial, _ = run(capsys, *base, "--jobs", "1")
    _, threaded, _ = run(capsys, *base, "--jobs", "4")
    assert serial == threaded


def test_threads_env_fallback(capsys, monkeypatch):
    monkeypatch.setenv("HODGE_TREE_THREADS", "zero")
    code, _, err = run(capsys, "mesh-info")
    assert code == 1 and "HODGE_TREE_THREADS" in err
    monkeypatch.setenv("HODGE_TREE_THREADS", "2")
    assert run(capsys, "mesh-info")[0] == 0


@pytest.mark.parametrize(
    "argv",
    [
        ["hodge", "--k", "0"],
        ["hodge", "--dim", "2", "--k", "3"],
        ["poincare-constants", "--k", "2"],
        ["precond-study", "--dim", "3", "--k", "3"],
        ["precond-study", "--alpha-exp=1"],
        ["hodge", "--refine", "0"],
        ["hodge", "--jobs", "0"],
        ["hodge", "--tol", "2"],
        ["mesh-info", "--mesh", "/nonexistent/mesh.txt"],
    ],
)
def test_invalid_config_exits_1(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 1 and "error" in err


@pytest.mark.parametrize("argv", [["nonsense"], ["hodge", "--dim", "4"], ["hodge", "--ladder", "a,b"]])
def test_invalid_arguments_exit_1(capsys, argv):
    with pytest.raises(SystemExit) as err:
        main(argv)
    assert err.value.code == 1


def test_console_script_help():
    out = subprocess.run(
        [sys.executable, "-m", "hodge_tree.cli", "--help"], capture_output=True, text=True
    )
    assert out.returncode == 0
    for column in ("dofs_monolithic", "minres_iters", "cbar_dense"):
        assert column in out.stdout


def test_solver_failure_exits_2(capsys, monkeypatch):
    import hodge_tree.cli as cli
    from hodge_tree.linalg import SolverError

    def boom(*args, **kwargs):
        raise SolverError("factorization broke")

    monkeypatch.setattr(cli, "solve_monolithic", boom)
    code, _, err = run(capsys, "hodge", "--refine", "1")
    assert code == 2 and "factorization broke" in err

    monkeypatch.setattr(cli, "poincare_constant", boom)
    code, out, _ = run(capsys, "poincare-constants", "--refine", "1")
    assert code == 2
    assert all(r["status"].startswith("failed") for r in rows(out))
