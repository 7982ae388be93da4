import csv
import io

import pytest

from swarmcap.cli import main
from swarmcap.errors import NotConverged
from swarmcap.experiments import COLUMNS, RECIPES, manifest_path


def exit_code(argv):
    try:
        return main(argv)
    except SystemExit as exc:  # argparse rejects malformed flags itself
        return exc.code


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_bound_to_stdout(capsys):
    assert main(["bound", "--blocks", "3", "--publisher-capacity", "1", "--peer-rate", "1"]) == 0
    rows = rows_of(capsys.readouterr().out)
    assert float(rows[0]["throughput"]) == 3.0
    assert list(rows[0]) == list(COLUMNS)


def test_markov_sweep_writes_csv_and_manifest(tmp_path):
    out = tmp_path / "m.csv"
    code = main(["markov", "--blocks", "2", "--publisher-capacity", "1", "--peer-rate", "1", "--sweep", "N:2:4:1",
                 "--out", str(out)])
    assert code == 0
    assert [r["N"] for r in rows_of(out.read_text())] == ["2", "3", "4"]
    assert manifest_path(out).exists()


def test_simulate_flags(capsys):
    code = main(["simulate", "--blocks", "2", "--peers", "3", "--publisher-capacity", "1", "--peer-rate", "1",
                 "--shield-newcomers", "--linger-rate", "2", "--horizon", "100", "--warmup", "10",
                 "--replications", "2", "--rng-seed", "4", "--peer-policy", "RUP_RUB"])
    assert code == 0
    row = rows_of(capsys.readouterr().out)[0]
    assert row["seed"] == "4" and row["shield"] == "true" and row["gamma"] == "2"
    assert float(row["ci_halfwidth"]) >= 0


@pytest.mark.parametrize(
    "argv",
    [
        ["markov", "--blocks", "3", "--peer-rate", "1"],
        ["markov", "--blocks", "3", "--peers", "5", "--publisher-capacity", "1", "--peer-rate", "1", "--sweep", "Q:1:2:1"],
        ["markov", "--blocks", "3", "--peers", "5", "--publisher-capacity", "1", "--peer-rate", "1", "--endgame-rate", "2"],
        ["markov", "--blocks", "x"],
        ["queueing", "--blocks", "3", "--publisher-capacity", "1", "--peer-rate", "1", "--linger-rate", "1"],
        ["recipe", "nope"],
        ["run", "/nonexistent/file.ini"],
    ],
)
def test_spec_errors_exit_2(argv):
    assert exit_code(argv) == 2


def test_non_convergence_exits_3(monkeypatch, tmp_path):
    import swarmcap.experiments as ex

    def stuck(*a, **k):
        raise NotConverged("iteration budget exhausted")

    monkeypatch.setattr(ex, "fixed_point", stuck)
    out = tmp_path / "q.csv"
    assert main(["queueing", "--blocks", "3", "--publisher-capacity", "1", "--peer-rate", "1", "--out", str(out)]) == 3
    assert out.exists()


def test_recipe_list_and_show(capsys):
    assert main(["recipe", "--list"]) == 0
    assert capsys.readouterr().out.split() == list(RECIPES)
    assert main(["recipe", "fig6a", "--show"]) == 0
    assert "[experiment]" in capsys.readouterr().out


def test_recipe_run_and_manifest_rerun(tmp_path):
    out = tmp_path / "fig6b.csv"
    assert main(["recipe", "fig6b", "--out", str(out)]) == 0
    again = tmp_path / "again.csv"
    assert main(["run", str(manifest_path(out)), "--out", str(again)]) == 0
    assert out.read_bytes() == again.read_bytes()


def test_compare(tmp_path, capsys):
    spec = tmp_path / "a.ini"
    spec.write_text("[experiment]\nmethod = queueing\n[params]\nK = 3\nU = 1\nmu = 1\n[sweep]\naxis = U\nfrom = 0.5\nto = 1\nstep = 0.5\n")
    out = tmp_path / "cmp.csv"
    assert main(["compare", str(spec), "fig6b", "--out", str(out)]) == 0
    rows = rows_of(out.read_text())
    assert [r["U"] for r in rows] == ["0.5", "1"]
    assert all(float(r["relative_error"]) == 0 for r in rows)
    assert main(["compare", "fig6a", "fig6b"]) == 2
