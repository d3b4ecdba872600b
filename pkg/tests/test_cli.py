from pathlib import Path

import numpy as np
import pytest

from adpt import controller as ctl
from adpt import exprdsl as ex
from adpt.benchmarks import oscillator_problem, scalar_lqr_problem, synthesize_log
from adpt.cli import build_parser, main
from adpt.modelfree import write_trajectories
from adpt.problemfile import ProblemFileError, dump_problem, load_problem

PROBLEMS = Path(__file__).resolve().parents[1] / "problems"


def write(tmp_path, text, name="p.prob"):
    path = tmp_path / name
    path.write_text(text)
    return path


BASE = "[system]\nn = 2\nm = 1\nf = x2; -x1\ng = 0; 1\n[cost]\nq = x1^2 + x2^2\nR = 1\n"


def test_load_minimal(tmp_path):
    pf = load_problem(write(tmp_path, BASE))
    assert pf.d == 1 and pf.problem.n == 2
    assert pf.options.t_span == (0.0, 8.0) and pf.options.x_init_num == 2


def test_load_full_example():
    pf = load_problem(PROBLEMS / "oscillator_explore.prob")
    assert pf.d == 3
    np.testing.assert_array_equal(pf.options.x_init, [[-3, 2], [2.2, 3]])
    np.testing.assert_array_equal(pf.options.t_span, [[0, 10], [0, 8]])
    assert len(pf.options.eta) == 2 and len(pf.options.eta[0]) == 1


@pytest.mark.parametrize("extra,section,key", [
    ("[adp]\nd = 0\n", "adp", "d"),
    ("[adp]\nepsilon = abc\n", "adp", "epsilon"),
    ("[adp]\ncrit = 7\n", "adp", "crit"),
    ("[explore]\nxInit = 1, 2, 3\n", "explore", "xInit"),
    ("[explore]\ntSpan = 5, 1\n", "explore", "tSpan"),
    ("[explore]\neta = sin(t); cos(t); t\n", "explore", "eta"),
    ("[explore]\nbogus = 1\n", "explore", "bogus"),
])
def test_errors_name_section_and_key(tmp_path, extra, section, key):
    path = write(tmp_path, BASE + extra)
    with pytest.raises(ProblemFileError) as info:
        load_problem(path)
    msg = str(info.value)
    assert str(path) in msg and f"[{section}]" in msg and key.lower() in msg.lower()


@pytest.mark.parametrize("text,section,key", [
    (BASE.replace("f = x2; -x1\n", ""), "system", "f"),
    (BASE.replace("f = x2; -x1", "f = x2"), "system", "f"),
    (BASE.replace("g = 0; 1", "g = 0, 1; 1, 0"), "system", "g"),
    (BASE.replace("R = 1", "R = -1"), "cost", "R"),
    (BASE.replace("q = x1^2 + x2^2", "q = x3^2"), "cost", "q"),
])
def test_dimension_checks(tmp_path, text, section, key):
    with pytest.raises(ProblemFileError, match=rf"\[{section}\] {key}"):
        load_problem(write(tmp_path, text))


def test_dump_round_trip(tmp_path):
    p = oscillator_problem()
    path = tmp_path / "o.prob"
    dump_problem(p, path, d=2)
    pf = load_problem(path)
    assert pf.d == 2 and pf.problem.f == p.f and pf.problem.q == p.q


def test_solve_mb_then_eval(tmp_path, capsys):
    out = tmp_path / "u.ctl"
    assert main(["solve-mb", "--problem", str(PROBLEMS / "oscillator.prob"), "--out", str(out)]) == 0
    assert out.exists()
    report = capsys.readouterr().out
    assert "converged" in report and "rank" in report
    assert main(["eval", "--controller", str(out), "--x", "0,0"]) == 0
    assert "u = 0\n" in capsys.readouterr().out


def test_simulate_cost(tmp_path, capsys):
    out = tmp_path / "u.ctl"
    main(["solve-mb", "--problem", str(PROBLEMS / "oscillator_explore.prob"), "--degree", "1",
          "--out", str(out)])
    capsys.readouterr()
    csv = tmp_path / "cl.csv"
    rc = main(["simulate", "--problem", str(PROBLEMS / "oscillator.prob"), "--controller", str(out),
               "--x0=-3,2", "--tf", "5", "--cost", "--out", str(csv)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "J = " in text
    assert csv.read_text().splitlines()[0] == "t,x1,x2,u1,cost_so_far"


def test_solve_mf_without_exploration(tmp_path, capsys):
    p = scalar_lqr_problem()
    log = synthesize_log(p, [ex.parse("-0.5*x1")], [[ex.parse("0")]], np.array([[1.0]]), (0, 2))
    data = tmp_path / "d.csv"
    write_trajectories(log, data)
    rc = main(["solve-mf", "--data", str(data), "--n", "1", "--m", "1", "--q", "x1^2", "--R", "1",
               "--out", str(tmp_path / "u.ctl")])
    assert rc == 2
    assert "persistently exciting" in capsys.readouterr().err


def test_solve_mf_ok(tmp_path, capsys):
    p = scalar_lqr_problem()
    log = synthesize_log(p, [ex.parse("-0.5*x1")], [[ex.parse("sin(7*t)+sin(1.1*t)")]],
                         np.array([[1.0]]), (0, 10))
    data = tmp_path / "d.csv"
    write_trajectories(log, data)
    out = tmp_path / "u.ctl"
    assert main(["solve-mf", "--data", str(data), "--n", "1", "--m", "1", "--q", "x1^2", "--R", "1",
                 "--stride", "2", "--out", str(out)]) == 0
    assert ctl.load(out).W[0, 0] == pytest.approx(-1.0, abs=2e-2)


def test_input_errors_exit_1(tmp_path, capsys):
    assert main(["solve-mb", "--problem", str(tmp_path / "missing.prob"), "--out", "x"]) == 1
    bad = write(tmp_path, BASE.replace("R = 1", "R = 1, 2"))
    assert main(["solve-mb", "--problem", str(bad), "--out", str(tmp_path / "u")]) == 1
    assert "[cost] R" in capsys.readouterr().err
    c = tmp_path / "c.ctl"
    c.write_text("garbage\n")
    assert main(["eval", "--controller", str(c), "--x", "1"]) == 1


def test_non_convergence_exit_2(tmp_path, capsys):
    out = tmp_path / "u.ctl"
    rc = main(["solve-mb", "--problem", str(PROBLEMS / "oscillator.prob"), "--max-iter", "1",
               "--out", str(out)])
    assert rc == 2 and out.exists()
    assert "NOT converged" in capsys.readouterr().out


def test_bench_scalar(tmp_path, capsys):
    rc = main(["bench", "scalar", "--mode", "mf", "--degree", "1", "--out", str(tmp_path / "s.ctl"),
               "--trajectory", str(tmp_path / "s.csv")])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["mode", "d", "J(x0)", "wall-seconds", "iterations"]
    assert (tmp_path / "s.ctl").exists() and (tmp_path / "s.csv").exists()


def test_help_documents_flags(capsys):
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    for name, p in sub.items():
        text = " ".join(p.format_help().split())
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text
        if name == "solve-mb":
            assert "(default: 1, or the problem file's value)" in text
        if name == "bench":
            assert "default: 0" in text
