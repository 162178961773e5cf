import csv

import pytest

from platoonq.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def values(text):
    return dict(line.split("=", 1) for line in text.strip().splitlines())


def test_onoff_base_case(capsys):
    code, out, _ = run(capsys, "analytic", "onoff", "--lambda", "900", "--mu", "2000",
                       "--gamma1", "30", "--gamma2", "30")
    v = values(out)
    assert code == 0
    assert float(v["mean_queue"]) == pytest.approx(159.0)
    assert float(v["mean_delay_s"]) == pytest.approx(636.0)
    assert float(v["rrr_mean_queue"]) == pytest.approx(159.0, rel=1e-9)


def test_mm1k_sweep_csv(capsys):
    code, out, _ = run(capsys, "analytic", "mm1k", "--lambda", "0.8", "--mu", "1", "--k", "10",
                       "--sweep", "gain=1,2,3")
    rows = list(csv.DictReader(out.splitlines()))
    assert code == 0 and len(rows) == 3
    for r in rows:
        assert float(r["blocking"]) == pytest.approx(0.023492857579905612, abs=1e-12)
    assert float(rows[2]["mean_delay_h"]) == pytest.approx(float(rows[0]["mean_delay_h"]) / 3)


def test_unstable_input_exits_nonzero(capsys):
    code, _, err = run(capsys, "analytic", "mm1", "--lambda", "2000", "--mu", "2000")
    assert code == 2 and "unstable" in err


def test_capacity_commands(capsys, tmp_path):
    groups = tmp_path / "groups.csv"
    groups.write_text("lanes,base_rate,factor,green_ratio\n" + "1,1900,1,0.25\n" * 8)
    code, out, _ = run(capsys, "capacity", "eq1", "--groups", str(groups))
    assert code == 0 and float(values(out)["capacity_vph"]) == 3800.0

    code, out, _ = run(capsys, "capacity", "gain", "--labels", "CRCCRCCCCCCC", "--hlow", "0.75", "--hhigh", "2")
    assert abs(float(values(out)["gain"]) - 1.67) < 0.01

    trace = tmp_path / "trace.txt"
    trace.write_text("3.47\n6.1\n8.9\n11.5\n14.16\n")
    code, out, _ = run(capsys, "capacity", "satflow", "--trace", str(trace), "--n", "5",
                       "--platoon-rate", "4800")
    assert code == 0
    assert 1271 < float(values(out)["saturation_flow_vph"]) < 1272


@pytest.fixture
def grid_file(tmp_path, capsys):
    path = tmp_path / "grid.yaml"
    assert main(["grid", "--out", str(path)]) == 0
    capsys.readouterr()
    return path


def test_fluid_run_and_checks(capsys, grid_file, tmp_path):
    traj = tmp_path / "traj.csv"
    code, _, _ = run(capsys, "fluid", "run", "--scenario", str(grid_file), "--horizon", "600", "--out", str(traj))
    assert code == 0
    with open(traj) as fh:
        assert next(csv.reader(fh)) == ["movement_id", "t", "x"]
    code, out, _ = run(capsys, "fluid", "check", "homogeneity", "--scenario", str(grid_file),
                       "--horizon", "600", "--infinite")
    assert code == 0 and float(values(out)["max_deviation"]) <= 1e-9
    code, out, _ = run(capsys, "fluid", "check", "speedup", "--scenario", str(grid_file),
                       "--horizon", "600", "--factor", "2")
    assert code == 0 and float(values(out)["max_deviation"]) <= 1e-9


def test_simulate_writes_logs(capsys, grid_file, tmp_path):
    out_dir = tmp_path / "sim"
    code, out, _ = run(capsys, "simulate", "--scenario", str(grid_file), "--duration", "600",
                       "--warmup", "120", "--control", "mp6", "--out", str(out_dir))
    assert code == 0
    assert out.splitlines()[0].startswith("replication,total_mean_queue")
    head = (out_dir / "events_r000.csv").read_text().splitlines()[0]
    assert head == "time_s,kind,intersection,from_link,to_link,vehicle_id,phase"


def test_experiment_run_and_report(capsys, grid_file, tmp_path):
    out_dir = tmp_path / "exp"
    code, out, _ = run(capsys, "experiment", "run", "--scenario", str(grid_file), "--gains", "1,2",
                       "--controls", "ft", "--reps", "1", "--duration", "600", "--warmup", "120",
                       "--out", str(out_dir))
    assert code == 0 and "# ratios" in out
    code, again, _ = run(capsys, "experiment", "report", "--in", str(out_dir))
    assert code == 0 and again == out


def test_bad_scenario_reported(capsys, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("links: []\nfoo: 1\n")
    code, _, err = run(capsys, "simulate", "--scenario", str(bad))
    assert code == 2 and "foo" in err
