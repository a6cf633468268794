import json
import subprocess
import sys

import pytest

from splitbench import __version__
from splitbench.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def plan_rows(text):
    lines = text.strip().splitlines()
    assert lines[0].split()[:3] == ["split", "latency_s", "throughput_img_s"]
    return [line.split() for line in lines[1:]]


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.strip() == f"splitbench {__version__}"


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for name in ("profile", "plan", "worker", "orchestrate", "sweep", "pareto", "report"):
        assert name in out


def test_no_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_profile_list(capsys):
    code, out, _ = run(capsys, "profile", "list")
    assert code == 0
    assert set(out.split()) == {"alexnet", "inceptionv3", "mobilenetv2", "resnet18", "resnet50", "vgg16"}


def test_plan_bundled_profile_has_a_row_per_split(capsys):
    code, out, _ = run(capsys, "plan", "--model", "mobilenetv2", "--devices", "pi,pi")
    assert code == 0
    rows = plan_rows(out)
    assert [r[0] for r in rows] == [f"P{i}" for i in range(1, 21)]
    assert any(r[-1] == "*" for r in rows)


def test_plan_two_block_model_single_pareto_row(capsys, tmp_path):
    prof = tmp_path / "two.profile"
    assert run(capsys, "profile", "synth", "--blocks", "2", "--total", "4.1", "--out", str(prof))[0] == 0
    code, out, _ = run(capsys, "plan", "--model", str(prof), "--devices", "pi,pi")
    assert code == 0
    rows = plan_rows(out)
    assert len(rows) == 1
    assert rows[0][0] == "P1" and rows[0][-1] == "*"
    assert float(rows[0][1]) == pytest.approx(4.1)
    # two stages of 2.05 s each, batch of 8
    assert float(rows[0][2]) == pytest.approx(8 / 2.05, rel=1e-4)


def test_plan_json_and_network_shift(capsys, tmp_path):
    prof = tmp_path / "fh.profile"
    run(capsys, "profile", "synth", "--blocks", "12", "--shape", "front_heavy", "--total", "1.2",
        "--decay", "0.7", "--input-bytes", "600000", "--out", str(prof))

    def argmax(*extra):
        code, out, _ = run(capsys, "plan", "--model", str(prof), "--devices", "pi,fast:cpu:0.05", "--json", *extra)
        assert code == 0
        doc = json.loads(out)
        best = max(doc, key=lambda d: d["throughput"])
        return best["splits"][0]

    assert argmax("--net", "delay=100ms,bw=5Mbit") >= argmax()


def test_plan_bad_profile_is_validation_error(capsys, tmp_path):
    bad = tmp_path / "bad.profile"
    bad.write_text("model bad\nbatch 8\ninput_bytes 10\nblock b1 cpu=-1 out=5\n")
    code, _, err = run(capsys, "plan", "--model", str(bad))
    assert code == 3
    assert "invalid input" in err and "b1" in err


def test_plan_missing_profile_is_validation_error(capsys, tmp_path):
    code, _, _ = run(capsys, "plan", "--model", str(tmp_path / "nope.profile"))
    assert code == 3


def test_plan_wrong_link_count_is_usage_error(capsys):
    code, _, _ = run(capsys, "plan", "--model", "resnet18", "--devices", "pi,pi",
                     "--net", "delay=1ms;delay=2ms;delay=3ms")
    assert code == 2


def test_pareto_command(capsys, tmp_path):
    src = tmp_path / "pts.csv"
    src.write_text("label,latency,throughput\na,1.0,5.0\nb,2.0,4.0\nc,0.5,6.0\n")
    code, out, _ = run(capsys, "pareto", str(src))
    assert code == 0
    assert out.splitlines() == ["label,latency,throughput", "c,0.5,6.0"]
    src.write_text("a,1.0,5.0\nb,2.0,6.0\nc,2.0,1.0\n")
    code, out, _ = run(capsys, "pareto", str(src))
    assert out.splitlines() == ["a,1.0,5.0", "b,2.0,6.0"]


def test_pareto_rejects_bad_rows(capsys, tmp_path):
    src = tmp_path / "pts.csv"
    src.write_text("a,1.0,5.0\nb,x,4.0\n")
    assert run(capsys, "pareto", str(src))[0] == 3


def test_sweep_and_report(capsys, tmp_path):
    prof = tmp_path / "m.profile"
    run(capsys, "profile", "synth", "--blocks", "3", "--total", "0.09", "--out", str(prof))
    csv_path = tmp_path / "r.csv"
    code, _, _ = run(capsys, "sweep", "--model", str(prof), "--repetitions", "1", "--batches", "3",
                     "--kernel", "sleep", "--out", str(csv_path))
    assert code == 0
    assert len(csv_path.read_text().splitlines()) == 3
    code, out, _ = run(capsys, "report", str(csv_path), "--model", str(prof), "--threshold", "0.5")
    assert code == 0
    assert out.splitlines()[1].startswith("P1")
    summary = json.loads(out[out.index("{"):])
    assert summary["threshold"] == 0.5
    json_path = tmp_path / "r.json"
    assert run(capsys, "report", str(csv_path), "--format", "json", "--out", str(json_path))[0] == 0
    assert len(json.loads(json_path.read_text())["records"]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "splitbench", "profile", "show", "resnet18"],
                       capture_output=True, text=True, timeout=30)
    assert r.returncode == 0
    assert r.stdout.startswith("resnet18: 14 blocks")
