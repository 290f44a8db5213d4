import subprocess
import sys

import pytest

from kalnat.cli import main


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["run", "--epochs", "1", "--alpha", "0.5", "--out", str(out),
                 "--checkpoint", str(out / "final.ckpt")])
    assert code == 0
    assert "final_accuracy=" in capsys.readouterr().out
    assert (out / "metrics.csv").exists() and (out / "summary.txt").exists()
    assert "alpha = 0.5" in (out / "summary.txt").read_text()
    assert (out / "final.ckpt").read_text().startswith("KALNAT-CKPT v1\n")


def test_run_from_config_file_and_resume(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("epochs = 2\nbackend = Diagonal\n")
    ck = tmp_path / "mid.ckpt"
    assert main(["run", "--config", str(cfg), "--max-steps", "5", "--checkpoint", str(ck)]) == 0
    assert main(["run", "--config", str(cfg), "--resume", str(ck)]) == 0
    assert "steps=19" in capsys.readouterr().out.splitlines()[-1]


def test_run_divergence_exit_code(tmp_path):
    assert main(["run", "--optimizer", "SGD", "--lr", "1e9", "--epochs", "1", "--out", str(tmp_path)]) == 1


@pytest.mark.parametrize("argv", [
    ["run", "--alpha", "-1"],
    ["run", "--shots", "3"],
    ["run", "--alpha", "abc"],
    ["sweep", "--vary", "alpha"],
    ["sweep", "--vary", "colour=red"],
])
def test_config_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_bad_checkpoint_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_text("not a checkpoint\n")
    assert main(["run", "--resume", str(bad)]) == 2
    assert "magic" in capsys.readouterr().err


def test_missing_config_file_exit_2(tmp_path):
    assert main(["run", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_sweep_prints_table_and_csv(tmp_path, capsys):
    out = tmp_path / "s.csv"
    code = main(["sweep", "--epochs", "1", "--vary", "alpha=0,0.5", "--vary", "ood_fraction=0.5",
                 "--seeds", "0,1", "--out", str(out)])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "alpha\tood_fraction=0.5"
    assert out.read_text().startswith("alpha,ood_fraction,median_accuracy")


def test_verify_command(capsys):
    assert main(["verify", "--instances", "10", "--fisher-samples", "100000"]) == 0
    out = capsys.readouterr().out
    assert "max mean deviation" in out and out.strip().endswith("verify: PASS")


def test_bench_command(capsys):
    assert main(["bench", "--sizes", "50,200", "--repeats", "2", "--kernel-repeats", "2"]) == 0
    out = capsys.readouterr().out
    assert "Diagonal log-log slope" in out and "Full log-log slope" in out
    assert "kernel\tpython_us\tcompiled_us\tspeedup" in out


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "kalnat.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for name in ("run", "sweep", "verify", "bench"):
        assert name in proc.stdout


def test_missing_subcommand():
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == 2
