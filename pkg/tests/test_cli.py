import json
import subprocess
import sys
import time

import requests

from fieldlink.cli import main


class TestSimulateCommand:
    def test_builtin_with_out_dir(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["simulate", "live_demo", "--seed", "3", "--out", str(out)])
        assert code == 0
        assert (out / "trace.jsonl").exists()
        assert (out / "summary.csv").exists()
        assert "live_demo" in capsys.readouterr().out

    def test_scenario_file(self, tmp_path, capsys):
        path = tmp_path / "s.ini"
        path.write_text("[session]\nname = mini\nduration_s = 20\ndrain_s = 5\n")
        assert main(["simulate", str(path)]) == 0
        assert "mini" in capsys.readouterr().out


class TestMetricsCommand:
    def test_recompute_from_trace(self, tmp_path, capsys):
        out = tmp_path / "run"
        main(["simulate", "live_demo", "--seed", "3", "--out", str(out)])
        capsys.readouterr()
        assert main(["metrics", str(out / "trace.jsonl")]) == 0
        text = capsys.readouterr().out
        assert "live_demo" in text and "expected" in text

    def test_corrupt_trace_fails_with_offset(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"format": "fieldlink-trace", "version": 1}\n{"t": 5, broken\n')
        assert main(["metrics", str(bad)]) == 2
        assert "byte" in capsys.readouterr().err


class TestReplayCommand:
    def test_replay_prints_identical_metrics(self, tmp_path, capsys):
        out = tmp_path / "run"
        main(["simulate", "live_demo", "--seed", "3", "--out", str(out)])
        first = capsys.readouterr().out.splitlines()
        assert main(["replay", str(out / "trace.jsonl"), "--speed", "50"]) == 0
        second = capsys.readouterr().out.splitlines()
        assert [l for l in first if l.startswith("live_demo")] == [
            l for l in second if l.startswith("live_demo")
        ]


class TestServeCommand:
    def test_serve_subprocess_end_to_end(self, tmp_path):
        scenario = tmp_path / "s.ini"
        scenario.write_text("[session]\nname = served\nduration_s = 30\ndrain_s = 5\n")
        proc = subprocess.Popen(
            [sys.executable, "-m", "fieldlink.cli", "serve", str(scenario), "--live",
             "--speed", "100", "--addr", "127.0.0.1:8971"],
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
        )
        try:
            deadline = time.time() + 15
            body = None
            while time.time() < deadline:
                try:
                    body = requests.get("http://127.0.0.1:8971/operators", timeout=2).json()
                    if body["operators"]:
                        break
                except requests.RequestException:
                    time.sleep(0.1)
            assert body is not None and body["schema"] == "fieldlink-gateway/1"
            assert body["operators"][0]["op_id"] == "op-1"
        finally:
            proc.terminate()
            proc.wait(timeout=10)
