import json
import subprocess
import sys

import pytest

from qnetstack.cli import main
from qnetstack.scenario import (
    ScenarioError,
    bundled_scenarios,
    dump_summary,
    load_scenario,
    parse_scenario,
    run_scenario,
    trace_counters,
)

MINIMAL = """\
schema: qnetstack-scenario/1
name: tiny
seeds: [0, 1]
nodes:
  - {name: A}
  - {name: B}
links:
  - {a: A, b: B, pool_target: 8}
flows:
  - {id: d, protocol: qudp, model: repeater, src: A, dst: B, qubits: 2, state: haar-ref}
expect:
  - {name: delivered, metric: delivery_rate, flow: d, min: 1.0}
  - {name: audit, metric: audit_clean}
"""


class TestParsing:
    def test_minimal(self):
        sc = parse_scenario(MINIMAL)
        assert sc.name == "tiny" and sc.seeds == [0, 1]
        assert [f.id for f in sc.flows] == ["d"]

    def test_bad_probability_names_field_and_line(self):
        text = MINIMAL.replace("pool_target: 8", "pool_target: 8, quantum_loss_p: 1.5")
        with pytest.raises(ScenarioError, match=r"links\[0\]\.quantum_loss_p \(line 8\).*1\.5"):
            parse_scenario(text)

    def test_unknown_node(self):
        with pytest.raises(ScenarioError, match=r"flows\[0\]\.dst.*'C'"):
            parse_scenario(MINIMAL.replace("dst: B", "dst: C"))

    def test_missing_field(self):
        with pytest.raises(ScenarioError, match="missing required field 'nodes'"):
            parse_scenario(MINIMAL.replace("nodes:\n  - {name: A}\n  - {name: B}\n", ""))

    def test_wrong_schema(self):
        with pytest.raises(ScenarioError, match="schema"):
            parse_scenario(MINIMAL.replace("/1", "/9"))

    def test_not_yaml(self):
        with pytest.raises(ScenarioError, match="not valid YAML"):
            parse_scenario("a: [")

    def test_fault_probability_and_occurrence_exclusive(self):
        text = MINIMAL + "faults:\n  - {match: share, action: lose, probability: 0.5, occurrence: 1}\n"
        with pytest.raises(ScenarioError, match="exclusive"):
            parse_scenario(text)

    @pytest.mark.parametrize("name", sorted(bundled_scenarios()))
    def test_bundled_scenarios_parse(self, name):
        sc = load_scenario(name)
        assert sc.name == name and sc.expect


class TestRuns:
    def test_deterministic(self):
        sc = parse_scenario(MINIMAL)
        a, ta = run_scenario(sc, trace=True)
        b, tb = run_scenario(sc, trace=True)
        assert dump_summary(a) == dump_summary(b)
        assert ta == tb

    def test_seed_changes_noisy_run(self):
        sc = parse_scenario(MINIMAL.replace("pool_target: 8", "pool_target: 8, classical_loss_p: 0.5"))
        _, traces = run_scenario(sc, trace=True)
        assert traces[0] != traces[1]

    def test_trace_counters_match_report(self):
        sc = parse_scenario(MINIMAL)
        summary, traces = run_scenario(sc, trace=True)
        for rep in summary["reports"]:
            assert trace_counters(traces[rep["seed"]]) == rep["counters"]["trace"]
            assert rep["audit"]["protocol_qudits"] == 0

    def test_summary_has_no_wall_clock(self):
        summary, _ = run_scenario(parse_scenario(MINIMAL))
        assert "wall" not in dump_summary(summary)


@pytest.fixture
def ran(tmp_path, capsys):
    out = tmp_path / "plain"
    assert main(["run", "plain_chain", "--out", str(out), "--trace"]) == 0
    capsys.readouterr()
    return out


class TestCli:
    def test_run_writes_artifacts(self, ran):
        assert (ran / "summary.json").exists() and (ran / "timing.json").exists()
        assert sorted(p.name for p in ran.glob("trace-*.txt")) == ["trace-0.txt", "trace-1.txt", "trace-2.txt"]

    def test_verify_green(self, ran, capsys):
        assert main(["verify", str(ran)]) == 0
        assert "FAIL" not in capsys.readouterr().out

    def test_verify_low_fidelity(self, ran, capsys):
        path = ran / "summary.json"
        summary = json.loads(path.read_text())
        summary["aggregate"]["datagrams"]["min_fidelity"] = 0.93
        path.write_text(json.dumps(summary))
        assert main(["verify", str(path)]) == 1
        out = capsys.readouterr().out
        assert "FAIL coherent: min_fidelity=0.93" in out

    def test_verify_unaccounted_pair(self, ran, capsys):
        path = ran / "summary.json"
        summary = json.loads(path.read_text())
        summary["reports"][1]["audit"]["unaccounted_pairs"].append({"link": "R1-R2", "position": 17})
        path.write_text(json.dumps(summary))
        assert main(["verify", str(path)]) == 1
        assert "seed 1: EPR pair unaccounted on link R1-R2 at position 17" in capsys.readouterr().out

    def test_verify_trace_mismatch(self, ran, capsys):
        trace = ran / "trace-0.txt"
        lines = trace.read_text().splitlines(keepends=True)
        trace.write_text("".join(ln for ln in lines if " deliver " not in ln))
        assert main(["verify", str(ran)]) == 1
        assert "FAIL counters" in capsys.readouterr().out

    def test_verify_rejects_non_summary(self, tmp_path):
        bogus = tmp_path / "x.json"
        bogus.write_text("{}")
        assert main(["verify", str(bogus)]) == 2

    def test_failing_expectation_exits_one(self, tmp_path, capsys):
        path = tmp_path / "strict.yaml"
        path.write_text(MINIMAL.replace("min: 1.0}", "min: 1.0}\n  - {name: impossible, metric: min_fidelity, flow: d, min: 1.1}"))
        assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 1
        assert "FAIL impossible" in capsys.readouterr().out

    def test_run_bad_scenario(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text(MINIMAL.replace("pool_target: 8", "pool_target: 8, quantum_loss_p: 1.5"))
        assert main(["run", str(path)]) == 2
        assert "quantum_loss_p" in capsys.readouterr().err

    def test_usage_errors(self):
        assert main([]) == 2
        assert main(["run", "plain_chain", "--seeds", "0"]) == 2
        assert main(["frobnicate"]) == 2

    def test_list(self, capsys):
        assert main(["list-scenarios"]) == 0
        out = capsys.readouterr().out
        assert all(name in out for name in bundled_scenarios())

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "qnetstack.cli", "list-scenarios"],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0 and "plain_chain" in proc.stdout
