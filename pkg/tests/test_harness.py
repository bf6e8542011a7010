import csv
import io
import json

import pytest

from introsect import cli
from introsect.directory import serialize, synthetic_snapshot
from introsect.harness import (TRACE_HEADER, ConfigError, ExperimentConfig, build_world, load_config,
                               run_experiment, run_sweep, validate_trace)
from introsect.observer import PseudonymKey


def small(**over):
    base = {"network.relay_count": 80, "network.circuit_population": 600}
    base.update(over)
    return ExperimentConfig().with_overrides(**base)


def test_config_round_trip(tmp_path):
    cfg = small(seed=9, **{"scenario.time_of_day": 18.0})
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert load_config(p) == cfg


@pytest.mark.parametrize("patch, field", [
    ({"network": {"relay_count": 7}}, "network.relay_count"),
    ({"network": {"bogus": 1}}, "network.bogus"),
    ({"attack": {"inter_trial_delay": 0}}, "inter_trial_delay"),
    ({"scenario": {"time_of_day": 24}}, "scenario.time_of_day"),
    ({"scenario": {"mitigation_interval": -5}}, "scenario.mitigation_interval"),
    ({"network": {"tick": 0}}, "network.tick"),
    ({"wat": 1}, "wat"),
])
def test_invalid_config_names_field(patch, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        ExperimentConfig.from_dict(patch)


def test_invalid_json_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{")
    with pytest.raises(ConfigError):
        load_config(p)


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_noiseless_report(tmp_path):
    out = run_experiment(small(**{"network.intensity": 0.0}), tmp_path)
    rows = read_csv(out["files"]["trials_per_hop.csv"])
    assert [r["node"] for r in rows] == ["EG", "M0", "M1", "IP"]
    assert [r["trials"] for r in rows] == ["1", "1", "1", "1"]
    run = out["run"]
    assert [int(r["consensus_weight"]) for r in rows] == [run.weights[h] for h in ("EG", "M0", "M1", "IP")]


def test_reports_byte_identical_across_keys(tmp_path):
    cfg = small(seed=5)
    run_experiment(cfg, tmp_path / "a", key=PseudonymKey.generate())
    run_experiment(cfg, tmp_path / "b", key=PseudonymKey.generate())
    for name in ("trials_per_hop.csv", "trace.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_reports_leak_nothing(tmp_path):
    key = PseudonymKey.generate()
    cfg = small(seed=6)
    out = run_experiment(cfg, tmp_path, key=key)
    w = build_world(cfg, key)
    secrets = [key.material(), key.material()[:16]] + [r.address.encode() for r in w.snapshot]
    secrets.append(w.service.address.encode())
    for path in out["files"].values():
        blob = path.read_bytes()
        assert not any(s in blob for s in secrets)


def test_trace_matches_results(tmp_path):
    out = run_experiment(small(seed=7), tmp_path)
    rows = read_csv(out["files"]["trace.csv"])
    assert tuple(rows[0]) == TRACE_HEADER
    for r in out["run"].results:
        mine = [x for x in rows if int(x["stage"]) == r.stage]
        assert len(mine) == r.trials + r.failed_trials
    assert validate_trace(out["files"]["trace.csv"].read_text()) == []


def test_validate_trace_catches_corruption():
    good = "stage,trial,anonymity_set_size,intersection_size,status,virtual_time\n" \
           "1,1,10,10,running,0.0\n1,2,8,4,running,31.0\n1,3,5,1,converged,62.0\n"
    assert validate_trace(good) == []
    bad = good.replace("1,2,8,4,running", "1,2,12,11,running")
    props = {p for p, _, _ in validate_trace(bad)}
    assert "monotone_shrinkage" in props
    assert {p for p, _, _ in validate_trace(good.replace("5,1,converged", "5,1,running"))} == {"status_consistency"}
    assert {p for p, _, _ in validate_trace(good.replace("1,1,10,10", "1,1,3,10"))} == {"intersection_within_set"}


def test_fixture_planted_and_weights(tmp_path):
    snap = synthetic_snapshot(40, seed=1)
    p = tmp_path / "consensus.json"
    p.write_text(serialize(snap))
    guard = next(r.id for r in snap if r.eligible("guard"))
    others = [r.id for r in snap if r.id != guard][:3]
    cfg = small(**{"scenario.consensus_fixture": str(p),
                   "scenario.planted": {"EG": guard, "M0": others[0], "M1": others[1], "IP": others[2]},
                   "scenario.hop_weights": {"EG": 9300}})
    w = build_world(cfg)
    assert w.planted["EG"] == guard and w.weight("EG") == 9300
    assert w.intro.hops == (guard, *others)


def test_planted_unknown_relay():
    with pytest.raises(ConfigError, match="planted"):
        build_world(small(**{"scenario.planted": {"EG": "nope"}}))


def test_sweep_bookkeeping():
    rep = run_sweep(small(), "time_of_day", [2.0, 10.0, 18.0], [0, 1])
    assert len(rep["runs"]) == 6
    assert len(rep["rows"]) == 24
    assert set(rep["medians"]) == {2.0, 10.0, 18.0}
    with pytest.raises(ConfigError):
        run_sweep(small(), "moon_phase", [1], [0])
    with pytest.raises(ConfigError):
        run_sweep(small(), "intensity", [], [0])


# -- command line -----------------------------------------------------------------

def test_cli_simulate(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(small().to_dict()))
    assert cli.main(["simulate", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "r")]) == 0
    for name in ("trials_per_hop.csv", "trace.csv", "summary.json"):
        assert (tmp_path / "r" / name).exists()
    assert "reconstructed=" in capsys.readouterr().out


def test_cli_param_override(tmp_path):
    assert cli.main(["simulate", "--param", "network.relay_count=60", "--param", "network.intensity=0",
                     "--param", "network.circuit_population=100", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["config"]["network"]["relay_count"] == 60


def test_cli_concentration(tmp_path, capsys):
    p = tmp_path / "s.json"
    p.write_text(serialize(synthetic_snapshot(50, seed=2)))
    out = tmp_path / "conc.csv"
    assert cli.main(["concentration", "--snapshot", str(p), "--set", "fourteen_eyes",
                     "--set", "five_eyes", "--out", str(out)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "set,p_guard,p_middle,p_all_hops_intro"
    assert lines[1].startswith("fourteen_eyes,") and lines[2].startswith("five_eyes,")
    assert out.read_text().startswith("country,relay_count,guard_mass,middle_mass,in_fourteen_eyes")


def test_cli_validate(tmp_path, capsys):
    t = tmp_path / "trace.csv"
    t.write_text("stage,trial,anonymity_set_size,intersection_size,status,virtual_time\n"
                 "1,1,10,5,running,0.0\n1,2,9,7,running,31.0\n")
    assert cli.main(["validate", "--trace", str(t)]) == 1
    assert "monotone_shrinkage" in capsys.readouterr().err


def test_cli_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["simulate", "--nope"])
    assert exc.value.code == 2
    assert cli.main(["simulate", "--param", "network.relay_count=3"]) == 2
    assert "network.relay_count" in capsys.readouterr().err
    assert cli.main(["concentration", "--snapshot", str(tmp_path / "missing.json")]) == 1
    assert cli.main(["validate", "--trace", str(tmp_path / "missing.csv")]) == 1
