import json

import numpy as np
import pytest

from patient_queues.cli import EXIT_INPUT, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_OK, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out else None), err


@pytest.fixture
def example_files(tmp_path):
    inst = tmp_path / "inst.json"
    inst.write_text(json.dumps({"lambda": [0.51, 0.51], "mu": [1.0, 0.49]}))
    prof = tmp_path / "prof.json"
    prof.write_text(json.dumps({"profile": [[1.0, 0.0], [1.0, 0.0]]}))
    return inst, prof


def test_rates_from_files(capsys, example_files):
    inst, prof = example_files
    code, out, err = run(capsys, "rates", "--instance", str(inst), "--profile", str(prof))
    assert code == EXIT_OK
    assert out["groups"] == [[0, 1]]
    assert out["rates"] == pytest.approx([1 - 1 / 1.02] * 2, abs=1e-12)
    assert json.loads(err.split("manifest: ", 1)[1])["command"] == "rates"


def test_rates_stable_queue(capsys):
    code, out, _ = run(capsys, "rates", "--instance", "fixture:single-stable")
    assert code == EXIT_OK and out["rates"] == [0.0]


def test_missing_profile_is_noted(capsys, example_files, tmp_path):
    inst, _ = example_files
    code, out, _ = run(capsys, "rates", "--instance", str(inst), "--out-dir", str(tmp_path / "o"))
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert code == EXIT_OK
    assert "no profile given: uniform profile applied" in man["notes"]
    assert man["profile"] == {"generator": "uniform"}
    assert out["instance"]["profile"] == [[0.5, 0.5], [0.5, 0.5]]


def test_malformed_input(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"lambda": [0.5],\n "mu": [1.7]}')
    code, out, err = run(capsys, "rates", "--instance", str(bad))
    assert code == EXIT_INPUT and out is None
    assert f"{bad}:2" in err
    code, _, err = run(capsys, "rates", "--instance", "fixture:nope")
    assert code == EXIT_INPUT and "unknown fixture" in err


def test_profile_dimension_mismatch(capsys, example_files, tmp_path):
    inst, _ = example_files
    prof = tmp_path / "p.json"
    prof.write_text(json.dumps({"profile": [[1.0]]}))
    code, _, _ = run(capsys, "rates", "--instance", str(inst), "--profile", str(prof))
    assert code == EXIT_INPUT


def test_nash_symmetric_and_single(capsys):
    code, out, _ = run(capsys, "nash", "--instance", "symmetric:4")
    assert code == EXIT_OK and out["status"] == "converged" and out["certificate"]["is_nash"]
    assert np.allclose(out["profile"], 0.25)
    code, out, _ = run(capsys, "nash", "--instance", "fixture:single-unstable")
    assert code == EXIT_OK and out["certificate"]["is_nash"]


def test_nash_forced_non_convergence(capsys):
    code, out, _ = run(capsys, "nash", "--instance", "random:3:2:1.0:11", "--max-rounds", "1")
    assert code == EXIT_NONCONVERGED and out["status"] == "not converged"


def test_poa_examples(capsys):
    code, out, _ = run(capsys, "poa", "--instance", "fixture:example")
    assert code == EXIT_OK and out["bound"] == 1.0
    assert [r["value"] for r in out["waterfill"]] == pytest.approx([1 / 0.51, 1.13837], abs=1e-5)
    code, out, _ = run(capsys, "poa", "--instance", "fixture:single-unstable")
    assert out["bound"] == pytest.approx(0.5)
    code, out, _ = run(capsys, "poa", "--instance", "symmetric:8:0.05")
    assert out["bound"] == pytest.approx(0.96228, abs=1e-5)


def test_poa_profile_check_and_verify(capsys, example_files):
    inst, prof = example_files
    code, out, _ = run(capsys, "poa", "--instance", str(inst), "--profile", str(prof))
    assert code == EXIT_OK and out["profile_check"] == {"is_nash": False, "bound_holds": None}
    code, out, _ = run(capsys, "poa", "--instance", "symmetric:3", "--verify", "--rescale", "--seeds", "1",
                       "--inits", "uniform")
    assert code == EXIT_OK and out["verify"]["status"] == "stable"
    code, out, _ = run(capsys, "poa", "--instance", "symmetric:3", "--verify", "--seeds", "1")
    assert out["verify"]["status"] == "hypothesis not met"


def test_simulate_check_passes(capsys):
    code, out, _ = run(capsys, "simulate", "--instance", "fixture:example", "--horizon", "1000000", "--check")
    assert code == EXIT_OK and out["check"]["passed"]


def test_simulate_check_failure_exit_code(capsys):
    code, out, _ = run(capsys, "simulate", "--instance", "fixture:example", "--horizon", "20000",
                       "--check", "--tol", "0")
    assert code == EXIT_INVALID and not out["check"]["passed"]


def test_simulate_rejects_zero_horizon(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--instance", "fixture:example", "--horizon", "0"])
    assert exc.value.code == 2
    code, _, _ = run(capsys, "simulate", "--instance", "fixture:example", "--horizon", "1000", "--stride", "3")
    assert code == EXIT_INPUT


def test_simulate_repeat_is_byte_identical(capsys, tmp_path):
    args = ["simulate", "--instance", "fixture:two-group", "--horizon", "50000", "--trials", "2", "--seed", "7"]
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        assert main(args + ["--out-dir", str(d)]) == EXIT_OK
        outs.append({f.name: f.read_bytes() for f in d.iterdir() if f.name != "manifest.json"})
        capsys.readouterr()
    assert outs[0] == outs[1]
    assert set(outs[0]) == {"simulate.json", "summary.json", "trial_000.csv", "trial_001.csv"}
    assert outs[0]["trial_000.csv"].startswith(b"t,T_1,T_2\n")


def test_manifest_records_reproduction_inputs(tmp_path, capsys):
    main(["nash", "--instance", "random:3:2:1.0:4", "--init", "random", "--seed", "5", "--out-dir", str(tmp_path)])
    capsys.readouterr()
    man = json.loads((tmp_path / "manifest.json").read_text())
    for key in ("command", "argv", "version", "seeds", "tolerances", "instance", "profile", "wall_clock_s"):
        assert key in man
    assert man["profile"] == {"generator": "random", "seed": 5}
    assert man["instance"] == {"generator": "random:3:2:1.0:4"}
