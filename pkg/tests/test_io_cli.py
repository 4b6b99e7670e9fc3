import json

import numpy as np
import pytest

from sassc import io
from sassc.cli import main

TINY_ARGS = ["--preset", "tiny"]


def run_cli(argv):
    return main(argv)


def test_canonical_json_sorted_and_formatted():
    text = io.canonical_json({"b": 1.5, "a": [True, None, 0.1]})
    assert text == '{"a":[true,null,0.10000000000000001],"b":1.5}\n'


def test_canonical_json_rejects_nonfinite():
    with pytest.raises(ValueError):
        io.canonical_json({"x": float("nan")})
    with pytest.raises(ValueError):
        io.canonical_json({"x": float("inf")})


def test_instance_roundtrip_bytes(tmp_path):
    inst = io.make_instance("tiny")
    path = tmp_path / "inst.json"
    sha1 = io.save_instance(inst, str(path))
    loaded, sha2 = io.load_instance(str(path))
    assert sha1 == sha2
    path2 = tmp_path / "inst2.json"
    io.save_instance(loaded, str(path2))
    assert path.read_bytes() == path2.read_bytes()


def test_instance_roundtrip_regenerates_fields_bitwise(tmp_path):
    inst = io.make_instance("tiny")
    a1, g1, p1 = inst.fields()
    path = tmp_path / "inst.json"
    io.save_instance(inst, str(path))
    loaded, _ = io.load_instance(str(path))
    a2, g2, p2 = loaded.fields()
    assert np.array_equal(a1, a2)
    assert np.array_equal(g1, g2)
    assert np.array_equal(p1, p2)


def test_instance_rejects_nonpositive_ellipticity_bound():
    d = io.template_dict("tiny")
    d["scenarios"]["spec_a"]["clip"] = [0.0, 2.0]
    with pytest.raises(ValueError, match="ellipticity"):
        io.instance_from_dict(d)


def test_nonuniform_bounds_roundtrip(tmp_path):
    d = io.template_dict("tiny")
    n = d["grid"]["n1d"] ** 2
    lo = (-2.0 + 0.01 * np.arange(n)).tolist()
    d["c1"]["lo"] = lo
    inst = io.instance_from_dict(d)
    path = tmp_path / "i.json"
    io.save_instance(inst, str(path))
    loaded, _ = io.load_instance(str(path))
    np.testing.assert_array_equal(loaded.c1_lo, np.asarray(lo))
    path2 = tmp_path / "i2.json"
    io.save_instance(loaded, str(path2))
    assert path.read_bytes() == path2.read_bytes()


def test_explicit_target_array_roundtrip(tmp_path):
    d = io.template_dict("tiny")
    n = d["grid"]["n1d"] ** 2
    d["y_D"] = {"array": np.linspace(-0.1, 0.1, n).tolist()}
    inst = io.instance_from_dict(d)
    assert inst.y_spec is None
    path = tmp_path / "i.json"
    io.save_instance(inst, str(path))
    loaded, _ = io.load_instance(str(path))
    np.testing.assert_array_equal(loaded.y_target, inst.y_target)


def test_generate_deterministic_sha(tmp_path):
    out1 = tmp_path / "a.json"
    out2 = tmp_path / "b.json"
    assert run_cli(["generate", *TINY_ARGS, "--out", str(out1)]) == 0
    assert run_cli(["generate", *TINY_ARGS, "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_generate_rejects_bad_preset(tmp_path):
    assert run_cli(["generate", "--preset", "tiny", "--n1d", "0",
                    "--out", str(tmp_path / "x.json")]) == 4


def test_solve_certify_pipeline(tmp_path):
    inst_path = tmp_path / "inst.json"
    run_dir = tmp_path / "run"
    assert run_cli(["generate", *TINY_ARGS, "--out", str(inst_path)]) == 0
    assert run_cli(["solve", "--instance", str(inst_path), "--out", str(run_dir)]) == 0
    for name in ("primal.json", "dual.json", "report.json"):
        assert (run_dir / name).exists()
    report = json.loads((run_dir / "report.json").read_text())
    assert report["status"] == "converged"
    assert "instance_sha256" in report and "seed" in report
    assert "wall_time" not in json.dumps(report)

    kkt_out = tmp_path / "kkt.json"
    code = run_cli(["certify", "--instance", str(inst_path),
                    "--primal", str(run_dir / "primal.json"),
                    "--dual", str(run_dir / "dual.json"),
                    "--out", str(kkt_out)])
    assert code == 0
    assert kkt_out.exists()
    assert (tmp_path / "kkt.csv").exists()


def test_solve_exit_codes(tmp_path):
    inst_path = tmp_path / "inst.json"
    run_cli(["generate", *TINY_ARGS, "--out", str(inst_path)])
    assert run_cli(["solve", "--instance", str(tmp_path / "nope.json"),
                    "--out", str(tmp_path / "o")]) == 4
    assert run_cli(["solve", "--instance", str(inst_path), "--max-iters", "1",
                    "--out", str(tmp_path / "o2")]) == 2


def test_solve_infeasible_exit_code(tmp_path):
    d = io.template_dict("tiny")
    d["mode"] = "hard"
    d["scenarios"]["spec_psi"] = {"baseline": -1.0, "modes": [], "clip": None}
    inst = io.instance_from_dict(d)
    path = tmp_path / "bad.json"
    io.save_instance(inst, str(path))
    # lower the divergence threshold indirectly by trusting the default;
    # the multiplier blow-up fires well before the iteration cap
    code = run_cli(["solve", "--instance", str(path), "--max-iters", "400000",
                    "--out", str(tmp_path / "o")])
    assert code == 3


def test_certify_zero_dual_fails(tmp_path):
    inst_path = tmp_path / "inst.json"
    run_dir = tmp_path / "run"
    run_cli(["generate", *TINY_ARGS, "--out", str(inst_path)])
    run_cli(["solve", "--instance", str(inst_path), "--out", str(run_dir)])
    dual = json.loads((run_dir / "dual.json").read_text())
    for key in ("adjoint", "obstacle", "nonanticipativity"):
        dual[key] = (np.zeros_like(np.asarray(dual[key]))).tolist()
    zero_dual = tmp_path / "zero_dual.json"
    zero_dual.write_text(json.dumps(dual))
    code = run_cli(["certify", "--instance", str(inst_path),
                    "--primal", str(run_dir / "primal.json"),
                    "--dual", str(zero_dual)])
    assert code == 1


def test_certify_corrupt_json(tmp_path):
    inst_path = tmp_path / "inst.json"
    run_cli(["generate", *TINY_ARGS, "--out", str(inst_path)])
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run_cli(["certify", "--instance", str(inst_path),
                    "--primal", str(bad), "--dual", str(bad)]) == 4


def test_certify_dimension_mismatch(tmp_path):
    inst_path = tmp_path / "inst.json"
    run_dir = tmp_path / "run"
    run_cli(["generate", *TINY_ARGS, "--out", str(inst_path)])
    run_cli(["solve", "--instance", str(inst_path), "--out", str(run_dir)])
    other = tmp_path / "other.json"
    run_cli(["generate", *TINY_ARGS, "--n1d", "3", "--out", str(other)])
    assert run_cli(["certify", "--instance", str(other),
                    "--primal", str(run_dir / "primal.json"),
                    "--dual", str(run_dir / "dual.json")]) == 4


def test_mms_cli(tmp_path):
    assert run_cli(["mms", "--levels", "7,15,31", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "mms.csv").read_text()
    assert text.splitlines()[0] == "n1d,h,max_error,rate"


def test_homotopy_cli_short_schedule(tmp_path):
    inst_path = tmp_path / "inst.json"
    run_cli(["generate", *TINY_ARGS, "--out", str(inst_path)])
    assert run_cli(["homotopy", "--instance", str(inst_path),
                    "--schedule", "1,10", "--out", str(tmp_path / "h")]) == 4


def test_compare_oracle_cli(tmp_path):
    inst_path = tmp_path / "inst.json"
    run_cli(["generate", *TINY_ARGS, "--out", str(inst_path)])
    assert run_cli(["compare-oracle", "--instance", str(inst_path),
                    "--out", str(tmp_path / "c")]) == 0
    data = json.loads((tmp_path / "c" / "compare_oracle.json").read_text())
    assert data["dx1"] <= 1e-5
    assert data["relative_objective_difference"] <= 1e-7


def test_solve_history_csv(tmp_path):
    inst_path = tmp_path / "inst.json"
    run_cli(["generate", *TINY_ARGS, "--out", str(inst_path)])
    hist = tmp_path / "hist.csv"
    assert run_cli(["solve", "--instance", str(inst_path),
                    "--history-csv", str(hist), "--out", str(tmp_path / "r")]) == 0
    lines = hist.read_text().splitlines()
    assert lines[0] == ("iteration,r1,r2,r3,r3p,r4,r5_sign,r5_feas,r5_comp,"
                       "objective,dual_value")
    assert len(lines) >= 2


def test_ph_and_barrier_algorithms_via_cli(tmp_path):
    inst_path = tmp_path / "inst.json"
    run_cli(["generate", *TINY_ARGS, "--out", str(inst_path)])
    assert run_cli(["solve", "--instance", str(inst_path), "--algorithm", "ph",
                    "--ph-penalty", "0.05", "--out", str(tmp_path / "ph")]) == 0
    weights = json.loads((tmp_path / "ph" / "ph_weights.json").read_text())
    assert "weights" in weights and "instance_sha256" in weights
    assert run_cli(["solve", "--instance", str(inst_path), "--algorithm", "barrier",
                    "--out", str(tmp_path / "ba")]) == 0


def test_invalid_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("SASSC_THREADS", "zero")
    assert run_cli(["mms", "--levels", "7,15"]) == 4
    monkeypatch.setenv("SASSC_THREADS", "2")
    assert run_cli(["mms", "--levels", "7,15"]) == 0


def test_nonuniform_probabilities_roundtrip(tmp_path):
    d = io.template_dict("tiny")
    d["scenarios"]["probabilities"] = [0.5, 0.3, 0.2]
    inst = io.instance_from_dict(d)
    path = tmp_path / "p.json"
    io.save_instance(inst, str(path))
    loaded, _ = io.load_instance(str(path))
    np.testing.assert_array_equal(loaded.scenarios.p, np.array([0.5, 0.3, 0.2]))
    assert abs(loaded.scenarios.p.sum() - 1.0) <= 1e-14
    path2 = tmp_path / "p2.json"
    io.save_instance(loaded, str(path2))
    assert path.read_bytes() == path2.read_bytes()


def test_solve_rejects_nonelliptic_instance_file(tmp_path):
    d = io.template_dict("tiny")
    d["scenarios"]["spec_a"]["clip"] = [0.0, 2.0]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(d))
    assert run_cli(["solve", "--instance", str(bad), "--out", str(tmp_path / "o")]) == 4


def test_homotopy_cli_success_path(tmp_path):
    inst_path = tmp_path / "inst.json"
    run_cli(["generate", "--preset", "default", "--n1d", "8", "--scenarios", "4",
             "--out", str(inst_path)])
    out = tmp_path / "hom"
    code = run_cli(["homotopy", "--instance", str(inst_path),
                    "--schedule", "1,10,100,1000,10000", "--out", str(out)])
    assert code == 0
    csv_lines = (out / "homotopy.csv").read_text().splitlines()
    assert csv_lines[0] == "alpha_prime,Ez2,dist_x1,objective,kkt_max"
    assert len(csv_lines) == 6
    payload = json.loads((out / "homotopy.json").read_text())
    assert payload["slope"] <= -0.9
    assert "instance_sha256" in payload
