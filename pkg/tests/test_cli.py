import json

import pytest

from isaclab.cli import bundled_patterns, main, overhead_rows

NUMER = "64,8,15000"
T = 72 / (64 * 15e3)


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def test_gen_prints_pattern(capsys):
    code, out = run(capsys, "gen", "--scheme", "C", "--s-sub", "4")
    assert code == 0
    doc = json.loads(out)
    assert doc["offsets"] == [0, 2, 1, 3] and doc["scheme"] == "C"


def test_gen_invalid_slope_is_an_error(capsys):
    code, _ = run(capsys, "gen", "--scheme", "D", "--s-sub", "4", "--p", "2")
    assert code == 2


def test_gen_expand(tmp_path, capsys):
    out = tmp_path / "p.json"
    assert run(capsys, "gen", "--scheme", "E", "--s-sub", "4", "--expand", "8",
               "--out", str(out))[0] == 0
    doc = json.loads(out.read_text())
    assert doc["N"] == 8 and doc["irregular"]["kind"] == "irregular"


@pytest.mark.parametrize("scheme,expect", [("A", 1), ("C", 0)])
def test_check_exit_codes(tmp_path, capsys, scheme, expect):
    p = tmp_path / "p.json"
    run(capsys, "gen", "--scheme", scheme, "--s-sub", "4", "--out", str(p))
    code, out = run(capsys, "check", str(p), "--oracle", "--n", "16")
    assert code == expect
    doc = json.loads(out)
    assert doc["agree"] and doc["check"]["pass"] is (expect == 0)


def test_bundled_patterns_pass_with_oracle(capsys):
    paths = bundled_patterns()
    assert len(paths) >= 10
    for p in paths:
        code, out = run(capsys, "check", "--pattern", str(p), "--oracle")
        assert code == 0, (p.name, out)


def test_missing_file_is_an_error(tmp_path, capsys):
    assert run(capsys, "check", str(tmp_path / "nope.json"))[0] == 2


def test_bench_overhead_table(capsys):
    code, out = run(capsys, "bench-overhead", "--json")
    assert code == 0
    pct = sorted(r["overhead_pct"] for r in json.loads(out))
    assert pct == pytest.approx(sorted([25.11, 6.80, 13.00, 3.00, 8.04, 7.69, 7.14]), abs=0.01)
    flagged = [r for r in overhead_rows(bundled_patterns(), table_only=True) if r["note"]]
    assert len(flagged) == 1 and flagged[0]["N"] == 13


def test_search_cli(capsys):
    code, out = run(capsys, "search", "--family", "comb", "--s-sub", "4", "--m", "1:3")
    assert code == 0
    hits = json.loads(out)
    assert hits and hits[0]["res"] == min(h["res"] for h in hits)


def _scene(tmp_path, targets, snr=None):
    p = tmp_path / "scene.json"
    p.write_text(json.dumps({"targets": targets, "snr_db": snr}))
    return p


def _pattern(tmp_path, capsys, scheme="D"):
    p = tmp_path / f"{scheme}.json"
    run(capsys, "gen", "--scheme", scheme, "--s-sub", "4", "--out", str(p))
    return p


def test_simulate_writes_run_directory(tmp_path, capsys):
    pat = _pattern(tmp_path, capsys)
    scene = _scene(tmp_path, [{"tau_s": 3 / (64 * 15e3), "doppler_hz": 1 / (16 * T)}], 30)
    out = tmp_path / "run"
    code, _ = run(capsys, "simulate", "--pattern", str(pat), "--scene", str(scene),
                  "--numerology", NUMER, "--algo", "fft2d", "--out", str(out))
    assert code == 0
    for name in ("config.json", "spectrum.csv", "spectrum.json", "report.json", "log.txt",
                 "snapshot.npy"):
        assert (out / name).exists()
    rep = json.loads((out / "report.json").read_text())
    assert len(rep["mainlobes"]) == 1 and not rep["missed_targets"]
    assert rep["model_error"] < 1e-10
    assert rep["regions"]


def test_simulate_empty_scene(tmp_path, capsys):
    pat = _pattern(tmp_path, capsys, "C")
    scene = _scene(tmp_path, [], 10)
    out = tmp_path / "run"
    code, _ = run(capsys, "simulate", "--pattern", str(pat), "--scene", str(scene),
                  "--numerology", NUMER, "--algo", "iaa", "--out", str(out))
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["mainlobes"] == [] and rep["missed_targets"] == []


def test_simulate_delay_sum(tmp_path, capsys):
    pat = _pattern(tmp_path, capsys, "A")
    out = tmp_path / "run"
    code, _ = run(capsys, "simulate", "--pattern", str(pat), "--numerology", NUMER,
                  "--algo", "delay-sum", "--out", str(out))
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["side_peaks"] and rep["predicted"]


def test_simulate_is_deterministic_across_workers(tmp_path, capsys):
    pat = _pattern(tmp_path, capsys, "C")
    scene = _scene(tmp_path, [{"tau_s": 5 / (64 * 15e3), "doppler_hz": -1 / (16 * T),
                               "alpha_re": 0.8, "alpha_im": 0.1}], 20)
    reps = []
    for w in ("1", "4"):
        out = tmp_path / f"run{w}"
        run(capsys, "simulate", "--pattern", str(pat), "--scene", str(scene), "--numerology",
            NUMER, "--algo", "iaa", "--grid-tau-step", str(1 / (64 * 15e3 * 8)),
            "--seed", "7", "--workers", w, "--out", str(out))
        reps.append((out / "report.json").read_bytes())
    assert reps[0] == reps[1]


def test_simulate_missed_target_exit_code(tmp_path, capsys):
    pat = _pattern(tmp_path, capsys, "D")
    # delay far beyond the CP with plain CP removal and a strict threshold
    scene = _scene(tmp_path, [{"tau_s": 40 / (64 * 15e3)}])
    code, _ = run(capsys, "simulate", "--pattern", str(pat), "--scene", str(scene),
                  "--numerology", NUMER, "--algo", "fft2d", "--threshold-db", "-1",
                  "--out", str(tmp_path / "run"))
    assert code == 1
