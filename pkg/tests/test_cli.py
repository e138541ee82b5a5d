"""CLI integration tests: exit codes, file outputs, determinism."""

import json

from diffarb.cli_app import main


def run(args):
    return main(args)


def test_catalog_list_and_show(capsys):
    assert run(["catalog", "list"]) == 0
    out = capsys.readouterr().out
    assert "sticky_skew" in out and "brownian_motion" in out
    assert run(["catalog", "show", "sticky_skew"]) == 0
    out = capsys.readouterr().out
    assert "kappa" in out
    assert run(["catalog", "show", "unknown_model"]) == 1


def test_classify_catalog_all_hold(tmp_path, capsys):
    code = run(["classify", "--catalog", "sticky_skew", "--params", "r=1.0", "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "classify_sticky_skew.json").read_text())
    assert (rep["nip"], rep["nsa"], rep["nupbr"]) == ("holds", "holds", "holds")
    assert rep["rp"] == "holds"
    assert any(c["id"] == "NIP.ii" for c in rep["reports"])


def test_classify_absorbing_start_exit_1(tmp_path, capsys):
    doc = {
        "model_id": "absorbed_start",
        "state_interval": {"alpha": 0.0, "beta": "inf", "alpha_closed": True},
        "scale": {"node": "affine", "a": 1.0, "b": 0.0},
        "speed": {"ac": {"node": "const", "c": 1.0}, "atoms": [[0.0, "inf"]], "sc": None},
        "x0": 0.0,
        "r": 0.1,
    }
    path = tmp_path / "model.json"
    path.write_text(json.dumps(doc))
    code = run(["classify", "--model", str(path), "--out", str(tmp_path)])
    assert code == 1
    err = capsys.readouterr().err
    assert "absorbing" in err


def test_classify_incomparable_sc_exit_2(tmp_path, capsys):
    staircase = {
        "node": "tabulated",
        "samples": [[0.0, 0.0], [0.25, 0.5], [0.75, 0.5], [1.0, 1.0]],
    }
    doc = {
        "model_id": "sc_mismatch",
        "state_interval": {"alpha": "-inf", "beta": "inf"},
        "scale": {"node": "affine", "a": 1.0, "b": 0.0},
        "speed": {"ac": {"node": "const", "c": 1.0}, "atoms": [], "sc": None},
        "speed_natural": {
            "ac": {"node": "const", "c": 1.0},
            "atoms": [],
            "sc": {
                "base_id": "stair_A",
                "base_cdf": staircase,
                "multiplier": {"node": "const", "c": 1.0},
                "support": [0.0, 1.0],
            },
        },
        "qpp_sc": {
            "base_id": "stair_B",
            "base_cdf": staircase,
            "multiplier": {"node": "const", "c": 1.0},
            "support": [0.0, 1.0],
        },
        "x0": 0.5,
        "r": 1.0,
    }
    path = tmp_path / "model.json"
    path.write_text(json.dumps(doc))
    code = run(["classify", "--model", str(path), "--out", str(tmp_path)])
    assert code == 2
    rep = json.loads((tmp_path / "classify_sc_mismatch.json").read_text())
    assert rep["nip"] == "inconclusive"


def test_classify_malformed_spec_names_field(tmp_path, capsys):
    doc = {"state_interval": {"alpha": 0, "beta": 1}, "scale": {"node": "affine", "a": 1, "b": 0}}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    assert run(["classify", "--model", str(path), "--out", str(tmp_path)]) == 1
    assert "speed" in capsys.readouterr().err


def test_classify_no_model_given(tmp_path, capsys):
    assert run(["classify", "--out", str(tmp_path)]) == 1


def test_classify_determinism_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["classify", "--catalog", "cubed_bm", "--seed", "7", "--out", str(out)]) == 0
    fa, fb = a / "classify_cubed_bm.json", b / "classify_cubed_bm.json"
    assert fa.read_bytes() == fb.read_bytes()


def test_simulate_and_report_round_trip(tmp_path, capsys):
    out = str(tmp_path)
    assert run(["classify", "--catalog", "sticky_reflected_bm", "--params", "r=0.0,rho=0.0", "--out", out]) == 0
    code = run(
        [
            "simulate",
            "--catalog",
            "sticky_reflected_bm",
            "--params",
            "r=0.0,rho=0.0",
            "--paths",
            "2000",
            "--grid",
            "128",
            "--out",
            out,
        ]
    )
    assert code == 0
    sim = json.loads((tmp_path / "simulate_sticky_reflected_bm.json").read_text())
    assert sim["seed"] == 42
    assert (tmp_path / "kladder_sticky_reflected_bm.csv").exists()
    assert (tmp_path / "payoffs_sticky_reflected_bm.csv").exists()
    kladder = (tmp_path / "kladder_sticky_reflected_bm.csv").read_text().splitlines()
    assert kladder[0] == "grid_size,K_estimate,ratio_to_previous"
    # reflected Bachelier at zero rate: empirical arbitrage must be flagged
    strat = [s for s in sim["strategies"] if s["name"].startswith("post_hitting_hold")][0]
    assert strat["wilson95"][0] > 0
    assert strat["min_payoff"] >= -2 * strat["grid_step"]

    capsys.readouterr()
    assert run(["report", "--out", out]) == 0
    text = capsys.readouterr().out
    assert "sticky_reflected_bm" in text
    table = (tmp_path / "report_table.csv").read_text().splitlines()
    assert table[0].startswith("model_id,r,nip,nsa,nupbr,rp")
    row = [ln for ln in table[1:] if ln.startswith("sticky_reflected_bm")][0]
    assert ",fails," in row  # NIP fails for the reflected zero-rate model
    assert "True" in row  # and the empirical arbitrage column agrees


def test_simulate_determinism_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert (
            run(
                [
                    "simulate",
                    "--catalog",
                    "brownian_motion",
                    "--params",
                    "r=0.2",
                    "--paths",
                    "1500",
                    "--grid",
                    "96",
                    "--seed",
                    "11",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
    assert (a / "simulate_brownian_motion.json").read_bytes() == (
        b / "simulate_brownian_motion.json"
    ).read_bytes()
    assert (a / "kladder_brownian_motion.csv").read_bytes() == (
        b / "kladder_brownian_motion.csv"
    ).read_bytes()


def test_report_empty_dir_exit_1(tmp_path, capsys):
    assert run(["report", "--out", str(tmp_path)]) == 1


def test_simulate_dump_paths_flag(tmp_path):
    code = run(
        [
            "simulate", "--catalog", "brownian_motion", "--paths", "300",
            "--grid", "64", "--out", str(tmp_path), "--dump-paths",
        ]
    )
    assert code == 0
    lines = (tmp_path / "paths_brownian_motion.csv").read_text().splitlines()
    assert lines[0] == "path,terminal_u,terminal_value,discarded"
    assert len(lines) == 301


def test_tolerance_overrides_parse_and_apply(tmp_path, capsys):
    code = run(
        [
            "classify", "--catalog", "sticky_reflected_bm", "--params", "r=0.5,rho=1.0",
            "--tol", "eq_rel=1e-6,rel=1e-7", "--out", str(tmp_path),
        ]
    )
    assert code == 0
    assert run(["classify", "--catalog", "brownian_motion", "--tol", "bogus_key=1", "--out", str(tmp_path)]) == 1
    assert "bogus_key" in capsys.readouterr().err


def test_model_file_with_catalog_reference(tmp_path):
    doc = {"catalog": "brownian_motion", "params": {"r": 0.1}}
    path = tmp_path / "ref.json"
    path.write_text(json.dumps(doc))
    assert run(["classify", "--model", str(path), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "classify_brownian_motion.json").read_text())
    assert rep["r"] == 0.1


def test_env_variable_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("DIFFARB_SEED", "123")
    monkeypatch.setenv("DIFFARB_OUT", str(tmp_path))
    assert run(["classify", "--catalog", "brownian_motion"]) == 0
    rep = json.loads((tmp_path / "classify_brownian_motion.json").read_text())
    assert rep["seed"] == 123
