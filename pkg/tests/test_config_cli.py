import json

import pytest
import yaml

from cvpde.cli import ENV_OUT, _resolve_outdir, main
from cvpde.config import (EXPERIMENTS, ConfigError, config_digest, load_config,
                          validate_config)

BURGERS_DOC = {
    "experiment": "burgers1d",
    "seed": 7,
    "burgers1d": {
        "grid": {"points": 16, "boundary": "periodic"},
        "re": 20.0,
        "initial": {"profile": "sine", "amplitude": 0.2},
        "variance0": 1.0e-4,
        "dt": 1.0e-3,
        "t_end": 4.0e-3,
        "shots": 50,
    },
}


def _write_yaml(path, doc):
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return path


@pytest.fixture
def burgers_cfg(tmp_path):
    return _write_yaml(tmp_path / "burgers.yaml", BURGERS_DOC)


# ---------------------------------------------------------------------------
# Config validation

def test_validate_fills_defaults_and_hashes():
    cfg = validate_config(json.loads(json.dumps(BURGERS_DOC)))
    assert cfg.experiment == "burgers1d"
    assert cfg.seed == 7
    assert cfg.out is None and cfg.threads == 1
    assert cfg.params["scheme"] == "euler1"
    assert cfg.params["controller"] == "off"
    assert cfg.params["epsilon"] == 0.05
    assert cfg.params["grid"]["length"] == 1.0
    assert cfg.params["initial"]["wavenumber"] == 1
    assert len(cfg.sha256) == 64 and int(cfg.sha256, 16) >= 0


def test_bare_yaml_off_token_means_the_controller_choice():
    doc = yaml.safe_load("controller: off\nscheme: trotter2\n")
    assert doc["controller"] is False  # YAML 1.1 booleanizes the bare token
    full = json.loads(json.dumps(BURGERS_DOC))
    full["burgers1d"]["controller"] = doc["controller"]
    cfg = validate_config(full)
    assert cfg.params["controller"] == "off"


def test_bare_yaml_boolean_without_matching_choice_is_refused():
    full = json.loads(json.dumps(BURGERS_DOC))
    full["burgers1d"]["scheme"] = True
    with pytest.raises(ConfigError, match="quote the value"):
        validate_config(full)


def test_digest_is_stable_under_default_elision():
    explicit = json.loads(json.dumps(BURGERS_DOC))
    explicit["threads"] = 1
    explicit["burgers1d"]["scheme"] = "euler1"
    assert validate_config(explicit).sha256 == validate_config(BURGERS_DOC).sha256
    # and changing any resolved value changes the digest
    other = json.loads(json.dumps(BURGERS_DOC))
    other["seed"] = 8
    assert validate_config(other).sha256 != validate_config(BURGERS_DOC).sha256


def test_resolved_round_trips():
    cfg = validate_config(BURGERS_DOC)
    again = validate_config(cfg.resolved())
    assert again.sha256 == cfg.sha256
    assert again.params == cfg.params


def test_config_digest_is_key_order_insensitive():
    assert config_digest({"a": 1, "b": 2}) == config_digest({"b": 2, "a": 1})


@pytest.mark.parametrize("mutate,fragment", [
    (lambda d: d.update(typo=1), "unknown keys"),
    (lambda d: d["burgers1d"].update(viscosity=1.0), "unknown keys"),
    (lambda d: d["burgers1d"].pop("re"), "required key missing"),
    (lambda d: d["burgers1d"].update(re=True), "expected a number"),
    (lambda d: d["burgers1d"].update(scheme="rk4"), "not one of"),
    (lambda d: d["burgers1d"]["grid"].update(points=2), "below minimum"),
    (lambda d: d.update(seed=-1), "below minimum"),
    (lambda d: d["burgers1d"].update(shots=1), "below minimum"),
    (lambda d: d["burgers1d"].update(save_times=[0.1, "x"]), "expected a number"),
    (lambda d: d.update(experiment="heat3d"), "not one of"),
])
def test_validate_rejects_out_of_schema(mutate, fragment):
    doc = json.loads(json.dumps(BURGERS_DOC))
    mutate(doc)
    with pytest.raises(ConfigError, match=fragment):
        validate_config(doc)


def test_validate_rejects_non_mapping_documents():
    with pytest.raises(ConfigError):
        validate_config([1, 2, 3])
    with pytest.raises(ConfigError):
        validate_config({"seed": 1})  # no experiment selected


def test_every_experiment_has_a_schema():
    for exp in EXPERIMENTS:
        with pytest.raises(ConfigError):
            # empty parameter block: required keys (if any) must be reported
            # against the right section, never a KeyError
            validate_config({"experiment": exp})


def test_cavity_defaults():
    cfg = validate_config({"experiment": "cavity", "cavity": {}})
    assert cfg.params["points"] == 128
    assert cfg.params["re"] == 1000.0
    assert cfg.params["dt_omega"] == 0.005
    assert cfg.params["dtau_psi"] == 5.0e-6
    assert cfg.params["tol_frobenius"] == 1.0e-5
    assert cfg.params["lid_velocity"] == 1.0


def test_list_schemas_validated_per_item():
    doc = {"experiment": "stencil",
           "stencil": {"rows": [{"deriv_order": 2, "radius": 1},
                                {"deriv_order": 1, "bogus": 3}]}}
    with pytest.raises(ConfigError, match=r"rows\[1\]"):
        validate_config(doc)
    with pytest.raises(ConfigError, match="at least 1"):
        validate_config({"experiment": "rank-report", "rank-report": {"l_values": []}})


def test_load_config_reports_io_and_yaml_errors(tmp_path, burgers_cfg):
    assert load_config(burgers_cfg).experiment == "burgers1d"
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [unclosed", encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(bad)


# ---------------------------------------------------------------------------
# CLI: solve path

def test_solve_writes_expected_artifacts(tmp_path, burgers_cfg, capsys):
    out = tmp_path / "run"
    assert main(["solve", "--config", str(burgers_cfg), "--out", str(out)]) == 0
    for name in ("field_000.csv", "field_001.csv", "run_summary.csv",
                 "controller.csv", "stats.csv", "manifest.json"):
        assert (out / name).is_file(), name
    assert "wrote" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"] == "burgers1d"
    assert manifest["config_sha256"] == load_config(burgers_cfg).sha256
    assert manifest["save_times"] == [0.0, pytest.approx(4.0e-3)]
    assert "timestamp_utc" in manifest
    assert sorted(manifest["artifacts"]) == manifest["artifacts"]


def test_solve_is_byte_identical_across_runs(tmp_path, burgers_cfg):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["solve", "--config", str(burgers_cfg), "--out", str(out1)]) == 0
    assert main(["solve", "--config", str(burgers_cfg), "--out", str(out2)]) == 0
    for name in ("field_000.csv", "field_001.csv", "run_summary.csv",
                 "controller.csv", "stats.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_seed_override_changes_shots_not_fields(tmp_path, burgers_cfg):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["solve", "--config", str(burgers_cfg), "--out", str(out1)]) == 0
    assert main(["solve", "--config", str(burgers_cfg), "--out", str(out2),
                 "--seed", "8"]) == 0
    assert (out1 / "field_001.csv").read_bytes() == (out2 / "field_001.csv").read_bytes()
    assert (out1 / "stats.csv").read_bytes() != (out2 / "stats.csv").read_bytes()
    assert json.loads((out2 / "manifest.json").read_text())["seed"] == 8


def test_output_directory_precedence(tmp_path, burgers_cfg, monkeypatch):
    env_dir = tmp_path / "from-env"
    flag_dir = tmp_path / "from-flag"
    monkeypatch.setenv(ENV_OUT, str(env_dir))
    assert main(["solve", "--config", str(burgers_cfg)]) == 0
    assert (env_dir / "manifest.json").is_file()
    assert main(["solve", "--config", str(burgers_cfg), "--out", str(flag_dir)]) == 0
    assert (flag_dir / "manifest.json").is_file()

    monkeypatch.delenv(ENV_OUT)
    cfg_dir = tmp_path / "from-config"
    doc = json.loads(json.dumps(BURGERS_DOC))
    doc["out"] = str(cfg_dir)
    cfg_path = _write_yaml(tmp_path / "with-out.yaml", doc)
    assert main(["solve", "--config", str(cfg_path)]) == 0
    assert (cfg_dir / "manifest.json").is_file()

    cfg = load_config(burgers_cfg)
    assert _resolve_outdir(cfg, None).name == "out-burgers1d"


def test_solve_rejects_mismatched_experiment(tmp_path):
    doc = {"experiment": "stencil",
           "stencil": {"rows": [{"deriv_order": 2, "radius": 1}]}}
    path = _write_yaml(tmp_path / "stencil.yaml", doc)
    assert main(["solve", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_solve_exit_codes_for_bad_configs(tmp_path, burgers_cfg):
    assert main(["solve", "--config", str(tmp_path / "nope.yaml")]) == 2
    doc = json.loads(json.dumps(BURGERS_DOC))
    doc["burgers1d"]["re"] = -1.0
    bad = _write_yaml(tmp_path / "bad.yaml", doc)
    assert main(["solve", "--config", str(bad)]) == 2
    assert main(["solve", "--config", str(burgers_cfg), "--threads", "0"]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_solve_divergence_exits_3(tmp_path):
    doc = json.loads(json.dumps(BURGERS_DOC))
    doc["burgers1d"]["initial"] = {"profile": "sine", "amplitude": 1.0e4}
    doc["burgers1d"]["dt"] = 100.0
    doc["burgers1d"]["t_end"] = 1000.0
    path = _write_yaml(tmp_path / "blowup.yaml", doc)
    assert main(["solve", "--config", str(path), "--out", str(tmp_path / "o")]) == 3


def test_solve_io_failure_exits_4(tmp_path, burgers_cfg):
    blocker = tmp_path / "blocked"
    blocker.write_text("a plain file", encoding="utf-8")
    out = blocker / "sub"
    assert main(["solve", "--config", str(burgers_cfg), "--out", str(out)]) == 4


# ---------------------------------------------------------------------------
# CLI: compile path

COMPILE_DOC = {
    "experiment": "kraus-compile",
    "kraus-compile": {
        "modes": 3,
        "levels": 2,
        "dt": 0.05,
        "generator": {"kind": "burgers", "re": 10.0},
    },
}


def test_compile_writes_tree_and_verification(tmp_path):
    path = _write_yaml(tmp_path / "compile.yaml", COMPILE_DOC)
    out = tmp_path / "tree"
    assert main(["compile", "--config", str(path), "--out", str(out)]) == 0
    assert (out / "nodes" / "node_root.bin").is_file()
    assert (out / "nodes" / "node_root_magnitude.csv").is_file()
    tm = json.loads((out / "tree_manifest.json").read_text())
    assert tm["dim"] == 8 and tm["depth"] == 1
    assert tm["leaves"] == {"0": 0, "1": 1}
    verification = (out / "verification.csv").read_text().splitlines()
    assert verification[0] == "check,value,threshold,passed"
    assert all(line.endswith(",true") for line in verification[1:])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["verification_ok"] is True
    assert manifest["lambda_shift"] >= 0.0


def test_compile_fault_injection_exits_5_but_keeps_artifacts(tmp_path):
    doc = json.loads(json.dumps(COMPILE_DOC))
    doc["kraus-compile"]["fault_injection"] = 0.01
    path = _write_yaml(tmp_path / "fault.yaml", doc)
    out = tmp_path / "tree"
    assert main(["compile", "--config", str(path), "--out", str(out)]) == 5
    verification = (out / "verification.csv").read_text().splitlines()
    assert any(line.endswith(",false") for line in verification[1:])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["verification_ok"] is False
    assert manifest["failed_checks"]


def test_compile_rejects_solve_configs(tmp_path, burgers_cfg):
    assert main(["compile", "--config", str(burgers_cfg)]) == 2


# ---------------------------------------------------------------------------
# CLI: report path

def test_report_rank_with_and_without_figures(tmp_path):
    doc = {"experiment": "rank-report", "rank-report": {"l_values": [8, 16]}}
    path = _write_yaml(tmp_path / "rank.yaml", doc)
    out1 = tmp_path / "figs"
    assert main(["report", "--config", str(path), "--out", str(out1)]) == 0
    assert (out1 / "rank.csv").is_file()
    assert (out1 / "rank.png").is_file()
    out2 = tmp_path / "nofigs"
    assert main(["report", "--config", str(path), "--out", str(out2),
                 "--no-figures"]) == 0
    assert (out2 / "rank.csv").is_file()
    assert not (out2 / "rank.png").exists()
    header = (out2 / "rank.csv").read_text().splitlines()[0]
    assert header == "L,d,K,r,R,edges,monomials_per_site,rank_linear,rank_poly,depth"


def test_report_stencil_rows_and_infeasible_exit(tmp_path):
    doc = {"experiment": "stencil",
           "stencil": {"rows": [{"deriv_order": 2, "radius": 1}]}}
    path = _write_yaml(tmp_path / "stencil.yaml", doc)
    out = tmp_path / "s"
    assert main(["report", "--config", str(path), "--out", str(out),
                 "--no-figures"]) == 0
    lines = (out / "stencil.csv").read_text().splitlines()
    assert lines[0] == "deriv_order,radius,offset,coefficient"
    assert len(lines) == 4  # three offsets for radius 1

    bad = {"experiment": "stencil",
           "stencil": {"rows": [{"deriv_order": 4, "radius": 1}]}}
    bad_path = _write_yaml(tmp_path / "bad.yaml", bad)
    assert main(["report", "--config", str(bad_path), "--out", str(out)]) == 2


def test_report_noise_sweep(tmp_path):
    doc = {
        "experiment": "noise-sweep",
        "noise-sweep": {
            "grid": {"points": 12},
            "re": 20.0,
            "initial": {"profile": "sine", "amplitude": 0.3},
            "gammas": [0.0, 0.1, 0.2],
            "dt": 1.0e-3,
            "t_end": 4.0e-3,
        },
    }
    path = _write_yaml(tmp_path / "noise.yaml", doc)
    out = tmp_path / "n"
    assert main(["report", "--config", str(path), "--out", str(out)]) == 0
    lines = (out / "noise.csv").read_text().splitlines()
    assert lines[0] == ("gamma,gamma_bar,t,l2_error_raw,"
                        "l2_error_counterterm,l2_error_richardson")
    assert len(lines) == 1 + 3 * 2  # three rates, two save times
    assert (out / "noise.png").is_file()


def test_report_rejects_solve_configs(tmp_path, burgers_cfg):
    assert main(["report", "--config", str(burgers_cfg)]) == 2
