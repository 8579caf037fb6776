import json
import math
from types import SimpleNamespace

import numpy as np
import pytest

from cvpde.fock import compile_tree, kraus_pair
from cvpde.grid import Boundary, GridSpec, make_field
from cvpde.noise import NoiseRow
from cvpde.reports import (IOFailure, fmt, fmt_dt_max, read_tree_node,
                           write_channel_check, write_controller_csv,
                           write_field_csv, write_manifest, write_noise_csv,
                           write_run_summary, write_scalar_csv,
                           write_stats_csv, write_stencil_csv, write_tree)
from cvpde.sampling import StatsRow


def _step(t, dt, sigma, pa, cum, dt_max=math.inf):
    return SimpleNamespace(t=t, dt_used=dt, sigma_real=sigma,
                           tr_a_rho=complex(sigma, 0.1), p_a=pa, cum_p_a=cum,
                           dt_max_allowed=dt_max)


# ---------------------------------------------------------------------------
# Number rendering

@pytest.mark.parametrize("x", [0.1, 1.0 / 3.0, math.pi, 1e-308, -1.5e17,
                               6.02214076e23, 2.0 ** -52, -0.0])
def test_fmt_round_trips_float64_exactly(x):
    assert float(fmt(x)) == x


def test_fmt_dt_max_sentinel():
    assert fmt_dt_max(math.inf) == "unconstrained"
    assert fmt_dt_max(0.25) == fmt(0.25)


# ---------------------------------------------------------------------------
# Field and scalar tables

def test_field_csv_1d_round_trips(tmp_path):
    grid = GridSpec(extents=(4,), spacing=(0.25,), boundary=Boundary.periodic())
    z = np.array([0.1 + 0.2j, 1.0 / 3.0, -1e-17 + 1j, 0.0])
    var = np.array([0.0, 0.25, 1.0 / 7.0, 2.0])
    state = make_field(grid, z, var=var)
    path = write_field_csv(tmp_path / "f.csv", state)
    lines = path.read_text().splitlines()
    assert lines[0] == "i,x,re_z,im_z,var"
    assert len(lines) == 5
    for k, line in enumerate(lines[1:]):
        i, x, re, im, vv = line.split(",")
        assert int(i) == k
        assert float(x) == grid.coords(0)[k]
        assert float(re) == z[k].real and float(im) == z[k].imag
        assert float(vv) == var[k]


def test_field_csv_2d_is_row_major(tmp_path):
    grid = GridSpec(extents=(3, 4), spacing=(0.1, 0.1), boundary=Boundary.periodic())
    z = np.arange(12, dtype=np.complex128)
    state = make_field(grid, z)
    lines = write_field_csv(tmp_path / "f.csv", state).read_text().splitlines()
    assert lines[0] == "i,j,x,y,re_z,im_z,var"
    first = lines[1].split(",")
    last = lines[-1].split(",")
    assert (first[0], first[1]) == ("0", "0")
    assert (last[0], last[1]) == ("2", "3")
    assert float(last[4]) == 11.0


def test_scalar_csv_checks_count(tmp_path):
    grid = GridSpec(extents=(3, 3), spacing=(0.5, 0.5),
                    boundary=Boundary.cavity(1.0))
    path = write_scalar_csv(tmp_path / "s.csv", grid, np.ones(9))
    assert path.read_text().splitlines()[0] == "i,j,x,y,value"
    with pytest.raises(ValueError):
        write_scalar_csv(tmp_path / "s.csv", grid, np.ones(8))


# ---------------------------------------------------------------------------
# Trace tables

def test_run_summary_and_controller_tables(tmp_path):
    steps = [_step(0.0, 0.1, 0.5, 0.9, 0.9),
             _step(0.1, 0.1, 0.25, 0.95, 0.855, dt_max=0.05)]
    lines = write_run_summary(tmp_path / "r.csv", steps).read_text().splitlines()
    assert lines[0] == "t,dt,re_sigma,re_trArho,p_a,cum_p_a"
    cells = lines[2].split(",")
    assert float(cells[0]) == 0.1 and float(cells[5]) == 0.855

    clines = write_controller_csv(tmp_path / "c.csv", steps).read_text().splitlines()
    assert clines[0] == "t,re_trArho,dt_max"
    assert clines[1].endswith(",unconstrained")
    assert clines[2].split(",")[2] == fmt(0.05)


def test_stats_and_noise_tables(tmp_path):
    srows = [StatsRow(t=0.0, var_th_mean=0.1, var_em_mean=0.11,
                      rel_bias=-1e-3, rel_l2=1.4e-2)]
    lines = write_stats_csv(tmp_path / "s.csv", srows).read_text().splitlines()
    assert lines[0] == "t,var_th_mean,var_em_mean,rel_bias,rel_l2"
    assert float(lines[1].split(",")[3]) == -1e-3

    nrows = [NoiseRow(gamma=0.1, gamma_bar=0.1, t=1.0, l2_error_raw=0.2,
                      l2_error_counterterm=1e-10, l2_error_richardson=float("nan"))]
    nlines = write_noise_csv(tmp_path / "n.csv", nrows).read_text().splitlines()
    assert nlines[0].startswith("gamma,gamma_bar,t,")
    assert nlines[1].split(",")[5] == "nan"


def test_stencil_table_long_form(tmp_path):
    entries = [(2, 1, np.array([1.0, -2.0, 1.0]))]
    lines = write_stencil_csv(tmp_path / "st.csv", entries).read_text().splitlines()
    assert lines == ["deriv_order,radius,offset,coefficient",
                     "2,1,-1,1", "2,1,0,-2", "2,1,1,1"]


# ---------------------------------------------------------------------------
# Channel artifacts

def test_channel_check_table(tmp_path):
    check = SimpleNamespace(items=[
        SimpleNamespace(name="completeness_defect", value=1e-16,
                        threshold=1e-10, passed=True),
        SimpleNamespace(name="leaf_reconstruction[1]", value=2e-9,
                        threshold=1e-9, passed=False)])
    lines = write_channel_check(tmp_path / "v.csv", check).read_text().splitlines()
    assert lines[0] == "check,value,threshold,passed"
    assert lines[1].endswith(",true") and lines[2].endswith(",false")


def test_tree_round_trip_and_manifest(tmp_path):
    ks = kraus_pair(np.array([[1.0, 0.2], [0.0, 0.7]]), dt=0.1, shift="auto")
    tree = compile_tree(ks, pad_to=4)
    written = write_tree(tmp_path, ks_tree := tree)
    names = {p.name for p in written}
    assert "tree_manifest.json" in names
    manifest = json.loads((tmp_path / "tree_manifest.json").read_text())
    assert manifest["depth"] == 2 and manifest["pad_rank"] == 4
    assert manifest["leaves"]["00"] == 0 and manifest["leaves"]["10"] is None
    for bits, entry in manifest["nodes"].items():
        key = "" if bits == "root" else bits
        back = read_tree_node(tmp_path / entry["file"], entry["rows"], entry["cols"])
        np.testing.assert_array_equal(back, ks_tree.nodes[key])
        mag = (tmp_path / "nodes" / f"node_{bits}_magnitude.csv").read_text()
        assert mag.splitlines()[0] == "row,col,magnitude"


def test_tree_write_is_byte_identical(tmp_path):
    ks = kraus_pair(np.array([[0.9]]), dt=0.1, shift=0.0)
    tree = compile_tree(ks)
    write_tree(tmp_path / "a", tree)
    write_tree(tmp_path / "b", tree)
    for rel in ("nodes/node_root.bin", "nodes/node_root_magnitude.csv",
                "tree_manifest.json"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


# ---------------------------------------------------------------------------
# Manifest and failure modes

def test_manifest_contents(tmp_path):
    cfg = SimpleNamespace(experiment="stencil", seed=3, sha256="ab" * 32,
                          resolved=lambda: {"experiment": "stencil", "seed": 3})
    art = tmp_path / "stencil.csv"
    art.write_text("x\n")
    path = write_manifest(tmp_path, cfg, [art], extra={"note": 1})
    doc = json.loads(path.read_text())
    assert doc["artifacts"] == ["stencil.csv"]
    assert doc["config_sha256"] == "ab" * 32
    assert doc["note"] == 1
    assert "timestamp_utc" in doc


def test_writers_raise_io_failure_on_blocked_paths(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    grid = GridSpec(extents=(3,), spacing=(1.0,), boundary=Boundary.periodic())
    state = make_field(grid, np.zeros(3, dtype=np.complex128))
    with pytest.raises(IOFailure):
        write_field_csv(blocker / "sub" / "f.csv", state)
    ks = kraus_pair(np.array([[0.9]]), dt=0.1, shift=0.0)
    with pytest.raises(IOFailure):
        write_tree(blocker / "tree", compile_tree(ks))
