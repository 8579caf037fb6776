"""Artifact writers: lossless CSVs, binary tree export, and run manifests.

Every float is printed with 17 significant digits so a CSV round-trip is
bit-exact, and writers emit "\n" newlines with fully deterministic row order:
identical inputs give byte-identical files.  The run timestamp appears only
in manifest.json, never in data files.  Node matrices are stored row-major
as little-endian float64 interleaved re/im pairs (numpy dtype '<c16').
"""
from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .grid import FieldState, GridSpec

LAYOUT_NOTE = "row-major complex128, little-endian float64 interleaved re/im"


class IOFailure(OSError):
    """An artifact could not be written."""


def fmt(x) -> str:
    """17-significant-digit rendering, lossless for float64."""
    return format(float(x), ".17g")


def fmt_dt_max(x) -> str:
    """Controller bound rendering; the +inf sentinel prints as a word."""
    return "unconstrained" if x == float("inf") else fmt(x)


def _write_text(path, lines) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc
    return path


def write_field_csv(path, state: FieldState) -> Path:
    """Grid-field snapshot: i[,j],x[,y],re_z,im_z,var in flat row-major order."""
    grid = state.grid
    rows = []
    if grid.dims == 1:
        rows.append("i,x,re_z,im_z,var")
        xs = grid.coords(0)
        for i in range(grid.npoints):
            z = state.z[i]
            rows.append(f"{i},{fmt(xs[i])},{fmt(z.real)},{fmt(z.imag)},{fmt(state.var[i])}")
    else:
        rows.append("i,j,x,y,re_z,im_z,var")
        xs, ys = grid.coords(0), grid.coords(1)
        k = 0
        for i in range(grid.extents[0]):
            for j in range(grid.extents[1]):
                z = state.z[k]
                rows.append(f"{i},{j},{fmt(xs[i])},{fmt(ys[j])},"
                            f"{fmt(z.real)},{fmt(z.imag)},{fmt(state.var[k])}")
                k += 1
    return _write_text(path, rows)


def write_scalar_csv(path, grid: GridSpec, values) -> Path:
    """Real 2D scalar in grid order: i,j,x,y,value."""
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    if vals.size != grid.npoints:
        raise ValueError("value count does not match the grid")
    rows = ["i,j,x,y,value"]
    xs, ys = grid.coords(0), grid.coords(1)
    k = 0
    for i in range(grid.extents[0]):
        for j in range(grid.extents[1]):
            rows.append(f"{i},{j},{fmt(xs[i])},{fmt(ys[j])},{fmt(vals[k])}")
            k += 1
    return _write_text(path, rows)


def write_run_summary(path, steps) -> Path:
    """Per-step trace: t,dt,re_sigma,re_trArho,p_a,cum_p_a."""
    rows = ["t,dt,re_sigma,re_trArho,p_a,cum_p_a"]
    for s in steps:
        rows.append(f"{fmt(s.t)},{fmt(s.dt_used)},{fmt(s.sigma_real)},"
                    f"{fmt(s.tr_a_rho.real)},{fmt(s.p_a)},{fmt(s.cum_p_a)}")
    return _write_text(path, rows)


def write_controller_csv(path, steps) -> Path:
    """Step-size bound trace: t,re_trArho,dt_max (inf prints "unconstrained")."""
    rows = ["t,re_trArho,dt_max"]
    for s in steps:
        rows.append(f"{fmt(s.t)},{fmt(s.tr_a_rho.real)},{fmt_dt_max(s.dt_max_allowed)}")
    return _write_text(path, rows)


def write_stats_csv(path, rows_in) -> Path:
    """Shot-statistics table: t,var_th_mean,var_em_mean,rel_bias,rel_l2."""
    rows = ["t,var_th_mean,var_em_mean,rel_bias,rel_l2"]
    for r in rows_in:
        rows.append(f"{fmt(r.t)},{fmt(r.var_th_mean)},{fmt(r.var_em_mean)},"
                    f"{fmt(r.rel_bias)},{fmt(r.rel_l2)}")
    return _write_text(path, rows)


def write_noise_csv(path, rows_in) -> Path:
    """Mitigation sweep: gamma,gamma_bar,t,l2_error_raw,l2_error_counterterm,l2_error_richardson."""
    rows = ["gamma,gamma_bar,t,l2_error_raw,l2_error_counterterm,l2_error_richardson"]
    for r in rows_in:
        rows.append(f"{fmt(r.gamma)},{fmt(r.gamma_bar)},{fmt(r.t)},{fmt(r.l2_error_raw)},"
                    f"{fmt(r.l2_error_counterterm)},{fmt(r.l2_error_richardson)}")
    return _write_text(path, rows)


def write_rank_csv(path, reports) -> Path:
    rows = ["L,d,K,r,R,edges,monomials_per_site,rank_linear,rank_poly,depth"]
    for r in reports:
        rows.append(f"{r.L},{r.d},{r.K},{r.r},{r.R},{r.edges},"
                    f"{r.monomials_per_site},{r.rank_linear},{r.rank_poly},{r.depth}")
    return _write_text(path, rows)


def write_stencil_csv(path, entries) -> Path:
    """Long-form coefficient table: deriv_order,radius,offset,coefficient."""
    rows = ["deriv_order,radius,offset,coefficient"]
    for K, R, coeffs in entries:
        for m, c in zip(range(-R, R + 1), coeffs):
            rows.append(f"{K},{R},{m},{fmt(c)}")
    return _write_text(path, rows)


def write_channel_check(path, check) -> Path:
    """Itemized verification report: check,value,threshold,passed."""
    rows = ["check,value,threshold,passed"]
    for it in check.items:
        rows.append(f"{it.name},{fmt(it.value)},{fmt(it.threshold)},{str(it.passed).lower()}")
    return _write_text(path, rows)


def _node_filename(bits: str) -> str:
    return f"node_{bits if bits else 'root'}.bin"


def write_tree(outdir, tree) -> list[Path]:
    """Per-node binary matrices, a bitstring manifest, and magnitude CSVs."""
    outdir = Path(outdir)
    nodes_dir = outdir / "nodes"
    written = []
    try:
        nodes_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create {nodes_dir}: {exc}") from exc
    node_index = {}
    for bits in sorted(tree.nodes, key=lambda b: (len(b), b)):
        U = np.ascontiguousarray(tree.nodes[bits].astype("<c16"))
        fname = _node_filename(bits)
        fpath = nodes_dir / fname
        try:
            fpath.write_bytes(U.tobytes())
        except OSError as exc:
            raise IOFailure(f"cannot write {fpath}: {exc}") from exc
        written.append(fpath)
        node_index[bits if bits else "root"] = {
            "file": f"nodes/{fname}", "rows": U.shape[0], "cols": U.shape[1]}
        mag_rows = ["row,col,magnitude"]
        absU = np.abs(U)
        for i in range(U.shape[0]):
            for j in range(U.shape[1]):
                mag_rows.append(f"{i},{j},{fmt(absU[i, j])}")
        written.append(_write_text(nodes_dir / f"node_{bits if bits else 'root'}_magnitude.csv",
                                   mag_rows))
    manifest = {
        "layout": LAYOUT_NOTE,
        "depth": tree.depth,
        "dim": tree.dim,
        "pad_rank": tree.pad_rank,
        "nodes": node_index,
        "leaves": {bits: idx for bits, idx in sorted(tree.leaf_map.items())},
    }
    mpath = outdir / "tree_manifest.json"
    written.append(_write_text(mpath, [json.dumps(manifest, indent=2, sort_keys=True)]))
    return written


def read_tree_node(path, rows: int, cols: int) -> np.ndarray:
    """Inverse of the node binary layout."""
    raw = Path(path).read_bytes()
    return np.frombuffer(raw, dtype="<c16").reshape(rows, cols).astype(np.complex128)


def write_manifest(outdir, config, artifacts, extra: dict | None = None) -> Path:
    """Re-run recipe: resolved config, its hash, seed, and the artifact list."""
    outdir = Path(outdir)
    doc = {
        "experiment": config.experiment,
        "seed": config.seed,
        "config_sha256": config.sha256,
        "config": config.resolved(),
        "artifacts": sorted(str(Path(a).relative_to(outdir)) if Path(a).is_absolute() else str(a)
                            for a in artifacts),
        "timestamp_utc": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        doc.update(extra)
    return _write_text(outdir / "manifest.json", [json.dumps(doc, indent=2, sort_keys=True)])
