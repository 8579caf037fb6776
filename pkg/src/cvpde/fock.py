"""Truncated Fock spaces, stencil generators, Kraus pairs, and tree compilation.

A stencil RHS lifts to the normal-ordered generator A = sum over sites and
monomials of coeff * adag_out * prod(a_site); on coherent probes its
expectation reproduces the overlap sum sum_j conj(z_j) F_j(z).  The
post-selected branch of one time step is K_a = expm(-A dt) with the rank-2
partner K_abar = sqrt(I - K_a^dag K_a); when the Hermitian part of A has a
negative floor the generator is shifted by lambda = max(0, -lambda_min) so
the branch stays contractive, and lambda is recorded.

compile_tree dilates a rank-N Kraus set (padded with zero operators to the
next power of two) into a depth-ceil(log2 N) binary tree.  Each node stacks
its two child branch blocks as the ancilla-|0> column block of a
(2 dim) x (2 dim) unitary completed by Householder QR with the R diagonal
phase-fixed, so compilation is reproducible.  Blocks are G_child G_node^+
with G the PSD root of the subtree completeness sum, which makes every
leaf-path block product telescope to its Kraus operator; the all-zeros path
yields K_a itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.linalg import expm

from .grid import BoundaryKind, GridSpec
from .rhs import RhsSpec

DIM_CAP = 4096
_CLIP_TOL = 1e-12


class VerificationError(RuntimeError):
    """Raised when a compiled channel fails one of its algebraic checks."""


# ---------------------------------------------------------------------------
# Fock space

@dataclass
class FockSpace:
    """Dense annihilation operators for n_modes bosonic modes, levels each.

    Mode 0 is the leftmost Kronecker factor; the truncated single-mode
    annihilator has <n-1|a|n> = sqrt(n) for n < levels.
    """

    n_modes: int
    levels: int
    ann: list[np.ndarray]

    @property
    def dim(self) -> int:
        return self.levels ** self.n_modes


def build_fock(n_modes: int, levels: int, cap: int = DIM_CAP) -> FockSpace:
    if n_modes < 1:
        raise ValueError("need at least one mode")
    if levels < 2:
        raise ValueError("need at least two levels per mode")
    dim = levels ** n_modes
    if dim > cap:
        raise ValueError(f"total dimension {dim} exceeds the cap {cap}")
    a1 = np.diag(np.sqrt(np.arange(1, levels, dtype=np.float64)), k=1).astype(np.complex128)
    eye = np.eye(levels, dtype=np.complex128)
    ops = []
    for j in range(n_modes):
        op = np.array([[1.0 + 0.0j]])
        for k in range(n_modes):
            op = np.kron(op, a1 if k == j else eye)
        ops.append(op)
    return FockSpace(n_modes=n_modes, levels=levels, ann=ops)


def coherent_state(space: FockSpace, amplitudes) -> np.ndarray:
    """Truncated (unnormalized) product coherent vector for the given z_j."""
    amps = np.asarray(amplitudes, dtype=np.complex128).reshape(-1)
    if amps.size != space.n_modes:
        raise ValueError(f"need {space.n_modes} amplitudes, got {amps.size}")
    n = np.arange(space.levels)
    fact = np.sqrt(np.cumprod(np.concatenate(([1.0], np.arange(1, space.levels)))))
    vec = np.array([1.0 + 0.0j])
    for z in amps:
        vec = np.kron(vec, z ** n / fact)
    return vec


# ---------------------------------------------------------------------------
# Generator assembly

@dataclass
class GeneratorMatrix:
    """Dense normal-ordered generator with its symbolic provenance."""

    matrix: np.ndarray
    spec: RhsSpec
    grid: GridSpec
    lambda_shift: float = 0.0


def _resolve_site(grid: GridSpec, base: int, offset: tuple[int, ...]):
    """Flat site index for base + offset, or a ghost amplitude off-grid."""
    multi = list(np.unravel_index(base, grid.extents))
    for ax, o in enumerate(offset):
        multi[ax] += o
    if grid.boundary.kind is BoundaryKind.PERIODIC:
        multi = [m % n for m, n in zip(multi, grid.extents)]
    elif any(not 0 <= m < n for m, n in zip(multi, grid.extents)):
        ghost = complex(grid.boundary.value) if grid.boundary.kind is BoundaryKind.DIRICHLET else 0.0
        return None, ghost
    return int(np.ravel_multi_index(multi, grid.extents)), None


def assemble_generator(space: FockSpace, spec: RhsSpec, grid: GridSpec,
                       site_map=None) -> GeneratorMatrix:
    """A = sum_sites sum_monomials coeff adag_out prod a_factor (daggers left).

    site_map maps (channel, flat site) to a mode index; the default is
    channel-major, mode = channel * L + site, and requires n_modes to cover
    every lattice site.  Off-grid factor reads fold in the Dirichlet ghost
    amplitude as a scalar; off-grid outputs drop.
    """
    L = grid.npoints
    if site_map is None:
        if space.n_modes != spec.n_channels * L:
            raise ValueError(
                f"spec over {spec.n_channels} x {L} sites does not fit {space.n_modes} modes")
        site_map = {(ch, s): ch * L + s for ch in range(spec.n_channels) for s in range(L)}
    A = np.zeros((space.dim, space.dim), dtype=np.complex128)
    for m in spec.monomials:
        chans = m.channels if m.channels is not None else (0,) * len(m.factors)
        coeff_arr = None if np.isscalar(m.coeff) else np.asarray(m.coeff).reshape(-1)
        for base in range(L):
            c = m.coeff if coeff_arr is None else coeff_arr[base]
            if c == 0:
                continue
            out_site, _ = _resolve_site(grid, base, m.out_offset)
            if out_site is None:
                continue
            op = None
            dead = False
            for ch, f in zip(chans, m.factors):
                site, ghost = _resolve_site(grid, base, f)
                if site is None:
                    c = c * ghost
                    if c == 0:
                        dead = True
                        break
                    continue
                key = (ch, site)
                if key not in site_map:
                    raise ValueError(f"lattice site {key} has no mode assignment")
                mode = site_map[key]
                if not 0 <= mode < space.n_modes:
                    raise ValueError(f"mode index {mode} out of range")
                op = space.ann[mode] if op is None else op @ space.ann[mode]
            if dead:
                continue
            out_key = (m.out_channel, out_site)
            if out_key not in site_map:
                raise ValueError(f"lattice site {out_key} has no mode assignment")
            adag = space.ann[site_map[out_key]].conj().T
            A += c * (adag if op is None else adag @ op)
    return GeneratorMatrix(matrix=A, spec=spec, grid=grid)


# ---------------------------------------------------------------------------
# Kraus pair

@dataclass
class KrausSet:
    """Completeness-preserving operator list with a designated branch a."""

    ops: list[np.ndarray]
    a_index: int
    dt: float
    lambda_shift: float = 0.0
    generator: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.ops[0].shape[0]

    def completeness_defect(self) -> float:
        acc = sum(K.conj().T @ K for K in self.ops)
        return float(np.max(np.abs(acc - np.eye(self.dim))))


def kraus_pair(generator, dt: float, shift: str | float = "auto") -> KrausSet:
    """K_a = expm(-(A + lambda I) dt) and its rank-2 completion partner.

    shift="auto" picks lambda = max(0, -lambda_min(Herm(A))) so the branch is
    contractive; a float fixes lambda explicitly; residual eigenvalues of
    I - K_a^dag K_a below -1e-12 raise a VerificationError.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    A = generator.matrix if isinstance(generator, GeneratorMatrix) else np.asarray(generator, dtype=np.complex128)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("generator must be a square matrix")
    if shift == "auto":
        herm = 0.5 * (A + A.conj().T)
        lam = max(0.0, -float(np.linalg.eigvalsh(herm)[0]))
    else:
        lam = float(shift)
        if lam < 0:
            raise ValueError("lambda shift must be nonnegative")
    dim = A.shape[0]
    A_eff = A + lam * np.eye(dim)
    K_a = expm(-A_eff * dt)
    resid = np.eye(dim) - K_a.conj().T @ K_a
    resid = 0.5 * (resid + resid.conj().T)
    w, V = np.linalg.eigh(resid)
    if w[0] < -_CLIP_TOL:
        raise VerificationError(
            f"branch residual indefinite: eigenvalue {w[0]:.3e} below -{_CLIP_TOL:.0e} "
            "(generator Hermitian part not dissipative enough; increase the shift)")
    w = np.clip(w, 0.0, None)
    K_abar = (V * np.sqrt(w)) @ V.conj().T
    kset = KrausSet(ops=[K_a, K_abar], a_index=0, dt=dt, lambda_shift=lam, generator=A_eff)
    defect = kset.completeness_defect()
    if defect > 1e-10:
        raise VerificationError(f"completeness defect {defect:.3e} exceeds 1e-10")
    return kset


# ---------------------------------------------------------------------------
# Binary-tree compilation

@dataclass
class ChannelTree:
    """Node unitaries keyed by measurement-outcome prefix bitstrings."""

    depth: int
    dim: int
    nodes: dict[str, np.ndarray]
    leaf_map: dict[str, int | None]
    pad_rank: int
    kraus: KrausSet | None = None


def _psd_eig(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues/vectors of the Hermitian part with noise-floor zeroing.

    The rank cutoff is relative in eigenvalue space (1e-13 of the largest):
    eigh backward error is O(eps)*norm there, whereas thresholding singular
    values s = sqrt(w) would let sqrt(eps)-size noise through and blow up
    the pseudo-inverse.
    """
    w, V = np.linalg.eigh(0.5 * (P + P.conj().T))
    w = np.clip(w, 0.0, None)
    w = np.where(w > w.max(initial=0.0) * 1e-13, w, 0.0)
    return w, V


def _psd_sqrt_pinv(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, V = _psd_eig(P)
    s = np.sqrt(w)
    inv = np.where(s > 0.0, 1.0 / np.where(s > 0.0, s, 1.0), 0.0)
    return (V * s) @ V.conj().T, (V * inv) @ V.conj().T


def _complete_unitary(B: np.ndarray) -> np.ndarray:
    """2d x 2d unitary whose leading d columns equal the isometry B.

    Householder QR of [B | I] with the R diagonal phase-fixed to be real
    nonnegative reproduces B's orthonormal columns exactly and fills the
    remaining columns deterministically from the identity block.
    """
    m, d = B.shape
    Q, R = np.linalg.qr(np.hstack([B, np.eye(m, dtype=np.complex128)]), mode="complete")
    Q = Q[:, :m]
    diag = np.diagonal(R)[:m]
    safe = np.abs(diag) > 1e-13
    phase = np.where(safe, diag / np.where(safe, np.abs(diag), 1.0), 1.0)
    return Q * phase


def _extend_isometry(B: np.ndarray, ker_basis: np.ndarray) -> np.ndarray:
    """Make B a true isometry by routing kernel directions to fresh columns.

    B is isometric on the orthocomplement of ker_basis and annihilates it;
    the extension sends each kernel basis vector to an orthonormal frame
    orthogonal to range(B), leaving B's action on the support unchanged.
    """
    k = ker_basis.shape[1]
    if k == 0:
        return B
    m = B.shape[0]
    span = B @ _null_complement(ker_basis)
    Q, _ = np.linalg.qr(np.hstack([span, np.eye(m, dtype=np.complex128)]), mode="complete")
    fill = Q[:, span.shape[1]:span.shape[1] + k]
    return B + fill @ ker_basis.conj().T


def _null_complement(ker_basis: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the orthocomplement of the given columns."""
    d, k = ker_basis.shape
    Q, _ = np.linalg.qr(np.hstack([ker_basis, np.eye(d, dtype=np.complex128)]), mode="complete")
    return Q[:, k:d]


def compile_tree(kraus: KrausSet, pad_to: int | None = None) -> ChannelTree:
    """Dilate the Kraus set into per-node unitaries over one binary ancilla.

    Kraus indices are split evenly by lexicographic order at every node,
    with the designated branch a first so the all-zeros path reproduces it.
    Padding to pad_to (or the next power of two) appends zero operators whose
    leaves are marked unreachable; their dead nodes carry identity unitaries.
    """
    ops = [kraus.ops[kraus.a_index]] + [K for i, K in enumerate(kraus.ops) if i != kraus.a_index]
    n0 = len(ops)
    N = pad_to if pad_to is not None else 2 ** max(1, math.ceil(math.log2(max(n0, 2))))
    if N < n0 or (N & (N - 1)) != 0:
        raise ValueError(f"pad target {N} must be a power of two >= rank {n0}")
    dim = kraus.dim
    zeros = np.zeros((dim, dim), dtype=np.complex128)
    ops = ops + [zeros] * (N - n0)
    depth = int(math.log2(N))

    gram: dict[tuple[int, int], np.ndarray] = {}

    def gram_sum(lo: int, hi: int) -> np.ndarray:
        if (lo, hi) not in gram:
            gram[(lo, hi)] = sum(ops[i].conj().T @ ops[i] for i in range(lo, hi))
        return gram[(lo, hi)]

    nodes: dict[str, np.ndarray] = {}
    leaf_map: dict[str, int | None] = {}

    def build(bits: str, lo: int, hi: int) -> None:
        if hi - lo == 1:
            leaf_map[bits] = lo if lo < n0 else None
            return
        mid = (lo + hi) // 2
        P = gram_sum(lo, hi)
        if np.max(np.abs(P)) <= 1e-300:
            nodes[bits] = np.eye(2 * dim, dtype=np.complex128)
        else:
            w, V = _psd_eig(P)
            mask = w > 0.0
            Gp = (V[:, mask] / np.sqrt(w[mask])) @ V[:, mask].conj().T
            blocks = []
            for clo, chi in ((lo, mid), (mid, hi)):
                if chi - clo == 1:
                    C = ops[clo]
                else:
                    C, _ = _psd_sqrt_pinv(gram_sum(clo, chi))
                blocks.append(C @ Gp)
            B = _extend_isometry(np.vstack(blocks), V[:, ~mask])
            nodes[bits] = _complete_unitary(B)
        build(bits + "0", lo, mid)
        build(bits + "1", mid, hi)

    build("", 0, N)
    return ChannelTree(depth=depth, dim=dim, nodes=nodes, leaf_map=leaf_map,
                       pad_rank=N, kraus=kraus)


def node_block(tree: ChannelTree, bits: str, outcome: int) -> np.ndarray:
    """<outcome| U_bits |0> block acting on the system register."""
    U = tree.nodes[bits]
    d = tree.dim
    return U[outcome * d:(outcome + 1) * d, :d]


def path_operator(tree: ChannelTree, bits: str) -> np.ndarray:
    """Product of blocks along a full outcome path (leaf Kraus reconstruction)."""
    if len(bits) != tree.depth or any(b not in "01" for b in bits):
        raise ValueError(f"path {bits!r} must be {tree.depth} outcome bits")
    T = np.eye(tree.dim, dtype=np.complex128)
    for k, b in enumerate(bits):
        T = node_block(tree, bits[:k], int(b)) @ T
    return T


# ---------------------------------------------------------------------------
# Channel verification

@dataclass(frozen=True)
class CheckItem:
    name: str
    value: float
    threshold: float
    passed: bool


@dataclass
class ChannelCheck:
    ok: bool
    items: list[CheckItem]

    def failures(self) -> list[CheckItem]:
        return [it for it in self.items if not it.passed]


def _as_density(probe: np.ndarray) -> np.ndarray:
    probe = np.asarray(probe, dtype=np.complex128)
    if probe.ndim == 1:
        nrm = np.linalg.norm(probe)
        if nrm == 0:
            raise ValueError("zero probe vector")
        v = probe / nrm
        return np.outer(v, v.conj())
    return probe


def _fidelity(rho: np.ndarray, sig: np.ndarray) -> float:
    w, V = np.linalg.eigh(rho)
    sq = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.conj().T
    inner = sq @ sig @ sq
    ev = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    return float(np.sum(np.sqrt(np.clip(ev, 0.0, None))) ** 2)


def verify_channel(tree: ChannelTree, kraus: KrausSet, probes) -> ChannelCheck:
    """Itemized completeness / trace / positivity / path-reconstruction checks."""
    items: list[CheckItem] = []

    def add(name: str, value: float, threshold: float) -> None:
        items.append(CheckItem(name, float(value), threshold, bool(value <= threshold)))

    add("completeness_defect", kraus.completeness_defect(), 1e-10)

    for bits in tree.nodes:
        U = tree.nodes[bits]
        add(f"unitarity[{bits or 'root'}]",
            np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))), 1e-10)

    zero = "0" * tree.depth
    K_a = kraus.ops[kraus.a_index]
    add("zero_path_error", np.max(np.abs(path_operator(tree, zero) - K_a)), 1e-10)

    paths = ["".join(p) for p in product("01", repeat=tree.depth)]
    recon_err = 0.0
    for bits in paths:
        idx = tree.leaf_map[bits]
        target = kraus.ops[0] * 0.0 if idx is None else (
            kraus.ops[kraus.a_index] if idx == 0 else
            [K for i, K in enumerate(kraus.ops) if i != kraus.a_index][idx - 1])
        recon_err = max(recon_err, float(np.max(np.abs(path_operator(tree, bits) - target))))
    add("leaf_reconstruction_error", recon_err, 1e-9)

    for pi, probe in enumerate(probes):
        probe = np.asarray(probe, dtype=np.complex128)
        pure = probe.ndim == 1
        rho = _as_density(probe)
        tr_in = float(np.trace(rho).real)
        tr_out = sum(float(np.trace(K @ rho @ K.conj().T).real) for K in kraus.ops)
        add(f"trace_preservation[{pi}]", abs(tr_out - tr_in), 1e-9 * max(1.0, abs(tr_in)))

        p_paths = []
        for bits in paths:
            T = path_operator(tree, bits)
            p_paths.append(float(np.trace(T @ rho @ T.conj().T).real))
        add(f"path_prob_negativity[{pi}]", max(0.0, -min(p_paths)), 1e-12)
        add(f"path_prob_total[{pi}]", abs(sum(p_paths) - tr_in), 1e-9 * max(1.0, abs(tr_in)))

        p_a_direct = float(np.trace(K_a.conj().T @ K_a @ rho).real)
        T0 = path_operator(tree, zero)
        p_a_tree = float(np.trace(T0 @ rho @ T0.conj().T).real)
        add(f"p_a_agreement[{pi}]", abs(p_a_tree - p_a_direct), 1e-10 * max(1.0, abs(p_a_direct)))

        if p_a_direct > 1e-12:
            if pure:
                # Pure probes stay pure under one branch: exact overlap fidelity.
                v = probe / np.linalg.norm(probe)
                wt, wd = T0 @ v, K_a @ v
                fid = abs(np.vdot(wt, wd)) ** 2 / (
                    np.vdot(wt, wt).real * np.vdot(wd, wd).real)
                add(f"post_selected_infidelity[{pi}]", abs(1.0 - fid), 1e-8)
            else:
                sig_tree = T0 @ rho @ T0.conj().T / p_a_tree
                sig_dir = K_a @ rho @ K_a.conj().T / p_a_direct
                # The sqrt-eigendecomposition fidelity has a ~1e-7 noise floor.
                add(f"post_selected_infidelity[{pi}]",
                    abs(1.0 - _fidelity(sig_tree, sig_dir)), 1e-6)

    return ChannelCheck(ok=all(it.passed for it in items), items=items)


# ---------------------------------------------------------------------------
# Rank and depth analytics

def manhattan_ball(d: int, R: int) -> int:
    """Lattice points within Manhattan radius R in Z^d (center included)."""
    return sum(2 ** k * math.comb(d, k) * math.comb(R, k) for k in range(0, min(d, R) + 1))


def monomials_per_site(d: int, K: int, r: int, self_coupling: bool) -> int:
    """Distinct degree-r multisets over the radius-ceil(K/2) neighborhood."""
    R = math.ceil(K / 2)
    S = manhattan_ball(d, R) - 1
    S_eff = S + 1 if self_coupling else S
    return math.comb(S_eff + r - 1, r)


@dataclass(frozen=True)
class RankReport:
    L: int
    d: int
    r: int
    K: int
    R: int
    edges: int
    rank_linear: int
    rank_poly: int
    monomials_per_site: int
    depth: int


def rank_analytics(L: int, d: int, K: int, r: int, self_coupling: bool,
                   spec: RhsSpec | None = None) -> RankReport:
    """Kraus-rank and tree-depth counts for a degree-r stencil over L sites.

    The coupling graph E pairs each site with its Manhattan-R neighbors
    (center excluded; diagonal terms fold into the branch normalization), so
    a linear stencil costs 2|E| non-identity Kraus operators and a degree-r
    one costs 2 L C(S_eff + r - 1, r); the tree depth is ceil(log2 rank).
    """
    if spec is not None:
        d, K, r = spec.dims, spec.deriv_order, spec.degree
    if L < 1 or r < 1 or K < 1 or d < 1:
        raise ValueError("L, d, K, r must all be positive")
    R = math.ceil(K / 2)
    S = manhattan_ball(d, R) - 1
    edges = L * S
    mps = monomials_per_site(d, K, r, self_coupling)
    rank_linear = 2 * edges
    rank_poly = 2 * L * mps
    return RankReport(L=L, d=d, r=r, K=K, R=R, edges=edges, rank_linear=rank_linear,
                      rank_poly=rank_poly, monomials_per_site=mps,
                      depth=math.ceil(math.log2(max(rank_poly, 2))))


# ---------------------------------------------------------------------------
# Finite-difference stencil coefficients

def stencil_coefficients(K: int, R: int) -> np.ndarray:
    """Symmetric stencil for the K-th derivative on offsets -R..R.

    Solves the moment conditions sum_m m^j c_m = 0 (j < K) and
    sum_m m^K c_m = K! under the parity symmetry c_{-m} = (-1)^K c_m.
    The minimal feasible radius is ceil(K/2); smaller R is rejected.  For
    R above minimal the minimum-norm solution is returned.  Residuals of
    the full moment system beyond 1e-9 raise.
    """
    if K < 1 or R < 0:
        raise ValueError("need derivative order K >= 1 and radius R >= 0")
    min_R = math.ceil(K / 2)
    if R < min_R:
        raise ValueError(
            f"radius {R} infeasible for derivative order {K}: the parity-reduced "
            f"moment system needs at least ceil(K/2) = {min_R} offsets")
    parity = K % 2
    ms = np.arange(1, R + 1, dtype=np.float64)
    rows = []
    rhs_vals = []
    for j in list(range(parity, K, 2)) + [K]:
        if parity == 0:
            row = np.concatenate(([1.0 if j == 0 else 0.0], 2.0 * ms ** j))
        else:
            row = 2.0 * ms ** j
        rows.append(row)
        rhs_vals.append(float(math.factorial(K)) if j == K else 0.0)
    Amat = np.array(rows)
    bvec = np.array(rhs_vals)
    sol, *_ = np.linalg.lstsq(Amat, bvec, rcond=None)
    if parity == 0:
        half = sol  # c_0, c_1 .. c_R
        c = np.concatenate((half[1:][::-1], half))
    else:
        c = np.concatenate((-sol[::-1], [0.0], sol))
    mm = np.arange(-R, R + 1, dtype=np.float64)
    for j in range(K + 1):
        target = float(math.factorial(K)) if j == K else 0.0
        resid = abs(float(np.sum(mm ** j * c)) - target)
        if resid > 1e-9:
            raise ValueError(f"moment condition j={j} violated by {resid:.3e}")
    return c
