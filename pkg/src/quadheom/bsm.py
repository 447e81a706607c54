"""Core-system hierarchy with an explicit Brownian solvation mode.

The collective bath coordinate is promoted into the dynamical "core"
alongside the system: the reduced bath of ``bath.BrownianDrude`` is split
into one damped harmonic mode plus an Ohmic-Lorentzian residual bath,

    h_B = (omega_b/2)(p^2 + x^2) + lam_tilde x^2 + residual + bilinear,

and the mode's phase-space (Wigner) content is expanded on the damped-
oscillator eigenbasis generated by the Fokker-Planck operator of the
high-temperature, Markovian reference.  A core state is then a family of
system-space matrices rho[(n1, n2); m] carrying two mode labels (n1, n2)
and a residual-bath occupation vector m.  Two ingredients close the
equations of motion:

* the left/right actions of the mode coordinate and momentum on the
  coefficients, realized here as four sparse one-step matrices
  (``make_action_matrices``), and
* the residual-bath hierarchy, identical in shape to the linear
  hierarchy of :mod:`quadheom.deom` but attached to x rather than to a
  system operator.

Two independent generator assemblies are provided.  The operator route
(``build_core_generator``) composes the action matrices symbolically:

    d rho / dt = -i [ L_sys + Q F(X>) - F(X<) (.) Q
                      + (omega_b/2)(P>^2 + X>^2 - P<^2 - X<^2)
                      + lam_tilde (X>^2 - X<^2) ] rho
                 - (sum_k m_k g_k) rho
                 - i sum_k (X> - X<) rho_{m_k+}
                 - i sum_k m_k (e_k X> - conj(e_kbar) X<) rho_{m_k-},

with F(X) = alpha0 + alpha1 X + alpha2 X^2 and (e_k, g_k) the residual
decomposition.  The direct route (``build_core_generator_direct``)
stamps the fully expanded coefficient table (single/double mode ladder
moves, intra-tier transfers and the real drift terms) without forming
any operator product.  Their agreement on mode-interior rows certifies
the whole coefficient algebra and is part of the acceptance suite.

The direct route is the production propagation engine: it carries the
exact coefficients on every retained row and only drops moves whose
target lies outside the cap, which keeps the truncated generator
dissipative at strong residual coupling.  The operator route truncates
inside its matrix products, corrupting the outermost two shells enough
to inject spurious growth, so it serves as a consistency check only.

The high-temperature, Markovian reference enters only through the basis
parameters (``bath.FPParams``); the hierarchy itself stays exact at any
temperature.  ``wigner_reconstruct`` maps the mode coefficients back to
a phase-space distribution for visualization.
"""

from __future__ import annotations

import cmath
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .bath import BathDecomposition, FPParams
from .deom import SystemModel, _TripletSink, _left_right_superops
from .hierarchy import (
    Generator,
    IndexSpace,
    _log_scale_factors,
    propagate,
)

__all__ = [
    "FPBasisTruncation",
    "ActionMatrices",
    "make_action_matrices",
    "CoreSpace",
    "CoreState",
    "build_core_generator",
    "build_core_generator_direct",
    "bath_reference_coefficients",
    "initial_core_state",
    "dipole_correlation_core",
    "WignerGrid",
    "wigner_reconstruct",
    "default_wigner_grid",
    "write_wigner_frames",
]


# ---------------------------------------------------------------------------
# basis truncation and action matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FPBasisTruncation:
    """Cap on the total mode excitation n1 + n2 of the coefficient basis."""

    n_max: int

    def __post_init__(self):
        if self.n_max < 0:
            raise ValueError("n_max must be nonnegative")

    @property
    def m(self) -> int:
        """Number of retained (n1, n2) pairs."""
        return (self.n_max + 1) * (self.n_max + 2) // 2


def mode_space(trunc: FPBasisTruncation) -> IndexSpace:
    """Graded enumeration of the (n1, n2) pairs as a two-slot index space."""
    return IndexSpace(2, trunc.n_max)


@dataclass(frozen=True)
class ActionMatrices:
    """Sparse one-step representations of the mode coordinate/momentum.

    ``x_left`` applies the coordinate from the left of the core operator,
    ``x_right`` from the right; likewise ``p_left``/``p_right`` for the
    momentum.  All four act on the stacked (n1, n2) coefficients and
    connect a pair only to its four nearest neighbors; out-of-range
    neighbors contribute nothing.
    """

    trunc: FPBasisTruncation
    x_left: sparse.csr_matrix
    x_right: sparse.csr_matrix
    p_left: sparse.csr_matrix
    p_right: sparse.csr_matrix


def make_action_matrices(
    fp: FPParams, trunc: FPBasisTruncation
) -> ActionMatrices:
    """Coordinate/momentum actions on the mode coefficient stack.

    Row (n1, n2) of the coordinate-from-the-left matrix reads

        (X> rho)[n1, n2] = rho[n1+1, n2] + rho[n1, n2+1]
                           + n1 eta+ rho[n1-1, n2] + n2 eta- rho[n1, n2-1],

    the right action replaces the lowering amplitudes eta_pm by the
    starred partner amplitudes.  The momentum actions share the raising
    pattern -gamma_pm/omega_b and carry cross-paired lowering amplitudes:
    slot 1 lowers with the minus-branch amplitude times gamma_minus and
    slot 2 with the plus branch times gamma_plus (starred amplitudes for
    the left action, plain ones for the right).
    """
    if trunc.n_max < 2:
        raise ValueError("action matrices need n_max >= 2")
    ms = mode_space(trunc)
    occ = ms.occupations
    w = fp.omega_b
    gp, gm = fp.gamma_plus, fp.gamma_minus
    ep, em = fp.eta_plus, fp.eta_minus
    bp, bm = fp.etabar_plus, fp.etabar_minus

    builders = {name: ([], [], []) for name in ("xl", "xr", "pl", "pr")}

    def put(name, i, j, v):
        if j < 0:
            return
        rows, cols, vals = builders[name]
        rows.append(i)
        cols.append(j)
        vals.append(v)

    for i in range(ms.size):
        n1, n2 = int(occ[i, 0]), int(occ[i, 1])
        up1, up2 = int(ms.raise_table[i, 0]), int(ms.raise_table[i, 1])
        dn1, dn2 = int(ms.lower_table[i, 0]), int(ms.lower_table[i, 1])
        for name in ("xl", "xr"):
            put(name, i, up1, 1.0)
            put(name, i, up2, 1.0)
        for name in ("pl", "pr"):
            put(name, i, up1, -gp / w)
            put(name, i, up2, -gm / w)
        put("xl", i, dn1, n1 * ep)
        put("xl", i, dn2, n2 * em)
        put("xr", i, dn1, n1 * bp)
        put("xr", i, dn2, n2 * bm)
        put("pl", i, dn1, -n1 * bm * gm / w)
        put("pl", i, dn2, -n2 * bp * gp / w)
        put("pr", i, dn1, -n1 * em * gm / w)
        put("pr", i, dn2, -n2 * ep * gp / w)

    def build(name):
        rows, cols, vals = builders[name]
        return sparse.csr_matrix(
            (np.array(vals, dtype=complex), (rows, cols)),
            shape=(ms.size, ms.size),
        )

    return ActionMatrices(
        trunc=trunc,
        x_left=build("xl"),
        x_right=build("xr"),
        p_left=build("pl"),
        p_right=build("pr"),
    )


def interior_selector(trunc: FPBasisTruncation) -> np.ndarray:
    """Boolean mask of mode pairs with n1 + n2 <= n_max - 2.

    Operator products are exact on these rows; the outermost two shells
    feel the basis cap and are excluded from transcription-equality
    checks.
    """
    ms = mode_space(trunc)
    return np.asarray(ms.tier <= trunc.n_max - 2)


# ---------------------------------------------------------------------------
# composite core space and state
# ---------------------------------------------------------------------------


class CoreSpace:
    """Composite block layout: residual occupation (major) x mode pair.

    Block ``i_res * m + i_mode`` holds the system-space matrix of the
    mode pair ``i_mode`` within the residual-bath index ``i_res``; block
    0 is the reduced system matrix.
    """

    def __init__(self, trunc: FPBasisTruncation, secondary_space: IndexSpace):
        self.trunc = trunc
        self.mode = mode_space(trunc)
        self.secondary = secondary_space
        self.size = self.mode.size * secondary_space.size
        # residual tier governs filtering immunity: every mode pair of the
        # zero residual occupation is physical content and never dropped
        self.tier = np.repeat(secondary_space.tier, self.mode.size)

    def block(self, mode_occ, secondary_occ) -> int:
        im = self.mode.index(mode_occ)
        ir = self.secondary.index(secondary_occ)
        if im < 0 or ir < 0:
            raise KeyError("label outside the core space")
        return ir * self.mode.size + im

    def labels(self, i: int):
        ir, im = divmod(int(i), self.mode.size)
        return (
            tuple(int(x) for x in self.mode.occupations[im]),
            tuple(int(x) for x in self.secondary.occupations[ir]),
        )

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, CoreSpace)
            and self.trunc == other.trunc
            and self.secondary == other.secondary
        )


@dataclass
class CoreState:
    """Dense stack of core-hierarchy blocks, one d x d matrix per
    (mode pair, residual occupation) label."""

    space: CoreSpace
    data: np.ndarray
    scaled: bool = True
    time: float = 0.0

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=complex)
        if self.data.ndim != 3 or self.data.shape[0] != self.space.size:
            raise ValueError("data must have shape (|blocks|, d, d)")
        if self.data.shape[1] != self.data.shape[2]:
            raise ValueError("blocks must be square")

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @classmethod
    def zeros(cls, space: CoreSpace, d: int, **kw) -> "CoreState":
        return cls(space, np.zeros((space.size, d, d), dtype=complex), **kw)

    def entry(self, mode_occ, secondary_occ) -> np.ndarray:
        return self.data[self.space.block(mode_occ, secondary_occ)]

    @property
    def reduced(self) -> np.ndarray:
        """The reduced system matrix: mode (0, 0), residual vacuum."""
        return self.data[0]

    def mode_coefficients(self) -> np.ndarray:
        """The residual-vacuum slice, shape (#mode pairs, d, d); this is
        the input of :func:`wigner_reconstruct`."""
        return self.data[: self.space.mode.size]

    def copy(self) -> "CoreState":
        return CoreState(self.space, self.data.copy(), self.scaled, self.time)


# ---------------------------------------------------------------------------
# generator assembly, operator route
# ---------------------------------------------------------------------------


def _secondary_hop_logs(space: IndexSpace, decomp: BathDecomposition):
    if decomp.k == 0:
        return np.zeros(space.size)
    return _log_scale_factors(space, np.abs(decomp.eta))


def build_core_generator(
    model: SystemModel,
    fp: FPParams,
    secondary: BathDecomposition,
    lam_tilde: float,
    trunc: FPBasisTruncation,
    space: IndexSpace,
    *,
    scaled: bool = True,
) -> Generator:
    """Core-system derivative map composed from the action matrices.

    The mode block combines the system Liouvillian, the coupling
    F(x) = alpha0 + alpha1 x + alpha2 x^2 applied through the left/right
    coordinate actions, the free-mode kinetic commutator and the
    counter-term lam_tilde x^2; the residual hierarchy attaches the
    coordinate's one-step actions across neighboring occupations.  With
    ``scaled`` the residual hops carry the same importance rescaling as
    the linear hierarchy.
    """
    if secondary.k != space.k:
        raise ValueError(
            f"mismatched truncations: residual decomposition has "
            f"{secondary.k} terms but the index space has {space.k} slots"
        )
    d = model.d
    am = make_action_matrices(fp, trunc)
    xg, xl = am.x_left, am.x_right
    pg, pl = am.p_left, am.p_right
    m = trunc.m
    eye_m = sparse.identity(m, dtype=complex, format="csr")
    eye_s = sparse.identity(d * d, dtype=complex, format="csr")

    ql, qr = (sparse.csr_matrix(x) for x in _left_right_superops(model.q_s))
    hl, hr = _left_right_superops(model.h_s)
    liou = sparse.csr_matrix(-1j * (hl - hr))

    f_left = model.alpha0 * eye_m + model.alpha1 * xg + model.alpha2 * (xg @ xg)
    f_right = model.alpha0 * eye_m + model.alpha1 * xl + model.alpha2 * (xl @ xl)
    kinetic = pg @ pg + xg @ xg - pl @ pl - xl @ xl
    counter = xg @ xg - xl @ xl

    block = (
        sparse.kron(eye_m, liou)
        - 1j * (sparse.kron(f_left, ql) - sparse.kron(f_right, qr))
        - 0.5j * fp.omega_b * sparse.kron(kinetic, eye_s)
        - 1j * lam_tilde * sparse.kron(counter, eye_s)
    )

    n_res = space.size
    occ = space.occupations
    damping = -(occ.astype(complex) @ secondary.gamma) if secondary.k else (
        np.zeros(n_res, dtype=complex)
    )
    total = sparse.kron(
        sparse.identity(n_res, dtype=complex, format="csr"), block
    ) + sparse.kron(
        sparse.diags(damping), sparse.identity(m * d * d, format="csr")
    )

    logs = _secondary_hop_logs(space, secondary) if scaled else np.zeros(n_res)
    x_diff = xg - xl
    for k in range(space.k):
        up = space.raise_table[:, k]
        sel = np.flatnonzero(up >= 0)
        if sel.size:
            j = up[sel].astype(np.int64)
            hop = sparse.csr_matrix(
                (np.exp(logs[j] - logs[sel]), (sel, j)),
                shape=(n_res, n_res),
            )
            total = total + sparse.kron(hop, sparse.kron(-1j * x_diff, eye_s))

        dn = space.lower_table[:, k]
        sel = np.flatnonzero(dn >= 0)
        if sel.size:
            j = dn[sel].astype(np.int64)
            coeff = occ[sel, k] * np.exp(logs[j] - logs[sel])
            hop = sparse.csr_matrix((coeff, (sel, j)), shape=(n_res, n_res))
            lower_action = (
                secondary.eta[k] * xg - secondary.eta_conj[k] * xl
            )
            total = total + sparse.kron(
                hop, sparse.kron(-1j * lower_action, eye_s)
            )

    return Generator([(None, total.tocsr())], dim=n_res * m * d * d)


# ---------------------------------------------------------------------------
# generator assembly, direct coefficient route
# ---------------------------------------------------------------------------


def build_core_generator_direct(
    model: SystemModel,
    fp: FPParams,
    secondary: BathDecomposition,
    lam_tilde: float,
    trunc: FPBasisTruncation,
    space: IndexSpace,
    *,
    scaled: bool = True,
) -> Generator:
    """Independent transcription of the fully expanded core hierarchy.

    Every coefficient is stamped literally: diagonal drift
    2(n1 - n2) w r1 r2, intra-tier transfers with weights
    (-1)^j n_j w r1 r2 (1 + g_jbar/g_j), single and double mode ladder
    moves, and the residual-bath couplings reduced to scalars.  No
    action-matrix product appears; agreement with
    :func:`build_core_generator` on interior rows is the module's master
    consistency check.
    """
    if secondary.k != space.k:
        raise ValueError(
            f"mismatched truncations: residual decomposition has "
            f"{secondary.k} terms but the index space has {space.k} slots"
        )
    d = model.d
    ms = mode_space(trunc)
    m = ms.size
    n_res = space.size
    occ_r = space.occupations
    w = fp.omega_b
    gam = (fp.gamma_plus, fp.gamma_minus)
    eta = (fp.eta_plus, fp.eta_minus)
    etab = (fp.etabar_plus, fp.etabar_minus)
    r1r2 = fp.r1 * fp.r2

    ql, qr = _left_right_superops(model.q_s)
    hl, hr = _left_right_superops(model.h_s)
    liou = -1j * (hl - hr)
    eye2 = np.eye(d * d, dtype=complex)
    a_sup = ql - qr
    c_sup = [eta[j] * ql - etab[j] * qr for j in range(2)]
    b_sup = [
        [eta[j] * eta[jp] * ql - etab[j] * etab[jp] * qr for jp in range(2)]
        for j in range(2)
    ]
    c_scal = [eta[j] - etab[j] for j in range(2)]
    b_scal = [
        [eta[j] * eta[jp] - etab[j] * etab[jp] for jp in range(2)]
        for j in range(2)
    ]
    # residual scalars: amplitude differences and mixed products
    ct_scal = secondary.eta - secondary.eta_conj
    bt_scal = [
        [eta[j] * secondary.eta[k] - etab[j] * secondary.eta_conj[k]
         for k in range(secondary.k)]
        for j in range(2)
    ]

    gamma_res = (occ_r.astype(complex) @ secondary.gamma) if secondary.k else (
        np.zeros(n_res, dtype=complex)
    )
    logs = _secondary_hop_logs(space, secondary) if scaled else np.zeros(n_res)
    res_all = np.arange(n_res, dtype=np.int64)

    sink = _TripletSink(n_res * m, d)
    a0, a1, a2 = model.alpha0, model.alpha1, model.alpha2

    def res_blocks(i_res, i_mode):
        return i_res * m + i_mode

    for im in range(m):
        n = ms.occupations[im]
        nj = (int(n[0]), int(n[1]))
        ups = (int(ms.raise_table[im, 0]), int(ms.raise_table[im, 1]))
        dns = (int(ms.lower_table[im, 0]), int(ms.lower_table[im, 1]))

        # same-label contributions
        sup = liou + (2.0 * (nj[0] - nj[1]) * w * r1r2) * eye2
        sup = sup - 1j * a0 * a_sup
        for j in range(2):
            sup = sup - 1j * (2 * nj[j] + 1) * (
                lam_tilde * c_scal[j] * eye2 + a2 * c_sup[j]
            )
        sink.add(res_blocks(res_all, im), res_blocks(res_all, im),
                 np.ones(n_res), sup)
        sink.add(res_blocks(res_all, im), res_blocks(res_all, im),
                 -gamma_res, eye2)

        for j in range(2):
            jb = 1 - j
            # intra-tier transfer: lower slot j, raise the other slot
            if nj[j] > 0:
                jm = int(ms.raise_table[dns[j], jb])
                drift = -((-1) ** (j + 1)) * nj[j] * w * r1r2 * (
                    1.0 + gam[jb] / gam[j]
                )
                sup = drift * eye2 - 2j * nj[j] * (
                    lam_tilde * c_scal[j] * eye2 + a2 * c_sup[j]
                )
                sink.add(res_blocks(res_all, im), res_blocks(res_all, jm),
                         np.ones(n_res), sup)

            # single ladder moves from the system coupling
            if ups[j] >= 0 and a1 != 0.0:
                sink.add(res_blocks(res_all, im), res_blocks(res_all, ups[j]),
                         np.full(n_res, -1j * a1), a_sup)
            if nj[j] > 0 and a1 != 0.0:
                sink.add(res_blocks(res_all, im), res_blocks(res_all, dns[j]),
                         np.full(n_res, -1j * a1 * nj[j]), c_sup[j])

            # residual-bath moves (scalar in the system space)
            for k in range(space.k):
                up_r = space.raise_table[:, k]
                sel = np.flatnonzero(up_r >= 0)
                if sel.size and nj[j] > 0:
                    jr = up_r[sel].astype(np.int64)
                    coeff = -1j * nj[j] * c_scal[j] * np.exp(
                        logs[jr] - logs[sel]
                    )
                    sink.add(res_blocks(sel, im), res_blocks(jr, dns[j]),
                             coeff, eye2)
                dn_r = space.lower_table[:, k]
                seld = np.flatnonzero(dn_r >= 0)
                if seld.size:
                    jrd = dn_r[seld].astype(np.int64)
                    hop = occ_r[seld, k] * np.exp(logs[jrd] - logs[seld])
                    if ups[j] >= 0:
                        sink.add(
                            res_blocks(seld, im), res_blocks(jrd, ups[j]),
                            -1j * ct_scal[k] * hop, eye2,
                        )
                    if nj[j] > 0:
                        sink.add(
                            res_blocks(seld, im), res_blocks(jrd, dns[j]),
                            -1j * nj[j] * bt_scal[j][k] * hop, eye2,
                        )

            # double ladder moves, ordered pairs (j, j')
            for jp in range(2):
                mult = nj[j] * (nj[jp] - (1 if j == jp else 0))
                if mult > 0:
                    jm = int(ms.lower_table[dns[j], jp])
                    sup = -1j * mult * (
                        lam_tilde * b_scal[j][jp] * eye2 + a2 * b_sup[j][jp]
                    )
                    sink.add(res_blocks(res_all, im), res_blocks(res_all, jm),
                             np.ones(n_res), sup)
                if ups[jp] >= 0 and a2 != 0.0:
                    j2 = int(ms.raise_table[ups[jp], j])
                    if j2 >= 0:
                        sink.add(
                            res_blocks(res_all, im), res_blocks(res_all, j2),
                            np.full(n_res, -1j * a2), a_sup,
                        )

    return Generator([(None, sink.to_csr())], dim=n_res * m * d * d)


# ---------------------------------------------------------------------------
# states and bath reference
# ---------------------------------------------------------------------------


def initial_core_state(
    rho_s: np.ndarray,
    space: CoreSpace,
    fp: FPParams,
    bath_coeffs: np.ndarray | None = None,
) -> CoreState:
    """Factorized start: system matrix times a bath coefficient vector.

    Without ``bath_coeffs`` only the leading label is populated, which
    places the mode in the Gaussian reference state of the basis (exact
    thermal Gaussian only while beta*omega_b <= 2; a warning signals the
    stretch beyond that uncertainty bound).  Pass the output of
    :func:`bath_reference_coefficients` to start from the relaxed
    uncoupled bath instead.
    """
    rho_s = np.asarray(rho_s, dtype=complex)
    if rho_s.ndim != 2 or rho_s.shape[0] != rho_s.shape[1]:
        raise ValueError("rho_s must be a square matrix")
    if abs(np.trace(rho_s) - 1.0) > 1e-10:
        raise ValueError("rho_s must have unit trace")
    if np.abs(rho_s - rho_s.conj().T).max() > 1e-10:
        raise ValueError("rho_s must be Hermitian")
    d = rho_s.shape[0]
    if bath_coeffs is None:
        if fp.beta * fp.omega_b > 2.0 + 1e-12:
            warnings.warn(
                "beta*omega_b > 2: the single-Gaussian start is below the "
                "uncertainty bound; relax a bath reference instead",
                stacklevel=2,
            )
        bath_coeffs = np.zeros(space.size, dtype=complex)
        bath_coeffs[0] = 1.0
    else:
        bath_coeffs = np.asarray(bath_coeffs, dtype=complex)
        if bath_coeffs.shape != (space.size,):
            raise ValueError("bath coefficient vector does not fit the space")
    data = bath_coeffs[:, None, None] * rho_s[None, :, :]
    return CoreState(space, data)


_BATH_REF_CACHE: dict = {}


def _decomp_digest(decomp: BathDecomposition) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(decomp.eta).tobytes())
    h.update(np.asarray(decomp.gamma).tobytes())
    h.update(np.asarray(decomp.conjugate_index).tobytes())
    h.update(repr(float(decomp.beta)).encode())
    return h.hexdigest()


def bath_reference_coefficients(
    fp: FPParams,
    secondary: BathDecomposition,
    lam_tilde: float,
    trunc: FPBasisTruncation,
    space: IndexSpace,
    *,
    l_ref: int | None = None,
    scaled: bool = True,
) -> np.ndarray:
    """Stationary coefficients of the bare mode + residual-bath hierarchy.

    Solves the system-free core hierarchy (scalar system space) for its
    stationary vector with unit leading coefficient; the result
    represents the uncoupled bath equilibrium and is the correct
    factorized-start companion to a dissipaton-vacuum initial condition
    on the other engine.  The solve runs on a residual tier cap of
    ``l_ref`` (default ``min(space.l, 8)``) and is zero-padded upward,
    the graded enumeration making shallow labels a prefix of the deep
    ones.  A truncated stationary solve develops a boundary layer near
    its own cap that grows with depth, so the solve is intentionally
    shallow: the physically meaningful low tiers are depth-converged
    there, and the padded tiers refill dynamically in a way consistent
    with on-the-fly filtering.  Results are cached per parameter set.
    """
    if l_ref is None:
        l_ref = min(space.l, 8)
    l_ref = min(l_ref, space.l)
    key = (
        fp,
        _decomp_digest(secondary),
        float(lam_tilde),
        trunc.n_max,
        space.k,
        space.l,
        l_ref,
        scaled,
    )
    hit = _BATH_REF_CACHE.get(key)
    if hit is not None:
        return hit.copy()

    scalar = SystemModel(
        h_s=np.zeros((1, 1)),
        q_s=np.zeros((1, 1)),
        alpha0=0.0,
        alpha1=0.0,
        alpha2=0.0,
        beta=fp.beta,
    )
    small = IndexSpace(space.k, l_ref)
    gen = build_core_generator_direct(
        scalar, fp, secondary, lam_tilde, trunc, small, scaled=scaled
    )
    a = gen.to_matrix(0.0).tolil()
    a[0, :] = 0.0
    a[0, 0] = 1.0
    b = np.zeros(gen.dim, dtype=complex)
    b[0] = 1.0
    y = sparse.linalg.spsolve(a.tocsr(), b)
    if not np.all(np.isfinite(y)):
        raise RuntimeError("bath reference solve produced non-finite values")

    coeffs = np.zeros(space.size * trunc.m, dtype=complex)
    coeffs[: y.size] = y
    _BATH_REF_CACHE[key] = coeffs
    return coeffs.copy()


def dipole_correlation_core(
    model: SystemModel,
    bath_inputs: dict,
    mu: np.ndarray,
    t_grid: np.ndarray,
    dt: float,
):
    """Core-engine branch of :func:`quadheom.observables.dipole_correlation`.

    Expects keys ``fp``, ``secondary``, ``lam_tilde``, ``n_max``, ``l``;
    optional ``filter_tol`` and ``bath_reference`` (default True).
    """
    from .observables import TimeSeries  # local import to avoid a cycle

    fp: FPParams = bath_inputs["fp"]
    secondary: BathDecomposition = bath_inputs["secondary"]
    lam_tilde = float(bath_inputs["lam_tilde"])
    trunc = FPBasisTruncation(int(bath_inputs["n_max"]))
    space = IndexSpace(secondary.k, int(bath_inputs["l"]))
    gen = build_core_generator_direct(model, fp, secondary, lam_tilde, trunc,
                                      space)
    cspace = CoreSpace(trunc, space)

    if bath_inputs.get("bath_reference", True):
        coeffs = bath_reference_coefficients(
            fp, secondary, lam_tilde, trunc, space
        )
    else:
        coeffs = None
    rho0 = np.zeros((model.d, model.d), dtype=complex)
    rho0[0, 0] = 1.0
    state = initial_core_state(rho0, cspace, fp, coeffs)
    state.data = np.einsum("ab,ibc->iac", np.asarray(mu, dtype=complex),
                           state.data)

    values = np.empty(len(t_grid), dtype=complex)
    values[0] = np.trace(mu @ state.data[0])
    for i, t_next in enumerate(t_grid[1:], start=1):
        propagate(gen, state, t_next, dt,
                  filter_tol=bath_inputs.get("filter_tol", 0.0))
        values[i] = np.trace(mu @ state.data[0])
    return TimeSeries(np.asarray(t_grid, dtype=float), values,
                      label="dipole_correlation", meta={"engine": "bsm"})


# ---------------------------------------------------------------------------
# Wigner reconstruction
# ---------------------------------------------------------------------------


@dataclass
class WignerGrid:
    """Phase-space frames of the solvation mode.

    ``frames[f, i, j]`` is W(x[i], p[j]) at ``times[f]``; values are the
    real parts after the imaginary-residue check.
    """

    x: np.ndarray
    p: np.ndarray
    frames: np.ndarray
    times: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.frames = np.asarray(self.frames, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.frames.shape != (
            len(self.times), len(self.x), len(self.p)
        ):
            raise ValueError("frames must have shape (times, x, p)")

    def normalizations(self) -> np.ndarray:
        """Grid integral of every frame (trapezoid in both directions)."""
        inner = np.trapezoid(self.frames, self.p, axis=2)
        return np.trapezoid(inner, self.x, axis=1)


def default_wigner_grid(fp: FPParams, n: int = 121):
    """Symmetric grid spanning six thermal widths of the reference basis."""
    half = 6.0 / math.sqrt(fp.beta * fp.omega_b)
    x = np.linspace(-half, half, n)
    return x, x.copy()


def _hermite_functions(n_max: int, scale: float, z: np.ndarray) -> np.ndarray:
    """Orthonormal oscillator eigenfunctions on z, rows n = 0..n_max.

    psi_n(z) = (scale/2pi)^(1/4) e^(-scale z^2/4) H_n(sqrt(scale/2) z)
               / sqrt(2^n n!), evaluated by the normalized upward
    recurrence (no factorials materialized).
    """
    u = np.sqrt(scale / 2.0) * z
    out = np.empty((n_max + 1, len(z)))
    out[0] = (scale / (2.0 * math.pi)) ** 0.25 * np.exp(-(u * u) / 2.0)
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * u * out[0]
    for n in range(1, n_max):
        out[n + 1] = (
            math.sqrt(2.0 / (n + 1)) * u * out[n]
            - math.sqrt(n / (n + 1.0)) * out[n - 1]
        )
    return out


def _pair_weights(fp: FPParams, trunc: FPBasisTruncation) -> np.ndarray:
    """Expansion weight of each mode pair: s_{n1,n2} / sqrt(n1! n2!)."""
    bw = fp.beta * fp.omega_b
    lr1, lr2 = cmath.log(fp.r1), cmath.log(fp.r2)
    ms = mode_space(trunc)
    out = np.empty(ms.size, dtype=complex)
    for i in range(ms.size):
        n1, n2 = int(ms.occupations[i, 0]), int(ms.occupations[i, 1])
        logmag = (
            0.5 * (n1 + n2) * math.log(bw)
            - n1 * lr2
            - n2 * lr1
            - 0.5 * (math.lgamma(n1 + 1) + math.lgamma(n2 + 1))
        )
        out[i] = (-1.0) ** n1 * cmath.exp(logmag)
    return out


def _basis_tableau(fp: FPParams, trunc: FPBasisTruncation) -> np.ndarray:
    """tab[i, a, b]: weight of psi_a(x) psi_b(p) inside mode pair i.

    Double binomial expansion of the ladder construction; a + b equals
    the pair total, so the tableau is exact (no series truncation).
    """
    nm = trunc.n_max
    ms = mode_space(trunc)
    tab = np.zeros((ms.size, nm + 1, nm + 1), dtype=complex)
    for i in range(ms.size):
        n1, n2 = int(ms.occupations[i, 0]), int(ms.occupations[i, 1])
        norm = -0.5 * (math.lgamma(n1 + 1) + math.lgamma(n2 + 1))
        for j1 in range(n1 + 1):
            for j2 in range(n2 + 1):
                a = n1 + n2 - j1 - j2
                b = j1 + j2
                amp = (
                    math.comb(n1, j1)
                    * math.comb(n2, j2)
                    * fp.r1 ** (n2 - j2 + j1)
                    * (-fp.r2) ** (n1 - j1 + j2)
                    * math.exp(
                        0.5 * (math.lgamma(a + 1) + math.lgamma(b + 1))
                        + norm
                    )
                )
                tab[i, a, b] += amp
    return tab


def wigner_reconstruct(
    coeffs: np.ndarray,
    fp: FPParams,
    trunc: FPBasisTruncation,
    x: np.ndarray,
    p: np.ndarray,
    *,
    time: float = 0.0,
    imag_tol: float = 1e-8,
) -> WignerGrid:
    """Phase-space distribution of the mode from its coefficient stack.

    ``coeffs`` is the residual-vacuum slice (#pairs, d, d) — or a 1-d
    vector of already-traced scalars.  The system trace of each block
    weights its basis function; the total carries a density envelope so
    that the grid integral equals the trace of the reduced matrix.  An
    imaginary residue above ``imag_tol`` signals Hermiticity loss
    upstream and raises.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    if coeffs.ndim == 3:
        scal = np.trace(coeffs, axis1=1, axis2=2)
    elif coeffs.ndim == 1:
        scal = coeffs
    else:
        raise ValueError("coeffs must be (pairs, d, d) blocks or scalars")
    if scal.shape != (trunc.m,):
        raise ValueError("coefficient count does not match the truncation")
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)

    weights = scal * _pair_weights(fp, trunc)
    tab = _basis_tableau(fp, trunc)
    mix = np.tensordot(weights, tab, axes=(0, 0))  # (n_max+1, n_max+1)

    bw = fp.beta * fp.omega_b
    psi_x = _hermite_functions(trunc.n_max, bw, x)
    psi_p = _hermite_functions(trunc.n_max, bw, p)
    w_complex = math.sqrt(bw / (2.0 * math.pi)) * np.einsum(
        "ax,ab,bp->xp", psi_x, mix, psi_p
    )
    env = np.exp(-bw * (x[:, None] ** 2 + p[None, :] ** 2) / 4.0)
    w_complex = w_complex * env

    im_max = float(np.abs(w_complex.imag).max())
    ref = max(float(np.abs(w_complex.real).max()), 1.0)
    if im_max > imag_tol * ref:
        raise ValueError(
            f"imaginary Wigner residue {im_max:.3e} exceeds tolerance; "
            "the core state has lost Hermiticity"
        )
    grid = WignerGrid(
        x=x,
        p=p,
        frames=w_complex.real[None, :, :],
        times=np.array([time]),
        meta={
            "imag_residue": im_max,
            "trace": complex(scal[0]).real,
        },
    )
    return grid


def write_wigner_frames(grid: WignerGrid, outdir, stem: str = "wigner"):
    """One CSV per frame (columns x,p,w; x-major rows) plus a JSON manifest.

    The manifest lists the frame files with their times and the grid
    vectors, so external animation tooling never parses the CSVs for
    geometry.  Returns the manifest path.
    """
    import pathlib

    outdir = pathlib.Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    names = []
    for f, t in enumerate(grid.times):
        name = f"{stem}_{f:04d}.csv"
        names.append(name)
        with open(outdir / name, "w", newline="") as fh:
            fh.write("x,p,w\n")
            frame = grid.frames[f]
            for i, xv in enumerate(grid.x):
                for j, pv in enumerate(grid.p):
                    fh.write(
                        f"{float(xv)!r},{float(pv)!r},{float(frame[i, j])!r}\n"
                    )
    manifest = {
        "stem": stem,
        "frames": names,
        "times": [float(t) for t in grid.times],
        "x": [float(v) for v in grid.x],
        "p": [float(v) for v in grid.p],
        "meta": {k: (float(v) if np.isscalar(v) else v)
                 for k, v in grid.meta.items()},
    }
    path = outdir / f"{stem}_manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return path
