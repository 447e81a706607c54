"""System models and the extended hierarchy generator for quadratic coupling.

The reduced dynamics couples the system to one bath coordinate x_B through
H_SB = Q_S (alpha_0 + alpha_1 x_B + alpha_2 x_B**2).  After decomposing the
bath correlation function into K exponentials, the state is the family
rho_n of d x d blocks over occupation vectors n (tier sum <= L) and the
derivative of each block reads

    d/dt rho_n = -(i L_S + sum_k n_k gamma_k) rho_n
                 - i (alpha_0 + alpha_2 <x_B^2>) A rho_n
                 - i alpha_1 sum_k (A rho_{n_k+} + n_k C_k rho_{n_k-})
                 - 2 i alpha_2 sum_{k k'} n_k C_k rho_{n_{kk'}^{-+}}
                 - i alpha_2 sum_{k k'} [ A rho_{n_{kk'}^{++}}
                       + n_k (n_k' - delta_{kk'}) B_{kk'} rho_{n_{kk'}^{--}} ]

with A O = [Q_S, O], C_k O = eta_k Q_S O - conj(eta_kbar) O Q_S, and
B_{kk'} O = eta_k eta_k' Q_S O - conj(eta_kbar) conj(eta_k'bar) O Q_S.
The double sums run over ordered pairs, both orders included.  On
importance-rescaled states every hop coefficient additionally carries
s_{n'} / s_n.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .bath import BathDecomposition
from .hierarchy import (
    DDOState,
    Generator,
    IndexSpace,
    _log_scale_factors,
    pair_permutation,
    propagate,
)

__all__ = [
    "SystemModel",
    "TwoStateSpec",
    "build_two_state_model",
    "x2_expectation",
    "build_generator_extended",
    "initial_factorized",
    "equilibrium_ddos",
    "apply_dipole",
]


@dataclass
class SystemModel:
    """System Hamiltonian, coupling operator, and the three couplings.

    h_s and q_s are d x d Hermitian matrices; alpha0/1/2 multiply the
    constant, linear, and squared bath coordinate in the interaction.
    """

    h_s: np.ndarray
    q_s: np.ndarray
    alpha0: float
    alpha1: float
    alpha2: float
    beta: float

    def __post_init__(self):
        self.h_s = np.ascontiguousarray(self.h_s, dtype=complex)
        self.q_s = np.ascontiguousarray(self.q_s, dtype=complex)
        for name, m in (("h_s", self.h_s), ("q_s", self.q_s)):
            if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
                raise ValueError(f"{name} must be a square matrix")
            if np.abs(m - m.conj().T).max() > 1e-12:
                raise ValueError(f"{name} must be Hermitian to 1e-12")
        if self.h_s.shape != self.q_s.shape:
            raise ValueError("h_s and q_s dimensions differ")
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    @property
    def d(self) -> int:
        return self.h_s.shape[0]

    def to_json_dict(self) -> dict:
        def mat(m):
            return {
                "re": [float(x) for x in m.real.ravel()],
                "im": [float(x) for x in m.imag.ravel()],
            }

        return {
            "d": self.d,
            "h_s": mat(self.h_s),
            "q_s": mat(self.q_s),
            "alpha0": float(self.alpha0),
            "alpha1": float(self.alpha1),
            "alpha2": float(self.alpha2),
            "beta": float(self.beta),
        }

    @classmethod
    def from_json_dict(cls, dd: dict) -> "SystemModel":
        d = dd["d"]

        def mat(m):
            return (
                np.array(m["re"]).reshape(d, d)
                + 1j * np.array(m["im"]).reshape(d, d)
            )

        return cls(
            h_s=mat(dd["h_s"]),
            q_s=mat(dd["q_s"]),
            alpha0=dd["alpha0"],
            alpha1=dd["alpha1"],
            alpha2=dd["alpha2"],
            beta=dd["beta"],
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SystemModel":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class TwoStateSpec:
    """Two-level model: gap omega_eg, tunneling V, reorganization energy
    lam, and the excited/ground mode-frequency ratio theta_b."""

    omega_eg: float
    v: float
    lam: float
    theta_b: float

    def __post_init__(self):
        if self.theta_b <= 0:
            raise ValueError("theta_b must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")


def build_two_state_model(
    spec: TwoStateSpec, beta: float, omega_b: float = 1.0
) -> SystemModel:
    """Two-level system in the ground-surface frame.

    H_S = omega_eg |e><e| + V (|e><g| + |g><e|), Q_S = |e><e| (basis order
    g, e), with couplings

        alpha0 = lam * theta_b**2
        alpha1 = -sqrt(2 * lam * omega_b) * theta_b**2
        alpha2 = (omega_b / 2) * (theta_b**2 - 1)
    """
    h = np.array([[0.0, spec.v], [spec.v, spec.omega_eg]], dtype=complex)
    q = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)
    t2 = spec.theta_b**2
    return SystemModel(
        h_s=h,
        q_s=q,
        alpha0=spec.lam * t2,
        alpha1=-math.sqrt(2.0 * spec.lam * omega_b) * t2,
        alpha2=0.5 * omega_b * (t2 - 1.0),
        beta=beta,
    )


def x2_expectation(decomp: BathDecomposition) -> float:
    """Equal-time bath-coordinate variance implied by the decomposition.

    Re(sum_k eta_k), i.e. the series value of C(0); keeps the mean-field
    coefficient consistent with the exponential set actually propagated.
    A large imaginary remainder (an ultraviolet artifact of ohmic tails)
    is reported as a warning.
    """
    if decomp.k == 0:
        return 0.0
    s = complex(np.sum(decomp.eta))
    if abs(s.imag) > max(decomp.residual_bound * abs(s), 1e-12):
        warnings.warn(
            f"Im(sum eta) = {s.imag:.4g} exceeds the audited residual; "
            "equal-time variance is only decomposition-consistent",
            stacklevel=2,
        )
    return s.real


# ---------------------------------------------------------------------------
# generator assembly
# ---------------------------------------------------------------------------


def _left_right_superops(q: np.ndarray):
    """Left/right multiplication by q on row-major flattened operators."""
    d = q.shape[0]
    eye = np.eye(d)
    return np.kron(q, eye), np.kron(eye, q.T)


class _TripletSink:
    """Accumulates block-structured COO triplets: a small d^2 x d^2
    superoperator stamped at many (row-block, col-block) pairs."""

    def __init__(self, n_blocks: int, d: int):
        self.d2 = d * d
        self.dim = n_blocks * self.d2
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []

    def add(self, i_blocks, j_blocks, coeffs, superop: np.ndarray):
        i_blocks = np.asarray(i_blocks, dtype=np.int64)
        j_blocks = np.asarray(j_blocks, dtype=np.int64)
        coeffs = np.asarray(coeffs, dtype=complex)
        if i_blocks.size == 0:
            return
        sm = sparse.coo_matrix(superop)
        if sm.nnz == 0:
            return
        self.rows.append(
            (i_blocks[:, None] * self.d2 + sm.row[None, :]).ravel()
        )
        self.cols.append(
            (j_blocks[:, None] * self.d2 + sm.col[None, :]).ravel()
        )
        self.vals.append((coeffs[:, None] * sm.data[None, :]).ravel())

    def to_csr(self) -> sparse.csr_matrix:
        if not self.rows:
            return sparse.csr_matrix((self.dim, self.dim), dtype=complex)
        m = sparse.coo_matrix(
            (
                np.concatenate(self.vals),
                (np.concatenate(self.rows), np.concatenate(self.cols)),
            ),
            shape=(self.dim, self.dim),
        )
        m.sum_duplicates()
        return m.tocsr()


def build_generator_extended(
    model: SystemModel,
    decomp: BathDecomposition,
    space: IndexSpace,
    *,
    scaled: bool = True,
) -> Generator:
    """Sparse derivative map of the extended hierarchy (module docstring).

    With `scaled` the coefficients absorb s_{n'}/s_n for the
    importance-rescaled representation.
    """
    if decomp.k != space.k:
        raise ValueError(
            f"decomposition has {decomp.k} terms but the index space "
            f"has {space.k} slots"
        )
    d = model.d
    n_idx = space.size
    occ = space.occupations
    eta = decomp.eta
    etac = decomp.eta_conj  # conj(eta_kbar)
    gamma = decomp.gamma

    ql, qr = _left_right_superops(model.q_s)
    a_sup = ql - qr
    eye2 = np.eye(d * d)
    h_l, h_r = _left_right_superops(model.h_s)
    liou = -1j * (h_l - h_r)

    if scaled:
        logs = _log_scale_factors(space, np.abs(eta))

        def hop_scale(i_blocks, j_blocks):
            return np.exp(logs[j_blocks] - logs[i_blocks])

    else:

        def hop_scale(i_blocks, j_blocks):
            return np.ones(len(i_blocks))

    sink = _TripletSink(n_idx, d)
    all_i = np.arange(n_idx, dtype=np.int64)

    # damping: -(sum_k n_k gamma_k) on each block
    sink.add(all_i, all_i, -(occ.astype(complex) @ gamma), eye2)
    # system Liouvillian and the mean-field commutator
    mean = model.alpha0 + model.alpha2 * x2_expectation(decomp)
    sink.add(all_i, all_i, np.ones(n_idx), liou - 1j * mean * a_sup)

    a1 = model.alpha1
    a2 = model.alpha2

    if a1 != 0.0:
        for k in range(space.k):
            up = space.raise_table[:, k]
            sel = np.flatnonzero(up >= 0)
            j = up[sel].astype(np.int64)
            sink.add(sel, j, -1j * a1 * hop_scale(sel, j), a_sup)

            dn = space.lower_table[:, k]
            sel = np.flatnonzero(dn >= 0)
            j = dn[sel].astype(np.int64)
            c_k = eta[k] * ql - etac[k] * qr
            coeff = -1j * a1 * occ[sel, k] * hop_scale(sel, j)
            sink.add(sel, j, coeff, c_k)

    if a2 != 0.0:
        for k in range(space.k):
            c_k = eta[k] * ql - etac[k] * qr
            has_k = np.flatnonzero(occ[:, k] > 0)
            low_k = space.lower_table[has_k, k].astype(np.int64)
            for kp in range(space.k):
                # transfer: lower k then raise k' (always back in space)
                j = space.raise_table[low_k, kp].astype(np.int64)
                coeff = -2j * a2 * occ[has_k, k] * hop_scale(has_k, j)
                sink.add(has_k, j, coeff, c_k)

                # pair raise (k, k'): both raises must stay in the space
                up_kp = space.raise_table[:, kp]
                j2 = np.full(n_idx, -1, dtype=np.int64)
                sel = np.flatnonzero(up_kp >= 0)
                j2[sel] = space.raise_table[up_kp[sel], k]
                sel = np.flatnonzero(j2 >= 0)
                jj = j2[sel]
                sink.add(sel, jj, -1j * a2 * hop_scale(sel, jj), a_sup)

                # pair lower (k, k'): coefficient n_k (n_k' - delta_kk')
                mult = occ[:, k] * (occ[:, kp] - (1 if k == kp else 0))
                sel = np.flatnonzero(mult > 0)
                dn1 = space.lower_table[sel, k]
                jj = space.lower_table[dn1, kp].astype(np.int64)
                b_kk = eta[k] * eta[kp] * ql - etac[k] * etac[kp] * qr
                coeff = -1j * a2 * mult[sel] * hop_scale(sel, jj)
                sink.add(sel, jj, coeff, b_kk)

    gen = Generator(
        [(None, sink.to_csr())],
        dim=n_idx * d * d,
        pair_perm=pair_permutation(space, decomp.conjugate_index),
    )
    return gen


# ---------------------------------------------------------------------------
# states and protocol helpers
# ---------------------------------------------------------------------------


def initial_factorized(rho_s: np.ndarray, space: IndexSpace) -> DDOState:
    """Factorized start: tier-0 block = rho_s, all higher tiers zero.

    The importance scaling of the empty occupation is 1, so the state is
    valid in both representations; it is marked scaled to match the
    default generator convention.
    """
    rho_s = np.asarray(rho_s, dtype=complex)
    if rho_s.ndim != 2 or rho_s.shape[0] != rho_s.shape[1]:
        raise ValueError("rho_s must be a square matrix")
    if abs(np.trace(rho_s) - 1.0) > 1e-10:
        raise ValueError("rho_s must have unit trace")
    if np.abs(rho_s - rho_s.conj().T).max() > 1e-10:
        raise ValueError("rho_s must be Hermitian")
    state = DDOState.zeros(space, rho_s.shape[0], scaled=True)
    state.data[0] = rho_s
    return state


def equilibrium_ddos(
    gen: Generator,
    space: IndexSpace,
    t_relax: float,
    tol: float,
    *,
    rho0: np.ndarray | None = None,
    dt: float = 0.01,
    check_interval: float | None = None,
) -> DDOState:
    """Steady state by relaxation from a factorized start.

    Propagates until the maximum time-derivative entry falls below `tol`;
    raises if that does not happen within `t_relax`.
    """
    d = int(round(math.sqrt(gen.dim / space.size)))
    if d * d * space.size != gen.dim:
        raise ValueError("generator dim incompatible with the index space")
    if rho0 is None:
        rho0 = np.eye(d) / d
    state = initial_factorized(rho0, space)
    chunk = check_interval if check_interval is not None else max(
        t_relax / 50.0, 10.0 * dt
    )
    resid = math.inf
    while state.time < t_relax - 1e-9:
        t_next = min(state.time + chunk, t_relax)
        propagate(gen, state, t_next, dt)
        resid = float(np.abs(gen(state.data.reshape(-1), state.time)).max())
        if resid < tol:
            return state
    raise RuntimeError(
        f"no steady state within t_relax = {t_relax:g}: residual "
        f"{resid:.3e} > tol {tol:g}"
    )


def apply_dipole(state: DDOState, mu: np.ndarray, side: str) -> DDOState:
    """Multiply every block by mu on the requested side."""
    mu = np.asarray(mu, dtype=complex)
    if side == "left":
        data = np.einsum("ab,ibc->iac", mu, state.data)
    elif side == "right":
        data = np.einsum("iab,bc->iac", state.data, mu)
    else:
        raise ValueError("side must be 'left' or 'right'")
    return DDOState(state.space, data, scaled=state.scaled, time=state.time)
