"""Occupation-index bookkeeping and fixed-step propagation.

A hierarchy state is a family of d x d system-operator blocks labelled by
occupation vectors n = (n_1..n_K) with total tier sum(n) <= L.  This module
owns the enumeration (graded lexicographic), the neighbor tables used by
generator assembly, the dense block container, importance rescaling,
filtering, RK4 propagation with divergence detection, and a bit-exact
checkpoint format.  It knows nothing about the physics encoded in a
generator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse, special

from ._backend import prepare_csr, spmm, spmv

__all__ = [
    "IndexSpace",
    "DDOState",
    "Generator",
    "HierarchyDivergenceError",
    "rescale",
    "filter_state",
    "pair_permutation",
    "propagate",
    "checkpoint_save",
    "checkpoint_load",
]

DEFAULT_INDEX_CAP = 5_000_000


class HierarchyDivergenceError(RuntimeError):
    """Propagation blew up; message records the time reached."""


def _compositions(total: int, slots: int):
    """Weak compositions of `total` into `slots` parts, ascending lex."""
    if slots == 0:
        if total == 0:
            yield ()
        return
    if slots == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, slots - 1):
            yield (head, *rest)


class IndexSpace:
    """All occupation vectors with K slots and tier sum <= L.

    Enumeration is graded lexicographic: tiers ascending, lexicographic
    within a tier.  `raise_table[i, k]` / `lower_table[i, k]` give the
    position of n with n_k changed by +-1, or -1 when absent (tier
    overflow / empty slot).
    """

    def __init__(self, k: int, l: int, cap: int = DEFAULT_INDEX_CAP):
        if k < 0 or l < 0:
            raise ValueError("slot count and tier cap must be nonnegative")
        if k == 0 and l > 0:
            raise ValueError("zero slots cannot host a positive tier")
        size = math.comb(k + l, k)
        if size > cap:
            raise ValueError(
                f"index space with K={k}, L={l} has {size} vectors, "
                f"exceeding the cap of {cap}"
            )
        self.k = k
        self.l = l
        occs = []
        for tier in range(l + 1):
            occs.extend(_compositions(tier, k))
        self.occupations = np.array(occs, dtype=np.int32)
        self.size = len(occs)
        assert self.size == size
        self._index = {occ: i for i, occ in enumerate(occs)}
        self.tier = self.occupations.sum(axis=1).astype(np.int32)

        self.raise_table = np.full((self.size, k), -1, dtype=np.int32)
        self.lower_table = np.full((self.size, k), -1, dtype=np.int32)
        for i, occ in enumerate(occs):
            for slot in range(k):
                if self.tier[i] < l:
                    up = occ[:slot] + (occ[slot] + 1,) + occ[slot + 1 :]
                    self.raise_table[i, slot] = self._index[up]
                if occ[slot] > 0:
                    dn = occ[:slot] + (occ[slot] - 1,) + occ[slot + 1 :]
                    self.lower_table[i, slot] = self._index[dn]

    def index(self, occ) -> int:
        """Position of an occupation vector; -1 if outside the space."""
        return self._index.get(tuple(int(x) for x in occ), -1)

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, IndexSpace)
            and self.k == other.k
            and self.l == other.l
        )


@dataclass
class DDOState:
    """Dense container of hierarchy blocks: data[i] is the d x d block of
    the i-th occupation vector.  `scaled` records whether entries carry the
    importance rescaling; `time` the propagation clock."""

    space: IndexSpace
    data: np.ndarray
    scaled: bool = False
    time: float = 0.0

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=complex)
        if self.data.ndim != 3 or self.data.shape[0] != self.space.size:
            raise ValueError("data must have shape (|indices|, d, d)")
        if self.data.shape[1] != self.data.shape[2]:
            raise ValueError("blocks must be square")

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @classmethod
    def zeros(cls, space: IndexSpace, d: int, **kw) -> "DDOState":
        return cls(space, np.zeros((space.size, d, d), dtype=complex), **kw)

    def entry(self, occ) -> np.ndarray:
        i = self.space.index(occ)
        if i < 0:
            raise KeyError(f"occupation {tuple(occ)} outside the index space")
        return self.data[i]

    @property
    def entries(self) -> dict:
        """Nonzero blocks keyed by occupation tuple."""
        out = {}
        for i in np.flatnonzero(np.abs(self.data).max(axis=(1, 2)) > 0.0):
            out[tuple(int(x) for x in self.space.occupations[i])] = self.data[i]
        return out

    def copy(self) -> "DDOState":
        return DDOState(self.space, self.data.copy(), self.scaled, self.time)


def _log_scale_factors(space: IndexSpace, abs_eta: np.ndarray) -> np.ndarray:
    """log s_n with s_n = prod_k sqrt(n_k! * |eta_k|**n_k)."""
    n = space.occupations
    lg = special.gammaln(n + 1.0)
    return 0.5 * (lg.sum(axis=1) + n @ np.log(abs_eta))


def rescale(state: DDOState, decomp, to_scaled: bool) -> DDOState:
    """Convert between bare and importance-rescaled entries.

    Scaled entries are bare entries divided by
    s_n = prod_k sqrt(n_k! * |eta_k|**n_k).
    """
    if state.scaled == to_scaled:
        return state.copy()
    abs_eta = np.abs(np.asarray(decomp.eta))
    if np.any(abs_eta == 0.0):
        raise ValueError("cannot rescale with a vanishing amplitude")
    if len(abs_eta) != state.space.k:
        raise ValueError("decomposition size does not match the index space")
    logs = _log_scale_factors(state.space, abs_eta)
    fac = np.exp(-logs if to_scaled else logs)
    out = state.data * fac[:, None, None]
    return DDOState(state.space, out, scaled=to_scaled, time=state.time)


def filter_state(state: DDOState, tol: float) -> int:
    """Zero every block whose max-abs entry is below tol (tier-0 immune).

    Returns the number of blocks zeroed; tol = 0 is a no-op.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    if tol == 0.0:
        return 0
    mags = np.abs(state.data).max(axis=(1, 2))
    kill = (mags < tol) & (mags > 0.0) & (state.space.tier > 0)
    state.data[kill] = 0.0
    return int(kill.sum())


def pair_permutation(space: IndexSpace, conjugate_index) -> np.ndarray:
    """Block permutation sending n to its conjugate partner nbar with
    nbar_k = n_{kbar}."""
    ci = np.asarray(conjugate_index, dtype=int)
    if len(ci) != space.k:
        raise ValueError("conjugate_index length must match slot count")
    perm = np.empty(space.size, dtype=np.int64)
    for i in range(space.size):
        perm[i] = space.index(space.occupations[i][ci])
    if np.any(perm < 0):
        raise RuntimeError("conjugate permutation left the index space")
    return perm


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


class Generator:
    """Sparse derivative map y' = G(t) y.

    Built from parts (coeff, matrix): coeff is None for static pieces
    (merged into one CSR at construction) or a callable t -> scalar (or an
    array broadcast over the columns of a batched state).  Immutable after
    construction; application is thread-safe.
    """

    def __init__(self, parts, dim: int, pair_perm: np.ndarray | None = None):
        self.dim = dim
        static = None
        dynamic = []
        for coeff, mat in parts:
            mat = sparse.csr_matrix(mat)
            if mat.shape != (dim, dim):
                raise ValueError("part shape does not match generator dim")
            if coeff is None:
                static = mat if static is None else static + mat
            else:
                dynamic.append((coeff, prepare_csr(mat)))
        self.static = prepare_csr(static) if static is not None else None
        self.dynamic = tuple(dynamic)
        self.pair_perm = pair_perm

    @property
    def is_static(self) -> bool:
        return not self.dynamic

    def __call__(self, y: np.ndarray, t: float) -> np.ndarray:
        mv = spmv if y.ndim == 1 else spmm
        out = None
        if self.static is not None:
            out = mv(self.static, y)
        for coeff, mat in self.dynamic:
            c = coeff(t)
            term = mv(mat, y)
            if np.ndim(c) == 1 and y.ndim == 2:
                term *= np.asarray(c)[None, :]
            else:
                term *= c
            out = term if out is None else out + term
        if out is None:
            out = np.zeros_like(y)
        return out

    def to_matrix(self, t: float = 0.0) -> sparse.csr_matrix:
        """Materialized sparse matrix at time t (tests / small spaces)."""
        total = sparse.csr_matrix((self.dim, self.dim), dtype=complex)
        if self.static is not None:
            total = total + self.static
        for coeff, mat in self.dynamic:
            c = coeff(t)
            if np.ndim(c) != 0:
                raise ValueError("column-resolved coefficients cannot be "
                                 "materialized as a single matrix")
            total = total + c * mat
        return total


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------


def _rk4_step(gen: Generator, y: np.ndarray, t: float, dt: float) -> np.ndarray:
    k1 = gen(y, t)
    k2 = gen(y + (0.5 * dt) * k1, t + 0.5 * dt)
    k3 = gen(y + (0.5 * dt) * k2, t + 0.5 * dt)
    k4 = gen(y + dt * k3, t + dt)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def propagate(
    gen: Generator,
    state,
    t_final: float,
    dt: float,
    observer=None,
    *,
    filter_tol: float = 0.0,
    filter_interval: int = 10,
    max_abs: float = 1e6,
):
    """Advance `state` in place to t_final with fixed-step RK4.

    `observer(state)` runs after every accepted step.  When `filter_tol`
    is positive, every `filter_interval` steps blocks are zeroed in
    conjugate-partner pairs: a block is dropped only when it *and* its
    partner (gen.pair_perm) are below tolerance, preserving the
    Hermiticity pairing.  Divergence (non-finite entries or max-abs
    beyond `max_abs`) raises :class:`HierarchyDivergenceError` naming the
    time reached.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_final < state.time - 1e-12 * dt:
        raise ValueError("t_final lies before the state's clock")
    shape = state.data.shape
    y = state.data.reshape(shape[0] * shape[1] * shape[2])
    if y.size != gen.dim:
        raise ValueError("state size does not match generator dim")

    span = t_final - state.time
    n_full = int(math.floor(span / dt + 1e-9))
    rema = span - n_full * dt
    steps = [dt] * n_full + ([rema] if rema > 1e-9 * dt else [])

    t = state.time
    for istep, h in enumerate(steps):
        y = _rk4_step(gen, y, t, h)
        t += h
        m = np.abs(y).max(initial=0.0)
        if not np.isfinite(m) or m > max_abs:
            raise HierarchyDivergenceError(
                f"hierarchy state reached max-abs {m:.3e} at t = {t:.6g}; "
                "reduce dt or deepen the truncation"
            )
        state.data = y.reshape(shape)
        state.time = t
        if filter_tol > 0.0 and (istep + 1) % filter_interval == 0:
            _paired_filter(state, filter_tol, gen.pair_perm)
            y = state.data.reshape(-1)
        if observer is not None:
            observer(state)
    return state


def _paired_filter(state, tol: float, pair_perm) -> int:
    mags = np.abs(state.data).max(axis=(1, 2))
    small = mags < tol
    if pair_perm is not None:
        small = small & small[pair_perm]
    kill = small & (mags > 0.0) & (state.space.tier > 0)
    state.data[kill] = 0.0
    return int(kill.sum())


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = "ddo-checkpoint-1"


def checkpoint_save(state: DDOState, path) -> None:
    """Bit-exact snapshot: one JSON header line, then per nonzero block a
    little-endian uint32 position and the raw complex128 block bytes."""
    mags = np.abs(state.data).max(axis=(1, 2))
    live = np.flatnonzero(mags > 0.0).astype("<u4")
    header = {
        "format": _MAGIC,
        "k": state.space.k,
        "l": state.space.l,
        "d": state.d,
        "scaled": state.scaled,
        "time": state.time,
        "count": int(live.size),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        blocks = np.ascontiguousarray(state.data.astype("<c16", copy=False))
        for i in live:
            fh.write(i.tobytes())
            fh.write(blocks[int(i)].tobytes())


def checkpoint_load(path, space: IndexSpace | None = None) -> DDOState:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("format") != _MAGIC:
            raise ValueError("not a hierarchy checkpoint")
        if space is None:
            space = IndexSpace(header["k"], header["l"])
        elif space.k != header["k"] or space.l != header["l"]:
            raise ValueError("checkpoint index space does not match")
        d = header["d"]
        data = np.zeros((space.size, d, d), dtype=complex)
        blk = d * d * 16
        for _ in range(header["count"]):
            i = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
            data[i] = np.frombuffer(fh.read(blk), dtype="<c16").reshape(d, d)
    return DDOState(space, data, scaled=header["scaled"], time=header["time"])
