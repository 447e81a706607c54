"""Imaginary-time and driven-mixing hierarchies for thermodynamics.

Two companions to the real-time engine:

* an imaginary-time hierarchy whose coupling terms act from the left
  only; propagated over tau in [0, beta] from the bare-system Boltzmann
  operator, its leading-block trace at tau = beta is the ratio of the
  coupled to the uncoupled partition function, from which the
  hybridization free energy follows;
* a driven-mixing hierarchy in which the system-bath coupling is ramped
  by a schedule lambda(t) and every member carries a work-conjugate
  parameter tau.  The leading-block trace at the end of the ramp is the
  work characteristic function G(tau); a centered discrete Fourier
  transform turns the sampled G into the work distribution p(w).

The two pipelines close the loop through the Jarzynski identity
<exp(-beta w)> = exp(-beta A) and the Crooks crossing p(w*) = pbar(-w*):
the free energy from the imaginary-time route must match the work
statistics from the driven route.  That cross-check is an identity of
the underlying model, so it doubles as a validation of both transcriptions.

Note on the imaginary-time diagonal: the damping term enters with an
imaginary coefficient (+i sum_k n_k gamma_k) in this formalism.  That is
intentional and is transcribed literally; the decoupled and commuting
closed forms plus the Jarzynski cross-consistency guard it.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .bath import BathDecomposition
from .deom import (
    SystemModel,
    _left_right_superops,
    _TripletSink,
    x2_expectation,
)
from .hierarchy import DDOState, Generator, IndexSpace, _log_scale_factors

__all__ = [
    "MixingSchedule",
    "schedule_eval",
    "WorkCharacteristic",
    "WorkDistribution",
    "build_ideom_generator",
    "hybridization_free_energy",
    "build_lambda_generator",
    "default_tau_grid",
    "characteristic_function",
    "work_distribution",
    "jarzynski_check",
    "crooks_check",
    "write_characteristic_csv",
    "write_work_distribution_csv",
    "write_thermo_json",
]


# ---------------------------------------------------------------------------
# mixing schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MixingSchedule:
    """Exponential coupling ramp lambda(t) = (1-e^{-at})/(1-e^{-a t_f}).

    `a` is the ramp rate (a = 0 gives the linear limit t/t_f), `t_f` the
    protocol duration.  The forward direction runs 0 -> 1; the backward
    direction uses the reflection lambda(t_f - t), running 1 -> 0.
    """

    a: float
    t_f: float
    direction: str = "forward"

    def __post_init__(self):
        if self.t_f <= 0.0:
            raise ValueError("protocol duration t_f must be positive")
        if self.a < 0.0:
            raise ValueError("ramp rate a must be nonnegative")
        if self.direction not in ("forward", "backward"):
            raise ValueError("direction must be 'forward' or 'backward'")

    def _lam_fwd(self, t: float) -> float:
        if self.a == 0.0:
            return t / self.t_f
        return math.expm1(-self.a * t) / math.expm1(-self.a * self.t_f)

    def _rate_fwd(self, t: float) -> float:
        if self.a == 0.0:
            return 1.0 / self.t_f
        return self.a * math.exp(-self.a * t) / -math.expm1(-self.a * self.t_f)

    def value(self, t: float) -> float:
        """Mixing weight at time t (the reflected one when backward)."""
        if self.direction == "backward":
            return self._lam_fwd(self.t_f - t)
        return self._lam_fwd(t)

    def rate(self, t: float) -> float:
        """d(value)/dt, analytic."""
        if self.direction == "backward":
            return -self._rate_fwd(self.t_f - t)
        return self._rate_fwd(t)

    def reversed(self) -> "MixingSchedule":
        other = "backward" if self.direction == "forward" else "forward"
        return MixingSchedule(self.a, self.t_f, other)

    def to_json_dict(self) -> dict:
        return {"a": self.a, "t_f": self.t_f, "direction": self.direction}


def schedule_eval(s: MixingSchedule, t: float, tau: float):
    """Evaluate (lambda, dlambda/dt, lambda_minus, lambda_plus) at time t.

    lambda_pm = lambda(t) +- (tau/2) * dlambda/dt; `tau` may be an array,
    in which case the pm pair broadcasts over it.
    """
    if t < -1e-12 * s.t_f or t > s.t_f * (1.0 + 1e-12):
        raise ValueError(f"t = {t!r} outside the protocol window [0, t_f]")
    lam = s.value(t)
    rate = s.rate(t)
    half = 0.5 * np.asarray(tau) * rate
    return lam, rate, lam - half, lam + half


# ---------------------------------------------------------------------------
# generator assembly
# ---------------------------------------------------------------------------


def _one_sided_coupling(
    model: SystemModel,
    decomp: BathDecomposition,
    space: IndexSpace,
    amps: np.ndarray,
    q_side: np.ndarray,
    scaled: bool,
):
    """Hierarchy matrix of all coupling moves with a single-sided
    superoperator: `q_side` is left or right multiplication by Q_S and
    `amps` the per-slot amplitudes carried by the lowering moves
    (eta for the left side, conj(eta_kbar) for the right).

    Returns the positively-weighted matrix W; callers attach the overall
    sign/phase.
    """
    d = model.d
    n_idx = space.size
    occ = space.occupations

    if scaled:
        logs = _log_scale_factors(space, np.abs(decomp.eta))

        def hop_scale(i_blocks, j_blocks):
            return np.exp(logs[j_blocks] - logs[i_blocks])

    else:

        def hop_scale(i_blocks, j_blocks):
            return np.ones(len(i_blocks))

    sink = _TripletSink(n_idx, d)
    all_i = np.arange(n_idx, dtype=np.int64)

    mean = model.alpha0 + model.alpha2 * x2_expectation(decomp)
    if mean != 0.0:
        sink.add(all_i, all_i, np.full(n_idx, mean, dtype=complex), q_side)

    a1 = model.alpha1
    a2 = model.alpha2

    if a1 != 0.0:
        for k in range(space.k):
            up = space.raise_table[:, k]
            sel = np.flatnonzero(up >= 0)
            j = up[sel].astype(np.int64)
            sink.add(sel, j, a1 * hop_scale(sel, j), q_side)

            dn = space.lower_table[:, k]
            sel = np.flatnonzero(dn >= 0)
            j = dn[sel].astype(np.int64)
            coeff = a1 * amps[k] * occ[sel, k] * hop_scale(sel, j)
            sink.add(sel, j, coeff, q_side)

    if a2 != 0.0:
        for k in range(space.k):
            has_k = np.flatnonzero(occ[:, k] > 0)
            low_k = space.lower_table[has_k, k].astype(np.int64)
            for kp in range(space.k):
                # transfer: lower k then raise k' (always back in space)
                j = space.raise_table[low_k, kp].astype(np.int64)
                coeff = 2.0 * a2 * amps[k] * occ[has_k, k] * hop_scale(has_k, j)
                sink.add(has_k, j, coeff, q_side)

                # pair raise (k, k'): both raises must stay in the space
                up_kp = space.raise_table[:, kp]
                j2 = np.full(n_idx, -1, dtype=np.int64)
                sel = np.flatnonzero(up_kp >= 0)
                j2[sel] = space.raise_table[up_kp[sel], k]
                sel = np.flatnonzero(j2 >= 0)
                jj = j2[sel]
                sink.add(sel, jj, a2 * hop_scale(sel, jj), q_side)

                # pair lower (k, k'): coefficient n_k (n_k' - delta_kk')
                mult = occ[:, k] * (occ[:, kp] - (1 if k == kp else 0))
                sel = np.flatnonzero(mult > 0)
                dn1 = space.lower_table[sel, k]
                jj = space.lower_table[dn1, kp].astype(np.int64)
                coeff = (
                    a2 * amps[k] * amps[kp] * mult[sel] * hop_scale(sel, jj)
                )
                sink.add(sel, jj, coeff, q_side)

    return sink.to_csr()


def build_ideom_generator(
    model: SystemModel,
    decomp: BathDecomposition,
    space: IndexSpace,
    *,
    scaled: bool = True,
) -> Generator:
    """Static derivative map of the imaginary-time hierarchy.

    Diagonal: -[H_S, .] + i sum_k n_k gamma_k (literal form; see module
    docstring).  All coupling moves multiply from the left only, with
    amplitudes eta_k on the lowering moves.
    """
    if decomp.k != space.k:
        raise ValueError(
            f"decomposition has {decomp.k} terms but the index space "
            f"has {space.k} slots"
        )
    d = model.d
    n_idx = space.size
    occ = space.occupations

    h_l, h_r = _left_right_superops(model.h_s)
    ql, _ = _left_right_superops(model.q_s)
    eye2 = np.eye(d * d)

    sink = _TripletSink(n_idx, d)
    all_i = np.arange(n_idx, dtype=np.int64)
    sink.add(all_i, all_i, 1j * (occ.astype(complex) @ decomp.gamma), eye2)
    sink.add(all_i, all_i, np.ones(n_idx), -(h_l - h_r))
    diag = sink.to_csr()

    w_left = _one_sided_coupling(model, decomp, space, decomp.eta, ql, scaled)
    return Generator([(None, diag - w_left)], dim=n_idx * d * d)


def build_lambda_generator(
    model: SystemModel,
    decomp: BathDecomposition,
    space: IndexSpace,
    schedule: MixingSchedule,
    tau,
    *,
    scaled: bool = True,
) -> Generator:
    """Derivative map of the driven-mixing hierarchy at work parameter tau.

    The static part carries the system Liouvillian and the damping; the
    coupling splits into a left-multiplying matrix weighted by
    -i*lambda_minus(t) and a right-multiplying matrix weighted by
    +i*lambda_plus(t).  `tau` may be a 1-D array, in which case the
    generator expects a column-batched state with one column per tau.
    """
    if decomp.k != space.k:
        raise ValueError(
            f"decomposition has {decomp.k} terms but the index space "
            f"has {space.k} slots"
        )
    d = model.d
    n_idx = space.size
    occ = space.occupations
    tau = np.asarray(tau, dtype=float)

    h_l, h_r = _left_right_superops(model.h_s)
    ql, qr = _left_right_superops(model.q_s)
    eye2 = np.eye(d * d)

    sink = _TripletSink(n_idx, d)
    all_i = np.arange(n_idx, dtype=np.int64)
    sink.add(all_i, all_i, -(occ.astype(complex) @ decomp.gamma), eye2)
    sink.add(all_i, all_i, np.ones(n_idx), -1j * (h_l - h_r))
    diag = sink.to_csr()

    w_left = _one_sided_coupling(model, decomp, space, decomp.eta, ql, scaled)
    w_right = _one_sided_coupling(
        model, decomp, space, decomp.eta_conj, qr, scaled
    )

    def lam_minus(t: float):
        _, _, lm, _ = schedule_eval(schedule, t, tau)
        return -1j * lm

    def lam_plus(t: float):
        _, _, _, lp = schedule_eval(schedule, t, tau)
        return 1j * lp

    return Generator(
        [(None, diag), (lam_minus, w_left), (lam_plus, w_right)],
        dim=n_idx * d * d,
    )


# ---------------------------------------------------------------------------
# hybridization free energy (imaginary-time propagation)
# ---------------------------------------------------------------------------


def _rk4_static(gen: Generator, y: np.ndarray, h: float, steps: int,
                check_every: int = 25) -> np.ndarray:
    """Fixed-step fourth-order integration of a static map; `y` may be a
    column batch."""
    for step in range(steps):
        k1 = gen(y, 0.0)
        k2 = gen(y + 0.5 * h * k1, 0.0)
        k3 = gen(y + 0.5 * h * k2, 0.0)
        k4 = gen(y + h * k3, 0.0)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if step % check_every == 0 and not np.all(np.isfinite(y)):
            raise RuntimeError(
                f"imaginary-time propagation diverged at step {step}"
            )
    return y


def hybridization_free_energy(
    gen: Generator,
    space: IndexSpace,
    beta: float,
    dtau: float,
    *,
    model: SystemModel | None = None,
    rho0: np.ndarray | None = None,
) -> tuple[float, float]:
    """Partition-function ratio and free energy of system-bath mixing.

    Propagates the imaginary-time hierarchy over tau in [0, beta] from
    the bare-system Boltzmann operator exp(-beta*H_S)/Z_S in the leading
    block (`rho0` overrides it); returns (Z_hyb, A_hyb) with
    A_hyb = -ln(Z_hyb)/beta.  `dtau` must divide beta.
    """
    if beta <= 0.0 or dtau <= 0.0:
        raise ValueError("beta and dtau must be positive")
    ratio = beta / dtau
    steps = int(round(ratio))
    if steps < 1 or abs(ratio - steps) > 1e-9 * max(1.0, ratio):
        raise ValueError("dtau must divide beta")
    d = int(round(math.sqrt(gen.dim / space.size)))
    if d * d * space.size != gen.dim:
        raise ValueError("generator dim incompatible with the index space")
    if rho0 is None:
        if model is None:
            raise ValueError("supply either model or rho0")
        boltz = sla.expm(-beta * np.asarray(model.h_s, dtype=complex))
        rho0 = boltz / np.trace(boltz)
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (d, d):
        raise ValueError("rho0 shape does not match the generator")

    y = np.zeros(gen.dim, dtype=complex)
    y[: d * d] = rho0.reshape(-1)
    y = _rk4_static(gen, y, dtau, steps)

    z = complex(np.trace(y[: d * d].reshape(d, d)))
    if abs(z.imag) > 1e-8 * max(abs(z.real), 1e-30):
        warnings.warn(
            f"partition ratio has imaginary residue {z.imag:.3e}; "
            "the tier cap may be too low",
            stacklevel=2,
        )
    if z.real <= 0.0:
        raise RuntimeError(
            f"nonpositive partition ratio {z.real:.3e}: the tier cap is "
            "too low for this coupling strength"
        )
    z_hyb = float(z.real)
    return z_hyb, float(-math.log(z_hyb) / beta)


# ---------------------------------------------------------------------------
# work characteristic function and distribution
# ---------------------------------------------------------------------------


@dataclass
class WorkCharacteristic:
    """Sampled characteristic function of the mixing work."""

    tau: np.ndarray
    g: np.ndarray
    direction: str = "forward"
    meta: dict = field(default_factory=dict)


@dataclass
class WorkDistribution:
    """Work density on a uniform grid; `dw` is the resolution."""

    w: np.ndarray
    p: np.ndarray
    dw: float
    meta: dict = field(default_factory=dict)


def default_tau_grid(tau_max: float = 40.0, n: int = 512) -> np.ndarray:
    """Centered uniform grid tau_j = (j - n//2) * (2*tau_max/n)."""
    if n < 2 or n % 2:
        raise ValueError("need an even number of samples")
    if tau_max <= 0.0:
        raise ValueError("tau_max must be positive")
    return (np.arange(n) - n // 2) * (2.0 * tau_max / n)


def _check_tau_grid(tau: np.ndarray) -> float:
    tau = np.asarray(tau, dtype=float)
    if tau.ndim != 1 or tau.size < 2:
        raise ValueError("tau grid must be a 1-D array with >= 2 samples")
    steps = np.diff(tau)
    dtau = steps[0]
    if dtau <= 0 or not np.allclose(steps, dtau, rtol=1e-9, atol=0.0):
        raise ValueError("tau grid must be uniform and increasing")
    if np.abs(tau).min() > 1e-9 * dtau:
        raise ValueError("tau grid must contain tau = 0")
    if abs(tau[0] + tau[-1]) > dtau * (1.0 + 1e-9):
        raise ValueError("tau grid must be symmetric about 0")
    return float(dtau)


def characteristic_function(
    model: SystemModel,
    decomp: BathDecomposition,
    space: IndexSpace,
    schedule: MixingSchedule,
    tau_grid: np.ndarray,
    dt: float,
    *,
    scaled: bool = True,
    equilibrium: DDOState | None = None,
    eq_t_relax: float = 400.0,
    eq_tol: float = 1e-6,
) -> WorkCharacteristic:
    """Propagate the driven-mixing hierarchy once for the whole tau batch.

    Forward runs start from the bare-system Boltzmann operator in the
    leading block; backward runs start from the coupled steady state
    (`equilibrium`, computed by relaxation when not supplied).  Returns
    G(tau) = trace of the leading block at t_f, with the normalization
    G(0) = 1 and the reality symmetry G(-tau) = conj(G(tau)) measured and
    recorded in `meta` rather than enforced.
    """
    tau = np.asarray(tau_grid, dtype=float)
    dtau = _check_tau_grid(tau)
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    d = model.d

    if schedule.direction == "backward":
        if equilibrium is None:
            from .deom import build_generator_extended, equilibrium_ddos

            real_gen = build_generator_extended(
                model, decomp, space, scaled=scaled
            )
            equilibrium = equilibrium_ddos(
                real_gen, space, eq_t_relax, eq_tol, dt=dt
            )
        if equilibrium.space != space:
            raise ValueError("equilibrium state lives on a different space")
        y0 = equilibrium.data.reshape(-1)
    else:
        boltz = sla.expm(-model.beta * np.asarray(model.h_s, dtype=complex))
        rho0 = boltz / np.trace(boltz)
        y0 = np.zeros(space.size * d * d, dtype=complex)
        y0[: d * d] = rho0.reshape(-1)

    gen = build_lambda_generator(
        model, decomp, space, schedule, tau, scaled=scaled
    )
    y = np.repeat(y0[:, None], tau.size, axis=1)

    steps = max(1, int(round(schedule.t_f / dt)))
    h = schedule.t_f / steps
    t = 0.0
    for step in range(steps):
        k1 = gen(y, t)
        k2 = gen(y + 0.5 * h * k1, t + 0.5 * h)
        k3 = gen(y + 0.5 * h * k2, t + 0.5 * h)
        k4 = gen(y + h * k3, t + h)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
        if step % 25 == 0 or step == steps - 1:
            col_ok = np.all(np.isfinite(y), axis=0)
            if not col_ok.all():
                bad = tau[~col_ok]
                raise RuntimeError(
                    f"driven propagation diverged at t = {t:.4g} for "
                    f"{bad.size} tau samples (first: {bad[:3]})"
                )

    g = np.einsum("aab->b", y[: d * d].reshape(d, d, tau.size)).copy()

    i0 = int(np.abs(tau).argmin())
    g0_err = float(abs(g[i0] - 1.0))
    jj = np.arange(1, tau.size)
    mirror = 2 * i0 - jj
    ok = (mirror >= 0) & (mirror < tau.size)
    sym = float(np.abs(g[jj[ok]] - np.conj(g[mirror[ok]])).max())
    if g0_err > 1e-6:
        warnings.warn(
            f"G(0) deviates from 1 by {g0_err:.3e}; check dt and the caps",
            stacklevel=2,
        )
    meta = {
        "g0_error": g0_err,
        "symmetry_residual": sym,
        "dt": h,
        "t_f": schedule.t_f,
        "a": schedule.a,
        "dtau": dtau,
    }
    return WorkCharacteristic(tau, g, schedule.direction, meta)


def work_distribution(char: WorkCharacteristic) -> WorkDistribution:
    """Centered discrete Fourier transform of G(tau) to the work density.

    p(w_m) = (dtau/2pi) sum_j exp(-i w_m tau_j) G(tau_j) on the window
    w in [-pi/dtau, pi/dtau) with dw = 2pi/(N dtau).  A real density
    requires the exact identity G(-tau) = conj(G(tau)); the computed
    samples are checked against it (a violation beyond 1e-6 of |G(0)|
    indicates a propagation inconsistency and raises) and then averaged
    pairwise so the transform is real by construction.  If |G| has not
    decayed at the window edge the truncation shows up as sinc ringing
    in p; that is reported in the metadata and warned about rather than
    rejected, since slowly decaying tails are common for near-adiabatic
    switching protocols.
    """
    tau = np.asarray(char.tau, dtype=float)
    dtau = _check_tau_grid(tau)
    g = np.asarray(char.g, dtype=complex)
    n = tau.size
    half = n // 2

    g_scale = max(float(np.abs(g).max()), 1e-300)
    mirror = np.conj(g[2 * half - np.arange(1, n)])
    sym_res = float(np.abs(g[1:] - mirror).max())
    if sym_res > 1e-6 * g_scale:
        raise RuntimeError(
            f"G(-tau) = conj(G(tau)) is violated by {sym_res:.3e} "
            f"(scale {g_scale:.3e}); the characteristic function is "
            "inconsistent"
        )
    g_sym = g.copy()
    g_sym[1:] = 0.5 * (g[1:] + mirror)
    # the -tau_max sample has no partner inside the window; averaging it
    # with the phantom conj(G(+tau_max)) keeps the transform real and is
    # consistent with the truncation error already incurred there
    g_sym[0] = g[0].real

    spec = np.roll(np.fft.fft(np.roll(g_sym, -half)), half) * (
        dtau / (2.0 * math.pi)
    )
    dw = 2.0 * math.pi / (n * dtau)
    w = (np.arange(n) - half) * dw

    p_re = spec.real
    scale = max(float(np.abs(p_re).max()), 1e-300)
    edge = max(abs(p_re[0]), abs(p_re[-1]))
    g_edge = abs(complex(g[0]))
    if g_edge > 1e-3 * g_scale or edge > 1e-3 * scale:
        warnings.warn(
            f"|G| at the tau-window edge is {g_edge:.3e} and the density "
            f"at the frequency-window edge is {edge / scale:.2e} of the "
            "peak; expect sinc ringing in p(w) -- increase tau_max to "
            "reduce it",
            stacklevel=2,
        )
    meta = {
        "symmetry_residual": sym_res,
        "imag_residue": float(np.abs(spec.imag).max()),
        "edge_ratio": float(edge / scale),
        "g_edge": g_edge,
        "min_p": float(p_re.min()),
        "norm": float(p_re.sum() * dw),
        "direction": char.direction,
    }
    return WorkDistribution(w, p_re.copy(), float(dw), meta)


# ---------------------------------------------------------------------------
# fluctuation-theorem checks
# ---------------------------------------------------------------------------


def jarzynski_check(dist: WorkDistribution, beta: float,
                    a_hyb: float) -> float:
    """|<exp(-beta w)> * exp(beta A_hyb) - 1| for the given density."""
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    w = np.asarray(dist.w, dtype=float)
    p = np.asarray(dist.p, dtype=float)
    support = np.abs(p) > 1e-10 * max(np.abs(p).max(), 1e-300)
    if support.any():
        w_min = float(w[support].min())
        if -beta * w_min > math.log(1e6):
            warnings.warn(
                f"exp(-beta w) reaches {math.exp(-beta * w_min):.2e} on the "
                "support; the tail noise is exponentially amplified",
                stacklevel=2,
            )
    est = float(np.sum(np.exp(-beta * w) * p) * dist.dw)
    return abs(est * math.exp(beta * a_hyb) - 1.0)


def crooks_check(
    p_fwd: WorkDistribution,
    p_bwd: WorkDistribution,
    beta: float,
    a_hyb: float,
) -> tuple[float, float]:
    """Crossing of p(w) with the reflected backward density and the
    median detailed-balance ratio residual.

    Returns (crossing, ratio_residual): the interpolated w* where
    p(w*) = pbar(-w*) near the dominant overlap, and the median over the
    joint-support window of |exp(-beta w) p(w) / (exp(-beta A) pbar(-w))
    - 1|.
    """
    w = np.asarray(p_fwd.w, dtype=float)
    if w.shape != np.shape(p_bwd.w) or not np.allclose(
        w, p_bwd.w, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(w).max()))
    ):
        raise ValueError("forward and backward densities use different grids")
    pf = np.asarray(p_fwd.p, dtype=float)
    pb_ref = np.interp(-w, w, np.asarray(p_bwd.p, dtype=float))

    mask = (pf > 1e-3 * pf.max()) & (pb_ref > 1e-3 * pb_ref.max())
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise RuntimeError(
            "forward and reflected backward densities do not overlap "
            "at this resolution"
        )
    lo, hi = int(idx[0]), int(idx[-1])
    f = pf - pb_ref
    crossings = []
    for i in range(lo, hi):
        if f[i] == 0.0:
            crossings.append((min(pf[i], pb_ref[i]), float(w[i])))
        elif f[i] * f[i + 1] < 0.0:
            frac = f[i] / (f[i] - f[i + 1])
            wc = float(w[i] + frac * (w[i + 1] - w[i]))
            height = min(pf[i], pb_ref[i], pf[i + 1], pb_ref[i + 1])
            crossings.append((height, wc))
    if not crossings:
        raise RuntimeError(
            "no crossing of the forward and reflected backward densities "
            "inside their overlap window"
        )
    crossing = max(crossings)[1]

    window = (pf > 0.05 * pf.max()) & (pb_ref > 0.05 * pb_ref.max())
    ratio = (
        np.exp(-beta * w[window]) * pf[window]
        / (math.exp(-beta * a_hyb) * pb_ref[window])
    )
    ratio_residual = float(np.median(np.abs(ratio - 1.0)))
    return float(crossing), ratio_residual


# ---------------------------------------------------------------------------
# deterministic writers
# ---------------------------------------------------------------------------


def write_characteristic_csv(path, char: WorkCharacteristic) -> None:
    """`tau,re_g,im_g` rows, shortest-roundtrip float formatting."""
    with open(path, "w", newline="\n") as fh:
        fh.write("tau,re_g,im_g\n")
        for t, v in zip(char.tau, char.g):
            fh.write(f"{float(t)!r},{float(v.real)!r},{float(v.imag)!r}\n")


def write_work_distribution_csv(path, dist: WorkDistribution) -> None:
    """`w,p` rows, same deterministic formatting."""
    with open(path, "w", newline="\n") as fh:
        fh.write("w,p\n")
        for x, y in zip(dist.w, dist.p):
            fh.write(f"{float(x)!r},{float(y)!r}\n")


def write_thermo_json(path, payload: dict) -> None:
    """Sorted, indented JSON summary (byte-identical across reruns)."""
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
