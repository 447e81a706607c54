"""Reduced-state functionals and the dipole-correlation / absorption
pipeline shared by both real-time engines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .deom import (
    SystemModel,
    apply_dipole,
    build_generator_extended,
    initial_factorized,
)
from .hierarchy import IndexSpace, propagate

__all__ = [
    "TimeSeries",
    "von_neumann_entropy",
    "population_difference",
    "dipole_correlation",
    "absorption_spectrum",
    "dominant_frequency",
    "write_timeseries_csv",
    "write_spectrum_csv",
]


@dataclass
class TimeSeries:
    """Samples on a monotone grid; values may be real or complex."""

    times: np.ndarray
    values: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values)
        if self.times.ndim != 1 or self.times.size != self.values.size:
            raise ValueError("times and values must be 1-D of equal length")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.times)) or not np.all(
            np.isfinite(self.values)
        ):
            raise ValueError("non-finite samples")


def von_neumann_entropy(rho: np.ndarray) -> float:
    """-tr(rho ln rho) over positive eigenvalues.

    Eigenvalues down to -1e-10 are clipped to zero (integrator noise);
    anything lower, or a trace off by more than 1e-6, is an error.
    """
    rho = np.asarray(rho, dtype=complex)
    if abs(np.trace(rho).real - 1.0) > 1e-6 or abs(np.trace(rho).imag) > 1e-6:
        raise ValueError(f"state trace {np.trace(rho):.8f} is not 1")
    evals = np.linalg.eigvalsh(rho)
    if evals.min() < -1e-10:
        raise ValueError(f"eigenvalue {evals.min():.3e} below -1e-10")
    evals = np.clip(evals, 0.0, None)
    pos = evals[evals > 0.0]
    return float(-(pos * np.log(pos)).sum())


def population_difference(rho: np.ndarray) -> float:
    """rho_gg - rho_ee for a two-level state in (g, e) ordering."""
    rho = np.asarray(rho)
    if rho.shape != (2, 2):
        raise ValueError("population difference is defined for d = 2")
    diff = rho[0, 0] - rho[1, 1]
    if abs(diff.imag) > 1e-10:
        raise ValueError(f"population difference has Im = {diff.imag:.3e}")
    return float(diff.real)


def dominant_frequency(times: np.ndarray, values: np.ndarray) -> float:
    """Frequency (rad/time) of the strongest nonzero spectral line.

    FFT of the mean-subtracted series with parabolic refinement of the
    peak bin; assumes a uniform grid.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    dt = times[1] - times[0]
    if not np.allclose(np.diff(times), dt, rtol=1e-9, atol=1e-12):
        raise ValueError("dominant_frequency needs a uniform grid")
    y = values - values.mean()
    n = 8 * len(y)  # zero-pad for a dense line grid
    spec = np.abs(np.fft.rfft(y, n=n))
    k = int(np.argmax(spec))
    if 0 < k < len(spec) - 1:  # parabolic peak interpolation
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        denom = a - 2.0 * b + c
        if denom != 0.0:
            k = k + 0.5 * (a - c) / denom
    return 2.0 * math.pi * k / (n * dt)


# ---------------------------------------------------------------------------
# dipole correlation and absorption
# ---------------------------------------------------------------------------


def dipole_correlation(
    engine: str,
    model: SystemModel,
    bath_inputs: dict,
    mu: np.ndarray | None = None,
    t_grid: np.ndarray | None = None,
    *,
    dt: float = 0.004,
) -> TimeSeries:
    """C(t) = tr_S[mu rho0(t)] after hitting the stationary state with mu
    from the left at t = 0.

    For the two-state models here the factorized ground start |g><g| is
    already stationary (the coupling attaches to |e><e|), so it is used
    directly.  `bath_inputs` is engine-specific:

    - "deom": {"decomp": BathDecomposition, "l": tier cap,
               "filter_tol": optional}
    - "bsm":  {"fp": FPParams, "n_max": mode cap, "secondary":
               BathDecomposition, "l": secondary tier cap, "lam_tilde":
               counter-term weight, "filter_tol": optional,
               "bath_reference": start from the stationary bath
               (default True)}
    """
    if t_grid is None:
        t_grid = np.arange(0.0, 20.0 + 1e-12, dt)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid[0] != 0.0:
        raise ValueError("correlation grid must start at t = 0")
    if mu is None:
        if model.d != 2:
            raise ValueError("default dipole operator requires d = 2")
        mu = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    mu = np.asarray(mu, dtype=complex)

    if engine == "deom":
        decomp = bath_inputs["decomp"]
        space = IndexSpace(decomp.k, bath_inputs["l"])
        gen = build_generator_extended(model, decomp, space)
        rho0 = np.zeros((model.d, model.d), dtype=complex)
        rho0[0, 0] = 1.0
        state = initial_factorized(rho0, space)
        state = apply_dipole(state, mu, "left")

        values = np.empty(len(t_grid), dtype=complex)
        values[0] = np.trace(mu @ state.data[0])
        for i, t_next in enumerate(t_grid[1:], start=1):
            propagate(gen, state, t_next, dt,
                      filter_tol=bath_inputs.get("filter_tol", 0.0))
            values[i] = np.trace(mu @ state.data[0])
        return TimeSeries(t_grid, values, label="dipole_correlation",
                          meta={"engine": "deom"})
    if engine == "bsm":
        from . import bsm  # deferred: heavy module

        return bsm.dipole_correlation_core(model, bath_inputs, mu, t_grid, dt)
    raise ValueError(f"unknown engine {engine!r}")


def absorption_spectrum(
    corr: TimeSeries,
    omega_grid: np.ndarray,
    window: float | None = None,
) -> TimeSeries:
    """S(w) = Re int_0^T dt e^{i w t} C(t), trapezoidal on the series grid.

    A positive `window` multiplies C by exp(-window * t) (rate recorded in
    the output metadata).  Without a window the series must have decayed
    below 1e-6 in magnitude at its final time.
    """
    omega_grid = np.asarray(omega_grid, dtype=float)
    t = corr.times
    c = corr.values.astype(complex)
    if window is not None:
        if window <= 0:
            raise ValueError("window rate must be positive")
        c = c * np.exp(-window * t)
    elif abs(c[-1]) > 1e-6:
        raise ValueError(
            f"correlation has |C(T)| = {abs(c[-1]):.2e} at the final time; "
            "supply an exponential window"
        )
    s = np.empty(len(omega_grid))
    chunk = max(1, int(4e6 // max(len(t), 1)))
    for i in range(0, len(omega_grid), chunk):
        ws = omega_grid[i : i + chunk]
        phases = np.exp(1j * np.outer(ws, t))
        s[i : i + chunk] = np.trapezoid(phases * c[None, :], t, axis=1).real
    meta = dict(corr.meta)
    meta["window"] = window
    return TimeSeries(omega_grid, s, label="absorption_spectrum", meta=meta)


# ---------------------------------------------------------------------------
# deterministic writers
# ---------------------------------------------------------------------------


def write_timeseries_csv(path, ts: TimeSeries) -> None:
    """`t,value_re,value_im` rows with shortest-roundtrip float formatting
    (byte-identical across reruns)."""
    vals = np.asarray(ts.values, dtype=complex)
    with open(path, "w", newline="\n") as fh:
        fh.write("t,value_re,value_im\n")
        for t, v in zip(ts.times, vals):
            fh.write(f"{float(t)!r},{float(v.real)!r},{float(v.imag)!r}\n")


def write_spectrum_csv(path, ts: TimeSeries) -> None:
    """`omega,S` rows, same deterministic formatting."""
    if np.iscomplexobj(ts.values):
        raise ValueError("spectrum values must be real")
    with open(path, "w", newline="\n") as fh:
        fh.write("omega,S\n")
        for w, s in zip(ts.times, ts.values):
            fh.write(f"{float(w)!r},{float(s)!r}\n")
