"""Command-line front end.

Subcommands: ``decompose``, ``dynamics``, ``spectrum``, ``wigner``,
``free-energy``, ``work-dist``, ``validate``.  Every run resolves a
configuration (defaults < preset < config file < flags), writes its
artifacts into the output directory together with a metadata JSON holding
the fully resolved configuration, and is deterministic: identical
configurations produce byte-identical artifacts.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 validation breach.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import backend_name, set_num_threads
from .bath import decomposition_residual
from .bsm import (
    CoreSpace,
    FPBasisTruncation,
    WignerGrid,
    bath_reference_coefficients,
    build_core_generator_direct,
    default_wigner_grid,
    initial_core_state,
    wigner_reconstruct,
    write_wigner_frames,
)
from .config import ConfigError, PRESETS, RunConfig, resolve_config
from .deom import build_generator_extended, initial_factorized
from .hierarchy import IndexSpace, propagate
from .observables import (
    TimeSeries,
    absorption_spectrum,
    dipole_correlation,
    population_difference,
    von_neumann_entropy,
    write_spectrum_csv,
    write_timeseries_csv,
)
from .thermo import (
    MixingSchedule,
    build_ideom_generator,
    characteristic_function,
    crooks_check,
    default_tau_grid,
    hybridization_free_energy,
    jarzynski_check,
    work_distribution,
    write_characteristic_csv,
    write_thermo_json,
    write_work_distribution_csv,
)

_NUMERICAL = (RuntimeError, FloatingPointError, OverflowError,
              np.linalg.LinAlgError)


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_metadata(outdir: Path, command: str, cfg: RunConfig,
                    artifacts: list[str]) -> None:
    _write_json(outdir / f"{command.replace('-', '_')}_meta.json", {
        "command": command,
        "version": __version__,
        "backend": backend_name(),
        "artifacts": sorted(artifacts),
        "config": cfg.resolved(),
    })


def _engines(cfg: RunConfig) -> list[str]:
    eng = cfg.run["engine"]
    return ["deom", "bsm"] if eng == "both" else [eng]


def _ground_state(d: int) -> np.ndarray:
    rho = np.zeros((d, d), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def _deom_setup(cfg: RunConfig, model):
    decomp = cfg.primary_decomposition()
    space = IndexSpace(decomp.k, cfg.truncation["l"])
    gen = build_generator_extended(model, decomp, space)
    state = initial_factorized(_ground_state(model.d), space)
    return gen, state, (lambda s: s.data[0])


def _bsm_setup(cfg: RunConfig, model):
    fp = cfg.fp_params()
    secondary = cfg.secondary_decomposition()
    trunc = FPBasisTruncation(cfg.truncation["n_max"])
    space = IndexSpace(secondary.k, cfg.truncation["l_secondary"])
    lam_tilde = cfg.bath["lam_tilde"]
    ref = bath_reference_coefficients(fp, secondary, lam_tilde, trunc, space)
    gen = build_core_generator_direct(model, fp, secondary, lam_tilde,
                                      trunc, space)
    state = initial_core_state(_ground_state(model.d),
                               CoreSpace(trunc, space), fp, ref)
    return gen, state, (lambda s: s.reduced)


def _dynamics_series(engine: str, cfg: RunConfig, model):
    """Population and entropy time series for one engine."""
    setup = _deom_setup if engine == "deom" else _bsm_setup
    gen, state, reduced_of = setup(cfg, model)
    every = cfg.run["sample_every"]
    if model.d == 2:
        pop_label, pop_of = "population_difference", population_difference
    else:
        pop_label = "ground_population"

        def pop_of(rho):
            return float(rho[0, 0].real)

    times, pops, ents = [], [], []

    def record(state):
        rho = reduced_of(state)
        times.append(state.time)
        pops.append(pop_of(rho))
        ents.append(von_neumann_entropy(rho))

    steps = [0]

    def observer(state):
        steps[0] += 1
        if steps[0] % every == 0:
            record(state)

    record(state)
    propagate(gen, state, cfg.run["t_end"], cfg.run["dt"], observer,
              filter_tol=cfg.truncation["filter_tol"],
              filter_interval=cfg.truncation["filter_interval"])
    if state.time > times[-1] + 1e-12:
        record(state)
    meta = {"engine": engine}
    return (TimeSeries(times, pops, label=pop_label, meta=meta),
            TimeSeries(times, ents, label="entropy", meta=meta))


def _deviation(ref: TimeSeries, other: TimeSeries) -> dict:
    """Max-abs and L2 differences of `other` against `ref` on ref's grid."""
    vals = np.interp(ref.times, other.times, np.real(other.values))
    diff = vals - np.real(ref.values)
    return {
        "max": float(np.abs(diff).max()),
        "l2": float(np.sqrt(np.trapezoid(diff * diff, ref.times))),
    }


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_decompose(cfg: RunConfig, outdir: Path) -> tuple[int, list[str]]:
    decomp = cfg.primary_decomposition()
    beta = cfg.bath["beta"]
    t_grid = np.linspace(0.0, 5.0 * beta, 401)
    residual = decomposition_residual(decomp, t_grid)
    payload = {
        "model": cfg.bath["model"],
        "scheme": cfg.bath["scheme"],
        "order": cfg.bath["order"],
        "beta": beta,
        "k": decomp.k,
        "eta_re": [float(x) for x in decomp.eta.real],
        "eta_im": [float(x) for x in decomp.eta.imag],
        "gamma_re": [float(x) for x in decomp.gamma.real],
        "gamma_im": [float(x) for x in decomp.gamma.imag],
        "conjugate_index": [int(i) for i in decomp.conjugate_index],
        "residual_rel_max": residual,
        "residual_window": [0.0, 5.0 * beta],
    }
    _write_json(outdir / "decomposition.json", payload)
    print(f"decomposed {cfg.bath['model']} with {decomp.k} exponentials; "
          f"max relative residual {residual:.3e} on [0, {5.0 * beta:g}]")
    return 0, ["decomposition.json"]


def cmd_dynamics(cfg: RunConfig, outdir: Path) -> tuple[int, list[str]]:
    model = cfg.system_model()
    artifacts = []
    series = {}
    for engine in _engines(cfg):
        pop, ent = _dynamics_series(engine, cfg, model)
        series[engine] = (pop, ent)
        for ts, stem in ((pop, "population"), (ent, "entropy")):
            name = f"{stem}_{engine}.csv"
            write_timeseries_csv(outdir / name, ts)
            artifacts.append(name)
        print(f"{engine}: {len(pop.times)} samples to t = "
              f"{pop.times[-1]:g}")
    if len(series) == 2:
        report = {
            series["deom"][0].label: _deviation(series["deom"][0],
                                                series["bsm"][0]),
            "entropy": _deviation(series["deom"][1], series["bsm"][1]),
        }
        _write_json(outdir / "deviation_report.json", report)
        artifacts.append("deviation_report.json")
        for label, dev in report.items():
            print(f"deviation {label}: max {dev['max']:.3e}, "
                  f"l2 {dev['l2']:.3e}")
    return 0, artifacts


def cmd_spectrum(cfg: RunConfig, outdir: Path) -> tuple[int, list[str]]:
    model = cfg.system_model()
    run, trunc, bath = cfg.run, cfg.truncation, cfg.bath
    step = run["dt"] * run["sample_every"]
    n_t = int(round(run["t_end"] / step))
    t_grid = np.arange(n_t + 1) * step
    n_w = int(round((run["omega_max"] - run["omega_min"])
                    / run["omega_step"]))
    w_grid = run["omega_min"] + np.arange(n_w + 1) * run["omega_step"]
    window = run["window"] if run["window"] > 0 else None

    artifacts, spectra = [], {}
    for engine in _engines(cfg):
        if engine == "deom":
            inputs = {"decomp": cfg.primary_decomposition(),
                      "l": trunc["l"], "filter_tol": trunc["filter_tol"]}
        else:
            inputs = {"fp": cfg.fp_params(),
                      "secondary": cfg.secondary_decomposition(),
                      "lam_tilde": bath["lam_tilde"],
                      "n_max": trunc["n_max"], "l": trunc["l_secondary"],
                      "filter_tol": trunc["filter_tol"]}
        corr = dipole_correlation(engine, model, inputs, t_grid=t_grid,
                                  dt=run["dt"])
        spec = absorption_spectrum(corr, w_grid, window=window)
        for obj, writer, stem in (
                (corr, write_timeseries_csv, "correlation"),
                (spec, write_spectrum_csv, "spectrum")):
            name = f"{stem}_{engine}.csv"
            writer(outdir / name, obj)
            artifacts.append(name)
        spectra[engine] = spec
        peak = float(w_grid[int(np.argmax(spec.values))])
        print(f"{engine}: spectrum peak at omega = {peak:g}")
    if len(spectra) == 2:
        sd, sb = spectra["deom"].values, spectra["bsm"].values
        scale = float(np.abs(sd).max())
        report = {
            "max_abs": float(np.abs(sd - sb).max()),
            "max_rel_to_peak": float(np.abs(sd - sb).max() / scale),
            "peak_deom": float(w_grid[int(np.argmax(sd))]),
            "peak_bsm": float(w_grid[int(np.argmax(sb))]),
            "peak_bins_apart": abs(int(np.argmax(sd))
                                   - int(np.argmax(sb))),
            "omega_step": run["omega_step"],
        }
        _write_json(outdir / "deviation_report.json", report)
        artifacts.append("deviation_report.json")
        print(f"deviation: {report['max_rel_to_peak']:.3e} of peak; "
              f"peaks {report['peak_bins_apart']} bins apart")
    return 0, artifacts


def cmd_wigner(cfg: RunConfig, outdir: Path) -> tuple[int, list[str]]:
    if cfg.run["engine"] == "deom":
        raise ConfigError(["[run].engine: the wigner command reconstructs "
                           "the solvation mode and needs the bsm engine"])
    model = cfg.system_model()
    gen, state, _ = _bsm_setup(cfg, model)
    fp = cfg.fp_params()
    trunc = FPBasisTruncation(cfg.truncation["n_max"])
    x, p = default_wigner_grid(fp, n=cfg.run["wigner_grid_n"])
    frames, times, residue = [], [], 0.0
    for t in sorted(cfg.run["wigner_times"]):
        if t > state.time + 1e-12:
            propagate(gen, state, t, cfg.run["dt"],
                      filter_tol=cfg.truncation["filter_tol"],
                      filter_interval=cfg.truncation["filter_interval"])
        frame = wigner_reconstruct(state.mode_coefficients(), fp, trunc,
                                   x, p, time=t)
        frames.append(frame.frames[0])
        times.append(float(t))
        residue = max(residue, frame.meta["imag_residue"])
    grid = WignerGrid(x, p, np.stack(frames), np.asarray(times),
                      meta={"imag_residue": residue})
    manifest = write_wigner_frames(grid, outdir, stem="wigner")
    norms = grid.normalizations()
    print(f"{len(times)} frames; normalization drift "
          f"{float(np.abs(np.asarray(norms) - norms[0]).max()):.3e}; "
          f"imaginary residue {residue:.3e}")
    artifacts = [manifest.name] + [f"wigner_{i:04d}.csv"
                                   for i in range(len(times))]
    return 0, artifacts


def _free_energy(cfg: RunConfig, model):
    decomp = cfg.primary_decomposition()
    space = IndexSpace(decomp.k, cfg.truncation["l"])
    gen = build_ideom_generator(model, decomp, space)
    return hybridization_free_energy(gen, space, cfg.bath["beta"],
                                     cfg.thermo["dtau_imag"], model=model)


def cmd_free_energy(cfg: RunConfig, outdir: Path) -> tuple[int, list[str]]:
    z, a = _free_energy(cfg, cfg.system_model())
    payload = {"z_ratio": z, "a_hyb": a, "beta": cfg.bath["beta"],
               "dtau": cfg.thermo["dtau_imag"]}
    write_thermo_json(outdir / "free_energy.json", payload)
    print(f"z_ratio = {z:.8f}, a_hyb = {a:.8f}")
    return 0, ["free_energy.json"]


def cmd_work_dist(cfg: RunConfig, outdir: Path) -> tuple[int, list[str]]:
    model = cfg.system_model()
    th = cfg.thermo
    beta = cfg.bath["beta"]
    decomp = cfg.primary_decomposition()
    space = IndexSpace(decomp.k, cfg.truncation["l"])
    tau = default_tau_grid(th["tau_max"], th["n_tau"])
    z, a_hyb = _free_energy(cfg, model)
    payload = {"a_hyb": a_hyb, "z_ratio": z, "beta": beta}
    directions = (["forward", "backward"] if th["direction"] == "both"
                  else [th["direction"]])
    artifacts, dists = [], {}
    for direction in directions:
        schedule = MixingSchedule(th["a"], th["t_f"], direction)
        char = characteristic_function(model, decomp, space, schedule,
                                       tau, cfg.run["dt"],
                                       eq_t_relax=th["eq_t_relax"],
                                       eq_tol=th["eq_tol"])
        dist = work_distribution(char)
        dists[direction] = dist
        for obj, writer, stem in (
                (char, write_characteristic_csv, "characteristic"),
                (dist, write_work_distribution_csv, "work_dist")):
            name = f"{stem}_{direction}.csv"
            writer(outdir / name, obj)
            artifacts.append(name)
        sign = 1.0 if direction == "forward" else -1.0
        resid = jarzynski_check(dist, beta, sign * a_hyb)
        payload[f"jarzynski_residual_{direction}"] = resid
        print(f"{direction}: jarzynski residual {resid:.3e}")
    if len(dists) == 2:
        crossing, ratio = crooks_check(dists["forward"],
                                       dists["backward"], beta, a_hyb)
        payload["crossing"] = {
            "w_star": crossing,
            "gap_to_a_hyb": abs(crossing - a_hyb),
            "bin_width": dists["forward"].dw,
            "ratio_residual": ratio,
        }
        print(f"crossing at w = {crossing:.6f} "
              f"(a_hyb = {a_hyb:.6f}, bin width "
              f"{dists['forward'].dw:.6f}); ratio residual {ratio:.3e}")
    write_thermo_json(outdir / "work_distribution.json", payload)
    artifacts.append("work_distribution.json")
    return 0, artifacts


def cmd_validate(cfg: RunConfig, outdir: Path) -> tuple[int, list[str]]:
    model = cfg.system_model()
    tol = cfg.run["tolerance"]
    series = {eng: _dynamics_series(eng, cfg, model)
              for eng in ("deom", "bsm")}
    report = {"tolerance": tol, "observables": {}, "pass": True}
    for i, label in ((0, series["deom"][0].label or "population"),
                     (1, "entropy")):
        dev = _deviation(series["deom"][i], series["bsm"][i])
        ok = dev["max"] < tol
        report["observables"][label] = dev | {"pass": ok}
        report["pass"] = report["pass"] and ok
        print(f"{label}: max {dev['max']:.3e}, l2 {dev['l2']:.3e} -> "
              f"{'PASS' if ok else 'FAIL'}")
    _write_json(outdir / "validation_report.json", report)
    print(f"validation {'PASSED' if report['pass'] else 'FAILED'} "
          f"(tolerance {tol:g})")
    return (0 if report["pass"] else 4), ["validation_report.json"]


_HANDLERS = {
    "decompose": cmd_decompose,
    "dynamics": cmd_dynamics,
    "spectrum": cmd_spectrum,
    "wigner": cmd_wigner,
    "free-energy": cmd_free_energy,
    "work-dist": cmd_work_dist,
    "validate": cmd_validate,
}

_HELP = {
    "decompose": "expand the bath correlation function and report the "
                 "residual",
    "dynamics": "propagate the reduced state and record observables",
    "spectrum": "dipole correlation function and absorption spectrum",
    "wigner": "phase-space frames of the solvation mode",
    "free-energy": "imaginary-time hybridization free energy",
    "work-dist": "mixing-work characteristic function and distribution",
    "validate": "run both engines and check the cross-method deviations",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadheom",
        description="Hierarchical open-quantum-system dynamics with "
                    "quadratic system-bath coupling.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in _HANDLERS.items():
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", metavar="PATH",
                       help="TOML configuration file")
        p.add_argument("--preset", metavar="NAME",
                       help="named parameter set: "
                            f"{', '.join(sorted(PRESETS))}")
        p.add_argument("--engine", choices=["deom", "bsm", "both"],
                       help="override [run].engine")
        p.add_argument("--out", metavar="DIR",
                       help="override [output].directory")
        p.add_argument("--seed", type=int, metavar="N",
                       help="reserved for stochastic extensions (unused)")
        p.add_argument("--threads", type=int, metavar="N",
                       help="kernel thread count")
        if name == "work-dist":
            p.add_argument("--direction",
                           choices=["forward", "backward", "both"],
                           help="override [thermo].direction")
        p.set_defaults(handler=handler)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides: dict = {}
    if args.engine:
        overrides.setdefault("run", {})["engine"] = args.engine
    if args.out:
        overrides.setdefault("output", {})["directory"] = args.out
    if getattr(args, "direction", None):
        overrides.setdefault("thermo", {})["direction"] = args.direction

    try:
        cfg = resolve_config(args.preset, args.config, overrides)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for violation in exc.violations:
            print(f"  {violation}", file=sys.stderr)
        return 2
    if args.threads:
        set_num_threads(args.threads)

    outdir = Path(cfg.output["directory"])
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        status, artifacts = args.handler(cfg, outdir)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for violation in exc.violations:
            print(f"  {violation}", file=sys.stderr)
        return 2
    except _NUMERICAL as exc:
        print(f"numerical failure in {args.command}: {exc}",
              file=sys.stderr)
        return 3
    _write_metadata(outdir, args.command, cfg, artifacts)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
