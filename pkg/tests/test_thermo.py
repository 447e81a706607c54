"""Thermodynamics hierarchies: schedules, free energy, work statistics."""

import json
import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from quadheom.bath import BathDecomposition, BrownianDrude, decompose
from quadheom.deom import (
    SystemModel,
    TwoStateSpec,
    build_generator_extended,
    build_two_state_model,
)
from quadheom.hierarchy import DDOState, IndexSpace
from quadheom.thermo import (
    MixingSchedule,
    WorkCharacteristic,
    WorkDistribution,
    build_ideom_generator,
    build_lambda_generator,
    characteristic_function,
    crooks_check,
    default_tau_grid,
    hybridization_free_energy,
    jarzynski_check,
    schedule_eval,
    work_distribution,
    write_characteristic_csv,
    write_thermo_json,
    write_work_distribution_csv,
)

BETA = 1.0

# Commuting reference point: H = diag(0, 1), Q = |e><e|, constant shift
# alpha0 = 0.5 and no fluctuating coupling.  Everything is closed-form:
# the coupled spectrum is diag(0, 1.5), so
#   Z_ratio = (1 + e^{-1.5}) / (1 + e^{-1}),   A = -ln(Z_ratio),
# the forward work is 0 (from |g>) or alpha0 (from |e>) with the bare
# Boltzmann weights, and the backward work is 0 or -alpha0 with the
# coupled weights.
A0 = 0.5
Z_RATIO = (1.0 + math.exp(-1.5)) / (1.0 + math.exp(-1.0))
A_EXACT = -math.log(Z_RATIO)
P_G = 1.0 / (1.0 + math.exp(-1.0))
P_E = 1.0 - P_G
PB_G = 1.0 / (1.0 + math.exp(-1.5))
PB_E = 1.0 - PB_G


def _commuting_model(a0=A0):
    h = np.diag([0.0, 1.0]).astype(complex)
    q = np.diag([0.0, 1.0]).astype(complex)
    return SystemModel(h, q, a0, 0.0, 0.0, BETA)


def _empty_decomp():
    return BathDecomposition(
        eta=np.zeros(0, dtype=complex),
        gamma=np.zeros(0, dtype=complex),
        conjugate_index=np.zeros(0, dtype=int),
        beta=BETA,
    )


def _tiny_decomp():
    return BathDecomposition(
        eta=np.array([0.3 + 0.0j]),
        gamma=np.array([1.0 + 0.0j]),
        conjugate_index=np.array([0]),
        beta=BETA,
    )


# ---------------------------------------------------------------------------
# mixing schedule
# ---------------------------------------------------------------------------


def test_schedule_endpoints_and_reversal():
    s = MixingSchedule(a=0.7, t_f=4.0)
    assert s.value(0.0) == pytest.approx(0.0, abs=1e-14)
    assert s.value(4.0) == pytest.approx(1.0, abs=1e-14)
    b = s.reversed()
    assert b.direction == "backward"
    assert b.value(0.0) == pytest.approx(1.0, abs=1e-14)
    assert b.value(4.0) == pytest.approx(0.0, abs=1e-14)
    assert b.reversed() == s


def test_schedule_linear_limit_and_continuity():
    lin = MixingSchedule(a=0.0, t_f=5.0)
    soft = MixingSchedule(a=1e-12, t_f=5.0)
    for t in (0.0, 1.3, 2.5, 4.9, 5.0):
        assert lin.value(t) == pytest.approx(t / 5.0, abs=1e-15)
        assert lin.rate(t) == pytest.approx(0.2, abs=1e-15)
        assert soft.value(t) == pytest.approx(lin.value(t), abs=1e-9)
        assert soft.rate(t) == pytest.approx(lin.rate(t), abs=1e-9)


def test_schedule_rate_matches_finite_difference():
    h = 1e-5
    for direction in ("forward", "backward"):
        s = MixingSchedule(a=0.8, t_f=4.0, direction=direction)
        for t in (0.7, 2.3, 3.9):
            fd = (s.value(t + h) - s.value(t - h)) / (2.0 * h)
            assert s.rate(t) == pytest.approx(fd, abs=1e-7)


def test_schedule_eval_work_split():
    s = MixingSchedule(a=0.5, t_f=3.0)
    tau = np.array([-2.0, 0.0, 1.0, 4.0])
    lam, rate, lm, lp = schedule_eval(s, 1.2, tau)
    assert_allclose(lm + lp, 2.0 * lam, rtol=0.0, atol=1e-15)
    assert_allclose(lp - lm, tau * rate, rtol=0.0, atol=1e-15)
    assert lm.shape == tau.shape
    # scalar tau keeps scalars
    _, _, lm0, lp0 = schedule_eval(s, 1.2, 0.0)
    assert lm0 == pytest.approx(lam) and lp0 == pytest.approx(lam)


def test_schedule_validation():
    with pytest.raises(ValueError):
        MixingSchedule(a=0.5, t_f=0.0)
    with pytest.raises(ValueError):
        MixingSchedule(a=0.5, t_f=-1.0)
    with pytest.raises(ValueError):
        MixingSchedule(a=-0.1, t_f=1.0)
    with pytest.raises(ValueError):
        MixingSchedule(a=0.1, t_f=1.0, direction="sideways")
    s = MixingSchedule(a=0.5, t_f=2.0)
    with pytest.raises(ValueError):
        schedule_eval(s, -0.1, 0.0)
    with pytest.raises(ValueError):
        schedule_eval(s, 2.1, 0.0)


def test_schedule_json_dict():
    s = MixingSchedule(a=0.2, t_f=10.0, direction="backward")
    assert s.to_json_dict() == {"a": 0.2, "t_f": 10.0,
                                "direction": "backward"}


# ---------------------------------------------------------------------------
# imaginary-time hierarchy: free energy oracles
# ---------------------------------------------------------------------------


def test_ideom_decoupled_partition_is_unity():
    h = np.array([[0.0, 0.7], [0.7, 1.3]], dtype=complex)
    model = SystemModel(h, np.diag([0.0, 1.0]).astype(complex),
                        0.0, 0.0, 0.0, BETA)
    space = IndexSpace(1, 3)
    gen = build_ideom_generator(model, _tiny_decomp(), space)
    z, a = hybridization_free_energy(gen, space, BETA, BETA / 200,
                                     model=model)
    assert z == pytest.approx(1.0, abs=1e-12)
    assert a == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("decomp,space", [
    (_empty_decomp(), IndexSpace(0, 0)),
    (_tiny_decomp(), IndexSpace(1, 3)),
])
def test_ideom_commuting_closed_form(decomp, space):
    model = _commuting_model()
    gen = build_ideom_generator(model, decomp, space)
    z, a = hybridization_free_energy(gen, space, BETA, BETA / 200,
                                     model=model)
    assert z == pytest.approx(Z_RATIO, abs=1e-8)
    assert a == pytest.approx(A_EXACT, abs=1e-8)
    # explicit start overrides the bare Boltzmann default
    rho0 = np.diag([P_G, P_E]).astype(complex)
    z2, _ = hybridization_free_energy(gen, space, BETA, BETA / 200,
                                      rho0=rho0)
    assert z2 == pytest.approx(z, abs=1e-12)


def test_ideom_validation():
    model = _commuting_model()
    space = IndexSpace(1, 2)
    gen = build_ideom_generator(model, _tiny_decomp(), space)
    with pytest.raises(ValueError, match="divide"):
        hybridization_free_energy(gen, space, BETA, 0.3, model=model)
    with pytest.raises(ValueError, match="model or rho0"):
        hybridization_free_energy(gen, space, BETA, BETA / 100)
    with pytest.raises(ValueError):
        hybridization_free_energy(gen, space, -1.0, 0.01, model=model)
    with pytest.raises(ValueError, match="shape"):
        hybridization_free_energy(gen, space, BETA, BETA / 100,
                                  rho0=np.eye(3))
    with pytest.raises(ValueError, match="slots"):
        build_ideom_generator(model, _tiny_decomp(), IndexSpace(2, 2))


# ---------------------------------------------------------------------------
# driven-mixing generator structure
# ---------------------------------------------------------------------------


@pytest.mark.filterwarnings("ignore:Im")
def test_lambda_generator_collapses_to_realtime_at_tau_zero():
    # at tau = 0 both work weights equal lambda(t); at the end of the
    # forward ramp lambda = 1, so the driven generator must coincide with
    # the real-time one, conjugate pairing and rescaling included
    model = build_two_state_model(TwoStateSpec(1.0, 1.0, 0.25, 4.0 / 3.0),
                                  BETA)
    decomp = decompose(BrownianDrude(omega_b=1.0, lam=0.4, gamma=0.8),
                       BETA, scheme="pade", order=0)
    space = IndexSpace(decomp.k, 3)
    sched = MixingSchedule(a=0.3, t_f=2.0)
    driven = build_lambda_generator(model, decomp, space, sched, 0.0)
    realtime = build_generator_extended(model, decomp, space)
    a = driven.to_matrix(2.0).toarray()
    b = realtime.to_matrix(0.0).toarray()
    scale = np.abs(b).max()
    assert np.abs(a - b).max() < 1e-13 * scale


@pytest.mark.filterwarnings("ignore:Im")
def test_lambda_generator_couplings_are_tier_local():
    model = build_two_state_model(TwoStateSpec(1.0, 1.0, 0.25, 4.0 / 3.0),
                                  BETA)
    decomp = decompose(BrownianDrude(omega_b=1.0, lam=0.4, gamma=0.8),
                       BETA, scheme="pade", order=0)
    space = IndexSpace(decomp.k, 3)
    sched = MixingSchedule(a=0.3, t_f=2.0)
    gen = build_lambda_generator(model, decomp, space, sched, 0.0)
    d2 = model.d ** 2
    tiers = np.repeat(space.tier, d2)
    # at tau = 0 both work weights are lambda(t), which vanishes at t = 0,
    # so to_matrix(0) isolates the static part (block-diagonal in tier)
    # and the end-of-ramp difference isolates the coupling moves
    static = gen.to_matrix(0.0).tocoo()
    assert np.all(tiers[static.row] == tiers[static.col])
    coupling = (gen.to_matrix(sched.t_f) - gen.to_matrix(0.0)).tocoo()
    assert np.abs(tiers[coupling.row] - tiers[coupling.col]).max() <= 2

    with pytest.raises(ValueError, match="slots"):
        build_lambda_generator(model, decomp, IndexSpace(decomp.k + 1, 2),
                               sched, 0.0)


def test_decoupled_mixing_characteristic_is_unity():
    h = np.array([[0.0, 0.7], [0.7, 1.3]], dtype=complex)
    model = SystemModel(h, np.diag([0.0, 1.0]).astype(complex),
                        0.0, 0.0, 0.0, BETA)
    space = IndexSpace(1, 2)
    sched = MixingSchedule(a=0.5, t_f=1.0)
    tau = default_tau_grid(tau_max=4.0, n=16)
    cf = characteristic_function(model, _tiny_decomp(), space, sched, tau,
                                 0.02)
    assert np.abs(cf.g - 1.0).max() < 1e-12
    assert cf.meta["g0_error"] < 1e-12


# ---------------------------------------------------------------------------
# commuting two-peak work statistics (full pipeline against closed forms)
# ---------------------------------------------------------------------------


def _two_peak_setup():
    model = _commuting_model()
    decomp = _empty_decomp()
    space = IndexSpace(0, 0)
    # dtau = pi/2 puts alpha0 = 0.5 exactly on the 8th frequency bin
    tau = default_tau_grid(tau_max=16.0 * math.pi, n=64)
    return model, decomp, space, tau


def test_commuting_forward_work_two_peaks():
    model, decomp, space, tau = _two_peak_setup()
    sched = MixingSchedule(a=0.7, t_f=2.0)
    cf = characteristic_function(model, decomp, space, sched, tau, 0.002)
    g_exact = P_G + P_E * np.exp(1j * A0 * tau)
    assert np.abs(cf.g - g_exact).max() < 1e-5
    assert cf.meta["g0_error"] < 1e-9

    # the accumulated phase alpha0 * tau * (lambda(t_f) - lambda(0)) is
    # protocol independent; a different ramp must give the same G
    cf_lin = characteristic_function(model, decomp, space,
                                     MixingSchedule(a=0.0, t_f=1.0), tau,
                                     0.002)
    assert np.abs(cf.g - cf_lin.g).max() < 2e-5

    with pytest.warns(UserWarning, match="increase tau_max"):
        dist = work_distribution(cf)
    i0 = 32
    i1 = i0 + round(A0 / dist.dw)
    assert dist.dw == pytest.approx(0.0625, rel=1e-12)
    assert dist.p[i0] * dist.dw == pytest.approx(P_G, abs=1e-5)
    assert dist.p[i1] * dist.dw == pytest.approx(P_E, abs=1e-5)
    off = np.delete(dist.p, [i0, i1]) * dist.dw
    assert np.abs(off).max() < 1e-5
    assert dist.meta["norm"] == pytest.approx(1.0, abs=1e-9)
    assert dist.meta["imag_residue"] < 1e-12

    # Jarzynski against the closed-form free energy
    assert jarzynski_check(dist, BETA, A_EXACT) < 1e-4


def test_commuting_backward_work_and_crooks():
    model, decomp, space, tau = _two_peak_setup()
    sched = MixingSchedule(a=0.7, t_f=2.0, direction="backward")
    rho_eq = np.diag([PB_G, PB_E]).astype(complex)
    eq = DDOState(space, rho_eq[None, :, :], scaled=True)
    cfb = characteristic_function(model, decomp, space, sched, tau, 0.002,
                                  equilibrium=eq)
    g_exact = PB_G + PB_E * np.exp(-1j * A0 * tau)
    assert np.abs(cfb.g - g_exact).max() < 1e-5

    with pytest.warns(UserWarning, match="increase tau_max"):
        pb = work_distribution(cfb)
    i0 = 32
    im1 = i0 - round(A0 / pb.dw)
    assert pb.p[i0] * pb.dw == pytest.approx(PB_G, abs=1e-5)
    assert pb.p[im1] * pb.dw == pytest.approx(PB_E, abs=1e-5)
    assert jarzynski_check(pb, BETA, -A_EXACT) < 1e-4

    sched_f = MixingSchedule(a=0.7, t_f=2.0)
    cf = characteristic_function(model, decomp, space, sched_f, tau, 0.002)
    with pytest.warns(UserWarning, match="increase tau_max"):
        pf = work_distribution(cf)
    crossing, ratio_residual = crooks_check(pf, pb, BETA, A_EXACT)
    # detailed balance holds bin by bin on the peaks
    assert ratio_residual < 1e-4
    # for a discrete two-peak spectrum the density crossing is only
    # defined up to the gap between the peaks
    assert -0.1 <= crossing <= 0.6


# ---------------------------------------------------------------------------
# work-distribution mechanics
# ---------------------------------------------------------------------------


def test_work_distribution_of_unit_characteristic():
    tau = default_tau_grid(tau_max=8.0, n=32)
    char = WorkCharacteristic(tau, np.ones(32, dtype=complex))
    with pytest.warns(UserWarning, match="increase tau_max"):
        dist = work_distribution(char)
    half = 16
    assert dist.p[half] * dist.dw == pytest.approx(1.0, abs=1e-12)
    off = np.delete(dist.p, half) * dist.dw
    assert np.abs(off).max() < 1e-12
    assert dist.meta["norm"] == pytest.approx(1.0, abs=1e-12)


def test_work_distribution_flags_window_edge_tone():
    tau = default_tau_grid(tau_max=8.0, n=32)
    dtau = tau[1] - tau[0]
    g = np.exp(-1j * math.pi / dtau * tau)  # on-grid tone at w = -pi/dtau
    char = WorkCharacteristic(tau, g)
    with pytest.warns(UserWarning, match="increase tau_max"):
        dist = work_distribution(char)
    assert dist.meta["edge_ratio"] > 0.5


def test_work_distribution_rejects_asymmetric_characteristic():
    tau = default_tau_grid(tau_max=8.0, n=32)
    g = np.exp(-np.abs(tau)) + 0.3j * (tau > 0)
    with pytest.raises(RuntimeError, match="violated"):
        work_distribution(WorkCharacteristic(tau, g))


def test_tau_grid_validation():
    with pytest.raises(ValueError, match="even"):
        default_tau_grid(tau_max=8.0, n=33)
    with pytest.raises(ValueError):
        default_tau_grid(tau_max=-1.0, n=32)
    grid = default_tau_grid(tau_max=8.0, n=32)
    assert grid[16] == 0.0
    assert grid[1] - grid[0] == pytest.approx(0.5, rel=1e-15)

    g = np.ones(5, dtype=complex)
    for bad in [
        np.array([0.0, 1.0, 2.0, 3.5, 4.0]),     # nonuniform
        np.array([4.0, 3.0, 2.0, 1.0, 0.0]),     # decreasing
        np.array([0.5, 1.5, 2.5, 3.5, 4.5]),     # no tau = 0
        np.array([-3.0, -2.0, -1.0, 0.0, 2.0]),  # nonuniform, asymmetric
    ]:
        with pytest.raises(ValueError):
            work_distribution(WorkCharacteristic(bad, g))
    with pytest.raises(ValueError):
        work_distribution(WorkCharacteristic(np.array([0.0]), g[:1]))


def test_characteristic_function_validation():
    model = _commuting_model()
    space = IndexSpace(0, 0)
    sched = MixingSchedule(a=0.5, t_f=1.0)
    tau = default_tau_grid(tau_max=4.0, n=8)
    with pytest.raises(ValueError, match="dt"):
        characteristic_function(model, _empty_decomp(), space, sched, tau,
                                0.0)
    eq = DDOState(IndexSpace(1, 1), np.zeros((2, 2, 2), dtype=complex))
    with pytest.raises(ValueError, match="different space"):
        characteristic_function(model, _empty_decomp(), space,
                                sched.reversed(), tau, 0.01, equilibrium=eq)


# ---------------------------------------------------------------------------
# fluctuation-theorem checks on an analytic Gaussian pair
# ---------------------------------------------------------------------------


def _gaussian_pair():
    # forward work ~ N(2, 1) at beta = 1 gives A = mu - beta sigma^2/2 = 1.5
    # and conjugate backward work ~ N(-1, 1); Crooks crossing exactly at A
    w = (np.arange(4096) - 2048) * 0.01
    pf = np.exp(-0.5 * (w - 2.0) ** 2) / math.sqrt(2.0 * math.pi)
    pb = np.exp(-0.5 * (w + 1.0) ** 2) / math.sqrt(2.0 * math.pi)
    meta = {}
    return (WorkDistribution(w, pf, 0.01, meta),
            WorkDistribution(w, pb, 0.01, meta))


def test_jarzynski_on_gaussian_oracle():
    pf, pb = _gaussian_pair()
    assert jarzynski_check(pf, 1.0, 1.5) < 1e-9
    assert jarzynski_check(pb, 1.0, -1.5) < 1e-9
    with pytest.raises(ValueError):
        jarzynski_check(pf, 0.0, 1.5)


def test_crooks_on_gaussian_oracle():
    pf, pb = _gaussian_pair()
    crossing, ratio_residual = crooks_check(pf, pb, 1.0, 1.5)
    assert crossing == pytest.approx(1.5, abs=1e-6)
    assert ratio_residual < 1e-10


def test_jarzynski_warns_on_amplified_tail():
    w = (np.arange(1024) - 512) * 0.05
    p = np.exp(-0.5 * (w + 15.0) ** 2) / math.sqrt(2.0 * math.pi)
    dist = WorkDistribution(w, p, 0.05, {})
    with pytest.warns(UserWarning, match="amplified"):
        jarzynski_check(dist, 1.0, 0.0)


def test_crooks_validation():
    pf, pb = _gaussian_pair()
    w2 = pf.w * 2.0
    with pytest.raises(ValueError, match="grids"):
        crooks_check(pf, WorkDistribution(w2, pb.p, 0.02, {}), 1.0, 1.5)

    # far-separated supports: no overlap at this resolution
    w = (np.arange(512) - 256) * 0.05
    g1 = np.exp(-0.5 * ((w - 10.0) / 0.3) ** 2)
    g2 = np.exp(-0.5 * ((w - 10.0) / 0.3) ** 2)  # reflected lives at -10
    with pytest.raises(RuntimeError, match="overlap"):
        crooks_check(WorkDistribution(w, g1, 0.05, {}),
                     WorkDistribution(w, g2, 0.05, {}), 1.0, 0.0)

    # overlapping but strictly ordered: no crossing to report
    p0 = np.exp(-0.5 * w ** 2)
    with pytest.raises(RuntimeError, match="no crossing"):
        crooks_check(WorkDistribution(w, p0, 0.05, {}),
                     WorkDistribution(w, 0.5 * p0, 0.05, {}), 1.0, 0.0)


# ---------------------------------------------------------------------------
# deterministic writers
# ---------------------------------------------------------------------------


def test_writers_roundtrip(tmp_path):
    tau = default_tau_grid(tau_max=2.0, n=4)
    g = np.array([0.1 + 0.2j, 0.3 - 0.4j, 1.0 + 0.0j, 0.5 + 0.0j])
    char = WorkCharacteristic(tau, g)
    path = tmp_path / "char.csv"
    write_characteristic_csv(path, char)
    lines = path.read_text().splitlines()
    assert lines[0] == "tau,re_g,im_g"
    assert len(lines) == 5
    row = lines[2].split(",")
    assert float(row[0]) == tau[1]
    assert float(row[1]) == g[1].real and float(row[2]) == g[1].imag

    dist = WorkDistribution(np.array([-1.0, 0.0, 1.0]),
                            np.array([0.25, 0.5, 0.25]), 1.0, {})
    dpath = tmp_path / "work.csv"
    write_work_distribution_csv(dpath, dist)
    dlines = dpath.read_text().splitlines()
    assert dlines[0] == "w,p"
    assert dlines[1] == "-1.0,0.25"

    payload = {"b": 2, "a": {"y": 1.5, "x": [1, 2]}}
    jpath = tmp_path / "thermo.json"
    write_thermo_json(jpath, payload)
    text = jpath.read_text()
    assert text.endswith("\n")
    assert json.loads(text) == payload
    assert text.index('"a"') < text.index('"b"')
    write_thermo_json(tmp_path / "again.json", payload)
    assert (tmp_path / "again.json").read_bytes() == jpath.read_bytes()


# ---------------------------------------------------------------------------
# noncommuting end-to-end smoke at a production-like operating point
# ---------------------------------------------------------------------------


@pytest.mark.filterwarnings("ignore:Im")
def test_mixing_work_pipeline_noncommuting_smoke():
    # two-state model with both linear and quadratic coupling against the
    # solvation-mode + residual-bath composite; the Jarzynski identity is
    # the cross-check between the imaginary-time and driven routes
    model = build_two_state_model(TwoStateSpec(1.0, 1.0, 0.25, 4.0 / 3.0),
                                  BETA)
    decomp = decompose(BrownianDrude(omega_b=1.0, lam=5.0, gamma=15.0),
                       BETA, scheme="pade", order=2)
    space = IndexSpace(decomp.k, 5)

    gen_i = build_ideom_generator(model, decomp, space)
    with pytest.warns(UserWarning, match="imaginary residue"):
        z, a_hyb = hybridization_free_energy(gen_i, space, BETA, BETA / 200,
                                             model=model)
    assert 0.8 < z < 0.95
    assert 0.05 < a_hyb < 0.2

    sched = MixingSchedule(a=0.2, t_f=10.0)
    tau = default_tau_grid(tau_max=32.0, n=128)
    cf = characteristic_function(model, decomp, space, sched, tau, 0.02)
    assert cf.meta["g0_error"] < 1e-9
    assert cf.meta["symmetry_residual"] < 1e-12

    with pytest.warns(UserWarning, match="increase tau_max"):
        dist = work_distribution(cf)
    assert dist.meta["norm"] == pytest.approx(1.0, abs=1e-9)
    w_peak = dist.w[int(np.argmax(dist.p))]
    assert abs(w_peak) <= 3.0 * dist.dw

    assert jarzynski_check(dist, BETA, a_hyb) < 8e-3
