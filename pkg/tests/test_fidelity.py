import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import linalg

from cqad.fidelity import (C_DIRECT, S_D, FidelityError, GateFidelityInputs, HeatingInputs,
                           closed_form_optimum, crowding_coefficient_direct, detuning_infidelity,
                           drive_heating_rate, fig3_inputs, global_infidelity, infidelity_map,
                           kerr_exact_infidelity, kerr_leading_infidelity, local_infidelity_direct,
                           local_infidelity_virtual, minimize_model, minimize_model_array, optimize_gate,
                           quantum_volume, two_family_crowding, volume_map)


def brute_optimum(k, c, spacing, bound, prefactor=1.0, form="linear"):
    """Dense log grid plus local refinement: an optimiser-free reference."""
    g = np.logspace(math.log10(bound) - 9, math.log10(bound), 200001)
    kt = k * c * math.pi / (2 * g)
    eps = prefactor * (g / spacing) ** 2
    f = kt + eps if form == "linear" else 1 - np.exp(-kt) * (1 - np.minimum(eps, 1))
    i = int(np.argmin(f))
    return g[i], f[i]


# -- local models -------------------------------------------------------------------

def test_crowding_only_limit():
    inp = GateFidelityInputs(0.0, 0.0, 10e6, 1e6)
    assert float(local_infidelity_direct(inp, 10e6)) == pytest.approx(1.0)
    assert float(local_infidelity_direct(inp, 1e4)) == pytest.approx(1e-6, rel=1e-12)
    assert float(local_infidelity_virtual(inp, 1e3)) == pytest.approx(1e-6, rel=1e-12)


def test_cz_composition():
    inp = GateFidelityInputs(1.0, 1.0, 10e6, 1e6, kappa_gamma=2.0)
    assert inp.kappa_bar("cz") == pytest.approx(1.5 * 2.0)
    assert inp.kappa_bar("swap") == pytest.approx(2 * 2.0)


def test_nonpositive_coupling_rejected():
    with pytest.raises(FidelityError):
        local_infidelity_direct(fig3_inputs(1, 1), 0.0)


@pytest.mark.parametrize("form", ["linear", "higher"])
@given(g=st.floats(1.0, 1e7), k=st.floats(0, 1e6))
def test_infidelity_in_unit_interval_for_higher_form(form, g, k):
    v = float(local_infidelity_direct(GateFidelityInputs(k, 0.0, 10e6, 1e6), g, form=form))
    assert v >= 0
    if form == "higher":
        assert v <= 1


# -- optimisation against closed forms -------------------------------------------------

def test_direct_worked_point():
    r = optimize_gate(GateFidelityInputs(5e3, 5e3, 10e6, 1e6), "direct", "swap", "linear")
    assert not r.constrained
    assert r.g_opt == pytest.approx(1.58e6, rel=5e-3)
    assert float(f"{r.infidelity:.3g}") == 7.47e-2
    assert r.infidelity == pytest.approx(r.closed_form, rel=1e-9)


def test_virtual_worked_point():
    r = optimize_gate(GateFidelityInputs(100.0, 10e3, 10e6, 1e6, lambda_sq=0.01), "virtual", "swap", "linear")
    assert not r.constrained
    assert r.g_opt == pytest.approx(68e3, rel=5e-3)
    assert float(f"{r.infidelity:.3g}") == 1.39e-2


@pytest.mark.parametrize("gate", ["swap", "cz"])
@pytest.mark.parametrize("kind", ["direct", "virtual"])
@given(kappa=st.floats(1.0, 1e5), gamma=st.floats(1.0, 1e6))
def test_optimizer_matches_closed_form_when_unconstrained(gate, kind, kappa, gamma):
    r = optimize_gate(fig3_inputs(kappa, gamma), kind, gate, "linear")
    if not r.constrained:
        assert r.infidelity == pytest.approx(r.closed_form, rel=1e-2)


@pytest.mark.parametrize("k, c, spacing, bound", [(1e4, 5.0, 10e6, 10e6), (1e2, 1.0, 1e6, 1e5), (3e3, 2.0, 1e6, 25e3)])
@pytest.mark.parametrize("form", ["linear", "higher"])
def test_optimizer_agrees_with_brute_force(k, c, spacing, bound, form):
    r = minimize_model(k, c, spacing, bound, form=form)
    _, fb = brute_optimum(k, c, spacing, bound, form=form)
    assert r.infidelity == pytest.approx(fb, rel=1e-6)


def test_closed_form_expression():
    # 1.5 [c pi k / (sqrt 2 spacing)]^(2/3) at unit prefactor
    g, v = closed_form_optimum(1e4, 5.0, 10e6)
    assert v == pytest.approx(1.5 * (5 * math.pi * 1e4 / (math.sqrt(2) * 10e6)) ** (2 / 3), rel=1e-12)
    assert g == pytest.approx((1e4 * 5 * math.pi * 1e14 / 4) ** (1 / 3), rel=1e-12)


def test_bound_below_optimum_is_constrained():
    r = optimize_gate(GateFidelityInputs(5e3, 5e3, 10e6, 1e6, g_bound_direct=1e5), "direct", "swap")
    assert r.constrained and r.g_opt == pytest.approx(1e5)
    assert r.closed_form is None


def test_no_decoherence_drives_infidelity_to_zero():
    r = optimize_gate(GateFidelityInputs(0.0, 0.0, 10e6, 1e6), "virtual", "swap")
    assert r.infidelity < 1e-9


@given(scale=st.floats(1e-3, 1e3), kappa=st.floats(1, 1e5), gamma=st.floats(1, 1e6))
def test_common_rescaling_invariance(scale, kappa, gamma):
    inp = GateFidelityInputs(kappa, gamma, 10e6, 1e6, g_bound_virtual=1e5)
    big = GateFidelityInputs(kappa * scale, gamma * scale, 10e6 * scale, 1e6 * scale, g_bound_direct=10e6 * scale,
                             g_bound_virtual=1e5 * scale)
    for kind in ("direct", "virtual"):
        assert optimize_gate(big, kind).infidelity == pytest.approx(optimize_gate(inp, kind).infidelity,
                                                                    rel=1e-7, abs=1e-12)


@pytest.mark.parametrize("k", [1e-2, 1.0, 1e2, 1e4, 1e6])
@pytest.mark.parametrize("form", ["linear", "higher"])
def test_vectorised_optimizer_matches_scalar(k, form):
    r = minimize_model(k, 1.0, 1e6, 1e5, 3.0, form)
    g, v, c = minimize_model_array(np.array([k]), 1.0, 1e6, 1e5, 3.0, form)
    assert v[0] == pytest.approx(r.infidelity, rel=1e-8, abs=1e-15)
    assert bool(c[0]) == r.constrained


# -- crowding -------------------------------------------------------------------------

def test_direct_crowding_first_term():
    assert crowding_coefficient_direct(1) == 2.0


def test_direct_crowding_partial_sum():
    assert abs(crowding_coefficient_direct(10 ** 4) - math.pi ** 2 / 3) < 2e-4


@given(a=st.integers(1, 5000), b=st.integers(1, 5000))
def test_direct_crowding_monotone(a, b):
    lo, hi = sorted((a, b))
    assert crowding_coefficient_direct(lo) <= crowding_coefficient_direct(hi) < math.pi ** 2 / 3


def test_virtual_crowding_grows_with_M():
    # frozen at delta_nu = 0.85 MHz on the two-family array
    assert two_family_crowding(2) == pytest.approx(0.1012, abs=1e-4)
    assert two_family_crowding(10) == pytest.approx(6.1693, abs=1e-4)
    assert two_family_crowding(10) > two_family_crowding(2)


def test_virtual_crowding_dimensionless():
    assert two_family_crowding(6, 20e6, 1.7e6) == pytest.approx(two_family_crowding(6, 10e6, 0.85e6), rel=1e-9)


# -- global model and quantum volume -----------------------------------------------------

def test_global_direct_M2_is_local_with_prefactor():
    inp = GateFidelityInputs(3e3, 7e3, 10e6, 1e6)
    glob = global_infidelity(inp, 2, "direct", "swap", S_D)
    ref = minimize_model(1e4, C_DIRECT["swap"], 10e6, 10e6, S_D)
    assert glob.infidelity == pytest.approx(ref.infidelity, rel=1e-12)


def test_global_M10_worse_than_M2():
    inp = fig3_inputs(100.0, 1e4, delta_nu=0.85e6)
    for kind, sv in (("direct", None), ("virtual", None)):
        a = global_infidelity(inp, 2, kind, S_v=two_family_crowding(2) if kind == "virtual" else None)
        b = global_infidelity(inp, 10, kind, S_v=two_family_crowding(10) if kind == "virtual" else None)
        assert b.infidelity > a.infidelity


def test_idle_term_vanishes_without_kappa():
    inp = GateFidelityInputs(0.0, 1e4, 10e6, 1e6)
    a = global_infidelity(inp, 2, "direct")
    b = global_infidelity(inp, 12, "direct")
    assert a.infidelity == pytest.approx(b.infidelity, rel=1e-12)


def test_volume_constant_infidelity_oracle():
    # d(M) = 100 / M: min(M, d)^2 peaks at M = 10 exactly
    assert quantum_volume(lambda M: 0.01, range(2, 40)) == (10, pytest.approx(100.0))


def test_volume_degenerate_limit():
    M, V = quantum_volume(lambda M: 1.0, range(2, 10))
    assert V == pytest.approx(1 / 4)
    assert quantum_volume({2: 1e9, 3: 1e9}, [2, 3])[1] < 1e-15


def test_volume_ties_go_to_smaller_M():
    assert quantum_volume({4: 1 / 16, 8: 1 / 32}, [8, 4])[0] == 4


@pytest.mark.parametrize("gate", ["swap", "cz"])
def test_volume_map_matches_scalar_search(gate):
    ks, gs, M, V = volume_map(shape=(6, 6), gate=gate)
    Ms = range(2, 31)
    sv = {m: two_family_crowding(m) for m in Ms}
    for r in range(6):
        for c in range(6):
            inp = fig3_inputs(ks[r], gs[c], delta_nu=0.85e6)
            m, v = quantum_volume(lambda m: global_infidelity(inp, m, "virtual", gate, S_v=sv[m]).infidelity, Ms)
            assert (m, v) == (M[r, c], pytest.approx(V[r, c], rel=1e-6))


# -- Kerr and detuning -------------------------------------------------------------------

def test_kerr_node():
    g = 30e3
    assert kerr_leading_infidelity(1e3, g, 1 / (2 * g))[0] == pytest.approx(0.0, abs=1e-35)


def test_kerr_worst_time_value():
    g = 30e3
    v, valid = kerr_leading_infidelity(1e3, g, 1 / (8 * g))
    assert valid
    assert v == pytest.approx((1 / 30) ** 2 / 64, rel=1e-12)
    assert v == pytest.approx(1.7e-5, rel=0.03)


def test_kerr_exact_from_independent_block():
    # rebuild the three-state block by hand with angular units
    chi, g, t = 600.0, 30e3, 1 / (8 * 30e3)
    s = math.sqrt(2) * g
    h1 = 2 * math.pi * np.array([[0, s, s], [s, 0, 0], [s, 0, 0]])
    h = h1 + 2 * math.pi * np.diag([-chi, -chi / 2, -chi / 2])
    amp = (linalg.expm(1j * h1 * t) @ linalg.expm(-1j * h * t))[0, 0]
    assert kerr_exact_infidelity(chi, g, t) == pytest.approx(1 - abs(amp) ** 2, rel=1e-10)


def test_kerr_residual_is_quartic():
    g, t = 30e3, 1 / (8 * 30e3)
    res = [abs(kerr_exact_infidelity(x * g, g, t) - kerr_leading_infidelity(x * g, g, t)[0]) for x in (0.01, 0.02)]
    assert res[1] / res[0] == pytest.approx(16.0, rel=0.05)


def test_detuning_infidelity():
    assert detuning_infidelity(0.0, 30e3)[0] == 0.0
    assert detuning_infidelity(1e3, 30e3)[0] == pytest.approx(1.1e-3, rel=0.02)
    assert detuning_infidelity(2e3, 30e3)[0] == pytest.approx(4 * detuning_infidelity(1e3, 30e3)[0])
    assert not detuning_infidelity(40e3, 30e3)[1]


# -- heating ---------------------------------------------------------------------------

def test_heating_zero_drive():
    assert drive_heating_rate(HeatingInputs(1e5, 1e3, 0, 0, 1e9, 1.1e9, 150e6)) == 0.0


def test_heating_single_drive_value():
    rate = drive_heating_rate(HeatingInputs(1.0, 0.0, 0.1, 0.0, 1e9, 1e9, 150e6))
    assert rate == pytest.approx((150e6 * 0.01 / 2.15e9) ** 2, rel=1e-12)
    assert float(f"{rate:.3g}") == 4.87e-7


@given(x1=st.complex_numbers(max_magnitude=0.5), x2=st.complex_numbers(max_magnitude=0.5),
       d1=st.floats(2e8, 3e9), d2=st.floats(2e8, 3e9))
def test_heating_symmetric_and_even(x1, x2, d1, d2):
    h = HeatingInputs(1e4, 1e2, x1, x2, d1, d2, 150e6)
    r = drive_heating_rate(h)
    assert drive_heating_rate(replace(h, xi_1=x2, xi_2=x1, delta_1=d2, delta_2=d1)) == pytest.approx(r, rel=1e-12)
    assert drive_heating_rate(replace(h, xi_1=-x1)) == pytest.approx(r, rel=1e-12)


def test_heating_two_photon_pole():
    with pytest.raises(FidelityError, match="two-photon resonance"):
        drive_heating_rate(HeatingInputs(1.0, 0.0, 0.1, 0.1, -75e6, 1e9, 150e6))


# -- comparison map ----------------------------------------------------------------------

def test_map_shape_and_orientation():
    m = infidelity_map(shape=(4, 3))
    assert m.direct_inf.shape == (4, 3)
    assert m.kappa[0] == pytest.approx(1.0) and m.gamma[-1] == pytest.approx(1e6)
    ref = optimize_gate(fig3_inputs(m.kappa[2], m.gamma[1]), "virtual")
    assert m.virtual_inf[2, 1] == ref.infidelity


def test_map_virtual_advantage_grows_along_gamma_at_small_kappa():
    m = infidelity_map(shape=(3, 12))
    assert np.all(np.diff(m.log_ratio[0, :8]) >= -1e-12)
    assert m.log_ratio[0, -1] > 0
