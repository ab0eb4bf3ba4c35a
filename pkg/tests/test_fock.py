import numpy as np
import pytest
from hypothesis import given, strategies as st

from cqad.fock import (
    FockError,
    GateSpec,
    NoiseChannel,
    SparseFockState,
    apply_beamsplitter,
    apply_gate,
    apply_noise_step,
    apply_three_mode,
    controlled_swap,
    cz_gate,
    dense_oracle,
    dual_rail_rotation,
    phase_shift,
    random_state,
    reduced_fidelity,
    state_fidelity,
    swap_spec,
)

S2 = 1 / np.sqrt(2)


def ket(*occ, d=3):
    return SparseFockState.from_terms({tuple(occ): 1.0}, len(occ), d)


def sup(terms, n, d=3):
    return SparseFockState.from_terms(terms, n, d)


def assert_state(st, expected: dict, atol=1e-12):
    got = st.terms()
    for cfg in set(got) | set(expected):
        assert abs(got.get(cfg, 0) - expected.get(cfg, 0)) < atol, cfg


# -- beamsplitter ------------------------------------------------------------

def test_beamsplitter_zero_angle_is_identity(rng):
    s = random_state(3, 3, rng, max_total=2)
    assert state_fidelity(apply_beamsplitter(s, 0, 1, 0.0), s) == pytest.approx(1.0)


def test_fifty_fifty_splitter():
    out = apply_beamsplitter(ket(1, 0), 0, 1, np.pi / 4, np.pi / 2)
    assert_state(out, {(1, 0): S2, (0, 1): S2})


def test_full_swap_of_two_phonons_flips_sign():
    out = apply_beamsplitter(ket(1, 1), 0, 1, np.pi / 2, np.pi / 2)
    assert_state(out, {(1, 1): -1.0})


def test_canonical_swap_single_excitations():
    assert_state(apply_gate(ket(1, 0), swap_spec(0, 1)), {(0, 1): 1.0})
    # unit determinant: one of the two single-excitation maps carries a sign
    assert_state(apply_gate(ket(0, 1), swap_spec(0, 1)), {(1, 0): -1.0})


def test_beamsplitter_overflow_raises():
    with pytest.raises(FockError, match="truncation exceeded"):
        apply_beamsplitter(ket(1, 1, d=2), 0, 1, np.pi / 4)


def test_beamsplitter_same_mode_rejected():
    with pytest.raises(FockError):
        apply_beamsplitter(ket(1, 0), 1, 1, 0.3)


# -- three-mode and CZ ---------------------------------------------------------

def test_three_mode_full_cycle():
    assert_state(apply_three_mode(ket(1, 1, 0), 0, 1, 2, np.pi), {(1, 1, 0): -1.0})


@pytest.mark.parametrize("phi", [0.0, 0.7, np.pi / 2, -2.0])
def test_three_mode_half_cycle(phi):
    out = apply_three_mode(ket(1, 1, 0), 0, 1, 2, np.pi / 2, phi)
    assert_state(out, {(0, 0, 1): -1j * np.exp(1j * phi)})


@pytest.mark.parametrize("cfg", [(0, 0, 0), (0, 1, 0), (0, 2, 0)])
def test_three_mode_dark_states(cfg):
    assert_state(apply_three_mode(ket(*cfg), 0, 1, 2, 1.234), {cfg: 1.0})


@pytest.mark.parametrize("cfg, sign", [((0, 0, 0), 1), ((0, 1, 0), 1), ((1, 0, 0), 1), ((1, 1, 0), -1)])
def test_cz_truth_table(cfg, sign):
    assert_state(cz_gate(ket(*cfg), 0, 1, 2), {cfg: sign})


def test_cz_on_bell_state():
    out = cz_gate(sup({(0, 0, 0): 1, (1, 1, 0): 1}, 3), 0, 1, 2)
    assert_state(out, {(0, 0, 0): S2, (1, 1, 0): -S2})


def test_cz_needs_empty_ancilla():
    with pytest.raises(FockError, match="ancilla not in vacuum"):
        cz_gate(ket(1, 1, 1), 0, 1, 2)


# -- controlled swap -----------------------------------------------------------

@pytest.mark.parametrize("ab", [(0, 0), (1, 0), (0, 1)])
def test_cswap_control_off_is_identity(ab):
    assert_state(controlled_swap(ket(0, *ab, 0), 0, 1, 2, 3), {(0, *ab, 0): 1.0})


@pytest.mark.parametrize("ab", [(0, 0), (1, 0), (0, 1)])
def test_cswap_control_on_swaps(ab):
    assert_state(controlled_swap(ket(1, *ab, 0), 0, 1, 2, 3), {(1, ab[1], ab[0], 0): 1.0})


def test_router_truth_table():
    out = controlled_swap(sup({(0, 1, 0, 0): 1, (1, 1, 0, 0): 1}, 4), 0, 1, 2, 3)
    assert_state(out, {(0, 1, 0, 0): S2, (1, 0, 1, 0): S2})


def test_cswap_matches_fredkin_on_valid_subspace():
    dims = (2, 2, 2, 2)
    u = dense_oracle(4, 2, [GateSpec("cswap", (0, 1, 2, 3))])
    for c in (0, 1):
        for a, b in ((0, 0), (1, 0), (0, 1)):
            i = np.ravel_multi_index((c, a, b, 0), dims)
            j = np.ravel_multi_index((c, b, a, 0) if c else (c, a, b, 0), dims)
            assert abs(u[j, i] - 1.0) < 1e-10


@pytest.mark.parametrize("state, msg", [
    (ket(1, 1, 1, 0), "invalid for"),
    (ket(1, 0, 2, 0), "invalid for"),
    (ket(1, 1, 0, 1), "ancilla not in vacuum"),
])
def test_cswap_guards(state, msg):
    with pytest.raises(FockError, match=msg):
        controlled_swap(state, 0, 1, 2, 3)


# -- phase and dual-rail ---------------------------------------------------------

def test_phase_shift():
    assert_state(phase_shift(ket(1), 0, np.pi), {(1,): -1.0})
    assert_state(phase_shift(ket(0), 0, np.pi), {(0,): 1.0})
    assert_state(phase_shift(ket(2), 0, 0.0), {(2,): 1.0})


def test_dual_rail_rotations():
    assert_state(dual_rail_rotation(ket(1, 0), 0, 1, "X", np.pi), {(0, 1): -1j})
    assert_state(dual_rail_rotation(ket(1, 0), 0, 1, "Y", np.pi / 2), {(1, 0): S2, (0, 1): S2})
    assert_state(dual_rail_rotation(ket(1, 0), 0, 1, "X", 2 * np.pi), {(1, 0): -1.0})


def test_dual_rail_subspace_check():
    with pytest.raises(FockError):
        dual_rail_rotation(ket(1, 1), 0, 1, "X", 0.1)
    with pytest.raises(FockError):
        GateSpec("dual_rail_rotation", (0, 1), 0.1, axis="Z")


# -- properties over random states -------------------------------------------------

def _gate_pool():
    return [
        GateSpec("beamsplitter", (0, 1), 0.37, 1.1),
        GateSpec("beamsplitter", (3, 1), 1.9, -0.4),
        GateSpec("three_mode", (0, 2, 3), 0.81, 0.3),
        GateSpec("three_mode", (1, 3, 0), 2.4, -1.2),
        GateSpec("cz", (0, 1, 2)),
        GateSpec("cswap", (0, 1, 2, 3)),
        GateSpec("phase", (2,), 0.9),
    ]


@pytest.mark.parametrize("gate", _gate_pool(), ids=lambda g: f"{g.kind}{g.targets}")
def test_sparse_matches_dense(gate):
    rng = np.random.default_rng(11)
    u = dense_oracle(4, 3, [gate])
    worst = 0.0
    for _ in range(100):
        s = random_state(4, 3, rng, n_terms=6)
        out = apply_gate(s, gate, truncation="project", check=False)
        worst = max(worst, np.max(np.abs(out.to_dense() - u @ s.to_dense())))
    assert worst <= 1e-10


def test_dual_rail_sparse_matches_dense():
    rng = np.random.default_rng(5)
    g = GateSpec("dual_rail_rotation", (1, 2), 0.77, axis="Y")
    u = dense_oracle(4, 3, [g])
    for _ in range(100):
        s = random_state(4, 3, rng, n_terms=4)
        s.occ[:, 1] = s.occ[:, 1] % 2
        s.occ[:, 2] = 1 - s.occ[:, 1]
        s._merge()
        s.normalize()
        out = apply_gate(s, g)
        assert np.max(np.abs(out.to_dense() - u @ s.to_dense())) <= 1e-10


def test_unitarity_on_random_states():
    rng = np.random.default_rng(3)
    gates = _gate_pool()
    for _ in range(1000):
        s = random_state(4, 3, rng, n_terms=5)
        g = gates[rng.integers(len(gates))]
        assert apply_gate(s, g, truncation="project", check=False).norm() == pytest.approx(1.0, abs=1e-9)


@given(seed=st.integers(0, 2 ** 32 - 1), theta=st.floats(-7, 7), phi=st.floats(-7, 7))
def test_three_mode_conserves_weighted_number(seed, theta, phi):
    rng = np.random.default_rng(seed)
    s = random_state(3, 6, rng, n_terms=6, max_total=5)
    out = apply_three_mode(s, 0, 1, 2, theta, phi, truncation="project")
    w = np.array([1, 1, 2])
    before = {int(np.dot(r, w)) for r in s.occ}
    assert {int(np.dot(r, w)) for r in out.occ} <= before


@given(seed=st.integers(0, 2 ** 32 - 1), theta=st.floats(-7, 7), phi=st.floats(-7, 7))
def test_beamsplitter_conserves_pair_number(seed, theta, phi):
    rng = np.random.default_rng(seed)
    s = random_state(3, 4, rng, n_terms=6, max_total=3)
    out = apply_beamsplitter(s, 0, 2, theta, phi)
    for n in range(7):
        p_in = np.sum(np.abs(s.amps[s.occ[:, 0].astype(int) + s.occ[:, 2] == n]) ** 2)
        p_out = np.sum(np.abs(out.amps[out.occ[:, 0].astype(int) + out.occ[:, 2] == n]) ** 2)
        assert p_out == pytest.approx(p_in, abs=1e-9)


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_gate_then_inverse_is_identity(seed):
    rng = np.random.default_rng(seed)
    s = random_state(4, 3, rng, n_terms=5, max_total=2)
    for g in _gate_pool()[:4]:
        back = apply_gate(apply_gate(s, g), g.inverse())
        assert state_fidelity(back, s) == pytest.approx(1.0, abs=1e-10)


# -- fidelity, oracle, JSON ------------------------------------------------------------

def test_state_fidelity_examples():
    plus = sup({(0,): 1, (1,): 1}, 1)
    assert state_fidelity(plus, plus) == pytest.approx(1.0)
    assert state_fidelity(ket(0), ket(1)) == 0.0
    assert state_fidelity(plus, ket(0)) == pytest.approx(0.5)
    with pytest.raises(FockError, match="register mismatch"):
        state_fidelity(ket(0), ket(0, 0))


def test_reduced_fidelity_ignores_traced_modes():
    ref = sup({(1, 0): 1, (0, 0): 1}, 2)
    noisy = sup({(1, 1): 1, (0, 1): 1}, 2)
    assert reduced_fidelity(ref, noisy, [0]) == pytest.approx(1.0)
    assert state_fidelity(ref, noisy) == 0.0


def test_dense_oracle_identity_and_overflow():
    np.testing.assert_array_equal(dense_oracle(3, 2, []), np.eye(8))
    with pytest.raises(FockError, match="dimension overflow"):
        dense_oracle(7, 4, [])


def test_json_round_trip(rng):
    s = random_state(5, 3, rng, n_terms=7)
    back = SparseFockState.from_json(s.to_json())
    assert state_fidelity(back, s) == pytest.approx(1.0)
    assert back.n_terms == s.n_terms
    np.testing.assert_array_equal(back.truncation, s.truncation)


def test_gatespec_validation():
    with pytest.raises(FockError):
        GateSpec("beamsplitter", (0, 0), 1.0)
    with pytest.raises(FockError):
        GateSpec("cz", (0, 1), 1.0)
    with pytest.raises(FockError):
        GateSpec("teleport", (0, 1), 1.0)
    with pytest.raises(FockError):
        GateSpec("phase", (0,), float("nan"))
    g = GateSpec("beamsplitter", (0, 1), 0.3, 0.2)
    assert GateSpec.from_json(g.to_json()) == g


def test_state_invariant_rejects_overfull():
    with pytest.raises(FockError, match="truncation exceeded"):
        SparseFockState.from_terms({(3, 0): 1}, 2, 3)


# -- noise ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["loss", "dephasing", "heating"])
def test_zero_noise_is_identity(kind, rng):
    s = random_state(3, 3, rng, max_total=2)
    out = apply_noise_step(s, [NoiseChannel(kind, 0.0)], range(3), rng)
    assert state_fidelity(out, s) == pytest.approx(1.0)


def test_certain_loss_empties_mode(rng):
    out = apply_noise_step(ket(1), [NoiseChannel("loss", 1.0)], [0], rng)
    assert_state(out, {(0,): 1.0})


def test_loss_frequency_is_binomial():
    rng = np.random.default_rng(2024)
    trials, eps = 100_000, 0.1
    ch = [NoiseChannel("loss", eps)]
    lost = sum(apply_noise_step(ket(1), ch, [0], rng).occ[0, 0] == 0 for _ in range(trials))
    sigma = np.sqrt(trials * eps * (1 - eps))
    assert abs(lost - trials * eps) < 3 * sigma


def test_dephasing_kick_and_heating_cap(rng):
    s = sup({(0,): 1, (1,): 1}, 1, d=2)
    out = apply_noise_step(s, [NoiseChannel("dephasing", 1.0)], [0], rng)
    assert_state(out, {(0,): S2, (1,): -S2})
    capped = apply_noise_step(ket(1, d=2), [NoiseChannel("heating", 1.0)], [0], rng)
    assert capped.capped_events == 1
    assert_state(capped, {(1,): 1.0})
    raised = apply_noise_step(ket(1, d=3), [NoiseChannel("heating", 1.0)], [0], rng)
    assert_state(raised, {(2,): 1.0})


@pytest.mark.parametrize("eps", [-0.1, 1.5])
def test_noise_probability_range(eps):
    with pytest.raises(FockError):
        NoiseChannel("loss", eps)
