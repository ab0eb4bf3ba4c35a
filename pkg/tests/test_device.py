import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cqad.device import (ConfigError, CouplingGraph, DeviceConfig, ModeSpectrum, PhononMode, TransmonParams,
                         config_from_dict, config_to_dict, dump_config, load_config, spacing_profile,
                         validate_config)
from cqad.spectrum import TwoFamilyScheme, UniformScheme, generate_spectrum

MHZ = 1e6


def fig3_config(g=10 * MHZ, kappa=0.0):
    tr = TransmonParams(5e9, 150 * MHZ)
    modes = (PhononMode(0, 5e9 + 100 * MHZ, g, kappa), PhononMode(1, 5e9 + 110 * MHZ, g, kappa))
    return DeviceConfig(tr, ModeSpectrum(modes), CouplingGraph(frozenset({0, 1}), frozenset({frozenset({0, 1})})))


def test_fig3_parameters_valid_without_warnings():
    rep = validate_config(fig3_config())
    assert rep.ok and rep.warnings == ()


def test_negative_kappa_is_an_error():
    rep = validate_config(fig3_config(kappa=-1.0))
    assert not rep.ok
    assert any("negative decoherence rate" in e for e in rep.errors)


def test_strong_coupling_warns_with_lambda():
    tr = TransmonParams(5e9, 150 * MHZ)
    cfg = DeviceConfig(tr, ModeSpectrum((PhononMode(0, 5e9 + 100 * MHZ, 50 * MHZ),)))
    rep = validate_config(cfg)
    assert rep.ok
    assert len(rep.warnings) == 1 and "0.5" in rep.warnings[0]


@pytest.mark.parametrize("mutate, needle", [
    (lambda c: DeviceConfig(TransmonParams(5e9, -1.0), c.spectrum, c.graph), "anharmonicity"),
    (lambda c: DeviceConfig(c.transmon, c.spectrum, CouplingGraph(frozenset({0}), frozenset({frozenset({0, 1})}))),
     "not drawn from the storage set"),
    (lambda c: DeviceConfig(c.transmon, ModeSpectrum(tuple(reversed(c.spectrum.modes))), c.graph),
     "strictly increasing"),
])
def test_invariant_violations_reported(mutate, needle):
    rep = validate_config(mutate(fig3_config()))
    assert any(needle in e for e in rep.errors)


def test_validate_is_idempotent():
    cfg = fig3_config(kappa=-2.0)
    assert validate_config(cfg) == validate_config(cfg)


def test_uniform_spacing_profile():
    spec = generate_spectrum(UniformScheme(10 * MHZ, 5, 5e9))
    np.testing.assert_allclose(spacing_profile(spec), [10 * MHZ] * 4, rtol=1e-12)


def test_two_family_spacings_alternate():
    spec = generate_spectrum(TwoFamilyScheme(10 * MHZ, 11 * MHZ, counts=(4, 4), base=5e9))
    sp = spacing_profile(spec)
    # independent construction: merge the two families by hand
    f1 = 5e9 + 10 * MHZ * np.arange(4)
    f2 = 5e9 + 1.2 * MHZ + 11 * MHZ * np.arange(4)
    np.testing.assert_allclose(sp, np.diff(np.sort(np.concatenate([f1, f2]))), rtol=0, atol=1e-3)
    # small and large gaps alternate
    assert np.all(np.sign(np.diff(sp)) == np.array([1, -1] * 3))


def test_single_mode_spacing_error():
    with pytest.raises(ConfigError, match="insufficient modes"):
        spacing_profile([5e9])


@given(nu=st.floats(1e3, 1e8), count=st.integers(2, 50), base=st.floats(1e9, 1e10))
def test_uniform_profile_constant(nu, count, base):
    sp = spacing_profile(generate_spectrum(UniformScheme(nu, count, base)))
    np.testing.assert_allclose(sp, nu, rtol=1e-9)


def test_json_round_trip(tmp_path):
    cfg = fig3_config()
    p = tmp_path / "dev.json"
    dump_config(cfg, p)
    assert load_config(p) == cfg
    assert config_from_dict(json.loads(p.read_text())) == cfg


def test_complex_coupling_round_trip():
    d = config_to_dict(fig3_config())
    d["modes"][0]["g_hz"] = [1e7, 2e6]
    assert config_from_dict(d).spectrum.modes[0].g == complex(1e7, 2e6)


@pytest.mark.parametrize("where", ["top", "transmon", "mode", "graph"])
def test_unknown_keys_rejected(where):
    d = config_to_dict(fig3_config())
    target = {"top": d, "transmon": d["transmon"], "mode": d["modes"][0], "graph": d["graph"]}[where]
    target["bogus"] = 1
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict(d)


def test_missing_required_key():
    d = config_to_dict(fig3_config())
    del d["transmon"]["alpha_hz"]
    with pytest.raises(ConfigError):
        config_from_dict(d)
