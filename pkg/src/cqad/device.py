"""Physical parameters of a multimode cQAD device.

Everything here is stored in ordinary-frequency units (Hz, i.e. omega/2pi).
Angular conversion only happens inside time-evolution code.

    TransmonParams, PhononMode, ModeSpectrum, CouplingGraph, DriveTone,
    DeviceConfig     -- frozen dataclasses
    validate_config  -- collect invariant violations and dispersive warnings
    spacing_profile  -- successive mode spacings nu_{j,j+1}
    load_config / dump_config -- JSON round trip
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DISPERSIVE_THRESHOLD = 1.0 / 3.0

SCHEME_TAGS = ("uniform", "point_defect", "two_family", "composite", "custom")


class ConfigError(ValueError):
    """Raised when a configuration cannot be built or parsed."""


@dataclass(frozen=True)
class TransmonParams:
    omega_q: float
    alpha: float
    gamma: float = 0.0
    gamma_phi_hf: float = 0.0


@dataclass(frozen=True)
class PhononMode:
    index: int
    omega: float
    g: complex
    kappa: float = 0.0


@dataclass(frozen=True)
class ModeSpectrum:
    modes: tuple[PhononMode, ...]
    scheme_tag: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([m.omega for m in self.modes], dtype=float)

    @property
    def indices(self) -> list[int]:
        return [m.index for m in self.modes]

    def __len__(self) -> int:
        return len(self.modes)

    def by_index(self, index: int) -> PhononMode:
        for m in self.modes:
            if m.index == index:
                return m
        raise KeyError(f"no mode with index {index}")

    @classmethod
    def from_frequencies(cls, freqs: Iterable[float], g: complex = 0.0, kappa: float = 0.0,
                         scheme_tag: str = "custom") -> "ModeSpectrum":
        modes = tuple(PhononMode(i, float(w), g, kappa) for i, w in enumerate(freqs))
        return cls(modes, scheme_tag)


@dataclass(frozen=True)
class CouplingGraph:
    storage_set: frozenset[int] = field(default_factory=frozenset)
    pair_set: frozenset[frozenset[int]] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "storage_set", frozenset(self.storage_set))
        object.__setattr__(self, "pair_set", frozenset(frozenset(p) for p in self.pair_set))

    def sorted_pairs(self) -> list[tuple[int, int]]:
        return sorted(tuple(sorted(p)) for p in self.pair_set)


@dataclass(frozen=True)
class DriveTone:
    omega: float
    amplitude: complex
    label: str = ""


@dataclass(frozen=True)
class DeviceConfig:
    transmon: TransmonParams
    spectrum: ModeSpectrum
    graph: CouplingGraph = field(default_factory=CouplingGraph)

    def mode(self, index: int) -> PhononMode:
        return self.spectrum.by_index(index)


@dataclass(frozen=True)
class ValidationReport:
    errors: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_config(config: DeviceConfig) -> ValidationReport:
    """Check every invariant of the configuration without raising."""
    errors: list[str] = []
    warnings: list[str] = []
    tr = config.transmon
    if not tr.alpha > 0:
        errors.append(f"transmon: anharmonicity must be positive (alpha={tr.alpha})")
    if tr.gamma < 0 or tr.gamma_phi_hf < 0:
        errors.append("transmon: negative decoherence rate")
    if not tr.omega_q > 0:
        errors.append("transmon: transition frequency must be positive")

    modes = config.spectrum.modes
    seen: set[int] = set()
    for m in modes:
        if m.index in seen:
            errors.append(f"mode {m.index}: duplicate index")
        seen.add(m.index)
        if not m.omega > 0:
            errors.append(f"mode {m.index}: frequency must be positive")
        if m.kappa < 0:
            errors.append(f"mode {m.index}: negative decoherence rate")
        detuning = m.omega - tr.omega_q
        if detuning == 0:
            errors.append(f"mode {m.index}: resonant with the transmon")
        else:
            lam = abs(m.g) / abs(detuning)
            if lam > DISPERSIVE_THRESHOLD:
                warnings.append(
                    f"mode {m.index}: |lambda|={lam:.3g} exceeds dispersive threshold "
                    f"{DISPERSIVE_THRESHOLD:.3g}")
    freqs = [m.omega for m in modes]
    if any(b <= a for a, b in zip(freqs, freqs[1:])):
        errors.append("spectrum: mode frequencies must be strictly increasing")
    if config.spectrum.scheme_tag not in SCHEME_TAGS:
        errors.append(f"spectrum: unknown scheme tag {config.spectrum.scheme_tag!r}")

    for p in config.graph.sorted_pairs():
        if len(p) != 2:
            errors.append(f"graph: pair {p} must contain two distinct modes")
        elif not set(p) <= config.graph.storage_set:
            errors.append(f"graph: pair {p} not drawn from the storage set")
    missing = config.graph.storage_set - seen
    if missing:
        errors.append(f"graph: storage modes {sorted(missing)} absent from spectrum")
    return ValidationReport(tuple(errors), tuple(warnings))


def spacing_profile(spectrum: ModeSpectrum | Sequence[float]) -> np.ndarray:
    """Successive spacings omega_{j+1} - omega_j in Hz."""
    freqs = spectrum.frequencies if isinstance(spectrum, ModeSpectrum) else np.asarray(spectrum, float)
    if freqs.size < 2:
        raise ConfigError("insufficient modes: need at least two for a spacing profile")
    return np.diff(freqs)


# -- JSON ------------------------------------------------------------------

_TRANSMON_KEYS = {"omega_q_hz", "alpha_hz", "gamma_hz", "gamma_phi_hf_hz"}
_MODE_KEYS = {"index", "omega_hz", "g_hz", "kappa_hz"}


def _check_keys(obj: dict, allowed: set, where: str, required: set | None = None):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = set(obj) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    missing = (required if required is not None else allowed) - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def _parse_complex(v, where: str) -> complex:
    # complex couplings may be written as [re, im]
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ConfigError(f"{where}: complex value must be [re, im]")
        return complex(float(v[0]), float(v[1]))
    return complex(float(v))


def config_from_dict(data: dict) -> DeviceConfig:
    _check_keys(data, {"transmon", "modes", "graph", "scheme_tag"}, "config",
                required={"transmon", "modes"})
    t = data["transmon"]
    _check_keys(t, _TRANSMON_KEYS, "transmon", required={"omega_q_hz", "alpha_hz"})
    transmon = TransmonParams(float(t["omega_q_hz"]), float(t["alpha_hz"]),
                              float(t.get("gamma_hz", 0.0)), float(t.get("gamma_phi_hf_hz", 0.0)))
    modes = []
    for i, m in enumerate(data["modes"]):
        _check_keys(m, _MODE_KEYS, f"modes[{i}]", required={"index", "omega_hz", "g_hz"})
        g = _parse_complex(m["g_hz"], f"modes[{i}].g_hz")
        if g.imag == 0:
            g = g.real
        modes.append(PhononMode(int(m["index"]), float(m["omega_hz"]), g, float(m.get("kappa_hz", 0.0))))
    graph_data = data.get("graph", {"storage": [], "pairs": []})
    _check_keys(graph_data, {"storage", "pairs"}, "graph")
    graph = CouplingGraph(frozenset(int(s) for s in graph_data["storage"]),
                          frozenset(frozenset(int(x) for x in p) for p in graph_data["pairs"]))
    return DeviceConfig(transmon, ModeSpectrum(tuple(modes), data.get("scheme_tag", "custom")), graph)


def _complex_out(g: complex):
    g = complex(g)
    return g.real if g.imag == 0 else [g.real, g.imag]


def config_to_dict(config: DeviceConfig) -> dict:
    t = config.transmon
    out = {
        "transmon": {"omega_q_hz": t.omega_q, "alpha_hz": t.alpha,
                     "gamma_hz": t.gamma, "gamma_phi_hf_hz": t.gamma_phi_hf},
        "modes": [{"index": m.index, "omega_hz": m.omega, "g_hz": _complex_out(m.g),
                   "kappa_hz": m.kappa} for m in config.spectrum.modes],
        "graph": {"storage": sorted(config.graph.storage_set),
                  "pairs": [list(p) for p in config.graph.sorted_pairs()]},
    }
    if config.spectrum.scheme_tag != "custom":
        out["scheme_tag"] = config.spectrum.scheme_tag
    return out


def load_config(path: str | Path) -> DeviceConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data)


def dump_config(config: DeviceConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(config), fh, indent=2)
        fh.write("\n")
