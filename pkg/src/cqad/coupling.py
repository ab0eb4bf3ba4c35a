"""Drive-engineered phonon-phonon couplings in the Stark-shifted frame.

All detunings are measured from the transmon, delta = omega - omega_q, in Hz.
Tilded quantities are referred to the Stark-shifted transmon frequency
omega_q + S, so delta~ = delta - S.

The two-mode (beamsplitter) rate is

    g1 = -2 alpha xi1~* xi2~ lamA~ lamB~* (dB~ + d1~) / (dB~ + d1~ + alpha)

and the three-mode rate, for the resonance omega_1 = omega_A + omega_C - omega_B,

    g2 = -2 alpha xi1~* lamA~ lamB~* lamC~ (dB~ + d1~) / (dB~ + d1~ + alpha).

beta is defined through g = g_bare (1 - beta) where g_bare uses untilded
quantities and drops the ratio factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize

from .device import DeviceConfig, DriveTone, PhononMode, TransmonParams

RESONANCE_RTOL = 1e-6
POLE_RTOL = 1e-9


class CouplingError(ValueError):
    pass


def _check_drive(tr: TransmonParams, d: DriveTone) -> float:
    delta = d.omega - tr.omega_q
    if abs(delta) <= RESONANCE_RTOL * tr.omega_q:
        raise CouplingError(f"drive resonant with transmon (label={d.label!r})")
    if abs(delta + tr.alpha) <= RESONANCE_RTOL * tr.omega_q:
        raise CouplingError(f"drive at the two-photon pole delta = -alpha (label={d.label!r})")
    return delta


def stark_shift(transmon: TransmonParams, drives: Sequence[DriveTone], method: str = "closed",
                tol: float = 1e-10) -> float:
    """Drive-induced transmon shift S in Hz.

    ``method="closed"`` is S = -2 alpha sum |Omega|^2 / [delta (delta + alpha)].
    ``method="fixed_point"`` solves S = -2 alpha sum |Omega / (delta - S)|^2.
    """
    if not drives:
        return 0.0
    a = transmon.alpha
    deltas = np.array([_check_drive(transmon, d) for d in drives])
    amp2 = np.array([abs(d.amplitude) ** 2 for d in drives])
    s_closed = float(-2.0 * a * np.sum(amp2 / (deltas * (deltas + a))))
    if method == "closed":
        return s_closed
    if method != "fixed_point":
        raise ValueError(f"unknown Stark method {method!r}")

    def f(s):
        return -2.0 * a * np.sum(amp2 / (deltas - s) ** 2)

    s0 = float(-2.0 * a * np.sum(amp2 / deltas ** 2))
    try:
        return float(optimize.fixed_point(f, s0, xtol=tol, maxiter=500))
    except RuntimeError as exc:
        raise CouplingError(f"Stark fixed point did not converge: {exc}") from None


@dataclass(frozen=True)
class DressedFrame:
    transmon: TransmonParams
    stark_shift: float
    drive_delta: dict
    drive_tdelta: dict
    drive_xi: dict
    drive_txi: dict
    mode_delta: dict
    mode_tdelta: dict
    mode_lambda: dict
    mode_tlambda: dict
    modes: dict
    drives: dict

    def mode_lambdas(self, tilde: bool = True) -> dict:
        return dict(self.mode_tlambda if tilde else self.mode_lambda)


def dressed_frame(device: DeviceConfig, drives: Sequence[DriveTone], stark_method: str = "closed",
                  stark: float | None = None) -> DressedFrame:
    """Populate bare and Stark-shifted detunings and ratios.

    Drives are keyed by label (falling back to their position), modes by index.
    ``stark`` overrides the computed shift (used by the planner's fixed point).
    """
    tr = device.transmon
    s = stark_shift(tr, drives, stark_method) if stark is None else float(stark)
    keyed = {}
    for i, d in enumerate(drives):
        key = d.label if d.label else str(i)
        if key in keyed:
            raise CouplingError(f"duplicate drive label {key!r}")
        keyed[key] = d
    dd, dtd, xi, txi = {}, {}, {}, {}
    for key, d in keyed.items():
        delta = _check_drive(tr, d)
        dd[key] = delta
        dtd[key] = delta - s
        xi[key] = complex(d.amplitude) / delta
        txi[key] = complex(d.amplitude) / (delta - s)
    md, mtd, lam, tlam, modes = {}, {}, {}, {}, {}
    for m in device.spectrum.modes:
        delta = m.omega - tr.omega_q
        tdelta = delta - s
        if delta == 0 or tdelta == 0:
            raise CouplingError(f"mode {m.index} resonant with dressed transmon")
        md[m.index] = delta
        mtd[m.index] = tdelta
        lam[m.index] = complex(m.g) / delta
        tlam[m.index] = complex(m.g) / tdelta
        modes[m.index] = m
    return DressedFrame(tr, s, dd, dtd, xi, txi, md, mtd, lam, tlam, modes, keyed)


@dataclass(frozen=True)
class EngineeredCoupling:
    kind: str
    modes: tuple
    rate: complex
    beta: float
    drives: tuple
    stark_shift: float = 0.0

    @property
    def magnitude(self) -> float:
        return abs(self.rate)

    def leading_order_beta(self, frame: DressedFrame) -> float:
        b = self.modes[1]
        d1 = frame.drive_delta[self.drives[0]]
        a = frame.transmon.alpha
        return a / (frame.mode_delta[b] + d1 + a)


def _ratio(frame: DressedFrame, mode_b, drive1) -> float:
    a = frame.transmon.alpha
    num = frame.mode_tdelta[mode_b] + frame.drive_tdelta[drive1]
    den = num + a
    if abs(den) <= POLE_RTOL * a:
        raise CouplingError("correction pole; adjust drive detuning")
    return num / den


def _key(frame: DressedFrame, d) -> str:
    if isinstance(d, DriveTone):
        for k, v in frame.drives.items():
            if v == d:
                return k
        raise KeyError(d)
    return str(d)


def coupling_two_mode(frame: DressedFrame, mode_a: int, mode_b: int, drive1, drive2) -> EngineeredCoupling:
    """Beamsplitter rate between modes A and B engineered by drives 1 and 2."""
    k1, k2 = _key(frame, drive1), _key(frame, drive2)
    r = _ratio(frame, mode_b, k1)
    a = frame.transmon.alpha
    rate = (-2.0 * a * np.conj(frame.drive_txi[k1]) * frame.drive_txi[k2]
            * frame.mode_tlambda[mode_a] * np.conj(frame.mode_tlambda[mode_b]) * r)
    scale = (frame.drive_delta[k1] * frame.drive_delta[k2] * frame.mode_delta[mode_a] * frame.mode_delta[mode_b]) / (
        frame.drive_tdelta[k1] * frame.drive_tdelta[k2] * frame.mode_tdelta[mode_a] * frame.mode_tdelta[mode_b])
    beta = 1.0 - scale * r
    return EngineeredCoupling("two_mode", (mode_a, mode_b), complex(rate), float(beta), (k1, k2),
                              frame.stark_shift)


def coupling_three_mode(frame: DressedFrame, mode_a: int, mode_b: int, mode_c: int, drive1) -> EngineeredCoupling:
    """Three-mode rate for omega_1 = omega_A + omega_C - omega_B (B is the lone mode)."""
    k1 = _key(frame, drive1)
    r = _ratio(frame, mode_b, k1)
    a = frame.transmon.alpha
    rate = (-2.0 * a * np.conj(frame.drive_txi[k1]) * frame.mode_tlambda[mode_a]
            * np.conj(frame.mode_tlambda[mode_b]) * frame.mode_tlambda[mode_c] * r)
    scale = (frame.drive_delta[k1] * frame.mode_delta[mode_a] * frame.mode_delta[mode_b] * frame.mode_delta[mode_c]) / (
        frame.drive_tdelta[k1] * frame.mode_tdelta[mode_a] * frame.mode_tdelta[mode_b] * frame.mode_tdelta[mode_c])
    beta = 1.0 - scale * r
    return EngineeredCoupling("three_mode", (mode_a, mode_b, mode_c), complex(rate), float(beta), (k1,),
                              frame.stark_shift)


@dataclass(frozen=True)
class DressedDecay:
    mode: int
    kappa_gamma: float
    beta_gamma: float


def dressed_decay(frame: DressedFrame, mode: int, transmon: TransmonParams | None = None) -> DressedDecay:
    """Mode decay including the inverse-Purcell share of transmon decoherence."""
    tr = transmon or frame.transmon
    m: PhononMode = frame.modes[mode]
    d, td = frame.mode_delta[mode], frame.mode_tdelta[mode]
    if td == 0:
        raise CouplingError("mode resonant with dressed transmon")
    beta_g = (d / td) ** 2 - 1.0
    kg = m.kappa + tr.gamma * abs(m.g / d) ** 2 * (1.0 + beta_g)
    return DressedDecay(mode, float(kg), float(beta_g))


def mode_stark_shifts(frame: DressedFrame) -> dict:
    """Per-mode shifts S_j = -2 alpha sum_k |xi_k|^2 |lambda_j|^2 (Hz)."""
    a = frame.transmon.alpha
    drive_sum = sum(abs(x) ** 2 for x in frame.drive_xi.values())
    return {j: -2.0 * a * drive_sum * abs(lam) ** 2 for j, lam in frame.mode_lambda.items()}


def critical_drive(rate_of_xi, xi_max: float = 1.0, n: int = 400) -> tuple[float, float]:
    """Locate xi_crit, the drive strength maximising |g_v(xi)|.

    ``rate_of_xi`` maps a dimensionless drive strength to a coupling rate.
    A coarse scan brackets the peak and a bounded scalar search refines it.
    """
    grid = np.linspace(xi_max / n, xi_max, n)
    vals = np.array([abs(rate_of_xi(x)) for x in grid])
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n - 1)]
    res = optimize.minimize_scalar(lambda x: -abs(rate_of_xi(x)), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-9})
    return float(res.x), float(-res.fun)
