"""Mode spectra, the selectivity metric and drive planning.

Resonance conditions are compared in absolute frequency (Hz).  A two-mode
condition is the spacing nu_ij = |omega_i - omega_j|; a three-mode condition
for a single tone is omega_i + omega_j - omega_k, where k is the mode whose
phonon is created and destroyed alone (the "lone" mode).  Throughout the
package the lone mode of a three-mode coupling is the middle entry B of
(A, B, C), so the tone sits at omega_A + omega_C - omega_B.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .coupling import (CouplingError, DressedFrame, coupling_three_mode, coupling_two_mode,
                       dressed_frame, mode_stark_shifts)
from .device import (ConfigError, CouplingGraph, DeviceConfig, DriveTone, ModeSpectrum, PhononMode)

DEGENERACY_HZ = 1.0


class PlanError(RuntimeError):
    pass


# -- spectrum generation -------------------------------------------------------

@dataclass(frozen=True)
class UniformScheme:
    nu: float
    count: int
    base: float
    g: complex = 0.0
    kappa: float = 0.0


@dataclass(frozen=True)
class PointDefectScheme:
    """Uniform (or given) spectrum hybridized with one external mode.

    Modes within ``bandwidth`` of the external mode couple to it with strength
    ``coupling``; the rest are left alone.
    """
    base: UniformScheme | ModeSpectrum
    omega_ext: float
    coupling: float | Sequence[float]
    bandwidth: float = np.inf


@dataclass(frozen=True)
class TwoFamilyScheme:
    """Two interleaved uniform families.

    Family k holds modes at base + offsets[k] + j nu_k for j = starts[k] ...
    starts[k] + counts[k] - 1.  Negative starts put modes below ``base``.
    """
    nu1: float
    nu2: float
    counts: tuple = (5, 5)
    offsets: tuple = (0.0, None)
    base: float = 0.0
    starts: tuple = (0, 0)
    g: complex = 0.0
    kappa: float = 0.0

    def resolved_offsets(self) -> tuple[float, float]:
        o1, o2 = self.offsets
        # default second-family offset 1.2 |nu2 - nu1|: the cross-family
        # spacings then stay |nu1 - nu2| apart over a window of about nu/dnu
        # modes, and an integer multiple (which would stack two modes) is avoided
        return float(o1 or 0.0), float(1.2 * abs(self.nu2 - self.nu1) if o2 is None else o2)


@dataclass(frozen=True)
class CompositeScheme:
    """FSR modulated sinusoidally: spacing_j = nu (1 + depth sin(2 pi j / period))."""
    nu: float
    count: int
    depth: float
    period: float
    base: float = 0.0
    g: complex = 0.0
    kappa: float = 0.0


SpectrumScheme = UniformScheme | PointDefectScheme | TwoFamilyScheme | CompositeScheme


def _positive(name, value):
    if not value > 0:
        raise ConfigError(f"{name} must be positive (got {value})")


def _finish(freqs: np.ndarray, g, kappa, tag: str) -> ModeSpectrum:
    freqs = np.sort(np.asarray(freqs, dtype=float))
    if freqs.size > 1 and np.min(np.diff(freqs)) < DEGENERACY_HZ:
        raise ConfigError("degenerate modes: two frequencies closer than 1 Hz")
    return ModeSpectrum.from_frequencies(freqs, g, kappa, tag)


def _uniform_freqs(s: UniformScheme) -> np.ndarray:
    _positive("nu", s.nu)
    if s.count < 1:
        raise ConfigError("count must be at least 1")
    return s.base + s.nu * np.arange(s.count)


def hybridize_external(bare: ModeSpectrum, omega_ext: float, couplings) -> ModeSpectrum:
    """Eigenfrequencies of the phonons linearly coupled to one external mode.

    The external-like eigenmode (largest weight on the external basis vector)
    is dropped; the remaining eigenvalues are assigned to the bare modes in
    frequency order, which is exact because hybridization cannot reorder them.
    """
    w = bare.frequencies
    G = np.broadcast_to(np.asarray(couplings, dtype=complex), w.shape)
    if np.any(np.abs(w - omega_ext) < DEGENERACY_HZ):
        raise ConfigError("external mode degenerate with a bare mode")
    n = w.size
    h = np.zeros((n + 1, n + 1), dtype=complex)
    h[np.arange(n), np.arange(n)] = w
    h[n, n] = omega_ext
    h[:n, n] = G
    h[n, :n] = np.conj(G)
    vals, vecs = np.linalg.eigh(h)
    drop = int(np.argmax(np.abs(vecs[n, :]) ** 2))
    keep = np.delete(vals, drop)
    modes = tuple(PhononMode(m.index, float(f), m.g, m.kappa) for m, f in zip(bare.modes, np.sort(keep)))
    return ModeSpectrum(modes, "point_defect")


def generate_spectrum(scheme: SpectrumScheme) -> ModeSpectrum:
    if isinstance(scheme, UniformScheme):
        return _finish(_uniform_freqs(scheme), scheme.g, scheme.kappa, "uniform")
    if isinstance(scheme, PointDefectScheme):
        bare = scheme.base if isinstance(scheme.base, ModeSpectrum) else generate_spectrum(scheme.base)
        w = bare.frequencies
        G = np.broadcast_to(np.asarray(scheme.coupling, dtype=complex), w.shape).copy()
        G[np.abs(w - scheme.omega_ext) > scheme.bandwidth] = 0.0
        out = hybridize_external(bare, scheme.omega_ext, G)
        if np.min(np.diff(out.frequencies), initial=np.inf) < DEGENERACY_HZ:
            raise ConfigError("degenerate modes: two frequencies closer than 1 Hz")
        return out
    if isinstance(scheme, TwoFamilyScheme):
        _positive("nu1", scheme.nu1)
        _positive("nu2", scheme.nu2)
        o1, o2 = scheme.resolved_offsets()
        f1 = scheme.base + o1 + scheme.nu1 * np.arange(scheme.starts[0], scheme.starts[0] + scheme.counts[0])
        f2 = scheme.base + o2 + scheme.nu2 * np.arange(scheme.starts[1], scheme.starts[1] + scheme.counts[1])
        return _finish(np.concatenate([f1, f2]), scheme.g, scheme.kappa, "two_family")
    if isinstance(scheme, CompositeScheme):
        _positive("nu", scheme.nu)
        _positive("period", scheme.period)
        j = np.arange(scheme.count - 1)
        spacing = scheme.nu * (1.0 + scheme.depth * np.sin(2.0 * np.pi * j / scheme.period))
        if np.any(spacing <= 0):
            raise ConfigError("modulation depth too large: nonpositive spacing")
        freqs = scheme.base + np.concatenate([[0.0], np.cumsum(spacing)])
        return _finish(freqs, scheme.g, scheme.kappa, "composite")
    raise TypeError(f"unknown spectrum scheme {type(scheme).__name__}")


def two_family_families(scheme: TwoFamilyScheme, spectrum: ModeSpectrum) -> np.ndarray:
    """Family label (0 or 1) of each mode of a generated two-family spectrum."""
    o1, _ = scheme.resolved_offsets()
    rel = (spectrum.frequencies - scheme.base - o1) / scheme.nu1
    on1 = np.abs(rel - np.round(rel)) * scheme.nu1 < 1e-3
    k = np.round(rel)
    on1 &= (k >= scheme.starts[0]) & (k < scheme.starts[0] + scheme.counts[0])
    return np.where(on1, 0, 1)


def two_family_device_graph(scheme: TwoFamilyScheme, window: int, first: int | None = None):
    """Spectrum plus a graph whose storage set is ``window`` consecutive modes.

    The window starts at the first mode at or above ``base`` unless ``first``
    (a position in the sorted spectrum) is given.  Pairs are all cross-family
    pairs inside the window.
    """
    spec = generate_spectrum(scheme)
    fam = two_family_families(scheme, spec)
    if first is None:
        first = int(np.searchsorted(spec.frequencies, scheme.base - 1e-6))
    if first + window > len(spec):
        raise ConfigError("insufficient modes for the requested storage window")
    store = list(range(first, first + window))
    pairs = [frozenset((i, j)) for i, j in itertools.combinations(store, 2) if fam[i] != fam[j]]
    return spec, CouplingGraph(frozenset(store), frozenset(pairs)), fam


# -- nonuniformity -------------------------------------------------------------

@dataclass(frozen=True)
class NonuniformityReport:
    delta_nu: float
    witness: tuple  # ((i, j), (k, l))
    margins: dict  # pair -> its own minimum detuning


def _pair_table(freqs: np.ndarray, positions: list[int], storage_pos: set[int]):
    """All unordered pairs touching the storage set, lexicographically sorted."""
    n = len(positions)
    rows = []
    for a in range(n):
        for b in range(a + 1, n):
            if a in storage_pos or b in storage_pos:
                rows.append((a, b))
    rows = np.array(rows, dtype=np.int64).reshape(-1, 2)
    sp = np.abs(freqs[rows[:, 1]] - freqs[rows[:, 0]])
    return rows, sp


def _resolve_graph(spectrum: ModeSpectrum, graph: CouplingGraph):
    idx = spectrum.indices
    pos = {m: i for i, m in enumerate(idx)}
    storage = graph.storage_set or frozenset(idx)
    unknown = [m for m in storage if m not in pos]
    if unknown:
        raise ConfigError(f"storage modes {sorted(unknown)} absent from spectrum")
    return idx, pos, {pos[m] for m in storage}


def nonuniformity(spectrum: ModeSpectrum, graph: CouplingGraph) -> NonuniformityReport:
    """Exhaustive Delta-nu over the protected pairs.

    Ties between witnesses are broken lexicographically on (pair, other pair)
    in terms of mode indices.
    """
    pairs = graph.sorted_pairs()
    if not pairs:
        raise ConfigError("no pairs to protect")
    idx, pos, spos = _resolve_graph(spectrum, graph)
    freqs = spectrum.frequencies
    rows, sp = _pair_table(freqs, idx, spos)
    lookup = {(int(a), int(b)): r for r, (a, b) in enumerate(rows)}
    pp = np.array([sorted((pos[i], pos[j])) for i, j in pairs], dtype=np.int64)
    target = np.abs(freqs[pp[:, 1]] - freqs[pp[:, 0]])
    self_idx = np.array([lookup.get((int(a), int(b)), -1) for a, b in pp], dtype=np.int64)
    best, arg = _kernels.min_detuning(target, sp, self_idx)
    if not np.any(np.isfinite(best)):
        raise ConfigError("no competing resonance conditions: spectrum too small")
    margins = {}
    for (i, j), b in zip(pairs, best):
        margins[(i, j)] = float(b)
    dmin = float(np.min(best))
    cands = []
    for p, (b, a) in enumerate(zip(best, arg)):
        if b == dmin:
            k, l = rows[a]
            other = tuple(sorted((idx[k], idx[l])))
            cands.append((pairs[p], other))
    # the kernel picks the lowest table row per target; rows follow position
    # order, which matches index order for sorted spectra
    witness = min(cands)
    return NonuniformityReport(dmin, witness, margins)


# -- Kerr ------------------------------------------------------------------------

@dataclass(frozen=True)
class KerrModel:
    indices: tuple
    chi: np.ndarray  # Hz, symmetric
    populated: tuple | None = None
    occupations: tuple | None = None

    def pos(self, mode: int) -> int:
        return self.indices.index(mode)

    def entry(self, j: int, k: int) -> float:
        return float(self.chi[self.pos(j), self.pos(k)])

    @property
    def chi_bar(self) -> float:
        """Average cross-Kerr over pairs of populated modes (all modes by default)."""
        sel = [self.pos(m) for m in (self.populated or self.indices)]
        if len(sel) < 2:
            return 0.0
        sub = self.chi[np.ix_(sel, sel)]
        iu = np.triu_indices(len(sel), 1)
        return float(np.mean(sub[iu]))

    @property
    def n_tot(self) -> int | None:
        return None if self.occupations is None else int(sum(self.occupations))


def kerr_matrix(frame: DressedFrame, transmon=None, tilde: bool = False) -> KerrModel:
    """chi_jk = 2 alpha |lam_j|^2 |lam_k|^2, chi_jj = alpha |lam_j|^4 (Hz)."""
    alpha = (transmon or frame.transmon).alpha
    lam = frame.mode_tlambda if tilde else frame.mode_lambda
    idx = tuple(lam)
    l2 = np.array([abs(lam[j]) ** 2 for j in idx])
    chi = 2.0 * alpha * np.outer(l2, l2)
    np.fill_diagonal(chi, alpha * l2 ** 2)
    return KerrModel(idx, chi)


def worst_occupation_shift(weights, n_phonons: int) -> float:
    """max |sum_j w_j n_j| over n_j in {0,1} with exactly n_phonons ones.

    The extremes are attained by the n largest or the n smallest weights, so
    sorting is exact; no enumeration is needed.
    """
    w = np.sort(np.asarray(weights, dtype=float))
    k = int(min(max(n_phonons, 0), w.size))
    if k == 0:
        return 0.0
    return float(max(abs(w[-k:].sum()), abs(w[:k].sum())))


# -- drive planning --------------------------------------------------------------

@dataclass(frozen=True)
class DrivePlan:
    tones: tuple
    couplings: tuple  # (kind, modes, tone labels)
    compensation: dict = field(default_factory=dict)
    rates: tuple = ()

    @property
    def max_rate(self) -> float:
        return max((abs(r) for r in self.rates), default=0.0)


def _fixed_point(update, x0: float, tol: float, max_iter: int) -> tuple[float, int]:
    """Iterate x <- update(x); damping 0.5 once successive steps oscillate.

    Converged means a step below ``tol``.  A few extra passes then polish the
    residual well below tol (the map is strongly contracting for
    far-detuned drives), stopping as soon as a step fails to shrink.
    """
    x, damp, last, converged = x0, 1.0, None, False
    for it in range(1, max_iter + 1):
        try:
            step = update(x) - x
        except CouplingError:
            break
        if not np.isfinite(step):
            break
        if last is not None and step * last < 0 and abs(step) > 0.5 * abs(last):
            damp = 0.5
        x = x + damp * step
        if abs(step) <= tol:
            converged = True
            if abs(step) <= 1e-4 or (last is not None and abs(step) >= abs(last)):
                return x, it
        last = step
    if converged:
        return x, max_iter
    raise PlanError("Stark compensation diverges; reduce amplitudes")


def _shifts(device: DeviceConfig, tones) -> dict:
    return mode_stark_shifts(dressed_frame(device, tones))


def _others(kerr: KerrModel, exclude) -> list[int]:
    return [j for j in kerr.indices if j not in exclude]


def two_mode_condition(device: DeviceConfig, tones, a: int, b: int) -> float:
    """Residual (omega2 - omega1) - (omega_B - omega_A + S_B - S_A), Hz."""
    s = _shifts(device, tones)
    wa, wb = device.mode(a).omega, device.mode(b).omega
    return (tones[1].omega - tones[0].omega) - (wb - wa + s[b] - s[a])


def three_mode_condition(device: DeviceConfig, tone, a: int, b: int, c: int, kerr: KerrModel,
                         n_tot: int) -> float:
    """Residual of omega1 = w_A + w_C - w_B + S_A + S_C - S_B - chi_AC - chibar (n_tot - 2)."""
    s = _shifts(device, [tone])
    wa, wb, wc = (device.mode(m).omega for m in (a, b, c))
    target = wa + wc - wb + s[a] + s[c] - s[b] - kerr.entry(a, c) - kerr.chi_bar * (n_tot - 2)
    return tone.omega - target


def plan_two_mode_drives(device: DeviceConfig, mode_a: int, mode_b: int, anchor: DriveTone,
                         amplitude2: complex, kerr: KerrModel | None = None, n_tot: int = 2,
                         tol: float = 1.0, max_iter: int = 100, label2: str = "2") -> DrivePlan:
    """Place drive 2 so that omega2 - omega1 = omega_B - omega_A + S_B - S_A.

    The mode shifts depend on drive 2's detuning, so the condition is solved
    by fixed-point iteration.  The residual cross-Kerr detuning D1 is bounded
    over occupations of the other modes holding n_tot - 1 phonons.
    """
    if mode_a == mode_b:
        raise PlanError("two-mode coupling needs two distinct modes")
    a1 = anchor if anchor.label else DriveTone(anchor.omega, anchor.amplitude, "1")
    wa, wb = device.mode(mode_a).omega, device.mode(mode_b).omega

    def tones_at(w2):
        return (a1, DriveTone(w2, amplitude2, label2))

    def update(w2):
        s = _shifts(device, tones_at(w2))
        return a1.omega + wb - wa + s[mode_b] - s[mode_a]

    w2, iters = _fixed_point(update, a1.omega + wb - wa, tol, max_iter)
    tones = tones_at(w2)
    frame = dressed_frame(device, tones)
    s = mode_stark_shifts(frame)
    kerr = kerr or kerr_matrix(frame)
    d1 = [kerr.entry(mode_a, j) - kerr.entry(mode_b, j) for j in _others(kerr, (mode_a, mode_b))]
    rate = coupling_two_mode(frame, mode_a, mode_b, a1.label, label2).rate
    comp = {
        "stark_shifts_hz": {int(k): float(v) for k, v in s.items()},
        "stark_term_hz": float(s[mode_b] - s[mode_a]),
        "transmon_stark_hz": float(frame.stark_shift),
        "kerr_residual_bound_hz": worst_occupation_shift(d1, n_tot - 1),
        "n_tot": int(n_tot),
        "iterations": iters,
        "resonance_residual_hz": float(two_mode_condition(device, tones, mode_a, mode_b)),
    }
    return DrivePlan(tones, (("two_mode", (mode_a, mode_b), (a1.label, label2)),), comp, (complex(rate),))


def plan_three_mode_drive(device: DeviceConfig, mode_a: int, mode_b: int, mode_c: int,
                          amplitude: complex, n_tot: int = 2, kerr: KerrModel | None = None,
                          tol: float = 1.0, max_iter: int = 100, label: str = "1") -> DrivePlan:
    """Single tone for the three-mode coupling with B as the lone mode.

    omega1 = w_A + w_C - w_B + S_A + S_C - S_B - chi_AC - chibar (n_tot - 2).
    The residual D' is bounded using the deviations of chi from chibar over
    occupations of the remaining modes holding n_tot - 2 phonons.
    """
    if len({mode_a, mode_b, mode_c}) != 3:
        raise PlanError("three-mode coupling needs three distinct modes")
    if n_tot < 2:
        raise PlanError("three-mode coupling acts on states with at least two phonons")
    wa, wb, wc = (device.mode(m).omega for m in (mode_a, mode_b, mode_c))
    bare_frame = dressed_frame(device, [])
    kerr = kerr or kerr_matrix(bare_frame)
    chi_ac = kerr.entry(mode_a, mode_c)
    chib = kerr.chi_bar

    def update(w1):
        s = _shifts(device, [DriveTone(w1, amplitude, label)])
        return wa + wc - wb + s[mode_a] + s[mode_c] - s[mode_b] - chi_ac - chib * (n_tot - 2)

    w1, iters = _fixed_point(update, wa + wc - wb, tol, max_iter)
    tone = DriveTone(w1, amplitude, label)
    frame = dressed_frame(device, [tone])
    s = mode_stark_shifts(frame)
    d2 = [(kerr.entry(mode_b, j) - chib) - (kerr.entry(mode_a, j) - chib) - (kerr.entry(mode_c, j) - chib)
          for j in _others(kerr, (mode_a, mode_b, mode_c))]
    rate = coupling_three_mode(frame, mode_a, mode_b, mode_c, label).rate
    comp = {
        "stark_shifts_hz": {int(k): float(v) for k, v in s.items()},
        "stark_term_hz": float(s[mode_a] + s[mode_c] - s[mode_b]),
        "transmon_stark_hz": float(frame.stark_shift),
        "chi_ac_hz": chi_ac,
        "chi_bar_term_hz": float(chib * (n_tot - 2)),
        "kerr_residual_bound_hz": worst_occupation_shift(d2, n_tot - 2),
        "n_tot": int(n_tot),
        "iterations": iters,
        "resonance_residual_hz": float(three_mode_condition(device, tone, mode_a, mode_b, mode_c, kerr, n_tot)),
    }
    return DrivePlan((tone,), (("three_mode", (mode_a, mode_b, mode_c), (label,)),), comp, (complex(rate),))


# -- collision audit -------------------------------------------------------------

@dataclass(frozen=True)
class Collision:
    tones: tuple  # labels
    kind: str
    modes: tuple
    detuning: float


@dataclass(frozen=True)
class CollisionReport:
    collisions: tuple
    tolerance: float

    @property
    def passed(self) -> bool:
        return not self.collisions


def _label(t: DriveTone, i: int) -> str:
    return t.label or str(i)


def check_drive_set(spectrum: ModeSpectrum, graph: CouplingGraph, plan: DrivePlan | None = None,
                    extra_tones: Sequence[DriveTone] = (), tolerance: float | None = None,
                    mode_shifts: dict | None = None) -> CollisionReport:
    """Every tone pair against every two-mode condition touching the storage
    set, and every tone against every three-mode condition inside it.

    Conditions use mode frequencies plus ``mode_shifts`` (defaults to the
    plan's recorded Stark shifts).  Matches listed as intended couplings in the
    plan are not collisions.
    """
    tones = list(plan.tones if plan else ()) + list(extra_tones)
    if not tones:
        raise PlanError("no tones to check")
    if tolerance is None:
        if plan is None or plan.max_rate == 0:
            raise PlanError("tolerance needed when the plan carries no coupling rates")
        tolerance = 10.0 * plan.max_rate
    if mode_shifts is None:
        mode_shifts = plan.compensation.get("stark_shifts_hz", {}) if plan else {}
    idx = spectrum.indices
    w = spectrum.frequencies + np.array([mode_shifts.get(m, 0.0) for m in idx])
    storage = graph.storage_set or frozenset(idx)
    in_s = np.array([m in storage for m in idx])
    labels = [_label(t, i) for i, t in enumerate(tones)]
    wt = np.array([t.omega for t in tones])

    intended2, intended3 = set(), set()
    for kind, modes, tl in (plan.couplings if plan else ()):
        if kind == "two_mode":
            intended2.add((frozenset(tl), frozenset(modes)))
        else:
            a, b, c = modes
            intended3.add((tl[0], frozenset((a, c)), b))

    found = []
    n = len(idx)
    ii, jj = np.triu_indices(n, 1)
    touch = in_s[ii] | in_s[jj]
    ii, jj = ii[touch], jj[touch]
    spacing = np.abs(w[jj] - w[ii])
    for x, y in itertools.combinations(range(len(tones)), 2):
        det = abs(wt[y] - wt[x]) - spacing
        for h in np.flatnonzero(np.abs(det) <= tolerance):
            pair = (idx[ii[h]], idx[jj[h]])
            if (frozenset((labels[x], labels[y])), frozenset(pair)) in intended2:
                continue
            found.append(Collision((labels[x], labels[y]), "two_mode", pair, float(det[h])))

    s_pos = np.flatnonzero(in_s)
    if s_pos.size >= 3:
        pi, pj = np.triu_indices(s_pos.size, 1)
        pi, pj = s_pos[pi], s_pos[pj]
        sums = w[pi] + w[pj]
        for x in range(len(tones)):
            for k in s_pos:
                ok = (pi != k) & (pj != k)
                det = wt[x] - (sums - w[k])
                for h in np.flatnonzero(ok & (np.abs(det) <= tolerance)):
                    pair = frozenset((idx[pi[h]], idx[pj[h]]))
                    if (labels[x], pair, idx[k]) in intended3:
                        continue
                    a, c = sorted(pair)
                    found.append(Collision((labels[x],), "three_mode", (a, idx[k], c), float(det[h])))
    found.sort(key=lambda cl: (cl.kind, cl.tones, cl.modes))
    return CollisionReport(tuple(found), float(tolerance))
