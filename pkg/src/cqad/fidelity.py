"""Gate-infidelity models: decoherence versus spectral crowding.

Rates and couplings are in Hz (omega/2pi).  A gate of duration
t = c pi / (2 g) accumulates k t = k c pi / (2 g) with k, g both in Hz, so the
2pi factors cancel and no angular conversion is needed here.

Two evaluation forms share one signature:
    "linear"  k t + S eps
    "higher"  1 - exp(-k t) (1 - S eps)     (bounded in [0, 1]; the default)
with eps = (g / spacing)^2 and S the crowding prefactor (1 for local gates).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy import linalg, optimize

from . import _kernels
from .device import ConfigError, CouplingGraph, ModeSpectrum

C_DIRECT = {"swap": 5.0, "cz": 4.0}
C_VIRTUAL = {"swap": 1.0, "cz": 2.0}
# virtual rate caps: two-mode couplings for SWAP, three-mode for CZ
G_VIRTUAL_MAX = {"swap": 100e3, "cz": 25e3}
S_D = math.pi ** 2 / 3.0


class FidelityError(ValueError):
    pass


def _gate(gate: str) -> str:
    g = gate.lower()
    if g not in C_DIRECT:
        raise FidelityError(f"unknown gate {gate!r} (expected swap or cz)")
    return g


@dataclass(frozen=True)
class GateFidelityInputs:
    kappa: float
    gamma: float
    nu: float
    delta_nu: float
    kappa_gamma: float | tuple | None = None  # per involved mode; scalar means all equal
    lambda_sq: float = 0.01  # (g/delta)^2 used when kappa_gamma is not given
    beta_gamma: float = 0.0
    g_bound_direct: float = 10e6
    g_bound_virtual: float | None = None  # None: per-gate default cap

    def kappa_gamma_modes(self, n: int) -> tuple:
        kg = self.kappa_gamma
        if kg is None:
            kg = self.kappa + self.gamma * self.lambda_sq * (1.0 + self.beta_gamma)
        if np.ndim(kg) == 0:
            return (float(kg),) * n
        kg = tuple(float(x) for x in kg)
        if len(kg) != n:
            raise FidelityError(f"expected {n} dressed decay rates, got {len(kg)}")
        return kg

    def kappa_gamma_mean(self) -> float:
        kg = self.kappa_gamma
        if kg is None or np.ndim(kg) == 0:
            return self.kappa_gamma_modes(1)[0]
        return float(np.mean(kg))

    def kappa_bar(self, gate: str) -> float:
        """Total virtual-gate decoherence: kA + kB (SWAP), (kA + kB + kC)/2 (CZ)."""
        if _gate(gate) == "swap":
            return float(sum(self.kappa_gamma_modes(2)))
        return float(sum(self.kappa_gamma_modes(3))) / 2.0

    def virtual_bound(self, gate: str) -> float:
        return G_VIRTUAL_MAX[_gate(gate)] if self.g_bound_virtual is None else self.g_bound_virtual


def fig3_inputs(kappa: float, gamma: float, delta_nu: float = 1e6, **kw) -> GateFidelityInputs:
    """Inputs at the comparison-map parameter set (g = 10 MHz, delta = 100 MHz, nu = 10 MHz)."""
    kw.setdefault("nu", 10e6)
    kw.setdefault("lambda_sq", (10e6 / 100e6) ** 2)
    return GateFidelityInputs(kappa=kappa, gamma=gamma, delta_nu=delta_nu, **kw)


def _combine(kt, eps, form: str):
    if form == "linear":
        return kt + eps
    if form == "higher":
        return 1.0 - np.exp(-kt) * (1.0 - np.minimum(eps, 1.0))
    raise FidelityError(f"unknown form {form!r}")


def infidelity_model(k: float, c: float, spacing: float, g, prefactor: float = 1.0, form: str = "higher"):
    """k c pi/(2g) decoherence plus prefactor (g/spacing)^2 crowding."""
    g = np.asarray(g, dtype=float)
    if np.any(g <= 0):
        raise FidelityError("coupling rate must be positive")
    kt = k * c * math.pi / (2.0 * g)
    return _combine(kt, prefactor * (g / spacing) ** 2, form)


def local_infidelity_direct(inputs: GateFidelityInputs, g_d, gate: str = "swap", form: str = "higher"):
    return infidelity_model(inputs.kappa + inputs.gamma, C_DIRECT[_gate(gate)], inputs.nu, g_d, 1.0, form)


def local_infidelity_virtual(inputs: GateFidelityInputs, g_v, gate: str = "swap", form: str = "higher"):
    return infidelity_model(inputs.kappa_bar(gate), C_VIRTUAL[_gate(gate)], inputs.delta_nu, g_v, 1.0, form)


def closed_form_optimum(k: float, c: float, spacing: float, prefactor: float = 1.0) -> tuple[float, float]:
    """Unconstrained optimum of the linear model: (g_opt, infidelity).

    g_opt^3 = k c pi spacing^2 / (4 prefactor); at prefactor 1 the value is
    1.5 [c pi k / (sqrt(2) spacing)]^(2/3).
    """
    g = (k * c * math.pi * spacing ** 2 / (4.0 * prefactor)) ** (1.0 / 3.0)
    return g, 3.0 * prefactor * (g / spacing) ** 2


@dataclass(frozen=True)
class FidelityReport:
    g_opt: float
    infidelity: float
    constrained: bool
    closed_form: float | None = None
    closed_form_g: float | None = None


def minimize_model(k: float, c: float, spacing: float, bound: float, prefactor: float = 1.0,
                   form: str = "higher") -> FidelityReport:
    """Minimise over g in (0, bound], bounded Brent search in log g.

    The search runs down to bound * 1e-9, far below any optimum of interest;
    with no decoherence (k = 0) the crowding term alone is left and the
    optimum collapses onto that floor.
    """
    if not bound > 0:
        raise FidelityError("coupling bound must be positive")

    def f(u):
        return float(infidelity_model(k, c, spacing, math.exp(u), prefactor, form))

    hi = math.log(bound)
    lo = hi - 9.0 * math.log(10.0)
    res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    u, val = float(res.x), float(res.fun)
    for edge in (lo, hi):
        fe = f(edge)
        if fe <= val:
            u, val = edge, fe
    g = math.exp(u)
    g_cf, v_cf = closed_form_optimum(k, c, spacing, prefactor) if k > 0 else (0.0, 0.0)
    constrained = u == hi
    return FidelityReport(g, float(np.clip(val, 0.0, None)), bool(constrained),
                          None if constrained else v_cf, None if constrained else g_cf)


def optimize_gate(inputs: GateFidelityInputs, kind: str, gate: str = "swap", form: str = "higher") -> FidelityReport:
    gate = _gate(gate)
    if kind == "direct":
        return minimize_model(inputs.kappa + inputs.gamma, C_DIRECT[gate], inputs.nu, inputs.g_bound_direct,
                              1.0, form)
    if kind == "virtual":
        return minimize_model(inputs.kappa_bar(gate), C_VIRTUAL[gate], inputs.delta_nu,
                              inputs.virtual_bound(gate), 1.0, form)
    raise FidelityError(f"unknown gate kind {kind!r} (expected direct or virtual)")


# -- crowding coefficients ---------------------------------------------------------

def crowding_coefficient_direct(cutoff: int) -> float:
    """2 sum_{n=1}^{cutoff} 1/n^2, the partial sum of the +-n nu ladder."""
    if cutoff < 1:
        raise FidelityError("cutoff must be at least 1")
    n = np.arange(1, int(cutoff) + 1, dtype=float)
    # summed smallest-first to keep the tail from being swallowed by rounding
    return float(2.0 * np.sum((1.0 / n ** 2)[::-1]))


def crowding_coefficient_virtual(spectrum: ModeSpectrum, graph: CouplingGraph, M: int,
                                 delta_nu: float | None = None, degenerate_tol: float = 1e-3) -> float:
    """Average crowding sum over desired transitions among the first M stored modes.

    The M qubits live in the M lowest-frequency storage modes.  Desired
    transitions are the graph pairs inside that set.  For each one, every
    other two-mode condition with at least one mode among the M qubits (the
    other mode anywhere in the spectrum) contributes (delta_nu / delta')^2.
    An exactly degenerate condition (within ``degenerate_tol`` Hz) makes the
    coefficient infinite.
    """
    storage = sorted(graph.storage_set or spectrum.indices, key=lambda m: spectrum.by_index(m).omega)
    if M < 2:
        raise FidelityError("M must be at least 2")
    if M > len(storage):
        raise ConfigError("insufficient modes for M")
    qubits = set(storage[:M])
    desired = [p for p in graph.sorted_pairs() if set(p) <= qubits]
    if not desired:
        raise ConfigError("no desired transitions among the M stored modes")
    idx = spectrum.indices
    pos = {m: i for i, m in enumerate(idx)}
    w = spectrum.frequencies
    if delta_nu is None:
        from .spectrum import nonuniformity
        delta_nu = nonuniformity(spectrum, graph).delta_nu
    qpos = {pos[m] for m in qubits}
    n = len(idx)
    ii, jj = np.triu_indices(n, 1)
    touch = np.array([a in qpos or b in qpos for a, b in zip(ii, jj)])
    ii, jj = ii[touch], jj[touch]
    table = np.abs(w[jj] - w[ii])
    row = {(int(a), int(b)): r for r, (a, b) in enumerate(zip(ii, jj))}
    pp = [tuple(sorted((pos[a], pos[b]))) for a, b in desired]
    target = np.array([abs(w[b] - w[a]) for a, b in pp])
    self_idx = np.array([row[p] for p in pp], dtype=np.int64)
    sums = _kernels.crowding_sums(target, table, self_idx, delta_nu, degenerate_tol)
    return float(np.mean(sums))


def two_family_crowding(M: int, nu: float = 10e6, delta_nu: float = 0.85e6, pad: int = 20) -> float:
    """S_v(M) on a two-family array with families nu and nu + delta_nu.

    The array extends ``pad`` modes per family on either side of the
    storage window, so edge effects do not flatter the count.
    """
    from .spectrum import TwoFamilyScheme, two_family_device_graph
    per = M // 2 + 1
    sch = TwoFamilyScheme(nu, nu + delta_nu, counts=(per + 2 * pad, per + 2 * pad), starts=(-pad, -pad),
                          base=0.0)
    spec, graph, _ = two_family_device_graph(sch, M)
    return crowding_coefficient_virtual(spec, graph, M, delta_nu)


# -- global model and quantum volume -------------------------------------------------

@dataclass(frozen=True)
class GlobalFidelityReport:
    M: int
    kind: str
    gate: str
    S_d: float
    S_v: float | None
    g_opt: float
    infidelity: float
    constrained: bool
    depth: float
    volume_term: float


def global_infidelity(inputs: GateFidelityInputs, M: int, kind: str, gate: str = "swap",
                      S_d: float = S_D, S_v: float | None = None, form: str = "higher") -> GlobalFidelityReport:
    """Optimal M-qubit gate infidelity.

    direct:  [(kappa + gamma) + (M - 2) kappa] t_d + S_d (g/nu)^2
    virtual: kbar t_v + S_v (g/dnu)^2, kbar = M kappa_gamma (two-mode SWAP)
             or (M - 1/2) kappa_gamma (three-mode CZ)
    """
    gate = _gate(gate)
    if M < 2:
        raise FidelityError("M must be at least 2")
    if kind == "direct":
        k = (inputs.kappa + inputs.gamma) + (M - 2) * inputs.kappa
        rep = minimize_model(k, C_DIRECT[gate], inputs.nu, inputs.g_bound_direct, S_d, form)
    elif kind == "virtual":
        if S_v is None:
            raise FidelityError("virtual global model needs S_v")
        kg = inputs.kappa_gamma_mean()
        kbar = (M if gate == "swap" else M - 0.5) * kg
        if not np.isfinite(S_v):
            rep = FidelityReport(inputs.virtual_bound(gate), 1.0, True)
        else:
            rep = minimize_model(kbar, C_VIRTUAL[gate], inputs.delta_nu, inputs.virtual_bound(gate), S_v, form)
    else:
        raise FidelityError(f"unknown gate kind {kind!r}")
    inf = min(rep.infidelity, 1.0)
    depth = math.inf if inf == 0 else 1.0 / (M * inf)
    return GlobalFidelityReport(M, kind, gate, S_d, S_v, rep.g_opt, inf, rep.constrained, depth,
                                min(M, depth) ** 2)


def quantum_volume(infidelity_of_M: Callable[[int], float] | Mapping[int, float],
                   M_range: Iterable[int]) -> tuple[int, float]:
    """V = max_M [min(M, d(M))]^2 with d(M) = 1/(M (1 - F)); ties go to the smaller M."""
    get = infidelity_of_M.__getitem__ if isinstance(infidelity_of_M, Mapping) else infidelity_of_M
    best_m, best_v = None, -1.0
    for M in M_range:
        e = float(get(M))
        d = math.inf if e <= 0 else 1.0 / (M * e)
        v = min(M, d) ** 2
        if v > best_v or (v == best_v and M < best_m):
            best_m, best_v = M, v
    if best_m is None:
        raise FidelityError("empty M range")
    return best_m, best_v


# -- Kerr, detuning and heating ------------------------------------------------------

def kerr_leading_infidelity(chi_ab: float, g_v: float, t: float) -> tuple[float, bool]:
    """(1/64) sin^4(2 g t) (chi/g)^2 with g, chi in Hz and t in seconds.

    Returns (value, valid) where valid flags chi << g (chi/g < 0.1).
    """
    x = chi_ab / g_v
    val = math.sin(2.0 * 2.0 * math.pi * g_v * t) ** 4 * x ** 2 / 64.0
    return val, abs(x) < 0.1


def kerr_exact_infidelity(chi_ab: float, g_v: float, t: float, chi_aa: float | None = None,
                          chi_bb: float | None = None) -> float:
    """1 - |<11| e^{i H1 t} e^{-i H t} |11>|^2 in the {|11>, |20>, |02>} block."""
    chi_aa = chi_ab / 2.0 if chi_aa is None else chi_aa
    chi_bb = chi_ab / 2.0 if chi_bb is None else chi_bb
    s = math.sqrt(2.0) * g_v
    h1 = np.array([[0, s, s], [np.conj(s), 0, 0], [np.conj(s), 0, 0]], dtype=complex)
    h = h1 + np.diag([-chi_ab, -chi_aa, -chi_bb]).astype(complex)
    w = 2.0 * math.pi * t
    amp = (linalg.expm(1j * w * h1) @ linalg.expm(-1j * w * h))[0, 0]
    return float(1.0 - abs(amp) ** 2)


def detuning_infidelity(D: float, g_v: float) -> tuple[float, bool]:
    """(D / g_v)^2; valid when |D| < g_v."""
    return (D / g_v) ** 2, abs(D) < abs(g_v)


@dataclass(frozen=True)
class HeatingInputs:
    gamma: float
    gamma_phi_hf: float
    xi_1: complex
    xi_2: complex
    delta_1: float
    delta_2: float
    alpha: float


def drive_heating_rate(h: HeatingInputs) -> float:
    """Drive-induced heating rate in Hz.

    gamma [|a xi1^2/(2 d1 + a)|^2 + |a xi2^2/(2 d2 + a)|^2 + |2 a xi1 xi2/(d1 + d2 + a)|^2]
      + 2 gamma_phi [|xi1|^2 + |xi2|^2]
    """
    if h.gamma < 0 or h.gamma_phi_hf < 0:
        raise FidelityError("negative decoherence rate")
    a = h.alpha
    dens = (2 * h.delta_1 + a, 2 * h.delta_2 + a, h.delta_1 + h.delta_2 + a)
    scale = max(abs(h.delta_1), abs(h.delta_2), abs(a))
    for den in dens:
        if abs(den) <= 1e-6 * scale:
            raise FidelityError("two-photon resonance; rate formula invalid")
    x1, x2 = complex(h.xi_1), complex(h.xi_2)
    terms = (abs(a * x1 ** 2 / dens[0]) ** 2 + abs(a * x2 ** 2 / dens[1]) ** 2
             + abs(2 * a * x1 * x2 / dens[2]) ** 2)
    return float(h.gamma * terms + 2.0 * h.gamma_phi_hf * (abs(x1) ** 2 + abs(x2) ** 2))


# -- comparison maps -------------------------------------------------------------------

@dataclass(frozen=True)
class InfidelityMap:
    kappa: np.ndarray
    gamma: np.ndarray
    gate: str
    direct_g: np.ndarray
    direct_inf: np.ndarray
    direct_constrained: np.ndarray
    virtual_g: np.ndarray
    virtual_inf: np.ndarray
    virtual_constrained: np.ndarray
    kappa_gamma: np.ndarray

    @property
    def log_ratio(self) -> np.ndarray:
        """log10[(1 - F_d)/(1 - F_v)]; positive where virtual gates win."""
        return np.log10(self.direct_inf) - np.log10(self.virtual_inf)


def infidelity_map(kappa_range=(1.0, 1e6), gamma_range=(1.0, 1e6), shape=(50, 50), gate: str = "swap",
                   base: GateFidelityInputs | None = None, form: str = "higher") -> InfidelityMap:
    """Optimised direct and virtual infidelities on a log-spaced (kappa, gamma) grid.

    Rows index kappa, columns gamma (row-major, independent of evaluation order).
    """
    gate = _gate(gate)
    base = base or fig3_inputs(1.0, 1.0)
    ks = np.logspace(np.log10(kappa_range[0]), np.log10(kappa_range[1]), shape[0])
    gs = np.logspace(np.log10(gamma_range[0]), np.log10(gamma_range[1]), shape[1])
    out = {n: np.zeros(shape) for n in ("dg", "di", "dc", "vg", "vi", "vc", "kg")}
    for r, kappa in enumerate(ks):
        for c, gamma in enumerate(gs):
            inp = replace(base, kappa=float(kappa), gamma=float(gamma))
            d = optimize_gate(inp, "direct", gate, form)
            v = optimize_gate(inp, "virtual", gate, form)
            out["dg"][r, c], out["di"][r, c], out["dc"][r, c] = d.g_opt, d.infidelity, d.constrained
            out["vg"][r, c], out["vi"][r, c], out["vc"][r, c] = v.g_opt, v.infidelity, v.constrained
            out["kg"][r, c] = inp.kappa_gamma_modes(1)[0]
    return InfidelityMap(ks, gs, gate, out["dg"], out["di"], out["dc"].astype(bool), out["vg"], out["vi"],
                         out["vc"].astype(bool), out["kg"])


# -- vectorised optimisation for whole grids -------------------------------------------

_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


def minimize_model_array(k, c: float, spacing: float, bound: float, prefactor=1.0, form: str = "higher",
                         iters: int = 60):
    """Golden-section counterpart of ``minimize_model`` over arrays of k (and prefactor).

    Same search interval (nine decades below ``bound`` in log g) and the same
    edge rule, so the two agree cell by cell; this one evaluates every cell
    at once.  Returns (g_opt, infidelity, constrained) arrays.
    """
    k = np.asarray(k, dtype=float)
    pre = np.broadcast_to(np.asarray(prefactor, dtype=float), k.shape)

    def f(u):
        g = np.exp(u)
        return _combine(k * c * math.pi / (2.0 * g), pre * (g / spacing) ** 2, form)

    hi = math.log(bound)
    lo = hi - 9.0 * math.log(10.0)
    # coarse scan first: the model is flat (= 1) where either term saturates,
    # and a bare golden section cannot tell which side of a plateau to keep
    grid = np.linspace(lo, hi, 181)
    kk = k[..., None]
    pp = pre[..., None]
    g = np.exp(grid)
    vals = _combine(kk * c * math.pi / (2.0 * g), pp * (g / spacing) ** 2, form)
    i = np.argmin(vals, axis=-1)
    step = grid[1] - grid[0]
    a = np.maximum(grid[i] - step, lo)
    b = np.minimum(grid[i] + step, hi)
    x1, x2 = b - _GOLD * (b - a), a + _GOLD * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        left = f1 <= f2
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
        nx1 = np.where(left, b - _GOLD * (b - a), x2)
        nx2 = np.where(left, x1, a + _GOLD * (b - a))
        x1, x2 = nx1, nx2
        f1, f2 = f(x1), f(x2)
    u = np.where(f1 <= f2, x1, x2)
    val = np.minimum(f1, f2)
    for edge in (lo, hi):
        fe = f(np.full(k.shape, edge))
        take = fe <= val
        u, val = np.where(take, edge, u), np.where(take, fe, val)
    return np.exp(u), np.clip(val, 0.0, None), u == hi


def volume_map(kappa_range=(1.0, 1e6), gamma_range=(1.0, 1e6), shape=(50, 50), gate: str = "swap",
               kind: str = "virtual", M_range=range(2, 31), delta_nu: float = 0.85e6,
               base: GateFidelityInputs | None = None, form: str = "higher"):
    """Optimal processor size M* and quantum volume V at every (kappa, gamma) cell.

    The virtual model uses the two-family crowding coefficient S_v(M); the
    direct one uses S_d.  Ties in V go to the smaller M, as in
    ``quantum_volume``.  Returns (kappa, gamma, M_opt, V).
    """
    gate = _gate(gate)
    base = base or fig3_inputs(1.0, 1.0, delta_nu=delta_nu)
    base = replace(base, delta_nu=delta_nu)
    ks = np.logspace(np.log10(kappa_range[0]), np.log10(kappa_range[1]), shape[0])
    gs = np.logspace(np.log10(gamma_range[0]), np.log10(gamma_range[1]), shape[1])
    K, G = np.meshgrid(ks, gs, indexing="ij")
    best_m = np.zeros(shape, dtype=int)
    best_v = np.full(shape, -1.0)
    if kind == "virtual":
        kg = np.vectorize(lambda a, b: replace(base, kappa=float(a), gamma=float(b)).kappa_gamma_mean())(K, G)
    elif kind != "direct":
        raise FidelityError(f"unknown gate kind {kind!r}")
    for M in M_range:
        if M < 2:
            raise FidelityError("M must be at least 2")
        if kind == "direct":
            _, inf, _ = minimize_model_array((K + G) + (M - 2) * K, C_DIRECT[gate], base.nu, base.g_bound_direct,
                                             S_D, form)
        else:
            s_v = two_family_crowding(M, base.nu, delta_nu)
            kbar = (M if gate == "swap" else M - 0.5) * kg
            _, inf, _ = minimize_model_array(kbar, C_VIRTUAL[gate], delta_nu, base.virtual_bound(gate), s_v, form)
        inf = np.minimum(inf, 1.0)
        with np.errstate(divide="ignore"):
            depth = np.where(inf > 0, 1.0 / (M * inf), np.inf)
        v = np.minimum(M, depth) ** 2
        better = (v > best_v) | ((v == best_v) & (M < best_m))
        best_m = np.where(better, M, best_m)
        best_v = np.where(better, v, best_v)
    return ks, gs, best_m, best_v
