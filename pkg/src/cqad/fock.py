"""Sparse truncated-Fock simulation of phonon-mode registers.

A state is a list of occupation configurations (rows of a uint8 matrix) with
complex amplitudes.  Every engineered gate conserves some combination of mode
occupations, so it acts as an independent small unitary on each "chain" of
configurations that share the conserved quantities.  Those chain unitaries are
built from the exact generator and exponentiated once, then cached.

Conventions
-----------
* beamsplitter:  U = exp(-i theta G),  G = e^{i phi} m_A m_B^dag + h.c.
  The canonical SWAP is theta = pi/2, phi = pi/2: |10> -> |01> and
  |01> -> -|10>.  (No choice of phi makes both single-excitation maps
  phase-free, because the block unitary has unit determinant.)
* three_mode:    U = exp(-i theta G),  G = e^{i phi} m_A m_B m_C^dag + h.c.
  theta = pi maps |110> -> -|110>; that is the CZ with C as ancilla.
* controlled_swap = BS(A,B,pi/4) . CZ(ctrl,B,anc) . BS(A,B,-pi/4), with
  phi = pi/2.  On the <=1-excitation subspace of (A,B) this is an exact
  Fredkin gate, with no residual phases.
* dual_rail_rotation: |10> is the Bloch |0>, R = exp(-i angle sigma/2).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import linalg

PRUNE = 1e-14
LEAK_TOL = 1e-12
MAX_DENSE_DIM = 4096


class FockError(ValueError):
    pass


# --------------------------------------------------------------------------
# state container


class SparseFockState:
    """Superposition of occupation configurations.

    ``occ`` has one row per configuration and one column per mode;
    ``truncation[m]`` is the local dimension d of mode m (occupations < d).
    """

    def __init__(self, occ, amps, truncation):
        occ = np.asarray(occ, dtype=np.uint8)
        if occ.ndim != 2:
            raise FockError("occupation table must be 2-D")
        self.occ = occ
        self.amps = np.asarray(amps, dtype=np.complex128).reshape(-1)
        self.truncation = np.asarray(truncation, dtype=np.int64).reshape(-1)
        if self.truncation.shape[0] != occ.shape[1]:
            raise FockError("truncation length does not match mode count")
        if self.amps.shape[0] != occ.shape[0]:
            raise FockError("amplitude count does not match configuration count")
        if occ.size and np.any(occ >= self.truncation[None, :]):
            raise FockError("truncation exceeded")
        self.capped_events = 0

    # -- construction ------------------------------------------------------
    @classmethod
    def vacuum(cls, n_modes: int, truncation=3) -> "SparseFockState":
        return cls(np.zeros((1, n_modes), np.uint8), [1.0], _trunc(n_modes, truncation))

    @classmethod
    def from_terms(cls, terms, n_modes: int, truncation=3, normalize: bool = True) -> "SparseFockState":
        """Build from {configuration: amplitude}.

        A configuration is either a full occupation sequence or a mapping
        {mode: occupation}; omitted modes are empty.
        """
        items = terms.items() if isinstance(terms, Mapping) else terms
        rows, amps = [], []
        for cfg, amp in items:
            row = np.zeros(n_modes, np.uint8)
            if isinstance(cfg, Mapping):
                for m, n in cfg.items():
                    row[int(m)] = n
            else:
                cfg = tuple(cfg)
                if len(cfg) != n_modes:
                    raise FockError("configuration length does not match mode count")
                row[:] = cfg
            rows.append(row)
            amps.append(complex(amp))
        if not rows:
            raise FockError("empty state")
        st = cls(np.array(rows), amps, _trunc(n_modes, truncation))
        st._merge()
        if normalize:
            st.normalize()
        return st

    @classmethod
    def from_dense(cls, vec, n_modes: int, truncation) -> "SparseFockState":
        dims = _trunc(n_modes, truncation)
        vec = np.asarray(vec, dtype=np.complex128)
        nz = np.nonzero(np.abs(vec) > PRUNE)[0]
        occ = np.array(np.unravel_index(nz, tuple(dims))).T.astype(np.uint8).reshape(-1, n_modes)
        return cls(occ, vec[nz], dims)

    @classmethod
    def _raw(cls, occ, amps, truncation, capped=0) -> "SparseFockState":
        """Unchecked constructor for arrays already known to be valid."""
        st = cls.__new__(cls)
        st.occ, st.amps, st.truncation, st.capped_events = occ, amps, truncation, capped
        return st

    def copy(self) -> "SparseFockState":
        return SparseFockState._raw(self.occ.copy(), self.amps.copy(), self.truncation, self.capped_events)

    # -- views --------------------------------------------------------------
    @property
    def n_modes(self) -> int:
        return self.occ.shape[1]

    @property
    def n_terms(self) -> int:
        return self.occ.shape[0]

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amps) ** 2)))

    def normalize(self) -> "SparseFockState":
        nrm = self.norm()
        if nrm == 0:
            raise FockError("state has zero norm")
        self.amps = self.amps / nrm
        return self

    def terms(self) -> dict:
        return {tuple(int(x) for x in row): complex(a) for row, a in zip(self.occ, self.amps)}

    def amplitude(self, cfg) -> complex:
        row = np.zeros(self.n_modes, np.uint8)
        if isinstance(cfg, Mapping):
            for m, n in cfg.items():
                row[int(m)] = n
        else:
            row[:] = tuple(cfg)
        hit = np.all(self.occ == row[None, :], axis=1)
        return complex(self.amps[hit].sum()) if hit.any() else 0j

    def mean_occupation(self, mode: int) -> float:
        return float(np.sum(np.abs(self.amps) ** 2 * self.occ[:, mode]))

    def occupied_modes(self) -> np.ndarray:
        """Modes with nonzero occupation in at least one configuration."""
        return np.nonzero(self.occ.any(axis=0))[0]

    def max_occupation(self) -> int:
        return int(self.occ.max()) if self.occ.size else 0

    def to_dense(self) -> np.ndarray:
        dims = tuple(int(d) for d in self.truncation)
        dim = int(np.prod(dims))
        if dim > MAX_DENSE_DIM * 16:
            raise FockError("dimension overflow")
        vec = np.zeros(dim, np.complex128)
        idx = np.ravel_multi_index(tuple(self.occ.T.astype(np.int64)), dims)
        np.add.at(vec, idx, self.amps)
        return vec

    def to_json(self) -> dict:
        return {
            "n_modes": self.n_modes,
            "truncation": [int(d) for d in self.truncation],
            "terms": [
                {"occupations": [int(x) for x in row], "amplitude": [float(a.real), float(a.imag)]}
                for row, a in zip(self.occ, self.amps)
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SparseFockState":
        n = int(data["n_modes"])
        terms = []
        for t in data["terms"]:
            occ = t["occupations"]
            cfg = {int(k): v for k, v in occ.items()} if isinstance(occ, Mapping) else occ
            re, im = t["amplitude"]
            terms.append((cfg, complex(re, im)))
        return cls.from_terms(terms, n, data.get("truncation", 3), normalize=False)

    # -- internal ------------------------------------------------------------
    def _merge(self):
        """Combine duplicate configurations and prune tiny amplitudes."""
        occ, amps = _merge_rows(self.occ, self.amps)
        self.occ, self.amps = occ, amps

    def __repr__(self):
        return f"SparseFockState(n_modes={self.n_modes}, n_terms={self.n_terms})"


def _trunc(n_modes: int, truncation) -> np.ndarray:
    t = np.asarray(truncation, dtype=np.int64)
    if t.ndim == 0:
        t = np.full(n_modes, int(t))
    if t.shape != (n_modes,):
        raise FockError("truncation length does not match mode count")
    if np.any(t < 1) or np.any(t > 255):
        raise FockError("truncation must lie in [1, 255]")
    return t


def _merge_rows(occ, amps):
    if occ.shape[0] == 0:
        return occ, amps
    m = occ.shape[1]
    occ = np.ascontiguousarray(occ)
    v = occ.view(np.dtype((np.void, m))).ravel()
    order = np.argsort(v, kind="stable")
    vs = v[order]
    start = np.ones(vs.size, bool)
    start[1:] = vs[1:] != vs[:-1]
    heads = np.nonzero(start)[0]
    out = np.add.reduceat(amps[order], heads)
    keep = np.abs(out) > PRUNE
    return occ[order[heads[keep]]], out[keep]


# --------------------------------------------------------------------------
# gate specification


GATE_KINDS = ("beamsplitter", "three_mode", "cz", "cswap", "phase", "dual_rail_rotation")


@dataclass(frozen=True)
class GateSpec:
    kind: str
    targets: tuple
    theta: float = 0.0
    phi: float = 0.0
    axis: str | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise FockError(f"unknown gate kind {self.kind!r}")
        t = tuple(int(x) for x in self.targets)
        object.__setattr__(self, "targets", t)
        if len(set(t)) != len(t):
            raise FockError("gate targets must be distinct")
        need = {"beamsplitter": 2, "three_mode": 3, "cz": 3, "cswap": 4, "phase": 1, "dual_rail_rotation": 2}
        if len(t) != need[self.kind]:
            raise FockError(f"{self.kind} takes {need[self.kind]} targets, got {len(t)}")
        if not np.isfinite(self.theta) or not np.isfinite(self.phi):
            raise FockError("gate angles must be finite reals")
        if self.kind == "dual_rail_rotation" and self.axis not in ("X", "Y"):
            raise FockError("dual-rail rotation axis must be X or Y")

    def inverse(self) -> "GateSpec":
        if self.kind in ("cz", "cswap"):
            return self
        return GateSpec(self.kind, self.targets, -self.theta, self.phi, self.axis)

    def to_json(self) -> dict:
        d = {"kind": self.kind, "targets": list(self.targets), "theta": self.theta, "phi": self.phi}
        if self.axis:
            d["axis"] = self.axis
        return d

    @classmethod
    def from_json(cls, d: dict) -> "GateSpec":
        return cls(d["kind"], tuple(d["targets"]), float(d.get("theta", 0.0)), float(d.get("phi", 0.0)),
                   d.get("axis"))


def swap_spec(a: int, b: int) -> GateSpec:
    """Canonical SWAP between modes a and b (a -> b is phase-free)."""
    return GateSpec("beamsplitter", (a, b), np.pi / 2, np.pi / 2)


# --------------------------------------------------------------------------
# chain unitaries


def _bs_generator(s: int, phi: float) -> tuple[np.ndarray, np.ndarray]:
    """Beamsplitter block on {|nA, s-nA>}, indexed by nA."""
    h = np.zeros((s + 1, s + 1), np.complex128)
    for na in range(1, s + 1):
        h[na - 1, na] = np.exp(1j * phi) * np.sqrt(na * (s - na + 1))
    na = np.arange(s + 1)
    return h + h.conj().T, np.stack([na, s - na], axis=1)


def _tm_generator(p: int, q: int, phi: float) -> tuple[np.ndarray, np.ndarray]:
    """Three-mode block on {|p-k, q-k, k>}, indexed by k = n_C."""
    kmax = min(p, q)
    h = np.zeros((kmax + 1, kmax + 1), np.complex128)
    for k in range(kmax):
        h[k + 1, k] = np.exp(1j * phi) * np.sqrt((p - k) * (q - k) * (k + 1))
    k = np.arange(kmax + 1)
    return h + h.conj().T, np.stack([p - k, q - k, k], axis=1)


@lru_cache(maxsize=8192)
def _block_unitary(kind: str, key: tuple, theta: float, phi: float, dims: tuple, project: bool):
    """(U, occupations per position, allowed mask) for one invariant chain.

    With ``project`` the generator is restricted to the states inside the
    truncation before exponentiating (the dense-oracle convention); otherwise
    the chain is exponentiated in full and leakage is checked by the caller.
    """
    h, occs = _bs_generator(*key, phi) if kind == "bs" else _tm_generator(*key, phi)
    allowed = np.all(occs < np.asarray(dims)[None, :], axis=1)
    if project and not allowed.all():
        u = np.zeros_like(h)
        idx = np.nonzero(allowed)[0]
        if idx.size:
            u[np.ix_(idx, idx)] = linalg.expm(-1j * theta * h[np.ix_(idx, idx)])
    else:
        u = linalg.expm(-1j * theta * h)
    return u, occs, allowed


def _apply_blocks(state: SparseFockState, kind: str, modes, keys, pos, active, theta, phi,
                  truncation: str) -> SparseFockState:
    """Apply a chain-decomposed gate.

    ``keys`` (rows) label the invariant chain of each term, ``pos`` its index
    within the chain and ``active`` marks terms whose chain has more than one
    state.  Inactive terms pass through untouched; outputs of active chains
    cannot coincide with them, so only the active part needs merging.
    """
    if truncation not in ("error", "project"):
        raise FockError(f"unknown truncation mode {truncation!r}")
    if not active.any():
        return state
    modes = list(modes)
    dims = tuple(int(d) for d in state.truncation[modes])
    act = np.nonzero(active)[0]
    keys = keys[act]
    flat = keys[:, 0] * 65536 + (keys[:, 1] if keys.shape[1] > 1 else 0)
    if flat.min() == flat.max():
        groups = [(act, tuple(int(x) for x in keys[0]))]
    else:
        _, first, inv = np.unique(flat, return_index=True, return_inverse=True)
        inv = inv.ravel()
        groups = [(act[inv == gi], tuple(int(x) for x in keys[f])) for gi, f in enumerate(first)]
    new_occ, new_amp = [], []
    for sel, key in groups:
        u, occs, allowed = _block_unitary(kind, key, float(theta), float(phi), dims, truncation == "project")
        cols = u[:, pos[sel]] * state.amps[sel][None, :]
        if truncation == "error" and not allowed.all():
            if np.sum(np.abs(cols[~allowed]) ** 2) > LEAK_TOL:
                raise FockError("truncation exceeded")
        idx = np.nonzero(allowed)[0]
        g = sel.size
        rows = np.tile(state.occ[sel], (idx.size, 1))
        rows[:, modes] = np.repeat(occs[idx], g, axis=0)
        new_occ.append(rows)
        new_amp.append(cols[idx].reshape(-1))
    if len(new_occ) == 1:
        occ, amps = _merge_rows(new_occ[0], new_amp[0])
    else:
        occ, amps = _merge_rows(np.concatenate(new_occ), np.concatenate(new_amp))
    rest = np.nonzero(~active)[0]
    if rest.size:
        occ = np.concatenate([state.occ[rest], occ])
        amps = np.concatenate([state.amps[rest], amps])
    if occ.shape[0] == 0:
        raise FockError("state annihilated by truncation")
    return SparseFockState._raw(occ, amps, state.truncation, state.capped_events)


# --------------------------------------------------------------------------
# gates


def apply_beamsplitter(state: SparseFockState, a: int, b: int, theta: float, phi: float = np.pi / 2,
                       truncation: str = "error") -> SparseFockState:
    """exp(-i theta (e^{i phi} m_a m_b^dag + h.c.)), exact on each n_a + n_b block."""
    if a == b:
        raise FockError("beamsplitter modes must differ")
    if theta == 0:
        return state.copy()
    na = state.occ[:, a].astype(np.int64)
    nb = state.occ[:, b].astype(np.int64)
    s = na + nb
    return _apply_blocks(state, "bs", (a, b), s[:, None], na, s > 0, theta, phi, truncation)


def apply_three_mode(state: SparseFockState, a: int, b: int, c: int, theta: float, phi: float = 0.0,
                     truncation: str = "error") -> SparseFockState:
    """exp(-i theta (e^{i phi} m_a m_b m_c^dag + h.c.)), exact on each invariant chain."""
    if len({a, b, c}) != 3:
        raise FockError("three-mode gate modes must be distinct")
    if theta == 0:
        return state.copy()
    na = state.occ[:, a].astype(np.int64)
    nb = state.occ[:, b].astype(np.int64)
    nc = state.occ[:, c].astype(np.int64)
    keys = np.stack([na + nc, nb + nc], axis=1)
    active = np.minimum(keys[:, 0], keys[:, 1]) > 0
    return _apply_blocks(state, "tm", (a, b, c), keys, nc, active, theta, phi, truncation)


def cz_gate(state: SparseFockState, a: int, b: int, ancilla: int, truncation: str = "error",
            check: bool = True) -> SparseFockState:
    """CZ on (a, b) via a full three-mode cycle through the ancilla."""
    if check and np.any(state.occ[:, ancilla] != 0):
        raise FockError("ancilla not in vacuum")
    return apply_three_mode(state, a, b, ancilla, np.pi, 0.0, truncation)


def controlled_swap(state: SparseFockState, ctrl: int, a: int, b: int, ancilla: int,
                    truncation: str = "error", check: bool = True) -> SparseFockState:
    """Fredkin gate on the <=1-excitation subspace of (a, b)."""
    if len({ctrl, a, b, ancilla}) != 4:
        raise FockError("controlled-SWAP modes must be distinct")
    if check:
        if np.any(state.occ[:, ancilla] != 0):
            raise FockError("ancilla not in vacuum")
        if np.any(state.occ[:, a].astype(int) + state.occ[:, b] >= 2):
            raise FockError("controlled-SWAP invalid for ≥2 phonons in swap modes")
    st = apply_beamsplitter(state, a, b, -np.pi / 4, np.pi / 2, truncation)
    st = cz_gate(st, ctrl, b, ancilla, truncation, check=False)
    return apply_beamsplitter(st, a, b, np.pi / 4, np.pi / 2, truncation)


def phase_shift(state: SparseFockState, mode: int, phi: float) -> SparseFockState:
    out = state.copy()
    out.amps = out.amps * np.exp(1j * phi * out.occ[:, mode])
    return out


def dual_rail_rotation(state: SparseFockState, a: int, b: int, axis: str, angle: float) -> SparseFockState:
    """Bloch rotation exp(-i angle sigma_axis / 2) on the rail pair, |10> = |0>_L."""
    if axis not in ("X", "Y"):
        raise FockError("dual-rail rotation axis must be X or Y")
    if np.any(state.occ[:, a].astype(int) + state.occ[:, b] != 1):
        raise FockError("dual-rail subspace violated")
    return apply_beamsplitter(state, a, b, angle / 2.0, 0.0 if axis == "X" else np.pi / 2)


def qubit_hadamard(state: SparseFockState, mode: int) -> SparseFockState:
    """Hadamard on a single-rail {|0>, |1>} mode.

    Measurement-basis bookkeeping only (used to read |+-> encoded bits);
    this is not one of the engineered phonon gates.
    """
    n = state.occ[:, mode]
    if np.any(n > 1):
        raise FockError("Hadamard needs occupation <= 1")
    occ0 = state.occ.copy()
    occ0[:, mode] = 0
    occ1 = state.occ.copy()
    occ1[:, mode] = 1
    s = 1.0 / np.sqrt(2.0)
    sign = np.where(n == 1, -1.0, 1.0)
    occ = np.concatenate([occ0, occ1])
    amps = np.concatenate([state.amps * s, state.amps * s * sign])
    occ, amps = _merge_rows(occ, amps)
    out = SparseFockState(occ, amps, state.truncation)
    out.capped_events = state.capped_events
    return out


def apply_gate(state: SparseFockState, gate: GateSpec, truncation: str = "error",
               check: bool = True) -> SparseFockState:
    t = gate.targets
    if gate.kind == "beamsplitter":
        return apply_beamsplitter(state, t[0], t[1], gate.theta, gate.phi, truncation)
    if gate.kind == "three_mode":
        return apply_three_mode(state, t[0], t[1], t[2], gate.theta, gate.phi, truncation)
    if gate.kind == "cz":
        return cz_gate(state, t[0], t[1], t[2], truncation, check)
    if gate.kind == "cswap":
        return controlled_swap(state, t[0], t[1], t[2], t[3], truncation, check)
    if gate.kind == "phase":
        return phase_shift(state, t[0], gate.theta)
    return dual_rail_rotation(state, t[0], t[1], gate.axis, gate.theta)


def apply_sequence(state: SparseFockState, gates: Iterable[GateSpec], truncation: str = "error",
                   check: bool = True) -> SparseFockState:
    for g in gates:
        state = apply_gate(state, g, truncation, check)
    return state


# --------------------------------------------------------------------------
# noise


NOISE_KINDS = ("loss", "dephasing", "heating")


@dataclass(frozen=True)
class NoiseChannel:
    kind: str
    eps: float

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise FockError(f"unknown noise channel {self.kind!r}")
        if not 0.0 <= self.eps <= 1.0:
            raise FockError("noise probability must lie in [0, 1]")


def event_survival(state: SparseFockState, channel: NoiseChannel, mode: int,
                   heating_scope: str = "occupied") -> float:
    """Probability that the channel does nothing to ``mode`` in this step."""
    if channel.eps == 0:
        return 1.0
    if channel.kind == "loss":
        p = np.abs(state.amps) ** 2
        return float(np.sum(p * (1.0 - channel.eps) ** state.occ[:, mode]) / np.sum(p))
    if channel.kind == "heating" and heating_scope == "occupied" and not state.occ[:, mode].any():
        return 1.0
    if channel.kind == "dephasing" and not state.occ[:, mode].any():
        return 1.0
    return 1.0 - channel.eps


def apply_no_event(state: SparseFockState, channel: NoiseChannel, mode: int) -> SparseFockState:
    """Conditional state given that no event occurred (loss has back-action)."""
    if channel.kind != "loss" or channel.eps == 0:
        return state
    out = state.copy()
    out.amps = out.amps * (1.0 - channel.eps) ** (out.occ[:, mode] / 2.0)
    if channel.eps == 1.0:
        keep = out.occ[:, mode] == 0
        out.occ, out.amps = out.occ[keep], out.amps[keep]
    return out.normalize()


def apply_event(state: SparseFockState, channel: NoiseChannel, mode: int, rng) -> SparseFockState:
    """Conditional state given that an event occurred on ``mode``."""
    eps = channel.eps
    n = state.occ[:, mode].astype(np.int64)
    if channel.kind == "dephasing":
        out = state.copy()
        out.amps = out.amps * np.where(n % 2 == 1, -1.0, 1.0)
        return out
    if channel.kind == "heating":
        # truncated raising operator: components already at the cap are
        # removed (and counted); if nothing can be raised the state is kept
        cap = state.truncation[mode] - 1
        room = n < cap
        if not room.any():
            out = state.copy()
            out.capped_events += 1
            return out
        out = SparseFockState._raw(state.occ[room].copy(), state.amps[room] * np.sqrt(n[room] + 1.0),
                                   state.truncation, state.capped_events + int(not room.all()))
        out.occ[:, mode] += 1
        return out.normalize()
    # loss: k phonons lost with weight C(n, k) eps^k (1 - eps)^(n - k), k >= 1
    from scipy.special import comb

    p = np.abs(state.amps) ** 2
    nmax = int(n.max())
    weights = np.array([np.sum(p * comb(n, k) * eps ** k * (1 - eps) ** np.maximum(n - k, 0) * (n >= k))
                        for k in range(1, nmax + 1)])
    if weights.sum() <= 0:
        return state
    k = 1 + int(rng.choice(nmax, p=weights / weights.sum()))
    keep = n >= k
    out = SparseFockState(state.occ[keep].copy(), state.amps[keep], state.truncation)
    nk = n[keep]
    out.amps = out.amps * np.sqrt(comb(nk, k) * eps ** k * (1 - eps) ** (nk - k))
    out.occ[:, mode] -= k
    out.capped_events = state.capped_events
    out._merge()
    return out.normalize()


def noise_event(state: SparseFockState, channel: NoiseChannel, mode: int, rng,
                heating_scope: str = "occupied") -> SparseFockState:
    surv = event_survival(state, channel, mode, heating_scope)
    if surv >= 1.0 or rng.random() < surv:
        return apply_no_event(state, channel, mode)
    return apply_event(state, channel, mode, rng)


def apply_noise_step(state: SparseFockState, channels: Sequence[NoiseChannel], modes, rng,
                     heating_scope: str = "occupied") -> SparseFockState:
    """One Monte Carlo trajectory step: each channel acts on each mode in scope."""
    for ch in channels:
        for m in sorted(int(x) for x in modes):
            state = noise_event(state, ch, m, rng, heating_scope)
    return state


# --------------------------------------------------------------------------
# comparison and dense oracle


def state_fidelity(a: SparseFockState, b: SparseFockState) -> float:
    """|<a|b>|^2 over the sparse terms."""
    if a.n_modes != b.n_modes:
        raise FockError("register mismatch")
    m = a.n_modes
    va = np.ascontiguousarray(a.occ).view(np.dtype((np.void, m))).ravel()
    vb = np.ascontiguousarray(b.occ).view(np.dtype((np.void, m))).ravel()
    _, ia, ib = np.intersect1d(va, vb, assume_unique=True, return_indices=True)
    ov = np.sum(np.conj(a.amps[ia]) * b.amps[ib])
    return float(abs(ov) ** 2 / (a.norm() ** 2 * b.norm() ** 2))


def reduced_fidelity(ref: SparseFockState, state: SparseFockState, keep) -> float:
    """<ref_K| Tr_rest(|state><state|) |ref_K> on the kept modes K.

    ``ref`` must be a product of a pure state on K and a single
    configuration on the remaining modes (the ideal query output has every
    internal mode empty), so its restriction ref_K is well defined.
    """
    if ref.n_modes != state.n_modes:
        raise FockError("register mismatch")
    keep = np.asarray(sorted(int(k) for k in keep))
    rest = np.setdiff1d(np.arange(ref.n_modes), keep)
    if rest.size and np.unique(ref.occ[:, rest], axis=0).shape[0] != 1:
        raise FockError("reference is entangled with the traced modes")
    k = keep.size
    rk = np.ascontiguousarray(ref.occ[:, keep]).view(np.dtype((np.void, k))).ravel()
    order = np.argsort(rk)
    rk, ramps = rk[order], ref.amps[order] / ref.norm()
    sk = np.ascontiguousarray(state.occ[:, keep]).view(np.dtype((np.void, k))).ravel()
    pos = np.clip(np.searchsorted(rk, sk), 0, len(rk) - 1)
    hit = rk[pos] == sk
    if not hit.any():
        return 0.0
    contrib = np.conj(ramps[pos[hit]]) * state.amps[hit] / state.norm()
    if rest.size:
        env = np.ascontiguousarray(state.occ[hit][:, rest]).view(np.dtype((np.void, rest.size))).ravel()
        _, inv = np.unique(env, return_inverse=True)
        inv = inv.ravel()
        sums = (np.bincount(inv, weights=contrib.real) + 1j * np.bincount(inv, weights=contrib.imag))
    else:
        sums = np.array([contrib.sum()])
    return float(np.sum(np.abs(sums) ** 2))


def _ladder(d: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, d)), 1).astype(np.complex128)


def _embed(op: np.ndarray, mode: int, dims) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for m, d in enumerate(dims):
        out = np.kron(out, op if m == mode else np.eye(d))
    return out


def dense_gate(gate: GateSpec, dims) -> np.ndarray:
    """Explicit unitary of a single gate on the truncated register."""
    dims = tuple(int(d) for d in dims)
    t = gate.targets
    a = [_embed(_ladder(d), m, dims) for m, d in enumerate(dims)]
    if gate.kind == "beamsplitter":
        g = np.exp(1j * gate.phi) * a[t[0]] @ a[t[1]].conj().T
        return linalg.expm(-1j * gate.theta * (g + g.conj().T))
    if gate.kind in ("three_mode", "cz"):
        theta, phi = (gate.theta, gate.phi) if gate.kind == "three_mode" else (np.pi, 0.0)
        g = np.exp(1j * phi) * a[t[0]] @ a[t[1]] @ a[t[2]].conj().T
        return linalg.expm(-1j * theta * (g + g.conj().T))
    if gate.kind == "cswap":
        ctrl, x, y, anc = t
        u1 = dense_gate(GateSpec("beamsplitter", (x, y), -np.pi / 4, np.pi / 2), dims)
        u2 = dense_gate(GateSpec("cz", (ctrl, y, anc)), dims)
        u3 = dense_gate(GateSpec("beamsplitter", (x, y), np.pi / 4, np.pi / 2), dims)
        return u3 @ u2 @ u1
    if gate.kind == "phase":
        n = np.real(np.diag(a[t[0]].conj().T @ a[t[0]]))
        return np.diag(np.exp(1j * gate.theta * np.round(n)))
    phi = 0.0 if gate.axis == "X" else np.pi / 2
    return dense_gate(GateSpec("beamsplitter", t, gate.theta / 2.0, phi), dims)


def dense_oracle(n_modes: int, truncation, gates: Sequence[GateSpec]) -> np.ndarray:
    """Full unitary of a gate sequence on a small register (dimension <= 4096)."""
    dims = _trunc(n_modes, truncation)
    dim = int(np.prod(dims))
    if dim > MAX_DENSE_DIM:
        raise FockError("dimension overflow")
    u = np.eye(dim, dtype=np.complex128)
    for g in gates:
        u = dense_gate(g, dims) @ u
    return u


def random_state(n_modes: int, truncation, rng, n_terms: int = 8, max_total: int | None = None,
                 modes_limit: Mapping | None = None) -> SparseFockState:
    """Random normalized superposition of configurations (test helper).

    ``max_total`` bounds the total occupation of each configuration;
    ``modes_limit`` maps mode -> maximum occupation.
    """
    dims = _trunc(n_modes, truncation)
    rows = []
    tries = 0
    while len(rows) < n_terms and tries < 100 * n_terms:
        tries += 1
        row = np.array([rng.integers(0, d) for d in dims], dtype=np.uint8)
        if max_total is not None and int(row.sum()) > max_total:
            continue
        if modes_limit and any(row[m] > lim for m, lim in modes_limit.items()):
            continue
        rows.append(row)
    if not rows:
        rows = [np.zeros(n_modes, np.uint8)]
    amps = rng.normal(size=len(rows)) + 1j * rng.normal(size=len(rows))
    st = SparseFockState(np.array(rows), amps, dims)
    st._merge()
    return st.normalize()
