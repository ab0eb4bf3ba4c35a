"""Bucket-brigade QRAM built from phonon-mode routers.

Mode layout for depth n (N = 2**n leaves), allocated in this order:

    address[0..n-1], bus, pointer, root top,
    routing mode of each router (heap order 1..N-1),
    top modes of the non-root routers (= outputs of the upper routers),
    leaf modes L_j, parking modes P_j, data modes D_j, ancilla pool (N modes)

giving n + 6N modes.  Router k (heap index, root = 1) sends bit 0 left to
child 2k and bit 1 right to 2k+1, so leaf j is the address read MSB-first.

Every qubit travels in single-rail encoding: |0> is vacuum, |1> one phonon.
A router stage is a CSWAP (control = routing mode, top <-> right) followed by
a SWAP (top -> left); with the routing qubit in |1> the SWAP acts on two
empty modes and with |0> the CSWAP is trivial.  Upstream routing and
extraction apply the exact inverses in reverse order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .fock import (
    GateSpec,
    NoiseChannel,
    SparseFockState,
    apply_event,
    apply_gate,
    apply_no_event,
    event_survival,
    noise_event,
    qubit_hadamard,
    reduced_fidelity,
    state_fidelity,
    swap_spec,
)

SCHEMES = ("classical", "readonly", "quantum")
MAX_DEPTH = 6


class QramError(ValueError):
    pass


# --------------------------------------------------------------------------
# tree


@dataclass(frozen=True)
class Router:
    node: int
    level: int
    routing: int
    top: int
    left: int
    right: int


@dataclass(frozen=True)
class QramTree:
    depth: int
    address: tuple
    bus: int
    pointer: int
    routers: tuple
    leaves: tuple
    parking: tuple
    data: tuple
    ancillas: tuple
    n_modes: int
    module_of: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return 2 ** self.depth

    @property
    def root_top(self) -> int:
        return self.routers[0].top

    def routers_at(self, level: int) -> list:
        return [r for r in self.routers if r.level == level]

    def path(self, leaf: int) -> list:
        """Routers on the root-to-leaf path, root first."""
        node = leaf + self.N
        out = []
        while node > 1:
            node //= 2
            out.append(self.routers[node - 1])
        return out[::-1]

    def internal_modes(self) -> np.ndarray:
        """Modes that must end every ideal query empty."""
        modes = {self.root_top}
        for r in self.routers:
            modes.update((r.routing, r.top, r.left, r.right))
        modes.update(self.leaves)
        modes.update(self.parking)
        modes.update(self.ancillas)
        return np.array(sorted(modes))


def mode_count(depth: int) -> int:
    return depth + 6 * 2 ** depth


def build_tree(depth: int, module_levels: int | None = None) -> QramTree:
    """Allocate modes for a depth-``depth`` router tree.

    ``module_levels`` optionally annotates which routers share a control
    transmon (subtrees of that many levels); it has no dynamical effect.
    """
    if not isinstance(depth, (int, np.integer)) or not 1 <= depth <= MAX_DEPTH:
        raise QramError(f"depth must be an integer in [1, {MAX_DEPTH}]")
    depth = int(depth)
    n_leaf = 2 ** depth
    nxt = 0

    def take(k):
        nonlocal nxt
        out = tuple(range(nxt, nxt + k))
        nxt += k
        return out

    address = take(depth)
    (bus,) = take(1)
    (pointer,) = take(1)
    (root_top,) = take(1)
    routing = take(n_leaf - 1)
    child_tops = take(n_leaf - 2)  # tops of heap nodes 2..N-1
    leaves = take(n_leaf)
    parking = take(n_leaf)
    data = take(n_leaf)
    ancillas = take(n_leaf)

    def top_of(node):
        return root_top if node == 1 else child_tops[node - 2]

    routers = []
    for node in range(1, n_leaf):
        level = node.bit_length() - 1
        if level < depth - 1:
            left, right = top_of(2 * node), top_of(2 * node + 1)
        else:
            left, right = leaves[2 * node - n_leaf], leaves[2 * node + 1 - n_leaf]
        routers.append(Router(node, level, routing[node - 1], top_of(node), left, right))
    module_of = {}
    if module_levels:
        for r in routers:
            module_of[r.node] = (r.level // module_levels, r.node >> (r.level - (r.level // module_levels) * module_levels))
    tree = QramTree(depth, address, bus, pointer, tuple(routers), leaves, parking, data, ancillas, nxt, module_of)
    assert tree.n_modes == mode_count(depth)
    return tree


# --------------------------------------------------------------------------
# database


@dataclass(frozen=True)
class Database:
    """``variant`` is classical | readonly (bit values) or quantum (qubit states)."""
    variant: str
    values: tuple

    def __post_init__(self):
        if self.variant not in ("classical", "readonly", "quantum"):
            raise QramError(f"unknown database variant {self.variant!r}")
        vals = []
        for v in self.values:
            if self.variant == "quantum":
                if isinstance(v, (int, np.integer)) and v in (0, 1):
                    v = (1.0, 0.0) if v == 0 else (0.0, 1.0)
                a, b = complex(v[0]), complex(v[1])
                nrm = math.sqrt(abs(a) ** 2 + abs(b) ** 2)
                if nrm == 0:
                    raise QramError("data qubit has zero norm")
                vals.append((a / nrm, b / nrm))
            else:
                if int(v) not in (0, 1):
                    raise QramError("classical data must be bits")
                vals.append(int(v))
        object.__setattr__(self, "values", tuple(vals))

    def __len__(self):
        return len(self.values)

    def qubit(self, j: int) -> tuple:
        v = self.values[j]
        if self.variant == "quantum":
            return v
        return (1.0 + 0j, 0j) if v == 0 else (0j, 1.0 + 0j)


# --------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class Slot:
    gates: tuple
    stage: str

    @property
    def modes(self) -> tuple:
        return tuple(sorted({m for g in self.gates for m in g.targets}))

    def inverse(self, stage: str | None = None) -> "Slot":
        return Slot(tuple(g.inverse() for g in self.gates), stage or self.stage)


@dataclass(frozen=True)
class QuerySchedule:
    scheme: str
    slots: tuple

    def __post_init__(self):
        for s in self.slots:
            seen = [m for g in s.gates for m in g.targets]
            if len(seen) != len(set(seen)):
                raise QramError("mode targeted twice in one slot")

    @property
    def gates(self) -> list:
        return [g for s in self.slots for g in s.gates]

    def gate_counts(self) -> dict:
        out = {}
        for g in self.gates:
            key = "swap" if g.kind == "beamsplitter" else g.kind
            out[key] = out.get(key, 0) + 1
        out["total"] = sum(v for k, v in out.items())
        return out

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    def stages(self) -> list:
        """Stage labels in order, consecutive duplicates collapsed."""
        out = []
        for s in self.slots:
            if not out or out[-1] != s.stage:
                out.append(s.stage)
        return out

    def reverse(self) -> "QuerySchedule":
        return QuerySchedule(self.scheme, tuple(s.inverse() for s in reversed(self.slots)))


def _reverse_slots(slots, stage):
    return [s.inverse(stage) for s in reversed(slots)]


def _route_level(tree: QramTree, level: int, stage: str) -> list:
    routers = tree.routers_at(level)
    cs = tuple(GateSpec("cswap", (r.routing, r.top, r.right, tree.ancillas[i]))
               for i, r in enumerate(routers))
    sw = tuple(swap_spec(r.top, r.left) for r in routers)
    return [Slot(cs, stage), Slot(sw, stage)]


def _descend(tree: QramTree, source: int, levels: int, stage: str) -> list:
    slots = [Slot((swap_spec(source, tree.root_top),), stage)]
    for lvl in range(levels):
        slots += _route_level(tree, lvl, stage)
    return slots


def address_ingress(tree: QramTree) -> list:
    slots = []
    for k, mode in enumerate(tree.address):
        slots += _descend(tree, mode, k, "address_in")
        slots.append(Slot(tuple(swap_spec(r.top, r.routing) for r in tree.routers_at(k)), "address_in"))
    return slots


def schedule_query(tree: QramTree, scheme: str, database: Database | None = None) -> QuerySchedule:
    """Full query: address in, bus/pointer work, address out.

    The read-only scheme bakes the phase program into the schedule and so
    needs the database; the other schemes act on data stored in modes.
    """
    if scheme not in SCHEMES:
        raise QramError(f"unknown scheme {scheme!r}")
    fwd = address_ingress(tree)
    if scheme in ("classical", "readonly"):
        down = _descend(tree, tree.bus, tree.depth, "bus_down")
        if scheme == "classical":
            data = [Slot(tuple(GateSpec("cz", (tree.data[j], tree.leaves[j], tree.ancillas[j]))
                               for j in range(tree.N)), "data")]
        else:
            if database is None:
                raise QramError("read-only scheme needs the database to program phases")
            if len(database) != tree.N:
                raise QramError("database length must equal N")
            ph = tuple(GateSpec("phase", (tree.leaves[j],), np.pi)
                       for j in range(tree.N) if database.values[j] == 1)
            data = [Slot(ph, "data")]
        middle = down + data + _reverse_slots(down, "bus_up")
    else:
        down = _descend(tree, tree.pointer, tree.depth, "pointer_down")
        route = down[1:]
        park = Slot(tuple(swap_spec(tree.leaves[j], tree.parking[j]) for j in range(tree.N)), "pointer_down")
        extract = Slot(tuple(GateSpec("cswap", (tree.parking[j], tree.data[j], tree.leaves[j], tree.ancillas[j]))
                             for j in range(tree.N)), "data")
        data_up = _reverse_slots(route, "data_up") + [Slot((swap_spec(tree.bus, tree.root_top).inverse(),),
                                                           "data_up")]
        ptr_up = [park.inverse("pointer_up")] + _reverse_slots(down, "pointer_up")
        middle = down + [park, extract] + data_up + ptr_up
    back = _reverse_slots(fwd, "address_out")
    return QuerySchedule(scheme, tuple(fwd + middle + back))


def expected_gate_total(depth: int, scheme: str, ones: int = 0) -> int:
    """Closed-form gate tally of :func:`schedule_query`."""
    n, N = depth, 2 ** depth
    addr = 3 * (N - 1) - n           # sum_k [1 + 2 (2^k - 1) + 2^k]
    desc = 2 * N - 1                 # 1 + 2 (N - 1)
    if scheme == "classical":
        return 2 * addr + 2 * desc + N
    if scheme == "readonly":
        return 2 * addr + 2 * desc + ones
    # pointer down and up, park, extract, unpark, data route up plus the bus swap
    return 2 * addr + 9 * N - 3


def expected_slot_total(depth: int, scheme: str) -> int:
    n = depth
    addr = n * n + n
    desc = 1 + 2 * n
    if scheme in ("classical", "readonly"):
        return 2 * addr + 2 * desc + 1
    return 2 * addr + 6 * n + 6


# --------------------------------------------------------------------------
# state preparation


def _address_amplitudes(tree: QramTree, address) -> dict:
    """Normalise an address spec to {leaf index: amplitude}.

    Accepts a bitstring, an int, a length-N amplitude vector or a mapping
    from bitstrings/ints to amplitudes.
    """
    n = tree.depth
    if isinstance(address, str):
        address = {address: 1.0}
    elif isinstance(address, (int, np.integer)):
        address = {int(address): 1.0}
    if isinstance(address, Mapping):
        amps = {}
        for k, v in address.items():
            if isinstance(k, str):
                if len(k) != n or set(k) - {"0", "1"}:
                    raise QramError(f"address bitstring must have {n} binary digits")
                k = int(k, 2)
            if not 0 <= int(k) < tree.N:
                raise QramError("address out of range")
            amps[int(k)] = amps.get(int(k), 0) + complex(v)
    else:
        vec = np.asarray(address, dtype=np.complex128)
        if vec.shape != (tree.N,):
            raise QramError("address vector must have length N")
        amps = {j: complex(a) for j, a in enumerate(vec) if abs(a) > 0}
    nrm = math.sqrt(sum(abs(a) ** 2 for a in amps.values()))
    if nrm == 0:
        raise QramError("address state has zero norm")
    return {j: a / nrm for j, a in sorted(amps.items())}


def _bits(j: int, n: int) -> list:
    return [(j >> (n - 1 - k)) & 1 for k in range(n)]


def _product(parts) -> list:
    """Tensor product of lists of ({mode: n}, amplitude)."""
    out = [({}, 1.0 + 0j)]
    for part in parts:
        out = [({**c1, **c2}, a1 * a2) for c1, a1 in out for c2, a2 in part if a1 * a2 != 0]
    return out


def _data_parts(tree: QramTree, database: Database, scheme: str, skip=None) -> list:
    if scheme == "readonly":
        return []
    parts = []
    for j in range(tree.N):
        if j == skip:
            continue
        a, b = database.qubit(j)
        part = [(c, v) for c, v in (({tree.data[j]: 0}, a), ({tree.data[j]: 1}, b)) if v != 0]
        parts.append(part)
    return parts


def prepare_state(tree: QramTree, database: Database, address, scheme: str, truncation: int = 2,
                  bus=None) -> SparseFockState:
    """Initial register: address, bus (|+> for copy schemes), pointer, data."""
    if scheme not in SCHEMES:
        raise QramError(f"unknown scheme {scheme!r}")
    if len(database) != tree.N:
        raise QramError("database length must equal N")
    if scheme == "classical" and database.variant == "quantum":
        raise QramError("the copy scheme needs classical data")
    amps = _address_amplitudes(tree, address)
    addr = [({m: b for m, b in zip(tree.address, _bits(j, tree.depth))}, a) for j, a in amps.items()]
    if bus is None:
        bus = (1.0, 0.0) if scheme == "quantum" else (1 / math.sqrt(2), 1 / math.sqrt(2))
    parts = [addr, [(c, v) for c, v in (({tree.bus: 0}, bus[0]), ({tree.bus: 1}, bus[1])) if v != 0]]
    if scheme == "quantum":
        parts.append([({tree.pointer: 1}, 1.0)])
    parts += _data_parts(tree, database, scheme)
    return SparseFockState.from_terms(_product(parts), tree.n_modes, truncation)


def expected_output(tree: QramTree, database: Database, address, scheme: str, truncation: int = 2,
                    decoded: bool = True) -> SparseFockState:
    """Analytic query output sum_j alpha_j |j>|D_j>.

    For the copy schemes the bus holds D_j (after decoding |+-> if
    ``decoded``) and the database is untouched.  For the quantum scheme the
    bus holds the extracted qubit, entry j is left empty and the pointer is
    back in |1>.
    """
    amps = _address_amplitudes(tree, address)
    terms = []
    for j, alpha in amps.items():
        addr = [({m: b for m, b in zip(tree.address, _bits(j, tree.depth))}, alpha)]
        a, b = database.qubit(j)
        if scheme != "quantum" and not decoded:
            s = 1 / math.sqrt(2)
            a, b = s, s * (1 if database.values[j] == 0 else -1)
        bus = [(c, v) for c, v in (({tree.bus: 0}, a), ({tree.bus: 1}, b)) if v != 0]
        parts = [addr, bus]
        if scheme == "quantum":
            parts.append([({tree.pointer: 1}, 1.0)])
            parts += _data_parts(tree, database, scheme, skip=j)
        else:
            parts += _data_parts(tree, database, scheme)
        terms += _product(parts)
    return SparseFockState.from_terms(terms, tree.n_modes, truncation)


# --------------------------------------------------------------------------
# execution


@dataclass
class QueryResult:
    state: SparseFockState | None = None
    fidelity: float | None = None
    stderr: float | None = None
    trials: int = 0
    gate_counts: dict = field(default_factory=dict)
    slots: int = 0
    disentangled: bool | None = None
    max_occupation: int | None = None
    capped_events: int = 0


def execute(schedule: QuerySchedule, state: SparseFockState, check: bool = True,
            truncation: str = "error", max_occupation: int | None = 1) -> tuple[SparseFockState, int]:
    """Apply every slot; optionally assert the single-phonon bound after each."""
    peak = state.max_occupation()
    for slot in schedule.slots:
        for g in slot.gates:
            state = apply_gate(state, g, truncation, check)
        occ = state.max_occupation()
        peak = max(peak, occ)
        if max_occupation is not None and occ > max_occupation:
            raise QramError(f"mode occupation {occ} exceeds {max_occupation} during the query")
    return state, peak


def disentangled(tree: QramTree, state: SparseFockState) -> bool:
    """True if every configuration leaves all router/leaf/ancilla modes empty."""
    return not state.occ[:, tree.internal_modes()].any()


def run_ideal_query(tree: QramTree, database: Database, address, scheme: str, decode: bool = True,
                    state: SparseFockState | None = None) -> QueryResult:
    """Noise-free query; the copy schemes' bus is decoded from |+-> when ``decode``."""
    sched = schedule_query(tree, scheme, database if scheme == "readonly" else None)
    if state is None:
        state = prepare_state(tree, database, address, scheme)
    out, peak = execute(sched, state)
    if decode and scheme != "quantum":
        out = qubit_hadamard(out, tree.bus)
    return QueryResult(out, 1.0, 0.0, 1, sched.gate_counts(), sched.n_slots, disentangled(tree, out), peak)


def write_quantum(tree: QramTree, database: Database, address, data_qubit) -> QueryResult:
    """Deposit ``data_qubit`` at the addressed entry by running a read backwards.

    The addressed entries must hold |0>; a read followed by this write is
    the identity.
    """
    if database.variant != "quantum":
        database = Database("quantum", database.values)
    amps = _address_amplitudes(tree, address)
    for j in amps:
        if abs(database.qubit(j)[1]) > 1e-12:
            raise QramError("write target entry must hold |0>")
    state = prepare_state(tree, database, address, "quantum", bus=tuple(data_qubit))
    sched = schedule_query(tree, "quantum").reverse()
    out, peak = execute(sched, state)
    return QueryResult(out, 1.0, 0.0, 1, sched.gate_counts(), sched.n_slots, disentangled(tree, out), peak)


def reduced_purity(state: SparseFockState, modes) -> float:
    """Purity of the reduced state on ``modes``."""
    modes = np.asarray(sorted(modes))
    rest = np.setdiff1d(np.arange(state.n_modes), modes)
    sub = state.occ[:, modes]
    env = state.occ[:, rest]
    _, si = np.unique(sub, axis=0, return_inverse=True)
    _, ei = np.unique(env, axis=0, return_inverse=True)
    c = np.zeros((si.max() + 1, ei.max() + 1), np.complex128)
    np.add.at(c, (si.ravel(), ei.ravel()), state.amps)
    c /= np.linalg.norm(c)
    s = np.linalg.svd(c, compute_uv=False)
    return float(np.sum(s ** 4))


def verify_eq1(tree: QramTree, database: Database, scheme: str, n_random: int = 10, rng=None,
               addresses=None) -> float:
    """Max 1 - fidelity of the ideal query against the analytic output.

    Runs every computational-basis address, then ``n_random`` random address
    superpositions (or the explicit ``addresses`` list instead of both).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if addresses is None:
        addresses = list(range(tree.N))
        for _ in range(n_random):
            addresses.append(rng.normal(size=tree.N) + 1j * rng.normal(size=tree.N))
    worst = 0.0
    for addr in addresses:
        res = run_ideal_query(tree, database, addr, scheme)
        if not res.disentangled:
            return 1.0
        ref = expected_output(tree, database, addr, scheme)
        worst = max(worst, 1.0 - state_fidelity(ref, res.state))
    return worst


# --------------------------------------------------------------------------
# noisy trajectories


@dataclass(frozen=True)
class _Event:
    slot: int
    channel: NoiseChannel
    mode: int


def _slot_events(slot: Slot, channels, index: int) -> list:
    return [_Event(index, ch, m) for ch in channels for m in slot.modes]


def _noisy_tail(schedule, state, channels, rng, start_slot, heating_scope):
    for t in range(start_slot, schedule.n_slots):
        slot = schedule.slots[t]
        for g in slot.gates:
            state = apply_gate(state, g, "project", False)
        for ev in _slot_events(slot, channels, t):
            state = noise_event(state, ev.channel, ev.mode, rng, heating_scope)
    return state


def simulate_trajectories(schedule: QuerySchedule, initial: SparseFockState, ideal: SparseFockState,
                          channels: Sequence[NoiseChannel], trials: int, seed: int, stream: int = 0,
                          heating_scope: str = "occupied", keep=None,
                          conditioned: bool = True) -> tuple[np.ndarray, int]:
    """Per-trajectory fidelity samples whose mean estimates the query fidelity.

    The event-free path is deterministic, so it is computed once together
    with each event's conditional survival probability s_e.  The first event
    is then sampled exactly from the cumulative survival; the trajectory
    restarts from the cached state at that event and is simulated explicitly
    afterwards.

    With ``conditioned`` every trajectory is forced to contain an event and
    its sample is S F_0 + (1 - S) F_traj, where S is the event-free
    probability and F_0 the event-free fidelity.  The mean is unchanged and
    the variance drops by roughly the event probability.  Fidelities are the
    full overlap, or taken on the ``keep`` modes after tracing out the rest.
    """
    pre, events, surv = [], [], []
    psi = initial
    for t, slot in enumerate(schedule.slots):
        for g in slot.gates:
            psi = apply_gate(psi, g, "project", False)
        pre.append(psi)
        for ev in _slot_events(slot, channels, t):
            events.append(ev)
            surv.append(event_survival(psi, ev.channel, ev.mode, heating_scope))
            psi = apply_no_event(psi, ev.channel, ev.mode)

    def fid(st):
        return state_fidelity(ideal, st) if keep is None else reduced_fidelity(ideal, st, keep)

    f_clean = fid(psi)
    cum = np.cumprod(surv) if surv else np.ones(0)
    s_all = float(cum[-1]) if cum.size else 1.0
    if s_all >= 1.0:
        return np.full(trials, f_clean), 0
    first_in_slot = {}
    for i, ev in enumerate(events):
        first_in_slot.setdefault(ev.slot, i)

    out = np.empty(trials)
    capped = 0
    for r in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, r)))
        u = rng.random()
        if conditioned:
            u = s_all + (1.0 - s_all) * u
        # cum is non-increasing; the first event is the first index with cum < u
        hit = int(np.searchsorted(-cum, -u, side="right"))
        if hit >= cum.size:
            if conditioned:
                hit = cum.size - 1
            else:
                out[r] = f_clean
                continue
        ev = events[hit]
        st = pre[ev.slot]
        for i in range(first_in_slot[ev.slot], hit):
            st = apply_no_event(st, events[i].channel, events[i].mode)
        st = apply_event(st, ev.channel, ev.mode, rng)
        for i in range(hit + 1, len(events)):
            if events[i].slot != ev.slot:
                break
            st = noise_event(st, events[i].channel, events[i].mode, rng, heating_scope)
        st = _noisy_tail(schedule, st, channels, rng, ev.slot + 1, heating_scope)
        capped += st.capped_events
        f = fid(st)
        out[r] = s_all * f_clean + (1.0 - s_all) * f if conditioned else f
    return out, capped


def output_modes(tree: QramTree) -> np.ndarray:
    """Address, bus, pointer and data modes: the register a query returns."""
    return np.array(sorted((*tree.address, tree.bus, tree.pointer, *tree.data)))


def noisy_query(tree: QramTree, database: Database, address, scheme: str, channels, trials: int,
                seed: int, stream: int = 0, heating_scope: str = "occupied", truncation: int = 2,
                register: str = "output") -> QueryResult:
    """Monte Carlo estimate of the query fidelity under per-slot noise.

    Noise acts after every slot on the modes that slot targets.  Gates act on
    the truncated space (generators projected onto it) without subspace
    checks, so corrupted states evolve physically instead of raising.  With
    ``register="output"`` the fidelity is taken on the address, bus, pointer
    and data modes after tracing out the router modes; ``"full"`` uses the
    overlap of the whole register.
    """
    if register not in ("output", "full"):
        raise QramError("register must be 'output' or 'full'")
    sched = schedule_query(tree, scheme, database if scheme == "readonly" else None)
    init = prepare_state(tree, database, address, scheme, truncation=truncation)
    ideal, _ = execute(sched, init, check=False, truncation="project", max_occupation=None)
    keep = output_modes(tree) if register == "output" else None
    fids, capped = simulate_trajectories(sched, init, ideal, list(channels), trials, seed, stream, heating_scope,
                                         keep)
    se = float(np.std(fids, ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return QueryResult(None, float(np.mean(fids)), se, trials, sched.gate_counts(), sched.n_slots, None, None,
                       capped)


def default_database(N: int, seed: int) -> Database:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(N,)))
    return Database("classical", tuple(int(b) for b in rng.integers(0, 2, N)))


def _sweep_cell(args):
    depth, eps, channel, trials, seed, scheme, heating_scope, stream = args
    tree = build_tree(depth)
    db = default_database(tree.N, seed)
    if scheme == "readonly":
        db = Database("readonly", db.values)
    addr = np.ones(tree.N) / math.sqrt(tree.N)
    res = noisy_query(tree, db, addr, scheme, [NoiseChannel(channel, eps)], trials, seed, stream, heating_scope)
    return {
        "depth": depth, "N": tree.N, "eps": eps, "channel": channel,
        "fidelity": res.fidelity, "stderr": res.stderr,
        "gates_total": res.gate_counts["total"], "slots": res.slots,
    }


def run_noisy_sweep(depths: Sequence[int], eps_list: Sequence[float], channels: Sequence[str], trials: int,
                    seed: int, scheme: str = "classical", heating_scope: str = "occupied",
                    workers: int = 1) -> list:
    """Rows (depth, N, eps, channel, fidelity, stderr, gates_total, slots).

    Each cell queries a uniform address superposition against a seeded random
    database.  Trajectory r of cell c draws from SeedSequence(seed,
    spawn_key=(c, r)), so results do not depend on ``workers``.
    """
    if trials < 100:
        raise QramError("at least 100 trials per cell")
    cells = []
    for ch in channels:
        for eps in eps_list:
            for depth in depths:
                cells.append((int(depth), float(eps), ch, int(trials), int(seed), scheme, heating_scope,
                              len(cells)))
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_cell, cells))
    return [_sweep_cell(c) for c in cells]


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    r2: float


def fit_log_scaling(N: Sequence[int], infidelity: Sequence[float]) -> ScalingFit:
    """Least-squares line of 1 - F against log2 N."""
    x = np.log2(np.asarray(N, dtype=float))
    res = stats.linregress(x, np.asarray(infidelity, dtype=float))
    return ScalingFit(float(res.slope), float(res.intercept), float(res.rvalue ** 2))
