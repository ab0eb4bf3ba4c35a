"""Command-line entry point: ``cqad <subcommand> [options]``.

Every file written through ``--out`` gets a ``<out>.manifest.json`` sibling
recording the subcommand, resolved config paths, seed, tool version, wall
clock and the sha256 of each output.  Output files themselves are
deterministic; only the manifest carries timing.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 collision
found by ``plan``, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_COLLISION, EXIT_NUMERICAL = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; we need 1 and no SystemExit."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:  # pragma: no cover - running from a source tree
        return "0+unknown"


# -- small parsers ---------------------------------------------------------------

def _range(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b, got {text!r}") from None
    return a, b


def _int_range(text: str) -> list[int]:
    if ":" in text:
        try:
            a, b = (int(x) for x in text.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a:b, got {text!r}") from None
        return list(range(a, b + 1))
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _grid(text: str) -> tuple[int, int]:
    try:
        r, c = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected RxC, got {text!r}") from None
    if r < 1 or c < 1:
        raise argparse.ArgumentTypeError("grid dimensions must be positive")
    return r, c


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _read_json(path):
    from .device import ConfigError
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _complex_in(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(float(v[0]), float(v[1]))
    return complex(float(v))


def _cplx_out(z: complex) -> list:
    return [float(z.real), float(z.imag)]


# -- output ------------------------------------------------------------------------

def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


class _Run:
    """Collects outputs and writes them plus the manifest."""

    def __init__(self, args, subcommand):
        self.args = args
        self.subcommand = subcommand
        self.start = time.perf_counter()
        self.configs = []
        self.written = {}

    def config(self, path):
        if path:
            self.configs.append(str(Path(path).resolve()))

    def emit(self, text: str, path=None):
        path = path or self.args.out
        if path is None:
            sys.stdout.write(text)
            return
        data = text.encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(data)
        self.written[str(Path(path).resolve())] = hashlib.sha256(data).hexdigest()

    def finish(self):
        if not self.written:
            return
        manifest = {
            "subcommand": self.subcommand,
            "config_paths": self.configs,
            "seed": self.args.seed,
            "version": _version(),
            "wall_clock_s": time.perf_counter() - self.start,
            "outputs": self.written,
        }
        first = next(iter(self.written))
        with open(first + ".manifest.json", "w", newline="\n") as fh:
            fh.write(_json_text(manifest))


# -- subcommands -----------------------------------------------------------------

def _load_device(run, path):
    from .device import ConfigError, load_config
    if not path:
        raise ConfigError("--config is required")
    run.config(path)
    return load_config(path)


def _load_drives(run, path):
    from .device import ConfigError, DriveTone
    run.config(path)
    data = _read_json(path)
    if isinstance(data, dict):
        data = data.get("drives", [])
    tones = []
    for i, d in enumerate(data):
        try:
            tones.append(DriveTone(float(d["omega_hz"]), _complex_in(d["amplitude_hz"]), str(d.get("label", i + 1))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"drives[{i}]: {exc}") from None
    if not tones:
        raise ConfigError("drive list is empty")
    return tones


def _couplings(device, drives, modes, stark):
    from .coupling import coupling_three_mode, coupling_two_mode, dressed_frame
    from .device import ConfigError
    frame = dressed_frame(device, drives, stark_method=stark)
    targets = [tuple(modes)] if modes else device.graph.sorted_pairs()
    if not targets:
        raise ConfigError("no target modes: pass --modes or list graph pairs")
    out = []
    for t in targets:
        if len(t) == 2:
            if len(drives) < 2:
                raise ConfigError("two-mode coupling needs two drives")
            c = coupling_two_mode(frame, t[0], t[1], drives[0].label, drives[1].label)
        elif len(t) == 3:
            c = coupling_three_mode(frame, t[0], t[1], t[2], drives[0].label)
        else:
            raise ConfigError("--modes takes two or three mode indices")
        out.append(c)
    return out


def _coupling_json(c) -> dict:
    return {"kind": c.kind, "modes": list(c.modes), "rate_hz_re": float(c.rate.real),
            "rate_hz_im": float(c.rate.imag), "beta": float(c.beta), "stark_shift_hz": float(c.stark_shift)}


def cmd_couple(args, run):
    device = _load_device(run, args.config)
    drives = _load_drives(run, args.drives)
    res = [_coupling_json(c) for c in _couplings(device, drives, args.modes, args.stark)]
    run.emit(_json_text(res[0] if len(res) == 1 else res))


def cmd_oracle(args, run):
    from .oracle import OracleParams, OracleTarget, fig3_device, oracle_rate_from_dynamics
    from .device import ConfigError
    if args.fig3 is not None:
        device, drives, target = fig3_device(args.fig3, args.kind)
    else:
        device = _load_device(run, args.config)
        drives = _load_drives(run, args.drives)
        if not args.modes:
            raise ConfigError("oracle needs --modes (or --fig3)")
        kind = "two_mode" if len(args.modes) == 2 else "three_mode"
        labels = tuple(d.label for d in drives[:2 if kind == "two_mode" else 1])
        target = OracleTarget(kind, tuple(args.modes), labels)
    analytic = _couplings(device, list(drives), target.modes, args.stark)[0]
    res = oracle_rate_from_dynamics(device, drives, target,
                                    OracleParams(transmon_levels=args.transmon_levels))
    out = _coupling_json(analytic)
    out.update(g_fit_hz=res.g_fit, fit_residual=res.fit_residual)
    run.emit(_json_text(out))


def _plan_json(plan, report) -> dict:
    return {
        "plan": {
            "tones": [{"omega_hz": t.omega, "amplitude_hz": _cplx_out(t.amplitude), "label": t.label}
                      for t in plan.tones],
            "couplings": [{"kind": k, "modes": list(m), "tones": list(tl)} for k, m, tl in plan.couplings],
            "compensation": plan.compensation,
            "rates_hz": [_cplx_out(r) for r in plan.rates],
        },
        "collisions": {
            "passed": report.passed,
            "tolerance_hz": report.tolerance,
            "collisions": [{"tones": list(c.tones), "kind": c.kind, "modes": list(c.modes),
                            "detuning_hz": c.detuning} for c in report.collisions],
        },
    }


def cmd_plan(args, run):
    from .device import ConfigError, DriveTone
    from .spectrum import check_drive_set, plan_three_mode_drive, plan_two_mode_drives
    device = _load_device(run, args.config)
    run.config(args.request)
    req = _read_json(args.request)
    try:
        kind, modes = req["kind"], [int(m) for m in req["modes"]]
        n_tot = int(req.get("n_tot", 2))
        anchors = req.get("anchors", {})
        if kind == "two_mode":
            if len(modes) != 2:
                raise ConfigError("two_mode request needs two modes")
            anchor = DriveTone(float(anchors["omega_hz"]), _complex_in(anchors["amplitude_hz"]), "1")
            plan = plan_two_mode_drives(device, modes[0], modes[1], anchor,
                                        _complex_in(anchors["amplitude2_hz"]), n_tot=n_tot)
        elif kind == "three_mode":
            if len(modes) != 3:
                raise ConfigError("three_mode request needs three modes")
            plan = plan_three_mode_drive(device, *modes, _complex_in(anchors["amplitude_hz"]), n_tot=n_tot)
        else:
            raise ConfigError(f"unknown request kind {kind!r}")
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"request: missing or malformed field {exc}") from None
    report = check_drive_set(device.spectrum, device.graph, plan, tolerance=req.get("tolerance_hz"))
    run.emit(_json_text(_plan_json(plan, report)))
    return EXIT_OK if report.passed else EXIT_COLLISION


def cmd_fidelity_map(args, run):
    from .fidelity import fig3_inputs, infidelity_map
    base = fig3_inputs(1.0, 1.0, delta_nu=args.delta_nu)
    m = infidelity_map(args.kappa_range, args.gamma_range, args.grid, args.gate, base, args.form)
    rows = []
    for r, kappa in enumerate(m.kappa):
        for c, gamma in enumerate(m.gamma):
            row = {"kappa_hz": float(kappa), "gamma_hz": float(gamma)}
            if args.mode == "compare":
                row.update(g_opt_hz=float(m.virtual_g[r, c]), infidelity=float(m.virtual_inf[r, c]),
                           constrained=bool(m.virtual_constrained[r, c]),
                           direct_g_opt_hz=float(m.direct_g[r, c]), direct_infidelity=float(m.direct_inf[r, c]),
                           direct_constrained=bool(m.direct_constrained[r, c]),
                           log_ratio=float(m.log_ratio[r, c]))
            else:
                pre = "direct" if args.mode == "direct" else "virtual"
                row.update(g_opt_hz=float(getattr(m, f"{pre}_g")[r, c]),
                           infidelity=float(getattr(m, f"{pre}_inf")[r, c]),
                           constrained=bool(getattr(m, f"{pre}_constrained")[r, c]))
            rows.append(row)
    cols = ["kappa_hz", "gamma_hz", "g_opt_hz", "infidelity", "constrained"]
    if args.mode == "compare":
        cols += ["direct_g_opt_hz", "direct_infidelity", "direct_constrained", "log_ratio"]
    _emit_table(args, run, cols, rows)


def cmd_qvolume(args, run):
    from .fidelity import fig3_inputs, global_infidelity, quantum_volume, two_family_crowding
    ms = range(args.m_range[0], args.m_range[-1] + 1)
    if args.infidelity is not None:
        M, V = quantum_volume(lambda _m: args.infidelity, ms)
    else:
        inp = fig3_inputs(args.kappa, args.gamma, delta_nu=args.delta_nu)

        def inf(M):
            s_v = two_family_crowding(M, delta_nu=args.delta_nu) if args.kind == "virtual" else None
            return global_infidelity(inp, M, args.kind, args.gate, S_v=s_v, form=args.form).infidelity

        M, V = quantum_volume(inf, ms)
    run.emit(_json_text({"M_opt": int(M), "V": float(V)}))


def cmd_simulate(args, run):
    from .device import ConfigError
    from .fock import GateSpec, SparseFockState, apply_gate
    run.config(args.input)
    data = _read_json(args.input)
    try:
        if "initial" in data:
            init = dict(data["initial"])
            init.setdefault("n_modes", data.get("n_modes"))
            init.setdefault("truncation", data.get("truncation", 2))
            state = SparseFockState.from_json(init)
        else:
            state = SparseFockState.vacuum(int(data["n_modes"]), data.get("truncation", 2))
        gates = [GateSpec.from_json(g) for g in data["gates"]]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"circuit: missing or malformed field {exc}") from None
    for g in gates:
        state = apply_gate(state, g, args.truncation_mode, not args.no_check)
    run.emit(_json_text(state.to_json()))


def _parse_db(run, text, scheme):
    from .qram import Database
    p = Path(text)
    if p.exists():
        run.config(p)
        data = _read_json(p)
        if isinstance(data, dict):
            variant = data.get("variant", "quantum" if scheme == "quantum" else scheme)
            values = data["values"]
        else:
            variant, values = ("quantum" if scheme == "quantum" else scheme), data
        if variant == "quantum":
            values = [v if isinstance(v, int) else tuple(_complex_in(x) for x in v) for v in values]
        return Database(variant, tuple(values))
    from .device import ConfigError
    if set(text) - {"0", "1"}:
        raise ConfigError("--db must be a bitstring or a JSON file")
    return Database("quantum" if scheme == "quantum" else scheme, tuple(int(c) for c in text))


def _parse_address(run, text):
    p = Path(text)
    if p.exists():
        run.config(p)
        data = _read_json(p)
        if isinstance(data, dict):
            return {k: _complex_in(v) for k, v in data.items()}
        return [_complex_in(v) for v in data]
    return text


def cmd_qram_run(args, run):
    from .device import ConfigError
    from .qram import build_tree, noisy_query, run_ideal_query
    from .fock import NoiseChannel
    tree = build_tree(args.depth)
    db = _parse_db(run, args.db, args.scheme)
    if len(db) != tree.N:
        raise ConfigError(f"database has {len(db)} entries, depth {args.depth} needs {tree.N}")
    addr = _parse_address(run, args.address)
    if args.channel:
        res = noisy_query(tree, db, addr, args.scheme, [NoiseChannel(args.channel, args.eps)], args.trials,
                          args.seed if args.seed is not None else 0)
        out = {"depth": args.depth, "N": tree.N, "scheme": args.scheme, "channel": args.channel, "eps": args.eps,
               "trials": res.trials, "fidelity": res.fidelity, "stderr": res.stderr,
               "gate_counts": res.gate_counts, "slots": res.slots, "capped_events": res.capped_events}
    else:
        res = run_ideal_query(tree, db, addr, args.scheme)
        out = {"depth": args.depth, "N": tree.N, "scheme": args.scheme, "gate_counts": res.gate_counts,
               "slots": res.slots, "disentangled": res.disentangled, "max_occupation": res.max_occupation,
               "modes": {"address": list(tree.address), "bus": tree.bus, "pointer": tree.pointer,
                         "data": list(tree.data)},
               "state": res.state.to_json()}
    run.emit(_json_text(out))


def cmd_qram_sweep(args, run):
    from .qram import run_noisy_sweep
    seed = args.seed if args.seed is not None else 0
    rows = run_noisy_sweep(args.depths, args.eps, args.channel, args.trials, seed, args.scheme,
                           workers=max(1, args.threads))
    _emit_table(args, run, ["depth", "N", "eps", "channel", "fidelity", "stderr", "gates_total", "slots"], rows)


def _emit_table(args, run, cols, rows):
    if args.format == "json":
        run.emit(_json_text([{c: r[c] for c in cols} for r in rows]))
    else:
        run.emit(_csv_text(cols, rows))


# -- parser ----------------------------------------------------------------------

def _global_flags() -> argparse.ArgumentParser:
    g = _Parser(add_help=False)
    g.add_argument("--config", help="DeviceConfig JSON")
    g.add_argument("--out", help="output file (stdout when omitted)")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--threads", type=int, default=1, help="worker processes where a module supports them")
    g.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    p = _Parser(prog="cqad", description="Virtual-coupling phononic processor toolkit.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    c = add("couple", "engineered rates from a device and drive list")
    c.add_argument("--drives", required=True, help="drive list JSON [{omega_hz, amplitude_hz, label}]")
    c.add_argument("--modes", type=int, nargs="+", help="A B (two-mode) or A B C (three-mode, B lone)")
    c.add_argument("--stark", choices=("closed", "fixed_point"), default="closed")
    c.set_defaults(func=cmd_couple)

    o = add("oracle", "rate fitted from the driven dynamics")
    o.add_argument("--drives")
    o.add_argument("--modes", type=int, nargs="+")
    o.add_argument("--fig3", type=float, metavar="XI", help="use the built-in comparison geometry at this xi")
    o.add_argument("--kind", choices=("two_mode", "three_mode"), default="two_mode")
    o.add_argument("--stark", choices=("closed", "fixed_point"), default="closed")
    o.add_argument("--transmon-levels", type=int, default=5)
    o.set_defaults(func=cmd_oracle)

    pl = add("plan", "drive plan plus collision audit")
    pl.add_argument("--request", required=True, help="JSON {kind, modes, n_tot, anchors}")
    pl.set_defaults(func=cmd_plan)

    f = add("fidelity-map", "optimised infidelity over a (kappa, gamma) grid")
    f.add_argument("--gate", choices=("swap", "cz"), default="swap")
    f.add_argument("--mode", choices=("direct", "virtual", "compare"), default="compare")
    f.add_argument("--grid", type=_grid, default=(50, 50))
    f.add_argument("--kappa-range", type=_range, default=(1.0, 1e6))
    f.add_argument("--gamma-range", type=_range, default=(1.0, 1e6))
    f.add_argument("--delta-nu", type=float, default=1e6)
    f.add_argument("--form", choices=("higher", "linear"), default="higher")
    f.set_defaults(func=cmd_fidelity_map)

    q = add("qvolume", "quantum-volume optimum over processor size M")
    q.add_argument("--kind", choices=("direct", "virtual"), default="virtual")
    q.add_argument("--gate", choices=("swap", "cz"), default="swap")
    q.add_argument("--kappa", type=float, default=1e3)
    q.add_argument("--gamma", type=float, default=1e3)
    q.add_argument("--delta-nu", type=float, default=0.85e6)
    q.add_argument("--m-range", type=_int_range, default=[2, 30])
    q.add_argument("--infidelity", type=float, help="constant per-gate infidelity instead of the model")
    q.add_argument("--form", choices=("higher", "linear"), default="higher")
    q.set_defaults(func=cmd_qvolume)

    s = add("simulate", "apply a gate list to a sparse Fock state")
    s.add_argument("--input", required=True, help="JSON {n_modes, truncation, initial, gates}")
    s.add_argument("--truncation-mode", choices=("error", "project"), default="error")
    s.add_argument("--no-check", action="store_true", help="skip subspace checks")
    s.set_defaults(func=cmd_simulate)

    qr = sub.add_parser("qram", help="bucket-brigade queries")
    qsub = qr.add_subparsers(dest="qram_command", parser_class=_Parser, required=True)
    r = qsub.add_parser("run", help="one query", parents=[common])
    r.add_argument("--depth", type=int, required=True)
    r.add_argument("--scheme", choices=("classical", "readonly", "quantum"), default="classical")
    r.add_argument("--db", required=True, help="bitstring or JSON file")
    r.add_argument("--address", required=True, help="bitstring or JSON amplitude file")
    r.add_argument("--channel", choices=("loss", "dephasing", "heating"))
    r.add_argument("--eps", type=float, default=1e-3)
    r.add_argument("--trials", type=int, default=1000)
    r.set_defaults(func=cmd_qram_run)

    w = qsub.add_parser("sweep", help="noisy scaling sweep", parents=[common])
    w.add_argument("--depths", type=_int_range, default=[1, 2, 3, 4, 5])
    w.add_argument("--eps", type=_float_list, default=[1e-3])
    w.add_argument("--channel", type=lambda t: t.split(","), default=["loss"])
    w.add_argument("--trials", type=int, default=1000)
    w.add_argument("--scheme", choices=("classical", "readonly", "quantum"), default="classical")
    w.set_defaults(func=cmd_qram_sweep)
    return p


def main(argv=None) -> int:
    from .coupling import CouplingError
    from .device import ConfigError
    from .fidelity import FidelityError
    from .fock import FockError
    from .oracle import OracleError
    from .qram import QramError
    from .spectrum import PlanError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    name = args.command if args.command != "qram" else f"qram {args.qram_command}"
    if args.out:
        out_dir = os.path.dirname(os.path.abspath(args.out))
        if not os.path.isdir(out_dir):
            print(f"cqad: output directory {out_dir} does not exist", file=sys.stderr)
            return EXIT_VALIDATION
    run = _Run(args, name)
    try:
        code = args.func(args, run)
    except (OracleError, PlanError, FloatingPointError, np.linalg.LinAlgError, OverflowError) as exc:
        print(f"cqad {name}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, CouplingError, FidelityError, FockError, QramError, ValueError, OSError) as exc:
        print(f"cqad {name}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    run.finish()
    return code if code is not None else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
