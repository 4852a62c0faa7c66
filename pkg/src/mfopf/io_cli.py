"""Case-file and profile ingestion, results serialization and the CLI.

Case files are UTF-8 JSON validated against the packaged schema
(``mfopf/data/case_schema.json``); unknown keys are rejected.  Files
carry physical units as named (MW, Mvar, kV, Hz, ohm); everything is
converted to per unit on load.  Low-frequency line parameters are given
in ohms/microsiemens at the 500 kV / 60 Hz reference base.

Results serialize either as a structured JSON document (losslessly
reloadable, full float precision) or as a per-hour CSV table suitable
for plotting.  All writes are atomic (write to a temp file, then
rename).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from importlib import resources
from typing import Any, Optional

import jsonschema
import numpy as np

from .model import (
    Bus,
    ConverterSchedule,
    ConverterStation,
    Generator,
    GridModel,
    Line,
    LoadProfile,
    MultiFrequencySystem,
    OperatingBounds,
    ShuntCapacitor,
    validate_system,
)

#: Fallback converter parameters applied when a case file omits them.
CONVERTER_DEFAULTS = {
    "a0_mw": 1.0,
    "a1_pu": 0.003,
    "a2_pu": 0.004,
    "k_m": 0.612,
    "k_q": 0.5,
    "v_dc_pu": 2.0,
}


class CaseFileError(ValueError):
    """Raised on malformed or semantically invalid case files."""

    def __init__(self, message: str, violations: Optional[list[str]] = None):
        super().__init__(message)
        self.violations = violations or []


def _schema() -> dict:
    with resources.files("mfopf.data").joinpath("case_schema.json").open("rb") as fh:
        return json.load(fh)


def _load_grid(doc: dict, tag: str, s_base: float, z_base_l: float,
               conv_buses: set[int]) -> GridModel:
    buses = []
    cap_by_bus = {}
    caps = []
    for i, c in enumerate(doc.get("capacitors", [])):
        steps = tuple(sorted(v / s_base for v in c["steps_mvar"]))
        initial = c.get("initial_mvar", max(c["steps_mvar"])) / s_base
        caps.append(ShuntCapacitor(bus=c["bus"], steps=steps, initial=initial))
        cap_by_bus[c["bus"]] = i
    for b in doc["buses"]:
        buses.append(
            Bus(
                id=b["id"],
                grid=tag,  # type: ignore[arg-type]
                kind=b.get("kind", "pq"),
                v_sched=b.get("v_sched_pu"),
                p_load=b.get("p_load_mw", 0.0) / s_base,
                q_load=b.get("q_load_mvar", 0.0) / s_base,
                has_converter=b["id"] in conv_buses,
                capacitor_id=cap_by_bus.get(b["id"]),
            )
        )
    lines = []
    for ln in doc.get("lines", []):
        if tag == "s":
            r, x, b = ln["r_pu"], ln["x_pu"], ln.get("b_pu", 0.0)
            tap = ln.get("tap", 1.0)
        else:
            r = ln["r_base_ohm"] / z_base_l
            x = ln["x_base_ohm"] / z_base_l
            b = ln.get("b_base_us", 0.0) * 1e-6 * z_base_l
            tap = 1.0
        lines.append(
            Line(
                from_bus=ln["from"],
                to_bus=ln["to"],
                r_base=r,
                x_base=x,
                b_base=b,
                tap=tap,
                i_max=ln.get("i_max_pu"),
                p_max=ln.get("p_max_pu"),
            )
        )
    gens = tuple(
        Generator(
            bus=g["bus"],
            p_min=g["p_min_mw"] / s_base,
            p_max=g["p_max_mw"] / s_base,
            q_min=g["q_min_mvar"] / s_base,
            q_max=g["q_max_mvar"] / s_base,
        )
        for g in doc.get("generators", [])
    )
    return GridModel(tag=tag, buses=tuple(buses), lines=tuple(lines),  # type: ignore[arg-type]
                     generators=gens, capacitors=tuple(caps))


def load_case(path: str | os.PathLike) -> MultiFrequencySystem:
    """Load, unit-convert and validate a JSON case file."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise CaseFileError(f"case file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CaseFileError(f"case file is not valid JSON: {path}:{exc.lineno}: {exc.msg}")
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path)
        raise CaseFileError(f"case file schema violation at '{loc}': {exc.message}")

    base = doc["base"]
    s_base = base["s_base_mva"]
    v_base_l = base["v_base_l_kv"]
    z_base_l = v_base_l**2 / s_base
    defaults = {**CONVERTER_DEFAULTS, **doc.get("defaults", {})}

    convs = []
    conv_s = {c["bus_s"] for c in doc["converters"]}
    conv_l = {c["bus_l"] for c in doc["converters"]}
    for c in doc["converters"]:
        s_rated = c["s_rated_mva"] / s_base
        sched = c.get("schedule", {})
        convs.append(
            ConverterStation(
                name=c["name"],
                bus_s=c["bus_s"],
                bus_l=c["bus_l"],
                r1=c["r1_pu"],
                r2=c["r2_pu"],
                g1=c["g1_pu"],
                b1=c["b1_pu"],
                g2=c["g2_pu"],
                b2=c["b2_pu"],
                a0=c.get("a0_mw", defaults["a0_mw"]) / s_base,
                a1=c.get("a1_pu", defaults["a1_pu"]),
                a2=c.get("a2_pu", defaults["a2_pu"]),
                i_c_max=c.get("i_c_max_pu", 1.1 * s_rated),
                v_dc=c.get("v_dc_pu", defaults["v_dc_pu"]),
                k_m=c.get("k_m", defaults["k_m"]),
                k_q=c.get("k_q", defaults["k_q"]),
                s_rated=s_rated,
                mode_s=c.get("mode_s", "PQ"),
                mode_l=c.get("mode_l", "QVdc"),
                is_slack_converter=c.get("is_slack_converter", False),
                schedule=ConverterSchedule(
                    p_s=_maybe(sched, "p_s_mw", s_base),
                    q_s=_maybe(sched, "q_s_mvar", s_base),
                    v_s=sched.get("v_s_pu"),
                    q_l=_maybe(sched, "q_l_mvar", s_base),
                    v_l=sched.get("v_l_pu"),
                ),
            )
        )

    b = doc["bounds"]
    sys_model = MultiFrequencySystem(
        grid_s=_load_grid(doc["grid_s"], "s", s_base, z_base_l, conv_s),
        grid_l=_load_grid(doc["grid_l"], "l", s_base, z_base_l, conv_l),
        converters=tuple(convs),
        s_base=s_base,
        v_base_l=v_base_l,
        f_base=base["f_base_hz"],
        bounds=OperatingBounds(b["f_min_hz"], b["f_max_hz"], b["v_min_kv"], b["v_max_kv"]),
        v_load_limits=(b["v_load_min_pu"], b["v_load_max_pu"]),
        name=doc.get("name", ""),
    )
    report = validate_system(sys_model)
    if report:
        raise CaseFileError(
            "case file failed semantic validation:\n  " + "\n  ".join(report),
            violations=report,
        )
    return sys_model


def _maybe(d: dict, key: str, scale: float) -> Optional[float]:
    return d[key] / scale if key in d else None


def save_case(sys: MultiFrequencySystem, path: str | os.PathLike) -> None:
    """Serialize a system back to the JSON case format (file units)."""
    s_base = sys.s_base
    z_base_l = sys.v_base_l**2 / s_base

    def dump_grid(grid: GridModel, tag: str) -> dict:
        buses = []
        for b in grid.buses:
            entry: dict[str, Any] = {"id": b.id, "kind": b.kind}
            if b.v_sched is not None:
                entry["v_sched_pu"] = b.v_sched
            if b.p_load:
                entry["p_load_mw"] = b.p_load * s_base
            if b.q_load:
                entry["q_load_mvar"] = b.q_load * s_base
            buses.append(entry)
        lines = []
        for ln in grid.lines:
            if tag == "s":
                e = {"from": ln.from_bus, "to": ln.to_bus, "r_pu": ln.r_base,
                     "x_pu": ln.x_base, "b_pu": ln.b_base, "tap": ln.tap}
            else:
                e = {"from": ln.from_bus, "to": ln.to_bus,
                     "r_base_ohm": ln.r_base * z_base_l,
                     "x_base_ohm": ln.x_base * z_base_l,
                     "b_base_us": ln.b_base / z_base_l * 1e6}
            if ln.i_max is not None:
                e["i_max_pu"] = ln.i_max
            if ln.p_max is not None:
                e["p_max_pu"] = ln.p_max
            lines.append(e)
        gens = [
            {"bus": g.bus, "p_min_mw": g.p_min * s_base, "p_max_mw": g.p_max * s_base,
             "q_min_mvar": g.q_min * s_base, "q_max_mvar": g.q_max * s_base}
            for g in grid.generators
        ]
        caps = [
            {"bus": c.bus, "steps_mvar": [v * s_base for v in c.steps],
             "initial_mvar": c.initial * s_base}
            for c in grid.capacitors
        ]
        return {"buses": buses, "lines": lines, "generators": gens, "capacitors": caps}

    convs = []
    for c in sys.converters:
        entry: dict[str, Any] = {
            "name": c.name, "bus_s": c.bus_s, "bus_l": c.bus_l,
            "s_rated_mva": c.s_rated * s_base,
            "r1_pu": c.r1, "r2_pu": c.r2, "g1_pu": c.g1, "b1_pu": c.b1,
            "g2_pu": c.g2, "b2_pu": c.b2,
            "a0_mw": c.a0 * s_base, "a1_pu": c.a1, "a2_pu": c.a2,
            "i_c_max_pu": c.i_c_max, "v_dc_pu": c.v_dc, "k_m": c.k_m, "k_q": c.k_q,
            "mode_s": c.mode_s, "mode_l": c.mode_l,
            "is_slack_converter": c.is_slack_converter,
        }
        sched: dict[str, Any] = {}
        sc = c.schedule
        if sc.p_s is not None:
            sched["p_s_mw"] = sc.p_s * s_base
        if sc.q_s is not None:
            sched["q_s_mvar"] = sc.q_s * s_base
        if sc.v_s is not None:
            sched["v_s_pu"] = sc.v_s
        if sc.q_l is not None:
            sched["q_l_mvar"] = sc.q_l * s_base
        if sc.v_l is not None:
            sched["v_l_pu"] = sc.v_l
        if sched:
            entry["schedule"] = sched
        convs.append(entry)

    doc = {
        "schema_version": 1,
        "name": sys.name,
        "base": {"s_base_mva": s_base, "f_base_hz": sys.f_base, "v_base_l_kv": sys.v_base_l},
        "bounds": {
            "f_min_hz": sys.bounds.f_min_hz, "f_max_hz": sys.bounds.f_max_hz,
            "v_min_kv": sys.bounds.v_min_kv, "v_max_kv": sys.bounds.v_max_kv,
            "v_load_min_pu": sys.v_load_limits[0], "v_load_max_pu": sys.v_load_limits[1],
        },
        "grid_s": dump_grid(sys.grid_s, "s"),
        "grid_l": dump_grid(sys.grid_l, "l"),
        "converters": convs,
    }
    _atomic_write_text(path, json.dumps(doc, indent=1))


def load_profile(path: str | os.PathLike) -> LoadProfile:
    """Read a 24-row (hour, multiplier) CSV profile."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(csv.reader(fh), start=1):
            if not raw or not "".join(raw).strip():
                continue
            try:
                hour, mult = float(raw[0]), float(raw[1])
            except (ValueError, IndexError):
                if lineno == 1:
                    continue  # tolerate a header row
                raise CaseFileError(f"profile {path}:{lineno}: non-numeric row {raw!r}")
            rows.append((hour, mult))
    if len(rows) != 24:
        raise CaseFileError(f"profile must have 24 rows, got {len(rows)}")
    rows.sort(key=lambda r: r[0])
    scale = tuple(m for _, m in rows)
    if any(m <= 0 for m in scale):
        raise CaseFileError("profile multipliers must be positive")
    return LoadProfile(scale=scale)


def _atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _to_jsonable(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _to_jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def case_fingerprint(path: str | os.PathLike) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


@dataclass
class RunRecord:
    """A results file: run metadata plus per-period records."""

    command: str
    case_sha256: str
    options: dict
    weights: dict
    created_utc: str
    status: str
    periods: list[dict]

    @staticmethod
    def create(command: str, case_path, options: dict, weights: dict,
               status: str, periods: list[dict]) -> "RunRecord":
        return RunRecord(
            command=command,
            case_sha256=case_fingerprint(case_path) if case_path else "",
            options=_to_jsonable(options),
            weights=_to_jsonable(weights),
            created_utc=datetime.now(timezone.utc).isoformat(),
            status=status,
            periods=[_to_jsonable(p) for p in periods],
        )


TABULAR_COLUMNS = (
    "hour", "f_l_hz", "total_loss_mw", "loss_pct",
    "max_load_v_pu", "min_load_v_pu", "cap_switches",
)


def write_results(results: RunRecord, path: str | os.PathLike, format: str = "structured") -> None:
    """Write a results file; ``structured`` JSON or per-hour ``tabular`` CSV."""
    if format == "structured":
        _atomic_write_text(path, json.dumps(asdict(results), indent=1))
    elif format == "tabular":
        import io

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABULAR_COLUMNS)
        for rec in results.periods:
            w.writerow([rec.get(c, "") for c in TABULAR_COLUMNS])
        _atomic_write_text(path, buf.getvalue())
    else:
        raise ValueError(f"unknown results format: {format}")


def read_results(path: str | os.PathLike) -> RunRecord:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return RunRecord(**doc)


# ----------------------------------------------------------------------
# command-line interface
# ----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with the input-error code 3."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(_exit(3, message))


def _exit(code: int, message: str = "") -> int:
    if message:
        print(f"mfopf: error: {message}", file=sys.stderr)
    return code


def _add_common(p: argparse.ArgumentParser, case_required: bool = True) -> None:
    p.add_argument("--case", required=case_required, help="path to a JSON case file")
    p.add_argument("--out", help="results file path")
    p.add_argument("--tol", type=float, default=1e-6, help="convergence tolerance (pu)")
    p.add_argument("--max-iter", type=int, default=150)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mfopf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a case file")
    _add_common(p)

    p = sub.add_parser("plan", help="planning-stage OPF (choose V_l and F_l)")
    _add_common(p)
    p.add_argument("--alpha1", type=float, default=1.0)
    p.add_argument("--alpha2", type=float, default=0.0)
    p.add_argument("--load-scale", type=float, default=1.0)

    p = sub.add_parser("operate", help="single-period operation OPF at fixed V_l")
    _add_common(p)
    p.add_argument("--voltage-kv", type=float, required=True)
    p.add_argument("--alpha1", type=float, default=1.0)
    p.add_argument("--alpha3", type=float, default=0.2)
    p.add_argument("--load-scale", type=float, default=1.0)
    p.add_argument("--profile", help="profile CSV; with --hour, selects the load scale")
    p.add_argument("--hour", type=int, help="1-based hour into --profile")

    p = sub.add_parser("multiperiod", help="24-hour sequential operation OPF")
    _add_common(p)
    p.add_argument("--voltage-kv", type=float, required=True)
    p.add_argument("--alpha1", type=float, default=1.0)
    p.add_argument("--alpha3", type=float, default=0.2)
    p.add_argument("--profile", required=True)

    p = sub.add_parser("pf", help="fixed-control power flow")
    _add_common(p)
    p.add_argument("--voltage-kv", type=float, required=True)
    p.add_argument("--frequency-hz", type=float, required=True)
    p.add_argument("--load-scale", type=float, default=1.0)

    p = sub.add_parser("sweep-freq", help="two-terminal loss sweep over frequency")
    _add_common(p, case_required=False)
    p.add_argument("--fmin", type=float, default=0.1)
    p.add_argument("--fmax", type=float, default=60.0)
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--q-mvar", type=float, default=0.0)
    p.add_argument("--p-mw", type=float, default=400.0)
    p.add_argument("--voltage-kv", type=float, default=260.0)

    p = sub.add_parser("sweep-pv", help="two-terminal loss sweep over power and voltage")
    _add_common(p, case_required=False)
    p.add_argument("--p-mw", default="200,300,400,500,600,700",
                   help="comma-separated power transfers (MW)")
    p.add_argument("--voltage-kv", default="260,345",
                   help="comma-separated operating voltages (kV)")
    p.add_argument("--frequency-hz", type=float, default=10.0)

    p = sub.add_parser("checkgrad", help="finite-difference audit of all derivatives")
    _add_common(p)
    p.add_argument("--voltage-kv", type=float, default=345.0)
    p.add_argument("--load-scale", type=float, default=1.0)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    from . import studies
    from .model import WeightConfig
    from .nlp import SolveOptions

    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 3

    try:
        if args.command in ("sweep-freq", "sweep-pv") and not args.case:
            from .cases import two_terminal_case
            kv = (args.voltage_kv if args.command == "sweep-freq"
                  else float(str(args.voltage_kv).split(",")[0]))
            system = two_terminal_case(v_l_kv=kv)
            case_path = None
        else:
            system = load_case(args.case)
            case_path = args.case
    except CaseFileError as exc:
        return _exit(3, str(exc))

    opts = SolveOptions(
        tol_feasibility=args.tol,
        tol_objective=args.tol,
        tol_complementarity=args.tol,
        max_iterations=args.max_iter,
    )

    try:
        if args.command == "validate":
            print(f"case '{system.name or args.case}' is valid "
                  f"({system.grid_s.n_bus}+{system.grid_l.n_bus} buses, "
                  f"{len(system.converters)} converters)")
            return 0

        if args.command == "plan":
            weights = WeightConfig(alpha1=args.alpha1, alpha2=args.alpha2)
            res = studies.solve_planning(system, args.load_scale, weights, options=opts)
            print(f"status={res.outcome.status} V_l*={res.v_l_kv:.2f} kV "
                  f"F_l*={res.f_l_hz:.2f} Hz LF losses={res.lf_loss_mw:.2f} MW "
                  f"total={res.total_loss_mw:.2f} MW "
                  f"({res.outcome.iterations} iterations)")
            _write(args, "plan", case_path, opts, weights, res.outcome.status,
                   [studies.planning_record(res)])
            return 0 if res.outcome.converged else 2

        if args.command == "operate":
            weights = WeightConfig(alpha1=args.alpha1, alpha3=args.alpha3)
            scale = args.load_scale
            if args.profile and args.hour:
                scale = load_profile(args.profile).scale[args.hour - 1]
            res = studies.solve_operation(system, args.voltage_kv, scale, None,
                                          weights, options=opts)
            print(f"status={res.outcome.status} F_l*={res.f_l_hz:.2f} Hz "
                  f"losses={res.losses.total_mw:.2f} MW "
                  f"({res.losses.pct_of_load:.2f}% of load)")
            _write(args, "operate", case_path, opts, weights, res.outcome.status,
                   [studies.operation_record(res, hour=args.hour or 0)])
            return 0 if res.outcome.converged else 2

        if args.command == "multiperiod":
            weights = WeightConfig(alpha1=args.alpha1, alpha3=args.alpha3)
            profile = load_profile(args.profile)
            results = studies.run_multi_period(system, args.voltage_kv, profile,
                                               weights, options=opts)
            ok = all(r.outcome.converged for r in results)
            for h, r in enumerate(results, start=1):
                print(f"hour {h:2d}: status={r.outcome.status} "
                      f"F_l*={r.f_l_hz:6.2f} Hz losses={r.losses.total_mw:8.3f} MW "
                      f"switches={r.cap_switches}")
            _write(args, "multiperiod", case_path, opts, weights,
                   "converged" if ok else "partial",
                   [studies.operation_record(r, hour=h)
                    for h, r in enumerate(results, start=1)])
            return 0 if ok else 2

        if args.command == "pf":
            schedule = studies.baseline_schedule(system, args.load_scale)
            state = studies.solve_power_flow(system, args.voltage_kv,
                                             args.frequency_hz, schedule,
                                             load_scale=args.load_scale)
            losses = studies.compute_losses(state)
            print(f"power flow converged; losses {losses.total_mw:.3f} MW "
                  f"({losses.pct_of_load:.2f}% of load)")
            _write(args, "pf", case_path, opts, {}, "converged",
                   [studies.state_record(state, losses)])
            return 0

        if args.command == "sweep-freq":
            freqs = list(np.linspace(args.fmin, args.fmax, args.steps))
            res = studies.sweep_frequency(system, freqs, args.q_mvar, args.p_mw,
                                          v_l_kv=args.voltage_kv)
            for i, f in enumerate(res.axis):
                print(f"f={f:7.3f} Hz  loss={res.total_loss_mw[i]:8.3f} MW  "
                      f"|V_recv|={res.receiving_v_pu[i]:.4f}")
            _write(args, "sweep-freq", case_path, opts, {}, "converged",
                   studies.sweep_records(res))
            return 0

        if args.command == "sweep-pv":
            powers = [float(v) for v in str(args.p_mw).split(",")]
            volts = [float(v) for v in str(args.voltage_kv).split(",")]
            sweeps = studies.sweep_power_voltage(system, powers, volts,
                                                 args.frequency_hz)
            recs = []
            for sw in sweeps:
                for i, pmw in enumerate(sw.axis):
                    print(f"{sw.label:>12s} P={pmw:7.1f} MW loss={sw.total_loss_mw[i]:8.3f} MW")
                recs.extend(studies.sweep_records(sw))
            _write(args, "sweep-pv", case_path, opts, {}, "converged", recs)
            return 0

        if args.command == "checkgrad":
            report = studies.check_case_derivatives(system, args.voltage_kv,
                                                    args.load_scale)
            worst = 0.0
            for family, errs in report.items():
                worst = max(worst, errs["jacobian"], errs["hessian"])
                print(f"{family:28s} jacobian {errs['jacobian']:.3e}   "
                      f"hessian {errs['hessian']:.3e}")
            print(f"worst relative error: {worst:.3e}")
            return 0 if worst < 1e-5 else 2
    except studies.PowerFlowError as exc:
        return _exit(2, f"power flow failed: {exc}")
    except CaseFileError as exc:
        return _exit(3, str(exc))
    return 3


def _write(args, command: str, case_path, opts, weights, status, periods) -> None:
    if not getattr(args, "out", None):
        return
    record = RunRecord.create(
        command=command,
        case_path=case_path,
        options={**dataclasses.asdict(opts), "start": None},
        weights=weights if isinstance(weights, dict) else dataclasses.asdict(weights),
        status=status,
        periods=periods,
    )
    fmt = "tabular" if str(args.out).endswith(".csv") else "structured"
    write_results(record, args.out, format=fmt)


if __name__ == "__main__":
    raise SystemExit(main())
