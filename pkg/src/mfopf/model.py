"""Domain model for multi-frequency HVac transmission systems.

A system couples one conventional 60-Hz grid (tagged ``s``) with one
low-frequency grid (tagged ``l``) through back-to-back VSC converter
stations.  All electrical quantities are stored per unit on a single MVA
base; the low-frequency grid uses the 500 kV / 60 Hz reference base so
that its line parameters scale exactly with the voltage and frequency
ratios (see :mod:`mfopf.admittance`).

Model objects are frozen dataclasses: they are immutable after
construction and safe to share between concurrent solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Literal, Optional

BusKind = Literal["slack", "pv", "pq"]
GridTag = Literal["s", "l"]

#: Power-flow control modes for the two VSC sides of a converter station.
ModeS = Literal["PQ", "PV"]
ModeL = Literal["QVdc", "VVdc"]


@dataclass(frozen=True)
class Bus:
    """A network node.

    ``v_sched`` is the scheduled voltage magnitude and must be present
    exactly for slack and PV buses.  Loads are consumption (>= 0).
    """

    id: int
    grid: GridTag
    kind: BusKind = "pq"
    v_sched: Optional[float] = None
    p_load: float = 0.0
    q_load: float = 0.0
    has_converter: bool = False
    capacitor_id: Optional[int] = None


@dataclass(frozen=True)
class Line:
    """Equivalent-pi transmission line.

    ``r_base``/``x_base``/``b_base`` are per unit at the grid's reference
    voltage and frequency.  For the 60-Hz grid the reference equals the
    operating point, so the base values are used directly; low-frequency
    lines are rescaled per operating ratio before matrix assembly.
    ``b_base`` is the *total* line charging susceptance.
    """

    from_bus: int
    to_bus: int
    r_base: float
    x_base: float
    b_base: float = 0.0
    tap: float = 1.0
    i_max: Optional[float] = None
    p_max: Optional[float] = None


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float


@dataclass(frozen=True)
class ShuntCapacitor:
    """Discretely switched capacitor bank.

    ``steps`` are the admissible reactive injections at 1 pu voltage,
    strictly increasing and containing 0.  The actual injection scales
    with the squared bus voltage.
    """

    bus: int
    steps: tuple[float, ...]
    initial: float


@dataclass(frozen=True)
class ConverterSchedule:
    """Fixed quantities for power-flow mode, per the converter's control mode.

    Values are per unit; unset fields stay free (slack-converter side).
    """

    p_s: Optional[float] = None
    q_s: Optional[float] = None
    v_s: Optional[float] = None
    q_l: Optional[float] = None
    v_l: Optional[float] = None


@dataclass(frozen=True)
class ConverterStation:
    """Back-to-back VSC pair linking one bus in each grid.

    Loss model: each station dissipates ``2*a0`` at no load plus, per VSC
    side, a term linear (``a1``) and quadratic (``r + a2``) in the side's
    current magnitude.  ``r1``/``r2`` are the combined winding resistances
    (transformer + phase reactor) of the grid-s and grid-l sides;
    ``g1``/``b1`` and ``g2``/``b2`` are the corresponding combined shunt
    admittance components used by the modulation-limit constraint.

    Sign convention: ``p_s``/``q_s`` of a station are powers withdrawn
    from grid s into the converter, while ``p_l``/``q_l`` are powers
    injected from the converter into grid l (the direction labels of the
    dispatch tables).  A station in normal low-frequency-to-60-Hz
    transfer therefore carries negative values on both sides.
    """

    name: str
    bus_s: int
    bus_l: int
    r1: float
    r2: float
    g1: float
    b1: float
    g2: float
    b2: float
    a0: float
    a1: float
    a2: float
    i_c_max: float
    v_dc: float
    k_m: float
    k_q: float
    s_rated: float
    mode_s: ModeS = "PQ"
    mode_l: ModeL = "QVdc"
    is_slack_converter: bool = False
    schedule: ConverterSchedule = field(default_factory=ConverterSchedule)


@dataclass(frozen=True)
class GridModel:
    """Buses, lines, generators and capacitors of one grid."""

    tag: GridTag
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...] = ()
    generators: tuple[Generator, ...] = ()
    capacitors: tuple[ShuntCapacitor, ...] = ()

    @cached_property
    def bus_index(self) -> dict[int, int]:
        """Map bus id -> position in ``buses``."""
        return {bus.id: i for i, bus in enumerate(self.buses)}

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @cached_property
    def slack_index(self) -> int:
        for i, bus in enumerate(self.buses):
            if bus.kind == "slack":
                return i
        raise ValueError(f"grid {self.tag} has no slack bus")


@dataclass(frozen=True)
class OperatingBounds:
    """Admissible rated-voltage and operating-frequency window of grid l."""

    f_min_hz: float
    f_max_hz: float
    v_min_kv: float
    v_max_kv: float


@dataclass(frozen=True)
class MultiFrequencySystem:
    """Complete multi-frequency system model (all quantities per unit)."""

    grid_s: GridModel
    grid_l: GridModel
    converters: tuple[ConverterStation, ...]
    s_base: float = 100.0
    v_base_l: float = 500.0
    f_base: float = 60.0
    bounds: OperatingBounds = OperatingBounds(1.0, 60.0, 69.0, 500.0)
    v_load_limits: tuple[float, float] = (0.94, 1.06)
    name: str = ""

    def scaled_loads(self, scale: float) -> "MultiFrequencySystem":
        """Return a copy with every load multiplied by ``scale``."""
        def scale_grid(grid: GridModel) -> GridModel:
            buses = tuple(
                replace(b, p_load=b.p_load * scale, q_load=b.q_load * scale)
                for b in grid.buses
            )
            return replace(grid, buses=buses)

        return replace(self, grid_s=scale_grid(self.grid_s), grid_l=scale_grid(self.grid_l))


@dataclass(frozen=True)
class LoadProfile:
    """24 hourly multipliers applied uniformly to all loads."""

    scale: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.scale) != 24:
            raise ValueError(f"load profile must have 24 entries, got {len(self.scale)}")
        if any(s <= 0 for s in self.scale):
            raise ValueError("load profile entries must be positive")


@dataclass(frozen=True)
class WeightConfig:
    """Objective weights: generation, rated-voltage and capacitor-switching terms."""

    alpha1: float = 1.0
    alpha2: float = 0.0
    alpha3: float = 0.0

    def __post_init__(self) -> None:
        if self.alpha1 <= 0:
            raise ValueError("alpha1 must be positive")
        if self.alpha2 < 0 or self.alpha3 < 0:
            raise ValueError("alpha2 and alpha3 must be nonnegative")


def _validate_grid(grid: GridModel, report: list[str]) -> None:
    tag = grid.tag
    ids = [b.id for b in grid.buses]
    if len(set(ids)) != len(ids):
        report.append(f"grid {tag}: duplicate bus ids")
    slacks = [b.id for b in grid.buses if b.kind == "slack"]
    if len(slacks) == 0:
        report.append(f"grid {tag}: no slack bus")
    elif len(slacks) > 1:
        report.append(f"grid {tag}: duplicate slack buses {slacks}")
    for b in grid.buses:
        if b.grid != tag:
            report.append(f"grid {tag}: bus {b.id} tagged {b.grid}")
        needs_sched = b.kind in ("slack", "pv")
        if needs_sched and b.v_sched is None:
            report.append(f"grid {tag}: bus {b.id} ({b.kind}) missing v_sched")
        if not needs_sched and b.v_sched is not None:
            report.append(f"grid {tag}: bus {b.id} (pq) must not set v_sched")
        if b.p_load < 0 or b.q_load < 0:
            report.append(f"grid {tag}: bus {b.id} has negative load")
        if b.capacitor_id is not None:
            if not (0 <= b.capacitor_id < len(grid.capacitors)):
                report.append(f"grid {tag}: bus {b.id} references unknown capacitor {b.capacitor_id}")
            elif grid.capacitors[b.capacitor_id].bus != b.id:
                report.append(f"grid {tag}: bus {b.id} capacitor reference mismatch")
    known = set(ids)
    for ln in grid.lines:
        lid = f"line {ln.from_bus}-{ln.to_bus}"
        if ln.from_bus not in known or ln.to_bus not in known:
            report.append(f"grid {tag}: {lid} references unknown bus")
        if ln.from_bus == ln.to_bus:
            report.append(f"grid {tag}: {lid} is a self loop")
        if ln.r_base < 0:
            report.append(f"grid {tag}: {lid} has negative resistance")
        if ln.x_base <= 0:
            report.append(f"grid {tag}: {lid} must have positive reactance")
        if ln.b_base < 0:
            report.append(f"grid {tag}: {lid} has negative charging susceptance")
        if ln.i_max is not None and ln.i_max <= 0:
            report.append(f"grid {tag}: {lid} i_max must be positive when present")
        if ln.p_max is not None and ln.p_max <= 0:
            report.append(f"grid {tag}: {lid} p_max must be positive when present")
        if tag == "l" and ln.tap != 1.0:
            report.append(f"grid {tag}: {lid} low-frequency lines must have tap = 1")
    for gen in grid.generators:
        if gen.bus not in known:
            report.append(f"grid {tag}: generator at unknown bus {gen.bus}")
        if gen.p_min > gen.p_max:
            report.append(f"grid {tag}: generator at bus {gen.bus} has p_min > p_max")
        if gen.q_min > gen.q_max:
            report.append(f"grid {tag}: generator at bus {gen.bus} has q_min > q_max")
    for i, cap in enumerate(grid.capacitors):
        cid = f"capacitor {i} at bus {cap.bus}"
        if cap.bus not in known:
            report.append(f"grid {tag}: {cid}: unknown bus")
        if len(cap.steps) == 0:
            report.append(f"grid {tag}: {cid}: capacitor steps must be nonempty")
            continue
        if any(b >= a for a, b in zip(cap.steps[1:], cap.steps)):
            report.append(f"grid {tag}: {cid}: capacitor steps must be strictly increasing")
        if 0.0 not in cap.steps:
            report.append(f"grid {tag}: {cid}: capacitor steps must contain 0")
        if cap.initial not in cap.steps:
            report.append(f"grid {tag}: {cid}: initial dispatch not a member of steps")


def validate_system(sys: MultiFrequencySystem) -> list[str]:
    """Check every model invariant; an empty report means the system is valid.

    Violations are data, not exceptions: the report lists one entry per
    broken invariant, naming the offending bus, line or converter.
    """
    report: list[str] = []
    _validate_grid(sys.grid_s, report)
    _validate_grid(sys.grid_l, report)

    known_s = {b.id for b in sys.grid_s.buses}
    known_l = {b.id for b in sys.grid_l.buses}
    conv_s = set()
    conv_l = set()
    slack_convs = []
    for conv in sys.converters:
        if conv.bus_s not in known_s:
            report.append(f"converter {conv.name}: unknown grid-s bus {conv.bus_s}")
        if conv.bus_l not in known_l:
            report.append(f"converter {conv.name}: unknown grid-l bus {conv.bus_l}")
        conv_s.add(conv.bus_s)
        conv_l.add(conv.bus_l)
        for coeff in ("a0", "a1", "a2", "r1", "r2"):
            if getattr(conv, coeff) < 0:
                report.append(f"converter {conv.name}: {coeff} must be nonnegative")
        for coeff in ("i_c_max", "s_rated", "v_dc"):
            if getattr(conv, coeff) <= 0:
                report.append(f"converter {conv.name}: {coeff} must be positive")
        if conv.is_slack_converter:
            slack_convs.append(conv)

    if len(sys.converters) and len(slack_convs) != 1:
        report.append(f"exactly one slack converter required, found {len(slack_convs)}")
    for conv in slack_convs:
        if conv.bus_l in known_l:
            bus = sys.grid_l.buses[sys.grid_l.bus_index[conv.bus_l]]
            if bus.kind != "slack":
                report.append(
                    f"converter {conv.name}: slack converter must sit at the grid-l slack bus"
                )
    for grid, buses in ((sys.grid_s, conv_s), (sys.grid_l, conv_l)):
        for b in grid.buses:
            if b.has_converter != (b.id in buses):
                report.append(f"grid {grid.tag}: bus {b.id} has_converter flag inconsistent")

    if sys.bounds.f_min_hz <= 0:
        report.append("frequency lower bound must be positive")
    if sys.bounds.v_min_kv <= 0:
        report.append("voltage lower bound must be positive")
    if sys.bounds.f_min_hz > sys.bounds.f_max_hz:
        report.append("frequency bounds reversed")
    if sys.bounds.v_min_kv > sys.bounds.v_max_kv:
        report.append("voltage bounds reversed")
    if not (0 < sys.v_load_limits[0] <= sys.v_load_limits[1]):
        report.append("load voltage window invalid")
    if sys.s_base <= 0 or sys.v_base_l <= 0 or sys.f_base <= 0:
        report.append("system bases must be positive")
    return report
