"""Bundled example systems.

``case57_mf`` is the packaged multi-frequency case: the IEEE 57-bus
network (loads scaled to a 1464.3 MW peak) with the generators at buses
8 and 12 replaced by converter stations, three more stations at buses
52/16/17, four switched capacitor banks, and an 8-bus 500-kV-class
low-frequency grid with wind infeed.  The low-frequency line constants
and converter coefficients are typical values, not published data, so
the case reproduces the reference study's trends rather than its exact
numbers.

``two_terminal_case`` builds the point-to-point configuration used by
the loss sweeps: an ideal 60-Hz bus, one low-frequency line, and a
converter station at each end.
"""

from __future__ import annotations

from importlib import resources

from .model import (
    Bus,
    ConverterSchedule,
    ConverterStation,
    Generator,
    GridModel,
    Line,
    MultiFrequencySystem,
    OperatingBounds,
)

#: Typical 500-kV overhead line constants (60 Hz).
LINE_R_OHM_PER_KM = 0.028
LINE_X_OHM_PER_KM = 0.325
LINE_B_US_PER_KM = 3.5


def bundled_case_path():
    """Filesystem path of the packaged ``case57_mf.json``."""
    return resources.files("mfopf.data").joinpath("case57_mf.json")


def bundled_profile_path():
    """Filesystem path of the packaged 24-hour load profile."""
    return resources.files("mfopf.data").joinpath("profile24.csv")


def load_case57() -> MultiFrequencySystem:
    from .io_cli import load_case

    with resources.as_file(bundled_case_path()) as p:
        return load_case(p)


def load_bundled_profile():
    from .io_cli import load_profile

    with resources.as_file(bundled_profile_path()) as p:
        return load_profile(p)


def _converter(name: str, bus_s: int, bus_l: int, s_rated: float,
               is_slack: bool = False, k_q: float = 0.5,
               schedule: ConverterSchedule = ConverterSchedule()) -> ConverterStation:
    """Station with impedances and loss coefficients scaled by rating.

    Sized for roughly 1 % station loss at rated transfer: fixed losses
    0.1 % of rating per VSC, winding/filter impedances of 0.1 %/15 % on
    the rating base converted to the system base.
    """
    return ConverterStation(
        name=name,
        bus_s=bus_s,
        bus_l=bus_l,
        r1=0.001 / s_rated,
        r2=0.001 / s_rated,
        g1=0.133 * s_rated,
        b1=-6.66 * s_rated,
        g2=0.133 * s_rated,
        b2=-6.66 * s_rated,
        a0=0.001 * s_rated,
        a1=0.002,
        a2=0.001 / s_rated,
        i_c_max=1.1 * s_rated,
        v_dc=2.0,
        k_m=0.612,
        k_q=k_q,
        s_rated=s_rated,
        is_slack_converter=is_slack,
        schedule=schedule,
    )


def line_base_pu(length_km: float, s_base: float = 100.0, v_base_kv: float = 500.0):
    """(r, x, b) per unit at the reference base for a line of given length."""
    z_base = v_base_kv**2 / s_base
    r = LINE_R_OHM_PER_KM * length_km / z_base
    x = LINE_X_OHM_PER_KM * length_km / z_base
    b = LINE_B_US_PER_KM * length_km * 1e-6 * z_base
    return r, x, b


def two_terminal_case(v_l_kv: float = 260.0, line_km: float = 200.0) -> MultiFrequencySystem:
    """Point-to-point low-frequency link fed from an ideal 60-Hz source.

    Both converters attach to the single (ideal) 60-Hz bus; the sending
    converter is the slack station holding 1 pu at the sending end of
    the line.  ``v_l_kv`` is recorded nowhere in the model: pass the
    operating voltage to the sweep/power-flow drivers.
    """
    del v_l_kv  # the operating voltage is chosen per solve
    r, x, b = line_base_pu(line_km)
    grid_s = GridModel(
        tag="s",
        buses=(Bus(id=1, grid="s", kind="slack", v_sched=1.0, has_converter=True),),
        lines=(),
        generators=(Generator(bus=1, p_min=-20.0, p_max=20.0, q_min=-10.0, q_max=10.0),),
    )
    grid_l = GridModel(
        tag="l",
        buses=(
            Bus(id=2, grid="l", kind="slack", v_sched=1.0, has_converter=True),
            Bus(id=3, grid="l", kind="pq", has_converter=True),
        ),
        lines=(Line(from_bus=2, to_bus=3, r_base=r, x_base=x, b_base=b),),
    )
    converters = (
        _converter("send", 1, 2, s_rated=5.0, is_slack=True,
                   schedule=ConverterSchedule(q_s=0.0)),
        _converter("recv", 1, 3, s_rated=5.0,
                   schedule=ConverterSchedule(p_s=-4.0, q_s=0.0, q_l=0.0)),
    )
    return MultiFrequencySystem(
        grid_s=grid_s,
        grid_l=grid_l,
        converters=converters,
        bounds=OperatingBounds(0.1, 60.0, 69.0, 500.0),
        name="two_terminal",
    )
