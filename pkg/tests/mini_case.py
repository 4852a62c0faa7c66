"""A two-bus low-frequency planning case with an independent brute-force oracle.

The system: one ideal 60-Hz bus (slack generator plus a fixed load), a
two-bus low-frequency grid with one deliberately lossy line, must-take
wind behind it, and a single slack converter station.  The landscape is
strictly monotone in the rated voltage (series resistance falls with
V^2) and in frequency (line charging grows with F and must be carried as
extra quadrature current), so the unique optimum sits in the corner cell
(V_max, F_min) of the search box and the comparison against the solver
is sharp.

The oracle shares no code with the production solver: each candidate
point solves the two-unknown receiving-bus power flow with a hand-rolled
complex Newton iteration and the converter loss balance with a scalar
fixed-point loop.  The inner dispatch scan covers the wind reactive
output; the wind real output is provably optimal at its lower bound
(every transferred MW costs its transport losses on top of itself), so
it is held there.
"""

import numpy as np

from mfopf.cases import _converter
from mfopf.model import (
    Bus,
    ConverterSchedule,
    Generator,
    GridModel,
    Line,
    MultiFrequencySystem,
    OperatingBounds,
)

LOAD_P = 3.0
LOAD_Q = 0.6
WIND_P_MIN = 1.5
WIND_P_MAX = 2.5
WIND_Q_LIM = 1.2

# thin-conductor line: strong voltage dependence of the transfer losses
LINE_R_PU = 0.0120
LINE_X_PU = 0.0390
LINE_B_PU = 2.625

V_WINDOW = (0.94, 1.06)

# converter constants mirrored from the factory (rating 5 pu)
A0 = 0.005
A1 = 0.002
R_PLUS_A2 = 0.0002 + 0.0002
EPS = 1e-8


def mini_planning_system() -> MultiFrequencySystem:
    grid_s = GridModel(
        tag="s",
        buses=(Bus(id=1, grid="s", kind="slack", v_sched=1.0,
                   p_load=LOAD_P, q_load=LOAD_Q, has_converter=True),),
        generators=(Generator(bus=1, p_min=0.0, p_max=10.0, q_min=-5.0, q_max=5.0),),
    )
    grid_l = GridModel(
        tag="l",
        buses=(
            Bus(id=2, grid="l", kind="slack", v_sched=1.0, has_converter=True),
            Bus(id=3, grid="l", kind="pq"),
        ),
        lines=(Line(from_bus=2, to_bus=3, r_base=LINE_R_PU, x_base=LINE_X_PU,
                    b_base=LINE_B_PU),),
        generators=(Generator(bus=3, p_min=WIND_P_MIN, p_max=WIND_P_MAX,
                              q_min=-WIND_Q_LIM, q_max=WIND_Q_LIM),),
    )
    conv = _converter("link", 1, 2, s_rated=5.0, is_slack=True,
                      schedule=ConverterSchedule(q_s=0.0))
    return MultiFrequencySystem(
        grid_s=grid_s,
        grid_l=grid_l,
        converters=(conv,),
        bounds=OperatingBounds(1.0, 60.0, 69.0, 500.0),
        v_load_limits=V_WINDOW,
        name="mini_planning",
    )


def _line_series(sys, f_r, v_r):
    ln = sys.grid_l.lines[0]
    r = ln.r_base / v_r
    x = ln.x_base * f_r / v_r
    b = ln.b_base * f_r * v_r
    return 1.0 / (r + 1j * x), b / 2.0


def _side_loss(p, q, vmag2):
    u = (p * p + q * q) / vmag2
    return R_PLUS_A2 * u + A1 * np.sqrt(u + EPS)


def oracle_objective(sys, v_l_kv, f_l_hz, q_w, p_w=WIND_P_MIN, alpha2=0.0):
    """Objective at (V_l, F_l, wind Q); infeasible points score inf.

    Solves the receiving-bus voltage by a two-unknown complex Newton
    iteration (injection there is p_w + j q_w), recovers the sending-end
    converter flow and the grid-s balance.
    """
    v_r = (np.asarray(v_l_kv, dtype=float) / sys.v_base_l) ** 2
    f_r = np.asarray(f_l_hz, dtype=float) / sys.f_base
    q_w = np.asarray(q_w, dtype=float)
    y, bc = _line_series(sys, f_r, v_r)
    v2 = 1.0 + 0.0j
    A = y + 1j * bc
    B = -y * v2
    S = p_w + 1j * q_w
    V = np.ones(np.broadcast(A, S).shape, dtype=complex)
    for _ in range(50):
        F = np.abs(V) ** 2 * np.conj(A) + V * np.conj(B) - np.conj(S)
        dFe = 2 * V.real * np.conj(A) + np.conj(B)
        dFf = 2 * V.imag * np.conj(A) + 1j * np.conj(B)
        a11, a12 = dFe.real, dFf.real
        a21, a22 = dFe.imag, dFf.imag
        det = a11 * a22 - a12 * a21
        de = (-F.real * a22 + F.imag * a12) / det
        df = (F.real * a21 - F.imag * a11) / det
        V = V + np.clip(de, -0.2, 0.2) + 1j * np.clip(df, -0.2, 0.2)
    F = np.abs(V) ** 2 * np.conj(A) + V * np.conj(B) - np.conj(S)
    mismatch = np.abs(F)

    i2 = y * (v2 - V) + 1j * bc * v2
    s2 = v2 * np.conj(i2)
    p_l, q_l = s2.real, s2.imag
    p_s = p_l
    for _ in range(80):
        p_s = p_l + 2 * A0 + _side_loss(p_l, q_l, 1.0) + _side_loss(p_s, 0.0, 1.0)
    gen_s = LOAD_P + p_s
    obj = gen_s + p_w + alpha2 * np.sqrt(v_r)
    bad = (
        (np.abs(V) < V_WINDOW[0])
        | (np.abs(V) > V_WINDOW[1])
        | (mismatch > 1e-9)
        | (gen_s < 0)
        | (gen_s > 10.0)
        | (np.abs(q_l) > 2.5)  # converter reactive capability
    )
    return np.where(bad, np.inf, obj)


def oracle_grid_search(sys, v_grid_kv, f_grid_hz, alpha2=0.0,
                       q_grid=None, chunk=24):
    """Exhaustive minimum over the (V_l, F_l) grid with an inner wind-Q scan.

    Returns (best objective, best V_l, best F_l, objective spread across
    the cells adjacent to the argmin).
    """
    if q_grid is None:
        q_grid = np.linspace(-WIND_Q_LIM, WIND_Q_LIM, 81)
    f_arr = np.asarray(f_grid_hz, dtype=float)
    v_arr = np.asarray(v_grid_kv, dtype=float)
    inner_full = np.full((len(v_arr), len(f_arr)), np.inf)
    for i0 in range(0, len(v_arr), chunk):
        vs = v_arr[i0:i0 + chunk]
        V, F, Q = np.meshgrid(vs, f_arr, q_grid, indexing="ij")
        obj = oracle_objective(sys, V, F, Q, alpha2=alpha2)
        inner_full[i0:i0 + chunk] = obj.min(axis=2)
    k = np.unravel_index(np.argmin(inner_full), inner_full.shape)
    best = float(inner_full[k])
    neigh = []
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        a, b = k[0] + di, k[1] + dj
        if 0 <= a < len(v_arr) and 0 <= b < len(f_arr) and np.isfinite(inner_full[a, b]):
            neigh.append(inner_full[a, b] - best)
    cell_spread = float(max(neigh)) if neigh else 0.0
    return best, float(v_arr[k[0]]), float(f_arr[k[1]]), cell_spread
