"""Study drivers: planning, operation, multi-period dispatch, power flow, sweeps.

The planning stage chooses the low-frequency grid's rated voltage and a
preliminary frequency/dispatch; the operation stage re-dispatches hourly
at the chosen voltage with line limits active and a capacitor-switching
penalty.  A damped-Newton power flow solves the same equality system
with controls frozen per the converter operating modes, which serves
three purposes: the fixed-dispatch baseline study, cross-validation of
OPF optima, and a final polish that restores machine-precision
feasibility to converged OPF states before losses are audited.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .admittance import IDENTITY_RATIOS, RatioPoint, series_partials
from .constraints import OpfProblem, Stage
from .model import (
    ConverterSchedule,
    LoadProfile,
    MultiFrequencySystem,
    WeightConfig,
)
from .nlp import SolveOptions, SolveOutcome, check_derivatives, round_discrete, solve_nlp


class PowerFlowError(RuntimeError):
    """Newton power flow failed to converge."""


# ----------------------------------------------------------------------
# operating states and loss accounting
# ----------------------------------------------------------------------

@dataclass
class OperatingState:
    """A fully specified operating point of the system (all per unit)."""

    sys: MultiFrequencySystem
    load_scale: float
    v_r: float
    f_r: float
    e_s: np.ndarray
    f_s: np.ndarray
    e_l: np.ndarray
    f_l: np.ndarray
    p_gen_s: np.ndarray
    q_gen_s: np.ndarray
    q_sh_s: np.ndarray
    p_gen_l: np.ndarray
    q_gen_l: np.ndarray
    q_sh_l: np.ndarray
    p_conv_s: np.ndarray
    q_conv_s: np.ndarray
    p_conv_l: np.ndarray
    q_conv_l: np.ndarray

    @property
    def v_l_kv(self) -> float:
        return float(np.sqrt(self.v_r) * self.sys.v_base_l)

    @property
    def f_l_hz(self) -> float:
        return float(self.f_r * self.sys.f_base)

    def voltage(self, tag: str) -> np.ndarray:
        if tag == "s":
            return self.e_s + 1j * self.f_s
        return self.e_l + 1j * self.f_l

    def load_bus_voltages(self) -> np.ndarray:
        """|V| at the window buses: grid-s PQ buses and every grid-l bus."""
        vs = np.abs(self.voltage("s"))
        vl = np.abs(self.voltage("l"))
        pq = [i for i, b in enumerate(self.sys.grid_s.buses) if b.kind == "pq"]
        return np.concatenate([vs[pq], vl])


def state_from_x(problem: OpfProblem, x: np.ndarray) -> OperatingState:
    lay = problem.layout
    rp = problem.ratio_point(x)
    return OperatingState(
        sys=problem.sys,
        load_scale=problem.load_scale,
        v_r=rp.v_r,
        f_r=rp.f_r,
        e_s=x[lay.e_s].copy(),
        f_s=x[lay.f_s].copy(),
        e_l=x[lay.e_l].copy(),
        f_l=x[lay.f_l].copy(),
        p_gen_s=x[lay.p_gen_s].copy(),
        q_gen_s=x[lay.q_gen_s].copy(),
        q_sh_s=x[lay.q_sh_s].copy(),
        p_gen_l=x[lay.p_gen_l].copy(),
        q_gen_l=x[lay.q_gen_l].copy(),
        q_sh_l=x[lay.q_sh_l].copy(),
        p_conv_s=x[lay.p_conv_s].copy(),
        q_conv_s=x[lay.q_conv_s].copy(),
        p_conv_l=x[lay.p_conv_l].copy(),
        q_conv_l=x[lay.q_conv_l].copy(),
    )


@dataclass
class LossBreakdown:
    """MW losses by component; ``mismatch_pu`` audits the decomposition."""

    transmission_s_mw: float
    transmission_l_mw: float
    converter_mw: np.ndarray
    total_mw: float
    pct_of_load: float
    mismatch_pu: float

    @property
    def converter_total_mw(self) -> float:
        return float(np.sum(self.converter_mw))


def branch_losses(sys: MultiFrequencySystem, tag: str, e: np.ndarray, f: np.ndarray,
                  rp: RatioPoint) -> np.ndarray:
    """Per-line real losses (pu) from exact complex branch flows."""
    grid = sys.grid_s if tag == "s" else sys.grid_l
    v = e + 1j * f
    out = np.zeros(len(grid.lines))
    for i, ln in enumerate(grid.lines):
        sd = series_partials(ln, rp)
        y = sd.g + 1j * sd.b
        ybc = 1j * sd.bc / 2.0
        t = ln.tap
        k = grid.bus_index[ln.from_bus]
        j = grid.bus_index[ln.to_bus]
        s_from = v[k] * np.conj((y + ybc) / t**2 * v[k] - y / t * v[j])
        s_to = v[j] * np.conj((y + ybc) * v[j] - y / t * v[k])
        out[i] = (s_from + s_to).real
    return out


def compute_losses(result, sys: Optional[MultiFrequencySystem] = None) -> LossBreakdown:
    """Aggregate transmission and converter losses of a converged state.

    Accepts an :class:`OperatingState` or any result object carrying one
    in its ``state`` attribute.  The components are checked against the
    dispatch total ``sum(gen) - sum(load)``.
    """
    state: OperatingState = result if isinstance(result, OperatingState) else result.state
    sys = sys or state.sys
    sb = sys.s_base
    trans_s = branch_losses(sys, "s", state.e_s, state.f_s, IDENTITY_RATIOS).sum()
    trans_l = branch_losses(sys, "l", state.e_l, state.f_l,
                            RatioPoint(state.f_r, state.v_r)).sum()
    conv = state.p_conv_s - state.p_conv_l
    total_load = state.load_scale * (
        sum(b.p_load for b in sys.grid_s.buses) + sum(b.p_load for b in sys.grid_l.buses)
    )
    total_gen = state.p_gen_s.sum() + state.p_gen_l.sum()
    total = total_gen - total_load
    mismatch = abs(total - (trans_s + trans_l + conv.sum()))
    return LossBreakdown(
        transmission_s_mw=trans_s * sb,
        transmission_l_mw=trans_l * sb,
        converter_mw=conv * sb,
        total_mw=total * sb,
        pct_of_load=100.0 * total / total_load if total_load > 0 else 0.0,
        mismatch_pu=mismatch,
    )


# ----------------------------------------------------------------------
# power flow with fixed controls
# ----------------------------------------------------------------------

@dataclass
class DispatchSchedule:
    """Fixed quantities for a power-flow solve, keyed by (grid, bus) / name.

    Converter entries override the stations' case-file schedules.  Any
    generator at the grid-s slack bus stays free (it balances grid s);
    the slack converter balances grid l.
    """

    gen_p: dict[tuple[str, int], float] = field(default_factory=dict)
    gen_q: dict[tuple[str, int], float] = field(default_factory=dict)
    cap_q: dict[tuple[str, int], float] = field(default_factory=dict)
    conv: dict[str, ConverterSchedule] = field(default_factory=dict)


def initial_caps(sys: MultiFrequencySystem) -> np.ndarray:
    """Initial capacitor dispatch in layout order (grid s then grid l)."""
    vals = [c.initial for c in sys.grid_s.capacitors]
    vals += [c.initial for c in sys.grid_l.capacitors]
    return np.array(vals)


def baseline_schedule(sys: MultiFrequencySystem, load_scale: float = 1.0) -> DispatchSchedule:
    """Deterministic fixed dispatch built from the case-file schedules.

    Converters follow their stored schedules; wind (grid-l) generators
    run at 80 % of rating; grid-s generators other than the slack share
    the remaining scaled demand in proportion to capacity; capacitors
    hold their initial steps.
    """
    sched = DispatchSchedule()
    for conv in sys.converters:
        sched.conv[conv.name] = conv.schedule
    for g in sys.grid_l.generators:
        sched.gen_p[("l", g.bus)] = g.p_min + 0.8 * (g.p_max - g.p_min)
        bus = sys.grid_l.buses[sys.grid_l.bus_index[g.bus]]
        if bus.kind == "pq":
            sched.gen_q[("l", g.bus)] = 0.0
    total_load = load_scale * sum(b.p_load for b in sys.grid_s.buses)
    injected = -sum(c.schedule.p_s or 0.0 for c in sys.converters)
    remaining = max(total_load - injected, 0.0)
    slack_bus = sys.grid_s.buses[sys.grid_s.slack_index].id
    others = [g for g in sys.grid_s.generators if g.bus != slack_bus]
    cap_total = sum(g.p_max for g in others) or 1.0
    for g in others:
        share = remaining * g.p_max / cap_total
        sched.gen_p[("s", g.bus)] = min(max(share, g.p_min), g.p_max)
        bus = sys.grid_s.buses[sys.grid_s.bus_index[g.bus]]
        if bus.kind == "pq":
            sched.gen_q[("s", g.bus)] = 0.0
    for grid in (sys.grid_s, sys.grid_l):
        for c in grid.capacitors:
            sched.cap_q[(grid.tag, c.bus)] = c.initial
    return sched


def schedule_from_state(state: OperatingState) -> DispatchSchedule:
    """Freeze an operating point's controls into a power-flow schedule."""
    sys = state.sys
    sched = DispatchSchedule()
    slack_bus_s = sys.grid_s.buses[sys.grid_s.slack_index].id
    for i, g in enumerate(sys.grid_s.generators):
        if g.bus == slack_bus_s:
            continue
        sched.gen_p[("s", g.bus)] = float(state.p_gen_s[i])
        bus = sys.grid_s.buses[sys.grid_s.bus_index[g.bus]]
        if bus.kind == "pq":
            sched.gen_q[("s", g.bus)] = float(state.q_gen_s[i])
    for i, g in enumerate(sys.grid_l.generators):
        sched.gen_p[("l", g.bus)] = float(state.p_gen_l[i])
        bus = sys.grid_l.buses[sys.grid_l.bus_index[g.bus]]
        if bus.kind == "pq":
            sched.gen_q[("l", g.bus)] = float(state.q_gen_l[i])
    for i, c in enumerate(sys.grid_s.capacitors):
        sched.cap_q[("s", c.bus)] = float(state.q_sh_s[i])
    for i, c in enumerate(sys.grid_l.capacitors):
        sched.cap_q[("l", c.bus)] = float(state.q_sh_l[i])
    for k, conv in enumerate(sys.converters):
        if conv.is_slack_converter:
            sched.conv[conv.name] = ConverterSchedule(q_s=float(state.q_conv_s[k]))
        else:
            sched.conv[conv.name] = ConverterSchedule(
                p_s=float(state.p_conv_s[k]),
                q_s=float(state.q_conv_s[k]),
                q_l=float(state.q_conv_l[k]),
            )
    return sched


def _apply_pf_modes(sys: MultiFrequencySystem, sched: DispatchSchedule) -> MultiFrequencySystem:
    """Turn voltage-mode converter buses into PV buses with scheduled setpoints."""
    changed_s = {}
    changed_l = {}
    for conv in sys.converters:
        entry = sched.conv.get(conv.name, conv.schedule)
        if conv.mode_s == "PV" and not conv.is_slack_converter:
            v = entry.v_s if entry.v_s is not None else conv.schedule.v_s
            if v is None:
                raise PowerFlowError(f"converter {conv.name}: PV mode needs a scheduled V_s")
            changed_s[conv.bus_s] = v
        if conv.mode_l == "VVdc" and not conv.is_slack_converter:
            v = entry.v_l if entry.v_l is not None else conv.schedule.v_l
            if v is None:
                raise PowerFlowError(f"converter {conv.name}: VVdc mode needs a scheduled V_l")
            changed_l[conv.bus_l] = v
    if not changed_s and not changed_l:
        return sys

    def patch(grid, changed):
        buses = tuple(
            replace(b, kind="pv", v_sched=changed[b.id]) if b.id in changed and b.kind == "pq" else b
            for b in grid.buses
        )
        return replace(grid, buses=buses)

    return replace(sys, grid_s=patch(sys.grid_s, changed_s), grid_l=patch(sys.grid_l, changed_l))


def solve_power_flow(
    sys: MultiFrequencySystem,
    v_l_kv: float,
    f_l_hz: float,
    schedule: DispatchSchedule,
    load_scale: float = 1.0,
    x0: Optional[np.ndarray] = None,
    tol: float = 1e-11,
    max_iter: int = 50,
) -> OperatingState:
    """Damped-Newton solve of the square fixed-control equality system.

    Per the converter operating-mode table, scheduled quantities are
    frozen and the remaining state (voltages, slack powers, the always
    unknown grid-l converter powers) is solved for.  Raises
    :class:`PowerFlowError` after ``max_iter`` Newton iterations.
    """
    pf_sys = _apply_pf_modes(sys, schedule)
    v_r = (v_l_kv / sys.v_base_l) ** 2
    f_r = f_l_hz / sys.f_base
    prob = OpfProblem(pf_sys, "operation", WeightConfig(), load_scale, v_r_fixed=v_r)
    lay = prob.layout
    x = np.zeros(lay.size)
    if x0 is not None:
        x[:] = x0
    else:
        x[lay.e_s] = 1.0
        x[lay.e_l] = 1.0
    x[lay.f_r] = f_r
    free = np.ones(lay.size, dtype=bool)
    free[lay.f_r] = False

    def fix(sl: slice, i: int, value: float) -> None:
        x[sl.start + i] = value
        free[sl.start + i] = False

    slack_bus_s = pf_sys.grid_s.buses[pf_sys.grid_s.slack_index].id
    for grid, sl_p, sl_q in ((pf_sys.grid_s, lay.p_gen_s, lay.q_gen_s),
                             (pf_sys.grid_l, lay.p_gen_l, lay.q_gen_l)):
        for i, g in enumerate(grid.generators):
            if grid.tag == "s" and g.bus == slack_bus_s:
                continue  # grid-s slack generator balances its grid
            key = (grid.tag, g.bus)
            if key not in schedule.gen_p:
                raise PowerFlowError(f"generator at bus {g.bus} (grid {grid.tag}) needs a P schedule")
            fix(sl_p, i, schedule.gen_p[key])
            kind = grid.buses[grid.bus_index[g.bus]].kind
            if kind == "pq":
                fix(sl_q, i, schedule.gen_q.get(key, 0.0))
    for grid, sl_sh in ((pf_sys.grid_s, lay.q_sh_s), (pf_sys.grid_l, lay.q_sh_l)):
        for i, c in enumerate(grid.capacitors):
            fix(sl_sh, i, schedule.cap_q.get((grid.tag, c.bus), c.initial))
    for k, conv in enumerate(pf_sys.converters):
        entry = schedule.conv.get(conv.name, conv.schedule)
        if conv.is_slack_converter:
            fix(lay.q_conv_s, k, entry.q_s if entry.q_s is not None else 0.0)
            continue
        if entry.p_s is None:
            raise PowerFlowError(f"converter {conv.name}: missing scheduled P_s")
        fix(lay.p_conv_s, k, entry.p_s)
        if conv.mode_s == "PQ":
            if entry.q_s is None:
                raise PowerFlowError(f"converter {conv.name}: PQ mode needs a scheduled Q_s")
            fix(lay.q_conv_s, k, entry.q_s)
        if conv.mode_l == "QVdc":
            if entry.q_l is None:
                raise PowerFlowError(f"converter {conv.name}: QVdc mode needs a scheduled Q_l")
            fix(lay.q_conv_l, k, entry.q_l)

    n_free = int(free.sum())
    if n_free != prob.n_eq:
        raise PowerFlowError(
            f"power-flow system is not square: {n_free} unknowns vs {prob.n_eq} equations"
        )
    free_idx = np.flatnonzero(free)

    r = prob.equalities(x)
    norm = float(np.max(np.abs(r)))
    for _ in range(max_iter):
        if norm < tol:
            return state_from_x(prob, x)
        J = prob.equality_jacobian(x)[:, free_idx]
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular power-flow Jacobian: {exc}")
        alpha = 1.0
        while alpha > 1e-4:
            x_try = x.copy()
            x_try[free_idx] += alpha * step
            try:
                r_try = prob.equalities(x_try)
            except ValueError:
                alpha *= 0.5
                continue
            norm_try = float(np.max(np.abs(r_try)))
            if norm_try < norm or norm_try < tol:
                x, r, norm = x_try, r_try, norm_try
                break
            alpha *= 0.5
        else:
            raise PowerFlowError(f"Newton stalled at mismatch {norm:.3e}")
    raise PowerFlowError(f"no convergence after {max_iter} iterations (mismatch {norm:.3e})")


# ----------------------------------------------------------------------
# planning and operation studies
# ----------------------------------------------------------------------

@dataclass
class PlanningResult:
    v_l_kv: float
    f_l_hz: float
    state: OperatingState
    losses: LossBreakdown
    outcome: SolveOutcome
    weights: WeightConfig

    @property
    def lf_loss_mw(self) -> float:
        return self.losses.transmission_l_mw

    @property
    def total_loss_mw(self) -> float:
        return self.losses.total_mw


@dataclass
class OperationResult:
    v_l_kv: float
    f_l_hz: float
    state: OperatingState
    losses: LossBreakdown
    cap_steps: np.ndarray
    cap_switches: int
    outcome: SolveOutcome
    weights: WeightConfig


def _state_to_x(problem: OpfProblem, state: OperatingState) -> np.ndarray:
    lay = problem.layout
    x = np.zeros(lay.size)
    for name in ("e_s", "f_s", "e_l", "f_l", "p_gen_s", "q_gen_s", "q_sh_s",
                 "p_gen_l", "q_gen_l", "q_sh_l", "p_conv_s", "q_conv_s",
                 "p_conv_l", "q_conv_l"):
        x[getattr(lay, name)] = getattr(state, name)
    x[lay.f_r] = state.f_r
    if problem.stage == "planning":
        x[lay.v_r] = state.v_r
    return x


def pf_seeded_start(problem: OpfProblem, f_l_hz: Optional[float] = None) -> np.ndarray:
    """Start vector from a solved fixed-control power flow.

    A converged power flow at the case-file baseline dispatch puts the
    interior-point iteration inside the basin of sensibly-directed
    flows; cold starts on import-dependent systems otherwise risk
    converging to circulating-dispatch local optima.  Falls back to the
    flat start when the baseline power flow does not converge.
    """
    sys = problem.sys
    flat = problem.flat_start()
    lay = problem.layout
    v_r = problem.v_r_fixed if problem.stage == "operation" else float(flat[lay.v_r][0])
    f_hz = f_l_hz if f_l_hz is not None else float(flat[lay.f_r][0]) * sys.f_base
    try:
        state = solve_power_flow(
            sys,
            float(np.sqrt(v_r)) * sys.v_base_l,
            f_hz,
            baseline_schedule(sys, problem.load_scale),
            load_scale=problem.load_scale,
        )
    except PowerFlowError:
        return flat
    x = _state_to_x(problem, state)
    if problem.stage == "planning":
        x[lay.v_r] = v_r
    return x


def _polish(problem: OpfProblem, x: np.ndarray) -> Optional[OperatingState]:
    """Re-solve the power flow at an OPF optimum with controls frozen.

    Restores machine-precision feasibility (the interior-point iterate
    stops at the convergence tolerance); returns None if the refinement
    itself fails, in which case callers keep the raw state.
    """
    state = state_from_x(problem, x)
    try:
        return solve_power_flow(
            problem.sys,
            state.v_l_kv,
            state.f_l_hz,
            schedule_from_state(state),
            load_scale=problem.load_scale,
            x0=_pf_start_from_state(problem, state, x),
        )
    except PowerFlowError:
        return None


def _pf_start_from_state(problem: OpfProblem, state: OperatingState, x: np.ndarray) -> np.ndarray:
    if problem.stage == "operation":
        return x.copy()
    lay_op = OpfProblem(problem.sys, "operation", problem.weights,
                        problem.load_scale, v_r_fixed=state.v_r).layout
    lay_pl = problem.layout
    x_op = np.zeros(lay_op.size)
    for name, sl in lay_op.slices().items():
        if name == "v_r":
            continue
        x_op[sl] = x[lay_pl.slices()[name]]
    return x_op


def solve_planning(
    sys: MultiFrequencySystem,
    load_scale: float,
    weights: WeightConfig,
    options: Optional[SolveOptions] = None,
    warm: Optional[np.ndarray] = None,
    polish: bool = True,
) -> PlanningResult:
    """Planning OPF: optimal rated voltage/frequency with no line limits."""
    problem = OpfProblem(sys, "planning", weights, load_scale)
    nlp = problem.to_nlp()
    opts = options or SolveOptions()
    start = warm if warm is not None else pf_seeded_start(problem)
    outcome = solve_nlp(nlp, replace(opts, start=start))
    if not outcome.converged:
        # deterministic fallback: the other standard start
        outcome = solve_nlp(nlp, replace(opts, start=problem.flat_start()))
    if outcome.converged and problem.cap_steps():
        outcome = round_discrete(outcome, problem.cap_steps(), nlp, opts)
    state = state_from_x(problem, outcome.x)
    if outcome.converged and polish:
        refined = _polish(problem, outcome.x)
        if refined is not None:
            state = refined
    return PlanningResult(
        v_l_kv=state.v_l_kv,
        f_l_hz=state.f_l_hz,
        state=state,
        losses=compute_losses(state),
        outcome=outcome,
        weights=weights,
    )


def solve_operation(
    sys: MultiFrequencySystem,
    v_l_kv: float,
    load_scale: float,
    prev_caps: Optional[np.ndarray],
    weights: WeightConfig,
    options: Optional[SolveOptions] = None,
    warm: Optional[np.ndarray] = None,
    f_l_fixed_hz: Optional[float] = None,
    polish: bool = True,
) -> OperationResult:
    """Operation OPF at fixed rated voltage, with the discrete capacitor pass.

    ``f_l_fixed_hz`` pins the operating frequency (the fixed-frequency
    comparison case); otherwise the frequency is a control variable.
    """
    if prev_caps is None:
        prev_caps = initial_caps(sys)
    v_r = (v_l_kv / sys.v_base_l) ** 2
    run_sys = sys
    if f_l_fixed_hz is not None:
        fb = replace(sys.bounds, f_min_hz=f_l_fixed_hz, f_max_hz=f_l_fixed_hz)
        run_sys = replace(sys, bounds=fb)
    problem = OpfProblem(run_sys, "operation", weights, load_scale,
                         v_r_fixed=v_r, prev_caps=prev_caps)
    nlp = problem.to_nlp()
    opts = options or SolveOptions()
    if warm is not None:
        start = warm.copy()
        if f_l_fixed_hz is not None:
            start[problem.layout.f_r] = f_l_fixed_hz / sys.f_base
    else:
        start = pf_seeded_start(problem, f_l_fixed_hz)
    outcome = solve_nlp(nlp, replace(opts, start=start))
    if not outcome.converged:
        fallback = pf_seeded_start(problem, f_l_fixed_hz) if warm is not None else problem.flat_start()
        outcome = solve_nlp(nlp, replace(opts, start=fallback))
    if outcome.converged and problem.cap_steps():
        outcome = round_discrete(outcome, problem.cap_steps(), nlp, opts)
    state = state_from_x(problem, outcome.x)
    if outcome.converged and polish:
        refined = _polish(problem, outcome.x)
        if refined is not None:
            state = refined
    cap_steps = np.concatenate([state.q_sh_s, state.q_sh_l])
    switches = int(np.sum(~np.isclose(cap_steps, prev_caps, atol=1e-9)))
    return OperationResult(
        v_l_kv=v_l_kv,
        f_l_hz=state.f_l_hz,
        state=state,
        losses=compute_losses(state),
        cap_steps=cap_steps,
        cap_switches=switches,
        outcome=outcome,
        weights=weights,
    )


def run_multi_period(
    sys: MultiFrequencySystem,
    v_l_kv: float,
    profile: LoadProfile,
    weights: WeightConfig,
    options: Optional[SolveOptions] = None,
    warm: Optional[np.ndarray] = None,
    f_l_fixed_hz: Optional[float] = None,
) -> list[OperationResult]:
    """Sequential hourly solves; each hour warm-starts from the previous.

    The capacitor dispatch chains through the switching penalty.  A
    failed hour is recorded and the chain continues from the last
    converged point.
    """
    results: list[OperationResult] = []
    prev_caps = initial_caps(sys)
    for scale in profile.scale:
        res = solve_operation(
            sys, v_l_kv, scale, prev_caps, weights,
            options=options, warm=warm, f_l_fixed_hz=f_l_fixed_hz,
        )
        results.append(res)
        if res.outcome.converged:
            warm = res.outcome.x
            prev_caps = res.cap_steps
    return results


# ----------------------------------------------------------------------
# two-terminal sweep studies
# ----------------------------------------------------------------------

@dataclass
class SweepResult:
    """Loss curves over one sweep axis; NaN marks diverged points."""

    axis: np.ndarray
    transmission_loss_mw: np.ndarray
    converter_loss_mw: np.ndarray
    total_loss_mw: np.ndarray
    receiving_v_pu: np.ndarray
    label: str = ""


def _sweep_workers() -> int:
    env = os.environ.get("MFOPF_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _receiving_bus_index(sys: MultiFrequencySystem) -> int:
    recv = [c for c in sys.converters if not c.is_slack_converter]
    if not recv:
        raise ValueError("two-terminal case needs a non-slack converter")
    return sys.grid_l.bus_index[recv[0].bus_l]


def sweep_frequency(
    twoterm: MultiFrequencySystem,
    freqs: Sequence[float],
    q_schedule_mvar: float,
    p_transfer_mw: float,
    v_l_kv: float = 260.0,
) -> SweepResult:
    """Loss/voltage curves of a point-to-point line over operating frequency.

    The receiving converter delivers ``p_transfer_mw`` to its 60-Hz bus
    at zero reactive exchange and injects ``q_schedule_mvar`` into the
    low-frequency line; the sending converter balances.
    """
    sb = twoterm.s_base
    recv = [c for c in twoterm.converters if not c.is_slack_converter][0]
    sched = DispatchSchedule()
    sched.conv[recv.name] = ConverterSchedule(
        p_s=-p_transfer_mw / sb, q_s=0.0, q_l=q_schedule_mvar / sb
    )
    recv_bus = _receiving_bus_index(twoterm)

    def solve_point(f_hz: float):
        try:
            st = solve_power_flow(twoterm, v_l_kv, f_hz, sched)
        except PowerFlowError:
            return (np.nan, np.nan, np.nan, np.nan)
        losses = compute_losses(st)
        v_recv = abs(st.voltage("l")[recv_bus])
        return (losses.transmission_l_mw, losses.converter_total_mw,
                losses.total_mw, v_recv)

    with ThreadPoolExecutor(max_workers=_sweep_workers()) as pool:
        rows = list(pool.map(solve_point, freqs))
    arr = np.array(rows)
    return SweepResult(
        axis=np.asarray(freqs, dtype=float),
        transmission_loss_mw=arr[:, 0],
        converter_loss_mw=arr[:, 1],
        total_loss_mw=arr[:, 2],
        receiving_v_pu=arr[:, 3],
        label=f"{v_l_kv:g} kV, Q={q_schedule_mvar:g} Mvar",
    )


def hvdc_baseline(
    p_transfer_mw: Sequence[float],
    line_km: float = 200.0,
    r_ohm_per_km: float = 0.028,
    v_pole_kv: float = 150.0,
    converter=None,
) -> SweepResult:
    """Bipolar HVdc reference losses: series-resistance line, same VSC model.

    Each pole carries half the transfer at ``v_pole_kv``; each of the
    four converters (two poles, two ends) carries half the transfer and
    dissipates per the shared quadratic loss model.
    """
    p = np.asarray(p_transfer_mw, dtype=float)
    r_pole = r_ohm_per_km * line_km
    i_ka = (p / 2.0) / v_pole_kv
    line_mw = 2.0 * i_ka**2 * r_pole
    if converter is not None:
        sb = 100.0
        u = (p / 2.0 / sb) ** 2
        per_vsc = (converter.a0 + u * (converter.r1 + converter.a2)
                   + np.sqrt(u) * converter.a1) * sb
        conv_mw = 4.0 * per_vsc
    else:
        conv_mw = np.zeros_like(p)
    v_recv = (v_pole_kv - i_ka * r_pole) / v_pole_kv
    return SweepResult(
        axis=p,
        transmission_loss_mw=line_mw,
        converter_loss_mw=conv_mw,
        total_loss_mw=line_mw + conv_mw,
        receiving_v_pu=v_recv,
        label=f"HVdc ±{v_pole_kv:g} kV",
    )


def sweep_power_voltage(
    twoterm: MultiFrequencySystem,
    powers_mw: Sequence[float],
    voltages_kv: Sequence[float],
    f_fixed_hz: float,
    include_hvdc: bool = True,
) -> list[SweepResult]:
    """Loss curves over transfer level, one curve per operating voltage.

    Optionally appends the bipolar HVdc reference curve built from the
    same conductor data and converter loss model.
    """
    sb = twoterm.s_base
    recv = [c for c in twoterm.converters if not c.is_slack_converter][0]
    recv_bus = _receiving_bus_index(twoterm)
    line = twoterm.grid_l.lines[0]
    z_base = twoterm.v_base_l**2 / sb

    def solve_point(args):
        v_kv, p_mw = args
        sched = DispatchSchedule()
        sched.conv[recv.name] = ConverterSchedule(p_s=-p_mw / sb, q_s=0.0, q_l=0.0)
        try:
            st = solve_power_flow(twoterm, v_kv, f_fixed_hz, sched)
        except PowerFlowError:
            return (np.nan, np.nan, np.nan, np.nan)
        losses = compute_losses(st)
        return (losses.transmission_l_mw, losses.converter_total_mw,
                losses.total_mw, abs(st.voltage("l")[recv_bus]))

    out = []
    for v_kv in voltages_kv:
        points = [(v_kv, p) for p in powers_mw]
        with ThreadPoolExecutor(max_workers=_sweep_workers()) as pool:
            rows = list(pool.map(solve_point, points))
        arr = np.array(rows)
        out.append(SweepResult(
            axis=np.asarray(powers_mw, dtype=float),
            transmission_loss_mw=arr[:, 0],
            converter_loss_mw=arr[:, 1],
            total_loss_mw=arr[:, 2],
            receiving_v_pu=arr[:, 3],
            label=f"LF-HVac {v_kv:g} kV",
        ))
    if include_hvdc:
        # km length recovered from the stored per-unit base impedance
        r_ohm = line.r_base * z_base
        out.append(hvdc_baseline(powers_mw, line_km=1.0, r_ohm_per_km=r_ohm,
                                 converter=twoterm.converters[0]))
    return out


# ----------------------------------------------------------------------
# derivative audit over the bundled problems
# ----------------------------------------------------------------------

def _interior_point(problem: OpfProblem, seed: int = 7) -> np.ndarray:
    """A strictly interior, slightly asymmetric evaluation point."""
    rng = np.random.default_rng(seed)
    x = problem.flat_start()
    lay = problem.layout
    for sl in (lay.e_s, lay.e_l):
        x[sl] += rng.uniform(-0.02, 0.02, sl.stop - sl.start)
    for sl in (lay.f_s, lay.f_l):
        x[sl] += rng.uniform(-0.05, 0.05, sl.stop - sl.start)
    for sl in (lay.p_conv_s, lay.q_conv_s, lay.p_conv_l, lay.q_conv_l):
        x[sl] += rng.uniform(-0.5, 0.5, sl.stop - sl.start)
    return x


def check_case_derivatives(
    sys: MultiFrequencySystem,
    v_l_kv: float = 345.0,
    load_scale: float = 1.0,
) -> dict[str, dict[str, float]]:
    """Finite-difference audit of both stages' Jacobians and Hessians."""
    report: dict[str, dict[str, float]] = {}
    for stage in ("planning", "operation"):
        kwargs = {"v_r_fixed": (v_l_kv / sys.v_base_l) ** 2} if stage == "operation" else {}
        problem = OpfProblem(sys, stage, WeightConfig(alpha1=1.0, alpha2=0.1, alpha3=0.2),
                             load_scale, **kwargs)
        x = _interior_point(problem)
        sub = check_derivatives(problem.to_nlp(), x)
        for family, errs in sub.items():
            report[f"{stage}/{family}"] = errs
    return report


# ----------------------------------------------------------------------
# result records for serialization
# ----------------------------------------------------------------------

def planning_record(res: PlanningResult) -> dict:
    return {
        "v_l_kv": res.v_l_kv,
        "f_l_hz": res.f_l_hz,
        "lf_loss_mw": res.lf_loss_mw,
        "total_loss_mw": res.total_loss_mw,
        "loss_pct": res.losses.pct_of_load,
        "iterations": res.outcome.iterations,
        "status": res.outcome.status,
        "alpha1": res.weights.alpha1,
        "alpha2": res.weights.alpha2,
        "dispatch": _dispatch_dict(res.state),
    }


def operation_record(res: OperationResult, hour: int = 0) -> dict:
    v_loads = res.state.load_bus_voltages()
    return {
        "hour": hour,
        "f_l_hz": res.f_l_hz,
        "v_l_kv": res.v_l_kv,
        "total_loss_mw": res.losses.total_mw,
        "loss_pct": res.losses.pct_of_load,
        "max_load_v_pu": float(v_loads.max()),
        "min_load_v_pu": float(v_loads.min()),
        "cap_switches": res.cap_switches,
        "iterations": res.outcome.iterations,
        "status": res.outcome.status,
        "dispatch": _dispatch_dict(res.state),
    }


def state_record(state: OperatingState, losses: LossBreakdown) -> dict:
    v_loads = state.load_bus_voltages()
    return {
        "hour": 0,
        "f_l_hz": state.f_l_hz,
        "v_l_kv": state.v_l_kv,
        "total_loss_mw": losses.total_mw,
        "loss_pct": losses.pct_of_load,
        "max_load_v_pu": float(v_loads.max()),
        "min_load_v_pu": float(v_loads.min()),
        "cap_switches": 0,
        "dispatch": _dispatch_dict(state),
    }


def sweep_records(res: SweepResult) -> list[dict]:
    return [
        {
            "label": res.label,
            "axis": float(res.axis[i]),
            "transmission_loss_mw": float(res.transmission_loss_mw[i]),
            "converter_loss_mw": float(res.converter_loss_mw[i]),
            "total_loss_mw": float(res.total_loss_mw[i]),
            "receiving_v_pu": float(res.receiving_v_pu[i]),
        }
        for i in range(len(res.axis))
    ]


def _dispatch_dict(state: OperatingState) -> dict:
    sb = state.sys.s_base
    return {
        "p_gen_s_mw": (state.p_gen_s * sb).tolist(),
        "q_gen_s_mvar": (state.q_gen_s * sb).tolist(),
        "p_gen_l_mw": (state.p_gen_l * sb).tolist(),
        "q_gen_l_mvar": (state.q_gen_l * sb).tolist(),
        "q_sh_s_mvar": (state.q_sh_s * sb).tolist(),
        "q_sh_l_mvar": (state.q_sh_l * sb).tolist(),
        "p_conv_s_mw": (state.p_conv_s * sb).tolist(),
        "q_conv_s_mvar": (state.q_conv_s * sb).tolist(),
        "p_conv_l_mw": (state.p_conv_l * sb).tolist(),
        "q_conv_l_mvar": (state.q_conv_l * sb).tolist(),
    }
