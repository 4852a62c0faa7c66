"""OPF residuals, Jacobians and Hessians over the flattened variable vector.

This module owns the variable-layout contract.  The vector is ordered

    [e_s, f_s, e_l, f_l | v_r (planning only), f_r,
     p_gen_s, q_gen_s, q_sh_s, p_gen_l, q_gen_l, q_sh_l,
     p_conv_s, q_conv_s, p_conv_l, q_conv_l]

where voltages are rectangular components per bus.  The planning stage
treats the squared-voltage ratio ``v_r`` of the low-frequency grid as a
variable; the operation stage fixes it and adds line current/power
limits.  Capacitor dispatch variables are continuous here (the discrete
pass lives in :mod:`mfopf.nlp`).

Derivative conventions: power injections are bilinear in the
conductance/susceptance matrices, so every frequency-ratio derivative of
a low-frequency balance row is the same bilinear form evaluated with the
corresponding derivative matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from .admittance import (
    IDENTITY_RATIOS,
    AdmittanceBundle,
    RatioPoint,
    SeriesPartials,
    admittance_partials,
    build_admittance,
    series_partials,
)
from .model import GridModel, MultiFrequencySystem, WeightConfig

Stage = Literal["planning", "operation"]

#: Smoothing added under the square roots of the converter loss balance so
#: the residual stays twice differentiable at zero loading.
SQRT_SMOOTHING = 1e-8

#: Terminal voltages below this magnitude make the converter loss balance
#: numerically meaningless.
MIN_CONVERTER_VOLTAGE = 0.1


class DegenerateVoltageError(ValueError):
    """Converter terminal voltage magnitude fell below the guard level."""


def _dense(m) -> np.ndarray:
    return np.asarray(m.todense()) if hasattr(m, "todense") else m


def injected_power(bundle: AdmittanceBundle, e: np.ndarray, f: np.ndarray, k: int) -> tuple[float, float]:
    """Real/reactive power injected into the grid at bus ``k``.

    P_k = G_k:(e_k e + f_k f) + B_k:(f_k e - e_k f)
    Q_k = G_k:(f_k e - e_k f) - B_k:(e_k e + f_k f)
    """
    G = _dense(bundle.g)
    B = _dense(bundle.b)
    ge, gf = G[k] @ e, G[k] @ f
    be, bf = B[k] @ e, B[k] @ f
    p = e[k] * ge + f[k] * gf + f[k] * be - e[k] * bf
    q = f[k] * ge - e[k] * gf - e[k] * be - f[k] * bf
    return float(p), float(q)


def _pq_values(G, B, e, f) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized bus injections for (possibly derivative) matrices G, B."""
    ir = G @ e - B @ f
    ii = G @ f + B @ e
    return e * ir + f * ii, f * ir - e * ii


def _pq_jacobian_blocks(G, B, e, f):
    """dP/de, dP/df, dQ/de, dQ/df as dense bus-by-bus blocks."""
    G = _dense(G)
    B = _dense(B)
    ir = G @ e - B @ f
    ii = G @ f + B @ e
    n = len(e)
    dP_de = G * e[:, None] + B * f[:, None]
    dP_df = G * f[:, None] - B * e[:, None]
    dQ_de = G * f[:, None] - B * e[:, None]
    dQ_df = -G * e[:, None] - B * f[:, None]
    idx = np.arange(n)
    dP_de[idx, idx] += ir
    dP_df[idx, idx] += ii
    dQ_de[idx, idx] -= ii
    dQ_df[idx, idx] += ir
    return dP_de, dP_df, dQ_de, dQ_df


def _stamp_pq_hessian(H, sl_e: slice, sl_f: slice, G, B, lam_p, lam_q) -> None:
    """Add sum_k lam_p[k] H(P_k) + lam_q[k] H(Q_k) over the (e, f) block."""
    G = _dense(G)
    B = _dense(B)
    s_ee = G * (lam_p[:, None] + lam_p[None, :]) - B * (lam_q[:, None] + lam_q[None, :])
    s_ef = B * (lam_p[None, :] - lam_p[:, None]) + G * (lam_q[None, :] - lam_q[:, None])
    H[sl_e, sl_e] += s_ee
    H[sl_f, sl_f] += s_ee
    H[sl_e, sl_f] += s_ef
    H[sl_f, sl_e] += s_ef.T


@dataclass(frozen=True)
class VariableLayout:
    """Bijective index map over the flattened OPF variable vector."""

    stage: Stage
    size: int
    e_s: slice
    f_s: slice
    e_l: slice
    f_l: slice
    v_r: slice
    f_r: slice
    p_gen_s: slice
    q_gen_s: slice
    q_sh_s: slice
    p_gen_l: slice
    q_gen_l: slice
    q_sh_l: slice
    p_conv_s: slice
    q_conv_s: slice
    p_conv_l: slice
    q_conv_l: slice

    def slices(self) -> dict[str, slice]:
        return {
            name: getattr(self, name)
            for name in (
                "e_s", "f_s", "e_l", "f_l", "v_r", "f_r",
                "p_gen_s", "q_gen_s", "q_sh_s", "p_gen_l", "q_gen_l", "q_sh_l",
                "p_conv_s", "q_conv_s", "p_conv_l", "q_conv_l",
            )
        }


def make_layout(sys: MultiFrequencySystem, stage: Stage) -> VariableLayout:
    n_s, n_l = sys.grid_s.n_bus, sys.grid_l.n_bus
    counts = [
        ("e_s", n_s), ("f_s", n_s), ("e_l", n_l), ("f_l", n_l),
        ("v_r", 1 if stage == "planning" else 0),
        ("f_r", 1),
        ("p_gen_s", len(sys.grid_s.generators)),
        ("q_gen_s", len(sys.grid_s.generators)),
        ("q_sh_s", len(sys.grid_s.capacitors)),
        ("p_gen_l", len(sys.grid_l.generators)),
        ("q_gen_l", len(sys.grid_l.generators)),
        ("q_sh_l", len(sys.grid_l.capacitors)),
        ("p_conv_s", len(sys.converters)),
        ("q_conv_s", len(sys.converters)),
        ("p_conv_l", len(sys.converters)),
        ("q_conv_l", len(sys.converters)),
    ]
    slices: dict[str, slice] = {}
    pos = 0
    for name, cnt in counts:
        slices[name] = slice(pos, pos + cnt)
        pos += cnt
    return VariableLayout(stage=stage, size=pos, **slices)


@dataclass(frozen=True)
class _GridIndex:
    """Precomputed integer indices of one grid, in bus-array positions."""

    gen_bus: np.ndarray
    cap_bus: np.ndarray
    cap_steps: tuple[np.ndarray, ...]
    cap_initial: np.ndarray
    line_from: np.ndarray
    line_to: np.ndarray
    vset_bus: np.ndarray
    vset_val: np.ndarray
    window_bus: np.ndarray
    p_load: np.ndarray
    q_load: np.ndarray
    i_max: np.ndarray
    p_max: np.ndarray
    slack: int


def _index_grid(grid: GridModel, load_scale: float, window_all: bool) -> _GridIndex:
    bi = grid.bus_index
    vset = [(bi[b.id], b.v_sched) for b in grid.buses if b.kind in ("slack", "pv")]
    if window_all:
        window = [bi[b.id] for b in grid.buses]
    else:
        window = [bi[b.id] for b in grid.buses if b.kind == "pq"]
    return _GridIndex(
        gen_bus=np.array([bi[g.bus] for g in grid.generators], dtype=int),
        cap_bus=np.array([bi[c.bus] for c in grid.capacitors], dtype=int),
        cap_steps=tuple(np.array(c.steps, dtype=float) for c in grid.capacitors),
        cap_initial=np.array([c.initial for c in grid.capacitors], dtype=float),
        line_from=np.array([bi[ln.from_bus] for ln in grid.lines], dtype=int),
        line_to=np.array([bi[ln.to_bus] for ln in grid.lines], dtype=int),
        vset_bus=np.array([i for i, _ in vset], dtype=int),
        vset_val=np.array([v for _, v in vset], dtype=float),
        window_bus=np.array(window, dtype=int),
        p_load=np.array([b.p_load for b in grid.buses]) * load_scale,
        q_load=np.array([b.q_load for b in grid.buses]) * load_scale,
        i_max=np.array([ln.i_max if ln.i_max is not None else np.inf for ln in grid.lines]),
        p_max=np.array([ln.p_max if ln.p_max is not None else np.inf for ln in grid.lines]),
        slack=grid.slack_index,
    )


def _side_loss_terms(p, q, e, f, c, a1):
    """Value, gradient and Hessian of one VSC side's loss expression.

    phi = c * u + a1 * sqrt(u + eps) with u = (p^2 + q^2) / (e^2 + f^2).
    Returns (value, grad[4], hess[4, 4]) over (p, q, e, f).
    """
    U = e * e + f * f
    if U < MIN_CONVERTER_VOLTAGE**2:
        raise DegenerateVoltageError(
            f"converter terminal voltage magnitude {math.sqrt(U):.4f} pu below guard"
        )
    s2 = p * p + q * q
    u = s2 / U
    sq = math.sqrt(u + SQRT_SMOOTHING)
    du = np.array([2 * p / U, 2 * q / U, -2 * e * u / U, -2 * f * u / U])
    t = c + a1 / (2 * sq)
    val = c * u + a1 * sq
    grad = t * du
    d2u = np.zeros((4, 4))
    d2u[0, 0] = 2 / U
    d2u[1, 1] = 2 / U
    d2u[0, 2] = d2u[2, 0] = -4 * p * e / U**2
    d2u[0, 3] = d2u[3, 0] = -4 * p * f / U**2
    d2u[1, 2] = d2u[2, 1] = -4 * q * e / U**2
    d2u[1, 3] = d2u[3, 1] = -4 * q * f / U**2
    d2u[2, 2] = (2 * u / U) * (4 * e * e / U - 1)
    d2u[3, 3] = (2 * u / U) * (4 * f * f / U - 1)
    d2u[2, 3] = d2u[3, 2] = 8 * e * f * u / U**2
    hess = t * d2u - (a1 / (4 * sq**3)) * np.outer(du, du)
    return val, grad, hess


def _modulation_terms(p, q, e, f, g, b, m2):
    """Value/gradient/Hessian of the over-modulation limit expression.

    h = (p - U g)^2 + (q + U b)^2 - m2 * U, with U = e^2 + f^2 and
    m2 = (k_m v_dc)^2 (g^2 + b^2).
    """
    U = e * e + f * f
    A = p - U * g
    C = q + U * b
    val = A * A + C * C - m2 * U
    grad = np.array([
        2 * A,
        2 * C,
        -4 * A * e * g + 4 * C * e * b - 2 * m2 * e,
        -4 * A * f * g + 4 * C * f * b - 2 * m2 * f,
    ])
    gb2 = g * g + b * b
    hess = np.zeros((4, 4))
    hess[0, 0] = 2.0
    hess[1, 1] = 2.0
    hess[0, 2] = hess[2, 0] = -4 * e * g
    hess[0, 3] = hess[3, 0] = -4 * f * g
    hess[1, 2] = hess[2, 1] = 4 * e * b
    hess[1, 3] = hess[3, 1] = 4 * f * b
    hess[2, 2] = 8 * e * e * gb2 - 4 * A * g + 4 * C * b - 2 * m2
    hess[3, 3] = 8 * f * f * gb2 - 4 * A * g + 4 * C * b - 2 * m2
    hess[2, 3] = hess[3, 2] = 8 * e * f * gb2
    return val, grad, hess


class OpfProblem:
    """Evaluators for one OPF instance (fixed system, stage and loading).

    All evaluators are pure functions of the variable vector; a small
    per-vector cache avoids rebuilding the low-frequency admittance
    bundle when value/Jacobian/Hessian are requested at the same point.
    """

    def __init__(
        self,
        sys: MultiFrequencySystem,
        stage: Stage,
        weights: WeightConfig,
        load_scale: float = 1.0,
        v_r_fixed: Optional[float] = None,
        prev_caps: Optional[np.ndarray] = None,
    ):
        if stage == "operation" and v_r_fixed is None:
            raise ValueError("operation stage requires a fixed voltage ratio")
        self.sys = sys
        self.stage: Stage = stage
        self.weights = weights
        self.load_scale = load_scale
        self.v_r_fixed = v_r_fixed
        self.layout = make_layout(sys, stage)
        self.idx_s = _index_grid(sys.grid_s, load_scale, window_all=False)
        self.idx_l = _index_grid(sys.grid_l, load_scale, window_all=True)
        self.n_conv = len(sys.converters)
        self.conv_bus_s = np.array([sys.grid_s.bus_index[c.bus_s] for c in sys.converters], dtype=int)
        self.conv_bus_l = np.array([sys.grid_l.bus_index[c.bus_l] for c in sys.converters], dtype=int)

        self.bundle_s = build_admittance(sys.grid_s, IDENTITY_RATIOS)
        self._series_s = [series_partials(ln, IDENTITY_RATIOS) for ln in sys.grid_s.lines]

        caps_all = list(self.idx_s.cap_initial) + list(self.idx_l.cap_initial)
        if prev_caps is None:
            prev_caps = np.array(caps_all, dtype=float)
        self.prev_caps = np.asarray(prev_caps, dtype=float)

        self._build_families()
        self._build_bounds()
        self._cache_key: Optional[bytes] = None
        self._cache: dict = {}

    # ------------------------------------------------------------------
    # structure
    # ------------------------------------------------------------------
    def _build_families(self) -> None:
        lay = self.layout
        n_s, n_l = self.sys.grid_s.n_bus, self.sys.grid_l.n_bus
        eq = []
        pos = 0
        for name, cnt in (
            ("balance_p_s", n_s),
            ("balance_q_s", n_s),
            ("balance_p_l", n_l),
            ("balance_q_l", n_l),
            ("voltage_s", len(self.idx_s.vset_bus)),
            ("voltage_l", len(self.idx_l.vset_bus)),
            ("angle_ref", 2),
            ("converter_balance", self.n_conv),
        ):
            eq.append((name, slice(pos, pos + cnt)))
            pos += cnt
        self.eq_families = eq
        self.n_eq = pos

        ineq = []
        pos = 0
        families = [
            ("v_window_s", len(self.idx_s.window_bus)),
            ("v_window_l", len(self.idx_l.window_bus)),
            ("converter_current_s", self.n_conv),
            ("converter_current_l", self.n_conv),
            ("converter_modulation_s", self.n_conv),
            ("converter_modulation_l", self.n_conv),
            ("converter_reactive_s", self.n_conv),
            ("converter_reactive_l", self.n_conv),
        ]
        if self.stage == "operation":
            families += [
                ("line_current_s", len(self.sys.grid_s.lines)),
                ("line_power_s", len(self.sys.grid_s.lines)),
                ("line_current_l", len(self.sys.grid_l.lines)),
                ("line_power_l", len(self.sys.grid_l.lines)),
            ]
        for name, cnt in families:
            ineq.append((name, slice(pos, pos + cnt)))
            pos += cnt
        self.ineq_families = ineq
        self.n_ineq = pos

        lo = np.full(pos, -np.inf)
        hi = np.full(pos, np.inf)
        fam = dict(ineq)
        vmin, vmax = self.sys.v_load_limits
        for name, grid_idx in (("v_window_s", self.idx_s), ("v_window_l", self.idx_l)):
            lo[fam[name]] = vmin**2
            hi[fam[name]] = vmax**2
        hi[fam["converter_current_s"]] = 0.0
        hi[fam["converter_current_l"]] = 0.0
        hi[fam["converter_modulation_s"]] = 0.0
        hi[fam["converter_modulation_l"]] = 0.0
        qcap = np.array([c.k_q * c.s_rated for c in self.sys.converters])
        for name in ("converter_reactive_s", "converter_reactive_l"):
            lo[fam[name]] = -qcap
            hi[fam[name]] = qcap
        if self.stage == "operation":
            hi[fam["line_current_s"]] = self.idx_s.i_max**2
            hi[fam["line_current_l"]] = self.idx_l.i_max**2
            lo[fam["line_power_s"]] = -self.idx_s.p_max
            hi[fam["line_power_s"]] = self.idx_s.p_max
            lo[fam["line_power_l"]] = -self.idx_l.p_max
            hi[fam["line_power_l"]] = self.idx_l.p_max
        self.ineq_lower = lo
        self.ineq_upper = hi

    def _build_bounds(self) -> None:
        lay = self.layout
        lo = np.full(lay.size, -np.inf)
        hi = np.full(lay.size, np.inf)
        b = self.sys.bounds
        if self.stage == "planning":
            lo[lay.v_r] = (b.v_min_kv / self.sys.v_base_l) ** 2
            hi[lay.v_r] = (b.v_max_kv / self.sys.v_base_l) ** 2
        lo[lay.f_r] = b.f_min_hz / self.sys.f_base
        hi[lay.f_r] = b.f_max_hz / self.sys.f_base
        for grid, slp, slq, slsh in (
            (self.sys.grid_s, lay.p_gen_s, lay.q_gen_s, lay.q_sh_s),
            (self.sys.grid_l, lay.p_gen_l, lay.q_gen_l, lay.q_sh_l),
        ):
            if grid.generators:
                lo[slp] = [g.p_min for g in grid.generators]
                hi[slp] = [g.p_max for g in grid.generators]
                lo[slq] = [g.q_min for g in grid.generators]
                hi[slq] = [g.q_max for g in grid.generators]
            if grid.capacitors:
                lo[slsh] = [min(c.steps) for c in grid.capacitors]
                hi[slsh] = [max(c.steps) for c in grid.capacitors]
        self.x_lower = lo
        self.x_upper = hi

    def cap_steps(self) -> list[tuple[int, np.ndarray]]:
        """(variable index, admissible steps) for every capacitor."""
        lay = self.layout
        out = []
        for i, steps in enumerate(self.idx_s.cap_steps):
            out.append((lay.q_sh_s.start + i, steps))
        for i, steps in enumerate(self.idx_l.cap_steps):
            out.append((lay.q_sh_l.start + i, steps))
        return out

    def flat_start(self) -> np.ndarray:
        """Flat start: unit voltages, mid-range ratios, proportional dispatch.

        Every generator starts at its capacity share of the total system
        load (converter transfers start at zero, so the presolve routes
        any grid imbalance through the converters in the natural
        direction), capacitors at their initial steps.
        """
        lay = self.layout
        x = np.zeros(lay.size)
        x[lay.e_s] = 1.0
        x[lay.e_l] = 1.0
        lo, hi = self.x_lower, self.x_upper
        if self.stage == "planning":
            x[lay.v_r] = 0.5 * (lo[lay.v_r] + hi[lay.v_r])
        x[lay.f_r] = 0.5 * (lo[lay.f_r] + hi[lay.f_r])
        total_load = self.idx_s.p_load.sum() + self.idx_l.p_load.sum()
        cap_all = sum(
            max(g.p_max, 0.0)
            for grid in (self.sys.grid_s, self.sys.grid_l)
            for g in grid.generators
        )
        ratio = total_load / cap_all if cap_all > 0 else 0.0
        for grid, slp, slq in (
            (self.sys.grid_s, lay.p_gen_s, lay.q_gen_s),
            (self.sys.grid_l, lay.p_gen_l, lay.q_gen_l),
        ):
            if not grid.generators:
                continue
            p0 = ratio * np.maximum(hi[slp], 0.0)
            margin = 0.01 * np.where(np.isfinite(hi[slp] - lo[slp]), hi[slp] - lo[slp], 1.0)
            x[slp] = np.clip(p0, lo[slp] + margin, hi[slp] - margin)
            x[slq] = 0.5 * (lo[slq] + hi[slq])
        # converter transfers start at the rating-shared value that levels
        # each grid's generation/load imbalance (starting them at zero on
        # import-dependent systems seeds circulating local optima)
        if self.n_conv:
            deficit_s = self.idx_s.p_load.sum() - x[lay.p_gen_s].sum()
            rating = np.array([c.s_rated for c in self.sys.converters])
            share = rating / rating.sum()
            x[lay.p_conv_s] = -deficit_s * share
            x[lay.p_conv_l] = -deficit_s * share
        for slsh, idx in ((lay.q_sh_s, self.idx_s), (lay.q_sh_l, self.idx_l)):
            if slsh.stop > slsh.start:
                margin = 0.01 * (hi[slsh] - lo[slsh])
                x[slsh] = np.clip(idx.cap_initial, lo[slsh] + margin, hi[slsh] - margin)
        return x

    # ------------------------------------------------------------------
    # evaluation cache
    # ------------------------------------------------------------------
    def ratio_point(self, x: np.ndarray) -> RatioPoint:
        lay = self.layout
        v_r = x[lay.v_r][0] if self.stage == "planning" else self.v_r_fixed
        return RatioPoint(f_r=float(x[lay.f_r][0]), v_r=float(v_r))

    def _at(self, x: np.ndarray) -> dict:
        key = x.tobytes()
        if key != self._cache_key:
            rp = self.ratio_point(x)
            bundle_l = admittance_partials(self.sys.grid_l, rp)
            series_l = [series_partials(ln, rp) for ln in self.sys.grid_l.lines]
            self._cache = {"rp": rp, "bundle_l": bundle_l, "series_l": series_l}
            self._cache_key = key
        return self._cache

    def bundles(self, x: np.ndarray) -> tuple[AdmittanceBundle, AdmittanceBundle]:
        return self.bundle_s, self._at(x)["bundle_l"]

    def _grid_vars(self, x, tag):
        lay = self.layout
        if tag == "s":
            return (x[lay.e_s], x[lay.f_s], self.idx_s, lay.e_s, lay.f_s,
                    lay.p_gen_s, lay.q_gen_s, lay.q_sh_s, lay.p_conv_s, lay.q_conv_s)
        return (x[lay.e_l], x[lay.f_l], self.idx_l, lay.e_l, lay.f_l,
                lay.p_gen_l, lay.q_gen_l, lay.q_sh_l, lay.p_conv_l, lay.q_conv_l)

    # ------------------------------------------------------------------
    # equalities
    # ------------------------------------------------------------------
    def power_balance_residuals(self, x: np.ndarray) -> np.ndarray:
        """g^P, g^Q for both grids, ordered (P_s, Q_s, P_l, Q_l)."""
        bundle_s, bundle_l = self.bundles(x)
        out = []
        for tag, bundle in (("s", bundle_s), ("l", bundle_l)):
            e, f, idx, *_ = self._grid_vars(x, tag)
            lay = self.layout
            p_inj, q_inj = _pq_values(bundle.g, bundle.b, e, f)
            gp = p_inj + idx.p_load
            gq = q_inj + idx.q_load
            if tag == "s":
                np.subtract.at(gp, idx.gen_bus, x[lay.p_gen_s])
                np.subtract.at(gq, idx.gen_bus, x[lay.q_gen_s])
                np.add.at(gp, self.conv_bus_s, x[lay.p_conv_s])
                np.add.at(gq, self.conv_bus_s, x[lay.q_conv_s])
                qsh = x[lay.q_sh_s]
            else:
                np.subtract.at(gp, idx.gen_bus, x[lay.p_gen_l])
                np.subtract.at(gq, idx.gen_bus, x[lay.q_gen_l])
                np.subtract.at(gp, self.conv_bus_l, x[lay.p_conv_l])
                np.subtract.at(gq, self.conv_bus_l, x[lay.q_conv_l])
                qsh = x[lay.q_sh_l]
            if len(idx.cap_bus):
                # capacitor banks inject (e^2+f^2)*q_sh into the bus
                u = e[idx.cap_bus] ** 2 + f[idx.cap_bus] ** 2
                np.subtract.at(gq, idx.cap_bus, u * qsh)
            out.extend([gp, gq])
        return np.concatenate(out)

    def pv_voltage_residuals(self, x: np.ndarray) -> np.ndarray:
        """e^2 + f^2 - v_sched^2 at every voltage-controlled bus."""
        lay = self.layout
        res = []
        for tag in ("s", "l"):
            e, f, idx, *_ = self._grid_vars(x, tag)
            res.append(e[idx.vset_bus] ** 2 + f[idx.vset_bus] ** 2 - idx.vset_val**2)
        return np.concatenate(res)

    def converter_balance_residual(self, x: np.ndarray, k: int) -> float:
        """Real-power balance of converter station ``k`` (loss equation)."""
        lay = self.layout
        conv = self.sys.converters[k]
        ps, qs = x[lay.p_conv_s][k], x[lay.q_conv_s][k]
        pl, ql = x[lay.p_conv_l][k], x[lay.q_conv_l][k]
        es, fs = x[lay.e_s][self.conv_bus_s[k]], x[lay.f_s][self.conv_bus_s[k]]
        el, fl = x[lay.e_l][self.conv_bus_l[k]], x[lay.f_l][self.conv_bus_l[k]]
        loss_l, _, _ = _side_loss_terms(pl, ql, el, fl, conv.r2 + conv.a2, conv.a1)
        loss_s, _, _ = _side_loss_terms(ps, qs, es, fs, conv.r1 + conv.a2, conv.a1)
        return pl + 2.0 * conv.a0 - ps + loss_l + loss_s

    def equalities(self, x: np.ndarray) -> np.ndarray:
        lay = self.layout
        parts = [self.power_balance_residuals(x), self.pv_voltage_residuals(x)]
        parts.append(np.array([x[lay.f_s][self.idx_s.slack], x[lay.f_l][self.idx_l.slack]]))
        parts.append(np.array([self.converter_balance_residual(x, k) for k in range(self.n_conv)]))
        return np.concatenate(parts)

    def equality_jacobian(self, x: np.ndarray) -> np.ndarray:
        lay = self.layout
        J = np.zeros((self.n_eq, lay.size))
        fam = dict(self.eq_families)
        bundle_s, bundle_l = self.bundles(x)
        fr_col = lay.f_r.start
        vr_col = lay.v_r.start if self.stage == "planning" else None

        for tag, bundle in (("s", bundle_s), ("l", bundle_l)):
            e, f, idx, sl_e, sl_f, sl_pg, sl_qg, sl_sh, sl_pc, sl_qc = self._grid_vars(x, tag)
            rp_sl = fam[f"balance_p_{tag}"]
            rq_sl = fam[f"balance_q_{tag}"]
            dP_de, dP_df, dQ_de, dQ_df = _pq_jacobian_blocks(bundle.g, bundle.b, e, f)
            J[rp_sl, sl_e] = dP_de
            J[rp_sl, sl_f] = dP_df
            J[rq_sl, sl_e] = dQ_de
            J[rq_sl, sl_f] = dQ_df
            for i, bus in enumerate(idx.gen_bus):
                J[rp_sl.start + bus, sl_pg.start + i] -= 1.0
                J[rq_sl.start + bus, sl_qg.start + i] -= 1.0
            conv_bus = self.conv_bus_s if tag == "s" else self.conv_bus_l
            sign = 1.0 if tag == "s" else -1.0
            for k, bus in enumerate(conv_bus):
                J[rp_sl.start + bus, sl_pc.start + k] += sign
                J[rq_sl.start + bus, sl_qc.start + k] += sign
            qsh = x[sl_sh]
            for i, bus in enumerate(idx.cap_bus):
                u = e[bus] ** 2 + f[bus] ** 2
                J[rq_sl.start + bus, sl_sh.start + i] -= u
                J[rq_sl.start + bus, sl_e.start + bus] -= 2 * e[bus] * qsh[i]
                J[rq_sl.start + bus, sl_f.start + bus] -= 2 * f[bus] * qsh[i]
            if tag == "l":
                dp, dq = _pq_values(bundle.dg_dfr, bundle.db_dfr, e, f)
                J[rp_sl, fr_col] = dp
                J[rq_sl, fr_col] = dq
                if vr_col is not None:
                    dp, dq = _pq_values(bundle.dg_dvr, bundle.db_dvr, e, f)
                    J[rp_sl, vr_col] = dp
                    J[rq_sl, vr_col] = dq

        # voltage magnitude rows
        for tag in ("s", "l"):
            e, f, idx, sl_e, sl_f, *_ = self._grid_vars(x, tag)
            rows = fam[f"voltage_{tag}"]
            for i, bus in enumerate(idx.vset_bus):
                J[rows.start + i, sl_e.start + bus] = 2 * e[bus]
                J[rows.start + i, sl_f.start + bus] = 2 * f[bus]

        rows = fam["angle_ref"]
        J[rows.start, lay.f_s.start + self.idx_s.slack] = 1.0
        J[rows.start + 1, lay.f_l.start + self.idx_l.slack] = 1.0

        rows = fam["converter_balance"]
        for k, conv in enumerate(self.sys.converters):
            cols, grad, _ = self._converter_balance_derivs(x, k, want_hess=False)
            J[rows.start + k, cols] = grad
        return J

    def _converter_balance_derivs(self, x, k, want_hess: bool):
        lay = self.layout
        conv = self.sys.converters[k]
        bs, bl = self.conv_bus_s[k], self.conv_bus_l[k]
        cols = np.array([
            lay.p_conv_l.start + k, lay.q_conv_l.start + k,
            lay.e_l.start + bl, lay.f_l.start + bl,
            lay.p_conv_s.start + k, lay.q_conv_s.start + k,
            lay.e_s.start + bs, lay.f_s.start + bs,
        ])
        pl, ql = x[lay.p_conv_l][k], x[lay.q_conv_l][k]
        ps, qs = x[lay.p_conv_s][k], x[lay.q_conv_s][k]
        el, fl = x[lay.e_l][bl], x[lay.f_l][bl]
        es, fs = x[lay.e_s][bs], x[lay.f_s][bs]
        _, grad_l, hess_l = _side_loss_terms(pl, ql, el, fl, conv.r2 + conv.a2, conv.a1)
        _, grad_s, hess_s = _side_loss_terms(ps, qs, es, fs, conv.r1 + conv.a2, conv.a1)
        grad = np.concatenate([grad_l, grad_s])
        grad[0] += 1.0
        grad[4] -= 1.0
        if not want_hess:
            return cols, grad, None
        hess = np.zeros((8, 8))
        hess[:4, :4] = hess_l
        hess[4:, 4:] = hess_s
        return cols, grad, hess

    # ------------------------------------------------------------------
    # inequalities
    # ------------------------------------------------------------------
    def converter_capability_residuals(self, x: np.ndarray, k: int, side: str) -> tuple[float, float, float]:
        """(current, modulation, reactive) inequality values for one VSC side."""
        lay = self.layout
        conv = self.sys.converters[k]
        if side == "s":
            p, q = x[lay.p_conv_s][k], x[lay.q_conv_s][k]
            e, f = x[lay.e_s][self.conv_bus_s[k]], x[lay.f_s][self.conv_bus_s[k]]
            g, b = conv.g1, conv.b1
        else:
            p, q = x[lay.p_conv_l][k], x[lay.q_conv_l][k]
            e, f = x[lay.e_l][self.conv_bus_l[k]], x[lay.f_l][self.conv_bus_l[k]]
            g, b = conv.g2, conv.b2
        u = e * e + f * f
        h_i = p * p + q * q - conv.i_c_max**2 * u
        m2 = (conv.k_m * conv.v_dc) ** 2 * (g * g + b * b)
        h_v, _, _ = _modulation_terms(p, q, e, f, g, b, m2)
        return h_i, h_v, q

    def line_flow_residuals(self, x: np.ndarray, tag: str) -> tuple[np.ndarray, np.ndarray]:
        """Per-line (squared current, sending-end power) values for one grid."""
        e, f, idx, *_ = self._grid_vars(x, tag)
        series = self._series_s if tag == "s" else self._at(x)["series_l"]
        g = np.array([sd.g for sd in series])
        b = np.array([sd.b for sd in series])
        k, j = idx.line_from, idx.line_to
        de = e[k] - e[j]
        df = f[k] - f[j]
        h_i = (g * g + b * b) * (de * de + df * df)
        h_p = g * (e[k] ** 2 + f[k] ** 2 - e[k] * e[j] - f[k] * f[j]) + b * (e[k] * f[j] - f[k] * e[j])
        return h_i, h_p

    def inequalities(self, x: np.ndarray) -> np.ndarray:
        lay = self.layout
        vals = np.zeros(self.n_ineq)
        fam = dict(self.ineq_families)
        for tag in ("s", "l"):
            e, f, idx, *_ = self._grid_vars(x, tag)
            w = idx.window_bus
            vals[fam[f"v_window_{tag}"]] = e[w] ** 2 + f[w] ** 2
        for side in ("s", "l"):
            cur = np.empty(self.n_conv)
            mod = np.empty(self.n_conv)
            rea = np.empty(self.n_conv)
            for k in range(self.n_conv):
                cur[k], mod[k], rea[k] = self.converter_capability_residuals(x, k, side)
            vals[fam[f"converter_current_{side}"]] = cur
            vals[fam[f"converter_modulation_{side}"]] = mod
            vals[fam[f"converter_reactive_{side}"]] = rea
        if self.stage == "operation":
            for tag in ("s", "l"):
                h_i, h_p = self.line_flow_residuals(x, tag)
                vals[fam[f"line_current_{tag}"]] = h_i
                vals[fam[f"line_power_{tag}"]] = h_p
        return vals

    def inequality_jacobian(self, x: np.ndarray) -> np.ndarray:
        lay = self.layout
        J = np.zeros((self.n_ineq, lay.size))
        fam = dict(self.ineq_families)
        fr_col = lay.f_r.start
        for tag in ("s", "l"):
            e, f, idx, sl_e, sl_f, *_ = self._grid_vars(x, tag)
            rows = fam[f"v_window_{tag}"]
            for i, bus in enumerate(idx.window_bus):
                J[rows.start + i, sl_e.start + bus] = 2 * e[bus]
                J[rows.start + i, sl_f.start + bus] = 2 * f[bus]
        for side in ("s", "l"):
            for k in range(self.n_conv):
                cols, dcur, dmod = self._capability_derivs(x, k, side, want_hess=False)[:3]
                J[fam[f"converter_current_{side}"].start + k, cols] = dcur
                J[fam[f"converter_modulation_{side}"].start + k, cols] = dmod
                qcol = (lay.q_conv_s if side == "s" else lay.q_conv_l).start + k
                J[fam[f"converter_reactive_{side}"].start + k, qcol] = 1.0
        if self.stage == "operation":
            for tag in ("s", "l"):
                self._line_flow_jacobian(x, tag, J, fam, fr_col)
        return J

    def _capability_derivs(self, x, k, side, want_hess):
        """Gradients (and Hessians) of the current/modulation expressions.

        Returns (cols, grad_current, grad_modulation[, hess_cur, hess_mod])
        over local variables (p, q, e, f).
        """
        lay = self.layout
        conv = self.sys.converters[k]
        if side == "s":
            sl_p, sl_q = lay.p_conv_s, lay.q_conv_s
            sl_e, sl_f, bus = lay.e_s, lay.f_s, self.conv_bus_s[k]
            g, b = conv.g1, conv.b1
        else:
            sl_p, sl_q = lay.p_conv_l, lay.q_conv_l
            sl_e, sl_f, bus = lay.e_l, lay.f_l, self.conv_bus_l[k]
            g, b = conv.g2, conv.b2
        cols = np.array([sl_p.start + k, sl_q.start + k, sl_e.start + bus, sl_f.start + bus])
        p, q, e, f = x[cols]
        imax2 = conv.i_c_max**2
        dcur = np.array([2 * p, 2 * q, -2 * imax2 * e, -2 * imax2 * f])
        m2 = (conv.k_m * conv.v_dc) ** 2 * (g * g + b * b)
        _, dmod, hmod = _modulation_terms(p, q, e, f, g, b, m2)
        if not want_hess:
            return cols, dcur, dmod
        hcur = np.diag([2.0, 2.0, -2 * imax2, -2 * imax2])
        return cols, dcur, dmod, hcur, hmod

    def _line_series(self, x, tag):
        return self._series_s if tag == "s" else self._at(x)["series_l"]

    def _line_flow_jacobian(self, x, tag, J, fam, fr_col):
        e, f, idx, sl_e, sl_f, *_ = self._grid_vars(x, tag)
        series = self._line_series(x, tag)
        ri = fam[f"line_current_{tag}"]
        rp = fam[f"line_power_{tag}"]
        for i, sd in enumerate(series):
            k, j = idx.line_from[i], idx.line_to[i]
            g, b = sd.g, sd.b
            de, df = e[k] - e[j], f[k] - f[j]
            c2 = g * g + b * b
            row = ri.start + i
            J[row, sl_e.start + k] += 2 * c2 * de
            J[row, sl_e.start + j] -= 2 * c2 * de
            J[row, sl_f.start + k] += 2 * c2 * df
            J[row, sl_f.start + j] -= 2 * c2 * df
            row = rp.start + i
            J[row, sl_e.start + k] += g * (2 * e[k] - e[j]) + b * f[j]
            J[row, sl_e.start + j] += -g * e[k] - b * f[k]
            J[row, sl_f.start + k] += g * (2 * f[k] - f[j]) - b * e[j]
            J[row, sl_f.start + j] += -g * f[k] + b * e[k]
            if tag == "l":
                dc2 = 2 * (g * sd.dg_dfr + b * sd.db_dfr)
                J[ri.start + i, fr_col] = dc2 * (de * de + df * df)
                J[rp.start + i, fr_col] = (
                    sd.dg_dfr * (e[k] ** 2 + f[k] ** 2 - e[k] * e[j] - f[k] * f[j])
                    + sd.db_dfr * (e[k] * f[j] - f[k] * e[j])
                )

    # ------------------------------------------------------------------
    # objective
    # ------------------------------------------------------------------
    def objective(self, x: np.ndarray) -> float:
        lay = self.layout
        w = self.weights
        total_gen = x[lay.p_gen_s].sum() + x[lay.p_gen_l].sum()
        val = w.alpha1 * total_gen
        if self.stage == "planning":
            val += w.alpha2 * math.sqrt(x[lay.v_r][0])
        else:
            qsh = np.concatenate([x[lay.q_sh_s], x[lay.q_sh_l]])
            val += w.alpha3 * np.sum((qsh - self.prev_caps) ** 2)
        return float(val)

    def objective_gradient(self, x: np.ndarray) -> np.ndarray:
        lay = self.layout
        w = self.weights
        g = np.zeros(lay.size)
        g[lay.p_gen_s] = w.alpha1
        g[lay.p_gen_l] = w.alpha1
        if self.stage == "planning":
            g[lay.v_r] = w.alpha2 / (2.0 * math.sqrt(x[lay.v_r][0]))
        else:
            qsh = np.concatenate([x[lay.q_sh_s], x[lay.q_sh_l]])
            dq = 2.0 * w.alpha3 * (qsh - self.prev_caps)
            n_s = lay.q_sh_s.stop - lay.q_sh_s.start
            g[lay.q_sh_s] = dq[:n_s]
            g[lay.q_sh_l] = dq[n_s:]
        return g

    # ------------------------------------------------------------------
    # Lagrangian Hessian
    # ------------------------------------------------------------------
    def lagrangian_hessian(self, x: np.ndarray, lam_eq: np.ndarray, w_ineq: np.ndarray) -> np.ndarray:
        """Hessian of f + lam_eq . g + w_ineq . h (signed inequality weights)."""
        lay = self.layout
        n = lay.size
        H = np.zeros((n, n))
        fam_eq = dict(self.eq_families)
        fam_in = dict(self.ineq_families)
        w = self.weights
        fr = lay.f_r.start
        vr = lay.v_r.start if self.stage == "planning" else None

        # objective curvature
        if self.stage == "planning":
            H[vr, vr] += -w.alpha2 / (4.0 * x[lay.v_r][0] ** 1.5)
        else:
            H[lay.q_sh_s, lay.q_sh_s] += 2.0 * w.alpha3 * np.eye(lay.q_sh_s.stop - lay.q_sh_s.start)
            H[lay.q_sh_l, lay.q_sh_l] += 2.0 * w.alpha3 * np.eye(lay.q_sh_l.stop - lay.q_sh_l.start)

        bundle_s, bundle_l = self.bundles(x)
        for tag, bundle in (("s", bundle_s), ("l", bundle_l)):
            e, f, idx, sl_e, sl_f, _, _, sl_sh, _, _ = self._grid_vars(x, tag)
            lam_p = lam_eq[fam_eq[f"balance_p_{tag}"]]
            lam_q = lam_eq[fam_eq[f"balance_q_{tag}"]]
            _stamp_pq_hessian(H, sl_e, sl_f, bundle.g, bundle.b, lam_p, lam_q)
            qsh = x[sl_sh]
            for i, bus in enumerate(idx.cap_bus):
                lq = lam_q[bus]
                H[sl_e.start + bus, sl_e.start + bus] -= 2 * lq * qsh[i]
                H[sl_f.start + bus, sl_f.start + bus] -= 2 * lq * qsh[i]
                H[sl_e.start + bus, sl_sh.start + i] -= 2 * e[bus] * lq
                H[sl_sh.start + i, sl_e.start + bus] -= 2 * e[bus] * lq
                H[sl_f.start + bus, sl_sh.start + i] -= 2 * f[bus] * lq
                H[sl_sh.start + i, sl_f.start + bus] -= 2 * f[bus] * lq
            if tag == "l":
                self._stamp_ratio_hessian(H, x, bundle, e, f, sl_e, sl_f, lam_p, lam_q, fr, vr)

        # voltage magnitude rows and windows: constant curvature 2 per component
        for tag in ("s", "l"):
            e, f, idx, sl_e, sl_f, *_ = self._grid_vars(x, tag)
            lam_v = lam_eq[fam_eq[f"voltage_{tag}"]]
            for i, bus in enumerate(idx.vset_bus):
                H[sl_e.start + bus, sl_e.start + bus] += 2 * lam_v[i]
                H[sl_f.start + bus, sl_f.start + bus] += 2 * lam_v[i]
            wv = w_ineq[fam_in[f"v_window_{tag}"]]
            for i, bus in enumerate(idx.window_bus):
                H[sl_e.start + bus, sl_e.start + bus] += 2 * wv[i]
                H[sl_f.start + bus, sl_f.start + bus] += 2 * wv[i]

        lam_c = lam_eq[fam_eq["converter_balance"]]
        for k in range(self.n_conv):
            if lam_c[k] == 0.0:
                continue
            cols, _, hess = self._converter_balance_derivs(x, k, want_hess=True)
            H[np.ix_(cols, cols)] += lam_c[k] * hess

        for side in ("s", "l"):
            wc = w_ineq[fam_in[f"converter_current_{side}"]]
            wm = w_ineq[fam_in[f"converter_modulation_{side}"]]
            for k in range(self.n_conv):
                if wc[k] == 0.0 and wm[k] == 0.0:
                    continue
                cols, _, _, hcur, hmod = self._capability_derivs(x, k, side, want_hess=True)
                H[np.ix_(cols, cols)] += wc[k] * hcur + wm[k] * hmod

        if self.stage == "operation":
            for tag in ("s", "l"):
                w_i = w_ineq[fam_in[f"line_current_{tag}"]]
                w_p = w_ineq[fam_in[f"line_power_{tag}"]]
                self._stamp_line_flow_hessian(H, x, tag, w_i, w_p, fr)
        return H

    def _stamp_ratio_hessian(self, H, x, bundle, e, f, sl_e, sl_f, lam_p, lam_q, fr, vr):
        """Frequency/voltage-ratio rows of the low-frequency balance Hessian."""
        dP_de, dP_df, dQ_de, dQ_df = _pq_jacobian_blocks(bundle.dg_dfr, bundle.db_dfr, e, f)
        cross_e = dP_de.T @ lam_p + dQ_de.T @ lam_q
        cross_f = dP_df.T @ lam_p + dQ_df.T @ lam_q
        H[fr, sl_e] += cross_e
        H[sl_e, fr] += cross_e
        H[fr, sl_f] += cross_f
        H[sl_f, fr] += cross_f
        d2p, d2q = _pq_values(bundle.d2g_dfr2, bundle.d2b_dfr2, e, f)
        H[fr, fr] += lam_p @ d2p + lam_q @ d2q
        if vr is not None:
            dP_de, dP_df, dQ_de, dQ_df = _pq_jacobian_blocks(bundle.dg_dvr, bundle.db_dvr, e, f)
            cross_e = dP_de.T @ lam_p + dQ_de.T @ lam_q
            cross_f = dP_df.T @ lam_p + dQ_df.T @ lam_q
            H[vr, sl_e] += cross_e
            H[sl_e, vr] += cross_e
            H[vr, sl_f] += cross_f
            H[sl_f, vr] += cross_f
            # series terms are linear in v_r: the pure v_r block vanishes
            dm_p, dm_q = _pq_values(bundle.d2g_dfrdvr, bundle.d2b_dfrdvr, e, f)
            mixed = lam_p @ dm_p + lam_q @ dm_q
            H[fr, vr] += mixed
            H[vr, fr] += mixed

    def _stamp_line_flow_hessian(self, H, x, tag, w_i, w_p, fr):
        e, f, idx, sl_e, sl_f, *_ = self._grid_vars(x, tag)
        series = self._line_series(x, tag)
        for i, sd in enumerate(series):
            wi, wp = w_i[i], w_p[i]
            if wi == 0.0 and wp == 0.0 and tag == "s":
                continue
            k, j = idx.line_from[i], idx.line_to[i]
            ek, ej = sl_e.start + k, sl_e.start + j
            fk, fj = sl_f.start + k, sl_f.start + j
            g, b = sd.g, sd.b
            c2 = g * g + b * b
            de, df = e[k] - e[j], f[k] - f[j]
            if wi != 0.0:
                for a, bb in ((ek, ej), (fk, fj)):
                    H[a, a] += 2 * c2 * wi
                    H[bb, bb] += 2 * c2 * wi
                    H[a, bb] -= 2 * c2 * wi
                    H[bb, a] -= 2 * c2 * wi
            if wp != 0.0:
                H[ek, ek] += 2 * g * wp
                H[fk, fk] += 2 * g * wp
                H[ek, ej] += -g * wp
                H[ej, ek] += -g * wp
                H[fk, fj] += -g * wp
                H[fj, fk] += -g * wp
                H[ek, fj] += b * wp
                H[fj, ek] += b * wp
                H[fk, ej] += -b * wp
                H[ej, fk] += -b * wp
            if tag == "l":
                dg, db = sd.dg_dfr, sd.db_dfr
                d2g, d2b = sd.d2g_dfr2, sd.d2b_dfr2
                dc2 = 2 * (g * dg + b * db)
                d2c2 = 2 * (dg * dg + g * d2g + db * db + b * d2b)
                if wi != 0.0:
                    H[fr, fr] += wi * d2c2 * (de * de + df * df)
                    for a, s_, v in ((ek, 1, de), (ej, -1, de), (fk, 1, df), (fj, -1, df)):
                        H[fr, a] += wi * dc2 * 2 * s_ * v
                        H[a, fr] += wi * dc2 * 2 * s_ * v
                if wp != 0.0:
                    quad = e[k] ** 2 + f[k] ** 2 - e[k] * e[j] - f[k] * f[j]
                    cross = e[k] * f[j] - f[k] * e[j]
                    H[fr, fr] += wp * (d2g * quad + d2b * cross)
                    grads = (
                        (ek, dg * (2 * e[k] - e[j]) + db * f[j]),
                        (ej, -dg * e[k] - db * f[k]),
                        (fk, dg * (2 * f[k] - f[j]) - db * e[j]),
                        (fj, -dg * f[k] + db * e[k]),
                    )
                    for a, v in grads:
                        H[fr, a] += wp * v
                        H[a, fr] += wp * v

    # public alias kept close to the operation names used in tests
    def objective_value(self, x: np.ndarray) -> float:
        return self.objective(x)

    def to_nlp(self):
        """Bind the evaluators into a generic NLP problem description."""
        from .nlp import NlpProblem

        lay = self.layout
        weights = np.ones(lay.size)
        # the restoration metric prefers voltage/generation adjustments:
        # bulk transfers and the global ratio variables stay near their
        # seeds instead of absorbing every mismatch
        weights[lay.p_conv_s] = 0.15
        weights[lay.p_conv_l] = 0.15
        weights[lay.f_r] = 0.2
        if self.stage == "planning":
            weights[lay.v_r] = 0.2
        limits = np.full(lay.size, np.inf)
        limits[lay.e_s] = limits[lay.f_s] = 0.25
        limits[lay.e_l] = limits[lay.f_l] = 0.25
        limits[lay.f_r] = 0.08
        if self.stage == "planning":
            limits[lay.v_r] = 0.08
        return NlpProblem(
            n=self.layout.size,
            x_lower=self.x_lower,
            x_upper=self.x_upper,
            objective=self.objective,
            objective_grad=self.objective_gradient,
            eq_fun=self.equalities,
            eq_jac=self.equality_jacobian,
            ineq_fun=self.inequalities,
            ineq_jac=self.inequality_jacobian,
            ineq_lower=self.ineq_lower,
            ineq_upper=self.ineq_upper,
            lag_hess=self.lagrangian_hessian,
            eq_families=self.eq_families,
            ineq_families=self.ineq_families,
            presolve_weights=weights,
            step_limits=limits,
        )
