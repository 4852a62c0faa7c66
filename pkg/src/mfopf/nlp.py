"""Sparse nonconvex NLP solver: predictor-corrector primal-dual interior point.

Solves problems of the form

    min f(x)   s.t.  g(x) = 0,   hl <= h(x) <= hu,   xl <= x <= xu

Two-sided inequalities and variable bounds are expanded internally into
single-sided rows ``c(x) <= 0`` with slacks ``c(x) + s = 0``, ``s > 0``
and multipliers ``z > 0``.  Each iteration eliminates the slack/
multiplier blocks and factorizes the reduced augmented system

    [ H + Jh' (Z/S) Jh   Jg' ] [dx ]   [ rhs_x ]
    [ Jg                 0   ] [dlam] = [ -g    ]

with a dense symmetric-indefinite (Bunch-Kaufman) factorization.  Wrong
inertia triggers a growing diagonal shift of the Hessian block.  The
step follows the Mehrotra scheme: an affine predictor sets the centering
parameter sigma = (gap_aff/gap)^3, a corrector re-solves with the
second-order complementarity term, and a fraction-to-boundary rule caps
both step lengths.

Variables with equal lower and upper bounds are converted to equality
rows, which is also how the discrete capacitor pass pins step values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

Families = Sequence[tuple[str, slice]]


@dataclass
class NlpProblem:
    """Evaluator handles of one NLP instance.

    ``lag_hess(x, lam_eq, w_ineq)`` must return the full Lagrangian
    Hessian including the objective term, where ``w_ineq`` holds the
    signed weights (upper-side minus lower-side multiplier) of the
    original inequality rows.
    """

    n: int
    x_lower: np.ndarray
    x_upper: np.ndarray
    objective: Callable[[np.ndarray], float]
    objective_grad: Callable[[np.ndarray], np.ndarray]
    lag_hess: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    eq_fun: Optional[Callable] = None
    eq_jac: Optional[Callable] = None
    ineq_fun: Optional[Callable] = None
    ineq_jac: Optional[Callable] = None
    ineq_lower: Optional[np.ndarray] = None
    ineq_upper: Optional[np.ndarray] = None
    eq_families: Families = ()
    ineq_families: Families = ()
    #: optional per-variable weights for the feasibility presolve and
    #: restoration metric; small weights keep a variable near its seed
    presolve_weights: Optional[np.ndarray] = None
    #: optional per-variable cap on the Newton step (the whole direction
    #: is scaled down uniformly); tames wild steps along weakly-curved
    #: variables such as the operating-ratio scalars
    step_limits: Optional[np.ndarray] = None

    @property
    def n_ineq(self) -> int:
        return 0 if self.ineq_fun is None else len(self.ineq_lower)

    def _probe(self) -> np.ndarray:
        """Flat start for generic problems: bound midpoints, 0 if unbounded."""
        lo, hi = self.x_lower, self.x_upper
        fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
        x = np.zeros(self.n)
        both = fin_lo & fin_hi
        x[both] = 0.5 * (lo[both] + hi[both])
        x[fin_lo & ~fin_hi] = lo[fin_lo & ~fin_hi] + 1.0
        x[~fin_lo & fin_hi] = hi[~fin_lo & fin_hi] - 1.0
        return x


@dataclass
class SolveOptions:
    tol_feasibility: float = 1e-6
    tol_objective: float = 1e-6
    tol_complementarity: float = 1e-6
    #: scaled dual-stationarity level reported in the iteration history
    #: (diagnostic; convergence follows the three tolerances above)
    tol_stationarity: float = 1e-5
    max_iterations: int = 150
    fraction_to_boundary: float = 0.9995
    initial_barrier: float = 0.1
    #: slacks are initialized to max(-h, slack_floor); warm re-solves at a
    #: nearly unchanged problem should use a much smaller floor so binding
    #: constraints are not torn off their boundaries
    slack_floor: float = 1e-2
    #: warm-start vector; None selects the flat start (bound midpoints)
    start: Optional[np.ndarray] = None
    #: damped Gauss-Newton pass on the equalities before the barrier
    #: iteration; starts the interior-point method near the feasible
    #: manifold, which stabilizes it on heavily imbalanced start points
    presolve_feasibility: bool = True


@dataclass
class IterationRecord:
    feasibility: float
    gap: float
    objective: float
    stationarity: float = 0.0


@dataclass
class SolveOutcome:
    status: str  # converged | max_iter | numerical_failure
    x: np.ndarray
    iterations: int
    history: list[IterationRecord]
    objective: float
    feasibility: float
    gap: float
    #: equality multipliers, reported in the f - lam.g convention
    mult_eq: np.ndarray
    #: signed inequality weights per original row (upper minus lower side)
    mult_ineq: np.ndarray
    #: bound multipliers per variable (upper minus lower side)
    mult_bounds: np.ndarray
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"


class _Assembled:
    """Single-sided expansion of inequalities and variable bounds.

    Row order: [ineq upper | ineq lower | bound upper | bound lower].
    Variables with xl == xu are excluded here; they become equality rows.
    Rows are rescaled by their initial Jacobian row norms so that
    constraint families of very different natural magnitude (for
    example the converter modulation limit) condition the barrier
    system evenly; the complementarity products are scale invariant and
    feasibility is always checked on the raw values.
    """

    def __init__(self, problem: NlpProblem):
        self.problem = problem
        n = problem.n
        p = problem.n_ineq
        hl = problem.ineq_lower if p else np.zeros(0)
        hu = problem.ineq_upper if p else np.zeros(0)
        self.iu = np.flatnonzero(np.isfinite(hu))
        self.il = np.flatnonzero(np.isfinite(hl))
        fixed = np.isfinite(problem.x_lower) & (problem.x_lower == problem.x_upper)
        self.fixed_idx = np.flatnonzero(fixed)
        self.fixed_val = problem.x_lower[self.fixed_idx]
        self.bu = np.flatnonzero(np.isfinite(problem.x_upper) & ~fixed)
        self.bl = np.flatnonzero(np.isfinite(problem.x_lower) & ~fixed)
        self.hu = hu
        self.hl = hl
        self.n_rows = len(self.iu) + len(self.il) + len(self.bu) + len(self.bl)
        self.n_eq_extra = len(self.fixed_idx)
        self.scale = np.ones(self.n_rows)

    def compute_scaling(self, x0: np.ndarray) -> None:
        J = self.jac_raw(x0)
        norms = np.max(np.abs(J), axis=1) if J.size else np.zeros(0)
        self.scale = 1.0 / np.maximum(1.0, norms)

    def equalities(self, x: np.ndarray) -> np.ndarray:
        parts = []
        if self.problem.eq_fun is not None:
            parts.append(self.problem.eq_fun(x))
        if self.n_eq_extra:
            parts.append(x[self.fixed_idx] - self.fixed_val)
        return np.concatenate(parts) if parts else np.zeros(0)

    def eq_jacobian(self, x: np.ndarray) -> np.ndarray:
        parts = []
        if self.problem.eq_jac is not None:
            parts.append(self.problem.eq_jac(x))
        if self.n_eq_extra:
            rows = np.zeros((self.n_eq_extra, self.problem.n))
            rows[np.arange(self.n_eq_extra), self.fixed_idx] = 1.0
            parts.append(rows)
        return np.vstack(parts) if parts else np.zeros((0, self.problem.n))

    def rows_raw(self, x: np.ndarray) -> np.ndarray:
        parts = []
        if len(self.iu) or len(self.il):
            h = self.problem.ineq_fun(x)
            parts.append(h[self.iu] - self.hu[self.iu])
            parts.append(self.hl[self.il] - h[self.il])
        parts.append(x[self.bu] - self.problem.x_upper[self.bu])
        parts.append(self.problem.x_lower[self.bl] - x[self.bl])
        return np.concatenate(parts) if parts else np.zeros(0)

    def rows(self, x: np.ndarray) -> np.ndarray:
        return self.rows_raw(x) * self.scale

    def jac_raw(self, x: np.ndarray) -> np.ndarray:
        n = self.problem.n
        parts = []
        if len(self.iu) or len(self.il):
            J = self.problem.ineq_jac(x)
            parts.append(J[self.iu])
            parts.append(-J[self.il])
        ju = np.zeros((len(self.bu), n))
        ju[np.arange(len(self.bu)), self.bu] = 1.0
        jl = np.zeros((len(self.bl), n))
        jl[np.arange(len(self.bl)), self.bl] = -1.0
        parts.extend([ju, jl])
        return np.vstack(parts) if parts else np.zeros((0, n))

    def jac(self, x: np.ndarray) -> np.ndarray:
        return self.jac_raw(x) * self.scale[:, None]

    def split_multipliers(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Signed per-row inequality weights and per-variable bound weights.

        Multipliers of scaled rows are mapped back to the raw problem
        (a multiplier on c*h(x) weighs the raw Hessian by c*z).
        """
        p = self.problem.n_ineq
        z_raw = z * self.scale
        w_ineq = np.zeros(p)
        a = len(self.iu)
        b = a + len(self.il)
        c = b + len(self.bu)
        np.add.at(w_ineq, self.iu, z_raw[:a])
        np.subtract.at(w_ineq, self.il, z_raw[a:b])
        w_bounds = np.zeros(self.problem.n)
        np.add.at(w_bounds, self.bu, z_raw[b:c])
        np.subtract.at(w_bounds, self.bl, z_raw[c:])
        return w_ineq, w_bounds


def _ldl_inertia(d: np.ndarray) -> tuple[int, int, int]:
    """Eigenvalue signs of the LDL' block-diagonal factor."""
    n = d.shape[0]
    pos = neg = zero = 0
    k = 0
    while k < n:
        if k + 1 < n and d[k + 1, k] != 0.0:
            a, bb, c = d[k, k], d[k + 1, k], d[k + 1, k + 1]
            det = a * c - bb * bb
            tr = a + c
            if det < 0.0:
                pos += 1
                neg += 1
            elif det > 0.0:
                if tr > 0:
                    pos += 2
                else:
                    neg += 2
            else:
                zero += 1
                pos += 1 if tr > 0 else 0
                neg += 1 if tr < 0 else 0
            k += 2
        else:
            v = d[k, k]
            if v > 0.0:
                pos += 1
            elif v < 0.0:
                neg += 1
            else:
                zero += 1
            k += 1
    return pos, neg, zero


class _KktFactor:
    """Bunch-Kaufman LDL' factorization of a symmetric indefinite matrix."""

    def __init__(self, K: np.ndarray):
        self.lu, self.d, self.perm = scipy.linalg.ldl(K, lower=True)
        self.inertia = _ldl_inertia(self.d)
        self._lp = self.lu[self.perm]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        w = scipy.linalg.solve_triangular(self._lp, rhs[self.perm], lower=True)
        v = self._block_diag_solve(w)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("ill-conditioned KKT factorization")
        u = scipy.linalg.solve_triangular(self._lp.T, v, lower=False)
        x = np.empty_like(u)
        x[self.perm] = u
        return x

    def _block_diag_solve(self, w: np.ndarray) -> np.ndarray:
        d = self.d
        n = d.shape[0]
        out = np.empty_like(w)
        k = 0
        while k < n:
            if k + 1 < n and d[k + 1, k] != 0.0:
                a, bb, c = d[k, k], d[k + 1, k], d[k + 1, k + 1]
                det = a * c - bb * bb
                out[k] = (c * w[k] - bb * w[k + 1]) / det
                out[k + 1] = (-bb * w[k] + a * w[k + 1]) / det
                k += 2
            else:
                out[k] = w[k] / d[k, k]
                k += 1
        return out


def _factor_augmented(M: np.ndarray, Jg: np.ndarray) -> tuple[Optional[_KktFactor], float]:
    """Factorize [[M, Jg'], [Jg, 0]] with inertia correction.

    Adds delta*I (delta starting at 1e-8, growing tenfold) to the Hessian
    block until the inertia is (n, m, 0); rank-deficient equality rows
    additionally get a small negative shift on the (2,2) block.
    """
    n = M.shape[0]
    m = Jg.shape[0]
    size = n + m
    K = np.zeros((size, size))
    K[:n, n:] = Jg.T
    K[n:, :n] = Jg
    delta = 0.0
    delta_c = 0.0
    for _ in range(40):
        K[:n, :n] = M + (delta * np.eye(n) if delta else 0.0)
        K[n:, n:] = -delta_c * np.eye(m) if delta_c else 0.0
        try:
            fact = _KktFactor(K)
        except Exception:
            fact = None
        if fact is not None:
            pos, neg, zero = fact.inertia
            if pos == n and neg == m and zero == 0:
                return fact, delta
            if zero > 0 and delta_c == 0.0:
                delta_c = 1e-12
        delta = 1e-8 if delta == 0.0 else delta * 10.0
        if delta > 1e12:
            break
    return None, delta


def _max_step(v: np.ndarray, dv: np.ndarray, tau: float) -> float:
    """Fraction-to-boundary step length keeping v + a*dv > 0."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, tau * np.min(-v[neg] / dv[neg])))


def _interior_projection(problem: NlpProblem, asm: "_Assembled", x: np.ndarray,
                         margin: float = 1e-6) -> np.ndarray:
    """Clip bounded variables strictly inside their boxes; pin fixed ones."""
    x = x.copy()
    lo, hi = problem.x_lower, problem.x_upper
    for i in asm.bu:
        width = hi[i] - (lo[i] if np.isfinite(lo[i]) else hi[i] - 2.0)
        x[i] = min(x[i], hi[i] - margin * max(width, 1.0))
    for i in asm.bl:
        width = (hi[i] if np.isfinite(hi[i]) else lo[i] + 2.0) - lo[i]
        x[i] = max(x[i], lo[i] + margin * max(width, 1.0))
    x[asm.fixed_idx] = asm.fixed_val
    return x


def _feasibility_presolve(problem: NlpProblem, asm: "_Assembled", x: np.ndarray,
                          max_steps: int = 30) -> np.ndarray:
    """Damped weighted Gauss-Newton steps toward the equality manifold.

    The minimum-norm correction is weighted by each variable's distance
    to its bounds, so the presolve routes mismatch into free variables
    (converter powers, voltages) instead of repeatedly clipping against
    generator limits.
    """
    best = x
    try:
        g = asm.equalities(x)
    except (ValueError, FloatingPointError):
        return best
    lo, hi = problem.x_lower, problem.x_upper
    norm = float(np.max(np.abs(g))) if len(g) else 0.0
    for _ in range(max_steps):
        if norm < 1e-9:
            break
        width = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
        dist = np.minimum(
            np.where(np.isfinite(lo), x - lo, 1.0),
            np.where(np.isfinite(hi), hi - x, 1.0),
        )
        bounded = np.isfinite(lo) | np.isfinite(hi)
        ratio = np.clip(dist / np.maximum(0.1 * width, 1e-12), 1e-3, 1.0)
        w = np.where(bounded, ratio, 1.0)
        if problem.presolve_weights is not None:
            w = w * problem.presolve_weights
        if norm < 1e-4:
            # endgame regime: plain minimum-norm correction, and variables
            # may sit essentially on their bounds
            w = np.ones_like(w)
        if len(asm.fixed_idx):
            w[asm.fixed_idx] = 0.0
        proj_margin = 1e-6 if norm >= 1e-4 else 1e-12
        J = asm.eq_jacobian(x)
        dy = np.linalg.lstsq(J * w[None, :], -g, rcond=None)[0]
        dx = w * dy
        alpha = 1.0
        improved = False
        while alpha > 1e-3:
            x_try = _interior_projection(problem, asm, x + alpha * dx, margin=proj_margin)
            try:
                g_try = asm.equalities(x_try)
            except (ValueError, FloatingPointError):
                alpha *= 0.5
                continue
            norm_try = float(np.max(np.abs(g_try)))
            if norm_try < (1.0 - 1e-4 * alpha) * norm:
                x, g, norm = x_try, g_try, norm_try
                best = x
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
    return best


def _restore_feasibility(problem: NlpProblem, asm: "_Assembled", x: np.ndarray,
                         max_steps: int = 30, margin_raw=None) -> np.ndarray:
    """Gauss-Newton restoration onto {g = 0, h <= -margin}.

    Treats every inequality row that is violated or within a small
    margin of its boundary as an extra residual, so the returned point
    is strictly interior again.  Used when the barrier iteration stalls
    with exploding multipliers after wandering into infeasible space.
    """
    lo, hi = problem.x_lower, problem.x_upper
    if margin_raw is None:
        margin = 0.01 / asm.scale  # raw units per row
    else:
        margin = np.full(asm.n_rows, margin_raw)
    for _ in range(max_steps):
        try:
            g = asm.equalities(x)
            h = asm.rows_raw(x)
        except (ValueError, FloatingPointError):
            return x
        act = h > -margin
        resid = np.concatenate([g, (h[act] + margin[act]) * asm.scale[act]])
        norm = float(np.max(np.abs(resid))) if len(resid) else 0.0
        if norm < 1e-9:
            break
        Jg = asm.eq_jacobian(x)
        Jh = asm.jac_raw(x)[act] * asm.scale[act, None]
        J = np.vstack([Jg, Jh])
        width = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
        dist = np.minimum(
            np.where(np.isfinite(lo), x - lo, 1.0),
            np.where(np.isfinite(hi), hi - x, 1.0),
        )
        bounded = np.isfinite(lo) | np.isfinite(hi)
        w = np.where(bounded, np.clip(dist / np.maximum(0.1 * width, 1e-12), 1e-3, 1.0), 1.0)
        if problem.presolve_weights is not None:
            w = w * problem.presolve_weights
        if len(asm.fixed_idx):
            w[asm.fixed_idx] = 0.0
        dy = np.linalg.lstsq(J * w[None, :], -resid, rcond=None)[0]
        dx = w * dy
        alpha = 1.0
        improved = False
        while alpha > 1e-3:
            x_try = _interior_projection(problem, asm, x + alpha * dx, margin=1e-12)
            try:
                g_t = asm.equalities(x_try)
                h_t = asm.rows_raw(x_try)
            except (ValueError, FloatingPointError):
                alpha *= 0.5
                continue
            act_t = h_t > -margin
            r_t = np.concatenate([g_t, (h_t[act_t] + margin[act_t]) * asm.scale[act_t]])
            norm_t = float(np.max(np.abs(r_t))) if len(r_t) else 0.0
            if norm_t < (1.0 - 1e-4 * alpha) * norm:
                x = x_try
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
    return x


def solve_nlp(problem: NlpProblem, opts: SolveOptions = SolveOptions()) -> SolveOutcome:
    """Run the predictor-corrector interior-point iteration."""
    asm = _Assembled(problem)
    n = problem.n

    if opts.start is not None:
        x = np.array(opts.start, dtype=float)
    else:
        x = problem._probe()
    # strict interiority for bounded, non-fixed variables
    lo, hi = problem.x_lower.copy(), problem.x_upper.copy()
    for i in asm.bu:
        width = hi[i] - (lo[i] if np.isfinite(lo[i]) else hi[i] - 2.0)
        x[i] = min(x[i], hi[i] - 1e-6 * max(width, 1.0))
    for i in asm.bl:
        width = (hi[i] if np.isfinite(hi[i]) else lo[i] + 2.0) - lo[i]
        x[i] = max(x[i], lo[i] + 1e-6 * max(width, 1.0))
    x[asm.fixed_idx] = asm.fixed_val

    if opts.presolve_feasibility:
        try:
            if len(asm.equalities(x)) > 0:
                x = _feasibility_presolve(problem, asm, x)
        except (ValueError, FloatingPointError):
            pass

    asm.compute_scaling(x)
    h_rows = asm.rows(x)
    s = np.maximum(-h_rows, opts.slack_floor)
    z = np.minimum(opts.initial_barrier / s, 1e4)
    m = len(asm.equalities(x))
    lam = np.zeros(m)
    p_rows = len(s)
    tau = opts.fraction_to_boundary

    history: list[IterationRecord] = []
    prev_f = np.inf
    status = "max_iter"
    message = ""
    restarts_left = 3
    gap0 = opts.initial_barrier
    mu_bar = max(gap0, opts.tol_complementarity)  # monotone barrier reference
    it = 0

    for it in range(1, opts.max_iterations + 1):
        try:
            g = asm.equalities(x)
            Jg = asm.eq_jacobian(x)
            h_raw = asm.rows_raw(x)
            h_rows = h_raw * asm.scale
            Jh = asm.jac(x)
            f_val = problem.objective(x)
            gf = problem.objective_grad(x)
            w_ineq, w_bounds = asm.split_multipliers(z)
            lam_user = lam[: m - asm.n_eq_extra]
            H = problem.lag_hess(x, lam_user, w_ineq)
        except (ValueError, FloatingPointError) as exc:
            status, message = "numerical_failure", f"evaluation failed: {exc}"
            break

        r_dual = gf + Jg.T @ lam + (Jh.T @ z if p_rows else 0.0)
        feas = max(
            float(np.max(np.abs(g))) if m else 0.0,
            float(np.max(h_raw)) if p_rows else 0.0,
            0.0,
        )
        gap = float(s @ z / p_rows) if p_rows else 0.0
        obj_change = abs(f_val - prev_f) / (1.0 + abs(prev_f))
        mult_scale = max(
            1.0,
            float(np.max(np.abs(lam))) if m else 0.0,
            float(np.max(z)) if p_rows else 0.0,
        )
        stationarity = float(np.max(np.abs(r_dual))) / mult_scale
        history.append(IterationRecord(feas, gap, f_val, stationarity))
        if (
            feas < opts.tol_feasibility
            and gap < opts.tol_complementarity
            and obj_change < opts.tol_objective
        ):
            status = "converged"
            break
        if (
            gap < opts.tol_complementarity
            and obj_change < opts.tol_objective
            and feas < 1e-3
            and len(history) > 3
            and feas > 0.8 * history[-4].feasibility
        ):
            # gap and objective settled but feasibility is creeping;
            # finish the residual with Gauss-Newton steps directly
            x = _feasibility_presolve(problem, asm, x)
            if p_rows and float(np.max(asm.rows_raw(x))) > 0.0:
                x = _restore_feasibility(problem, asm, x, margin_raw=1e-8)
            prev_f = f_val
            continue
        prev_f = f_val

        # exploding multipliers, a long feasibility stall, or a collapsed
        # slack mean the iterate left the region where the barrier Newton
        # model works; restore strict feasibility and restart the barrier
        def needs_restart() -> bool:
            if not p_rows:
                return False
            if gap > max(1e4 * gap0, 1e2):
                return True
            # a collapsed slack with a huge dual only signals trouble while
            # the iterate is still infeasible; binding rows naturally have
            # tiny slacks near the solution
            if feas > 100.0 * opts.tol_feasibility and float(np.max(z / s)) > 1e13:
                return True
            return (
                it > 8
                and feas > 100.0 * opts.tol_feasibility
                and feas > 0.95 * history[-7].feasibility
                and gap > 10.0 * gap0
            )

        def do_restart():
            nonlocal x, s, z, lam, prev_f, restarts_left
            restarts_left -= 1
            x = _restore_feasibility(problem, asm, x)
            rows = asm.rows(x)
            s = np.maximum(-rows, 1e-3)
            z = 1e-2 / s
            lam = np.zeros(m)
            prev_f = np.inf

        if restarts_left > 0 and needs_restart():
            do_restart()
            continue

        if p_rows:
            D = z / s
            M = H + (Jh * D[:, None]).T @ Jh
        else:
            M = H
        if not np.all(np.isfinite(M)):
            if restarts_left > 0:
                do_restart()
                continue
            status, message = "numerical_failure", "non-finite KKT matrix"
            break
        fact, _ = _factor_augmented(M, Jg)
        if fact is None:
            status, message = "numerical_failure", "singular KKT system after regularization"
            break

        r_h = h_rows + s

        def directions(comp_target: np.ndarray):
            # eliminate (ds, dz): ds = -r_h - Jh dx and
            # dz = comp_target/s - z + (z/s) r_h + (z/s) Jh dx
            if p_rows:
                rhs_x = -r_dual + Jh.T @ z - Jh.T @ ((comp_target + z * r_h) / s)
            else:
                rhs_x = -r_dual
            rhs = np.concatenate([rhs_x, -g])
            if not np.all(np.isfinite(rhs)):
                raise FloatingPointError("non-finite KKT right-hand side")
            sol = fact.solve(rhs)
            dx, dlam = sol[:n], sol[n:]
            if p_rows:
                ds = -r_h - Jh @ dx
                dz = (comp_target - z * ds) / s - z
            else:
                ds = np.zeros(0)
                dz = np.zeros(0)
            return dx, dlam, ds, dz

        # affine predictor, then Mehrotra corrector
        try:
            dx_a, dlam_a, ds_a, dz_a = directions(np.zeros(p_rows))
            if p_rows:
                ap_a = _max_step(s, ds_a, tau)
                ad_a = _max_step(z, dz_a, tau)
                gap_aff = float((s + ap_a * ds_a) @ (z + ad_a * dz_a) / p_rows)
                sigma = min(1.0, max(0.0, (gap_aff / gap) ** 3)) if gap > 0 else 0.0
                comp = sigma * gap - ds_a * dz_a
                dx, dlam, ds, dz = directions(comp)
                ap = _max_step(s, ds, tau)
                ad = _max_step(z, dz, tau)
                gap_new = float((s + ap * ds) @ (z + ad * dz) / p_rows)
                if gap_aff > 0 and gap_new > 10.0 * gap_aff:
                    # corrector overshot: fall back to the predictor direction
                    dx, dlam, ds, dz = dx_a, dlam_a, ds_a, dz_a
                    ap, ad = ap_a, ad_a
                # cap the dual step so the accepted complementarity stays
                # within the corrector safeguard (10x the predictor
                # estimate) and cannot compound across iterations
                target = min(10.0 * gap_aff, 1.5 * gap)
                if target > 0:
                    shat = s + ap * ds
                    ghat = float(shat @ z / p_rows)
                    slope = float(shat @ dz / p_rows)
                    if ghat + ad * slope > target and slope > 1e-300:
                        ad = min(ad, max((target - ghat) / slope, 0.0))
            else:
                dx, dlam, ds, dz = dx_a, dlam_a, ds_a, dz_a
                ap = ad = 1.0
        except FloatingPointError as exc:
            if restarts_left > 0:
                do_restart()
                continue
            status, message = "numerical_failure", str(exc)
            break

        if problem.step_limits is not None:
            over = np.abs(dx) / problem.step_limits
            worst = float(np.max(over))
            if worst > 1.0:
                scale_back = 1.0 / worst
                dx, dlam, ds, dz = (scale_back * dx, scale_back * dlam,
                                    scale_back * ds, scale_back * dz)

        # globalization: Armijo backtracking on an l1 exact-penalty merit
        # of the barrier problem; the penalty weight grows just enough to
        # keep the Newton direction a descent direction
        mu_t = max(sigma * gap, 1e-14) if p_rows else 0.0
        viol0 = float(np.sum(np.abs(g))) + (float(np.sum(np.abs(r_h))) if p_rows else 0.0)
        descent = float(gf @ dx) - (mu_t * float(np.sum(ds / s)) if p_rows else 0.0)
        # exact-penalty weight: just enough for the Newton direction to be
        # a descent direction, floored by the multiplier magnitude; no
        # memory, so a stiff feasibility phase cannot block later steps
        nu = max(10.0, 1.1 * mult_scale)
        if viol0 > 1e-14 and descent > 0:
            nu = min(max(nu, 1.1 * descent / viol0), 1e9)
        dphi = descent - nu * viol0

        def merit_at(x_t: np.ndarray, s_t: np.ndarray) -> float:
            f_t = problem.objective(x_t)
            val = f_t + nu * float(np.sum(np.abs(asm.equalities(x_t))))
            if p_rows:
                rh_t = asm.rows(x_t) + s_t
                val += -mu_t * float(np.sum(np.log(s_t))) + nu * float(np.sum(np.abs(rh_t)))
            return val

        phi0 = problem.objective(x) + nu * viol0
        if p_rows:
            phi0 += -mu_t * float(np.sum(np.log(s)))
        x_acc = None
        soc_tried = False
        for _ in range(12):
            x_t = x + ap * dx
            s_t = s + ap * ds
            try:
                if merit_at(x_t, s_t) <= phi0 + 1e-4 * ap * dphi:
                    x_acc = x_t
                    break
                # second-order correction: curvature of the equality
                # manifold otherwise blocks long dispatch rearrangements
                if not soc_tried and m:
                    soc_tried = True
                    g_t = asm.equalities(x_t)
                    sol_c = fact.solve(np.concatenate([np.zeros(n), -g_t]))
                    x_c = x_t + sol_c[:n]
                    if merit_at(x_c, s_t) <= phi0 + 1e-4 * ap * dphi:
                        x_acc = x_c
                        break
            except (ValueError, FloatingPointError):
                pass
            ap *= 0.5
        if x_acc is None:
            x_acc = x + ap * dx
            s_t = s + ap * ds

        x = x_acc
        s = s_t
        lam = lam + ad * dlam
        z = z + ad * dz
        if p_rows:
            # keep every complementarity product within a wide band of the
            # monotone barrier reference; this bounds the measured gap by
            # 1e6 * mu_bar, so dual blow-ups cannot compound
            mu_bar = min(mu_bar, max(gap, 0.01 * opts.tol_complementarity))
            z = np.clip(z, mu_bar / (1e6 * s), 1e6 * mu_bar / s)
    else:
        it = opts.max_iterations

    w_ineq, w_bounds = asm.split_multipliers(z)
    f_final = history[-1].objective if history else problem.objective(x)
    feas_final = history[-1].feasibility if history else np.inf
    gap_final = history[-1].gap if history else np.inf
    return SolveOutcome(
        status=status,
        x=x,
        iterations=it,
        history=history,
        objective=f_final,
        feasibility=feas_final,
        gap=gap_final,
        mult_eq=-lam[: m - asm.n_eq_extra] if m else np.zeros(0),
        mult_ineq=w_ineq,
        mult_bounds=w_bounds,
        message=message,
    )


def _nearest_step(value: float, steps: np.ndarray) -> float:
    """Nearest admissible step; exact ties round down."""
    d = np.abs(steps - value)
    best = np.min(d)
    candidates = steps[d <= best + 1e-15]
    return float(np.min(candidates))


def _second_nearest_step(value: float, steps: np.ndarray) -> Optional[float]:
    if len(steps) < 2:
        return None
    order = np.argsort(np.abs(steps - value), kind="stable")
    return float(steps[order[1]])


def fix_variables(problem: NlpProblem, idx: Sequence[int], values: Sequence[float]) -> NlpProblem:
    """Pin variables to exact values (they become equality rows internally)."""
    lo = problem.x_lower.copy()
    hi = problem.x_upper.copy()
    for i, v in zip(idx, values):
        lo[i] = hi[i] = v
    return replace(problem, x_lower=lo, x_upper=hi)


def round_discrete(
    outcome: SolveOutcome,
    caps: Sequence[tuple[int, np.ndarray]],
    problem: NlpProblem,
    opts: SolveOptions = SolveOptions(),
) -> SolveOutcome:
    """Fix capacitor variables to admissible steps and re-converge.

    ``caps`` lists (variable index, ordered step set) pairs.  Values are
    snapped to the nearest step (ties round down) and the continuous
    problem is re-solved with those variables pinned.  If the re-solve
    fails, each capacitor in turn is moved to its second-nearest step
    (one swap at a time) before reporting failure.
    """
    if not caps:
        return outcome
    if not outcome.converged:
        raise ValueError("discrete rounding requires a converged relaxed solve")
    idx = [i for i, _ in caps]
    nearest = [_nearest_step(outcome.x[i], steps) for i, steps in caps]

    def attempt(values: Sequence[float]) -> SolveOutcome:
        fixed = fix_variables(problem, idx, values)
        start = outcome.x.copy()
        start[idx] = values
        return solve_nlp(fixed, replace(opts, start=start, initial_barrier=1e-3,
                                        slack_floor=1e-8))

    result = attempt(nearest)
    if result.converged:
        return result
    for swap_pos, (i, steps) in enumerate(caps):
        alt = _second_nearest_step(outcome.x[i], steps)
        if alt is None:
            continue
        values = list(nearest)
        values[swap_pos] = alt
        result = attempt(values)
        if result.converged:
            return result
    return result


def check_derivatives(
    problem: NlpProblem,
    x: np.ndarray,
    step: float = 1e-6,
    seed: int = 0,
) -> dict[str, dict[str, float]]:
    """Compare analytic Jacobians/Hessians against central finite differences.

    Returns, per constraint family (plus ``objective``), the maximum
    entrywise relative error of the first and second derivatives.
    """
    rng = np.random.default_rng(seed)
    n = problem.n

    def fd_jacobian(fun, m_rows):
        J = np.zeros((m_rows, n))
        for i in range(n):
            xp = x.copy()
            xp[i] += step
            fp = np.atleast_1d(fun(xp))
            xp[i] -= 2 * step
            fm = np.atleast_1d(fun(xp))
            J[:, i] = (fp - fm) / (2 * step)
        return J

    def rel_err(A, F):
        scale = np.maximum(1.0, np.maximum(np.abs(A), np.abs(F)))
        return float(np.max(np.abs(A - F) / scale)) if A.size else 0.0

    report: dict[str, dict[str, float]] = {}

    g0 = problem.objective_grad(x)
    Jf = fd_jacobian(problem.objective, 1)
    H_obj = problem.lag_hess(
        x, np.zeros(len(problem.eq_fun(x)) if problem.eq_fun else 0),
        np.zeros(problem.n_ineq),
    )
    Hf = fd_jacobian(problem.objective_grad, n)
    report["objective"] = {
        "jacobian": rel_err(g0[None, :], Jf),
        "hessian": rel_err(H_obj, 0.5 * (Hf + Hf.T)),
    }

    def family_checks(fun, jac, families, is_eq):
        if fun is None:
            return
        vals = fun(x)
        J = jac(x)
        Jfd = fd_jacobian(fun, len(vals))
        m_eq = len(problem.eq_fun(x)) if problem.eq_fun else 0
        for name, sl in families:
            if sl.stop == sl.start:
                report[name] = {"jacobian": 0.0, "hessian": 0.0}
                continue
            entry = {"jacobian": rel_err(J[sl], Jfd[sl])}
            w = rng.standard_normal(sl.stop - sl.start)
            lam = np.zeros(m_eq)
            wi = np.zeros(problem.n_ineq)
            if is_eq:
                lam[sl] = w
            else:
                wi[sl] = w

            def grad_fam(xx):
                Jx = jac(xx)
                return w @ Jx[sl]

            H_an = problem.lag_hess(x, lam, wi) - H_obj
            H_fd = fd_jacobian(grad_fam, n)
            entry["hessian"] = rel_err(H_an, 0.5 * (H_fd + H_fd.T))
            report[name] = entry

    family_checks(problem.eq_fun, problem.eq_jac, problem.eq_families, True)
    family_checks(problem.ineq_fun, problem.ineq_jac, problem.ineq_families, False)
    return report
