"""Admittance matrices and their voltage/frequency-ratio derivatives.

Low-frequency line parameters are stored at the 500 kV / 60 Hz reference
base and rescaled to the operating point through the frequency ratio
``f_r = F_l / F_base`` and squared-voltage ratio ``v_r = V_l^2 / V_base^2``:

    r = r_base / v_r,   x = x_base * f_r / v_r,   b = b_base * f_r * v_r

The series admittance of a line is then an explicit function of
``(f_r, v_r)`` with closed-form first and second partial derivatives;
this module evaluates them entrywise for the conductance/susceptance
matrices.  The series terms are linear in ``v_r``, so every second
derivative purely in ``v_r`` vanishes and is not stored.

Matrices are dense ``numpy`` arrays below :data:`DENSE_LIMIT` buses and
``scipy.sparse.csr_matrix`` above.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .model import GridModel, Line

#: Networks with at most this many buses use dense matrix storage.
DENSE_LIMIT = 200


@dataclass(frozen=True)
class RatioPoint:
    """Operating point of the low-frequency grid in ratio coordinates."""

    f_r: float
    v_r: float

    def __post_init__(self) -> None:
        if self.f_r <= 0 or self.v_r <= 0:
            raise ValueError("ratio point must be strictly positive")


#: The 60-Hz grid operates at its own reference base.
IDENTITY_RATIOS = RatioPoint(1.0, 1.0)


@dataclass
class AdmittanceBundle:
    """Conductance/susceptance matrices, optionally with ratio partials.

    All matrices share the bus ordering of the grid they were built from.
    Derivative members are ``None`` unless requested.
    """

    g: np.ndarray
    b: np.ndarray
    dg_dfr: Optional[np.ndarray] = None
    db_dfr: Optional[np.ndarray] = None
    d2g_dfr2: Optional[np.ndarray] = None
    d2b_dfr2: Optional[np.ndarray] = None
    dg_dvr: Optional[np.ndarray] = None
    db_dvr: Optional[np.ndarray] = None
    d2g_dfrdvr: Optional[np.ndarray] = None
    d2b_dfrdvr: Optional[np.ndarray] = None

    @property
    def has_partials(self) -> bool:
        return self.dg_dfr is not None


def scale_line_params(line: Line, rp: RatioPoint) -> tuple[float, float, float]:
    """Lumped pi-model parameters of ``line`` at the operating ratios."""
    if line.x_base <= 0:
        raise ValueError("line reactance must be positive")
    r = line.r_base / rp.v_r
    x = line.x_base * rp.f_r / rp.v_r
    b = line.b_base * rp.f_r * rp.v_r
    return r, x, b


@dataclass(frozen=True)
class SeriesPartials:
    """Series admittance g + jb of one line and its ratio partials.

    The charging susceptance (total, not half) and its partials are
    carried separately; only the diagonal assembly uses them.
    """

    g: float
    b: float
    dg_dfr: float = 0.0
    db_dfr: float = 0.0
    d2g_dfr2: float = 0.0
    d2b_dfr2: float = 0.0
    dg_dvr: float = 0.0
    db_dvr: float = 0.0
    d2g_dfrdvr: float = 0.0
    d2b_dfrdvr: float = 0.0
    bc: float = 0.0
    dbc_dfr: float = 0.0
    dbc_dvr: float = 0.0
    d2bc_dfrdvr: float = 0.0


def series_partials(line: Line, rp: RatioPoint) -> SeriesPartials:
    """Closed-form series admittance and all ratio partials of one line.

    With base parameters (r, x) and d = r^2 + x^2 f^2 the series
    admittance at ratios (f, v) is

        g =  v r / d,        b = -v x f / d,

    hence (all second derivatives in v alone vanish)

        dg/df   = -2 r x^2 f v / d^2
        db/df   = -x (r^2 - x^2 f^2) v / d^2
        d2g/df2 = -2 r x^2 v (r^2 - 3 x^2 f^2) / d^3
        d2b/df2 =  2 x^3 f v (3 r^2 - x^2 f^2) / d^3

    and the v-partials follow from linearity in v.
    """
    rb, xb, bb = line.r_base, line.x_base, line.b_base
    f, v = rp.f_r, rp.v_r
    d = rb * rb + xb * xb * f * f
    if d == 0.0:
        raise ValueError("line has zero series impedance")
    g = v * rb / d
    b = -v * xb * f / d
    dg_dfr = -2.0 * rb * xb * xb * f * v / d**2
    db_dfr = -v * xb * (rb * rb - xb * xb * f * f) / d**2
    d2g_dfr2 = -2.0 * rb * xb * xb * v * (rb * rb - 3.0 * xb * xb * f * f) / d**3
    d2b_dfr2 = 2.0 * xb**3 * f * v * (3.0 * rb * rb - xb * xb * f * f) / d**3
    return SeriesPartials(
        g=g,
        b=b,
        dg_dfr=dg_dfr,
        db_dfr=db_dfr,
        d2g_dfr2=d2g_dfr2,
        d2b_dfr2=d2b_dfr2,
        dg_dvr=g / v,
        db_dvr=b / v,
        d2g_dfrdvr=dg_dfr / v,
        d2b_dfrdvr=db_dfr / v,
        bc=bb * f * v,
        dbc_dfr=bb * v,
        dbc_dvr=bb * f,
        d2bc_dfrdvr=bb,
    )


def _assemble(grid: GridModel, terms: list[tuple[float, float, float]]) -> tuple[np.ndarray, np.ndarray]:
    """Assemble (G, B) from per-line (g_series, b_series, b_charging_total).

    Standard equivalent-pi stamping with an off-nominal tap on the
    from side: Yff = (y + j bc/2)/tap^2, Yft = Ytf = -y/tap,
    Ytt = y + j bc/2.
    """
    n = grid.n_bus
    G = np.zeros((n, n))
    B = np.zeros((n, n))
    for line, (gs, bs, bc) in zip(grid.lines, terms):
        i = grid.bus_index[line.from_bus]
        j = grid.bus_index[line.to_bus]
        t = line.tap
        G[i, i] += gs / t**2
        B[i, i] += (bs + bc / 2.0) / t**2
        G[j, j] += gs
        B[j, j] += bs + bc / 2.0
        G[i, j] -= gs / t
        G[j, i] -= gs / t
        B[i, j] -= bs / t
        B[j, i] -= bs / t
    return G, B


def _maybe_sparse(m: np.ndarray, n_bus: int):
    return sp.csr_matrix(m) if n_bus > DENSE_LIMIT else m


def build_admittance(grid: GridModel, rp: RatioPoint = IDENTITY_RATIOS) -> AdmittanceBundle:
    """Conductance and susceptance matrices of ``grid`` at ratios ``rp``.

    Dispatchable shunt capacitors are deliberately excluded: their
    voltage-squared injection enters the reactive balance directly.
    """
    terms = []
    for line in grid.lines:
        sd = series_partials(line, rp)
        terms.append((sd.g, sd.b, sd.bc))
    G, B = _assemble(grid, terms)
    n = grid.n_bus
    return AdmittanceBundle(g=_maybe_sparse(G, n), b=_maybe_sparse(B, n))


def admittance_partials(grid: GridModel, rp: RatioPoint) -> AdmittanceBundle:
    """Admittance matrices with all first/second ratio derivative matrices."""
    per_line = [series_partials(line, rp) for line in grid.lines]
    G, B = _assemble(grid, [(sd.g, sd.b, sd.bc) for sd in per_line])
    dG, dB = _assemble(grid, [(sd.dg_dfr, sd.db_dfr, sd.dbc_dfr) for sd in per_line])
    d2G, d2B = _assemble(grid, [(sd.d2g_dfr2, sd.d2b_dfr2, 0.0) for sd in per_line])
    dGv, dBv = _assemble(grid, [(sd.dg_dvr, sd.db_dvr, sd.dbc_dvr) for sd in per_line])
    d2Gm, d2Bm = _assemble(grid, [(sd.d2g_dfrdvr, sd.d2b_dfrdvr, sd.d2bc_dfrdvr) for sd in per_line])
    n = grid.n_bus
    return AdmittanceBundle(
        g=_maybe_sparse(G, n),
        b=_maybe_sparse(B, n),
        dg_dfr=_maybe_sparse(dG, n),
        db_dfr=_maybe_sparse(dB, n),
        d2g_dfr2=_maybe_sparse(d2G, n),
        d2b_dfr2=_maybe_sparse(d2B, n),
        dg_dvr=_maybe_sparse(dGv, n),
        db_dvr=_maybe_sparse(dBv, n),
        d2g_dfrdvr=_maybe_sparse(d2Gm, n),
        d2b_dfrdvr=_maybe_sparse(d2Bm, n),
    )
