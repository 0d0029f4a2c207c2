"""Amplitude hierarchy along the phase trajectory.

Each amplitude level is a truncated Taylor polynomial in the displacement from
the base curve whose coefficients solve a linear ODE system: the drift/diffusion
coefficients come from the same symbol-jet compositions as the phase equations,
and each level above the first is sourced by what the previous levels left of
the conjugated expansion.  Cutoffs localize the result to the tube where the
phase bound makes truncation errors harmless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .eikonal import (CASE_OFFSET, PhaseTrajectory, _eta_slot_base, _sigma_polys,
                      _symbol_tables, bracket_poly)
from .models import ModelProblem
from .polys import MPoly, multi_indices_upto
from .symbols import compose_from_jets, shift_jets


@dataclass
class TransportOptions:
    L: int = 1
    M_a: int = 4
    kappa_exp: float | None = None
    c_x: float = 1.0
    c_y: float = 4.3
    c_chi: float = 24.0
    n_substeps: int = 1  # RK4 substeps between trajectory nodes


@dataclass
class AmplitudeSet:
    levels: list            # per level: dict[(alpha, beta)] -> complex array over traj.grid
    kappa_exp: float
    cutoff: dict
    t0_anchor: float
    grid: np.ndarray
    M_a: int
    residual_orders: list = field(default_factory=list)

    def level_poly(self, ell: int, i_node: int, nx: int, ny: int) -> MPoly:
        p = MPoly(nx, ny)
        for key, arr in self.levels[ell].items():
            p.add_term(key, arr[i_node])
        return p

    def coeff_bound(self) -> float:
        return max(float(np.max(np.abs(arr))) for lev in self.levels for arr in lev.values())


def bump_profile(s):
    """Smooth-ish bump: 1 on [0,1], exp(1 - 1/(1-(s-1)^2)) on (1,2), 0 beyond."""
    s = np.abs(np.asarray(s, dtype=float))
    out = np.zeros_like(s)
    out[s <= 1.0] = 1.0
    mid = (s > 1.0) & (s < 2.0)
    u = s[mid] - 1.0
    out[mid] = np.exp(1.0 - 1.0 / (1.0 - u ** 2))
    return out if out.shape else float(out)


def cutoff_scales(model: ModelProblem, lam: float, rho: float, case: str,
                  c_x: float = 1.0, c_y: float = 4.3, c_chi: float = 24.0) -> dict:
    x_expo = model.inv_k - rho if case == CASE_OFFSET else 0.5 - rho
    return {
        "rho": rho, "k": model.k, "lam": lam, "case": case,
        "x_scale": c_x * lam ** (-x_expo),     # bump argument is |dx| / x_scale
        "y_scale": c_y * lam ** (-rho / 4.0),
        "chi_scale": c_chi * lam ** (rho - 1.0),
        "c_x": c_x, "c_y": c_y, "c_chi": c_chi,
    }


def apply_cutoffs(amp: AmplitudeSet, traj: PhaseTrajectory, t, x, y):
    """Scalar cutoff weight in [0,1] at one point."""
    st, _ = traj.state_at(float(t))
    sc = amp.cutoff
    dx = np.linalg.norm(np.atleast_1d(x) - st.x0)
    dy = np.linalg.norm(np.atleast_1d(y) - st.y0)
    w = bump_profile(dx / sc["x_scale"]) * bump_profile(dy / sc["y_scale"])
    w *= bump_profile(st.w0.imag / sc["chi_scale"])
    return float(w)


# -- transport coefficient fields ----------------------------------------------------


def _f0_expansion(model: ModelProblem, t, st, max_degree: int):
    """(m0, b0) displacement expansions of the zero-order term.

    F0 may carry eta-dependence of degree <= 1: the operator acts as
    multiplication by m0 plus b0 . D_y.  Expansion is in (dx, dy) around the
    base curve with the eta slot pinned at the fiber argument of the phase.
    """
    nx, ny = model.nx, model.ny
    m0 = MPoly(nx, ny)
    b0 = [MPoly(nx, ny) for _ in range(ny)]
    if model.F0 is None:
        return m0, b0
    eta_base = _eta_slot_base(st, model)
    for ax in multi_indices_upto(nx, max_degree):
        for ay in multi_indices_upto(ny, max_degree - sum(ax)):
            fac = 1.0
            for a in ax:
                fac *= math.factorial(a)
            for a in ay:
                fac *= math.factorial(a)
            key = tuple(ax) + tuple(ay)
            base = model.F0.partial((0, ax, ay, (0,) * nx, (0,) * ny),
                                    t, st.x0, st.xi0, eta_base, y=st.y0)
            m0.add_term(key, base / fac)
            for b in range(ny):
                mi = [0] * ny
                mi[b] = 1
                v = model.F0.partial((0, ax, ay, (0,) * nx, tuple(mi)),
                                     t, st.x0, st.xi0, np.zeros(ny), y=st.y0)
                if v != 0:
                    m0.add_term(key, v * eta_base[b] / fac)
                    b0[b].add_term(key, v / fac)
    return m0, b0


def transport_fields(traj: PhaseTrajectory, model: ModelProblem, t: float, max_degree: int):
    """Drift/diffusion coefficient expansions of the conjugated operator at time t.

    Returns (Vx, Vy, Q, m0, b0): lists/matrix of MPoly such that the amplitude
    equation reads  D_t phi + Vy . D_y phi + Q : D_y^2 phi / 2 + Vx . D_x phi
    + (m0 + b0 . D_y) phi = source.
    """
    st, _ = traj.state_at(t)
    nx, ny = model.nx, model.ny
    lam, rho = st.lam, st.rho
    invk = model.inv_k
    jf, jr, sigma0, sigma1, sigma2, eta_base = _symbol_tables(st, model, t, max_degree)
    eta_inc = [sigma2[b].scaled(lam ** (invk + rho - 1.0)) for b in range(ny)]

    Vx = []
    for a in range(nx):
        ea = [0] * nx
        ea[a] = 1
        p = compose_from_jets(shift_jets(jf, shift_xi=ea), nx, ny, sigma0, eta_inc, max_degree)
        if jr is not None:
            p = p + compose_from_jets(shift_jets(jr, shift_xi=ea), nx, ny, sigma0, eta_inc,
                                      max_degree).scaled(lam ** (-invk))
        Vx.append(p)
    Vy = []
    for b in range(ny):
        eb = [0] * ny
        eb[b] = 1
        p = compose_from_jets(shift_jets(jf, eb), nx, ny, sigma0, eta_inc,
                              max_degree).scaled(lam ** invk)
        if jr is not None:
            p = p + compose_from_jets(shift_jets(jr, eb), nx, ny, sigma0, eta_inc, max_degree)
        Vy.append(p)
    Q = [[None] * ny for _ in range(ny)]
    for b1 in range(ny):
        for b2 in range(ny):
            dd = [0] * ny
            dd[b1] += 1
            dd[b2] += 1
            p = compose_from_jets(shift_jets(jf, dd), nx, ny, sigma0, None,
                                  max_degree).scaled(lam ** (2.0 * invk - 1.0))
            if jr is not None:
                p = p + compose_from_jets(shift_jets(jr, dd), nx, ny, sigma0, None,
                                          max_degree).scaled(lam ** (invk - 1.0))
            Q[b1][b2] = p
    m0, b0 = _f0_expansion(model, t, st, max_degree)
    return Vx, Vy, Q, m0, b0


def transport_rhs(phi: MPoly, t: float, traj: PhaseTrajectory, model: ModelProblem,
                  max_degree: int, source: MPoly | None = None) -> MPoly:
    """d(phi-coefficients)/dt in the moving frame."""
    st, dst = traj.state_at(t)
    nx, ny = model.nx, model.ny
    Vx, Vy, Q, m0, b0 = transport_fields(traj, model, t, max_degree)
    out = MPoly(nx, ny)
    for a in range(nx):
        dphin = phi.diff(a)
        out = out + dphin.scaled(dst.x0[a]) - Vx[a].mul(dphin, max_degree=max_degree)
    for b in range(ny):
        dphin = phi.diff(nx + b)
        out = out + dphin.scaled(dst.y0[b]) - Vy[b].mul(dphin, max_degree=max_degree) \
            - b0[b].mul(dphin, max_degree=max_degree)
    for b1 in range(ny):
        for b2 in range(ny):
            out = out + Q[b1][b2].mul(phi.diff(nx + b1).diff(nx + b2),
                                      max_degree=max_degree).scaled(0.5j)
    out = out - m0.mul(phi, max_degree=max_degree).scaled(1j)
    if source is not None:
        out = out + source.scaled(1j)
    return out


def _integrate_level(traj: PhaseTrajectory, model: ModelProblem, max_degree: int,
                     init_poly: MPoly, source_at) -> dict:
    """RK4 for one amplitude level over the trajectory grid, both directions."""
    nx, ny = model.nx, model.ny
    grid = traj.grid
    i0 = int(np.argmin(np.abs(grid - traj.t0_anchor)))
    keys = [tuple(k) + tuple(j) for k in multi_indices_upto(nx, max_degree)
            for j in multi_indices_upto(ny, max_degree - sum(k))]
    keys = [k for k in keys if sum(k) <= max_degree]
    out = {k: np.zeros(len(grid), dtype=complex) for k in keys}

    def poly_of(vec):
        p = MPoly(nx, ny)
        for k, v in zip(keys, vec):
            p.add_term(k, v)
        return p

    def vec_of(p):
        return np.array([p.c.get(k, 0.0) for k in keys], dtype=complex)

    def F(t, vec):
        return vec_of(transport_rhs(poly_of(vec), t, traj, model, max_degree,
                                    source=source_at(t)))

    v0 = vec_of(init_poly)
    for k, v in zip(keys, v0):
        out[k][i0] = v

    def sweep(indices):
        v = v0.copy()
        prev = grid[i0]
        for idx in indices:
            t1 = grid[idx]
            h = t1 - prev
            k1 = F(prev, v)
            k2 = F(prev + h / 2, v + h / 2 * k1)
            k3 = F(prev + h / 2, v + h / 2 * k2)
            k4 = F(t1, v + h * k3)
            v = v + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            for k, vv in zip(keys, v):
                out[k][idx] = vv
            prev = t1

    sweep(range(i0 + 1, len(grid)))
    sweep(range(i0 - 1, -1, -1))
    return out


def solve_transport(traj: PhaseTrajectory, model: ModelProblem,
                    options: TransportOptions | None = None) -> AmplitudeSet:
    """Integrate amplitude levels 0..L with the telescoped source recursion."""
    opts = options or TransportOptions()
    nx, ny = model.nx, model.ny
    lam = traj.lam
    rho = traj.opts.rho
    kappa = opts.kappa_exp
    if kappa is None:
        kappa = rho if math.isinf(model.k) else min(rho, 0.5 * model.inv_k)
    grid = traj.grid

    # bracket leftovers, cached per node, reused by every level's source
    bracket_cache: dict[int, MPoly] = {}

    def bracket_at(t: float) -> MPoly:
        i = int(np.argmin(np.abs(grid - t)))
        if abs(grid[i] - t) < 1e-12:
            if i not in bracket_cache:
                bracket_cache[i] = bracket_poly(traj, grid[i], opts.M_a)
            return bracket_cache[i]
        return bracket_poly(traj, t, opts.M_a)

    levels = []
    residual_orders = []
    one = MPoly.constant(nx, ny, 1.0)
    zero = MPoly(nx, ny)
    i0 = int(np.argmin(np.abs(grid - traj.t0_anchor)))

    for ell in range(opts.L + 1):
        if ell == 0:
            def src(t):
                return None
        else:
            prev = levels[ell - 1]
            prev_keys = list(prev.keys())

            def src(t, _prev=prev, _keys=prev_keys):
                i = int(np.argmin(np.abs(grid - t)))
                # linear interpolation of the previous level's coefficients
                if grid[i] > t and i > 0:
                    i -= 1
                i = min(i, len(grid) - 2)
                w = (t - grid[i]) / (grid[i + 1] - grid[i]) if grid[i + 1] > grid[i] else 0.0
                p = MPoly(nx, ny)
                for k in _keys:
                    p.add_term(k, (1 - w) * _prev[k][i] + w * _prev[k][i + 1])
                B = bracket_at(t)
                return B.mul(p, max_degree=opts.M_a).scaled(-(lam ** kappa))

        coeffs = _integrate_level(traj, model, opts.M_a, one if ell == 0 else zero, src)
        levels.append(coeffs)
        B0 = bracket_at(grid[i0])
        residual_orders.append(float(B0.max_abs()) * lam ** (-ell * kappa))

    cut = cutoff_scales(model, lam, rho, traj.case, opts.c_x, opts.c_y, opts.c_chi)
    return AmplitudeSet(levels, kappa, cut, traj.t0_anchor, grid, opts.M_a,
                        residual_orders)
