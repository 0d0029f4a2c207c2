"""Field synthesis, operator application, and norm reports.

The mode is sampled on a tensor grid (t uniform over the integration window,
periodic boxes in x and y sized so the cutoff support stays interior), the
operator is applied both through its differential realization (spectral in
x/y, finite differences in t) and through the conjugated expansion, and the
discrete Sobolev norms feed the solvability-stress ratio per frequency scale.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import next_fast_len

from .conditions import NoSignChange, detect_sign_change
from .eikonal import (CASE_OFFSET, EikonalOptions, GateEmpty, PhaseTrajectory,
                      _omega_polys, integrate_phase)
from .models import ModelProblem
from .polys import MPoly
from .symbols import PolySymbol
from .transport import AmplitudeSet, TransportOptions, bump_profile, solve_transport


class SynthError(Exception):
    pass


class GridTooCoarse(SynthError):
    pass


class MissingDiffOp(SynthError):
    pass


@dataclass
class GridOptions:
    n_t: int = 257
    max_n_x: int = 320
    max_n_y: int = 320
    x_points_per_period: float = 6.0   # keeps h_x * lam * |xi0| <= pi/3
    y_margin: float = 1.9              # Nyquist headroom factor in y
    interior_margin: float = 0.10      # cutoff support clearance per side


@dataclass
class FieldGrid:
    t_axis: np.ndarray
    x_axes: list
    y_axes: list
    values: np.ndarray
    lam: float

    @property
    def h_t(self) -> float:
        return float(self.t_axis[1] - self.t_axis[0])

    def spacings(self):
        return ([float(a[1] - a[0]) for a in self.x_axes],
                [float(a[1] - a[0]) for a in self.y_axes])

    @property
    def cell_volume(self) -> float:
        hx, hy = self.spacings()
        v = self.h_t
        for h in hx + hy:
            v *= h
        return v

    def like(self, values: np.ndarray) -> "FieldGrid":
        return FieldGrid(self.t_axis, self.x_axes, self.y_axes, values, self.lam)

    def freq_axes(self):
        """Physical angular-frequency axes (tau, xi, eta) for the DFT."""
        ax = [2 * np.pi * np.fft.fftfreq(len(self.t_axis), d=self.h_t)]
        hx, hy = self.spacings()
        for a, h in zip(self.x_axes, hx):
            ax.append(2 * np.pi * np.fft.fftfreq(len(a), d=h))
        for a, h in zip(self.y_axes, hy):
            ax.append(2 * np.pi * np.fft.fftfreq(len(a), d=h))
        return ax


def _axis(center: float, half_width: float, n: int):
    """Periodic axis of n points covering [center - hw, center + hw)."""
    h = 2 * half_width / n
    return center - half_width + h * np.arange(n)


def plan_grid(traj: PhaseTrajectory, amp: AmplitudeSet, model: ModelProblem,
              gopts: GridOptions) -> FieldGrid:
    lam = traj.lam
    nx, ny = model.nx, model.ny
    sc = amp.cutoff
    t_axis = np.linspace(traj.grid[0], traj.grid[-1], gopts.n_t)

    x0s = np.array([s.x0 for s in traj.states])
    y0s = np.array([s.y0 for s in traj.states])
    xi_max = max(float(np.max(np.linalg.norm(s.xi0))) for s in traj.states)
    eta_freq = lam ** (1.0 - model.inv_k) * max(float(np.linalg.norm(model.eta0)), 0.0)
    if traj.case != CASE_OFFSET:
        eta_t_max = max(float(np.max(np.abs(s.eta_aux))) for s in traj.states)
        eta_freq = max(lam ** traj.opts.rho * eta_t_max, 1.0)

    x_axes, y_axes = [], []
    for a in range(nx):
        cx = 0.5 * (x0s[:, a].max() + x0s[:, a].min())
        spread = 0.5 * (x0s[:, a].max() - x0s[:, a].min())
        support = 2.0 * sc["x_scale"] + spread
        half = support / (1.0 - 2.0 * gopts.interior_margin)
        h_max = np.pi / (gopts.x_points_per_period / 2.0 * lam * xi_max)
        n = next_fast_len(max(8, int(math.ceil(2 * half / h_max))))
        if n > gopts.max_n_x:
            raise GridTooCoarse(
                f"x axis needs {n} points (> {gopts.max_n_x}) to resolve lam*|xi| = {lam * xi_max:g}")
        x_axes.append(_axis(cx, half, n))
    for b in range(ny):
        cy = 0.5 * (y0s[:, b].max() + y0s[:, b].min())
        spread = 0.5 * (y0s[:, b].max() - y0s[:, b].min())
        support = 2.0 * sc["y_scale"] + spread
        half = support / (1.0 - 2.0 * gopts.interior_margin)
        h_max = np.pi / (gopts.y_margin * max(eta_freq, 4.0 / half))
        n = next_fast_len(max(8, int(math.ceil(2 * half / h_max))))
        if n > gopts.max_n_y:
            raise GridTooCoarse(
                f"y axis needs {n} points (> {gopts.max_n_y}); reduce lam or widen the margin")
        y_axes.append(_axis(cy, half, n))

    shape = (gopts.n_t,) + tuple(len(a) for a in x_axes) + tuple(len(a) for a in y_axes)
    values = np.zeros(shape, dtype=complex)
    return FieldGrid(t_axis, x_axes, y_axes, values, lam)


def _plane_axes(grid: FieldGrid, st, nx, ny):
    """Displacement arrays of each x/y variable broadcast over the spatial plane."""
    shape_len = nx + ny
    dx_axes, dy_axes = [], []
    for i, a in enumerate(grid.x_axes):
        sh = [1] * shape_len
        sh[i] = len(a)
        dx_axes.append((a - st.x0[i]).reshape(sh))
    for j, a in enumerate(grid.y_axes):
        sh = [1] * shape_len
        sh[nx + j] = len(a)
        dy_axes.append((a - st.y0[j]).reshape(sh))
    return dx_axes, dy_axes


def synthesize(traj: PhaseTrajectory, amp: AmplitudeSet, model: ModelProblem,
               gopts: GridOptions | None = None, grid: FieldGrid | None = None,
               with_chi: bool = True, with_phase: bool = True) -> FieldGrid:
    """Sample the mode  e^{i lam omega} * sum_l lam^{-l kappa} phi_l * cutoffs."""
    gopts = gopts or GridOptions()
    nx, ny = model.nx, model.ny
    lam = traj.lam
    grid = grid or plan_grid(traj, amp, model, gopts)
    sc = amp.cutoff
    out = np.zeros((len(grid.t_axis),) + tuple(len(a) for a in grid.x_axes)
                   + tuple(len(a) for a in grid.y_axes), dtype=complex)

    for it, t in enumerate(grid.t_axis):
        st, dst = traj.state_at(t)
        dx_axes, dy_axes = _plane_axes(grid, st, nx, ny)
        om, _ = _omega_polys(traj, st, dst)
        phase = np.exp(1j * lam * om.eval_grid(dx_axes, dy_axes)) if with_phase else 1.0

        i_node = int(np.argmin(np.abs(traj.grid - t)))
        ampval = None
        for ell in range(len(amp.levels)):
            p = amp.level_poly(ell, i_node, nx, ny)
            # linear interpolation of coefficients between trajectory nodes
            if traj.grid[i_node] != t:
                i1 = min(max(i_node + (1 if traj.grid[i_node] < t else -1), 0), len(traj.grid) - 1)
                if i1 != i_node:
                    w = abs(t - traj.grid[i_node]) / abs(traj.grid[i1] - traj.grid[i_node])
                    p2 = amp.level_poly(ell, i1, nx, ny)
                    p = p.scaled(1 - w) + p2.scaled(w)
            v = p.eval_grid(dx_axes, dy_axes) * lam ** (-ell * amp.kappa_exp)
            ampval = v if ampval is None else ampval + v

        rx = np.zeros(out.shape[1:])
        for d in dx_axes:
            rx = rx + d.real ** 2
        ry = np.zeros(out.shape[1:])
        for d in dy_axes:
            ry = ry + d.real ** 2
        w_cut = bump_profile(np.sqrt(rx) / sc["x_scale"]) * bump_profile(np.sqrt(ry) / sc["y_scale"])
        if with_chi:
            w_cut = w_cut * bump_profile(st.w0.imag / sc["chi_scale"])
        out[it] = phase * ampval * w_cut
    return grid.like(out)


# -- derivatives ------------------------------------------------------------------


_D1_EDGE = [
    np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0,
    np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0,
]


def _ddt(u: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order d/dt along axis 0 with one-sided closures."""
    out = np.empty_like(u)
    out[2:-2] = (u[:-4] - 8 * u[1:-3] + 8 * u[3:-1] - u[4:]) / (12 * h)
    c0, c1 = _D1_EDGE
    out[0] = (c0[0] * u[0] + c0[1] * u[1] + c0[2] * u[2] + c0[3] * u[3] + c0[4] * u[4]) / h
    out[1] = (c1[0] * u[0] + c1[1] * u[1] + c1[2] * u[2] + c1[3] * u[3] + c1[4] * u[4]) / h
    out[-1] = -(c0[0] * u[-1] + c0[1] * u[-2] + c0[2] * u[-3] + c0[3] * u[-4] + c0[4] * u[-5]) / h
    out[-2] = -(c1[0] * u[-1] + c1[1] * u[-2] + c1[2] * u[-3] + c1[3] * u[-4] + c1[4] * u[-5]) / h
    return out


def d_t(u: np.ndarray, h: float, order: int = 1) -> np.ndarray:
    """(-i d/dt)^order with 4th-order stencils."""
    out = u
    for _ in range(order):
        out = -1j * _ddt(out, h)
    return out


def spectral_derivative(field: FieldGrid, dx_mi=(), dy_mi=()) -> np.ndarray:
    """Apply D_x^alpha D_y^beta by Fourier multipliers on the periodic axes."""
    u = field.values
    nx, ny = len(field.x_axes), len(field.y_axes)
    hx, hy = field.spacings()
    out = u
    for i, a in enumerate(dx_mi):
        if a:
            zeta = 2 * np.pi * np.fft.fftfreq(len(field.x_axes[i]), d=hx[i])
            sh = [1] * u.ndim
            sh[1 + i] = len(zeta)
            out = np.fft.ifft(np.fft.fft(out, axis=1 + i) * (zeta ** a).reshape(sh), axis=1 + i)
    for j, b in enumerate(dy_mi):
        if b:
            zeta = 2 * np.pi * np.fft.fftfreq(len(field.y_axes[j]), d=hy[j])
            sh = [1] * u.ndim
            sh[1 + nx + j] = len(zeta)
            out = np.fft.ifft(np.fft.fft(out, axis=1 + nx + j) * (zeta ** b).reshape(sh),
                              axis=1 + nx + j)
    return out


def _coeff_on_grid(coeff: PolySymbol, field: FieldGrid) -> np.ndarray:
    """Evaluate a (t,x,y)-polynomial coefficient on the grid with broadcasting."""
    nt = len(field.t_axis)
    nx, ny = len(field.x_axes), len(field.y_axes)
    ndim = 1 + nx + ny
    tt = field.t_axis.reshape((nt,) + (1,) * (nx + ny))
    total = np.zeros((nt,) + tuple(len(a) for a in field.x_axes)
                     + tuple(len(a) for a in field.y_axes), dtype=complex)
    for tm in coeff.terms:
        v = tm.coeff * tm.tco.eval(tt, 0)
        for i, p in enumerate(tm.x_mi):
            if p:
                sh = [1] * ndim
                sh[1 + i] = len(field.x_axes[i])
                v = v * field.x_axes[i].reshape(sh) ** p
        for j, p in enumerate(tm.y_mi):
            if p:
                sh = [1] * ndim
                sh[1 + nx + j] = len(field.y_axes[j])
                v = v * field.y_axes[j].reshape(sh) ** p
        if any(tm.xi_mi) or any(tm.eta_mi):
            continue  # frequency powers have no place in a coefficient function
        total = total + v
    return total


def apply_direct(model: ModelProblem, field: FieldGrid) -> FieldGrid:
    """Apply the differential realization term by term."""
    if not model.diff_op:
        raise MissingDiffOp(f"model {model.label!r} carries no differential realization")
    out = np.zeros_like(field.values)
    for term in model.diff_op:
        work = field.values
        if any(term.dx_mi) or any(term.dy_mi):
            work = spectral_derivative(field.like(work), term.dx_mi, term.dy_mi)
        if term.dt_order:
            work = d_t(work, field.h_t, term.dt_order)
        c = _coeff_on_grid(term.coeff, field)
        out = out + c * work
    return field.like(out)


def _symbol_on_gradient(sym, field: FieldGrid, t3, x3, y3, gx, gy, dxi=(), deta=()):
    """Evaluate a symbol (or derivative) at complex phase-gradient fields."""
    if not isinstance(sym, PolySymbol):
        raise SynthError("grid evaluation requires polynomial-backed symbols")
    nxv, nyv = sym.nx, sym.ny
    total = 0.0
    dxi = tuple(dxi) if dxi else (0,) * nxv
    deta = tuple(deta) if deta else (0,) * nyv
    for tm in sym.terms:
        v = tm.coeff * tm.tco.eval(t3, 0)
        ok = True
        for i in range(nxv):
            if tm.x_mi[i]:
                v = v * x3[i] ** tm.x_mi[i]
        for j in range(nyv):
            if tm.y_mi[j]:
                v = v * y3[j] ** tm.y_mi[j]
        for i in range(nxv):
            e, d = tm.xi_mi[i], dxi[i]
            if d > e:
                ok = False
                break
            if e:
                fac = math.factorial(e) / math.factorial(e - d)
                v = v * fac * (gx[i] ** (e - d) if e > d else 1.0)
        if not ok:
            continue
        for j in range(nyv):
            e, d = tm.eta_mi[j], deta[j]
            if d > e:
                ok = False
                break
            if e:
                fac = math.factorial(e) / math.factorial(e - d)
                v = v * fac * (gy[j] ** (e - d) if e > d else 1.0)
        if not ok:
            continue
        total = total + v
    return total


def apply_via_expansion(traj: PhaseTrajectory, amp: AmplitudeSet, model: ModelProblem,
                        grid: FieldGrid) -> FieldGrid:
    """Residual through the conjugated expansion.

    Evaluates  e^{i lam omega} [ B Phi + D_t Phi + dF . D Phi + d2F : D^2 Phi / 2
    + F0-action ]  with the amplitude-plus-cutoff field Phi and the same
    numerical derivative backends as the direct application.  B carries the
    full second-order phase-curvature correction, so for polynomial symbols of
    fiber degree <= 2 this reproduces the direct application up to grid error.
    """
    nx, ny = model.nx, model.ny
    lam = traj.lam
    invk = model.inv_k
    nt = len(grid.t_axis)
    ndim = 1 + nx + ny

    phi_field = synthesize(traj, amp, model, grid=grid, with_phase=False).values
    phi_grid = grid.like(phi_field)
    DtPhi = d_t(phi_field, grid.h_t, 1)
    DxPhi = [spectral_derivative(phi_grid, dx_mi=tuple(1 if i == a else 0 for i in range(nx)))
             for a in range(nx)]
    DyPhi = [spectral_derivative(phi_grid, dy_mi=tuple(1 if j == b else 0 for j in range(ny)))
             for b in range(ny)]
    D2 = {}
    for a1 in range(nx):
        for a2 in range(a1, nx):
            mi = [0] * nx
            mi[a1] += 1
            mi[a2] += 1
            D2[("xx", a1, a2)] = spectral_derivative(phi_grid, dx_mi=tuple(mi))
    for a in range(nx):
        for b in range(ny):
            D2[("xy", a, b)] = spectral_derivative(
                phi_grid, dx_mi=tuple(1 if i == a else 0 for i in range(nx)),
                dy_mi=tuple(1 if j == b else 0 for j in range(ny)))
    for b1 in range(ny):
        for b2 in range(b1, ny):
            mi = [0] * ny
            mi[b1] += 1
            mi[b2] += 1
            D2[("yy", b1, b2)] = spectral_derivative(phi_grid, dy_mi=tuple(mi))

    # plane-shaped coordinate arrays (no t axis)
    xs = []
    for i, a in enumerate(grid.x_axes):
        sh = [1] * (nx + ny)
        sh[i] = len(a)
        xs.append(a.reshape(sh))
    ys = []
    for j, a in enumerate(grid.y_axes):
        sh = [1] * (nx + ny)
        sh[nx + j] = len(a)
        ys.append(a.reshape(sh))

    def sym_at(sym, t, gx, eta_arg, dxi=(), deta=()):
        return _symbol_on_gradient(sym, grid, t, xs, ys, gx, eta_arg, dxi=dxi, deta=deta)

    def dF_full(t, gx, eta_arg, dxi=(), deta=(), f_w=1.0, r_w=None):
        v = f_w * sym_at(model.f, t, gx, eta_arg, dxi=dxi, deta=deta)
        if model.r is not None and r_w is not None:
            v = v + r_w * sym_at(model.r, t, gx, eta_arg, dxi=dxi, deta=deta)
        return v

    resid = np.empty_like(phi_field)
    for it, t in enumerate(grid.t_axis):
        st, dst = traj.state_at(t)
        dx_axes, dy_axes = _plane_axes(grid, st, nx, ny)
        om, dom = _omega_polys(traj, st, dst)
        om_v = om.eval_grid(dx_axes, dy_axes)
        dt_om = dom.eval_grid(dx_axes, dy_axes)
        gx = [om.diff(a).eval_grid(dx_axes, dy_axes) for a in range(nx)]
        gy = [om.diff(nx + b).eval_grid(dx_axes, dy_axes) for b in range(ny)]
        eta_arg = [lam ** invk * g for g in gy]

        F1 = dF_full(t, gx, eta_arg, f_w=lam, r_w=lam ** (1.0 - invk))
        acc = lam * dt_om + F1
        # second-order phase curvature, full (xi, eta) block
        for a1 in range(nx):
            for a2 in range(nx):
                ea = [0] * nx
                ea[a1] += 1
                ea[a2] += 1
                h = dF_full(t, gx, eta_arg, dxi=tuple(ea), f_w=lam ** -1.0, r_w=lam ** (-1.0 - invk))
                acc = acc - 0.5j * lam * h * om.diff(a1).diff(a2).eval_grid(dx_axes, dy_axes)
        for a in range(nx):
            for b in range(ny):
                ea = tuple(1 if i == a else 0 for i in range(nx))
                eb = tuple(1 if j == b else 0 for j in range(ny))
                h = dF_full(t, gx, eta_arg, dxi=ea, deta=eb,
                            f_w=lam ** (invk - 1.0), r_w=lam ** -1.0)
                acc = acc - 1.0j * lam * h * om.diff(a).diff(nx + b).eval_grid(dx_axes, dy_axes)
        for b1 in range(ny):
            for b2 in range(ny):
                eb = [0] * ny
                eb[b1] += 1
                eb[b2] += 1
                h = dF_full(t, gx, eta_arg, deta=tuple(eb),
                            f_w=lam ** (2.0 * invk - 1.0), r_w=lam ** (invk - 1.0))
                acc = acc - 0.5j * lam * h * om.diff(nx + b1).diff(nx + b2).eval_grid(dx_axes, dy_axes)
        acc = acc * phi_field[it]

        acc = acc + DtPhi[it]
        for a in range(nx):
            ea = tuple(1 if i == a else 0 for i in range(nx))
            acc = acc + dF_full(t, gx, eta_arg, dxi=ea, f_w=1.0, r_w=lam ** (-invk)) * DxPhi[a][it]
        for b in range(ny):
            eb = tuple(1 if j == b else 0 for j in range(ny))
            acc = acc + dF_full(t, gx, eta_arg, deta=eb, f_w=lam ** invk, r_w=1.0) * DyPhi[b][it]
        for a1 in range(nx):
            for a2 in range(nx):
                ea = [0] * nx
                ea[a1] += 1
                ea[a2] += 1
                h = dF_full(t, gx, eta_arg, dxi=tuple(ea), f_w=lam ** -1.0, r_w=lam ** (-1.0 - invk))
                key = ("xx", min(a1, a2), max(a1, a2))
                acc = acc + 0.5 * h * D2[key][it]
        for a in range(nx):
            for b in range(ny):
                ea = tuple(1 if i == a else 0 for i in range(nx))
                eb = tuple(1 if j == b else 0 for j in range(ny))
                h = dF_full(t, gx, eta_arg, dxi=ea, deta=eb,
                            f_w=lam ** (invk - 1.0), r_w=lam ** -1.0)
                acc = acc + h * D2[("xy", a, b)][it]
        for b1 in range(ny):
            for b2 in range(ny):
                eb = [0] * ny
                eb[b1] += 1
                eb[b2] += 1
                h = dF_full(t, gx, eta_arg, deta=tuple(eb),
                            f_w=lam ** (2.0 * invk - 1.0), r_w=lam ** (invk - 1.0))
                key = ("yy", min(b1, b2), max(b1, b2))
                acc = acc + 0.5 * h * D2[key][it]
        if model.F0 is not None:
            acc = acc + sym_at(model.F0, t, gx, eta_arg) * phi_field[it]

        resid[it] = np.exp(1j * lam * om_v) * acc
    return grid.like(resid)


# -- norms -----------------------------------------------------------------------


def sobolev_norm(field: FieldGrid, s: float) -> float:
    """Discrete Sobolev norm with physical frequency weights."""
    u = field.values
    if s == 0.0:
        return float(np.sqrt(np.sum(np.abs(u) ** 2) * field.cell_volume))
    U = np.fft.fftn(u)
    w2 = np.zeros(u.shape)
    for axis, zeta in enumerate(field.freq_axes()):
        sh = [1] * u.ndim
        sh[axis] = len(zeta)
        w2 = w2 + (zeta ** 2).reshape(sh)
    weight = (1.0 + w2) ** s
    total = np.sum(np.abs(U) ** 2 * weight) * field.cell_volume / u.size
    return float(np.sqrt(total))


def cone_cutoff_apply(field: FieldGrid, xi_dir: np.ndarray, aperture: float,
                      norm_only: bool = False):
    """Fourier multiplier vanishing on the frequency cone around the mode's ray.

    Zero within half-angle `aperture` of the ray through (0, xi_dir, 0), one
    outside twice that angle, smooth in between.
    """
    if not (0 < aperture < np.pi / 2):
        raise ValueError("aperture must lie in (0, pi/2)")
    u = field.values
    U = np.fft.fftn(u)
    axes = field.freq_axes()
    nx = len(field.x_axes)
    e = np.zeros(len(axes))
    e[1:1 + nx] = np.asarray(xi_dir, float) / np.linalg.norm(xi_dir)
    dot = np.zeros(u.shape)
    norm2 = np.zeros(u.shape)
    for axis, zeta in enumerate(axes):
        sh = [1] * u.ndim
        sh[axis] = len(zeta)
        z = zeta.reshape(sh)
        dot = dot + e[axis] * z
        norm2 = norm2 + z ** 2
    nrm = np.sqrt(norm2)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.where(nrm > 0, dot / np.where(nrm > 0, nrm, 1.0), 1.0)
    theta = np.arccos(np.clip(cosang, -1.0, 1.0))
    mult = 1.0 - bump_profile(theta / aperture)
    if norm_only:
        total = np.sum(np.abs(U * mult) ** 2) * field.cell_volume / u.size
        return float(np.sqrt(total))
    V = np.fft.ifftn(U * mult)
    return field.like(V)


# -- the per-lambda pipeline and report --------------------------------------------


@dataclass
class NormReport:
    lam: float
    norms: dict
    ratio: float
    residual_expansion: float
    residual_direct: float
    params: dict
    min_im_w0: float
    t0_anchor: float
    usable: tuple
    wall_ms: float
    error: str | None = None


@dataclass
class PipelineOptions:
    K: int = 4
    M_a: int = 4
    L: int = 1
    rho: float = 0.1
    N: int = 0
    nu: int = 0
    aperture: float = np.pi / 6
    eikonal: dict = field(default_factory=dict)
    transport: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    force: bool = False
    zero_timings: bool = False
    seed: int = 20250810


def run_single_lambda(model: ModelProblem, lam: float, popts: PipelineOptions,
                      keep_fields: bool = False):
    """conditions -> phase -> amplitudes -> synthesis -> norms for one lambda."""
    t_start = time.perf_counter()
    eo = EikonalOptions(lam=lam, K=popts.K, rho=popts.rho, force=popts.force,
                        **popts.eikonal)
    traj = integrate_phase(model, eo)
    to = TransportOptions(L=popts.L, M_a=popts.M_a, **popts.transport)
    amp = solve_transport(traj, model, to)
    gopts = GridOptions(**popts.grid)
    u = synthesize(traj, amp, model, gopts)
    resid_exp = apply_via_expansion(traj, amp, model, u)
    Pu = apply_direct(model, u)

    n = 1 + model.nx + model.ny
    norms = {
        "u_minus_N": sobolev_norm(u, -float(popts.N)),
        "Pu_nu": sobolev_norm(Pu, float(popts.nu)),
        "u_minus_N_minus_n": sobolev_norm(u, -float(popts.N + n)),
        "Au_zero": cone_cutoff_apply(u, model.xi0, popts.aperture, norm_only=True),
        "u_zero": sobolev_norm(u, 0.0),
    }
    ratio = (norms["Pu_nu"] + norms["u_minus_N_minus_n"] + norms["Au_zero"]) / norms["u_minus_N"]
    wall_ms = 0.0 if popts.zero_timings else (time.perf_counter() - t_start) * 1e3
    rep = NormReport(
        lam=lam, norms=norms, ratio=float(ratio),
        residual_expansion=sobolev_norm(resid_exp, 0.0),
        residual_direct=sobolev_norm(Pu, 0.0),
        params={"N": popts.N, "nu": popts.nu, "K": popts.K, "M_a": popts.M_a,
                "L": popts.L, "rho": popts.rho},
        min_im_w0=float(np.min(traj.im_w0())),
        t0_anchor=traj.t0_anchor, usable=traj.usable, wall_ms=wall_ms)
    if keep_fields:
        return rep, traj, amp, u, Pu, resid_exp
    return rep


def fit_loglog(lams, vals):
    lx = np.log(np.asarray(lams, float))
    ly = np.log(np.maximum(np.asarray(vals, float), 1e-300))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - np.mean(ly)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), r2


VERDICT_VIOLATION = "VIOLATION"
VERDICT_REFUSED_CONDITIONS = "REFUSED_CONDITIONS"
VERDICT_REFUSED_NO_SIGN_CHANGE = "REFUSED_NO_SIGN_CHANGE"
VERDICT_INCONCLUSIVE = "INCONCLUSIVE"


def violation_report(model: ModelProblem, lam_list, popts: PipelineOptions,
                     audit=None, slope_threshold: float = -0.25, r2_threshold: float = 0.9):
    """Run the pipeline per lambda and judge the solvability-stress ratio trend."""
    from .conditions import audit_conditions

    try:
        detect_sign_change(model)
    except NoSignChange:
        return [], {"verdict": VERDICT_REFUSED_NO_SIGN_CHANGE, "slope": None, "r2": None,
                    "reason": "Im f keeps one sign along the marked fiber direction"}
    if audit is None:
        audit = audit_conditions(model)
    if not audit.licensed() and not popts.force:
        return [], {"verdict": VERDICT_REFUSED_CONDITIONS, "slope": None, "r2": None,
                    "reason": "structural conditions fail; construction refused",
                    "audit": {"kcond": audit.cond_kcond, "hessian": audit.cond_hessian,
                              "leaf": audit.cond_leaf, "dq": audit.cond_dq}}

    reports = []
    errors = []
    for lam in sorted(lam_list):
        try:
            reports.append(run_single_lambda(model, float(lam), popts))
        except (GateEmpty, NoSignChange) as exc:
            errors.append((float(lam), type(exc).__name__, str(exc)))
    summary = {"errors": errors}
    ok = [r for r in reports if r.error is None]
    if len(ok) < 3:
        summary.update(verdict=VERDICT_INCONCLUSIVE, slope=None, r2=None,
                       reason="fewer than three successful sweep points")
        if errors and not ok:
            summary["reason"] = "construction refused at every lambda: " + errors[0][1]
        return reports, summary
    slope, r2 = fit_loglog([r.lam for r in ok], [r.ratio for r in ok])
    verdict = VERDICT_VIOLATION if (slope <= slope_threshold and r2 >= r2_threshold) \
        else VERDICT_INCONCLUSIVE
    summary.update(verdict=verdict, slope=slope, r2=r2,
                   slope_threshold=slope_threshold, r2_threshold=r2_threshold)
    return reports, summary
