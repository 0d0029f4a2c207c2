"""Complex phase construction.

The phase is a truncated Taylor polynomial around a moving base curve
(t, x0(t), y0(t)) with fiber directions xi0(t) and a slow fiber offset: the
marked fiber point eta0 != 0 with a scaled drift zeta0(t), or the on-manifold
case eta0 = 0 where eta0(t) itself is an unknown.  Its coefficient tensors
solve coupled ODE systems obtained by killing, order by order in the
displacement, the conjugated leading-order expansion

    B = lam * dω/dt + F1(t, x, y, lam * dω/dx, lam * dω/dy)
        - (i/2) * d2F1/deta2 (...) * lam * d2ω/dy2.

The right-hand sides below are produced by composing the model symbol's jets
with the phase-gradient polynomials and extracting displacement coefficients,
so one assembly path serves the ODEs, the residual probes, and the transport
source terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conditions import (DegenerateAnchor, NoSignChange, PLUS_TO_MINUS,
                         SignChangeReport, detect_sign_change, drift_integral_gate)
from .models import ModelProblem
from .polys import MPoly, contract, multi_indices_upto, poly_to_tensor, symmetrize, tensor_to_poly
from .symbols import compose_from_jets, shift_jets, symbol_jets


class EikonalError(Exception):
    pass


class HessianLoss(EikonalError):
    pass


class GateEmpty(EikonalError):
    pass


class OutOfInterval(EikonalError):
    pass


class HigherOrderCrossing(EikonalError):
    pass


CASE_OFFSET = "offset"      # eta0 != 0, finite k
CASE_ONSIGMA = "onsigma"    # eta0 = 0 (includes infinite vanishing order)


@dataclass
class EikonalOptions:
    lam: float = 256.0
    K: int = 4
    rho: float = 0.1
    two_pass: bool = True
    n_pass1: int = 1601
    n_pass2: int = 1201
    gate_C: float = 3.0
    gate_delta: float = 0.1
    gate_orders: int = 2
    gate_kappa: float | None = None
    c_tube: float = 7.0
    w02_init: float = 0.45
    w20_small: float = 0.1
    w20_large: float = 10.0
    hessian_floor: float = 1e-8
    pass2_overshoot: float = 1.2
    method: str = "rk4"  # rk4 | rk45
    force: bool = False

    def validate(self, model: ModelProblem):
        if not (0.0 < self.rho < 0.5):
            raise ValueError("rho must lie in (0, 1/2)")
        if not math.isinf(model.k) and self.rho > model.inv_k + 1e-12:
            raise ValueError("rho must not exceed 1/k")
        if not (2 <= self.K <= 8):
            raise ValueError("K must lie in [2, 8]")


# -- state layout -----------------------------------------------------------------


def tensor_index_pairs(K: int):
    pairs = []
    for total in range(2, K + 1):
        for i in range(total + 1):
            pairs.append((i, total - i))
    return pairs


@dataclass
class PhaseState:
    w0: complex
    x0: np.ndarray
    xi0: np.ndarray
    y0: np.ndarray
    eta_aux: np.ndarray  # zeta0 (offset case) or eta0(t) (on-manifold case)
    W: dict
    K: int
    rho: float
    lam: float
    case: str

    def eta_t(self, model: ModelProblem) -> np.ndarray:
        if self.case == CASE_OFFSET:
            return model.eta0 + self.lam ** (model.inv_k + self.rho - 1.0) * self.eta_aux
        return np.array(self.eta_aux, dtype=float)

    def copy(self) -> "PhaseState":
        return PhaseState(self.w0, self.x0.copy(), self.xi0.copy(), self.y0.copy(),
                          self.eta_aux.copy(), {k: v.copy() for k, v in self.W.items()},
                          self.K, self.rho, self.lam, self.case)


class StateLayout:
    """Pack a PhaseState into a flat real vector and back."""

    def __init__(self, nx: int, ny: int, K: int):
        self.nx, self.ny, self.K = nx, ny, K
        self.pairs = tensor_index_pairs(K)
        self.sizes = {p: (nx ** p[0]) * (ny ** p[1]) for p in self.pairs}
        self.n_real = 2 * (1 + sum(self.sizes.values())) + 2 * nx + 2 * ny

    def pack(self, s: PhaseState) -> np.ndarray:
        parts = [np.array([s.w0.real, s.w0.imag]), s.x0, s.xi0, s.y0, s.eta_aux]
        for p in self.pairs:
            W = s.W[p].reshape(-1)
            parts.append(W.real)
            parts.append(W.imag)
        return np.concatenate(parts)

    def unpack(self, v: np.ndarray, template: PhaseState) -> PhaseState:
        nx, ny = self.nx, self.ny
        i = 0
        w0 = complex(v[0], v[1]); i = 2
        x0 = v[i:i + nx].copy(); i += nx
        xi0 = v[i:i + nx].copy(); i += nx
        y0 = v[i:i + ny].copy(); i += ny
        eta_aux = v[i:i + ny].copy(); i += ny
        W = {}
        for p in self.pairs:
            n = self.sizes[p]
            shape = (nx,) * p[0] + (ny,) * p[1]
            re = v[i:i + n]; i += n
            im = v[i:i + n]; i += n
            W[p] = (re + 1j * im).reshape(shape) if shape else np.asarray(complex(re[0], im[0]))
        return PhaseState(w0, x0, xi0, y0, eta_aux, W, template.K, template.rho,
                          template.lam, template.case)


# -- phase-gradient polynomials ----------------------------------------------------


def _sigma_polys(state: PhaseState, nx: int, ny: int):
    """sigma0 (x-gradient tail), sigma1 (x-gradient, mixed part), sigma2 (y-gradient)."""
    K = state.K
    px_pure = MPoly(nx, ny)
    p_mixed = MPoly(nx, ny)
    for (i, j), W in state.W.items():
        pij = tensor_to_poly(np.asarray(W), i, j, nx, ny)
        if j == 0:
            px_pure = px_pure + pij
        else:
            p_mixed = p_mixed + pij
    sigma0 = [px_pure.diff(a) for a in range(nx)]
    sigma1 = [p_mixed.diff(a) for a in range(nx)]
    sigma2 = [p_mixed.diff(nx + b) for b in range(ny)]
    return sigma0, sigma1, sigma2


def _eta_slot_base(state: PhaseState, model: ModelProblem) -> np.ndarray:
    """Value of lam^(1/k) * dω/dy at the base curve: the symbol's eta argument."""
    lam, rho = state.lam, state.rho
    if state.case == CASE_OFFSET:
        return state.eta_t(model)
    return lam ** (model.inv_k + rho - 1.0) * state.eta_aux


def _symbol_tables(state: PhaseState, model: ModelProblem, t: float, max_degree: int,
                   frozen_eta: bool = False, max_eta: int = 2):
    """Jet tables of f (and r) at the moving base point, plus sigma polynomials."""
    nx, ny = model.nx, model.ny
    eta_base = model.eta0 if (frozen_eta and state.case == CASE_OFFSET) else _eta_slot_base(state, model)
    cap = max_degree + 1
    jf = symbol_jets(model.f, t, state.x0, state.xi0, eta_base, y0=model.y0,
                     max_x=cap, max_xi=cap, max_eta=max_eta, total_cap=cap)
    jr = None
    if model.r is not None:
        jr = symbol_jets(model.r, t, state.x0, state.xi0, eta_base, y0=model.y0,
                         max_x=cap, max_xi=cap, max_eta=max_eta, total_cap=cap)
    sigma0, sigma1, sigma2 = _sigma_polys(state, nx, ny)
    return jf, jr, sigma0, sigma1, sigma2, eta_base


def _main_bracket_poly(state: PhaseState, model: ModelProblem, jf, jr, sigma0, sigma1, sigma2,
                       max_degree: int, with_sigma_corrections: bool = True) -> MPoly:
    """lam^{-0} * [F1(lam dω)] assembled as a displacement polynomial, no curvature.

    Returns S with the convention  B_F = S; the lam-weights are embedded so that
    coefficient sectors carry their true sizes.
    """
    nx, ny = model.nx, model.ny
    lam, rho = state.lam, state.rho
    invk = model.inv_k
    if with_sigma_corrections:
        xi_inc = [sigma0[a] + sigma1[a].scaled(lam ** (rho - 1.0)) for a in range(nx)]
        eta_inc = [sigma2[b].scaled(lam ** (invk + rho - 1.0)) for b in range(ny)]
    else:
        xi_inc = list(sigma0)
        eta_inc = None
    S = compose_from_jets(jf, nx, ny, xi_inc, eta_inc, max_degree).scaled(lam)
    if jr is not None:
        S = S + compose_from_jets(jr, nx, ny, xi_inc, eta_inc, max_degree).scaled(lam ** (1.0 - invk))
    return S


def _curvature_poly(state: PhaseState, model: ModelProblem, jf, jr, sigma0, sigma2,
                    max_degree: int) -> MPoly:
    """-(i/2) * d2F1/deta2 (lam dω) : lam d2ω/dy2 as a displacement polynomial."""
    nx, ny = model.nx, model.ny
    lam, rho = state.lam, state.rho
    invk = model.inv_k
    if math.isinf(model.k):
        return MPoly(nx, ny)
    out = MPoly(nx, ny)
    for b1 in range(ny):
        for b2 in range(ny):
            dd = [0] * ny
            dd[b1] += 1
            dd[b2] += 1
            hess_f = compose_from_jets(shift_jets(jf, dd), nx, ny, sigma0, None, max_degree)
            if jr is not None:
                hess_f = hess_f + compose_from_jets(shift_jets(jr, dd), nx, ny, sigma0, None,
                                                    max_degree).scaled(lam ** (-invk))
            dy_sigma2 = sigma2[b1].diff(nx + b2)
            out = out + hess_f.mul(dy_sigma2, max_degree=max_degree).scaled(
                -0.5j * lam ** (2.0 * invk + rho - 1.0))
    return out


def _coupling_poly(state: PhaseState, model: ModelProblem, jf, jr, sigma0,
                   t: float, max_degree: int) -> MPoly:
    """Leaf-coupling contribution from a y-dependent factor on the fiber gradient.

    Realizes the y-expansion of <d_y c, grad_eta F1>: the bracket gains
    sum_m (d_y^m c) dy^m / m! * (lam^(1/k) grad_eta f + grad_eta r) terms.
    Only the scalar, single-y-direction form is supported; every built-in has
    c_coupling unset so this path is exercised by custom models only.
    """
    nx, ny = model.nx, model.ny
    if model.c_coupling is None:
        return MPoly(nx, ny)
    if ny != 1:
        raise NotImplementedError("c_coupling is supported only for a single y-direction")
    lam = state.lam
    invk = model.inv_k
    eta_base = _eta_slot_base(state, model)
    grad = compose_from_jets(shift_jets(jf, (1,)), nx, ny, sigma0, None, max_degree).scaled(lam ** invk)
    if jr is not None:
        grad = grad + compose_from_jets(shift_jets(jr, (1,)), nx, ny, sigma0, None, max_degree)
    out = MPoly(nx, ny)
    dyvar = MPoly.variable(nx, ny, nx)
    dypow = MPoly.constant(nx, ny, 1.0)
    for m in range(1, max_degree + 1):
        dypow = dypow.mul(dyvar, max_degree=max_degree)
        dmc = model.c_coupling.d(t, state.x0, state.xi0, eta_base, y=state.y0, dy=(m,))
        if dmc == 0:
            continue
        out = out + grad.mul(dypow, max_degree=max_degree).scaled(dmc / math.factorial(m))
    return out


# -- right-hand sides ---------------------------------------------------------------


def phase_rhs(state: PhaseState, t: float, model: ModelProblem, pass1: bool = False) -> PhaseState:
    """Time derivative of the phase state.

    pass1 freezes the fiber offset and every mixed/pure-y tensor: only the
    lam-free subsystem (w0, x0, xi0, pure-x tensors) moves, with the symbol
    pinned to the marked fiber point.
    """
    nx, ny = model.nx, model.ny
    lam, rho, K = state.lam, state.rho, state.K
    invk = model.inv_k
    deg = K
    jf, jr, sigma0, sigma1, sigma2, eta_base = _symbol_tables(
        state, model, t, deg, frozen_eta=pass1, max_eta=0 if pass1 else 2)

    # --- x-sector forms; in stage one the jet table carries no eta-derivatives,
    # so the slow-direction corrections drop out automatically
    S_x = _main_bracket_poly(state, model, jf, jr, sigma0, sigma1, sigma2, deg,
                             with_sigma_corrections=True)

    G10 = poly_to_tensor(S_x, 1, 0, nx, ny) / lam  # = d_x f + W20 d_xi f at the base point
    W20 = np.atleast_2d(np.asarray(state.W[(2, 0)]))
    imW20 = W20.imag
    try:
        x0p = np.linalg.solve(imW20, np.atleast_1d(G10).imag)
    except np.linalg.LinAlgError as exc:
        raise HessianLoss("Im W[2,0] is singular") from exc
    xi0p = W20.real @ x0p - np.atleast_1d(G10).real

    dW = {}
    for (i, j) in state.W:
        if j == 0:
            Wip1 = state.W.get((i + 1, 0))
            trans = contract(np.asarray(Wip1), x0p, axis=0) if Wip1 is not None else 0.0
            form = poly_to_tensor(S_x, i, 0, nx, ny) / lam
            dW[(i, j)] = np.asarray(trans - form)
        else:
            dW[(i, j)] = np.zeros_like(np.asarray(state.W[(i, j)]))

    if pass1:
        y0p = np.zeros(ny)
        etap = np.zeros(ny)
        f00 = complex(poly_to_tensor(S_x, 0, 0, nx, ny)) / lam
        w0p = complex(np.dot(x0p, state.xi0)) - f00
        return PhaseState(w0p, x0p, xi0p, y0p, etap, dW, K, rho, lam, state.case)

    # --- slow-sector: add curvature and optional coupling to the composition
    S_curv = _curvature_poly(state, model, jf, jr, sigma0, sigma2, deg)
    S_cpl = _coupling_poly(state, model, jf, jr, sigma0, t, deg)
    S_slow = S_x + S_curv + S_cpl

    lam_rho = lam ** rho
    E01 = np.zeros(ny, dtype=complex)
    for b in range(ny):
        eb = [0] * ny
        eb[b] = 1
        E01[b] = S_slow.coeff((0,) * nx, eb) / lam_rho

    W11 = np.asarray(state.W[(1, 1)]).reshape(nx, ny)
    W02 = np.atleast_2d(np.asarray(state.W[(0, 2)]))
    imW02 = W02.imag
    try:
        y0p = np.linalg.solve(imW02, E01.imag - (W11.T @ x0p).imag)
    except np.linalg.LinAlgError as exc:
        raise HessianLoss("Im W[0,2] is singular") from exc
    etap = (W11.T @ x0p).real + (W02 @ y0p).real - E01.real

    for (i, j) in state.W:
        if j == 0:
            continue
        Wip1 = state.W.get((i + 1, j))
        Wjp1 = state.W.get((i, j + 1))
        trans = 0.0
        if Wip1 is not None:
            trans = trans + contract(np.asarray(Wip1), x0p, axis=0)
        if Wjp1 is not None:
            trans = trans + contract(np.asarray(Wjp1), y0p, axis=i)
        form = poly_to_tensor(S_slow, i, j, nx, ny) / lam_rho
        T = np.asarray(trans - form)
        dW[(i, j)] = symmetrize(T, i, j, nx, ny) if T.ndim > 1 else T

    f00 = complex(poly_to_tensor(S_x, 0, 0, nx, ny)) / lam
    wgt = lam ** (-invk) if state.case == CASE_OFFSET else lam ** (rho - 1.0)
    eta_for_w0 = state.eta_t(model) if state.case == CASE_OFFSET else state.eta_aux
    w0p = complex(np.dot(x0p, state.xi0)) + wgt * complex(np.dot(y0p, eta_for_w0)) - f00
    return PhaseState(w0p, x0p, xi0p, y0p, etap, dW, K, rho, lam, state.case)


def rhs_eta_nonzero(state: PhaseState, t: float, model: ModelProblem) -> PhaseState:
    if state.case != CASE_OFFSET:
        raise ValueError("state is not in the nonzero fiber-offset case")
    if math.isinf(model.k):
        raise ValueError("nonzero fiber offset requires finite vanishing order")
    return phase_rhs(state, t, model, pass1=False)


def rhs_eta_zero(state: PhaseState, t: float, model: ModelProblem) -> PhaseState:
    if state.case != CASE_ONSIGMA:
        raise ValueError("state is not in the on-manifold case")
    return phase_rhs(state, t, model, pass1=False)


# -- initial data -------------------------------------------------------------------


def choose_initial_w2(model: ModelProblem, t_cross: float, x0=None, xi0=None,
                      order_estimate: float = 1, small: float = 0.1, large: float = 10.0):
    """Initial x-Hessian so the base curve starts slowly and Im W[2,0] > 0.

    First-order crossing: if Im grad_xi f is nonzero, solve
    Im grad_x f + Re(W20) Im grad_xi f = 0 for a symmetric real part and keep a
    small imaginary part; otherwise take zero real part and a large imaginary
    part.  Higher-order crossings fall back to the identity.
    """
    nx = model.nx
    x0 = model.x0 if x0 is None else np.atleast_1d(x0)
    xi0 = model.xi0 if xi0 is None else np.atleast_1d(xi0)
    if order_estimate != 1:
        return np.eye(nx) * 1j, True  # fallback, flagged
    gx = model.f.grad_x(t_cross, x0, xi0, model.eta0, y=model.y0).imag
    gxi = model.f.grad_xi(t_cross, x0, xi0, model.eta0, y=model.y0).imag
    if np.linalg.norm(gxi) > 1e-12 * max(1.0, np.linalg.norm(gx)):
        bb = float(np.dot(gxi, gxi))
        Re = -(np.outer(gx, gxi) + np.outer(gxi, gx)) / bb + (np.dot(gx, gxi) / bb ** 2) * np.outer(gxi, gxi)
        return Re + 1j * small * np.eye(nx), False
    return 1j * large * np.eye(nx), False


def initial_state(model: ModelProblem, opts: EikonalOptions, t_cross: float,
                  order_estimate: float = 1, x0=None, xi0=None) -> PhaseState:
    nx, ny = model.nx, model.ny
    case = CASE_ONSIGMA if model.eta_on_sigma2() else CASE_OFFSET
    W = {}
    for p in tensor_index_pairs(opts.K):
        shape = (nx,) * p[0] + (ny,) * p[1]
        W[p] = np.zeros(shape, dtype=complex) if shape else np.asarray(0.0 + 0.0j)
    W20, _ = choose_initial_w2(model, t_cross, x0=x0, xi0=xi0, order_estimate=order_estimate,
                               small=opts.w20_small, large=opts.w20_large)
    W[(2, 0)] = np.asarray(W20).reshape(nx, nx)
    W[(0, 2)] = 1j * opts.w02_init * np.eye(ny)
    eta_aux = np.zeros(ny)
    return PhaseState(0.0 + 0.0j,
                      np.array(model.x0 if x0 is None else x0, dtype=float),
                      np.array(model.xi0 if xi0 is None else xi0, dtype=float),
                      np.array(model.y0, dtype=float),
                      eta_aux, W, opts.K, opts.rho, opts.lam, case)


# -- integration --------------------------------------------------------------------


@dataclass
class PhaseTrajectory:
    model: ModelProblem
    opts: EikonalOptions
    case: str
    grid: np.ndarray
    states: list
    rhs: list
    t0_anchor: float
    usable: tuple
    sign_report: SignChangeReport
    gate_table: dict
    im_w0_min: float = 0.0
    pass1: dict | None = None

    @property
    def lam(self):
        return self.opts.lam

    def state_at(self, t: float):
        """Cubic-Hermite interpolated state (and its derivative) at time t."""
        g = self.grid
        if t < g[0] - 1e-12 or t > g[-1] + 1e-12:
            raise OutOfInterval(f"t = {t} outside the trajectory window [{g[0]}, {g[-1]}]")
        i = int(np.clip(np.searchsorted(g, t) - 1, 0, len(g) - 2))
        h = g[i + 1] - g[i]
        s = (t - g[i]) / h
        layout = self._layout()
        y0v, y1v = self._pack(i), self._pack(i + 1)
        d0v, d1v = self._pack_rhs(i), self._pack_rhs(i + 1)
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        v = h00 * y0v + h10 * h * d0v + h01 * y1v + h11 * h * d1v
        dv = ((6 * s ** 2 - 6 * s) * y0v / h + (3 * s ** 2 - 4 * s + 1) * d0v
              + (6 * s - 6 * s ** 2) * y1v / h + (3 * s ** 2 - 2 * s) * d1v)
        st = layout.unpack(v, self.states[0])
        dst = layout.unpack(dv, self.states[0])
        return st, dst

    def _layout(self):
        if not hasattr(self, "_layout_cache"):
            self._layout_cache = StateLayout(self.model.nx, self.model.ny, self.opts.K)
            self._packed = [self._layout_cache.pack(s) for s in self.states]
            self._packed_rhs = [self._layout_cache.pack(r) for r in self.rhs]
        return self._layout_cache

    def _pack(self, i):
        self._layout()
        return self._packed[i]

    def _pack_rhs(self, i):
        self._layout()
        return self._packed_rhs[i]

    def im_w0(self) -> np.ndarray:
        return np.array([s.w0.imag for s in self.states])

    def min_eig_im(self, pair) -> np.ndarray:
        out = np.empty(len(self.states))
        for i, s in enumerate(self.states):
            M = np.atleast_2d(np.asarray(s.W[pair]))
            out[i] = float(np.min(np.linalg.eigvalsh(M.imag)))
        return out


def _rk4_segment(model, opts, state0, t0, t1, n_steps, pass1):
    """Fixed-step classical Runge-Kutta on the packed state."""
    layout = StateLayout(model.nx, model.ny, opts.K)
    template = state0

    def F(t, v):
        st = layout.unpack(v, template)
        return layout.pack(phase_rhs(st, t, model, pass1=pass1))

    ts = np.linspace(t0, t1, n_steps)
    vs = [layout.pack(state0)]
    ds = [F(ts[0], vs[0])]
    for i in range(len(ts) - 1):
        h = ts[i + 1] - ts[i]
        v = vs[-1]
        k1 = ds[-1]
        k2 = F(ts[i] + h / 2, v + h / 2 * k1)
        k3 = F(ts[i] + h / 2, v + h / 2 * k2)
        k4 = F(ts[i] + h, v + h * k3)
        vn = v + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(vn)):
            raise EikonalError(
                f"phase state lost finiteness near t = {ts[i + 1]:.4f}; the model's "
                "x-curvature is too strong for this window")
        vs.append(vn)
        ds.append(F(ts[i + 1], vn))
    states = [layout.unpack(v, template) for v in vs]
    rhs = [layout.unpack(d, template) for d in ds]
    return ts, states, rhs


def _rk45_segment(model, opts, state0, t0, t1, n_steps, pass1):
    from scipy.integrate import solve_ivp

    layout = StateLayout(model.nx, model.ny, opts.K)
    template = state0

    def F(t, v):
        st = layout.unpack(v, template)
        return layout.pack(phase_rhs(st, t, model, pass1=pass1))

    ts = np.linspace(t0, t1, n_steps)
    sol = solve_ivp(F, (t0, t1), layout.pack(state0), method="RK45", t_eval=ts,
                    rtol=1e-9, atol=1e-11, max_step=abs(t1 - t0) / 8 if t1 != t0 else np.inf)
    if not sol.success:
        raise EikonalError(f"adaptive integration failed: {sol.message}")
    states = [layout.unpack(sol.y[:, i], template) for i in range(sol.y.shape[1])]
    rhs = [layout.unpack(F(ts[i], sol.y[:, i]), template) for i in range(sol.y.shape[1])]
    return ts, states, rhs


def _integrate_both_ways(model, opts, state0, t_center, t_lo, t_hi, n_total, pass1):
    seg = _rk45_segment if opts.method == "rk45" else _rk4_segment
    frac_hi = (t_hi - t_center) / max(t_hi - t_lo, 1e-300)
    n_hi = max(2, int(round(n_total * frac_hi)))
    n_lo = max(2, n_total - n_hi)
    ts_f, st_f, rh_f = seg(model, opts, state0.copy(), t_center, t_hi, n_hi, pass1)
    ts_b, st_b, rh_b = seg(model, opts, state0.copy(), t_center, t_lo, n_lo, pass1)
    ts = np.concatenate([ts_b[::-1][:-1], ts_f])
    states = st_b[::-1][:-1] + st_f
    rhs = rh_b[::-1][:-1] + rh_f
    return ts, states, rhs


def integrate_phase(model: ModelProblem, opts: EikonalOptions,
                    sign_report: SignChangeReport | None = None,
                    x0=None, xi0=None) -> PhaseTrajectory:
    """Two-stage phase integration.

    Stage one integrates the lam-free x-subsystem over the whole interval with
    the fiber frozen, anchors Im w0 at zero minimum, and runs the drift gate to
    fix the usable window.  Stage two integrates the full system there.
    Raises GateEmpty when the essential support {lam Im w0 <= c_tube} of the
    mode does not fit inside the usable window: the construction is refused.
    """
    opts.validate(model)
    lam = opts.lam
    if sign_report is None:
        sign_report = detect_sign_change(model, at=(x0 if x0 is not None else model.x0,
                                                    xi0 if xi0 is not None else model.xi0,
                                                    model.eta0))
    if sign_report.direction != PLUS_TO_MINUS and not opts.force:
        raise NoSignChange(
            "Im f crosses - to + along the marked fiber direction; the construction "
            "needs the + to - orientation (use force to override)")
    t_cross = sign_report.t_cross
    state0 = initial_state(model, opts, t_cross, order_estimate=sign_report.order_estimate,
                           x0=x0, xi0=xi0)
    t_lo, t_hi = model.interval

    # stage one
    ts1, st1, rh1 = _integrate_both_ways(model, opts, state0, t_cross, t_lo, t_hi,
                                         opts.n_pass1, pass1=True)
    im1 = np.array([s.w0.imag for s in st1])
    im1 = im1 - float(np.min(im1))
    x0_t = np.array([s.x0 for s in st1])
    xi0_t = np.array([s.xi0 for s in st1])

    usable, gate_table = drift_integral_gate(ts1, x0_t, xi0_t, im1, model, lam,
                                             delta=opts.gate_delta, C=opts.gate_C,
                                             order_cap=opts.gate_orders, kappa=opts.gate_kappa)

    # essential-support tube around the crossing, measured on the stage-one curve
    i_cross = int(np.argmin(np.abs(ts1 - t_cross)))
    im_c = np.array([s.w0.imag for s in st1])
    im_c = im_c - im_c[i_cross]
    inside = lam * im_c <= opts.c_tube
    lo_i = i_cross
    while lo_i - 1 >= 0 and inside[lo_i - 1]:
        lo_i -= 1
    hi_i = i_cross
    while hi_i + 1 < len(ts1) and inside[hi_i + 1]:
        hi_i += 1
    tube = (float(ts1[lo_i]), float(ts1[hi_i]))
    if tube[0] < usable[0] - 1e-9 or tube[1] > usable[1] + 1e-9:
        raise GateEmpty(
            f"essential support [{tube[0]:.4g}, {tube[1]:.4g}] exceeds the usable drift "
            f"window [{usable[0]:.4g}, {usable[1]:.4g}] at lam={lam:g}")

    # stage two over the (slightly padded) usable window
    if opts.two_pass:
        pad = opts.pass2_overshoot
        mid = t_cross
        lo2 = max(t_lo, mid + pad * (usable[0] - mid))
        hi2 = min(t_hi, mid + pad * (usable[1] - mid))
    else:
        lo2, hi2 = t_lo, t_hi
    ts2, st2, rh2 = _integrate_both_ways(model, opts, state0, t_cross, lo2, hi2,
                                         opts.n_pass2, pass1=False)

    imw = np.array([s.w0.imag for s in st2])
    shift = float(np.min(imw))
    idx_min = int(np.flatnonzero(imw == np.min(imw))[0])  # ties -> smallest t
    for s in st2:
        s.w0 = complex(s.w0.real, s.w0.imag - shift)
    t0_anchor = float(ts2[idx_min])

    for i, s in enumerate(st2):
        for pair in ((2, 0), (0, 2)):
            M = np.atleast_2d(np.asarray(s.W[pair]))
            if float(np.min(np.linalg.eigvalsh(M.imag))) < opts.hessian_floor:
                raise HessianLoss(
                    f"Im W{pair} lost positivity at t = {ts2[i]:.4f} (lam = {lam:g}); "
                    "shrink the window or the truncation degree")
        if np.linalg.norm(s.xi0) < 1e-12:
            raise EikonalError("xi0 vanished along the trajectory")

    traj = PhaseTrajectory(model, opts, state0.case, ts2, st2, rh2, t0_anchor,
                           usable, sign_report, gate_table,
                           pass1={"t": ts1, "im_w0": im1, "x0": x0_t, "xi0": xi0_t})
    return traj


# -- phase evaluation ----------------------------------------------------------------


def _omega_polys(traj: PhaseTrajectory, st: PhaseState, dst: PhaseState):
    """Displacement polynomials of ω and dω/dt at one time."""
    model = traj.model
    nx, ny = model.nx, model.ny
    lam, rho = st.lam, st.rho
    invk = model.inv_k
    eta_t = st.eta_t(model) if st.case == CASE_OFFSET else st.eta_aux
    fiber_wgt = lam ** (-invk) if st.case == CASE_OFFSET else lam ** (rho - 1.0)

    om = MPoly(nx, ny)
    om.add_term((0,) * (nx + ny), st.w0)
    for a in range(nx):
        key = [0] * (nx + ny)
        key[a] = 1
        om.add_term(tuple(key), st.xi0[a])
    for b in range(ny):
        key = [0] * (nx + ny)
        key[nx + b] = 1
        om.add_term(tuple(key), fiber_wgt * eta_t[b])
    for (i, j), W in st.W.items():
        p = tensor_to_poly(np.asarray(W), i, j, nx, ny)
        om = om + (p if j == 0 else p.scaled(lam ** (rho - 1.0)))

    # coefficient time-derivative part
    dom = MPoly(nx, ny)
    dom.add_term((0,) * (nx + ny), dst.w0)
    for a in range(nx):
        key = [0] * (nx + ny)
        key[a] = 1
        dom.add_term(tuple(key), dst.xi0[a])
    if st.case == CASE_OFFSET:
        deta_t = lam ** (invk + rho - 1.0) * dst.eta_aux
    else:
        deta_t = dst.eta_aux
    for b in range(ny):
        key = [0] * (nx + ny)
        key[nx + b] = 1
        dom.add_term(tuple(key), fiber_wgt * deta_t[b])
    for (i, j), W in dst.W.items():
        p = tensor_to_poly(np.asarray(W), i, j, nx, ny)
        dom = dom + (p if j == 0 else p.scaled(lam ** (rho - 1.0)))
    # moving-frame part: d/dt of x - x0(t), y - y0(t)
    for a in range(nx):
        dom = dom - om.diff(a).scaled(dst.x0[a])
    for b in range(ny):
        dom = dom - om.diff(nx + b).scaled(dst.y0[b])
    return om, dom


def eval_phase(traj: PhaseTrajectory, t, x, y):
    """Phase value and gradient (d_t, d_x, d_y) at one point."""
    st, dst = traj.state_at(float(t))
    model = traj.model
    nx, ny = model.nx, model.ny
    om, dom = _omega_polys(traj, st, dst)
    dx = np.atleast_1d(np.asarray(x, float)) - st.x0
    dy = np.atleast_1d(np.asarray(y, float)) - st.y0
    val = om(dx, dy)
    gt = dom(dx, dy)
    gx = np.array([om.diff(a)(dx, dy) for a in range(nx)])
    gy = np.array([om.diff(nx + b)(dx, dy) for b in range(ny)])
    return complex(val), complex(gt), gx, gy


def bracket_poly(traj: PhaseTrajectory, t: float, max_degree: int) -> MPoly:
    """Displacement polynomial of the conjugated leading-order expansion at time t.

    This is the quantity the phase ODEs drive toward zero; what is left of it
    feeds the amplitude corrections and the residual reports.
    """
    st, dst = traj.state_at(float(t))
    model = traj.model
    nx, ny = model.nx, model.ny
    lam = st.lam
    jf, jr, sigma0, sigma1, sigma2, eta_base = _symbol_tables(st, model, t, max_degree)
    S = _main_bracket_poly(st, model, jf, jr, sigma0, sigma1, sigma2, max_degree)
    S = S + _curvature_poly(st, model, jf, jr, sigma0, sigma2, max_degree)
    S = S + _coupling_poly(st, model, jf, jr, sigma0, t, max_degree)
    om, dom = _omega_polys(traj, st, dst)
    return dom.scaled(lam).truncate(max_degree) + S


def eikonal_residual(traj: PhaseTrajectory, model: ModelProblem | None = None,
                     lam: float | None = None, n_probes: int = 200, seed: int = 7,
                     probes=None):
    """Evaluate the leading-order expansion at probe points in the support tube."""
    model = model or traj.model
    lam = lam or traj.lam
    rho = traj.opts.rho
    invk = model.inv_k
    nx, ny = model.nx, model.ny
    rng = np.random.default_rng(seed)
    lo, hi = traj.grid[0], traj.grid[-1]
    # restrict to the essential tube: the t-range where the mode carries mass
    imw = traj.im_w0()
    alive = traj.grid[lam * imw <= traj.opts.c_tube]
    if len(alive) >= 2:
        lo, hi = float(alive[0]), float(alive[-1])
    if probes is None:
        probes = []
        rx = lam ** (rho - (invk if traj.case == CASE_OFFSET else 0.5))
        ry = lam ** (-rho / 4.0)
        for _ in range(n_probes):
            t = rng.uniform(lo, hi)
            st, _ = traj.state_at(t)
            x = st.x0 + rng.uniform(-rx, rx, size=nx)
            y = st.y0 + rng.uniform(-ry, ry, size=ny)
            probes.append((t, x, y))
    rows = []
    for (t, x, y) in probes:
        st, dst = traj.state_at(t)
        om, dom = _omega_polys(traj, st, dst)
        dx = np.atleast_1d(np.asarray(x, float)) - st.x0
        dy = np.atleast_1d(np.asarray(y, float)) - st.y0
        dt_om = dom(dx, dy)
        gx = np.array([om.diff(a)(dx, dy) for a in range(nx)])
        gy = np.array([om.diff(nx + b)(dx, dy) for b in range(ny)])
        d2y_om = np.array([[om.diff(nx + b1).diff(nx + b2)(dx, dy) for b2 in range(ny)]
                           for b1 in range(ny)])
        eta_arg = (lam ** invk) * gy
        F1 = lam * model.f.eval(t, x, gx, eta_arg, y=y)
        hess = model.f.hess_eta(t, x, gx, eta_arg, y=y) * lam ** (2.0 * invk - 1.0)
        if model.r is not None:
            F1 = F1 + lam ** (1.0 - invk) * model.r.eval(t, x, gx, eta_arg, y=y)
            hess = hess + model.r.hess_eta(t, x, gx, eta_arg, y=y) * lam ** (invk - 1.0)
        B = lam * dt_om + F1 - 0.5j * lam * np.tensordot(hess, d2y_om, axes=2)
        rows.append((t, tuple(np.atleast_1d(x)), tuple(np.atleast_1d(y)), abs(B)))
    sup = max(r[3] for r in rows)
    return {"sup_residual": float(sup), "table": rows}
