"""Sign-change detection and structural-condition audits.

The pipeline may only build a mode when the imaginary part of the prepared
fiber symbol crosses from + to - along increasing t at the marked fiber point,
and when the derivative-vs-size quotients controlling the fiber gradient,
fiber Hessian, and leaf direction stay bounded near the characteristic set.
This module measures those facts numerically; it never proves them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .models import ModelProblem
from .polys import multi_indices_upto
from .symbols import SymbolFunction


class ConditionError(Exception):
    pass


class NoSignChange(ConditionError):
    pass


class DegenerateAnchor(ConditionError):
    pass


class PreconditionViolated(ConditionError):
    pass


PLUS_TO_MINUS = "plus_to_minus"
MINUS_TO_PLUS = "minus_to_plus"


@dataclass
class SignChangeReport:
    found: bool
    t_cross: float
    direction: str
    order_estimate: float  # integer or math.inf
    I_prime: tuple[float, float]
    all_crossings: list = field(default_factory=list)


def _im_f_line(model: ModelProblem, x, xi, eta):
    def g(t):
        return float(np.imag(model.f.eval(t, x, xi, eta, y=model.y0)))

    return g


def detect_sign_change(model: ModelProblem, at=None, interval=None, n_samples: int = 256) -> SignChangeReport:
    """Scan Im f on a t-grid; report the first +/- crossing and its local order.

    Prefers a plus-to-minus crossing (the orientation the construction needs);
    if only the reversed orientation exists it is reported with its label, and
    the caller decides whether to proceed.  Raises NoSignChange when Im f has
    one sign over the whole interval.
    """
    if n_samples < 64:
        raise ValueError("n_samples must be >= 64")
    x, xi, eta = (model.x0, model.xi0, model.eta0) if at is None else [np.atleast_1d(np.asarray(v, float)) for v in at]
    if np.linalg.norm(xi) == 0:
        raise ValueError("xi must be nonzero")
    lo, hi = interval if interval is not None else model.interval
    g = _im_f_line(model, x, xi, eta)
    ts = np.linspace(lo, hi, n_samples)
    vs = np.array([g(t) for t in ts])
    scale = float(np.max(np.abs(vs)))
    if scale == 0.0:
        raise NoSignChange("Im f vanishes identically on the sampled line")
    ztol = 1e-12 * scale

    crossings = []
    last_sign, last_idx = 0, None
    for i, v in enumerate(vs):
        s = 0 if abs(v) <= ztol else (1 if v > 0 else -1)
        if s == 0:
            continue
        if last_sign != 0 and s != last_sign:
            t_root = brentq(g, ts[last_idx], ts[i], xtol=1e-14)
            crossings.append((t_root, PLUS_TO_MINUS if last_sign > 0 else MINUS_TO_PLUS))
        last_sign, last_idx = s, i
    if not crossings:
        raise NoSignChange("Im f does not change sign on the sampled line")

    chosen = next((c for c in crossings if c[1] == PLUS_TO_MINUS), crossings[0])
    t_cross, direction = chosen

    # vanishing order: least-squares slope of log|Im f| vs log|t - t_cross|
    span = hi - lo
    ss = np.geomspace(1e-4 * span, 1e-3 * span, 12)
    pts, vals = [], []
    for s in ss:
        for t in (t_cross - s, t_cross + s):
            if lo <= t <= hi:
                v = abs(g(t))
                if v > 1e-300:
                    pts.append(math.log(abs(t - t_cross)))
                    vals.append(math.log(v))
    if len(pts) >= 4:
        slope = float(np.polyfit(pts, vals, 1)[0])
        order = math.inf if slope > 12 else max(1, int(round(slope)))
    else:
        order = math.inf

    # near-zero plateau around the crossing
    ptol = 1e-9 * scale
    i_cross = int(np.searchsorted(ts, t_cross))
    lo_p, hi_p = t_cross, t_cross
    j = i_cross - 1
    while j >= 0 and abs(vs[j]) <= ptol:
        lo_p = ts[j]
        j -= 1
    j = i_cross
    while j < n_samples and abs(vs[j]) <= ptol:
        hi_p = ts[j]
        j += 1
    return SignChangeReport(True, float(t_cross), direction, order, (float(lo_p), float(hi_p)), crossings)


def minimal_bichar_search(model: ModelProblem, half_widths=(0.5, 0.5), n_grid: int = 33,
                          a: float | None = None, b: float | None = None,
                          n_t: int = 257, level: float = 0.1):
    """Grid search for the base point minimizing the sign-change gap.

    L(x, xi) is the infimum of t - s over sample pairs with Im f(s) above and
    Im f(t) below a fixed fraction of the center line's scale.  The threshold
    makes the gap resolution-meaningful: it measures plateau length plus
    crossing steepness, and is flat exactly when the crossing is uniform, in
    which case the center point is kept.
    """
    lo, hi = model.interval
    a = lo if a is None else a
    b = hi if b is None else b
    nx = model.nx
    ts = np.linspace(a, b, n_t)
    center_scale = max(1e-300, max(
        abs(float(np.imag(model.f.eval(t, model.x0, model.xi0, model.eta0, y=model.y0))))
        for t in ts))
    theta = level * center_scale

    def L_of(x, xi):
        vs = np.array([np.imag(model.f.eval(t, x, xi, model.eta0, y=model.y0)) for t in ts])
        best = math.inf
        t_last_pos = None
        for t, v in zip(ts, vs):
            if v > theta:
                t_last_pos = t
            elif v < -theta and t_last_pos is not None:
                best = min(best, t - t_last_pos)
        return best

    axes = []
    for c, h in zip(model.x0, np.broadcast_to(half_widths[0], (nx,))):
        axes.append(np.linspace(c - h, c + h, n_grid))
    for c, h in zip(model.xi0, np.broadcast_to(half_widths[1], (nx,))):
        axes.append(np.linspace(c - h, c + h, n_grid))

    h_t = (b - a) / (n_t - 1)
    best_val, best_pt = math.inf, (model.x0.copy(), model.xi0.copy())
    center_val = L_of(model.x0, model.xi0)
    mesh = np.meshgrid(*axes, indexing="ij")
    flat = np.stack([m.ravel() for m in mesh], axis=-1)
    for row in flat:
        x, xi = row[:nx], row[nx:]
        if np.linalg.norm(xi) < 1e-9:
            continue
        val = L_of(x, xi)
        if val < best_val - 0.5 * h_t:  # improvements below resolution are ties
            best_val, best_pt = val, (x.copy(), xi.copy())
    if math.isinf(best_val):
        raise NoSignChange("no grid point admits a +/- ordered sign pair")
    if best_val >= center_val - 0.5 * h_t:
        best_pt = (model.x0.copy(), model.xi0.copy())
        best_val = center_val
    rep = detect_sign_change(model, at=(best_pt[0], best_pt[1], model.eta0), interval=(a, b))
    return best_pt[0], best_pt[1], best_val, rep


# -- condition audit -----------------------------------------------------------


@dataclass
class ConditionAudit:
    cond_kcond: dict
    cond_hessian: dict
    cond_leaf: dict
    cond_dq: dict
    samples: int
    region: dict

    def licensed(self) -> bool:
        ok = self.cond_kcond["holds"] and self.cond_leaf["holds"] and self.cond_dq["holds"]
        if self.cond_hessian.get("applicable", False):
            ok = ok and self.cond_hessian["holds"]
        return ok


def _deriv_quantities(model: ModelProblem, t, x, xi, eta, order_cap: int = 2):
    """max over x/xi derivative pads of |grad_eta f| and of ||hess_eta f||."""
    f = model.f
    nx, ny = model.nx, model.ny
    g1 = 0.0
    g2 = 0.0
    for ax in multi_indices_upto(nx, order_cap):
        for axi in multi_indices_upto(nx, order_cap - sum(ax)):
            for b in range(ny):
                mi = [0] * ny
                mi[b] = 1
                v = f.partial((0, ax, (0,) * ny, axi, tuple(mi)), t, x, xi, eta, y=model.y0)
                g1 = max(g1, abs(v))
            for b1 in range(ny):
                for b2 in range(b1, ny):
                    mi = [0] * ny
                    mi[b1] += 1
                    mi[b2] += 1
                    v = f.partial((0, ax, (0,) * ny, axi, tuple(mi)), t, x, xi, eta, y=model.y0)
                    g2 = max(g2, abs(v))
    return g1, g2


def _grad_eta_extended(model: ModelProblem, t, x, xi, eta, lam: float) -> np.ndarray:
    """eta-gradient of the blown-up fiber polynomial built from f's eta-jets."""
    from .symbols import _eta_jet_tensor

    ny = model.ny
    if math.isinf(model.k):
        return model.f.grad_eta(t, x, xi, eta, y=model.y0)
    k = int(model.k)
    eta = np.atleast_1d(np.asarray(eta, float))
    grad = np.zeros(ny, dtype=complex)
    for j in range(1, 2 * k):
        T = _eta_jet_tensor(model.f, t, x, xi, model.y0, j, ny)
        weight = lam ** (1.0 - j / k) if j >= k else lam ** (-j / k)
        # gradient of T(eta^j)/j! is T(eta^{j-1}, .)/(j-1)!
        G = np.asarray(T)
        for _ in range(j - 1):
            G = np.tensordot(G, eta, axes=([0], [0]))
        grad += weight * G / math.factorial(j - 1)
    return grad


def audit_conditions(model: ModelProblem, region: dict | None = None,
                     eps_grid=(0.05, 0.1, 0.25, 0.5), n_samples: int = 2048,
                     bounds: dict | None = None, lam_grid=(1e2, 1e3, 1e4),
                     seed: int = 20250810) -> ConditionAudit:
    """Sample the defining quotients of the structural conditions.

    The characteristic set is approached two ways: uniform random samples kept
    below the lowest |p| decile, and a geometric t-ladder hugging the detected
    crossing where |Im f| decays to machine scale.  Verdict per condition:
    the quotient supremum stays below the configured bound for at least one
    epsilon in the grid.
    """
    bounds = {"kcond": 5.0, "hessian": 5.0, "leaf": 10.0, "dq": 10.0, **(bounds or {})}
    region = dict(region or {})
    t_lo, t_hi = region.get("t", model.interval)
    hw_x = region.get("x", 0.25)
    hw_xi = region.get("xi", 0.25)
    hw_eta = region.get("eta", 0.25 * (1.0 + float(np.linalg.norm(model.eta0))))
    rng = np.random.default_rng(seed)
    k = model.k
    invk = model.inv_k

    try:
        sc = detect_sign_change(model, interval=(t_lo, t_hi))
        t_anchor = sc.t_cross
    except NoSignChange:
        t_anchor = None

    pts = []
    for _ in range(n_samples):
        t = rng.uniform(t_lo, t_hi)
        x = model.x0 + rng.uniform(-hw_x, hw_x, size=model.nx)
        xi = model.xi0 + rng.uniform(-hw_xi, hw_xi, size=model.nx)
        eta = model.eta0 + rng.uniform(-hw_eta, hw_eta, size=model.ny)
        pts.append((t, x, xi, eta))
    if t_anchor is not None:
        for expo in np.linspace(1.5, 13.0, 24):
            for sgn in (-1.0, 1.0):
                t = t_anchor + sgn * 10.0 ** (-expo)
                if t_lo <= t <= t_hi:
                    pts.append((t, model.x0, model.xi0, model.eta0))

    rows = []
    for (t, x, xi, eta) in pts:
        imf = abs(np.imag(model.f.eval(t, x, xi, eta, y=model.y0)))
        g1, g2 = _deriv_quantities(model, t, x, xi, eta)
        gy = float(np.max(np.abs(model.f.grad_y(t, x, xi, eta, y=model.y0)))) if model.ny else 0.0
        rows.append((imf, g1, g2, gy))
    rows = np.array(rows)
    pvals = rows[:, 0]
    q10 = np.quantile(pvals, 0.1)
    near = rows[pvals <= max(q10, 1e-300)]

    deriv_scale = max(1e-14, float(np.max(rows[:, 1])), float(np.max(rows[:, 2])))

    def worst_ratio(col: int, expo: float) -> float:
        worst = 0.0
        for row in near:
            p, qty = row[0], row[col]
            if qty <= 1e-13 * deriv_scale:
                continue
            if p < 1e-300:
                return math.inf
            worst = max(worst, qty / p ** expo)
        return worst

    k_res = {"holds": False, "worst_ratio": math.inf, "epsilon_used": None}
    for eps in eps_grid:
        w = worst_ratio(1, invk + eps)
        if w <= bounds["kcond"]:
            k_res = {"holds": True, "worst_ratio": w, "epsilon_used": eps}
            break
        if w < k_res["worst_ratio"]:
            k_res = {"holds": False, "worst_ratio": w, "epsilon_used": eps}
    k_res["per_epsilon"] = {str(eps): worst_ratio(1, invk + eps) for eps in eps_grid}

    h_res = {"applicable": (not math.isinf(k)) and int(k) == 2, "holds": True,
             "worst_ratio": 0.0, "epsilon_used": None}
    if h_res["applicable"]:
        h_res["holds"] = False
        h_res["worst_ratio"] = math.inf
        for eps in eps_grid:
            w = worst_ratio(2, eps)
            if w <= bounds["hessian"]:
                h_res.update(holds=True, worst_ratio=w, epsilon_used=eps)
                break
            if w < h_res["worst_ratio"]:
                h_res.update(worst_ratio=w, epsilon_used=eps)
        h_res["per_epsilon"] = {str(eps): worst_ratio(2, eps) for eps in eps_grid}

    leaf_worst = 0.0
    for row in rows:
        p, gy = row[0], row[3]
        if gy <= 1e-300:
            continue
        leaf_worst = max(leaf_worst, gy / max(p, 1e-300))
    leaf_res = {"holds": leaf_worst <= bounds["leaf"], "worst_ratio": leaf_worst}

    # fiber gradient of the blown-up polynomial on root-refined characteristic points
    dq_worst = 0.0
    if t_anchor is not None:
        for lam in lam_grid:
            g = _grad_eta_extended(model, t_anchor, model.x0, model.xi0, model.eta0, lam)
            dq_worst = max(dq_worst, (lam ** (2.0 * invk)) * float(np.max(np.abs(g))))
    dq_res = {"holds": dq_worst <= bounds["dq"], "residual": dq_worst}

    return ConditionAudit(k_res, h_res, leaf_res, dq_res, len(pts),
                          {"t": (t_lo, t_hi), "x": hw_x, "xi": hw_xi, "eta": hw_eta})


# -- integral gates --------------------------------------------------------------


def drift_integral_gate(t_grid: np.ndarray, x0_t: np.ndarray, xi0_t: np.ndarray,
                        im_w0: np.ndarray, model: ModelProblem, lam: float,
                        delta: float = 0.1, C: float = 3.0, order_cap: int = 2,
                        kappa: float | None = None, anchor_tol: float = 1e-9):
    """Usable integration window for the lam-weighted fiber-derivative drifts.

    From the anchor (the index where im_w0 vanishes) outward, accumulate
        G1 = integral of lam^(1/k)   * max |d_x^a d_xi^b grad_eta f|
        G2 = integral of lam^(2/k-1) * max |d_x^a d_xi^b hess_eta f|   (k = 2)
    along the stage-one curve, and return the largest interval on which both
    stay below C * lam^(-delta).  The returned table also records where
    lam * im_w0 first clears lam^kappa, the independent exit the growth
    mechanism allows.  Infinite vanishing order needs no gate: the full span is usable.
    """
    t_grid = np.asarray(t_grid, float)
    i0 = int(np.argmin(im_w0))  # anchor at the minimum
    if im_w0[i0] > anchor_tol:
        raise DegenerateAnchor(f"im_w0 at the anchor is {im_w0[i0]:.3e} > {anchor_tol:g}")
    n = len(t_grid)
    if math.isinf(model.k):
        table = {"G1": np.zeros(n), "G2": np.zeros(n), "threshold": math.inf, "kappa": 0.0,
                 "wall": (t_grid[0], t_grid[-1]), "anchor_index": i0}
        return (float(t_grid[0]), float(t_grid[-1])), table

    invk = model.inv_k
    k = int(model.k)
    if kappa is None:
        eps_ref = 0.25
        kappa = max(0.05, 1.0 - (1.0 + k * delta) / (1.0 + k * eps_ref))

    g1 = np.zeros(n)
    g2 = np.zeros(n)
    for i, t in enumerate(t_grid):
        a, b = _deriv_quantities(model, t, x0_t[i], xi0_t[i], model.eta0, order_cap=order_cap)
        g1[i] = (lam ** invk) * a
        g2[i] = (lam ** (2.0 * invk - 1.0)) * b if k == 2 else 0.0

    def cum_from_anchor(g):
        G = np.zeros(n)
        for i in range(i0 + 1, n):
            G[i] = G[i - 1] + 0.5 * (g[i] + g[i - 1]) * (t_grid[i] - t_grid[i - 1])
        for i in range(i0 - 1, -1, -1):
            G[i] = G[i + 1] + 0.5 * (g[i] + g[i + 1]) * (t_grid[i + 1] - t_grid[i])
        return G

    G1 = cum_from_anchor(g1)
    G2 = cum_from_anchor(g2)
    thr = C * lam ** (-delta)
    hi = i0
    while hi + 1 < n and G1[hi + 1] < thr and G2[hi + 1] < thr:
        hi += 1
    lo = i0
    while lo - 1 >= 0 and G1[lo - 1] < thr and G2[lo - 1] < thr:
        lo -= 1

    wall_level = lam ** kappa
    wall_hi = t_grid[-1]
    for i in range(i0, n):
        if lam * im_w0[i] >= wall_level:
            wall_hi = t_grid[i]
            break
    wall_lo = t_grid[0]
    for i in range(i0, -1, -1):
        if lam * im_w0[i] >= wall_level:
            wall_lo = t_grid[i]
            break
    table = {"G1": G1, "G2": G2, "threshold": thr, "kappa": kappa,
             "wall": (float(wall_lo), float(wall_hi)), "anchor_index": i0}
    return (float(t_grid[lo]), float(t_grid[hi])), table


def minimum_growth_check(F: np.ndarray, t_grid: np.ndarray, t0: float,
                         rho: float, c: float, C_table: dict | None = None):
    """Self-test of the derivative-versus-maximum growth mechanism.

    For a nonnegative sampled F with a local minimum at t = 0 and the largest
    slope kappa attained at t0 with |t0| >= c * kappa^rho, the maximum of F on
    the interval joining 0 and t0 must be at least C * kappa^(1+rho).
    """
    F = np.asarray(F, float)
    t_grid = np.asarray(t_grid, float)
    if np.any(F < -1e-12 * max(1.0, float(np.max(np.abs(F))))):
        raise PreconditionViolated("F must be nonnegative")
    kappa_all = np.gradient(F, t_grid)
    i_zero = int(np.argmin(np.abs(t_grid)))
    i_t0 = int(np.argmin(np.abs(t_grid - t0)))
    lo, hi = sorted((i_zero, i_t0))
    seg = slice(lo, hi + 1)
    kappa = float(np.max(np.abs(kappa_all[seg])))
    if kappa == 0.0:
        return {"lhs": 0.0, "rhs": 0.0, "pass": True, "kappa": 0.0}
    if abs(abs(kappa_all[i_t0]) - kappa) > 0.05 * kappa:
        raise PreconditionViolated("max |F'| on the interval is not attained at t0")
    if abs(t0) < c * kappa ** rho * (1 - 1e-9):
        raise PreconditionViolated(f"|t0| = {abs(t0):.3e} < c * kappa^rho = {c * kappa ** rho:.3e}")
    C = None
    if C_table:
        C = C_table.get((round(rho, 6), round(c, 6)))
    if C is None:
        C = 0.1 * min(c, 1.0)
    lhs = float(np.max(F[seg]))
    rhs = C * kappa ** (1.0 + rho)
    return {"lhs": lhs, "rhs": rhs, "pass": bool(lhs >= rhs), "kappa": kappa}
