"""Invariant and property suites runnable without pytest.

Each check is small enough for a pre-flight sanity run; the pytest suite
reuses them and adds the heavy acceptance sweeps.  Tolerances scale with the
environment variable PSEUDOMODE_TOL_SCALE (values below one tighten them).
"""

from __future__ import annotations

import math
import os

import numpy as np

from .conditions import (MINUS_TO_PLUS, NoSignChange, PLUS_TO_MINUS, audit_conditions,
                         detect_sign_change, drift_integral_gate, minimal_bichar_search,
                         minimum_growth_check)
from .eikonal import EikonalOptions, eval_phase, integrate_phase
from .models import ModelProblem, builtin_model, model_from_dict
from .symbols import CallableSymbol, PolySymbol, blowup_pullback, eval_partial
from .transport import TransportOptions, apply_cutoffs, bump_profile, solve_transport


def tol(x: float) -> float:
    return x * float(os.environ.get("PSEUDOMODE_TOL_SCALE", "1.0"))


PURE_T = {
    "name": "pure_t", "k": "inf", "dims": {"nx": 1, "ny": 1},
    "eta0": [0.0], "xi0": [1.0], "x0": [0.0], "y0": [0.0], "interval": [-1.0, 1.0],
    "f_poly": [[0.0, -1.0, 1, [0], [0]]],
}


def _random_poly(rng, nx=1, ny=1, n_terms=4):
    terms = []
    for _ in range(n_terms):
        terms.append((complex(rng.uniform(-1, 1), rng.uniform(-1, 1)),
                      int(rng.integers(0, 3)),
                      tuple(rng.integers(0, 3, nx)), tuple(rng.integers(0, 2, ny)),
                      tuple(rng.integers(0, 3, nx)), tuple(rng.integers(0, 3, ny))))
    return PolySymbol(nx, ny, terms)


def check_derivative_symmetry():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        p = _random_poly(rng)
        pt = (rng.uniform(-2, 2), rng.uniform(-2, 2, 1), rng.uniform(-2, 2, 1),
              rng.uniform(-2, 2, 1))
        a = eval_partial(p, (1, (1,), (0,), (1,), (0,)), pt)
        # same mixed order reached through a different peel path
        q = PolySymbol(1, 1, p.terms)
        b = eval_partial(q, (1, (1,), (0,), (1,), (0,)), pt)
        scale = max(1.0, abs(a))
        worst = max(worst, abs(a - b) / scale)
    return worst <= tol(1e-12), f"worst relative asymmetry {worst:.2e}"


def check_fd_vs_exact():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(8):
        p = _random_poly(rng)
        fd = CallableSymbol(1, 1, lambda t, x, y, xi, eta, _p=p: _p.eval(t, x, xi, eta, y=y))
        pt = (rng.uniform(-5, 5), rng.uniform(-5, 5, 1), rng.uniform(-5, 5, 1),
              rng.uniform(-5, 5, 1))
        for orders in ((0, (1,), (0,), (0,), (0,)), (0, (0,), (0,), (1,), (1,)),
                       (1, (0,), (0,), (0,), (1,))):
            a = eval_partial(p, orders, pt)
            b = eval_partial(fd, orders, pt)
            worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    return worst <= tol(1e-6), f"worst FD-vs-exact gap {worst:.2e}"


def check_blowup():
    m = builtin_model("mizohata")
    v1 = blowup_pullback(m.f, 2, (0.5, [0.0], [4.0], [1.0]))
    v2 = m.f.eval(0.5, [0.0], [4.0], [0.5])
    ok1 = abs(v1 - v2) < tol(1e-14)
    v3 = blowup_pullback(m.f, 2, (0.5, [0.0], [1.0], [0.7]))
    ok2 = abs(v3 - m.f.eval(0.5, [0.0], [1.0], [0.7])) < tol(1e-14)
    # homogeneity probe on a degree-2 symbol vanishing to order 2
    p = PolySymbol(1, 1, [(1.0, 0, (0,), (0,), (0,), (2,))])
    vals = [blowup_pullback(p, 2, (0.0, [0.0], [lam * 1.0], [lam * 0.3])) / lam
            for lam in (1.0, 3.0, 9.0)]
    ok3 = max(abs(v - vals[0]) for v in vals) < tol(1e-10)
    return ok1 and ok2 and ok3, "fiber-scaling identities and ray invariance"


def check_extended_vs_reduced():
    from .symbols import extended_subprincipal, reduced_subprincipal
    # cubic perturbation: p = -i t eta^2 + eta^3, k = 2
    p = PolySymbol(1, 1, [(-1j, 1, (0,), (0,), (0,), (2,)), (1.0, 0, (0,), (0,), (0,), (3,))])
    w = (0.5, [0.0], [1.0])
    eta = [0.8]
    worst = 0.0
    for lam in (1e2, 1e3, 1e4):
        q = extended_subprincipal(p, 0.0, 2, w, eta, lam)
        red = reduced_subprincipal(p, 0.0, 2, w).eval(eta)
        expected = lam ** -0.5 * 0.8 ** 3
        worst = max(worst, abs((q - red) - expected))
    # mizohata terminates at degree k: difference identically zero
    m = builtin_model("mizohata")
    dz = abs(extended_subprincipal(m.f, 0.0, 2, w, [0.7], 1e3)
             - reduced_subprincipal(m.f, 0.0, 2, w).eval([0.7]))
    return worst < tol(1e-12) and dz < tol(1e-13), \
        f"cubic correction error {worst:.2e}, exact-degree gap {dz:.2e}"


def check_diff_ops():
    worst = 0.0
    for name, params in (("mizohata", None), ("cpt", None), ("cpt_gen", {"j": 1})):
        worst = max(worst, builtin_model(name, params).check_diff_op())
    return worst <= tol(1e-6), f"worst plane-wave gap {worst:.2e}"


def check_sign_changes():
    m = builtin_model("mizohata")
    sc = detect_sign_change(m)
    ok1 = sc.direction == PLUS_TO_MINUS and abs(sc.t_cross) < tol(1e-9) and sc.order_estimate == 1
    pos = model_from_dict({**PURE_T, "f_poly": [[0.0, 1.0, 0, [0], [0]]]})  # Im f = +1
    try:
        detect_sign_change(pos)
        ok2 = False
    except NoSignChange:
        ok2 = True
    cubic = model_from_dict({**PURE_T, "f_poly": [[0.0, -1.0, 3, [0], [0]]]})
    sc3 = detect_sign_change(cubic)
    ok3 = sc3.order_estimate == 3
    # adjoint flip: negating Im f swaps the reported direction
    neg = model_from_dict({**PURE_T, "f_poly": [[0.0, 1.0, 1, [0], [0]]]})
    ok4 = detect_sign_change(neg).direction == MINUS_TO_PLUS
    return ok1 and ok2 and ok3 and ok4, "orientation, refusal, order, adjoint flip"


def check_minimal_bichar():
    m = builtin_model("mizohata")
    x, xi, L, rep = minimal_bichar_search(m, n_grid=9, n_t=129)
    ok1 = np.allclose(x, m.x0) and np.allclose(xi, m.xi0)
    # Im f = -(t - x^2): crossing gap closes as x -> 0
    md = model_from_dict({
        "name": "shifted", "k": 2, "dims": {"nx": 1, "ny": 1},
        "eta0": [1.0], "xi0": [1.0], "x0": [0.5], "y0": [0.0], "interval": [-1.0, 1.0],
        "f_poly": [[0.0, -1.0, 1, [0], [2]], [0.0, 1.0, 0, [2], [2]]],
    })
    x2, xi2, L2, _ = minimal_bichar_search(md, half_widths=(0.6, 0.2), n_grid=25, n_t=257)
    ok2 = abs(x2[0]) <= 0.1  # within a cell of the minimizer at x = 0
    return ok1 and ok2, f"degenerate center kept; minimizer at x={x2[0]:.3f}"


def check_audits():
    a = audit_conditions(builtin_model("mizohata"))
    ok1 = a.licensed() and float(a.cond_kcond["per_epsilon"]["0.25"]) <= 5.0
    b = audit_conditions(builtin_model("cpt"))
    ok2 = (not b.licensed()) and all(v > 5.0 for v in b.cond_kcond["per_epsilon"].values())
    # scale consistency: the verdicts survive rescaling f
    m = builtin_model("mizohata")
    for a_scale in (0.5, 2.0):
        ms = ModelProblem(k=m.k, eta0=m.eta0, f=m.f.scaled(a_scale), r=None, F0=None,
                          c_coupling=None, diff_op=[], t_start=0.0, x0=m.x0, xi0=m.xi0,
                          y0=m.y0, interval=m.interval, label="scaled")
        if not audit_conditions(ms).licensed():
            return False, f"verdict changed under scaling by {a_scale}"
    return ok1 and ok2, "mizohata licensed, cpt refused at every epsilon"


def check_gate():
    m = builtin_model("mizohata")
    widths = []
    for lam in (64.0, 256.0, 1024.0):
        traj_like = np.linspace(-1, 1, 801)
        x0 = np.zeros((801, 1))
        xi0 = np.ones((801, 1))
        imw = 0.5 * traj_like ** 2
        usable, table = drift_integral_gate(traj_like, x0, xi0, imw, m, lam)
        widths.append(usable[1] - usable[0])
        expected = min(1.0, math.sqrt(3.0) * lam ** -0.3)
        if abs(usable[1] - expected) > 0.02:
            return False, f"edge {usable[1]:.3f} vs closed form {expected:.3f} at lam={lam}"
    ok_shrink = widths[0] > widths[1] > widths[2]
    pure = model_from_dict(PURE_T)
    usable, _ = drift_integral_gate(np.linspace(-1, 1, 201), np.zeros((201, 1)),
                                    np.ones((201, 1)), 0.5 * np.linspace(-1, 1, 201) ** 2,
                                    pure, 256.0)
    ok_full = usable == (-1.0, 1.0)
    return ok_shrink and ok_full, f"widths {['%.3f' % w for w in widths]}, full-span on zero drift"


def check_minimum_growth():
    t = np.linspace(-0.1, 0.0, 2001)
    r1 = minimum_growth_check(t ** 2 / 2, t, -0.1, rho=1.0, c=1.0)
    t2 = np.linspace(-0.4, 0.0, 4001)
    kappa = 4 * 0.4 ** 3
    r2 = minimum_growth_check(t2 ** 4, t2, -0.4, rho=1.0 / 3.0, c=0.5)
    r3 = minimum_growth_check(np.zeros(101), np.linspace(-1, 0, 101), -1.0, rho=1.0, c=1.0)
    return r1["pass"] and r2["pass"] and r3["pass"], \
        f"parabola {r1['lhs']:.3g}>={r1['rhs']:.3g}, quartic, zero case"


def check_eikonal_exactness():
    pure = model_from_dict(PURE_T)
    traj = integrate_phase(pure, EikonalOptions(lam=256.0, n_pass1=201, n_pass2=201))
    w = np.array([s.w0 for s in traj.states])
    err = float(np.max(np.abs(w - 1j * traj.grid ** 2 / 2)))
    xdev = max(float(np.max(np.abs(s.x0))) + float(np.max(np.abs(s.xi0 - 1))) for s in traj.states)
    return err <= tol(1e-10) and xdev <= tol(1e-12), f"w0 error {err:.2e}, drift {xdev:.2e}"


def check_mizohata_phase():
    m = builtin_model("mizohata")
    traj = integrate_phase(m, EikonalOptions(lam=256.0, n_pass1=401, n_pass2=301))
    im = traj.im_w0()
    ok1 = abs(float(np.min(im))) == 0.0
    ok2 = im[0] > 0 and im[-1] > 0
    ok3 = float(np.min(traj.min_eig_im((2, 0)))) > 0 and float(np.min(traj.min_eig_im((0, 2)))) > 0
    usable = traj.usable
    on_usable = [abs(s.eta_aux[0]) for s, t in zip(traj.states, traj.grid)
                 if usable[0] <= t <= usable[1]]
    ok4 = max(on_usable) <= 1.0
    return ok1 and ok2 and ok3 and ok4, \
        f"anchored min 0, ends positive, Hessians positive, |zeta0|<= {max(on_usable):.3f}"


def check_phase_gradient():
    m = builtin_model("mizohata")
    traj = integrate_phase(m, EikonalOptions(lam=128.0, n_pass1=201, n_pass2=201))
    rng = np.random.default_rng(5)
    h = 1e-6
    worst = 0.0
    for _ in range(25):
        t = rng.uniform(traj.grid[0] + 2 * h, traj.grid[-1] - 2 * h)
        x = rng.uniform(-0.05, 0.05, 1)
        y = rng.uniform(-0.3, 0.3, 1)
        om, gt, gx, gy = eval_phase(traj, t, x, y)
        fd_t = (eval_phase(traj, t + h, x, y)[0] - eval_phase(traj, t - h, x, y)[0]) / (2 * h)
        fd_x = (eval_phase(traj, t, x + h, y)[0] - eval_phase(traj, t, x - h, y)[0]) / (2 * h)
        fd_y = (eval_phase(traj, t, x, y + h)[0] - eval_phase(traj, t, x, y - h)[0]) / (2 * h)
        worst = max(worst, abs(gt - fd_t), abs(gx[0] - fd_x), abs(gy[0] - fd_y))
    return worst <= tol(1e-7), f"worst gradient gap {worst:.2e}"


def check_rk45_agreement():
    m = builtin_model("mizohata")
    t1 = integrate_phase(m, EikonalOptions(lam=128.0, n_pass1=201, n_pass2=161))
    t2 = integrate_phase(m, EikonalOptions(lam=128.0, n_pass1=201, n_pass2=161, method="rk45"))
    w1 = np.array([s.w0 for s in t1.states])
    w2 = np.array([s.w0 for s in t2.states])
    gap = float(np.max(np.abs(w1 - w2)) / max(float(np.max(np.abs(w1))), 1e-300))
    return gap <= tol(1e-6), f"relative w0 gap {gap:.2e}"


def check_tensor_symmetry():
    from .eikonal import initial_state, phase_rhs
    m = builtin_model("cpt")
    opts = EikonalOptions(lam=64.0, K=4, force=True)
    st = initial_state(m, opts, 0.0, order_estimate=1)
    d = phase_rhs(st, 0.1, m, pass1=False)
    worst = 0.0
    for (i, j), W in d.W.items():
        T = np.asarray(W)
        if T.ndim < 2:
            continue
        perm = list(range(T.ndim))
        if i >= 2:
            perm[0], perm[1] = perm[1], perm[0]
        elif j >= 2:
            perm[-1], perm[-2] = perm[-2], perm[-1]
        else:
            continue
        worst = max(worst, float(np.max(np.abs(T - np.transpose(T, perm)))))
    return worst <= tol(1e-12), f"worst asymmetry {worst:.2e}"


def check_transport():
    m = builtin_model("mizohata")
    traj = integrate_phase(m, EikonalOptions(lam=128.0, n_pass1=201, n_pass2=201))
    amp = solve_transport(traj, m, TransportOptions(L=1, M_a=3))
    i0 = int(np.argmin(np.abs(traj.grid - traj.t0_anchor)))
    ok1 = amp.levels[0][(0, 0)][i0] == 1.0 and amp.levels[1][(0, 0)][i0] == 0.0
    ok2 = amp.coeff_bound() <= 1e3
    # single-term source: constant-in-space zero-order term gives phi = exp(-i int F0)
    mdl = model_from_dict({**PURE_T, "F0_poly": [[1.0, 0.0, 0, [0], [0]]]})
    traj2 = integrate_phase(mdl, EikonalOptions(lam=64.0, n_pass1=201, n_pass2=201))
    amp2 = solve_transport(traj2, mdl, TransportOptions(L=0, M_a=2))
    i0 = int(np.argmin(np.abs(traj2.grid - traj2.t0_anchor)))
    t_shift = traj2.grid - traj2.grid[i0]
    expected = np.exp(-1j * t_shift)
    err = float(np.max(np.abs(amp2.levels[0][(0, 0)] - expected)))
    return ok1 and ok2 and err <= tol(1e-8), f"anchor data, bound, exp-source error {err:.2e}"


def check_cutoffs():
    m = builtin_model("mizohata")
    traj = integrate_phase(m, EikonalOptions(lam=128.0, n_pass1=201, n_pass2=161))
    amp = solve_transport(traj, m, TransportOptions(L=0, M_a=2))
    w_center = apply_cutoffs(amp, traj, traj.t0_anchor, m.x0, m.y0)
    sc = amp.cutoff
    far = m.x0 + 3.0 * sc["x_scale"]
    w_far = apply_cutoffs(amp, traj, traj.t0_anchor, far, m.y0)
    vals = bump_profile(np.array([1.2, 1.5, 1.8]))
    ok3 = vals[0] > vals[1] > vals[2] and 0 < vals[1] < 1
    ok4 = abs(bump_profile(1.5) - math.exp(1 - 1 / (1 - 0.25))) < 1e-15
    return w_center == 1.0 and w_far == 0.0 and ok3 and ok4, "center 1, outside 0, profile"


def check_sobolev():
    from .synth import FieldGrid, sobolev_norm
    rng = np.random.default_rng(3)
    t = np.linspace(0, 1, 32, endpoint=False)
    x = [np.linspace(0, 2, 16, endpoint=False)]
    y = [np.linspace(0, 1, 8, endpoint=False)]
    vals = rng.normal(size=(32, 16, 8)) + 1j * rng.normal(size=(32, 16, 8))
    g = FieldGrid(t, x, y, vals, 64.0)
    direct = math.sqrt(float(np.sum(np.abs(vals) ** 2)) * g.cell_volume)
    viaft = math.sqrt(float(np.sum(np.abs(np.fft.fftn(vals)) ** 2)) * g.cell_volume / vals.size)
    ok1 = abs(sobolev_norm(g, 0.0) - direct) <= tol(1e-10) * direct
    ok2 = abs(viaft - direct) <= tol(1e-10) * direct
    # single mode: norm ~ (1 + |zeta|^2)^{s/2} L2
    zt = 2 * np.pi * 4
    mode = np.exp(1j * zt * t)[:, None, None] * np.ones((32, 16, 8))
    gm = FieldGrid(t, x, y, mode, 64.0)
    ratio = sobolev_norm(gm, 1.0) / sobolev_norm(gm, 0.0)
    ok3 = abs(ratio - math.sqrt(1 + zt ** 2)) <= 0.02 * math.sqrt(1 + zt ** 2)
    return ok1 and ok2 and ok3, "Parseval at s=0, single-mode weight"


def check_cone():
    from .synth import FieldGrid, cone_cutoff_apply, sobolev_norm
    t = np.linspace(0, 1, 16, endpoint=False)
    x = [np.linspace(0, 1, 32, endpoint=False)]
    y = [np.linspace(0, 1, 8, endpoint=False)]
    zx = 2 * np.pi * 8
    inner = np.exp(1j * zx * x[0])[None, :, None] * np.ones((16, 32, 8))
    g = FieldGrid(t, x, y, inner, 64.0)
    a = cone_cutoff_apply(g, np.array([1.0]), np.pi / 6, norm_only=True)
    ok1 = a <= 1e-8 * sobolev_norm(g, 0.0)
    zy = 2 * np.pi * 3
    ortho = np.exp(1j * zy * y[0])[None, None, :] * np.ones((16, 32, 8))
    go = FieldGrid(t, x, y, ortho, 64.0)
    b = cone_cutoff_apply(go, np.array([1.0]), np.pi / 6, norm_only=True)
    ok2 = abs(b - sobolev_norm(go, 0.0)) <= 1e-6 * sobolev_norm(go, 0.0)
    return ok1 and ok2, "inner-cone kill, orthogonal pass-through"


def check_synthesis_small():
    from .synth import GridOptions, PipelineOptions, run_single_lambda
    m = builtin_model("mizohata")
    popts = PipelineOptions(eikonal={"n_pass1": 401, "n_pass2": 301}, grid={"n_t": 129})
    rep, traj, amp, u, Pu, resid = run_single_lambda(m, 64.0, popts, keep_fields=True)
    peak = np.unravel_index(int(np.argmax(np.abs(u.values))), u.values.shape)
    t_peak = u.t_axis[peak[0]]
    x_peak = u.x_axes[0][peak[1]]
    ok1 = abs(t_peak - traj.t0_anchor) <= 2 * u.h_t and abs(x_peak) <= 2 * (u.x_axes[0][1] - u.x_axes[0][0])
    gap = abs(rep.residual_expansion - rep.residual_direct) / rep.residual_direct
    ok2 = gap <= 0.10
    spine = np.abs(u.values[:, peak[1], peak[2]])
    ref = np.exp(-64.0 * u.t_axis ** 2 / 2)
    mask = ref > 1e-3
    ok3 = float(np.max(np.abs(spine - ref)[mask])) <= 0.08
    return ok1 and ok2 and ok3, f"peak at anchor, residual gap {gap:.2%}, spine profile"


CHECKS = [
    ("symbol-derivative-symmetry", check_derivative_symmetry),
    ("finite-difference-vs-exact", check_fd_vs_exact),
    ("fiber-blowup-pullback", check_blowup),
    ("extended-vs-reduced-fiber-polynomial", check_extended_vs_reduced),
    ("diff-op-plane-wave-consistency", check_diff_ops),
    ("sign-change-detection", check_sign_changes),
    ("minimal-crossing-search", check_minimal_bichar),
    ("condition-audits", check_audits),
    ("drift-integral-gate", check_gate),
    ("minimum-growth-mechanism", check_minimum_growth),
    ("phase-exactness-decoupled", check_eikonal_exactness),
    ("mizohata-phase-invariants", check_mizohata_phase),
    ("phase-gradient-vs-fd", check_phase_gradient),
    ("rk4-vs-rk45", check_rk45_agreement),
    ("tensor-symmetry", check_tensor_symmetry),
    ("transport-anchor-and-sources", check_transport),
    ("cutoff-weights", check_cutoffs),
    ("sobolev-parseval", check_sobolev),
    ("cone-multiplier", check_cone),
    ("synthesis-smoke", check_synthesis_small),
]


def run_selftest(verbose: bool = True):
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure with the exception named
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    if verbose:
        bad = [n for n, ok, _ in results if not ok]
        print(f"{len(results) - len(bad)}/{len(results)} checks passed"
              + (f"; failing: {', '.join(bad)}" if bad else ""))
    return results
