import math

import numpy as np
import pytest
from scipy.integrate import quad

from pseudomode.conditions import NoSignChange
from pseudomode.eikonal import (CASE_OFFSET, CASE_ONSIGMA, EikonalOptions, GateEmpty,
                                choose_initial_w2, eikonal_residual, eval_phase,
                                initial_state, integrate_phase, phase_rhs)
from pseudomode.models import ModelProblem, builtin_model, model_from_dict
from pseudomode.symbols import PolySymbol
from tests.conftest import PURE_T


def beta_exact(lam, rho, beta0, t):
    """Closed-form Im W[0,2] for the constant-coefficient quadratic-fiber model."""
    return beta0 / (1.0 + lam ** rho * beta0 * t ** 2)


def test_rhs_zero_symbol():
    zero = model_from_dict({**PURE_T, "f_poly": [[0.0, 0.0, 0, [0], [0]]],
                            "name": "zero"})
    opts = EikonalOptions(lam=128.0)
    st = initial_state(zero, opts, 0.0)
    d = phase_rhs(st, 0.2, zero, pass1=False)
    assert d.w0 == 0 and np.all(d.x0 == 0) and np.all(d.xi0 == 0) and np.all(d.eta_aux == 0)
    assert all(np.all(np.asarray(W) == 0) for W in d.W.values())


def test_rhs_mizohata_closed_form(miz):
    opts = EikonalOptions(lam=1e4, rho=0.1)
    st = initial_state(miz, opts, 0.0)
    d = phase_rhs(st, 0.7, miz, pass1=False)
    # x-side frozen, Im w0' = t eta0^2
    assert np.all(d.x0 == 0) and np.all(d.xi0 == 0)
    assert d.w0.imag == pytest.approx(0.7)
    # W[0,2]' at t=0 vanishes (all drift coefficients carry a factor t)
    d0 = phase_rhs(st, 0.0, miz, pass1=False)
    assert abs(np.asarray(d0.W[(0, 2)]).ravel()[0]) == 0.0


def test_choose_initial_w2_branches(miz):
    # branch 2 (no xi-gradient): large imaginary part
    W, fb = choose_initial_w2(miz, 0.0)
    assert not fb and W[0, 0] == 10j
    # branch 1 via Im d_xi f = 1, Im d_x f = 0.3 -> Re w20 = -0.3
    f = PolySymbol(1, 1, [(-1j, 1, (0,), (0,), (0,), (2,)),
                          (1j, 0, (1,), (0,), (0,), (0,)),   # i 0.3-ish x term set below
                          ])
    f = PolySymbol(1, 1, [(-1j, 1, (0,), (0,), (0,), (2,)),
                          (0.3j, 0, (1,), (0,), (0,), (0,)),
                          (1j, 0, (0,), (0,), (1,), (0,))])
    m = ModelProblem(k=2, eta0=[1.0], f=f, r=None, F0=None, c_coupling=None, diff_op=[],
                     t_start=0.0, x0=[0.0], xi0=[1.0], y0=[0.0], interval=(-1, 1),
                     label="branch1")
    W, fb = choose_initial_w2(m, 0.0, small=0.1)
    assert not fb
    assert W[0, 0].real == pytest.approx(-0.3)
    assert W[0, 0].imag == pytest.approx(0.1)
    # small base-curve speed: |x0'(0)|, |xi0'(0)| well below the t-slope of Im f
    st = initial_state(m, EikonalOptions(lam=256.0), 0.0)
    d = phase_rhs(st, 0.0, m, pass1=True)
    assert abs(d.x0[0]) <= 0.1 and abs(d.xi0[0]) <= 0.11


def test_choose_initial_w2_higher_order_fallback(miz):
    W, fb = choose_initial_w2(miz, 0.0, order_estimate=3)
    assert fb and W[0, 0] == 1j


def test_integrate_pure_t_exact(pure_t_model):
    traj = integrate_phase(pure_t_model, EikonalOptions(lam=256.0, n_pass1=401, n_pass2=401))
    assert traj.case == CASE_ONSIGMA
    w = np.array([s.w0 for s in traj.states])
    assert float(np.max(np.abs(w - 1j * traj.grid ** 2 / 2))) <= 1e-10
    assert all(np.all(s.x0 == pure_t_model.x0) for s in traj.states)
    assert all(np.all(s.xi0 == pure_t_model.xi0) for s in traj.states)
    assert float(np.min(traj.im_w0())) == 0.0
    assert traj.usable == tuple(pure_t_model.interval)


def test_integrate_mizohata_invariants(miz_traj_256, miz):
    traj = miz_traj_256
    assert traj.case == CASE_OFFSET
    im = traj.im_w0()
    assert float(np.min(im)) == 0.0
    assert im[0] > im[np.argmin(np.abs(traj.grid - traj.t0_anchor))]
    assert im[-1] > 0 and im[0] > 0
    assert float(np.min(traj.min_eig_im((2, 0)))) > 0
    assert float(np.min(traj.min_eig_im((0, 2)))) > 0
    # closed-form fiber drift: zeta0 = -sqrt(lam) eta0 b0 t^2 / (1 + lam^rho b0 t^2)
    lam, rho, b0 = 256.0, 0.1, 0.45
    for idx in (0, len(traj.grid) // 4, -1):
        t = traj.grid[idx]
        z = traj.states[idx].eta_aux[0]
        zx = -math.sqrt(lam) * b0 * t ** 2 / (1 + lam ** rho * b0 * t ** 2)
        assert z == pytest.approx(zx, abs=5e-3)
    # Im W[0,2] follows the closed-form decay
    for idx in (0, -1):
        b = np.asarray(traj.states[idx].W[(0, 2)]).ravel()[0].imag
        assert b == pytest.approx(beta_exact(lam, rho, b0, traj.grid[idx]), abs=2e-3)


def test_zeta0_bounded_on_usable(miz):
    for lam in (64.0, 1024.0):
        traj = integrate_phase(miz, EikonalOptions(lam=lam, n_pass1=401, n_pass2=301))
        zs = [abs(s.eta_aux[0]) for s, t in zip(traj.states, traj.grid)
              if traj.usable[0] <= t <= traj.usable[1]]
        assert max(zs) <= 1.0


def test_w0_quadrature_oracle(miz_traj_256, miz):
    traj = miz_traj_256

    def f_along(s):
        st, _ = traj.state_at(s)
        return miz.f.eval(s, st.x0, st.xi0, st.eta_t(miz))

    t_hi = traj.grid[-1]
    i0 = int(np.argmin(np.abs(traj.grid - traj.t0_anchor)))
    re = quad(lambda s: np.real(f_along(s)), traj.t0_anchor, t_hi, limit=400)[0]
    im = quad(lambda s: np.imag(f_along(s)), traj.t0_anchor, t_hi, limit=400)[0]
    got = traj.states[-1].w0 - traj.states[i0].w0
    assert abs(got - (-complex(re, im))) <= 1e-8


def test_refused_orientation(cpt):
    with pytest.raises(NoSignChange):
        integrate_phase(cpt, EikonalOptions(lam=64.0))


def test_cpt_forced_gate_empty(cpt):
    for lam in (1024.0, 4096.0):
        with pytest.raises(GateEmpty):
            integrate_phase(cpt, EikonalOptions(lam=lam, force=True,
                                                n_pass1=401, n_pass2=201))


def test_eval_phase_at_base(miz_traj_256, miz):
    traj = miz_traj_256
    t0 = traj.t0_anchor
    st, _ = traj.state_at(t0)
    om, gt, gx, gy = eval_phase(traj, t0, st.x0, st.y0)
    assert om == pytest.approx(st.w0)
    assert gx[0] == pytest.approx(st.xi0[0])
    assert gy[0] == pytest.approx(256.0 ** -0.5 * st.eta_t(miz)[0])


def test_eval_phase_displacement(miz_traj_256):
    traj = miz_traj_256
    st, _ = traj.state_at(0.0)
    om, *_ = eval_phase(traj, 0.0, st.x0 + 0.1, st.y0)
    w20 = np.asarray(st.W[(2, 0)]).ravel()[0]
    expected = st.w0 + 0.1 * st.xi0[0] + w20 * 0.005
    assert om == pytest.approx(expected)


def test_phase_gradient_fd(miz_traj_256):
    traj = miz_traj_256
    rng = np.random.default_rng(2)
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        t = rng.uniform(traj.grid[0] + 2 * h, traj.grid[-1] - 2 * h)
        x = rng.uniform(-0.08, 0.08, 1)
        y = rng.uniform(-0.5, 0.5, 1)
        om, gt, gx, gy = eval_phase(traj, t, x, y)
        fd_t = (eval_phase(traj, t + h, x, y)[0] - eval_phase(traj, t - h, x, y)[0]) / (2 * h)
        fd_x = (eval_phase(traj, t, x + h, y)[0] - eval_phase(traj, t, x - h, y)[0]) / (2 * h)
        fd_y = (eval_phase(traj, t, x, y + h)[0] - eval_phase(traj, t, x, y - h)[0]) / (2 * h)
        worst = max(worst, abs(gt - fd_t), abs(gx[0] - fd_x), abs(gy[0] - fd_y))
    assert worst <= 1e-7


def test_integrators_agree(miz):
    a = integrate_phase(miz, EikonalOptions(lam=128.0, n_pass1=201, n_pass2=161))
    b = integrate_phase(miz, EikonalOptions(lam=128.0, n_pass1=201, n_pass2=161, method="rk45"))
    wa = np.array([s.w0 for s in a.states])
    wb = np.array([s.w0 for s in b.states])
    assert float(np.max(np.abs(wa - wb))) <= 1e-6 * float(np.max(np.abs(wa)))


def test_residual_decreases_in_lambda(miz):
    sups = []
    for lam in (64.0, 256.0):
        traj = integrate_phase(miz, EikonalOptions(lam=lam, n_pass1=401, n_pass2=301))
        sups.append(eikonal_residual(traj, n_probes=100, seed=5)["sup_residual"])
    assert sups[1] < sups[0]


def test_k_refinement_strictly_decreases(curved_model):
    sups = {}
    for K in (4, 6):
        traj = integrate_phase(curved_model, EikonalOptions(lam=256.0, K=K,
                                                            n_pass1=401, n_pass2=301))
        sups[K] = eikonal_residual(traj, n_probes=200, seed=11)["sup_residual"]
    assert sups[6] < sups[4]


def test_rho_validation(miz):
    with pytest.raises(ValueError):
        integrate_phase(miz, EikonalOptions(lam=64.0, rho=0.6))
    with pytest.raises(ValueError):
        integrate_phase(miz, EikonalOptions(lam=64.0, K=9))


def test_on_manifold_finite_order_branch():
    # marked fiber point on the degenerate set with finite vanishing order:
    # crossing carried by the zero-order part, fiber quadratic active
    m = model_from_dict({
        "name": "onsigma_k2", "k": 2, "dims": {"nx": 1, "ny": 1},
        "eta0": [0.0], "xi0": [1.0], "x0": [0.0], "y0": [0.0], "interval": [-1.0, 1.0],
        "f_poly": [[0.0, -1.0, 1, [0], [0]], [0.0, -1.0, 1, [0], [2]]],
    })
    traj = integrate_phase(m, EikonalOptions(lam=256.0, n_pass1=401, n_pass2=301))
    assert traj.case == CASE_ONSIGMA
    w = np.array([s.w0 for s in traj.states])
    assert float(np.max(np.abs(w - 1j * traj.grid ** 2 / 2))) <= 1e-10
    assert float(np.min(traj.min_eig_im((0, 2)))) > 0  # quadratic flow stays positive
    assert max(abs(s.eta_aux[0]) for s in traj.states) == 0.0
