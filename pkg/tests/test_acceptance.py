"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run `pytest -s tests/test_acceptance.py` a for per-criterion report.
"""

import json
import math
import subprocess
import sys

import numpy as np
import pytest
from scipy.integrate import quad

from pseudomode.conditions import audit_conditions, minimum_growth_check
from pseudomode.eikonal import EikonalOptions, eikonal_residual, eval_phase, integrate_phase
from pseudomode.models import builtin_model, model_from_dict
from pseudomode.synth import apply_via_expansion, fit_loglog, sobolev_norm, synthesize
from pseudomode.transport import TransportOptions, solve_transport
from tests.conftest import PURE_T, SWEEP_LAMBDAS


def _report(name, detail):
    print(f"[PASS] {name}: {detail}")


def test_A1_mizohata_violation(miz_sweep):
    reports = miz_sweep["reports"]
    lams = list(SWEEP_LAMBDAS)
    ratios = [reports[l].ratio for l in lams]
    slope, r2 = fit_loglog(lams, ratios)
    assert slope <= -0.25, f"ratio slope {slope:.3f} above -0.25"
    assert r2 >= 0.9, f"ratio fit r2 {r2:.3f} below 0.9"
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    _report("A1", f"VIOLATION with ratio slope {slope:.3f} (r2 {r2:.3f}), "
                  f"ratios {['%.3e' % r for r in ratios]}")


def test_A2_norm_bracket(miz_sweep):
    reports = miz_sweep["reports"]
    lams = list(SWEEP_LAMBDAS)
    n = 3  # 1 + nx + ny
    u0 = [reports[l].norms["u_zero"] for l in lams]
    slope_u, _ = fit_loglog(lams, u0)
    assert -n / 2 - 0.15 <= slope_u <= 0.15
    # bracket constants fitted at the first sweep point hold within factor 3
    c_low = u0[0] / lams[0] ** (-n / 2)
    c_high = u0[0]
    for lam, val in zip(lams, u0):
        assert c_low * lam ** (-n / 2) <= 3.0 * val
        assert val <= 3.0 * c_high
    pu = [reports[l].norms["Pu_nu"] for l in lams]
    slope_p, _ = fit_loglog(lams, pu)
    assert slope_p <= -0.8
    _report("A2", f"u-norm slope {slope_u:.3f} in [{-n/2-0.15:.2f}, 0.15], "
                  f"Pu slope {slope_p:.3f} <= -0.8")


def test_A3_cpt_refusal(miz, cpt):
    audit = audit_conditions(cpt)
    assert not audit.licensed()
    per_eps = audit.cond_kcond["per_epsilon"]
    assert all(v > 5.0 for v in per_eps.values()), per_eps
    from pseudomode.cli import main
    import tempfile
    with tempfile.TemporaryDirectory() as td:
        assert main(["audit", "--model", "cpt", "--out", td, "-q"]) == 2
        verdict = json.loads(open(f"{td}/audit.json").read())["verdict"]
        assert verdict == "REFUSED_CONDITIONS"
        assert main(["audit", "--model", "mizohata", "--out", td, "-q"]) == 0
    a = audit_conditions(miz)
    assert float(a.cond_kcond["per_epsilon"]["0.25"]) <= 5.0
    _report("A3", "cpt REFUSED_CONDITIONS at every epsilon; mizohata passes at eps=0.25")


A4_MODELS = [
    ("pure-t", PURE_T),
    ("sin-t", {**PURE_T, "name": "sin_t", "k": 2, "eta0": [1.0],
               "f_poly": [[0.0, -1.0, ["sin", 1.0], [0], [2]]]}),
    ("mizohata", None),
]


def test_A4_eikonal_oracle(miz):
    worst_w, worst_xy = 0.0, 0.0
    for name, spec in A4_MODELS:
        model = miz if spec is None else model_from_dict(spec)
        traj = integrate_phase(model, EikonalOptions(lam=256.0, n_pass1=801, n_pass2=601))
        i0 = int(np.argmin(np.abs(traj.grid - traj.t0_anchor)))

        def f_along(s):
            st, _ = traj.state_at(s)
            return model.f.eval(s, st.x0, st.xi0, st.eta_t(model))

        for t_end in (traj.grid[-1], traj.grid[0]):
            re = quad(lambda s: np.real(f_along(s)), traj.t0_anchor, t_end, limit=400)[0]
            im = quad(lambda s: np.imag(f_along(s)), traj.t0_anchor, t_end, limit=400)[0]
            idx = -1 if t_end == traj.grid[-1] else 0
            got = traj.states[idx].w0 - traj.states[i0].w0
            worst_w = max(worst_w, abs(got - (-complex(re, im))))
        worst_xy = max(worst_xy,
                       max(float(np.max(np.abs(s.x0 - model.x0))) for s in traj.states),
                       max(float(np.max(np.abs(s.xi0 - model.xi0))) for s in traj.states))
        assert float(np.min(traj.im_w0())) == 0.0
        assert float(np.min(traj.min_eig_im((2, 0)))) > 0
        assert float(np.min(traj.min_eig_im((0, 2)))) > 0
    assert worst_w <= 1e-8, f"w0 oracle gap {worst_w:.2e}"
    assert worst_xy <= 1e-12, f"base-curve drift {worst_xy:.2e}"
    _report("A4", f"w0 quadrature gap {worst_w:.1e} <= 1e-8, drift {worst_xy:.1e} <= 1e-12, "
                  "anchored minimum 0, Hessians positive")


def test_A5_residual_convergence(miz, curved_model, miz_sweep):
    sups = {}
    for K in (4, 6):
        traj = integrate_phase(curved_model, EikonalOptions(lam=256.0, K=K,
                                                            n_pass1=401, n_pass2=301))
        sups[K] = eikonal_residual(traj, n_probes=200, seed=11)["sup_residual"]
    assert sups[6] < sups[4], sups

    traj = miz_sweep["fields"][256.0]["traj"]
    u256 = miz_sweep["fields"][256.0]["u"]
    rel = {}
    for L in (0, 1, 2):
        amp = solve_transport(traj, miz, TransportOptions(L=L, M_a=4))
        grid = u256.like(np.zeros_like(u256.values))
        u = synthesize(traj, amp, miz, grid=grid)
        resid = apply_via_expansion(traj, amp, miz, u)
        rel[L] = sobolev_norm(resid, 0.0) / sobolev_norm(u, 0.0)
    assert rel[0] > rel[1] > rel[2], rel

    gaps = {}
    for lam in (128.0, 256.0):
        rep = miz_sweep["reports"][lam]
        gaps[lam] = abs(rep.residual_expansion - rep.residual_direct) / rep.residual_direct
        assert gaps[lam] <= 0.05
    _report("A5", f"K-refinement {sups[4]:.3e} -> {sups[6]:.3e}; "
                  f"L-refinement {rel[0]:.2e} > {rel[1]:.2e} > {rel[2]:.2e}; "
                  f"direct/expansion gaps {gaps[128.0]:.2%}, {gaps[256.0]:.2%}")


def test_A6_gate_mechanics(miz, miz_traj_256):
    widths = []
    for lam in (64.0, 256.0, 1024.0):
        traj = integrate_phase(miz, EikonalOptions(lam=lam, n_pass1=401, n_pass2=201))
        lo, hi = traj.usable
        assert hi > lo
        widths.append(hi - lo)
    assert widths[0] > widths[1] > widths[2]

    t = np.linspace(-0.1, 0.0, 2001)
    assert minimum_growth_check(t ** 2 / 2, t, -0.1, rho=1.0, c=1.0)["pass"]
    t2 = np.linspace(-0.4, 0.0, 4001)
    assert minimum_growth_check(t2 ** 4, t2, -0.4, rho=1.0 / 3.0, c=0.5)["pass"]
    assert minimum_growth_check(np.zeros(64), np.linspace(-1, 0, 64), -1.0,
                                rho=1.0, c=1.0)["pass"]

    rng = np.random.default_rng(2)
    h = 1e-6
    worst = 0.0
    traj = miz_traj_256
    for _ in range(100):
        tt = rng.uniform(traj.grid[0] + 2 * h, traj.grid[-1] - 2 * h)
        x = rng.uniform(-0.08, 0.08, 1)
        y = rng.uniform(-0.5, 0.5, 1)
        om, gt, gx, gy = eval_phase(traj, tt, x, y)
        fd_t = (eval_phase(traj, tt + h, x, y)[0] - eval_phase(traj, tt - h, x, y)[0]) / (2 * h)
        fd_x = (eval_phase(traj, tt, x + h, y)[0] - eval_phase(traj, tt, x - h, y)[0]) / (2 * h)
        fd_y = (eval_phase(traj, tt, x, y + h)[0] - eval_phase(traj, tt, x, y - h)[0]) / (2 * h)
        worst = max(worst, abs(gt - fd_t), abs(gx[0] - fd_x), abs(gy[0] - fd_y))
    assert worst <= 1e-7
    _report("A6", f"gate widths {['%.3f' % w for w in widths]} shrink; growth-mechanism cases pass; "
                  f"gradient gap {worst:.1e} <= 1e-7 at 100 probes")


def test_A7_selftest_and_determinism(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "pseudomode.cli", "selftest", "-q"],
                          capture_output=True, text=True, timeout=900)
    assert proc.returncode == 0, proc.stdout + proc.stderr

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "model": {"builtin": "mizohata"}, "lambdas": [64.0, 96.0], "zero_timings": True,
        "eikonal": {"n_pass1": 401, "n_pass2": 301}, "grid": {"n_t": 129},
    }))
    blobs = []
    from pseudomode.cli import main
    for tag in ("d1", "d2"):
        out = tmp_path / tag
        assert main(["run", "--config", str(cfg), "--out", str(out), "-q"]) == 0
        blobs.append(b"".join((out / f).read_bytes()
                              for f in ("report.csv", "summary.json", "phase_64.csv")))
    assert blobs[0] == blobs[1]
    _report("A7", "selftest exit 0; repeated runs byte-identical")
