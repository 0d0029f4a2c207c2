import numpy as np
import pytest

from pseudomode.eikonal import EikonalOptions, integrate_phase
from pseudomode.models import builtin_model, model_from_dict
from pseudomode.synth import PipelineOptions, run_single_lambda

SWEEP_LAMBDAS = (64.0, 128.0, 256.0, 512.0)

CURVED_XI = {
    "name": "curved_xi", "k": 2, "dims": {"nx": 1, "ny": 1},
    "eta0": [1.0], "xi0": [1.0], "x0": [0.0], "y0": [0.0], "interval": [-1.0, 1.0],
    "f_poly": [[0.0, -1.1, 1, [0], [2]], [0.0, 0.2, 1, [1], [2]], [0.0, -0.1, 1, [2], [2]],
               [0.0, -0.02, 0, [0], [2]], [0.0, 0.06, 0, [1], [2]],
               [0.0, -0.06, 0, [2], [2]], [0.0, 0.02, 0, [3], [2]]],
}

PURE_T = {
    "name": "pure_t", "k": "inf", "dims": {"nx": 1, "ny": 1},
    "eta0": [0.0], "xi0": [1.0], "x0": [0.0], "y0": [0.0], "interval": [-1.0, 1.0],
    "f_poly": [[0.0, -1.0, 1, [0], [0]]],
}


def pipeline_options(**grid):
    return PipelineOptions(eikonal={"n_pass1": 801, "n_pass2": 601}, grid=grid)


@pytest.fixture(scope="session")
def miz():
    return builtin_model("mizohata")


@pytest.fixture(scope="session")
def cpt():
    return builtin_model("cpt")


@pytest.fixture(scope="session")
def curved_model():
    return model_from_dict(CURVED_XI)


@pytest.fixture(scope="session")
def pure_t_model():
    return model_from_dict(PURE_T)


@pytest.fixture(scope="session")
def miz_traj_256(miz):
    return integrate_phase(miz, EikonalOptions(lam=256.0, n_pass1=801, n_pass2=601))


@pytest.fixture(scope="session")
def miz_sweep(miz):
    """Full-pipeline reports for the acceptance sweep, one run shared by all tests."""
    popts = pipeline_options()
    reports = {}
    fields = {}
    for lam in SWEEP_LAMBDAS:
        if lam in (128.0, 256.0):
            rep, traj, amp, u, Pu, resid = run_single_lambda(miz, lam, popts, keep_fields=True)
            fields[lam] = dict(traj=traj, amp=amp, u=u, Pu=Pu, resid=resid)
        else:
            rep = run_single_lambda(miz, lam, popts)
        reports[lam] = rep
    return {"reports": reports, "fields": fields, "popts": popts}
