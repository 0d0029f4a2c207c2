"""Prepared model operators.

A ModelProblem bundles everything the pipeline needs about one operator in
prepared coordinates: the leading fiber symbol f(t, x, xi, eta) (already on the
adjoint side, so the imaginary part crosses + to - in t along the marked fiber
direction for the nonsolvable examples), optional subleading/zero-order terms,
and a differential-operator realization for direct application on grids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .symbols import PolySymbol, SymbolFunction, TCoeff, SymbolError


class ModelError(Exception):
    pass


class UnknownModel(ModelError):
    pass


class BadParams(ModelError):
    pass


INFINITE = math.inf


@dataclass(frozen=True)
class DiffTerm:
    """One monomial  c(t,x,y) * D_t^a D_x^alpha D_y^beta  of the realization."""

    coeff: PolySymbol  # polynomial in (t, x, y) only
    dt_order: int
    dx_mi: tuple
    dy_mi: tuple


@dataclass
class ModelProblem:
    k: float  # integer >= 2 or math.inf
    eta0: np.ndarray
    f: SymbolFunction
    r: SymbolFunction | None
    F0: SymbolFunction | None
    c_coupling: SymbolFunction | None
    diff_op: list[DiffTerm]
    t_start: float
    x0: np.ndarray
    xi0: np.ndarray
    y0: np.ndarray
    interval: tuple[float, float]
    label: str = "custom"

    def __post_init__(self):
        self.eta0 = np.atleast_1d(np.asarray(self.eta0, dtype=float))
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        self.xi0 = np.atleast_1d(np.asarray(self.xi0, dtype=float))
        self.y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))
        if np.linalg.norm(self.xi0) == 0.0:
            raise BadParams("xi0 must be nonzero (nonradial base direction)")
        if math.isinf(self.k) and np.linalg.norm(self.eta0) != 0.0:
            raise BadParams("infinite vanishing order requires eta0 = 0")
        if not math.isinf(self.k) and int(self.k) < 2:
            raise BadParams("finite vanishing order must be >= 2")

    @property
    def nx(self) -> int:
        return self.f.nx

    @property
    def ny(self) -> int:
        return self.f.ny

    @property
    def inv_k(self) -> float:
        """1/k, with the convention 1/inf = 0."""
        return 0.0 if math.isinf(self.k) else 1.0 / float(self.k)

    def eta_on_sigma2(self) -> bool:
        return bool(np.linalg.norm(self.eta0) == 0.0)

    # -- consistency between f and the differential realization ----------------

    def diff_op_symbol(self, t, x, y, xi_f, eta_f) -> complex:
        """Full symbol of the non-D_t part at physical frequencies (xi_f, eta_f)."""
        total = 0.0 + 0.0j
        xi_f = np.atleast_1d(np.asarray(xi_f, dtype=float))
        eta_f = np.atleast_1d(np.asarray(eta_f, dtype=float))
        for term in self.diff_op:
            if term.dt_order > 0:
                continue
            mono = 1.0 + 0.0j
            for i, a in enumerate(term.dx_mi):
                mono *= xi_f[i] ** a
            for j, b in enumerate(term.dy_mi):
                mono *= eta_f[j] ** b
            total += term.coeff.eval(t, x, np.zeros(self.nx), np.zeros(self.ny), y=y) * mono
        return total

    def check_diff_op(self, lam: float = 64.0, n_samples: int = 8, rtol: float = 1e-6) -> float:
        """Plane-wave consistency of diff_op against the blown-up fiber symbol.

        Samples unit xi directions and |eta'| <= |xi|^(1-1/k) fiber offsets on the
        inhomogeneous ray through (lam xi, lam eta'); returns the worst relative
        gap between the diff_op symbol and lam * (f + r) at the pulled-back point.
        """
        if not self.diff_op:
            return 0.0
        rng = np.random.default_rng(20250810)
        worst = 0.0
        invk = self.inv_k
        for _ in range(n_samples):
            xdir = self.xi0 / np.linalg.norm(self.xi0)
            etap = rng.uniform(-1.0, 1.0, size=self.ny)
            t = rng.uniform(*self.interval)
            xi_f = lam * xdir
            eta_f = (lam ** (1.0 - invk)) * etap
            lhs = self.diff_op_symbol(t, self.x0, self.y0, xi_f, eta_f)
            # inhomogeneous-ray normalization: the fiber symbol takes the unit
            # frequency in xi and eta_f / lam^(1-1/k) in eta
            eta_arg = eta_f / lam ** (1.0 - invk)
            rhs = lam * self.f.eval(t, self.x0, xi_f / lam, eta_arg, y=self.y0)
            if self.r is not None:
                rhs += lam ** (1.0 - invk) * self.r.eval(t, self.x0, xi_f / lam, eta_arg, y=self.y0)
            if self.F0 is not None:
                rhs += self.F0.eval(t, self.x0, xi_f / lam, eta_arg, y=self.y0)
            scale = max(abs(lhs), abs(rhs), 1e-12)
            worst = max(worst, abs(lhs - rhs) / scale)
        if worst > rtol:
            raise BadParams(
                f"diff_op inconsistent with the fiber symbol: worst relative gap {worst:.3e} > {rtol:g}"
            )
        return worst


# -- built-in models ------------------------------------------------------------


def _const_coeff(value: complex, nx: int, ny: int) -> PolySymbol:
    return PolySymbol(nx, ny, [(value, 0, (0,) * nx, (0,) * ny, (0,) * nx, (0,) * ny)])


def builtin_model(name: str, params: dict | None = None) -> ModelProblem:
    """Construct a built-in model: mizohata | cpt | cpt_gen | custom."""
    params = dict(params or {})
    name = name.lower()
    if name == "mizohata":
        nx = ny = 1
        # f = i a(t) eta^2 with a(t) = -t: Im f crosses + to - as t increases.
        f = PolySymbol(nx, ny, [(-1j, 1, (0,), (0,), (0,), (2,))])
        # realization D_t + i a(t) D_y^2; its fiber symbol matches f on the
        # inhomogeneous rays (adjoint side of the classical sign convention).
        diff = [
            DiffTerm(_const_coeff(1.0, nx, ny), 1, (0,), (0,)),
            DiffTerm(PolySymbol(nx, ny, [(-1j, 1, (0,), (0,), (0,), (0,))]), 0, (0,), (2,)),
        ]
        return ModelProblem(
            k=2, eta0=[1.0], f=f, r=None, F0=None, c_coupling=None, diff_op=diff,
            t_start=0.0, x0=[0.0], xi0=[1.0], y0=[0.0], interval=(-1.0, 1.0),
            label="mizohata",
        )
    if name == "cpt":
        nx, ny = 1, 2
        f = PolySymbol(nx, ny, [
            (1j, 0, (0,), (0, 0), (0,), (1, 1)),
            (1j, 1, (0,), (0, 0), (0,), (0, 2)),
        ])
        diff = [
            DiffTerm(_const_coeff(1.0, nx, ny), 1, (0,), (0, 0)),
            DiffTerm(_const_coeff(1j, nx, ny), 0, (0,), (1, 1)),
            DiffTerm(PolySymbol(nx, ny, [(1j, 1, (0,), (0, 0), (0,), (0, 0))]), 0, (0,), (0, 2)),
        ]
        return ModelProblem(
            k=2, eta0=[0.0, 1.0], f=f, r=None, F0=None, c_coupling=None, diff_op=diff,
            t_start=0.0, x0=[0.0], xi0=[1.0], y0=[0.0, 0.0], interval=(-1.0, 1.0),
            label="cpt",
        )
    if name == "cpt_gen":
        j = int(params.get("j", 1))
        if j <= 0:
            raise BadParams("cpt_gen requires an integer parameter j > 0")
        nx, ny = 1, 2
        f = PolySymbol(nx, ny, [
            (1j, 0, (0,), (0, 0), (0,), (1, 1)),
            (1j, 2 * j + 1, (0,), (0, 0), (0,), (0, 2)),
        ])
        amp = 1j * (2 * j * j + j)
        F0 = PolySymbol(nx, ny, [(amp, 2 * j - 1, (0,), (2, 0), (0,), (0, 0))])
        diff = [
            DiffTerm(_const_coeff(1.0, nx, ny), 1, (0,), (0, 0)),
            DiffTerm(_const_coeff(1j, nx, ny), 0, (0,), (1, 1)),
            DiffTerm(PolySymbol(nx, ny, [(1j, 2 * j + 1, (0,), (0, 0), (0,), (0, 0))]), 0, (0,), (0, 2)),
            DiffTerm(PolySymbol(nx, ny, [(amp, 2 * j - 1, (0,), (2, 0), (0,), (0, 0))]), 0, (0,), (0, 0)),
        ]
        return ModelProblem(
            k=2, eta0=[0.0, 1.0], f=f, r=None, F0=F0, c_coupling=None, diff_op=diff,
            t_start=0.0, x0=[0.0], xi0=[1.0], y0=[0.0, 0.0], interval=(-1.0, 1.0),
            label=f"cpt_gen({j})",
        )
    if name == "custom":
        if "definition" not in params:
            raise BadParams("custom model requires params['definition'] with the model dictionary")
        return model_from_dict(params["definition"])
    raise UnknownModel(f"unknown builtin model {name!r}")


# -- JSON model files -------------------------------------------------------------


def _poly_from_entries(entries, nx, ny, where: str) -> PolySymbol:
    terms = []
    for i, e in enumerate(entries):
        loc = f"{where}[{i}]"
        if not isinstance(e, (list, tuple)):
            raise ModelError(f"{loc}: expected a list")
        if len(e) == 5:
            re_, im_, ttag, xi_mi, eta_mi = e
            x_mi, y_mi = (0,) * nx, (0,) * ny
        elif len(e) == 7:
            re_, im_, ttag, x_mi, y_mi, xi_mi, eta_mi = e
        else:
            raise ModelError(f"{loc}: expected 5 or 7 entries, got {len(e)}")
        try:
            tco = TCoeff.from_tag(ttag)
        except SymbolError as exc:
            raise ModelError(f"{loc}: {exc}") from exc
        for mi, n, tag in ((x_mi, nx, "x"), (y_mi, ny, "y"), (xi_mi, nx, "xi"), (eta_mi, ny, "eta")):
            if len(tuple(mi)) != n:
                raise ModelError(f"{loc}: {tag} multi-index must have length {n}")
        terms.append((complex(float(re_), float(im_)), tco, tuple(x_mi), tuple(y_mi), tuple(xi_mi), tuple(eta_mi)))
    return PolySymbol(nx, ny, terms)


def _diff_from_entries(entries, nx, ny, where: str) -> list[DiffTerm]:
    out = []
    for i, e in enumerate(entries):
        loc = f"{where}[{i}]"
        if not isinstance(e, dict):
            raise ModelError(f"{loc}: expected an object with re/im/t/dt/dx/dy keys")
        try:
            coeff = PolySymbol(nx, ny, [(
                complex(float(e.get("re", 0.0)), float(e.get("im", 0.0))),
                TCoeff.from_tag(e.get("t", 0)),
                tuple(e.get("coeff_x", (0,) * nx)),
                tuple(e.get("coeff_y", (0,) * ny)),
                (0,) * nx,
                (0,) * ny,
            )])
            out.append(DiffTerm(coeff, int(e.get("dt", 0)), tuple(e.get("dx", (0,) * nx)), tuple(e.get("dy", (0,) * ny))))
        except (SymbolError, TypeError, ValueError) as exc:
            raise ModelError(f"{loc}: {exc}") from exc
    return out


def model_from_dict(d: dict) -> ModelProblem:
    for key in ("name", "k", "dims", "eta0", "xi0", "x0", "y0", "interval", "f_poly"):
        if key not in d:
            raise ModelError(f"model file missing required key {key!r}")
    dims = d["dims"]
    nx, ny = int(dims["nx"]), int(dims["ny"])
    k = INFINITE if d["k"] in ("inf", "INFINITE") else int(d["k"])
    f = _poly_from_entries(d["f_poly"], nx, ny, "f_poly")
    r = _poly_from_entries(d["r_poly"], nx, ny, "r_poly") if d.get("r_poly") else None
    F0 = _poly_from_entries(d["F0_poly"], nx, ny, "F0_poly") if d.get("F0_poly") else None
    cc = _poly_from_entries(d["c_poly"], nx, ny, "c_poly") if d.get("c_poly") else None
    diff = _diff_from_entries(d["diff_op"], nx, ny, "diff_op") if d.get("diff_op") else []
    return ModelProblem(
        k=k, eta0=d["eta0"], f=f, r=r, F0=F0, c_coupling=cc, diff_op=diff,
        t_start=float(d.get("t_start", 0.0)), x0=d["x0"], xi0=d["xi0"], y0=d["y0"],
        interval=tuple(float(v) for v in d["interval"]), label=str(d["name"]),
    )


def load_model_file(path: str) -> ModelProblem:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    try:
        return model_from_dict(data)
    except ModelError as exc:
        raise ModelError(f"{path}: {exc}") from exc


BUILTIN_NAMES = ("mizohata", "cpt", "cpt_gen")
