"""Symbol representation with exact or finite-difference partial derivatives.

A symbol is a complex function f(t, x, y, xi, eta).  The workhorse is
PolySymbol: a sum of monomial terms  c * g(t) * x^a y^b xi^p eta^q  with g(t)
drawn from a small closed-under-differentiation family (t^m, sin, cos, exp).
Built-in models use PolySymbol so every derivative the phase/amplitude systems
need is available in closed form.  CallableSymbol wraps a black-box callable
and differentiates by central differences with one Richardson level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .polys import MPoly, mi_factorial, multi_indices_upto


class SymbolError(Exception):
    pass


class OrderBudgetExceeded(SymbolError):
    pass


class NonFinite(SymbolError):
    pass


class ZeroXi(SymbolError):
    pass


class OrderMismatch(SymbolError):
    pass


# -- time coefficient functions ---------------------------------------------------


@dataclass(frozen=True)
class TCoeff:
    """g(t): t^m  or  sin/cos/exp of (scale * t)."""

    kind: str = "poly"  # poly | sin | cos | exp
    power: int = 0
    scale: float = 1.0

    def eval(self, t, order: int = 0):
        if self.kind == "poly":
            m = self.power
            if order > m:
                return 0.0 * t if isinstance(t, np.ndarray) else 0.0
            fac = float(math.factorial(m) // math.factorial(m - order))
            if m - order == 0:
                return fac * (t * 0 + 1.0) if isinstance(t, np.ndarray) else fac
            return fac * t ** (m - order)
        a = self.scale
        if self.kind == "exp":
            return (a ** order) * np.exp(a * t)
        # sin/cos derivative cycle
        phase = order % 4
        base = np.sin if self.kind == "sin" else np.cos
        other = np.cos if self.kind == "sin" else np.sin
        sgn_other = 1.0 if self.kind == "sin" else -1.0
        vals = {
            0: lambda: base(a * t),
            1: lambda: sgn_other * other(a * t),
            2: lambda: -base(a * t),
            3: lambda: -sgn_other * other(a * t),
        }
        return (a ** order) * vals[phase]()

    @staticmethod
    def from_tag(tag) -> "TCoeff":
        """Accepts: int m | "poly:t^m" | [kind, scale] | "sin"/"cos"/"exp"."""
        if isinstance(tag, int):
            return TCoeff("poly", power=tag)
        if isinstance(tag, str):
            if tag.startswith("poly:t^"):
                return TCoeff("poly", power=int(tag.split("^")[1]))
            if tag in ("sin", "cos", "exp"):
                return TCoeff(tag, scale=1.0)
            raise SymbolError(f"unknown t-coefficient tag {tag!r}")
        if isinstance(tag, (list, tuple)) and len(tag) == 2 and tag[0] in ("sin", "cos", "exp"):
            return TCoeff(tag[0], scale=float(tag[1]))
        raise SymbolError(f"unknown t-coefficient tag {tag!r}")


@dataclass(frozen=True)
class Term:
    coeff: complex
    tco: TCoeff
    x_mi: tuple
    y_mi: tuple
    xi_mi: tuple
    eta_mi: tuple


def _pow_deriv(base, exponent: int, order: int):
    """d^order/dz^order of z^exponent evaluated at base (complex ok)."""
    if order > exponent:
        return 0.0
    fac = math.factorial(exponent) / math.factorial(exponent - order)
    if exponent - order == 0:
        return fac
    return fac * base ** (exponent - order)


class SymbolFunction:
    """Interface: eval / partial over the variables (t, x, y, xi, eta)."""

    nx: int
    ny: int
    d_max: int

    def eval(self, t, x, xi, eta, y=None):
        raise NotImplementedError

    def partial(self, orders, t, x, xi, eta, y=None):
        """orders = (a_t, a_x, a_y, a_xi, a_eta) with multi-index entries."""
        raise NotImplementedError

    # convenience wrappers used throughout the pipeline -------------------------

    def d(self, t, x, xi, eta, y=None, dt=0, dx=(), dy=(), dxi=(), deta=()):
        nx, ny = self.nx, self.ny
        ax = tuple(dx) if dx else (0,) * nx
        ay = tuple(dy) if dy else (0,) * ny
        axi = tuple(dxi) if dxi else (0,) * nx
        aeta = tuple(deta) if deta else (0,) * ny
        return self.partial((dt, ax, ay, axi, aeta), t, x, xi, eta, y=y)

    def grad_eta(self, t, x, xi, eta, y=None) -> np.ndarray:
        g = np.zeros(self.ny, dtype=complex)
        for b in range(self.ny):
            mi = [0] * self.ny
            mi[b] = 1
            g[b] = self.d(t, x, xi, eta, y=y, deta=mi)
        return g

    def hess_eta(self, t, x, xi, eta, y=None) -> np.ndarray:
        H = np.zeros((self.ny, self.ny), dtype=complex)
        for a in range(self.ny):
            for b in range(a, self.ny):
                mi = [0] * self.ny
                mi[a] += 1
                mi[b] += 1
                H[a, b] = H[b, a] = self.d(t, x, xi, eta, y=y, deta=mi)
        return H

    def grad_xi(self, t, x, xi, eta, y=None) -> np.ndarray:
        g = np.zeros(self.nx, dtype=complex)
        for a in range(self.nx):
            mi = [0] * self.nx
            mi[a] = 1
            g[a] = self.d(t, x, xi, eta, y=y, dxi=mi)
        return g

    def grad_x(self, t, x, xi, eta, y=None) -> np.ndarray:
        g = np.zeros(self.nx, dtype=complex)
        for a in range(self.nx):
            mi = [0] * self.nx
            mi[a] = 1
            g[a] = self.d(t, x, xi, eta, y=y, dx=mi)
        return g

    def grad_y(self, t, x, xi, eta, y=None) -> np.ndarray:
        g = np.zeros(self.ny, dtype=complex)
        for b in range(self.ny):
            mi = [0] * self.ny
            mi[b] = 1
            g[b] = self.d(t, x, xi, eta, y=y, dy=mi)
        return g


class PolySymbol(SymbolFunction):
    """Exact symbol: sum of c * g(t) * x^a y^b xi^p eta^q monomials."""

    def __init__(self, nx: int, ny: int, terms, d_max: int = 16):
        self.nx = nx
        self.ny = ny
        self.d_max = d_max
        self.terms: list[Term] = []
        for tm in terms:
            if isinstance(tm, Term):
                self.terms.append(tm)
            else:
                c, tco, x_mi, y_mi, xi_mi, eta_mi = tm
                self.terms.append(
                    Term(
                        complex(c),
                        tco if isinstance(tco, TCoeff) else TCoeff.from_tag(tco),
                        tuple(x_mi) or (0,) * nx,
                        tuple(y_mi) or (0,) * ny,
                        tuple(xi_mi) or (0,) * nx,
                        tuple(eta_mi) or (0,) * ny,
                    )
                )

    # ---------------------------------------------------------------------------

    def eval(self, t, x, xi, eta, y=None):
        return self.partial((0, (0,) * self.nx, (0,) * self.ny, (0,) * self.nx, (0,) * self.ny), t, x, xi, eta, y=y)

    def partial(self, orders, t, x, xi, eta, y=None):
        dt, ax, ay, axi, aeta = orders
        total_order = dt + sum(ax) + sum(ay) + sum(axi) + sum(aeta)
        if total_order > self.d_max:
            raise OrderBudgetExceeded(f"requested total derivative order {total_order} > d_max {self.d_max}")
        x = np.atleast_1d(np.asarray(x)) if self.nx else np.zeros(0)
        xi = np.atleast_1d(np.asarray(xi)) if self.nx else np.zeros(0)
        eta = np.atleast_1d(np.asarray(eta)) if self.ny else np.zeros(0)
        yv = np.zeros(self.ny) if y is None else np.atleast_1d(np.asarray(y))
        acc = 0.0 + 0.0j
        for tm in self.terms:
            v = tm.coeff * tm.tco.eval(t, dt)
            if v == 0:
                continue
            ok = True
            for i in range(self.nx):
                f = _pow_deriv(x[i], tm.x_mi[i], ax[i])
                if f == 0:
                    ok = False
                    break
                v *= f
            if not ok:
                continue
            for i in range(self.nx):
                f = _pow_deriv(xi[i], tm.xi_mi[i], axi[i])
                if f == 0:
                    ok = False
                    break
                v *= f
            if not ok:
                continue
            for j in range(self.ny):
                f = _pow_deriv(yv[j], tm.y_mi[j], ay[j])
                if f == 0:
                    ok = False
                    break
                v *= f
            if not ok:
                continue
            for j in range(self.ny):
                f = _pow_deriv(eta[j], tm.eta_mi[j], aeta[j])
                if f == 0:
                    ok = False
                    break
                v *= f
            if not ok:
                continue
            acc += v
        if not np.isfinite(acc):
            raise NonFinite("symbol evaluation produced a non-finite value")
        return acc

    # structural helpers ---------------------------------------------------------

    def eta_degree_part(self, j: int) -> "PolySymbol":
        return PolySymbol(self.nx, self.ny, [tm for tm in self.terms if sum(tm.eta_mi) == j], d_max=self.d_max)

    def max_eta_degree(self) -> int:
        return max((sum(tm.eta_mi) for tm in self.terms), default=0)

    def depends_on_y(self) -> bool:
        return any(sum(tm.y_mi) > 0 for tm in self.terms)

    def scaled(self, a) -> "PolySymbol":
        return PolySymbol(
            self.nx,
            self.ny,
            [Term(tm.coeff * a, tm.tco, tm.x_mi, tm.y_mi, tm.xi_mi, tm.eta_mi) for tm in self.terms],
            d_max=self.d_max,
        )


class CallableSymbol(SymbolFunction):
    """Finite-difference backend for user symbols given as callables.

    Central differences with step h = max(1, |coord|) * 6e-6 and one Richardson
    extrapolation level per differentiation.  Complex arguments are handled by a
    second-order Taylor expansion at the real part.
    """

    FD_BASE = 6.0e-6

    def __init__(self, nx: int, ny: int, fn, d_max: int = 6):
        self.nx = nx
        self.ny = ny
        self.fn = fn
        self.d_max = d_max

    def eval(self, t, x, xi, eta, y=None):
        point = self._realify(t, x, xi, eta, y)
        if point is None:
            return self._complex_eval(t, x, xi, eta, y)
        v = self.fn(*point)
        if not np.isfinite(v):
            raise NonFinite("callable symbol returned non-finite value")
        return complex(v)

    def _realify(self, t, x, xi, eta, y):
        vals = [np.atleast_1d(np.asarray(v, dtype=complex)) for v in (x, xi, eta)]
        if any(np.abs(v.imag).max(initial=0.0) > 0 for v in vals):
            return None
        yv = np.zeros(self.ny) if y is None else np.atleast_1d(np.asarray(y, dtype=float))
        return (float(np.real(t)), vals[0].real, yv, vals[1].real, vals[2].real)

    def _complex_eval(self, t, x, xi, eta, y):
        # Taylor order 2 at the real part in the (xi, eta) directions.
        x = np.atleast_1d(np.asarray(x, dtype=complex))
        xi = np.atleast_1d(np.asarray(xi, dtype=complex))
        eta = np.atleast_1d(np.asarray(eta, dtype=complex))
        xr, xir, etar = x.real, xi.real, eta.real
        dz = np.concatenate([x.imag * 1j, xi.imag * 1j, eta.imag * 1j])
        base = (0, (0,) * self.nx, (0,) * self.ny, (0,) * self.nx, (0,) * self.ny)
        val = self.partial(base, t, xr, xir, etar, y=y)
        nvar = 2 * self.nx + self.ny
        grads = np.zeros(nvar, dtype=complex)
        for i in range(self.nx):
            mask = [0] * self.nx
            mask[i] = 1
            grads[i] = self.d(t, xr, xir, etar, y=y, dx=mask)
            grads[self.nx + i] = self.d(t, xr, xir, etar, y=y, dxi=mask)
        for j in range(self.ny):
            mask = [0] * self.ny
            mask[j] = 1
            grads[2 * self.nx + j] = self.d(t, xr, xir, etar, y=y, deta=mask)
        val += np.dot(grads, dz)
        for i in range(nvar):
            for j in range(nvar):
                if dz[i] == 0 or dz[j] == 0:
                    continue
                oi = self._unit_orders(i)
                oj = self._unit_orders(j)
                orders = (0, tuple(a + b for a, b in zip(oi[0], oj[0])), (0,) * self.ny,
                          tuple(a + b for a, b in zip(oi[1], oj[1])),
                          tuple(a + b for a, b in zip(oi[2], oj[2])))
                val += 0.5 * self.partial(orders, t, xr, xir, etar, y=y) * dz[i] * dz[j]
        return val

    def _unit_orders(self, flat):
        ax = [0] * self.nx
        axi = [0] * self.nx
        aeta = [0] * self.ny
        if flat < self.nx:
            ax[flat] = 1
        elif flat < 2 * self.nx:
            axi[flat - self.nx] = 1
        else:
            aeta[flat - 2 * self.nx] = 1
        return tuple(ax), tuple(axi), tuple(aeta)

    def partial(self, orders, t, x, xi, eta, y=None):
        dt, ax, ay, axi, aeta = orders
        total = dt + sum(ax) + sum(ay) + sum(axi) + sum(aeta)
        if total > self.d_max:
            raise OrderBudgetExceeded(f"requested total derivative order {total} > d_max {self.d_max}")
        if total == 0:
            return self.eval(t, x, xi, eta, y=y)
        # peel one derivative, recurse; deeper nests need larger steps or the
        # centered-difference roundoff eps/h^depth swamps the answer
        point = dict(t=float(t), x=np.array(np.atleast_1d(x), dtype=float),
                     y=np.zeros(self.ny) if y is None else np.array(np.atleast_1d(y), dtype=float),
                     xi=np.array(np.atleast_1d(xi), dtype=float),
                     eta=np.array(np.atleast_1d(eta), dtype=float))
        base_by_depth = {1: self.FD_BASE, 2: 2.0e-4}

        def peel(var, idx, rest):
            def f_at(shift):
                p = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in point.items()}
                if var == "t":
                    p["t"] = p["t"] + shift
                else:
                    p[var][idx] += shift
                return self.partial(rest, p["t"], p["x"], p["xi"], p["eta"], y=p["y"])

            coord = point["t"] if var == "t" else point[var][idx]
            h = max(1.0, abs(coord)) * base_by_depth.get(total, 2.0e-3)
            d_h = (f_at(h) - f_at(-h)) / (2 * h)
            d_h2 = (f_at(h / 2) - f_at(-h / 2)) / h
            val = (4 * d_h2 - d_h) / 3.0  # one Richardson level
            if not np.isfinite(val):
                raise NonFinite("finite difference produced non-finite value")
            return val

        if dt > 0:
            return peel("t", None, (dt - 1, ax, ay, axi, aeta))
        for i, a in enumerate(ax):
            if a > 0:
                ax2 = list(ax)
                ax2[i] -= 1
                return peel("x", i, (0, tuple(ax2), ay, axi, aeta))
        for j, a in enumerate(ay):
            if a > 0:
                ay2 = list(ay)
                ay2[j] -= 1
                return peel("y", j, (0, ax, tuple(ay2), axi, aeta))
        for i, a in enumerate(axi):
            if a > 0:
                axi2 = list(axi)
                axi2[i] -= 1
                return peel("xi", i, (0, ax, ay, tuple(axi2), aeta))
        for j, a in enumerate(aeta):
            if a > 0:
                aeta2 = list(aeta)
                aeta2[j] -= 1
                return peel("eta", j, (0, ax, ay, axi, tuple(aeta2)))
        raise AssertionError("unreachable")


# -- fiber-polynomial operations ------------------------------------------------------------


def eval_partial(sym: SymbolFunction, orders, point) -> complex:
    """Partial derivative access; orders = (a_t, a_x, a_y, a_xi, a_eta)."""
    t, x, xi, eta = point[0], point[1], point[2], point[3]
    y = point[4] if len(point) > 4 else None
    vals = np.concatenate([np.atleast_1d(np.asarray(v, dtype=complex)).ravel() for v in point[:4]])
    if not np.all(np.isfinite(vals)):
        raise NonFinite("evaluation point is not finite")
    return sym.partial(orders, t, x, xi, eta, y=y)


def blowup_pullback(sym: SymbolFunction, k, point) -> complex:
    """Evaluate sym at the image of the fiber scaling (xi, eta) -> (xi, eta/|xi|^(1/k))."""
    t, x, xi, eta = point[0], np.atleast_1d(point[1]), np.atleast_1d(point[2]), np.atleast_1d(point[3])
    y = point[4] if len(point) > 4 else None
    nrm = float(np.linalg.norm(xi))
    if nrm == 0.0:
        raise ZeroXi("fiber scaling undefined at xi = 0")
    s = 1.0 if math.isinf(k) else nrm ** (-1.0 / k)
    return sym.eval(t, x, xi, np.asarray(eta) * s, y=y)


@dataclass
class JetPolynomial:
    """Fiber polynomial sum_j W_j(eta^j)/j! around a base point on the degenerate set."""

    center: tuple
    degree: int
    coefficients: dict = field(default_factory=dict)  # degree -> symmetric tensor
    ny: int = 1

    def eval(self, eta) -> complex:
        eta = np.atleast_1d(np.asarray(eta, dtype=complex))
        total = 0.0 + 0.0j
        for j, W in self.coefficients.items():
            if j == 0:
                total += complex(W)
                continue
            T = np.asarray(W)
            for _ in range(j):
                T = np.tensordot(T, eta, axes=([T.ndim - 1], [0]))
            total += complex(T) / math.factorial(j)
        return total

    def degree_part(self, j: int):
        return self.coefficients.get(j)


def _eta_jet_tensor(sym: SymbolFunction, t, x, xi, y, order: int, ny: int) -> np.ndarray:
    """Dense symmetric tensor of eta-derivatives of given total order at eta=0."""
    if order == 0:
        return np.asarray(sym.eval(t, x, xi, np.zeros(ny), y=y))
    from itertools import product as ip

    T = np.zeros((ny,) * order, dtype=complex)
    cache = {}
    for idx in ip(*([range(ny)] * order)):
        mi = [0] * ny
        for b in idx:
            mi[b] += 1
        key = tuple(mi)
        if key not in cache:
            cache[key] = sym.d(t, x, xi, np.zeros(ny), y=y, deta=mi)
        T[idx] = cache[key]
    return T


def reduced_subprincipal(p: SymbolFunction, p_s, k, w, tol: float = 1e-8) -> JetPolynomial:
    """Fiber jet of the leading symbol plus the zero-order value at a base point.

    w = (t, x, xi[, y]).  For finite k the result is the degree-k polynomial
    eta -> (d^k_eta p)(w)(eta)/k! + p_s(w); p must vanish to order >= k in eta
    at w (checked by sampling lower-order eta derivatives).
    """
    t, x, xi = w[0], np.atleast_1d(w[1]), np.atleast_1d(w[2])
    y = np.atleast_1d(w[3]) if len(w) > 3 else None
    ny = p.ny
    ps_val = p_s.eval(t, x, xi, np.zeros(ny), y=y) if isinstance(p_s, SymbolFunction) else complex(p_s)
    jet = JetPolynomial(center=tuple(w), degree=0 if math.isinf(k) else int(k), ny=ny)
    if math.isinf(k):
        jet.coefficients[0] = ps_val
        return jet
    k = int(k)
    Tk = _eta_jet_tensor(p, t, x, xi, y, k, ny)
    scale = max(1.0, float(np.max(np.abs(np.atleast_1d(Tk)))), abs(ps_val))
    for j in range(k):
        T = _eta_jet_tensor(p, t, x, xi, y, j, ny)
        mx = float(np.max(np.abs(np.atleast_1d(T))))
        if mx > tol * scale:
            raise OrderMismatch(
                f"leading symbol has nonzero eta-derivative of order {j} < k = {k} at the base point"
            )
    jet.coefficients[0] = ps_val
    jet.coefficients[k] = Tk
    return jet


def extended_subprincipal(p: SymbolFunction, p_s, k, w, eta, lam: float) -> complex:
    """Blown-up jet evaluation: lam * J^{2k-1}(p)(eta/lam^{1/k}) + J^{k-1}(p_s)(eta/lam^{1/k}).

    Equals the reduced fiber polynomial up to O(lam^{-1/k}).
    """
    if lam < 1:
        raise SymbolError("lam must be >= 1")
    t, x, xi = w[0], np.atleast_1d(w[1]), np.atleast_1d(w[2])
    y = np.atleast_1d(w[3]) if len(w) > 3 else None
    ny = p.ny
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if math.isinf(k):
        return (p_s.eval(t, x, xi, np.zeros(ny), y=y) if isinstance(p_s, SymbolFunction) else complex(p_s))
    k = int(k)
    es = eta / lam ** (1.0 / k)
    total = 0.0 + 0.0j
    for j in range(0, 2 * k):
        T = _eta_jet_tensor(p, t, x, xi, y, j, ny)
        jetj = JetPolynomial(center=tuple(w), degree=j, ny=ny, coefficients={j: T})
        total += lam * jetj.eval(es)
    if isinstance(p_s, SymbolFunction):
        for j in range(0, k):
            T = _eta_jet_tensor(p_s, t, x, xi, y, j, ny)
            jetj = JetPolynomial(center=tuple(w), degree=j, ny=ny, coefficients={j: T})
            total += jetj.eval(es)
    else:
        total += complex(p_s)
    return total


# -- jet extraction for the phase/transport assembly ------------------------------


def symbol_jets(sym: SymbolFunction, t, x0, xi0, eta_base, y0=None,
                max_x: int = 4, max_xi: int = 4, max_eta: int = 2, total_cap: int | None = None):
    """Dict of mixed (x, xi, eta) derivatives at a base point.

    Keys are (ax, axi, aeta) multi-index triples.  eta-derivatives go only to
    max_eta; x/xi jointly to max_x/max_xi with an optional total cap.
    """
    nx, ny = sym.nx, sym.ny
    jets = {}
    for ax in multi_indices_upto(nx, max_x):
        for axi in multi_indices_upto(nx, max_xi):
            if total_cap is not None and sum(ax) + sum(axi) > total_cap:
                continue
            for aeta in multi_indices_upto(ny, max_eta):
                orders = (0, ax, (0,) * ny, axi, aeta)
                jets[(ax, axi, aeta)] = sym.partial(orders, t, x0, xi0, eta_base, y=y0)
    return jets


def shift_jets(jets: dict, shift_eta=(), shift_xi=()) -> dict:
    """View of a jet table with fixed extra eta and/or xi derivatives applied.

    Used to expand derivative symbols like (d_eta_b f)(x0+dx, xi0+sigma0, ...)
    from one shared jet table of f.
    """
    shift_eta = tuple(shift_eta)
    shift_xi = tuple(shift_xi)
    out = {}
    for (ax, axi, aeta), val in jets.items():
        src_eta = tuple(a + b for a, b in zip(aeta, shift_eta)) if shift_eta else aeta
        src_xi = tuple(a + b for a, b in zip(axi, shift_xi)) if shift_xi else axi
        src = (ax, src_xi, src_eta)
        if src in jets:
            out[(ax, axi, aeta)] = jets[src]
    return out


def compose_from_jets(jets: dict, nx: int, ny: int, xi_inc, eta_inc, max_degree: int) -> MPoly:
    """Taylor composition  sym(t, x0+dx, xi0 + XI(dx,dy), eta_base + ETA(dx,dy)).

    jets: {(ax, axi, aeta): derivative value at the base point};
    xi_inc: list of nx MPoly increments for the xi slot (None -> drop axi != 0);
    eta_inc: list of ny MPoly increments for the eta slot (None -> drop aeta != 0).
    The increments must have no constant term, so the truncation at max_degree
    in (dx, dy) is an honest Taylor truncation.
    """
    out = MPoly(nx, ny)
    one = MPoly.constant(nx, ny, 1.0)

    # per-component power caches
    need_x = [0] * nx
    need_xi = [0] * nx
    need_eta = [0] * ny
    keys = []
    for (ax, axi, aeta), val in jets.items():
        if val == 0:
            continue
        if any(axi) and xi_inc is None:
            continue
        if any(aeta) and eta_inc is None:
            continue
        # increments carry no constant term, so total monomial degree >= this sum
        if sum(ax) + sum(axi) + sum(aeta) > max_degree:
            continue
        keys.append(((ax, axi, aeta), val))
        for i in range(nx):
            need_x[i] = max(need_x[i], ax[i])
            need_xi[i] = max(need_xi[i], axi[i])
        for j in range(ny):
            need_eta[j] = max(need_eta[j], aeta[j])

    def powers(p: MPoly, n: int):
        lst = [one]
        for _ in range(n):
            lst.append(lst[-1].mul(p, max_degree=max_degree))
        return lst

    xpow = [powers(MPoly.variable(nx, ny, i), need_x[i]) for i in range(nx)]
    xipow = [powers(xi_inc[i], need_xi[i]) if (xi_inc is not None and need_xi[i]) else None
             for i in range(nx)]
    etapow = [powers(eta_inc[j], need_eta[j]) if (eta_inc is not None and need_eta[j]) else None
              for j in range(ny)]

    for (ax, axi, aeta), val in keys:
        base = MPoly.constant(nx, ny, val / (mi_factorial(ax) * mi_factorial(axi) * mi_factorial(aeta)))
        for i in range(nx):
            if ax[i]:
                base = base.mul(xpow[i][ax[i]], max_degree=max_degree)
        for i in range(nx):
            if axi[i]:
                base = base.mul(xipow[i][axi[i]], max_degree=max_degree)
        for j in range(ny):
            if aeta[j]:
                base = base.mul(etapow[j][aeta[j]], max_degree=max_degree)
        out = out + base
    return out
