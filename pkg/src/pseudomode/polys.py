"""Small multivariate polynomial algebra over displacement variables.

Polynomials live in the variables (dx_1..dx_nx, dy_1..dy_ny) with complex
coefficients.  They carry the Taylor data of phases and symbol expansions
around a moving base point, so exactness matters more than speed: all
products and extractions are done in rational/float arithmetic on sparse
monomial dicts, never by numerical differentiation.
"""

from __future__ import annotations

import math
from itertools import product as _iterprod

import numpy as np

Key = tuple  # monomial exponent tuple, length nx + ny


def multi_indices(nvars: int, degree: int):
    """All exponent tuples over `nvars` variables with total degree == degree."""
    if nvars == 0:
        return [()] if degree == 0 else []
    out = []
    for head in range(degree + 1):
        for tail in multi_indices(nvars - 1, degree - head):
            out.append((head,) + tail)
    return out


def multi_indices_upto(nvars: int, degree: int):
    out = []
    for d in range(degree + 1):
        out.extend(multi_indices(nvars, d))
    return out


def mi_factorial(mi) -> float:
    f = 1.0
    for m in mi:
        f *= math.factorial(m)
    return f


class MPoly:
    """Sparse polynomial in nx + ny displacement variables."""

    __slots__ = ("nx", "ny", "c")

    def __init__(self, nx: int, ny: int, c: dict | None = None):
        self.nx = nx
        self.ny = ny
        self.c = c if c is not None else {}

    # -- construction helpers -------------------------------------------------

    @classmethod
    def constant(cls, nx, ny, value) -> "MPoly":
        p = cls(nx, ny)
        if value != 0:
            p.c[(0,) * (nx + ny)] = complex(value)
        return p

    @classmethod
    def variable(cls, nx, ny, index) -> "MPoly":
        key = [0] * (nx + ny)
        key[index] = 1
        return cls(nx, ny, {tuple(key): 1.0 + 0.0j})

    def copy(self) -> "MPoly":
        return MPoly(self.nx, self.ny, dict(self.c))

    # -- ring operations -------------------------------------------------------

    def add_term(self, key: Key, value):
        if value == 0:
            return
        cur = self.c.get(key)
        if cur is None:
            self.c[key] = complex(value)
        else:
            s = cur + value
            if s == 0:
                del self.c[key]
            else:
                self.c[key] = s

    def __add__(self, other: "MPoly") -> "MPoly":
        out = self.copy()
        for k, v in other.c.items():
            out.add_term(k, v)
        return out

    def __sub__(self, other: "MPoly") -> "MPoly":
        out = self.copy()
        for k, v in other.c.items():
            out.add_term(k, -v)
        return out

    def scaled(self, a) -> "MPoly":
        if a == 0:
            return MPoly(self.nx, self.ny)
        return MPoly(self.nx, self.ny, {k: a * v for k, v in self.c.items()})

    def mul(self, other: "MPoly", max_degree: int | None = None) -> "MPoly":
        out = MPoly(self.nx, self.ny)
        for k1, v1 in self.c.items():
            d1 = sum(k1)
            for k2, v2 in other.c.items():
                if max_degree is not None and d1 + sum(k2) > max_degree:
                    continue
                key = tuple(a + b for a, b in zip(k1, k2))
                out.add_term(key, v1 * v2)
        return out

    def truncate(self, max_degree: int) -> "MPoly":
        return MPoly(
            self.nx, self.ny, {k: v for k, v in self.c.items() if sum(k) <= max_degree}
        )

    def diff(self, index: int) -> "MPoly":
        out = MPoly(self.nx, self.ny)
        for k, v in self.c.items():
            e = k[index]
            if e == 0:
                continue
            key = list(k)
            key[index] = e - 1
            out.add_term(tuple(key), v * e)
        return out

    def max_abs(self) -> float:
        return max((abs(v) for v in self.c.values()), default=0.0)

    # -- coefficient access ----------------------------------------------------

    def coeff(self, alpha, beta) -> complex:
        return self.c.get(tuple(alpha) + tuple(beta), 0.0 + 0.0j)

    def homogeneous_part(self, jx: int, jy: int) -> "MPoly":
        """Monomials with x-degree jx and y-degree jy."""
        out = MPoly(self.nx, self.ny)
        for k, v in self.c.items():
            if sum(k[: self.nx]) == jx and sum(k[self.nx:]) == jy:
                out.c[k] = v
        return out

    def y_degree_min(self) -> int:
        return min((sum(k[self.nx:]) for k in self.c), default=0)

    # -- evaluation --------------------------------------------------------------

    def __call__(self, dx, dy):
        """Evaluate; dx, dy may be scalars/arrays broadcastable together."""
        dx = np.atleast_1d(np.asarray(dx, dtype=complex)) if self.nx else None
        dy = np.atleast_1d(np.asarray(dy, dtype=complex)) if self.ny else None
        total = None
        for k, v in self.c.items():
            term = complex(v)
            acc = None
            for i in range(self.nx):
                if k[i]:
                    f = dx[..., i] ** k[i] if dx.ndim > 1 else dx[i] ** k[i]
                    acc = f if acc is None else acc * f
            for j in range(self.ny):
                e = k[self.nx + j]
                if e:
                    f = dy[..., j] ** e if dy.ndim > 1 else dy[j] ** e
                    acc = f if acc is None else acc * f
            contrib = term if acc is None else term * acc
            total = contrib if total is None else total + contrib
        if total is None:
            return 0.0 + 0.0j
        return total

    def eval_grid(self, dx_axes, dy_axes):
        """Evaluate on a tensor grid; dx_axes/dy_axes are 1-d arrays per variable,
        pre-broadcast to a common shape by the caller via np.ix_-style reshaping."""
        shape = np.broadcast_shapes(*[a.shape for a in dx_axes + dy_axes]) if (dx_axes or dy_axes) else ()
        total = np.zeros(shape, dtype=complex)
        for k, v in self.c.items():
            term = None
            for i in range(self.nx):
                if k[i]:
                    f = dx_axes[i] ** k[i]
                    term = f if term is None else term * f
            for j in range(self.ny):
                e = k[self.nx + j]
                if e:
                    f = dy_axes[j] ** e
                    term = f if term is None else term * f
            if term is None:
                total += v
            else:
                total += v * term
        return total


# -- symmetric tensors <-> polynomials ------------------------------------------


def symmetrize(T: np.ndarray, nx_slots: int, ny_slots: int, nx: int, ny: int) -> np.ndarray:
    """Symmetrize independently over the x-slot block and the y-slot block."""
    if T.ndim == 0:
        return T
    import itertools

    out = np.zeros_like(T)
    xperms = list(itertools.permutations(range(nx_slots)))
    yperms = list(itertools.permutations(range(nx_slots, nx_slots + ny_slots)))
    for px in xperms:
        for py in yperms:
            perm = tuple(px) + tuple(py)
            out += np.transpose(T, perm)
    out /= len(xperms) * len(yperms)
    return out


def tensor_to_poly(W: np.ndarray, i: int, j: int, nx: int, ny: int) -> MPoly:
    """Polynomial W(dx^i, dy^j) / (i! j!) of the symmetric (i,j)-form W."""
    p = MPoly(nx, ny)
    if i == 0 and j == 0:
        p.add_term((0,) * (nx + ny), complex(W))
        return p
    for idx in _iterprod(*([range(nx)] * i + [range(ny)] * j)):
        key = [0] * (nx + ny)
        for a in idx[:i]:
            key[a] += 1
        for b in idx[i:]:
            key[nx + b] += 1
        p.add_term(tuple(key), W[idx] / (math.factorial(i) * math.factorial(j)))
    return p


def poly_to_tensor(p: MPoly, i: int, j: int, nx: int, ny: int) -> np.ndarray:
    """Extract the symmetric (i,j)-form from a polynomial's (i,j)-homogeneous part.

    Inverse of tensor_to_poly: entry at an index tuple with x-multiplicities
    alpha and y-multiplicities beta equals alpha! beta! * monomial coefficient.
    """
    if i == 0 and j == 0:
        return np.asarray(p.coeff((0,) * nx, (0,) * ny))
    shape = (nx,) * i + (ny,) * j
    T = np.zeros(shape, dtype=complex)
    for idx in _iterprod(*([range(nx)] * i + [range(ny)] * j)):
        alpha = [0] * nx
        beta = [0] * ny
        for a in idx[:i]:
            alpha[a] += 1
        for b in idx[i:]:
            beta[b] += 1
        T[idx] = p.coeff(alpha, beta) * mi_factorial(alpha) * mi_factorial(beta)
    return T


def contract(T: np.ndarray, vec: np.ndarray, axis: int = 0) -> np.ndarray:
    """Contract one tensor slot with a vector."""
    return np.tensordot(T, vec, axes=([axis], [0]))
