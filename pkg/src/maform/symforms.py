"""Symbolic (exact) differential forms on a single coordinate chart.

This is the analytic path: coefficients are sympy expressions in the real
chart coordinates, all derivatives are exact, and numeric evaluation goes
through cached lambdified functions.  The gridded path (gridforms) is
checked against this one.

Convention: dc = i(dbar - d) for the standard structure J_o, generalized to
dc(alpha) = (-1)^p * Jact(d(Jact(alpha))) where Jact is the tensor action
(J alpha)(X_1..X_p) = (-1)^p alpha(J X_1, .., J X_p).  With this choice
d(dc)|z|^2 = 4 dx^dy.
"""

from __future__ import annotations

import numpy as np
import sympy as sp

from . import exterior


def real_coords(dim, prefix=None):
    """Standard real coordinate symbols.

    dim=2 -> (x, y); dim=4 -> (x, y, s, t); dim=6 -> (x1, y1, x2, y2, s, t).
    v = x + iy is the base affine coordinate, zeta = s + it the fiber one.
    """
    if prefix is not None:
        return sp.symbols(" ".join(f"{prefix}{i}" for i in range(dim)), real=True)
    if dim == 2:
        return sp.symbols("x y", real=True)
    if dim == 4:
        return sp.symbols("x y s t", real=True)
    if dim == 6:
        return sp.symbols("x1 y1 x2 y2 s t", real=True)
    raise ValueError(f"no standard coordinate set for dim {dim}")


class AnalyticForm:
    """A complex-valued p-form with sympy coefficients on one chart."""

    def __init__(self, coords, degree, comps):
        self.coords = tuple(coords)
        self.dim = len(self.coords)
        self.degree = degree
        clean = {}
        for idx, expr in comps.items():
            idx = tuple(idx)
            if len(idx) != degree or list(idx) != sorted(idx):
                raise ValueError(f"bad index tuple {idx} for degree {degree}")
            expr = sp.sympify(expr)
            if expr != 0:
                clean[idx] = clean.get(idx, 0) + expr
        self.comps = clean
        self._fns = None

    # -- constructors -------------------------------------------------
    @classmethod
    def scalar(cls, coords, expr):
        return cls(coords, 0, {(): expr})

    @classmethod
    def zero(cls, coords, degree):
        return cls(coords, degree, {})

    # -- algebra ------------------------------------------------------
    def __add__(self, other):
        self._check(other)
        comps = dict(self.comps)
        for idx, e in other.comps.items():
            comps[idx] = comps.get(idx, 0) + e
        return AnalyticForm(self.coords, self.degree, comps)

    def __sub__(self, other):
        return self + other.scale(-1)

    def __neg__(self):
        return self.scale(-1)

    def scale(self, factor):
        factor = sp.sympify(factor)
        return AnalyticForm(
            self.coords, self.degree, {i: factor * e for i, e in self.comps.items()}
        )

    def _check(self, other):
        if self.coords != other.coords or self.degree != other.degree:
            raise ValueError("mismatched forms")

    # -- calculus -----------------------------------------------------
    def d(self):
        if self.degree >= self.dim:
            raise ValueError("degree overflow in exterior derivative")
        comps = {}
        for idx, expr in self.comps.items():
            for k, xk in enumerate(self.coords):
                if k in idx:
                    continue
                sign, new = exterior.insert_index(idx, k)
                comps[new] = comps.get(new, 0) + sign * sp.diff(expr, xk)
        return AnalyticForm(self.coords, self.degree + 1, comps)

    def jconj(self):
        """Tensor action of J_o: (J a)(X..) = (-1)^p a(J X..).

        The loop runs over source indices; because J_o maps basis covectors
        to signed basis covectors and J_o^{-1} = -J_o, the per-axis inverse
        signs exactly absorb the (-1)^p prefactor.
        """
        comps = {}
        for idx, expr in self.comps.items():
            res = exterior.jo_on_indices(idx)
            if res is None:
                continue
            sign, new = res
            comps[new] = comps.get(new, 0) + sign * expr
        return AnalyticForm(self.coords, self.degree, comps)

    def dc(self):
        """dc = (-1)^p Jact d Jact; equals i(dbar-d) on scalars."""
        out = self.jconj().d().jconj()
        return out.scale((-1) ** self.degree)

    def wedge(self, other):
        if self.coords != other.coords:
            raise ValueError("mismatched charts")
        deg = self.degree + other.degree
        if deg > self.dim:
            return AnalyticForm.zero(self.coords, min(deg, self.dim))
        comps = {}
        for I, a in self.comps.items():
            for J, b in other.comps.items():
                res = exterior.merge_indices(I, J)
                if res is None:
                    continue
                sign, K = res
                comps[K] = comps.get(K, 0) + sign * a * b
        return AnalyticForm(self.coords, deg, comps)

    def wedge_power(self, k):
        out = AnalyticForm.scalar(self.coords, 1)
        for _ in range(k):
            out = out.wedge(self)
        return out

    def interior(self, X):
        """Interior product with a vector field given as component exprs."""
        if self.degree == 0:
            raise ValueError("degree mismatch: cannot contract a 0-form")
        if len(X) != self.dim:
            raise ValueError("vector field dimension mismatch")
        comps = {}
        for idx, expr in self.comps.items():
            for k in idx:
                sign, new = exterior.remove_index(idx, k)
                comps[new] = comps.get(new, 0) + sign * sp.sympify(X[k]) * expr
        return AnalyticForm(self.coords, self.degree - 1, comps)

    # -- evaluation ---------------------------------------------------
    def _lambdify(self):
        if self._fns is None:
            self._fns = {
                idx: sp.lambdify(self.coords, expr, modules="numpy")
                for idx, expr in self.comps.items()
            }
        return self._fns

    def evaluate(self, points):
        """Evaluate all components at points, shape (N, dim) real.

        Returns dict index tuple -> complex array of shape (N,).
        Indices absent from the form are genuinely zero and omitted.
        """
        points = np.asarray(points, dtype=float)
        args = [points[:, k] for k in range(self.dim)]
        out = {}
        for idx, fn in self._lambdify().items():
            val = np.asarray(fn(*args), dtype=complex)
            if val.shape != args[0].shape:
                val = np.broadcast_to(val, args[0].shape).copy()
            out[idx] = val
        return out

    def matrix_at(self, points):
        """For a 2-form, the full antisymmetric coefficient matrix per point."""
        if self.degree != 2:
            raise ValueError("matrix_at needs a 2-form")
        vals = self.evaluate(points)
        n = len(points)
        A = np.zeros((n, self.dim, self.dim), dtype=complex)
        for (i, j), arr in vals.items():
            A[:, i, j] = arr
            A[:, j, i] = -arr
        return A

    def vector_at(self, points):
        """For a 1-form, the coefficient row vector per point."""
        if self.degree != 1:
            raise ValueError("vector_at needs a 1-form")
        vals = self.evaluate(points)
        n = len(points)
        V = np.zeros((n, self.dim), dtype=complex)
        for (i,), arr in vals.items():
            V[:, i] = arr
        return V

    def scalar_at(self, points):
        if self.degree != 0:
            raise ValueError("scalar_at needs a 0-form")
        vals = self.evaluate(points)
        if not vals:
            return np.zeros(len(points), dtype=complex)
        return vals[()]

    def max_abs_at(self, points):
        """Max absolute component value over the sample points."""
        vals = self.evaluate(points)
        if not vals:
            return 0.0
        return max(float(np.max(np.abs(arr))) for arr in vals.values())

    def simplify(self):
        return AnalyticForm(
            self.coords,
            self.degree,
            {i: sp.simplify(e) for i, e in self.comps.items()},
        )


def complex_modulus_sq(re, im):
    return re**2 + im**2
