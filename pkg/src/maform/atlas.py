"""Chart atlas for the blow-up coordinates (v, zeta).

The base CP^{n-1} is covered by stereographic-style affine charts; for
n = 2 two charts with transition v -> 1/v, overlapping on the annulus
0.8 <= |v| <= 1.25, with a smooth partition of unity.  The fiber carries a
polar grid in zeta with N_theta a power of two so the angular DFT used by
the deformation module is exact on band-limited data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

R_INNER = 0.8
R_OUTER = 1.25


def _smootherstep(x):
    """C-infinity step: 0 for x<=0, 1 for x>=1, g(x)/(g(x)+g(1-x)) inside."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    out[x >= 1.0] = 1.0
    mid = (x > 0.0) & (x < 1.0)
    xm = x[mid]
    g = np.exp(-1.0 / xm)
    g1 = np.exp(-1.0 / (1.0 - xm))
    out[mid] = g / (g + g1)
    return out


def overlap_weight(r):
    """Chart weight as a function of |v|: 1 inside |v|<=0.8, 0 outside
    |v|>=1.25, and w(r) + w(1/r) = 1 on the overlap band."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        t = np.where(r > 0, np.log(np.maximum(r, 1e-300)) / np.log(R_OUTER), -1.0)
    # t runs over [-1, 1] across the band; symmetric step gives the partition
    return _smootherstep((1.0 - t) / 2.0)


@dataclass(frozen=True)
class FiberGrid:
    """Polar grid in the fiber coordinate zeta.

    The inner radius is a fixed fraction of r_max (not 1/n_r) so that grid
    refinement keeps the radial window fixed; the exceptional set |zeta| <
    r_min is always excluded from nodewise computations.
    """

    n_r: int = 8
    n_theta: int = 16
    r_max: float = 0.9
    r_min: float = 0.1125

    def __post_init__(self):
        if self.n_theta & (self.n_theta - 1):
            raise ValueError("N_theta must be a power of two")
        if self.n_r < 2:
            raise ValueError("need at least two fiber radii")
        if not 0 < self.r_min < self.r_max:
            raise ValueError("need 0 < r_min < r_max")

    @property
    def radii(self):
        return np.linspace(self.r_min, self.r_max, self.n_r)

    @property
    def thetas(self):
        return 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta

    @property
    def zetas(self):
        return self.radii[:, None] * np.exp(1j * self.thetas[None, :])


@dataclass(frozen=True)
class ChartAtlas:
    """Chart and grid bookkeeping for the blow-up of C^n at 0.

    n = 2: two base charts of CP^1 (coordinates v and w = 1/v).
    n = 3: a single affine chart of CP^2 at coarse resolution, used only by
    the deformation-algebra verifiers.
    """

    n: int = 2
    n_v: int = 33
    box: float = R_OUTER
    fiber: FiberGrid = field(default_factory=FiberGrid)

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError("complex dimension must be 2 or 3")
        if self.n == 3 and self.n_v > 12:
            raise ValueError("n = 3 atlases are restricted to coarse grids")

    @property
    def charts(self):
        return (0, 1) if self.n == 2 else (0,)

    @property
    def xs(self):
        return np.linspace(-self.box, self.box, self.n_v)

    @property
    def h(self):
        return 2.0 * self.box / (self.n_v - 1)

    def base_points(self, chart):
        """Complex base coordinates on the chart grid, shape (n_v, n_v)."""
        if chart not in self.charts:
            raise ValueError(f"unknown chart {chart}")
        X, Y = np.meshgrid(self.xs, self.xs, indexing="ij")
        return X + 1j * Y

    def base_points3(self, chart=0):
        """n = 3: two complex base coordinates, each shape (n_v,)*4."""
        if self.n != 3:
            raise ValueError("base_points3 is for n = 3 atlases")
        X1, Y1, X2, Y2 = np.meshgrid(self.xs, self.xs, self.xs, self.xs, indexing="ij")
        return X1 + 1j * Y1, X2 + 1j * Y2

    def weights(self, chart):
        """Partition-of-unity weight at the chart's base nodes."""
        V = self.base_points(chart)
        return overlap_weight(np.abs(V))

    def transition(self, v):
        """Base transition map between the two CP^1 charts (involutive)."""
        return 1.0 / v

    def transition_jacobian(self, v):
        """Real 2x2 Jacobian of v -> 1/v at each point of v (complex array)."""
        dw = -1.0 / v**2  # holomorphic derivative
        a, b = dw.real, dw.imag
        Jc = np.empty(v.shape + (2, 2))
        Jc[..., 0, 0] = a
        Jc[..., 0, 1] = -b
        Jc[..., 1, 0] = b
        Jc[..., 1, 1] = a
        return Jc

    def total_points(self, chart):
        """Real coordinates (x, y, s, t) at every (base, fiber) node.

        Shape (n_v, n_v, n_r, n_theta, 4).
        """
        V = self.base_points(chart)
        Z = self.fiber.zetas
        shp = V.shape + Z.shape
        pts = np.empty(shp + (4,))
        pts[..., 0] = V.real[:, :, None, None]
        pts[..., 1] = V.imag[:, :, None, None]
        pts[..., 2] = Z.real[None, None, :, :]
        pts[..., 3] = Z.imag[None, None, :, :]
        return pts

    def base_quad_weights(self, chart):
        """Trapezoid quadrature weights times the partition of unity."""
        w = np.full(self.n_v, self.h)
        w[0] *= 0.5
        w[-1] *= 0.5
        W2 = w[:, None] * w[None, :]
        return W2 * self.weights(chart)


def blowup_forward(z):
    """Map points of C^n \\ {0} to (chart, v, zeta).

    Chart is the index of the largest-modulus homogeneous coordinate; v
    collects the remaining coordinates divided by z[chart], zeta = z[chart].
    """
    z = np.asarray(z, dtype=complex)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    if np.any(np.all(z == 0, axis=1)):
        raise ValueError("blow-up coordinates are undefined at z = 0")
    chart = np.argmax(np.abs(z), axis=1)
    zeta = np.take_along_axis(z, chart[:, None], axis=1)[:, 0]
    n = z.shape[1]
    ratios = z / zeta[:, None]
    v = np.empty((z.shape[0], n - 1), dtype=complex)
    for row in range(z.shape[0]):
        c = chart[row]
        v[row] = [ratios[row, i] for i in range(n) if i != c]
    if single:
        return int(chart[0]), v[0], zeta[0]
    return chart, v, zeta


def blowup_inverse(chart, v, zeta):
    """Inverse of blowup_forward: rebuild z from (chart, v, zeta)."""
    v = np.atleast_2d(np.asarray(v, dtype=complex))
    zeta = np.atleast_1d(np.asarray(zeta, dtype=complex))
    chart_arr = np.broadcast_to(np.asarray(chart, dtype=int), zeta.shape)
    n = v.shape[1] + 1
    z = np.empty((len(zeta), n), dtype=complex)
    for row in range(len(zeta)):
        c = int(chart_arr[row])
        parts = list(v[row])
        parts.insert(c, 1.0 + 0j)
        z[row] = zeta[row] * np.array(parts)
    if np.isscalar(chart) and z.shape[0] == 1 and np.asarray(v).ndim <= 1:
        return z[0]
    return z
