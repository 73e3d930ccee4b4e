"""Complete circular domains: gauge data, exhaustions, and the indicatrix.

A complete circular domain is described by its degree-1 homogeneous gauge mu
on C^n.  On the blow-up charts the gauge is carried by the chart functions
m(v) = mu((1, v)) (and its permutations), the exhaustion is tau = mu^2, and
the indicatrix recovers mu from the quadratic vanishing of tau at the
center.  All closed-form domains keep exact sympy expressions in both the
ambient real coordinates and the chart coordinates, so downstream identity
checks can run at symbolic accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .atlas import ChartAtlas, blowup_forward, blowup_inverse
from .exterior import standard_j_matrix
from .symforms import AnalyticForm, real_coords


class DomainError(ValueError):
    """Invalid domain data (nonpositive gauge, bad spec, ...)."""


class PseudoconvexityError(DomainError):
    """Strict pseudoconvexity witness failed; carries the offending point."""

    def __init__(self, point, eigenvalue):
        self.point = np.asarray(point)
        self.eigenvalue = float(eigenvalue)
        super().__init__(
            f"strict pseudoconvexity fails at z = {self.point.tolist()}: "
            f"smallest Levi eigenvalue {self.eigenvalue:.3e} <= 0"
        )


def ambient_coords(n):
    """Real coordinates of C^n: (x1, y1, ..., xn, yn)."""
    names = " ".join(f"x{i+1} y{i+1}" for i in range(n))
    return sp.symbols(names, real=True)


def _complex_coords(coords):
    return [coords[2 * i] + sp.I * coords[2 * i + 1] for i in range(len(coords) // 2)]


def _mu_sq_expression(n, kind, params, coords):
    """Exact mu^2 as a sympy expression in the ambient real coordinates."""
    zc = _complex_coords(coords)
    r2 = sum(c**2 for c in coords)
    if kind == "ball":
        return r2
    if kind == "ellipsoid":
        coeffs = params.get("coeffs")
        if coeffs is None:
            coeffs = [params.get("a", 1.0), params.get("b", 4.0)]
            coeffs += [1.0] * (n - len(coeffs))
        if len(coeffs) != n or any(c <= 0 for c in coeffs):
            raise DomainError(f"ellipsoid needs {n} positive coefficients")
        return sum(
            sp.nsimplify(c) * (coords[2 * i] ** 2 + coords[2 * i + 1] ** 2)
            for i, c in enumerate(coeffs)
        )
    if kind == "perturbed_ball":
        if n != 2:
            raise DomainError("perturbed_ball is defined for n = 2")
        eps = sp.nsimplify(params.get("eps", 0.05))
        qcoeffs = params.get("q", {2: 1.0})
        w = sp.expand(zc[0] * sp.conjugate(zc[1]))
        q = sum(
            sp.nsimplify(c) * sp.re(sp.expand(w**d)) / r2**d for d, c in qcoeffs.items()
        )
        return r2 * (1 + eps * q) ** 2
    raise DomainError(f"unknown domain kind {kind!r}")


def _chart_inclusion(n, chart, v_coords):
    """Ambient substitution for the chart point with homogeneous coordinate
    1 in slot `chart` and affine coordinates v elsewhere."""
    vals = []
    k = 0
    for i in range(n):
        if i == chart:
            vals.extend([sp.Integer(1), sp.Integer(0)])
        else:
            vals.extend([v_coords[2 * k], v_coords[2 * k + 1]])
            k += 1
    return vals


@dataclass(frozen=True)
class MinkowskiField:
    """Degree-1 homogeneous gauge of a complete circular domain.

    mu_sq_ambient is exact (sympy) for closed-form kinds and None for
    gridded input; m_sq_charts maps chart id to the exact chart expression
    m(v)^2 in the real base coordinates, or to sampled grid arrays.
    """

    n: int
    kind: str
    params: dict
    mu_sq_ambient: object
    m_sq_charts: dict
    smooth: bool = True
    grids: dict = field(default_factory=dict)

    @property
    def analytic(self):
        return self.mu_sq_ambient is not None

    def base_coords(self):
        return real_coords(2 * (self.n - 1)) if self.n == 2 else ambient_coords(self.n - 1)

    def m_sq_form(self, chart):
        """Chart function m^2 as a 0-form on the base chart."""
        return AnalyticForm.scalar(self.base_coords(), self.m_sq_charts[chart])

    def m(self, chart, v):
        """m at complex base points v (n = 2) or (v1, v2) pairs (n = 3)."""
        v = np.asarray(v, dtype=complex)
        form = self.m_sq_form(chart)
        if self.n == 2:
            pts = np.stack([v.real.ravel(), v.imag.ravel()], axis=1)
        else:
            pts = np.stack(
                [v[..., 0].real.ravel(), v[..., 0].imag.ravel(),
                 v[..., 1].real.ravel(), v[..., 1].imag.ravel()],
                axis=1,
            )
        vals = form.scalar_at(pts).real
        shape = v.shape if self.n == 2 else v.shape[:-1]
        return np.sqrt(vals).reshape(shape)

    def mu(self, z):
        """Gauge value at ambient points z, shape (..., n) complex."""
        z = np.asarray(z, dtype=complex)
        single = z.ndim == 1
        zz = z[None, :] if single else z.reshape(-1, self.n)
        chart, v, zeta = blowup_forward(zz)
        out = np.empty(len(zz))
        for c in np.unique(chart):
            sel = chart == c
            vv = v[sel, 0] if self.n == 2 else v[sel]
            out[sel] = np.abs(zeta[sel]) * self.m(int(c), vv)
        if single:
            return float(out[0])
        return out.reshape(z.shape[:-1])


@dataclass(frozen=True)
class ExhaustionField:
    """Parabolic exhaustion in blow-up coordinates, center at zeta = 0.

    For circular domains tau(v, zeta) = |zeta|^2 m(v)^2; the ambient
    expression (when available) is tau(z) = mu(z)^2.  r_bound is the radius
    of the sublevel set of interest.
    """

    n: int
    tau_ambient: object
    tau_charts: dict
    minkowski: MinkowskiField | None = None
    r_bound: float = 1.0

    @classmethod
    def from_ambient(cls, n, expr, r_bound=1.0):
        """Wrap an arbitrary smooth ambient exhaustion (no circularity)."""
        charts = {}
        coords = ambient_coords(n)
        if n == 2:
            x, y, s, t = real_coords(4)
            for chart in (0, 1):
                zeta = s + sp.I * t
                vv = x + sp.I * y
                z = [zeta, zeta * vv] if chart == 0 else [zeta * vv, zeta]
                subs = {}
                for i in range(n):
                    subs[coords[2 * i]] = sp.re(sp.expand(z[i]))
                    subs[coords[2 * i + 1]] = sp.im(sp.expand(z[i]))
                charts[chart] = sp.cancel(expr.subs(subs, simultaneous=True))
        return cls(n=n, tau_ambient=expr, tau_charts=charts, r_bound=r_bound)

    def chart_form(self, chart):
        """tau as a 0-form in the total chart coordinates (x, y, s, t)."""
        if self.n != 2:
            raise DomainError("chart forms are provided for n = 2 only")
        return AnalyticForm.scalar(real_coords(4), self.tau_charts[chart])

    def ambient_form(self):
        if self.tau_ambient is None:
            raise DomainError("no ambient expression for this exhaustion")
        return AnalyticForm.scalar(ambient_coords(self.n), self.tau_ambient)

    def value(self, chart, v, zeta):
        """tau at base points v and fiber values zeta (broadcastable)."""
        v = np.asarray(v, dtype=complex)
        zeta = np.asarray(zeta, dtype=complex)
        v, zeta = np.broadcast_arrays(v, zeta)
        pts = np.stack(
            [v.real.ravel(), v.imag.ravel(), zeta.real.ravel(), zeta.imag.ravel()],
            axis=1,
        )
        return self.chart_form(chart).scalar_at(pts).real.reshape(v.shape)

    def value_ambient(self, z):
        z = np.asarray(z, dtype=complex)
        flat = z.reshape(-1, self.n)
        pts = np.empty((len(flat), 2 * self.n))
        for i in range(self.n):
            pts[:, 2 * i] = flat[:, i].real
            pts[:, 2 * i + 1] = flat[:, i].imag
        return self.ambient_form().scalar_at(pts).real.reshape(z.shape[:-1])


@dataclass(frozen=True)
class IndicatrixField:
    """Homogeneous degree-1 gauge recovered from the center vanishing.

    kappa_charts holds chart samples kappa((1, v)) on the atlas base grid;
    kappa_sq_ambient, when present, is the exact expression validated by
    the radial fit.
    """

    n: int
    atlas: ChartAtlas
    kappa_charts: dict
    fit_residual: float
    kappa_sq_ambient: object = None

    def kappa(self, z):
        """Gauge value at ambient points by homogeneity + interpolation."""
        z = np.asarray(z, dtype=complex)
        if self.kappa_sq_ambient is not None:
            form = AnalyticForm.scalar(ambient_coords(self.n), self.kappa_sq_ambient)
            flat = z.reshape(-1, self.n)
            pts = np.empty((len(flat), 2 * self.n))
            for i in range(self.n):
                pts[:, 2 * i] = flat[:, i].real
                pts[:, 2 * i + 1] = flat[:, i].imag
            return np.sqrt(form.scalar_at(pts).real).reshape(z.shape[:-1])
        from scipy.interpolate import RegularGridInterpolator

        flat = z.reshape(-1, self.n)
        chart, v, zeta = blowup_forward(flat)
        out = np.empty(len(flat))
        for c in np.unique(chart):
            sel = chart == c
            interp = RegularGridInterpolator(
                (self.atlas.xs, self.atlas.xs), self.kappa_charts[int(c)]
            )
            vv = v[sel, 0]
            out[sel] = np.abs(zeta[sel]) * interp(
                np.stack([vv.real, vv.imag], axis=1)
            )
        return out.reshape(z.shape[:-1])

    def angular_factor(self, z_unit):
        """The quadratic coefficient h on the unit sphere: h = kappa^2."""
        return self.kappa(z_unit) ** 2


# ---------------------------------------------------------------------------
# construction and validation


def _levi_witness(tau_form, n, n_samples=60, seed=7, raise_on_fail=True):
    """Check ddc(tau) > 0 at random ambient sample points off the origin.

    Returns the smallest eigenvalue seen; raises PseudoconvexityError with
    the offending point when requested.
    """
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(n_samples, 2 * n))
    norms = np.linalg.norm(pts, axis=1)
    pts = pts[norms > 0.3]
    ddc = tau_form.dc().d()
    A = ddc.matrix_at(pts).real
    J = standard_j_matrix(2 * n)
    g = 0.5 * ((A @ J) + (A @ J).swapaxes(1, 2))
    eigs = np.linalg.eigvalsh(g)
    worst = int(np.argmin(eigs[:, 0]))
    min_eig = float(eigs[worst, 0])
    if min_eig <= 0 and raise_on_fail:
        zbad = pts[worst, 0::2] + 1j * pts[worst, 1::2]
        raise PseudoconvexityError(zbad, min_eig)
    return min_eig


def make_circular_domain(mu_spec, atlas=None):
    """Build (MinkowskiField, ExhaustionField) from a gauge description.

    mu_spec: dict with keys 'kind' in {ball, ellipsoid, perturbed_ball,
    grid}, 'n' (default 2), and kind parameters (a, b, eps, q, samples).
    Validates positivity of the chart gauge and the strict-pseudoconvexity
    witness at ambient sample points.
    """
    spec = dict(mu_spec)
    n = int(spec.pop("n", 2))
    kind = spec.pop("kind")
    if atlas is None:
        atlas = ChartAtlas(n=2, n_v=33) if n == 2 else ChartAtlas(n=3, n_v=9)

    if kind == "grid":
        return _make_gridded_domain(n, spec, atlas)

    coords = ambient_coords(n)
    mu_sq = sp.cancel(_mu_sq_expression(n, kind, spec, coords))
    base = real_coords(2 * (n - 1)) if n == 2 else ambient_coords(n - 1)
    m_sq = {}
    for chart in range(n) if n == 3 else (0, 1):
        vals = _chart_inclusion(n, chart, base)
        m_sq[chart] = sp.cancel(
            mu_sq.subs(dict(zip(coords, vals)), simultaneous=True)
        )
    mink = MinkowskiField(
        n=n, kind=kind, params=spec, mu_sq_ambient=mu_sq, m_sq_charts=m_sq
    )

    # positivity of the gauge on the chart grids
    for chart in ((0, 1) if n == 2 else (0,)):
        if n == 2:
            V = atlas.base_points(chart)
            m = mink.m(chart, V)
        else:
            V1, V2 = atlas.base_points3()
            m = mink.m(chart, np.stack([V1, V2], axis=-1))
        if np.min(m) <= 0 or not np.all(np.isfinite(m)):
            bad = np.unravel_index(np.argmin(m), m.shape)
            raise DomainError(f"gauge not positive at chart {chart} node {bad}")

    tau_form = AnalyticForm.scalar(coords, mu_sq)
    _levi_witness(tau_form, n)

    if n == 2:
        x, y, s, t = real_coords(4)
        tau_charts = {
            chart: sp.cancel((s**2 + t**2) * m_sq[chart].subs({base[0]: x, base[1]: y}))
            for chart in (0, 1)
        }
    else:
        x1, y1, x2, y2, s, t = real_coords(6)
        tau_charts = {
            0: sp.cancel(
                (s**2 + t**2)
                * m_sq[0].subs(
                    dict(zip(base, (x1, y1, x2, y2))), simultaneous=True
                )
            )
        }
    exh = ExhaustionField(
        n=n, tau_ambient=mu_sq, tau_charts=tau_charts, minkowski=mink
    )
    return mink, exh


def _make_gridded_domain(n, spec, atlas):
    if n != 2:
        raise DomainError("gridded gauges are supported for n = 2 only")
    samples = spec.get("samples")
    if samples is None:
        raise DomainError("grid kind needs 'samples': chart -> m array")
    m_raw = {c: np.asarray(arr, dtype=float) for c, arr in samples.items()}
    for c, arr in m_raw.items():
        if arr.shape != (atlas.n_v, atlas.n_v):
            raise DomainError(f"chart {c} samples must match the atlas grid")
        if np.min(arr) <= 0:
            bad = np.unravel_index(np.argmin(arr), arr.shape)
            raise DomainError(f"gauge not positive at chart {c} node {bad}")
    m_sq = {c: arr**2 for c, arr in m_raw.items()}
    # homogeneity across charts on the overlap band, within the FD budget
    from scipy.interpolate import RegularGridInterpolator

    V = atlas.base_points(0)
    band = (np.abs(V) > 0.85) & (np.abs(V) < 1.18)
    interp = RegularGridInterpolator((atlas.xs, atlas.xs), np.sqrt(m_sq[1]))
    W = 1.0 / V[band]
    m1 = interp(np.stack([W.real, W.imag], axis=1))
    m0 = np.sqrt(m_sq[0][band])
    mismatch = np.max(np.abs(m1 - m0 / np.abs(V[band])))
    if mismatch > 50 * atlas.h**2:
        raise DomainError(
            f"chart gauges violate homogeneity on the overlap: {mismatch:.3e}"
        )
    mink = MinkowskiField(
        n=2,
        kind="grid",
        params={},
        mu_sq_ambient=None,
        m_sq_charts={},
        smooth=False,
        grids=m_sq,
    )
    return mink, None


def indicatrix_from_exhaustion(exh, atlas=None, tol=1e-8):
    """Recover the center gauge kappa from the quadratic vanishing of tau.

    sqrt(tau) is fitted against |zeta| through the origin on the 4 smallest
    fiber radii of the atlas; the fit slope at base point v is kappa((1,v))
    (times the chart factor).  A residual above tol means tau does not
    vanish to exact second order at the center.
    """
    if atlas is None:
        atlas = ChartAtlas(n=2, n_v=33)
    if exh.n != 2:
        raise DomainError("indicatrix extraction is implemented for n = 2")
    radii = atlas.fiber.radii[:4]
    kappa_charts = {}
    worst = 0.0
    for chart in atlas.charts:
        V = atlas.base_points(chart)
        vals = np.stack(
            [np.sqrt(np.maximum(exh.value(chart, V, r + 0j), 0.0)) for r in radii],
            axis=-1,
        )  # (n_v, n_v, 4)
        denom = float(np.sum(radii**2))
        slope = np.tensordot(vals, radii, axes=([-1], [0])) / denom
        resid = vals - slope[..., None] * radii
        worst = max(worst, float(np.max(np.abs(resid))))
        kappa_charts[chart] = slope
    if worst > tol:
        raise DomainError(
            f"radial fit residual {worst:.3e} exceeds {tol:.1e}: "
            "exhaustion is not parabolic at the center"
        )
    kappa_sq = None
    if exh.minkowski is not None and exh.minkowski.analytic:
        kappa_sq = exh.minkowski.mu_sq_ambient
    return IndicatrixField(
        n=2,
        atlas=atlas,
        kappa_charts=kappa_charts,
        fit_residual=worst,
        kappa_sq_ambient=kappa_sq,
    )


# ---------------------------------------------------------------------------
# domain spec files


@dataclass(frozen=True)
class DomainSpec:
    """Parsed text description of a domain, with the raw text preserved so
    reports can echo it bit-exactly."""

    n: int
    kind: str
    params: dict
    n_v: int
    n_r: int
    n_theta: int
    raw: str

    def mu_spec(self):
        return {"n": self.n, "kind": self.kind, **self.params}

    def atlas(self):
        from .atlas import FiberGrid

        return ChartAtlas(
            n=self.n,
            n_v=self.n_v,
            fiber=FiberGrid(n_r=self.n_r, n_theta=self.n_theta),
        )


class SpecParseError(ValueError):
    def __init__(self, line_no, col, message):
        self.line_no = line_no
        self.col = col
        super().__init__(f"line {line_no}, column {col}: {message}")


_SPEC_KEYS = {"n", "mu.kind", "a", "b", "eps", "q", "N_v", "N_r", "N_theta"}


def parse_domain_spec(text):
    """Parse a 'key = value' domain spec.

    Recognized keys: n, mu.kind in {ball, ellipsoid, perturbed_ball, grid},
    a, b, eps, q (comma list of degree:coeff), N_v, N_r, N_theta.  Lines
    starting with '#' and blank lines are ignored.  Errors carry line and
    column positions.
    """
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise SpecParseError(line_no, 1, "expected 'key = value'")
        key, _, val = stripped.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _SPEC_KEYS:
            col = line.index(key) + 1
            raise SpecParseError(line_no, col, f"unknown key {key!r}")
        if key in values:
            raise SpecParseError(line_no, 1, f"duplicate key {key!r}")
        values[key] = (line_no, line, val)

    def take(key, default=None, cast=str):
        if key not in values:
            if default is None and key in ("mu.kind",):
                raise SpecParseError(0, 0, f"missing required key {key!r}")
            return default
        line_no, line, val = values[key]
        try:
            return cast(val)
        except ValueError:
            col = line.index(val) + 1 if val and val in line else 1
            raise SpecParseError(line_no, col, f"bad value for {key!r}: {val!r}")

    kind = take("mu.kind")
    n = take("n", 2, int)
    params = {}
    if kind == "ellipsoid":
        params["a"] = take("a", 1.0, float)
        params["b"] = take("b", 4.0, float)
    elif kind == "perturbed_ball":
        params["eps"] = take("eps", 0.05, float)
        qraw = take("q", "2:1")

        def parse_q(s):
            out = {}
            for item in s.split(","):
                d, _, c = item.partition(":")
                out[int(d.strip())] = float(c.strip())
            return out

        if isinstance(qraw, str):
            try:
                params["q"] = parse_q(qraw)
            except ValueError:
                line_no, line, val = values["q"]
                raise SpecParseError(line_no, 1, f"bad q list: {val!r}")
    elif kind not in ("ball", "grid"):
        line_no, line, val = values["mu.kind"]
        col = line.index(val) + 1
        raise SpecParseError(line_no, col, f"unknown mu.kind {val!r}")
    return DomainSpec(
        n=n,
        kind=kind,
        params=params,
        n_v=take("N_v", 33, int),
        n_r=take("N_r", 8, int),
        n_theta=take("N_theta", 16, int),
        raw=text,
    )
