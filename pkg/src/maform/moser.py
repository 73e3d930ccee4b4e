"""Normalization of circular domains at n = 2.

The circle-bundle geometry of a gauge mu on C^2 induces a curvature 2-form
on the base CP^1.  A Moser flow deforms the reference area form into that
curvature form, a horizontal lift raises the flow to the unit sphere, and a
phase correction aligns the connection data; the assembled map is
fiber-linear over the base, z = zeta(1, v) -> zeta * W(v), normalizes the
gauge, and is the input to deformation-tensor extraction.

Design notes: all flow fields are evaluated from exact chart expressions
(lambdified sympy), so spatial discretization error enters only through the
node sampling of results, not through the dynamics.  Derivative data that
downstream consumers need at grid nodes (dW, dlambda) is propagated by
variational Jacobians along the flows and stored exactly at the nodes,
never re-estimated by differencing splines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp
from scipy.interpolate import RectBivariateSpline

from .atlas import ChartAtlas, R_OUTER, blowup_forward
from .domains import MinkowskiField, ambient_coords
from .gridforms import GridForm, integrate_base
from .symforms import AnalyticForm, real_coords


class MoserError(ValueError):
    """Degenerate or inconsistent normalization data."""


FS_AREA = 4.0 * np.pi  # integral of the reference form under the convention


def _lambdify(expr, coords):
    # cancel collapses the rational expressions that chart algebra
    # produces (an order of magnitude fewer ops for perturbed gauges)
    return sp.lambdify(coords, sp.cancel(expr), modules="numpy", cse=True)


# ---------------------------------------------------------------------------
# curvature of the gauge circle bundle


@dataclass(frozen=True)
class ConnectionData:
    """Curvature 2-form data of a gauge on the base CP^1.

    w_charts: chart -> lambdified coefficient w(v) with omega = w dx^dy;
    alpha_charts: chart -> lambdified primitive 1-form components with
    omega - omega_o = d(alpha); all exact expressions retained.
    """

    mink: MinkowskiField
    atlas: ChartAtlas
    w_exprs: dict
    alpha_exprs: dict
    integral: float
    min_coefficient: float

    def w_fn(self, chart):
        return _lambdify(self.w_exprs[chart], real_coords(2))

    def alpha_fn(self, chart):
        x, y = real_coords(2)
        ax = self.alpha_exprs[chart].comps.get((0,), sp.Integer(0))
        ay = self.alpha_exprs[chart].comps.get((1,), sp.Integer(0))
        return _lambdify(ax, (x, y)), _lambdify(ay, (x, y))

    def omega_grid(self):
        x, y = real_coords(2)
        forms = {
            c: AnalyticForm((x, y), 2, {(0, 1): self.w_exprs[c]})
            for c in self.atlas.charts
        }
        return GridForm.from_analytic(forms, self.atlas, "base")


def _disk_integral(fn, n_r=80, n_theta=160):
    """Integral of a smooth density over the unit disk.

    Gauss-Legendre in radius and a trapezoid rule in angle (spectrally
    accurate for periodic integrands), so analytic integrands converge to
    machine precision well before the node counts used here.
    """
    nodes, weights = np.polynomial.legendre.leggauss(n_r)
    rs = 0.5 * (nodes + 1.0)
    wr = 0.5 * weights * rs
    th = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
    V = rs[:, None] * np.exp(1j * th)[None, :]
    vals = np.broadcast_to(np.asarray(fn(V.real, V.imag), dtype=float), V.shape)
    return float(np.sum(vals * wr[:, None]) * (2 * np.pi / n_theta))


def reference_coefficient():
    """Coefficient of the reference area form in an affine chart."""
    x, y = real_coords(2)
    return 4 / (1 + x**2 + y**2) ** 2


def curvature(mink: MinkowskiField, atlas=None) -> ConnectionData:
    """Curvature form of the gauge circle bundle on the base charts.

    omega = ddc log m^2 per chart; positivity of the coefficient witnesses
    strict pseudoconvexity of the gauge, and the chart-weighted integral
    must reproduce the reference total area (the two forms differ by an
    exact form).
    """
    if mink.n != 2:
        raise MoserError("curvature data is implemented for n = 2")
    if not mink.analytic:
        raise MoserError("curvature needs closed-form gauge charts")
    if atlas is None:
        atlas = ChartAtlas(n=2, n_v=33)
    x, y = real_coords(2)
    w_exprs = {}
    alpha_exprs = {}
    ref = reference_coefficient()
    m_o_sq = 1 + x**2 + y**2
    min_coeff = np.inf
    for chart in atlas.charts:
        m_sq = mink.m_sq_charts[chart]
        log_form = AnalyticForm.scalar((x, y), sp.log(m_sq))
        w = sp.cancel(log_form.dc().d().comps.get((0, 1), sp.Integer(0)))
        w_exprs[chart] = w
        # exact primitive of omega - omega_o: d of the conjugated
        # differential of the global potential log(m^2 / m_o^2)
        F = AnalyticForm.scalar((x, y), sp.log(m_sq / m_o_sq))
        alpha_exprs[chart] = F.dc()
        V = atlas.base_points(chart)
        vals = _lambdify(w, (x, y))(V.real, V.imag)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), V.shape)
        min_coeff = min(min_coeff, float(np.min(vals)))
    if min_coeff <= 0:
        raise MoserError(
            f"curvature coefficient not positive (min {min_coeff:.3e}): "
            "gauge is not strictly pseudoconvex"
        )
    # each chart's closed unit disk covers CP^1 exactly once (the two
    # boundary circles are identified), and the integrand is analytic, so
    # the high-order disk rule resolves the total to machine precision
    total = sum(
        _disk_integral(_lambdify(w_exprs[c], (x, y))) for c in atlas.charts
    )
    conn = ConnectionData(
        mink=mink,
        atlas=atlas,
        w_exprs=w_exprs,
        alpha_exprs=alpha_exprs,
        integral=total,
        min_coefficient=min_coeff,
    )
    if abs(conn.integral - FS_AREA) > 1e-6:
        raise MoserError(
            f"total curvature {conn.integral:.10f} deviates from the "
            f"reference {FS_AREA:.10f}: chart/weight inconsistency"
        )
    return conn


def horizontal_space(mink: MinkowskiField, u):
    """Real basis of ker d(mu~) /\\ ker(d(mu~) o J) at ambient points u.

    Returns (N, 2, 4) real vectors spanning the J-invariant plane.
    """
    coords = ambient_coords(2)
    mu_sq = AnalyticForm.scalar(coords, mink.mu_sq_ambient)
    grad = mu_sq.d().vector_at(_to_real(u)).real
    from .exterior import standard_j_matrix

    J = standard_j_matrix(4)
    rows = np.stack([grad, grad @ J], axis=1)  # d(mu^2), d(mu^2) o J
    _, _, Vt = np.linalg.svd(rows)
    k1 = Vt[:, -1, :]
    k2 = k1 @ J.T
    return np.stack([k1, k2], axis=1)


def _to_real(z):
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def _to_complex(x):
    return x[..., 0::2] + 1j * x[..., 1::2]


# ---------------------------------------------------------------------------
# Moser flow on the base


class MoserFieldEvaluator:
    """The time-dependent base vector field of the interpolation method.

    With omega_t = (1-t) omega_o + t omega and the exact primitive alpha
    of omega - omega_o, the field X_t solves interior(X_t, omega_t) =
    -alpha, which in a chart is X = (-alpha_y + i alpha_x) / w_t.
    """

    def __init__(self, conn: ConnectionData):
        self.conn = conn
        x, y = real_coords(2)
        self._wo = _lambdify(reference_coefficient(), (x, y))
        self._w = {c: conn.w_fn(c) for c in conn.atlas.charts}
        self._alpha = {c: conn.alpha_fn(c) for c in conn.atlas.charts}

    def __call__(self, t, chart, v):
        xs, ys = v.real, v.imag
        w = (1.0 - t) * self._wo(xs, ys) + t * self._w[chart](xs, ys)
        w = np.broadcast_to(np.asarray(w, dtype=float), v.shape)
        if np.min(w) <= 0:
            bad = int(np.argmin(w))
            raise MoserError(
                f"interpolated form degenerates at t={t:.3f}, chart {chart}, "
                f"v={v.ravel()[bad]:.4f}"
            )
        ax_fn, ay_fn = self._alpha[chart]
        ax = np.broadcast_to(np.asarray(ax_fn(xs, ys), dtype=float), v.shape)
        ay = np.broadcast_to(np.asarray(ay_fn(xs, ys), dtype=float), v.shape)
        return (-ay + 1j * ax) / w

    def velocity(self, t, v, chart_of):
        """Velocity for a batch with per-point chart labels."""
        out = np.empty(v.shape, dtype=complex)
        for c in np.unique(chart_of):
            sel = chart_of == c
            out[sel] = self(t, int(c), v[sel])
        return out


@dataclass(frozen=True)
class MoserFlowResult:
    """Endpoint diffeomorphism samples: per start chart, the end positions
    (represented in the same chart) and real 2x2 Jacobians."""

    conn: ConnectionData
    n_steps: int
    endpoints: dict  # chart -> complex (n_v, n_v)
    jacobians: dict  # chart -> real (n_v, n_v, 2, 2)
    endpoint_residual: float

    def psi(self, chart):
        """Bicubic spline evaluator of the endpoint map on the chart."""
        at = self.conn.atlas
        E = self.endpoints[chart]
        sr = RectBivariateSpline(at.xs, at.xs, E.real)
        si = RectBivariateSpline(at.xs, at.xs, E.imag)

        def ev(v):
            v = np.asarray(v, dtype=complex)
            return sr.ev(v.real, v.imag) + 1j * si.ev(v.real, v.imag)

        return ev


def _base_start_jacobian_identity(n):
    M = np.zeros((n, 2, 2))
    M[:, 0, 0] = 1.0
    M[:, 1, 1] = 1.0
    return M


def _field_jacobian(fn, t, chart_of, v, h=1e-6):
    """Real 2x2 spatial derivative of a complex-valued base field by
    central differences."""
    D = np.empty(v.shape + (2, 2))
    for k, delta in enumerate((h, 1j * h)):
        diff = (fn.velocity(t, v + delta, chart_of) - fn.velocity(t, v - delta, chart_of)) / (2 * h)
        D[..., 0, k] = diff.real
        D[..., 1, k] = diff.imag
    return D


def moser_flow(conn: ConnectionData, n_steps=200):
    """Integrate the interpolation flow from t = 0 to 1 on the base grids.

    Fixed-step RK4 on node trajectories with the variational 2x2 Jacobian
    propagated alongside; trajectories that wander far from the chart are
    handed to the opposite chart and converted back for storage.  The
    endpoint contract (the pullback of the target form equals the reference
    form) is measured at every node.
    """
    at = conn.atlas
    fn = MoserFieldEvaluator(conn)
    endpoints = {}
    jacobians = {}
    flipped_record = {}
    for chart in at.charts:
        V0 = at.base_points(chart).ravel()
        v = V0.copy()
        chart_of = np.full(v.shape, chart)
        M = _base_start_jacobian_identity(len(v))
        dt = 1.0 / n_steps
        for i in range(n_steps):
            t = i * dt
            k1 = fn.velocity(t, v, chart_of)
            k2 = fn.velocity(t + dt / 2, v + dt / 2 * k1, chart_of)
            k3 = fn.velocity(t + dt / 2, v + dt / 2 * k2, chart_of)
            k4 = fn.velocity(t + dt, v + dt * k3, chart_of)
            D1 = _field_jacobian(fn, t, chart_of, v)
            N1 = np.einsum("nij,njk->nik", D1, M)
            D2 = _field_jacobian(fn, t + dt / 2, chart_of, v + dt / 2 * k1)
            N2 = np.einsum("nij,njk->nik", D2, M + dt / 2 * N1)
            D3 = _field_jacobian(fn, t + dt / 2, chart_of, v + dt / 2 * k2)
            N3 = np.einsum("nij,njk->nik", D3, M + dt / 2 * N2)
            D4 = _field_jacobian(fn, t + dt, chart_of, v + dt * k3)
            N4 = np.einsum("nij,njk->nik", D4, M + dt * N3)
            v = v + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            M = M + dt / 6 * (N1 + 2 * N2 + 2 * N3 + N4)
            # hand far wanderers to the opposite chart (avoids infinity)
            far = np.abs(v) > 3.0
            if np.any(far):
                T = at.transition_jacobian(v[far])
                M[far] = np.einsum("nij,njk->nik", T, M[far])
                v[far] = 1.0 / v[far]
                chart_of[far] = 1 - chart_of[far]
        # represent endpoints in the start chart
        flipped = chart_of != chart
        if np.any(flipped):
            T = at.transition_jacobian(v[flipped])
            M[flipped] = np.einsum("nij,njk->nik", T, M[flipped])
            v[flipped] = 1.0 / v[flipped]
        flipped_record[chart] = int(np.sum(flipped))
        endpoints[chart] = v.reshape(at.n_v, at.n_v)
        jacobians[chart] = M.reshape(at.n_v, at.n_v, 2, 2)

    resid = 0.0
    x, y = real_coords(2)
    wo_fn = _lambdify(reference_coefficient(), (x, y))
    for chart in at.charts:
        V0 = at.base_points(chart)
        keep = np.abs(V0) <= R_OUTER
        E = endpoints[chart]
        w_end = np.broadcast_to(
            np.asarray(conn.w_fn(chart)(E.real, E.imag), dtype=float), E.shape
        )
        dets = np.linalg.det(jacobians[chart])
        pulled = w_end * dets
        resid = max(resid, float(np.max(np.abs(pulled - wo_fn(V0.real, V0.imag))[keep])))
    return MoserFlowResult(
        conn=conn,
        n_steps=n_steps,
        endpoints=endpoints,
        jacobians=jacobians,
        endpoint_residual=resid,
    )


# ---------------------------------------------------------------------------
# horizontal lift to the unit sphere


class LiftFieldEvaluator:
    """Horizontal lift of the base field to the reference circle bundle.

    At u in C^2 the lift lies in the complex line orthogonal to u (the
    reference horizontal space, tangent to the Euclidean spheres) and
    projects onto the base velocity; b = (-conj(u2), conj(u1)) spans that
    line and the projection derivative has the closed chart forms used
    below.
    """

    def __init__(self, base: MoserFieldEvaluator):
        self.base = base

    def __call__(self, t, u):
        u = np.asarray(u, dtype=complex)
        u1, u2 = u[:, 0], u[:, 1]
        use0 = np.abs(u1) >= np.abs(u2)
        v = np.where(use0, np.divide(u2, np.where(use0, u1, 1.0)),
                     np.divide(u1, np.where(use0, 1.0, u2)))
        chart_of = np.where(use0, 0, 1)
        X = self.base.velocity(t, v, chart_of)
        norm_sq = np.abs(u1) ** 2 + np.abs(u2) ** 2
        den = np.where(use0, u1, u2) ** 2
        dpi = np.where(use0, norm_sq, -norm_sq) / den
        c = X / dpi
        return np.stack([-c * np.conj(u2), c * np.conj(u1)], axis=1)

    def real_jacobian(self, t, u, h=1e-6):
        """Real 4x4 spatial derivative by central differences."""
        ur = _to_real(u)
        D = np.empty((len(u), 4, 4))
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            plus = self(t, _to_complex(ur + e))
            minus = self(t, _to_complex(ur - e))
            D[:, :, k] = _to_real((plus - minus) / (2 * h))
        return D


@dataclass(frozen=True)
class LiftResult:
    """Endpoint of the lifted flow at the reference-sphere start points
    over every base node, with base-derivative data."""

    s_hat: dict  # chart -> complex (n_v, n_v, 2), unit vectors
    ds_dx: dict  # chart -> complex (n_v, n_v, 2)
    ds_dy: dict
    sphere_drift: float

    def check_projection(self, flow: MoserFlowResult, chart=0):
        """Max distance between the projected lift endpoints and the base
        endpoints."""
        s = self.s_hat[chart]
        proj = s[..., 1] / s[..., 0]
        return float(np.max(np.abs(proj - flow.endpoints[chart])))


def _sphere_starts(atlas, chart):
    V = atlas.base_points(chart)
    m_o = np.sqrt(1.0 + np.abs(V) ** 2)
    ones = np.ones_like(V)
    p = np.stack([ones, V] if chart == 0 else [V, ones], axis=-1)
    u0 = p / m_o[..., None]
    # derivative of the start point in the base coordinates
    e = np.zeros_like(p)
    e[..., 1 if chart == 0 else 0] = 1.0
    dm_dx = V.real / m_o
    dm_dy = V.imag / m_o
    du_dx = e / m_o[..., None] - p * (dm_dx / m_o**2)[..., None]
    du_dy = 1j * e / m_o[..., None] - p * (dm_dy / m_o**2)[..., None]
    return u0, du_dx, du_dy


def horizontal_lift(flow: MoserFlowResult, n_steps=None):
    """Integrate the lifted flow on the unit sphere over every base node.

    The state is (u, M) with M the derivative of u with respect to the
    base start coordinates; both use the same RK4 time grid as the base
    flow.  A projection back to the sphere is applied each step and the
    accumulated drift is recorded.
    """
    if n_steps is None:
        n_steps = flow.n_steps
    at = flow.conn.atlas
    lift = LiftFieldEvaluator(MoserFieldEvaluator(flow.conn))
    s_hat, ds_dx, ds_dy = {}, {}, {}
    drift = 0.0
    dt = 1.0 / n_steps
    for chart in at.charts:
        u0, du_dx, du_dy = _sphere_starts(at, chart)
        shape = u0.shape[:2]
        u = u0.reshape(-1, 2)
        M = np.stack(
            [_to_real(du_dx.reshape(-1, 2)), _to_real(du_dy.reshape(-1, 2))], axis=-1
        )  # (N, 4, 2)
        for i in range(n_steps):
            t = i * dt
            k1 = lift(t, u)
            k2 = lift(t + dt / 2, u + dt / 2 * k1)
            k3 = lift(t + dt / 2, u + dt / 2 * k2)
            k4 = lift(t + dt, u + dt * k3)
            D1 = lift.real_jacobian(t, u)
            N1 = np.einsum("nij,njk->nik", D1, M)
            D2 = lift.real_jacobian(t + dt / 2, u + dt / 2 * k1)
            N2 = np.einsum("nij,njk->nik", D2, M + dt / 2 * N1)
            D3 = lift.real_jacobian(t + dt / 2, u + dt / 2 * k2)
            N3 = np.einsum("nij,njk->nik", D3, M + dt / 2 * N2)
            D4 = lift.real_jacobian(t + dt, u + dt * k3)
            N4 = np.einsum("nij,njk->nik", D4, M + dt * N3)
            u = u + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            M = M + dt / 6 * (N1 + 2 * N2 + 2 * N3 + N4)
            norms = np.linalg.norm(u, axis=1)
            drift = max(drift, float(np.max(np.abs(norms - 1.0))))
            u = u / norms[:, None]
        s_hat[chart] = u.reshape(shape + (2,))
        Mc = _to_complex(np.moveaxis(M, -1, 1))  # (N, 2 axes, 2 comps)
        ds_dx[chart] = Mc[:, 0, :].reshape(shape + (2,))
        ds_dy[chart] = Mc[:, 1, :].reshape(shape + (2,))
    return LiftResult(s_hat=s_hat, ds_dx=ds_dx, ds_dy=ds_dy, sphere_drift=drift)


# ---------------------------------------------------------------------------
# phase correction


def _gauge_grad_fn(mink: MinkowskiField):
    coords = ambient_coords(2)
    d = AnalyticForm.scalar(coords, mink.mu_sq_ambient).d()

    def grad(u):
        return d.vector_at(_to_real(np.asarray(u, dtype=complex))).real

    return grad


def measure_connection_mismatch(mink, atlas, chart, W, dWx, dWy):
    """Phase defect 1-form at the chart nodes of a fiber-linear map.

    For a map z = zeta p(v) -> zeta W(v), the reference horizontal vectors
    at z = p(v) push to dphi(h); their component along the fiber phase
    direction i W, relative to the base displacement dpi(h), is the 1-form
    nu whose exact potential corrects the fiber phase.  Returns nu with
    shape (n_v, n_v, 2).
    """
    V = atlas.base_points(chart)
    shape = V.shape
    ones = np.ones_like(V)
    if chart == 0:
        h1 = np.stack([-np.conj(V), ones], axis=-1)
    else:
        h1 = np.stack([ones, -np.conj(V)], axis=-1)
    flatW = W.reshape(-1, 2)
    # basis of the target splitting at u' = W(v): gauge-horizontal plane,
    # radial direction W, phase direction iW
    K = horizontal_space(mink, flatW)
    cols = np.empty((len(flatW), 4, 4))
    cols[:, :, 0] = K[:, 0, :]
    cols[:, :, 1] = K[:, 1, :]
    cols[:, :, 2] = _to_real(flatW)
    cols[:, :, 3] = _to_real(1j * flatW)
    s = np.empty(shape + (2,))
    Y = np.empty(shape + (2,), dtype=complex)
    for j, h in enumerate((h1, 1j * h1)):
        dzeta = h[..., 0] if chart == 0 else h[..., 1]
        if chart == 0:
            dv = h[..., 1] - V * h[..., 0]
        else:
            dv = h[..., 0] - V * h[..., 1]
        dphi = (
            dzeta[..., None] * W
            + dv.real[..., None] * dWx
            + dv.imag[..., None] * dWy
        )
        coeff = np.linalg.solve(cols, _to_real(dphi.reshape(-1, 2))[..., None])[..., 0]
        s[..., j] = coeff[:, 3].reshape(shape)
        Y[..., j] = dv
    Ymat = np.empty(shape + (2, 2))
    Ymat[..., 0, 0] = Y[..., 0].real
    Ymat[..., 0, 1] = Y[..., 0].imag
    Ymat[..., 1, 0] = Y[..., 1].real
    Ymat[..., 1, 1] = Y[..., 1].imag
    return np.linalg.solve(Ymat, s[..., None])[..., 0]


def _nu_splines(atlas, nu_chart):
    return (
        RectBivariateSpline(atlas.xs, atlas.xs, nu_chart[..., 0]),
        RectBivariateSpline(atlas.xs, atlas.xs, nu_chart[..., 1]),
    )


def _segment_integral(splines, start, ends, n_quad=24):
    """Line integral of the splined 1-form along straight segments."""
    sx, sy = splines
    nodes, weights = np.polynomial.legendre.leggauss(n_quad)
    ts = 0.5 * (nodes + 1.0)
    ws = 0.5 * weights
    ends = np.asarray(ends, dtype=complex)
    out = np.zeros(ends.shape)
    delta = ends - start
    for t, w in zip(ts, ws):
        p = start + t * delta
        vx = sx.ev(p.real, p.imag)
        vy = sy.ev(p.real, p.imag)
        out += w * (vx * delta.real + vy * delta.imag)
    return out


def circulation_residual(atlas, nu_chart, side=0.3, n_loops=16, seed=5):
    """Closedness probe: circulations of the splined 1-form around square
    loops, normalized by the loop area."""
    spl = _nu_splines(atlas, nu_chart)
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-0.7, 0.7, size=(n_loops, 2))
    worst = 0.0
    for cx, cy in centers:
        c = cx + 1j * cy
        corners = [
            c + side / 2 * (1 + 1j), c + side / 2 * (-1 + 1j),
            c + side / 2 * (-1 - 1j), c + side / 2 * (1 - 1j),
        ]
        total = 0.0
        for a, b in zip(corners, corners[1:] + corners[:1]):
            total += float(_segment_integral(spl, a, np.array([b]))[0])
        worst = max(worst, abs(total) / side**2)
    return worst


def phase_correction(mink, atlas, nu):
    """Integrate the phase defect into a potential on both charts.

    lambda is gauged to vanish at the chart-0 origin and integrated along
    straight segments (chart 1 from the shared point v = w = 1); the
    overlap mismatch between the two chart potentials is returned as the
    path-dependence diagnostic.
    """
    spl0 = _nu_splines(atlas, nu[0])
    V0 = atlas.base_points(0)
    lam0 = -_segment_integral(spl0, 0.0 + 0.0j, V0)
    base1 = 1.0 + 0.0j
    lam_base = -float(_segment_integral(spl0, 0.0 + 0.0j, np.array([base1]))[0])
    spl1 = _nu_splines(atlas, nu[1])
    V1 = atlas.base_points(1)
    lam1 = lam_base - _segment_integral(spl1, base1, V1)
    # overlap consistency: evaluate the chart-1 potential at 1/v for
    # chart-0 nodes in the annulus and compare
    band = (np.abs(V0) > 0.85) & (np.abs(V0) < 1.18)
    other = lam_base - _segment_integral(spl1, base1, 1.0 / V0[band])
    mismatch = float(np.max(np.abs(other - lam0[band]))) if np.any(band) else 0.0
    return {0: lam0, 1: lam1}, mismatch


# ---------------------------------------------------------------------------
# assembly


@dataclass(frozen=True)
class NormalizingMap:
    """Fiber-linear normalizing diffeomorphism z = zeta p(v) -> zeta W(v).

    W and its base derivatives are stored exactly at the grid nodes
    (flow-accurate); spline evaluators serve off-node queries, with the
    gauge normalization re-imposed at evaluation time so the normalization
    contract holds to machine precision everywhere.
    """

    mink: MinkowskiField
    atlas: ChartAtlas
    W: dict  # chart -> complex (n_v, n_v, 2)
    dWx: dict
    dWy: dict
    lam: dict  # chart -> real (n_v, n_v)
    dlam: dict  # chart -> real (n_v, n_v, 2), exact node samples
    psi_endpoints: dict
    residuals: dict
    _splines: dict = field(default_factory=dict, compare=False)

    def _spline(self, chart):
        if chart not in self._splines:
            at = self.atlas
            comps = []
            for i in range(2):
                comps.append(
                    (
                        RectBivariateSpline(at.xs, at.xs, self.W[chart][..., i].real),
                        RectBivariateSpline(at.xs, at.xs, self.W[chart][..., i].imag),
                    )
                )
            self._splines[chart] = comps
        return self._splines[chart]

    def direction(self, chart, v, dx=0, dy=0):
        """Splined W (optionally a partial derivative), shape (..., 2)."""
        v = np.asarray(v, dtype=complex)
        comps = self._spline(chart)
        out = np.empty(v.shape + (2,), dtype=complex)
        for i, (sr, si) in enumerate(comps):
            out[..., i] = sr.ev(v.real, v.imag, dx=dx, dy=dy) + 1j * si.ev(
                v.real, v.imag, dx=dx, dy=dy
            )
        return out

    def fiber_vector(self, chart, v):
        """The normalized fiber direction W(v) with mu(W) = m_o(v) exact."""
        v = np.asarray(v, dtype=complex)
        raw = self.direction(chart, v)
        mu = self.mink.mu(raw.reshape(-1, 2)).reshape(v.shape)
        m_o = np.sqrt(1.0 + np.abs(v) ** 2)
        return raw * (m_o / mu)[..., None]

    def forward(self, z):
        """Map ambient points of the reference side, shape (..., 2)."""
        z = np.asarray(z, dtype=complex)
        flat = z.reshape(-1, 2)
        chart, v, zeta = blowup_forward(flat)
        out = np.empty_like(flat)
        for c in np.unique(chart):
            sel = chart == c
            out[sel] = zeta[sel, None] * self.fiber_vector(int(c), v[sel, 0])
        return out.reshape(z.shape)

    def _seed_inverse(self, target):
        """Initial (chart, v) per target from the nearest node image."""
        q = target / np.linalg.norm(target, axis=1)[:, None]
        best_d = np.full(len(target), np.inf)
        chart = np.zeros(len(target), dtype=int)
        v = np.zeros(len(target), dtype=complex)
        for c in (0, 1):
            V = self.atlas.base_points(c)
            inner = np.abs(V) <= 1.05
            nodes = self.W[c][inner]
            p = nodes / np.linalg.norm(nodes, axis=1)[:, None]
            # chordal distance on the base line through each node image
            overlap = np.abs(q @ np.conj(p).T)
            d = np.sqrt(np.maximum(0.0, 1.0 - overlap**2))
            idx = np.argmin(d, axis=1)
            dmin = d[np.arange(len(target)), idx]
            better = dmin < best_d
            best_d[better] = dmin[better]
            chart[better] = c
            v[better] = V[inner][idx[better]]
        return chart, v

    def inverse(self, zp, tol=1e-12, max_iter=60):
        """Invert the map by a Newton iteration on the base coordinate.

        Seeds from the nearest grid-node image and hops charts whenever an
        iterate drifts out of the chart box, so the splines are never
        evaluated in extrapolation territory.
        """
        zp = np.asarray(zp, dtype=complex)
        flat = zp.reshape(-1, 2)
        n = len(flat)
        chart, v = self._seed_inverse(flat)
        active = np.ones(n, dtype=bool)
        scale = np.max(np.abs(flat), axis=1)
        for _ in range(max_iter):
            if not np.any(active):
                break
            for c in (0, 1):
                sel = np.where(active & (chart == c))[0]
                if len(sel) == 0:
                    continue
                vc = v[sel]
                target = flat[sel]
                Wv = self.direction(c, vc)
                F = Wv[:, 1] * target[:, 0] - Wv[:, 0] * target[:, 1]
                done = np.abs(F) < tol * scale[sel]
                active[sel[done]] = False
                go = ~done
                if not np.any(go):
                    continue
                sub = sel[go]
                vc, target, F = vc[go], target[go], F[go]
                Wx = self.direction(c, vc, dx=1)
                Wy = self.direction(c, vc, dy=1)
                Fx = Wx[:, 1] * target[:, 0] - Wx[:, 0] * target[:, 1]
                Fy = Wy[:, 1] * target[:, 0] - Wy[:, 0] * target[:, 1]
                A = np.empty((len(vc), 2, 2))
                A[:, 0, 0] = Fx.real
                A[:, 0, 1] = Fy.real
                A[:, 1, 0] = Fx.imag
                A[:, 1, 1] = Fy.imag
                dets = np.abs(np.linalg.det(A))
                if np.min(dets) < 1e-13 * np.max(scale[sub]) ** 2:
                    bad = int(np.argmin(dets))
                    raise MoserError(
                        f"inverse Newton stalls near v = {vc[bad]:.4f} (chart {c})"
                    )
                rhs = np.stack([F.real, F.imag], axis=1)
                step = np.linalg.solve(A, rhs[..., None])[..., 0]
                vn = vc - (step[:, 0] + 1j * step[:, 1])
                hop = np.abs(vn) > 1.1
                vn[hop] = 1.0 / vn[hop]
                v[sub] = vn
                chart[sub] = np.where(hop, 1 - c, c)
        if np.any(active):
            raise MoserError("inverse Newton failed to converge")
        # polish in the chart the forward evaluation would pick (|v| <= 1),
        # since the two chart splines agree only to interpolation error on
        # the overlap and the round trip must close in a single chart
        flip = np.abs(v) > 1.0
        v[flip] = 1.0 / v[flip]
        chart[flip] = 1 - chart[flip]
        for c in (0, 1):
            sel = np.where(flip & (chart == c))[0]
            if len(sel) == 0:
                continue
            vc = v[sel]
            target = flat[sel]
            for _ in range(8):
                Wv = self.direction(c, vc)
                F = Wv[:, 1] * target[:, 0] - Wv[:, 0] * target[:, 1]
                if np.max(np.abs(F)) < tol * np.max(scale[sel]):
                    break
                Wx = self.direction(c, vc, dx=1)
                Wy = self.direction(c, vc, dy=1)
                Fx = Wx[:, 1] * target[:, 0] - Wx[:, 0] * target[:, 1]
                Fy = Wy[:, 1] * target[:, 0] - Wy[:, 0] * target[:, 1]
                A = np.empty((len(vc), 2, 2))
                A[:, 0, 0] = Fx.real
                A[:, 0, 1] = Fy.real
                A[:, 1, 0] = Fx.imag
                A[:, 1, 1] = Fy.imag
                rhs = np.stack([F.real, F.imag], axis=1)
                step = np.linalg.solve(A, rhs[..., None])[..., 0]
                vc = vc - (step[:, 0] + 1j * step[:, 1])
            v[sel] = vc
        out = np.empty_like(flat)
        for c in (0, 1):
            sel = chart == c
            if not np.any(sel):
                continue
            vc = v[sel]
            target = flat[sel]
            Wn = self.fiber_vector(c, vc)
            zeta = np.where(
                np.abs(Wn[:, 0]) >= np.abs(Wn[:, 1]),
                target[:, 0] / Wn[:, 0],
                target[:, 1] / Wn[:, 1],
            )
            res = np.empty((len(vc), 2), dtype=complex)
            if c == 0:
                res[:, 0] = zeta
                res[:, 1] = zeta * vc
            else:
                res[:, 0] = zeta * vc
                res[:, 1] = zeta
            out[sel] = res
        return out.reshape(zp.shape)


def assemble(flow: MoserFlowResult, lift: LiftResult) -> NormalizingMap:
    """Combine base flow, lift, and phase correction into the final map.

    Builds W_raw = m_o * s_hat / mu(s_hat) per chart with flow-accurate
    derivatives, measures the phase defect, integrates and applies the
    correction (keeping the defect samples as the exact differential of
    the phase), and re-measures the defect as the (iii) residual.
    """
    conn = flow.conn
    mink = conn.mink
    at = conn.atlas
    grad_fn = _gauge_grad_fn(mink)

    W_raw, dWx_raw, dWy_raw = {}, {}, {}
    for chart in at.charts:
        V = at.base_points(chart)
        m_o = np.sqrt(1.0 + np.abs(V) ** 2)
        dm_dx = (V.real / m_o)[..., None]
        dm_dy = (V.imag / m_o)[..., None]
        s = lift.s_hat[chart]
        sx = lift.ds_dx[chart]
        sy = lift.ds_dy[chart]
        flat_s = s.reshape(-1, 2)
        mu = mink.mu(flat_s).reshape(V.shape)
        grad = grad_fn(flat_s)  # gradient of mu^2
        dmu_x = (np.sum(grad * _to_real(sx.reshape(-1, 2)), axis=1) / (2 * mu.ravel())).reshape(V.shape)
        dmu_y = (np.sum(grad * _to_real(sy.reshape(-1, 2)), axis=1) / (2 * mu.ravel())).reshape(V.shape)
        mo3 = m_o[..., None]
        mu3 = mu[..., None]
        W_raw[chart] = mo3 * s / mu3
        dWx_raw[chart] = dm_dx * s / mu3 + mo3 * sx / mu3 - mo3 * s * (dmu_x / mu**2)[..., None]
        dWy_raw[chart] = dm_dy * s / mu3 + mo3 * sy / mu3 - mo3 * s * (dmu_y / mu**2)[..., None]

    nu = {
        c: measure_connection_mismatch(mink, at, c, W_raw[c], dWx_raw[c], dWy_raw[c])
        for c in at.charts
    }
    closedness = max(circulation_residual(at, nu[c]) for c in at.charts)
    lam, path_mismatch = phase_correction(mink, at, nu)
    dlam = {c: -nu[c] for c in at.charts}

    W, dWx, dWy = {}, {}, {}
    for c in at.charts:
        phase = np.exp(1j * lam[c])[..., None]
        W[c] = phase * W_raw[c]
        dWx[c] = phase * (dWx_raw[c] + 1j * dlam[c][..., 0][..., None] * W_raw[c])
        dWy[c] = phase * (dWy_raw[c] + 1j * dlam[c][..., 1][..., None] * W_raw[c])

    nu_corr = max(
        float(np.max(np.abs(measure_connection_mismatch(mink, at, c, W[c], dWx[c], dWy[c]))))
        for c in at.charts
    )

    # gauge normalization at the stored nodes (exact up to lift drift)
    gauge_resid = 0.0
    for c in at.charts:
        V = at.base_points(c)
        m_o = np.sqrt(1.0 + np.abs(V) ** 2)
        mu = mink.mu(W[c].reshape(-1, 2)).reshape(V.shape)
        gauge_resid = max(gauge_resid, float(np.max(np.abs(mu - m_o))))

    residuals = {
        "endpoint": flow.endpoint_residual,
        "sphere_drift": lift.sphere_drift,
        "closedness": closedness,
        "phase_path_mismatch": path_mismatch,
        "connection_mismatch_raw": max(
            float(np.max(np.abs(nu[c]))) for c in at.charts
        ),
        "connection_mismatch": nu_corr,
        "gauge_normalization": gauge_resid,
    }
    return NormalizingMap(
        mink=mink,
        atlas=at,
        W=W,
        dWx=dWx,
        dWy=dWy,
        lam=lam,
        dlam=dlam,
        psi_endpoints=flow.endpoints,
        residuals=residuals,
    )


def normalize_domain(mink: MinkowskiField, atlas=None, n_steps=200) -> NormalizingMap:
    """Full normalization pipeline for a closed-form gauge."""
    conn = curvature(mink, atlas)
    flow = moser_flow(conn, n_steps=n_steps)
    lifted = horizontal_lift(flow)
    return assemble(flow, lifted)
