"""Degenerate Monge-Ampere geometry of a parabolic exhaustion.

Off the center, a parabolic exhaustion tau determines a real vector field Z
by ddc tau(Z, JX) = dtau(X) for every X, a rank-2 distribution spanned by
(Z, JZ), and a complementary distribution H annihilated by ddc tau against
both.  The identities verified here characterize when tau solves the
homogeneous complex Monge-Ampere equation; their failure is a quantitative
obstruction, not an exception.

All analytic-path computations run in ambient real coordinates of C^n with
exact symbolic differentiation; the gridded path reuses the finite
difference form calculus on the blow-up charts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

from .domains import ExhaustionField, ambient_coords
from .exterior import standard_j_matrix
from .symforms import AnalyticForm


class FoliationError(ValueError):
    """Degenerate data where nondegeneracy is required (reports the node)."""


# ---------------------------------------------------------------------------
# the Monge-Ampere field


class ZFieldEvaluator:
    """Nodewise solver for the field Z of the defining linear condition.

    ddc tau(Z, J X) = dtau(X) for all X reads (A J)^T Z = dtau with A the
    antisymmetric coefficient matrix of ddc tau; the solution is unique
    wherever A is invertible.
    """

    def __init__(self, tau_form):
        self.tau = tau_form
        self.dim = tau_form.dim
        self.dtau = tau_form.d()
        self.ddc = tau_form.dc().d()
        self.J = standard_j_matrix(self.dim)

    def tau_at(self, pts):
        return self.tau.scalar_at(pts).real

    def matrices(self, pts):
        return self.ddc.matrix_at(pts).real

    def dtau_at(self, pts):
        return self.dtau.vector_at(pts).real

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        A = self.matrices(pts)
        rhs = self.dtau_at(pts)
        M = np.swapaxes(A @ self.J, -1, -2)
        dets = np.abs(np.linalg.det(M))
        if np.min(dets) < 1e-12:
            bad = int(np.argmin(dets))
            raise FoliationError(
                f"ddc tau degenerate at node {bad}: point {pts[bad].tolist()}"
            )
        return np.linalg.solve(M, rhs[..., None])[..., 0]

    def jacobian(self, pts, h=1e-5):
        """Spatial derivative DZ by central differences of the evaluator."""
        pts = np.asarray(pts, dtype=float)
        D = np.empty(pts.shape[:-1] + (self.dim, self.dim))
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = h
            D[..., :, k] = (self(pts + e) - self(pts - e)) / (2.0 * h)
        return D

    def flow_step(self, pts, dt, with_jacobian=False):
        """One RK4 step of the Z-flow, optionally with the variational 4x4
        (2n x 2n) Jacobian propagated alongside."""
        pts = np.asarray(pts, dtype=float)
        k1 = self(pts)
        k2 = self(pts + 0.5 * dt * k1)
        k3 = self(pts + 0.5 * dt * k2)
        k4 = self(pts + dt * k3)
        new = pts + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not with_jacobian:
            return new
        eye = np.broadcast_to(np.eye(self.dim), pts.shape[:-1] + (self.dim, self.dim))
        D1 = self.jacobian(pts)
        M1 = D1 @ eye
        D2 = self.jacobian(pts + 0.5 * dt * k1)
        M2 = D2 @ (eye + 0.5 * dt * M1)
        D3 = self.jacobian(pts + 0.5 * dt * k2)
        M3 = D3 @ (eye + 0.5 * dt * M2)
        D4 = self.jacobian(pts + dt * k3)
        M4 = D4 @ (eye + dt * M3)
        jac = eye + dt / 6.0 * (M1 + 2 * M2 + 2 * M3 + M4)
        return new, jac


@dataclass(frozen=True)
class FoliationFrame:
    """Nodewise frame data: the field Z, its rotation JZ, the normal
    distribution basis, and diagnostics of the defining condition."""

    points: np.ndarray  # (N, 2n) real ambient coordinates
    tau: np.ndarray  # (N,)
    Z: np.ndarray  # (N, 2n)
    JZ: np.ndarray  # (N, 2n)
    H: np.ndarray  # (N, 2n-2, 2n) basis of the normal distribution
    residual: float  # max residual of the defining linear condition
    condition: float  # worst condition number of the combined basis

    @property
    def dim(self):
        return self.points.shape[1]


def _ambient_points(n, n_samples, seed=11, lo=0.35, hi=1.0):
    """Random sample points in the spherical shell lo <= |z| <= hi."""
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(n_samples, 2 * n))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    radii = rng.uniform(lo, hi, size=(n_samples, 1))
    return raw * radii


def compute_Z(exh: ExhaustionField, points=None, n_samples=64, seed=11):
    """Solve the defining linear condition for Z at the given ambient
    points (random shell samples when omitted) and build the frame."""
    tau_form = exh.ambient_form()
    ev = ZFieldEvaluator(tau_form)
    dim = ev.dim
    if points is None:
        points = _ambient_points(exh.n, n_samples, seed=seed)
    points = np.asarray(points, dtype=float)
    Z = ev(points)
    JZ = Z @ ev.J.T
    A = ev.matrices(points)
    rhs = ev.dtau_at(points)
    resid = float(
        np.max(np.abs(np.einsum("ni,nij,jk->nk", Z, A, ev.J) - rhs))
    )
    # normal distribution: null space of the two rows Z^T A and (JZ)^T A
    rows = np.stack([np.einsum("ni,nij->nj", Z, A), np.einsum("ni,nij->nj", JZ, A)], axis=1)
    _, svals, Vt = np.linalg.svd(rows)
    X1 = Vt[:, -1, :]
    X2 = X1 @ ev.J.T
    if dim == 4:
        H = np.stack([X1, X2], axis=1)
    else:
        X3 = Vt[:, -2, :]
        # keep the basis J-invariant: re-orthogonalize X3 against J X1
        X3 = X3 - (np.sum(X3 * X2, axis=1, keepdims=True)) * X2
        X3 /= np.linalg.norm(X3, axis=1, keepdims=True)
        H = np.stack([X1, X2, X3, X3 @ ev.J.T], axis=1)
    combined = np.concatenate([Z[:, None, :], JZ[:, None, :], H], axis=1)
    cond = float(np.max(np.linalg.cond(combined)))
    if cond > 1e6:
        bad = int(np.argmax(np.linalg.cond(combined)))
        raise FoliationError(f"frame degenerates at node {bad}: cond {cond:.2e}")
    tau_vals = ev.tau_at(points)
    return FoliationFrame(
        points=points, tau=tau_vals, Z=Z, JZ=JZ, H=H, residual=resid, condition=cond
    )


# ---------------------------------------------------------------------------
# identity suite


def _lie_derivative_flow(ev: ZFieldEvaluator, pts, rel_step=5e-4):
    """Lie derivative of ddc tau along Z at pts, via a symmetric five-point
    stencil in flow time of the pulled-back form.

    The step is proportional to the local tau (the flow rescales tau by
    e^t); the five-point stencil keeps the finite-difference error near
    1e-14 so the 1e-10 identity budget is dominated by roundoff.
    """
    pts = np.asarray(pts, dtype=float)
    tau_loc = ev.tau_at(pts)
    hs = rel_step * np.minimum(tau_loc, 1.0)

    def pullback(sign_mult):
        out = np.empty((len(pts), ev.dim, ev.dim))
        for i, p in enumerate(pts):
            dt = sign_mult * hs[i]
            q, Dq = ev.flow_step(p[None, :], dt, with_jacobian=True)
            Aq = ev.matrices(q)[0]
            out[i] = Dq[0].T @ Aq @ Dq[0]
        return out

    g_p1, g_m1 = pullback(1.0), pullback(-1.0)
    g_p2, g_m2 = pullback(2.0), pullback(-2.0)
    num = -g_p2 + 8.0 * g_p1 - 8.0 * g_m1 + g_m2
    return num / (12.0 * hs)[:, None, None]


def verify_ma_identities(exh: ExhaustionField, n_samples=40, seed=13, tolerances=None):
    """Residual report for the exhaustion identity suite.

    Checks, at random ambient shell samples: the log-potential identity
    tau^2 ddc log tau = tau ddc tau - dtau ^ dc tau; the power rule
    ddc tau^k = k tau^(k-1) ddc tau + k(k-1) tau^(k-2) dtau ^ dc tau for
    k = 1..n-1; the top-degree degeneracy tau (ddc tau)^n =
    n dtau ^ dc tau ^ (ddc tau)^(n-1); the contraction normalization
    ddc tau(Z, JZ) = dtau(Z) = tau; and flow invariance of ddc tau along Z.
    Failures are report entries, never exceptions.
    """
    tol = {
        "log_potential": 1e-10,
        "power_rule": 1e-10,
        "top_degeneracy": 1e-8,
        "contraction": 1e-10,
        "flow_invariance": 1e-10,
    }
    if tolerances:
        tol.update(tolerances)
    n = exh.n
    tau = exh.ambient_form()
    pts = _ambient_points(n, n_samples, seed=seed)
    report = {}

    dtau = tau.d()
    dctau = tau.dc()
    ddctau = dctau.d()
    cross = dtau.wedge(dctau)
    log_tau = AnalyticForm.scalar(tau.coords, sp.log(tau.comps[()]))
    ddclog = log_tau.dc().d()

    tau_sq = AnalyticForm.scalar(tau.coords, tau.comps[()] ** 2)
    lhs = tau_sq.wedge(ddclog)
    rhs = tau.wedge(ddctau) - cross
    report["log_potential"] = (lhs - rhs).max_abs_at(pts)

    power = 0.0
    for k in range(1, n):
        tk = AnalyticForm.scalar(tau.coords, tau.comps[()] ** k)
        lhs_k = tk.dc().d()
        rhs_k = AnalyticForm.scalar(tau.coords, k * tau.comps[()] ** (k - 1)).wedge(
            ddctau
        ) + AnalyticForm.scalar(
            tau.coords, k * (k - 1) * tau.comps[()] ** max(k - 2, 0)
        ).wedge(cross)
        power = max(power, (lhs_k - rhs_k).max_abs_at(pts))
    report["power_rule"] = power

    top_lhs = tau.wedge(ddctau.wedge_power(n))
    top_rhs = cross.wedge(ddctau.wedge_power(n - 1)).scale(n)
    diff = top_lhs - top_rhs
    scale = max(top_lhs.max_abs_at(pts), 1e-30)
    report["top_degeneracy"] = diff.max_abs_at(pts) / scale

    ev = ZFieldEvaluator(tau)
    sub = pts[:20]
    Z = ev(sub)
    A = ev.matrices(sub)
    JZ = Z @ ev.J.T
    tau_vals = ev.tau_at(sub)
    c1 = np.einsum("ni,nij,nj->n", Z, A, JZ) - tau_vals
    c2 = np.sum(ev.dtau_at(sub) * Z, axis=1) - tau_vals
    report["contraction"] = float(max(np.max(np.abs(c1)), np.max(np.abs(c2))))

    lie = _lie_derivative_flow(ev, sub)
    report["flow_invariance"] = float(np.max(np.abs(lie - A)))

    report["pass"] = {key: report[key] < tol[key] for key in tol}
    report["tolerances"] = tol
    report["all_pass"] = all(report["pass"].values())
    return report


def gridded_top_degeneracy(exh: ExhaustionField, atlas, chart=0):
    """The top-degree identity residual on the finite-difference path.

    Returns the relative sup-residual over interior nodes of the chart.
    The expected behavior is second-order decay under grid refinement for
    circular inputs.
    """
    from .gridforms import GridForm

    n = exh.n
    if n != 2:
        raise FoliationError("the gridded path is implemented for n = 2")
    tau = GridForm.from_analytic(exh.chart_form(chart), atlas, "total", charts=(chart,))
    dtau = tau.d()
    dctau = tau.dc()
    ddctau = dctau.d()
    lhs = ddctau.wedge(ddctau).mul_scalar_field(tau)
    rhs = dtau.wedge(dctau).wedge(ddctau).scale(float(n))
    diff = lhs - rhs
    scale = max(lhs.max_abs(interior_margin=2), 1e-30)
    return diff.max_abs(interior_margin=2) / scale


# ---------------------------------------------------------------------------
# leaves


@dataclass(frozen=True)
class LeafDisc:
    """A sampled leaf through the center in direction v (chart affine
    coordinate).  ray holds the points at radii rho; the full disc follows
    from the rotation rule F(v, e^{i theta} zeta) = e^{i theta} F(v, zeta).
    """

    chart: int
    base_v: complex
    radii: np.ndarray  # (m,)
    ray: np.ndarray  # (m, n) complex points of C^n along theta = 0
    tau_residual: float  # max |tau(ray(rho)) - rho^2|

    def points(self, thetas):
        """Disc samples at all (rho, theta): shape (m, len(thetas), n)."""
        phase = np.exp(1j * np.asarray(thetas))
        return self.ray[:, None, :] * phase[None, :, None]


def _real_to_complex(pts):
    return pts[..., 0::2] + 1j * pts[..., 1::2]


def _complex_to_real(z):
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def trace_leaf(exh: ExhaustionField, base_v, chart=0, rho_start=0.05, rho_end=0.9,
               n_steps=200, tol=1e-8):
    """Integrate one leaf of the foliation outward from the center.

    The radial parametrization satisfies dX/drho = (2 / sqrt(tau)) Z(X),
    which makes tau(X(rho)) = rho^2 along the leaf; the seed at rho_start
    lies on the ray through the chart point (1, v) normalized by the gauge.
    """
    mink = exh.minkowski
    if mink is None:
        raise FoliationError("leaf tracing needs gauge data (circular input)")
    n = exh.n
    ev = ZFieldEvaluator(exh.ambient_form())
    vlist = np.atleast_1d(np.asarray(base_v, dtype=complex))
    direction = np.zeros((len(vlist), n), dtype=complex)
    for row, v in enumerate(vlist):
        parts = [v] if n == 2 else list(np.atleast_1d(v))
        parts.insert(chart, 1.0 + 0j)
        direction[row] = parts
    m0 = mink.mu(direction)
    seed = rho_start * direction / m0[:, None]

    def rhs(_rho, X):
        tau_vals = np.maximum(ev.tau_at(X), 1e-30)
        return 2.0 / np.sqrt(tau_vals)[:, None] * ev(X)

    rhos = np.linspace(rho_start, rho_end, n_steps + 1)
    X = _complex_to_real(seed)
    ray_real = [X.copy()]
    for i in range(n_steps):
        h = rhos[i + 1] - rhos[i]
        k1 = rhs(rhos[i], X)
        k2 = rhs(rhos[i] + h / 2, X + h / 2 * k1)
        k3 = rhs(rhos[i] + h / 2, X + h / 2 * k2)
        k4 = rhos[i] + h, X + h * k3
        k4 = rhs(*k4)
        X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ray_real.append(X.copy())
    ray_real = np.array(ray_real)  # (m, B, 2n)
    tau_along = ev.tau_at(ray_real.reshape(-1, 2 * n)).reshape(ray_real.shape[:2])
    resid = np.max(np.abs(tau_along - rhos[:, None] ** 2), axis=0)
    if np.max(tau_along) > (1.05 * max(rho_end, exh.r_bound)) ** 2:
        raise FoliationError("leaf escapes the sublevel domain")
    discs = []
    for b, v in enumerate(vlist):
        if resid[b] > tol:
            raise FoliationError(
                f"leaf through v = {v} violates tau = rho^2 by {resid[b]:.3e}"
            )
        discs.append(
            LeafDisc(
                chart=chart,
                base_v=complex(v),
                radii=rhos,
                ray=_real_to_complex(ray_real[:, b, :]),
                tau_residual=float(resid[b]),
            )
        )
    if np.isscalar(base_v) or np.asarray(base_v).ndim == 0:
        return discs[0]
    return discs


def reverse_leaf(exh: ExhaustionField, disc: LeafDisc, n_steps=200):
    """Integrate the leaf ODE inward from the outer ray sample and return
    the distance to the original seed (forward/backward consistency)."""
    ev = ZFieldEvaluator(exh.ambient_form())

    def rhs(X):
        tau_vals = np.maximum(ev.tau_at(X), 1e-30)
        return 2.0 / np.sqrt(tau_vals)[:, None] * ev(X)

    rhos = np.linspace(disc.radii[-1], disc.radii[0], n_steps + 1)
    X = _complex_to_real(disc.ray[-1][None, :])
    for i in range(n_steps):
        h = rhos[i + 1] - rhos[i]
        k1 = rhs(X)
        k2 = rhs(X + h / 2 * k1)
        k3 = rhs(X + h / 2 * k2)
        k4 = rhs(X + h * k3)
        X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    back = _real_to_complex(X)[0]
    return float(np.max(np.abs(back - disc.ray[0])))


def kernel_diagnostics(exh: ExhaustionField, frame: FoliationFrame):
    """Check that span(Z, JZ) is the kernel of ddc log tau and that the
    form is positive semidefinite on the normal distribution."""
    tau = exh.ambient_form()
    log_tau = AnalyticForm.scalar(tau.coords, sp.log(tau.comps[()]))
    A = log_tau.dc().d().matrix_at(frame.points).real
    J = standard_j_matrix(frame.dim)
    kernel_resid = float(
        max(
            np.max(np.abs(np.einsum("nij,nj->ni", A, frame.Z))),
            np.max(np.abs(np.einsum("nij,nj->ni", A, frame.JZ))),
        )
        / max(np.max(np.abs(A)), 1e-30)
    )
    g = 0.5 * ((A @ J) + np.swapaxes(A @ J, 1, 2))
    vals = np.einsum("nai,nij,naj->na", frame.H, g, frame.H)
    min_on_H = float(np.min(vals))
    return {"kernel_residual": kernel_resid, "min_normal_eigenvalue": min_on_H}
