"""Classification suite for deformation tensors and indicatrix frames.

Circularity and ball verdicts from fiber-mode norms, the rotational
invariance test, the scaling iteration with per-mode decay-rate fits,
and unitary boundary frames of the indicatrix.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import sympy as sp

from .deformation import contract, rotate
from .domains import ambient_coords
from .exterior import standard_j_matrix


class CharacterizationError(ValueError):
    """Raised for resonant angles, bad ratios, or degenerate metrics."""


# ---------------------------------------------------------------------------
# mode-norm verdicts


def circularity_defect(tensor):
    """Total operator norm of all positive fiber modes."""
    return float(np.sum(tensor.mode_norms()[1:]))


def is_circular(tensor, tol=1e-5):
    """A tensor with only the fiber-constant mode describes a domain whose
    normal form is reached by a fiber-linear map."""
    return circularity_defect(tensor) < tol


def ball_defect(tensor):
    """Total operator norm of the tensor, mode 0 included."""
    return float(np.sum(tensor.mode_norms()))


def is_ball(tensor, tol=1e-8):
    """The zero tensor leaves the standard structure untouched."""
    return ball_defect(tensor) < tol


# ---------------------------------------------------------------------------
# rotational test


def _resonance_check(theta, k_max, eps=1e-8):
    for k in range(1, k_max + 1):
        if abs(np.exp(1j * k * theta) - 1.0) < eps:
            raise CharacterizationError(
                f"angle {theta} is resonant at mode {k}: the rotation "
                "fixes that mode and the test is uninformative"
            )


def rotational_test(tensor, theta, tol=1e-5):
    """Invariance of the tensor under the fiber rotation by theta.

    Mode k picks up the factor e^{ik theta}, so at a non-resonant angle
    the invariance defect recovers the positive-mode norms exactly; the
    verdict therefore agrees with the circularity verdict, and that
    agreement is asserted rather than assumed.
    """
    if tensor.k_max >= 1:
        _resonance_check(theta, tensor.k_max)
    rotated = rotate(tensor, theta)
    diff = replace(
        tensor,
        modes={c: rotated.modes[c] - tensor.modes[c] for c in tensor.charts},
        components={},
        field_fn=None,
    )
    moved = diff.mode_norms()
    defect = 0.0
    for k in range(1, tensor.k_max + 1):
        # the raw motion is |1 - e^{ik theta}| times the mode size; divide
        # the factor back out so the defect is angle independent
        defect += moved[k] / abs(np.exp(1j * k * theta) - 1.0)
    verdict = defect < tol
    assert verdict == is_circular(tensor, tol)
    return verdict


# ---------------------------------------------------------------------------
# scaling test


@dataclass
class ClassificationReport:
    """Flat verdict block plus per-mode and per-iteration tables."""

    verdicts: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    mode_norms: np.ndarray = None
    trace: list = field(default_factory=list)
    slopes: np.ndarray = None
    expected_slopes: np.ndarray = None
    tolerances: dict = field(default_factory=dict)

    def lines(self):
        out = []
        for key in sorted(self.verdicts):
            out.append(f"{key}: {'pass' if self.verdicts[key] else 'fail'}")
        for key in sorted(self.values):
            out.append(f"{key}: {self.values[key]:.12e}")
        for key in sorted(self.tolerances):
            out.append(f"tol_{key}: {self.tolerances[key]:.3e}")
        if self.mode_norms is not None:
            out.append("# mode  norm")
            for k, v in enumerate(self.mode_norms):
                out.append(f"{k:4d}  {v:.12e}")
        if self.trace:
            k_max = len(self.trace[0]) - 1
            header = "# iter " + " ".join(f"mode{k}" for k in range(k_max + 1))
            out.append(header)
            for i, row in enumerate(self.trace):
                out.append(
                    f"{i:6d} " + " ".join(f"{v:.12e}" for v in row)
                )
        if self.slopes is not None:
            out.append("# mode  slope  expected")
            for j, (s, e) in enumerate(zip(self.slopes, self.expected_slopes)):
                out.append(f"{j:4d}  {s:.12e}  {e:.12e}")
        return out

    def text(self):
        return "\n".join(self.lines()) + "\n"


def scaling_test(tensor, k, iters=20, slope_tol=1e-6):
    """Iterate the fiber contraction and fit the per-mode decay rates.

    Mode j decays by the factor k^j per iteration; a log-linear fit of the
    recorded norms recovers the slope j*log k, and the fiber-constant mode
    is a fixed point, so the iteration limit is the mode-0 tensor.
    """
    if not (0 < k < 1):
        raise CharacterizationError("contraction ratio must lie in (0, 1)")
    base = tensor.mode_norms()
    trace = [base]
    it = tensor
    for _ in range(iters):
        it = contract(it, k)
        trace.append(it.mode_norms())
    arr = np.stack(trace)  # (iters+1, k_max+1)
    slopes = np.zeros(tensor.k_max + 1)
    expected = np.arange(tensor.k_max + 1) * np.log(k)
    idx = np.arange(iters + 1)
    for j in range(tensor.k_max + 1):
        col = arr[:, j]
        if base[j] <= 0:
            slopes[j] = expected[j]  # empty mode: decay rate is unobservable
            continue
        logs = np.log(col)
        slopes[j] = np.polyfit(idx, logs, 1)[0]
    slope_err = float(np.max(np.abs(slopes - expected)))
    mode0_drift = max(
        float(np.max(np.abs(it.modes[c][0] - tensor.modes[c][0])))
        for c in tensor.charts
    )
    tail = float(np.sum(arr[-1, 1:]))
    report = ClassificationReport(
        verdicts={
            "scaling_rates": slope_err < slope_tol,
            "scaling_limit_is_mode0": mode0_drift == 0.0 and tail < 1e-6,
        },
        values={
            "slope_error": slope_err,
            "mode0_drift": mode0_drift,
            "limit_tail_norm": tail,
            "ratio": float(k),
        },
        trace=[row for row in arr],
        slopes=slopes,
        expected_slopes=expected,
        tolerances={"slope": slope_tol},
    )
    return report


def classify(tensor, tol_circular=1e-5, tol_ball=1e-8, angles=(0.7, 1.9)):
    """Full verdict report: circularity, ball, and rotational agreement."""
    norms = tensor.mode_norms()
    report = ClassificationReport(
        verdicts={
            "circular": is_circular(tensor, tol_circular),
            "ball": is_ball(tensor, tol_ball),
        },
        values={
            "circularity_defect": circularity_defect(tensor),
            "ball_defect": ball_defect(tensor),
        },
        mode_norms=norms,
        tolerances={"circular": tol_circular, "ball": tol_ball},
    )
    for theta in angles:
        report.verdicts[f"rotational_{theta:g}"] = rotational_test(
            tensor, theta, tol_circular
        )
    return report


# ---------------------------------------------------------------------------
# boundary frames of the indicatrix


@dataclass
class SpecialFrame:
    """Boundary point with a unitary holomorphic tangent basis.

    e0 lies on the unit level of the gauge; the rows of basis span the
    complex tangent of the level set at e0 and are orthonormal for the
    Levi form of the squared gauge, scaled so that form(e_a, J e_a) = 1.
    """

    e0: np.ndarray
    basis: np.ndarray  # (n-1, n) complex
    kappa_residual: float
    gram_residual: float
    tangency_residual: float


def _real_rep(w):
    """Complex n-vector to interleaved real 2n-vector."""
    w = np.asarray(w, dtype=complex)
    out = np.empty(w.shape[:-1] + (2 * w.shape[-1],))
    out[..., 0::2] = w.real
    out[..., 1::2] = w.imag
    return out


def _kappa_sq_derivatives(kappa, z, h=1e-4):
    """Gradient and Hessian of the squared gauge at an ambient point.

    Exact sympy derivatives when the gauge is closed form; five-point
    finite differences of the interpolated gauge otherwise.
    """
    n = kappa.n
    dim = 2 * n
    if kappa.kappa_sq_ambient is not None:
        coords = ambient_coords(n)
        f = kappa.kappa_sq_ambient
        pt = {c: val for c, val in zip(coords, _real_rep(z))}
        grad = np.array(
            [float(sp.diff(f, c).subs(pt)) for c in coords]
        )
        hess = np.array(
            [[float(sp.diff(f, a, b).subs(pt)) for b in coords] for a in coords]
        )
        return grad, hess

    def fval(x):
        zz = x[0::2] + 1j * x[1::2]
        return float(kappa.kappa(zz[None, :])[0]) ** 2

    x0 = _real_rep(z)
    grad = np.empty(dim)
    hess = np.empty((dim, dim))
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = h
        grad[i] = (
            -fval(x0 + 2 * e) + 8 * fval(x0 + e)
            - 8 * fval(x0 - e) + fval(x0 - 2 * e)
        ) / (12 * h)
    for i in range(dim):
        ei = np.zeros(dim)
        ei[i] = h
        for j in range(i, dim):
            ej = np.zeros(dim)
            ej[j] = h
            val = (
                fval(x0 + ei + ej) - fval(x0 + ei - ej)
                - fval(x0 - ei + ej) + fval(x0 - ei - ej)
            ) / (4 * h * h)
            hess[i, j] = val
            hess[j, i] = val
    return grad, hess


def special_frame(kappa, direction):
    """Unitary tangent frame of the indicatrix boundary along a direction.

    The base point is direction scaled onto the unit level; the complex
    tangent there is the common kernel of the level differential and its
    pullback by the standard structure; Gram-Schmidt runs in standard
    basis order under the Levi form of the squared gauge.
    """
    direction = np.asarray(direction, dtype=complex)
    n = kappa.n
    kd = float(kappa.kappa(direction[None, :])[0])
    if not np.isfinite(kd) or kd <= 0:
        raise CharacterizationError("direction has no positive gauge value")
    e0 = direction / kd
    grad, hess = _kappa_sq_derivatives(kappa, e0)
    J = standard_j_matrix(2 * n)
    F = -(hess @ J + J @ hess)  # matrix of the Levi 2-form in real coords

    def form(u, w):
        return float(_real_rep(u) @ F @ _real_rep(w))

    def herm(u, w):
        # Hermitian pairing with real part form(u, Jw) and imaginary part
        # form(u, w); reduces to 4<u, w> for the standard gauge
        return form(u, 1j * w) + 1j * form(u, w)

    # complex gradient p with p.X = 0 cutting the holomorphic tangent
    p = 0.5 * (grad[0::2] - 1j * grad[1::2])
    pe0 = np.dot(p, e0)
    if abs(pe0) < 1e-12:
        raise CharacterizationError("level differential degenerates at e0")

    basis = []
    gram_res = 0.0
    for j in range(n):
        cand = np.zeros(n, dtype=complex)
        cand[j] = 1.0
        cand = cand - (p[j] / pe0) * e0
        for e in basis:
            cand = cand - (herm(e, cand) / herm(e, e)) * e
        norm_sq = herm(cand, cand).real
        if norm_sq < 1e-10:
            continue
        basis.append(cand)
        if len(basis) == n - 1:
            break
    if len(basis) < n - 1:
        raise CharacterizationError(
            "Levi form of the gauge degenerates on the tangent space"
        )
    # scale so that form(e_a, J e_a) = 1
    basis = [e / np.sqrt(form(e, 1j * e)) for e in basis]
    B = np.stack(basis)
    G = np.empty((n - 1, n - 1), dtype=complex)
    tang = 0.0
    for a in range(n - 1):
        for b in range(n - 1):
            G[a, b] = form(B[a], 1j * B[b]) + 1j * form(B[a], B[b])
        tang = max(
            tang,
            abs(float(grad @ _real_rep(B[a]))),
            abs(float(grad @ _real_rep(1j * B[a]))),
        )
    gram_res = float(np.max(np.abs(G - np.eye(n - 1))))
    kres = abs(float(kappa.kappa(e0[None, :])[0]) - 1.0)
    return SpecialFrame(
        e0=e0, basis=B, kappa_residual=kres,
        gram_residual=gram_res, tangency_residual=tang,
    )
