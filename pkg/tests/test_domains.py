"""Domain model: gauge construction, exhaustion, indicatrix, spec files."""

import numpy as np
import pytest
import sympy as sp

from maform.atlas import ChartAtlas, FiberGrid, blowup_forward, blowup_inverse
from maform.domains import (
    DomainError,
    PseudoconvexityError,
    SpecParseError,
    ambient_coords,
    indicatrix_from_exhaustion,
    make_circular_domain,
    parse_domain_spec,
)
from maform.symforms import real_coords

RNG = np.random.default_rng(20260825)


class TestMakeCircularDomain:
    def test_ball_chart_values(self):
        mink, exh = make_circular_domain({"kind": "ball"})
        assert abs(mink.m(0, 0.0) - 1.0) < 1e-14
        assert abs(mink.m(0, 1.0) - np.sqrt(2.0)) < 1e-14
        assert abs(mink.m(1, 1.0) - np.sqrt(2.0)) < 1e-14

    def test_ellipsoid_chart_values(self):
        mink, _ = make_circular_domain({"kind": "ellipsoid", "a": 1, "b": 4})
        assert abs(mink.m(0, 1.0) - np.sqrt(5.0)) < 1e-14
        assert abs(mink.m(0, 0.0) - 1.0) < 1e-14
        # chart 1 swaps the roles of the coefficients
        assert abs(mink.m(1, 0.0) - 2.0) < 1e-14

    def test_homogeneity_across_charts(self):
        for spec in (
            {"kind": "ball"},
            {"kind": "ellipsoid", "a": 1, "b": 4},
            {"kind": "perturbed_ball", "eps": 0.05},
        ):
            mink, _ = make_circular_domain(spec)
            v = RNG.uniform(-1.2, 1.2, 20) + 1j * RNG.uniform(-1.2, 1.2, 20)
            v = v[np.abs(v) > 0.3]
            m0 = mink.m(0, v)
            m1 = mink.m(1, 1.0 / v)
            assert np.max(np.abs(m1 - m0 / np.abs(v))) < 1e-12

    def test_mu_degree_one_homogeneous(self):
        mink, _ = make_circular_domain({"kind": "perturbed_ball", "eps": 0.05})
        z = RNG.normal(size=(30, 2)) + 1j * RNG.normal(size=(30, 2))
        lam = RNG.uniform(0.2, 2.0, 30) * np.exp(1j * RNG.uniform(0, 2 * np.pi, 30))
        mu1 = mink.mu(z * lam[:, None])
        mu0 = mink.mu(z)
        assert np.max(np.abs(mu1 - np.abs(lam) * mu0)) < 1e-10

    def test_exhaustion_matches_gauge_squared(self):
        mink, exh = make_circular_domain({"kind": "ellipsoid", "a": 1, "b": 4})
        z = RNG.normal(size=(20, 2)) + 1j * RNG.normal(size=(20, 2))
        tau = exh.value_ambient(z)
        assert np.max(np.abs(tau - mink.mu(z) ** 2)) < 1e-10

    def test_exhaustion_chart_form(self):
        _, exh = make_circular_domain({"kind": "ball"})
        v = 0.5 + 0.25j
        zeta = 0.3 - 0.1j
        val = exh.value(0, v, zeta)
        assert abs(val - abs(zeta) ** 2 * (1 + abs(v) ** 2)) < 1e-14

    def test_pseudoconvexity_eps_scan(self):
        # scan the perturbation upward; the witness must flip from pass to
        # fail at some finite amplitude, with the offending point reported
        eigs = []
        failed_at = None
        for eps in (0.01, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6):
            try:
                make_circular_domain({"kind": "perturbed_ball", "eps": eps})
                eigs.append(eps)
            except PseudoconvexityError as err:
                failed_at = eps
                assert err.eigenvalue <= 0
                assert err.point.shape == (2,)
                break
        assert failed_at is not None, "witness never failed in the scan"
        assert 0.05 in eigs, "small perturbations must stay pseudoconvex"

    def test_gauge_positivity_enforced(self):
        samples = {
            c: np.ones((33, 33)) for c in (0, 1)
        }
        samples[0][5, 5] = -1.0
        with pytest.raises(DomainError, match="not positive"):
            make_circular_domain({"kind": "grid", "samples": samples})

    def test_gridded_homogeneity_enforced(self):
        at = ChartAtlas(n=2, n_v=33)
        V = np.abs(at.base_points(0))
        good = {0: np.sqrt(1 + V**2), 1: np.sqrt(1 + V**2)}
        mink, _ = make_circular_domain({"kind": "grid", "samples": good}, atlas=at)
        assert mink.kind == "grid"
        bad = {0: np.sqrt(1 + V**2), 1: np.sqrt(1 + 4 * V**2)}
        with pytest.raises(DomainError, match="homogeneity"):
            make_circular_domain({"kind": "grid", "samples": bad}, atlas=at)


class TestIndicatrix:
    def test_ball_reference(self):
        # tau_o pulls back to kappa = Euclidean norm
        _, exh = make_circular_domain({"kind": "ball"})
        kap = indicatrix_from_exhaustion(exh)
        z = RNG.normal(size=(20, 2)) + 1j * RNG.normal(size=(20, 2))
        assert np.max(np.abs(kap.kappa(z) - np.linalg.norm(z, axis=1))) < 1e-10

    def test_ellipsoid_recovers_gauge(self):
        mink, exh = make_circular_domain({"kind": "ellipsoid", "a": 1, "b": 4})
        kap = indicatrix_from_exhaustion(exh)
        z = RNG.normal(size=(20, 2)) + 1j * RNG.normal(size=(20, 2))
        assert np.max(np.abs(kap.kappa(z) - mink.mu(z))) < 1e-10

    def test_cubic_perturbation_leaves_kappa_unchanged(self):
        # tau + |zeta|^3 g(v) vanishes to the same second order; the radial
        # fit oracle must see the same slope within the fit tolerance
        from maform.domains import ExhaustionField

        _, exh = make_circular_domain({"kind": "ball"})
        x, y, s, t = real_coords(4)
        charts = {
            c: exh.tau_charts[c] + (s**2 + t**2) ** sp.Rational(3, 2) * (1 + x * y)
            for c in (0, 1)
        }
        pert = ExhaustionField(n=2, tau_ambient=None, tau_charts=charts)
        at = ChartAtlas(n=2, n_v=17, fiber=FiberGrid(n_r=8, n_theta=16, r_min=1e-5, r_max=1e-3))
        kap = indicatrix_from_exhaustion(pert, atlas=at, tol=1e-3)
        V = at.base_points(0)
        ref = np.sqrt(1 + np.abs(V) ** 2)
        # the linear radial fit has an O(r_max) bias against the cubic term
        assert np.max(np.abs(kap.kappa_charts[0] - ref)) < 1e-3

    def test_non_parabolic_rejected(self):
        from maform.domains import ExhaustionField

        x, y, s, t = real_coords(4)
        # vanishing order 4 in zeta: no linear radial slope
        charts = {c: (s**2 + t**2) ** 2 * (1 + x**2 + y**2) for c in (0, 1)}
        bad = ExhaustionField(n=2, tau_ambient=None, tau_charts=charts)
        with pytest.raises(DomainError, match="not parabolic"):
            indicatrix_from_exhaustion(bad)

    def test_idempotence(self):
        # feeding kappa^2 of a computed indicatrix back in returns kappa
        from maform.domains import ExhaustionField

        mink, exh = make_circular_domain({"kind": "perturbed_ball", "eps": 0.05})
        kap1 = indicatrix_from_exhaustion(exh)
        exh2 = ExhaustionField(
            n=2,
            tau_ambient=kap1.kappa_sq_ambient,
            tau_charts=exh.tau_charts,
            minkowski=mink,
        )
        kap2 = indicatrix_from_exhaustion(exh2)
        z = RNG.normal(size=(20, 2)) + 1j * RNG.normal(size=(20, 2))
        assert np.max(np.abs(kap1.kappa(z) - kap2.kappa(z))) < 1e-10


class TestBlowupCoords:
    def test_axis_points(self):
        chart, v, zeta = blowup_forward(np.array([1.0, 0.0], dtype=complex))
        assert chart == 0 and abs(v[0]) < 1e-15 and abs(zeta - 1.0) < 1e-15
        chart, v, zeta = blowup_forward(np.array([0.5, 0.5], dtype=complex))
        assert chart == 0 and abs(v[0] - 1.0) < 1e-15 and abs(zeta - 0.5) < 1e-15

    def test_round_trip(self):
        z = RNG.normal(size=(100, 2)) + 1j * RNG.normal(size=(100, 2))
        chart, v, zeta = blowup_forward(z)
        back = blowup_inverse(chart, v, zeta)
        assert np.max(np.abs(back - z)) < 1e-12

    def test_round_trip_n3(self):
        z = RNG.normal(size=(50, 3)) + 1j * RNG.normal(size=(50, 3))
        chart, v, zeta = blowup_forward(z)
        back = blowup_inverse(chart, v, zeta)
        assert np.max(np.abs(back - z)) < 1e-12

    def test_origin_rejected(self):
        with pytest.raises(ValueError, match="undefined"):
            blowup_forward(np.zeros(2, dtype=complex))


class TestSpecFiles:
    GOOD = """# ellipsoid fixture
n = 2
mu.kind = ellipsoid
a = 1
b = 4
N_v = 33
N_r = 8
N_theta = 16
"""

    def test_parse_and_echo(self):
        spec = parse_domain_spec(self.GOOD)
        assert spec.kind == "ellipsoid"
        assert spec.params == {"a": 1.0, "b": 4.0}
        assert (spec.n_v, spec.n_r, spec.n_theta) == (33, 8, 16)
        assert spec.raw == self.GOOD  # bit-exact echo source

    def test_parse_perturbed_q_list(self):
        text = "mu.kind = perturbed_ball\neps = 0.05\nq = 2:1, 3:0.5\n"
        spec = parse_domain_spec(text)
        assert spec.params["q"] == {2: 1.0, 3: 0.5}

    def test_spec_drives_construction(self):
        spec = parse_domain_spec(self.GOOD)
        mink, _ = make_circular_domain(spec.mu_spec(), atlas=spec.atlas())
        assert abs(mink.m(0, 1.0) - np.sqrt(5.0)) < 1e-14

    def test_errors_carry_position(self):
        with pytest.raises(SpecParseError, match="line 2"):
            parse_domain_spec("n = 2\nbogus_key = 1\n")
        with pytest.raises(SpecParseError, match="column"):
            parse_domain_spec("mu.kind = dodecahedron\n")
        with pytest.raises(SpecParseError, match="expected"):
            parse_domain_spec("just some words\n")
