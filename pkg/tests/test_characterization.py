"""Verdict suite: circularity, ball, rotation, scaling, boundary frames."""

import time

import numpy as np
import pytest
import sympy as sp

from maform.atlas import ChartAtlas
from maform.characterization import (
    CharacterizationError,
    ball_defect,
    circularity_defect,
    classify,
    is_ball,
    is_circular,
    rotational_test,
    scaling_test,
    special_frame,
)
from maform.deformation import extract, tensor_from_mode_functions
from maform.domains import (
    IndicatrixField,
    ambient_coords,
    indicatrix_from_exhaustion,
    make_circular_domain,
)
from maform.moser import normalize_domain

ATLAS = ChartAtlas(n=2, n_v=17)


def random_tensor(rng, k_max=4, circular=False, scale=0.05):
    entries = []
    for k in range(k_max + 1):
        if circular and k >= 1:
            continue
        c = rng.normal(size=2) + 1j * rng.normal(size=2)
        entries.append(
            (k, 0, 0,
             lambda v, c=c: scale * (c[0] + c[1] * v) / (1 + np.abs(v) ** 2))
        )
    return tensor_from_mode_functions(ATLAS, 2, entries, k_max)


@pytest.fixture(scope="module")
def ball_tensor():
    mink, _ = make_circular_domain({"kind": "ball"})
    return extract(normalize_domain(mink, atlas=ATLAS, n_steps=50))


@pytest.fixture(scope="module")
def ellipsoid_tensor():
    mink, _ = make_circular_domain({"kind": "ellipsoid", "a": 1, "b": 4})
    return extract(normalize_domain(mink, atlas=ATLAS, n_steps=100))


@pytest.fixture(scope="module")
def perturbed_tensor():
    mink, _ = make_circular_domain({"kind": "perturbed_ball", "eps": 0.05})
    return extract(normalize_domain(mink, atlas=ATLAS, n_steps=100))


class TestVerdicts:
    def test_ball_is_circular_and_ball(self, ball_tensor):
        assert is_circular(ball_tensor)
        assert is_ball(ball_tensor)

    def test_ellipsoid_reduces_to_the_ball(self, ellipsoid_tensor):
        # the diagonal ellipsoid is linearly equivalent to the ball
        # (rescale the second axis), so its whole tensor vanishes
        assert is_circular(ellipsoid_tensor)
        assert is_ball(ellipsoid_tensor)

    def test_perturbed_ball_is_circular_not_ball(self, perturbed_tensor):
        # circular by construction, but the indicatrix is not an ellipsoid,
        # so no linear map reaches the ball: the fiber-constant mode stays
        assert is_circular(perturbed_tensor)
        assert not is_ball(perturbed_tensor)
        assert ball_defect(perturbed_tensor) > 1e-2

    def test_positive_mode_blocks_circularity(self):
        t = tensor_from_mode_functions(
            ATLAS, 2, [(1, 0, 0, lambda v: np.full(len(v), 0.1 + 0j))], 1
        )
        assert not is_circular(t)
        assert abs(circularity_defect(t) - 0.1 * ATLAS.fiber.r_max) < 1e-12

    def test_monotone_in_tolerance(self):
        rng = np.random.default_rng(31)
        for _ in range(5):
            t = random_tensor(rng, circular=bool(rng.integers(2)))
            for loose, tight in ((1e-3, 1e-6), (1e-1, 1e-2)):
                if is_circular(t, tight):
                    assert is_circular(t, loose)
                if is_ball(t, tight):
                    assert is_ball(t, loose)


class TestRotation:
    def test_verdict_matches_circularity(self):
        # twenty random tensors, five non-resonant angles: the invariance
        # defect recovers the positive-mode norms, so the verdicts agree
        rng = np.random.default_rng(33)
        angles = (0.7, 1.1, 1.9, 2.5, 3.3)
        for i in range(20):
            t = random_tensor(rng, k_max=4, circular=(i % 2 == 0))
            for theta in angles:
                assert rotational_test(t, theta) == is_circular(t)

    def test_mode_zero_tensor_is_invariant(self):
        rng = np.random.default_rng(35)
        t = random_tensor(rng, circular=True)
        assert rotational_test(t, 1.234)

    def test_resonant_angle_rejected(self):
        t = tensor_from_mode_functions(
            ATLAS, 2, [(2, 0, 0, lambda v: np.full(len(v), 0.1 + 0j))], 2
        )
        with pytest.raises(CharacterizationError, match="resonant at mode 2"):
            rotational_test(t, np.pi)


class TestScaling:
    def test_decay_rates_and_limit(self):
        rng = np.random.default_rng(37)
        t = random_tensor(rng, k_max=3)
        start = time.time()
        rep = scaling_test(t, 0.5, iters=20)
        elapsed = time.time() - start
        assert rep.values["slope_error"] < 1e-6
        assert rep.values["mode0_drift"] == 0.0
        assert rep.verdicts["scaling_rates"]
        assert rep.verdicts["scaling_limit_is_mode0"]
        assert elapsed < 5.0

    def test_per_mode_geometric_decay(self):
        rng = np.random.default_rng(39)
        t = random_tensor(rng, k_max=3)
        rep = scaling_test(t, 0.5, iters=10)
        arr = np.stack(rep.trace)
        for j in (1, 2, 3):
            ratio = arr[1:, j] / arr[:-1, j]
            assert np.max(np.abs(ratio - 0.5**j)) < 1e-12

    def test_constant_trace_for_mode_zero(self):
        rng = np.random.default_rng(41)
        t = random_tensor(rng, circular=True)
        rep = scaling_test(t, 0.3, iters=5)
        arr = np.stack(rep.trace)
        assert np.max(np.abs(arr[:, 0] - arr[0, 0])) == 0.0

    def test_ratio_domain(self):
        rng = np.random.default_rng(43)
        t = random_tensor(rng)
        with pytest.raises(CharacterizationError, match="ratio"):
            scaling_test(t, 1.2)


class TestClassifyReport:
    def test_report_layout_and_determinism(self):
        rng = np.random.default_rng(45)
        t = random_tensor(rng, k_max=3)
        rep = classify(t)
        text = rep.text()
        assert "circular:" in text
        assert "# mode  norm" in text
        assert classify(t).text() == text

    def test_verdict_consistency(self, perturbed_tensor):
        rep = classify(perturbed_tensor)
        assert rep.verdicts["circular"]
        assert not rep.verdicts["ball"]
        for key, val in rep.verdicts.items():
            if key.startswith("rotational"):
                assert val == rep.verdicts["circular"]


class TestSpecialFrame:
    def test_ball_axis_frame(self):
        _, exh = make_circular_domain({"kind": "ball"})
        kap = indicatrix_from_exhaustion(exh)
        fr = special_frame(kap, np.array([1.0, 0.0]))
        assert np.max(np.abs(fr.e0 - np.array([1.0, 0.0]))) < 1e-12
        assert np.max(np.abs(fr.basis[0] - np.array([0.0, 0.5]))) < 1e-12

    def test_ellipsoid_axis_frame(self):
        # the long axis of the gauge shortens the tangent frame vector by
        # the axis ratio: unit Levi length at (1,0) is (0, 1/2)/2
        _, exh = make_circular_domain({"kind": "ellipsoid", "a": 1, "b": 4})
        kap = indicatrix_from_exhaustion(exh)
        fr = special_frame(kap, np.array([1.0, 0.0]))
        assert np.max(np.abs(fr.e0 - np.array([1.0, 0.0]))) < 1e-12
        assert np.max(np.abs(fr.basis[0] - np.array([0.0, 0.25]))) < 1e-12

    def test_invariants_on_random_directions(self):
        rng = np.random.default_rng(47)
        for spec in ({"kind": "ball"},
                     {"kind": "ellipsoid", "a": 1, "b": 4},
                     {"kind": "perturbed_ball", "eps": 0.05}):
            _, exh = make_circular_domain(spec)
            kap = indicatrix_from_exhaustion(exh)
            for _ in range(50 if spec["kind"] == "ball" else 10):
                d = rng.normal(size=2) + 1j * rng.normal(size=2)
                fr = special_frame(kap, d)
                assert fr.kappa_residual < 1e-10
                assert fr.gram_residual < 1e-8
                assert fr.tangency_residual < 1e-8

    def test_degenerate_levi_form_rejected(self):
        x1, y1, x2, y2 = ambient_coords(2)
        rank_one = (x1 + x2) ** 2 + (y1 + y2) ** 2
        kap = IndicatrixField(
            n=2, atlas=ATLAS, kappa_charts={}, fit_residual=0.0,
            kappa_sq_ambient=rank_one,
        )
        with pytest.raises(CharacterizationError, match="degenerates"):
            special_frame(kap, np.array([1.0, 0.0]))

    def test_null_direction_rejected(self):
        x1, y1, x2, y2 = ambient_coords(2)
        kap = IndicatrixField(
            n=2, atlas=ATLAS, kappa_charts={}, fit_residual=0.0,
            kappa_sq_ambient=x1**2 + y1**2,
        )
        with pytest.raises(CharacterizationError, match="positive gauge"):
            special_frame(kap, np.array([0.0, 1.0]))
