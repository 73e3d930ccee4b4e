"""End-to-end acceptance checks, one pass/fail line per criterion."""

import time

import numpy as np
import pytest

from maform.atlas import ChartAtlas, FiberGrid
from maform.characterization import is_circular, rotational_test, scaling_test
from maform.cli import main as cli_main
from maform.deformation import (
    condition_symmetry,
    extract,
    extract_from_structure,
    fourier_modes,
    frame_vectors,
    hol_rep,
    antihol_rep,
    reconstruct,
    reference_form_matrix,
    tensor_from_mode_functions,
    verify_mode_equations,
)
from maform.domains import make_circular_domain
from maform.foliation import gridded_top_degeneracy, verify_ma_identities
from maform.moser import FS_AREA, curvature, moser_flow, normalize_domain

ATLAS = ChartAtlas(n=2, n_v=17)
ATLAS3 = ChartAtlas(n=3, n_v=7, box=1.0)


def report(num, ok, detail):
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


@pytest.fixture(scope="module")
def ball_nm():
    mink, _ = make_circular_domain({"kind": "ball"})
    return mink, normalize_domain(mink, atlas=ATLAS, n_steps=50)


@pytest.fixture(scope="module")
def ellipsoid_nm():
    mink, _ = make_circular_domain({"kind": "ellipsoid", "a": 1, "b": 4})
    return mink, normalize_domain(mink, atlas=ATLAS, n_steps=100)


@pytest.fixture(scope="module")
def perturbed_nm():
    mink, _ = make_circular_domain({"kind": "perturbed_ball", "eps": 0.05})
    return mink, normalize_domain(mink, atlas=ATLAS, n_steps=100)


def random_bandlimited(rng, k_max=5, scale=0.03):
    entries = []
    for k in range(k_max + 1):
        c = rng.normal(size=3) + 1j * rng.normal(size=3)

        def fn(v, c=c):
            return scale * (c[0] + c[1] * v + c[2] * np.conj(v)) / (
                1.0 + np.abs(v) ** 2
            )

        entries.append((k, 0, 0, fn))
    return tensor_from_mode_functions(ATLAS, 2, entries, k_max)


def levi_pairing(v):
    z = np.concatenate([np.ones(v.shape[:-1] + (1,), complex), v], axis=-1)
    e = frame_vectors(3, 0, z)
    A = reference_form_matrix(3)
    M = np.empty(v.shape[:-1] + (2, 2), dtype=complex)
    for cc in range(2):
        for b in range(2):
            M[..., cc, b] = np.einsum(
                "...i,ij,...j->...",
                hol_rep(e[..., cc, :]), A, antihol_rep(np.conj(e[..., b, :])),
            )
    return M


def tensor_with_bilinear_form(Bfn):
    def entry(a, b):
        def fn(v):
            phi = np.linalg.solve(
                np.swapaxes(levi_pairing(v), -1, -2), Bfn(v)
            )
            return phi[..., a, b]

        return fn

    return tensor_from_mode_functions(
        ATLAS3, 3,
        [(0, a, b, entry(a, b)) for a in range(2) for b in range(2)], 0,
    )


def test_c01_ball_identity_suite():
    start = time.time()
    _, exh = make_circular_domain({"kind": "ball"})
    rep = verify_ma_identities(exh, n_samples=64)
    elapsed = time.time() - start
    worst = max(
        rep[k] for k in ("log_potential", "power_rule", "top_degeneracy",
                         "contraction", "flow_invariance")
    )
    report(1, worst < 1e-10 and elapsed < 10.0,
           f"max residual {worst:.2e}, {elapsed:.1f}s")


def test_c02_ellipsoid_degeneracy_and_convergence():
    start = time.time()
    _, exh = make_circular_domain({"kind": "ellipsoid", "a": 1, "b": 4})
    analytic = verify_ma_identities(exh)["top_degeneracy"]
    resids = []
    for n_v, n_r, n_th in ((17, 8, 16), (33, 15, 32)):
        at = ChartAtlas(n=2, n_v=n_v, fiber=FiberGrid(n_r=n_r, n_theta=n_th))
        resids.append(gridded_top_degeneracy(exh, at))
    elapsed = time.time() - start
    ratio = resids[0] / resids[1]
    report(2, analytic < 1e-8 and ratio >= 3.5 and elapsed < 60.0,
           f"analytic {analytic:.2e}, refinement ratio {ratio:.2f}, "
           f"{elapsed:.1f}s")


def test_c03_curvature_cohomology_class():
    worst = 0.0
    for spec in ({"kind": "ball"},
                 {"kind": "ellipsoid", "a": 1, "b": 4},
                 {"kind": "perturbed_ball", "eps": 0.05}):
        mink, _ = make_circular_domain(spec)
        conn = curvature(mink, ATLAS)
        worst = max(worst, abs(conn.integral - FS_AREA))
    report(3, worst < 1e-6, f"max area mismatch {worst:.2e}")


def test_c04_flow_endpoint():
    mink, _ = make_circular_domain({"kind": "ellipsoid", "a": 1, "b": 4})
    fine = moser_flow(
        curvature(mink, ChartAtlas(n=2, n_v=64)), n_steps=200
    ).endpoint_residual
    coarse = moser_flow(
        curvature(mink, ChartAtlas(n=2, n_v=33)), n_steps=100
    ).endpoint_residual
    report(4, fine < 1e-6 and fine < coarse,
           f"residual {fine:.2e} (coarse {coarse:.2e})")


def test_c05_map_contract(ellipsoid_nm, perturbed_nm):
    ball, _ = make_circular_domain({"kind": "ball"})
    rng = np.random.default_rng(17)
    z = rng.normal(size=(200, 2)) + 1j * rng.normal(size=(200, 2))
    z *= rng.uniform(0.2, 0.6, size=200)[:, None] / np.linalg.norm(
        z, axis=1
    )[:, None]
    gauge = nu = 0.0
    for mink, nm in (ellipsoid_nm, perturbed_nm):
        gauge = max(gauge, float(np.max(np.abs(mink.mu(nm.forward(z)) - ball.mu(z)))))
        nu = max(nu, nm.residuals["connection_mismatch"])
    report(5, gauge < 1e-7 and nu < 1e-6,
           f"gauge {gauge:.2e}, connection mismatch {nu:.2e}")


def test_c06_circular_mode_collapse(ball_nm, ellipsoid_nm, perturbed_nm):
    tail = 0.0
    for _, nm in (ellipsoid_nm, perturbed_nm):
        tail = max(tail, float(np.sum(extract(nm).mode_norms()[1:])))
    ball_zero = extract(ball_nm[1]).mode_norms()[0]
    report(6, tail < 1e-5 and ball_zero < 1e-8,
           f"positive-mode tail {tail:.2e}, ball mode 0 {ball_zero:.2e}")


def test_c07_round_trips():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(5):
        t = random_bandlimited(rng, k_max=int(rng.integers(1, 6)))
        sf = reconstruct(t)
        t2 = extract_from_structure(sf, t.k_max)
        worst = max(worst, float(np.max(np.abs(t2.modes[0] - t.modes[0]))))
        sf2 = reconstruct(fourier_modes(t2, t.k_max))
        worst = max(worst, float(np.max(np.abs(sf2.J[0] - sf.J[0]))))
    report(7, worst < 1e-8, f"max round-trip defect {worst:.2e}")


def test_c08_bilinear_symmetry_and_mode_equations():
    def sym(v):
        B = np.empty(v.shape[:-1] + (2, 2), dtype=complex)
        B[..., 0, 0] = 0.05 * (1 + v[..., 0] * np.conj(v[..., 0]))
        B[..., 1, 1] = 0.05
        B[..., 0, 1] = 0.02 * v[..., 0] * v[..., 1]
        B[..., 1, 0] = B[..., 0, 1]
        return B

    sym_res = condition_symmetry(tensor_with_bilinear_form(sym), 0, 0.5)

    a0 = 0.04

    def antisym(v):
        B = np.zeros(v.shape[:-1] + (2, 2), dtype=complex)
        B[..., 0, 0] = 0.05
        B[..., 1, 1] = 0.05
        B[..., 0, 1] = a0
        B[..., 1, 0] = -a0
        return B

    anti_res = condition_symmetry(tensor_with_bilinear_form(antisym), 0, 0.5)
    expected = 2 * a0 * 0.25
    anti_ok = abs(anti_res - expected) < 0.05 * expected

    c = 0.2
    entries = [
        (0, 0, 0, lambda v: np.full(len(v), c, dtype=complex)),
        (0, 1, 0, lambda v: 0.1 * v[:, 0] * np.conj(v[:, 0])),
        (0, 1, 1, lambda v: 0.15 * (v[:, 0] - (c / 2) * np.conj(v[:, 0]))),
    ]
    t = tensor_from_mode_functions(ATLAS3, 3, entries, 0)
    rep = verify_mode_equations(t, chart=0, zeta=0.5)
    modes_ok = max(rep["per_mode"]) < 1e-6 and rep["consistency"] < 1e-6
    report(8, sym_res < 1e-8 and anti_ok and modes_ok,
           f"symmetric {sym_res:.2e}, antisymmetric {anti_res:.4f} "
           f"vs {expected:.4f}, mode consistency {rep['consistency']:.2e}")


def test_c09_rotation_verdicts():
    rng = np.random.default_rng(33)
    checked = 0
    for i in range(20):
        entries = []
        for k in range(5):
            if i % 2 == 0 and k >= 1:
                continue
            c = rng.normal(size=2) + 1j * rng.normal(size=2)
            entries.append(
                (k, 0, 0,
                 lambda v, c=c: 0.05 * (c[0] + c[1] * v) / (1 + np.abs(v) ** 2))
            )
        t = tensor_from_mode_functions(ATLAS, 2, entries, 4)
        for theta in (0.7, 1.1, 1.9, 2.5, 3.3):
            assert rotational_test(t, theta) == is_circular(t)
            checked += 1
    report(9, checked == 100, f"{checked} verdict agreements")


def test_c10_contraction_decay():
    rng = np.random.default_rng(37)
    t = random_bandlimited(rng, k_max=3)
    start = time.time()
    rep = scaling_test(t, 0.5, iters=20)
    elapsed = time.time() - start
    ok = (
        rep.values["slope_error"] < 1e-6
        and rep.verdicts["scaling_limit_is_mode0"]
        and elapsed < 5.0
    )
    report(10, ok, f"slope error {rep.values['slope_error']:.2e}, "
                   f"{elapsed:.2f}s")


def test_c11_cli_determinism(tmp_path):
    dom = tmp_path / "ball.dom"
    dom.write_text("n = 2\nmu.kind = ball\nN_v = 9\n")
    tns = tmp_path / "synth.tns"
    tns.write_text(
        "n = 2\nN_v = 17\nk_max = 2\n"
        "mode 0 1 1 = 0.05/(1 + v*conj(v))\nmode 2 1 1 = 0.01*v\n"
    )
    outputs = {"verify_report.txt": [], "classify_report.txt": []}
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert cli_main(
            ["verify", "--domain", str(dom), "--out", str(out)]
        ) == 0
        assert cli_main(
            ["classify", "--tensor", str(tns), "--out", str(out)]
        ) == 0
        for name in outputs:
            outputs[name].append((out / name).read_bytes())
    same = all(pair[0] == pair[1] for pair in outputs.values())
    report(11, same, "byte-identical reports across repeated runs")
