"""Acceptance criteria 1-10, one test each.

Every test records a PASS/FAIL/SKIP line that is printed in the terminal
summary. Tolerances are the stated ones; nothing is relaxed here.
"""

import contextlib
import filecmp
import glob
import os
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from conftest import ACCEPTANCE, PhantomRun, annulus_rings
from strainforge.fusion import compute_weights, fuse_inplane
from strainforge.interpolation import ScatteredInterpolant
from strainforge.mesh import tetrahedralize
from strainforge.phantom import read_oracle, smooth_texture, write_phantom_bundle
from strainforge.pipeline import PipelineConfig, read_curves_csv, run_pipeline
from strainforge.registration import (BSplineGrid, RegistrationParams, evaluate_ffd,
                                      register_pair, registration_cost)
from strainforge.strain import (element_strains, green_lagrange, local_directions,
                                project_strain)

STACOM_ENV = "STRAINFORGE_STACOM_DIR"


@contextlib.contextmanager
def criterion(n, title):
    info = {}
    t0 = time.perf_counter()
    try:
        yield info
    except pytest.skip.Exception as exc:
        ACCEPTANCE.append(f"criterion {n:2d}: SKIP  {title} ({exc.msg})")
        raise
    except BaseException:
        ACCEPTANCE.append(f"criterion {n:2d}: FAIL  {title} {info.get('detail', '')}".rstrip())
        raise
    dt = time.perf_counter() - t0
    ACCEPTANCE.append(f"criterion {n:2d}: PASS  {title} {info.get('detail', '')} [{dt:.1f}s]")


def _timed_run(bundle, out, **kw):
    t0 = time.perf_counter()
    res = run_pipeline(PipelineConfig(bundle=bundle, out_dir=out, **kw))
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def contractile_twice(tmp_path_factory):
    root = tmp_path_factory.mktemp("acc_contractile")
    write_phantom_bundle(str(root / "bundle"), "contractile")
    a = _timed_run(str(root / "bundle"), str(root / "a"))
    b = _timed_run(str(root / "bundle"), str(root / "b"))
    return root, a, b


def test_c01_rigid_motion_nullity(tmp_path):
    with criterion(1, "rigid-motion nullity") as info:
        write_phantom_bundle(str(tmp_path / "bundle"), "rigid")
        res, dt = _timed_run(str(tmp_path / "bundle"), str(tmp_path / "out"))
        curves = read_curves_csv(os.path.join(tmp_path, "out", "strain_curves.csv"))
        worst = float(np.nanmax(np.abs(curves)))
        info["detail"] = f"max|E|={worst:.2e} runtime={dt:.1f}s"
        assert not np.isnan(curves).any()
        assert worst < 1e-6
        assert dt < 60.0


def test_c02_green_lagrange_identities():
    with criterion(2, "Green-Lagrange identities") as info:
        E = green_lagrange(np.diag([1.2, 1.0, 1.0]))
        err11 = abs(E[0, 0] - 0.22)
        R = Rotation.random(1000, random_state=0).as_matrix()
        worst = float(np.abs(green_lagrange(R)).max(axis=(1, 2)).max())
        info["detail"] = f"|E11-0.22|={err11:.1e} max rotation |E|={worst:.1e}"
        assert err11 <= 1e-15
        assert worst < 1e-12


def test_c03_phantom_oracle_agreement(contractile_twice):
    root, (res, dt), _ = contractile_twice
    with criterion(3, "contractile oracle agreement") as info:
        oracle = read_oracle(str(root / "bundle" / "oracle.csv"))
        curves = read_curves_csv(str(root / "a" / "strain_curves.csv"))
        # oracle peak frame: largest |Ell| over the cycle at any probe
        frames = sorted({t for t, _ in oracle})
        peak = max(frames, key=lambda t: abs(oracle[(t, 7)][2]))
        worst, lines = 0.0, []
        for seg in range(1, 17):
            rel = 0.10 if 7 <= seg <= 12 else 0.25
            for k, name in enumerate(("Err", "Ecc", "Ell")):
                o, v = oracle[(peak, seg)][k], curves[peak, seg - 1, k]
                tol = max(rel * abs(o), 0.01)
                ratio = abs(v - o) / tol
                worst = max(worst, ratio)
                if ratio > 1:
                    lines.append(f"seg{seg} {name} {v:.4f} vs {o:.4f}")
        info["detail"] = (f"worst error/tolerance={worst:.2f}, {len(lines)} of 48 outside, "
                          f"runtime={dt:.1f}s")
        assert dt < 120.0
        assert not lines, "; ".join(lines)


def test_c04_longitudinal_exactness():
    with criterion(4, "longitudinal exactness") as info:
        target = (0.85 ** 2 - 1) / 2
        out = []
        for mode in ("nearest", "project"):
            run = PhantomRun("incompressible", extrapolation=mode)
            t = int(np.argmin(run.phantom.lambda_z))
            assert run.phantom.lambda_z[t] == pytest.approx(0.85)
            m = run.mesh
            E = element_strains(m.nodes, m.tets, run.motion.displacements[t:t + 1])[0]
            ell = project_strain(E, local_directions(m.centroids()))[2]
            if mode == "nearest":
                # interior: all four nodes inside the LAX sample hull
                inside = ~run.motion.extrapolated[:, 2][m.tets].any(axis=1)
                ell = ell[inside]
            out.append(float(np.abs(ell - target).max()))
        info["detail"] = f"max|Ell+0.13875| interior={out[0]:.1e} projected-all={out[1]:.1e}"
        assert max(out) < 1e-3


def test_c05_interpolant_linear_precision():
    with criterion(5, "interpolant linear precision") as info:
        rng = np.random.default_rng(5)
        worst_in = worst_at = 0.0
        for _ in range(100):
            n = int(rng.integers(20, 201))
            pts = rng.uniform(-40, 40, size=(n, 3))
            a, b = rng.normal(size=3), rng.normal()
            vals = pts @ a + b
            f = ScatteredInterpolant(pts)
            worst_at = max(worst_at, float(np.abs(f(vals, pts) - vals).max()))
            w = rng.dirichlet(np.ones(4), size=100)
            q = np.einsum("ij,ijk->ik", w, pts[rng.integers(0, n, size=(100, 4))])
            qw = f.weights(q)
            assert not qw.extrapolated.any()
            worst_in = max(worst_in, float(np.abs(qw.apply(vals) - (q @ a + b)).max()))
        info["detail"] = f"in-hull={worst_in:.1e} at-samples={worst_at:.1e}"
        assert worst_in < 1e-9 and worst_at < 1e-9


def test_c06_registration_recovery():
    with criterion(6, "registration recovery") as info:
        f = smooth_texture((64, 64), seed=7)
        m = smooth_texture((64, 64), shift=(2.5, -1.0), seed=7)
        g = register_pair(f, m, RegistrationParams())
        pts = np.stack(np.meshgrid(np.arange(16, 48.0, 4), np.arange(16, 48.0, 4),
                                   indexing="ij"), -1).reshape(-1, 2)
        err = float(np.linalg.norm(evaluate_ffd(g, pts) - pts - [2.5, -1.0], axis=1).mean())

        f2 = smooth_texture((32, 32), seed=4)
        m2 = smooth_texture((32, 32), shift=(0.7, -0.4), seed=4)
        g2 = BSplineGrid.zeros(f2.shape, 8.0)
        g2.displacements = 0.3 * np.random.default_rng(2).normal(size=g2.displacements.shape)
        _, grad = registration_cost(f2, m2, g2, 0.05)
        num = np.zeros_like(grad)
        h = 1e-4
        for idx in np.ndindex(grad.shape):
            gp, gm = g2.copy(), g2.copy()
            gp.displacements[idx] += h
            gm.displacements[idx] -= h
            num[idx] = (registration_cost(f2, m2, gp, 0.05)[0]
                        - registration_cost(f2, m2, gm, 0.05)[0]) / (2 * h)
        rel = float(np.linalg.norm(grad - num) / np.linalg.norm(num))
        info["detail"] = f"mean landmark error={err:.3f}px gradient rel error={rel:.1e}"
        assert err < 0.3
        assert rel < 1e-4


def test_c07_mesh_volume_convergence():
    with criterion(7, "mesh volume convergence") as info:
        exact = np.pi * (35.0 ** 2 - 25.0 ** 2) * 80.0
        errs = []
        for n in (64, 128):
            m = tetrahedralize(*annulus_rings(n=n), layers=3, apex_closure="flat")
            errs.append(abs(m.volumes().sum() - exact) / exact)
        info["detail"] = f"n=64 {errs[0]:.3%} n=128 {errs[1]:.3%}"
        assert errs[0] < 0.02
        assert errs[1] < errs[0]


def test_c08_weighting_scheme():
    with criterion(8, "weighting scheme") as info:
        assert float(compute_weights(0.0, -10.0, 0.0)[0]) == 0.0
        assert float(compute_weights(-10.0, -10.0, 0.0)[0]) == 1.0
        rng = np.random.default_rng(8)
        n = 10 ** 6
        w_min = -rng.uniform(0.1, 30, size=n)
        w_l = rng.uniform(w_min - 5, 5)
        W, _ = compute_weights(w_l, w_min, 0.0)
        u_cs, u_l = rng.normal(size=n), rng.normal(size=n)
        v_cs, v_l = rng.normal(size=n), rng.normal(size=n)
        u, v = fuse_inplane(u_cs, v_cs, u_l, v_l, W)
        lo_u, hi_u = np.minimum(u_cs, u_l), np.maximum(u_cs, u_l)
        lo_v, hi_v = np.minimum(v_cs, v_l), np.maximum(v_cs, v_l)
        eps = 1e-12
        bad = int(np.sum((u < lo_u - eps) | (u > hi_u + eps) | (v < lo_v - eps) | (v > hi_v + eps)))
        info["detail"] = f"W in [{W.min():.3f}, {W.max():.3f}], {bad} non-convex of {n}"
        assert W.min() >= 0.0 and W.max() <= 1.0
        assert bad == 0


def test_c09_stacom_cohort_range(tmp_path):
    with criterion(9, "STACOM cohort range"):
        root = os.environ.get(STACOM_ENV)
        if not root:
            pytest.skip(f"{STACOM_ENV} not set")
        bundles = sorted(os.path.dirname(p) for p in glob.glob(os.path.join(root, "*", "study.json")))
        if not bundles:
            pytest.skip(f"no study bundles under {root}")
        ranges = {"Err": (0.27, 0.13), "Ecc": (-0.12, 0.04), "Ell": (-0.05, 0.06)}
        for i, b in enumerate(bundles):
            res = run_pipeline(PipelineConfig(bundle=b, out_dir=str(tmp_path / str(i))))
            for c, (mu, sd) in ranges.items():
                assert mu - 2 * sd <= res.global_peaks[c] <= mu + 2 * sd, (b, c)


def test_c10_determinism(contractile_twice):
    root, _, _ = contractile_twice
    with criterion(10, "determinism") as info:
        a, b = root / "a", root / "b"
        files = sorted(os.path.relpath(p, a) for p in glob.glob(str(a / "**" / "*"), recursive=True)
                       if p.endswith((".vtk", ".csv")))
        assert files
        same = [f for f in files if filecmp.cmp(a / f, b / f, shallow=False)]
        info["detail"] = f"{len(same)} of {len(files)} VTK/CSV files identical"
        assert len(same) == len(files)
