import numpy as np
import pytest

from strainforge.fusion import assemble_samples, deform_mesh
from strainforge.mesh import tetrahedralize
from strainforge.phantom import make_preset, sample_views, write_phantom_bundle
from strainforge.pipeline import PipelineConfig, run_pipeline
from strainforge.pointcloud import build_point_cloud


def annulus_rings(n=64, levels=9, Ri=25.0, Ro=35.0, h=80.0, phase=0.0):
    th = 2 * np.pi * np.arange(n) / n + phase
    zs = np.linspace(h, 0.0, levels)
    endo = [np.c_[Ri * np.cos(th), Ri * np.sin(th), np.full(n, z)] for z in zs]
    epi = [np.c_[Ro * np.cos(th), Ro * np.sin(th), np.full(n, z)] for z in zs]
    return endo, epi


class PhantomRun:
    """Phantom study pushed through point cloud, mesh and fusion in memory."""

    def __init__(self, preset, extrapolation="nearest", **layout):
        self.phantom = make_preset(preset)
        self.study = sample_views(self.phantom, **layout)
        self.cloud = build_point_cloud(self.study)
        self.mesh = tetrahedralize(self.cloud.endo_rings(), self.cloud.epi_rings(), 3, "flat")
        self.sax, self.lax = assemble_samples(self.cloud)
        self.motion = deform_mesh(self.mesh, self.sax, self.lax, extrapolation=extrapolation)

    def phantom_coords(self, lv_points):
        # LV frame of a phantom study differs from phantom coords by a z shift
        return np.asarray(lv_points) + [0.0, 0.0, self.phantom.h / 2]


@pytest.fixture(scope="session")
def contractile_run():
    return PhantomRun("contractile")


@pytest.fixture(scope="session")
def pipeline_outputs(tmp_path_factory):
    """One CLI-equivalent pipeline run per preset, shared across tests."""
    cache = {}

    def get(preset):
        if preset not in cache:
            root = tmp_path_factory.mktemp(preset)
            write_phantom_bundle(str(root / "bundle"), preset)
            cfg = PipelineConfig(bundle=str(root / "bundle"), out_dir=str(root / "out"))
            cache[preset] = (cfg, run_pipeline(cfg))
        return cache[preset]

    return get


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
