"""Parity between the numba kernels and their pure-numpy fallbacks."""

import math
import os
import subprocess
import sys

import numpy as np
import pytest

from clickseg import kernels
from clickseg.features import extract_features
from clickseg.synth import SynthSpec, generate_scene
from clickseg.config import SynthScalars


@pytest.fixture(scope="module")
def scene_inputs():
    scene = generate_scene(SynthSpec(seed=4, scalars=SynthScalars(points_scale=0.25)))
    feats = extract_features(scene, 10)
    neigh = kernels.knn(scene.points, 10)
    return scene, feats, np.ascontiguousarray(neigh)


@pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")
class TestPathParity:

    def test_region_grow_identical(self, scene_inputs):
        scene, feats, neigh = scene_inputs
        args = (
            neigh,
            np.ascontiguousarray(feats.normals),
            np.ascontiguousarray(scene.colors),
            math.cos(0.35),
            0.25,
            10,
            5000,
        )
        a = kernels.region_grow_numba(*args)
        b = kernels.region_grow_python(*args)
        np.testing.assert_array_equal(a, b)

    def test_energy_identical(self, rng):
        m, c = 20, 4
        w = rng.uniform(0, 1, (m, m))
        w = (w + w.T) / 2
        np.fill_diagonal(w, 0)
        psi = rng.uniform(0, 5, (m, c))
        for _ in range(20):
            lab = rng.integers(0, c, m)
            assert kernels.energy_numba(w, psi, lab) == kernels.energy_python(w, psi, lab)


class TestEnvFlag:
    def test_disable_flag_selects_numpy_path(self):
        code = (
            "from clickseg import kernels\n"
            "assert kernels.USE_NUMBA is False\n"
            "assert kernels._knn_impl is kernels.knn_numpy\n"
            "assert kernels._mf_impl is kernels.mean_field_numpy\n"
            "print('numpy path active')\n"
        )
        env = dict(os.environ, CLICKSEG_NO_NUMBA="1")
        out = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True
        )
        assert out.returncode == 0, out.stderr
        assert "numpy path active" in out.stdout

    def test_default_prefers_numba_when_available(self):
        if kernels.HAVE_NUMBA and not os.environ.get("CLICKSEG_NO_NUMBA"):
            assert kernels.USE_NUMBA
