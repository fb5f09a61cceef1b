import os
import subprocess
import sys

import numpy as np
import pytest

from tonekd import kernels
from tonekd.ctc import extended_target


def random_instance(rng, T, U, V):
    logits = rng.normal(size=(T, V))
    lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    y = list(rng.integers(1, V, size=U))
    return lp, extended_target(y)


@pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba unavailable")
class TestBackendAgreement:
    def test_ctc_paths_agree(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            T = int(rng.integers(3, 12))
            U = int(rng.integers(0, max(1, T // 2)))
            lp, ext = random_instance(rng, T, U, 4)
            l_np, g_np = kernels.ctc_forward_backward_numpy(lp, ext)
            l_nb, g_nb = kernels.ctc_forward_backward_numba(lp, ext)
            assert abs(l_np - l_nb) <= 1e-12
            assert np.abs(g_np - g_nb).max() <= 1e-12

    def test_conv_paths_agree(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            T, d, K = int(rng.integers(2, 20)), int(rng.integers(1, 8)), 5
            x = rng.normal(size=(T, d))
            k = rng.normal(size=(K, d))
            g = rng.normal(size=(T, d))
            assert np.abs(kernels.conv_forward_numpy(x, k)
                          - kernels.conv_forward_numba(x, k)).max() <= 1e-12
            dx_np, dk_np = kernels.conv_backward_numpy(g, x, k)
            dx_nb, dk_nb = kernels.conv_backward_numba(g, x, k)
            assert np.abs(dx_np - dx_nb).max() <= 1e-12
            assert np.abs(dk_np - dk_nb).max() <= 1e-12


def test_infeasible_returns_infinite_loss_both_paths():
    lp = np.log(np.full((2, 3), 1.0 / 3.0))
    ext = extended_target([1, 1])  # needs T >= 3
    loss_np, grad_np = kernels.ctc_forward_backward_numpy(lp, ext)
    assert np.isinf(loss_np) and loss_np > 0
    assert np.all(grad_np == 0)
    if kernels.HAS_NUMBA:
        loss_nb, _ = kernels.ctc_forward_backward_numba(lp, ext)
        assert np.isinf(loss_nb) and loss_nb > 0


@pytest.mark.parametrize("flag,expected", [("0", "numpy"), ("1", "numba")])
def test_env_flag_selects_backend(flag, expected):
    if expected == "numba" and not kernels.HAS_NUMBA:
        pytest.skip("numba unavailable")
    env = dict(os.environ, TONEKD_NUMBA=flag)
    out = subprocess.run(
        [sys.executable, "-c",
         "from tonekd import kernels; print(kernels.backend_name())"],
        capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == expected


def test_alpha_beta_consistency():
    # the posterior columns must sum to the path total at every frame
    rng = np.random.default_rng(2)
    lp, ext = random_instance(rng, 6, 2, 4)
    loss, grad = kernels.ctc_forward_backward_numpy(lp, ext)
    # gradient rows sum to -1: each frame emits exactly one symbol
    assert np.abs(grad.sum(axis=1) + 1.0).max() <= 1e-9
