import os
import subprocess
import sys

import pytest

from tracelab import _kernels_py, kernels

try:
    from tracelab import _kernels as _kernels_c
except ImportError:  # pragma: no cover
    _kernels_c = None

needs_ext = pytest.mark.skipif(_kernels_c is None, reason="compiled extension not built")


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@needs_ext
def test_extension_is_default_backend():
    if os.environ.get("TRACELAB_PURE_PYTHON") != "1":
        assert kernels.BACKEND == "cython"


def test_env_var_forces_python():
    out = subprocess.run(
        [sys.executable, "-c", "from tracelab import kernels; print(kernels.BACKEND)"],
        env={**os.environ, "TRACELAB_PURE_PYTHON": "1"},
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "python"


@needs_ext
@pytest.mark.parametrize("seed", [0, 1, 2**63 + 5, 2**64 - 1])
def test_streams_identical(seed):
    assert _kernels_c.uniforms(seed, 64) == _kernels_py.uniforms(seed, 64)
    assert _kernels_c.mix64(seed) == _kernels_py.mix64(seed)


@needs_ext
@pytest.mark.parametrize(
    "n,p,flags",
    [
        (1, 0.5, (True, True)),
        (3, 0.5, (True, True)),
        (6, 0.2, (True, True)),
        (9, 0.05, (True, True)),
        (4, 0.7, (True, False)),
        (4, 0.3, (False, True)),
        (2, 1.0, (False, True)),
        (5, 0.0, (True, True)),
    ],
)
def test_trials_identical(n, p, flags):
    for seed in range(25):
        a = _kernels_c.convergence_trial(n, p, seed, 10**6, *flags)
        b = _kernels_py.convergence_trial(n, p, seed, 10**6, *flags)
        assert a == b


@pytest.mark.parametrize("impl", [_kernels_py] + ([_kernels_c] if _kernels_c else []))
def test_edge_cases(impl):
    assert impl.convergence_trial(1, 1.0, 9, 10) == 1
    assert impl.convergence_trial(2, 1.0, 9, 10) == -1
    assert impl.convergence_trial(3, 0.0, 9, 10) == -1
    assert impl.convergence_trial(3, 0.5, 9, 1) == -1  # 3 hops cannot converge in 1 packet


@pytest.mark.parametrize("impl", [_kernels_py] + ([_kernels_c] if _kernels_c else []))
def test_uniforms_in_unit_interval(impl):
    u = impl.uniforms(42, 1000)
    assert all(0.0 < x <= 1.0 for x in u)
