import numpy as np
import pytest

from rankfuse import _backend, _fallback

try:
    from rankfuse import _kernels
except ImportError:  # extension not built
    _kernels = None

BACKENDS = ["python"] + (["cython"] if _kernels is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per available kernel implementation."""
    impl = _fallback if request.param == "python" else _kernels
    for name in ("rank_hinge", "maxpool2x2_forward", "maxpool2x2_backward"):
        monkeypatch.setattr(_backend, name, getattr(impl, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
