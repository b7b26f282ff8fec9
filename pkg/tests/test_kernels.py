"""Backend parity: the compiled kernels must agree with the numpy
fallback on every kernel, both directions, masked and unmasked."""

import numpy as np
import pytest

import sarcattn.kernels as kernels
from sarcattn.kernels import pykernels

try:
    from sarcattn.kernels import _ckernels
except ImportError:
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None,
                               reason="compiled kernels not built")

TOL = dict(rtol=1e-12, atol=1e-13)


def test_backend_selected():
    assert kernels.BACKEND in ("python", "cython")


@needs_ext
def test_masked_softmax_parity():
    rng = np.random.default_rng(0)
    x = np.ascontiguousarray(rng.normal(scale=4, size=(50, 9)))
    mask = rng.random((50, 9)) > 0.3
    mask[:, 4] = True
    m8 = np.ascontiguousarray(mask, dtype=np.uint8)
    np.testing.assert_allclose(pykernels.masked_softmax_fwd(x, mask),
                               _ckernels.masked_softmax_fwd(x, m8), **TOL)
    np.testing.assert_allclose(pykernels.masked_softmax_fwd(x, None),
                               _ckernels.masked_softmax_fwd(x, None), **TOL)
    p = _ckernels.masked_softmax_fwd(x, m8)
    assert (p[~mask] == 0.0).all()
    g = np.ascontiguousarray(rng.normal(size=(50, 9)))
    np.testing.assert_allclose(pykernels.softmax_bwd(p, g),
                               _ckernels.softmax_bwd(p, g), **TOL)


@needs_ext
def test_layernorm_parity():
    rng = np.random.default_rng(1)
    x = np.ascontiguousarray(rng.normal(size=(40, 16)))
    gain = rng.normal(size=16)
    bias = rng.normal(size=16)
    y1, xh1, i1 = pykernels.layernorm_fwd(x, gain, bias, 1e-5)
    y2, xh2, i2 = _ckernels.layernorm_fwd(x, gain, bias, 1e-5)
    np.testing.assert_allclose(y1, y2, **TOL)
    np.testing.assert_allclose(xh1, xh2, **TOL)
    np.testing.assert_allclose(i1, i2, **TOL)
    g = np.ascontiguousarray(rng.normal(size=(40, 16)))
    for a, b in zip(pykernels.layernorm_bwd(g, xh1, i1, gain),
                    _ckernels.layernorm_bwd(g, xh2, i2, gain)):
        np.testing.assert_allclose(a, b, **TOL)


@needs_ext
@pytest.mark.parametrize("reverse", [False, True])
def test_gru_sequence_parity(reverse):
    rng = np.random.default_rng(2)
    b, n, u = 6, 9, 5
    xg = np.ascontiguousarray(rng.normal(size=(b, n, 3 * u)))
    ur, uz, uh = (np.ascontiguousarray(rng.normal(scale=0.4, size=(u, u)))
                  for _ in range(3))
    lengths = np.array([9, 4, 1, 7, 9, 2], dtype=np.int64)
    h1, c1 = pykernels.gru_seq_fwd(xg, ur, uz, uh, lengths, reverse)
    h2, c2 = _ckernels.gru_seq_fwd(xg, ur, uz, uh, lengths, reverse)
    np.testing.assert_allclose(h1, h2, **TOL)
    for a, b_ in zip(c1, c2):
        np.testing.assert_allclose(a, b_, **TOL)
    g = np.ascontiguousarray(rng.normal(size=h1.shape))
    for a, b_ in zip(pykernels.gru_seq_bwd(g, ur, uz, uh, lengths, reverse, c1),
                     _ckernels.gru_seq_bwd(g, ur, uz, uh, lengths, reverse, c2)):
        np.testing.assert_allclose(a, b_, **TOL)


def test_gru_padded_steps_leave_state_and_grads_untouched():
    rng = np.random.default_rng(3)
    b, n, u = 3, 6, 4
    xg = rng.normal(size=(b, n, 3 * u))
    ur, uz, uh = (rng.normal(scale=0.4, size=(u, u)) for _ in range(3))
    lengths = np.array([6, 2, 4], dtype=np.int64)
    h, cache = pykernels.gru_seq_fwd(xg, ur, uz, uh, lengths, False)
    # corrupting the padded region of the inputs must not change anything
    xg2 = xg.copy()
    xg2[1, 2:] = 1e6
    xg2[2, 4:] = -1e6
    h2, _ = pykernels.gru_seq_fwd(xg2, ur, uz, uh, lengths, False)
    np.testing.assert_array_equal(h, h2)
    g = rng.normal(size=(b, u))
    dxg, *_ = pykernels.gru_seq_bwd(g, ur, uz, uh, lengths, False, cache)
    assert (dxg[1, 2:] == 0.0).all()
    assert (dxg[2, 4:] == 0.0).all()


def test_env_override_is_validated(monkeypatch):
    import importlib
    import sarcattn.kernels as k
    monkeypatch.setenv("SARCATTN_KERNELS", "nonsense")
    with pytest.raises(RuntimeError):
        importlib.reload(k)
    monkeypatch.setenv("SARCATTN_KERNELS", "python")
    importlib.reload(k)
    assert k.BACKEND == "python"
    monkeypatch.delenv("SARCATTN_KERNELS")
    importlib.reload(k)
