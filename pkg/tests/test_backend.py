"""Kernel parity between the jit path and the numpy fallback."""

import numpy as np
import pytest

from empersona import backend


def _rand(rng, *shape):
    return rng.standard_normal(shape).astype(np.float32)


def both_impls():
    impls = backend.implementations()
    if "numba" not in impls:
        pytest.skip("numba backend not available")
    return impls["numpy"], impls["numba"]


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(7)


def test_active_backend_is_declared():
    assert backend.ACTIVE_BACKEND in ("numba", "numpy")
    assert callable(backend.softmax_rows)


def test_softmax_parity(rng):
    np_i, nb_i = both_impls()
    for shape in [(1, 1), (3, 5), (17, 64), (64, 321)]:
        x = _rand(rng, *shape) * 10
        a, b = np_i["softmax_rows"](x), nb_i["softmax_rows"](x)
        np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-7)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, rtol=1e-5)


def test_masked_softmax_parity(rng):
    np_i, nb_i = both_impls()
    x = _rand(rng, 12, 20) * 5
    keep = rng.random((12, 20)) < 0.6
    keep[:, 0] = True  # no fully-masked rows
    a = np_i["softmax_rows_masked"](x, keep)
    b = nb_i["softmax_rows_masked"](x, keep)
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-7)
    assert (a[~keep] == 0).all()


def test_masked_softmax_rejects_empty_row(rng):
    for impl in backend.implementations().values():
        x = _rand(rng, 3, 4)
        keep = np.ones((3, 4), dtype=bool)
        keep[1] = False
        with pytest.raises(ValueError):
            impl["softmax_rows_masked"](x, keep)


def test_softmax_grad_parity(rng):
    np_i, nb_i = both_impls()
    x = _rand(rng, 9, 13)
    y = np_i["softmax_rows"](x)
    g = _rand(rng, 9, 13)
    np.testing.assert_allclose(np_i["softmax_rows_grad"](y, g),
                               nb_i["softmax_rows_grad"](y, g),
                               rtol=1e-6, atol=1e-7)


def test_layernorm_parity(rng):
    np_i, nb_i = both_impls()
    x = _rand(rng, 11, 32) * 3 + 1
    (ya, inva), (yb, invb) = np_i["layernorm_rows"](x, 1e-5), nb_i["layernorm_rows"](x, 1e-5)
    np.testing.assert_allclose(ya, yb, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(inva, invb, rtol=1e-5, atol=1e-6)
    g = _rand(rng, 11, 32)
    np.testing.assert_allclose(np_i["layernorm_rows_grad"](ya, inva, g),
                               nb_i["layernorm_rows_grad"](yb, invb, g),
                               rtol=1e-5, atol=1e-6)


def test_cross_entropy_parity(rng):
    np_i, nb_i = both_impls()
    logits = _rand(rng, 10, 37) * 4
    targets = rng.integers(0, 37, size=10)
    (la, pa), (lb, pb) = (np_i["cross_entropy_rows"](logits, targets),
                          nb_i["cross_entropy_rows"](logits, targets))
    np.testing.assert_allclose(la, lb, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(pa, pb, rtol=1e-6, atol=1e-7)
    gl = _rand(rng, 10)
    np.testing.assert_allclose(np_i["cross_entropy_rows_grad"](pa, targets, gl),
                               nb_i["cross_entropy_rows_grad"](pb, targets, gl),
                               rtol=1e-6, atol=1e-7)


def test_adaptive_update_parity(rng):
    np_i, nb_i = both_impls()
    p0 = _rand(rng, 6, 8)
    g = _rand(rng, 6, 8)
    v0 = np.abs(_rand(rng, 6, 8))
    pa, va = p0.copy(), v0.copy()
    pb, vb = p0.copy(), v0.copy()
    np_i["adaptive_update"](pa, g, va, 1e-3, 0.999, 1e-8, 1.0 - 0.999**3)
    nb_i["adaptive_update"](pb, g, vb, 1e-3, 0.999, 1e-8, 1.0 - 0.999**3)
    np.testing.assert_allclose(pa, pb, rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(va, vb, rtol=1e-6, atol=1e-7)
    assert not np.array_equal(pa, p0)


def test_cross_entropy_matches_uniform_hand_value():
    # equal logits: loss is ln(V) in every row regardless of target
    for impl in backend.implementations().values():
        logits = np.zeros((4, 7), dtype=np.float32)
        losses, probs = impl["cross_entropy_rows"](logits, np.array([0, 2, 4, 6]))
        np.testing.assert_allclose(losses, np.log(7.0), rtol=1e-6)
        np.testing.assert_allclose(probs, 1.0 / 7.0, rtol=1e-6)
