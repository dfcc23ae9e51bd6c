"""Numeric kernels: numba-jitted fast path with a pure-numpy fallback.

The hot inner loops of training (row softmax, layer norm, token
cross-entropy, the optimizer update) are implemented twice: once with
numba ``@njit`` and once in plain vectorized numpy. Matrix products are
left to numpy/BLAS in both paths.

Selection is done once at import time via the ``EMPERSONA_BACKEND``
environment variable:

* unset        -> numba when importable, numpy otherwise
* ``numba``    -> require the jit path (raises if numba is missing)
* ``numpy``    -> force the fallback path

Each backend is individually deterministic; the two backends agree to
floating-point tolerance, not bit-for-bit (summation order differs).
``benchmarks/bench_kernels.py`` compares their throughput.
"""

import os

import numpy as np

__all__ = [
    "ACTIVE_BACKEND",
    "NUMBA_AVAILABLE",
    "softmax_rows",
    "softmax_rows_masked",
    "softmax_rows_grad",
    "layernorm_rows",
    "layernorm_rows_grad",
    "cross_entropy_rows",
    "cross_entropy_rows_grad",
    "adaptive_update",
    "implementations",
]


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def _np_softmax_rows(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def _np_softmax_rows_masked(x, keep):
    if not keep.any(axis=1).all():
        raise ValueError("softmax: some row has every position masked")
    shifted = np.where(keep, x, -np.inf)
    m = shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted - m)
    return e / e.sum(axis=1, keepdims=True)


def _np_softmax_rows_grad(y, gout):
    # d softmax: y * (g - <g, y>) per row; rows with masked entries have y == 0
    # there, so the same formula covers the masked case.
    dot = (gout * y).sum(axis=1, keepdims=True)
    return y * (gout - dot)


def _np_layernorm_rows(x, eps):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    y = (x - mu) * inv
    return y, inv[:, 0].copy()


def _np_layernorm_rows_grad(y, inv, gout):
    gm = gout.mean(axis=1, keepdims=True)
    gy = (gout * y).mean(axis=1, keepdims=True)
    return inv[:, None] * (gout - gm - y * gy)


def _np_cross_entropy_rows(logits, targets):
    n = logits.shape[0]
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    probs = e / s
    lse = (np.log(s) + m)[:, 0]
    losses = lse - logits[np.arange(n), targets]
    return losses, probs


def _np_cross_entropy_rows_grad(probs, targets, gl):
    g = probs * gl[:, None]
    g[np.arange(probs.shape[0]), targets] -= gl
    return g


def _np_adaptive_update(p, g, v, lr, decay, eps, bias_fix):
    one = p.dtype.type(1.0)
    v *= p.dtype.type(decay)
    v += (one - p.dtype.type(decay)) * g * g
    p -= p.dtype.type(lr) * g / (np.sqrt(v / p.dtype.type(bias_fix)) + p.dtype.type(eps))


_NUMPY_IMPL = {
    "softmax_rows": _np_softmax_rows,
    "softmax_rows_masked": _np_softmax_rows_masked,
    "softmax_rows_grad": _np_softmax_rows_grad,
    "layernorm_rows": _np_layernorm_rows,
    "layernorm_rows_grad": _np_layernorm_rows_grad,
    "cross_entropy_rows": _np_cross_entropy_rows,
    "cross_entropy_rows_grad": _np_cross_entropy_rows_grad,
    "adaptive_update": _np_adaptive_update,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba_impl():
    from numba import njit

    # Accumulators are float64 locals regardless of array dtype; stores narrow
    # back to the array dtype. Deterministic either way.

    @njit(cache=True)
    def nb_softmax_rows(x):
        n, w = x.shape
        out = np.empty_like(x)
        for i in range(n):
            m = x[i, 0]
            for j in range(1, w):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(w):
                e = np.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(w):
                out[i, j] /= s
        return out

    @njit(cache=True)
    def nb_softmax_rows_masked(x, keep):
        n, w = x.shape
        out = np.empty_like(x)
        for i in range(n):
            m = 0.0
            seen = False
            for j in range(w):
                if keep[i, j] and (not seen or x[i, j] > m):
                    m = x[i, j]
                    seen = True
            if not seen:
                raise ValueError("softmax: some row has every position masked")
            s = 0.0
            for j in range(w):
                if keep[i, j]:
                    e = np.exp(x[i, j] - m)
                    out[i, j] = e
                    s += e
                else:
                    out[i, j] = 0.0
            for j in range(w):
                out[i, j] /= s
        return out

    @njit(cache=True)
    def nb_softmax_rows_grad(y, gout):
        n, w = y.shape
        out = np.empty_like(y)
        for i in range(n):
            dot = 0.0
            for j in range(w):
                dot += gout[i, j] * y[i, j]
            for j in range(w):
                out[i, j] = y[i, j] * (gout[i, j] - dot)
        return out

    @njit(cache=True)
    def nb_layernorm_rows(x, eps):
        n, w = x.shape
        y = np.empty_like(x)
        inv = np.empty_like(x[:, 0])
        for i in range(n):
            mu = 0.0
            for j in range(w):
                mu += x[i, j]
            mu /= w
            var = 0.0
            for j in range(w):
                d = x[i, j] - mu
                var += d * d
            var /= w
            r = 1.0 / np.sqrt(var + eps)
            inv[i] = r
            for j in range(w):
                y[i, j] = (x[i, j] - mu) * r
        return y, inv

    @njit(cache=True)
    def nb_layernorm_rows_grad(y, inv, gout):
        n, w = y.shape
        out = np.empty_like(y)
        for i in range(n):
            gm = 0.0
            gy = 0.0
            for j in range(w):
                gm += gout[i, j]
                gy += gout[i, j] * y[i, j]
            gm /= w
            gy /= w
            for j in range(w):
                out[i, j] = inv[i] * (gout[i, j] - gm - y[i, j] * gy)
        return out

    @njit(cache=True)
    def nb_cross_entropy_rows(logits, targets):
        n, w = logits.shape
        probs = np.empty_like(logits)
        losses = np.empty_like(logits[:, 0])
        for i in range(n):
            m = logits[i, 0]
            for j in range(1, w):
                if logits[i, j] > m:
                    m = logits[i, j]
            s = 0.0
            for j in range(w):
                e = np.exp(logits[i, j] - m)
                probs[i, j] = e
                s += e
            for j in range(w):
                probs[i, j] /= s
            losses[i] = np.log(s) + m - logits[i, targets[i]]
        return losses, probs

    @njit(cache=True)
    def nb_cross_entropy_rows_grad(probs, targets, gl):
        n, w = probs.shape
        out = np.empty_like(probs)
        for i in range(n):
            for j in range(w):
                out[i, j] = probs[i, j] * gl[i]
            out[i, targets[i]] -= gl[i]
        return out

    @njit(cache=True)
    def nb_adaptive_update(p, g, v, lr, decay, eps, bias_fix):
        n = p.shape[0]
        for i in range(n):
            v[i] = decay * v[i] + (1.0 - decay) * g[i] * g[i]
            p[i] -= lr * g[i] / (np.sqrt(v[i] / bias_fix) + eps)

    def nb_adaptive_update_nd(p, g, v, lr, decay, eps, bias_fix):
        nb_adaptive_update(p.reshape(-1), g.reshape(-1), v.reshape(-1),
                           lr, decay, eps, bias_fix)

    return {
        "softmax_rows": nb_softmax_rows,
        "softmax_rows_masked": nb_softmax_rows_masked,
        "softmax_rows_grad": nb_softmax_rows_grad,
        "layernorm_rows": nb_layernorm_rows,
        "layernorm_rows_grad": nb_layernorm_rows_grad,
        "cross_entropy_rows": nb_cross_entropy_rows,
        "cross_entropy_rows_grad": nb_cross_entropy_rows_grad,
        "adaptive_update": nb_adaptive_update_nd,
    }


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

_requested = os.environ.get("EMPERSONA_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ValueError(
        f"EMPERSONA_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

NUMBA_AVAILABLE = False
_NUMBA_IMPL = None
if _requested != "numpy":
    try:
        _NUMBA_IMPL = _build_numba_impl()
        NUMBA_AVAILABLE = True
    except ImportError:
        if _requested == "numba":
            raise

ACTIVE_BACKEND = "numba" if NUMBA_AVAILABLE else "numpy"
_impl = _NUMBA_IMPL if NUMBA_AVAILABLE else _NUMPY_IMPL

softmax_rows = _impl["softmax_rows"]
softmax_rows_masked = _impl["softmax_rows_masked"]
softmax_rows_grad = _impl["softmax_rows_grad"]
layernorm_rows = _impl["layernorm_rows"]
layernorm_rows_grad = _impl["layernorm_rows_grad"]
cross_entropy_rows = _impl["cross_entropy_rows"]
cross_entropy_rows_grad = _impl["cross_entropy_rows_grad"]
adaptive_update = _impl["adaptive_update"]


def implementations():
    """Return {'numpy': {...}, 'numba': {...}} for parity tests and benchmarks.

    The numba entry is present only when numba is importable and the backend
    was not forced to numpy.
    """
    impls = {"numpy": _NUMPY_IMPL}
    if _NUMBA_IMPL is not None:
        impls["numba"] = _NUMBA_IMPL
    return impls
