"""Hot numeric kernels: numba-jitted fast path with a pure-numpy fallback.

The inner loops that dominate training time are the per-edge scatter/gather
used by the graph convolutions and the width-preserving 1D convolution of
the matcher. Everything else in the package is plain BLAS-backed numpy.

Backend selection:
  * env var ``TKGMATCH_BACKEND`` in {auto, numba, numpy}, read at import;
  * ``select_backend()`` switches at runtime (tests and benchmarks).

The numba kernels are serial and compiled without fastmath so both backends
produce the same floating-point results up to summation-order rounding.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# pure-numpy implementations


def _np_segment_sum(values, groups, num_groups):
    out = np.zeros((num_groups, values.shape[1]), dtype=np.float64)
    np.add.at(out, groups, values)
    return out


def _np_index_add_rows(acc, idx, rows):
    np.add.at(acc, idx, rows)


def _np_conv1d_same(x, k):
    pad = (k.shape[2] - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, k.shape[2], axis=2)
    return np.einsum("bhwj,chj->bcw", windows, k, optimize=True)


def _np_conv1d_grad_input(g, k):
    pad = (k.shape[2] - 1) // 2
    gp = np.pad(g, ((0, 0), (0, 0), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(gp, k.shape[2], axis=2)
    return np.einsum("bcwj,chj->bhw", windows, k[:, :, ::-1], optimize=True)


def _np_conv1d_grad_kernels(g, x, kw):
    pad = (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, kw, axis=2)
    return np.einsum("bcw,bhwj->chj", g, windows, optimize=True)


_NUMPY_IMPL = {
    "segment_sum": _np_segment_sum,
    "index_add_rows": _np_index_add_rows,
    "conv1d_same": _np_conv1d_same,
    "conv1d_grad_input": _np_conv1d_grad_input,
    "conv1d_grad_kernels": _np_conv1d_grad_kernels,
}


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_segment_sum(values, groups, num_groups):
        out = np.zeros((num_groups, values.shape[1]), dtype=np.float64)
        for i in range(groups.shape[0]):
            g = groups[i]
            for j in range(values.shape[1]):
                out[g, j] += values[i, j]
        return out

    @njit(cache=True)
    def _nb_index_add_rows(acc, idx, rows):
        for i in range(idx.shape[0]):
            r = idx[i]
            for j in range(rows.shape[1]):
                acc[r, j] += rows[i, j]

    @njit(cache=True)
    def _nb_conv1d_same(x, k):
        nb_, h, w = x.shape
        nk, _, kw = k.shape
        pad = (kw - 1) // 2
        out = np.zeros((nb_, nk, w), dtype=np.float64)
        for b in range(nb_):
            for c in range(nk):
                for pos in range(w):
                    acc = 0.0
                    for row in range(h):
                        for j in range(kw):
                            src = pos + j - pad
                            if 0 <= src < w:
                                acc += x[b, row, src] * k[c, row, j]
                    out[b, c, pos] = acc
        return out

    @njit(cache=True)
    def _nb_conv1d_grad_input(g, k):
        nb_, nk, w = g.shape
        _, h, kw = k.shape
        pad = (kw - 1) // 2
        dx = np.zeros((nb_, h, w), dtype=np.float64)
        for b in range(nb_):
            for c in range(nk):
                for pos in range(w):
                    gv = g[b, c, pos]
                    for row in range(h):
                        for j in range(kw):
                            src = pos + j - pad
                            if 0 <= src < w:
                                dx[b, row, src] += gv * k[c, row, j]
        return dx

    @njit(cache=True)
    def _nb_conv1d_grad_kernels(g, x, kw):
        nb_, nk, w = g.shape
        h = x.shape[1]
        pad = (kw - 1) // 2
        dk = np.zeros((nk, h, kw), dtype=np.float64)
        for b in range(nb_):
            for c in range(nk):
                for pos in range(w):
                    gv = g[b, c, pos]
                    for row in range(h):
                        for j in range(kw):
                            src = pos + j - pad
                            if 0 <= src < w:
                                dk[c, row, j] += gv * x[b, row, src]
        return dk

    _NUMBA_IMPL = {
        "segment_sum": _nb_segment_sum,
        "index_add_rows": _nb_index_add_rows,
        "conv1d_same": _nb_conv1d_same,
        "conv1d_grad_input": _nb_conv1d_grad_input,
        "conv1d_grad_kernels": _nb_conv1d_grad_kernels,
    }
else:
    _NUMBA_IMPL = None

IMPLS = {"numpy": _NUMPY_IMPL}
if _NUMBA_IMPL is not None:
    IMPLS["numba"] = _NUMBA_IMPL

_active_name = None
_active = None


def select_backend(name):
    """Activate a kernel backend ("numpy", "numba", or "auto")."""
    global _active_name, _active
    if name == "auto":
        name = "numba" if "numba" in IMPLS else "numpy"
    if name not in IMPLS:
        raise RuntimeError(
            f"kernel backend {name!r} unavailable (have: {sorted(IMPLS)})"
        )
    _active_name = name
    _active = IMPLS[name]
    return name


def active_backend():
    return _active_name


select_backend(os.environ.get("TKGMATCH_BACKEND", "auto"))


# ---------------------------------------------------------------------------
# public entry points (dispatch through the active backend)


def segment_sum(values, groups, num_groups):
    """Sum rows of ``values`` into ``num_groups`` buckets given by ``groups``."""
    return _active["segment_sum"](values, groups, num_groups)


def index_add_rows(acc, idx, rows):
    """In-place ``acc[idx[i]] += rows[i]`` with repeated indices accumulated."""
    _active["index_add_rows"](acc, idx, rows)


def conv1d_same(x, k):
    """Width-preserving 1D convolution of (B, H, W) inputs with (K, H, KW) kernels."""
    return _active["conv1d_same"](x, k)


def conv1d_grad_input(g, k):
    return _active["conv1d_grad_input"](g, k)


def conv1d_grad_kernels(g, x, kw):
    return _active["conv1d_grad_kernels"](g, x, kw)
