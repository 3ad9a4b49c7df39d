"""Loop-shaped numeric kernels.

Each kernel has a numba ``@njit`` implementation and a pure-numpy one with
identical outputs. The numba path is used when numba imports and the
environment variable ``RECBENCH_DISABLE_NUMBA`` is unset or "0"; set it to
"1" to force the numpy path (``benchmarks/bench_kernels.py`` times both).
"""

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("RECBENCH_DISABLE_NUMBA", "0") in ("", "0")


# ---------------------------------------------------------------- pair codes


def _pair_codes_numpy(flat, offsets, n_items):
    chunks = []
    for s in range(len(offsets) - 1):
        items = flat[offsets[s] : offsets[s + 1]]
        if len(items) < 2:
            continue
        iu, ju = np.triu_indices(len(items), k=1)
        a, b = items[iu], items[ju]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        chunks.append(lo * n_items + hi)
    if not chunks:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(chunks).astype(np.int64)


def _pair_codes_loop(flat, offsets, n_items):
    total = 0
    for s in range(len(offsets) - 1):
        m = offsets[s + 1] - offsets[s]
        total += m * (m - 1) // 2
    out = np.empty(total, dtype=np.int64)
    pos = 0
    for s in range(len(offsets) - 1):
        start = offsets[s]
        stop = offsets[s + 1]
        for p in range(start, stop):
            for q in range(p + 1, stop):
                a = flat[p]
                b = flat[q]
                if a < b:
                    out[pos] = a * n_items + b
                else:
                    out[pos] = b * n_items + a
                pos += 1
    return out


# -------------------------------------------------------------------- maxpool


def _maxpool_forward_numpy(x, ph, pw):
    b, h, w, c = x.shape
    po, pq = h // ph, w // pw
    win = x[:, : po * ph, : pq * pw, :].reshape(b, po, ph, pq, pw, c)
    win = win.transpose(0, 1, 3, 5, 2, 4).reshape(b, po, pq, c, ph * pw)
    arg = np.argmax(win, axis=-1)  # first maximum in row-major window order
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg.astype(np.int64)


def _maxpool_forward_loop(x, ph, pw):
    b, h, w, c = x.shape
    po, pq = h // ph, w // pw
    out = np.empty((b, po, pq, c))
    arg = np.empty((b, po, pq, c), dtype=np.int64)
    for n in range(b):
        for i in range(po):
            for j in range(pq):
                for ch in range(c):
                    best = x[n, i * ph, j * pw, ch]
                    best_k = 0
                    for di in range(ph):
                        for dj in range(pw):
                            v = x[n, i * ph + di, j * pw + dj, ch]
                            if v > best:
                                best = v
                                best_k = di * pw + dj
                    out[n, i, j, ch] = best
                    arg[n, i, j, ch] = best_k
    return out, arg


def _maxpool_backward_numpy(grad_out, arg, in_shape, ph, pw):
    b, po, pq, c = grad_out.shape
    onehot = np.zeros((b, po, pq, c, ph * pw))
    np.put_along_axis(onehot, arg[..., None], grad_out[..., None], axis=-1)
    win = onehot.reshape(b, po, pq, c, ph, pw).transpose(0, 1, 4, 2, 5, 3)
    grad_in = np.zeros(in_shape)
    grad_in[:, : po * ph, : pq * pw, :] = win.reshape(b, po * ph, pq * pw, c)
    return grad_in


def _maxpool_backward_loop(grad_out, arg, in_shape, ph, pw):
    b, po, pq, c = grad_out.shape
    grad_in = np.zeros(in_shape)
    for n in range(b):
        for i in range(po):
            for j in range(pq):
                for ch in range(c):
                    k = arg[n, i, j, ch]
                    grad_in[n, i * ph + k // pw, j * pw + k % pw, ch] += grad_out[n, i, j, ch]
    return grad_in


# ------------------------------------------------------------------- ILD curve


def _ild_curve_numpy(emb):
    k = emb.shape[0]
    norms = np.sqrt((emb * emb).sum(axis=1))
    safe = np.where(norms > 0, norms, 1.0)
    unit = emb / safe[:, None]
    sim = (1.0 + np.clip(unit @ unit.T, -1.0, 1.0)) / 2.0
    np.fill_diagonal(sim, 0.0)
    out = np.zeros(k)
    # pair (i, j) with i > j first enters the list at size i + 1
    added = 2.0 * np.tril(sim, -1).sum(axis=1)
    running = np.cumsum(added)
    for m in range(2, k + 1):
        out[m - 1] = 1.0 - running[m - 1] / (m * (m - 1))
    return out


def _ild_curve_loop(emb):
    k, d = emb.shape
    norms = np.empty(k)
    for i in range(k):
        s = 0.0
        for t in range(d):
            s += emb[i, t] * emb[i, t]
        norms[i] = np.sqrt(s)
    out = np.zeros(k)
    running = 0.0
    for i in range(k):
        for j in range(i):
            dot = 0.0
            for t in range(d):
                dot += emb[i, t] * emb[j, t]
            if norms[i] > 0.0 and norms[j] > 0.0:
                cos = min(1.0, max(-1.0, dot / (norms[i] * norms[j])))
            else:
                cos = 0.0
            running += 2.0 * (1.0 + cos) / 2.0
        if i >= 1:
            out[i] = 1.0 - running / ((i + 1) * i)
    return out


if HAS_NUMBA:
    _pair_codes_numba = njit(cache=True)(_pair_codes_loop)
    _maxpool_forward_numba = njit(cache=True)(_maxpool_forward_loop)
    _maxpool_backward_numba = njit(cache=True)(_maxpool_backward_loop)
    _ild_curve_numba = njit(cache=True)(_ild_curve_loop)
else:  # pragma: no cover
    _pair_codes_numba = _pair_codes_loop
    _maxpool_forward_numba = _maxpool_forward_loop
    _maxpool_backward_numba = _maxpool_backward_loop
    _ild_curve_numba = _ild_curve_loop


def pair_codes(flat, offsets, n_items, use_numba=None):
    """Encode every unordered pair inside each session as ``lo * n_items + hi``.

    ``flat`` holds the concatenated (already de-duplicated) session items and
    ``offsets`` the session boundaries, CSR style.
    """
    flat = np.ascontiguousarray(flat, dtype=np.int64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    if USE_NUMBA if use_numba is None else use_numba:
        return _pair_codes_numba(flat, offsets, np.int64(n_items))
    return _pair_codes_numpy(flat, offsets, n_items)


def maxpool_forward(x, ph, pw, use_numba=None):
    """Non-overlapping max-pool over (B, H, W, C); returns values and window argmax."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if USE_NUMBA if use_numba is None else use_numba:
        return _maxpool_forward_numba(x, ph, pw)
    return _maxpool_forward_numpy(x, ph, pw)


def maxpool_backward(grad_out, arg, in_shape, ph, pw, use_numba=None):
    grad_out = np.ascontiguousarray(grad_out, dtype=np.float64)
    arg = np.ascontiguousarray(arg, dtype=np.int64)
    if USE_NUMBA if use_numba is None else use_numba:
        return _maxpool_backward_numba(grad_out, arg, tuple(in_shape), ph, pw)
    return _maxpool_backward_numpy(grad_out, arg, tuple(in_shape), ph, pw)


def ild_curve(emb, use_numba=None):
    """ILD@m for m = 1..k over the rows of ``emb`` taken in order (ILD@1 = 0)."""
    emb = np.ascontiguousarray(emb, dtype=np.float64)
    if USE_NUMBA if use_numba is None else use_numba:
        return _ild_curve_numba(emb)
    return _ild_curve_numpy(emb)
