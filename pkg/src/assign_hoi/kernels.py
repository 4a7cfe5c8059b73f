"""Array kernels shared by the data, metric and model code.

Every kernel exists twice: an explicit-loop version that numba compiles, and
a vectorised numpy version. ``ASSIGN_HOI_NUMBA=0`` (or a missing numba)
selects numpy; any public function also accepts ``backend=`` to pick one
explicitly, which the tests and ``benchmarks/bench_kernels.py`` rely on.
"""
import math

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA, njit

DEFAULT_BACKEND = "numba" if USE_NUMBA else "numpy"

# IoU comparisons against k tolerate float rounding of exact ratios.
IOU_EPS = 1e-9


# --------------------------------------------------------------------------
# loop implementations (numba targets)
# --------------------------------------------------------------------------


def _run_lengths_loop(labels):
    n = labels.shape[0]
    if n == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    count = 1
    for t in range(1, n):
        if labels[t] != labels[t - 1]:
            count += 1
    starts = np.empty(count, dtype=np.int64)
    ends = np.empty(count, dtype=np.int64)
    values = np.empty(count, dtype=np.int64)
    k = 0
    starts[0] = 0
    values[0] = labels[0]
    for t in range(1, n):
        if labels[t] != labels[t - 1]:
            ends[k] = t
            k += 1
            starts[k] = t
            values[k] = labels[t]
    ends[k] = n
    return starts, ends, values


def _boundary_target_loop(pulse, sigma):
    n = pulse.shape[0]
    out = np.zeros(n, dtype=np.float64)
    denom = 2.0 * sigma * sigma
    for p in range(n):
        if pulse[p] == 0:
            continue
        for t in range(n):
            d = t - p
            v = math.exp(-(d * d) / denom)
            if v > out[t]:
                out[t] = v
    return out


def _greedy_match_loop(ps, pe, pl, gs, ge, gl, k):
    n_gt = gs.shape[0]
    claimed = np.zeros(n_gt, dtype=np.bool_)
    tp = 0
    fp = 0
    for i in range(ps.shape[0]):
        best = -1
        best_iou = -1.0
        for j in range(n_gt):
            if claimed[j] or gl[j] != pl[i]:
                continue
            inter = min(pe[i], ge[j]) - max(ps[i], gs[j])
            if inter < 0:
                inter = 0
            union = max(pe[i], ge[j]) - min(ps[i], gs[j])
            iou = inter / union if union > 0 else 0.0
            if iou > best_iou:
                best_iou = iou
                best = j
        if best >= 0 and best_iou + 1e-9 >= k:
            claimed[best] = True
            tp += 1
        else:
            fp += 1
    return tp, fp, n_gt - tp


def _closing_frames_loop(u):
    rows, n = u.shape
    out = np.empty((rows, n), dtype=np.int64)
    for r in range(rows):
        nxt = -1
        for t in range(n - 1, -1, -1):
            if u[r, t]:
                nxt = t
            out[r, t] = nxt
    return out


def _proximity_count_loop(ref, other, window):
    # ref sorted ascending; counts entries of other lying in [r, r + window]
    # for at least one r in ref
    count = 0
    for b in other:
        for r in ref:
            if r <= b <= r + window:
                count += 1
                break
    return count


def _confusion_loop(pred, gt, n):
    out = np.zeros((n, n), dtype=np.int64)
    for t in range(pred.shape[0]):
        out[gt[t], pred[t]] += 1
    return out


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------


def _run_lengths_np(labels):
    n = labels.shape[0]
    if n == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    change = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate(([0], change)).astype(np.int64)
    ends = np.concatenate((change, [n])).astype(np.int64)
    return starts, ends, labels[starts].astype(np.int64)


def _boundary_target_np(pulse, sigma):
    pos = np.flatnonzero(pulse)
    n = pulse.shape[0]
    if pos.size == 0:
        return np.zeros(n)
    d = np.arange(n)[:, None] - pos[None, :]
    return np.exp(-(d * d) / (2.0 * sigma * sigma)).max(axis=1)


def _greedy_match_np(ps, pe, pl, gs, ge, gl, k):
    claimed = np.zeros(gs.shape[0], dtype=bool)
    tp = fp = 0
    for i in range(ps.shape[0]):
        inter = np.clip(np.minimum(pe[i], ge) - np.maximum(ps[i], gs), 0, None)
        union = np.maximum(pe[i], ge) - np.minimum(ps[i], gs)
        iou = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
        iou[(gl != pl[i]) | claimed] = -1.0
        if iou.size and iou.max() >= 0 and iou.max() + IOU_EPS >= k:
            claimed[int(np.argmax(iou))] = True
            tp += 1
        else:
            fp += 1
    return tp, fp, gs.shape[0] - tp


def _closing_frames_np(u):
    rows, n = u.shape
    big = np.iinfo(np.int64).max
    idx = np.where(u.astype(bool), np.arange(n)[None, :], big)
    nxt = np.minimum.accumulate(idx[:, ::-1], axis=1)[:, ::-1]
    return np.where(nxt == big, -1, nxt).astype(np.int64)


def _proximity_count_np(ref, other, window):
    if ref.size == 0 or other.size == 0:
        return 0
    # latest ref not after b must lie within the window
    pos = np.searchsorted(ref, other, side="right") - 1
    ok = pos >= 0
    gap = other[ok] - ref[pos[ok]]
    return int(np.count_nonzero(gap <= window))


def _confusion_np(pred, gt, n):
    return np.bincount(gt * n + pred, minlength=n * n).reshape(n, n).astype(np.int64)


_NUMPY = {
    "run_lengths": _run_lengths_np,
    "boundary_target": _boundary_target_np,
    "greedy_match": _greedy_match_np,
    "closing_frames": _closing_frames_np,
    "proximity_count": _proximity_count_np,
    "confusion": _confusion_np,
}

_LOOPS = {
    "run_lengths": _run_lengths_loop,
    "boundary_target": _boundary_target_loop,
    "greedy_match": _greedy_match_loop,
    "closing_frames": _closing_frames_loop,
    "proximity_count": _proximity_count_loop,
    "confusion": _confusion_loop,
}

_NUMBA = {name: njit(fn) for name, fn in _LOOPS.items()} if HAVE_NUMBA else {}


def available_backends():
    return ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]


def _impl(name, backend):
    backend = backend or DEFAULT_BACKEND
    if backend == "numba":
        if not HAVE_NUMBA:
            raise ValueError("numba backend requested but numba is not installed")
        return _NUMBA[name]
    if backend == "numpy":
        return _NUMPY[name]
    raise ValueError(f"unknown kernel backend {backend!r}")


# --------------------------------------------------------------------------
# public entry points
# --------------------------------------------------------------------------


def run_lengths(labels, backend=None):
    """Maximal runs of equal values.

    Returns ``(starts, ends, values)`` as int64 arrays; runs are half-open.
    """
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    return _impl("run_lengths", backend)(labels)


def boundary_target(pulse, sigma, backend=None):
    """Max-combined Gaussian bumps of width ``sigma`` centred on pulses."""
    pulse = np.ascontiguousarray(pulse, dtype=np.int64)
    return _impl("boundary_target", backend)(pulse, float(sigma))


def greedy_match(pred, gt, k, backend=None):
    """Greedy temporal-order segment matching at IoU threshold ``k``.

    ``pred`` and ``gt`` are ``(starts, ends, labels)`` triples of arrays.
    Returns ``(tp, fp, fn)``.
    """
    ps, pe, pl = (np.ascontiguousarray(a, dtype=np.int64) for a in pred)
    gs, ge, gl = (np.ascontiguousarray(a, dtype=np.int64) for a in gt)
    tp, fp, fn = _impl("greedy_match", backend)(ps, pe, pl, gs, ge, gl, float(k))
    return int(tp), int(fp), int(fn)


def closing_frames(u, backend=None):
    """For every frame, the index of the first update frame at or after it.

    ``u`` is a ``[rows, T]`` 0/1 array; frames with no later update get -1.
    """
    u = np.ascontiguousarray(u, dtype=np.bool_)
    if u.ndim != 2:
        raise ValueError("closing_frames expects a 2-d array")
    return _impl("closing_frames", backend)(u)


def proximity_count(ref, other, window, backend=None):
    """Number of ``other`` entries lying in ``[r, r + window]`` for some ``r`` in ``ref``."""
    ref = np.sort(np.ascontiguousarray(ref, dtype=np.int64))
    other = np.ascontiguousarray(other, dtype=np.int64)
    return int(_impl("proximity_count", backend)(ref, other, int(window)))


def confusion(pred, gt, n, backend=None):
    """``n x n`` confusion counts, rows indexed by ground truth."""
    pred = np.ascontiguousarray(pred, dtype=np.int64)
    gt = np.ascontiguousarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError("pred and gt must have equal length")
    return _impl("confusion", backend)(pred, gt, int(n))
