"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import itertools
import math

import numpy as np
import torch

from assign_hoi.data import Segmentation


def interval_iou(a, b):
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union else 0.0


def optimal_matches(pred: Segmentation, gt: Segmentation, k: float) -> int:
    """Largest number of same-label pairs with IoU >= k, by exhaustive search."""
    P, G = list(pred), list(gt)
    ok = [[p[2] == g[2] and interval_iou(p, g) + 1e-9 >= k for g in G] for p in P]
    best = 0
    # each prediction picks a distinct gt index or nothing (-1)
    for choice in itertools.product(range(-1, len(G)), repeat=len(P)):
        used = [c for c in choice if c >= 0]
        if len(used) != len(set(used)):
            continue
        best = max(best, sum(1 for i, c in enumerate(choice) if c >= 0 and ok[i][c]))
    return best


def random_tiling(rng, T, max_segments, num_labels):
    n = int(rng.integers(1, min(max_segments, T) + 1))
    cuts = sorted(rng.choice(np.arange(1, T), size=n - 1, replace=False).tolist()) if n > 1 else []
    bounds = [0] + cuts + [T]
    labels = rng.integers(num_labels, size=n).tolist()
    return Segmentation(tuple(zip(bounds[:-1], bounds[1:], labels)))


def rle(labels):
    """Run-length encoding by plain iteration."""
    out = []
    for t, v in enumerate(labels):
        if out and out[-1][2] == v:
            out[-1][1] = t + 1
        else:
            out.append([t, t + 1, v])
    return [tuple(x) for x in out]


def gaussian_target(pulse, sigma):
    pos = np.flatnonzero(pulse)
    t = np.arange(len(pulse))
    if pos.size == 0:
        return np.zeros(len(pulse))
    return np.max(np.exp(-((t[None] - pos[:, None]) ** 2) / (2 * sigma**2)), axis=0)


def confusion_f1(pred, gt):
    """Micro and macro F1 (percent) from an explicit confusion matrix."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    classes = sorted(set(gt.tolist()) | set(pred.tolist()))
    micro = 100.0 * float(np.mean(pred == gt))
    f1s = []
    for c in sorted(set(gt.tolist())):
        tp = np.sum((pred == c) & (gt == c))
        fp = np.sum((pred == c) & (gt != c))
        fn = np.sum((pred != c) & (gt == c))
        f1s.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    del classes
    return micro, 100.0 * float(np.mean(f1s))


def dense_bigru(cell_weights_fwd, cell_weights_bwd, z):
    """Bidirectional GRU over ``z [L, Z]`` with ``nn.GRU`` loaded from given weights."""
    w_ih, w_hh, b_ih, b_hh = cell_weights_fwd
    H = w_hh.shape[1]
    gru = torch.nn.GRU(z.shape[-1], H, batch_first=True, bidirectional=True).to(z.dtype)
    with torch.no_grad():
        gru.weight_ih_l0.copy_(w_ih)
        gru.weight_hh_l0.copy_(w_hh)
        gru.bias_ih_l0.copy_(b_ih)
        gru.bias_hh_l0.copy_(b_hh)
        w_ih, w_hh, b_ih, b_hh = cell_weights_bwd
        gru.weight_ih_l0_reverse.copy_(w_ih)
        gru.weight_hh_l0_reverse.copy_(w_hh)
        gru.bias_ih_l0_reverse.copy_(b_ih)
        gru.bias_hh_l0_reverse.copy_(b_hh)
        out, _ = gru(z[None])
    return out[0]


def central_difference(f, param, eps=1e-6):
    """Numerical gradient of scalar ``f()`` w.r.t. every entry of ``param``."""
    grad = torch.zeros_like(param)
    flat = param.data.view(-1)
    g = grad.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + eps
        up = f().item()
        flat[i] = old - eps
        down = f().item()
        flat[i] = old
        g[i] = (up - down) / (2 * eps)
    return grad


def ln(x):
    return math.log(x)
