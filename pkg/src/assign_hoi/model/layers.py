"""Building blocks: attention, binary Gumbel-Softmax, MLPs, class-indexed GRU."""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence


def scaled_dot_attention(query, values):
    """Attention of one query over a set of vectors used as keys and values.

    Parameters
    ----------
    query : tensor [d]
    values : tensor [n, d]
        May be empty (``n == 0``).

    Returns
    -------
    context : tensor [d]
        Zero when ``values`` is empty.
    weights : tensor [n]
    """
    query = torch.as_tensor(query)
    values = torch.as_tensor(values, dtype=query.dtype)
    if values.ndim == 1:
        values = values.reshape(-1, query.shape[-1]) if values.numel() else values.reshape(0, query.shape[-1])
    if values.shape[-1] != query.shape[-1]:
        raise ValueError(f"dimension mismatch: query {query.shape[-1]}, values {values.shape[-1]}")
    if values.shape[0] == 0:
        return torch.zeros_like(query), query.new_zeros(0)
    weights = torch.softmax(values @ query / math.sqrt(query.shape[-1]), dim=0)
    return weights @ values, weights


def masked_attention(query, keys, values, mask, scale_dim):
    """Batched neighbour attention.

    ``query``/``keys``/``values`` are ``[..., N, d]``; ``mask[..., i, j]`` says
    whether entity ``i`` may attend to ``j``. Rows without any neighbour get
    zero weights and a zero context.
    """
    scores = query @ keys.transpose(-1, -2) / math.sqrt(scale_dim)
    has = mask.any(dim=-1, keepdim=True)
    scores = scores.masked_fill(~mask, float("-inf")).masked_fill(~has, 0.0)
    weights = torch.softmax(scores, dim=-1) * has
    return weights @ values, weights


def sample_gumbel(shape, generator=None, dtype=torch.float32):
    u = torch.rand(shape, generator=generator, dtype=dtype)
    tiny = torch.finfo(dtype).tiny
    return -torch.log((-torch.log(u.clamp(tiny, 1.0))).clamp_min(tiny))


def gumbel_softmax_binary(logits, temperature=1.0, hard=True, mode="train", noise=None,
                          generator=None):
    """Binary boundary decision from ``[..., 2]`` logits (boundary first).

    Train mode perturbs the logits with Gumbel noise and relaxes the argmax
    with a tempered softmax; with ``hard`` the returned ``u_hard`` is the 0/1
    argmax carrying the gradient of ``u_soft`` (straight-through). Eval mode
    is noiseless: ``u_soft = sigmoid(l0 - l1)``, ``u_hard = u_soft > 0.5``.

    Returns ``(u_hard, u_soft)``.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if mode == "eval":
        u_soft = torch.sigmoid(logits[..., 0] - logits[..., 1])
        return (u_soft > 0.5).to(u_soft.dtype), u_soft
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    if noise is None:
        noise = sample_gumbel(logits.shape, generator, logits.dtype)
    y = torch.softmax((logits + noise) / temperature, dim=-1)
    u_soft = y[..., 0]
    decided = (y[..., 0] > y[..., 1]).to(u_soft.dtype)
    if not hard:
        return decided, u_soft
    return decided - u_soft.detach() + u_soft, u_soft


class MLP(nn.Sequential):
    def __init__(self, in_dim, widths, out_dim):
        layers = []
        prev = in_dim
        for w in widths:
            layers += [nn.Linear(prev, w), nn.ReLU()]
            prev = w
        layers.append(nn.Linear(prev, out_dim))
        super().__init__(*layers)


def _select(x, cls):
    """Pick, per row, the class block of ``x [R, ..., C, k]`` indexed by ``cls [R]``."""
    C = x.shape[-2]
    onehot = F.one_hot(cls.clamp_min(0), C).to(x.dtype)
    shape = (cls.shape[0],) + (1,) * (x.ndim - 3) + (C, 1)
    return (x * onehot.view(shape)).sum(dim=-2)


class ClassGRU(nn.Module):
    """GRU cell with one weight set per entity class (PyTorch gate layout).

    Rows of a batch carry a class index; each row is advanced with its own
    class's weights. Projections of inputs that are known in advance can be
    computed for the whole sequence at once with :meth:`project`.
    """

    def __init__(self, input_size, hidden_size, num_classes=2):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.num_classes = num_classes
        H3 = 3 * hidden_size
        self.weight_ih = nn.Parameter(torch.empty(num_classes, H3, input_size))
        self.weight_hh = nn.Parameter(torch.empty(num_classes, H3, hidden_size))
        self.bias_ih = nn.Parameter(torch.empty(num_classes, H3))
        self.bias_hh = nn.Parameter(torch.empty(num_classes, H3))
        self.reset_parameters()

    def reset_parameters(self):
        bound = 1.0 / math.sqrt(self.hidden_size)
        for p in self.parameters():
            nn.init.uniform_(p, -bound, bound)

    def project(self, x, cls, cols=slice(None), bias=True):
        """Input gates ``W_ih[:, :, cols] @ x`` for rows of class ``cls``.

        ``x`` is ``[R, ..., k]`` where ``k`` matches the selected columns.
        """
        w = self.weight_ih[:, :, cols]
        C, H3, k = w.shape
        out = (x @ w.reshape(C * H3, k).T).unflatten(-1, (C, H3))
        if bias:
            out = out + self.bias_ih
        return _select(out, cls)

    def step(self, gi, h, cls):
        C, H3, H = self.weight_hh.shape
        gh = (h @ self.weight_hh.reshape(C * H3, H).T).unflatten(-1, (C, H3)) + self.bias_hh
        gh = _select(gh, cls)
        i_r, i_z, i_n = gi.chunk(3, dim=-1)
        h_r, h_z, h_n = gh.chunk(3, dim=-1)
        r = torch.sigmoid(i_r + h_r)
        z = torch.sigmoid(i_z + h_z)
        n = torch.tanh(i_n + r * h_n)
        return (1 - z) * n + z * h

    def weights_for(self, c):
        return self.weight_ih[c], self.weight_hh[c], self.bias_ih[c], self.bias_hh[c]


def class_birnn(rnns, features, cls, lengths, hidden_size):
    """Run a per-class bidirectional ``nn.GRU`` over padded entity sequences.

    ``features`` is ``[B, N, T, D]``, ``cls`` ``[B, N]`` indexes ``rnns`` (a
    sequence of modules, one per class; -1 marks padding) and ``lengths`` is
    ``[B]``. Padded frames and entities get zero states.
    """
    B, N, T, _ = features.shape
    feats = features.reshape(B * N, T, -1)
    flat_cls = cls.reshape(-1)
    flat_len = lengths.repeat_interleave(N)
    out = feats.new_zeros(B * N, T, 2 * hidden_size)
    for c, rnn in enumerate(rnns):
        rows = torch.nonzero(flat_cls == c).flatten()
        if rows.numel() == 0:
            continue
        packed = pack_padded_sequence(feats[rows], flat_len[rows], batch_first=True,
                                      enforce_sorted=False)
        h, _ = rnn(packed)
        h, _ = pad_packed_sequence(h, batch_first=True, total_length=T)
        out = out.index_copy(0, rows, h)
    return out.view(B, N, T, -1)
