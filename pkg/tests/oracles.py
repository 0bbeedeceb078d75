"""Brute-force loop references, deliberately independent of the library kernels."""

import math

import numpy as np


def segments(values, lengths):
    out, r = [], 0
    for n in lengths:
        out.append([list(map(float, values[r + j])) for j in range(n)])
        r += n
    return out


def matmul(a, b):
    n, k = len(a), len(b)
    m = len(b[0]) if b else 0
    return [[sum(a[i][p] * b[p][j] for p in range(k)) for j in range(m)] for i in range(n)]


def transpose(a, ncols=None):
    if not a:
        return [[] for _ in range(ncols or 0)]
    return [list(col) for col in zip(*a)]


def softmax(row):
    m = max(row)
    e = [math.exp(x - m) for x in row]
    s = sum(e)
    return [x / s for x in e]


def attention(q, k, v):
    """Three-loop self-attention of one segment (lists of rows)."""
    n = len(q)
    if n == 0:
        return []
    d = len(q[0])
    out = []
    for i in range(n):
        scores = [sum(q[i][c] * k[j][c] for c in range(d)) / math.sqrt(d) for j in range(n)]
        p = softmax(scores)
        out.append([sum(p[j] * v[j][c] for j in range(n)) for c in range(len(v[0]))])
    return out


def logsumexp(q, k):
    d = len(q[0])
    res = []
    for i in range(len(q)):
        scores = [sum(q[i][c] * k[j][c] for c in range(d)) / math.sqrt(d) for j in range(len(k))]
        m = max(scores)
        res.append(m + math.log(sum(math.exp(s - m) for s in scores)))
    return res


def cross_attention(targets, k, v):
    """Each target row attends over the segment rows ``k``/``v``; empty segment gives zeros."""
    d = len(targets[0])
    if not k:
        return [[0.0] * d for _ in targets]
    out = []
    for t in targets:
        p = softmax([sum(t[c] * kr[c] for c in range(d)) / math.sqrt(d) for kr in k])
        out.append([sum(p[j] * v[j][c] for j in range(len(k))) for c in range(d)])
    return out


def flat(rows):
    return np.array([x for r in rows for x in r], dtype=np.float64)
