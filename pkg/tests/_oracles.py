"""Independent reference implementations used by the tests.

Each oracle is written from the definition, without importing the code it
checks, so a shared bug cannot make both sides agree.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from fractions import Fraction

import numpy as np
import torch


# --- gradients -------------------------------------------------------------


def finite_difference_check(model, batch, loss_fn, h=1e-3, floor=1e-8):
    """Central differences for every parameter element of a float64 model.

    Returns ``{name: max_rel_err}`` where the error of a tensor is the largest
    absolute deviation divided by the largest gradient magnitude in that
    tensor (floored so all-zero tensors compare absolutely).
    """
    model.zero_grad(set_to_none=True)
    loss_fn(model, batch).backward()
    analytic = {n: (torch.zeros_like(p) if p.grad is None else p.grad.detach().clone())
                for n, p in model.named_parameters()}
    out = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            numeric = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn(model, batch).item()
                flat[i] = orig - h
                down = loss_fn(model, batch).item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * h)
            a = analytic[name].view(-1)
            scale = max(a.abs().max().item(), numeric.abs().max().item(), floor)
            out[name] = (a - numeric).abs().max().item() / scale
    return out


# --- optimizer -------------------------------------------------------------


def scalar_adamw(theta, grads, lr, wd, b1, b2, eps, decay=True):
    """Plain-float AdamW trajectory for a single scalar parameter."""
    m = v = 0.0
    path = []
    for t, g in enumerate(grads, 1):
        if decay:
            theta = theta - lr * wd * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        path.append(theta)
    return path


# --- trees -----------------------------------------------------------------


def bfs_distances(n, edges):
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    dist = [[-1] * n for _ in range(n)]
    for s in range(n):
        dist[s][s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for w in adj[u]:
                if dist[s][w] < 0:
                    dist[s][w] = dist[s][u] + 1
                    q.append(w)
    return dist


def prufer_decode(seq, n):
    degree = [1] * n
    for x in seq:
        degree[x] += 1
    edges = []
    for x in seq:
        leaf = min(i for i in range(n) if degree[i] == 1)
        edges.append((leaf, x))
        degree[leaf] -= 1
        degree[x] -= 1
    u, v = [i for i in range(n) if degree[i] == 1]
    edges.append((u, v))
    return edges


def all_spanning_trees(n):
    if n == 1:
        yield []
        return
    if n == 2:
        yield [(0, 1)]
        return
    for seq in itertools.product(range(n), repeat=n - 2):
        yield prufer_decode(seq, n)


def brute_force_mst_weight(weights):
    n = len(weights)
    return min(sum(weights[u][v] for u, v in tree) for tree in all_spanning_trees(n))


# --- least squares ---------------------------------------------------------


def exact_lstsq(X, y):
    """Solve the normal equations in exact rational arithmetic."""
    Xf = [[Fraction(float(v)) for v in row] for row in X]
    yf = [Fraction(float(v)) for v in y]
    p = len(Xf[0])
    A = [[sum(r[i] * r[j] for r in Xf) for j in range(p)] for i in range(p)]
    b = [sum(r[i] * t for r, t in zip(Xf, yf)) for i in range(p)]
    for col in range(p):
        piv = next(r for r in range(col, p) if A[r][col] != 0)
        A[col], A[piv] = A[piv], A[col]
        b[col], b[piv] = b[piv], b[col]
        for r in range(p):
            if r != col and A[r][col] != 0:
                f = A[r][col] / A[col][col]
                A[r] = [a - f * c for a, c in zip(A[r], A[col])]
                b[r] -= f * b[col]
    beta = [b[i] / A[i][i] for i in range(p)]
    rss = sum((t - sum(c * x for c, x in zip(beta, r))) ** 2 for r, t in zip(Xf, yf))
    return [float(c) for c in beta], float(rss)


def gaussian_loglik(rss, n):
    sigma2 = max(rss / n, 1e-12)
    return -n / 2 * (math.log(2 * math.pi * sigma2) + 1)


# --- planted probe structure -----------------------------------------------


def planted_hiddens(sentences, d=32, noise=0.05, seed=0):
    """Word vectors whose squared distances equal tree distances up to a rotation.

    Word i sits at the sum of one unit vector per edge on its path to the
    root, each edge's direction indexed by its child's position. Distinct
    edges are orthogonal, so ``|h_i - h_j|^2`` is the path length. A random
    rotation hides the axes and isotropic noise blurs them.
    """
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    out = []
    for s in sentences:
        n = len(s.heads)
        if n > d:
            raise ValueError("sentence longer than the embedding size")
        coords = np.zeros((n, d))
        for i in range(n):
            v = i
            while s.heads[v] != 0:
                coords[i, v] += 1.0
                v = s.heads[v] - 1
        out.append(coords @ Q.T + rng.normal(0, noise, size=(n, d)))
    return out


def random_heads(n, rng):
    """Heads (1-based, 0 = root) of a uniformly shuffled random recursive tree."""
    perm = rng.permutation(n)
    heads = [0] * n
    for k in range(1, n):
        heads[perm[k]] = int(perm[rng.integers(0, k)]) + 1
    return heads
