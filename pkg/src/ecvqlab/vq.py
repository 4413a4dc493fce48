"""Codebooks, discrete index priors, and the VQ / entropy-constrained VQ
encoding rules.

Conventions used throughout the package:

- distortion d(x, c) is the mean squared error per dimension;
- rate is measured in bits (log base 2);
- the ECVQ encoder cost of index i is ``-log2 p_i + lam * d(x, c_i)``,
  minimized over i with ties broken toward the lowest index.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MLP
from .validation import check_probabilities, check_samples

__all__ = [
    "Codebook", "LogitPrior", "ConditionalPrior", "UsageStats",
    "probs", "vq_encode", "ecvq_encode", "ecvq_encode_rows", "decode",
    "rd_cost", "kmeanspp_init", "reinit_dead", "sq_dist_per_dim",
]


class Codebook:
    """An ordered set of trainable codewords in R^k."""

    def __init__(self, codewords, name="codebook"):
        codewords = np.asarray(codewords, dtype=np.float64)
        if codewords.ndim != 2 or codewords.shape[0] < 1:
            raise ValueError(f"codewords must be (N, k) with N >= 1, got {codewords.shape}")
        if not np.all(np.isfinite(codewords)):
            raise ValueError("codewords must be finite")
        self.tensor = Tensor(codewords.copy(), requires_grad=True, name=name)

    @property
    def codewords(self):
        return self.tensor.data

    @property
    def size(self):
        return self.tensor.data.shape[0]

    @property
    def dim(self):
        return self.tensor.data.shape[1]


class LogitPrior:
    """Discrete index distribution p_i proportional to exp(-w_i)."""

    def __init__(self, n, name="logits", init=None):
        data = np.zeros(n) if init is None else np.asarray(init, dtype=np.float64).copy()
        if data.shape != (n,):
            raise ValueError(f"logit init shape {data.shape} != ({n},)")
        self.tensor = Tensor(data, requires_grad=True, name=name)

    @property
    def size(self):
        return self.tensor.data.shape[0]

    @property
    def logits(self):
        return self.tensor.data

    def probs(self):
        w = self.tensor.data
        e = np.exp(-(w - w.min()))
        return e / e.sum()

    def probs_tensor(self):
        """Autodiff path used inside training losses."""
        return ad.softmax(ad.scale(self.tensor, -1.0), axis=-1)

    def copy_index_params(self, dst, src):
        self.tensor.data[dst] = self.tensor.data[src]


class ConditionalPrior:
    """Index distribution whose logits come from a small conditioning MLP.

    The network maps a conditioning vector to N logits; probabilities use
    the same negated-logit softmax convention as :class:`LogitPrior`.
    """

    def __init__(self, cond_dim, n, rng, hidden=64, name="cond_prior"):
        self.cond_dim = cond_dim
        self.n = n
        self.net = MLP(cond_dim, [hidden, n], rng, name=name)

    def logits_tensor(self, cond):
        return self.net(cond)

    def probs_tensor(self, cond):
        return ad.softmax(ad.scale(self.net(cond), -1.0), axis=-1)

    def probs_given(self, cond):
        """Probability rows (B, N) for numpy conditioning input."""
        cond = np.asarray(cond, dtype=np.float64)
        squeeze = cond.ndim == 1
        if squeeze:
            cond = cond[None, :]
        with ad.no_grad():
            w = self.net(Tensor(cond)).data
        w = -(w - w.max(axis=1, keepdims=True))
        e = np.exp(w)
        p = e / e.sum(axis=1, keepdims=True)
        return p[0] if squeeze else p

    def copy_index_params(self, dst, src):
        final = self.net.layers[-1]
        final.w.data[:, dst] = final.w.data[:, src]
        final.b.data[dst] = final.b.data[src]

    def params(self):
        return self.net.params()


class UsageStats:
    """Per-index hit counts over a training window."""

    def __init__(self, n):
        self.counts = np.zeros(n, dtype=np.int64)

    @property
    def total(self):
        return int(self.counts.sum())

    def update(self, indices):
        self.counts += np.bincount(np.asarray(indices), minlength=self.counts.size)

    def frequencies(self):
        total = self.total
        if total == 0:
            raise ValueError("usage window is empty")
        return self.counts / total

    def reset(self):
        self.counts[:] = 0


# ---------------------------------------------------------------------------
# encoding rules


def sq_dist_per_dim(x, codewords):
    """Per-dimension squared distances between rows of x and codewords.

    Returns (n, N); computed via the expanded quadratic form so the inner
    product runs through BLAS.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d2 = (x * x).sum(axis=1)[:, None] + (codewords * codewords).sum(axis=1)[None, :]
    d2 -= 2.0 * (x @ codewords.T)
    np.maximum(d2, 0.0, out=d2)
    return d2 / codewords.shape[1]


def _cost_argmin(X, codewords, bias=None, bias_rows=None):
    """Row-wise argmin of bias_i + d(x, c_i), skipping per-row constants.

    The per-row ||x||^2 term of the expanded squared distance cannot change
    the argmin, so the scored matrix is a single BLAS product plus one
    broadcast add; ties resolve to the lowest index via argmin.
    """
    k = codewords.shape[1]
    cost = X @ (codewords.T * (-2.0 / k))
    per_index = (codewords * codewords).sum(axis=1) / k
    if bias is not None:
        per_index = per_index + bias
    cost += per_index[None, :]
    if bias_rows is not None:
        cost += bias_rows
    return np.argmin(cost, axis=1)


def probs(prior):
    """Probability vector of a logit prior: p_i = exp(-w_i)/sum exp(-w_j)."""
    return prior.probs()


def vq_encode(x, cb):
    """Nearest-codeword index (lowest index wins ties).

    Accepts a single vector or an (n, k) batch; returns an int or an int
    array accordingly.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = check_samples(x, dim=cb.dim)
    idx = _cost_argmin(X, cb.codewords)
    return int(idx[0]) if single else idx


def ecvq_encode(x, cb, p, lam):
    """Index minimizing -log2 p_i + lam * d(x, c_i); ties to lowest index."""
    p = check_probabilities(p, n=cb.size)
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = check_samples(x, dim=cb.dim)
    neg_log = -np.log2(p)
    if lam == 0:
        idx = np.full(X.shape[0], int(np.argmin(neg_log)), dtype=np.int64)
    else:
        idx = _cost_argmin(X, cb.codewords, bias=neg_log / lam)
    return int(idx[0]) if single else idx


def ecvq_encode_rows(X, cb, p_rows, lam):
    """ECVQ with a per-row probability vector (conditional priors).

    Row i minimizes -log2 p_rows[i, j] + lam * d(X[i], c_j).
    """
    X = check_samples(X, dim=cb.dim)
    p_rows = np.asarray(p_rows, dtype=np.float64)
    if p_rows.shape != (X.shape[0], cb.size):
        raise ValueError(f"p_rows shape {p_rows.shape} != ({X.shape[0]}, {cb.size})")
    if np.any(p_rows <= 0):
        raise ValueError("p_rows must be strictly positive")
    if lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    with np.errstate(divide="ignore"):
        bias_rows = -np.log2(p_rows) / lam
    return _cost_argmin(X, cb.codewords, bias_rows=bias_rows)


def decode(index, cb):
    """Look up codeword(s) for the given index or index array."""
    idx = np.asarray(index)
    if np.any(idx < 0) or np.any(idx >= cb.size):
        raise IndexError(f"index out of range for codebook of size {cb.size}")
    return cb.codewords[index].copy()


def rd_cost(x, index, cb, p, lam):
    """Per-sample rate-distortion cost -log2 p_i + lam * d(x, c_i)."""
    p = check_probabilities(p, n=cb.size)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        diff = x - cb.codewords[index]
        return float(-np.log2(p[index]) + lam * (diff * diff).mean())
    X = check_samples(x, dim=cb.dim)
    index = np.asarray(index)
    diff = X - cb.codewords[index]
    return -np.log2(p[index]) + lam * (diff * diff).mean(axis=1)


# ---------------------------------------------------------------------------
# initialization and maintenance


def kmeanspp_init(samples, n, seed, lloyd_iters=10, chunk=8192):
    """k-means++ seeding followed by Lloyd refinement.

    Requires at least ``n`` samples. Deterministic for a fixed seed.
    """
    X = check_samples(samples)
    if X.shape[0] < n:
        raise ValueError(f"need at least {n} samples for a size-{n} codebook, got {X.shape[0]}")
    rng = np.random.default_rng(seed)
    n_samples, k = X.shape

    centers = np.empty((n, k))
    centers[0] = X[rng.integers(n_samples)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for i in range(1, n):
        total = d2.sum()
        if total <= 0:
            # all remaining mass sits on chosen centers; pick any leftover row
            centers[i] = X[rng.integers(n_samples)]
            continue
        probs_ = d2 / total
        pick = rng.choice(n_samples, p=probs_)
        centers[i] = X[pick]
        d2 = np.minimum(d2, ((X - centers[i]) ** 2).sum(axis=1))

    for _ in range(lloyd_iters):
        sums = np.zeros((n, k))
        counts = np.zeros(n, dtype=np.int64)
        for start in range(0, n_samples, chunk):
            block = X[start:start + chunk]
            assign = _cost_argmin(block, centers)
            np.add.at(sums, assign, block)
            counts += np.bincount(assign, minlength=n)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]

    return Codebook(centers)


def reinit_dead(cb, prior, stats, rng, dead_scale=0.1, jitter=1e-3):
    """Recycle under-used codewords from well-used ones.

    Every index whose usage frequency falls below ``dead_scale / N`` is
    moved next to a donor drawn proportionally to usage, with Gaussian
    jitter of scale ``jitter * ||donor||``, and its per-index prior
    parameters are copied from the donor. Returns the recycle events as
    (dead_index, donor_index) pairs.
    """
    freq = stats.frequencies()
    n = cb.size
    dead = np.nonzero(freq < dead_scale / n)[0]
    if dead.size == 0 or dead.size == n:
        return []
    alive_freq = freq.copy()
    alive_freq[dead] = 0.0
    alive_freq /= alive_freq.sum()
    donors = rng.choice(n, size=dead.size, p=alive_freq)
    events = []
    for d, s in zip(dead, donors):
        sigma = jitter * np.linalg.norm(cb.codewords[s])
        cb.tensor.data[d] = cb.codewords[s] + rng.normal(0.0, sigma or jitter, size=cb.dim)
        prior.copy_index_params(int(d), int(s))
        events.append((int(d), int(s)))
    return events
