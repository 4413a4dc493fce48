"""Small trainable building blocks: linear layers, GELU MLPs, and the
per-coordinate monotone CDF model used as the scalar-quantization prior."""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def glorot_uniform(rng, n_in, n_out):
    a = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-a, a, size=(n_in, n_out))


class Linear:
    """Fully-connected layer with Glorot-uniform weights and zero bias."""

    def __init__(self, n_in, n_out, rng, name="linear"):
        self.w = Tensor(glorot_uniform(rng, n_in, n_out), requires_grad=True, name=f"{name}.w")
        self.b = Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.b")

    def __call__(self, x):
        return ad.affine(x, self.w, self.b)

    def params(self):
        return [self.w, self.b]


class MLP:
    """Stack of fully-connected layers with GELU between them.

    ``widths`` lists every layer output size; the final layer is linear.
    """

    def __init__(self, n_in, widths, rng, name="mlp"):
        self.layers = []
        prev = n_in
        for i, w in enumerate(widths):
            self.layers.append(Linear(prev, w, rng, name=f"{name}.fc{i}"))
            prev = w

    def __call__(self, x):
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = ad.gelu(h)
        return h

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


class FactorizedPrior:
    """Independent monotone scalar CDF model per latent coordinate.

    Each coordinate owns a chain of tiny affine layers with
    softplus-positive weights; inner layers add a bounded tanh
    perturbation ``h + tanh(a) * tanh(h)`` which keeps the map strictly
    increasing, and the output is squashed through a sigmoid. Discrete
    probabilities follow as CDF differences over unit-width bins.
    """

    def __init__(self, dim, rng, width=16, layers=3, init_scale=10.0, name="prior"):
        if layers < 2:
            raise ValueError("FactorizedPrior needs at least 2 layers")
        self.dim = dim
        self.width = width
        self.n_layers = layers
        dims = [1] + [width] * (layers - 1) + [1]
        init_h = np.log(np.expm1(1.0 / init_scale ** (1.0 / layers)))
        self.h_raw = []
        self.b = []
        self.a = []
        for i in range(layers):
            n_in, n_out = dims[i], dims[i + 1]
            h = Tensor(np.full((dim, n_in, n_out), init_h), requires_grad=True,
                       name=f"{name}.h{i}")
            b = Tensor(rng.uniform(-0.5, 0.5, size=(dim, n_out)), requires_grad=True,
                       name=f"{name}.b{i}")
            self.h_raw.append(h)
            self.b.append(b)
            if i < layers - 1:
                a = Tensor(np.zeros((dim, n_out)), requires_grad=True, name=f"{name}.a{i}")
                self.a.append(a)

    def cdf(self, u):
        """Evaluate the per-coordinate CDF at ``u`` of shape (B, dim)."""
        h = ad.reshape(u, (u.shape[0], self.dim, 1))
        for i in range(self.n_layers):
            h = ad.coordwise_affine(h, ad.softplus(self.h_raw[i]), self.b[i])
            if i < self.n_layers - 1:
                h = ad.add(h, ad.mul(ad.tanh(self.a[i]), ad.tanh(h)))
            else:
                h = ad.sigmoid(h)
        return ad.reshape(h, (u.shape[0], self.dim))

    def likelihood(self, y, floor=1e-12):
        """P(y) = CDF(y + 1/2) - CDF(y - 1/2), floored away from zero."""
        hi = self.cdf(ad.add(y, Tensor(0.5)))
        lo = self.cdf(ad.add(y, Tensor(-0.5)))
        return ad.add(ad.sub(hi, lo), Tensor(floor))

    def bits(self, y, floor=1e-12):
        """Total code length of a batch in bits (scalar tensor)."""
        return ad.scale(ad.tsum(ad.log(self.likelihood(y, floor))), -ad.LOG2E)

    def integer_support(self, tail_mass=2.0 ** -20, max_half_range=8192):
        """Per-coordinate integer interval [lo, hi] capturing 1 - 2*tail_mass.

        Deterministic given the parameters, so encoder and decoder derive
        the same coding alphabet from a shared checkpoint.
        """
        half = 32
        while True:
            grid = np.arange(-half, half + 1, dtype=np.float64)
            with ad.no_grad():
                c = self.cdf(Tensor(np.repeat(grid[:, None], self.dim, axis=1))).data
            lo_ok = c[0, :] < tail_mass
            hi_ok = c[-1, :] > 1.0 - tail_mass
            if (np.all(lo_ok) and np.all(hi_ok)) or half >= max_half_range:
                break
            half *= 2
        lo = np.empty(self.dim, dtype=np.int64)
        hi = np.empty(self.dim, dtype=np.int64)
        for j in range(self.dim):
            mass = c[:, j]
            above = np.nonzero(mass > tail_mass)[0]
            below = np.nonzero(mass < 1.0 - tail_mass)[0]
            lo[j] = grid[above[0]] if above.size else -half
            hi[j] = grid[below[-1]] if below.size else half
            if lo[j] > hi[j]:
                lo[j] = hi[j] = 0
        return lo, hi

    def pmf_on_support(self, lo, hi):
        """Probabilities of each integer in [lo_j, hi_j] per coordinate.

        Returns a list of 1-d arrays (ragged across coordinates).
        """
        pmfs = []
        for j in range(self.dim):
            grid = np.arange(lo[j], hi[j] + 1, dtype=np.float64)
            pts = np.zeros((grid.size, self.dim))
            pts[:, j] = grid
            with ad.no_grad():
                hi_c = self.cdf(Tensor(pts + 0.5)).data[:, j]
                lo_c = self.cdf(Tensor(pts - 0.5)).data[:, j]
            pmfs.append(np.maximum(hi_c - lo_c, 1e-12))
        return pmfs

    def params(self):
        out = []
        for i in range(self.n_layers):
            out.append(self.h_raw[i])
            out.append(self.b[i])
            if i < self.n_layers - 1:
                out.append(self.a[i])
        return out
