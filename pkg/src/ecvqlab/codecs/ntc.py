"""Nonlinear transform coding: MLP transform pair around uniform scalar
quantization with a learned factorized prior.

Training replaces rounding with additive uniform noise on the latents;
evaluation and the wire format use hard rounding clipped to the integer
support implied by the trained prior (tail mass below ``tail_mass`` per
side), which keeps the coding alphabet finite without measurable RD cost.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .. import autodiff as ad
from .. import config as cfg
from ..autodiff import Tensor
from ..coder import build_table
from ..errors import TrainingDivergedError
from ..nn import MLP, FactorizedPrior
from ..validation import check_samples
from .common import CodecIOMixin, register_codec


@register_codec
class NTCCodec(CodecIOMixin, BaseEstimator):
    kind = "ntc"

    def __init__(self, dim=2, lam=10.0, n_iters=24000, batch_size=512, lr=1e-3,
                 final_lr=1e-4, final_frac=0.15, width=None, prior_width=16,
                 prior_layers=3, likelihood_floor=1e-12, tail_mass=2.0 ** -20,
                 seed=0):
        self.dim = dim
        self.lam = lam
        self.n_iters = n_iters
        self.batch_size = batch_size
        self.lr = lr
        self.final_lr = final_lr
        self.final_frac = final_frac
        self.width = width
        self.prior_width = prior_width
        self.prior_layers = prior_layers
        self.likelihood_floor = likelihood_floor
        self.tail_mass = tail_mass
        self.seed = seed

    def _materialize(self):
        ss = np.random.SeedSequence(self.seed)
        init_ss, data_ss = ss.spawn(2)
        rng = np.random.default_rng(init_ss)
        self._data_ss = data_ss
        width = self.width if self.width is not None else cfg.transform_width(self.dim)
        self.analysis_ = MLP(self.dim, [width, width, self.dim], rng, name="g_a")
        self.synthesis_ = MLP(self.dim, [width, width, self.dim], rng, name="g_s")
        self.prior_ = FactorizedPrior(self.dim, rng, width=self.prior_width,
                                      layers=self.prior_layers, name="prior")

    def _param_list(self):
        return self.analysis_.params() + self.synthesis_.params() + self.prior_.params()

    def fit(self, X, y=None):
        X = check_samples(X, dim=self.dim)
        self._materialize()
        params = self._param_list()
        opt = ad.Adam(params, lr=self.lr)
        data_rng = np.random.default_rng(self._data_ss)

        hist = {"loss": np.zeros(self.n_iters), "distortion": np.zeros(self.n_iters),
                "rate_bpd": np.zeros(self.n_iters)}
        switch = self.n_iters * (1.0 - self.final_frac)
        B = self.batch_size
        for t in range(1, self.n_iters + 1):
            opt.lr = self.final_lr if t > switch else self.lr
            batch = X[data_rng.integers(0, X.shape[0], size=B)]
            noise = data_rng.uniform(-0.5, 0.5, size=(B, self.dim))

            xb = Tensor(batch)
            y_noisy = ad.add(self.analysis_(xb), Tensor(noise))
            xhat = self.synthesis_(y_noisy)
            dist = ad.mse(xb, xhat)
            bits = self.prior_.bits(y_noisy, floor=self.likelihood_floor)
            rate = ad.scale(bits, 1.0 / (B * self.dim))
            loss = ad.add(ad.scale(dist, self.lam), rate)
            if not np.isfinite(loss.data):
                raise TrainingDivergedError("training loss is not finite", t)
            opt.zero_grad()
            ad.backward(loss, params=params)
            opt.step()

            i = t - 1
            hist["loss"][i] = float(loss.data)
            hist["distortion"][i] = float(dist.data)
            hist["rate_bpd"][i] = float(rate.data)

        self.history_ = hist
        self.n_features_in_ = self.dim
        self._finalize_load()
        return self

    def _finalize_load(self):
        self.support_lo_, self.support_hi_ = self.prior_.integer_support(self.tail_mass)
        self._fitted = True

    # -- evaluation ----------------------------------------------------------

    def _quantize(self, y):
        return np.clip(np.rint(y), self.support_lo_, self.support_hi_)

    def _forward_eval(self, X):
        with ad.no_grad():
            y = self.analysis_(Tensor(X)).data
            q = self._quantize(y)
            xhat = self.synthesis_(Tensor(q)).data
            p = self.prior_.likelihood(Tensor(q), floor=self.likelihood_floor).data
        # the additive floor can push P a hair above 1; true code length >= 0
        bits = np.maximum(-np.log2(p), 0.0).sum(axis=1)
        return {"indices": q.astype(np.int64), "bits": bits, "xhat": xhat}

    def encode_points(self, points):
        """Partition label per 2-d point: the occupied integer cell."""
        q = self._forward_eval(np.asarray(points, dtype=np.float64))["indices"]
        spans = (self.support_hi_ - self.support_lo_ + 1).astype(np.int64)
        label = np.zeros(q.shape[0], dtype=np.int64)
        for j in range(q.shape[1]):
            label = label * spans[j] + (q[:, j] - self.support_lo_[j])
        return label

    # -- wire format -----------------------------------------------------------

    def _coordinate_tables(self):
        pmfs = self.prior_.pmf_on_support(self.support_lo_, self.support_hi_)
        return [build_table(pmf) for pmf in pmfs]

    def _encode_stream(self, enc, X):
        tables = self._coordinate_tables()
        for start in range(0, X.shape[0], self._EVAL_CHUNK):
            q = self._forward_eval(X[start:start + self._EVAL_CHUNK])["indices"]
            for j in range(self.dim):
                table = tables[j]
                symbols = q[:, j] - self.support_lo_[j]
                for s in symbols:
                    enc.encode(int(s), table)

    def _decode_stream(self, dec, count):
        tables = self._coordinate_tables()
        parts = []
        for start in range(0, count, self._EVAL_CHUNK):
            n = min(self._EVAL_CHUNK, count - start)
            q = np.zeros((n, self.dim))
            for j in range(self.dim):
                table = tables[j]
                q[:, j] = [dec.decode(table) + self.support_lo_[j] for _ in range(n)]
            with ad.no_grad():
                parts.append(self.synthesis_(Tensor(q)).data)
        return np.concatenate(parts, axis=0)
