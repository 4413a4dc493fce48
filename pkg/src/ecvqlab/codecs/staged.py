"""Trainable quantizer codecs built on a shared residual stage stack.

One engine covers five codecs:

- VQCodec / ECVQCodec: codebook directly in source space;
- NTVQCodec / NTECVQCodec: codebook in the latent space of an MLP
  transform pair, trained through the straight-through estimator;
- MultistageCodec: several residual stages with conditional priors and
  progressive initialization.

A stage l turns the running prediction ybar_l into a refined
reconstruction: r = Lin1(y_l - ybar_l) is quantized, yhat_l =
Lin2(rhat) + ybar_l, and ybar_{l+1} = g_l(yhat_l). Training runs in two
phases: an initialization phase (nearest-neighbor assignment, no rate
term, periodic dead-codeword recycling, stages joining at their
milestones) followed by the full entropy-constrained phase whose encoder
minimizes -log2 p_i + lam*dim * d(r, c_i) per sample.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .. import autodiff as ad
from .. import config as cfg
from .. import vq
from ..autodiff import Tensor
from ..coder import build_table
from ..errors import TrainingDivergedError
from ..nn import MLP, Linear
from ..validation import check_samples
from .common import CodecIOMixin, register_codec


class _Stage:
    __slots__ = ("n", "milestone", "codebook", "prior", "f", "g", "lin1", "lin2",
                 "conditional", "initialized", "stats")

    def __init__(self, n, milestone):
        self.n = n
        self.milestone = milestone
        self.codebook = None
        self.prior = None
        self.f = None
        self.g = None
        self.lin1 = None
        self.lin2 = None
        self.conditional = False
        self.initialized = False
        self.stats = None


def _identity_linear(dim, name):
    layer = Linear(dim, dim, np.random.default_rng(0), name=name)
    layer.w.data = np.eye(dim)
    layer.b.data = np.zeros(dim)
    return layer


class _StagedCodecBase(CodecIOMixin, BaseEstimator):
    """Shared engine; subclasses pin the encoder rule and transform use."""

    kind = "staged"
    _RULE = "ecvq"            # encoder rule in the full phase
    _USES_TRANSFORMS = False

    def __init__(self, dim=2, lam=10.0, n_codewords=64, beta=None, n_iters=16000,
                 batch_size=512, lr=1e-3, final_lr=1e-4, final_frac=0.15,
                 init_iters=1000, delta_t=500, dead_scale=0.1, jitter=1e-3,
                 width=None, kmeans_pool=16384, lloyd_iters=10, seed=0):
        self.dim = dim
        self.lam = lam
        self.n_codewords = n_codewords
        self.beta = beta
        self.n_iters = n_iters
        self.batch_size = batch_size
        self.lr = lr
        self.final_lr = final_lr
        self.final_frac = final_frac
        self.init_iters = init_iters
        self.delta_t = delta_t
        self.dead_scale = dead_scale
        self.jitter = jitter
        self.width = width
        self.kmeans_pool = kmeans_pool
        self.lloyd_iters = lloyd_iters
        self.seed = seed

    # -- plan / construction -------------------------------------------------

    def _plan(self):
        return {
            "sizes": [self.n_codewords],
            "milestones": [0],
            "conditional": [False],
            "transforms": self._USES_TRANSFORMS,
            "projections": False,
            "beta": (self.lam if self.beta is None else self.beta) if self._USES_TRANSFORMS else 0.0,
            "cond_hidden": 64,
        }

    def _materialize(self):
        plan = self._plan()
        milestones = plan["milestones"]
        if list(milestones) != sorted(milestones):
            raise ValueError(f"milestones must be non-decreasing, got {milestones}")
        ss = np.random.SeedSequence(self.seed)
        init_ss, data_ss, kmeans_ss, jitter_ss = ss.spawn(4)
        init_rng = np.random.default_rng(init_ss)
        self._data_ss = data_ss
        self._kmeans_seeds = [int(s.generate_state(1)[0]) for s in kmeans_ss.spawn(len(plan["sizes"]))]
        self._jitter_rng = np.random.default_rng(jitter_ss)
        width = self.width if self.width is not None else cfg.transform_width(self.dim)

        stages = []
        for l, (n, milestone) in enumerate(zip(plan["sizes"], milestones)):
            st = _Stage(n, milestone)
            if plan["transforms"]:
                st.f = MLP(self.dim, [width, width, self.dim], init_rng, name=f"stage{l}.f")
                st.g = MLP(self.dim, [width, width, self.dim], init_rng, name=f"stage{l}.g")
            if plan["projections"]:
                st.lin1 = _identity_linear(self.dim, name=f"stage{l}.lin1")
                st.lin2 = _identity_linear(self.dim, name=f"stage{l}.lin2")
            st.conditional = plan["conditional"][l]
            if st.conditional:
                st.prior = vq.ConditionalPrior(self.dim, n, init_rng,
                                               hidden=plan["cond_hidden"], name=f"stage{l}.cem")
            else:
                st.prior = vq.LogitPrior(n, name=f"stage{l}.logits")
            st.codebook = vq.Codebook(np.zeros((n, self.dim)), name=f"stage{l}.codebook")
            st.stats = vq.UsageStats(n)
            stages.append(st)
        self._stages = stages
        self._beta = plan["beta"]

    def _param_list(self):
        out = []
        for st in self._stages:
            if st.f is not None:
                out.extend(st.f.params())
                out.extend(st.g.params())
            if st.lin1 is not None:
                out.extend(st.lin1.params())
                out.extend(st.lin2.params())
            if st.conditional:
                out.extend(st.prior.params())
            else:
                out.append(st.prior.tensor)
            out.append(st.codebook.tensor)
        return out

    # -- encoding rules --------------------------------------------------------

    def _pick_indices(self, r, stage, rule, ybar):
        """Encoder decision on raw arrays; same code path as the vq ops."""
        if rule == "vq":
            return vq.vq_encode(r, stage.codebook)
        lam_enc = self.lam * self.dim
        if stage.conditional:
            return vq.ecvq_encode_rows(r, stage.codebook,
                                       stage.prior.probs_given(ybar), lam_enc)
        return vq.ecvq_encode(r, stage.codebook, stage.prior.probs(), lam_enc)

    def _bits_for(self, stage, idx, ybar):
        if stage.conditional:
            p = stage.prior.probs_given(ybar)
            sel = p[np.arange(idx.size), idx]
        else:
            sel = stage.prior.probs()[idx]
        with np.errstate(divide="ignore"):
            return -np.log2(sel)

    # -- one pass over a batch ---------------------------------------------

    def _stage_pass(self, X, t=None, collect=False, frozen_indices=None,
                    frozen_anchors=None):
        """Build one forward pass; the training graph when t is given.

        During training (t set) the phase logic of progressive
        initialization applies; otherwise every stage is active and the
        full-phase encoder rule is used. ``frozen_indices`` plus
        ``frozen_anchors`` (per-stage index arrays and residual values
        captured at an expansion point) replace the quantizer with its
        additive straight-through surrogate, which makes the graph smooth
        for finite-difference verification.
        """
        training = t is not None
        init_phase = training and t <= self._init_iters_resolved()
        B = X.shape[0]
        xb = Tensor(X)
        ybar = Tensor(np.zeros((B, self.dim)))

        # clean encoder chain y_l = f_l(y_{l-1})
        ys = []
        h = xb
        for st in self._stages:
            if st.f is not None:
                h = st.f(h)
            ys.append(h)

        rate_terms = []
        d1_terms = []
        info = {"indices": [], "cond": [], "residuals": [], "bits": np.zeros(B),
                "passthrough_dev": [], "rate_bpd": [], "d1": []}
        for l, st in enumerate(self._stages):
            active = (not training) or (t > st.milestone)
            if not active:
                yhat = ybar
                info["passthrough_dev"].append(float(np.max(np.abs(yhat.data - ybar.data))) if B else 0.0)
                info["rate_bpd"].append(0.0)
                info["d1"].append(0.0)
                info["indices"].append(np.zeros(B, dtype=np.int64))
                info["cond"].append(ybar.data.copy() if collect else None)
                info["residuals"].append(None)
            else:
                if training and not st.initialized:
                    self._init_stage_codebook(l, t)
                delta = ad.sub(ys[l], ybar)
                r = st.lin1(delta) if st.lin1 is not None else delta
                if collect:
                    info["residuals"].append(r.data.copy())
                else:
                    info["residuals"].append(None)
                if frozen_indices is not None:
                    # additive straight-through surrogate: equals the lookup
                    # bit-for-bit at the expansion point while staying smooth
                    # in every parameter, so finite differences reproduce the
                    # gradients the training graph defines
                    idx = frozen_indices[l]
                    anchor = Tensor(frozen_anchors[l])
                    rhat = ad.add(ad.sub(r, anchor),
                                  ad.gather_rows(st.codebook.tensor, idx))
                else:
                    rule = "vq" if (init_phase or self._RULE == "vq") else "ecvq"
                    idx = self._pick_indices(r.data, st, rule, ybar.data)
                    rhat = ad.ste_lookup(r, st.codebook.tensor, idx)
                if self._beta > 0.0:
                    d1 = ad.mse(r, ad.gather_rows(st.codebook.tensor, idx))
                    d1_terms.append(d1)
                    info["d1"].append(float(d1.data))
                else:
                    info["d1"].append(0.0)
                if training and init_phase:
                    info["rate_bpd"].append(0.0)
                elif training:
                    if st.conditional:
                        p_t = ad.softmax(ad.scale(st.prior.logits_tensor(ybar), -1.0), axis=-1)
                        p_sel = ad.gather_cols(p_t, idx)
                    else:
                        p_sel = ad.gather_rows(st.prior.probs_tensor(), idx)
                    rate = ad.scale(ad.tsum(ad.log(p_sel)), -ad.LOG2E / (B * self.dim))
                    rate_terms.append(rate)
                    info["rate_bpd"].append(float(rate.data))
                else:
                    bits = self._bits_for(st, idx, ybar.data)
                    info["bits"] += bits
                    info["rate_bpd"].append(float(bits.mean() / self.dim))
                back = st.lin2(rhat) if st.lin2 is not None else rhat
                yhat = ad.add(back, ybar)
                info["passthrough_dev"].append(np.nan)
                info["indices"].append(idx)
                info["cond"].append(ybar.data.copy() if collect else None)
                if training and init_phase:
                    st.stats.update(idx)
            ybar = st.g(yhat) if st.g is not None else yhat
        xhat = ybar

        dist = ad.mse(xb, xhat)
        loss = ad.scale(dist, self.lam)
        for rt in rate_terms:
            loss = ad.add(loss, rt)
        for d1 in d1_terms:
            loss = ad.add(loss, ad.scale(d1, self._beta))
        info["xhat"] = xhat.data
        info["loss"] = loss
        info["distortion"] = float(dist.data)
        return info

    def _init_iters_resolved(self):
        return self.init_iters

    def _init_stage_codebook(self, l, t):
        """k-means++ the stage codebook on residuals of the current model."""
        st = self._stages[l]
        n_pool = min(self.kmeans_pool, self._pool.shape[0])
        rows = self._kmeans_rng.choice(self._pool.shape[0], size=n_pool, replace=False)
        sample = self._pool[rows]
        with ad.no_grad():
            res = self._residuals_upto(sample, l, t)
        cb = vq.kmeanspp_init(res, st.n, self._kmeans_seeds[l], lloyd_iters=self.lloyd_iters)
        st.codebook.tensor.data = cb.codewords
        st.initialized = True

    def _residuals_upto(self, X, stage_idx, t):
        """Residual inputs r_l of a stage given the current (frozen) model."""
        ybar = Tensor(np.zeros((X.shape[0], self.dim)))
        h = Tensor(X)
        ys = []
        for st in self._stages:
            if st.f is not None:
                h = st.f(h)
            ys.append(h)
        for l, st in enumerate(self._stages[:stage_idx]):
            if t <= st.milestone:
                yhat = ybar
            else:
                delta = ad.sub(ys[l], ybar)
                r = st.lin1(delta) if st.lin1 is not None else delta
                idx = self._pick_indices(r.data, st, "vq", ybar.data)
                rhat = ad.gather_rows(st.codebook.tensor, idx)
                back = st.lin2(rhat) if st.lin2 is not None else rhat
                yhat = ad.add(back, ybar)
            ybar = st.g(yhat) if st.g is not None else yhat
        st = self._stages[stage_idx]
        delta = ad.sub(ys[stage_idx], ybar)
        r = st.lin1(delta) if st.lin1 is not None else delta
        return r.data.copy()

    # -- training ------------------------------------------------------------

    def fit(self, X, y=None):
        X = check_samples(X, dim=self.dim)
        init_total = self._init_iters_resolved()
        if self.n_iters <= init_total:
            raise ValueError("n_iters must exceed the initialization phase")
        self._materialize()
        for st in self._stages:
            if st.milestone >= init_total:
                raise ValueError("every milestone must lie inside the initialization phase")
            if X.shape[0] < st.n:
                raise ValueError(f"training pool smaller than codebook size {st.n}")
        self._pool = X
        self._kmeans_rng = np.random.default_rng(self._kmeans_seeds[0] ^ 0x9E3779B9)
        params = self._param_list()
        opt = ad.Adam(params, lr=self.lr)
        data_rng = np.random.default_rng(self._data_ss)

        L = len(self._stages)
        hist = {
            "loss": np.zeros(self.n_iters),
            "distortion": np.zeros(self.n_iters),
            "rate_bpd": np.zeros((self.n_iters, L)),
            "d1": np.zeros((self.n_iters, L)),
            "passthrough_dev": np.zeros((self.n_iters, L)),
            "phase": np.zeros(self.n_iters, dtype=np.int8),
        }
        events = []
        switch = self.n_iters * (1.0 - self.final_frac)
        for t in range(1, self.n_iters + 1):
            opt.lr = self.final_lr if t > switch else self.lr
            batch = X[data_rng.integers(0, X.shape[0], size=self.batch_size)]
            out = self._stage_pass(batch, t=t)
            loss = out["loss"]
            if not np.isfinite(loss.data):
                raise TrainingDivergedError("training loss is not finite", t)
            opt.zero_grad()
            ad.backward(loss, params=params)
            opt.step()

            i = t - 1
            hist["loss"][i] = float(loss.data)
            hist["distortion"][i] = out["distortion"]
            hist["rate_bpd"][i] = out["rate_bpd"]
            hist["d1"][i] = out["d1"]
            hist["passthrough_dev"][i] = out["passthrough_dev"]
            init_phase = t <= init_total
            hist["phase"][i] = 0 if init_phase else 1

            if init_phase and self.delta_t > 0 and t % self.delta_t == 0:
                for l, st in enumerate(self._stages):
                    if not st.initialized or st.stats.total == 0:
                        continue
                    freqs = st.stats.frequencies()
                    pairs = vq.reinit_dead(st.codebook, st.prior, st.stats,
                                           self._jitter_rng, dead_scale=self.dead_scale,
                                           jitter=self.jitter)
                    if pairs:
                        events.append({"t": t, "stage": l,
                                       "recycled": [(d, s, float(freqs[d])) for d, s in pairs]})
                    st.stats.reset()

        self.history_ = hist
        self.events_ = events
        self.n_features_in_ = self.dim
        if L == 1:
            self.codebook_ = self._stages[0].codebook.codewords
            if not self._stages[0].conditional:
                self.logits_ = self._stages[0].prior.logits
        self._fitted = True
        del self._pool
        return self

    # -- evaluation / wire format -------------------------------------------

    def _forward_eval(self, X, collect=False):
        with ad.no_grad():
            out = self._stage_pass(X, t=None, collect=collect)
        idx = np.stack(out["indices"], axis=1)
        return {
            "indices": idx[:, 0] if idx.shape[1] == 1 else idx,
            "bits": out["bits"],
            "xhat": out["xhat"],
            "cond": out["cond"],
        }

    def encode_points(self, points):
        """Pure labeling rule for partition rasters (indices combined)."""
        out = self._forward_eval(np.asarray(points, dtype=np.float64))
        idx = out["indices"]
        if idx.ndim == 1:
            return idx
        label = idx[:, 0].copy()
        for l in range(1, idx.shape[1]):
            label = label * self._stages[l].n + idx[:, l]
        return label

    def _encode_stream(self, enc, X):
        for start in range(0, X.shape[0], self._EVAL_CHUNK):
            block = X[start:start + self._EVAL_CHUNK]
            out = self._forward_eval(block, collect=True)
            idx = out["indices"]
            if idx.ndim == 1:
                idx = idx[:, None]
            for l, st in enumerate(self._stages):
                if st.conditional:
                    p_rows = st.prior.probs_given(out["cond"][l])
                    for i in range(block.shape[0]):
                        enc.encode(int(idx[i, l]), build_table(p_rows[i]))
                else:
                    table = build_table(st.prior.probs())
                    for i in range(block.shape[0]):
                        enc.encode(int(idx[i, l]), table)

    def _decode_stream(self, dec, count):
        parts = []
        for start in range(0, count, self._EVAL_CHUNK):
            n = min(self._EVAL_CHUNK, count - start)
            ybar = np.zeros((n, self.dim))
            with ad.no_grad():
                for st in self._stages:
                    if st.conditional:
                        p_rows = st.prior.probs_given(ybar)
                        idx = np.array([dec.decode(build_table(p_rows[i])) for i in range(n)],
                                       dtype=np.int64)
                    else:
                        table = build_table(st.prior.probs())
                        idx = np.array([dec.decode(table) for _ in range(n)], dtype=np.int64)
                    rhat = Tensor(st.codebook.codewords[idx])
                    back = st.lin2(rhat) if st.lin2 is not None else rhat
                    yhat = ad.add(back, Tensor(ybar))
                    ybar = (st.g(yhat) if st.g is not None else yhat).data
            parts.append(ybar)
        return np.concatenate(parts, axis=0)

    def _finalize_load(self):
        for st in self._stages:
            st.initialized = True
        if len(self._stages) == 1:
            self.codebook_ = self._stages[0].codebook.codewords
            if not self._stages[0].conditional:
                self.logits_ = self._stages[0].prior.logits
        self._fitted = True


@register_codec
class VQCodec(_StagedCodecBase):
    """Unconstrained VQ in source space (nearest-codeword encoder)."""

    kind = "vq"
    _RULE = "vq"
    _USES_TRANSFORMS = False


@register_codec
class ECVQCodec(_StagedCodecBase):
    """Entropy-constrained VQ in source space."""

    kind = "ecvq"
    _RULE = "ecvq"
    _USES_TRANSFORMS = False


@register_codec
class NTVQCodec(_StagedCodecBase):
    """Unconstrained VQ in the latent space of an MLP transform pair."""

    kind = "nt-vq"
    _RULE = "vq"
    _USES_TRANSFORMS = True


@register_codec
class NTECVQCodec(_StagedCodecBase):
    """Entropy-constrained VQ in the latent space of an MLP transform pair."""

    kind = "nt-ecvq"
    _RULE = "ecvq"
    _USES_TRANSFORMS = True


@register_codec
class MultistageCodec(_StagedCodecBase):
    """Residual ECVQ stack with conditional priors and progressive init.

    Stage l >= 2 is held at the passthrough yhat = ybar until its
    milestone; its prior conditions on ybar_l through a small MLP.
    """

    kind = "multistage"
    _RULE = "ecvq"
    _USES_TRANSFORMS = True

    def __init__(self, dim=2, lam=10.0, stage_sizes=(128, 128), beta=None,
                 milestones=(0, 2000), delta_t=1000, init_iters=None, n_iters=40000,
                 batch_size=512, lr=1e-3, final_lr=1e-4, final_frac=0.15,
                 dead_scale=0.1, jitter=1e-3, width=None, cond_hidden=64,
                 identity_proj=False, kmeans_pool=16384, lloyd_iters=10, seed=0):
        self.dim = dim
        self.lam = lam
        self.stage_sizes = stage_sizes
        self.beta = beta
        self.milestones = milestones
        self.delta_t = delta_t
        self.init_iters = init_iters
        self.n_iters = n_iters
        self.batch_size = batch_size
        self.lr = lr
        self.final_lr = final_lr
        self.final_frac = final_frac
        self.dead_scale = dead_scale
        self.jitter = jitter
        self.width = width
        self.cond_hidden = cond_hidden
        self.identity_proj = identity_proj
        self.kmeans_pool = kmeans_pool
        self.lloyd_iters = lloyd_iters
        self.seed = seed

    def _plan(self):
        sizes = list(self.stage_sizes)
        milestones = list(self.milestones)
        if len(sizes) != len(milestones):
            raise ValueError("stage_sizes and milestones must have equal length")
        return {
            "sizes": sizes,
            "milestones": milestones,
            "conditional": [False] + [True] * (len(sizes) - 1),
            "transforms": True,
            "projections": not self.identity_proj,
            "beta": self.lam if self.beta is None else self.beta,
            "cond_hidden": self.cond_hidden,
        }

    def _init_iters_resolved(self):
        if self.init_iters is None:
            return max(self.milestones) + self.delta_t
        return self.init_iters
