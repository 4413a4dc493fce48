"""Shared estimator plumbing: evaluation, bitstreams, checkpoints."""

import numpy as np

from .. import checkpoint
from ..bitstream import pack_bitstream, unpack_bitstream
from ..coder import RangeDecoder, RangeEncoder
from ..errors import CorruptStreamError
from ..metrics import RDPoint
from ..validation import check_samples

_REGISTRY = {}


def register_codec(cls):
    _REGISTRY[cls.__name__] = cls
    return cls


def load_codec(path):
    """Rebuild a fitted codec from a checkpoint file."""
    kind, hypers, params = checkpoint.load(path)
    if kind not in _REGISTRY:
        raise ValueError(f"unknown codec kind {kind!r}")
    return _REGISTRY[kind]._from_checkpoint(hypers, params)


class CodecIOMixin:
    """Evaluation and wire-format behavior shared by every codec.

    Subclasses provide ``_forward_eval`` (indices / code lengths /
    reconstructions for a sample block), the symbol stream walkers, and
    parameter bookkeeping for checkpoints.
    """

    _EVAL_CHUNK = 8192

    def _check_fitted(self):
        if not getattr(self, "_fitted", False):
            raise RuntimeError(f"{type(self).__name__} is not fitted")

    # -- evaluation --------------------------------------------------------

    def evaluate(self, X):
        """Empirical RD point: (bits per dimension, MSE per dimension)."""
        self._check_fitted()
        X = check_samples(X, dim=self.dim)
        bits = 0.0
        sq = 0.0
        for start in range(0, X.shape[0], self._EVAL_CHUNK):
            block = X[start:start + self._EVAL_CHUNK]
            out = self._forward_eval(block)
            bits += float(out["bits"].sum())
            diff = block - out["xhat"]
            sq += float((diff * diff).sum())
        n = X.shape[0]
        return RDPoint(rate=bits / (n * self.dim), mse=sq / (n * self.dim),
                       label=self.kind)

    def transform(self, X):
        """Quantize-and-reconstruct: the codec's reproduction of X."""
        self._check_fitted()
        X = check_samples(X, dim=self.dim)
        parts = [self._forward_eval(X[s:s + self._EVAL_CHUNK])["xhat"]
                 for s in range(0, X.shape[0], self._EVAL_CHUNK)]
        return np.concatenate(parts, axis=0)

    def predict(self, X):
        """Emitted symbols per sample (shape (n,) or (n, n_streams))."""
        self._check_fitted()
        X = check_samples(X, dim=self.dim)
        parts = [self._forward_eval(X[s:s + self._EVAL_CHUNK])["indices"]
                 for s in range(0, X.shape[0], self._EVAL_CHUNK)]
        return np.concatenate(parts, axis=0)

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)

    # -- bitstreams --------------------------------------------------------

    def checksum(self):
        """8-byte identity of the current parameters."""
        self._check_fitted()
        return checkpoint.checksum(self._serialize())

    def encode_samples(self, X):
        """Range-code X into a self-describing bitstream."""
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or (X.shape[0] > 0 and X.shape[1] != self.dim):
            raise ValueError(f"expected (n, {self.dim}) samples, got {X.shape}")
        enc = RangeEncoder()
        if X.shape[0] > 0:
            self._encode_stream(enc, check_samples(X, dim=self.dim))
        return pack_bitstream(self.checksum(), X.shape[0], self.dim, enc.finish())

    def decode_samples(self, buf):
        """Decode a bitstream into the exact local reconstructions."""
        self._check_fitted()
        checksum, count, dim, payload = unpack_bitstream(buf)
        if checksum != self.checksum():
            raise CorruptStreamError("bitstream was produced by a different model")
        if dim != self.dim:
            raise CorruptStreamError(f"bitstream dimension {dim} != model dimension {self.dim}")
        if count == 0:
            return np.zeros((0, self.dim))
        dec = RangeDecoder(payload)
        return self._decode_stream(dec, count)

    # -- checkpoints -------------------------------------------------------

    def _hypers(self):
        out = {}
        for key, value in self.get_params().items():
            if isinstance(value, tuple):
                value = list(value)
            out[key] = value
        return out

    def _serialize(self):
        return checkpoint.serialize(type(self).__name__, self._hypers(),
                                    [(t.name, t.data) for t in self._param_list()])

    def save(self, path):
        """Write the checkpoint container; returns its 8-byte checksum."""
        self._check_fitted()
        buf = self._serialize()
        with open(path, "wb") as f:
            f.write(buf)
        return checkpoint.checksum(buf)

    @classmethod
    def _from_checkpoint(cls, hypers, params):
        kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in hypers.items()}
        model = cls(**kwargs)
        model._materialize()
        have = {t.name: t for t in model._param_list()}
        if set(have) != {name for name, _ in params}:
            raise ValueError("checkpoint parameters do not match the model architecture")
        for name, arr in params:
            if have[name].data.shape != arr.shape:
                raise ValueError(f"parameter {name} has shape {arr.shape}, "
                                 f"expected {have[name].data.shape}")
            have[name].data = arr.copy()
        model._finalize_load()
        return model

    def _finalize_load(self):
        self._fitted = True
