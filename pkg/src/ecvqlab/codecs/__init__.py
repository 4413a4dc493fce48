"""Trainable codec estimators (fit / predict / transform / evaluate)."""

from .common import load_codec
from .ntc import NTCCodec
from .staged import ECVQCodec, MultistageCodec, NTECVQCodec, NTVQCodec, VQCodec

CODEC_KINDS = {
    "vq": VQCodec,
    "ecvq": ECVQCodec,
    "ntc": NTCCodec,
    "nt-vq": NTVQCodec,
    "nt-ecvq": NTECVQCodec,
    "multistage": MultistageCodec,
}

__all__ = ["VQCodec", "ECVQCodec", "NTCCodec", "NTVQCodec", "NTECVQCodec",
           "MultistageCodec", "CODEC_KINDS", "load_codec"]
