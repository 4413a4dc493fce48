"""ecvqlab: a rate-distortion quantization laboratory for toy sources.

Compares scalar quantization with nonlinear transforms (NTC) against
unconstrained and entropy-constrained vector quantization, in source and
latent space, with real range-coded bitstreams and Bjontegaard metrics.
"""

from .codecs import (CODEC_KINDS, ECVQCodec, MultistageCodec, NTCCodec,
                     NTECVQCodec, NTVQCodec, VQCodec, load_codec)
from .config import TOOL_VERSION as __version__
from .metrics import RDCurve, RDPoint, bd_psnr, bd_rate, psnr
from .sources import SourceSpec, describe, sample

__all__ = [
    "VQCodec", "ECVQCodec", "NTCCodec", "NTVQCodec", "NTECVQCodec",
    "MultistageCodec", "CODEC_KINDS", "load_codec",
    "SourceSpec", "sample", "describe",
    "RDPoint", "RDCurve", "bd_psnr", "bd_rate", "psnr",
    "__version__",
]
