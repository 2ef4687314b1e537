from .bitstream import BitstreamError, EncodedFrame, StreamHeader, read_bitstream, write_bitstream
from .density import FactorizedDensity
from .quantize import INFERENCE, TRAIN, quantize
from .range_coder import PayloadError, flat_decode, flat_encode, range_decode, range_encode


def estimate_bits(latent, density: FactorizedDensity):
    return density.estimate_bits(latent)


__all__ = [
    "BitstreamError",
    "EncodedFrame",
    "FactorizedDensity",
    "INFERENCE",
    "PayloadError",
    "StreamHeader",
    "TRAIN",
    "estimate_bits",
    "flat_decode",
    "flat_encode",
    "quantize",
    "range_decode",
    "range_encode",
    "read_bitstream",
    "write_bitstream",
]
