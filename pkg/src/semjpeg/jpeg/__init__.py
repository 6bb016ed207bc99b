from .codec import JpegError, decode, encode, parse_markers
from .dct import fdct8x8, idct8x8
from .tables import ZIGZAG, quant_tables_for_quality

__all__ = [
    "JpegError",
    "ZIGZAG",
    "decode",
    "encode",
    "fdct8x8",
    "idct8x8",
    "parse_markers",
    "quant_tables_for_quality",
]
