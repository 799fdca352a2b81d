"""Frequency-domain image inputs with learned and static channel selection."""

from .codec import ChannelStats, decode_tensor, encode_image
from .select import SelectionMask, named_mask, square_mask, triangle_mask

__all__ = ["ChannelStats", "SelectionMask", "decode_tensor", "encode_image",
           "named_mask", "square_mask", "triangle_mask"]
__version__ = "0.1.0"
