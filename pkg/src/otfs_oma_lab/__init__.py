"""Sum spectral efficiency of OTFS orthogonal multiple-access schemes with rectangular pulses."""

from .channel import ChannelPath, PowerDelayProfile, UtChannel, etu_profile, sample_channel
from .grid_core import (FrameConfig, GbDelay, GbDoppler, Iddma, Ideal, Itfma, Rectangular,
                        SchemeError, isfft, sfft)

__version__ = "0.1.0"

__all__ = [
    "ChannelPath", "PowerDelayProfile", "UtChannel", "etu_profile", "sample_channel",
    "FrameConfig", "GbDelay", "GbDoppler", "Iddma", "Ideal", "Itfma", "Rectangular",
    "SchemeError", "isfft", "sfft",
]
