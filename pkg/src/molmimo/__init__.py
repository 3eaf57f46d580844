"""Simulation, fitting, surrogate modelling and BER analysis for the 2x2
molecular MIMO diffusion channel."""

__version__ = "0.1.0"

from .geometry import CuboidSpec, SystemParams, place_topology  # noqa: E402
from .sim import ChannelCurve, SimConfig, simulate_channel  # noqa: E402
from .channel import ModelParams, TapVector, f11_model, f21_model, fhit_siso  # noqa: E402

__all__ = [
    "CuboidSpec", "SystemParams", "place_topology",
    "ChannelCurve", "SimConfig", "simulate_channel",
    "ModelParams", "TapVector", "f11_model", "f21_model", "fhit_siso",
]
