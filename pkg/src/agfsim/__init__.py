"""Blind spatial combining and data-only blind MUD for grant-free uplink access."""

from .bsc import CombiningVectorSet, builtin_set, combine, csc_combine
from .channel import ReceiveGrid, apply_channel, draw_channel
from .fec import BlockFormat, crc_attach, crc_check, fec_decode, fec_encode
from .harness import BlerPoint, Scenario, emit_results, load_scenario, run_scenario
from .mud import MudConfig, MudResult, run_mud
from .waveform import SpreadingCodePool, build_pool, build_preamble_pool, modulate_and_spread

__version__ = "0.1.0"
