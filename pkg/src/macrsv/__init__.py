"""Reservation TDMA MAC simulator, Markov throughput analysis and a CATA baseline."""

from .core import TABLE_I, FrameConfig, frame_duration_s
from .errors import ConfigError, DataCollision, MacRsvError, TruncationError

__version__ = "0.1.0"
