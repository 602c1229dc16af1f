"""Isolated hybrid ac/dc microgrid co-simulation toolkit.

Modules cover the physical model and radial power flow, day-ahead
scheduling by a dragonfly swarm, a from-scratch bidirectional LSTM load
forecaster, a sequential-test attack detector, the LoRa telemetry frame
codec, and false-data attack impact simulation. The ``hmgsim`` console
script ties them together.
"""

__version__ = "0.1.0"

__all__ = [
    "grid",
    "powerflow",
    "scheduler",
    "dragonfly",
    "blstm",
    "forecaster",
    "detector",
    "lora",
    "attack",
    "report",
    "cli",
]
