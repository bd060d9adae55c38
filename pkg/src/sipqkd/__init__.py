"""Seed-reproducible simulator of a silicon-photonic BB84 transmitter and link."""

__version__ = "0.1.0"
