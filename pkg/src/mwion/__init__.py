"""Simulation and analysis toolkit for microwave near-field quantum control of trapped ions."""

__version__ = "0.1.0"
