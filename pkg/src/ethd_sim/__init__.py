"""Simulator and telemetry protocol for a robot-driven encountered-type haptic display."""

__version__ = "0.1.0"
