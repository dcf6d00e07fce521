"""Sensor-actuator pairing and resource allocation for SC3 control loops."""
__version__ = "0.1.0"
