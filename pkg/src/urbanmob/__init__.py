"""Geolocated social-stream acquisition, sharded storage and mobility mining."""

__version__ = "0.1.0"
