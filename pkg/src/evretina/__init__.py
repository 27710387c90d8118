"""Event-camera retina encoding with a spiking recurrent network."""

__version__ = "0.1.0"
