"""Reference-signal pattern design and delay-Doppler sensing for OFDM ISAC."""
__version__ = "0.1.0"
