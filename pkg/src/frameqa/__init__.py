"""Frame-level audio quality assessment with BLSTM, 1-D convolution and attention."""

__version__ = "0.1.0"
