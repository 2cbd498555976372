"""Signal codes: convolutional lattice codes over QAM."""

__version__ = "0.1.0"
