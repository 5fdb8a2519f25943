"""Unpaired single-image dehazing with wavelet separable convolutions, built on a small numpy autodiff core."""

__version__ = "0.1.0"
