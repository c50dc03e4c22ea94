"""Table structure recognition: sequence decoders, synthetic data, metrics."""

__version__ = "0.1.0"
