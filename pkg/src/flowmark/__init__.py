"""Flow-watermarking lab: timing watermarks, a DNN fingerprinting adversary,
and a real-time IPD-replacement defense, plus the benchmark harness tying
them together."""

__version__ = "0.1.0"
