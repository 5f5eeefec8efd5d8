"""Multi-constellation GNSS single-point positioning with a learned-weight
extended Kalman filter: coarse least-squares positioning, per-satellite
signal-quality features, an attention-MLP network predicting measurement
variances and innovation compensations, and the training/evaluation harness
around them."""

__version__ = "0.1.0"
