"""Fairness auditing and bias mitigation for wearable freezing-of-gait detectors."""
__version__ = "0.1.0"
