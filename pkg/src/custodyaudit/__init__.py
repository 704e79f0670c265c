"""Toolkit for reconstructing and auditing opaque custody-classification
algorithms: surrogate random forests plus perturbation, sensitivity,
repeated-reclassification, fairness and counterfactual analyses."""

__version__ = "0.1.0"
