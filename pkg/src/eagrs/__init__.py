"""Explainability-guided ROI selection for functional-connectivity classification.

Pipeline stages: masked autoencoder pretraining (``sae``), connection-wise
relevance estimation (``lrp``), gated ROI selection with joint classifier
training (``roiselect``), plus data handling (``fcdata``), shared numeric
primitives (``linalg``, ``nn``), evaluation utilities (``evaluation``), and
the command-line front end (``cli``).
"""

__version__ = "0.1.0"
