"""Personalized federated traffic prediction: graph-recurrent forecasting
with a prompt-generating representor, partial parameter sharing, and a
desk-scale federation simulator."""

__version__ = "0.1.0"
