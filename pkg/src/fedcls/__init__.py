"""Privacy-preserving federated inference on encrypted ViT CLS tokens."""

__version__ = "0.1.0"
