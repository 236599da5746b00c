"""Reference objtrans/1 adapter for torchvision detection models."""

from .adapter import AdapterConfig, TorchDetector, serve

__all__ = ["AdapterConfig", "TorchDetector", "serve"]
