"""Multi-bit watermarking of random forests, with detection and forgery attacks."""

from .dataset import Dataset, TriggerSet
from .forest import Ensemble, HyperParams, Internal, Leaf
from .watermark import Signature, embed_watermark, verify_watermark

__all__ = ["Dataset", "TriggerSet", "Ensemble", "HyperParams", "Internal", "Leaf",
           "Signature", "embed_watermark", "verify_watermark"]
