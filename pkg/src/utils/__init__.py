"""
Utility modules for Mimic Explorer
"""

from .cache import SkeletonCache
from .validation import ConfigValidator, SchemaValidator

__all__ = [
    "SkeletonCache",
    "ConfigValidator",
    "SchemaValidator",
]
