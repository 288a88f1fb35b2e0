"""
Skeleton image caching for Mimic Explorer
"""

import itertools
import logging
from typing import Any, Callable, Dict, Hashable, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

CacheKey = Tuple[Hashable, Tuple[int, int]]


class SkeletonCache:
    """Memory cache of rendered skeleton images keyed by state layout and raster size."""

    def __init__(self, max_size_mb: float = 64, max_entries: Optional[int] = None):
        """
        Initialize skeleton cache.

        Args:
            max_size_mb: Maximum cache size in megabytes.
            max_entries: Optional cap on the number of cached images.
        """
        self.max_size_bytes = int(max_size_mb * 1024 * 1024)
        self.max_entries = max_entries
        self.memory_cache: Dict[CacheKey, np.ndarray] = {}
        self.access_times: Dict[CacheKey, int] = {}
        self._clock = itertools.count()
        self.hits = 0
        self.misses = 0

    def _total_size(self) -> int:
        return sum(image.nbytes for image in self.memory_cache.values())

    def _enforce_cache_size_limit(self):
        """Enforce cache size limit using LRU eviction."""
        total_size = self._total_size()
        over_entries = self.max_entries is not None and len(self.memory_cache) > self.max_entries
        if total_size <= self.max_size_bytes and not over_entries:
            return

        removed_count = 0
        for key, _ in sorted(self.access_times.items(), key=lambda x: x[1]):
            within_size = total_size <= self.max_size_bytes * 0.8  # Leave 20% headroom
            within_entries = self.max_entries is None or len(self.memory_cache) <= self.max_entries
            if within_size and within_entries:
                break
            total_size -= self.memory_cache[key].nbytes
            del self.memory_cache[key]
            del self.access_times[key]
            removed_count += 1

        if removed_count > 0:
            logger.debug(f"Evicted {removed_count} skeletons from cache")

    def get(self, layout: Hashable, dims: Tuple[int, int],
            render: Callable[[], np.ndarray]) -> np.ndarray:
        """
        Get a skeleton image, rendering it on a miss.

        Args:
            layout: Key covering everything the image depends on
            dims: Raster size (width, height)
            render: Callable producing the image on a cache miss

        Returns:
            np.ndarray: Read-only skeleton image
        """
        key: CacheKey = (layout, (int(dims[0]), int(dims[1])))
        image = self.memory_cache.get(key)
        if image is not None:
            self.hits += 1
            self.access_times[key] = next(self._clock)
            return image

        self.misses += 1
        image = render()
        image.setflags(write=False)
        self.memory_cache[key] = image
        self.access_times[key] = next(self._clock)
        self._enforce_cache_size_limit()
        return image

    def clear_cache(self):
        """Clear all cached skeletons."""
        self.memory_cache.clear()
        self.access_times.clear()

    def get_cache_stats(self) -> Dict[str, Any]:
        """Get cache statistics."""
        total_size = self._total_size()
        return {
            'cache_entries': len(self.memory_cache),
            'total_size_bytes': total_size,
            'total_size_mb': total_size / (1024 * 1024),
            'max_size_mb': self.max_size_bytes / (1024 * 1024),
            'hits': self.hits,
            'misses': self.misses,
        }
