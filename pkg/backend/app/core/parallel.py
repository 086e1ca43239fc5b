from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar
import logging

from app.core.config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")


def row_tiles(height: int, tile_rows: Optional[int] = None) -> List[Tuple[int, int]]:
    """Fixed row bands; the decomposition never depends on the thread count"""
    step = tile_rows or settings.TILE_ROWS
    return [(r0, min(r0 + step, height)) for r0 in range(0, height, step)]


class WorkerPool:
    """Thread pool over independent tiles with results returned in submission order"""

    def __init__(self, max_workers: Optional[int] = None):
        self.max_workers = max(1, int(max_workers or settings.PVG4D_THREADS))

    def map(self, fn: Callable[..., T], items: Sequence) -> List[T]:
        if self.max_workers == 1 or len(items) <= 1:
            return [fn(item) for item in items]

        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            # executor.map preserves input order, so reductions stay deterministic
            return list(executor.map(fn, items))


def get_pool() -> WorkerPool:
    return WorkerPool(settings.PVG4D_THREADS)
