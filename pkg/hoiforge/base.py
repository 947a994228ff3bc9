"""
Shared worker pool for per-frame and per-clip work
"""

import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from typing import Any, Callable, Iterable, List, Optional, TypeVar

from .exceptions import ValidationError

logger = logging.getLogger(__name__)

T = TypeVar("T")


class JobPool:
    """Lazily created thread pool whose fan-out returns results in submission order"""

    def __init__(self, jobs: int = 1):
        """
        Initialize the pool

        Args:
            jobs: Number of worker threads; 1 runs everything inline
        """
        if int(jobs) < 1:
            raise ValidationError("jobs must be at least 1")
        self.jobs = int(jobs)

        # Executor will be created when needed
        self._executor: Optional[ThreadPoolExecutor] = None

    def _get_executor(self) -> ThreadPoolExecutor:
        """Get or create the thread pool"""
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self.jobs, thread_name_prefix="hoiforge")
            logger.debug("Started worker pool with %d threads", self.jobs)
        return self._executor

    async def run(self, func: Callable[..., T], *args: Any, **kwargs: Any) -> T:
        """Run one call on the pool (inline when jobs == 1)"""
        if self.jobs == 1:
            return func(*args, **kwargs)
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(self._get_executor(), partial(func, *args, **kwargs))

    async def map(self, func: Callable[..., T], items: Iterable[Any]) -> List[T]:
        """
        Apply func to every item concurrently

        Returns:
            Results in the order of `items`; the first exception is re-raised
        """
        items = list(items)
        if self.jobs == 1:
            return [func(item) for item in items]
        return list(await asyncio.gather(*(self.run(func, item) for item in items)))

    async def close(self):
        """Shut the pool down"""
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    async def __aenter__(self):
        """Async context manager entry"""
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        """Async context manager exit"""
        await self.close()
