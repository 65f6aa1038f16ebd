import functools
import logging
import time

logger = logging.getLogger(__name__)


def timer(func):
    """
    Log the wall-clock time of each call and keep the latest one in
    ``wrapper.last_elapsed`` (seconds).

    >>> @timer
    ... def double(x):
    ...     return 2 * x
    >>> double(4), double.last_elapsed >= 0
    (8, True)
    """
    @functools.wraps(func)
    def wrapper(*args, **kw):
        ts = time.perf_counter()
        try:
            return func(*args, **kw)
        finally:
            wrapper.last_elapsed = time.perf_counter() - ts
            logger.info("%s: time elapsed %.4f sec.", func.__name__, wrapper.last_elapsed)
    wrapper.last_elapsed = None
    return wrapper
